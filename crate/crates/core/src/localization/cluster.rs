//! Euclidean cluster extraction over a uniform grid hash.
//!
//! Two points are adjacent when their squared distance is `<= tol²`;
//! clusters are connected components of that graph. Cells have edge
//! `tol` (slightly inflated so floating-point rounding in the cell
//! index can never separate two adjacent points by more than one cell).

use std::collections::HashMap;

use crate::geometry::Vec3;

pub(crate) struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    pub(crate) fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

type CellKey = (i64, i64, i64);

/// Half of the 26-neighborhood plus the cell itself; visiting these from
/// every cell covers each unordered cell pair exactly once.
const FORWARD_NEIGHBORS: [CellKey; 13] = [
    (1, 0, 0),
    (-1, 1, 0),
    (0, 1, 0),
    (1, 1, 0),
    (-1, -1, 1),
    (0, -1, 1),
    (1, -1, 1),
    (-1, 0, 1),
    (0, 0, 1),
    (1, 0, 1),
    (-1, 1, 1),
    (0, 1, 1),
    (1, 1, 1),
];

/// Connected components under `distance <= tol`. Each component lists its
/// point indices in ascending order; components are ordered by their
/// smallest index.
pub fn connected_components(points: &[Vec3], tol: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let tol2 = tol * tol;
    let cell = tol * (1.0 + 1e-9);
    let key_of = |p: &Vec3| -> CellKey {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };

    let mut order: Vec<(CellKey, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (key_of(p), i as u32))
        .collect();
    order.sort_unstable();

    // contiguous runs of equal keys
    let mut cells: Vec<(CellKey, usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || order[i].0 != order[start].0 {
            cells.push((order[start].0, start, i));
            start = i;
        }
    }
    let lookup: HashMap<CellKey, usize> = cells.iter().enumerate().map(|(i, c)| (c.0, i)).collect();
    let sorted_pts: Vec<Vec3> = order.iter().map(|&(_, i)| points[i as usize]).collect();

    let mut uf = UnionFind::new(n);
    for &(key, a0, a1) in &cells {
        for i in a0..a1 {
            for j in (i + 1)..a1 {
                if (sorted_pts[i] - sorted_pts[j]).norm_squared() <= tol2 {
                    uf.union(i as u32, j as u32);
                }
            }
        }
        for off in FORWARD_NEIGHBORS {
            let nk = (key.0 + off.0, key.1 + off.1, key.2 + off.2);
            let Some(&ci) = lookup.get(&nk) else { continue };
            let (_, b0, b1) = cells[ci];
            for i in a0..a1 {
                let pi = sorted_pts[i];
                for (j, pj) in sorted_pts[b0..b1].iter().enumerate() {
                    if (pi - pj).norm_squared() <= tol2 {
                        uf.union(i as u32, (b0 + j) as u32);
                    }
                }
            }
        }
    }

    // map back to input indices
    let mut root_of_input = vec![0u32; n];
    for (sorted_idx, &(_, input_idx)) in order.iter().enumerate() {
        root_of_input[input_idx as usize] = uf.find(sorted_idx as u32);
    }
    let mut slot_of_root: HashMap<u32, usize> = HashMap::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for (i, &root) in root_of_input.iter().enumerate() {
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            comps.push(Vec::new());
            comps.len() - 1
        });
        comps[slot].push(i);
    }
    comps
}
