//! Simulation of a strawberry-harvesting arm: a synthetic table-top scene,
//! two virtual RGB-D cameras, point-cloud localization of ripe fruit, a
//! constant-speed arm, and a trap-and-laser-cut end effector driven by a
//! harvesting state machine.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod localization;
pub mod log;
pub mod motion;
pub mod rng;
pub mod scene;
pub mod tool;

pub use error::{Error, Result};
