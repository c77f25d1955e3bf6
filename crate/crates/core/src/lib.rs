//! Brownian motion under smoothly time-evolving Riemannian metrics.

pub mod action;
pub mod cli;
pub mod config;
pub mod error;
pub mod framebundle;
pub mod geometry;
pub mod io;
pub mod ldp;
pub mod rng;
pub mod sampler;
mod linalg;

pub use error::{Error, Result};
pub use geometry::{ChartPoint, MetricFamily};
