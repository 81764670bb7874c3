// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod checkpoint;
pub mod config;
pub mod dump;
pub mod environment;
pub mod error;
pub mod evaluation;
pub mod exploration;
pub mod gfn;
pub mod grid;
pub mod langevin;
pub mod manifold;
pub mod metadynamics;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
