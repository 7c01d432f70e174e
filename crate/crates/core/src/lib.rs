//! Social recommendation by layer-wise diffusion of user influence and
//! interest over a joint user-item-user graph.
//!
//! The crate is organized bottom-up: [`compute`] holds dense arrays and a
//! reverse-mode tape, [`data`] turns raw rating and link files into graphs
//! and splits, [`model`] runs the diffusion forward pass, [`train`] fits it
//! with a pairwise ranking loss and [`eval`] scores held-out rankings.

pub mod compute;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod synthetic;
pub mod train;

pub use error::{Error, ErrorKind, Result};
