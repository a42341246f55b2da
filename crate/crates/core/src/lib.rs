//! Multi-task ranking with inter-task residual links.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numerical piece:
//! a small reverse-mode kernel ([`tensor`]), shared categorical embeddings
//! ([`embedding`]), dataset preparation ([`data`]), the multi-task network and
//! its trainer ([`model`]), threshold-ladder regression ([`progressive`]),
//! offline ranking metrics ([`metrics`]) and score fusion ([`fusion`]).
//!
//! File formats, configuration and the command line live in the `resflow`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod embedding;
mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod progressive;
pub mod tensor;

pub use error::{Error, Result};
