//! Core of the HERMES medication recommender.
//!
//! Everything in this crate is pure computation and builds without `std`
//! (an allocator is required): a small reverse-mode autodiff engine, the
//! EHR data model and synthetic cohort generator, drug-interaction graphs,
//! the graph-attention memory network, and the training/evaluation loop.
//! File formats, checkpoints, the HTTP service and the CLI live in the
//! `hermes` crate.

#![no_std]

extern crate alloc;

pub mod ddi;
pub mod ehr;
mod error;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
