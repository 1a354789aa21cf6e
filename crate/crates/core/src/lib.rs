//! Surrogate fine-resolution commuter networks from perturbed census tables.
//!
//! The reconstruction reads a perturbed fine network `R` (SA1→DZN), a coarse
//! network `B` (SA2→SA2), a mixed network `Γ` (SA2→DZN), worker totals and a
//! previous census, and adds edges to `R` until as many missing workers as
//! the coarse constraints allow have been placed.

pub mod assign;
pub mod candidates;
pub mod dist;
pub mod error;
pub mod ingest;
pub mod network;
pub mod pipeline;
pub mod streams;
pub mod synth;
pub mod validate;

pub use error::{Error, ErrorKind, Result};
pub use network::{Level, ODNetwork, PartitionHierarchy, Weight, ZoneCode};
