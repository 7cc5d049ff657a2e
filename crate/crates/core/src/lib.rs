//! Tagged Gaussian branch ensembles in a one-dimensional box.
//!
//! A single particle is represented by a set of decoherent Gaussian
//! components. Every decoherence period each component spreads freely, then
//! splits into width-`w` offspring on a fixed spatial lattice. Offspring carry
//! a unique lineage tag so distinct components can never interfere again.
//!
//! The crate is organised as:
//!
//! * [`model`]: single-packet laws (spreading, lattice discretisation, walls).
//! * [`tag`]: persistent lineage tags.
//! * [`engine`]: the branching dynamics (weighted, count and collapse modes).
//! * [`stats`]: ensemble observables and the statistical tests used to check them.
//! * [`oracle`]: exact small-grid quantum mechanics and classical references.
//! * [`runner`]: configuration, named scenarios and reproducible output files.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod tag;

pub use error::{Error, Result};
pub use model::{GaussianPacket, PhysicalParams};
pub use tag::TagPath;
