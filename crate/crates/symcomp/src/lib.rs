//! Finite abstractions of networked dynamical systems, approximate
//! composition, (epsilon, mu)-approximate (alternating) simulation
//! relation checking, and safety controller synthesis, both monolithic and
//! bottom-up.
//!
//! The crate is organized around a plain finite transition-system core
//! ([`ts`]), pseudometric descriptors ([`metrics`]), network composition
//! ([`composition`]), relation checking ([`relations`]) and safety
//! synthesis ([`synthesis`]). On top of that sit grid/sequence
//! abstractions of concrete dynamics ([`abstraction`]), the two case-study
//! models ([`models`]), a dense implicit-product synthesis engine for
//! state spaces too large to materialize ([`engine`]), end-to-end
//! case-study pipelines ([`pipeline`]) and the seeded randomized property
//! suites ([`suites`]).

pub mod abstraction;
pub mod composition;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod randsys;
pub mod relations;
pub mod suites;
pub mod synthesis;
pub mod ts;

pub use error::{Error, Result};
