//! Deterministic synthetic-case generator: paired pseudo-CT/pseudo-MRI
//! volumes containing a thin curved vessel inside a muscle compartment
//! next to a bone rod, a known rigid MRI offset, noisy training labels
//! contaminated with adjacent muscle/bone and jittered cranial-caudal
//! extent, an ellipsoidal PTV, and an analytic dose grid.
//!
//! Identical seeds produce byte-identical cases; dataset generation
//! derives per-case seeds as `base_seed + index`.

pub mod config;
pub mod dataset;
pub mod dose;
pub mod error;
pub mod generate;
pub mod io;
pub mod rng;

pub use config::PhantomConfig;
pub use dataset::{make_dataset, Manifest, ManifestEntry, Split};
pub use dose::synth_dose;
pub use error::PhantomError;
pub use generate::{generate_case, Case};
pub use io::{read_case, write_case, write_dataset, CaseMeta};
