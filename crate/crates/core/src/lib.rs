//! Deterministic simulator of temperature-dependent DRAM decay plus the
//! full temperature-inference stack built on top of it: enrollment tables,
//! indicator-cell decoding, the piecewise exponential approximation
//! function with cross-device extrapolation, a spy agent/collector harness
//! speaking a line protocol, and countermeasure models.

pub mod artifact;
pub mod bitmap;
pub mod cell;
pub mod config;
pub mod defense;
pub mod enroll;
pub mod error;
pub mod harness;
pub mod infer;
pub mod kv;
pub mod params;
pub mod scenario;
pub mod seed;
pub mod units;
pub mod wire;

pub use bitmap::DecayBitmap;
pub use cell::{count_flips, equivalent_decay_time, CellArray};
pub use error::{Error, Result};
pub use params::SimParams;
pub use seed::SeedStream;
