//! Behavioral simulator of a 16Kb SRAM compute-in-memory macro.
//!
//! Each column engine computes a signed 4b x 4b dot product over 64 rows by
//! time-modulated discharge of a bit-line pair, then digitizes the
//! differential in place with a 9-step binary search that reuses the same
//! capacitors. See the individual modules for the models.

pub mod analog;
pub mod charz;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod macrosys;
pub mod perf;
pub mod rng;
pub mod workload;

pub use analog::{AnalogParams, BitlinePair, NoiseParams};
pub use encoding::{FoldedAct, RawAct, Sign, SignMag, WeightCode};
pub use engine::{AdcCode, Engine, ReadoutSchedule};
pub use error::{CimError, Result};
pub use macrosys::{Macro, MacroConfig, MacroOutput};
pub use perf::{CycleTrace, EnergyParams, PerfReport};
