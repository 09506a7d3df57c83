//! Fixed workloads shared by the benchmarks.

use cimsim_core::macrosys::{CORES, ENGINES};
use cimsim_core::rng::{stream, WORKLOAD_STREAM};
use cimsim_core::workload::{relu_acts, uniform_weights};

/// One macro cycle worth of weights (64 columns) and activations (4 cores).
pub fn cycle_workload(seed: u64) -> (Vec<Vec<i32>>, Vec<Vec<u8>>) {
    let mut rng = stream(seed, WORKLOAD_STREAM);
    let w = (0..ENGINES).map(|_| uniform_weights(64, &mut rng)).collect();
    let a = (0..CORES).map(|_| relu_acts(64, 2.0, &mut rng)).collect();
    (w, a)
}
