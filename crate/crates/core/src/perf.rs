//! Parametric energy, throughput and figure-of-merit model.
//!
//! Energy is counted per event: recharging the bit-lines back to VDD after a
//! cycle (proportional to the charge removed), DTC pulse time, comparator
//! decisions and digital post-processing per output. Because every term is
//! per event, energy efficiency does not depend on the clock; throughput does.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::analog::invalid;
use crate::charz::par_map;
use crate::encoding::{MAX_ACT, ROWS};
use crate::error::{CimError, Result};
use crate::macrosys::{Macro, MacroConfig, CORES, ENGINES};
use crate::rng::{stream, WORKLOAD_STREAM};
use crate::workload::uniform_weights;

/// Clock cycles per macro conversion: precharge, two MAC cycles, nine readout steps.
pub const CLOCKS_PER_CONVERSION: u32 = 12;
/// Operations per multiply-accumulate.
pub const OPS_PER_MAC: u64 = 2;
/// Macro capacity in Kb.
pub const MACRO_KB: f64 = 16.0;
/// 4-bit passes per 8-bit MAC: two activation nibbles times three weight digits.
pub const EIGHT_BIT_PASSES: u32 = 6;
/// Zero-activation fractions of the standard sweep.
pub const SPARSITY_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Efficiency band the default energy constants are fitted to (TOPS/W).
pub const FIT_BAND: (f64, f64) = (95.6, 137.5);

/// Event counts of one or more macro cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    /// Total DTC pulse time generated (s).
    pub dtc_time: f64,
    /// Sum over bit-lines of the voltage restored by the next precharge (V).
    pub recharge_volts: f64,
    pub comparisons: u64,
    pub outputs: u64,
    pub ops: u64,
}

impl Add for CycleTrace {
    type Output = CycleTrace;

    fn add(mut self, rhs: CycleTrace) -> CycleTrace {
        self += rhs;
        self
    }
}

impl AddAssign for CycleTrace {
    fn add_assign(&mut self, rhs: CycleTrace) {
        self.dtc_time += rhs.dtc_time;
        self.recharge_volts += rhs.recharge_volts;
        self.comparisons += rhs.comparisons;
        self.outputs += rhs.outputs;
        self.ops += rhs.ops;
    }
}

impl std::iter::Sum for CycleTrace {
    fn sum<I: Iterator<Item = CycleTrace>>(iter: I) -> CycleTrace {
        iter.fold(CycleTrace::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Energy of recharging one bit-line through the full VDD swing (J).
    pub e_precharge: f64,
    /// DTC energy per second of generated pulse (J/s).
    pub e_dtc: f64,
    /// Energy per sense-amplifier decision (J).
    pub e_sa: f64,
    /// Digital shift/add/compensation energy per output (J).
    pub e_digital: f64,
    /// Capacitor array of the reference SAR-ADC (F).
    pub c_sar_array: f64,
    /// Average fraction of the SAR array switched per conversion.
    pub sar_switching: f64,
}

impl Default for EnergyParams {
    /// `e_precharge` is `C_bl * VDD^2` of the default bit-line; `e_dtc` and
    /// `e_digital` come from `fit_energy` at the default configuration so the
    /// standard sweep spans `FIT_BAND`; `e_sa` and the SAR array are guesses.
    fn default() -> Self {
        EnergyParams {
            e_precharge: 50e-15 * 1.1 * 1.1,
            e_dtc: FIT_E_DTC,
            e_sa: 5e-15,
            e_digital: FIT_E_DIGITAL,
            c_sar_array: 512.0 * 2e-15,
            sar_switching: 0.5,
        }
    }
}

const FIT_E_DTC: f64 = 6.0628e-4;
const FIT_E_DIGITAL: f64 = 5.9333e-13;

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("energy.e_precharge", self.e_precharge),
            ("energy.e_dtc", self.e_dtc),
            ("energy.e_sa", self.e_sa),
            ("energy.e_digital", self.e_digital),
            ("energy.c_sar_array", self.c_sar_array),
            ("energy.sar_switching", self.sar_switching),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

pub fn energy_per_cycle(trace: &CycleTrace, ep: &EnergyParams, vdd: f64) -> f64 {
    ep.e_precharge * trace.recharge_volts / vdd
        + ep.e_dtc * trace.dtc_time
        + ep.e_sa * trace.comparisons as f64
        + ep.e_digital * trace.outputs as f64
}

/// Energy of one conversion of a conventional charge-redistribution SAR-ADC
/// that charges its own array: `C * VDD^2 * switching`.
pub fn sar_conversion_energy(ep: &EnergyParams, vdd: f64) -> f64 {
    ep.c_sar_array * vdd * vdd * ep.sar_switching
}

/// Efficiency in TOPS/W of a trace.
pub fn tops_per_watt(trace: &CycleTrace, ep: &EnergyParams, vdd: f64) -> f64 {
    let e = energy_per_cycle(trace, ep, vdd);
    if e == 0.0 {
        return 0.0;
    }
    trace.ops as f64 / e / 1e12
}

/// `ACT bits x W bits x OUT-ratio x throughput (TOPS/Kb) x efficiency (TOPS/W)`.
pub fn fom(act_bits: f64, w_bits: f64, out_ratio: f64, throughput_tops_per_kb: f64, eff_tops_per_w: f64) -> f64 {
    act_bits * w_bits * out_ratio * throughput_tops_per_kb * eff_tops_per_w
}

/// Readout precision over the full-precision width of a `rows`-term sum.
pub fn out_ratio(out_bits: u32, act_bits: u32, w_bits: u32, rows: usize) -> f64 {
    let growth = (rows as f64).log2().ceil() as u32;
    out_bits as f64 / (act_bits + w_bits + growth) as f64
}

/// Conversion time at `clock_hz`.
pub fn cycle_time(clock_hz: f64) -> f64 {
    CLOCKS_PER_CONVERSION as f64 / clock_hz
}

/// Throughput normalized by memory size, GOPS/Kb.
pub fn gops_per_kb(ops_per_cycle: u64, clock_hz: f64) -> f64 {
    ops_per_cycle as f64 / cycle_time(clock_hz) / 1e9 / MACRO_KB
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub tops_per_watt: f64,
    pub gops_per_kb: f64,
    pub fom_4b: f64,
    pub fom_8b: f64,
    pub cycle_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sparsity: f64,
    /// Mean energy per macro cycle (J).
    pub energy: f64,
    pub tops_per_watt: f64,
}

/// Summed event trace of `cycles` macro cycles at each sparsity.
///
/// Cycle `c` uses fixed weights and fixed non-zero activation magnitudes
/// (uniform in 1..=15); sparsity `s` zeroes the first `round(64 s)` rows of a
/// fixed row order. Cycle noise comes from stream `c`, shared by all
/// sparsities, so only the zeroed rows differ between points.
pub fn sparsity_traces(cfg: &MacroConfig, grid: &[f64], cycles: usize, workers: usize) -> Result<Vec<CycleTrace>> {
    for &s in grid {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid("sparsity", "0 <= sparsity <= 1"));
        }
    }
    let chip = Macro::new(cfg.clone())?;
    let per_cycle = par_map(workers, cycles, |c| {
        let mut wrng = stream(cfg.noise.seed, WORKLOAD_STREAM - 1 - c as u64);
        let weights: Vec<Vec<i32>> = (0..ENGINES).map(|_| uniform_weights(ROWS, &mut wrng)).collect();
        let mags: Vec<Vec<u8>> = (0..CORES)
            .map(|_| (0..ROWS).map(|_| rand::Rng::random_range(&mut wrng, 1..=MAX_ACT)).collect())
            .collect();
        let mut order: Vec<usize> = (0..ROWS).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut wrng);
        grid.iter()
            .map(|&s| {
                let zeroed = (s * ROWS as f64).round() as usize;
                let acts: Vec<Vec<u8>> = mags
                    .iter()
                    .map(|m| {
                        let mut a = m.clone();
                        for &i in &order[..zeroed] {
                            a[i] = 0;
                        }
                        a
                    })
                    .collect();
                let mut chip = chip.clone();
                Ok(chip.run(&weights, &acts, &mut stream(cfg.noise.seed, c as u64))?.trace)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((0..grid.len()).map(|g| per_cycle.iter().map(|t| t[g]).sum()).collect())
}

pub fn sparsity_sweep(cfg: &MacroConfig, ep: &EnergyParams, grid: &[f64], cycles: usize, workers: usize) -> Result<Vec<SweepPoint>> {
    ep.validate()?;
    let traces = sparsity_traces(cfg, grid, cycles, workers)?;
    Ok(grid
        .iter()
        .zip(&traces)
        .map(|(&s, t)| SweepPoint {
            sparsity: s,
            energy: energy_per_cycle(t, ep, cfg.analog.vdd) / cycles.max(1) as f64,
            tops_per_watt: tops_per_watt(t, ep, cfg.analog.vdd),
        })
        .collect())
}

/// Solve for `e_dtc` and `e_digital` so that sparsity 0 and 1 land on
/// `band.0` and `band.1` TOPS/W, keeping the other constants of `ep`.
pub fn fit_energy(cfg: &MacroConfig, ep: &EnergyParams, band: (f64, f64), cycles: usize) -> Result<EnergyParams> {
    let t = sparsity_traces(cfg, &[0.0, 1.0], cycles, 0)?;
    let vdd = cfg.analog.vdd;
    // Per trace: E = b * T + d * O + fixed, with E = ops / (eff * 1e12).
    let row = |tr: &CycleTrace, eff: f64| {
        let fixed = ep.e_precharge * tr.recharge_volts / vdd + ep.e_sa * tr.comparisons as f64;
        (tr.dtc_time, tr.outputs as f64, tr.ops as f64 / (eff * 1e12) - fixed)
    };
    let (t0, o0, e0) = row(&t[0], band.0);
    let (t1, o1, e1) = row(&t[1], band.1);
    let det = t0 * o1 - t1 * o0;
    let b = (e0 * o1 - e1 * o0) / det;
    let d = (t0 * e1 - t1 * e0) / det;
    if !(b >= 0.0 && d >= 0.0 && b.is_finite() && d.is_finite()) {
        return Err(CimError::Validation {
            field: "energy".into(),
            invariant: format!("no non-negative e_dtc/e_digital reaches {band:?} (got {b:e}, {d:e})"),
        });
    }
    Ok(EnergyParams {
        e_dtc: b,
        e_digital: d,
        ..*ep
    })
}

/// Efficiency averaged over the standard sparsity grid, throughput at the
/// configured clock, and the 4b and 8b figures of merit.
pub fn perf_report(cfg: &MacroConfig, ep: &EnergyParams, cycles: usize, workers: usize) -> Result<PerfReport> {
    let sweep = sparsity_sweep(cfg, ep, &SPARSITY_GRID, cycles, workers)?;
    let eff = sweep.iter().map(|p| p.tops_per_watt).sum::<f64>() / sweep.len() as f64;
    let ops = OPS_PER_MAC * (ROWS * ENGINES) as u64;
    let gops = gops_per_kb(ops, cfg.clock_hz);
    let or = out_ratio(cfg.out_bits, cfg.act_bits, cfg.w_bits, cfg.rows);
    let passes = EIGHT_BIT_PASSES as f64;
    Ok(PerfReport {
        tops_per_watt: eff,
        gops_per_kb: gops,
        fom_4b: fom(cfg.act_bits as f64, cfg.w_bits as f64, or, gops / 1e3, eff),
        fom_8b: fom(8.0, 8.0, or, gops / 1e3 / passes, eff / passes),
        cycle_time: cycle_time(cfg.clock_hz),
    })
}

/// Energy of one embedded readout (bit-line recharge of the readout
/// discharge plus comparisons) next to a conventional SAR conversion.
pub fn readout_vs_sar(cfg: &MacroConfig, ep: &EnergyParams) -> (f64, f64) {
    let p = &cfg.analog;
    let r = cfg.schedule.adc_quantum_ratio as f64;
    // The readout removes sum(r * 2^(9-k)) = 511 r quanta from the lines.
    let volts = 511.0 * r * p.quantum();
    let embedded = ep.e_precharge * volts / p.vdd + ep.e_sa * crate::engine::ADC_STEPS as f64;
    (embedded, sar_conversion_energy(ep, p.vdd))
}
