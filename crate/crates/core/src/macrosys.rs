//! The full macro: 4 cores of 16 engines, each engine a 64-row column.
//!
//! Within a core the DTC is shared, so one pulse-noise realization per
//! (row, weight bit, cycle) drives all 16 engines, while branch mismatch stays
//! per cell. `MacroConfig::shared_dtc = false` gives every engine its own
//! realization instead.
//!
//! Larger matrices are tiled column-major: column block `cb` covers matrix
//! columns `16*cb .. 16*cb + 16` (engine `j` holds column `16*cb + j`), row tile
//! `rt` covers rows `64*rt .. 64*rt + 64`, zero-padded. Slot `s` enumerates
//! `(cb, rt)` with the row tile varying fastest and runs on core `s % 4` of
//! invocation `s / 4`. Row tiles of one column are summed digitally.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analog::{invalid, AnalogParams, NoiseParams};
use crate::encoding::{self, RawAct, SignMag, MAX_ACT, MAX_WEIGHT_MAG, ROWS};
use crate::engine::{half_step, AdcCode, Engine, PulseTable, ReadoutPulses, ReadoutSchedule, ADC_STEPS};
use crate::error::{CimError, Result};
use crate::perf::{CycleTrace, OPS_PER_MAC};
use crate::rng::{stream, CHIP_STREAM};

pub const CORES: usize = 4;
pub const ENGINES_PER_CORE: usize = 16;
pub const ENGINES: usize = CORES * ENGINES_PER_CORE;
pub const MEMORY_BITS: usize = 16384;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub cores: usize,
    pub engines_per_core: usize,
    pub rows: usize,
    pub act_bits: u32,
    pub w_bits: u32,
    pub out_bits: u32,
    pub clock_hz: f64,
    pub analog: AnalogParams,
    pub noise: NoiseParams,
    pub schedule: ReadoutSchedule,
    /// MAC-folding: subtract 8 from every activation before the analog MAC.
    pub folding: bool,
    /// One DTC noise realization per core instead of per engine.
    pub shared_dtc: bool,
    /// Scale of the half-normal activation distribution used by experiments.
    pub act_scale: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            cores: CORES,
            engines_per_core: ENGINES_PER_CORE,
            rows: ROWS,
            act_bits: 4,
            w_bits: 4,
            out_bits: 9,
            clock_hz: 200e6,
            analog: AnalogParams::default(),
            noise: NoiseParams::calibrated(),
            schedule: ReadoutSchedule::default(),
            folding: false,
            shared_dtc: true,
            act_scale: 2.0,
        }
    }
}

impl MacroConfig {
    /// Default geometry and schedule with no noise or mismatch.
    pub fn ideal() -> MacroConfig {
        MacroConfig {
            noise: NoiseParams::ideal(),
            ..MacroConfig::default()
        }
    }

    /// Both signal-margin enhancements switched on or off.
    pub fn with_enhancements(&self, on: bool) -> MacroConfig {
        let mut cfg = self.clone();
        cfg.folding = on;
        cfg.analog.boost = if on { 2 } else { 1 };
        cfg
    }

    pub fn boost_enabled(&self) -> bool {
        self.analog.boost == 2
    }

    pub fn validate(&self) -> Result<()> {
        let fixed = [
            ("cores", self.cores, CORES),
            ("engines_per_core", self.engines_per_core, ENGINES_PER_CORE),
            ("rows", self.rows, ROWS),
            ("act_bits", self.act_bits as usize, 4),
            ("w_bits", self.w_bits as usize, 4),
            ("out_bits", self.out_bits as usize, 9),
        ];
        for (field, v, want) in fixed {
            if v != want {
                return Err(invalid(&format!("macro.{field}"), &format!("must be {want}")));
            }
        }
        if self.cores * self.engines_per_core * self.rows * self.w_bits as usize != MEMORY_BITS {
            return Err(invalid("macro", "cores*engines*rows*w_bits = 16384"));
        }
        if !(100e6..=200e6).contains(&self.clock_hz) {
            return Err(invalid("modes.clock_hz", "100 MHz <= clock_hz <= 200 MHz"));
        }
        if !(self.act_scale.is_finite() && self.act_scale > 0.0) {
            return Err(invalid("modes.act_scale", "must be finite and > 0"));
        }
        self.analog.validate()?;
        self.noise.validate()?;
        self.schedule.validate()?;
        if !self.schedule.adc_quantum_ratio.is_multiple_of(self.analog.boost) {
            return Err(invalid("schedule.adc_quantum_ratio", "r divisible by boost"));
        }
        Ok(())
    }

    /// Reconstruction error bound of one in-range output, MAC units.
    pub fn r_eff(&self) -> i64 {
        half_step(&self.schedule, &self.analog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreOutput {
    pub outputs: Vec<i64>,
    pub codes: Vec<AdcCode>,
    pub trace: CycleTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroOutput {
    /// Corrected outputs, engine `16 * core + j`.
    pub outputs: Vec<i64>,
    pub clipped: Vec<bool>,
    pub cycles: u64,
    pub trace: CycleTrace,
}

/// One simulated chip: configuration plus 64 fabricated engines.
#[derive(Debug, Clone)]
pub struct Macro {
    cfg: MacroConfig,
    engines: Vec<Engine>,
}

impl Macro {
    /// Fabricate the chip instance determined by `cfg.noise.seed`.
    pub fn new(cfg: MacroConfig) -> Result<Macro> {
        cfg.validate()?;
        let mut rng = stream(cfg.noise.seed, CHIP_STREAM);
        let engines = (0..ENGINES).map(|_| Engine::fabricate(&cfg.noise, &mut rng)).collect();
        Ok(Macro { cfg, engines })
    }

    pub fn config(&self) -> &MacroConfig {
        &self.cfg
    }

    pub fn engine(&self, idx: usize) -> &Engine {
        &self.engines[idx]
    }

    /// One macro cycle on all four cores with all 64 engines.
    ///
    /// `weights[e]` is the 64-row column of engine `e`; `acts[c]` the 64
    /// activations broadcast to core `c`.
    pub fn run<R: Rng + ?Sized>(&mut self, weights: &[Vec<i32>], acts: &[Vec<u8>], rng: &mut R) -> Result<MacroOutput> {
        if weights.len() != ENGINES {
            return Err(CimError::ShapeMismatch(format!("expected 64 weight columns, got {}", weights.len())));
        }
        if acts.len() != CORES {
            return Err(CimError::ShapeMismatch(format!("expected 4 activation vectors, got {}", acts.len())));
        }
        let mut out = MacroOutput {
            outputs: Vec::with_capacity(ENGINES),
            clipped: Vec::with_capacity(ENGINES),
            cycles: 1,
            trace: CycleTrace::default(),
        };
        for (c, a) in acts.iter().enumerate() {
            let cols = &weights[c * ENGINES_PER_CORE..(c + 1) * ENGINES_PER_CORE];
            let core = self.run_core(c, cols, a, rng)?;
            out.clipped.extend(core.codes.iter().map(|k| k.clipped));
            out.outputs.extend(core.outputs);
            out.trace += core.trace;
        }
        Ok(out)
    }

    /// One cycle of a single core.
    pub fn run_core<R: Rng + ?Sized>(
        &mut self,
        core: usize,
        weights: &[Vec<i32>],
        acts: &[u8],
        rng: &mut R,
    ) -> Result<CoreOutput> {
        if core >= CORES {
            return Err(CimError::OutOfRange {
                what: "core",
                value: core as i64,
                min: 0,
                max: CORES as i64 - 1,
            });
        }
        if weights.len() != ENGINES_PER_CORE {
            return Err(CimError::ShapeMismatch(format!(
                "core needs 16 weight columns, got {}",
                weights.len()
            )));
        }
        if acts.len() != ROWS {
            return Err(CimError::ShapeMismatch(format!("core needs 64 activations, got {}", acts.len())));
        }
        let cfg = &self.cfg;
        let (p, n, sched) = (&cfg.analog, &cfg.noise, &cfg.schedule);
        let ops = acts
            .iter()
            .map(|&a| Ok(encoding::dtc_operand(RawAct::new(a)?, cfg.folding)))
            .collect::<Result<Vec<SignMag>>>()?;

        let mut shared = None;
        let mut trace = CycleTrace::default();
        if cfg.shared_dtc {
            let table = PulseTable::draw(&ops, p, n, rng)?;
            let readout = ReadoutPulses::draw(sched, p, n, rng);
            trace.dtc_time += (table.total_quanta() + readout.total_quanta()) * p.tau;
            shared = Some((table, readout));
        }

        let mut out = CoreOutput {
            outputs: Vec::with_capacity(ENGINES_PER_CORE),
            codes: Vec::with_capacity(ENGINES_PER_CORE),
            trace,
        };
        let engines = &mut self.engines[core * ENGINES_PER_CORE..(core + 1) * ENGINES_PER_CORE];
        for (e, w) in engines.iter_mut().zip(weights) {
            e.load_weights(w, p)?;
            let code = match &shared {
                Some((table, readout)) => {
                    e.mac_phase_with(table, p)?;
                    e.adc_readout_with(sched, readout, p)?
                }
                None => {
                    let table = PulseTable::draw(&ops, p, n, rng)?;
                    let readout = ReadoutPulses::draw(sched, p, n, rng);
                    out.trace.dtc_time += (table.total_quanta() + readout.total_quanta()) * p.tau;
                    e.mac_phase_with(&table, p)?;
                    e.adc_readout_with(sched, &readout, p)?
                }
            };
            let bl = e.bitlines();
            out.trace.recharge_volts += (p.vdd - bl.v_rbl(p)) + (p.vdd - bl.v_rblb(p));
            out.trace.comparisons += ADC_STEPS as u64;
            out.trace.outputs += 1;
            out.trace.ops += OPS_PER_MAC * ROWS as u64;
            out.outputs.push(e.correct(&code, cfg.folding, sched, p));
            out.codes.push(code);
        }
        Ok(out)
    }

    /// 8-bit signed weights times 8-bit activations, composed from 4-bit passes.
    ///
    /// Activations split into two nibbles (`a = 16*hi + lo`). Weight
    /// magnitudes split into three radix-8 digits that fit the 3 magnitude
    /// bits of a cell (`|w| = 64*d2 + 8*d1 + d0`), each carrying the weight's
    /// sign. Every (nibble, digit) pair is one macro pass weighted by
    /// `16^i * 8^j`; passes whose operands are all zero are skipped. Returns
    /// the outputs and the accumulated error bound in MAC units.
    pub fn run_8bit<R: Rng + ?Sized>(
        &mut self,
        weights: &[Vec<i32>],
        acts: &[Vec<u8>],
        rng: &mut R,
    ) -> Result<EightBitOutput> {
        if weights.len() != ENGINES || weights.iter().any(|c| c.len() != ROWS) {
            return Err(CimError::ShapeMismatch("8-bit mode needs 64 columns of 64 weights".into()));
        }
        if acts.len() != CORES || acts.iter().any(|a| a.len() != ROWS) {
            return Err(CimError::ShapeMismatch("8-bit mode needs 4 vectors of 64 activations".into()));
        }
        for &w in weights.iter().flatten() {
            if !(-127..=127).contains(&w) {
                return Err(CimError::OutOfRange {
                    what: "8-bit weight",
                    value: w as i64,
                    min: -127,
                    max: 127,
                });
            }
        }
        let mut out = EightBitOutput {
            outputs: vec![0; ENGINES],
            bound: 0,
            passes: 0,
            trace: CycleTrace::default(),
        };
        let r_eff = self.cfg.r_eff();
        for i in 0..2 {
            let nib: Vec<Vec<u8>> = acts.iter().map(|a| a.iter().map(|&v| (v >> (4 * i)) & MAX_ACT).collect()).collect();
            if nib.iter().flatten().all(|&v| v == 0) {
                continue;
            }
            for j in 0..3 {
                let digit: Vec<Vec<i32>> = weights
                    .iter()
                    .map(|c| c.iter().map(|&w| w.signum() * ((w.abs() >> (3 * j)) & MAX_WEIGHT_MAG as i32)).collect())
                    .collect();
                if digit.iter().flatten().all(|&v| v == 0) {
                    continue;
                }
                let shift = 1i64 << (4 * i + 3 * j);
                let pass = self.run(&digit, &nib, rng)?;
                for (o, v) in out.outputs.iter_mut().zip(&pass.outputs) {
                    *o += v * shift;
                }
                out.bound += r_eff * shift;
                out.passes += 1;
                out.trace += pass.trace;
            }
        }
        Ok(out)
    }

    /// Run `x` through a mapped matrix, summing row tiles digitally.
    pub fn run_mapped<R: Rng + ?Sized>(&mut self, map: &Mapping, m: &[Vec<i32>], x: &[u8], rng: &mut R) -> Result<MappedOutput> {
        if x.len() != map.rows {
            return Err(CimError::ShapeMismatch(format!("input has {} entries, matrix has {} rows", x.len(), map.rows)));
        }
        let mut out = MappedOutput {
            outputs: vec![0; map.cols],
            clipped: vec![0; map.cols],
            invocations: map.invocations(),
            trace: CycleTrace::default(),
        };
        for slot in &map.slots {
            let weights = map.slot_weights(slot, m);
            let acts = map.slot_acts(slot, x);
            let core = self.run_core(slot.core, &weights, &acts, rng)?;
            for (j, (v, code)) in core.outputs.iter().zip(&core.codes).enumerate() {
                let col = slot.col_block * ENGINES_PER_CORE + j;
                if col < map.cols {
                    out.outputs[col] += v;
                    out.clipped[col] += code.clipped as u32;
                }
            }
            out.trace += core.trace;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EightBitOutput {
    pub outputs: Vec<i64>,
    /// Bound on `|output - exact|` for in-range passes.
    pub bound: i64,
    pub passes: u32,
    pub trace: CycleTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedOutput {
    pub outputs: Vec<i64>,
    /// Clipped row tiles per column.
    pub clipped: Vec<u32>,
    pub invocations: usize,
    pub trace: CycleTrace,
}

/// Placement of one (column block, row tile) onto a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub invocation: usize,
    pub core: usize,
    pub col_block: usize,
    pub row_tile: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub rows: usize,
    pub cols: usize,
    pub row_tiles: usize,
    pub col_blocks: usize,
    pub slots: Vec<Slot>,
}

/// Tile a `rows x cols` matrix (given as rows) onto the macro. Without
/// `streaming`, the matrix must fit in one invocation.
pub fn map_matrix(m: &[Vec<i32>], streaming: bool) -> Result<Mapping> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(CimError::ShapeMismatch("empty matrix".into()));
    }
    for (i, r) in m.iter().enumerate() {
        if r.len() != cols {
            return Err(CimError::ShapeMismatch(format!("row {i} has {} entries, expected {cols}", r.len())));
        }
        for &w in r {
            encoding::encode_weight(w)?;
        }
    }
    let row_tiles = rows.div_ceil(ROWS);
    let col_blocks = cols.div_ceil(ENGINES_PER_CORE);
    let n = row_tiles * col_blocks;
    if !streaming && n > CORES {
        return Err(CimError::TooManyColumns {
            needed: n,
            capacity: CORES,
        });
    }
    let slots = (0..n)
        .map(|s| Slot {
            invocation: s / CORES,
            core: s % CORES,
            col_block: s / row_tiles,
            row_tile: s % row_tiles,
        })
        .collect();
    Ok(Mapping {
        rows,
        cols,
        row_tiles,
        col_blocks,
        slots,
    })
}

impl Mapping {
    pub fn invocations(&self) -> usize {
        self.slots.len().div_ceil(CORES)
    }

    /// The 16 zero-padded 64-row engine columns of a slot.
    pub fn slot_weights(&self, slot: &Slot, m: &[Vec<i32>]) -> Vec<Vec<i32>> {
        (0..ENGINES_PER_CORE)
            .map(|j| {
                let col = slot.col_block * ENGINES_PER_CORE + j;
                (0..ROWS)
                    .map(|i| {
                        let row = slot.row_tile * ROWS + i;
                        if row < self.rows && col < self.cols {
                            m[row][col]
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// The 64 zero-padded activations a slot's core receives.
    pub fn slot_acts(&self, slot: &Slot, x: &[u8]) -> Vec<u8> {
        (0..ROWS).map(|i| x.get(slot.row_tile * ROWS + i).copied().unwrap_or(0)).collect()
    }

    /// Inverse mapping: `(slot index, engine within core, row within tile)` of
    /// matrix entry `(row, col)`.
    pub fn locate(&self, row: usize, col: usize) -> Option<(usize, usize, usize)> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        let slot = (col / ENGINES_PER_CORE) * self.row_tiles + row / ROWS;
        Some((slot, col % ENGINES_PER_CORE, row % ROWS))
    }
}
