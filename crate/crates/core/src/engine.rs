//! One column-wise CIM engine.
//!
//! A cycle is precharge, then the MAC phase, then a 9-step binary search on
//! the same two bit-lines. During MAC every set magnitude bit `b` of row `i`
//! lets its cell discharge one line for `|a_i| * 2^b` DTC quanta; the sign
//! logic picks the line from `sign(a_i) * sign(w_i)`. A positive product
//! discharges RBLB, so `v_rbl - v_rblb` carries the MAC result with its own
//! sign. Readout then compares the lines and discharges the higher one by a
//! halving amount per step until both meet.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analog::{invalid, noisy_width, precharge, sample_mismatch, AnalogParams, BitlinePair, Line, NoiseParams};
use crate::encoding::{self, RawAct, Sign, SignMag, WeightCode, ROWS};
use crate::error::{CimError, Result};

/// Comparisons per readout.
pub const ADC_STEPS: usize = 9;
/// Magnitude bit columns per weight.
pub const WEIGHT_BITS: usize = 3;
/// Largest 9-bit output magnitude.
pub const CODE_MAX: i32 = 255;
/// Readout full scale in ADC quanta (`r * u`): the sum of all step sizes plus one.
pub const FULL_SCALE: f64 = 512.0;

/// Per-step branch count and pulse width of the readout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadoutSchedule {
    /// `(n_branches, pulse_quanta)` for steps 1..=9.
    pub steps: Vec<(u32, u32)>,
    /// ADC quantum `r` in MAC discharge quanta.
    pub adc_quantum_ratio: u32,
}

impl ReadoutSchedule {
    /// Discharge amount of step `k` (1-based) in quanta: `r * 2^(9-k)`.
    pub fn step_charge(ratio: u32, k: usize) -> u32 {
        ratio << (ADC_STEPS - k)
    }

    /// All 64 branches for as long as the pulse stays at least one quantum,
    /// then fewer branches at one quantum.
    pub fn wide(ratio: u32) -> ReadoutSchedule {
        Self::build(ratio, |s| {
            let want = s.min(ROWS as u32);
            let n = (1..=want).rev().find(|n| s % n == 0).unwrap_or(1);
            (n, s / n)
        })
    }

    /// Long pulses on few branches; at most `max_branches` branches, with
    /// pulses of at least `s / max_branches` quanta.
    pub fn long_pulse(ratio: u32, max_branches: u32, max_quanta: u32) -> ReadoutSchedule {
        Self::build(ratio, |s| {
            // Largest branch count not above the target that splits `s` evenly.
            let want = (s / max_quanta).clamp(1, max_branches);
            let n = (1..=want).rev().find(|n| s % n == 0).unwrap_or(1);
            (n, s / n)
        })
    }

    fn build(ratio: u32, split: impl Fn(u32) -> (u32, u32)) -> ReadoutSchedule {
        ReadoutSchedule {
            steps: (1..=ADC_STEPS).map(|k| split(Self::step_charge(ratio, k))).collect(),
            adc_quantum_ratio: ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.adc_quantum_ratio;
        if r == 0 || !r.is_multiple_of(2) {
            return Err(invalid("schedule.adc_quantum_ratio", "r must be a positive even integer"));
        }
        if self.steps.len() != ADC_STEPS {
            return Err(invalid("schedule.steps", "exactly 9 readout steps"));
        }
        for (i, &(n, q)) in self.steps.iter().enumerate() {
            let k = i + 1;
            if n == 0 || n as usize > ROWS {
                return Err(invalid(&format!("schedule step {k}"), "1 <= n_branches <= 64"));
            }
            if q == 0 {
                return Err(invalid(&format!("schedule step {k}"), "pulse_quanta >= 1"));
            }
            if n as u64 * q as u64 != Self::step_charge(r, k) as u64 {
                return Err(invalid(
                    &format!("schedule step {k}"),
                    &format!("n*q = r*2^(9-k) = {} (got {n}*{q})", Self::step_charge(r, k)),
                ));
            }
        }
        Ok(())
    }
}

impl Default for ReadoutSchedule {
    fn default() -> Self {
        ReadoutSchedule::long_pulse(16, 8, 512)
    }
}

/// Result of one readout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcCode {
    pub decisions: [Sign; ADC_STEPS],
    /// Sign-directed sum `sum(s_k * 2^(9-k))`, always odd.
    pub raw: i32,
    /// `clamp(floor(raw / 2), -255, 255)`.
    pub value: i32,
    pub clipped: bool,
}

impl AdcCode {
    fn from_decisions(decisions: [Sign; ADC_STEPS], clipped: bool) -> AdcCode {
        let raw = decisions
            .iter()
            .enumerate()
            .map(|(i, s)| s.value() << (ADC_STEPS - 1 - i))
            .sum::<i32>();
        AdcCode {
            decisions,
            raw,
            value: raw.div_euclid(2).clamp(-CODE_MAX, CODE_MAX),
            clipped,
        }
    }

    /// Mid-rise reconstruction level in ADC quanta: code `v` covers
    /// `(2v, 2v + 2]` and is reported at its center.
    pub fn level(&self) -> i64 {
        2 * self.value as i64 + 1
    }
}

/// Noisy widths (in DTC quanta) of the MAC pulses for one cycle, per row and
/// weight bit. The DTC is shared, so one table can drive many engines.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTable {
    widths: Vec<[f64; WEIGHT_BITS]>,
    signs: Vec<Sign>,
}

impl PulseTable {
    pub fn draw<R: Rng + ?Sized>(
        acts: &[SignMag],
        p: &AnalogParams,
        n: &NoiseParams,
        rng: &mut R,
    ) -> Result<PulseTable> {
        check_rows("activations", acts.len())?;
        let mut widths = Vec::with_capacity(ROWS);
        for a in acts {
            let mut row = [0.0; WEIGHT_BITS];
            for (b, w) in row.iter_mut().enumerate() {
                // Drawn even for silent rows to keep runs sample-paired.
                let z: f64 = rng.sample(StandardNormal);
                let nominal = (a.magnitude() as u32 * p.boost) as f64 * (1u32 << b) as f64;
                *w = noisy_width(nominal, z, p, n);
            }
            widths.push(row);
        }
        Ok(PulseTable {
            widths,
            signs: acts.iter().map(|a| a.sign()).collect(),
        })
    }

    pub fn width(&self, row: usize, bit: usize) -> f64 {
        self.widths[row][bit]
    }

    /// Total pulse time generated by the DTC, in quanta.
    pub fn total_quanta(&self) -> f64 {
        self.widths.iter().flatten().sum()
    }
}

/// Noisy readout-enable pulse widths (in quanta) for the 9 steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutPulses([f64; ADC_STEPS]);

impl ReadoutPulses {
    pub fn draw<R: Rng + ?Sized>(
        sched: &ReadoutSchedule,
        p: &AnalogParams,
        n: &NoiseParams,
        rng: &mut R,
    ) -> ReadoutPulses {
        let mut w = [0.0; ADC_STEPS];
        for (wk, &(_, q)) in w.iter_mut().zip(&sched.steps) {
            let z: f64 = rng.sample(StandardNormal);
            *wk = noisy_width(q as f64, z, p, n);
        }
        ReadoutPulses(w)
    }

    pub fn total_quanta(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Precharged,
    MacDone,
    ReadoutDone,
}

/// One 64-row engine with its frozen fabrication mismatch.
#[derive(Debug, Clone)]
pub struct Engine {
    weights: Vec<WeightCode>,
    mac_factors: Vec<[f64; WEIGHT_BITS]>,
    adc_factors: Vec<f64>,
    sa_offset: f64,
    compensation: i64,
    bl: BitlinePair,
    phase: Phase,
}

impl Engine {
    /// An engine with perfectly matched branches and comparator.
    pub fn ideal() -> Engine {
        Engine {
            weights: vec![WeightCode::ZERO; ROWS],
            mac_factors: vec![[0.0; WEIGHT_BITS]; ROWS],
            adc_factors: vec![0.0; ROWS],
            sa_offset: 0.0,
            compensation: 0,
            bl: BitlinePair::discharged(),
            phase: Phase::Idle,
        }
    }

    /// Sample one engine instance: 64x3 MAC branches, 64 readout branches
    /// (the sign-bit cells) and a comparator offset.
    pub fn fabricate<R: Rng + ?Sized>(n: &NoiseParams, rng: &mut R) -> Engine {
        let mac = sample_mismatch(ROWS * WEIGHT_BITS, n, rng);
        let adc_factors = sample_mismatch(ROWS, n, rng);
        let z: f64 = rng.sample(StandardNormal);
        Engine {
            mac_factors: mac.chunks(WEIGHT_BITS).map(|c| [c[0], c[1], c[2]]).collect(),
            adc_factors,
            sa_offset: n.sigma_sa * z,
            ..Engine::ideal()
        }
    }

    pub fn weights(&self) -> &[WeightCode] {
        &self.weights
    }

    pub fn compensation(&self) -> i64 {
        self.compensation
    }

    pub fn sa_offset(&self) -> f64 {
        self.sa_offset
    }

    pub fn bitlines(&self) -> &BitlinePair {
        &self.bl
    }

    pub fn load_weights(&mut self, w: &[i32], p: &AnalogParams) -> Result<()> {
        check_rows("weights", w.len())?;
        let codes = w.iter().map(|&v| encoding::encode_weight(v)).collect::<Result<Vec<_>>>()?;
        self.compensation = encoding::compensation_unchecked(&codes);
        self.weights = codes;
        self.precharge(p);
        Ok(())
    }

    pub fn precharge(&mut self, p: &AnalogParams) {
        self.bl = precharge(self.bl, p);
        self.phase = Phase::Precharged;
    }

    /// Place the bit-lines in an arbitrary post-MAC state, e.g. to drive the
    /// readout with a known differential.
    pub fn set_mac_result(&mut self, bl: BitlinePair) {
        self.bl = bl;
        self.phase = Phase::MacDone;
    }

    pub fn mac_phase<R: Rng + ?Sized>(
        &mut self,
        acts: &[SignMag],
        p: &AnalogParams,
        n: &NoiseParams,
        rng: &mut R,
    ) -> Result<()> {
        let pulses = PulseTable::draw(acts, p, n, rng)?;
        self.mac_phase_with(&pulses, p)
    }

    /// MAC phase driven by an externally generated (possibly shared) pulse table.
    pub fn mac_phase_with(&mut self, pulses: &PulseTable, p: &AnalogParams) -> Result<()> {
        if self.phase != Phase::Precharged {
            return Err(CimError::NotPrecharged);
        }
        let mut charge = [0.0f64; 2];
        for (i, w) in self.weights.iter().enumerate() {
            let line = match pulses.signs[i] * w.sign() {
                Sign::Pos => Line::Rblb,
                Sign::Neg => Line::Rbl,
            };
            for b in 0..WEIGHT_BITS {
                if w.bit(b) {
                    charge[line as usize] += (1.0 + self.mac_factors[i][b]) * pulses.width(i, b);
                }
            }
        }
        // Branch currents share the line's (1 + lambda V) factor, so the
        // parallel pulses of one line act as their summed charge.
        self.bl.remove_charge(Line::Rbl, charge[0], p)?;
        self.bl.remove_charge(Line::Rblb, charge[1], p)?;
        self.phase = Phase::MacDone;
        Ok(())
    }

    pub fn adc_readout<R: Rng + ?Sized>(
        &mut self,
        sched: &ReadoutSchedule,
        p: &AnalogParams,
        n: &NoiseParams,
        rng: &mut R,
    ) -> Result<AdcCode> {
        let pulses = ReadoutPulses::draw(sched, p, n, rng);
        self.adc_readout_with(sched, &pulses, p)
    }

    pub fn adc_readout_with(&mut self, sched: &ReadoutSchedule, pulses: &ReadoutPulses, p: &AnalogParams) -> Result<AdcCode> {
        if self.phase != Phase::MacDone {
            return Err(CimError::ReadoutBeforeMac);
        }
        let adc_lsb = sched.adc_quantum_ratio as f64 * p.quantum();
        let initial = self.bl.differential(p) / adc_lsb;
        let mut decisions = [Sign::Neg; ADC_STEPS];
        for (k, &(branches, _)) in sched.steps.iter().enumerate() {
            // Exact ties resolve low.
            let s = if self.bl.v_rbl(p) + self.sa_offset > self.bl.v_rblb(p) {
                Sign::Pos
            } else {
                Sign::Neg
            };
            decisions[k] = s;
            let line = match s {
                Sign::Pos => Line::Rbl,
                Sign::Neg => Line::Rblb,
            };
            let current: f64 = self.adc_factors[..branches as usize].iter().map(|d| 1.0 + d).sum();
            self.bl.remove_charge(line, current * pulses.0[k], p)?;
        }
        self.phase = Phase::ReadoutDone;
        Ok(AdcCode::from_decisions(decisions, initial.abs() >= FULL_SCALE))
    }

    /// Precharge, MAC and readout; returns the code and the output in MAC
    /// units, with the folding compensation applied when `folded`.
    #[allow(clippy::too_many_arguments)]
    pub fn mac_and_read<R: Rng + ?Sized>(
        &mut self,
        acts: &[RawAct],
        folded: bool,
        sched: &ReadoutSchedule,
        p: &AnalogParams,
        n: &NoiseParams,
        rng: &mut R,
    ) -> Result<(AdcCode, i64)> {
        check_rows("activations", acts.len())?;
        let ops: Vec<SignMag> = acts.iter().map(|&a| encoding::dtc_operand(a, folded)).collect();
        self.precharge(p);
        let table = PulseTable::draw(&ops, p, n, rng)?;
        self.mac_phase_with(&table, p)?;
        let code = self.adc_readout(sched, p, n, rng)?;
        let out = self.correct(&code, folded, sched, p);
        Ok((code, out))
    }

    /// Digital post-processing of a code into MAC units.
    pub fn correct(&self, code: &AdcCode, folded: bool, sched: &ReadoutSchedule, p: &AnalogParams) -> i64 {
        let comp = if folded { self.compensation } else { 0 };
        code.level() * half_step(sched, p) + comp
    }
}

/// `r_eff = r / boost`: half of one output code in MAC units, and the bound on
/// the reconstruction error of an in-range result.
pub fn half_step(sched: &ReadoutSchedule, p: &AnalogParams) -> i64 {
    (sched.adc_quantum_ratio / p.boost) as i64
}

fn check_rows(what: &'static str, len: usize) -> Result<()> {
    if len != ROWS {
        return Err(CimError::WrongLength {
            what,
            expected: ROWS,
            actual: len,
        });
    }
    Ok(())
}
