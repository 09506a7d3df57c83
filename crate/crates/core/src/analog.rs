//! Physical primitives: DTC pulses, bit-line discharge, precharge and the
//! non-ideality models layered on top of them.
//!
//! Bit-line state is tracked as the voltage at the last precharge plus the
//! normalized charge removed since, in units of the discharge quantum
//! `u = i0 * tau / c_bl`. With the integer pulse widths of ideal operation the
//! accumulated charge is exact, so two lines that received the same total
//! charge compare equal regardless of pulse order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalogParams {
    /// Precharge level (V).
    pub vdd: f64,
    /// Usable MAC headroom below the precharge level (V).
    pub vpp_mac: f64,
    /// Bit-line capacitance, matched on RBL and RBLB (F).
    pub c_bl: f64,
    /// Nominal branch current (A).
    pub i0: f64,
    /// DTC pulse quantum (s).
    pub tau: f64,
    /// Channel-length modulation coefficient (1/V). Zero is ideal.
    pub lambda_clm: f64,
    /// DTC resolution multiplier, 1 or 2.
    pub boost: u32,
}

impl Default for AnalogParams {
    fn default() -> Self {
        // u = 0.5 uA * 2.9 ps / 50 fF = 29 uV, so the largest single-line MAC
        // discharge (boosted, unfolded: 13440 u) stays under 0.8 * vpp_mac.
        AnalogParams {
            vdd: 1.1,
            vpp_mac: 0.5,
            c_bl: 50e-15,
            i0: 0.5e-6,
            tau: 2.9e-12,
            lambda_clm: 0.0,
            boost: 1,
        }
    }
}

impl AnalogParams {
    /// Discharge quantum `u = i0 * tau / c_bl` (V).
    pub fn quantum(&self) -> f64 {
        self.i0 * self.tau / self.c_bl
    }

    pub fn headroom_floor(&self) -> f64 {
        self.vdd - self.vpp_mac
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("analog.vdd", self.vdd),
            ("analog.vpp_mac", self.vpp_mac),
            ("analog.c_bl", self.c_bl),
            ("analog.i0", self.i0),
            ("analog.tau", self.tau),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, "must be finite and > 0"));
            }
        }
        if !(self.lambda_clm.is_finite() && self.lambda_clm >= 0.0) {
            return Err(invalid("analog.lambda_clm", "must be finite and >= 0"));
        }
        if self.vpp_mac > self.vdd {
            return Err(invalid("analog.vpp_mac", "vpp_mac <= vdd"));
        }
        if !matches!(self.boost, 1 | 2) {
            return Err(invalid("analog.boost", "boost ∈ {1,2}"));
        }
        if self.quantum().is_nan() || self.quantum() <= 0.0 {
            return Err(invalid("analog", "discharge quantum i0*tau/c_bl > 0"));
        }
        Ok(())
    }

    /// Line voltage after removing `charge` quanta starting from `v0`.
    ///
    /// Ideal branches remove exactly `u` per quantum. With channel-length
    /// modulation the current scales with `(1 + lambda * V)`, which integrates
    /// to an exponential in the removed charge.
    pub fn level_after(&self, v0: f64, charge: f64) -> f64 {
        let v = if self.lambda_clm == 0.0 {
            v0 - charge * self.quantum()
        } else {
            let inv = 1.0 / self.lambda_clm;
            (v0 + inv) * (-self.lambda_clm * self.quantum() * charge).exp() - inv
        };
        v.max(0.0)
    }
}

pub(crate) fn invalid(field: &str, invariant: &str) -> CimError {
    CimError::Validation {
        field: field.to_string(),
        invariant: invariant.to_string(),
    }
}

/// Noise and mismatch parameters.
///
/// Pulse-width noise has standard deviation
/// `sigma_edge + k_narrow / (w + w_floor)` for a nominal width `w`, so narrow
/// pulses are noisier than wide ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Width-independent pulse-edge jitter (s).
    pub sigma_edge: f64,
    /// Narrow-pulse excess noise scale (s^2).
    pub k_narrow: f64,
    /// Regularizer of the narrow-pulse term (s).
    pub w_floor: f64,
    /// Relative std of per-branch current mismatch.
    pub sigma_branch: f64,
    /// Sense-amplifier offset std (V).
    pub sigma_sa: f64,
    /// Seed of the simulated chip instance and its cycle noise.
    pub seed: u64,
}

impl NoiseParams {
    pub fn ideal() -> NoiseParams {
        NoiseParams {
            sigma_edge: 0.0,
            k_narrow: 0.0,
            w_floor: 0.0,
            sigma_branch: 0.0,
            sigma_sa: 0.0,
            seed: 0,
        }
    }

    /// Fitted operating point, expressed in multiples of the default 2.9 ps
    /// DTC quantum. `k_narrow` comes out of `charz::calibrate_k_narrow` at the
    /// default configuration; the other terms are fixed shape choices.
    pub fn calibrated() -> NoiseParams {
        let tau = AnalogParams::default().tau;
        NoiseParams {
            sigma_edge: CAL_SIGMA_EDGE_TAU * tau,
            k_narrow: CAL_K_NARROW_TAU2 * tau * tau,
            w_floor: CAL_W_FLOOR_TAU * tau,
            sigma_branch: 0.005,
            sigma_sa: 0.1e-3,
            seed: 1,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.sigma_edge == 0.0 && self.k_narrow == 0.0 && self.sigma_branch == 0.0 && self.sigma_sa == 0.0
    }

    /// Standard deviation of the width noise for a pulse of nominal width `w` (s).
    pub fn pulse_sigma(&self, w: f64) -> f64 {
        if self.k_narrow == 0.0 {
            return self.sigma_edge;
        }
        self.sigma_edge + self.k_narrow / (w + self.w_floor)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("noise.sigma_edge", self.sigma_edge),
            ("noise.k_narrow", self.k_narrow),
            ("noise.w_floor", self.w_floor),
            ("noise.sigma_branch", self.sigma_branch),
            ("noise.sigma_sa", self.sigma_sa),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and >= 0"));
            }
        }
        if self.k_narrow > 0.0 && self.w_floor == 0.0 {
            return Err(invalid("noise.w_floor", "w_floor > 0 when k_narrow > 0"));
        }
        Ok(())
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams::calibrated()
    }
}

pub(crate) const CAL_SIGMA_EDGE_TAU: f64 = 0.1;
pub(crate) const CAL_K_NARROW_TAU2: f64 = 27.6248;
pub(crate) const CAL_W_FLOOR_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Line {
    Rbl,
    Rblb,
}

/// The differential RBL/RBLB capacitor pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitlinePair {
    base: [f64; 2],
    charge: [f64; 2],
    precharged: bool,
}

impl BitlinePair {
    /// A pair at arbitrary voltages, not marked precharged.
    pub fn at(v_rbl: f64, v_rblb: f64) -> BitlinePair {
        BitlinePair {
            base: [v_rbl, v_rblb],
            charge: [0.0; 2],
            precharged: false,
        }
    }

    pub fn discharged() -> BitlinePair {
        BitlinePair::at(0.0, 0.0)
    }

    pub fn precharged(&self) -> bool {
        self.precharged
    }

    pub fn voltage(&self, line: Line, p: &AnalogParams) -> f64 {
        let i = line as usize;
        if self.charge[i] == 0.0 {
            return self.base[i];
        }
        p.level_after(self.base[i], self.charge[i])
    }

    pub fn v_rbl(&self, p: &AnalogParams) -> f64 {
        self.voltage(Line::Rbl, p)
    }

    pub fn v_rblb(&self, p: &AnalogParams) -> f64 {
        self.voltage(Line::Rblb, p)
    }

    /// `v_rbl - v_rblb`.
    pub fn differential(&self, p: &AnalogParams) -> f64 {
        self.v_rbl(p) - self.v_rblb(p)
    }

    /// Normalized charge removed from `line` since the last precharge.
    pub fn removed_charge(&self, line: Line) -> f64 {
        self.charge[line as usize]
    }

    /// Remove `charge` quanta from one line. Fails once the line drops below
    /// the MAC headroom.
    pub fn remove_charge(&mut self, line: Line, charge: f64, p: &AnalogParams) -> Result<()> {
        self.precharged = false;
        if charge <= 0.0 {
            return Ok(());
        }
        self.charge[line as usize] += charge;
        let v = self.voltage(line, p);
        if v < p.headroom_floor() {
            return Err(CimError::HeadroomExceeded {
                voltage: v,
                floor: p.headroom_floor(),
            });
        }
        Ok(())
    }
}

pub fn precharge(_bl: BitlinePair, p: &AnalogParams) -> BitlinePair {
    BitlinePair {
        base: [p.vdd; 2],
        charge: [0.0; 2],
        precharged: true,
    }
}

/// Width in units of `tau` of one DTC pulse whose nominal width is
/// `nominal` quanta, given a standard-normal draw `z`.
///
/// `z` is drawn by the caller for every potential pulse so that runs with
/// different noise levels or activation encodings stay sample-paired.
pub(crate) fn noisy_width(nominal: f64, z: f64, p: &AnalogParams, n: &NoiseParams) -> f64 {
    if nominal <= 0.0 {
        return 0.0;
    }
    let sigma = n.pulse_sigma(nominal * p.tau) / p.tau;
    (nominal + sigma * z).max(0.0)
}

/// One DTC pulse for `magnitude` (s). A zero magnitude fires no pulse.
pub fn dtc_pulse<R: Rng + ?Sized>(magnitude: u32, p: &AnalogParams, n: &NoiseParams, rng: &mut R) -> f64 {
    if magnitude == 0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    let nominal = (magnitude * p.boost) as f64;
    noisy_width(nominal, z, p, n) * p.tau
}

/// Voltage of a line starting at `v0` after `n_branches` branches conduct for
/// `width` seconds, each scaled by `1 + branch_factors[i]`.
pub fn discharge(v0: f64, n_branches: usize, width: f64, branch_factors: &[f64], p: &AnalogParams) -> Result<f64> {
    if n_branches > branch_factors.len() {
        return Err(CimError::WrongLength {
            what: "branch factors",
            expected: n_branches,
            actual: branch_factors.len(),
        });
    }
    if n_branches > crate::encoding::ROWS {
        return Err(CimError::OutOfRange {
            what: "branches",
            value: n_branches as i64,
            min: 0,
            max: crate::encoding::ROWS as i64,
        });
    }
    if width <= 0.0 || n_branches == 0 {
        return Ok(v0);
    }
    let current: f64 = branch_factors[..n_branches].iter().map(|d| 1.0 + d).sum();
    let v = p.level_after(v0, current * width / p.tau);
    if v < p.headroom_floor() {
        return Err(CimError::HeadroomExceeded {
            voltage: v,
            floor: p.headroom_floor(),
        });
    }
    Ok(v)
}

/// Per-branch relative current deviations, drawn once per simulated chip.
pub fn sample_mismatch<R: Rng + ?Sized>(count: usize, n: &NoiseParams, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            n.sigma_branch * z
        })
        .collect()
}
