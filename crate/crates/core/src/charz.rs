//! Characterization: transfer curve, DNL/INL, 1σ error, signal margin and the
//! convolution-layer noise experiment.
//!
//! Monte Carlo work is split into independent points, each with its own
//! random stream keyed by the point index, and mapped in parallel. Results are
//! collected in index order, so they do not depend on the worker count.
//! Errors are normalized to the unfolded dynamic range (6720 MAC units) in
//! every mode.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analog::Line;
use crate::encoding::{self, RawAct, SignMag, FOLD_OFFSET, MAX_ACT, MAX_WEIGHT_MAG, ROWS};
use crate::engine::{Engine, PulseTable, CODE_MAX};
use crate::error::{CimError, Result};
use crate::macrosys::{map_matrix, Macro, MacroConfig, ENGINES};
use crate::rng::{stream, WORKLOAD_STREAM};
use crate::workload::{dot, relu_acts, uniform_weights};

/// Normalization of the 1σ error: the unfolded 64-row dynamic range.
pub const FULL_SCALE_MAC: f64 = 6720.0;
/// Points in the standard Monte Carlo error measurement.
pub const DEFAULT_POINTS: usize = 9000;

/// Stream offset separating readout/pulse noise of the conv experiment from
/// its workload draws.
const CONV_NOISE_STREAM: u64 = 1 << 32;

/// Map `f` over `0..n` on `workers` threads (0 = all cores), in index order.
pub fn par_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let run = || (0..n).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    if workers == 0 {
        return run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CimError::ShapeMismatch(format!("thread pool: {e}")))?;
    pool.install(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferPoint {
    pub ideal_mac: i64,
    pub mean_code: f64,
    pub std_code: f64,
    pub n_trials: usize,
}

/// The code a perfect quantizer assigns to MAC value `m` under `cfg`:
/// the differential `m * boost / r` in ADC quanta, mid-rise, saturating.
pub fn ideal_code(m: i64, cfg: &MacroConfig) -> i32 {
    let x0 = (m * cfg.analog.boost as i64) as f64 / cfg.schedule.adc_quantum_ratio as f64;
    ((x0 / 2.0).ceil() as i64 - 1).clamp(-(CODE_MAX as i64), CODE_MAX as i64) as i32
}

/// Products `|a'| * |w|` a single row can contribute, with one factor pair each.
fn row_products(folded: bool) -> Vec<(i64, u8, u8)> {
    let act_max = if folded { FOLD_OFFSET as u8 } else { MAX_ACT };
    let mut best: std::collections::BTreeMap<i64, (u8, u8)> = Default::default();
    for a in 1..=act_max {
        for w in 1..=MAX_WEIGHT_MAG {
            best.entry(a as i64 * w as i64).or_insert((a, w));
        }
    }
    best.into_iter().rev().map(|(p, (a, w))| (p, a, w)).collect()
}

/// Exactly `k` values from `prods[from..]` (descending, repeats allowed)
/// summing to `t`.
fn split(t: i64, k: usize, prods: &[(i64, u8, u8)], from: usize, out: &mut Vec<i64>) -> bool {
    if k == 0 {
        return t == 0;
    }
    for &(p, _, _) in &prods[from..] {
        if p > t {
            continue;
        }
        if p * (k as i64) < t {
            break;
        }
        out.push(p);
        let i = prods.iter().position(|q| q.0 == p).expect("product in table");
        if split(t - p, k - 1, prods, i, out) {
            return true;
        }
        out.pop();
    }
    false
}

/// A 64-row `(activation, weight)` pattern whose analog MAC equals `m`:
/// `sum(dtc_operand(a) * w) = m`. Uses as many maximal rows as possible and
/// the fewest extra rows for the remainder.
pub fn realize(m: i64, folded: bool) -> Result<(Vec<u8>, Vec<i32>)> {
    let prods = row_products(folded);
    let pmax = prods[0].0;
    let t = m.abs();
    let full = (t / pmax) as usize;
    let mut vals = None;
    'search: for back in 0..=full.min(2) {
        let rest = t - (full - back) as i64 * pmax;
        let free = ROWS.saturating_sub(full - back);
        for k in 0..=free.min(back + 3) {
            let mut out = Vec::new();
            if split(rest, k, &prods, 0, &mut out) {
                let mut v = vec![pmax; full - back];
                v.extend(out);
                vals = Some(v);
                break 'search;
            }
        }
    }
    let vals = vals.ok_or(CimError::UnrealizableTarget(m))?;
    let zero_act = if folded { FOLD_OFFSET as u8 } else { 0 };
    let mut acts = vec![zero_act; ROWS];
    let mut weights = vec![0i32; ROWS];
    let s = m.signum() as i32;
    for (row, p) in vals.into_iter().enumerate() {
        let &(_, a, w) = prods.iter().find(|q| q.0 == p).expect("product in table");
        if folded && a == FOLD_OFFSET as u8 {
            // a' = -8 needs a raw activation of 0 and a flipped weight sign.
            acts[row] = 0;
            weights[row] = -s * w as i32;
        } else {
            acts[row] = if folded { a + FOLD_OFFSET as u8 } else { a };
            weights[row] = s * w as i32;
        }
    }
    Ok((acts, weights))
}

/// Analog MAC value of a pattern, `sum(dtc_operand(a) * w)`.
pub fn analog_mac(acts: &[u8], weights: &[i32], folded: bool) -> Result<i64> {
    let mut total = 0;
    for (&a, &w) in acts.iter().zip(weights) {
        total += encoding::dtc_operand(RawAct::new(a)?, folded).value() as i64 * w as i64;
    }
    Ok(total)
}

/// Run each target MAC value `trials` times on engine 0 of the chip.
pub fn transfer_curve(cfg: &MacroConfig, sweep: &[i64], trials: usize, workers: usize) -> Result<Vec<TransferPoint>> {
    if trials == 0 {
        return Err(CimError::OutOfRange {
            what: "trials",
            value: 0,
            min: 1,
            max: i64::MAX,
        });
    }
    let chip = Macro::new(cfg.clone())?;
    let base = chip.engine(0).clone();
    let patterns = sweep.iter().map(|&m| realize(m, cfg.folding)).collect::<Result<Vec<_>>>()?;
    par_map(workers, sweep.len(), |i| {
        let (acts, weights) = &patterns[i];
        let mut e = base.clone();
        e.load_weights(weights, &cfg.analog)?;
        let ops = operands(acts, cfg.folding)?;
        let mut rng = stream(cfg.noise.seed, i as u64);
        let mut codes = Vec::with_capacity(trials);
        for _ in 0..trials {
            e.precharge(&cfg.analog);
            let table = PulseTable::draw(&ops, &cfg.analog, &cfg.noise, &mut rng)?;
            e.mac_phase_with(&table, &cfg.analog)?;
            let code = e.adc_readout(&cfg.schedule, &cfg.analog, &cfg.noise, &mut rng)?;
            codes.push(code.value as f64);
        }
        let (mean, std) = mean_std(&codes);
        Ok(TransferPoint {
            ideal_mac: sweep[i],
            mean_code: mean,
            std_code: std,
            n_trials: trials,
        })
    })
}

fn operands(acts: &[u8], folded: bool) -> Result<Vec<SignMag>> {
    acts.iter()
        .map(|&a| Ok(encoding::dtc_operand(RawAct::new(a)?, folded)))
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linearity {
    /// Codes `k` with a measured lower edge, ascending.
    pub codes: Vec<i32>,
    /// Lower transition edge of each code, MAC units.
    pub edges: Vec<f64>,
    /// Per code `codes[i]` (all but the last): width of the code in LSB minus 1.
    pub dnl: Vec<f64>,
    /// Per code: edge offset from the endpoint-fit line, LSB.
    pub inl: Vec<f64>,
    /// Codes of zero width.
    pub missing: Vec<i32>,
    /// Fitted code width, MAC units.
    pub lsb: f64,
}

/// DNL/INL from code-transition edges of a mean transfer curve.
///
/// The lower edge of code `k` is placed midway between the last sweep point
/// whose mean code is below `k - 1/2` and the first at or above it. INL is
/// the deviation of the edges from the straight line through the first and
/// last edge (endpoint fit), so INL(first) = INL(last) = 0 and DNL is its
/// first difference.
pub fn dnl_inl(curve: &[TransferPoint]) -> Result<Linearity> {
    if curve.len() < 3 {
        return Err(CimError::InsufficientCoverage(format!("{} sweep points", curve.len())));
    }
    if curve.windows(2).any(|w| w[1].ideal_mac <= w[0].ideal_mac) {
        return Err(CimError::InsufficientCoverage("sweep must be strictly increasing".into()));
    }
    let lo = curve[0].mean_code.round() as i32;
    let hi = curve[curve.len() - 1].mean_code.round() as i32;
    let mut codes = Vec::new();
    let mut edges = Vec::new();
    let mut j = 1;
    for k in lo + 1..=hi {
        let th = k as f64 - 0.5;
        while j < curve.len() && curve[j].mean_code < th {
            j += 1;
        }
        if j == curve.len() {
            break;
        }
        codes.push(k);
        edges.push(0.5 * (curve[j - 1].ideal_mac + curve[j].ideal_mac) as f64);
    }
    if edges.len() < 3 {
        return Err(CimError::InsufficientCoverage(format!(
            "only {} code transitions in the sweep",
            edges.len()
        )));
    }
    let n = edges.len() - 1;
    let lsb = (edges[n] - edges[0]) / n as f64;
    if lsb.is_nan() || lsb <= 0.0 {
        return Err(CimError::InsufficientCoverage("transfer curve is flat".into()));
    }
    let inl: Vec<f64> = edges.iter().enumerate().map(|(i, e)| (e - edges[0]) / lsb - i as f64).collect();
    let dnl: Vec<f64> = inl.windows(2).map(|w| w[1] - w[0]).collect();
    let missing = codes
        .iter()
        .zip(edges.windows(2))
        .filter(|(_, e)| e[1] == e[0])
        .map(|(&k, _)| k)
        .collect();
    Ok(Linearity {
        codes,
        edges,
        dnl,
        inl,
        missing,
        lsb,
    })
}

/// Every `step`-th MAC value of the widest interval `[-t, t]` in which every
/// integer is realizable (a few values next to the dynamic range are not).
pub fn full_sweep(cfg: &MacroConfig, step: usize) -> Vec<i64> {
    let range = encoding::dynamic_range(cfg.folding, ROWS);
    let t = (0..=range)
        .find(|&m| realize(m + 1, cfg.folding).is_err() || realize(-m - 1, cfg.folding).is_err())
        .unwrap_or(range);
    (-t..=t).step_by(step.max(1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Standard deviation of `(output - ideal) / 6720`.
    pub sigma: f64,
    pub mean: f64,
    pub points: usize,
    pub clipped: usize,
}

/// One random 64-row dot product: ReLU-like activations, uniform weights,
/// drawn from stream `i`. Returns `(output - ideal, clipped)`.
fn error_point(chip: &Macro, i: usize) -> Result<(f64, bool)> {
    let cfg = chip.config();
    let mut rng = stream(cfg.noise.seed, i as u64);
    let w = uniform_weights(ROWS, &mut rng);
    let a = relu_acts(ROWS, cfg.act_scale, &mut rng);
    let acts = a.iter().map(|&v| RawAct::new(v)).collect::<Result<Vec<_>>>()?;
    let mut e: Engine = chip.engine(i % ENGINES).clone();
    e.load_weights(&w, &cfg.analog)?;
    let (code, out) = e.mac_and_read(&acts, cfg.folding, &cfg.schedule, &cfg.analog, &cfg.noise, &mut rng)?;
    Ok(((out - dot(&a, &w)) as f64, code.clipped))
}

/// 1σ output error of `points` random dot products, as a fraction of the
/// unfolded full scale. Point `i` uses stream `i` for both its workload and
/// its noise, so runs that differ only in mode are sample-paired.
pub fn sigma_error(cfg: &MacroConfig, points: usize, workers: usize) -> Result<ErrorStats> {
    let chip = Macro::new(cfg.clone())?;
    let res = par_map(workers, points, |i| error_point(&chip, i))?;
    let errs: Vec<f64> = res.iter().map(|r| r.0 / FULL_SCALE_MAC).collect();
    let (mean, sigma) = mean_std(&errs);
    Ok(ErrorStats {
        sigma,
        mean,
        points,
        clipped: res.iter().filter(|r| r.1).count(),
    })
}

/// Bisect `k_narrow` so the baseline (no enhancements) 1σ error hits
/// `target`. Returns the fitted config and the achieved error.
pub fn calibrate_k_narrow(cfg: &MacroConfig, target: f64, points: usize, workers: usize) -> Result<(MacroConfig, f64)> {
    let mut base = cfg.with_enhancements(false);
    let tau2 = cfg.analog.tau * cfg.analog.tau;
    let (mut lo, mut hi) = (1e-3f64.ln(), 1e3f64.ln());
    // Noise large enough to run a line out of headroom counts as too large.
    let mut eval = |lk: f64| -> Result<f64> {
        base.noise.k_narrow = lk.exp() * tau2;
        match sigma_error(&base, points, workers) {
            Ok(s) => Ok(s.sigma),
            Err(CimError::HeadroomExceeded { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    if eval(hi)? < target || eval(lo)? > target {
        return Err(CimError::Validation {
            field: "noise.k_narrow".into(),
            invariant: format!("no k_narrow in range reaches 1σ error {target}"),
        });
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let achieved = eval(0.5 * (lo + hi))?;
    let mut out = cfg.clone();
    out.noise.k_narrow = base.noise.k_narrow;
    Ok((out, achieved))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Dynamic range of the mode in MAC units.
    pub dynamic_range: i64,
    /// MAC step size `vpp_mac / dynamic_range * boost` (V).
    pub step_size: f64,
    /// Standard deviation of the analog MAC differential (V).
    pub sigma: f64,
    /// `step_size - 2 * sigma` (V).
    pub margin: f64,
    /// Largest fraction of the MAC headroom used by any sampled point.
    pub headroom_utilization: f64,
    /// Fraction of sampled points beyond the readout full scale.
    pub clip_rate: f64,
}

impl MarginReport {
    /// Step size ratio between two modes, from the exact dynamic ranges.
    pub fn step_ratio(&self, other: &MarginReport, boost_self: u32, boost_other: u32) -> f64 {
        (other.dynamic_range * boost_self as i64) as f64 / (self.dynamic_range * boost_other as i64) as f64
    }
}

/// Signal margin in the configured mode. The differential error is measured
/// right after the MAC phase over `points` random workloads.
pub fn signal_margin(cfg: &MacroConfig, points: usize, workers: usize) -> Result<MarginReport> {
    let p = &cfg.analog;
    let dr = encoding::dynamic_range(cfg.folding, ROWS);
    let step = p.vpp_mac * p.boost as f64 / dr as f64;
    let chip = Macro::new(cfg.clone())?;
    let full_scale = crate::engine::FULL_SCALE * cfg.schedule.adc_quantum_ratio as f64;
    let res = par_map(workers, points, |i| {
        let mut rng = stream(cfg.noise.seed, i as u64);
        let w = uniform_weights(ROWS, &mut rng);
        let a = relu_acts(ROWS, cfg.act_scale, &mut rng);
        let mut e = chip.engine(i % ENGINES).clone();
        e.load_weights(&w, p)?;
        let m = analog_mac(&a, &w, cfg.folding)?;
        e.mac_phase(&operands(&a, cfg.folding)?, p, &cfg.noise, &mut rng)?;
        let bl = e.bitlines();
        let target = (m * p.boost as i64) as f64;
        // Linear lines: the differential is exactly the charge difference
        // times u, so compute it in charge to avoid voltage round-off.
        let err = if p.lambda_clm == 0.0 {
            (bl.removed_charge(Line::Rblb) - bl.removed_charge(Line::Rbl) - target) * p.quantum()
        } else {
            bl.differential(p) - target * p.quantum()
        };
        let used = bl.removed_charge(Line::Rbl).max(bl.removed_charge(Line::Rblb)) * p.quantum() / p.vpp_mac;
        let clip = (m * p.boost as i64).abs() as f64 >= full_scale;
        Ok((err, used, clip))
    })?;
    let errs: Vec<f64> = res.iter().map(|r| r.0).collect();
    let (_, sigma) = mean_std(&errs);
    Ok(MarginReport {
        dynamic_range: dr,
        step_size: step,
        sigma,
        margin: step - 2.0 * sigma,
        headroom_utilization: res.iter().map(|r| r.1).fold(0.0, f64::max),
        clip_rate: res.iter().filter(|r| r.2).count() as f64 / points.max(1) as f64,
    })
}

/// Geometry of the convolution used by the noise-suppression experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            in_ch: 16,
            out_ch: 16,
            kernel: 3,
            height: 16,
            width: 16,
        }
    }
}

impl ConvSpec {
    /// Rows of the lowered weight matrix.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    /// Lower an `in_ch x height x width` map (channel-major) to one patch per
    /// output pixel, zero-padded so the output keeps the input size.
    pub fn im2col(&self, x: &[u8]) -> Vec<Vec<u8>> {
        let (h, w, k) = (self.height as isize, self.width as isize, self.kernel as isize);
        let pad = k / 2;
        let mut out = Vec::with_capacity(self.height * self.width);
        for y in 0..h {
            for xx in 0..w {
                let mut patch = Vec::with_capacity(self.patch_len());
                for c in 0..self.in_ch as isize {
                    for dy in 0..k {
                        for dx in 0..k {
                            let (sy, sx) = (y + dy - pad, xx + dx - pad);
                            let v = if (0..h).contains(&sy) && (0..w).contains(&sx) {
                                x[((c * h + sy) * w + sx) as usize]
                            } else {
                                0
                            };
                            patch.push(v);
                        }
                    }
                }
                out.push(patch);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvReport {
    /// RMS output error per image without folding, MAC units.
    pub rms_unfolded: Vec<f64>,
    /// RMS output error per image with folding, MAC units.
    pub rms_folded: Vec<f64>,
    /// Per-image `rms_unfolded / rms_folded`.
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Set when there is no noise, so both errors are pure quantization.
    pub degenerate: bool,
}

/// Run a random convolution layer on `images` random feature maps with and
/// without MAC-folding and compare the RMS output error.
pub fn noise_suppression_experiment(cfg: &MacroConfig, spec: &ConvSpec, images: usize, workers: usize) -> Result<ConvReport> {
    let mut wrng = stream(cfg.noise.seed, WORKLOAD_STREAM);
    // Matrix rows are patch positions, columns output channels.
    let matrix: Vec<Vec<i32>> = (0..spec.patch_len()).map(|_| uniform_weights(spec.out_ch, &mut wrng)).collect();
    let map = map_matrix(&matrix, true)?;
    let chips = [false, true]
        .map(|folding| Macro::new(MacroConfig { folding, ..cfg.clone() }));
    let [unfolded, folded] = chips;
    let (unfolded, folded) = (unfolded?, folded?);
    let res = par_map(workers, images, |img| {
        let mut xrng = stream(cfg.noise.seed, img as u64);
        let x = relu_acts(spec.in_ch * spec.height * spec.width, cfg.act_scale, &mut xrng);
        let patches = spec.im2col(&x);
        let mut rms = [0.0; 2];
        for (mode, chip) in [&unfolded, &folded].into_iter().enumerate() {
            let mut chip = chip.clone();
            let mut nrng = stream(cfg.noise.seed, CONV_NOISE_STREAM + img as u64);
            let mut sq = 0.0;
            let mut count = 0usize;
            for patch in &patches {
                let out = chip.run_mapped(&map, &matrix, patch, &mut nrng)?;
                for (c, v) in out.outputs.iter().enumerate() {
                    let col: Vec<i32> = matrix.iter().map(|r| r[c]).collect();
                    let d = (v - dot(patch, &col)) as f64;
                    sq += d * d;
                    count += 1;
                }
            }
            rms[mode] = (sq / count as f64).sqrt();
        }
        Ok(rms)
    })?;
    let rms_unfolded: Vec<f64> = res.iter().map(|r| r[0]).collect();
    let rms_folded: Vec<f64> = res.iter().map(|r| r[1]).collect();
    let ratios: Vec<f64> = res.iter().map(|r| r[0] / r[1]).collect();
    Ok(ConvReport {
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rms_unfolded,
        rms_folded,
        ratios,
        degenerate: cfg.noise.is_ideal(),
    })
}
