//! Experiment runner. Each experiment turns a config and options into a
//! `Report`; nothing here touches the filesystem except to read inputs.

use std::fs;
use std::path::PathBuf;

use cimsim_core::charz::{self, ConvSpec, FULL_SCALE_MAC};
use cimsim_core::macrosys::{map_matrix, ENGINES, ENGINES_PER_CORE};
use cimsim_core::perf::{self, SPARSITY_GRID};
use cimsim_core::rng::{stream, WORKLOAD_STREAM};
use cimsim_core::workload::{dot, relu_acts, uniform_weights};
use cimsim_core::{Macro, MacroConfig, NoiseParams};

use crate::config::{emit_config, parse_with_overrides, Config};
use crate::matrix::{parse_activations, parse_matrix, read_file};
use crate::report::{f, Report, Table};
use crate::{CliError, Experiment};

/// Options shared by all experiments. `None` takes the experiment default.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    /// Zero all noise and mismatch terms.
    pub ideal: bool,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    pub workers: usize,
    pub points: Option<usize>,
    pub trials: Option<usize>,
    pub step: Option<usize>,
    pub images: Option<usize>,
    pub cycles: Option<usize>,
    pub matrix: Option<PathBuf>,
    pub input: Option<PathBuf>,
    /// Allow matrices that need more than one macro invocation.
    pub streaming: bool,
}

/// Load the config file (if any), then apply overrides, `--seed` and `--ideal`.
pub fn load_config(opts: &RunOptions) -> Result<Config, CliError> {
    let text = match &opts.config {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_with_overrides(&text, &opts.overrides)?;
    let noise = &mut cfg.macro_cfg.noise;
    if let Some(seed) = opts.seed {
        // Seeds round-trip through TOML, whose integers are signed 64-bit.
        if seed > i64::MAX as u64 {
            return Err(CliError::Usage(format!("--seed {seed} exceeds {}", i64::MAX)));
        }
        noise.seed = seed;
    }
    if opts.ideal {
        *noise = NoiseParams {
            seed: noise.seed,
            ..NoiseParams::ideal()
        };
    }
    cfg.macro_cfg.validate()?;
    Ok(cfg)
}

pub fn run(exp: Experiment, opts: &RunOptions) -> Result<Report, CliError> {
    let cfg = load_config(opts)?;
    let mut rep = Report::new(exp, cfg.macro_cfg.noise.seed, emit_config(&cfg));
    match exp {
        Experiment::Simulate => simulate(&cfg, opts, &mut rep)?,
        Experiment::Characterize => characterize(&cfg, opts, &mut rep)?,
        Experiment::Montecarlo => montecarlo(&cfg, opts, &mut rep)?,
        Experiment::Sweep => sweep(&cfg, opts, &mut rep)?,
        Experiment::Map => map(&cfg, opts, &mut rep)?,
        Experiment::Fom => fom(&cfg, opts, &mut rep)?,
    }
    Ok(rep)
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be at least 1")));
    }
    Ok(v)
}

fn rms_max(errs: &[f64]) -> (f64, f64) {
    let n = errs.len().max(1) as f64;
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    (rms, errs.iter().fold(0.0f64, |m, e| m.max(e.abs())))
}

/// Random cycles on the full macro: cycle `c` draws its workload and noise
/// from stream `c`.
fn simulate(cfg: &Config, opts: &RunOptions, rep: &mut Report) -> Result<(), CliError> {
    let mc = &cfg.macro_cfg;
    let cycles = positive("cycles", opts.cycles.unwrap_or(16))?;
    let mut chip = Macro::new(mc.clone())?;
    let mut table = Table::new("outputs", &["cycle", "engine", "ideal", "output", "error", "clipped"]);
    let mut errs = Vec::new();
    let mut clipped = 0usize;
    let mut trace = perf::CycleTrace::default();
    for c in 0..cycles {
        let mut rng = stream(mc.noise.seed, c as u64);
        let weights: Vec<Vec<i32>> = (0..ENGINES).map(|_| uniform_weights(mc.rows, &mut rng)).collect();
        let acts: Vec<Vec<u8>> = (0..mc.cores).map(|_| relu_acts(mc.rows, mc.act_scale, &mut rng)).collect();
        let out = chip.run(&weights, &acts, &mut rng)?;
        for (e, (&v, &clip)) in out.outputs.iter().zip(&out.clipped).enumerate() {
            let ideal = dot(&acts[e / ENGINES_PER_CORE], &weights[e]);
            errs.push((v - ideal) as f64);
            clipped += clip as usize;
            table.push(vec![
                c.to_string(),
                e.to_string(),
                ideal.to_string(),
                v.to_string(),
                (v - ideal).to_string(),
                clip.to_string(),
            ]);
        }
        trace += out.trace;
    }
    let (rms, max) = rms_max(&errs);
    let vdd = mc.analog.vdd;
    rep.metric("cycles", cycles);
    rep.metric("outputs", errs.len());
    rep.metric("rms_error", rms);
    rep.metric("max_abs_error", max);
    rep.metric("clipped", clipped);
    rep.metric("energy_per_cycle_j", perf::energy_per_cycle(&trace, &cfg.energy, vdd) / cycles as f64);
    rep.metric("tops_per_watt", perf::tops_per_watt(&trace, &cfg.energy, vdd));
    rep.tables.push(table);
    Ok(())
}

/// Transfer curve, DNL/INL and signal margin of engine 0 in the configured mode.
fn characterize(cfg: &Config, opts: &RunOptions, rep: &mut Report) -> Result<(), CliError> {
    let mc = &cfg.macro_cfg;
    let step = positive("step", opts.step.unwrap_or(1))?;
    let default_trials = if mc.noise.is_ideal() { 1 } else { 4 };
    let trials = positive("trials", opts.trials.unwrap_or(default_trials))?;
    let points = positive("points", opts.points.unwrap_or(2000))?;
    let sweep = charz::full_sweep(mc, step);
    let curve = charz::transfer_curve(mc, &sweep, trials, opts.workers)?;
    let lin = charz::dnl_inl(&curve)?;
    let margin = charz::signal_margin(mc, points, opts.workers)?;

    let mut transfer = Table::new("transfer", &["ideal_mac", "ideal_code", "mean_code", "std_code", "trials"]);
    for p in &curve {
        transfer.push(vec![
            p.ideal_mac.to_string(),
            charz::ideal_code(p.ideal_mac, mc).to_string(),
            f(p.mean_code),
            f(p.std_code),
            p.n_trials.to_string(),
        ]);
    }
    let mut linearity = Table::new("linearity", &["code", "edge_mac", "dnl", "inl"]);
    for (i, &k) in lin.codes.iter().enumerate() {
        linearity.push(vec![
            k.to_string(),
            f(lin.edges[i]),
            lin.dnl.get(i).map_or(String::new(), |&d| f(d)),
            f(lin.inl[i]),
        ]);
    }
    let max_abs = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    rep.metric("sweep_points", sweep.len());
    rep.metric("trials", trials);
    rep.metric("lsb_mac", lin.lsb);
    rep.metric("max_abs_dnl", max_abs(&lin.dnl));
    rep.metric("max_abs_inl", max_abs(&lin.inl));
    rep.metric("missing_codes", lin.missing.len());
    rep.metric("step_size_v", margin.step_size);
    rep.metric("sigma_v", margin.sigma);
    rep.metric("margin_v", margin.margin);
    rep.metric("headroom_utilization", margin.headroom_utilization);
    rep.metric("clip_rate", margin.clip_rate);
    rep.tables.push(transfer);
    rep.tables.push(linearity);
    Ok(())
}

/// 1σ error without enhancements, with folding only and with folding plus
/// boost, then the convolution noise-suppression comparison.
fn montecarlo(cfg: &Config, opts: &RunOptions, rep: &mut Report) -> Result<(), CliError> {
    let points = positive("points", opts.points.unwrap_or(charz::DEFAULT_POINTS))?;
    let images = opts.images.unwrap_or(4);
    let base = cfg.macro_cfg.with_enhancements(false);
    let folding = MacroConfig {
        folding: true,
        ..base.clone()
    };
    let enhanced = cfg.macro_cfg.with_enhancements(true);
    let mut table = Table::new("montecarlo", &["mode", "sigma", "mean", "points", "clipped"]);
    let mut sig = Vec::new();
    for (mode, mc) in [("baseline", &base), ("folding", &folding), ("enhanced", &enhanced)] {
        let s = charz::sigma_error(mc, points, opts.workers)?;
        table.push(vec![
            mode.to_string(),
            f(s.sigma),
            f(s.mean),
            s.points.to_string(),
            s.clipped.to_string(),
        ]);
        sig.push(s);
    }
    rep.metric("points", points);
    rep.metric("full_scale_mac", FULL_SCALE_MAC);
    rep.metric("sigma_baseline", sig[0].sigma);
    rep.metric("sigma_folding", sig[1].sigma);
    rep.metric("sigma_enhanced", sig[2].sigma);
    rep.metric("reduction", sig[0].sigma / sig[2].sigma);
    rep.metric("clipped_baseline", sig[0].clipped);
    rep.metric("clipped_enhanced", sig[2].clipped);
    rep.tables.push(table);

    rep.metric("conv_images", images);
    if images > 0 {
        let conv = charz::noise_suppression_experiment(&base, &ConvSpec::default(), images, opts.workers)?;
        let mut t = Table::new("conv", &["image", "rms_unfolded", "rms_folded", "ratio"]);
        for i in 0..images {
            t.push(vec![i.to_string(), f(conv.rms_unfolded[i]), f(conv.rms_folded[i]), f(conv.ratios[i])]);
        }
        rep.metric("conv_min_ratio", conv.min_ratio);
        rep.metric("conv_max_ratio", conv.max_ratio);
        rep.metric("conv_degenerate", conv.degenerate);
        rep.tables.push(t);
    }
    Ok(())
}

fn sweep(cfg: &Config, opts: &RunOptions, rep: &mut Report) -> Result<(), CliError> {
    let cycles = positive("cycles", opts.cycles.unwrap_or(64))?;
    let pts = perf::sparsity_sweep(&cfg.macro_cfg, &cfg.energy, &SPARSITY_GRID, cycles, opts.workers)?;
    let mut t = Table::new("sweep", &["sparsity", "energy_j", "tops_per_watt"]);
    for p in &pts {
        t.push(vec![f(p.sparsity), f(p.energy), f(p.tops_per_watt)]);
    }
    let eff: Vec<f64> = pts.iter().map(|p| p.tops_per_watt).collect();
    rep.metric("cycles", cycles);
    rep.metric("eff_min", eff.iter().copied().fold(f64::INFINITY, f64::min));
    rep.metric("eff_max", eff.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    rep.metric("monotone", eff.windows(2).all(|w| w[1] > w[0]));
    rep.tables.push(t);
    Ok(())
}

/// Map a weight matrix file onto the macro and run one input vector
/// through it. Without `--input`, a random ReLU-like input is drawn.
fn map(cfg: &Config, opts: &RunOptions, rep: &mut Report) -> Result<(), CliError> {
    let mc = &cfg.macro_cfg;
    let path = opts
        .matrix
        .as_ref()
        .ok_or_else(|| CliError::Usage("map requires --matrix".into()))?;
    let m = parse_matrix(&read_file(path)?)?;
    let x = match &opts.input {
        Some(p) => parse_activations(&read_file(p)?)?,
        None => relu_acts(m.len(), mc.act_scale, &mut stream(mc.noise.seed, WORKLOAD_STREAM)),
    };
    let mapping = map_matrix(&m, opts.streaming)?;
    let mut chip = Macro::new(mc.clone())?;
    let out = chip.run_mapped(&mapping, &m, &x, &mut stream(mc.noise.seed, 0))?;
    let mut t = Table::new("map", &["column", "ideal", "output", "error", "clipped_tiles"]);
    let mut errs = Vec::new();
    for (c, &v) in out.outputs.iter().enumerate() {
        let col: Vec<i32> = m.iter().map(|r| r[c]).collect();
        let ideal = dot(&x, &col);
        errs.push((v - ideal) as f64);
        t.push(vec![
            c.to_string(),
            ideal.to_string(),
            v.to_string(),
            (v - ideal).to_string(),
            out.clipped[c].to_string(),
        ]);
    }
    let (rms, max) = rms_max(&errs);
    rep.metric("rows", mapping.rows);
    rep.metric("cols", mapping.cols);
    rep.metric("row_tiles", mapping.row_tiles);
    rep.metric("col_blocks", mapping.col_blocks);
    rep.metric("invocations", mapping.invocations());
    rep.metric("rms_error", rms);
    rep.metric("max_abs_error", max);
    rep.metric("clipped_tiles", out.clipped.iter().sum::<u32>());
    rep.tables.push(t);
    Ok(())
}

fn fom(cfg: &Config, opts: &RunOptions, rep: &mut Report) -> Result<(), CliError> {
    let mc = &cfg.macro_cfg;
    let cycles = positive("cycles", opts.cycles.unwrap_or(64))?;
    let r = perf::perf_report(mc, &cfg.energy, cycles, opts.workers)?;
    let (embedded, sar) = perf::readout_vs_sar(mc, &cfg.energy);
    rep.metric("tops_per_watt", r.tops_per_watt);
    rep.metric("gops_per_kb", r.gops_per_kb);
    rep.metric("fom_4b", r.fom_4b);
    rep.metric("fom_8b", r.fom_8b);
    rep.metric("cycle_time_s", r.cycle_time);
    rep.metric("out_ratio", perf::out_ratio(mc.out_bits, mc.act_bits, mc.w_bits, mc.rows));
    rep.metric("readout_energy_j", embedded);
    rep.metric("sar_energy_j", sar);
    Ok(())
}
