//! Experiment orchestration: a JSON config selects a network, a sampling
//! strategy and one study; the run writes plot-ready CSV files and a
//! `summary.json` that embeds the resolved config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimation::{dwell_bound_rho_d, measure_rho_d, measure_rho_e, shift_frame, shifted_rho_e};
use crate::export::CsvTable;
use crate::frame::{build_frame, ObservabilityFrame, DEFAULT_FRAME_TOL};
use crate::limits::limit_report;
use crate::netmodel::{generate_geometric_network, LtiNetwork, SamplingLocations};
use crate::rng::{self, RNG_ALGORITHM};
use crate::sampling::{
    delta_star, full_state_strategy, full_state_window, periodic_strategy, random_strategy, SamplingStrategy,
};
use crate::sparsify::{
    default_draw_count, greedy_sparsify, kappa, partition_trial, randomized_sparsify, Measure,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Build,
    SparsifyRandom,
    PartitionHist,
    Compare,
    Sequential,
    DwellCurve,
    Limits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Geometric {
        n: usize,
        a: f64,
        b: f64,
        d: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Row-major state matrix.
    Inline { a: Vec<Vec<f64>> },
    /// Network JSON as written by `generate-network`.
    File { path: PathBuf },
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::Geometric { n: 20, a: 1.0, b: 0.5, d: 0.3, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    /// `samples` uniform times on `[0, tau]` per location; all locations when
    /// `locations` is absent.
    Random {
        #[serde(default)]
        locations: Option<Vec<usize>>,
        samples: usize,
        tau: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Periodic {
        #[serde(default)]
        locations: Option<Vec<usize>>,
        horizon: usize,
        delta: f64,
    },
    FullState {
        #[serde(default)]
        t_star: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Concatenation of full-state windows; `window` defaults to `δ*`.
    Sequential {
        subframes: usize,
        #[serde(default)]
        window: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Strategy CSV (`location,time`) or JSON.
    File { path: PathBuf },
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec::Random { locations: None, samples: 24, tau: 0.12, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    /// Draw count for randomized sparsification; `ceil(4 n ln n / ε²)` if absent.
    pub q: Option<usize>,
    pub epsilon: f64,
    pub measure: Measure,
    /// Minimum keep ratio for greedy elimination.
    pub keep_ratio: f64,
    /// Maximum relative loss for greedy elimination; unlimited if absent.
    pub max_rel_loss: Option<f64>,
    pub trials: usize,
    pub bins: usize,
    /// Draw counts swept by `compare`; log-spaced default if absent.
    pub q_values: Option<Vec<usize>>,
    /// Randomized runs per draw count in `compare` (best one kept).
    pub runs_per_q: usize,
    pub dwell_min: f64,
    pub dwell_max: f64,
    pub dwell_steps: usize,
    /// Lattice step for the Gramian limit.
    pub lattice_delta: Option<f64>,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            q: None,
            epsilon: 0.5,
            measure: Measure::D,
            keep_ratio: 0.1,
            max_rel_loss: None,
            trials: 10_000,
            bins: 50,
            q_values: None,
            runs_per_q: 25,
            dwell_min: 0.0,
            dwell_max: 0.5,
            dwell_steps: 51,
            lattice_delta: None,
        }
    }
}

fn default_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub strategy: StrategySpec,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: MethodParams,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            network: NetworkSpec::default(),
            strategy: StrategySpec::default(),
            sigma: default_sigma(),
            seed: 0,
            params: MethodParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fills every unset sub-seed from the master seed, so the config
    /// written to the summary replays the run on its own.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if let NetworkSpec::Geometric { seed, .. } = &mut c.network {
            seed.get_or_insert(derive_seed(self.seed, 0));
        }
        match &mut c.strategy {
            StrategySpec::Random { seed, .. }
            | StrategySpec::FullState { seed, .. }
            | StrategySpec::Sequential { seed, .. } => {
                seed.get_or_insert(derive_seed(self.seed, 1));
            }
            StrategySpec::Periodic { .. } | StrategySpec::File { .. } => {}
        }
        c
    }
}

/// Independent sub-seed number `k` of a master seed.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    rng::stream(master, 1 << 32 | k).next_u64()
}

pub fn load_network(spec: &NetworkSpec, fallback_seed: u64) -> Result<LtiNetwork> {
    match spec {
        NetworkSpec::Geometric { n, a, b, d, seed } => {
            generate_geometric_network(*n, *a, *b, *d, seed.unwrap_or(fallback_seed))
        }
        NetworkSpec::Inline { a } => {
            let n = a.len();
            if a.iter().any(|row| row.len() != n) {
                return Err(Error::Parameter("inline state matrix must be square".into()));
            }
            LtiNetwork::new(DMatrix::from_row_iterator(n, n, a.iter().flatten().copied()))
        }
        NetworkSpec::File { path } => LtiNetwork::from_json(&fs::read_to_string(path)?),
    }
}

pub fn read_strategy(path: &Path) -> Result<SamplingStrategy> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        SamplingStrategy::from_json(&text)
    } else {
        SamplingStrategy::from_csv(&text)
    }
}

fn locations(network: &LtiNetwork, omega: &Option<Vec<usize>>) -> Result<SamplingLocations> {
    match omega {
        Some(o) => SamplingLocations::new(o.clone(), network.n()),
        None => Ok(SamplingLocations::all(network.n())),
    }
}

/// Builds the strategy and its frame. Sequential specs yield the union frame.
pub fn build_strategy(network: &LtiNetwork, spec: &StrategySpec, fallback_seed: u64) -> Result<SamplingStrategy> {
    match spec {
        StrategySpec::Random { locations: omega, samples, tau, seed } => {
            let locs = locations(network, omega)?;
            random_strategy(network, &locs, &vec![*samples; locs.len()], *tau, seed.unwrap_or(fallback_seed))
        }
        StrategySpec::Periodic { locations: omega, horizon, delta } => {
            let locs = locations(network, omega)?;
            Ok(periodic_strategy(network, &locs, &vec![*horizon; locs.len()], *delta)?.strategy)
        }
        StrategySpec::FullState { t_star, seed } => {
            full_state_strategy(network, *t_star, seed.unwrap_or(fallback_seed))
        }
        StrategySpec::Sequential { subframes, window, seed } => {
            let window = match window {
                Some(w) => *w,
                None => delta_star(network)?,
            };
            let parts = sequential_strategies(network, *subframes, window, seed.unwrap_or(fallback_seed))?;
            parts.iter().skip(1).try_fold(parts[0].clone(), |acc, s| acc.union(s))
        }
        StrategySpec::File { path } => {
            let s = read_strategy(path)?;
            s.check_dimension(network.n())?;
            Ok(s)
        }
    }
}

/// Full-state strategies on the consecutive windows `[jw, (j+1)w)`; window
/// `j` draws from RNG stream `j`, so `N = 1` reproduces
/// [`full_state_strategy`] at `t* = 0`.
pub fn sequential_strategies(
    network: &LtiNetwork,
    subframes: usize,
    window: f64,
    seed: u64,
) -> Result<Vec<SamplingStrategy>> {
    if subframes == 0 {
        return Err(Error::Parameter("need at least one subframe".into()));
    }
    (0..subframes)
        .map(|j| full_state_window(network.n(), j as f64 * window, window, &mut rng::stream(seed, j as u64)))
        .collect()
}

/// Union of `N` full-state subframes.
pub fn sequential_frames(network: &LtiNetwork, subframes: usize, window: f64, seed: u64) -> Result<ObservabilityFrame> {
    let parts = sequential_strategies(network, subframes, window, seed)?;
    let union = parts.iter().skip(1).try_fold(parts[0].clone(), |acc, s| acc.union(s))?;
    build_frame(network, &union)
}

/// Files written by a run, in write order, and the summary document.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs one experiment into `out_dir`. Infeasible configurations still
/// produce a `summary.json` with the error before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let resolved = config.resolved();
    let mut writer = Writer { dir: out_dir, files: Vec::new() };
    let outcome = run_inner(&resolved, &mut writer);
    let (status, results, error) = match &outcome {
        Ok(v) => ("ok", v.clone(), Value::Null),
        Err(e) if e.is_infeasible() => ("infeasible", Value::Null, Value::String(e.to_string())),
        Err(e) => ("error", Value::Null, Value::String(e.to_string())),
    };
    let summary = json!({
        "config": serde_json::to_value(&resolved)?,
        "rng": RNG_ALGORITHM,
        "status": status,
        "error": error,
        "results": results,
    });
    writer.write("summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    outcome.map(|_| RunOutput { files: writer.files, summary })
}

fn run_inner(config: &ExperimentConfig, out: &mut Writer) -> Result<Value> {
    let network = load_network(&config.network, derive_seed(config.seed, 0))?;
    let strategy = build_strategy(&network, &config.strategy, derive_seed(config.seed, 1))?;
    out.write("network.json", &network.to_json()?)?;
    out.write("strategy.csv", &strategy.to_csv())?;
    let frame = build_frame(&network, &strategy)?;
    let check = frame.is_frame(DEFAULT_FRAME_TOL);
    let base = json!({
        "n": network.n(),
        "components": frame.len(),
        "locations": strategy.omega().len(),
        "theta_bar": strategy.theta_bar(),
        "is_frame": check.is_frame,
        "lambda_min": check.alpha,
        "lambda_max": check.beta,
    });
    if config.experiment == ExperimentKind::Build {
        out.write("frame.csv", &frame.to_csv())?;
        let measures = if check.is_frame {
            json!({ "rho_d": measure_rho_d(&frame, config.sigma)?, "rho_e": measure_rho_e(&frame)? })
        } else {
            Value::Null
        };
        return Ok(json!({ "frame": base, "measures": measures }));
    }
    if config.experiment == ExperimentKind::Limits {
        let report = limit_report(&network, &strategy, config.sigma, config.params.lattice_delta)?;
        return Ok(json!({ "frame": base, "limits": report }));
    }
    if !check.is_frame {
        return Err(Error::NotAFrame { lambda_min: check.alpha, lambda_max: check.beta });
    }
    let rho_d = measure_rho_d(&frame, config.sigma)?;
    let rho_e = measure_rho_e(&frame)?;
    let base = json!({ "frame": base, "rho_d": rho_d, "rho_e": rho_e });
    let study = match config.experiment {
        ExperimentKind::SparsifyRandom => sparsify_random(config, &frame, out)?,
        ExperimentKind::PartitionHist => partition_hist(config, &frame, out)?,
        ExperimentKind::Compare => compare(config, &frame, out)?,
        ExperimentKind::Sequential => sequential(config, &network, out)?,
        ExperimentKind::DwellCurve => dwell_curve(config, &frame, out)?,
        ExperimentKind::Build | ExperimentKind::Limits => unreachable!(),
    };
    Ok(json!({ "base": base, "study": study }))
}

fn sparsify_random(config: &ExperimentConfig, frame: &ObservabilityFrame, out: &mut Writer) -> Result<Value> {
    let p = &config.params;
    let q = p.q.unwrap_or_else(|| default_draw_count(frame.n(), p.epsilon));
    let seed = derive_seed(config.seed, 2);
    let run = randomized_sparsify(frame, q, p.epsilon, seed)?;
    out.write("sparsified_strategy.csv", &run.result.kept_strategy()?.to_csv())?;
    let rho_d = if run.result.is_frame { Some(measure_rho_d(&run.result.frame, config.sigma)?) } else { None };
    Ok(json!({
        "q": q,
        "epsilon": p.epsilon,
        "seed": seed,
        "w_max": run.w_max,
        "excluded": run.excluded.len(),
        "rho_d": rho_d,
        "result": run.result.summary(),
    }))
}

fn partition_hist(config: &ExperimentConfig, frame: &ObservabilityFrame, out: &mut Writer) -> Result<Value> {
    let p = &config.params;
    if p.trials == 0 || p.bins == 0 {
        return Err(Error::Parameter("trials and bins must be positive".into()));
    }
    let scores = frame.leverage_scores()?;
    let r_star = scores.iter().copied().fold(0.0, f64::max);
    let kappa = kappa(r_star);
    let seed = derive_seed(config.seed, 3);
    let started = Instant::now();
    let trials: Vec<_> = (0..p.trials)
        .into_par_iter()
        .map(|k| partition_trial(frame, &mut rng::stream(seed, k as u64)))
        .collect();
    println!("partition_hist: {} trials in {:.2?}", p.trials, started.elapsed());

    let mut table = CsvTable::new(["trial", "both_frames", "max_loss", "min_loss"]);
    for (k, t) in trials.iter().enumerate() {
        let (hi, lo) = (t.max_loss().unwrap_or(f64::NAN), t.min_loss().unwrap_or(f64::NAN));
        table.push_row(&[k.into(), usize::from(t.both_frames()).into(), hi.into(), lo.into()]);
    }
    out.write("partition_trials.csv", table.as_str())?;

    let mut max_losses: Vec<f64> = trials.iter().filter_map(|t| t.max_loss()).collect();
    let min_losses: Vec<f64> = trials.iter().filter_map(|t| t.min_loss()).collect();
    max_losses.sort_by(f64::total_cmp);
    let both = max_losses.len();
    let upper = max_losses.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let width = upper / p.bins as f64;
    let bin_of = |v: f64| ((v.max(0.0) / width) as usize).min(p.bins - 1);
    let (mut count_max, mut count_min) = (vec![0usize; p.bins], vec![0usize; p.bins]);
    max_losses.iter().for_each(|&v| count_max[bin_of(v)] += 1);
    min_losses.iter().for_each(|&v| count_min[bin_of(v)] += 1);
    let mut hist = CsvTable::new(["bin_lo", "bin_hi", "count_max_loss", "count_min_loss"]);
    for b in 0..p.bins {
        hist.push_row(&[(b as f64 * width).into(), ((b + 1) as f64 * width).into(), count_max[b].into(), count_min[b].into()]);
    }
    out.write("partition_hist.csv", hist.as_str())?;

    let median = (both > 0).then(|| max_losses[both / 2]);
    let within_kappa = kappa.map(|k| max_losses.iter().filter(|&&v| v <= k).count() as f64 / both.max(1) as f64);
    Ok(json!({
        "trials": p.trials,
        "seed": seed,
        "r_star": r_star,
        "kappa": kappa,
        "bound_applicable": kappa.is_some(),
        "fraction_both_frames": both as f64 / p.trials as f64,
        "median_max_loss": median,
        "fraction_max_loss_within_kappa": within_kappa,
    }))
}

/// Log-spaced draw counts between `2 n ln n` and `4 n² ln n`.
fn default_q_values(n: usize) -> Vec<usize> {
    let nl = n as f64 * (n as f64).ln();
    let (lo, hi) = ((2.0 * nl).ln(), (4.0 * n as f64 * nl).ln());
    let mut qs: Vec<usize> = (0..12).map(|k| (lo + (hi - lo) * k as f64 / 11.0).exp().ceil() as usize).collect();
    qs.dedup();
    qs
}

fn compare(config: &ExperimentConfig, frame: &ObservabilityFrame, out: &mut Writer) -> Result<Value> {
    let p = &config.params;
    let n = frame.n();
    let q_values = p.q_values.clone().unwrap_or_else(|| default_q_values(n));
    let runs = p.runs_per_q.max(1);
    let eps_lo = 1.0 / (n as f64).sqrt();
    let seed = derive_seed(config.seed, 4);

    let started = Instant::now();
    let mut randomized = Vec::new();
    for (qi, &q) in q_values.iter().enumerate() {
        let best = (0..runs)
            .into_par_iter()
            .map(|r| {
                let eps = eps_lo + (1.0 - eps_lo) * (r + 1) as f64 / runs as f64;
                let run_seed = rng::stream(seed, (qi * runs + r) as u64).next_u64();
                let run = randomized_sparsify(frame, q, eps, run_seed)?;
                let rho = if run.result.is_frame { Some(measure_rho_d(&run.result.frame, config.sigma)?) } else { None };
                Ok(rho.map(|rho| (rho, run.result.kept.len())))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((rho, kept)) = best {
            randomized.push((q, kept, rho));
        }
    }
    let randomized_time = started.elapsed();

    let started = Instant::now();
    let greedy = greedy_sparsify(frame, Measure::D, config.sigma, f64::MAX, 1.0 / frame.len() as f64)?;
    let greedy_time = started.elapsed();
    println!("compare: randomized {randomized_time:.2?}, greedy {greedy_time:.2?}");

    // greedy value at every kept size along the elimination path
    let total = frame.len();
    let mut greedy_curve = vec![(total, greedy.rho_d_initial)];
    greedy_curve.extend(greedy.trace.iter().map(|s| (total - s.step, s.rho_d)));

    let mut table = CsvTable::new(["method", "parameter", "kept", "rho_d"]);
    for &(q, kept, rho) in &randomized {
        table.push_row(&["randomized".into(), q.into(), kept.into(), rho.into()]);
    }
    for &(kept, rho) in &greedy_curve {
        table.push_row(&["greedy".into(), (kept as f64 / total as f64).into(), kept.into(), rho.into()]);
    }
    out.write("compare.csv", table.as_str())?;

    let mut max_gap: Option<f64> = None;
    for &(_, kept, rho) in &randomized {
        if let Some(&(_, g)) = greedy_curve.iter().find(|(k, _)| *k == kept) {
            let gap = (rho - g).abs() / g;
            max_gap = Some(max_gap.map_or(gap, |m: f64| m.max(gap)));
        }
    }
    Ok(json!({
        "seed": seed,
        "q_values": q_values,
        "runs_per_q": runs,
        "randomized_points": randomized.len(),
        "greedy_steps": greedy.trace.len(),
        "greedy_status": greedy.status,
        "max_relative_gap_at_matched_size": max_gap,
    }))
}

fn sequential(config: &ExperimentConfig, network: &LtiNetwork, out: &mut Writer) -> Result<Value> {
    let StrategySpec::Sequential { subframes, window, seed } = &config.strategy else {
        return Err(Error::Parameter("sequential experiment needs a sequential strategy".into()));
    };
    let star = delta_star(network)?;
    let window = window.unwrap_or(star);
    if window > star {
        println!("sequential: window {window} exceeds the full-state window {star}");
    }
    let parts = sequential_strategies(network, *subframes, window, seed.unwrap_or(0))?;
    let mut table = CsvTable::new(["subframe", "components", "is_frame", "rho_d", "rho_e"]);
    let mut union: Option<ObservabilityFrame> = None;
    let mut best_part = f64::INFINITY;
    for (j, s) in parts.iter().enumerate() {
        let f = build_frame(network, s)?;
        let ok = f.is_frame(DEFAULT_FRAME_TOL).is_frame;
        let (d, e) = if ok { (measure_rho_d(&f, config.sigma)?, measure_rho_e(&f)?) } else { (f64::NAN, f64::NAN) };
        if ok {
            best_part = best_part.min(d);
        }
        table.push_row(&[j.into(), f.len().into(), usize::from(ok).into(), d.into(), e.into()]);
        union = Some(match union {
            None => f,
            Some(u) => u.union(&f)?,
        });
    }
    out.write("subframes.csv", table.as_str())?;
    let union = union.expect("at least one subframe");
    let ok = union.is_frame(DEFAULT_FRAME_TOL).is_frame;
    Ok(json!({
        "subframes": subframes,
        "window": window,
        "delta_star": star,
        "components": union.len(),
        "is_frame": ok,
        "rho_d": if ok { Some(measure_rho_d(&union, config.sigma)?) } else { None },
        "rho_e": if ok { Some(measure_rho_e(&union)?) } else { None },
        "best_subframe_rho_d": best_part.is_finite().then_some(best_part),
    }))
}

fn dwell_curve(config: &ExperimentConfig, frame: &ObservabilityFrame, out: &mut Writer) -> Result<Value> {
    let p = &config.params;
    if p.dwell_steps < 2 || !(p.dwell_max > p.dwell_min) {
        return Err(Error::Parameter("dwell grid needs two or more steps on a non-empty interval".into()));
    }
    let mut table = CsvTable::new(["delta", "rho_d", "bound_rho_d", "rho_e", "predicted_rho_e"]);
    let mut violations = 0usize;
    let mut max_identity_error: f64 = 0.0;
    for k in 0..p.dwell_steps {
        let delta = p.dwell_min + (p.dwell_max - p.dwell_min) * k as f64 / (p.dwell_steps - 1) as f64;
        let shifted = shift_frame(frame, delta)?;
        let rho_d = measure_rho_d(&shifted, config.sigma)?;
        let rho_e = measure_rho_e(&shifted)?;
        let bound = dwell_bound_rho_d(frame, delta, config.sigma)?;
        let predicted = shifted_rho_e(frame, delta)?;
        if rho_d > bound * (1.0 + 1e-9) {
            violations += 1;
        }
        max_identity_error = max_identity_error.max((rho_e - predicted).abs());
        table.push_row(&[delta.into(), rho_d.into(), bound.into(), rho_e.into(), predicted.into()]);
    }
    out.write("dwell_curve.csv", table.as_str())?;
    Ok(json!({
        "grid": [p.dwell_min, p.dwell_max, p.dwell_steps],
        "bound_violations": violations,
        "max_rho_e_identity_error": max_identity_error,
    }))
}
