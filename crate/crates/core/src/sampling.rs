//! Space-time sampling strategies and builders that guarantee a frame.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{CsvTable, Float17};
use crate::linalg;
use crate::netmodel::{is_observable, LtiNetwork, SamplingLocations, SpectralInfo};
use crate::rng;

/// Minimum distance of `(λ_m - λ_m')δ` from the lattice `2πjℤ`.
pub const STEP_LATTICE_TOL: f64 = 1e-9;

/// Safety factor applied to the strict bound `δ* < ln 2 / ‖A‖`.
pub const DELTA_STAR_FACTOR: f64 = 0.99;

/// A sampled pair: location `i` (0-based) read at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub i: usize,
    pub t: f64,
}

impl SampleLabel {
    pub fn new(i: usize, t: f64) -> Self {
        SampleLabel { i, t }
    }

    fn key(&self) -> (usize, u64) {
        // +0.0 and -0.0 are the same time
        (self.i, if self.t == 0.0 { 0 } else { self.t.to_bits() })
    }
}

/// An ordered set of (location, time) pairs. Insertion order is kept and
/// becomes the component order of the frame built from it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplingStrategy {
    entries: Vec<SampleLabel>,
}

impl SamplingStrategy {
    pub fn new(entries: Vec<SampleLabel>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.t.is_finite() {
                return Err(Error::Parameter(format!("sample time at location {} is not finite", e.i)));
            }
            if !seen.insert(e.key()) {
                return Err(Error::Parameter(format!("duplicate sample ({}, {})", e.i, e.t)));
            }
        }
        Ok(SamplingStrategy { entries })
    }

    pub fn entries(&self) -> &[SampleLabel] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Locations with at least one sample, ascending.
    pub fn omega(&self) -> Vec<usize> {
        let mut locs: Vec<usize> = self.entries.iter().map(|e| e.i).collect();
        locs.sort_unstable();
        locs.dedup();
        locs
    }

    /// Sorted sample times at location `i`.
    pub fn theta(&self, i: usize) -> Vec<f64> {
        let mut times: Vec<f64> = self.entries.iter().filter(|e| e.i == i).map(|e| e.t).collect();
        times.sort_by(f64::total_cmp);
        times
    }

    /// Times grouped by location.
    pub fn theta_map(&self) -> BTreeMap<usize, Vec<f64>> {
        let mut map: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(e.i).or_default().push(e.t);
        }
        for times in map.values_mut() {
            times.sort_by(f64::total_cmp);
        }
        map
    }

    /// Average number of samples per sampled location.
    pub fn theta_bar(&self) -> f64 {
        let locs = self.omega().len();
        if locs == 0 {
            0.0
        } else {
            self.entries.len() as f64 / locs as f64
        }
    }

    /// Distinct sample times, ascending.
    pub fn distinct_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.entries.iter().map(|e| e.t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Concatenation; fails on overlapping pairs.
    pub fn union(&self, other: &SamplingStrategy) -> Result<SamplingStrategy> {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        SamplingStrategy::new(entries)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out {
            i: usize,
            t: Float17,
        }
        let out: Vec<Out> = self.entries.iter().map(|e| Out { i: e.i, t: Float17(e.t) }).collect();
        Ok(serde_json::to_string_pretty(&out)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<SampleLabel> = serde_json::from_str(text)?;
        SamplingStrategy::new(entries)
    }

    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(["location", "time"]);
        for e in &self.entries {
            table.push_row(&[e.i.into(), e.t.into()]);
        }
        table.into_string()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("location,time") => {}
            other => return Err(Error::Parameter(format!("unexpected strategy CSV header {other:?}"))),
        }
        let mut entries = Vec::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Parameter(format!("malformed strategy CSV row {}: {line:?}", k + 2));
            let (i, t) = line.trim().split_once(',').ok_or_else(bad)?;
            entries.push(SampleLabel {
                i: i.parse().map_err(|_| bad())?,
                t: t.parse().map_err(|_| bad())?,
            });
        }
        SamplingStrategy::new(entries)
    }

    /// Checks that every location index is below `n`.
    pub fn check_dimension(&self, n: usize) -> Result<()> {
        match self.entries.iter().find(|e| e.i >= n) {
            Some(e) => Err(Error::Parameter(format!("location {} out of range for n = {n}", e.i))),
            None => Ok(()),
        }
    }
}

/// Times drawn i.i.d. uniform on `[0, τ]` at every location of Ω.
pub fn random_strategy(
    network: &LtiNetwork,
    omega: &SamplingLocations,
    samples_per_location: &[usize],
    tau: f64,
    seed: u64,
) -> Result<SamplingStrategy> {
    if omega.n() != network.n() {
        return Err(Error::Parameter("location set dimension does not match the network".into()));
    }
    if samples_per_location.len() != omega.len() {
        return Err(Error::Parameter(format!(
            "{} sample counts for {} locations",
            samples_per_location.len(),
            omega.len()
        )));
    }
    if samples_per_location.contains(&0) {
        return Err(Error::Parameter("every location needs at least one sample".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Parameter(format!("time horizon must be positive, got {tau}")));
    }
    let mut rng = rng::seeded(seed);
    let mut entries = Vec::with_capacity(samples_per_location.iter().sum());
    for (&i, &m) in omega.omega().iter().zip(samples_per_location) {
        let mut used: HashSet<u64> = HashSet::with_capacity(m);
        while used.len() < m {
            let t: f64 = rng.random_range(0.0..=tau);
            if used.insert(t.to_bits()) {
                entries.push(SampleLabel::new(i, t));
            }
        }
    }
    SamplingStrategy::new(entries)
}

/// Rejects `δ` when some `(λ_m - λ_m')δ` lies within [`STEP_LATTICE_TOL`] of `2πjℤ`.
pub fn check_step_size(spectral: &SpectralInfo, delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {delta}")));
    }
    let values: Vec<Complex64> = spectral.distinct_eigenvalues().collect();
    for (m, &a) in values.iter().enumerate() {
        for &b in &values[m + 1..] {
            let z = (a - b) * delta;
            let k = (z.im / (2.0 * PI)).round();
            let distance = z.re.hypot(z.im - 2.0 * PI * k);
            if distance < STEP_LATTICE_TOL {
                return Err(Error::StepSize {
                    delta,
                    first: format!("{a}"),
                    second: format!("{b}"),
                    distance,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyWarning {
    /// Fewer samples than the minimal-polynomial degree at a location.
    ShortHorizon { location: usize, samples: usize, required: usize },
}

#[derive(Debug, Clone)]
pub struct PeriodicStrategy {
    pub strategy: SamplingStrategy,
    pub warnings: Vec<StrategyWarning>,
}

/// `Θ_i = {0, δ, ..., (M_i - 1)δ}` at every location of Ω.
pub fn periodic_strategy(
    network: &LtiNetwork,
    omega: &SamplingLocations,
    horizon_per_location: &[usize],
    delta: f64,
) -> Result<PeriodicStrategy> {
    if omega.n() != network.n() {
        return Err(Error::Parameter("location set dimension does not match the network".into()));
    }
    if horizon_per_location.len() != omega.len() {
        return Err(Error::Parameter(format!(
            "{} horizons for {} locations",
            horizon_per_location.len(),
            omega.len()
        )));
    }
    if horizon_per_location.contains(&0) {
        return Err(Error::Parameter("every location needs at least one sample".into()));
    }
    let spectral = network.spectral()?;
    check_step_size(spectral, delta)?;
    let required = spectral.minpoly_degree;
    let mut warnings = Vec::new();
    let mut entries = Vec::new();
    for (&i, &m) in omega.omega().iter().zip(horizon_per_location) {
        if m < required {
            warnings.push(StrategyWarning::ShortHorizon { location: i, samples: m, required });
        }
        entries.extend((0..m).map(|k| SampleLabel::new(i, k as f64 * delta)));
    }
    Ok(PeriodicStrategy { strategy: SamplingStrategy::new(entries)?, warnings })
}

/// Window length `δ* = 0.99 ln 2 / ‖A‖` for full-state sampling.
pub fn delta_star(network: &LtiNetwork) -> Result<f64> {
    let norm = network.spectral()?.norm2;
    if norm == 0.0 {
        return Err(Error::Precondition("full-state window undefined for A = 0".into()));
    }
    Ok(DELTA_STAR_FACTOR * LN_2 / norm)
}

/// One sample per location, each time uniform on `[t*, t* + δ*)`.
pub fn full_state_strategy(network: &LtiNetwork, t_star: f64, seed: u64) -> Result<SamplingStrategy> {
    let width = delta_star(network)?;
    full_state_window(network.n(), t_star, width, &mut rng::seeded(seed))
}

pub(crate) fn full_state_window<R: Rng>(n: usize, start: f64, width: f64, rng: &mut R) -> Result<SamplingStrategy> {
    if !(start.is_finite() && width.is_finite() && width > 0.0) {
        return Err(Error::Parameter(format!("bad sampling window [{start}, {start}+{width})")));
    }
    let entries = (0..n)
        .map(|i| SampleLabel::new(i, start + width * rng.random::<f64>()))
        .collect();
    SamplingStrategy::new(entries)
}

/// Row `E(t) = [e^{λ_m t} t^k]` over clusters m and `k < p_m`.
pub fn time_design_row(spectral: &SpectralInfo, t: f64) -> Vec<Complex64> {
    let mut row = Vec::with_capacity(spectral.design_width());
    for c in &spectral.clusters {
        let base = (c.value * t).exp();
        let mut power = 1.0;
        for _ in 0..c.minpoly_exponent {
            row.push(base * power);
            power *= t;
        }
    }
    row
}

/// Stacked rows `E(t)` for `t` in `times`.
pub fn time_design_matrix(spectral: &SpectralInfo, times: &[f64]) -> DMatrix<Complex64> {
    let width = spectral.design_width();
    let mut m = DMatrix::zeros(times.len(), width);
    for (r, &t) in times.iter().enumerate() {
        for (c, v) in time_design_row(spectral, t).into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationDesign {
    pub location: usize,
    pub samples: usize,
    pub full_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeDesignReport {
    pub minpoly_degree: usize,
    pub locations: Vec<LocationDesign>,
    pub observable: bool,
    /// Every location has enough samples with a full-column-rank design and
    /// the sampled locations make the network observable.
    pub sufficient: bool,
}

pub fn check_time_design(network: &LtiNetwork, strategy: &SamplingStrategy, rank_tol: f64) -> Result<TimeDesignReport> {
    strategy.check_dimension(network.n())?;
    let spectral = network.spectral()?;
    let width = spectral.design_width();
    let mut locations = Vec::new();
    for (location, times) in strategy.theta_map() {
        let e = time_design_matrix(spectral, &times);
        let full_rank = times.len() >= width && linalg::complex_rank(&e, rank_tol) == width;
        locations.push(LocationDesign { location, samples: times.len(), full_rank });
    }
    let omega = SamplingLocations::new(strategy.omega(), network.n())?;
    let observable = is_observable(network.state_matrix(), &omega, rank_tol);
    let sufficient = observable && locations.iter().all(|l| l.full_rank);
    Ok(TimeDesignReport { minpoly_degree: spectral.minpoly_degree, locations, observable, sufficient })
}
