//! Frame sparsification with estimation-loss bounds:
//!
//! - randomized sampling by leverage scores, with replacement;
//! - random halving, whose loss is controlled by the largest leverage score
//!   (Kadison-Singer paving);
//! - greedy elimination with Sherman-Morrison updates of `S⁻¹`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{rho_d_from_spectrum, rho_e_from_spectrum};
use crate::export::CsvTable;
use crate::frame::{ObservabilityFrame, DEFAULT_FRAME_TOL};
use crate::linalg;
use crate::rng;
use crate::sampling::{SampleLabel, SamplingStrategy};

/// Guard on `1 - φᵀS⁻¹φ` below which a component is treated as irremovable.
pub const REMOVAL_TOL: f64 = 1e-8;

/// Largest leverage score for which the partition bound applies: `1.5 - √2`.
pub fn partition_score_limit() -> f64 {
    1.5 - std::f64::consts::SQRT_2
}

/// A sparsified frame together with its realized and guaranteed losses.
#[derive(Debug, Clone)]
pub struct SparsificationResult {
    /// Positions of the surviving components in the input frame, ascending.
    pub kept_indices: Vec<usize>,
    pub kept: Vec<SampleLabel>,
    pub frame: ObservabilityFrame,
    pub is_frame: bool,
    /// Per-component weights of the input frame (randomized method only).
    pub weights: Option<Vec<f64>>,
    /// `(ρ_d(Φ_s) - ρ_d(Φ)) / ρ_d(Φ)`, when `Φ_s` is a frame.
    pub realized_loss_d: Option<f64>,
    /// `ρ_e(Φ_s) - ρ_e(Φ)`, when `Φ_s` is a frame.
    pub realized_loss_e: Option<f64>,
    pub bound_d: Option<f64>,
    pub bound_e: Option<f64>,
    /// Average number of samples per surviving location.
    pub theta: f64,
}

impl SparsificationResult {
    fn assemble(original: &ObservabilityFrame, kept_indices: Vec<usize>) -> Result<Self> {
        let frame = original.subframe(&kept_indices)?;
        let kept: Vec<SampleLabel> = kept_indices.iter().map(|&k| original.labels()[k]).collect();
        let is_frame = !kept_indices.is_empty() && frame.is_frame(DEFAULT_FRAME_TOL).is_frame;
        let (realized_loss_d, realized_loss_e) = if is_frame {
            let base = original.eigenvalues().as_slice();
            let sub = frame.eigenvalues().as_slice();
            let d0 = rho_d_from_spectrum(base, 1.0);
            (
                Some((rho_d_from_spectrum(sub, 1.0) - d0) / d0),
                Some(rho_e_from_spectrum(sub) - rho_e_from_spectrum(base)),
            )
        } else {
            (None, None)
        };
        let mut locations: Vec<usize> = kept.iter().map(|l| l.i).collect();
        locations.sort_unstable();
        locations.dedup();
        let theta = if locations.is_empty() { 0.0 } else { kept.len() as f64 / locations.len() as f64 };
        Ok(SparsificationResult {
            kept_indices,
            kept,
            frame,
            is_frame,
            weights: None,
            realized_loss_d,
            realized_loss_e,
            bound_d: None,
            bound_e: None,
            theta,
        })
    }

    pub fn kept_strategy(&self) -> Result<SamplingStrategy> {
        SamplingStrategy::new(self.kept.clone())
    }

    pub fn summary(&self) -> SparsificationSummary {
        SparsificationSummary {
            kept: self.kept.len(),
            is_frame: self.is_frame,
            realized_loss_d: self.realized_loss_d,
            realized_loss_e: self.realized_loss_e,
            bound_d: self.bound_d,
            bound_e: self.bound_e,
            theta: self.theta,
        }
    }
}

/// Scalar view of a [`SparsificationResult`] for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsificationSummary {
    pub kept: usize,
    pub is_frame: bool,
    pub realized_loss_d: Option<f64>,
    pub realized_loss_e: Option<f64>,
    pub bound_d: Option<f64>,
    pub bound_e: Option<f64>,
    pub theta: f64,
}

/// Default number of draws `ceil(4 n ln n / ε²)`.
pub fn default_draw_count(n: usize, epsilon: f64) -> usize {
    (4.0 * n as f64 * (n as f64).ln() / (epsilon * epsilon)).ceil().max(1.0) as usize
}

#[derive(Debug, Clone)]
pub struct RandomizedSparsification {
    pub result: SparsificationResult,
    pub q: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Largest realized weight; majorizes χ almost surely.
    pub w_max: f64,
    /// Sampling distribution `π(φ) = r_φ / n`, in component order.
    pub probabilities: Vec<f64>,
    /// Components left out of the sampling support because `π(φ)` vanished.
    pub excluded: Vec<usize>,
}

/// Draws `q` components i.i.d. from `π(φ) = r_φ(S)/n`, keeps the distinct
/// ones and accumulates weights `1/(q π(φ))` per draw.
pub fn randomized_sparsify(
    frame: &ObservabilityFrame,
    q: usize,
    epsilon: f64,
    seed: u64,
) -> Result<RandomizedSparsification> {
    let n = frame.n();
    if q == 0 {
        return Err(Error::Parameter("need at least one draw".into()));
    }
    if !(epsilon > 1.0 / (n as f64).sqrt() && epsilon <= 1.0) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (1/sqrt(n), 1] = ({:.4}, 1], got {epsilon}",
            1.0 / (n as f64).sqrt()
        )));
    }
    let scores = frame.leverage_scores()?;
    let probabilities: Vec<f64> = scores.iter().map(|r| r / n as f64).collect();
    let floor = 1e-14 / frame.len() as f64;
    let excluded: Vec<usize> = (0..frame.len()).filter(|&k| probabilities[k] <= floor).collect();
    let support: Vec<f64> = probabilities.iter().map(|&p| if p <= floor { 0.0 } else { p }).collect();
    let dist = WeightedIndex::new(&support)
        .map_err(|e| Error::Numerical(format!("degenerate sampling distribution: {e}")))?;

    let mut rng = rng::seeded(seed);
    let mut weights = vec![0.0; frame.len()];
    let mut drawn = vec![false; frame.len()];
    for _ in 0..q {
        let k = dist.sample(&mut rng);
        weights[k] += 1.0 / (q as f64 * probabilities[k]);
        drawn[k] = true;
    }
    let kept: Vec<usize> = (0..frame.len()).filter(|&k| drawn[k]).collect();
    let w_max = weights.iter().copied().fold(0.0, f64::max);

    let mut result = SparsificationResult::assemble(frame, kept)?;
    let ratio = 4.0 * w_max / (1.0 - epsilon);
    result.bound_d = Some(-1.0 + ratio.sqrt());
    result.bound_e = Some(n as f64 * ratio.ln());
    result.weights = Some(weights);
    Ok(RandomizedSparsification { result, q, epsilon, seed, w_max, probabilities, excluded })
}

/// Smallest `γ > 0` with `Σ w(φ)(γ - w(φ)) φφᵀ ⪰ 0`, by bisection on `γ`
/// with an eigenvalue test. `weights` are aligned with the frame components.
pub fn chi_exact(frame: &ObservabilityFrame, weights: &[f64]) -> Result<f64> {
    if weights.len() != frame.len() {
        return Err(Error::Parameter("one weight per component required".into()));
    }
    let n = frame.n();
    let mut s_w = DMatrix::zeros(n, n);
    let mut s_w2 = DMatrix::zeros(n, n);
    for (k, &w) in weights.iter().enumerate().filter(|(_, &w)| w > 0.0) {
        let phi = frame.component(k);
        let outer = &phi * phi.transpose();
        s_w += &outer * w;
        s_w2 += outer * (w * w);
    }
    let w_max = weights.iter().copied().fold(0.0, f64::max);
    if w_max == 0.0 {
        return Ok(0.0);
    }
    let scale = linalg::spectral_norm(&s_w2).max(f64::MIN_POSITIVE);
    let feasible = |gamma: f64| {
        let m = &s_w * gamma - &s_w2;
        linalg::sym_eigenvalues_ascending(&m)[0] >= -1e-12 * scale
    };
    let (mut lo, mut hi) = (0.0, w_max);
    while hi - lo > 1e-13 * w_max {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `κ(r) = (1 - (√(2r)+1)²/2)^{-1/2} - 1`; `None` when `r ≥ 1.5 - √2`.
pub fn kappa(r: f64) -> Option<f64> {
    let gap = partition_gap(r)?;
    Some(gap.powf(-0.5) - 1.0)
}

/// Entropy loss bound for a random half: `-n log(1 - (√(2r)+1)²/2)`.
pub fn partition_entropy_bound(n: usize, r: f64) -> Option<f64> {
    Some(-(n as f64) * partition_gap(r)?.ln())
}

fn partition_gap(r: f64) -> Option<f64> {
    if !(r >= 0.0 && r < partition_score_limit()) {
        return None;
    }
    let root = (2.0 * r).sqrt() + 1.0;
    Some(1.0 - root * root / 2.0)
}

#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub first: SparsificationResult,
    pub second: SparsificationResult,
    /// Largest leverage score of the input frame.
    pub r_star: f64,
    /// `κ(r*)`, or `None` when the bound is inapplicable.
    pub kappa: Option<f64>,
    pub bound_e: Option<f64>,
}

impl PartitionOutcome {
    pub fn bound_applicable(&self) -> bool {
        self.kappa.is_some()
    }
}

/// Assigns each component to one of two halves by a fair coin.
/// Empty or rank-deficient halves are reported as non-frames, not re-drawn.
pub fn random_partition(frame: &ObservabilityFrame, seed: u64) -> Result<PartitionOutcome> {
    let scores = frame.leverage_scores()?;
    let r_star = scores.iter().copied().fold(0.0, f64::max);
    let mut rng = rng::seeded(seed);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for k in 0..frame.len() {
        if rng.random_bool(0.5) {
            first.push(k);
        } else {
            second.push(k);
        }
    }
    let kappa = kappa(r_star);
    let bound_e = partition_entropy_bound(frame.n(), r_star);
    let mut halves = [first, second].map(|idx| SparsificationResult::assemble(frame, idx));
    for h in halves.iter_mut().flatten() {
        h.bound_d = kappa;
        h.bound_e = bound_e;
    }
    let [first, second] = halves;
    Ok(PartitionOutcome { first: first?, second: second?, r_star, kappa, bound_e })
}

/// Relative `ρ_d` losses of the two halves of one random partition, without
/// materializing the sub-frames. `None` for a half that is not a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionTrial {
    pub losses: [Option<f64>; 2],
}

impl PartitionTrial {
    pub fn both_frames(&self) -> bool {
        self.losses.iter().all(Option::is_some)
    }

    pub fn max_loss(&self) -> Option<f64> {
        Some(self.losses[0]?.max(self.losses[1]?))
    }

    pub fn min_loss(&self) -> Option<f64> {
        Some(self.losses[0]?.min(self.losses[1]?))
    }
}

pub fn partition_trial<R: Rng>(frame: &ObservabilityFrame, rng: &mut R) -> PartitionTrial {
    let t = frame.analysis();
    let n = frame.n();
    let mut s1 = DMatrix::zeros(n, n);
    for k in 0..frame.len() {
        if rng.random_bool(0.5) {
            let row = t.row(k);
            s1.ger(1.0, &row.transpose(), &row.transpose(), 1.0);
        }
    }
    let s2 = frame.frame_matrix() - &s1;
    let base = rho_d_from_spectrum(frame.eigenvalues().as_slice(), 1.0);
    let loss = |s: &DMatrix<f64>| {
        let eig = linalg::sym_eigenvalues_ascending(s);
        let (lo, hi) = (eig[0], eig[n - 1]);
        (hi > 0.0 && lo > DEFAULT_FRAME_TOL * hi).then(|| (rho_d_from_spectrum(eig.as_slice(), 1.0) - base) / base)
    };
    PartitionTrial { losses: [loss(&s1), loss(&s2)] }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Standard deviation of the estimation error.
    D,
    /// Entropy of the estimation error.
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyStatus {
    /// The next removal would exceed the allowed relative loss.
    LossLimit,
    /// The next removal would drop below the minimum keep ratio.
    KeepRatioLimit,
    /// Every remaining component is needed to span the space.
    FrameCritical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationStep {
    pub step: usize,
    pub removed_index: usize,
    pub removed: SampleLabel,
    /// `ρ_d` after the removal, from the incremental update.
    pub rho_d: f64,
    /// `ρ_e` after the removal, from the incremental update.
    pub rho_e: f64,
}

impl EliminationStep {
    pub fn measure_value(&self, measure: Measure) -> f64 {
        match measure {
            Measure::D => self.rho_d,
            Measure::E => self.rho_e,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GreedySparsification {
    pub result: SparsificationResult,
    pub trace: Vec<EliminationStep>,
    pub status: GreedyStatus,
    pub measure: Measure,
    pub sigma: f64,
    pub rho_d_initial: f64,
    pub rho_e_initial: f64,
}

impl GreedySparsification {
    /// CSV `step,removed_location,removed_time,measure_value`.
    pub fn trace_csv(&self) -> String {
        let mut table = CsvTable::new(["step", "removed_location", "removed_time", "measure_value"]);
        for s in &self.trace {
            table.push_row(&[s.step.into(), s.removed.i.into(), s.removed.t.into(), s.measure_value(self.measure).into()]);
        }
        table.into_string()
    }
}

/// Relative change used as the stopping criterion. The entropy measure can be
/// negative, so its change is scaled by the magnitude of the initial value.
fn relative_loss(measure: Measure, initial: f64, current: f64) -> f64 {
    match measure {
        Measure::D => (current - initial) / initial,
        Measure::E if initial == 0.0 => current - initial,
        Measure::E => (current - initial) / initial.abs(),
    }
}

/// Removes, one at a time, the component whose removal increases the chosen
/// measure least, while the relative loss stays within `max_rel_loss` and at
/// least `min_keep_ratio` of the components remain.
pub fn greedy_sparsify(
    frame: &ObservabilityFrame,
    measure: Measure,
    sigma: f64,
    max_rel_loss: f64,
    min_keep_ratio: f64,
) -> Result<GreedySparsification> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("noise level must be positive, got {sigma}")));
    }
    if !(max_rel_loss > 0.0) {
        return Err(Error::Parameter(format!("maximum relative loss must be positive, got {max_rel_loss}")));
    }
    if !(min_keep_ratio > 0.0 && min_keep_ratio < 1.0) {
        return Err(Error::Parameter(format!("keep ratio must lie in (0,1), got {min_keep_ratio}")));
    }
    let mut s_inv = frame.frame_matrix_inverse()?;
    let eig = frame.eigenvalues().as_slice();
    let rho_d_initial = rho_d_from_spectrum(eig, sigma);
    let rho_e_initial = rho_e_from_spectrum(eig);
    let initial = match measure {
        Measure::D => rho_d_initial,
        Measure::E => rho_e_initial,
    };

    let total = frame.len();
    let components = frame.analysis().transpose();
    let mut alive = vec![true; total];
    let mut remaining = total;
    let mut rho_d_sq = rho_d_initial * rho_d_initial;
    let mut rho_e = rho_e_initial;
    let mut trace = Vec::new();

    let status = loop {
        if ((remaining - 1) as f64) < min_keep_ratio * total as f64 {
            break GreedyStatus::KeepRatioLimit;
        }
        let projected = &s_inv * &components;
        let mut best: Option<(usize, f64)> = None;
        for k in (0..total).filter(|&k| alive[k]) {
            let u = projected.column(k);
            let r = components.column(k).dot(&u);
            let denom = 1.0 - r;
            if denom <= REMOVAL_TOL {
                continue;
            }
            let score = match measure {
                Measure::D => u.norm_squared() / denom,
                Measure::E => r,
            };
            // strict comparison keeps the earliest component on ties
            if best.is_none_or(|(_, b)| score < b) {
                best = Some((k, score));
            }
        }
        let Some((k, _)) = best else {
            break GreedyStatus::FrameCritical;
        };
        let u: DVector<f64> = projected.column(k).into_owned();
        let r = components.column(k).dot(&u);
        let denom = 1.0 - r;
        let next_d_sq = rho_d_sq + sigma * sigma * u.norm_squared() / denom;
        let next_e = rho_e - denom.ln();
        let candidate = match measure {
            Measure::D => next_d_sq.sqrt(),
            Measure::E => next_e,
        };
        if relative_loss(measure, initial, candidate) > max_rel_loss {
            break GreedyStatus::LossLimit;
        }
        s_inv.ger(1.0 / denom, &u, &u, 1.0);
        alive[k] = false;
        remaining -= 1;
        rho_d_sq = next_d_sq;
        rho_e = next_e;
        trace.push(EliminationStep {
            step: trace.len() + 1,
            removed_index: k,
            removed: frame.labels()[k],
            rho_d: rho_d_sq.sqrt(),
            rho_e,
        });
    };

    let kept: Vec<usize> = (0..total).filter(|&k| alive[k]).collect();
    let result = SparsificationResult::assemble(frame, kept)?;
    Ok(GreedySparsification { result, trace, status, measure, sigma, rho_d_initial, rho_e_initial })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{measure_rho_d, measure_rho_e};
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

    fn random_frame(n: usize, m: usize, seed: u64) -> ObservabilityFrame {
        let mut rng = rng::seeded(seed);
        let vs: Vec<DVector<f64>> =
            (0..m).map(|_| DVector::from_fn(n, |_, _| rng.sample(StandardNormal))).collect();
        ObservabilityFrame::from_vectors(&vs).unwrap()
    }

    fn repeated_basis(n: usize, copies: usize, scale: f64) -> ObservabilityFrame {
        let mut vs = Vec::new();
        for _ in 0..copies {
            for i in 0..n {
                let mut e = DVector::zeros(n);
                e[i] = scale;
                vs.push(e);
            }
        }
        ObservabilityFrame::from_vectors(&vs).unwrap()
    }

    #[test]
    fn kappa_reference_value() {
        // hand evaluation: √0.063 = 0.250998008, (1.250998008)²/2 = 0.782498,
        // 0.217502^(-1/2) = 2.144215
        assert_relative_eq!(kappa(0.0315).unwrap(), 1.1442152504749, epsilon = 1e-10);
        assert!(kappa(partition_score_limit()).is_none());
        assert!(kappa(0.09).is_none());
        assert_relative_eq!(kappa(0.0).unwrap(), 2f64.sqrt() - 1.0, epsilon = 1e-12);
        assert_relative_eq!(partition_score_limit(), 0.0857864376, epsilon = 1e-9);
    }

    #[test]
    fn sampling_distribution_sums_to_one() {
        let f = random_frame(6, 40, 2);
        let out = randomized_sparsify(&f, 50, 0.5, 1).unwrap();
        assert_relative_eq!(out.probabilities.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(out.excluded.is_empty());
    }

    #[test]
    fn weights_are_sums_of_inverse_probabilities() {
        let f = random_frame(4, 30, 5);
        let q = 25;
        let out = randomized_sparsify(&f, q, 0.8, 3).unwrap();
        let w = out.result.weights.as_ref().unwrap();
        let mut total_draws = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            let unit = 1.0 / (q as f64 * out.probabilities[k]);
            let draws = wk / unit;
            assert_relative_eq!(draws, draws.round(), epsilon = 1e-9);
            total_draws += draws.round();
            assert_eq!(wk > 0.0, out.result.kept_indices.contains(&k));
        }
        assert_eq!(total_draws as usize, q);
        assert!(out.result.kept.len() <= q);
    }

    #[test]
    fn randomized_on_symmetric_frame() {
        let f = repeated_basis(5, 6, 1.0);
        let out = randomized_sparsify(&f, 200, 0.9, 11).unwrap();
        assert!(out.result.is_frame);
        let mut dirs: Vec<usize> = out.result.kept_indices.iter().map(|k| k % 5).collect();
        dirs.sort_unstable();
        dirs.dedup();
        assert_eq!(dirs.len(), 5);
    }

    #[test]
    fn randomized_rejects_bad_epsilon() {
        let f = random_frame(4, 20, 1);
        assert!(randomized_sparsify(&f, 10, 0.5, 0).is_err()); // 1/sqrt(4) = 0.5 is excluded
        assert!(randomized_sparsify(&f, 10, 1.2, 0).is_err());
        assert!(randomized_sparsify(&f, 0, 0.9, 0).is_err());
    }

    #[test]
    fn chi_is_majorized_by_max_weight() {
        let f = random_frame(4, 30, 8);
        let out = randomized_sparsify(&f, 40, 0.9, 2).unwrap();
        let w = out.result.weights.clone().unwrap();
        let chi = chi_exact(&f, &w).unwrap();
        assert!(chi <= out.w_max * (1.0 + 1e-12));
        // oracle: generalized eigenvalue λ_max(S_w⁻¹ Ŝ_w)
        let (mut s_w, mut s_w2) = (DMatrix::zeros(4, 4), DMatrix::zeros(4, 4));
        for (k, &wk) in w.iter().enumerate() {
            let phi = f.component(k);
            s_w += &phi * phi.transpose() * wk;
            s_w2 += &phi * phi.transpose() * (wk * wk);
        }
        let gen = s_w.try_inverse().unwrap() * s_w2;
        let lam = gen.complex_eigenvalues().iter().map(|z| z.re).fold(f64::MIN, f64::max);
        assert_relative_eq!(chi, lam, max_relative = 1e-9);
    }

    #[test]
    fn partition_halves_cover_frame() {
        let f = repeated_basis(4, 16, 0.5);
        let out = random_partition(&f, 7).unwrap();
        assert_eq!(out.first.kept.len() + out.second.kept.len(), f.len());
        assert_relative_eq!(out.r_star, 1.0 / 16.0, epsilon = 1e-12);
        assert_eq!(out.kappa, kappa(1.0 / 16.0));
        assert_eq!(out.first.bound_d, out.kappa);
    }

    #[test]
    fn partition_flags_inapplicable_bound() {
        let f = repeated_basis(3, 2, 1.0);
        let out = random_partition(&f, 1).unwrap();
        assert!(!out.bound_applicable());
        assert!(out.bound_e.is_none());
    }

    #[test]
    fn partition_of_redundant_frame_usually_splits_into_frames() {
        let f = repeated_basis(5, 20, 1.0);
        let mut ok = 0;
        for seed in 0..1000 {
            if partition_trial(&f, &mut rng::stream(3, seed)).both_frames() {
                ok += 1;
            }
        }
        assert!(ok > 990, "{ok}");
    }

    #[test]
    fn partition_trial_matches_materialized_halves() {
        let f = random_frame(5, 60, 4);
        // the same stream drives both paths
        let trial = partition_trial(&f, &mut rng::seeded(9));
        let full = random_partition(&f, 9).unwrap();
        assert_relative_eq!(trial.losses[0].unwrap(), full.first.realized_loss_d.unwrap(), max_relative = 1e-9);
        assert_relative_eq!(trial.losses[1].unwrap(), full.second.realized_loss_d.unwrap(), max_relative = 1e-9);
    }

    #[test]
    fn single_removal_matches_direct_inverse() {
        let f = random_frame(3, 6, 12);
        let out = greedy_sparsify(&f, Measure::E, 1.0, 1e9, 0.8).unwrap();
        assert_eq!(out.trace.len(), 1);
        let sub = &out.result.frame;
        let direct = sub.frame_matrix().clone().try_inverse().unwrap();
        // replay the update with the removed component
        let mut s_inv = f.frame_matrix_inverse().unwrap();
        let phi = f.component(out.trace[0].removed_index);
        let u = &s_inv * &phi;
        let denom = 1.0 - phi.dot(&u);
        s_inv += &u * u.transpose() / denom;
        assert!((&s_inv - &direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn incremental_measures_follow_update_formulas() {
        let f = random_frame(4, 20, 6);
        let sigma = 0.3;
        let out = greedy_sparsify(&f, Measure::D, sigma, 1e9, 0.01).unwrap();
        assert_eq!(out.status, GreedyStatus::FrameCritical);
        assert_eq!(out.result.kept.len(), 4);
        let mut alive: Vec<usize> = (0..f.len()).collect();
        for step in &out.trace {
            alive.retain(|&k| k != step.removed_index);
            let sub = f.subframe(&alive).unwrap();
            assert_relative_eq!(step.rho_d, measure_rho_d(&sub, sigma).unwrap(), max_relative = 1e-7);
            assert_relative_eq!(step.rho_e, measure_rho_e(&sub).unwrap(), max_relative = 1e-7);
        }
    }

    #[test]
    fn greedy_choice_minimizes_increase() {
        let f = random_frame(3, 10, 21);
        for measure in [Measure::D, Measure::E] {
            let out = greedy_sparsify(&f, measure, 1.0, 1e9, 0.85).unwrap();
            let chosen = out.trace[0].measure_value(measure);
            for k in 0..f.len() {
                let rest: Vec<usize> = (0..f.len()).filter(|&j| j != k).collect();
                let sub = f.subframe(&rest).unwrap();
                if !sub.is_frame(DEFAULT_FRAME_TOL).is_frame {
                    continue;
                }
                let value = match measure {
                    Measure::D => measure_rho_d(&sub, 1.0).unwrap(),
                    Measure::E => measure_rho_e(&sub).unwrap(),
                };
                assert!(chosen <= value + 1e-10);
            }
        }
    }

    #[test]
    fn greedy_respects_limits() {
        let f = random_frame(5, 50, 3);
        let out = greedy_sparsify(&f, Measure::D, 0.1, 0.2, 0.1).unwrap();
        assert_eq!(out.status, GreedyStatus::LossLimit);
        assert!(out.result.realized_loss_d.unwrap() <= 0.2 + 1e-9);

        let out = greedy_sparsify(&f, Measure::D, 0.1, 1e9, 0.5).unwrap();
        assert_eq!(out.status, GreedyStatus::KeepRatioLimit);
        assert_eq!(out.result.kept.len(), 25);
    }

    #[test]
    fn greedy_skips_irremovable_components() {
        // e_1 appears once and cannot be removed; e_2 is duplicated
        let vs = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ];
        let f = ObservabilityFrame::from_vectors(&vs).unwrap();
        let out = greedy_sparsify(&f, Measure::D, 1.0, 1e9, 0.01).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].removed_index, 1);
        assert_eq!(out.status, GreedyStatus::FrameCritical);
        assert!(out.result.is_frame);
    }

    #[test]
    fn trace_csv_header() {
        let f = random_frame(2, 5, 1);
        let out = greedy_sparsify(&f, Measure::E, 1.0, 1e9, 0.5).unwrap();
        let csv = out.trace_csv();
        assert!(csv.starts_with("step,removed_location,removed_time,measure_value\n"));
        assert_eq!(csv.lines().count(), out.trace.len() + 1);
    }
}
