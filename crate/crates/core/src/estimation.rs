//! Estimation measures computed from the frame spectrum, Monte-Carlo
//! validation of the least-squares estimator, and dwell-time shifts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::{ObservabilityFrame, DEFAULT_FRAME_TOL};
use crate::linalg;
use crate::netmodel::matrix_exponential;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    /// Standard deviation of the least-squares error, `σ (Σ 1/λ_i)^{1/2}`.
    pub rho_d: f64,
    /// Spectral part of the error entropy, `-Σ log λ_i`.
    pub rho_e: f64,
    pub sigma: f64,
    pub eigenvalues: Vec<f64>,
}

fn frame_eigenvalues(frame: &ObservabilityFrame) -> Result<&DVector<f64>> {
    let check = frame.is_frame(DEFAULT_FRAME_TOL);
    if !check.is_frame {
        return Err(Error::NotAFrame { lambda_min: check.alpha, lambda_max: check.beta });
    }
    Ok(frame.eigenvalues())
}

pub fn rho_d_from_spectrum(eigenvalues: &[f64], sigma: f64) -> f64 {
    sigma * eigenvalues.iter().map(|l| 1.0 / l).sum::<f64>().sqrt()
}

pub fn rho_e_from_spectrum(eigenvalues: &[f64]) -> f64 {
    -eigenvalues.iter().map(|l| l.ln()).sum::<f64>()
}

pub fn measure_rho_d(frame: &ObservabilityFrame, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("noise level must be positive, got {sigma}")));
    }
    Ok(rho_d_from_spectrum(frame_eigenvalues(frame)?.as_slice(), sigma))
}

pub fn measure_rho_e(frame: &ObservabilityFrame) -> Result<f64> {
    Ok(rho_e_from_spectrum(frame_eigenvalues(frame)?.as_slice()))
}

pub fn estimation_report(frame: &ObservabilityFrame, sigma: f64) -> Result<EstimationReport> {
    Ok(EstimationReport {
        rho_d: measure_rho_d(frame, sigma)?,
        rho_e: measure_rho_e(frame)?,
        sigma,
        eigenvalues: frame.eigenvalues().iter().copied().collect(),
    })
}

/// Differential entropy of the Gaussian estimation error.
pub fn differential_entropy(rho_e: f64, n: usize, sigma: f64) -> f64 {
    0.5 * rho_e + 0.5 * n as f64 * (1.0 + (2.0 * std::f64::consts::PI * sigma * sigma).ln())
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Mean of `‖x̂_0 - x_0‖²` over trials.
    pub mean_error_norm_sq: f64,
    pub rho_d_theoretical: f64,
    /// `‖Σ̂ - σ² S⁻¹‖_F` for the sample error covariance `Σ̂`.
    pub covariance_frobenius_error: f64,
    #[serde(skip)]
    pub sample_mean_estimate: DVector<f64>,
    #[serde(skip)]
    pub sample_error_covariance: DMatrix<f64>,
    #[serde(skip)]
    pub estimates: Vec<DVector<f64>>,
}

/// Simulates `ŷ = T x_0 + ξ`, `ξ ~ N(0, σ² I)`, and reconstructs each trial.
/// Trial `k` draws from RNG stream `k`, so the report does not depend on
/// thread scheduling.
pub fn estimate_noisy(
    frame: &ObservabilityFrame,
    x0: &DVector<f64>,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Parameter(format!("noise level must be non-negative, got {sigma}")));
    }
    if x0.len() != frame.n() {
        return Err(Error::Parameter("initial state has the wrong dimension".into()));
    }
    let s_inv = frame.frame_matrix_inverse()?;
    let clean = frame.analysis() * x0;
    let m = frame.len();
    let estimates: Vec<DVector<f64>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, k as u64);
            let noisy = DVector::from_fn(m, |r, _| clean[r] + sigma * rng.sample::<f64, _>(StandardNormal));
            frame.reconstruct(&noisy)
        })
        .collect::<Result<_>>()?;

    let n = frame.n();
    let mut mean = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    let mut err_sq = 0.0;
    for est in &estimates {
        let eta = est - x0;
        mean += est;
        err_sq += eta.norm_squared();
        second += &eta * eta.transpose();
    }
    let count = trials as f64;
    mean /= count;
    // the error has known mean zero
    second /= count;
    let covariance_frobenius_error = (&second - &s_inv * (sigma * sigma)).norm();
    let rho_d_theoretical = if sigma > 0.0 { measure_rho_d(frame, sigma)? } else { 0.0 };
    Ok(MonteCarloReport {
        trials,
        sigma,
        seed,
        mean_error_norm_sq: err_sq / count,
        rho_d_theoretical,
        covariance_frobenius_error,
        sample_mean_estimate: mean,
        sample_error_covariance: second,
        estimates,
    })
}

fn state_matrix(frame: &ObservabilityFrame) -> Result<&DMatrix<f64>> {
    frame
        .state_matrix()
        .ok_or_else(|| Error::Parameter("frame carries no state matrix; cannot shift in time".into()))
}

/// Frame of the same schedule read `δ` later: components `e^{Aᵀδ} φ`,
/// labels `(i, t + δ)`.
pub fn shift_frame(frame: &ObservabilityFrame, delta: f64) -> Result<ObservabilityFrame> {
    let a = state_matrix(frame)?;
    let propagator = matrix_exponential(a, delta)?;
    let analysis = frame.analysis() * propagator;
    let labels = frame
        .labels()
        .iter()
        .map(|l| crate::sampling::SampleLabel::new(l.i, l.t + delta))
        .collect();
    ObservabilityFrame::from_parts(labels, analysis, Some(a.clone()))
}

/// `ρ_e(Φ_δ)` predicted from `ρ_e(Φ)` and the singular values of `e^{Aδ}`:
/// `ρ_e(Φ) - Σ log σ_i²(e^{Aδ})`.
pub fn shifted_rho_e(frame: &ObservabilityFrame, delta: f64) -> Result<f64> {
    let a = state_matrix(frame)?;
    let rho_e = measure_rho_e(frame)?;
    let propagator = matrix_exponential(a, delta)?;
    let log_gain: f64 = linalg::singular_values_ascending(&propagator).iter().map(|s| (s * s).ln()).sum();
    Ok(rho_e - log_gain)
}

/// Upper bound on `ρ_d(Φ_δ)`: `σ (Σ σ_i²(e^{-Aδ}) / λ_i(S))^{1/2}` with both
/// sequences sorted the same way (largest gain against largest `1/λ`).
pub fn dwell_bound_rho_d(frame: &ObservabilityFrame, delta: f64, sigma: f64) -> Result<f64> {
    let a = state_matrix(frame)?;
    let eigenvalues = frame_eigenvalues(frame)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("noise level must be positive, got {sigma}")));
    }
    let backward = matrix_exponential(a, -delta)?;
    let gains: Vec<f64> = linalg::singular_values_ascending(&backward).iter().map(|s| s * s).collect();
    let mut inverse: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / l).collect();
    inverse.sort_by(f64::total_cmp);
    let sum: f64 = gains.iter().zip(&inverse).map(|(g, w)| g * w).sum();
    Ok(sigma * sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::build_frame;
    use crate::netmodel::{generate_geometric_network, LtiNetwork, SamplingLocations};
    use crate::sampling::{random_strategy, SampleLabel, SamplingStrategy};
    use approx::assert_relative_eq;

    fn rotation() -> LtiNetwork {
        LtiNetwork::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap()
    }

    fn basis_frame(n: usize, scale: f64) -> ObservabilityFrame {
        let vs: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = scale;
                e
            })
            .collect();
        ObservabilityFrame::from_vectors(&vs).unwrap()
    }

    fn hurwitz_network(n: usize, seed: u64) -> LtiNetwork {
        let net = generate_geometric_network(n, 1.0, 0.5, 0.5, seed).unwrap();
        let shift = net.spectral().unwrap().spectral_abscissa() + 0.3;
        LtiNetwork::new(net.state_matrix() - DMatrix::identity(n, n) * shift).unwrap()
    }

    #[test]
    fn basis_measures() {
        assert_relative_eq!(measure_rho_d(&basis_frame(4, 1.0), 0.1).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(measure_rho_e(&basis_frame(4, 1.0)).unwrap(), 0.0);
        // S = 2I in R^3
        let rho_e = measure_rho_e(&basis_frame(3, 2f64.sqrt())).unwrap();
        assert_relative_eq!(rho_e, -3.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_rho_d_closed_form() {
        let s = SamplingStrategy::new(vec![SampleLabel::new(0, 0.3), SampleLabel::new(0, 1.4)]).unwrap();
        let f = build_frame(&rotation(), &s).unwrap();
        let det = f.frame_matrix().determinant();
        assert_relative_eq!(measure_rho_d(&f, 0.1).unwrap(), 2f64.sqrt() * 0.1 / det.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn rho_e_is_minus_log_det() {
        let net = generate_geometric_network(5, 1.0, 0.5, 0.6, 21).unwrap();
        let s = random_strategy(&net, &SamplingLocations::all(5), &[2; 5], 1.0, 4).unwrap();
        let f = build_frame(&net, &s).unwrap();
        let det = f.frame_matrix().clone().lu().determinant();
        assert_relative_eq!(measure_rho_e(&f).unwrap(), -det.ln(), epsilon = 1e-9);
    }

    #[test]
    fn non_frames_are_rejected() {
        let f = ObservabilityFrame::from_vectors(&[DVector::from_vec(vec![1.0, 0.0])]).unwrap();
        assert!(matches!(measure_rho_d(&f, 1.0), Err(Error::NotAFrame { .. })));
        assert!(matches!(measure_rho_e(&f), Err(Error::NotAFrame { .. })));
    }

    #[test]
    fn entropy_formula() {
        let h = differential_entropy(0.0, 2, 1.0);
        assert_relative_eq!(h, 1.0 + (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn noiseless_trials_recover_state() {
        let net = generate_geometric_network(6, 1.0, 0.5, 0.5, 2).unwrap();
        let s = random_strategy(&net, &SamplingLocations::all(6), &[2; 6], 0.5, 1).unwrap();
        let f = build_frame(&net, &s).unwrap();
        let x0 = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let report = estimate_noisy(&f, &x0, 0.0, 5, 3).unwrap();
        for est in &report.estimates {
            assert!((est - &x0).norm() < 1e-9 * x0.norm());
        }
    }

    #[test]
    fn monte_carlo_consistency() {
        let net = generate_geometric_network(5, 1.0, 0.5, 0.6, 6).unwrap();
        let s = random_strategy(&net, &SamplingLocations::all(5), &[4; 5], 0.5, 2).unwrap();
        let f = build_frame(&net, &s).unwrap();
        let sigma = 0.1;
        let x0 = DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0, 0.0]);
        let trials = 10_000;
        let report = estimate_noisy(&f, &x0, sigma, trials, 17).unwrap();
        let rho_d = report.rho_d_theoretical;

        // ‖η‖² has mean ρ_d² and variance 2σ⁴ tr(S⁻²)
        let s_inv = f.frame_matrix_inverse().unwrap();
        let var = 2.0 * sigma.powi(4) * (&s_inv * &s_inv).trace();
        let se = (var / trials as f64).sqrt();
        assert!((report.mean_error_norm_sq - rho_d * rho_d).abs() < 3.0 * se);

        assert!((&report.sample_mean_estimate - &x0).norm() <= 4.0 * rho_d / (trials as f64).sqrt());

        // entrywise covariance error of order σ² ‖S⁻¹‖ / sqrt(trials)
        let target = &s_inv * (sigma * sigma);
        let scale = target.diagonal().max();
        for i in 0..5 {
            for j in 0..5 {
                let bound = 5.0 * (target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)).sqrt()
                    / (trials as f64).sqrt();
                let diff = (report.sample_error_covariance[(i, j)] - target[(i, j)]).abs();
                assert!(diff <= bound.max(1e-3 * scale), "({i},{j}) {diff:e} > {bound:e}");
            }
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let f = basis_frame(3, 1.0);
        let x0 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = estimate_noisy(&f, &x0, 0.5, 64, 9).unwrap();
        let b = estimate_noisy(&f, &x0, 0.5, 64, 9).unwrap();
        assert_eq!(a.mean_error_norm_sq.to_bits(), b.mean_error_norm_sq.to_bits());
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn zero_shift_is_identity() {
        let net = generate_geometric_network(6, 1.0, 0.5, 0.5, 12).unwrap();
        let s = random_strategy(&net, &SamplingLocations::all(6), &[1; 6], 0.2, 4).unwrap();
        let f = build_frame(&net, &s).unwrap();
        let g = shift_frame(&f, 0.0).unwrap();
        assert_eq!(g.analysis(), f.analysis());
        assert_eq!(g.labels(), f.labels());
    }

    #[test]
    fn rotation_is_shift_invariant() {
        let s = SamplingStrategy::new(vec![SampleLabel::new(0, 0.0), SampleLabel::new(0, 0.9)]).unwrap();
        let f = build_frame(&rotation(), &s).unwrap();
        let base = measure_rho_d(&f, 0.1).unwrap();
        for delta in [-0.7, 0.25, 3.0] {
            let shifted = shift_frame(&f, delta).unwrap();
            assert_relative_eq!(measure_rho_d(&shifted, 0.1).unwrap(), base, max_relative = 1e-12);
            assert_relative_eq!(dwell_bound_rho_d(&f, delta, 0.1).unwrap(), base, max_relative = 1e-12);
        }
    }

    #[test]
    fn shifted_entropy_identity() {
        let net = hurwitz_network(6, 31);
        let s = random_strategy(&net, &SamplingLocations::all(6), &[2; 6], 0.5, 8).unwrap();
        let f = build_frame(&net, &s).unwrap();
        let trace = net.state_matrix().trace();
        for delta in [-0.5, -0.1, 0.2, 0.5] {
            let shifted = shift_frame(&f, delta).unwrap();
            let measured = measure_rho_e(&shifted).unwrap();
            assert_relative_eq!(shifted_rho_e(&f, delta).unwrap(), measured, epsilon = 1e-8);
            // det e^{Aδ} = e^{tr(A) δ}
            assert_relative_eq!(measured, measure_rho_e(&f).unwrap() - 2.0 * trace * delta, epsilon = 1e-8);
        }
    }

    #[test]
    fn dwell_bound_dominates_and_is_tight_at_zero() {
        let net = hurwitz_network(8, 5);
        let s = random_strategy(&net, &SamplingLocations::all(8), &[2; 8], 0.3, 6).unwrap();
        let f = build_frame(&net, &s).unwrap();
        let sigma = 0.1;
        assert_relative_eq!(
            dwell_bound_rho_d(&f, 0.0, sigma).unwrap(),
            measure_rho_d(&f, sigma).unwrap(),
            max_relative = 1e-12
        );
        for k in 0..=10 {
            let delta = -0.5 + 0.1 * k as f64;
            let measured = measure_rho_d(&shift_frame(&f, delta).unwrap(), sigma).unwrap();
            let bound = dwell_bound_rho_d(&f, delta, sigma).unwrap();
            assert!(bound >= measured * (1.0 - 1e-12), "delta {delta}: {bound} < {measured}");
        }
    }
}
