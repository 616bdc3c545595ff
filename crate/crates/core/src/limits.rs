//! Lower limits on the estimation measures that no sampling strategy can beat.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{rho_d_from_spectrum, rho_e_from_spectrum};
use crate::frame::{build_frame, DEFAULT_FRAME_TOL};
use crate::linalg;
use crate::netmodel::{is_observable, LtiNetwork, SamplingLocations, DEFAULT_RANK_TOL};
use crate::sampling::{check_step_size, SamplingStrategy};

/// Eigenvalue real parts must stay below `-HURWITZ_MARGIN`.
pub const HURWITZ_MARGIN: f64 = 1e-10;
/// Largest dimension solved by Kronecker vectorization.
pub const KRONECKER_MAX_N: usize = 60;
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-8;

/// `max_t ‖e^{At}‖₂` over the distinct sampling times.
pub fn nu_of(network: &LtiNetwork, strategy: &SamplingStrategy) -> Result<f64> {
    if strategy.is_empty() {
        return Err(Error::Parameter("empty sampling strategy".into()));
    }
    let mut nu: f64 = 0.0;
    for t in strategy.distinct_times() {
        nu = nu.max(linalg::spectral_norm(&network.exp(t)?));
    }
    Ok(nu)
}

/// `(σ n / (ν √|𝔖|), n ln(n / (ν² |𝔖|)))`.
pub fn sample_count_bounds(n: usize, samples: usize, nu: f64, sigma: f64) -> (f64, f64) {
    let (n, m) = (n as f64, samples as f64);
    (sigma * n / (nu * m.sqrt()), n * (n / (nu * nu * m)).ln())
}

#[derive(Debug, Clone)]
pub struct GramianLimit {
    /// Solution of `Q = FᵀQF + CᵀC`, `F = e^{Aδ}`.
    pub gramian: DMatrix<f64>,
    pub lower_rho_d: f64,
    pub lower_rho_e: f64,
    /// `‖FᵀQF - Q + CᵀC‖_F / ‖CᵀC‖_F`.
    pub relative_residual: f64,
}

/// Limit valid for every strategy confined to `Ω × δℤ₊`, however many samples.
pub fn gramian_limit(
    network: &LtiNetwork,
    locations: &SamplingLocations,
    delta: f64,
    sigma: f64,
) -> Result<GramianLimit> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Parameter(format!("step size must be positive, got {delta}")));
    }
    if locations.n() != network.n() {
        return Err(Error::Parameter("locations do not match the network dimension".into()));
    }
    let spectral = network.spectral()?;
    let abscissa = spectral.spectral_abscissa();
    if abscissa >= -HURWITZ_MARGIN {
        return Err(Error::Precondition(format!(
            "state matrix is not Hurwitz (largest real part {abscissa:.3e})"
        )));
    }
    check_step_size(spectral, delta)?;
    let f = network.exp(delta)?;
    if !is_observable(&f, locations, DEFAULT_RANK_TOL) {
        return Err(Error::Unobservable(format!("(e^(A*{delta}), C) is not observable")));
    }
    let c = locations.c_matrix();
    let ctc = c.tr_mul(&c);
    let q = if network.n() <= KRONECKER_MAX_N {
        lyapunov_kronecker(&f, &ctc)?
    } else {
        lyapunov_doubling(&f, &ctc)?
    };
    let q = (&q + q.transpose()) * 0.5;
    let residual = (f.tr_mul(&q) * &f - &q + &ctc).norm() / ctc.norm();
    if residual > LYAPUNOV_RESIDUAL_TOL {
        return Err(Error::Numerical(format!("Lyapunov residual {residual:.3e} too large")));
    }
    let eig = linalg::sym_eigenvalues_ascending(&q);
    if !(eig[0] > DEFAULT_FRAME_TOL * eig[eig.len() - 1]) {
        return Err(Error::Unobservable(format!(
            "Gramian is numerically singular (eigenvalues {:.3e} .. {:.3e})",
            eig[0],
            eig[eig.len() - 1]
        )));
    }
    Ok(GramianLimit {
        lower_rho_d: rho_d_from_spectrum(eig.as_slice(), sigma),
        lower_rho_e: rho_e_from_spectrum(eig.as_slice()),
        gramian: q,
        relative_residual: residual,
    })
}

/// `(I - Fᵀ⊗Fᵀ) vec Q = vec W`.
fn lyapunov_kronecker(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let ft = f.transpose();
    let mut system = ft.kronecker(&ft);
    system.neg_mut();
    for k in 0..n * n {
        system[(k, k)] += 1.0;
    }
    let rhs = nalgebra::DVector::from_column_slice(w.as_slice());
    let vec_q = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_column_slice(n, n, vec_q.as_slice()))
}

/// `Q ← Q + FᵀQF`, `F ← F²` until the increment vanishes.
fn lyapunov_doubling(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = w.clone();
    let mut power = f.clone();
    for _ in 0..200 {
        let increment = power.tr_mul(&q) * &power;
        q += &increment;
        if increment.norm() <= 1e-17 * q.norm() {
            return Ok(q);
        }
        power = &power * &power;
    }
    Err(Error::Numerical("doubling iteration did not converge".into()))
}

/// Minimal total sample counts `((σn/(ν*ρ_d*))², (n/ν*²) e^{-ρ_e*/n})`
/// compatible with the targets `ρ_d*` and `ρ_e*`.
pub fn tradeoff_thresholds(n: usize, sigma: f64, nu_star: f64, rho_d_star: f64, rho_e_star: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0 && nu_star > 0.0 && rho_d_star > 0.0) {
        return Err(Error::Parameter("tradeoff inputs must be positive".into()));
    }
    let n = n as f64;
    let d = (sigma * n / (nu_star * rho_d_star)).powi(2);
    let e = n / (nu_star * nu_star) * (-rho_e_star / n).exp();
    Ok((d, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub n: usize,
    pub samples: usize,
    pub sigma: f64,
    pub delta: Option<f64>,
    pub nu: f64,
    pub lower_rho_d: f64,
    pub lower_rho_e: f64,
    pub gramian_lower_rho_d: Option<f64>,
    pub gramian_lower_rho_e: Option<f64>,
    /// Why the Gramian limit is absent, if it is.
    pub gramian_note: Option<String>,
    /// Achieved measures of the strategy's frame, when it is a frame.
    pub rho_d: Option<f64>,
    pub rho_e: Option<f64>,
    /// Thresholds evaluated at `ν` and the achieved measures.
    pub tradeoff_min_samples_d: Option<f64>,
    pub tradeoff_min_samples_e: Option<f64>,
}

/// All limits for one strategy. The Gramian limit is attempted when `delta`
/// is given; a failed precondition is reported in `gramian_note`.
pub fn limit_report(
    network: &LtiNetwork,
    strategy: &SamplingStrategy,
    sigma: f64,
    delta: Option<f64>,
) -> Result<LimitReport> {
    strategy.check_dimension(network.n())?;
    let n = network.n();
    let nu = nu_of(network, strategy)?;
    let (lower_rho_d, lower_rho_e) = sample_count_bounds(n, strategy.len(), nu, sigma);
    let (mut gramian_lower_rho_d, mut gramian_lower_rho_e, mut gramian_note) = (None, None, None);
    if let Some(delta) = delta {
        let locations = SamplingLocations::new(strategy.omega(), n)?;
        match gramian_limit(network, &locations, delta, sigma) {
            Ok(g) => {
                gramian_lower_rho_d = Some(g.lower_rho_d);
                gramian_lower_rho_e = Some(g.lower_rho_e);
            }
            Err(e) if e.is_infeasible() => gramian_note = Some(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    let frame = build_frame(network, strategy)?;
    let (rho_d, rho_e) = if frame.is_frame(DEFAULT_FRAME_TOL).is_frame {
        let eig = frame.eigenvalues().as_slice();
        (Some(rho_d_from_spectrum(eig, sigma)), Some(rho_e_from_spectrum(eig)))
    } else {
        (None, None)
    };
    let thresholds = match (rho_d, rho_e) {
        (Some(d), Some(e)) => Some(tradeoff_thresholds(n, sigma, nu, d, e)?),
        _ => None,
    };
    Ok(LimitReport {
        n,
        samples: strategy.len(),
        sigma,
        delta,
        nu,
        lower_rho_d,
        lower_rho_e,
        gramian_lower_rho_d,
        gramian_lower_rho_e,
        gramian_note,
        rho_d,
        rho_e,
        tradeoff_min_samples_d: thresholds.map(|t| t.0),
        tradeoff_min_samples_e: thresholds.map(|t| t.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::generate_geometric_network;
    use crate::sampling::{periodic_strategy, random_strategy, SampleLabel};
    use approx::assert_relative_eq;

    fn hurwitz(n: usize, seed: u64) -> LtiNetwork {
        let net = generate_geometric_network(n, 1.0, 1.0, 0.5, seed).unwrap();
        let shift = net.spectral().unwrap().spectral_abscissa() + 0.3;
        let a = net.state_matrix() - DMatrix::identity(n, n) * shift;
        LtiNetwork::new(a).unwrap()
    }

    #[test]
    fn nu_trivial_cases() {
        let zero = LtiNetwork::new(DMatrix::zeros(3, 3)).unwrap();
        let s = SamplingStrategy::new(vec![SampleLabel::new(0, 0.5), SampleLabel::new(1, 2.0)]).unwrap();
        assert_relative_eq!(nu_of(&zero, &s).unwrap(), 1.0, epsilon = 1e-12);
        let rot = LtiNetwork::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert_relative_eq!(nu_of(&rot, &s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_count_bounds_are_tight_for_standard_basis() {
        let (d, e) = sample_count_bounds(4, 4, 1.0, 0.3);
        assert_relative_eq!(d, 0.3 * 2.0, epsilon = 1e-14);
        assert_relative_eq!(e, 0.0, epsilon = 1e-14);
        let (d, _) = sample_count_bounds(2, 2, 1.0, 0.5);
        assert_relative_eq!(d, 0.5 * 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn scalar_gramian_is_geometric_series() {
        let net = LtiNetwork::new(DMatrix::from_element(1, 1, -1.0)).unwrap();
        let delta = 0.4;
        let g = gramian_limit(&net, &SamplingLocations::all(1), delta, 1.0).unwrap();
        assert_relative_eq!(g.gramian[(0, 0)], 1.0 / (1.0 - (-2.0 * delta).exp()), max_relative = 1e-12);
    }

    #[test]
    fn diagonal_gramian_closed_form() {
        let net = LtiNetwork::new(-DMatrix::<f64>::identity(2, 2)).unwrap();
        let g = gramian_limit(&net, &SamplingLocations::all(2), 2f64.ln(), 0.7).unwrap();
        assert!((&g.gramian - DMatrix::<f64>::identity(2, 2) * (4.0 / 3.0)).norm() < 1e-12);
        assert_relative_eq!(g.lower_rho_d, 0.7 * 1.5f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(g.lower_rho_e, -2.0 * (4.0f64 / 3.0).ln(), max_relative = 1e-12);
    }

    #[test]
    fn solvers_agree() {
        let net = hurwitz(8, 3);
        let f = net.exp(0.2).unwrap();
        let c = SamplingLocations::new(vec![0, 5], 8).unwrap().c_matrix();
        let w = c.tr_mul(&c);
        let a = lyapunov_kronecker(&f, &w).unwrap();
        let b = lyapunov_doubling(&f, &w).unwrap();
        assert!((&a - &b).norm() <= 1e-9 * a.norm());
    }

    #[test]
    fn gramian_preconditions() {
        let unstable = LtiNetwork::new(DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0])).unwrap();
        let err = gramian_limit(&unstable, &SamplingLocations::all(2), 0.1, 1.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        let decoupled = LtiNetwork::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0])).unwrap();
        let err = gramian_limit(&decoupled, &SamplingLocations::new(vec![0], 2).unwrap(), 0.1, 1.0).unwrap_err();
        assert!(matches!(err, Error::Unobservable(_)));
    }

    #[test]
    fn gramian_dominates_lattice_frames() {
        let net = hurwitz(6, 9);
        let delta = 0.25;
        let locs = SamplingLocations::new(vec![1, 4], 6).unwrap();
        let g = gramian_limit(&net, &locs, delta, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for horizon in [10, 40, 160] {
            let s = periodic_strategy(&net, &locs, &[horizon, horizon], delta).unwrap().strategy;
            let frame = build_frame(&net, &s).unwrap();
            let gap = linalg::sym_eigenvalues_ascending(&(&g.gramian - frame.frame_matrix()))[0];
            assert!(gap >= -1e-8);
            let rho_d = rho_d_from_spectrum(frame.eigenvalues().as_slice(), 1.0);
            assert!(rho_d >= g.lower_rho_d - 1e-12);
            assert!(rho_d <= last);
            last = rho_d;
        }
        assert_relative_eq!(last, g.lower_rho_d, max_relative = 1e-6);
    }

    #[test]
    fn tradeoff_arithmetic() {
        let (d, _) = tradeoff_thresholds(40, 0.1, 1.0, 0.0967, 0.0).unwrap();
        assert_relative_eq!(d, (4.0f64 / 0.0967).powi(2), max_relative = 1e-12);
        assert!((d - 1711.0).abs() < 1.0);
        let n = 5usize;
        let (_, e) = tradeoff_thresholds(n, 1.0, 1.3, 1.0, n as f64 * (n as f64 / 1.69).ln()).unwrap();
        assert_relative_eq!(e, 1.0, max_relative = 1e-12);
        let (d1, _) = tradeoff_thresholds(n, 1.0, 1.0, 1.0, 0.0).unwrap();
        let (d2, _) = tradeoff_thresholds(n, 1.0, 2.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(d2, d1 / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn report_bounds_hold_for_random_strategies() {
        let net = hurwitz(5, 1);
        let omega = SamplingLocations::new(vec![0, 2, 3], 5).unwrap();
        for seed in 0..30 {
            let s = random_strategy(&net, &omega, &[4, 4, 4], 2.0, seed).unwrap();
            let r = limit_report(&net, &s, 0.2, Some(0.3)).unwrap();
            if let (Some(d), Some(e)) = (r.rho_d, r.rho_e) {
                assert!(d >= r.lower_rho_d - 1e-12);
                assert!(e >= r.lower_rho_e - 1e-12);
                assert!(r.tradeoff_min_samples_d.unwrap() <= r.samples as f64 * (1.0 + 1e-9));
                assert!(r.tradeoff_min_samples_e.unwrap() <= r.samples as f64 * (1.0 + 1e-9));
            }
        }
    }
}
