//! LTI network state matrices and their spectral summary.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::Float17;
use crate::linalg;
use crate::rng;

/// Relative tolerance for breakdown of the power sequence I, A, A², ...
pub const MINPOLY_REL_TOL: f64 = 1e-10;

/// Default rank tolerance for observability tests.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Parameters of the random geometric network generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub seed: u64,
}

/// A linear time-invariant network `ẋ = A x`.
#[derive(Debug, Clone)]
pub struct LtiNetwork {
    a: DMatrix<f64>,
    coords: Option<Vec<[f64; 2]>>,
    generator: Option<GeneratorParams>,
    spectral: OnceLock<std::result::Result<SpectralInfo, String>>,
}

/// One cluster of numerically coincident eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenCluster {
    pub value: Complex64,
    /// Number of eigenvalues in the cluster.
    pub algebraic_multiplicity: usize,
    /// Exponent of `(λ - value)` in the minimal polynomial (estimated).
    pub minpoly_exponent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralInfo {
    pub eigenvalues: Vec<Complex64>,
    pub clusters: Vec<EigenCluster>,
    pub minpoly_degree: usize,
    /// Largest singular value of A.
    pub norm2: f64,
    /// Set when the minimal-polynomial exponents had to be inferred from
    /// repeated eigenvalues, where Jordan structure is numerically ill-posed.
    pub approximate: bool,
}

impl SpectralInfo {
    pub fn distinct_eigenvalues(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.clusters.iter().map(|c| c.value)
    }

    /// Number of columns of the time design row `E(t)`.
    pub fn design_width(&self) -> usize {
        self.clusters.iter().map(|c| c.minpoly_exponent).sum()
    }

    pub fn has_real_spectrum(&self, tol: f64) -> bool {
        self.clusters.iter().all(|c| c.value.im.abs() <= tol)
    }

    /// Largest real part over the spectrum.
    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl LtiNetwork {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::Parameter(format!(
                "state matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !linalg::is_finite(&a) {
            return Err(Error::Parameter("state matrix has non-finite entries".into()));
        }
        Ok(LtiNetwork { a, coords: None, generator: None, spectral: OnceLock::new() })
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.n() {
            return Err(Error::Parameter(format!(
                "expected {} coordinates, got {}",
                self.n(),
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter("coordinates must lie in [0,1]^2".into()));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn generator(&self) -> Option<&GeneratorParams> {
        self.generator.as_ref()
    }

    /// Spectral summary at the default clustering tolerance, computed once.
    pub fn spectral(&self) -> Result<&SpectralInfo> {
        self.spectral
            .get_or_init(|| {
                let tol = default_cluster_tol(&self.a);
                spectral_info(&self.a, tol).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| Error::Numerical(e.clone()))
    }

    /// `e^{At}`.
    pub fn exp(&self, t: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.a, t)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out {
            n: usize,
            #[serde(rename = "A")]
            a: Vec<Vec<Float17>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            coords: Option<Vec<[Float17; 2]>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            generator: Option<GenOut>,
        }
        #[derive(Serialize)]
        struct GenOut {
            a: Float17,
            b: Float17,
            d: Float17,
            seed: u64,
        }
        let n = self.n();
        let out = Out {
            n,
            a: (0..n).map(|i| (0..n).map(|j| Float17(self.a[(i, j)])).collect()).collect(),
            coords: self
                .coords
                .as_ref()
                .map(|c| c.iter().map(|p| [Float17(p[0]), Float17(p[1])]).collect()),
            generator: self.generator.map(|g| GenOut {
                a: Float17(g.a),
                b: Float17(g.b),
                d: Float17(g.d),
                seed: g.seed,
            }),
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct In {
            n: usize,
            #[serde(rename = "A")]
            a: Vec<Vec<f64>>,
            coords: Option<Vec<[f64; 2]>>,
            generator: Option<GeneratorParams>,
        }
        let parsed: In = serde_json::from_str(text)?;
        if parsed.a.len() != parsed.n || parsed.a.iter().any(|row| row.len() != parsed.n) {
            return Err(Error::Parameter(format!("A must be {0}x{0}", parsed.n)));
        }
        let a = DMatrix::from_fn(parsed.n, parsed.n, |i, j| parsed.a[i][j]);
        let mut net = LtiNetwork::new(a)?;
        if let Some(c) = parsed.coords {
            net = net.with_coords(c)?;
        }
        net.generator = parsed.generator;
        Ok(net)
    }
}

/// Random geometric network: subsystems uniform on the unit square, coupling
/// `a_ij = ζ_ij exp(-a dis(i,j)^b)` within distance `d`, zero beyond.
pub fn generate_geometric_network(n: usize, a: f64, b: f64, d: f64, seed: u64) -> Result<LtiNetwork> {
    if n < 2 {
        return Err(Error::Parameter(format!("network needs n >= 2, got {n}")));
    }
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Parameter(format!("decay rate a must be positive, got {a}")));
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::Parameter(format!("exponent b must lie in (0,1], got {b}")));
    }
    if !(d.is_finite() && d >= 0.0) {
        return Err(Error::Parameter(format!("range d must be non-negative, got {d}")));
    }
    let mut rng = rng::seeded(seed);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // every coefficient is drawn so the stream does not depend on the geometry
            let zeta: f64 = rng.sample(StandardNormal);
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let dis = (dx * dx + dy * dy).sqrt();
            if dis <= d {
                m[(i, j)] = zeta * (-a * dis.powf(b)).exp();
            }
        }
    }
    let mut net = LtiNetwork::new(m)?.with_coords(coords)?;
    net.generator = Some(GeneratorParams { a, b, d, seed });
    Ok(net)
}

/// `e^{At}` by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() || !linalg::is_finite(a) {
        return Err(Error::Parameter("matrix exponential of non-finite input".into()));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::Parameter("matrix exponential needs a square matrix".into()));
    }
    if t == 0.0 {
        return Ok(DMatrix::identity(a.nrows(), a.ncols()));
    }
    let out = (a * t).exp();
    if !linalg::is_finite(&out) {
        return Err(Error::Numerical(format!("e^(At) overflowed at t = {t}")));
    }
    Ok(out)
}

pub fn default_cluster_tol(a: &DMatrix<f64>) -> f64 {
    1e-8 * linalg::spectral_norm(a).max(1.0)
}

/// Eigenvalues, clustered distinct eigenvalues, minimal-polynomial degree and
/// spectral norm of `a`.
pub fn spectral_info(a: &DMatrix<f64>, cluster_tol: f64) -> Result<SpectralInfo> {
    if !(cluster_tol > 0.0) {
        return Err(Error::Parameter(format!("cluster tolerance must be positive, got {cluster_tol}")));
    }
    if a.nrows() != a.ncols() || a.is_empty() || !linalg::is_finite(a) {
        return Err(Error::Parameter("spectral analysis needs a finite square matrix".into()));
    }
    let n = a.nrows();
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000 * n.max(10))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    let norm2 = linalg::spectral_norm(a);
    let degree = minpoly_degree(a);

    // Coarsen the clustering when rounding splits a defective eigenvalue
    // into more clusters than the minimal polynomial allows.
    let mut tol = cluster_tol;
    let mut groups = cluster(&eigenvalues, tol);
    let mut approximate = false;
    while groups.len() > degree && tol < 1e-2 * norm2.max(1.0) {
        tol *= 10.0;
        groups = cluster(&eigenvalues, tol);
        approximate = true;
    }

    let mut clusters: Vec<EigenCluster> = groups
        .iter()
        .map(|members| {
            let value = members.iter().map(|&k| eigenvalues[k]).sum::<Complex64>() / members.len() as f64;
            let mult = members.len();
            let exponent = if mult == 1 { 1 } else { jordan_index(a, value, mult) };
            EigenCluster { value, algebraic_multiplicity: mult, minpoly_exponent: exponent }
        })
        .collect();
    if clusters.iter().any(|c| c.algebraic_multiplicity > 1) {
        approximate = true;
    }
    approximate |= reconcile_exponents(&mut clusters, degree);

    Ok(SpectralInfo { eigenvalues, clusters, minpoly_degree: degree, norm2, approximate })
}

/// Single-linkage clustering at absolute distance `tol`, in order of first appearance.
fn cluster(values: &[Complex64], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_to_group[r] == usize::MAX {
            root_to_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_to_group[r]].push(i);
    }
    groups
}

/// Smallest k with nullity((A - λI)^k) equal to the algebraic multiplicity.
fn jordan_index(a: &DMatrix<f64>, lambda: Complex64, multiplicity: usize) -> usize {
    let n = a.nrows();
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    });
    let scale = shifted.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let unit = shifted.map(|z| z / scale);
    let mut power = unit.clone();
    for k in 1..=multiplicity {
        let s: Vec<f64> = power.clone().singular_values().iter().copied().collect();
        let nullity = s.iter().filter(|&&v| v <= 1e-8).count();
        if nullity >= multiplicity {
            return k;
        }
        power = &power * &unit;
    }
    multiplicity
}

/// Adjusts exponents so that they sum to the minimal-polynomial degree.
/// Returns true if anything changed.
fn reconcile_exponents(clusters: &mut [EigenCluster], degree: usize) -> bool {
    let mut changed = false;
    loop {
        let total: usize = clusters.iter().map(|c| c.minpoly_exponent).sum();
        if total == degree {
            return changed;
        }
        let pick = if total < degree {
            clusters
                .iter()
                .enumerate()
                .filter(|(_, c)| c.minpoly_exponent < c.algebraic_multiplicity)
                .max_by_key(|(k, c)| (c.algebraic_multiplicity - c.minpoly_exponent, usize::MAX - k))
                .map(|(k, _)| (k, true))
        } else {
            clusters
                .iter()
                .enumerate()
                .filter(|(_, c)| c.minpoly_exponent > 1)
                .max_by_key(|(k, c)| (c.minpoly_exponent, usize::MAX - k))
                .map(|(k, _)| (k, false))
        };
        match pick {
            Some((k, true)) => clusters[k].minpoly_exponent += 1,
            Some((k, false)) => clusters[k].minpoly_exponent -= 1,
            None => return changed,
        }
        changed = true;
    }
}

/// Degree of the minimal polynomial: the first k at which `A^k` falls into
/// the span of lower powers. The powers are orthonormalised as they are
/// generated (Arnoldi on the space of matrices) so the test stays stable for
/// large k.
pub fn minpoly_degree(a: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let scale = a.norm();
    if scale == 0.0 {
        return 1;
    }
    let unit = a / scale;
    let mut basis: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n) / (n as f64).sqrt()];
    for k in 1..n {
        let mut w = &unit * basis.last().unwrap();
        for _ in 0..2 {
            for q in &basis {
                let c = linalg::frobenius_dot(q, &w);
                w -= q * c;
            }
        }
        let h = w.norm();
        if h <= MINPOLY_REL_TOL {
            return k;
        }
        basis.push(w / h);
    }
    n
}

/// Distinct sampling locations and their output matrix `C_Ω`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingLocations {
    omega: Vec<usize>,
    n: usize,
}

impl SamplingLocations {
    pub fn new(omega: Vec<usize>, n: usize) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Parameter("location set is empty".into()));
        }
        let mut seen = vec![false; n];
        for &i in &omega {
            if i >= n {
                return Err(Error::Parameter(format!("location {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Parameter(format!("location {i} listed twice")));
            }
        }
        Ok(SamplingLocations { omega, n })
    }

    pub fn all(n: usize) -> Self {
        SamplingLocations { omega: (0..n).collect(), n }
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Rows `e_i^T` for `i` in Ω, in order.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.omega.len(), self.n);
        for (row, &i) in self.omega.iter().enumerate() {
            c[(row, i)] = 1.0;
        }
        c
    }
}

/// True when `[C; CA; ...; CA^{n-1}]` has numerical rank n. A is normalised
/// by its spectral norm first so that no block dominates the threshold.
pub fn is_observable(a: &DMatrix<f64>, locations: &SamplingLocations, rank_tol: f64) -> bool {
    let n = a.nrows();
    assert_eq!(n, locations.n(), "location set built for a different dimension");
    let norm = linalg::spectral_norm(a);
    let unit = if norm > 0.0 { a / norm } else { a.clone() };
    let c = locations.c_matrix();
    let p = c.nrows();
    let mut stack = DMatrix::zeros(p * n, n);
    let mut block = c;
    for k in 0..n {
        stack.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * &unit;
    }
    linalg::rank(&stack, rank_tol) == n
}
