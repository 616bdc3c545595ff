//! The observability frame `Φ(A, 𝔖) = (e^{Aᵀt} e_i)` with its analysis
//! operator `T` (rows are components) and frame operator `S = TᵀT`.

use std::collections::hash_map::{Entry, HashMap};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::export::CsvTable;
use crate::linalg;
use crate::netmodel::LtiNetwork;
use crate::sampling::{SampleLabel, SamplingStrategy};

/// Default frame tolerance, relative to the largest frame eigenvalue.
pub const DEFAULT_FRAME_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ObservabilityFrame {
    labels: Vec<SampleLabel>,
    analysis: DMatrix<f64>,
    frame_matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    cholesky: Option<Cholesky<f64, Dyn>>,
    state_matrix: Option<DMatrix<f64>>,
}

/// Outcome of the frame test with the optimal frame bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameCheck {
    pub is_frame: bool,
    /// Smallest eigenvalue of S (lower frame bound).
    pub alpha: f64,
    /// Largest eigenvalue of S (upper frame bound).
    pub beta: f64,
}

/// Builds the frame of `strategy`, one matrix exponential per distinct time.
pub fn build_frame(network: &LtiNetwork, strategy: &SamplingStrategy) -> Result<ObservabilityFrame> {
    if strategy.is_empty() {
        return Err(Error::Parameter("cannot build a frame from an empty strategy".into()));
    }
    strategy.check_dimension(network.n())?;
    let n = network.n();
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut analysis = DMatrix::zeros(strategy.len(), n);
    for (row, label) in strategy.entries().iter().enumerate() {
        let key = if label.t == 0.0 { 0 } else { label.t.to_bits() };
        let propagator = match cache.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(network.exp(label.t)?),
        };
        // e^{Aᵀt} e_i is the i-th row of e^{At}
        analysis.set_row(row, &propagator.row(label.i));
    }
    ObservabilityFrame::from_parts(strategy.entries().to_vec(), analysis, Some(network.state_matrix().clone()))
}

impl ObservabilityFrame {
    /// Frame from explicit components (rows of `analysis`). `state_matrix`
    /// is needed only for time shifts.
    pub fn from_parts(
        labels: Vec<SampleLabel>,
        analysis: DMatrix<f64>,
        state_matrix: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if labels.len() != analysis.nrows() {
            return Err(Error::Parameter(format!(
                "{} labels for {} components",
                labels.len(),
                analysis.nrows()
            )));
        }
        if analysis.ncols() == 0 {
            return Err(Error::Parameter("frame components must be non-empty vectors".into()));
        }
        if !linalg::is_finite(&analysis) {
            return Err(Error::Numerical("frame components are not finite".into()));
        }
        if let Some(a) = &state_matrix {
            if a.nrows() != analysis.ncols() || a.ncols() != analysis.ncols() {
                return Err(Error::Parameter("state matrix does not match component dimension".into()));
            }
        }
        let s = analysis.tr_mul(&analysis);
        let s = (&s + s.transpose()) * 0.5;
        let eigenvalues = linalg::sym_eigenvalues_ascending(&s);
        let mut frame = ObservabilityFrame {
            labels,
            analysis,
            frame_matrix: s,
            eigenvalues,
            cholesky: None,
            state_matrix,
        };
        if frame.is_frame(DEFAULT_FRAME_TOL).is_frame {
            frame.cholesky = Cholesky::new(frame.frame_matrix.clone());
        }
        Ok(frame)
    }

    /// Convenience for frames given as a list of vectors with synthetic labels
    /// `(k, 0)`, `k` the position in the list.
    pub fn from_vectors(vectors: &[DVector<f64>]) -> Result<Self> {
        let n = vectors.first().map(|v| v.len()).unwrap_or(0);
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::Parameter("vectors have different lengths".into()));
        }
        let mut analysis = DMatrix::zeros(vectors.len(), n);
        for (r, v) in vectors.iter().enumerate() {
            analysis.set_row(r, &v.transpose());
        }
        let labels = (0..vectors.len()).map(|k| SampleLabel::new(k, 0.0)).collect();
        Self::from_parts(labels, analysis, None)
    }

    pub fn n(&self) -> usize {
        self.analysis.ncols()
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.analysis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.analysis.nrows() == 0
    }

    pub fn labels(&self) -> &[SampleLabel] {
        &self.labels
    }

    pub fn component(&self, k: usize) -> DVector<f64> {
        self.analysis.row(k).transpose()
    }

    /// Analysis matrix T (|Φ| x n).
    pub fn analysis(&self) -> &DMatrix<f64> {
        &self.analysis
    }

    /// Frame matrix S = TᵀT.
    pub fn frame_matrix(&self) -> &DMatrix<f64> {
        &self.frame_matrix
    }

    /// Eigenvalues of S, ascending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn state_matrix(&self) -> Option<&DMatrix<f64>> {
        self.state_matrix.as_ref()
    }

    /// True iff `λ_1(S) > frame_tol · λ_n(S)`.
    pub fn is_frame(&self, frame_tol: f64) -> FrameCheck {
        let alpha = self.eigenvalues[0];
        let beta = self.eigenvalues[self.eigenvalues.len() - 1];
        FrameCheck { is_frame: beta > 0.0 && alpha > frame_tol * beta, alpha, beta }
    }

    fn require_frame(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.cholesky.as_ref().ok_or_else(|| {
            let check = self.is_frame(DEFAULT_FRAME_TOL);
            Error::NotAFrame { lambda_min: check.alpha, lambda_max: check.beta }
        })
    }

    /// `S⁻¹ v` through the cached Cholesky factor.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.require_frame()?.solve(v))
    }

    /// Explicit `S⁻¹` (for rank-one update schemes).
    pub fn frame_matrix_inverse(&self) -> Result<DMatrix<f64>> {
        Ok(self.require_frame()?.inverse())
    }

    /// Least-squares initial state `T† y = S⁻¹ Tᵀ y`, with one step of
    /// iterative refinement against the residual in observation space.
    pub fn reconstruct(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.len() {
            return Err(Error::Parameter(format!("expected {} observations, got {}", self.len(), y.len())));
        }
        let chol = self.require_frame()?;
        let mut x = chol.solve(&self.analysis.tr_mul(y));
        let residual = y - &self.analysis * &x;
        x += chol.solve(&self.analysis.tr_mul(&residual));
        Ok(x)
    }

    /// Leverage scores `φᵀ S⁻¹ φ`, in component order. They sum to n.
    pub fn leverage_scores(&self) -> Result<Vec<f64>> {
        let chol = self.require_frame()?;
        let z = chol
            .l()
            .solve_lower_triangular(&self.analysis.transpose())
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        Ok(z.column_iter().map(|c| c.norm_squared()).collect())
    }

    /// Frame made of the components at `indices`, in the given order.
    pub fn subframe(&self, indices: &[usize]) -> Result<ObservabilityFrame> {
        if let Some(&k) = indices.iter().find(|&&k| k >= self.len()) {
            return Err(Error::Parameter(format!("component index {k} out of range")));
        }
        let analysis = self.analysis.select_rows(indices);
        let labels = indices.iter().map(|&k| self.labels[k]).collect();
        Self::from_parts(labels, analysis, self.state_matrix.clone())
    }

    /// Appends the components of `other`.
    pub fn union(&self, other: &ObservabilityFrame) -> Result<ObservabilityFrame> {
        if other.n() != self.n() {
            return Err(Error::Parameter("frames live in different dimensions".into()));
        }
        let mut analysis = DMatrix::zeros(self.len() + other.len(), self.n());
        analysis.rows_mut(0, self.len()).copy_from(&self.analysis);
        analysis.rows_mut(self.len(), other.len()).copy_from(&other.analysis);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::from_parts(labels, analysis, self.state_matrix.clone())
    }

    /// CSV with header `location,time,phi_1,...,phi_n`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["location".to_string(), "time".to_string()];
        header.extend((1..=self.n()).map(|k| format!("phi_{k}")));
        let mut table = CsvTable::new(header);
        for (r, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.i.into(), label.t.into()];
            row.extend(self.analysis.row(r).iter().map(|&v| v.into()));
            table.push_row(&row);
        }
        table.into_string()
    }
}
