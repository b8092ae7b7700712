//! Sparse symmetric positive-definite linear algebra for Gaussian Markov
//! random fields: factorization, solves, log-determinants, sampling, marginal
//! variances and Gaussian conditioning on linear observations.

mod cholesky;
pub mod ordering;

use std::sync::Arc;

use sprs::{CsMat, TriMat};

pub use cholesky::{Factorization, SelectedInverse, Symbolic};

use crate::error::{Error, Result};
use crate::mesh::Projector;

/// Precision of the almost-flat Gaussian prior put on fixed effects.
pub const FLAT_PRECISION: f64 = 1e-6;

/// Symmetric matrix with a positive diagonal, stored as full CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd(CsMat<f64>);

impl SparseSpd {
    /// Checks squareness, symmetric structure, symmetric values (1e-10 relative)
    /// and a present, positive diagonal. Positive definiteness itself is only
    /// established by factorizing.
    pub fn new(m: CsMat<f64>) -> Result<Self> {
        let m = if m.is_csr() { m } else { m.to_csr() };
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        let scale = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let t: CsMat<f64> = m.transpose_view().to_csr();
        if t.indptr() != m.indptr() || t.indices() != m.indices() {
            return Err(Error::InvalidParameter("matrix structure is not symmetric".into()));
        }
        if let Some((a, b)) = t
            .data()
            .iter()
            .zip(m.data())
            .find(|(a, b)| (*a - *b).abs() > 1e-10 * scale)
        {
            return Err(Error::InvalidParameter(format!(
                "matrix values are not symmetric ({a} vs {b})"
            )));
        }
        for i in 0..m.rows() {
            match m.get(i, i) {
                Some(&d) if d > 0.0 => {}
                other => {
                    return Err(Error::NotPositiveDefinite {
                        pivot: i,
                        value: other.copied().unwrap_or(0.0),
                    })
                }
            }
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be valid (e.g. produced by this crate).
    pub(crate) fn new_unchecked(m: CsMat<f64>) -> Self {
        debug_assert!(m.is_csr() && m.rows() == m.cols());
        Self(m)
    }

    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t = TriMat::new((n, n));
        for &(i, j, v) in entries {
            t.add_triplet(i, j, v);
        }
        Self::new(t.to_csr())
    }

    pub fn identity(n: usize) -> Self {
        Self(CsMat::eye(n))
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> CsMat<f64> {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn nnz(&self) -> usize {
        self.0.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for (i, row) in self.0.outer_iterator().enumerate() {
            y[i] = row.iter().map(|(j, v)| v * x[j]).sum();
        }
        y
    }

    /// `xᵀ Q x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `s · Q`
    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.map(|v| v * s))
    }

    /// `D Q D` for a diagonal `D`.
    pub fn diag_scaled(&self, d: &[f64]) -> Self {
        let mut m = self.0.clone();
        for (i, mut row) in m.outer_iterator_mut().enumerate() {
            for (j, v) in row.iter_mut() {
                *v *= d[i] * d[j];
            }
        }
        Self(m)
    }
}

/// Fill-reducing analysis plus numeric factorization.
pub fn factorize(q: &SparseSpd) -> Result<Factorization> {
    Factorization::new(Arc::new(Symbolic::analyze(q, &[])), q)
}

/// Gaussian posterior of a latent field plus flat fixed effects.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// Field nodes first, then one entry per fixed effect.
    pub mean: Vec<f64>,
    pub precision: SparseSpd,
    /// Factor of `precision`, with the fixed effects eliminated last.
    pub factor: Factorization,
    pub field_len: usize,
}

impl Posterior {
    pub fn effects(&self) -> &[f64] {
        &self.mean[self.field_len..]
    }
}

/// Builds `blockdiag(Q, τ·I) + P̃ᵀP̃ / σ²` with `P̃ = [P | X]`.
///
/// Every observation contributes all three of its triangle's nodes even when a
/// weight is zero, so the structure depends only on which triangles are hit.
pub fn posterior_precision(
    prior: &SparseSpd,
    proj: &Projector,
    noise_var: f64,
    covariates: &[Vec<f64>],
) -> Result<SparseSpd> {
    let n = prior.n();
    check_observation_inputs(prior, proj, noise_var, proj.len(), covariates)?;
    let f = covariates.len();
    let dim = n + f;
    let mut t = TriMat::with_capacity((dim, dim), prior.nnz() + f + proj.len() * (3 + f) * (3 + f));
    for (v, (i, j)) in prior.matrix().iter() {
        t.add_triplet(i, j, *v);
    }
    for e in 0..f {
        t.add_triplet(n + e, n + e, FLAT_PRECISION);
    }
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(3 + f);
    for (i, row) in proj.rows().iter().enumerate() {
        let row = row.expect("validated");
        entries.clear();
        entries.extend(row.nodes.iter().copied().zip(row.weights));
        entries.extend(covariates.iter().enumerate().map(|(e, x)| (n + e, x[i])));
        for &(a, wa) in &entries {
            for &(b, wb) in &entries {
                t.add_triplet(a, b, wa * wb / noise_var);
            }
        }
    }
    Ok(SparseSpd::new_unchecked(t.to_csr()))
}

/// `P̃ᵀ y / σ²`
pub fn posterior_rhs(n: usize, proj: &Projector, noise_var: f64, y: &[f64], covariates: &[Vec<f64>]) -> Vec<f64> {
    let mut b = vec![0.0; n + covariates.len()];
    for (i, row) in proj.rows().iter().enumerate() {
        if let Some(row) = row {
            for k in 0..3 {
                b[row.nodes[k]] += row.weights[k] * y[i] / noise_var;
            }
            for (e, x) in covariates.iter().enumerate() {
                b[n + e] += x[i] * y[i] / noise_var;
            }
        }
    }
    b
}

fn check_observation_inputs(
    prior: &SparseSpd,
    proj: &Projector,
    noise_var: f64,
    y_len: usize,
    covariates: &[Vec<f64>],
) -> Result<()> {
    if proj.node_count() != prior.n() {
        return Err(Error::DimensionMismatch {
            expected: prior.n(),
            got: proj.node_count(),
        });
    }
    if y_len != proj.len() {
        return Err(Error::DimensionMismatch {
            expected: proj.len(),
            got: y_len,
        });
    }
    if let Some(x) = covariates.iter().find(|x| x.len() != proj.len()) {
        return Err(Error::DimensionMismatch {
            expected: proj.len(),
            got: x.len(),
        });
    }
    if !(noise_var > 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance must be > 0, got {noise_var}")));
    }
    let invalid = proj.invalid_rows();
    if !invalid.is_empty() {
        return Err(Error::OutsideMesh { indices: invalid });
    }
    Ok(())
}

/// Conditions `x ~ N(0, Q⁻¹)` (plus flat fixed effects with design columns
/// `covariates`) on `y = P x + X β + ε`, `ε ~ N(0, σ² I)`.
pub fn condition(
    prior: &SparseSpd,
    proj: &Projector,
    noise_var: f64,
    y: &[f64],
    covariates: &[Vec<f64>],
) -> Result<Posterior> {
    condition_ordered(prior, proj, noise_var, y, covariates, None)
}

/// [`condition`] with a given elimination order for the field nodes
/// (`order[new] = old`); the fixed effects always come last.
pub fn condition_ordered(
    prior: &SparseSpd,
    proj: &Projector,
    noise_var: f64,
    y: &[f64],
    covariates: &[Vec<f64>],
    field_order: Option<&[usize]>,
) -> Result<Posterior> {
    check_observation_inputs(prior, proj, noise_var, y.len(), covariates)?;
    let precision = posterior_precision(prior, proj, noise_var, covariates)?;
    let last: Vec<usize> = (prior.n()..precision.n()).collect();
    let symbolic = match field_order {
        Some(order) => {
            if order.len() != prior.n() {
                return Err(Error::DimensionMismatch {
                    expected: prior.n(),
                    got: order.len(),
                });
            }
            Symbolic::with_permutation(&precision, order.iter().copied().chain(last).collect())
        }
        None => Symbolic::analyze(&precision, &last),
    };
    let fac = Factorization::new(Arc::new(symbolic), &precision)?;
    let mut mean = posterior_rhs(prior.n(), proj, noise_var, y, covariates);
    fac.solve_in_place(&mut mean)?;
    Ok(Posterior {
        mean,
        precision,
        factor: fac,
        field_len: prior.n(),
    })
}
