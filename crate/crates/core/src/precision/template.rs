//! Precision matrices for many ranges at fixed range multipliers.
//!
//! With `r_q = m_q r`, `c = Σ m_q² C_q` and `D = Σ m_q² D_q`,
//!
//! ```text
//! Q(r, σ) = 2 / (π r² σ²) · [K₀ + (r²/8) K₁ + (r⁴/64) K₂]
//! K₀ = J c⁻¹ J,  K₁ = J c⁻¹ D + D c⁻¹ J,  K₂ = D c⁻¹ D
//! ```
//!
//! so a new range costs one pass over the nonzeros.

use std::sync::{Arc, OnceLock};

use sprs::{CsMat, TriMat};

use super::{BarrierSpec, ModelKind, PrecisionOperator, Provenance};
use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::gmrf::ordering::nested_dissection;
use crate::gmrf::{Factorization, SparseSpd, Symbolic};
use crate::sparse::{divide_columns, scatter, union_pattern};

#[derive(Debug)]
pub struct PrecisionTemplate {
    multipliers: Vec<f64>,
    /// Union pattern of `K₀, K₁, K₂` (the pattern of `Q`).
    q_pattern: CsMat<f64>,
    k0: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    /// Union pattern of `J` and `D` (the pattern of `A`).
    a_pattern: CsMat<f64>,
    a_mass: Vec<f64>,
    a_stiff: Vec<f64>,
    /// `Σ_i ln c_i`
    log_c_sum: f64,
    a_symbolic: OnceLock<Arc<Symbolic>>,
    q_symbolic: OnceLock<Arc<Symbolic>>,
    /// Node coordinates; when present the orderings use nested dissection.
    coords: Option<Vec<[f64; 2]>>,
}

impl PrecisionTemplate {
    pub fn new(fem: &FemMatrices, multipliers: &[f64]) -> Result<Self> {
        if multipliers.len() != fem.subdomain_count() {
            return Err(Error::DimensionMismatch {
                expected: fem.subdomain_count(),
                got: multipliers.len(),
            });
        }
        // validates the multipliers
        BarrierSpec::with_multipliers(1.0, 1.0, multipliers.to_vec())?;
        let n = fem.node_count();
        let mut c = vec![0.0; n];
        for (lumped, m) in fem.lumped.iter().zip(multipliers) {
            for (ci, li) in c.iter_mut().zip(lumped) {
                *ci += m * m * li;
            }
        }
        if let Some(node) = c.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::ZeroLumpedMass { node });
        }
        let mut t = TriMat::new((n, n));
        for (d, m) in fem.stiffness.iter().zip(multipliers) {
            for (v, (i, j)) in d.iter() {
                t.add_triplet(i, j, m * m * v);
            }
        }
        let d: CsMat<f64> = t.to_csr();
        let j = &fem.mass;

        let jc = divide_columns(j, &c);
        let dc = divide_columns(&d, &c);
        let k0m: CsMat<f64> = &jc * j;
        let jcd: CsMat<f64> = &jc * &d;
        let dcj: CsMat<f64> = &dc * j;
        let k2m: CsMat<f64> = &dc * &d;

        let a_pattern = union_pattern(n, &[j, &d]);
        let q_pattern = {
            let a: CsMat<f64> = &a_pattern * &a_pattern;
            a.map(|_| 1.0)
        };
        let k0 = scatter(&q_pattern, &k0m);
        let mut k1 = scatter(&q_pattern, &jcd);
        for (x, y) in k1.iter_mut().zip(scatter(&q_pattern, &dcj)) {
            *x += y;
        }
        let k2 = scatter(&q_pattern, &k2m);
        Ok(Self {
            multipliers: multipliers.to_vec(),
            a_mass: scatter(&a_pattern, j),
            a_stiff: scatter(&a_pattern, &d),
            log_c_sum: c.iter().map(|x| x.ln()).sum(),
            q_pattern,
            k0,
            k1,
            k2,
            a_pattern,
            a_symbolic: OnceLock::new(),
            q_symbolic: OnceLock::new(),
            coords: None,
        })
    }

    /// Attaches node coordinates so that factorizations use a geometric
    /// nested-dissection ordering instead of minimum degree.
    pub fn with_coordinates(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.node_count() {
            return Err(Error::DimensionMismatch {
                expected: self.node_count(),
                got: coords.len(),
            });
        }
        self.coords = Some(coords);
        self.a_symbolic = OnceLock::new();
        self.q_symbolic = OnceLock::new();
        Ok(self)
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn node_count(&self) -> usize {
        self.q_pattern.rows()
    }

    /// Sparsity pattern shared by every `Q` this template produces.
    pub fn q_pattern(&self) -> &CsMat<f64> {
        &self.q_pattern
    }

    /// Values of `Q(r, 1)` aligned with [`Self::q_pattern`].
    pub fn unit_q_values(&self, range: f64, out: &mut [f64]) {
        let r2 = range * range;
        let (a, b) = (r2 / 8.0, r2 * r2 / 64.0);
        let s = 2.0 / (std::f64::consts::PI * r2);
        for (((o, k0), k1), k2) in out.iter_mut().zip(&self.k0).zip(&self.k1).zip(&self.k2) {
            *o = s * (k0 + a * k1 + b * k2);
        }
    }

    pub fn q(&self, range: f64, sigma_u: f64) -> SparseSpd {
        let mut values = vec![0.0; self.q_pattern.nnz()];
        self.unit_q_values(range, &mut values);
        let s = 1.0 / (sigma_u * sigma_u);
        values.iter_mut().for_each(|v| *v *= s);
        let mut m = self.q_pattern.clone();
        m.data_mut().copy_from_slice(&values);
        SparseSpd::new_unchecked(m)
    }

    /// `A(r) = J + (r²/8) D`
    pub fn a(&self, range: f64) -> SparseSpd {
        let w = range * range / 8.0;
        let mut m = self.a_pattern.clone();
        for ((o, j), d) in m.data_mut().iter_mut().zip(&self.a_mass).zip(&self.a_stiff) {
            *o = j + w * d;
        }
        SparseSpd::new_unchecked(m)
    }

    fn symbolic(&self, cell: &OnceLock<Arc<Symbolic>>, m: &SparseSpd) -> Arc<Symbolic> {
        cell.get_or_init(|| {
            Arc::new(match &self.coords {
                Some(c) => Symbolic::with_permutation(m, nested_dissection(m.matrix(), c, &[])),
                None => Symbolic::analyze(m, &[]),
            })
        })
        .clone()
    }

    /// `ln det Q(r, σ) = 2 ln det A − ln det C̃ − n ln σ²`, from a factorization of the sparser `A`.
    pub fn logdet_q(&self, range: f64, sigma_u: f64) -> Result<f64> {
        let a = self.a(range);
        let fac = Factorization::new(self.symbolic(&self.a_symbolic, &a), &a)?;
        let n = self.node_count() as f64;
        let log_ct = n * (std::f64::consts::FRAC_PI_2 * range * range).ln() + self.log_c_sum;
        Ok(2.0 * fac.logdet() - log_ct - n * (sigma_u * sigma_u).ln())
    }

    /// Symbolic analysis of the `Q` pattern, computed once.
    pub fn q_symbolic(&self) -> Arc<Symbolic> {
        let pattern = SparseSpd::new_unchecked(self.q_pattern.clone());
        self.symbolic(&self.q_symbolic, &pattern)
    }

    /// Factorization of `Q(r, σ)` reusing one symbolic analysis for all ranges.
    pub fn factorize_q(&self, range: f64, sigma_u: f64) -> Result<Factorization> {
        Factorization::new(self.q_symbolic(), &self.q(range, sigma_u))
    }

    pub fn operator(&self, range: f64, sigma_u: f64, kind: ModelKind, mesh_id: &str) -> Result<PrecisionOperator> {
        let spec = BarrierSpec::with_multipliers(range, sigma_u, self.multipliers.clone())?;
        Ok(PrecisionOperator::from_parts(
            self.q(range, sigma_u),
            Provenance {
                kind,
                spec,
                mesh_id: mesh_id.to_string(),
                rescaled: false,
            },
        )
        .with_symbolic(self.q_symbolic()))
    }
}
