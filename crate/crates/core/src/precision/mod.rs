//! Precision matrices of the stationary, barrier and Neumann Matérn fields
//! (smoothness ν = 1) on a finite-element mesh.
//!
//! With per-subdomain ranges `r_q` the field solves
//! `u − ∇·(r(s)²/8)∇u = r(s)·√(π/2)·σ_u·W` and is discretised as
//!
//! ```text
//! A = J + (1/8) Σ_q r_q² D_q
//! C̃ = (π/2) Σ_q r_q² C_q            (diagonal)
//! Q = A C̃⁻¹ A / σ_u²
//! ```

pub mod bessel;
mod template;

use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

pub use template::PrecisionTemplate;

use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::gmrf::{factorize, Factorization, SparseSpd, Symbolic};
use crate::sparse::divide_columns;

/// Barrier range as a fraction of the normal range when nothing else is given.
pub const DEFAULT_BARRIER_FRACTION: f64 = 0.1;

/// Matérn correlation `(d√8/r)·K₁(d√8/r)`; 1 at `d = 0`, about 0.14 at `d = r`.
pub fn matern_correlation(d: f64, r: f64) -> f64 {
    assert!(d >= 0.0 && r > 0.0, "matern_correlation needs d ≥ 0 and r > 0");
    bessel::x_k1(d * 8f64.sqrt() / r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Stationary field on the whole (convex, extended) mesh.
    Ms,
    /// Barrier field: short range on barrier triangles.
    Mb,
    /// Stationary field on the mesh restricted to the normal area.
    Mn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ms, ModelKind::Mb, ModelKind::Mn];

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Ms => "MS",
            ModelKind::Mb => "MB",
            ModelKind::Mn => "MN",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ms" => Ok(ModelKind::Ms),
            "mb" => Ok(ModelKind::Mb),
            "mn" => Ok(ModelKind::Mn),
            other => Err(Error::InvalidParameter(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Hyperparameters of the field: range in the normal area, the ratio of every
/// other subdomain's range to it, and the marginal standard deviation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub range: f64,
    pub sigma_u: f64,
    /// `r_q = multipliers[q - 1] · range`; the first entry is always 1.
    pub multipliers: Vec<f64>,
}

impl BarrierSpec {
    /// Single subdomain.
    pub fn stationary(range: f64, sigma_u: f64) -> Result<Self> {
        Self::with_multipliers(range, sigma_u, vec![1.0])
    }

    /// Two subdomains with `r_b = barrier_fraction · r`.
    pub fn barrier(range: f64, sigma_u: f64, barrier_fraction: f64) -> Result<Self> {
        if !(barrier_fraction > 0.0 && barrier_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "barrier fraction must be in (0, 1], got {barrier_fraction}"
            )));
        }
        Self::with_multipliers(range, sigma_u, vec![1.0, barrier_fraction])
    }

    pub fn with_multipliers(range: f64, sigma_u: f64, multipliers: Vec<f64>) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidParameter(format!("range must be > 0, got {range}")));
        }
        if !(sigma_u > 0.0 && sigma_u.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma_u must be > 0, got {sigma_u}")));
        }
        if multipliers.first() != Some(&1.0) || multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "range multipliers must start with 1 and be positive, got {multipliers:?}"
            )));
        }
        Ok(Self {
            range,
            sigma_u,
            multipliers,
        })
    }

    pub fn barrier_fraction(&self) -> Option<f64> {
        self.multipliers.get(1).copied()
    }

    pub fn subdomain_count(&self) -> usize {
        self.multipliers.len()
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.multipliers.iter().map(|m| m * self.range).collect()
    }
}

fn check_ranges(fem: &FemMatrices, ranges: &[f64]) -> Result<()> {
    if ranges.len() != fem.subdomain_count() {
        return Err(Error::DimensionMismatch {
            expected: fem.subdomain_count(),
            got: ranges.len(),
        });
    }
    Ok(())
}

/// `A = J + (1/8) Σ_q r_q² D_q`.
pub fn assemble_a(fem: &FemMatrices, ranges: &[f64]) -> Result<CsMat<f64>> {
    check_ranges(fem, ranges)?;
    let n = fem.node_count();
    let mut t = TriMat::with_capacity((n, n), fem.mass.nnz() * (1 + ranges.len()));
    for (v, (i, j)) in fem.mass.iter() {
        t.add_triplet(i, j, *v);
    }
    for (d, r) in fem.stiffness.iter().zip(ranges) {
        let w = r * r / 8.0;
        for (v, (i, j)) in d.iter() {
            t.add_triplet(i, j, w * v);
        }
    }
    Ok(t.to_csr())
}

/// Diagonal of `C̃ = (π/2) Σ_q r_q² C_q`.
pub fn noise_diagonal(fem: &FemMatrices, ranges: &[f64]) -> Result<Vec<f64>> {
    check_ranges(fem, ranges)?;
    let mut c = vec![0.0; fem.node_count()];
    for (lumped, r) in fem.lumped.iter().zip(ranges) {
        let w = std::f64::consts::FRAC_PI_2 * r * r;
        for (ci, li) in c.iter_mut().zip(lumped) {
            *ci += w * li;
        }
    }
    if let Some(node) = c.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroLumpedMass { node });
    }
    Ok(c)
}

/// Where a precision matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ModelKind,
    pub spec: BarrierSpec,
    pub mesh_id: String,
    pub rescaled: bool,
}

/// `Q = A C̃⁻¹ A / σ_u²` together with a lazily computed factorization.
#[derive(Debug, Clone)]
pub struct PrecisionOperator {
    q: SparseSpd,
    provenance: Provenance,
    factor: OnceLock<Factorization>,
    variances: OnceLock<Vec<f64>>,
    /// Analysis to reuse when factorizing, if one exists for this pattern.
    symbolic: Option<Arc<Symbolic>>,
}

/// Builds the precision of `kind` from assembled matrices. The caller supplies
/// the FEM matrices of the right mesh (restricted mesh for `Mn`).
pub fn assemble_q(fem: &FemMatrices, spec: &BarrierSpec, kind: ModelKind, mesh_id: &str) -> Result<PrecisionOperator> {
    let ranges = spec.ranges();
    let a = assemble_a(fem, &ranges)?;
    let c = noise_diagonal(fem, &ranges)?;
    let q: CsMat<f64> = &divide_columns(&a, &c) * &a;
    let s = 1.0 / (spec.sigma_u * spec.sigma_u);
    let q = symmetrize(q.map(|v| v * s));
    Ok(PrecisionOperator {
        q: SparseSpd::new(q)?,
        provenance: Provenance {
            kind,
            spec: spec.clone(),
            mesh_id: mesh_id.to_string(),
            rescaled: false,
        },
        factor: OnceLock::new(),
        variances: OnceLock::new(),
        symbolic: None,
    })
}

/// `(M + Mᵀ)/2`, to remove round-off asymmetry from products.
fn symmetrize(m: CsMat<f64>) -> CsMat<f64> {
    let t: CsMat<f64> = m.transpose_view().to_csr();
    let mut out = m;
    if out.indptr() == t.indptr() && out.indices() == t.indices() {
        for (v, w) in out.data_mut().iter_mut().zip(t.data()) {
            *v = 0.5 * (*v + w);
        }
        out
    } else {
        (&out + &t).map(|v| 0.5 * v)
    }
}

impl PrecisionOperator {
    pub fn from_parts(q: SparseSpd, provenance: Provenance) -> Self {
        Self {
            q,
            provenance,
            factor: OnceLock::new(),
            variances: OnceLock::new(),
            symbolic: None,
        }
    }

    /// Reuses `symbolic` for the factorization when it matches the pattern of `Q`.
    pub fn with_symbolic(mut self, symbolic: Arc<Symbolic>) -> Self {
        self.symbolic = Some(symbolic);
        self
    }

    pub fn q(&self) -> &SparseSpd {
        &self.q
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn node_count(&self) -> usize {
        self.q.n()
    }

    /// Factorizes on first use; later calls share the same factor.
    pub fn factorization(&self) -> Result<&Factorization> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = match &self.symbolic {
            Some(s) if s.matches(&self.q) => Factorization::new(s.clone(), &self.q)?,
            _ => factorize(&self.q)?,
        };
        Ok(self.factor.get_or_init(|| f))
    }

    pub fn marginal_variances(&self) -> Result<&[f64]> {
        if let Some(v) = self.variances.get() {
            return Ok(v);
        }
        let v = self.factorization()?.marginal_variances();
        Ok(self.variances.get_or_init(|| v))
    }

    /// `√diag(Q⁻¹)`
    pub fn marginal_sd(&self) -> Result<Vec<f64>> {
        Ok(self.marginal_variances()?.iter().map(|v| v.sqrt()).collect())
    }

    /// Correlation between every node and `node`, from one solve plus the marginal variances.
    pub fn correlation_surface(&self, node: usize) -> Result<Vec<f64>> {
        let n = self.node_count();
        if node >= n {
            return Err(Error::InvalidParameter(format!("node {node} out of range (n = {n})")));
        }
        let f = self.factorization()?;
        let mut e = vec![0.0; n];
        e[node] = 1.0;
        f.solve_in_place(&mut e)?;
        let var = self.marginal_variances()?;
        let s0 = var[node].sqrt();
        let mut corr: Vec<f64> = e
            .iter()
            .zip(var)
            .map(|(c, v)| (c / (v.sqrt() * s0)).clamp(-1.0, 1.0))
            .collect();
        corr[node] = 1.0;
        Ok(corr)
    }

    pub fn correlation(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.correlation_surface(i)?[j])
    }

    /// `S Q S` with `S = diag(marginal sd)`, so every marginal sd becomes 1.
    pub fn rescale_to_unit_variance(&self) -> Result<PrecisionOperator> {
        let sd = self.marginal_sd()?;
        let mut provenance = self.provenance.clone();
        provenance.rescaled = true;
        let mut out = Self::from_parts(self.q.diag_scaled(&sd), provenance);
        out.symbolic = self.symbolic.clone();
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.factorization()?.sample(rng))
    }
}
