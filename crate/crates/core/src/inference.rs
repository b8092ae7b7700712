//! Gaussian observation model on top of the field priors:
//!
//! ```text
//! y_i = β₀ + u(s_i) + ε_i,   ε_i ~ N(0, σ_ε²),   u ~ N(0, Q(r, σ_u)⁻¹)
//! ```
//!
//! with an almost flat Gaussian prior on the intercept. Hyperparameters are
//! either fixed or chosen by maximising the exact log evidence plus the log PC
//! prior over logarithmic grids.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::fem::{assemble_with_subdomains, FemMatrices};
use crate::gmrf::{condition, condition_ordered, factorize, posterior_rhs, Factorization, Posterior, SelectedInverse, SparseSpd, Symbolic, FLAT_PRECISION};
use crate::mesh::{project_points, restrict_to_subdomain, Point, Projector, TriangleMesh};
use crate::precision::{BarrierSpec, ModelKind, PrecisionOperator, PrecisionTemplate};
use crate::sparse::{scatter, union_pattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub locations: Vec<Point>,
    pub values: Vec<f64>,
    /// Known noise standard deviation, if any. Only informational.
    #[serde(default)]
    pub noise_sd: Option<f64>,
}

impl ObservationSet {
    pub fn new(locations: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if locations.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                got: values.len(),
            });
        }
        if let Some(i) = (0..values.len())
            .find(|&i| !values[i].is_finite() || !locations[i].iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidParameter(format!("observation {i} is not finite")));
        }
        Ok(Self {
            locations,
            values,
            noise_sd: None,
        })
    }

    /// Reads CSV with a header containing `x`, `y` and `value` columns.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            y: f64,
            value: f64,
        }
        let mut locations = Vec::new();
        let mut values = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: Row = row?;
            locations.push([row.x, row.y]);
            values.push(row.value);
        }
        Self::new(locations, values)
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Self {
        self.noise_sd = Some(sd);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exponential priors on `σ_ε`, `σ_u` and `1/r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPriors {
    pub lambda_eps: f64,
    pub lambda_sigma_u: f64,
    pub lambda_inv_range: f64,
}

impl PcPriors {
    pub fn new(lambda_eps: f64, lambda_sigma_u: f64, lambda_inv_range: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda_eps", lambda_eps),
            ("lambda_sigma_u", lambda_sigma_u),
            ("lambda_inv_range", lambda_inv_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self {
            lambda_eps,
            lambda_sigma_u,
            lambda_inv_range,
        })
    }

    /// Rates of the horseshoe study: 1.5 for both standard deviations and a
    /// prior median range of 1.
    pub fn horseshoe() -> Self {
        Self {
            lambda_eps: 1.5,
            lambda_sigma_u: 1.5,
            lambda_inv_range: Self::rate_for_range_median(1.0),
        }
    }

    /// `λ₁` with `P(r < median) = 1/2` when `1/r ~ Exp(λ₁)`.
    pub fn rate_for_range_median(median: f64) -> f64 {
        median * LN_2
    }

    pub fn range_median(&self) -> f64 {
        self.lambda_inv_range / LN_2
    }

    pub fn sigma_eps_median(&self) -> f64 {
        LN_2 / self.lambda_eps
    }

    pub fn sigma_u_median(&self) -> f64 {
        LN_2 / self.lambda_sigma_u
    }
}

/// `ln(λ e^{−λσ})`
pub fn log_density_sd(lambda: f64, sigma: f64) -> f64 {
    lambda.ln() - lambda * sigma
}

/// Density of `r` when `1/r ~ Exp(λ)`: `ln(λ e^{−λ/r} / r²)`.
pub fn log_density_range(lambda: f64, range: f64) -> f64 {
    lambda.ln() - lambda / range - 2.0 * range.ln()
}

pub fn pc_log_prior(priors: &PcPriors, range: f64, sigma_u: f64, sigma_eps: f64) -> Result<f64> {
    if !(range > 0.0 && sigma_u > 0.0 && sigma_eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prior needs positive arguments, got r = {range}, sigma_u = {sigma_u}, sigma_eps = {sigma_eps}"
        )));
    }
    Ok(log_density_sd(priors.lambda_eps, sigma_eps)
        + log_density_sd(priors.lambda_sigma_u, sigma_u)
        + log_density_range(priors.lambda_inv_range, range))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub range: f64,
    pub sigma_u: f64,
    pub sigma_eps: f64,
}

impl HyperParams {
    pub fn new(range: f64, sigma_u: f64, sigma_eps: f64) -> Result<Self> {
        if !(range > 0.0 && sigma_u > 0.0 && sigma_eps > 0.0) || !(range * sigma_u * sigma_eps).is_finite() {
            return Err(Error::InvalidParameter(format!(
                "hyperparameters must be positive, got r = {range}, sigma_u = {sigma_u}, sigma_eps = {sigma_eps}"
            )));
        }
        Ok(Self {
            range,
            sigma_u,
            sigma_eps,
        })
    }
}

/// Logarithmic grids for the MAP search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub range: [f64; 2],
    pub sigma_u: [f64; 2],
    pub sigma_eps: [f64; 2],
    /// Points per hyperparameter.
    pub points: usize,
    /// Evaluate the half-step neighbourhood of the grid maximizer.
    pub refine: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            range: [0.1, 10.0],
            sigma_u: [0.01, 10.0],
            sigma_eps: [0.01, 10.0],
            points: 15,
            refine: true,
        }
    }
}

impl GridSpec {
    /// Default grids with the range interval multiplied by `length`.
    pub fn for_length_scale(length: f64) -> Self {
        let d = Self::default();
        Self {
            range: [d.range[0] * length, d.range[1] * length],
            ..d
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("range", self.range), ("sigma_u", self.sigma_u), ("sigma_eps", self.sigma_eps)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} grid must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if self.points == 0 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HyperMode {
    Fixed(HyperParams),
    Map { priors: PcPriors, grid: GridSpec },
}

/// A field prior of one kind on a labelled mesh: the mesh the field lives on,
/// its FEM matrices, and a template for fast rebuilds of `Q`.
#[derive(Debug)]
pub struct FieldModel {
    kind: ModelKind,
    mesh: TriangleMesh,
    parent_node: Option<Vec<usize>>,
    fem: FemMatrices,
    template: PrecisionTemplate,
    mesh_id: String,
}

impl FieldModel {
    /// `Ms` ignores the labels, `Mb` gives every label above 1 the range
    /// `barrier_fraction · r`, `Mn` keeps only the label-1 triangles.
    pub fn new(mesh: &TriangleMesh, kind: ModelKind, barrier_fraction: f64) -> Result<Self> {
        let mesh_id = mesh.id();
        let (mesh, parent_node, multipliers) = match kind {
            ModelKind::Ms => (mesh.with_subdomain(vec![1; mesh.triangle_count()])?, None, vec![1.0]),
            ModelKind::Mb => {
                // validates the fraction
                BarrierSpec::barrier(1.0, 1.0, barrier_fraction)?;
                let k = mesh.subdomain_count().max(2);
                let mut m = vec![barrier_fraction; k];
                m[0] = 1.0;
                (mesh.clone(), None, m)
            }
            ModelKind::Mn => {
                let r = restrict_to_subdomain(mesh, 1)?;
                (r.mesh, Some(r.parent_node), vec![1.0])
            }
        };
        let fem = assemble_with_subdomains(&mesh, multipliers.len())?;
        let template = PrecisionTemplate::new(&fem, &multipliers)?.with_coordinates(mesh.vertices().to_vec())?;
        Ok(Self {
            kind,
            mesh,
            parent_node,
            fem,
            template,
            mesh_id,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// The mesh the field is defined on (the restricted mesh for `Mn`).
    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// For `Mn`, the parent-mesh index of every node.
    pub fn parent_node(&self) -> Option<&[usize]> {
        self.parent_node.as_deref()
    }

    pub fn fem(&self) -> &FemMatrices {
        &self.fem
    }

    pub fn template(&self) -> &PrecisionTemplate {
        &self.template
    }

    pub fn node_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn spec(&self, range: f64, sigma_u: f64) -> Result<BarrierSpec> {
        BarrierSpec::with_multipliers(range, sigma_u, self.template.multipliers().to_vec())
    }

    pub fn precision(&self, range: f64, sigma_u: f64) -> Result<PrecisionOperator> {
        self.template.operator(range, sigma_u, self.kind, &self.mesh_id)
    }

    pub fn project(&self, points: &[Point]) -> Projector {
        project_points(&self.mesh, points)
    }

    fn project_observations(&self, obs: &ObservationSet) -> Result<Projector> {
        let proj = self.project(&obs.locations);
        let invalid = proj.invalid_rows();
        if !invalid.is_empty() {
            return Err(Error::OutsideMesh { indices: invalid });
        }
        Ok(proj)
    }

    /// Exact `ln p(y | r, σ_u, σ_ε)` with the intercept integrated out.
    pub fn log_evidence(&self, obs: &ObservationSet, theta: &HyperParams) -> Result<f64> {
        let proj = self.project_observations(obs)?;
        log_marginal_likelihood(&self.template.q(theta.range, theta.sigma_u), &proj, &obs.values, theta.sigma_eps.powi(2))
    }

    /// Log evidence plus log prior, the quantity the MAP search maximises.
    pub fn map_objective(&self, obs: &ObservationSet, theta: &HyperParams, priors: &PcPriors) -> Result<f64> {
        Ok(self.log_evidence(obs, theta)? + pc_log_prior(priors, theta.range, theta.sigma_u, theta.sigma_eps)?)
    }
}

fn intercept(m: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0; m]]
}

/// `ln p(y)` for `y = P x + β₀ + ε` from prior and posterior log-determinants:
///
/// ```text
/// −(m/2) ln(2πσ²) + ½ ln|Q_x| − ½ ln|Q_post| − ½ (yᵀy/σ² − bᵀμ)
/// ```
///
/// where `Q_x = blockdiag(Q, τ)`, `b = P̃ᵀy/σ²` and `μ = Q_post⁻¹ b`.
pub fn log_marginal_likelihood(prior: &SparseSpd, proj: &Projector, y: &[f64], noise_var: f64) -> Result<f64> {
    let post = condition(prior, proj, noise_var, y, &intercept(y.len()))?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let logdet_prior = factorize(prior)?.logdet();
    Ok(evidence_from_posterior(logdet_prior, &post, proj, y, noise_var))
}

fn evidence_from_posterior(logdet_prior: f64, post: &Posterior, proj: &Projector, y: &[f64], noise_var: f64) -> f64 {
    let m = y.len() as f64;
    let b = posterior_rhs(post.field_len, proj, noise_var, y, &intercept(y.len()));
    let b_mu: f64 = b.iter().zip(&post.mean).map(|(a, c)| a * c).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    -0.5 * m * (2.0 * std::f64::consts::PI * noise_var).ln() + 0.5 * (logdet_prior + FLAT_PRECISION.ln())
        - 0.5 * post.factor.logdet()
        - 0.5 * (yy / noise_var - b_mu)
}

/// Posterior covariance entries needed for predictive standard deviations.
#[derive(Debug, Clone)]
struct PosteriorCovariance {
    selected: SelectedInverse,
    /// Column of the posterior covariance belonging to the intercept.
    intercept_column: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Numeric factorizations done by the search.
    pub factorizations: usize,
    /// Hyperparameter points whose objective was evaluated.
    pub evaluations: usize,
    /// Objective (log evidence + log prior) at the estimate, map mode only.
    pub log_objective: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub hyper: HyperParams,
    pub log_evidence: f64,
    pub intercept_mean: f64,
    pub intercept_sd: f64,
    pub diagnostics: FitDiagnostics,
    /// Posterior mean of the field at the model's mesh nodes.
    #[serde(skip_serializing, default)]
    pub mean: Vec<f64>,
    /// Posterior standard deviation of the field at the model's mesh nodes.
    #[serde(skip_serializing, default)]
    pub sd: Vec<f64>,
    #[serde(skip)]
    covariance: Option<Arc<PosteriorCovariance>>,
}

/// Predictive mean and sd of `β₀ + u(s)`; NaN for points outside the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub outside: Vec<usize>,
}

pub fn fit(model: &FieldModel, obs: &ObservationSet, mode: &HyperMode) -> Result<FitResult> {
    let proj = model.project_observations(obs)?;
    let (hyper, diagnostics) = match mode {
        HyperMode::Fixed(theta) => (*theta, FitDiagnostics::default()),
        HyperMode::Map { priors, grid } => {
            let found = MapSearch::new(model, &proj, &obs.values, *priors, *grid)?.run()?;
            (found.0, found.1)
        }
    };
    HyperParams::new(hyper.range, hyper.sigma_u, hyper.sigma_eps)?;
    let noise_var = hyper.sigma_eps * hyper.sigma_eps;
    let q = model.template.q(hyper.range, hyper.sigma_u);
    let order = model.template.q_symbolic();
    let post = condition_ordered(
        &q,
        &proj,
        noise_var,
        &obs.values,
        &intercept(obs.len()),
        Some(order.permutation()),
    )?;
    let log_evidence = if obs.is_empty() {
        0.0
    } else {
        let logdet_prior = model.template.logdet_q(hyper.range, hyper.sigma_u)?;
        evidence_from_posterior(logdet_prior, &post, &proj, &obs.values, noise_var)
    };
    let n = model.node_count();
    let selected = post.factor.selected_inverse();
    let var = selected.diagonal();
    let mut e = vec![0.0; n + 1];
    e[n] = 1.0;
    post.factor.solve_in_place(&mut e)?;
    Ok(FitResult {
        model: model.kind,
        hyper,
        log_evidence,
        intercept_mean: post.mean[n],
        intercept_sd: var[n].sqrt(),
        diagnostics,
        mean: post.mean[..n].to_vec(),
        sd: var[..n].iter().map(|v| v.max(0.0).sqrt()).collect(),
        covariance: Some(Arc::new(PosteriorCovariance {
            selected,
            intercept_column: e,
        })),
    })
}

/// Predictions of `β₀ + u(s)` at arbitrary points, with the intercept's
/// uncertainty and its covariance with the field included.
pub fn predict(fit: &FitResult, model: &FieldModel, points: &[Point]) -> Result<Prediction> {
    let cov = fit
        .covariance
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("fit result carries no posterior covariance".into()))?;
    if fit.mean.len() != model.node_count() || fit.model != model.kind {
        return Err(Error::DimensionMismatch {
            expected: model.node_count(),
            got: fit.mean.len(),
        });
    }
    let proj = model.project(points);
    let n = model.node_count();
    let mut mean = Vec::with_capacity(points.len());
    let mut sd = Vec::with_capacity(points.len());
    for row in proj.rows() {
        let Some(row) = row else {
            mean.push(f64::NAN);
            sd.push(f64::NAN);
            continue;
        };
        mean.push(fit.intercept_mean + row.interpolate(&fit.mean));
        let mut var = cov.intercept_column[n];
        for a in 0..3 {
            var += 2.0 * row.weights[a] * cov.intercept_column[row.nodes[a]];
            for b in 0..3 {
                let s = cov
                    .selected
                    .get(row.nodes[a], row.nodes[b])
                    .expect("nodes of one triangle are coupled in the posterior");
                var += row.weights[a] * row.weights[b] * s;
            }
        }
        sd.push(var.max(0.0).sqrt());
    }
    Ok(Prediction {
        mean,
        sd,
        outside: proj.invalid_rows(),
    })
}

/// Points `lo · (hi/lo)^(t / (2·steps))` for `t = 0..=2·steps`: the grid at even
/// `t`, half steps at odd `t`.
#[derive(Debug, Clone, Copy)]
struct Lattice {
    lo: f64,
    hi: f64,
    steps: usize,
}

impl Lattice {
    fn new(bounds: [f64; 2], points: usize) -> Self {
        Self {
            lo: bounds[0],
            hi: bounds[1],
            steps: points - 1,
        }
    }

    fn top(&self) -> i64 {
        2 * self.steps as i64
    }

    fn value(&self, t: i64) -> f64 {
        if self.steps == 0 {
            return self.lo;
        }
        if t == self.top() {
            return self.hi;
        }
        self.lo * (self.hi / self.lo).powf(t as f64 / self.top() as f64)
    }

    fn contains(&self, t: i64) -> bool {
        (0..=self.top()).contains(&t)
    }
}

/// Evidence quantities that depend only on `(r, κ = σ_ε²/σ_u²)`.
///
/// With `M = κ Q(r, 1) + PᵀP`, `g = Pᵀy`, `p = Pᵀ1`, `v = M⁻¹g`, `w = M⁻¹p`,
/// the intercept is eliminated by its Schur complement `s = m + σ_ε²τ − pᵀw`
/// and, for any `σ_ε` on the diagonal,
///
/// ```text
/// ln p(y) = −(m/2) ln(2πσ_ε²) + ½ (ln|Q(r,1)| − n ln σ_u² + ln τ)
///           − ½ (ln|M| + ln s − (n+1) ln σ_ε²)
///           − ½ (yᵀy − gᵀv − (Σy − pᵀv)²/s) / σ_ε²
/// ```
#[derive(Debug, Clone, Copy)]
struct DiagonalStats {
    logdet_m: f64,
    gv: f64,
    pv: f64,
    pw: f64,
}

struct MapSearch<'a> {
    template: &'a PrecisionTemplate,
    priors: PcPriors,
    grid: GridSpec,
    lattices: [Lattice; 3],
    m_pattern: CsMat<f64>,
    m_symbolic: Arc<Symbolic>,
    /// `q_slot[k]` is where entry `k` of the `Q` pattern lands in `M`.
    q_slot: Vec<usize>,
    ptp: Vec<f64>,
    g: Vec<f64>,
    p: Vec<f64>,
    y_sum: f64,
    yy: f64,
    m: usize,
    n: usize,
    logdet_q1: HashMap<i64, Option<f64>>,
    stats: HashMap<(i64, i64), Option<DiagonalStats>>,
    objective: HashMap<(i64, i64, i64), f64>,
    factorizations: usize,
}

impl<'a> MapSearch<'a> {
    fn new(model: &'a FieldModel, proj: &Projector, y: &[f64], priors: PcPriors, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let template = &model.template;
        let n = template.node_count();
        let mut t = TriMat::new((n, n));
        let mut g = vec![0.0; n];
        let mut p = vec![0.0; n];
        for (row, &yi) in proj.rows().iter().zip(y) {
            let row = row.expect("validated");
            for a in 0..3 {
                g[row.nodes[a]] += row.weights[a] * yi;
                p[row.nodes[a]] += row.weights[a];
                for b in 0..3 {
                    t.add_triplet(row.nodes[a], row.nodes[b], row.weights[a] * row.weights[b]);
                }
            }
        }
        let ptp_mat: CsMat<f64> = t.to_csr();
        let q_pattern = template.q_pattern();
        let m_pattern = union_pattern(n, &[q_pattern, &ptp_mat]);
        let ptp = scatter(&m_pattern, &ptp_mat);
        let mut q_slot = Vec::with_capacity(q_pattern.nnz());
        {
            let indptr = m_pattern.indptr();
            let indptr = indptr.raw_storage();
            let indices = m_pattern.indices();
            for (i, row) in q_pattern.outer_iterator().enumerate() {
                let cols = &indices[indptr[i]..indptr[i + 1]];
                for (j, _) in row.iter() {
                    q_slot.push(indptr[i] + cols.binary_search(&j).expect("Q pattern is inside M"));
                }
            }
        }
        // observations only couple nodes of one triangle, which Q already couples
        let m_spd = SparseSpd::new_unchecked(m_pattern.clone());
        let shared = template.q_symbolic();
        let m_symbolic = if shared.matches(&m_spd) {
            shared
        } else {
            Arc::new(Symbolic::analyze(&m_spd, &[]))
        };
        Ok(Self {
            template,
            priors,
            grid,
            lattices: [
                Lattice::new(grid.range, grid.points),
                Lattice::new(grid.sigma_u, grid.points),
                Lattice::new(grid.sigma_eps, grid.points),
            ],
            m_pattern,
            m_symbolic,
            q_slot,
            ptp,
            g,
            p,
            y_sum: y.iter().sum(),
            yy: y.iter().map(|v| v * v).sum(),
            m: y.len(),
            n,
            logdet_q1: HashMap::new(),
            stats: HashMap::new(),
            objective: HashMap::new(),
            factorizations: 0,
        })
    }

    fn logdet_q1(&mut self, tr: i64) -> Option<f64> {
        if let Some(v) = self.logdet_q1.get(&tr) {
            return *v;
        }
        let v = self.template.logdet_q(self.lattices[0].value(tr), 1.0).ok();
        self.logdet_q1.insert(tr, v);
        v
    }

    fn diagonal_stats(&mut self, tr: i64, kappa: f64) -> Option<DiagonalStats> {
        // κ values that agree to ~1e-12 share one factorization
        let key = (tr, (kappa.ln() * 1e12).round() as i64);
        if let Some(s) = self.stats.get(&key) {
            return *s;
        }
        let s = self.compute_stats(self.lattices[0].value(tr), kappa).ok();
        self.factorizations += 1;
        self.stats.insert(key, s);
        s
    }

    fn compute_stats(&self, range: f64, kappa: f64) -> Result<DiagonalStats> {
        let mut q = vec![0.0; self.template.q_pattern().nnz()];
        self.template.unit_q_values(range, &mut q);
        let mut values = self.ptp.clone();
        for (v, &slot) in q.iter().zip(&self.q_slot) {
            values[slot] += kappa * v;
        }
        let mut mat = self.m_pattern.clone();
        mat.data_mut().copy_from_slice(&values);
        let fac = Factorization::new(self.m_symbolic.clone(), &SparseSpd::new_unchecked(mat))?;
        let v = fac.solve(&self.g)?;
        let w = fac.solve(&self.p)?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        Ok(DiagonalStats {
            logdet_m: fac.logdet(),
            gv: dot(&self.g, &v),
            pv: dot(&self.p, &v),
            pw: dot(&self.p, &w),
        })
    }

    fn log_evidence(&self, s: &DiagonalStats, logdet_q1: f64, sigma_u: f64, sigma_eps: f64) -> f64 {
        let (m, n) = (self.m as f64, self.n as f64);
        let se2 = sigma_eps * sigma_eps;
        let schur = m + se2 * FLAT_PRECISION - s.pw;
        let quad = s.gv + (self.y_sum - s.pv).powi(2) / schur;
        -0.5 * m * (2.0 * std::f64::consts::PI * se2).ln()
            + 0.5 * (logdet_q1 - n * (sigma_u * sigma_u).ln() + FLAT_PRECISION.ln())
            - 0.5 * (s.logdet_m + schur.ln() - (n + 1.0) * se2.ln())
            - 0.5 * (self.yy - quad) / se2
    }

    /// Objective at doubled-lattice indices; `-inf` when a factorization fails.
    fn objective(&mut self, tr: i64, tu: i64, te: i64) -> f64 {
        if let Some(v) = self.objective.get(&(tr, tu, te)) {
            return *v;
        }
        let (r, su, se) = (
            self.lattices[0].value(tr),
            self.lattices[1].value(tu),
            self.lattices[2].value(te),
        );
        let value = if self.m == 0 {
            0.0
        } else {
            match (self.logdet_q1(tr), self.diagonal_stats(tr, (se / su).powi(2))) {
                (Some(ld), Some(s)) => self.log_evidence(&s, ld, su, se),
                _ => f64::NEG_INFINITY,
            }
        };
        let value = value + pc_log_prior(&self.priors, r, su, se).expect("grid values are positive");
        let value = if value.is_nan() { f64::NEG_INFINITY } else { value };
        self.objective.insert((tr, tu, te), value);
        value
    }

    /// Best point among the σ pairs with `te − tu = d` (stepping by `step`).
    fn best_on_diagonal(&mut self, tr: i64, d: i64, step: i64) -> (f64, i64, i64) {
        let mut best = (f64::NEG_INFINITY, -1, -1);
        let mut tu = 0;
        while tu <= self.lattices[1].top() {
            let te = tu + d;
            if self.lattices[2].contains(te) {
                let v = self.objective(tr, tu, te);
                if v > best.0 {
                    best = (v, tu, te);
                }
            }
            tu += step;
        }
        best
    }

    fn run(mut self) -> Result<(HyperParams, FitDiagnostics)> {
        let (rt, ut, et) = (self.lattices[0].top(), self.lattices[1].top(), self.lattices[2].top());
        // coarse pass over (r, κ) on the grid, then greedy ascent by one grid step
        // k roughly evenly spaced even offsets from lo
        let spread = |lo: i64, hi: i64, k: i64| -> Vec<i64> {
            let mut v: Vec<i64> = (0..k).map(|i| lo + ((hi - lo) * (2 * i + 1) / (2 * k)) / 2 * 2).collect();
            v.dedup();
            v
        };
        let coarse_r = spread(0, rt, 4);
        let coarse_d = spread(-ut, et, 5);
        let mut best = (f64::NEG_INFINITY, 0, 0, 0, 0);
        for &tr in &coarse_r {
            for &d in &coarse_d {
                let (v, tu, te) = self.best_on_diagonal(tr, d, 2);
                if v > best.0 {
                    best = (v, tr, d, tu, te);
                }
            }
        }
        loop {
            let (_, tr0, d0, _, _) = best;
            let mut improved = false;
            for dr in [-2, 0, 2] {
                for dd in [-2, 0, 2] {
                    let (tr, d) = (tr0 + dr, d0 + dd);
                    if (dr, dd) == (0, 0) || !self.lattices[0].contains(tr) || d < -ut || d > et {
                        continue;
                    }
                    let (v, tu, te) = self.best_on_diagonal(tr, d, 2);
                    if v > best.0 {
                        best = (v, tr, d, tu, te);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if !best.0.is_finite() {
            return Err(Error::GridSearchFailed);
        }
        let (mut value, tr0, _, tu0, te0) = best;
        let mut at = (tr0, tu0, te0);
        if self.grid.refine && self.grid.points > 1 {
            for tr in tr0 - 1..=tr0 + 1 {
                for tu in tu0 - 1..=tu0 + 1 {
                    for te in te0 - 1..=te0 + 1 {
                        // half steps along at most one σ direction at a time keep
                        // the new κ values within half a step of the best one
                        if (te - te0) * (tu - tu0) == -1
                            || !self.lattices[0].contains(tr)
                            || !self.lattices[1].contains(tu)
                            || !self.lattices[2].contains(te)
                        {
                            continue;
                        }
                        let v = self.objective(tr, tu, te);
                        if v > value {
                            value = v;
                            at = (tr, tu, te);
                        }
                    }
                }
            }
        }
        let hyper = HyperParams {
            range: self.lattices[0].value(at.0),
            sigma_u: self.lattices[1].value(at.1),
            sigma_eps: self.lattices[2].value(at.2),
        };
        Ok((
            hyper,
            FitDiagnostics {
                factorizations: self.factorizations,
                evaluations: self.objective.len(),
                log_objective: Some(value),
            },
        ))
    }
}

/// Exhaustive evaluation of the map objective over the full grid, for checking
/// the search. Returns the best point and its objective.
pub fn exhaustive_grid_maximum(
    model: &FieldModel,
    obs: &ObservationSet,
    priors: &PcPriors,
    grid: &GridSpec,
) -> Result<(HyperParams, f64)> {
    grid.validate()?;
    let ls = [
        Lattice::new(grid.range, grid.points),
        Lattice::new(grid.sigma_u, grid.points),
        Lattice::new(grid.sigma_eps, grid.points),
    ];
    let mut best: Option<(HyperParams, f64)> = None;
    for tr in (0..=ls[0].top()).step_by(2) {
        for tu in (0..=ls[1].top()).step_by(2) {
            for te in (0..=ls[2].top()).step_by(2) {
                let theta = HyperParams::new(ls[0].value(tr), ls[1].value(tu), ls[2].value(te))?;
                let v = match model.map_objective(obs, &theta, priors) {
                    Ok(v) => v,
                    Err(Error::NotPositiveDefinite { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((theta, v));
                }
            }
        }
    }
    best.ok_or(Error::GridSearchFailed)
}

#[cfg(test)]
mod tests;
