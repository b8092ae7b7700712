//! Reconstruction of the modified horseshoe function by MS, MB and MN.

use std::f64::consts::PI;
use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Quartiles;
use crate::error::{Error, Result};
use crate::inference::{fit, predict, FieldModel, GridSpec, HyperMode, HyperParams, ObservationSet, PcPriors};
use crate::mesh::{build_mesh_with_edge, mark_where, Point, Rect, TriangleMesh};
use crate::precision::{ModelKind, DEFAULT_BARRIER_FRACTION};

const R0: f64 = 0.1;
const R_MID: f64 = 0.5;
const ARM_LENGTH: f64 = 3.0;
const SLOPE: f64 = 1.0;

/// The horseshoe test function, `None` outside its domain.
///
/// The domain is a U-shaped band of half-width `r_mid − r₀ = 0.4` around a
/// centre line made of a half circle of radius 0.5 on the left and two arms
/// reaching `x = 3`, closed by round caps. The function grows linearly along
/// the centre line and quadratically away from it.
pub fn horseshoe_truth(x: f64, y: f64) -> Option<f64> {
    let (a, d) = if x >= 0.0 {
        if y > 0.0 {
            (PI * R_MID / 2.0 + x, y - R_MID)
        } else {
            (-PI * R_MID / 2.0 - x, -y - R_MID)
        }
    } else {
        (-(y / x).atan() * R_MID, x.hypot(y) - R_MID)
    };
    let half = R_MID - R0;
    let inside = d.abs() <= half && (x <= ARM_LENGTH || (x - ARM_LENGTH).powi(2) + d * d <= half * half);
    inside.then_some(a * SLOPE + d * d)
}

pub fn in_horseshoe(p: Point) -> bool {
    horseshoe_truth(p[0], p[1]).is_some()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeConfig {
    pub sigma_eps: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Evaluation grid `[nx, ny]` over `bbox`, filtered to the domain.
    pub eval_grid: [usize; 2],
    pub bbox: Rect,
    pub edge: f64,
    pub extension: f64,
    pub barrier_fraction: f64,
    pub mode: HyperMode,
}

impl Default for HorseshoeConfig {
    fn default() -> Self {
        Self {
            sigma_eps: 0.1,
            n: 600,
            replicates: 100,
            seed: 1,
            eval_grid: [200, 100],
            bbox: Rect::new(-1.0, -1.0, 3.5, 1.0),
            edge: 0.08,
            extension: 1.0,
            barrier_fraction: DEFAULT_BARRIER_FRACTION,
            mode: HyperMode::Map {
                priors: PcPriors::horseshoe(),
                grid: GridSpec::default(),
            },
        }
    }
}

impl HorseshoeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 10 {
            return bad(format!("need n ≥ 10 observations, got {}", self.n));
        }
        if self.replicates < 1 {
            return bad("need at least one replicate".into());
        }
        if !(self.sigma_eps >= 0.0) {
            return bad(format!("noise sd must be ≥ 0, got {}", self.sigma_eps));
        }
        if self.eval_grid.contains(&0) || !(self.edge > 0.0) {
            return bad("evaluation grid and mesh edge must be positive".into());
        }
        Ok(())
    }

    /// Regular mesh over the padded bounding box; triangles whose centroid
    /// falls outside the horseshoe are barrier.
    pub fn mesh(&self) -> Result<TriangleMesh> {
        let base = build_mesh_with_edge(self.bbox, self.edge, self.extension)?;
        Ok(mark_where(&base, |c| !in_horseshoe(c)))
    }
}

/// The three models on a shared mesh plus the evaluation points, all of
/// which lie in the domain and inside every model's mesh.
pub struct HorseshoeSetup {
    pub models: Vec<FieldModel>,
    pub eval_points: Vec<Point>,
    pub eval_truth: Vec<f64>,
}

impl HorseshoeSetup {
    pub fn new(config: &HorseshoeConfig) -> Result<Self> {
        config.validate()?;
        let mesh = config.mesh()?;
        let models = ModelKind::ALL
            .iter()
            .map(|&k| FieldModel::new(&mesh, k, config.barrier_fraction))
            .collect::<Result<Vec<_>>>()?;
        let [nx, ny] = config.eval_grid;
        let b = config.bbox;
        let candidates: Vec<Point> = (0..ny)
            .flat_map(|j| {
                (0..nx).map(move |i| {
                    [
                        b.x0 + (i as f64 + 0.5) * b.width() / nx as f64,
                        b.y0 + (j as f64 + 0.5) * b.height() / ny as f64,
                    ]
                })
            })
            .filter(|&p| in_horseshoe(p))
            .collect();
        let eval_points = keep_covered(&models, candidates);
        if eval_points.is_empty() {
            return Err(Error::InvalidParameter("no evaluation point inside the domain".into()));
        }
        let eval_truth = eval_points
            .iter()
            .map(|p| horseshoe_truth(p[0], p[1]).expect("filtered to the domain"))
            .collect();
        Ok(Self {
            models,
            eval_points,
            eval_truth,
        })
    }

    /// `n` uniform domain points covered by every model mesh, with noisy truth values.
    pub fn sample(&self, config: &HorseshoeConfig, rng: &mut ChaCha8Rng) -> Result<ObservationSet> {
        let noise = Normal::new(0.0, config.sigma_eps)
            .map_err(|e| Error::InvalidParameter(format!("noise sd: {e}")))?;
        let b = config.bbox;
        let mut locations = Vec::with_capacity(config.n);
        // candidates are screened in batches but accepted in draw order
        while locations.len() < config.n {
            let batch: Vec<Point> = (0..config.n.max(64))
                .map(|_| [rng.random_range(b.x0..b.x1), rng.random_range(b.y0..b.y1)])
                .filter(|&p| in_horseshoe(p))
                .collect();
            let need = config.n - locations.len();
            locations.extend(keep_covered(&self.models, batch).into_iter().take(need));
        }
        let values = locations
            .iter()
            .map(|p| horseshoe_truth(p[0], p[1]).expect("sampled in the domain") + rng.sample(noise))
            .collect();
        ObservationSet::new(locations, values)
    }
}

fn keep_covered(models: &[FieldModel], points: Vec<Point>) -> Vec<Point> {
    let covered: Vec<Vec<bool>> = models
        .iter()
        .map(|m| m.project(&points).rows().iter().map(Option::is_some).collect())
        .collect();
    points
        .into_iter()
        .enumerate()
        .filter(|(i, _)| covered.iter().all(|c| c[*i]))
        .map(|(_, p)| p)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub model: ModelKind,
    pub rmse: f64,
    pub hyper: HyperParams,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub model: ModelKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub fits: usize,
    pub rmse: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorseshoeReport {
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
    pub summary: Vec<ModelSummary>,
    /// Replicates in which MB has a lower RMSE than MS.
    pub mb_beats_ms: usize,
    pub eval_points: usize,
}

impl HorseshoeReport {
    pub fn median(&self, model: ModelKind) -> Option<f64> {
        self.summary.iter().find(|s| s.model == model).map(|s| s.rmse.median)
    }

    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "model", "rmse", "range", "sigma_u", "sigma_eps", "log_evidence"])?;
        for r in &self.rows {
            out.write_record([
                r.replicate.to_string(),
                r.model.label().to_string(),
                r.rmse.to_string(),
                r.hyper.range.to_string(),
                r.hyper.sigma_u.to_string(),
                r.hyper.sigma_eps.to_string(),
                r.log_evidence.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "fits", "min", "q1", "median", "q3", "max", "mean"])?;
        for s in &self.summary {
            let q = s.rmse;
            out.write_record([
                s.model.label().to_string(),
                s.fits.to_string(),
                q.min.to_string(),
                q.q1.to_string(),
                q.median.to_string(),
                q.q3.to_string(),
                q.max.to_string(),
                q.mean.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Replicate `k` draws from stream `k` of a ChaCha8 generator keyed by the
/// seed, so results do not depend on scheduling.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn run_replicate(
    config: &HorseshoeConfig,
    setup: &HorseshoeSetup,
    replicate: usize,
) -> Vec<std::result::Result<ReplicateRow, ReplicateFailure>> {
    let obs = setup.sample(config, &mut replicate_rng(config.seed, replicate));
    setup
        .models
        .iter()
        .map(|model| {
            let fitted = obs.as_ref().map_err(|e| e.to_string()).and_then(|obs| {
                let f = fit(model, obs, &config.mode).map_err(|e| e.to_string())?;
                let p = predict(&f, model, &setup.eval_points).map_err(|e| e.to_string())?;
                Ok((f, p))
            });
            match fitted {
                Ok((f, p)) => Ok(ReplicateRow {
                    replicate,
                    model: model.kind(),
                    rmse: rmse(&p.mean, &setup.eval_truth),
                    hyper: f.hyper,
                    log_evidence: f.log_evidence,
                }),
                Err(message) => Err(ReplicateFailure {
                    replicate,
                    model: model.kind(),
                    message,
                }),
            }
        })
        .collect()
}

pub fn run_horseshoe(config: &HorseshoeConfig) -> Result<HorseshoeReport> {
    let setup = HorseshoeSetup::new(config)?;
    let results: Vec<_> = (0..config.replicates)
        .into_par_iter()
        .flat_map_iter(|k| run_replicate(config, &setup, k))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    let summary = ModelKind::ALL
        .iter()
        .filter_map(|&model| {
            let v: Vec<f64> = rows.iter().filter(|r| r.model == model).map(|r| r.rmse).collect();
            Quartiles::of(&v).map(|rmse| ModelSummary {
                model,
                fits: v.len(),
                rmse,
            })
        })
        .collect();
    let rmse_of = |k: usize, model: ModelKind| {
        rows.iter()
            .find(|r| r.replicate == k && r.model == model)
            .map(|r| r.rmse)
    };
    let mb_beats_ms = (0..config.replicates)
        .filter(|&k| matches!((rmse_of(k, ModelKind::Mb), rmse_of(k, ModelKind::Ms)), (Some(b), Some(s)) if b < s))
        .count();
    Ok(HorseshoeReport {
        rows,
        failures,
        summary,
        mb_beats_ms,
        eval_points: setup.eval_points.len(),
    })
}
