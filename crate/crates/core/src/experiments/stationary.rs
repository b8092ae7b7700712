//! Empirical versus analytic correlation for the stationary model.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::FieldModel;
use crate::mesh::{build_mesh_with_edge, Point, Rect};
use crate::precision::{matern_correlation, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryConfig {
    pub domain: Rect,
    /// Cell size of the regular mesh.
    pub edge: f64,
    pub extension: f64,
    pub range: f64,
    pub sigma_u: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            domain: Rect::new(0.0, 0.0, 10.0, 10.0),
            edge: 0.2,
            extension: 4.5,
            range: 3.0,
            sigma_u: 1.0,
        }
    }
}

impl StationaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.sigma_u > 0.0 && self.edge > 0.0) {
            return Err(Error::InvalidParameter("range, sigma_u and edge must be > 0".into()));
        }
        if self.edge > self.range / 5.0 {
            return Err(Error::InvalidParameter(format!(
                "mesh edge {} exceeds range/5 = {}",
                self.edge,
                self.range / 5.0
            )));
        }
        if self.extension < 1.5 * self.range {
            return Err(Error::InvalidParameter(format!(
                "extension {} is below 1.5·range = {}",
                self.extension,
                1.5 * self.range
            )));
        }
        Ok(())
    }

    fn center(&self) -> Point {
        [
            0.5 * (self.domain.x0 + self.domain.x1),
            0.5 * (self.domain.y0 + self.domain.y1),
        ]
    }
}

/// One distance bin; `distance` is the mean distance of its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationBin {
    pub distance: f64,
    pub empirical: f64,
    pub analytic: f64,
    pub abs_error: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryReport {
    pub config: StationaryConfig,
    pub node_count: usize,
    pub center_node: usize,
    pub bins: Vec<CorrelationBin>,
    /// Largest bin error for `d ∈ [0.3r, 2r]`.
    pub max_error_in_window: f64,
    /// Largest `|sd/σ_u − 1|` over nodes inside the domain.
    pub max_sd_rel_error: f64,
}

impl StationaryReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["distance", "empirical", "analytic", "abs_error"])?;
        for b in &self.bins {
            out.write_record([
                b.distance.to_string(),
                b.empirical.to_string(),
                b.analytic.to_string(),
                b.abs_error.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Bins the correlation surface around the central node in rings of width
/// `edge / 2`, out to `2.5 r`. Each bin compares the mean discrete correlation
/// with the mean Matérn correlation at the same node distances.
pub fn run_stationary_validation(config: &StationaryConfig) -> Result<StationaryReport> {
    config.validate()?;
    let mesh = build_mesh_with_edge(config.domain, config.edge, config.extension)?;
    let model = FieldModel::new(&mesh, ModelKind::Ms, 1.0)?;
    let op = model.precision(config.range, config.sigma_u)?;
    let center = config.center();
    let center_node = mesh
        .nearest_vertex(center)
        .ok_or_else(|| Error::InvalidMesh("empty mesh".into()))?;
    let c = mesh.vertices()[center_node];
    let corr = op.correlation_surface(center_node)?;

    let width = config.edge / 2.0;
    let reach = 2.5 * config.range;
    let nbins = (reach / width).ceil() as usize;
    let mut acc = vec![(0.0, 0.0, 0.0, 0usize); nbins];
    for (p, rho) in mesh.vertices().iter().zip(&corr) {
        let d = (p[0] - c[0]).hypot(p[1] - c[1]);
        let k = (d / width) as usize;
        if k < nbins {
            let a = &mut acc[k];
            a.0 += d;
            a.1 += rho;
            a.2 += matern_correlation(d, config.range);
            a.3 += 1;
        }
    }
    let bins: Vec<CorrelationBin> = acc
        .into_iter()
        .filter(|a| a.3 > 0)
        .map(|(d, e, m, k)| {
            let k_f = k as f64;
            let (empirical, analytic) = (e / k_f, m / k_f);
            CorrelationBin {
                distance: d / k_f,
                empirical,
                analytic,
                abs_error: (empirical - analytic).abs(),
                nodes: k,
            }
        })
        .collect();
    let (lo, hi) = (0.3 * config.range, 2.0 * config.range);
    let max_error_in_window = bins
        .iter()
        .filter(|b| b.distance >= lo && b.distance <= hi)
        .map(|b| b.abs_error)
        .fold(0.0, f64::max);
    let sd = op.marginal_sd()?;
    let max_sd_rel_error = mesh
        .vertices()
        .iter()
        .zip(&sd)
        .filter(|(p, _)| config.domain.contains(**p))
        .map(|(_, s)| (s / config.sigma_u - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(StationaryReport {
        config: *config,
        node_count: mesh.vertex_count(),
        center_node,
        bins,
        max_error_in_window,
        max_sd_rel_error,
    })
}
