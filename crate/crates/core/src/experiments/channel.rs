//! Correlation across a barrier strip with a shrinking gap.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Raster;
use crate::error::{Error, Result};
use crate::inference::FieldModel;
use crate::mesh::{build_mesh_with_edge, mark_where, Point, Rect, TriangleMesh};
use crate::precision::{ModelKind, DEFAULT_BARRIER_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub domain: Rect,
    /// `[y0, y1]` of the barrier strip, which spans the whole mesh width.
    pub strip: [f64; 2],
    /// x-coordinate of the gap centre.
    pub gap_center: f64,
    /// Gap widths, nonincreasing.
    pub gaps: Vec<f64>,
    /// Probe pair on opposite sides of the strip; the first one is the heatmap centre.
    pub probes: [Point; 2],
    pub range: f64,
    pub sigma_u: f64,
    pub barrier_fraction: f64,
    pub edge: f64,
    pub extension: f64,
    pub heatmap_pixels: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            domain: Rect::new(0.0, 0.0, 10.0, 10.0),
            strip: [5.0, 5.5],
            gap_center: 5.0,
            gaps: vec![0.4, 0.2, 0.1, 0.0],
            probes: [[5.0, 4.5], [5.0, 6.0]],
            range: 3.0,
            sigma_u: 1.0,
            barrier_fraction: DEFAULT_BARRIER_FRACTION,
            edge: 0.1,
            extension: 4.5,
            heatmap_pixels: 200,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.strip[0] < self.strip[1]) {
            return bad(format!("empty strip {:?}", self.strip));
        }
        if self.gaps.is_empty() || self.gaps.iter().any(|g| !(*g >= 0.0)) {
            return bad("gap widths must be a nonempty list of values ≥ 0".into());
        }
        if self.gaps.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("gap widths must be nonincreasing, got {:?}", self.gaps));
        }
        let [a, b] = self.probes;
        let below = |p: Point| p[1] < self.strip[0];
        let above = |p: Point| p[1] > self.strip[1];
        if !((below(a) && above(b)) || (above(a) && below(b))) {
            return bad("probes must lie on opposite sides of the strip".into());
        }
        if !(self.range > 0.0 && self.sigma_u > 0.0 && self.edge > 0.0 && self.heatmap_pixels > 0) {
            return bad("range, sigma_u, edge and heatmap size must be > 0".into());
        }
        Ok(())
    }

    /// Reflection of the second probe through the first: same distance, no strip in between.
    pub fn same_side_probe(&self) -> Point {
        let [a, b] = self.probes;
        [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
    }

    pub fn probe_distance(&self) -> f64 {
        let [a, b] = self.probes;
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Marks triangles whose centroid is in the strip and outside the gap.
    pub fn mesh(&self, gap: f64) -> Result<TriangleMesh> {
        let base = build_mesh_with_edge(self.domain, self.edge, self.extension)?;
        Ok(mark_where(&base, |c| {
            c[1] >= self.strip[0] && c[1] <= self.strip[1] && (c[0] - self.gap_center).abs() >= 0.5 * gap
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelRow {
    pub gap_width: f64,
    pub model: ModelKind,
    /// Correlation between the two probes.
    pub cross_barrier: f64,
    /// Correlation between the first probe and the reflected second probe.
    pub same_side: f64,
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    pub name: String,
    pub raster: Raster,
}

#[derive(Debug, Clone)]
pub struct ChannelReport {
    pub rows: Vec<ChannelRow>,
    pub heatmaps: Vec<Heatmap>,
}

impl ChannelReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["gap_width", "model", "cross_barrier", "same_side"])?;
        for r in &self.rows {
            out.write_record([
                r.gap_width.to_string(),
                r.model.label().to_string(),
                r.cross_barrier.to_string(),
                r.same_side.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn rows_for(&self, model: ModelKind) -> impl Iterator<Item = &ChannelRow> {
        self.rows.iter().filter(move |r| r.model == model)
    }
}

struct Probed {
    cross: f64,
    same: f64,
    raster: Raster,
}

fn probe(config: &ChannelConfig, mesh: &TriangleMesh, kind: ModelKind) -> Result<Probed> {
    let model = FieldModel::new(mesh, kind, config.barrier_fraction)?;
    let local = model.mesh();
    let node = |p: Point| {
        local
            .nearest_vertex(p)
            .ok_or_else(|| Error::InvalidMesh("empty mesh".into()))
    };
    let [a, b] = config.probes;
    let (ia, ib, is) = (node(a)?, node(b)?, node(config.same_side_probe())?);
    let corr = model.precision(config.range, config.sigma_u)?.correlation_surface(ia)?;
    let px = config.heatmap_pixels;
    Ok(Probed {
        cross: corr[ib],
        same: corr[is],
        raster: Raster::from_field(local, &corr, config.domain, px, px),
    })
}

/// Runs MB and MN for every gap width and MS once on the unmarked mesh.
/// MS rows repeat the stationary values for each gap width.
pub fn run_channel(config: &ChannelConfig) -> Result<ChannelReport> {
    config.validate()?;
    let mut jobs: Vec<(Option<f64>, ModelKind)> = vec![(None, ModelKind::Ms)];
    for &g in &config.gaps {
        jobs.push((Some(g), ModelKind::Mb));
        jobs.push((Some(g), ModelKind::Mn));
    }
    let results: Vec<Probed> = jobs
        .par_iter()
        .map(|&(gap, kind)| {
            let mesh = config.mesh(gap.unwrap_or(f64::INFINITY))?;
            probe(config, &mesh, kind)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut heatmaps = Vec::new();
    let ms = &results[0];
    heatmaps.push(Heatmap {
        name: "corr_ms".into(),
        raster: ms.raster.clone(),
    });
    for (&(gap, kind), r) in jobs.iter().zip(&results).skip(1) {
        let gap = gap.expect("barrier jobs carry a gap");
        if kind == ModelKind::Mb {
            rows.push(ChannelRow {
                gap_width: gap,
                model: ModelKind::Ms,
                cross_barrier: ms.cross,
                same_side: ms.same,
            });
        }
        rows.push(ChannelRow {
            gap_width: gap,
            model: kind,
            cross_barrier: r.cross,
            same_side: r.same,
        });
        heatmaps.push(Heatmap {
            name: format!("corr_{}_gap{gap}", kind.label().to_lowercase()),
            raster: r.raster.clone(),
        });
    }
    Ok(ChannelReport { rows, heatmaps })
}
