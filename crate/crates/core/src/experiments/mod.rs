//! Runners for the numerical experiments and their file outputs.

pub mod channel;
pub mod horseshoe;
pub mod stationary;

use std::io::Write;

use crate::error::Result;
use crate::mesh::{project_points, Rect, TriangleMesh};

/// Writes a nodal field as CSV `node,x,y,value`.
pub fn write_node_csv<W: Write>(w: W, mesh: &TriangleMesh, values: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["node", "x", "y", "value"])?;
    for (i, (p, v)) in mesh.vertices().iter().zip(values).enumerate() {
        out.write_record([i.to_string(), p[0].to_string(), p[1].to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// A field sampled on a pixel grid, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Raster {
    /// Interpolates a nodal field at pixel centres over `bbox`; NaN outside the mesh.
    pub fn from_field(mesh: &TriangleMesh, field: &[f64], bbox: Rect, width: usize, height: usize) -> Self {
        let points: Vec<[f64; 2]> = (0..height)
            .flat_map(|row| {
                (0..width).map(move |col| {
                    [
                        bbox.x0 + (col as f64 + 0.5) * bbox.width() / width as f64,
                        bbox.y1 - (row as f64 + 0.5) * bbox.height() / height as f64,
                    ]
                })
            })
            .collect();
        Self {
            width,
            height,
            values: project_points(mesh, &points).apply(field),
        }
    }

    /// Binary graymap; `lo` maps to black, `hi` to white, NaN and values below
    /// `lo` to black.
    pub fn write_pgm<W: Write>(&self, mut w: W, lo: f64, hi: f64) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let span = if hi > lo { hi - lo } else { 1.0 };
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| {
                if v.is_nan() || v < lo {
                    0
                } else {
                    (((v - lo) / span).min(1.0) * 255.0).round() as u8
                }
            })
            .collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    /// Range of the finite values, `(0, 1)` when there are none.
    pub fn finite_range(&self) -> (f64, f64) {
        let finite = self.values.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo.is_finite() {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    }
}

/// Quartile summary with linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let (i, f) = (h.floor() as usize, h.fract());
            if i + 1 < v.len() {
                v[i] + f * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_regular_mesh;

    #[test]
    fn quartiles_of_small_sets() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max, q.mean), (1.0, 2.0, 3.0, 4.0, 5.0, 3.0));
        let q = Quartiles::of(&[1.0, 2.0]).unwrap();
        assert_eq!(q.median, 1.5);
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn node_csv_layout() {
        let mesh = build_regular_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 2, 2, 0.0).unwrap();
        let mut buf = Vec::new();
        write_node_csv(&mut buf, &mesh, &[0.5; 9]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "node,x,y,value");
        assert_eq!(lines[1], "0,0,0,0.5");
        assert_eq!(lines.len(), 10);
    }

    #[test]
    fn pgm_header_and_scaling() {
        let mesh = build_regular_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 2, 2, 0.0).unwrap();
        let field: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
        let r = Raster::from_field(&mesh, &field, Rect::new(0.0, 0.0, 2.0, 1.0), 4, 2);
        assert!(r.values[3].is_nan());
        assert!((r.values[0] - 0.25).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_pgm(&mut buf, 0.0, 1.0).unwrap();
        assert!(buf.starts_with(b"P5\n4 2\n255\n"));
        assert_eq!(buf.len(), 11 + 8);
        assert_eq!(buf[11], 64);
        assert_eq!(buf[14], 0);
    }
}
