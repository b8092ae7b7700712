//! Linear finite-element matrices on a labelled triangle mesh.
//!
//! For basis functions `ψᵢ` (hat functions on the mesh nodes):
//!
//! * `J[i,j] = ∫ ψᵢ ψⱼ` over the whole mesh (consistent mass matrix),
//! * `D_q[i,j] = ∫_{Ω_q} ∇ψᵢ · ∇ψⱼ` (stiffness restricted to subdomain `q`),
//! * `C_q[i] = ∫_{Ω_q} ψᵢ` (lumped mass restricted to subdomain `q`).
//!
//! All integrals are exact closed forms for linear elements.

use std::io::Write;

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// Consistent mass matrix.
    pub mass: CsMat<f64>,
    /// One stiffness matrix per subdomain, index `q - 1`.
    pub stiffness: Vec<CsMat<f64>>,
    /// One lumped-mass vector per subdomain, index `q - 1`.
    pub lumped: Vec<Vec<f64>>,
}

impl FemMatrices {
    pub fn node_count(&self) -> usize {
        self.mass.rows()
    }

    pub fn subdomain_count(&self) -> usize {
        self.stiffness.len()
    }
}

/// Element stiffness `(eᵢ · eⱼ) / (4·area)` where `eᵢ` is the edge opposite vertex `i`.
fn element_stiffness(p: [[f64; 2]; 3], area: f64) -> [[f64; 3]; 3] {
    let e = |i: usize| {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        [b[0] - a[0], b[1] - a[1]]
    };
    let edges = [e(0), e(1), e(2)];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (edges[i][0] * edges[j][0] + edges[i][1] * edges[j][1]) / (4.0 * area);
        }
    }
    k
}

/// Assembles with `k = mesh.subdomain_count()`.
pub fn assemble(mesh: &TriangleMesh) -> Result<FemMatrices> {
    assemble_with_subdomains(mesh, mesh.subdomain_count())
}

/// Assembles with an explicit subdomain count; subdomains without triangles
/// get empty matrices.
pub fn assemble_with_subdomains(mesh: &TriangleMesh, k: usize) -> Result<FemMatrices> {
    if k == 0 || k < mesh.subdomain_count() {
        return Err(Error::InvalidParameter(format!(
            "subdomain count {k} is smaller than the largest label {}",
            mesh.subdomain_count()
        )));
    }
    let n = mesh.vertex_count();
    let mut mass = TriMat::with_capacity((n, n), 9 * mesh.triangle_count());
    let mut stiff: Vec<TriMat<f64>> = (0..k).map(|_| TriMat::new((n, n))).collect();
    let mut lumped = vec![vec![0.0; n]; k];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle { triangle: t, area });
        }
        let q = mesh.subdomain()[t] as usize - 1;
        let ke = element_stiffness(mesh.corners(t), area);
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.add_triplet(tri[a], tri[b], m);
                stiff[q].add_triplet(tri[a], tri[b], ke[a][b]);
            }
            lumped[q][tri[a]] += area / 3.0;
        }
    }
    Ok(FemMatrices {
        mass: mass.to_csr(),
        stiffness: stiff.into_iter().map(|t| t.to_csr()).collect(),
        lumped,
    })
}

/// `Σ_q D_q`.
pub fn stiffness_total(fem: &FemMatrices) -> CsMat<f64> {
    let mut it = fem.stiffness.iter();
    let first = it.next().expect("at least one subdomain").clone();
    it.fold(first, |acc, d| &acc + d)
}

/// Writes a matrix as `row col value` lines with zero-based indices.
pub fn write_coordinate<W: Write>(m: &CsMat<f64>, mut w: W) -> Result<()> {
    for (v, (i, j)) in m.iter() {
        writeln!(w, "{i} {j} {v:e}")?;
    }
    Ok(())
}
