//! Small helpers for working with several matrices on one sparsity pattern.

use sprs::{CsMat, TriMat};

/// Pattern of `Σ mats` (explicit zeros included) with all values 1.
pub(crate) fn union_pattern(n: usize, mats: &[&CsMat<f64>]) -> CsMat<f64> {
    let mut t = TriMat::new((n, n));
    for m in mats {
        for (_, (i, j)) in m.iter() {
            t.add_triplet(i, j, 1.0);
        }
    }
    t.to_csr::<usize>().map(|_| 1.0)
}

/// Values of `m` laid out on `pattern`, which must contain the pattern of `m`.
pub(crate) fn scatter(pattern: &CsMat<f64>, m: &CsMat<f64>) -> Vec<f64> {
    let mut out = vec![0.0; pattern.nnz()];
    let indptr = pattern.indptr();
    let indptr = indptr.raw_storage();
    let indices = pattern.indices();
    for (i, row) in m.outer_iterator().enumerate() {
        let cols = &indices[indptr[i]..indptr[i + 1]];
        for (j, v) in row.iter() {
            let k = cols.binary_search(&j).expect("entry outside the union pattern");
            out[indptr[i] + k] += v;
        }
    }
    out
}

/// `m · diag(d)⁻¹`
pub(crate) fn divide_columns(m: &CsMat<f64>, d: &[f64]) -> CsMat<f64> {
    let mut out = m.clone();
    for mut row in out.outer_iterator_mut() {
        for (k, v) in row.iter_mut() {
            *v /= d[k];
        }
    }
    out
}
