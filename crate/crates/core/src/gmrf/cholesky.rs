//! Up-looking sparse Cholesky with a reusable symbolic phase, and selected
//! inversion on the factor pattern.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rand::RngExt;

use super::ordering;
use super::SparseSpd;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Ordering, elimination tree and factor pattern of one sparsity structure.
/// Shared between every numeric factorization of matrices with that structure.
#[derive(Debug)]
pub struct Symbolic {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // input CSR structure this analysis belongs to
    input_indptr: Vec<usize>,
    input_indices: Vec<usize>,
    // permuted upper triangle in CSC, and where each input entry lands (NONE for lower)
    c_ptr: Vec<usize>,
    c_rows: Vec<usize>,
    input_to_c: Vec<usize>,
    parent: Vec<usize>,
    // factor pattern, CSC, diagonal first in each column, rows ascending
    lp: Vec<usize>,
    li: Vec<usize>,
    // row k of L: columns j < k in topological order and the slot of (k, j) in `li`
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_slots: Vec<usize>,
}

impl Symbolic {
    /// Minimum-degree ordering, with `last` pinned to the end of the elimination order.
    pub fn analyze(a: &SparseSpd, last: &[usize]) -> Self {
        let perm = ordering::minimum_degree(a.matrix(), last);
        Self::with_permutation(a, perm)
    }

    pub fn with_permutation(a: &SparseSpd, perm: Vec<usize>) -> Self {
        let m = a.matrix();
        let n = m.rows();
        assert_eq!(perm.len(), n);
        let iperm = ordering::inverse(&perm);
        let indptr = m.indptr().to_proper().into_owned();
        let indices = m.indices().to_vec();

        // permuted upper triangle, CSC
        let mut counts = vec![0usize; n];
        for i in 0..n {
            for &j in &indices[indptr[i]..indptr[i + 1]] {
                let (r, c) = (iperm[i], iperm[j]);
                if r <= c {
                    counts[c] += 1;
                }
            }
        }
        let mut c_ptr = vec![0usize; n + 1];
        for k in 0..n {
            c_ptr[k + 1] = c_ptr[k] + counts[k];
        }
        let mut fill = c_ptr.clone();
        let mut c_rows = vec![0usize; c_ptr[n]];
        let mut input_to_c = vec![NONE; indices.len()];
        for i in 0..n {
            for p in indptr[i]..indptr[i + 1] {
                let (r, c) = (iperm[i], iperm[indices[p]]);
                if r <= c {
                    c_rows[fill[c]] = r;
                    input_to_c[p] = fill[c];
                    fill[c] += 1;
                }
            }
        }

        // elimination tree
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &row in &c_rows[c_ptr[k]..c_ptr[k + 1]] {
                let mut i = row;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // row patterns via ereach
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut reach = vec![0usize; n];
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut row_cols: Vec<usize> = Vec::new();
        let mut col_count = vec![1usize; n];
        for k in 0..n {
            mark[k] = k;
            let mut top = n;
            for &row in &c_rows[c_ptr[k]..c_ptr[k + 1]] {
                let mut i = row;
                if i >= k {
                    continue;
                }
                let mut len = 0;
                while mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                // segment goes in front of earlier segments, child before parent
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    reach[top] = stack[len];
                }
            }
            for &j in &reach[top..] {
                col_count[j] += 1;
            }
            row_cols.extend_from_slice(&reach[top..]);
            row_ptr.push(row_cols.len());
        }
        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + col_count[j];
        }
        let mut li = vec![0usize; lp[n]];
        let mut next: Vec<usize> = lp[..n].iter().map(|&p| p + 1).collect();
        for j in 0..n {
            li[lp[j]] = j;
        }
        let mut row_slots = vec![0usize; row_cols.len()];
        for k in 0..n {
            for t in row_ptr[k]..row_ptr[k + 1] {
                let j = row_cols[t];
                li[next[j]] = k;
                row_slots[t] = next[j];
                next[j] += 1;
            }
        }
        Self {
            n,
            perm,
            iperm,
            input_indptr: indptr,
            input_indices: indices,
            c_ptr,
            c_rows,
            input_to_c,
            parent,
            lp,
            li,
            row_ptr,
            row_cols,
            row_slots,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn factor_nnz(&self) -> usize {
        self.li.len()
    }

    pub fn etree_parent(&self, k: usize) -> Option<usize> {
        let p = self.parent[k];
        (p != NONE).then_some(p)
    }

    /// True if `a` has exactly the structure this analysis was built from.
    pub fn matches(&self, a: &SparseSpd) -> bool {
        let m = a.matrix();
        m.rows() == self.n
            && m.indices() == self.input_indices.as_slice()
            && m.indptr().to_proper().as_ref() == self.input_indptr.as_slice()
    }
}

/// Numeric Cholesky factor `L·Lᵀ = P·Q·Pᵀ`.
#[derive(Debug, Clone)]
pub struct Factorization {
    symbolic: Arc<Symbolic>,
    lx: Vec<f64>,
}

impl Factorization {
    pub fn new(symbolic: Arc<Symbolic>, a: &SparseSpd) -> Result<Self> {
        if !symbolic.matches(a) {
            return Err(Error::InvalidParameter(
                "matrix structure differs from the symbolic analysis".into(),
            ));
        }
        let s = &*symbolic;
        let n = s.n;
        let data = a.matrix().data();
        let mut cx = vec![0.0; s.c_rows.len()];
        for (p, &slot) in s.input_to_c.iter().enumerate() {
            if slot != NONE {
                cx[slot] = data[p];
            }
        }
        let mut lx = vec![0.0; s.li.len()];
        let mut x = vec![0.0; n];
        for k in 0..n {
            for p in s.c_ptr[k]..s.c_ptr[k + 1] {
                x[s.c_rows[p]] += cx[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for t in s.row_ptr[k]..s.row_ptr[k + 1] {
                let j = s.row_cols[t];
                let slot = s.row_slots[t];
                let lkj = x[j] / lx[s.lp[j]];
                x[j] = 0.0;
                for q in s.lp[j] + 1..slot {
                    x[s.li[q]] -= lx[q] * lkj;
                }
                d -= lkj * lkj;
                lx[slot] = lkj;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: s.perm[k],
                    value: d,
                });
            }
            lx[s.lp[k]] = d.sqrt();
        }
        Ok(Self { symbolic, lx })
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    /// Entries `(row, col, value)` of `L` in the permuted index space.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        let s = &self.symbolic;
        (0..s.n)
            .flat_map(|j| (s.lp[j]..s.lp[j + 1]).map(move |p| (s.li[p], j, self.lx[p])))
            .collect()
    }

    /// `ln det Q = 2 Σ ln L_kk`.
    pub fn logdet(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|k| self.lx[s.lp[k]].ln()).sum::<f64>()
    }

    fn lower_solve(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let yj = y[j] / self.lx[s.lp[j]];
            y[j] = yj;
            for p in s.lp[j] + 1..s.lp[j + 1] {
                y[s.li[p]] -= self.lx[p] * yj;
            }
        }
    }

    fn upper_solve(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let mut yj = y[j];
            for p in s.lp[j] + 1..s.lp[j + 1] {
                yj -= self.lx[p] * y[s.li[p]];
            }
            y[j] = yj / self.lx[s.lp[j]];
        }
    }

    /// Solves `Q x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        let s = &self.symbolic;
        if b.len() != s.n {
            return Err(Error::DimensionMismatch {
                expected: s.n,
                got: b.len(),
            });
        }
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.lower_solve(&mut y);
        self.upper_solve(&mut y);
        for (new, &old) in s.perm.iter().enumerate() {
            b[old] = y[new];
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    /// Solves for several right-hand sides.
    pub fn solve_columns(&self, columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        columns.iter().map(|b| self.solve(b)).collect()
    }

    /// Draws `x ~ N(0, Q⁻¹)` by solving `Lᵀ w = z` and undoing the permutation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let s = &self.symbolic;
        let mut w: Vec<f64> = (0..s.n).map(|_| rng.sample(StandardNormal)).collect();
        self.upper_solve(&mut w);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    /// Entries of `Q⁻¹` on the pattern of `L` (Takahashi recursion).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &*self.symbolic;
        let (lp, li, lx) = (&s.lp, &s.li, &self.lx);
        let mut z = vec![0.0; lx.len()];
        let mut acc: Vec<f64> = Vec::new();
        for j in (0..s.n).rev() {
            let (start, end) = (lp[j] + 1, lp[j + 1]);
            let rows = &li[start..end];
            let vals = &lx[start..end];
            let m = rows.len();
            acc.clear();
            acc.resize(m, 0.0);
            for t in 0..m {
                let c = rows[t];
                acc[t] += vals[t] * z[lp[c]];
                // merge column c's rows with rows[t+1..]
                let mut q = lp[c] + 1;
                let qend = lp[c + 1];
                for u in t + 1..m {
                    let target = rows[u];
                    while q < qend && li[q] < target {
                        q += 1;
                    }
                    debug_assert!(q < qend && li[q] == target, "pattern closure");
                    let zv = z[q];
                    acc[t] += vals[u] * zv;
                    acc[u] += vals[t] * zv;
                    q += 1;
                }
            }
            let ljj = lx[lp[j]];
            let mut diag = 1.0 / (ljj * ljj);
            for t in 0..m {
                let zij = -acc[t] / ljj;
                z[start + t] = zij;
                diag -= vals[t] * zij / ljj;
            }
            z[lp[j]] = diag;
        }
        SelectedInverse {
            symbolic: Arc::clone(&self.symbolic),
            z,
        }
    }

    /// Exact `diag(Q⁻¹)`.
    pub fn marginal_variances(&self) -> Vec<f64> {
        self.selected_inverse().diagonal()
    }
}

/// `Q⁻¹` restricted to the factor pattern.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<Symbolic>,
    z: Vec<f64>,
}

impl SelectedInverse {
    pub fn diagonal(&self) -> Vec<f64> {
        let s = &self.symbolic;
        let mut d = vec![0.0; s.n];
        for k in 0..s.n {
            d[s.perm[k]] = self.z[s.lp[k]];
        }
        d
    }

    /// `Q⁻¹[i, j]` in original indexing, if the pair is inside the factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &self.symbolic;
        let (a, b) = (s.iperm[i], s.iperm[j]);
        let (row, col) = (a.max(b), a.min(b));
        let range = s.lp[col]..s.lp[col + 1];
        s.li[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|off| self.z[range.start + off])
    }
}
