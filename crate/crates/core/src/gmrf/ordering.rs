//! Fill-reducing orderings.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use sprs::CsMat;

/// Minimum-degree ordering on the explicit elimination graph of a symmetric
/// pattern. Ties go to the lowest index so the result is deterministic.
/// Nodes listed in `last` are held back and appended in the given order.
///
/// Returns `perm` with `perm[new] = old`.
pub fn minimum_degree(pattern: &CsMat<f64>, last: &[usize]) -> Vec<usize> {
    let n = pattern.rows();
    let mut held = vec![false; n];
    for &v in last {
        held[v] = true;
    }
    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut row: Vec<usize> = pattern
                .outer_view(i)
                .map(|r| r.indices().iter().copied().filter(|&j| j != i).collect())
                .unwrap_or_default();
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
        .filter(|&i| !held[i])
        .map(|i| Reverse((adj[i].len(), i)))
        .collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] ← (adj[u] ∪ nbrs) \ {u, v}
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = match (a.get(i), b.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            if !held[u] {
                heap.push(Reverse((adj[u].len(), u)));
            }
        }
    }
    perm.extend_from_slice(last);
    debug_assert_eq!(perm.len(), n);
    perm
}

/// Geometric nested dissection for patterns whose nodes have planar coordinates.
///
/// Node sets are split at the median coordinate along their wider axis; the
/// nodes of the upper half that touch the lower half form the separator and
/// are ordered after both halves. Blocks of at most `LEAF` nodes fall back to
/// [`minimum_degree`] on the induced pattern. Nodes in `last` are appended in
/// the given order.
pub fn nested_dissection(pattern: &CsMat<f64>, coords: &[[f64; 2]], last: &[usize]) -> Vec<usize> {
    const LEAF: usize = 96;
    let n = pattern.rows();
    assert_eq!(coords.len(), n);
    let mut side = vec![u8::MAX; n];
    for &v in last {
        side[v] = 2;
    }
    let nodes: Vec<usize> = (0..n).filter(|&v| side[v] != 2).collect();
    let (indptr, indices) = (pattern.indptr().to_proper().into_owned(), pattern.indices());
    let neighbours = |v: usize| &indices[indptr[v]..indptr[v + 1]];
    let mut perm = Vec::with_capacity(n);
    // explicit stack: (nodes, separator to emit once both halves are done)
    enum Task {
        Split(Vec<usize>),
        Emit(Vec<usize>),
    }
    let mut stack = vec![Task::Split(nodes)];
    let mut local = vec![usize::MAX; n];
    while let Some(task) = stack.pop() {
        let mut set = match task {
            Task::Emit(sep) => {
                perm.extend(sep);
                continue;
            }
            Task::Split(set) => set,
        };
        if set.len() <= LEAF {
            for (k, &v) in set.iter().enumerate() {
                local[v] = k;
            }
            let mut t = sprs::TriMat::new((set.len(), set.len()));
            for (k, &v) in set.iter().enumerate() {
                for &u in neighbours(v) {
                    if local[u] != usize::MAX {
                        t.add_triplet(k, local[u], 1.0);
                    }
                }
            }
            let sub: CsMat<f64> = t.to_csr();
            perm.extend(minimum_degree(&sub, &[]).into_iter().map(|k| set[k]));
            for &v in &set {
                local[v] = usize::MAX;
            }
            continue;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &v in &set {
            for d in 0..2 {
                lo[d] = lo[d].min(coords[v][d]);
                hi[d] = hi[d].max(coords[v][d]);
            }
        }
        let axis = usize::from(hi[1] - lo[1] > hi[0] - lo[0]);
        let mid = set.len() / 2;
        set.select_nth_unstable_by(mid, |&a, &b| coords[a][axis].total_cmp(&coords[b][axis]).then(a.cmp(&b)));
        let upper = set.split_off(mid);
        for &v in &set {
            side[v] = 0;
        }
        for &v in &upper {
            side[v] = 1;
        }
        let (sep, rest): (Vec<usize>, Vec<usize>) =
            upper.iter().partition(|&&v| neighbours(v).iter().any(|&u| side[u] == 0));
        for &v in set.iter().chain(&upper) {
            side[v] = u8::MAX;
        }
        stack.push(Task::Emit(sep));
        stack.push(Task::Split(rest));
        stack.push(Task::Split(set));
    }
    perm.extend_from_slice(last);
    debug_assert_eq!(perm.len(), n);
    perm
}

pub fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use sprs::TriMat;

    fn path(n: usize) -> CsMat<f64> {
        let mut t = TriMat::new((n, n));
        for i in 0..n {
            t.add_triplet(i, i, 2.0);
            if i + 1 < n {
                t.add_triplet(i, i + 1, -1.0);
                t.add_triplet(i + 1, i, -1.0);
            }
        }
        t.to_csr()
    }

    #[test]
    fn is_a_permutation() {
        let p = minimum_degree(&path(10), &[]);
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(p[0], 0, "end of a path has degree 1 and lowest index");
    }

    #[test]
    fn held_nodes_go_last() {
        let p = minimum_degree(&path(6), &[2, 0]);
        assert_eq!(&p[4..], &[2, 0]);
        let inv = inverse(&p);
        for (new, &old) in p.iter().enumerate() {
            assert_eq!(inv[old], new);
        }
    }

    #[test]
    fn dissection_is_a_permutation_with_held_tail() {
        let (nx, ny) = (30, 20);
        let n = nx * ny;
        let mut t = TriMat::new((n, n));
        let mut coords = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let v = j * nx + i;
                coords.push([i as f64, j as f64]);
                t.add_triplet(v, v, 4.0);
                if i + 1 < nx {
                    t.add_triplet(v, v + 1, -1.0);
                    t.add_triplet(v + 1, v, -1.0);
                }
                if j + 1 < ny {
                    t.add_triplet(v, v + nx, -1.0);
                    t.add_triplet(v + nx, v, -1.0);
                }
            }
        }
        let m: CsMat<f64> = t.to_csr();
        let p = nested_dissection(&m, &coords, &[7, 3]);
        assert_eq!(&p[n - 2..], &[7, 3]);
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, (0..n).collect::<Vec<_>>());
    }
}
