use barrier_core::fem::{assemble, stiffness_total};
use barrier_core::gmrf::ordering::{minimum_degree, nested_dissection};
use barrier_core::gmrf::{Factorization, SparseSpd, Symbolic};
use barrier_core::mesh::{build_regular_mesh, mark_where, project_points, Rect, TriangleMesh};
use barrier_core::precision::{assemble_q, matern_correlation, BarrierSpec, ModelKind};
use proptest::prelude::*;
use std::sync::Arc;

fn strip_mesh(nx: usize, ny: usize, lo: f64, width: f64, ext: f64) -> TriangleMesh {
    let base = build_regular_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), nx, ny, ext).unwrap();
    mark_where(&base, |c| c[1] >= lo && c[1] <= lo + width)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_weights_are_a_partition_of_unity(
        nx in 2usize..12, ny in 2usize..12,
        pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40),
    ) {
        let mesh = build_regular_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), nx, ny, 0.0).unwrap();
        let points: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let proj = project_points(&mesh, &points);
        prop_assert!(proj.is_all_valid());
        let xs: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = mesh.vertices().iter().map(|p| p[1]).collect();
        for (row, p) in proj.rows().iter().zip(&points) {
            let row = row.unwrap();
            prop_assert!((row.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.weights.iter().all(|&w| w >= -1e-12));
            // linear fields are reproduced exactly
            prop_assert!((row.interpolate(&xs) - p[0]).abs() < 1e-12);
            prop_assert!((row.interpolate(&ys) - p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn points_outside_the_hull_are_flagged(x in 1.0001f64..5.0, y in -5.0f64..5.0) {
        let mesh = build_regular_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 4, 4, 0.0).unwrap();
        let proj = project_points(&mesh, &[[x, y], [0.5, 0.5]]);
        prop_assert_eq!(proj.invalid_rows(), vec![0]);
    }

    #[test]
    fn fem_subdomain_split_is_consistent(
        nx in 3usize..14, ny in 3usize..14,
        lo in 0.0f64..0.7, width in 0.1f64..0.3, ext in 0.0f64..0.5,
    ) {
        let mesh = strip_mesh(nx, ny, lo, width, ext);
        prop_assume!(mesh.subdomain_count() == 2 && mesh.subdomain_area(2) > 0.0);
        let fem = assemble(&mesh).unwrap();
        let whole = assemble(&mesh.with_subdomain(vec![1; mesh.triangle_count()]).unwrap()).unwrap();
        let total = stiffness_total(&fem);
        for (v, (i, j)) in whole.stiffness[0].iter() {
            prop_assert!((total.get(i, j).copied().unwrap_or(0.0) - v).abs() < 1e-12);
        }
        for d in &fem.stiffness {
            for row in d.outer_iterator() {
                prop_assert!(row.data().iter().sum::<f64>().abs() < 1e-10);
            }
        }
        let lumped: f64 = fem.lumped.iter().flatten().sum();
        prop_assert!((lumped - mesh.total_area()).abs() < 1e-9 * mesh.total_area());
        for (i, row) in fem.mass.outer_iterator().enumerate() {
            let li: f64 = fem.lumped.iter().map(|l| l[i]).sum();
            prop_assert!((row.data().iter().sum::<f64>() - li).abs() < 1e-12);
        }
    }

    #[test]
    fn barrier_precision_factorizes(
        n in 4usize..12, lo in 0.0f64..0.6, width in 0.05f64..0.4,
        range in 0.05f64..3.0, fraction in 0.01f64..=1.0,
    ) {
        let mesh = strip_mesh(n, n, lo, width, 0.2);
        let fem = assemble(&mesh).unwrap();
        let k = fem.subdomain_count();
        let mut m = vec![fraction; k];
        m[0] = 1.0;
        let spec = BarrierSpec::with_multipliers(range, 1.0, m).unwrap();
        let op = assemble_q(&fem, &spec, ModelKind::Mb, "prop").unwrap();
        prop_assert!(op.factorization().is_ok());
        prop_assert!(op.marginal_variances().unwrap().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn orderings_give_identical_solutions(nx in 3usize..10, ny in 3usize..10, seed in 0u64..1000) {
        let mesh = build_regular_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), nx, ny, 0.0).unwrap();
        let fem = assemble(&mesh).unwrap();
        let spec = BarrierSpec::stationary(0.5, 1.0).unwrap();
        let q = assemble_q(&fem, &spec, ModelKind::Ms, "prop").unwrap().q().clone();
        let b: Vec<f64> = (0..q.n()).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 - 48.0).collect();
        let md = Factorization::new(Arc::new(Symbolic::with_permutation(&q, minimum_degree(q.matrix(), &[]))), &q).unwrap();
        let nd = Factorization::new(
            Arc::new(Symbolic::with_permutation(&q, nested_dissection(q.matrix(), mesh.vertices(), &[]))),
            &q,
        ).unwrap();
        let (x1, x2) = (md.solve(&b).unwrap(), nd.solve(&b).unwrap());
        let scale = x1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, c) in x1.iter().zip(&x2) {
            prop_assert!((a - c).abs() <= 1e-9 * scale);
        }
        prop_assert!((md.logdet() - nd.logdet()).abs() < 1e-9 * md.logdet().abs().max(1.0));
    }

    #[test]
    fn matern_correlation_is_a_decreasing_unit_interval_map(d1 in 0.0f64..20.0, dd in 1e-6f64..5.0, r in 0.05f64..10.0) {
        let (a, b) = (matern_correlation(d1, r), matern_correlation(d1 + dd, r));
        prop_assert!(a <= 1.0 && b >= 0.0);
        prop_assert!(b <= a);
    }
}

#[test]
fn mesh_json_round_trip() {
    let mesh = strip_mesh(5, 4, 0.3, 0.2, 0.1);
    let mut buf = Vec::new();
    mesh.to_json(&mut buf).unwrap();
    let back = TriangleMesh::from_json(buf.as_slice()).unwrap();
    assert_eq!(back, mesh);
    assert_eq!(back.id(), mesh.id());
    assert!(TriangleMesh::from_json("{\"vertices\": 3}".as_bytes()).is_err());
}

#[test]
fn spd_wrapper_rejects_asymmetry() {
    let m = SparseSpd::from_triplets(2, &[(0, 0, 1.0), (0, 1, 0.5), (1, 1, 1.0)]);
    assert!(m.is_err());
}
