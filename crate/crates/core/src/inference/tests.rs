use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::mesh::{build_regular_mesh, mark_where, Rect};

fn square(n: usize) -> TriangleMesh {
    let mesh = build_regular_mesh(Rect::new(0.0, 0.0, 4.0, 4.0), n, n, 0.0).unwrap();
    mark_where(&mesh, |p| (1.5..=2.5).contains(&p[1]) && p[0] < 3.0)
}

fn random_obs(model: &FieldModel, m: usize, seed: u64) -> ObservationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = model.mesh().bbox();
    let mut locs = Vec::new();
    while locs.len() < m {
        let p = [
            rng.random_range(bbox.x0..bbox.x1),
            rng.random_range(bbox.y0..bbox.y1),
        ];
        if model.project(&[p]).is_all_valid() {
            locs.push(p);
        }
    }
    let values = locs
        .iter()
        .map(|p| (p[0] * 0.9).sin() + 0.5 * p[1] + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ObservationSet::new(locs, values).unwrap()
}

#[test]
fn observation_set_validation() {
    assert!(ObservationSet::new(vec![[0.0, 0.0]], vec![]).is_err());
    assert!(ObservationSet::new(vec![[0.0, f64::NAN]], vec![1.0]).is_err());
    assert!(ObservationSet::new(vec![[0.0, 0.0]], vec![f64::INFINITY]).is_err());
    assert_eq!(ObservationSet::new(vec![], vec![]).unwrap().len(), 0);
}

#[test]
fn observations_from_csv() {
    let obs = ObservationSet::read_csv("value,x,y\n1.5,0.25,0.75\n-2,1,0\n".as_bytes()).unwrap();
    assert_eq!(obs.locations, vec![[0.25, 0.75], [1.0, 0.0]]);
    assert_eq!(obs.values, vec![1.5, -2.0]);
    assert!(ObservationSet::read_csv("x,y\n1,2\n".as_bytes()).is_err());
    assert!(ObservationSet::read_csv("x,y,value\n1,2,abc\n".as_bytes()).is_err());
}

#[test]
fn no_observations_give_zero_evidence() {
    let model = FieldModel::new(&square(6), ModelKind::Mb, 0.1).unwrap();
    let obs = ObservationSet::new(vec![], vec![]).unwrap();
    let theta = HyperParams::new(1.0, 1.0, 0.5).unwrap();
    assert_eq!(model.log_evidence(&obs, &theta).unwrap(), 0.0);
}

#[test]
fn single_node_evidence_is_scalar_normal() {
    // diagonal prior on one triangle; the observation sits on node 0, so
    // y ~ N(0, 1/q₀ + 1/τ + σ²)
    let mesh = TriangleMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![1]).unwrap();
    let proj = project_points(&mesh, &[[0.0, 0.0]]);
    let (q0, s2, y) = (2.5, 0.3, 1.7);
    let prior = SparseSpd::from_triplets(3, &[(0, 0, q0), (1, 1, 1.0), (2, 2, 4.0)]).unwrap();
    let got = log_marginal_likelihood(&prior, &proj, &[y], s2).unwrap();
    let var = 1.0 / q0 + 1.0 / FLAT_PRECISION + s2;
    let want = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * y * y / var;
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn evidence_ignores_observation_order() {
    let model = FieldModel::new(&square(8), ModelKind::Mb, 0.1).unwrap();
    let obs = random_obs(&model, 40, 1);
    let mut rev = obs.clone();
    rev.locations.reverse();
    rev.values.reverse();
    let theta = HyperParams::new(1.3, 0.8, 0.4).unwrap();
    let a = model.log_evidence(&obs, &theta).unwrap();
    let b = model.log_evidence(&rev, &theta).unwrap();
    assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
}

#[test]
fn diagonal_shortcut_matches_direct_evidence() {
    for kind in ModelKind::ALL {
        let model = FieldModel::new(&square(8), kind, 0.1).unwrap();
        let obs = random_obs(&model, 50, 2);
        let proj = model.project_observations(&obs).unwrap();
        let priors = PcPriors::horseshoe();
        let grid = GridSpec {
            points: 5,
            ..GridSpec::default()
        };
        let mut search = MapSearch::new(&model, &proj, &obs.values, priors, grid).unwrap();
        for (tr, tu, te) in [(0, 0, 0), (4, 2, 6), (8, 8, 3), (3, 5, 1), (7, 1, 8)] {
            let theta = HyperParams::new(
                search.lattices[0].value(tr),
                search.lattices[1].value(tu),
                search.lattices[2].value(te),
            )
            .unwrap();
            let fast = search.objective(tr, tu, te);
            let direct = model.map_objective(&obs, &theta, &priors).unwrap();
            assert!((fast - direct).abs() < 1e-7 * direct.abs().max(1.0), "{kind:?} {theta:?}: {fast} vs {direct}");
        }
    }
}

#[test]
fn objective_is_evidence_plus_prior() {
    let model = FieldModel::new(&square(6), ModelKind::Ms, 0.1).unwrap();
    let obs = random_obs(&model, 20, 3);
    let theta = HyperParams::new(1.0, 0.7, 0.2).unwrap();
    let p = PcPriors::horseshoe();
    let ev = model.log_evidence(&obs, &theta).unwrap();
    let prior = pc_log_prior(&p, 1.0, 0.7, 0.2).unwrap();
    assert_eq!(model.map_objective(&obs, &theta, &p).unwrap(), ev + prior);
}

/// Composite Simpson on `∫ f(e^s) e^s ds` over a wide log interval.
fn integrate_positive(f: impl Fn(f64) -> f64) -> f64 {
    let (a, b, n) = (-30.0f64, 30.0f64, 200_000usize);
    let h = (b - a) / n as f64;
    let g = |s: f64| f(s.exp()) * s.exp();
    let mut acc = g(a) + g(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn prior_densities_integrate_to_one() {
    for lambda in [0.3, 1.5, 4.0] {
        let sd = integrate_positive(|s| log_density_sd(lambda, s).exp());
        assert!((sd - 1.0).abs() < 1e-6, "sd λ = {lambda}: {sd}");
        let r = integrate_positive(|r| log_density_range(lambda, r).exp());
        assert!((r - 1.0).abs() < 1e-6, "range λ = {lambda}: {r}");
    }
}

#[test]
fn horseshoe_prior_medians() {
    let p = PcPriors::horseshoe();
    assert_eq!(p.lambda_eps, 1.5);
    assert_eq!(p.lambda_sigma_u, 1.5);
    assert!((p.sigma_eps_median() - LN_2 / 1.5).abs() < 1e-15);
    assert!((p.range_median() - 1.0).abs() < 1e-15);
    // P(σ < median) and P(r < median) are both one half
    assert!((1.0 - (-p.lambda_eps * p.sigma_eps_median()).exp() - 0.5).abs() < 1e-15);
    assert!(((-p.lambda_inv_range / p.range_median()).exp() - 0.5).abs() < 1e-15);
    assert!(pc_log_prior(&p, 0.0, 1.0, 1.0).is_err());
    assert!(PcPriors::new(1.0, 0.0, 1.0).is_err());
}

#[test]
fn fixed_fit_interpolates_low_noise_prior_draws() {
    let mesh = square(12);
    let model = FieldModel::new(&mesh, ModelKind::Mb, 0.1).unwrap();
    let theta = HyperParams::new(1.5, 1.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = model.precision(theta.range, theta.sigma_u).unwrap().sample(&mut rng).unwrap();
    let nodes: Vec<usize> = (0..mesh.vertex_count()).step_by(3).collect();
    let locs: Vec<Point> = nodes.iter().map(|&i| mesh.vertices()[i]).collect();
    let y: Vec<f64> = nodes
        .iter()
        .map(|&i| 2.0 + u[i] + 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let obs = ObservationSet::new(locs.clone(), y.clone()).unwrap();
    let fit = fit(&model, &obs, &HyperMode::Fixed(theta)).unwrap();
    let pred = predict(&fit, &model, &locs).unwrap();
    let inside = (0..y.len())
        .filter(|&k| (pred.mean[k] - y[k]).abs() <= 3.0 * pred.sd[k])
        .count();
    assert!(inside as f64 >= 0.99 * y.len() as f64, "{inside} of {}", y.len());
    assert!(pred.sd.iter().all(|s| *s >= 0.0));
}

#[test]
fn prediction_at_node_with_tiny_noise_returns_data() {
    let mesh = square(6);
    let model = FieldModel::new(&mesh, ModelKind::Ms, 0.1).unwrap();
    let p = mesh.vertices()[17];
    let obs = ObservationSet::new(vec![p], vec![3.25]).unwrap();
    let fit = fit(&model, &obs, &HyperMode::Fixed(HyperParams::new(1.0, 1.0, 1e-4).unwrap())).unwrap();
    let pred = predict(&fit, &model, &[p, [100.0, 0.0]]).unwrap();
    assert!((pred.mean[0] - 3.25).abs() < 1e-3);
    assert!(pred.sd[0] < 1e-3);
    assert_eq!(pred.outside, vec![1]);
    assert!(pred.mean[1].is_nan());
}

#[test]
fn prediction_at_nodes_matches_fit_fields() {
    let mesh = square(6);
    let model = FieldModel::new(&mesh, ModelKind::Mb, 0.1).unwrap();
    let obs = random_obs(&model, 30, 4);
    let fit = fit(&model, &obs, &HyperMode::Fixed(HyperParams::new(1.0, 1.0, 0.3).unwrap())).unwrap();
    let pred = predict(&fit, &model, mesh.vertices()).unwrap();
    for i in 0..mesh.vertex_count() {
        assert!((pred.mean[i] - fit.mean[i] - fit.intercept_mean).abs() < 1e-10);
        assert!(pred.sd[i] > 0.0);
    }
}

#[test]
fn adding_an_observation_never_increases_sd() {
    let mesh = square(8);
    let model = FieldModel::new(&mesh, ModelKind::Mb, 0.1).unwrap();
    let obs = random_obs(&model, 25, 5);
    let theta = HyperMode::Fixed(HyperParams::new(1.2, 0.9, 0.3).unwrap());
    let before = fit(&model, &obs, &theta).unwrap();
    let mut more = obs.clone();
    more.locations.push([3.3, 0.7]);
    more.values.push(0.4);
    let after = fit(&model, &more, &theta).unwrap();
    for (a, b) in after.sd.iter().zip(&before.sd) {
        assert!(*a <= b + 1e-10);
    }
    assert!(after.intercept_sd <= before.intercept_sd + 1e-10);
}

#[test]
fn unit_fraction_barrier_fit_equals_stationary_fit() {
    let mesh = square(8);
    let ms = FieldModel::new(&mesh, ModelKind::Ms, 0.1).unwrap();
    let mb = FieldModel::new(&mesh, ModelKind::Mb, 1.0).unwrap();
    let obs = random_obs(&ms, 30, 6);
    let theta = HyperMode::Fixed(HyperParams::new(1.0, 1.0, 0.2).unwrap());
    let a = fit(&ms, &obs, &theta).unwrap();
    let b = fit(&mb, &obs, &theta).unwrap();
    assert!((a.log_evidence - b.log_evidence).abs() < 1e-10 * a.log_evidence.abs().max(1.0));
    assert!((a.intercept_mean - b.intercept_mean).abs() < 1e-10);
    assert!(a.mean.iter().zip(&b.mean).all(|(x, y)| (x - y).abs() < 1e-10));
    assert!(a.sd.iter().zip(&b.sd).all(|(x, y)| (x - y).abs() < 1e-10));
}

#[test]
fn neumann_model_rejects_observations_on_the_barrier() {
    let mesh = square(8);
    let mn = FieldModel::new(&mesh, ModelKind::Mn, 0.1).unwrap();
    assert!(mn.node_count() < mesh.vertex_count());
    let obs = ObservationSet::new(vec![[0.5, 0.5], [1.0, 2.0]], vec![0.0, 1.0]).unwrap();
    let err = fit(&mn, &obs, &HyperMode::Fixed(HyperParams::new(1.0, 1.0, 0.1).unwrap())).unwrap_err();
    assert!(matches!(err, Error::OutsideMesh { indices } if indices == vec![1]));
}

#[test]
fn search_agrees_with_exhaustive_grid() {
    let model = FieldModel::new(&square(10), ModelKind::Mb, 0.1).unwrap();
    let obs = random_obs(&model, 80, 7);
    let priors = PcPriors::horseshoe();
    let grid = GridSpec {
        points: 7,
        refine: false,
        ..GridSpec::default()
    };
    let (oracle, best) = exhaustive_grid_maximum(&model, &obs, &priors, &grid).unwrap();
    let fit = fit(&model, &obs, &HyperMode::Map { priors, grid }).unwrap();
    let got = fit.diagnostics.log_objective.unwrap();
    assert!((got - best).abs() < 1e-6 * best.abs(), "{:?} {got} vs {oracle:?} {best}", fit.hyper);
    assert!(fit.diagnostics.factorizations < 7 * 13);
}

#[test]
fn refinement_never_lowers_the_objective() {
    let model = FieldModel::new(&square(8), ModelKind::Ms, 0.1).unwrap();
    let obs = random_obs(&model, 60, 8);
    let priors = PcPriors::horseshoe();
    let coarse = GridSpec {
        refine: false,
        ..GridSpec::default()
    };
    let a = fit(&model, &obs, &HyperMode::Map { priors, grid: coarse }).unwrap();
    let b = fit(&model, &obs, &HyperMode::Map { priors, grid: GridSpec::default() }).unwrap();
    assert!(b.diagnostics.log_objective.unwrap() >= a.diagnostics.log_objective.unwrap());
    // the reported objective is the direct one at the reported hyperparameters
    let direct = model.map_objective(&obs, &b.hyper, &priors).unwrap();
    assert!((direct - b.diagnostics.log_objective.unwrap()).abs() < 1e-7 * direct.abs());
}

#[test]
fn fit_result_json_has_summary_only() {
    let model = FieldModel::new(&square(4), ModelKind::Ms, 0.1).unwrap();
    let obs = random_obs(&model, 5, 9);
    let fit = fit(&model, &obs, &HyperMode::Fixed(HyperParams::new(1.0, 1.0, 0.5).unwrap())).unwrap();
    let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
    assert_eq!(v["model"], "ms");
    assert_eq!(v["hyper"]["range"], 1.0);
    assert!(v.get("mean").is_none());
    let back: FitResult = serde_json::from_value(v).unwrap();
    assert!(predict(&back, &model, &[[1.0, 1.0]]).is_err());
}

#[test]
fn prediction_is_invariant_to_node_order() {
    let mesh = square(6);
    let n = mesh.vertex_count();
    // reverse the vertex numbering
    let perm: Vec<usize> = (0..n).rev().collect();
    let vertices = perm.iter().map(|&i| mesh.vertices()[i]).collect();
    let triangles = mesh.triangles().iter().map(|t| t.map(|v| n - 1 - v)).collect();
    let other = TriangleMesh::new(vertices, triangles, mesh.subdomain().to_vec()).unwrap();
    let a_model = FieldModel::new(&mesh, ModelKind::Mb, 0.1).unwrap();
    let b_model = FieldModel::new(&other, ModelKind::Mb, 0.1).unwrap();
    let obs = random_obs(&a_model, 20, 10);
    let theta = HyperMode::Fixed(HyperParams::new(1.0, 1.0, 0.3).unwrap());
    let pts = [[0.3, 0.35], [2.2, 3.1], [3.9, 0.05]];
    let a = predict(&fit(&a_model, &obs, &theta).unwrap(), &a_model, &pts).unwrap();
    let b = predict(&fit(&b_model, &obs, &theta).unwrap(), &b_model, &pts).unwrap();
    for k in 0..pts.len() {
        assert!((a.mean[k] - b.mean[k]).abs() < 1e-8);
        assert!((a.sd[k] - b.sd[k]).abs() < 1e-8);
    }
}
