use genrom::inference::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const A: [[f64; 3]; 2] = [[1.0, -0.5, 0.25], [0.3, 0.8, -0.6]];

/// Rows `w ~ U(0,1)³` and `p = A·w + s·ε`.
fn linear_data(n: usize, noise: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
    let mut ps = DMatrix::zeros(n, 2);
    for i in 0..n {
        for k in 0..2 {
            let e: f64 = rng.sample(StandardNormal);
            ps[(i, k)] = (0..3).map(|j| A[k][j] * ws[(i, j)]).sum::<f64>() + noise * e;
        }
    }
    (ws, ps)
}

fn config(epochs: usize, members: usize, folds: usize) -> InferenceConfig {
    let mut cfg = InferenceConfig::new(epochs);
    cfg.members = members;
    cfg.folds = folds;
    cfg.seed = 3;
    cfg
}

fn fit(ws: &DMatrix<f64>, ps: &DMatrix<f64>, cfg: &InferenceConfig) -> (ParamInferenceModel, InferenceReport) {
    train_inference(ws, ps, vec!["a".into(), "b".into()], vec![(-10.0, 10.0); 2], cfg).unwrap()
}

#[test]
fn noise_free_linear_map_is_learned_to_one_percent() {
    let (ws, ps) = linear_data(400, 0.0, 1);
    let (model, _) = fit(&ws, &ps, &config(300, 2, 1));
    let (wt, pt) = linear_data(100, 0.0, 2);
    for k in 0..2 {
        let range = ps.column(k).max() - ps.column(k).min();
        let mae = (0..100).map(|i| (model.predict(wt.row(i).clone_owned().as_slice()).unwrap().0[k] - pt[(i, k)]).abs()).sum::<f64>()
            / 100.0;
        assert!(mae <= 0.01 * range, "parameter {k}: MAE {mae} vs range {range}");
    }
}

#[test]
fn predicted_spread_matches_the_noise_level() {
    let s = 0.1;
    let (ws, ps) = linear_data(800, s, 5);
    let (model, report) = fit(&ws, &ps, &config(200, 3, 4));
    assert!(report.selected_epochs >= 1 && report.selected_epochs <= 200);
    let (wt, _) = linear_data(200, s, 6);
    for k in 0..2 {
        let mean_sigma = (0..200).map(|i| model.predict(wt.row(i).clone_owned().as_slice()).unwrap().1[k]).sum::<f64>() / 200.0;
        assert!((mean_sigma - s).abs() <= 0.25 * s, "parameter {k}: mean σ {mean_sigma}");
    }
}

#[test]
fn training_is_seed_deterministic() {
    let (ws, ps) = linear_data(60, 0.05, 8);
    let cfg = config(15, 2, 3);
    let (a, ra) = fit(&ws, &ps, &cfg);
    let (b, rb) = fit(&ws, &ps, &cfg);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let mut other = cfg.clone();
    other.seed = 4;
    assert_ne!(fit(&ws, &ps, &other).0, a);
}

#[test]
fn draws_centre_on_the_mean_and_respect_bounds() {
    let (ws, ps) = linear_data(60, 0.2, 9);
    let (mut model, _) = fit(&ws, &ps, &config(20, 2, 1));
    let w = [0.4, 0.6, 0.2];
    let none = infer_parameters(&model, &w, 0, 1).unwrap();
    assert!(none.samples.is_empty());
    let est = infer_parameters(&model, &w, 10_000, 1).unwrap();
    for k in 0..2 {
        let m = est.samples.iter().map(|p| p.values[k]).sum::<f64>() / 1e4;
        assert!((m - est.mean.values[k]).abs() <= 3.0 * est.std[k] / 100.0);
    }
    model.bounds = vec![(est.mean.values[0], est.mean.values[0] + 0.01), (-10.0, est.mean.values[1])];
    let clamped = infer_parameters(&model, &w, 500, 2).unwrap();
    for p in &clamped.samples {
        for (v, (lo, hi)) in p.values.iter().zip(&model.bounds) {
            assert!(v >= lo && v <= hi);
        }
    }
}

#[test]
fn mixture_moments_of_identical_members_equal_one_member() {
    let (ws, ps) = linear_data(40, 0.1, 10);
    let (mut model, _) = fit(&ws, &ps, &config(10, 1, 1));
    let single = model.predict(&[0.3, 0.3, 0.3]).unwrap();
    model.members.push(model.members[0].clone());
    let doubled = model.predict(&[0.3, 0.3, 0.3]).unwrap();
    for k in 0..2 {
        assert!((single.0[k] - doubled.0[k]).abs() <= 1e-12);
        assert!((single.1[k] - doubled.1[k]).abs() <= 1e-12);
    }
}

#[test]
fn artifact_round_trip() {
    let (ws, ps) = linear_data(30, 0.1, 11);
    let (model, _) = fit(&ws, &ps, &config(5, 2, 1));
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    assert_eq!(ParamInferenceModel::load(dir.path()).unwrap(), model);
}
