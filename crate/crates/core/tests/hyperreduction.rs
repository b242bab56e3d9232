use genrom::dynamics::*;
use genrom::hyperreduction::*;
use genrom::reduction::{compute_pod_order, GlobalBasis};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest support whose unconstrained least-squares weights are positive
/// and meet the tolerance, by enumeration of every subset.
fn exhaustive_sparsest(g: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> Option<(Vec<usize>, Vec<f64>)> {
    let n = g.ncols();
    let mut best: Option<(Vec<usize>, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|e| mask & (1 << e) != 0).collect();
        let sub = g.select_columns(&set);
        let x = (sub.transpose() * &sub).lu().solve(&(sub.transpose() * b))?;
        if x.iter().all(|&v| v > 0.0) && (&sub * &x - b).norm() <= tau * b.norm() {
            if best.as_ref().is_none_or(|(s, _)| set.len() < s.len()) {
                best = Some((set, x.iter().copied().collect()));
            }
        }
    }
    best
}

#[test]
fn cone_of_one_column_selects_that_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let g = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let k = trial % 3;
        let scale = rng.random_range(0.5..3.0);
        let b = g.column(k) * scale;
        let w = solve_sparse_nnls(&g, &b, 0.5).unwrap();
        let (set, x) = exhaustive_sparsest(&g, &b, 0.5).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(w.element_ids.len(), 1);
        let id = w.element_ids[0];
        let oracle = (&g.column(id) * x[0] - &b).norm() <= 0.5 * b.norm();
        assert!(oracle, "trial {trial}: greedy picked {id}, oracle {set:?}");
        if id == k {
            assert!((w.weights[0] - scale).abs() <= 1e-12 * scale);
        }
    }
}

fn chain_system(n: usize) -> FomSystem {
    let mut cfg = FomConfig::chain(n, 1.0, 50.0, 500.0);
    cfg.damping = DampingConfig { alpha_m: 0.3, alpha_k: 0.005 };
    cfg.parameter_roles = vec![ParameterRole::StiffnessScale, ParameterRole::Amplitude];
    cfg.excitation.signal = SignalConfig::MultiSine { components: 4, f_min: 0.2, f_max: 1.0, seed: 2 };
    assemble_fom(&cfg).unwrap()
}

fn training_data(sys: &FomSystem, r: usize) -> (Vec<TrainingState>, GlobalBasis) {
    let ps = [vec![0.9, 5.0], vec![1.1, 8.0], vec![1.0, 6.5]];
    let mut states = Vec::new();
    let mut snaps = Vec::new();
    for p in ps {
        let p = ParameterVector::unnamed(p);
        let h = integrate_from_rest(sys, &p, 0.02, 6.0).unwrap();
        for j in (0..h.n_states()).step_by(15) {
            states.push(TrainingState {
                u: h.displacement.column(j).into_owned(),
                v: h.velocity.column(j).into_owned(),
                p: p.clone(),
            });
        }
        snaps.push(h.displacement);
    }
    let cols: usize = snaps.iter().map(|s| s.ncols()).sum();
    let mut s = DMatrix::zeros(sys.n_dof, cols);
    let mut at = 0;
    for m in &snaps {
        s.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    (states, GlobalBasis::new(compute_pod_order(&s, r).unwrap()))
}

#[test]
fn ecsw_system_layout() {
    let sys = chain_system(1);
    let v = DMatrix::from_element(1, 1, 1.0);
    let st = TrainingState {
        u: DVector::from_element(1, 0.3),
        v: DVector::from_element(1, -0.2),
        p: ParameterVector::unnamed(vec![1.0, 1.0]),
    };
    let (g, b) = build_ecsw_system(std::slice::from_ref(&st), &v, &sys).unwrap();
    assert_eq!(g.shape(), (1, 1));
    assert_eq!(g.column(0), b);

    let sys = chain_system(12);
    let (states, global) = training_data(&sys, 4);
    let (g, b) = build_ecsw_system(&states, &global.modes, &sys).unwrap();
    assert_eq!(g.nrows(), 4 * states.len());
    assert_eq!(g.ncols(), sys.n_elements());
    assert!((&b - &g * DVector::from_element(g.ncols(), 1.0)).amax() <= 1e-12 * b.amax());
}

#[test]
fn hyper_reduced_force_conserves_work_on_training_states() {
    let sys = chain_system(30);
    let (states, mut global) = training_data(&sys, 5);
    let v = global.modes.clone();
    // Training states inside span(V), so the ROM-level force sees exactly the fitted data.
    let states: Vec<TrainingState> = states
        .into_iter()
        .map(|st| TrainingState { u: &v * v.tr_mul(&st.u), v: &v * v.tr_mul(&st.v), p: st.p })
        .collect();
    let (g, b) = build_ecsw_system(&states, &v, &sys).unwrap();
    let tau = 0.01;
    let mut w = solve_sparse_nnls(&g, &b, tau).unwrap();
    assert!(w.converged);
    assert!(w.residual <= tau);
    assert!(w.weights.iter().all(|&x| x > 0.0));
    w.basis_hash = global.hash();
    let full = EcswWeights::full(sys.n_elements(), global.hash());
    let (mut num, mut den) = (0.0, 0.0);
    for st in &states {
        let q = v.tr_mul(&st.u);
        let qd = v.tr_mul(&st.v);
        let (gh, _) = reduced_force_hyper(&w, &global, &sys, &v, &q, &qd, &st.p).unwrap();
        let (gf, _) = reduced_force_hyper(&full, &global, &sys, &v, &q, &qd, &st.p).unwrap();
        num += (gh - &gf).norm_squared();
        den += gf.norm_squared();
    }
    assert!(num.sqrt() <= tau * den.sqrt() * (1.0 + 1e-9), "{:.3e} vs {:.3e}", num.sqrt(), den.sqrt());

    let z = DVector::zeros(v.ncols());
    let (g0, _) = reduced_force_hyper(&w, &global, &sys, &v, &z, &z, &states[0].p).unwrap();
    assert_eq!(g0.norm(), 0.0);

    global.modes[(0, 0)] += 1e-9;
    assert!(reduced_force_hyper(&w, &global, &sys, &v, &z, &z, &states[0].p).is_err());
}

#[test]
fn unit_weights_reproduce_the_projected_full_force() {
    let sys = chain_system(10);
    let (states, global) = training_data(&sys, 4);
    let full = EcswWeights::full(sys.n_elements(), global.hash());
    let v = &global.modes;
    for st in states.iter().take(10) {
        let q = v.tr_mul(&st.u);
        let qd = v.tr_mul(&st.v);
        let u = v * &q;
        let ud = v * &qd;
        let (g_full, _) = evaluate_restoring(&sys, &u, &ud, &st.p).unwrap();
        // Drop the global mass-proportional term, which the element sum does not include.
        let g_elem = g_full - sys.mass_mul(&ud) * sys.alpha_m;
        let (g, _) = reduced_force_hyper(&full, &global, &sys, v, &q, &qd, &st.p).unwrap();
        assert!((g - v.tr_mul(&g_elem)).amax() <= 1e-10 * g_elem.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_nnls_invariants(rows in 2usize..30, cols in 1usize..25, tau in 0.001f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let b = &g * DVector::from_element(cols, 1.0);
        prop_assume!(b.norm() > 1e-9);
        let w = solve_sparse_nnls(&g, &b, tau).unwrap();
        prop_assert!(w.weights.iter().all(|&x| x > 0.0));
        prop_assert!(w.converged);
        prop_assert!(w.residual <= tau);
        prop_assert!(w.residual_history.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9) + 1e-15));
        let mut xi = DVector::zeros(cols);
        for (&e, &x) in w.element_ids.iter().zip(&w.weights) {
            xi[e] = x;
        }
        prop_assert!(((&g * xi - &b).norm() / b.norm() - w.residual).abs() <= 1e-8);
    }
}
