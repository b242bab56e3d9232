#![allow(dead_code)]

use genrom::generative::{augmented_loss, elbo_loss, AugmentContext, Batch, CvaeConfig, CvaeModel};
use genrom::inference::GaussianHeads;
use genrom::monitoring::Scaler;
use genrom::neural::{Activation, DenseNetwork};
use genrom::reduction::{compute_pod_order, GlobalBasis};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

/// Central differences of `f` over the flat parameter vector `theta`.
pub fn central_differences(theta: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = FD_STEP * theta[i].abs().max(1.0);
            t[i] = theta[i] + h;
            let fp = f(&t);
            t[i] = theta[i] - h;
            let fm = f(&t);
            t[i] = theta[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gradient check of `½‖net(x) − t‖²` for a three-layer network using `act` in every hidden layer.
pub fn activation_gradient_gap(act: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DenseNetwork::new(&[4, 7, 6, 3], &[act, act, Activation::Linear], &mut rng).unwrap();
    let x = gaussian(4, 5, &mut rng);
    let t = gaussian(3, 5, &mut rng);
    let loss = |n: &DenseNetwork| 0.5 * (n.predict(&x).unwrap() - &t).norm_squared();
    let cache = net.forward(&x).unwrap();
    let (g, _) = net.backward(&cache, &(cache.output() - &t));
    let fd = central_differences(&net.params_flat(), |theta| {
        let mut n = net.clone();
        n.set_params_flat(theta).unwrap();
        loss(&n)
    });
    relative_gap(&g.flat(), &fd)
}

/// Small cVAE, a batch of random scaled data and its augmentation context.
pub struct CvaeCase {
    pub model: CvaeModel,
    pub batch: Batch,
    pub global: GlobalBasis,
    pub references: Vec<DMatrix<f64>>,
}

pub fn cvae_case(seed: u64) -> CvaeCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r_tilde, r, cond, n) = (4, 2, 3, 12);
    let obs = r_tilde * r;
    let mut cfg = CvaeConfig::new(1);
    cfg.hidden = 6;
    cfg.latent_dim = 2;
    cfg.seed = seed;
    let scaler = Scaler { min: vec![-0.5; obs], max: vec![0.5; obs] };
    let model = CvaeModel::new(r_tilde, r, cond, scaler, &cfg).unwrap();
    let bsz = 3;
    let batch = Batch {
        x: DMatrix::from_fn(obs, bsz, |_, _| rng.random::<f64>()),
        w: DMatrix::from_fn(cond, bsz, |_, _| rng.random::<f64>()),
        eta: (0..2).map(|_| gaussian(cfg.latent_dim, bsz, &mut rng)).collect(),
        samples: (0..bsz).collect(),
    };
    let snaps = gaussian(n, 20, &mut rng);
    let global = GlobalBasis::new(compute_pod_order(&snaps, r_tilde).unwrap());
    let references = (0..bsz).map(|_| gaussian(n, 6, &mut rng)).collect();
    CvaeCase { model, batch, global, references }
}

fn with_params(model: &CvaeModel, theta: &[f64]) -> CvaeModel {
    let mut m = model.clone();
    let k = m.encoder.n_params();
    m.encoder.set_params_flat(&theta[..k]).unwrap();
    m.decoder.set_params_flat(&theta[k..]).unwrap();
    m
}

fn cvae_params(model: &CvaeModel) -> Vec<f64> {
    let mut theta = model.encoder.params_flat();
    theta.extend(model.decoder.params_flat());
    theta
}

/// Gradient gaps `(encoder, decoder)` of the ELBO.
pub fn elbo_gradient_gaps(seed: u64) -> (f64, f64) {
    let case = cvae_case(seed);
    let (_, _, g) = elbo_loss(&case.model, &case.batch).unwrap();
    let fd = central_differences(&cvae_params(&case.model), |theta| {
        elbo_loss(&with_params(&case.model, theta), &case.batch).unwrap().0
    });
    let k = case.model.encoder.n_params();
    (relative_gap(&g.encoder.flat(), &fd[..k]), relative_gap(&g.decoder.flat(), &fd[k..]))
}

/// Gradient gap of the ELBO plus the weighted projection term.
pub fn augmented_gradient_gap(seed: u64, gamma1: f64) -> f64 {
    let case = cvae_case(seed);
    let ctx = AugmentContext { global: &case.global, references: &case.references, rom_error: None };
    let (_, _, g) = augmented_loss(&case.model, &case.batch, &ctx, gamma1, 0.0).unwrap();
    let fd = central_differences(&cvae_params(&case.model), |theta| {
        augmented_loss(&with_params(&case.model, theta), &case.batch, &ctx, gamma1, 0.0).unwrap().0
    });
    let mut flat = g.encoder.flat();
    flat.extend(g.decoder.flat());
    relative_gap(&flat, &fd)
}

/// Gradient gaps `(shared, mean head, std head)` of the Gaussian NLL.
pub fn heads_gradient_gaps(seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w_dim, k, bsz) = (5, 3, 7);
    let heads = GaussianHeads::new(w_dim, k, 9, &[6, 4], &mut rng).unwrap();
    let w = gaussian(w_dim, bsz, &mut rng);
    let p = gaussian(k, bsz, &mut rng);
    let (_, g) = heads.loss_and_grads(&w, &p).unwrap();
    let sizes = [heads.shared.n_params(), heads.mean_head.n_params(), heads.std_head.n_params()];
    let mut theta = heads.shared.params_flat();
    theta.extend(heads.mean_head.params_flat());
    theta.extend(heads.std_head.params_flat());
    let fd = central_differences(&theta, |t| {
        let mut h = heads.clone();
        h.shared.set_params_flat(&t[..sizes[0]]).unwrap();
        h.mean_head.set_params_flat(&t[sizes[0]..sizes[0] + sizes[1]]).unwrap();
        h.std_head.set_params_flat(&t[sizes[0] + sizes[1]..]).unwrap();
        h.loss_and_grads(&w, &p).unwrap().0
    });
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    (
        relative_gap(&g.shared.flat(), &fd[..a]),
        relative_gap(&g.mean.flat(), &fd[a..b]),
        relative_gap(&g.std.flat(), &fd[b..]),
    )
}

/// Small desk campaign that trains in seconds.
pub fn toy_config() -> genrom::pipeline::CampaignConfig {
    let mut cfg = genrom::pipeline::CampaignConfig::desk(12, 3);
    cfg.t_end = 2.0;
    cfg.cvae.epochs = 6;
    cfg.cvae.hidden = 16;
    cfg.cvae.latent_dim = 3;
    cfg.inference.epochs = 8;
    cfg.inference.members = 2;
    cfg.inference.folds = 2;
    cfg.inference.shared = 32;
    cfg.ensemble = genrom::pipeline::EnsembleConfig { n_basis: 4, n_param: 4 };
    cfg.traces = 1;
    cfg
}
