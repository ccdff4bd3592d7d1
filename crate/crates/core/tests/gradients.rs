use lamda::model::{Batch, ClassifierKind, ModelConfig, Objective, Params, ToyModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const EPS: f64 = 1e-5;

struct Data {
    sx: Array2<f64>,
    sy: Vec<usize>,
    lx: Array2<f64>,
    ly: Vec<usize>,
    tx: Array2<f64>,
}

impl Data {
    fn random(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, labeled: usize) -> Self {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut m = |rows| Array2::from_shape_simple_fn((rows, cfg.input_dim), || normal.sample(rng));
        let (sx, lx, tx) = (m(n), m(labeled), m(n));
        Self {
            sx,
            sy: (0..n).map(|_| rng.random_range(0..cfg.classes)).collect(),
            lx,
            ly: (0..labeled).map(|_| rng.random_range(0..cfg.classes)).collect(),
            tx,
        }
    }

    fn batch(&self) -> Batch<'_> {
        Batch {
            source_x: self.sx.view(),
            source_y: &self.sy,
            labeled_x: self.lx.view(),
            labeled_y: &self.ly,
            target_x: self.tx.view(),
        }
    }
}

fn loss_value(model: &ToyModel, batch: &Batch<'_>, objective: Objective) -> f64 {
    let parts = model.loss(batch, objective).unwrap();
    match objective {
        Objective::Supervised => parts.supervised,
        Objective::Adversarial => parts.adversarial,
        Objective::Total => parts.total(),
    }
}

/// Central differences of `objective` for every parameter, block by block.
fn numeric_grad(model: &ToyModel, batch: &Batch<'_>, objective: Objective) -> Params {
    let mut grad = model.params().zeros_like();
    let mut probe = model.clone();
    let names: Vec<(&'static str, usize)> = model.params().blocks().iter().map(|(n, b)| (*n, b.len())).collect();
    for (bi, (_, len)) in names.iter().enumerate() {
        for k in 0..*len {
            let orig = model.params().blocks()[bi].1[k];
            probe.params_mut().blocks_mut()[bi].1[k] = orig + EPS;
            let up = loss_value(&probe, batch, objective);
            probe.params_mut().blocks_mut()[bi].1[k] = orig - EPS;
            let down = loss_value(&probe, batch, objective);
            probe.params_mut().blocks_mut()[bi].1[k] = orig;
            grad.blocks_mut()[bi].1[k] = (up - down) / (2.0 * EPS);
        }
    }
    grad
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn block_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn config(kind: ClassifierKind) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        hidden: 6,
        feature_dim: 4,
        embed_dim: 3,
        classes: 4,
        disc_hidden: 5,
        classifier: kind,
        tau: 0.1,
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let kind = if trial % 2 == 0 { ClassifierKind::Cosine } else { ClassifierKind::Linear };
        let cfg = config(kind);
        let model = ToyModel::new(cfg, &mut rng).unwrap();
        let data = Data::random(&mut rng, &cfg, 10, 4);
        let batch = data.batch();
        for objective in [Objective::Supervised, Objective::Adversarial, Objective::Total] {
            let (_, analytic) = model.loss_and_grad(&batch, objective, None).unwrap();
            let numeric = numeric_grad(&model, &batch, objective);
            for ((name, a), (_, n)) in analytic.blocks().into_iter().zip(numeric.blocks()) {
                let err = block_rel_err(a, n);
                worst = worst.max(err);
                assert!(err < 1e-4, "trial {trial} {objective:?} {name}: {err:e}");
            }
        }
    }
    eprintln!("worst block relative error {worst:e}");
}

#[test]
fn reversed_total_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = config(ClassifierKind::Cosine);
    for _ in 0..5 {
        let model = ToyModel::new(cfg, &mut rng).unwrap();
        let data = Data::random(&mut rng, &cfg, 8, 0);
        let batch = data.batch();
        let lambda = rng.random_range(0.5..1.5);
        let (_, reversed) = model.loss_and_grad(&batch, Objective::Total, Some(lambda)).unwrap();
        let sup = numeric_grad(&model, &batch, Objective::Supervised);
        let adv = numeric_grad(&model, &batch, Objective::Adversarial);
        for (((name, r), (_, s)), (_, a)) in reversed.blocks().into_iter().zip(sup.blocks()).zip(adv.blocks()) {
            let expected: Vec<f64> = if Params::is_extractor_block(name) {
                s.iter().zip(a).map(|(s, a)| s - lambda * a).collect()
            } else {
                s.iter().zip(a).map(|(s, a)| s + a).collect()
            };
            let err = block_rel_err(r, &expected);
            assert!(err < 1e-4, "{name}: {err:e}");
        }
    }
}
