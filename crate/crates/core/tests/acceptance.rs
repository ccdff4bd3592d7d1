//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion and then asserts it. Tests hold a shared lock so timings are
//! not distorted by each other.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use lamda::config::ExperimentConfig;
use lamda::data::{Domain, FeatureDataset};
use lamda::harness::{compare_variants, Comparison, Metric, Variant};
use lamda::kernel::{objective_j, CacheOptions, KernelCache};
use lamda::matching::{estimate_target_distribution, induced_class_mass, source_sampling_probs, ClassCounts};
use lamda::model::{cosine_probs, cosine_scores, Batch, ClassifierKind, ModelConfig, Objective, Params, ToyModel};
use lamda::sampler::{PrototypeState, PseudoLabel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: u32, ok: bool, summary: &str, detail: String) {
    let mut out = std::io::stdout().lock();
    let tag = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "{tag} criterion {criterion}: {summary} [{detail}]");
    let _ = out.flush();
}

// ---------------------------------------------------------------------------
// Naive kernel oracles
// ---------------------------------------------------------------------------

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

fn row(points: &Array2<f64>, i: usize) -> &[f64] {
    points.row(i).to_slice().unwrap()
}

/// The two terms of `J(X) = (2/(m n)) ΣΣ k(x, t) − (1/m²) ΣΣ k(x, x′)`,
/// computed as `MMD²(∅, T) − MMD²(X, T)` by double loops.
struct NaiveJ {
    value: f64,
    scale: f64,
}

fn naive_j(subset: &[usize], points: &Array2<f64>, gamma: f64) -> NaiveJ {
    let n = points.nrows();
    let m = subset.len();
    let mut tt = 0.0;
    for i in 0..n {
        for j in 0..n {
            tt += rbf(row(points, i), row(points, j), gamma);
        }
    }
    let mmd_empty = tt / (n * n) as f64;
    if m == 0 {
        return NaiveJ { value: 0.0, scale: 0.0 };
    }
    let mut xx = 0.0;
    for &i in subset {
        for &j in subset {
            xx += rbf(row(points, i), row(points, j), gamma);
        }
    }
    let mut xt = 0.0;
    for &i in subset {
        for j in 0..n {
            xt += rbf(row(points, i), row(points, j), gamma);
        }
    }
    let cross = 2.0 * xt / (m * n) as f64;
    let within = xx / (m * m) as f64;
    let mmd_x = within - cross + mmd_empty;
    NaiveJ {
        value: mmd_empty - mmd_x,
        scale: cross.max(within),
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
}

// ---------------------------------------------------------------------------
// 1. Incremental objective equals the naive double sums
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_incremental_objective_matches_naive() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for _ in 0..200 {
        let n = rng.random_range(2..=200);
        let d = rng.random_range(1..=32);
        let gamma = rng.random_range(0.25..4.0) / d as f64;
        let points = random_points(&mut rng, n, d);
        let m = rng.random_range(0..n);
        let order: Vec<usize> = rand::seq::index::sample(&mut rng, n, n).into_vec();
        let subset = &order[..m];

        let mut cache = KernelCache::build(points.clone(), gamma, CacheOptions::default()).unwrap();
        for &i in subset {
            cache.commit(i).unwrap();
        }
        let naive = naive_j(subset, &points, gamma);
        for value in [cache.objective(), objective_j(subset, &cache).unwrap()] {
            let err = (value - naive.value).abs() / naive.value.abs().max(naive.scale).max(f64::MIN_POSITIVE);
            worst = worst.max(if naive.scale == 0.0 { (value - naive.value).abs() } else { err });
            checks += 1;
        }
        for &c in order[m..].iter().take(4) {
            let mut with_c = subset.to_vec();
            with_c.push(c);
            let after = naive_j(&with_c, &points, gamma);
            let naive_gain = after.value - naive.value;
            let gain = cache.marginal_gain(c).unwrap();
            let scale = naive_gain.abs().max(after.scale).max(naive.scale);
            worst = worst.max((gain - naive_gain).abs() / scale);
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-9 && elapsed < Duration::from_secs(30);
    verdict(
        1,
        ok,
        "incremental J and marginal gains match naive MMD double sums on 200 pools",
        format!("{checks} checks, worst relative error {worst:.2e} < 1e-9, {:.1}s < 30s", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 2. Greedy approximation bound against exhaustive search
// ---------------------------------------------------------------------------

fn for_each_subset(n: usize, max_size: usize, mut f: impl FnMut(&[usize])) {
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize <= max_size {
            let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            f(&subset);
        }
    }
}

#[test]
fn criterion_02_greedy_bound_holds() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    let mut worst_ratio = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(5..=12);
        let n_p = rng.random_range(1..=4);
        let d = rng.random_range(1..=8);
        let gamma = 1.0 / d as f64;
        let points = Array2::from_shape_simple_fn((n, d), || rng.random::<f64>());
        let mut cache = KernelCache::build(points.clone(), gamma, CacheOptions::default()).unwrap();
        cache.greedy(n_p);
        let greedy = naive_j(cache.selected(), &points, gamma).value;
        let mut best = f64::NEG_INFINITY;
        for_each_subset(n, n_p, |s| best = best.max(naive_j(s, &points, gamma).value));
        let factor = 1.0 - ((n_p as f64 - 1.0) / n_p as f64).powi(n_p as i32);
        if greedy < factor * best - 1e-12 {
            violations += 1;
        }
        worst_ratio = worst_ratio.min(greedy / best);
    }
    let elapsed = start.elapsed();
    let ok = violations == 0 && elapsed < Duration::from_secs(60);
    verdict(
        2,
        ok,
        "greedy J >= (1 - ((n_P-1)/n_P)^n_P) * J_opt over 100 exhaustive instances",
        format!("{violations} violations, worst greedy/opt {worst_ratio:.4}, {:.1}s < 60s", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Estimate and sampling-weight algebra
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_estimate_and_matching_algebra() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_sum: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let mut floor_ok = true;
    for _ in 0..1000 {
        let classes = rng.random_range(2..=10);
        let mut protos = PrototypeState::default();
        for id in 0..rng.random_range(0..40u64) {
            protos.oracle_labeled.insert(id, rng.random_range(0..classes));
            protos.selected.push(id);
        }
        for id in 1000..1000 + rng.random_range(0..40u64) {
            let confidence = rng.random_range(0.05..=1.0);
            protos.pseudo_labeled.insert(id, PseudoLabel { class: rng.random_range(0..classes), confidence });
            protos.selected.push(id);
        }
        let counts = ClassCounts::from_prototypes(&protos, classes).unwrap();
        let est = estimate_target_distribution(&counts).unwrap();
        worst_sum = worst_sum.max((est.probs().iter().sum::<f64>() - 1.0).abs());
        let n_l = protos.oracle_labeled.len() as f64;
        let n_pl: f64 = protos.pseudo_labeled.values().map(|p| p.confidence).sum();
        let floor = 1.0 / (n_l + n_pl + classes as f64);
        floor_ok &= est.probs().iter().all(|&p| p >= floor * (1.0 - 1e-12));

        let n_s = rng.random_range(classes..=300);
        let mut labels: Vec<usize> = (0..classes).collect();
        labels.extend((classes..n_s).map(|_| rng.random_range(0..classes)));
        let source = FeatureDataset::with_sequential_ids(
            Array2::zeros((n_s, 1)),
            Some(labels.clone()),
            classes,
            Domain::Source,
        )
        .unwrap();
        let rho = source_sampling_probs(&source, &est).unwrap();
        let mass = induced_class_mass(&labels, &rho, classes);
        for (m, p) in mass.iter().zip(est.probs()) {
            worst_mass = worst_mass.max((m - p).abs());
        }
    }

    let worked = estimate_target_distribution(&ClassCounts {
        oracle: vec![2, 1, 0],
        pseudo: vec![0.9, 0.0, 0.0],
    })
    .unwrap();
    let expected = [3.9 / 6.9, 2.0 / 6.9, 1.0 / 6.9];
    let worked_ok = worked.probs() == expected;

    let ok = worst_sum < 1e-12 && floor_ok && worst_mass < 1e-12 && worked_ok;
    verdict(
        3,
        ok,
        "estimate sums to 1 with the +1 floor, induced source class mass equals the estimate, worked example exact",
        format!(
            "1000 fixtures, max |sum-1| {worst_sum:.1e}, floor held {floor_ok}, max mass error {worst_mass:.1e} < 1e-12, [3.9,2,1]/6.9 exact {worked_ok}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. Analytic gradients against central finite differences
// ---------------------------------------------------------------------------

const FD_EPS: f64 = 1e-5;

fn objective_value(model: &ToyModel, batch: &Batch<'_>, objective: Objective) -> f64 {
    let parts = model.loss(batch, objective).unwrap();
    match objective {
        Objective::Supervised => parts.supervised,
        Objective::Adversarial => parts.adversarial,
        Objective::Total => parts.total(),
    }
}

fn finite_differences(model: &ToyModel, batch: &Batch<'_>, objective: Objective) -> Params {
    let mut grad = model.params().zeros_like();
    let mut probe = model.clone();
    let lens: Vec<usize> = model.params().blocks().iter().map(|(_, b)| b.len()).collect();
    for (bi, &len) in lens.iter().enumerate() {
        for k in 0..len {
            let orig = model.params().blocks()[bi].1[k];
            probe.params_mut().blocks_mut()[bi].1[k] = orig + FD_EPS;
            let up = objective_value(&probe, batch, objective);
            probe.params_mut().blocks_mut()[bi].1[k] = orig - FD_EPS;
            let down = objective_value(&probe, batch, objective);
            probe.params_mut().blocks_mut()[bi].1[k] = orig;
            grad.blocks_mut()[bi].1[k] = (up - down) / (2.0 * FD_EPS);
        }
    }
    grad
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = l2(a).max(l2(b));
    if scale == 0.0 {
        return 0.0;
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&diff) / scale
}

#[test]
fn criterion_04_gradients_match_finite_differences() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut compared = 0usize;
    for trial in 0..50 {
        let cfg = ModelConfig {
            input_dim: rng.random_range(2..=4),
            hidden: rng.random_range(3..=6),
            feature_dim: rng.random_range(2..=5),
            embed_dim: rng.random_range(2..=4),
            classes: rng.random_range(2..=4),
            disc_hidden: rng.random_range(2..=5),
            classifier: if trial % 2 == 0 { ClassifierKind::Cosine } else { ClassifierKind::Linear },
            tau: 0.1,
        };
        let model = ToyModel::new(cfg, &mut rng).unwrap();
        let n = rng.random_range(2..=10);
        let n_l = rng.random_range(0..=4);
        let mut mat = |rows: usize| Array2::from_shape_simple_fn((rows, cfg.input_dim), || normal.sample(&mut rng));
        let (sx, lx, tx) = (mat(n), mat(n_l), mat(n));
        let sy: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.classes)).collect();
        let ly: Vec<usize> = (0..n_l).map(|_| rng.random_range(0..cfg.classes)).collect();
        let batch = Batch {
            source_x: sx.view(),
            source_y: &sy,
            labeled_x: lx.view(),
            labeled_y: &ly,
            target_x: tx.view(),
        };
        let lambda = rng.random_range(0.5..1.5);
        let fd_sup = finite_differences(&model, &batch, Objective::Supervised);
        let fd_adv = finite_differences(&model, &batch, Objective::Adversarial);
        let fd_total = finite_differences(&model, &batch, Objective::Total);

        let (_, sup) = model.loss_and_grad(&batch, Objective::Supervised, None).unwrap();
        let (_, adv) = model.loss_and_grad(&batch, Objective::Adversarial, None).unwrap();
        let (_, adv_rev) = model.loss_and_grad(&batch, Objective::Adversarial, Some(lambda)).unwrap();
        let (_, total) = model.loss_and_grad(&batch, Objective::Total, None).unwrap();
        let (_, total_rev) = model.loss_and_grad(&batch, Objective::Total, Some(lambda)).unwrap();

        let blocks = fd_sup.blocks().len();
        for b in 0..blocks {
            let name = fd_sup.blocks()[b].0;
            let ext = Params::is_extractor_block(name);
            let s = fd_sup.blocks()[b].1;
            let a = fd_adv.blocks()[b].1;
            let t = fd_total.blocks()[b].1;
            let adv_expected: Vec<f64> = if ext { a.iter().map(|v| -lambda * v).collect() } else { a.to_vec() };
            let total_expected: Vec<f64> = s
                .iter()
                .zip(a)
                .map(|(s, a)| if ext { s - lambda * a } else { s + a })
                .collect();
            let cases: [(&str, &[f64], &[f64]); 5] = [
                ("supervised", sup.blocks()[b].1, s),
                ("adversarial", adv.blocks()[b].1, a),
                ("adversarial+grl", adv_rev.blocks()[b].1, &adv_expected),
                ("total", total.blocks()[b].1, t),
                ("total+grl", total_rev.blocks()[b].1, &total_expected),
            ];
            for (label, analytic, numeric) in cases {
                let err = relative_error(analytic, numeric);
                compared += 1;
                if err > worst {
                    worst = err;
                    worst_at = format!("batch {trial} {label} {name}");
                }
            }
        }
    }
    let ok = worst < 1e-4;
    verdict(
        4,
        ok,
        "every parameter block of supervised, adversarial (plain and through GRL) and total losses matches central differences on 50 batches",
        format!("{compared} block comparisons, worst relative error {worst:.2e} < 1e-4 at {worst_at}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. Cosine classifier invariance
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_cosine_classifier_is_scale_invariant() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let tau = 0.1;
    let mut exact = true;
    let mut exact_checks = 0usize;
    let mut worst_arbitrary: f64 = 0.0;
    let mut argmax_stable = true;
    for _ in 0..20 {
        let e = random_points(&mut rng, 40, 8);
        let w = random_points(&mut rng, 8, 6);
        let scores = cosine_scores(e.view(), w.view(), tau).unwrap();
        let probs = cosine_probs(e.view(), w.view(), tau).unwrap();

        // Every positive scaling that is exact in binary floating point.
        for k in -40..=40 {
            let alpha = 2f64.powi(k);
            let e2 = &e * alpha;
            let mut w2 = w.clone();
            for (c, mut col) in w2.columns_mut().into_iter().enumerate() {
                col *= 2f64.powi((k + 3 * c as i32) % 37);
            }
            for (ee, ww) in [(&e2, &w), (&e, &w2), (&e2, &w2)] {
                exact &= cosine_scores(ee.view(), ww.view(), tau).unwrap() == scores;
                exact &= cosine_probs(ee.view(), ww.view(), tau).unwrap() == probs;
                exact_checks += 1;
            }
        }

        // Arbitrary positive scalings: the rescaled input is itself rounded,
        // so agreement is to rounding error.
        for _ in 0..20 {
            let alpha = 10f64.powf(rng.random_range(-6.0..6.0));
            let e2 = &e * alpha;
            let mut w2 = w.clone();
            for mut col in w2.columns_mut() {
                col *= 10f64.powf(rng.random_range(-6.0..6.0));
            }
            let p2 = cosine_probs(e2.view(), w2.view(), tau).unwrap();
            for (a, b) in p2.iter().zip(probs.iter()) {
                worst_arbitrary = worst_arbitrary.max((a - b).abs());
            }
            for (r1, r2) in probs.rows().into_iter().zip(p2.rows()) {
                let am = |r: ndarray::ArrayView1<f64>| {
                    r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best })
                };
                argmax_stable &= am(r1) == am(r2);
            }
        }
    }

    // The same through a model: doubling the projection scales every
    // embedding exactly, and classifier columns can be rescaled freely.
    let cfg = ModelConfig {
        input_dim: 4,
        hidden: 8,
        feature_dim: 6,
        embed_dim: 5,
        classes: 4,
        disc_hidden: 4,
        classifier: ClassifierKind::Cosine,
        tau,
    };
    let model = ToyModel::new(cfg, &mut rng).unwrap();
    let x = random_points(&mut rng, 30, 4);
    let base = model.predict_proba(x.view()).unwrap();
    let mut scaled = model.params().clone();
    scaled.proj.w *= 8.0;
    scaled.proj.b *= 8.0;
    for (c, mut col) in scaled.cls_w.columns_mut().into_iter().enumerate() {
        col *= 2f64.powi(c as i32 - 2);
    }
    let scaled_model = ToyModel::from_params(cfg, scaled).unwrap();
    let model_exact = scaled_model.predict_proba(x.view()).unwrap() == base;

    let ok = exact && model_exact && argmax_stable && worst_arbitrary < 1e-12;
    verdict(
        5,
        ok,
        "cosine softmax inputs and probabilities are invariant to positive rescaling of embeddings and weight columns",
        format!(
            "bit-identical on {exact_checks} power-of-two rescalings: {exact}; model-level bit-identical: {model_exact}; \
             arbitrary scales: argmax stable {argmax_stable}, max |dp| {worst_arbitrary:.1e} < 1e-12"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6-8. Synthetic label-shift experiments
// ---------------------------------------------------------------------------

const SEEDS: std::ops::Range<u64> = 0..30;
/// One-sided sign test at n = 30 seeds.
const ALPHA: f64 = 0.05;

fn seeds() -> Vec<u64> {
    SEEDS.collect()
}

struct Timed<T> {
    value: T,
    elapsed: Duration,
}

fn timed_compare(variants: &[Variant]) -> Timed<Comparison> {
    let start = Instant::now();
    let value = compare_variants(&ExperimentConfig::default(), variants, &seeds()).unwrap();
    Timed {
        value,
        elapsed: start.elapsed(),
    }
}

fn matching_study() -> &'static Timed<Comparison> {
    static STUDY: OnceLock<Timed<Comparison>> = OnceLock::new();
    STUDY.get_or_init(|| {
        timed_compare(&[
            Variant::new("lamda", Vec::<String>::new()),
            Variant::new("lamda-unmatched", ["matching=off"]),
            Variant::new("random-unmatched", ["sampler=random", "matching=off"]),
            Variant::new("oracle-matched", ["matching=oracle"]),
            Variant::new("lamda-delta1", ["delta=1.0"]),
        ])
    })
}

#[test]
fn criterion_06_lamda_estimates_label_distribution_best() {
    let _guard = serial();
    let study = timed_compare(&[
        Variant::new("lamda", Vec::<String>::new()),
        Variant::new("margin", ["sampler=margin"]),
        Variant::new("entropy", ["sampler=entropy"]),
    ]);
    let c = &study.value;
    let vs_margin = c.pair("lamda", "margin", Metric::MeanJsd).unwrap();
    let vs_entropy = c.pair("lamda", "entropy", Metric::MeanJsd).unwrap();
    let jsd = |name: &str| c.variant(name).unwrap().jsd_mean;
    let ok = jsd("lamda") < jsd("margin")
        && jsd("lamda") < jsd("entropy")
        && vs_margin.p_value < ALPHA
        && vs_entropy.p_value < ALPHA
        && study.elapsed < Duration::from_secs(600);
    verdict(
        6,
        ok,
        "mean JSD(estimate, true target) is lower for LAMDA than margin-only and entropy-only sampling",
        format!(
            "{} seeds; mean JSD lamda {:.5}, margin {:.5}, entropy {:.5}; sign test vs margin {}/{} p={:.4}, vs entropy {}/{} p={:.4}; {:.0}s < 600s",
            c.seeds.len(),
            jsd("lamda"),
            jsd("margin"),
            jsd("entropy"),
            vs_margin.a_better,
            vs_margin.a_better + vs_margin.b_better,
            vs_margin.p_value,
            vs_entropy.a_better,
            vs_entropy.a_better + vs_entropy.b_better,
            vs_entropy.p_value,
            study.elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_label_matching_improves_target_accuracy() {
    let _guard = serial();
    let study = matching_study();
    let c = &study.value;
    let acc = |name: &str| c.variant(name).unwrap().accuracy_mean;
    let vs_unmatched = c.pair("lamda", "lamda-unmatched", Metric::FinalAccuracy).unwrap();
    let vs_random = c.pair("lamda", "random-unmatched", Metric::FinalAccuracy).unwrap();
    let oracle_gap = acc("oracle-matched") - acc("lamda");
    let ok = acc("lamda") > acc("lamda-unmatched")
        && acc("lamda") > acc("random-unmatched")
        && vs_unmatched.p_value < ALPHA
        && vs_random.p_value < ALPHA
        && oracle_gap >= -0.01
        && study.elapsed < Duration::from_secs(900);
    verdict(
        7,
        ok,
        "label-matched training beats unmatched and random+unmatched; oracle matching bounds it within 1 point",
        format!(
            "{} seeds; final accuracy lamda {:.4}, unmatched {:.4} (sign {}/{} p={:.2e}), random+unmatched {:.4} (sign {}/{} p={:.2e}), oracle {:.4} (oracle - lamda {:+.4} >= -0.01); {:.0}s < 900s",
            c.seeds.len(),
            acc("lamda"),
            acc("lamda-unmatched"),
            vs_unmatched.a_better,
            vs_unmatched.a_better + vs_unmatched.b_better,
            vs_unmatched.p_value,
            acc("random-unmatched"),
            vs_random.a_better,
            vs_random.a_better + vs_random.b_better,
            vs_random.p_value,
            acc("oracle-matched"),
            oracle_gap,
            study.elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_disabling_pseudo_labels_does_not_help() {
    let _guard = serial();
    let c = &matching_study().value;
    let with_pl = c.variant("lamda").unwrap().accuracy_mean;
    let without = c.variant("lamda-delta1").unwrap().accuracy_mean;
    let ok = without <= with_pl;
    verdict(
        8,
        ok,
        "delta = 1 (no pseudo-labels) is no better than delta = 0.8 in mean final accuracy",
        format!("{} seeds; delta=0.8 {with_pl:.4}, delta=1 {without:.4}", c.seeds.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 9. Sampling performance
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_greedy_selection_is_fast() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let points = random_points(&mut rng, 50_000, 64);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (build, select, steps) = pool.install(|| {
        let t0 = Instant::now();
        let mut cache = KernelCache::build(points, 1.0 / 64.0, CacheOptions { chunk_rows: 1024 }).unwrap();
        let build = t0.elapsed();
        let t1 = Instant::now();
        let steps = cache.greedy(100);
        (build, t1.elapsed(), steps)
    });
    let distinct: std::collections::BTreeSet<usize> = steps.iter().map(|s| s.index).collect();
    let ok = steps.len() == 100
        && distinct.len() == 100
        && steps.iter().all(|s| s.gain.is_finite())
        && build < Duration::from_secs(60)
        && select < Duration::from_secs(10);
    verdict(
        9,
        ok,
        "100 greedy prototypes from 50,000 points (d_f = 64) on one thread",
        format!(
            "cache build {:.1}s < 60s (1024-row chunks), selection {:.2}s < 10s",
            build.as_secs_f64(),
            select.as_secs_f64()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 10. Byte-identical reports across runs
// ---------------------------------------------------------------------------

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "metadata.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn criterion_10_runs_are_byte_identical() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "seed = 7\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_lamda"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        out
    };
    let a = read_outputs(&run("a"));
    let b = read_outputs(&run("b"));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let ok = a.len() >= 6 && a.keys().eq(b.keys()) && differing.is_empty();
    verdict(
        10,
        ok,
        "two `run` invocations with the same config and seed write byte-identical reports",
        format!("{} files compared (metadata.json excluded), differing: {differing:?}", a.len()),
    );
    assert!(ok);
}
