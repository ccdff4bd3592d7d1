//! End-to-end experiments on synthetic label-shifted domains.
//!
//! One run: generate domains, hold out a target test split, pretrain on the
//! source, then for each round sample target prototypes, estimate the target
//! label distribution, build matched source batches, train and evaluate.
//! All randomness comes from the config seed through named streams, so a
//! run is reproducible bit for bit; wall-clock timings are kept apart from
//! the reports.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Matching, SamplerKind};
use crate::data::{FeatureDataset, LabelDistribution, RoundState};
use crate::error::{Error, Result};
use crate::matching::{estimate_target_distribution, jsd, source_sampling_probs, uniform_sampling_probs, ClassCounts};
use crate::model::{train_round, LossTrace, ToyModel, TrainData};
use crate::sampler::{
    run_baseline_round, run_sampling_round, Baseline, GroundTruthOracle, PrototypeState, RoundOutcome, RoundParams,
};
use crate::synthetic::{generate_domains, stream_rng, Stream};

/// Data split and pretrained model shared by runs with the same
/// [`ExperimentConfig::pretrain_signature`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub signature: String,
    pub source: FeatureDataset,
    /// Target points available for sampling; labels are only revealed
    /// through the oracle.
    pub pool: FeatureDataset,
    pub test: FeatureDataset,
    pub true_target: LabelDistribution,
    pub pretrained: ToyModel,
    pub pretrain_trace: LossTrace,
    source_x: Array2<f64>,
    pool_x: Array2<f64>,
    test_x: Array2<f64>,
}

impl Prepared {
    pub fn source_x(&self) -> &Array2<f64> {
        &self.source_x
    }

    pub fn pool_x(&self) -> &Array2<f64> {
        &self.pool_x
    }

    pub fn test_x(&self) -> &Array2<f64> {
        &self.test_x
    }
}

/// Generates the domains, splits off the target test set and pretrains on
/// the source only.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let domains = generate_domains(&config.domain_spec()?)?;
    let n_pool = config.pool_size()?;
    let n_target = domains.target.len();
    let pool_rows: Vec<usize> = (0..n_pool).collect();
    let test_rows: Vec<usize> = (n_pool..n_target).collect();
    let pool = domains.target.select(&pool_rows)?;
    let test = domains.target.select(&test_rows)?;

    let source_x = domains.source.features_f64();
    let pool_x = pool.features_f64();
    let test_x = test.features_f64();
    let source_y = domains.source.labels().ok_or(Error::Unlabeled)?;

    let mut model = ToyModel::new(config.model_config(), &mut stream_rng(config.seed, Stream::Init))?;
    let rho = uniform_sampling_probs(source_x.nrows());
    let empty = Array2::<f64>::zeros((0, config.input_dim));
    let data = TrainData {
        source_x: source_x.view(),
        source_y,
        rho: &rho,
        labeled_x: empty.view(),
        labeled_y: &[],
        target_x: pool_x.view(),
    };
    let pretrain_trace = train_round(
        &mut model,
        &data,
        &config.train_config(config.pretrain_epochs, false),
        &mut stream_rng(config.seed, Stream::Pretrain),
    )?;

    Ok(Prepared {
        signature: config.pretrain_signature(),
        source: domains.source,
        pool,
        test,
        true_target: domains.true_target,
        pretrained: model,
        pretrain_trace,
        source_x,
        pool_x,
        test_x,
    })
}

/// Metrics after one round. Round 0 is the pretrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub sampler: SamplerKind,
    pub matching: Matching,
    pub budget_per_round: usize,
    /// Oracle labels consumed so far.
    pub labels_spent: usize,
    /// `labels_spent` as a fraction of the sampling pool.
    pub budget_fraction: f64,
    /// |X_L|.
    pub labeled: usize,
    /// |X_PL| of this round.
    pub pseudo_labeled: usize,
    pub budget_underspent: bool,
    pub accuracy: f64,
    /// `None` for classes absent from the test split.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub estimate: LabelDistribution,
    /// JSD between `estimate` and the true target distribution.
    pub jsd: f64,
    /// Mean total loss over the last training epoch of this round.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub round: usize,
    pub sampling_seconds: f64,
    pub training_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RoundReport>,
    /// Prototype sets per round, starting at round 1.
    pub prototypes: Vec<PrototypeState>,
    /// Pretraining trace first, then one trace per round.
    pub traces: Vec<LossTrace>,
    pub timings: Vec<RoundTiming>,
    pub model: ToyModel,
}

impl ExperimentOutcome {
    pub fn final_report(&self) -> &RoundReport {
        self.reports.last().expect("round 0 is always reported")
    }

    pub fn final_accuracy(&self) -> f64 {
        self.final_report().accuracy
    }

    /// Mean JSD over rounds 1..=R, or the round-0 value when R = 0.
    pub fn mean_jsd(&self) -> f64 {
        let rounds = &self.reports[1.min(self.reports.len() - 1)..];
        rounds.iter().map(|r| r.jsd).sum::<f64>() / rounds.len() as f64
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prepared = prepare(config)?;
    run_prepared(config, &prepared)
}

/// Runs the rounds of `config` starting from `prepared`, which must come
/// from a config with the same pretrain signature.
pub fn run_prepared(config: &ExperimentConfig, prepared: &Prepared) -> Result<ExperimentOutcome> {
    config.validate()?;
    if prepared.signature != config.pretrain_signature() {
        return Err(Error::Config("prepared data was built from a different data or model config".into()));
    }
    let classes = config.classes;
    let budget = config.budget_per_round();
    let source_y = prepared.source.labels().ok_or(Error::Unlabeled)?;
    let pool_y = prepared.pool.labels().ok_or(Error::Unlabeled)?;
    let test_y = prepared.test.labels().ok_or(Error::Unlabeled)?;
    let pool_view = prepared.pool.without_labels();
    let row_of: HashMap<u64, usize> = prepared.pool.ids().iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let mut oracle = GroundTruthOracle::from_dataset(&prepared.pool)?;

    let mut model = prepared.pretrained.clone();
    let mut batch_rng = stream_rng(config.seed, Stream::Batches);
    let mut sampler_rng = stream_rng(config.seed, Stream::Sampler);
    let mut state = RoundState::initial(budget);

    let uniform = estimate_target_distribution(&ClassCounts::zeros(classes))?;
    let mut reports = vec![RoundReport {
        round: 0,
        sampler: config.sampler,
        matching: config.matching,
        budget_per_round: budget,
        labels_spent: 0,
        budget_fraction: 0.0,
        labeled: 0,
        pseudo_labeled: 0,
        budget_underspent: false,
        accuracy: 0.0,
        per_class_accuracy: Vec::new(),
        jsd: jsd(&uniform, &prepared.true_target)?,
        estimate: uniform,
        final_loss: prepared.pretrain_trace.epochs.last().map(|e| e.total),
    }];
    evaluate(&model, prepared.test_x(), test_y, classes, &mut reports[0])?;

    let mut prototypes = Vec::with_capacity(config.rounds);
    let mut traces = vec![prepared.pretrain_trace.clone()];
    let mut timings = vec![RoundTiming {
        round: 0,
        sampling_seconds: 0.0,
        training_seconds: 0.0,
    }];

    for round in 1..=config.rounds {
        let t0 = Instant::now();
        let (features, probs) = model.features_and_probs(prepared.pool_x().view())?;
        let outcome: RoundOutcome = match config.sampler {
            SamplerKind::Lamda => run_sampling_round(
                &pool_view,
                features.view(),
                probs.view(),
                &state,
                &mut oracle,
                &RoundParams {
                    budget,
                    delta: config.delta,
                    gamma: config.gamma_value(),
                    cache: config.cache_options(),
                },
            )?,
            other => {
                let baseline = match other {
                    SamplerKind::Random => Baseline::Random,
                    SamplerKind::Margin => Baseline::Margin,
                    _ => Baseline::Entropy,
                };
                run_baseline_round(baseline, &pool_view, probs.view(), &state, &mut oracle, budget, &mut sampler_rng)?
            }
        };
        let counts = ClassCounts::from_prototypes(&outcome.prototypes, classes)?;
        let estimate = estimate_target_distribution(&counts)?;
        let rho = match config.matching {
            Matching::Off => uniform_sampling_probs(prepared.source.len()),
            Matching::Estimate => source_sampling_probs(&prepared.source, &estimate)?,
            Matching::Oracle => source_sampling_probs(&prepared.source, &prepared.true_target)?,
        };
        let sampling_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        state = outcome.state;
        let labeled: Vec<(usize, usize)> = state.oracle_labels.iter().map(|(id, &y)| (row_of[id], y)).collect();
        let labeled_rows: Vec<usize> = labeled.iter().map(|&(r, _)| r).collect();
        let labeled_y: Vec<usize> = labeled.iter().map(|&(_, y)| y).collect();
        debug_assert!(labeled_rows.iter().zip(&labeled_y).all(|(&r, &y)| pool_y[r] == y));
        let labeled_x = prepared.pool_x().select(Axis(0), &labeled_rows);
        let data = TrainData {
            source_x: prepared.source_x().view(),
            source_y,
            rho: &rho,
            labeled_x: labeled_x.view(),
            labeled_y: &labeled_y,
            target_x: prepared.pool_x().view(),
        };
        let trace = train_round(
            &mut model,
            &data,
            &config.train_config(config.epochs, config.adversarial),
            &mut batch_rng,
        )?;
        let training_seconds = t1.elapsed().as_secs_f64();

        let mut report = RoundReport {
            round,
            sampler: config.sampler,
            matching: config.matching,
            budget_per_round: budget,
            labels_spent: state.total_budget_spent,
            budget_fraction: state.total_budget_spent as f64 / prepared.pool.len() as f64,
            labeled: state.labeled_ids.len(),
            pseudo_labeled: outcome.prototypes.pseudo_labeled.len(),
            budget_underspent: outcome.budget_underspent,
            accuracy: 0.0,
            per_class_accuracy: Vec::new(),
            jsd: jsd(&estimate, &prepared.true_target)?,
            estimate,
            final_loss: trace.epochs.last().map(|e| e.total),
        };
        evaluate(&model, prepared.test_x(), test_y, classes, &mut report)?;
        reports.push(report);
        prototypes.push(outcome.prototypes);
        traces.push(trace);
        timings.push(RoundTiming {
            round,
            sampling_seconds,
            training_seconds,
        });
    }

    Ok(ExperimentOutcome {
        reports,
        prototypes,
        traces,
        timings,
        model,
    })
}

fn evaluate(model: &ToyModel, x: &Array2<f64>, y: &[usize], classes: usize, report: &mut RoundReport) -> Result<()> {
    let predicted = model.predict(x.view())?;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(y) {
        total[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    report.accuracy = correct.iter().sum::<usize>() as f64 / y.len() as f64;
    report.per_class_accuracy = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect();
    Ok(())
}

// ---------------------------------------------------------------------------
// Comparisons
// ---------------------------------------------------------------------------

/// A named set of overrides applied to a base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<String>,
}

impl Variant {
    pub fn new<S: Into<String>>(name: impl Into<String>, overrides: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            overrides: overrides.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_accuracy: f64,
    pub mean_jsd: f64,
    pub final_jsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub jsd_mean: f64,
    pub jsd_std: f64,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Final-round accuracy; higher is better.
    FinalAccuracy,
    /// JSD averaged over rounds; lower is better.
    MeanJsd,
}

impl Metric {
    fn value(self, r: &SeedResult) -> f64 {
        match self {
            Metric::FinalAccuracy => r.final_accuracy,
            Metric::MeanJsd => r.mean_jsd,
        }
    }

    fn higher_is_better(self) -> bool {
        matches!(self, Metric::FinalAccuracy)
    }
}

/// Per-seed comparison of variant `a` against `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub a: String,
    pub b: String,
    pub metric: Metric,
    /// Mean of `a − b` over seeds.
    pub mean_diff: f64,
    pub a_better: usize,
    pub b_better: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "a is better than b".
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
    /// The first variant against each of the others, on both metrics.
    pub paired: Vec<PairedComparison>,
}

impl Comparison {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn pair(&self, a: &str, b: &str, metric: Metric) -> Result<PairedComparison> {
        let va = self.variant(a).ok_or_else(|| Error::Config(format!("no variant `{a}`")))?;
        let vb = self.variant(b).ok_or_else(|| Error::Config(format!("no variant `{b}`")))?;
        Ok(paired(va, vb, metric))
    }
}

/// `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln_choose = |k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    let ln_half = -(n as f64) * std::f64::consts::LN_2;
    (wins..=n).map(|k| (ln_choose(k) + ln_half).exp()).sum::<f64>().min(1.0)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn paired(a: &VariantSummary, b: &VariantSummary, metric: Metric) -> PairedComparison {
    let (mut a_better, mut b_better, mut ties, mut diff) = (0, 0, 0, 0.0);
    for (ra, rb) in a.per_seed.iter().zip(&b.per_seed) {
        let (va, vb) = (metric.value(ra), metric.value(rb));
        diff += va - vb;
        let better = if metric.higher_is_better() { va > vb } else { va < vb };
        let worse = if metric.higher_is_better() { va < vb } else { va > vb };
        if better {
            a_better += 1;
        } else if worse {
            b_better += 1;
        } else {
            ties += 1;
        }
    }
    PairedComparison {
        a: a.name.clone(),
        b: b.name.clone(),
        metric,
        mean_diff: diff / a.per_seed.len().max(1) as f64,
        a_better,
        b_better,
        ties,
        p_value: sign_test(a_better, b_better),
    }
}

/// Runs every variant on every seed. Variants that share a pretrain
/// signature on a seed reuse the same data and pretrained model, so
/// per-seed differences are paired. Seeds run in parallel.
pub fn compare_variants(base: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<Comparison> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one variant and one seed".into()));
    }
    let configs: Vec<ExperimentConfig> = variants
        .iter()
        .map(|v| base.with_overrides(&v.overrides))
        .collect::<Result<_>>()?;
    let per_seed: Vec<Vec<SeedResult>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SeedResult>> {
            let mut cache: BTreeMap<String, Prepared> = BTreeMap::new();
            let mut out = Vec::with_capacity(configs.len());
            for cfg in &configs {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                let signature = cfg.pretrain_signature();
                if !cache.contains_key(&signature) {
                    cache.insert(signature.clone(), prepare(&cfg)?);
                }
                let outcome = run_prepared(&cfg, &cache[&signature])?;
                out.push(SeedResult {
                    seed,
                    final_accuracy: outcome.final_accuracy(),
                    mean_jsd: outcome.mean_jsd(),
                    final_jsd: outcome.final_report().jsd,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let summaries: Vec<VariantSummary> = variants
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let results: Vec<SeedResult> = per_seed.iter().map(|row| row[i]).collect();
            let acc: Vec<f64> = results.iter().map(|r| r.final_accuracy).collect();
            let js: Vec<f64> = results.iter().map(|r| r.mean_jsd).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (jsd_mean, jsd_std) = mean_std(&js);
            VariantSummary {
                name: v.name.clone(),
                accuracy_mean,
                accuracy_std,
                jsd_mean,
                jsd_std,
                per_seed: results,
            }
        })
        .collect();
    let paired_rows = summaries[1..]
        .iter()
        .flat_map(|other| {
            [Metric::MeanJsd, Metric::FinalAccuracy].map(|m| paired(&summaries[0], other, m))
        })
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        variants: summaries,
        paired: paired_rows,
    })
}

/// Sampler comparison: at least two samplers and five seeds.
pub fn compare_samplers(base: &ExperimentConfig, samplers: &[SamplerKind], seeds: &[u64]) -> Result<Comparison> {
    if samplers.len() < 2 || seeds.len() < 5 {
        return Err(Error::Config(format!(
            "compare needs at least 2 samplers and 5 seeds, got {} and {}",
            samplers.len(),
            seeds.len()
        )));
    }
    let variants: Vec<Variant> = samplers
        .iter()
        .map(|s| Variant::new(s.as_str(), [format!("sampler={}", s.as_str())]))
        .collect();
    compare_variants(base, &variants, seeds)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Contents of `round_XXX.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFile {
    pub report: RoundReport,
    /// Absent for round 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<PrototypeState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub created_unix_ms: u128,
    pub timings: Vec<RoundTiming>,
}

pub fn metadata(timings: Vec<RoundTiming>) -> Metadata {
    Metadata {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        timings,
    }
}

pub const METADATA_FILE: &str = "metadata.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::InvalidDataset(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct SummaryRow {
    round: usize,
    labels_spent: usize,
    budget_fraction: f64,
    labeled: usize,
    pseudo_labeled: usize,
    accuracy: f64,
    jsd: f64,
}

#[derive(Serialize)]
struct CurveRow {
    budget_fraction: f64,
    value: f64,
}

#[derive(Serialize)]
struct TraceRow {
    round: usize,
    epoch: usize,
    lambda: f64,
    supervised: f64,
    adversarial: f64,
    total: f64,
}

/// Writes `config.toml`, `round_XXX.json`, `summary.csv`,
/// `budget_vs_accuracy.csv`, `budget_vs_jsd.csv`, `loss_trace.csv`,
/// `model.ckpt` and the `metadata.json` sidecar into `dir`.
pub fn write_experiment(dir: &Path, config: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.toml"), config.to_toml_string().as_bytes())?;
    for (i, report) in outcome.reports.iter().enumerate() {
        let file = RoundFile {
            report: report.clone(),
            prototypes: i.checked_sub(1).map(|k| outcome.prototypes[k].clone()),
        };
        write_file(&dir.join(format!("round_{:03}.json", report.round)), &json_bytes(&file)?)?;
    }
    let summary: Vec<SummaryRow> = outcome
        .reports
        .iter()
        .map(|r| SummaryRow {
            round: r.round,
            labels_spent: r.labels_spent,
            budget_fraction: r.budget_fraction,
            labeled: r.labeled,
            pseudo_labeled: r.pseudo_labeled,
            accuracy: r.accuracy,
            jsd: r.jsd,
        })
        .collect();
    write_file(&dir.join("summary.csv"), &csv_bytes(&summary)?)?;
    let curve = |f: fn(&RoundReport) -> f64| -> Vec<CurveRow> {
        outcome
            .reports
            .iter()
            .map(|r| CurveRow {
                budget_fraction: r.budget_fraction,
                value: f(r),
            })
            .collect()
    };
    write_file(&dir.join("budget_vs_accuracy.csv"), &csv_bytes(&curve(|r| r.accuracy))?)?;
    write_file(&dir.join("budget_vs_jsd.csv"), &csv_bytes(&curve(|r| r.jsd))?)?;
    let trace: Vec<TraceRow> = outcome
        .traces
        .iter()
        .enumerate()
        .flat_map(|(round, t)| {
            t.epochs.iter().map(move |e| TraceRow {
                round,
                epoch: e.epoch,
                lambda: e.lambda,
                supervised: e.supervised,
                adversarial: e.adversarial,
                total: e.total,
            })
        })
        .collect();
    write_file(&dir.join("loss_trace.csv"), &csv_bytes(&trace)?)?;
    outcome.model.save(&dir.join("model.ckpt"))?;
    write_file(&dir.join(METADATA_FILE), &json_bytes(&metadata(outcome.timings.clone()))?)
}

#[derive(Serialize)]
struct CompareRow<'a> {
    variant: &'a str,
    seeds: usize,
    accuracy_mean: f64,
    accuracy_std: f64,
    jsd_mean: f64,
    jsd_std: f64,
}

#[derive(Serialize)]
struct PerSeedRow<'a> {
    variant: &'a str,
    seed: u64,
    final_accuracy: f64,
    mean_jsd: f64,
    final_jsd: f64,
}

/// Writes `compare.csv`, `paired.csv`, `per_seed.csv` and `compare.json`.
pub fn write_comparison(dir: &Path, comparison: &Comparison) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<CompareRow> = comparison
        .variants
        .iter()
        .map(|v| CompareRow {
            variant: &v.name,
            seeds: v.per_seed.len(),
            accuracy_mean: v.accuracy_mean,
            accuracy_std: v.accuracy_std,
            jsd_mean: v.jsd_mean,
            jsd_std: v.jsd_std,
        })
        .collect();
    write_file(&dir.join("compare.csv"), &csv_bytes(&rows)?)?;
    write_file(&dir.join("paired.csv"), &csv_bytes(&comparison.paired)?)?;
    let per_seed: Vec<PerSeedRow> = comparison
        .variants
        .iter()
        .flat_map(|v| {
            v.per_seed.iter().map(move |r| PerSeedRow {
                variant: &v.name,
                seed: r.seed,
                final_accuracy: r.final_accuracy,
                mean_jsd: r.mean_jsd,
                final_jsd: r.final_jsd,
            })
        })
        .collect();
    write_file(&dir.join("per_seed.csv"), &csv_bytes(&per_seed)?)?;
    write_file(&dir.join("compare.json"), &json_bytes(comparison)?)
}

/// Loads every `round_XXX.json` in `dir`, ordered by round.
pub fn load_rounds(dir: &Path) -> Result<Vec<RoundFile>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("round_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    let mut rounds = Vec::with_capacity(files.len());
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: RoundFile =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
        rounds.push(file);
    }
    rounds.sort_by_key(|f| f.report.round);
    Ok(rounds)
}
