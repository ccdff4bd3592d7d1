//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error or missing config file, 2 invalid
//! input, 3 runtime failure (divergence, uncovered class, IO).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, Gamma, SamplerKind};
use crate::data::{load_feature_dataset_with, save_csv, FeatureDataset, RoundState};
use crate::error::{Error, Result};
use crate::harness::{
    compare_samplers, compare_variants, load_rounds, prepare, run_experiment, write_comparison, write_experiment,
    Comparison, Variant,
};
use crate::kernel::{default_gamma, CacheOptions};
use crate::matching::{estimate_target_distribution, ClassCounts};
use crate::model::ToyModel;
use crate::sampler::{
    run_baseline_round, run_sampling_round, AnnotationQueue, Baseline, PrototypeState, RoundManifest, RoundParams,
};
use crate::synthetic::{generate_domains, stream_rng, Stream};

#[derive(Debug, Parser)]
#[command(name = "lamda", version, about = "Prototype sampling and label distribution matching for active domain adaptation")]
pub struct Cli {
    /// Emit line-delimited JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Experiment config file (flat TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set rounds=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic source and target feature files.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain on the source domain and save a checkpoint.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one sampling round on a feature file.
    Round {
        /// Target feature CSV or binary file.
        #[arg(long)]
        features: PathBuf,
        /// Class probabilities as CSV `id,p0,...`; required without `--checkpoint`.
        #[arg(long, conflicts_with = "checkpoint")]
        probs: Option<PathBuf>,
        /// Model checkpoint; `--features` then holds raw inputs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Manifest of the previous round.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Annotation answers as CSV `id,label`.
        #[arg(long)]
        answers: Option<PathBuf>,
        /// Number of points to pick this round
        #[arg(long)]
        budget: usize,
        /// Margin threshold above which a pick is pseudo-labeled
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        /// RBF bandwidth, or `auto` for 1/d_f.
        #[arg(long, default_value = "auto")]
        gamma: String,
        /// Number of classes when the feature file does not declare it.
        #[arg(long)]
        classes: Option<usize>,
        /// One of lamda, random, margin, entropy
        #[arg(long, default_value = "lamda")]
        sampler: String,
        /// Seed for the random sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment and write its reports.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare samplers or config variants over several seeds.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated samplers.
        #[arg(long, default_value = "lamda,margin,entropy")]
        samplers: String,
        /// Named variant `NAME:key=value,key=value`; replaces `--samplers`.
        #[arg(long = "variant")]
        variants: Vec<String>,
        /// Seeds as `a..b` or a comma-separated list.
        #[arg(long, default_value = "0..5")]
        seeds: String,
    },
    /// Print the label distribution estimate of a round file as JSON.
    Estimate {
        /// Round manifest or report containing `prototypes`.
        #[arg(long)]
        protos: PathBuf,
        #[arg(long)]
        classes: usize,
    },
    /// Summarise the round reports in an output directory.
    Report {
        /// Directory written by `run`
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    if let Some(path) = config_path(&cli.command) {
        if !path.is_file() {
            let _ = writeln!(err, "error: config file not found: {}\n", path.display());
            let _ = write!(err, "{}", Cli::command().render_usage());
            let _ = writeln!(err);
            return 1;
        }
    }
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let code = if e.is_runtime() { 3 } else { 2 };
            if cli.json {
                let _ = writeln!(err, "{}", json!({"error": e.to_string(), "exit_code": code}));
            } else {
                let _ = writeln!(err, "error: {e}");
            }
            code
        }
    }
}

fn config_path(command: &Command) -> Option<&Path> {
    match command {
        Command::Generate { config, .. }
        | Command::Pretrain { config, .. }
        | Command::Run { config, .. }
        | Command::Compare { config, .. } => Some(&config.config),
        _ => None,
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&args.config)?.with_overrides(&args.overrides)
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    let line = if json { serde_json::to_string(value)? } else { text() };
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let json = cli.json;
    match &cli.command {
        Command::Generate { config, out: dir } => {
            let cfg = load_config(config)?;
            let domains = generate_domains(&cfg.domain_spec()?)?;
            let n_pool = cfg.pool_size()?;
            let pool = domains.target.select(&(0..n_pool).collect::<Vec<_>>())?;
            let test = domains.target.select(&(n_pool..domains.target.len()).collect::<Vec<_>>())?;
            create_dir(dir)?;
            save_csv(&domains.source, dir.join("source.csv"))?;
            save_csv(&pool.without_labels(), dir.join("target.csv"))?;
            save_csv(&test, dir.join("test.csv"))?;
            let labels = pool.labels().ok_or(Error::Unlabeled)?;
            let mut answers = String::from("id,label\n");
            for (id, y) in pool.ids().iter().zip(labels) {
                answers.push_str(&format!("{id},{y}\n"));
            }
            let path = dir.join("target_labels.csv");
            std::fs::write(&path, answers).map_err(|e| Error::io(&path, e))?;
            let path = dir.join("true_target.json");
            std::fs::write(&path, serde_json::to_string_pretty(&domains.true_target)? + "\n")
                .map_err(|e| Error::io(&path, e))?;
            let summary = json!({
                "command": "generate",
                "source": domains.source.len(),
                "target_pool": pool.len(),
                "target_test": test.len(),
                "true_target": domains.true_target.probs(),
            });
            emit(out, json, &summary, || {
                format!(
                    "wrote {} source, {} target pool and {} test points to {}",
                    domains.source.len(),
                    pool.len(),
                    test.len(),
                    dir.display()
                )
            })
        }
        Command::Pretrain { config, out: dir } => {
            let cfg = load_config(config)?;
            let prepared = prepare(&cfg)?;
            create_dir(dir)?;
            prepared.pretrained.save(&dir.join("model.ckpt"))?;
            prepared.pretrain_trace.save_csv(&dir.join("loss_trace.csv"))?;
            let predicted = prepared.pretrained.predict(prepared.test_x().view())?;
            let truth = prepared.test.labels().ok_or(Error::Unlabeled)?;
            let accuracy = predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64;
            let summary = json!({"command": "pretrain", "target_accuracy": accuracy, "checkpoint": dir.join("model.ckpt")});
            emit(out, json, &summary, || {
                format!("pretrained model saved to {}; target test accuracy {accuracy:.4}", dir.join("model.ckpt").display())
            })
        }
        Command::Round {
            features,
            probs,
            checkpoint,
            state,
            answers,
            budget,
            delta,
            gamma,
            classes,
            sampler,
            seed,
            out: dir,
        } => round_command(
            RoundArgs {
                features,
                probs: probs.as_deref(),
                checkpoint: checkpoint.as_deref(),
                state: state.as_deref(),
                answers: answers.as_deref(),
                budget: *budget,
                delta: *delta,
                gamma,
                classes: *classes,
                sampler,
                seed: *seed,
                dir,
            },
            json,
            out,
        ),
        Command::Run { config, out: dir } => {
            let cfg = load_config(config)?;
            let outcome = run_experiment(&cfg)?;
            write_experiment(dir, &cfg, &outcome)?;
            for r in &outcome.reports {
                emit(out, json, r, || {
                    format!(
                        "round {:>2}  labels {:>5}  accuracy {:.4}  jsd {:.5}  pseudo {:>4}",
                        r.round, r.labels_spent, r.accuracy, r.jsd, r.pseudo_labeled
                    )
                })?;
            }
            Ok(())
        }
        Command::Compare {
            config,
            out: dir,
            samplers,
            variants,
            seeds,
        } => {
            let cfg = load_config(config)?;
            let seeds = parse_seeds(seeds)?;
            let comparison = if variants.is_empty() {
                let kinds = samplers
                    .split(',')
                    .map(|s| parse_sampler(s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                compare_samplers(&cfg, &kinds, &seeds)?
            } else {
                let parsed = variants.iter().map(|v| parse_variant(v)).collect::<Result<Vec<_>>>()?;
                if parsed.len() < 2 || seeds.len() < 5 {
                    return Err(Error::Config("compare needs at least 2 variants and 5 seeds".into()));
                }
                compare_variants(&cfg, &parsed, &seeds)?
            };
            write_comparison(dir, &comparison)?;
            print_comparison(out, json, &comparison)
        }
        Command::Estimate { protos, classes } => {
            let text = std::fs::read_to_string(protos).map_err(|e| Error::io(protos, e))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::malformed(protos, e.to_string()))?;
            let inner = value.get("prototypes").cloned().unwrap_or(value);
            let state: PrototypeState =
                serde_json::from_value(inner).map_err(|e| Error::malformed(protos, e.to_string()))?;
            state.validate()?;
            let counts = ClassCounts::from_prototypes(&state, *classes)?;
            let estimate = estimate_target_distribution(&counts)?;
            let line = json!({
                "classes": classes,
                "oracle_counts": counts.oracle,
                "pseudo_counts": counts.pseudo,
                "estimate": estimate.probs(),
            });
            writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
        }
        Command::Report { dir } => {
            let rounds = load_rounds(dir)?;
            if rounds.is_empty() {
                return Err(Error::InvalidDataset(format!("no round reports in {}", dir.display())));
            }
            if !json {
                writeln!(out, "round  labels  accuracy      jsd  pseudo").map_err(|e| Error::io("<stdout>", e))?;
            }
            for f in &rounds {
                let r = &f.report;
                emit(out, json, r, || {
                    format!(
                        "{:>5}  {:>6}  {:>8.4}  {:>7.5}  {:>6}",
                        r.round, r.labels_spent, r.accuracy, r.jsd, r.pseudo_labeled
                    )
                })?;
            }
            Ok(())
        }
    }
}

struct RoundArgs<'a> {
    features: &'a Path,
    probs: Option<&'a Path>,
    checkpoint: Option<&'a Path>,
    state: Option<&'a Path>,
    answers: Option<&'a Path>,
    budget: usize,
    delta: f64,
    gamma: &'a str,
    classes: Option<usize>,
    sampler: &'a str,
    seed: u64,
    dir: &'a Path,
}

fn round_command(args: RoundArgs<'_>, json: bool, out: &mut dyn Write) -> Result<()> {
    let model = args.checkpoint.map(ToyModel::load).transpose()?;
    let classes = args.classes.or(model.as_ref().map(|m| m.config().classes));
    let target = load_feature_dataset_with(args.features, classes)?.without_labels();

    let (features, probs) = match (&model, args.probs) {
        (Some(model), _) => model.features_and_probs(target.features_f64().view())?,
        (None, Some(path)) => (target.features_f64(), load_probs(path, &target)?),
        (None, None) => return Err(Error::Config("round needs --probs or --checkpoint".into())),
    };
    if probs.ncols() != target.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: target.num_classes(),
            got: probs.ncols(),
        });
    }
    let gamma = match parse_gamma(args.gamma)? {
        Gamma::Auto => default_gamma(features.ncols()),
        Gamma::Value(g) => g,
    };

    let mut prev = match args.state {
        Some(path) => RoundManifest::load(path)?.state,
        None => RoundState::initial(args.budget),
    };
    let mut queue = match args.answers {
        Some(path) => AnnotationQueue::load(path)?,
        None => AnnotationQueue::default(),
    };
    if let Some(&label) = queue.answers().values().find(|&&y| y >= target.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: target.num_classes(),
        });
    }
    prev.resolve_pending(queue.answers());

    let outcome = match parse_sampler(args.sampler)? {
        SamplerKind::Lamda => run_sampling_round(
            &target,
            features.view(),
            probs.view(),
            &prev,
            &mut queue,
            &RoundParams {
                budget: args.budget,
                delta: args.delta,
                gamma,
                cache: CacheOptions::default(),
            },
        )?,
        kind => {
            let baseline = match kind {
                SamplerKind::Random => Baseline::Random,
                SamplerKind::Margin => Baseline::Margin,
                _ => Baseline::Entropy,
            };
            let mut rng = stream_rng(args.seed, Stream::Sampler);
            run_baseline_round(baseline, &target, probs.view(), &prev, &mut queue, args.budget, &mut rng)?
        }
    };
    let estimate = estimate_target_distribution(&ClassCounts::from_prototypes(&outcome.prototypes, target.num_classes())?)?;
    let manifest = RoundManifest {
        round: outcome.state.round_index,
        budget: args.budget,
        delta: args.delta,
        gamma,
        classes: target.num_classes(),
        budget_underspent: outcome.budget_underspent,
        prototypes: outcome.prototypes,
        state: outcome.state,
        estimate: Some(estimate),
    };
    create_dir(args.dir)?;
    let manifest_path = args.dir.join(format!("round_{:03}.json", manifest.round));
    manifest.save(&manifest_path)?;
    let pending: Vec<u64> = manifest.state.pending.iter().copied().collect();
    let requests_path = args.dir.join("annotation_requests.csv");
    AnnotationQueue::write_requests(&pending, &requests_path)?;

    let summary = json!({
        "command": "round",
        "round": manifest.round,
        "newly_labeled": manifest.prototypes.newly_labeled_this_round,
        "pseudo_labeled": manifest.prototypes.pseudo_labeled.len(),
        "pending": pending.len(),
        "budget_underspent": manifest.budget_underspent,
        "manifest": manifest_path,
        "estimate": manifest.estimate.as_ref().map(|e| e.probs().to_vec()),
    });
    emit(out, json, &summary, || {
        format!(
            "round {}: {} sent to the oracle, {} pseudo-labeled, {} awaiting annotation; manifest {}",
            manifest.round,
            manifest.prototypes.newly_labeled_this_round,
            manifest.prototypes.pseudo_labeled.len(),
            pending.len(),
            manifest_path.display()
        )
    })
}

/// Reads `id,p0,...,p{C-1}` rows and aligns them with the rows of `target`.
fn load_probs(path: &Path, target: &FeatureDataset) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let mut rows: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        let bad = |what: &str| Error::malformed(path, format!("row {}: {what}", line + 1));
        let id: u64 = record.get(0).ok_or_else(|| bad("missing id"))?.trim().parse().map_err(|_| bad("bad id"))?;
        let probs = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad probability")))
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(probs.len()) != probs.len() {
            return Err(bad("inconsistent number of columns"));
        }
        if rows.insert(id, probs).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    let width = width.ok_or_else(|| Error::malformed(path, "no rows"))?;
    let mut out = Array2::zeros((target.len(), width));
    for (r, id) in target.ids().iter().enumerate() {
        let row = rows
            .get(id)
            .ok_or_else(|| Error::malformed(path, format!("no probabilities for id {id}")))?;
        for (c, &p) in row.iter().enumerate() {
            out[[r, c]] = p;
        }
    }
    Ok(out)
}

fn parse_sampler(name: &str) -> Result<SamplerKind> {
    match name {
        "lamda" => Ok(SamplerKind::Lamda),
        "random" => Ok(SamplerKind::Random),
        "margin" => Ok(SamplerKind::Margin),
        "entropy" => Ok(SamplerKind::Entropy),
        other => Err(Error::Config(format!("unknown sampler `{other}`"))),
    }
}

fn parse_gamma(text: &str) -> Result<Gamma> {
    if text == "auto" {
        return Ok(Gamma::Auto);
    }
    match text.parse::<f64>() {
        Ok(g) if g > 0.0 && g.is_finite() => Ok(Gamma::Value(g)),
        _ => Err(Error::Config(format!("gamma must be `auto` or a positive number, got `{text}`"))),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seeds must be `a..b` or a comma-separated list, got `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_variant(text: &str) -> Result<Variant> {
    let (name, overrides) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("variant must be NAME:key=value,..., got `{text}`")))?;
    let overrides: Vec<String> = overrides
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    Ok(Variant::new(name.trim(), overrides))
}

fn print_comparison(out: &mut dyn Write, json: bool, comparison: &Comparison) -> Result<()> {
    let io = |e| Error::io("<stdout>", e);
    if json {
        for v in &comparison.variants {
            let line = json!({
                "variant": v.name,
                "seeds": v.per_seed.len(),
                "accuracy_mean": v.accuracy_mean,
                "accuracy_std": v.accuracy_std,
                "jsd_mean": v.jsd_mean,
                "jsd_std": v.jsd_std,
            });
            writeln!(out, "{line}").map_err(io)?;
        }
        for p in &comparison.paired {
            writeln!(out, "{}", serde_json::to_string(p)?).map_err(io)?;
        }
        return Ok(());
    }
    writeln!(out, "{:<16} {:>17} {:>17}", "variant", "accuracy", "mean jsd").map_err(io)?;
    for v in &comparison.variants {
        writeln!(
            out,
            "{:<16} {:>8.4} ± {:<6.4} {:>8.5} ± {:<7.5}",
            v.name, v.accuracy_mean, v.accuracy_std, v.jsd_mean, v.jsd_std
        )
        .map_err(io)?;
    }
    for p in &comparison.paired {
        writeln!(
            out,
            "{} vs {} ({:?}): mean diff {:+.5}, {} better / {} worse / {} tied, sign test p = {:.4}",
            p.a, p.b, p.metric, p.mean_diff, p.a_better, p.b_better, p.ties, p.p_value
        )
        .map_err(io)?;
    }
    Ok(())
}
