//! Prototype sampling for one active-learning round, plus the uncertainty
//! and random baselines used in ablations.
//!
//! A round starts from the ids labeled in earlier rounds (X_L), discards all
//! earlier pseudo-labels, and then adds greedy argmax-gain candidates one at
//! a time. Each pick is routed by the top-2 margin of the current model: a
//! confident pick is pseudo-labeled with its top-1 class, anything else goes
//! to the oracle. The round ends once `budget` picks have gone to the oracle,
//! or when the pool runs out.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, LabelDistribution, RoundState};
use crate::error::{Error, Result};
use crate::kernel::{check_gamma, CacheOptions, KernelCache};

/// Tolerance on `Σ p = 1` for model probability vectors.
pub const PROBS_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// Margin above the threshold; pseudo-labeled.
    Easy,
    /// Sent to the oracle.
    Hard,
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("no classes".into()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROBS_SUM_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// (top-1 class, p1, p2). Ties resolve to the lower class id.
fn top_two(probs: &[f64]) -> (usize, f64, f64) {
    let mut best = (0, probs[0]);
    let mut second = f64::NEG_INFINITY;
    for (c, &p) in probs.iter().enumerate().skip(1) {
        if p > best.1 {
            second = best.1;
            best = (c, p);
        } else if p > second {
            second = p;
        }
    }
    (best.0, best.1, second)
}

/// Top-1 class and its probability.
pub fn pseudo_label(probs: &[f64]) -> Result<(usize, f64)> {
    check_probs(probs)?;
    let (class, p1, _) = top_two(probs);
    Ok((class, p1))
}

/// `p(ŷ1|x) − p(ŷ2|x)`.
pub fn top2_margin(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::TooFewClasses(probs.len()));
    }
    check_probs(probs)?;
    let (_, p1, p2) = top_two(probs);
    Ok(p1 - p2)
}

pub fn check_delta(delta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::Config(format!("margin threshold {delta} outside [0, 1]")))
    }
}

/// Easy iff the top-2 margin is strictly greater than `delta`.
pub fn margin_gate(probs: &[f64], delta: f64) -> Result<Route> {
    check_delta(delta)?;
    let margin = top2_margin(probs)?;
    Ok(if margin > delta { Route::Easy } else { Route::Hard })
}

fn row_slice<'a>(m: &ArrayView2<'a, f64>, i: usize) -> std::borrow::Cow<'a, [f64]> {
    let r: ArrayView1<'a, f64> = (*m).index_axis_move(ndarray::Axis(0), i);
    match r.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(r.to_vec()),
    }
}

/// Source of ground-truth labels for hard prototypes.
pub trait Oracle {
    /// The label of `id`, or `None` if the answer is deferred (the id is then
    /// recorded as awaiting annotation). Answers must be stable per id.
    fn annotate(&mut self, id: u64) -> Option<usize>;
}

/// Simulation oracle backed by held-out labels.
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    labels: HashMap<u64, usize>,
    queries: usize,
}

impl GroundTruthOracle {
    pub fn new(labels: HashMap<u64, usize>) -> Self {
        Self { labels, queries: 0 }
    }

    pub fn from_dataset(ds: &FeatureDataset) -> Result<Self> {
        let labels = ds.labels().ok_or(Error::Unlabeled)?;
        Ok(Self::new(
            ds.ids().iter().copied().zip(labels.iter().copied()).collect(),
        ))
    }

    pub fn queries(&self) -> usize {
        self.queries
    }
}

impl Oracle for GroundTruthOracle {
    fn annotate(&mut self, id: u64) -> Option<usize> {
        self.queries += 1;
        self.labels.get(&id).copied()
    }
}

/// File-backed oracle: answers come from an annotation file, everything else
/// is queued as a request.
#[derive(Debug, Clone, Default)]
pub struct AnnotationQueue {
    answers: BTreeMap<u64, usize>,
    requested: Vec<u64>,
}

impl AnnotationQueue {
    pub fn new(answers: BTreeMap<u64, usize>) -> Self {
        Self {
            answers,
            requested: Vec::new(),
        }
    }

    /// Reads `id,label` rows; rows with an empty label are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        let mut answers = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
            let id = record
                .get(0)
                .and_then(|v| v.parse::<u64>().ok())
                .ok_or_else(|| Error::malformed(path, "bad id column"))?;
            match record.get(1).filter(|v| !v.is_empty()) {
                Some(v) => {
                    let label = v
                        .parse::<usize>()
                        .map_err(|_| Error::malformed(path, format!("bad label `{v}`")))?;
                    answers.insert(id, label);
                }
                None => continue,
            }
        }
        Ok(Self::new(answers))
    }

    pub fn answers(&self) -> &BTreeMap<u64, usize> {
        &self.answers
    }

    pub fn requested(&self) -> &[u64] {
        &self.requested
    }

    /// Writes an `id,label` CSV with empty labels, ready to be filled in.
    pub fn write_requests(ids: &[u64], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("id,label\n");
        for id in ids {
            out.push_str(&format!("{id},\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl Oracle for AnnotationQueue {
    fn annotate(&mut self, id: u64) -> Option<usize> {
        let answer = self.answers.get(&id).copied();
        if answer.is_none() {
            self.requested.push(id);
        }
        answer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub class: usize,
    pub confidence: f64,
}

/// One greedy pick made during a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: u64,
    pub route: Route,
    /// Pseudo-label for easy picks, oracle answer for hard ones (absent while
    /// the annotation is pending).
    pub class: Option<usize>,
    /// Top-1 probability.
    pub confidence: f64,
    pub margin: f64,
    pub gain: f64,
}

/// X_P = X_L ∪ X_PL for one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeState {
    /// X_P in selection order; ids carried over from earlier rounds come first.
    pub selected: Vec<u64>,
    /// X_L with answered labels.
    pub oracle_labeled: BTreeMap<u64, usize>,
    /// X_L members still awaiting an annotation.
    #[serde(default)]
    pub pending: BTreeSet<u64>,
    /// X_PL.
    pub pseudo_labeled: BTreeMap<u64, PseudoLabel>,
    pub newly_labeled_this_round: usize,
    /// Picks made this round, in order.
    #[serde(default)]
    pub picks: Vec<SelectionRecord>,
}

impl PrototypeState {
    /// A prototype set holding only oracle labels, as produced by the
    /// baseline samplers.
    pub fn from_oracle_labels(labels: BTreeMap<u64, usize>, newly_labeled: usize) -> Self {
        Self {
            selected: labels.keys().copied().collect(),
            oracle_labeled: labels,
            newly_labeled_this_round: newly_labeled,
            ..Self::default()
        }
    }

    /// Checks the partition invariants.
    pub fn validate(&self) -> Result<()> {
        let mut labeled: BTreeSet<u64> = self.oracle_labeled.keys().copied().collect();
        for id in &self.pending {
            if !labeled.insert(*id) {
                return Err(Error::InvalidDataset(format!("id {id} both pending and labeled")));
            }
        }
        for (id, pl) in &self.pseudo_labeled {
            if labeled.contains(id) {
                return Err(Error::InvalidDataset(format!(
                    "id {id} is both oracle- and pseudo-labeled"
                )));
            }
            if !(pl.confidence > 0.0 && pl.confidence <= 1.0) {
                return Err(Error::InvalidConfidence(pl.confidence));
            }
        }
        let selected: BTreeSet<u64> = self.selected.iter().copied().collect();
        let union: BTreeSet<u64> = labeled
            .into_iter()
            .chain(self.pseudo_labeled.keys().copied())
            .collect();
        if selected != union || selected.len() != self.selected.len() {
            return Err(Error::InvalidDataset(
                "selected set differs from oracle ∪ pseudo labels".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundParams {
    /// New oracle labels per round (B).
    pub budget: usize,
    /// Margin threshold Δ.
    pub delta: f64,
    /// RBF bandwidth γ.
    pub gamma: f64,
    pub cache: CacheOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub prototypes: PrototypeState,
    pub state: RoundState,
    /// The pool ran out before `budget` hard prototypes were found.
    pub budget_underspent: bool,
}

/// Runs one round of prototype sampling over `target`.
///
/// `features` (n_T × d_f) and `probs` (n_T × C) are the current model's
/// outputs for the rows of `target`.
pub fn run_sampling_round(
    target: &FeatureDataset,
    features: ArrayView2<'_, f64>,
    probs: ArrayView2<'_, f64>,
    prev: &RoundState,
    oracle: &mut dyn Oracle,
    params: &RoundParams,
) -> Result<RoundOutcome> {
    let n = target.len();
    if features.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: features.nrows(),
        });
    }
    if probs.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: probs.nrows(),
        });
    }
    let classes = probs.ncols();
    if classes < 2 {
        return Err(Error::TooFewClasses(classes));
    }
    check_delta(params.delta)?;
    check_gamma(params.gamma)?;

    let ids = target.ids();
    let row_of: HashMap<u64, usize> = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    for id in &prev.labeled_ids {
        if !row_of.contains_key(id) {
            return Err(Error::InvalidDataset(format!(
                "previously labeled id {id} is not in the target pool"
            )));
        }
    }

    let mut cache = KernelCache::build(features.to_owned(), params.gamma, params.cache)?
        .with_tie_keys(ids.to_vec())?;

    // X_P ← X_L; X_PL ← ∅.
    let mut protos = PrototypeState::default();
    for &id in &prev.labeled_ids {
        cache.commit(row_of[&id])?;
        protos.selected.push(id);
        match prev.oracle_labels.get(&id) {
            Some(&label) => {
                protos.oracle_labeled.insert(id, label);
            }
            None => {
                protos.pending.insert(id);
            }
        }
    }

    let mut state = prev.clone();
    state.round_index = prev.round_index + 1;
    state.budget_per_round = params.budget;

    let mut newly_labeled = 0;
    let mut underspent = false;
    while newly_labeled < params.budget {
        let Some((row, _)) = cache.best_candidate() else {
            underspent = true;
            break;
        };
        let gain = cache.commit(row)?;
        let id = ids[row];
        let p = row_slice(&probs, row);
        let route = margin_gate(&p, params.delta)?;
        let (top1, confidence) = pseudo_label(&p)?;
        let margin = top2_margin(&p)?;
        protos.selected.push(id);
        let class = match route {
            Route::Easy => {
                protos.pseudo_labeled.insert(
                    id,
                    PseudoLabel {
                        class: top1,
                        confidence,
                    },
                );
                Some(top1)
            }
            Route::Hard => {
                newly_labeled += 1;
                state.labeled_ids.insert(id);
                match oracle.annotate(id) {
                    Some(label) if label >= classes => {
                        return Err(Error::LabelOutOfRange { label, classes });
                    }
                    Some(label) => {
                        protos.oracle_labeled.insert(id, label);
                        state.oracle_labels.insert(id, label);
                        Some(label)
                    }
                    None => {
                        protos.pending.insert(id);
                        state.pending.insert(id);
                        None
                    }
                }
            }
        };
        protos.picks.push(SelectionRecord {
            id,
            route,
            class,
            confidence,
            margin,
            gain,
        });
    }
    protos.newly_labeled_this_round = newly_labeled;
    state.total_budget_spent = prev.total_budget_spent + newly_labeled;

    Ok(RoundOutcome {
        prototypes: protos,
        state,
        budget_underspent: underspent,
    })
}

/// `budget` ids drawn uniformly without replacement from `pool`.
pub fn sample_random(pool: &[u64], budget: usize, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_random_with(pool, budget, &mut rng)
}

pub fn sample_random_with<R: rand::Rng + ?Sized>(
    pool: &[u64],
    budget: usize,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if budget > pool.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: pool.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), budget)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

fn lowest_scores(scores: Vec<f64>, budget: usize) -> Result<Vec<usize>> {
    if budget > scores.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps the lower index first among equal scores.
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order.truncate(budget);
    Ok(order)
}

/// Rows with the `budget` smallest top-2 margins.
pub fn sample_margin(probs: ArrayView2<'_, f64>, budget: usize) -> Result<Vec<usize>> {
    let margins = (0..probs.nrows())
        .map(|r| top2_margin(&row_slice(&probs, r)))
        .collect::<Result<Vec<_>>>()?;
    lowest_scores(margins, budget)
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Rows with the `budget` largest predictive entropies.
pub fn sample_entropy(probs: ArrayView2<'_, f64>, budget: usize) -> Result<Vec<usize>> {
    let neg_entropy = (0..probs.nrows())
        .map(|r| {
            let p = row_slice(&probs, r);
            check_probs(&p)?;
            Ok(-entropy(&p))
        })
        .collect::<Result<Vec<_>>>()?;
    lowest_scores(neg_entropy, budget)
}

/// Query strategies used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Random,
    Margin,
    Entropy,
}

/// One round of a baseline strategy over the rows of `target` not yet in
/// `prev.labeled_ids`. Every pick is sent to the oracle; nothing is
/// pseudo-labeled. The returned prototype set holds all oracle labels so far.
pub fn run_baseline_round<R: rand::Rng + ?Sized>(
    baseline: Baseline,
    target: &FeatureDataset,
    probs: ArrayView2<'_, f64>,
    prev: &RoundState,
    oracle: &mut dyn Oracle,
    budget: usize,
    rng: &mut R,
) -> Result<RoundOutcome> {
    if probs.nrows() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: probs.nrows(),
        });
    }
    let classes = probs.ncols();
    if classes < 2 {
        return Err(Error::TooFewClasses(classes));
    }
    let ids = target.ids();
    let candidates: Vec<usize> = (0..ids.len())
        .filter(|&r| !prev.labeled_ids.contains(&ids[r]))
        .collect();
    let take = budget.min(candidates.len());
    let rows: Vec<usize> = match baseline {
        Baseline::Random => {
            let chosen = rand::seq::index::sample(rng, candidates.len(), take);
            chosen.into_iter().map(|i| candidates[i]).collect()
        }
        Baseline::Margin | Baseline::Entropy => {
            let sub = probs.select(ndarray::Axis(0), &candidates);
            let picked = if baseline == Baseline::Margin {
                sample_margin(sub.view(), take)?
            } else {
                sample_entropy(sub.view(), take)?
            };
            picked.into_iter().map(|i| candidates[i]).collect()
        }
    };

    let mut state = prev.clone();
    state.round_index = prev.round_index + 1;
    state.budget_per_round = budget;
    let mut picks = Vec::with_capacity(rows.len());
    for &row in &rows {
        let id = ids[row];
        let p = row_slice(&probs, row);
        let (_, confidence) = pseudo_label(&p)?;
        let margin = top2_margin(&p)?;
        state.labeled_ids.insert(id);
        let class = match oracle.annotate(id) {
            Some(label) if label >= classes => return Err(Error::LabelOutOfRange { label, classes }),
            Some(label) => {
                state.oracle_labels.insert(id, label);
                Some(label)
            }
            None => {
                state.pending.insert(id);
                None
            }
        };
        picks.push(SelectionRecord {
            id,
            route: Route::Hard,
            class,
            confidence,
            margin,
            gain: 0.0,
        });
    }
    state.total_budget_spent = prev.total_budget_spent + rows.len();
    let mut prototypes = PrototypeState::from_oracle_labels(state.oracle_labels.clone(), rows.len());
    prototypes.pending = state.pending.clone();
    prototypes.selected = state.labeled_ids.iter().copied().collect();
    prototypes.picks = picks;
    Ok(RoundOutcome {
        prototypes,
        state,
        budget_underspent: take < budget,
    })
}

/// JSON record of one sampling round in feature-file mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub round: usize,
    pub budget: usize,
    pub delta: f64,
    pub gamma: f64,
    pub classes: usize,
    pub budget_underspent: bool,
    pub prototypes: PrototypeState,
    /// State to carry into the next round.
    pub state: RoundState,
    /// Target label distribution estimated from the prototypes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<LabelDistribution>,
}

impl RoundManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        manifest.prototypes.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
