//! A small differentiable model for end-to-end experiments.
//!
//! ```text
//! x ──tanh(W1·+b1)──tanh(W2·+b2)──▶ f(x) ──P·+c──▶ e ──cosine / linear──▶ softmax
//!                                     │
//!                                     └──GRL──▶ tanh ─▶ tanh ─▶ logit ─▶ σ = p(source | x)
//! ```
//!
//! Gradients are derived by hand per layer. The gradient reversal layer sits
//! between `f(x)` and the discriminator: with reversal enabled, the extractor
//! receives `−λ` times the discriminator's gradient while the discriminator
//! itself minimises the adversarial loss. The source domain has label 1.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::WeightedSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    /// Softmax over `cos(e, w_c) / τ`.
    Cosine,
    /// Softmax over `W^T e + b`.
    Linear,
}

/// Gradient-reversal coefficient as a function of training progress `s ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrlSchedule {
    /// `λ(s) = 2 / (1 + e^{−s})`, from 1 at `s = 0` to about 1.46 at `s = 1`.
    Sigmoid,
    /// `λ(s) = 2 / (1 + e^{−10 s}) − 1`, from 0 to about 1.
    Ramp,
}

impl GrlSchedule {
    pub fn lambda(self, progress: f64) -> f64 {
        let s = progress.clamp(0.0, 1.0);
        match self {
            GrlSchedule::Sigmoid => 2.0 / (1.0 + (-s).exp()),
            GrlSchedule::Ramp => 2.0 / (1.0 + (-10.0 * s).exp()) - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub classes: usize,
    /// Width of both discriminator hidden layers.
    pub disc_hidden: usize,
    pub classifier: ClassifierKind,
    pub tau: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("disc_hidden", self.disc_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.classes < 2 {
            return Err(Error::TooFewClasses(self.classes));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Fully connected layer `z = x·Wᵀ + b`, with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }

    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("finite std");
        Self {
            w: Array2::from_shape_simple_fn((outputs, inputs), || normal.sample(rng)),
            b: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients for pre-activation gradient `dz` and
    /// returns the gradient with respect to the input.
    fn backward(&self, x: ArrayView2<'_, f64>, dz: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &dz.t().dot(&x);
        grad.b += &dz.sum_axis(Axis(0));
        dz.dot(&self.w)
    }
}

/// Every trainable tensor. Also used to hold gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub ext1: Dense,
    pub ext2: Dense,
    pub proj: Dense,
    /// Classifier weight, `d × C`; column `c` is `w_c`.
    pub cls_w: Array2<f64>,
    /// Present for the linear classifier only.
    pub cls_b: Option<Array1<f64>>,
    pub disc1: Dense,
    pub disc2: Dense,
    pub disc3: Dense,
}

impl Params {
    fn zeros(config: &ModelConfig) -> Self {
        Self {
            ext1: Dense::zeros(config.input_dim, config.hidden),
            ext2: Dense::zeros(config.hidden, config.feature_dim),
            proj: Dense::zeros(config.feature_dim, config.embed_dim),
            cls_w: Array2::zeros((config.embed_dim, config.classes)),
            cls_b: match config.classifier {
                ClassifierKind::Cosine => None,
                ClassifierKind::Linear => Some(Array1::zeros(config.classes)),
            },
            disc1: Dense::zeros(config.feature_dim, config.disc_hidden),
            disc2: Dense::zeros(config.disc_hidden, config.disc_hidden),
            disc3: Dense::zeros(config.disc_hidden, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, block) in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    /// Named parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("ext1.w", slice(&self.ext1.w)),
            ("ext1.b", slice1(&self.ext1.b)),
            ("ext2.w", slice(&self.ext2.w)),
            ("ext2.b", slice1(&self.ext2.b)),
            ("proj.w", slice(&self.proj.w)),
            ("proj.b", slice1(&self.proj.b)),
            ("cls.w", slice(&self.cls_w)),
        ];
        if let Some(b) = &self.cls_b {
            out.push(("cls.b", slice1(b)));
        }
        out.extend([
            ("disc1.w", slice(&self.disc1.w)),
            ("disc1.b", slice1(&self.disc1.b)),
            ("disc2.w", slice(&self.disc2.w)),
            ("disc2.b", slice1(&self.disc2.b)),
            ("disc3.w", slice(&self.disc3.w)),
            ("disc3.b", slice1(&self.disc3.b)),
        ]);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("ext1.w", slice_mut(&mut self.ext1.w)),
            ("ext1.b", slice1_mut(&mut self.ext1.b)),
            ("ext2.w", slice_mut(&mut self.ext2.w)),
            ("ext2.b", slice1_mut(&mut self.ext2.b)),
            ("proj.w", slice_mut(&mut self.proj.w)),
            ("proj.b", slice1_mut(&mut self.proj.b)),
            ("cls.w", slice_mut(&mut self.cls_w)),
        ];
        if let Some(b) = &mut self.cls_b {
            out.push(("cls.b", slice1_mut(b)));
        }
        out.extend([
            ("disc1.w", slice_mut(&mut self.disc1.w)),
            ("disc1.b", slice1_mut(&mut self.disc1.b)),
            ("disc2.w", slice_mut(&mut self.disc2.w)),
            ("disc2.b", slice1_mut(&mut self.disc2.b)),
            ("disc3.w", slice_mut(&mut self.disc3.w)),
            ("disc3.b", slice1_mut(&mut self.disc3.b)),
        ]);
        out
    }

    pub fn is_extractor_block(name: &str) -> bool {
        name.starts_with("ext")
    }

    pub fn is_discriminator_block(name: &str) -> bool {
        name.starts_with("disc")
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    params: Params,
}

/// Which loss a gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Supervised,
    Adversarial,
    Total,
}

/// Loss values for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub supervised: f64,
    pub adversarial: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.supervised + self.adversarial
    }
}

/// Inputs of one optimisation step. Labeled target and unlabeled target rows
/// may be empty; the corresponding terms are then dropped.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub source_x: ArrayView2<'a, f64>,
    pub source_y: &'a [usize],
    pub labeled_x: ArrayView2<'a, f64>,
    pub labeled_y: &'a [usize],
    pub target_x: ArrayView2<'a, f64>,
}

struct ExtractorCache {
    a1: Array2<f64>,
    f: Array2<f64>,
}

struct HeadCache {
    e: Array2<f64>,
    probs: Array2<f64>,
    cosine: Option<CosineCache>,
}

struct CosineCache {
    e_hat: Array2<f64>,
    e_norm: Array1<f64>,
    w_hat: Array2<f64>,
    w_norm: Array1<f64>,
    cos: Array2<f64>,
}

struct DiscCache {
    h1: Array2<f64>,
    h2: Array2<f64>,
    logits: Array1<f64>,
}

impl ToyModel {
    /// Random initialisation: weights `N(0, 1/fan_in)`, classifier columns
    /// `N(0, 1)`, biases zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let params = Params {
            ext1: Dense::init(config.input_dim, config.hidden, rng),
            ext2: Dense::init(config.hidden, config.feature_dim, rng),
            proj: Dense::init(config.feature_dim, config.embed_dim, rng),
            cls_w: match config.classifier {
                ClassifierKind::Cosine => {
                    Array2::from_shape_simple_fn((config.embed_dim, config.classes), || {
                        std_normal.sample(rng)
                    })
                }
                ClassifierKind::Linear => {
                    let std = (1.0 / config.embed_dim as f64).sqrt();
                    Array2::from_shape_simple_fn((config.embed_dim, config.classes), || {
                        std * std_normal.sample(rng)
                    })
                }
            },
            cls_b: match config.classifier {
                ClassifierKind::Cosine => None,
                ClassifierKind::Linear => Some(Array1::zeros(config.classes)),
            },
            disc1: Dense::init(config.feature_dim, config.disc_hidden, rng),
            disc2: Dense::init(config.disc_hidden, config.disc_hidden, rng),
            disc3: Dense::init(config.disc_hidden, 1, rng),
        };
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expected = Params::zeros(&config);
        let shapes_match = expected
            .blocks()
            .iter()
            .zip(params.blocks())
            .all(|((a, x), (b, y))| a == &b && x.len() == y.len())
            && expected.blocks().len() == params.blocks().len()
            && expected.ext1.w.dim() == params.ext1.w.dim()
            && expected.ext2.w.dim() == params.ext2.w.dim()
            && expected.proj.w.dim() == params.proj.w.dim()
            && expected.cls_w.dim() == params.cls_w.dim()
            && expected.disc1.w.dim() == params.disc1.w.dim()
            && expected.disc2.w.dim() == params.disc2.w.dim();
        if !shapes_match {
            return Err(Error::Config("parameter shapes do not match the model config".into()));
        }
        let model = Self { config, params };
        model.validate()?;
        Ok(model)
    }

    /// Checks `τ > 0` and, for the cosine head, that no `w_c` is zero.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.config.classifier == ClassifierKind::Cosine {
            for col in self.params.cls_w.columns() {
                if col.iter().all(|&v| v == 0.0) {
                    return Err(Error::ZeroNorm("classifier weight column"));
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn extract(&self, x: ArrayView2<'_, f64>) -> ExtractorCache {
        let a1 = self.params.ext1.forward(x).mapv_into(f64::tanh);
        let f = self.params.ext2.forward(a1.view()).mapv_into(f64::tanh);
        ExtractorCache { a1, f }
    }

    fn head(&self, f: ArrayView2<'_, f64>) -> Result<HeadCache> {
        let e = self.params.proj.forward(f);
        match self.config.classifier {
            ClassifierKind::Cosine => {
                let c = cosine_parts(e.view(), self.params.cls_w.view())?;
                let probs = softmax_rows(&(&c.cos / self.config.tau));
                Ok(HeadCache {
                    e,
                    probs,
                    cosine: Some(c),
                })
            }
            ClassifierKind::Linear => {
                let b = self.params.cls_b.as_ref().expect("linear head has a bias");
                let scores = e.dot(&self.params.cls_w) + b;
                Ok(HeadCache {
                    e,
                    probs: softmax_rows(&scores),
                    cosine: None,
                })
            }
        }
    }

    fn discriminate(&self, f: ArrayView2<'_, f64>) -> DiscCache {
        let h1 = self.params.disc1.forward(f).mapv_into(f64::tanh);
        let h2 = self.params.disc2.forward(h1.view()).mapv_into(f64::tanh);
        let logits = self.params.disc3.forward(h2.view()).column(0).to_owned();
        DiscCache { h1, h2, logits }
    }

    /// Extractor output `f(x)`, one row per input.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(self.extract(x).f)
    }

    /// Embedding `e = h(f(x))`.
    pub fn embeddings(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let f = self.extract(x).f;
        Ok(self.params.proj.forward(f.view()))
    }

    /// Class probabilities, one row per input.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let f = self.extract(x).f;
        Ok(self.head(f.view())?.probs)
    }

    /// Features and class probabilities in one pass.
    pub fn features_and_probs(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(&x)?;
        let f = self.extract(x).f;
        let probs = self.head(f.view())?.probs;
        Ok((f, probs))
    }

    /// Arg-max class per row, lowest index on ties.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let probs = self.predict_proba(x)?;
        Ok(probs.rows().into_iter().map(|r| argmax(r.as_slice().expect("row"))).collect())
    }

    /// Discriminator output `p(source | x)`.
    pub fn domain_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_input(&x)?;
        let f = self.extract(x).f;
        Ok(self.discriminate(f.view()).logits.mapv(sigmoid))
    }

    pub fn supervised_loss(&self, batch: &Batch<'_>) -> Result<f64> {
        Ok(self.loss(batch, Objective::Supervised)?.supervised)
    }

    pub fn adversarial_loss(&self, batch: &Batch<'_>) -> Result<f64> {
        Ok(self.loss(batch, Objective::Adversarial)?.adversarial)
    }

    pub fn total_loss(&self, batch: &Batch<'_>) -> Result<f64> {
        Ok(self.loss(batch, Objective::Total)?.total())
    }

    pub fn loss(&self, batch: &Batch<'_>, objective: Objective) -> Result<LossParts> {
        Ok(self.run(batch, objective, None)?.0)
    }

    /// Loss and gradient of `objective`.
    ///
    /// With `grl = None` the result is the plain gradient of the selected
    /// loss. With `grl = Some(λ)` the extractor blocks receive the supervised
    /// gradient minus `λ` times the adversarial gradient, which is the update
    /// direction of the minimax game; every other block is unchanged.
    pub fn loss_and_grad(
        &self,
        batch: &Batch<'_>,
        objective: Objective,
        grl: Option<f64>,
    ) -> Result<(LossParts, Params)> {
        let (parts, grad) = self.run(batch, objective, Some(grl))?;
        Ok((parts, grad.expect("gradient requested")))
    }

    fn run(
        &self,
        batch: &Batch<'_>,
        objective: Objective,
        grad: Option<Option<f64>>,
    ) -> Result<(LossParts, Option<Params>)> {
        let want_sup = objective != Objective::Adversarial;
        let want_adv = objective != Objective::Supervised;
        let mut grads = grad.map(|_| Params::zeros(&self.config));
        let mut parts = LossParts::default();

        if batch.source_y.len() != batch.source_x.nrows() || batch.labeled_y.len() != batch.labeled_x.nrows() {
            return Err(Error::InvalidDataset("batch labels and rows differ in length".into()));
        }
        for x in [&batch.source_x, &batch.labeled_x, &batch.target_x] {
            if x.nrows() > 0 {
                self.check_input(x)?;
            }
        }
        if batch.source_x.nrows() == 0 {
            return Err(Error::InvalidDataset("source batch is empty".into()));
        }

        let src = self.extract(batch.source_x);
        let mut d_src_sup: Option<Array2<f64>> = None;
        let mut d_src_adv: Option<Array2<f64>> = None;

        if want_sup {
            let (loss, df) = self.supervised_term(&src.f, batch.source_y, grads.as_mut())?;
            parts.supervised += loss;
            d_src_sup = df;
        }

        let lab = (batch.labeled_x.nrows() > 0).then(|| self.extract(batch.labeled_x));
        let mut d_lab: Option<Array2<f64>> = None;
        if want_sup {
            if let Some(lab) = &lab {
                let (loss, df) = self.supervised_term(&lab.f, batch.labeled_y, grads.as_mut())?;
                parts.supervised += loss;
                d_lab = df;
            }
        }

        let tgt = (want_adv && batch.target_x.nrows() > 0).then(|| self.extract(batch.target_x));
        let mut d_tgt_adv: Option<Array2<f64>> = None;
        if want_adv {
            let tgt = tgt.as_ref().ok_or_else(|| {
                Error::InvalidDataset("adversarial loss needs a nonempty target batch".into())
            })?;
            let (ls, dfs) = self.domain_term(&src.f, 1.0, grads.as_mut());
            let (lt, dft) = self.domain_term(&tgt.f, 0.0, grads.as_mut());
            parts.adversarial = ls + lt;
            d_src_adv = dfs;
            d_tgt_adv = dft;
        }

        if let (Some(grads), Some(grl)) = (grads.as_mut(), grad) {
            let adv_scale = grl.map_or(1.0, |lambda| -lambda);
            let mut ext_sup = Params::zeros(&self.config);
            let mut ext_adv = Params::zeros(&self.config);
            if let Some(df) = &d_src_sup {
                self.backprop_extractor(batch.source_x, &src, df, &mut ext_sup);
            }
            if let (Some(df), Some(lab)) = (&d_lab, &lab) {
                self.backprop_extractor(batch.labeled_x, lab, df, &mut ext_sup);
            }
            if let Some(df) = &d_src_adv {
                self.backprop_extractor(batch.source_x, &src, df, &mut ext_adv);
            }
            if let (Some(df), Some(tgt)) = (&d_tgt_adv, &tgt) {
                self.backprop_extractor(batch.target_x, tgt, df, &mut ext_adv);
            }
            for (dst, (sup, adv)) in [&mut grads.ext1, &mut grads.ext2]
                .into_iter()
                .zip([(&ext_sup.ext1, &ext_adv.ext1), (&ext_sup.ext2, &ext_adv.ext2)])
            {
                Zip::from(&mut dst.w)
                    .and(&sup.w)
                    .and(&adv.w)
                    .for_each(|d, &s, &a| *d = s + adv_scale * a);
                Zip::from(&mut dst.b)
                    .and(&sup.b)
                    .and(&adv.b)
                    .for_each(|d, &s, &a| *d = s + adv_scale * a);
            }
        }
        Ok((parts, grads))
    }

    /// Mean cross-entropy of one labeled set; accumulates head gradients and
    /// returns the gradient with respect to `f`.
    fn supervised_term(
        &self,
        f: &Array2<f64>,
        labels: &[usize],
        grads: Option<&mut Params>,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        let classes = self.config.classes;
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let head = self.head(f.view())?;
        let n = labels.len() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -head.probs[[i, y]].ln())
            .sum::<f64>()
            / n;
        let Some(grads) = grads else {
            return Ok((loss, None));
        };

        let mut g = head.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            g[[i, y]] -= 1.0;
        }
        g /= n;

        let de = match &head.cosine {
            Some(c) => {
                let tau = self.config.tau;
                let gc = &g * &c.cos;
                let row_dot = gc.sum_axis(Axis(1));
                let col_dot = gc.sum_axis(Axis(0));
                let mut de = g.dot(&c.w_hat.t()) - &c.e_hat * &row_dot.insert_axis(Axis(1));
                de /= &(&c.e_norm * tau).insert_axis(Axis(1));
                let mut dw = c.e_hat.t().dot(&g) - &c.w_hat * &col_dot.insert_axis(Axis(0));
                dw /= &(&c.w_norm * tau).insert_axis(Axis(0));
                grads.cls_w += &dw;
                de
            }
            None => {
                grads.cls_w += &head.e.t().dot(&g);
                if let Some(b) = grads.cls_b.as_mut() {
                    *b += &g.sum_axis(Axis(0));
                }
                g.dot(&self.params.cls_w.t())
            }
        };
        let df = self.params.proj.backward(f.view(), &de, &mut grads.proj);
        Ok((loss, Some(df)))
    }

    /// `−mean log p(d | x)` for domain label `d`; accumulates discriminator
    /// gradients and returns the gradient with respect to `f`.
    fn domain_term(&self, f: &Array2<f64>, domain: f64, grads: Option<&mut Params>) -> (f64, Option<Array2<f64>>) {
        let disc = self.discriminate(f.view());
        let n = f.nrows() as f64;
        // −log σ(l) = softplus(−l); −log(1 − σ(l)) = softplus(l).
        let sign = if domain == 1.0 { -1.0 } else { 1.0 };
        let loss = disc.logits.iter().map(|&l| softplus(sign * l)).sum::<f64>() / n;
        let Some(grads) = grads else {
            return (loss, None);
        };
        let dl = disc.logits.mapv(|l| (sigmoid(l) - domain) / n).insert_axis(Axis(1));
        let dh2 = self.params.disc3.backward(disc.h2.view(), &dl, &mut grads.disc3);
        let dz2 = dh2 * disc.h2.mapv(|h| 1.0 - h * h);
        let dh1 = self.params.disc2.backward(disc.h1.view(), &dz2, &mut grads.disc2);
        let dz1 = dh1 * disc.h1.mapv(|h| 1.0 - h * h);
        let df = self.params.disc1.backward(f.view(), &dz1, &mut grads.disc1);
        (loss, Some(df))
    }

    fn backprop_extractor(&self, x: ArrayView2<'_, f64>, cache: &ExtractorCache, df: &Array2<f64>, grads: &mut Params) {
        let dz2 = df * &cache.f.mapv(|v| 1.0 - v * v);
        let da1 = self.params.ext2.backward(cache.a1.view(), &dz2, &mut grads.ext2);
        let dz1 = da1 * cache.a1.mapv(|v| 1.0 - v * v);
        self.params.ext1.backward(x, &dz1, &mut grads.ext1);
    }
}

fn cosine_parts(e: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> Result<CosineCache> {
    let e_norm = e.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if e_norm.iter().any(|&v| v == 0.0) {
        return Err(Error::ZeroNorm("embedding"));
    }
    let w_norm = w.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    if w_norm.iter().any(|&v| v == 0.0) {
        return Err(Error::ZeroNorm("classifier weight column"));
    }
    let e_hat = &e / &e_norm.view().insert_axis(Axis(1));
    let w_hat = &w / &w_norm.view().insert_axis(Axis(0));
    let cos = e_hat.dot(&w_hat);
    Ok(CosineCache {
        e_hat,
        e_norm,
        w_hat,
        w_norm,
        cos,
    })
}

/// Softmax inputs `cos(e_i, w_c) / τ` for embeddings (rows) and weight columns.
pub fn cosine_scores(embeddings: ArrayView2<'_, f64>, weight: ArrayView2<'_, f64>, tau: f64) -> Result<Array2<f64>> {
    if embeddings.ncols() != weight.nrows() {
        return Err(Error::DimensionMismatch {
            expected: weight.nrows(),
            got: embeddings.ncols(),
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(cosine_parts(embeddings, weight)?.cos / tau)
}

/// Cosine-classifier probabilities for precomputed embeddings.
pub fn cosine_probs(embeddings: ArrayView2<'_, f64>, weight: ArrayView2<'_, f64>, tau: f64) -> Result<Array2<f64>> {
    Ok(softmax_rows(&cosine_scores(embeddings, weight, tau)?))
}

/// Class probabilities of a single input under a cosine-head model.
pub fn cosine_forward(x: &[f64], model: &ToyModel) -> Result<Vec<f64>> {
    if model.config.classifier != ClassifierKind::Cosine {
        return Err(Error::Config("model does not use a cosine classifier".into()));
    }
    let row = ArrayView2::from_shape((1, x.len()), x).expect("one row");
    Ok(model.predict_proba(row)?.into_raw_vec_and_offset().0)
}

pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Optimiser and schedule settings for [`train_round`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: GrlSchedule,
    pub adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: GrlSchedule::Sigmoid,
            adversarial: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Training data for one round. `rho` is the sampling distribution over
/// source rows; labeled and unlabeled target rows may be empty.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub source_x: ArrayView2<'a, f64>,
    pub source_y: &'a [usize],
    pub rho: &'a [f64],
    pub labeled_x: ArrayView2<'a, f64>,
    pub labeled_y: &'a [usize],
    pub target_x: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lambda: f64,
    pub supervised: f64,
    pub adversarial: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

impl LossTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.epochs {
            w.serialize(row).map_err(|e| Error::InvalidDataset(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<loss trace>", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Minibatch SGD with momentum and weight decay.
///
/// Each epoch has `⌈n_S / batch_size⌉` steps. A step draws `batch_size`
/// source rows from `rho` and `batch_size` unlabeled target rows uniformly,
/// both with replacement, plus up to `batch_size` labeled target rows. The
/// reversal coefficient follows `config.schedule` over the progress of this
/// call. A non-finite loss aborts with [`Error::Diverged`] and leaves the
/// model unchanged.
pub fn train_round<R: Rng + ?Sized>(
    model: &mut ToyModel,
    data: &TrainData<'_>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossTrace> {
    config.validate()?;
    let n_s = data.source_x.nrows();
    if n_s == 0 || data.source_y.len() != n_s || data.rho.len() != n_s {
        return Err(Error::InvalidDataset("source rows, labels and rho must align and be nonempty".into()));
    }
    if data.labeled_y.len() != data.labeled_x.nrows() {
        return Err(Error::InvalidDataset("labeled target rows and labels differ in length".into()));
    }
    let source_sampler = WeightedSampler::new(data.rho)?;
    let n_l = data.labeled_x.nrows();
    let n_t = data.target_x.nrows();
    let adversarial = config.adversarial && n_t > 0;
    let objective = if adversarial { Objective::Total } else { Objective::Supervised };

    let steps_per_epoch = n_s.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut working = model.clone();
    let mut velocity = working.params.zeros_like();
    let mut trace = LossTrace::default();
    let empty = Array2::<f64>::zeros((0, working.config.input_dim));
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut sums = LossParts::default();
        let mut lambda = 0.0;
        for _ in 0..steps_per_epoch {
            lambda = config.schedule.lambda(step as f64 / total_steps as f64);
            let src_idx = source_sampler.batch(config.batch_size, rng);
            let source_x = data.source_x.select(Axis(0), &src_idx);
            let source_y: Vec<usize> = src_idx.iter().map(|&i| data.source_y[i]).collect();
            let lab_idx: Vec<usize> = (0..config.batch_size.min(n_l)).map(|_| rng.random_range(0..n_l)).collect();
            let labeled_x = data.labeled_x.select(Axis(0), &lab_idx);
            let labeled_y: Vec<usize> = lab_idx.iter().map(|&i| data.labeled_y[i]).collect();
            let target_x = if adversarial {
                let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..n_t)).collect();
                data.target_x.select(Axis(0), &idx)
            } else {
                empty.clone()
            };
            let batch = Batch {
                source_x: source_x.view(),
                source_y: &source_y,
                labeled_x: labeled_x.view(),
                labeled_y: &labeled_y,
                target_x: target_x.view(),
            };
            let (parts, grads) = working.loss_and_grad(&batch, objective, Some(lambda))?;
            if !parts.total().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: parts.total(),
                });
            }
            sums.supervised += parts.supervised;
            sums.adversarial += parts.adversarial;
            sgd_step(&mut working.params, &grads, &mut velocity, config);
            step += 1;
        }
        let k = steps_per_epoch as f64;
        trace.epochs.push(EpochLoss {
            epoch,
            lambda,
            supervised: sums.supervised / k,
            adversarial: sums.adversarial / k,
            total: (sums.supervised + sums.adversarial) / k,
        });
    }
    working.validate()?;
    *model = working;
    Ok(trace)
}

fn sgd_step(params: &mut Params, grads: &Params, velocity: &mut Params, config: &TrainConfig) {
    for (((_, p), (_, g)), (_, v)) in params.blocks_mut().into_iter().zip(grads.blocks()).zip(velocity.blocks_mut()) {
        for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = config.momentum * *v + g + config.weight_decay * *p;
            *p -= config.lr * *v;
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"LAMDACK\0";
const CHECKPOINT_VERSION: u32 = 1;
const SOURCE_DOMAIN_LABEL: u8 = 1;

impl ToyModel {
    /// Serialises the model.
    ///
    /// Layout, little endian: magic `LAMDACK\0`, version `u32`, classifier
    /// `u8` (0 cosine, 1 linear), source domain label `u8` (always 1), two
    /// reserved bytes, then `u32` input, hidden, feature, embed, classes and
    /// discriminator widths, `τ` as `f64`, the parameter count as `u64`, and
    /// every parameter block as `f64` in [`Params::blocks`] order.
    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match c.classifier {
            ClassifierKind::Cosine => 0,
            ClassifierKind::Linear => 1,
        });
        out.push(SOURCE_DOMAIN_LABEL);
        out.extend_from_slice(&[0, 0]);
        for v in [c.input_dim, c.hidden, c.feature_dim, c.embed_dim, c.classes, c.disc_hidden] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.tau.to_le_bytes());
        let blocks = self.params.blocks();
        let count: usize = blocks.iter().map(|(_, b)| b.len()).sum();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for (_, block) in blocks {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Checkpoint("truncated".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let flags = take(4)?;
        let classifier = match flags[0] {
            0 => ClassifierKind::Cosine,
            1 => ClassifierKind::Linear,
            k => return Err(Error::Checkpoint(format!("unknown classifier kind {k}"))),
        };
        if flags[1] != SOURCE_DOMAIN_LABEL {
            return Err(Error::Checkpoint(format!("unsupported source domain label {}", flags[1])));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let tau = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let config = ModelConfig {
            input_dim: dims[0],
            hidden: dims[1],
            feature_dim: dims[2],
            embed_dim: dims[3],
            classes: dims[4],
            disc_hidden: dims[5],
            classifier,
            tau,
        };
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut params = Params::zeros(&config);
        let expected: usize = params.blocks().iter().map(|(_, b)| b.len()).sum();
        if count != expected {
            return Err(Error::Checkpoint(format!("expected {expected} parameters, header says {count}")));
        }
        let body = take(count * 8)?;
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for (_, block) in params.blocks_mut() {
            for (slot, v) in block.iter_mut().zip(values.by_ref()) {
                *slot = v;
            }
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Self::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.encode_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode_checkpoint(&bytes)
    }
}
