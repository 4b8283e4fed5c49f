//! Adversarial losses and the composed training steps of the IAE family.
//!
//! Every step follows the same shape: sample noise, update each
//! discriminator once on a positive/negative batch, then take one generator
//! step on the weighted sum of the non-saturating losses. Generator
//! gradients only flow through negative examples.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nets::{Activation, Mlp, MlpSpec, ParamStore};
use crate::optim::{adam_update, AdamHyper, AdamState};
use crate::rng::{split, Stream};
use crate::tensor::Tensor;

/// Discriminator logits on one positive and one negative batch.
#[derive(Clone, Debug, PartialEq)]
pub struct GanBatchScores {
    pub scores_pos: Tensor,
    pub scores_neg: Tensor,
}

/// `-[mean log D(pos) + mean log(1 - D(neg))]` with `D = σ(logit)`.
pub fn disc_loss(scores: &GanBatchScores) -> Result<f64> {
    if scores.scores_pos.len() != scores.scores_neg.len() {
        return Err(Error::Shape(format!(
            "positive batch has {} scores, negative batch {}",
            scores.scores_pos.len(),
            scores.scores_neg.len()
        )));
    }
    let mut g = Graph::new();
    let pos = g.input("pos");
    let neg = g.input("neg");
    let loss = disc_loss_node(&mut g, pos, neg);
    g.forward(&[("pos", &scores.scores_pos), ("neg", &scores.scores_neg)])?;
    g.scalar(loss)
}

/// `-mean log D(neg)`.
pub fn gen_loss_nonsat(scores_neg: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let neg = g.input("neg");
    let loss = gen_loss_nonsat_node(&mut g, neg);
    g.forward(&[("neg", scores_neg)])?;
    g.scalar(loss)
}

pub fn disc_loss_node(g: &mut Graph, pos: NodeId, neg: NodeId) -> NodeId {
    let real = g.log_sigmoid(pos);
    let real = g.mean(real);
    let flipped = g.scale(neg, -1.0);
    let fake = g.log_sigmoid(flipped);
    let fake = g.mean(fake);
    let total = g.add(real, fake);
    g.scale(total, -1.0)
}

pub fn gen_loss_nonsat_node(g: &mut Graph, neg: NodeId) -> NodeId {
    let ls = g.log_sigmoid(neg);
    let m = g.mean(ls);
    g.scale(m, -1.0)
}

/// Mean of squared differences over every entry.
pub fn mse_node(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let sq = g.mul(d, d);
    g.mean(sq)
}

/// Mean absolute difference over every entry.
pub fn l1_node(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let ab = g.abs(d);
    g.mean(ab)
}

/// Code-space reconstruction cost of the InfoGAN baseline: mean squared
/// error for a Gaussian code, mean cross-entropy `-Σ t log p` for a
/// categorical code whose prediction is a probability vector.
pub fn infogan_recon_loss(code_true: &Tensor, code_pred: &Tensor, prior: &Prior) -> Result<f64> {
    if code_true.shape() != code_pred.shape() {
        return Err(Error::Shape(format!("code shapes {:?} vs {:?}", code_true.shape(), code_pred.shape())));
    }
    match prior {
        Prior::Gaussian { .. } => {
            let n = code_true.len().max(1) as f64;
            Ok(code_true.data().iter().zip(code_pred.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
        }
        Prior::Categorical { .. } => {
            let rows = code_true.rows().max(1) as f64;
            let mut total = 0.0;
            for (&t, &p) in code_true.data().iter().zip(code_pred.data()) {
                if t > 0.0 {
                    if p <= 0.0 {
                        return Err(Error::InfiniteDivergence("infogan_recon_loss"));
                    }
                    total -= t * p.ln();
                }
            }
            Ok(total / rows)
        }
    }
}

/// Mean softmax cross-entropy of integer `labels` under `logits`.
pub fn semisup_ce_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let target = one_hot(labels, logits.cols())?;
    if target.rows() != logits.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    let mut g = Graph::new();
    let l = g.input("logits");
    let t = g.constant(target);
    let ce = g.softmax_cross_entropy(l, t);
    g.forward(&[("logits", logits)])?;
    g.scalar(ce)
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(labels.len(), k);
    for (r, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
        t.set(r, l, 1.0);
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Gaussian { dim: usize },
    Categorical { k: usize },
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Gaussian { dim } => *dim,
            Prior::Categorical { k } => *k,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Prior::Categorical { .. })
    }

    pub fn sample(&self, rng: &mut Stream, rows: usize) -> Tensor {
        match self {
            Prior::Gaussian { dim } => rng.normal_tensor(rows, *dim),
            Prior::Categorical { k } => rng.one_hot_tensor(rows, *k),
        }
    }

    /// Head activation of a network whose output lives in the code space.
    pub fn head(&self) -> Activation {
        match self {
            Prior::Gaussian { .. } => Activation::Linear,
            Prior::Categorical { .. } => Activation::Softmax,
        }
    }

    /// The input substituted for the code when it is ablated.
    pub fn constant_code(&self, rows: usize) -> Tensor {
        match self {
            Prior::Gaussian { dim } => Tensor::zeros(rows, *dim),
            Prior::Categorical { k } => Tensor::filled(rows, *k, 1.0 / *k as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Reconstruction GAN on `(x, ẑ)` vs `(x̂, ẑ)`.
    #[default]
    Adversarial,
    /// Mean squared error between `x` and `x̂`.
    Euclidean,
    /// Mean absolute error between `x` and `x̂`.
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub recon_w: f64,
    pub reg_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recon_w: 1.0, reg_w: 1.0 }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_output() -> Activation {
    Activation::Linear
}

/// Model and objective configuration shared by every experiment kind.
///
/// For IAE, AAE and CycleIAE runs the encoder maps data to codes; for FIAE
/// and InfoGAN runs the encoder is the generator `(z, n) → x` and the
/// decoder is the recognition network `(x, ε) → ẑ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IaeStepConfig {
    /// IAE special case 1–4; required for `iae` runs, ignored otherwise.
    #[serde(default)]
    pub case: Option<u8>,
    pub latent_dim: usize,
    #[serde(default)]
    pub encoder_noise_dim: usize,
    #[serde(default)]
    pub decoder_noise_dim: usize,
    pub prior: Prior,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Cross-entropy weight of the labeled-minibatch encoder update.
    #[serde(default)]
    pub semisup: Option<f64>,
    #[serde(default)]
    pub reconstruction: Reconstruction,
    /// Replace the code fed to the decoder by a constant (ablation).
    #[serde(default)]
    pub constant_code: bool,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub decoder_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub disc_hidden: Vec<usize>,
    /// Output activation of whichever network produces data points.
    #[serde(default = "default_output")]
    pub data_output: Activation,
}

impl IaeStepConfig {
    /// A case-`case` configuration with default architecture.
    pub fn new(case: u8, latent_dim: usize, encoder_noise_dim: usize, decoder_noise_dim: usize, prior: Prior) -> Self {
        let reg_w = if matches!(case, 2 | 4) { 1.0 } else { 0.0 };
        Self {
            case: Some(case),
            latent_dim,
            encoder_noise_dim,
            decoder_noise_dim,
            prior,
            loss_weights: LossWeights { recon_w: 1.0, reg_w },
            semisup: None,
            reconstruction: Reconstruction::Adversarial,
            constant_code: false,
            encoder_hidden: default_hidden(),
            decoder_hidden: default_hidden(),
            disc_hidden: default_hidden(),
            data_output: Activation::Linear,
        }
    }

    pub fn uses_reg(&self) -> bool {
        self.loss_weights.reg_w > 0.0 && !self.constant_code
    }

    pub fn uses_semisup(&self) -> bool {
        self.semisup.is_some_and(|w| w > 0.0)
    }

    /// Checks shared invariants plus, for `iae` runs, the case constraints.
    pub fn validate(&self, iae_case_rules: bool) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.prior.dim() != self.latent_dim {
            return bad(format!("prior dimension {} does not match latent_dim {}", self.prior.dim(), self.latent_dim));
        }
        let w = self.loss_weights;
        if !(w.recon_w >= 0.0 && w.recon_w.is_finite() && w.reg_w >= 0.0 && w.reg_w.is_finite()) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if let Some(s) = self.semisup {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("semisup weight must be finite and non-negative".into());
            }
            if s > 0.0 && !self.prior.is_categorical() {
                return bad("semi-supervised training needs a categorical code".into());
            }
        }
        if iae_case_rules {
            let case = match self.case {
                Some(c @ 1..=4) => c,
                Some(c) => return bad(format!("IAE case must be 1–4, got {c}")),
                None => return bad("iae runs must name a case (1–4)".into()),
            };
            if matches!(case, 1 | 2) && self.decoder_noise_dim != 0 {
                return bad(format!("case {case} has a deterministic decoder; decoder_noise_dim must be 0"));
            }
            if matches!(case, 1 | 3) && w.reg_w != 0.0 {
                return bad(format!("case {case} has no regularization cost; reg_w must be 0"));
            }
        }
        Ok(())
    }
}

/// Per-step scalars; `None` marks a loss the configuration does not use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub disc_recon: Option<f64>,
    pub gen_recon: Option<f64>,
    pub disc_reg: Option<f64>,
    pub gen_reg: Option<f64>,
    pub ce: Option<f64>,
    pub grad_norm_encoder: Option<f64>,
    pub grad_norm_decoder: Option<f64>,
    pub grad_norm_disc_recon: Option<f64>,
    pub grad_norm_disc_reg: Option<f64>,
}

impl StepReport {
    pub fn new(step: u64) -> Self {
        Self { step, ..Default::default() }
    }

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.disc_recon,
            self.gen_recon,
            self.disc_reg,
            self.gen_reg,
            self.ce,
            self.grad_norm_encoder,
            self.grad_norm_decoder,
            self.grad_norm_disc_recon,
            self.grad_norm_disc_reg,
        ]
    }

    pub const COLUMNS: [&'static str; 9] = [
        "disc_recon",
        "gen_recon",
        "disc_reg",
        "gen_reg",
        "ce",
        "grad_norm_encoder",
        "grad_norm_decoder",
        "grad_norm_disc_recon",
        "grad_norm_disc_reg",
    ];

    pub fn is_finite(&self) -> bool {
        self.values().iter().flatten().all(|v| v.is_finite())
    }
}

/// A network and its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub mlp: Mlp,
    pub adam: AdamState,
}

impl Network {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        let adam = AdamState::new(&spec);
        Ok(Self { mlp: Mlp::new(spec, seed)?, adam })
    }

    fn apply_grads(&mut self, grads: &ParamStore, hyper: &AdamHyper) -> Result<()> {
        adam_update(&mut self.mlp.params, grads, &mut self.adam, hyper)
    }
}

/// The networks of one model. Discriminators are absent when the
/// configuration does not use the corresponding GAN.
#[derive(Clone, Debug, PartialEq)]
pub struct Nets {
    pub encoder: Network,
    pub decoder: Network,
    pub disc_recon: Option<Network>,
    pub disc_reg: Option<Network>,
}

/// Role names, used for seeds and checkpoint files.
pub const ROLES: [&str; 4] = ["encoder", "decoder", "disc_recon", "disc_reg"];

impl Nets {
    pub fn networks(&self) -> [(&'static str, Option<&Network>); 4] {
        [
            (ROLES[0], Some(&self.encoder)),
            (ROLES[1], Some(&self.decoder)),
            (ROLES[2], self.disc_recon.as_ref()),
            (ROLES[3], self.disc_reg.as_ref()),
        ]
    }

    pub fn network_mut(&mut self, role: &str) -> Option<&mut Network> {
        match role {
            "encoder" => Some(&mut self.encoder),
            "decoder" => Some(&mut self.decoder),
            "disc_recon" => self.disc_recon.as_mut(),
            "disc_reg" => self.disc_reg.as_mut(),
            _ => None,
        }
    }

    fn assemble(specs: [Option<MlpSpec>; 4], seed: u64) -> Result<Self> {
        let [enc, dec, drec, dreg] = specs;
        let mk = |spec: MlpSpec, role: u64| Network::new(spec, split(seed, role));
        Ok(Self {
            encoder: mk(enc.expect("encoder spec"), 0)?,
            decoder: mk(dec.expect("decoder spec"), 1)?,
            disc_recon: drec.map(|s| mk(s, 2)).transpose()?,
            disc_reg: dreg.map(|s| mk(s, 3)).transpose()?,
        })
    }

    /// Encoder `(x, ε) → ẑ`, decoder `(ẑ, n) → x̂`, a reconstruction
    /// discriminator on `(x, z)` and a regularization discriminator on `z`.
    /// Also used for AAE and CycleIAE runs.
    pub fn autoencoder(cfg: &IaeStepConfig, x_dim: usize, seed: u64) -> Result<Self> {
        let z = cfg.latent_dim;
        let disc = |input| MlpSpec::new(input, 0, &cfg.disc_hidden, 1, Activation::Linear);
        Self::assemble(
            [
                Some(MlpSpec::new(x_dim, cfg.encoder_noise_dim, &cfg.encoder_hidden, z, cfg.prior.head())),
                Some(MlpSpec::new(z, cfg.decoder_noise_dim, &cfg.decoder_hidden, x_dim, cfg.data_output)),
                (cfg.reconstruction == Reconstruction::Adversarial).then(|| disc(x_dim + z)),
                cfg.uses_reg().then(|| disc(z)),
            ],
            seed,
        )
    }

    /// Generator `(z, n) → x` as encoder, recognition network `(x, ε) → ẑ`
    /// as decoder, a data discriminator on `x` and, with `joint`, a
    /// discriminator on `(x, z)`.
    pub fn flipped(cfg: &IaeStepConfig, x_dim: usize, joint: bool, seed: u64) -> Result<Self> {
        let z = cfg.latent_dim;
        let disc = |input| MlpSpec::new(input, 0, &cfg.disc_hidden, 1, Activation::Linear);
        Self::assemble(
            [
                Some(MlpSpec::new(z, cfg.encoder_noise_dim, &cfg.encoder_hidden, x_dim, cfg.data_output)),
                Some(MlpSpec::new(x_dim, cfg.decoder_noise_dim, &cfg.decoder_hidden, z, cfg.prior.head())),
                joint.then(|| disc(x_dim + z)),
                (cfg.loss_weights.reg_w > 0.0).then(|| disc(x_dim)),
            ],
            seed,
        )
    }
}

/// Result of one composed step: the report and the generator-side
/// gradients that were applied.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub report: StepReport,
    pub encoder_grads: Option<ParamStore>,
    pub decoder_grads: Option<ParamStore>,
}

/// A labeled minibatch for the semi-supervised encoder update.
#[derive(Clone, Copy, Debug)]
pub struct LabeledBatch<'a> {
    pub x: &'a Tensor,
    pub labels: &'a [usize],
}

fn collect_grads(grads: &mut Gradients, prefix: &str, like: &ParamStore) -> ParamStore {
    let mut out = ParamStore { weights: Vec::new(), biases: Vec::new(), step: 0 };
    for (i, (w, b)) in like.weights.iter().zip(&like.biases).enumerate() {
        out.weights.push(grads.take_leaf(&Mlp::leaf_name(prefix, &format!("w{i}"))).unwrap_or_else(|| Tensor::zeros(w.rows(), w.cols())));
        out.biases.push(grads.take_leaf(&Mlp::leaf_name(prefix, &format!("b{i}"))).unwrap_or_else(|| Tensor::zeros(b.rows(), b.cols())));
    }
    out
}

fn norm(p: &ParamStore) -> f64 {
    p.sq_norm().sqrt()
}

/// Converts numeric blow-ups into [`Error::NonFinite`] carrying the
/// partial report.
fn guard<T>(r: Result<T>, report: &StepReport) -> Result<T> {
    match r {
        Err(Error::Domain { .. }) => Err(Error::NonFinite(Box::new(report.clone()))),
        other => other,
    }
}

fn check_finite(report: &StepReport) -> Result<()> {
    if report.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(Box::new(report.clone())))
    }
}

/// One discriminator step on `pos` (label 1) vs `neg` (label 0).
/// Returns the pre-update loss and gradient norm.
pub fn discriminator_update(net: &mut Network, pos: &Tensor, neg: &Tensor, hyper: &AdamHyper) -> Result<(f64, f64)> {
    if pos.rows() != neg.rows() {
        return Err(Error::Shape(format!("positive batch has {} rows, negative {}", pos.rows(), neg.rows())));
    }
    let mut g = Graph::new();
    let p = g.input("pos");
    let n = g.input("neg");
    let d = net.mlp.bind(&mut g, "d", true);
    let sp = d.apply(&mut g, p, None).output;
    let sn = d.apply(&mut g, n, None).output;
    let loss = disc_loss_node(&mut g, sp, sn);
    g.forward(&[("pos", pos), ("neg", neg)])?;
    let value = g.scalar(loss)?;
    let mut grads = g.backward(loss, &Tensor::scalar(1.0))?;
    let gp = collect_grads(&mut grads, "d", &net.mlp.params);
    let gn = norm(&gp);
    if value.is_finite() && gn.is_finite() {
        net.apply_grads(&gp, hyper)?;
    }
    Ok((value, gn))
}

/// Noise drawn for one autoencoder step, in sampling order.
#[derive(Clone, Debug)]
pub struct AeNoise {
    pub eps: Tensor,
    pub n: Tensor,
}

impl AeNoise {
    pub fn sample(rng: &mut Stream, rows: usize, cfg: &IaeStepConfig) -> Self {
        let eps = rng.normal_tensor(rows, cfg.encoder_noise_dim);
        let n = rng.normal_tensor(rows, cfg.decoder_noise_dim);
        Self { eps, n }
    }
}

fn noise_arg(t: &Tensor) -> Option<&Tensor> {
    (t.cols() > 0).then_some(t)
}

/// Positive `(x, ẑ)` and negative `(x̂, ẑ)` examples of the reconstruction
/// GAN, built from one encoder pass so both carry the same `ẑ`.
#[derive(Clone, Debug)]
pub struct ReconPairs {
    pub z_hat: Tensor,
    pub x_hat: Tensor,
    pub positive: Tensor,
    pub negative: Tensor,
}

pub fn recon_pairs(nets: &Nets, x: &Tensor, noise: &AeNoise, cfg: &IaeStepConfig) -> Result<ReconPairs> {
    let z_hat = if cfg.constant_code {
        cfg.prior.constant_code(x.rows())
    } else {
        nets.encoder.mlp.forward(x, noise_arg(&noise.eps))?
    };
    let x_hat = nets.decoder.mlp.forward(&z_hat, noise_arg(&noise.n))?;
    let positive = Tensor::concat_cols(&[x, &z_hat])?;
    let negative = Tensor::concat_cols(&[&x_hat, &z_hat])?;
    Ok(ReconPairs { z_hat, x_hat, positive, negative })
}

/// The generator graph of an autoencoder step, exposed for inspection.
pub struct GeneratorGraph {
    pub graph: Graph,
    pub total: NodeId,
    pub recon: NodeId,
    pub reg: Option<NodeId>,
    pub z_hat: NodeId,
    pub x_hat: NodeId,
    /// Reconstruction-discriminator logits on the negative pair.
    pub neg_scores: Option<NodeId>,
    /// Logits on the positive pair; evaluated for monitoring only and not
    /// an ancestor of `total`.
    pub pos_scores: Option<NodeId>,
}

/// Builds and evaluates the encoder/decoder objective
/// `recon_w · L_recon + reg_w · L_reg` against the current (frozen)
/// discriminators.
pub fn autoencoder_generator_graph(nets: &Nets, x: &Tensor, noise: &AeNoise, cfg: &IaeStepConfig) -> Result<GeneratorGraph> {
    let mut g = Graph::new();
    let xn = g.input("x");
    let eps = g.input("eps");
    let n = g.input("n");
    let z_hat = if cfg.constant_code {
        g.constant(cfg.prior.constant_code(x.rows()))
    } else {
        nets.encoder.mlp.build(&mut g, "enc", xn, Some(eps), true).output
    };
    let x_hat = nets.decoder.mlp.build(&mut g, "dec", z_hat, Some(n), true).output;
    let (recon, neg_scores, pos_scores) = match cfg.reconstruction {
        Reconstruction::Adversarial => {
            let d = nets
                .disc_recon
                .as_ref()
                .ok_or_else(|| Error::Config("adversarial reconstruction needs a reconstruction discriminator".into()))?
                .mlp
                .bind(&mut g, "drec", false);
            let neg_in = g.concat_cols(&[x_hat, z_hat]);
            let neg = d.apply(&mut g, neg_in, None).output;
            let pos_in = g.concat_cols(&[xn, z_hat]);
            let pos = d.apply(&mut g, pos_in, None).output;
            (gen_loss_nonsat_node(&mut g, neg), Some(neg), Some(pos))
        }
        Reconstruction::Euclidean => (mse_node(&mut g, x_hat, xn), None, None),
        Reconstruction::L1 => (l1_node(&mut g, x_hat, xn), None, None),
    };
    let reg = if cfg.uses_reg() {
        let d = nets
            .disc_reg
            .as_ref()
            .ok_or_else(|| Error::Config("regularization needs a regularization discriminator".into()))?
            .mlp
            .bind(&mut g, "dreg", false);
        let s = d.apply(&mut g, z_hat, None).output;
        Some(gen_loss_nonsat_node(&mut g, s))
    } else {
        None
    };
    let w = cfg.loss_weights;
    let weighted = g.scale(recon, w.recon_w);
    let total = match reg {
        Some(r) => {
            let wr = g.scale(r, w.reg_w);
            g.add(weighted, wr)
        }
        None => weighted,
    };
    g.forward(&[("x", x), ("eps", &noise.eps), ("n", &noise.n)])?;
    Ok(GeneratorGraph { graph: g, total, recon, reg, z_hat, x_hat, neg_scores, pos_scores })
}

/// Shared body of the IAE and CycleIAE steps. `prior_batch` supplies the
/// positive examples of the regularization GAN.
fn autoencoder_step(
    nets: &mut Nets,
    x: &Tensor,
    prior_batch: impl FnOnce(&mut Stream) -> Tensor,
    labeled: Option<LabeledBatch<'_>>,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
    rng: &mut Stream,
) -> Result<StepOutput> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if x.cols() != nets.encoder.mlp.spec.input_dim {
        return Err(Error::Shape(format!("batch has {} columns, encoder expects {}", x.cols(), nets.encoder.mlp.spec.input_dim)));
    }
    let mut report = StepReport::new(step);
    let noise = AeNoise::sample(rng, x.rows(), cfg);
    let pairs = guard(recon_pairs(nets, x, &noise, cfg), &report)?;

    if cfg.reconstruction == Reconstruction::Adversarial {
        let d = nets.disc_recon.as_mut().ok_or_else(|| Error::Config("missing reconstruction discriminator".into()))?;
        let (loss, gn) = guard(discriminator_update(d, &pairs.positive, &pairs.negative, hyper), &report)?;
        report.disc_recon = Some(loss);
        report.grad_norm_disc_recon = Some(gn);
        check_finite(&report)?;
    }

    if cfg.uses_reg() {
        let z_prior = prior_batch(rng);
        let d = nets.disc_reg.as_mut().ok_or_else(|| Error::Config("missing regularization discriminator".into()))?;
        let (loss, gn) = guard(discriminator_update(d, &z_prior, &pairs.z_hat, hyper), &report)?;
        report.disc_reg = Some(loss);
        report.grad_norm_disc_reg = Some(gn);
        check_finite(&report)?;
    }

    let gen = guard(autoencoder_generator_graph(nets, x, &noise, cfg), &report)?;
    report.gen_recon = Some(gen.graph.scalar(gen.recon)?);
    if let Some(r) = gen.reg {
        report.gen_reg = Some(gen.graph.scalar(r)?);
    }
    let mut grads = gen.graph.backward(gen.total, &Tensor::scalar(1.0))?;
    let dec_grads = collect_grads(&mut grads, "dec", &nets.decoder.mlp.params);
    report.grad_norm_decoder = Some(norm(&dec_grads));
    let enc_grads = (!cfg.constant_code).then(|| collect_grads(&mut grads, "enc", &nets.encoder.mlp.params));
    report.grad_norm_encoder = enc_grads.as_ref().map(norm);
    check_finite(&report)?;
    nets.decoder.apply_grads(&dec_grads, hyper)?;
    if let Some(eg) = &enc_grads {
        nets.encoder.apply_grads(eg, hyper)?;
    }

    if let (Some(lb), true) = (labeled, cfg.uses_semisup()) {
        let ce = guard(semisup_update(nets, lb, cfg, hyper, rng), &report)?;
        report.ce = Some(ce);
        check_finite(&report)?;
    }

    Ok(StepOutput { report, encoder_grads: enc_grads, decoder_grads: Some(dec_grads) })
}

/// Encoder cross-entropy update on a labeled minibatch.
fn semisup_update(nets: &mut Nets, batch: LabeledBatch<'_>, cfg: &IaeStepConfig, hyper: &AdamHyper, rng: &mut Stream) -> Result<f64> {
    let weight = cfg.semisup.unwrap_or(0.0);
    let target = one_hot(batch.labels, cfg.latent_dim)?;
    if target.rows() != batch.x.rows() {
        return Err(Error::Shape("labeled batch and label count differ".into()));
    }
    let eps = rng.normal_tensor(batch.x.rows(), cfg.encoder_noise_dim);
    let mut g = Graph::new();
    let x = g.input("x");
    let e = g.input("eps");
    let logits = nets.encoder.mlp.build(&mut g, "enc", x, Some(e), true).logits;
    let t = g.constant(target);
    let ce = g.softmax_cross_entropy(logits, t);
    let loss = g.scale(ce, weight);
    g.forward(&[("x", batch.x), ("eps", &eps)])?;
    let value = g.scalar(ce)?;
    let mut grads = g.backward(loss, &Tensor::scalar(1.0))?;
    let eg = collect_grads(&mut grads, "enc", &nets.encoder.mlp.params);
    if value.is_finite() {
        nets.encoder.apply_grads(&eg, hyper)?;
    }
    Ok(value)
}

/// One IAE step: reconstruction-GAN discriminator update on `(x, ẑ)` vs
/// `(x̂, ẑ)`; regularization-GAN discriminator update on `z ~ p(z)` vs `ẑ`
/// when `reg_w > 0`; one encoder/decoder update on the weighted generator
/// losses through the negative examples only; then, when labels are given
/// and `semisup` is set, one encoder cross-entropy update.
#[allow(clippy::too_many_arguments)]
pub fn iae_training_step(
    nets: &mut Nets,
    batch_x: &Tensor,
    labeled: Option<LabeledBatch<'_>>,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
    rng: &mut Stream,
) -> Result<StepOutput> {
    let prior = cfg.prior.clone();
    let rows = batch_x.rows();
    autoencoder_step(nets, batch_x, |r| prior.sample(r, rows), labeled, cfg, hyper, step, rng)
}

/// One CycleIAE step: the regularization GAN imposes the empirical
/// distribution of domain B (`batch_b`) on codes of domain A, and the
/// reconstruction cost is adversarial on `(a, ẑ)` vs `(â, ẑ)`, or an L1
/// cycle cost for the CycleGAN-style ablation.
pub fn cycle_iae_training_step(
    nets: &mut Nets,
    batch_a: &Tensor,
    batch_b: &Tensor,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
    rng: &mut Stream,
) -> Result<StepOutput> {
    if batch_b.cols() != cfg.latent_dim {
        return Err(Error::Shape(format!("domain-B batch has {} columns, code has {}", batch_b.cols(), cfg.latent_dim)));
    }
    if batch_b.rows() != batch_a.rows() {
        return Err(Error::Shape("domain batches differ in size".into()));
    }
    let b = batch_b.clone();
    autoencoder_step(nets, batch_a, move |_| b, None, cfg, hyper, step, rng)
}

/// Reference AAE step: Euclidean reconstruction plus the adversarial
/// regularization, written independently of [`iae_training_step`].
pub fn aae_training_step(
    nets: &mut Nets,
    batch_x: &Tensor,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
    rng: &mut Stream,
) -> Result<StepOutput> {
    let mut report = StepReport::new(step);
    let rows = batch_x.rows();
    let eps = rng.normal_tensor(rows, cfg.encoder_noise_dim);
    let n = rng.normal_tensor(rows, cfg.decoder_noise_dim);
    let code = nets.encoder.mlp.forward(batch_x, noise_arg(&eps))?;

    let use_reg = cfg.loss_weights.reg_w > 0.0;
    if use_reg {
        let z = cfg.prior.sample(rng, rows);
        let d = nets.disc_reg.as_mut().ok_or_else(|| Error::Config("missing regularization discriminator".into()))?;
        let (loss, gn) = guard(discriminator_update(d, &z, &code, hyper), &report)?;
        report.disc_reg = Some(loss);
        report.grad_norm_disc_reg = Some(gn);
    }

    let mut g = Graph::new();
    let x = g.input("x");
    let e = g.input("eps");
    let nn = g.input("n");
    let z = nets.encoder.mlp.build(&mut g, "enc", x, Some(e), true).output;
    let xr = nets.decoder.mlp.build(&mut g, "dec", z, Some(nn), true).output;
    let mse = mse_node(&mut g, xr, x);
    let reg = if use_reg {
        let d = nets.disc_reg.as_ref().unwrap().mlp.bind(&mut g, "dreg", false);
        let s = d.apply(&mut g, z, None).output;
        Some(gen_loss_nonsat_node(&mut g, s))
    } else {
        None
    };
    let weighted = g.scale(mse, cfg.loss_weights.recon_w);
    let total = match reg {
        Some(r) => {
            let wr = g.scale(r, cfg.loss_weights.reg_w);
            g.add(weighted, wr)
        }
        None => weighted,
    };
    guard(g.forward(&[("x", batch_x), ("eps", &eps), ("n", &n)]), &report)?;
    report.gen_recon = Some(g.scalar(mse)?);
    report.gen_reg = reg.map(|r| g.scalar(r)).transpose()?;
    let mut grads = g.backward(total, &Tensor::scalar(1.0))?;
    let dg = collect_grads(&mut grads, "dec", &nets.decoder.mlp.params);
    let eg = collect_grads(&mut grads, "enc", &nets.encoder.mlp.params);
    report.grad_norm_decoder = Some(norm(&dg));
    report.grad_norm_encoder = Some(norm(&eg));
    check_finite(&report)?;
    nets.decoder.apply_grads(&dg, hyper)?;
    nets.encoder.apply_grads(&eg, hyper)?;
    Ok(StepOutput { report, encoder_grads: Some(eg), decoder_grads: Some(dg) })
}

/// Noise drawn for one FIAE/InfoGAN step, in sampling order.
#[derive(Clone, Debug)]
pub struct FlippedNoise {
    pub z: Tensor,
    pub n: Tensor,
    pub eps: Tensor,
}

impl FlippedNoise {
    pub fn sample(rng: &mut Stream, rows: usize, cfg: &IaeStepConfig) -> Self {
        let z = cfg.prior.sample(rng, rows);
        let n = rng.normal_tensor(rows, cfg.encoder_noise_dim);
        let eps = rng.normal_tensor(rows, cfg.decoder_noise_dim);
        Self { z, n, eps }
    }
}

/// One FIAE step. The generator (encoder) maps `(z, n)` to simulated data
/// and the recognition network (decoder) only ever sees simulated data.
/// The regularization GAN matches simulated `x` to `batch_x_real`; the
/// reconstruction GAN separates `(x_gen, z)` from `(x_gen, ẑ)` with
/// `ẑ = decoder(x_gen, ε)`, and both networks are updated through the
/// negative pair.
pub fn fiae_training_step(
    nets: &mut Nets,
    batch_x_real: &Tensor,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
    rng: &mut Stream,
) -> Result<StepOutput> {
    let rows = batch_x_real.rows();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let noise = FlippedNoise::sample(rng, rows, cfg);
    fiae_step_with_noise(nets, batch_x_real, &noise, cfg, hyper, step)
}

/// [`fiae_training_step`] with explicitly supplied prior samples and noise.
pub fn fiae_step_with_noise(
    nets: &mut Nets,
    batch_x_real: &Tensor,
    noise: &FlippedNoise,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
) -> Result<StepOutput> {
    let mut report = StepReport::new(step);
    if batch_x_real.cols() != nets.encoder.mlp.spec.output_dim() {
        return Err(Error::Shape("real batch width does not match generator output".into()));
    }
    let x_gen = guard(nets.encoder.mlp.forward(&noise.z, noise_arg(&noise.n)), &report)?;
    let z_hat = guard(nets.decoder.mlp.forward(&x_gen, noise_arg(&noise.eps)), &report)?;

    if let Some(d) = nets.disc_reg.as_mut() {
        let (loss, gn) = guard(discriminator_update(d, batch_x_real, &x_gen, hyper), &report)?;
        report.disc_reg = Some(loss);
        report.grad_norm_disc_reg = Some(gn);
    }
    let d = nets.disc_recon.as_mut().ok_or_else(|| Error::Config("fiae needs a reconstruction discriminator".into()))?;
    let pos = Tensor::concat_cols(&[&x_gen, &noise.z])?;
    let neg = Tensor::concat_cols(&[&x_gen, &z_hat])?;
    let (loss, gn) = guard(discriminator_update(d, &pos, &neg, hyper), &report)?;
    report.disc_recon = Some(loss);
    report.grad_norm_disc_recon = Some(gn);
    check_finite(&report)?;

    let mut g = Graph::new();
    let z = g.input("z");
    let n = g.input("n");
    let eps = g.input("eps");
    let xg = nets.encoder.mlp.build(&mut g, "enc", z, Some(n), true).output;
    let zh = nets.decoder.mlp.build(&mut g, "dec", xg, Some(eps), true).output;
    let drec = nets.disc_recon.as_ref().unwrap().mlp.bind(&mut g, "drec", false);
    let neg_in = g.concat_cols(&[xg, zh]);
    let neg_scores = drec.apply(&mut g, neg_in, None).output;
    let recon = gen_loss_nonsat_node(&mut g, neg_scores);
    let reg = nets.disc_reg.as_ref().map(|d| {
        let d = d.mlp.bind(&mut g, "dreg", false);
        let s = d.apply(&mut g, xg, None).output;
        gen_loss_nonsat_node(&mut g, s)
    });
    let w = cfg.loss_weights;
    let weighted = g.scale(recon, w.recon_w);
    let total = match reg {
        Some(r) => {
            let wr = g.scale(r, w.reg_w);
            g.add(weighted, wr)
        }
        None => weighted,
    };
    guard(g.forward(&[("z", &noise.z), ("n", &noise.n), ("eps", &noise.eps)]), &report)?;
    report.gen_recon = Some(g.scalar(recon)?);
    report.gen_reg = reg.map(|r| g.scalar(r)).transpose()?;
    let mut grads = g.backward(total, &Tensor::scalar(1.0))?;
    let eg = collect_grads(&mut grads, "enc", &nets.encoder.mlp.params);
    let dg = collect_grads(&mut grads, "dec", &nets.decoder.mlp.params);
    report.grad_norm_encoder = Some(norm(&eg));
    report.grad_norm_decoder = Some(norm(&dg));
    check_finite(&report)?;
    nets.encoder.apply_grads(&eg, hyper)?;
    nets.decoder.apply_grads(&dg, hyper)?;
    Ok(StepOutput { report, encoder_grads: Some(eg), decoder_grads: Some(dg) })
}

/// One InfoGAN baseline step: a data GAN on the generator output plus the
/// explicit code reconstruction cost, which trains both the generator and
/// the recognition network.
pub fn infogan_training_step(
    nets: &mut Nets,
    batch_x_real: &Tensor,
    cfg: &IaeStepConfig,
    hyper: &AdamHyper,
    step: u64,
    rng: &mut Stream,
) -> Result<StepOutput> {
    let rows = batch_x_real.rows();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut report = StepReport::new(step);
    let noise = FlippedNoise::sample(rng, rows, cfg);
    let x_gen = guard(nets.encoder.mlp.forward(&noise.z, noise_arg(&noise.n)), &report)?;
    let d = nets.disc_reg.as_mut().ok_or_else(|| Error::Config("infogan needs a data discriminator".into()))?;
    let (loss, gn) = guard(discriminator_update(d, batch_x_real, &x_gen, hyper), &report)?;
    report.disc_reg = Some(loss);
    report.grad_norm_disc_reg = Some(gn);
    check_finite(&report)?;

    let mut g = Graph::new();
    let z = g.input("z");
    let n = g.input("n");
    let eps = g.input("eps");
    let xg = nets.encoder.mlp.build(&mut g, "enc", z, Some(n), true).output;
    let q = nets.decoder.mlp.build(&mut g, "dec", xg, Some(eps), true);
    let recon = match cfg.prior {
        Prior::Gaussian { .. } => mse_node(&mut g, q.output, z),
        Prior::Categorical { .. } => g.softmax_cross_entropy(q.logits, z),
    };
    let dreg = nets.disc_reg.as_ref().unwrap().mlp.bind(&mut g, "dreg", false);
    let s = dreg.apply(&mut g, xg, None).output;
    let reg = gen_loss_nonsat_node(&mut g, s);
    let w = cfg.loss_weights;
    let a = g.scale(recon, w.recon_w);
    let b = g.scale(reg, w.reg_w);
    let total = g.add(a, b);
    guard(g.forward(&[("z", &noise.z), ("n", &noise.n), ("eps", &noise.eps)]), &report)?;
    report.gen_recon = Some(g.scalar(recon)?);
    report.gen_reg = Some(g.scalar(reg)?);
    let mut grads = g.backward(total, &Tensor::scalar(1.0))?;
    let eg = collect_grads(&mut grads, "enc", &nets.encoder.mlp.params);
    let dg = collect_grads(&mut grads, "dec", &nets.decoder.mlp.params);
    report.grad_norm_encoder = Some(norm(&eg));
    report.grad_norm_decoder = Some(norm(&dg));
    check_finite(&report)?;
    nets.encoder.apply_grads(&eg, hyper)?;
    nets.decoder.apply_grads(&dg, hyper)?;
    Ok(StepOutput { report, encoder_grads: Some(eg), decoder_grads: Some(dg) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn log_sig(x: f64) -> f64 {
        // Direct formula; the test inputs are moderate.
        -(1.0 + (-x).exp()).ln()
    }

    #[test]
    fn disc_loss_closed_forms() {
        let half = GanBatchScores { scores_pos: Tensor::row(&[0.0, 0.0]), scores_neg: Tensor::row(&[0.0, 0.0]) };
        assert!((disc_loss(&half).unwrap() - 2.0 * LN_2).abs() < 1e-12);
        let perfect = GanBatchScores { scores_pos: Tensor::row(&[60.0]), scores_neg: Tensor::row(&[-60.0]) };
        assert!(disc_loss(&perfect).unwrap() < 1e-20);
    }

    #[test]
    fn disc_loss_matches_direct_summation() {
        let mut rng = Stream::new(9);
        let pos = rng.normal_tensor(16, 1).scale(3.0);
        let neg = rng.normal_tensor(16, 1).scale(3.0);
        let direct = -pos.data().iter().map(|&v| log_sig(v)).sum::<f64>() / 16.0
            - neg.data().iter().map(|&v| (1.0 - 1.0 / (1.0 + (-v).exp())).ln()).sum::<f64>() / 16.0;
        let got = disc_loss(&GanBatchScores { scores_pos: pos, scores_neg: neg }).unwrap();
        assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
    }

    #[test]
    fn disc_loss_rejects_unequal_batches() {
        let s = GanBatchScores { scores_pos: Tensor::row(&[0.0]), scores_neg: Tensor::row(&[0.0, 1.0]) };
        assert!(disc_loss(&s).is_err());
    }

    #[test]
    fn gen_loss_closed_forms() {
        assert!((gen_loss_nonsat(&Tensor::row(&[0.0])).unwrap() - LN_2).abs() < 1e-15);
        assert!(gen_loss_nonsat(&Tensor::row(&[50.0])).unwrap() < 1e-20);
        let batch = gen_loss_nonsat(&Tensor::row(&[0.0, 0.0, 2.0])).unwrap();
        let direct = (LN_2 + LN_2 - log_sig(2.0)) / 3.0;
        assert!((batch - direct).abs() < 1e-15);
        // Decreasing in D(neg).
        let a = gen_loss_nonsat(&Tensor::row(&[-1.0])).unwrap();
        let b = gen_loss_nonsat(&Tensor::row(&[1.0])).unwrap();
        assert!(b < a);
    }

    #[test]
    fn infogan_recon_loss_cases() {
        let g = Prior::Gaussian { dim: 2 };
        let z = Tensor::row(&[1.0, 0.0]);
        assert_eq!(infogan_recon_loss(&z, &z, &g).unwrap(), 0.0);
        assert_eq!(infogan_recon_loss(&z, &Tensor::row(&[0.0, 0.0]), &g).unwrap(), 0.5);
        assert!(infogan_recon_loss(&z, &Tensor::zeros(2, 2), &g).is_err());

        let mut rng = Stream::new(4);
        let a = rng.normal_tensor(5, 3);
        let b = rng.normal_tensor(5, 3);
        let mut direct = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                direct += (a.get(i, j) - b.get(i, j)).powi(2);
            }
        }
        direct /= 15.0;
        let g3 = Prior::Gaussian { dim: 3 };
        assert!((infogan_recon_loss(&a, &b, &g3).unwrap() - direct).abs() < 1e-14);

        let c = Prior::Categorical { k: 2 };
        let pred = Tensor::row(&[0.25, 0.75]);
        assert!((infogan_recon_loss(&Tensor::row(&[0.0, 1.0]), &pred, &c).unwrap() + 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn semisup_ce_cases() {
        let uniform = Tensor::zeros(3, 10);
        let ce = semisup_ce_loss(&uniform, &[0, 4, 9]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);

        let mut confident = Tensor::zeros(2, 3);
        confident.set(0, 1, 50.0);
        confident.set(1, 2, 50.0);
        assert!(semisup_ce_loss(&confident, &[1, 2]).unwrap() < 1e-20);

        let mut rng = Stream::new(2);
        let logits = rng.normal_tensor(6, 4);
        let labels = [0, 3, 1, 1, 2, 0];
        let mut direct = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = logits.row_slice(r);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            direct -= (row[l].exp() / z).ln();
        }
        direct /= 6.0;
        assert!((semisup_ce_loss(&logits, &labels).unwrap() - direct).abs() < 1e-12);

        assert!(matches!(semisup_ce_loss(&logits, &[0, 1, 2, 3, 4, 0]), Err(Error::LabelOutOfRange { label: 4, classes: 4 })));
    }

    #[test]
    fn case_rules_enforced() {
        let mut c = IaeStepConfig::new(1, 2, 0, 0, Prior::Gaussian { dim: 2 });
        assert!(c.validate(true).is_ok());
        c.decoder_noise_dim = 3;
        assert!(c.validate(true).is_err());
        let mut c3 = IaeStepConfig::new(3, 2, 0, 4, Prior::Gaussian { dim: 2 });
        assert!(c3.validate(true).is_ok());
        c3.loss_weights.reg_w = 0.5;
        assert!(c3.validate(true).is_err());
        let c4 = IaeStepConfig::new(4, 3, 0, 4, Prior::Gaussian { dim: 2 });
        assert!(c4.validate(true).is_err());
        let mut c5 = IaeStepConfig::new(4, 2, 0, 4, Prior::Gaussian { dim: 2 });
        c5.case = Some(5);
        assert!(c5.validate(true).is_err());
    }

    fn mog_batch(seed: u64, rows: usize) -> Tensor {
        let mut r = Stream::new(seed);
        Tensor::from_fn(rows, 2, |_, _| r.normal())
    }

    #[test]
    fn case1_reports_reg_as_absent() {
        let cfg = IaeStepConfig::new(1, 2, 0, 0, Prior::Gaussian { dim: 2 });
        let mut nets = Nets::autoencoder(&cfg, 2, 1).unwrap();
        assert!(nets.disc_reg.is_none());
        let out = iae_training_step(&mut nets, &mog_batch(3, 8), None, &cfg, &AdamHyper::default(), 0, &mut Stream::new(5)).unwrap();
        assert!(out.report.disc_reg.is_none() && out.report.gen_reg.is_none());
        assert!(out.report.disc_recon.is_some() && out.report.gen_recon.is_some());
    }

    #[test]
    fn steps_are_deterministic() {
        let mut cfg = IaeStepConfig::new(4, 3, 2, 4, Prior::Categorical { k: 3 });
        cfg.semisup = Some(1.0);
        let x = mog_batch(3, 10);
        let lx = mog_batch(8, 4);
        let labels = [0, 1, 2, 0];
        let run = || {
            let mut nets = Nets::autoencoder(&cfg, 2, 11).unwrap();
            let lb = LabeledBatch { x: &lx, labels: &labels };
            let r = iae_training_step(&mut nets, &x, Some(lb), &cfg, &AdamHyper::default(), 7, &mut Stream::new(21)).unwrap().report;
            (r, nets)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert!(a.ce.is_some());
    }

    #[test]
    fn shared_code_in_both_pairs() {
        let cfg = IaeStepConfig::new(3, 2, 3, 4, Prior::Gaussian { dim: 2 });
        let nets = Nets::autoencoder(&cfg, 2, 2).unwrap();
        let x = mog_batch(1, 6);
        let noise = AeNoise::sample(&mut Stream::new(1), 6, &cfg);
        let p = recon_pairs(&nets, &x, &noise, &cfg).unwrap();
        for r in 0..6 {
            assert_eq!(&p.positive.row_slice(r)[2..], &p.negative.row_slice(r)[2..]);
            assert_eq!(&p.positive.row_slice(r)[..2], x.row_slice(r));
            assert_eq!(&p.negative.row_slice(r)[..2], p.x_hat.row_slice(r));
        }
    }

    #[test]
    fn generator_gradient_ignores_positive_pair() {
        let cfg = IaeStepConfig::new(4, 2, 2, 3, Prior::Gaussian { dim: 2 });
        let nets = Nets::autoencoder(&cfg, 2, 4).unwrap();
        let x = mog_batch(2, 5);
        let noise = AeNoise::sample(&mut Stream::new(9), 5, &cfg);
        let gen = autoencoder_generator_graph(&nets, &x, &noise, &cfg).unwrap();
        let grads = gen.graph.backward(gen.total, &Tensor::scalar(1.0)).unwrap();
        let pos = gen.pos_scores.unwrap();
        assert!(!grads.reached(pos));
        assert_eq!(grads.wrt(pos), Tensor::zeros(5, 1));

        // Encoder gradients equal those of the objective seeded through the
        // negative path alone: no contribution from the positive pair.
        let mut g2 = gen.graph.clone();
        g2.forward(&[("x", &x), ("eps", &noise.eps), ("n", &noise.n)]).unwrap();
        let seeded_pos = g2.backward(pos, &Tensor::filled(5, 1, 1.0)).unwrap();
        assert!(!seeded_pos.reached(gen.x_hat));
        let g0 = grads.leaf("enc.w0").unwrap();
        assert!(g0.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn euclidean_iae_step_reproduces_reference_aae_step() {
        let mut cfg = IaeStepConfig::new(2, 2, 2, 0, Prior::Gaussian { dim: 2 });
        cfg.reconstruction = Reconstruction::Euclidean;
        let x = mog_batch(6, 12);
        let hyper = AdamHyper { lr: 1e-3, ..Default::default() };
        let mut a = Nets::autoencoder(&cfg, 2, 8).unwrap();
        let mut b = a.clone();
        assert!(a.disc_recon.is_none());
        for step in 0..5 {
            let ra = iae_training_step(&mut a, &x, None, &cfg, &hyper, step, &mut Stream::new(step)).unwrap().report;
            let rb = aae_training_step(&mut b, &x, &cfg, &hyper, step, &mut Stream::new(step)).unwrap().report;
            assert_eq!(ra, rb);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn losses_invariant_under_batch_permutation() {
        let mut rng = Stream::new(17);
        let pos = rng.normal_tensor(7, 1);
        let neg = rng.normal_tensor(7, 1);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let a = disc_loss(&GanBatchScores { scores_pos: pos.clone(), scores_neg: neg.clone() }).unwrap();
        let b = disc_loss(&GanBatchScores { scores_pos: pos.select_rows(&perm), scores_neg: neg.select_rows(&perm) }).unwrap();
        assert!((a - b).abs() < 1e-15);
        let c = gen_loss_nonsat(&neg).unwrap();
        let d = gen_loss_nonsat(&neg.select_rows(&perm)).unwrap();
        assert!((c - d).abs() < 1e-15);
    }

    #[test]
    fn discriminator_update_touches_only_discriminator() {
        let cfg = IaeStepConfig::new(4, 2, 0, 2, Prior::Gaussian { dim: 2 });
        let mut nets = Nets::autoencoder(&cfg, 2, 3).unwrap();
        let before = nets.clone();
        let noise = AeNoise::sample(&mut Stream::new(1), 4, &cfg);
        let x = mog_batch(1, 4);
        let p = recon_pairs(&nets, &x, &noise, &cfg).unwrap();
        discriminator_update(nets.disc_recon.as_mut().unwrap(), &p.positive, &p.negative, &AdamHyper::default()).unwrap();
        assert_eq!(before.encoder, nets.encoder);
        assert_eq!(before.decoder, nets.decoder);
        assert_eq!(before.disc_reg, nets.disc_reg);
        assert_ne!(before.disc_recon, nets.disc_recon);
    }

    #[test]
    fn fiae_and_infogan_steps_deterministic() {
        let mut cfg = IaeStepConfig::new(4, 2, 0, 3, Prior::Gaussian { dim: 2 });
        cfg.case = None;
        let x = mog_batch(4, 8);
        let hyper = AdamHyper::default();
        let run_fiae = || {
            let mut nets = Nets::flipped(&cfg, 2, true, 5).unwrap();
            fiae_training_step(&mut nets, &x, &cfg, &hyper, 0, &mut Stream::new(3)).unwrap().report
        };
        assert_eq!(run_fiae(), run_fiae());
        let run_info = || {
            let mut nets = Nets::flipped(&cfg, 2, false, 5).unwrap();
            infogan_training_step(&mut nets, &x, &cfg, &hyper, 0, &mut Stream::new(3)).unwrap().report
        };
        let r = run_info();
        assert_eq!(r, run_info());
        assert!(r.disc_recon.is_none());
    }

    #[test]
    fn cycle_step_with_l1_has_no_recon_discriminator() {
        let mut cfg = IaeStepConfig::new(4, 2, 0, 4, Prior::Gaussian { dim: 2 });
        cfg.case = None;
        cfg.reconstruction = Reconstruction::L1;
        let mut nets = Nets::autoencoder(&cfg, 2, 5).unwrap();
        assert!(nets.disc_recon.is_none());
        let a = mog_batch(1, 6);
        let b = mog_batch(2, 6);
        let r = cycle_iae_training_step(&mut nets, &a, &b, &cfg, &AdamHyper::default(), 0, &mut Stream::new(1)).unwrap().report;
        assert!(r.disc_recon.is_none() && r.disc_reg.is_some());
        assert!(cycle_iae_training_step(&mut nets, &a, &Tensor::zeros(6, 3), &cfg, &AdamHyper::default(), 1, &mut Stream::new(1)).is_err());
    }
}
