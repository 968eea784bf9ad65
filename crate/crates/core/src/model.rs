//! The layered-representation VAE and its baseline variants.
//!
//! One architecture covers the whole method comparison. Every variant owns a
//! feedforward encoder; the VAE family adds a log-variance head and a mirror
//! decoder; the layered variants add one monotone dropout schedule per task;
//! the adversarial variants add discriminator heads wired through gradient
//! reversal. The identity adversary reads the emotion-schedule view of the
//! latent (pushing identity information out of the emotion end) and the
//! emotion adversary reads the identity-schedule view.
//!
//! Latent orientation: node 0 is the emotion end ("top"), node D-1 the
//! identity end ("bottom"). The emotion schedule decreases across the index,
//! the identity schedule increases.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{Graph, NodeId};
use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::kernels;
use crate::rng;
use crate::schedule::{
    apply_dropout_train, build_schedule, rates_broadcast, Direction, Form, PreserveRateSchedule,
};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Training strategy, matching the method comparison columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain multitask feedforward classifiers, no generative terms.
    Dnn,
    /// Vanilla VAE with both task heads on the latent.
    Vae,
    /// VAE + emotion head + speaker adversary (identity-free latent).
    AVaeSer,
    /// VAE + identity head + emotion adversary (emotion-free latent).
    AVaeSv,
    /// Layered dropout on both task views, no adversaries.
    LrVaeNoAdv,
    /// Full model: layered dropout plus both adversaries.
    LrVae,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::Dnn,
    Variant::Vae,
    Variant::AVaeSer,
    Variant::AVaeSv,
    Variant::LrVaeNoAdv,
    Variant::LrVae,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dnn => "dnn",
            Variant::Vae => "vae",
            Variant::AVaeSer => "a_vae_ser",
            Variant::AVaeSv => "a_vae_sv",
            Variant::LrVaeNoAdv => "lr_vae_no_adv",
            Variant::LrVae => "lr_vae",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ALL_VARIANTS.iter().map(|v| v.name()).collect();
                Error::Validation(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    pub fn has_decoder(self) -> bool {
        self != Variant::Dnn
    }

    pub fn has_emotion_head(self) -> bool {
        self != Variant::AVaeSv
    }

    pub fn has_identity_head(self) -> bool {
        self != Variant::AVaeSer
    }

    pub fn has_emotion_adversary(self) -> bool {
        matches!(self, Variant::AVaeSv | Variant::LrVae)
    }

    pub fn has_identity_adversary(self) -> bool {
        matches!(self, Variant::AVaeSer | Variant::LrVae)
    }

    pub fn has_schedules(self) -> bool {
        matches!(self, Variant::LrVaeNoAdv | Variant::LrVae)
    }

    /// Variants whose latent supports attribute masking.
    pub fn is_maskable(self) -> bool {
        self.has_schedules()
    }
}

/// Mean and log-variance of q(z|x) for a batch.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianPosterior {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::dim("gaussian_posterior", mu.shape(), log_var.shape()));
        }
        if !log_var.all_finite() || !mu.all_finite() {
            return Err(Error::Validation("non-finite posterior".into()));
        }
        Ok(GaussianPosterior { mu, log_var })
    }
}

/// z = mu + exp(log_var / 2) * eps. Tensor-level twin of the graph op.
pub fn reparameterize(post: &GaussianPosterior, eps: &Tensor) -> Tensor {
    let values = post
        .mu
        .values()
        .iter()
        .zip(post.log_var.values())
        .zip(eps.values())
        .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
        .collect();
    Tensor::from_vec(post.mu.shape().to_vec(), values).unwrap()
}

/// Batch mean of -1/2 sum_i (1 + log_var - mu^2 - exp(log_var)), >= 0.
pub fn kl_divergence(post: &GaussianPosterior) -> f64 {
    let batch = post.mu.rows() as f64;
    let sum: f64 = post
        .mu
        .values()
        .iter()
        .zip(post.log_var.values())
        .map(|(&m, &l)| -0.5 * (1.0 + l - m * m - l.exp()))
        .sum();
    (sum / batch).max(0.0)
}

/// Mean squared error over all elements.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim("reconstruction_loss", x.shape(), x_hat.shape()));
    }
    let n = x.len() as f64;
    Ok(x.values()
        .iter()
        .zip(x_hat.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Binary keep/drop selector over the latent nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeMask {
    keep: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPurpose {
    /// Identity-free emotion recognition: keep the emotion (top) end.
    PpSer,
    /// Emotion-free speaker verification: keep the identity (bottom) end.
    PpSv,
}

impl AttributeMask {
    pub fn from_keep(keep: Vec<bool>) -> Self {
        AttributeMask { keep }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn width(&self) -> usize {
        self.keep.len()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }
}

/// Keeps the top ceil(cut * D) nodes for PP-SER, the bottom ones for PP-SV.
pub fn make_attribute_mask(
    latent_dim: usize,
    purpose: MaskPurpose,
    cut: f64,
) -> Result<AttributeMask> {
    if !(cut > 0.0 && cut < 1.0) {
        return Err(Error::Validation(format!(
            "mask cut must lie strictly in (0,1), got {cut}"
        )));
    }
    let kept = (cut * latent_dim as f64).ceil() as usize;
    let keep = match purpose {
        MaskPurpose::PpSer => (0..latent_dim).map(|i| i < kept).collect(),
        MaskPurpose::PpSv => (0..latent_dim).map(|i| i >= latent_dim - kept).collect(),
    };
    Ok(AttributeMask { keep })
}

/// Zeroes the masked nodes of every row; surviving nodes pass unchanged.
pub fn mask_latent(z: &Tensor, mask: &AttributeMask) -> Result<Tensor> {
    if z.cols() != mask.width() {
        return Err(Error::dim("mask_latent", z.shape(), &[mask.width()]));
    }
    let (rows, cols) = (z.rows(), z.cols());
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for (v, &k) in z.row(r).iter().zip(&mask.keep) {
            values.push(if k { *v } else { 0.0 });
        }
    }
    Tensor::from_vec(z.shape().to_vec(), values)
}

/// One fully connected layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        // He-uniform: keeps activations and gradients at unit order through
        // the ReLU stacks; a weaker scale starves the task heads of signal
        // and lets the KL term freeze the latent.
        let scale = (6.0 / fan_in as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        DenseLayer {
            w: Tensor::from_vec(vec![fan_in, fan_out], values).unwrap(),
            b: Tensor::zeros(vec![fan_out]),
        }
    }
}

/// Dense stack with ReLU between layers and a linear final layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub(crate) fn init(rng: &mut ChaCha8Rng, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(rng, w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    /// Tensor-level forward (eval paths that need no gradients).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = kernels::dense_forward(x, &self.layers[0].w, &self.layers[0].b)?;
        for layer in &self.layers[1..] {
            h = kernels::relu(&h);
            h = kernels::dense_forward(&h, &layer.w, &layer.b)?;
        }
        Ok(h)
    }

    /// Activations feeding the final dense layer.
    pub fn penultimate(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            h = kernels::dense_forward(&h, &layer.w, &layer.b)?;
            h = kernels::relu(&h);
        }
        Ok(h)
    }

    fn graph_forward(&self, g: &mut Graph, x: NodeId, ids: &[(NodeId, NodeId)]) -> Result<NodeId> {
        let mut h = g.dense(x, ids[0].0, ids[0].1)?;
        for wb in &ids[1..] {
            let r = g.relu(h);
            h = g.dense(r, wb.0, wb.1)?;
        }
        Ok(h)
    }
}

/// Hyperparameters fixed at construction time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: usize,
    pub emotion_classes: usize,
    pub speaker_classes: usize,
    /// Reversal strength of the emotion adversary.
    pub lambda_emo_adv: f64,
    /// Reversal strength of the identity adversary.
    pub lambda_id_adv: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub schedule_form: Form,
    /// Coefficient of the L2 term inside the objective.
    pub l2: f64,
    /// Initial bias of the log-variance head. Starting the posterior
    /// narrow (negative bias) lets task signal survive the sampling noise
    /// before the KL term can freeze the latent at the prior.
    pub logvar_bias_init: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(
        variant: Variant,
        feature_dim: usize,
        emotion_classes: usize,
        speaker_classes: usize,
    ) -> Self {
        ModelConfig {
            variant,
            feature_dim,
            latent_dim: 128,
            encoder_hidden: vec![256, 128],
            head_hidden: 64,
            emotion_classes,
            speaker_classes,
            lambda_emo_adv: 1.0,
            lambda_id_adv: 1.0,
            p_max: 0.95,
            p_min: 0.05,
            schedule_form: Form::Linear,
            l2: 1e-6,
            logvar_bias_init: -2.0,
            init_seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.latent_dim < 2 {
            return Err(Error::Validation(format!(
                "bad dims: feature_dim={}, latent_dim={}",
                self.feature_dim, self.latent_dim
            )));
        }
        if self.emotion_classes < 2 || self.speaker_classes < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 emotion classes and 2 speakers, got {} and {}",
                self.emotion_classes, self.speaker_classes
            )));
        }
        if self.encoder_hidden.is_empty() {
            return Err(Error::Validation("encoder needs a hidden layer".into()));
        }
        Ok(())
    }
}

/// Record of the seeds a checkpoint descends from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SeedLineage {
    pub init_seed: u64,
    pub data_seed: Option<u64>,
    pub train_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// All stochastic inputs of one training step, drawn up front so a step is a
/// pure function of (weights, batch, noise).
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub eps: Option<Tensor>,
    pub emo_mask: Option<Tensor>,
    pub id_mask: Option<Tensor>,
}

impl StepNoise {
    pub fn none() -> Self {
        StepNoise {
            eps: None,
            emo_mask: None,
            id_mask: None,
        }
    }
}

/// Additive parts of the objective. `l_vae = l_recon + l_kl` and
/// `l_total = l_vae + l_emo + l_id + l_emo_adv + l_id_adv + l_reg`,
/// summed in exactly that order.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_recon: f64,
    pub l_kl: f64,
    pub l_vae: f64,
    pub l_emo: f64,
    pub l_id: f64,
    pub l_emo_adv: f64,
    pub l_id_adv: f64,
    pub l_reg: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// First component that is not a real number, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("l_recon", self.l_recon),
            ("l_kl", self.l_kl),
            ("l_emo", self.l_emo),
            ("l_id", self.l_id),
            ("l_emo_adv", self.l_emo_adv),
            ("l_id_adv", self.l_id_adv),
            ("l_reg", self.l_reg),
            ("l_total", self.l_total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// One labeled mini-batch, features still in raw (unstandardized) units.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a Tensor,
    pub emotion_labels: &'a [usize],
    pub speaker_labels: &'a [usize],
}

/// Loss values plus the tape needed to differentiate them.
pub struct ForwardOutput {
    pub breakdown: LossBreakdown,
    graph: Graph,
    root: NodeId,
    param_nodes: Vec<(String, NodeId)>,
}

impl ForwardOutput {
    /// Parameter gradients in `named_params` order.
    pub fn backward(&self) -> Result<Vec<Tensor>> {
        let mut grads = self.graph.backward(self.root)?;
        Ok(self
            .param_nodes
            .iter()
            .map(|(_, id)| {
                let shape = self.graph.value(*id).shape().to_vec();
                grads.take_or_zeros(*id, &shape)
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct LrVaeModel {
    pub config: ModelConfig,
    pub standardization: Standardization,
    pub seed_lineage: SeedLineage,
    encoder: Mlp,
    mu_head: DenseLayer,
    logvar_head: Option<DenseLayer>,
    decoder: Option<Mlp>,
    emo_head: Option<Mlp>,
    id_head: Option<Mlp>,
    emo_adv_head: Option<Mlp>,
    id_adv_head: Option<Mlp>,
    emo_schedule: Option<PreserveRateSchedule>,
    id_schedule: Option<PreserveRateSchedule>,
}

impl LrVaeModel {
    pub fn new(config: ModelConfig, standardization: Standardization) -> Result<Self> {
        config.validate()?;
        if standardization.mean.len() != config.feature_dim {
            return Err(Error::dim(
                "model standardization",
                &[config.feature_dim],
                &[standardization.mean.len()],
            ));
        }
        let v = config.variant;
        let mut rng = rng::stream(config.init_seed, "model-init");

        let mut enc_dims = vec![config.feature_dim];
        enc_dims.extend_from_slice(&config.encoder_hidden);
        let last_hidden = *enc_dims.last().unwrap();

        // Initialization order is part of the determinism contract; keep it
        // aligned with named_params.
        let encoder = Mlp::init(&mut rng, &enc_dims);
        let mu_head = DenseLayer::init(&mut rng, last_hidden, config.latent_dim);
        let logvar_head = v.has_decoder().then(|| {
            let mut layer = DenseLayer::init(&mut rng, last_hidden, config.latent_dim);
            for b in layer.b.values_mut() {
                *b = config.logvar_bias_init;
            }
            layer
        });
        let decoder = v.has_decoder().then(|| {
            let mut dec_dims = vec![config.latent_dim];
            dec_dims.extend(config.encoder_hidden.iter().rev());
            dec_dims.push(config.feature_dim);
            Mlp::init(&mut rng, &dec_dims)
        });
        let head_dims = |classes: usize| vec![config.latent_dim, config.head_hidden, classes];
        let emo_head = v
            .has_emotion_head()
            .then(|| Mlp::init(&mut rng, &head_dims(config.emotion_classes)));
        let id_head = v
            .has_identity_head()
            .then(|| Mlp::init(&mut rng, &head_dims(config.speaker_classes)));
        let emo_adv_head = v
            .has_emotion_adversary()
            .then(|| Mlp::init(&mut rng, &head_dims(config.emotion_classes)));
        let id_adv_head = v
            .has_identity_adversary()
            .then(|| Mlp::init(&mut rng, &head_dims(config.speaker_classes)));

        let (emo_schedule, id_schedule) = if v.has_schedules() {
            (
                Some(build_schedule(
                    config.latent_dim,
                    config.p_max,
                    config.p_min,
                    Direction::Decreasing,
                    config.schedule_form,
                )?),
                Some(build_schedule(
                    config.latent_dim,
                    config.p_max,
                    config.p_min,
                    Direction::Increasing,
                    config.schedule_form,
                )?),
            )
        } else {
            (None, None)
        };

        Ok(LrVaeModel {
            seed_lineage: SeedLineage {
                init_seed: config.init_seed,
                ..Default::default()
            },
            config,
            standardization,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            emo_head,
            id_head,
            emo_adv_head,
            id_adv_head,
            emo_schedule,
            id_schedule,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn emotion_schedule(&self) -> Option<&PreserveRateSchedule> {
        self.emo_schedule.as_ref()
    }

    pub fn identity_schedule(&self) -> Option<&PreserveRateSchedule> {
        self.id_schedule.as_ref()
    }

    /// Parameters in canonical order. Names are stable; the optimizer, the
    /// checkpoint format, and gradient alignment all rely on this order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        fn mlp_params<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
            for (i, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.w"), &layer.w));
                out.push((format!("{prefix}.{i}.b"), &layer.b));
            }
        }
        let mut out = Vec::new();
        mlp_params(&mut out, "encoder", &self.encoder);
        out.push(("mu.w".into(), &self.mu_head.w));
        out.push(("mu.b".into(), &self.mu_head.b));
        if let Some(l) = &self.logvar_head {
            out.push(("logvar.w".into(), &l.w));
            out.push(("logvar.b".into(), &l.b));
        }
        if let Some(m) = &self.decoder {
            mlp_params(&mut out, "decoder", m);
        }
        if let Some(m) = &self.emo_head {
            mlp_params(&mut out, "emo_head", m);
        }
        if let Some(m) = &self.id_head {
            mlp_params(&mut out, "id_head", m);
        }
        if let Some(m) = &self.emo_adv_head {
            mlp_params(&mut out, "emo_adv_head", m);
        }
        if let Some(m) = &self.id_adv_head {
            mlp_params(&mut out, "id_adv_head", m);
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        fn mlp_params<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, mlp: &'a mut Mlp) {
            for (i, layer) in mlp.layers.iter_mut().enumerate() {
                out.push((format!("{prefix}.{i}.w"), &mut layer.w));
                out.push((format!("{prefix}.{i}.b"), &mut layer.b));
            }
        }
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        mlp_params(&mut out, "encoder", &mut self.encoder);
        out.push(("mu.w".into(), &mut self.mu_head.w));
        out.push(("mu.b".into(), &mut self.mu_head.b));
        if let Some(l) = &mut self.logvar_head {
            out.push(("logvar.w".into(), &mut l.w));
            out.push(("logvar.b".into(), &mut l.b));
        }
        if let Some(m) = &mut self.decoder {
            mlp_params(&mut out, "decoder", m);
        }
        if let Some(m) = &mut self.emo_head {
            mlp_params(&mut out, "emo_head", m);
        }
        if let Some(m) = &mut self.id_head {
            mlp_params(&mut out, "id_head", m);
        }
        if let Some(m) = &mut self.emo_adv_head {
            mlp_params(&mut out, "emo_adv_head", m);
        }
        if let Some(m) = &mut self.id_adv_head {
            mlp_params(&mut out, "id_adv_head", m);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn standardize_batch(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.config.feature_dim {
            return Err(Error::dim("encode", x.shape(), &[self.config.feature_dim]));
        }
        Ok(self.standardization.apply(x))
    }

    /// Posterior of q(z|x) for raw-feature rows. Deterministic.
    ///
    /// The plain feedforward variant has no variance head; its posterior
    /// carries log_var = 0 and `mu` doubles as the representation.
    pub fn encode(&self, x: &Tensor) -> Result<GaussianPosterior> {
        let xs = self.standardize_batch(x)?;
        let mut h = xs;
        for layer in &self.encoder.layers {
            h = kernels::dense_forward(&h, &layer.w, &layer.b)?;
            h = kernels::relu(&h);
        }
        let mu = kernels::dense_forward(&h, &self.mu_head.w, &self.mu_head.b)?;
        let log_var = match &self.logvar_head {
            Some(l) => kernels::dense_forward(&h, &l.w, &l.b)?,
            None => Tensor::zeros(mu.shape().to_vec()),
        };
        GaussianPosterior::new(mu, log_var)
    }

    /// Emotion-head predictions on raw features, eval semantics
    /// (z = posterior mean, schedules applied as deterministic scaling).
    pub fn predict_emotion(&self, x: &Tensor) -> Result<Vec<usize>> {
        let head = self
            .emo_head
            .as_ref()
            .ok_or_else(|| Error::Validation("variant has no emotion head".into()))?;
        let post = self.encode(x)?;
        let view = match &self.emo_schedule {
            Some(s) => crate::schedule::apply_dropout_eval(&post.mu, s)?,
            None => post.mu,
        };
        let logits = head.forward(&view)?;
        Ok(argmax_rows(&logits))
    }

    /// Draws the per-step stochastic inputs for a batch of `rows` samples.
    pub fn draw_noise(&self, rows: usize, rng: &mut ChaCha8Rng) -> Result<StepNoise> {
        let d = self.config.latent_dim;
        let eps = self.variant().has_decoder().then(|| {
            let values = (0..rows * d).map(|_| rng::normal(rng)).collect();
            Tensor::from_vec(vec![rows, d], values).unwrap()
        });
        let mut mask_for = |sched: &Option<PreserveRateSchedule>| -> Result<Option<Tensor>> {
            match sched {
                Some(s) => {
                    let ones = Tensor::from_vec(vec![rows, d], vec![1.0; rows * d])?;
                    let (_, mask) = apply_dropout_train(&ones, s, rng)?;
                    Ok(Some(mask.to_tensor()))
                }
                None => Ok(None),
            }
        };
        let emo_mask = mask_for(&self.emo_schedule)?;
        let id_mask = mask_for(&self.id_schedule)?;
        Ok(StepNoise {
            eps,
            emo_mask,
            id_mask,
        })
    }

    /// Builds the objective for one batch, drawing fresh noise in train mode.
    pub fn forward_losses(
        &self,
        batch: Batch<'_>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutput> {
        let noise = match mode {
            Mode::Train => self.draw_noise(batch.features.rows(), rng)?,
            Mode::Eval => StepNoise::none(),
        };
        self.forward_losses_with_noise(batch, mode, &noise)
    }

    /// Deterministic objective given pre-drawn noise. The finite-difference
    /// gradient checks rely on this entry point.
    pub fn forward_losses_with_noise(
        &self,
        batch: Batch<'_>,
        mode: Mode,
        noise: &StepNoise,
    ) -> Result<ForwardOutput> {
        let rows = batch.features.rows();
        if rows == 0 || batch.emotion_labels.len() != rows || batch.speaker_labels.len() != rows {
            return Err(Error::Validation(format!(
                "batch of {rows} rows with {} emotion and {} speaker labels",
                batch.emotion_labels.len(),
                batch.speaker_labels.len()
            )));
        }
        let v = self.variant();
        let xs = self.standardize_batch(batch.features)?;

        let mut g = Graph::new();
        let mut param_nodes: Vec<(String, NodeId)> = Vec::new();
        for (name, tensor) in self.named_params() {
            let id = g.leaf(tensor.clone());
            param_nodes.push((name, id));
        }
        let find = |prefix: &str, param_nodes: &[(String, NodeId)]| -> Vec<(NodeId, NodeId)> {
            let mut pairs = Vec::new();
            let mut i = 0;
            loop {
                let wname = format!("{prefix}.{i}.w");
                let bname = format!("{prefix}.{i}.b");
                let w = param_nodes.iter().find(|(n, _)| *n == wname);
                let b = param_nodes.iter().find(|(n, _)| *n == bname);
                match (w, b) {
                    (Some((_, w)), Some((_, b))) => pairs.push((*w, *b)),
                    _ => break,
                }
                i += 1;
            }
            pairs
        };
        let single = |name: &str, param_nodes: &[(String, NodeId)]| -> NodeId {
            param_nodes
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, id)| *id)
                .expect("parameter name out of sync")
        };

        let x = g.leaf(xs.clone());

        // Encoder trunk.
        let enc_ids = find("encoder", &param_nodes);
        let mut h = x;
        for (w, b) in &enc_ids {
            h = g.dense(h, *w, *b)?;
            h = g.relu(h);
        }
        let mu = g.dense(h, single("mu.w", &param_nodes), single("mu.b", &param_nodes))?;

        // Latent sample: one draw per batch element, shared by every head.
        let (z, log_var) = if v.has_decoder() {
            let lv = g.dense(
                h,
                single("logvar.w", &param_nodes),
                single("logvar.b", &param_nodes),
            )?;
            let z = match (mode, &noise.eps) {
                (Mode::Train, Some(eps)) => g.reparameterize(mu, lv, eps.clone())?,
                (Mode::Train, None) => {
                    return Err(Error::Validation(
                        "train mode requires eps noise for a VAE variant".into(),
                    ))
                }
                (Mode::Eval, _) => mu,
            };
            (z, Some(lv))
        } else {
            (mu, None)
        };

        // VAE terms.
        let zero = g.leaf(Tensor::scalar(0.0));
        let (l_recon, l_kl) = if let (Some(dec), Some(lv)) = (&self.decoder, log_var) {
            let dec_ids = find("decoder", &param_nodes);
            let x_hat = dec.graph_forward(&mut g, z, &dec_ids)?;
            let l_recon = g.mse_loss(x_hat, &xs)?;
            let l_kl = g.kl_to_std_normal(mu, lv)?;
            (l_recon, l_kl)
        } else {
            (zero, zero)
        };
        let l_vae = g.add_scalars(&[l_recon, l_kl])?;

        // Task views through layered dropout. Heads read the posterior mean:
        // the sampled z feeds reconstruction only. Routing the heads through
        // the sample drowns them in unit-variance noise once the KL term
        // settles, and the whole multitask signal collapses.
        let emo_view = self.task_view(&mut g, mu, rows, mode, &self.emo_schedule, &noise.emo_mask)?;
        let id_view = self.task_view(&mut g, mu, rows, mode, &self.id_schedule, &noise.id_mask)?;

        let head_loss = |g: &mut Graph,
                             head: &Option<Mlp>,
                             prefix: &str,
                             input: NodeId,
                             labels: &[usize],
                             reversal: Option<f64>|
         -> Result<NodeId> {
            match head {
                Some(mlp) => {
                    let input = match reversal {
                        Some(lambda) => g.gradient_reversal(input, lambda)?,
                        None => input,
                    };
                    let ids = find(prefix, &param_nodes);
                    let logits = mlp.graph_forward(g, input, &ids)?;
                    g.softmax_cross_entropy(logits, labels)
                }
                None => Ok(zero),
            }
        };

        let l_emo = head_loss(
            &mut g,
            &self.emo_head,
            "emo_head",
            emo_view,
            batch.emotion_labels,
            None,
        )?;
        let l_id = head_loss(
            &mut g,
            &self.id_head,
            "id_head",
            id_view,
            batch.speaker_labels,
            None,
        )?;
        // Adversaries: the identity discriminator attacks the emotion view,
        // the emotion discriminator attacks the identity view; reversal
        // pushes the encoder to defeat them.
        let l_id_adv = head_loss(
            &mut g,
            &self.id_adv_head,
            "id_adv_head",
            emo_view,
            batch.speaker_labels,
            Some(self.config.lambda_id_adv),
        )?;
        let l_emo_adv = head_loss(
            &mut g,
            &self.emo_adv_head,
            "emo_adv_head",
            id_view,
            batch.emotion_labels,
            Some(self.config.lambda_emo_adv),
        )?;

        // L2 over every weight and bias.
        let squares: Vec<NodeId> = param_nodes
            .iter()
            .map(|(_, id)| g.sum_squares(*id))
            .collect();
        let sq_sum = g.add_scalars(&squares)?;
        let l_reg = g.scale_scalar(sq_sum, self.config.l2)?;

        let root = g.add_scalars(&[l_vae, l_emo, l_id, l_emo_adv, l_id_adv, l_reg])?;

        let breakdown = LossBreakdown {
            l_recon: g.value(l_recon).item(),
            l_kl: g.value(l_kl).item(),
            l_vae: g.value(l_vae).item(),
            l_emo: g.value(l_emo).item(),
            l_id: g.value(l_id).item(),
            l_emo_adv: g.value(l_emo_adv).item(),
            l_id_adv: g.value(l_id_adv).item(),
            l_reg: g.value(l_reg).item(),
            l_total: g.value(root).item(),
        };

        Ok(ForwardOutput {
            breakdown,
            graph: g,
            root,
            param_nodes,
        })
    }

    fn task_view(
        &self,
        g: &mut Graph,
        z: NodeId,
        rows: usize,
        mode: Mode,
        schedule: &Option<PreserveRateSchedule>,
        mask: &Option<Tensor>,
    ) -> Result<NodeId> {
        let Some(sched) = schedule else {
            return Ok(z);
        };
        let factor = match mode {
            Mode::Train => mask
                .clone()
                .ok_or_else(|| Error::Validation("train mode requires dropout masks".into()))?,
            Mode::Eval => rates_broadcast(sched, rows),
        };
        let f = g.leaf(factor);
        g.mul(z, f)
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

// --- Checkpoint format -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk model document. JSON with shortest-round-trip floats, so a
/// save/load/save cycle is byte-identical.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    standardization: Standardization,
    seed_lineage: SeedLineage,
    emo_schedule: Option<PreserveRateSchedule>,
    id_schedule: Option<PreserveRateSchedule>,
    params: Vec<NamedTensor>,
}

impl LrVaeModel {
    pub fn to_checkpoint_json(&self) -> String {
        let params = self
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            standardization: self.standardization.clone(),
            seed_lineage: self.seed_lineage.clone(),
            emo_schedule: self.emo_schedule.clone(),
            id_schedule: self.id_schedule.clone(),
            params,
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serialization")
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(json).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format version {}",
                file.format_version
            )));
        }
        if let Some(s) = &file.emo_schedule {
            if s.width() != file.config.latent_dim {
                return Err(Error::dim(
                    "checkpoint emo schedule",
                    &[file.config.latent_dim],
                    &[s.width()],
                ));
            }
        }
        if let Some(s) = &file.id_schedule {
            if s.width() != file.config.latent_dim {
                return Err(Error::dim(
                    "checkpoint id schedule",
                    &[file.config.latent_dim],
                    &[s.width()],
                ));
            }
        }
        let mut model = LrVaeModel::new(file.config, file.standardization)?;
        model.seed_lineage = file.seed_lineage;
        model.emo_schedule = file.emo_schedule;
        model.id_schedule = file.id_schedule;

        let mut stored: std::collections::BTreeMap<String, NamedTensor> = file
            .params
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        for (name, tensor) in model.named_params_mut() {
            let found = stored
                .remove(&name)
                .ok_or_else(|| Error::Validation(format!("checkpoint missing parameter {name}")))?;
            if found.shape != tensor.shape() {
                return Err(Error::dim(
                    "checkpoint parameter",
                    tensor.shape(),
                    &found.shape,
                ));
            }
            *tensor = Tensor::from_vec(found.shape, found.values)?;
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Validation(format!(
                "checkpoint has unexpected parameter {extra}"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&json)
    }
}
