//! Adam training of any model variant with seeded mini-batching,
//! validation-based selection, and early stopping.
//!
//! Everything stochastic draws from streams derived of `TrainConfig::seed`,
//! so a (seed, config, dataset) triple fixes the final weights bit for bit.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{Batch, LossBreakdown, LrVaeModel, Mode, Variant};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::Tensor;

/// Cap on dev-split verification trials used for per-epoch selection.
const DEV_TRIALS: usize = 4000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// L2 coefficient inside the objective; the optimizer adds none.
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 128,
            l2: 1e-6,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            variant: Variant::LrVae,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Validation("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dev-split metrics feeding model selection.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DevMetrics {
    /// Weighted f-score of the model's own emotion head on the dev split.
    pub wfs_emo: Option<f64>,
    /// Balanced verification accuracy (1 - EER) over seeded dev trials of
    /// the latent embeddings. Dev speakers are disjoint from train, so
    /// identification accuracy is not a usable dev signal; verification is.
    pub acc_id: Option<f64>,
}

/// Higher-is-better selection score for a variant.
///
/// Multitask variants sum the emotion f-score and the identity score over
/// whichever of the two is applicable (a dev split with a single speaker
/// cannot produce an identity metric); the single-task adversarial variants
/// require their own task's metric.
pub fn selection_criterion(metrics: &DevMetrics, variant: Variant) -> Result<f64> {
    let need_wfs = || {
        metrics
            .wfs_emo
            .ok_or_else(|| Error::Validation("selection needs dev emotion f-score".into()))
    };
    let need_id = || {
        metrics
            .acc_id
            .ok_or_else(|| Error::Validation("selection needs dev identity score".into()))
    };
    match variant {
        Variant::AVaeSer => need_wfs(),
        Variant::AVaeSv => need_id(),
        _ => match (metrics.wfs_emo, metrics.acc_id) {
            (Some(w), Some(i)) => Ok(w + i),
            (Some(w), None) => Ok(w),
            (None, Some(i)) => Ok(i),
            (None, None) => Err(Error::Validation(
                "selection needs at least one dev metric".into(),
            )),
        },
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub dev: DevMetrics,
    pub criterion: f64,
    pub selected: bool,
}

pub struct TrainedModel {
    pub model: LrVaeModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub train_seconds: f64,
}

/// Runs epochs of shuffled mini-batches, evaluates the selection criterion
/// on the dev split after each epoch, and returns the weights of the best
/// epoch. Ties go to the earlier epoch; training stops after `patience`
/// consecutive non-improving epochs or on a non-finite loss component.
pub fn train(
    mut model: LrVaeModel,
    ds: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let started = Instant::now();
    let train_rows = ds.rows_in(Split::Train);
    let dev_rows = ds.rows_in(Split::Dev);
    if train_rows.is_empty() || dev_rows.is_empty() {
        return Err(Error::Validation(format!(
            "training needs nonempty train and dev splits, got {} and {} rows",
            train_rows.len(),
            dev_rows.len()
        )));
    }
    if ds.num_emotions() != model.config.emotion_classes
        || ds.num_speakers() != model.config.speaker_classes
    {
        return Err(Error::dim(
            "train label vocabularies",
            &[model.config.emotion_classes, model.config.speaker_classes],
            &[ds.num_emotions(), ds.num_speakers()],
        ));
    }
    model.seed_lineage.train_seed = Some(config.seed);

    let mut shuffle_rng = rng::stream(config.seed, "train-shuffle");
    let mut noise_rng = rng::stream(config.seed, "train-noise");

    // Dev features and verification trials are fixed for the whole run.
    let dev_x = ds.features_for(&dev_rows);
    let (dev_emo, dev_spk) = ds.labels_for(&dev_rows);
    // A dev split without two multi-utterance speakers has no identity
    // metric; selection then runs on the emotion metric alone.
    let use_id_metric = model.variant().has_identity_head();
    let dev_pairs = if use_id_metric {
        eval::build_trial_pairs(&dev_spk, DEV_TRIALS, config.seed).ok()
    } else {
        None
    };

    let shapes: Vec<Vec<usize>> = model
        .named_params()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = Adam::new(&shapes);

    let mut log: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order = train_rows.clone();
        fisher_yates(&mut order, &mut shuffle_rng);

        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let x = ds.features_for(chunk);
            let (emo, spk) = ds.labels_for(chunk);
            let out = model.forward_losses(
                Batch {
                    features: &x,
                    emotion_labels: &emo,
                    speaker_labels: &spk,
                },
                Mode::Train,
                &mut noise_rng,
            )?;
            if let Some(component) = out.breakdown.non_finite_component() {
                return Err(Error::NonFinite {
                    component: component.into(),
                    step,
                });
            }
            let grads = out.backward()?;
            let mut params = model.named_params_mut();
            adam.step(&mut params, &grads, config.learning_rate)?;
            accumulate(&mut sums, &out.breakdown);
            batches += 1;
        }
        let losses = mean(&sums, batches);

        let dev = dev_metrics(&model, &dev_x, &dev_emo, ds.num_emotions(), &dev_pairs)?;
        let criterion = selection_criterion(&dev, model.variant())?;
        log.push(EpochRecord {
            epoch,
            losses,
            dev,
            criterion,
            selected: false,
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| criterion > *b);
        if improved {
            let snapshot = model
                .named_params()
                .into_iter()
                .map(|(_, t)| t.clone())
                .collect();
            best = Some((criterion, epoch, snapshot));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let best_epoch = if let Some((_, epoch, snapshot)) = best {
        for ((_, param), saved) in model.named_params_mut().into_iter().zip(snapshot) {
            *param = saved;
        }
        log[epoch].selected = true;
        Some(epoch)
    } else {
        None
    };

    Ok(TrainedModel {
        model,
        log,
        best_epoch,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

fn dev_metrics(
    model: &LrVaeModel,
    dev_x: &Tensor,
    dev_emo: &[usize],
    emotion_classes: usize,
    dev_pairs: &Option<Vec<(usize, usize, bool)>>,
) -> Result<DevMetrics> {
    let wfs_emo = if model.variant().has_emotion_head() {
        let preds = model.predict_emotion(dev_x)?;
        Some(eval::weighted_f_score(&preds, dev_emo, emotion_classes)?)
    } else {
        None
    };
    let acc_id = match dev_pairs {
        Some(pairs) => {
            let latents = model.encode(dev_x)?.mu;
            let scored: Vec<eval::ScoredTrial> = pairs
                .iter()
                .map(|&(a, b, same)| eval::ScoredTrial {
                    score: eval::cosine_score_rows(&latents, a, b),
                    is_same_speaker: same,
                })
                .collect();
            let (eer, _) = eval::equal_error_rate(&scored)?;
            Some(1.0 - eer)
        }
        None => None,
    };
    Ok(DevMetrics { wfs_emo, acc_id })
}

fn fisher_yates(items: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn accumulate(sums: &mut LossBreakdown, b: &LossBreakdown) {
    sums.l_recon += b.l_recon;
    sums.l_kl += b.l_kl;
    sums.l_vae += b.l_vae;
    sums.l_emo += b.l_emo;
    sums.l_id += b.l_id;
    sums.l_emo_adv += b.l_emo_adv;
    sums.l_id_adv += b.l_id_adv;
    sums.l_reg += b.l_reg;
    sums.l_total += b.l_total;
}

fn mean(sums: &LossBreakdown, n: usize) -> LossBreakdown {
    let n = n as f64;
    LossBreakdown {
        l_recon: sums.l_recon / n,
        l_kl: sums.l_kl / n,
        l_vae: sums.l_vae / n,
        l_emo: sums.l_emo / n,
        l_id: sums.l_id / n,
        l_emo_adv: sums.l_emo_adv / n,
        l_id_adv: sums.l_id_adv / n,
        l_reg: sums.l_reg / n,
        l_total: sums.l_total / n,
    }
}
