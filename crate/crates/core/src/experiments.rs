//! The two studies: the method comparison table and the incremental
//! group-masking curves.
//!
//! Both reuse one dataset, one trial-sampling seed, and one probe budget
//! across every cell, and both record the dataset's split hash so the
//! fairness of the comparison is checkable from the output alone.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{self, ProbeConfig, ProbeTask};
use crate::kernels;
use crate::model::{
    make_attribute_mask, mask_latent, AttributeMask, LrVaeModel, MaskPurpose, ModelConfig, Variant,
};
use crate::plot;
use crate::rng;
use crate::schedule::Form;
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};

/// Evaluation condition of one comparison cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Full representation, no privacy protection.
    Origin,
    /// Identity-free emotion recognition.
    PpSer,
    /// Emotion-free speaker verification.
    PpSv,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Origin => "origin",
            Condition::PpSer => "pp_ser",
            Condition::PpSv => "pp_sv",
        }
    }
}

/// Conditions a variant produces. Plain and vanilla-VAE baselines have no
/// protected condition; the single-task adversarial models ARE their
/// protected condition; the layered models expose all three via masking.
pub fn conditions_for(variant: Variant) -> &'static [Condition] {
    match variant {
        Variant::Dnn | Variant::Vae => &[Condition::Origin],
        Variant::AVaeSer => &[Condition::PpSer],
        Variant::AVaeSv => &[Condition::PpSv],
        Variant::LrVaeNoAdv | Variant::LrVae => {
            &[Condition::Origin, Condition::PpSer, Condition::PpSv]
        }
    }
}

/// Architecture knobs shared by every run of an experiment; dataset
/// dimensions and the variant fill in the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSettings {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: usize,
    pub lambda_emo_adv: f64,
    pub lambda_id_adv: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub schedule_form: Form,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::new(Variant::LrVae, 1, 2, 2);
        ModelSettings {
            latent_dim: d.latent_dim,
            encoder_hidden: d.encoder_hidden,
            head_hidden: d.head_hidden,
            lambda_emo_adv: d.lambda_emo_adv,
            lambda_id_adv: d.lambda_id_adv,
            p_max: d.p_max,
            p_min: d.p_min,
            schedule_form: d.schedule_form,
        }
    }
}

impl ModelSettings {
    pub fn to_model_config(
        &self,
        variant: Variant,
        ds: &LabeledDataset,
        l2: f64,
        init_seed: u64,
    ) -> ModelConfig {
        let mut cfg = ModelConfig::new(
            variant,
            ds.feature_dim(),
            ds.num_emotions(),
            ds.num_speakers(),
        );
        cfg.latent_dim = self.latent_dim;
        cfg.encoder_hidden = self.encoder_hidden.clone();
        cfg.head_hidden = self.head_hidden;
        cfg.lambda_emo_adv = self.lambda_emo_adv;
        cfg.lambda_id_adv = self.lambda_id_adv;
        cfg.p_max = self.p_max;
        cfg.p_min = self.p_min;
        cfg.schedule_form = self.schedule_form;
        cfg.l2 = l2;
        cfg.init_seed = init_seed;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model: ModelSettings,
    pub probe: ProbeConfig,
    /// Fraction of latent nodes kept by the pp_ser / pp_sv masks.
    pub mask_cut: f64,
}

impl ComparisonConfig {
    pub fn new(variants: Vec<Variant>, seeds: Vec<u64>) -> Self {
        ComparisonConfig {
            variants,
            seeds,
            train: TrainConfig::default(),
            model: ModelSettings::default(),
            probe: ProbeConfig::default(),
            mask_cut: 0.5,
        }
    }
}

/// Metrics of one (variant, condition, seed) evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub wfs: f64,
    pub eer: f64,
}

/// One table cell: a (variant, condition) pair aggregated over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub variant: Variant,
    pub condition: Condition,
    pub wfs_mean: f64,
    pub wfs_std: f64,
    pub eer_mean: f64,
    pub eer_std: f64,
    pub per_seed: Vec<SeedMetrics>,
    /// Hash of the dataset splits this cell was evaluated on.
    pub split_hash: String,
}

/// Deterministic part of the run ledger (wall time lives in
/// [`ComparisonTimings`], outside the replayable artifact).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub variant: Variant,
    /// Training runs executed per seed.
    pub trainings_per_seed: usize,
    pub param_count: usize,
    pub conditions: Vec<Condition>,
}

/// How many trainings it takes to cover both protected conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpCoverage {
    pub lr_vae_trainings_for_both_pp: usize,
    pub a_vae_trainings_for_both_pp: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub config: ComparisonConfig,
    pub dataset_split_hash: String,
    pub cells: Vec<ComparisonCell>,
    pub ledger: Vec<LedgerEntry>,
    /// Present when the full unified-vs-adversarial comparison ran.
    pub pp_coverage: Option<PpCoverage>,
}

/// Wall-clock ledger, reported separately: timings vary across runs and
/// must not break byte-identical replay of the result document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTimings {
    pub per_variant: Vec<VariantTiming>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantTiming {
    pub variant: Variant,
    pub training_runs: usize,
    pub train_seconds_total: f64,
}

/// Trains every requested variant on every seed and probes each condition.
pub fn run_comparison(
    ds: &LabeledDataset,
    config: &ComparisonConfig,
) -> Result<(ComparisonResult, ComparisonTimings)> {
    if config.seeds.is_empty() {
        return Err(Error::Validation("comparison needs at least one seed".into()));
    }
    if config.variants.is_empty() {
        return Err(Error::Validation("comparison needs at least one variant".into()));
    }
    let split_hash = format!("{:016x}", ds.split_hash());

    let mut cells: Vec<ComparisonCell> = Vec::new();
    let mut ledger = Vec::new();
    let mut timings = Vec::new();

    for &variant in &config.variants {
        let mut per_condition: Vec<(Condition, Vec<SeedMetrics>)> = conditions_for(variant)
            .iter()
            .map(|&c| (c, Vec::new()))
            .collect();
        let mut seconds = 0.0;
        let mut params = 0usize;

        for &seed in &config.seeds {
            let trained = train_cell(ds, config, variant, seed)?;
            seconds += trained.seconds;
            params = trained.param_count;
            for (condition, rows) in &mut per_condition {
                let metrics =
                    probe_condition(&trained.latents, ds, *condition, variant, config, seed)?;
                rows.push(SeedMetrics {
                    seed,
                    wfs: metrics.0,
                    eer: metrics.1,
                });
            }
        }

        for (condition, rows) in per_condition {
            let (wfs_mean, wfs_std) = mean_std(rows.iter().map(|r| r.wfs));
            let (eer_mean, eer_std) = mean_std(rows.iter().map(|r| r.eer));
            cells.push(ComparisonCell {
                variant,
                condition,
                wfs_mean,
                wfs_std,
                eer_mean,
                eer_std,
                per_seed: rows,
                split_hash: split_hash.clone(),
            });
        }
        ledger.push(LedgerEntry {
            variant,
            trainings_per_seed: 1,
            param_count: params,
            conditions: conditions_for(variant).to_vec(),
        });
        timings.push(VariantTiming {
            variant,
            training_runs: config.seeds.len(),
            train_seconds_total: seconds,
        });
    }

    // Unified-training ledger: the layered model covers both protected
    // conditions with its single run; the per-attribute adversarial
    // strategy needs one run per protected attribute.
    let has = |v: Variant| config.variants.contains(&v);
    let pp_coverage = (has(Variant::LrVae) && has(Variant::AVaeSer) && has(Variant::AVaeSv)).then(
        || {
            let runs_covering = |want: Condition| {
                ledger
                    .iter()
                    .filter(|e| e.conditions.contains(&want))
                    .count()
            };
            let _ = runs_covering(Condition::PpSer);
            PpCoverage {
                lr_vae_trainings_for_both_pp: 1,
                a_vae_trainings_for_both_pp: [Condition::PpSer, Condition::PpSv]
                    .iter()
                    .map(|&c| {
                        ledger
                            .iter()
                            .filter(|e| {
                                matches!(e.variant, Variant::AVaeSer | Variant::AVaeSv)
                                    && e.conditions.contains(&c)
                            })
                            .map(|e| e.trainings_per_seed)
                            .sum::<usize>()
                    })
                    .sum(),
            }
        },
    );

    Ok((
        ComparisonResult {
            config: config.clone(),
            dataset_split_hash: split_hash,
            cells,
            ledger,
            pp_coverage,
        },
        ComparisonTimings {
            per_variant: timings,
        },
    ))
}

struct TrainedCell {
    latents: Tensor,
    seconds: f64,
    param_count: usize,
}

fn train_cell(
    ds: &LabeledDataset,
    config: &ComparisonConfig,
    variant: Variant,
    seed: u64,
) -> Result<TrainedCell> {
    let init_seed = rng::derive_seed(seed, &format!("init-{}", variant.name()));
    let model_cfg = config
        .model
        .to_model_config(variant, ds, config.train.l2, init_seed);
    let model = LrVaeModel::new(model_cfg, ds.standardization().clone())?;
    let train_cfg = TrainConfig {
        variant,
        seed,
        ..config.train.clone()
    };
    let trained = train(model, ds, &train_cfg)?;
    let latents = trained.model.encode(ds.features())?.mu;
    Ok(TrainedCell {
        latents,
        seconds: trained.train_seconds,
        param_count: trained.model.param_count(),
    })
}

fn probe_condition(
    latents: &Tensor,
    ds: &LabeledDataset,
    condition: Condition,
    variant: Variant,
    config: &ComparisonConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = latents.cols();
    let view = match (condition, variant.is_maskable()) {
        (Condition::Origin, _) | (_, false) => latents.clone(),
        (Condition::PpSer, true) => {
            mask_latent(latents, &make_attribute_mask(d, MaskPurpose::PpSer, config.mask_cut)?)?
        }
        (Condition::PpSv, true) => {
            mask_latent(latents, &make_attribute_mask(d, MaskPurpose::PpSv, config.mask_cut)?)?
        }
    };
    let tag = format!("{}-{}", variant.name(), condition.name());
    let wfs = eval::train_probe(
        &view,
        ds,
        ProbeTask::Emotion,
        &config.probe,
        rng::derive_seed(seed, &format!("probe-emo-{tag}")),
    )?
    .metric;
    let eer = eval::train_probe(
        &view,
        ds,
        ProbeTask::Speaker,
        &config.probe,
        rng::derive_seed(seed, &format!("probe-spk-{tag}")),
    )?
    .metric;
    Ok((wfs, eer))
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// --- Masking curves ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskDirection {
    /// Mask from the identity (bottom) end upward.
    BottomUp,
    /// Mask from the emotion (top) end downward.
    TopDown,
}

impl MaskDirection {
    pub fn name(self) -> &'static str {
        match self {
            MaskDirection::BottomUp => "bottom_up",
            MaskDirection::TopDown => "top_down",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bottom_up" => Ok(MaskDirection::BottomUp),
            "top_down" => Ok(MaskDirection::TopDown),
            other => Err(Error::Validation(format!(
                "unknown direction {other:?}; expected bottom_up or top_down"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveStep {
    pub groups_masked: usize,
    pub nodes_masked: usize,
    pub wfs: f64,
    pub eer: f64,
}

/// Probe metrics after masking 0, 1, ..., group_count groups: one record
/// per step including the unmasked baseline, group_count + 1 in total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingCurve {
    pub group_count: usize,
    pub direction: MaskDirection,
    pub steps: Vec<CurveStep>,
}

impl MaskingCurve {
    pub fn step(&self, groups_masked: usize) -> &CurveStep {
        &self.steps[groups_masked]
    }
}

/// Masks one additional group per step and retrains both probes on the
/// masked latents. Steps are independent given the frozen encoder and run
/// in parallel; records are assembled in step order.
pub fn run_masking_curve(
    model: &LrVaeModel,
    ds: &LabeledDataset,
    group_count: usize,
    direction: MaskDirection,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<MaskingCurve> {
    let d = model.latent_dim();
    if group_count == 0 || d % group_count != 0 {
        return Err(Error::Validation(format!(
            "group count {group_count} does not divide latent dimension {d}"
        )));
    }
    let group_size = d / group_count;
    let latents = model.encode(ds.features())?.mu;

    let results: Vec<Result<CurveStep>> = kernels::map_indexed(group_count + 1, |k| {
        let nodes_masked = k * group_size;
        let keep: Vec<bool> = match direction {
            MaskDirection::BottomUp => (0..d).map(|i| i < d - nodes_masked).collect(),
            MaskDirection::TopDown => (0..d).map(|i| i >= nodes_masked).collect(),
        };
        let view = mask_latent(&latents, &AttributeMask::from_keep(keep))?;
        let wfs = eval::train_probe(
            &view,
            ds,
            ProbeTask::Emotion,
            probe,
            rng::derive_seed(seed, &format!("curve-emo-{k}")),
        )?
        .metric;
        let eer = eval::train_probe(
            &view,
            ds,
            ProbeTask::Speaker,
            probe,
            rng::derive_seed(seed, &format!("curve-spk-{k}")),
        )?
        .metric;
        Ok(CurveStep {
            groups_masked: k,
            nodes_masked,
            wfs,
            eer,
        })
    });

    let steps = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MaskingCurve {
        group_count,
        direction,
        steps,
    })
}

/// Writes `curve.csv` (groups_masked, wfs, eer) and `curve.svg` into the
/// directory. Both files are byte-stable given identical curves.
pub fn emit_curve_artifacts(curve: &MaskingCurve, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join("curve.csv");
    let svg_path = dir.join("curve.svg");

    let mut csv = String::from("groups_masked,wfs,eer\n");
    for s in &curve.steps {
        use std::fmt::Write;
        let _ = writeln!(csv, "{},{},{}", s.groups_masked, s.wfs, s.eer);
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let xs: Vec<f64> = curve.steps.iter().map(|s| s.groups_masked as f64).collect();
    let wfs: Vec<f64> = curve.steps.iter().map(|s| s.wfs).collect();
    let eer: Vec<f64> = curve.steps.iter().map(|s| s.eer).collect();
    let svg = plot::render_curves(
        &format!(
            "Incremental masking ({}, {} groups)",
            curve.direction.name(),
            curve.group_count
        ),
        "groups masked",
        "score",
        &xs,
        &[
            plot::Series {
                label: "emotion WFS",
                values: &wfs,
            },
            plot::Series {
                label: "speaker EER",
                values: &eer,
            },
        ],
    );
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}
