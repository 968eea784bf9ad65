//! Config resolution and command execution.
//!
//! Resolution order per field: built-in default, then the `--config` file,
//! then the explicit flag. The resolved configuration (minus the output
//! directory, which is an invocation parameter) is written to
//! `config.json` in the output directory before the command runs.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::{Path, PathBuf};

use lrvae::data::{export_csv, generate_synthetic, ingest_csv, CsvSchema, SynthConfig};
use lrvae::error::{Error, Result};
use lrvae::eval::{train_probe, MetricReport, ProbeConfig, ProbeTask};
use lrvae::experiments::{
    emit_curve_artifacts, run_comparison, run_masking_curve, ComparisonConfig, MaskDirection,
    ModelSettings,
};
use lrvae::model::{make_attribute_mask, mask_latent, LrVaeModel, MaskPurpose, Variant};
use lrvae::schedule::Form;
use lrvae::tensor::Tensor;
use lrvae::train::{train, TrainConfig};

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Experiment(ExperimentCommand::Compare(args)) => cmd_compare(args),
        Command::Experiment(ExperimentCommand::Curve(args)) => cmd_curve(args),
    }
}

fn load_config<T: DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("{}: {e}", path.display()),
        })
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("serializable config");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Validation(format!("bad hidden width {p:?}")))
        })
        .collect()
}

fn parse_form(s: &str) -> Result<Form> {
    match s {
        "linear" => Ok(Form::Linear),
        "exponential" => Ok(Form::Exponential),
        other => Err(Error::Validation(format!(
            "unknown schedule form {other:?}; expected linear or exponential"
        ))),
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Error::Validation(format!("missing required {what} (flag or config)")))
}

fn apply_model_flags(model: &mut ModelSettings, flags: &ModelFlags) -> Result<()> {
    if let Some(v) = flags.latent_dim {
        model.latent_dim = v;
    }
    if let Some(s) = &flags.encoder_hidden {
        model.encoder_hidden = parse_hidden(s)?;
    }
    if let Some(v) = flags.head_hidden {
        model.head_hidden = v;
    }
    if let Some(v) = flags.lambda_emo_adv {
        model.lambda_emo_adv = v;
    }
    if let Some(v) = flags.lambda_id_adv {
        model.lambda_id_adv = v;
    }
    if let Some(v) = flags.p_max {
        model.p_max = v;
    }
    if let Some(v) = flags.p_min {
        model.p_min = v;
    }
    if let Some(s) = &flags.schedule_form {
        model.schedule_form = parse_form(s)?;
    }
    Ok(())
}

fn apply_train_flags(train: &mut TrainConfig, flags: &TrainFlags) {
    if let Some(v) = flags.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = flags.l2 {
        train.l2 = v;
    }
    if let Some(v) = flags.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = flags.patience {
        train.patience = v;
    }
}

fn apply_probe_flags(probe: &mut ProbeConfig, flags: &ProbeFlags) {
    if let Some(v) = flags.probe_epochs {
        probe.max_epochs = v;
    }
    if let Some(v) = flags.probe_patience {
        probe.patience = v;
    }
    if let Some(v) = flags.max_trials {
        probe.max_trials = v;
    }
}

// --- gen-data ----------------------------------------------------------------

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_config(&args.common.config)?.unwrap_or_default();
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.features {
        cfg.f = v;
    }
    if let Some(v) = args.emotions {
        cfg.e = v;
    }
    if let Some(v) = args.speakers {
        cfg.s = v;
    }
    if let Some(v) = args.emotion_strength {
        cfg.emotion_strength = v;
    }
    if let Some(v) = args.identity_strength {
        cfg.identity_strength = v;
    }
    if let Some(v) = args.nuisance_dim {
        cfg.nuisance_dim = v;
    }
    if let Some(v) = args.cross_leak {
        cfg.cross_leak = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }

    let ds = generate_synthetic(&cfg)?;
    prepare_out(&args.common.out)?;
    write_json(&args.common.out, "config.json", &cfg)?;
    let csv = args.common.out.join("dataset.csv");
    export_csv(&ds, &csv)?;
    println!(
        "wrote {} rows (F={}, E={}, S={}) to {}",
        ds.len(),
        ds.feature_dim(),
        ds.num_emotions(),
        ds.num_speakers(),
        csv.display()
    );
    Ok(())
}

// --- train -------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCmdConfig {
    pub data: PathBuf,
    pub train: TrainConfig,
    pub model: ModelSettings,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file: Option<TrainCmdConfig> = load_config(&args.common.config)?;
    let (mut train_cfg, mut model_settings, data_from_file) = match file {
        Some(f) => (f.train, f.model, Some(f.data)),
        None => (TrainConfig::default(), ModelSettings::default(), None),
    };
    if let Some(v) = &args.variant {
        train_cfg.variant = Variant::parse(v)?;
    }
    if let Some(v) = args.seed {
        train_cfg.seed = v;
    }
    apply_train_flags(&mut train_cfg, &args.train);
    apply_model_flags(&mut model_settings, &args.model)?;
    let data = require(args.data.or(data_from_file), "--data")?;

    let resolved = TrainCmdConfig {
        data: data.clone(),
        train: train_cfg.clone(),
        model: model_settings.clone(),
    };

    let ds = ingest_csv(&data, &CsvSchema::default())?;
    let init_seed = lrvae::rng::derive_seed(train_cfg.seed, "cli-init");
    let model_cfg = model_settings.to_model_config(train_cfg.variant, &ds, train_cfg.l2, init_seed);
    let mut model = LrVaeModel::new(model_cfg, ds.standardization().clone())?;
    model.seed_lineage.data_seed = None;

    let trained = train(model, &ds, &train_cfg)?;

    prepare_out(&args.common.out)?;
    write_json(&args.common.out, "config.json", &resolved)?;
    let ckpt = args.common.out.join("model.json");
    trained.model.save(&ckpt)?;
    let log_path = args.common.out.join("log.jsonl");
    let mut log_text = String::new();
    for rec in &trained.log {
        log_text.push_str(&serde_json::to_string(rec).expect("serializable record"));
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text).map_err(|e| Error::io(&log_path, e))?;

    println!(
        "trained {} for {} epochs (best {:?}); checkpoint {}",
        train_cfg.variant.name(),
        trained.log.len(),
        trained.best_epoch,
        ckpt.display()
    );
    Ok(())
}

// --- encode ------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeCmdConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    /// none, pp_ser, or pp_sv.
    pub mask: String,
    pub cut: f64,
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let file: Option<EncodeCmdConfig> = load_config(&args.common.config)?;
    let (model_ff, data_ff, mask_ff, cut_ff) = match file {
        Some(f) => (Some(f.model), Some(f.data), Some(f.mask), Some(f.cut)),
        None => (None, None, None, None),
    };
    let model_path = require(args.model.or(model_ff), "--model")?;
    let data_path = require(args.data.or(data_ff), "--data")?;
    let mask = args.mask.or(mask_ff).unwrap_or_else(|| "none".into());
    let cut = args.cut.or(cut_ff).unwrap_or(0.5);

    let purpose = match mask.as_str() {
        "none" => None,
        "pp_ser" => Some(MaskPurpose::PpSer),
        "pp_sv" => Some(MaskPurpose::PpSv),
        other => {
            return Err(Error::Validation(format!(
                "unknown mask {other:?}; expected none, pp_ser, or pp_sv"
            )))
        }
    };

    let resolved = EncodeCmdConfig {
        model: model_path.clone(),
        data: data_path.clone(),
        mask: mask.clone(),
        cut,
    };

    let model = LrVaeModel::load(&model_path)?;
    let ds = ingest_csv(
        &data_path,
        &CsvSchema {
            expected_features: Some(model.config.feature_dim),
        },
    )?;

    let mut latents = model.encode(ds.features())?.mu;
    if let Some(p) = purpose {
        let mask = make_attribute_mask(model.latent_dim(), p, cut)?;
        latents = mask_latent(&latents, &mask)?;
    }

    prepare_out(&args.common.out)?;
    write_json(&args.common.out, "config.json", &resolved)?;
    let out_csv = args.common.out.join("embeddings.csv");
    write_embeddings_csv(&out_csv, &latents, &ds)?;
    println!(
        "encoded {} rows to {} latent dims (mask {}) at {}",
        ds.len(),
        model.latent_dim(),
        mask,
        out_csv.display()
    );
    Ok(())
}

/// Embeddings reuse the dataset schema so `eval` ingests them directly.
fn write_embeddings_csv(path: &Path, latents: &Tensor, ds: &lrvae::data::LabeledDataset) -> Result<()> {
    use std::fmt::Write;
    let d = latents.cols();
    let mut out = String::new();
    for i in 0..d {
        let _ = write!(out, "feature_{i},");
    }
    out.push_str("emotion,speaker,split\n");
    for r in 0..ds.len() {
        for v in latents.row(r) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(
            out,
            "{},{},{}",
            ds.emotion_vocab()[ds.emotion_labels()[r]],
            ds.speaker_vocab()[ds.speaker_labels()[r]],
            ds.splits()[r].name()
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// --- eval --------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCmdConfig {
    pub data: PathBuf,
    pub seed: u64,
    pub probe: ProbeConfig,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file: Option<EvalCmdConfig> = load_config(&args.common.config)?;
    let (data_ff, seed_ff, probe_ff) = match file {
        Some(f) => (Some(f.data), Some(f.seed), Some(f.probe)),
        None => (None, None, None),
    };
    let data = require(args.data.or(data_ff), "--data")?;
    let seed = args.seed.or(seed_ff).unwrap_or(0);
    let mut probe = probe_ff.unwrap_or_default();
    apply_probe_flags(&mut probe, &args.probe);

    let resolved = EvalCmdConfig {
        data: data.clone(),
        seed,
        probe: probe.clone(),
    };

    let ds = ingest_csv(&data, &CsvSchema::default())?;
    let emotion = train_probe(
        ds.features(),
        &ds,
        ProbeTask::Emotion,
        &probe,
        lrvae::rng::derive_seed(seed, "eval-emo"),
    )?;
    let speaker = train_probe(
        ds.features(),
        &ds,
        ProbeTask::Speaker,
        &probe,
        lrvae::rng::derive_seed(seed, "eval-spk"),
    )?;

    let report = MetricReport {
        weighted_f_score: emotion.report.weighted_f_score,
        per_class: emotion.report.per_class,
        eer: speaker.report.eer,
        threshold_at_eer: speaker.report.threshold_at_eer,
        trial_count: speaker.report.trial_count,
    };

    prepare_out(&args.common.out)?;
    write_json(&args.common.out, "config.json", &resolved)?;
    let path = write_json(&args.common.out, "report.json", &report)?;
    println!(
        "wfs {:.4}, eer {:.4} -> {}",
        report.weighted_f_score.unwrap_or(f64::NAN),
        report.eer.unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

// --- experiment compare --------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareCmdConfig {
    pub data: PathBuf,
    pub comparison: ComparisonConfig,
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let file: Option<CompareCmdConfig> = load_config(&args.common.config)?;
    let (data_ff, comparison_ff) = match file {
        Some(f) => (Some(f.data), Some(f.comparison)),
        None => (None, None),
    };
    let data = require(args.data.or(data_ff), "--data")?;
    let mut comparison = comparison_ff.unwrap_or_else(|| {
        let mut c = ComparisonConfig::new(vec![], vec![]);
        c.probe = ProbeConfig::reduced();
        c
    });

    if let Some(list) = &args.variants {
        comparison.variants = list
            .split(',')
            .map(|v| Variant::parse(v.trim()))
            .collect::<Result<Vec<_>>>()?;
    }
    if args.seeds.is_some() || args.seed.is_some() {
        let count = args.seeds.unwrap_or(comparison.seeds.len().max(1));
        let base = args.seed.unwrap_or(0);
        comparison.seeds = (0..count as u64).map(|k| base + k).collect();
    }
    if comparison.variants.is_empty() {
        return Err(Error::Validation(
            "no variants selected; pass --variants or a config file".into(),
        ));
    }
    if comparison.seeds.is_empty() {
        comparison.seeds = vec![0];
    }
    if let Some(v) = args.mask_cut {
        comparison.mask_cut = v;
    }
    apply_train_flags(&mut comparison.train, &args.train);
    apply_model_flags(&mut comparison.model, &args.model)?;
    apply_probe_flags(&mut comparison.probe, &args.probe);

    let resolved = CompareCmdConfig {
        data: data.clone(),
        comparison: comparison.clone(),
    };

    let ds = ingest_csv(&data, &CsvSchema::default())?;
    let (result, timings) = run_comparison(&ds, &comparison)?;

    prepare_out(&args.common.out)?;
    write_json(&args.common.out, "config.json", &resolved)?;
    write_json(&args.common.out, "comparison.json", &result)?;
    // Wall-clock lives apart: it is the one artifact that cannot replay
    // byte-identically.
    write_json(&args.common.out, "timings.json", &timings)?;

    for cell in &result.cells {
        println!(
            "{:<13} {:<7} wfs {:.4} +/- {:.4}  eer {:.4} +/- {:.4}",
            cell.variant.name(),
            cell.condition.name(),
            cell.wfs_mean,
            cell.wfs_std,
            cell.eer_mean,
            cell.eer_std
        );
    }
    if let Some(c) = &result.pp_coverage {
        println!(
            "coverage of both protected conditions: lr_vae {} run(s), a_vae {} run(s)",
            c.lr_vae_trainings_for_both_pp, c.a_vae_trainings_for_both_pp
        );
    }
    Ok(())
}

// --- experiment curve ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveCmdConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub groups: usize,
    pub direction: MaskDirection,
    pub seed: u64,
    pub probe: ProbeConfig,
}

fn cmd_curve(args: CurveArgs) -> Result<()> {
    let file: Option<CurveCmdConfig> = load_config(&args.common.config)?;
    let (model_ff, data_ff, groups_ff, direction_ff, seed_ff, probe_ff) = match file {
        Some(f) => (
            Some(f.model),
            Some(f.data),
            Some(f.groups),
            Some(f.direction),
            Some(f.seed),
            Some(f.probe),
        ),
        None => (None, None, None, None, None, None),
    };
    let model_path = require(args.model.or(model_ff), "--model")?;
    let data = require(args.data.or(data_ff), "--data")?;
    let groups = args.groups.or(groups_ff).unwrap_or(32);
    let direction = match &args.direction {
        Some(s) => MaskDirection::parse(s)?,
        None => direction_ff.unwrap_or(MaskDirection::BottomUp),
    };
    let seed = args.seed.or(seed_ff).unwrap_or(0);
    let mut probe = probe_ff.unwrap_or_else(ProbeConfig::reduced);
    apply_probe_flags(&mut probe, &args.probe);

    let resolved = CurveCmdConfig {
        model: model_path.clone(),
        data: data.clone(),
        groups,
        direction,
        seed,
        probe: probe.clone(),
    };

    let model = LrVaeModel::load(&model_path)?;
    let ds = ingest_csv(
        &data,
        &CsvSchema {
            expected_features: Some(model.config.feature_dim),
        },
    )?;
    let curve = run_masking_curve(&model, &ds, groups, direction, &probe, seed)?;

    prepare_out(&args.common.out)?;
    write_json(&args.common.out, "config.json", &resolved)?;
    let (csv, svg) = emit_curve_artifacts(&curve, &args.common.out)?;
    println!(
        "curve with {} steps ({}) -> {}, {}",
        curve.steps.len(),
        direction.name(),
        csv.display(),
        svg.display()
    );
    Ok(())
}
