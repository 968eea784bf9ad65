//! Labeled feature datasets.
//!
//! Three entry points: a synthetic generator that entangles emotion and
//! speaker factors (the stand-in for real embedding corpora), a CSV ingester
//! for precomputed embeddings, and train-statistics standardization.
//! Every dataset enforces speaker-disjoint splits and full emotion-class
//! coverage per split at construction; nothing downstream rechecks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Dimension of the per-speaker latent factor in the synthetic generator.
const SPEAKER_FACTOR_DIM: usize = 8;

/// Emotion class priors used when generating five classes, mirroring the
/// imbalance of large podcast emotion corpora.
pub const FIVE_CLASS_PRIORS: [f64; 5] = [0.5305, 0.2710, 0.0881, 0.0709, 0.0395];

const SPLIT_FRACTION_DEV: f64 = 0.15;
const SPLIT_FRACTION_TEST: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

pub const ALL_SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        ALL_SPLITS.into_iter().find(|sp| sp.name() == s)
    }
}

/// Per-dimension mean and standard deviation, computed on train rows only.
/// A zero `std` entry marks a constant dimension: centered, never divided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// No-op transform (mean 0, scale 1) of the given width.
    pub fn identity(width: usize) -> Self {
        Standardization {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn from_rows(features: &Tensor, rows: &[usize]) -> Self {
        let f = features.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; f];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; f];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let f = self.mean.len();
        assert_eq!(x.cols(), f, "standardization width mismatch");
        let mut values = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            for ((v, m), s) in x.row(r).iter().zip(&self.mean).zip(&self.std) {
                let centered = v - m;
                values.push(if *s > 0.0 { centered / s } else { centered });
            }
        }
        Tensor::from_vec(x.shape().to_vec(), values).unwrap()
    }
}

/// Feature matrix with emotion, speaker, and split annotations.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Tensor,
    emotion_labels: Vec<usize>,
    speaker_labels: Vec<usize>,
    splits: Vec<Split>,
    emotion_vocab: Vec<String>,
    speaker_vocab: Vec<String>,
    standardization: Standardization,
}

impl LabeledDataset {
    pub fn new(
        features: Tensor,
        emotion_labels: Vec<usize>,
        speaker_labels: Vec<usize>,
        splits: Vec<Split>,
        emotion_vocab: Vec<String>,
        speaker_vocab: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        if emotion_labels.len() != n || speaker_labels.len() != n || splits.len() != n {
            return Err(Error::Validation(format!(
                "row count mismatch: {n} feature rows, {} emotions, {} speakers, {} splits",
                emotion_labels.len(),
                speaker_labels.len(),
                splits.len()
            )));
        }
        if let Some(&bad) = emotion_labels.iter().find(|&&l| l >= emotion_vocab.len()) {
            return Err(Error::LabelRange {
                op: "dataset emotions",
                label: bad,
                arity: emotion_vocab.len(),
            });
        }
        if let Some(&bad) = speaker_labels.iter().find(|&&l| l >= speaker_vocab.len()) {
            return Err(Error::LabelRange {
                op: "dataset speakers",
                label: bad,
                arity: speaker_vocab.len(),
            });
        }

        // Hard invariant: a speaker lives in exactly one split.
        let mut speaker_split: Vec<Option<Split>> = vec![None; speaker_vocab.len()];
        for (&spk, &split) in speaker_labels.iter().zip(&splits) {
            match speaker_split[spk] {
                None => speaker_split[spk] = Some(split),
                Some(prev) if prev == split => {}
                Some(prev) => {
                    return Err(Error::Validation(format!(
                        "speaker {:?} appears in both {} and {} splits",
                        speaker_vocab[spk],
                        prev.name(),
                        split.name()
                    )));
                }
            }
        }

        // Every emotion class must appear in every split.
        for split in ALL_SPLITS {
            let mut seen = vec![false; emotion_vocab.len()];
            for (&e, &s) in emotion_labels.iter().zip(&splits) {
                if s == split {
                    seen[e] = true;
                }
            }
            if let Some(missing) = seen.iter().position(|&s| !s) {
                return Err(Error::Validation(format!(
                    "emotion class {:?} missing from {} split",
                    emotion_vocab[missing],
                    split.name()
                )));
            }
        }

        let train_rows: Vec<usize> = splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == Split::Train).then_some(i))
            .collect();
        let standardization = Standardization::from_rows(&features, &train_rows);

        Ok(LabeledDataset {
            features,
            emotion_labels,
            speaker_labels,
            splits,
            emotion_vocab,
            speaker_vocab,
            standardization,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_emotions(&self) -> usize {
        self.emotion_vocab.len()
    }

    pub fn num_speakers(&self) -> usize {
        self.speaker_vocab.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn emotion_labels(&self) -> &[usize] {
        &self.emotion_labels
    }

    pub fn speaker_labels(&self) -> &[usize] {
        &self.speaker_labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn emotion_vocab(&self) -> &[String] {
        &self.emotion_vocab
    }

    pub fn speaker_vocab(&self) -> &[String] {
        &self.speaker_vocab
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Row indices belonging to a split, in dataset order.
    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    /// Gathers the given rows into a fresh feature tensor.
    pub fn features_for(&self, rows: &[usize]) -> Tensor {
        let f = self.feature_dim();
        let mut values = Vec::with_capacity(rows.len() * f);
        for &r in rows {
            values.extend_from_slice(self.features.row(r));
        }
        Tensor::from_vec(vec![rows.len(), f], values).unwrap()
    }

    pub fn labels_for(&self, rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
        (
            rows.iter().map(|&r| self.emotion_labels[r]).collect(),
            rows.iter().map(|&r| self.speaker_labels[r]).collect(),
        )
    }

    /// Applies the train-split standardization to every split.
    pub fn standardize(&self) -> LabeledDataset {
        let transformed = self.standardization.apply(&self.features);
        LabeledDataset::new(
            transformed,
            self.emotion_labels.clone(),
            self.speaker_labels.clone(),
            self.splits.clone(),
            self.emotion_vocab.clone(),
            self.speaker_vocab.clone(),
        )
        .expect("standardization preserves dataset invariants")
    }

    /// Stable fingerprint of the split assignment, used by the comparison
    /// harness to prove every cell saw identical splits.
    pub fn split_hash(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u64| {
            hash ^= b;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        };
        feed(self.len() as u64);
        for (i, (&spk, &split)) in self.speaker_labels.iter().zip(&self.splits).enumerate() {
            feed(i as u64);
            feed(spk as u64);
            feed(split as u64);
        }
        hash
    }
}

/// Parameters of the synthetic entangled-attribute generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Rows to generate.
    pub n: usize,
    /// Feature dimension.
    pub f: usize,
    /// Emotion classes.
    pub e: usize,
    /// Speakers.
    pub s: usize,
    pub emotion_strength: f64,
    pub identity_strength: f64,
    pub nuisance_dim: usize,
    /// Coupling between emotion and speaker factors in [0, 1].
    pub cross_leak: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 6000,
            f: 64,
            e: 5,
            s: 40,
            emotion_strength: 1.0,
            identity_strength: 1.0,
            nuisance_dim: 8,
            cross_leak: 0.5,
            noise_sigma: 0.1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.f == 0 {
            return Err(Error::Validation(format!(
                "sizes must be positive: n={}, f={}",
                self.n, self.f
            )));
        }
        if self.e < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 emotion classes, got {}",
                self.e
            )));
        }
        if self.s < 3 {
            return Err(Error::Validation(format!(
                "cannot form disjoint train/dev/test splits with {} speakers; need at least 3",
                self.s
            )));
        }
        if self.emotion_strength <= 0.0 || self.identity_strength <= 0.0 {
            return Err(Error::Validation(
                "factor strengths must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cross_leak) {
            return Err(Error::Validation(format!(
                "cross_leak must lie in [0,1], got {}",
                self.cross_leak
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Validation("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn class_priors(&self) -> Vec<f64> {
        if self.e == FIVE_CLASS_PRIORS.len() {
            FIVE_CLASS_PRIORS.to_vec()
        } else {
            vec![1.0 / self.e as f64; self.e]
        }
    }
}

/// Frozen world of a synthetic corpus: factor embeddings, mixing matrix,
/// and the per-row draws. Pure function of the config.
struct SynthWorld {
    mixing: Vec<f64>, // f x factor_dim, row-major
    factor_dim: usize,
    speaker_factors: Vec<Vec<f64>>,      // s x SPEAKER_FACTOR_DIM
    speaker_into_emotion: Vec<Vec<f64>>, // s x e, scaled by cross_leak
    emotion_into_speaker: Vec<Vec<f64>>, // e x SPEAKER_FACTOR_DIM, scaled by cross_leak
    emotions: Vec<usize>,
    speakers: Vec<usize>,
    nuisance: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FactorView {
    Full,
    EmotionOnly,
}

impl SynthWorld {
    fn build(cfg: &SynthConfig) -> SynthWorld {
        let factor_dim = cfg.e + SPEAKER_FACTOR_DIM + cfg.nuisance_dim;

        let mut world_rng = rng::stream(cfg.seed, "synth-world");
        let speaker_factors: Vec<Vec<f64>> = (0..cfg.s)
            .map(|_| {
                (0..SPEAKER_FACTOR_DIM)
                    .map(|_| rng::normal(&mut world_rng))
                    .collect()
            })
            .collect();
        let speaker_into_emotion: Vec<Vec<f64>> = (0..cfg.s)
            .map(|_| {
                (0..cfg.e)
                    .map(|_| cfg.cross_leak * rng::normal(&mut world_rng))
                    .collect()
            })
            .collect();
        let emotion_into_speaker: Vec<Vec<f64>> = (0..cfg.e)
            .map(|_| {
                (0..SPEAKER_FACTOR_DIM)
                    .map(|_| cfg.cross_leak * rng::normal(&mut world_rng))
                    .collect()
            })
            .collect();
        let scale = 1.0 / (factor_dim as f64).sqrt();
        let mixing: Vec<f64> = (0..cfg.f * factor_dim)
            .map(|_| scale * rng::normal(&mut world_rng))
            .collect();

        let mut row_rng = rng::stream(cfg.seed, "synth-rows");
        let priors = cfg.class_priors();
        let mut emotions = Vec::with_capacity(cfg.n);
        let mut speakers = Vec::with_capacity(cfg.n);
        let mut nuisance = Vec::with_capacity(cfg.n);
        let mut noise = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let u: f64 = row_rng.random();
            let mut acc = 0.0;
            let mut class = cfg.e - 1;
            for (c, &p) in priors.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = c;
                    break;
                }
            }
            emotions.push(class);
            speakers.push(row_rng.random_range(0..cfg.s));
            nuisance.push(
                (0..cfg.nuisance_dim)
                    .map(|_| rng::normal(&mut row_rng))
                    .collect(),
            );
            noise.push((0..cfg.f).map(|_| rng::normal(&mut row_rng)).collect());
        }

        SynthWorld {
            mixing,
            factor_dim,
            speaker_factors,
            speaker_into_emotion,
            emotion_into_speaker,
            emotions,
            speakers,
            nuisance,
            noise,
        }
    }

    /// x = tanh(A u) + sigma * noise for the assembled factor vector u.
    fn feature_row(&self, cfg: &SynthConfig, row: usize, view: FactorView) -> Vec<f64> {
        let (e, s) = (self.emotions[row], self.speakers[row]);
        let mut u = vec![0.0; self.factor_dim];
        u[e] = cfg.emotion_strength;
        for (ui, c) in u[..cfg.e].iter_mut().zip(&self.speaker_into_emotion[s]) {
            *ui += c;
        }
        if view == FactorView::Full {
            let block = &mut u[cfg.e..cfg.e + SPEAKER_FACTOR_DIM];
            for ((ui, f), c) in block
                .iter_mut()
                .zip(&self.speaker_factors[s])
                .zip(&self.emotion_into_speaker[e])
            {
                *ui = cfg.identity_strength * f + c;
            }
            u[cfg.e + SPEAKER_FACTOR_DIM..].copy_from_slice(&self.nuisance[row]);
        }

        let mut x = Vec::with_capacity(cfg.f);
        for fi in 0..cfg.f {
            let a_row = &self.mixing[fi * self.factor_dim..(fi + 1) * self.factor_dim];
            let dot: f64 = a_row.iter().zip(&u).map(|(a, b)| a * b).sum();
            let mut v = dot.tanh();
            if view == FactorView::Full {
                v += cfg.noise_sigma * self.noise[row][fi];
            }
            x.push(v);
        }
        x
    }
}

/// Generates a speaker-disjoint synthetic dataset. Identical configs yield
/// bit-identical datasets.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let world = SynthWorld::build(cfg);

    let mut values = Vec::with_capacity(cfg.n * cfg.f);
    for row in 0..cfg.n {
        values.extend(world.feature_row(cfg, row, FactorView::Full));
    }
    let features = Tensor::from_vec(vec![cfg.n, cfg.f], values)?;

    let emotion_vocab: Vec<String> = (0..cfg.e).map(|c| format!("emo_{c}")).collect();
    let speaker_vocab: Vec<String> = (0..cfg.s).map(|s| format!("spk_{s}")).collect();

    // Speaker-to-split assignment; reshuffle deterministically until every
    // emotion class lands in every split (tiny corpora can miss).
    let n_dev = ((cfg.s as f64 * SPLIT_FRACTION_DEV).round() as usize).max(1);
    let n_test = ((cfg.s as f64 * SPLIT_FRACTION_TEST).round() as usize).max(1);
    if n_dev + n_test >= cfg.s {
        return Err(Error::Validation(format!(
            "{} speakers leave no train speakers after dev/test allocation",
            cfg.s
        )));
    }
    let mut last_err = None;
    for attempt in 0..100u32 {
        let mut order: Vec<usize> = (0..cfg.s).collect();
        let mut rng = rng::stream(cfg.seed, &format!("synth-splits-{attempt}"));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let split_of_speaker: Vec<Split> = {
            let mut m = vec![Split::Train; cfg.s];
            for (rank, &spk) in order.iter().enumerate() {
                m[spk] = if rank < n_dev {
                    Split::Dev
                } else if rank < n_dev + n_test {
                    Split::Test
                } else {
                    Split::Train
                };
            }
            m
        };
        let splits: Vec<Split> = world.speakers.iter().map(|&s| split_of_speaker[s]).collect();
        match LabeledDataset::new(
            features.clone(),
            world.emotions.clone(),
            world.speakers.clone(),
            splits,
            emotion_vocab.clone(),
            speaker_vocab.clone(),
        ) {
            Ok(ds) => return Ok(ds),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Validation("split assignment failed".into())))
}

/// Features rebuilt from the emotion factor block alone (speaker and
/// nuisance factors zeroed, no observation noise), with the speaker labels
/// of the same rows. At cross_leak 0 these rows carry no speaker
/// information; the leak term injects it.
pub fn emotion_factor_features(cfg: &SynthConfig) -> Result<(Tensor, Vec<usize>)> {
    cfg.validate()?;
    let world = SynthWorld::build(cfg);
    let mut values = Vec::with_capacity(cfg.n * cfg.f);
    for row in 0..cfg.n {
        values.extend(world.feature_row(cfg, row, FactorView::EmotionOnly));
    }
    Ok((
        Tensor::from_vec(vec![cfg.n, cfg.f], values)?,
        world.speakers,
    ))
}

// --- CSV schema --------------------------------------------------------------

/// Expectations applied while ingesting a dataset CSV.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    /// Require exactly this many feature columns when set.
    pub expected_features: Option<usize>,
}

/// Reads a dataset from `feature_0,...,feature_{F-1},emotion,speaker,split`.
///
/// Label vocabularies are built in first-appearance order. Split
/// disjointness and class coverage are enforced by the dataset constructor.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = headers.len();
    if cols < 4 {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected at least one feature column plus emotion,speaker,split; got {cols} columns"
            ),
        });
    }
    let f = cols - 3;
    if let Some(expect) = schema.expected_features {
        if f != expect {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected {expect} feature columns, found {f}"),
            });
        }
    }
    for (i, name) in headers.iter().take(f).enumerate() {
        let expect = format!("feature_{i}");
        if name != expect {
            return Err(Error::Parse {
                line: 1,
                msg: format!("column {i} named {name:?}, expected {expect:?}"),
            });
        }
    }
    for (idx, expect) in [(f, "emotion"), (f + 1, "speaker"), (f + 2, "split")] {
        if &headers[idx] != expect {
            return Err(Error::Parse {
                line: 1,
                msg: format!("column {idx} named {:?}, expected {expect:?}", &headers[idx]),
            });
        }
    }

    let mut values = Vec::new();
    let mut emotion_labels = Vec::new();
    let mut speaker_labels = Vec::new();
    let mut splits = Vec::new();
    let mut emotion_vocab: Vec<String> = Vec::new();
    let mut speaker_vocab: Vec<String> = Vec::new();
    let mut emotion_index: HashMap<String, usize> = HashMap::new();
    let mut speaker_index: HashMap<String, usize> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != cols {
            return Err(Error::Parse {
                line,
                msg: format!("expected {cols} fields, found {}", record.len()),
            });
        }
        for i in 0..f {
            let field = &record[i];
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric feature_{i}: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature_{i}: {field:?}"),
                });
            }
            values.push(v);
        }
        let emotion = record[f].to_string();
        let speaker = record[f + 1].to_string();
        let split = Split::parse(&record[f + 2]).ok_or_else(|| Error::Parse {
            line,
            msg: format!(
                "unknown split tag {:?}; expected train, dev, or test",
                &record[f + 2]
            ),
        })?;

        let next_emotion = emotion_vocab.len();
        let e = *emotion_index.entry(emotion.clone()).or_insert_with(|| {
            emotion_vocab.push(emotion);
            next_emotion
        });
        let next_speaker = speaker_vocab.len();
        let s = *speaker_index.entry(speaker.clone()).or_insert_with(|| {
            speaker_vocab.push(speaker);
            next_speaker
        });
        emotion_labels.push(e);
        speaker_labels.push(s);
        splits.push(split);
    }

    let n = emotion_labels.len();
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "dataset has no rows".into(),
        });
    }
    let features = Tensor::from_vec(vec![n, f], values)?;
    LabeledDataset::new(
        features,
        emotion_labels,
        speaker_labels,
        splits,
        emotion_vocab,
        speaker_vocab,
    )
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or_default();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes the identical schema `ingest_csv` reads. Floats are printed with
/// the shortest representation that parses back bit-exactly.
pub fn export_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let f = ds.feature_dim();
    let mut out = String::new();
    for i in 0..f {
        let _ = write!(out, "feature_{i},");
    }
    out.push_str("emotion,speaker,split\n");
    for r in 0..ds.len() {
        for v in ds.features().row(r) {
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
