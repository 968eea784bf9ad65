//! Weighted f-score, equal error rate, verification trials, and probes.
//!
//! Probes are small classifiers trained on frozen (possibly masked) latents;
//! their test-split performance measures how much attribute information the
//! representation still carries. Emotion probes report weighted f-score.
//! Speaker probes are trained to identify train-split speakers, then their
//! hidden-layer embeddings score cosine verification trials between test
//! speakers, reported as equal error rate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::Mlp;
use crate::rng;
use crate::tensor::Tensor;

/// Per-class precision, recall, F1, and support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPrf {
    pub class_index: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Metric bundle serialized as JSON. Fields are present when the evaluation
/// that produces them ran: weighted f-score and per-class rows for emotion,
/// EER with its threshold and trial count for verification.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub weighted_f_score: Option<f64>,
    pub eer: Option<f64>,
    pub threshold_at_eer: Option<f64>,
    pub trial_count: Option<usize>,
    pub per_class: Vec<ClassPrf>,
}

/// Per-class F1 weighted by true-class support.
pub fn weighted_f_score(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    Ok(per_class_prf(predictions, labels, num_classes)?
        .iter()
        .map(|c| c.support as f64 * c.f1)
        .sum::<f64>()
        / labels.len() as f64)
}

/// Confusion-matrix statistics behind the weighted f-score. F1 of a class
/// with no true and no predicted members is defined as 0.
pub fn per_class_prf(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<ClassPrf>> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Validation(format!(
            "got {} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    for &v in predictions.iter().chain(labels) {
        if v >= num_classes {
            return Err(Error::LabelRange {
                op: "weighted_f_score",
                label: v,
                arity: num_classes,
            });
        }
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fneg[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassPrf {
                class_index: c,
                precision,
                recall,
                f1,
                support: tp[c] + fneg[c],
            }
        })
        .collect())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Inner product over norms; zero vectors score 0 by convention.
pub fn cosine_score(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("cosine_score", a.shape(), b.shape()));
    }
    Ok(cosine(a.values(), b.values()))
}

/// Cosine between two rows of one embedding matrix.
pub fn cosine_score_rows(embeddings: &Tensor, a: usize, b: usize) -> f64 {
    cosine(embeddings.row(a), embeddings.row(b))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// One verification trial over borrowed embedding rows.
#[derive(Debug, Clone, Copy)]
pub struct VerificationTrial<'a> {
    pub embedding_a: &'a [f64],
    pub embedding_b: &'a [f64],
    pub is_same_speaker: bool,
}

/// A trial after scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTrial {
    pub score: f64,
    pub is_same_speaker: bool,
}

/// Seeded balanced sampling of same/different-speaker pairs, no self-pairs,
/// capped at `max_trials` with |#same - #different| <= 1.
pub fn build_trials<'a>(
    embeddings: &'a Tensor,
    speaker_labels: &[usize],
    max_trials: usize,
    seed: u64,
) -> Result<Vec<VerificationTrial<'a>>> {
    let pairs = build_trial_pairs(speaker_labels, max_trials, seed)?;
    if embeddings.rows() != speaker_labels.len() {
        return Err(Error::dim(
            "build_trials",
            embeddings.shape(),
            &[speaker_labels.len()],
        ));
    }
    Ok(pairs
        .into_iter()
        .map(|(a, b, same)| VerificationTrial {
            embedding_a: embeddings.row(a),
            embedding_b: embeddings.row(b),
            is_same_speaker: same,
        })
        .collect())
}

/// Index-level trial sampling; reusable when embeddings are not yet computed.
pub fn build_trial_pairs(
    speaker_labels: &[usize],
    max_trials: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, bool)>> {
    let n = speaker_labels.len();
    let distinct: std::collections::BTreeSet<usize> = speaker_labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Validation(format!(
            "verification trials need at least 2 speakers, found {}",
            distinct.len()
        )));
    }
    if max_trials == 0 {
        return Err(Error::Validation("max_trials must be positive".into()));
    }

    let target_same = max_trials / 2 + max_trials % 2;
    let target_diff = max_trials / 2;
    let mut rng = rng::stream(seed, "trials");

    let mut same = Vec::new();
    let mut diff = Vec::new();
    if n <= 1500 {
        // Small pool: enumerate everything, shuffle, truncate.
        for a in 0..n {
            for b in a + 1..n {
                if speaker_labels[a] == speaker_labels[b] {
                    same.push((a, b));
                } else {
                    diff.push((a, b));
                }
            }
        }
        shuffle(&mut same, &mut rng);
        shuffle(&mut diff, &mut rng);
        same.truncate(target_same);
        diff.truncate(target_diff);
    } else {
        let mut seen = std::collections::HashSet::new();
        let budget = 200 * max_trials;
        let mut attempts = 0usize;
        while (same.len() < target_same || diff.len() < target_diff) && attempts < budget {
            attempts += 1;
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            let is_same = speaker_labels[a] == speaker_labels[b];
            let bucket = if is_same { &mut same } else { &mut diff };
            let want = if is_same { target_same } else { target_diff };
            if bucket.len() < want && seen.insert(key) {
                bucket.push(key);
            }
        }
    }

    if same.is_empty() {
        return Err(Error::Validation(
            "no speaker has two utterances; cannot form same-speaker trials".into(),
        ));
    }
    // Keep the 1:1 balance when one pool ran short.
    let keep_same = same.len().min(diff.len() + 1);
    let keep_diff = diff.len().min(keep_same + 1).min(same.len() + 1);
    same.truncate(keep_same);
    diff.truncate(keep_diff);

    let mut out: Vec<(usize, usize, bool)> =
        same.into_iter().map(|(a, b)| (a, b, true)).collect();
    out.extend(diff.into_iter().map(|(a, b)| (a, b, false)));
    Ok(out)
}

fn shuffle<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Cosine-scores every trial; row-parallel, assembled in trial order.
pub fn score_trials(trials: &[VerificationTrial<'_>]) -> Vec<ScoredTrial> {
    kernels::map_indexed(trials.len(), |i| {
        let t = &trials[i];
        ScoredTrial {
            score: cosine(t.embedding_a, t.embedding_b),
            is_same_speaker: t.is_same_speaker,
        }
    })
}

/// Equal error rate and its threshold.
///
/// FAR(t) is the fraction of different-speaker trials scoring >= t; FRR(t)
/// the fraction of same-speaker trials scoring < t. The sweep visits every
/// distinct score ascending and linearly interpolates the FAR = FRR
/// crossing between the bracketing thresholds.
pub fn equal_error_rate(trials: &[ScoredTrial]) -> Result<(f64, f64)> {
    let total_same = trials.iter().filter(|t| t.is_same_speaker).count();
    let total_diff = trials.len() - total_same;
    if total_same == 0 || total_diff == 0 {
        return Err(Error::Validation(format!(
            "equal error rate needs both trial kinds: {total_same} same, {total_diff} different"
        )));
    }

    let mut sorted: Vec<&ScoredTrial> = trials.iter().collect();
    sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"));

    // Cumulative counts strictly below each distinct threshold.
    let mut points: Vec<(f64, f64, f64)> = Vec::new(); // (threshold, far, frr)
    let mut same_below = 0usize;
    let mut diff_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        let far = (total_diff - diff_below) as f64 / total_diff as f64;
        let frr = same_below as f64 / total_same as f64;
        points.push((t, far, frr));
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].is_same_speaker {
                same_below += 1;
            } else {
                diff_below += 1;
            }
            i += 1;
        }
    }
    // Virtual end point above every score: FAR 0, FRR 1.
    let last = points.last().unwrap().0;
    points.push((last + 1.0, 0.0, 1.0));

    for w in points.windows(2) {
        let (t1, f1, r1) = w[0];
        let (t2, f2, r2) = w[1];
        let d1 = f1 - r1;
        let d2 = f2 - r2;
        if d1 == 0.0 {
            return Ok((f1, t1));
        }
        if d1 > 0.0 && d2 <= 0.0 {
            let alpha = d1 / (d1 - d2);
            let eer = f1 + alpha * (f2 - f1);
            let threshold = t1 + alpha * (t2 - t1);
            return Ok((eer, threshold));
        }
    }
    // FAR - FRR starts at 1 and ends at -1, so a crossing always exists.
    unreachable!("no FAR/FRR crossing found")
}

// --- Probes ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    Emotion,
    Speaker,
}

/// Probe training budget and trial cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub max_trials: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 30,
            patience: 5,
            max_trials: 20_000,
        }
    }
}

impl ProbeConfig {
    /// Reduced budget for the per-step probes of the masking sweep.
    pub fn reduced() -> Self {
        ProbeConfig {
            max_epochs: 20,
            patience: 5,
            ..ProbeConfig::default()
        }
    }
}

/// Trained probe plus its headline metric.
pub struct ProbeResult {
    pub probe: Mlp,
    /// Weighted f-score for emotion probes, EER for speaker probes.
    pub metric: f64,
    pub report: MetricReport,
}

/// Trains a probe on the train-split rows of `latents` and measures it on
/// the test split. Latents are frozen inputs; no gradient reaches whatever
/// produced them.
pub fn train_probe(
    latents: &Tensor,
    ds: &LabeledDataset,
    task: ProbeTask,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if latents.rows() != ds.len() {
        return Err(Error::dim("train_probe", latents.shape(), &[ds.len()]));
    }
    let train_rows = ds.rows_in(Split::Train);
    let test_rows = ds.rows_in(Split::Test);

    match task {
        ProbeTask::Emotion => {
            let labels: Vec<usize> = train_rows.iter().map(|&r| ds.emotion_labels()[r]).collect();
            let probe = fit_classifier(
                latents,
                &train_rows,
                &labels,
                ds.num_emotions(),
                cfg,
                seed,
            )?;
            let test_x = gather(latents, &test_rows);
            let logits = probe.forward(&test_x)?;
            let preds = crate::model::argmax_rows(&logits);
            let truth: Vec<usize> = test_rows.iter().map(|&r| ds.emotion_labels()[r]).collect();
            let per_class = per_class_prf(&preds, &truth, ds.num_emotions())?;
            let wfs = per_class
                .iter()
                .map(|c| c.support as f64 * c.f1)
                .sum::<f64>()
                / truth.len() as f64;
            Ok(ProbeResult {
                probe,
                metric: wfs,
                report: MetricReport {
                    weighted_f_score: Some(wfs),
                    per_class,
                    ..MetricReport::default()
                },
            })
        }
        ProbeTask::Speaker => {
            // Identification over train speakers only; test speakers are
            // disjoint and enter solely through verification trials.
            let mut vocab: Vec<usize> = Vec::new();
            let mut labels = Vec::with_capacity(train_rows.len());
            for &r in &train_rows {
                let spk = ds.speaker_labels()[r];
                let idx = match vocab.iter().position(|&v| v == spk) {
                    Some(i) => i,
                    None => {
                        vocab.push(spk);
                        vocab.len() - 1
                    }
                };
                labels.push(idx);
            }
            let probe = fit_classifier(latents, &train_rows, &labels, vocab.len(), cfg, seed)?;

            let test_x = gather(latents, &test_rows);
            let embeddings = probe.penultimate(&test_x)?;
            let test_speakers: Vec<usize> =
                test_rows.iter().map(|&r| ds.speaker_labels()[r]).collect();
            let trials = build_trials(&embeddings, &test_speakers, cfg.max_trials, seed)?;
            let scored = score_trials(&trials);
            let (eer, threshold) = equal_error_rate(&scored)?;
            Ok(ProbeResult {
                probe,
                metric: eer,
                report: MetricReport {
                    eer: Some(eer),
                    threshold_at_eer: Some(threshold),
                    trial_count: Some(scored.len()),
                    ..MetricReport::default()
                },
            })
        }
    }
}

fn gather(latents: &Tensor, rows: &[usize]) -> Tensor {
    let d = latents.cols();
    let mut values = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        values.extend_from_slice(latents.row(r));
    }
    Tensor::from_vec(vec![rows.len(), d], values).unwrap()
}

/// Two-layer softmax classifier fit with Adam. Early stopping watches the
/// cross-entropy of an internal holdout carved from the training rows
/// (every fifth row), which works even when label vocabularies differ
/// between dataset splits.
pub fn fit_classifier(
    features: &Tensor,
    rows: &[usize],
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Mlp> {
    use crate::autodiff::Graph;
    use crate::optim::Adam;

    if rows.len() != labels.len() || rows.is_empty() {
        return Err(Error::Validation(format!(
            "classifier got {} rows and {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes < 2 || distinct.len() < 2 {
        return Err(Error::Validation(format!(
            "degenerate labels: {} distinct classes of {classes}",
            distinct.len()
        )));
    }

    let mut fit_idx = Vec::new();
    let mut hold_idx = Vec::new();
    for (k, (&r, &l)) in rows.iter().zip(labels).enumerate() {
        if k % 5 == 4 {
            hold_idx.push((r, l));
        } else {
            fit_idx.push((r, l));
        }
    }
    if hold_idx.is_empty() {
        hold_idx = fit_idx.clone();
    }
    let hold_x = gather(features, &hold_idx.iter().map(|&(r, _)| r).collect::<Vec<_>>());
    let hold_y: Vec<usize> = hold_idx.iter().map(|&(_, l)| l).collect();

    let dim = features.cols();
    let mut init_rng = rng::stream(seed, "probe-init");
    let mut mlp = Mlp::init(&mut init_rng, &[dim, cfg.hidden, classes]);
    let mut adam = Adam::new(&[
        vec![dim, cfg.hidden],
        vec![cfg.hidden],
        vec![cfg.hidden, classes],
        vec![classes],
    ]);
    let mut shuffle_rng = rng::stream(seed, "probe-shuffle");

    let mut best: Option<(f64, Mlp)> = None;
    let mut stale = 0usize;
    for _epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..fit_idx.len()).collect();
        shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_rows: Vec<usize> = chunk.iter().map(|&k| fit_idx[k].0).collect();
            let batch_y: Vec<usize> = chunk.iter().map(|&k| fit_idx[k].1).collect();
            let x = gather(features, &batch_rows);

            let mut g = Graph::new();
            let w1 = g.leaf(mlp.layers[0].w.clone());
            let b1 = g.leaf(mlp.layers[0].b.clone());
            let w2 = g.leaf(mlp.layers[1].w.clone());
            let b2 = g.leaf(mlp.layers[1].b.clone());
            let xin = g.leaf(x);
            let h = g.dense(xin, w1, b1)?;
            let hr = g.relu(h);
            let logits = g.dense(hr, w2, b2)?;
            let loss = g.softmax_cross_entropy(logits, &batch_y)?;
            let mut grads = g.backward(loss)?;

            let grad_list = [
                grads.take_or_zeros(w1, mlp.layers[0].w.shape()),
                grads.take_or_zeros(b1, mlp.layers[0].b.shape()),
                grads.take_or_zeros(w2, mlp.layers[1].w.shape()),
                grads.take_or_zeros(b2, mlp.layers[1].b.shape()),
            ];
            let [l1, l2] = &mut mlp.layers[..] else {
                unreachable!("probe is two layers")
            };
            let mut params = vec![
                ("w1".to_string(), &mut l1.w),
                ("b1".to_string(), &mut l1.b),
                ("w2".to_string(), &mut l2.w),
                ("b2".to_string(), &mut l2.b),
            ];
            adam.step(&mut params, &grad_list, cfg.learning_rate)?;
        }

        let logits = mlp.forward(&hold_x)?;
        let (hold_loss, _) = kernels::softmax_cross_entropy(&logits, &hold_y)?;
        if !hold_loss.is_finite() {
            return Err(Error::NonFinite {
                component: "probe holdout loss".into(),
                step: adam.step_count() as usize,
            });
        }
        match &best {
            Some((b, _)) if hold_loss >= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((hold_loss, mlp.clone()));
                stale = 0;
            }
        }
    }

    Ok(best.map(|(_, m)| m).unwrap_or(mlp))
}
