//! Probe behavior on representations with known information content, plus
//! the probe-verified properties of the synthetic generator.

use rand::Rng;

use lrvae::autodiff::Graph;
use lrvae::data::{emotion_factor_features, generate_synthetic, LabeledDataset, SynthConfig};
use lrvae::eval::{train_probe, ProbeConfig, ProbeTask};
use lrvae::optim::Adam;
use lrvae::rng::stream;
use lrvae::tensor::Tensor;

fn probe_dataset(e: usize, s: usize, n: usize, seed: u64) -> LabeledDataset {
    generate_synthetic(&SynthConfig {
        n,
        f: 16,
        e,
        s,
        nuisance_dim: 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick_probe() -> ProbeConfig {
    ProbeConfig {
        max_epochs: 15,
        patience: 4,
        max_trials: 4000,
        ..ProbeConfig::default()
    }
}

#[test]
fn one_hot_emotion_latents_give_perfect_wfs() {
    let ds = probe_dataset(3, 8, 900, 13);
    let mut values = vec![0.0; ds.len() * 3];
    for (r, &e) in ds.emotion_labels().iter().enumerate() {
        values[r * 3 + e] = 1.0;
    }
    let latents = Tensor::from_vec(vec![ds.len(), 3], values).unwrap();
    let result = train_probe(&latents, &ds, ProbeTask::Emotion, &quick_probe(), 1).unwrap();
    assert_eq!(result.metric, 1.0, "wfs {}", result.metric);
}

#[test]
fn noise_latents_collapse_to_majority() {
    // Five classes with the default imbalanced priors; pure-noise latents.
    let ds = probe_dataset(5, 10, 3000, 29);
    let mut rng = stream(55, "noise-latents");
    let latents = Tensor::from_vec(
        vec![ds.len(), 8],
        (0..ds.len() * 8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap();
    let result = train_probe(&latents, &ds, ProbeTask::Emotion, &quick_probe(), 2).unwrap();

    // Oracle: weighted f-score of always predicting the train-majority
    // class, computed on the test labels it will be scored against.
    let train_rows = ds.rows_in(lrvae::data::Split::Train);
    let mut counts = vec![0usize; ds.num_emotions()];
    for &r in &train_rows {
        counts[ds.emotion_labels()[r]] += 1;
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap();
    let test_rows = ds.rows_in(lrvae::data::Split::Test);
    let truth: Vec<usize> = test_rows.iter().map(|&r| ds.emotion_labels()[r]).collect();
    let all_majority = vec![majority; truth.len()];
    let oracle = lrvae::eval::weighted_f_score(&all_majority, &truth, ds.num_emotions()).unwrap();

    assert!(
        (result.metric - oracle).abs() <= 0.1,
        "probe wfs {} vs all-majority oracle {oracle}",
        result.metric
    );
}

#[test]
fn zero_latents_give_chance_eer() {
    let ds = probe_dataset(2, 12, 1200, 31);
    let latents = Tensor::zeros(vec![ds.len(), 8]);
    let result = train_probe(&latents, &ds, ProbeTask::Speaker, &quick_probe(), 3).unwrap();
    assert!(
        (result.metric - 0.5).abs() <= 0.05,
        "eer {} on zero latents",
        result.metric
    );
}

/// One-layer softmax regression, the weakest probe that can exist.
fn linear_probe_accuracy(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    seed: u64,
) -> f64 {
    let n = features.rows();
    let d = features.cols();
    let fit: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let held: Vec<usize> = (0..n).filter(|i| i % 2 == 1).collect();

    let mut w = Tensor::zeros(vec![d, classes]);
    let mut b = Tensor::zeros(vec![classes]);
    let mut adam = Adam::new(&[vec![d, classes], vec![classes]]);
    let mut shuffle_rng = stream(seed, "linear-probe");

    let gather = |rows: &[usize]| {
        let mut values = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            values.extend_from_slice(features.row(r));
        }
        Tensor::from_vec(vec![rows.len(), d], values).unwrap()
    };

    for _ in 0..30 {
        let mut order = fit.clone();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(64) {
            let x = gather(chunk);
            let y: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
            let mut g = Graph::new();
            let wi = g.leaf(w.clone());
            let bi = g.leaf(b.clone());
            let xi = g.leaf(x);
            let logits = g.dense(xi, wi, bi).unwrap();
            let loss = g.softmax_cross_entropy(logits, &y).unwrap();
            let mut grads = g.backward(loss).unwrap();
            let gl = [
                grads.take_or_zeros(wi, w.shape()),
                grads.take_or_zeros(bi, b.shape()),
            ];
            let mut params = vec![("w".to_string(), &mut w), ("b".to_string(), &mut b)];
            adam.step(&mut params, &gl, 0.05).unwrap();
        }
    }

    let x = gather(&held);
    let logits = lrvae::kernels::dense_forward(&x, &w, &b).unwrap();
    let preds = lrvae::model::argmax_rows(&logits);
    let hits = preds
        .iter()
        .zip(held.iter().map(|&r| labels[r]))
        .filter(|(p, l)| **p == *l)
        .count();
    hits as f64 / held.len() as f64
}

#[test]
fn linear_probe_recovers_emotion_from_raw_features() {
    let ds = probe_dataset(5, 10, 2000, 17);
    let acc = linear_probe_accuracy(ds.features(), ds.emotion_labels(), ds.num_emotions(), 1);
    let mut counts = vec![0usize; ds.num_emotions()];
    for &e in ds.emotion_labels() {
        counts[e] += 1;
    }
    let majority = *counts.iter().max().unwrap() as f64 / ds.len() as f64;
    assert!(
        acc > majority + 0.05,
        "linear probe accuracy {acc} vs majority baseline {majority}"
    );
}

#[test]
fn cross_leak_injects_speaker_information_monotonically() {
    // A speaker classifier trained on the emotion-factor-only features gets
    // better as the leak grows, on average over seeds.
    let mut means = Vec::new();
    for leak in [0.0, 0.5, 1.0] {
        let mut accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let cfg = SynthConfig {
                n: 1500,
                f: 16,
                e: 3,
                s: 6,
                cross_leak: leak,
                nuisance_dim: 4,
                seed,
                ..SynthConfig::default()
            };
            let (features, speakers) = emotion_factor_features(&cfg).unwrap();
            accs.push(linear_probe_accuracy(&features, &speakers, 6, seed));
        }
        means.push(accs.iter().sum::<f64>() / accs.len() as f64);
    }
    assert!(
        means[0] < means[1] && means[1] < means[2],
        "speaker accuracy not monotone in leak: {means:?}"
    );
    // At zero leak the emotion factor carries no speaker signal at all.
    assert!(means[0] < 0.25, "leak-free accuracy {} above chance-ish", means[0]);
}
