//! Monotone preserve-rate schedules and layered dropout.
//!
//! A schedule assigns each latent node a probability of surviving dropout,
//! monotone across the node index. Training applies fresh Bernoulli masks
//! per sample per step; inference scales activations by the preserve rates
//! instead, so the expected train-mode output equals the eval-mode output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Linear,
    Exponential,
}

/// Per-node preserve probabilities, monotone by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreserveRateSchedule {
    rates: Vec<f64>,
    direction: Direction,
    form: Form,
}

/// Bernoulli draws for one batch: `bits[b*width + i]` keeps node i of row b.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    bits: Vec<u8>,
    rows: usize,
    width: usize,
    /// RNG stream identifier the mask was drawn from.
    pub seed_provenance: String,
}

impl DropoutMask {
    pub fn bit(&self, row: usize, node: usize) -> u8 {
        self.bits[row * self.width + node]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Mask as a 0/1 tensor, the factor fed to the graph's elementwise product.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            vec![self.rows, self.width],
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .unwrap()
    }
}

/// Monotone interpolation between `p_max` and `p_min` over `width` nodes.
///
/// Decreasing schedules start at `p_max` (node 0) and end at `p_min`;
/// increasing schedules are the mirror. Endpoints are exact for both forms.
pub fn build_schedule(
    width: usize,
    p_max: f64,
    p_min: f64,
    direction: Direction,
    form: Form,
) -> Result<PreserveRateSchedule> {
    if width < 2 {
        return Err(Error::Validation(format!(
            "schedule needs at least 2 nodes, got {width}"
        )));
    }
    if !(0.0..=1.0).contains(&p_min) || !(0.0..=1.0).contains(&p_max) {
        return Err(Error::Validation(format!(
            "preserve rates must lie in [0,1], got p_max={p_max}, p_min={p_min}"
        )));
    }
    if p_min > p_max {
        return Err(Error::Validation(format!(
            "p_min {p_min} exceeds p_max {p_max}"
        )));
    }

    let steps = (width - 1) as f64;
    let rates: Vec<f64> = (0..width)
        .map(|i| {
            // Endpoints exact by construction, not by rounding luck.
            if i == 0 {
                return p_max;
            }
            if i == width - 1 {
                return p_min;
            }
            let t = i as f64 / steps; // 0 at the p_max end
            let high_to_low = match form {
                Form::Linear => p_max - (p_max - p_min) * t,
                Form::Exponential => {
                    // Geometric interpolation; limits cover zero endpoints.
                    if p_max == 0.0 {
                        0.0
                    } else if p_min == 0.0 {
                        if i == 0 {
                            p_max
                        } else {
                            0.0
                        }
                    } else {
                        p_max * (p_min / p_max).powf(t)
                    }
                }
            };
            high_to_low
        })
        .collect();

    // powf is not guaranteed monotone at the ulp level; pin the invariant.
    let mut prev = p_max;
    let rates: Vec<f64> = rates
        .into_iter()
        .map(|r| {
            let r = r.clamp(p_min, p_max).min(prev);
            prev = r;
            r
        })
        .collect();

    let rates = match direction {
        Direction::Decreasing => rates,
        Direction::Increasing => rates.into_iter().rev().collect(),
    };

    Ok(PreserveRateSchedule {
        rates,
        direction,
        form,
    })
}

impl PreserveRateSchedule {
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn width(&self) -> usize {
        self.rates.len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn form(&self) -> Form {
        self.form
    }
}

fn check_width(op: &'static str, x: &Tensor, schedule: &PreserveRateSchedule) -> Result<()> {
    if x.cols() != schedule.width() {
        return Err(Error::dim(op, x.shape(), &[schedule.width()]));
    }
    Ok(())
}

/// Train-mode layered dropout: x~[b,i] = m[b,i] * x[b,i] with
/// m[b,i] ~ Bernoulli(p_i), drawn fresh for every sample.
pub fn apply_dropout_train(
    x: &Tensor,
    schedule: &PreserveRateSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, DropoutMask)> {
    check_width("apply_dropout_train", x, schedule)?;
    let (rows, width) = (x.rows(), x.cols());
    let mut bits = vec![0u8; rows * width];
    for row_bits in bits.chunks_mut(width) {
        for (bit, &p) in row_bits.iter_mut().zip(schedule.rates()) {
            *bit = u8::from(rng.random::<f64>() < p);
        }
    }
    let mask = DropoutMask {
        bits,
        rows,
        width,
        seed_provenance: format!("chacha8 word_pos {}", rng.get_word_pos()),
    };
    let values = x
        .values()
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &m)| v * m as f64)
        .collect();
    Ok((Tensor::from_vec(vec![rows, width], values)?, mask))
}

/// Eval-mode scaling: out[b,i] = p_i * x[b,i].
///
/// Scaling the activations is equivalent to scaling the next layer's weight
/// rows by p, so the expectation contract holds for any downstream layer.
pub fn apply_dropout_eval(x: &Tensor, schedule: &PreserveRateSchedule) -> Result<Tensor> {
    check_width("apply_dropout_eval", x, schedule)?;
    let (rows, width) = (x.rows(), x.cols());
    let mut values = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for (v, p) in x.row(r).iter().zip(schedule.rates()) {
            values.push(v * p);
        }
    }
    Tensor::from_vec(vec![rows, width], values)
}

/// Broadcast of the preserve rates over a batch, for graph-side eval scaling.
pub fn rates_broadcast(schedule: &PreserveRateSchedule, rows: usize) -> Tensor {
    let width = schedule.width();
    let mut values = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        values.extend_from_slice(schedule.rates());
    }
    Tensor::from_vec(vec![rows, width], values).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn linear_decreasing_hand_values() {
        let s = build_schedule(4, 0.9, 0.1, Direction::Decreasing, Form::Linear).unwrap();
        let expect = [0.9, 0.9 - 0.8 / 3.0, 0.9 - 1.6 / 3.0, 0.1];
        for (a, e) in s.rates().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn degenerate_constant_schedule() {
        let s = build_schedule(3, 1.0, 1.0, Direction::Decreasing, Form::Linear).unwrap();
        assert_eq!(s.rates(), &[1.0, 1.0, 1.0]);
        let s = build_schedule(3, 1.0, 1.0, Direction::Increasing, Form::Exponential).unwrap();
        assert_eq!(s.rates(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_node_increasing_endpoints() {
        let s = build_schedule(2, 0.8, 0.2, Direction::Increasing, Form::Linear).unwrap();
        assert_eq!(s.rates(), &[0.2, 0.8]);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(build_schedule(1, 0.9, 0.1, Direction::Decreasing, Form::Linear).is_err());
        assert!(build_schedule(4, 0.1, 0.9, Direction::Decreasing, Form::Linear).is_err());
        assert!(build_schedule(4, 1.1, 0.1, Direction::Decreasing, Form::Linear).is_err());
    }

    #[test]
    fn exponential_endpoints_exact() {
        let s = build_schedule(5, 0.9, 0.1, Direction::Decreasing, Form::Exponential).unwrap();
        assert_eq!(s.rates()[0], 0.9);
        assert!((s.rates()[4] - 0.1).abs() < 1e-15);
        for w in s.rates().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn certain_preservation_is_identity() {
        let s = build_schedule(3, 1.0, 1.0, Direction::Decreasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let mut rng = stream(1, "dropout");
        let (out, mask) = apply_dropout_train(&x, &s, &mut rng).unwrap();
        assert_eq!(out.values(), x.values());
        assert!(mask.to_tensor().values().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn certain_drop_is_zero() {
        let s = build_schedule(3, 0.0, 0.0, Direction::Decreasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let mut rng = stream(1, "dropout");
        let (out, _) = apply_dropout_train(&x, &s, &mut rng).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn survival_rate_matches_bernoulli() {
        // p = [0.5, 0.5]: empirical survival over 10000 draws within 0.5 +/- 0.02.
        let s = build_schedule(2, 0.5, 0.5, Direction::Decreasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let mut rng = stream(99, "dropout");
        let mut kept = 0usize;
        let draws = 10_000;
        for _ in 0..draws {
            let (_, mask) = apply_dropout_train(&x, &s, &mut rng).unwrap();
            kept += (mask.bit(0, 0) + mask.bit(0, 1)) as usize;
        }
        let rate = kept as f64 / (2 * draws) as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn eval_scaling_hand_value() {
        let s = build_schedule(2, 1.0, 0.5, Direction::Decreasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap();
        let out = apply_dropout_eval(&x, &s).unwrap();
        assert_eq!(out.values(), &[2.0, 4.0 * 0.5]);
    }

    #[test]
    fn eval_all_ones_identity() {
        let s = build_schedule(4, 1.0, 1.0, Direction::Increasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(apply_dropout_eval(&x, &s).unwrap().values(), x.values());
    }

    #[test]
    fn width_mismatch_errors() {
        let s = build_schedule(3, 0.9, 0.1, Direction::Decreasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(apply_dropout_eval(&x, &s).is_err());
        let mut rng = stream(1, "dropout");
        assert!(apply_dropout_train(&x, &s, &mut rng).is_err());
    }

    #[test]
    fn identical_seed_identical_masks() {
        let s = build_schedule(8, 0.95, 0.05, Direction::Decreasing, Form::Linear).unwrap();
        let x = Tensor::from_rows(&[vec![1.0; 8], vec![1.0; 8]]).unwrap();
        let (a, am) = apply_dropout_train(&x, &s, &mut stream(5, "d")).unwrap();
        let (b, bm) = apply_dropout_train(&x, &s, &mut stream(5, "d")).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(am.to_tensor().values(), bm.to_tensor().values());
    }
}
