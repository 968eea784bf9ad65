//! Raw numeric kernels behind the graph ops.
//!
//! Each hot kernel comes in a sequential flavor and, with the `parallel`
//! feature (on by default), a rayon flavor that splits work across batch
//! rows. Row splitting keeps results bit-identical to the sequential path:
//! every output element is produced by one task with a fixed inner summation
//! order, so no floating-point reduction is reordered.
//!
//! The `kernels` criterion bench compares the two flavors directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps `f` over `0..n` preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

fn check_dense_shapes(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, i) = (x.rows(), x.cols());
    if w.shape().len() != 2 || w.shape()[0] != i {
        return Err(Error::dim("dense", x.shape(), w.shape()));
    }
    let o = w.shape()[1];
    if bias.len() != o {
        return Err(Error::dim("dense bias", w.shape(), bias.shape()));
    }
    Ok((b, i, o))
}

/// out[b,o] = sum_i x[b,i] * w[i,o] + bias[o], sequential reference.
pub fn dense_forward_seq(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, i, o) = check_dense_shapes(x, w, bias)?;
    let mut out = vec![0.0; b * o];
    for (bi, row) in out.chunks_mut(o).enumerate() {
        dense_row(x.row(bi), w.values(), bias.values(), i, row);
    }
    Tensor::from_vec(vec![b, o], out)
}

/// Same as [`dense_forward_seq`] but row-parallel.
#[cfg(feature = "parallel")]
pub fn dense_forward_par(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, i, o) = check_dense_shapes(x, w, bias)?;
    let mut out = vec![0.0; b * o];
    out.par_chunks_mut(o).enumerate().for_each(|(bi, row)| {
        dense_row(x.row(bi), w.values(), bias.values(), i, row);
    });
    Tensor::from_vec(vec![b, o], out)
}

/// Fully connected layer forward pass; dispatches on the `parallel` feature.
pub fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    #[cfg(feature = "parallel")]
    return dense_forward_par(x, w, bias);
    #[cfg(not(feature = "parallel"))]
    return dense_forward_seq(x, w, bias);
}

#[inline]
fn dense_row(x_row: &[f64], w: &[f64], bias: &[f64], in_dim: usize, out_row: &mut [f64]) {
    out_row.copy_from_slice(bias);
    for i in 0..in_dim {
        let xi = x_row[i];
        if xi == 0.0 {
            continue;
        }
        let wrow = &w[i * out_row.len()..(i + 1) * out_row.len()];
        for (o, wv) in out_row.iter_mut().zip(wrow) {
            *o += xi * wv;
        }
    }
}

/// Gradients of the dense layer: (d_input, d_weights, d_bias).
pub fn dense_backward_seq(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (b, i, o) = (x.rows(), x.cols(), w.shape()[1]);
    assert_eq!(dy.rows(), b, "dense backward batch mismatch");
    assert_eq!(dy.cols(), o, "dense backward width mismatch");

    let mut dx = vec![0.0; b * i];
    for (bi, dx_row) in dx.chunks_mut(i).enumerate() {
        dense_bwd_input_row(dy.row(bi), w.values(), o, dx_row);
    }

    let mut dw = vec![0.0; i * o];
    for (ii, dw_row) in dw.chunks_mut(o).enumerate() {
        dense_bwd_weight_row(x, dy, ii, dw_row);
    }

    let mut db = vec![0.0; o];
    for bi in 0..b {
        for (d, g) in db.iter_mut().zip(dy.row(bi)) {
            *d += g;
        }
    }

    (
        Tensor::from_vec(vec![b, i], dx).unwrap(),
        Tensor::from_vec(vec![i, o], dw).unwrap(),
        Tensor::from_vec(vec![o], db).unwrap(),
    )
}

/// Row-parallel dense backward; bit-identical to the sequential flavor.
#[cfg(feature = "parallel")]
pub fn dense_backward_par(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (b, i, o) = (x.rows(), x.cols(), w.shape()[1]);
    assert_eq!(dy.rows(), b, "dense backward batch mismatch");
    assert_eq!(dy.cols(), o, "dense backward width mismatch");

    let mut dx = vec![0.0; b * i];
    dx.par_chunks_mut(i).enumerate().for_each(|(bi, dx_row)| {
        dense_bwd_input_row(dy.row(bi), w.values(), o, dx_row);
    });

    let mut dw = vec![0.0; i * o];
    dw.par_chunks_mut(o).enumerate().for_each(|(ii, dw_row)| {
        dense_bwd_weight_row(x, dy, ii, dw_row);
    });

    let mut db = vec![0.0; o];
    for bi in 0..b {
        for (d, g) in db.iter_mut().zip(dy.row(bi)) {
            *d += g;
        }
    }

    (
        Tensor::from_vec(vec![b, i], dx).unwrap(),
        Tensor::from_vec(vec![i, o], dw).unwrap(),
        Tensor::from_vec(vec![o], db).unwrap(),
    )
}

pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    #[cfg(feature = "parallel")]
    return dense_backward_par(x, w, dy);
    #[cfg(not(feature = "parallel"))]
    return dense_backward_seq(x, w, dy);
}

#[inline]
fn dense_bwd_input_row(dy_row: &[f64], w: &[f64], o: usize, dx_row: &mut [f64]) {
    for (ii, d) in dx_row.iter_mut().enumerate() {
        let wrow = &w[ii * o..(ii + 1) * o];
        let mut acc = 0.0;
        for (g, wv) in dy_row.iter().zip(wrow) {
            acc += g * wv;
        }
        *d = acc;
    }
}

#[inline]
fn dense_bwd_weight_row(x: &Tensor, dy: &Tensor, ii: usize, dw_row: &mut [f64]) {
    for bi in 0..x.rows() {
        let xv = x.at(bi, ii);
        if xv == 0.0 {
            continue;
        }
        for (d, g) in dw_row.iter_mut().zip(dy.row(bi)) {
            *d += xv * g;
        }
    }
}

/// Elementwise max(0, v).
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// ReLU gradient: passes `dy` where the forward input was strictly positive.
/// The subgradient at exactly zero is zero.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let values = x
        .values()
        .iter()
        .zip(dy.values())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), values).unwrap()
}

/// Mean over the batch of -log softmax(logits)[label], with max-subtraction.
///
/// Returns the loss and the softmax probabilities (reused by the backward
/// pass: d_logits[b,c] = (p[b,c] - [c == label_b]) / B).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::dim("softmax_cross_entropy", logits.shape(), &[labels.len()]));
    }
    for &l in labels {
        if l >= c {
            return Err(Error::LabelRange {
                op: "softmax_cross_entropy",
                label: l,
                arity: c,
            });
        }
    }
    let mut probs = vec![0.0; b * c];
    let mut loss = 0.0;
    for bi in 0..b {
        let row = logits.row(bi);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let prow = &mut probs[bi * c..(bi + 1) * c];
        let mut denom = 0.0;
        for (p, &v) in prow.iter_mut().zip(row) {
            *p = (v - max).exp();
            denom += *p;
        }
        for p in prow.iter_mut() {
            *p /= denom;
        }
        loss -= prow[labels[bi]].ln();
    }
    Ok((loss / b as f64, Tensor::from_vec(vec![b, c], probs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn dense_identity_weights() {
        let x = t2(&[vec![1.0, 2.0]]);
        let w = t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_product() {
        // [1,1] x [[2,3],[4,5]] + [1,1] = [7,9]
        let x = t2(&[vec![1.0, 1.0]]);
        let w = t2(&[vec![2.0, 3.0], vec![4.0, 5.0]]);
        let b = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.values(), &[7.0, 9.0]);
    }

    #[test]
    fn dense_zero_input_passes_bias() {
        let x = t2(&[vec![0.0, 0.0]]);
        let w = t2(&[vec![3.0, -1.0], vec![2.0, 8.0]]);
        let b = Tensor::from_vec(vec![2], vec![5.0, 6.0]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.values(), &[5.0, 6.0]);
    }

    #[test]
    fn dense_shape_mismatch_names_both() {
        let x = t2(&[vec![1.0, 2.0, 3.0]]);
        let w = t2(&[vec![1.0], vec![1.0]]);
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let err = dense_forward(&x, &w, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).values(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_regions() {
        let up = Tensor::from_vec(vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        let x = Tensor::from_vec(vec![3], vec![3.0, -3.0, 0.0]).unwrap();
        let g = relu_backward(&x, &up);
        assert_eq!(g.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_near_certain() {
        let logits = t2(&[vec![10.0, -10.0]]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-4, "{loss}");
    }

    #[test]
    fn cross_entropy_uniform() {
        let logits = t2(&[vec![0.0, 0.0]]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_hand_oracle() {
        // -log(e^3 / (e^1 + e^2 + e^3)) computed directly.
        let expect = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let logits = t2(&[vec![1.0, 2.0, 3.0]]);
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = t2(&[vec![0.0, 0.0]]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[2]),
            Err(Error::LabelRange { .. })
        ));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn par_matches_seq_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_t = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            Tensor::from_vec(shape, v).unwrap()
        };
        let x = rand_t(vec![17, 13]);
        let w = rand_t(vec![13, 9]);
        let b = rand_t(vec![9]);
        let seq = dense_forward_seq(&x, &w, &b).unwrap();
        let par = dense_forward_par(&x, &w, &b).unwrap();
        assert_eq!(seq.values(), par.values());

        let dy = rand_t(vec![17, 9]);
        let (dx_s, dw_s, db_s) = dense_backward_seq(&x, &w, &dy);
        let (dx_p, dw_p, db_p) = dense_backward_par(&x, &w, &dy);
        assert_eq!(dx_s.values(), dx_p.values());
        assert_eq!(dw_s.values(), dw_p.values());
        assert_eq!(db_s.values(), db_p.values());
    }
}
