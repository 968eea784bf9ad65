//! Minimal reverse-mode automatic differentiation.
//!
//! A `Graph` is a flat tape of nodes, rebuilt for every training step
//! (define-by-run). Node creation order is a topological order by
//! construction, so the backward pass is a single reverse sweep that
//! accumulates gradients by summation whenever a node feeds several
//! consumers.
//!
//! The op set is deliberately fused and small: dense layers, ReLU,
//! elementwise product, gradient reversal, the reparameterization step,
//! and three scalar losses. Softmax and cross-entropy are one node for
//! numerical stability; the unfused softmax is not exposed.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node in one [`Graph`]. Never valid across graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    /// Elementwise product of two same-shape nodes.
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// Identity forward; backward multiplies the upstream gradient by -lambda.
    GradReverse {
        x: NodeId,
        lambda: f64,
    },
    /// z = mu + exp(log_var / 2) * eps with eps held constant.
    Reparam {
        mu: NodeId,
        log_var: NodeId,
        eps: Tensor,
        sigma: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor,
    },
    /// Mean over all elements of (pred - target)^2.
    MseLoss {
        pred: NodeId,
        target: Tensor,
    },
    /// Batch mean of -1/2 sum_i (1 + log_var - mu^2 - exp(log_var)).
    KlToStdNormal {
        mu: NodeId,
        log_var: NodeId,
    },
    /// Full sum of squares, for L2 regularization.
    SumSquares {
        x: NodeId,
    },
    /// Plain sum of all elements.
    SumElements {
        x: NodeId,
    },
    AddScalars {
        terms: Vec<NodeId>,
    },
    ScaleScalar {
        x: NodeId,
        c: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Per-step computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a tensor as a leaf. Parameters and constants look the same;
    /// the caller keeps the ids it wants gradients for.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Fully connected layer: x[BxI] * w[IxO] + b[O].
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let value = kernels::dense_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Dense { x, w, b }, value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = kernels::relu(self.value(x));
        self.push(Op::Relu { x }, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim("mul", va.shape(), vb.shape()));
        }
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(va.shape().to_vec(), values)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    /// Forward identity, backward scaled sign flip.
    pub fn gradient_reversal(&mut self, x: NodeId, lambda: f64) -> Result<NodeId> {
        if !lambda.is_finite() {
            return Err(Error::Validation(format!(
                "gradient reversal lambda must be finite, got {lambda}"
            )));
        }
        let value = self.value(x).clone();
        Ok(self.push(Op::GradReverse { x, lambda }, value))
    }

    /// z = mu + exp(log_var/2) * eps. Gradient flows to mu and log_var only.
    pub fn reparameterize(&mut self, mu: NodeId, log_var: NodeId, eps: Tensor) -> Result<NodeId> {
        let (vm, vl) = (self.value(mu), self.value(log_var));
        if vm.shape() != vl.shape() || vm.shape() != eps.shape() {
            return Err(Error::dim("reparameterize", vm.shape(), vl.shape()));
        }
        let sigma = vl.map(|v| (0.5 * v).exp());
        let values = vm
            .values()
            .iter()
            .zip(sigma.values())
            .zip(eps.values())
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let value = Tensor::from_vec(vm.shape().to_vec(), values)?;
        Ok(self.push(Op::Reparam { mu, log_var, eps, sigma }, value))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return Err(Error::dim("mse_loss", vp.shape(), target.shape()));
        }
        let n = vp.len() as f64;
        let loss = vp
            .values()
            .iter()
            .zip(target.values())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Op::MseLoss {
                pred,
                target: target.clone(),
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn kl_to_std_normal(&mut self, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
        let (vm, vl) = (self.value(mu), self.value(log_var));
        if vm.shape() != vl.shape() {
            return Err(Error::dim("kl_to_std_normal", vm.shape(), vl.shape()));
        }
        let batch = vm.rows() as f64;
        let sum: f64 = vm
            .values()
            .iter()
            .zip(vl.values())
            .map(|(&m, &l)| -0.5 * (1.0 + l - m * m - l.exp()))
            .sum();
        // Non-negative analytically; clamp shields the reported value from
        // rounding at the mu=0, log_var=0 fixed point where the true
        // gradients vanish anyway.
        let loss = (sum / batch).max(0.0);
        Ok(self.push(Op::KlToStdNormal { mu, log_var }, Tensor::scalar(loss)))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).values().iter().map(|v| v * v).sum();
        self.push(Op::SumSquares { x }, Tensor::scalar(s))
    }

    pub fn sum_elements(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).values().iter().sum();
        self.push(Op::SumElements { x }, Tensor::scalar(s))
    }

    pub fn add_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let mut total = 0.0;
        for &t in terms {
            let v = self.value(t);
            if !v.is_scalar() {
                return Err(Error::Validation(format!(
                    "add_scalars term has shape {:?}",
                    v.shape()
                )));
            }
            total += v.item();
        }
        Ok(self.push(
            Op::AddScalars {
                terms: terms.to_vec(),
            },
            Tensor::scalar(total),
        ))
    }

    pub fn scale_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(x);
        if !v.is_scalar() {
            return Err(Error::Validation(format!(
                "scale_scalar on shape {:?}",
                v.shape()
            )));
        }
        let value = Tensor::scalar(v.item() * c);
        Ok(self.push(Op::ScaleScalar { x, c }, value))
    }

    /// Reverse sweep from a scalar root. Gradients of every node are
    /// accumulated; fetch the ones you care about from the returned map.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Validation(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let accumulate = |grads: &mut [Option<Tensor>], id: NodeId, g: Tensor| match &mut grads
            [id.0]
        {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = kernels::dense_backward(self.value(*x), self.value(*w), dy);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Relu { x } => {
                accumulate(grads, *x, kernels::relu_backward(self.value(*x), dy));
            }
            Op::Mul { a, b } => {
                let da = ew_mul(dy, self.value(*b));
                let db = ew_mul(dy, self.value(*a));
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::GradReverse { x, lambda } => {
                accumulate(grads, *x, dy.map(|g| -lambda * g));
            }
            Op::Reparam {
                mu,
                log_var,
                eps,
                sigma,
            } => {
                accumulate(grads, *mu, dy.clone());
                let dlv_values = dy
                    .values()
                    .iter()
                    .zip(eps.values())
                    .zip(sigma.values())
                    .map(|((&g, &e), &s)| g * e * 0.5 * s)
                    .collect();
                let dlv = Tensor::from_vec(dy.shape().to_vec(), dlv_values).unwrap();
                accumulate(grads, *log_var, dlv);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let up = dy.item();
                let (b, c) = (probs.rows(), probs.cols());
                let mut dl = probs.values().to_vec();
                for (bi, &label) in labels.iter().enumerate() {
                    dl[bi * c + label] -= 1.0;
                }
                let scale = up / b as f64;
                for v in &mut dl {
                    *v *= scale;
                }
                accumulate(grads, *logits, Tensor::from_vec(vec![b, c], dl).unwrap());
            }
            Op::MseLoss { pred, target } => {
                let up = dy.item();
                let vp = self.value(*pred);
                let scale = 2.0 * up / vp.len() as f64;
                let dv = vp
                    .values()
                    .iter()
                    .zip(target.values())
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                accumulate(
                    grads,
                    *pred,
                    Tensor::from_vec(vp.shape().to_vec(), dv).unwrap(),
                );
            }
            Op::KlToStdNormal { mu, log_var } => {
                let up = dy.item();
                let (vm, vl) = (self.value(*mu), self.value(*log_var));
                let batch = vm.rows() as f64;
                let dmu = vm.map(|m| up * m / batch);
                let dlv = vl.map(|l| up * (l.exp() - 1.0) / (2.0 * batch));
                accumulate(grads, *mu, dmu);
                accumulate(grads, *log_var, dlv);
            }
            Op::SumSquares { x } => {
                let up = dy.item();
                accumulate(grads, *x, self.value(*x).map(|v| 2.0 * v * up));
            }
            Op::SumElements { x } => {
                let up = dy.item();
                accumulate(grads, *x, self.value(*x).map(|_| up));
            }
            Op::AddScalars { terms } => {
                for &t in terms {
                    accumulate(grads, t, dy.clone());
                }
            }
            Op::ScaleScalar { x, c } => {
                accumulate(grads, *x, Tensor::scalar(dy.item() * c));
            }
        }
    }
}

fn ew_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x * y)
        .collect();
    Tensor::from_vec(a.shape().to_vec(), values).unwrap()
}

/// Gradient map produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a node, or zeros when it never received one.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}
