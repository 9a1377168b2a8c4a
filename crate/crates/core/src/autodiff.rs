//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append immutable nodes and return a [`Var`] handle; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients for every node that
//! depends on a trainable leaf.

use crate::error::{shape_err, Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    UpsampleNearest {
        input: Var,
        factor: usize,
    },
    CrossEntropy {
        logits: Var,
        target: Mask,
    },
    /// Σ w_i · x_i over scalar nodes.
    WeightedSum(Vec<(Var, T)>),
    /// Σ x ⊙ c for a constant tensor c; reduces any tensor to a scalar.
    Contract {
        input: Var,
        coeffs: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax_channel",
            Op::Concat(_) => "concat_channels",
            Op::UpsampleNearest { .. } => "upsample_nearest",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::WeightedSum(_) => "weighted_sum",
            Op::Contract { .. } => "contract",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Registers a constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &[input, weight, bias],
        )
    }

    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = ops::conv_transpose2d(self.value(input), self.value(weight), self.value(bias), stride)?;
        self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
            },
            &[input, weight, bias],
        )
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = ops::maxpool2d(self.value(input), window, stride)?;
        self.push(out, Op::MaxPool { input, argmax }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu(input), &[input])
    }

    pub fn softmax_channel(&mut self, input: Var) -> Result<Var> {
        let out = ops::softmax_channel(self.value(input))?;
        self.push(out, Op::Softmax(input), &[input])
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&values)?;
        self.push(out, Op::Concat(inputs.to_vec()), inputs)
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_nearest(self.value(input), factor)?;
        self.push(out, Op::UpsampleNearest { input, factor }, &[input])
    }

    /// Mean cross-entropy of `logits` against a class-index mask; see
    /// [`ops::cross_entropy`].
    pub fn cross_entropy(&mut self, logits: Var, target: &Mask) -> Result<Var> {
        let loss = ops::cross_entropy(self.value(logits), target)?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target: target.clone(),
            },
            &[logits],
        )
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(shape_err!("weighted_sum of zero terms"));
        }
        let mut total = T::zero();
        for &(v, w) in terms {
            total += w * self.value(v).item()?;
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), &parents)
    }

    /// Scalar `Σ input ⊙ coeffs`.
    pub fn contract(&mut self, input: Var, coeffs: Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != coeffs.shape() {
            return Err(shape_err!(
                "contract coefficients {:?} do not match input {:?}",
                coeffs.shape(),
                x.shape()
            ));
        }
        let total = x.data().iter().zip(coeffs.data()).map(|(&a, &b)| a * b).sum();
        self.push(Tensor::scalar(total), Op::Contract { input, coeffs }, &[input])
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (parent, pg) in self.node_backward(node, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let trainable = self
            .nodes
            .iter()
            .map(|n| n.requires_grad && matches!(n.op, Op::Leaf))
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            trainable,
        })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        match &node.op {
            Op::Leaf => Vec::new(),
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (gx, gw, gb) =
                    ops::conv2d_backward(self.value(input), self.value(weight), g, stride, padding);
                vec![(input, gx), (weight, gw), (bias, gb)]
            }
            &Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (gx, gw, gb) =
                    ops::conv_transpose2d_backward(self.value(input), self.value(weight), g, stride);
                vec![(input, gx), (weight, gw), (bias, gb)]
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = Tensor::zeros(self.value(*input).shape());
                let out = gx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    out[src] += gv;
                }
                vec![(*input, gx)]
            }
            &Op::Relu(input) => {
                let x = self.value(input);
                let gx = Tensor::new(
                    x.shape().to_vec(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                )
                .expect("same shape");
                vec![(input, gx)]
            }
            &Op::Softmax(input) => vec![(input, ops::softmax_channel_backward(&node.value, g))],
            Op::Concat(inputs) => {
                let channels: Vec<usize> = inputs.iter().map(|&v| self.value(v).shape()[1]).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(ops::split_channels(g, &channels))
                    .collect()
            }
            &Op::UpsampleNearest { input, factor } => {
                let gx = ops::upsample_nearest_backward(g, factor, self.value(input).shape());
                vec![(input, gx)]
            }
            Op::CrossEntropy { logits, target } => {
                let gv = g.data()[0];
                vec![(*logits, ops::cross_entropy_backward(self.value(*logits), target, gv))]
            }
            Op::WeightedSum(terms) => {
                let gv = g.data()[0];
                terms
                    .iter()
                    .map(|&(v, w)| (v, Tensor::full(self.value(v).shape(), gv * w)))
                    .collect()
            }
            Op::Contract { input, coeffs } => {
                let gv = g.data()[0];
                vec![(*input, coeffs.map(|c| c * gv))]
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    trainable: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a trainable leaf. Leaves the loss
    /// does not depend on get an all-zero gradient.
    pub fn wrt(&self, v: Var) -> Result<Tensor<T>> {
        if !self.trainable.get(v.0).copied().unwrap_or(false) {
            return Err(Error::Usage(format!(
                "node {} is not a trainable leaf",
                v.0
            )));
        }
        Ok(self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[1, 1, 2, 2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[1, 1, 2, 2], 1.0));
        let unused = tape.param(Tensor::full(&[3], 7.0));
        let loss = tape.contract(x, Tensor::full(&[1, 1, 2, 2], 2.0)).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(unused).unwrap().data(), &[0.0; 3]);
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn constants_are_not_differentiable() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let loss = tape.contract(c, Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert!(!tape.requires_grad(loss));
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(c).is_err());
    }

    #[test]
    fn binary_cross_entropy_gradient_at_zero() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(Tensor::zeros(&[1, 1, 2, 2]));
        let loss = tape.cross_entropy(z, &Mask::new(1, 2, 2, vec![1; 4]).unwrap()).unwrap();
        let g = tape.backward(loss).unwrap().wrt(z).unwrap();
        // d/dz of the mean: (sigmoid(0) - 1) / 4
        for &v in g.data() {
            assert!((v - (-0.5 / 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn maxpool_tie_gradient_goes_to_first() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[1, 1, 2, 2], 3.0));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        let loss = tape.contract(y, Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        let g = tape.backward(loss).unwrap().wrt(x).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1], f64::MAX));
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 4.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::NonFinite("conv2d"))));
    }
}
