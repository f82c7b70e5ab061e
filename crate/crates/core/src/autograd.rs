//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Values are computed eagerly when an operation is recorded. After
//! [`Tape::backward`], every node that depends on a leaf created with
//! `requires_grad = true` carries its gradient in [`Tensor::grad`].

use crate::error::{Error, Result};
use crate::nn::{self, Activation, ConvSpec};
use crate::tensor::{self, BinaryOp, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    Concat(Vec<Var>),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTransposed {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    SpaceToDepth {
        x: Var,
        r: usize,
    },
    GlobalAvgPool(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    BilinearUp2(Var),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let y = tensor::elementwise(op, self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Binary { op, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = tensor::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(parts.to_vec()), parts))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = nn::conv2d_with(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(y, Op::Conv { x, w, b, spec }, &inputs))
    }

    pub fn conv2d_transposed(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = nn::conv2d_transposed_with(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(y, Op::ConvTransposed { x, w, b, spec }, &inputs))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = nn::activation(self.value(x), kind)?;
        Ok(self.push(y, Op::Act { x, kind }, &[x]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = nn::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(y, Op::PixelShuffle { x, r }, &[x]))
    }

    pub fn space_to_depth(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = nn::space_to_depth(self.value(x), r)?;
        Ok(self.push(y, Op::SpaceToDepth { x, r }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = nn::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = nn::max_pool2(self.value(x))?;
        Ok(self.push(y, Op::MaxPool2 { x, argmax }, &[x]))
    }

    pub fn bilinear_up2(&mut self, x: Var) -> Result<Var> {
        let y = nn::bilinear_up2(self.value(x))?;
        Ok(self.push(y, Op::BilinearUp2(x), &[x]))
    }

    /// Propagates `seed` (the gradient of the objective with respect to
    /// `out`) back through the tape.
    pub fn backward(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.value(out).shape(),
                right: tensor::Shape::new(1, 1, 1, seed.len()),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            let mut emit: Vec<(Var, Vec<T>)> = Vec::new();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Binary { op, a, b } => {
                    let (ga, gb) = tensor::elementwise_backward(*op, val(*a), val(*b), &g);
                    emit.push((*a, ga));
                    emit.push((*b, gb));
                }
                Op::Concat(parts) => {
                    let channels: Vec<usize> = parts.iter().map(|p| val(*p).shape().c()).collect();
                    let split = tensor::split_channels(&g, self.nodes[i].value.shape(), &channels);
                    emit.extend(parts.iter().copied().zip(split));
                }
                Op::Conv { x, w, b, spec } => {
                    let need_params = needs(*w) || b.is_some_and(needs);
                    let cg = nn::conv2d_backward(val(*x), val(*w), spec, &g, needs(*x), need_params)?;
                    push_conv_grads(&mut emit, *x, *w, *b, cg);
                }
                Op::ConvTransposed { x, w, b, spec } => {
                    let need_params = needs(*w) || b.is_some_and(needs);
                    let cg = nn::conv2d_transposed_backward(val(*x), val(*w), spec, &g, needs(*x), need_params)?;
                    push_conv_grads(&mut emit, *x, *w, *b, cg);
                }
                Op::Act { x, kind } => {
                    emit.push((*x, nn::activation_backward(&self.nodes[i].value, *kind, &g)));
                }
                Op::PixelShuffle { x, r } => {
                    let gt = Tensor::from_parts(self.nodes[i].value.shape(), g.clone());
                    emit.push((*x, nn::space_to_depth(&gt, *r)?.into_data()));
                }
                Op::SpaceToDepth { x, r } => {
                    let gt = Tensor::from_parts(self.nodes[i].value.shape(), g.clone());
                    emit.push((*x, nn::pixel_shuffle(&gt, *r)?.into_data()));
                }
                Op::GlobalAvgPool(x) => {
                    emit.push((*x, nn::global_avg_pool_backward(val(*x).shape(), &g)));
                }
                Op::MaxPool2 { x, argmax } => {
                    emit.push((*x, nn::max_pool2_backward(val(*x).shape(), argmax, &g)));
                }
                Op::BilinearUp2(x) => {
                    emit.push((*x, nn::bilinear_up2_backward(val(*x).shape(), &g)));
                }
            }
            for (v, gv) in emit {
                if self.nodes[v.0].needs_grad {
                    accumulate(&mut grads[v.0], gv);
                }
            }
            self.nodes[i].value.grad = Some(g);
        }
        Ok(())
    }
}

fn push_conv_grads<T: Scalar>(emit: &mut Vec<(Var, Vec<T>)>, x: Var, w: Var, b: Option<Var>, cg: nn::ConvGrads<T>) {
    if let Some(gx) = cg.input {
        emit.push((x, gx));
    }
    if let Some(gw) = cg.weight {
        emit.push((w, gw));
    }
    if let (Some(b), Some(gb)) = (b, cg.bias) {
        emit.push((b, gb));
    }
}
