//! Layers with hand-written backward passes.
//!
//! Every forward returns what its backward needs; backward accumulates into
//! the parameter `grad` buffers and returns the gradient w.r.t. the input.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// A learnable tensor with its gradient accumulator and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Matrix", into = "Matrix")]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub moment1: Matrix,
    pub moment2: Matrix,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            moment1: Matrix::zeros(r, c),
            moment2: Matrix::zeros(r, c),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        if bound == 0.0 {
            return Self::zeros(rows, cols);
        }
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self::new(Matrix::from_fn(rows, cols, |_, _| dist.sample(rng)))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

impl From<Matrix> for Param {
    fn from(value: Matrix) -> Self {
        Param::new(value)
    }
}

impl From<Param> for Matrix {
    fn from(p: Param) -> Self {
        p.value
    }
}

/// Anything owning parameters the optimizer should update.
pub trait HasParams {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// `out = input · weight + bias`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Param,
    pub bias: Param,
}

impl Affine {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Shape {
                op: "affine bias",
                left: weight.shape(),
                right: bias.shape(),
            });
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    /// Weight `U(-1/sqrt(d_in), 1/sqrt(d_in))`, zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        Self {
            weight: Param::uniform(d_in, d_out, bound, rng),
            bias: Param::zeros(1, d_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = input.matmul(&self.weight.value)?;
        let bias = self.bias.value.row(0);
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, input: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if grad_out.shape() != (input.rows(), self.out_dim()) {
            return Err(Error::Shape {
                op: "affine backward",
                left: grad_out.shape(),
                right: (input.rows(), self.out_dim()),
            });
        }
        let gw = input.t_matmul(grad_out)?;
        self.weight.grad.add_assign(&gw)?;
        let gb = self.bias.grad.row_mut(0);
        for row in grad_out.row_iter() {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        grad_out.matmul_t(&self.weight.value)
    }
}

impl HasParams for Affine {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu(input: &Matrix) -> Matrix {
    let mut out = input.clone();
    out.as_mut_slice().iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
    out
}

/// Subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Matrix, grad_out: &Matrix) -> Matrix {
    let data = input
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(input.rows(), input.cols(), data).expect("same shape")
}

/// Row-normalized matrix together with the original row norms.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub output: Matrix,
    pub norms: Vec<f64>,
}

pub fn l2_normalize(input: &Matrix) -> Result<Normalized> {
    let mut output = input.clone();
    let mut norms = Vec::with_capacity(input.rows());
    for i in 0..input.rows() {
        let n = norm(input.row(i));
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroNorm { row: i });
        }
        output.row_mut(i).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok(Normalized { output, norms })
}

/// `dL/dx = (I - ẑẑᵀ) dL/dẑ / ‖x‖` row by row.
pub fn l2_normalize_backward(normed: &Normalized, grad_out: &Matrix) -> Matrix {
    let mut grad = grad_out.clone();
    for i in 0..grad.rows() {
        let z = normed.output.row(i);
        let proj = dot(z, grad_out.row(i));
        let inv = 1.0 / normed.norms[i];
        for (g, &zj) in grad.row_mut(i).iter_mut().zip(z) {
            *g = (*g - proj * zj) * inv;
        }
    }
    grad
}

/// Two affine layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub first: Affine,
    pub second: Affine,
}

/// Activations kept from [`Mlp2::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl Mlp2 {
    pub fn init(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Affine::init(d_in, d_hidden, rng),
            second: Affine::init(d_hidden, d_out, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Mlp2Cache)> {
        let pre = self.first.forward(input)?;
        let hidden = relu(&pre);
        let out = self.second.forward(&hidden)?;
        Ok((
            out,
            Mlp2Cache {
                input: input.clone(),
                pre,
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &Mlp2Cache, grad_out: &Matrix) -> Result<Matrix> {
        let g_hidden = self.second.backward(&cache.hidden, grad_out)?;
        let g_pre = relu_backward(&cache.pre, &g_hidden);
        self.first.backward(&cache.input, &g_pre)
    }
}

impl HasParams for Mlp2 {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.first.params_mut();
        v.extend(self.second.params_mut());
        v
    }
}
