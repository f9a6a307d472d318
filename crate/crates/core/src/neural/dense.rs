use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Parameters, Tensor2};
use crate::num::Scalar;

pub(crate) fn uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor2<F> {
    let data = (0..rows * cols)
        .map(|_| F::of(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("length matches shape")
}

/// Affine layer `y = W x + b` with `W: out × in`, `b: out × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<F> {
    pub w: Tensor2<F>,
    pub b: Tensor2<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Tensor2::zeros(output, input),
            b: Tensor2::zeros(output, 1),
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        Linear {
            w: uniform(rng, output, input, k),
            b: uniform(rng, output, 1, k),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let mut out = self.b.data().to_vec();
        self.w.matvec_acc(x, &mut out);
        out
    }
}

/// Linear layers with ReLU between consecutive layers; the last layer's
/// output is returned raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<F>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<F>>,
}

impl<F: Scalar> Mlp<F> {
    pub fn zeros(input: usize, dims: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = input;
        for &d in dims {
            layers.push(Linear::zeros(prev, d));
            prev = d;
        }
        Mlp { layers }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, dims: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = input;
        for &d in dims {
            layers.push(Linear::random(prev, d, rng));
            prev = d;
        }
        Mlp { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[F]) -> (Vec<F>, MlpCache<F>) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            let next = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| v.relu()).collect()
            };
            cache.inputs.push(std::mem::replace(&mut a, next));
            cache.pre.push(z);
        }
        (a, cache)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &MlpCache<F>, d_out: &[F], grads: &mut Mlp<F>) -> Vec<F> {
        let mut d = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            g.w.add_outer(&d, &cache.inputs[l]);
            g.b.add_vec(&d);
            let mut d_in = vec![F::zero(); layer.input_dim()];
            layer.w.matvec_t_acc(&d, &mut d_in);
            if l > 0 {
                for (di, z) in d_in.iter_mut().zip(&cache.pre[l - 1]) {
                    if *z <= F::zero() {
                        *di = F::zero();
                    }
                }
            }
            d = d_in;
        }
        d
    }

    pub(crate) fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2<F>)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &layer.w));
            out.push((format!("{prefix}.{i}.b"), &layer.b));
        }
    }

    pub(crate) fn tensors_mut_into<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor2<F>>) {
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
    }

    pub fn cast<G: Scalar>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: l.w.cast(),
                    b: l.b.cast(),
                })
                .collect(),
        }
    }
}

impl<F: Scalar> Parameters<F> for Mlp<F> {
    fn tensors(&self) -> Vec<(String, &Tensor2<F>)> {
        let mut out = Vec::new();
        self.named_tensors("mlp", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<F>> {
        let mut out = Vec::new();
        self.tensors_mut_into(&mut out);
        out
    }
}
