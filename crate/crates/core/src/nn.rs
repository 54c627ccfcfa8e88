//! Minimal dense layers with hand-written backpropagation, plus Adam.
//!
//! Everything is batched row-major: an input batch is `[batch, features]`.
//! Gradient containers reuse the parameter types (`Mlp::zeros_like`).

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    fn backprop(self, activated: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => ndarray::Zip::from(grad)
                .and(activated)
                .for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Tanh => ndarray::Zip::from(grad)
                .and(activated)
                .for_each(|g, &a| *g *= 1.0 - a * a),
        }
    }
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    /// Uniform Glorot initialisation scaled by `gain`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || {
            rng.gen_range(-bound..=bound)
        });
        Linear {
            weight,
            bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns the input gradient and accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        grad_out: &Array2<f64>,
        grads: &mut Linear,
    ) -> Array2<f64> {
        grads.weight += &input.t().dot(grad_out);
        grads.bias += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }

    pub fn tensors(&self) -> [&Array2<f64>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Feed-forward network: hidden layers use `activation`, the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Activations recorded during a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `inputs[k]` is the input to layer `k`; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let gain = match activation {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Tanh => 1.0,
        };
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], gain, rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(Linear::outputs).unwrap_or(0)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            self.activation.apply(&mut h);
            h = layer.forward(h.view());
        }
        h
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpTrace) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            self.activation.apply(&mut h);
            let next = layer.forward(h.view());
            inputs.push(h);
            h = next;
        }
        (h, MlpTrace { inputs })
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, trace: &MlpTrace, grad_out: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut grad = grad_out;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[k];
            grad = layer.backward(input.view(), &grad, &mut grads.layers[k]);
            if k > 0 {
                self.activation.backprop(input, &mut grad);
            }
        }
        grad
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(Linear::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(Linear::tensors_mut).collect()
    }
}

/// Adam over an ordered list of tensors. The tensor order must stay fixed between calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl Adam {
    pub fn step(&mut self, lr: f64, params: Vec<&mut Array2<f64>>, grads: Vec<&Array2<f64>>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_grad_norm(grads: Vec<&mut Array2<f64>>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Row-wise softmax over entries where `mask` is true; masked entries are exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub fn is_finite(tensors: &[&Array2<f64>]) -> bool {
    tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Array2<f64>) -> f64 {
        net.forward(x.view()).mapv(|v| v * v).sum() * 0.5
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for activation in [Activation::Tanh, Activation::Relu] {
            let mut net = Mlp::new(&[3, 5, 4, 2], activation, &mut rng);
            let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.3) * 0.4 + j as f64 * 0.3);
            let (out, trace) = net.forward_traced(x.view());
            let mut grads = net.zeros_like();
            net.backward(&trace, out, &mut grads);
            let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
            let h = 1e-6;
            let mut k = 0;
            for t in 0..net.tensors().len() {
                let len = net.tensors()[t].len();
                for idx in 0..len {
                    let orig = net.tensors()[t].as_slice().unwrap()[idx];
                    net.tensors_mut()[t].as_slice_mut().unwrap()[idx] = orig + h;
                    let up = loss(&net, &x);
                    net.tensors_mut()[t].as_slice_mut().unwrap()[idx] = orig - h;
                    let down = loss(&net, &x);
                    net.tensors_mut()[t].as_slice_mut().unwrap()[idx] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    assert!(
                        (numeric - analytic[k]).abs() <= 1e-5 * (1.0 + numeric.abs()),
                        "{activation:?} param {k}: {numeric} vs {}",
                        analytic[k]
                    );
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let p = masked_softmax(&[1.0, 50.0, -3.0], &[true, false, true]);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut x = Array2::from_elem((1, 1), 5.0);
        let mut adam = Adam::default();
        for _ in 0..2000 {
            let g = x.mapv(|v| 2.0 * v);
            adam.step(0.05, vec![&mut x], vec![&g]);
        }
        assert!(x[[0, 0]].abs() < 1e-2);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut a = Array2::from_elem((1, 2), 3.0);
        let mut b = Array2::from_elem((1, 1), 4.0);
        let before = clip_grad_norm(vec![&mut a, &mut b], 0.5);
        assert!((before - 34f64.sqrt()).abs() < 1e-12);
        let after = (a.iter().chain(b.iter()).map(|v| v * v).sum::<f64>()).sqrt();
        assert!((after - 0.5).abs() < 1e-12);
    }
}
