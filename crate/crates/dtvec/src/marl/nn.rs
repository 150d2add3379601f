//! Small dense networks over `f64` with explicit forward/backward passes.
//!
//! Everything the trainer differentiates goes through these networks, so the
//! backward pass is written out by hand and validated against central finite
//! differences in the test suites.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise nonlinearity applied after a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activated output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// A fully connected network. Weights are `[out, in]`; a layer computes
/// `act(x W^T + b)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activations: Vec<Activation>,
}

/// Per-layer post-activation outputs kept for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("network has at least one layer")
    }
}

/// Parameter gradients congruent with an [`Mlp`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Euclidean norm over all entries.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            acc += b.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Rescales in place so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for w in &mut self.weights {
                w.mapv_inplace(|v| v * s);
            }
            for b in &mut self.biases {
                b.mapv_inplace(|v| v * s);
            }
        }
    }

    /// Gradient for the flat parameter index used by [`Mlp::param`].
    pub fn param(&self, index: usize) -> f64 {
        let mut idx = index;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return w.as_slice().expect("contiguous")[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index {index} out of range");
    }
}

impl Mlp {
    /// Builds a network with the given layer sizes and activations, weights
    /// drawn uniformly with Glorot scaling.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert_eq!(
            activations.len(),
            dims.len() - 1,
            "one activation per layer"
        );
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..=bound));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            weights,
            biases,
            activations: activations.to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat parameter accessor; order is `w0 (row-major), b0, w1, b1, ...`.
    pub fn param(&self, index: usize) -> f64 {
        let mut idx = index;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return w.as_slice().expect("contiguous")[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut idx = index;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            if idx < w.len() {
                w.as_slice_mut().expect("contiguous")[idx] = value;
                return;
            }
            idx -= w.len();
            if idx < b.len() {
                b[idx] = value;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Batched forward pass: rows are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in 0..self.weights.len() {
            let mut z = h.dot(&self.weights[l].t());
            z += &self.biases[l];
            z.mapv_inplace(|v| self.activations[l].apply(v));
            h = z;
        }
        h
    }

    /// Forward pass that retains per-layer outputs for [`Mlp::backward`].
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut outputs = Vec::with_capacity(self.weights.len());
        let mut h = x.to_owned();
        let input = h.clone();
        for l in 0..self.weights.len() {
            let mut z = h.dot(&self.weights[l].t());
            z += &self.biases[l];
            z.mapv_inplace(|v| self.activations[l].apply(v));
            outputs.push(z.clone());
            h = z;
        }
        ForwardCache { input, outputs }
    }

    /// Convenience single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let arr = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        self.forward(arr.view()).row(0).to_vec()
    }

    /// Backpropagates `dloss_dout` (same shape as the network output) through
    /// the cached forward pass. Returns parameter gradients and the gradient
    /// with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, dloss_dout: Array2<f64>) -> (Gradients, Array2<f64>) {
        let layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = dloss_dout;
        for l in (0..layers).rev() {
            let y = &cache.outputs[l];
            // dz = upstream * act'(y)
            let mut dz = upstream;
            dz.zip_mut_with(y, |g, &out| *g *= self.activations[l].grad_from_output(out));
            let layer_input = if l == 0 {
                &cache.input
            } else {
                &cache.outputs[l - 1]
            };
            grads.weights[l] = dz.t().dot(layer_input);
            grads.biases[l] = dz.sum_axis(Axis(0));
            upstream = dz.dot(&self.weights[l]);
        }
        (grads, upstream)
    }

    /// Moves every parameter by `scale * gradient`. Pass a negative scale to
    /// descend, positive to ascend.
    pub fn gradient_step(&mut self, grads: &Gradients, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.zip_mut_with(g, |p, &gv| *p += scale * gv);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.zip_mut_with(g, |p, &gv| *p += scale * gv);
        }
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Soft target update: `target <- rate*online + (1-rate)*target`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain {
            op: "soft_update",
            reason: format!("rate must lie in [0, 1], got {rate}"),
        });
    }
    if !target.same_shape(online) {
        return Err(Error::ShapeMismatch(
            "target and online networks differ in architecture".into(),
        ));
    }
    for (t, o) in target.weights.iter_mut().zip(&online.weights) {
        t.zip_mut_with(o, |tv, &ov| *tv = rate * ov + (1.0 - rate) * *tv);
    }
    for (t, o) in target.biases.iter_mut().zip(&online.biases) {
        t.zip_mut_with(o, |tv, &ov| *tv = rate * ov + (1.0 - rate) * *tv);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(
            &[3, 4, 2],
            &[Activation::Tanh, Activation::Sigmoid],
            &mut rng,
        )
    }

    #[test]
    fn forward_deterministic_and_bounded() {
        let net = tiny_net(1);
        let x = array![[0.3, -0.7, 1.2]];
        let a = net.forward(x.view());
        let b = net.forward(x.view());
        assert_eq!(a, b);
        for v in a.iter() {
            assert!(*v > 0.0 && *v < 1.0, "sigmoid output out of range");
        }
    }

    #[test]
    fn param_indexing_round_trip() {
        let mut net = tiny_net(2);
        let n = net.num_params();
        assert_eq!(n, 3 * 4 + 4 + 4 * 2 + 2);
        for i in 0..n {
            let v = net.param(i);
            net.set_param(i, v + 1.0);
            assert_eq!(net.param(i), v + 1.0);
            net.set_param(i, v);
        }
    }

    /// Central-difference check of the backward pass on a scalar loss
    /// L = sum(out^2) / 2.
    #[test]
    fn backward_matches_finite_differences() {
        let net = tiny_net(3);
        let x = array![[0.2, -0.5, 0.9], [1.0, 0.0, -1.3]];

        let loss = |net: &Mlp| -> f64 {
            let out = net.forward(x.view());
            0.5 * out.iter().map(|v| v * v).sum::<f64>()
        };

        let cache = net.forward_cached(x.view());
        let dloss = cache.output().clone();
        let (grads, _) = net.backward(&cache, dloss);

        let mut probe = net.clone();
        let h = 1e-6;
        for i in 0..net.num_params() {
            let orig = probe.param(i);
            probe.set_param(i, orig + h);
            let plus = loss(&probe);
            probe.set_param(i, orig - h);
            let minus = loss(&probe);
            probe.set_param(i, orig);
            let fd = (plus - minus) / (2.0 * h);
            let analytic = grads.param(i);
            let scale = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (fd - analytic).abs() / scale <= 1e-5,
                "param {i}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = tiny_net(4);
        let x0 = [0.1, 0.4, -0.8];
        let loss_at = |x: &[f64]| -> f64 {
            let arr = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
            let out = net.forward(arr.view());
            0.5 * out.iter().map(|v| v * v).sum::<f64>()
        };
        let arr = Array2::from_shape_vec((1, 3), x0.to_vec()).unwrap();
        let cache = net.forward_cached(arr.view());
        let dloss = cache.output().clone();
        let (_, dinput) = net.backward(&cache, dloss);

        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x0;
            xp[i] += h;
            let mut xm = x0;
            xm[i] -= h;
            let fd = (loss_at(&xp) - loss_at(&xm)) / (2.0 * h);
            assert_relative_eq!(dinput[[0, i]], fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn soft_update_reference_cases() {
        let online = tiny_net(5);
        let mut target = tiny_net(6);
        let before = target.clone();

        // rate = 0 freezes the target.
        soft_update(&mut target, &online, 0.0).unwrap();
        for i in 0..target.num_params() {
            assert_eq!(target.param(i), before.param(i));
        }

        // rate = 0.5 is the exact midpoint.
        soft_update(&mut target, &online, 0.5).unwrap();
        for i in 0..target.num_params() {
            assert_eq!(target.param(i), 0.5 * online.param(i) + 0.5 * before.param(i));
        }

        // rate = 1 copies the online parameters bit-exactly.
        soft_update(&mut target, &online, 1.0).unwrap();
        for i in 0..target.num_params() {
            assert_eq!(target.param(i), online.param(i));
        }

        assert!(soft_update(&mut target, &online, 1.5).is_err());
        let mismatched = Mlp::new(
            &[2, 2],
            &[Activation::Identity],
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(soft_update(&mut target, &mismatched, 0.5).is_err());
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let online = tiny_net(7);
        let mut target = tiny_net(8);
        let before = target.clone();
        soft_update(&mut target, &online, 0.3).unwrap();
        for i in 0..target.num_params() {
            let lo = before.param(i).min(online.param(i));
            let hi = before.param(i).max(online.param(i));
            let v = target.param(i);
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }

    #[test]
    fn gradient_clipping_preserves_direction() {
        let net = tiny_net(9);
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0][[0, 0]] = 30.0;
        grads.weights[0][[0, 1]] = 40.0;
        assert_relative_eq!(grads.global_norm(), 50.0, max_relative = 1e-12);
        grads.clip_global_norm(5.0);
        assert_relative_eq!(grads.global_norm(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(
            grads.weights[0][[0, 1]] / grads.weights[0][[0, 0]],
            40.0 / 30.0,
            max_relative = 1e-12
        );
    }
}
