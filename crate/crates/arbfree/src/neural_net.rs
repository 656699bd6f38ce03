//! Minimal feed-forward network with hand-rolled reverse-mode gradients,
//! Adam, magnitude pruning, and the lower-triangular drift/diffusion head.
//!
//! The architecture is a chain of affine layers with an activation after
//! every layer except the last. Gradients flow through a per-sample forward
//! cache; a sparsity mask, once set by pruning, pins the masked weights at
//! zero through all subsequent updates.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Softmax,
}

/// Multi-layer perceptron with an optional sparsity mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    input_dim: usize,
    output_dim: usize,
    hidden: Vec<usize>,
    activation: Activation,
    /// Per-layer weight matrices, shape (out, in).
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
    /// Per-layer 0/1 masks aligned with `weights`; absent means dense.
    masks: Option<Vec<Vec<u8>>>,
    seed: u64,
}

/// Per-layer parameter gradients.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub w: Vec<Mat>,
    pub b: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net
                .weights
                .iter()
                .map(|w| Mat::zeros(w.nrows(), w.ncols()))
                .collect(),
            b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.w {
            w.scale(s);
        }
        for b in &mut self.b {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Forward activations retained for the backward pass.
pub struct ForwardCache {
    /// Layer inputs: x, a_1, ..., a_{L-1} (post-activation).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values z_l for every layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Fresh network with seed-controlled initialization: He-uniform for
    /// ReLU, Xavier-uniform otherwise.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output_dim))
            .collect();
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let mut w = Mat::zeros(fan_out, fan_in);
            for i in 0..fan_out {
                for j in 0..fan_in {
                    w[(i, j)] = rng.gen_range(-limit..limit);
                }
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            activation,
            weights,
            biases,
            masks: None,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn masks(&self) -> Option<&[Vec<u8>]> {
        self.masks.as_deref()
    }

    /// Mutable access to the weight matrices, for custom initialization and
    /// perturbation studies. Pruning masks are re-applied on the next
    /// optimizer step, not here.
    pub fn weights_mut(&mut self) -> &mut Vec<Mat> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.biases
    }

    fn activate(&self, z: &[f64]) -> Vec<f64> {
        match self.activation {
            Activation::Relu => z.iter().map(|&x| x.max(0.0)).collect(),
            Activation::Tanh => z.iter().map(|&x| x.tanh()).collect(),
            Activation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / sum).collect()
            }
        }
    }

    /// Pull the gradient through the activation: given dL/da and the cached
    /// pre-activation z (with a = act(z)), return dL/dz.
    fn activate_backward(&self, z: &[f64], grad_a: &[f64]) -> Vec<f64> {
        match self.activation {
            Activation::Relu => z
                .iter()
                .zip(grad_a)
                .map(|(&zi, &g)| if zi > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Tanh => z
                .iter()
                .zip(grad_a)
                .map(|(&zi, &g)| {
                    let t = zi.tanh();
                    g * (1.0 - t * t)
                })
                .collect(),
            Activation::Softmax => {
                let s = self.activate(z);
                let dot: f64 = s.iter().zip(grad_a).map(|(si, gi)| si * gi).sum();
                s.iter()
                    .zip(grad_a)
                    .map(|(si, gi)| si * (gi - dot))
                    .collect()
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input length {} != network input width {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            a = if l < last { self.activate(&z) } else { z };
        }
        Ok(a)
    }

    /// Forward pass retaining the activations needed by [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input length {} != network input width {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.weights.len()),
            pre: Vec::with_capacity(self.weights.len()),
        };
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            cache.inputs.push(a.clone());
            let mut z = w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            cache.pre.push(z.clone());
            a = if l < last { self.activate(&z) } else { z };
        }
        Ok((a, cache))
    }

    /// Accumulate parameter gradients for one sample; returns dL/dx.
    ///
    /// Masked weight entries receive zero gradient, honoring the pruning
    /// contract.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let last = self.weights.len() - 1;
        let mut g = grad_output.to_vec();
        for l in (0..self.weights.len()).rev() {
            if l < last {
                g = self.activate_backward(&cache.pre[l], &g);
            }
            let input = &cache.inputs[l];
            let mask = self.masks.as_ref().map(|m| &m[l]);
            let cols = input.len();
            let gw = &mut grads.w[l];
            for (i, &gi) in g.iter().enumerate() {
                grads.b[l][i] += gi;
                if gi == 0.0 {
                    continue;
                }
                let row = gw.row_mut(i);
                match mask {
                    Some(m) => {
                        for (j, &xj) in input.iter().enumerate() {
                            if m[i * cols + j] != 0 {
                                row[j] += gi * xj;
                            }
                        }
                    }
                    None => {
                        for (j, &xj) in input.iter().enumerate() {
                            row[j] += gi * xj;
                        }
                    }
                }
            }
            // dL/d(input of layer l) = W^T g
            g = self.weights[l].tr_matvec(&g);
        }
        g
    }

    /// Zero the smallest-magnitude fraction of all weight entries (biases
    /// exempt) and pin them there for subsequent training.
    pub fn prune(&mut self, sparsity: f64) {
        assert!((0.0..=1.0).contains(&sparsity), "sparsity in [0, 1]");
        if sparsity == 0.0 {
            return;
        }
        let mut magnitudes: Vec<f64> = self
            .weights
            .iter()
            .flat_map(|w| w.data().iter().map(|x| x.abs()))
            .collect();
        let target = ((magnitudes.len() as f64) * sparsity).round() as usize;
        magnitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut masks: Vec<Vec<u8>> = self
            .weights
            .iter()
            .map(|w| vec![1u8; w.nrows() * w.ncols()])
            .collect();
        if target > 0 {
            let threshold = magnitudes[target - 1];
            let mut zeroed = 0usize;
            'outer: for (w, mask) in self.weights.iter_mut().zip(&mut masks) {
                let (r, c) = (w.nrows(), w.ncols());
                for i in 0..r {
                    for j in 0..c {
                        if zeroed >= target {
                            break 'outer;
                        }
                        // ties broken in iteration order for determinism
                        if w[(i, j)].abs() <= threshold {
                            mask[i * c + j] = 0;
                            w[(i, j)] = 0.0;
                            zeroed += 1;
                        }
                    }
                }
            }
        }
        self.masks = Some(masks);
    }

    fn apply_masks(&mut self) {
        if let Some(masks) = &self.masks {
            for (w, mask) in self.weights.iter_mut().zip(masks) {
                let (r, c) = (w.nrows(), w.ncols());
                for i in 0..r {
                    for j in 0..c {
                        if mask[i * c + j] == 0 {
                            w[(i, j)] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adam optimizer state (first/second moments and step counter).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    m_w: Vec<Mat>,
    v_w: Vec<Mat>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step: usize,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self {
            m_w: net
                .weights
                .iter()
                .map(|w| Mat::zeros(w.nrows(), w.ncols()))
                .collect(),
            v_w: net
                .weights
                .iter()
                .map(|w| Mat::zeros(w.nrows(), w.ncols()))
                .collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Deterministic; masked weights stay
/// zero because their gradients are zeroed by `backward` and the mask is
/// re-applied after the update.
pub fn adam_step(
    net: &mut Mlp,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for l in 0..net.weights.len() {
        let (r, c) = (net.weights[l].nrows(), net.weights[l].ncols());
        for i in 0..r {
            for j in 0..c {
                let g = grads.w[l][(i, j)];
                let m = beta1 * state.m_w[l][(i, j)] + (1.0 - beta1) * g;
                let v = beta2 * state.v_w[l][(i, j)] + (1.0 - beta2) * g * g;
                state.m_w[l][(i, j)] = m;
                state.v_w[l][(i, j)] = v;
                net.weights[l][(i, j)] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
        for i in 0..net.biases[l].len() {
            let g = grads.b[l][i];
            let m = beta1 * state.m_b[l][i] + (1.0 - beta1) * g;
            let v = beta2 * state.v_b[l][i] + (1.0 - beta2) * g * g;
            state.m_b[l][i] = m;
            state.v_b[l][i] = v;
            net.biases[l][i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
    }
    net.apply_masks();
}

/// Batch gradient of a per-sample loss supplied as a closure mapping
/// `(sample index, network output)` to `(loss, dL/doutput)`.
///
/// Returns the summed loss and summed parameter gradients; errors out if the
/// loss goes non-finite.
pub fn batch_gradient<F>(
    net: &Mlp,
    inputs: &[Vec<f64>],
    mut loss_grad: F,
) -> Result<(f64, Gradients)>
where
    F: FnMut(usize, &[f64]) -> (f64, Vec<f64>),
{
    let mut grads = Gradients::zeros_like(net);
    let mut total = 0.0;
    for (idx, x) in inputs.iter().enumerate() {
        let (out, cache) = net.forward_cached(x)?;
        let (loss, grad_out) = loss_grad(idx, &out);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: idx,
                value: loss,
            });
        }
        total += loss;
        net.backward(&cache, &grad_out, &mut grads);
    }
    Ok((total, grads))
}

/// Map the `d (d + 3) / 2` raw network outputs onto the drift vector and the
/// lower-triangular diffusion matrix: the triangle is filled row-major with
/// exponentiated diagonal entries, and the trailing `d` outputs are the
/// drift.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DriftDiffusionHead {
    pub dim: usize,
}

impl DriftDiffusionHead {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn output_len(&self) -> usize {
        self.dim * (self.dim + 3) / 2
    }

    /// Split raw outputs into `(mu_hat, sigma_hat)`.
    pub fn split(&self, outputs: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let d = self.dim;
        let expected = self.output_len();
        if outputs.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: outputs.len(),
                dim: d,
            });
        }
        let mut sigma = Mat::zeros(d, d);
        let mut idx = 0;
        for i in 0..d {
            for j in 0..=i {
                sigma[(i, j)] = if i == j {
                    outputs[idx].exp()
                } else {
                    outputs[idx]
                };
                idx += 1;
            }
        }
        let mu = outputs[idx..].to_vec();
        Ok((mu, sigma))
    }

    /// Chain gradients w.r.t. `(mu_hat, sigma_hat)` back to the raw outputs.
    /// `outputs` must be the raw vector that produced the split.
    pub fn backward(&self, outputs: &[f64], grad_mu: &[f64], grad_sigma: &Mat) -> Vec<f64> {
        let d = self.dim;
        let mut g = vec![0.0; self.output_len()];
        let mut idx = 0;
        for i in 0..d {
            for j in 0..=i {
                g[idx] = if i == j {
                    grad_sigma[(i, j)] * outputs[idx].exp()
                } else {
                    grad_sigma[(i, j)]
                };
                idx += 1;
            }
        }
        g[idx..].copy_from_slice(grad_mu);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_net(activation: Activation, seed: u64) -> Mlp {
        Mlp::new(2, &[3], 2, activation, seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = tiny_net(Activation::Relu, 1);
        for w in net.weights_mut() {
            w.scale(0.0);
        }
        let out = net.forward(&[1.0, -2.0]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut net = Mlp::new(2, &[], 2, Activation::Relu, 3);
        net.weights_mut()[0] = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]);
        net.biases_mut()[0] = vec![0.1, -0.2];
        let out = net.forward(&[3.0, -1.0]).unwrap();
        assert_abs_diff_eq!(out[0], 3.0 - 2.0 + 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -3.0 - 0.5 - 0.2, epsilon = 1e-15);
    }

    #[test]
    fn relu_clips_negative_preactivations() {
        let mut net = Mlp::new(1, &[1], 1, Activation::Relu, 5);
        net.weights_mut()[0] = Mat::from_rows(&[vec![1.0]]);
        net.weights_mut()[1] = Mat::from_rows(&[vec![1.0]]);
        net.biases_mut()[0] = vec![0.0];
        net.biases_mut()[1] = vec![0.0];
        assert_abs_diff_eq!(net.forward(&[-1.0]).unwrap()[0], 0.0);
        assert_abs_diff_eq!(net.forward(&[2.0]).unwrap()[0], 2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = tiny_net(Activation::Relu, 1);
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch(_))));
    }

    fn finite_difference_check(activation: Activation) {
        let net = Mlp::new(2, &[3], 2, activation, 42);
        let inputs = vec![vec![0.3, -0.7], vec![-0.2, 0.9], vec![1.1, 0.4]];
        let targets = [[0.5, -0.3], [0.1, 0.2], [-0.4, 0.9]];
        // squared-error loss against fixed targets
        let loss_of = |net: &Mlp| -> f64 {
            inputs
                .iter()
                .zip(&targets)
                .map(|(x, t)| {
                    let o = net.forward(x).unwrap();
                    o.iter()
                        .zip(t)
                        .map(|(oi, ti)| (oi - ti) * (oi - ti))
                        .sum::<f64>()
                })
                .sum()
        };
        let (_, grads) = batch_gradient(&net, &inputs, |idx, out| {
            let t = &targets[idx];
            let loss: f64 = out.iter().zip(t).map(|(o, ti)| (o - ti) * (o - ti)).sum();
            let g: Vec<f64> = out.iter().zip(t).map(|(o, ti)| 2.0 * (o - ti)).collect();
            (loss, g)
        })
        .unwrap();

        let h = 1e-6;
        for l in 0..net.weights().len() {
            for i in 0..net.weights()[l].nrows() {
                for j in 0..net.weights()[l].ncols() {
                    let mut plus = net.clone();
                    plus.weights_mut()[l][(i, j)] += h;
                    let mut minus = net.clone();
                    minus.weights_mut()[l][(i, j)] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let an = grads.w[l][(i, j)];
                    assert!(
                        (an - fd).abs() <= (1e-6f64).max(1e-4 * fd.abs()),
                        "{activation:?} W[{l}][{i},{j}]: analytic {an} vs fd {fd}"
                    );
                }
            }
            for i in 0..grads.b[l].len() {
                let mut plus = net.clone();
                plus.biases_mut()[l][i] += h;
                let mut minus = net.clone();
                minus.biases_mut()[l][i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.b[l][i];
                assert!(
                    (an - fd).abs() <= (1e-6f64).max(1e-4 * fd.abs()),
                    "{activation:?} b[{l}][{i}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_relu() {
        finite_difference_check(Activation::Relu);
    }

    #[test]
    fn gradients_match_finite_differences_tanh() {
        finite_difference_check(Activation::Tanh);
    }

    #[test]
    fn gradients_match_finite_differences_softmax() {
        finite_difference_check(Activation::Softmax);
    }

    #[test]
    fn pruned_entries_receive_zero_gradient() {
        let mut net = tiny_net(Activation::Tanh, 7);
        net.prune(0.5);
        let masks = net.masks().unwrap().to_vec();
        let inputs = vec![vec![0.5, -0.5]];
        let (_, grads) = batch_gradient(&net, &inputs, |_, out| {
            (
                out.iter().map(|o| o * o).sum(),
                out.iter().map(|o| 2.0 * o).collect(),
            )
        })
        .unwrap();
        for (l, mask) in masks.iter().enumerate() {
            let c = grads.w[l].ncols();
            for i in 0..grads.w[l].nrows() {
                for j in 0..c {
                    if mask[i * c + j] == 0 {
                        assert_eq!(grads.w[l][(i, j)], 0.0);
                        assert_eq!(net.weights()[l][(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = tiny_net(Activation::Relu, 11);
        let reference = net.clone();
        let mut state = AdamState::new(&net);
        let grads = Gradients::zeros_like(&net);
        for _ in 0..10 {
            adam_step(&mut net, &grads, &mut state, 1e-2, 0.9, 0.999, 1e-8);
        }
        for (a, b) in net.weights().iter().zip(reference.weights().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // after one step from fresh state: m_hat = g, v_hat = g^2,
        // so the update is lr * g / (|g| + eps) ~ lr * sign(g)
        let mut net = Mlp::new(1, &[], 1, Activation::Relu, 2);
        net.weights_mut()[0] = Mat::from_rows(&[vec![1.0]]);
        let mut grads = Gradients::zeros_like(&net);
        grads.w[0][(0, 0)] = 0.37;
        let mut state = AdamState::new(&net);
        adam_step(&mut net, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8);
        assert_abs_diff_eq!(net.weights()[0][(0, 0)], 1.0 - 1e-3, epsilon = 1e-9);
    }

    #[test]
    fn adam_is_bitwise_deterministic() {
        let run = || {
            let mut net = tiny_net(Activation::Relu, 9);
            let mut state = AdamState::new(&net);
            let inputs = vec![vec![0.2, 0.4], vec![-0.3, 0.8]];
            for _ in 0..25 {
                let (_, grads) = batch_gradient(&net, &inputs, |_, out| {
                    (
                        out.iter().map(|o| o * o).sum(),
                        out.iter().map(|o| 2.0 * o).collect(),
                    )
                })
                .unwrap();
                adam_step(&mut net, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8);
            }
            net
        };
        let a = run();
        let b = run();
        for (wa, wb) in a.weights().iter().zip(b.weights().iter()) {
            assert_eq!(wa.data(), wb.data());
        }
    }

    #[test]
    fn prune_endpoints_and_half() {
        let mut net = Mlp::new(2, &[], 2, Activation::Relu, 1);
        net.weights_mut()[0] = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let untouched = net.clone();
        net.prune(0.0);
        assert_eq!(net.weights()[0].data(), untouched.weights()[0].data());
        let mut half = untouched.clone();
        half.prune(0.5);
        assert_eq!(half.weights()[0].data(), &[0.0, 0.0, 3.0, 4.0]);
        let mut all = untouched.clone();
        all.prune(1.0);
        assert!(all.weights()[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn head_index_layout() {
        let head = DriftDiffusionHead::new(2);
        let (mu, sigma) = head.split(&[0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sigma[(0, 0)], 1.0);
        assert_eq!(sigma[(1, 1)], 1.0);
        assert_eq!(sigma[(0, 1)], 0.0);
        assert_eq!(mu, vec![0.0, 0.0]);

        let (mu, sigma) = head.split(&[2.0f64.ln(), 3.0, 0.0, 1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(sigma[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sigma[(1, 0)], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sigma[(1, 1)], 1.0, epsilon = 1e-15);
        assert_eq!(mu, vec![1.0, -1.0]);

        let head1 = DriftDiffusionHead::new(1);
        let (mu, sigma) = head1.split(&[0.5, -2.0]).unwrap();
        assert_abs_diff_eq!(sigma[(0, 0)], 0.5f64.exp(), epsilon = 1e-15);
        assert_eq!(mu, vec![-2.0]);

        assert!(matches!(
            head.split(&[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn head_diagonal_always_positive() {
        let head = DriftDiffusionHead::new(3);
        let outputs: Vec<f64> = (0..head.output_len()).map(|i| -(i as f64) * 3.7).collect();
        let (_, sigma) = head.split(&outputs).unwrap();
        for i in 0..3 {
            assert!(sigma[(i, i)] > 0.0);
        }
    }

    #[test]
    fn forward_is_lipschitz_for_relu_and_tanh() {
        for act in [Activation::Relu, Activation::Tanh] {
            let net = Mlp::new(2, &[8, 8], 2, act, 123);
            // crude Lipschitz bound: product of layer Frobenius norms
            let bound: f64 = net.weights().iter().map(|w| w.frobenius_norm()).product();
            let x = [0.3, -0.4];
            for i in 0..50 {
                let eps = 1e-3 * (i as f64 + 1.0);
                let y = [x[0] + eps, x[1] - 0.5 * eps];
                let fx = net.forward(&x).unwrap();
                let fy = net.forward(&y).unwrap();
                let dist_out = crate::linalg::norm2(&crate::linalg::sub(&fx, &fy));
                let dist_in = crate::linalg::norm2(&crate::linalg::sub(&x, &y));
                assert!(dist_out <= bound * dist_in + 1e-12);
            }
        }
    }
}
