//! Fixed-topology MLPs: affine -> layer norm -> leaky ReLU per hidden layer,
//! then a linear head. Parameters live in one flat `Vec<f64>` so that the
//! optimiser, Polyak averaging, parameter noise and checkpoints all work on
//! plain slices.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

const LN_EPS: f64 = 1e-10;

/// Network topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub layer_norm: bool,
    pub leaky_slope: f64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec { input, hidden: hidden.to_vec(), output, layer_norm: true, leaky_slope: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    /// Offsets of the layer-norm gain and offset vectors (hidden layers only).
    ln: Option<(usize, usize)>,
    hidden: bool,
}

/// Parameter kinds, used by parameter-space noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormOffset,
}

fn build_layout(spec: &MlpSpec) -> (Vec<Layer>, usize) {
    let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
    let mut off = 0;
    let mut fan_in = spec.input;
    let outs = spec.hidden.iter().copied().chain(core::iter::once(spec.output));
    let n_hidden = spec.hidden.len();
    for (i, fan_out) in outs.enumerate() {
        let hidden = i < n_hidden;
        let w = off;
        off += fan_in * fan_out;
        let b = off;
        off += fan_out;
        let ln = if hidden && spec.layer_norm {
            let g = off;
            off += fan_out;
            let o = off;
            off += fan_out;
            Some((g, o))
        } else {
            None
        };
        layers.push(Layer { fan_in, fan_out, w, b, ln, hidden });
        fan_in = fan_out;
    }
    (layers, off)
}

/// A multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each affine layer.
    inputs: Vec<Vec<f64>>,
    /// Normalised pre-activations (or raw affine outputs without layer norm).
    normed: Vec<Vec<f64>>,
    /// Per-row inverse standard deviation.
    inv_std: Vec<Vec<f64>>,
    /// Values fed to the activation.
    pre_act: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Which hidden units sat on the negative side of the activation, per
    /// layer and row. Finite-difference probes that change this pattern
    /// straddle a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre_act.iter().flat_map(|l| l.iter().map(|v| *v < 0.0)).collect()
    }
}

/// C = alpha * A B + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl Mlp {
    /// All-zero network of the given topology (layer-norm gains set to one).
    pub fn zeros(spec: MlpSpec) -> Self {
        let (layers, n) = build_layout(&spec);
        let mut params = vec![0.0; n];
        for l in &layers {
            if let Some((g, _)) = l.ln {
                params[g..g + l.fan_out].fill(1.0);
            }
        }
        Mlp { spec, layers, params }
    }

    /// Fan-in uniform initialisation, with the output head scaled by
    /// `head_scale`.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, head_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        let n_layers = net.layers.len();
        for (i, l) in net.layers.clone().into_iter().enumerate() {
            let bound = 1.0 / math::sqrt(l.fan_in as f64);
            let scale = if i + 1 == n_layers { head_scale } else { 1.0 };
            for p in &mut net.params[l.w..l.b + l.fan_out] {
                *p = scale * rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec);
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch { expected: net.params.len(), got: params.len() });
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Kind of every entry of [`Mlp::params`], in order.
    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut kinds = vec![ParamKind::Weight; self.params.len()];
        for l in &self.layers {
            kinds[l.b..l.b + l.fan_out].fill(ParamKind::Bias);
            if let Some((g, o)) = l.ln {
                kinds[g..g + l.fan_out].fill(ParamKind::NormGain);
                kinds[o..o + l.fan_out].fill(ParamKind::NormOffset);
            }
        }
        kinds
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.spec.input {
            return Err(Error::ShapeMismatch { expected: batch * self.spec.input, got: x.len() });
        }
        Ok(())
    }

    fn affine(&self, l: &Layer, x: &[f64], batch: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(batch * l.fan_out);
        for _ in 0..batch {
            z.extend_from_slice(&self.params[l.b..l.b + l.fan_out]);
        }
        let w = &self.params[l.w..l.w + l.fan_in * l.fan_out];
        gemm(batch, l.fan_in, l.fan_out, x, l.fan_in, 1, w, 1, l.fan_in, 1.0, &mut z, l.fan_out);
        z
    }

    /// Layer norm in place; returns the normalised values and inverse stds.
    fn normalise(&self, l: &Layer, z: &mut [f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let n = l.fan_out;
        let mut inv = Vec::with_capacity(batch);
        let (g, o) = l.ln.expect("layer norm offsets");
        let gain = &self.params[g..g + n];
        let offset = &self.params[o..o + n];
        let mut normed = vec![0.0; batch * n];
        for r in 0..batch {
            let row = &mut z[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / math::sqrt(var + LN_EPS);
            inv.push(is);
            let nr = &mut normed[r * n..(r + 1) * n];
            for j in 0..n {
                nr[j] = (row[j] - mean) * is;
                row[j] = gain[j] * nr[j] + offset[j];
            }
        }
        (normed, inv)
    }

    fn activate(&self, v: &mut [f64]) {
        let s = self.spec.leaky_slope;
        for x in v {
            if *x < 0.0 {
                *x *= s;
            }
        }
    }

    /// Batched forward pass over `batch` row-major inputs.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x, batch)?;
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(self.layers.len()),
            normed: Vec::new(),
            inv_std: Vec::new(),
            pre_act: Vec::new(),
        };
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut z = self.affine(l, &cur, batch);
            cache.inputs.push(core::mem::take(&mut cur));
            if l.hidden {
                if l.ln.is_some() {
                    let (normed, inv) = self.normalise(l, &mut z, batch);
                    cache.normed.push(normed);
                    cache.inv_std.push(inv);
                } else {
                    cache.normed.push(Vec::new());
                    cache.inv_std.push(Vec::new());
                }
                cache.pre_act.push(z.clone());
                self.activate(&mut z);
            }
            cur = z;
        }
        Ok((cur, cache))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch)?;
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut z = self.affine(l, &cur, batch);
            if l.hidden {
                if l.ln.is_some() {
                    self.normalise(l, &mut z, batch);
                }
                self.activate(&mut z);
            }
            cur = z;
        }
        Ok(cur)
    }

    /// Reverse-mode pass for output gradient `dy`.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient with respect to the input is returned when `input_grad` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        mut grads: Option<&mut [f64]>,
        input_grad: bool,
    ) -> Option<Vec<f64>> {
        let batch = cache.batch;
        assert_eq!(dy.len(), batch * self.spec.output);
        if let Some(g) = grads.as_deref() {
            assert_eq!(g.len(), self.params.len());
        }
        let slope = self.spec.leaky_slope;
        let mut delta = dy.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let n = l.fan_out;
            if l.hidden {
                // delta holds dL/d(activation output); move it through the
                // activation and the layer norm to dL/dz.
                let pre = &cache.pre_act[li];
                for (d, p) in delta.iter_mut().zip(pre) {
                    if *p < 0.0 {
                        *d *= slope;
                    }
                }
                if let Some((go, oo)) = l.ln {
                    let normed = &cache.normed[li];
                    let inv = &cache.inv_std[li];
                    if let Some(g) = grads.as_deref_mut() {
                        for r in 0..batch {
                            for j in 0..n {
                                let d = delta[r * n + j];
                                g[go + j] += d * normed[r * n + j];
                                g[oo + j] += d;
                            }
                        }
                    }
                    let gain = &self.params[go..go + n];
                    for r in 0..batch {
                        let row = &mut delta[r * n..(r + 1) * n];
                        let xr = &normed[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            row[j] *= gain[j];
                            mean_d += row[j];
                            mean_dx += row[j] * xr[j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            row[j] = inv[r] * (row[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
            }
            let x = &cache.inputs[li];
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g[l.w..l.w + l.fan_in * n];
                gemm(n, batch, l.fan_in, &delta, 1, n, x, l.fan_in, 1, 1.0, gw, l.fan_in);
                let gb = &mut g[l.b..l.b + n];
                for r in 0..batch {
                    for j in 0..n {
                        gb[j] += delta[r * n + j];
                    }
                }
            }
            if li == 0 && !input_grad {
                return None;
            }
            let w = &self.params[l.w..l.w + l.fan_in * n];
            let mut dx = vec![0.0; batch * l.fan_in];
            gemm(batch, n, l.fan_in, &delta, n, 1, w, l.fan_in, 1, 0.0, &mut dx, l.fan_in);
            delta = dx;
        }
        Some(delta)
    }

    /// `self <- tau * source + (1 - tau) * self`, parameter-wise.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.params.len(), source.params.len());
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t += tau * (s - *t);
        }
    }
}

/// Scales `grads` so that their Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(|g| g * g).sum());
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads {
            *g *= s;
        }
    }
    norm
}

/// Adam with bias correction and optional L2 penalty folded into the
/// gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: Option<f64>,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64, weight_decay: Option<f64>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - math::powf(self.beta1, t);
        let bc2 = 1.0 - math::powf(self.beta2, t);
        let wd = self.weight_decay.unwrap_or(0.0);
        for i in 0..params.len() {
            let g = grads[i] + wd * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
        }
    }
}

/// A network bundled with its optimiser state.
#[derive(Debug, Clone)]
pub struct Trainable {
    pub net: Mlp,
    pub opt: Adam,
}

impl Trainable {
    pub fn new(net: Mlp, lr: f64, weight_decay: Option<f64>) -> Self {
        let opt = Adam::new(net.num_params(), lr, weight_decay);
        Trainable { net, opt }
    }

    /// Clips and applies `grads`.
    pub fn apply(&mut self, grads: &mut [f64], clip: Option<f64>) -> f64 {
        let norm = match clip {
            Some(c) => clip_grad_norm(grads, c),
            None => math::sqrt(grads.iter().map(|g| g * g).sum()),
        };
        self.opt.update(self.net.params_mut(), grads);
        norm
    }
}
