//! Minimal fully-connected network substrate.
//!
//! Everything downstream — the proto-policy modules, the selector, the
//! baselines — is built from one parameter container ([`MlpParams`]) and
//! four operations: seeded init, a tracing forward pass, an exact analytic
//! backward pass, and an Adam update. Keeping this surface tiny is what
//! makes the gradient checks tractable: the composite policy graph is
//! differentiated by hand out of these pieces, and every gradient is
//! validated against central finite differences.
//!
//! Conventions, fixed across the crate:
//!
//! * all arithmetic is `f64`;
//! * layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l+1]` outputs
//!   with a dense weight matrix stored flat in row-major `(out, in)` order;
//! * hidden layers apply `tanh`, the output layer is affine (identity);
//! * initial weights are uniform in `±1/sqrt(fan_in)`, biases start at zero,
//!   and the draw order (layers in order, each matrix row-major) is part of
//!   the determinism contract: one seed, one parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Parameters of one multi-layer perceptron.
///
/// Fields are public so that tests and tooling can inspect or perturb
/// individual scalars (finite-difference checks, permutation tests, module
/// surgery). Code that mutates them directly is responsible for keeping the
/// shapes consistent with `layer_sizes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Widths of every layer, input first, output last. `len() >= 2`.
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` is the `(layer_sizes[l+1], layer_sizes[l])` matrix of
    /// layer `l`, flattened row-major.
    pub weights: Vec<Vec<f64>>,
    /// `biases[l]` has length `layer_sizes[l+1]`.
    pub biases: Vec<Vec<f64>>,
}

/// Gradients with the same shapes as an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Cached intermediate results of one forward pass, sufficient to replay the
/// pass and to run [`backward`] without recomputing anything.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `pre_activations[l]` is the affine output `z_l` of layer `l` before
    /// its activation.
    pub pre_activations: Vec<Vec<f64>>,
    /// `activations[0]` is the input; `activations[l + 1]` is the output of
    /// layer `l` after its activation. The last entry is the network output.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// The network output cached by the pass that produced this trace.
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }
}

impl MlpParams {
    /// Seeded initialisation: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero. The same `(layer_sizes, seed)` pair always produces the same
    /// parameters.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least an input and an output layer, got {} sizes",
                layer_sizes.len()
            )));
        }
        if let Some(zero) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer {zero} has width 0"
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Width of the input layer.
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Width of the output layer.
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    /// Number of dense layers (weight matrices).
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total scalar parameter count, weights plus biases.
    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// In-place `params += scale * grads`. Used by plain gradient-descent
    /// steps in tests; the optimiser proper is [`adam_step`].
    pub fn add_scaled(&mut self, grads: &MlpGrads, scale: f64) {
        assert_eq!(self.weights.len(), grads.weights.len(), "layer count mismatch");
        for l in 0..self.weights.len() {
            assert_eq!(self.weights[l].len(), grads.weights[l].len(), "weight shape mismatch at layer {l}");
            assert_eq!(self.biases[l].len(), grads.biases[l].len(), "bias shape mismatch at layer {l}");
            for (p, g) in self.weights[l].iter_mut().zip(&grads.weights[l]) {
                *p += scale * g;
            }
            for (p, g) in self.biases[l].iter_mut().zip(&grads.biases[l]) {
                *p += scale * g;
            }
        }
    }
}

impl MlpGrads {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        assert_eq!(self.weights.len(), other.weights.len(), "layer count mismatch");
        for l in 0..self.weights.len() {
            assert_eq!(self.weights[l].len(), other.weights[l].len(), "weight shape mismatch at layer {l}");
            for (a, b) in self.weights[l].iter_mut().zip(&other.weights[l]) {
                *a += scale * b;
            }
            for (a, b) in self.biases[l].iter_mut().zip(&other.biases[l]) {
                *a += scale * b;
            }
        }
    }

    /// In-place `self *= scale`.
    pub fn scale(&mut self, scale: f64) {
        for w in &mut self.weights {
            for g in w {
                *g *= scale;
            }
        }
        for b in &mut self.biases {
            for g in b {
                *g *= scale;
            }
        }
    }
}

/// Dot product with four independent accumulators so the FMA chains pipeline
/// (and vectorise) while keeping a fixed, deterministic summation order.
#[inline]
pub(crate) fn dot(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let chunks = x.len() / 4;
    let (mut a0, mut a1, mut a2, mut a3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for c in 0..chunks {
        let i = 4 * c;
        a0 = w[i].mul_add(x[i], a0);
        a1 = w[i + 1].mul_add(x[i + 1], a1);
        a2 = w[i + 2].mul_add(x[i + 2], a2);
        a3 = w[i + 3].mul_add(x[i + 3], a3);
    }
    let mut tail = 0.0f64;
    for i in 4 * chunks..x.len() {
        tail = w[i].mul_add(x[i], tail);
    }
    (a0 + a1) + (a2 + a3) + tail
}

/// Forward pass: `tanh` on hidden layers, identity on the output layer.
/// Returns the output together with a [`ForwardTrace`] for [`backward`].
///
/// Panics if `input.len()` does not match the input layer width.
pub fn forward(params: &MlpParams, input: &[f64]) -> (Vec<f64>, ForwardTrace) {
    assert_eq!(
        input.len(),
        params.input_dim(),
        "input length {} does not match input layer width {}",
        input.len(),
        params.input_dim()
    );

    let num_layers = params.num_layers();
    let mut pre_activations = Vec::with_capacity(num_layers);
    let mut activations = Vec::with_capacity(num_layers + 1);
    activations.push(input.to_vec());

    for l in 0..num_layers {
        let in_dim = params.layer_sizes[l];
        let out_dim = params.layer_sizes[l + 1];
        let w = &params.weights[l];
        let b = &params.biases[l];
        let x = &activations[l];

        let mut z = Vec::with_capacity(out_dim);
        for j in 0..out_dim {
            z.push(b[j] + dot(&w[j * in_dim..(j + 1) * in_dim], x));
        }
        let a = if l + 1 < num_layers {
            z.iter().map(|&v| v.tanh()).collect()
        } else {
            z.clone()
        };
        pre_activations.push(z);
        activations.push(a);
    }

    let output = activations.last().expect("at least the input").clone();
    (
        output,
        ForwardTrace {
            pre_activations,
            activations,
        },
    )
}

/// Backward pass for the scalar `L = output · output_grad`: returns exact
/// analytic gradients of `L` with respect to every parameter, plus the
/// gradient with respect to the input.
///
/// `trace` must come from a [`forward`] call on `params` with the input in
/// question; `output_grad.len()` must match the output width.
pub fn backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    output_grad: &[f64],
) -> (MlpGrads, Vec<f64>) {
    assert_eq!(
        output_grad.len(),
        params.output_dim(),
        "output_grad length {} does not match output width {}",
        output_grad.len(),
        params.output_dim()
    );
    assert_eq!(
        trace.activations.len(),
        params.num_layers() + 1,
        "trace does not match network depth"
    );

    let mut grads = MlpGrads::zeros_like(params);
    // dz of the output layer is output_grad itself (identity activation).
    let mut dz = output_grad.to_vec();

    for l in (0..params.num_layers()).rev() {
        let in_dim = params.layer_sizes[l];
        let out_dim = params.layer_sizes[l + 1];
        let x = &trace.activations[l];
        let w = &params.weights[l];

        // Parameter gradients: dW = dz ⊗ x, db = dz.
        let gw = &mut grads.weights[l];
        for j in 0..out_dim {
            let d = dz[j];
            let row = &mut gw[j * in_dim..(j + 1) * in_dim];
            for k in 0..in_dim {
                row[k] = d.mul_add(x[k], row[k]);
            }
        }
        grads.biases[l].copy_from_slice(&dz);

        // Gradient flowing into the layer input: dx = Wᵀ dz.
        let mut dx = vec![0.0f64; in_dim];
        for j in 0..out_dim {
            let d = dz[j];
            let row = &w[j * in_dim..(j + 1) * in_dim];
            for k in 0..in_dim {
                dx[k] = d.mul_add(row[k], dx[k]);
            }
        }

        // Through the previous layer's tanh (skip once we reach the input).
        if l > 0 {
            let a = &trace.activations[l];
            for (g, &ai) in dx.iter_mut().zip(a) {
                *g *= 1.0 - ai * ai;
            }
        }
        dz = dx;
    }

    (grads, dz)
}

/// Numerically stable softmax: subtracts the max logit before
/// exponentiating, so extreme logits cannot overflow. Output entries are
/// finite, non-negative, and sum to 1; the argmax of the output equals the
/// argmax of the logits.
///
/// The normaliser is summed in value order rather than index order, so
/// permuting the logits permutes the output bit-exactly. The gated policy
/// relies on this: relabelling modules must not perturb any downstream
/// rounding.
///
/// Panics on an empty slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty slice");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let mut ordered = exps.clone();
    ordered.sort_by(f64::total_cmp);
    let sum: f64 = ordered.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Backward pass through [`softmax`]: given the softmax output `y` and
/// `dL/dy`, returns `dL/dz` for the logits.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), dy.len(), "softmax grad length mismatch");
    let inner: f64 = y.iter().zip(dy).map(|(&yi, &di)| yi * di).sum();
    y.iter().zip(dy).map(|(&yi, &di)| yi * (di - inner)).collect()
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one network, plus the shared step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamState {
    /// Fresh all-zero state shaped like `params`.
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            step: 0,
        }
    }
}

/// One Adam update with bias correction:
///
/// ```text
/// m ← β₁ m + (1 − β₁) g        v ← β₂ v + (1 − β₂) g²
/// p ← p − lr · m̂ / (√v̂ + ε)    with m̂ = m/(1 − β₁ᵗ), v̂ = v/(1 − β₂ᵗ)
/// ```
///
/// Deterministic given identical inputs; the first step from a fresh state
/// moves each parameter by almost exactly `−lr · sign(g)`.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        assert_eq!(p.len(), g.len(), "adam shape mismatch");
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    };

    assert_eq!(params.weights.len(), grads.weights.len(), "layer count mismatch");
    for l in 0..params.weights.len() {
        update(
            &mut params.weights[l],
            &grads.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        update(
            &mut params.biases[l],
            &grads.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
}
