//! Minimal fully-connected network engine.
//!
//! Dense layers with a shared hidden nonlinearity and a separate output
//! nonlinearity, exact reverse-mode gradients, adaptive-moment updates,
//! fan-based initialization, a finite-difference gradient checker, and a
//! plain-text weight format (`MLPv1`).
//!
//! Parameter values are immutable snapshots from the caller's point of
//! view: training owns a single copy and mutates it on one thread, while
//! any number of threads may run forward passes on a shared snapshot.

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::textio::{fmt_f64, read_file, write_file};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// Slope of the leaky rectifier's negative branch.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Named nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Rectifier with slope [`LEAKY_SLOPE`] for negative inputs.
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }

    /// Whether the derivative jumps at z = 0 (rectifier kink).
    fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Result<Activation> {
        match name {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::Invalid(format!("unknown activation {name:?}"))),
        }
    }
}

/// Network shape: layer widths from input to output plus the hidden and
/// output nonlinearities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<MlpSpec> {
        if layer_sizes.len() < 2 {
            return Err(Error::Invalid(format!(
                "an MLP needs at least input and output layers, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::Invalid(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(MlpSpec {
            layer_sizes,
            hidden_activation,
            output_activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers (affine maps).
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn activation_of_layer(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// Weights and biases for every layer. `weights[l]` is row-major with
/// `layer_sizes[l+1]` rows of `layer_sizes[l]` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn assert_finite(&self) {
        for layer in self.weights.iter().chain(self.biases.iter()) {
            for &w in layer {
                assert!(w.is_finite(), "non-finite parameter {w}");
            }
        }
    }
}

/// Fan-based scaled-uniform initialization: weights uniform on
/// (-sqrt(6/fan_in), +sqrt(6/fan_in)) so the per-layer weight variance is
/// 2/fan_in; biases start at zero.
pub fn init_params(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> MlpParams {
    let mut weights = Vec::with_capacity(spec.n_layers());
    let mut biases = Vec::with_capacity(spec.n_layers());
    for l in 0..spec.n_layers() {
        let fan_in = spec.layer_sizes[l];
        let fan_out = spec.layer_sizes[l + 1];
        let limit = (6.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    MlpParams {
        spec: spec.clone(),
        weights,
        biases,
    }
}

/// Per-layer activations recorded during a forward pass: pre-activations
/// and post-activations, with the raw input at the front.
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace has at least one layer")
    }
}

fn affine(weights: &[f64], biases: &[f64], input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for (row, b) in weights.chunks_exact(input.len()).zip(biases) {
        let mut acc = *b;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        out.push(acc);
    }
}

/// Run the network and keep the per-layer activations for backprop.
pub fn forward_trace(params: &MlpParams, input: &[f64]) -> ForwardTrace {
    assert_eq!(
        input.len(),
        params.spec.input_width(),
        "input width {} != spec input width {}",
        input.len(),
        params.spec.input_width()
    );
    let mut pre = Vec::with_capacity(params.spec.n_layers());
    let mut post = Vec::with_capacity(params.spec.n_layers());
    let mut x = input.to_vec();
    for l in 0..params.spec.n_layers() {
        let mut z = Vec::new();
        affine(&params.weights[l], &params.biases[l], &x, &mut z);
        let act = params.spec.activation_of_layer(l);
        x = z.iter().map(|&v| act.apply(v)).collect();
        pre.push(z);
        post.push(x.clone());
    }
    ForwardTrace {
        input: input.to_vec(),
        pre,
        post,
    }
}

/// Standard affine-then-activation composition.
pub fn forward(params: &MlpParams, input: &[f64]) -> Vec<f64> {
    forward_trace(params, input).output().to_vec()
}

/// Gradients shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Gradients {
        Gradients {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            layer.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            layer.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Backpropagate `upstream` (the loss gradient with respect to the
/// network output) through a recorded trace, adding parameter gradients
/// into `acc` and returning the gradient with respect to the input.
pub fn backward_from_trace(
    params: &MlpParams,
    trace: &ForwardTrace,
    upstream: &[f64],
    acc: &mut Gradients,
) -> Vec<f64> {
    let n_layers = params.spec.n_layers();
    assert_eq!(upstream.len(), params.spec.output_width(), "upstream width mismatch");

    // delta = dL/d(pre-activation) of the current layer
    let last_act = params.spec.activation_of_layer(n_layers - 1);
    let mut delta: Vec<f64> = upstream
        .iter()
        .zip(&trace.pre[n_layers - 1])
        .map(|(&u, &z)| u * last_act.derivative(z))
        .collect();

    for l in (0..n_layers).rev() {
        let below: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let in_w = below.len();
        {
            let gw = &mut acc.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut gw[o * in_w..(o + 1) * in_w];
                for (g, &x) in row.iter_mut().zip(below) {
                    *g += d * x;
                }
            }
            for (g, &d) in acc.biases[l].iter_mut().zip(&delta) {
                *g += d;
            }
        }
        // propagate: delta_below = W^T delta, times the activation
        // derivative of the layer below (none for the raw input)
        let mut down = vec![0.0; in_w];
        for (o, &d) in delta.iter().enumerate() {
            let row = &params.weights[l][o * in_w..(o + 1) * in_w];
            for (dv, &w) in down.iter_mut().zip(row) {
                *dv += w * d;
            }
        }
        if l == 0 {
            return down;
        }
        let act = params.spec.activation_of_layer(l - 1);
        delta = down
            .iter()
            .zip(&trace.pre[l - 1])
            .map(|(&d, &z)| d * act.derivative(z))
            .collect();
    }
    unreachable!("loop returns at l == 0");
}

/// Exact reverse-mode gradients of [`forward`] with respect to every
/// parameter and to the input.
pub fn backward(params: &MlpParams, input: &[f64], upstream: &[f64]) -> (Gradients, Vec<f64>) {
    let trace = forward_trace(params, input);
    let mut grads = Gradients::zeros_like(params);
    let input_grad = backward_from_trace(params, &trace, upstream, &mut grads);
    (grads, input_grad)
}

/// Adaptive-moment optimizer state: step count, first/second moment
/// accumulators shaped like the parameters, and the update constants.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Gradients,
    v: Gradients,
}

impl OptimizerState {
    /// Fresh state with the adversarial-training defaults
    /// (lr 2e-4, decay 0.5/0.999, epsilon 1e-8).
    pub fn new(params: &MlpParams) -> OptimizerState {
        OptimizerState {
            step: 0,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> OptimizerState {
        self.learning_rate = lr;
        self
    }
}

/// One adaptive-moment update with bias correction, applied in place.
pub fn adam_step(params: &mut MlpParams, grads: &Gradients, state: &mut OptimizerState) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let lr = state.learning_rate;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
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

const GRAD_CHECK_STEP: f64 = 1e-5;

/// Relative-error metric used by the gradient checker; the floor keeps
/// finite-difference rounding noise on near-zero gradients from
/// registering as disagreement.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-2)
}

/// Rectifier gate pattern of a trace, for detecting kink crossings.
fn gate_pattern(params: &MlpParams, trace: &ForwardTrace) -> Vec<bool> {
    let mut gates = Vec::new();
    for l in 0..params.spec.n_layers() {
        if params.spec.activation_of_layer(l).has_kink() {
            gates.extend(trace.pre[l].iter().map(|&z| z >= 0.0));
        }
    }
    gates
}

/// Compare [`backward`] against central finite differences on random
/// parameters, input, and probe direction drawn from `seed`.
///
/// The probe is L = upstream . forward(params, input); every parameter
/// and input coordinate is perturbed by +-1e-5. Coordinates whose
/// perturbation flips a rectifier gate are excluded: the function is not
/// differentiable there and a central difference estimates neither
/// one-sided derivative. Returns the maximum relative error observed.
pub fn grad_check(spec: &MlpSpec, seed: u64) -> f64 {
    let mut rng = derived_rng(seed, 0);
    let params = init_params(spec, &mut rng);
    let input: Vec<f64> = (0..spec.input_width())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let upstream: Vec<f64> = (0..spec.output_width())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    let (grads, input_grad) = backward(&params, &input, &upstream);
    let probe = |p: &MlpParams, x: &[f64]| -> (f64, Vec<bool>) {
        let trace = forward_trace(p, x);
        let loss = upstream
            .iter()
            .zip(trace.output())
            .map(|(&u, &y)| u * y)
            .sum::<f64>();
        (loss, gate_pattern(p, &trace))
    };

    let mut max_err: f64 = 0.0;
    let mut scratch = params.clone();
    for l in 0..params.weights.len() {
        for which in 0..2 {
            let n = if which == 0 {
                params.weights[l].len()
            } else {
                params.biases[l].len()
            };
            for j in 0..n {
                let (orig, analytic) = if which == 0 {
                    (params.weights[l][j], grads.weights[l][j])
                } else {
                    (params.biases[l][j], grads.biases[l][j])
                };
                let slot = |p: &mut MlpParams, v: f64| {
                    if which == 0 {
                        p.weights[l][j] = v;
                    } else {
                        p.biases[l][j] = v;
                    }
                };
                slot(&mut scratch, orig + GRAD_CHECK_STEP);
                let (lp, gp) = probe(&scratch, &input);
                slot(&mut scratch, orig - GRAD_CHECK_STEP);
                let (lm, gm) = probe(&scratch, &input);
                slot(&mut scratch, orig);
                if gp == gm {
                    let fd = (lp - lm) / (2.0 * GRAD_CHECK_STEP);
                    max_err = max_err.max(rel_err(analytic, fd));
                }
            }
        }
    }
    let mut x = input.clone();
    for (j, &analytic) in input_grad.iter().enumerate() {
        x[j] = input[j] + GRAD_CHECK_STEP;
        let (lp, gp) = probe(&params, &x);
        x[j] = input[j] - GRAD_CHECK_STEP;
        let (lm, gm) = probe(&params, &x);
        x[j] = input[j];
        if gp == gm {
            let fd = (lp - lm) / (2.0 * GRAD_CHECK_STEP);
            max_err = max_err.max(rel_err(analytic, fd));
        }
    }
    max_err
}

const WEIGHTS_MAGIC: &str = "MLPv1";

impl MlpParams {
    /// Serialize to the `MLPv1` text format: magic line, layer sizes,
    /// then row-major weights and biases per layer with 17 significant
    /// digits. Activations are not part of the file; callers supply them
    /// on load.
    pub fn to_weight_text(&self) -> String {
        let mut out = String::new();
        out.push_str(WEIGHTS_MAGIC);
        out.push('\n');
        let sizes: Vec<String> = self.spec.layer_sizes.iter().map(|s| s.to_string()).collect();
        out.push_str(&sizes.join(" "));
        out.push('\n');
        for l in 0..self.spec.n_layers() {
            let in_w = self.spec.layer_sizes[l];
            for row in self.weights[l].chunks_exact(in_w) {
                let cells: Vec<String> = row.iter().map(|&w| fmt_f64(w)).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
            let cells: Vec<String> = self.biases[l].iter().map(|&b| fmt_f64(b)).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_weight_text(
        text: &str,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<MlpParams> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim() == WEIGHTS_MAGIC => {}
            other => {
                return Err(Error::Invalid(format!(
                    "weight file must start with {WEIGHTS_MAGIC}, got {other:?}"
                )))
            }
        }
        let sizes_line = lines
            .next()
            .ok_or_else(|| Error::Invalid("weight file missing layer sizes".into()))?;
        let layer_sizes: Vec<usize> = sizes_line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Invalid(format!("bad layer size {t:?}")))
            })
            .collect::<Result<_>>()?;
        let spec = MlpSpec::new(layer_sizes, hidden_activation, output_activation)?;

        let mut values = lines.flat_map(str::split_whitespace).map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad weight value {t:?}")))
        });
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(
                    values
                        .next()
                        .ok_or_else(|| Error::Invalid("weight file truncated".into()))??,
                );
            }
            Ok(out)
        };
        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            weights.push(take(spec.layer_sizes[l] * spec.layer_sizes[l + 1])?);
            biases.push(take(spec.layer_sizes[l + 1])?);
        }
        if values.next().is_some() {
            return Err(Error::Invalid("trailing values in weight file".into()));
        }
        let params = MlpParams {
            spec,
            weights,
            biases,
        };
        params.assert_finite();
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_weight_text())
    }

    pub fn load(
        path: &Path,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<MlpParams> {
        Self::from_weight_text(&read_file(path)?, hidden_activation, output_activation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn spec(sizes: &[usize], hidden: Activation, output: Activation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), hidden, output).unwrap()
    }

    #[test]
    fn forward_zero_weights_yields_bias() {
        let s = spec(&[3, 2], Activation::Relu, Activation::Identity);
        let params = MlpParams {
            spec: s,
            weights: vec![vec![0.0; 6]],
            biases: vec![vec![0.25, -1.5]],
        };
        assert_eq!(forward(&params, &[9.0, -3.0, 4.4]), vec![0.25, -1.5]);
    }

    #[test]
    fn forward_identity_layer_passes_input_through() {
        let s = spec(&[3, 3], Activation::Relu, Activation::Identity);
        let mut weights = vec![0.0; 9];
        for i in 0..3 {
            weights[i * 3 + i] = 1.0;
        }
        let params = MlpParams {
            spec: s,
            weights: vec![weights],
            biases: vec![vec![0.0; 3]],
        };
        let x = [0.3, -2.0, 7.5];
        assert_eq!(forward(&params, &x), x.to_vec());
    }

    // Straight-line matrix-product oracle, written independently of the
    // implementation above.
    fn forward_oracle(params: &MlpParams, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let n = params.spec.n_layers();
        for l in 0..n {
            let in_w = params.spec.layer_sizes[l];
            let out_w = params.spec.layer_sizes[l + 1];
            let mut y = vec![0.0; out_w];
            for o in 0..out_w {
                let mut z = params.biases[l][o];
                for i in 0..in_w {
                    z += params.weights[l][o * in_w + i] * x[i];
                }
                let act = if l + 1 == n {
                    params.spec.output_activation
                } else {
                    params.spec.hidden_activation
                };
                y[o] = act.apply(z);
            }
            x = y;
        }
        x
    }

    #[test]
    fn forward_matches_matrix_product_oracle() {
        let s = spec(&[4, 7, 5, 3], Activation::LeakyRelu, Activation::Sigmoid);
        let mut rng = seeded_rng(2);
        let params = init_params(&s, &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = forward(&params, &x);
            let want = forward_oracle(&params, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let s = spec(&[3, 4, 2], Activation::Relu, Activation::Identity);
        let params = init_params(&s, &mut seeded_rng(5));
        let (grads, input_grad) = backward(&params, &[1.0, 2.0, 3.0], &[0.0, 0.0]);
        assert!(input_grad.iter().all(|&g| g == 0.0));
        for layer in grads.weights.iter().chain(grads.biases.iter()) {
            assert!(layer.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_linear_net_is_outer_product() {
        let s = spec(&[3, 2], Activation::Identity, Activation::Identity);
        let params = init_params(&s, &mut seeded_rng(6));
        let input = [1.5, -0.5, 2.0];
        let upstream = [2.0, -3.0];
        let (grads, _) = backward(&params, &input, &upstream);
        for (o, &u) in upstream.iter().enumerate() {
            for (i, &x) in input.iter().enumerate() {
                assert!((grads.weights[0][o * 3 + i] - u * x).abs() < 1e-12);
            }
            assert!((grads.biases[0][o] - u).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (i, s) in [
            spec(&[3, 8, 5, 2], Activation::Relu, Activation::Identity),
            spec(&[4, 6, 1], Activation::LeakyRelu, Activation::Sigmoid),
            spec(&[2, 5, 5, 3], Activation::Sigmoid, Activation::Identity),
        ]
        .into_iter()
        .enumerate()
        {
            let err = grad_check(&s, 100 + i as u64);
            assert!(err < 1e-4, "spec {i}: rel err {err}");
        }
    }

    #[test]
    fn grad_check_table_shapes_and_linear() {
        // The two reference architecture shapes.
        let gen = spec(&[8, 96, 64, 2], Activation::Relu, Activation::Identity);
        let disc = spec(&[8, 64, 32, 1], Activation::LeakyRelu, Activation::Sigmoid);
        assert!(grad_check(&gen, 1) < 1e-4);
        assert!(grad_check(&disc, 2) < 1e-4);

        let linear = spec(&[5, 4, 3], Activation::Identity, Activation::Identity);
        let err = grad_check(&linear, 3);
        assert!(err < 1e-8, "linear rel err {err}");
    }

    #[test]
    fn grad_check_is_deterministic() {
        let s = spec(&[3, 10, 2], Activation::Relu, Activation::Identity);
        assert_eq!(grad_check(&s, 77), grad_check(&s, 77));
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let s = spec(&[2, 3, 1], Activation::Relu, Activation::Identity);
        let mut params = init_params(&s, &mut seeded_rng(8));
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        let mut state = OptimizerState::new(&params);
        adam_step(&mut params, &grads, &mut state);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let s = spec(&[1, 1], Activation::Identity, Activation::Identity);
        let mut params = MlpParams {
            spec: s,
            weights: vec![vec![0.7]],
            biases: vec![vec![0.0]],
        };
        let mut grads = Gradients::zeros_like(&params);
        grads.weights[0][0] = -3.2;
        let mut state = OptimizerState::new(&params).with_learning_rate(0.01);
        adam_step(&mut params, &grads, &mut state);
        // bias-corrected first step has unit normalized magnitude
        assert!((params.weights[0][0] - (0.7 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_descends_a_convex_quadratic() {
        // minimize (w - 3)^2 for a scalar parameter
        let s = spec(&[1, 1], Activation::Identity, Activation::Identity);
        let mut params = MlpParams {
            spec: s,
            weights: vec![vec![0.0]],
            biases: vec![vec![0.0]],
        };
        let mut state = OptimizerState::new(&params).with_learning_rate(0.01);
        let mut grads = Gradients::zeros_like(&params);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let w = params.weights[0][0];
            let loss = (w - 3.0) * (w - 3.0);
            assert!(loss < last, "loss must strictly decrease: {loss} !< {last}");
            last = loss;
            grads.weights[0][0] = 2.0 * (w - 3.0);
            adam_step(&mut params, &grads, &mut state);
        }
    }

    #[test]
    fn initialization_variance_tracks_fan_in() {
        let s = spec(&[8, 96, 64, 2], Activation::Relu, Activation::Identity);
        for l in 0..s.n_layers() {
            let fan_in = s.layer_sizes[l];
            let want = 2.0 / fan_in as f64;
            let mut acc = 0.0;
            let mut count = 0usize;
            for seed in 0..10 {
                let params = init_params(&s, &mut seeded_rng(seed));
                for &w in &params.weights[l] {
                    acc += w * w;
                    count += 1;
                }
            }
            let var = acc / count as f64; // mean is 0 by construction
            assert!(
                (var - want).abs() / want < 0.2,
                "layer {l}: sample variance {var} vs prescribed {want}"
            );
        }
    }

    #[test]
    fn weight_text_round_trip_preserves_forward_bits() {
        let s = spec(&[5, 9, 4], Activation::LeakyRelu, Activation::Identity);
        let params = init_params(&s, &mut seeded_rng(12));
        let text = params.to_weight_text();
        let back =
            MlpParams::from_weight_text(&text, Activation::LeakyRelu, Activation::Identity)
                .unwrap();
        assert_eq!(params, back);
        let x = [0.1, -0.7, 2.2, 0.0, 1.4];
        let y0 = forward(&params, &x);
        let y1 = forward(&back, &x);
        assert_eq!(y0, y1);
        assert!(text.starts_with("MLPv1\n5 9 4\n"));
    }

    #[test]
    fn weight_text_rejects_corruption() {
        let s = spec(&[2, 2], Activation::Relu, Activation::Identity);
        let params = init_params(&s, &mut seeded_rng(13));
        let text = params.to_weight_text();
        assert!(MlpParams::from_weight_text(
            &text.replace("MLPv1", "MLPv2"),
            Activation::Relu,
            Activation::Identity
        )
        .is_err());
        let truncated = &text[..text.len() - 25];
        assert!(
            MlpParams::from_weight_text(truncated, Activation::Relu, Activation::Identity)
                .is_err()
        );
    }

    #[test]
    fn spec_rejects_degenerate_shapes() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, Activation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], Activation::Relu, Activation::Identity).is_err());
    }

    #[test]
    #[should_panic(expected = "input width")]
    fn forward_rejects_dimension_mismatch() {
        let s = spec(&[3, 2], Activation::Relu, Activation::Identity);
        let params = init_params(&s, &mut seeded_rng(1));
        forward(&params, &[1.0, 2.0]);
    }
}
