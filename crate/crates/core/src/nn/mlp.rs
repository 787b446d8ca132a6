//! Fully-connected networks with leaky-ReLU hidden layers and optional batch
//! normalization.
//!
//! Layer `k` computes `a = h W + b`, then (hidden layers only) batch norm and
//! the hidden activation. Weights are stored `(in_dim, out_dim)` so a batch of
//! row vectors is mapped with a single matrix product.
//!
//! Besides ordinary reverse-mode gradients the network supports the
//! per-sample input gradient of a scalar output and the parameter gradient of
//! the gradient penalty `mean_i (||∇_x o(x_i)||₂ − 1)²`. The penalty gradient
//! is derived by hand: with leaky-ReLU activations the input gradient is a
//! product of weight matrices and locally constant activation masks, so its
//! parameter derivative is one extra forward sweep of tangents through the
//! backward graph.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::Real;
use crate::error::{Error, Result};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
}

impl Activation {
    #[inline]
    fn slope<T: Real>(self) -> T {
        match self {
            Activation::LeakyRelu { slope } => T::of(slope),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

/// Batch statistics (train) or running statistics (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    /// Input dimension first, output dimension last.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub batch_norm: bool,
}

impl MlpSpec {
    /// Leaky-ReLU(0.2) hidden layers, linear output, no batch norm.
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            hidden_activation: Activation::LeakyRelu {
                slope: DEFAULT_LEAKY_SLOPE,
            },
            output_activation: OutputActivation::Linear,
            batch_norm: false,
        }
    }

    /// `input → hidden… → output` convenience constructor.
    pub fn chain(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output_activation = output;
        self
    }

    pub fn with_batch_norm(mut self, batch_norm: bool) -> Self {
        self.batch_norm = batch_norm;
        self
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.hidden_activation = Activation::LeakyRelu { slope };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config(format!(
                "network needs at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        let Activation::LeakyRelu { slope } = self.hidden_activation;
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::config(format!(
                "leaky relu slope must lie in (0, 1), got {slope}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn param_count(&self) -> usize {
        let n = self.n_layers();
        self.layer_sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let bn = if self.batch_norm && k + 1 < n {
                    2 * w[1]
                } else {
                    0
                };
                w[0] * w[1] + w[1] + bn
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// Shape `(in_dim, out_dim)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub norm: Option<BatchNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layers: Vec<Dense<T>>,
}

/// Gradients shaped like an [`Mlp`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub gamma: Option<Array1<T>>,
    pub beta: Option<Array1<T>>,
}

impl<T: Real> Grads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g.as_slice().expect("standard layout"));
                out.push(b.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn flat(&self) -> Vec<T> {
        self.slices().concat()
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v * factor);
            l.bias.mapv_inplace(|v| v * factor);
            if let Some(g) = &mut l.gamma {
                g.mapv_inplace(|v| v * factor);
            }
            if let Some(b) = &mut l.beta {
                b.mapv_inplace(|v| v * factor);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    mode: Mode,
    pub(super) layers: Vec<LayerCache<T>>,
    output: Array2<T>,
}

#[derive(Debug, Clone)]
pub(super) struct LayerCache<T> {
    input: Array2<T>,
    /// Pre-activation after batch norm (hidden) or raw output pre-activation.
    pre: Array2<T>,
    pub(super) norm: Option<NormCache<T>>,
}

#[derive(Debug, Clone)]
pub(super) struct NormCache<T> {
    pub(super) xhat: Array2<T>,
    inv_std: Array1<T>,
    pub(super) batch_mean: Array1<T>,
    pub(super) batch_var: Array1<T>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    pub fn into_output(self) -> Array2<T> {
        self.output
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[inline]
fn leaky<T: Real>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

#[inline]
fn leaky_grad<T: Real>(v: T, slope: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        slope
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Real> Mlp<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.n_layers();
        let layers = spec
            .layer_sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    T::of(dist.sample(&mut rng))
                });
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                    norm: (spec.batch_norm && k + 1 < n).then(|| BatchNorm::new(fan_out)),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Build from explicit layers; shapes must chain per `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense<T>>) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_layers();
        if layers.len() != n {
            return Err(Error::shape(format!(
                "spec has {n} layers, got {}",
                layers.len()
            )));
        }
        for (k, (layer, w)) in layers.iter().zip(spec.layer_sizes.windows(2)).enumerate() {
            if layer.weight.dim() != (w[0], w[1]) || layer.bias.len() != w[1] {
                return Err(Error::shape(format!(
                    "layer {k}: expected weight {}x{} and bias {}, got {:?} and {}",
                    w[0],
                    w[1],
                    w[1],
                    layer.weight.dim(),
                    layer.bias.len()
                )));
            }
            let wants_norm = spec.batch_norm && k + 1 < n;
            match &layer.norm {
                Some(bn) if wants_norm => {
                    let ok = [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                        .iter()
                        .all(|a| a.len() == w[1]);
                    if !ok {
                        return Err(Error::shape(format!(
                            "layer {k}: batch-norm width mismatch"
                        )));
                    }
                    if bn.running_var.iter().any(|&v| v < T::zero()) {
                        return Err(Error::config(format!(
                            "layer {k}: negative running variance"
                        )));
                    }
                }
                None if !wants_norm => {}
                _ => {
                    return Err(Error::shape(format!(
                        "layer {k}: batch-norm presence disagrees with spec"
                    )))
                }
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Dense {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias.as_standard_layout().into_owned(),
                norm: l.norm,
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    gamma: l.norm.as_ref().map(|n| Array1::zeros(n.gamma.len())),
                    beta: l.norm.as_ref().map(|n| Array1::zeros(n.beta.len())),
                })
                .collect(),
        }
    }

    /// Trainable parameter buffers in persistence order (weight, bias, gamma, beta per layer).
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            if let Some(n) = &l.norm {
                out.push(n.gamma.as_slice().expect("standard layout"));
                out.push(n.beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Some(n) = &mut l.norm {
                out.push(n.gamma.as_slice_mut().expect("standard layout"));
                out.push(n.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn params_flat(&self) -> Vec<T> {
        self.param_slices().concat()
    }

    pub fn set_params_flat(&mut self, values: &[T]) -> Result<()> {
        let total = self.param_count();
        if values.len() != total {
            return Err(Error::shape(format!(
                "expected {total} parameters, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for slot in self.param_slices_mut() {
            let len = slot.len();
            slot.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<T>, mode: Mode) -> Result<Array2<T>> {
        Ok(self.forward_tape(x, mode)?.output)
    }

    /// Forward pass keeping every intermediate needed for [`Mlp::backward`].
    pub fn forward_tape(&self, x: ArrayView2<T>, mode: Mode) -> Result<Tape<T>> {
        self.check_input(&x)?;
        let slope = self.spec.hidden_activation.slope::<T>();
        let eps = T::of(BN_EPS);
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weight);
            a += &layer.bias;
            let norm = match &layer.norm {
                Some(bn) if k < last => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let n = T::of(a.nrows() as f64);
                            let mean = a.sum_axis(Axis(0)) / n;
                            let var = (&a - &mean).mapv(|d| d * d).sum_axis(Axis(0)) / n;
                            (mean, var)
                        }
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
                    let xhat = (&a - &mean) * &inv_std;
                    a = &xhat * &bn.gamma + &bn.beta;
                    Some(NormCache {
                        xhat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                    })
                }
                _ => None,
            };
            let next = if k < last {
                a.mapv(|v| leaky(v, slope))
            } else {
                match self.spec.output_activation {
                    OutputActivation::Linear => a.clone(),
                    OutputActivation::Sigmoid => a.mapv(sigmoid),
                }
            };
            caches.push(LayerCache {
                input: h,
                pre: a,
                norm,
            });
            h = next;
        }
        Ok(Tape {
            mode,
            layers: caches,
            output: h,
        })
    }

    /// Fold a train-mode tape's batch statistics into the running statistics.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        let m = T::of(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (layer, cache) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(nc)) = (&mut layer.norm, &cache.norm) {
                Zip::from(&mut bn.running_mean)
                    .and(&nc.batch_mean)
                    .for_each(|r, &b| *r = m * *r + one_m * b);
                Zip::from(&mut bn.running_var)
                    .and(&nc.batch_var)
                    .for_each(|r, &b| *r = m * *r + one_m * b);
            }
        }
    }

    /// Backpropagate `d_out` (gradient w.r.t. the activated output).
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient w.r.t. the network input is returned.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        d_out: ArrayView2<T>,
        grads: Option<&mut Grads<T>>,
    ) -> Result<Array2<T>> {
        if d_out.dim() != tape.output.dim() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                d_out.dim(),
                tape.output.dim()
            )));
        }
        let d_pre = match self.spec.output_activation {
            OutputActivation::Linear => d_out.to_owned(),
            OutputActivation::Sigmoid => {
                let mut d = d_out.to_owned();
                Zip::from(&mut d)
                    .and(&tape.output)
                    .for_each(|d, &y| *d *= y * (T::one() - y));
                d
            }
        };
        Ok(self.backward_from_pre(tape, d_pre, grads))
    }

    /// Backward pass starting at the output pre-activation.
    fn backward_from_pre(
        &self,
        tape: &Tape<T>,
        mut d_a: Array2<T>,
        mut grads: Option<&mut Grads<T>>,
    ) -> Array2<T> {
        let slope = self.spec.hidden_activation.slope::<T>();
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let cache = &tape.layers[k];
            if k < last {
                // d_a currently holds the gradient w.r.t. the activated output.
                Zip::from(&mut d_a)
                    .and(&cache.pre)
                    .for_each(|d, &s| *d *= leaky_grad(s, slope));
                if let (Some(bn), Some(nc)) = (&layer.norm, &cache.norm) {
                    if let Some(g) = grads.as_deref_mut() {
                        let lg = &mut g.layers[k];
                        if let Some(gg) = &mut lg.gamma {
                            *gg += &(&d_a * &nc.xhat).sum_axis(Axis(0));
                        }
                        if let Some(gb) = &mut lg.beta {
                            *gb += &d_a.sum_axis(Axis(0));
                        }
                    }
                    let d_xhat = &d_a * &bn.gamma;
                    d_a = match tape.mode {
                        Mode::Eval => d_xhat * &nc.inv_std,
                        Mode::Train => {
                            let n = T::of(d_xhat.nrows() as f64);
                            let sum_d = d_xhat.sum_axis(Axis(0));
                            let sum_dx = (&d_xhat * &nc.xhat).sum_axis(Axis(0));
                            let scaled = &nc.inv_std / n;
                            ((d_xhat * n) - &sum_d - &nc.xhat * &sum_dx) * &scaled
                        }
                    };
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                let lg = &mut g.layers[k];
                ndarray::linalg::general_mat_mul(
                    T::one(),
                    &cache.input.t(),
                    &d_a,
                    T::one(),
                    &mut lg.weight,
                );
                lg.bias += &d_a.sum_axis(Axis(0));
            }
            d_a = d_a.dot(&layer.weight.t());
        }
        d_a
    }

    fn check_scalar(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::contract(format!(
                "input gradients need a scalar-output network, output dim is {}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Per-row gradient of the scalar output pre-activation w.r.t. the input,
    /// with batch norm in eval mode.
    pub fn input_gradient(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_scalar()?;
        let tape = self.forward_tape(x, Mode::Eval)?;
        let ones = Array2::ones((x.nrows(), 1));
        Ok(self.backward_from_pre(&tape, ones, None))
    }

    /// Gradient penalty `mean_i (||∇_x o(x_i)||₂ − 1)²` on the pre-activation
    /// output, batch norm in eval mode.
    ///
    /// When `grads` is given, `scale` times the penalty's parameter gradient is
    /// accumulated into it. Returns the unscaled penalty.
    pub fn gradient_penalty(
        &self,
        x: ArrayView2<T>,
        scale: T,
        grads: Option<&mut Grads<T>>,
    ) -> Result<T> {
        self.check_scalar()?;
        let n_rows = x.nrows();
        if n_rows == 0 {
            return Err(Error::contract("gradient penalty on an empty batch"));
        }
        let tape = self.forward_tape(x, Mode::Eval)?;
        let slope = self.spec.hidden_activation.slope::<T>();
        let n_layers = self.layers.len();

        // Input-gradient sweep. `gs[k]` is the gradient w.r.t. the input of
        // layer k, `es[k]` w.r.t. its pre-activation `a_k` (before batch norm).
        // `factors[k]` is the local derivative d h_{k+1} / d a_k for hidden layers.
        let mut factors: Vec<Option<Array2<T>>> = vec![None; n_layers];
        for k in 0..n_layers - 1 {
            let cache = &tape.layers[k];
            let mut f = cache.pre.mapv(|s| leaky_grad(s, slope));
            if let (Some(bn), Some(nc)) = (&self.layers[k].norm, &cache.norm) {
                let c = &bn.gamma * &nc.inv_std;
                f *= &c;
            }
            factors[k] = Some(f);
        }
        let mut es: Vec<Array2<T>> = vec![Array2::zeros((0, 0)); n_layers];
        let mut gs: Vec<Array2<T>> = vec![Array2::zeros((0, 0)); n_layers];
        es[n_layers - 1] = Array2::ones((n_rows, 1));
        for k in (0..n_layers).rev() {
            gs[k] = es[k].dot(&self.layers[k].weight.t());
            if k > 0 {
                es[k - 1] = &gs[k] * factors[k - 1].as_ref().expect("hidden layer");
            }
        }

        let u = &gs[0];
        let mut total = T::zero();
        let mut r = Array2::zeros(u.raw_dim());
        let two = T::of(2.0);
        let inv_n = T::one() / T::of(n_rows as f64);
        for (row, mut r_row) in u.outer_iter().zip(r.outer_iter_mut()) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let dev = norm - T::one();
            total += dev * dev;
            if norm > T::zero() {
                let coeff = two * dev / norm * scale * inv_n;
                Zip::from(&mut r_row)
                    .and(&row)
                    .for_each(|r, &v| *r = coeff * v);
            }
        }
        let penalty = total * inv_n;

        if let Some(g) = grads {
            // Tangent sweep through the input-gradient graph.
            let mut g_bar = r;
            for k in 0..n_layers {
                let w = &self.layers[k].weight;
                ndarray::linalg::general_mat_mul(
                    T::one(),
                    &g_bar.t(),
                    &es[k],
                    T::one(),
                    &mut g.layers[k].weight,
                );
                if k + 1 == n_layers {
                    break;
                }
                let e_bar = g_bar.dot(w);
                let f = factors[k].as_ref().expect("hidden layer");
                if let Some(nc) = &tape.layers[k].norm {
                    // es[k] = gs[k+1] ⊙ mask ⊙ (gamma · inv_std)
                    let mask = tape.layers[k].pre.mapv(|s| leaky_grad(s, slope));
                    let c_bar = (&e_bar * &gs[k + 1] * &mask).sum_axis(Axis(0));
                    if let Some(gg) = &mut g.layers[k].gamma {
                        *gg += &(&c_bar * &nc.inv_std);
                    }
                }
                g_bar = e_bar * f;
            }
        }
        Ok(penalty)
    }
}
