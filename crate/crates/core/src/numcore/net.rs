//! Time-conditioned feed-forward noise predictor.
//!
//! [`Denoiser`] houses a small MLP that maps a trajectory state to an
//! estimate of the terminal-noise vector (terminal draw minus clean state).
//! It carries two parameter sets: the online parameters updated by gradient
//! steps, and a target copy that gradients never reach (the stop-gradient
//! side of consistency training).
//!
//! Input layout is `[state, conditioning, time embedding]` where the time
//! embedding of `t` has `time_embed_dim` entries `sin(2^k * t)` for
//! `k = 0..time_embed_dim`. Hidden layers use the SiLU activation
//! `z * sigmoid(z)` (smooth, so total derivatives along the trajectory are
//! well defined); the output layer is linear.
//!
//! Gradients are exact reverse-mode derivatives of the forward map, computed
//! layer by layer without an autodiff tape framework — the architecture is a
//! fixed chain, so the backward pass is written out directly.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::rng::SeededRng;
use super::tensor::Tensor;

/// Hidden-layer nonlinearity tag (serialized into checkpoints).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `z * sigmoid(z)`.
    Silu,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!("unknown activation tag {other:?}"))),
        }
    }

    #[inline]
    fn forward(self, z: f64) -> f64 {
        let s = 1.0 / (1.0 + (-z).exp());
        z * s
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        let s = 1.0 / (1.0 + (-z).exp());
        s * (1.0 + z * (1.0 - s))
    }
}

/// One parameter set of the MLP: per-layer weight matrices (row-major,
/// `out_dim x in_dim`) and bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Parameter gradients with shapes mirroring [`NetParams`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += k * other`, used for batch accumulation in a fixed order.
    pub fn add_scaled(&mut self, other: &Grads, k: f64) {
        for (dst, src) in self.weights.iter_mut().zip(&other.weights) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
        for (dst, src) in self.biases.iter_mut().zip(&other.biases) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= k;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= k;
            }
        }
    }

    /// Global L2 norm over all entries.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for w in &self.weights {
            for v in w {
                s += v * v;
            }
        }
        for b in &self.biases {
            for v in b {
                s += v * v;
            }
        }
        s.sqrt()
    }
}

/// Which parameter set a forward pass reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSel {
    Online,
    Target,
}

/// Per-layer inputs and pre-activations recorded during a cached forward.
type ForwardCache<'a> = (&'a mut Vec<Vec<f64>>, &'a mut Vec<Vec<f64>>);

/// Anything that predicts the terminal-noise vector from a trajectory state.
///
/// Implemented by [`Denoiser`] views and by [`OracleEps`], the exact
/// ground-truth predictor used throughout the verification suite.
pub trait EpsModel {
    fn eps(&self, x: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Tensor>;

    /// Cumulative count of forward evaluations (for NFE accounting).
    fn eval_count(&self) -> u64;

    fn reset_evals(&self);
}

/// Exact predictor for a known `(clean, terminal)` pair: always returns
/// `terminal - clean` regardless of the query state. Substituting it into the
/// closed-form solver must reproduce the clean state exactly; the verification
/// battery is built on that identity.
#[derive(Debug)]
pub struct OracleEps {
    eps: Tensor,
    evals: AtomicU64,
}

impl OracleEps {
    pub fn new(clean: &Tensor, terminal: &Tensor) -> Self {
        Self {
            eps: terminal.sub(clean),
            evals: AtomicU64::new(0),
        }
    }
}

impl EpsModel for OracleEps {
    fn eps(&self, _x: &Tensor, _t: f64, _cond: Option<&Tensor>) -> Result<Tensor> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        Ok(self.eps.clone())
    }

    fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn reset_evals(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }
}

/// The noise-prediction network with online and target parameter sets.
#[derive(Debug)]
pub struct Denoiser {
    layer_dims: Vec<usize>,
    time_embed_dim: usize,
    activation: Activation,
    online: NetParams,
    target: NetParams,
    evals: AtomicU64,
}

impl Clone for Denoiser {
    fn clone(&self) -> Self {
        Self {
            layer_dims: self.layer_dims.clone(),
            time_embed_dim: self.time_embed_dim,
            activation: self.activation,
            online: self.online.clone(),
            target: self.target.clone(),
            evals: AtomicU64::new(0),
        }
    }
}

impl Denoiser {
    /// Initializes a network with fan-in-scaled uniform weights and zero
    /// biases. Each weight is drawn from `U(-a, a)` with `a = sqrt(3/fan_in)`,
    /// giving per-layer weight variance `1/fan_in`. The target copy starts
    /// equal to the online parameters.
    pub fn init(layer_dims: &[usize], time_embed_dim: usize, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(
                "layer_dims needs at least input and output entries".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config("layer dims must be >= 1".into()));
        }
        let state_dim = *layer_dims.last().unwrap();
        if layer_dims[0] < state_dim + time_embed_dim {
            return Err(Error::Config(format!(
                "input dim {} cannot hold state dim {} plus time embedding dim {}",
                layer_dims[0], state_dim, time_embed_dim
            )));
        }

        let mut rng = SeededRng::new(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for k in 0..layer_dims.len() - 1 {
            let fan_in = layer_dims[k];
            let fan_out = layer_dims[k + 1];
            let limit = (3.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-limit, limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        let online = NetParams { weights, biases };
        let target = online.clone();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            time_embed_dim,
            activation: Activation::Silu,
            online,
            target,
            evals: AtomicU64::new(0),
        })
    }

    /// Rebuilds a network from explicit parameters (checkpoint load).
    /// The target copy is set equal to the online parameters.
    pub fn from_params(
        layer_dims: &[usize],
        time_embed_dim: usize,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config("invalid layer_dims".into()));
        }
        if weights.len() != layer_dims.len() - 1 || biases.len() != weights.len() {
            return Err(Error::Config("layer count mismatch in parameters".into()));
        }
        for k in 0..weights.len() {
            if weights[k].len() != layer_dims[k] * layer_dims[k + 1] {
                return Err(Error::Config(format!("weight shape mismatch at layer {k}")));
            }
            if biases[k].len() != layer_dims[k + 1] {
                return Err(Error::Config(format!("bias shape mismatch at layer {k}")));
            }
            if weights[k].iter().chain(&biases[k]).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite parameter in layer {k}")));
            }
        }
        let state_dim = *layer_dims.last().unwrap();
        if layer_dims[0] < state_dim + time_embed_dim {
            return Err(Error::Config(
                "input dim too small for state + embedding".into(),
            ));
        }
        let online = NetParams { weights, biases };
        let target = online.clone();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            time_embed_dim,
            activation,
            online,
            target,
            evals: AtomicU64::new(0),
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Dimension of the state the network denoises.
    pub fn state_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Dimension of the conditioning input; 0 means unconditional.
    pub fn cond_dim(&self) -> usize {
        self.layer_dims[0] - self.state_dim() - self.time_embed_dim
    }

    pub fn params(&self) -> &NetParams {
        &self.online
    }

    pub fn target_params(&self) -> &NetParams {
        &self.target
    }

    pub(crate) fn params_mut(&mut self) -> &mut NetParams {
        &mut self.online
    }

    /// Copies the online parameters into the target set.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Exponential-moving-average target update:
    /// `target <- decay * target + (1 - decay) * online`.
    /// `decay = 0` reduces to [`Denoiser::sync_target`].
    pub fn ema_update_target(&mut self, decay: f64) {
        assert!((0.0..1.0).contains(&decay), "ema decay must be in [0, 1)");
        for (t, o) in self.target.weights.iter_mut().zip(&self.online.weights) {
            for (tv, ov) in t.iter_mut().zip(o) {
                *tv = decay * *tv + (1.0 - decay) * ov;
            }
        }
        for (t, o) in self.target.biases.iter_mut().zip(&self.online.biases) {
            for (tv, ov) in t.iter_mut().zip(o) {
                *tv = decay * *tv + (1.0 - decay) * ov;
            }
        }
    }

    /// Sinusoidal time embedding: entry `k` is `sin(2^k * t)`.
    fn embed_time(&self, t: f64, out: &mut Vec<f64>) {
        for k in 0..self.time_embed_dim {
            out.push(((1u64 << k) as f64 * t).sin());
        }
    }

    fn assemble_input(&self, x: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Input(format!(
                "state dim {} does not match network state dim {}",
                x.len(),
                self.state_dim()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Input(format!("time {t} outside [0, 1]")));
        }
        let cond_dim = self.cond_dim();
        let mut input = Vec::with_capacity(self.layer_dims[0]);
        input.extend_from_slice(x.data());
        if cond_dim > 0 {
            let c = cond.ok_or_else(|| {
                Error::Input(format!("network expects conditioning of dim {cond_dim}"))
            })?;
            if c.len() != cond_dim {
                return Err(Error::Input(format!(
                    "conditioning dim {} does not match network cond dim {}",
                    c.len(),
                    cond_dim
                )));
            }
            input.extend_from_slice(c.data());
        }
        self.embed_time(t, &mut input);
        Ok(input)
    }

    /// Forward pass through the selected parameter set.
    pub fn forward_with(
        &self,
        sel: ParamSel,
        x: &Tensor,
        t: f64,
        cond: Option<&Tensor>,
    ) -> Result<Tensor> {
        let input = self.assemble_input(x, t, cond)?;
        let params = match sel {
            ParamSel::Online => &self.online,
            ParamSel::Target => &self.target,
        };
        self.evals.fetch_add(1, Ordering::Relaxed);
        let out = self.run_forward(params, &input, None);
        Tensor::new(vec![self.state_dim()], out)
    }

    /// Forward pass through the online parameters.
    pub fn forward(&self, x: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Tensor> {
        self.forward_with(ParamSel::Online, x, t, cond)
    }

    /// Reverse-mode gradients of `<forward(x, t, cond), cotangent>` with
    /// respect to the online parameters.
    // Index loops mirror the row-major weight layout on purpose.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(
        &self,
        x: &Tensor,
        t: f64,
        cond: Option<&Tensor>,
        cotangent: &Tensor,
    ) -> Result<Grads> {
        if cotangent.len() != self.state_dim() {
            return Err(Error::Input(format!(
                "cotangent dim {} does not match output dim {}",
                cotangent.len(),
                self.state_dim()
            )));
        }
        let input = self.assemble_input(x, t, cond)?;
        let n_layers = self.layer_dims.len() - 1;

        // Forward with cached pre-activations and layer inputs.
        let mut layer_inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let _ = self.run_forward(
            &self.online,
            &input,
            Some((&mut layer_inputs, &mut pre_acts)),
        );

        let mut grads = Grads::zeros_like(&self.online);
        // dL/dz of the current layer, starting from the linear output layer.
        let mut delta: Vec<f64> = cotangent.data().to_vec();

        for k in (0..n_layers).rev() {
            let in_dim = self.layer_dims[k];
            let out_dim = self.layer_dims[k + 1];
            let a_in = &layer_inputs[k];
            let w = &self.online.weights[k];

            if k < n_layers - 1 {
                // Hidden layer: fold in the activation derivative at z.
                for (d, z) in delta.iter_mut().zip(&pre_acts[k]) {
                    *d *= self.activation.derivative(*z);
                }
            }

            for o in 0..out_dim {
                let dz = delta[o];
                grads.biases[k][o] = dz;
                let row = o * in_dim;
                for i in 0..in_dim {
                    grads.weights[k][row + i] = dz * a_in[i];
                }
            }

            if k > 0 {
                let mut prev = vec![0.0; in_dim];
                for o in 0..out_dim {
                    let dz = delta[o];
                    let row = o * in_dim;
                    for (i, p) in prev.iter_mut().enumerate() {
                        *p += w[row + i] * dz;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Shared dense-chain evaluation. When `cache` is provided it records each
    /// layer's input and pre-activation for the backward pass.
    fn run_forward(
        &self,
        params: &NetParams,
        input: &[f64],
        mut cache: Option<ForwardCache<'_>>,
    ) -> Vec<f64> {
        let n_layers = self.layer_dims.len() - 1;
        let mut act = input.to_vec();
        for k in 0..n_layers {
            let in_dim = self.layer_dims[k];
            let out_dim = self.layer_dims[k + 1];
            let w = &params.weights[k];
            let b = &params.biases[k];
            let mut z = vec![0.0; out_dim];
            for o in 0..out_dim {
                let row = o * in_dim;
                let mut sum = b[o];
                for i in 0..in_dim {
                    sum = w[row + i].mul_add(act[i], sum);
                }
                z[o] = sum;
            }
            if let Some((inputs, pres)) = cache.as_mut() {
                inputs.push(act.clone());
                pres.push(z.clone());
            }
            act = if k < n_layers - 1 {
                z.iter().map(|&v| self.activation.forward(v)).collect()
            } else {
                z
            };
        }
        act
    }

    /// View of this network through the online parameters.
    pub fn online(&self) -> DenoiserView<'_> {
        DenoiserView {
            net: self,
            sel: ParamSel::Online,
        }
    }

    /// View of this network through the target parameters. Gradients never
    /// reach the target set; evaluating through this view is the stop-gradient
    /// route.
    pub fn target(&self) -> DenoiserView<'_> {
        DenoiserView {
            net: self,
            sel: ParamSel::Target,
        }
    }
}

impl EpsModel for Denoiser {
    fn eps(&self, x: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Tensor> {
        self.forward(x, t, cond)
    }

    fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn reset_evals(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }
}

/// Borrowed view of a [`Denoiser`] pinned to one parameter set.
#[derive(Clone, Copy)]
pub struct DenoiserView<'a> {
    net: &'a Denoiser,
    sel: ParamSel,
}

impl EpsModel for DenoiserView<'_> {
    fn eps(&self, x: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Tensor> {
        self.net.forward_with(self.sel, x, t, cond)
    }

    fn eval_count(&self) -> u64 {
        self.net.evals.load(Ordering::Relaxed)
    }

    fn reset_evals(&self) {
        self.net.evals.store(0, Ordering::Relaxed);
    }
}
