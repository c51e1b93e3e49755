use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::{OptimizerKind, OptimizerState};
use crate::scalar::Scalar;

/// Output nonlinearity of the last layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutputActivation {
    /// `mid + half * tanh(z)` spanning `[lo, hi]`.
    Tanh { lo: f64, hi: f64 },
    Linear,
}

/// Architecture of a dense network with rectified hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output: OutputActivation,
    /// Layer whose input gets one extra column holding the action.
    pub action_inject_layer: Option<usize>,
}

impl MlpSpec {
    pub const DEFAULT_HIDDEN: [usize; 3] = [400, 300, 100];

    /// Deterministic policy with outputs in `[lo, hi]`.
    pub fn actor(state_dim: usize, hidden: &[usize], lo: f64, hi: f64) -> Self {
        Self {
            input_dim: state_dim,
            hidden: hidden.to_vec(),
            output_dim: 1,
            output: OutputActivation::Tanh { lo, hi },
            action_inject_layer: None,
        }
    }

    /// Action-value network; the action joins at the second hidden layer.
    pub fn critic(state_dim: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim: state_dim,
            hidden: hidden.to_vec(),
            output_dim: 1,
            output: OutputActivation::Linear,
            action_inject_layer: Some(if hidden.is_empty() { 0 } else { 1 }),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `(fan_in, fan_out)` of every affine map.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers())
            .map(|l| {
                let base_in = if l == 0 { self.input_dim } else { self.hidden[l - 1] };
                let extra = usize::from(self.action_inject_layer == Some(l));
                let out = if l < self.hidden.len() { self.hidden[l] } else { self.output_dim };
                (base_in + extra, out)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("network layers must be non-empty".into()));
        }
        if let Some(l) = self.action_inject_layer {
            if l >= self.n_layers() {
                return Err(Error::Config(format!("action injected at layer {l} of {}", self.n_layers())));
            }
        }
        if let OutputActivation::Tanh { lo, hi } = self.output {
            if !(lo < hi) {
                return Err(Error::Config("tanh output range must satisfy lo < hi".into()));
            }
        }
        Ok(())
    }
}

/// Weights `out x in` and biases of one affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_out, fan_in)),
            b: Array1::zeros(fan_out),
        }
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|d| d.w.iter().chain(d.b.iter()).all(|v| v.is_finite()))
    }
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    version: u64,
    /// Input of every affine map (after any action column was appended).
    inputs: Vec<Array2<T>>,
    /// Pre-activations of every affine map.
    pre: Vec<Array2<T>>,
}

/// Result of [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Backward<T> {
    pub params: Gradients<T>,
    /// `batch x input_dim`.
    pub input: Array2<T>,
    /// One entry per batch row when an action is injected.
    pub action: Option<Array1<T>>,
}

/// Dense network with its optimizer state.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layers: Vec<Dense<T>>,
    optimizer: OptimizerState<T>,
    version: u64,
}

impl<T: Scalar> Mlp<T> {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for hidden layers and
    /// `[-3e-3, 3e-3]` for the output layer.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, optimizer: OptimizerKind, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let bound = if l == last { 3e-3 } else { 1.0 / (fan_in as f64).sqrt() };
                let mut draw = || T::lit(rng.gen_range(-bound..bound));
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), &mut draw);
                let b = Array1::from_shape_simple_fn(fan_out, &mut draw);
                Dense { w, b }
            })
            .collect();
        Ok(Self {
            optimizer: OptimizerState::new(optimizer, &shapes),
            spec,
            layers,
            version: 0,
        })
    }

    /// Network with explicit parameters in flat order (per layer: weights
    /// row-major, then biases).
    pub fn from_flat(spec: MlpSpec, optimizer: OptimizerKind, flat: &[T]) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        let expected = spec.num_params();
        if flat.len() != expected {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        let layers = shapes
            .iter()
            .map(|&(fan_in, fan_out)| {
                let w = Array2::from_shape_vec((fan_out, fan_in), flat[offset..offset + fan_in * fan_out].to_vec())
                    .expect("shape matches slice length");
                offset += fan_in * fan_out;
                let b = Array1::from_vec(flat[offset..offset + fan_out].to_vec());
                offset += fan_out;
                Dense { w, b }
            })
            .collect();
        Ok(Self {
            optimizer: OptimizerState::new(optimizer, &shapes),
            spec,
            layers,
            version: 0,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.optimizer
    }

    pub fn to_flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    /// Fresh optimizer moments, parameters untouched.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = OptimizerState::new(self.optimizer.kind(), &self.spec.layer_shapes());
    }

    fn check_input(&self, cols: usize, rows: usize, action: Option<usize>) -> Result<()> {
        if cols != self.spec.input_dim {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.spec.input_dim,
                got: cols,
            });
        }
        match (self.spec.action_inject_layer, action) {
            (Some(_), Some(n)) if n != rows => Err(Error::Dimension {
                what: "action batch",
                expected: rows,
                got: n,
            }),
            (Some(_), None) => Err(Error::InvalidInput("critic evaluated without an action".into())),
            (None, Some(_)) => Err(Error::InvalidInput("action supplied to a network without an action input".into())),
            _ => Ok(()),
        }
    }

    fn output_scale(&self) -> (T, T) {
        match self.spec.output {
            OutputActivation::Tanh { lo, hi } => (T::lit(0.5 * (lo + hi)), T::lit(0.5 * (hi - lo))),
            OutputActivation::Linear => (T::zero(), T::one()),
        }
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, input: ArrayView2<T>, action: Option<ArrayView1<T>>) -> Result<(Array2<T>, ForwardCache<T>)> {
        let rows = input.nrows();
        self.check_input(input.ncols(), rows, action.map(|a| a.len()))?;
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut current = input.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            if self.spec.action_inject_layer == Some(l) {
                let a = action.expect("checked above");
                let mut widened = Array2::zeros((rows, current.ncols() + 1));
                widened.slice_mut(s![.., ..current.ncols()]).assign(&current);
                widened.column_mut(current.ncols()).assign(&a);
                current = widened;
            }
            let z = current.dot(&layer.w.t()) + &layer.b;
            let next = if l + 1 < n_layers {
                z.mapv(|v| if v > T::zero() { v } else { T::zero() })
            } else {
                match self.spec.output {
                    OutputActivation::Tanh { .. } => {
                        let (mid, half) = self.output_scale();
                        z.mapv(|v| mid + half * v.tanh())
                    }
                    OutputActivation::Linear => z.clone(),
                }
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        Ok((
            current,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse-mode pass given `d loss / d output` (`batch x output_dim`).
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: ArrayView2<T>) -> Result<Backward<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                params: self.version,
            });
        }
        let n_layers = self.layers.len();
        let rows = cache.inputs[0].nrows();
        if grad_output.dim() != (rows, self.spec.output_dim) {
            return Err(Error::Dimension {
                what: "output gradient rows",
                expected: rows,
                got: grad_output.nrows(),
            });
        }
        let mut dz = match self.spec.output {
            OutputActivation::Tanh { .. } => {
                let (_, half) = self.output_scale();
                let z = &cache.pre[n_layers - 1];
                let mut d = grad_output.to_owned();
                d.zip_mut_with(z, |g, &zv| {
                    let t = zv.tanh();
                    *g = *g * half * (T::one() - t * t);
                });
                d
            }
            OutputActivation::Linear => grad_output.to_owned(),
        };
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(n_layers);
        let mut action_grad = None;
        let mut input_grad = None;
        for l in (0..n_layers).rev() {
            let x = &cache.inputs[l];
            let gw = dz.t().dot(x);
            let gb = dz.sum_axis(Axis(0));
            grads.push(Dense { w: gw, b: gb });
            let mut dx = dz.dot(&self.layers[l].w);
            if self.spec.action_inject_layer == Some(l) {
                let last = dx.ncols() - 1;
                action_grad = Some(dx.column(last).to_owned());
                dx = dx.slice(s![.., ..last]).to_owned();
            }
            if l == 0 {
                input_grad = Some(dx);
            } else {
                let z_prev = &cache.pre[l - 1];
                dx.zip_mut_with(z_prev, |g, &zv| {
                    if zv <= T::zero() {
                        *g = T::zero();
                    }
                });
                dz = dx;
            }
        }
        grads.reverse();
        Ok(Backward {
            params: Gradients { layers: grads },
            input: input_grad.expect("layer 0 visited"),
            action: action_grad,
        })
    }

    /// Single-sample evaluation without caching.
    pub fn predict(&self, input: &[T], action: Option<T>) -> Result<Vec<T>> {
        self.check_input(input.len(), 1, action.map(|_| 1))?;
        let n_layers = self.layers.len();
        let mut current: Vec<T> = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            if self.spec.action_inject_layer == Some(l) {
                current.push(action.expect("checked above"));
            }
            let (fan_out, fan_in) = layer.w.dim();
            let w = layer.w.as_slice().expect("weights are contiguous");
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = layer.b[o];
                for (wv, xv) in row.iter().zip(current.iter()) {
                    acc += *wv * *xv;
                }
                next.push(acc);
            }
            if l + 1 < n_layers {
                for v in next.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            } else if let OutputActivation::Tanh { .. } = self.spec.output {
                let (mid, half) = self.output_scale();
                for v in next.iter_mut() {
                    *v = mid + half * v.tanh();
                }
            }
            current = next;
        }
        Ok(current)
    }

    /// Applies one optimizer step; rejects non-finite gradients.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, p)| g.w.dim() != p.w.dim() || g.b.len() != p.b.len())
        {
            return Err(Error::InvalidInput("gradient shapes do not match the network".into()));
        }
        if !grads.all_finite() {
            return Err(Error::Divergence {
                stage: usize::MAX,
                detail: "non-finite gradient".into(),
            });
        }
        self.optimizer.step(&mut self.layers, grads, T::lit(learning_rate));
        self.version += 1;
        Ok(())
    }
}

fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for d in layers {
        out.extend(d.w.iter().copied());
        out.extend(d.b.iter().copied());
    }
    out
}
