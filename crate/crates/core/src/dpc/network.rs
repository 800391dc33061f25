//! Dense feed-forward policy with a bounded output map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::InputSet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply<T: Scalar>(&self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope<T: Scalar>(&self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }
}

/// Which reference the policy saw during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceMode {
    True,
    Zero,
}

impl ReferenceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceMode::True => "true",
            ReferenceMode::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "true" => Some(ReferenceMode::True),
            "zero" => Some(ReferenceMode::Zero),
            _ => None,
        }
    }
}

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyMeta {
    pub seed: u64,
    pub reference_mode: ReferenceMode,
    pub horizon: usize,
}

/// `u = mid + half * tanh(z_L)` on top of hidden layers
/// `a_l = act(W_l a_{l-1} + b_l)`. Parameters live in one flat vector,
/// layer by layer, each as row-major `W_l` followed by `b_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNetwork<T> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<T>,
    input_set: InputSet<T>,
    meta: PolicyMeta,
}

/// Per-layer activations from a forward pass, reused by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    acts: Vec<Vec<T>>,
    out_tanh: Vec<T>,
}

impl<T: Scalar> PolicyNetwork<T> {
    /// Zero-initialised network. `layer_sizes` runs from the feature width to
    /// the input dimension.
    pub fn zeros(
        layer_sizes: Vec<usize>,
        activation: Activation,
        input_set: InputSet<T>,
        meta: PolicyMeta,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {layer_sizes:?}")));
        }
        if *layer_sizes.last().unwrap() != input_set.dim() {
            return Err(Error::Shape(format!(
                "output width {} does not match input dimension {}",
                layer_sizes.last().unwrap(),
                input_set.dim()
            )));
        }
        let n = layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            layer_sizes,
            activation,
            params: vec![T::zero(); n],
            input_set,
            meta,
        })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(
        layer_sizes: Vec<usize>,
        activation: Activation,
        input_set: InputSet<T>,
        meta: PolicyMeta,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation, input_set, meta)?;
        let mut off = 0;
        for l in 0..net.n_layers() {
            let (n_in, n_out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = T::lit(rng.gen_range(-limit..limit));
            }
            off += n_out * (n_in + 1);
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_features(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_set(&self) -> &InputSet<T> {
        &self.input_set
    }

    pub fn meta(&self) -> &PolicyMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: PolicyMeta) {
        self.meta = meta;
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn mid_half(&self, i: usize) -> (T, T) {
        let (lo, hi) = (self.input_set.lower()[i], self.input_set.upper()[i]);
        let two = T::lit(2.0);
        ((lo + hi) / two, (hi - lo) / two)
    }

    /// Evaluates `pi_W(x, xi)` on the concatenated features `[x, xi]`.
    pub fn forward(&self, x: &[T], xi: &[T]) -> Result<Vec<T>> {
        let mut features = Vec::with_capacity(x.len() + xi.len());
        features.extend_from_slice(x);
        features.extend_from_slice(xi);
        if features.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "policy expects {} features, got {}",
                self.n_features(),
                features.len()
            )));
        }
        Ok(self.forward_cached(features).0)
    }

    pub(crate) fn forward_cached(&self, features: Vec<T>) -> (Vec<T>, ForwardCache<T>) {
        let mut acts = vec![features];
        let mut off = 0;
        let last = self.n_layers() - 1;
        let mut out_tanh = Vec::new();
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_out * (n_in + 1)];
            let input = &acts[l];
            let z: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).map(|(&wi, &a)| wi * a).sum::<T>() + b[o]
                })
                .collect();
            if l == last {
                out_tanh = z.iter().map(|v| v.tanh()).collect();
            } else {
                acts.push(z.into_iter().map(|v| self.activation.apply(v)).collect());
            }
            off += n_out * (n_in + 1);
        }
        let u = out_tanh
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let (mid, half) = self.mid_half(i);
                mid + half * s
            })
            .collect();
        (u, ForwardCache { acts, out_tanh })
    }

    /// Adds `d loss / d params` into `grad` given `d loss / d u` and returns
    /// `d loss / d features`.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, du: &[T], grad: &mut [T]) -> Vec<T> {
        let offsets: Vec<usize> = std::iter::once(0)
            .chain(self.layer_sizes.windows(2).scan(0, |acc, w| {
                *acc += w[1] * (w[0] + 1);
                Some(*acc)
            }))
            .collect();
        let mut delta: Vec<T> = cache
            .out_tanh
            .iter()
            .zip(du)
            .enumerate()
            .map(|(i, (&s, &g))| g * self.mid_half(i).1 * (T::one() - s * s))
            .collect();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            for o in 0..n_out {
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += delta[o] * a;
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut back = vec![T::zero(); n_in];
            for o in 0..n_out {
                for (i, b) in back.iter_mut().enumerate() {
                    *b += w[o * n_in + i] * delta[o];
                }
            }
            if l > 0 {
                for (b, &a) in back.iter_mut().zip(input) {
                    *b *= self.activation.slope(a);
                }
            }
            delta = back;
        }
        delta
    }
}
