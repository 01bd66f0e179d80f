use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::linalg::frobenius;
use super::rng::{layer_stream, Stream};
use crate::algebra::{spectral_scaling, width_pow, LayerRole, Parameterization};
use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Layer sizes: `d_in -> width (depth times) -> d_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d_in: usize,
    pub width: usize,
    pub depth: usize,
    pub d_out: usize,
}

impl Dims {
    pub fn new(d_in: usize, width: usize, depth: usize, d_out: usize) -> Result<Dims> {
        if d_in == 0 || width == 0 || depth == 0 || d_out == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive: d_in={d_in} width={width} depth={depth} d_out={d_out}"
            )));
        }
        Ok(Dims { d_in, width, depth, d_out })
    }

    pub fn num_layers(&self) -> usize {
        self.depth + 1
    }

    /// `(fan_in, fan_out)` of 1-based layer `l`.
    pub fn fans(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 1 { self.d_in } else { self.width };
        let fan_out = if l == self.depth + 1 { self.d_out } else { self.width };
        (fan_in, fan_out)
    }

    pub fn role(&self, l: usize) -> LayerRole {
        LayerRole::of(l, self.depth)
    }
}

/// Per-layer initial standard deviations and forward multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    pub stds: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub zero_output: bool,
}

impl InitSpec {
    /// `std_l = n^{-b_l}`, with the input layer also divided by `sqrt(d_in)`; multipliers `n^{-a_l}`.
    pub fn bcd(p: &Parameterization, dims: &Dims) -> Result<InitSpec> {
        if p.depth != dims.depth {
            return Err(Error::Shape(format!(
                "parameterization has L={} but network depth is {}",
                p.depth, dims.depth
            )));
        }
        let n = dims.width;
        let stds = (1..=dims.num_layers())
            .map(|l| {
                let s = width_pow(n, -p.b_(l));
                if l == 1 {
                    s / (dims.d_in as f64).sqrt()
                } else {
                    s
                }
            })
            .collect();
        let multipliers = (1..=dims.num_layers()).map(|l| width_pow(n, -p.a_(l))).collect();
        Ok(InitSpec { stds, multipliers, zero_output: false })
    }

    /// Spectral fan rule, unit multipliers.
    pub fn spectral(dims: &Dims) -> Result<InitSpec> {
        let stds = (1..=dims.num_layers())
            .map(|l| {
                let (fi, fo) = dims.fans(l);
                spectral_scaling(fi, fo).map(|s| s.init_std)
            })
            .collect::<Result<_>>()?;
        Ok(InitSpec {
            stds,
            multipliers: vec![1.0; dims.num_layers()],
            zero_output: false,
        })
    }

    pub fn with_zero_output(mut self, zero: bool) -> InitSpec {
        self.zero_output = zero;
        self
    }
}

/// Activations of one forward pass. `post[0]` is the input.
#[derive(Clone, Debug)]
pub struct PassCache {
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    generation: u64,
}

impl PassCache {
    pub fn generation(&self) -> u64 {
        self.generation
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradientSet {
    pub grads: Vec<Array2<f64>>,
    /// Loss derivative with respect to the outputs, one row per example.
    pub chi: Array2<f64>,
    pub norms: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> GradientSet {
        let grads: Vec<_> = net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        GradientSet {
            norms: vec![0.0; grads.len()],
            grads,
            chi: Array2::zeros((0, net.dims.d_out)),
        }
    }
}

/// Dense MLP `h^l = m_l W^l x^{l-1}`, `x^l = φ(h^l)`, `f = m_{L+1} W^{L+1} x^L`.
///
/// Weights are stored as `(fan_out, fan_in)`; batches are rows.
#[derive(Clone, Debug)]
pub struct Network {
    dims: Dims,
    activation: Activation,
    seed: u64,
    weights: Vec<Array2<f64>>,
    multipliers: Vec<f64>,
    generation: u64,
}

impl Network {
    /// Weights `W^l = std_l · z` with `z` drawn from substream `(seed, l)` in row-major order.
    pub fn init(dims: Dims, activation: Activation, spec: &InitSpec, seed: u64) -> Result<Network> {
        let dims = Dims::new(dims.d_in, dims.width, dims.depth, dims.d_out)?;
        let o = dims.num_layers();
        if spec.stds.len() != o || spec.multipliers.len() != o {
            return Err(Error::Shape(format!("init spec needs {o} layers")));
        }
        let weights = (1..=o)
            .map(|l| {
                let (fi, fo) = dims.fans(l);
                if l == o && spec.zero_output {
                    return Array2::zeros((fo, fi));
                }
                let mut s = Stream::new(seed, layer_stream(l));
                let std = spec.stds[l - 1];
                Array2::from_shape_fn((fo, fi), |_| std * s.normal())
            })
            .collect();
        Ok(Network {
            dims,
            activation,
            seed,
            weights,
            multipliers: spec.multipliers.clone(),
            generation: next_generation(),
        })
    }

    pub fn from_parts(
        dims: Dims,
        activation: Activation,
        seed: u64,
        weights: Vec<Array2<f64>>,
        multipliers: Vec<f64>,
    ) -> Result<Network> {
        let dims = Dims::new(dims.d_in, dims.width, dims.depth, dims.d_out)?;
        let o = dims.num_layers();
        if weights.len() != o || multipliers.len() != o {
            return Err(Error::Shape(format!("expected {o} weight matrices and multipliers")));
        }
        for (l, w) in weights.iter().enumerate() {
            let (fi, fo) = dims.fans(l + 1);
            if w.dim() != (fo, fi) {
                return Err(Error::Shape(format!(
                    "layer {} has shape {:?}, expected ({fo}, {fi})",
                    l + 1,
                    w.dim()
                )));
            }
        }
        Ok(Network {
            dims,
            activation,
            seed,
            weights,
            multipliers,
            generation: next_generation(),
        })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }
    /// 1-based.
    pub fn weight(&self, l: usize) -> &Array2<f64> {
        &self.weights[l - 1]
    }
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Replaces the weights of 1-based layer `l`.
    pub fn set_weight(&mut self, l: usize, w: Array2<f64>) -> Result<()> {
        let o = self.dims.num_layers();
        if l == 0 || l > o {
            return Err(Error::LayerIndex { index: l, max: o });
        }
        if w.dim() != self.weights[l - 1].dim() {
            return Err(Error::Shape(format!("layer {l} expects shape {:?}", self.weights[l - 1].dim())));
        }
        self.weights[l - 1] = w;
        self.generation = next_generation();
        Ok(())
    }

    /// `W^l += scale_l · delta^l` for every layer.
    pub fn add_scaled(&mut self, delta: &[Array2<f64>], scales: &[f64]) {
        assert_eq!(delta.len(), self.weights.len());
        assert_eq!(scales.len(), self.weights.len());
        for ((w, d), &s) in self.weights.iter_mut().zip(delta).zip(scales) {
            if s != 0.0 {
                w.scaled_add(s, d);
            }
        }
        self.generation = next_generation();
    }

    /// Copy with `W + eps`.
    pub fn perturbed(&self, eps: &[Array2<f64>]) -> Network {
        let mut p = self.clone();
        p.add_scaled(eps, &vec![1.0; eps.len()]);
        p
    }

    /// Writes `W + eps` into `out`, reusing its buffers when the shapes agree.
    pub fn perturbed_into(&self, eps: &[Array2<f64>], out: &mut Option<Network>) {
        match out {
            Some(p) if p.dims == self.dims => {
                for ((dst, w), e) in p.weights.iter_mut().zip(&self.weights).zip(eps) {
                    ndarray::Zip::from(dst).and(w).and(e).for_each(|d, &w, &e| *d = w + e);
                }
                p.multipliers.clone_from(&self.multipliers);
                p.activation = self.activation;
                p.seed = self.seed;
                p.generation = next_generation();
            }
            _ => *out = Some(self.perturbed(eps)),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, PassCache)> {
        if x.ncols() != self.dims.d_in {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                x.ncols(),
                self.dims.d_in
            )));
        }
        let depth = self.dims.depth;
        let mut pre = Vec::with_capacity(depth);
        let mut post = Vec::with_capacity(depth + 1);
        post.push(x.to_owned());
        for l in 1..=depth {
            let mut h = post[l - 1].dot(&self.weights[l - 1].t());
            h *= self.multipliers[l - 1];
            let act = self.activation;
            let xl = h.mapv(|v| act.apply(v));
            pre.push(h);
            post.push(xl);
        }
        let mut out = post[depth].dot(&self.weights[depth].t());
        out *= self.multipliers[depth];
        let cache = PassCache {
            pre,
            post,
            output: out.clone(),
            generation: self.generation,
        };
        Ok((out, cache))
    }

    /// Outputs only.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(x).map(|(f, _)| f)
    }

    /// Gradients of the loss for `loss_grad = dL/df` (rows per example), including multipliers.
    pub fn backward(&self, cache: &PassCache, loss_grad: ArrayView2<f64>) -> Result<GradientSet> {
        let mut out = GradientSet::zeros_like(self);
        self.backward_into(cache, loss_grad, &mut out)?;
        Ok(out)
    }

    /// [`Network::backward`] writing into `out`, reusing its buffers when shapes agree.
    pub fn backward_into(&self, cache: &PassCache, loss_grad: ArrayView2<f64>, out: &mut GradientSet) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache {
                cached: cache.generation,
                current: self.generation,
            });
        }
        if loss_grad.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "loss gradient shape {:?} differs from output shape {:?}",
                loss_grad.dim(),
                cache.output.dim()
            )));
        }
        let depth = self.dims.depth;
        if out.grads.len() != depth + 1 || out.grads.iter().zip(&self.weights).any(|(g, w)| g.dim() != w.dim()) {
            *out = GradientSet::zeros_like(self);
        }
        let mut dh = loss_grad.to_owned();
        for l in (1..=depth + 1).rev() {
            let m = self.multipliers[l - 1];
            let g = &mut out.grads[l - 1];
            general_mat_mul(1.0, &dh.t(), &cache.post[l - 1], 0.0, g);
            *g *= m;
            if l > 1 {
                let mut dx = dh.dot(&self.weights[l - 1]);
                dx *= m;
                let act = self.activation;
                ndarray::Zip::from(&mut dx)
                    .and(&cache.pre[l - 2])
                    .for_each(|d, &h| *d *= act.derivative(h));
                dh = dx;
            }
        }
        out.norms = out.grads.iter().map(|g| frobenius(g.view())).collect();
        out.chi = loss_grad.to_owned();
        Ok(())
    }
}
