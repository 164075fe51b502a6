//! Parameter storage, initialization, and the layer building blocks used by
//! the models: dense / conv / deconv layers (optionally weight-normalized)
//! and batch normalization state for ablations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NormDim, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ordered, named collection of parameter tensors. Order is creation order
/// and is the canonical order for optimizer state and checkpoints, so two
/// models built by the same code always line up slot for slot.
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
}

/// Index of one parameter in its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamRef(usize);

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamRef {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, t));
        ParamRef(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, r: ParamRef) -> &Tensor<T> {
        &self.entries[r.0].1
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut Tensor<T> {
        &mut self.entries[r.0].1
    }

    pub fn name(&self, r: ParamRef) -> &str {
        &self.entries[r.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrite every parameter from `lookup(name)`. Each entry must be
    /// found with its exact shape; anything else is a checkpoint mismatch.
    pub fn load_values(&mut self, lookup: impl Fn(&str) -> Option<Tensor<T>>) -> Result<()> {
        for (name, t) in self.entries.iter_mut() {
            let src = lookup(name)
                .ok_or_else(|| Error::checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src;
        }
        Ok(())
    }

    /// Bind every parameter into a graph, as trainable leaves or as frozen
    /// constants. Freezing is how stop-gradient is implemented: a frozen
    /// binding has no gradient path at all.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Gradients for every parameter after a backward pass, in store order.
    /// Parameters the loss never touched get zero gradients. Errors if a
    /// gradient is non-finite, naming the parameter.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &BoundParams) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(self.entries.len());
        for (i, (name, t)) in self.entries.iter().enumerate() {
            match g.grad(bound.vars[i]) {
                Some(gr) => {
                    if !gr.iter().fold(true, |acc, x| acc & x.is_finite()) {
                        return Err(Error::non_finite("gradient", format!("parameter {name}")));
                    }
                    out.push(gr.to_vec());
                }
                None => out.push(vec![T::zero(); t.numel()]),
            }
        }
        Ok(out)
    }
}

/// Graph handles for one [`ParamStore::bind`] call.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, r: ParamRef) -> Var {
        self.vars[r.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Standard normal via Box-Muller, driven by the given ChaCha stream so
/// initialization is bit-reproducible for a fixed seed.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub const INIT_STD: f64 = 0.02;

/// Gaussian(0, 0.02) tensor, the init used for every weight in the models.
pub fn init_weight<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(normal(rng) * INIT_STD))
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Per-group Euclidean norms of a freshly drawn weight, used to initialize
/// weight-norm scales so the effective weight at step 0 equals the raw draw.
fn group_norms<T: Scalar>(w: &Tensor<T>, dim: NormDim) -> Tensor<T> {
    let s = w.shape();
    let (outer, groups, inner) = match dim {
        NormDim::Rows => (1, s[0], s[1..].iter().product::<usize>().max(1)),
        NormDim::Dim1 => (s[0], s[1], s[2..].iter().product::<usize>().max(1)),
    };
    let mut out = vec![T::zero(); groups];
    for o in 0..outer {
        for g in 0..groups {
            let base = (o * groups + g) * inner;
            let mut s2 = T::zero();
            for i in 0..inner {
                let v = w.data()[base + i];
                s2 = s2 + v * v;
            }
            out[g] = out[g] + s2;
        }
    }
    Tensor::new(&[groups], out.into_iter().map(|v| v.sqrt()).collect()).unwrap()
}

/// Fully connected layer `y = x @ w^T + b`, optionally weight-normalized per
/// output row.
pub struct DenseLayer {
    w: ParamRef,
    b: ParamRef,
    gscale: Option<ParamRef>,
}

impl DenseLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        weight_norm: bool,
    ) -> Self {
        let w_t = init_weight(rng, &[out_dim, in_dim]);
        let gscale = weight_norm.then(|| {
            let g0 = group_norms(&w_t, NormDim::Rows);
            store.add(format!("{prefix}.g"), g0)
        });
        let w = store.add(format!("{prefix}.w"), w_t);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[out_dim]));
        DenseLayer { w, b, gscale }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
    ) -> Result<Var> {
        let w = match self.gscale {
            Some(gs) => g.weight_norm(bound.var(self.w), bound.var(gs), NormDim::Rows)?,
            None => bound.var(self.w),
        };
        g.linear(x, w, bound.var(self.b))
    }

    pub fn w_ref(&self) -> ParamRef {
        self.w
    }

    pub fn b_ref(&self) -> ParamRef {
        self.b
    }

    pub fn g_ref(&self) -> Option<ParamRef> {
        self.gscale
    }
}

/// Strided convolution layer with per-output-channel (dim 0) weight norm.
pub struct ConvLayer {
    w: ParamRef,
    b: ParamRef,
    gscale: Option<ParamRef>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight_norm: bool,
    ) -> Self {
        let w_t = init_weight(rng, &[cout, cin, k, k]);
        let gscale = weight_norm.then(|| {
            let g0 = group_norms(&w_t, NormDim::Rows);
            store.add(format!("{prefix}.g"), g0)
        });
        let w = store.add(format!("{prefix}.w"), w_t);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[cout]));
        ConvLayer {
            w,
            b,
            gscale,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
    ) -> Result<Var> {
        let w = match self.gscale {
            Some(gs) => g.weight_norm(bound.var(self.w), bound.var(gs), NormDim::Rows)?,
            None => bound.var(self.w),
        };
        let y = g.conv2d(x, w, self.stride, self.pad)?;
        g.bias_channel(y, bound.var(self.b))
    }
}

/// Transposed-convolution layer. Kernels are `cin x cout x k x k`, so the
/// weight-norm groups follow dim 1 (one group per output channel).
pub struct DeconvLayer {
    w: ParamRef,
    b: ParamRef,
    gscale: Option<ParamRef>,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight_norm: bool,
    ) -> Self {
        let w_t = init_weight(rng, &[cin, cout, k, k]);
        let gscale = weight_norm.then(|| {
            let g0 = group_norms(&w_t, NormDim::Dim1);
            store.add(format!("{prefix}.g"), g0)
        });
        let w = store.add(format!("{prefix}.w"), w_t);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[cout]));
        DeconvLayer {
            w,
            b,
            gscale,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
    ) -> Result<Var> {
        let w = match self.gscale {
            Some(gs) => g.weight_norm(bound.var(self.w), bound.var(gs), NormDim::Dim1)?,
            None => bound.var(self.w),
        };
        let y = g.deconv2d(x, w, self.stride, self.pad)?;
        g.bias_channel(y, bound.var(self.b))
    }
}

/// Batch normalization with learned affine and running statistics. Not used
/// by the default models (they normalize with instance/weight norm instead);
/// kept for the normalization ablation.
pub struct BatchNormLayer<T> {
    gamma: ParamRef,
    beta: ParamRef,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
        BatchNormLayer {
            gamma,
            beta,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training form: batch statistics normalize, running statistics track
    /// them with `running = (1 - momentum) * running + momentum * batch`.
    pub fn forward_train(
        &mut self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
    ) -> Result<Var> {
        let (y, mean, var) =
            g.batch_norm_train(x, bound.var(self.gamma), bound.var(self.beta), self.eps)?;
        let m = T::from_f64(self.momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&var) {
            *r = keep * *r + m * b;
        }
        Ok(y)
    }

    /// Inference form: running statistics normalize, nothing is updated.
    pub fn forward_eval(&self, g: &mut Graph<T>, bound: &BoundParams, x: Var) -> Result<Var> {
        g.batch_norm_eval(
            x,
            bound.var(self.gamma),
            bound.var(self.beta),
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
    }
}

/// Inverted-dropout masks drawn ahead of a forward pass. Kept outside the
/// graph so the forward itself stays a deterministic function of its inputs.
/// Each mask element is `1/(1-rate)` with probability `1-rate`, else 0; at
/// the degenerate rate 1.0 (test-only) the mask is all zero.
pub fn dropout_mask<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], rate: f64) -> Tensor<T> {
    assert!((0.0..=1.0).contains(&rate), "dropout rate {rate}");
    let n: usize = shape.iter().product();
    if rate == 0.0 {
        return Tensor::full(shape, T::one());
    }
    if rate >= 1.0 {
        return Tensor::zeros(shape);
    }
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    let data = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(shape, data).expect("mask shape")
}

pub const LEAKY_SLOPE: f64 = 0.2;
