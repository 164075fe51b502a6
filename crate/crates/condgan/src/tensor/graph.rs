use super::kernels::{self, ConvGeom};
use super::{check_finite, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Grouping descriptor for normalization statistics over a flat buffer laid
/// out as `outer x groups x inner` (row-major). Statistics pool over `outer`
/// and `inner` for each of the `groups` slots:
///
/// * per-instance-per-channel over H*W:    outer 1, groups N*C, inner H*W
/// * per-row over features:                outer 1, groups N,   inner D
/// * per-channel over a batch (N,H,W):     outer N, groups C,   inner H*W
/// * per-row weight groups (dense, conv):  outer 1, groups d0,  inner rest
/// * per-dim-1 weight groups (deconv):     outer d0, groups d1, inner rest
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormGroups {
    pub outer: usize,
    pub groups: usize,
    pub inner: usize,
}

impl NormGroups {
    pub fn numel(&self) -> usize {
        self.outer * self.groups * self.inner
    }

    pub fn group_len(&self) -> usize {
        self.outer * self.inner
    }

    /// Mean and population variance per group (two-pass).
    pub fn mean_var<T: Scalar>(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let m = T::from_usize(self.group_len());
        let mut mean = vec![T::zero(); self.groups];
        let mut var = vec![T::zero(); self.groups];
        for g in 0..self.groups {
            let mut s = T::zero();
            self.for_each(g, |off| s = s + x[off]);
            let mu = s / m;
            let mut sq = T::zero();
            self.for_each(g, |off| {
                let d = x[off] - mu;
                sq = sq + d * d;
            });
            mean[g] = mu;
            var[g] = sq / m;
        }
        (mean, var)
    }

    #[inline]
    fn for_each(&self, g: usize, mut f: impl FnMut(usize)) {
        for o in 0..self.outer {
            let base = (o * self.groups + g) * self.inner;
            for i in 0..self.inner {
                f(base + i);
            }
        }
    }
}

/// Which axis of a weight tensor indexes its normalization groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormDim {
    /// One group per dim-0 row: dense `out x in`, conv `cout x cin x k x k`.
    Rows,
    /// One group per dim-1 slot: deconv kernels `cin x cout x k x k`, where
    /// dim 1 is the output channel.
    Dim1,
}

enum Op<T> {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Deconv2d {
        x: Var,
        w: Var,
        /// Mirrored geometry: the deconv output is the conv input.
        geom: ConvGeom,
    },
    BiasChannel {
        x: Var,
        b: Var,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: T,
    },
    Square {
        x: Var,
    },
    /// Same forward as Square, deliberately wrong backward (3x instead of
    /// 2x). Exists so the gradient checker's failure path can be exercised.
    SquareWrongGrad {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        groups: NormGroups,
        sigma: Vec<T>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: NormGroups,
        mean: Vec<T>,
        sigma: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: NormGroups,
        mean: Vec<T>,
        sigma: Vec<T>,
    },
    WeightNorm {
        w: Var,
        g: Var,
        groups: NormGroups,
        norms: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    /// Mean-reduced binary cross-entropy against a constant target, with an
    /// optional constant per-element weight. Probabilities are clamped to
    /// [1e-7, 1 - 1e-7] before the logs.
    BceMean {
        p: Var,
        target: Vec<T>,
        weight: Option<Vec<T>>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::BiasChannel { .. } => "bias_channel",
            Op::Hadamard { .. } => "hadamard",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::Square { .. } => "square",
            Op::SquareWrongGrad { .. } => "square_wrong_grad",
            Op::Concat { .. } => "concat",
            Op::Relu { .. } => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::BatchNormTrain { .. } => "batch_norm(train)",
            Op::BatchNormEval { .. } => "batch_norm(eval)",
            Op::WeightNorm { .. } => "weight_norm",
            Op::Reshape { .. } => "reshape",
            Op::SumAll { .. } => "sum_all",
            Op::MeanAll { .. } => "mean_all",
            Op::BceMean { .. } => "bce_mean",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Define-by-run reverse-mode tape. Ops append nodes as they execute, so node
/// order is a topological order and backward is one reverse scan.
///
/// Leaves created with [`Graph::leaf`] receive gradients; [`Graph::constant`]
/// nodes never do, which is how stop-gradient contracts are expressed: bind
/// the frozen side of a GAN step as constants and its parameters simply have
/// no gradient path.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

pub const BCE_CLAMP: f64 = 1e-7;

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input (parameters, or inputs under test).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input: data batches, frozen parameters, masks.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar convenience: the single element of a `[1]` node.
    pub fn scalar_value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.0].value.numel(), 1);
        self.nodes[v.0].value.data()[0]
    }

    /// Accumulated gradient of `v` after [`Graph::backward`]. `None` if no
    /// gradient reached it (constants, or unused leaves).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0]
            .grad
            .as_ref()
            .map(|g| Tensor::new(self.nodes[v.0].value.shape(), g.clone()).unwrap())
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        check_finite(op.name(), value.data())?;
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- ops ------------------------------------------------------------

    /// 2-d matrix product `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("incompatible shapes {sa:?} and {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![T::zero(); m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut c, m, k, n);
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(&[m, n], c)?, Op::Matmul { a, b }, req)
    }

    /// Dense layer primitive `x @ w^T + b` with `x: N x I`, `w: O x I`, `b: O`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::shape(
                "linear",
                format!("x {sx:?}, w {sw:?}, b {sb:?} do not form x @ w^T + b"),
            ));
        }
        let (n, i, o) = (sx[0], sx[1], sw[0]);
        let mut y = vec![T::zero(); n * o];
        kernels::gemm_nt(self.value(x).data(), self.value(w).data(), &mut y, n, i, o);
        let bd = self.value(b).data();
        for row in y.chunks_exact_mut(o) {
            for (yv, &bv) in row.iter_mut().zip(bd) {
                *yv = *yv + bv;
            }
        }
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(Tensor::new(&[n, o], y)?, Op::Linear { x, w, b }, req)
    }

    /// Cross-correlation of NCHW input with `cout x cin x k x k` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::conv(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let (y, cols) = kernels::conv_fwd(self.value(x).data(), self.value(w).data(), &geom);
        let req = self.requires(x) || self.requires(w);
        self.push(
            Tensor::new(&[geom.n, geom.cout, geom.oh, geom.ow], y)?,
            Op::Conv2d { x, w, geom, cols },
            req,
        )
    }

    /// Transposed convolution (fractionally strided): NCHW input,
    /// `cin x cout x k x k` kernel, output `(h-1)*stride + k - 2*pad` square.
    pub fn deconv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::deconv(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        // The deconv output is the mirrored conv's input, so the forward pass
        // is exactly conv-backward-input.
        let y = kernels::conv_bwd_input(self.value(x).data(), self.value(w).data(), &geom);
        let shape = [geom.n, geom.cin, geom.h, geom.w];
        let req = self.requires(x) || self.requires(w);
        self.push(Tensor::new(&shape, y)?, Op::Deconv2d { x, w, geom }, req)
    }

    /// Add a per-channel bias to an NCHW tensor.
    pub fn bias_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 4 || sb != [sx[1]] {
            return Err(Error::shape(
                "bias_channel",
                format!("x {sx:?} with bias {sb:?}"),
            ));
        }
        let (c, hw) = (sx[1], sx[2] * sx[3]);
        let mut y = self.value(x).data().to_vec();
        let bd = self.value(b).data();
        for chunk in y.chunks_exact_mut(hw * c) {
            for (ci, plane) in chunk.chunks_exact_mut(hw).enumerate() {
                let bv = bd[ci];
                for v in plane {
                    *v = *v + bv;
                }
            }
        }
        let req = self.requires(x) || self.requires(b);
        let shape = sx.to_vec();
        self.push(Tensor::new(&shape, y)?, Op::BiasChannel { x, b }, req)
    }

    fn elementwise_pair(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// Element-wise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("hadamard", a, b)?;
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &z)| x * z)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(&shape, y)?, Op::Hadamard { a, b }, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("add", a, b)?;
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &z)| x + z)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(&shape, y)?, Op::Add { a, b }, req)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("sub", a, b)?;
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &z)| x - z)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(&shape, y)?, Op::Sub { a, b }, req)
    }

    /// Multiply by a compile-time constant (not a graph input).
    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let kk = T::from_f64(k);
        let y = self.value(x).map(|v| v * kk);
        let req = self.requires(x);
        self.push(y, Op::Scale { x, k: kk }, req)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v * v);
        let req = self.requires(x);
        self.push(y, Op::Square { x }, req)
    }

    /// Forward of [`Graph::square`] with a deliberately wrong backward.
    /// Only for verifying that gradient checking catches bad derivatives.
    pub fn square_wrong_grad(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v * v);
        let req = self.requires(x);
        self.push(y, Op::SquareWrongGrad { x }, req)
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts given".to_string()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (&a, &b))| d != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("part shape {s:?} incompatible with {first:?} along axis {axis}"),
                ));
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let mut y = vec![T::zero(); outer * axis_total * inner];
        let mut off = 0;
        for &p in parts {
            let ext = self.value(p).shape()[axis];
            let pd = self.value(p).data();
            for o in 0..outer {
                let src = o * ext * inner;
                let dst = (o * axis_total + off) * inner;
                y[dst..dst + ext * inner].copy_from_slice(&pd[src..src + ext * inner]);
            }
            off += ext;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(
            Tensor::new(&shape, y)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            req,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let req = self.requires(x);
        self.push(y, Op::Relu { x }, req)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { s * v });
        let req = self.requires(x);
        self.push(y, Op::LeakyRelu { x, slope: s }, req)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v.tanh());
        let req = self.requires(x);
        self.push(y, Op::Tanh { x }, req)
    }

    /// Logistic sigmoid, computed in the numerically stable branch form.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let one = T::one();
        let y = self.value(x).map(|v| {
            if v >= T::zero() {
                one / (one + (-v).exp())
            } else {
                let e = v.exp();
                e / (one + e)
            }
        });
        let req = self.requires(x);
        self.push(y, Op::Sigmoid { x }, req)
    }

    /// Normalize an NCHW tensor to zero mean / unit variance over each
    /// (sample, channel) plane. No learned affine.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "instance_norm",
                format!("need NCHW input, got {s:?}"),
            ));
        }
        let groups = NormGroups {
            outer: 1,
            groups: s[0] * s[1],
            inner: s[2] * s[3],
        };
        self.group_norm(x, groups, eps)
    }

    /// Normalize each row of an `N x D` tensor to zero mean / unit variance.
    pub fn instance_norm_vec(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(Error::shape(
                "instance_norm",
                format!("need N x D input, got {s:?}"),
            ));
        }
        let groups = NormGroups {
            outer: 1,
            groups: s[0],
            inner: s[1],
        };
        self.group_norm(x, groups, eps)
    }

    fn group_norm(&mut self, x: Var, groups: NormGroups, eps: f64) -> Result<Var> {
        let eps = T::from_f64(eps);
        let xd = self.value(x).data();
        let (mean, var) = groups.mean_var(xd);
        let sigma: Vec<T> = var.iter().map(|&v| (v + eps).sqrt()).collect();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..groups.outer {
            for g in 0..groups.groups {
                let base = (o * groups.groups + g) * groups.inner;
                let (mu, sg) = (mean[g], sigma[g]);
                for i in 0..groups.inner {
                    y[base + i] = (xd[base + i] - mu) / sg;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(
            Tensor::new(&shape, y)?,
            Op::InstanceNorm { x, groups, sigma },
            req,
        )
    }

    /// Batch normalization in training form: statistics from this batch.
    /// Returns the output together with the batch mean/variance so the caller
    /// can maintain running statistics. Requires batch size >= 2.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (groups, _) = self.batch_norm_check(x, gamma, beta)?;
        if self.value(x).shape()[0] < 2 {
            return Err(Error::shape(
                "batch_norm(train)",
                format!(
                    "batch statistics need N >= 2, got input {:?}",
                    self.value(x).shape()
                ),
            ));
        }
        let eps = T::from_f64(eps);
        let xd = self.value(x).data();
        let (mean, var) = groups.mean_var(xd);
        let sigma: Vec<T> = var.iter().map(|&v| (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..groups.outer {
            for g in 0..groups.groups {
                let base = (o * groups.groups + g) * groups.inner;
                let (mu, sg, ga, be) = (mean[g], sigma[g], gd[g], bd[g]);
                for i in 0..groups.inner {
                    y[base + i] = ga * (xd[base + i] - mu) / sg + be;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let out = self.push(
            Tensor::new(&shape, y)?,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                groups,
                mean: mean.clone(),
                sigma,
            },
            req,
        )?;
        Ok((out, mean, var))
    }

    /// Batch normalization in inference form: fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (groups, c) = self.batch_norm_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(
                "batch_norm(eval)",
                format!(
                    "running stats of length {}/{} for {c} channels",
                    running_mean.len(),
                    running_var.len()
                ),
            ));
        }
        let eps = T::from_f64(eps);
        let sigma: Vec<T> = running_var.iter().map(|&v| (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..groups.outer {
            for g in 0..groups.groups {
                let base = (o * groups.groups + g) * groups.inner;
                let (mu, sg, ga, be) = (running_mean[g], sigma[g], gd[g], bd[g]);
                for i in 0..groups.inner {
                    y[base + i] = ga * (xd[base + i] - mu) / sg + be;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            Tensor::new(&shape, y)?,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                groups,
                mean: running_mean.to_vec(),
                sigma,
            },
            req,
        )
    }

    fn batch_norm_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(NormGroups, usize)> {
        let s = self.value(x).shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "batch_norm",
                format!("need NCHW input, got {s:?}"),
            ));
        }
        let c = s[1];
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "gamma {:?} / beta {:?} must both be [{c}]",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        Ok((
            NormGroups {
                outer: s[0],
                groups: c,
                inner: s[2] * s[3],
            },
            c,
        ))
    }

    /// Reparameterize a weight tensor as `g_i * w_i / ||w_i||` per group,
    /// where groups follow `dim` and `||.||` includes eps = 1e-8 under the
    /// square root. `gscale` has one entry per group.
    pub fn weight_norm(&mut self, w: Var, gscale: Var, dim: NormDim) -> Result<Var> {
        let s = self.value(w).shape();
        if s.is_empty() {
            return Err(Error::shape("weight_norm", "scalar weight".to_string()));
        }
        let groups = match dim {
            NormDim::Rows => NormGroups {
                outer: 1,
                groups: s[0],
                inner: s[1..].iter().product::<usize>().max(1),
            },
            NormDim::Dim1 => {
                if s.len() < 2 {
                    return Err(Error::shape(
                        "weight_norm",
                        format!("dim-1 grouping needs rank >= 2, got {s:?}"),
                    ));
                }
                NormGroups {
                    outer: s[0],
                    groups: s[1],
                    inner: s[2..].iter().product::<usize>().max(1),
                }
            }
        };
        if self.value(gscale).shape() != [groups.groups] {
            return Err(Error::shape(
                "weight_norm",
                format!(
                    "gscale {:?} must be [{}] for weight {s:?}",
                    self.value(gscale).shape(),
                    groups.groups
                ),
            ));
        }
        let eps = T::from_f64(1e-8);
        let wd = self.value(w).data();
        let mut norms = vec![T::zero(); groups.groups];
        for (gi, norm) in norms.iter_mut().enumerate() {
            let mut s2 = T::zero();
            groups.for_each(gi, |off| s2 = s2 + wd[off] * wd[off]);
            *norm = (s2 + eps).sqrt();
        }
        let gd = self.value(gscale).data();
        let mut y = vec![T::zero(); wd.len()];
        for o in 0..groups.outer {
            for gi in 0..groups.groups {
                let base = (o * groups.groups + gi) * groups.inner;
                let k = gd[gi] / norms[gi];
                for i in 0..groups.inner {
                    y[base + i] = k * wd[base + i];
                }
            }
        }
        let shape = s.to_vec();
        let req = self.requires(w) || self.requires(gscale);
        self.push(
            Tensor::new(&shape, y)?,
            Op::WeightNorm {
                w,
                g: gscale,
                groups,
                norms,
            },
            req,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshaped(shape)?;
        let req = self.requires(x);
        self.push(y, Op::Reshape { x }, req)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let req = self.requires(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, req)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel());
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v)
            / n;
        let req = self.requires(x);
        self.push(Tensor::scalar(s), Op::MeanAll { x }, req)
    }

    /// Mean binary cross-entropy of probabilities `p` against a constant
    /// target of the same shape, optionally weighted per element before the
    /// mean. Probabilities are clamped to [1e-7, 1-1e-7].
    pub fn bce_mean(&mut self, p: Var, target: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<Var> {
        let sp = self.value(p).shape();
        if target.shape() != sp {
            return Err(Error::shape(
                "bce_mean",
                format!("target {:?} vs p {sp:?}", target.shape()),
            ));
        }
        if let Some(w) = weight {
            if w.shape() != sp {
                return Err(Error::shape(
                    "bce_mean",
                    format!("weight {:?} vs p {sp:?}", w.shape()),
                ));
            }
        }
        let lo = T::from_f64(BCE_CLAMP);
        let hi = T::one() - lo;
        let pd = self.value(p).data();
        let n = T::from_usize(pd.len());
        let mut acc = T::zero();
        for (i, &pv) in pd.iter().enumerate() {
            let pc = pv.max(lo).min(hi);
            let y = target.data()[i];
            let l = -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
            let wv = weight.map_or(T::one(), |w| w.data()[i]);
            acc = acc + wv * l;
        }
        let req = self.requires(p);
        self.push(
            Tensor::scalar(acc / n),
            Op::BceMean {
                p,
                target: target.data().to_vec(),
                weight: weight.map(|w| w.data().to_vec()),
            },
            req,
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate on every
    /// node that (transitively) requires grad; read them with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be scalar, got {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            // Fully constant graph: every gradient is zero; nothing to do.
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &rest[0];
            let g = node.grad.as_deref().expect("checked above");
            backward_step(before, node, g)?;
        }
        Ok(())
    }
}

/// Accumulate `contrib` into the gradient of `v` (a node strictly before the
/// current one), checking finiteness so a NaN names the op that made it.
fn acc<T: Scalar>(before: &mut [Node<T>], v: Var, op: &'static str, contrib: &[T]) -> Result<()> {
    let n = &mut before[v.0];
    if !n.requires_grad {
        return Ok(());
    }
    check_finite(op, contrib)?;
    let numel = n.value.numel();
    let gbuf = n.grad.get_or_insert_with(|| vec![T::zero(); numel]);
    for (gv, &cv) in gbuf.iter_mut().zip(contrib) {
        *gv = *gv + cv;
    }
    Ok(())
}

fn wants<T: Scalar>(before: &[Node<T>], v: Var) -> bool {
    before[v.0].requires_grad
}

#[allow(clippy::too_many_lines)]
fn backward_step<T: Scalar>(before: &mut [Node<T>], node: &Node<T>, g: &[T]) -> Result<()> {
    let opname = node.op.name();
    match &node.op {
        Op::Leaf => {}

        Op::Matmul { a, b } => {
            let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
            let k = before[a.0].value.shape()[1];
            if wants(before, *a) {
                let mut da = vec![T::zero(); m * k];
                kernels::gemm_nt(g, before[b.0].value.data(), &mut da, m, n, k);
                acc(before, *a, opname, &da)?;
            }
            if wants(before, *b) {
                let mut db = vec![T::zero(); k * n];
                kernels::gemm_tn(before[a.0].value.data(), g, &mut db, k, m, n);
                acc(before, *b, opname, &db)?;
            }
        }

        Op::Linear { x, w, b } => {
            let (n, o) = (node.value.shape()[0], node.value.shape()[1]);
            let i = before[x.0].value.shape()[1];
            if wants(before, *x) {
                let mut dx = vec![T::zero(); n * i];
                kernels::gemm_nn(g, before[w.0].value.data(), &mut dx, n, o, i);
                acc(before, *x, opname, &dx)?;
            }
            if wants(before, *w) {
                let mut dw = vec![T::zero(); o * i];
                kernels::gemm_tn(g, before[x.0].value.data(), &mut dw, o, n, i);
                acc(before, *w, opname, &dw)?;
            }
            if wants(before, *b) {
                let mut db = vec![T::zero(); o];
                for row in g.chunks_exact(o) {
                    for (dv, &gv) in db.iter_mut().zip(row) {
                        *dv = *dv + gv;
                    }
                }
                acc(before, *b, opname, &db)?;
            }
        }

        Op::Conv2d { x, w, geom, cols } => {
            if wants(before, *x) {
                let dx = kernels::conv_bwd_input(g, before[w.0].value.data(), geom);
                acc(before, *x, opname, &dx)?;
            }
            if wants(before, *w) {
                let dw = kernels::conv_bwd_weight(cols, g, geom);
                acc(before, *w, opname, &dw)?;
            }
        }

        Op::Deconv2d { x, w, geom } => {
            // Forward was the adjoint of the mirrored conv, so the input
            // gradient is that conv's forward applied to the upstream grad.
            let need_x = wants(before, *x);
            let need_w = wants(before, *w);
            if need_x || need_w {
                let (dx, gcols) = kernels::conv_fwd(g, before[w.0].value.data(), geom);
                if need_x {
                    acc(before, *x, opname, &dx)?;
                }
                if need_w {
                    let dw = kernels::conv_bwd_weight(&gcols, before[x.0].value.data(), geom);
                    acc(before, *w, opname, &dw)?;
                }
            }
        }

        Op::BiasChannel { x, b } => {
            if wants(before, *x) {
                acc(before, *x, opname, g)?;
            }
            if wants(before, *b) {
                let s = node.value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let mut db = vec![T::zero(); c];
                for chunk in g.chunks_exact(c * hw) {
                    for (ci, plane) in chunk.chunks_exact(hw).enumerate() {
                        let mut s = T::zero();
                        for &v in plane {
                            s = s + v;
                        }
                        db[ci] = db[ci] + s;
                    }
                }
                acc(before, *b, opname, &db)?;
            }
        }

        Op::Hadamard { a, b } => {
            if wants(before, *a) {
                let da: Vec<T> = g
                    .iter()
                    .zip(before[b.0].value.data())
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                acc(before, *a, opname, &da)?;
            }
            if wants(before, *b) {
                let db: Vec<T> = g
                    .iter()
                    .zip(before[a.0].value.data())
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                acc(before, *b, opname, &db)?;
            }
        }

        Op::Add { a, b } => {
            if wants(before, *a) {
                acc(before, *a, opname, g)?;
            }
            if wants(before, *b) {
                acc(before, *b, opname, g)?;
            }
        }

        Op::Sub { a, b } => {
            if wants(before, *a) {
                acc(before, *a, opname, g)?;
            }
            if wants(before, *b) {
                let db: Vec<T> = g.iter().map(|&v| -v).collect();
                acc(before, *b, opname, &db)?;
            }
        }

        Op::Scale { x, k } => {
            if wants(before, *x) {
                let dx: Vec<T> = g.iter().map(|&v| v * *k).collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::Square { x } => {
            if wants(before, *x) {
                let two = T::from_f64(2.0);
                let dx: Vec<T> = g
                    .iter()
                    .zip(before[x.0].value.data())
                    .map(|(&gv, &xv)| two * xv * gv)
                    .collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::SquareWrongGrad { x } => {
            if wants(before, *x) {
                // Deliberately 3x instead of 2x.
                let three = T::from_f64(3.0);
                let dx: Vec<T> = g
                    .iter()
                    .zip(before[x.0].value.data())
                    .map(|(&gv, &xv)| three * xv * gv)
                    .collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::Concat { parts, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let total = shape[*axis];
            let mut off = 0;
            for &p in parts {
                let ext = before[p.0].value.shape()[*axis];
                if wants(before, p) {
                    let mut dp = vec![T::zero(); outer * ext * inner];
                    for o in 0..outer {
                        let src = (o * total + off) * inner;
                        let dst = o * ext * inner;
                        dp[dst..dst + ext * inner].copy_from_slice(&g[src..src + ext * inner]);
                    }
                    acc(before, p, opname, &dp)?;
                }
                off += ext;
            }
        }

        Op::Relu { x } => {
            if wants(before, *x) {
                let dx: Vec<T> = g
                    .iter()
                    .zip(before[x.0].value.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::LeakyRelu { x, slope } => {
            if wants(before, *x) {
                let dx: Vec<T> = g
                    .iter()
                    .zip(before[x.0].value.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { *slope * gv })
                    .collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::Tanh { x } => {
            if wants(before, *x) {
                let dx: Vec<T> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                    .collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::Sigmoid { x } => {
            if wants(before, *x) {
                let dx: Vec<T> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect();
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::InstanceNorm { x, groups, sigma } => {
            if wants(before, *x) {
                // dx = (g - mean(g) - y * mean(g .* y)) / sigma, per group.
                let y = node.value.data();
                let m = T::from_usize(groups.group_len());
                let mut dx = vec![T::zero(); y.len()];
                for gi in 0..groups.groups {
                    let mut gsum = T::zero();
                    let mut gysum = T::zero();
                    groups.for_each(gi, |off| {
                        gsum = gsum + g[off];
                        gysum = gysum + g[off] * y[off];
                    });
                    let gmean = gsum / m;
                    let gymean = gysum / m;
                    let sg = sigma[gi];
                    groups.for_each(gi, |off| {
                        dx[off] = (g[off] - gmean - y[off] * gymean) / sg;
                    });
                }
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::BatchNormTrain {
            x,
            gamma,
            beta,
            groups,
            mean,
            sigma,
        } => {
            let xd = before[x.0].value.data();
            let gd = before[gamma.0].value.data();
            let m = T::from_usize(groups.group_len());
            let need_x = wants(before, *x);
            let need_gamma = wants(before, *gamma);
            let need_beta = wants(before, *beta);
            let mut dx = if need_x {
                vec![T::zero(); xd.len()]
            } else {
                Vec::new()
            };
            let mut dgamma = vec![T::zero(); groups.groups];
            let mut dbeta = vec![T::zero(); groups.groups];
            for gi in 0..groups.groups {
                let (mu, sg) = (mean[gi], sigma[gi]);
                let mut gsum = T::zero();
                let mut gxsum = T::zero();
                groups.for_each(gi, |off| {
                    let xh = (xd[off] - mu) / sg;
                    gsum = gsum + g[off];
                    gxsum = gxsum + g[off] * xh;
                });
                dgamma[gi] = gxsum;
                dbeta[gi] = gsum;
                if need_x {
                    let gmean = gsum / m;
                    let gxmean = gxsum / m;
                    let k = gd[gi] / sg;
                    groups.for_each(gi, |off| {
                        let xh = (xd[off] - mu) / sg;
                        dx[off] = k * (g[off] - gmean - xh * gxmean);
                    });
                }
            }
            if need_x {
                acc(before, *x, opname, &dx)?;
            }
            if need_gamma {
                acc(before, *gamma, opname, &dgamma)?;
            }
            if need_beta {
                acc(before, *beta, opname, &dbeta)?;
            }
        }

        Op::BatchNormEval {
            x,
            gamma,
            beta,
            groups,
            mean,
            sigma,
        } => {
            let need_x = wants(before, *x);
            let need_gamma = wants(before, *gamma);
            let need_beta = wants(before, *beta);
            let (dx, dgamma, dbeta) = {
                let xd = before[x.0].value.data();
                let gd = before[gamma.0].value.data();
                let mut dx = if need_x {
                    vec![T::zero(); xd.len()]
                } else {
                    Vec::new()
                };
                let mut dgamma = vec![T::zero(); groups.groups];
                let mut dbeta = vec![T::zero(); groups.groups];
                for gi in 0..groups.groups {
                    let (mu, sg) = (mean[gi], sigma[gi]);
                    let k = gd[gi] / sg;
                    let mut gxsum = T::zero();
                    let mut gsum = T::zero();
                    groups.for_each(gi, |off| {
                        if need_x {
                            dx[off] = g[off] * k;
                        }
                        gxsum = gxsum + g[off] * (xd[off] - mu) / sg;
                        gsum = gsum + g[off];
                    });
                    dgamma[gi] = gxsum;
                    dbeta[gi] = gsum;
                }
                (dx, dgamma, dbeta)
            };
            if need_x {
                acc(before, *x, opname, &dx)?;
            }
            if need_gamma {
                acc(before, *gamma, opname, &dgamma)?;
            }
            if need_beta {
                acc(before, *beta, opname, &dbeta)?;
            }
        }

        Op::WeightNorm {
            w,
            g: gscale,
            groups,
            norms,
        } => {
            let need_w = wants(before, *w);
            let need_g = wants(before, *gscale);
            let (dw, dg) = {
                let wd = before[w.0].value.data();
                let gd = before[gscale.0].value.data();
                // S_i = sum over group of upstream * raw weight.
                let mut s = vec![T::zero(); groups.groups];
                for (gi, sv) in s.iter_mut().enumerate() {
                    let mut a = T::zero();
                    groups.for_each(gi, |off| a = a + g[off] * wd[off]);
                    *sv = a;
                }
                let dg: Vec<T> = s.iter().zip(norms).map(|(&sv, &nv)| sv / nv).collect();
                let mut dw = if need_w {
                    vec![T::zero(); wd.len()]
                } else {
                    Vec::new()
                };
                if need_w {
                    for gi in 0..groups.groups {
                        let n = norms[gi];
                        let k = gd[gi] / n;
                        let proj = s[gi] / (n * n);
                        groups.for_each(gi, |off| {
                            dw[off] = k * (g[off] - wd[off] * proj);
                        });
                    }
                }
                (dw, dg)
            };
            if need_g {
                acc(before, *gscale, opname, &dg)?;
            }
            if need_w {
                acc(before, *w, opname, &dw)?;
            }
        }

        Op::Reshape { x } => {
            if wants(before, *x) {
                acc(before, *x, opname, g)?;
            }
        }

        Op::SumAll { x } => {
            if wants(before, *x) {
                let dx = vec![g[0]; before[x.0].value.numel()];
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::MeanAll { x } => {
            if wants(before, *x) {
                let n = before[x.0].value.numel();
                let k = g[0] / T::from_usize(n);
                let dx = vec![k; n];
                acc(before, *x, opname, &dx)?;
            }
        }

        Op::BceMean { p, target, weight } => {
            if wants(before, *p) {
                let pd = before[p.0].value.data();
                let lo = T::from_f64(BCE_CLAMP);
                let hi = T::one() - lo;
                let n = T::from_usize(pd.len());
                let g0 = g[0];
                let dx: Vec<T> = pd
                    .iter()
                    .enumerate()
                    .map(|(i, &pv)| {
                        if pv <= lo || pv >= hi {
                            // Clamped region is flat.
                            T::zero()
                        } else {
                            let y = target[i];
                            let wv = weight.as_ref().map_or(T::one(), |w| w[i]);
                            g0 * wv * (pv - y) / (pv * (T::one() - pv) * n)
                        }
                    })
                    .collect();
                acc(before, *p, opname, &dx)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_small_fixture() {
        // [[1,2]] @ [[3],[4]] = [[11]]
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[1, 2], &[1.0, 2.0]));
        let b = g.leaf(t64(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
        g.backward(c).unwrap();
        // dc/da = b^T, dc/db = a^T
        assert_eq!(g.grad(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        // 3x3 kernel with a 1 at the center, stride 1, pad 1.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(
            &[1, 1, 3, 3],
            &[1., 2., 3., 4., 5., 6., 7., 8., 9.],
        ));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.leaf(Tensor::new(&[1, 1, 3, 3], k).unwrap());
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn deconv_stride2_scatter_pattern() {
        // 2x2 ones through a 1x1 identity kernel at stride 2: values land at
        // even coordinates of a 3x3 grid.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1, 1, 2, 2], &[1., 1., 1., 1.]));
        let w = g.leaf(t64(&[1, 1, 1, 1], &[1.0]));
        let y = g.deconv2d(x, w, 2, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
        assert_eq!(
            g.value(y).data(),
            &[1., 0., 1., 0., 0., 0., 1., 0., 1.]
        );
    }

    #[test]
    fn constants_never_accumulate_grad() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2], &[1.0, 2.0]));
        let b = g.constant(t64(&[2], &[3.0, 4.0]));
        let h = g.hadamard(a, b).unwrap();
        let l = g.sum_all(h).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn grad_accumulates_across_multiple_uses() {
        // l = sum(x*x_used_twice): y = x + x, l = sum(y) -> dl/dx = 2.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[3], &[1.0, 2.0, 3.0]));
        let y = g.add(x, x).unwrap();
        let l = g.sum_all(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[1, 2], &[1.0, 2.0]));
        let b = g.leaf(t64(&[1, 3], &[3.0, 4.0, 5.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 4., 5.]);
        let w = g.constant(t64(&[1, 5], &[10., 20., 30., 40., 50.]));
        let h = g.hadamard(c, w).unwrap();
        let l = g.sum_all(h).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[10., 20.]);
        assert_eq!(g.grad(b).unwrap(), &[30., 40., 50.]);
    }

    #[test]
    fn instance_norm_two_point_plane() {
        // A (1,1,1,2) plane [1,-1]: mean 0, population var 1, so the output
        // is +/- 1/sqrt(1+eps).
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1, 1, 1, 2], &[1.0, -1.0]));
        let y = g.instance_norm(x, 1e-5).unwrap();
        let a = 1.0 / (1.0f64 + 1e-5).sqrt();
        let got = g.value(y).data();
        assert!((got[0] - a).abs() < 1e-12 && (got[1] + a).abs() < 1e-12);
    }

    #[test]
    fn weight_norm_row_fixture() {
        // Row [3,4] with g=1 -> [0.6, 0.8]; with g=5 -> [3, 4].
        let mut g = Graph::<f64>::new();
        let w = g.leaf(t64(&[1, 2], &[3.0, 4.0]));
        let g1 = g.leaf(t64(&[1], &[1.0]));
        let y = g.weight_norm(w, g1, NormDim::Rows).unwrap();
        let d = g.value(y).data();
        assert!((d[0] - 0.6).abs() < 1e-6 && (d[1] - 0.8).abs() < 1e-6);

        let g5 = g.leaf(t64(&[1], &[5.0]));
        let y5 = g.weight_norm(w, g5, NormDim::Rows).unwrap();
        let d5 = g.value(y5).data();
        assert!((d5[0] - 3.0).abs() < 1e-6 && (d5[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_at_zero_is_exactly_half() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1], &[0.0]));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).data()[0], 0.5);
    }

    #[test]
    fn bce_of_half_is_ln2() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(t64(&[1], &[0.5]));
        let l = g.bce_mean(p, &Tensor::scalar(1.0), None).unwrap();
        assert!((g.scalar_value(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_forward_is_reported_with_op_name() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1], &[1e308]));
        let y = g.square(x); // overflows to inf
        let err = y.unwrap_err().to_string();
        assert!(err.contains("square"), "{err}");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_on_constant_graph_is_a_no_op() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t64(&[2], &[1.0, 2.0]));
        let l = g.sum_all(x).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).is_none());
    }
}
