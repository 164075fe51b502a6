//! The three networks: an absolutely conditional generator (label -> image,
//! no noise), a partially conditional generator (noise + label), and a
//! conditional discriminator that fuses a label pathway with an image
//! pathway through an element-wise product.

use crate::error::{Error, Result};
use crate::layers::{
    dropout_mask, ConvLayer, DeconvLayer, DenseLayer, ParamStore, BoundParams, LEAKY_SLOPE,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Architecture hyperparameters shared by generator and discriminator.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of identity classes (one-hot width of `c`).
    pub classes: usize,
    /// Output image side; must be `base_hw * 2^depth` for some depth >= 1.
    pub img_size: usize,
    /// Width of the continuous transform vector `t` (dx, dy, log_scale).
    pub t_dim: usize,
    /// Width of each label-encoder hidden layer.
    pub enc_width: usize,
    /// Width of the fused hidden layer in the generator.
    pub fused_width: usize,
    /// Channels at the generator's initial spatial grid.
    pub base_channels: usize,
    /// Side of the generator's initial spatial grid.
    pub base_hw: usize,
    /// Channels of the discriminator's first convolution; doubles per layer.
    pub d_base_channels: usize,
    /// Width of the discriminator's fused representations.
    pub d_hidden: usize,
    /// Noise width for the partially conditional generator.
    pub z_dim: usize,
    /// Weight-normalize every conv/deconv kernel (and the generator heads).
    pub weight_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            classes: 10,
            img_size: 32,
            t_dim: 3,
            enc_width: 128,
            fused_width: 256,
            base_channels: 64,
            base_hw: 4,
            d_base_channels: 16,
            d_hidden: 128,
            z_dim: 64,
            weight_norm: true,
        }
    }
}

impl ModelConfig {
    /// Number of stride-2 stages between `base_hw` and `img_size`.
    pub fn depth(&self) -> Result<usize> {
        let mut side = self.base_hw;
        let mut depth = 0;
        while side < self.img_size {
            side *= 2;
            depth += 1;
        }
        if side != self.img_size || depth == 0 {
            return Err(Error::config(format!(
                "img_size {} must be base_hw {} times a power of two (>= 2)",
                self.img_size, self.base_hw
            )));
        }
        Ok(depth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.t_dim == 0 || self.enc_width == 0 || self.fused_width == 0 || self.d_hidden == 0 {
            return Err(Error::config("zero-width layer in model config"));
        }
        if self.base_channels < 8 || self.d_base_channels == 0 || self.z_dim == 0 {
            return Err(Error::config("channel widths too small"));
        }
        self.depth().map(|_| ())
    }

    /// Generator channel schedule: `base_channels` at the 4x4 grid, halving
    /// each upsample, floored at 8.
    fn gen_channels(&self, depth: usize) -> Vec<usize> {
        (0..=depth)
            .map(|i| (self.base_channels >> i).max(8))
            .collect()
    }

    /// Discriminator channel schedule: doubling from `d_base_channels`.
    fn disc_channels(&self, depth: usize) -> Vec<usize> {
        (0..depth).map(|i| self.d_base_channels << i).collect()
    }
}

/// One sample's conditioning in canonical encoded form: a one-hot class, the
/// view as two unit (sin, cos) pairs, and the image-plane transform.
#[derive(Clone, Debug)]
pub struct ConditionTriple<T> {
    pub class_id: usize,
    pub c: Vec<T>,
    pub v: [T; 4],
    pub t: Vec<T>,
}

impl<T: Scalar> ConditionTriple<T> {
    /// One-hot exactness and unit-norm of both (sin, cos) pairs, to 1e-6.
    pub fn validate(&self) -> Result<()> {
        let one = 1e-6;
        if self.class_id >= self.c.len() {
            return Err(Error::config(format!(
                "class id {} out of range for {} classes",
                self.class_id,
                self.c.len()
            )));
        }
        for (i, &x) in self.c.iter().enumerate() {
            let want = if i == self.class_id { 1.0 } else { 0.0 };
            if (x.to_f64() - want).abs() > one {
                return Err(Error::config(format!(
                    "c[{i}] = {} is not one-hot for class {}",
                    x, self.class_id
                )));
            }
        }
        for (label, (a, b)) in [
            ("azimuth", (self.v[0], self.v[1])),
            ("altitude", (self.v[2], self.v[3])),
        ] {
            let n = a.to_f64().powi(2) + b.to_f64().powi(2);
            if (n - 1.0).abs() > one {
                return Err(Error::config(format!(
                    "view {label} pair has squared norm {n}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Stack per-sample conditions into batch tensors (c: NxK, v: Nx4, t: Nx3).
pub fn condition_batch<T: Scalar>(
    conds: &[ConditionTriple<T>],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if conds.is_empty() {
        return Err(Error::config("empty condition batch"));
    }
    let n = conds.len();
    let k = conds[0].c.len();
    let td = conds[0].t.len();
    let mut c = Vec::with_capacity(n * k);
    let mut v = Vec::with_capacity(n * 4);
    let mut t = Vec::with_capacity(n * td);
    for cond in conds {
        if cond.c.len() != k || cond.t.len() != td {
            return Err(Error::config("ragged condition batch"));
        }
        c.extend_from_slice(&cond.c);
        v.extend_from_slice(&cond.v);
        t.extend_from_slice(&cond.t);
    }
    Ok((
        Tensor::new(&[n, k], c)?,
        Tensor::new(&[n, 4], v)?,
        Tensor::new(&[n, td], t)?,
    ))
}

/// Generator forward products. `hidden_norm` is the fused hidden vector right
/// after its row normalization (kept for statistics checks).
pub struct GenOutput {
    pub rgb: Var,
    pub mask: Var,
    pub hidden_norm: Var,
}

/// Two-layer label encoder with a shared activation.
struct Encoder {
    l0: DenseLayer,
    l1: DenseLayer,
}

impl Encoder {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_dim: usize,
        width: usize,
    ) -> Self {
        Encoder {
            l0: DenseLayer::new(store, rng, &format!("{prefix}0"), in_dim, width, false),
            l1: DenseLayer::new(store, rng, &format!("{prefix}1"), width, width, false),
        }
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
        leaky: bool,
    ) -> Result<Var> {
        let act = |g: &mut Graph<T>, v: Var| {
            if leaky {
                g.leaky_relu(v, LEAKY_SLOPE)
            } else {
                g.relu(v)
            }
        };
        let h = self.l0.forward(g, bound, x)?;
        let h = act(g, h)?;
        let h = self.l1.forward(g, bound, h)?;
        act(g, h)
    }
}

/// Absolutely conditional generator: a deterministic map from (c, v, t) to an
/// RGB image in [-1, 1] plus a segmentation mask in [0, 1]. There is no noise
/// input; all output variation comes from the conditioning.
pub struct GeneratorAbs<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    enc_c: Encoder,
    enc_v: Encoder,
    enc_t: Encoder,
    fuse: DenseLayer,
    project: DenseLayer,
    deconvs: Vec<DeconvLayer>,
    head_rgb: ConvLayer,
    head_mask: ConvLayer,
}

impl<T: Scalar> GeneratorAbs<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.depth()?;
        let ch = cfg.gen_channels(depth);
        let mut store = ParamStore::new();
        let enc_c = Encoder::new(&mut store, rng, "enc_c", cfg.classes, cfg.enc_width);
        let enc_v = Encoder::new(&mut store, rng, "enc_v", 4, cfg.enc_width);
        let enc_t = Encoder::new(&mut store, rng, "enc_t", cfg.t_dim, cfg.enc_width);
        let fuse = DenseLayer::new(
            &mut store,
            rng,
            "fuse",
            3 * cfg.enc_width,
            cfg.fused_width,
            false,
        );
        let project = DenseLayer::new(
            &mut store,
            rng,
            "project",
            cfg.fused_width,
            ch[0] * cfg.base_hw * cfg.base_hw,
            false,
        );
        let deconvs = (0..depth)
            .map(|i| {
                DeconvLayer::new(
                    &mut store,
                    rng,
                    &format!("up{i}"),
                    ch[i],
                    ch[i + 1],
                    4,
                    2,
                    1,
                    cfg.weight_norm,
                )
            })
            .collect();
        let head_rgb = ConvLayer::new(
            &mut store,
            rng,
            "head_rgb",
            ch[depth],
            3,
            3,
            1,
            1,
            cfg.weight_norm,
        );
        let head_mask = ConvLayer::new(
            &mut store,
            rng,
            "head_mask",
            ch[depth],
            1,
            3,
            1,
            1,
            cfg.weight_norm,
        );
        Ok(GeneratorAbs {
            cfg: cfg.clone(),
            store,
            enc_c,
            enc_v,
            enc_t,
            fuse,
            project,
            deconvs,
            head_rgb,
            head_mask,
        })
    }

    /// Forward for a batch of conditions (c: NxK, v: Nx4, t: Nx3).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        c: Var,
        v: Var,
        t: Var,
    ) -> Result<GenOutput> {
        let n = g.value(c).shape()[0];
        let hc = self.enc_c.forward(g, bound, c, false)?;
        let hv = self.enc_v.forward(g, bound, v, false)?;
        let ht = self.enc_t.forward(g, bound, t, false)?;
        let h = g.concat(&[hc, hv, ht], 1)?;
        let h = self.fuse.forward(g, bound, h)?;
        let h = g.relu(h)?;
        let h = self.project.forward(g, bound, h)?;
        let h = g.relu(h)?;
        // Row-normalize the projected hidden vector before going spatial.
        let hidden_norm = g.instance_norm_vec(h, INSTANCE_NORM_EPS)?;
        let ch0 = self.cfg.gen_channels(self.deconvs.len())[0];
        let mut x = g.reshape(hidden_norm, &[n, ch0, self.cfg.base_hw, self.cfg.base_hw])?;
        for up in &self.deconvs {
            // Each upsample stage renormalizes its input per channel; the
            // kernel itself is weight-normalized inside the layer.
            x = g.instance_norm(x, INSTANCE_NORM_EPS)?;
            x = up.forward(g, bound, x)?;
            x = g.relu(x)?;
        }
        let rgb = self.head_rgb.forward(g, bound, x)?;
        let rgb = g.tanh(rgb)?;
        let mask = self.head_mask.forward(g, bound, x)?;
        let mask = g.sigmoid(mask)?;
        Ok(GenOutput {
            rgb,
            mask,
            hidden_norm,
        })
    }
}

/// Partially conditional generator: noise `z` plus a class label. The label
/// path and the noise path are each projected to the initial grid and joined
/// by channel concatenation. No mask head and no instance norm; variation
/// within a class is carried by `z`.
pub struct GeneratorPartial<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    enc_c: Encoder,
    proj_z: DenseLayer,
    proj_c: DenseLayer,
    deconvs: Vec<DeconvLayer>,
    head_rgb: ConvLayer,
}

impl<T: Scalar> GeneratorPartial<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.depth()?;
        let ch = cfg.gen_channels(depth);
        let cz = ch[0] / 2;
        let cc = ch[0] - cz;
        let mut store = ParamStore::new();
        let enc_c = Encoder::new(&mut store, rng, "enc_c", cfg.classes, cfg.enc_width);
        let proj_z = DenseLayer::new(
            &mut store,
            rng,
            "proj_z",
            cfg.z_dim,
            cz * cfg.base_hw * cfg.base_hw,
            false,
        );
        let proj_c = DenseLayer::new(
            &mut store,
            rng,
            "proj_c",
            cfg.enc_width,
            cc * cfg.base_hw * cfg.base_hw,
            false,
        );
        let deconvs = (0..depth)
            .map(|i| {
                DeconvLayer::new(
                    &mut store,
                    rng,
                    &format!("up{i}"),
                    ch[i],
                    ch[i + 1],
                    4,
                    2,
                    1,
                    cfg.weight_norm,
                )
            })
            .collect();
        let head_rgb = ConvLayer::new(
            &mut store,
            rng,
            "head_rgb",
            ch[depth],
            3,
            3,
            1,
            1,
            cfg.weight_norm,
        );
        Ok(GeneratorPartial {
            cfg: cfg.clone(),
            store,
            enc_c,
            proj_z,
            proj_c,
            deconvs,
            head_rgb,
        })
    }

    /// Forward for a batch (z: N x z_dim, c: N x K). Returns the RGB output.
    pub fn forward(&self, g: &mut Graph<T>, bound: &BoundParams, z: Var, c: Var) -> Result<Var> {
        let n = g.value(z).shape()[0];
        let depth = self.deconvs.len();
        let ch = self.cfg.gen_channels(depth);
        let cz = ch[0] / 2;
        let cc = ch[0] - cz;
        let hw = self.cfg.base_hw;

        let hz = self.proj_z.forward(g, bound, z)?;
        let hz = g.relu(hz)?;
        let hz = g.reshape(hz, &[n, cz, hw, hw])?;

        let hc = self.enc_c.forward(g, bound, c, false)?;
        let hc = self.proj_c.forward(g, bound, hc)?;
        let hc = g.relu(hc)?;
        let hc = g.reshape(hc, &[n, cc, hw, hw])?;

        let mut x = g.concat(&[hz, hc], 1)?;
        for up in &self.deconvs {
            x = up.forward(g, bound, x)?;
            x = g.relu(x)?;
        }
        let rgb = self.head_rgb.forward(g, bound, x)?;
        g.tanh(rgb)
    }
}

/// Which conditioning the discriminator (and training regime) sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondMode {
    /// Full (c, v, t) conditioning; images carry rgb + mask (4 channels).
    Absolute,
    /// Class-only conditioning; images are rgb (3 channels).
    Partial,
}

impl CondMode {
    pub fn image_channels(self) -> usize {
        match self {
            CondMode::Absolute => 4,
            CondMode::Partial => 3,
        }
    }
}

/// Conditional discriminator. Three blocks:
///
/// 1. `encode_info`: the conditioning inputs each pass a two-layer encoder,
///    are concatenated, and fuse to a `d_hidden`-wide vector `x_info`.
/// 2. `encode_image`: strided weight-normed convolutions, flattened and
///    projected to `x_img` of the same width.
/// 3. [`combine`] forms `[x_info * x_img, x_info, x_img]`, and a dense stack
///    maps that to one sigmoid score.
///
/// The multiplicative term gives the score a direct correlation channel
/// between "what was asked for" and "what is in the image", which is what the
/// mismatched-condition losses train against.
pub struct Discriminator<T> {
    pub cfg: ModelConfig,
    pub mode: CondMode,
    pub store: ParamStore<T>,
    enc_c: Encoder,
    enc_v: Option<Encoder>,
    enc_t: Option<Encoder>,
    fuse_info: DenseLayer,
    convs: Vec<ConvLayer>,
    img_dense: DenseLayer,
    head0: DenseLayer,
    head1: DenseLayer,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: &ModelConfig, mode: CondMode, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.depth()?;
        let dch = cfg.disc_channels(depth);
        let mut store = ParamStore::new();
        let enc_c = Encoder::new(&mut store, rng, "enc_c", cfg.classes, cfg.enc_width);
        let (enc_v, enc_t, info_parts) = match mode {
            CondMode::Absolute => (
                Some(Encoder::new(&mut store, rng, "enc_v", 4, cfg.enc_width)),
                Some(Encoder::new(
                    &mut store,
                    rng,
                    "enc_t",
                    cfg.t_dim,
                    cfg.enc_width,
                )),
                3,
            ),
            CondMode::Partial => (None, None, 1),
        };
        let fuse_info = DenseLayer::new(
            &mut store,
            rng,
            "fuse_info",
            info_parts * cfg.enc_width,
            cfg.d_hidden,
            false,
        );
        let mut cin = mode.image_channels();
        let convs = (0..depth)
            .map(|i| {
                let layer = ConvLayer::new(
                    &mut store,
                    rng,
                    &format!("conv{i}"),
                    cin,
                    dch[i],
                    4,
                    2,
                    1,
                    cfg.weight_norm,
                );
                cin = dch[i];
                layer
            })
            .collect();
        let flat = dch[depth - 1] * cfg.base_hw * cfg.base_hw;
        let img_dense = DenseLayer::new(&mut store, rng, "img_dense", flat, cfg.d_hidden, false);
        let head0 = DenseLayer::new(&mut store, rng, "head0", 3 * cfg.d_hidden, cfg.d_hidden, false);
        let head1 = DenseLayer::new(&mut store, rng, "head1", cfg.d_hidden, 1, false);
        Ok(Discriminator {
            cfg: cfg.clone(),
            mode,
            store,
            enc_c,
            enc_v,
            enc_t,
            fuse_info,
            convs,
            img_dense,
            head0,
            head1,
        })
    }

    /// Conditioning pathway. `v`/`t` are required in absolute mode and
    /// rejected in partial mode.
    pub fn encode_info(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        c: Var,
        v: Option<Var>,
        t: Option<Var>,
    ) -> Result<Var> {
        let hc = self.enc_c.forward(g, bound, c, true)?;
        let fused_in = match (self.mode, v, t) {
            (CondMode::Absolute, Some(v), Some(t)) => {
                let hv = self
                    .enc_v
                    .as_ref()
                    .expect("absolute mode has enc_v")
                    .forward(g, bound, v, true)?;
                let ht = self
                    .enc_t
                    .as_ref()
                    .expect("absolute mode has enc_t")
                    .forward(g, bound, t, true)?;
                g.concat(&[hc, hv, ht], 1)?
            }
            (CondMode::Partial, None, None) => hc,
            _ => {
                return Err(Error::config(
                    "discriminator conditioning does not match its mode",
                ))
            }
        };
        let x = self.fuse_info.forward(g, bound, fused_in)?;
        g.leaky_relu(x, LEAKY_SLOPE)
    }

    /// Image pathway. `dropout` carries one pre-drawn mask per conv stage
    /// (training only); eval passes give `None`.
    pub fn encode_image(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        img: Var,
        dropout: Option<&[Tensor<T>]>,
    ) -> Result<Var> {
        let shape = g.value(img).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.mode.image_channels() {
            return Err(Error::shape(
                "encode_image",
                format!(
                    "expected N x {} x {s} x {s} input, got {shape:?}",
                    self.mode.image_channels(),
                    s = self.cfg.img_size
                ),
            ));
        }
        if let Some(masks) = dropout {
            if masks.len() != self.convs.len() {
                return Err(Error::config(format!(
                    "{} dropout masks for {} conv stages",
                    masks.len(),
                    self.convs.len()
                )));
            }
        }
        let mut x = img;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(g, bound, x)?;
            x = g.leaky_relu(x, LEAKY_SLOPE)?;
            if let Some(masks) = dropout {
                let m = g.constant(masks[i].clone());
                x = g.hadamard(x, m)?;
            }
        }
        let n = g.value(x).shape()[0];
        let flat: usize = g.value(x).shape()[1..].iter().product();
        let x = g.reshape(x, &[n, flat])?;
        let x = self.img_dense.forward(g, bound, x)?;
        g.leaky_relu(x, LEAKY_SLOPE)
    }

    /// Dense head over the combined representation; returns scores in (0, 1)
    /// with shape N x 1.
    pub fn discriminate(&self, g: &mut Graph<T>, bound: &BoundParams, combined: Var) -> Result<Var> {
        let h = self.head0.forward(g, bound, combined)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let h = self.head1.forward(g, bound, h)?;
        g.sigmoid(h)
    }

    /// Full scoring pass.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        c: Var,
        v: Option<Var>,
        t: Option<Var>,
        img: Var,
        dropout: Option<&[Tensor<T>]>,
    ) -> Result<Var> {
        let x_info = self.encode_info(g, bound, c, v, t)?;
        let x_img = self.encode_image(g, bound, img, dropout)?;
        let x = combine(g, x_info, x_img)?;
        self.discriminate(g, bound, x)
    }

    /// Draw one dropout mask per conv stage for a batch of `n` images.
    pub fn draw_dropout(&self, rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Result<Vec<Tensor<T>>> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1]")));
        }
        let depth = self.convs.len();
        let dch = self.cfg.disc_channels(depth);
        let mut side = self.cfg.img_size;
        let mut masks = Vec::with_capacity(depth);
        for &ch in dch.iter().take(depth) {
            side /= 2;
            masks.push(dropout_mask(rng, &[n, ch, side, side], rate));
        }
        Ok(masks)
    }

    /// Zero the final dense layer (weights and bias). With a zeroed head the
    /// sigmoid sees exactly 0 and every score is exactly 0.5 -- the fixed
    /// point the adversarial losses are measured against.
    pub fn zero_final_layer(&mut self) {
        for r in [self.head1.w_ref(), self.head1.b_ref()] {
            let t = self.store.get_mut(r);
            let shape = t.shape().to_vec();
            *t = Tensor::zeros(&shape);
        }
    }
}

/// `x_corr = [x_info * x_img, x_info, x_img]` -- the element-wise product
/// first, then both raw pathways, concatenated along features.
pub fn combine<T: Scalar>(g: &mut Graph<T>, x_info: Var, x_img: Var) -> Result<Var> {
    let prod = g.hadamard(x_info, x_img)?;
    g.concat(&[prod, x_info, x_img], 1)
}

/// Reconstruction baseline: mean squared error of the RGB output plus mean
/// squared error of the mask, each against its rendered target.
pub fn l2_baseline_loss<T: Scalar>(
    g: &mut Graph<T>,
    rgb: Var,
    mask: Var,
    rgb_target: &Tensor<T>,
    mask_target: &Tensor<T>,
) -> Result<Var> {
    let rt = g.constant(rgb_target.clone());
    let mt = g.constant(mask_target.clone());
    let dr = g.sub(rgb, rt)?;
    let dr = g.square(dr)?;
    let lr = g.mean_all(dr)?;
    let dm = g.sub(mask, mt)?;
    let dm = g.square(dm)?;
    let lm = g.mean_all(dm)?;
    g.add(lr, lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            classes: 3,
            img_size: 8,
            enc_width: 6,
            fused_width: 8,
            base_channels: 8,
            base_hw: 2,
            d_base_channels: 4,
            d_hidden: 8,
            z_dim: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_depth_and_validation() {
        assert_eq!(ModelConfig::default().depth().unwrap(), 3);
        let bad = ModelConfig {
            img_size: 33,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let same = ModelConfig {
            img_size: 4,
            base_hw: 4,
            ..ModelConfig::default()
        };
        assert!(same.validate().is_err(), "depth 0 must be rejected");
    }

    #[test]
    fn combine_fixture() {
        // combine([1,2], [3,4]) = [3, 8, 1, 2, 3, 4], bit-exact.
        let mut g = Graph::<f64>::new();
        let info = g.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let img = g.constant(Tensor::from_f64(&[1, 2], &[3.0, 4.0]).unwrap());
        let c = combine(&mut g, info, img).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 6]);
        assert_eq!(g.value(c).data(), &[3.0, 8.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn generator_abs_output_contract() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gen = GeneratorAbs::<f64>::new(&cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = gen.store.bind(&mut g, false);
        let c = g.constant(Tensor::from_f64(&[2, 3], &[1., 0., 0., 0., 1., 0.]).unwrap());
        let v = g.constant(Tensor::from_f64(&[2, 4], &[0., 1., 0., 1., 1., 0., 0., 1.]).unwrap());
        let t = g.constant(Tensor::zeros(&[2, 3]));
        let out = gen.forward(&mut g, &bound, c, v, t).unwrap();
        assert_eq!(g.value(out.rgb).shape(), &[2, 3, 8, 8]);
        assert_eq!(g.value(out.mask).shape(), &[2, 1, 8, 8]);
        // Ranges follow from the output nonlinearities.
        assert!(g.value(out.rgb).data().iter().all(|&x| (-1.0..=1.0).contains(&x)));
        assert!(g.value(out.mask).data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn generator_abs_hidden_is_row_normalized() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut gen = GeneratorAbs::<f64>::new(&cfg, &mut rng).unwrap();
        // Fresh 0.02-std weights leave interior activations around 1e-6,
        // where the norm's 1e-5 eps dominates and the output variance is
        // legitimately tiny. Scale the weights so the statistics check
        // exercises the regime the layer actually runs in once trained.
        for (_, t) in gen.store.tensors_mut() {
            *t = t.map(|x| x * 25.0);
        }
        let mut g = Graph::new();
        let bound = gen.store.bind(&mut g, false);
        let c = g.constant(Tensor::from_f64(&[2, 3], &[0., 1., 0., 0., 0., 1.]).unwrap());
        let v = g.constant(Tensor::from_f64(&[2, 4], &[1., 0., 0., 1., 0., 1., 0., 1.]).unwrap());
        let t = g.constant(Tensor::from_f64(&[2, 3], &[0.1, -0.05, 0.0, 0.0, 0.1, 0.1]).unwrap());
        let out = gen.forward(&mut g, &bound, c, v, t).unwrap();
        let h = g.value(out.hidden_norm);
        let d = h.shape()[1];
        for row in h.data().chunks_exact(d) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-6, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "row var {var}");
        }
    }

    #[test]
    fn generator_partial_output_contract() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gen = GeneratorPartial::<f64>::new(&cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = gen.store.bind(&mut g, false);
        let z = g.constant(Tensor::from_f64(&[2, 5], &[0.3; 10]).unwrap());
        let c = g.constant(Tensor::from_f64(&[2, 3], &[1., 0., 0., 0., 0., 1.]).unwrap());
        let rgb = gen.forward(&mut g, &bound, z, c).unwrap();
        assert_eq!(g.value(rgb).shape(), &[2, 3, 8, 8]);
    }

    #[test]
    fn discriminator_zeroed_head_scores_exactly_half() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut disc = Discriminator::<f64>::new(&cfg, CondMode::Absolute, &mut rng).unwrap();
        disc.zero_final_layer();
        let mut g = Graph::new();
        let bound = disc.store.bind(&mut g, false);
        let c = g.constant(Tensor::from_f64(&[2, 3], &[1., 0., 0., 0., 1., 0.]).unwrap());
        let v = g.constant(Tensor::from_f64(&[2, 4], &[0., 1., 1., 0., 1., 0., 0., 1.]).unwrap());
        let t = g.constant(Tensor::zeros(&[2, 3]));
        let img = g.constant(Tensor::full(&[2, 4, 8, 8], 0.25));
        let score = disc
            .forward(&mut g, &bound, c, Some(v), Some(t), img, None)
            .unwrap();
        assert_eq!(g.value(score).shape(), &[2, 1]);
        assert!(g.value(score).data().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn discriminator_mode_checks_conditioning() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let disc = Discriminator::<f64>::new(&cfg, CondMode::Partial, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = disc.store.bind(&mut g, false);
        let c = g.constant(Tensor::from_f64(&[1, 3], &[1., 0., 0.]).unwrap());
        let v = g.constant(Tensor::zeros(&[1, 4]));
        assert!(disc.encode_info(&mut g, &bound, c, Some(v), None).is_err());
        // Partial mode expects 3-channel images.
        let img4 = g.constant(Tensor::zeros(&[1, 4, 8, 8]));
        assert!(disc.encode_image(&mut g, &bound, img4, None).is_err());
    }

    #[test]
    fn condition_triple_validation() {
        let good = ConditionTriple::<f64> {
            class_id: 1,
            c: vec![0.0, 1.0, 0.0],
            v: [0.6, 0.8, 0.0, 1.0],
            t: vec![0.0, 0.0, 0.0],
        };
        good.validate().unwrap();

        let bad_hot = ConditionTriple::<f64> {
            c: vec![0.0, 0.9, 0.0],
            ..good.clone()
        };
        assert!(bad_hot.validate().is_err());

        let bad_pair = ConditionTriple::<f64> {
            v: [0.6, 0.9, 0.0, 1.0],
            ..good.clone()
        };
        assert!(bad_pair.validate().is_err());
    }

    #[test]
    fn l2_baseline_constant_offset() {
        // rgb off by 0.1 everywhere with an exact mask: loss = 0.01.
        let mut g = Graph::<f64>::new();
        let rgb_t = Tensor::full(&[1, 3, 4, 4], 0.2);
        let mask_t = Tensor::full(&[1, 1, 4, 4], 1.0);
        let rgb = g.constant(rgb_t.map(|x| x + 0.1));
        let mask = g.constant(mask_t.clone());
        let l = l2_baseline_loss(&mut g, rgb, mask, &rgb_t, &mask_t).unwrap();
        assert!((g.scalar_value(l) - 0.01).abs() < 1e-12);
    }
}
