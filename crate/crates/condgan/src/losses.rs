//! The adversarial loss family.
//!
//! Besides the usual real/generated terms, the discriminator trains on
//! *mismatched* pairs: a real image presented with a wrong class, view, or
//! transform, scored toward 0. Continuous mismatches are weighted by the
//! squared distance between the true and substituted condition, so a barely
//! wrong view costs little and an antipodal one ~4x the plain BCE.
//!
//! Stop-gradient contracts are structural: each step binds the frozen model's
//! parameters as graph constants, so there is no gradient path to them at
//! all, rather than a gradient that is computed and discarded.

use crate::error::{Error, Result};
use crate::models::{Discriminator, GenOutput, GeneratorAbs, GeneratorPartial};
use crate::layers::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Coefficients of the discriminator objective:
/// `alpha * real + beta * gen + gamma_c * neg_c + gamma_v * neg_v + gamma_t * neg_t`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_c: f64,
    pub gamma_v: f64,
    pub gamma_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma_c: 1.0,
            gamma_v: 0.5,
            gamma_t: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_c", self.gamma_c),
            ("gamma_v", self.gamma_v),
            ("gamma_t", self.gamma_t),
        ];
        for (name, w) in all {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::config(format!("loss weight {name} = {w} must be >= 0")));
            }
        }
        if self.alpha + self.beta == 0.0 {
            return Err(Error::config(
                "alpha and beta cannot both be zero: nothing anchors real vs generated",
            ));
        }
        Ok(())
    }

    /// All mismatch terms off; what remains is the plain adversarial pair.
    pub fn without_negatives(&self) -> Self {
        LossWeights {
            gamma_c: 0.0,
            gamma_v: 0.0,
            gamma_t: 0.0,
            ..*self
        }
    }
}

/// A rendered training batch in tensor form.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub c: Tensor<T>,    // N x K one-hots
    pub v: Tensor<T>,    // N x 4 view encoding
    pub t: Tensor<T>,    // N x 3 transform
    pub rgb: Tensor<T>,  // N x 3 x S x S in [-1, 1]
    pub mask: Tensor<T>, // N x 1 x S x S in [0, 1]
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.c.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// rgb and mask stacked into the discriminator's 4-channel image.
    pub fn image_4ch(&self) -> Tensor<T> {
        Tensor::concat(&[&self.rgb, &self.mask], 1).expect("batch shapes agree")
    }
}

/// Mismatched conditions for one batch, with squared-distance weights for
/// the continuous ones.
#[derive(Clone, Debug)]
pub struct Negatives<T> {
    pub c: Tensor<T>,   // N x K, uniformly among the K-1 wrong classes
    pub v: Tensor<T>,   // N x 4, independently redrawn view
    pub t: Tensor<T>,   // N x 3, independently redrawn transform
    pub w_v: Tensor<T>, // N x 1: ||v - v'||^2
    pub w_t: Tensor<T>, // N x 1: ||t - t'||^2
}

/// Mean BCE of scores against a constant scalar target.
pub fn bce<T: Scalar>(g: &mut Graph<T>, score: Var, target: f64) -> Result<Var> {
    let t = Tensor::full(g.value(score).shape(), T::from_f64(target));
    g.bce_mean(score, &t, None)
}

/// Mean of `w_i * bce(score_i, target)` with per-sample weights.
pub fn bce_weighted<T: Scalar>(
    g: &mut Graph<T>,
    score: Var,
    target: f64,
    w: &Tensor<T>,
) -> Result<Var> {
    let t = Tensor::full(g.value(score).shape(), T::from_f64(target));
    let w = w.reshaped(g.value(score).shape())?;
    g.bce_mean(score, &t, Some(&w))
}

/// The five discriminator terms as graph nodes. `neg_v`/`neg_t` are absent in
/// partial mode, where the conditioning has no view or transform.
pub struct DTerms {
    pub real: Var,
    pub gen: Var,
    pub neg_c: Var,
    pub neg_v: Option<Var>,
    pub neg_t: Option<Var>,
}

/// Weighted sum of the terms. A positive weight on an absent term is a
/// configuration error; a zero weight skips the term entirely.
pub fn loss_d_total<T: Scalar>(g: &mut Graph<T>, terms: &DTerms, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    let mut total = g.scale(terms.real, w.alpha)?;
    let gen = g.scale(terms.gen, w.beta)?;
    total = g.add(total, gen)?;
    if w.gamma_c > 0.0 {
        let t = g.scale(terms.neg_c, w.gamma_c)?;
        total = g.add(total, t)?;
    }
    for (name, weight, term) in [
        ("gamma_v", w.gamma_v, terms.neg_v),
        ("gamma_t", w.gamma_t, terms.neg_t),
    ] {
        if weight > 0.0 {
            let term = term.ok_or_else(|| {
                Error::config(format!("{name} > 0 but this mode has no such term"))
            })?;
            let t = g.scale(term, weight)?;
            total = g.add(total, t)?;
        }
    }
    Ok(total)
}

// ---- absolute mode ---------------------------------------------------------

/// Generator objective: fool the frozen discriminator on the batch's own
/// conditions. Bind the generator trainable and the discriminator constant.
/// Returns the loss and the generator outputs (for metrics/rendering).
pub fn loss_g_abs<T: Scalar>(
    g: &mut Graph<T>,
    gen: &GeneratorAbs<T>,
    gb: &BoundParams,
    disc: &Discriminator<T>,
    db: &BoundParams,
    batch: &Batch<T>,
) -> Result<(Var, GenOutput)> {
    let c = g.constant(batch.c.clone());
    let v = g.constant(batch.v.clone());
    let t = g.constant(batch.t.clone());
    let out = gen.forward(g, gb, c, v, t)?;
    let img = g.concat(&[out.rgb, out.mask], 1)?;
    let score = disc.forward(g, db, c, Some(v), Some(t), img, None)?;
    let loss = bce(g, score, 1.0)?;
    Ok((loss, out))
}

/// All five discriminator terms in one graph, sharing the expensive image
/// encodings: the real image is encoded once and reused by the three
/// mismatch terms, which only swap the conditioning pathway.
#[allow(clippy::too_many_arguments)]
pub fn loss_d_terms_abs<T: Scalar>(
    g: &mut Graph<T>,
    gen: &GeneratorAbs<T>,
    gb: &BoundParams,
    disc: &Discriminator<T>,
    db: &BoundParams,
    batch: &Batch<T>,
    negs: &Negatives<T>,
    dropout: Option<(&[Tensor<T>], &[Tensor<T>])>,
) -> Result<DTerms> {
    let c = g.constant(batch.c.clone());
    let v = g.constant(batch.v.clone());
    let t = g.constant(batch.t.clone());
    let (drop_real, drop_fake) = match dropout {
        Some((r, f)) => (Some(r), Some(f)),
        None => (None, None),
    };

    // Real image, true conditions -> 1.
    let img_real = g.constant(batch.image_4ch());
    let x_img_real = disc.encode_image(g, db, img_real, drop_real)?;
    let x_info_true = disc.encode_info(g, db, c, Some(v), Some(t))?;
    let xc = crate::models::combine(g, x_info_true, x_img_real)?;
    let score_real = disc.discriminate(g, db, xc)?;
    let real = bce(g, score_real, 1.0)?;

    // Generated image (generator frozen), true conditions -> 0.
    let out = gen.forward(g, gb, c, v, t)?;
    let img_fake = g.concat(&[out.rgb, out.mask], 1)?;
    let x_img_fake = disc.encode_image(g, db, img_fake, drop_fake)?;
    let xc = crate::models::combine(g, x_info_true, x_img_fake)?;
    let score_gen = disc.discriminate(g, db, xc)?;
    let gen_term = bce(g, score_gen, 0.0)?;

    // Real image, wrong class -> 0.
    let c_neg = g.constant(negs.c.clone());
    let x_info_nc = disc.encode_info(g, db, c_neg, Some(v), Some(t))?;
    let xc = crate::models::combine(g, x_info_nc, x_img_real)?;
    let score_nc = disc.discriminate(g, db, xc)?;
    let neg_c = bce(g, score_nc, 0.0)?;

    // Real image, wrong view -> 0, weighted by squared view distance.
    let v_neg = g.constant(negs.v.clone());
    let x_info_nv = disc.encode_info(g, db, c, Some(v_neg), Some(t))?;
    let xc = crate::models::combine(g, x_info_nv, x_img_real)?;
    let score_nv = disc.discriminate(g, db, xc)?;
    let neg_v = bce_weighted(g, score_nv, 0.0, &negs.w_v)?;

    // Real image, wrong transform -> 0, weighted by squared distance.
    let t_neg = g.constant(negs.t.clone());
    let x_info_nt = disc.encode_info(g, db, c, Some(v), Some(t_neg))?;
    let xc = crate::models::combine(g, x_info_nt, x_img_real)?;
    let score_nt = disc.discriminate(g, db, xc)?;
    let neg_t = bce_weighted(g, score_nt, 0.0, &negs.w_t)?;

    Ok(DTerms {
        real,
        gen: gen_term,
        neg_c,
        neg_v: Some(neg_v),
        neg_t: Some(neg_t),
    })
}

// ---- partial mode ----------------------------------------------------------

/// Generator objective in partial mode: z plus class label.
pub fn loss_g_partial<T: Scalar>(
    g: &mut Graph<T>,
    gen: &GeneratorPartial<T>,
    gb: &BoundParams,
    disc: &Discriminator<T>,
    db: &BoundParams,
    z: &Tensor<T>,
    c: &Tensor<T>,
) -> Result<(Var, Var)> {
    let zv = g.constant(z.clone());
    let cv = g.constant(c.clone());
    let rgb = gen.forward(g, gb, zv, cv)?;
    let score = disc.forward(g, db, cv, None, None, rgb, None)?;
    let loss = bce(g, score, 1.0)?;
    Ok((loss, rgb))
}

/// Discriminator terms in partial mode: real / generated / wrong-class, all
/// against rgb-only images.
#[allow(clippy::too_many_arguments)]
pub fn loss_d_terms_partial<T: Scalar>(
    g: &mut Graph<T>,
    gen: &GeneratorPartial<T>,
    gb: &BoundParams,
    disc: &Discriminator<T>,
    db: &BoundParams,
    c: &Tensor<T>,
    rgb_real: &Tensor<T>,
    z: &Tensor<T>,
    c_neg: &Tensor<T>,
    dropout: Option<(&[Tensor<T>], &[Tensor<T>])>,
) -> Result<DTerms> {
    let cv = g.constant(c.clone());
    let (drop_real, drop_fake) = match dropout {
        Some((r, f)) => (Some(r), Some(f)),
        None => (None, None),
    };

    let img_real = g.constant(rgb_real.clone());
    let x_img_real = disc.encode_image(g, db, img_real, drop_real)?;
    let x_info_true = disc.encode_info(g, db, cv, None, None)?;
    let xc = crate::models::combine(g, x_info_true, x_img_real)?;
    let score_real = disc.discriminate(g, db, xc)?;
    let real = bce(g, score_real, 1.0)?;

    let zv = g.constant(z.clone());
    let rgb_fake = gen.forward(g, gb, zv, cv)?;
    let x_img_fake = disc.encode_image(g, db, rgb_fake, drop_fake)?;
    let xc = crate::models::combine(g, x_info_true, x_img_fake)?;
    let score_gen = disc.discriminate(g, db, xc)?;
    let gen_term = bce(g, score_gen, 0.0)?;

    let cnv = g.constant(c_neg.clone());
    let x_info_nc = disc.encode_info(g, db, cnv, None, None)?;
    let xc = crate::models::combine(g, x_info_nc, x_img_real)?;
    let score_nc = disc.discriminate(g, db, xc)?;
    let neg_c = bce(g, score_nc, 0.0)?;

    Ok(DTerms {
        real,
        gen: gen_term,
        neg_c,
        neg_v: None,
        neg_t: None,
    })
}

/// Sum of squared L2 norms of every parameter in the bound set, as a graph
/// node; multiply by the coefficient at the call site.
pub fn l2_penalty<T: Scalar>(g: &mut Graph<T>, bound: &BoundParams) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &v in bound.vars() {
        let sq = g.square(v)?;
        let s = g.sum_all(sq)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| Error::config("no parameters to penalize"))
}
