//! Evaluation: masked reconstruction error, matched-vs-mismatched
//! discrimination accuracy, and an edge-energy sharpness score.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::Batch;
use crate::models::{CondMode, Discriminator, GeneratorAbs};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// Squared rgb error summed over pixels the ground-truth mask covers,
/// normalized by covered-pixel count times channels. Feeding the target back
/// as the generated image scores exactly zero.
pub fn masked_l2<T: Scalar>(
    rgb_gen: &Tensor<T>,
    rgb_gt: &Tensor<T>,
    mask_gt: &Tensor<T>,
) -> Result<f64> {
    let shape = rgb_gen.shape();
    if shape != rgb_gt.shape() {
        return Err(Error::shape(
            "masked_l2",
            format!("generated {:?} vs target {:?}", shape, rgb_gt.shape()),
        ));
    }
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::shape(
            "masked_l2",
            format!("want [n,3,h,w] images, got {shape:?}"),
        ));
    }
    let (n, hw) = (shape[0], shape[2] * shape[3]);
    if mask_gt.shape() != [n, 1, shape[2], shape[3]] {
        return Err(Error::shape(
            "masked_l2",
            format!("mask {:?} does not cover images {:?}", mask_gt.shape(), shape),
        ));
    }
    let (gen, gt, mask) = (rgb_gen.data(), rgb_gt.data(), mask_gt.data());
    let mut err = 0.0;
    let mut covered = 0.0;
    for i in 0..n {
        for p in 0..hw {
            let m = mask[i * hw + p].to_f64();
            if m <= 0.0 {
                continue;
            }
            covered += m;
            for c in 0..3 {
                let d = gen[(i * 3 + c) * hw + p].to_f64() - gt[(i * 3 + c) * hw + p].to_f64();
                err += m * d * d;
            }
        }
    }
    if covered == 0.0 {
        return Err(Error::config("masked_l2: mask covers no pixels"));
    }
    Ok(err / (3.0 * covered))
}

/// Mean finite-difference gradient magnitude over all channels and interior
/// pixels; a constant image scores zero, crisp edges score high.
pub fn sharpness<T: Scalar>(images: &Tensor<T>) -> Result<f64> {
    let shape = images.shape();
    if shape.len() != 4 || shape[2] < 2 || shape[3] < 2 {
        return Err(Error::shape(
            "sharpness",
            format!("want [n,c,h,w] with h,w >= 2, got {shape:?}"),
        ));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let data = images.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n * c {
        let plane = &data[i * h * w..(i + 1) * h * w];
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let v = plane[y * w + x].to_f64();
                let gx = plane[y * w + x + 1].to_f64() - v;
                let gy = plane[(y + 1) * w + x].to_f64() - v;
                total += (gx * gx + gy * gy).sqrt();
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Rotate every one-hot class label to the next class: a deterministic
/// wrong-but-plausible condition for mismatched scoring.
pub fn rotate_classes<T: Scalar>(c: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = c.shape();
    if shape.len() != 2 {
        return Err(Error::shape("rotate_classes", format!("want [n,k], got {shape:?}")));
    }
    let (n, k) = (shape[0], shape[1]);
    let src = c.data();
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        for j in 0..k {
            out[i * k + (j + 1) % k] = src[i * k + j];
        }
    }
    Tensor::new(shape, out)
}

fn scores<T: Scalar>(
    disc: &Discriminator<T>,
    batch: &Batch<T>,
    c: &Tensor<T>,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let db = disc.store.bind(&mut g, false);
    let cv = g.constant(c.clone());
    let (v, t, img) = match disc.mode {
        CondMode::Absolute => (
            Some(g.constant(batch.v.clone())),
            Some(g.constant(batch.t.clone())),
            g.constant(batch.image_4ch()),
        ),
        CondMode::Partial => (None, None, g.constant(batch.rgb.clone())),
    };
    let s = disc.forward(&mut g, &db, cv, v, t, img, None)?;
    Ok(g.value(s).data().iter().map(|&x| x.to_f64()).collect())
}

/// Fraction of correct calls when the discriminator scores each real image
/// once with its true condition (correct above 0.5) and once with the class
/// rotated to a wrong one (correct below 0.5).
pub fn matched_accuracy<T: Scalar>(
    disc: &Discriminator<T>,
    ds: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::config("matched_accuracy: no samples"));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let batch = crate::data::make_batch::<T>(ds, chunk)?;
        let matched = scores(disc, &batch, &batch.c)?;
        let mismatched = scores(disc, &batch, &rotate_classes(&batch.c)?)?;
        correct += matched.iter().filter(|&&s| s > 0.5).count();
        correct += mismatched.iter().filter(|&&s| s < 0.5).count();
    }
    Ok(correct as f64 / (2 * indices.len()) as f64)
}

/// Generator quality over a split: masked reconstruction error plus the
/// sharpness of generated and real images.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct GenEval {
    pub masked_l2: f64,
    pub sharpness_generated: f64,
    pub sharpness_real: f64,
}

/// Run the fully conditioned generator over every index and compare against
/// the renderer's ground truth.
pub fn eval_generator<T: Scalar>(
    gen: &GeneratorAbs<T>,
    ds: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<GenEval> {
    if indices.is_empty() {
        return Err(Error::config("eval_generator: no samples"));
    }
    let mut err_weighted = 0.0;
    let mut sharp_gen = 0.0;
    let mut sharp_real = 0.0;
    let mut total = 0usize;
    for chunk in indices.chunks(batch_size) {
        let batch = crate::data::make_batch::<T>(ds, chunk)?;
        let mut g = Graph::new();
        let gb = gen.store.bind(&mut g, false);
        let c = g.constant(batch.c.clone());
        let v = g.constant(batch.v.clone());
        let t = g.constant(batch.t.clone());
        let out = gen.forward(&mut g, &gb, c, v, t)?;
        let rgb = g.value(out.rgb);
        err_weighted += masked_l2(rgb, &batch.rgb, &batch.mask)? * chunk.len() as f64;
        sharp_gen += sharpness(rgb)? * chunk.len() as f64;
        sharp_real += sharpness(&batch.rgb)? * chunk.len() as f64;
        total += chunk.len();
    }
    Ok(GenEval {
        masked_l2: err_weighted / total as f64,
        sharpness_generated: sharp_gen / total as f64,
        sharpness_real: sharp_real / total as f64,
    })
}

/// Everything the `eval` command reports, serialized to JSON. Fields the
/// checkpoint's mode cannot support stay null.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct EvalReport {
    pub train: Option<GenEval>,
    pub test: Option<GenEval>,
    pub accuracy_train: Option<f64>,
    pub accuracy_test: Option<f64>,
}

/// Evaluate whichever networks are present over both splits.
pub fn evaluate<T: Scalar>(
    gen: Option<&GeneratorAbs<T>>,
    disc: Option<&Discriminator<T>>,
    ds: &Dataset,
    batch_size: usize,
) -> Result<EvalReport> {
    let train = ds.indices(Split::Train);
    let test = ds.indices(Split::Test);
    let mut report = EvalReport::default();
    if let Some(gen) = gen {
        report.train = Some(eval_generator(gen, ds, &train, batch_size)?);
        report.test = Some(eval_generator(gen, ds, &test, batch_size)?);
    }
    if let Some(disc) = disc {
        report.accuracy_train = Some(matched_accuracy(disc, ds, &train, batch_size)?);
        report.accuracy_test = Some(matched_accuracy(disc, ds, &test, batch_size)?);
    }
    Ok(report)
}
