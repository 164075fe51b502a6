//! The full gradient-check suite: every backward rule exercised one op at a
//! time, then miniature end-to-end generator/discriminator objectives checked
//! over every parameter tensor.
//!
//! Op outputs are projected against a fixed random tensor before reducing to
//! a scalar, so permuted or rescaled output gradients cannot cancel out.

use crate::data::sample_negatives;
use crate::error::{Error, Result};
use crate::layers::{BoundParams, ParamStore};
use crate::losses::{
    loss_d_terms_abs, loss_d_total, loss_g_abs, loss_g_partial, Batch, LossWeights,
};
use crate::models::{CondMode, Discriminator, GeneratorAbs, GeneratorPartial, ModelConfig};
use crate::tensor::{grad_check_multi, CheckEntry, GradCheckOpts, Graph, NormDim, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Error on the first failing entry, or confirm the whole list.
pub fn enforce(results: &[CheckEntry]) -> Result<()> {
    match results.iter().find(|r| !r.pass) {
        Some(r) => Err(Error::GradCheck {
            name: r.name.clone(),
            max_rel_err: r.max_rel_err,
            tol: r.tol,
        }),
        None => Ok(()),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("uniform shape")
}

/// Values bounded away from zero, both signs: safe for kinked activations.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(shape, data).expect("off_kink shape")
}

fn fnv(name: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Check one op through a fixed random projection of its output.
fn projected(
    name: &str,
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<CheckEntry> {
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).shape().to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(fnv(name));
    let proj = uniform(&mut rng, &out_shape, 0.5, 1.5);
    grad_check_multi(
        name,
        move |g, vars| {
            let out = build(g, vars)?;
            let p = g.constant(proj.clone());
            let w = g.hadamard(out, p)?;
            g.sum_all(w)
        },
        inputs,
        GradCheckOpts::default(),
    )
}

/// Every per-op check; `inject_bug` appends the deliberately broken square
/// gradient to prove the harness can fail.
pub fn op_checks(inject_bug: bool) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();

    let a = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    out.push(projected("add", &[a.clone(), b.clone()], |g, v| {
        g.add(v[0], v[1])
    })?);
    out.push(projected("sub", &[a.clone(), b.clone()], |g, v| {
        g.sub(v[0], v[1])
    })?);
    out.push(projected("hadamard", &[a.clone(), b], |g, v| {
        g.hadamard(v[0], v[1])
    })?);
    out.push(projected("scale", &[a.clone()], |g, v| g.scale(v[0], -1.7))?);
    out.push(projected("square", &[a.clone()], |g, v| g.square(v[0]))?);
    out.push(projected("tanh", &[a.clone()], |g, v| g.tanh(v[0]))?);
    out.push(projected("sigmoid", &[a], |g, v| g.sigmoid(v[0]))?);

    let kinky = off_kink(&mut rng, &[3, 4]);
    out.push(projected("relu", &[kinky.clone()], |g, v| g.relu(v[0]))?);
    out.push(projected("leaky_relu", &[kinky], |g, v| {
        g.leaky_relu(v[0], 0.2)
    })?);

    let m1 = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let m2 = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    out.push(projected("matmul", &[m1, m2], |g, v| g.matmul(v[0], v[1]))?);

    let x = uniform(&mut rng, &[4, 3], -1.0, 1.0);
    let w = uniform(&mut rng, &[5, 3], -1.0, 1.0);
    let bias = uniform(&mut rng, &[5], -0.5, 0.5);
    out.push(projected("linear", &[x, w, bias], |g, v| {
        g.linear(v[0], v[1], v[2])
    })?);

    for (tag, xs, ws, stride, pad) in [
        ("conv2d_k3s1p1", vec![2, 3, 5, 5], vec![4, 3, 3, 3], 1, 1),
        ("conv2d_k4s2p1", vec![1, 2, 6, 6], vec![3, 2, 4, 4], 2, 1),
        ("conv2d_k3s2p0", vec![1, 2, 5, 5], vec![2, 2, 3, 3], 2, 0),
    ] {
        let x = uniform(&mut rng, &xs, -1.0, 1.0);
        let w = uniform(&mut rng, &ws, -1.0, 1.0);
        out.push(projected(tag, &[x, w], move |g, v| {
            g.conv2d(v[0], v[1], stride, pad)
        })?);
    }

    for (tag, xs, ws, stride, pad) in [
        ("deconv2d_k4s2p1", vec![1, 3, 4, 4], vec![3, 2, 4, 4], 2, 1),
        ("deconv2d_k3s1p1", vec![2, 2, 3, 3], vec![2, 3, 3, 3], 1, 1),
    ] {
        let x = uniform(&mut rng, &xs, -1.0, 1.0);
        let w = uniform(&mut rng, &ws, -1.0, 1.0);
        out.push(projected(tag, &[x, w], move |g, v| {
            g.deconv2d(v[0], v[1], stride, pad)
        })?);
    }

    let x4 = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let bc = uniform(&mut rng, &[3], -0.5, 0.5);
    out.push(projected("bias_channel", &[x4.clone(), bc], |g, v| {
        g.bias_channel(v[0], v[1])
    })?);
    out.push(projected("instance_norm", &[x4], |g, v| {
        g.instance_norm(v[0], 1e-5)
    })?);

    let xv = uniform(&mut rng, &[3, 6], -1.0, 1.0);
    out.push(projected("instance_norm_vec", &[xv], |g, v| {
        g.instance_norm_vec(v[0], 1e-5)
    })?);

    let wn = uniform(&mut rng, &[5, 4], -1.0, 1.0);
    let gs = uniform(&mut rng, &[5], 0.5, 1.5);
    out.push(projected("weight_norm_rows", &[wn, gs], |g, v| {
        g.weight_norm(v[0], v[1], NormDim::Rows)
    })?);
    let wn1 = uniform(&mut rng, &[3, 4, 2, 2], -1.0, 1.0);
    let gs1 = uniform(&mut rng, &[4], 0.5, 1.5);
    out.push(projected("weight_norm_dim1", &[wn1, gs1], |g, v| {
        g.weight_norm(v[0], v[1], NormDim::Dim1)
    })?);

    let c1 = uniform(&mut rng, &[2, 2], -1.0, 1.0);
    let c2 = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    out.push(projected("concat_axis1", &[c1, c2], |g, v| {
        g.concat(&[v[0], v[1]], 1)
    })?);
    let r1 = uniform(&mut rng, &[2, 4], -1.0, 1.0);
    let r2 = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    out.push(projected("concat_axis0", &[r1, r2], |g, v| {
        g.concat(&[v[0], v[1]], 0)
    })?);

    let rs = uniform(&mut rng, &[2, 6], -1.0, 1.0);
    out.push(projected("reshape", &[rs], |g, v| {
        let y = g.reshape(v[0], &[3, 4])?;
        g.square(y)
    })?);

    let s = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    out.push(projected("sum_all", &[s.clone()], |g, v| {
        let y = g.square(v[0])?;
        g.sum_all(y)
    })?);
    out.push(projected("mean_all", &[s], |g, v| {
        let y = g.tanh(v[0])?;
        g.mean_all(y)
    })?);

    let logits = uniform(&mut rng, &[6, 1], -2.0, 2.0);
    let target = Tensor::new(&[6, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.3]).unwrap();
    let weight = uniform(&mut rng, &[6, 1], 0.2, 2.0);
    out.push(projected("bce_mean", &[logits.clone()], {
        let target = target.clone();
        move |g, v| {
            let p = g.sigmoid(v[0])?;
            g.bce_mean(p, &target, None)
        }
    })?);
    out.push(projected("bce_mean_weighted", &[logits], move |g, v| {
        let p = g.sigmoid(v[0])?;
        g.bce_mean(p, &target, Some(&weight))
    })?);

    if inject_bug {
        let xb = uniform(&mut rng, &[2, 3], -1.0, 1.0);
        out.push(projected("square_wrong_grad", &[xb], |g, v| {
            g.square_wrong_grad(v[0])
        })?);
    }
    Ok(out)
}

// ---- end-to-end checks -------------------------------------------------------

fn tiny_model() -> ModelConfig {
    ModelConfig {
        classes: 2,
        img_size: 8,
        t_dim: 3,
        enc_width: 6,
        fused_width: 8,
        base_channels: 8,
        base_hw: 2,
        d_base_channels: 3,
        d_hidden: 8,
        z_dim: 4,
        weight_norm: true,
    }
}

/// Replace initialization-scale parameters with O(1) values bounded away
/// from zero. At init scale (std 0.02) the small normalization groups sit
/// near zero variance, where the objective is too ill-conditioned for finite
/// differences to mean anything; the backward rules are the same either way.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, t) in store.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(0.2..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
}

fn tiny_batch(rng: &mut ChaCha8Rng, classes: usize, img: usize) -> Batch<f64> {
    let n = 2;
    let mut c = vec![0.0; n * classes];
    for (i, row) in c.chunks_exact_mut(classes).enumerate() {
        row[i % classes] = 1.0;
    }
    let mut v = Vec::with_capacity(n * 4);
    for _ in 0..n {
        let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let alt: f64 = rng.random_range(-0.5..0.5);
        v.extend_from_slice(&[az.sin(), az.cos(), alt.sin(), alt.cos()]);
    }
    Batch {
        c: Tensor::new(&[n, classes], c).unwrap(),
        v: Tensor::new(&[n, 4], v).unwrap(),
        t: uniform(rng, &[n, 3], -0.15, 0.15),
        rgb: uniform(rng, &[n, 3, img, img], -1.0, 1.0),
        mask: uniform(rng, &[n, 1, img, img], 0.0, 1.0),
    }
}

/// Compare a store's analytic gradients against central differences of
/// `eval`, sampling at most `cap` elements per parameter tensor. Perturbs
/// the model's own store between calls, so structure and values never drift
/// apart.
fn fd_store_check<M>(
    name: &str,
    model: &mut M,
    store_of: &dyn Fn(&mut M) -> &mut ParamStore<f64>,
    eval: &dyn Fn(&M) -> Result<f64>,
    grads: &[Vec<f64>],
    cap: usize,
) -> Result<CheckEntry> {
    let opts = GradCheckOpts::end_to_end();
    let numels: Vec<usize> = store_of(model).iter().map(|(_, t)| t.numel()).collect();
    let mut max_rel_err = 0.0f64;
    for (i, &numel) in numels.iter().enumerate() {
        let stride = numel.div_ceil(cap).max(1);
        for j in (0..numel).step_by(stride) {
            let orig = {
                let (_, t) = store_of(model).tensors_mut().nth(i).expect("entry");
                let orig = t.data()[j];
                t.data_mut()[j] = orig + opts.h;
                orig
            };
            let fp = eval(model)?;
            {
                let (_, t) = store_of(model).tensors_mut().nth(i).expect("entry");
                t.data_mut()[j] = orig - opts.h;
            }
            let fm = eval(model)?;
            {
                let (_, t) = store_of(model).tensors_mut().nth(i).expect("entry");
                t.data_mut()[j] = orig;
            }
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = grads[i][j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            max_rel_err = max_rel_err.max(rel);
        }
    }
    Ok(CheckEntry {
        name: name.to_string(),
        max_rel_err,
        tol: opts.tol,
        pass: max_rel_err <= opts.tol,
    })
}

/// Generator forward (rgb, mask, and hidden-norm all projected) over every
/// generator parameter.
fn check_generator_forward(cap: usize) -> Result<CheckEntry> {
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(0xe2e1);
    let mut gen = GeneratorAbs::<f64>::new(&cfg, &mut rng)?;
    randomize(&mut gen.store, &mut rng);
    let batch = tiny_batch(&mut rng, cfg.classes, cfg.img_size);
    let proj_rgb = uniform(&mut rng, &[2, 3, cfg.img_size, cfg.img_size], 0.5, 1.5);
    let proj_mask = uniform(&mut rng, &[2, 1, cfg.img_size, cfg.img_size], 0.5, 1.5);
    let hidden_shape = {
        let mut g = Graph::new();
        let gb = gen.store.bind(&mut g, false);
        let c = g.constant(batch.c.clone());
        let v = g.constant(batch.v.clone());
        let t = g.constant(batch.t.clone());
        let out = gen.forward(&mut g, &gb, c, v, t)?;
        g.value(out.hidden_norm).shape().to_vec()
    };
    let proj_hidden = uniform(&mut rng, &hidden_shape, 0.5, 1.5);

    let forward = |g: &mut Graph<f64>,
                   gen: &GeneratorAbs<f64>,
                   trainable: bool|
     -> Result<(Var, BoundParams)> {
        let gb = gen.store.bind(g, trainable);
        let c = g.constant(batch.c.clone());
        let v = g.constant(batch.v.clone());
        let t = g.constant(batch.t.clone());
        let out = gen.forward(g, &gb, c, v, t)?;
        let pr = g.constant(proj_rgb.clone());
        let pm = g.constant(proj_mask.clone());
        let ph = g.constant(proj_hidden.clone());
        let lr = g.hadamard(out.rgb, pr)?;
        let lr = g.sum_all(lr)?;
        let lm = g.hadamard(out.mask, pm)?;
        let lm = g.sum_all(lm)?;
        let lh = g.hadamard(out.hidden_norm, ph)?;
        let lh = g.sum_all(lh)?;
        let s = g.add(lr, lm)?;
        let s = g.add(s, lh)?;
        Ok((s, gb))
    };

    let grads = {
        let mut g = Graph::new();
        let (loss, gb) = forward(&mut g, &gen, true)?;
        g.backward(loss)?;
        gen.store.collect_grads(&g, &gb)?
    };
    let eval = |gen: &GeneratorAbs<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = forward(&mut g, gen, false)?;
        Ok(g.scalar_value(loss))
    };
    fd_store_check(
        "e2e_generator_forward",
        &mut gen,
        &|m| &mut m.store,
        &eval,
        &grads,
        cap,
    )
}

/// Discriminator parameters through the full negative-sampling objective.
fn check_discriminator_loss(cap: usize) -> Result<CheckEntry> {
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(0xe2e2);
    let mut gen = GeneratorAbs::<f64>::new(&cfg, &mut rng)?;
    randomize(&mut gen.store, &mut rng);
    let mut disc = Discriminator::<f64>::new(&cfg, CondMode::Absolute, &mut rng)?;
    randomize(&mut disc.store, &mut rng);
    let gen = gen;
    let batch = tiny_batch(&mut rng, cfg.classes, cfg.img_size);
    let negs = sample_negatives(&batch, cfg.classes, &mut rng)?;
    let weights = LossWeights::default();

    let build = |g: &mut Graph<f64>,
                 disc: &Discriminator<f64>,
                 trainable: bool|
     -> Result<(Var, BoundParams)> {
        let gb = gen.store.bind(g, false);
        let db = disc.store.bind(g, trainable);
        let terms = loss_d_terms_abs(g, &gen, &gb, disc, &db, &batch, &negs, None)?;
        let total = loss_d_total(g, &terms, &weights)?;
        Ok((total, db))
    };
    let grads = {
        let mut g = Graph::new();
        let (loss, db) = build(&mut g, &disc, true)?;
        g.backward(loss)?;
        disc.store.collect_grads(&g, &db)?
    };
    let eval = |disc: &Discriminator<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = build(&mut g, disc, false)?;
        Ok(g.scalar_value(loss))
    };
    fd_store_check(
        "e2e_discriminator_loss",
        &mut disc,
        &|m| &mut m.store,
        &eval,
        &grads,
        cap,
    )
}

/// Generator parameters through the adversarial objective, discriminator
/// frozen.
fn check_generator_loss(cap: usize) -> Result<CheckEntry> {
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(0xe2e3);
    let mut gen = GeneratorAbs::<f64>::new(&cfg, &mut rng)?;
    randomize(&mut gen.store, &mut rng);
    let mut disc = Discriminator::<f64>::new(&cfg, CondMode::Absolute, &mut rng)?;
    randomize(&mut disc.store, &mut rng);
    let disc = disc;
    let batch = tiny_batch(&mut rng, cfg.classes, cfg.img_size);

    let build = |g: &mut Graph<f64>,
                 gen: &GeneratorAbs<f64>,
                 trainable: bool|
     -> Result<(Var, BoundParams)> {
        let gb = gen.store.bind(g, trainable);
        let db = disc.store.bind(g, false);
        let (loss, _) = loss_g_abs(g, gen, &gb, &disc, &db, &batch)?;
        Ok((loss, gb))
    };
    let grads = {
        let mut g = Graph::new();
        let (loss, gb) = build(&mut g, &gen, true)?;
        g.backward(loss)?;
        gen.store.collect_grads(&g, &gb)?
    };
    let eval = |gen: &GeneratorAbs<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = build(&mut g, gen, false)?;
        Ok(g.scalar_value(loss))
    };
    fd_store_check(
        "e2e_generator_loss",
        &mut gen,
        &|m| &mut m.store,
        &eval,
        &grads,
        cap,
    )
}

/// Partially conditioned generator through its objective.
fn check_partial_generator_loss(cap: usize) -> Result<CheckEntry> {
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(0xe2e4);
    let mut gen = GeneratorPartial::<f64>::new(&cfg, &mut rng)?;
    randomize(&mut gen.store, &mut rng);
    let mut disc = Discriminator::<f64>::new(&cfg, CondMode::Partial, &mut rng)?;
    randomize(&mut disc.store, &mut rng);
    let disc = disc;
    let batch = tiny_batch(&mut rng, cfg.classes, cfg.img_size);
    let z = uniform(&mut rng, &[2, cfg.z_dim], -1.0, 1.0);

    let build = |g: &mut Graph<f64>,
                 gen: &GeneratorPartial<f64>,
                 trainable: bool|
     -> Result<(Var, BoundParams)> {
        let gb = gen.store.bind(g, trainable);
        let db = disc.store.bind(g, false);
        let (loss, _) = loss_g_partial(g, gen, &gb, &disc, &db, &z, &batch.c)?;
        Ok((loss, gb))
    };
    let grads = {
        let mut g = Graph::new();
        let (loss, gb) = build(&mut g, &gen, true)?;
        g.backward(loss)?;
        gen.store.collect_grads(&g, &gb)?
    };
    let eval = |gen: &GeneratorPartial<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = build(&mut g, gen, false)?;
        Ok(g.scalar_value(loss))
    };
    fd_store_check(
        "e2e_partial_generator_loss",
        &mut gen,
        &|m| &mut m.store,
        &eval,
        &grads,
        cap,
    )
}

/// Miniature end-to-end objectives, every parameter tensor sampled.
pub fn e2e_checks(cap: usize) -> Result<Vec<CheckEntry>> {
    Ok(vec![
        check_generator_forward(cap)?,
        check_discriminator_loss(cap)?,
        check_generator_loss(cap)?,
        check_partial_generator_loss(cap)?,
    ])
}

/// The whole suite: every op rule plus the end-to-end graphs.
pub fn run_suite(inject_bug: bool) -> Result<Vec<CheckEntry>> {
    let mut results = op_checks(inject_bug)?;
    results.extend(e2e_checks(120)?);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_gradient_matches_central_differences() {
        let results = op_checks(false).unwrap();
        assert!(results.len() >= 20);
        for r in &results {
            assert!(r.pass, "{}: max rel err {} at tol {}", r.name, r.max_rel_err, r.tol);
        }
    }

    #[test]
    fn the_harness_catches_a_planted_wrong_gradient() {
        let results = op_checks(true).unwrap();
        let bug = results.iter().find(|r| r.name == "square_wrong_grad").unwrap();
        assert!(!bug.pass, "planted bug slipped through: {bug:?}");
        assert!(enforce(&results).is_err());
    }

    #[test]
    fn miniature_end_to_end_graphs_match_central_differences() {
        for r in e2e_checks(40).unwrap() {
            assert!(r.pass, "{}: max rel err {} at tol {}", r.name, r.max_rel_err, r.tol);
        }
    }
}
