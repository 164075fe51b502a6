//! Training loops: alternating GAN optimization with a 1-generator-step-per-
//! `cadence`-discriminator-steps schedule, and the supervised L2 baseline.
//!
//! Determinism contract: with a fixed seed the whole run is a pure function.
//! Each epoch draws its rng stream from (seed, epoch), so a checkpoint at an
//! epoch boundary plus the epoch number reconstructs the exact continuation.
//! Checkpoints carry model parameters, Adam moments, and counters as named
//! tensors in one file.

use crate::checkpoint::{self, Entries};
use crate::data::{make_batch, mix_seed, sample_negatives, Dataset, DatasetConfig, Split};
use crate::error::{Error, Result};
use crate::layers::{normal, ParamStore};
use crate::losses::{
    l2_penalty, loss_d_terms_abs, loss_d_terms_partial, loss_d_total, loss_g_abs, loss_g_partial,
    Batch, LossWeights, Negatives,
};
use crate::models::{
    l2_baseline_loss, CondMode, Discriminator, GeneratorAbs, GeneratorPartial, ModelConfig,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRICS_HEADER: &str =
    "epoch,step,loss_g,loss_d_real,loss_d_gen,loss_neg_c,loss_neg_v,loss_neg_t,loss_d_total";

// ---- Adam ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHp {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHp {
    fn default() -> Self {
        AdamHp {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHp {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::config("adam eps must be positive"));
        }
        Ok(())
    }
}

/// First/second moment buffers aligned with a parameter store, plus the
/// shared step counter.
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Moments and counter as checkpoint entries, named after the parameters.
    pub fn entries(&self, prefix: &str, store: &ParamStore<T>) -> Entries {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        for (i, (name, t)) in store.iter().enumerate() {
            let shape = t.shape();
            let m = Tensor::new(shape, self.m[i].iter().map(|&x| x.to_f64() as f32).collect())
                .expect("moment shape");
            let v = Tensor::new(shape, self.v[i].iter().map(|&x| x.to_f64() as f32).collect())
                .expect("moment shape");
            out.push((format!("{prefix}m.{name}"), m));
            out.push((format!("{prefix}v.{name}"), v));
        }
        out.push((
            format!("{prefix}step"),
            Tensor::new(&[1], vec![self.step as f32]).unwrap(),
        ));
        out
    }

    pub fn load(&mut self, entries: &Entries, prefix: &str, store: &ParamStore<T>) -> Result<()> {
        for (i, (name, t)) in store.iter().enumerate() {
            let m = checkpoint::find(entries, &format!("{prefix}m.{name}"))?;
            let v = checkpoint::find(entries, &format!("{prefix}v.{name}"))?;
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(Error::checkpoint(format!(
                    "optimizer moment shape mismatch for {name}"
                )));
            }
            self.m[i] = m.data().iter().map(|&x| T::from_f64(x as f64)).collect();
            self.v[i] = v.data().iter().map(|&x| T::from_f64(x as f64)).collect();
        }
        let step = checkpoint::find(entries, &format!("{prefix}step"))?;
        self.step = step.data()[0] as u64;
        Ok(())
    }
}

/// One bias-corrected Adam update over every parameter in the store.
/// Gradients must align with store order; non-finite gradients abort with the
/// parameter's name before anything is touched.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    hp: &AdamHp,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    for ((name, t), g) in store.iter().zip(grads) {
        if g.len() != t.numel() {
            return Err(Error::config(format!("gradient size mismatch for {name}")));
        }
        if !g.iter().fold(true, |acc, x| acc & x.is_finite()) {
            return Err(Error::non_finite("gradient", format!("parameter {name}")));
        }
    }
    state.step += 1;
    let b1 = T::from_f64(hp.beta1);
    let b2 = T::from_f64(hp.beta2);
    let one = T::one();
    // Fold the bias corrections into the step size.
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    let lr = T::from_f64(hp.lr / bc1);
    let vscale = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(hp.eps);
    for (i, (_, t)) in store.tensors_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = t.data_mut();
        for j in 0..p.len() {
            let g = grads[i][j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            p[j] = p[j] - lr * m[j] / ((v[j] * vscale).sqrt() + eps);
        }
    }
    Ok(())
}

// ---- configuration ---------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_gan: usize,
    pub epochs_l2: usize,
    /// Discriminator steps per generator step.
    pub cadence: usize,
    /// Read the schedule the other way: generator every batch, discriminator
    /// every cadence-th.
    pub cadence_inverted: bool,
    pub weights: LossWeights,
    pub adam: AdamHp,
    pub seed: u64,
    /// Coefficient on the discriminator's squared parameter norm.
    pub l2_coeff: f64,
    /// Dropout rate between discriminator conv stages (0 disables).
    pub dropout_rate: f64,
    pub mode: CondMode,
    /// Checkpoint every this many epochs (the final epoch always saves).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs_gan: 200,
            epochs_l2: 200,
            cadence: 3,
            cadence_inverted: false,
            weights: LossWeights::default(),
            adam: AdamHp::default(),
            seed: 42,
            l2_coeff: 0.0,
            dropout_rate: 0.0,
            mode: CondMode::Absolute,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2"));
        }
        if self.cadence < 1 {
            return Err(Error::config("cadence must be >= 1"));
        }
        if self.epochs_gan < 1 || self.epochs_l2 < 1 || self.checkpoint_every < 1 {
            return Err(Error::config("epoch counts must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.l2_coeff < 0.0 {
            return Err(Error::config("l2_coeff must be >= 0"));
        }
        self.weights.validate()?;
        self.adam.validate()
    }
}

// ---- per-step metrics ------------------------------------------------------

/// Loss components of one discriminator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DMetrics {
    pub real: f64,
    pub gen: f64,
    pub neg_c: f64,
    pub neg_v: Option<f64>,
    pub neg_t: Option<f64>,
    pub total: f64,
}

/// Counters and artifact paths from one training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub d_steps: usize,
    pub g_steps: usize,
    pub epochs_run: usize,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

// ---- single optimization steps ---------------------------------------------

fn d_step_abs<T: Scalar>(
    gen: &GeneratorAbs<T>,
    disc: &mut Discriminator<T>,
    state: &mut AdamState<T>,
    hp: &AdamHp,
    weights: &LossWeights,
    l2_coeff: f64,
    batch: &Batch<T>,
    negs: &Negatives<T>,
    dropout: Option<(&[Tensor<T>], &[Tensor<T>])>,
) -> Result<DMetrics> {
    let mut g = Graph::new();
    let gb = gen.store.bind(&mut g, false);
    let db = disc.store.bind(&mut g, true);
    let terms = loss_d_terms_abs(&mut g, gen, &gb, disc, &db, batch, negs, dropout)?;
    let mut total = loss_d_total(&mut g, &terms, weights)?;
    if l2_coeff > 0.0 {
        let pen = l2_penalty(&mut g, &db)?;
        let pen = g.scale(pen, l2_coeff)?;
        total = g.add(total, pen)?;
    }
    g.backward(total)?;
    let grads = disc.store.collect_grads(&g, &db)?;
    adam_step(&mut disc.store, &grads, state, hp)?;
    Ok(DMetrics {
        real: g.scalar_value(terms.real).to_f64(),
        gen: g.scalar_value(terms.gen).to_f64(),
        neg_c: g.scalar_value(terms.neg_c).to_f64(),
        neg_v: terms.neg_v.map(|v| g.scalar_value(v).to_f64()),
        neg_t: terms.neg_t.map(|v| g.scalar_value(v).to_f64()),
        total: g.scalar_value(total).to_f64(),
    })
}

fn g_step_abs<T: Scalar>(
    gen: &mut GeneratorAbs<T>,
    disc: &Discriminator<T>,
    state: &mut AdamState<T>,
    hp: &AdamHp,
    batch: &Batch<T>,
) -> Result<f64> {
    let mut g = Graph::new();
    let gb = gen.store.bind(&mut g, true);
    let db = disc.store.bind(&mut g, false);
    let (loss, _) = loss_g_abs(&mut g, gen, &gb, disc, &db, batch)?;
    g.backward(loss)?;
    let grads = gen.store.collect_grads(&g, &gb)?;
    adam_step(&mut gen.store, &grads, state, hp)?;
    Ok(g.scalar_value(loss).to_f64())
}

#[allow(clippy::too_many_arguments)]
fn d_step_partial<T: Scalar>(
    gen: &GeneratorPartial<T>,
    disc: &mut Discriminator<T>,
    state: &mut AdamState<T>,
    hp: &AdamHp,
    weights: &LossWeights,
    l2_coeff: f64,
    batch: &Batch<T>,
    negs: &Negatives<T>,
    z: &Tensor<T>,
    dropout: Option<(&[Tensor<T>], &[Tensor<T>])>,
) -> Result<DMetrics> {
    let mut g = Graph::new();
    let gb = gen.store.bind(&mut g, false);
    let db = disc.store.bind(&mut g, true);
    let terms = loss_d_terms_partial(
        &mut g, gen, &gb, disc, &db, &batch.c, &batch.rgb, z, &negs.c, dropout,
    )?;
    let mut total = loss_d_total(&mut g, &terms, weights)?;
    if l2_coeff > 0.0 {
        let pen = l2_penalty(&mut g, &db)?;
        let pen = g.scale(pen, l2_coeff)?;
        total = g.add(total, pen)?;
    }
    g.backward(total)?;
    let grads = disc.store.collect_grads(&g, &db)?;
    adam_step(&mut disc.store, &grads, state, hp)?;
    Ok(DMetrics {
        real: g.scalar_value(terms.real).to_f64(),
        gen: g.scalar_value(terms.gen).to_f64(),
        neg_c: g.scalar_value(terms.neg_c).to_f64(),
        neg_v: None,
        neg_t: None,
        total: g.scalar_value(total).to_f64(),
    })
}

fn g_step_partial<T: Scalar>(
    gen: &mut GeneratorPartial<T>,
    disc: &Discriminator<T>,
    state: &mut AdamState<T>,
    hp: &AdamHp,
    batch: &Batch<T>,
    z: &Tensor<T>,
) -> Result<f64> {
    let mut g = Graph::new();
    let gb = gen.store.bind(&mut g, true);
    let db = disc.store.bind(&mut g, false);
    let (loss, _) = loss_g_partial(&mut g, gen, &gb, disc, &db, z, &batch.c)?;
    g.backward(loss)?;
    let grads = gen.store.collect_grads(&g, &gb)?;
    adam_step(&mut gen.store, &grads, state, hp)?;
    Ok(g.scalar_value(loss).to_f64())
}

// ---- the GAN loop ----------------------------------------------------------

/// Either flavor of generator, so one loop drives both regimes.
pub enum Generator<T> {
    Abs(GeneratorAbs<T>),
    Partial(GeneratorPartial<T>),
}

impl<T: Scalar> Generator<T> {
    pub fn store(&self) -> &ParamStore<T> {
        match self {
            Generator::Abs(g) => &g.store,
            Generator::Partial(g) => &g.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            Generator::Abs(g) => &mut g.store,
            Generator::Partial(g) => &mut g.store,
        }
    }
}

/// Full trainer state; survives round trips through one checkpoint file.
pub struct GanTrainer<T> {
    pub cfg: TrainConfig,
    pub model_cfg: ModelConfig,
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub opt_g: AdamState<T>,
    pub opt_d: AdamState<T>,
    pub next_epoch: usize,
    pub global_batch: u64,
    pub d_steps: usize,
    pub g_steps: usize,
}

/// Seed streams: all rngs hang off the run seed through fixed stream tags.
const STREAM_G_INIT: u64 = 1;
const STREAM_D_INIT: u64 = 2;
const STREAM_EPOCH: u64 = 1 << 32;

impl<T: Scalar> GanTrainer<T> {
    pub fn new(cfg: TrainConfig, model_cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng_g = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_G_INIT));
        let mut rng_d = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_D_INIT));
        let gen = match cfg.mode {
            CondMode::Absolute => Generator::Abs(GeneratorAbs::new(&model_cfg, &mut rng_g)?),
            CondMode::Partial => Generator::Partial(GeneratorPartial::new(&model_cfg, &mut rng_g)?),
        };
        let disc = Discriminator::new(&model_cfg, cfg.mode, &mut rng_d)?;
        let opt_g = AdamState::new(gen.store());
        let opt_d = AdamState::new(&disc.store);
        Ok(GanTrainer {
            cfg,
            model_cfg,
            gen,
            disc,
            opt_g,
            opt_d,
            next_epoch: 0,
            global_batch: 0,
            d_steps: 0,
            g_steps: 0,
        })
    }

    pub fn checkpoint_entries(&self) -> Entries {
        let mut entries = vec![
            (
                "trainer.next_epoch".to_string(),
                Tensor::new(&[1], vec![self.next_epoch as f32]).unwrap(),
            ),
            (
                "trainer.global_batch".to_string(),
                Tensor::new(&[1], vec![self.global_batch as f32]).unwrap(),
            ),
            (
                "trainer.d_steps".to_string(),
                Tensor::new(&[1], vec![self.d_steps as f32]).unwrap(),
            ),
            (
                "trainer.g_steps".to_string(),
                Tensor::new(&[1], vec![self.g_steps as f32]).unwrap(),
            ),
        ];
        entries.extend(checkpoint::store_entries("g.", self.gen.store()));
        entries.extend(checkpoint::store_entries("d.", &self.disc.store));
        entries.extend(self.opt_g.entries("opt_g.", self.gen.store()));
        entries.extend(self.opt_d.entries("opt_d.", &self.disc.store));
        entries
    }

    pub fn restore(&mut self, entries: &Entries) -> Result<()> {
        checkpoint::load_store(entries, "g.", self.gen.store_mut())?;
        checkpoint::load_store(entries, "d.", &mut self.disc.store)?;
        self.opt_g.load(entries, "opt_g.", self.gen.store())?;
        self.opt_d.load(entries, "opt_d.", &self.disc.store)?;
        self.next_epoch = checkpoint::find(entries, "trainer.next_epoch")?.data()[0] as usize;
        self.global_batch = checkpoint::find(entries, "trainer.global_batch")?.data()[0] as u64;
        self.d_steps = checkpoint::find(entries, "trainer.d_steps")?.data()[0] as usize;
        self.g_steps = checkpoint::find(entries, "trainer.g_steps")?.data()[0] as usize;
        Ok(())
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn draw_z<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, z_dim: usize) -> Tensor<T> {
    let data = (0..n * z_dim).map(|_| T::from_f64(normal(rng))).collect();
    Tensor::new(&[n, z_dim], data).expect("z shape")
}

/// Train the conditional GAN on the train split. Writes `metrics.csv` plus
/// periodic and final checkpoints under `out_dir`; on a non-finite failure
/// saves `abort.ckpt` and returns the error. Pass a checkpoint to resume from
/// its epoch boundary; metrics then hold only the resumed rows.
pub fn train_gan<T: Scalar>(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    data_cfg: &DatasetConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(GanTrainer<T>, TrainReport)> {
    if model_cfg.classes != data_cfg.classes || model_cfg.img_size != data_cfg.img_size {
        return Err(Error::config(format!(
            "model is {} classes at {}px but dataset is {} classes at {}px",
            model_cfg.classes, model_cfg.img_size, data_cfg.classes, data_cfg.img_size
        )));
    }
    let ds = Dataset::new(*data_cfg)?;
    let mut trainer = GanTrainer::<T>::new(*cfg, model_cfg.clone())?;
    if let Some(path) = resume {
        trainer.restore(&checkpoint::load(path)?)?;
    }
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;

    let train_indices = ds.indices(Split::Train);
    if train_indices.len() < cfg.batch_size {
        return Err(Error::config(format!(
            "train split of {} cannot fill one batch of {}",
            train_indices.len(),
            cfg.batch_size
        )));
    }

    let start = trainer.next_epoch;
    for epoch in start..cfg.epochs_gan {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_EPOCH + epoch as u64));
        let mut order = train_indices.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch = make_batch::<T>(&ds, chunk)?;
            let negs = sample_negatives(&batch, data_cfg.classes, &mut rng)?;
            let n = batch.len();
            let dropout = if cfg.dropout_rate > 0.0 {
                let real = trainer.disc.draw_dropout(&mut rng, n, cfg.dropout_rate)?;
                let fake = trainer.disc.draw_dropout(&mut rng, n, cfg.dropout_rate)?;
                Some((real, fake))
            } else {
                None
            };
            let z = match cfg.mode {
                CondMode::Partial => Some(draw_z::<T>(&mut rng, n, model_cfg.z_dim)),
                CondMode::Absolute => None,
            };

            trainer.global_batch += 1;
            let run_d = !cfg.cadence_inverted || trainer.global_batch % cfg.cadence as u64 == 0;
            let run_g = cfg.cadence_inverted || trainer.global_batch % cfg.cadence as u64 == 0;

            let mut wrote = (None, None::<DMetrics>);
            let step_result = (|| -> Result<()> {
                if run_d {
                    let dm = match (&trainer.gen, cfg.mode) {
                        (Generator::Abs(gen), CondMode::Absolute) => d_step_abs(
                            gen,
                            &mut trainer.disc,
                            &mut trainer.opt_d,
                            &cfg.adam,
                            &cfg.weights,
                            cfg.l2_coeff,
                            &batch,
                            &negs,
                            dropout.as_ref().map(|(r, f)| (&r[..], &f[..])),
                        )?,
                        (Generator::Partial(gen), CondMode::Partial) => d_step_partial(
                            gen,
                            &mut trainer.disc,
                            &mut trainer.opt_d,
                            &cfg.adam,
                            &cfg.weights,
                            cfg.l2_coeff,
                            &batch,
                            &negs,
                            z.as_ref().expect("partial mode draws z"),
                            dropout.as_ref().map(|(r, f)| (&r[..], &f[..])),
                        )?,
                        _ => unreachable!("generator flavor follows cfg.mode"),
                    };
                    trainer.d_steps += 1;
                    wrote.1 = Some(dm);
                }
                if run_g {
                    let lg = match (&mut trainer.gen, cfg.mode) {
                        (Generator::Abs(gen), CondMode::Absolute) => g_step_abs(
                            gen,
                            &trainer.disc,
                            &mut trainer.opt_g,
                            &cfg.adam,
                            &batch,
                        )?,
                        (Generator::Partial(gen), CondMode::Partial) => g_step_partial(
                            gen,
                            &trainer.disc,
                            &mut trainer.opt_g,
                            &cfg.adam,
                            &batch,
                            z.as_ref().expect("partial mode draws z"),
                        )?,
                        _ => unreachable!("generator flavor follows cfg.mode"),
                    };
                    trainer.g_steps += 1;
                    wrote.0 = Some(lg);
                }
                Ok(())
            })();
            if let Err(e) = step_result {
                // Leave the evidence behind before bailing out.
                metrics.flush()?;
                checkpoint::save(&out_dir.join("abort.ckpt"), &trainer.checkpoint_entries())?;
                return Err(e);
            }

            let (lg, dm) = wrote;
            writeln!(
                metrics,
                "{},{},{},{},{},{},{},{},{}",
                epoch + 1,
                trainer.global_batch,
                fmt_cell(lg),
                fmt_cell(dm.map(|m| m.real)),
                fmt_cell(dm.map(|m| m.gen)),
                fmt_cell(dm.map(|m| m.neg_c)),
                fmt_cell(dm.and_then(|m| m.neg_v)),
                fmt_cell(dm.and_then(|m| m.neg_t)),
                fmt_cell(dm.map(|m| m.total)),
            )?;
        }
        trainer.next_epoch = epoch + 1;
        if (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs_gan {
            let path = out_dir.join(format!("ckpt_epoch_{:04}.ckpt", epoch + 1));
            checkpoint::save(&path, &trainer.checkpoint_entries())?;
        }
    }
    metrics.flush()?;
    let final_path = out_dir.join("ckpt_final.ckpt");
    checkpoint::save(&final_path, &trainer.checkpoint_entries())?;
    let report = TrainReport {
        d_steps: trainer.d_steps,
        g_steps: trainer.g_steps,
        epochs_run: cfg.epochs_gan - start,
        metrics_path,
        final_checkpoint: final_path,
    };
    Ok((trainer, report))
}

// ---- the L2 baseline loop ----------------------------------------------------

/// Supervised baseline: the absolute generator fitted to rendered targets
/// with mean squared error. Artifacts mirror [`train_gan`]; metrics rows fill
/// only the `loss_g` column.
pub fn train_l2<T: Scalar>(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    data_cfg: &DatasetConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(GeneratorAbs<T>, TrainReport)> {
    cfg.validate()?;
    if model_cfg.classes != data_cfg.classes || model_cfg.img_size != data_cfg.img_size {
        return Err(Error::config("model and dataset disagree on classes or image size"));
    }
    let ds = Dataset::new(*data_cfg)?;
    let mut rng_g = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_G_INIT));
    let mut gen = GeneratorAbs::<T>::new(model_cfg, &mut rng_g)?;
    let mut opt = AdamState::new(&gen.store);
    let mut next_epoch = 0usize;
    let mut global_batch = 0u64;
    if let Some(path) = resume {
        let entries = checkpoint::load(path)?;
        checkpoint::load_store(&entries, "g.", &mut gen.store)?;
        opt.load(&entries, "opt_g.", &gen.store)?;
        next_epoch = checkpoint::find(&entries, "trainer.next_epoch")?.data()[0] as usize;
        global_batch = checkpoint::find(&entries, "trainer.global_batch")?.data()[0] as u64;
    }
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;

    let entries_of = |gen: &GeneratorAbs<T>,
                      opt: &AdamState<T>,
                      next_epoch: usize,
                      global_batch: u64| {
        let mut entries = vec![
            (
                "trainer.next_epoch".to_string(),
                Tensor::new(&[1], vec![next_epoch as f32]).unwrap(),
            ),
            (
                "trainer.global_batch".to_string(),
                Tensor::new(&[1], vec![global_batch as f32]).unwrap(),
            ),
        ];
        entries.extend(checkpoint::store_entries("g.", &gen.store));
        entries.extend(opt.entries("opt_g.", &gen.store));
        entries
    };

    let train_indices = ds.indices(Split::Train);
    let start = next_epoch;
    for epoch in start..cfg.epochs_l2 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_EPOCH + epoch as u64));
        let mut order = train_indices.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch = make_batch::<T>(&ds, chunk)?;
            global_batch += 1;
            let step = (|| -> Result<f64> {
                let mut g = Graph::new();
                let gb = gen.store.bind(&mut g, true);
                let c = g.constant(batch.c.clone());
                let v = g.constant(batch.v.clone());
                let t = g.constant(batch.t.clone());
                let out = gen.forward(&mut g, &gb, c, v, t)?;
                let loss = l2_baseline_loss(&mut g, out.rgb, out.mask, &batch.rgb, &batch.mask)?;
                g.backward(loss)?;
                let grads = gen.store.collect_grads(&g, &gb)?;
                adam_step(&mut gen.store, &grads, &mut opt, &cfg.adam)?;
                Ok(g.scalar_value(loss).to_f64())
            })();
            let loss = match step {
                Ok(l) => l,
                Err(e) => {
                    metrics.flush()?;
                    checkpoint::save(
                        &out_dir.join("abort.ckpt"),
                        &entries_of(&gen, &opt, epoch, global_batch),
                    )?;
                    return Err(e);
                }
            };
            writeln!(
                metrics,
                "{},{},{:.6},,,,,,",
                epoch + 1,
                global_batch,
                loss
            )?;
        }
        next_epoch = epoch + 1;
        if (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs_l2 {
            checkpoint::save(
                &out_dir.join(format!("ckpt_epoch_{:04}.ckpt", epoch + 1)),
                &entries_of(&gen, &opt, next_epoch, global_batch),
            )?;
        }
    }
    metrics.flush()?;
    let final_path = out_dir.join("ckpt_final.ckpt");
    checkpoint::save(&final_path, &entries_of(&gen, &opt, next_epoch, global_batch))?;
    let steps = global_batch as usize;
    Ok((
        gen,
        TrainReport {
            d_steps: 0,
            g_steps: steps,
            epochs_run: cfg.epochs_l2 - start,
            metrics_path,
            final_checkpoint: final_path,
        },
    ))
}

/// Draw a standard-normal z batch for the partially conditional generator;
/// the public entry point for sampling paths outside training.
pub fn sample_z<T: Scalar>(seed: u64, n: usize, z_dim: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
    draw_z(&mut rng, n, z_dim)
}
