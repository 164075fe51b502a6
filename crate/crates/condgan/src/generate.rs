//! Checkpoint-backed generation and evaluation, shared by the command-line
//! interface and the Python bindings. Frames are always evaluated one at a
//! time so a frame inside a strip is bit-identical to the same frame written
//! alone.

use crate::config::{RunConfig, RunMode};
use crate::data::{Dataset, Transform, ViewPoint};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::models::{Discriminator, GeneratorAbs, GeneratorPartial};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};
use crate::train::sample_z;
use crate::checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn init_rng() -> ChaCha8Rng {
    // Initial values are fully overwritten by the checkpoint load.
    ChaCha8Rng::seed_from_u64(0)
}

pub fn load_gen_abs(cfg: &RunConfig, entries: &checkpoint::Entries) -> Result<GeneratorAbs<f32>> {
    let mut gen = GeneratorAbs::new(&cfg.model, &mut init_rng())?;
    checkpoint::load_store(entries, "g.", &mut gen.store)?;
    Ok(gen)
}

pub fn load_gen_partial(
    cfg: &RunConfig,
    entries: &checkpoint::Entries,
) -> Result<GeneratorPartial<f32>> {
    let mut gen = GeneratorPartial::new(&cfg.model, &mut init_rng())?;
    checkpoint::load_store(entries, "g.", &mut gen.store)?;
    Ok(gen)
}

pub fn load_disc(cfg: &RunConfig, entries: &checkpoint::Entries) -> Result<Discriminator<f32>> {
    let mut disc = Discriminator::new(&cfg.model, cfg.mode.cond_mode(), &mut init_rng())?;
    checkpoint::load_store(entries, "d.", &mut disc.store)?;
    Ok(disc)
}

/// A trained generator ready to render single frames.
pub enum FrameSource {
    Abs(GeneratorAbs<f32>),
    Partial { gen: GeneratorPartial<f32>, z: Tensor<f32> },
}

impl FrameSource {
    pub fn load(cfg: &RunConfig, path: &Path) -> Result<Self> {
        let entries = checkpoint::load(path)?;
        Ok(match cfg.mode {
            RunMode::GanAbs | RunMode::L2 => FrameSource::Abs(load_gen_abs(cfg, &entries)?),
            RunMode::GanPartial => FrameSource::Partial {
                gen: load_gen_partial(cfg, &entries)?,
                z: sample_z(cfg.train.seed, 1, cfg.model.z_dim),
            },
        })
    }

    /// Whether frames carry view conditioning (and a mask head).
    pub fn is_view_conditioned(&self) -> bool {
        matches!(self, FrameSource::Abs(_))
    }

    /// One [3, H, W] frame (plus the mask where the mode has one) for a
    /// class-weight row `c`, a view, and a transform.
    pub fn render(
        &self,
        cfg: &RunConfig,
        c: Vec<f32>,
        view: ViewPoint,
        tr: Transform,
    ) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        let mut g = Graph::new();
        let k = cfg.model.classes;
        let cv = g.constant(Tensor::new(&[1, k], c)?);
        match self {
            FrameSource::Abs(gen) => {
                view.validate()?;
                tr.validate()?;
                let gb = gen.store.bind(&mut g, false);
                let v: Vec<f32> = view.encode().iter().map(|&x| x as f32).collect();
                let t: Vec<f32> = tr.as_vec().iter().map(|&x| x as f32).collect();
                let vv = g.constant(Tensor::new(&[1, 4], v)?);
                let tv = g.constant(Tensor::new(&[1, 3], t)?);
                let out = gen.forward(&mut g, &gb, cv, vv, tv)?;
                let rgb = drop_batch_dim(g.value(out.rgb))?;
                let mask = drop_batch_dim(g.value(out.mask))?;
                Ok((rgb, Some(mask)))
            }
            FrameSource::Partial { gen, z } => {
                let gb = gen.store.bind(&mut g, false);
                let zv = g.constant(z.clone());
                let rgb = gen.forward(&mut g, &gb, zv, cv)?;
                Ok((drop_batch_dim(g.value(rgb))?, None))
            }
        }
    }
}

/// [1, C, H, W] -> [C, H, W] for the image writers.
fn drop_batch_dim<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(Error::shape(
            "drop_batch_dim",
            format!("expected [1, C, H, W], got {s:?}"),
        ));
    }
    Tensor::new(&[s[1], s[2], s[3]], t.data().to_vec())
}

/// Class-weight row lambda*onehot(to) + (1-lambda)*onehot(from). At the
/// endpoints the arithmetic is exact, so frames match pure one-hot renders
/// bit for bit.
pub fn blend(from: usize, to: usize, lambda: f64, cfg: &RunConfig) -> Result<Vec<f32>> {
    let k = cfg.model.classes;
    if from >= k || to >= k {
        return Err(Error::config(format!(
            "classes {from}, {to} out of range for {k} classes"
        )));
    }
    let mut c = vec![0.0f32; k];
    c[from] += (1.0 - lambda) as f32;
    c[to] += lambda as f32;
    Ok(c)
}

/// Score whichever networks a checkpoint of this mode holds against the
/// renderer's ground truth.
pub fn evaluate_checkpoint(cfg: &RunConfig, ckpt: &Path) -> Result<EvalReport> {
    let entries = checkpoint::load(ckpt)?;
    let ds = Dataset::new(cfg.dataset)?;
    let batch = cfg.train.batch_size;
    match cfg.mode {
        RunMode::GanAbs => {
            let gen = load_gen_abs(cfg, &entries)?;
            let disc = load_disc(cfg, &entries)?;
            eval::evaluate(Some(&gen), Some(&disc), &ds, batch)
        }
        RunMode::L2 => {
            let gen = load_gen_abs(cfg, &entries)?;
            eval::evaluate(Some(&gen), None, &ds, batch)
        }
        RunMode::GanPartial => {
            let disc = load_disc(cfg, &entries)?;
            eval::evaluate::<f32>(None, Some(&disc), &ds, batch)
        }
    }
}
