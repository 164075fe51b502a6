//! Python bindings: dataset access, training, checkpoint-backed sampling,
//! evaluation, and the gradient checks. Configs cross the boundary as JSON
//! strings in the same schema the CLI reads; reports come back the same way.

use condgan::config::RunConfig;
use condgan::data::{self, Dataset, Transform, ViewPoint};
use condgan::generate::{blend, evaluate_checkpoint, FrameSource};
use condgan::train::{train_gan, train_l2, TrainReport};
use condgan::{gradcheck, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::{Path, PathBuf};

fn err(e: condgan::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parse, default-fill, and validate a config JSON string ("" or "{}" give
/// the defaults).
fn parse_config(json: &str) -> PyResult<RunConfig> {
    let text = if json.trim().is_empty() { "{}" } else { json };
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| PyValueError::new_err(format!("config error: {e}")))?;
    let cfg = cfg.normalized();
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// The default configuration as pretty-printed JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Deterministic per-purpose seed derivation, exposed for reproducing the
/// library's random streams.
#[pyfunction]
fn mix_seed(seed: u64, stream: u64) -> u64 {
    data::mix_seed(seed, stream)
}

/// A view as the generator sees it: [sin az, cos az, sin alt, cos alt].
#[pyfunction]
fn encode_view(azimuth: f64, altitude: f64) -> Vec<f64> {
    data::encode_view(azimuth, altitude).to_vec()
}

fn image_triplet(t: &Tensor<f32>) -> (Vec<usize>, Vec<f32>) {
    (t.shape().to_vec(), t.data().to_vec())
}

/// The procedural chair dataset of a config; renders on demand.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (config = ""))]
    fn new(config: &str) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        Ok(PyDataset {
            inner: Dataset::new(cfg.dataset).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Everything about one sample except the pixels.
    fn meta<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.meta(index).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("index", m.index)?;
        d.set_item("class_id", m.class_id)?;
        d.set_item("azimuth", m.view.azimuth)?;
        d.set_item("altitude", m.view.altitude)?;
        d.set_item("dx", m.transform.dx)?;
        d.set_item("dy", m.transform.dy)?;
        d.set_item("log_scale", m.transform.log_scale)?;
        d.set_item("split", m.split.as_str())?;
        Ok(d)
    }

    /// Pixels of one sample: (rgb shape, rgb values in [-1, 1], mask shape,
    /// mask values in {0, 1}), channel-planar and row-major.
    fn render(&self, index: usize) -> PyResult<(Vec<usize>, Vec<f64>, Vec<usize>, Vec<f64>)> {
        let s = self.inner.render(index).map_err(err)?;
        Ok((
            s.rgb.shape().to_vec(),
            s.rgb.data().to_vec(),
            s.mask.shape().to_vec(),
            s.mask.data().to_vec(),
        ))
    }

    fn train_indices(&self) -> Vec<usize> {
        self.inner.indices(data::Split::Train)
    }

    fn test_indices(&self) -> Vec<usize> {
        self.inner.indices(data::Split::Test)
    }
}

fn report_json(r: &TrainReport) -> String {
    serde_json::json!({
        "d_steps": r.d_steps,
        "g_steps": r.g_steps,
        "epochs_run": r.epochs_run,
        "metrics_path": r.metrics_path.display().to_string(),
        "final_checkpoint": r.final_checkpoint.display().to_string(),
    })
    .to_string()
}

/// Train per the config's mode; artifacts land in `out_dir` exactly as with
/// the CLI. Returns a JSON report with step counts and artifact paths.
#[pyfunction]
#[pyo3(signature = (config, out_dir, resume = None))]
fn train(config: &str, out_dir: &str, resume: Option<&str>) -> PyResult<String> {
    let cfg = parse_config(config)?;
    let out = PathBuf::from(out_dir);
    cfg.write_effective(&out).map_err(err)?;
    let resume = resume.map(Path::new);
    let report = match cfg.mode {
        condgan::config::RunMode::L2 => {
            train_l2::<f32>(&cfg.train, &cfg.model, &cfg.dataset, &out, resume)
                .map_err(err)?
                .1
        }
        _ => train_gan::<f32>(&cfg.train, &cfg.model, &cfg.dataset, &out, resume)
            .map_err(err)?
            .1,
    };
    Ok(report_json(&report))
}

/// Score a trained checkpoint; returns the eval report as JSON.
#[pyfunction]
fn evaluate(config: &str, checkpoint: &str) -> PyResult<String> {
    let cfg = parse_config(config)?;
    let report = evaluate_checkpoint(&cfg, Path::new(checkpoint)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run the gradient checks; returns (name, max_rel_err, tol, passed) rows.
/// `ops_only` skips the miniature end-to-end models; `inject_bug` plants a
/// wrong gradient as a negative control.
#[pyfunction]
#[pyo3(signature = (ops_only = false, inject_bug = false))]
fn grad_check(ops_only: bool, inject_bug: bool) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let results = if ops_only {
        gradcheck::op_checks(inject_bug).map_err(err)?
    } else {
        gradcheck::run_suite(inject_bug).map_err(err)?
    };
    gradcheck::enforce(&results).map_err(err)?;
    Ok(results
        .into_iter()
        .map(|r| (r.name, r.max_rel_err, r.tol, r.pass))
        .collect())
}

/// A trained generator loaded from a checkpoint, rendering one frame at a
/// time (bit-reproducibly) from class/view/transform conditions.
#[pyclass]
struct Sampler {
    cfg: RunConfig,
    source: FrameSource,
}

#[pymethods]
impl Sampler {
    #[new]
    fn new(config: &str, checkpoint: &str) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let source = FrameSource::load(&cfg, Path::new(checkpoint)).map_err(err)?;
        Ok(Sampler { cfg, source })
    }

    /// Whether this generator takes a view (and produces a mask).
    fn view_conditioned(&self) -> bool {
        self.source.is_view_conditioned()
    }

    /// One frame: (rgb shape, rgb values, mask shape or None, mask values or
    /// None). `class_to`/`lam` blend a second class in, for interpolation.
    #[pyo3(signature = (class_id, azimuth = 0.0, altitude = 0.0, dx = 0.0, dy = 0.0,
                        log_scale = 0.0, class_to = None, lam = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        class_id: usize,
        azimuth: f64,
        altitude: f64,
        dx: f64,
        dy: f64,
        log_scale: f64,
        class_to: Option<usize>,
        lam: f64,
    ) -> PyResult<(Vec<usize>, Vec<f32>, Option<Vec<usize>>, Option<Vec<f32>>)> {
        let c = blend(class_id, class_to.unwrap_or(class_id), lam, &self.cfg).map_err(err)?;
        let view = ViewPoint { azimuth, altitude };
        let tr = Transform { dx, dy, log_scale };
        let (rgb, mask) = self.source.render(&self.cfg, c, view, tr).map_err(err)?;
        let (rs, rv) = image_triplet(&rgb);
        let (ms, mv) = match &mask {
            Some(m) => {
                let (s, v) = image_triplet(m);
                (Some(s), Some(v))
            }
            None => (None, None),
        };
        Ok((rs, rv, ms, mv))
    }
}

#[pymodule]
fn condgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(mix_seed, m)?)?;
    m.add_function(wrap_pyfunction!(encode_view, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<Sampler>()?;
    Ok(())
}
