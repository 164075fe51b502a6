//! Procedural chair dataset.
//!
//! Every sample is a pure function of (seed, index): a class-determined box
//! assembly (seat, back, 3 or 4 legs) rasterized at 64-bit precision under an
//! orthographic view, Lambert-shaded, on a white background, with a small
//! image-plane transform. No anti-aliasing, so the mask is exactly binary and
//! rgb equals the background wherever the mask is zero.

use crate::error::{Error, Result};
use crate::losses::{Batch, Negatives};
use crate::models::ConditionTriple;
use crate::ppm;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_4, TAU};
use std::io::Write;
use std::path::Path;

pub const MAX_SHIFT: f64 = 0.15; // |dx|, |dy|, as a fraction of image size
pub const MAX_LOG_SCALE: f64 = 0.2;
pub const MAX_ALTITUDE: f64 = FRAC_PI_4;
const ALT_SPREAD: f64 = 0.35; // dataset altitudes live in [-0.35, 0.35]
const BASE_ZOOM: f64 = 0.8;
const AMBIENT: f64 = 0.35;
const DIFFUSE: f64 = 0.65;
// Light direction in camera space (normalized in `render`).
const LIGHT: [f64; 3] = [0.4, 0.7, 0.6];

/// splitmix64 finalizer; decorrelates nearby integers into seed material.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Derive an independent stream seed, e.g. per sample index or per epoch.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

// ---- view encoding ---------------------------------------------------------

/// v = [sin az, cos az, sin alt, cos alt].
pub fn encode_view(azimuth: f64, altitude: f64) -> [f64; 4] {
    [
        azimuth.sin(),
        azimuth.cos(),
        altitude.sin(),
        altitude.cos(),
    ]
}

/// Recover (azimuth in [0, 2pi), altitude) from the sin/cos encoding.
/// Rejects vectors whose pairs are not unit within 1e-6.
pub fn decode_view(v: &[f64; 4]) -> Result<(f64, f64)> {
    for (label, a, b) in [("azimuth", v[0], v[1]), ("altitude", v[2], v[3])] {
        let n = a * a + b * b;
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!(
                "view {label} pair has squared norm {n}, expected 1"
            )));
        }
    }
    Ok((v[0].atan2(v[1]).rem_euclid(TAU), v[2].atan2(v[3])))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewPoint {
    pub azimuth: f64,
    pub altitude: f64,
}

impl ViewPoint {
    pub fn validate(&self) -> Result<()> {
        if !self.azimuth.is_finite() || !self.altitude.is_finite() {
            return Err(Error::config("non-finite view angle"));
        }
        if self.altitude.abs() > MAX_ALTITUDE + 1e-9 {
            return Err(Error::config(format!(
                "altitude {} outside [-pi/4, pi/4]",
                self.altitude
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> [f64; 4] {
        encode_view(self.azimuth, self.altitude)
    }
}

/// Image-plane augmentation: shift by (dx, dy) image fractions and scale by
/// exp(log_scale). Positive dy moves the shape down the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub dx: f64,
    pub dy: f64,
    pub log_scale: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        dx: 0.0,
        dy: 0.0,
        log_scale: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.dx.abs() > MAX_SHIFT + 1e-9 || self.dy.abs() > MAX_SHIFT + 1e-9 {
            return Err(Error::config(format!(
                "shift ({}, {}) outside +/-{MAX_SHIFT}",
                self.dx, self.dy
            )));
        }
        if self.log_scale.abs() > MAX_LOG_SCALE + 1e-9 {
            return Err(Error::config(format!(
                "log_scale {} outside +/-{MAX_LOG_SCALE}",
                self.log_scale
            )));
        }
        Ok(())
    }

    pub fn as_vec(&self) -> [f64; 3] {
        [self.dx, self.dy, self.log_scale]
    }
}

// ---- shapes ----------------------------------------------------------------

/// Distinct chair shades; bounds the number of classes.
pub const PALETTE: [[f64; 3]; 10] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.45, 0.85],
    [0.10, 0.65, 0.15],
    [0.95, 0.60, 0.05],
    [0.55, 0.15, 0.70],
    [0.05, 0.65, 0.65],
    [0.90, 0.25, 0.55],
    [0.55, 0.40, 0.10],
    [0.25, 0.25, 0.30],
    [0.60, 0.75, 0.10],
];

// (back height, seat half-width) per style; crossed with the leg count this
// gives 10 distinct silhouettes, one per class.
const STYLES: [(f64, f64); 5] = [
    (0.70, 0.45),
    (0.45, 0.45),
    (0.70, 0.30),
    (0.30, 0.55),
    (0.55, 0.38),
];

const SEAT_TH: f64 = 0.07; // half-thickness of the seat slab
const SEAT_D: f64 = 0.45; // seat half-depth
const BACK_TH: f64 = 0.05;
const LEG_W: f64 = 0.055;
const LEG_H: f64 = 0.48;

/// Chair geometry for one class. Same class id, same geometry, always:
/// the class <-> object map is a bijection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub class_id: usize,
    pub classes: usize,
    pub legs: usize,
    pub back_height: f64,
    pub seat_width: f64,
    pub color: [f64; 3],
}

impl ShapeSpec {
    pub fn for_class(class_id: usize, classes: usize) -> Result<Self> {
        if classes < 2 || classes > PALETTE.len() {
            return Err(Error::config(format!(
                "classes must be in [2, {}], got {classes}",
                PALETTE.len()
            )));
        }
        if class_id >= classes {
            return Err(Error::config(format!(
                "class id {class_id} out of range for {classes} classes"
            )));
        }
        let (back_height, seat_width) = STYLES[class_id % STYLES.len()];
        Ok(ShapeSpec {
            class_id,
            classes,
            legs: 4 - class_id % 2,
            back_height,
            seat_width,
            color: PALETTE[class_id],
        })
    }

    /// Axis-aligned boxes (center, half-extents) in object space: a seat, a
    /// back panel at the rear edge, and legs at the corners. Three-legged
    /// classes drop the front-right leg, which also breaks mirror symmetry.
    fn boxes(&self) -> Vec<([f64; 3], [f64; 3])> {
        let w = self.seat_width;
        let bh = self.back_height;
        let mut out = vec![
            ([0.0, 0.0, 0.0], [w, SEAT_TH, SEAT_D]),
            (
                [0.0, bh / 2.0 + SEAT_TH, -SEAT_D + BACK_TH],
                [w, bh / 2.0, BACK_TH],
            ),
        ];
        let corners: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        for &(sx, sz) in corners.iter().take(self.legs) {
            out.push((
                [
                    sx * (w - LEG_W),
                    -SEAT_TH - LEG_H / 2.0,
                    sz * (SEAT_D - LEG_W),
                ],
                [LEG_W, LEG_H / 2.0, LEG_W],
            ));
        }
        out
    }
}

/// One rendered example: rgb in [-1, 1] with a white (+1) background, a
/// binary mask, and the conditioning that produced it.
#[derive(Clone, Debug)]
pub struct Sample {
    pub rgb: Tensor<f64>,  // [3, H, W]
    pub mask: Tensor<f64>, // [1, H, W]
    pub condition: ConditionTriple<f64>,
}

// ---- renderer --------------------------------------------------------------

/// Snap to a 1e-12 grid. Angles that differ by whole turns reduce to values a
/// few ulps apart; snapping their sin/cos makes such renders bit-identical
/// without visible effect on geometry.
fn snap(x: f64) -> f64 {
    (x * 1e12).round() * 1e-12
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Camera rotation: yaw about +y by azimuth, then pitch about +x by altitude.
fn rotation(azimuth: f64, altitude: f64) -> [[f64; 3]; 3] {
    let az = azimuth.rem_euclid(TAU);
    let (sy, cy) = (snap(az.sin()), snap(az.cos()));
    let (sx, cx) = (snap(altitude.sin()), snap(altitude.cos()));
    // Rx(alt) * Ry(az)
    [
        [cy, 0.0, sy],
        [sx * sy, cx, -sx * cy],
        [-cx * sy, sx, cx * cy],
    ]
}

struct Raster {
    h: usize,
    w: usize,
    depth: Vec<f64>,
    rgb: Vec<f64>,  // 3 planes, white background
    mask: Vec<f64>, // any coverage, independent of depth
}

impl Raster {
    fn new(h: usize, w: usize) -> Self {
        Raster {
            h,
            w,
            depth: vec![f64::NEG_INFINITY; h * w],
            rgb: vec![1.0; 3 * h * w],
            mask: vec![0.0; h * w],
        }
    }

    /// Fill one triangle given pixel-space corners and camera-space depths
    /// (larger = closer). Coverage is sampled at pixel centers with boundary
    /// pixels included; depth ties keep the first writer, and the caller's
    /// face order is fixed, so output is reproducible bit for bit.
    fn fill(&mut self, p: [[f64; 2]; 3], z: [f64; 3], color: [f64; 3]) {
        let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        if area2.abs() < 1e-12 {
            return;
        }
        let flip = if area2 > 0.0 { 1.0 } else { -1.0 };
        let xs = [p[0][0], p[1][0], p[2][0]];
        let ys = [p[0][1], p[1][1], p[2][1]];
        let clampi = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi.saturating_sub(1));
        let c0 = clampi(xs.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 0.5, self.w);
        let c1 = clampi(xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + 0.5, self.w);
        let r0 = clampi(ys.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 0.5, self.h);
        let r1 = clampi(ys.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + 0.5, self.h);
        let edge = |a: [f64; 2], b: [f64; 2], qx: f64, qy: f64| {
            (b[0] - a[0]) * (qy - a[1]) - (b[1] - a[1]) * (qx - a[0])
        };
        let hw = self.h * self.w;
        for row in r0..=r1 {
            let qy = row as f64 + 0.5;
            for col in c0..=c1 {
                let qx = col as f64 + 0.5;
                let w0 = flip * edge(p[1], p[2], qx, qy);
                let w1 = flip * edge(p[2], p[0], qx, qy);
                let w2 = flip * edge(p[0], p[1], qx, qy);
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let zq = (w0 * z[0] + w1 * z[1] + w2 * z[2]) / (flip * area2);
                let i = row * self.w + col;
                self.mask[i] = 1.0;
                if zq > self.depth[i] {
                    self.depth[i] = zq;
                    for ch in 0..3 {
                        self.rgb[ch * hw + i] = color[ch];
                    }
                }
            }
        }
    }
}

/// Rasterize one chair. Pure: identical arguments give bit-identical output.
pub fn render(
    spec: &ShapeSpec,
    view: ViewPoint,
    tr: Transform,
    h: usize,
    w: usize,
) -> Result<Sample> {
    view.validate()?;
    tr.validate()?;
    if h < 4 || w < 4 {
        return Err(Error::config(format!("degenerate image size {h}x{w}")));
    }
    let rot = rotation(view.azimuth, view.altitude);
    let zoom = BASE_ZOOM * tr.log_scale.exp();
    let ln = (LIGHT[0] * LIGHT[0] + LIGHT[1] * LIGHT[1] + LIGHT[2] * LIGHT[2]).sqrt();
    let light = [LIGHT[0] / ln, LIGHT[1] / ln, LIGHT[2] / ln];
    // Camera-space (x, y, z) -> pixel coordinates; y flips because rows grow
    // downward. The camera looks along -z, so larger z is closer.
    let project = |p: [f64; 3]| -> ([f64; 2], f64) {
        (
            [
                (p[0] * zoom + 2.0 * tr.dx + 1.0) * 0.5 * w as f64,
                (-p[1] * zoom + 2.0 * tr.dy + 1.0) * 0.5 * h as f64,
            ],
            p[2],
        )
    };

    let mut raster = Raster::new(h, w);
    for (center, half) in spec.boxes() {
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut n = [0.0; 3];
                n[axis] = sign;
                let nc = mat_vec(&rot, n);
                if nc[2] <= 0.0 {
                    continue; // faces the camera away; strictly hidden
                }
                let b = AMBIENT
                    + DIFFUSE * (nc[0] * light[0] + nc[1] * light[1] + nc[2] * light[2]).max(0.0);
                let color = [
                    2.0 * spec.color[0] * b - 1.0,
                    2.0 * spec.color[1] * b - 1.0,
                    2.0 * spec.color[2] * b - 1.0,
                ];
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut quad = [[0.0; 2]; 4];
                let mut zs = [0.0; 4];
                for (k, (su, sv)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
                    .into_iter()
                    .enumerate()
                {
                    let mut corner = center;
                    corner[axis] += sign * half[axis];
                    corner[u] += su * half[u];
                    corner[v] += sv * half[v];
                    let (px, z) = project(mat_vec(&rot, corner));
                    quad[k] = px;
                    zs[k] = z;
                }
                raster.fill([quad[0], quad[1], quad[2]], [zs[0], zs[1], zs[2]], color);
                raster.fill([quad[0], quad[2], quad[3]], [zs[0], zs[2], zs[3]], color);
            }
        }
    }

    let mut c = vec![0.0; spec.classes];
    c[spec.class_id] = 1.0;
    Ok(Sample {
        rgb: Tensor::new(&[3, h, w], raster.rgb)?,
        mask: Tensor::new(&[1, h, w], raster.mask)?,
        condition: ConditionTriple {
            class_id: spec.class_id,
            c,
            v: view.encode(),
            t: tr.as_vec().to_vec(),
        },
    })
}

// ---- dataset enumeration ---------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub azimuths: usize,
    pub altitudes: usize,
    pub transforms_per_view: usize,
    pub img_size: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 10,
            azimuths: 36,
            altitudes: 3,
            transforms_per_view: 2,
            img_size: 32,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        ShapeSpec::for_class(0, self.classes)?;
        if self.azimuths < 2 || self.azimuths % 2 != 0 {
            return Err(Error::config(format!(
                "azimuths must be even and >= 2 for the held-out split, got {}",
                self.azimuths
            )));
        }
        if self.altitudes == 0 || self.transforms_per_view == 0 {
            return Err(Error::config("altitudes and transforms_per_view must be >= 1"));
        }
        if self.img_size < 8 || self.img_size > 64 {
            return Err(Error::config(format!(
                "img_size must be in [8, 64], got {}",
                self.img_size
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes * self.azimuths * self.altitudes * self.transforms_per_view
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything about one sample except the pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMeta {
    pub index: usize,
    pub class_id: usize,
    pub az_idx: usize,
    pub alt_idx: usize,
    pub tr_idx: usize,
    pub view: ViewPoint,
    pub transform: Transform,
    pub split: Split,
}

/// Lazily rendered collection; every accessor is a pure function of
/// (config, index), so iteration order and concurrency cannot change content.
#[derive(Clone, Copy, Debug)]
pub struct Dataset {
    pub cfg: DatasetConfig,
}

impl Dataset {
    pub fn new(cfg: DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Dataset { cfg })
    }

    pub fn len(&self) -> usize {
        self.cfg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cfg.is_empty()
    }

    /// Index layout: class, then azimuth, then altitude, then transform,
    /// innermost last.
    pub fn meta(&self, index: usize) -> Result<SampleMeta> {
        if index >= self.len() {
            return Err(Error::config(format!(
                "index {index} out of range for dataset of {}",
                self.len()
            )));
        }
        let c = &self.cfg;
        let tr_idx = index % c.transforms_per_view;
        let rest = index / c.transforms_per_view;
        let alt_idx = rest % c.altitudes;
        let rest = rest / c.altitudes;
        let az_idx = rest % c.azimuths;
        let class_id = rest / c.azimuths;

        let azimuth = TAU * az_idx as f64 / c.azimuths as f64;
        let altitude = if c.altitudes == 1 {
            0.0
        } else {
            -ALT_SPREAD + 2.0 * ALT_SPREAD * alt_idx as f64 / (c.altitudes - 1) as f64
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(c.seed, index as u64));
        let transform = random_transform(&mut rng);
        Ok(SampleMeta {
            index,
            class_id,
            az_idx,
            alt_idx,
            tr_idx,
            view: ViewPoint { azimuth, altitude },
            transform,
            split: if az_idx % 2 == 1 { Split::Test } else { Split::Train },
        })
    }

    pub fn render(&self, index: usize) -> Result<Sample> {
        let m = self.meta(index)?;
        let spec = ShapeSpec::for_class(m.class_id, self.cfg.classes)?;
        render(&spec, m.view, m.transform, self.cfg.img_size, self.cfg.img_size)
    }

    /// Every second azimuth is held out: odd azimuth indices are test views.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.meta(i).expect("in range").split == split)
            .collect()
    }
}

/// Stack rendered samples into batch tensors for the given indices.
pub fn make_batch<T: Scalar>(ds: &Dataset, indices: &[usize]) -> Result<Batch<T>> {
    if indices.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let n = indices.len();
    let k = ds.cfg.classes;
    let s = ds.cfg.img_size;
    let mut c = Vec::with_capacity(n * k);
    let mut v = Vec::with_capacity(n * 4);
    let mut t = Vec::with_capacity(n * 3);
    let mut rgb = Vec::with_capacity(n * 3 * s * s);
    let mut mask = Vec::with_capacity(n * s * s);
    for &i in indices {
        let sample = ds.render(i)?;
        sample.condition.validate()?;
        c.extend_from_slice(&sample.condition.c);
        v.extend_from_slice(&sample.condition.v);
        t.extend_from_slice(&sample.condition.t);
        rgb.extend_from_slice(sample.rgb.data());
        mask.extend_from_slice(sample.mask.data());
    }
    let cast = |x: Vec<f64>| x.into_iter().map(T::from_f64).collect::<Vec<_>>();
    Ok(Batch {
        c: Tensor::new(&[n, k], cast(c))?,
        v: Tensor::new(&[n, 4], cast(v))?,
        t: Tensor::new(&[n, 3], cast(t))?,
        rgb: Tensor::new(&[n, 3, s, s], cast(rgb))?,
        mask: Tensor::new(&[n, 1, s, s], cast(mask))?,
    })
}

// ---- negative condition sampling -------------------------------------------

/// The view marginal used for mismatched conditions: azimuth uniform on the
/// circle, altitude uniform on the full legal band.
pub fn random_view(rng: &mut ChaCha8Rng) -> ViewPoint {
    ViewPoint {
        azimuth: rng.random_range(0.0..TAU),
        altitude: rng.random_range(-MAX_ALTITUDE..MAX_ALTITUDE),
    }
}

pub fn random_transform(rng: &mut ChaCha8Rng) -> Transform {
    Transform {
        dx: rng.random_range(-MAX_SHIFT..MAX_SHIFT),
        dy: rng.random_range(-MAX_SHIFT..MAX_SHIFT),
        log_scale: rng.random_range(-MAX_LOG_SCALE..MAX_LOG_SCALE),
    }
}

/// Mismatched conditions for a batch: a uniformly wrong class, a fresh view,
/// and a fresh transform per sample, with the squared distances to the true
/// view/transform as loss weights. Draw order per sample is fixed (class,
/// view, transform), so results depend only on the rng state.
pub fn sample_negatives<T: Scalar>(
    batch: &Batch<T>,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Negatives<T>> {
    if classes < 2 {
        return Err(Error::config("need at least 2 classes to draw a wrong one"));
    }
    let n = batch.len();
    if batch.c.shape() != [n, classes] {
        return Err(Error::shape(
            "sample_negatives",
            format!("c is {:?}, expected [{n}, {classes}]", batch.c.shape()),
        ));
    }
    let mut c = vec![T::zero(); n * classes];
    let mut v = Vec::with_capacity(n * 4);
    let mut t = Vec::with_capacity(n * 3);
    let mut w_v = Vec::with_capacity(n);
    let mut w_t = Vec::with_capacity(n);
    for i in 0..n {
        let row = &batch.c.data()[i * classes..(i + 1) * classes];
        let true_class = row
            .iter()
            .position(|&x| x > T::from_f64(0.5))
            .ok_or_else(|| Error::config("batch row has no one-hot class"))?;
        let mut wrong = rng.random_range(0..classes - 1);
        if wrong >= true_class {
            wrong += 1;
        }
        c[i * classes + wrong] = T::one();

        let view = random_view(rng).encode();
        let mut dv = 0.0;
        for (j, &x) in view.iter().enumerate() {
            let d = batch.v.data()[i * 4 + j].to_f64() - x;
            dv += d * d;
        }
        v.extend(view.iter().map(|&x| T::from_f64(x)));
        w_v.push(T::from_f64(dv));

        let tr = random_transform(rng).as_vec();
        let mut dt = 0.0;
        for (j, &x) in tr.iter().enumerate() {
            let d = batch.t.data()[i * 3 + j].to_f64() - x;
            dt += d * d;
        }
        t.extend(tr.iter().map(|&x| T::from_f64(x)));
        w_t.push(T::from_f64(dt));
    }
    Ok(Negatives {
        c: Tensor::new(&[n, classes], c)?,
        v: Tensor::new(&[n, 4], v)?,
        t: Tensor::new(&[n, 3], t)?,
        w_v: Tensor::new(&[n, 1], w_v)?,
        w_t: Tensor::new(&[n, 1], w_t)?,
    })
}

// ---- export ----------------------------------------------------------------

/// Write every sample as `img_NNNNNN.ppm` + `mask_NNNNNN.ppm` plus a
/// `manifest.csv` describing the enumeration.
pub fn export(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.csv"))?);
    writeln!(manifest, "index,class,azimuth,altitude,dx,dy,log_scale,split")?;
    let s = ds.cfg.img_size;
    for i in 0..ds.len() {
        let m = ds.meta(i)?;
        let sample = ds.render(i)?;
        writeln!(
            manifest,
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            i,
            m.class_id,
            m.view.azimuth,
            m.view.altitude,
            m.transform.dx,
            m.transform.dy,
            m.transform.log_scale,
            m.split.as_str()
        )?;
        ppm::write_ppm(
            &dir.join(format!("img_{i:06}.ppm")),
            s,
            s,
            &ppm::rgb_bytes(&sample.rgb)?,
        )?;
        ppm::write_ppm(
            &dir.join(format!("mask_{i:06}.ppm")),
            s,
            s,
            &ppm::mask_bytes(&sample.mask)?,
        )?;
    }
    manifest.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec0() -> ShapeSpec {
        ShapeSpec::for_class(0, 10).unwrap()
    }

    #[test]
    fn view_encoding_fixtures() {
        assert_eq!(encode_view(0.0, 0.0), [0.0, 1.0, 0.0, 1.0]);
        let v = encode_view(std::f64::consts::FRAC_PI_2, 0.0);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn view_round_trip_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let az = rng.random_range(0.0..TAU);
            let alt = rng.random_range(-MAX_ALTITUDE..MAX_ALTITUDE);
            let (az2, alt2) = decode_view(&encode_view(az, alt)).unwrap();
            assert!((az - az2).abs() < 1e-9 && (alt - alt2).abs() < 1e-9);
        }
        assert!(decode_view(&[0.5, 0.5, 0.0, 1.0]).is_err()); // non-unit pair
    }

    #[test]
    fn render_is_deterministic_and_periodic() {
        let view = ViewPoint { azimuth: 0.7, altitude: 0.2 };
        let a = render(&spec0(), view, Transform::IDENTITY, 32, 32).unwrap();
        let b = render(&spec0(), view, Transform::IDENTITY, 32, 32).unwrap();
        assert_eq!(a.rgb.data(), b.rgb.data());
        assert_eq!(a.mask.data(), b.mask.data());

        let turned = ViewPoint { azimuth: 0.7 + TAU, altitude: 0.2 };
        let c = render(&spec0(), turned, Transform::IDENTITY, 32, 32).unwrap();
        assert_eq!(a.rgb.data(), c.rgb.data());
        assert_eq!(a.mask.data(), c.mask.data());
    }

    #[test]
    fn background_is_white_exactly_off_mask() {
        let view = ViewPoint { azimuth: 1.1, altitude: -0.3 };
        let tr = Transform { dx: 0.1, dy: -0.05, log_scale: 0.1 };
        let s = render(&spec0(), view, tr, 32, 32).unwrap();
        let hw = 32 * 32;
        let (rgb, mask) = (s.rgb.data(), s.mask.data());
        let mut inside = 0;
        for p in 0..hw {
            assert!(mask[p] == 0.0 || mask[p] == 1.0);
            if mask[p] == 0.0 {
                for ch in 0..3 {
                    assert_eq!(rgb[ch * hw + p], 1.0);
                }
            } else {
                inside += 1;
            }
        }
        assert!(inside > 0 && inside < hw);
    }

    #[test]
    fn all_ten_classes_are_distinct_shapes() {
        let specs: Vec<_> = (0..10).map(|i| ShapeSpec::for_class(i, 10).unwrap()).collect();
        for i in 0..10 {
            assert_eq!(specs[i].legs, 4 - i % 2);
            for j in 0..i {
                let same = specs[i].legs == specs[j].legs
                    && specs[i].back_height == specs[j].back_height
                    && specs[i].seat_width == specs[j].seat_width;
                assert!(!same, "classes {j} and {i} share geometry");
            }
        }
        assert!(ShapeSpec::for_class(10, 10).is_err());
        assert!(ShapeSpec::for_class(0, 11).is_err());
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let v = ViewPoint { azimuth: 0.0, altitude: 1.0 };
        assert!(v.validate().is_err());
        let t = Transform { dx: 0.2, dy: 0.0, log_scale: 0.0 };
        assert!(t.validate().is_err());
        let ok = ViewPoint { azimuth: 0.0, altitude: 0.0 };
        assert!(render(&spec0(), ok, Transform::IDENTITY, 2, 32).is_err());
    }

    #[test]
    fn dataset_layout_and_split() {
        let ds = Dataset::new(DatasetConfig::default()).unwrap();
        assert_eq!(ds.len(), 10 * 36 * 3 * 2);
        let train = ds.indices(Split::Train);
        let test = ds.indices(Split::Test);
        assert_eq!(train.len(), ds.len() / 2);
        assert_eq!(test.len(), ds.len() / 2);
        // Disjoint cover in order.
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert!(all == (0..ds.len()).collect::<Vec<_>>());
        for &i in &test {
            assert_eq!(ds.meta(i).unwrap().az_idx % 2, 1);
        }
        // Odd azimuth count cannot satisfy the every-second-view rule.
        let bad = DatasetConfig { azimuths: 35, ..DatasetConfig::default() };
        assert!(Dataset::new(bad).is_err());
    }

    #[test]
    fn meta_is_pure_and_transforms_in_bounds() {
        let ds = Dataset::new(DatasetConfig::default()).unwrap();
        for i in (0..ds.len()).step_by(97) {
            let a = ds.meta(i).unwrap();
            let b = ds.meta(i).unwrap();
            assert_eq!(a, b);
            a.transform.validate().unwrap();
            a.view.validate().unwrap();
        }
        assert!(ds.meta(ds.len()).is_err());
    }

    #[test]
    fn negatives_never_repeat_the_true_class() {
        let ds = Dataset::new(DatasetConfig { img_size: 16, ..DatasetConfig::default() }).unwrap();
        let batch = make_batch::<f64>(&ds, &[0, 217, 1031, 2159]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let negs = sample_negatives(&batch, 10, &mut rng).unwrap();
            for i in 0..batch.len() {
                let truth = batch.c.data()[i * 10..(i + 1) * 10]
                    .iter()
                    .position(|&x| x == 1.0)
                    .unwrap();
                let wrong = negs.c.data()[i * 10..(i + 1) * 10]
                    .iter()
                    .position(|&x| x == 1.0)
                    .unwrap();
                assert_ne!(truth, wrong);
                // Fresh views still satisfy the unit-pair invariant.
                let row = &negs.v.data()[i * 4..(i + 1) * 4];
                assert!((row[0] * row[0] + row[1] * row[1] - 1.0).abs() < 1e-9);
                assert!((row[2] * row[2] + row[3] * row[3] - 1.0).abs() < 1e-9);
                assert!(negs.w_v.data()[i] >= 0.0 && negs.w_t.data()[i] >= 0.0);
            }
        }
    }
}
