//! Helpers shared by the integration-test binaries: brute-force convolution
//! references, PPM readers, and scratch directories. Each test target
//! compiles its own copy, so items unused by one target are expected.
#![allow(dead_code)]

use condgan::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Direct cross-correlation: out[n,f,i,j] = sum x[n,c,i*s+ki-p,j*s+kj-p] * w[f,c,ki,kj].
pub fn conv_ref(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros(&[n, cout, oh, ow]);
    for ni in 0..n {
        for f in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ih = (i * stride + ki) as isize - pad as isize;
                                let iw = (j * stride + kj) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize || iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[x.idx4(ni, c, ih as usize, iw as usize)];
                                let wv = w.data()[w.idx4(f, c, ki, kj)];
                                acc += xv * wv;
                            }
                        }
                    }
                    let off = y.idx4(ni, f, i, j);
                    y.data_mut()[off] = acc;
                }
            }
        }
    }
    y
}

/// Direct transposed convolution as a scatter: every input pixel adds its
/// weighted kernel stamp at output position (i*s + ki - p, j*s + kj - p).
/// Kernel layout is cin x cout x k x k.
pub fn deconv_ref(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let mut y = Tensor::zeros(&[n, cout, oh, ow]);
    for ni in 0..n {
        for c in 0..cin {
            for i in 0..h {
                for j in 0..wd {
                    let xv = x.data()[x.idx4(ni, c, i, j)];
                    for f in 0..cout {
                        for ki in 0..k {
                            for kj in 0..k {
                                let out_i = (i * stride + ki) as isize - pad as isize;
                                let out_j = (j * stride + kj) as isize - pad as isize;
                                if out_i < 0
                                    || out_i >= oh as isize
                                    || out_j < 0
                                    || out_j >= ow as isize
                                {
                                    continue;
                                }
                                let off = y.idx4(ni, f, out_i as usize, out_j as usize);
                                y.data_mut()[off] += xv * w.data()[w.idx4(c, f, ki, kj)];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub struct Geom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Draw geometries until one is valid for both conv (k fits in the padded
/// input) and deconv (output does not collapse under the padding crop).
pub fn rand_geom(rng: &mut ChaCha8Rng) -> Geom {
    loop {
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=2);
        let h = rng.random_range(1..=7);
        let w = rng.random_range(1..=7);
        if h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        if (((h - 1) * stride + k) as isize - 2 * pad as isize) < 1 {
            continue;
        }
        if (((w - 1) * stride + k) as isize - 2 * pad as isize) < 1 {
            continue;
        }
        return Geom {
            n: rng.random_range(1..=3),
            cin: rng.random_range(1..=4),
            cout: rng.random_range(1..=4),
            h,
            w,
            k,
            stride,
            pad,
        };
    }
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A fresh temp directory name; removes any leftover from a previous run.
pub fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("condgan_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// Header plus raw body of a P6 file.
pub fn read_ppm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let header_end = bytes
        .windows(4)
        .position(|w| w == b"255\n")
        .expect("maxval line")
        + 4;
    let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
    let mut lines = header.lines();
    assert_eq!(lines.next(), Some("P6"));
    let dims: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    let (w, h) = (dims[0], dims[1]);
    let body = bytes[header_end..].to_vec();
    assert_eq!(body.len(), w * h * 3, "{}", path.display());
    (w, h, body)
}

/// Pixels of one w x h tile of a tiled image, addressed by tile row/column.
pub fn tile(img: &(usize, usize, Vec<u8>), row: usize, col: usize, w: usize, h: usize) -> Vec<u8> {
    let (iw, _, body) = img;
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let src = ((row * h + y) * iw + col * w) * 3;
        out.extend_from_slice(&body[src..src + w * 3]);
    }
    out
}

/// Pixels of the `i`th frame of a horizontal strip of w x w frames.
pub fn strip_frame(strip: &(usize, usize, Vec<u8>), i: usize, w: usize) -> Vec<u8> {
    tile(strip, 0, i, w, w)
}
