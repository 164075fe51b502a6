//! Flat-buffer numeric kernels: GEMM variants, im2col/col2im, and the three
//! convolution primitives shared by conv2d and deconv2d (forward and both
//! backward passes are all expressed through the same routines).
//!
//! Everything is single-threaded and runs in a fixed summation order, so
//! results are bit-reproducible across runs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of one convolution: input `n x cin x h x w`, kernel
/// `cout x cin x k x k`, output `n x cout x oh x ow`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Geometry for a forward convolution (cross-correlation).
    pub fn conv(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("need 4-d input and kernel, got {x_shape:?} and {w_shape:?}"),
            ));
        }
        let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (cout, wc, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if kh != kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be square, got {w_shape:?}"),
            ));
        }
        if wc != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin} (input {x_shape:?}) != kernel channels {wc} (kernel {w_shape:?})"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {w_shape:?} larger than padded input {x_shape:?} (pad {pad})"),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            oh,
            ow,
        })
    }

    /// Geometry for a transposed convolution with kernel layout
    /// `cin x cout x k x k`. Returned as the *mirrored* forward-conv geometry:
    /// the deconv output plays the role of the conv input, so all three conv
    /// primitives can be reused directly.
    pub fn deconv(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(Error::shape(
                "deconv2d",
                format!("need 4-d input and kernel, got {x_shape:?} and {w_shape:?}"),
            ));
        }
        let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (wc, cout, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if kh != kw {
            return Err(Error::shape(
                "deconv2d",
                format!("kernel must be square, got {w_shape:?}"),
            ));
        }
        if wc != cin {
            return Err(Error::shape(
                "deconv2d",
                format!("input channels {cin} (input {x_shape:?}) != kernel dim 0 {wc} (kernel {w_shape:?})"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("deconv2d", "stride must be >= 1".to_string()));
        }
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let ow = ((w - 1) * stride + kw).checked_sub(2 * pad);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
            _ => {
                return Err(Error::shape(
                    "deconv2d",
                    format!("output collapses for input {x_shape:?}, kernel {w_shape:?}, stride {stride}, pad {pad}"),
                ))
            }
        };
        // Mirrored: conv from (n, cout, oh, ow) back to (n, cin, h, w).
        Ok(ConvGeom {
            n,
            cin: cout,
            h: oh,
            w: ow,
            cout: cin,
            k: kh,
            stride,
            pad,
            oh: h,
            ow: w,
        })
    }

    pub fn in_numel(&self) -> usize {
        self.n * self.cin * self.h * self.w
    }

    fn ckk(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn ncols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// c += a @ b, a: m x k, b: k x n, c: m x n.
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aip * bv;
            }
        }
    }
}

/// c += a @ b^T, a: m x k, b: n x k, c: m x n.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(arow, brow);
        }
    }
}

/// c += a^T @ b, a: k x m, b: k x n, c: m x n.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators. The fixed lane order keeps
/// the result deterministic while letting the loop vectorize (a single serial
/// accumulator would pin the sum to one float op per cycle).
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    let ra = a.chunks_exact(8).remainder();
    let rb = b.chunks_exact(8).remainder();
    for (&av, &bv) in ra.iter().zip(rb) {
        s = s + av * bv;
    }
    s
}

/// Unfold padded patches into a `(cin*k*k) x (n*oh*ow)` matrix. Out-of-bounds
/// taps stay zero.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.ncols();
    let mut cols = vec![T::zero(); g.ckk() * ncols];
    for nn in 0..g.n {
        for c in 0..g.cin {
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let xb = ((nn * g.cin + c) * g.h + ih as usize) * g.w;
                        let cb = row * ncols + (nn * g.oh + oh) * g.ow;
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            cols[cb + ow] = x[xb + iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an input-shaped
/// buffer. Overlapping taps accumulate.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.ncols();
    let mut x = vec![T::zero(); g.in_numel()];
    for nn in 0..g.n {
        for c in 0..g.cin {
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let xb = ((nn * g.cin + c) * g.h + ih as usize) * g.w;
                        let cb = row * ncols + (nn * g.oh + oh) * g.ow;
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            x[xb + iw as usize] = x[xb + iw as usize] + cols[cb + ow];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Permute `cout x (n*s)` (GEMM output layout) to `n x cout x s`.
fn fn_to_nf<T: Scalar>(src: &[T], n: usize, f: usize, s: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for fi in 0..f {
        for ni in 0..n {
            let from = fi * (n * s) + ni * s;
            let to = (ni * f + fi) * s;
            dst[to..to + s].copy_from_slice(&src[from..from + s]);
        }
    }
    dst
}

/// Permute `n x cout x s` to `cout x (n*s)`.
fn nf_to_fn<T: Scalar>(src: &[T], n: usize, f: usize, s: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for ni in 0..n {
        for fi in 0..f {
            let from = (ni * f + fi) * s;
            let to = fi * (n * s) + ni * s;
            dst[to..to + s].copy_from_slice(&src[from..from + s]);
        }
    }
    dst
}

/// Forward convolution. Returns the output and the im2col buffer (the
/// backward-weight pass reuses it).
pub(crate) fn conv_fwd<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let ncols = g.ncols();
    let mut ymat = vec![T::zero(); g.cout * ncols];
    gemm_nn(w, &cols, &mut ymat, g.cout, g.ckk(), ncols);
    (fn_to_nf(&ymat, g.n, g.cout, g.oh * g.ow), cols)
}

/// Gradient of a convolution w.r.t. its input: scatter `w^T @ gy` back
/// through the patch map. Also the forward pass of deconv2d.
pub(crate) fn conv_bwd_input<T: Scalar>(gy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.ncols();
    let gymat = nf_to_fn(gy, g.n, g.cout, g.oh * g.ow);
    let mut dcols = vec![T::zero(); g.ckk() * ncols];
    gemm_tn(w, &gymat, &mut dcols, g.ckk(), g.cout, ncols);
    col2im(&dcols, g)
}

/// Gradient of a convolution w.r.t. its kernel, given the im2col buffer of
/// the forward input. Returns `cout x (cin*k*k)`.
pub(crate) fn conv_bwd_weight<T: Scalar>(cols: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.ncols();
    let gymat = nf_to_fn(gy, g.n, g.cout, g.oh * g.ow);
    let mut gw = vec![T::zero(); g.cout * g.ckk()];
    gemm_nt(&gymat, cols, &mut gw, g.cout, ncols, g.ckk());
    gw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let m = 3;
        let k = 17; // not a multiple of the dot unroll width
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive_mm(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a @ b = a @ (b^T)^T: feed gemm_nt the transpose of b.
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &bt, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_tn(&at, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_accumulates_instead_of_overwriting() {
        let mut c = vec![1.0f64; 1];
        gemm_nn(&[2.0], &[3.0], &mut c, 1, 1, 1);
        assert_eq!(c[0], 7.0);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for every geometry, by definition
        // of adjoint. Check one awkward geometry with padding and stride.
        let g = ConvGeom::conv(&[2, 3, 5, 4], &[4, 3, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_numel()).map(|i| (i as f64 * 0.13).sin()).collect();
        let ncols = g.n * g.oh * g.ow;
        let y: Vec<f64> = (0..g.cin * g.k * g.k * ncols)
            .map(|i| (i as f64 * 0.29).cos())
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn deconv_geometry_mirrors_conv() {
        // A 4x4 deconv input at stride 2, k 4, pad 1 grows to 8x8, and the
        // mirrored conv maps 8x8 back to 4x4.
        let g = ConvGeom::deconv(&[1, 64, 4, 4], &[64, 32, 4, 4], 2, 1).unwrap();
        assert_eq!((g.cin, g.h, g.w), (32, 8, 8));
        assert_eq!((g.cout, g.oh, g.ow), (64, 4, 4));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ConvGeom::conv(&[1, 2, 3, 3], &[4, 3, 3, 3], 1, 0).is_err()); // channel mismatch
        assert!(ConvGeom::conv(&[1, 2, 2, 2], &[4, 2, 3, 3], 1, 0).is_err()); // kernel too big
        assert!(ConvGeom::conv(&[1, 2, 3, 3], &[4, 2, 3, 3], 0, 0).is_err()); // zero stride
        assert!(ConvGeom::deconv(&[1, 2, 2, 2], &[2, 3, 2, 2], 1, 2).is_err()); // pad eats output
    }
}
