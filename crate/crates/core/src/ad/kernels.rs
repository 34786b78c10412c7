//! Raw numeric kernels shared by the graph operations.

use alloc::vec;
use alloc::vec::Vec;

/// A strided read-only view used to feed `dgemm` without copying transposes.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows × cols` view.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha · a · b + beta · c`, with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: both views were built from slices whose lengths were checked
    // against their extents, and `c` is exactly m×n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.height + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (self.width + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds a `C×H×W` input into a `(C·k·k) × (OH·OW)` patch matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let n = oh * ow;
    let mut col = vec![0.0; g.col_rows() * n];
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input grid.
pub(crate) fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let n = oh * ow;
    let mut x = vec![0.0; g.channels * g.height * g.width];
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Source sample positions for one axis of an align-corners resize.
///
/// Each entry is `(lo, hi, frac)` with the output equal to
/// `(1 - frac)·src[lo] + frac·src[hi]`.
pub(crate) fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = libm::floor(pos) as usize;
            let lo = lo.min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Coefficients of the Rodrigues formula `R = I + a·K + b·K²` and their
/// radial derivatives `c = a'(θ)/θ`, `d = b'(θ)/θ`.
pub(crate) struct RodriguesCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

pub(crate) const RODRIGUES_TAYLOR: f64 = 1e-6;
const RODRIGUES_DERIV_SERIES: f64 = 1e-2;

pub(crate) fn rodrigues_coeffs(theta_sq: f64) -> RodriguesCoeffs {
    let theta = libm::sqrt(theta_sq);
    let (a, b) = if theta < RODRIGUES_TAYLOR {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let half = libm::sin(0.5 * theta);
        (libm::sin(theta) / theta, 2.0 * half * half / theta_sq)
    };
    let (c, d) = if theta < RODRIGUES_DERIV_SERIES {
        let t4 = theta_sq * theta_sq;
        (
            -1.0 / 3.0 + theta_sq / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + theta_sq / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, co) = (libm::sin(theta), libm::cos(theta));
        let half = libm::sin(0.5 * theta);
        let t3 = theta_sq * theta;
        ((theta * co - s) / t3, (theta * s - 4.0 * half * half) / (t3 * theta))
    };
    RodriguesCoeffs { a, b, c, d }
}

pub(crate) fn skew(r: [f64; 3]) -> [f64; 9] {
    [0.0, -r[2], r[1], r[2], 0.0, -r[0], -r[1], r[0], 0.0]
}

pub(crate) fn mat3_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    out
}

pub(crate) fn rodrigues_matrix(r: [f64; 3]) -> [f64; 9] {
    let co = rodrigues_coeffs(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    let k = skew(r);
    let k2 = mat3_mul(&k, &k);
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = co.a * k[i] + co.b * k2[i];
    }
    out[0] += 1.0;
    out[4] += 1.0;
    out[8] += 1.0;
    out
}

/// Vector-Jacobian product of [`rodrigues_matrix`].
pub(crate) fn rodrigues_vjp(r: [f64; 3], g: &[f64]) -> [f64; 3] {
    let co = rodrigues_coeffs(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    let k = skew(r);
    let k2 = mat3_mul(&k, &k);
    let dot = |m: &[f64; 9]| -> f64 { m.iter().zip(g).map(|(x, y)| x * y).sum() };
    let gk = dot(&k);
    let gk2 = dot(&k2);
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ei = skew(e);
        let a = mat3_mul(&ei, &k);
        let b = mat3_mul(&k, &ei);
        let mut sym = [0.0; 9];
        for j in 0..9 {
            sym[j] = a[j] + b[j];
        }
        *o = co.c * r[i] * gk + co.a * dot(&ei) + co.d * r[i] * gk2 + co.b * dot(&sym);
    }
    out
}
