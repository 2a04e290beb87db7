//! 3D cross-correlation over `[N, C, D, H, W]` buffers.
//!
//! The kernel is applied without flipping. Each batch entry is lowered to a
//! patch matrix (`im2col`) with rows ordered by input channel, then kernel tap
//! in `(kd, kh, kw)` raster order. Every output element accumulates its bias
//! first and then the rows in that order, so identical receptive fields give
//! bit-identical results wherever they sit in the volume and whatever the
//! batch size.

use crate::error::{Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

const AXES: [&str; 3] = ["depth", "height", "width"];

pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(TensorError::Dimension {
                    op,
                    axis: AXES[a],
                    detail: "stride must be at least 1".into(),
                });
            }
            output[a] = output_extent(input[a], kernel[a], stride[a], padding[a]).ok_or_else(|| {
                TensorError::Dimension {
                    op,
                    axis: AXES[a],
                    detail: format!(
                        "kernel extent {} exceeds padded input extent {}",
                        kernel[a],
                        input[a] + 2 * padding[a]
                    ),
                }
            })?;
        }
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            input,
            kernel,
            stride,
            padding,
            output,
        })
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.out_channels * self.out_volume()
    }

    /// Output index range `[lo, hi)` along `axis` for which kernel offset `k`
    /// lands inside the unpadded input.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.stride[axis];
        let p = self.padding[axis];
        let n_in = self.input[axis];
        let n_out = self.output[axis];
        // need o*s + k - p in [0, n_in)
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if n_in + p > k {
            ((n_in + p - k - 1) / s + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Visits every (output row, input row) pair touched by tap `(kz, ky, kx)`.
/// The callback receives output row offset, input row offset, first output
/// column, column count and the input column of the first output column.
#[inline]
fn for_each_row<F: FnMut(usize, usize, usize, usize, usize)>(
    g: &ConvGeom,
    kz: usize,
    ky: usize,
    kx: usize,
    mut f: F,
) {
    let (z_lo, z_hi) = g.valid_range(0, kz);
    let (y_lo, y_hi) = g.valid_range(1, ky);
    let (x_lo, x_hi) = g.valid_range(2, kx);
    if x_hi <= x_lo {
        return;
    }
    let [_, h_in, w_in] = g.input;
    let [_, h_out, w_out] = g.output;
    for oz in z_lo..z_hi {
        let iz = oz * g.stride[0] + kz - g.padding[0];
        for oy in y_lo..y_hi {
            let iy = oy * g.stride[1] + ky - g.padding[1];
            let out_row = (oz * h_out + oy) * w_out;
            let in_row = (iz * h_in + iy) * w_in;
            let ix0 = x_lo * g.stride[2] + kx - g.padding[2];
            f(out_row, in_row, x_lo, x_hi - x_lo, ix0);
        }
    }
}

/// Lowers batch entry `n` to a `[C_in * taps, P]` patch matrix (zeros where
/// the kernel overlaps padding).
fn im2col(g: &ConvGeom, input: &[f32], n: usize, col: &mut [f32]) {
    let in_vol = g.in_volume();
    let p_len = g.out_volume();
    let taps = g.taps();
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    col.fill(0.0);
    for ci in 0..g.in_channels {
        let x = &input[(n * g.in_channels + ci) * in_vol..][..in_vol];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = ci * taps + (kz * kh + ky) * kw + kx;
                    let row = &mut col[r * p_len..(r + 1) * p_len];
                    for_each_row(g, kz, ky, kx, |orow, irow, ox, len, ix| {
                        let dst = &mut row[orow + ox..orow + ox + len];
                        if sx == 1 {
                            dst.copy_from_slice(&x[irow + ix..irow + ix + len]);
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d = x[irow + ix + j * sx];
                            }
                        }
                    });
                }
            }
        }
    }
}

/// Inverse scatter of [`im2col`]: accumulates patch gradients into the input
/// gradient of batch entry `n`, rows in ascending order.
fn col2im(g: &ConvGeom, col: &[f32], n: usize, grad_in: &mut [f32]) {
    let in_vol = g.in_volume();
    let p_len = g.out_volume();
    let taps = g.taps();
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    for ci in 0..g.in_channels {
        let gi = &mut grad_in[(n * g.in_channels + ci) * in_vol..][..in_vol];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = ci * taps + (kz * kh + ky) * kw + kx;
                    let row = &col[r * p_len..(r + 1) * p_len];
                    for_each_row(g, kz, ky, kx, |orow, irow, ox, len, ix| {
                        let src = &row[orow + ox..orow + ox + len];
                        if sx == 1 {
                            for (d, s) in gi[irow + ix..irow + ix + len].iter_mut().zip(src) {
                                *d += *s;
                            }
                        } else {
                            for (j, s) in src.iter().enumerate() {
                                gi[irow + ix + j * sx] += *s;
                            }
                        }
                    });
                }
            }
        }
    }
}

/// `C[m×n] = A[m×k]·B[k×n] + beta·C`, all row-major unless strides say
/// otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides address only elements inside `a` (m×k), `b` (k×n)
    // and `c` (m×n), whose lengths the callers size exactly.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn forward(g: &ConvGeom, input: &[f32], kernel: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let p_len = g.out_volume();
    let rows = g.in_channels * g.taps();
    let co = g.out_channels;
    let mut out = vec![0.0f32; g.output_len()];
    let mut col = vec![0.0f32; rows * p_len];
    for n in 0..g.batch {
        im2col(g, input, n, &mut col);
        let o = &mut out[n * co * p_len..(n + 1) * co * p_len];
        if let Some(b) = bias {
            for (c, chunk) in o.chunks_exact_mut(p_len).enumerate() {
                chunk.fill(b[c]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(co, rows, p_len, kernel, (rows as isize, 1), &col, (p_len as isize, 1), beta, o);
    }
    out
}

pub fn backward_input(g: &ConvGeom, grad_out: &[f32], kernel: &[f32]) -> Vec<f32> {
    let p_len = g.out_volume();
    let rows = g.in_channels * g.taps();
    let co = g.out_channels;
    let mut grad_in = vec![0.0f32; g.batch * g.in_channels * g.in_volume()];
    let mut col = vec![0.0f32; rows * p_len];
    for n in 0..g.batch {
        let go = &grad_out[n * co * p_len..(n + 1) * co * p_len];
        // kernel^T: [rows, co]
        gemm(rows, co, p_len, kernel, (1, rows as isize), go, (p_len as isize, 1), 0.0, &mut col);
        col2im(g, &col, n, &mut grad_in);
    }
    grad_in
}

/// Kernel gradient; per-entry products are `f32`, batch entries are summed in
/// `f64`.
pub fn backward_kernel(g: &ConvGeom, grad_out: &[f32], input: &[f32]) -> Vec<f32> {
    let p_len = g.out_volume();
    let rows = g.in_channels * g.taps();
    let co = g.out_channels;
    let mut acc = vec![0.0f64; co * rows];
    let mut part = vec![0.0f32; co * rows];
    let mut col = vec![0.0f32; rows * p_len];
    for n in 0..g.batch {
        im2col(g, input, n, &mut col);
        let go = &grad_out[n * co * p_len..(n + 1) * co * p_len];
        // col^T: [p_len, rows]
        gemm(co, p_len, rows, go, (p_len as isize, 1), &col, (1, p_len as isize), 0.0, &mut part);
        for (a, p) in acc.iter_mut().zip(&part) {
            *a += *p as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

pub fn backward_bias(g: &ConvGeom, grad_out: &[f32]) -> Vec<f32> {
    let out_vol = g.out_volume();
    (0..g.out_channels)
        .map(|co| {
            let mut acc = 0.0f64;
            for n in 0..g.batch {
                for v in &grad_out[(n * g.out_channels + co) * out_vol..][..out_vol] {
                    acc += *v as f64;
                }
            }
            acc as f32
        })
        .collect()
}
