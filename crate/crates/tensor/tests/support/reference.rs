//! Naive `f64` reference layers and a central-difference gradient checker.
//! Written independently of the tape so that finite differences of these
//! forwards can validate the analytic `f32` gradients.
#![allow(dead_code)]

use rand::Rng;

pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct Conv3dSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    pub fn output(&self) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = (self.input[a] + 2 * self.padding[a] - self.kernel[a]) / self.stride[a] + 1;
        }
        o
    }
}

pub fn conv3d(spec: &Conv3dSpec, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let [d, h, wd] = spec.input;
    let [kd, kh, kw] = spec.kernel;
    let [od, oh, ow] = spec.output();
    let mut out = Vec::with_capacity(spec.c_out * od * oh * ow);
    for co in 0..spec.c_out {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..spec.c_in {
                        for a in 0..kd {
                            for b in 0..kh {
                                for c in 0..kw {
                                    let iz = (z * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                    let iy = (y * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                    let ix = (xo * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                                    if iz < 0 || iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                    if iz >= d || iy >= h || ix >= wd {
                                        continue;
                                    }
                                    let xv = x[((ci * d + iz) * h + iy) * wd + ix];
                                    let wv = w[(((co * spec.c_in + ci) * kd + a) * kh + b) * kw + c];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn maxpool3d(planes: usize, input: [usize; 3], window: [usize; 3], stride: [usize; 3], x: &[f64]) -> Vec<f64> {
    let [d, h, w] = input;
    let out: Vec<usize> = (0..3).map(|a| (input[a] - window[a]) / stride[a] + 1).collect();
    let mut res = Vec::new();
    for p in 0..planes {
        for z in 0..out[0] {
            for y in 0..out[1] {
                for xo in 0..out[2] {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            for c in 0..window[2] {
                                let v = x[((p * d + z * stride[0] + a) * h + y * stride[1] + b) * w + xo * stride[2] + c];
                                m = m.max(v);
                            }
                        }
                    }
                    res.push(m);
                }
            }
        }
    }
    res
}

pub fn avg_pool(planes: usize, spatial: usize, x: &[f64]) -> Vec<f64> {
    (0..planes)
        .map(|p| x[p * spatial..(p + 1) * spatial].iter().sum::<f64>() / spatial as f64)
        .collect()
}

pub fn instance_norm(channels: usize, spatial: usize, x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (p, xs) in x.chunks(spatial).enumerate() {
        let c = p % channels;
        let mean = xs.iter().sum::<f64>() / spatial as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / spatial as f64;
        let sd = (var + 1e-5).sqrt();
        out.extend(xs.iter().map(|v| (v - mean) / sd * gamma[c] + beta[c]));
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + FD_STEP;
            let up = f(&work);
            work[i] = orig - FD_STEP;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_rel_error(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Values in `[-1, 1]` kept at least `gap` away from zero.
pub fn away_from_zero<R: Rng>(rng: &mut R, n: usize, gap: f64) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() > gap {
                break v as f32;
            }
        })
        .collect()
}

pub fn uniform<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Distinct values whose pairwise gaps exceed `gap` (a shuffled ladder).
pub fn distinct<R: Rng>(rng: &mut R, n: usize, gap: f64) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| (i as f64 * gap * 1.5 - n as f64 * gap * 0.75) as f32).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

pub fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
