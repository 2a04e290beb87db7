use crate::error::{Result, TensorError};

const AXES: [&str; 3] = ["depth", "height", "width"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub planes: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl PoolGeom {
    pub fn new(planes: usize, input: [usize; 3], window: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 || window[a] == 0 {
                return Err(TensorError::Dimension {
                    op: "maxpool3d",
                    axis: AXES[a],
                    detail: "window and stride must be at least 1".into(),
                });
            }
            if window[a] > input[a] {
                return Err(TensorError::Dimension {
                    op: "maxpool3d",
                    axis: AXES[a],
                    detail: format!("window {} larger than input extent {}", window[a], input[a]),
                });
            }
            output[a] = (input[a] - window[a]) / stride[a] + 1;
        }
        Ok(Self {
            planes,
            input,
            window,
            stride,
            output,
        })
    }
}

/// Max pooling. Returns the pooled values and, for each output cell, the flat
/// input index of its maximum (lowest index wins ties). A NaN in a window
/// propagates rather than being skipped.
pub fn max_forward(g: &PoolGeom, input: &[f32]) -> (Vec<f32>, Vec<usize>) {
    let in_vol: usize = g.input.iter().product();
    let out_vol: usize = g.output.iter().product();
    let [_, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let mut values = Vec::with_capacity(g.planes * out_vol);
    let mut argmax = Vec::with_capacity(g.planes * out_vol);
    for p in 0..g.planes {
        let base = p * in_vol;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dz in 0..g.window[0] {
                        let iz = z * g.stride[0] + dz;
                        for dy in 0..g.window[1] {
                            let iy = y * g.stride[1] + dy;
                            for dx in 0..g.window[2] {
                                let ix = x * g.stride[2] + dx;
                                let idx = base + (iz * h + iy) * w + ix;
                                let v = input[idx];
                                let better = v > best || (v == best && idx < best_idx) || v.is_nan();
                                if best_idx == usize::MAX || (!best.is_nan() && better) {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    values.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    (values, argmax)
}

pub fn max_backward(input_len: usize, argmax: &[usize], grad_out: &[f32]) -> Vec<f32> {
    let mut grad = vec![0.0f32; input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad[i] += g;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_pick_lowest_index() {
        let g = PoolGeom::new(1, [1, 2, 2], [1, 2, 2], [1, 2, 2]).unwrap();
        let (v, idx) = max_forward(&g, &[3.0, 3.0, 1.0, 3.0]);
        assert_eq!(v, vec![3.0]);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn nan_propagates() {
        let g = PoolGeom::new(1, [1, 2, 2], [1, 2, 2], [1, 2, 2]).unwrap();
        let (v, idx) = max_forward(&g, &[3.0, f32::NAN, 5.0, f32::NAN]);
        assert!(v[0].is_nan());
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn window_too_large_names_axis() {
        let err = PoolGeom::new(1, [4, 1, 4], [2, 2, 2], [2, 2, 2]).unwrap_err();
        match err {
            TensorError::Dimension { axis, .. } => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
