//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse sweep.
//!
//! Spatial operations accept unbatched tensors (`[C, T]`, `[C, D, H, W]`) and
//! batched tensors (`[N, C, T]`, `[N, C, D, H, W]`). Batch entries never mix.

use crate::error::{Result, TensorError};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::pool::{self, PoolGeom};
use crate::tensor::Tensor;

/// Variance floor inside instance normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Temporal padding for [`Graph::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding1d {
    /// `(k - 1) / 2` on both sides; only valid for odd `k` and stride 1.
    Same,
    Fixed(usize),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        spatial: usize,
    },
    InstanceNorm {
        input: Var,
        scale: Var,
        shift: Var,
        channels: usize,
        spatial: usize,
        xhat: Vec<f32>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MulConst(Var, Vec<f32>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose {
        input: Var,
        rows: usize,
        cols: usize,
    },
    Matvec {
        weight: Var,
        input: Var,
        bias: Option<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
    name: Option<String>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Splits a spatial tensor shape into (batch, channels, spatial extents).
fn split_batch(op: &'static str, shape: &[usize], spatial_rank: usize) -> Result<(usize, usize, Vec<usize>)> {
    match shape.len() {
        r if r == spatial_rank + 1 => Ok((1, shape[0], shape[1..].to_vec())),
        r if r == spatial_rank + 2 => Ok((shape[0], shape[1], shape[2..].to_vec())),
        _ => Err(TensorError::Rank {
            op,
            expected: if spatial_rank == 3 {
                "[C, D, H, W] or [N, C, D, H, W]"
            } else {
                "[C, T] or [N, C, T]"
            },
            found: shape.to_vec(),
        }),
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn add_into(dst: &mut Option<Vec<f32>>, src: Vec<f32>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor, name: impl Into<String>) -> Var {
        self.leaf(value, true, Some(name.into()))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            name,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(op_name, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            name: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// 3D cross-correlation with zero padding.
    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        const OP: &str = "conv3d";
        let in_shape = self.shape(input).to_vec();
        let (batch, c_in, spatial) = split_batch(OP, &in_shape, 3)?;
        let k_shape = self.shape(kernel).to_vec();
        if k_shape.len() != 5 {
            return Err(TensorError::Rank {
                op: OP,
                expected: "kernel [C_out, C_in, kd, kh, kw]",
                found: k_shape,
            });
        }
        if k_shape[1] != c_in {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "channels",
                detail: format!("input has {c_in} channels, kernel expects {}", k_shape[1]),
            });
        }
        let c_out = k_shape[0];
        self.check_bias(OP, bias, c_out)?;
        let geom = ConvGeom::new(
            OP,
            batch,
            c_in,
            c_out,
            [spatial[0], spatial[1], spatial[2]],
            [k_shape[2], k_shape[3], k_shape[4]],
            stride,
            padding,
        )?;
        let mut out_shape = vec![c_out, geom.output[0], geom.output[1], geom.output[2]];
        if in_shape.len() == 5 {
            out_shape.insert(0, batch);
        }
        self.conv_node(OP, input, kernel, bias, geom, out_shape)
    }

    /// 1D cross-correlation over the last axis.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding1d,
    ) -> Result<Var> {
        const OP: &str = "conv1d";
        let in_shape = self.shape(input).to_vec();
        let (batch, c_in, spatial) = split_batch(OP, &in_shape, 1)?;
        let k_shape = self.shape(kernel).to_vec();
        if k_shape.len() != 3 {
            return Err(TensorError::Rank {
                op: OP,
                expected: "kernel [C_out, C_in, k]",
                found: k_shape,
            });
        }
        if k_shape[1] != c_in {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "channels",
                detail: format!("input has {c_in} channels, kernel expects {}", k_shape[1]),
            });
        }
        let k = k_shape[2];
        let pad = match padding {
            Padding1d::Fixed(p) => p,
            Padding1d::Same => {
                if k % 2 == 0 {
                    return Err(TensorError::Config(format!(
                        "same padding needs an odd kernel size, got {k}"
                    )));
                }
                if stride != 1 {
                    return Err(TensorError::Config(format!(
                        "same padding needs stride 1, got {stride}"
                    )));
                }
                (k - 1) / 2
            }
        };
        let c_out = k_shape[0];
        self.check_bias(OP, bias, c_out)?;
        let geom = ConvGeom::new(
            OP,
            batch,
            c_in,
            c_out,
            [1, 1, spatial[0]],
            [1, 1, k],
            [1, 1, stride],
            [0, 0, pad],
        )?;
        let mut out_shape = vec![c_out, geom.output[2]];
        if in_shape.len() == 3 {
            out_shape.insert(0, batch);
        }
        self.conv_node(OP, input, kernel, bias, geom, out_shape)
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, c_out: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.value(b).len() != c_out {
                return Err(TensorError::Dimension {
                    op,
                    axis: "channels",
                    detail: format!("bias has {} entries for {c_out} output channels", self.value(b).len()),
                });
            }
        }
        Ok(())
    }

    fn conv_node(
        &mut self,
        op: &'static str,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let data = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(out_shape, data)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        self.push(
            op,
            value,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            },
            &deps,
        )
    }

    pub fn maxpool3d(&mut self, input: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        const OP: &str = "maxpool3d";
        let shape = self.shape(input).to_vec();
        let (batch, channels, spatial) = split_batch(OP, &shape, 3)?;
        let geom = PoolGeom::new(batch * channels, [spatial[0], spatial[1], spatial[2]], window, stride)?;
        let (data, argmax) = pool::max_forward(&geom, self.value(input).data());
        let mut out_shape = shape[..shape.len() - 3].to_vec();
        out_shape.extend_from_slice(&geom.output);
        let value = Tensor::new(out_shape, data)?;
        self.push(OP, value, Op::MaxPool { input, argmax }, &[input])
    }

    /// Mean over all spatial positions: `[C, ...] -> [C]`, `[N, C, ...] -> [N, C]`.
    pub fn adaptive_avg_pool(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "adaptive_avg_pool";
        let shape = self.shape(input).to_vec();
        let (batch, channels, spatial) = split_batch(OP, &shape, 3)?;
        let spatial: usize = spatial.iter().product();
        let data: Vec<f32> = self
            .value(input)
            .data()
            .chunks_exact(spatial)
            .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64) as f32)
            .collect();
        let out_shape = if shape.len() == 5 {
            vec![batch, channels]
        } else {
            vec![channels]
        };
        let value = Tensor::new(out_shape, data)?;
        self.push(OP, value, Op::AvgPool { input, spatial }, &[input])
    }

    /// Per-sample, per-channel standardization followed by a channel affine map.
    pub fn instance_norm(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        const OP: &str = "instance_norm";
        let shape = self.shape(input).to_vec();
        let spatial_rank = match shape.len() {
            2 | 3 => 1,
            4 | 5 => 3,
            _ => {
                return Err(TensorError::Rank {
                    op: OP,
                    expected: "[C, T], [N, C, T], [C, D, H, W] or [N, C, D, H, W]",
                    found: shape,
                })
            }
        };
        let (_, channels, spatial) = split_batch(OP, &shape, spatial_rank)?;
        let spatial: usize = spatial.iter().product();
        if spatial < 2 {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "spatial",
                detail: "at least 2 elements per channel are required".into(),
            });
        }
        for p in [scale, shift] {
            if self.value(p).len() != channels {
                return Err(TensorError::Dimension {
                    op: OP,
                    axis: "channels",
                    detail: format!("affine parameter has {} entries for {channels} channels", self.value(p).len()),
                });
            }
        }
        let x = self.value(input).data();
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut out = vec![0.0f32; x.len()];
        let mut xhat = vec![0.0f32; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / spatial);
        for (plane, (xs, (ys, hs))) in x
            .chunks_exact(spatial)
            .zip(out.chunks_exact_mut(spatial).zip(xhat.chunks_exact_mut(spatial)))
            .enumerate()
        {
            let c = plane % channels;
            let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64;
            let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / spatial as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            for ((y, h), &v) in ys.iter_mut().zip(hs.iter_mut()).zip(xs) {
                let n = ((v as f64 - mean) * is) as f32;
                *h = n;
                *y = n * gamma[c] + beta[c];
            }
            inv_std.push(is);
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            OP,
            value,
            Op::InstanceNorm {
                input,
                scale,
                shift,
                channels,
                spatial,
                xhat,
                inv_std,
            },
            &[input, scale, shift],
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input);
        // `f32::max` would turn NaN into 0
        let data = v.data().iter().map(|&x| if x < 0.0 { 0.0 } else { x }).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push("relu", value, Op::Relu(input), &[input])
    }

    fn zip_op(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, value, node, &[a, b])
    }

    /// Elementwise sum of equal-shape tensors (residual connections).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Result<Var> {
        let v = self.value(input);
        let data = v.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale(input, factor), &[input])
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, input: Var, factors: &[f32]) -> Result<Var> {
        let v = self.value(input);
        if v.len() != factors.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                lhs: v.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let data = v.data().iter().zip(factors).map(|(&x, &f)| x * f).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push("mul_const", value, Op::MulConst(input, factors.to_vec()), &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().map(|&v| v as f64).sum::<f64>();
        self.push("sum", Tensor::scalar(s as f32), Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input);
        let s = v.data().iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        self.push("mean", Tensor::scalar(s as f32), Op::Mean(input), &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(input), &[input])
    }

    /// `[R, C] -> [C, R]`.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input);
        if v.shape().len() != 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: "[R, C]",
                found: v.shape().to_vec(),
            });
        }
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let src = v.data();
        let mut data = vec![0.0f32; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], data)?;
        self.push("transpose", value, Op::Transpose { input, rows, cols }, &[input])
    }

    /// Fully connected layer: `weight [O, I] · input [I] + bias [O]`.
    pub fn matvec(&mut self, weight: Var, input: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "matvec";
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 {
            return Err(TensorError::Rank {
                op: OP,
                expected: "weight [O, I]",
                found: ws,
            });
        }
        let (o, i) = (ws[0], ws[1]);
        if self.value(input).len() != i {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "features",
                detail: format!("weight expects {i} inputs, got {}", self.value(input).len()),
            });
        }
        self.check_bias(OP, bias, o)?;
        let w = self.value(weight).data();
        let x = self.value(input).data();
        let b = bias.map(|b| self.value(b).data());
        let data = (0..o)
            .map(|r| {
                let row = &w[r * i..(r + 1) * i];
                let mut acc = b.map_or(0.0, |b| b[r] as f64);
                for (a, v) in row.iter().zip(x) {
                    acc += (*a as f64) * (*v as f64);
                }
                acc as f32
            })
            .collect();
        let value = Tensor::new(vec![o], data)?;
        let mut deps = vec![weight, input];
        deps.extend(bias);
        self.push(OP, value, Op::Matvec { weight, input, bias }, &deps)
    }

    /// Populates gradients of `loss` with respect to every node that requires
    /// them. Trainable leaves the loss does not depend on receive zeros and a
    /// warning.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let loss_shape = self.shape(loss).to_vec();
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_backward(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                if !g.iter().all(|x| x.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                if self.nodes[v.0].requires_grad {
                    add_into(&mut self.nodes[v.0].grad, g);
                }
            }
        }
        for n in &mut self.nodes {
            if n.requires_grad && matches!(n.op, Op::Leaf) && n.grad.is_none() {
                log::warn!(
                    "parameter `{}` is not connected to the loss; its gradient is zero",
                    n.name.as_deref().unwrap_or("?")
                );
                n.grad = Some(vec![0.0; n.value.len()]);
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, grad: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            } => {
                if needs(input) {
                    out.push((*input, conv::backward_input(geom, grad, self.value(*kernel).data())));
                }
                if needs(kernel) {
                    out.push((*kernel, conv::backward_kernel(geom, grad, self.value(*input).data())));
                }
                if let Some(b) = bias.filter(needs) {
                    out.push((b, conv::backward_bias(geom, grad)));
                }
            }
            Op::MaxPool { input, argmax } => {
                out.push((*input, pool::max_backward(self.value(*input).len(), argmax, grad)));
            }
            Op::AvgPool { input, spatial } => {
                let inv = 1.0 / *spatial as f32;
                let g = grad
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, *spatial))
                    .collect();
                out.push((*input, g));
            }
            Op::InstanceNorm {
                input,
                scale,
                shift,
                channels,
                spatial,
                xhat,
                inv_std,
            } => {
                let gamma = self.value(*scale).data();
                let mut dx = vec![0.0f32; grad.len()];
                let mut dgamma = vec![0.0f64; *channels];
                let mut dbeta = vec![0.0f64; *channels];
                let n = *spatial as f64;
                for (plane, ((dy, xh), dxs)) in grad
                    .chunks_exact(*spatial)
                    .zip(xhat.chunks_exact(*spatial))
                    .zip(dx.chunks_exact_mut(*spatial))
                    .enumerate()
                {
                    let c = plane % channels;
                    let g = gamma[c] as f64;
                    let mut sum_dy = 0.0f64;
                    let mut sum_dy_xh = 0.0f64;
                    for (&d, &h) in dy.iter().zip(xh) {
                        sum_dy += d as f64;
                        sum_dy_xh += d as f64 * h as f64;
                    }
                    dgamma[c] += sum_dy_xh;
                    dbeta[c] += sum_dy;
                    let mean_d = g * sum_dy / n;
                    let mean_dh = g * sum_dy_xh / n;
                    let is = inv_std[plane];
                    for ((o, &d), &h) in dxs.iter_mut().zip(dy).zip(xh) {
                        *o = (is * (g * d as f64 - mean_d - h as f64 * mean_dh)) as f32;
                    }
                }
                if needs(input) {
                    out.push((*input, dx));
                }
                out.push((*scale, dgamma.into_iter().map(|v| v as f32).collect()));
                out.push((*shift, dbeta.into_iter().map(|v| v as f32).collect()));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let g = grad
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                out.push((*a, g));
            }
            Op::Add(a, b) => {
                out.push((*a, grad.to_vec()));
                out.push((*b, grad.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, grad.to_vec()));
                out.push((*b, grad.iter().map(|g| -g).collect()));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                out.push((*a, grad.iter().zip(xb).map(|(g, y)| g * y).collect()));
                out.push((*b, grad.iter().zip(xa).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(a, f) => out.push((*a, grad.iter().map(|g| g * f).collect())),
            Op::MulConst(a, f) => out.push((*a, grad.iter().zip(f).map(|(g, f)| g * f).collect())),
            Op::Sum(a) => out.push((*a, vec![grad[0]; self.value(*a).len()])),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                out.push((*a, vec![grad[0] / n as f32; n]));
            }
            Op::Reshape(a) => out.push((*a, grad.to_vec())),
            Op::Transpose { input, rows, cols } => {
                let mut g = vec![0.0f32; rows * cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        g[r * cols + c] = grad[c * rows + r];
                    }
                }
                out.push((*input, g));
            }
            Op::Matvec { weight, input, bias } => {
                let w = self.value(*weight).data();
                let x = self.value(*input).data();
                let i_len = x.len();
                if needs(input) {
                    let mut dx = vec![0.0f64; i_len];
                    for (r, &g) in grad.iter().enumerate() {
                        for (d, &a) in dx.iter_mut().zip(&w[r * i_len..(r + 1) * i_len]) {
                            *d += g as f64 * a as f64;
                        }
                    }
                    out.push((*input, dx.into_iter().map(|v| v as f32).collect()));
                }
                if needs(weight) {
                    let dw = grad.iter().flat_map(|&g| x.iter().map(move |&v| g * v)).collect();
                    out.push((*weight, dw));
                }
                if let Some(b) = bias.filter(needs) {
                    out.push((b, grad.to_vec()));
                }
            }
        }
        out
    }
}
