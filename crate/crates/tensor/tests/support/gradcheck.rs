//! Per-primitive gradient checks on randomized small shapes. Each check
//! returns the worst relative error between the tape's analytic gradient and
//! central differences of the `f64` reference forward.
#![allow(dead_code)]

use fcdlif_tensor::{Graph, Padding1d, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::{self as r, Conv3dSpec};

/// Denominator floor for the relative error.
pub const FLOOR: f64 = 1e-3;

fn tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random projection loss `sum(proj * y)` on the tape.
fn project(g: &mut Graph, y: fcdlif_tensor::Var, proj: &[f32]) -> fcdlif_tensor::Var {
    let p = g.mul_const(y, proj).unwrap();
    g.sum(p).unwrap()
}

fn random_conv_spec(rng: &mut ChaCha8Rng) -> Conv3dSpec {
    loop {
        let spec = Conv3dSpec {
            c_in: rng.random_range(1..=3),
            c_out: rng.random_range(1..=3),
            input: [rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=5)],
            kernel: [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)],
            stride: [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)],
            padding: [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)],
        };
        if (0..3).all(|a| spec.kernel[a] <= spec.input[a] + 2 * spec.padding[a]) {
            return spec;
        }
    }
}

/// Conv3d gradient check. `use_sum` selects the plain `sum(output)` loss.
pub fn conv3d_with(spec: Conv3dSpec, seed: u64, use_sum: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_shape = [spec.c_in, spec.input[0], spec.input[1], spec.input[2]];
    let k_shape = [spec.c_out, spec.c_in, spec.kernel[0], spec.kernel[1], spec.kernel[2]];
    let x = r::uniform(&mut rng, in_shape.iter().product());
    let w = r::uniform(&mut rng, k_shape.iter().product());
    let b = r::uniform(&mut rng, spec.c_out);
    let [od, oh, ow] = spec.output();
    let out_len = spec.c_out * od * oh * ow;
    let proj = if use_sum {
        vec![1.0f32; out_len]
    } else {
        r::uniform(&mut rng, out_len)
    };

    let mut g = Graph::new();
    let xv = g.param(tensor(&in_shape, x.clone()), "x");
    let wv = g.param(tensor(&k_shape, w.clone()), "w");
    let bv = g.param(tensor(&[spec.c_out], b.clone()), "b");
    let y = g.conv3d(xv, wv, Some(bv), spec.stride, spec.padding).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (x64, w64, b64, p64) = (r::widen(&x), r::widen(&w), r::widen(&b), r::widen(&proj));
    let nx = r::numeric_grad(&x64, |xx| r::dot(&p64, &r::conv3d(&spec, xx, &w64, Some(&b64))));
    let nw = r::numeric_grad(&w64, |ww| r::dot(&p64, &r::conv3d(&spec, &x64, ww, Some(&b64))));
    let nb = r::numeric_grad(&b64, |bb| r::dot(&p64, &r::conv3d(&spec, &x64, &w64, Some(bb))));
    r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR)
        .max(r::max_rel_error(g.grad(wv).unwrap(), &nw, FLOOR))
        .max(r::max_rel_error(g.grad(bv).unwrap(), &nb, FLOOR))
}

pub fn conv3d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0);
    let spec = random_conv_spec(&mut rng);
    conv3d_with(spec, seed, false)
}

pub fn conv1d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1);
    let c_in = rng.random_range(1..=4);
    let c_out = rng.random_range(1..=4);
    let t = rng.random_range(1..=12);
    let k = [1usize, 3, 5][rng.random_range(0..3)];
    let in_shape = [c_in, t];
    let k_shape = [c_out, c_in, k];
    let x = r::uniform(&mut rng, c_in * t);
    let w = r::uniform(&mut rng, c_out * c_in * k);
    let b = r::uniform(&mut rng, c_out);
    let proj = r::uniform(&mut rng, c_out * t);
    let spec = Conv3dSpec {
        c_in,
        c_out,
        input: [1, 1, t],
        kernel: [1, 1, k],
        stride: [1, 1, 1],
        padding: [0, 0, (k - 1) / 2],
    };

    let mut g = Graph::new();
    let xv = g.param(tensor(&in_shape, x.clone()), "x");
    let wv = g.param(tensor(&k_shape, w.clone()), "w");
    let bv = g.param(tensor(&[c_out], b.clone()), "b");
    let y = g.conv1d(xv, wv, Some(bv), 1, Padding1d::Same).unwrap();
    assert_eq!(g.shape(y), &[c_out, t]);
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (x64, w64, b64, p64) = (r::widen(&x), r::widen(&w), r::widen(&b), r::widen(&proj));
    let nx = r::numeric_grad(&x64, |xx| r::dot(&p64, &r::conv3d(&spec, xx, &w64, Some(&b64))));
    let nw = r::numeric_grad(&w64, |ww| r::dot(&p64, &r::conv3d(&spec, &x64, ww, Some(&b64))));
    let nb = r::numeric_grad(&b64, |bb| r::dot(&p64, &r::conv3d(&spec, &x64, &w64, Some(bb))));
    r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR)
        .max(r::max_rel_error(g.grad(wv).unwrap(), &nw, FLOOR))
        .max(r::max_rel_error(g.grad(bv).unwrap(), &nb, FLOOR))
}

pub fn maxpool3d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA0);
    let c = rng.random_range(1..=3);
    let input = [rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=5)];
    let window = [
        rng.random_range(1..=input[0].min(3)),
        rng.random_range(1..=input[1].min(3)),
        rng.random_range(1..=input[2].min(3)),
    ];
    let stride = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)];
    let vol: usize = input.iter().product();
    let x = r::distinct(&mut rng, c * vol, 0.01);
    let out_len: usize = c * (0..3).map(|a| (input[a] - window[a]) / stride[a] + 1).product::<usize>();
    let proj = r::uniform(&mut rng, out_len);

    let mut g = Graph::new();
    let xv = g.param(tensor(&[c, input[0], input[1], input[2]], x.clone()), "x");
    let y = g.maxpool3d(xv, window, stride).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (x64, p64) = (r::widen(&x), r::widen(&proj));
    let nx = r::numeric_grad(&x64, |xx| r::dot(&p64, &r::maxpool3d(c, input, window, stride, xx)));
    r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR)
}

pub fn avg_pool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA1);
    let c = rng.random_range(1..=4);
    let input = [rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4)];
    let vol: usize = input.iter().product();
    let x = r::uniform(&mut rng, c * vol);
    let proj = r::uniform(&mut rng, c);

    let mut g = Graph::new();
    let xv = g.param(tensor(&[c, input[0], input[1], input[2]], x.clone()), "x");
    let y = g.adaptive_avg_pool(xv).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (x64, p64) = (r::widen(&x), r::widen(&proj));
    let nx = r::numeric_grad(&x64, |xx| r::dot(&p64, &r::avg_pool(c, vol, xx)));
    r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR)
}

pub fn instance_norm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1E);
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let input = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=4)];
    let vol: usize = input.iter().product();
    let x = r::uniform(&mut rng, n * c * vol);
    let gamma: Vec<f32> = (0..c).map(|_| rng.random_range(0.5f32..1.5)).collect();
    let beta = r::uniform(&mut rng, c);
    let proj = r::uniform(&mut rng, n * c * vol);

    let mut g = Graph::new();
    let xv = g.param(tensor(&[n, c, input[0], input[1], input[2]], x.clone()), "x");
    let gv = g.param(tensor(&[c], gamma.clone()), "gamma");
    let bv = g.param(tensor(&[c], beta.clone()), "beta");
    let y = g.instance_norm(xv, gv, bv).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (x64, g64, b64, p64) = (r::widen(&x), r::widen(&gamma), r::widen(&beta), r::widen(&proj));
    let nx = r::numeric_grad(&x64, |xx| r::dot(&p64, &r::instance_norm(c, vol, xx, &g64, &b64)));
    let ng = r::numeric_grad(&g64, |gg| r::dot(&p64, &r::instance_norm(c, vol, &x64, gg, &b64)));
    let nb = r::numeric_grad(&b64, |bb| r::dot(&p64, &r::instance_norm(c, vol, &x64, &g64, bb)));
    r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR)
        .max(r::max_rel_error(g.grad(gv).unwrap(), &ng, FLOOR))
        .max(r::max_rel_error(g.grad(bv).unwrap(), &nb, FLOOR))
}

pub fn relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2E);
    let n = rng.random_range(1..=40);
    let x = r::away_from_zero(&mut rng, n, 0.01);
    let proj = r::uniform(&mut rng, n);

    let mut g = Graph::new();
    let xv = g.param(tensor(&[n], x.clone()), "x");
    let y = g.relu(xv).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (x64, p64) = (r::widen(&x), r::widen(&proj));
    let nx = r::numeric_grad(&x64, |xx| r::dot(&p64, &r::relu(xx)));
    r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR)
}

/// `relu(a) + b`, the residual join.
pub fn residual_add(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3E);
    let n = rng.random_range(1..=40);
    let a = r::away_from_zero(&mut rng, n, 0.01);
    let b = r::uniform(&mut rng, n);
    let proj = r::uniform(&mut rng, n);

    let mut g = Graph::new();
    let av = g.param(tensor(&[n], a.clone()), "a");
    let bv = g.param(tensor(&[n], b.clone()), "b");
    let ra = g.relu(av).unwrap();
    let y = g.add(ra, bv).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (a64, b64, p64) = (r::widen(&a), r::widen(&b), r::widen(&proj));
    let f = |aa: &[f64], bb: &[f64]| {
        let s: Vec<f64> = r::relu(aa).iter().zip(bb).map(|(x, y)| x + y).collect();
        r::dot(&p64, &s)
    };
    let na = r::numeric_grad(&a64, |aa| f(aa, &b64));
    let nb = r::numeric_grad(&b64, |bb| f(&a64, bb));
    r::max_rel_error(g.grad(av).unwrap(), &na, FLOOR).max(r::max_rel_error(g.grad(bv).unwrap(), &nb, FLOOR))
}

pub fn matvec(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4E);
    let (o, i) = (rng.random_range(1..=6), rng.random_range(1..=8));
    let w = r::uniform(&mut rng, o * i);
    let x = r::uniform(&mut rng, i);
    let b = r::uniform(&mut rng, o);
    let proj = r::uniform(&mut rng, o);

    let mut g = Graph::new();
    let wv = g.param(tensor(&[o, i], w.clone()), "w");
    let xv = g.param(tensor(&[i], x.clone()), "x");
    let bv = g.param(tensor(&[o], b.clone()), "b");
    let y = g.matvec(wv, xv, Some(bv)).unwrap();
    let loss = project(&mut g, y, &proj);
    g.backward(loss).unwrap();

    let (w64, x64, b64, p64) = (r::widen(&w), r::widen(&x), r::widen(&b), r::widen(&proj));
    let f = |ww: &[f64], xx: &[f64], bb: &[f64]| {
        let y: Vec<f64> = (0..o).map(|k| r::dot(&ww[k * i..(k + 1) * i], xx) + bb[k]).collect();
        r::dot(&p64, &y)
    };
    let nw = r::numeric_grad(&w64, |ww| f(ww, &x64, &b64));
    let nx = r::numeric_grad(&x64, |xx| f(&w64, xx, &b64));
    let nb = r::numeric_grad(&b64, |bb| f(&w64, &x64, bb));
    r::max_rel_error(g.grad(wv).unwrap(), &nw, FLOOR)
        .max(r::max_rel_error(g.grad(xv).unwrap(), &nx, FLOOR))
        .max(r::max_rel_error(g.grad(bv).unwrap(), &nb, FLOOR))
}

pub type Check = fn(u64) -> f64;

pub const PRIMITIVES: [(&str, Check); 8] = [
    ("conv3d", conv3d),
    ("conv1d", conv1d),
    ("maxpool3d", maxpool3d),
    ("adaptive_avg_pool", avg_pool),
    ("instance_norm", instance_norm),
    ("relu", relu),
    ("residual_add", residual_add),
    ("matvec", matvec),
];
