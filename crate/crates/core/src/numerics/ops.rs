//! Value-level kernels shared by the autodiff graph.
//!
//! Each forward kernel here is a plain function of [`Tensor`]s. The matching
//! backward kernels take the upstream gradient and return gradients for the
//! inputs; the graph wires them together.

use crate::error::{NorError, Result};
use crate::numerics::Tensor;

/// Spatial size of every convolution kernel.
pub const KERNEL: usize = 3;
const PAD: isize = 1;

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(NorError::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// 3×3 convolution, stride 1, zero padding 1.
///
/// `input` is `[C_in, H, W]`, `kernels` is `[C_out, C_in, 3, 3]`, `bias` is
/// `[C_out]`; the output is `[C_out, H, W]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", kernels, 4)?;
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ks = kernels.shape();
    if ks[1] != cin || ks[2] != KERNEL || ks[3] != KERNEL {
        return Err(NorError::shape(
            "conv2d",
            format!(
                "kernels {:?} do not fit input {:?} (need [C_out, {cin}, 3, 3])",
                ks,
                input.shape()
            ),
        ));
    }
    let cout = ks[0];
    if bias.shape() != [cout] {
        return Err(NorError::shape(
            "conv2d",
            format!("bias {:?} does not match {cout} output channels", bias.shape()),
        ));
    }

    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; cout * h * w];
    for co in 0..cout {
        let plane = &mut out[co * h * w..(co + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = bias.data()[co]);
        for ci in 0..cin {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = k[((co * cin + ci) * KERNEL + ky) * KERNEL + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - PAD;
                    let dx = kx as isize - PAD;
                    let (x0, x1) = valid_range(w, dx);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        let orow = &mut plane[y * w..(y + 1) * w];
                        for xo in x0..x1 {
                            orow[xo] += wv * srow[(xo as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// Output columns `xo` whose shifted source column `xo + dx` lies inside `[0, w)`.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).min(w as isize).max(0) as usize;
    (lo.min(w), hi)
}

/// Gradients of [`conv2d`] with respect to input, kernels and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let cout = kernels.shape()[0];
    let x = input.data();
    let k = kernels.data();
    let go = grad_out.data();

    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; cout];

    for co in 0..cout {
        let gplane = &go[co * h * w..(co + 1) * h * w];
        gb[co] = gplane.iter().sum();
        for ci in 0..cin {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let gsrc = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((co * cin + ci) * KERNEL + ky) * KERNEL + kx;
                    let wv = k[widx];
                    let dy = ky as isize - PAD;
                    let dx = kx as isize - PAD;
                    let (x0, x1) = valid_range(w, dx);
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let grow = &gplane[y * w..(y + 1) * w];
                        for xo in x0..x1 {
                            let sx = (xo as isize + dx) as usize;
                            acc += grow[xo] * src[sy * w + sx];
                            gsrc[sy * w + sx] += wv * grow[xo];
                        }
                    }
                    gk[widx] += acc;
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).expect("shape"),
        Tensor::new(kernels.shape().to_vec(), gk).expect("shape"),
        Tensor::vector(gb),
    )
}

/// Non-overlapping max pooling with a square `window` (stride equals window).
///
/// Returns the pooled `[C, H/window, W/window]` tensor together with the flat
/// input index of each selected maximum. Ties resolve to the first element in
/// row-major scan order of the window.
pub fn max_pool2d(input: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    expect_rank("max_pool2d", input, 3)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(NorError::shape(
            "max_pool2d",
            format!("spatial dims {h}x{w} are not divisible by window {window}"),
        ));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = ch * h * w + oy * window * w + ox * window;
                let mut best = x[best_idx];
                for dy in 0..window {
                    let row = ch * h * w + (oy * window + dy) * w + ox * window;
                    for dx in 0..window {
                        if x[row + dx] > best {
                            best = x[row + dx];
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

/// Mean over the rows of an `[L, D]` region matrix.
pub fn global_avg_pool(regions: &Tensor) -> Result<Tensor> {
    expect_rank("global_avg_pool", regions, 2)?;
    let (l, d) = (regions.shape()[0], regions.shape()[1]);
    let mut out = vec![0.0; d];
    for i in 0..l {
        for (o, v) in out.iter_mut().zip(regions.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / l as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor::vector(out))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

/// `w · x` for `w: [rows, cols]`, `x: [cols]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.rank() != 1 || w.shape()[1] != x.len() {
        return Err(NorError::shape(
            "matvec",
            format!("{:?} x {:?}", w.shape(), x.shape()),
        ));
    }
    let cols = w.shape()[1];
    let out = w
        .data()
        .chunks_exact(cols)
        .map(|row| dot(row, x.data()))
        .collect();
    Ok(Tensor::vector(out))
}

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(NorError::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    expect_rank("transpose", a, 2)?;
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
