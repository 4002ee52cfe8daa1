//! Raw forward/backward kernels on flat channel-major buffers.
//!
//! Every kernel splits its output into per-channel chunks, so the
//! sequential and parallel strategies of [`Exec`] are bit-identical.

use crate::par::Exec;

/// Valid cross-correlation: `x` is `ci×h×w`, `wt` is `co×ci×k×k`.
pub fn conv2d_forward(
    exec: Exec,
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    co: usize,
    k: usize,
    bias: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut out = vec![0.0; co * oh * ow];
    exec.for_each_chunk_mut(&mut out, oh * ow, |o, plane| {
        plane.fill(bias[o]);
        for c in 0..ci {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((o * ci + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let s = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let d = &mut plane[y * ow..(y + 1) * ow];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `g` (`co×oh×ow`).
/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    exec: Exec,
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    co: usize,
    k: usize,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut dx = vec![0.0; ci * h * w];
    exec.for_each_chunk_mut(&mut dx, h * w, |c, plane| {
        for o in 0..co {
            let go = &g[o * oh * ow..(o + 1) * oh * ow];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((o * ci + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let d = &mut plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        for (dv, gv) in d.iter_mut().zip(&go[y * ow..(y + 1) * ow]) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; co * ci * k * k];
    exec.for_each_chunk_mut(&mut dw, ci * k * k, |o, block| {
        let go = &g[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..ci {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let s = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        acc += s.iter().zip(&go[y * ow..(y + 1) * ow]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    block[(c * k + ky) * k + kx] = acc;
                }
            }
        }
    });

    let db = (0..co).map(|o| g[o * oh * ow..(o + 1) * oh * ow].iter().sum()).collect();
    (dx, dw, db)
}

/// 2×2 stride-2 transposed convolution: `x` is `ci×h×w`, `wt` is `ci×co×2×2`.
pub fn upconv2_forward(
    exec: Exec,
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    co: usize,
    bias: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; co * oh * ow];
    exec.for_each_chunk_mut(&mut out, oh * ow, |o, plane| {
        plane.fill(bias[o]);
        for c in 0..ci {
            let src = &x[c * h * w..(c + 1) * h * w];
            for dy in 0..2 {
                for dx in 0..2 {
                    let wv = wt[((c * co + o) * 2 + dy) * 2 + dx];
                    for y in 0..h {
                        let row = &mut plane[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        for (xx, &sv) in src[y * w..(y + 1) * w].iter().enumerate() {
                            row[2 * xx + dx] += wv * sv;
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn upconv2_backward(
    exec: Exec,
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    co: usize,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; ci * h * w];
    exec.for_each_chunk_mut(&mut dx, h * w, |c, plane| {
        for o in 0..co {
            let go = &g[o * oh * ow..(o + 1) * oh * ow];
            for dy in 0..2 {
                for ddx in 0..2 {
                    let wv = wt[((c * co + o) * 2 + dy) * 2 + ddx];
                    for y in 0..h {
                        let grow = &go[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        for (xx, d) in plane[y * w..(y + 1) * w].iter_mut().enumerate() {
                            *d += wv * grow[2 * xx + ddx];
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; ci * co * 4];
    exec.for_each_chunk_mut(&mut dw, co * 4, |c, block| {
        let src = &x[c * h * w..(c + 1) * h * w];
        for o in 0..co {
            let go = &g[o * oh * ow..(o + 1) * oh * ow];
            for dy in 0..2 {
                for ddx in 0..2 {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let grow = &go[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        for (xx, &sv) in src[y * w..(y + 1) * w].iter().enumerate() {
                            acc += sv * grow[2 * xx + ddx];
                        }
                    }
                    block[(o * 2 + dy) * 2 + ddx] = acc;
                }
            }
        }
    });

    let db = (0..co).map(|o| g[o * oh * ow..(o + 1) * oh * ow].iter().sum()).collect();
    (dx, dw, db)
}

/// 2×2 max pooling. Returns values and, per output, the flat input index of
/// the first maximal element in row-major window order.
pub fn maxpool2_forward(exec: Exec, x: &[f64], (c, h, w): (usize, usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut arg = vec![0usize; c * oh * ow];
    exec.for_each_chunk_mut(&mut arg, oh * ow, |ch, plane| {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                plane[y * ow + xx] = best;
            }
        }
    });
    let out = arg.iter().map(|&i| x[i]).collect();
    (out, arg)
}
