//! Numeric kernels behind the recorded primitives. Shapes are validated by
//! the caller.

use crate::tensor::Tensor;

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::raw(vec![n, m], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (n, m) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = ad[i * m + j];
        }
    }
    Tensor::raw(vec![m, n], out)
}

pub(crate) fn col_sum(a: &Tensor) -> Tensor {
    let (n, m) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m];
    for row in a.data().chunks_exact(m).take(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::raw(vec![m], out)
}

pub(crate) fn broadcast_rows(a: &Tensor, n: usize) -> Tensor {
    let m = a.len();
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(a.data());
    }
    Tensor::raw(vec![n, m], out)
}

pub(crate) fn row_sum(a: &Tensor) -> Tensor {
    let m = a.shape()[1];
    let out = a.data().chunks_exact(m).map(|r| r.iter().sum()).collect();
    Tensor::raw(vec![a.shape()[0]], out)
}

pub(crate) fn broadcast_cols(a: &Tensor, m: usize) -> Tensor {
    let n = a.len();
    let mut out = Vec::with_capacity(n * m);
    for &v in a.data() {
        out.extend(std::iter::repeat_n(v, m));
    }
    Tensor::raw(vec![n, m], out)
}

pub(crate) fn channel_sum(a: &Tensor) -> Tensor {
    let s = a.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; c];
    let d = a.data();
    for bi in 0..b {
        for (ci, o) in out.iter_mut().enumerate() {
            let off = (bi * c + ci) * hw;
            *o += d[off..off + hw].iter().sum::<f64>();
        }
    }
    Tensor::raw(vec![c], out)
}

pub(crate) fn broadcast_channels(a: &Tensor, shape: &[usize]) -> Tensor {
    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut out = Vec::with_capacity(b * c * hw);
    for _ in 0..b {
        for &v in a.data() {
            out.extend(std::iter::repeat_n(v, hw));
        }
    }
    Tensor::raw(shape.to_vec(), out)
}

/// Output positions `i` in `0..n` with `i + d` also in `0..n`.
fn span(n: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    lo.min(hi)..hi
}

/// Same-padding, unit-stride cross-correlation.
/// x: [B, Ci, H, W], w: [Co, Ci, kh, kw] -> [B, Co, H, W]
pub(crate) fn conv2d(x: &Tensor, w: &Tensor) -> Tensor {
    let [b, ci, h, wd] = dims4(x);
    let [co, _, kh, kw] = dims4(w);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (xd, wdata) = (x.data(), w.data());
    let mut out = vec![0.0; b * co * h * wd];
    for bi in 0..b {
        for o in 0..co {
            let obase = (bi * co + o) * h * wd;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * wd;
                for u in 0..kh {
                    let di = u as isize - ph;
                    for v in 0..kw {
                        let wv = wdata[((o * ci + c) * kh + u) * kw + v];
                        let dj = v as isize - pw;
                        let cols = span(wd, dj);
                        let shift = (cols.start as isize + dj) as usize;
                        for i in span(h, di) {
                            let xrow = xbase + (i as isize + di) as usize * wd + shift;
                            let orow = obase + i * wd + cols.start;
                            let src = &xd[xrow..xrow + cols.len()];
                            for (y, &xv) in out[orow..orow + cols.len()].iter_mut().zip(src) {
                                *y += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::raw(vec![b, co, h, wd], out)
}

/// Adjoint of `conv2d` in its input. gy: [B, Co, H, W], w: [Co, Ci, kh, kw]
/// -> [B, Ci, H, W]
pub(crate) fn conv2d_input_grad(gy: &Tensor, w: &Tensor) -> Tensor {
    let [b, co, h, wd] = dims4(gy);
    let [_, ci, kh, kw] = dims4(w);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (gd, wdata) = (gy.data(), w.data());
    let mut out = vec![0.0; b * ci * h * wd];
    for bi in 0..b {
        for o in 0..co {
            let gbase = (bi * co + o) * h * wd;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * wd;
                for u in 0..kh {
                    let di = u as isize - ph;
                    for v in 0..kw {
                        let wv = wdata[((o * ci + c) * kh + u) * kw + v];
                        let dj = v as isize - pw;
                        let cols = span(wd, dj);
                        let shift = (cols.start as isize + dj) as usize;
                        for i in span(h, di) {
                            let xrow = xbase + (i as isize + di) as usize * wd + shift;
                            let grow = gbase + i * wd + cols.start;
                            let src = &gd[grow..grow + cols.len()];
                            for (y, &g) in out[xrow..xrow + cols.len()].iter_mut().zip(src) {
                                *y += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::raw(vec![b, ci, h, wd], out)
}

/// Adjoint of `conv2d` in its kernel. x: [B, Ci, H, W], gy: [B, Co, H, W]
/// -> [Co, Ci, kh, kw]
pub(crate) fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, kernel: [usize; 2]) -> Tensor {
    let [b, ci, h, wd] = dims4(x);
    let co = gy.shape()[1];
    let [kh, kw] = kernel;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (xd, gd) = (x.data(), gy.data());
    let mut out = vec![0.0; co * ci * kh * kw];
    for bi in 0..b {
        for o in 0..co {
            let gbase = (bi * co + o) * h * wd;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * wd;
                for u in 0..kh {
                    let di = u as isize - ph;
                    for v in 0..kw {
                        let dj = v as isize - pw;
                        let cols = span(wd, dj);
                        let shift = (cols.start as isize + dj) as usize;
                        let mut acc = 0.0;
                        for i in span(h, di) {
                            let xrow = xbase + (i as isize + di) as usize * wd + shift;
                            let grow = gbase + i * wd + cols.start;
                            let xs = &xd[xrow..xrow + cols.len()];
                            for (&g, &xv) in gd[grow..grow + cols.len()].iter().zip(xs) {
                                acc += g * xv;
                            }
                        }
                        out[((o * ci + c) * kh + u) * kw + v] += acc;
                    }
                }
            }
        }
    }
    Tensor::raw(vec![co, ci, kh, kw], out)
}

/// 2x2 mean pooling; a trailing odd row/column is dropped.
pub(crate) fn avg_pool2(a: &Tensor) -> Tensor {
    let [b, c, h, w] = dims4(a);
    let (ho, wo) = (h / 2, w / 2);
    let d = a.data();
    let mut out = vec![0.0; b * c * ho * wo];
    for p in 0..b * c {
        let ib = p * h * w;
        let ob = p * ho * wo;
        for i in 0..ho {
            for j in 0..wo {
                let r0 = ib + 2 * i * w + 2 * j;
                let r1 = r0 + w;
                out[ob + i * wo + j] = 0.25 * (d[r0] + d[r0 + 1] + d[r1] + d[r1 + 1]);
            }
        }
    }
    Tensor::raw(vec![b, c, ho, wo], out)
}

/// Adjoint of `avg_pool2`: spreads each value over its 2x2 block, scaled by 1/4.
pub(crate) fn unpool2(a: &Tensor, target: &[usize]) -> Tensor {
    let [b, c, ho, wo] = dims4(a);
    let (h, w) = (target[2], target[3]);
    let d = a.data();
    let mut out = vec![0.0; b * c * h * w];
    for p in 0..b * c {
        let ib = p * ho * wo;
        let ob = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let v = 0.25 * d[ib + i * wo + j];
                let r0 = ob + 2 * i * w + 2 * j;
                let r1 = r0 + w;
                out[r0] = v;
                out[r0 + 1] = v;
                out[r1] = v;
                out[r1 + 1] = v;
            }
        }
    }
    Tensor::raw(target.to_vec(), out)
}

pub(crate) fn softmax_rows(a: &Tensor) -> Tensor {
    let m = a.shape()[1];
    let mut out = Vec::with_capacity(a.len());
    for row in a.data().chunks_exact(m) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut z = 0.0;
        for &v in row {
            let e = (v - max).exp();
            z += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= z;
        }
    }
    Tensor::raw(a.shape().to_vec(), out)
}

pub(crate) fn logsumexp_rows(a: &Tensor) -> Tensor {
    let m = a.shape()[1];
    let out = a
        .data()
        .chunks_exact(m)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect();
    Tensor::raw(vec![a.shape()[0]], out)
}

pub(crate) fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}
