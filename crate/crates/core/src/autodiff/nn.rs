//! Convolutional primitives on `[n, c, h, w]` fields.

use super::ops::Padding;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Index of padded coordinate `i` (offset by `r`) in an axis of length `n`.
fn source_index(i: isize, n: usize, mode: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        Padding::Zero => None,
        Padding::Edge => Some(i.clamp(0, n as isize - 1) as usize),
        Padding::Wrap => Some(i.rem_euclid(n as isize) as usize),
    }
}

/// Copies each `[h, w]` plane into a `[h+2r, w+2r]` plane with the given border.
fn pad_planes(x: &[f64], planes: usize, h: usize, w: usize, r: usize, mode: Padding) -> Vec<f64> {
    let (hp, wp) = (h + 2 * r, w + 2 * r);
    let mut out = vec![0.0; planes * hp * wp];
    let cols: Vec<Option<usize>> = (0..wp).map(|c| source_index(c as isize - r as isize, w, mode)).collect();
    for p in 0..planes {
        for rp in 0..hp {
            let Some(sr) = source_index(rp as isize - r as isize, h, mode) else { continue };
            let src = &x[(p * h + sr) * w..(p * h + sr + 1) * w];
            let dst = &mut out[(p * hp + rp) * wp..(p * hp + rp + 1) * wp];
            dst[r..r + w].copy_from_slice(src);
            if r > 0 {
                for (c, s) in cols.iter().enumerate() {
                    if c < r || c >= r + w {
                        if let Some(sc) = s {
                            dst[c] = src[*sc];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad_planes`].
fn unpad_planes(g: &[f64], planes: usize, h: usize, w: usize, r: usize, mode: Padding) -> Vec<f64> {
    let (hp, wp) = (h + 2 * r, w + 2 * r);
    let mut out = vec![0.0; planes * h * w];
    let cols: Vec<Option<usize>> = (0..wp).map(|c| source_index(c as isize - r as isize, w, mode)).collect();
    for p in 0..planes {
        for rp in 0..hp {
            let Some(sr) = source_index(rp as isize - r as isize, h, mode) else { continue };
            let src = &g[(p * hp + rp) * wp..(p * hp + rp + 1) * wp];
            let dst = &mut out[(p * h + sr) * w..(p * h + sr + 1) * w];
            for (d, s) in dst.iter_mut().zip(&src[r..r + w]) {
                *d += s;
            }
            if r > 0 {
                for (c, s) in cols.iter().enumerate() {
                    if c < r || c >= r + w {
                        if let Some(sc) = s {
                            dst[*sc] += src[c];
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += x[4 * i + k] * y[4 * i + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..x.len() {
        s += x[i] * y[i];
    }
    s
}

impl Tape {
    /// "Same" 2D convolution with odd square kernels: `x [n,c,h,w]`, `w [o,c,k,k]`, `b [o]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, mode: Padding) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be [n,c,h,w]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [o,c,k,k]");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv2d channel mismatch");
        assert!(ws[2] == ws[3] && k % 2 == 1, "conv2d kernel must be odd and square");
        assert_eq!(self.shape(bias), &[o], "conv2d bias shape");
        let r = k / 2;
        let (hp, wp) = (h + 2 * r, w + 2 * r);
        let padded = pad_planes(self.value(x).data(), n * c, h, w, r, mode);
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        let mut out = vec![0.0; n * o * h * w];
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..h {
                    let row = &mut out[((ni * o + oi) * h + y) * w..((ni * o + oi) * h + y + 1) * w];
                    row.fill(bv[oi]);
                    for ci in 0..c {
                        let plane = &padded[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
                        for ky in 0..k {
                            let prow = &plane[(y + ky) * wp..(y + ky + 1) * wp];
                            for kx in 0..k {
                                let wk = wv[((oi * c + ci) * k + ky) * k + kx];
                                axpy(row, wk, &prow[kx..kx + w]);
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, o, h, w], out);
        self.record("conv2d", &[x, weight, bias], value, move |ins, _, g, needs| {
            let gd = g.data();
            let wv = ins[1].data();
            let gx = needs[0].then(|| {
                let mut gp = vec![0.0; n * c * hp * wp];
                for ni in 0..n {
                    for oi in 0..o {
                        for y in 0..h {
                            let grow = &gd[((ni * o + oi) * h + y) * w..((ni * o + oi) * h + y + 1) * w];
                            for ci in 0..c {
                                let plane = &mut gp[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
                                for ky in 0..k {
                                    let prow = &mut plane[(y + ky) * wp..(y + ky + 1) * wp];
                                    for kx in 0..k {
                                        let wk = wv[((oi * c + ci) * k + ky) * k + kx];
                                        axpy(&mut prow[kx..kx + w], wk, grow);
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::new(vec![n, c, h, w], unpad_planes(&gp, n * c, h, w, r, mode))
            });
            let gw = needs[1].then(|| {
                let padded = pad_planes(ins[0].data(), n * c, h, w, r, mode);
                let mut gw = vec![0.0; o * c * k * k];
                for ni in 0..n {
                    for oi in 0..o {
                        for ci in 0..c {
                            let plane = &padded[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
                            for ky in 0..k {
                                for kx in 0..k {
                                    let mut s = 0.0;
                                    for y in 0..h {
                                        let grow = &gd[((ni * o + oi) * h + y) * w..((ni * o + oi) * h + y + 1) * w];
                                        let prow = &plane[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                                        s += dot(grow, prow);
                                    }
                                    gw[((oi * c + ci) * k + ky) * k + kx] += s;
                                }
                            }
                        }
                    }
                }
                Tensor::new(vec![o, c, k, k], gw)
            });
            let gb = needs[2].then(|| {
                let mut gb = vec![0.0; o];
                for ni in 0..n {
                    for (oi, b) in gb.iter_mut().enumerate() {
                        *b += gd[(ni * o + oi) * h * w..(ni * o + oi + 1) * h * w].iter().sum::<f64>();
                    }
                }
                Tensor::vector(gb)
            });
            vec![gx, gw, gb]
        })
    }

    /// 2x2 average pooling on the last two axes; odd sizes keep a partial last window.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (h, w) = xv.dims2();
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let planes = xv.len() / (h * w);
        let mut out = vec![0.0; planes * h2 * w2];
        let count = move |i: usize, j: usize| ((2 * i + 2).min(h) - 2 * i) * ((2 * j + 2).min(w) - 2 * j);
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * h2 + y / 2) * w2 + xx / 2] += xv.data()[(p * h + y) * w + xx];
                }
            }
            for i in 0..h2 {
                for j in 0..w2 {
                    out[(p * h2 + i) * w2 + j] /= count(i, j) as f64;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] = h2;
        shape[nd - 1] = w2;
        self.record("avg_pool2", &[x], Tensor::new(shape, out), move |ins, _, g, _| {
            let mut gi = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        let (i, j) = (y / 2, xx / 2);
                        gi[(p * h + y) * w + xx] = g.data()[(p * h2 + i) * w2 + j] / count(i, j) as f64;
                    }
                }
            }
            vec![Some(Tensor::new(ins[0].shape().to_vec(), gi))]
        })
    }

    /// Bilinear 2x upsampling of the last two axes to exactly `(th, tw)`.
    ///
    /// Output index `o` samples source coordinate `o/2 - 1/4`, the inverse of
    /// [`Tape::avg_pool2`]'s window layout. With `wrap` the border samples wrap
    /// around instead of clamping.
    pub fn upsample2(&mut self, x: Var, th: usize, tw: usize, wrap: bool) -> Var {
        let xv = self.value(x);
        let (h, w) = xv.dims2();
        let planes = xv.len() / (h * w);
        let ty = axis_taps(th, h, wrap);
        let tx = axis_taps(tw, w, wrap);
        let mut out = vec![0.0; planes * th * tw];
        for p in 0..planes {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = |yy: usize, xx: usize| xv.data()[(p * h + yy) * w + xx];
                    out[(p * th + oy) * tw + ox] = (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
                        + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1));
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] = th;
        shape[nd - 1] = tw;
        self.record("upsample2", &[x], Tensor::new(shape, out), move |ins, _, g, _| {
            let mut gi = vec![0.0; planes * h * w];
            for p in 0..planes {
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = g.data()[(p * th + oy) * tw + ox];
                        gi[(p * h + y0) * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        gi[(p * h + y0) * w + x1] += gv * (1.0 - fy) * fx;
                        gi[(p * h + y1) * w + x0] += gv * fy * (1.0 - fx);
                        gi[(p * h + y1) * w + x1] += gv * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::new(ins[0].shape().to_vec(), gi))]
        })
    }
}

fn axis_taps(target: usize, source: usize, wrap: bool) -> Vec<(usize, usize, f64)> {
    (0..target)
        .map(|o| {
            let s = o as f64 / 2.0 - 0.25;
            let i0 = s.floor();
            let f = s - i0;
            let map = |i: isize| {
                if wrap {
                    i.rem_euclid(source as isize) as usize
                } else {
                    i.clamp(0, source as isize - 1) as usize
                }
            };
            (map(i0 as isize), map(i0 as isize + 1), f)
        })
        .collect()
}
