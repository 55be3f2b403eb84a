//! Elementwise, reduction and structural primitives.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Border handling for padding and stencil primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero,
    Edge,
    Wrap,
}

fn same_shape(tape: &Tape, a: Var, b: Var, op: &str) {
    assert_eq!(tape.shape(a), tape.shape(b), "{op}: operand shapes differ");
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.record("add", &[a, b], v, |_, _, g, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.record("sub", &[a, b], v, |_, _, g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.scaled(-1.0))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.record("mul", &[a, b], v, |ins, _, g, needs| {
            vec![needs[0].then(|| g.zip_map(ins[1], |g, y| g * y)), needs[1].then(|| g.zip_map(ins[0], |g, x| g * x))]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "div");
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.record("div", &[a, b], v, |ins, out, g, needs| {
            vec![
                needs[0].then(|| g.zip_map(ins[1], |g, y| g / y)),
                needs[1].then(|| {
                    let gy = g.zip_map(out, |g, q| g * q);
                    gy.zip_map(ins[1], |gq, y| -gq / y)
                }),
            ]
        })
    }

    /// Sum of several equally shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_all of nothing");
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scaled(c);
        self.record("scale", &[a], v, move |_, _, g, _| vec![Some(g.scaled(c))])
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.record("offset", &[a], v, |_, _, g, _| vec![Some(g.clone())])
    }

    /// `a * s` for a scalar variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert!(self.value(s).is_scalar(), "mul_scalar: s must be scalar");
        let sv = self.scalar(s);
        let v = self.value(a).scaled(sv);
        self.record("mul_scalar", &[a, s], v, move |ins, _, g, needs| {
            let sshape = ins[1].shape().to_vec();
            vec![needs[0].then(|| g.scaled(sv)), needs[1].then(|| Tensor::full(&sshape, g.dot(ins[0])))]
        })
    }

    /// `a + s` for a scalar variable `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        assert!(self.value(s).is_scalar(), "add_scalar: s must be scalar");
        let sv = self.scalar(s);
        let v = self.value(a).map(|x| x + sv);
        self.record("add_scalar", &[a, s], v, |ins, _, g, needs| {
            let sshape = ins[1].shape().to_vec();
            vec![needs[0].then(|| g.clone()), needs[1].then(|| Tensor::full(&sshape, g.sum()))]
        })
    }

    /// Broadcasts a scalar variable to `shape`.
    pub fn expand(&mut self, s: Var, shape: &[usize]) -> Var {
        assert!(self.value(s).is_scalar(), "expand: source must be scalar");
        let v = Tensor::full(shape, self.scalar(s));
        self.record("expand", &[s], v, |ins, _, g, _| vec![Some(Tensor::full(ins[0].shape(), g.sum()))])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        self.record(name, &[a], v, move |ins, out, g, _| {
            let d: Vec<f64> =
                g.data().iter().zip(ins[0].data()).zip(out.data()).map(|((g, &x), &y)| g * df(x, y)).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), d))]
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary("square", a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary("sqrt", a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary("exp", a, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary("ln", a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary("sin", a, f64::sin, |x, _| x.cos())
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary("cos", a, f64::cos, |x, _| -x.sin())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary("tanh", a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary("sigmoid", a, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(
            "silu",
            a,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.record("sum", &[a], v, |ins, _, g, _| vec![Some(Tensor::full(ins[0].shape(), g.item()))])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "dot");
        let v = Tensor::scalar(self.value(a).dot(self.value(b)));
        self.record("dot", &[a, b], v, |ins, _, g, needs| {
            let g = g.item();
            vec![needs[0].then(|| ins[1].scaled(g)), needs[1].then(|| ins[0].scaled(g))]
        })
    }

    /// `sum(w * r^2)`.
    pub fn weighted_square_sum(&mut self, r: Var, w: Var) -> Var {
        same_shape(self, r, w, "weighted_square_sum");
        let s: f64 = self.value(r).data().iter().zip(self.value(w).data()).map(|(r, w)| w * r * r).sum();
        self.record("weighted_square_sum", &[r, w], Tensor::scalar(s), |ins, _, g, needs| {
            let g = g.item();
            vec![
                needs[0].then(|| ins[0].zip_map(ins[1], |r, w| 2.0 * g * w * r)),
                needs[1].then(|| ins[0].map(|r| g * r * r)),
            ]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape);
        self.record("reshape", &[a], v, |ins, _, g, _| vec![Some(g.clone().reshape(ins[0].shape()))])
    }

    /// Window `[r0, r0+h) x [c0, c0+w)` over the last two axes.
    pub fn crop2d(&mut self, a: Var, r0: usize, c0: usize, h: usize, w: usize) -> Var {
        let x = self.value(a);
        let (hh, ww) = x.dims2();
        assert!(r0 + h <= hh && c0 + w <= ww, "crop2d window out of range");
        let lead = x.len() / (hh * ww);
        let mut out = Vec::with_capacity(lead * h * w);
        for l in 0..lead {
            for r in 0..h {
                let base = (l * hh + r0 + r) * ww + c0;
                out.extend_from_slice(&x.data()[base..base + w]);
            }
        }
        let mut shape = x.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = h;
        shape[n - 1] = w;
        self.record("crop2d", &[a], Tensor::new(shape, out), move |ins, _, g, _| {
            let mut gi = Tensor::zeros(ins[0].shape());
            let d = gi.data_mut();
            for l in 0..lead {
                for r in 0..h {
                    let base = (l * hh + r0 + r) * ww + c0;
                    let src = &g.data()[(l * h + r) * w..(l * h + r + 1) * w];
                    for (o, s) in d[base..base + w].iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
            vec![Some(gi)]
        })
    }

    /// Pads the last two axes by `(top, bottom, left, right)`.
    pub fn pad2d(&mut self, a: Var, pads: (usize, usize, usize, usize), mode: Padding) -> Var {
        let x = self.value(a);
        let (h, w) = x.dims2();
        let (top, bottom, left, right) = pads;
        let (ho, wo) = (h + top + bottom, w + left + right);
        let lead = x.len() / (h * w);
        let index = move |r: usize, c: usize| -> Option<(usize, usize)> {
            let rr = r as isize - top as isize;
            let cc = c as isize - left as isize;
            let map = |i: isize, n: usize| -> Option<usize> {
                if (0..n as isize).contains(&i) {
                    Some(i as usize)
                } else {
                    match mode {
                        Padding::Zero => None,
                        Padding::Edge => Some(i.clamp(0, n as isize - 1) as usize),
                        Padding::Wrap => Some(i.rem_euclid(n as isize) as usize),
                    }
                }
            };
            Some((map(rr, h)?, map(cc, w)?))
        };
        let mut out = vec![0.0; lead * ho * wo];
        for l in 0..lead {
            for r in 0..ho {
                for c in 0..wo {
                    if let Some((sr, sc)) = index(r, c) {
                        out[(l * ho + r) * wo + c] = x.data()[(l * h + sr) * w + sc];
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = ho;
        shape[n - 1] = wo;
        self.record("pad2d", &[a], Tensor::new(shape, out), move |ins, _, g, _| {
            let mut gi = Tensor::zeros(ins[0].shape());
            let d = gi.data_mut();
            for l in 0..lead {
                for r in 0..ho {
                    for c in 0..wo {
                        if let Some((sr, sc)) = index(r, c) {
                            d[(l * h + sr) * w + sc] += g.data()[(l * ho + r) * wo + c];
                        }
                    }
                }
            }
            vec![Some(gi)]
        })
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Var {
        assert!(!vars.is_empty());
        let first = self.shape(vars[0]).to_vec();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let sizes: Vec<usize> = vars
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert_eq!(s.len(), first.len(), "concat rank mismatch");
                assert!(s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..], "concat shape mismatch");
                s[axis]
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &n) in vars.iter().zip(&sizes) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.record("concat", vars, Tensor::new(shape, out), move |ins, _, g, needs| {
            let mut offset = 0;
            sizes
                .iter()
                .zip(needs)
                .zip(ins)
                .map(|((&n, &need), inp)| {
                    let start = offset;
                    offset += n;
                    need.then(|| {
                        let mut gi = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            gi.extend_from_slice(&g.data()[base..base + n * inner]);
                        }
                        Tensor::new(inp.shape().to_vec(), gi)
                    })
                })
                .collect()
        })
    }

    /// Flat gather: `out[i] = a[idx[i]]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let out: Vec<f64> = idx.iter().map(|&i| x.data()[i]).collect();
        let idx = idx.to_vec();
        self.record("gather", &[a], Tensor::vector(out), move |ins, _, g, _| {
            let mut gi = Tensor::zeros(ins[0].shape());
            for (&i, gv) in idx.iter().zip(g.data()) {
                gi.data_mut()[i] += gv;
            }
            vec![Some(gi)]
        })
    }

    /// Flat scatter-add into a zero vector of `len` entries: `out[idx[i]] += a[i]`.
    pub fn scatter_add(&mut self, a: Var, idx: &[usize], len: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), idx.len(), "scatter_add index length");
        let mut out = vec![0.0; len];
        for (&i, v) in idx.iter().zip(x.data()) {
            out[i] += v;
        }
        let idx = idx.to_vec();
        self.record("scatter_add", &[a], Tensor::vector(out), move |ins, _, g, _| {
            let d: Vec<f64> = idx.iter().map(|&i| g.data()[i]).collect();
            vec![Some(Tensor::new(ins[0].shape().to_vec(), d))]
        })
    }

    /// Rows of a `[n, d]` matrix.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let shape = self.shape(a).to_vec();
        assert_eq!(shape.len(), 2, "select_rows expects [n, d]");
        let d = shape[1];
        let idx: Vec<usize> = rows.iter().flat_map(|&r| (0..d).map(move |j| r * d + j)).collect();
        let flat = self.gather(a, &idx);
        self.reshape(flat, &[rows.len(), d])
    }

    /// Column `j` of a `[n, d]` matrix as a length-`n` vector.
    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let shape = self.shape(a).to_vec();
        assert_eq!(shape.len(), 2, "column expects [n, d]");
        let idx: Vec<usize> = (0..shape[0]).map(|i| i * shape[1] + j).collect();
        self.gather(a, &idx)
    }

    /// Inverse of [`Tape::column`]: stacks equal-length vectors into `[n, cols.len()]`.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Var {
        let n = self.value(cols[0]).len();
        let d = cols.len();
        let mut parts = Vec::with_capacity(d);
        for (j, &c) in cols.iter().enumerate() {
            assert_eq!(self.value(c).len(), n, "stack_columns length mismatch");
            let idx: Vec<usize> = (0..n).map(|i| i * d + j).collect();
            parts.push(self.scatter_add(c, &idx, n * d));
        }
        let s = self.add_all(&parts);
        self.reshape(s, &[n, d])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
