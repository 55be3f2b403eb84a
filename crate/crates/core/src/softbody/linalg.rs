//! Symmetric banded factorization with a dense fallback.

use nalgebra::{DMatrix, DVector};

/// Symmetric matrix storing the lower band: `(i, j)` with `0 <= i - j <= bw`.
#[derive(Clone, Debug)]
pub(crate) struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> BandedSym {
        BandedSym { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    /// Adds to the symmetric pair `(i, j)` and `(j, i)`; call once per unordered pair.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(r - c <= self.bw, "entry outside band");
        self.data[r * (self.bw + 1) + (r - c)] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[r * (self.bw + 1) + (r - c)]
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `L D L^T` without pivoting; `None` when a pivot is tiny relative to the diagonal.
    fn ldlt(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let scale = (0..n).map(|i| self.data[i * w].abs()).fold(0.0, f64::max);
        let mut l = self.data.clone();
        let mut d = vec![0.0; n];
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut dj = l[j * w];
            for k in lo..j {
                let ljk = l[j * w + (j - k)];
                dj -= ljk * ljk * d[k];
            }
            if !(dj.abs() > 1e-13 * scale) {
                return None;
            }
            d[j] = dj;
            for i in j + 1..(j + w).min(n) {
                let lo_i = i.saturating_sub(bw);
                let mut v = l[i * w + (i - j)];
                for k in lo_i.max(lo)..j {
                    v -= l[i * w + (i - k)] * l[j * w + (j - k)] * d[k];
                }
                l[i * w + (i - j)] = v / dj;
            }
        }
        Some((l, d))
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        if let Some((l, d)) = self.ldlt() {
            let mut x = rhs.to_vec();
            for i in 0..n {
                for k in i.saturating_sub(bw)..i {
                    x[i] -= l[i * w + (i - k)] * x[k];
                }
            }
            for i in 0..n {
                x[i] /= d[i];
            }
            for i in (0..n).rev() {
                for k in i + 1..(i + w).min(n) {
                    x[i] -= l[k * w + (k - i)] * x[k];
                }
            }
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        log::debug!("banded LDL^T failed; using dense LU");
        let x = self.dense().lu().solve(&DVector::from_column_slice(rhs))?;
        x.iter().all(|v| v.is_finite()).then(|| x.as_slice().to_vec())
    }

    #[cfg(test)]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }
}
