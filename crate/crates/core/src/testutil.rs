//! Shared helpers for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};

/// Compares the tape VJP of `f` at `x0` against central differences of `<f(x), r>` for a fixed
/// random `r`. Returns the largest error relative to the largest finite-difference entry.
pub(crate) fn vjp_error(x0: &Tensor, eps: f64, f: impl Fn(&mut Tape, Var) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let probe = |x: &Tensor, r: Option<&Tensor>| -> (f64, Tensor, Option<Tensor>) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = f(&mut tape, v);
        let out = tape.value(y).clone();
        let Some(r) = r else { return (0.0, out, None) };
        let rv = tape.constant(r.clone());
        let l = tape.dot(y, rv);
        let val = tape.scalar(l);
        let g = tape.backward(l).expect("backward");
        (val, out, Some(g.wrt(v)))
    };
    let (_, out, _) = probe(x0, None);
    let r = Tensor::new(out.shape().to_vec(), (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
    let (_, _, g) = probe(x0, Some(&r));
    let g = g.unwrap();
    let mut fd = vec![0.0; x0.len()];
    for (i, d) in fd.iter_mut().enumerate() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x0.clone();
        xm.data_mut()[i] -= eps;
        let (p, _, _) = probe(&xp, Some(&r));
        let (m, _, _) = probe(&xm, Some(&r));
        *d = (p - m) / (2.0 * eps);
    }
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    g.data().iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}
