use crate::autodiff::{Tape, Tensor, Var};

/// Projection that keeps a body on its initial horizontal axis.
///
/// Positions: the mass centroid is moved back to the initial height and the best-fit rotation
/// relative to the rest shape is undone about the centroid. Velocities: the rigid angular
/// velocity and the mean vertical velocity are removed, and the remainder is rotated with the
/// positions. Forward motion along x is left untouched.
#[derive(Clone, Debug)]
pub(crate) struct AxisLock {
    mass: Tensor,
    total: f64,
    y0: f64,
    r0x: Tensor,
    r0y: Tensor,
}

impl AxisLock {
    pub fn new(rest: &[[f64; 2]], masses: &[f64]) -> AxisLock {
        let total: f64 = masses.iter().sum();
        let cx = rest.iter().zip(masses).map(|(p, m)| m * p[0]).sum::<f64>() / total;
        let cy = rest.iter().zip(masses).map(|(p, m)| m * p[1]).sum::<f64>() / total;
        AxisLock {
            mass: Tensor::vector(masses.to_vec()),
            total,
            y0: cy,
            r0x: Tensor::vector(rest.iter().map(|p| p[0] - cx).collect()),
            r0y: Tensor::vector(rest.iter().map(|p| p[1] - cy).collect()),
        }
    }

    #[cfg(test)]
    pub fn centroid(&self, points: &[[f64; 2]]) -> [f64; 2] {
        let m = self.mass.data();
        let s = points.iter().zip(m).fold([0.0; 2], |acc, (p, m)| [acc[0] + m * p[0], acc[1] + m * p[1]]);
        [s[0] / self.total, s[1] / self.total]
    }

    #[cfg(test)]
    pub fn apply_plain(&self, q: &[[f64; 2]], v: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut tape = Tape::new();
        let qv = tape.constant(super::to_tensor(q));
        let vv = tape.constant(super::to_tensor(v));
        let (q1, v1) = self.apply(&mut tape, qv, vv);
        (super::from_tensor(tape.value(q1)), super::from_tensor(tape.value(v1)))
    }

    fn weighted_mean(&self, tape: &mut Tape, m: Var, x: Var) -> Var {
        let s = tape.dot(x, m);
        tape.scale(s, 1.0 / self.total)
    }

    pub fn apply(&self, tape: &mut Tape, q: Var, v: Var) -> (Var, Var) {
        let n = self.mass.len();
        let m = tape.constant(self.mass.clone());
        let r0x = tape.constant(self.r0x.clone());
        let r0y = tape.constant(self.r0y.clone());
        let (qx, qy) = (tape.column(q, 0), tape.column(q, 1));
        let (vx, vy) = (tape.column(v, 0), tape.column(v, 1));

        let cx = self.weighted_mean(tape, m, qx);
        let cy = self.weighted_mean(tape, m, qy);
        let ecx = tape.expand(cx, &[n]);
        let ecy = tape.expand(cy, &[n]);
        let rx = tape.sub(qx, ecx);
        let ry = tape.sub(qy, ecy);

        // cos and sin of the best-fit rotation taking the rest shape to the current one
        let mrx = tape.mul(m, rx);
        let mry = tape.mul(m, ry);
        let a1 = tape.dot(mrx, r0x);
        let a2 = tape.dot(mry, r0y);
        let a = tape.add(a1, a2);
        let b1 = tape.dot(mry, r0x);
        let b2 = tape.dot(mrx, r0y);
        let b = tape.sub(b1, b2);
        let aa = tape.square(a);
        let bb = tape.square(b);
        let norm = tape.add(aa, bb);
        let norm = tape.sqrt(norm);
        let c = tape.div(a, norm);
        let s = tape.div(b, norm);

        // rigid angular velocity about the centroid
        let l1 = tape.dot(mrx, vy);
        let l2 = tape.dot(mry, vx);
        let ang = tape.sub(l1, l2);
        let i1 = tape.dot(mrx, rx);
        let i2 = tape.dot(mry, ry);
        let inertia = tape.add(i1, i2);
        let omega = tape.div(ang, inertia);
        let wry = tape.mul_scalar(ry, omega);
        let wrx = tape.mul_scalar(rx, omega);
        let ux = tape.add(vx, wry);
        let uy = tape.sub(vy, wrx);

        let (px, py) = rotate_back(tape, rx, ry, c, s);
        let px = tape.add(px, ecx);
        let py = tape.offset(py, self.y0);
        let (wx, wy) = rotate_back(tape, ux, uy, c, s);
        let my = self.weighted_mean(tape, m, wy);
        let my = tape.expand(my, &[n]);
        let wy = tape.sub(wy, my);
        (tape.stack_columns(&[px, py]), tape.stack_columns(&[wx, wy]))
    }
}

/// Rotates `(x, y)` by the inverse of the rotation with cosine `c` and sine `s`.
fn rotate_back(tape: &mut Tape, x: Var, y: Var, c: Var, s: Var) -> (Var, Var) {
    let cx = tape.mul_scalar(x, c);
    let sy = tape.mul_scalar(y, s);
    let sx = tape.mul_scalar(x, s);
    let cy = tape.mul_scalar(y, c);
    (tape.add(cx, sy), tape.sub(cy, sx))
}
