use super::SoftnessParams;
use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::fluid::{centers_to_faces, MacGrid};

/// Even-odd crossing test against a closed polygon.
///
/// Edges are treated as half-open in y, so a ray through a vertex is counted once.
pub fn inside_polygon(poly: &[[f64; 2]], x: [f64; 2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        if (a[1] > x[1]) != (b[1] > x[1]) {
            let t = (x[1] - a[1]) / (b[1] - a[1]);
            let xc = a[0] + t * (b[0] - a[0]);
            if x[0] < xc {
                inside = !inside;
            }
        }
    }
    inside
}

fn fill_dist2(x: [f64; 2], pts: &[f64], d2: &mut [f64]) -> f64 {
    let mut min = f64::INFINITY;
    for (l, d) in d2.iter_mut().enumerate() {
        let ex = x[0] - pts[2 * l];
        let ey = x[1] - pts[2 * l + 1];
        *d = ex * ex + ey * ey;
        min = min.min(*d);
    }
    min
}

/// Normalized `exp(-d^2 / temperature)` weights; returns their sum before normalization.
fn fill_softmin(d2: &[f64], min: f64, temperature: f64, w: &mut [f64]) {
    let mut total = 0.0;
    for (wl, &d) in w.iter_mut().zip(d2) {
        *wl = (-(d - min) / temperature).exp();
        total += *wl;
    }
    for wl in w.iter_mut() {
        *wl /= total;
    }
}

/// Softmin weights of the points seen from `x`; they sum to one.
pub fn softmin_weights(x: [f64; 2], points: &[[f64; 2]], temperature: f64) -> Vec<f64> {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let mut d2 = vec![0.0; points.len()];
    let mut w = vec![0.0; points.len()];
    let min = fill_dist2(x, &flat, &mut d2);
    fill_softmin(&d2, min, temperature, &mut w);
    w
}

fn signs(points: &[f64], grid: &MacGrid) -> Vec<f64> {
    let poly: Vec<[f64; 2]> = points.chunks(2).map(|c| [c[0], c[1]]).collect();
    grid.cell_centers().into_iter().map(|x| if inside_polygon(&poly, x) { 1.0 } else { -1.0 }).collect()
}

/// `b = sigmoid(delta * d2_soft / sigma)` at every cell center for surface points `[K, 2]`.
pub fn soft_boundary_mask_var(tape: &mut Tape, points: Var, grid: &MacGrid, params: &SoftnessParams) -> Var {
    let shape = tape.shape(points).to_vec();
    assert!(shape.len() == 2 && shape[1] == 2 && shape[0] >= 3, "surface points must be [K>=3, 2]");
    let k = shape[0];
    let pts = tape.value(points).data().to_vec();
    let delta = signs(&pts, grid);
    let centers = grid.cell_centers();
    let (sigma, xi) = (params.sigma, params.xi);
    let mut d2 = vec![0.0; k];
    let mut w = vec![0.0; k];
    let mut out = Vec::with_capacity(centers.len());
    for (x, &dl) in centers.iter().zip(&delta) {
        let min = fill_dist2(*x, &pts, &mut d2);
        fill_softmin(&d2, min, xi, &mut w);
        let s: f64 = w.iter().zip(&d2).map(|(a, b)| a * b).sum();
        out.push(sigmoid(dl * s / sigma));
    }
    let value = Tensor::new(grid.center_shape().to_vec(), out);
    tape.record("soft_mask", &[points], value, move |ins, out, g, _| {
        let pts = ins[0].data();
        let mut gq = vec![0.0; 2 * k];
        let mut d2 = vec![0.0; k];
        let mut w = vec![0.0; k];
        for (c, x) in centers.iter().enumerate() {
            let b = out.data()[c];
            let coef = g.data()[c] * b * (1.0 - b) * delta[c] / sigma;
            if coef == 0.0 {
                continue;
            }
            let min = fill_dist2(*x, pts, &mut d2);
            fill_softmin(&d2, min, xi, &mut w);
            let s: f64 = w.iter().zip(&d2).map(|(a, b)| a * b).sum();
            for l in 0..k {
                let ds = w[l] * (1.0 - (d2[l] - s) / xi);
                let f = coef * ds * -2.0;
                gq[2 * l] += f * (x[0] - pts[2 * l]);
                gq[2 * l + 1] += f * (x[1] - pts[2 * l + 1]);
            }
        }
        vec![Some(Tensor::new(vec![k, 2], gq))]
    })
}

pub fn soft_boundary_mask(points: &[[f64; 2]], grid: &MacGrid, params: &SoftnessParams) -> Tensor {
    let mut tape = Tape::new();
    let p = tape.constant(points_tensor(points));
    let b = soft_boundary_mask_var(&mut tape, p, grid, params);
    tape.value(b).clone()
}

pub(crate) fn points_tensor(points: &[[f64; 2]]) -> Tensor {
    Tensor::new(vec![points.len(), 2], points.iter().flatten().copied().collect())
}

/// Softmin-averaged surface velocity at cell centers, before masking: `([ny, nx], [ny, nx])`.
fn softmin_velocity_var(tape: &mut Tape, points: Var, vel: Var, grid: &MacGrid, tau: f64) -> Var {
    let k = tape.shape(points)[0];
    assert_eq!(tape.shape(vel), tape.shape(points), "surface velocity shape");
    let pts = tape.value(points).data().to_vec();
    let vs = tape.value(vel).data().to_vec();
    let centers = grid.cell_centers();
    let n = centers.len();
    let mut d2 = vec![0.0; k];
    let mut w = vec![0.0; k];
    let mut out = vec![0.0; 2 * n];
    for (c, x) in centers.iter().enumerate() {
        let min = fill_dist2(*x, &pts, &mut d2);
        fill_softmin(&d2, min, tau, &mut w);
        let (mut ux, mut uy) = (0.0, 0.0);
        for l in 0..k {
            ux += w[l] * vs[2 * l];
            uy += w[l] * vs[2 * l + 1];
        }
        out[c] = ux;
        out[n + c] = uy;
    }
    let value = Tensor::new(vec![2, grid.ny, grid.nx], out);
    tape.record("softmin_velocity", &[points, vel], value, move |ins, out, g, needs| {
        let pts = ins[0].data();
        let vs = ins[1].data();
        let mut gq = vec![0.0; 2 * k];
        let mut gv = vec![0.0; 2 * k];
        let mut d2 = vec![0.0; k];
        let mut w = vec![0.0; k];
        for (c, x) in centers.iter().enumerate() {
            let (gx, gy) = (g.data()[c], g.data()[n + c]);
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            let (ux, uy) = (out.data()[c], out.data()[n + c]);
            let min = fill_dist2(*x, pts, &mut d2);
            fill_softmin(&d2, min, tau, &mut w);
            for l in 0..k {
                gv[2 * l] += gx * w[l];
                gv[2 * l + 1] += gy * w[l];
                let proj = gx * (vs[2 * l] - ux) + gy * (vs[2 * l + 1] - uy);
                let f = 2.0 * w[l] / tau * proj;
                gq[2 * l] += f * (x[0] - pts[2 * l]);
                gq[2 * l + 1] += f * (x[1] - pts[2 * l + 1]);
            }
        }
        vec![needs[0].then(|| Tensor::new(vec![k, 2], gq)), needs[1].then(|| Tensor::new(vec![k, 2], gv))]
    })
}

/// Masked boundary velocity on faces: `v_d = b * softmin-average(qdot)`, staggered by averaging centers.
pub fn boundary_velocity_var(
    tape: &mut Tape,
    points: Var,
    vel: Var,
    b: Var,
    grid: &MacGrid,
    params: &SoftnessParams,
) -> (Var, Var) {
    let both = softmin_velocity_var(tape, points, vel, grid, params.tau);
    let (nx, ny) = (grid.nx, grid.ny);
    let flat = tape.reshape(both, &[2 * ny, nx]);
    let ux = tape.crop2d(flat, 0, 0, ny, nx);
    let uy = tape.crop2d(flat, ny, 0, ny, nx);
    let ux = tape.mul(ux, b);
    let uy = tape.mul(uy, b);
    let (vd_x, _) = centers_to_faces(tape, ux, grid);
    let (_, vd_y) = centers_to_faces(tape, uy, grid);
    (vd_x, vd_y)
}

/// Unmasked softmin-averaged surface velocity at cell centers.
pub(crate) fn center_velocity(
    points: &[[f64; 2]],
    velocities: &[[f64; 2]],
    grid: &MacGrid,
    tau: f64,
) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let p = tape.constant(points_tensor(points));
    let v = tape.constant(points_tensor(velocities));
    let both = softmin_velocity_var(&mut tape, p, v, grid, tau);
    let d = tape.value(both).data();
    let n = grid.n_cells();
    let shape = grid.center_shape().to_vec();
    (Tensor::new(shape.clone(), d[..n].to_vec()), Tensor::new(shape, d[n..].to_vec()))
}

pub fn boundary_velocity_field(
    points: &[[f64; 2]],
    velocities: &[[f64; 2]],
    b: &Tensor,
    grid: &MacGrid,
    params: &SoftnessParams,
) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let p = tape.constant(points_tensor(points));
    let v = tape.constant(points_tensor(velocities));
    let bv = tape.constant(b.clone());
    let (x, y) = boundary_velocity_var(&mut tape, p, v, bv, grid, params);
    (tape.value(x).clone(), tape.value(y).clone())
}
