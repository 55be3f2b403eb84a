use serde::{Deserialize, Serialize};

use super::mask::points_tensor;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fluid::MacGrid;
use crate::softbody::SurfaceGeometry;

/// Kernel support radius in units of the kernel standard deviation.
const SUPPORT: f64 = 6.0;
const MIN_MASS: f64 = 1e-30;

/// How surface forces reach the mesh nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMode {
    /// Total force divided evenly over all nodes.
    #[default]
    Averaged,
    /// Each surface element force split between its two end vertices.
    PerSurface,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceForces {
    pub per_element: Vec<[f64; 2]>,
    pub total: [f64; 2],
}

/// Cells within the kernel support of `q` with their Gaussian factor `G` and center.
fn support(q: [f64; 2], grid: &MacGrid, sigma_prime: f64) -> Vec<(usize, f64, [f64; 2])> {
    let r = SUPPORT * sigma_prime.sqrt();
    let dx = grid.dx;
    let i0 = ((q[0] - r) / dx - 0.5).ceil().max(0.0) as usize;
    let j0 = ((q[1] - r) / dx - 0.5).ceil().max(0.0) as usize;
    let i1 = (((q[0] + r) / dx - 0.5).floor()).min(grid.nx as f64 - 1.0);
    let j1 = (((q[1] + r) / dx - 0.5).floor()).min(grid.ny as f64 - 1.0);
    let mut out = Vec::new();
    if i1 < 0.0 || j1 < 0.0 {
        return out;
    }
    for j in j0..=j1 as usize {
        for i in i0..=i1 as usize {
            let x = grid.cell_center(j, i);
            let d2 = (x[0] - q[0]).powi(2) + (x[1] - q[1]).powi(2);
            if d2 > r * r {
                continue;
            }
            out.push((j * grid.nx + i, (-d2 / (2.0 * sigma_prime)).exp(), x));
        }
    }
    out
}

/// Normalized kernel weights `G b / Z` around `q`, as `(cell index, weight)`.
pub fn kernel_weights(q: [f64; 2], b: &Tensor, grid: &MacGrid, sigma_prime: f64) -> Result<Vec<(usize, f64)>> {
    let b = b.data();
    let cells = support(q, grid, sigma_prime);
    let z: f64 = cells.iter().map(|&(c, g, _)| g * b[c]).sum();
    if !(z >= MIN_MASS) {
        return Err(Error::LeftGrid { element: 0, z });
    }
    Ok(cells.into_iter().map(|(c, g, _)| (c, g * b[c] / z)).collect())
}

/// Mask-weighted Gaussian average of a center field around each point of `[K, 2]`.
pub fn gaussian_sample_var(
    tape: &mut Tape,
    field: Var,
    b: Var,
    points: Var,
    grid: &MacGrid,
    sigma_prime: f64,
) -> Result<Var> {
    assert_eq!(tape.shape(field), grid.center_shape(), "sampled field shape");
    assert_eq!(tape.shape(b), grid.center_shape(), "mask shape");
    let k = tape.shape(points)[0];
    let pts = tape.value(points).data().to_vec();
    let f = tape.value(field).data();
    let bd = tape.value(b).data();
    let mut kernels = Vec::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    for e in 0..k {
        let q = [pts[2 * e], pts[2 * e + 1]];
        let cells = support(q, grid, sigma_prime);
        let z: f64 = cells.iter().map(|&(c, g, _)| g * bd[c]).sum();
        if !(z >= MIN_MASS) {
            return Err(Error::LeftGrid { element: e, z });
        }
        let mean = cells.iter().map(|&(c, g, _)| g * bd[c] * f[c]).sum::<f64>() / z;
        out.push(mean);
        kernels.push((z, cells));
    }
    let value = Tensor::vector(out);
    Ok(tape.record("gaussian_sample", &[field, b, points], value, move |ins, out, g, needs| {
        let f = ins[0].data();
        let bd = ins[1].data();
        let pts = ins[2].data();
        let mut gf = vec![0.0; f.len()];
        let mut gb = vec![0.0; f.len()];
        let mut gq = vec![0.0; 2 * k];
        for (e, (z, cells)) in kernels.iter().enumerate() {
            let ge = g.data()[e];
            if ge == 0.0 {
                continue;
            }
            let s = out.data()[e];
            let q = [pts[2 * e], pts[2 * e + 1]];
            for &(c, kernel, x) in cells {
                let w = kernel * bd[c];
                gf[c] += ge * w / z;
                gb[c] += ge * kernel * (f[c] - s) / z;
                let t = ge * w * (f[c] - s) / (z * sigma_prime);
                gq[2 * e] += t * (x[0] - q[0]);
                gq[2 * e + 1] += t * (x[1] - q[1]);
            }
        }
        vec![
            needs[0].then(|| Tensor::new(ins[0].shape().to_vec(), gf)),
            needs[1].then(|| Tensor::new(ins[1].shape().to_vec(), gb)),
            needs[2].then(|| Tensor::new(vec![k, 2], gq)),
        ]
    }))
}

/// Edge vectors `next - current` and midpoints of a closed vertex loop `[K, 2]`.
fn edges_and_midpoints(tape: &mut Tape, verts: Var) -> (Var, Var) {
    let k = tape.shape(verts)[0];
    let rolled: Vec<usize> = (0..k).map(|i| (i + 1) % k).collect();
    let next = tape.select_rows(verts, &rolled);
    let e = tape.sub(next, verts);
    let m = tape.add(next, verts);
    let m = tape.scale(m, 0.5);
    (e, m)
}

/// Pressure force on every edge of a counter-clockwise loop: `f_k = -l_k n_k p_k`.
///
/// `l_k n_k = (e_y, -e_x)` for edge vector `e`, so forces of a uniform pressure sum to
/// exactly zero around the loop.
pub fn edge_forces_var(tape: &mut Tape, verts: Var, p: Var, b: Var, grid: &MacGrid, sigma_prime: f64) -> Result<Var> {
    let (e, m) = edges_and_midpoints(tape, verts);
    let pbar = gaussian_sample_var(tape, p, b, m, grid, sigma_prime)?;
    let ex = tape.column(e, 0);
    let ey = tape.column(e, 1);
    let fx = tape.mul(ey, pbar);
    let fx = tape.neg(fx);
    let fy = tape.mul(ex, pbar);
    Ok(tape.stack_columns(&[fx, fy]))
}

/// Viscous traction on every edge: `-l mu (n x a)`, which in 2D is `mu a e` along the edge.
pub fn viscous_forces_var(
    tape: &mut Tape,
    verts: Var,
    a: Var,
    b: Var,
    mu: f64,
    grid: &MacGrid,
    sigma_prime: f64,
) -> Result<Var> {
    let (nx, ny) = (grid.nx, grid.ny);
    let corners = [
        tape.crop2d(a, 0, 0, ny, nx),
        tape.crop2d(a, 0, 1, ny, nx),
        tape.crop2d(a, 1, 0, ny, nx),
        tape.crop2d(a, 1, 1, ny, nx),
    ];
    let ac = tape.add_all(&corners);
    let ac = tape.scale(ac, 0.25);
    let (e, m) = edges_and_midpoints(tape, verts);
    let abar = gaussian_sample_var(tape, ac, b, m, grid, sigma_prime)?;
    let abar = tape.scale(abar, mu);
    let ex = tape.column(e, 0);
    let ey = tape.column(e, 1);
    let fx = tape.mul(ex, abar);
    let fy = tape.mul(ey, abar);
    Ok(tape.stack_columns(&[fx, fy]))
}

fn sample_at(field: &Tensor, b: &Tensor, points: &[[f64; 2]], grid: &MacGrid, sigma_prime: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let f = tape.constant(field.clone());
    let bv = tape.constant(b.clone());
    let q = tape.constant(points_tensor(points));
    let s = gaussian_sample_var(&mut tape, f, bv, q, grid, sigma_prime)?;
    Ok(tape.value(s).data().to_vec())
}

fn total(f: &[[f64; 2]]) -> [f64; 2] {
    f.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]])
}

/// `f_k = -l_k n_k pbar_k` with `pbar_k` the normalized Gaussian average of `p` weighted by `b`.
pub fn ibm_surface_forces(
    p: &Tensor,
    b: &Tensor,
    geom: &SurfaceGeometry,
    grid: &MacGrid,
    sigma_prime: f64,
) -> Result<SurfaceForces> {
    let pbar = sample_at(p, b, &geom.midpoints, grid, sigma_prime)?;
    let per_element: Vec<[f64; 2]> = pbar
        .iter()
        .zip(&geom.normals)
        .zip(&geom.lengths)
        .map(|((pk, n), l)| [-l * n[0] * pk, -l * n[1] * pk])
        .collect();
    let total = total(&per_element);
    Ok(SurfaceForces { per_element, total })
}

/// `f_k = -l_k mu (n_k x abar_k)` with the curl sampled by the pressure kernel.
pub fn viscous_surface_forces(
    a: &Tensor,
    b: &Tensor,
    geom: &SurfaceGeometry,
    mu: f64,
    grid: &MacGrid,
    sigma_prime: f64,
) -> Result<SurfaceForces> {
    let ac = crate::fluid::curl_at_centers(a, grid);
    let abar = sample_at(&ac, b, &geom.midpoints, grid, sigma_prime)?;
    let per_element: Vec<[f64; 2]> = abar
        .iter()
        .zip(&geom.normals)
        .zip(&geom.lengths)
        .map(|((ak, n), l)| [-l * mu * ak * n[1], l * mu * ak * n[0]])
        .collect();
    let total = total(&per_element);
    Ok(SurfaceForces { per_element, total })
}

/// Total force and the force applied to each of `n_nodes` mesh nodes.
pub fn aggregate_thrust(
    forces: &[[f64; 2]],
    n_nodes: usize,
    mode: ForceMode,
    surface: &[usize],
) -> ([f64; 2], Vec<[f64; 2]>) {
    let t = total(forces);
    let mut nodal = vec![[0.0; 2]; n_nodes];
    match mode {
        ForceMode::Averaged => {
            let share = [t[0] / n_nodes as f64, t[1] / n_nodes as f64];
            nodal.iter_mut().for_each(|f| *f = share);
        }
        ForceMode::PerSurface => {
            assert_eq!(surface.len(), forces.len(), "one force per surface element");
            let k = surface.len();
            for (e, f) in forces.iter().enumerate() {
                for node in [surface[e], surface[(e + 1) % k]] {
                    nodal[node][0] += 0.5 * f[0];
                    nodal[node][1] += 0.5 * f[1];
                }
            }
        }
    }
    (t, nodal)
}

/// Taped [`aggregate_thrust`]: returns the total `[2]` and nodal forces `[n_nodes, 2]`.
pub fn distribute_forces_var(
    tape: &mut Tape,
    forces: Var,
    n_nodes: usize,
    mode: ForceMode,
    surface: &[usize],
) -> (Var, Var) {
    let k = tape.shape(forces)[0];
    let fx = tape.column(forces, 0);
    let fy = tape.column(forces, 1);
    let tx = tape.sum(fx);
    let ty = tape.sum(fy);
    let parts = [tape.reshape(tx, &[1]), tape.reshape(ty, &[1])];
    let total = tape.concat(&parts, 0);
    let nodal = match mode {
        ForceMode::Averaged => {
            let sx = tape.scale(tx, 1.0 / n_nodes as f64);
            let sy = tape.scale(ty, 1.0 / n_nodes as f64);
            let cx = tape.expand(sx, &[n_nodes]);
            let cy = tape.expand(sy, &[n_nodes]);
            tape.stack_columns(&[cx, cy])
        }
        ForceMode::PerSurface => {
            assert_eq!(surface.len(), k, "one force per surface element");
            let half = tape.scale(forces, 0.5);
            let flat = tape.reshape(half, &[2 * k]);
            let start: Vec<usize> = (0..2 * k).map(|i| 2 * surface[i / 2] + i % 2).collect();
            let end: Vec<usize> = (0..2 * k).map(|i| 2 * surface[(i / 2 + 1) % k] + i % 2).collect();
            let a = tape.scatter_add(flat, &start, 2 * n_nodes);
            let b = tape.scatter_add(flat, &end, 2 * n_nodes);
            let s = tape.add(a, b);
            tape.reshape(s, &[n_nodes, 2])
        }
    };
    (total, nodal)
}
