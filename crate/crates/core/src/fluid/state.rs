use super::grid::MacGrid;
use crate::autodiff::{Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Curl at corners and pressure at centers; velocities are derived.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub a: Tensor,
    pub p: Tensor,
}

impl FluidState {
    pub fn at_rest(grid: &MacGrid) -> FluidState {
        FluidState { a: Tensor::zeros(&grid.corner_shape()), p: Tensor::zeros(&grid.center_shape()) }
    }

    pub fn check_shape(&self, grid: &MacGrid) -> Result<()> {
        expect_shape("curl", &self.a, &grid.corner_shape())?;
        expect_shape("pressure", &self.p, &grid.center_shape())
    }

    pub fn velocity(&self, grid: &MacGrid) -> Result<(Tensor, Tensor)> {
        velocity_from_curl(&self.a, grid)
    }
}

pub(crate) fn expect_shape(what: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Shape(format!("{what} field has shape {:?}, expected {:?}", t.shape(), shape)));
    }
    Ok(())
}

/// `vx = da/dy`, `vy = -da/dx` by one-sided differences across each face.
pub fn velocity_from_curl(a: &Tensor, grid: &MacGrid) -> Result<(Tensor, Tensor)> {
    expect_shape("curl", a, &grid.corner_shape())?;
    let (nx, ny) = (grid.nx, grid.ny);
    let inv = 1.0 / grid.dx;
    let w = nx + 1;
    let d = a.data();
    let mut vx = Vec::with_capacity(ny * (nx + 1));
    for j in 0..ny {
        for i in 0..=nx {
            vx.push((d[(j + 1) * w + i] - d[j * w + i]) * inv);
        }
    }
    let mut vy = Vec::with_capacity((ny + 1) * nx);
    for j in 0..=ny {
        for i in 0..nx {
            vy.push((d[j * w + i + 1] - d[j * w + i]) * -inv);
        }
    }
    Ok((Tensor::new(grid.vx_shape().to_vec(), vx), Tensor::new(grid.vy_shape().to_vec(), vy)))
}

/// Taped form of [`velocity_from_curl`].
pub fn velocity_from_curl_var(tape: &mut Tape, a: Var, grid: &MacGrid) -> (Var, Var) {
    let (nx, ny) = (grid.nx, grid.ny);
    assert_eq!(tape.shape(a), grid.corner_shape(), "curl shape");
    let up = tape.crop2d(a, 1, 0, ny, nx + 1);
    let down = tape.crop2d(a, 0, 0, ny, nx + 1);
    let dy = tape.sub(up, down);
    let vx = tape.scale(dy, 1.0 / grid.dx);
    let right = tape.crop2d(a, 0, 1, ny + 1, nx);
    let left = tape.crop2d(a, 0, 0, ny + 1, nx);
    let dxa = tape.sub(right, left);
    let vy = tape.scale(dxa, -1.0 / grid.dx);
    (vx, vy)
}

/// Discrete cell divergence of a face velocity field.
pub fn divergence(vx: &Tensor, vy: &Tensor, grid: &MacGrid) -> Result<Tensor> {
    expect_shape("vx", vx, &grid.vx_shape())?;
    expect_shape("vy", vy, &grid.vy_shape())?;
    let (nx, ny, dx) = (grid.nx, grid.ny, grid.dx);
    let (u, v) = (vx.data(), vy.data());
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let du = u[j * (nx + 1) + i + 1] - u[j * (nx + 1) + i];
            let dv = v[(j + 1) * nx + i] - v[j * nx + i];
            out.push((du + dv) / dx);
        }
    }
    Ok(Tensor::new(grid.center_shape().to_vec(), out))
}

/// Curl sampled at cell centers (mean of the four corners).
pub fn curl_at_centers(a: &Tensor, grid: &MacGrid) -> Tensor {
    let (nx, ny) = (grid.nx, grid.ny);
    let w = nx + 1;
    let d = a.data();
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(0.25 * (d[j * w + i] + d[j * w + i + 1] + d[(j + 1) * w + i] + d[(j + 1) * w + i + 1]));
        }
    }
    Tensor::new(grid.center_shape().to_vec(), out)
}

/// Averages a center field onto x faces (`[ny, nx+1]`) and y faces (`[ny+1, nx]`), edges replicated.
pub fn centers_to_faces(tape: &mut Tape, c: Var, grid: &MacGrid) -> (Var, Var) {
    let (nx, ny) = (grid.nx, grid.ny);
    let cp = tape.pad2d(c, (0, 0, 1, 1), Padding::Edge);
    let l = tape.crop2d(cp, 0, 0, ny, nx + 1);
    let r = tape.crop2d(cp, 0, 1, ny, nx + 1);
    let fx = tape.add(l, r);
    let fx = tape.scale(fx, 0.5);
    let cp = tape.pad2d(c, (1, 1, 0, 0), Padding::Edge);
    let lo = tape.crop2d(cp, 0, 0, ny + 1, nx);
    let hi = tape.crop2d(cp, 1, 0, ny + 1, nx);
    let fy = tape.add(lo, hi);
    let fy = tape.scale(fy, 0.5);
    (fx, fy)
}

/// Untaped [`centers_to_faces`].
pub fn stagger(c: &Tensor, grid: &MacGrid) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let v = tape.constant(c.clone());
    let (x, y) = centers_to_faces(&mut tape, v, grid);
    (tape.value(x).clone(), tape.value(y).clone())
}
