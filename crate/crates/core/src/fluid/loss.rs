use serde::{Deserialize, Serialize};

use super::grid::MacGrid;
use super::state::{centers_to_faces, velocity_from_curl_var, FluidState};
use crate::autodiff::{Tape, Var};
use crate::coupling::{BcVars, BoundaryCondition};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidParams {
    /// Density in kg/m^3.
    pub rho: f64,
    /// Dynamic viscosity in Pa s.
    pub mu: f64,
    /// Weight of the momentum residual.
    pub beta: f64,
    /// Weight of the boundary mismatch.
    pub gamma_loss: f64,
    /// Multiplier applied to residuals before squaring; `None` means `1/dx`.
    #[serde(default)]
    pub unit_scale: Option<f64>,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams { rho: 50.0, mu: 1.25e-4, beta: 1.0, gamma_loss: 1e8, unit_scale: None }
    }
}

impl FluidParams {
    pub const RHO_RANGE: (f64, f64) = (10.0, 50.0);
    pub const MU_RANGE: (f64, f64) = (1.25e-4, 1e-3);

    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = Self::RHO_RANGE;
        let (m0, m1) = Self::MU_RANGE;
        if !(r0..=r1).contains(&self.rho) {
            return Err(Error::Config(format!("rho = {} outside the trained range [{r0}, {r1}]", self.rho)));
        }
        if !(m0..=m1).contains(&self.mu) {
            return Err(Error::Config(format!("mu = {} outside the trained range [{m0}, {m1}]", self.mu)));
        }
        if !(self.beta > 0.0 && self.gamma_loss > 0.0) {
            return Err(Error::Config("beta and gamma_loss must be positive".into()));
        }
        if let Some(s) = self.unit_scale {
            if !(s > 0.0) {
                return Err(Error::Config("unit_scale must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn scale(&self, grid: &MacGrid) -> f64 {
        self.unit_scale.unwrap_or(1.0 / grid.dx)
    }
}

/// Loss terms on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub l_p: Var,
    pub l_b: Var,
    pub total: Var,
}

/// Loss terms as numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub l_p: f64,
    pub l_b: f64,
    pub total: f64,
}

impl LossParts {
    pub fn value(&self, tape: &Tape) -> LossValue {
        LossValue { l_p: tape.scalar(self.l_p), l_b: tape.scalar(self.l_b), total: tape.scalar(self.total) }
    }
}

/// Unscaled momentum residuals at interior faces.
///
/// `rx` has shape `[ny-2, nx-1]` (x faces with rows `1..ny-1`, columns `1..nx`), `ry` has
/// shape `[ny-1, nx-2]` (y faces with rows `1..ny`, columns `1..nx-1`). Advection and
/// diffusion use the new velocity.
pub fn momentum_residuals(
    tape: &mut Tape,
    a_t: Var,
    a_t1: Var,
    p_t1: Var,
    params: &FluidParams,
    grid: &MacGrid,
) -> (Var, Var) {
    let (nx, ny, dx, h) = (grid.nx, grid.ny, grid.dx, grid.dt);
    let (u0, v0) = velocity_from_curl_var(tape, a_t, grid);
    let (u, v) = velocity_from_curl_var(tape, a_t1, grid);
    let rho = params.rho;
    let mu = params.mu;

    // x momentum
    let (hh, ww) = (ny - 2, nx - 1);
    let uc = tape.crop2d(u, 1, 1, hh, ww);
    let ue = tape.crop2d(u, 1, 2, hh, ww);
    let uw = tape.crop2d(u, 1, 0, hh, ww);
    let un = tape.crop2d(u, 2, 1, hh, ww);
    let us = tape.crop2d(u, 0, 1, hh, ww);
    let u0c = tape.crop2d(u0, 1, 1, hh, ww);
    let vbar = {
        let c = [
            tape.crop2d(v, 1, 0, hh, ww),
            tape.crop2d(v, 1, 1, hh, ww),
            tape.crop2d(v, 2, 0, hh, ww),
            tape.crop2d(v, 2, 1, hh, ww),
        ];
        let s = tape.add_all(&c);
        tape.scale(s, 0.25)
    };
    let pe = tape.crop2d(p_t1, 1, 1, hh, ww);
    let pw = tape.crop2d(p_t1, 1, 0, hh, ww);
    let rx = momentum_component(tape, [uc, ue, uw, un, us], u0c, uc, vbar, (pe, pw), rho, mu, dx, h);

    // y momentum
    let (hh, ww) = (ny - 1, nx - 2);
    let vc = tape.crop2d(v, 1, 1, hh, ww);
    let ve = tape.crop2d(v, 1, 2, hh, ww);
    let vw = tape.crop2d(v, 1, 0, hh, ww);
    let vn = tape.crop2d(v, 2, 1, hh, ww);
    let vs = tape.crop2d(v, 0, 1, hh, ww);
    let v0c = tape.crop2d(v0, 1, 1, hh, ww);
    let ubar = {
        let c = [
            tape.crop2d(u, 0, 1, hh, ww),
            tape.crop2d(u, 0, 2, hh, ww),
            tape.crop2d(u, 1, 1, hh, ww),
            tape.crop2d(u, 1, 2, hh, ww),
        ];
        let s = tape.add_all(&c);
        tape.scale(s, 0.25)
    };
    let pn = tape.crop2d(p_t1, 1, 1, hh, ww);
    let ps = tape.crop2d(p_t1, 0, 1, hh, ww);
    let ry = momentum_component(tape, [vc, ve, vw, vn, vs], v0c, ubar, vc, (pn, ps), rho, mu, dx, h);
    (rx, ry)
}

/// `rho (dw/dt + ux dw/dx + uy dw/dy) + dp - mu lap(w)` for one velocity component `w`.
#[allow(clippy::too_many_arguments)]
fn momentum_component(
    tape: &mut Tape,
    [c, e, w, n, s]: [Var; 5],
    old: Var,
    ux: Var,
    uy: Var,
    (p_hi, p_lo): (Var, Var),
    rho: f64,
    mu: f64,
    dx: f64,
    h: f64,
) -> Var {
    let dt_term = tape.sub(c, old);
    let dt_term = tape.scale(dt_term, 1.0 / h);
    let ddx = tape.sub(e, w);
    let ddx = tape.scale(ddx, 0.5 / dx);
    let ddy = tape.sub(n, s);
    let ddy = tape.scale(ddy, 0.5 / dx);
    let adv_x = tape.mul(ux, ddx);
    let adv_y = tape.mul(uy, ddy);
    let inertia = tape.add_all(&[dt_term, adv_x, adv_y]);
    let inertia = tape.scale(inertia, rho);
    let grad_p = tape.sub(p_hi, p_lo);
    let grad_p = tape.scale(grad_p, 1.0 / dx);
    let ring = tape.add_all(&[e, w, n, s]);
    let four_c = tape.scale(c, 4.0);
    let lap = tape.sub(ring, four_c);
    let visc = tape.scale(lap, -mu / (dx * dx));
    tape.add_all(&[inertia, grad_p, visc])
}

/// `L = beta L_p + gamma_loss L_b` on the tape.
///
/// `L_p` sums `(1 - b_face) (s r)^2` over interior faces and `L_b` sums
/// `b_face (s (v - v_d))^2` over all faces; each is divided by its face count.
pub fn ns_residual_loss(
    tape: &mut Tape,
    a_t: Var,
    a_t1: Var,
    p_t1: Var,
    bc: &BcVars,
    params: &FluidParams,
    grid: &MacGrid,
) -> LossParts {
    let (nx, ny) = (grid.nx, grid.ny);
    let s = params.scale(grid);
    let (rx, ry) = momentum_residuals(tape, a_t, a_t1, p_t1, params, grid);
    let (bx, by) = centers_to_faces(tape, bc.b, grid);

    let fluid_weight = |tape: &mut Tape, bf: Var, r0: usize, c0: usize, h: usize, w: usize| {
        let bi = tape.crop2d(bf, r0, c0, h, w);
        let neg = tape.scale(bi, -s * s);
        tape.offset(neg, s * s)
    };
    let wx = fluid_weight(tape, bx, 1, 1, ny - 2, nx - 1);
    let wy = fluid_weight(tape, by, 1, 1, ny - 1, nx - 2);
    let lx = tape.weighted_square_sum(rx, wx);
    let ly = tape.weighted_square_sum(ry, wy);
    let lp = tape.add(lx, ly);
    let n_interior = ((ny - 2) * (nx - 1) + (ny - 1) * (nx - 2)) as f64;
    let l_p = tape.scale(lp, 1.0 / n_interior);

    let (u, v) = velocity_from_curl_var(tape, a_t1, grid);
    let du = tape.sub(u, bc.vd_x);
    let dv = tape.sub(v, bc.vd_y);
    let bxs = tape.scale(bx, s * s);
    let bys = tape.scale(by, s * s);
    let mx = tape.weighted_square_sum(du, bxs);
    let my = tape.weighted_square_sum(dv, bys);
    let lb = tape.add(mx, my);
    let n_faces = (ny * (nx + 1) + (ny + 1) * nx) as f64;
    let l_b = tape.scale(lb, 1.0 / n_faces);

    let bp = tape.scale(l_p, params.beta);
    let gb = tape.scale(l_b, params.gamma_loss);
    let total = tape.add(bp, gb);
    LossParts { l_p, l_b, total }
}

/// Evaluates [`ns_residual_loss`] without recording a graph.
pub fn ns_residual_loss_value(
    state_t: &FluidState,
    state_t1: &FluidState,
    bc: &BoundaryCondition,
    params: &FluidParams,
    grid: &MacGrid,
) -> Result<LossValue> {
    state_t.check_shape(grid)?;
    state_t1.check_shape(grid)?;
    bc.check_shape(grid)?;
    let mut tape = Tape::new();
    let a0 = tape.constant(state_t.a.clone());
    let a1 = tape.constant(state_t1.a.clone());
    let p1 = tape.constant(state_t1.p.clone());
    let bcv = bc.constants(&mut tape);
    let parts = ns_residual_loss(&mut tape, a0, a1, p1, &bcv, params, grid);
    tape.check()?;
    Ok(parts.value(&tape))
}
