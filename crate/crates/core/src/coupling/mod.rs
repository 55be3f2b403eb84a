//! Solid-to-fluid boundary fields and fluid-to-solid surface forces.

mod ibm;
mod mask;

pub use ibm::{
    aggregate_thrust, distribute_forces_var, edge_forces_var, gaussian_sample_var, ibm_surface_forces, kernel_weights,
    viscous_forces_var, viscous_surface_forces, ForceMode, SurfaceForces,
};
pub(crate) use mask::center_velocity;
pub use mask::{
    boundary_velocity_field, boundary_velocity_var, inside_polygon, soft_boundary_mask, soft_boundary_mask_var,
    softmin_weights,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fluid::{expect_shape, MacGrid};

/// Soft occupancy at cell centers and prescribed velocity on faces.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub b: Tensor,
    pub vd_x: Tensor,
    pub vd_y: Tensor,
}

/// [`BoundaryCondition`] fields living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BcVars {
    pub b: Var,
    pub vd_x: Var,
    pub vd_y: Var,
}

impl BoundaryCondition {
    /// No obstacles, no walls.
    pub fn empty(grid: &MacGrid) -> BoundaryCondition {
        BoundaryCondition {
            b: Tensor::zeros(&grid.center_shape()),
            vd_x: Tensor::zeros(&grid.vx_shape()),
            vd_y: Tensor::zeros(&grid.vy_shape()),
        }
    }

    /// Closed box: the outermost ring of cells is solid and at rest.
    pub fn walls(grid: &MacGrid) -> BoundaryCondition {
        let mut bc = BoundaryCondition::empty(grid);
        bc.b = wall_mask(grid);
        bc
    }

    pub fn check_shape(&self, grid: &MacGrid) -> Result<()> {
        expect_shape("mask", &self.b, &grid.center_shape())?;
        expect_shape("vd_x", &self.vd_x, &grid.vx_shape())?;
        expect_shape("vd_y", &self.vd_y, &grid.vy_shape())
    }

    pub fn constants(&self, tape: &mut Tape) -> BcVars {
        BcVars {
            b: tape.constant(self.b.clone()),
            vd_x: tape.constant(self.vd_x.clone()),
            vd_y: tape.constant(self.vd_y.clone()),
        }
    }

    pub fn from_vars(tape: &Tape, v: &BcVars) -> BoundaryCondition {
        BoundaryCondition {
            b: tape.value(v.b).clone(),
            vd_x: tape.value(v.vd_x).clone(),
            vd_y: tape.value(v.vd_y).clone(),
        }
    }
}

/// 1 on the border ring of cells, 0 elsewhere.
pub fn wall_mask(grid: &MacGrid) -> Tensor {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut b = Tensor::zeros(&grid.center_shape());
    for j in 0..ny {
        for i in 0..nx {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                b.data_mut()[j * nx + i] = 1.0;
            }
        }
    }
    b
}

/// Mask and kernel widths, all in m^2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftnessParams {
    /// Mask sharpness.
    pub sigma: f64,
    /// Softmin temperature for the mask distance.
    pub xi: f64,
    /// Softmin temperature for boundary velocities.
    pub tau: f64,
    /// Gaussian variance of the force kernel; `None` means `2 dx^2`.
    #[serde(default)]
    pub sigma_prime: Option<f64>,
}

impl Default for SoftnessParams {
    fn default() -> Self {
        SoftnessParams { sigma: 5e-7, xi: 5e-7, tau: 5e-7, sigma_prime: None }
    }
}

impl SoftnessParams {
    pub fn validate(&self) -> Result<()> {
        let sp = self.sigma_prime.unwrap_or(1.0);
        if [self.sigma, self.xi, self.tau, sp].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("softness parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma_prime(&self, grid: &MacGrid) -> f64 {
        self.sigma_prime.unwrap_or(2.0 * grid.dx * grid.dx)
    }
}

#[cfg(test)]
mod tests;
