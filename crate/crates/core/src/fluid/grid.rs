use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker-and-cell grid. Fields are stored row-major as `[row][column]`, rows along y.
///
/// | field    | location     | shape            |
/// |----------|--------------|------------------|
/// | curl `a` | cell corners | `[ny+1, nx+1]`   |
/// | `p`, `b` | cell centers | `[ny, nx]`       |
/// | `vx`     | x faces      | `[ny, nx+1]`     |
/// | `vy`     | y faces      | `[ny+1, nx]`     |
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacGrid {
    pub nx: usize,
    pub ny: usize,
    /// Cell size in metres.
    pub dx: f64,
    /// Time step in seconds.
    pub dt: f64,
}

impl Default for MacGrid {
    fn default() -> Self {
        MacGrid { nx: 300, ny: 100, dx: 2.5e-3, dt: 1e-2 }
    }
}

impl MacGrid {
    pub fn new(nx: usize, ny: usize, dx: f64, dt: f64) -> Result<MacGrid> {
        let g = MacGrid { nx, ny, dx, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::Config(format!("grid must be at least 8x8 cells, got {}x{}", self.nx, self.ny)));
        }
        if !(self.dx > 0.0 && self.dt > 0.0 && self.dx.is_finite() && self.dt.is_finite()) {
            return Err(Error::Config(format!("dx and dt must be positive, got {} and {}", self.dx, self.dt)));
        }
        Ok(())
    }

    pub fn corner_shape(&self) -> [usize; 2] {
        [self.ny + 1, self.nx + 1]
    }

    pub fn center_shape(&self) -> [usize; 2] {
        [self.ny, self.nx]
    }

    pub fn vx_shape(&self) -> [usize; 2] {
        [self.ny, self.nx + 1]
    }

    pub fn vy_shape(&self) -> [usize; 2] {
        [self.ny + 1, self.nx]
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.dx
    }

    /// Center of cell `(row j, column i)`.
    pub fn cell_center(&self, j: usize, i: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dx]
    }

    /// All cell centers in storage order.
    pub fn cell_centers(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.n_cells());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(self.cell_center(j, i));
            }
        }
        out
    }

    /// Cell containing point `x`, clamped to the grid.
    pub fn cell_of(&self, x: [f64; 2]) -> (usize, usize) {
        let i = ((x[0] / self.dx).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((x[1] / self.dx).floor().max(0.0) as usize).min(self.ny - 1);
        (j, i)
    }
}
