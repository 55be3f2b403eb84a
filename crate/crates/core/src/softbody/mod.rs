//! Triangle finite elements with a co-rotated material and implicit time stepping.

mod fem;
mod linalg;
mod mesh;
mod solver;

pub use fem::{elastic_energy, elastic_force, Lame, Material};
pub use mesh::{polygon_area, surface_geometry, Mesh, SurfaceGeometry};
pub use solver::{SoftBody, SoftBodyState, SolverOptions, StepReport};

#[cfg(test)]
mod tests;
