use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fem::{element_dofs, element_mixed, eval_element, Lame, Material};
use super::linalg::BandedSym;
use super::mesh::Mesh;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Newton iteration cap per step.
    pub max_iters: usize,
    /// Convergence threshold on the Newton step, relative to the body size.
    pub tolerance: f64,
    /// Mass-proportional velocity damping in 1/s.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 20, tolerance: 1e-12, damping: 0.0 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tolerance > 0.0) || !(self.damping >= 0.0) {
            return Err(Error::Config("solver needs max_iters >= 1, tolerance > 0 and damping >= 0".into()));
        }
        Ok(())
    }
}

/// Nodal positions and velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftBodyState {
    pub q: Vec<[f64; 2]>,
    pub qdot: Vec<[f64; 2]>,
}

impl SoftBodyState {
    pub fn at_rest(mesh: &Mesh) -> SoftBodyState {
        SoftBodyState { q: mesh.rest().to_vec(), qdot: vec![[0.0; 2]; mesh.n_nodes()] }
    }

    pub fn translated(mut self, by: [f64; 2]) -> SoftBodyState {
        self.q.iter_mut().for_each(|p| {
            p[0] += by[0];
            p[1] += by[1];
        });
        self
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the last Newton step.
    pub last_step: f64,
}

/// An elastic body with its material and stepping options.
#[derive(Clone, Debug)]
pub struct SoftBody {
    pub mesh: Arc<Mesh>,
    pub material: Material,
    pub solver: SolverOptions,
    mass: Vec<f64>,
    size: f64,
}

pub(crate) fn flatten(v: &[[f64; 2]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

pub(crate) fn unflatten(v: &[f64]) -> Vec<[f64; 2]> {
    v.chunks(2).map(|c| [c[0], c[1]]).collect()
}

struct Problem<'a> {
    body: &'a SoftBody,
    lame: Lame,
    act: &'a [f64],
    q0: &'a [f64],
    v0: &'a [f64],
    fext: &'a [f64],
    h: f64,
}

impl Problem<'_> {
    fn inertia_coeffs(&self) -> (f64, f64) {
        let a = self.body.solver.damping;
        (1.0 / (self.h * self.h), a / self.h)
    }

    /// Incremental potential; `Err` on inversion.
    fn potential(&self, q: &[f64]) -> Result<f64> {
        let body = self.body;
        let (c1, c2) = self.inertia_coeffs();
        let mut phi = 0.0;
        for i in 0..q.len() {
            let m = body.mass[i / 2];
            let y = q[i] - self.q0[i] - self.h * self.v0[i];
            let z = q[i] - self.q0[i];
            phi += 0.5 * m * (c1 * y * y + c2 * z * z) - self.fext[i] * q[i];
        }
        let qs = unflatten(q);
        for (e, t) in body.mesh.triangles().iter().enumerate() {
            phi += eval_element(&body.mesh, e, &element_dofs(&qs, t), self.act[e], &self.lame, None)?.energy;
        }
        Ok(phi)
    }

    /// Newton direction with the exact Hessian, or with per-element projected Hessians when the
    /// exact one does not give a descent direction. Returns the gradient, direction and slope.
    fn newton_direction(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut last = None;
        for project in [false, true] {
            let (g, h) = self.linearize(q, project)?;
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            if let Some(d) = h.solve(&neg) {
                let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if slope < -1e-12 * gn * dn || gn == 0.0 {
                    return Ok((g, d, slope));
                }
                last = Some((g, d, slope));
            }
        }
        last.ok_or_else(|| Error::NonFinite { op: "newton solve".into(), step: None })
    }

    /// Gradient and Hessian of the incremental potential.
    fn linearize(&self, q: &[f64], project: bool) -> Result<(Vec<f64>, BandedSym)> {
        let body = self.body;
        let (c1, c2) = self.inertia_coeffs();
        let n = q.len();
        let mut g = vec![0.0; n];
        let mut h = BandedSym::zeros(n, 2 * body.mesh.node_bandwidth() + 1);
        for i in 0..n {
            let m = body.mass[i / 2];
            g[i] = m * (c1 * (q[i] - self.q0[i] - self.h * self.v0[i]) + c2 * (q[i] - self.q0[i])) - self.fext[i];
            h.add(i, i, m * (c1 + c2));
        }
        let qs = unflatten(q);
        for (e, t) in body.mesh.triangles().iter().enumerate() {
            let ev = eval_element(&body.mesh, e, &element_dofs(&qs, t), self.act[e], &self.lame, Some(project))?;
            let he = ev.hess.expect("hessian requested");
            let dof = |k: usize| 2 * t[k / 2] + k % 2;
            for a in 0..6 {
                g[dof(a)] += ev.grad[a];
                for b in 0..6 {
                    if dof(a) > dof(b) || a == b {
                        h.add(dof(a), dof(b), he[a][b]);
                    }
                }
            }
        }
        Ok((g, h))
    }
}

impl SoftBody {
    pub fn new(mesh: Arc<Mesh>, material: Material, solver: SolverOptions) -> Result<SoftBody> {
        material.validate()?;
        if solver.max_iters == 0 {
            return Err(Error::Config("solver needs at least one iteration".into()));
        }
        let mass = mesh.lumped_mass(material.density);
        let (lo, hi) = mesh.rest().iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
        let size = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
        Ok(SoftBody { mesh, material, solver, mass, size })
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Backward Euler: `M (qdot' - qdot) / h = f_ext + f_int(q') - damping M qdot'`, `q' = q + h qdot'`.
    ///
    /// Solved by Newton on the incremental potential. Projected element Hessians are the fallback
    /// when the exact one is not a descent direction, and a backtracking line search rejects
    /// inverted iterates.
    pub fn step(
        &self,
        state: &SoftBodyState,
        f_ext: &[[f64; 2]],
        act: &[f64],
        dt: f64,
    ) -> Result<(SoftBodyState, StepReport)> {
        let q0 = flatten(&state.q);
        let v0 = flatten(&state.qdot);
        let fe = flatten(f_ext);
        let (q, report) = self.solve(&q0, &v0, &fe, act, dt, self.material.youngs)?;
        let qdot: Vec<f64> = q.iter().zip(&q0).map(|(a, b)| (a - b) / dt).collect();
        Ok((SoftBodyState { q: unflatten(&q), qdot: unflatten(&qdot) }, report))
    }

    fn check_inputs(&self, q0: &[f64], v0: &[f64], fe: &[f64], act: &[f64], dt: f64) -> Result<()> {
        let n = 2 * self.mesh.n_nodes();
        if q0.len() != n || v0.len() != n || fe.len() != n {
            return Err(Error::Shape(format!("state and force vectors must have {n} entries")));
        }
        if act.len() != self.mesh.n_elements() {
            return Err(Error::Shape(format!(
                "{} actuation values for {} elements",
                act.len(),
                self.mesh.n_elements()
            )));
        }
        if let Some(e) = act.iter().position(|h| !(h.abs() < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "actuation strain {} of element {e} is not in (-1, 1)",
                act[e]
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if q0.iter().chain(v0).chain(fe).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "softbody input".into(), step: None });
        }
        Ok(())
    }

    fn solve(
        &self,
        q0: &[f64],
        v0: &[f64],
        fe: &[f64],
        act: &[f64],
        dt: f64,
        youngs: f64,
    ) -> Result<(Vec<f64>, StepReport)> {
        self.check_inputs(q0, v0, fe, act, dt)?;
        let material = Material { youngs, ..self.material };
        let prob = Problem { body: self, lame: material.lame(), act, q0, v0, fext: fe, h: dt };
        let mut q: Vec<f64> = q0.iter().zip(v0).map(|(x, v)| x + dt * v).collect();
        let mut phi = match prob.potential(&q) {
            Ok(p) => p,
            Err(_) => {
                q = q0.to_vec();
                prob.potential(&q)?
            }
        };
        let tol = self.solver.tolerance * self.size.max(f64::MIN_POSITIVE);
        let mut report = StepReport { iterations: 0, converged: false, last_step: f64::INFINITY };
        for it in 0..self.solver.max_iters {
            let (_, d, slope) = prob.newton_direction(&q)?;
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = q.iter().zip(&d).map(|(x, s)| x + alpha * s).collect();
                match prob.potential(&trial) {
                    Ok(p) if p <= phi + 1e-4 * alpha * slope || alpha * dmax <= 1e3 * tol => {
                        q = trial;
                        phi = p;
                        accepted = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            report.iterations = it + 1;
            report.last_step = alpha * dmax;
            if !accepted {
                break;
            }
            if alpha * dmax <= tol {
                report.converged = true;
                break;
            }
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "implicit step".into(), step: None });
        }
        if !report.converged {
            log::warn!(
                "implicit step stopped after {} Newton iterations with step {:e} (tolerance {:e})",
                report.iterations,
                report.last_step,
                tol
            );
        }
        Ok((q, report))
    }

    /// Taped implicit step. `q`, `qdot`, `f_ext` are `[N, 2]`, `act` is `[n_elements]`, `youngs` a scalar.
    ///
    /// The backward pass uses the implicit function theorem at the converged solution: one
    /// linear solve with the exact Hessian of the incremental potential.
    #[allow(clippy::too_many_arguments)]
    pub fn step_var(
        self: &Arc<Self>,
        tape: &mut Tape,
        q: Var,
        qdot: Var,
        f_ext: Var,
        act: Var,
        youngs: Var,
        dt: f64,
    ) -> Result<(Var, Var, StepReport)> {
        let n = self.mesh.n_nodes();
        let q0 = tape.value(q).data().to_vec();
        let v0 = tape.value(qdot).data().to_vec();
        let fe = tape.value(f_ext).data().to_vec();
        let hs = tape.value(act).data().to_vec();
        let e = tape.scalar(youngs);
        let (q1, report) = self.solve(&q0, &v0, &fe, &hs, dt, e)?;
        let v1: Vec<f64> = q1.iter().zip(&q0).map(|(a, b)| (a - b) / dt).collect();
        let mut both = q1;
        both.extend_from_slice(&v1);
        let body = Arc::clone(self);
        let out = tape.record(
            "implicit_step",
            &[q, qdot, f_ext, act, youngs],
            Tensor::new(vec![2 * n, 2], both),
            move |ins, out, g, needs| body.adjoint(ins, out, g, needs, dt),
        );
        let q1 = tape.crop2d(out, 0, 0, n, 2);
        let v1 = tape.crop2d(out, n, 0, n, 2);
        Ok((q1, v1, report))
    }

    fn adjoint(&self, ins: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool], dt: f64) -> Vec<Option<Tensor>> {
        let n2 = 2 * self.mesh.n_nodes();
        let q0 = ins[0].data();
        let v0 = ins[1].data();
        let fe = ins[2].data();
        let act = ins[3].data();
        let youngs = ins[4].item();
        let q1 = &out.data()[..n2];
        let (gq, gv) = g.data().split_at(n2);
        let material = Material { youngs, ..self.material };
        let prob = Problem { body: self, lame: material.lame(), act, q0, v0, fext: fe, h: dt };
        let rhs: Vec<f64> = gq.iter().zip(gv).map(|(a, b)| a + b / dt).collect();
        // The forward pass accepted this point, so it is not inverted.
        let (_, h) = prob.linearize(q1, false).expect("converged state is valid");
        let lam = h.solve(&rhs).unwrap_or_else(|| vec![f64::NAN; n2]);
        let (c1, c2) = prob.inertia_coeffs();
        let shape = ins[0].shape().to_vec();
        let gq0 = needs[0].then(|| {
            let d: Vec<f64> = (0..n2).map(|i| self.mass[i / 2] * (c1 + c2) * lam[i] - gv[i] / dt).collect();
            Tensor::new(shape.clone(), d)
        });
        let gv0 = needs[1].then(|| {
            let d: Vec<f64> = (0..n2).map(|i| self.mass[i / 2] * lam[i] / dt).collect();
            Tensor::new(shape.clone(), d)
        });
        let gfe = needs[2].then(|| Tensor::new(shape.clone(), lam.clone()));
        let qs = unflatten(q1);
        let ls = unflatten(&lam);
        let gact = needs[3].then(|| {
            let d: Vec<f64> = self
                .mesh
                .triangles()
                .iter()
                .enumerate()
                .map(|(e, t)| {
                    let mixed = element_mixed(&self.mesh, e, &element_dofs(&qs, t), act[e], &prob.lame);
                    let le = element_dofs(&ls, t);
                    -(0..6).map(|k| mixed[k] * le[k]).sum::<f64>()
                })
                .collect();
            Tensor::new(ins[3].shape().to_vec(), d)
        });
        let gyoungs = needs[4].then(|| {
            let mut dot = 0.0;
            for (e, t) in self.mesh.triangles().iter().enumerate() {
                let ev = eval_element(&self.mesh, e, &element_dofs(&qs, t), act[e], &prob.lame, None)
                    .expect("converged state is valid");
                let le = element_dofs(&ls, t);
                dot -= (0..6).map(|k| ev.grad[k] * le[k]).sum::<f64>();
            }
            Tensor::scalar(dot / youngs)
        });
        vec![gq0, gv0, gfe, gact, gyoungs]
    }
}
