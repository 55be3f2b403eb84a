//! The interleaved fluid/solid loop, its objective and its gradient.
//!
//! Per step `t`: the body at `t` sets the fluid boundary; the surrogate advances the fluid;
//! pressure at `t + 1` is integrated over the body surface; the force is ramped during burn-in;
//! the body takes an implicit step with the actuation at `t + 1`; the optional axis lock
//! projects the new body state back onto the centerline.

mod lock;
mod trajectory;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use trajectory::{read_trajectory_csv, StepRecord, Trajectory, TrajectoryHeader};

use crate::autodiff::{unroll, Checkpointing, ScalarLoss, StepCtx, StepFn, Tape, Tensor, Var};
use crate::coupling::{
    boundary_velocity_var, distribute_forces_var, edge_forces_var, soft_boundary_mask_var, viscous_forces_var,
    wall_mask, BcVars, BoundaryCondition, ForceMode, SoftnessParams,
};
use crate::error::{Error, Result};
use crate::fluid::{FluidParams, FluidState, MacGrid, SurrogateNet};
use crate::softbody::{Material, Mesh, SoftBody, SoftBodyState, SolverOptions};
use crate::swimmer::{build_profile_mesh, Controller, ControllerParams, SwimmerBody, SwimmerSpec};
use lock::AxisLock;

/// Smallest distance between the resting body and the domain border, in cells.
pub const MIN_MARGIN_CELLS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Number of coupled steps.
    pub steps: usize,
    /// Steps over which surface forces ramp up linearly; 0 disables the ramp.
    pub burn_in: usize,
    /// Keep the body centered on its initial axis, removing lateral drift and rotation.
    pub x_lock: bool,
    pub force_mode: ForceMode,
    /// Add the viscous surface traction to the pressure force.
    pub viscous: bool,
    /// Steps per checkpoint segment in the backward pass; 0 keeps the whole graph.
    pub checkpoint_every: usize,
    /// Rest-shape bounding-box center in metres; `None` centers the body in the domain.
    #[serde(default)]
    pub start: Option<[f64; 2]>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            steps: 500,
            burn_in: 50,
            x_lock: true,
            force_mode: ForceMode::Averaged,
            viscous: false,
            checkpoint_every: 10,
            start: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("an episode needs at least one step".into()));
        }
        Ok(())
    }

    fn checkpointing(&self) -> Checkpointing {
        match self.checkpoint_every {
            0 => Checkpointing::Off,
            n => Checkpointing::Every(n),
        }
    }
}

/// `f * min(t / N, 1)`; `N = 0` leaves the force unchanged.
pub fn burn_in_scale(f: [f64; 2], t: usize, n: usize) -> [f64; 2] {
    let s = burn_in_factor(t, n);
    [f[0] * s, f[1] * s]
}

pub fn burn_in_factor(t: usize, n: usize) -> f64 {
    if n == 0 || t >= n {
        1.0
    } else {
        t as f64 / n as f64
    }
}

/// Everything that defines a coupled episode apart from the network and the controller.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scenario {
    pub grid: MacGrid,
    pub fluid: FluidParams,
    pub softness: SoftnessParams,
    pub swimmer: SwimmerSpec,
    pub material: Material,
    pub solver: SolverOptions,
    pub episode: EpisodeConfig,
}

/// A prepared episode: meshed and placed body, controller and frozen network.
#[derive(Clone, Debug)]
pub struct Episode {
    pub scenario: Scenario,
    pub net: Arc<SurrogateNet>,
    pub body: Arc<SoftBody>,
    pub swimmer: SwimmerBody,
    pub controller: Controller,
    walls: Tensor,
    lock: AxisLock,
}

/// Values handed to an observer after every forward step.
pub struct StepView<'a> {
    pub step: usize,
    pub time: f64,
    pub fluid: &'a FluidState,
    pub boundary: &'a BoundaryCondition,
    pub body: &'a SoftBodyState,
    pub record: &'a StepRecord,
}

#[derive(Clone, Debug)]
pub struct EpisodeGradient {
    pub objective: f64,
    pub d_omega: f64,
    pub d_youngs: f64,
    pub trajectory: Trajectory,
}

/// Wall time spent in each part of the forward steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepTimings {
    /// Mask, boundary velocity and surface forces.
    pub coupling: Duration,
    pub fluid: Duration,
    pub solid: Duration,
}

/// Tape variables produced by one coupled step.
pub(crate) struct StepVars {
    pub bc: BcVars,
    pub a1: Var,
    pub p1: Var,
    pub force_raw: Var,
    pub force: Var,
    pub q1: Var,
    pub v1: Var,
    pub objective: Var,
}

const PARAM_OMEGA: usize = 0;
const PARAM_YOUNGS: usize = 1;

impl Episode {
    pub fn new(scenario: &Scenario, net: Arc<SurrogateNet>) -> Result<Episode> {
        let sc = scenario;
        sc.grid.validate()?;
        sc.fluid.validate()?;
        sc.softness.validate()?;
        sc.episode.validate()?;
        let swimmer = build_profile_mesh(&sc.swimmer)?;
        let (w, h) = (sc.grid.width(), sc.grid.height());
        let (lo, hi) = bounds(swimmer.mesh.rest());
        let center = sc.episode.start.unwrap_or([0.5 * w, 0.5 * h]);
        let shift = [center[0] - 0.5 * (lo[0] + hi[0]), center[1] - 0.5 * (lo[1] + hi[1])];
        let margin = [lo[0] + shift[0], lo[1] + shift[1], w - hi[0] - shift[0], h - hi[1] - shift[1]]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if margin < MIN_MARGIN_CELLS * sc.grid.dx {
            return Err(Error::Config(format!(
                "swimmer is {:.1} cells from the domain border, need at least {MIN_MARGIN_CELLS}",
                margin / sc.grid.dx
            )));
        }
        let placed: Vec<[f64; 2]> = swimmer.mesh.rest().iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        let mesh = Mesh::new(placed, swimmer.mesh.triangles().to_vec(), swimmer.mesh.surface().to_vec())?;
        let swimmer = SwimmerBody { mesh: mesh.clone(), ..swimmer };
        let body = Arc::new(SoftBody::new(Arc::new(mesh), sc.material, sc.solver)?);
        let controller = Controller::new(&sc.swimmer, &swimmer.actuators.stations)?;
        let lock = AxisLock::new(body.mesh.rest(), body.masses());
        Ok(Episode { scenario: sc.clone(), net, body, swimmer, controller, walls: wall_mask(&sc.grid), lock })
    }

    pub fn grid(&self) -> &MacGrid {
        &self.scenario.grid
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.scenario.episode
    }

    pub fn initial_body(&self) -> SoftBodyState {
        SoftBodyState::at_rest(&self.body.mesh)
    }

    pub fn head(&self, q: &[[f64; 2]]) -> [f64; 2] {
        let n = self.swimmer.head_nodes.len() as f64;
        let s = self.swimmer.head_nodes.iter().fold([0.0; 2], |acc, &i| [acc[0] + q[i][0], acc[1] + q[i][1]]);
        [s[0] / n, s[1] / n]
    }

    fn initial_state(&self) -> Vec<Tensor> {
        let body = self.initial_body();
        let fluid = FluidState::at_rest(self.grid());
        vec![to_tensor(&body.q), to_tensor(&body.qdot), fluid.a, fluid.p, Tensor::scalar(0.0)]
    }

    fn params(&self, params: &ControllerParams) -> Vec<Tensor> {
        vec![Tensor::scalar(params.omega), Tensor::scalar(self.scenario.material.youngs)]
    }

    /// Boundary mask and velocity from the body state; walls are solid and at rest.
    pub(crate) fn boundary_vars(&self, tape: &mut Tape, q: Var, qdot: Var) -> (BcVars, Var) {
        let grid = self.grid();
        let surface = self.body.mesh.surface();
        let pts = tape.select_rows(q, surface);
        let vel = tape.select_rows(qdot, surface);
        let fish = soft_boundary_mask_var(tape, pts, grid, &self.scenario.softness);
        let (vd_x, vd_y) = boundary_velocity_var(tape, pts, vel, fish, grid, &self.scenario.softness);
        let walls = tape.constant(self.walls.clone());
        let open = tape.constant(self.walls.map(|w| 1.0 - w));
        let inner = tape.mul(open, fish);
        let b = tape.add(walls, inner);
        (BcVars { b, vd_x, vd_y }, fish)
    }

    /// One coupled step on `tape`.
    pub(crate) fn step_vars(
        &self,
        tape: &mut Tape,
        t: usize,
        params: &[Var],
        state: &[Var],
        timings: &mut StepTimings,
    ) -> Result<StepVars> {
        let sc = &self.scenario;
        let grid = &sc.grid;
        let (q, qdot, a, p, objective) = (state[0], state[1], state[2], state[3], state[4]);
        let clock = Instant::now();
        let (bc, fish) = self.boundary_vars(tape, q, qdot);
        let mid = Instant::now();
        timings.coupling += mid - clock;
        let w = self.net.vars(tape, false);
        let (a1, p1) = self.net.predict_var(tape, &w, a, p, &bc, grid)?;
        let clock = Instant::now();
        timings.fluid += clock - mid;

        let sigma_prime = sc.softness.sigma_prime(grid);
        let verts = tape.select_rows(q, self.body.mesh.surface());
        let mut forces = edge_forces_var(tape, verts, p1, fish, grid, sigma_prime)?;
        if sc.episode.viscous {
            let visc = viscous_forces_var(tape, verts, a1, fish, sc.fluid.mu, grid, sigma_prime)?;
            forces = tape.add(forces, visc);
        }
        let n = self.body.mesh.n_nodes();
        let (total, nodal) = distribute_forces_var(tape, forces, n, sc.episode.force_mode, self.body.mesh.surface());
        let s = burn_in_factor(t, sc.episode.burn_in);
        let force = tape.scale(total, s);
        let nodal = tape.scale(nodal, s);

        let mid = Instant::now();
        timings.coupling += mid - clock;
        let time = (t + 1) as f64 * grid.dt;
        let signals = self.controller.signals_var(tape, params[PARAM_OMEGA], time);
        let act = self.swimmer.actuators.strains_var(tape, signals);
        let (mut q1, mut v1, report) = self.body.step_var(tape, q, qdot, nodal, act, params[PARAM_YOUNGS], grid.dt)?;
        if !report.converged {
            log::debug!("step {t}: solid solve stopped after {} iterations", report.iterations);
        }
        if sc.episode.x_lock {
            (q1, v1) = self.lock.apply(tape, q1, v1);
        }
        timings.solid += mid.elapsed();
        let fx = tape.gather(force, &[0]);
        let fx = tape.reshape(fx, &[]);
        let objective = tape.sub(objective, fx);
        Ok(StepVars { bc, a1, p1, force_raw: total, force, q1, v1, objective })
    }

    /// Runs the episode and records its trajectory.
    pub fn run_forward(&self, params: &ControllerParams) -> Result<Trajectory> {
        self.run_forward_observed(params, |_| {})
    }

    /// [`Episode::run_forward`] calling `observer` after every step.
    pub fn run_forward_observed(
        &self,
        params: &ControllerParams,
        observer: impl FnMut(&StepView),
    ) -> Result<Trajectory> {
        Ok(self.run_forward_timed(params, observer)?.0)
    }

    /// [`Episode::run_forward_observed`] that also reports where the time went.
    pub fn run_forward_timed(
        &self,
        params: &ControllerParams,
        observer: impl FnMut(&StepView),
    ) -> Result<(Trajectory, StepTimings)> {
        let mut stepper = Stepper::new(self, Some(Box::new(observer)));
        let out = unroll(
            &mut stepper,
            &self.params(params),
            &self.initial_state(),
            self.config().steps,
            Checkpointing::Every(usize::MAX),
        )?;
        let timings = stepper.timings;
        Ok((stepper.finish(out.final_state), timings))
    }

    /// Objective gradient wrt the controller frequency and Young's modulus.
    pub fn run_backward(&self, params: &ControllerParams) -> Result<EpisodeGradient> {
        self.run_backward_with(params, self.config().checkpointing())
    }

    pub fn run_backward_with(&self, params: &ControllerParams, mode: Checkpointing) -> Result<EpisodeGradient> {
        let mut stepper = Stepper::new(self, None);
        let out = unroll(&mut stepper, &self.params(params), &self.initial_state(), self.config().steps, mode)?;
        let final_state = out.final_state.clone();
        let grads = out.backward_scalar(&mut stepper, 4)?;
        let trajectory = stepper.finish(final_state);
        Ok(EpisodeGradient {
            objective: trajectory.objective,
            d_omega: grads.params[PARAM_OMEGA].item(),
            d_youngs: grads.params[PARAM_YOUNGS].item(),
            trajectory,
        })
    }

    /// Largest resting force magnitude over `steps` unactuated steps without burn-in.
    pub fn resting_noise(&self, steps: usize) -> Result<f64> {
        let mut quiet = self.scenario.clone();
        quiet.swimmer.actuation.amplitude = 0.0;
        quiet.episode.steps = steps.max(1);
        quiet.episode.burn_in = 0;
        let ep = Episode::new(&quiet, Arc::clone(&self.net))?;
        let traj = ep.run_forward(&ControllerParams { omega: 0.0 })?;
        Ok(traj.records.iter().map(|r| r.force_raw[0].hypot(r.force_raw[1])).fold(0.0, f64::max))
    }
}

/// The episode objective as a function of the controller frequency, for finite-difference checks.
pub struct FrequencyObjective<'a>(pub &'a Episode);

impl ScalarLoss for FrequencyObjective<'_> {
    fn value(&mut self, omega: f64) -> Result<f64> {
        Ok(self.0.run_forward(&ControllerParams { omega })?.objective)
    }

    fn value_and_grad(&mut self, omega: f64) -> Result<(f64, f64)> {
        let g = self.0.run_backward(&ControllerParams { omega })?;
        Ok((g.objective, g.d_omega))
    }
}

type Observer<'a> = Box<dyn FnMut(&StepView) + 'a>;

struct Stepper<'a> {
    episode: &'a Episode,
    observer: Option<Observer<'a>>,
    records: Vec<StepRecord>,
    timings: StepTimings,
}

impl<'a> Stepper<'a> {
    fn new(episode: &'a Episode, observer: Option<Observer<'a>>) -> Self {
        Stepper {
            episode,
            observer,
            records: Vec::with_capacity(episode.config().steps),
            timings: StepTimings::default(),
        }
    }

    fn finish(self, final_state: Vec<Tensor>) -> Trajectory {
        let ep = self.episode;
        let q = from_tensor(&final_state[0]);
        let qdot = from_tensor(&final_state[1]);
        let initial_head = ep.head(ep.body.mesh.rest());
        Trajectory {
            objective: final_state[4].item(),
            records: self.records,
            initial_head,
            final_body: SoftBodyState { q, qdot },
            final_fluid: FluidState { a: final_state[2].clone(), p: final_state[3].clone() },
        }
    }
}

impl StepFn for Stepper<'_> {
    fn step(&mut self, tape: &mut Tape, ctx: StepCtx, params: &[Var], state: &[Var]) -> Result<Vec<Var>> {
        let ep = self.episode;
        let v = ep.step_vars(tape, ctx.step, params, state, &mut self.timings)?;
        let out = vec![v.q1, v.v1, v.a1, v.p1, v.objective];
        if ctx.replay {
            return Ok(out);
        }
        let q1 = from_tensor(tape.value(v.q1));
        let pair = |x: Var| {
            let d = tape.value(x).data();
            [d[0], d[1]]
        };
        let record = StepRecord {
            step: ctx.step,
            time: (ctx.step + 1) as f64 * ep.grid().dt,
            head: ep.head(&q1),
            force_raw: pair(v.force_raw),
            force: pair(v.force),
            objective: tape.scalar(v.objective),
        };
        if let Some(obs) = self.observer.as_mut() {
            let fluid = FluidState { a: tape.value(v.a1).clone(), p: tape.value(v.p1).clone() };
            let boundary = BoundaryCondition::from_vars(tape, &v.bc);
            let body = SoftBodyState { q: q1, qdot: from_tensor(tape.value(v.v1)) };
            obs(&StepView {
                step: ctx.step,
                time: record.time,
                fluid: &fluid,
                boundary: &boundary,
                body: &body,
                record: &record,
            });
        }
        self.records.push(record);
        Ok(out)
    }
}

fn bounds(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    points.iter().fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), p| {
        ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
    })
}

fn to_tensor(v: &[[f64; 2]]) -> Tensor {
    Tensor::new(vec![v.len(), 2], v.iter().flatten().copied().collect())
}

fn from_tensor(t: &Tensor) -> Vec<[f64; 2]> {
    t.data().chunks(2).map(|c| [c[0], c[1]]).collect()
}
