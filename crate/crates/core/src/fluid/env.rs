use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::MacGrid;
use super::state::stagger;
use crate::autodiff::Tensor;
use crate::coupling::{center_velocity, soft_boundary_mask, wall_mask, BoundaryCondition, SoftnessParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Frames per generated scene.
    pub frames: usize,
    /// Largest uniform through-flow speed imposed on the walls, m/s.
    pub max_inflow: f64,
    /// Chance that a scene has through-flow at all.
    pub inflow_probability: f64,
    /// Obstacle count range, inclusive.
    pub obstacles: [usize; 2],
    /// Largest obstacle translation speed, m/s.
    pub max_obstacle_speed: f64,
    /// Chance that an obstacle is a swimmer-like undulating profile instead of an ellipse.
    pub swimmer_probability: f64,
    /// Largest obstacle extent as a fraction of the domain height.
    pub max_size: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            frames: 64,
            max_inflow: 0.05,
            inflow_probability: 0.5,
            obstacles: [1, 3],
            max_obstacle_speed: 0.1,
            swimmer_probability: 0.5,
            max_size: 0.6,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.obstacles;
        if self.frames < 2 || lo < 1 || hi < lo || hi > 3 {
            return Err(Error::Config("scenes need >= 2 frames and 1..=3 obstacles".into()));
        }
        if !(self.max_inflow >= 0.0 && self.max_obstacle_speed >= 0.0) {
            return Err(Error::Config("speeds must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.inflow_probability) || !(0.0..=1.0).contains(&self.swimmer_probability) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if !(self.max_size > 0.0 && self.max_size <= 0.8) {
            return Err(Error::Config("max_size must be in (0, 0.8]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Ellipse { a: f64, b: f64 },
    Swimmer { length: f64, amplitude: f64, wave: f64, freq: f64 },
}

/// A rigid or undulating body moving on a bounded oscillatory path.
#[derive(Clone, Debug, PartialEq)]
struct Obstacle {
    shape: Shape,
    center: [f64; 2],
    sway: [f64; 2],
    sway_freq: f64,
    sway_phase: f64,
    angle: f64,
    spin: f64,
}

const LOOP_POINTS: usize = 32;

impl Obstacle {
    fn local_points(&self, t: f64) -> Vec<[f64; 2]> {
        match self.shape {
            Shape::Ellipse { a, b } => (0..LOOP_POINTS)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / LOOP_POINTS as f64;
                    [a * th.cos(), b * th.sin()]
                })
                .collect(),
            Shape::Swimmer { length, amplitude, wave, freq } => {
                let half = LOOP_POINTS / 2;
                let spec = crate::swimmer::SwimmerSpec { length, ..Default::default() };
                let station = |k: usize| length * k as f64 / half as f64;
                let sway = |x: f64| amplitude * (1.0 - x / length) * (wave * x + freq * t).sin();
                let mut pts = Vec::with_capacity(LOOP_POINTS);
                for k in 0..half {
                    let x = station(k);
                    pts.push([x - 0.5 * length, sway(x) - spec.half_width(x)]);
                }
                for k in (1..=half).rev() {
                    let x = station(k);
                    pts.push([x - 0.5 * length, sway(x) + spec.half_width(x)]);
                }
                pts
            }
        }
    }

    fn points(&self, t: f64) -> Vec<[f64; 2]> {
        let s = (self.sway_freq * t + self.sway_phase).sin();
        let c = [self.center[0] + self.sway[0] * s, self.center[1] + self.sway[1] * s];
        let th = self.angle + self.spin * t;
        let (sn, cs) = th.sin_cos();
        self.local_points(t).into_iter().map(|p| [c[0] + cs * p[0] - sn * p[1], c[1] + sn * p[0] + cs * p[1]]).collect()
    }

    fn velocities(&self, t: f64) -> Vec<[f64; 2]> {
        let eps = 1e-6;
        let a = self.points(t + eps);
        let b = self.points((t - eps).max(0.0));
        let span = t + eps - (t - eps).max(0.0);
        a.iter().zip(&b).map(|(p, q)| [(p[0] - q[0]) / span, (p[1] - q[1]) / span]).collect()
    }

    fn radius(&self) -> f64 {
        match self.shape {
            Shape::Ellipse { a, b } => a.max(b),
            Shape::Swimmer { length, amplitude, .. } => 0.5 * length + amplitude + 0.1 * length,
        }
    }
}

/// A randomized training scene: walls, optional through-flow and moving obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingEnv {
    pub grid: MacGrid,
    pub inflow: f64,
    pub frames: usize,
    obstacles: Vec<Obstacle>,
    softness: SoftnessParams,
}

/// Draws a scene from `seed`; the same seed always gives the same scene.
pub fn generate_training_env(seed: u64, grid: &MacGrid, config: &EnvConfig, softness: &SoftnessParams) -> TrainingEnv {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inflow = if rng.random_bool(config.inflow_probability) && config.max_inflow > 0.0 {
        rng.random_range(0.0..=config.max_inflow)
    } else {
        0.0
    };
    let (w, h) = (grid.width(), grid.height());
    let margin = 3.0 * grid.dx;
    let count = rng.random_range(config.obstacles[0]..=config.obstacles[1]);
    let duration = config.frames as f64 * grid.dt;
    let mut obstacles = Vec::with_capacity(count);
    let size = config.max_size * h;
    for _ in 0..count {
        let shape = if rng.random_bool(config.swimmer_probability) {
            let length = rng.random_range(0.4..=1.0) * size;
            Shape::Swimmer {
                length,
                amplitude: rng.random_range(0.0..=0.08) * length,
                wave: 2.0 * PI / length,
                freq: rng.random_range(2.0..=8.0) * 2.0 * PI,
            }
        } else {
            let a = rng.random_range(0.15..=0.5) * size;
            let b = rng.random_range(0.1..=0.35) * size;
            Shape::Ellipse { a, b }
        };
        let speed = rng.random_range(0.0..=config.max_obstacle_speed);
        let sway_freq = rng.random_range(0.5..=4.0) * 2.0 * PI / duration.max(grid.dt);
        let dir = rng.random_range(0.0..2.0 * PI);
        let amp = speed / sway_freq;
        let mut ob = Obstacle {
            shape,
            center: [0.0; 2],
            sway: [amp * dir.cos(), amp * dir.sin()],
            sway_freq,
            sway_phase: rng.random_range(0.0..2.0 * PI),
            angle: rng.random_range(0.0..2.0 * PI),
            spin: rng.random_range(-1.0..=1.0),
        };
        let reach = ob.radius() + margin;
        let room = |extent: f64, sway: f64| (reach + sway.abs(), extent - reach - sway.abs());
        let (x0, x1) = room(w, ob.sway[0]);
        let (y0, y1) = room(h, ob.sway[1]);
        let pick = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, extent: f64| {
            if lo < hi {
                rng.random_range(lo..=hi)
            } else {
                0.5 * extent
            }
        };
        ob.center = [pick(&mut rng, x0, x1, w), pick(&mut rng, y0, y1, h)];
        obstacles.push(ob);
    }
    TrainingEnv { grid: *grid, inflow, frames: config.frames, obstacles, softness: *softness }
}

impl TrainingEnv {
    pub fn n_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    /// Obstacle mask and boundary condition at `frame`.
    pub fn frame(&self, frame: usize) -> BoundaryCondition {
        let grid = &self.grid;
        let t = frame as f64 * grid.dt;
        let n = grid.n_cells();
        let bw = wall_mask(grid);
        let mut free = vec![1.0; n];
        let mut ux = vec![0.0; n];
        let mut uy = vec![0.0; n];
        for ob in &self.obstacles {
            let pts = ob.points(t);
            let vel = ob.velocities(t);
            let bk = soft_boundary_mask(&pts, grid, &self.softness);
            let (cx, cy) = center_velocity(&pts, &vel, grid, self.softness.tau);
            for c in 0..n {
                let b = bk.data()[c];
                free[c] *= 1.0 - b;
                ux[c] += b * cx.data()[c];
                uy[c] += b * cy.data()[c];
            }
        }
        let mut b = Vec::with_capacity(n);
        for c in 0..n {
            let w = bw.data()[c];
            b.push(w + (1.0 - w) * (1.0 - free[c]));
            ux[c] = w * self.inflow + (1.0 - w) * ux[c];
            uy[c] *= 1.0 - w;
        }
        let shape = grid.center_shape().to_vec();
        let (vd_x, _) = stagger(&Tensor::new(shape.clone(), ux), grid);
        let (_, vd_y) = stagger(&Tensor::new(shape.clone(), uy), grid);
        BoundaryCondition { b: Tensor::new(shape, b), vd_x, vd_y }
    }

    /// Fraction of the interior (non-wall) cells covered by obstacles at `frame`.
    pub fn obstacle_fraction(&self, frame: usize) -> f64 {
        let grid = &self.grid;
        let t = frame as f64 * grid.dt;
        let bw = wall_mask(grid);
        let mut free = vec![1.0; grid.n_cells()];
        for ob in &self.obstacles {
            let bk = soft_boundary_mask(&ob.points(t), grid, &self.softness);
            for (f, b) in free.iter_mut().zip(bk.data()) {
                *f *= 1.0 - b;
            }
        }
        let interior: Vec<f64> = free.iter().zip(bw.data()).filter(|(_, w)| **w == 0.0).map(|(f, _)| 1.0 - f).collect();
        interior.iter().sum::<f64>() / interior.len() as f64
    }
}
