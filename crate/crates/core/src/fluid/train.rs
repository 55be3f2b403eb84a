use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{generate_training_env, EnvConfig, TrainingEnv};
use super::grid::MacGrid;
use super::loss::{ns_residual_loss, FluidParams, LossValue};
use super::net::SurrogateNet;
use super::state::{velocity_from_curl, FluidState};
use crate::autodiff::{Tape, Tensor};
use crate::coupling::{BoundaryCondition, SoftnessParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Number of concurrent scenes in the replay pool.
    pub pool_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the last iteration as a fraction of the first; decays geometrically.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Seed for weights, scenes and sampling.
    pub seed: u64,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 4,
            pool_size: 32,
            learning_rate: 1e-3,
            final_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.pool_size < self.batch_size {
            return Err(Error::Config("need 1 <= batch_size <= pool_size".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be positive and betas in [0, 1)".into()));
        }
        self.env.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: LossValue,
}

pub struct TrainResult {
    pub net: SurrogateNet,
    pub history: Vec<LossRecord>,
}

/// Plain Adam over a list of tensors.
struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
}

impl Adam {
    fn new(net: &mut SurrogateNet, cfg: &TrainConfig) -> Adam {
        let zeros: Vec<Tensor> = net.params_mut().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0, lr: cfg.learning_rate, b1: cfg.beta1, b2: cfg.beta2 }
    }

    fn step(&mut self, net: &mut SurrogateNet, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for (((p, g), m), v) in net.params_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.b1 * *mi + (1.0 - self.b1) * gi;
                *vi = self.b2 * *vi + (1.0 - self.b2) * gi * gi;
                *pi -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + 1e-8);
            }
        }
    }
}

struct PoolEntry {
    env: TrainingEnv,
    frame: usize,
    state: FluidState,
}

fn fresh_entry(rng: &mut ChaCha8Rng, grid: &MacGrid, cfg: &TrainConfig, softness: &SoftnessParams) -> PoolEntry {
    let seed = rng.random::<u64>();
    PoolEntry { env: generate_training_env(seed, grid, &cfg.env, softness), frame: 0, state: FluidState::at_rest(grid) }
}

/// Unsupervised training against the residual loss with a replay pool of predicted states.
///
/// Each iteration advances a batch of pool states by one predicted step, minimizes the mean
/// residual loss of those steps, and writes the predictions back to the pool. A scene that
/// runs out of frames is replaced by a fresh one at rest.
pub fn train_network(
    mut net: SurrogateNet,
    grid: &MacGrid,
    params: &FluidParams,
    softness: &SoftnessParams,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<TrainResult> {
    grid.validate()?;
    params.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_edf1_u64);
    let mut pool: Vec<PoolEntry> = (0..cfg.pool_size).map(|_| fresh_entry(&mut rng, grid, cfg, softness)).collect();
    // stagger starting frames so the pool covers whole scenes early on
    for (k, e) in pool.iter_mut().enumerate() {
        e.frame = k * e.env.frames / cfg.pool_size.max(1) % (e.env.frames - 1);
    }
    let mut adam = Adam::new(&mut net, cfg);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut initial: Option<f64> = None;
    for it in 0..cfg.iterations {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..cfg.pool_size)).collect();
        let mut tape = Tape::new();
        let w = net.vars(&mut tape, true);
        let mut totals = Vec::with_capacity(batch.len());
        let mut sums = LossValue { l_p: 0.0, l_b: 0.0, total: 0.0 };
        let mut predicted = Vec::with_capacity(batch.len());
        for &k in &batch {
            let e = &pool[k];
            let bc = e.env.frame(e.frame + 1);
            let bcv = bc.constants(&mut tape);
            let a0 = tape.constant(e.state.a.clone());
            let p0 = tape.constant(e.state.p.clone());
            let (a1, p1) = net.predict_var(&mut tape, &w, a0, p0, &bcv, grid)?;
            let parts = ns_residual_loss(&mut tape, a0, a1, p1, &bcv, params, grid);
            let v = parts.value(&tape);
            sums.l_p += v.l_p;
            sums.l_b += v.l_b;
            sums.total += v.total;
            totals.push(parts.total);
            predicted.push((k, FluidState { a: tape.value(a1).clone(), p: tape.value(p1).clone() }));
        }
        tape.check().map_err(|e| e.at_step(it))?;
        let nb = batch.len() as f64;
        let loss = LossValue { l_p: sums.l_p / nb, l_b: sums.l_b / nb, total: sums.total / nb };
        let init = *initial.get_or_insert(loss.total);
        if !(loss.total <= 1e6 * init.max(f64::MIN_POSITIVE)) {
            return Err(Error::Diverged { iteration: it, loss: loss.total, initial: init });
        }
        let sum = tape.add_all(&totals);
        let mean = tape.scale(sum, 1.0 / nb);
        let grads = tape.backward(mean)?;
        let g: Vec<Tensor> = w.layers.iter().flat_map(|&(a, b)| [grads.wrt(a), grads.wrt(b)]).collect();
        let progress = it as f64 / (cfg.iterations.max(2) - 1) as f64;
        adam.lr = cfg.learning_rate * cfg.final_lr_fraction.powf(progress);
        adam.step(&mut net, &g);
        for (k, state) in predicted {
            let e = &mut pool[k];
            e.state = state;
            e.frame += 1;
            if e.frame + 1 >= e.env.frames {
                *e = fresh_entry(&mut rng, grid, cfg, softness);
            }
        }
        let rec = LossRecord { iteration: it, loss };
        on_record(&rec);
        history.push(rec);
    }
    Ok(TrainResult { net, history })
}

/// Writes `iteration,L_p,L_b,L` rows.
pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,L_p,L_b,L")?;
    for r in history {
        writeln!(f, "{},{:?},{:?},{:?}", r.iteration, r.loss.l_p, r.loss.l_b, r.loss.total)?;
    }
    f.flush()?;
    Ok(())
}

/// Root-mean-square velocity mismatch on solid faces and the RMS of the imposed speeds there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryError {
    pub rms_error: f64,
    pub rms_speed: f64,
}

impl BoundaryError {
    pub fn relative(&self) -> f64 {
        self.rms_error / self.rms_speed
    }
}

/// Rolls the network through `steps` frames of `env` from rest and measures the boundary mismatch
/// on faces whose averaged mask exceeds 0.5, excluding the outer wall ring.
pub fn boundary_velocity_error(net: &SurrogateNet, env: &TrainingEnv, steps: usize) -> Result<BoundaryError> {
    let grid = env.grid;
    let mut state = FluidState::at_rest(&grid);
    let (mut err2, mut spd2, mut count) = (0.0, 0.0, 0usize);
    for t in 0..steps.min(env.frames - 1) {
        let bc = env.frame(t + 1);
        state = net.predict_step(&state, &bc, &grid)?;
        let (vx, vy) = velocity_from_curl(&state.a, &grid)?;
        accumulate(&grid, &bc, &vx, &vy, &mut err2, &mut spd2, &mut count);
    }
    if count == 0 {
        return Err(Error::InvalidArgument("scene has no interior boundary faces".into()));
    }
    Ok(BoundaryError { rms_error: (err2 / count as f64).sqrt(), rms_speed: (spd2 / count as f64).sqrt() })
}

fn accumulate(
    grid: &MacGrid,
    bc: &BoundaryCondition,
    vx: &Tensor,
    vy: &Tensor,
    err2: &mut f64,
    spd2: &mut f64,
    count: &mut usize,
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let b = bc.b.data();
    for j in 1..ny - 1 {
        for i in 2..nx - 1 {
            let bf = 0.5 * (b[j * nx + i - 1] + b[j * nx + i]);
            if bf > 0.5 {
                let k = j * (nx + 1) + i;
                let d = vx.data()[k] - bc.vd_x.data()[k];
                *err2 += d * d;
                *spd2 += bc.vd_x.data()[k].powi(2);
                *count += 1;
            }
        }
    }
    for j in 2..ny - 1 {
        for i in 1..nx - 1 {
            let bf = 0.5 * (b[(j - 1) * nx + i] + b[j * nx + i]);
            if bf > 0.5 {
                let k = j * nx + i;
                let d = vy.data()[k] - bc.vd_y.data()[k];
                *err2 += d * d;
                *spd2 += bc.vd_y.data()[k].powi(2);
                *count += 1;
            }
        }
    }
}
