//! Controller frequency optimization: log-space Adam on the episode gradient and a 1D CMA-ES baseline.

mod cmaes;
mod plot;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cmaes::{cmaes_baseline, CmaesConfig};
pub use plot::write_history_svg;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gradient,
    Cmaes,
}

/// One logged point of an optimization run. Objectives are minimized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptRecord {
    pub iteration: usize,
    /// Objective evaluations spent so far, this one included.
    pub evaluations: usize,
    /// Angular frequency in rad/s.
    pub omega: f64,
    pub objective: f64,
    /// `dL/domega`; NaN for gradient-free methods.
    pub gradient: f64,
    pub best_objective: f64,
    pub best_omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptRun {
    pub method: Method,
    pub history: Vec<OptRecord>,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl OptRun {
    pub fn best(&self) -> Option<&OptRecord> {
        self.history.last()
    }

    pub fn evaluations(&self) -> usize {
        self.history.last().map_or(0, |r| r.evaluations)
    }

    /// Evaluations spent before some evaluated frequency came within `tol` rad/s of `target`.
    pub fn evaluations_to_reach(&self, target: f64, tol: f64) -> Option<usize> {
        self.history.iter().find(|r| (r.best_omega - target).abs() <= tol).map(|r| r.evaluations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    /// Starting frequency in Hz.
    pub omega0_hz: f64,
    pub iterations: usize,
    /// Step size in rad/s at the starting frequency; applied in log space as `lr / omega0`.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Upper bound on the frequency in Hz.
    pub omega_max_hz: f64,
    /// Learning-rate halvings allowed when an evaluation fails.
    pub max_retries: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            omega0_hz: 2.0,
            iterations: 25,
            learning_rate: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            omega_max_hz: 20.0,
            max_retries: 3,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("the optimizer needs iterations >= 1 and a positive learning rate".into()));
        }
        if !(self.omega0_hz > 0.0 && self.omega0_hz <= self.omega_max_hz) {
            return Err(Error::Config("starting frequency must lie in (0, omega_max_hz]".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(Error::Config("Adam moments need betas in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

pub fn hz_to_omega(hz: f64) -> f64 {
    2.0 * PI * hz
}

pub fn omega_to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Failures that mean "this frequency is unusable" rather than "the setup is wrong".
fn is_instability(e: &Error) -> bool {
    matches!(
        e,
        Error::Unstable { .. } | Error::NonFinite { .. } | Error::ElementInverted { .. } | Error::LeftGrid { .. }
    )
}

/// Minimizes `L(omega)` with Adam on `u = ln omega`.
///
/// `evaluate` returns the objective and `dL/domega`. When an evaluation fails with an
/// instability the step is retried from the last accepted point with half the learning
/// rate, at most `max_retries` times; after that the run stops and keeps its history.
pub fn optimize_frequency(
    cfg: &AdamConfig,
    mut evaluate: impl FnMut(f64) -> Result<(f64, f64)>,
    mut on_record: impl FnMut(&OptRecord),
) -> Result<OptRun> {
    cfg.validate()?;
    let omega0 = hz_to_omega(cfg.omega0_hz);
    let u_max = hz_to_omega(cfg.omega_max_hz).ln();
    let mut lr = cfg.learning_rate / omega0;
    let mut u = omega0.ln();
    let (mut m, mut v) = (0.0, 0.0);
    let mut history: Vec<OptRecord> = Vec::with_capacity(cfg.iterations + 1);
    let mut evaluations = 0;

    let (mut f, mut g) = evaluate(omega0)?;
    evaluations += 1;
    let mut best = (f, omega0);
    let first = OptRecord {
        iteration: 0,
        evaluations,
        omega: omega0,
        objective: f,
        gradient: g,
        best_objective: f,
        best_omega: omega0,
    };
    on_record(&first);
    history.push(first);

    for it in 1..=cfg.iterations {
        let gu = g * u.exp();
        let m1 = cfg.beta1 * m + (1.0 - cfg.beta1) * gu;
        let v1 = cfg.beta2 * v + (1.0 - cfg.beta2) * gu * gu;
        let mh = m1 / (1.0 - cfg.beta1.powi(it as i32));
        let vh = v1 / (1.0 - cfg.beta2.powi(it as i32));
        let mut retries = 0;
        let accepted = loop {
            let u1 = (u - lr * mh / (vh.sqrt() + cfg.epsilon)).min(u_max);
            let omega = u1.exp();
            evaluations += 1;
            match evaluate(omega) {
                Ok(fg) => break Some((u1, fg)),
                Err(e) if is_instability(&e) && retries < cfg.max_retries => {
                    log::warn!("iteration {it}: {e}; halving the learning rate");
                    lr *= 0.5;
                    retries += 1;
                }
                Err(e) if is_instability(&e) => {
                    log::warn!("iteration {it}: {e}; giving up");
                    break None;
                }
                Err(e) => return Err(e),
            }
        };
        let Some((u1, (f1, g1))) = accepted else {
            return Ok(OptRun {
                method: Method::Gradient,
                history,
                aborted: Some(format!("unstable episode at iteration {it} after {} retries", cfg.max_retries)),
            });
        };
        (u, m, v, f, g) = (u1, m1, v1, f1, g1);
        let omega = u.exp();
        if f < best.0 {
            best = (f, omega);
        }
        let rec = OptRecord {
            iteration: it,
            evaluations,
            omega,
            objective: f,
            gradient: g,
            best_objective: best.0,
            best_omega: best.1,
        };
        on_record(&rec);
        history.push(rec);
    }
    Ok(OptRun { method: Method::Gradient, history, aborted: None })
}

/// Writes `iteration,evaluations,omega_hz,objective,gradient,best_objective,best_omega_hz`.
pub fn write_history_csv(path: &Path, run: &OptRun) -> Result<()> {
    let mut s = String::from("iteration,evaluations,omega_hz,objective,gradient,best_objective,best_omega_hz\n");
    for r in &run.history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.evaluations,
            omega_to_hz(r.omega),
            r.objective,
            r.gradient,
            r.best_objective,
            omega_to_hz(r.best_omega)
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}
