use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hz_to_omega, is_instability, Method, OptRecord, OptRun};
use crate::error::{Error, Result};

/// `(mu/mu_w, lambda)`-CMA-ES over the frequency in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaesConfig {
    pub omega0_hz: f64,
    pub sigma0_hz: f64,
    /// Total objective evaluations.
    pub budget: usize,
    /// Samples per generation.
    pub population: usize,
    /// Search box in Hz.
    pub bounds_hz: [f64; 2],
    pub seed: u64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        CmaesConfig { omega0_hz: 2.0, sigma0_hz: 1.0, budget: 100, population: 4, bounds_hz: [0.1, 20.0], seed: 0 }
    }
}

impl CmaesConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.bounds_hz;
        if self.population < 2 || self.budget < self.population {
            return Err(Error::Config("CMA-ES needs population >= 2 and budget >= population".into()));
        }
        if !(0.0 < lo && lo < hi && (lo..=hi).contains(&self.omega0_hz) && self.sigma0_hz > 0.0) {
            return Err(Error::Config("CMA-ES needs 0 < lo < hi, omega0 in the box and sigma0 > 0".into()));
        }
        Ok(())
    }
}

/// Minimizes `evaluate(omega)` with the scalar specialization of CMA-ES.
///
/// Samples of one generation are evaluated in parallel; results are reduced in sample order,
/// so a fixed seed gives a fixed run. Failed (unstable) samples rank last. One history record
/// is logged per generation with the best sample of that generation and the best so far.
pub fn cmaes_baseline(
    cfg: &CmaesConfig,
    evaluate: impl Fn(f64) -> Result<f64> + Sync,
    mut on_record: impl FnMut(&OptRecord),
) -> Result<OptRun> {
    cfg.validate()?;
    let lambda = cfg.population;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / wsum).collect();
    let mu_eff = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let n = 1.0;
    let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
    let c1 = 2.0 / ((n + 1.3f64).powi(2) + mu_eff);
    let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0f64).powi(2) + mu_eff));
    // E|N(0, 1)|
    let chi = (2.0 / std::f64::consts::PI).sqrt();

    let [lo, hi] = cfg.bounds_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut mean, mut sigma, mut c) = (cfg.omega0_hz, cfg.sigma0_hz, 1.0f64);
    let (mut p_sigma, mut p_c) = (0.0f64, 0.0f64);
    let mut best = (f64::INFINITY, hz_to_omega(mean));
    let mut history = Vec::new();
    let mut evaluations = 0;
    for gen in 0..cfg.budget / lambda {
        let xs: Vec<f64> = (0..lambda)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (mean + sigma * c.sqrt() * z).clamp(lo, hi)
            })
            .collect();
        let values: Vec<Result<f64>> = xs.par_iter().map(|&x| evaluate(hz_to_omega(x))).collect();
        evaluations += lambda;
        let mut scored = Vec::with_capacity(lambda);
        for (&x, v) in xs.iter().zip(values) {
            let f = match v {
                Ok(f) if f.is_finite() => f,
                Ok(_) => f64::INFINITY,
                Err(e) if is_instability(&e) => {
                    log::warn!("generation {gen}: sample at {x:.3} Hz failed: {e}");
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            };
            scored.push((f, x));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (f_gen, x_gen) = scored[0];
        if f_gen < best.0 {
            best = (f_gen, hz_to_omega(x_gen));
        }

        let ys: Vec<f64> = scored[..mu].iter().map(|&(_, x)| (x - mean) / sigma).collect();
        let y_w: f64 = ys.iter().zip(&w).map(|(y, w)| y * w).sum();
        mean += sigma * y_w;
        p_sigma = (1.0 - c_sigma) * p_sigma + (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt() * y_w / c.sqrt();
        let decay = 1.0 - (1.0 - c_sigma).powi(2 * (gen as i32 + 1));
        let h_sigma = if p_sigma.abs() / decay.sqrt() < (1.4 + 2.0 / (n + 1.0)) * chi { 1.0 } else { 0.0 };
        p_c = (1.0 - c_c) * p_c + h_sigma * (c_c * (2.0 - c_c) * mu_eff).sqrt() * y_w;
        let rank_mu: f64 = ys.iter().zip(&w).map(|(y, w)| w * y * y).sum();
        c = (1.0 - c1 - c_mu) * c + c1 * (p_c * p_c + (1.0 - h_sigma) * c_c * (2.0 - c_c) * c) + c_mu * rank_mu;
        sigma *= ((c_sigma / d_sigma) * (p_sigma.abs() / chi - 1.0)).exp();
        mean = mean.clamp(lo, hi);

        let rec = OptRecord {
            iteration: gen,
            evaluations,
            omega: hz_to_omega(x_gen),
            objective: f_gen,
            gradient: f64::NAN,
            best_objective: best.0,
            best_omega: best.1,
        };
        on_record(&rec);
        history.push(rec);
    }
    Ok(OptRun { method: Method::Cmaes, history, aborted: None })
}
