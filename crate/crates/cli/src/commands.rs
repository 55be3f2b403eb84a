use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use rayon::prelude::*;
use softswim::autodiff::{finite_difference_check, GradCheck, ScalarLoss, TapeLoss};
use softswim::config::RunConfig;
use softswim::episode::{Episode, FrequencyObjective, Trajectory, TrajectoryHeader};
use softswim::fluid::{train_network, write_loss_csv, SurrogateNet};
use softswim::io::{noise_path, write_fields, write_fields_csv, write_pressure_png, NoiseCalibration};
use softswim::optimize::{cmaes_baseline, optimize_frequency, write_history_csv, write_history_svg};
use softswim::swimmer::ControllerParams;

use crate::output::Outputs;

fn load_net(cfg: &RunConfig) -> anyhow::Result<Arc<SurrogateNet>> {
    let path = cfg.weights_path();
    let net = SurrogateNet::load(&path)
        .with_context(|| format!("loading network weights from {} (run train-fluid first)", path.display()))?;
    Ok(Arc::new(net))
}

fn episode_with_steps(cfg: &RunConfig, net: &Arc<SurrogateNet>, steps: usize) -> anyhow::Result<Episode> {
    let mut scenario = cfg.scenario();
    scenario.episode.steps = steps;
    Ok(Episode::new(&scenario, Arc::clone(net))?)
}

fn write_trajectory(out: &mut Outputs, cfg: &RunConfig, traj: &Trajectory, name: &str) -> anyhow::Result<()> {
    let path = out.path(name);
    traj.write_csv(&path, &TrajectoryHeader { config_hash: out.hash().to_string(), grid: cfg.grid })?;
    out.add(path);
    Ok(())
}

pub fn train_fluid(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut out = Outputs::new(cfg, "train-fluid")?;
    let net = SurrogateNet::new(cfg.net.clone(), cfg.seed)?;
    log::info!("training a {}-parameter network for {} iterations", net.n_params(), cfg.training.iterations);
    let every = (cfg.training.iterations / 20).max(1);
    let result = train_network(net, &cfg.grid, &cfg.fluid, &cfg.softness, &cfg.training, |r| {
        if r.iteration % every == 0 {
            log::info!(
                "iteration {:>6}: L = {:.4e} (L_p {:.4e}, L_b {:.4e})",
                r.iteration,
                r.loss.total,
                r.loss.l_p,
                r.loss.l_b
            );
        }
    })
    .context("training the fluid network")?;

    let weights = cfg.weights_path();
    if let Some(dir) = weights.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    result.net.save(&weights)?;
    out.add(weights.clone());
    let loss = out.path("fluid_loss.csv");
    write_loss_csv(&loss, &result.history)?;
    out.add_csv(loss)?;
    if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
        log::info!("loss {:.4e} -> {:.4e}", first.loss.total, last.loss.total);
        out.note("initial_loss", first.loss.total);
        out.note("final_loss", last.loss.total);
    }

    if cfg.noise.steps > 0 {
        let ep = Episode::new(&cfg.scenario(), Arc::new(result.net))?;
        let resting_force = ep.resting_noise(cfg.noise.steps)?;
        let path = noise_path(&weights);
        NoiseCalibration { resting_force, steps: cfg.noise.steps, config_hash: out.hash().to_string() }.save(&path)?;
        log::info!("resting force over {} steps: {resting_force:.3e} N/m", cfg.noise.steps);
        out.add(path);
    }
    out.finish()
}

pub fn simulate(cfg: &RunConfig, omega_hz: f64) -> anyhow::Result<()> {
    let mut out = Outputs::new(cfg, "simulate")?;
    out.note("omega_hz", omega_hz);
    let net = load_net(cfg)?;
    let ep = Episode::new(&cfg.scenario(), net)?;
    let snap = cfg.snapshots.clone();
    let (fields_dir, frames_dir) = if snap.every > 0 {
        (Some(out.subdir("fields")?), snap.png.then(|| out.subdir("frames")).transpose()?)
    } else {
        (None, None)
    };
    let mut written = Vec::new();
    let mut failure = None;
    let traj = ep.run_forward_observed(&ControllerParams::from_hz(omega_hz), |v| {
        let Some(dir) = &fields_dir else { return };
        if v.step % snap.every != 0 || failure.is_some() {
            return;
        }
        let fields = [
            ("a", &v.fluid.a),
            ("p", &v.fluid.p),
            ("b", &v.boundary.b),
            ("vd_x", &v.boundary.vd_x),
            ("vd_y", &v.boundary.vd_y),
        ];
        let res = if snap.csv {
            let path = dir.join(format!("step_{:06}.csv", v.step));
            write_fields_csv(&path, &fields).map(|_| path)
        } else {
            let path = dir.join(format!("step_{:06}.bin", v.step));
            write_fields(&path, &fields).map(|_| path)
        };
        let res = res.and_then(|path| {
            written.push(path);
            match &frames_dir {
                Some(frames) => {
                    let path = frames.join(format!("pressure_{:06}.png", v.step));
                    write_pressure_png(&path, &v.fluid.p, Some(&v.boundary.b)).map(|_| written.push(path))
                }
                None => Ok(()),
            }
        });
        if let Err(e) = res {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e).context("writing snapshots");
    }
    written.into_iter().for_each(|p| out.add(p));
    write_trajectory(&mut out, cfg, &traj, "trajectory.csv")?;
    out.note("objective", traj.objective);
    out.note("head_displacement", traj.head_displacement());
    log::info!(
        "{} steps at {omega_hz} Hz: head moved {:.4e} m, objective {:.4e}",
        traj.records.len(),
        traj.head_displacement(),
        traj.objective
    );
    out.finish()
}

pub fn sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut out = Outputs::new(cfg, "sweep")?;
    let net = load_net(cfg)?;
    let ep = episode_with_steps(cfg, &net, cfg.sweep.steps)?;
    let runs: Vec<(f64, Trajectory)> = cfg
        .sweep
        .frequencies_hz
        .par_iter()
        .map(|&hz| ep.run_forward(&ControllerParams::from_hz(hz)).map(|t| (hz, t)))
        .collect::<Result<_, _>>()?;
    out.subdir("sweep")?;
    let mut table = format!("# config_hash={}\nfrequency_hz,displacement,objective\n", out.hash());
    for (hz, traj) in &runs {
        let _ = writeln!(table, "{hz},{},{}", traj.head_displacement(), traj.objective);
        write_trajectory(&mut out, cfg, traj, &format!("sweep/trajectory_{hz}Hz.csv"))?;
        log::info!("{hz:>5} Hz: displacement {:+.4e} m, objective {:+.4e}", traj.head_displacement(), traj.objective);
    }
    let path = out.path("sweep.csv");
    std::fs::write(&path, table)?;
    out.add(path);
    out.finish()
}

pub fn optimize(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut out = Outputs::new(cfg, "optimize")?;
    let net = load_net(cfg)?;
    let ep = Arc::new(Episode::new(&cfg.scenario(), net)?);
    let grad = optimize_frequency(
        &cfg.optimizer,
        |omega| {
            let g = ep.run_backward(&ControllerParams { omega })?;
            Ok((g.objective, g.d_omega))
        },
        |r| log::info!("gradient {:>3}: {:.4} Hz, objective {:+.4e}", r.iteration, r.omega / (2.0 * PI), r.objective),
    )?;
    if let Some(why) = &grad.aborted {
        log::warn!("gradient run stopped early: {why}");
        out.note("gradient_aborted", why.clone());
    }
    // same number of episode evaluations, rounded down to whole generations
    let mut cma_cfg = cfg.cmaes;
    let pop = cma_cfg.population;
    cma_cfg.budget = (grad.evaluations() / pop * pop).max(pop);
    let cma = cmaes_baseline(
        &cma_cfg,
        |omega| Ok(ep.run_forward(&ControllerParams { omega })?.objective),
        |r| {
            log::info!(
                "cma-es {:>3}: best {:.4} Hz, objective {:+.4e}",
                r.iteration,
                r.best_omega / (2.0 * PI),
                r.best_objective
            )
        },
    )?;
    for (name, run) in [("opt_gradient.csv", &grad), ("opt_cmaes.csv", &cma)] {
        let path = out.path(name);
        write_history_csv(&path, run)?;
        out.add_csv(path)?;
    }
    let svg = out.path("optimize.svg");
    write_history_svg(&svg, &[("gradient (Adam)", &grad), ("CMA-ES", &cma)])?;
    out.add(svg);
    for (key, run) in [("gradient", &grad), ("cmaes", &cma)] {
        if let Some(best) = run.best() {
            out.note(&format!("{key}_best_objective"), best.best_objective);
            out.note(&format!("{key}_best_hz"), best.best_omega / (2.0 * PI));
            out.note(&format!("{key}_evaluations"), run.evaluations());
        }
    }
    out.finish()
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn bench(cfg: &RunConfig, omega_hz: f64) -> anyhow::Result<()> {
    let mut out = Outputs::new(cfg, "bench")?;
    let params = ControllerParams::from_hz(omega_hz);
    let clock = Instant::now();
    let net = load_net(cfg)?;
    let warm = episode_with_steps(cfg, &net, 1)?;
    warm.run_forward(&params)?;
    let warmup = clock.elapsed();

    let ep = episode_with_steps(cfg, &net, cfg.bench.steps)?;
    let clock = Instant::now();
    let (_, timings) = ep.run_forward_timed(&params, |_| {})?;
    let forward = clock.elapsed();
    let clock = Instant::now();
    ep.run_backward(&params)?;
    let backward = clock.elapsed();

    let rows = [
        ("warmup", ms(warmup)),
        ("forward_total", ms(forward)),
        ("forward_solid", ms(timings.solid)),
        ("forward_fluid", ms(timings.fluid)),
        ("forward_coupling", ms(timings.coupling)),
        ("backward", ms(backward)),
    ];
    let mut report = format!(
        "# config_hash={}\n# steps={} grid={}x{}\nphase,ms\n",
        out.hash(),
        cfg.bench.steps,
        cfg.grid.nx,
        cfg.grid.ny
    );
    for (name, t) in rows {
        let _ = writeln!(report, "{name},{t:.3}");
        println!("{name:<17} {t:>12.3} ms");
        out.note(&format!("{name}_ms"), t);
    }
    let path = out.path("bench.csv");
    std::fs::write(&path, report)?;
    out.add(path);
    out.finish()
}

struct Case {
    name: &'static str,
    check: GradCheck,
    tolerance: f64,
}

fn check(name: &'static str, loss: &mut dyn ScalarLoss, p: f64, eps: f64, tolerance: f64) -> anyhow::Result<Case> {
    let check = finite_difference_check(loss, p, eps).with_context(|| format!("gradient check {name}"))?;
    Ok(Case { name, check, tolerance })
}

pub fn gradcheck(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut out = Outputs::new(cfg, "gradcheck")?;
    let mut square = TapeLoss(|t: &mut softswim::autodiff::Tape, x| Ok(t.square(x)));
    let mut sine = TapeLoss(|t: &mut softswim::autodiff::Tape, x| Ok(t.sin(x)));
    let net = load_net(cfg)?;
    let ep = episode_with_steps(cfg, &net, cfg.gradcheck.steps)?;
    let omega = 2.0 * PI * cfg.gradcheck.omega_hz;
    let cases = [
        check("square", &mut square, 3.0, 1e-5, 1e-8)?,
        check("sine", &mut sine, 1.0, 1e-5, 1e-7)?,
        check("episode_omega", &mut FrequencyObjective(&ep), omega, cfg.gradcheck.epsilon, 1e-3)?,
    ];
    let mut report =
        format!("# config_hash={}\ncase,value,analytic,finite_difference,relative_error,tolerance,pass\n", out.hash());
    let mut failed = Vec::new();
    for c in &cases {
        let g = &c.check;
        let pass = g.relative_error < c.tolerance;
        let _ = writeln!(
            report,
            "{},{},{},{},{},{},{pass}",
            c.name, g.value, g.analytic, g.finite_difference, g.relative_error, c.tolerance
        );
        println!(
            "{:<14} analytic {:+.10e}  fd {:+.10e}  rel {:.2e}  {}",
            c.name,
            g.analytic,
            g.finite_difference,
            g.relative_error,
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(c.name);
        }
    }
    let path = out.path("gradcheck.csv");
    std::fs::write(&path, report)?;
    out.add(path);
    out.finish()?;
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
