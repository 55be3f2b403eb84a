use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fluid::{FluidState, MacGrid};
use crate::softbody::SoftBodyState;

/// Summary of one coupled step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Time at the end of the step, s.
    pub time: f64,
    /// Mean position of the head nodes after the step.
    pub head: [f64; 2],
    /// Total surface force before the burn-in ramp, N/m.
    pub force_raw: [f64; 2],
    /// Force actually applied to the body.
    pub force: [f64; 2],
    /// Running objective `-sum f_x` up to and including this step.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub objective: f64,
    pub initial_head: [f64; 2],
    pub final_body: SoftBodyState,
    pub final_fluid: FluidState,
}

impl Trajectory {
    /// Head travel along x over the whole episode.
    pub fn head_displacement(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.head[0] - self.initial_head[0])
    }

    pub fn write_csv(&self, path: &Path, header: &TrajectoryHeader) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# config_hash={}", header.config_hash);
        let g = &header.grid;
        let _ = writeln!(s, "# nx={} ny={} dx={} dt={}", g.nx, g.ny, g.dx, g.dt);
        let _ = writeln!(s, "# initial_head={},{}", self.initial_head[0], self.initial_head[1]);
        s.push_str("step,time,head_x,head_y,f_x,f_y,f_raw_x,f_raw_y,objective\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                r.time,
                r.head[0],
                r.head[1],
                r.force[0],
                r.force[1],
                r.force_raw[0],
                r.force_raw[1],
                r.objective
            );
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Provenance written at the top of a trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryHeader {
    pub config_hash: String,
    pub grid: MacGrid,
}

/// Parses a file written by [`Trajectory::write_csv`] into its header and records.
pub fn read_trajectory_csv(path: &Path) -> Result<(TrajectoryHeader, Vec<StepRecord>)> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, why: &str| Error::format(path, format!("line {}: {why}", line + 1));
    let mut hash = None;
    let mut grid = None;
    let mut records = Vec::new();
    let mut seen_columns = false;
    for (ln, line) in text.lines().enumerate() {
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(h) = meta.strip_prefix("config_hash=") {
                hash = Some(h.to_string());
            } else if meta.starts_with("nx=") {
                let mut g = MacGrid::default();
                for kv in meta.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(ln, "expected key=value"))?;
                    match k {
                        "nx" => g.nx = v.parse().map_err(|_| bad(ln, "bad nx"))?,
                        "ny" => g.ny = v.parse().map_err(|_| bad(ln, "bad ny"))?,
                        "dx" => g.dx = v.parse().map_err(|_| bad(ln, "bad dx"))?,
                        "dt" => g.dt = v.parse().map_err(|_| bad(ln, "bad dt"))?,
                        _ => return Err(bad(ln, "unknown grid key")),
                    }
                }
                grid = Some(g);
            }
            continue;
        }
        if !seen_columns {
            if !line.starts_with("step,") {
                return Err(bad(ln, "missing column header"));
            }
            seen_columns = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(ln, "expected 9 columns"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(ln, "bad number"));
        records.push(StepRecord {
            step: f[0].parse().map_err(|_| bad(ln, "bad step"))?,
            time: num(1)?,
            head: [num(2)?, num(3)?],
            force: [num(4)?, num(5)?],
            force_raw: [num(6)?, num(7)?],
            objective: num(8)?,
        });
    }
    match (hash, grid) {
        (Some(config_hash), Some(grid)) => Ok((TrajectoryHeader { config_hash, grid }, records)),
        _ => Err(Error::format(path, "missing header")),
    }
}
