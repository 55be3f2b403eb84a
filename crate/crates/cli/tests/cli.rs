use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use softswim::config::RunConfig;
use softswim::episode::read_trajectory_csv;

fn tiny() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.toml")).unwrap()
}

struct Run {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new(cfg: &RunConfig) -> Run {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(&config, cfg.to_toml()).unwrap();
        Run { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_softswim"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(self.out())
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.cmd(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn trained(cfg: &RunConfig) -> Run {
        let run = Run::new(cfg);
        run.ok(&["train-fluid"]);
        run
    }
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn missing_config_exits_with_code_2_and_names_the_path() {
    let out = Command::new(env!("CARGO_BIN_EXE_softswim"))
        .args(["--config", "/definitely/not/here.toml", "simulate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn unknown_config_key_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[episode]\nstepz = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_softswim")).arg("--config").arg(&path).arg("sweep").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn zero_iteration_training_writes_initial_weights_and_a_headered_csv() {
    let mut cfg = tiny();
    cfg.training.iterations = 0;
    let run = Run::trained(&cfg);
    assert!(run.out().join("fluid.bin").is_file());
    assert!(run.out().join("fluid.bin.noise.json").is_file());
    let text = std::fs::read_to_string(run.out().join("fluid_loss.csv")).unwrap();
    assert_eq!(text, format!("# config_hash={}\niteration,L_p,L_b,L\n", cfg.hash()));
}

#[test]
fn diverging_training_exits_nonzero() {
    let mut cfg = tiny();
    cfg.training.iterations = 40;
    cfg.training.learning_rate = 50.0;
    let run = Run::new(&cfg);
    let out = run.cmd(&["train-fluid"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!run.out().join("fluid.bin").exists());
}

#[test]
fn single_step_simulation_emits_one_row_and_no_fields() {
    let mut cfg = tiny();
    cfg.episode.steps = 1;
    let run = Run::trained(&cfg);
    run.ok(&["simulate", "--omega-hz", "4", "--snapshot-every", "0"]);
    let rows = data_lines(&run.out().join("trajectory.csv"));
    assert_eq!(rows.len(), 2, "{rows:?}");
    assert!(!run.out().join("fields").exists());
    assert!(!run.out().join("frames").exists());
}

#[test]
fn snapshots_follow_the_interval() {
    let run = Run::trained(&tiny());
    run.ok(&["simulate", "--snapshot-every", "4"]);
    let mut names: Vec<String> = std::fs::read_dir(run.out().join("fields"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["step_000000.bin", "step_000004.bin"]);
    let fields = softswim::io::read_fields(&run.out().join("fields/step_000004.bin")).unwrap();
    let names: Vec<&str> = fields.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["a", "p", "b", "vd_x", "vd_y"]);
    assert_eq!(fields[1].1.shape(), &[32, 64]);
    assert!(run.out().join("frames/pressure_000004.png").is_file());
}

#[test]
fn simulation_is_deterministic_and_carries_the_config_hash() {
    let run = Run::trained(&tiny());
    run.ok(&["simulate", "--omega-hz", "5"]);
    let first = std::fs::read(run.out().join("trajectory.csv")).unwrap();
    run.ok(&["simulate", "--omega-hz", "5"]);
    let second = std::fs::read(run.out().join("trajectory.csv")).unwrap();
    assert_eq!(first, second);
    let (header, _) = read_trajectory_csv(&run.out().join("trajectory.csv")).unwrap();
    assert_eq!(header.config_hash, tiny().hash());
    let manifest = std::fs::read_to_string(run.out().join("manifest-simulate.json")).unwrap();
    assert!(manifest.contains(&tiny().hash()));
}

#[test]
fn sweep_writes_one_trajectory_per_frequency_and_round_trips() {
    let mut cfg = tiny();
    cfg.sweep.frequencies_hz = vec![3.0, 5.0, 7.0];
    let run = Run::trained(&cfg);
    run.ok(&["sweep"]);
    let rows = data_lines(&run.out().join("sweep.csv"));
    assert_eq!(rows.len(), 4);
    for (row, hz) in rows[1..].iter().zip(["3", "5", "7"]) {
        let f: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        let (header, records) = read_trajectory_csv(&run.out().join(format!("sweep/trajectory_{hz}Hz.csv"))).unwrap();
        assert_eq!(header.config_hash, cfg.hash());
        assert_eq!(records.len(), cfg.sweep.steps);
        assert!((records.last().unwrap().objective - f[2]).abs() <= 1e-12 * f[2].abs().max(1e-300));
    }
}

#[test]
fn bench_reports_every_phase_in_milliseconds() {
    let run = Run::trained(&tiny());
    let out = run.ok(&["bench"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for phase in ["warmup", "forward_total", "forward_solid", "forward_fluid", "backward"] {
        assert!(stdout.contains(phase), "{phase} missing from {stdout}");
    }
    let rows = data_lines(&run.out().join("bench.csv"));
    assert_eq!(rows[0], "phase,ms");
    for row in &rows[1..] {
        let (_, ms) = row.split_once(',').unwrap();
        assert!(ms.parse::<f64>().unwrap() >= 0.0);
        assert_eq!(ms.split_once('.').unwrap().1.len(), 3, "microsecond digits present: {row}");
    }
}

#[test]
fn gradcheck_passes_all_three_cases() {
    let run = Run::trained(&tiny());
    let out = run.ok(&["gradcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("PASS").count(), 3, "{stdout}");
    let rows = data_lines(&run.out().join("gradcheck.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.ends_with(",true")));
}

#[test]
fn optimize_writes_both_histories_and_a_plot() {
    let run = Run::trained(&tiny());
    run.ok(&["optimize"]);
    let grad = data_lines(&run.out().join("opt_gradient.csv"));
    let cma = data_lines(&run.out().join("opt_cmaes.csv"));
    assert_eq!(grad.len(), 1 + 3);
    assert!(cma.len() >= 2);
    let evals = |rows: &[String]| rows.last().unwrap().split(',').nth(1).unwrap().parse::<usize>().unwrap();
    assert!(evals(&cma) <= evals(&grad));
    let svg = std::fs::read_to_string(run.out().join("optimize.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("CMA-ES"));
}

#[test]
fn seed_flag_changes_the_hash_and_the_weights() {
    let cfg = tiny();
    let run = Run::new(&cfg);
    run.ok(&["train-fluid"]);
    let a = std::fs::read(run.out().join("fluid.bin")).unwrap();
    run.ok(&["--seed", "11", "train-fluid"]);
    let b = std::fs::read(run.out().join("fluid.bin")).unwrap();
    assert_ne!(a, b);
    let manifest = std::fs::read_to_string(run.out().join("manifest-train-fluid.json")).unwrap();
    let mut reseeded = cfg.clone();
    reseeded.set_seed(11);
    assert!(manifest.contains(&reseeded.hash()));
}
