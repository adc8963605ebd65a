use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcmu_cli::{parse_scenario, parse_scenario_str, ScenarioFile};
use dcmu_core::simulator::Algo;

fn dcmu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmu")).args(args).output().expect("spawn dcmu")
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn two_robot_file_has_reference_parameters() {
    let sc = parse_scenario(&bundled("two_robot.scn")).unwrap();
    let g = sc.graph;
    assert_eq!((g.rho, g.rho0), (20.0, 18.0));
    assert_eq!((g.d_beta_min, g.d_beta_max, g.d_gamma_min, g.d_gamma_max), (1.0, 3.0, 1.0, 3.0));
    assert_eq!((g.s, g.epsilon, g.collision_radius), (3.494, 0.01, 0.5));
    assert_eq!(sc.sim.dt, 0.2);
    assert_eq!(sc.noise.q[(0, 0)], 0.02);
    assert_eq!(sc.noise.r[(1, 1)], 5.0);
    assert_eq!(sc.noise.q[(0, 1)], 0.0);
    assert_eq!(sc.steps(), 600);
}

#[test]
fn bundled_files_roundtrip() {
    for name in ["two_robot.scn", "convoy.scn"] {
        let sc = parse_scenario(&bundled(name)).unwrap();
        let text = ScenarioFile::from_scenario(&sc).to_toml();
        assert_eq!(parse_scenario_str(&text).unwrap(), sc, "{name}");
    }
}

#[test]
fn empty_obstacle_list_is_valid() {
    let text = std::fs::read_to_string(bundled("two_robot.scn")).unwrap();
    let stripped: String = text
        .split("\n\n")
        .filter(|block| !block.trim_start().starts_with("[[obstacle]]"))
        .collect::<Vec<_>>()
        .join("\n\n");
    let sc = parse_scenario_str(&stripped).unwrap();
    assert!(sc.obstacles.is_empty());
    assert_eq!(sc.robots.len(), 2);
}

#[test]
fn run_writes_600_rows_and_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let o = dcmu(&["run", "--scenario", s(&bundled("two_robot.scn")), "--seed", "1", "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("steps.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 601);
    assert!(lines[0].starts_with("t,lambda2_true,lambda2_weighted,lambda2_est_min,lambda2_est_max,min_robot_dist,min_obst_clearance,x_true_0"));
    assert_eq!(lines[1].split(',').count(), 7 + 8);
    let summary = std::fs::read_to_string(out.path().join("summary.toml")).unwrap();
    assert!(summary.contains("ratio = 1.0"));
    assert!(summary.contains("algo = \"dcmu\""));
}

#[test]
fn run_output_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = dcmu(&["run", "--scenario", s(&bundled("convoy.scn")), "--seed", "9", "--out", s(d.path())]);
        assert!(o.status.code().is_some());
    }
    for f in ["steps.csv", "summary.toml"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn baseline_disconnects_for_some_seed_with_exit_two() {
    let sc = parse_scenario(&bundled("two_robot.scn")).unwrap().with_algo(Algo::Baseline);
    let seed = (0..20u64)
        .find(|&k| !dcmu_core::simulator::run_episode(&sc, k).unwrap().success)
        .expect("a failing baseline seed");
    let out = tempfile::tempdir().unwrap();
    let o = dcmu(&[
        "run",
        "--scenario",
        s(&bundled("two_robot.scn")),
        "--seed",
        &seed.to_string(),
        "--algo",
        "baseline",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let summary = std::fs::read_to_string(out.path().join("summary.toml")).unwrap();
    let min_line = summary.lines().find(|l| l.starts_with("min_lambda2_true")).unwrap();
    let min: f64 = min_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!(min <= 0.01, "{min}");
    assert!(summary.contains("success = false"));
}

#[test]
fn unreadable_scenario_exits_one() {
    let out = tempfile::tempdir().unwrap();
    let o = dcmu(&["run", "--scenario", "/nonexistent/x.scn", "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_scenario_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled("two_robot.scn")).unwrap().replace("rho0 = 18.0", "rho0 = 25.0");
    let path = dir.path().join("bad.scn");
    std::fs::write(&path, text).unwrap();
    let o = dcmu(&["run", "--scenario", s(&path), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rho0 must be < rho"), "{err}");
    assert!(err.contains("line 6"), "{err}");
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(dcmu(&["gradcheck", "--trials", "0"]).status.code(), Some(1));
    let o = dcmu(&["gradcheck", "--trials", "50", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}

#[test]
fn montecarlo_single_run_cells_match_run() {
    let out = tempfile::tempdir().unwrap();
    let o = dcmu(&[
        "montecarlo",
        "--scenario",
        s(&bundled("two_robot.scn")),
        "--runs",
        "1",
        "--seed-base",
        "3",
        "--q",
        "0.02",
        "--r",
        "5",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let ratios = std::fs::read_to_string(out.path().join("ratios.csv")).unwrap();
    let lines: Vec<&str> = ratios.lines().collect();
    assert_eq!(lines[0], "Q,R,algo,runs,successes,ratio");
    assert_eq!(lines.len(), 2);

    let single = tempfile::tempdir().unwrap();
    let r = dcmu(&["run", "--scenario", s(&bundled("two_robot.scn")), "--seed", "3", "--out", s(single.path())]);
    let expect = if r.status.code() == Some(0) { "1,1" } else { "1,0" };
    assert!(lines[1].contains(&format!(",dcmu,{expect},")), "{}", lines[1]);
}

#[test]
fn montecarlo_rejects_bad_config() {
    let out = tempfile::tempdir().unwrap();
    let sc = bundled("two_robot.scn");
    assert_eq!(dcmu(&["montecarlo", "--scenario", s(&sc), "--runs", "0", "--out", s(out.path())]).status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_dcmu"))
        .env("DCMU_THREADS", "zero")
        .args(["montecarlo", "--scenario", s(&sc), "--runs", "1", "--out", s(out.path())])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_rows_are_sorted_by_cell_then_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = dcmu(&[
        "montecarlo",
        "--scenario",
        s(&bundled("two_robot.scn")),
        "--runs",
        "2",
        "--algo",
        "both",
        "--q",
        "0.02,0",
        "--r",
        "5,1",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let runs = std::fs::read_to_string(out.path().join("runs.csv")).unwrap();
    let keys: Vec<(f64, f64, String, u64)> = runs
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(keys.len(), 2 * 2 * 2 * 2);
    assert_eq!((keys[0].0, keys[0].1), (0.0, 1.0));
    assert!(keys.windows(2).all(|w| (w[0].0, w[0].1) <= (w[1].0, w[1].1)));
    assert_eq!(keys[0].2, "dcmu");
    assert_eq!(keys[2].2, "baseline");
    assert!(keys[0].3 < keys[1].3);
}
