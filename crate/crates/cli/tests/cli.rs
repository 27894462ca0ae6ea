use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use osl_synth::{ball_in_box, Ball};
use osl_synth_cli::artifact::{ConstantsFile, ControllerFile};
use osl_synth_cli::config::ProblemConfig;
use serde_json::Value;
use tempfile::TempDir;

const BENCHMARKS: [&str; 5] = ["dcdc", "twotank", "polynomial", "helicopter", "fourroom"];

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.cfg"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osl-synth")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct TwoTank {
    dir: TempDir,
    controller: PathBuf,
}

/// Two-tank controller synthesized once per test binary.
fn twotank() -> &'static TwoTank {
    static CELL: OnceLock<TwoTank> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let controller = dir.path().join("twotank.controller.json");
        let out = run(&["synth", path(&config("twotank")), "-o", path(&controller)]);
        assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
        TwoTank { dir, controller }
    })
}

fn write_zero_field(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "version": "osl-synth/1",
        "dimension": 2,
        "tau": 1.0,
        "modes": [{ "id": 1, "field": ["0", "0"], "affine": { "A": [0.0, 0.0, 0.0, 0.0], "b": [0.0, 0.0] } }],
        "R": [[-1.0, 1.0], [-1.0, 1.0]],
        "S": [[-2.0, 2.0], [-2.0, 2.0]],
        "grid": [2, 2],
        "max_pattern_length": 1,
        "estimator": { "samples": 500, "refine_iters": 20, "seeds": 2 }
    });
    let p = dir.join("zero.cfg");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn shipped_configs_pass_check() {
    for name in BENCHMARKS {
        let out = run(&["check", path(&config(name))]);
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));
    }
}

#[test]
fn shipped_configs_round_trip() {
    for name in BENCHMARKS {
        let text = std::fs::read_to_string(config(name)).unwrap();
        let parsed = ProblemConfig::parse(&text).unwrap();
        let again = ProblemConfig::parse(&parsed.canonical_json()).unwrap();
        assert_eq!(parsed, again, "{name}");
        assert_eq!(parsed.canonical_json(), again.canonical_json());
    }
}

#[test]
fn config_errors_exit_one_with_field_path() {
    let dir = TempDir::new().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(config("twotank")).unwrap()).unwrap();
    cfg["modes"][2]["field"][1] = Value::String("x1 + * 2".into());
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let out = run(&["check", path(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("modes[2].field[1]"), "{}", stderr(&out));

    cfg["modes"][2]["field"][1] = Value::String("x1".into());
    cfg["grid"] = serde_json::json!([8, "eight"]);
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let out = run(&["check", path(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("grid[1]"), "{}", stderr(&out));

    let out = run(&["check", path(&dir.path().join("missing.cfg"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["synth"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn zero_field_constants_are_zero_except_lambda() {
    let dir = TempDir::new().unwrap();
    let cfg = write_zero_field(dir.path());
    let report = dir.path().join("zero.constants.json");
    let out = run(&["constants", path(&cfg), "-o", path(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (parsed, _) = ProblemConfig::load(&cfg).unwrap();
    let file = ConstantsFile::load_for(&report, &parsed).unwrap();
    assert!(file.sound);
    let k = file.modes[0].constants;
    assert_eq!((k.lambda, k.lipschitz, k.c, k.m), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn zero_field_tube_has_constant_center_and_exponential_radius() {
    let dir = TempDir::new().unwrap();
    let cfg = write_zero_field(dir.path());
    let csv = dir.path().join("tube.csv");
    let out = run(&[
        "tube",
        path(&cfg),
        "--ball",
        "0.25,-0.5,0.1",
        "--pattern",
        "1",
        "--substeps",
        "4",
        "--resolution",
        "3",
        "--csv",
        path(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, ["t", "center_1", "center_2", "radius"]);
    assert_eq!(rows.len(), 13);
    for r in &rows {
        assert_eq!((r[1], r[2]), (0.25, -0.5));
        let want = 0.1 * (0.5 * r[0]).exp();
        assert!((r[3] - want).abs() < 1e-12 * want.max(1.0), "t={} radius {} want {want}", r[0], r[3]);
    }
}

#[test]
fn dcdc_tube_radius_dips_then_rises() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("dcdc.csv");
    let out = run(&[
        "tube",
        path(&config("dcdc")),
        "--ball",
        "2,1.2,0.045",
        "--pattern",
        "1",
        "--substeps",
        "1",
        "--resolution",
        "100",
        "--csv",
        path(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, rows) = read_csv(&csv);
    let radii: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    let (argmin, min) =
        radii.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, r)| if r < a.1 { (i, r) } else { a });
    assert_eq!(radii[0], 0.045);
    assert!(min < 0.045 && argmin > 0 && argmin < radii.len() - 1);
    assert!(*radii.last().unwrap() > 0.045);
    assert!(radii[..=argmin].windows(2).all(|w| w[1] <= w[0]));
    assert!(radii[argmin..].windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn tube_rejects_unknown_mode() {
    let out = run(&["tube", path(&config("twotank")), "--ball", "0,0,0.1", "--pattern", "1 7"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn certified_twotank_tube_stays_in_safe_box() {
    let tt = twotank();
    let (file, _) = ControllerFile::load(&tt.controller).unwrap();
    let ctl = &file.controllers[0];
    let ball = ctl.balls.iter().find(|b| b.pattern.as_ref().is_some_and(|p| p.len() >= 3)).unwrap();
    let spec: Vec<String> = ball.center.iter().chain([&ctl.delta]).map(|v| format!("{v:?}")).collect();
    let csv = tt.dir.path().join("certified.csv");
    let pattern = ball.pattern.as_ref().unwrap().to_string();
    let out =
        run(&["tube", path(&config("twotank")), "--ball", &spec.join(","), "--pattern", &pattern, "--csv", path(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, rows) = read_csv(&csv);
    assert_eq!(rows.len(), 1 + ball.pattern.as_ref().unwrap().len() * 10);
    for r in &rows {
        let b = Ball::new(r[1..3].to_vec(), r[3]).unwrap();
        assert!(ball_in_box(&b, &ctl.safe).unwrap().inside, "t={}", r[0]);
    }
    let last = rows.last().unwrap();
    assert!(ball_in_box(&Ball::new(last[1..3].to_vec(), last[3]).unwrap(), &ctl.target).unwrap().inside);
}

#[test]
fn twotank_controller_simulates_without_violations() {
    let tt = twotank();
    let out = run(&["simulate", path(&tt.controller), "--runs", "100", "--cycles", "20"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("0 safety, 0 recurrence, 0 covering violations"));
}

#[test]
fn simulation_csv_is_reproducible() {
    let tt = twotank();
    let csvs: Vec<String> = (0..2)
        .map(|k| {
            let p = tt.dir.path().join(format!("sim{k}.csv"));
            let out = run(&[
                "simulate",
                path(&tt.controller),
                "--runs",
                "1",
                "--cycles",
                "1",
                "--seed",
                "11",
                "--csv",
                path(&p),
            ]);
            assert_eq!(code(&out), 0);
            std::fs::read_to_string(p).unwrap()
        })
        .collect();
    assert_eq!(csvs[0], csvs[1]);
    let header = csvs[0].lines().next().unwrap();
    assert_eq!(header, "run,t,x_1,x_2,active_mode,ball_index,cycle");
    assert!(csvs[0].lines().count() > 2);
}

#[test]
fn truncated_pattern_is_caught_by_simulation() {
    let tt = twotank();
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&tt.controller).unwrap()).unwrap();
    let balls = doc["controllers"][0]["balls"].as_array_mut().unwrap();
    let longest = balls.iter_mut().max_by_key(|b| b["pattern"].as_array().map_or(0, Vec::len)).unwrap();
    longest["pattern"].as_array_mut().unwrap().truncate(1);
    let tampered = tt.dir.path().join("tampered.json");
    std::fs::write(&tampered, doc.to_string()).unwrap();
    let out = run(&["simulate", path(&tampered), "--runs", "100", "--cycles", "20"]);
    assert_ne!(code(&out), 0, "{}", stdout(&out));
    assert!(!stdout(&out).contains("0 safety, 0 recurrence, 0 covering violations"));
}

#[test]
fn tampered_config_hash_is_rejected() {
    let tt = twotank();
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&tt.controller).unwrap()).unwrap();
    doc["config"]["tau"] = serde_json::json!(0.25);
    let tampered = tt.dir.path().join("rehashed.json");
    std::fs::write(&tampered, doc.to_string()).unwrap();
    assert_eq!(code(&run(&["simulate", path(&tampered)])), 1);
}

#[test]
fn controller_bytes_do_not_depend_on_jobs() {
    let tt = twotank();
    let reference = std::fs::read(&tt.controller).unwrap();
    for jobs in ["1", "4"] {
        let p = tt.dir.path().join(format!("jobs{jobs}.json"));
        let out = run(&["--jobs", jobs, "synth", path(&config("twotank")), "-o", path(&p)]);
        assert_eq!(code(&out), 0);
        assert!(std::fs::read(&p).unwrap() == reference, "--jobs {jobs} changed the controller");
    }
}

#[test]
fn constants_report_feeds_synthesis() {
    let tt = twotank();
    let report = tt.dir.path().join("twotank.constants.json");
    assert_eq!(code(&run(&["constants", path(&config("twotank")), "-o", path(&report)])), 0);
    let p = tt.dir.path().join("from_report.json");
    let out = run(&["synth", path(&config("twotank")), "--constants", path(&report), "-o", path(&p)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (a, _) = ControllerFile::load(&p).unwrap();
    let (b, _) = ControllerFile::load(&tt.controller).unwrap();
    assert_eq!(a.controllers, b.controllers);
    assert_eq!(a.constants, b.constants);

    let out = run(&["synth", path(&config("helicopter")), "--constants", path(&report), "-o", path(&p)]);
    assert_eq!(code(&out), 1, "a report for another config must be refused");
}

#[test]
fn dcdc_synthesis_is_incomplete() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("dcdc.json");
    let out = run(&["synth", path(&config("dcdc")), "-o", path(&p)]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("FAILED"));
    let (file, _) = ControllerFile::load(&p).unwrap();
    assert!(!file.complete);
    assert_eq!(code(&run(&["simulate", path(&p)])), 3);
}
