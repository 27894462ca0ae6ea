//! Subcommand implementations. Each returns the process exit code; human
//! output goes to the supplied writer.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use osl_synth::constants::{estimate_all, ConstantsReport};
use osl_synth::euler::dense_tube_for_pattern;
use osl_synth::sim::{simulate_runs, LoopViolation};
use osl_synth::synth::{synthesize, Controller};
use osl_synth::system::{ModeConstants, Pattern, SwitchedSystem};
use osl_synth::Ball;
use thiserror::Error;

use crate::artifact::{ConstantsFile, ConstantsSource, ControllerFile};
use crate::config::{ConfigError, ProblemConfig, FORMAT_VERSION};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_UNSOUND: u8 = 2;
pub const EXIT_INCOMPLETE: u8 = 3;
pub const EXIT_VIOLATIONS: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("constants: {0}")]
    Constants(#[from] osl_synth::constants::ConstantsError),
    #[error("constants failed the soundness check; see the report")]
    Unsound,
    #[error("synthesis: {0}")]
    Synth(#[from] osl_synth::synth::SynthError),
    #[error("tube: {0}")]
    Tube(#[from] osl_synth::euler::EulerError),
    #[error("simulation: {0}")]
    Sim(#[from] osl_synth::sim::SimError),
    #[error("controller is incomplete; only complete controllers can be simulated")]
    IncompleteController,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Unsound => EXIT_UNSOUND,
            CliError::IncompleteController => EXIT_INCOMPLETE,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn out_err(source: std::io::Error) -> CliError {
    CliError::Io { path: "<stdout>".into(), source }
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

/// `check`: schema and semantic validation only.
pub fn check(config: &Path, out: &mut dyn Write) -> Result<u8, CliError> {
    let (cfg, system) = ProblemConfig::load(config)?;
    writeln!(
        out,
        "ok: {} modes, dimension {}, tau {}, substeps {}, config hash {}",
        system.num_modes(),
        system.dim(),
        system.tau(),
        system.substeps(),
        cfg.hash()
    )
    .map_err(out_err)?;
    Ok(EXIT_OK)
}

fn report_text(report: &ConstantsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "T = {:?}", Vec::<[f64; 2]>::from(report.t_box.clone()));
    let _ = writeln!(
        s,
        "{:>4} {:>14} {:>14} {:>14} {:>14} {:>14} {:>10}",
        "mode", "lambda", "L", "C", "M", "lambda(raw)", "sound"
    );
    for m in &report.modes {
        let k = m.constants;
        let _ = writeln!(
            s,
            "{:>4} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>10}{}",
            m.mode,
            k.lambda,
            k.lipschitz,
            k.c,
            k.m,
            m.sampled.lambda.refined,
            if m.soundness.passed() { "yes" } else { "NO" },
            if m.exact.is_some() { "  (affine: exact lambda, L)" } else { "" }
        );
    }
    s
}

fn estimate(cfg: &ProblemConfig, system: &SwitchedSystem) -> Result<ConstantsFile, CliError> {
    let report = estimate_all(system, &cfg.s, &cfg.estimator)?;
    Ok(ConstantsFile {
        version: FORMAT_VERSION.into(),
        config_hash: cfg.hash(),
        t_box: report.t_box.clone(),
        sound: report.sound(),
        modes: report.modes,
    })
}

/// `constants`: estimates every mode's constants and writes a report.
pub fn constants(config: &Path, report_out: Option<&Path>, out: &mut dyn Write) -> Result<u8, CliError> {
    let (cfg, system) = ProblemConfig::load(config)?;
    if cfg.constants_override.is_some() {
        writeln!(out, "note: the configuration overrides constants; synthesis will not use these estimates")
            .map_err(out_err)?;
    }
    let file = estimate(&cfg, &system)?;
    let report = ConstantsReport { t_box: file.t_box.clone(), modes: file.modes.clone() };
    write!(out, "{}", report_text(&report)).map_err(out_err)?;
    if let Some(p) = report_out {
        write_file(p, &(serde_json::to_string_pretty(&file).expect("report serializes") + "\n"))?;
        writeln!(out, "wrote {}", p.display()).map_err(out_err)?;
    }
    if !file.sound {
        writeln!(out, "soundness check FAILED").map_err(out_err)?;
        return Ok(EXIT_UNSOUND);
    }
    Ok(EXIT_OK)
}

/// Override, then a report file, then fresh estimation.
fn resolve_constants(
    cfg: &ProblemConfig,
    system: &SwitchedSystem,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(Vec<ModeConstants>, ConstantsSource), CliError> {
    if let Some(t) = cfg.override_table() {
        return Ok((t, ConstantsSource::Override));
    }
    let (file, source) = match report {
        Some(p) => (ConstantsFile::load_for(p, cfg)?, ConstantsSource::Report),
        None => (estimate(cfg, system)?, ConstantsSource::Estimated),
    };
    let rep = ConstantsReport { t_box: file.t_box.clone(), modes: file.modes.clone() };
    write!(out, "{}", report_text(&rep)).map_err(out_err)?;
    if !file.sound {
        return Err(CliError::Unsound);
    }
    Ok((file.table(), source))
}

fn controller_summary(ctl: &Controller, out: &mut dyn Write) -> std::io::Result<()> {
    let certified = ctl.balls.iter().filter(|b| b.pattern.is_some()).count();
    writeln!(
        out,
        "{}: {} balls (grid {:?}, delta {:.6}), {} certified, max pattern length {}",
        ctl.label,
        ctl.balls.len(),
        ctl.grid,
        ctl.delta,
        certified,
        ctl.max_pattern_len()
    )?;
    let hist = ctl.length_histogram();
    let parts: Vec<String> = hist.iter().enumerate().skip(1).map(|(k, c)| format!("{k}:{c}")).collect();
    writeln!(out, "  pattern lengths {}", parts.join(" "))?;
    for b in &ctl.balls {
        match (&b.pattern, &b.failure) {
            (Some(p), _) => writeln!(out, "  ball {:>4} {} pattern {}", b.index, fmt_point(&b.center), p)?,
            (None, Some(f)) => writeln!(
                out,
                "  ball {:>4} {} FAILED: {}; {} patterns tried (left S {}, missed target {}, not convex {}, numerical {})",
                b.index,
                fmt_point(&b.center),
                f.cause.describe(),
                f.patterns_tried,
                f.left_safe,
                f.not_in_target,
                f.not_convex,
                f.numerical
            )?,
            (None, None) => writeln!(out, "  ball {:>4} {} FAILED", b.index, fmt_point(&b.center))?,
        }
    }
    Ok(())
}

/// Default controller path: `<config stem>.controller.json` in the working directory.
pub fn default_controller_path(config: &Path) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "problem".into());
    PathBuf::from(format!("{stem}.controller.json"))
}

/// `synth`: builds and writes the controller; exit 3 when incomplete.
pub fn synth(
    config: &Path,
    controller_out: &Path,
    constants_report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let (cfg, system) = ProblemConfig::load(config)?;
    let (table, source) = resolve_constants(&cfg, &system, constants_report, out)?;
    let problem = cfg.problem(system, table.clone());
    let start = Instant::now();
    let controllers = synthesize(&problem)?;
    let elapsed = start.elapsed();
    let complete = controllers.iter().all(Controller::is_complete);
    let file = ControllerFile {
        version: FORMAT_VERSION.into(),
        config_hash: cfg.hash(),
        config: cfg,
        constants_source: source,
        constants: table,
        complete,
        controllers,
    };
    write_file(controller_out, &file.to_json())?;
    for ctl in &file.controllers {
        controller_summary(ctl, out).map_err(out_err)?;
    }
    writeln!(
        out,
        "{} in {:.2} s; wrote {}",
        if complete { "complete" } else { "INCOMPLETE" },
        elapsed.as_secs_f64(),
        controller_out.display()
    )
    .map_err(out_err)?;
    Ok(if complete { EXIT_OK } else { EXIT_INCOMPLETE })
}

/// Simulation parameters for `simulate`.
#[derive(Debug, Clone, Copy)]
pub struct SimulateOptions {
    pub runs: usize,
    pub cycles: usize,
    pub seed: u64,
}

/// `simulate`: closed-loop runs; exit 4 on any violation.
pub fn simulate(
    controller: &Path,
    opts: SimulateOptions,
    csv: Option<&Path>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let (file, system) = ControllerFile::load(controller)?;
    if !file.complete || !file.controllers.iter().all(Controller::is_complete) {
        return Err(CliError::IncompleteController);
    }
    let runs = simulate_runs(&file.controllers, &system, opts.runs, opts.cycles, opts.seed)?;
    if let Some(p) = csv {
        let n = system.dim();
        let mut text = String::from("run,t");
        for i in 1..=n {
            let _ = write!(text, ",x_{i}");
        }
        text.push_str(",active_mode,ball_index,cycle\n");
        for (r, run) in runs.iter().enumerate() {
            for row in &run.rows {
                let _ = write!(text, "{r},{}", row.t);
                for v in &row.x {
                    let _ = write!(text, ",{v}");
                }
                let _ = writeln!(text, ",{},{},{}", row.active_mode, row.ball_index, row.cycle);
            }
        }
        write_file(p, &text)?;
    }
    let mut safety = 0;
    let mut recurrence = 0;
    let mut uncovered = 0;
    for (r, run) in runs.iter().enumerate() {
        for v in &run.violations {
            match v {
                LoopViolation::Safety { cycle, t, x } => {
                    safety += 1;
                    writeln!(out, "run {r} cycle {cycle}: left S at t = {t} at {}", fmt_point(x)).map_err(out_err)?;
                }
                LoopViolation::Recurrence { cycle, x } => {
                    recurrence += 1;
                    writeln!(out, "run {r} cycle {cycle}: ended outside the target at {}", fmt_point(x))
                        .map_err(out_err)?;
                }
                LoopViolation::Uncovered { cycle, x } => {
                    uncovered += 1;
                    writeln!(out, "run {r} cycle {cycle}: state {} is in no certified ball", fmt_point(x))
                        .map_err(out_err)?;
                }
            }
        }
    }
    let cycles_done: usize = runs.iter().map(|r| r.completed_cycles).sum();
    let total = opts.runs * opts.cycles;
    writeln!(
        out,
        "{} runs x {} cycles: {} safety, {} recurrence, {} covering violations; {}/{} cycles returned to target",
        opts.runs, opts.cycles, safety, recurrence, uncovered, cycles_done, total
    )
    .map_err(out_err)?;
    Ok(if safety + recurrence + uncovered == 0 { EXIT_OK } else { EXIT_VIOLATIONS })
}

/// Inputs of `tube`.
#[derive(Debug, Clone)]
pub struct TubeOptions {
    /// Center coordinates followed by the radius.
    pub ball: Vec<f64>,
    pub pattern: String,
    pub substeps: Option<usize>,
    pub resolution: usize,
    pub constants: Option<PathBuf>,
}

/// `tube`: writes `t, center_1..center_n, radius` for one ball and pattern.
pub fn tube(config: &Path, opts: &TubeOptions, csv: &mut dyn Write, log: &mut dyn Write) -> Result<u8, CliError> {
    let (cfg, mut system) = ProblemConfig::load(config)?;
    let n = system.dim();
    if opts.ball.len() != n + 1 {
        return Err(CliError::Usage(format!(
            "--ball needs {} numbers (center then radius), got {}",
            n + 1,
            opts.ball.len()
        )));
    }
    let ball = Ball::new(opts.ball[..n].to_vec(), opts.ball[n]).map_err(|e| CliError::Usage(format!("--ball: {e}")))?;
    let pattern: Pattern = opts.pattern.parse().map_err(|e| CliError::Usage(format!("--pattern: {e}")))?;
    pattern.validate(system.num_modes()).map_err(|e| CliError::Usage(format!("--pattern: {e}")))?;
    if let Some(s) = opts.substeps {
        system = system.with_substeps(s).map_err(|e| CliError::Usage(format!("--substeps: {e}")))?;
    }
    let (table, _) = resolve_constants(&cfg, &system, opts.constants.as_deref(), log)?;
    let tube = dense_tube_for_pattern(&ball, &pattern, &system, &table, opts.resolution.max(1))?;
    let mut text = String::from("t");
    for i in 1..=n {
        let _ = write!(text, ",center_{i}");
    }
    text.push_str(",radius\n");
    for s in &tube.tube.samples {
        let _ = write!(text, "{}", s.t);
        for v in &s.center {
            let _ = write!(text, ",{v}");
        }
        let _ = writeln!(text, ",{}", s.radius);
    }
    csv.write_all(text.as_bytes()).map_err(out_err)?;
    let non_convex = tube.convexity.iter().filter(|v| !v.convex).count();
    if non_convex > 0 {
        writeln!(log, "warning: {non_convex} sub-step radius curves failed the convexity test").map_err(out_err)?;
    }
    Ok(EXIT_OK)
}
