//! Covering-based controller synthesis.
//!
//! The source box is covered by congruent balls. For each ball a breadth-first
//! search looks for the shortest pattern (ties broken lexicographically) whose
//! Euler tube keeps every sub-step ball inside `S`, ends inside the target box
//! and has a convex radius curve on every sub-step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::euler::{advance_substep, BoundError, ConvexityVerdict, EulerError};
use crate::geometry::{inclusion_of, Ball, IntervalBox};
use crate::system::{ModeConstants, Pattern, SwitchedSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0} is not contained in the safety box")]
    RegionOutsideSafe(&'static str),
    #[error("grid has {found} axes, system dimension is {expected}")]
    GridDimension { expected: usize, found: usize },
    #[error("grid counts must be at least 1")]
    EmptyGrid,
    #[error("maximum pattern length must be at least 1")]
    ZeroPatternLength,
    #[error("{found} constant sets for {expected} modes")]
    ConstantsCount { expected: usize, found: usize },
    #[error("constants of mode {0} are negative or not finite")]
    BadConstants(usize),
    #[error("box {name} has dimension {found}, system has {expected}")]
    BoxDimension { name: &'static str, expected: usize, found: usize },
    #[error("ball {ball}: {source}")]
    Tube {
        ball: usize,
        #[source]
        source: EulerError,
    },
    #[error("ball {0}: the pattern found by the search fails the full check")]
    Inconsistent(usize),
}

/// Everything needed to synthesize one or two controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub system: SwitchedSystem,
    pub constants: Vec<ModeConstants>,
    pub r: IntervalBox,
    pub s: IntervalBox,
    /// Second zone for two-zone problems.
    pub r2: Option<IntervalBox>,
    pub grid: Vec<usize>,
    pub max_len: usize,
}

impl SynthesisProblem {
    pub fn validate(&self) -> Result<(), SynthError> {
        let n = self.system.dim();
        for (name, b) in [("R", Some(&self.r)), ("S", Some(&self.s)), ("R2", self.r2.as_ref())] {
            if let Some(b) = b {
                if b.dim() != n {
                    return Err(SynthError::BoxDimension { name, expected: n, found: b.dim() });
                }
            }
        }
        if !self.s.contains_box(&self.r) {
            return Err(SynthError::RegionOutsideSafe("R"));
        }
        if let Some(r2) = &self.r2 {
            if !self.s.contains_box(r2) {
                return Err(SynthError::RegionOutsideSafe("R2"));
            }
        }
        if self.grid.len() != n {
            return Err(SynthError::GridDimension { expected: n, found: self.grid.len() });
        }
        if self.grid.contains(&0) {
            return Err(SynthError::EmptyGrid);
        }
        if self.max_len == 0 {
            return Err(SynthError::ZeroPatternLength);
        }
        if self.constants.len() != self.system.num_modes() {
            return Err(SynthError::ConstantsCount { expected: self.system.num_modes(), found: self.constants.len() });
        }
        if let Some(k) = self.constants.iter().position(|c| !c.is_well_formed()) {
            return Err(SynthError::BadConstants(k + 1));
        }
        Ok(())
    }

    /// `(label, source, target)` for each controller to build.
    pub fn legs(&self) -> Vec<(String, IntervalBox, IntervalBox)> {
        match &self.r2 {
            None => vec![("R->R".into(), self.r.clone(), self.r.clone())],
            Some(r2) => {
                vec![("R1->R2".into(), self.r.clone(), r2.clone()), ("R2->R1".into(), r2.clone(), self.r.clone())]
            }
        }
    }
}

/// Balls circumscribing the cells of a uniform grid over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covering {
    pub grid: Vec<usize>,
    /// Common radius: half the cell diagonal.
    pub delta: f64,
    /// Cell centers, row-major with the first axis slowest.
    pub centers: Vec<Vec<f64>>,
}

impl Covering {
    pub fn balls(&self) -> impl Iterator<Item = Ball> + '_ {
        self.centers.iter().map(|c| Ball { center: c.clone(), radius: self.delta })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Partitions `r` into `∏ grid_i` congruent cells and circumscribes each.
pub fn cover_region(r: &IntervalBox, grid: &[usize]) -> Covering {
    let cell: Vec<f64> = r.widths().zip(grid).map(|(w, &m)| w / m as f64).collect();
    let delta = 0.5 * cell.iter().map(|c| c * c).sum::<f64>().sqrt();
    let total: usize = grid.iter().product();
    let mut centers = Vec::with_capacity(total);
    let mut idx = vec![0usize; grid.len()];
    for _ in 0..total {
        centers.push((0..grid.len()).map(|i| r.lo()[i] + (idx[i] as f64 + 0.5) * cell[i]).collect());
        for i in (0..grid.len()).rev() {
            idx[i] += 1;
            if idx[i] < grid[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Covering { grid: grid.to_vec(), delta, centers }
}

/// Record of one Euler sub-step of a certified tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvidence {
    /// 1-based sub-step index across the whole pattern.
    pub step: usize,
    pub t: f64,
    pub mode: usize,
    pub radius: f64,
    /// Clearance of the sub-step ball inside `S`.
    pub safe_margin: f64,
    /// Smallest sampled second difference of this sub-step's radius curve.
    pub min_second_derivative: f64,
}

/// Margins proving conditions 1 to 3 for one ball and pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub initial_margin: f64,
    pub steps: Vec<StepEvidence>,
    pub final_target_margin: f64,
    pub final_ball: Ball,
}

/// First condition a ball or pattern violates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    InitialNotInSafe {
        margin: f64,
    },
    LeftSafe {
        step: usize,
        margin: f64,
    },
    FinalNotInTarget {
        step: usize,
        margin: f64,
    },
    NotConvex {
        step: usize,
        min_second_derivative: f64,
    },
    /// The radius bound overflowed or became inconsistent.
    Numerical {
        step: usize,
        message: String,
    },
}

impl Violation {
    pub fn describe(&self) -> String {
        match self {
            Violation::InitialNotInSafe { margin } => format!("initial ball not in S (margin {margin:.6e})"),
            Violation::LeftSafe { step, margin } => format!("ball leaves S at step {step} (margin {margin:.6e})"),
            Violation::FinalNotInTarget { step, margin } => {
                format!("final ball not in target at step {step} (margin {margin:.6e})")
            }
            Violation::NotConvex { step, min_second_derivative } => {
                format!("radius curve not convex at step {step} (min second difference {min_second_derivative:.6e})")
            }
            Violation::Numerical { step, message } => format!("numerical failure at step {step}: {message}"),
        }
    }
}

fn numerical(step: usize, e: &BoundError) -> Violation {
    Violation::Numerical { step, message: e.to_string() }
}

/// Verdict of one sub-step, shared by the full check and the search.
enum StepOutcome {
    Ok { safe_margin: f64, convexity: ConvexityVerdict },
    Failed(Violation),
}

struct Stepper<'a> {
    system: &'a SwitchedSystem,
    constants: &'a [ModeConstants],
    s: &'a IntervalBox,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(system: &'a SwitchedSystem, constants: &'a [ModeConstants], s: &'a IntervalBox) -> Self {
        Self { system, constants, s, scratch: vec![0.0; system.dim()] }
    }

    /// Advances one sub-step under `mode` and checks the new ball against `S`
    /// and then the sub-step's convexity.
    fn step(
        &mut self,
        mode: usize,
        step: usize,
        center: &mut [f64],
        radius: &mut f64,
    ) -> Result<StepOutcome, EulerError> {
        let m = self.system.mode(mode).ok_or(EulerError::UnknownMode(mode))?;
        let k = self.constants.get(mode - 1).ok_or(EulerError::MissingConstants(mode))?;
        let convexity = match advance_substep(m, k, center, radius, self.system.step_size(), &mut self.scratch) {
            Ok(v) => v,
            Err(EulerError::Bound(e)) => return Ok(StepOutcome::Failed(numerical(step, &e))),
            Err(e) => return Err(e),
        };
        let inc = inclusion_of(center, *radius, self.s);
        if !inc.inside {
            return Ok(StepOutcome::Failed(Violation::LeftSafe { step, margin: inc.margin }));
        }
        if !convexity.convex {
            return Ok(StepOutcome::Failed(Violation::NotConvex {
                step,
                min_second_derivative: convexity.min_second_derivative,
            }));
        }
        Ok(StepOutcome::Ok { safe_margin: inc.margin, convexity })
    }
}

/// Checks conditions 1 to 3 for `pattern` from `ball`: every sub-step ball in
/// `S`, the final ball in `target`, and every sub-step radius curve convex.
/// The final ball is tested against `S` before `target`.
pub fn check_pattern(
    ball: &Ball,
    pattern: &Pattern,
    problem: &SynthesisProblem,
    target: &IntervalBox,
) -> Result<Result<Evidence, Violation>, EulerError> {
    let init = inclusion_of(&ball.center, ball.radius, &problem.s);
    if !init.inside {
        return Ok(Err(Violation::InitialNotInSafe { margin: init.margin }));
    }
    let system = &problem.system;
    let mut stepper = Stepper::new(system, &problem.constants, &problem.s);
    let mut center = ball.center.clone();
    let mut radius = ball.radius;
    let mut steps = Vec::with_capacity(pattern.len() * system.substeps());
    let mut step = 0;
    for (period, &mode) in pattern.modes().iter().enumerate() {
        for sub in 0..system.substeps() {
            step += 1;
            match stepper.step(mode, step, &mut center, &mut radius)? {
                StepOutcome::Failed(v) => return Ok(Err(v)),
                StepOutcome::Ok { safe_margin, convexity } => steps.push(StepEvidence {
                    step,
                    t: period as f64 * system.tau() + (sub + 1) as f64 * system.step_size(),
                    mode,
                    radius,
                    safe_margin,
                    min_second_derivative: convexity.min_second_derivative,
                }),
            }
        }
    }
    let fin = inclusion_of(&center, radius, target);
    if !fin.inside {
        return Ok(Err(Violation::FinalNotInTarget { step, margin: fin.margin }));
    }
    Ok(Ok(Evidence {
        initial_margin: init.margin,
        steps,
        final_target_margin: fin.margin,
        final_ball: Ball { center, radius },
    }))
}

/// Why no pattern was found for a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    /// Dominant cause: the initial ball, else the best full-length attempt
    /// when any tube survived to its end, else the first violation seen.
    pub cause: Violation,
    pub patterns_tried: usize,
    pub left_safe: usize,
    pub not_in_target: usize,
    pub not_convex: usize,
    pub numerical: usize,
    /// Pattern whose final ball came closest to fitting in the target.
    pub best_attempt: Option<Pattern>,
}

/// Search outcome for one ball.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchResult {
    Found(Pattern),
    NotFound(FailureReport),
}

struct Node {
    prefix: Vec<usize>,
    center: Vec<f64>,
    radius: f64,
}

/// Breadth-first search over patterns of length `1..=max_len` in
/// (length, lexicographic) order. A prefix is dropped as soon as one of its
/// sub-step balls leaves `S` or a radius curve fails the convexity test,
/// since no extension can repair either.
pub fn find_pattern(ball: &Ball, problem: &SynthesisProblem, target: &IntervalBox) -> Result<SearchResult, EulerError> {
    let init = inclusion_of(&ball.center, ball.radius, &problem.s);
    let mut report = FailureReport {
        cause: Violation::InitialNotInSafe { margin: init.margin },
        patterns_tried: 0,
        left_safe: 0,
        not_in_target: 0,
        not_convex: 0,
        numerical: 0,
        best_attempt: None,
    };
    if !init.inside {
        return Ok(SearchResult::NotFound(report));
    }
    let system = &problem.system;
    let n_modes = system.num_modes();
    let mut stepper = Stepper::new(system, &problem.constants, &problem.s);
    let mut first: Option<Violation> = None;
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    let mut frontier = vec![Node { prefix: Vec::new(), center: ball.center.clone(), radius: ball.radius }];
    for len in 1..=problem.max_len {
        let mut next = Vec::new();
        for node in &frontier {
            'modes: for mode in 1..=n_modes {
                report.patterns_tried += 1;
                let mut center = node.center.clone();
                let mut radius = node.radius;
                let base = node.prefix.len() * system.substeps();
                for sub in 1..=system.substeps() {
                    if let StepOutcome::Failed(v) = stepper.step(mode, base + sub, &mut center, &mut radius)? {
                        match v {
                            Violation::LeftSafe { .. } => report.left_safe += 1,
                            Violation::NotConvex { .. } => report.not_convex += 1,
                            _ => report.numerical += 1,
                        }
                        first.get_or_insert(v);
                        continue 'modes;
                    }
                }
                let mut prefix = node.prefix.clone();
                prefix.push(mode);
                let fin = inclusion_of(&center, radius, target);
                if fin.inside {
                    return Ok(SearchResult::Found(Pattern::from_vec_unchecked(prefix)));
                }
                if best.as_ref().is_none_or(|(m, _, _)| fin.margin > *m) {
                    best = Some((fin.margin, prefix.clone(), base + system.substeps()));
                }
                if len < problem.max_len {
                    next.push(Node { prefix, center, radius });
                } else {
                    report.not_in_target += 1;
                    first.get_or_insert(Violation::FinalNotInTarget {
                        step: base + system.substeps(),
                        margin: fin.margin,
                    });
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    report.cause = match &best {
        Some((margin, _, step)) => Violation::FinalNotInTarget { step: *step, margin: *margin },
        None => first.expect("every search tries at least one pattern"),
    };
    report.best_attempt = best.map(|(_, p, _)| Pattern::from_vec_unchecked(p));
    Ok(SearchResult::NotFound(report))
}

/// Per-ball result stored in a controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallEntry {
    pub index: usize,
    pub center: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pattern: Option<Pattern>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence: Option<Evidence>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<FailureReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Complete,
    Partial { failed: Vec<usize> },
}

/// Covering of `source` with one certified pattern per ball, steering into
/// `target` while staying in `safe`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub label: String,
    pub source: IntervalBox,
    pub target: IntervalBox,
    pub safe: IntervalBox,
    pub grid: Vec<usize>,
    pub delta: f64,
    pub balls: Vec<BallEntry>,
    pub status: Status,
}

impl Controller {
    pub fn is_complete(&self) -> bool {
        self.status == Status::Complete
    }

    /// First ball in grid order that contains `x` and has a pattern.
    pub fn locate(&self, x: &[f64]) -> Option<&BallEntry> {
        self.balls.iter().find(|b| b.pattern.is_some() && crate::geometry::distance(&b.center, x) <= self.delta)
    }

    pub fn max_pattern_len(&self) -> usize {
        self.balls.iter().filter_map(|b| b.pattern.as_ref()).map(Pattern::len).max().unwrap_or(0)
    }

    /// `hist[k]` counts balls certified with a pattern of length `k`.
    pub fn length_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.max_pattern_len() + 1];
        for p in self.balls.iter().filter_map(|b| b.pattern.as_ref()) {
            hist[p.len()] += 1;
        }
        hist
    }
}

/// Synthesizes one controller per leg of the problem. Balls are searched in
/// parallel and collected in grid order, so the result does not depend on
/// the thread count.
pub fn synthesize(problem: &SynthesisProblem) -> Result<Vec<Controller>, SynthError> {
    problem.validate()?;
    problem.legs().into_iter().map(|(label, source, target)| synthesize_leg(problem, label, &source, &target)).collect()
}

fn synthesize_leg(
    problem: &SynthesisProblem,
    label: String,
    source: &IntervalBox,
    target: &IntervalBox,
) -> Result<Controller, SynthError> {
    let covering = cover_region(source, &problem.grid);
    let balls = covering
        .centers
        .par_iter()
        .enumerate()
        .map(|(index, center)| {
            let ball = Ball { center: center.clone(), radius: covering.delta };
            let tube = |source| SynthError::Tube { ball: index, source };
            let mut entry = BallEntry { index, center: center.clone(), pattern: None, evidence: None, failure: None };
            match find_pattern(&ball, problem, target).map_err(tube)? {
                SearchResult::Found(p) => {
                    let ev = check_pattern(&ball, &p, problem, target)
                        .map_err(tube)?
                        .map_err(|_| SynthError::Inconsistent(index))?;
                    entry.pattern = Some(p);
                    entry.evidence = Some(ev);
                }
                SearchResult::NotFound(r) => entry.failure = Some(r),
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let failed: Vec<usize> = balls.iter().filter(|b| b.pattern.is_none()).map(|b| b.index).collect();
    Ok(Controller {
        label,
        source: source.clone(),
        target: target.clone(),
        safe: problem.s.clone(),
        grid: covering.grid,
        delta: covering.delta,
        balls,
        status: if failed.is_empty() { Status::Complete } else { Status::Partial { failed } },
    })
}
