//! Forward-Euler tubes with closed-form one-sided Lipschitz error radii.
//!
//! For a mode with constants `(λ, C)` and an initial ball of radius `δ`, the
//! exact flow from any point of the ball stays within `delta_bound(λ, C, δ, t)`
//! of the Euler line `x̃ + t f(x̃)` for `t` in one step. Chaining the bound over
//! sub-steps and over the modes of a pattern gives an [`ErrorTube`].
//!
//! The three closed forms (selected by the exact sign of `λ`) all share the
//! shape `δ² e^{κt} + K · (e^u − 1 − u − u²/2)`. They are evaluated through
//! `G(u) = (e^u − 1 − u − u²/2) / u³`, which is algebraically identical to the
//! textbook expressions but free of the catastrophic cancellation those
//! suffer when `|λ| t` is small.

use thiserror::Error;

use crate::expr::FieldError;
use crate::geometry::Ball;
use crate::system::{ErrorTube, Mode, ModeConstants, Pattern, SwitchedSystem, TubeSample};

/// Relative size below which a negative radicand is treated as roundoff.
pub const RADICAND_ROUNDOFF: f64 = 1e-14;

/// Second-difference samples must exceed this to count as convex.
pub const CONVEXITY_THRESHOLD: f64 = 1e-12;

/// Number of uniform sample points used by the convexity test.
pub const CONVEXITY_SAMPLES: usize = 101;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("negative radicand {radicand} (λ = {lambda}, C = {c}, δ = {delta}, t = {t})")]
    NegativeRadicand { lambda: f64, c: f64, delta: f64, t: f64, radicand: f64 },
    #[error("non-finite error bound (λ = {lambda}, C = {c}, δ = {delta}, t = {t})")]
    NonFinite { lambda: f64, c: f64, delta: f64, t: f64 },
    #[error("invalid bound arguments (λ = {lambda}, C = {c}, δ = {delta}, t = {t})")]
    InvalidArguments { lambda: f64, c: f64, delta: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EulerError {
    #[error("mode {mode}: {source}")]
    Field {
        mode: usize,
        #[source]
        source: FieldError,
    },
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("no constants for mode {0}")]
    MissingConstants(usize),
    #[error("unknown mode {0}")]
    UnknownMode(usize),
    #[error("ball has dimension {found}, system has {expected}")]
    Dimension { expected: usize, found: usize },
}

/// `G(u) = (e^u − 1 − u − u²/2) / u³`, with `G(0) = 1/6`. Positive for all `u`.
fn cubic_remainder_ratio(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        // Σ u^k / (k+3)!
        let mut term = 1.0 / 6.0;
        let mut sum = term;
        for k in 1..40 {
            term *= u / (k as f64 + 3.0);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (u.exp_m1() - u - 0.5 * u * u) / (u * u * u)
    }
}

/// Closed-form error radius `δ_j(t)` for constants `(λ, C)` and initial radius `δ`.
///
/// * `λ < 0`: `(δ² e^{λt} + C²/λ² (t² + 2t/λ + 2/λ² (1 − e^{λt})))^{1/2}`
/// * `λ = 0`: `(δ² e^{t} + C² (−t² − 2t + 2(e^t − 1)))^{1/2}`
/// * `λ > 0`: `(δ² e^{3λt} + C²/(3λ²) (−t² − 2t/(3λ) + 2/(9λ²)(e^{3λt} − 1)))^{1/2}`
///
/// Returns `δ` at `t = 0`.
pub fn delta_bound(lambda: f64, c: f64, delta: f64, t: f64) -> Result<f64, BoundError> {
    let args = (lambda, c, delta, t);
    if !(lambda.is_finite() && c.is_finite() && delta.is_finite() && t.is_finite()) || c < 0.0 || delta < 0.0 || t < 0.0
    {
        return Err(BoundError::InvalidArguments { lambda, c, delta, t });
    }
    if t == 0.0 {
        return Ok(delta);
    }
    let d2 = delta * delta;
    let c2t3 = c * c * t * t * t;
    let (growth, forcing) = if lambda < 0.0 {
        let u = lambda * t;
        (d2 * u.exp(), 2.0 * c2t3 * cubic_remainder_ratio(u) / -lambda)
    } else if lambda == 0.0 {
        (d2 * t.exp(), 2.0 * c2t3 * cubic_remainder_ratio(t))
    } else {
        let v = 3.0 * lambda * t;
        (d2 * v.exp(), 2.0 * c2t3 * cubic_remainder_ratio(v) / lambda)
    };
    finish(args, growth, forcing)
}

fn finish((lambda, c, delta, t): (f64, f64, f64, f64), growth: f64, forcing: f64) -> Result<f64, BoundError> {
    let radicand = growth + forcing;
    if !radicand.is_finite() {
        return Err(BoundError::NonFinite { lambda, c, delta, t });
    }
    if radicand < 0.0 {
        let scale = growth.abs().max(forcing.abs());
        if -radicand <= RADICAND_ROUNDOFF * scale {
            return Ok(0.0);
        }
        return Err(BoundError::NegativeRadicand { lambda, c, delta, t, radicand });
    }
    Ok(radicand.sqrt())
}

/// Result of the numerical convexity test on one `δ`-curve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvexityVerdict {
    pub convex: bool,
    /// Smallest sampled second difference quotient.
    pub min_second_derivative: f64,
}

/// Tests `d²δ(t)/dt² > 0` on `[0, tau]` by central second differences with step
/// `tau·10⁻⁴` at 101 uniform points of `[tau·10⁻³, tau]`.
pub fn delta_second_derivative_positive(
    lambda: f64,
    c: f64,
    delta: f64,
    tau: f64,
) -> Result<ConvexityVerdict, BoundError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(BoundError::InvalidArguments { lambda, c, delta, t: tau });
    }
    let h = tau * 1e-4;
    let start = tau * 1e-3;
    let span = tau - start;
    let mut min = f64::INFINITY;
    for k in 0..CONVEXITY_SAMPLES {
        let t = start + span * k as f64 / (CONVEXITY_SAMPLES - 1) as f64;
        let d = (delta_bound(lambda, c, delta, t + h)? - 2.0 * delta_bound(lambda, c, delta, t)?
            + delta_bound(lambda, c, delta, t - h)?)
            / (h * h);
        min = min.min(d);
    }
    Ok(ConvexityVerdict { convex: min > CONVEXITY_THRESHOLD, min_second_derivative: min })
}

/// One explicit Euler step `x + h f(x)`.
pub fn euler_step(mode: &Mode, x: &[f64], h: f64) -> Result<Vec<f64>, FieldError> {
    let f = mode.eval(x)?;
    Ok(x.iter().zip(&f).map(|(xi, fi)| xi + h * fi).collect())
}

/// Advances `(center, radius)` by one Euler sub-step of length `h` in place
/// and returns the convexity verdict of that sub-step's `δ`-curve.
///
/// `scratch` must have the system dimension.
pub fn advance_substep(
    mode: &Mode,
    constants: &ModeConstants,
    center: &mut [f64],
    radius: &mut f64,
    h: f64,
    scratch: &mut [f64],
) -> Result<ConvexityVerdict, EulerError> {
    let verdict = delta_second_derivative_positive(constants.lambda, constants.c, *radius, h)?;
    mode.eval_into(center, scratch).map_err(|source| EulerError::Field { mode: mode.id(), source })?;
    for (x, f) in center.iter_mut().zip(scratch.iter()) {
        *x += h * f;
    }
    *radius = delta_bound(constants.lambda, constants.c, *radius, h)?;
    Ok(verdict)
}

/// Image of a ball after one sampling period under a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PostImage {
    pub ball: Ball,
    /// `(t, center, radius)` at every sub-step boundary, starting at `t = 0`.
    pub samples: Vec<TubeSample>,
    /// Convexity verdict of each sub-step's `δ`-curve.
    pub convexity: Vec<ConvexityVerdict>,
}

/// Chains `substeps` Euler steps of size `tau / substeps` from the ball center,
/// applying the error bound once per sub-step.
pub fn post_ball(
    ball: &Ball,
    mode: &Mode,
    constants: &ModeConstants,
    tau: f64,
    substeps: usize,
) -> Result<PostImage, EulerError> {
    if ball.dim() != mode.dim() {
        return Err(EulerError::Dimension { expected: mode.dim(), found: ball.dim() });
    }
    let substeps = substeps.max(1);
    let h = tau / substeps as f64;
    let mut center = ball.center.clone();
    let mut radius = ball.radius;
    let mut scratch = vec![0.0; center.len()];
    let mut samples = Vec::with_capacity(substeps + 1);
    let mut convexity = Vec::with_capacity(substeps);
    samples.push(TubeSample { t: 0.0, center: center.clone(), radius });
    for k in 1..=substeps {
        convexity.push(advance_substep(mode, constants, &mut center, &mut radius, h, &mut scratch)?);
        samples.push(TubeSample { t: k as f64 * h, center: center.clone(), radius });
    }
    Ok(PostImage { ball: Ball { center, radius }, samples, convexity })
}

/// Tube along a whole pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTube {
    pub tube: ErrorTube,
    /// One verdict per sub-step; entry `i` covers the step ending at sample `i + 1`.
    pub convexity: Vec<ConvexityVerdict>,
    /// Mode active on each sub-step, aligned with `convexity`.
    pub modes: Vec<usize>,
}

/// Threads a ball through the modes of `pattern`. Sample times run from `0`
/// to `k·tau` in steps of `tau / substeps`; the sample at `k'·tau` carries
/// the recursive pattern radius `δ_π^{k'}` when `substeps = 1`.
pub fn tube_for_pattern(
    ball: &Ball,
    pattern: &Pattern,
    system: &SwitchedSystem,
    constants: &[ModeConstants],
) -> Result<PatternTube, EulerError> {
    dense_tube_for_pattern(ball, pattern, system, constants, 1)
}

/// Like [`tube_for_pattern`] but also emits `resolution − 1` points inside each
/// sub-step, following the Euler line and the un-chained `δ`-curve of that
/// sub-step. Only the sub-step boundary samples carry convexity entries.
pub fn dense_tube_for_pattern(
    ball: &Ball,
    pattern: &Pattern,
    system: &SwitchedSystem,
    constants: &[ModeConstants],
    resolution: usize,
) -> Result<PatternTube, EulerError> {
    if ball.dim() != system.dim() {
        return Err(EulerError::Dimension { expected: system.dim(), found: ball.dim() });
    }
    let resolution = resolution.max(1);
    let s = system.substeps();
    let h = system.step_size();
    let mut center = ball.center.clone();
    let mut radius = ball.radius;
    let mut scratch = vec![0.0; center.len()];
    let mut samples = vec![TubeSample { t: 0.0, center: center.clone(), radius }];
    let mut convexity = Vec::with_capacity(pattern.len() * s);
    let mut modes = Vec::with_capacity(pattern.len() * s);
    for (period, &id) in pattern.modes().iter().enumerate() {
        let mode = system.mode(id).ok_or(EulerError::UnknownMode(id))?;
        let k = constants.get(id - 1).ok_or(EulerError::MissingConstants(id))?;
        let t0 = period as f64 * system.tau();
        for step in 0..s {
            let ts = t0 + step as f64 * h;
            if resolution > 1 {
                mode.eval_into(&center, &mut scratch).map_err(|source| EulerError::Field { mode: id, source })?;
                for r in 1..resolution {
                    let dt = h * r as f64 / resolution as f64;
                    samples.push(TubeSample {
                        t: ts + dt,
                        center: center.iter().zip(&scratch).map(|(x, f)| x + dt * f).collect(),
                        radius: delta_bound(k.lambda, k.c, radius, dt)?,
                    });
                }
            }
            convexity.push(advance_substep(mode, k, &mut center, &mut radius, h, &mut scratch)?);
            modes.push(id);
            samples.push(TubeSample { t: t0 + (step + 1) as f64 * h, center: center.clone(), radius });
        }
    }
    Ok(PatternTube { tube: ErrorTube { samples }, convexity, modes })
}
