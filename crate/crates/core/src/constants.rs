//! Per-mode constants: Lipschitz `L_j` and `M_j = sup ‖f_j‖` over `S`,
//! `C_j = L_j M_j`, and the one-sided Lipschitz constant `λ_j` over `T`.
//!
//! Nonlinear modes are handled by multistart sampling followed by a
//! coordinate pattern search projected onto the box. Sampled maxima are lower
//! bounds, so they are inflated by `η` before use and then cross-checked on
//! fresh random pairs. Affine modes get `λ_j` and `L_j` exactly from the
//! matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::FieldError;
use crate::geometry::{distance, norm, IntervalBox};
use crate::linalg;
use crate::system::{Mode, ModeConstants, SwitchedSystem};

/// Corners are enumerated only up to this dimension.
const MAX_CORNER_DIM: usize = 12;

/// Pairs closer than this fraction of the box diameter are resampled.
const MIN_SEPARATION: f64 = 1e-9;

/// Fresh pairs drawn by the soundness check.
pub const SOUNDNESS_PAIRS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Random pairs (or points) per objective.
    pub samples: usize,
    /// Pattern-search iterations per refinement seed.
    pub refine_iters: usize,
    /// Number of best samples refined.
    pub seeds: usize,
    /// Multiplicative inflation of sampled `L`, `M`; additive `|λ|(η − 1) + ε` on `λ`.
    pub eta: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { samples: 20_000, refine_iters: 200, seeds: 16, eta: 1.05, epsilon: 1e-6, rng_seed: 0 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), ConstantsError> {
        if self.samples == 0 || self.refine_iters == 0 || self.seeds == 0 {
            return Err(ConstantsError::Config("sample, iteration and seed counts must be at least 1".into()));
        }
        if !(self.eta.is_finite() && self.eta >= 1.0) {
            return Err(ConstantsError::Config(format!("eta must be finite and >= 1, got {}", self.eta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(ConstantsError::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn inflate(&self, v: f64) -> f64 {
        v * self.eta
    }

    /// Moves `λ` upward, which is the conservative direction for either sign.
    fn inflate_osl(&self, lambda: f64) -> f64 {
        lambda + lambda.abs() * (self.eta - 1.0) + self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstantsError {
    #[error("estimator configuration: {0}")]
    Config(String),
    #[error("mode {mode}: evaluation failed at {point:?}: {source}")]
    Eval {
        mode: usize,
        point: Vec<f64>,
        #[source]
        source: FieldError,
    },
    #[error("mode {mode} has dimension {found}, region has {expected}")]
    Dimension { mode: usize, expected: usize, found: usize },
    #[error("mode {0} has no affine tag")]
    NotAffine(usize),
    #[error("matrix with {len} entries is not square for dimension {dim}")]
    NotSquare { len: usize, dim: usize },
}

/// Best sampled value before and after refinement, with its argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub sampled: f64,
    pub refined: f64,
    /// `x` for point objectives, `x` followed by `y` for pair objectives.
    pub argmax: Vec<f64>,
}

/// Raw (uninflated) sampled maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMaxima {
    pub lipschitz: SearchTrace,
    pub m: SearchTrace,
    pub lambda: SearchTrace,
}

/// Exact values available for affine modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineExact {
    pub lambda: f64,
    pub lipschitz: f64,
}

/// Result of checking the constants on fresh random pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Soundness {
    pub pairs: usize,
    pub lipschitz_violations: usize,
    pub osl_violations: usize,
    /// Largest observed ratio on the fresh pairs.
    pub max_lipschitz_ratio: f64,
    pub max_osl_ratio: f64,
}

impl Soundness {
    pub fn passed(&self) -> bool {
        self.lipschitz_violations == 0 && self.osl_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub mode: usize,
    /// Values used for synthesis.
    pub constants: ModeConstants,
    pub sampled: SampledMaxima,
    pub exact: Option<AffineExact>,
    pub soundness: Soundness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    /// Box over which `λ_j` is certified.
    pub t_box: IntervalBox,
    pub modes: Vec<ModeEstimate>,
}

impl ConstantsReport {
    pub fn table(&self) -> Vec<ModeConstants> {
        self.modes.iter().map(|m| m.constants).collect()
    }

    pub fn sound(&self) -> bool {
        self.modes.iter().all(|m| m.soundness.passed())
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Lipschitz = 0,
    Norm = 1,
    Osl = 2,
    SoundLipschitz = 3,
    SoundOsl = 4,
}

fn rng_for(cfg: &EstimatorConfig, mode: usize, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream((mode as u64) << 8 | stage as u64);
    rng
}

#[derive(Clone, Copy)]
enum PairObjective {
    /// `‖f(y) − f(x)‖ / ‖y − x‖`
    Lipschitz,
    /// `⟨f(y) − f(x), y − x⟩ / ‖y − x‖²`
    Osl,
}

struct Evaluator<'a> {
    mode: &'a Mode,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(mode: &'a Mode) -> Self {
        Self { mode, fx: vec![0.0; mode.dim()], fy: vec![0.0; mode.dim()] }
    }

    fn field(&mut self, x: &[f64]) -> Result<(), ConstantsError> {
        self.mode.eval_into(x, &mut self.fx).map_err(|source| ConstantsError::Eval {
            mode: self.mode.id(),
            point: x.to_vec(),
            source,
        })
    }

    fn norm(&mut self, x: &[f64]) -> Result<f64, ConstantsError> {
        self.field(x)?;
        Ok(norm(&self.fx))
    }

    fn pair(&mut self, obj: PairObjective, x: &[f64], y: &[f64]) -> Result<f64, ConstantsError> {
        let id = self.mode.id();
        self.mode.eval_into(x, &mut self.fx).map_err(|source| ConstantsError::Eval {
            mode: id,
            point: x.to_vec(),
            source,
        })?;
        self.mode.eval_into(y, &mut self.fy).map_err(|source| ConstantsError::Eval {
            mode: id,
            point: y.to_vec(),
            source,
        })?;
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
        Ok(match obj {
            PairObjective::Lipschitz => {
                let df: f64 = self.fx.iter().zip(&self.fy).map(|(a, b)| (b - a) * (b - a)).sum();
                (df / d2).sqrt()
            }
            PairObjective::Osl => {
                let dot: f64 = (0..x.len()).map(|i| (self.fy[i] - self.fx[i]) * (y[i] - x[i])).sum();
                dot / d2
            }
        })
    }
}

fn uniform_point(rng: &mut ChaCha8Rng, region: &IntervalBox) -> Vec<f64> {
    region.lo().iter().zip(region.hi()).map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l }).collect()
}

/// Alternates uniform pairs with local pairs whose separation is log-uniform
/// in `[10⁻⁶, 1]·diam`. Returns `None` for a single-point region.
fn sample_pair(rng: &mut ChaCha8Rng, region: &IntervalBox, local: bool) -> Option<(Vec<f64>, Vec<f64>)> {
    let diam = region.diameter();
    if diam == 0.0 {
        return None;
    }
    loop {
        let x = uniform_point(rng, region);
        let y = if local {
            let dir: Vec<f64> = (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let len = norm(&dir);
            if len == 0.0 {
                continue;
            }
            let r = diam * 10f64.powf(-6.0 * rng.random::<f64>());
            let mut y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d / len).collect();
            region.project(&mut y);
            y
        } else {
            uniform_point(rng, region)
        };
        if distance(&x, &y) >= MIN_SEPARATION * diam {
            return Some((x, y));
        }
    }
}

/// Coordinate pattern search maximizing `eval` from `z`: tries `±step_i` on
/// each coordinate, takes the first improvement, halves all steps when no
/// move improves. `eval` returns `None` for infeasible candidates.
fn pattern_search<F>(z: &mut [f64], mut steps: Vec<f64>, iters: usize, mut eval: F) -> Result<f64, ConstantsError>
where
    F: FnMut(&mut [f64]) -> Result<Option<f64>, ConstantsError>,
{
    let mut best = match eval(z)? {
        Some(v) => v,
        None => return Ok(f64::NEG_INFINITY),
    };
    let floor = steps.iter().cloned().fold(0.0, f64::max) * 1e-12;
    let mut cand = z.to_vec();
    for _ in 0..iters {
        let mut improved = false;
        'coords: for i in 0..z.len() {
            if steps[i] == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                cand.copy_from_slice(z);
                cand[i] += sign * steps[i];
                if let Some(v) = eval(&mut cand)? {
                    if v > best {
                        best = v;
                        z.copy_from_slice(&cand);
                        improved = true;
                        break 'coords;
                    }
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
            if steps.iter().all(|s| *s <= floor) {
                break;
            }
        }
    }
    Ok(best)
}

/// Maximizes a pair objective over `region × region`.
fn maximize_pair(
    mode: &Mode,
    region: &IntervalBox,
    obj: PairObjective,
    cfg: &EstimatorConfig,
    mut rng: ChaCha8Rng,
) -> Result<SearchTrace, ConstantsError> {
    let n = region.dim();
    let diam = region.diameter();
    let mut ev = Evaluator::new(mode);
    let mut pool: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(cfg.samples);
    for k in 0..cfg.samples {
        let Some((x, y)) = sample_pair(&mut rng, region, k % 2 == 1) else {
            return Ok(SearchTrace { sampled: 0.0, refined: 0.0, argmax: region.center().repeat(2) });
        };
        pool.push((ev.pair(obj, &x, &y)?, x, y));
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sampled = pool[0].0;
    let mut best = (sampled, [pool[0].1.clone(), pool[0].2.clone()].concat());

    let widths: Vec<f64> = region.widths().collect();
    for (_, x, y) in pool.into_iter().take(cfg.seeds) {
        // Search variables are (x, y − x) so that a close pair stays close
        // while its base point moves.
        let sep = distance(&x, &y);
        let mut z: Vec<f64> = x.iter().cloned().chain(y.iter().zip(&x).map(|(b, a)| b - a)).collect();
        let steps: Vec<f64> =
            widths.iter().map(|w| 0.05 * w).chain(std::iter::repeat_n(0.5 * sep / (n as f64).sqrt(), n)).collect();
        let mut yb = vec![0.0; n];
        let v = pattern_search(&mut z, steps, cfg.refine_iters, |z| {
            let (xs, ds) = z.split_at_mut(n);
            region.project(xs);
            for i in 0..n {
                yb[i] = xs[i] + ds[i];
            }
            region.project(&mut yb);
            for i in 0..n {
                ds[i] = yb[i] - xs[i];
            }
            if distance(xs, &yb) < MIN_SEPARATION * diam {
                return Ok(None);
            }
            ev.pair(obj, xs, &yb).map(Some)
        })?;
        if v > best.0 {
            let (xs, ds) = z.split_at(n);
            let ys: Vec<f64> = xs.iter().zip(ds).map(|(a, d)| a + d).collect();
            best = (v, [xs.to_vec(), ys].concat());
        }
    }
    Ok(SearchTrace { sampled, refined: best.0, argmax: best.1 })
}

/// Maximizes `‖f(x)‖` over `region`, always including its corners.
fn maximize_norm(
    mode: &Mode,
    region: &IntervalBox,
    cfg: &EstimatorConfig,
    mut rng: ChaCha8Rng,
) -> Result<SearchTrace, ConstantsError> {
    let mut ev = Evaluator::new(mode);
    let mut pool: Vec<(f64, Vec<f64>)> = Vec::with_capacity(cfg.samples + 1);
    if region.dim() <= MAX_CORNER_DIM {
        for c in region.corners() {
            pool.push((ev.norm(&c)?, c));
        }
    }
    pool.push((ev.norm(&region.center())?, region.center()));
    for _ in 0..cfg.samples {
        let x = uniform_point(&mut rng, region);
        pool.push((ev.norm(&x)?, x));
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sampled = pool[0].0;
    let mut best = (sampled, pool[0].1.clone());
    let steps: Vec<f64> = region.widths().map(|w| 0.05 * w).collect();
    for (_, mut x) in pool.into_iter().take(cfg.seeds) {
        let v = pattern_search(&mut x, steps.clone(), cfg.refine_iters, |x| {
            region.project(x);
            ev.norm(x).map(Some)
        })?;
        if v > best.0 {
            best = (v, x);
        }
    }
    Ok(SearchTrace { sampled, refined: best.0, argmax: best.1 })
}

fn check_dim(mode: &Mode, region: &IntervalBox) -> Result<(), ConstantsError> {
    if mode.dim() != region.dim() {
        return Err(ConstantsError::Dimension { mode: mode.id(), expected: region.dim(), found: mode.dim() });
    }
    Ok(())
}

/// Sampled Lipschitz constant over `s`, inflated by `η`.
pub fn estimate_lipschitz(mode: &Mode, s: &IntervalBox, cfg: &EstimatorConfig) -> Result<f64, ConstantsError> {
    check_dim(mode, s)?;
    let t = maximize_pair(mode, s, PairObjective::Lipschitz, cfg, rng_for(cfg, mode.id(), Stage::Lipschitz))?;
    Ok(cfg.inflate(t.refined.max(0.0)))
}

/// `(C, M)` with `M` the inflated sampled `sup ‖f‖` over `s` and `C = L·M`.
pub fn estimate_c(
    mode: &Mode,
    s: &IntervalBox,
    lipschitz: f64,
    cfg: &EstimatorConfig,
) -> Result<(f64, f64), ConstantsError> {
    check_dim(mode, s)?;
    let t = maximize_norm(mode, s, cfg, rng_for(cfg, mode.id(), Stage::Norm))?;
    let m = cfg.inflate(t.refined);
    Ok((lipschitz * m, m))
}

/// Sampled one-sided Lipschitz constant over `t`, shifted upward by
/// `|λ|(η − 1) + ε`.
pub fn estimate_osl(mode: &Mode, t: &IntervalBox, cfg: &EstimatorConfig) -> Result<f64, ConstantsError> {
    check_dim(mode, t)?;
    let tr = maximize_pair(mode, t, PairObjective::Osl, cfg, rng_for(cfg, mode.id(), Stage::Osl))?;
    Ok(cfg.inflate_osl(if t.diameter() == 0.0 { 0.0 } else { tr.refined }))
}

/// Largest eigenvalue of `(A + Aᵀ)/2` for a row-major `n × n` matrix.
pub fn exact_osl_affine(matrix: &[f64], n: usize) -> Result<f64, ConstantsError> {
    if n == 0 || matrix.len() != n * n {
        return Err(ConstantsError::NotSquare { len: matrix.len(), dim: n });
    }
    Ok(linalg::max_symmetric_eigenvalue(matrix, n))
}

/// `T = S` inflated by `τ · max_j M_j`.
pub fn t_box(s: &IntervalBox, tau: f64, m: &[f64]) -> IntervalBox {
    s.inflate(tau * m.iter().cloned().fold(0.0, f64::max))
}

/// Checks `L` on fresh pairs in `s` and `λ` on fresh pairs in `t`.
pub fn soundness_check(
    mode: &Mode,
    constants: &ModeConstants,
    s: &IntervalBox,
    t: &IntervalBox,
    pairs: usize,
    cfg: &EstimatorConfig,
) -> Result<Soundness, ConstantsError> {
    let mut ev = Evaluator::new(mode);
    let mut out = Soundness {
        pairs,
        lipschitz_violations: 0,
        osl_violations: 0,
        max_lipschitz_ratio: 0.0,
        max_osl_ratio: f64::NEG_INFINITY,
    };
    let slack = |bound: f64| 1e-9 * (1.0 + bound.abs());
    let mut rng = rng_for(cfg, mode.id(), Stage::SoundLipschitz);
    for k in 0..pairs {
        let Some((x, y)) = sample_pair(&mut rng, s, k % 2 == 1) else { break };
        let r = ev.pair(PairObjective::Lipschitz, &x, &y)?;
        out.max_lipschitz_ratio = out.max_lipschitz_ratio.max(r);
        if r > constants.lipschitz + slack(constants.lipschitz) {
            out.lipschitz_violations += 1;
        }
    }
    let mut rng = rng_for(cfg, mode.id(), Stage::SoundOsl);
    for k in 0..pairs {
        let Some((x, y)) = sample_pair(&mut rng, t, k % 2 == 1) else { break };
        let r = ev.pair(PairObjective::Osl, &x, &y)?;
        out.max_osl_ratio = out.max_osl_ratio.max(r);
        if r > constants.lambda + slack(constants.lambda) {
            out.osl_violations += 1;
        }
    }
    if out.max_osl_ratio == f64::NEG_INFINITY {
        out.max_osl_ratio = 0.0;
    }
    Ok(out)
}

/// Estimates every mode's constants: `L`, `M` over `s` first, then `T`, then
/// `λ` over `T`, then the soundness check. Modes run in parallel; the result
/// does not depend on scheduling.
pub fn estimate_all(
    system: &SwitchedSystem,
    s: &IntervalBox,
    cfg: &EstimatorConfig,
) -> Result<ConstantsReport, ConstantsError> {
    estimate_all_with(system, s, cfg, SOUNDNESS_PAIRS)
}

/// [`estimate_all`] with a custom soundness sample size.
pub fn estimate_all_with(
    system: &SwitchedSystem,
    s: &IntervalBox,
    cfg: &EstimatorConfig,
    soundness_pairs: usize,
) -> Result<ConstantsReport, ConstantsError> {
    cfg.validate()?;
    let stage1: Vec<(SearchTrace, SearchTrace, Option<AffineExact>)> = system
        .modes()
        .par_iter()
        .map(|mode| {
            check_dim(mode, s)?;
            let lip = maximize_pair(mode, s, PairObjective::Lipschitz, cfg, rng_for(cfg, mode.id(), Stage::Lipschitz))?;
            let m = maximize_norm(mode, s, cfg, rng_for(cfg, mode.id(), Stage::Norm))?;
            let exact = match mode.affine() {
                Some(a) => Some(AffineExact {
                    lambda: exact_osl_affine(&a.matrix, a.dim())?,
                    lipschitz: linalg::spectral_norm(&a.matrix, a.dim()),
                }),
                None => None,
            };
            Ok((lip, m, exact))
        })
        .collect::<Result<_, ConstantsError>>()?;

    let ms: Vec<f64> = stage1.iter().map(|(_, m, _)| cfg.inflate(m.refined)).collect();
    let t = t_box(s, system.tau(), &ms);

    let modes = system
        .modes()
        .par_iter()
        .zip(stage1)
        .map(|(mode, (lip, m, exact))| {
            let osl = maximize_pair(mode, &t, PairObjective::Osl, cfg, rng_for(cfg, mode.id(), Stage::Osl))?;
            let (lambda, lipschitz) = match exact {
                Some(e) => (e.lambda, e.lipschitz),
                None => (cfg.inflate_osl(osl.refined), cfg.inflate(lip.refined.max(0.0))),
            };
            let m_used = cfg.inflate(m.refined);
            let constants = ModeConstants { lambda, lipschitz, c: lipschitz * m_used, m: m_used };
            let soundness = soundness_check(mode, &constants, s, &t, soundness_pairs, cfg)?;
            Ok(ModeEstimate {
                mode: mode.id(),
                constants,
                sampled: SampledMaxima { lipschitz: lip, m, lambda: osl },
                exact,
                soundness,
            })
        })
        .collect::<Result<Vec<_>, ConstantsError>>()?;
    Ok(ConstantsReport { t_box: t, modes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VectorField;
    use crate::system::Affine;

    fn mode(comps: &[&str], affine: Option<Affine>) -> Mode {
        Mode::new(1, VectorField::parse(comps).unwrap(), affine).unwrap()
    }

    fn quick() -> EstimatorConfig {
        EstimatorConfig { samples: 2000, refine_iters: 60, seeds: 4, ..Default::default() }
    }

    fn sq(a: f64) -> IntervalBox {
        IntervalBox::from_intervals(&[[-a, a], [-a, a]]).unwrap()
    }

    #[test]
    fn constant_field_has_zero_lipschitz() {
        let m = mode(&["3", "-1"], None);
        assert_eq!(estimate_lipschitz(&m, &sq(2.0), &quick()).unwrap(), 0.0);
        let z = Mode::new(1, VectorField::zero(2), None).unwrap();
        assert_eq!(estimate_c(&z, &sq(2.0), 0.0, &quick()).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn scalar_contraction_has_osl_minus_one() {
        let m = mode(&["-x1"], None);
        let t = IntervalBox::from_intervals(&[[-3.0, 3.0]]).unwrap();
        let cfg = EstimatorConfig { eta: 1.0, epsilon: 0.0, ..quick() };
        assert!((estimate_osl(&m, &t, &cfg).unwrap() + 1.0).abs() < 1e-12);
        // Inflation moves a negative λ upward.
        let inflated = estimate_osl(&m, &t, &quick()).unwrap();
        assert!(inflated > -1.0 && (inflated - (-1.0 + 0.05 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn affine_sampling_approaches_exact_values() {
        let m = mode(&["-x1 + 3", "x1"], None);
        let cfg = EstimatorConfig { eta: 1.0, epsilon: 0.0, ..quick() };
        let l = estimate_lipschitz(&m, &sq(3.0), &cfg).unwrap();
        assert!((l - 2f64.sqrt()).abs() < 1e-3 * 2f64.sqrt(), "{l}");
        let lam = estimate_osl(&m, &sq(3.0), &cfg).unwrap();
        let exact = exact_osl_affine(&[-1.0, 0.0, 1.0, 0.0], 2).unwrap();
        assert!(lam <= exact + 1e-12 && exact - lam < 1e-3, "{lam} vs {exact}");
    }

    #[test]
    fn norm_maximum_is_found_at_a_corner() {
        let m = mode(&["-x1 - 2", "x1 - x2 - 5"], None);
        let (c, mm) = estimate_c(&m, &sq(3.0), 2.0, &EstimatorConfig { eta: 1.0, ..quick() }).unwrap();
        // Corner (-3, 3) maps to (1, -11).
        let want = 122f64.sqrt();
        assert!((mm - want).abs() < 1e-12, "{mm} vs {want}");
        assert_eq!(c, 2.0 * mm);
    }

    #[test]
    fn exact_osl_examples() {
        assert_eq!(exact_osl_affine(&[-1.0, 0.0, 0.0, -1.0], 2).unwrap(), -1.0);
        let a1 = [-0.05 / 3.0, 0.0, 0.0, -1.0 / (70.0 * 1.005)];
        assert!((exact_osl_affine(&a1, 2).unwrap() + 0.014215).abs() < 5e-7);
        assert!(matches!(exact_osl_affine(&[1.0, 2.0, 3.0], 2), Err(ConstantsError::NotSquare { .. })));
    }

    #[test]
    fn domain_errors_carry_the_point() {
        let m = mode(&["sqrt(x1)"], None);
        let s = IntervalBox::from_intervals(&[[-1.0, 1.0]]).unwrap();
        assert!(matches!(estimate_lipschitz(&m, &s, &quick()), Err(ConstantsError::Eval { mode: 1, .. })));
    }

    #[test]
    fn single_point_region() {
        let m = mode(&["x1"], None);
        let s = IntervalBox::from_intervals(&[[1.0, 1.0]]).unwrap();
        assert_eq!(estimate_lipschitz(&m, &s, &quick()).unwrap(), 0.0);
    }

    #[test]
    fn estimate_all_is_deterministic_and_sound() {
        let m1 = Mode::new(1, VectorField::parse(&["-x1 - x2^3", "x1 - x2"]).unwrap(), None).unwrap();
        let m2 = Mode::new(
            2,
            VectorField::parse(&["-x1 + 3", "x1"]).unwrap(),
            Some(Affine { matrix: vec![-1.0, 0.0, 1.0, 0.0], offset: vec![3.0, 0.0] }),
        )
        .unwrap();
        let sys = SwitchedSystem::new(2, vec![m1, m2], 0.2, 1).unwrap();
        let s = sq(1.0);
        let a = estimate_all_with(&sys, &s, &quick(), 20_000).unwrap();
        let b = estimate_all_with(&sys, &s, &quick(), 20_000).unwrap();
        assert_eq!(a, b);
        assert!(a.sound(), "{:?}", a.modes.iter().map(|m| m.soundness).collect::<Vec<_>>());
        let max_m = a.modes.iter().map(|m| m.constants.m).fold(0.0, f64::max);
        assert_eq!(a.t_box, s.inflate(0.2 * max_m));
        let e = a.modes[1].exact.unwrap();
        assert_eq!(a.modes[1].constants.lambda, e.lambda);
        assert!((e.lipschitz - 2f64.sqrt()).abs() < 1e-12);
        for m in &a.modes {
            assert!(m.constants.is_well_formed());
            assert!((m.constants.c - m.constants.lipschitz * m.constants.m).abs() <= 1e-15 * m.constants.c);
        }
    }

    #[test]
    fn soundness_flags_understated_constants() {
        let m = mode(&["-x1 + 3", "x1"], None);
        let bad = ModeConstants { lambda: -1.0, lipschitz: 1.0, c: 1.0, m: 1.0 };
        let r = soundness_check(&m, &bad, &sq(1.0), &sq(1.0), 1000, &quick()).unwrap();
        assert!(!r.passed());
        assert!(r.lipschitz_violations > 0 && r.osl_violations > 0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(EstimatorConfig { eta: 0.9, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig { samples: 0, ..Default::default() }.validate().is_err());
    }
}
