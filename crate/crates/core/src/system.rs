//! Switched-system vocabulary: modes, the system itself, patterns, per-mode
//! constants and error tubes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{FieldError, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("system must have at least one mode")]
    NoModes,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("mode ids must be 1..N in order; position {position} holds id {id}")]
    ModeIdOrder { position: usize, id: usize },
    #[error("mode {mode}: field has {found} components, system dimension is {expected}")]
    FieldDimension { mode: usize, expected: usize, found: usize },
    #[error("mode {mode}: affine block has the wrong shape (expected {expected} matrix entries and {dim} offsets)")]
    AffineShape { mode: usize, expected: usize, dim: usize },
    #[error("mode {mode}: affine block disagrees with the field at {point:?} (component {component}: field {field_value}, affine {affine_value})")]
    AffineMismatch { mode: usize, point: Vec<f64>, component: usize, field_value: f64, affine_value: f64 },
    #[error("mode {mode}: {source}")]
    Field {
        mode: usize,
        #[source]
        source: FieldError,
    },
    #[error("sampling period must be finite and positive, got {0}")]
    BadPeriod(f64),
    #[error("sub-sampling factor must be at least 1")]
    BadSubsteps,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatternError {
    #[error("pattern is empty")]
    Empty,
    #[error("pattern length {len} exceeds the maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("mode id {id} is not in 1..={modes}")]
    InvalidMode { id: usize, modes: usize },
    #[error("cannot read `{0}` as a mode id")]
    Syntax(String),
}

/// `f(x) = A x + b`, with `A` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Affine {
    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.offset[i] + (0..n).map(|j| self.matrix[i * n + j] * x[j]).sum::<f64>()).collect()
    }
}

/// One switching mode `j` with its vector field `f_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    id: usize,
    field: VectorField,
    affine: Option<Affine>,
}

impl Mode {
    /// Builds a mode, verifying an affine tag against the field on a fixed set
    /// of probe points.
    pub fn new(id: usize, field: VectorField, affine: Option<Affine>) -> Result<Self, SystemError> {
        if let Some(aff) = &affine {
            let n = field.dim();
            if aff.dim() != n || aff.matrix.len() != n * n {
                return Err(SystemError::AffineShape { mode: id, expected: n * n, dim: n });
            }
            for point in probe_points(n) {
                let fx = field.eval(&point).map_err(|source| SystemError::Field { mode: id, source })?;
                let ax = aff.apply(&point);
                for (k, (u, v)) in fx.iter().zip(&ax).enumerate() {
                    if (u - v).abs() > 1e-9 * (1.0 + u.abs().max(v.abs())) {
                        return Err(SystemError::AffineMismatch {
                            mode: id,
                            point,
                            component: k + 1,
                            field_value: *u,
                            affine_value: *v,
                        });
                    }
                }
            }
        }
        Ok(Self { id, field, affine })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn affine(&self) -> Option<&Affine> {
        self.affine.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        self.field.eval_into(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        self.field.eval(x)
    }
}

fn probe_points(n: usize) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; n]];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        points.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a441);
    for _ in 0..8 {
        points.push((0..n).map(|_| rng.random_range(-10.0..10.0)).collect());
    }
    points
}

/// Sampled switched system `ẋ = f_σ(x)` with mode changes only at multiples
/// of `tau`. Euler steps use `h = tau / substeps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    dim: usize,
    modes: Vec<Mode>,
    tau: f64,
    substeps: usize,
}

impl SwitchedSystem {
    pub fn new(dim: usize, modes: Vec<Mode>, tau: f64, substeps: usize) -> Result<Self, SystemError> {
        if dim == 0 {
            return Err(SystemError::ZeroDimension);
        }
        if modes.is_empty() {
            return Err(SystemError::NoModes);
        }
        for (k, m) in modes.iter().enumerate() {
            if m.id != k + 1 {
                return Err(SystemError::ModeIdOrder { position: k + 1, id: m.id });
            }
            if m.dim() != dim {
                return Err(SystemError::FieldDimension { mode: m.id, expected: dim, found: m.dim() });
            }
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(SystemError::BadPeriod(tau));
        }
        if substeps == 0 {
            return Err(SystemError::BadSubsteps);
        }
        Ok(Self { dim, modes, tau, substeps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Mode by 1-based id.
    pub fn mode(&self, id: usize) -> Option<&Mode> {
        id.checked_sub(1).and_then(|k| self.modes.get(k))
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Same dynamics with a different sub-sampling factor.
    pub fn with_substeps(&self, substeps: usize) -> Result<Self, SystemError> {
        Self::new(self.dim, self.modes.clone(), self.tau, substeps)
    }

    pub fn step_size(&self) -> f64 {
        self.tau / self.substeps as f64
    }
}

/// A finite sequence of mode ids `j1·j2·…·jk`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pattern(Vec<usize>);

impl Pattern {
    /// Validates ids against `1..=num_modes` and the length against `max_len`.
    pub fn new(modes: Vec<usize>, num_modes: usize, max_len: usize) -> Result<Self, PatternError> {
        if modes.is_empty() {
            return Err(PatternError::Empty);
        }
        if modes.len() > max_len {
            return Err(PatternError::TooLong { len: modes.len(), max: max_len });
        }
        if let Some(&id) = modes.iter().find(|&&id| id == 0 || id > num_modes) {
            return Err(PatternError::InvalidMode { id, modes: num_modes });
        }
        Ok(Self(modes))
    }

    pub(crate) fn from_vec_unchecked(modes: Vec<usize>) -> Self {
        Self(modes)
    }

    pub fn modes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every id against the system's mode count.
    pub fn validate(&self, num_modes: usize) -> Result<(), PatternError> {
        Self::new(self.0.clone(), num_modes, usize::MAX).map(|_| ())
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, id) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

/// Parses whitespace- or comma-separated ids, e.g. `"1 3 2"`. Only syntax and
/// emptiness are checked here; use [`Pattern::validate`] against a system.
impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ids = s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>().map_err(|_| PatternError::Syntax(t.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if ids.is_empty() {
            return Err(PatternError::Empty);
        }
        Ok(Self(ids))
    }
}

/// Per-mode constants: one-sided Lipschitz `lambda` (over `T`), Lipschitz
/// `lipschitz` and `m = sup ‖f‖` (over `S`), and `c = lipschitz · m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeConstants {
    pub lambda: f64,
    pub lipschitz: f64,
    pub c: f64,
    pub m: f64,
}

impl ModeConstants {
    pub fn zero() -> Self {
        Self { lambda: 0.0, lipschitz: 0.0, c: 0.0, m: 0.0 }
    }

    /// Non-negativity of `L`, `C`, `M` and finiteness of everything.
    pub fn is_well_formed(&self) -> bool {
        [self.lambda, self.lipschitz, self.c, self.m].iter().all(|v| v.is_finite())
            && self.lipschitz >= 0.0
            && self.c >= 0.0
            && self.m >= 0.0
    }
}

/// One sample of an error tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSample {
    pub t: f64,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Time-stamped Euler centers and error radii along a pattern.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTube {
    pub samples: Vec<TubeSample>,
}

impl ErrorTube {
    pub fn last(&self) -> Option<&TubeSample> {
        self.samples.last()
    }
}
