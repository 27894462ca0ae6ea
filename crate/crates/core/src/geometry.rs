//! Axis-aligned boxes and Euclidean balls.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("box must have at least one axis")]
    EmptyBox,
    #[error("axis {axis}: interval [{lo}, {hi}] is empty or not finite")]
    BadInterval { axis: usize, lo: f64, hi: f64 },
    #[error("ball radius {0} must be finite and non-negative")]
    BadRadius(f64),
}

fn check_dim(expected: usize, found: usize) -> Result<(), GeometryError> {
    if expected == found {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { expected, found })
    }
}

/// Product of closed intervals `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct IntervalBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(GeometryError::EmptyBox);
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(GeometryError::BadInterval { axis: axis + 1, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn from_intervals(intervals: &[[f64; 2]]) -> Result<Self, GeometryError> {
        let (lo, hi) = intervals.iter().map(|[l, h]| (*l, *h)).unzip();
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l)
    }

    /// Euclidean length of the main diagonal.
    pub fn diameter(&self) -> f64 {
        self.widths().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// `other ⊆ self`.
    pub fn contains_box(&self, other: &IntervalBox) -> bool {
        other.dim() == self.dim() && (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Componentwise clamp of `x` into the box.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    /// Grows every interval by `r` on both sides.
    pub fn inflate(&self, r: f64) -> IntervalBox {
        IntervalBox { lo: self.lo.iter().map(|l| l - r).collect(), hi: self.hi.iter().map(|h| h + r).collect() }
    }

    /// All `2^n` corners, in binary counting order over the axes.
    pub fn corners(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        (0..1usize << n)
            .map(move |mask| (0..n).map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] }).collect())
    }
}

impl TryFrom<Vec<[f64; 2]>> for IntervalBox {
    type Error = GeometryError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Self::from_intervals(&v)
    }
}

impl From<IntervalBox> for Vec<[f64; 2]> {
    fn from(b: IntervalBox) -> Self {
        b.lo.into_iter().zip(b.hi).map(|(l, h)| [l, h]).collect()
    }
}

/// Grows `b` by `r` on every side.
pub fn inflate_box(b: &IntervalBox, r: f64) -> IntervalBox {
    b.inflate(r)
}

/// Closed Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(GeometryError::BadRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        distance(&self.center, x) <= self.radius
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Outcome of a ball-in-box test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub inside: bool,
    /// Smallest per-axis clearance between the ball and the box faces.
    /// Negative when the ball sticks out.
    pub margin: f64,
}

/// Tests `B(center, radius) ⊆ box`.
///
/// A Euclidean ball lies in a box exactly when every axis has clearance at
/// least `radius` on both sides, so the test is exact rather than sampled.
pub fn ball_in_box(ball: &Ball, region: &IntervalBox) -> Result<Inclusion, GeometryError> {
    check_dim(region.dim(), ball.dim())?;
    Ok(inclusion_of(&ball.center, ball.radius, region))
}

pub(crate) fn inclusion_of(center: &[f64], radius: f64, region: &IntervalBox) -> Inclusion {
    let margin = center
        .iter()
        .zip(region.lo.iter().zip(&region.hi))
        .map(|(c, (l, h))| (c - radius - l).min(h - c - radius))
        .fold(f64::INFINITY, f64::min);
    Inclusion { inside: margin >= 0.0, margin }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(iv: &[[f64; 2]]) -> IntervalBox {
        IntervalBox::from_intervals(iv).unwrap()
    }

    #[test]
    fn boundary_contact_is_inside() {
        let b = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let inc = ball_in_box(&b, &bx(&[[-1.0, 1.0], [-1.0, 1.0]])).unwrap();
        assert!(inc.inside);
        assert_eq!(inc.margin, 0.0);
    }

    #[test]
    fn dcdc_center_on_safe_boundary() {
        let s = bx(&[[1.54, 2.16], [0.99, 1.41]]);
        let b = Ball::new(vec![2.16, 1.2], 0.01).unwrap();
        assert!(!ball_in_box(&b, &s).unwrap().inside);
    }

    #[test]
    fn helicopter_safe_box_too_narrow() {
        let s = bx(&[[-0.4, 0.4], [-0.7, 0.7]]);
        let b = Ball::new(vec![0.0, 0.0], 0.5).unwrap();
        let inc = ball_in_box(&b, &s).unwrap();
        assert!(!inc.inside);
        assert!((inc.margin + 0.1).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        assert_eq!(
            ball_in_box(&b, &bx(&[[0.0, 1.0], [0.0, 1.0]])),
            Err(GeometryError::DimensionMismatch { expected: 2, found: 1 })
        );
    }

    #[test]
    fn inflate_examples() {
        let unit = bx(&[[0.0, 1.0], [0.0, 1.0]]);
        assert_eq!(inflate_box(&unit, 0.0), unit);
        let sq = bx(&[[-3.0, 3.0], [-3.0, 3.0]]);
        assert_eq!(inflate_box(&sq, 0.5), bx(&[[-3.5, 3.5], [-3.5, 3.5]]));
    }

    #[test]
    fn invalid_boxes() {
        assert!(matches!(IntervalBox::new(vec![], vec![]), Err(GeometryError::EmptyBox)));
        assert!(matches!(IntervalBox::new(vec![1.0], vec![0.0]), Err(GeometryError::BadInterval { axis: 1, .. })));
        assert!(Ball::new(vec![0.0], -1.0).is_err());
        assert!(Ball::new(vec![0.0], f64::NAN).is_err());
    }

    #[test]
    fn corners_enumerate_all_vertices() {
        let b = bx(&[[0.0, 1.0], [2.0, 3.0]]);
        let c: Vec<_> = b.corners().collect();
        assert_eq!(c, vec![vec![0.0, 2.0], vec![1.0, 2.0], vec![0.0, 3.0], vec![1.0, 3.0]]);
    }
}
