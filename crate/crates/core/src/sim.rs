//! Reference integration and closed-loop validation.
//!
//! Fixed-step classical Runge-Kutta stands in for the exact flow. Closed-loop
//! runs look up the first ball containing the state, apply its pattern and
//! check that every sample stays in `S` and every cycle ends in the target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::FieldError;
use crate::geometry::IntervalBox;
use crate::synth::Controller;
use crate::system::{Mode, SwitchedSystem};

/// Oracle steps per sampling period.
pub const ORACLE_STEPS_PER_PERIOD: usize = 1000;

/// Largest accepted change when the step count is doubled.
pub const RICHARDSON_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("mode {mode}: {source}")]
    Field {
        mode: usize,
        #[source]
        source: FieldError,
    },
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error("unknown mode {0}")]
    UnknownMode(usize),
    #[error("no controller given")]
    NoControllers,
    #[error("initial state {0:?} is not in any certified ball")]
    NotCovered(Vec<f64>),
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    fn step(&mut self, mode: &Mode, x: &mut [f64], h: f64) -> Result<(), SimError> {
        let err = |source| SimError::Field { mode: mode.id(), source };
        mode.eval_into(x, &mut self.k1).map_err(err)?;
        for ((t, xi), k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k1) {
            *t = xi + 0.5 * h * k;
        }
        mode.eval_into(&self.tmp, &mut self.k2).map_err(err)?;
        for ((t, xi), k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k2) {
            *t = xi + 0.5 * h * k;
        }
        mode.eval_into(&self.tmp, &mut self.k3).map_err(err)?;
        for ((t, xi), k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k3) {
            *t = xi + h * k;
        }
        mode.eval_into(&self.tmp, &mut self.k4).map_err(err)?;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Fixed-step RK4 from `x0` over a duration `t` in `steps` steps.
pub fn reference_integrate(mode: &Mode, x0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>, SimError> {
    if steps == 0 {
        return Err(SimError::ZeroSteps);
    }
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    let h = t / steps as f64;
    for _ in 0..steps {
        rk.step(mode, &mut x, h)?;
    }
    Ok(x)
}

/// Step count keeping the oracle step at or below `tau / 1000`.
pub fn oracle_steps(t: f64, tau: f64) -> usize {
    ((t / tau * ORACLE_STEPS_PER_PERIOD as f64).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckedIntegration {
    pub state: Vec<f64>,
    /// `‖x(2·steps) − x(steps)‖ / max(1, ‖x(2·steps)‖)`.
    pub richardson_change: f64,
    pub warning: bool,
}

/// [`reference_integrate`] plus a rerun at twice the step count.
pub fn reference_integrate_checked(
    mode: &Mode,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<CheckedIntegration, SimError> {
    let coarse = reference_integrate(mode, x0, t, steps)?;
    let fine = reference_integrate(mode, x0, t, 2 * steps)?;
    let diff = crate::geometry::distance(&coarse, &fine);
    let change = diff / crate::geometry::norm(&fine).max(1.0);
    Ok(CheckedIntegration {
        state: fine,
        richardson_change: change,
        warning: change.is_nan() || change >= RICHARDSON_TOLERANCE,
    })
}

/// States at `samples` equally spaced times over `[0, t]` (excluding `0`),
/// each interval integrated with `steps_per_sample` RK4 steps.
pub fn reference_samples(
    mode: &Mode,
    x0: &[f64],
    t: f64,
    samples: usize,
    steps_per_sample: usize,
) -> Result<Vec<Vec<f64>>, SimError> {
    if samples == 0 || steps_per_sample == 0 {
        return Err(SimError::ZeroSteps);
    }
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    let h = t / (samples * steps_per_sample) as f64;
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        for _ in 0..steps_per_sample {
            rk.step(mode, &mut x, h)?;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// One trajectory sample, taken at every Euler sub-step boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub active_mode: usize,
    pub ball_index: usize,
    pub cycle: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopViolation {
    /// A state left `S`; checked at every oracle step.
    Safety { cycle: usize, t: f64, x: Vec<f64> },
    /// A cycle ended outside its target.
    Recurrence { cycle: usize, x: Vec<f64> },
    /// The state at the start of a cycle lies in no certified ball.
    Uncovered { cycle: usize, x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub x0: Vec<f64>,
    pub rows: Vec<TrajectoryRow>,
    pub violations: Vec<LoopViolation>,
    pub completed_cycles: usize,
}

/// Runs `cycles` controller cycles from `x0`. Cycle `c` uses
/// `controllers[c % controllers.len()]`, so a two-zone pair alternates.
/// Stops early after a recurrence or covering failure.
pub fn closed_loop_simulate(
    controllers: &[Controller],
    system: &SwitchedSystem,
    x0: &[f64],
    cycles: usize,
) -> Result<SimRun, SimError> {
    let first = controllers.first().ok_or(SimError::NoControllers)?;
    if first.locate(x0).is_none() {
        return Err(SimError::NotCovered(x0.to_vec()));
    }
    let s = system.substeps();
    let h = system.step_size();
    let per_sub = ORACLE_STEPS_PER_PERIOD.div_ceil(s);
    let dt = h / per_sub as f64;
    let mut rk = Rk4::new(system.dim());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut completed = 0;
    for cycle in 0..cycles {
        let ctl = &controllers[cycle % controllers.len()];
        let Some(entry) = ctl.locate(&x) else {
            violations.push(LoopViolation::Uncovered { cycle, x: x.clone() });
            break;
        };
        let pattern = entry.pattern.as_ref().expect("located balls carry a pattern");
        rows.push(TrajectoryRow { t, x: x.clone(), active_mode: pattern.modes()[0], ball_index: entry.index, cycle });
        let mut safe = true;
        let t_start = t;
        let mut sub_count = 0usize;
        for &id in pattern.modes() {
            let mode = system.mode(id).ok_or(SimError::UnknownMode(id))?;
            for _ in 0..s {
                for _ in 0..per_sub {
                    rk.step(mode, &mut x, dt)?;
                    if safe && !ctl.safe.contains(&x) {
                        safe = false;
                        violations.push(LoopViolation::Safety { cycle, t: t + dt, x: x.clone() });
                    }
                    t += dt;
                }
                sub_count += 1;
                t = t_start + sub_count as f64 * h;
                rows.push(TrajectoryRow { t, x: x.clone(), active_mode: id, ball_index: entry.index, cycle });
            }
        }
        if !ctl.target.contains(&x) {
            violations.push(LoopViolation::Recurrence { cycle, x: x.clone() });
            break;
        }
        completed += 1;
    }
    Ok(SimRun { x0: x0.to_vec(), rows, violations, completed_cycles: completed })
}

/// Uniform random point of a box.
pub fn random_point(rng: &mut impl Rng, b: &IntervalBox) -> Vec<f64> {
    b.lo().iter().zip(b.hi()).map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l }).collect()
}

/// `runs` closed-loop simulations from uniform starts in the first
/// controller's source box. Run `i` draws its start from stream `i` of
/// `seed`, so results do not depend on the thread count.
pub fn simulate_runs(
    controllers: &[Controller],
    system: &SwitchedSystem,
    runs: usize,
    cycles: usize,
    seed: u64,
) -> Result<Vec<SimRun>, SimError> {
    let first = controllers.first().ok_or(SimError::NoControllers)?;
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x0 = random_point(&mut rng, &first.source);
            closed_loop_simulate(controllers, system, &x0, cycles)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VectorField;
    use crate::synth::{BallEntry, Status};
    use crate::system::Pattern;

    fn mode(comps: &[&str]) -> Mode {
        Mode::new(1, VectorField::parse(comps).unwrap(), None).unwrap()
    }

    #[test]
    fn zero_field_is_fixed() {
        let z = Mode::new(1, VectorField::zero(2), None).unwrap();
        assert_eq!(reference_integrate(&z, &[0.3, -1.0], 5.0, 10).unwrap(), vec![0.3, -1.0]);
    }

    #[test]
    fn exponential_decay() {
        let x = reference_integrate(&mode(&["-x1"]), &[1.0], 1.0, 1000).unwrap();
        assert!((x[0] - (-1f64).exp()).abs() < 1e-9);
        assert!((x[0] - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn dcdc_mode_one_matches_closed_form() {
        // Diagonal A, so exp(A t) is elementwise.
        let a = [-0.05 / 3.0, -1.0 / (70.0 * 1.005)];
        let b = [1.0 / 3.0, 0.0];
        let m = Mode::new(
            1,
            VectorField::parse(&[format!("{:?} * x1 + {:?}", a[0], b[0]), format!("{:?} * x2", a[1])]).unwrap(),
            None,
        )
        .unwrap();
        let (x0, t) = ([2.0, 1.2], 0.5);
        let got = reference_integrate(&m, &x0, t, oracle_steps(t, 0.5)).unwrap();
        for i in 0..2 {
            let e = (a[i] * t).exp();
            let want = e * x0[i] + (e - 1.0) / a[i] * b[i];
            assert!((got[i] - want).abs() < 1e-8, "{} vs {}", got[i], want);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let m = mode(&["-x1"]);
        let exact = (-1f64).exp();
        let steps = [4usize, 8, 16, 32, 64];
        let pts: Vec<(f64, f64)> = steps
            .iter()
            .map(|&n| {
                let e = (reference_integrate(&m, &[1.0], 1.0, n).unwrap()[0] - exact).abs();
                ((1.0 / n as f64).ln(), e.ln())
            })
            .collect();
        let k = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn richardson_check_flags_coarse_steps() {
        let m = mode(&["-x1"]);
        assert!(!reference_integrate_checked(&m, &[1.0], 1.0, 1000).unwrap().warning);
        assert!(reference_integrate_checked(&m, &[1.0], 1.0, 2).unwrap().warning);
        assert_eq!(reference_integrate(&m, &[1.0], 1.0, 0), Err(SimError::ZeroSteps));
    }

    fn scalar_controller(pattern_len: usize) -> (SwitchedSystem, Controller) {
        let sys = SwitchedSystem::new(1, vec![mode(&["-x1"])], 0.5, 2).unwrap();
        let r = IntervalBox::from_intervals(&[[-1.0, 1.0]]).unwrap();
        let balls = [-0.5, 0.5]
            .iter()
            .enumerate()
            .map(|(index, &c)| BallEntry {
                index,
                center: vec![c],
                pattern: Some(Pattern::new(vec![1; pattern_len], 1, 8).unwrap()),
                evidence: None,
                failure: None,
            })
            .collect();
        let ctl = Controller {
            label: "R->R".into(),
            source: r.clone(),
            target: r,
            safe: IntervalBox::from_intervals(&[[-2.0, 2.0]]).unwrap(),
            grid: vec![2],
            delta: 0.5,
            balls,
            status: Status::Complete,
        };
        (sys, ctl)
    }

    #[test]
    fn closed_loop_on_a_contraction() {
        let (sys, ctl) = scalar_controller(2);
        let run = closed_loop_simulate(std::slice::from_ref(&ctl), &sys, &[0.9], 3).unwrap();
        assert!(run.violations.is_empty());
        assert_eq!(run.completed_cycles, 3);
        // One start row plus 2 periods × 2 sub-steps per cycle.
        assert_eq!(run.rows.len(), 3 * 5);
        let last = run.rows.last().unwrap();
        assert!((last.t - 3.0).abs() < 1e-12);
        assert!((last.x[0] - 0.9 * (-3f64).exp()).abs() < 1e-10);
        assert_eq!(closed_loop_simulate(&[ctl], &sys, &[5.0], 1), Err(SimError::NotCovered(vec![5.0])));
    }

    #[test]
    fn tie_goes_to_first_ball() {
        let (sys, ctl) = scalar_controller(1);
        let run = closed_loop_simulate(&[ctl], &sys, &[0.0], 1).unwrap();
        assert_eq!(run.rows[0].ball_index, 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let (sys, ctl) = scalar_controller(1);
        let a = simulate_runs(std::slice::from_ref(&ctl), &sys, 8, 2, 7).unwrap();
        let b = simulate_runs(&[ctl], &sys, 8, 2, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.violations.is_empty()));
    }
}
