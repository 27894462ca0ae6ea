//! Controller synthesis for sampled switched systems.
//!
//! Each mode's flow is approximated by forward Euler steps, and the distance
//! to the exact flow is bounded in closed form from the mode's one-sided
//! Lipschitz constant. A region is covered by balls and every ball is mapped
//! to a mode pattern whose error tube stays in the safety box and ends in the
//! target box.

pub mod constants;
pub mod euler;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod sim;
pub mod synth;
pub mod system;

pub use geometry::{ball_in_box, inflate_box, Ball, Inclusion, IntervalBox};
pub use system::{Affine, ErrorTube, Mode, ModeConstants, Pattern, SwitchedSystem, TubeSample};
