use std::f64::consts::PI;

use rand::Rng;

use super::{EnvSpec, EnvState};
use crate::rng::LabRng;

/// Torque-limited pendulum swing-up.
///
/// Coordinates `(theta, omega)`, `theta = 0` upright. With `u = 2 a`,
/// `g = 10`, `m = l = 1`, `dt = 0.05`:
///
/// ```text
/// omega' = clip(omega + (3 g / (2 l) sin(theta) + 3 / (m l^2) u) dt, -8, 8)
/// theta' = theta + omega' dt
/// r      = -(wrap(theta)^2 + 0.1 omega^2 + 0.001 u^2)   (before the update)
/// ```
///
/// `wrap` maps angles into `[-pi, pi)`. Observations are
/// `(cos theta, sin theta, omega)`. Initial `theta ~ U(-pi, pi)`,
/// `omega ~ U(-1, 1)`; 200-step episodes, no terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub gamma: f64,
}

pub(crate) const MAX_SPEED: f64 = 8.0;
pub(crate) const MAX_TORQUE: f64 = 2.0;
const G: f64 = 10.0;
const DT: f64 = 0.05;

impl Default for Pendulum {
    fn default() -> Self {
        Self { gamma: 0.99 }
    }
}

pub(crate) fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            gamma: self.gamma,
            max_steps: 200,
            reward_bounds: (
                -(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE),
                0.0,
            ),
        }
    }

    pub fn reset(&self, rng: &mut LabRng) -> EnvState {
        EnvState {
            coords: vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)],
            step: 0,
        }
    }

    pub fn observe(&self, s: &EnvState) -> Vec<f64> {
        let (th, om) = (s.coords[0], s.coords[1]);
        vec![th.cos(), th.sin(), om]
    }

    pub(super) fn transition(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64, bool) {
        let (th, om) = (s[0], s[1]);
        let u = MAX_TORQUE * a[0];
        let reward = -(wrap_angle(th).powi(2) + 0.1 * om * om + 0.001 * u * u);
        let om2 = (om + (3.0 * G / 2.0 * th.sin() + 3.0 * u) * DT).clamp(-MAX_SPEED, MAX_SPEED);
        let th2 = th + om2 * DT;
        (vec![th2, om2], reward, false)
    }
}
