use rand::Rng;

use super::{EnvSpec, EnvState};
use crate::rng::LabRng;

/// Position/velocity double integrator.
///
/// ```text
/// x' = clip(x + 0.05 v, -2, 2)
/// v' = clip(v + 0.05 a, -2, 2)
/// r  = -x^2 - 0.1 a^2            (evaluated before the update)
/// ```
///
/// Initial `x, v ~ U(-1, 1)`. Episodes are 200 steps; there is no
/// terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub gamma: f64,
}

pub(crate) const DT: f64 = 0.05;
pub(crate) const LIMIT: f64 = 2.0;

impl Default for PointMass {
    fn default() -> Self {
        Self { gamma: 0.99 }
    }
}

impl PointMass {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 2,
            action_dim: 1,
            gamma: self.gamma,
            max_steps: 200,
            reward_bounds: (-(LIMIT * LIMIT + 0.1), 0.0),
        }
    }

    pub fn reset(&self, rng: &mut LabRng) -> EnvState {
        EnvState {
            coords: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            step: 0,
        }
    }

    pub(super) fn transition(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64, bool) {
        let (x, v, u) = (s[0], s[1], a[0]);
        let reward = -x * x - 0.1 * u * u;
        let x2 = (x + DT * v).clamp(-LIMIT, LIMIT);
        let v2 = (v + DT * u).clamp(-LIMIT, LIMIT);
        (vec![x2, v2], reward, false)
    }
}

#[cfg(test)]
mod tests {
    use crate::envs::{Env, EnvState};
    use crate::rng::seeded;

    #[test]
    fn rest_at_unit_position() {
        let env = Env::by_name("point-mass").unwrap();
        let s = EnvState {
            coords: vec![1.0, 0.0],
            step: 0,
        };
        let st = env.step(&s, &[0.0], &mut seeded(0)).unwrap();
        assert_eq!(st.state.coords, vec![1.0, 0.0]);
        assert_eq!(st.reward, -1.0);
        assert!(!st.done());
    }

    #[test]
    fn euler_step_by_hand() {
        let env = Env::by_name("point-mass").unwrap();
        let s = EnvState {
            coords: vec![0.5, -1.0],
            step: 199,
        };
        let st = env.step(&s, &[0.8], &mut seeded(0)).unwrap();
        // x' = 0.5 - 0.05, v' = -1 + 0.04, r = -0.25 - 0.064
        assert!((st.state.coords[0] - 0.45).abs() < 1e-15);
        assert!((st.state.coords[1] + 0.96).abs() < 1e-15);
        assert!((st.reward + 0.314).abs() < 1e-15);
        assert!(st.truncated && !st.terminal);
    }
}
