use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::LabRng;

/// Zero-mean noise added independently to every action value.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// `+eps` or `-eps` with equal probability.
    Rademacher { eps: f64 },
    /// Equiprobable finite support; must average to zero.
    Discrete { values: Vec<f64> },
    Gaussian { std: f64 },
    Uniform { half_width: f64 },
}

impl NoiseSpec {
    fn support(&self) -> Option<Vec<f64>> {
        match self {
            NoiseSpec::Rademacher { eps } => Some(vec![*eps, -eps]),
            NoiseSpec::Discrete { values } => Some(values.clone()),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            NoiseSpec::Rademacher { eps } => eps.is_finite(),
            NoiseSpec::Discrete { values } => {
                let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                !values.is_empty()
                    && values.iter().all(|v| v.is_finite())
                    && (values.iter().sum::<f64>() / values.len() as f64).abs() <= 1e-12 * scale
            }
            NoiseSpec::Gaussian { std } => std.is_finite() && *std >= 0.0,
            NoiseSpec::Uniform { half_width } => half_width.is_finite() && *half_width >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("noise must be finite and zero-mean: {self:?}")))
        }
    }

    fn draw(&self, rng: &mut LabRng) -> f64 {
        match self {
            NoiseSpec::Rademacher { eps } => {
                if rng.random_bool(0.5) {
                    *eps
                } else {
                    -eps
                }
            }
            NoiseSpec::Discrete { values } => values[rng.random_range(0..values.len())],
            NoiseSpec::Gaussian { std } => Normal::new(0.0, *std).expect("checked").sample(rng),
            NoiseSpec::Uniform { half_width } => {
                if *half_width == 0.0 {
                    0.0
                } else {
                    rng.random_range(-half_width..=*half_width)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenReport {
    pub max_true: f64,
    pub expected_max: f64,
    /// `expected_max - max_true`, never negative.
    pub gap: f64,
    /// Whether the expectation was enumerated rather than sampled.
    pub exact: bool,
}

/// Largest joint support enumerated exactly.
const MAX_ENUMERATION: usize = 1 << 16;

/// Compares `max_a Q(a)` with `E[max_a (Q(a) + U(a))]` for i.i.d. noise `U`.
///
/// Finite supports small enough are enumerated; otherwise `n_trials` draws
/// average `max_a (Q + U)(a) - (Q + U)(a*)` with `a*` the true argmax, a
/// per-draw nonnegative quantity with the same expectation as the gap.
pub fn jensen_gap_demo(true_q: &[f64], noise: &NoiseSpec, n_trials: usize, rng: &mut LabRng) -> Result<JensenReport> {
    if true_q.is_empty() || true_q.iter().any(|q| !q.is_finite()) {
        return Err(Error::invalid("need at least one finite action value"));
    }
    noise.check()?;
    let (a_star, &max_true) = true_q
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let n = true_q.len();
    let enumerable = noise
        .support()
        .filter(|s| (s.len() as f64).powi(n as i32) <= MAX_ENUMERATION as f64);
    let (gap, exact) = if let Some(support) = enumerable {
        let k = support.len();
        let total = k.pow(n as u32);
        let mut sum = 0.0;
        for code in 0..total {
            let mut c = code;
            let mut best = f64::NEG_INFINITY;
            let mut at_star = 0.0;
            for (a, q) in true_q.iter().enumerate() {
                let v = q + support[c % k];
                c /= k;
                best = best.max(v);
                if a == a_star {
                    at_star = v;
                }
            }
            sum += best - at_star;
        }
        (sum / total as f64, true)
    } else {
        if n_trials == 0 {
            return Err(Error::invalid("sampling the gap needs n_trials >= 1"));
        }
        let mut sum = 0.0;
        let mut noisy = vec![0.0; n];
        for _ in 0..n_trials {
            for (v, q) in noisy.iter_mut().zip(true_q) {
                *v = q + noise.draw(rng);
            }
            let best = noisy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            sum += best - noisy[a_star];
        }
        (sum / n_trials as f64, false)
    };
    Ok(JensenReport {
        max_true,
        expected_max: max_true + gap,
        gap,
        exact,
    })
}
