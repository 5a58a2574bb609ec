//! Small-sample statistics used by diagnostics and summaries.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// One-sided sign test of H1: median > 0. Zeros are dropped.
///
/// Returns `P(X >= positives)` for `X ~ Binomial(n_nonzero, 1/2)`.
pub fn sign_test_greater(xs: &[f64]) -> f64 {
    let pos = xs.iter().filter(|&&x| x > 0.0).count() as u64;
    let n = xs.iter().filter(|&&x| x != 0.0).count() as u64;
    if n == 0 {
        return 1.0;
    }
    (pos..=n)
        .map(|k| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0)
}

/// One-sided Wilcoxon signed-rank test of H1: location > 0.
///
/// Exact null distribution for up to 30 non-zero values (average ranks for
/// ties are doubled to stay integral), normal approximation beyond that.
pub fn wilcoxon_signed_rank_greater(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = v.len();
    if n == 0 {
        return 1.0;
    }
    v.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    // doubled ranks, ties averaged
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[j + 1].abs() == v[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64; // 2 * average of ranks i+1..=j+1
        for r in &mut ranks2[i..=j] {
            *r = r2;
        }
        i = j + 1;
    }
    let w_plus2: u64 = v
        .iter()
        .zip(&ranks2)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| *r)
        .sum();
    if n <= 30 {
        let total: u64 = ranks2.iter().sum();
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        let mut hi = 0usize;
        for &r in &ranks2 {
            let r = r as usize;
            for s in (0..=hi).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            hi += r;
        }
        let all: f64 = counts.iter().sum();
        counts[w_plus2 as usize..].iter().sum::<f64>() / all
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let sigma = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
        let z = (w_plus2 as f64 / 2.0 - 0.5 - mu) / sigma;
        0.5 * erfc(z / std::f64::consts::SQRT_2)
    }
}

/// Complementary error function (Numerical Recipes `erfcc`, |rel err| < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_statistics() {
        assert_eq!(mean(&[1.0, 3.0]), 2.0);
        assert!((std_err(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(std_err(&[5.0]), 0.0);
    }

    #[test]
    fn sign_test_values() {
        // 10 of 10 positive: 2^-10
        let all = [1.0; 10];
        assert!((sign_test_greater(&all) - 1.0 / 1024.0).abs() < 1e-15);
        // 9 of 10: 11 / 1024
        let mut nine = [1.0; 10];
        nine[0] = -1.0;
        assert!((sign_test_greater(&nine) - 11.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_exact_small() {
        // n = 3, all positive: P(W+ >= 6) = 1/8
        assert!((wilcoxon_signed_rank_greater(&[1.0, 2.0, 3.0]) - 0.125).abs() < 1e-15);
        // ranks 1,2,3 with the smallest negative: W+ = 5, P(W+ >= 5) = 2/8
        assert!((wilcoxon_signed_rank_greater(&[-1.0, 2.0, 3.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_normal_tail_is_sane() {
        let xs: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        assert!(wilcoxon_signed_rank_greater(&xs) < 1e-6);
        let ys: Vec<f64> = (1..=40).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let p = wilcoxon_signed_rank_greater(&ys);
        assert!(p > 0.2 && p < 0.8, "{p}");
    }

    #[test]
    fn erfc_reference_points() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207_050_285).abs() < 1e-7);
        assert!((erfc(-1.0) - 1.842_700_792_949_715).abs() < 1e-7);
    }
}
