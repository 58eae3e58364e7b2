//! Small statistical helpers used by evaluation and by the test suites.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Sample mean and standard error of the mean. A single observation has
/// standard error 0.
pub fn mean_std_err(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::invalid("mean of an empty sample"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Two-sided band for the mean of `n` squared zero-mean Gaussian draws with
/// true variance `variance`: `n * s2 / variance` is chi-square with `n`
/// degrees of freedom.
pub fn chi_square_variance_band(n: usize, variance: f64, confidence: f64) -> Result<(f64, f64)> {
    let dist = ChiSquared::new(n as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let tail = (1.0 - confidence) / 2.0;
    let lo = dist.inverse_cdf(tail) / n as f64;
    let hi = dist.inverse_cdf(1.0 - tail) / n as f64;
    Ok((variance * lo, variance * hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for the alternative "first sample is larger".
    pub p_greater: f64,
    pub p_two_sided: f64,
}

fn t_result(t: f64, df: f64) -> Result<TTest> {
    if t.is_nan() {
        // both samples constant and equal
        return Ok(TTest {
            t: 0.0,
            df,
            p_greater: 0.5,
            p_two_sided: 1.0,
        });
    }
    if t.is_infinite() {
        let p_greater = if t > 0.0 { 0.0 } else { 1.0 };
        return Ok(TTest {
            t,
            df,
            p_greater,
            p_two_sided: 0.0,
        });
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(TTest {
        t,
        df,
        p_greater: 1.0 - dist.cdf(t),
        p_two_sided: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(format!(
            "paired test needs two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = mean_std_err(&diffs)?;
    t_result(mean / se, (diffs.len() - 1) as f64)
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("Welch test needs at least two observations per sample"));
    }
    let (ma, sa) = mean_std_err(a)?;
    let (mb, sb) = mean_std_err(b)?;
    let (va, vb) = (sa * sa, sb * sb);
    let se = (va + vb).sqrt();
    let df = (va + vb).powi(2)
        / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let df = if df.is_finite() { df } else { (a.len() + b.len() - 2) as f64 };
    t_result((ma - mb) / se, df)
}

/// Pearson chi-square goodness-of-fit p-value of `observed` counts against
/// category probabilities `expected`. Categories with zero expected mass must
/// have zero observations and are dropped.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::invalid("observed and expected lengths differ"));
    }
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut categories = 0usize;
    for (&o, &p) in observed.iter().zip(expected) {
        if p <= 0.0 {
            if o > 0 {
                return Ok(0.0);
            }
            continue;
        }
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
        categories += 1;
    }
    if categories < 2 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new((categories - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_std_err(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        // sample sd = sqrt(5/3)
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_std_err(&[7.0]).unwrap(), (7.0, 0.0));
        assert!(mean_std_err(&[]).is_err());
    }

    #[test]
    fn variance_band_brackets_truth() {
        let (lo, hi) = chi_square_variance_band(100_000, 0.01, 0.997).unwrap();
        assert!(lo < 0.01 && hi > 0.01);
        // about 3 standard deviations of sqrt(2/n)
        let half = 3.0 * (2.0f64 / 100_000.0).sqrt() * 0.01;
        assert!(((hi - lo) / 2.0 - half).abs() < 0.05 * half);
    }

    #[test]
    fn paired_test_on_known_values() {
        // differences 1, 2, 3: mean 2, se 1/sqrt(3), t = 2 sqrt(3), df 2
        let t = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // closed form for df = 2: P(T > t) = (1 - t / sqrt(t^2 + 2)) / 2
        let expect = 0.5 * (1.0 - t.t / (t.t * t.t + 2.0).sqrt());
        assert!((t.p_greater - expect).abs() < 1e-10);
        assert!((t.p_two_sided - 2.0 * expect).abs() < 1e-10);
    }

    #[test]
    fn welch_identical_samples() {
        let t = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.t, 0.0);
        assert!((t.p_two_sided - 1.0).abs() < 1e-12);
        let c = welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(c.p_two_sided, 1.0);
    }

    #[test]
    fn gof_perfect_fit_and_misfit() {
        assert!((chi_square_gof(&[250, 250, 500], &[0.25, 0.25, 0.5]).unwrap() - 1.0).abs() < 1e-12);
        assert!(chi_square_gof(&[900, 100], &[0.5, 0.5]).unwrap() < 1e-10);
        assert_eq!(chi_square_gof(&[1, 9], &[0.0, 1.0]).unwrap(), 0.0);
    }
}
