//! Two-tailed Student t-tests over per-fold scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-tailed p-value.
    pub p: f64,
    pub df: f64,
    pub paired: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Paired (`t = mean(d)/(sd(d)/√n)`, `df = n−1`) or Welch unequal-variance test.
pub fn t_test(a: &[f64], b: &[f64], paired: bool) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 observations per sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let n = a.len() as f64;
    let (t, df) = if paired {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let v = variance(&d);
        if v == 0.0 {
            return Err(Error::ZeroVariance);
        }
        (mean(&d) / (v / n).sqrt(), n - 1.0)
    } else {
        let (va, vb) = (variance(a) / n, variance(b) / n);
        let se2 = va + vb;
        if se2 == 0.0 {
            return Err(Error::ZeroVariance);
        }
        let df = se2 * se2 / (va * va / (n - 1.0) + vb * vb / (n - 1.0));
        ((mean(a) - mean(b)) / se2.sqrt(), df)
    };
    Ok(TTest {
        t,
        p: two_tailed_p(t, df)?,
        df,
        paired,
    })
}

pub fn is_significant(p: f64, alpha: f64) -> bool {
    p < alpha
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom, via
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn two_tailed_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::InvalidArgument(format!("invalid t = {t}, df = {df}")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

/// `I_x(a, b)` by Lentz's continued fraction, using the symmetry
/// `I_x(a,b) = 1 − I_{1−x}(b,a)` where the fraction converges slowly.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-15 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: [f64; 5] = [0.70, 0.72, 0.71, 0.73, 0.74];
    const B: [f64; 5] = [0.68, 0.69, 0.70, 0.71, 0.70];

    #[test]
    fn paired_golden() {
        let r = t_test(&A, &B, true).unwrap();
        assert!((r.t - 4.706787243316408).abs() < 1e-10, "{}", r.t);
        assert!((r.p - 0.009261696759514484).abs() < 1e-12, "{}", r.p);
        assert_eq!(r.df, 4.0);
    }

    #[test]
    fn welch_golden() {
        let r = t_test(&A, &B, false).unwrap();
        assert!((r.t - 2.752988806446732).abs() < 1e-10);
        assert!((r.df - 7.274559193954645).abs() < 1e-10);
        assert!((r.p - 0.027329281262031335).abs() < 1e-12);
    }

    #[test]
    fn p_value_goldens() {
        for (t, df, p) in [
            (2.0, 4.0, 0.1161165235168155),
            (1.0, 1.0, 0.49999999999999956),
            (3.5, 10.5, 0.005323630140303691),
            (0.3, 30.0, 0.7662461052843528),
        ] {
            let got = two_tailed_p(t, df).unwrap();
            assert!((got - p).abs() < 1e-12, "t={t} df={df}: {got}");
        }
        assert_eq!(two_tailed_p(0.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn error_contracts() {
        assert!(matches!(t_test(&A, &A, true), Err(Error::ZeroVariance)));
        assert!(t_test(&A, &B[..4], true).is_err());
        assert!(t_test(&[0.5], &[0.4], false).is_err());
        assert!(matches!(t_test(&[1.0, 1.0], &[0.0, 0.0], false), Err(Error::ZeroVariance)));
    }

    #[test]
    fn swapping_samples_negates_t() {
        for paired in [true, false] {
            let ab = t_test(&A, &B, paired).unwrap();
            let ba = t_test(&B, &A, paired).unwrap();
            assert_eq!(ab.t, -ba.t);
            assert!((ab.p - ba.p).abs() < 1e-15);
        }
    }

    #[test]
    fn significance_threshold() {
        assert!(is_significant(0.0013, 0.05));
        assert!(!is_significant(0.0891, 0.05));
        assert!(!is_significant(0.05, 0.05));
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362880f64.ln()).abs() < 1e-12);
    }
}
