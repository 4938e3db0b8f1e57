//! One-way ANOVA and Levene tests with F-distribution p-values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {group} has {size} observations, need at least 2")]
    TooFewObservations { group: usize, size: usize },
    #[error("observation {value} in group {group} is not finite")]
    NonFinite { group: usize, value: f64 },
    #[error("all observations are identical; the F statistic is undefined")]
    Degenerate,
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// Location used to centre each group in the Levene test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    Mean,
    #[default]
    Median,
}

impl std::str::FromStr for Center {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Center::Mean),
            "median" => Ok(Center::Median),
            other => Err(format!("unknown centre '{other}', expected mean or median")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    /// Set for Levene tests only.
    pub center: Option<Center>,
}

fn validate<G: AsRef<[f64]>>(groups: &[G]) -> Result<()> {
    if groups.len() < 2 {
        return Err(InferenceError::TooFewGroups(groups.len()));
    }
    for (g, group) in groups.iter().enumerate() {
        let group = group.as_ref();
        if group.len() < 2 {
            return Err(InferenceError::TooFewObservations { group: g, size: group.len() });
        }
        if let Some(&value) = group.iter().find(|v| !v.is_finite()) {
            return Err(InferenceError::NonFinite { group: g, value });
        }
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// `(SSB, SSW, df1, df2)` with two-pass sums of squares.
fn sums_of_squares<G: AsRef<[f64]>>(groups: &[G]) -> (f64, f64, usize, usize) {
    let total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref()).sum::<f64>() / total as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let g = g.as_ref();
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    (ssb, ssw, groups.len() - 1, total - groups.len())
}

/// One-way ANOVA: `F = (SSB / (g - 1)) / (SSW / (N - g))`.
///
/// Groups with no spread of their own but different means give `F = inf`
/// and `p = 0`; all observations equal is an error.
pub fn anova_oneway<G: AsRef<[f64]>>(groups: &[G]) -> Result<TestReport> {
    validate(groups)?;
    let (ssb, ssw, df1, df2) = sums_of_squares(groups);
    if ssw == 0.0 {
        if ssb == 0.0 {
            return Err(InferenceError::Degenerate);
        }
        return Ok(TestReport {
            statistic: f64::INFINITY,
            df1,
            df2,
            p_value: 0.0,
            center: None,
        });
    }
    let f = (ssb / df1 as f64) / (ssw / df2 as f64);
    Ok(TestReport {
        statistic: f,
        df1,
        df2,
        p_value: f_upper_tail(f, df1 as f64, df2 as f64),
        center: None,
    })
}

/// Levene's test: ANOVA on `|x - centre(group)|`. When every absolute
/// deviation is the same the spreads are identical and `W = 0`, `p = 1`.
pub fn levene<G: AsRef<[f64]>>(groups: &[G], center: Center) -> Result<TestReport> {
    validate(groups)?;
    let deviations: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            let c = match center {
                Center::Mean => mean(g),
                Center::Median => median(g),
            };
            g.iter().map(|x| (x - c).abs()).collect()
        })
        .collect();
    let first = deviations[0][0];
    let report = if deviations.iter().flatten().all(|&z| z == first) {
        let total: usize = deviations.iter().map(Vec::len).sum();
        TestReport {
            statistic: 0.0,
            df1: groups.len() - 1,
            df2: total - groups.len(),
            p_value: 1.0,
            center: None,
        }
    } else {
        anova_oneway(&deviations)?
    };
    Ok(TestReport {
        center: Some(center),
        ..report
    })
}

/// `P(F >= f)` for `F ~ F(df1, df2)`, via `I_x(df2 / 2, df1 / 2)` with
/// `x = df2 / (df2 + df1 f)`.
pub fn f_upper_tail(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let denom = df2 + df1 * f;
    let x = df2 / denom;
    let y = df1 * f / denom;
    regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x, y).clamp(0.0, 1.0)
}

/// `I_x(a, b)` with `y = 1 - x` passed separately to keep precision near 1.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let log_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * y.ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        log_front.exp() * beta_continued_fraction(a, b, x, y) / a
    } else {
        1.0 - log_front.exp() * beta_continued_fraction(b, a, y, x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz evaluation.
fn beta_continued_fraction(a: f64, b: f64, x: f64, _y: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_TERMS: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_TERMS {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `ln Gamma(x)` for `x > 0`, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
