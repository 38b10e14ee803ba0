//! Statistical kernel: Pearson similarity, one-sample t-test, one- and
//! two-way ANOVA, and the regularized incomplete beta function behind the
//! t and F distributions.

use crate::error::{Error, Result};
use crate::lrp::RelevanceMap;
use crate::scalar::Scalar;

/// Result of one hypothesis test.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TestResult {
    pub effect: String,
    pub statistic: f64,
    pub df: Vec<f64>,
    pub p_value: f64,
    /// Zero-variance (or otherwise undefined) inputs yield a degenerate
    /// result with p = 1 rather than NaN.
    pub degenerate: bool,
}

/// Sample Pearson correlation, clamped to `[-1, 1]` against rounding.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 && syy == 0.0 {
        return Err(Error::Numeric(
            "correlation undefined: both vectors constant".into(),
        ));
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric matrix of mean Pearson coefficients between models' maps,
/// averaged over images.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub model_ids: Vec<String>,
    /// Row-major `m x m` values.
    pub values: Vec<f64>,
}

/// `maps[model][image]`; all models must cover the same image set, and the
/// maps must already be normalized.
pub fn similarity_matrix(model_ids: &[String], maps: &[Vec<RelevanceMap>]) -> Result<SimilarityMatrix> {
    let m = maps.len();
    if m == 0 || model_ids.len() != m {
        return Err(Error::InvalidInput("similarity_matrix: empty or mislabeled map set".into()));
    }
    let n_images = maps[0].len();
    if maps.iter().any(|set| set.len() != n_images) || n_images == 0 {
        return Err(Error::InvalidInput(
            "similarity_matrix: models cover different image sets".into(),
        ));
    }
    let mut values = vec![0.0f64; m * m];
    for i in 0..m {
        values[i * m + i] = 1.0;
        for j in (i + 1)..m {
            let mut acc = 0.0f64;
            for (map_i, map_j) in maps[i].iter().zip(&maps[j]) {
                let a: Vec<f64> = map_i.values.data().iter().map(|&v| v as f64).collect();
                let b: Vec<f64> = map_j.values.data().iter().map(|&v| v as f64).collect();
                // Identical vectors correlate at 1 even when constant.
                acc += if a == b { 1.0 } else { pearson(&a, &b)? };
            }
            let mean = acc / n_images as f64;
            values[i * m + j] = mean;
            values[j * m + i] = mean;
        }
    }
    Ok(SimilarityMatrix {
        model_ids: model_ids.to_vec(),
        values,
    })
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction,
/// using the symmetry `I_x(a,b) = 1 - I_{1-x}(b,a)` for fast convergence.
pub fn regularized_incomplete_beta<S: Scalar>(a: S, b: S, x: S) -> Result<S> {
    let (af, bf, xf) = (a.to_f64(), b.to_f64(), x.to_f64());
    if af <= 0.0 || bf <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "incomplete beta requires a, b > 0, got ({af}, {bf})"
        )));
    }
    if !(0.0..=1.0).contains(&xf) {
        return Err(Error::InvalidInput(format!("x = {xf} outside [0, 1]")));
    }
    if xf == 0.0 {
        return Ok(S::zero());
    }
    if xf == 1.0 {
        return Ok(S::one());
    }
    let front = (ln_gamma(af + bf) - ln_gamma(af) - ln_gamma(bf)
        + af * xf.ln()
        + bf * (1.0 - xf).ln())
    .exp();
    let value = if xf < (af + 1.0) / (af + bf + 2.0) {
        front * beta_continued_fraction(af, bf, xf)? / af
    } else {
        1.0 - front * beta_continued_fraction(bf, af, 1.0 - xf)? / bf
    };
    Ok(S::from_f64(value.clamp(0.0, 1.0)))
}

/// Lentz's algorithm for the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-30;

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
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        // Even step.
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
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
        // Odd step.
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
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
            return Ok(h);
        }
    }
    Err(Error::Numeric(format!(
        "incomplete beta failed to converge for a={a}, b={b}, x={x}"
    )))
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Upper-tail p-value of an F statistic with `(d1, d2)` degrees of freedom.
pub fn f_upper_p(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f <= 0.0 {
        return Ok(1.0);
    }
    regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

pub fn t_test_one_sample(samples: &[f64], mu0: f64) -> Result<TestResult> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidInput("t-test needs n >= 2".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(Error::Numeric("t-test undefined: zero sample variance".into()));
    }
    let t = (mean - mu0) / (var.sqrt() / nf.sqrt());
    let df = nf - 1.0;
    Ok(TestResult {
        effect: "mean".into(),
        statistic: t,
        df: vec![df],
        p_value: t_two_sided_p(t, df)?,
        degenerate: false,
    })
}

/// Paired t-test, reduced to a one-sample test on the differences.
pub fn t_test_paired(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("paired t-test needs equal lengths".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mut result = t_test_one_sample(&diffs, 0.0)?;
    result.effect = "paired difference".into();
    Ok(result)
}

/// Bonferroni correction over a family of `m` comparisons.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// Balanced two-factor table: `values[ia][ib][rep]`.
#[derive(Debug, Clone)]
pub struct AnovaTable {
    pub levels_a: usize,
    pub levels_b: usize,
    pub replicates: usize,
    /// Flat in (a, b, replicate) row-major order.
    pub values: Vec<f64>,
}

impl AnovaTable {
    pub fn new(levels_a: usize, levels_b: usize, replicates: usize, values: Vec<f64>) -> Result<Self> {
        if levels_a < 2 || levels_b < 2 || replicates < 2 {
            return Err(Error::InvalidInput(
                "two-way ANOVA needs >= 2 levels per factor and >= 2 replicates".into(),
            ));
        }
        if values.len() != levels_a * levels_b * replicates {
            return Err(Error::InvalidInput(format!(
                "unbalanced table: {} values for {}x{}x{}",
                values.len(),
                levels_a,
                levels_b,
                replicates
            )));
        }
        Ok(Self {
            levels_a,
            levels_b,
            replicates,
            values,
        })
    }

    fn cell(&self, ia: usize, ib: usize, r: usize) -> f64 {
        self.values[(ia * self.levels_b + ib) * self.replicates + r]
    }
}

/// Fixed-effects two-factor ANOVA with interaction. Returns results for
/// factor A, factor B, and the A x B interaction, in that order.
pub fn anova_two_way(table: &AnovaTable) -> Result<[TestResult; 3]> {
    let (a, b, r) = (table.levels_a, table.levels_b, table.replicates);
    let n = (a * b * r) as f64;
    let grand = table.values.iter().sum::<f64>() / n;

    let mut mean_a = vec![0.0f64; a];
    let mut mean_b = vec![0.0f64; b];
    let mut mean_cell = vec![0.0f64; a * b];
    for ia in 0..a {
        for ib in 0..b {
            let mut cell_sum = 0.0;
            for rep in 0..r {
                cell_sum += table.cell(ia, ib, rep);
            }
            mean_cell[ia * b + ib] = cell_sum / r as f64;
            mean_a[ia] += cell_sum;
            mean_b[ib] += cell_sum;
        }
    }
    for m in mean_a.iter_mut() {
        *m /= (b * r) as f64;
    }
    for m in mean_b.iter_mut() {
        *m /= (a * r) as f64;
    }

    let ss_a: f64 = mean_a.iter().map(|&m| (m - grand).powi(2)).sum::<f64>() * (b * r) as f64;
    let ss_b: f64 = mean_b.iter().map(|&m| (m - grand).powi(2)).sum::<f64>() * (a * r) as f64;
    let mut ss_ab = 0.0f64;
    for ia in 0..a {
        for ib in 0..b {
            let d = mean_cell[ia * b + ib] - mean_a[ia] - mean_b[ib] + grand;
            ss_ab += d * d;
        }
    }
    ss_ab *= r as f64;
    let mut ss_err = 0.0f64;
    for ia in 0..a {
        for ib in 0..b {
            for rep in 0..r {
                let d = table.cell(ia, ib, rep) - mean_cell[ia * b + ib];
                ss_err += d * d;
            }
        }
    }

    let df_a = (a - 1) as f64;
    let df_b = (b - 1) as f64;
    let df_ab = ((a - 1) * (b - 1)) as f64;
    let df_err = (a * b * (r - 1)) as f64;
    let ms_err = ss_err / df_err;

    let make = |effect: &str, ss: f64, df: f64| -> Result<TestResult> {
        if ms_err == 0.0 {
            return Ok(TestResult {
                effect: effect.into(),
                statistic: f64::NAN,
                df: vec![df, df_err],
                p_value: 1.0,
                degenerate: true,
            });
        }
        let f = (ss / df) / ms_err;
        Ok(TestResult {
            effect: effect.into(),
            statistic: f,
            df: vec![df, df_err],
            p_value: f_upper_p(f, df, df_err)?,
            degenerate: false,
        })
    };
    Ok([
        make("factor_a", ss_a, df_a)?,
        make("factor_b", ss_b, df_b)?,
        make("interaction", ss_ab, df_ab)?,
    ])
}

/// One-way fixed-effects ANOVA over `groups` of samples.
pub fn anova_one_way(groups: &[Vec<f64>]) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InvalidInput(
            "one-way ANOVA needs >= 2 groups with >= 2 samples each".into(),
        ));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0f64;
    let mut ss_within = 0.0f64;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand) * (mean - grand);
        ss_within += g.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>();
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if ss_within == 0.0 {
        return Ok(TestResult {
            effect: "group".into(),
            statistic: f64::NAN,
            df: vec![df1, df2],
            p_value: 1.0,
            degenerate: true,
        });
    }
    let f = (ss_between / df1) / (ss_within / df2);
    Ok(TestResult {
        effect: "group".into(),
        statistic: f,
        df: vec![df1, df2],
        p_value: f_upper_p(f, df1, df2)?,
        degenerate: false,
    })
}
