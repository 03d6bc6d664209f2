//! Nonparametric tests and descriptive summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Largest n for which the signed-rank null is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooSmall { needed: usize, got: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("bad shape: {0}")]
    Shape(String),
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
    pub n: usize,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Average ranks (1-based) plus the sizes of every tie group.
pub fn average_ranks(xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped before ranking. The statistic is W+, the rank sum of the
/// positive differences.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Shape(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    check_finite(x)?;
    check_finite(y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n < 5 {
        return Err(StatsError::TooSmall { needed: 5, got: n });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX_N {
        // Average ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let w2 = (2.0 * w_plus).round() as i64;
        let dev = (2 * w2 - total as i64).abs();
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= dev)
            .map(|(_, c)| *c)
            .sum();
        let p = extreme as f64 / (1u64 << n) as f64;
        return Ok(TestResult {
            statistic: w_plus,
            p_value: p.min(1.0),
            method: "wilcoxon-exact".into(),
            n,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return Err(StatsError::Degenerate("zero variance of W".into()));
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = 2.0 * standard_normal().sf(z);
    Ok(TestResult {
        statistic: w_plus,
        p_value: p.clamp(0.0, 1.0),
        method: "wilcoxon-normal".into(),
        n,
    })
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Friedman rank test. `rows` are treatments, columns are subjects.
pub fn friedman(rows: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let k = rows.len();
    if k < 3 {
        return Err(StatsError::Shape(format!("need at least 3 treatments, got {k}")));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(StatsError::Shape("treatments differ in subject count".into()));
    }
    if n < 2 {
        return Err(StatsError::Shape(format!("need at least 2 subjects, got {n}")));
    }
    for r in rows {
        check_finite(r)?;
    }
    let statistic = friedman_statistic(rows);
    let p = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new((k - 1) as f64).expect("df positive").sf(statistic)
    };
    Ok(TestResult {
        statistic,
        p_value: p.clamp(0.0, 1.0),
        method: "friedman".into(),
        n,
    })
}

/// Tie-corrected Friedman chi-square; zero when every block is fully tied.
pub fn friedman_statistic(rows: &[Vec<f64>]) -> f64 {
    let k = rows.len();
    let n = rows[0].len();
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    for j in 0..n {
        let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (ranks, ties) = average_ranks(&column);
        for (i, r) in ranks.iter().enumerate() {
            rank_sums[i] += r;
        }
        tie_sum += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (kf, nf) = (k as f64, n as f64);
    let ss: f64 = rank_sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * ss - 3.0 * nf * (kf + 1.0);
    let denom = 1.0 - tie_sum / (nf * kf * (kf * kf - 1.0));
    if denom <= 1e-12 {
        return 0.0;
    }
    (raw / denom).max(0.0)
}

/// Bonferroni adjustment for `m` comparisons.
pub fn bonferroni(pvals: &[f64], m: usize) -> Vec<f64> {
    pvals.iter().map(|p| (p * m as f64).min(1.0)).collect()
}

/// Kolmogorov distribution tail Q(λ) = 2 Σ (-1)^(j-1) exp(-2 j² λ²).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Largest gap between the empirical CDF and a normal fitted to the sample.
fn ks_distance(xs: &[f64]) -> Option<f64> {
    let (mean, sd) = mean_sd(xs);
    if sd.is_nan() || sd <= 0.0 {
        return None;
    }
    let fitted = Normal::new(mean, sd).ok()?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = fitted.cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Some(d)
}

fn ks_prepare(sample: &[f64]) -> Result<f64, StatsError> {
    if sample.len() < 5 {
        return Err(StatsError::TooSmall {
            needed: 5,
            got: sample.len(),
        });
    }
    check_finite(sample)?;
    ks_distance(sample).ok_or_else(|| StatsError::Degenerate("sample standard deviation is zero".into()))
}

/// One-sample KS test against a normal with the sample's own mean and
/// standard deviation, using the asymptotic Kolmogorov distribution.
pub fn ks_normality(sample: &[f64]) -> Result<TestResult, StatsError> {
    let d = ks_prepare(sample)?;
    let rn = (sample.len() as f64).sqrt();
    let lambda = (rn + 0.12 + 0.11 / rn) * d;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
        method: "ks-asymptotic".into(),
        n: sample.len(),
    })
}

/// Same statistic, with p estimated by refitting `reps` simulated normal
/// samples of the same size. This accounts for the fitted parameters.
pub fn ks_normality_mc(sample: &[f64], reps: usize, seed: u64) -> Result<TestResult, StatsError> {
    let d = ks_prepare(sample)?;
    if reps == 0 {
        return Err(StatsError::TooSmall { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; sample.len()];
    let mut at_least = 0usize;
    for _ in 0..reps {
        for v in buf.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        if ks_distance(&buf).is_some_and(|sim| sim >= d) {
            at_least += 1;
        }
    }
    Ok(TestResult {
        statistic: d,
        p_value: (at_least + 1) as f64 / (reps + 1) as f64,
        method: "ks-montecarlo".into(),
        n: sample.len(),
    })
}

/// Median, quartiles (linear interpolation between order statistics) and
/// extrema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
}

/// Value at quantile `p` by interpolation between the order statistics at
/// `floor((n-1)p)` and the next one, found by partial selection.
fn quantile_select(v: &mut [f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let (_, &mut a, right) = v.select_nth_unstable_by(lo, f64::total_cmp);
    let frac = h - lo as f64;
    if frac == 0.0 || right.is_empty() {
        return a;
    }
    let b = right.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

pub fn box_summary(xs: &[f64]) -> Option<BoxSummary> {
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut v = xs.to_vec();
    let q1 = quantile_select(&mut v, 0.25);
    let median = quantile_select(&mut v, 0.5);
    let q3 = quantile_select(&mut v, 0.75);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(BoxSummary {
        n: xs.len(),
        min,
        q1,
        median,
        q3,
        max,
        iqr: q3 - q1,
    })
}
