//! Rank-based statistics: Spearman correlation and the Wilcoxon rank-sum
//! test, both with midrank handling of ties. The rank-sum test switches to
//! exact enumeration of group assignments for small samples and otherwise
//! uses the tie-corrected normal approximation with continuity correction.
//! A Kolmogorov-Smirnov distance rounds out the toolkit for comparing
//! sampler output against reference distributions.

use crate::error::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Kolmogorov-Smirnov distance between a sample and a reference CDF: the
/// largest gap between the empirical distribution function and `cdf`,
/// evaluated at the sample points. Sorts the sample in place.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InsufficientData("Kolmogorov-Smirnov distance needs a nonempty sample".into()));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("Kolmogorov-Smirnov distance requires finite sample values".into()));
    }
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sample.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    Ok(d)
}

/// Total sample size at or below which the rank-sum null distribution is
/// enumerated exactly.
pub const EXACT_ENUMERATION_LIMIT: usize = 12;

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the value; average of ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Correlation estimate with a two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
}

/// Spearman rank correlation: Pearson correlation of midranks, which reduces
/// to the classical `1 - 6 sum d^2 / (n(n^2-1))` formula when there are no
/// ties. The p-value uses the large-sample t approximation with `n - 2`
/// degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InsufficientData(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("Spearman correlation needs at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("correlation inputs must be finite".into()));
    }

    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        let dx = a - mean;
        let dy = b - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an input vector is constant".into()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);

    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = n - 2.0;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
        2.0 * dist.cdf(-t.abs())
    };
    Ok(Correlation { rho, p_value })
}

/// Rank-sum test result; `statistic` is the rank sum of the first group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSumTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided Wilcoxon rank-sum test of whether `a` and `b` are drawn from
/// the same distribution.
///
/// For total sample sizes up to [`EXACT_ENUMERATION_LIMIT`] the p-value is
/// exact, computed by enumerating every assignment of the pooled midranks to
/// the first group. Larger samples use the normal approximation with tie
/// correction and continuity correction.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSumTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("rank-sum test needs both groups nonempty".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("rank-sum inputs must be finite".into()));
    }

    let n1 = a.len();
    let n2 = b.len();
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let statistic: f64 = ranks[..n1].iter().sum();

    let p_value = if n <= EXACT_ENUMERATION_LIMIT {
        exact_two_sided_p(&ranks, n1, statistic)
    } else {
        // Midranks are half-integers, so tie counts follow from rank values.
        let expected = n1 as f64 * (n as f64 + 1.0) / 2.0;
        let tie_term: f64 = tie_counts(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
        let nf = n as f64;
        let variance = (n1 as f64 * n2 as f64 / 12.0) * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        if variance <= 0.0 {
            1.0
        } else {
            let diff = statistic - expected;
            let corrected = (diff.abs() - 0.5).max(0.0);
            let z = corrected / variance.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (2.0 * normal.cdf(-z)).min(1.0)
        }
    };

    Ok(RankSumTest { statistic, p_value })
}

fn tie_counts(values: &[f64]) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut counts = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        counts.push(j - i + 1);
        i = j + 1;
    }
    counts
}

/// Exact two-sided p-value conditional on the observed pooled ranks:
/// `min(1, 2 min(P(W <= w), P(W >= w)))` over all equally likely choices of
/// which ranks belong to the first group. Midranks are half-integers, so all
/// comparisons are exact in floating point.
fn exact_two_sided_p(ranks: &[f64], n1: usize, observed: f64) -> f64 {
    let n = ranks.len();
    let mut le = 0u64;
    let mut ge = 0u64;
    let mut total = 0u64;
    let mut idx: Vec<usize> = (0..n1).collect();
    loop {
        let w: f64 = idx.iter().map(|&i| ranks[i]).sum();
        total += 1;
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
        // Advance the combination odometer.
        let mut pos = n1;
        while pos > 0 {
            pos -= 1;
            if idx[pos] < n - (n1 - pos) {
                idx[pos] += 1;
                for k in pos + 1..n1 {
                    idx[k] = idx[k - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                let tail = le.min(ge) as f64 / total as f64;
                return (2.0 * tail).min(1.0);
            }
        }
    }
}
