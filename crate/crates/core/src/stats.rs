//! One-sided Mann–Whitney U-test and Jensen–Shannon divergence between
//! empirical distributions.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Result, SdeError};

/// Largest combined sample size evaluated by exact enumeration.
pub const EXACT_CUTOFF: usize = 16;

/// Default histogram resolution for JSD.
pub const DEFAULT_BINS: usize = 32;

/// Additive smoothing applied to every histogram bin.
pub const SMOOTHING: f64 = 1e-10;

/// Significance level of the reference-set gate.
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: UMethod,
}

/// Average ranks (1-based) of `values`, plus the sizes of tie groups.
pub(crate) fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Number of label arrangements giving each value of `U` for sample sizes
/// `(m, n)`, via `f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u)`.
fn u_null_counts(m: usize, n: usize) -> Vec<u64> {
    // table[i][j] holds the count vector for sizes (i, j)
    let mut table: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut counts = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                counts[0] = 1;
            } else {
                for (u, c) in table[i - 1][j].iter().enumerate() {
                    counts[u + j] += c;
                }
                for (u, c) in table[i][j - 1].iter().enumerate() {
                    counts[u] += c;
                }
            }
            table[i][j] = counts;
        }
    }
    std::mem::take(&mut table[m][n])
}

fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SdeError::InvalidParameter(format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// One-sided test of the alternative "values in `a` tend to exceed values in `b`".
///
/// `U_A = #{a > b} + ½·#{a = b}`, and `p = P(U ≥ U_A)` under the null.
/// Small tie-free samples are evaluated exactly; everything else uses the
/// normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_one_sided(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    mann_whitney_with(a, b, None)
}

/// As [`mann_whitney_one_sided`] with the evaluation method forced.
/// `Exact` rejects tied samples.
pub fn mann_whitney_with_method(a: &[f64], b: &[f64], method: UMethod) -> Result<UTestResult> {
    mann_whitney_with(a, b, Some(method))
}

fn mann_whitney_with(a: &[f64], b: &[f64], method: Option<UMethod>) -> Result<UTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(SdeError::InvalidParameter("U-test needs non-empty samples".into()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (m, n) = (a.len(), b.len());
    let total = m + n;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = average_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..m].iter().sum();
    let u = rank_sum_a - (m * (m + 1)) as f64 / 2.0;
    let mnf = (m * n) as f64;

    if ties.len() == 1 && ties[0] == total {
        return Err(SdeError::DegenerateUTest);
    }

    let method = method.unwrap_or(if total <= EXACT_CUTOFF && ties.is_empty() {
        UMethod::Exact
    } else {
        UMethod::NormalApprox
    });

    if method == UMethod::Exact {
        if !ties.is_empty() {
            return Err(SdeError::InvalidParameter("exact U-test requires tie-free samples".into()));
        }
        let counts = u_null_counts(m, n);
        let ui = u.round() as usize;
        let tail: u64 = counts[ui..].iter().sum();
        let all: u64 = counts.iter().sum();
        return Ok(UTestResult { u_statistic: u, p_value: tail as f64 / all as f64, method });
    }

    let nf = total as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = mnf / 12.0 * ((nf + 1.0) - tie_term);
    if var.is_nan() || var <= 0.0 {
        return Err(SdeError::DegenerateUTest);
    }
    let z = (u - mnf / 2.0 - 0.5) / var.sqrt();
    let p = (0.5 * erfc(z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
    Ok(UTestResult { u_statistic: u, p_value: p, method })
}

/// Normalized, smoothed histogram over explicit bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Bins two samples on common edges spanning `[min(a ∪ b), max(a ∪ b)]`.
pub fn build_shared_histogram(a: &[f64], b: &[f64], bins: usize) -> Result<(Histogram, Histogram)> {
    if a.is_empty() || b.is_empty() {
        return Err(SdeError::InvalidParameter("histogram needs non-empty samples".into()));
    }
    if bins < 2 {
        return Err(SdeError::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (mut lo, mut hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        let w = 1e-12 * lo.abs().max(1.0);
        lo -= w;
        hi += w;
    }
    let width = hi - lo;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * (i as f64 / bins as f64)).collect();
    edges.push(hi);

    let bin_masses = |xs: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &x in xs {
            let pos = ((x - lo) / width * bins as f64).floor();
            let idx = if pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
            counts[idx] += 1;
        }
        let total = xs.len() as f64;
        let denom = 1.0 + bins as f64 * SMOOTHING;
        counts.iter().map(|&c| (c as f64 / total + SMOOTHING) / denom).collect::<Vec<f64>>()
    };

    Ok((
        Histogram { bin_edges: edges.clone(), masses: bin_masses(a) },
        Histogram { bin_edges: edges, masses: bin_masses(b) },
    ))
}

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (0.5 * (pi + qi))).log2())
        .sum()
}

/// Jensen–Shannon divergence in bits, so the result lies in `[0, 1]`.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.bin_edges != q.bin_edges || p.masses.len() != q.masses.len() {
        return Err(SdeError::DimensionMismatch("histograms have mismatched edges".into()));
    }
    let kp = kl_to_mixture(&p.masses, &q.masses);
    let kq = kl_to_mixture(&q.masses, &p.masses);
    Ok((0.5 * (kp + kq)).clamp(0.0, 1.0))
}

/// JSD between two raw samples through a shared histogram.
pub fn jsd_of_samples(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    let (p, q) = build_shared_histogram(a, b, bins)?;
    jsd(&p, &q)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (average ranks for ties). NaN when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SdeError::InvalidParameter("spearman needs two equal-length series of length >= 2".into()));
    }
    Ok(pearson(&average_ranks(x).0, &average_ranks(y).0))
}
