//! Gaussian RBF kernel matrices, centering and bandwidth resolution.

use rayon::prelude::*;

use crate::data::{ActivationMatrix, BandwidthRule, KernelSpec};
use crate::error::{Result, SdeError};
use crate::scalar::Scalar;

/// Dense symmetric `n x n` kernel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// `H K H` with `H = I - 11ᵀ/n`, computed from row means without
    /// forming `H`.
    pub fn centered(&self) -> KernelMatrix {
        let n = self.n;
        let nf = n as f64;
        let row_means: Vec<f64> = (0..n).map(|i| self.row(i).iter().sum::<f64>() / nf).collect();
        let grand = row_means.iter().sum::<f64>() / nf;
        let mut entries = vec![0.0; n * n];
        entries.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
            let ri = row_means[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o = self.entries[i * n + j] - ri - row_means[j] + grand;
            }
        });
        KernelMatrix { n, entries }
    }
}

/// Dot product with a fixed four-lane summation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// All pairwise squared distances of the rows of a row-major `n x d` buffer,
/// via `|x|² + |y|² - 2<x,y>` clamped at zero. The diagonal is exactly zero.
pub(crate) fn squared_distances(values: &[f64], n: usize, d: usize) -> Vec<f64> {
    let norms: Vec<f64> = values.chunks_exact(d).map(|r| dot(r, r)).collect();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = &values[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let xj = &values[j * d..(j + 1) * d];
            row[j] = (norms[i] + norms[j] - 2.0 * dot(xi, xj)).max(0.0);
        }
    });
    for i in 0..n {
        for j in 0..i {
            out[i * n + j] = out[j * n + i];
        }
    }
    out
}

/// RBF kernel from a widened row-major buffer.
pub(crate) fn rbf_from_rows(values: &[f64], n: usize, d: usize, sigma: f64) -> KernelMatrix {
    let mut entries = squared_distances(values, n, d);
    let scale = -1.0 / (2.0 * sigma * sigma);
    entries.par_iter_mut().for_each(|e| *e = (*e * scale).exp());
    KernelMatrix { n, entries }
}

/// `K[i][j] = exp(-|x_i - x_j|² / (2σ²))`.
pub fn rbf_kernel_matrix<T: Scalar>(x: &ActivationMatrix<T>, sigma: f64) -> Result<KernelMatrix> {
    check_sigma(sigma)?;
    Ok(rbf_from_rows(&x.to_f64_vec(), x.rows(), x.dim(), sigma))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(SdeError::InvalidParameter(format!("bandwidth must be positive, got {sigma}")))
    }
}

/// Median of all pairwise Euclidean distances (`i < j`) of a widened buffer.
pub(crate) fn median_distance(values: &[f64], n: usize, d: usize) -> Result<f64> {
    if n < 2 {
        return Err(SdeError::TooFewRows { needed: 2, got: n });
    }
    let sq = squared_distances(values, n, d);
    let mut dists: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        dists.extend(sq[i * n + i + 1..(i + 1) * n].iter().map(|v| v.sqrt()));
    }
    let len = dists.len();
    let mid = len / 2;
    let (_, hi, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    let med = if len % 2 == 1 {
        hi
    } else {
        let lo = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(SdeError::DegenerateBandwidth)
    }
}

/// Resolves a bandwidth rule against a sample. For the median rule the rows
/// of `x` and `y` are pooled so both kernels share one σ.
pub fn resolve_bandwidth<T: Scalar>(
    rule: BandwidthRule,
    x: &ActivationMatrix<T>,
    y: Option<&ActivationMatrix<T>>,
) -> Result<f64> {
    match rule {
        BandwidthRule::Fixed(s) => {
            check_sigma(s)?;
            Ok(s)
        }
        BandwidthRule::SqrtDim => Ok((x.dim() as f64).sqrt()),
        BandwidthRule::Median => {
            let mut pooled = x.to_f64_vec();
            let mut n = x.rows();
            if let Some(y) = y {
                if y.dim() != x.dim() {
                    return Err(SdeError::DimensionMismatch(format!(
                        "cannot pool rows of dim {} and {}",
                        x.dim(),
                        y.dim()
                    )));
                }
                pooled.extend(y.values().iter().map(|v| v.widen()));
                n += y.rows();
            }
            median_distance(&pooled, n, x.dim())
        }
    }
}

/// Bandwidths for the two kernels of an HSIC evaluation.
///
/// An already-resolved spec is used as is. Otherwise `sqrt-dim` gives each
/// side its own `√d`, and `median` pools both sides when their dimensions
/// agree and falls back to one median per side when they do not.
pub fn resolve_pair<T: Scalar>(
    spec: &KernelSpec,
    x: &ActivationMatrix<T>,
    y: &ActivationMatrix<T>,
) -> Result<(f64, f64)> {
    if let Some(s) = spec.resolved_sigma {
        check_sigma(s)?;
        return Ok((s, s));
    }
    match spec.bandwidth_rule {
        BandwidthRule::Median if x.dim() != y.dim() => Ok((
            resolve_bandwidth(BandwidthRule::Median, x, None)?,
            resolve_bandwidth(BandwidthRule::Median, y, None)?,
        )),
        BandwidthRule::Median => {
            let s = resolve_bandwidth(BandwidthRule::Median, x, Some(y))?;
            Ok((s, s))
        }
        rule => Ok((resolve_bandwidth(rule, x, None)?, resolve_bandwidth(rule, y, None)?)),
    }
}
