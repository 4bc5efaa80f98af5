//! Biased empirical HSIC and the split-half permutation distribution.
//!
//! `HSIC(X, Y) = Tr(K H L H) / (n-1)²`. Since `H` is idempotent this equals
//! `Σ_ij (HKH)_ij L_ij / (n-1)²`, so only one kernel is ever centered.
//! Re-pairing the rows of `Y` by a permutation `π` only re-indexes `L`, which
//! lets the permutation loop reuse both kernel matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivationMatrix, HsicDistribution, KernelSpec};
use crate::error::{Result, SdeError};
use crate::kernel::{rbf_from_rows, resolve_pair, KernelMatrix};
use crate::rng::{permutation, stream_rng, tag};
use crate::scalar::Scalar;

/// Default number of permutations.
pub const DEFAULT_PERMUTATIONS: usize = 200;

/// Centered `K` and raw `L`, ready for repeated permuted evaluation.
#[derive(Debug, Clone)]
pub struct PairedKernels {
    k_centered: KernelMatrix,
    l: KernelMatrix,
    norm: f64,
}

impl PairedKernels {
    pub fn new(k: &KernelMatrix, l: KernelMatrix) -> Result<Self> {
        let n = k.n();
        if l.n() != n {
            return Err(SdeError::DimensionMismatch(format!("kernel sizes {n} and {}", l.n())));
        }
        if n < 2 {
            return Err(SdeError::TooFewRows { needed: 2, got: n });
        }
        let nm1 = (n - 1) as f64;
        Ok(Self { k_centered: k.centered(), l, norm: 1.0 / (nm1 * nm1) })
    }

    pub fn n(&self) -> usize {
        self.l.n()
    }

    /// HSIC under the identity pairing.
    pub fn value(&self) -> f64 {
        let s: f64 = self
            .k_centered
            .entries()
            .iter()
            .zip(self.l.entries())
            .map(|(a, b)| a * b)
            .sum();
        (s * self.norm).max(0.0)
    }

    /// HSIC after re-pairing row `i` of `X` with row `perm[i]` of `Y`.
    pub fn permuted_value(&self, perm: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &pi) in perm.iter().enumerate() {
            let krow = self.k_centered.row(i);
            let lrow = self.l.row(pi);
            let mut acc = [0.0f64; 4];
            let kc = krow.chunks_exact(4);
            let pc = perm.chunks_exact(4);
            let (kr, pr) = (kc.remainder(), pc.remainder());
            for (k4, p4) in kc.zip(pc) {
                acc[0] += k4[0] * lrow[p4[0]];
                acc[1] += k4[1] * lrow[p4[1]];
                acc[2] += k4[2] * lrow[p4[2]];
                acc[3] += k4[3] * lrow[p4[3]];
            }
            let mut tail = 0.0;
            for (k, &p) in kr.iter().zip(pr) {
                tail += k * lrow[p];
            }
            total += (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
        }
        (total * self.norm).max(0.0)
    }
}

/// HSIC from two precomputed kernel matrices.
pub fn hsic_from_kernels(k: &KernelMatrix, l: &KernelMatrix) -> Result<f64> {
    Ok(PairedKernels::new(k, l.clone())?.value())
}

fn check_pair<T: Scalar>(x: &ActivationMatrix<T>, y: &ActivationMatrix<T>) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(SdeError::DimensionMismatch(format!(
            "HSIC needs equal sample sizes, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    Ok(())
}

fn paired_kernels<T: Scalar>(
    x: &ActivationMatrix<T>,
    y: &ActivationMatrix<T>,
    kernel: &KernelSpec,
) -> Result<(PairedKernels, f64, f64)> {
    check_pair(x, y)?;
    let (sx, sy) = resolve_pair(kernel, x, y)?;
    let k = rbf_from_rows(&x.to_f64_vec(), x.rows(), x.dim(), sx);
    let l = rbf_from_rows(&y.to_f64_vec(), y.rows(), y.dim(), sy);
    Ok((PairedKernels::new(&k, l)?, sx, sy))
}

/// Biased empirical HSIC between paired samples, clamped to be nonnegative.
pub fn hsic<T: Scalar>(x: &ActivationMatrix<T>, y: &ActivationMatrix<T>, kernel: &KernelSpec) -> Result<f64> {
    Ok(paired_kernels(x, y, kernel)?.0.value())
}

/// Random halves `S₁`, `S₂` of one subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub subset_size: usize,
    pub first_half: Vec<usize>,
    pub second_half: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn half_size(&self) -> usize {
        self.first_half.len()
    }
}

/// Shuffles the rows with the seeded generator, drops the last row when the
/// count is odd, and cuts the rest into two consecutive halves.
pub fn make_split<T: Scalar>(s: &ActivationMatrix<T>, seed: u64) -> Result<SplitPlan> {
    let n = s.rows();
    if n < 4 {
        return Err(SdeError::TooFewRows { needed: 4, got: n });
    }
    let mut order = permutation(n, &mut stream_rng(seed, tag::SPLIT));
    let k = n / 2;
    order.truncate(2 * k);
    let second_half = order.split_off(k);
    Ok(SplitPlan { subset_size: 2 * k, first_half: order, second_half, seed })
}

/// Split-half dependence distribution with an explicit split.
///
/// Permutation `t` draws from stream `(perm_seed, t)`; values land in slot
/// `t` whatever the worker count.
pub fn estimate_hsic_distribution_with_split<T: Scalar>(
    s: &ActivationMatrix<T>,
    plan: &SplitPlan,
    kernel: &KernelSpec,
    permutations: usize,
    perm_seed: u64,
) -> Result<HsicDistribution> {
    if permutations == 0 {
        return Err(SdeError::InvalidParameter("permutation count must be at least 1".into()));
    }
    if plan.first_half.len() != plan.second_half.len() {
        return Err(SdeError::DimensionMismatch("split halves differ in size".into()));
    }
    let s1 = s.select_rows(&plan.first_half)?;
    let s2 = s.select_rows(&plan.second_half)?;
    let (paired, sigma, _) = paired_kernels(&s1, &s2, kernel)?;
    let k = paired.n();
    let values: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|t| {
            let perm = permutation(k, &mut stream_rng(perm_seed, t as u64));
            paired.permuted_value(&perm)
        })
        .collect();
    Ok(HsicDistribution {
        values,
        permutations,
        seed: perm_seed,
        subset_id: String::new(),
        kernel: kernel.resolved(sigma)?,
    })
}

/// One seeded split, then `permutations` re-pairings of the second half.
pub fn estimate_hsic_distribution<T: Scalar>(
    s: &ActivationMatrix<T>,
    kernel: &KernelSpec,
    permutations: usize,
    seed: u64,
) -> Result<HsicDistribution> {
    let plan = make_split(s, seed)?;
    estimate_hsic_distribution_with_split(s, &plan, kernel, permutations, seed)
}

/// Observed HSIC of a paired sample together with its permutation null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    pub null: Vec<f64>,
    pub p_value: f64,
}

impl PermutationTest {
    /// Nearest-rank empirical quantile of the null values.
    pub fn null_quantile(&self, q: f64) -> f64 {
        let mut sorted = self.null.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }
}

/// Classical HSIC independence test: compares the identity pairing of
/// `(x, y)` against `permutations` random re-pairings.
pub fn permutation_test<T: Scalar>(
    x: &ActivationMatrix<T>,
    y: &ActivationMatrix<T>,
    kernel: &KernelSpec,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    if permutations == 0 {
        return Err(SdeError::InvalidParameter("permutation count must be at least 1".into()));
    }
    let (paired, _, _) = paired_kernels(x, y, kernel)?;
    let observed = paired.value();
    let n = paired.n();
    let null: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|t| paired.permuted_value(&permutation(n, &mut stream_rng(seed, t as u64))))
        .collect();
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + permutations) as f64;
    Ok(PermutationTest { observed, null, p_value })
}
