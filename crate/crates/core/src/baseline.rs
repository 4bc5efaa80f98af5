//! Distribution-distance baselines: biased MMD² and sliced Wasserstein-1,
//! each paired with a nearest-reference classifier.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivationMatrix, KernelSpec, Verdict};
use crate::error::{Result, SdeError};
use crate::kernel::{dot, resolve_bandwidth};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::scalar::Scalar;
use crate::verdict::ReferenceBundle;

pub const DEFAULT_PROJECTIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMetric {
    MmdRbf,
    SlicedWasserstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub metric: BaselineMetric,
    /// Used by MMD only.
    pub kernel: KernelSpec,
    /// Used by sliced Wasserstein only.
    pub projections: usize,
    pub seed: u64,
}

impl BaselineSpec {
    pub fn mmd(kernel: KernelSpec) -> Self {
        Self { metric: BaselineMetric::MmdRbf, kernel, projections: DEFAULT_PROJECTIONS, seed: 0 }
    }

    pub fn sliced_wasserstein(projections: usize, seed: u64) -> Self {
        Self { metric: BaselineMetric::SlicedWasserstein, kernel: KernelSpec::sqrt_dim(), projections, seed }
    }
}

fn same_dim<T: Scalar>(x: &ActivationMatrix<T>, y: &ActivationMatrix<T>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(SdeError::DimensionMismatch(format!("dims {} and {}", x.dim(), y.dim())));
    }
    Ok(())
}

/// Mean of `exp(-|a_i - b_j|² / 2σ²)` over all pairs.
fn mean_cross_kernel(a: &[f64], na: usize, b: &[f64], nb: usize, d: usize, sigma: f64) -> f64 {
    let scale = -1.0 / (2.0 * sigma * sigma);
    let nb_norms: Vec<f64> = b.chunks_exact(d).map(|r| dot(r, r)).collect();
    let row_sums: Vec<f64> = (0..na)
        .into_par_iter()
        .map(|i| {
            let ai = &a[i * d..(i + 1) * d];
            let na_i = dot(ai, ai);
            (0..nb)
                .map(|j| {
                    let bj = &b[j * d..(j + 1) * d];
                    ((na_i + nb_norms[j] - 2.0 * dot(ai, bj)).max(0.0) * scale).exp()
                })
                .sum::<f64>()
        })
        .collect();
    row_sums.iter().sum::<f64>() / (na * nb) as f64
}

/// Biased V-statistic `MMD² = mean K_XX + mean K_YY - 2 mean K_XY`, clamped at 0.
pub fn mmd2<T: Scalar>(x: &ActivationMatrix<T>, y: &ActivationMatrix<T>, kernel: &KernelSpec) -> Result<f64> {
    same_dim(x, y)?;
    let sigma = match kernel.resolved_sigma {
        Some(s) => s,
        None => resolve_bandwidth(kernel.bandwidth_rule, x, Some(y))?,
    };
    let (xv, yv, d) = (x.to_f64_vec(), y.to_f64_vec(), x.dim());
    let kxx = mean_cross_kernel(&xv, x.rows(), &xv, x.rows(), d, sigma);
    let kyy = mean_cross_kernel(&yv, y.rows(), &yv, y.rows(), d, sigma);
    let kxy = mean_cross_kernel(&xv, x.rows(), &yv, y.rows(), d, sigma);
    Ok((kxx + kyy - 2.0 * kxy).max(0.0))
}

fn projection_w1(x: &[f64], y: &[f64], n: usize, d: usize, dir: &[f64]) -> f64 {
    let project = |v: &[f64]| {
        let mut p: Vec<f64> = v.chunks_exact(d).map(|r| dot(r, dir)).collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let (px, py) = (project(x), project(y));
    px.iter().zip(&py).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64
}

/// Average over `projections` seeded unit directions of the 1-D
/// Wasserstein-1 distance between projected samples of equal size.
pub fn sliced_wasserstein<T: Scalar>(
    x: &ActivationMatrix<T>,
    y: &ActivationMatrix<T>,
    projections: usize,
    seed: u64,
) -> Result<f64> {
    same_dim(x, y)?;
    if x.rows() != y.rows() {
        return Err(SdeError::DimensionMismatch(format!(
            "sliced Wasserstein needs equal sample sizes, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    if projections == 0 {
        return Err(SdeError::InvalidParameter("need at least one projection".into()));
    }
    let (xv, yv, d, n) = (x.to_f64_vec(), y.to_f64_vec(), x.dim(), x.rows());
    let base = derive_seed(seed, tag::DIRECTION);
    let per_direction: Vec<f64> = (0..projections)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream_rng(base, l as u64);
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dot(&dir, &dir).sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
            projection_w1(&xv, &yv, n, d, &dir)
        })
        .collect();
    Ok(per_direction.iter().sum::<f64>() / projections as f64)
}

pub fn baseline_distance<T: Scalar>(
    x: &ActivationMatrix<T>,
    y: &ActivationMatrix<T>,
    spec: &BaselineSpec,
) -> Result<f64> {
    match spec.metric {
        BaselineMetric::MmdRbf => mmd2(x, y, &spec.kernel),
        BaselineMetric::SlicedWasserstein => sliced_wasserstein(x, y, spec.projections, spec.seed),
    }
}

/// In-training iff the target is at least as close to `S_IT` as to `S_OOT`.
pub fn classify_by_distance<T: Scalar>(
    target: &ActivationMatrix<T>,
    bundle: &ReferenceBundle<T>,
    spec: &BaselineSpec,
) -> Result<Verdict> {
    let d_it = baseline_distance(target, &bundle.s_it, spec)?;
    let d_oot = baseline_distance(target, &bundle.s_oot, spec)?;
    Ok(Verdict::from_distances("target", d_it, d_oot))
}
