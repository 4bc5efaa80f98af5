//! Membership decisions against reference sets, the out-of-training rate
//! over forgetting subsets, and the controlled F1 protocol.

use std::collections::HashSet;
use std::time::Instant;

use log::warn;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivationMatrix, EvalReport, HsicDistribution, KernelSpec, SanityCheck, Verdict};
use crate::error::{Result, SdeError};
use crate::hsic::{estimate_hsic_distribution, DEFAULT_PERMUTATIONS};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::scalar::Scalar;
use crate::stats::{jsd_of_samples, mann_whitney_one_sided, DEFAULT_ALPHA, DEFAULT_BINS};

/// Settings shared by every distribution in one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub kernel: KernelSpec,
    pub permutations: usize,
    pub bins: usize,
    pub alpha: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::sqrt_dim(),
            permutations: DEFAULT_PERMUTATIONS,
            bins: DEFAULT_BINS,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Known in-training and out-of-training reference subsets with their
/// cached split-half distributions.
#[derive(Debug, Clone)]
pub struct ReferenceBundle<T> {
    pub s_it: ActivationMatrix<T>,
    pub s_oot: ActivationMatrix<T>,
    pub h_it: HsicDistribution,
    pub h_oot: HsicDistribution,
    pub sanity_p: f64,
    pub config: MatchConfig,
    pub seed: u64,
    pub build_seconds: f64,
}

impl<T: Scalar> ReferenceBundle<T> {
    /// Estimates both reference distributions with `seed`. Targets
    /// evaluated with the same seed see identical splits and permutations.
    pub fn build(
        s_it: ActivationMatrix<T>,
        s_oot: ActivationMatrix<T>,
        config: MatchConfig,
        seed: u64,
    ) -> Result<Self> {
        if s_it.rows() != s_oot.rows() {
            return Err(SdeError::DimensionMismatch(format!(
                "reference sizes differ: {} in-training vs {} out-of-training rows",
                s_it.rows(),
                s_oot.rows()
            )));
        }
        let started = Instant::now();
        let (h_it, h_oot) = rayon::join(
            || estimate_hsic_distribution(&s_it, &config.kernel, config.permutations, seed),
            || estimate_hsic_distribution(&s_oot, &config.kernel, config.permutations, seed),
        );
        let mut h_it = h_it?;
        let mut h_oot = h_oot?;
        h_it.subset_id = "s_it".into();
        h_oot.subset_id = "s_oot".into();
        let sanity_p = mann_whitney_one_sided(&h_it.values, &h_oot.values)?.p_value;
        Ok(Self {
            s_it,
            s_oot,
            h_it,
            h_oot,
            sanity_p,
            config,
            seed,
            build_seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn subset_size(&self) -> usize {
        self.s_it.rows()
    }
}

/// Gate `H(S_IT) > H(S_OOT)`: passes iff the one-sided U-test p is below `alpha`.
pub fn check_reference_sanity<T: Scalar>(bundle: &ReferenceBundle<T>, alpha: f64) -> Result<SanityCheck> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdeError::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let p = mann_whitney_one_sided(&bundle.h_it.values, &bundle.h_oot.values)?.p_value;
    Ok(SanityCheck { p_value: p, alpha, passed: p < alpha })
}

/// Full per-target result including the target's own distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEvaluation {
    pub verdict: Verdict,
    pub distribution: HsicDistribution,
}

/// Compares the target's split-half distribution with both references.
/// Kernel, permutation count and bins come from the bundle so all three
/// distributions are produced identically.
pub fn evaluate_target<T: Scalar>(
    target: &ActivationMatrix<T>,
    bundle: &ReferenceBundle<T>,
    target_id: &str,
    seed: u64,
) -> Result<TargetEvaluation> {
    if target.rows() != bundle.subset_size() {
        return Err(SdeError::DimensionMismatch(format!(
            "target has {} rows, references have {}",
            target.rows(),
            bundle.subset_size()
        )));
    }
    let cfg = &bundle.config;
    let mut dist = estimate_hsic_distribution(target, &cfg.kernel, cfg.permutations, seed)?;
    dist.subset_id = target_id.to_string();
    let d_it = jsd_of_samples(&dist.values, &bundle.h_it.values, cfg.bins)?;
    let d_oot = jsd_of_samples(&dist.values, &bundle.h_oot.values, cfg.bins)?;
    Ok(TargetEvaluation { verdict: Verdict::from_distances(target_id, d_it, d_oot), distribution: dist })
}

/// In-training decision for one target subset.
pub fn is_in_training<T: Scalar>(
    target: &ActivationMatrix<T>,
    bundle: &ReferenceBundle<T>,
    seed: u64,
) -> Result<Verdict> {
    Ok(evaluate_target(target, bundle, "target", seed)?.verdict)
}

fn warn_on_failed_gate<T: Scalar>(bundle: &ReferenceBundle<T>) -> Result<SanityCheck> {
    let sanity = check_reference_sanity(bundle, bundle.config.alpha)?;
    if !sanity.passed {
        warn!(
            "reference sets fail H(S_IT) > H(S_OOT): p = {:.3e} >= alpha = {}",
            sanity.p_value, sanity.alpha
        );
    }
    Ok(sanity)
}

fn target_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, tag::TARGET), index as u64)
}

/// Samples `m` subsets of `n` rows from the forgetting pool (without
/// replacement inside a draw, independently across draws), classifies each,
/// and reports `OTR = oot_count / m`.
pub fn unlearn_eval<T: Scalar>(
    forget_pool: &ActivationMatrix<T>,
    bundle: &ReferenceBundle<T>,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<EvalReport> {
    if m == 0 {
        return Err(SdeError::InvalidParameter("OTR undefined for m = 0".into()));
    }
    if n < 4 {
        return Err(SdeError::InvalidParameter(format!("subset size must be at least 4, got {n}")));
    }
    if n > forget_pool.rows() {
        return Err(SdeError::InvalidParameter(format!(
            "subset size {n} exceeds forgetting pool of {} rows",
            forget_pool.rows()
        )));
    }
    let sanity = warn_on_failed_gate(bundle)?;
    let started = Instant::now();
    let sample_base = derive_seed(seed, tag::SAMPLE);
    let verdicts: Vec<Verdict> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(sample_base, i as u64);
            let rows = index::sample(&mut rng, forget_pool.rows(), n).into_vec();
            let target = forget_pool.select_rows(&rows)?;
            Ok(evaluate_target(&target, bundle, &format!("target-{i}"), target_seed(seed, i))?.verdict)
        })
        .collect::<Result<_>>()?;
    let mut report = EvalReport::from_verdicts(verdicts)?;
    report.sanity = Some(sanity);
    report.wall_times.insert("references".into(), bundle.build_seconds);
    report.wall_times.insert("targets".into(), started.elapsed().as_secs_f64());
    Ok(report)
}

/// Confusion counts and F1 with in-training as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Set when there are no positive labels and no positive predictions.
    pub degenerate: bool,
    pub verdicts: Vec<Verdict>,
}

impl F1Result {
    /// `F1 = 2TP / (2TP + FP + FN)`, defined as 0 (and flagged) when the
    /// denominator vanishes.
    pub fn from_predictions(verdicts: Vec<Verdict>, labels: &[bool]) -> Result<Self> {
        if verdicts.len() != labels.len() {
            return Err(SdeError::DimensionMismatch("one label per verdict required".into()));
        }
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (v, &truth) in verdicts.iter().zip(labels) {
            match (v.in_training, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let denom = 2 * tp + fp + fn_;
        let (f1, degenerate) = if denom == 0 { (0.0, true) } else { ((2 * tp) as f64 / denom as f64, false) };
        Ok(Self { f1, tp, fp, fn_, tn, degenerate, verdicts })
    }
}

fn row_key<T: Scalar>(row: &[T]) -> Vec<u64> {
    row.iter().map(|v| v.widen().to_bits()).collect()
}

/// Runs the membership decision on labeled targets (`true` = in-training).
/// Targets must not share any row with the reference sets.
pub fn f1_protocol<T: Scalar>(
    labeled_targets: &[(ActivationMatrix<T>, bool)],
    bundle: &ReferenceBundle<T>,
    seed: u64,
) -> Result<F1Result> {
    if labeled_targets.is_empty() {
        return Err(SdeError::InvalidParameter("F1 needs at least one labeled target".into()));
    }
    let reference_rows: HashSet<Vec<u64>> = [&bundle.s_it, &bundle.s_oot]
        .iter()
        .flat_map(|m| (0..m.rows()).map(move |i| row_key(m.row(i))))
        .collect();
    for (i, (t, _)) in labeled_targets.iter().enumerate() {
        if (0..t.rows()).any(|r| reference_rows.contains(&row_key(t.row(r)))) {
            return Err(SdeError::InvalidParameter(format!("target {i} shares rows with the reference sets")));
        }
    }
    warn_on_failed_gate(bundle)?;
    let verdicts: Vec<Verdict> = labeled_targets
        .par_iter()
        .enumerate()
        .map(|(i, (t, _))| Ok(evaluate_target(t, bundle, &format!("target-{i}"), target_seed(seed, i))?.verdict))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = labeled_targets.iter().map(|(_, l)| *l).collect();
    F1Result::from_predictions(verdicts, &labels)
}
