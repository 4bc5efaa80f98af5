//! Validated domain types shared by the estimators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::scalar::Scalar;

/// Unvalidated matrix payload as it arrives from a parser or caller.
#[derive(Debug, Clone)]
pub struct RawMatrix<T> {
    pub declared_rows: usize,
    pub declared_dim: usize,
    pub rows: Vec<Vec<T>>,
    pub layer_tag: String,
}

/// `n x d` model outputs for one subset at one layer, row-major.
///
/// Invariants: `n >= 2`, `d >= 1`, all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix<T> {
    rows: usize,
    dim: usize,
    values: Vec<T>,
    layer_tag: String,
}

impl<T: Scalar> ActivationMatrix<T> {
    /// Builds a matrix from a flat row-major buffer, checking every invariant.
    pub fn from_flat(rows: usize, dim: usize, values: Vec<T>, layer_tag: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(SdeError::DimensionMismatch("dim must be at least 1".into()));
        }
        if values.len() != rows * dim {
            return Err(SdeError::DimensionMismatch(format!(
                "declared {rows}x{dim} = {} values, found {}",
                rows * dim,
                values.len()
            )));
        }
        if rows < 2 {
            return Err(SdeError::TooFewRows { needed: 2, got: rows });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(SdeError::NonFinite { row: pos / dim, col: pos % dim });
        }
        Ok(Self { rows, dim, values, layer_tag: layer_tag.into() })
    }

    /// Validates an untyped payload. NaN and infinities are rejected, never coerced.
    pub fn validate(raw: RawMatrix<T>) -> Result<Self> {
        let RawMatrix { declared_rows, declared_dim, rows, layer_tag } = raw;
        if rows.len() != declared_rows {
            return Err(SdeError::DimensionMismatch(format!(
                "declared {declared_rows} rows, found {}",
                rows.len()
            )));
        }
        let mut values = Vec::with_capacity(declared_rows * declared_dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != declared_dim {
                return Err(SdeError::DimensionMismatch(format!(
                    "row {i} has {} values, declared dim {declared_dim}",
                    row.len()
                )));
            }
            values.extend(row);
        }
        Self::from_flat(declared_rows, declared_dim, values, layer_tag)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn layer_tag(&self) -> &str {
        &self.layer_tag
    }

    pub fn with_layer_tag(mut self, tag: impl Into<String>) -> Self {
        self.layer_tag = tag.into();
        self
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers the given rows (in order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(SdeError::InvalidParameter(format!(
                    "row index {i} out of bounds for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::from_flat(indices.len(), self.dim, values, self.layer_tag.clone())
    }

    /// Row-major copy widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.widen()).collect()
    }

    /// Converts the storage type. Widening is exact; narrowing rounds.
    pub fn cast<U: Scalar>(&self) -> ActivationMatrix<U> {
        ActivationMatrix {
            rows: self.rows,
            dim: self.dim,
            values: self.values.iter().map(|v| U::narrow(v.widen())).collect(),
            layer_tag: self.layer_tag.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    #[default]
    GaussianRbf,
}

/// How the Gaussian bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `sigma = sqrt(d)`.
    #[default]
    SqrtDim,
    /// Median of pooled pairwise Euclidean distances.
    Median,
    Fixed(f64),
}

impl FromStr for BandwidthRule {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt-dim" => Ok(BandwidthRule::SqrtDim),
            "median" => Ok(BandwidthRule::Median),
            other => other
                .parse::<f64>()
                .map(BandwidthRule::Fixed)
                .map_err(|_| SdeError::InvalidParameter(format!("unknown bandwidth rule {other:?}"))),
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::SqrtDim => f.write_str("sqrt-dim"),
            BandwidthRule::Median => f.write_str("median"),
            BandwidthRule::Fixed(s) => write!(f, "{s}"),
        }
    }
}

/// Kernel family plus bandwidth rule; `resolved_sigma` is filled in once a
/// concrete sample has fixed the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth_rule: BandwidthRule,
    pub resolved_sigma: Option<f64>,
}

impl KernelSpec {
    pub fn new(rule: BandwidthRule) -> Self {
        Self { family: KernelFamily::GaussianRbf, bandwidth_rule: rule, resolved_sigma: None }
    }

    pub fn sqrt_dim() -> Self {
        Self::new(BandwidthRule::SqrtDim)
    }

    pub fn fixed(sigma: f64) -> Self {
        Self::new(BandwidthRule::Fixed(sigma))
    }

    pub fn resolved(self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SdeError::InvalidParameter(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(Self { resolved_sigma: Some(sigma), ..self })
    }
}

/// `T` split-half HSIC values estimating the dependence distribution of one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicDistribution {
    pub values: Vec<f64>,
    pub permutations: usize,
    pub seed: u64,
    pub subset_id: String,
    pub kernel: KernelSpec,
}

impl HsicDistribution {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Per-target decision record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub target_id: String,
    pub d_it: f64,
    pub d_oot: f64,
    pub in_training: bool,
    pub tie: bool,
}

impl Verdict {
    /// Applies the matching rule: in-training iff `d_it <= d_oot`. Exact
    /// ties are resolved as in-training and flagged.
    pub fn from_distances(target_id: impl Into<String>, d_it: f64, d_oot: f64) -> Self {
        Self {
            target_id: target_id.into(),
            d_it,
            d_oot,
            in_training: d_it <= d_oot,
            tie: d_it == d_oot,
        }
    }
}

/// Outcome of the reference-set gate `H(S_IT) > H(S_OOT)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanityCheck {
    pub p_value: f64,
    pub alpha: f64,
    pub passed: bool,
}

/// Aggregate over `m` target subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub m: usize,
    pub oot_count: usize,
    pub otr: f64,
    pub verdicts: Vec<Verdict>,
    pub f1: Option<f64>,
    pub sanity: Option<SanityCheck>,
    pub config_echo: serde_json::Value,
    pub wall_times: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Assembles a report; OTR is `oot_count / m` computed from the verdicts.
    pub fn from_verdicts(verdicts: Vec<Verdict>) -> Result<Self> {
        let m = verdicts.len();
        if m == 0 {
            return Err(SdeError::InvalidParameter("OTR undefined for m = 0".into()));
        }
        let oot_count = verdicts.iter().filter(|v| !v.in_training).count();
        Ok(Self {
            m,
            oot_count,
            otr: oot_count as f64 / m as f64,
            verdicts,
            f1: None,
            sanity: None,
            config_echo: serde_json::Value::Null,
            wall_times: BTreeMap::new(),
        })
    }
}
