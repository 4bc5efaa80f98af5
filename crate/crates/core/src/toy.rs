//! Fixed-batch membership experiment.
//!
//! A one-hidden-layer ReLU MLP is trained on two Gaussian blobs with
//! mini-batch membership frozen before the first epoch. After every epoch
//! the split-half dependence of a same-batch subset (whole fixed batches) is
//! compared with that of a cross-batch subset (one row per batch, round
//! robin) using the one-sided U-test.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivationMatrix, KernelSpec};
use crate::error::{Result, SdeError};
use crate::hsic::{estimate_hsic_distribution, DEFAULT_PERMUTATIONS};
use crate::rng::{derive_seed, permutation, stream_rng};
use crate::stats::{mann_whitney_one_sided, spearman};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_points: usize,
    pub d: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Blob means sit at `±separation/√d · 1`.
    pub separation: f64,
    /// Whole batches pooled into the same-batch subset.
    pub same_batches: usize,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_points: 10_000,
            d: 10,
            batch_size: 64,
            hidden: 128,
            epochs: 30,
            learning_rate: 0.05,
            separation: 1.5,
            same_batches: 8,
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn num_batches(&self) -> usize {
        self.n_points / self.batch_size.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SdeError::InvalidParameter(m));
        if self.n_points == 0 || self.d == 0 || self.batch_size == 0 || self.hidden == 0 || self.permutations == 0 {
            return bad("toy counts must all be at least 1".into());
        }
        if self.num_batches() < 2 {
            return bad(format!(
                "{} points with batch size {} give fewer than 2 full batches",
                self.n_points, self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.same_batches == 0 || self.same_batches >= self.num_batches() {
            return bad(format!("same_batches must be in 1..{}", self.num_batches()));
        }
        if self.same_batches * self.batch_size < 4 {
            return bad("same-batch subset needs at least 4 rows".into());
        }
        Ok(())
    }
}

/// Labeled blob data with frozen batch membership. Rows are stored in batch
/// order, so batch `b` is rows `b·batch_size .. (b+1)·batch_size`; rows past
/// the last full batch are never visited.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub d: usize,
    pub batch_size: usize,
    pub num_batches: usize,
}

impl ToyData {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn batch_rows(&self, b: usize) -> std::ops::Range<usize> {
        b * self.batch_size..(b + 1) * self.batch_size
    }
}

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SAME_STREAM: u64 = 3;
const CROSS_STREAM: u64 = 4;

/// Two blobs with means `±separation/√d · 1` and unit covariance,
/// permuted once and cut into consecutive fixed batches.
pub fn generate_toy_data(cfg: &ToyConfig) -> Result<ToyData> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, DATA_STREAM);
    let offset = cfg.separation / (cfg.d as f64).sqrt();
    let half = cfg.n_points / 2;
    let mut x0 = Vec::with_capacity(cfg.n_points * cfg.d);
    let mut l0 = Vec::with_capacity(cfg.n_points);
    for i in 0..cfg.n_points {
        let label = usize::from(i >= half);
        let shift = if label == 1 { offset } else { -offset };
        for _ in 0..cfg.d {
            let z: f64 = rng.sample(StandardNormal);
            x0.push(z + shift);
        }
        l0.push(label);
    }
    let order = permutation(cfg.n_points, &mut rng);
    let mut x = Vec::with_capacity(x0.len());
    let mut labels = Vec::with_capacity(cfg.n_points);
    for &i in &order {
        x.extend_from_slice(&x0[i * cfg.d..(i + 1) * cfg.d]);
        labels.push(l0[i]);
    }
    Ok(ToyData { x, labels, d: cfg.d, batch_size: cfg.batch_size, num_batches: cfg.num_batches() })
}

/// `x ↦ softmax(relu(x W1 + b1) W2 + b2)` with two output classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub d: usize,
    pub hidden: usize,
    /// `d x hidden`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden x 2`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self { d, hidden, w1: vec![0.0; d * hidden], b1: vec![0.0; hidden], w2: vec![0.0; hidden * 2], b2: vec![0.0; 2] }
    }

    /// He-normal first layer, `N(0, 1/hidden)` second layer, zero biases.
    pub fn init(cfg: &ToyConfig) -> Self {
        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let mut m = Self::zeros(cfg.d, cfg.hidden);
        let s1 = (2.0 / cfg.d as f64).sqrt();
        let s2 = (1.0 / cfg.hidden as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = s1 * rng.sample::<f64, _>(StandardNormal));
        m.w2.iter_mut().for_each(|w| *w = s2 * rng.sample::<f64, _>(StandardNormal));
        m
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameter by flat index over `w1, b1, w2, b2`.
    pub fn param(&self, idx: usize) -> f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        if idx < a {
            self.w1[idx]
        } else if idx < a + b {
            self.b1[idx - a]
        } else if idx < a + b + c {
            self.w2[idx - a - b]
        } else {
            self.b2[idx - a - b - c]
        }
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        if idx < a {
            &mut self.w1[idx]
        } else if idx < a + b {
            &mut self.b1[idx - a]
        } else if idx < a + b + c {
            &mut self.w2[idx - a - b]
        } else {
            &mut self.b2[idx - a - b - c]
        }
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// Pre-activation `x W1 + b1`.
    fn pre_activation(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b1);
        for (i, &xi) in x.iter().enumerate() {
            let w = &self.w1[i * self.hidden..(i + 1) * self.hidden];
            for (o, &wij) in out.iter_mut().zip(w) {
                *o += xi * wij;
            }
        }
    }

    pub fn hidden_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.hidden];
        self.pre_activation(x, &mut z);
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        z
    }

    fn logits(&self, h: &[f64]) -> [f64; 2] {
        let mut o = [self.b2[0], self.b2[1]];
        for (j, &hj) in h.iter().enumerate() {
            o[0] += hj * self.w2[2 * j];
            o[1] += hj * self.w2[2 * j + 1];
        }
        o
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        softmax(self.logits(&self.hidden_activation(x)))
    }

    /// Mean cross-entropy over the rows and its gradient (same shape as the model).
    pub fn loss_and_grad(&self, xs: &[f64], labels: &[usize]) -> (f64, ToyModel) {
        let mut g = ToyModel::zeros(self.d, self.hidden);
        let inv = 1.0 / labels.len() as f64;
        let mut loss = 0.0;
        let mut z = vec![0.0; self.hidden];
        let mut gh = vec![0.0; self.hidden];
        for (x, &y) in xs.chunks_exact(self.d).zip(labels) {
            self.pre_activation(x, &mut z);
            let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let p = softmax(self.logits(&h));
            loss -= p[y].max(f64::MIN_POSITIVE).ln() * inv;
            let mut go = p;
            go[y] -= 1.0;
            go[0] *= inv;
            go[1] *= inv;
            g.b2[0] += go[0];
            g.b2[1] += go[1];
            for j in 0..self.hidden {
                g.w2[2 * j] += h[j] * go[0];
                g.w2[2 * j + 1] += h[j] * go[1];
                gh[j] = if z[j] > 0.0 { self.w2[2 * j] * go[0] + self.w2[2 * j + 1] * go[1] } else { 0.0 };
                g.b1[j] += gh[j];
            }
            for (i, &xi) in x.iter().enumerate() {
                let row = &mut g.w1[i * self.hidden..(i + 1) * self.hidden];
                for (w, &ghj) in row.iter_mut().zip(&gh) {
                    *w += xi * ghj;
                }
            }
        }
        (loss, g)
    }

    pub fn loss(&self, xs: &[f64], labels: &[usize]) -> f64 {
        self.loss_and_grad(xs, labels).0
    }

    fn step(&mut self, g: &ToyModel, lr: f64) {
        let upd = |p: &mut [f64], q: &[f64]| p.iter_mut().zip(q).for_each(|(a, b)| *a -= lr * b);
        upd(&mut self.w1, &g.w1);
        upd(&mut self.b1, &g.b1);
        upd(&mut self.w2, &g.w2);
        upd(&mut self.b2, &g.b2);
    }

    pub fn accuracy(&self, data: &ToyData) -> f64 {
        let correct = (0..data.rows())
            .filter(|&i| {
                let p = self.predict_proba(data.row(i));
                usize::from(p[1] > p[0]) == data.labels[i]
            })
            .count();
        correct as f64 / data.rows() as f64
    }

    /// Hidden-layer activations for the given rows.
    pub fn hidden_matrix(&self, data: &ToyData, rows: &[usize]) -> Result<ActivationMatrix<f64>> {
        let mut values = Vec::with_capacity(rows.len() * self.hidden);
        for &r in rows {
            values.extend(self.hidden_activation(data.row(r)));
        }
        ActivationMatrix::from_flat(rows.len(), self.hidden, values, "hidden")
    }
}

fn softmax(o: [f64; 2]) -> [f64; 2] {
    let m = o[0].max(o[1]);
    let e = [(o[0] - m).exp(), (o[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: ToyModel,
    /// `checkpoints[e]` is the model after `e` epochs (`0` = initialization).
    pub checkpoints: Vec<ToyModel>,
    /// Mean training loss over each epoch's batches.
    pub epoch_losses: Vec<f64>,
}

/// Plain mini-batch gradient descent visiting the fixed batches in the same
/// order every epoch. Single-threaded, so bit-deterministic.
pub fn train_fixed_batch(cfg: &ToyConfig, data: &ToyData) -> Result<TrainResult> {
    cfg.validate()?;
    let mut model = ToyModel::init(cfg);
    let mut checkpoints = vec![model.clone()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for b in 0..data.num_batches {
            let r = data.batch_rows(b);
            let (loss, grad) = model.loss_and_grad(&data.x[r.start * data.d..r.end * data.d], &data.labels[r]);
            if !loss.is_finite() {
                return Err(SdeError::Divergence { epoch });
            }
            total += loss;
            model.step(&grad, cfg.learning_rate);
        }
        if !model.is_finite() {
            return Err(SdeError::Divergence { epoch });
        }
        epoch_losses.push(total / data.num_batches as f64);
        checkpoints.push(model.clone());
    }
    Ok(TrainResult { model, checkpoints, epoch_losses })
}

/// Row indices of the same-batch and cross-batch subsets.
///
/// Same-batch: the first `same_batches` fixed batches. Cross-batch: the same
/// number of rows taken round robin over the remaining batches, one row per
/// batch per sweep.
pub fn subset_indices(cfg: &ToyConfig, data: &ToyData) -> (Vec<usize>, Vec<usize>) {
    let same: Vec<usize> = (0..cfg.same_batches).flat_map(|b| data.batch_rows(b)).collect();
    let others = data.num_batches - cfg.same_batches;
    let cross: Vec<usize> = (0..same.len())
        .map(|j| {
            let b = cfg.same_batches + j % others;
            let offset = (j / others) % data.batch_size;
            data.batch_rows(b).start + offset
        })
        .collect();
    (same, cross)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub p_value: f64,
    pub mean_h_same: f64,
    pub mean_h_cross: f64,
}

impl EpochRecord {
    pub fn gap(&self) -> f64 {
        self.mean_h_same - self.mean_h_cross
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub config: ToyConfig,
    pub records: Vec<EpochRecord>,
    pub train_accuracy: f64,
    pub final_p_value: f64,
    /// Spearman correlation of `mean_h_same - mean_h_cross` with epoch.
    pub gap_spearman: f64,
}

impl ToyExperiment {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,p_value,mean_h_same,mean_h_cross\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.epoch, r.p_value, r.mean_h_same, r.mean_h_cross));
        }
        out
    }
}

/// Evaluates one checkpoint. Splits and permutations are seeded identically
/// for every epoch, so the curve tracks the model and not resampling noise.
pub fn evaluate_checkpoint(
    cfg: &ToyConfig,
    data: &ToyData,
    model: &ToyModel,
    epoch: usize,
) -> Result<EpochRecord> {
    let (same, cross) = subset_indices(cfg, data);
    let kernel = KernelSpec::fixed((cfg.hidden as f64).sqrt());
    let h_same = estimate_hsic_distribution(
        &model.hidden_matrix(data, &same)?,
        &kernel,
        cfg.permutations,
        derive_seed(cfg.seed, SAME_STREAM),
    )?;
    let h_cross = estimate_hsic_distribution(
        &model.hidden_matrix(data, &cross)?,
        &kernel,
        cfg.permutations,
        derive_seed(cfg.seed, CROSS_STREAM),
    )?;
    let p = mann_whitney_one_sided(&h_same.values, &h_cross.values)?.p_value;
    Ok(EpochRecord { epoch, p_value: p, mean_h_same: h_same.mean(), mean_h_cross: h_cross.mean() })
}

/// Trains with fixed batches and records the same- vs cross-batch
/// significance curve over all checkpoints.
pub fn run_fixed_batch_experiment(cfg: &ToyConfig) -> Result<ToyExperiment> {
    let data = generate_toy_data(cfg)?;
    let trained = train_fixed_batch(cfg, &data)?;
    let records: Vec<EpochRecord> = trained
        .checkpoints
        .par_iter()
        .enumerate()
        .map(|(e, m)| evaluate_checkpoint(cfg, &data, m, e))
        .collect::<Result<_>>()?;
    let epochs: Vec<f64> = records.iter().map(|r| r.epoch as f64).collect();
    let gaps: Vec<f64> = records.iter().map(EpochRecord::gap).collect();
    let gap_spearman = if records.len() >= 2 { spearman(&epochs, &gaps)? } else { f64::NAN };
    Ok(ToyExperiment {
        config: *cfg,
        train_accuracy: trained.model.accuracy(&data),
        final_p_value: records.last().map(|r| r.p_value).unwrap_or(f64::NAN),
        records,
        gap_spearman,
    })
}
