//! Independent reference implementations used as test oracles. Deliberately
//! naive: explicit matrices, direct sums, full enumeration.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use sde_core::ActivationMatrix;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, dim: usize, rng: &mut Xoshiro256PlusPlus) -> ActivationMatrix<f64> {
    let v = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
    ActivationMatrix::from_flat(rows, dim, v, "").unwrap()
}

fn rbf(x: &ActivationMatrix<f64>, sigma: f64) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            k[i][j] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    k
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// `Tr(K H L H) / (n-1)²` with `H` formed explicitly.
pub fn naive_hsic(x: &ActivationMatrix<f64>, y: &ActivationMatrix<f64>, sx: f64, sy: f64) -> f64 {
    let n = x.rows();
    let h: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect()).collect();
    let k = rbf(x, sx);
    let l = rbf(y, sy);
    let m = matmul(&matmul(&matmul(&k, &h), &l), &h);
    let tr: f64 = (0..n).map(|i| m[i][i]).sum();
    tr / ((n - 1) * (n - 1)) as f64
}

/// Brute-force biased MMD² with one shared bandwidth.
pub fn naive_mmd2(x: &ActivationMatrix<f64>, y: &ActivationMatrix<f64>, sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let mean = |p: &ActivationMatrix<f64>, q: &ActivationMatrix<f64>| {
        let mut s = 0.0;
        for i in 0..p.rows() {
            for j in 0..q.rows() {
                s += k(p.row(i), q.row(j));
            }
        }
        s / (p.rows() * q.rows()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}

fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// One-sided Mann–Whitney p-value by enumerating every relabeling of the
/// pooled sample into groups of the original sizes.
pub fn enumerated_u_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total = pooled.len();
    let observed = u_statistic(a, b);
    let (mut hits, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let (ga, gb): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
            pooled.iter().copied().enumerate().partition(|(i, _)| mask & (1 << i) != 0);
        let ga: Vec<f64> = ga.into_iter().map(|(_, v)| v).collect();
        let gb: Vec<f64> = gb.into_iter().map(|(_, v)| v).collect();
        all += 1;
        if u_statistic(&ga, &gb) >= observed {
            hits += 1;
        }
    }
    hits as f64 / all as f64
}
