//! Synthetic activation sets with a tunable shared component.
//!
//! Row `i` is `z_i + s · w_i · u` with `z_i ~ N(0, I_d)`, `w_i ~ N(0, 1)` and
//! one seeded unit direction `u` shared by every row. At `s = 0` rows are
//! i.i.d. noise; larger `s` concentrates variation along `u` and raises the
//! split-half dependence.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ActivationMatrix;
use crate::error::{Result, SdeError};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub strength: f64,
    pub seed: u64,
}

const DIRECTION_STREAM: u64 = 1;
const ROW_STREAM: u64 = 2;

pub fn make_synthetic_set(spec: &SynthSpec) -> Result<ActivationMatrix<f64>> {
    if !(spec.strength >= 0.0 && spec.strength.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("strength must be >= 0, got {}", spec.strength)));
    }
    let mut dir_rng = stream_rng(spec.seed, DIRECTION_STREAM);
    let mut u: Vec<f64> = (0..spec.d).map(|_| dir_rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);

    let mut rng = stream_rng(spec.seed, ROW_STREAM);
    let mut values = Vec::with_capacity(spec.n * spec.d);
    for _ in 0..spec.n {
        let w: f64 = rng.sample(StandardNormal);
        for &uj in &u {
            let z: f64 = rng.sample(StandardNormal);
            values.push(z + spec.strength * w * uj);
        }
    }
    ActivationMatrix::from_flat(spec.n, spec.d, values, format!("synth-s{}", spec.strength))
}
