use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MarginalDataset;
use crate::error::{Error, Result};
use crate::nd::Tensor;
use crate::rng::seeded;

/// The 2D "knot": K noisy marginals along a path with a loop in the middle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnotSpec {
    pub k: usize,
    pub samples: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for KnotSpec {
    fn default() -> Self {
        KnotSpec {
            k: 1200,
            samples: 10,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl KnotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 || !self.k.is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "the number of knot marginals must be a positive multiple of 3, got {}",
                self.k
            )));
        }
        if self.samples == 0 {
            return Err(Error::invalid("knot samples per marginal must be >= 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("knot sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Mean of the knot at stamp `index` of `k`, in data coordinates.
///
/// Stamps sit at `t = 3 i / (k - 1)` on `[0, 3]`, `tt = t - 1.5`, and the
/// three index thirds use the lead-in, loop and lead-out formulas.
pub fn knot_mean(index: usize, k: usize) -> [f64; 2] {
    let t = if k > 1 { 3.0 * index as f64 / (k - 1) as f64 } else { 0.0 };
    let third = k / 3;
    let segment = if index < third {
        KnotSegment::LeadIn
    } else if index < 2 * third {
        KnotSegment::Loop
    } else {
        KnotSegment::LeadOut
    };
    knot_mean_at(t - 1.5, segment)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnotSegment {
    LeadIn,
    Loop,
    LeadOut,
}

/// Knot mean formula of `segment` at shifted time `tt` in `[-1.5, 1.5]`.
pub fn knot_mean_at(tt: f64, segment: KnotSegment) -> [f64; 2] {
    match segment {
        KnotSegment::LeadIn => [3.0 * (tt + 0.5), -0.5 * (5.0 * (tt + 1.0)).tanh() + 0.5],
        KnotSegment::Loop => {
            let a = 2.0 * PI * (tt - 0.75);
            [a.cos(), a.sin()]
        }
        KnotSegment::LeadOut => [3.0 * (tt - 0.5), 0.5 * (5.0 * (tt - 1.0)).tanh() + 0.5],
    }
}

pub fn gen_knot(spec: &KnotSpec) -> Result<MarginalDataset> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let k = spec.k;
    let marginals = (0..k)
        .map(|i| {
            let mu = knot_mean(i, k);
            let mut data = Vec::with_capacity(2 * spec.samples);
            for _ in 0..spec.samples {
                data.push(mu[0] + noise.sample(&mut rng));
                data.push(mu[1] + noise.sample(&mut rng));
            }
            let t = if i + 1 == k { 1.0 } else { i as f64 / (k - 1) as f64 };
            Ok((t, Tensor::matrix(spec.samples, 2, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    MarginalDataset::new(marginals)
}

/// Isotropic Gaussian marginals `N(means[i], std^2 I)` at evenly spaced
/// times on `[0, 1]`.
pub fn gen_gaussian_sequence(means: &[Vec<f64>], std: f64, n: usize, seed: u64) -> Result<MarginalDataset> {
    if means.is_empty() || n == 0 {
        return Err(Error::invalid("need at least one mean and one sample"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("std must be >= 0, got {std}")));
    }
    let d = means[0].len();
    if d == 0 || means.iter().any(|m| m.len() != d) {
        return Err(Error::invalid("all means must share a positive dimension"));
    }
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let k = means.len();
    let marginals = means
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let data = (0..n).flat_map(|_| m.iter().map(|mu| mu + noise.sample(&mut rng)).collect::<Vec<_>>()).collect();
            let t = if k == 1 {
                0.0
            } else if i + 1 == k {
                1.0
            } else {
                i as f64 / (k - 1) as f64
            };
            Ok((t, Tensor::matrix(n, d, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if k == 1 {
        MarginalDataset::partial(marginals)
    } else {
        MarginalDataset::new(marginals)
    }
}
