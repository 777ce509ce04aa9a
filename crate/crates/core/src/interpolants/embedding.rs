use serde::{Deserialize, Serialize};

use crate::nd::Tensor;

/// Time features fed to the networks: `t` followed by
/// `sin(2^j π t), cos(2^j π t)` for `j < frequencies`. Zero frequencies is the
/// raw scalar time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeEmbedding {
    pub frequencies: usize,
}

impl TimeEmbedding {
    pub const RAW: TimeEmbedding = TimeEmbedding { frequencies: 0 };

    pub fn new(frequencies: usize) -> Self {
        TimeEmbedding { frequencies }
    }

    pub fn width(&self) -> usize {
        1 + 2 * self.frequencies
    }

    fn omega(j: usize) -> f64 {
        std::f64::consts::PI * (1u64 << j) as f64
    }

    /// One row of features per time.
    pub fn features(&self, t: &[f64]) -> Tensor {
        let w = self.width();
        let mut data = Vec::with_capacity(t.len() * w);
        for &x in t {
            data.push(x);
            for j in 0..self.frequencies {
                let (s, c) = (Self::omega(j) * x).sin_cos();
                data.push(s);
                data.push(c);
            }
        }
        Tensor::matrix(t.len(), w, data).expect("width matches")
    }

    /// Elementwise time derivative of [`TimeEmbedding::features`].
    pub fn derivative(&self, t: &[f64]) -> Tensor {
        let w = self.width();
        let mut data = Vec::with_capacity(t.len() * w);
        for &x in t {
            data.push(1.0);
            for j in 0..self.frequencies {
                let om = Self::omega(j);
                let (s, c) = (om * x).sin_cos();
                data.push(om * c);
                data.push(-om * s);
            }
        }
        Tensor::matrix(t.len(), w, data).expect("width matches")
    }
}
