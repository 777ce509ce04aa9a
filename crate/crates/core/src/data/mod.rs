//! Time-indexed empirical marginals, synthetic generators and CSV I/O.

pub mod csv;
mod generators;

use serde::{Deserialize, Serialize};

use crate::coupling::Batch;
use crate::error::{Error, Result};
use crate::nd::Tensor;

pub use csv::TrajectorySet;
pub use generators::{gen_gaussian_sequence, gen_knot, knot_mean, knot_mean_at, KnotSegment, KnotSpec};

/// Two time stamps closer than this are treated as the same stamp.
pub const TIME_TOL: f64 = 1e-12;

/// Per-dimension affine map `x -> (x - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalisation {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalisation {
    pub fn identity(dim: usize) -> Self {
        Normalisation {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape(
                "Normalisation",
                format!("dimension {} vs {}", x.cols(), self.dim()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.shift[k]) / self.scale[k];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.scale[k] + self.shift[k];
            }
        }
        Ok(out)
    }
}

/// Ordered marginals `{(t_i, samples)}`, optionally in normalised
/// coordinates (`normalisation` then maps back to data space).
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDataset {
    times: Vec<f64>,
    batches: Vec<Batch>,
    normalisation: Option<Normalisation>,
}

impl MarginalDataset {
    /// Full dataset: strictly increasing times from exactly 0 to exactly 1.
    pub fn new(marginals: Vec<(f64, Tensor)>) -> Result<Self> {
        let ds = MarginalDataset::partial(marginals)?;
        let (first, last) = (ds.times[0], *ds.times.last().unwrap());
        if ds.len() < 2 || first != 0.0 || last != 1.0 {
            return Err(Error::Dataset(format!(
                "marginal times must run from 0 to 1, got {first} .. {last} over {} stamps",
                ds.len()
            )));
        }
        Ok(ds)
    }

    /// Any strictly increasing subset of `[0, 1]`, e.g. evaluation references.
    pub fn partial(marginals: Vec<(f64, Tensor)>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Dataset("no marginals".into()));
        }
        let dim = marginals[0].1.cols();
        let mut times = Vec::with_capacity(marginals.len());
        let mut batches = Vec::with_capacity(marginals.len());
        for (t, pts) in marginals {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Dataset(format!("time {t} outside [0, 1]")));
            }
            if let Some(&prev) = times.last() {
                if !(t > prev) {
                    return Err(Error::Dataset(format!("times not strictly increasing: {prev} then {t}")));
                }
            }
            if pts.shape().len() != 2 || pts.cols() != dim {
                return Err(Error::Dataset(format!(
                    "marginal at t={t} has shape {:?}, expected n x {dim}",
                    pts.shape()
                )));
            }
            let b = Batch::with_time(pts, t).map_err(|e| Error::Dataset(format!("marginal at t={t}: {e}")))?;
            times.push(t);
            batches.push(b);
        }
        Ok(MarginalDataset {
            times,
            batches,
            normalisation: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.batches[0].dim()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn batch(&self, i: usize) -> &Batch {
        &self.batches[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Batch)> {
        self.times.iter().copied().zip(&self.batches)
    }

    pub fn total_samples(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }

    pub fn normalisation(&self) -> Option<&Normalisation> {
        self.normalisation.as_ref()
    }

    pub fn with_normalisation(mut self, n: Option<Normalisation>) -> Self {
        self.normalisation = n;
        self
    }

    /// Index of the stamp equal to `t` (within [`TIME_TOL`]).
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let p = self.times.partition_point(|&x| x < t - TIME_TOL);
        (p < self.len() && (self.times[p] - t).abs() <= TIME_TOL).then_some(p)
    }

    /// Keep the marginals at `indices` (increasing order required).
    pub fn select(&self, indices: &[usize]) -> Result<MarginalDataset> {
        let parts = indices
            .iter()
            .map(|&i| {
                self.batches
                    .get(i)
                    .map(|b| (self.times[i], b.points().clone()))
                    .ok_or_else(|| Error::Dataset(format!("marginal index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalDataset::partial(parts)?.with_normalisation(self.normalisation.clone()))
    }

    /// Drop the marginal at `index`.
    pub fn without(&self, index: usize) -> Result<MarginalDataset> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| i != index).collect();
        self.select(&keep)
    }

    fn map_points(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<MarginalDataset> {
        let batches = self
            .iter()
            .map(|(t, b)| Batch::with_time(f(b.points())?, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalDataset {
            times: self.times.clone(),
            batches,
            normalisation: self.normalisation.clone(),
        })
    }

    /// All samples stacked into one `N x d` tensor, with their times.
    pub fn stacked(&self) -> (Tensor, Vec<f64>) {
        let mut data = Vec::with_capacity(self.total_samples() * self.dim());
        let mut times = Vec::with_capacity(self.total_samples());
        for (t, b) in self.iter() {
            data.extend_from_slice(b.points().data());
            times.extend(std::iter::repeat_n(t, b.len()));
        }
        (Tensor::matrix(times.len(), self.dim(), data).expect("consistent sizes"), times)
    }
}

/// Min-max normalisation to `[0, 1]` per dimension; a constant dimension
/// keeps scale 1 and is only shifted.
pub fn normalise(ds: &MarginalDataset) -> Result<(MarginalDataset, Normalisation)> {
    let d = ds.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for b in ds.batches() {
        for r in b.points().iter_rows() {
            for k in 0..d {
                lo[k] = lo[k].min(r[k]);
                hi[k] = hi[k].max(r[k]);
            }
        }
    }
    let scale: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| if h > l { h - l } else { 1.0 })
        .collect();
    let norm = Normalisation { shift: lo, scale };
    let out = ds.map_points(|x| norm.apply(x))?.with_normalisation(Some(norm.clone()));
    Ok((out, norm))
}

/// Map a normalised dataset back to data coordinates.
pub fn denormalise(ds: &MarginalDataset, norm: &Normalisation) -> Result<MarginalDataset> {
    Ok(ds.map_points(|x| norm.invert(x))?.with_normalisation(None))
}
