//! Interpolants between coupled samples: linear and piecewise-linear
//! references, natural cubic splines, and the learnt ALI generator.

mod ali;
mod embedding;
pub mod spline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::Tensor;

pub use ali::{AliGenerator, AliRecord};
pub use embedding::TimeEmbedding;
pub use spline::{spline_fit, SplineInterpolant};

/// `(1 - t) x0 + t x1`.
pub fn linear_ref(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(Error::shape(
            "linear_ref",
            format!("endpoint dims {} and {}", x0.len(), x1.len()),
        ));
    }
    Ok(x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Row-wise [`linear_ref`] at a shared time.
pub fn linear_ref_batch(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    linear_ref_rows(x0, x1, &vec![t; x0.rows()])
}

/// Row-wise [`linear_ref`] with one time per row.
pub fn linear_ref_rows(x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
    check_pair_shapes("linear_ref_rows", x0, x1, t.len())?;
    let d = x0.cols();
    let mut out = Tensor::zeros(&[x0.rows(), d]);
    for (r, &tr) in t.iter().enumerate() {
        let (a, b) = (x0.row(r), x1.row(r));
        for (o, (p, q)) in out.row_mut(r).iter_mut().zip(a.iter().zip(b)) {
            *o = (1.0 - tr) * p + tr * q;
        }
    }
    Ok(out)
}

pub(crate) fn check_pair_shapes(op: &'static str, x0: &Tensor, x1: &Tensor, n_t: usize) -> Result<()> {
    if x0.shape() != x1.shape() || x0.shape().len() != 2 {
        return Err(Error::shape(op, format!("endpoints {:?} and {:?}", x0.shape(), x1.shape())));
    }
    if n_t != x0.rows() {
        return Err(Error::shape(op, format!("{n_t} times for {} pairs", x0.rows())));
    }
    Ok(())
}

/// Which reading of the second branch of the piecewise reference to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiecewiseForm {
    /// `((t - t_i) x1 + (1 - t) x_ti) / (1 - t_i)`: continuous at the knot, equals x1 at t = 1.
    #[default]
    Continuous,
    /// `(t x1 + (1 - t) x_ti) / (1 - t_i)` taken literally.
    Literal,
}

/// Two-segment path through `(0, x0)`, `(t_i, x_ti)`, `(1, x1)`.
pub fn piecewise_ref(
    x0: &[f64],
    x_ti: &[f64],
    x1: &[f64],
    t_i: f64,
    t: f64,
    form: PiecewiseForm,
) -> Result<Vec<f64>> {
    if x0.len() != x1.len() || x0.len() != x_ti.len() {
        return Err(Error::shape(
            "piecewise_ref",
            format!("dims {}, {}, {}", x0.len(), x_ti.len(), x1.len()),
        ));
    }
    if !(t_i > 0.0 && t_i < 1.0) {
        return Err(Error::invalid(format!("knot time must lie in (0, 1), got {t_i}")));
    }
    let mut out = vec![0.0; x0.len()];
    piecewise_into(x0, x_ti, x1, t_i, t, form, &mut out);
    Ok(out)
}

fn piecewise_into(
    x0: &[f64],
    x_ti: &[f64],
    x1: &[f64],
    t_i: f64,
    t: f64,
    form: PiecewiseForm,
    out: &mut [f64],
) {
    if t <= t_i {
        for (o, (a, m)) in out.iter_mut().zip(x0.iter().zip(x_ti)) {
            *o = (t * m + (t_i - t) * a) / t_i;
        }
    } else {
        let w1 = match form {
            PiecewiseForm::Continuous => t - t_i,
            PiecewiseForm::Literal => t,
        };
        for (o, (m, b)) in out.iter_mut().zip(x_ti.iter().zip(x1)) {
            *o = (w1 * b + (1.0 - t) * m) / (1.0 - t_i);
        }
    }
}

/// Row-wise [`piecewise_ref`] with one time per row.
pub fn piecewise_ref_rows(
    x0: &Tensor,
    x_ti: &Tensor,
    x1: &Tensor,
    t_i: f64,
    t: &[f64],
    form: PiecewiseForm,
) -> Result<Tensor> {
    check_pair_shapes("piecewise_ref_rows", x0, x1, t.len())?;
    if x_ti.shape() != x0.shape() {
        return Err(Error::shape(
            "piecewise_ref_rows",
            format!("knot points {:?} vs endpoints {:?}", x_ti.shape(), x0.shape()),
        ));
    }
    if !(t_i > 0.0 && t_i < 1.0) {
        return Err(Error::invalid(format!("knot time must lie in (0, 1), got {t_i}")));
    }
    let mut out = Tensor::zeros(x0.shape());
    for (r, &tr) in t.iter().enumerate() {
        piecewise_into(x0.row(r), x_ti.row(r), x1.row(r), t_i, tr, form, out.row_mut(r));
    }
    Ok(out)
}

/// Piecewise-linear path through knots `(times[k], knots[k])`; returns the
/// position and the one-sided (right) derivative at `t`.
pub fn polyline_eval(times: &[f64], knots: &Tensor, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = times.len();
    if k < 2 || knots.rows() != k {
        return Err(Error::shape(
            "polyline_eval",
            format!("{} knots for {k} times", knots.rows()),
        ));
    }
    let seg = match times.partition_point(|&x| x <= t) {
        0 => 0,
        p if p >= k => k - 2,
        p => p - 1,
    };
    let (t0, t1) = (times[seg], times[seg + 1]);
    let h = t1 - t0;
    if !(h > 0.0) {
        return Err(Error::invalid("polyline times must be strictly increasing"));
    }
    let s = (t - t0) / h;
    let (a, b) = (knots.row(seg), knots.row(seg + 1));
    let pos = a.iter().zip(b).map(|(p, q)| (1.0 - s) * p + s * q).collect();
    let vel = a.iter().zip(b).map(|(p, q)| (q - p) / h).collect();
    Ok((pos, vel))
}

/// Interpolant between a coupled pair, evaluated row-wise with one time per row.
pub trait PairInterpolant {
    fn dim(&self) -> usize;

    fn position(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor>;

    /// Position and time derivative.
    fn position_and_velocity(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor)>;
}

/// The straight line `(1 - t) x0 + t x1`.
#[derive(Clone, Copy, Debug)]
pub struct LinearInterpolant {
    pub dim: usize,
}

impl PairInterpolant for LinearInterpolant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn position(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
        linear_ref_rows(x0, x1, t)
    }

    fn position_and_velocity(&self, x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor)> {
        let pos = linear_ref_rows(x0, x1, t)?;
        let vel = x1.zip_map(x0, |b, a| b - a)?;
        Ok((pos, vel))
    }
}
