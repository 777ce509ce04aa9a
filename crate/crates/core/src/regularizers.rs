//! Regularisers that keep the learnt interpolant close to a reference path or
//! smooth in time, plus the data-dependent LAND metric.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{Batch, ChainedTriple};
use crate::error::{Error, Result};
use crate::interpolants::{linear_ref_rows, piecewise_ref_rows, AliGenerator, PiecewiseForm};
use crate::nd::{Tape, Tensor, Var};

/// Smallest finite-difference step accepted by the second-derivative regulariser.
pub const MIN_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegulariserKind {
    #[default]
    LinearRef,
    PiecewiseRef,
    SecondDerivative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegNorm {
    #[default]
    Euclidean,
    Land,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegulariserSpec {
    pub kind: RegulariserKind,
    pub lambda: f64,
    /// Finite-difference step of the second-derivative stencil.
    pub h: f64,
    /// Monte-Carlo time samples per pair for the second-derivative estimate.
    pub mc_samples: usize,
    pub norm: RegNorm,
    pub piecewise_form: PiecewiseForm,
    /// Rescale `lambda` once after pretraining so the regulariser matches the
    /// GAN loss in magnitude.
    pub auto_lambda: bool,
    pub land: LandParams,
}

impl Default for RegulariserSpec {
    fn default() -> Self {
        RegulariserSpec {
            kind: RegulariserKind::LinearRef,
            lambda: 1.0,
            h: 1e-3,
            mc_samples: 3,
            norm: RegNorm::Euclidean,
            piecewise_form: PiecewiseForm::Continuous,
            auto_lambda: false,
            land: LandParams::default(),
        }
    }
}

impl RegulariserSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.kind == RegulariserKind::SecondDerivative {
            if !(self.h >= MIN_FD_STEP) {
                return Err(Error::invalid(format!(
                    "finite-difference step {} is below {MIN_FD_STEP}; cancellation would dominate",
                    self.h
                )));
            }
            if !(self.h < 0.5) {
                return Err(Error::invalid(format!("finite-difference step {} must be < 0.5", self.h)));
            }
            if self.mc_samples == 0 {
                return Err(Error::invalid("mc_samples must be >= 1"));
            }
        }
        self.land.validate()
    }
}

/// Kernel settings for the LAND metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub eps: f64,
    /// Maximum number of reference points kept (uniform subsample).
    pub max_points: usize,
}

impl Default for LandParams {
    fn default() -> Self {
        LandParams {
            gamma1: 0.4,
            gamma2: 0.4,
            eps: 1e-3,
            max_points: 2048,
        }
    }
}

impl LandParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("eps", self.eps)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("LAND {name} must be > 0, got {v}")));
            }
        }
        if self.max_points == 0 {
            return Err(Error::invalid("LAND max_points must be >= 1"));
        }
        Ok(())
    }
}

/// Reference set `{(x_s, s)}` and kernel widths of the LAND metric.
#[derive(Clone, Debug, PartialEq)]
pub struct LandMetricSpec {
    points: Tensor,
    times: Vec<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eps: f64,
}

impl LandMetricSpec {
    pub fn new(points: Tensor, times: Vec<f64>, gamma1: f64, gamma2: f64, eps: f64) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::EmptyBatch("LandMetricSpec"));
        }
        if points.rows() != times.len() {
            return Err(Error::shape(
                "LandMetricSpec",
                format!("{} points with {} times", points.rows(), times.len()),
            ));
        }
        LandParams { gamma1, gamma2, eps, max_points: 1 }.validate()?;
        Ok(LandMetricSpec { points, times, gamma1, gamma2, eps })
    }

    /// Pool time-stamped batches into a reference set, keeping at most
    /// `params.max_points` points chosen uniformly without replacement.
    pub fn from_batches<R: Rng + ?Sized>(
        batches: &[(f64, &Batch)],
        params: &LandParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        let mut rows = Vec::new();
        let mut times = Vec::new();
        for (t, b) in batches {
            for r in b.points().iter_rows() {
                rows.push(r.to_vec());
                times.push(*t);
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyBatch("LandMetricSpec::from_batches"));
        }
        if rows.len() > params.max_points {
            let mut keep = sample(rng, rows.len(), params.max_points).into_vec();
            keep.sort_unstable();
            rows = keep.iter().map(|&i| std::mem::take(&mut rows[i])).collect();
            times = keep.iter().map(|&i| times[i]).collect();
        }
        LandMetricSpec::new(Tensor::from_rows(&rows)?, times, params.gamma1, params.gamma2, params.eps)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Diagonal of `(diag(h(x, t)) + eps I)^-1` with
/// `h_a = sum_s (x_a - x_s,a)^2 exp(-|x - x_s|^2 / g1) exp(-(t - s)^2 / g2)`.
pub fn land_metric(x: &[f64], t: f64, spec: &LandMetricSpec) -> Result<Vec<f64>> {
    if x.len() != spec.points.cols() {
        return Err(Error::shape(
            "land_metric",
            format!("probe dim {} vs reference dim {}", x.len(), spec.points.cols()),
        ));
    }
    let mut h = vec![0.0; x.len()];
    let mut diff = vec![0.0; x.len()];
    for (xs, &s) in spec.points.iter_rows().zip(&spec.times) {
        let mut sq = 0.0;
        for ((d, a), b) in diff.iter_mut().zip(x).zip(xs) {
            *d = a - b;
            sq += *d * *d;
        }
        let w = (-sq / spec.gamma1).exp() * (-(t - s) * (t - s) / spec.gamma2).exp();
        if w == 0.0 {
            continue;
        }
        for (ha, d) in h.iter_mut().zip(&diff) {
            *ha += d * d * w;
        }
    }
    Ok(h.into_iter().map(|v| 1.0 / (v + spec.eps)).collect())
}

/// Row-wise [`land_metric`].
pub fn land_metric_rows(x: &Tensor, t: &[f64], spec: &LandMetricSpec) -> Result<Tensor> {
    if x.rows() != t.len() {
        return Err(Error::shape("land_metric_rows", format!("{} rows, {} times", x.rows(), t.len())));
    }
    let mut out = Tensor::zeros(x.shape());
    for (r, &tr) in t.iter().enumerate() {
        let m = land_metric(x.row(r), tr, spec)?;
        out.row_mut(r).copy_from_slice(&m);
    }
    Ok(out)
}

/// `sum_a metric_a v_a^2`.
pub fn weighted_sq_norm(v: &[f64], metric: &[f64]) -> Result<f64> {
    if v.len() != metric.len() {
        return Err(Error::shape("weighted_sq_norm", format!("{} vs {}", v.len(), metric.len())));
    }
    Ok(v.iter().zip(metric).map(|(x, m)| m * x * x).sum())
}

/// Second central difference divided by `h^2`, per coordinate.
pub fn second_difference(plus: &[f64], minus: &[f64], mid: &[f64], h: f64) -> Vec<f64> {
    plus.iter()
        .zip(minus)
        .zip(mid)
        .map(|((p, m), c)| (p + m - 2.0 * c) / (h * h))
        .collect()
}

/// Materialise chained triples as aligned `(x0, x_ti, x1)` rows.
pub fn gather_triples(b0: &Batch, bt: &Batch, b1: &Batch, triples: &[ChainedTriple]) -> (Tensor, Tensor, Tensor) {
    let i0: Vec<usize> = triples.iter().map(|c| c.i0).collect();
    let it: Vec<usize> = triples.iter().map(|c| c.it).collect();
    let i1: Vec<usize> = triples.iter().map(|c| c.i1).collect();
    (
        b0.points().select_rows(&i0),
        bt.points().select_rows(&it),
        b1.points().select_rows(&i1),
    )
}

fn row_mean_sq(tape: &mut Tape, v: Var) -> Var {
    let n = tape.value(v).rows() as f64;
    let sq = tape.square(v);
    let s = tape.sum(sq);
    tape.scale(s, 1.0 / n)
}

/// Mean over rows of `|gated|^2`, where `gated = G - l` on the same rows.
pub fn record_linear_from_gated(tape: &mut Tape, gated: Var) -> Var {
    row_mean_sq(tape, gated)
}

/// `mean |G(x0, x1, t_i) - l(x0, x1, t_i)|^2` on the tape.
pub fn record_linear(
    tape: &mut Tape,
    gen: &AliGenerator,
    params: Option<&[Var]>,
    x0: &Tensor,
    x1: &Tensor,
    t_i: f64,
) -> Result<Var> {
    let t = vec![t_i; x0.rows()];
    let rec = gen.record(tape, params, x0, x1, &t, &t)?;
    let reference = tape.constant(linear_ref_rows(x0, x1, &t)?);
    let dev = tape.sub(rec.output, reference)?;
    Ok(row_mean_sq(tape, dev))
}

/// Piecewise-reference regulariser with one `t ~ U[0, 1]` per triple.
#[allow(clippy::too_many_arguments)]
pub fn record_piecewise<R: Rng + ?Sized>(
    tape: &mut Tape,
    gen: &AliGenerator,
    params: Option<&[Var]>,
    x0: &Tensor,
    x_ti: &Tensor,
    x1: &Tensor,
    t_i: f64,
    form: PiecewiseForm,
    rng: &mut R,
) -> Result<Var> {
    let t: Vec<f64> = (0..x0.rows()).map(|_| rng.random::<f64>()).collect();
    let reference = piecewise_ref_rows(x0, x_ti, x1, t_i, &t, form)?;
    let rec = gen.record(tape, params, x0, x1, &t, &t)?;
    let reference = tape.constant(reference);
    let dev = tape.sub(rec.output, reference)?;
    Ok(row_mean_sq(tape, dev))
}

/// Monte-Carlo estimate of `int |d^2 G / dt^2|^2 dt` via the central stencil
/// `(G(t+h) + G(t-h) - 2 G(t)) / h^2`, with `t ~ U[h, 1-h]` and
/// `spec.mc_samples` draws per pair. The affine skeleton of `G` cancels
/// exactly in the stencil, so only the gated correction is differenced.
#[allow(clippy::too_many_arguments)]
pub fn record_second_derivative<R: Rng + ?Sized>(
    tape: &mut Tape,
    gen: &AliGenerator,
    params: Option<&[Var]>,
    x0: &Tensor,
    x1: &Tensor,
    spec: &RegulariserSpec,
    land: Option<&LandMetricSpec>,
    rng: &mut R,
) -> Result<Var> {
    spec.validate()?;
    let h = spec.h;
    let s = spec.mc_samples;
    let n = x0.rows();
    let rows: Vec<usize> = (0..n).flat_map(|r| std::iter::repeat_n(r, s)).collect();
    let a = x0.select_rows(&rows);
    let b = x1.select_rows(&rows);
    let t: Vec<f64> = (0..n * s).map(|_| rng.random_range(h..=1.0 - h)).collect();
    record_second_derivative_at(tape, gen, params, &a, &b, &t, spec, land)
}

/// Stencil regulariser at explicit times, one per row.
#[allow(clippy::too_many_arguments)]
pub fn record_second_derivative_at(
    tape: &mut Tape,
    gen: &AliGenerator,
    params: Option<&[Var]>,
    x0: &Tensor,
    x1: &Tensor,
    t: &[f64],
    spec: &RegulariserSpec,
    land: Option<&LandMetricSpec>,
) -> Result<Var> {
    let h = spec.h;
    if !(h >= MIN_FD_STEP) {
        return Err(Error::invalid(format!(
            "finite-difference step {h} is below {MIN_FD_STEP}; cancellation would dominate"
        )));
    }
    if t.is_empty() {
        return Err(Error::EmptyBatch("second-derivative regulariser"));
    }
    let tp: Vec<f64> = t.iter().map(|x| x + h).collect();
    let tm: Vec<f64> = t.iter().map(|x| x - h).collect();
    let mid = gen.record(tape, params, x0, x1, t, t)?;
    let plus = gen.record(tape, params, x0, x1, &tp, &tp)?;
    let minus = gen.record(tape, params, x0, x1, &tm, &tm)?;
    let pm = tape.add(plus.gated, minus.gated)?;
    let twice = tape.scale(mid.gated, 2.0);
    let stencil = tape.sub(pm, twice)?;
    let sq = tape.square(stencil);
    let weighted = match (spec.norm, land) {
        (RegNorm::Euclidean, _) => sq,
        (RegNorm::Land, Some(l)) => {
            let metric = land_metric_rows(tape.value(mid.output), t, l)?;
            tape.mul_const(sq, metric)?
        }
        (RegNorm::Land, None) => {
            return Err(Error::invalid("LAND norm requested without a reference set"));
        }
    };
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / (t.len() as f64 * h.powi(4))))
}

fn value_of(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    tape.value(v).item()
}

/// Minibatch mean of `|G(x0, x1, t_i) - l(x0, x1, t_i)|^2` (noiseless).
pub fn reg_linear(gen: &AliGenerator, x0: &Tensor, x1: &Tensor, t_i: f64) -> Result<f64> {
    if !(t_i > 0.0 && t_i < 1.0) {
        return Err(Error::invalid(format!("t_i must lie in (0, 1), got {t_i}")));
    }
    value_of(|tape| record_linear(tape, gen, None, x0, x1, t_i))
}

/// Monte-Carlo piecewise-reference regulariser over aligned triples.
#[allow(clippy::too_many_arguments)]
pub fn reg_piecewise<R: Rng + ?Sized>(
    gen: &AliGenerator,
    x0: &Tensor,
    x_ti: &Tensor,
    x1: &Tensor,
    t_i: f64,
    form: PiecewiseForm,
    rng: &mut R,
) -> Result<f64> {
    value_of(|tape| record_piecewise(tape, gen, None, x0, x_ti, x1, t_i, form, rng))
}

pub fn reg_second_derivative<R: Rng + ?Sized>(
    gen: &AliGenerator,
    x0: &Tensor,
    x1: &Tensor,
    spec: &RegulariserSpec,
    land: Option<&LandMetricSpec>,
    rng: &mut R,
) -> Result<f64> {
    value_of(|tape| record_second_derivative(tape, gen, None, x0, x1, spec, land, rng))
}

/// [`reg_second_derivative`] at explicit times, one per row.
pub fn reg_second_derivative_at(
    gen: &AliGenerator,
    x0: &Tensor,
    x1: &Tensor,
    t: &[f64],
    spec: &RegulariserSpec,
    land: Option<&LandMetricSpec>,
) -> Result<f64> {
    value_of(|tape| record_second_derivative_at(tape, gen, None, x0, x1, t, spec, land))
}
