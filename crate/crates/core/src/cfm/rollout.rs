use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::coupling::Batch;
use crate::data::{MarginalDataset, TrajectorySet};
use crate::error::{Error, Result};
use crate::nd::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    #[default]
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub solver: Solver,
    pub steps: usize,
    /// Record every `stride`-th state; the final state is always recorded.
    pub stride: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { solver: Solver::Rk4, steps: 101, stride: 1 }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("rollout needs at least one step"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        Ok(())
    }
}

fn axpy(x: &Tensor, a: f64, v: &Tensor) -> Tensor {
    x.zip_map(v, |p, q| p + a * q).expect("shapes match")
}

/// One step from `t` to `t + h`.
fn advance(field: &VectorField, solver: Solver, x: &Tensor, t: f64, h: f64) -> Result<Tensor> {
    match solver {
        Solver::Euler => Ok(axpy(x, h, &field.eval_at(x, t)?)),
        Solver::Rk4 => {
            let k1 = field.eval_at(x, t)?;
            let k2 = field.eval_at(&axpy(x, 0.5 * h, &k1), t + 0.5 * h)?;
            let k3 = field.eval_at(&axpy(x, 0.5 * h, &k2), t + 0.5 * h)?;
            let k4 = field.eval_at(&axpy(x, h, &k3), t + h)?;
            let mut out = x.clone();
            let c = h / 6.0;
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += c * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]);
            }
            Ok(out)
        }
    }
}

/// Integrate on the grid `t_k = t_start + k h`, calling `record(k, t_k, x)`
/// after every step. Rows that turn non-finite are frozen at NaN.
fn integrate(
    field: &VectorField,
    x0: &Tensor,
    t_start: f64,
    t_end: f64,
    cfg: &RolloutConfig,
    carry_nan: bool,
    mut record: impl FnMut(usize, f64, &Tensor),
) -> Result<(Tensor, Vec<bool>)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&t_start) || !(t_end > t_start && t_end <= 1.0) {
        return Err(Error::invalid(format!("need 0 <= t_start < t_end <= 1, got [{t_start}, {t_end}]")));
    }
    if x0.cols() != field.dim() {
        return Err(Error::shape("rollout", format!("points of dim {} for a field of dim {}", x0.cols(), field.dim())));
    }
    if !carry_nan && !x0.is_finite() {
        return Err(Error::NonFinite("rollout initial points".into()));
    }
    let d = x0.cols();
    let h = (t_end - t_start) / cfg.steps as f64;
    let mut divergent = vec![false; x0.rows()];
    let mut x = x0.clone();
    record(0, t_start, &x);
    for k in 0..cfg.steps {
        let t = t_start + k as f64 * h;
        x = advance(field, cfg.solver, &x, t, h)?;
        for (r, flag) in divergent.iter_mut().enumerate() {
            let row = x.row_mut(r);
            if *flag || row.iter().any(|v| !v.is_finite()) {
                *flag = true;
                row.fill(f64::NAN);
            }
        }
        let t_next = if k + 1 == cfg.steps { t_end } else { t_start + (k + 1) as f64 * h };
        record(k + 1, t_next, &x);
    }
    debug_assert_eq!(x.cols(), d);
    Ok((x, divergent))
}

/// Steps for an interval of length `gap` at `per_unit` steps per unit time,
/// tolerant to rounding in `gap`.
pub(super) fn steps_for(gap: f64, per_unit: usize) -> usize {
    ((gap * per_unit as f64 - 1e-9).ceil() as usize).max(1)
}

/// Trajectories over `[0, 1]` starting at `x0`.
pub fn rollout(field: &VectorField, x0: &Tensor, cfg: &RolloutConfig) -> Result<TrajectorySet> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let steps = cfg.steps;
    let stride = cfg.stride;
    let (_, divergent) = integrate(field, x0, 0.0, 1.0, cfg, false, |k, t, x| {
        if k % stride == 0 || k == steps {
            times.push(t);
            states.push(x.clone());
        }
    })?;
    Ok(TrajectorySet { times, states, divergent })
}

/// Endpoints after integrating from `t_start` to `t_end`, and the divergence flags.
pub fn rollout_between(
    field: &VectorField,
    x: &Tensor,
    t_start: f64,
    t_end: f64,
    cfg: &RolloutConfig,
) -> Result<(Tensor, Vec<bool>)> {
    integrate(field, x, t_start, t_end, cfg, false, |_, _, _| {})
}

/// Marginal pushed to a target time; divergent rows are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct Pushed {
    pub t: f64,
    pub batch: Batch,
    pub diverged: usize,
}

/// Push each marginal `i - 1` to `t_i` for every index in `targets`, keeping
/// only the finite rows. The number of steps per push scales with the
/// interval length so that a full `[0, 1]` push uses `cfg.steps`.
pub fn push_forward(
    field: &VectorField,
    data: &MarginalDataset,
    targets: &[usize],
    cfg: &RolloutConfig,
) -> Result<Vec<Pushed>> {
    let mut out = Vec::with_capacity(targets.len());
    for &i in targets {
        if i == 0 || i >= data.len() {
            return Err(Error::invalid(format!("cannot push to marginal {i} of {}", data.len())));
        }
        let (t0, t1) = (data.times()[i - 1], data.times()[i]);
        let steps = steps_for(t1 - t0, cfg.steps);
        let (x, divergent) = rollout_between(field, data.batch(i - 1).points(), t0, t1, &RolloutConfig { steps, ..*cfg })?;
        let keep: Vec<usize> = (0..x.rows()).filter(|&r| !divergent[r]).collect();
        if keep.is_empty() {
            return Err(Error::Divergence {
                iteration: i as u64,
                reason: format!("every trajectory pushed to t = {t1} diverged"),
            });
        }
        out.push(Pushed {
            t: t1,
            batch: Batch::with_time(x.select_rows(&keep), t1)?,
            diverged: x.rows() - keep.len(),
        });
    }
    Ok(out)
}

/// Trajectories recorded exactly at the ascending `times`, starting from `x0`
/// at `times[0]`. Each gap gets `ceil(gap * cfg.steps)` steps (at least one);
/// `cfg.stride` is ignored.
pub fn rollout_at_times(field: &VectorField, x0: &Tensor, times: &[f64], cfg: &RolloutConfig) -> Result<TrajectorySet> {
    cfg.validate()?;
    if times.is_empty() {
        return Err(Error::invalid("rollout_at_times needs at least one time"));
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite("rollout initial points".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("rollout times must be strictly increasing"));
    }
    let mut states = vec![x0.clone()];
    let mut divergent = vec![false; x0.rows()];
    let mut x = x0.clone();
    for w in times.windows(2) {
        let steps = steps_for(w[1] - w[0], cfg.steps);
        let (next, flags) = integrate(field, &x, w[0], w[1], &RolloutConfig { steps, ..*cfg }, true, |_, _, _| {})?;
        for (d, f) in divergent.iter_mut().zip(flags) {
            *d |= f;
        }
        x = next;
        states.push(x.clone());
    }
    Ok(TrajectorySet { times: times.to_vec(), states, divergent })
}
