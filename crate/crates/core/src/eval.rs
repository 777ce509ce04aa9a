//! Earth-mover distances between empirical marginals and the per-time
//! evaluation table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::{assignment, sinkhorn, transport, Batch, MAX_EXACT_SIZE};
use crate::data::{MarginalDataset, Normalisation};
use crate::error::{Error, Result};
use crate::nd::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundCost {
    #[default]
    Euclidean,
    SqEuclidean,
}

impl GroundCost {
    pub fn name(self) -> &'static str {
        match self {
            GroundCost::Euclidean => "euclidean",
            GroundCost::SqEuclidean => "sq-euclidean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmdOptions {
    pub cost: GroundCost,
    /// Largest batch solved exactly.
    pub max_exact: usize,
    /// Entropic fallback above `max_exact`; without it large batches are rejected.
    pub sinkhorn_epsilon: Option<f64>,
    pub sinkhorn_iters: usize,
}

impl Default for EmdOptions {
    fn default() -> Self {
        EmdOptions {
            cost: GroundCost::Euclidean,
            max_exact: MAX_EXACT_SIZE,
            sinkhorn_epsilon: None,
            sinkhorn_iters: 10_000,
        }
    }
}

fn cost_matrix(a: &Tensor, b: &Tensor, cost: GroundCost) -> Result<Vec<f64>> {
    let mut c = crate::coupling::sq_euclidean_costs(a, b)?;
    if cost == GroundCost::Euclidean {
        for v in &mut c {
            *v = v.sqrt();
        }
    }
    Ok(c)
}

/// Exact optimal transport cost between the uniform empirical measures on
/// `a` and `b`.
pub fn emd(a: &Batch, b: &Batch, cost: GroundCost) -> Result<f64> {
    emd_with(a, b, &EmdOptions { cost, ..EmdOptions::default() })
}

pub fn emd_with(a: &Batch, b: &Batch, opts: &EmdOptions) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptyBatch("emd"));
    }
    let c = cost_matrix(a.points(), b.points(), opts.cost)?;
    if n.max(m) > opts.max_exact.min(MAX_EXACT_SIZE) {
        return match opts.sinkhorn_epsilon {
            Some(eps) => Ok(sinkhorn::sinkhorn(&c, n, m, eps, opts.sinkhorn_iters, 1e-9)?.cost(&c)),
            None => Err(Error::invalid(format!(
                "batches of {n} and {m} points exceed the exact EMD cap {}; enable the Sinkhorn fallback",
                opts.max_exact
            ))),
        };
    }
    if n == m {
        // summing the matched costs in sorted order makes emd(a, b) == emd(b, a) bit for bit
        let a = assignment::solve(&c, n, n)?;
        let mut matched: Vec<f64> = a.cols.iter().enumerate().map(|(i, &j)| c[i * n + j]).collect();
        matched.sort_by(f64::total_cmp);
        Ok(matched.iter().sum::<f64>() / n as f64)
    } else {
        Ok(transport::solve_uniform(&c, n, m)?.cost)
    }
}

/// Per-time EMD rows plus the ground cost that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct EmdTable {
    pub cost: GroundCost,
    pub rows: Vec<(f64, f64)>,
}

impl EmdTable {
    pub fn mean(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.1).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean over rows whose time lies strictly inside `(lo, hi)`.
    pub fn mean_between(&self, lo: f64, hi: f64) -> f64 {
        let sel: Vec<f64> = self.rows.iter().filter(|r| r.0 > lo && r.0 < hi).map(|r| r.1).collect();
        if sel.is_empty() {
            return f64::NAN;
        }
        sel.iter().sum::<f64>() / sel.len() as f64
    }

    /// `t,emd` rows followed by a `mean` row; the header names the cost.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,emd_{}", self.cost.name().replace('-', "_"))?;
        for (t, e) in &self.rows {
            writeln!(w, "{t:.16e},{e:.16e}")?;
        }
        writeln!(w, "mean,{:.16e}", self.mean())?;
        w.flush()?;
        Ok(())
    }
}

/// EMD between each predicted batch and the reference marginal at the same
/// time. Both sides are mapped back through `denorm` first when given.
pub fn evaluate_marginals(
    predicted: &[(f64, Batch)],
    reference: &MarginalDataset,
    denorm: Option<&Normalisation>,
    opts: &EmdOptions,
) -> Result<EmdTable> {
    let mut rows = Vec::with_capacity(predicted.len());
    for (t, pred) in predicted {
        let i = reference
            .time_index(*t)
            .ok_or_else(|| Error::Dataset(format!("no reference marginal at t={t}")))?;
        let refb = reference.batch(i);
        let e = match denorm {
            Some(n) => emd_with(
                &Batch::new(n.invert(pred.points())?)?,
                &Batch::new(n.invert(refb.points())?)?,
                opts,
            )?,
            None => emd_with(pred, refb, opts)?,
        };
        rows.push((*t, e));
    }
    Ok(EmdTable { cost: opts.cost, rows })
}
