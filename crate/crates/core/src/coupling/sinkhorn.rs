//! Entropic optimal transport between uniform measures, iterated in the log
//! domain so that small regularisation does not underflow.

use crate::error::{Error, Result};
use crate::nd::Tensor;

#[derive(Clone, Debug)]
pub struct SinkhornPlan {
    /// Dense `n x m` transport plan with total mass one.
    pub plan: Tensor,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute deviation of a row or column sum from its target.
    pub marginal_error: f64,
}

impl SinkhornPlan {
    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.plan.data().iter().zip(cost).map(|(p, c)| p * c).sum()
    }
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Run at most `max_iters` Sinkhorn sweeps on a row-major `n x m` cost.
///
/// Non-convergence is reported through [`SinkhornPlan::converged`]; the last
/// plan is still returned.
pub fn sinkhorn(
    cost: &[f64],
    n: usize,
    m: usize,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("sinkhorn epsilon must be > 0, got {epsilon}")));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyBatch("sinkhorn"));
    }
    if cost.len() != n * m {
        return Err(Error::shape("sinkhorn", format!("{} costs for {n}x{m}", cost.len())));
    }
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            let lse = log_sum_exp((0..m).map(|j| (g[j] - row[j]) / epsilon));
            f[i] = epsilon * (log_a - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / epsilon));
            g[j] = epsilon * (log_b - lse);
        }
        // columns are exact after the g-update; check the rows
        err = (0..n)
            .map(|i| {
                let s: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - cost[i * m + j]) / epsilon).exp())
                    .sum();
                (s - 1.0 / n as f64).abs()
            })
            .fold(0.0, f64::max);
        if err <= tol {
            break;
        }
    }
    let mut plan = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            plan[i * m + j] = ((f[i] + g[j] - cost[i * m + j]) / epsilon).exp();
        }
    }
    Ok(SinkhornPlan {
        plan: Tensor::matrix(n, m, plan)?,
        converged: err <= tol,
        iterations,
        marginal_error: err,
    })
}
