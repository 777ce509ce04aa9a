//! Exact optimal transport between uniform empirical measures of different
//! sizes, solved as a min-cost flow by successive shortest paths.

use crate::error::{Error, Result};

use super::assignment::MAX_EXACT_SIZE;

#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// `(i, j, mass)` with masses summing to one.
    pub entries: Vec<(usize, usize, f64)>,
    /// `sum mass * cost`.
    pub cost: f64,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Optimal plan between `n` sources of mass `1/n` and `m` sinks of mass `1/m`.
///
/// Masses are scaled to integers (`m/g` per source, `n/g` per sink with
/// `g = gcd(n, m)`), so the flow problem is solved exactly.
pub fn solve_uniform(cost: &[f64], n: usize, m: usize) -> Result<TransportPlan> {
    if n == 0 || m == 0 {
        return Err(Error::EmptyBatch("transport"));
    }
    if cost.len() != n * m {
        return Err(Error::shape(
            "transport::solve_uniform",
            format!("{} costs for {n}x{m}", cost.len()),
        ));
    }
    if n.max(m) > MAX_EXACT_SIZE {
        return Err(Error::invalid(format!(
            "transport size {} exceeds the exact-solver cap {MAX_EXACT_SIZE}",
            n.max(m)
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("transport cost".into()));
    }
    let g = gcd(n, m);
    let (supply_unit, demand_unit) = ((m / g) as u64, (n / g) as u64);
    let total = supply_unit * n as u64;

    let mut supply = vec![supply_unit; n];
    let mut demand = vec![demand_unit; m];
    let mut flow = vec![0u64; n * m];
    // Node potentials keeping reduced costs non-negative. The source
    // potential stays 0, and so does that of every row with supply left.
    let mut pot_row = vec![0.0f64; n];
    let mut pot_col = vec![0.0f64; m];
    let mut pot_sink = 0.0f64;
    let mut shipped = 0u64;

    let mut dist_row = vec![0.0f64; n];
    let mut dist_col = vec![0.0f64; m];
    let mut prev_col = vec![usize::MAX; m]; // row feeding col j
    let mut prev_row = vec![usize::MAX; n]; // col feeding row i (usize::MAX = source)
    let mut done_row = vec![false; n];
    let mut done_col = vec![false; m];

    while shipped < total {
        dist_row.iter_mut().for_each(|d| *d = f64::INFINITY);
        dist_col.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_row.iter_mut().for_each(|d| *d = false);
        done_col.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if supply[i] > 0 {
                dist_row[i] = 0.0;
                prev_row[i] = usize::MAX;
            }
        }
        // dense Dijkstra over rows and cols
        let mut sink_dist = f64::INFINITY;
        let mut sink_col = usize::MAX;
        loop {
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_row[i] && dist_row[i] < best {
                    best = dist_row[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_col[j] && dist_col[j] < best {
                    best = dist_col[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_row, k)) = pick else { break };
            if best >= sink_dist {
                break;
            }
            if is_row {
                done_row[k] = true;
                let row = &cost[k * m..(k + 1) * m];
                for j in 0..m {
                    if done_col[j] {
                        continue;
                    }
                    let rc = row[j] + pot_row[k] - pot_col[j];
                    let nd = best + rc.max(0.0);
                    if nd < dist_col[j] {
                        dist_col[j] = nd;
                        prev_col[j] = k;
                    }
                }
            } else {
                done_col[k] = true;
                if demand[k] > 0 {
                    let d = best + (pot_col[k] - pot_sink).max(0.0);
                    if d < sink_dist {
                        sink_dist = d;
                        sink_col = k;
                    }
                }
                for i in 0..n {
                    if done_row[i] || flow[i * m + k] == 0 {
                        continue;
                    }
                    let rc = -cost[i * m + k] + pot_col[k] - pot_row[i];
                    let nd = best + rc.max(0.0);
                    if nd < dist_row[i] {
                        dist_row[i] = nd;
                        prev_row[i] = k;
                    }
                }
            }
        }
        if sink_col == usize::MAX {
            return Err(Error::invalid("transport: no augmenting path".to_string()));
        }
        for i in 0..n {
            pot_row[i] += dist_row[i].min(sink_dist);
        }
        for j in 0..m {
            pot_col[j] += dist_col[j].min(sink_dist);
        }
        pot_sink += sink_dist;
        // bottleneck along sink_col <- row <- col <- ... <- source
        let mut amount = demand[sink_col];
        let mut j = sink_col;
        loop {
            let i = prev_col[j];
            let pj = prev_row[i];
            if pj == usize::MAX {
                amount = amount.min(supply[i]);
                break;
            }
            amount = amount.min(flow[i * m + pj]);
            j = pj;
        }
        let mut j = sink_col;
        demand[sink_col] -= amount;
        loop {
            let i = prev_col[j];
            flow[i * m + j] += amount;
            let pj = prev_row[i];
            if pj == usize::MAX {
                supply[i] -= amount;
                break;
            }
            flow[i * m + pj] -= amount;
            j = pj;
        }
        shipped += amount;
    }

    let scale = 1.0 / total as f64;
    let mut entries = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > 0 {
                let mass = f as f64 * scale;
                entries.push((i, j, mass));
                total_cost += mass * cost[i * m + j];
            }
        }
    }
    Ok(TransportPlan {
        entries,
        cost: total_cost,
    })
}
