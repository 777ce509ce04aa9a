//! Exact linear assignment by shortest augmenting paths with potentials
//! (the O(n^2 m) Hungarian/Jonker-Volgenant family).

use crate::error::{Error, Result};

/// Largest side accepted by the exact solvers.
pub const MAX_EXACT_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `cols[i]` is the column matched to row `i`.
    pub cols: Vec<usize>,
    /// Sum of matched costs.
    pub cost: f64,
}

/// Minimise `sum_i cost[i][cols[i]]` over injective `cols` for a row-major
/// `rows x ncols` matrix with `rows <= ncols`.
///
/// Ties are resolved towards the lowest column index, so results are
/// reproducible.
pub fn solve(cost: &[f64], rows: usize, ncols: usize) -> Result<Assignment> {
    if cost.len() != rows * ncols {
        return Err(Error::shape(
            "assignment::solve",
            format!("{} costs for a {rows}x{ncols} matrix", cost.len()),
        ));
    }
    if rows > ncols {
        return Err(Error::invalid(format!(
            "assignment needs rows <= cols, got {rows}x{ncols}"
        )));
    }
    if ncols > MAX_EXACT_SIZE {
        return Err(Error::invalid(format!(
            "assignment size {ncols} exceeds the exact-solver cap {MAX_EXACT_SIZE}"
        )));
    }
    if let Some(bad) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("assignment cost {bad}")));
    }
    if rows == 0 {
        return Ok(Assignment {
            cols: Vec::new(),
            cost: 0.0,
        });
    }

    // 1-based potentials; column 0 is the virtual root of each search.
    let (n, m) = (rows, ncols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * m..i0 * m];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut cols = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            cols[owner[j] - 1] = j - 1;
        }
    }
    let total = cols
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * m + j])
        .sum();
    Ok(Assignment { cols, cost: total })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    /// Exhaustive oracle over all injections rows -> cols.
    pub(crate) fn brute_force(cost: &[f64], n: usize, m: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, m: usize, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, m, i + 1, used, acc + cost[i * m + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, m, 0, &mut vec![false; m], 0.0, &mut best);
        best
    }

    #[test]
    fn two_by_two() {
        let a = solve(&[1.0, 2.0, 2.0, 1.0], 2, 2).unwrap();
        assert_eq!(a.cols, vec![0, 1]);
        assert_eq!(a.cost, 2.0);
    }

    #[test]
    fn ties_prefer_lowest_index() {
        let a = solve(&[1.0; 9], 3, 3).unwrap();
        assert_eq!(a.cols, vec![0, 1, 2]);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let mut rng = crate::rng::seeded(5);
        for _ in 0..30 {
            let (n, m) = (3, 5);
            let c: Vec<f64> = (0..n * m).map(|_| rng.random::<f64>()).collect();
            let a = solve(&c, n, m).unwrap();
            assert!((a.cost - brute_force(&c, n, m)).abs() < 1e-12);
            let mut seen = a.cols.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(solve(&[1.0; 6], 3, 2).is_err());
        assert!(solve(&[1.0; 5], 2, 3).is_err());
        assert!(solve(&[f64::NAN, 0.0, 0.0, 0.0], 2, 2).is_err());
    }
}
