//! Natural cubic splines through a sequence of knots in `R^d`.

use crate::error::{Error, Result};
use crate::nd::Tensor;

/// Piecewise cubic through `(t_k, y_k)` with zero second derivative at both
/// ends. Stores the knot values and the second derivatives at the knots.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineInterpolant {
    times: Vec<f64>,
    values: Tensor,
    second: Tensor,
}

/// Fit a natural cubic spline through the rows of `knots` (one row per time).
pub fn spline_fit(knots: &Tensor, times: &[f64]) -> Result<SplineInterpolant> {
    let k = times.len();
    if k < 2 {
        return Err(Error::invalid("a spline needs at least two knots"));
    }
    if knots.rows() != k {
        return Err(Error::shape(
            "spline_fit",
            format!("{} knot rows for {k} times", knots.rows()),
        ));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(format!(
            "spline times must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    let d = knots.cols();
    let mut second = Tensor::zeros(&[k, d]);
    if k > 2 {
        // Thomas algorithm on the interior system
        //   h_{i-1} M_{i-1} + 2 (h_{i-1} + h_i) M_i + h_i M_{i+1} = 6 (s_i - s_{i-1})
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let m = k - 2;
        let mut c_prime = vec![0.0; m];
        let mut rhs = vec![0.0; m * d];
        for i in 1..k - 1 {
            for c in 0..d {
                let s_prev = (knots.get(i, c) - knots.get(i - 1, c)) / h[i - 1];
                let s_next = (knots.get(i + 1, c) - knots.get(i, c)) / h[i];
                rhs[(i - 1) * d + c] = 6.0 * (s_next - s_prev);
            }
        }
        for r in 0..m {
            let i = r + 1;
            let sub = if r > 0 { h[i - 1] } else { 0.0 };
            let diag = 2.0 * (h[i - 1] + h[i]);
            let sup = if r + 1 < m { h[i] } else { 0.0 };
            let denom = diag - sub * if r > 0 { c_prime[r - 1] } else { 0.0 };
            c_prime[r] = sup / denom;
            for c in 0..d {
                let prev = if r > 0 { rhs[(r - 1) * d + c] } else { 0.0 };
                rhs[r * d + c] = (rhs[r * d + c] - sub * prev) / denom;
            }
        }
        for r in (0..m).rev() {
            for c in 0..d {
                let next = if r + 1 < m { rhs[(r + 1) * d + c] } else { 0.0 };
                rhs[r * d + c] -= c_prime[r] * next;
            }
        }
        for r in 0..m {
            second.row_mut(r + 1).copy_from_slice(&rhs[r * d..(r + 1) * d]);
        }
    }
    Ok(SplineInterpolant {
        times: times.to_vec(),
        values: knots.clone(),
        second,
    })
}

impl SplineInterpolant {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Second derivatives at the knots.
    pub fn knot_second_derivatives(&self) -> &Tensor {
        &self.second
    }

    fn segment(&self, t: f64) -> usize {
        let k = self.times.len();
        match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            p if p >= k => k - 2,
            p => p - 1,
        }
    }

    /// Returns value, first and second derivative at `t` (end segments extrapolate).
    fn eval_all(&self, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let a = (t1 - t) / h;
        let b = (t - t0) / h;
        let d = self.dim();
        let mut y = vec![0.0; d];
        let mut dy = vec![0.0; d];
        let mut ddy = vec![0.0; d];
        for c in 0..d {
            let (y0, y1) = (self.values.get(i, c), self.values.get(i + 1, c));
            let (m0, m1) = (self.second.get(i, c), self.second.get(i + 1, c));
            y[c] = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
            dy[c] = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0
                + (3.0 * b * b - 1.0) / 6.0 * h * m1;
            ddy[c] = a * m0 + b * m1;
        }
        (y, dy, ddy)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.eval_all(t).0
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        self.eval_all(t).1
    }

    pub fn second_derivative(&self, t: f64) -> Vec<f64> {
        self.eval_all(t).2
    }
}
