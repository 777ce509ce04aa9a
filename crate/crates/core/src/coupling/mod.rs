//! Couplings between empirical marginals.
//!
//! All ground costs here are squared Euclidean. Exact couplings come from the
//! assignment solver; entropic ones from Sinkhorn. Chained couplings compose
//! the OT permutations between consecutive marginals.

pub mod assignment;
pub mod sinkhorn;
pub mod transport;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::Tensor;

pub use assignment::{Assignment, MAX_EXACT_SIZE};
pub use sinkhorn::SinkhornPlan;

/// How end-marginal samples are paired during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    /// Product of the marginals.
    Independent,
    /// Exact minibatch optimal transport.
    #[default]
    Ot,
}

/// Samples from one marginal, `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    points: Tensor,
    time: Option<f64>,
}

impl Batch {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(Error::shape("Batch::new", format!("expected n x d, got {:?}", points.shape())));
        }
        if points.rows() == 0 {
            return Err(Error::EmptyBatch("Batch::new"));
        }
        if !points.is_finite() {
            return Err(Error::NonFinite("batch coordinates".into()));
        }
        Ok(Batch { points, time: None })
    }

    pub fn with_time(points: Tensor, t: f64) -> Result<Self> {
        let mut b = Batch::new(points)?;
        b.time = Some(t);
        Ok(b)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Batch::new(Tensor::from_rows(rows)?)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn into_points(self) -> Tensor {
        self.points
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            points: self.points.select_rows(idx),
            time: self.time,
        }
    }
}

/// `m` rows drawn uniformly with replacement.
pub fn sample_rows<R: Rng + ?Sized>(b: &Batch, m: usize, rng: &mut R) -> Batch {
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..b.len())).collect();
    b.select(&idx)
}

/// Row-major matrix of squared Euclidean distances.
pub fn sq_euclidean_costs(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "sq_euclidean_costs",
            format!("dimension {} vs {}", a.cols(), b.cols()),
        ));
    }
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for ra in a.iter_rows() {
        for rb in b.iter_rows() {
            out.push(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum());
        }
    }
    Ok(out)
}

/// Weighted index pairs `(i, j)` into two batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Pairing {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl Pairing {
    fn uniform(pairs: Vec<(usize, usize)>) -> Self {
        let w = 1.0 / pairs.len() as f64;
        let weights = vec![w; pairs.len()];
        Pairing { pairs, weights }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of squared distances over the pairs (unweighted).
    pub fn total_sq_cost(&self, b0: &Batch, b1: &Batch) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j)| {
                b0.points
                    .row(i)
                    .iter()
                    .zip(b1.points.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Materialise the paired points as two aligned `n x d` tensors.
    pub fn gather(&self, b0: &Batch, b1: &Batch) -> (Tensor, Tensor) {
        let i0: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        let i1: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        (b0.points.select_rows(&i0), b1.points.select_rows(&i1))
    }
}

/// `m` index pairs drawn uniformly and independently from `b0 x b1`.
pub fn independent_coupling<R: Rng + ?Sized>(
    b0: &Batch,
    b1: &Batch,
    m: usize,
    rng: &mut R,
) -> Result<Pairing> {
    if b0.is_empty() || b1.is_empty() {
        return Err(Error::EmptyBatch("independent_coupling"));
    }
    if m > b0.len() * b1.len() {
        return Err(Error::invalid(format!(
            "requested {m} pairs from {}x{} candidates",
            b0.len(),
            b1.len()
        )));
    }
    let pairs = (0..m)
        .map(|_| (rng.random_range(0..b0.len()), rng.random_range(0..b1.len())))
        .collect();
    Ok(Pairing::uniform(pairs))
}

/// Exact squared-Euclidean OT between equal-size batches: the optimal
/// permutation as pairs `(i, perm[i])`.
pub fn minibatch_ot(b0: &Batch, b1: &Batch) -> Result<Pairing> {
    Ok(Pairing::uniform(ot_permutation(b0, b1)?.cols.into_iter().enumerate().collect()))
}

pub(crate) fn ot_permutation(b0: &Batch, b1: &Batch) -> Result<Assignment> {
    if b0.len() != b1.len() {
        return Err(Error::invalid(format!(
            "minibatch OT needs equal batch sizes, got {} and {} (use sinkhorn instead)",
            b0.len(),
            b1.len()
        )));
    }
    let n = b0.len();
    let cost = sq_euclidean_costs(&b0.points, &b1.points)?;
    assignment::solve(&cost, n, n)
}

/// Entropic OT plan as a dense pairing (weights are plan masses).
pub fn sinkhorn_coupling(
    b0: &Batch,
    b1: &Batch,
    epsilon: f64,
    iters: usize,
) -> Result<(Pairing, SinkhornPlan)> {
    let (n, m) = (b0.len(), b1.len());
    let cost = sq_euclidean_costs(&b0.points, &b1.points)?;
    let plan = sinkhorn::sinkhorn(&cost, n, m, epsilon, iters, 1e-9)?;
    let mut pairs = Vec::with_capacity(n * m);
    let mut weights = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            pairs.push((i, j));
            weights.push(plan.plan.get(i, j));
        }
    }
    Ok((Pairing { pairs, weights }, plan))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainedTriple {
    pub i0: usize,
    pub it: usize,
    pub i1: usize,
    pub weight: f64,
}

/// One index per marginal along a chained coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainedTuple {
    pub indices: Vec<usize>,
    pub weight: f64,
}

/// Compose OT permutations through consecutive batches.
///
/// Batches of unequal size are first subsampled without replacement to the
/// smallest size; returned indices always refer to the original batches.
pub fn multi_marginal_chain<R: Rng + ?Sized>(
    batches: &[&Batch],
    rng: &mut R,
) -> Result<Vec<ChainedTuple>> {
    if batches.len() < 2 {
        return Err(Error::invalid("a chain needs at least two batches"));
    }
    if batches.iter().any(|b| b.is_empty()) {
        return Err(Error::EmptyBatch("multi_marginal_chain"));
    }
    let n = batches.iter().map(|b| b.len()).min().unwrap();
    // subsample indices per batch (identity when already of size n)
    let kept: Vec<Vec<usize>> = batches
        .iter()
        .map(|b| {
            if b.len() == n {
                (0..n).collect()
            } else {
                sample(rng, b.len(), n).into_vec()
            }
        })
        .collect();
    let subs: Vec<Batch> = batches
        .iter()
        .zip(&kept)
        .map(|(b, k)| b.select(k))
        .collect();
    // current[r] = position (within the subsample) reached by tuple r at the current marginal
    let mut current: Vec<usize> = (0..n).collect();
    let mut tuples: Vec<Vec<usize>> = (0..n).map(|r| vec![kept[0][r]]).collect();
    for k in 1..subs.len() {
        let perm = ot_permutation(&subs[k - 1], &subs[k])?.cols;
        for (r, tuple) in tuples.iter_mut().enumerate() {
            current[r] = perm[current[r]];
            tuple.push(kept[k][current[r]]);
        }
    }
    let w = 1.0 / n as f64;
    Ok(tuples
        .into_iter()
        .map(|indices| ChainedTuple { indices, weight: w })
        .collect())
}

/// Markov-chained OT coupling `q0 -> q_t -> q1`.
pub fn markov_chain_coupling<R: Rng + ?Sized>(
    b0: &Batch,
    bt: &Batch,
    b1: &Batch,
    rng: &mut R,
) -> Result<Vec<ChainedTriple>> {
    Ok(multi_marginal_chain(&[b0, bt, b1], rng)?
        .into_iter()
        .map(|t| ChainedTriple {
            i0: t.indices[0],
            it: t.indices[1],
            i1: t.indices[2],
            weight: t.weight,
        })
        .collect())
}

/// Outcome of projecting a reference cloud onto target atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `assignment[k]` is the atom given to reference point `k`.
    pub assignment: Vec<usize>,
    /// `sum_k |atom(k) - reference_k|^2`.
    pub cost: f64,
    /// The atoms in reference order, i.e. the constrained interpolant values.
    pub values: Tensor,
}

/// The cheapest way to send each reference point onto a distinct atom, i.e.
/// exact OT between the reference cloud and the atoms.
pub fn project_onto_atoms(reference: &Tensor, atoms: &Batch) -> Result<Projection> {
    if reference.rows() != atoms.len() {
        return Err(Error::invalid(format!(
            "projection needs equal counts, got {} reference points and {} atoms",
            reference.rows(),
            atoms.len()
        )));
    }
    let n = atoms.len();
    let cost = sq_euclidean_costs(reference, &atoms.points)?;
    let a = assignment::solve(&cost, n, n)?;
    let values = atoms.points.select_rows(&a.cols);
    Ok(Projection {
        assignment: a.cols,
        cost: a.cost,
        values,
    })
}

/// Discrete analogue of the constrained interpolant: among all `G(x0, x1, t)`
/// whose values are a permutation of the `q_t` atoms, the one closest to the
/// linear reference `(1-t) x0 + t x1` in summed squared distance.
///
/// `x0` and `x1` are aligned rows (already coupled pairs).
pub fn discrete_constrained_projection(
    x0: &Tensor,
    x1: &Tensor,
    t: f64,
    qt_atoms: &Batch,
) -> Result<Projection> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("projection time must be in (0, 1), got {t}")));
    }
    let reference = crate::interpolants::linear_ref_batch(x0, x1, t)?;
    project_onto_atoms(&reference, qt_atoms)
}
