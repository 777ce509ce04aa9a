//! Flow matching against a frozen interpolant, and ODE rollouts of the
//! learnt field.

mod rollout;

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{minibatch_ot, multi_marginal_chain, sample_rows, Batch, CouplingKind};
use crate::data::MarginalDataset;
use crate::error::{Error, Result};
use crate::interpolants::{
    polyline_eval, spline_fit, AliGenerator, LinearInterpolant, PairInterpolant, SplineInterpolant, TimeEmbedding,
};
use crate::nd::checkpoint::{Checkpoint, Entry};
use crate::nd::{Activation, Adam, Mlp, Tape, Tensor, Var};
use crate::rng::stream;

pub use rollout::{push_forward, rollout, rollout_at_times, rollout_between, Pushed, RolloutConfig, Solver};

const INIT_STREAM: u64 = u64::MAX;

/// Neural velocity `u(x, t)` on `x ⊕ e(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    net: Mlp,
    embedding: TimeEmbedding,
}

impl VectorField {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        VectorField::with_embedding(dim, hidden, activation, TimeEmbedding::RAW, rng)
    }

    pub fn with_embedding<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        embedding: TimeEmbedding,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![dim + embedding.width()];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        VectorField::from_parts(Mlp::new(&widths, activation, None, rng)?, embedding)
    }

    /// Wrap a network on the raw time input.
    pub fn from_net(net: Mlp) -> Result<Self> {
        VectorField::from_parts(net, TimeEmbedding::RAW)
    }

    pub fn from_parts(net: Mlp, embedding: TimeEmbedding) -> Result<Self> {
        if net.input_width() != net.output_width() + embedding.width() {
            return Err(Error::shape(
                "VectorField",
                format!(
                    "network maps {} -> {}, expected d+{} -> d",
                    net.input_width(),
                    net.output_width(),
                    embedding.width()
                ),
            ));
        }
        Ok(VectorField { net, embedding })
    }

    pub fn save(&self, ck: &mut Checkpoint, key: &str) {
        ck.insert(key, Entry::Mlp(self.net.clone()));
        ck.insert(format!("{key}.time_frequencies"), Entry::U64(self.embedding.frequencies as u64));
    }

    pub fn load(ck: &Checkpoint, key: &str) -> Result<Self> {
        let frequencies = ck.u64(&format!("{key}.time_frequencies"))?;
        VectorField::from_parts(ck.mlp(key)?.clone(), TimeEmbedding::new(frequencies as usize))
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn into_net(self) -> Mlp {
        self.net
    }

    pub fn dim(&self) -> usize {
        self.net.output_width()
    }

    fn input(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        if x.cols() != self.dim() || x.rows() != t.len() {
            return Err(Error::shape(
                "VectorField::eval",
                format!("{}x{} points with {} times for d = {}", x.rows(), x.cols(), t.len(), self.dim()),
            ));
        }
        Tensor::concat_cols(&[x, &self.embedding.features(t)])
    }

    /// Velocities with one time per row.
    pub fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        self.net.eval(&self.input(x, t)?)
    }

    pub fn eval_at(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self.eval(x, &vec![t; x.rows()])
    }

    fn record(&self, tape: &mut Tape, params: &[Var], x: &Tensor, t: &[f64]) -> Result<Var> {
        let input = tape.constant(self.input(x, t)?);
        self.net.forward_on(tape, input, params)
    }
}

/// Regression targets: points on the conditional paths, their times and
/// velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTargets {
    pub x: Tensor,
    pub t: Vec<f64>,
    pub u: Tensor,
}

impl FlowTargets {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Per-row squared residuals `|u(x_t, t) - u_t|^2`.
pub fn cfm_residuals(field: &VectorField, targets: &FlowTargets) -> Result<Vec<f64>> {
    let v = field.eval(&targets.x, &targets.t)?;
    let diff = v.zip_map(&targets.u, |a, b| a - b)?;
    Ok(diff.row_sq_norms())
}

/// Mean squared residual.
pub fn cfm_loss_on(field: &VectorField, targets: &FlowTargets) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch("cfm_loss"));
    }
    let r = cfm_residuals(field, targets)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Targets for coupled pairs with `t ~ U[0, 1]` per row.
pub fn pair_targets<R: Rng + ?Sized>(
    interpolant: &dyn PairInterpolant,
    x0: &Tensor,
    x1: &Tensor,
    rng: &mut R,
) -> Result<FlowTargets> {
    let t: Vec<f64> = (0..x0.rows()).map(|_| rng.random::<f64>()).collect();
    let (x, u) = interpolant.position_and_velocity(x0, x1, &t)?;
    Ok(FlowTargets { x, t, u })
}

/// Flow-matching loss of `field` against `interpolant` on the pairs `(x0[r], x1[r])`.
pub fn cfm_loss<R: Rng + ?Sized>(
    field: &VectorField,
    interpolant: &dyn PairInterpolant,
    x0: &Tensor,
    x1: &Tensor,
    rng: &mut R,
) -> Result<f64> {
    cfm_loss_on(field, &pair_targets(interpolant, x0, x1, rng)?)
}

/// Loss value and gradients with respect to the field parameters.
pub fn cfm_loss_and_grads(field: &VectorField, targets: &FlowTargets) -> Result<(f64, Vec<Tensor>)> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch("cfm_loss"));
    }
    let mut tape = Tape::new();
    let params = field.net.leaves(&mut tape);
    let v = field.record(&mut tape, &params, &targets.x, &targets.t)?;
    let u = tape.constant(targets.u.clone());
    let r = tape.sub(v, u)?;
    let sq = tape.square(r);
    let per_row = tape.sum_cols(sq);
    let loss = tape.mean(per_row);
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    Ok((value, params.iter().map(|&p| grads.get_or_zeros(p, tape.value(p))).collect()))
}

/// Which conditional paths the field regresses onto.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    /// Straight lines between the first and last marginal.
    #[default]
    Linear,
    /// Trained adversarial interpolant between the first and last marginal.
    Ali,
    /// Polylines through chains of samples from every marginal.
    Piecewise,
    /// Natural cubic splines through the same chains.
    Spline,
}

/// Source of conditional paths for training.
#[derive(Clone, Debug)]
pub enum ConditionalPath {
    Linear,
    Ali(AliGenerator),
    Piecewise,
    Spline,
}

impl ConditionalPath {
    pub fn kind(&self) -> PathKind {
        match self {
            ConditionalPath::Linear => PathKind::Linear,
            ConditionalPath::Ali(_) => PathKind::Ali,
            ConditionalPath::Piecewise => PathKind::Piecewise,
            ConditionalPath::Spline => PathKind::Spline,
        }
    }

    fn is_chain(&self) -> bool {
        matches!(self, ConditionalPath::Piecewise | ConditionalPath::Spline)
    }
}

/// Chains of samples through all marginals, with their fitted curves.
#[derive(Clone, Debug)]
struct ChainPool {
    knots: Vec<Tensor>,
    splines: Vec<SplineInterpolant>,
}

impl ChainPool {
    fn build<R: Rng + ?Sized>(data: &MarginalDataset, m: usize, spline: bool, rng: &mut R) -> Result<Self> {
        let subs: Vec<Batch> = data
            .batches()
            .iter()
            .map(|b| if b.len() <= m { b.clone() } else { b.select(&sample(rng, b.len(), m).into_vec()) })
            .collect();
        let refs: Vec<&Batch> = subs.iter().collect();
        let tuples = multi_marginal_chain(&refs, rng)?;
        let mut knots = Vec::with_capacity(tuples.len());
        for tuple in &tuples {
            let rows: Vec<&[f64]> = tuple.indices.iter().zip(&subs).map(|(&i, b)| b.points().row(i)).collect();
            knots.push(Tensor::from_rows(&rows)?);
        }
        let splines = if spline {
            knots.iter().map(|k| spline_fit(k, data.times())).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ChainPool { knots, splines })
    }

    fn targets<R: Rng + ?Sized>(&self, times: &[f64], m: usize, dim: usize, rng: &mut R) -> Result<FlowTargets> {
        let mut x = Tensor::zeros(&[m, dim]);
        let mut u = Tensor::zeros(&[m, dim]);
        let mut t = Vec::with_capacity(m);
        for r in 0..m {
            let c = rng.random_range(0..self.knots.len());
            let s = rng.random::<f64>();
            let (p, v) = if self.splines.is_empty() {
                polyline_eval(times, &self.knots[c], s)?
            } else {
                (self.splines[c].eval(s), self.splines[c].derivative(s))
            };
            x.row_mut(r).copy_from_slice(&p);
            u.row_mut(r).copy_from_slice(&v);
            t.push(s);
        }
        Ok(FlowTargets { x, t, u })
    }
}

/// Draws minibatches of flow-matching targets from a dataset.
#[derive(Clone, Debug)]
pub struct TargetSampler {
    path: ConditionalPath,
    coupling: CouplingKind,
    batch_size: usize,
    /// Reused when every marginal fits in one batch, since chaining is then
    /// deterministic.
    fixed_pool: Option<ChainPool>,
}

impl TargetSampler {
    pub fn new(path: ConditionalPath, coupling: CouplingKind, batch_size: usize, data: &MarginalDataset) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if data.len() < 2 {
            return Err(Error::invalid("flow matching needs at least two marginals"));
        }
        if let ConditionalPath::Ali(g) = &path {
            if g.dim() != data.dim() {
                return Err(Error::shape("TargetSampler", format!("interpolant dim {} vs data {}", g.dim(), data.dim())));
            }
        }
        let sizes: Vec<usize> = data.batches().iter().map(Batch::len).collect();
        let fixed = path.is_chain() && sizes.iter().all(|&n| n == sizes[0] && n <= batch_size);
        let fixed_pool = if fixed {
            // rng unused: no subsampling happens for equal sizes within the batch
            let mut rng = stream(0, 0);
            Some(ChainPool::build(data, batch_size, matches!(path, ConditionalPath::Spline), &mut rng)?)
        } else {
            None
        };
        Ok(TargetSampler { path, coupling, batch_size, fixed_pool })
    }

    pub fn path(&self) -> &ConditionalPath {
        &self.path
    }

    pub fn sample<R: Rng + ?Sized>(&self, data: &MarginalDataset, rng: &mut R) -> Result<FlowTargets> {
        let m = self.batch_size;
        let d = data.dim();
        match &self.path {
            ConditionalPath::Piecewise | ConditionalPath::Spline => match &self.fixed_pool {
                Some(pool) => pool.targets(data.times(), m, d, rng),
                None => {
                    let spline = matches!(self.path, ConditionalPath::Spline);
                    ChainPool::build(data, m, spline, rng)?.targets(data.times(), m, d, rng)
                }
            },
            ConditionalPath::Linear | ConditionalPath::Ali(_) => {
                let b0 = sample_rows(data.batch(0), m, rng);
                let b1 = sample_rows(data.batch(data.len() - 1), m, rng);
                let (x0, x1) = match self.coupling {
                    CouplingKind::Independent => (b0.into_points(), b1.into_points()),
                    CouplingKind::Ot => minibatch_ot(&b0, &b1)?.gather(&b0, &b1),
                };
                match &self.path {
                    ConditionalPath::Ali(g) => pair_targets(g, &x0, &x1, rng),
                    _ => pair_targets(&LinearInterpolant { dim: d }, &x0, &x1, rng),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfmConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_embedding: TimeEmbedding,
    pub coupling: CouplingKind,
    pub seed: u64,
}

impl Default for CfmConfig {
    fn default() -> Self {
        CfmConfig {
            iterations: 20_000,
            batch_size: 128,
            lr: 1e-3,
            hidden: vec![64, 64],
            activation: Activation::Elu,
            time_embedding: TimeEmbedding::RAW,
            coupling: CouplingKind::Ot,
            seed: 0,
        }
    }
}

impl CfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

pub const LOG_HEADER: &str = "iter,loss";

/// Field, optimiser and iteration counter.
#[derive(Clone, Debug)]
pub struct CfmTrainer {
    pub field: VectorField,
    opt: Adam,
    cfg: CfmConfig,
    iteration: u64,
}

impl CfmTrainer {
    pub fn new(cfg: CfmConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, INIT_STREAM);
        let field = VectorField::with_embedding(dim, &cfg.hidden, cfg.activation, cfg.time_embedding, &mut rng)?;
        let opt = Adam::for_mlp(field.net(), cfg.lr);
        Ok(CfmTrainer { field, opt, cfg, iteration: 0 })
    }

    pub fn config(&self) -> &CfmConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Targets the next step would use.
    pub fn targets_for(&self, sampler: &TargetSampler, data: &MarginalDataset, iter: u64) -> Result<FlowTargets> {
        sampler.sample(data, &mut stream(self.cfg.seed, iter))
    }

    /// One Adam step; returns the loss before the update.
    pub fn step(&mut self, sampler: &TargetSampler, data: &MarginalDataset) -> Result<f64> {
        if data.dim() != self.field.dim() {
            return Err(Error::shape("CfmTrainer", format!("data dim {} vs field {}", data.dim(), self.field.dim())));
        }
        let iter = self.iteration;
        let targets = self.targets_for(sampler, data, iter)?;
        let (loss, grads) = cfm_loss_and_grads(&self.field, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: iter, reason: "flow-matching loss is not finite".into() });
        }
        self.opt.step_mlp(self.field.net_mut(), &grads).map_err(|e| match e {
            Error::NonFinite(msg) => Error::Divergence { iteration: iter, reason: format!("non-finite {msg}") },
            other => other,
        })?;
        self.iteration += 1;
        Ok(loss)
    }

    /// Run until `cfg.iterations`, logging `iter,loss` rows.
    pub fn train<W: Write>(&mut self, sampler: &TargetSampler, data: &MarginalDataset, mut log: Option<W>) -> Result<Vec<f64>> {
        if let Some(w) = log.as_mut() {
            if self.iteration == 0 {
                writeln!(w, "{LOG_HEADER}")?;
            }
        }
        let mut losses = Vec::new();
        while self.iteration < self.cfg.iterations {
            let it = self.iteration;
            let loss = self.step(sampler, data)?;
            if let Some(w) = log.as_mut() {
                writeln!(w, "{it},{loss:.16e}")?;
            }
            losses.push(loss);
        }
        if let Some(w) = log.as_mut() {
            w.flush()?;
        }
        Ok(losses)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.field.save(&mut ck, "field");
        self.opt.save(&mut ck, "opt.field");
        ck.insert("iteration", Entry::U64(self.iteration));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: CfmConfig) -> Result<Self> {
        cfg.validate()?;
        let field = VectorField::load(ck, "field")?;
        if field.embedding() != cfg.time_embedding {
            return Err(Error::invalid("checkpoint time embedding differs from the configuration"));
        }
        Ok(CfmTrainer {
            field,
            opt: Adam::load(ck, "opt.field")?,
            cfg,
            iteration: ck.u64("iteration")?,
        })
    }
}

/// Train a fresh field on `path` to completion.
pub fn train_cfm<W: Write>(
    path: ConditionalPath,
    data: &MarginalDataset,
    cfg: CfmConfig,
    log: Option<W>,
) -> Result<VectorField> {
    let sampler = TargetSampler::new(path, cfg.coupling, cfg.batch_size, data)?;
    let mut trainer = CfmTrainer::new(cfg, data.dim())?;
    trainer.train(&sampler, data, log)?;
    Ok(trainer.field)
}
