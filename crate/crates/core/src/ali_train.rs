//! Adversarial training of the interpolant: a discriminator tells generated
//! intermediate points from observed ones, while a regulariser keeps the
//! generator close to a reference path.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{markov_chain_coupling, minibatch_ot, sample_rows, Batch, CouplingKind};
use crate::data::MarginalDataset;
use crate::error::{Error, Result};
use crate::interpolants::{AliGenerator, TimeEmbedding};
use crate::nd::checkpoint::{Checkpoint, Entry};
use crate::nd::{Activation, Adam, Mlp, Tape, Tensor, Var};
use crate::regularizers::{
    gather_triples, record_linear_from_gated, record_piecewise, record_second_derivative, LandMetricSpec,
    RegNorm, RegulariserKind, RegulariserSpec,
};
use crate::rng::{stream, SeededRng};

/// Discriminator probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

const INIT_STREAM: u64 = u64::MAX;
const LAND_STREAM: u64 = u64::MAX - 1;
const CALIBRATION_STREAM: u64 = u64::MAX - 2;
const PRETRAIN_STREAM_BASE: u64 = 1 << 62;

/// Logit network on `x ⊕ e(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    net: Mlp,
    embedding: TimeEmbedding,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        Discriminator::with_embedding(dim, hidden, activation, TimeEmbedding::RAW, rng)
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
        widths.push(1);
        Discriminator::from_parts(Mlp::new(&widths, activation, None, rng)?, embedding)
    }

    /// Wrap a network on the raw time input.
    pub fn from_net(net: Mlp) -> Result<Self> {
        Discriminator::from_parts(net, TimeEmbedding::RAW)
    }

    pub fn from_parts(net: Mlp, embedding: TimeEmbedding) -> Result<Self> {
        if net.output_width() != 1 || net.input_width() < 1 + embedding.width() {
            return Err(Error::shape(
                "Discriminator",
                format!(
                    "network maps {} -> {}, expected d+{} -> 1",
                    net.input_width(),
                    net.output_width(),
                    embedding.width()
                ),
            ));
        }
        Ok(Discriminator { net, embedding })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn dim(&self) -> usize {
        self.net.input_width() - self.embedding.width()
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn logits(&self, x: &Tensor, t: f64) -> Result<Vec<f64>> {
        self.logits_at(x, &vec![t; x.rows()])
    }

    /// Logits with one time per row.
    pub fn logits_at(&self, x: &Tensor, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != x.rows() {
            return Err(Error::shape("Discriminator::logits", format!("{} rows, {} times", x.rows(), t.len())));
        }
        let input = Tensor::concat_cols(&[x, &self.embedding.features(t)])?;
        Ok(self.net.eval(&input)?.into_data())
    }

    /// Clamped probabilities of being real.
    pub fn probabilities(&self, x: &Tensor, t: f64) -> Result<Vec<f64>> {
        Ok(self
            .logits(x, t)?
            .into_iter()
            .map(|z| crate::nd::sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect())
    }

    fn record(&self, tape: &mut Tape, params: Option<&[Var]>, x: Var, t: &[f64]) -> Result<Var> {
        let tc = tape.constant(self.embedding.features(t));
        let input = tape.concat_cols(&[x, tc])?;
        match params {
            Some(p) => self.net.forward_on(tape, input, p),
            None => self.net.forward_frozen(tape, input),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanVariant {
    /// Generator minimises `-log D(G)`.
    #[default]
    NonSaturating,
    /// Generator minimises `log(1 - D(G))`.
    Saturating,
}

/// `l_gan = mean log(1 - D(fake)) + mean log D(real)`; the discriminator
/// minimises `-l_gan`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    pub l_gan: f64,
    pub disc: f64,
    pub gen: f64,
}

fn clamped_log_sigmoid(z: f64) -> f64 {
    crate::nd::sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// GAN losses from raw discriminator logits.
pub fn gan_losses_from_logits(real: &[f64], fake: &[f64], variant: GanVariant) -> Result<GanLosses> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptyBatch("gan_losses"));
    }
    if real.iter().chain(fake).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discriminator logits".into()));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&z| f(z)).sum::<f64>() / v.len() as f64;
    let log_real = mean(real, &clamped_log_sigmoid);
    let log_one_minus_fake = mean(fake, &|z| clamped_log_sigmoid(-z));
    let l_gan = log_one_minus_fake + log_real;
    let gen = match variant {
        GanVariant::NonSaturating => -mean(fake, &clamped_log_sigmoid),
        GanVariant::Saturating => log_one_minus_fake,
    };
    Ok(GanLosses { l_gan, disc: -l_gan, gen })
}

pub fn gan_losses(
    disc: &Discriminator,
    gen_points: &Tensor,
    real_points: &Tensor,
    t_i: f64,
    variant: GanVariant,
) -> Result<GanLosses> {
    if gen_points.rows() == 0 || real_points.rows() == 0 {
        return Err(Error::EmptyBatch("gan_losses"));
    }
    if !gen_points.is_finite() {
        return Err(Error::NonFinite("generator output".into()));
    }
    gan_losses_from_logits(&disc.logits(real_points, t_i)?, &disc.logits(gen_points, t_i)?, variant)
}

/// Value of `l_gan + lambda * reg_linear` and its gradients with respect to
/// every generator and discriminator parameter, without time noise.
#[derive(Clone, Debug)]
pub struct ObjectiveGrads {
    pub value: f64,
    pub gen: Vec<Tensor>,
    pub disc: Vec<Tensor>,
}

pub fn objective_grads(
    gen: &AliGenerator,
    disc: &Discriminator,
    x0: &Tensor,
    x1: &Tensor,
    real: &Tensor,
    t: f64,
    lambda: f64,
) -> Result<ObjectiveGrads> {
    let tg = vec![t; x0.rows()];
    let tr = vec![t; real.rows()];
    let mut tape = Tape::new();
    let gp = gen.leaves(&mut tape);
    let dp = disc.net.leaves(&mut tape);
    let rec = gen.record(&mut tape, Some(&gp), x0, x1, &tg, &tg)?;
    let lf = disc.record(&mut tape, Some(&dp), rec.output, &tg)?;
    let xr = tape.constant(real.clone());
    let lr = disc.record(&mut tape, Some(&dp), xr, &tr)?;
    let a = record_mean_log_prob(&mut tape, lf, -1.0);
    let b = record_mean_log_prob(&mut tape, lr, 1.0);
    let gan = tape.add(a, b)?;
    let reg = record_linear_from_gated(&mut tape, rec.gated);
    let reg = tape.scale(reg, lambda);
    let total = tape.add(gan, reg)?;
    let value = tape.value(total).item()?;
    let grads = tape.backward(total)?;
    let collect = |ps: &[Var]| ps.iter().map(|&p| grads.get_or_zeros(p, tape.value(p))).collect();
    Ok(ObjectiveGrads { value, gen: collect(&gp), disc: collect(&dp) })
}

/// `mean log(clamp(sigmoid(sign * z)))` on the tape.
fn record_mean_log_prob(tape: &mut Tape, logits: Var, sign: f64) -> Var {
    let z = if sign < 0.0 { tape.scale(logits, -1.0) } else { logits };
    let p = tape.activate(z, Activation::Sigmoid);
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let l = tape.log(p);
    tape.mean(l)
}

/// How intermediate marginals are drawn for a minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSampling {
    /// One marginal per minibatch.
    #[default]
    PerBatch,
    /// An independent marginal for every row.
    PerSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AliTrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub time_noise_std: f64,
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub activation: Activation,
    pub gan: GanVariant,
    pub time_sampling: TimeSampling,
    /// Discriminator updates per generator update, each on a fresh batch.
    pub disc_steps: usize,
    /// Time features for both networks.
    pub time_embedding: TimeEmbedding,
    pub coupling: CouplingKind,
    pub regulariser: RegulariserSpec,
    pub seed: u64,
    /// Abort when any generated coordinate exceeds this magnitude.
    pub divergence_threshold: f64,
}

impl Default for AliTrainConfig {
    fn default() -> Self {
        AliTrainConfig {
            iterations: 20_000,
            batch_size: 128,
            lr_gen: 1e-3,
            lr_disc: 1e-3,
            time_noise_std: 1e-3,
            pretrain_steps: 0,
            pretrain_lr: 1e-3,
            gen_hidden: vec![128, 128],
            disc_hidden: vec![128, 128],
            activation: Activation::Elu,
            gan: GanVariant::NonSaturating,
            time_sampling: TimeSampling::PerBatch,
            disc_steps: 1,
            time_embedding: TimeEmbedding::RAW,
            coupling: CouplingKind::Ot,
            regulariser: RegulariserSpec::default(),
            seed: 0,
            divergence_threshold: 1e6,
        }
    }
}

impl AliTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.disc_steps == 0 {
            return Err(Error::invalid("disc_steps must be >= 1"));
        }
        for (name, v) in [("lr_gen", self.lr_gen), ("lr_disc", self.lr_disc), ("pretrain_lr", self.pretrain_lr)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.time_noise_std >= 0.0) {
            return Err(Error::invalid("time_noise_std must be >= 0"));
        }
        if self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.time_sampling == TimeSampling::PerSample && self.regulariser.kind == RegulariserKind::PiecewiseRef {
            return Err(Error::invalid("the piecewise reference needs one intermediate time per batch"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::invalid("divergence_threshold must be > 0"));
        }
        self.regulariser.validate()
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AliStepRecord {
    pub iter: u64,
    /// Index of the intermediate marginal; `None` when drawn per sample.
    pub index: Option<usize>,
    /// Intermediate time (the batch mean when drawn per sample).
    pub t_i: f64,
    pub l_gan: f64,
    pub loss_disc: f64,
    pub loss_gen: f64,
    /// Unweighted regulariser value.
    pub loss_reg: f64,
}

pub const LOG_HEADER: &str = "iter,t_i,loss_disc,loss_gen,loss_reg";

impl AliStepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.iter, self.t_i, self.loss_disc, self.loss_gen, self.loss_reg
        )
    }
}

/// A minibatch for one training step.
struct AliBatch {
    index: Option<usize>,
    t_i: f64,
    /// Intermediate time of every row.
    t: Vec<f64>,
    /// Coupled end points.
    x0: Tensor,
    x1: Tensor,
    /// Real samples, row `r` at time `t[r]`.
    xt: Tensor,
    /// Network time inputs (noisy).
    t_input: Vec<f64>,
    /// Unpaired end batches, kept for the chained coupling.
    b0: Batch,
    b1: Batch,
}

/// Generator, discriminator and their optimisers.
#[derive(Clone, Debug)]
pub struct AliTrainer {
    pub gen: AliGenerator,
    pub disc: Discriminator,
    gen_opt: Adam,
    disc_opt: Adam,
    pretrain_opt: Adam,
    cfg: AliTrainConfig,
    iteration: u64,
    pretrained: u64,
    lambda: f64,
    land: Option<LandMetricSpec>,
}

impl AliTrainer {
    pub fn new(cfg: AliTrainConfig, data: &MarginalDataset) -> Result<Self> {
        cfg.validate()?;
        let d = data.dim();
        let mut rng = stream(cfg.seed, INIT_STREAM);
        let emb = cfg.time_embedding;
        let gen = AliGenerator::with_embedding(d, &cfg.gen_hidden, cfg.activation, cfg.time_noise_std, emb, &mut rng)?;
        let disc = Discriminator::with_embedding(d, &cfg.disc_hidden, cfg.activation, emb, &mut rng)?;
        let gen_opt = Adam::for_mlp(gen.net(), cfg.lr_gen);
        let disc_opt = Adam::for_mlp(disc.net(), cfg.lr_disc);
        let pretrain_opt = Adam::for_mlp(gen.net(), cfg.pretrain_lr);
        let lambda = cfg.regulariser.lambda;
        let mut t = AliTrainer {
            gen,
            disc,
            gen_opt,
            disc_opt,
            pretrain_opt,
            cfg,
            iteration: 0,
            pretrained: 0,
            lambda,
            land: None,
        };
        t.land = t.build_land(data)?;
        Ok(t)
    }

    fn build_land(&self, data: &MarginalDataset) -> Result<Option<LandMetricSpec>> {
        if self.cfg.regulariser.norm != RegNorm::Land {
            return Ok(None);
        }
        let mut rng = stream(self.cfg.seed, LAND_STREAM);
        let parts: Vec<(f64, &Batch)> = data.iter().collect();
        Ok(Some(LandMetricSpec::from_batches(&parts, &self.cfg.regulariser.land, &mut rng)?))
    }

    pub fn config(&self) -> &AliTrainConfig {
        &self.cfg
    }

    /// Adversarial iterations completed so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn pretrain_steps_done(&self) -> u64 {
        self.pretrained
    }

    /// Regulariser weight in effect (after any calibration).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check_data(&self, data: &MarginalDataset) -> Result<()> {
        if data.len() < 3 {
            return Err(Error::invalid(format!(
                "adversarial training needs at least one intermediate marginal, got {} marginals",
                data.len()
            )));
        }
        if data.dim() != self.gen.dim() {
            return Err(Error::shape(
                "AliTrainer",
                format!("data dimension {} vs generator {}", data.dim(), self.gen.dim()),
            ));
        }
        Ok(())
    }

    fn draw_batch(&self, data: &MarginalDataset, rng: &mut SeededRng) -> Result<AliBatch> {
        let k = data.len();
        let m = self.cfg.batch_size;
        let (index, t, bt) = match self.cfg.time_sampling {
            TimeSampling::PerBatch => {
                let i = rng.random_range(1..k - 1);
                (Some(i), vec![data.times()[i]; m], sample_rows(data.batch(i), m, rng).into_points())
            }
            TimeSampling::PerSample => {
                let mut xt = Tensor::zeros(&[m, data.dim()]);
                let mut t = Vec::with_capacity(m);
                for r in 0..m {
                    let i = rng.random_range(1..k - 1);
                    let b = data.batch(i);
                    xt.row_mut(r).copy_from_slice(b.points().row(rng.random_range(0..b.len())));
                    t.push(data.times()[i]);
                }
                (None, t, xt)
            }
        };
        let t_i = t.iter().sum::<f64>() / m as f64;
        let b0 = sample_rows(data.batch(0), m, rng);
        let b1 = sample_rows(data.batch(k - 1), m, rng);
        let (x0, x1) = match self.cfg.coupling {
            CouplingKind::Independent => (b0.points().clone(), b1.points().clone()),
            CouplingKind::Ot => minibatch_ot(&b0, &b1)?.gather(&b0, &b1),
        };
        let t_input = self.gen.noisy_times(&t, rng);
        Ok(AliBatch {
            index,
            t_i,
            x0,
            x1,
            xt: bt,
            t,
            t_input,
            b0,
            b1,
        })
    }

    /// Active regulariser on the tape (unweighted).
    fn record_reg(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &AliBatch,
        gated: Var,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let spec = &self.cfg.regulariser;
        match spec.kind {
            RegulariserKind::LinearRef => Ok(record_linear_from_gated(tape, gated)),
            RegulariserKind::PiecewiseRef => {
                let bt = Batch::new(batch.xt.clone())?;
                let t_i = batch.t[0];
                let triples = markov_chain_coupling(&batch.b0, &bt, &batch.b1, rng)?;
                let (a, m, b) = gather_triples(&batch.b0, &bt, &batch.b1, &triples);
                record_piecewise(tape, &self.gen, Some(params), &a, &m, &b, t_i, spec.piecewise_form, rng)
            }
            RegulariserKind::SecondDerivative => record_second_derivative(
                tape,
                &self.gen,
                Some(params),
                &batch.x0,
                &batch.x1,
                spec,
                self.land.as_ref(),
                rng,
            ),
        }
    }

    fn check_output(&self, g: &Tensor, iteration: u64) -> Result<()> {
        let max = g.data().iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
        if !(max <= self.cfg.divergence_threshold) {
            return Err(Error::Divergence {
                iteration,
                reason: format!("generator output magnitude {max} exceeds {}", self.cfg.divergence_threshold),
            });
        }
        Ok(())
    }

    fn diverged(iteration: u64, what: &str, e: Error) -> Error {
        match e {
            Error::NonFinite(msg) => Error::Divergence {
                iteration,
                reason: format!("{what}: non-finite {msg}"),
            },
            other => other,
        }
    }

    /// One discriminator update on `batch`; returns (disc loss, L_GAN).
    fn disc_step(&mut self, batch: &AliBatch, iter: u64) -> Result<(f64, f64)> {
        let n = batch.x0.rows();
        let t_gate = &batch.t;

        // minimise -(mean log(1 - D(G)) + mean log D(real))
        let fake = {
            let f = self.gen.correction(&batch.x0, &batch.x1, &batch.t_input)?;
            let mut g = crate::interpolants::linear_ref_rows(&batch.x0, &batch.x1, t_gate)?;
            for r in 0..n {
                let gate = t_gate[r] * (1.0 - t_gate[r]);
                for (o, c) in g.row_mut(r).iter_mut().zip(f.row(r)) {
                    *o += c * gate;
                }
            }
            g
        };
        self.check_output(&fake, iter)?;
        let mut tape = Tape::new();
        let params = self.disc.net.leaves(&mut tape);
        let xf = tape.constant(fake.clone());
        let xr = tape.constant(batch.xt.clone());
        let lf = self.disc.record(&mut tape, Some(&params), xf, t_gate)?;
        let lr = self.disc.record(&mut tape, Some(&params), xr, t_gate)?;
        let a = record_mean_log_prob(&mut tape, lf, -1.0);
        let b = record_mean_log_prob(&mut tape, lr, 1.0);
        let l = tape.add(a, b)?;
        let loss = tape.scale(l, -1.0);
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: iter, reason: "discriminator loss is not finite".into() });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = params.iter().map(|&p| grads.get_or_zeros(p, tape.value(p))).collect();
        self.disc_opt
            .step_mlp(&mut self.disc.net, &g)
            .map_err(|e| Self::diverged(iter, "discriminator gradient", e))?;
        Ok((value, -value))
    }

    /// `disc_steps` discriminator updates followed by one generator update.
    pub fn step(&mut self, data: &MarginalDataset) -> Result<AliStepRecord> {
        self.check_data(data)?;
        let iter = self.iteration;
        let mut rng = stream(self.cfg.seed, iter);
        let mut batch = self.draw_batch(data, &mut rng)?;
        let mut disc_out = self.disc_step(&batch, iter)?;
        for _ in 1..self.cfg.disc_steps {
            batch = self.draw_batch(data, &mut rng)?;
            disc_out = self.disc_step(&batch, iter)?;
        }
        let (loss_disc, l_gan) = disc_out;
        let t_gate = &batch.t;

        // generator: GAN term against the updated discriminator plus lambda * reg
        let (loss_gen, loss_reg) = {
            let mut tape = Tape::new();
            let params = self.gen.leaves(&mut tape);
            let rec = self.gen.record(&mut tape, Some(&params), &batch.x0, &batch.x1, t_gate, &batch.t_input)?;
            let logits = self.disc.record(&mut tape, None, rec.output, t_gate)?;
            let gan = match self.cfg.gan {
                GanVariant::NonSaturating => {
                    let l = record_mean_log_prob(&mut tape, logits, 1.0);
                    tape.scale(l, -1.0)
                }
                GanVariant::Saturating => record_mean_log_prob(&mut tape, logits, -1.0),
            };
            let gan_value = tape.value(gan).item()?;
            let use_reg = self.lambda > 0.0 || self.cfg.regulariser.kind == RegulariserKind::LinearRef;
            let (total, reg_value) = if use_reg {
                let reg = self.record_reg(&mut tape, &params, &batch, rec.gated, &mut rng)?;
                let reg_value = tape.value(reg).item()?;
                let weighted = tape.scale(reg, self.lambda);
                (tape.add(gan, weighted)?, reg_value)
            } else {
                (gan, 0.0)
            };
            if !gan_value.is_finite() || !reg_value.is_finite() {
                return Err(Error::Divergence { iteration: iter, reason: "generator loss is not finite".into() });
            }
            let grads = tape.backward(total)?;
            let g: Vec<Tensor> = params.iter().map(|&p| grads.get_or_zeros(p, tape.value(p))).collect();
            self.gen_opt
                .step_mlp(self.gen.net_mut(), &g)
                .map_err(|e| Self::diverged(iter, "generator gradient", e))?;
            (gan_value, reg_value)
        };

        self.iteration += 1;
        Ok(AliStepRecord {
            iter,
            index: batch.index,
            t_i: batch.t_i,
            l_gan,
            loss_disc,
            loss_gen,
            loss_reg,
        })
    }

    /// Value of the active regulariser on a fresh batch from stream `s`.
    pub fn regulariser_value(&self, data: &MarginalDataset, s: u64) -> Result<f64> {
        self.check_data(data)?;
        let mut rng = stream(self.cfg.seed, s);
        let batch = self.draw_batch(data, &mut rng)?;
        let mut tape = Tape::new();
        let params = self.gen.leaves(&mut tape);
        let rec = self.gen.record(&mut tape, Some(&params), &batch.x0, &batch.x1, &batch.t, &batch.t_input)?;
        let reg = self.record_reg(&mut tape, &params, &batch, rec.gated, &mut rng)?;
        tape.value(reg).item()
    }

    /// One regulariser-only update; returns the regulariser value before it.
    pub fn pretrain_step(&mut self, data: &MarginalDataset) -> Result<f64> {
        self.check_data(data)?;
        let s = PRETRAIN_STREAM_BASE + self.pretrained;
        let mut rng = stream(self.cfg.seed, s);
        let batch = self.draw_batch(data, &mut rng)?;
        let mut tape = Tape::new();
        let params = self.gen.leaves(&mut tape);
        let rec = self.gen.record(&mut tape, Some(&params), &batch.x0, &batch.x1, &batch.t, &batch.t_input)?;
        let reg = self.record_reg(&mut tape, &params, &batch, rec.gated, &mut rng)?;
        let value = tape.value(reg).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: self.pretrained, reason: "pretraining loss is not finite".into() });
        }
        let grads = tape.backward(reg)?;
        let g: Vec<Tensor> = params.iter().map(|&p| grads.get_or_zeros(p, tape.value(p))).collect();
        let it = self.pretrained;
        self.pretrain_opt
            .step_mlp(self.gen.net_mut(), &g)
            .map_err(|e| Self::diverged(it, "pretraining gradient", e))?;
        self.pretrained += 1;
        Ok(value)
    }

    /// Run the remaining pretraining steps, then calibrate lambda if enabled.
    pub fn pretrain(&mut self, data: &MarginalDataset) -> Result<Vec<f64>> {
        let mut trace = Vec::new();
        while self.pretrained < self.cfg.pretrain_steps {
            trace.push(self.pretrain_step(data)?);
        }
        if self.cfg.regulariser.auto_lambda && self.iteration == 0 {
            self.calibrate_lambda(data)?;
        }
        Ok(trace)
    }

    /// `lambda <- |L_GAN| / (|L_reg| + 1e-12)` on one batch.
    pub fn calibrate_lambda(&mut self, data: &MarginalDataset) -> Result<f64> {
        let mut rng = stream(self.cfg.seed, CALIBRATION_STREAM);
        let batch = self.draw_batch(data, &mut rng)?;
        let fake = self.gen.eval(&batch.x0, &batch.x1, &batch.t)?;
        if !fake.is_finite() {
            return Err(Error::NonFinite("generator output".into()));
        }
        let gan = gan_losses_from_logits(
            &self.disc.logits_at(&batch.xt, &batch.t)?,
            &self.disc.logits_at(&fake, &batch.t)?,
            self.cfg.gan,
        )?;
        let reg = self.regulariser_value(data, CALIBRATION_STREAM)?;
        self.lambda = gan.l_gan.abs() / (reg.abs() + 1e-12);
        Ok(self.lambda)
    }

    /// Pretrain, then run adversarial steps until `cfg.iterations`, writing
    /// one CSV row per step to `log` (header included when starting at 0).
    pub fn train<W: Write>(&mut self, data: &MarginalDataset, mut log: Option<W>) -> Result<Vec<AliStepRecord>> {
        self.check_data(data)?;
        self.pretrain(data)?;
        if let Some(w) = log.as_mut() {
            if self.iteration == 0 {
                writeln!(w, "{LOG_HEADER}")?;
            }
        }
        let mut records = Vec::with_capacity(self.cfg.iterations.saturating_sub(self.iteration) as usize);
        while self.iteration < self.cfg.iterations {
            let r = self.step(data)?;
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", r.csv_row())?;
            }
            records.push(r);
        }
        if let Some(w) = log.as_mut() {
            w.flush()?;
        }
        Ok(records)
    }

    /// Full training state: both networks, optimisers, counters and lambda.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.gen.save(&mut ck, "gen");
        ck.insert("disc", Entry::Mlp(self.disc.net.clone()));
        ck.insert("disc.time_frequencies", Entry::U64(self.disc.embedding.frequencies as u64));
        self.gen_opt.save(&mut ck, "opt.gen");
        self.disc_opt.save(&mut ck, "opt.disc");
        self.pretrain_opt.save(&mut ck, "opt.pretrain");
        ck.insert("iteration", Entry::U64(self.iteration));
        ck.insert("pretrained", Entry::U64(self.pretrained));
        ck.insert("lambda", Entry::F64(self.lambda));
        ck
    }

    /// Resume from [`AliTrainer::to_checkpoint`]; `cfg` supplies the
    /// schedule (e.g. a larger iteration budget).
    pub fn from_checkpoint(ck: &Checkpoint, cfg: AliTrainConfig, data: &MarginalDataset) -> Result<Self> {
        cfg.validate()?;
        let gen = AliGenerator::load(ck, "gen")?;
        let embedding = TimeEmbedding::new(ck.u64("disc.time_frequencies")? as usize);
        let disc = Discriminator::from_parts(ck.mlp("disc")?.clone(), embedding)?;
        if gen.embedding() != cfg.time_embedding || embedding != cfg.time_embedding {
            return Err(Error::invalid("checkpoint time embedding differs from the configuration"));
        }
        let mut t = AliTrainer {
            gen,
            disc,
            gen_opt: Adam::load(ck, "opt.gen")?,
            disc_opt: Adam::load(ck, "opt.disc")?,
            pretrain_opt: Adam::load(ck, "opt.pretrain")?,
            cfg,
            iteration: ck.u64("iteration")?,
            pretrained: ck.u64("pretrained")?,
            lambda: ck.f64("lambda")?,
            land: None,
        };
        t.check_data(data)?;
        t.land = t.build_land(data)?;
        Ok(t)
    }
}

/// Pretrain `trainer.gen` on the regulariser alone.
pub fn pretrain_ali(trainer: &mut AliTrainer, data: &MarginalDataset) -> Result<Vec<f64>> {
    trainer.pretrain(data)
}

/// One adversarial step.
pub fn ali_train_step(trainer: &mut AliTrainer, data: &MarginalDataset) -> Result<AliStepRecord> {
    trainer.step(data)
}

/// Build a trainer from `cfg` and train it to completion.
pub fn train_ali<W: Write>(cfg: AliTrainConfig, data: &MarginalDataset, log: Option<W>) -> Result<AliTrainer> {
    let mut t = AliTrainer::new(cfg, data)?;
    t.train(data, log)?;
    Ok(t)
}

#[cfg(test)]
mod tests;
