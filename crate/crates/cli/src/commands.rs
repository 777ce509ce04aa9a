//! The CLI verbs. Every command is a pure function of the configuration and
//! the files it reads.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ali_core::ali_train::AliTrainer;
use ali_core::cfm::{push_forward, rollout, rollout_at_times, CfmTrainer, ConditionalPath, PathKind, TargetSampler, VectorField};
use ali_core::coupling::Batch;
use ali_core::data::csv::{read_dataset, read_trajectories, write_dataset, write_trajectories};
use ali_core::data::{gen_gaussian_sequence, gen_knot, normalise, KnotSpec, MarginalDataset, Normalisation, TrajectorySet};
use ali_core::eval::{evaluate_marginals, EmdTable};
use ali_core::interpolants::AliGenerator;
use ali_core::nd::checkpoint::Checkpoint;
use ali_core::Tensor;

use crate::config::{DataSource, ExperimentConfig, Protocol};
use crate::error::{CliError, CliResult};
use crate::plot::render_svg;

pub const OUTPUT_ROOT_VAR: &str = "ALI_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "ali-output";

/// File names inside an experiment directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    /// `$ALI_OUTPUT_ROOT/<output_dir>`, with `ali-output` as the default root.
    pub fn from_env(cfg: &ExperimentConfig) -> Self {
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from);
        Layout::new(root.join(&cfg.output_dir))
    }

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Layout { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn data(&self) -> PathBuf {
        self.dir.join("data.csv")
    }
    pub fn ali_checkpoint(&self) -> PathBuf {
        self.dir.join("ali.ckpt")
    }
    pub fn ali_log(&self) -> PathBuf {
        self.dir.join("ali_log.csv")
    }
    pub fn cfm_checkpoint(&self) -> PathBuf {
        self.dir.join("cfm.ckpt")
    }
    pub fn cfm_log(&self) -> PathBuf {
        self.dir.join("cfm_log.csv")
    }
    pub fn trajectories(&self) -> PathBuf {
        self.dir.join("trajectories.csv")
    }
    pub fn emd(&self) -> PathBuf {
        self.dir.join("emd.csv")
    }
    pub fn plot(&self) -> PathBuf {
        self.dir.join("plot.svg")
    }

    fn prepare(&self, cfg: &ExperimentConfig) -> CliResult<()> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        write_file(&self.config(), |w| Ok(w.write_all(cfg.to_toml().as_bytes())?))
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> ali_core::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| match e {
        ali_core::Error::Io(source) => CliError::io(path, source),
        other => CliError::Core(other),
    })?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn input_error(path: &Path) -> impl FnOnce(ali_core::Error) -> CliError + '_ {
    move |e| match e {
        ali_core::Error::Io(source) => CliError::io(path, source),
        source => CliError::Input { path: path.to_path_buf(), source },
    }
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::read_file(path).map_err(input_error(path))
}

fn write_checkpoint(ck: &Checkpoint, path: &Path) -> CliResult<()> {
    ck.write_file(path).map_err(|e| match e {
        ali_core::Error::Io(source) => CliError::io(path, source),
        other => CliError::Core(other),
    })
}

/// Draw the configured dataset with generator seed `seed`.
pub fn generate(source: &DataSource, seed: u64) -> CliResult<MarginalDataset> {
    let ds = match source {
        DataSource::Knot { k, samples, sigma } => gen_knot(&KnotSpec { k: *k, samples: *samples, sigma: *sigma, seed }),
        DataSource::Gaussian { means, std, n } => gen_gaussian_sequence(means, *std, *n, seed),
        DataSource::Csv { path } => {
            let p = Path::new(path);
            return read_dataset(open(p)?).map_err(input_error(p));
        }
    };
    ds.map_err(|e| CliError::config(e.to_string()))
}

/// `gen-data`: write the dataset CSV.
pub fn gen_data(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<MarginalDataset> {
    layout.prepare(cfg)?;
    let ds = generate(&cfg.data.generator, cfg.seed)?;
    write_file(&layout.data(), |w| write_dataset(&ds, w))?;
    Ok(ds)
}

/// Dataset as seen by the trainers.
pub struct Prepared {
    /// Every marginal, normalised if configured.
    pub full: MarginalDataset,
    /// `full` without the held-out marginals.
    pub train: MarginalDataset,
    pub normalisation: Option<Normalisation>,
}

pub fn prepare_data(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Prepared> {
    let path = layout.data();
    let raw = read_dataset(open(&path)?).map_err(input_error(&path))?;
    let (full, normalisation) = if cfg.data.normalise {
        let (ds, n) = normalise(&raw)?;
        (ds, Some(n))
    } else {
        (raw, None)
    };
    let k = full.len();
    let mut held = cfg.data.held_out.clone();
    held.sort_unstable();
    held.dedup();
    if let Some(&bad) = held.iter().find(|&&i| i == 0 || i + 1 >= k) {
        return Err(CliError::config(format!("held-out index {bad} must be an interior marginal of {k}")));
    }
    let keep: Vec<usize> = (0..k).filter(|i| !held.contains(i)).collect();
    let train = full.select(&keep).map_err(|e| CliError::config(e.to_string()))?;
    Ok(Prepared { full, train, normalisation })
}

fn open_log(path: &Path, append: bool) -> CliResult<BufWriter<File>> {
    if append {
        OpenOptions::new()
            .append(true)
            .open(path)
            .map(BufWriter::new)
            .map_err(|e| CliError::io(path, e))
    } else {
        create(path)
    }
}

fn wrap_log_error(path: &Path) -> impl FnOnce(ali_core::Error) -> CliError + '_ {
    move |e| match e {
        ali_core::Error::Io(source) => CliError::io(path, source),
        ali_core::Error::InvalidArgument(msg) => CliError::Config(msg),
        other => CliError::Core(other),
    }
}

/// `train-ali`: adversarial training, writing the checkpoint and loss log.
pub fn train_ali(cfg: &ExperimentConfig, layout: &Layout, resume: bool) -> CliResult<AliTrainer> {
    layout.prepare(cfg)?;
    let data = prepare_data(cfg, layout)?;
    let ali_cfg = cfg.ali_config();
    let mut trainer = if resume {
        let ck = read_checkpoint(&layout.ali_checkpoint())?;
        AliTrainer::from_checkpoint(&ck, ali_cfg, &data.train).map_err(input_error(&layout.ali_checkpoint()))?
    } else {
        AliTrainer::new(ali_cfg, &data.train).map_err(|e| CliError::config(e.to_string()))?
    };
    let log_path = layout.ali_log();
    let log = open_log(&log_path, resume)?;
    let outcome = trainer.train(&data.train, Some(log)).map_err(wrap_log_error(&log_path));
    write_checkpoint(&trainer.to_checkpoint(), &layout.ali_checkpoint())?;
    outcome?;
    Ok(trainer)
}

fn conditional_path(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<ConditionalPath> {
    Ok(match cfg.interpolant {
        PathKind::Linear => ConditionalPath::Linear,
        PathKind::Piecewise => ConditionalPath::Piecewise,
        PathKind::Spline => ConditionalPath::Spline,
        PathKind::Ali => {
            let path = layout.ali_checkpoint();
            let ck = read_checkpoint(&path)?;
            ConditionalPath::Ali(AliGenerator::load(&ck, "gen").map_err(input_error(&path))?)
        }
    })
}

/// `train-cfm`: flow matching on the configured interpolant.
pub fn train_cfm(cfg: &ExperimentConfig, layout: &Layout, resume: bool) -> CliResult<VectorField> {
    layout.prepare(cfg)?;
    let data = prepare_data(cfg, layout)?;
    let cfm_cfg = cfg.cfm_config();
    let path = conditional_path(cfg, layout)?;
    let sampler = TargetSampler::new(path, cfm_cfg.coupling, cfm_cfg.batch_size, &data.train)
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut trainer = if resume {
        let p = layout.cfm_checkpoint();
        CfmTrainer::from_checkpoint(&read_checkpoint(&p)?, cfm_cfg).map_err(input_error(&p))?
    } else {
        CfmTrainer::new(cfm_cfg, data.train.dim()).map_err(|e| CliError::config(e.to_string()))?
    };
    let log_path = layout.cfm_log();
    let log = open_log(&log_path, resume)?;
    let outcome = trainer.train(&sampler, &data.train, Some(log)).map_err(wrap_log_error(&log_path));
    write_checkpoint(&trainer.to_checkpoint(), &layout.cfm_checkpoint())?;
    outcome?;
    Ok(trainer.field)
}

pub fn load_field(layout: &Layout) -> CliResult<VectorField> {
    let path = layout.cfm_checkpoint();
    let ck = read_checkpoint(&path)?;
    VectorField::load(&ck, "field").map_err(input_error(&path))
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub table: EmdTable,
    pub diverged: usize,
    pub trajectories: usize,
}

fn invert(norm: Option<&Normalisation>, x: &Tensor) -> CliResult<Tensor> {
    Ok(match norm {
        Some(n) => n.invert(x)?,
        None => x.clone(),
    })
}

fn finite_rows(x: &Tensor, divergent: &[bool]) -> Vec<usize> {
    (0..x.rows()).filter(|&r| !divergent[r]).collect()
}

/// `rollout-eval`: trajectories CSV and per-time EMD table. Divergent
/// trajectories are reported after both files are written.
pub fn rollout_eval(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<EvalSummary> {
    layout.prepare(cfg)?;
    let data = prepare_data(cfg, layout)?;
    let field = load_field(layout)?;
    if field.dim() != data.full.dim() {
        return Err(CliError::config(format!("field dimension {} vs data {}", field.dim(), data.full.dim())));
    }
    let norm = data.normalisation.as_ref();
    let opts = cfg.emd_options();
    let (mut traj, table, diverged) = match cfg.eval.protocol {
        Protocol::AllTimes => {
            let reference = match cfg.eval.fresh_seed {
                Some(s) => generate(&cfg.data.generator, s)?,
                None => read_dataset(open(&layout.data())?).map_err(input_error(&layout.data()))?,
            };
            let k = reference.len();
            let mut idx: Vec<usize> = (0..k).step_by(cfg.eval.time_stride).collect();
            if idx.last() != Some(&(k - 1)) {
                idx.push(k - 1);
            }
            let times: Vec<f64> = idx.iter().map(|&i| reference.times()[i]).collect();
            let x0 = match norm {
                Some(n) => n.apply(reference.batch(0).points())?,
                None => reference.batch(0).points().clone(),
            };
            let traj = rollout_at_times(&field, &x0, &times, &cfg.rollout)?;
            let keep = finite_rows(&x0, &traj.divergent);
            let diverged = x0.rows() - keep.len();
            if keep.is_empty() {
                return Err(CliError::DivergentRollout { diverged, total: x0.rows() });
            }
            let mut predicted = Vec::with_capacity(times.len());
            for (&t, s) in times.iter().zip(&traj.states) {
                predicted.push((t, Batch::with_time(invert(norm, &s.select_rows(&keep))?, t)?));
            }
            let table = evaluate_marginals(&predicted, &reference, None, &opts)?;
            (traj, table, diverged)
        }
        Protocol::HeldOut => {
            let pushed = push_forward(&field, &data.full, &cfg.data.held_out, &cfg.rollout)?;
            let reference = read_dataset(open(&layout.data())?).map_err(input_error(&layout.data()))?;
            let mut predicted = Vec::with_capacity(pushed.len());
            let mut diverged = 0;
            for p in &pushed {
                diverged += p.diverged;
                predicted.push((p.t, Batch::with_time(invert(norm, p.batch.points())?, p.t)?));
            }
            let table = evaluate_marginals(&predicted, &reference, None, &opts)?;
            let traj = rollout(&field, data.full.batch(0).points(), &cfg.rollout)?;
            (traj, table, diverged)
        }
    };
    for s in traj.states.iter_mut() {
        *s = invert(norm, s)?;
    }
    write_file(&layout.trajectories(), |w| write_trajectories(&traj, w))?;
    write_file(&layout.emd(), |w| table.write_csv(w))?;
    let total = traj.num_trajectories();
    let diverged = diverged.max(traj.divergent.iter().filter(|&&d| d).count());
    if diverged > 0 {
        return Err(CliError::DivergentRollout { diverged, total });
    }
    Ok(EvalSummary { table, diverged, trajectories: total })
}

/// `plot`: SVG of the data coloured by time, with trajectories if present.
pub fn plot(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    layout.prepare(cfg)?;
    let data_path = layout.data();
    let data = read_dataset(open(&data_path)?).map_err(input_error(&data_path))?;
    if data.dim() != 2 {
        return Err(CliError::config(format!("plotting needs 2-D data, got d = {}", data.dim())));
    }
    let traj_path = layout.trajectories();
    let traj = if traj_path.is_file() {
        let t = read_trajectories(open(&traj_path)?).map_err(input_error(&traj_path))?;
        if t.num_trajectories() > 0 && t.dim() != 2 {
            return Err(CliError::config(format!("plotting needs 2-D trajectories, got d = {}", t.dim())));
        }
        t
    } else {
        TrajectorySet { times: Vec::new(), states: Vec::new(), divergent: Vec::new() }
    };
    let svg = render_svg(&data, &traj);
    let path = layout.plot();
    fs::write(&path, svg).map_err(|e| CliError::io(&path, e))
}

/// `run-all`: every stage in order.
pub fn run_all(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<EvalSummary> {
    gen_data(cfg, layout)?;
    if cfg.interpolant == PathKind::Ali {
        train_ali(cfg, layout, false)?;
    }
    train_cfm(cfg, layout, false)?;
    let summary = rollout_eval(cfg, layout);
    if matches!(summary, Ok(_) | Err(CliError::DivergentRollout { .. })) {
        plot(cfg, layout)?;
    }
    summary
}
