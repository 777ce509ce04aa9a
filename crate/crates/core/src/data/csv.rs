//! Plain CSV formats. Floats are written with 17 significant digits so that
//! reading back reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::MarginalDataset;
use crate::error::{Error, Result};
use crate::nd::Tensor;

fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

fn header(prefix: &str, d: usize) -> String {
    let mut h = prefix.to_string();
    for k in 1..=d {
        write!(h, ",x_{k}").expect("writing to a String");
    }
    h
}

/// Header `t,x_1..x_d`, one row per sample.
pub fn write_dataset<W: Write>(ds: &MarginalDataset, mut w: W) -> Result<()> {
    let mut line = header("t", ds.dim());
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for (t, b) in ds.iter() {
        for r in b.points().iter_rows() {
            line.clear();
            fmt_f64(&mut line, t);
            for v in r {
                line.push(',');
                fmt_f64(&mut line, *v);
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_fields(line: &str, lineno: usize, expect: usize) -> Result<Vec<f64>> {
    let vals = line
        .split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| Error::Dataset(format!("line {lineno}: bad number {f:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expect {
        return Err(Error::Dataset(format!(
            "line {lineno}: expected {expect} fields, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn check_header(line: &str, prefix: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if cols.len() <= prefix.len() || cols[..prefix.len()] != *prefix {
        return Err(Error::Dataset(format!(
            "header must start with {} followed by x_1..x_d, got {line:?}",
            prefix.join(",")
        )));
    }
    for (k, c) in cols[prefix.len()..].iter().enumerate() {
        if *c != format!("x_{}", k + 1) {
            return Err(Error::Dataset(format!("unexpected column {c:?} in header")));
        }
    }
    Ok(cols.len() - prefix.len())
}

/// Read a dataset written by [`write_dataset`]. Rows are grouped by their
/// exact `t` value; groups are ordered by time.
pub fn read_dataset<R: BufRead>(r: R) -> Result<MarginalDataset> {
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty dataset file".into()))??;
    let d = check_header(&head, &["t"])?;
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_fields(&line, i + 2, d + 1)?;
        let t = vals[0];
        match groups.iter_mut().find(|g| g.0 == t) {
            Some(g) => g.1.extend_from_slice(&vals[1..]),
            None => groups.push((t, vals[1..].to_vec())),
        }
    }
    if groups.is_empty() {
        return Err(Error::Dataset("dataset file has no rows".into()));
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let marginals = groups
        .into_iter()
        .map(|(t, data)| Ok((t, Tensor::matrix(data.len() / d, d, data)?)))
        .collect::<Result<Vec<_>>>()?;
    MarginalDataset::partial(marginals)
}

/// States of many trajectories on a shared time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub times: Vec<f64>,
    /// `states[j]` is the `n x d` batch at `times[j]`.
    pub states: Vec<Tensor>,
    /// Trajectories that produced a non-finite state.
    pub divergent: Vec<bool>,
}

impl TrajectorySet {
    pub fn num_trajectories(&self) -> usize {
        self.states.first().map_or(0, |s| s.rows())
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.cols())
    }

    pub fn any_divergent(&self) -> bool {
        self.divergent.iter().any(|&d| d)
    }

    /// States at the recorded time closest to `t`.
    pub fn at(&self, t: f64) -> Option<&Tensor> {
        let j = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?
            .0;
        self.states.get(j)
    }
}

/// Header `traj_id,t,x_1..x_d`, rows ordered by trajectory then time.
pub fn write_trajectories<W: Write>(set: &TrajectorySet, mut w: W) -> Result<()> {
    let mut line = header("traj_id,t", set.dim());
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for id in 0..set.num_trajectories() {
        for (t, s) in set.times.iter().zip(&set.states) {
            line.clear();
            write!(line, "{id},").expect("writing to a String");
            fmt_f64(&mut line, *t);
            for v in s.row(id) {
                line.push(',');
                fmt_f64(&mut line, *v);
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read trajectories written by [`write_trajectories`]. Every trajectory must
/// share the time grid of trajectory 0. An empty body yields an empty set.
pub fn read_trajectories<R: BufRead>(r: R) -> Result<TrajectorySet> {
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty trajectory file".into()))??;
    let d = check_header(&head, &["traj_id", "t"])?;
    let mut per_traj: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::Dataset(format!("line {}: missing fields", i + 2)))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|e| Error::Dataset(format!("line {}: bad trajectory id: {e}", i + 2)))?;
        let vals = parse_fields(rest, i + 2, d + 1)?;
        if id > per_traj.len() {
            return Err(Error::Dataset(format!("line {}: trajectory ids must be contiguous", i + 2)));
        }
        if id == per_traj.len() {
            per_traj.push((Vec::new(), Vec::new()));
        }
        per_traj[id].0.push(vals[0]);
        per_traj[id].1.extend_from_slice(&vals[1..]);
    }
    if per_traj.is_empty() {
        return Ok(TrajectorySet {
            times: Vec::new(),
            states: Vec::new(),
            divergent: Vec::new(),
        });
    }
    let times = per_traj[0].0.clone();
    if per_traj.iter().any(|p| p.0 != times) {
        return Err(Error::Dataset("trajectories do not share a time grid".into()));
    }
    let n = per_traj.len();
    let states = (0..times.len())
        .map(|j| {
            let mut data = Vec::with_capacity(n * d);
            for p in &per_traj {
                data.extend_from_slice(&p.1[j * d..(j + 1) * d]);
            }
            Tensor::matrix(n, d, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let divergent = (0..n)
        .map(|i| states.iter().any(|s| s.row(i).iter().any(|v| !v.is_finite())))
        .collect();
    Ok(TrajectorySet { times, states, divergent })
}
