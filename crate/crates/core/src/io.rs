//! Text formats: instances, checkpoints, loss logs, trial logs and CSV
//! tables. Every real number is written with 17 significant digits
//! (`{:.16e}`), which round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::ising::IsingInstance;
use crate::lqa::AnnealSchedule;
use crate::search::SearchResult;
use crate::train::{LossEntry, TrainConfig, TrainableSchedule, Trainer};

pub const TOOL_VERSION: &str = concat!("dulqa ", env!("CARGO_PKG_VERSION"));

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("bad {what} {tok:?}")))
}

/// Lines with their 1-based numbers, skipping blanks and `#` comments.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `n <int>`, then `J i j value` for each nonzero upper-triangle coupling,
/// then `h i value` for each nonzero field.
pub fn write_instance(inst: &IsingInstance) -> String {
    let n = inst.n();
    let mut out = format!("n {n}\n");
    for i in 0..n {
        for j in i + 1..n {
            let v = inst.coupling(i, j);
            if v != 0.0 {
                let _ = writeln!(out, "J {i} {j} {}", fmt_real(v));
            }
        }
    }
    for (i, &h) in inst.fields().iter().enumerate() {
        if h != 0.0 {
            let _ = writeln!(out, "h {i} {}", fmt_real(h));
        }
    }
    out
}

pub fn parse_instance(text: &str) -> Result<IsingInstance> {
    let mut lines = content_lines(text);
    let (ln, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty instance file"))?;
    let mut toks = first.split_whitespace();
    if toks.next() != Some("n") {
        return Err(parse_err(ln, "expected `n <int>` header"));
    }
    let n: usize = parse_num(toks.next(), ln, "spin count")?;
    if n == 0 {
        return Err(parse_err(ln, "spin count must be positive"));
    }
    let mut entries = Vec::new();
    let mut fields = vec![0.0; n];
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("J") => {
                let i: usize = parse_num(toks.next(), ln, "index i")?;
                let j: usize = parse_num(toks.next(), ln, "index j")?;
                let v: f64 = parse_num(toks.next(), ln, "coupling")?;
                if i >= j || j >= n {
                    return Err(parse_err(ln, format!("need i < j < {n}, got ({i}, {j})")));
                }
                entries.push((i, j, v));
            }
            Some("h") => {
                let i: usize = parse_num(toks.next(), ln, "index i")?;
                let v: f64 = parse_num(toks.next(), ln, "field")?;
                if i >= n {
                    return Err(parse_err(ln, format!("field index {i} out of range")));
                }
                fields[i] = v;
            }
            other => return Err(parse_err(ln, format!("unknown record {other:?}"))),
        }
        if toks.next().is_some() {
            return Err(parse_err(ln, "trailing tokens"));
        }
    }
    IsingInstance::from_upper(n, &entries, fields)
}

pub fn load_instance(path: &Path) -> Result<IsingInstance> {
    parse_instance(&read_text(path)?)
}

/// Provenance written as `#` comments at the top of output files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub master_seed: Option<u64>,
    /// `(label, sha256)` of every input file.
    pub inputs: Vec<(String, String)>,
    /// Free-form `key=value` notes.
    pub notes: Vec<(String, String)>,
}

impl Provenance {
    pub fn seeded(master_seed: u64) -> Self {
        Provenance {
            master_seed: Some(master_seed),
            ..Provenance::default()
        }
    }

    pub fn input(mut self, label: impl Into<String>, hash: impl Into<String>) -> Self {
        self.inputs.push((label.into(), hash.into()));
        self
    }

    pub fn note(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.notes.push((key.into(), value.into()));
        self
    }

    pub fn header(&self) -> String {
        let mut out = format!("# tool={TOOL_VERSION}\n");
        if let Some(seed) = self.master_seed {
            let _ = writeln!(out, "# master_seed={seed}");
        }
        for (label, hash) in &self.inputs {
            let _ = writeln!(out, "# input.{label}=sha256:{hash}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }
}

/// Header `tau=<int>`, then one `t,eta,gamma` line per step.
pub fn write_checkpoint(sched: &AnnealSchedule, prov: &Provenance) -> String {
    let mut out = prov.header();
    let _ = writeln!(out, "tau={}", sched.tau());
    for (t, (e, g)) in sched.eta().iter().zip(sched.gamma()).enumerate() {
        let _ = writeln!(out, "{t},{},{}", fmt_real(*e), fmt_real(*g));
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<AnnealSchedule> {
    let mut lines = content_lines(text);
    let (ln, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty checkpoint"))?;
    let tau: usize = parse_num(first.strip_prefix("tau="), ln, "tau header")?;
    let mut eta = Vec::with_capacity(tau + 1);
    let mut gamma = Vec::with_capacity(tau + 1);
    for (ln, line) in lines {
        let mut toks = line.split(',');
        let t: usize = parse_num(toks.next(), ln, "step")?;
        if t != eta.len() {
            return Err(parse_err(
                ln,
                format!("expected step {}, found {t}", eta.len()),
            ));
        }
        eta.push(parse_num(toks.next(), ln, "eta")?);
        gamma.push(parse_num(toks.next(), ln, "gamma")?);
        if toks.next().is_some() {
            return Err(parse_err(ln, "trailing fields"));
        }
    }
    if eta.len() != tau + 1 {
        return Err(Error::InvalidConfig(format!(
            "checkpoint declares tau={tau} but lists {} steps",
            eta.len()
        )));
    }
    AnnealSchedule::new(eta, gamma)
}

pub fn load_checkpoint(path: &Path) -> Result<AnnealSchedule> {
    parse_checkpoint(&read_text(path)?)
}

/// CSV `stage,epoch,loss`.
pub fn write_loss_log(log: &[LossEntry], prov: &Provenance) -> String {
    let mut out = prov.header();
    out.push_str("stage,epoch,loss\n");
    for e in log {
        let _ = writeln!(out, "{},{},{}", e.stage, e.epoch, fmt_real(e.loss));
    }
    out
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossEntry>> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(text) {
        if line == "stage,epoch,loss" {
            continue;
        }
        let mut toks = line.split(',');
        out.push(LossEntry {
            stage: parse_num(toks.next(), ln, "stage")?,
            epoch: parse_num(toks.next(), ln, "epoch")?,
            loss: parse_num(toks.next(), ln, "loss")?,
            dropped: 0,
        });
    }
    Ok(out)
}

/// Trainer state after a completed stage, enough to resume bit-exactly.
/// `config=<fingerprint>`, `completed_stage=`, `adam_step=`, then
/// `param,<index>,<value>,<m>,<v>` and `log,<stage>,<epoch>,<loss>,<dropped>`
/// rows.
pub fn write_train_state(trainer: &Trainer, fingerprint: &str, prov: &Provenance) -> String {
    let mut out = prov.header();
    let theta = trainer.theta();
    let _ = writeln!(out, "config={fingerprint}");
    let _ = writeln!(out, "completed_stage={}", trainer.completed_stage());
    let _ = writeln!(out, "adam_step={}", theta.adam.step);
    for (i, p) in theta.params().iter().enumerate() {
        let _ = writeln!(
            out,
            "param,{i},{},{},{}",
            fmt_real(*p),
            fmt_real(theta.adam.m[i]),
            fmt_real(theta.adam.v[i])
        );
    }
    for e in trainer.log() {
        let _ = writeln!(
            out,
            "log,{},{},{},{}",
            e.stage,
            e.epoch,
            fmt_real(e.loss),
            e.dropped
        );
    }
    out
}

/// Rebuilds a [`Trainer`] from [`write_train_state`] output; the stored
/// fingerprint must equal `fingerprint`.
pub fn parse_train_state(text: &str, config: TrainConfig, fingerprint: &str) -> Result<Trainer> {
    let mut stored = None;
    let mut completed = None;
    let mut step = None;
    let (mut params, mut m, mut v, mut log) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in content_lines(text) {
        if let Some(f) = line.strip_prefix("config=") {
            stored = Some(f.to_string());
        } else if let Some(k) = line.strip_prefix("completed_stage=") {
            completed = Some(parse_num::<usize>(Some(k), ln, "completed_stage")?);
        } else if let Some(k) = line.strip_prefix("adam_step=") {
            step = Some(parse_num::<u64>(Some(k), ln, "adam_step")?);
        } else if let Some(rest) = line.strip_prefix("param,") {
            let mut toks = rest.split(',');
            let i: usize = parse_num(toks.next(), ln, "index")?;
            if i != params.len() {
                return Err(parse_err(
                    ln,
                    format!("expected parameter {}, found {i}", params.len()),
                ));
            }
            params.push(parse_num(toks.next(), ln, "value")?);
            m.push(parse_num(toks.next(), ln, "first moment")?);
            v.push(parse_num(toks.next(), ln, "second moment")?);
        } else if let Some(rest) = line.strip_prefix("log,") {
            let mut toks = rest.split(',');
            log.push(LossEntry {
                stage: parse_num(toks.next(), ln, "stage")?,
                epoch: parse_num(toks.next(), ln, "epoch")?,
                loss: parse_num(toks.next(), ln, "loss")?,
                dropped: parse_num(toks.next(), ln, "dropped")?,
            });
        } else {
            return Err(parse_err(ln, format!("unrecognized line {line:?}")));
        }
    }
    let stored = stored.ok_or_else(|| parse_err(0, "missing config fingerprint"))?;
    if stored != fingerprint {
        return Err(Error::InvalidConfig(
            "training state was written for a different configuration".into(),
        ));
    }
    let mut adam = Adam::new(config.outer_lr, params.len());
    adam.m = m;
    adam.v = v;
    adam.step = step.ok_or_else(|| parse_err(0, "missing adam_step"))?;
    let theta = TrainableSchedule::from_params(params, adam)?;
    let completed = completed.ok_or_else(|| parse_err(0, "missing completed_stage"))?;
    Trainer::resume(config, theta, completed, log)
}

/// Header `trial,<param names…>,objective`; rows carry `name=value` cells.
pub fn write_trial_log(result: &SearchResult, prov: &Provenance) -> String {
    let mut out = prov.header();
    let names: Vec<&str> = result
        .trials
        .first()
        .map(|t| t.params.0.iter().map(|(n, _)| n.as_str()).collect())
        .unwrap_or_default();
    let _ = writeln!(out, "trial,{},objective", names.join(","));
    for (i, t) in result.trials.iter().enumerate() {
        let cells: Vec<String> = t
            .params
            .0
            .iter()
            .map(|(n, v)| format!("{n}={}", fmt_real(*v)))
            .collect();
        let _ = writeln!(out, "{i},{},{}", cells.join(","), fmt_real(t.objective));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) => f.write_str(&fmt_real(*v)),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

/// A CSV table with optional `key=value` notes emitted as comments.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub notes: Vec<(String, String)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.notes.push((key.into(), value.into()));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self, prov: &Provenance) -> String {
        let mut out = prov.header();
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}
