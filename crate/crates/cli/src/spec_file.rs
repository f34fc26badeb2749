//! TOML files read by `train` and `bench`. Relative paths resolve against
//! the directory of the file that names them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dulqa::bench::{ExperimentKind, ExperimentSpec, SolverSpec};
use dulqa::io::{hash_file, load_checkpoint, read_text};
use dulqa::train::TrainConfig;
use serde::Deserialize;

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn invalid(msg: String) -> anyhow::Error {
    dulqa::Error::InvalidConfig(msg).into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOutputs {
    checkpoint: PathBuf,
    loss_log: PathBuf,
    /// Written after every completed stage; resumed from when present.
    state: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainToml {
    train: TrainConfig,
    output: TrainOutputs,
}

#[derive(Debug)]
pub struct TrainFile {
    pub config: TrainConfig,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub state: Option<PathBuf>,
    /// SHA-256 of the config file.
    pub hash: String,
}

pub fn load_train(path: &Path) -> Result<TrainFile> {
    let text = read_text(path)?;
    let raw: TrainToml = toml::from_str(&text)
        .map_err(|e| invalid(format!("{}: {}", path.display(), e.message())))?;
    raw.train.validate()?;
    let base = base_dir(path);
    Ok(TrainFile {
        config: raw.train,
        checkpoint: resolve(&base, &raw.output.checkpoint),
        loss_log: resolve(&base, &raw.output.loss_log),
        state: raw.output.state.map(|p| resolve(&base, &p)),
        hash: hash_file(path)?,
    })
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
enum SolverToml {
    Dulqa {
        label: String,
        checkpoint: Option<PathBuf>,
        #[serde(default)]
        per_size: BTreeMap<String, PathBuf>,
    },
    LqaGd {
        eta: Option<f64>,
    },
    LqaAdam {
        step_size: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindToml {
    Trajectory,
    Crossover,
    Generalization,
    Scaling,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchToml {
    kind: KindToml,
    master_seed: u64,
    sizes: Vec<usize>,
    tau: usize,
    #[serde(default)]
    taus: Vec<usize>,
    restarts: usize,
    #[serde(default = "one")]
    instances: usize,
    #[serde(default = "default_budget")]
    tune_budget: usize,
    #[serde(default = "default_tune_restarts")]
    tune_restarts: usize,
    #[serde(default = "default_f")]
    f: f64,
    #[serde(default)]
    exact_gs: bool,
    #[serde(default = "default_residual_fit")]
    residual_fit: (usize, usize),
    #[serde(default = "default_sd_fit")]
    sd_fit: (usize, usize),
    #[serde(default)]
    solver: Vec<SolverToml>,
}

fn one() -> usize {
    1
}
fn default_budget() -> usize {
    dulqa::search::DEFAULT_BUDGET
}
fn default_tune_restarts() -> usize {
    20
}
fn default_f() -> f64 {
    0.5
}
fn default_residual_fit() -> (usize, usize) {
    (50, 300)
}
fn default_sd_fit() -> (usize, usize) {
    (50, 1000)
}

#[derive(Debug)]
pub struct BenchFile {
    pub spec: ExperimentSpec,
    /// `(label, sha256)` of the spec file and every checkpoint.
    pub inputs: Vec<(String, String)>,
}

pub fn load_bench(path: &Path) -> Result<BenchFile> {
    let text = read_text(path)?;
    let raw: BenchToml = toml::from_str(&text)
        .map_err(|e| invalid(format!("{}: {}", path.display(), e.message())))?;
    let base = base_dir(path);
    let kind = match raw.kind {
        KindToml::Trajectory => ExperimentKind::Trajectory,
        KindToml::Crossover => ExperimentKind::Crossover,
        KindToml::Generalization => ExperimentKind::Generalization,
        KindToml::Scaling => ExperimentKind::Scaling,
    };
    let mut inputs = vec![("spec".to_string(), hash_file(path)?)];
    let mut roster = Vec::new();
    for s in raw.solver {
        roster.push(match s {
            SolverToml::Dulqa {
                label,
                checkpoint,
                per_size,
            } => {
                if label.is_empty() || label.contains([',', '=', '\n']) {
                    bail!(invalid(format!("bad DULQA label {label:?}")));
                }
                let mut load = |tag: String, p: &Path| -> Result<_> {
                    let full = resolve(&base, p);
                    inputs.push((tag, hash_file(&full)?));
                    load_checkpoint(&full).with_context(|| format!("checkpoint {}", full.display()))
                };
                let shared = match &checkpoint {
                    Some(p) => Some(load(format!("checkpoint.{label}"), p)?),
                    None => None,
                };
                let mut sizes = BTreeMap::new();
                for (k, p) in &per_size {
                    let n: usize = k
                        .parse()
                        .map_err(|_| invalid(format!("per_size key {k:?} is not a size")))?;
                    sizes.insert(n, load(format!("checkpoint.{label}.n{n}"), p)?);
                }
                SolverSpec::Dulqa {
                    label,
                    shared,
                    per_size: sizes,
                }
            }
            SolverToml::LqaGd { eta } => SolverSpec::LqaGd { eta },
            SolverToml::LqaAdam { step_size } => SolverSpec::LqaAdam { step_size },
        });
    }
    let spec = ExperimentSpec {
        kind,
        sizes: raw.sizes,
        tau: raw.tau,
        taus: if raw.taus.is_empty() {
            vec![raw.tau]
        } else {
            raw.taus
        },
        restarts: raw.restarts,
        instances: raw.instances,
        tune_budget: raw.tune_budget,
        tune_restarts: raw.tune_restarts,
        f: raw.f,
        master_seed: raw.master_seed,
        roster,
        exact_gs: raw.exact_gs,
        residual_fit: raw.residual_fit,
        sd_fit: raw.sd_fit,
    };
    spec.validate()?;
    Ok(BenchFile { spec, inputs })
}
