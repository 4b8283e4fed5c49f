//! Training runs: configuration, the step loop, metrics and checkpoints.
//!
//! Step `t` draws all of its randomness from the stream
//! `STEP_BASE + t` of the master seed, so a run resumed from a checkpoint
//! continues bit-identically.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::eval::{self, EvalSummary};
use crate::nets::{decode_checkpoint, encode_checkpoint, Mlp};
use crate::objectives::{
    aae_training_step, cycle_iae_training_step, fiae_training_step, iae_training_step, infogan_training_step, IaeStepConfig,
    LabeledBatch, Nets, Reconstruction, StepReport,
};
use crate::optim::AdamHyper;
use crate::rng::{split, streams, Stream};

pub const OUTPUT_DIR_ENV: &str = "IAE_LAB_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Iae,
    Fiae,
    CycleIae,
    AaeBaseline,
    InfoganBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub experiment: ExperimentKind,
    pub step: IaeStepConfig,
    pub dataset: DatasetSpec,
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamHyper,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Checkpoint period in steps; 0 checkpoints only at the start and end.
    pub eval_every: u64,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        self.optimizer.validate()?;
        self.dataset.validate()?;
        let s = &self.step;
        s.validate(self.experiment == ExperimentKind::Iae)?;
        match self.experiment {
            ExperimentKind::Iae if s.reconstruction != Reconstruction::Adversarial => {
                bad("iae runs use adversarial reconstruction; use aae_baseline for euclidean")
            }
            ExperimentKind::AaeBaseline if s.reconstruction != Reconstruction::Euclidean => {
                bad("aae_baseline runs need \"reconstruction\": \"euclidean\"")
            }
            ExperimentKind::CycleIae if s.reconstruction == Reconstruction::Euclidean => {
                bad("cycle_iae reconstruction is adversarial or l1")
            }
            ExperimentKind::CycleIae if !matches!(self.dataset, DatasetSpec::TwoDomain { .. }) => {
                bad("cycle_iae runs need a two_domain dataset")
            }
            ExperimentKind::CycleIae if s.prior.is_categorical() || s.loss_weights.reg_w <= 0.0 => {
                bad("cycle_iae uses domain B as a gaussian-typed code with reg_w > 0")
            }
            ExperimentKind::Fiae | ExperimentKind::InfoganBaseline
                if s.reconstruction != Reconstruction::Adversarial || s.constant_code || s.semisup.is_some() =>
            {
                bad("fiae and infogan runs do not take reconstruction, constant_code or semisup")
            }
            ExperimentKind::InfoganBaseline if s.loss_weights.reg_w <= 0.0 => bad("infogan needs reg_w > 0"),
            _ if s.constant_code && s.uses_semisup() => bad("constant_code ablation cannot be semi-supervised"),
            _ => Ok(()),
        }
    }

    /// `output_dir`, else `<root>/<unix seconds>-<seed>` where the root is
    /// `$IAE_LAB_OUTPUT_DIR` or `./runs`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        let ts = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        root.join(format!("{ts}-{}", self.master_seed))
    }
}

/// Files produced by [`run_training`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub samples: Vec<PathBuf>,
    pub summary: EvalSummary,
    pub summary_json: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CheckpointState {
    step: u64,
    adam_t: Vec<(String, u64)>,
}

/// A model mid-training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub data: Dataset,
    pub nets: Nets,
    /// Number of completed steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let data = config.dataset.materialize(config.master_seed)?;
        let s = &config.step;
        if config.experiment == ExperimentKind::CycleIae {
            let b = data.domain_b.as_ref().map_or(0, |b| b.dim());
            if b != s.latent_dim {
                return Err(Error::Config(format!("domain B has dimension {b}, latent_dim is {}", s.latent_dim)));
            }
        }
        if s.uses_semisup() && data.labeled_subset().is_none() {
            return Err(Error::Config("semisup needs a dataset with labeled training points".into()));
        }
        if s.uses_semisup() && data.classes.is_some_and(|c| c > s.latent_dim) {
            return Err(Error::Config("more label classes than categorical code values".into()));
        }
        let seed = split(config.master_seed, streams::INIT);
        let x_dim = data.dim();
        let nets = match config.experiment {
            ExperimentKind::Iae | ExperimentKind::AaeBaseline | ExperimentKind::CycleIae => Nets::autoencoder(s, x_dim, seed)?,
            ExperimentKind::Fiae => Nets::flipped(s, x_dim, true, seed)?,
            ExperimentKind::InfoganBaseline => Nets::flipped(s, x_dim, false, seed)?,
        };
        Ok(Self { config, data, nets, step: 0 })
    }

    /// Runs one composed step and advances the step counter.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let cfg = &self.config;
        let t = self.step;
        let mut rng = Stream::derived(cfg.master_seed, streams::STEP_BASE + t);
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(self.data.train.len())).collect();
        let x = self.data.train.points.select_rows(&idx);
        let s = &cfg.step;
        let h = &cfg.optimizer;
        let out = match cfg.experiment {
            ExperimentKind::Iae => {
                let labeled = if s.uses_semisup() {
                    let n = self.data.labeled;
                    let li: Vec<usize> = (0..cfg.batch_size.min(n)).map(|_| rng.below(n)).collect();
                    Some(self.data.train.select(&li))
                } else {
                    None
                };
                let lb = labeled.as_ref().map(|l| LabeledBatch { x: &l.points, labels: l.labels.as_deref().unwrap_or(&[]) });
                iae_training_step(&mut self.nets, &x, lb, s, h, t, &mut rng)?
            }
            ExperimentKind::AaeBaseline => aae_training_step(&mut self.nets, &x, s, h, t, &mut rng)?,
            ExperimentKind::CycleIae => {
                let b = self.data.domain_b.as_ref().expect("validated");
                let bi: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(b.len())).collect();
                let bx = b.points.select_rows(&bi);
                cycle_iae_training_step(&mut self.nets, &x, &bx, s, h, t, &mut rng)?
            }
            ExperimentKind::Fiae => fiae_training_step(&mut self.nets, &x, s, h, t, &mut rng)?,
            ExperimentKind::InfoganBaseline => infogan_training_step(&mut self.nets, &x, s, h, t, &mut rng)?,
        };
        self.step += 1;
        Ok(out.report)
    }

    pub fn evaluate(&self, sample_dir: Option<&Path>) -> Result<EvalSummary> {
        eval::evaluate(self.config.experiment, &self.nets, &self.config.step, &self.data, self.config.master_seed, self.step, sample_dir)
    }

    /// Writes `{role}.params.bin`, `{role}.adam_m.bin`, `{role}.adam_v.bin`
    /// per network plus `state.json` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut adam_t = Vec::new();
        for (role, net) in self.nets.networks() {
            let Some(net) = net else { continue };
            let spec = &net.mlp.spec;
            for (suffix, store) in [("params", &net.mlp.params), ("adam_m", &net.adam.m), ("adam_v", &net.adam.v)] {
                let p = dir.join(format!("{role}.{suffix}.bin"));
                std::fs::write(&p, encode_checkpoint(spec, store)?).map_err(|e| Error::io(&p, e))?;
            }
            adam_t.push((role.to_string(), net.adam.t));
        }
        let state = CheckpointState { step: self.step, adam_t };
        let p = dir.join("state.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&state)?).map_err(|e| Error::io(&p, e))
    }

    /// Rebuilds a trainer from `config` and restores every network from a
    /// checkpoint directory.
    pub fn from_checkpoint(config: TrainConfig, dir: &Path) -> Result<Self> {
        let mut t = Self::new(config)?;
        let sp = dir.join("state.json");
        let raw = std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
        let state: CheckpointState = serde_json::from_slice(&raw)?;
        let roles: Vec<&'static str> = t.nets.networks().iter().filter(|(_, n)| n.is_some()).map(|(r, _)| *r).collect();
        for role in roles {
            let read = |suffix: &str| -> Result<_> {
                let p = dir.join(format!("{role}.{suffix}.bin"));
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                decode_checkpoint(&bytes)
            };
            let net = t.nets.network_mut(role).expect("role listed");
            let (spec, params) = read("params")?;
            if spec != net.mlp.spec {
                return Err(Error::Checkpoint(format!("{role}: architecture differs from the config")));
            }
            let (_, m) = read("adam_m")?;
            let (_, v) = read("adam_v")?;
            if !m.matches(&spec) || !v.matches(&spec) {
                return Err(Error::Checkpoint(format!("{role}: optimizer state shapes differ")));
            }
            net.mlp = Mlp::from_parts(spec, params)?;
            net.adam.m = m;
            net.adam.v = v;
            net.adam.t = state
                .adam_t
                .iter()
                .find(|(r, _)| r == role)
                .map(|(_, t)| *t)
                .ok_or_else(|| Error::Checkpoint(format!("{role}: missing optimizer step")))?;
        }
        t.step = state.step;
        Ok(t)
    }
}

pub fn metrics_header() -> String {
    let mut h = String::from("step");
    for c in StepReport::COLUMNS {
        h.push(',');
        h.push_str(c);
    }
    h.push_str(",wall_time\n");
    h
}

/// One metrics row; absent values are empty fields.
pub fn metrics_row(r: &StepReport, wall_time: f64) -> String {
    let mut s = r.step.to_string();
    for v in r.values() {
        s.push(',');
        if let Some(v) = v {
            let _ = write!(s, "{v:?}");
        }
    }
    let _ = writeln!(s, ",{wall_time:.6}");
    s
}

pub fn checkpoint_dir(output: &Path, step: u64) -> PathBuf {
    output.join("checkpoints").join(format!("step_{step:06}"))
}

/// Trains for `config.steps` steps, writing into the resolved output
/// directory: `config.json`, `metrics.csv`, `checkpoints/`, `samples/`
/// and `summary.json`. A non-finite loss aborts the run after writing the
/// offending report to `aborted_step.json`.
pub fn run_training(config: &TrainConfig) -> Result<RunArtifacts> {
    let out = config.resolve_output_dir();
    run_training_in(config, &out)
}

pub fn run_training_in(config: &TrainConfig, out: &Path) -> Result<RunArtifacts> {
    let mut trainer = Trainer::new(config.clone())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(config)?).map_err(|e| Error::io(&cfg_path, e))?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    metrics.write_all(metrics_header().as_bytes()).map_err(|e| Error::io(&metrics_path, e))?;

    let start = Instant::now();
    let mut checkpoints = Vec::new();
    let first = checkpoint_dir(out, 0);
    trainer.save_checkpoint(&first)?;
    checkpoints.push(first);
    while trainer.step < config.steps {
        let report = match trainer.train_step() {
            Ok(r) => r,
            Err(Error::NonFinite(report)) => {
                let p = out.join("aborted_step.json");
                std::fs::write(&p, serde_json::to_vec_pretty(&*report)?).map_err(|e| Error::io(&p, e))?;
                metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
                return Err(Error::NonFinite(report));
            }
            Err(e) => return Err(e),
        };
        metrics
            .write_all(metrics_row(&report, start.elapsed().as_secs_f64()).as_bytes())
            .map_err(|e| Error::io(&metrics_path, e))?;
        let done = trainer.step;
        if (config.eval_every > 0 && done % config.eval_every == 0) || done == config.steps {
            let d = checkpoint_dir(out, done);
            trainer.save_checkpoint(&d)?;
            checkpoints.push(d);
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let summary = trainer.evaluate(Some(&out.join("samples")))?;
    let summary_json = out.join("summary.json");
    std::fs::write(&summary_json, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&summary_json, e))?;
    Ok(RunArtifacts { output_dir: out.to_path_buf(), metrics_csv: metrics_path, checkpoints, samples: summary.samples.clone(), summary, summary_json })
}
