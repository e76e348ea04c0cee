//! Stage orchestration over a run directory.
//!
//! Each stage reads the artifacts of the one before it and records a
//! fingerprint in `manifest.json`. A stage whose fingerprint is unchanged and
//! whose output exists is skipped unless forced.

mod data;
mod eval;
mod plan;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{sha256_hex, RunConfig};
use crate::error::{io_err, CliError, Result};

pub use data::{CorpusEntry, CorpusIndex};
pub use eval::{HeldOut, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenCorpus,
    Prepare,
    Clean,
    TrainGan,
    TrainDiff,
    Deduce,
    Synthesize,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenCorpus,
        Stage::Prepare,
        Stage::Clean,
        Stage::TrainGan,
        Stage::TrainDiff,
        Stage::Deduce,
        Stage::Synthesize,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Prepare => "prepare",
            Stage::Clean => "clean",
            Stage::TrainGan => "train-gan",
            Stage::TrainDiff => "train-diff",
            Stage::Deduce => "deduce",
            Stage::Synthesize => "synthesize",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Bumped whenever a stage's output format or algorithm changes.
    pub fn version(self) -> u32 {
        1
    }

    fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("listed");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }

    /// The artifact whose presence marks the stage as done.
    pub fn output(self) -> &'static str {
        match self {
            Stage::GenCorpus => "corpus/index.json",
            Stage::Prepare => "divisions.json",
            Stage::Clean => "clean/index.json",
            Stage::TrainGan => "models/gan.json",
            Stage::TrainDiff => "models/diff.json",
            Stage::Deduce => "plan.json",
            Stage::Synthesize => "assembly_report.json",
            Stage::Evaluate => "metrics.json",
        }
    }

    /// Config sections the stage's output depends on.
    fn sections(self, cfg: &RunConfig) -> serde_json::Value {
        match self {
            Stage::GenCorpus => json!({ "corpus": cfg.corpus }),
            Stage::Prepare => json!({ "montage": cfg.montage, "divisions": cfg.divisions, "split": cfg.split }),
            Stage::Clean => json!({ "clean": cfg.clean }),
            Stage::TrainGan => json!({ "gan": cfg.gan, "split": cfg.split }),
            Stage::TrainDiff => json!({ "diffusion": cfg.diffusion, "thresholds": cfg.thresholds }),
            Stage::Deduce => json!({ "thresholds": cfg.thresholds }),
            Stage::Synthesize => json!({}),
            Stage::Evaluate => json!({ "evaluation": cfg.evaluation }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub version: u32,
    pub fingerprint: String,
}

/// The headline generator hyperparameters, echoed for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub input: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub layers: usize,
    pub heads: usize,
    pub decay: Option<f64>,
    pub epochs: usize,
    pub diffusion_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub preset: String,
    pub seed: u64,
    pub config_hash: String,
    pub hyperparameters: Hyperparameters,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    fn fresh(cfg: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            preset: cfg.preset.name().into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            hyperparameters: Hyperparameters {
                input: cfg.gan.seq_len,
                hidden: cfg.gan.hidden,
                lr: cfg.gan.lr,
                batch: cfg.gan.batch,
                layers: cfg.gan.layers,
                heads: cfg.gan.heads,
                decay: cfg.gan.decay,
                epochs: cfg.gan.epochs,
                diffusion_steps: cfg.diffusion.schedule.steps,
            },
            stages: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

pub struct Runner {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub force: bool,
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>, jobs: usize, force: bool) -> Result<Self> {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        Ok(Self { cfg, out: out.into(), force, pool })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn manifest_path(&self) -> PathBuf {
        self.path("manifest.json")
    }

    /// The stored manifest with the current run identity.
    fn manifest(&self) -> Result<Manifest> {
        let mut m = Manifest::fresh(&self.cfg);
        let p = self.manifest_path();
        if p.exists() {
            let old: Manifest = read_json(&p)?;
            m.stages = old.stages;
        }
        Ok(m)
    }

    fn fingerprint(&self, stage: Stage, m: &Manifest) -> String {
        let upstream = stage.upstream().and_then(|u| m.stages.get(u.name())).map(|r| r.fingerprint.clone());
        let doc = json!({
            "stage": stage.name(),
            "version": stage.version(),
            "seed": self.cfg.seed,
            "sections": stage.sections(&self.cfg),
            "upstream": upstream,
        });
        sha256_hex(doc.to_string().as_bytes())
    }

    /// Writes the manifest and the resolved config without touching stage
    /// records.
    pub fn init(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        write_json(&self.manifest_path(), &self.manifest()?)?;
        write_text(&self.path("config.toml"), &self.cfg.to_toml())
    }

    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        self.init()?;
        if let Some(up) = stage.upstream() {
            let need = self.path(up.output());
            if !need.exists() {
                return Err(CliError::StageOrder { stage: stage.name(), producer: up.name(), missing: need });
            }
        }
        let mut m = self.manifest()?;
        let fp = self.fingerprint(stage, &m);
        let current = m.stages.get(stage.name()).is_some_and(|r| r.fingerprint == fp && r.version == stage.version());
        if !self.force && current && self.path(stage.output()).exists() {
            log::info!("{}: up to date", stage.name());
            return Ok(Outcome::Skipped);
        }
        let t0 = Instant::now();
        log::info!("{}: running", stage.name());
        self.pool.install(|| match stage {
            Stage::GenCorpus => data::gen_corpus(self),
            Stage::Prepare => data::prepare(self),
            Stage::Clean => data::clean(self),
            Stage::TrainGan => train::train_gan(self),
            Stage::TrainDiff => train::train_diff(self),
            Stage::Deduce => plan::deduce(self),
            Stage::Synthesize => eval::synthesize(self),
            Stage::Evaluate => eval::evaluate(self),
        })?;
        log::info!("{}: done in {:.1} s", stage.name(), t0.elapsed().as_secs_f64());
        m.stages.insert(stage.name().into(), StageRecord { version: stage.version(), fingerprint: fp });
        write_json(&self.manifest_path(), &m)?;
        Ok(Outcome::Ran)
    }

    pub fn run_all(&self) -> Result<Vec<Outcome>> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact { path: path.into(), msg: e.to_string() })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// File-name stem for an ordered channel pair.
pub(crate) fn edge_stem(source: &str, target: &str) -> String {
    format!("{source}__{target}")
}
