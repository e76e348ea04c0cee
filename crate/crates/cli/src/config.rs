//! Run configuration: a named preset with an optional TOML overlay.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use yoas_core::paths::Thresholds;
use yoas_core::preprocess::CleanConfig;
use yoas_core::{CorpusSpec, DivisionRules, Montage};
use yoas_nn::diffusion::DiffConfig;
use yoas_nn::gan::GanFormerConfig;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

/// Bundled montage name or a montage file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MontageConfig {
    pub name: Option<String>,
    pub path: Option<PathBuf>,
}

impl MontageConfig {
    pub fn load(&self) -> Result<Montage> {
        match (&self.name, &self.path) {
            (_, Some(p)) => Ok(Montage::load(p)?),
            (Some(n), None) => Montage::bundled(n).ok_or_else(|| CliError::Config(format!("unknown montage {n:?}"))),
            (None, None) => Err(CliError::Config("montage needs a name or a path".into())),
        }
    }
}

/// Correlation bounds; distance ranges default to the montage radius
/// (hypotheses 1 and 2) and diameter (hypothesis 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
}

impl ThresholdConfig {
    pub fn standard() -> Self {
        Self { p1: 0.3, p2: 0.3, p3: 0.1, l1: None, l2: None, l3: None }
    }

    pub fn resolve(&self, m: &Montage) -> Thresholds {
        let base = Thresholds::for_montage(m, self.p1, self.p2, self.p3);
        Thresholds {
            l1: self.l1.unwrap_or(base.l1),
            l2: self.l2.unwrap_or(base.l2),
            l3: self.l3.unwrap_or(base.l3),
            ..base
        }
    }
}

/// Which recordings are held out and how training segments are cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Last recordings of every class kept for synthesis and evaluation.
    pub held_out_per_class: usize,
    /// Stride between training windows; the window is `gan.seq_len`.
    pub stride: usize,
    /// Segments reserved for validation, calibration and edge scoring.
    pub val_segments: usize,
    pub max_train_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Correlation distance a generated channel must stay under.
    pub d_threshold: f64,
    /// Feature window in samples.
    pub window: usize,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub montage: MontageConfig,
    pub divisions: DivisionRules,
    pub thresholds: ThresholdConfig,
    pub clean: CleanConfig,
    pub split: SplitConfig,
    pub gan: GanFormerConfig,
    pub diffusion: DiffConfig,
    pub evaluation: EvalConfig,
}

/// Region-clustered corpus over the 32-channel montage with nine classes.
fn corpus32() -> CorpusSpec {
    let m = Montage::faced32();
    let mut regions: Vec<String> = Vec::new();
    let clusters: Vec<usize> = m
        .electrodes()
        .iter()
        .map(|e| {
            let r = e.region.clone().unwrap_or_default();
            regions.iter().position(|x| *x == r).unwrap_or_else(|| {
                regions.push(r);
                regions.len() - 1
            })
        })
        .collect();
    let within = vec![0.9; regions.len()];
    let class_band_powers = (0..9)
        .map(|c| {
            let mut p = [0.6; 4];
            p[c % 4] = 2.5;
            p[(c / 4 + 1) % 4] += 1.0;
            p
        })
        .collect();
    CorpusSpec {
        channels: m.names(),
        rate: 250.0,
        samples: 7500,
        recordings_per_class: 3,
        class_band_powers,
        coupling: CorpusSpec::block_coupling(&clusters, &within, 0.2),
        gains: (0..m.len()).map(|i| 14.0 + (i % 9) as f64).collect(),
        noise: 0.1,
        components_per_band: 12,
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self {
                preset: p,
                seed: 7,
                corpus: CorpusSpec::desk8(),
                montage: MontageConfig { name: Some("desk8".into()), path: None },
                divisions: DivisionRules::desk8(),
                thresholds: ThresholdConfig::standard(),
                clean: CleanConfig::default(),
                split: SplitConfig { held_out_per_class: 1, stride: 256, val_segments: 8, max_train_segments: 120 },
                gan: GanFormerConfig { epochs: 3, ..GanFormerConfig::desk() },
                diffusion: DiffConfig { train_steps: 150, ..DiffConfig::desk() },
                evaluation: EvalConfig { d_threshold: 0.3, window: 250, folds: 5 },
            },
            Preset::Paper => Self {
                preset: p,
                seed: 7,
                corpus: corpus32(),
                montage: MontageConfig { name: Some("faced32".into()), path: None },
                divisions: DivisionRules::faced32(),
                thresholds: ThresholdConfig::standard(),
                clean: CleanConfig::default(),
                split: SplitConfig { held_out_per_class: 1, stride: 7500, val_segments: 1, max_train_segments: 1_000_000 },
                gan: GanFormerConfig::paper(),
                diffusion: DiffConfig::paper(),
                evaluation: EvalConfig { d_threshold: 0.3, window: 250, folds: 10 },
            },
        }
    }

    /// The preset named by `flag`, else by the overlay's `preset` key, else
    /// desk, with every key of `overlay` applied on top. Tables merge recursively; any
    /// other value replaces the preset's.
    pub fn resolve(flag: Option<Preset>, overlay: Option<&str>) -> Result<Self> {
        let table: toml::Table = match overlay {
            Some(text) => text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        let from_file = match table.get("preset") {
            Some(v) => Some(
                Preset::deserialize(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            ),
            None => None,
        };
        let preset = flag.or(from_file).unwrap_or(Preset::Desk);
        let mut base = toml::Value::try_from(Self::preset(preset)).map_err(|e| CliError::Config(e.to_string()))?;
        let mut top = table;
        top.insert("preset".into(), toml::Value::String(preset.name().into()));
        merge(&mut base, toml::Value::Table(top));
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(flag: Option<Preset>, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                Self::resolve(flag, Some(&text))
            }
            None => Self::resolve(flag, None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.montage.load()?;
        self.thresholds.resolve(&m).validate()?;
        self.clean.validate()?;
        self.gan.validate()?;
        self.diffusion.validate()?;
        if self.diffusion.crop > self.gan.seq_len {
            return Err(CliError::Config(format!(
                "diffusion crop {} exceeds gan seq_len {}",
                self.diffusion.crop, self.gan.seq_len
            )));
        }
        for c in &self.corpus.channels {
            if !m.contains(c) {
                return Err(CliError::Config(format!("corpus channel {c} is not on the montage")));
            }
        }
        let s = &self.split;
        if s.stride == 0 || s.val_segments == 0 || s.max_train_segments == 0 {
            return Err(CliError::Config("split stride, val_segments and max_train_segments must be positive".into()));
        }
        if s.held_out_per_class == 0 || s.held_out_per_class >= self.corpus.recordings_per_class {
            return Err(CliError::Config(format!(
                "held_out_per_class {} must leave training recordings out of {}",
                s.held_out_per_class, self.corpus.recordings_per_class
            )));
        }
        let e = &self.evaluation;
        if !(e.d_threshold > 0.0) || e.window < 64 || e.folds < 2 {
            return Err(CliError::Config("evaluation needs d_threshold > 0, window >= 64 and folds >= 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
