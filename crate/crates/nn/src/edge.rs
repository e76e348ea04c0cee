//! One trained generator per directed channel pair: GAN for the one-stage
//! bias, diffusion refiner for the two-stage bias.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use yoas_core::synthesis::{edge_seed, BiasModel};
use yoas_core::Scalar;

use crate::diffusion::{Calibration, DiffConfig, DiffModel};
use crate::error::{NnError, Result};
use crate::gan::{GanFormerConfig, GanModel, Norm, Pairs, TrainLog};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub gan: GanFormerConfig,
    pub diff: DiffConfig,
}

impl EdgeConfig {
    pub fn desk() -> Self {
        Self { gan: GanFormerConfig::desk(), diff: DiffConfig::desk() }
    }

    pub fn paper() -> Self {
        Self { gan: GanFormerConfig::paper(), diff: DiffConfig::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        self.diff.validate()
    }
}

#[derive(Debug, Clone)]
pub struct EdgeReport {
    pub gan: TrainLog,
    pub diff_loss: Vec<f64>,
    pub calibration: Calibration,
}

#[derive(Debug, Clone)]
pub struct EdgeModel<T: Scalar> {
    pub source: String,
    pub target: String,
    pub gan: GanModel<T>,
    pub diff: DiffModel<T>,
}

/// Window starts covering `len` samples with windows of `w`; the last
/// window is aligned to the end.
fn window_starts(len: usize, w: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..len / w).map(|i| i * w).collect();
    if !len.is_multiple_of(w) {
        s.push(len - w);
    }
    s
}

impl<T: Scalar> EdgeModel<T> {
    pub fn new(source: &str, target: &str, position: [f64; 2], cfg: &EdgeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.diff.crop > cfg.gan.seq_len {
            return Err(NnError::Config(format!("crop {} exceeds seq_len {}", cfg.diff.crop, cfg.gan.seq_len)));
        }
        Ok(Self {
            source: source.into(),
            target: target.into(),
            gan: GanModel::build(&cfg.gan, seed)?,
            diff: DiffModel::build(&cfg.diff, position, seed ^ 0xd1ff)?,
        })
    }

    /// `train` and `val` pair source segments with real bias segments
    /// (target minus source). The validation pairs also calibrate the
    /// diffusion stop step against threshold `p`.
    pub fn fit(&mut self, train: Pairs<'_>, val: Pairs<'_>, p: f64, seed: u64) -> Result<EdgeReport> {
        if val.is_empty() {
            return Err(NnError::Config("edge training needs validation segments".into()));
        }
        let gan = self.fit_gan(train, val, seed)?;
        let (diff_loss, calibration) = self.fit_diffusion(train, val, p, seed)?;
        Ok(EdgeReport { gan, diff_loss, calibration })
    }

    /// First stage only: adversarial training of the one-stage generator.
    pub fn fit_gan(&mut self, train: Pairs<'_>, val: Pairs<'_>, seed: u64) -> Result<TrainLog> {
        self.gan.train(train, val, seed)
    }

    /// Second stage: trains the refiner on one-stage biases from the current
    /// generator, then calibrates its stop step on `val`.
    pub fn fit_diffusion(&mut self, train: Pairs<'_>, val: Pairs<'_>, p: f64, seed: u64) -> Result<(Vec<f64>, Calibration)> {
        if val.is_empty() {
            return Err(NnError::Config("edge training needs validation segments".into()));
        }
        let one = self.gan.generate(train.refs, seed ^ 1)?;
        let diff_loss = self.diff.train(&one, train.refs, train.biases, seed ^ 2)?;
        let one_val = self.gan.generate(val.refs, seed ^ 3)?;
        let targets: Vec<Vec<f64>> =
            val.refs.iter().zip(val.biases).map(|(r, b)| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        let calibration = self.diff.calibrate(&one_val, val.refs, &targets, p, seed ^ 4)?;
        Ok((diff_loss, calibration))
    }

    /// Two-stage bias for a source signal of any length ≥ `seq_len`.
    pub fn generate(&self, signal: &[f64], seed: u64) -> Result<Vec<f64>> {
        let w = self.gan.cfg.seq_len;
        if signal.len() < w {
            return Err(NnError::Shape { op: "edge_generate", detail: format!("{} samples, need at least {w}", signal.len()) });
        }
        let starts = window_starts(signal.len(), w);
        let windows: Vec<Vec<f64>> = starts.iter().map(|&s| signal[s..s + w].to_vec()).collect();
        let one = self.gan.generate(&windows, seed)?;
        let two = self.diff.sample(&one, &windows, seed ^ 0x7)?;
        let mut out = vec![0.0; signal.len()];
        for (&s, b) in starts.iter().zip(&two) {
            out[s..s + w].copy_from_slice(b);
        }
        Ok(out)
    }

    pub fn to_params(&self) -> ParamSet<T> {
        let mut ps = ParamSet::new();
        for p in self.gan.to_params().iter() {
            ps.add(format!("gan.{}", p.name), p.value.clone());
        }
        for p in self.diff.params.iter() {
            ps.add(format!("diff.{}", p.name), p.value.clone());
        }
        ps.add("diff.norm", Tensor::from_f64(&[4], &self.diff.norm.to_array()).expect("sized"));
        let meta = [self.diff.t_hat as f64, self.diff.position[0], self.diff.position[1]];
        ps.add("diff.meta", Tensor::from_f64(&[3], &meta).expect("sized"));
        ps
    }

    pub fn from_params(source: &str, target: &str, cfg: &EdgeConfig, ps: &ParamSet<T>) -> Result<Self> {
        let mut m = Self::new(source, target, [0.0, 0.0], cfg, 0)?;
        let mut gan = ParamSet::new();
        let mut diff = ParamSet::new();
        let mut norm = None;
        let mut meta = None;
        for p in ps.iter() {
            if let Some(n) = p.name.strip_prefix("gan.") {
                gan.add(n, p.value.clone());
            } else if p.name == "diff.norm" {
                norm = Some(p.value.to_f64());
            } else if p.name == "diff.meta" {
                meta = Some(p.value.to_f64());
            } else if let Some(n) = p.name.strip_prefix("diff.") {
                diff.add(n, p.value.clone());
            } else {
                return Err(NnError::Checkpoint(format!("unexpected parameter {}", p.name)));
            }
        }
        m.gan = GanModel::from_params(&cfg.gan, &gan)?;
        m.diff.params.load_values(&diff)?;
        match (norm.as_deref(), meta.as_deref()) {
            (Some(&[a, b, c, d]), Some(&[t, x, y])) => {
                m.diff.norm = Norm::from_array([a, b, c, d]);
                m.diff.t_hat = t as usize;
                m.diff.position = [x, y];
            }
            _ => return Err(NnError::Checkpoint("missing diffusion metadata".into())),
        }
        if m.diff.t_hat > m.diff.schedule().steps() {
            return Err(NnError::Checkpoint(format!("stop step {} beyond schedule", m.diff.t_hat)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_params().save(path)
    }

    pub fn load(source: &str, target: &str, cfg: &EdgeConfig, path: &Path) -> Result<Self> {
        Self::from_params(source, target, cfg, &ParamSet::load(path)?)
    }
}

/// Trained edges keyed by `(source, target)`.
#[derive(Debug, Clone, Default)]
pub struct EdgeRegistry<T: Scalar> {
    pub models: BTreeMap<(String, String), EdgeModel<T>>,
}

impl<T: Scalar> EdgeRegistry<T> {
    pub fn insert(&mut self, m: EdgeModel<T>) {
        self.models.insert((m.source.clone(), m.target.clone()), m);
    }

    pub fn get(&self, source: &str, target: &str) -> Option<&EdgeModel<T>> {
        self.models.get(&(source.to_string(), target.to_string()))
    }
}

impl<T: Scalar> BiasModel for EdgeRegistry<T> {
    fn has_edge(&self, source: &str, target: &str) -> bool {
        self.get(source, target).is_some()
    }

    fn bias(&self, source: &str, target: &str, signal: &[f64], seed: u64) -> yoas_core::Result<Vec<f64>> {
        let m = self.get(source, target).ok_or_else(|| yoas_core::Error::ModelMissing {
            source_channel: source.into(),
            target: target.into(),
        })?;
        m.generate(signal, edge_seed(seed, source, target)).map_err(|e| yoas_core::Error::Model(e.to_string()))
    }
}
