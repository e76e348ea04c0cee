//! Per-edge training across the worker pool. Every ordered channel pair gets
//! its own generator, seeded from the run seed and the pair names, so the
//! result does not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use yoas_core::synthesis::edge_seed;
use yoas_core::Montage;
use yoas_nn::diffusion::Calibration;
use yoas_nn::gan::Pairs;
use yoas_nn::{EdgeConfig, EdgeModel};

use super::data::Segments;
use super::{edge_stem, ensure_dir, read_json, write_json, write_text, Runner};
use crate::error::Result;

/// The scalar the generators train in.
pub(super) type Model = EdgeModel<f32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSummary {
    pub source: String,
    pub target: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub source: String,
    pub target: String,
    pub final_loss: f64,
    pub t_hat: usize,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index<S> {
    pub edges: Vec<S>,
}

pub(super) fn edge_config(r: &Runner) -> EdgeConfig {
    EdgeConfig { gan: r.cfg.gan.clone(), diff: r.cfg.diffusion.clone() }
}

/// Every ordered pair of distinct montage channels, source-major.
pub(super) fn all_pairs(m: &Montage) -> Vec<(String, String)> {
    let names = m.names();
    let mut out = Vec::new();
    for s in &names {
        for t in &names {
            if s != t {
                out.push((s.clone(), t.clone()));
            }
        }
    }
    out
}

fn position(m: &Montage, source: &str, target: &str) -> Result<[f64; 2]> {
    let (a, b) = (m.electrode(source)?.pos, m.electrode(target)?.pos);
    Ok([b[0] - a[0], b[1] - a[1]])
}

pub(super) fn gan_checkpoint(r: &Runner, s: &str, t: &str) -> std::path::PathBuf {
    r.path("models").join(format!("{}.gan.ckpt", edge_stem(s, t)))
}

pub(super) fn checkpoint(r: &Runner, s: &str, t: &str) -> std::path::PathBuf {
    r.path("models").join(format!("{}.ckpt", edge_stem(s, t)))
}

pub(super) fn calibration_path(r: &Runner, s: &str, t: &str) -> std::path::PathBuf {
    r.path("models").join(format!("{}.calib.json", edge_stem(s, t)))
}

pub(super) fn train_gan(r: &Runner) -> Result<()> {
    let montage = r.cfg.montage.load()?;
    let segs = Segments::load(r)?;
    let cfg = edge_config(r);
    ensure_dir(&r.path("models"))?;
    let pairs = all_pairs(&montage);
    let total = pairs.len();
    let summaries = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (s, t))| -> Result<GanSummary> {
            let seed = edge_seed(r.cfg.seed, s, t);
            let (tr, tb) = segs.pairs(s, t, &segs.train)?;
            let (vr, vb) = segs.pairs(s, t, &segs.val)?;
            let mut m = Model::new(s, t, position(&montage, s, t)?, &cfg, seed)?;
            let log = m.fit_gan(Pairs { refs: &tr, biases: &tb }, Pairs { refs: &vr, biases: &vb }, seed)?;
            m.save(&gan_checkpoint(r, s, t))?;
            write_text(&r.path("logs/gan").join(format!("{}.csv", edge_stem(s, t))), &log.to_csv())?;
            let best = log.epochs.iter().find(|e| e.epoch == log.best_epoch).map_or(f64::NAN, |e| e.val_metric);
            log::debug!("gan {s}->{t} ({}/{total}): best epoch {} metric {best:.4}", i + 1, log.best_epoch);
            Ok(GanSummary {
                source: s.clone(),
                target: t.clone(),
                epochs: log.epochs.len(),
                best_epoch: log.best_epoch,
                best_val_metric: best,
                stopped_early: log.stopped_early,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&r.path("models/gan.json"), &Index { edges: summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub t_hat: usize,
    pub below_threshold: bool,
    /// Mean correlation distance to the target at each reverse step.
    pub trace: Vec<f64>,
    /// Generated biases for the validation segments at the chosen step.
    pub biases: Vec<Vec<f64>>,
}

impl From<Calibration> for CalibrationRecord {
    fn from(c: Calibration) -> Self {
        Self { t_hat: c.t_hat, below_threshold: c.below_threshold, trace: c.trace, biases: c.biases }
    }
}

pub(super) fn train_diff(r: &Runner) -> Result<()> {
    let montage = r.cfg.montage.load()?;
    let _: Index<GanSummary> = read_json(&r.path("models/gan.json"))?;
    let segs = Segments::load(r)?;
    let cfg = edge_config(r);
    let p1 = r.cfg.thresholds.p1;
    let summaries = all_pairs(&montage)
        .par_iter()
        .map(|(s, t)| -> Result<DiffSummary> {
            let seed = edge_seed(r.cfg.seed, s, t);
            let (tr, tb) = segs.pairs(s, t, &segs.train)?;
            let (vr, vb) = segs.pairs(s, t, &segs.val)?;
            let mut m = Model::load(s, t, &cfg, &gan_checkpoint(r, s, t))?;
            let (loss, cal) =
                m.fit_diffusion(Pairs { refs: &tr, biases: &tb }, Pairs { refs: &vr, biases: &vb }, p1, seed)?;
            m.save(&checkpoint(r, s, t))?;
            let mut csv = String::from("step,loss\n");
            for (k, l) in loss.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", k + 1));
            }
            write_text(&r.path("logs/diffusion").join(format!("{}.csv", edge_stem(s, t))), &csv)?;
            let summary = DiffSummary {
                source: s.clone(),
                target: t.clone(),
                final_loss: loss.last().copied().unwrap_or(f64::NAN),
                t_hat: cal.t_hat,
                below_threshold: cal.below_threshold,
            };
            write_json(&calibration_path(r, s, t), &CalibrationRecord::from(cal))?;
            log::debug!("diffusion {s}->{t}: t_hat {}", summary.t_hat);
            Ok(summary)
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&r.path("models/diff.json"), &Index { edges: summaries })
}
