//! Assembly of the held-out recordings and the evaluation report.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use yoas_core::evaluation::{classify, de_features, default_bands, psd, ClassifierKind, ClassifyReport, Split};
use yoas_core::paths::{correlation_distance, EdgeKind, SynthesisPlan};
use yoas_core::recording::{save, Format, BANDS};
use yoas_core::synthesis::{edge_seed, yoas_assemble, AssemblyEntry};
use yoas_core::{window_starts, Recording};
use yoas_nn::EdgeRegistry;

use super::data::{corpus_index, load_recording, CorpusEntry};
use super::train::{checkpoint, edge_config, Model};
use super::{edge_stem, ensure_dir, read_json, write_json, write_text, Runner};
use crate::error::{CliError, Result};
use crate::plot::{line_chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingReport {
    pub file: String,
    pub label: u32,
    pub entries: Vec<AssemblyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReports {
    pub recordings: Vec<RecordingReport>,
}

/// Ordered pairs whose generators a plan can call.
fn model_pairs(plan: &SynthesisPlan) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for e in &plan.edges {
        match &e.kind {
            EdgeKind::Direct | EdgeKind::Mutual => {
                out.insert((e.source.clone(), e.target.clone()));
            }
            EdgeKind::Indirect { via } => {
                out.insert((e.source.clone(), via.clone()));
                out.insert((via.clone(), e.target.clone()));
            }
            EdgeKind::Inverted => {}
        }
    }
    out
}

fn load_plan(r: &Runner) -> Result<SynthesisPlan> {
    let plan: SynthesisPlan = read_json(&r.path("plan.json"))?;
    plan.validate()?;
    Ok(plan)
}

/// Rebuilds every held-out recording from its reference channels alone.
pub(super) fn synthesize(r: &Runner) -> Result<()> {
    let plan = load_plan(r)?;
    let index = corpus_index(r)?;
    let cfg = edge_config(r);
    let mut reg = EdgeRegistry::<f32>::default();
    for (s, t) in model_pairs(&plan) {
        reg.insert(Model::load(&s, &t, &cfg, &checkpoint(r, &s, &t))?);
    }
    ensure_dir(&r.path("synth"))?;
    let held: Vec<&CorpusEntry> = index.held_out().collect();
    let reports = held
        .par_iter()
        .map(|e| -> Result<RecordingReport> {
            let truth = load_recording(r, &format!("corpus/{}", e.file))?;
            let refs = truth.select(&plan.reference_set)?;
            let seed = edge_seed(r.cfg.seed, &e.file, "assemble");
            let (generated, mut report) = yoas_assemble(&plan, &refs, &reg, &index.channels, seed)?;
            let generated = generated.with_label(truth.label);
            save(r.path("synth").join(&e.file), Format::Yeeg, &generated)?;
            report.score_against(&generated, &truth)?;
            Ok(RecordingReport { file: e.file.clone(), label: e.label, entries: report.entries })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&r.path("assembly_report.json"), &AssemblyReports { recordings: reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub recording: String,
    pub channel: String,
    pub source: String,
    pub kind: String,
    /// Correlation distance to ground truth over the whole recording.
    pub d: f64,
    /// Fraction of evaluation windows under the threshold.
    pub window_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub generated_channels: usize,
    pub below_threshold: usize,
    /// Share of generated held-out channels with `d` under the threshold.
    pub rate: f64,
    /// Same, counted over evaluation windows.
    pub window_rate: f64,
    pub channels: Vec<ChannelScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Channels the features are computed from; measured references are
    /// excluded so only generated signal carries the class information.
    pub channels: Vec<String>,
    pub samples: usize,
    pub classes: usize,
    pub chance: f64,
    pub naive_bayes: ClassifyReport,
    pub shuffled_naive_bayes: ClassifyReport,
    /// Naive-Bayes accuracy minus the shuffled-label accuracy.
    pub margin: f64,
    pub logistic: ClassifyReport,
    /// Naive Bayes on the same channels of the real recordings.
    pub truth_naive_bayes: ClassifyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumScore {
    pub channel: String,
    /// `|P_gen - P_true| / |P_true|` over mean Welch densities.
    pub relative_l2: f64,
    /// Generated over true band power for the delta, theta, alpha and beta bands.
    pub band_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub d_threshold: f64,
    pub held_out: HeldOut,
    pub classification: Classification,
    pub spectra: Vec<SpectrumScore>,
}

fn windows(x: &[f64], w: usize) -> Result<Vec<&[f64]>> {
    Ok(window_starts(x.len(), w, w)?.into_iter().map(|s| &x[s..s + w]).collect())
}

fn features(recs: &[Recording], channels: &[String], w: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let bands = default_bands();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in recs {
        let label = rec.label.ok_or_else(|| CliError::Config("recording without a class label".into()))? as usize;
        let rows: Vec<Vec<f64>> = channels.iter().map(|c| rec.channel_vec(c)).collect::<yoas_core::Result<_>>()?;
        let n = window_starts(rec.n_samples(), w, w)?.len();
        for k in 0..n {
            let mut f = Vec::with_capacity(channels.len() * bands.len());
            for row in &rows {
                f.extend(de_features(&row[k * w..(k + 1) * w], rec.rate(), &bands)?);
            }
            xs.push(f);
            ys.push(label);
        }
    }
    Ok((xs, ys))
}

fn mean_psd(signals: &[Vec<f64>], rate: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut freqs = Vec::new();
    let mut acc: Vec<f64> = Vec::new();
    for s in signals {
        let sp = psd(s, rate)?;
        if acc.is_empty() {
            acc = vec![0.0; sp.power.len()];
            freqs = sp.freqs.clone();
        }
        acc.iter_mut().zip(&sp.power).for_each(|(a, p)| *a += p / signals.len() as f64);
    }
    Ok((freqs, acc))
}

fn band_power(freqs: &[f64], p: &[f64], lo: f64, hi: f64) -> f64 {
    freqs.iter().zip(p).filter(|(f, _)| **f >= lo && **f < hi).map(|(_, v)| v).sum()
}

pub(super) fn evaluate(r: &Runner) -> Result<()> {
    let plan = load_plan(r)?;
    let reports: AssemblyReports = read_json(&r.path("assembly_report.json"))?;
    let ev = &r.cfg.evaluation;
    let mut truths = Vec::new();
    let mut gens = Vec::new();
    for rep in &reports.recordings {
        truths.push(load_recording(r, &format!("corpus/{}", rep.file))?);
        gens.push(load_recording(r, &format!("synth/{}", rep.file))?);
    }
    let generated: Vec<String> = plan.channels().into_iter().filter(|c| !plan.is_reference(c)).collect();

    let mut scores = Vec::new();
    let (mut win_total, mut win_below) = (0usize, 0usize);
    for ((rep, truth), gen) in reports.recordings.iter().zip(&truths).zip(&gens) {
        for e in rep.entries.iter().filter(|e| e.source.is_some()) {
            let d = e.achieved.ok_or_else(|| CliError::Artifact {
                path: r.path("assembly_report.json"),
                msg: format!("no achieved distance for {}", e.channel),
            })?;
            let (g, t) = (gen.channel_vec(&e.channel)?, truth.channel_vec(&e.channel)?);
            let (gw, tw) = (windows(&g, ev.window)?, windows(&t, ev.window)?);
            let below = gw
                .iter()
                .zip(&tw)
                .map(|(a, b)| correlation_distance(a, b).map(|v| v < ev.d_threshold))
                .collect::<yoas_core::Result<Vec<bool>>>()?
                .into_iter()
                .filter(|&b| b)
                .count();
            win_total += gw.len();
            win_below += below;
            scores.push(ChannelScore {
                recording: rep.file.clone(),
                channel: e.channel.clone(),
                source: e.source.clone().unwrap_or_default(),
                kind: e.kind.as_ref().map_or("", |k| k.name()).to_string(),
                d,
                window_rate: below as f64 / gw.len() as f64,
            });
        }
    }
    let below = scores.iter().filter(|s| s.d < ev.d_threshold).count();
    let held_out = HeldOut {
        generated_channels: scores.len(),
        below_threshold: below,
        rate: if scores.is_empty() { 1.0 } else { below as f64 / scores.len() as f64 },
        window_rate: if win_total == 0 { 1.0 } else { win_below as f64 / win_total as f64 },
        channels: scores,
    };

    let feature_channels = if generated.is_empty() { plan.channels() } else { generated.clone() };
    let (x, y) = features(&gens, &feature_channels, ev.window)?;
    let split = Split::KFold { k: ev.folds, seed: r.cfg.seed };
    let nb = classify(&x, &y, ClassifierKind::NaiveBayes, split)?;
    let mut shuffled = y.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(r.cfg.seed ^ 0x5bd1_e995));
    let nb_shuffled = classify(&x, &shuffled, ClassifierKind::NaiveBayes, split)?;
    let logistic = classify(&x, &y, ClassifierKind::Logistic, split)?;
    let (xt, yt) = features(&truths, &feature_channels, ev.window)?;
    let truth_nb = classify(&xt, &yt, ClassifierKind::NaiveBayes, split)?;
    let classes = y.iter().collect::<BTreeSet<_>>().len();
    let classification = Classification {
        channels: feature_channels,
        samples: x.len(),
        classes,
        chance: 1.0 / classes as f64,
        margin: nb.mean.acc - nb_shuffled.mean.acc,
        naive_bayes: nb,
        shuffled_naive_bayes: nb_shuffled,
        logistic,
        truth_naive_bayes: truth_nb,
    };

    let mut spectra = Vec::new();
    for ch in &generated {
        let g: Vec<Vec<f64>> = gens.iter().map(|rec| rec.channel_vec(ch)).collect::<yoas_core::Result<_>>()?;
        let t: Vec<Vec<f64>> = truths.iter().map(|rec| rec.channel_vec(ch)).collect::<yoas_core::Result<_>>()?;
        let rate = truths.first().map_or(1.0, |rec| rec.rate());
        let (freqs, pg) = mean_psd(&g, rate)?;
        let (_, pt) = mean_psd(&t, rate)?;
        let num: f64 = pg.iter().zip(&pt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = pt.iter().map(|b| b * b).sum::<f64>().sqrt();
        let band_ratio = BANDS
            .iter()
            .map(|&(lo, hi)| band_power(&freqs, &pg, lo, hi) / band_power(&freqs, &pt, lo, hi).max(1e-300))
            .collect();
        spectra.push(SpectrumScore { channel: ch.clone(), relative_l2: num / den.max(1e-300), band_ratio });
        let log = |p: &[f64]| -> Vec<(f64, f64)> {
            freqs.iter().zip(p).filter(|(f, _)| **f <= 50.0).map(|(f, v)| (*f, v.max(1e-12).log10())).collect()
        };
        let svg = line_chart(
            &format!("{ch}: mean spectrum over held-out recordings"),
            "frequency (Hz)",
            "log10 power (uV^2/Hz)",
            &[Series::new("generated", log(&pg)), Series::new("measured", log(&pt))],
        );
        write_text(&r.path("plots").join(format!("psd_{ch}.svg")), &svg)?;
    }
    for (s, t) in model_pairs(&plan) {
        plot_training(r, &s, &t)?;
    }
    let metrics = Metrics { d_threshold: ev.d_threshold, held_out, classification, spectra };
    log::info!(
        "held-out rate {:.3}, naive Bayes {:.3} vs shuffled {:.3}",
        metrics.held_out.rate,
        metrics.classification.naive_bayes.mean.acc,
        metrics.classification.shuffled_naive_bayes.mean.acc
    );
    write_json(&r.path("metrics.json"), &metrics)
}

fn read_csv(path: &std::path::Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Artifact { path: path.into(), msg: e.to_string() })
        })
        .collect()
}

fn plot_training(r: &Runner, s: &str, t: &str) -> Result<()> {
    let stem = edge_stem(s, t);
    let gan = read_csv(&r.path("logs/gan").join(format!("{stem}.csv")))?;
    let col = |rows: &[Vec<f64>], c: usize| -> Vec<(f64, f64)> { rows.iter().map(|row| (row[0], row[c])).collect() };
    let svg = line_chart(
        &format!("{s} -> {t}: adversarial training"),
        "epoch",
        "loss",
        &[Series::new("discriminator", col(&gan, 1)), Series::new("generator", col(&gan, 2))],
    );
    write_text(&r.path("plots").join(format!("gan_{stem}.svg")), &svg)?;
    let diff = read_csv(&r.path("logs/diffusion").join(format!("{stem}.csv")))?;
    let svg = line_chart(&format!("{s} -> {t}: denoiser training"), "step", "noise MSE", &[Series::new("loss", col(&diff, 1))]);
    write_text(&r.path("plots").join(format!("diffusion_{stem}.svg")), &svg)
}
