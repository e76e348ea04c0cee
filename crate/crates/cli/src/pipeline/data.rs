//! Corpus generation, division and bias extraction, cleaning, and the
//! segment tables the training stages draw from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use yoas_core::biasing::{extract_bias, reconstruct, BiasSet};
use yoas_core::preprocess::{clean_bias_set, clean_group};
use yoas_core::recording::{load, save, synthesize_corpus, Format};
use yoas_core::{initial_division, window_starts, Recording, RegionalDivision};

use super::{ensure_dir, read_json, write_json, Runner};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub file: String,
    pub label: u32,
    /// Position of the recording within its class.
    pub ordinal: usize,
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub channels: Vec<String>,
    pub rate: f64,
    pub recordings: Vec<CorpusEntry>,
}

impl CorpusIndex {
    pub fn training(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.recordings.iter().filter(|e| !e.held_out)
    }

    pub fn held_out(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.recordings.iter().filter(|e| e.held_out)
    }
}

pub(super) fn stem(file: &str) -> &str {
    file.strip_suffix(".yeeg").unwrap_or(file)
}

pub(super) fn corpus_index(r: &Runner) -> Result<CorpusIndex> {
    read_json(&r.path("corpus/index.json"))
}

pub(super) fn load_recording(r: &Runner, rel: &str) -> Result<Recording> {
    Ok(load(r.path(rel), Format::Yeeg)?)
}

pub(super) fn divisions(r: &Runner) -> Result<Vec<RegionalDivision>> {
    read_json(&r.path("divisions.json"))
}

pub(super) fn gen_corpus(r: &Runner) -> Result<()> {
    let spec = &r.cfg.corpus;
    let recs = synthesize_corpus(spec, r.cfg.seed)?;
    let per = spec.recordings_per_class;
    let keep = per - r.cfg.split.held_out_per_class;
    ensure_dir(&r.path("corpus"))?;
    let mut entries = Vec::with_capacity(recs.len());
    for (i, rec) in recs.iter().enumerate() {
        let file = format!("rec_{i:02}.yeeg");
        save(r.path("corpus").join(&file), Format::Yeeg, rec)?;
        entries.push(CorpusEntry { file, label: (i / per) as u32, ordinal: i % per, held_out: i % per >= keep });
    }
    let index = CorpusIndex { channels: spec.channels.clone(), rate: spec.rate, recordings: entries };
    write_json(&r.path("corpus/index.json"), &index)
}

pub(super) fn prepare(r: &Runner) -> Result<()> {
    let montage = r.cfg.montage.load()?;
    let index = corpus_index(r)?;
    let divs = initial_division(&montage, &r.cfg.divisions)?;
    for d in &divs {
        if let Some(m) = d.members.iter().find(|m| !index.channels.contains(m)) {
            return Err(CliError::Config(format!("division {d} needs channel {m}, which the corpus lacks")));
        }
    }
    ensure_dir(&r.path("bias"))?;
    for e in &index.recordings {
        let rec = load_recording(r, &format!("corpus/{}", e.file))?;
        for d in divs.iter().filter(|d| d.members.len() > 1) {
            extract_bias(&rec, d)?.save(r.path("bias").join(format!("{}_rd{}.yeeg", stem(&e.file), d.id)))?;
        }
    }
    write_json(&r.path("divisions.json"), &divs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanEntry {
    pub file: String,
    pub label: u32,
    /// Samples removed as outliers, summed over channels.
    pub removed: usize,
}

/// Cleans each training recording division by division: the reference on
/// its own, the biases as one group, then members are rebuilt from the
/// cleaned reference and biases.
pub(super) fn clean(r: &Runner) -> Result<()> {
    let index = corpus_index(r)?;
    let divs = divisions(r)?;
    ensure_dir(&r.path("clean"))?;
    let mut out = Vec::new();
    for e in index.training() {
        let rec = load_recording(r, &format!("corpus/{}", e.file))?;
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut removed = 0;
        for d in &divs {
            let (mut refc, n) = clean_group(&[rec.channel_vec(&d.reference)?], &r.cfg.clean)?;
            removed += n;
            let refc = refc.remove(0);
            if d.members.len() > 1 {
                let raw = BiasSet::load(r.path("bias").join(format!("{}_rd{}.yeeg", stem(&e.file), d.id)))?;
                let (cleaned, n) = clean_bias_set(&raw, &r.cfg.clean)?;
                removed += n;
                for (name, b) in cleaned.entries() {
                    rows.insert(name.clone(), reconstruct(b, &refc)?);
                }
            }
            rows.insert(d.reference.clone(), refc);
        }
        let names = rec.channel_names().to_vec();
        let data = names
            .iter()
            .map(|n| {
                rows.remove(n).ok_or_else(|| CliError::Config(format!("channel {n} belongs to no division")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cleaned = Recording::from_rows(names, data, rec.rate())?.with_label(rec.label);
        save(r.path("clean").join(&e.file), Format::Yeeg, &cleaned)?;
        out.push(CleanEntry { file: e.file.clone(), label: e.label, removed });
    }
    write_json(&r.path("clean/index.json"), &out)
}

/// Windows of every channel across the cleaned training recordings, split
/// into validation and training indices shared by all channels.
pub(super) struct Segments {
    pub by_channel: BTreeMap<String, Vec<Vec<f64>>>,
    pub val: Vec<usize>,
    pub train: Vec<usize>,
}

impl Segments {
    pub fn load(r: &Runner) -> Result<Self> {
        let entries: Vec<CleanEntry> = read_json(&r.path("clean/index.json"))?;
        let w = r.cfg.gan.seq_len;
        let mut by_channel: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for e in &entries {
            let rec = load_recording(r, &format!("clean/{}", e.file))?;
            let starts = window_starts(rec.n_samples(), w, r.cfg.split.stride)?;
            for name in rec.channel_names() {
                let x = rec.channel_vec(name)?;
                by_channel.entry(name.clone()).or_default().extend(starts.iter().map(|&s| x[s..s + w].to_vec()));
            }
        }
        let n = by_channel.values().next().map_or(0, Vec::len);
        let (val, train) = split_indices(n, r.cfg.split.val_segments, r.cfg.split.max_train_segments)?;
        Ok(Self { by_channel, val, train })
    }

    pub fn channel(&self, name: &str) -> Result<&[Vec<f64>]> {
        self.by_channel
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| CliError::Config(format!("no training segments for channel {name}")))
    }

    /// `(source segments, target - source)` at the given indices.
    pub fn pairs(&self, source: &str, target: &str, idx: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (s, t) = (self.channel(source)?, self.channel(target)?);
        let refs: Vec<Vec<f64>> = idx.iter().map(|&i| s[i].clone()).collect();
        let bias = idx.iter().map(|&i| t[i].iter().zip(&s[i]).map(|(y, x)| y - x).collect()).collect();
        Ok((refs, bias))
    }
}

/// `val` evenly spaced indices out of `n`, and up to `max_train` of the
/// rest, also evenly spaced.
fn split_indices(n: usize, val: usize, max_train: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < val + 1 {
        return Err(CliError::Config(format!("{n} training segments cannot reserve {val} for validation")));
    }
    let v: Vec<usize> = (0..val).map(|k| (2 * k + 1) * n / (2 * val)).collect();
    let rest: Vec<usize> = (0..n).filter(|i| !v.contains(i)).collect();
    let take = rest.len().min(max_train);
    let train = (0..take).map(|k| rest[k * rest.len() / take]).collect();
    Ok((v, train))
}
