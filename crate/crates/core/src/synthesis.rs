//! Final assembly: walk a plan from the measured references and generate
//! every other channel exactly once.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::biasing::{negate, reconstruct};
use crate::error::{Error, Result};
use crate::paths::{correlation_distance, EdgeKind, PathEdge, SynthesisPlan};
use crate::recording::Recording;

/// Trained per-edge generators: the bias that turns `signal` (the source
/// channel) into the target channel.
pub trait BiasModel {
    fn has_edge(&self, source: &str, target: &str) -> bool;
    fn bias(&self, source: &str, target: &str, signal: &[f64], seed: u64) -> Result<Vec<f64>>;
}

/// Stable 64-bit FNV-1a, used to derive per-edge seeds.
pub fn edge_seed(seed: u64, source: &str, target: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in source.bytes().chain([0u8]).chain(target.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Picks the candidate with the smallest score; ties go to the
/// lexicographically-first source.
pub fn choose_source<'a>(candidates: &[&'a PathEdge]) -> Result<&'a PathEdge> {
    candidates
        .iter()
        .copied()
        .min_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.source.cmp(&b.source)))
        .ok_or_else(|| Error::Plan("no candidate edge".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyEntry {
    pub channel: String,
    /// `None` for measured references.
    pub source: Option<String>,
    pub kind: Option<EdgeKind>,
    pub score: Option<f64>,
    /// Correlation distance to ground truth, when supplied.
    pub achieved: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub entries: Vec<AssemblyEntry>,
}

impl AssemblyReport {
    /// Fills `achieved` with `D(generated, truth)` for every generated channel.
    pub fn score_against(&mut self, generated: &Recording, truth: &Recording) -> Result<()> {
        for e in self.entries.iter_mut().filter(|e| e.source.is_some()) {
            let d = correlation_distance(
                generated.channel(&e.channel)?.as_slice().expect("row is contiguous"),
                truth.channel(&e.channel)?.as_slice().expect("row is contiguous"),
            )?;
            e.achieved = Some(d);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn generate_edge(
    e: &PathEdge,
    have: &BTreeMap<String, Vec<f64>>,
    models: &dyn BiasModel,
    seed: u64,
) -> Result<Vec<f64>> {
    let src = &have[&e.source];
    let step = |from: &str, to: &str, signal: &[f64]| -> Result<Vec<f64>> {
        if !models.has_edge(from, to) {
            return Err(Error::ModelMissing { source_channel: from.to_string(), target: to.to_string() });
        }
        let b = models.bias(from, to, signal, edge_seed(seed, from, to))?;
        reconstruct(&b, signal)
    };
    match &e.kind {
        EdgeKind::Direct | EdgeKind::Mutual => step(&e.source, &e.target, src),
        EdgeKind::Indirect { via } => {
            let mid = step(&e.source, via, src)?;
            step(via, &e.target, &mid)
        }
        EdgeKind::Inverted => Ok(negate(src)),
    }
}

/// Generates every plan channel from the reference channels in `references`.
///
/// Channels are produced in rounds: each round every pending channel picks,
/// among edges whose source is already available, the one chosen by
/// [`choose_source`]. References are copied unchanged. The output follows
/// `channel_order`, which must list every plan channel once.
pub fn yoas_assemble(
    plan: &SynthesisPlan,
    references: &Recording,
    models: &dyn BiasModel,
    channel_order: &[String],
    seed: u64,
) -> Result<(Recording, AssemblyReport)> {
    let all = plan.channels();
    let mut sorted_order = channel_order.to_vec();
    sorted_order.sort();
    let mut sorted_all = all.clone();
    sorted_all.sort();
    if sorted_order != sorted_all {
        return Err(Error::Plan("channel order does not match the plan's channels".into()));
    }
    let mut have: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut used: BTreeMap<String, &PathEdge> = BTreeMap::new();
    for r in &plan.reference_set {
        have.insert(r.clone(), references.channel_vec(r)?);
    }
    loop {
        let pending: Vec<&String> = all.iter().filter(|c| !have.contains_key(*c)).collect();
        if pending.is_empty() {
            break;
        }
        let mut produced = Vec::new();
        for t in pending {
            let cands: Vec<&PathEdge> =
                plan.edges.iter().filter(|e| e.target == *t && have.contains_key(&e.source)).collect();
            if cands.is_empty() {
                continue;
            }
            let e = choose_source(&cands)?;
            produced.push((t.clone(), generate_edge(e, &have, models, seed)?, e));
        }
        if produced.is_empty() {
            let stuck: Vec<&String> = all.iter().filter(|c| !have.contains_key(*c)).collect();
            return Err(Error::Plan(format!("no edge reaches {stuck:?} from the available channels")));
        }
        for (t, sig, e) in produced {
            have.insert(t.clone(), sig);
            used.insert(t, e);
        }
    }
    let t = references.n_samples();
    let mut data = Array2::<f64>::zeros((channel_order.len(), t));
    let mut entries = Vec::with_capacity(channel_order.len());
    for (i, c) in channel_order.iter().enumerate() {
        let sig = &have[c];
        if sig.len() != t {
            return Err(Error::Shape(format!("generated {c} has {} samples, expected {t}", sig.len())));
        }
        data.row_mut(i).iter_mut().zip(sig).for_each(|(o, v)| *o = *v);
        let e = used.get(c);
        entries.push(AssemblyEntry {
            channel: c.clone(),
            source: e.map(|e| e.source.clone()),
            kind: e.map(|e| e.kind.clone()),
            score: e.map(|e| e.score),
            achieved: None,
        });
    }
    let out = Recording::new(channel_order.to_vec(), data, references.rate())?.with_label(references.label);
    Ok((out, AssemblyReport { entries }))
}
