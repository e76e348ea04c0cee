//! Typed generation-path graph and its JSON form.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montage::RegionalDivision;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeKind {
    Direct,
    /// Source generates `via`, which in turn generates the target.
    Indirect { via: String },
    Mutual,
    /// Target is the negation of the (observed or generated) source.
    Inverted,
}

impl EdgeKind {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeKind::Direct => "direct",
            EdgeKind::Indirect { .. } => "indirect",
            EdgeKind::Mutual => "mutual",
            EdgeKind::Inverted => "inverted",
        }
    }
}

/// A feasible way to produce `target` from `source`; `score` is the achieved
/// correlation distance (for indirect edges, the worse of the two legs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEdge {
    pub source: String,
    pub target: String,
    #[serde(flatten)]
    pub kind: EdgeKind,
    pub score: f64,
}

impl PathEdge {
    pub fn new(source: impl Into<String>, target: impl Into<String>, kind: EdgeKind, score: f64) -> Result<Self> {
        let (source, target) = (source.into(), target.into());
        if source == target {
            return Err(Error::Plan(format!("edge {source} -> {target} is a self loop")));
        }
        if let EdgeKind::Indirect { via } = &kind {
            if *via == source || *via == target {
                return Err(Error::Plan(format!("indirect edge {source} -> {target} cannot pass through {via}")));
            }
        }
        Ok(Self { source, target, kind, score })
    }

    pub(crate) fn sort_key(&self) -> (&str, &str, &EdgeKind) {
        (&self.target, &self.source, &self.kind)
    }
}

/// Output of planning: merged divisions, the measured reference channels and
/// every feasible edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub divisions: Vec<RegionalDivision>,
    pub reference_set: Vec<String>,
    pub edges: Vec<PathEdge>,
    /// Channels that no reference could reach and which therefore stay measured.
    #[serde(default)]
    pub promoted: Vec<String>,
    /// References dropped by [`super::optimize_paths`].
    #[serde(default)]
    pub removed_references: Vec<String>,
}

impl SynthesisPlan {
    pub fn channels(&self) -> Vec<String> {
        self.divisions.iter().flat_map(|d| d.members.iter().cloned()).collect()
    }

    pub fn is_reference(&self, ch: &str) -> bool {
        self.reference_set.iter().any(|r| r == ch)
    }

    /// Checks disjoint divisions and full coverage from the reference set.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for d in &self.divisions {
            for m in &d.members {
                if !seen.insert(m.as_str()) {
                    return Err(Error::Plan(format!("channel {m} is in more than one division")));
                }
            }
        }
        for r in &self.reference_set {
            if !seen.contains(r.as_str()) {
                return Err(Error::Plan(format!("reference {r} is not a plan channel")));
            }
        }
        let reach = reachable_from(&self.reference_set, &self.edges);
        if let Some(c) = seen.iter().find(|c| !reach.contains(**c)) {
            return Err(Error::Plan(format!("channel {c} is unreachable from the reference set")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { offset: 0, line: e.line(), msg: e.to_string() })
    }
}

/// Channels obtainable from `refs` by repeatedly applying edges whose source
/// is already available.
pub fn reachable_from(refs: &[String], edges: &[PathEdge]) -> BTreeSet<String> {
    let mut have: BTreeSet<String> = refs.iter().cloned().collect();
    loop {
        let before = have.len();
        for e in edges {
            if have.contains(&e.source) && !have.contains(&e.target) {
                have.insert(e.target.clone());
            }
        }
        if have.len() == before {
            return have;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_json_shape() {
        let e = PathEdge::new("Fp1", "F3", EdgeKind::Indirect { via: "Fp2".into() }, 0.125).unwrap();
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"source":"Fp1","target":"F3","kind":"indirect","via":"Fp2","score":0.125}"#);
        assert_eq!(serde_json::from_str::<PathEdge>(&s).unwrap(), e);
    }

    #[test]
    fn invalid_edges() {
        assert!(PathEdge::new("a", "a", EdgeKind::Direct, 0.0).is_err());
        assert!(PathEdge::new("a", "b", EdgeKind::Indirect { via: "b".into() }, 0.0).is_err());
    }

    #[test]
    fn reachability_chains() {
        let e = |a: &str, b: &str| PathEdge::new(a, b, EdgeKind::Direct, 0.1).unwrap();
        let edges = vec![e("b", "c"), e("a", "b"), e("x", "y")];
        let r = reachable_from(&["a".into()], &edges);
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }
}
