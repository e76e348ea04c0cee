//! Edge refinement over all channel pairs, division merging and greedy
//! reference-set reduction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::plan::{reachable_from, EdgeKind, PathEdge, SynthesisPlan};
use super::{correlation_distance, Thresholds};
use crate::biasing::negate;
use crate::error::{Error, Result};
use crate::montage::{Montage, RegionalDivision};

/// Generated segments scored per ordered pair.
pub const DEFAULT_SCORE_SAMPLES: usize = 8;

/// Produces generated versions of `target` from `source`. Segment `k` of the
/// result must be aligned with observed segment `k` of `source`.
pub trait EdgeOracle {
    fn generate(&self, source: &str, target: &str) -> Result<Vec<Vec<f64>>>;
}

impl<F: Fn(&str, &str) -> Result<Vec<Vec<f64>>>> EdgeOracle for F {
    fn generate(&self, source: &str, target: &str) -> Result<Vec<Vec<f64>>> {
        self(source, target)
    }
}

/// Mean `D(O_source, C_target)` over the scored segments, or the reason it
/// could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub source: String,
    pub target: String,
    pub score: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paradigm1Result {
    pub scores: Vec<PairScore>,
    /// Feasible edges, sorted by target then source.
    pub edges: Vec<PathEdge>,
    /// Ordered pairs with no feasible edge of any kind.
    pub infeasible: Vec<PairScore>,
}

fn mean_distance(observed: &[Vec<f64>], generated: &[Vec<f64>], samples: usize) -> Result<f64> {
    let n = observed.len().min(generated.len()).min(samples);
    if n == 0 {
        return Err(Error::InvalidInput("no segments to score".into()));
    }
    let mut acc = 0.0;
    for k in 0..n {
        acc += correlation_distance(&observed[k], &generated[k])?;
    }
    Ok(acc / n as f64)
}

/// Scores every ordered pair of distinct channels with the oracle. Failures
/// are recorded per pair and never abort the sweep.
pub fn score_pairs(
    channels: &[String],
    observed: &BTreeMap<String, Vec<Vec<f64>>>,
    oracle: &dyn EdgeOracle,
    samples: usize,
) -> Vec<PairScore> {
    let mut out = Vec::new();
    for a in channels {
        for b in channels {
            if a == b {
                continue;
            }
            let res = observed
                .get(a)
                .ok_or_else(|| Error::NotFound(format!("no observed segments for {a}")))
                .and_then(|o| mean_distance(o, &oracle.generate(a, b)?, samples));
            let (score, note) = match res {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(PairScore { source: a.clone(), target: b.clone(), score, note });
        }
    }
    out
}

/// Classifies every ordered pair as Direct (hypothesis 1), Indirect through
/// the intermediate minimising the worse leg (hypothesis 2), Mutual
/// (hypothesis 3), or infeasible, checked in that order. Independently, a
/// pair gets an Inverted edge when `Dis <= L3` and `D(O_target, -O_source)
/// <= P1`.
pub fn paradigm1(
    channels: &[String],
    observed: &BTreeMap<String, Vec<Vec<f64>>>,
    oracle: &dyn EdgeOracle,
    montage: &Montage,
    th: &Thresholds,
    samples: usize,
) -> Result<Paradigm1Result> {
    th.validate()?;
    let mut sorted: Vec<String> = channels.to_vec();
    sorted.sort();
    sorted.dedup();
    for c in &sorted {
        montage.index_of(c)?;
    }
    let scores = score_pairs(&sorted, observed, oracle, samples);
    let s: BTreeMap<(&str, &str), f64> =
        scores.iter().filter_map(|p| p.score.map(|v| ((p.source.as_str(), p.target.as_str()), v))).collect();
    let get = |a: &str, b: &str| s.get(&(a, b)).copied();
    let dis = |a: &str, b: &str| montage.physical_distance(a, b);

    let mut edges = Vec::new();
    let mut infeasible = Vec::new();
    for p in &scores {
        let (a, b) = (p.source.as_str(), p.target.as_str());
        let d_ab = dis(a, b)?;
        let mut kind = None;
        if let Some(v) = get(a, b).filter(|&v| d_ab <= th.l1 && v <= th.p1) {
            kind = Some((EdgeKind::Direct, v));
        }
        if kind.is_none() && d_ab <= th.l2 {
            let mut best: Option<(f64, &str)> = None;
            for v in &sorted {
                let v = v.as_str();
                if v == a || v == b || dis(a, v)? > th.l2 || dis(v, b)? > th.l2 {
                    continue;
                }
                if let (Some(l1), Some(l2)) = (get(a, v), get(v, b)) {
                    let worst = l1.max(l2);
                    if l1 <= th.p2 && l2 <= th.p2 && best.is_none_or(|(w, _)| worst < w) {
                        best = Some((worst, v));
                    }
                }
            }
            if let Some((w, v)) = best {
                kind = Some((EdgeKind::Indirect { via: v.to_string() }, w));
            }
        }
        if kind.is_none() && d_ab <= th.l3 {
            if let (Some(x), Some(y)) = (get(a, b), get(b, a)) {
                if x <= th.p3 && y <= th.p3 {
                    kind = Some((EdgeKind::Mutual, x));
                }
            }
        }
        let mut any = false;
        if let Some((k, v)) = kind {
            edges.push(PathEdge::new(a, b, k, v)?);
            any = true;
        }
        if d_ab <= th.l3 {
            if let (Some(oa), Some(ob)) = (observed.get(a), observed.get(b)) {
                let neg: Vec<Vec<f64>> = oa.iter().map(|x| negate(x)).collect();
                if let Ok(v) = mean_distance(ob, &neg, samples) {
                    if v <= th.p1 {
                        edges.push(PathEdge::new(a, b, EdgeKind::Inverted, v)?);
                        any = true;
                    }
                }
            }
        }
        if !any {
            infeasible.push(p.clone());
        }
    }
    edges.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()));
    Ok(Paradigm1Result { scores, edges, infeasible })
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let p = self.0[i];
        if p == i {
            return i;
        }
        let r = self.find(p);
        self.0[i] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Merges divisions whose references generate each other (transitively),
/// electing the lexicographically-first reference of each merged group.
/// Channels left unreachable from the merged references are promoted to
/// measured references so the plan always covers every channel.
pub fn paradigm2(divisions: &[RegionalDivision], edges: &[PathEdge]) -> Result<SynthesisPlan> {
    let mut divs: Vec<RegionalDivision> = divisions.to_vec();
    divs.sort_by_key(|d| d.id);
    let feasible: BTreeSet<(&str, &str)> = edges.iter().map(|e| (e.source.as_str(), e.target.as_str())).collect();
    let mut uf = UnionFind((0..divs.len()).collect());
    for i in 0..divs.len() {
        for j in i + 1..divs.len() {
            let (a, b) = (divs[i].reference.as_str(), divs[j].reference.as_str());
            if feasible.contains(&(a, b)) && feasible.contains(&(b, a)) {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..divs.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut merged = Vec::with_capacity(groups.len());
    for (k, members) in groups.values().enumerate() {
        let reference = members.iter().map(|&i| divs[i].reference.clone()).min().expect("non-empty group");
        let mut chans = vec![reference.clone()];
        for &i in members {
            chans.extend(divs[i].members.iter().filter(|m| **m != reference).cloned());
        }
        merged.push(RegionalDivision::new(k + 1, reference, chans)?);
    }
    let mut reference_set: Vec<String> = merged.iter().map(|d| d.reference.clone()).collect();
    let mut edges = edges.to_vec();
    edges.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()));
    let mut promoted = Vec::new();
    loop {
        let reach = reachable_from(&reference_set, &edges);
        let missing = merged.iter().flat_map(|d| d.members.iter()).find(|m| !reach.contains(*m));
        match missing {
            Some(m) => {
                promoted.push(m.clone());
                reference_set.push(m.clone());
            }
            None => break,
        }
    }
    let plan = SynthesisPlan { divisions: merged, reference_set, edges, promoted, removed_references: Vec::new() };
    plan.validate()?;
    Ok(plan)
}

/// Greedily drops references (largest division first, ties by name) whose
/// removal keeps every channel reachable from the remaining references.
pub fn optimize_paths(plan: &SynthesisPlan) -> Result<SynthesisPlan> {
    plan.validate()?;
    let size = |r: &str| plan.divisions.iter().find(|d| d.reference == r).map_or(1, |d| d.members.len());
    let mut order: Vec<String> = plan.reference_set.clone();
    order.sort_by(|a, b| size(b).cmp(&size(a)).then_with(|| a.cmp(b)));
    let all = plan.channels();
    let mut refs = plan.reference_set.clone();
    let mut removed = plan.removed_references.clone();
    for r in order {
        if refs.len() <= 1 {
            break;
        }
        let trial: Vec<String> = refs.iter().filter(|x| **x != r).cloned().collect();
        let reach = reachable_from(&trial, &plan.edges);
        if all.iter().all(|c| reach.contains(c)) {
            refs = trial;
            removed.push(r);
        }
    }
    let out = SynthesisPlan { reference_set: refs, removed_references: removed, ..plan.clone() };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montage::Electrode;

    fn montage(names: &[(&str, f64, f64)]) -> Montage {
        let e = names
            .iter()
            .map(|(n, x, y)| Electrode { name: n.to_string(), pos: [*x, *y], region: None, hemisphere: None })
            .collect();
        Montage::new(e, 1.0).unwrap()
    }

    /// Oracle reading a fixed score table: the generated target is built to
    /// have exactly that correlation distance to the observed source.
    struct Table {
        base: Vec<f64>,
        ortho: Vec<f64>,
        d: BTreeMap<(String, String), f64>,
    }

    impl Table {
        fn new(d: &[(&str, &str, f64)]) -> Self {
            let n = 64;
            let base: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let ortho: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let d = d.iter().map(|(a, b, v)| ((a.to_string(), b.to_string()), *v)).collect();
            Self { base, ortho, d }
        }

        fn observed(&self, chans: &[&str]) -> BTreeMap<String, Vec<Vec<f64>>> {
            chans.iter().map(|c| (c.to_string(), vec![self.base.clone()])).collect()
        }
    }

    impl EdgeOracle for Table {
        fn generate(&self, source: &str, target: &str) -> Result<Vec<Vec<f64>>> {
            let d = *self.d.get(&(source.to_string(), target.to_string())).unwrap_or(&1.0);
            let rho = 1.0 - d;
            let s = (1.0 - rho * rho).max(0.0).sqrt();
            Ok(vec![self.base.iter().zip(&self.ortho).map(|(b, o)| rho * b + s * o).collect()])
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn triangle_gets_indirect_edge() {
        let m = montage(&[("a", 0.0, 0.0), ("b", 0.3, 0.0), ("c", 0.6, 0.0)]);
        let th = Thresholds::standard(&m);
        let t = Table::new(&[("a", "b", 0.05), ("b", "c", 0.05), ("a", "c", 0.5), ("b", "a", 0.5), ("c", "b", 0.5)]);
        let r = paradigm1(&names(&["a", "b", "c"]), &t.observed(&["a", "b", "c"]), &t, &m, &th, 8).unwrap();
        let find = |a: &str, b: &str| r.edges.iter().find(|e| e.source == a && e.target == b).map(|e| e.kind.clone());
        assert_eq!(find("a", "b"), Some(EdgeKind::Direct));
        assert_eq!(find("b", "c"), Some(EdgeKind::Direct));
        assert_eq!(find("a", "c"), Some(EdgeKind::Indirect { via: "b".into() }));
        assert_eq!(find("c", "a"), None);
    }

    #[test]
    fn distant_perfect_pair_is_mutual() {
        let m = montage(&[("a", -0.8, 0.0), ("b", 0.8, 0.0)]);
        let th = Thresholds::standard(&m);
        let t = Table::new(&[("a", "b", 0.0), ("b", "a", 0.0)]);
        let r = paradigm1(&names(&["a", "b"]), &t.observed(&["a", "b"]), &t, &m, &th, 8).unwrap();
        assert_eq!(r.edges.len(), 2);
        assert!(r.edges.iter().all(|e| e.kind == EdgeKind::Mutual));
    }

    #[test]
    fn oracle_failure_is_infeasible() {
        let m = montage(&[("a", 0.0, 0.0), ("b", 0.1, 0.0)]);
        let th = Thresholds::standard(&m);
        let failing = |_: &str, _: &str| -> Result<Vec<Vec<f64>>> { Err(Error::Plan("boom".into())) };
        let obs: BTreeMap<String, Vec<Vec<f64>>> =
            [("a".into(), vec![vec![1.0, 2.0, 3.0]]), ("b".into(), vec![vec![0.0, 1.0, 0.0]])].into();
        let r = paradigm1(&names(&["a", "b"]), &obs, &failing, &m, &th, 8).unwrap();
        assert!(r.edges.is_empty());
        assert_eq!(r.infeasible.len(), 2);
        assert!(r.infeasible[0].note.as_deref().unwrap().contains("boom"));
    }

    #[test]
    fn anticorrelated_pair_gets_inverted_edges() {
        let m = montage(&[("F7", -0.65, 0.47), ("F8", 0.65, 0.47)]);
        let th = Thresholds::standard(&m);
        let t = Table::new(&[]);
        let mut obs = t.observed(&["F7"]);
        obs.insert("F8".into(), vec![negate(&t.base)]);
        let r = paradigm1(&names(&["F7", "F8"]), &obs, &t, &m, &th, 8).unwrap();
        assert_eq!(r.edges.len(), 2);
        assert!(r.edges.iter().all(|e| e.kind == EdgeKind::Inverted && e.score.abs() < 1e-12));
    }

    fn div(id: usize, members: &[&str]) -> RegionalDivision {
        RegionalDivision::new(id, members[0], names(members)).unwrap()
    }

    fn edge(a: &str, b: &str) -> PathEdge {
        PathEdge::new(a, b, EdgeKind::Direct, 0.1).unwrap()
    }

    #[test]
    fn mutual_references_merge() {
        let divs = vec![div(1, &["x", "x1"]), div(2, &["y", "y1"]), div(3, &["z", "z1"])];
        let mut edges = vec![edge("x", "y"), edge("y", "x"), edge("x", "x1"), edge("y", "y1"), edge("z", "z1")];
        let plan = paradigm2(&divs, &edges).unwrap();
        assert_eq!(plan.divisions.len(), 2);
        assert_eq!(plan.divisions[0].members, names(&["x", "x1", "y", "y1"]));
        assert_eq!(plan.reference_set, names(&["x", "z"]));

        edges.clear();
        edges.extend([edge("x", "x1"), edge("y", "y1"), edge("z", "z1")]);
        let plan = paradigm2(&divs, &edges).unwrap();
        assert_eq!(plan.divisions, divs);
    }

    #[test]
    fn chains_merge_transitively() {
        let divs = vec![div(1, &["c"]), div(2, &["b"]), div(3, &["a"])];
        let edges = vec![edge("a", "b"), edge("b", "a"), edge("b", "c"), edge("c", "b")];
        let plan = paradigm2(&divs, &edges).unwrap();
        assert_eq!(plan.divisions.len(), 1);
        assert_eq!(plan.divisions[0].reference, "a");
    }

    #[test]
    fn unreachable_member_is_promoted() {
        let divs = vec![div(1, &["x", "x1", "x2"])];
        let plan = paradigm2(&divs, &[edge("x", "x1")]).unwrap();
        assert_eq!(plan.promoted, names(&["x2"]));
        assert!(plan.validate().is_ok());
    }

    #[test]
    fn greedy_drops_redundant_reference() {
        let divs = vec![div(1, &["Fp1", "F7", "F3"]), div(2, &["F8", "F4"])];
        let edges = vec![
            edge("Fp1", "F7"),
            edge("Fp1", "F3"),
            PathEdge::new("F7", "F8", EdgeKind::Inverted, 0.05).unwrap(),
            edge("F8", "F4"),
        ];
        let plan = paradigm2(&divs, &edges).unwrap();
        let opt = optimize_paths(&plan).unwrap();
        assert_eq!(opt.reference_set, names(&["Fp1"]));
        assert_eq!(opt.removed_references, names(&["F8"]));
        assert_eq!(optimize_paths(&opt).unwrap(), opt);
    }
}
