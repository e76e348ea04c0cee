//! Random planning instances and a brute-force edge oracle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use yoas_core::biasing::negate;
use yoas_core::paths::*;
use yoas_core::{Electrode, Montage, RegionalDivision, Result};

const T: usize = 200;

pub struct Instance {
    pub montage: Montage,
    pub names: Vec<String>,
    pub observed: BTreeMap<String, Vec<Vec<f64>>>,
    pub generated: BTreeMap<(String, String), Vec<f64>>,
    pub th: Thresholds,
}

impl EdgeOracle for Instance {
    fn generate(&self, source: &str, target: &str) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.generated[&(source.to_string(), target.to_string())].clone()])
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8);
    let names: Vec<String> = (0..n).map(|i| format!("ch{}", (b'a' + i as u8) as char)).collect();
    let electrodes = names
        .iter()
        .map(|name| {
            let r = rng.random_range(0.0f64..1.0).sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            Electrode { name: name.clone(), pos: [r * a.cos(), r * a.sin()], region: None, hemisphere: None }
        })
        .collect();
    let montage = Montage::new(electrodes, 1.0).unwrap();
    let latents: Vec<Vec<f64>> = (0..2).map(|_| normal(&mut rng, T)).collect();
    let mut observed = BTreeMap::new();
    for name in &names {
        let w: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let noise = rng.random_range(0.05..0.6);
        let e = normal(&mut rng, T);
        let sig: Vec<f64> = (0..T).map(|t| w[0] * latents[0][t] + w[1] * latents[1][t] + noise * e[t]).collect();
        observed.insert(name.clone(), vec![sig]);
    }
    let mut generated = BTreeMap::new();
    for a in &names {
        for b in &names {
            if a != b {
                let noise = rng.random_range(0.0..0.5);
                let e = normal(&mut rng, T);
                let c: Vec<f64> = observed[b][0].iter().zip(&e).map(|(o, e)| o + noise * e).collect();
                generated.insert((a.clone(), b.clone()), c);
            }
        }
    }
    let mut th = Thresholds::for_montage(&montage, rng.random_range(0.05..0.8), rng.random_range(0.05..0.8), rng.random_range(0.02..0.4));
    if rng.random_bool(0.3) {
        th.l1 = rng.random_range(0.3..1.0);
        th.l2 = rng.random_range(0.3..2.0);
    }
    Instance { montage, names, observed, generated, th }
}

/// Evaluates the hypothesis predicates directly on the signals.
pub fn brute_force(inst: &Instance) -> Vec<PathEdge> {
    let o = |c: &str| inst.observed[c][0].as_slice();
    let g = |a: &str, b: &str| inst.generated[&(a.to_string(), b.to_string())].as_slice();
    let m = &inst.montage;
    let th = &inst.th;
    let mut sorted = inst.names.clone();
    sorted.sort();
    let mut edges = Vec::new();
    for a in &sorted {
        for b in &sorted {
            if a == b {
                continue;
            }
            let mut kind = None;
            if check_hypothesis1(m, th, a, b, o(a), g(a, b)).unwrap() {
                kind = Some((EdgeKind::Direct, correlation_distance(o(a), g(a, b)).unwrap()));
            }
            if kind.is_none() {
                let mut best: Option<(f64, String)> = None;
                for v in &sorted {
                    if v == a || v == b {
                        continue;
                    }
                    if check_hypothesis2(m, th, [a, v, b], o(a), g(a, v), o(v), g(v, b)).unwrap() {
                        let worst = correlation_distance(o(a), g(a, v)).unwrap().max(correlation_distance(o(v), g(v, b)).unwrap());
                        if best.as_ref().is_none_or(|(w, _)| worst < *w) {
                            best = Some((worst, v.clone()));
                        }
                    }
                }
                kind = best.map(|(w, v)| (EdgeKind::Indirect { via: v }, w));
            }
            if kind.is_none() && check_hypothesis3(m, th, a, b, o(a), g(a, b), g(b, a), o(b)).unwrap() {
                kind = Some((EdgeKind::Mutual, correlation_distance(o(a), g(a, b)).unwrap()));
            }
            if let Some((k, s)) = kind {
                edges.push(PathEdge::new(a.as_str(), b.as_str(), k, s).unwrap());
            }
            let inv = correlation_distance(o(b), &negate(o(a))).unwrap();
            if m.physical_distance(a, b).unwrap() <= th.l3 && inv <= th.p1 {
                edges.push(PathEdge::new(a.as_str(), b.as_str(), EdgeKind::Inverted, inv).unwrap());
            }
        }
    }
    edges.sort_by(|x, y| (&x.target, &x.source, &x.kind).cmp(&(&y.target, &y.source, &y.kind)));
    edges
}

/// Random partition of `names` into up to four divisions.
pub fn random_divisions(names: &[String], rng: &mut ChaCha8Rng) -> Vec<RegionalDivision> {
    let mut shuffled = names.to_vec();
    shuffled.shuffle(rng);
    let k = rng.random_range(1..=shuffled.len().min(4));
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, c) in shuffled.into_iter().enumerate() {
        groups[if i < k { i } else { rng.random_range(0..k) }].push(c);
    }
    groups.into_iter().enumerate().map(|(i, g)| RegionalDivision::new(i + 1, g[0].clone(), g).unwrap()).collect()
}
