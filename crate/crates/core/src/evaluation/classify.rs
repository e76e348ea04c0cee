//! Gaussian naive Bayes and multinomial logistic regression with holdout
//! and k-fold evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    NaiveBayes,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Shuffled split with `round(test_fraction * N)` test samples.
    Holdout { test_fraction: f64, seed: u64 },
    KFold { k: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    /// Macro one-vs-rest area under the ROC curve.
    pub auc: f64,
    /// Macro sensitivity (recall).
    pub sen: f64,
    /// Macro specificity.
    pub spe: f64,
}

impl Metrics {
    fn zip(items: &[Metrics], f: impl Fn(&[f64]) -> f64) -> Metrics {
        let col = |g: fn(&Metrics) -> f64| f(&items.iter().map(g).collect::<Vec<_>>());
        Metrics { acc: col(|m| m.acc), auc: col(|m| m.auc), sen: col(|m| m.sen), spe: col(|m| m.spe) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub kind: ClassifierKind,
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
    /// Population standard deviation across folds.
    pub std: Metrics,
    pub test_sizes: Vec<usize>,
}

fn check(features: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 || features.iter().any(|f| f.len() != dim || f.iter().any(|v| !v.is_finite())) {
        return Err(Error::Shape("feature rows must be non-empty, equally long and finite".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.len() < 2 {
        return Err(Error::InvalidLabels(format!("need at least 2 classes, found {}", present.len())));
    }
    if let Some(c) = present.iter().find(|&&c| c < 4) {
        return Err(Error::InvalidLabels(format!("every class needs at least 4 samples, one has {c}")));
    }
    Ok(classes)
}

trait Model {
    /// Class probabilities per row.
    fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>>;
}

fn softmax_rows(mut logits: Vec<f64>) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    logits.iter_mut().for_each(|v| *v /= z);
    logits
}

struct NaiveBayes {
    log_prior: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

impl NaiveBayes {
    fn fit(x: &[Vec<f64>], y: &[usize], classes: usize) -> Self {
        let d = x[0].len();
        let mut count = vec![0usize; classes];
        let mut mean = vec![vec![0.0; d]; classes];
        let mut var = vec![vec![0.0; d]; classes];
        for (r, &c) in x.iter().zip(y) {
            count[c] += 1;
            mean[c].iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        for c in 0..classes {
            let n = count[c].max(1) as f64;
            mean[c].iter_mut().for_each(|m| *m /= n);
        }
        for (r, &c) in x.iter().zip(y) {
            var[c].iter_mut().zip(r.iter().zip(&mean[c])).for_each(|(s, (v, m))| *s += (v - m).powi(2));
        }
        // variance smoothing relative to the largest feature variance
        let all_var = (0..d)
            .map(|j| {
                let m = x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64;
                x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / x.len() as f64
            })
            .fold(0.0, f64::max);
        let eps = 1e-9 * all_var.max(1e-12);
        for c in 0..classes {
            let n = count[c].max(1) as f64;
            var[c].iter_mut().for_each(|s| *s = *s / n + eps);
        }
        let total = y.len() as f64;
        let log_prior = count.iter().map(|&k| if k == 0 { f64::NEG_INFINITY } else { (k as f64 / total).ln() }).collect();
        Self { log_prior, mean, var }
    }
}

impl Model for NaiveBayes {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                let logits = (0..self.log_prior.len())
                    .map(|c| {
                        self.log_prior[c]
                            + r.iter()
                                .zip(self.mean[c].iter().zip(&self.var[c]))
                                .map(|(v, (m, s))| -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (v - m).powi(2) / s))
                                .sum::<f64>()
                    })
                    .collect();
                softmax_rows(logits)
            })
            .collect()
    }
}

struct Logistic {
    mu: Vec<f64>,
    sd: Vec<f64>,
    /// `classes x (d + 1)`, bias last.
    w: Vec<Vec<f64>>,
}

impl Logistic {
    const ITERS: usize = 500;
    const LR: f64 = 0.5;
    const L2: f64 = 1e-3;

    fn fit(x: &[Vec<f64>], y: &[usize], classes: usize) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mu: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd: Vec<f64> = (0..d)
            .map(|j| {
                let s = (x.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(mu.iter().zip(&sd)).map(|(v, (m, s))| (v - m) / s).collect()).collect();
        let mut w = vec![vec![0.0; d + 1]; classes];
        for _ in 0..Self::ITERS {
            let mut g = vec![vec![0.0; d + 1]; classes];
            for (r, &label) in z.iter().zip(y) {
                let p = softmax_rows((0..classes).map(|c| dot_bias(&w[c], r)).collect());
                for c in 0..classes {
                    let e = p[c] - if c == label { 1.0 } else { 0.0 };
                    g[c].iter_mut().zip(r.iter().chain(std::iter::once(&1.0))).for_each(|(gi, v)| *gi += e * v);
                }
            }
            for c in 0..classes {
                for j in 0..=d {
                    let reg = if j < d { Self::L2 * w[c][j] } else { 0.0 };
                    w[c][j] -= Self::LR * (g[c][j] / n + reg);
                }
            }
        }
        Self { mu, sd, w }
    }
}

fn dot_bias(w: &[f64], r: &[f64]) -> f64 {
    r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[r.len()]
}

impl Model for Logistic {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                let z: Vec<f64> = r.iter().zip(self.mu.iter().zip(&self.sd)).map(|(v, (m, s))| (v - m) / s).collect();
                softmax_rows(self.w.iter().map(|w| dot_bias(w, &z)).collect())
            })
            .collect()
    }
}

/// Mann-Whitney AUC of `scores` for positives vs negatives, ties averaged.
fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let np = positive.iter().filter(|&&p| p).count();
    let nn = positive.len() - np;
    if np == 0 || nn == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    Some((rank_sum - (np * (np + 1)) as f64 / 2.0) / (np * nn) as f64)
}

/// ACC, macro AUC, macro sensitivity and macro specificity over classes
/// present in `truth`.
pub fn metrics(truth: &[usize], proba: &[Vec<f64>]) -> Metrics {
    let classes = proba.first().map_or(0, Vec::len);
    let pred: Vec<usize> = proba
        .iter()
        .map(|p| (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap_or(0))
        .collect();
    let n = truth.len();
    let acc = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / n.max(1) as f64;
    let (mut sen, mut spe, mut aucs, mut k) = (0.0, 0.0, Vec::new(), 0);
    for c in 0..classes {
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let np = pos.iter().filter(|&&p| p).count();
        if np == 0 {
            continue;
        }
        k += 1;
        let tp = (0..n).filter(|&i| pos[i] && pred[i] == c).count();
        let fp = (0..n).filter(|&i| !pos[i] && pred[i] == c).count();
        let nn = n - np;
        sen += tp as f64 / np as f64;
        spe += if nn == 0 { 1.0 } else { (nn - fp) as f64 / nn as f64 };
        let scores: Vec<f64> = proba.iter().map(|p| p[c]).collect();
        if let Some(a) = auc(&scores, &pos) {
            aucs.push(a);
        }
    }
    let k = k.max(1) as f64;
    let auc = if aucs.is_empty() { 0.5 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 };
    Metrics { acc, auc, sen: sen / k, spe: spe / k }
}

fn fit_predict(kind: ClassifierKind, x: &[Vec<f64>], y: &[usize], classes: usize, test: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match kind {
        ClassifierKind::NaiveBayes => NaiveBayes::fit(x, y, classes).predict_proba(test),
        ClassifierKind::Logistic => Logistic::fit(x, y, classes).predict_proba(test),
    }
}

fn fold_metrics(kind: ClassifierKind, f: &[Vec<f64>], l: &[usize], classes: usize, test: &[usize]) -> Metrics {
    let mut is_test = vec![false; f.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    let train: Vec<usize> = (0..f.len()).filter(|&i| !is_test[i]).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| f[i].clone()).collect::<Vec<_>>();
    let ytr: Vec<usize> = train.iter().map(|&i| l[i]).collect();
    let yte: Vec<usize> = test.iter().map(|&i| l[i]).collect();
    let proba = fit_predict(kind, &pick(&train), &ytr, classes, &pick(test));
    metrics(&yte, &proba)
}

/// Trains and scores a classifier under `split`. Deterministic given the
/// split seed.
pub fn classify(features: &[Vec<f64>], labels: &[usize], kind: ClassifierKind, split: Split) -> Result<ClassifyReport> {
    let classes = check(features, labels)?;
    let n = features.len();
    let (seed, folds) = match split {
        Split::Holdout { test_fraction, seed } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
            }
            let t = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
            (seed, vec![(0, t)])
        }
        Split::KFold { k, seed } => {
            if k < 2 || k > n {
                return Err(Error::Config(format!("k = {k} folds invalid for {n} samples")));
            }
            (seed, (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect())
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(folds.len());
    let mut sizes = Vec::with_capacity(folds.len());
    for (a, b) in folds {
        out.push(fold_metrics(kind, features, labels, classes, &order[a..b]));
        sizes.push(b - a);
    }
    let mean = Metrics::zip(&out, |v| v.iter().sum::<f64>() / v.len() as f64);
    let std = Metrics::zip(&out, |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    });
    Ok(ClassifyReport { kind, folds: out, mean, std, test_sizes: sizes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, per: usize, classes: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..classes {
            for _ in 0..per {
                x.push(
                    (0..3)
                        .map(|j| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            if j == c % 3 { sep + e } else { e }
                        })
                        .collect(),
                );
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separated_classes_are_perfect() {
        let (x, y) = blobs(1, 20, 2, 50.0);
        for kind in [ClassifierKind::NaiveBayes, ClassifierKind::Logistic] {
            let r = classify(&x, &y, kind, Split::Holdout { test_fraction: 0.1, seed: 3 }).unwrap();
            assert_eq!(r.mean.acc, 1.0);
            assert_eq!(r.mean.auc, 1.0);
        }
    }

    #[test]
    fn holdout_size_is_rounded_tenth() {
        for n_per in [4usize, 5, 7, 13] {
            let (x, y) = blobs(2, n_per, 3, 1.0);
            let r = classify(&x, &y, ClassifierKind::NaiveBayes, Split::Holdout { test_fraction: 0.1, seed: 0 }).unwrap();
            assert_eq!(r.test_sizes, vec![(0.1 * (3 * n_per) as f64).round() as usize]);
        }
    }

    #[test]
    fn shuffled_labels_score_chance() {
        let (x, mut y) = blobs(3, 100, 3, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut total = 0.0;
        for s in 0..20 {
            y.shuffle(&mut rng);
            total += classify(&x, &y, ClassifierKind::NaiveBayes, Split::Holdout { test_fraction: 0.1, seed: s })
                .unwrap()
                .mean
                .acc;
        }
        assert!((total / 20.0 - 1.0 / 3.0).abs() <= 0.1, "{}", total / 20.0);
    }

    #[test]
    fn label_checks() {
        let x = vec![vec![1.0]; 8];
        assert!(matches!(classify(&x, &[0; 8], ClassifierKind::NaiveBayes, Split::KFold { k: 2, seed: 0 }), Err(Error::InvalidLabels(_))));
        let y = [0, 0, 0, 0, 0, 1, 1, 1];
        assert!(matches!(classify(&x, &y, ClassifierKind::NaiveBayes, Split::KFold { k: 2, seed: 0 }), Err(Error::InvalidLabels(_))));
    }

    #[test]
    fn kfold_reproducible_and_bounded() {
        let (x, y) = blobs(4, 15, 3, 1.5);
        let split = Split::KFold { k: 5, seed: 11 };
        let a = classify(&x, &y, ClassifierKind::Logistic, split).unwrap();
        let b = classify(&x, &y, ClassifierKind::Logistic, split).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.folds.len(), 5);
        for m in a.folds.iter().chain([&a.mean]) {
            for v in [m.acc, m.auc, m.sen, m.spe] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(a.mean.acc > 0.6);
    }

    #[test]
    fn auc_oracle() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.5], &[true]), None);
    }
}
