//! Generation-path planning: correlation distance, the three feasibility
//! hypotheses, edge refinement, division merging and reference-set
//! minimisation.

mod paradigm;
mod plan;

pub use paradigm::{
    optimize_paths, paradigm1, paradigm2, score_pairs, EdgeOracle, PairScore, Paradigm1Result, DEFAULT_SCORE_SAMPLES,
};
pub use plan::{reachable_from, EdgeKind, PathEdge, SynthesisPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montage::Montage;
use crate::scalar::Scalar;

/// `|1 - rho|` with `rho` the Pearson correlation; lies in `[0, 2]`.
pub fn correlation_distance<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("correlation of {} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|v| v.f64()).sum::<f64>() / n;
    let my = y.iter().map(|v| v.f64()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a.f64() - mx, b.f64() - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 || !(sxx * syy).is_finite() {
        return Err(Error::UndefinedCorrelation(if sxx == 0.0 { "first input is constant" } else { "second input is constant" }.into()));
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok((1.0 - rho).abs())
}

/// Physical-distance ranges `L` and correlation-distance bounds `P` of the
/// three hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Thresholds {
    /// `L1 = L2 = radius`, `L3 = diameter`, with the given bounds.
    pub fn for_montage(m: &Montage, p1: f64, p2: f64, p3: f64) -> Self {
        Self { l1: m.l1(), l2: m.l2(), l3: m.l3(), p1, p2, p3 }
    }

    /// `P1 = P2 = 0.3`, `P3 = 0.1`.
    pub fn standard(m: &Montage) -> Self {
        Self::for_montage(m, 0.3, 0.3, 0.1)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, p) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3)] {
            if !(0.0..=2.0).contains(&p) {
                return Err(Error::Config(format!("{n} = {p} outside [0, 2]")));
            }
        }
        for (n, l) in [("l1", self.l1), ("l2", self.l2), ("l3", self.l3)] {
            if !(l > 0.0) {
                return Err(Error::Config(format!("{n} = {l} must be positive")));
            }
        }
        Ok(())
    }
}

/// Direct generation: `Dis(src, tgt) <= L1` and `D(O_src, C_tgt) <= P1`.
pub fn check_hypothesis1(
    m: &Montage,
    th: &Thresholds,
    source: &str,
    target: &str,
    o_source: &[f64],
    c_target: &[f64],
) -> Result<bool> {
    Ok(m.physical_distance(source, target)? <= th.l1 && correlation_distance(o_source, c_target)? <= th.p1)
}

/// Indirect generation through `via`: every pairwise distance `<= L2`,
/// `D(O_src, C_via) <= P2` and `D(O_via, C_tgt) <= P2`.
pub fn check_hypothesis2(
    m: &Montage,
    th: &Thresholds,
    [source, via, target]: [&str; 3],
    o_source: &[f64],
    c_via: &[f64],
    o_via: &[f64],
    c_target: &[f64],
) -> Result<bool> {
    if source == via || via == target || source == target {
        return Err(Error::InvalidTriple(format!("{source}, {via}, {target} are not distinct")));
    }
    let close = m.physical_distance(source, via)? <= th.l2
        && m.physical_distance(via, target)? <= th.l2
        && m.physical_distance(source, target)? <= th.l2;
    Ok(close && correlation_distance(o_source, c_via)? <= th.p2 && correlation_distance(o_via, c_target)? <= th.p2)
}

/// Mutual generation: `Dis(a, b) <= L3`, `D(O_a, C_b) <= P3` and
/// `D(C_a, O_b) <= P3`.
#[allow(clippy::too_many_arguments)]
pub fn check_hypothesis3(
    m: &Montage,
    th: &Thresholds,
    a: &str,
    b: &str,
    o_a: &[f64],
    c_b: &[f64],
    c_a: &[f64],
    o_b: &[f64],
) -> Result<bool> {
    if a == b {
        return Err(Error::InvalidTriple(format!("mutual pair {a}, {b} is not distinct")));
    }
    Ok(m.physical_distance(a, b)? <= th.l3
        && correlation_distance(o_a, c_b)? <= th.p3
        && correlation_distance(c_a, o_b)? <= th.p3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montage::Electrode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn line_montage() -> Montage {
        let e = |n: &str, x: f64| Electrode { name: n.into(), pos: [x, 0.0], region: None, hemisphere: None };
        Montage::new(vec![e("a", -0.5), e("b", 0.0), e("c", 0.25), e("d", 0.9)], 1.0).unwrap()
    }

    #[test]
    fn distance_basics() {
        let x = noise(1, 100);
        assert!(correlation_distance(&x, &x).unwrap().abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlation_distance(&x, &neg).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(correlation_distance(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(correlation_distance(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn independent_noise_is_near_one() {
        for s in 0..10 {
            let d = correlation_distance(&noise(2 * s, 5000), &noise(2 * s + 1, 5000)).unwrap();
            assert!(d > 0.9 && d < 1.1, "{d}");
        }
    }

    /// Signals with a prescribed Pearson correlation `rho` to `base`.
    fn with_rho(base: &[f64], other: &[f64], rho: f64) -> Vec<f64> {
        // base and other are near-orthogonal white noise; fix them exactly.
        let n = base.len() as f64;
        let mb = base.iter().sum::<f64>() / n;
        let b: Vec<f64> = base.iter().map(|v| v - mb).collect();
        let bb: f64 = b.iter().map(|v| v * v).sum();
        let mo = other.iter().sum::<f64>() / n;
        let mut o: Vec<f64> = other.iter().map(|v| v - mo).collect();
        let proj = o.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / bb;
        o.iter_mut().zip(&b).for_each(|(x, y)| *x -= proj * y);
        let oo: f64 = o.iter().map(|v| v * v).sum();
        let s = (bb / oo).sqrt();
        b.iter().zip(&o).map(|(x, y)| rho * x + (1.0 - rho * rho).sqrt() * s * y).collect()
    }

    #[test]
    fn hypothesis1_cases() {
        let m = line_montage();
        let th = Thresholds::standard(&m);
        let x = noise(3, 400);
        let y = noise(4, 400);
        // Dis(a, b) = 0.5 = 0.5 L1
        assert!(check_hypothesis1(&m, &th, "a", "b", &x, &with_rho(&x, &y, 0.8)).unwrap());
        assert!(!check_hypothesis1(&m, &th, "a", "b", &x, &with_rho(&x, &y, 0.69)).unwrap());
        // Dis(a, d) = 1.4 > L1
        assert!(!check_hypothesis1(&m, &th, "a", "d", &x, &x).unwrap());
    }

    #[test]
    fn hypothesis2_cases() {
        let m = line_montage();
        let th = Thresholds::standard(&m);
        let x = noise(5, 400);
        let y = noise(6, 400);
        let good = with_rho(&x, &y, 0.8);
        let bad = with_rho(&x, &y, 0.6);
        assert!(check_hypothesis2(&m, &th, ["a", "b", "c"], &x, &good, &x, &good).unwrap());
        assert!(!check_hypothesis2(&m, &th, ["a", "b", "c"], &x, &good, &x, &bad).unwrap());
        assert!(matches!(
            check_hypothesis2(&m, &th, ["a", "a", "c"], &x, &good, &x, &good),
            Err(Error::InvalidTriple(_))
        ));
    }

    #[test]
    fn hypothesis3_cases() {
        let m = line_montage();
        let th = Thresholds::standard(&m);
        let x = noise(7, 400);
        let y = noise(8, 400);
        let close = with_rho(&x, &y, 0.95);
        let far = with_rho(&x, &y, 0.85);
        assert!(check_hypothesis3(&m, &th, "a", "d", &x, &close, &close, &x).unwrap());
        assert!(!check_hypothesis3(&m, &th, "a", "d", &x, &close, &far, &x).unwrap());
        assert!(th.l3 >= 2.0 * m.radius());
    }

    #[test]
    fn threshold_validation() {
        let m = line_montage();
        assert!(Thresholds::standard(&m).validate().is_ok());
        assert!(Thresholds { p1: 2.5, ..Thresholds::standard(&m) }.validate().is_err());
    }
}
