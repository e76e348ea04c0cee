//! Deviation-based outlier removal, gap interpolation and NaN/INF repair.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Marks samples with `|x - mean| >= k * std` as missing. Statistics use the
/// finite samples only (population std); non-finite samples come back as
/// holes as well. A zero std removes nothing.
pub fn remove_outliers<T: Scalar>(x: &[T], k_sigma: f64) -> Result<Vec<Option<T>>> {
    let finite: Vec<f64> = x.iter().filter(|v| v.is_finite()).map(|v| v.f64()).collect();
    if finite.is_empty() {
        return Err(Error::EmptySignal);
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let std = (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cut = k_sigma * std;
    Ok(x.iter()
        .map(|&v| {
            if !v.is_finite() || (std > 0.0 && (v.f64() - mean).abs() >= cut) {
                None
            } else {
                Some(v)
            }
        })
        .collect())
}

/// Repeats [`remove_outliers`] on the surviving samples until nothing more
/// is removed, at most `max_iters` rounds, stopping early rather than leaving
/// fewer than two samples. Returns the holes and the count of removed finite
/// samples.
pub fn clip_outliers<T: Scalar>(x: &[T], k_sigma: f64, max_iters: usize) -> Result<(Vec<Option<T>>, usize)> {
    let mut cur: Vec<Option<T>> = x.iter().map(|&v| v.is_finite().then_some(v)).collect();
    let initial = cur.iter().filter(|v| v.is_some()).count();
    if initial == 0 {
        return Err(Error::EmptySignal);
    }
    for _ in 0..max_iters.max(1) {
        let nan = T::nan();
        let flat: Vec<T> = cur.iter().map(|v| v.unwrap_or(nan)).collect();
        let next = remove_outliers(&flat, k_sigma)?;
        if next.iter().filter(|v| v.is_some()).count() < 2 {
            break;
        }
        let changed = next.iter().zip(&cur).any(|(a, b)| a.is_some() != b.is_some());
        cur = next;
        if !changed {
            break;
        }
    }
    let left = cur.iter().filter(|v| v.is_some()).count();
    Ok((cur, initial - left))
}

/// Linear interpolation across interior holes, constant extension at the
/// edges.
pub fn interpolate_gaps<T: Scalar>(x: &[Option<T>]) -> Result<Vec<T>> {
    let known: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_some()).collect();
    let (&first, &last) = match (known.first(), known.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptySignal),
    };
    let mut out = vec![T::zero(); x.len()];
    let at = |i: usize| x[i].expect("known index").f64();
    for i in 0..first {
        out[i] = x[first].unwrap();
    }
    for i in last..x.len() {
        out[i] = x[last].unwrap();
    }
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        out[a] = x[a].unwrap();
        let (va, vb) = (at(a), at(b));
        for i in a + 1..b {
            let f = (i - a) as f64 / (b - a) as f64;
            out[i] = T::of(va + f * (vb - va));
        }
    }
    Ok(out)
}

/// NaN samples are interpolated from the nearest finite neighbours; INF
/// samples (and everything, when no finite sample exists) become zero.
pub fn repair_nonfinite<T: Scalar>(x: &[T]) -> Vec<T> {
    let holes: Vec<Option<T>> = x.iter().map(|&v| v.is_finite().then_some(v)).collect();
    match interpolate_gaps(&holes) {
        Ok(mut filled) => {
            for (o, v) in filled.iter_mut().zip(x) {
                if v.is_infinite() {
                    *o = T::zero();
                }
            }
            filled
        }
        Err(_) => vec![T::zero(); x.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_vector_keeps_everything() {
        let out = remove_outliers(&[3.0; 6], 1.0).unwrap();
        assert!(out.iter().all(Option::is_some));
    }

    #[test]
    fn spike_is_removed() {
        // mean 20, population std 40, so the spike sits exactly 2 std out.
        let out = remove_outliers(&[0.0, 0.0, 0.0, 0.0, 100.0], 2.0).unwrap();
        assert_eq!(out, vec![Some(0.0), Some(0.0), Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn inliers_untouched() {
        let x = [1.0, -1.0, 1.0, -1.0, 0.5];
        assert!(remove_outliers(&x, 2.0).unwrap().iter().zip(&x).all(|(a, b)| *a == Some(*b)));
    }

    #[test]
    fn all_nonfinite_is_empty() {
        assert!(matches!(remove_outliers(&[f64::NAN, f64::INFINITY], 2.0), Err(Error::EmptySignal)));
        assert!(matches!(interpolate_gaps::<f64>(&[None, None]), Err(Error::EmptySignal)));
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate_gaps(&[Some(1.0), None, Some(3.0)]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(interpolate_gaps(&[None, Some(5.0), None]).unwrap(), vec![5.0, 5.0, 5.0]);
        assert_eq!(interpolate_gaps(&[Some(1.0f32), Some(-4.0)]).unwrap(), vec![1.0, -4.0]);
        assert_eq!(
            interpolate_gaps(&[Some(0.0), None, None, None, Some(4.0)]).unwrap(),
            vec![0.0, 1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn repair() {
        assert_eq!(repair_nonfinite(&[1.0, f64::NAN, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(repair_nonfinite(&[f64::INFINITY]), vec![0.0]);
        assert_eq!(repair_nonfinite(&[f64::NAN, f64::NEG_INFINITY]), vec![0.0, 0.0]);
        assert_eq!(repair_nonfinite(&[2.0, f64::NAN, f64::INFINITY, 4.0]), vec![2.0, 2.0 + 2.0 / 3.0, 0.0, 4.0]);
        assert_eq!(repair_nonfinite(&[0.5f32, -1.0]), vec![0.5, -1.0]);
    }

    #[test]
    fn clipping_converges() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 - 50.0) / 10.0).chain([90.0, -80.0]).collect();
        let (holes, removed) = clip_outliers(&x, 2.0, 20).unwrap();
        assert!(holes[200].is_none() && holes[201].is_none());
        let survivors: Vec<f64> = holes.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let again = remove_outliers(&survivors, 2.0).unwrap();
        assert_eq!(again.iter().filter(|v| v.is_none()).count(), removed);
    }
}
