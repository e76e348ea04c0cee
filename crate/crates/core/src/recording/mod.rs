//! Multichannel recordings, segmentation, file formats and the synthetic
//! corpus generator.

mod corpus;
mod io;

pub use corpus::{synthesize_corpus, CorpusSpec, BANDS};
pub use io::{load, read_yeeg, save, write_yeeg, Format, YeegHeader, YEEG_MAGIC, YEEG_VERSION};

use ndarray::{s, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channels x samples matrix of amplitudes (microvolts).
///
/// Values need not be finite; raw data may carry NaN/INF until cleaned.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording<T: Scalar = f64> {
    channel_names: Vec<String>,
    samples: Array2<T>,
    rate: f64,
    pub label: Option<u32>,
}

impl<T: Scalar> Recording<T> {
    pub fn new(channel_names: Vec<String>, samples: Array2<T>, rate: f64) -> Result<Self> {
        if channel_names.len() != samples.nrows() {
            return Err(Error::Shape(format!(
                "{} channel names for {} rows",
                channel_names.len(),
                samples.nrows()
            )));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidInput(format!("sampling rate must be positive, got {rate}")));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &channel_names {
            if !seen.insert(n) {
                return Err(Error::InvalidInput(format!("duplicate channel {n}")));
            }
        }
        Ok(Self { channel_names, samples, rate, label: None })
    }

    /// Builds a recording from equally long rows.
    pub fn from_rows(channel_names: Vec<String>, rows: Vec<Vec<T>>, rate: f64) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != len) {
            return Err(Error::Shape(format!("row {i} has {} samples, expected {len}", r.len())));
        }
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((channel_names.len(), len), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(channel_names, samples, rate)
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn samples(&self) -> &Array2<T> {
        &self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::NotFound(format!("channel {name}")))
    }

    pub fn channel(&self, name: &str) -> Result<ArrayView1<'_, T>> {
        Ok(self.samples.row(self.channel_index(name)?))
    }

    /// Owned copy of one channel.
    pub fn channel_vec(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.channel(name)?.to_vec())
    }

    /// Restricts to the named channels, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let rows = names.iter().map(|n| self.channel_vec(n)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_rows(names.to_vec(), rows, self.rate)?.with_label(self.label))
    }

    /// Copy of samples `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_samples() {
            return Err(Error::Shape(format!(
                "slice {start}..{} beyond {} samples",
                start + len,
                self.n_samples()
            )));
        }
        let samples = self.samples.slice(s![.., start..start + len]).to_owned();
        Ok(Self { channel_names: self.channel_names.clone(), samples, rate: self.rate, label: self.label })
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Recording<U> {
        Recording {
            channel_names: self.channel_names.clone(),
            samples: self.samples.mapv(f),
            rate: self.rate,
            label: self.label,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Recording<U> {
        self.map(|v| U::of(v.f64()))
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|v| v * c)
    }
}

/// Equal-length windows cut from one recording.
#[derive(Debug, Clone)]
pub struct SegmentSet<T: Scalar = f64> {
    pub segments: Vec<Recording<T>>,
    pub starts: Vec<usize>,
    pub window: usize,
    pub stride: usize,
}

impl<T: Scalar> SegmentSet<T> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Start offsets of every full window; `floor((T - W) / stride) + 1` of them.
pub fn window_starts(samples: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 || window > samples {
        return Err(Error::InvalidWindow { window, stride, samples });
    }
    Ok((0..=(samples - window) / stride).map(|k| k * stride).collect())
}

pub fn segment<T: Scalar>(r: &Recording<T>, window: usize, stride: usize) -> Result<SegmentSet<T>> {
    let starts = window_starts(r.n_samples(), window, stride)?;
    let segments = starts.iter().map(|&s| r.slice(s, window)).collect::<Result<Vec<_>>>()?;
    Ok(SegmentSet { segments, starts, window, stride })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, t: usize) -> Recording<f64> {
        let names = (0..channels).map(|c| format!("c{c}")).collect();
        let rows = (0..channels).map(|c| (0..t).map(|i| (c * 1000 + i) as f64).collect()).collect();
        Recording::from_rows(names, rows, 250.0).unwrap()
    }

    #[test]
    fn full_length_window_yields_one_segment() {
        let r = ramp(2, 7500);
        for stride in [1, 7, 7500, 10_000] {
            assert_eq!(segment(&r, 7500, stride).unwrap().len(), 1);
        }
    }

    #[test]
    fn hand_enumerated_segments() {
        let r = ramp(1, 10);
        let s = segment(&r, 4, 3).unwrap();
        assert_eq!(s.starts, vec![0, 3, 6]);
        assert_eq!(s.segments[2].channel_vec("c0").unwrap(), vec![6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn zero_or_oversized_window_rejected() {
        let r = ramp(1, 10);
        assert!(matches!(segment(&r, 0, 1), Err(Error::InvalidWindow { .. })));
        assert!(matches!(segment(&r, 11, 1), Err(Error::InvalidWindow { .. })));
    }

    #[test]
    fn segments_preserve_order_without_gaps() {
        let r = ramp(3, 103);
        let s = segment(&r, 16, 5).unwrap();
        assert_eq!(s.len(), (103 - 16) / 5 + 1);
        for (seg, &start) in s.segments.iter().zip(&s.starts) {
            for c in 0..3 {
                let row = seg.samples().row(c);
                for (k, v) in row.iter().enumerate() {
                    assert_eq!(*v, (c * 1000 + start + k) as f64);
                }
            }
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let e = Recording::<f64>::from_rows(vec!["a".into(), "b".into()], vec![vec![1.0], vec![]], 1.0);
        assert!(matches!(e, Err(Error::Shape(_))));
    }
}
