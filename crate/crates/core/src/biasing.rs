//! Bias signals: a channel minus its division's reference channel.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::montage::RegionalDivision;
use crate::recording::{read_yeeg, write_yeeg, Recording};
use crate::scalar::Scalar;

/// Biases of every non-reference member of one division, in member order.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSet {
    pub division_id: usize,
    pub reference_name: String,
    pub rate: f64,
    entries: Vec<(String, Vec<f64>)>,
}

impl BiasSet {
    pub fn new(
        division_id: usize,
        reference_name: impl Into<String>,
        rate: f64,
        entries: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let reference_name = reference_name.into();
        let len = entries.first().map(|(_, v)| v.len());
        for (name, v) in &entries {
            if *name == reference_name {
                return Err(Error::InvalidInput(format!("reference {name} cannot carry a bias")));
            }
            if Some(v.len()) != len {
                return Err(Error::Shape(format!("bias {name} has {} samples, expected {len:?}", v.len())));
            }
        }
        Ok(Self { division_id, reference_name, rate, entries })
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }

    pub fn get(&self, channel: &str) -> Result<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == channel)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::NotFound(format!("no bias for {channel}")))
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies `f` to every bias vector.
    pub fn map_entries(&self, mut f: impl FnMut(&str, &[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|(n, v)| Ok((n.clone(), f(n, v)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.division_id, self.reference_name.clone(), self.rate, entries)
    }

    /// Biases as a recording (one row per biased channel); the division id
    /// and reference name travel in the `.yeeg` header extension.
    pub fn to_yeeg(&self) -> Result<Vec<u8>> {
        let names: Vec<String> = self.entries.iter().map(|(n, _)| n.clone()).collect();
        let rows: Vec<Vec<f64>> = self.entries.iter().map(|(_, v)| v.clone()).collect();
        let rec = if rows.is_empty() {
            Recording::new(names, Array2::zeros((0, 0)), self.rate)?
        } else {
            Recording::from_rows(names, rows, self.rate)?
        };
        let mut extra = BTreeMap::new();
        extra.insert("division".to_string(), self.division_id.to_string());
        extra.insert("reference".to_string(), self.reference_name.clone());
        Ok(write_yeeg(&rec, &extra))
    }

    pub fn from_yeeg(bytes: &[u8]) -> Result<Self> {
        let (rec, header) = read_yeeg::<f64>(bytes)?;
        let field = |k: &str| {
            header
                .extension
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Parse { offset: 32, line: 0, msg: format!("missing header key {k}") })
        };
        let division_id = field("division")?
            .parse()
            .map_err(|e| Error::Parse { offset: 32, line: 0, msg: format!("bad division id: {e}") })?;
        let reference = field("reference")?;
        let entries = rec
            .channel_names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), rec.samples().row(i).to_vec()))
            .collect();
        Self::new(division_id, reference, rec.rate(), entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_yeeg()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_yeeg(&std::fs::read(path)?)
    }
}

/// `O_j - O_ref` for every non-reference member `j` of `d`, computed in f64.
pub fn extract_bias<T: Scalar>(r: &Recording<T>, d: &RegionalDivision) -> Result<BiasSet> {
    let reference = r.channel(&d.reference)?;
    let mut entries = Vec::with_capacity(d.members.len().saturating_sub(1));
    for name in d.others() {
        let ch = r.channel(name)?;
        entries.push((name.clone(), ch.iter().zip(reference.iter()).map(|(a, b)| a.f64() - b.f64()).collect()));
    }
    BiasSet::new(d.id, d.reference.clone(), r.rate(), entries)
}

/// `bias + reference`, elementwise.
pub fn reconstruct<T: Scalar>(bias: &[T], reference: &[T]) -> Result<Vec<T>> {
    if bias.len() != reference.len() {
        return Err(Error::Shape(format!(
            "reconstruct: bias has {} samples, reference {}",
            bias.len(),
            reference.len()
        )));
    }
    Ok(bias.iter().zip(reference).map(|(&b, &r)| b + r).collect())
}

pub fn negate<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::correlation_distance;
    use proptest::prelude::*;

    fn rec(rows: Vec<Vec<f64>>) -> Recording {
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        Recording::from_rows(names, rows, 250.0).unwrap()
    }

    fn div(n: usize) -> RegionalDivision {
        RegionalDivision::new(1, "c0", (0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn identical_channels_give_zero_bias() {
        let r = rec(vec![vec![1.0, -2.0, 3.5]; 3]);
        let b = extract_bias(&r, &div(3)).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.entries().iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn bias_is_difference() {
        let r = rec(vec![vec![1.0, 2.0], vec![3.0, 5.0]]);
        let b = extract_bias(&r, &div(2)).unwrap();
        assert_eq!(b.get("c1").unwrap(), &[2.0, 3.0]);
        assert!(b.get("c0").is_err());
    }

    #[test]
    fn missing_member_is_not_found() {
        let r = rec(vec![vec![1.0, 2.0], vec![3.0, 5.0]]);
        assert!(matches!(extract_bias(&r, &div(3)), Err(Error::NotFound(_))));
    }

    #[test]
    fn reconstruct_checks_lengths() {
        assert_eq!(reconstruct(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(reconstruct(&[0.0; 2], &[1.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn negation() {
        assert_eq!(negate(&[1.0, -2.0, 0.0]), vec![-1.0, 2.0, 0.0]);
        let x = [0.3, 1.0, -0.4, 2.0];
        assert!((correlation_distance(&x, &negate(&x)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn f32_recording_bias_round_trips() {
        let r: Recording<f32> = Recording::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![0.1f32, 3.0e3], vec![0.3f32, -1e-6]],
            100.0,
        )
        .unwrap();
        let d = RegionalDivision::new(3, "a", vec!["a".into(), "b".into()]).unwrap();
        let b = extract_bias(&r, &d).unwrap();
        let reference: Vec<f64> = r.channel_vec("a").unwrap().iter().map(|v| *v as f64).collect();
        let back = reconstruct(b.get("b").unwrap(), &reference).unwrap();
        for (x, y) in back.iter().zip(r.channel_vec("b").unwrap()) {
            assert!((x - y as f64).abs() <= 1e-6 * (y as f64).abs());
        }
    }

    #[test]
    fn yeeg_sidecar_round_trip() {
        let r = rec(vec![vec![1.0, 2.0, 4.0], vec![3.0, 5.0, 0.5], vec![-1.0, 0.0, 1.0]]);
        let mut d = div(3);
        d.id = 7;
        let b = extract_bias(&r, &d).unwrap();
        let back = BiasSet::from_yeeg(&b.to_yeeg().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    proptest! {
        #[test]
        fn round_trip_and_linearity(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 16), 2..6),
            c in -10.0f64..10.0,
        ) {
            let n = rows.len();
            let r = rec(rows.clone());
            let d = div(n);
            let b = extract_bias(&r, &d).unwrap();
            for j in 1..n {
                let back = reconstruct(b.get(&format!("c{j}")).unwrap(), &rows[0]).unwrap();
                for (x, y) in back.iter().zip(&rows[j]) {
                    prop_assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
                }
            }
            let scaled = extract_bias(&r.scaled(c), &d).unwrap();
            for ((_, u), (_, v)) in scaled.entries().iter().zip(b.entries()) {
                for (x, y) in u.iter().zip(v) {
                    prop_assert!((x - c * y).abs() <= 1e-9 * (1.0 + (c * y).abs()));
                }
            }
            let x = &rows[0];
            prop_assert_eq!(negate(&negate(x)), x.clone());
        }
    }
}
