//! Reproducible synthetic EEG: band-limited sinusoid sums mixed through a
//! Cholesky factor of the coupling matrix, plus white noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Recording;
use crate::error::{Error, Result};

/// Delta, theta, alpha and beta bands in Hz.
pub const BANDS: [(f64, f64); 4] = [(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub channels: Vec<String>,
    pub rate: f64,
    /// Samples per recording.
    pub samples: usize,
    pub recordings_per_class: usize,
    /// Relative power per band (delta, theta, alpha, beta), one row per class.
    pub class_band_powers: Vec<[f64; 4]>,
    /// Target Pearson correlation between channels; must be PSD with unit diagonal.
    pub coupling: Vec<Vec<f64>>,
    /// Per-channel amplitude scale (microvolts).
    pub gains: Vec<f64>,
    /// White noise standard deviation relative to the unit-variance mixed signal.
    pub noise: f64,
    pub components_per_band: usize,
}

impl CorpusSpec {
    pub fn classes(&self) -> usize {
        self.class_band_powers.len()
    }

    /// Block coupling: channels in the same cluster correlate at `within[k]`,
    /// channels in different clusters at `across`.
    pub fn block_coupling(clusters: &[usize], within: &[f64], across: f64) -> Vec<Vec<f64>> {
        let n = clusters.len();
        let mut c = vec![vec![across; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    c[i][j] = 1.0;
                } else if clusters[i] == clusters[j] {
                    c[i][j] = within[clusters[i]];
                }
            }
        }
        c
    }

    /// Eight channels of the desk montage, three classes.
    pub fn desk8() -> Self {
        let channels: Vec<String> =
            ["Fp1", "Fp2", "F3", "F4", "Cz", "Pz", "O1", "O2"].map(String::from).to_vec();
        let clusters = [0, 0, 0, 0, 1, 1, 2, 2];
        Self {
            coupling: Self::block_coupling(&clusters, &[0.95, 0.93, 0.94], 0.2),
            gains: vec![22.0, 20.0, 18.0, 17.0, 15.0, 14.0, 16.0, 15.5],
            channels,
            rate: 250.0,
            samples: 7500,
            recordings_per_class: 3,
            class_band_powers: vec![
                [1.0, 0.6, 3.0, 0.4],
                [0.8, 0.5, 0.6, 2.5],
                [1.2, 2.8, 0.7, 0.5],
            ],
            noise: 0.1,
            components_per_band: 12,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.samples == 0 || !(self.rate > 0.0) {
            return Err(Error::Spec("need channels, samples and a positive rate".into()));
        }
        if self.classes() == 0 || self.recordings_per_class == 0 || self.components_per_band == 0 {
            return Err(Error::Spec("need at least one class, recording and component".into()));
        }
        if self.gains.len() != n {
            return Err(Error::Spec(format!("{} gains for {n} channels", self.gains.len())));
        }
        if self.coupling.len() != n || self.coupling.iter().any(|r| r.len() != n) {
            return Err(Error::Spec(format!("coupling must be {n}x{n}")));
        }
        for i in 0..n {
            if (self.coupling[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::Spec(format!("coupling diagonal at {i} is not 1")));
            }
            for j in 0..i {
                if (self.coupling[i][j] - self.coupling[j][i]).abs() > 1e-12 {
                    return Err(Error::Spec(format!("coupling not symmetric at ({i}, {j})")));
                }
            }
        }
        if self.noise < 0.0 {
            return Err(Error::Spec("noise must be non-negative".into()));
        }
        let nyquist = self.rate / 2.0;
        if BANDS[3].1 >= nyquist {
            return Err(Error::Spec(format!("rate {} too low for the beta band", self.rate)));
        }
        Ok(())
    }
}

/// Lower-triangular factor of a positive semidefinite matrix; zero pivots
/// are allowed when the remaining column is zero as well.
pub(crate) fn psd_cholesky(c: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    const TOL: f64 = 1e-9;
    let n = c.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = c[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -TOL {
            return Err(Error::Spec(format!("coupling matrix is not positive semidefinite (pivot {j} = {d})")));
        }
        let pivot = d.max(0.0).sqrt();
        l[j][j] = pivot;
        for i in j + 1..n {
            let r = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if pivot > TOL {
                l[i][j] = r / pivot;
            } else if r.abs() > 1e-7 {
                return Err(Error::Spec(format!("coupling matrix is not positive semidefinite at ({i}, {j})")));
            }
        }
    }
    Ok(l)
}

fn latent_source(spec: &CorpusSpec, powers: &[f64; 4], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = spec.samples;
    let m = spec.components_per_band;
    let mut z = vec![0.0; t];
    let step = 2.0 * std::f64::consts::PI / spec.rate;
    for (band, &p) in BANDS.iter().zip(powers) {
        let amp = (2.0 * p / m as f64).sqrt();
        for _ in 0..m {
            let f = rng.random_range(band.0..band.1);
            let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            for (i, v) in z.iter_mut().enumerate() {
                *v += amp * (step * f * i as f64 + phase).cos();
            }
        }
    }
    let mean = z.iter().sum::<f64>() / t as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    z.iter().map(|v| (v - mean) / sd).collect()
}

/// Generates `classes x recordings_per_class` labelled recordings; recording
/// `k` draws from its own RNG stream so the corpus is reproducible per seed.
pub fn synthesize_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<Recording<f64>>> {
    spec.validate()?;
    let l = psd_cholesky(&spec.coupling)?;
    let n = spec.channels.len();
    let mut out = Vec::with_capacity(spec.classes() * spec.recordings_per_class);
    for class in 0..spec.classes() {
        for r in 0..spec.recordings_per_class {
            let index = (class * spec.recordings_per_class + r) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            let latents: Vec<Vec<f64>> =
                (0..n).map(|_| latent_source(spec, &spec.class_band_powers[class], &mut rng)).collect();
            let mut data = Array2::<f64>::zeros((n, spec.samples));
            for c in 0..n {
                let mut row = data.row_mut(c);
                for (k, lat) in latents.iter().enumerate().take(c + 1) {
                    let w = l[c][k];
                    if w != 0.0 {
                        row.iter_mut().zip(lat).for_each(|(o, v)| *o += w * v);
                    }
                }
                for o in row.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *o = spec.gains[c] * (*o + spec.noise * e);
                }
            }
            out.push(Recording::new(spec.channels.clone(), data, spec.rate)?.with_label(Some(class as u32)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn pair_spec(c: f64, noise: f64, samples: usize) -> CorpusSpec {
        CorpusSpec {
            channels: vec!["a".into(), "b".into()],
            rate: 250.0,
            samples,
            recordings_per_class: 1,
            class_band_powers: vec![[1.0, 1.0, 1.0, 1.0]],
            coupling: vec![vec![1.0, c], vec![c, 1.0]],
            gains: vec![10.0, 10.0],
            noise,
            components_per_band: 12,
        }
    }

    #[test]
    fn full_coupling_without_noise_is_perfectly_correlated() {
        let r = &synthesize_corpus(&pair_spec(1.0, 0.0, 2000), 1).unwrap()[0];
        let rho = pearson(&r.channel_vec("a").unwrap(), &r.channel_vec("b").unwrap());
        assert!((rho - 1.0).abs() < 1e-12, "rho = {rho}");
    }

    #[test]
    fn coupling_point_nine_realised() {
        let r = &synthesize_corpus(&pair_spec(0.9, 0.1, 7500), 7).unwrap()[0];
        let rho = pearson(&r.channel_vec("a").unwrap(), &r.channel_vec("b").unwrap());
        assert!((rho - 0.9).abs() < 0.1, "rho = {rho}");
    }

    #[test]
    fn same_seed_same_corpus() {
        let s = CorpusSpec::desk8();
        assert_eq!(synthesize_corpus(&s, 11).unwrap(), synthesize_corpus(&s, 11).unwrap());
        assert_ne!(synthesize_corpus(&s, 11).unwrap()[0], synthesize_corpus(&s, 12).unwrap()[0]);
    }

    #[test]
    fn non_psd_coupling_rejected() {
        let mut s = pair_spec(0.5, 0.0, 100);
        s.channels.push("c".into());
        s.gains.push(1.0);
        s.coupling = vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]];
        assert!(matches!(synthesize_corpus(&s, 0), Err(Error::Spec(_))));
    }

    #[test]
    fn desk_corpus_statistics() {
        let spec = CorpusSpec::desk8();
        let corpus = synthesize_corpus(&spec, 5).unwrap();
        assert_eq!(corpus.len(), spec.classes() * spec.recordings_per_class);
        for r in &corpus {
            for c in 0..spec.channels.len() {
                let row = r.samples().row(c).to_vec();
                let n = row.len() as f64;
                let m = row.iter().sum::<f64>() / n;
                let sd = (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                assert!(m.abs() <= 0.05 * sd, "mean {m} sd {sd}");
            }
            for i in 0..spec.channels.len() {
                for j in 0..i {
                    let rho = pearson(&r.samples().row(i).to_vec(), &r.samples().row(j).to_vec());
                    let target = spec.coupling[i][j] / (1.0 + spec.noise * spec.noise);
                    assert!((rho - target).abs() < 0.1, "({i},{j}) rho {rho} vs {target}");
                }
            }
        }
    }
}
