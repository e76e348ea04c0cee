//! Transformer GAN producing one-stage bias segments conditioned on the
//! reference channel.
//!
//! A segment of `seq_len` samples is cut into patches; each patch becomes a
//! token. Generator tokens carry `[noise patch, reference patch]`,
//! discriminator tokens carry `[bias patch, reference patch]`. Both nets share
//! the encoder layout and differ only in the output head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use yoas_core::evaluation::psd;
use yoas_core::Scalar;

use crate::adam::{Adam, AdamConfig};
use crate::error::{NnError, Result};
use crate::layers::{Bound, EncoderBlock, LayerNorm, Linear};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanFormerConfig {
    pub seq_len: usize,
    pub patch: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Width of the MLP inside each encoder block.
    pub mlp: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub decay: Option<f64>,
    /// Weight of the MSE term pulling generated bias toward the real bias.
    pub recon_weight: f64,
}

impl GanFormerConfig {
    pub fn desk() -> Self {
        Self {
            seq_len: 256,
            patch: 32,
            hidden: 64,
            layers: 2,
            heads: 4,
            mlp: 128,
            lr: 1e-3,
            batch: 32,
            epochs: 40,
            patience: 200,
            decay: None,
            recon_weight: 1.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            seq_len: 7500,
            patch: 30,
            hidden: 512,
            layers: 6,
            heads: 8,
            mlp: 1024,
            lr: 1e-4,
            batch: 1024,
            epochs: 10_000,
            patience: 200,
            decay: Some(0.95),
            recon_weight: 1.0,
        }
    }

    pub fn tokens(&self) -> usize {
        self.seq_len / self.patch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads));
        }
        if self.patch == 0 || self.seq_len == 0 || !self.seq_len.is_multiple_of(self.patch) {
            return bad(format!("seq_len {} is not a multiple of patch {}", self.seq_len, self.patch));
        }
        if self.layers == 0 || self.mlp == 0 || self.batch == 0 {
            return bad("layers, mlp and batch must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.lr >= 0.0) || !(self.recon_weight >= 0.0) {
            return bad(format!("lr {} and recon_weight {} must be non-negative", self.lr, self.recon_weight));
        }
        if let Some(d) = self.decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("decay {d} outside (0, 1]"));
            }
        }
        Ok(())
    }

    /// Parameter count of one net whose head emits `out` values.
    pub fn param_count(&self, out: usize) -> usize {
        let (h, n) = (self.hidden, self.tokens());
        Linear::param_count(2 * self.patch, h)
            + n * h
            + self.layers * EncoderBlock::param_count(h, self.mlp)
            + 2 * h
            + Linear::param_count(n * h, out)
    }
}

#[derive(Debug, Clone)]
struct Net {
    embed: Linear,
    pos: usize,
    blocks: Vec<EncoderBlock>,
    ln_f: LayerNorm,
    head: Linear,
}

impl Net {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, cfg: &GanFormerConfig, out: usize, rng: &mut impl Rng) -> Self {
        let (h, n) = (cfg.hidden, cfg.tokens());
        let embed = Linear::new(ps, "embed", 2 * cfg.patch, h, rng);
        let pos = ps.add("pos", Tensor::randn(&[n, h], 0.02, rng));
        let blocks = (0..cfg.layers)
            .map(|l| EncoderBlock::new(ps, &format!("block{l}"), h, cfg.mlp, cfg.heads, rng))
            .collect();
        let ln_f = LayerNorm::new(ps, "ln_f", h);
        let head = Linear::new(ps, "head", n * h, out, rng);
        Self { embed, pos, blocks, ln_f, head }
    }

    /// `feats` is `[batch * tokens, 2 * patch]`; returns `[batch, out]`.
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, feats: Var, batch: usize, tokens: usize) -> Result<Var> {
        let mut x = self.embed.forward(tape, p, feats)?;
        let ids: Vec<usize> = (0..batch * tokens).map(|i| i % tokens).collect();
        let pos = tape.embedding_lookup(p.get(self.pos), &ids)?;
        x = tape.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(tape, p, x, tokens)?;
        }
        x = self.ln_f.forward(tape, p, x)?;
        let width = tape.value(x).shape()[1];
        let flat = tape.reshape(x, &[batch, tokens * width])?;
        self.head.forward(tape, p, flat)
    }
}

/// Affine maps between raw units and the unit-scale space the nets see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub ref_mean: f64,
    pub ref_std: f64,
    pub bias_mean: f64,
    pub bias_std: f64,
}

impl Default for Norm {
    fn default() -> Self {
        Self { ref_mean: 0.0, ref_std: 1.0, bias_mean: 0.0, bias_std: 1.0 }
    }
}

impl Norm {
    pub fn fit(refs: &[Vec<f64>], biases: &[Vec<f64>]) -> Self {
        let (ref_mean, ref_std) = moments(refs);
        let (bias_mean, bias_std) = moments(biases);
        Self { ref_mean, ref_std, bias_mean, bias_std }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.ref_mean, self.ref_std, self.bias_mean, self.bias_std]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { ref_mean: a[0], ref_std: a[1], bias_mean: a[2], bias_std: a[3] }
    }

    /// Rounded through `T` so a checkpoint in that precision reproduces it exactly.
    pub fn rounded<T: Scalar>(self) -> Self {
        Self::from_array(self.to_array().map(|v| T::of(v).f64()))
    }
}

/// Pooled mean and standard deviation; a degenerate spread maps to 1.
fn moments(rows: &[Vec<f64>]) -> (f64, f64) {
    let n: usize = rows.iter().map(Vec::len).sum();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = rows.iter().flatten().sum::<f64>() / n as f64;
    let var = rows.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,d_loss,g_loss,val_metric\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.d_loss, e.g_loss, e.val_metric));
        }
        s
    }
}

/// Paired `(reference, bias)` segments of `seq_len` samples.
#[derive(Debug, Clone, Copy)]
pub struct Pairs<'a> {
    pub refs: &'a [Vec<f64>],
    pub biases: &'a [Vec<f64>],
}

impl Pairs<'_> {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    fn check(&self, seq: usize) -> Result<()> {
        if self.refs.len() != self.biases.len() {
            return Err(NnError::Config(format!(
                "{} reference segments for {} bias segments",
                self.refs.len(),
                self.biases.len()
            )));
        }
        for s in self.refs.iter().chain(self.biases) {
            if s.len() != seq {
                return Err(NnError::Shape { op: "gan", detail: format!("segment of {} samples, expected {seq}", s.len()) });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(NnError::Config("non-finite training sample".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GanModel<T: Scalar> {
    pub cfg: GanFormerConfig,
    pub generator: ParamSet<T>,
    pub discriminator: ParamSet<T>,
    pub norm: Norm,
    g_net: Net,
    d_net: Net,
}

impl<T: Scalar> GanModel<T> {
    pub fn build(cfg: &GanFormerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut generator = ParamSet::new();
        let g_net = Net::new(&mut generator, cfg, cfg.seq_len, &mut rng);
        let mut discriminator = ParamSet::new();
        let d_net = Net::new(&mut discriminator, cfg, 1, &mut rng);
        Ok(Self { cfg: cfg.clone(), generator, discriminator, norm: Norm::default(), g_net, d_net })
    }

    fn tokens(&self) -> usize {
        self.cfg.tokens()
    }

    /// Interleaves two `[batch, seq]` row sets into `[batch * tokens, 2 * patch]`.
    fn tokenize(&self, first: &[Vec<T>], second: &[Vec<T>]) -> Tensor<T> {
        let p = self.cfg.patch;
        let mut data = Vec::with_capacity(first.len() * self.cfg.seq_len * 2);
        for (a, b) in first.iter().zip(second) {
            for t in 0..self.tokens() {
                data.extend_from_slice(&a[t * p..(t + 1) * p]);
                data.extend_from_slice(&b[t * p..(t + 1) * p]);
            }
        }
        Tensor::new(vec![first.len() * self.tokens(), 2 * p], data).expect("sized")
    }

    fn generator_forward(&self, tape: &mut Tape<T>, gp: &Bound, noise: &[Vec<T>], refs: &[Vec<T>]) -> Result<Var> {
        let feats = tape.constant(self.tokenize(noise, refs));
        self.g_net.forward(tape, gp, feats, refs.len(), self.tokens())
    }

    /// `bias` is `[batch, seq]` on the tape.
    fn discriminator_forward(&self, tape: &mut Tape<T>, dp: &Bound, bias: Var, refs: &[Vec<T>]) -> Result<Var> {
        let (b, n, p) = (refs.len(), self.tokens(), self.cfg.patch);
        let bias = tape.reshape(bias, &[b * n, p])?;
        let r: Vec<T> = refs.iter().flatten().copied().collect();
        let r = tape.constant(Tensor::new(vec![b * n, p], r)?);
        let feats = tape.concat(&[bias, r], 1)?;
        self.d_net.forward(tape, dp, feats, b, n)
    }

    fn norm_refs(&self, refs: &[&Vec<f64>]) -> Vec<Vec<T>> {
        let n = self.norm;
        refs.iter().map(|r| r.iter().map(|&v| T::of((v - n.ref_mean) / n.ref_std)).collect()).collect()
    }

    fn norm_biases(&self, b: &[&Vec<f64>]) -> Vec<Vec<T>> {
        let n = self.norm;
        b.iter().map(|r| r.iter().map(|&v| T::of((v - n.bias_mean) / n.bias_std)).collect()).collect()
    }

    fn noise(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
        (0..count)
            .map(|_| {
                (0..self.cfg.seq_len)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(rng);
                        T::of(e)
                    })
                    .collect()
            })
            .collect()
    }

    /// Generator output in normalized units for normalized references.
    fn sample_normalized(&self, refs: &[Vec<T>], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(self.cfg.batch) {
            let z = self.noise(chunk.len(), rng);
            let mut tape = Tape::new();
            let gp = Bound::new(&mut tape, &self.generator);
            let y = self.generator_forward(&mut tape, &gp, &z, chunk)?;
            out.extend(tape.value(y).data().chunks(self.cfg.seq_len).map(<[T]>::to_vec));
        }
        Ok(out)
    }

    /// One-stage bias for each reference segment, in raw units.
    pub fn generate(&self, refs: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
        if let Some(r) = refs.iter().find(|r| r.len() != self.cfg.seq_len) {
            return Err(NnError::Shape { op: "generate", detail: format!("{} samples, expected {}", r.len(), self.cfg.seq_len) });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs: Vec<&Vec<f64>> = refs.iter().collect();
        let n = self.norm;
        Ok(self
            .sample_normalized(&self.norm_refs(&refs), &mut rng)?
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.f64() * n.bias_std + n.bias_mean).collect())
            .collect())
    }

    /// Alternating discriminator/generator training with early stopping on
    /// the validation spectral distance. The best epoch's weights are kept.
    pub fn train(&mut self, train: Pairs<'_>, val: Pairs<'_>, seed: u64) -> Result<TrainLog> {
        train.check(self.cfg.seq_len)?;
        val.check(self.cfg.seq_len)?;
        if train.is_empty() {
            return Err(NnError::Config("no training segments".into()));
        }
        let val = if val.is_empty() { train } else { val };
        self.norm = Norm::fit(train.refs, train.biases).rounded::<T>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opt_cfg = AdamConfig { decay: self.cfg.decay, ..AdamConfig::with_lr(self.cfg.lr) };
        let mut opt_g = Adam::new(AdamConfig { beta1: 0.5, ..opt_cfg }, &self.generator);
        let mut opt_d = Adam::new(AdamConfig { beta1: 0.5, ..opt_cfg }, &self.discriminator);
        let val_refs = self.norm_refs(&val.refs.iter().collect::<Vec<_>>());
        let val_real: Vec<Vec<f64>> = self
            .norm_biases(&val.biases.iter().collect::<Vec<_>>())
            .iter()
            .map(|r| r.iter().map(|v| v.f64()).collect())
            .collect();
        let mut log = TrainLog::default();
        let mut best = (f64::INFINITY, self.generator.clone(), self.discriminator.clone());
        let mut stale = 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut rng);
            let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0);
            for chunk in order.chunks(self.cfg.batch) {
                let refs = self.norm_refs(&chunk.iter().map(|&i| &train.refs[i]).collect::<Vec<_>>());
                let real = self.norm_biases(&chunk.iter().map(|&i| &train.biases[i]).collect::<Vec<_>>());
                let (d, g) = self.step(&refs, &real, epoch, &mut opt_g, &mut opt_d, &mut rng)?;
                if !d.is_finite() || !g.is_finite() {
                    return Err(NnError::TrainingDiverged { epoch });
                }
                d_sum += d;
                g_sum += g;
                steps += 1;
            }
            let mut vrng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_f7a1);
            let fake: Vec<Vec<f64>> = self
                .sample_normalized(&val_refs, &mut vrng)?
                .iter()
                .map(|r| r.iter().map(|v| v.f64()).collect())
                .collect();
            let val_metric = spectral_distance(&fake, &val_real)?;
            if !val_metric.is_finite() {
                return Err(NnError::TrainingDiverged { epoch });
            }
            log.epochs.push(EpochLog {
                epoch,
                d_loss: d_sum / steps as f64,
                g_loss: g_sum / steps as f64,
                val_metric,
            });
            if val_metric < best.0 {
                best = (val_metric, self.generator.clone(), self.discriminator.clone());
                log.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
        if best.0.is_finite() {
            self.generator = best.1;
            self.discriminator = best.2;
        }
        Ok(log)
    }

    fn step(
        &mut self,
        refs: &[Vec<T>],
        real: &[Vec<T>],
        epoch: usize,
        opt_g: &mut Adam,
        opt_d: &mut Adam,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, f64)> {
        let b = refs.len();
        let z = self.noise(b, rng);

        // discriminator: real rows labelled 0.9 (one-sided smoothing),
        // generated rows labelled 0
        let mut tape = Tape::new();
        let gp = Bound::new(&mut tape, &self.generator);
        let fake = self.generator_forward(&mut tape, &gp, &z, refs)?;
        let fake = tape.constant(tape.value(fake).clone());
        let real_v = tape.constant(Tensor::new(vec![b, self.cfg.seq_len], real.iter().flatten().copied().collect())?);
        let both = tape.concat(&[real_v, fake], 0)?;
        let both_refs: Vec<Vec<T>> = refs.iter().chain(refs).cloned().collect();
        let dp = Bound::new(&mut tape, &self.discriminator);
        let logits = self.discriminator_forward(&mut tape, &dp, both, &both_refs)?;
        let targets: Vec<T> = (0..2 * b).map(|i| if i < b { T::of(0.9) } else { T::zero() }).collect();
        let d_loss = tape.bce_with_logits(logits, &targets)?;
        let grads = tape.backward(d_loss)?;
        dp.accumulate(&grads, &mut self.discriminator);
        opt_d.step(&mut self.discriminator, epoch);
        let d_val = tape.value(d_loss).item().f64();

        // generator: non-saturating loss plus reconstruction
        let mut tape = Tape::new();
        let gp = Bound::new(&mut tape, &self.generator);
        let dp = Bound::new(&mut tape, &self.discriminator);
        let fake = self.generator_forward(&mut tape, &gp, &z, refs)?;
        let logits = self.discriminator_forward(&mut tape, &dp, fake, refs)?;
        let mut g_loss = tape.bce_with_logits(logits, &vec![T::one(); b])?;
        if self.cfg.recon_weight > 0.0 {
            let real_v = tape.constant(Tensor::new(vec![b, self.cfg.seq_len], real.iter().flatten().copied().collect())?);
            let mse = tape.mse_loss(fake, real_v)?;
            let mse = tape.scale(mse, T::of(self.cfg.recon_weight));
            g_loss = tape.add(g_loss, mse)?;
        }
        let grads = tape.backward(g_loss)?;
        gp.accumulate(&grads, &mut self.generator);
        opt_g.step(&mut self.generator, epoch);
        Ok((d_val, tape.value(g_loss).item().f64()))
    }

    /// Generator, discriminator and normalization in one parameter set.
    pub fn to_params(&self) -> ParamSet<T> {
        let mut ps = ParamSet::new();
        for (prefix, set) in [("g", &self.generator), ("d", &self.discriminator)] {
            for p in set.iter() {
                ps.add(format!("{prefix}.{}", p.name), p.value.clone());
            }
        }
        ps.add("norm", Tensor::from_f64(&[4], &self.norm.to_array()).expect("sized"));
        ps
    }

    pub fn from_params(cfg: &GanFormerConfig, ps: &ParamSet<T>) -> Result<Self> {
        let mut m = Self::build(cfg, 0)?;
        let expected = m.to_params();
        if ps.len() != expected.len() {
            return Err(NnError::Checkpoint(format!("{} parameters, expected {}", ps.len(), expected.len())));
        }
        let ng = m.generator.len();
        let nd = m.discriminator.len();
        for (i, (src, want)) in ps.iter().zip(expected.iter()).enumerate() {
            if src.name != want.name || src.value.shape() != want.value.shape() {
                return Err(NnError::Checkpoint(format!("unexpected parameter {} {:?}", src.name, src.value.shape())));
            }
            if i < ng {
                *m.generator.value_mut(i) = src.value.clone();
            } else if i < ng + nd {
                *m.discriminator.value_mut(i - ng) = src.value.clone();
            } else {
                let a = src.value.to_f64();
                m.norm = Norm::from_array([a[0], a[1], a[2], a[3]]);
            }
        }
        Ok(m)
    }
}

/// L2 distance between the average one-sided spectra of two segment sets,
/// computed at unit sampling rate.
pub fn spectral_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mean_psd = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
        let mut acc: Vec<f64> = Vec::new();
        for r in rows {
            let s = psd(r, 1.0)?;
            if acc.is_empty() {
                acc = vec![0.0; s.power.len()];
            }
            for (x, p) in acc.iter_mut().zip(&s.power) {
                *x += p / rows.len() as f64;
            }
        }
        Ok(acc)
    };
    let (pa, pb) = (mean_psd(a)?, mean_psd(b)?);
    if pa.len() != pb.len() || pa.is_empty() {
        return Err(NnError::Shape { op: "spectral_distance", detail: format!("{} vs {} bins", pa.len(), pb.len()) });
    }
    Ok(pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GanFormerConfig {
        GanFormerConfig { seq_len: 64, patch: 16, hidden: 16, layers: 1, heads: 2, mlp: 32, batch: 8, epochs: 3, ..GanFormerConfig::desk() }
    }

    #[test]
    fn heads_must_divide_hidden() {
        let cfg = GanFormerConfig { heads: 7, ..GanFormerConfig::desk() };
        assert!(matches!(GanModel::<f32>::build(&cfg, 0), Err(NnError::Config(_))));
        assert!(GanFormerConfig { patience: 0, ..GanFormerConfig::desk() }.validate().is_err());
    }

    #[test]
    fn paper_preset_values() {
        let p = GanFormerConfig::paper();
        assert_eq!((p.seq_len, p.hidden, p.layers, p.heads, p.batch), (7500, 512, 6, 8, 1024));
        assert_eq!(p.lr, 1e-4);
        assert_eq!(p.decay, Some(0.95));
        p.validate().unwrap();
    }

    #[test]
    fn generate_shapes() {
        let m = GanModel::<f32>::build(&small(), 3).unwrap();
        assert!(m.generate(&[], 1).unwrap().is_empty());
        let out = m.generate(&[vec![0.5; 64], vec![-1.0; 64]], 1).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|r| r.len() == 64 && r.iter().all(|v| v.is_finite())));
        assert_eq!(out, m.generate(&[vec![0.5; 64], vec![-1.0; 64]], 1).unwrap());
        assert!(m.generate(&[vec![0.0; 63]], 1).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut m = GanModel::<f32>::build(&small(), 5).unwrap();
        m.norm = Norm { ref_mean: 1.0, ref_std: 2.0, bias_mean: -0.5, bias_std: 3.0 };
        let back = GanModel::<f32>::from_params(&small(), &m.to_params()).unwrap();
        assert_eq!(back.norm, m.norm);
        let r = vec![vec![0.3; 64]];
        assert_eq!(back.generate(&r, 9).unwrap(), m.generate(&r, 9).unwrap());
    }
}
