use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yoas_nn::gan::{spectral_distance, GanFormerConfig, GanModel, Norm, Pairs};
use yoas_nn::NnError;

/// Scaled sinusoid biases with random phase, references of uniform noise.
fn sinusoids(n: usize, len: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs = (0..n).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let biases = (0..n)
        .map(|_| {
            let ph: f64 = rng.random_range(0.0..2.0 * PI);
            let amp: f64 = rng.random_range(2.0..3.0);
            (0..len).map(|t| amp * (2.0 * PI * t as f64 / 16.0 + ph).sin()).collect()
        })
        .collect();
    (refs, biases)
}

fn toy() -> GanFormerConfig {
    GanFormerConfig {
        seq_len: 64,
        patch: 16,
        hidden: 32,
        layers: 1,
        heads: 2,
        mlp: 64,
        batch: 16,
        epochs: 300,
        lr: 2e-4,
        recon_weight: 0.0,
        ..GanFormerConfig::desk()
    }
}

#[test]
fn spectral_distance_halves_on_sinusoids() {
    let (refs, biases) = sinusoids(32, 64, 11);
    let (vr, vb) = sinusoids(16, 64, 12);
    let mut m = GanModel::<f32>::build(&toy(), 1).unwrap();
    m.norm = Norm::fit(&refs, &biases);
    let baseline = spectral_distance(&m.generate(&vr, 5).unwrap(), &vb).unwrap();
    m.train(Pairs { refs: &refs, biases: &biases }, Pairs { refs: &vr, biases: &vb }, 1).unwrap();
    let after = spectral_distance(&m.generate(&vr, 5).unwrap(), &vb).unwrap();
    // reference run: 133.9 -> 51.7
    assert!(after <= 0.5 * baseline, "{baseline} -> {after}");
}

#[test]
fn constant_metric_stops_after_patience_plus_one() {
    let cfg = GanFormerConfig { lr: 0.0, patience: 1, epochs: 50, ..toy() };
    let (refs, biases) = sinusoids(16, 64, 2);
    let mut m = GanModel::<f32>::build(&cfg, 4).unwrap();
    let log = m.train(Pairs { refs: &refs, biases: &biases }, Pairs { refs: &refs, biases: &biases }, 4).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.stopped_early);
    assert_eq!(log.epochs[0].val_metric, log.epochs[1].val_metric);

    let cfg = GanFormerConfig { lr: 0.0, patience: 3, epochs: 50, ..toy() };
    let mut m = GanModel::<f32>::build(&cfg, 4).unwrap();
    let log = m.train(Pairs { refs: &refs, biases: &biases }, Pairs { refs: &[], biases: &[] }, 4).unwrap();
    assert_eq!(log.epochs.len(), 4);
}

#[test]
fn epochs_cap_training() {
    let cfg = GanFormerConfig { epochs: 3, ..toy() };
    let (refs, biases) = sinusoids(16, 64, 2);
    let mut m = GanModel::<f32>::build(&cfg, 4).unwrap();
    let log = m.train(Pairs { refs: &refs, biases: &biases }, Pairs { refs: &[], biases: &[] }, 4).unwrap();
    assert_eq!(log.epochs.len(), 3);
    assert!(log.to_csv().starts_with("epoch,d_loss,g_loss,val_metric\n0,"));
}

#[test]
fn same_seed_same_history() {
    let cfg = GanFormerConfig { epochs: 4, ..toy() };
    let (refs, biases) = sinusoids(24, 64, 8);
    let run = || {
        let mut m = GanModel::<f32>::build(&cfg, 9).unwrap();
        let log = m.train(Pairs { refs: &refs, biases: &biases }, Pairs { refs: &refs[..8], biases: &biases[..8] }, 9).unwrap();
        (log.epochs, m.generate(&refs[..2], 1).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_bias_training_shrinks_output() {
    let cfg = GanFormerConfig { epochs: 200, recon_weight: 1.0, lr: 5e-3, ..toy() };
    let (refs, _) = sinusoids(32, 64, 6);
    let zeros = vec![vec![0.0; 64]; 32];
    let mut m = GanModel::<f32>::build(&cfg, 2).unwrap();
    let amp = |m: &GanModel<f32>| {
        let g = m.generate(&refs, 3).unwrap();
        g.iter().flatten().map(|v| v.abs()).sum::<f64>() / (g.len() * 64) as f64
    };
    let before = amp(&m);
    m.train(Pairs { refs: &refs, biases: &zeros }, Pairs { refs: &[], biases: &[] }, 2).unwrap();
    let after = amp(&m);
    assert!(after < 0.1 * before, "{before} -> {after}");
}

#[test]
fn closed_form_parameter_count() {
    let cfg = GanFormerConfig { hidden: 64, heads: 8, layers: 2, seq_len: 256, patch: 32, mlp: 128, ..GanFormerConfig::desk() };
    let m = GanModel::<f32>::build(&cfg, 0).unwrap();
    let (h, n, p, f, l) = (64, 8, 32, 128, 2);
    let block = 4 * h + 4 * (h * h + h) + (h * f + f) + (f * h + h);
    let trunk = (2 * p * h + h) + n * h + l * block + 2 * h;
    assert_eq!(m.generator.numel(), trunk + n * h * 256 + 256);
    assert_eq!(m.discriminator.numel(), trunk + n * h + 1);
}

#[test]
fn discriminator_mirrors_generator() {
    let m = GanModel::<f32>::build(&GanFormerConfig::desk(), 0).unwrap();
    let g: Vec<_> = m.generator.iter().collect();
    let d: Vec<_> = m.discriminator.iter().collect();
    assert_eq!(g.len(), d.len());
    for (a, b) in g.iter().zip(&d) {
        assert_eq!(a.name, b.name);
        if !a.name.starts_with("head") {
            assert_eq!(a.value.shape(), b.value.shape(), "{}", a.name);
        }
    }
    assert_eq!(d.last().unwrap().value.shape(), &[1]);
}

#[test]
fn exploding_updates_report_divergence() {
    let cfg = GanFormerConfig { lr: 1e30, epochs: 20, ..toy() };
    let (refs, biases) = sinusoids(16, 64, 2);
    let mut m = GanModel::<f32>::build(&cfg, 1).unwrap();
    let r = m.train(Pairs { refs: &refs, biases: &biases }, Pairs { refs: &[], biases: &[] }, 1);
    assert!(matches!(r, Err(NnError::TrainingDiverged { .. })), "{:?}", r.map(|l| l.epochs.len()));
}

#[test]
fn mismatched_segments_rejected() {
    let mut m = GanModel::<f32>::build(&toy(), 1).unwrap();
    let r = vec![vec![0.0; 64]];
    let b = vec![vec![0.0; 32]];
    assert!(m.train(Pairs { refs: &r, biases: &b }, Pairs { refs: &[], biases: &[] }, 1).is_err());
    assert!(m.train(Pairs { refs: &[], biases: &[] }, Pairs { refs: &[], biases: &[] }, 1).is_err());
}
