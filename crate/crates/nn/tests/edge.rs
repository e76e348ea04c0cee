use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yoas_core::synthesis::BiasModel;
use yoas_nn::diffusion::DiffConfig;
use yoas_nn::gan::{GanFormerConfig, Pairs};
use yoas_nn::{EdgeConfig, EdgeModel, EdgeRegistry};

fn tiny() -> EdgeConfig {
    EdgeConfig {
        gan: GanFormerConfig { seq_len: 64, patch: 16, hidden: 16, layers: 1, heads: 2, mlp: 32, batch: 8, epochs: 2, ..GanFormerConfig::desk() },
        diff: DiffConfig { channels: 8, crop: 32, batch: 4, train_steps: 10, ..DiffConfig::desk() },
    }
}

fn segments(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<Vec<f64>> = (0..n).map(|_| (0..64).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let bias = refs.iter().map(|r| r.iter().map(|v| -0.2 * v + rng.random_range(-1.0..1.0)).collect()).collect();
    (refs, bias)
}

fn trained() -> EdgeModel<f32> {
    let (r, b) = segments(16, 1);
    let (vr, vb) = segments(4, 2);
    let mut m = EdgeModel::new("a", "b", [0.5, -0.25], &tiny(), 3).unwrap();
    let rep = m.fit(Pairs { refs: &r, biases: &b }, Pairs { refs: &vr, biases: &vb }, 0.3, 4).unwrap();
    assert_eq!(rep.calibration.biases.len(), 4);
    assert_eq!(rep.calibration.trace.len(), 101);
    m
}

#[test]
fn long_signals_are_windowed() {
    let m = trained();
    let sig: Vec<f64> = (0..150).map(|i| (i as f64 * 0.1).sin()).collect();
    let out = m.generate(&sig, 8).unwrap();
    assert_eq!(out.len(), 150);
    assert!(out.iter().all(|v| v.is_finite()));
    assert_eq!(out, m.generate(&sig, 8).unwrap());
    assert!(m.generate(&sig[..63], 8).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_generation() {
    let m = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a_b.ckpt");
    m.save(&path).unwrap();
    let back = EdgeModel::<f32>::load("a", "b", &tiny(), &path).unwrap();
    assert_eq!(back.diff.t_hat, m.diff.t_hat);
    assert_eq!(back.diff.position, m.diff.position);
    let sig: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos()).collect();
    assert_eq!(back.generate(&sig, 2).unwrap(), m.generate(&sig, 2).unwrap());
}

#[test]
fn registry_serves_bias_models() {
    let mut reg = EdgeRegistry::default();
    reg.insert(trained());
    assert!(reg.has_edge("a", "b"));
    assert!(!reg.has_edge("b", "a"));
    let sig = vec![0.5; 64];
    assert_eq!(reg.bias("a", "b", &sig, 1).unwrap().len(), 64);
    assert!(matches!(reg.bias("b", "a", &sig, 1), Err(yoas_core::Error::ModelMissing { .. })));
}

#[test]
fn validation_segments_required() {
    let (r, b) = segments(8, 1);
    let mut m = EdgeModel::<f32>::new("a", "b", [0.0, 0.0], &tiny(), 3).unwrap();
    assert!(m.fit(Pairs { refs: &r, biases: &b }, Pairs { refs: &[], biases: &[] }, 0.3, 4).is_err());
}
