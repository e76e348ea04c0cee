//! Central finite-difference checks for every tape op, run in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Names of every differentiable op on the tape.
pub const OPS: &[&str] = &[
    "matmul",
    "add",
    "add_bias",
    "mul",
    "scale",
    "relu",
    "softmax",
    "layer_norm",
    "conv1d",
    "embedding_lookup",
    "multi_head_attention",
    "mse_loss",
    "bce_with_logits",
    "reshape",
    "concat",
    "sum_all",
    "mean_all",
];

pub const EPS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub op: &'static str,
    pub seed: u64,
    /// Largest |analytic − numeric| / (|analytic| + 1e-8) over all inputs.
    pub max_rel_err: f64,
    pub checked: usize,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(2..=4)
}

fn fixture(op: &str, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Build) {
    let (a, b, c) = (dim(rng), dim(rng), dim(rng));
    match op {
        "matmul" => (vec![vec![a, b], vec![b, c]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        "add" => (vec![vec![a, b, c], vec![a, b, c]], Box::new(|t, v| t.add(v[0], v[1]))),
        "add_bias" => (vec![vec![a, b], vec![b]], Box::new(|t, v| t.add_bias(v[0], v[1]))),
        "mul" => (vec![vec![a, b], vec![a, b]], Box::new(|t, v| t.mul(v[0], v[1]))),
        "scale" => (vec![vec![a, b]], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        "relu" => (vec![vec![a, b, c]], Box::new(|t, v| Ok(t.relu(v[0])))),
        "softmax" => {
            let axis = rng.random_range(0..3);
            (vec![vec![a, b, c]], Box::new(move |t, v| t.softmax(v[0], axis)))
        }
        "layer_norm" => (
            vec![vec![a, b + 1], vec![b + 1], vec![b + 1]],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        ),
        "conv1d" => {
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=2);
            let k = rng.random_range(2..=3);
            let l = rng.random_range(5..=8);
            (
                vec![vec![a, b, l], vec![c, b, k], vec![c]],
                Box::new(move |t, v| t.conv1d(v[0], v[1], Some(v[2]), stride, pad)),
            )
        }
        "embedding_lookup" => {
            let ids: Vec<usize> = (0..b + 2).map(|_| rng.random_range(0..a)).collect();
            (vec![vec![a, c]], Box::new(move |t, v| t.embedding_lookup(v[0], &ids)))
        }
        "multi_head_attention" => {
            let heads = rng.random_range(1..=2);
            let seq = b;
            let shape = vec![a * seq, heads * c];
            (
                vec![shape.clone(), shape.clone(), shape],
                Box::new(move |t, v| t.multi_head_attention(v[0], v[1], v[2], heads, seq)),
            )
        }
        "mse_loss" => (vec![vec![a, b], vec![a, b]], Box::new(|t, v| t.mse_loss(v[0], v[1]))),
        "bce_with_logits" => {
            let y: Vec<f64> = (0..a * b).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            (vec![vec![a, b]], Box::new(move |t, v| t.bce_with_logits(v[0], &y)))
        }
        "reshape" => (vec![vec![a, b, c]], Box::new(move |t, v| t.reshape(v[0], &[b, a * c]))),
        "concat" => {
            let axis = rng.random_range(0..2);
            let mut s2 = vec![a, b];
            s2[axis] = c;
            (vec![vec![a, b], s2], Box::new(move |t, v| t.concat(&[v[0], v[1]], axis)))
        }
        "sum_all" => (vec![vec![a, b]], Box::new(|t, v| Ok(t.sum_all(v[0])))),
        "mean_all" => (vec![vec![a, b, c]], Box::new(|t, v| Ok(t.mean_all(v[0])))),
        other => panic!("unknown op {other}"),
    }
}

/// Input values kept away from the ReLU kink so differences stay one-sided.
fn sample(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// Loss = Σ op(inputs) ⊙ R for a fixed random R, so every output element
/// contributes a distinct weight.
fn objective(build: &Build, inputs: &[Tensor<f64>], weights: &Tensor<f64>, live: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| if live { tape.input(x.clone()) } else { tape.constant(x.clone()) })
        .collect();
    let out = build(&mut tape, &vars)?;
    let w = tape.constant(weights.clone().reshaped(tape.value(out).shape())?);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum_all(prod);
    let value = tape.value(loss).item();
    if !live {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| g.wrt(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; x.numel()]))
        .collect();
    Ok((value, grads))
}

pub fn check_op(op: &'static str, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let (shapes, build) = fixture(op, &mut rng);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(s, &mut rng)).collect();
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let o = build(&mut tape, &vars)?;
        tape.value(o).numel()
    };
    let weights = sample(&[out_len], &mut rng);
    let (_, analytic) = objective(&build, &inputs, &weights, true)?;
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let fp = objective(&build, &plus, &weights, false)?.0;
            let fm = objective(&build, &minus, &weights, false)?.0;
            let numeric = (fp - fm) / (2.0 * EPS);
            let a = analytic[i][j];
            max_rel_err = max_rel_err.max((a - numeric).abs() / (a.abs() + 1e-8));
            checked += 1;
        }
    }
    Ok(CheckReport { op, seed, max_rel_err, checked })
}
