//! Parameterized layers. Each layer stores indices into a [`ParamSet`];
//! a forward pass looks the bound variables up in a [`Bound`] view.

use rand::Rng;
use yoas_core::Scalar;

use crate::error::Result;
use crate::params::ParamSet;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Every parameter of a set bound onto one tape.
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn new<T: Scalar>(tape: &mut Tape<T>, ps: &ParamSet<T>) -> Self {
        Self((0..ps.len()).map(|i| tape.param(ps, i)).collect())
    }

    pub fn get(&self, idx: usize) -> Var {
        self.0[idx]
    }

    /// Adds the gradients of the bound parameters into `ps`.
    pub fn accumulate<T: Scalar>(&self, grads: &Gradients<T>, ps: &mut ParamSet<T>) {
        for (i, &v) in self.0.iter().enumerate() {
            if let Some(g) = grads.wrt(v) {
                for (a, &b) in ps.grad_mut(i).iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = ps.add(format!("{name}.w"), Tensor::uniform(&[fan_in, fan_out], bound, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// Same layout with all weights zero.
    pub fn zeros<T: Scalar>(ps: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(self.w))?;
        tape.add_bias(y, p.get(self.b))
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, width: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::new(vec![width], vec![T::one(); width]).expect("sized"));
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[width]));
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.get(self.gamma), p.get(self.beta))
    }
}

/// Pre-norm encoder block: self-attention then a two-layer ReLU MLP, each
/// wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl EncoderBlock {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        hidden: usize,
        mlp: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), hidden),
            q: Linear::new(ps, &format!("{name}.q"), hidden, hidden, rng),
            k: Linear::new(ps, &format!("{name}.k"), hidden, hidden, rng),
            v: Linear::new(ps, &format!("{name}.v"), hidden, hidden, rng),
            o: Linear::new(ps, &format!("{name}.o"), hidden, hidden, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), hidden),
            fc1: Linear::new(ps, &format!("{name}.fc1"), hidden, mlp, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), mlp, hidden, rng),
            heads,
        }
    }

    pub fn param_count(hidden: usize, mlp: usize) -> usize {
        2 * 2 * hidden + 4 * Linear::param_count(hidden, hidden) + Linear::param_count(hidden, mlp) + Linear::param_count(mlp, hidden)
    }

    /// `x` is `[batch * seq, hidden]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, seq: usize) -> Result<Var> {
        let h = self.ln1.forward(tape, p, x)?;
        let q = self.q.forward(tape, p, h)?;
        let k = self.k.forward(tape, p, h)?;
        let v = self.v.forward(tape, p, h)?;
        let a = tape.multi_head_attention(q, k, v, self.heads, seq)?;
        let a = self.o.forward(tape, p, a)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, p, x)?;
        let h = self.fc1.forward(tape, p, h)?;
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, p, h)?;
        tape.add(x, h)
    }
}
