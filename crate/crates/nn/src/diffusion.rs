//! Conditional diffusion refiner turning a one-stage bias into a two-stage
//! bias aligned with the reference channel and electrode position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use yoas_core::biasing::reconstruct;
use yoas_core::paths::correlation_distance;
use yoas_core::Scalar;

use crate::adam::{Adam, AdamConfig};
use crate::error::{NnError, Result};
use crate::gan::Norm;
use crate::layers::Bound;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    /// Linear betas from 1e-4 to 0.02 stretched to `steps` so the total
    /// noise matches a 1000-step chain.
    pub fn scaled_linear(steps: usize) -> Self {
        let k = 1000.0 / steps.max(1) as f64;
        Self { steps, beta_start: 1e-4 * k, beta_end: (0.02 * k).min(0.999) }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::scaled_linear(100)
    }
}

/// Step-indexed tables; index 0 holds the noiseless convention
/// (`alpha_bar = 1`), indices `1..=T` the actual steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas2: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(cfg: &ScheduleConfig) -> Result<Self> {
        let t = cfg.steps;
        if t == 0 {
            return Err(NnError::Config("diffusion needs at least one step".into()));
        }
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !ok(cfg.beta_start) || !ok(cfg.beta_end) {
            return Err(NnError::Config(format!("betas {} and {} must lie in (0, 1)", cfg.beta_start, cfg.beta_end)));
        }
        let mut alphas = vec![1.0];
        let mut alpha_bars = vec![1.0];
        let mut sigmas2 = vec![0.0];
        for s in 1..=t {
            let frac = if t == 1 { 0.0 } else { (s - 1) as f64 / (t - 1) as f64 };
            let beta = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
            let a = 1.0 - beta;
            let ab = alpha_bars[s - 1] * a;
            sigmas2.push((1.0 - alpha_bars[s - 1]) / (1.0 - ab) * (1.0 - a));
            alphas.push(a);
            alpha_bars.push(ab);
        }
        Ok(Self { alphas, alpha_bars, sigmas2 })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(NnError::Index { t, max: self.steps() });
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-step variance; zero at `t = 1`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigmas2[t]
    }
}

/// `B_t = sqrt(abar_t) B_0 + sqrt(1 - abar_t) eps`; `t = 0` returns `B_0`.
pub fn forward_diffuse<T: Scalar>(b0: &[T], t: usize, sched: &DiffusionSchedule, eps: &[T]) -> Result<Vec<T>> {
    sched.check(t)?;
    if b0.len() != eps.len() {
        return Err(NnError::Shape { op: "forward_diffuse", detail: format!("{} vs {} samples", b0.len(), eps.len()) });
    }
    let ab = sched.alpha_bar(t);
    let (c0, c1) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    Ok(b0.iter().zip(eps).map(|(&b, &e)| c0 * b + c1 * e).collect())
}

/// Mean of the reverse transition given a noise estimate.
pub fn reverse_mean<T: Scalar>(bt: &[T], t: usize, sched: &DiffusionSchedule, eps_hat: &[T]) -> Result<Vec<T>> {
    sched.check(t)?;
    if t == 0 {
        return Err(NnError::Index { t, max: sched.steps() });
    }
    if bt.len() != eps_hat.len() {
        return Err(NnError::Shape { op: "reverse_step", detail: format!("{} vs {} samples", bt.len(), eps_hat.len()) });
    }
    let a = sched.alpha(t);
    let k = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    Ok(bt.iter().zip(eps_hat).map(|(&b, &e)| T::of(inv * (b.f64() - k * e.f64()))).collect())
}

/// One ancestral sampling step `B_t -> B_{t-1}`.
pub fn reverse_step<T: Scalar>(
    bt: &[T],
    t: usize,
    sched: &DiffusionSchedule,
    eps_hat: &[T],
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    let mut mu = reverse_mean(bt, t, sched, eps_hat)?;
    let sigma = sched.sigma2(t).sqrt();
    if sigma > 0.0 {
        for m in &mut mu {
            let z: f64 = StandardNormal.sample(rng);
            *m = *m + T::of(sigma * z);
        }
    }
    Ok(mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffConfig {
    pub schedule: ScheduleConfig,
    pub channels: usize,
    pub kernel: usize,
    pub time_dim: usize,
    /// Training crop length in samples.
    pub crop: usize,
    pub batch: usize,
    pub train_steps: usize,
    pub lr: f64,
    /// Weight of the MSE pulling `Diff_init` toward the real bias.
    pub fusion_weight: f64,
}

impl DiffConfig {
    pub fn desk() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            channels: 16,
            kernel: 9,
            time_dim: 8,
            crop: 64,
            batch: 16,
            train_steps: 300,
            lr: 1e-3,
            fusion_weight: 1.0,
        }
    }

    pub fn paper() -> Self {
        Self { channels: 64, crop: 512, batch: 64, train_steps: 10_000, lr: 1e-4, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(NnError::Config(format!(
                "channels {} must be positive and time_dim {} positive and even",
                self.channels, self.time_dim
            )));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(NnError::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.crop < self.kernel || self.batch == 0 {
            return Err(NnError::Config(format!("crop {} and batch {} too small", self.crop, self.batch)));
        }
        if !(self.lr >= 0.0) || !(self.fusion_weight >= 0.0) {
            return Err(NnError::Config("lr and fusion_weight must be non-negative".into()));
        }
        DiffusionSchedule::new(&self.schedule).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    pad: usize,
}

impl Conv {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / ((cin + cout) * k) as f64).sqrt();
        let w = ps.add(format!("{name}.w"), Tensor::uniform(&[cout, cin, k], bound, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b, pad: k / 2 }
    }

    fn zeros<T: Scalar>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[cout, cin, 1]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b, pad: 0 }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv1d(x, p.get(self.w), Some(p.get(self.b)), 1, self.pad)
    }
}

/// Sinusoidal embedding of step `t`, `dim` values.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let w = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * w).sin());
    }
    for k in 0..half {
        let w = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * w).cos());
    }
    out
}

#[derive(Debug, Clone)]
pub struct DiffModel<T: Scalar> {
    pub cfg: DiffConfig,
    pub params: ParamSet<T>,
    pub norm: Norm,
    /// Target electrode position relative to the reference.
    pub position: [f64; 2],
    /// Step at which inference stops, fixed by [`DiffModel::calibrate`].
    pub t_hat: usize,
    schedule: DiffusionSchedule,
    cb1: Conv,
    cb2: Conv,
    proj: Conv,
    d1: Conv,
    d2: Conv,
    out: Conv,
}

/// One finished reverse trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStage {
    pub bias: Vec<f64>,
    pub t_hat: usize,
    pub below_threshold: bool,
    /// `trace[t]` is D_t for `t = 0..=T`.
    pub trace: Vec<f64>,
}

/// Mean D_t per step over a calibration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub t_hat: usize,
    pub below_threshold: bool,
    pub trace: Vec<f64>,
    /// Calibration-set biases at the chosen step, raw units.
    pub biases: Vec<Vec<f64>>,
}

impl<T: Scalar> DiffModel<T> {
    pub fn build(cfg: &DiffConfig, position: [f64; 2], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let (c, k) = (cfg.channels, cfg.kernel);
        let cb1 = Conv::new(&mut ps, "conv1", 4, c, k, &mut rng);
        let cb2 = Conv::new(&mut ps, "conv2", c, c, k, &mut rng);
        let proj = Conv::zeros(&mut ps, "init_proj", c, 1);
        let d1 = Conv::new(&mut ps, "eps1", 2 + c + cfg.time_dim, c, k, &mut rng);
        let d2 = Conv::new(&mut ps, "eps2", c, c, k, &mut rng);
        let out = Conv::zeros(&mut ps, "eps_out", c, 1);
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            norm: Norm::default(),
            position: position.map(|v| T::of(v).f64()),
            t_hat: 0,
            schedule: DiffusionSchedule::new(&cfg.schedule)?,
            cb1,
            cb2,
            proj,
            d1,
            d2,
            out,
        })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn rows_tensor(rows: &[Vec<T>]) -> Result<Tensor<T>> {
        let l = rows.first().map_or(0, Vec::len);
        Tensor::new(vec![rows.len(), 1, l], rows.iter().flatten().copied().collect())
    }

    fn position_tensor(&self, batch: usize, len: usize) -> Tensor<T> {
        let mut d = Vec::with_capacity(batch * 2 * len);
        for _ in 0..batch {
            for &p in &self.position {
                d.extend(std::iter::repeat_n(T::of(p), len));
            }
        }
        Tensor::new(vec![batch, 2, len], d).expect("sized")
    }

    /// ConvBlock over `[b; O; dx; dy]`.
    fn features(&self, tape: &mut Tape<T>, p: &Bound, b: Var, o: Var) -> Result<Var> {
        let s = tape.value(b).shape().to_vec();
        let pos = tape.constant(self.position_tensor(s[0], s[2]));
        let x = tape.concat(&[b, o, pos], 1)?;
        let h = self.cb1.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.cb2.forward(tape, p, h)?;
        Ok(tape.relu(h))
    }

    fn init_from(&self, tape: &mut Tape<T>, p: &Bound, b: Var, feats: Var) -> Result<Var> {
        let d = self.proj.forward(tape, p, feats)?;
        tape.add(b, d)
    }

    /// Noise estimate from `[B_t; Diff_init; features; t embedding]`.
    fn eps(&self, tape: &mut Tape<T>, p: &Bound, bt: Var, init: Var, feats: Var, ts: &[usize]) -> Result<Var> {
        let s = tape.value(bt).shape().to_vec();
        let (n, l, e) = (s[0], s[2], self.cfg.time_dim);
        let mut emb = Vec::with_capacity(n * e * l);
        for &t in ts {
            for v in time_embedding(t, e) {
                emb.extend(std::iter::repeat_n(T::of(v), l));
            }
        }
        let emb = tape.constant(Tensor::new(vec![n, e, l], emb)?);
        let x = tape.concat(&[bt, init, feats, emb], 1)?;
        let h = self.d1.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.d2.forward(tape, p, h)?;
        let h = tape.relu(h);
        self.out.forward(tape, p, h)
    }

    fn normalize(&self, rows: &[Vec<f64>], mean: f64, std: f64) -> Vec<Vec<T>> {
        rows.iter().map(|r| r.iter().map(|&v| T::of((v - mean) / std)).collect()).collect()
    }

    fn check_rows(op: &'static str, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
        let l = a.first().map_or(0, Vec::len);
        if a.len() != b.len() || a.iter().chain(b).any(|r| r.len() != l) {
            return Err(NnError::Shape { op, detail: "segments must share one length".into() });
        }
        Ok(l)
    }

    /// `Diff_init(b, O, rd)` in raw units. Untrained, this is `b` itself.
    pub fn init_signal(&self, b: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
        if b.len() != reference.len() {
            return Err(NnError::Shape { op: "init_signal", detail: format!("{} vs {} samples", b.len(), reference.len()) });
        }
        let n = self.norm;
        let bn = self.normalize(&[b.to_vec()], n.bias_mean, n.bias_std);
        let on = self.normalize(&[reference.to_vec()], n.ref_mean, n.ref_std);
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params);
        let bv = tape.constant(Self::rows_tensor(&bn)?);
        let ov = tape.constant(Self::rows_tensor(&on)?);
        let f = self.features(&mut tape, &p, bv, ov)?;
        let init = self.init_from(&mut tape, &p, bv, f)?;
        Ok(tape.value(init).data().iter().map(|v| v.f64() * n.bias_std + n.bias_mean).collect())
    }

    /// Trains the noise predictor and the fusion projection on random crops.
    /// `one_stage`, `refs` and `targets` are parallel segment lists in raw
    /// units; the target is the real bias. Returns the per-step loss.
    pub fn train(&mut self, one_stage: &[Vec<f64>], refs: &[Vec<f64>], targets: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
        let len = Self::check_rows("train_denoiser", one_stage, refs)?;
        if Self::check_rows("train_denoiser", one_stage, targets)? != len || one_stage.is_empty() {
            return Err(NnError::Config("no training segments".into()));
        }
        if len < self.cfg.crop {
            return Err(NnError::Config(format!("segments of {len} samples are shorter than crop {}", self.cfg.crop)));
        }
        if one_stage.iter().chain(refs).chain(targets).flatten().any(|v| !v.is_finite()) {
            return Err(NnError::Config("non-finite training sample".into()));
        }
        self.norm = Norm::fit(refs, targets).rounded::<T>();
        let n = self.norm;
        let bs = self.normalize(one_stage, n.bias_mean, n.bias_std);
        let os = self.normalize(refs, n.ref_mean, n.ref_std);
        let ys = self.normalize(targets, n.bias_mean, n.bias_std);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(AdamConfig::with_lr(self.cfg.lr), &self.params);
        let (crop, tmax) = (self.cfg.crop, self.schedule.steps());
        let mut history = Vec::with_capacity(self.cfg.train_steps);
        for step in 0..self.cfg.train_steps {
            let mut cb = Vec::new();
            let mut co = Vec::new();
            let mut cy = Vec::new();
            let mut ts = Vec::new();
            let mut noisy = Vec::new();
            let mut eps = Vec::new();
            for _ in 0..self.cfg.batch {
                let i = rng.random_range(0..bs.len());
                let s = rng.random_range(0..=len - crop);
                let t = rng.random_range(1..=tmax);
                let e: Vec<T> = (0..crop)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::of(z)
                    })
                    .collect();
                let y = ys[i][s..s + crop].to_vec();
                noisy.push(forward_diffuse(&y, t, &self.schedule, &e)?);
                cb.push(bs[i][s..s + crop].to_vec());
                co.push(os[i][s..s + crop].to_vec());
                cy.push(y);
                ts.push(t);
                eps.push(e);
            }
            let mut tape = Tape::new();
            let p = Bound::new(&mut tape, &self.params);
            let bv = tape.constant(Self::rows_tensor(&cb)?);
            let ov = tape.constant(Self::rows_tensor(&co)?);
            let f = self.features(&mut tape, &p, bv, ov)?;
            let init = self.init_from(&mut tape, &p, bv, f)?;
            let nv = tape.constant(Self::rows_tensor(&noisy)?);
            let pred = self.eps(&mut tape, &p, nv, init, f, &ts)?;
            let ev = tape.constant(Self::rows_tensor(&eps)?);
            let mut loss = tape.mse_loss(pred, ev)?;
            let noise_loss = tape.value(loss).item().f64();
            if self.cfg.fusion_weight > 0.0 {
                let yv = tape.constant(Self::rows_tensor(&cy)?);
                let fl = tape.mse_loss(init, yv)?;
                let fl = tape.scale(fl, T::of(self.cfg.fusion_weight));
                loss = tape.add(loss, fl)?;
            }
            if !tape.value(loss).item().is_finite() {
                return Err(NnError::TrainingDiverged { epoch: step });
            }
            let g = tape.backward(loss)?;
            p.accumulate(&g, &mut self.params);
            if !self.params.grads_finite() {
                return Err(NnError::TrainingDiverged { epoch: step });
            }
            opt.step(&mut self.params, 0);
            history.push(noise_loss);
        }
        Ok(history)
    }

    /// Noise-prediction loss on fixed draws, for before/after comparisons.
    pub fn eval_loss(&self, refs: &[Vec<f64>], one_stage: &[Vec<f64>], targets: &[Vec<f64>], seed: u64) -> Result<f64> {
        Self::check_rows("eval_loss", one_stage, refs)?;
        Self::check_rows("eval_loss", one_stage, targets)?;
        let n = self.norm;
        let bs = self.normalize(one_stage, n.bias_mean, n.bias_std);
        let os = self.normalize(refs, n.ref_mean, n.ref_std);
        let ys = self.normalize(targets, n.bias_mean, n.bias_std);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts = Vec::new();
        let mut noisy = Vec::new();
        let mut eps = Vec::new();
        for y in &ys {
            let t = rng.random_range(1..=self.schedule.steps());
            let e: Vec<T> = (0..y.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::of(z)
                })
                .collect();
            noisy.push(forward_diffuse(y, t, &self.schedule, &e)?);
            ts.push(t);
            eps.push(e);
        }
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params);
        let bv = tape.constant(Self::rows_tensor(&bs)?);
        let ov = tape.constant(Self::rows_tensor(&os)?);
        let f = self.features(&mut tape, &p, bv, ov)?;
        let init = self.init_from(&mut tape, &p, bv, f)?;
        let nv = tape.constant(Self::rows_tensor(&noisy)?);
        let pred = self.eps(&mut tape, &p, nv, init, f, &ts)?;
        let ev = tape.constant(Self::rows_tensor(&eps)?);
        let l = tape.mse_loss(pred, ev)?;
        Ok(tape.value(l).item().f64())
    }

    /// Runs the reverse chain from `B_T` down to `stop`, calling `visit`
    /// with each step index and the batch in raw units.
    fn trajectory(
        &self,
        one_stage: &[Vec<f64>],
        refs: &[Vec<f64>],
        stop: usize,
        seed: u64,
        mut visit: impl FnMut(usize, &[Vec<f64>]) -> Result<()>,
    ) -> Result<Vec<Vec<f64>>> {
        let len = Self::check_rows("generate_two_stage", one_stage, refs)?;
        if one_stage.is_empty() {
            return Ok(Vec::new());
        }
        if len < self.cfg.kernel {
            return Err(NnError::Shape { op: "generate_two_stage", detail: format!("{len} samples is shorter than the kernel") });
        }
        let n = self.norm;
        let to_raw = |flat: &[T]| -> Vec<Vec<f64>> {
            flat.chunks(len).map(|r| r.iter().map(|v| v.f64() * n.bias_std + n.bias_mean).collect()).collect()
        };
        let bs = self.normalize(one_stage, n.bias_mean, n.bias_std);
        let os = self.normalize(refs, n.ref_mean, n.ref_std);
        let (feats, init) = {
            let mut tape = Tape::new();
            let p = Bound::new(&mut tape, &self.params);
            let bv = tape.constant(Self::rows_tensor(&bs)?);
            let ov = tape.constant(Self::rows_tensor(&os)?);
            let f = self.features(&mut tape, &p, bv, ov)?;
            let init = self.init_from(&mut tape, &p, bv, f)?;
            (tape.value(f).clone(), tape.value(init).data().to_vec())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tmax = self.schedule.steps();
        let z: Vec<T> = (0..init.len())
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                T::of(e)
            })
            .collect();
        let mut b = forward_diffuse(&init, tmax, &self.schedule, &z)?;
        visit(tmax, &to_raw(&b))?;
        let ts = vec![0; one_stage.len()];
        for t in (stop.max(1)..=tmax).rev() {
            let mut tape = Tape::new();
            let p = Bound::new(&mut tape, &self.params);
            let f = tape.constant(feats.clone());
            let iv = tape.constant(Tensor::new(vec![one_stage.len(), 1, len], init.clone())?);
            let bv = tape.constant(Tensor::new(vec![one_stage.len(), 1, len], b.clone())?);
            let ts: Vec<usize> = ts.iter().map(|_| t).collect();
            let e = self.eps(&mut tape, &p, bv, iv, f, &ts)?;
            b = reverse_step(&b, t, &self.schedule, tape.value(e).data(), &mut rng)?;
            visit(t - 1, &to_raw(&b))?;
        }
        Ok(to_raw(&b))
    }

    /// Two-stage bias for each segment, stopping at the calibrated step.
    pub fn sample(&self, one_stage: &[Vec<f64>], refs: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
        self.trajectory(one_stage, refs, self.t_hat, seed, |_, _| Ok(()))
    }

    /// Mean D_t between reconstructed channels and their targets at every
    /// step. Undefined correlations count as the maximum distance 2.
    fn traces(&self, one_stage: &[Vec<f64>], refs: &[Vec<f64>], targets: &[Vec<f64>], seed: u64) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
        Self::check_rows("calibrate", refs, targets)?;
        let tmax = self.schedule.steps();
        let mut trace = vec![0.0; tmax + 1];
        let mut states = vec![Vec::new(); tmax + 1];
        let count = targets.len().max(1) as f64;
        self.trajectory(one_stage, refs, 0, seed, |t, b| {
            let mut s = 0.0;
            for ((bi, o), y) in b.iter().zip(refs).zip(targets) {
                let c = reconstruct(bi, o)?;
                s += correlation_distance(&c, y).unwrap_or(2.0);
            }
            trace[t] = s / count;
            states[t] = b.to_vec();
            Ok(())
        })?;
        Ok((trace, states))
    }

    /// Fixes the inference stop step on held-out segments with known targets.
    pub fn calibrate(&mut self, one_stage: &[Vec<f64>], refs: &[Vec<f64>], targets: &[Vec<f64>], p: f64, seed: u64) -> Result<Calibration> {
        let (trace, mut states) = self.traces(one_stage, refs, targets, seed)?;
        let (t_hat, below_threshold) = select_step(&trace, p);
        self.t_hat = t_hat;
        Ok(Calibration { t_hat, below_threshold, trace, biases: std::mem::take(&mut states[t_hat]) })
    }
}

/// Step minimizing D_t among those with D_t <= p, else the global minimum
/// with the flag cleared. Ties go to the later (less noisy) step.
pub fn select_step(trace: &[f64], p: f64) -> (usize, bool) {
    let argmin = |pred: &dyn Fn(f64) -> bool| {
        (0..trace.len()).filter(|&t| pred(trace[t])).min_by(|&a, &b| trace[a].total_cmp(&trace[b]).then(a.cmp(&b)))
    };
    match argmin(&|d| d <= p) {
        Some(t) => (t, true),
        None => (argmin(&|_| true).unwrap_or(0), false),
    }
}

/// Runs the full reverse chain for one segment, records D_t against the
/// division-context target at every step and returns the bias at the
/// selected step.
pub fn generate_two_stage<T: Scalar>(
    model: &DiffModel<T>,
    one_stage: &[f64],
    reference: &[f64],
    target: &[f64],
    p: f64,
    seed: u64,
) -> Result<TwoStage> {
    let (trace, mut states) = model.traces(&[one_stage.to_vec()], &[reference.to_vec()], &[target.to_vec()], seed)?;
    let (t_hat, below_threshold) = select_step(&trace, p);
    let bias = std::mem::take(&mut states[t_hat]).pop().unwrap_or_default();
    Ok(TwoStage { bias, t_hat, below_threshold, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_invariants() {
        let s = DiffusionSchedule::new(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 100);
        for t in 1..=100 {
            assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let want = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * (1.0 - s.alpha(t));
            assert!((s.sigma2(t) - want).abs() < 1e-15);
        }
        assert!(s.alpha_bar(100) < 0.05);
        assert_eq!(s.sigma2(1), 0.0);
        assert!(DiffusionSchedule::new(&ScheduleConfig { steps: 10, beta_start: 0.0, beta_end: 0.1 }).is_err());
    }

    #[test]
    fn forward_diffuse_limits() {
        let s = DiffusionSchedule::new(&ScheduleConfig::default()).unwrap();
        let b0 = [1.0, -2.0, 0.5];
        let eps = [0.3, 0.1, -0.7];
        assert_eq!(forward_diffuse(&b0, 0, &s, &eps).unwrap(), b0.to_vec());
        let z = forward_diffuse(&[0.0; 3], 40, &s, &eps).unwrap();
        for (a, e) in z.iter().zip(eps) {
            assert_eq!(*a, (1.0 - s.alpha_bar(40)).sqrt() * e);
        }
        assert!(matches!(forward_diffuse(&b0, 101, &s, &eps), Err(NnError::Index { t: 101, .. })));
        assert!(forward_diffuse(&b0, 3, &s, &eps[..2]).is_err());
    }

    #[test]
    fn oracle_noise_recovers_posterior_mean() {
        // With the true noise, the reverse mean equals the closed-form
        // posterior mean of q(B_{t-1} | B_t, B_0).
        let s = DiffusionSchedule::new(&ScheduleConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [1usize, 2, 25, 50, 100] {
            let b0: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eps: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            let bt = forward_diffuse(&b0, t, &s, &eps).unwrap();
            let mu = reverse_mean(&bt, t, &s, &eps).unwrap();
            let (ab, abp, a) = (s.alpha_bar(t), s.alpha_bar(t - 1), s.alpha(t));
            for i in 0..16 {
                let want = abp.sqrt() * (1.0 - a) / (1.0 - ab) * b0[i] + a.sqrt() * (1.0 - abp) / (1.0 - ab) * bt[i];
                assert!((mu[i] - want).abs() < 1e-5, "t={t}: {} vs {want}", mu[i]);
            }
            let step = reverse_step(&bt, 1, &s, &eps, &mut rng).unwrap();
            assert_eq!(step, reverse_mean(&bt, 1, &s, &eps).unwrap());
        }
    }

    #[test]
    fn init_signal_is_identity_before_training() {
        let m = DiffModel::<f32>::build(&DiffConfig::desk(), [0.3, -0.1], 1).unwrap();
        let b: Vec<f64> = (0..100).map(|i| (i as f64 * 0.2).sin()).collect();
        let out = m.init_signal(&b, &[0.0; 100]).unwrap();
        for (x, y) in out.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(out, m.init_signal(&b, &[0.0; 100]).unwrap());
        assert!(matches!(m.init_signal(&b, &[0.0; 99]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn select_step_rules() {
        let trace = [0.5, 0.2, 0.4, 0.2, 0.9];
        assert_eq!(select_step(&trace, 2.0), (1, true));
        assert_eq!(select_step(&trace, 0.1), (1, false));
        assert_eq!(select_step(&[0.3, 0.25], 0.3), (1, true));
    }

    #[test]
    fn time_embedding_shape() {
        let e = time_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_ne!(time_embedding(5, 8), time_embedding(6, 8));
    }
}
