//! Eikonal speed-ratio training.
//!
//! For each sampled pair the model's predicted speeds `S = 1 / |grad T|` at both ends are
//! compared with the TSDF speed via `(sqrt(S / S*) - 1)^2`. The loss depends on the input
//! gradient of `T`, so parameter gradients flow through the encoders' Jacobian sweep.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::Decomposition;
use crate::field::{pair_gradients, speed_from_grad, FieldModel, GeneratorParams, Gradients, PointTrace, GRAD_EPS};
use crate::gridworld::{Environment, FreeSampler};
use crate::siren::EncoderArch;
use crate::{Config2, Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub local_pair_fraction: f64,
    /// Radius (meters) for near pairs; defaults to 15% of the larger map extent.
    pub local_radius: Option<f64>,
    pub seed: u64,
    /// Minimum clearance (meters) of sampled configurations.
    pub margin: f64,
    /// Calls the checkpoint observer every this many epochs (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 512,
            steps_per_epoch: 1,
            learning_rate: 1e-3,
            lr_decay: 0.9995,
            local_pair_fraction: 0.5,
            local_radius: None,
            seed: 0,
            margin: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and steps_per_epoch must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument("learning rate and decay must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.local_pair_fraction) {
            return Err(Error::InvalidArgument("local_pair_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,epoch_seconds\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.seconds));
        }
        s
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|r| r.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

/// One training pair with its ground-truth speeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T> {
    pub q_s: Config2<T>,
    pub q_g: Config2<T>,
    pub speed_s: T,
    pub speed_g: T,
}

/// `(sqrt(S_pred / S_true) - 1)^2`
pub fn speed_ratio_loss<T: Real>(s_pred: T, s_true: T) -> Result<T> {
    if !(s_pred > T::zero() && s_true > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "speeds must be positive (pred {s_pred}, true {s_true})"
        )));
    }
    let r = (s_pred / s_true).sqrt() - T::one();
    Ok(r * r)
}

fn local_radius<T: Real>(env: &Environment<T>, cfg: &TrainConfig) -> T {
    match cfg.local_radius {
        Some(r) => T::lit(r),
        None => {
            let e = env.bounds().extent();
            e[0].max(e[1]) * T::lit(0.15)
        }
    }
}

/// Draws a batch: the first `round(local_pair_fraction * batch_size)` pairs are near pairs
/// (goal within `local_radius` of the start), the rest independent uniforms.
pub fn sample_batch<T: Real, R: Rng + ?Sized>(env: &Environment<T>, cfg: &TrainConfig, rng: &mut R) -> Result<Vec<Sample<T>>> {
    let sampler = FreeSampler::new(&env.field, T::lit(cfg.margin))?;
    let n_local = (cfg.local_pair_fraction * cfg.batch_size as f64).round() as usize;
    let radius = local_radius(env, cfg);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let speed = |q: &Config2<T>| env.speed.speed(env.field.interpolate_unchecked(q));
    while batch.len() < cfg.batch_size {
        let q_s = sampler.sample(rng);
        let q_g = if batch.len() < n_local {
            match sampler.sample_near(&q_s, radius, 64, rng) {
                Some(q) => q,
                None => continue,
            }
        } else {
            sampler.sample(rng)
        };
        batch.push(Sample {
            q_s,
            q_g,
            speed_s: speed(&q_s),
            speed_g: speed(&q_g),
        });
    }
    Ok(batch)
}

/// `dL/dgrad` for one endpoint: returns the loss term and its adjoint w.r.t. the gradient.
fn endpoint_loss<T: Real>(grad: &Config2<T>, s_true: T) -> Result<(T, Config2<T>)> {
    let s = speed_from_grad(grad);
    let loss = speed_ratio_loss(s, s_true)?;
    let n = grad.norm();
    if !(n > T::lit(GRAD_EPS)) {
        return Ok((loss, Config2::default()));
    }
    let dl_ds = ((s / s_true).sqrt() - T::one()) / (s * s_true).sqrt();
    // S = 1/|g|  =>  dS/dg = -g / |g|^3
    Ok((loss, *grad * (-dl_ds / (n * n * n))))
}

struct PairWorkspace<T> {
    s: PointTrace<T>,
    g: PointTrace<T>,
    bar: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Real> PairWorkspace<T> {
    fn new() -> Self {
        PairWorkspace {
            s: PointTrace::default(),
            g: PointTrace::default(),
            bar: Vec::new(),
            scratch: Vec::new(),
        }
    }
}

/// Loss of one pair; accumulates `scale * dL/dparams` into `grads`.
fn pair_loss_grad<T: Real>(
    model: &FieldModel<T>,
    sample: &Sample<T>,
    scale: T,
    ws: &mut PairWorkspace<T>,
    grads: &mut Gradients<T>,
) -> Result<T> {
    model.trace_point_into(&sample.q_s, &mut ws.s)?;
    model.trace_point_into(&sample.q_g, &mut ws.g)?;
    let (_, dt) = model.generator(&ws.s.out, &ws.g.out, true);
    let (gs, gg) = pair_gradients(&ws.s.out, &ws.g.out, &dt);
    let (ls, bar_gs) = endpoint_loss(&gs, sample.speed_s)?;
    let (lg, bar_gg) = endpoint_loss(&gg, sample.speed_g)?;
    let loss = ls + lg;
    if !loss.is_finite() {
        return Err(Error::Numerical("pair loss"));
    }
    let k = model.embed_dim;
    let (bar_gs, bar_gg) = (bar_gs * scale, bar_gg * scale);
    if bar_gs == Config2::default() && bar_gg == Config2::default() {
        return Ok(loss);
    }
    // Adjoint of dt from both gradient maps, then through the softmax-sign weights.
    let ab = model.alpha * model.beta;
    let mut dt_bar = vec![T::zero(); k];
    for j in 0..k {
        dt_bar[j] = ws.s.out[3 * j + 1] * bar_gs[0] + ws.s.out[3 * j + 2] * bar_gs[1]
            - ws.g.out[3 * j + 1] * bar_gg[0]
            - ws.g.out[3 * j + 2] * bar_gg[1];
    }
    // dt_j = ab * p_j * sgn_j ; p = softmax(beta |delta|)
    let p = softmax_abs_diff(&ws.s.out, &ws.g.out, model.beta, k);
    let mut dot = T::zero();
    let mut p_bar = vec![T::zero(); k];
    for j in 0..k {
        let sg = sign_of(ws.s.out[3 * j] - ws.g.out[3 * j]);
        p_bar[j] = dt_bar[j] * ab * sg;
        dot += p[j] * p_bar[j];
    }
    ws.bar.clear();
    ws.bar.resize(3 * k, T::zero());
    let mut bar_s = std::mem::take(&mut ws.bar);
    let mut bar_g = vec![T::zero(); 3 * k];
    for j in 0..k {
        let delta = ws.s.out[3 * j] - ws.g.out[3 * j];
        let sg = sign_of(delta);
        let a_bar = p[j] * (p_bar[j] - dot);
        let delta_bar = a_bar * model.beta * sg;
        bar_s[3 * j] = delta_bar;
        bar_g[3 * j] = -delta_bar;
        // grad_s = J_s^T dt ; grad_g = -J_g^T dt
        bar_s[3 * j + 1] = bar_gs[0] * dt[j];
        bar_s[3 * j + 2] = bar_gs[1] * dt[j];
        bar_g[3 * j + 1] = -bar_gg[0] * dt[j];
        bar_g[3 * j + 2] = -bar_gg[1] * dt[j];
    }
    model.backprop_point(&ws.s, &bar_s, grads, &mut ws.scratch);
    model.backprop_point(&ws.g, &bar_g, grads, &mut ws.scratch);
    ws.bar = bar_s;
    Ok(loss)
}

#[inline]
fn sign_of<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `softmax_j(beta |s_j - g_j|)` over the value slots of two triple arrays.
fn softmax_abs_diff<T: Real>(s: &[T], g: &[T], beta: T, k: usize) -> Vec<T> {
    let mut a: Vec<T> = (0..k).map(|i| beta * (s[3 * i] - g[3 * i]).abs()).collect();
    let m = a.iter().copied().fold(T::zero(), T::max);
    let mut z = T::zero();
    for v in a.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    a.iter_mut().for_each(|v| *v /= z);
    a
}

const CHUNK: usize = 32;

/// Mean batch loss and its parameter gradient. Chunks are reduced in a fixed order,
/// so results do not depend on the number of worker threads.
pub fn batch_loss_and_grad<T: Real>(model: &FieldModel<T>, batch: &[Sample<T>]) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = T::one() / T::from_usize(batch.len()).unwrap();
    let parts: Vec<Result<(T, Gradients<T>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = model.zero_gradients();
            let mut ws = PairWorkspace::new();
            let mut loss = T::zero();
            for sample in chunk {
                loss += pair_loss_grad(model, sample, scale, &mut ws, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = T::zero();
    let mut grads: Option<Gradients<T>> = None;
    for part in parts {
        let (l, g) = part?;
        total += l;
        match grads.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads = Some(g),
        }
    }
    let grads = grads.unwrap();
    let loss = total * scale;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical("batch gradient"));
    }
    Ok((loss, grads))
}

/// Mean batch loss without gradients.
pub fn batch_loss<T: Real>(model: &FieldModel<T>, batch: &[Sample<T>]) -> Result<T> {
    let mut total = T::zero();
    for s in batch {
        let e = model.evaluate(&s.q_s, &s.q_g)?;
        total += speed_ratio_loss(e.speed_s, s.speed_s)? + speed_ratio_loss(e.speed_g, s.speed_g)?;
    }
    Ok(total / T::from_usize(batch.len()).unwrap())
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: i32,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &FieldModel<T>) -> Self {
        Adam {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: model.zero_gradients(),
            v: model.zero_gradients(),
        }
    }

    pub fn apply(&mut self, model: &mut FieldModel<T>, grads: &Gradients<T>, lr: T) {
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (e, enc) in model.encoders.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m.per_encoder[e], &mut self.v.per_encoder[e], &grads.per_encoder[e]);
            for (i, p) in enc.net.params.iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// One optimizer step; on numerical failure the model is left untouched.
pub fn train_step<T: Real>(model: &mut FieldModel<T>, batch: &[Sample<T>], opt: &mut Adam<T>, lr: T) -> Result<T> {
    let (loss, grads) = batch_loss_and_grad(model, batch)?;
    opt.apply(model, &grads, lr);
    Ok(loss)
}

/// Builds, prunes, initializes and trains a model. `on_checkpoint` is called every
/// `cfg.checkpoint_every` epochs and after the final epoch.
pub fn fit<T: Real>(
    env: &Environment<T>,
    decomposition: &Decomposition<T>,
    arch: &EncoderArch,
    generator: &GeneratorParams,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &FieldModel<T>),
) -> Result<(FieldModel<T>, TrainLog)> {
    cfg.validate()?;
    let pruned = decomposition.prune(&env.field)?;
    let mut model = FieldModel::init(pruned, arch, generator, env.speed, cfg.seed)?;
    let mut opt = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut log = TrainLog::default();
    let mut lr = cfg.learning_rate;
    let mut failures = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut sum = 0.0;
        let mut ok = 0usize;
        for _ in 0..cfg.steps_per_epoch {
            let batch = sample_batch(env, cfg, &mut rng)?;
            match train_step(&mut model, &batch, &mut opt, T::lit(lr)) {
                Ok(l) => {
                    failures = 0;
                    sum += l.to_f64_lossy();
                    ok += 1;
                }
                Err(e @ Error::Numerical(_)) => {
                    failures += 1;
                    if failures >= 3 {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        lr *= cfg.lr_decay;
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: if ok > 0 { sum / ok as f64 } else { f64::NAN },
            seconds: start.elapsed().as_secs_f64(),
        });
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            on_checkpoint(epoch + 1, &model);
        }
    }
    Ok((model, log))
}
