//! Weighted composition of subdomain embeddings and the latent-distance time generator.
//!
//! `T(q_s, q_g) = alpha * log sum_j exp(beta * |phi_w(q_s)_j - phi_w(q_g)_j|)`, where
//! `phi_w` is the partition-of-unity blend of the encoders whose boxes contain the point.

use serde::{Deserialize, Serialize};

use crate::decomposition::{Decomposition, WeightTerm};
use crate::gridworld::{DistanceField, SpeedParams};
use crate::siren::{init_encoder, split_triples, EncoderArch, EncoderTape, Encoding, SubdomainEncoder};
use crate::{Config2, Error, Real, Result};

/// Speeds are `1 / max(|grad T|, GRAD_EPS)`.
pub const GRAD_EPS: f64 = 1e-8;

pub const MODEL_FORMAT: &str = "fbnt-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldModel<T> {
    pub format: String,
    pub version: u32,
    pub decomposition: Decomposition<T>,
    /// One encoder per active subdomain, in subdomain-id order.
    pub encoders: Vec<SubdomainEncoder<T>>,
    pub alpha: T,
    pub beta: T,
    pub embed_dim: usize,
    pub subtract_floor: bool,
    pub speed: SpeedParams<T>,
    #[serde(skip)]
    slot: Vec<Option<usize>>,
}

/// Time, gradients, and Eikonal speeds at a start/goal pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldEval<T> {
    pub time: T,
    pub grad_s: Config2<T>,
    pub grad_g: Config2<T>,
    pub speed_s: T,
    pub speed_g: T,
}

/// Generator hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub beta: f64,
    /// Defaults to `1 / beta` when absent.
    pub alpha: Option<f64>,
    pub subtract_floor: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            beta: 1.0,
            alpha: None,
            subtract_floor: false,
        }
    }
}

/// `1 / max(norm, eps)`
#[inline]
pub fn speed_from_grad<T: Real>(g: &Config2<T>) -> T {
    T::one() / g.norm().max(T::lit(GRAD_EPS))
}

impl<T: Real> FieldModel<T> {
    /// Randomly initialized model; encoder `i` uses seed `seed + subdomain id`.
    pub fn init(
        decomposition: Decomposition<T>,
        arch: &EncoderArch,
        generator: &GeneratorParams,
        speed: SpeedParams<T>,
        seed: u64,
    ) -> Result<Self> {
        let encoders = decomposition
            .subdomains
            .iter()
            .filter(|s| s.active)
            .map(|s| init_encoder(seed.wrapping_add(s.id as u64), arch, s))
            .collect::<Result<Vec<_>>>()?;
        if encoders.is_empty() {
            return Err(Error::NoFreeSubdomain);
        }
        let beta = generator.beta;
        let alpha = generator.alpha.unwrap_or(1.0 / beta);
        Self::from_parts(
            decomposition,
            encoders,
            T::lit(alpha),
            T::lit(beta),
            generator.subtract_floor,
            speed,
        )
    }

    pub fn from_parts(
        decomposition: Decomposition<T>,
        encoders: Vec<SubdomainEncoder<T>>,
        alpha: T,
        beta: T,
        subtract_floor: bool,
        speed: SpeedParams<T>,
    ) -> Result<Self> {
        let embed_dim = encoders.first().map(|e| e.embed_dim()).unwrap_or(0);
        let mut m = FieldModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            decomposition,
            encoders,
            alpha,
            beta,
            embed_dim,
            subtract_floor,
            speed,
            slot: Vec::new(),
        };
        m.link()?;
        Ok(m)
    }

    /// Validates invariants and rebuilds the subdomain -> encoder lookup.
    fn link(&mut self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        if !(self.alpha > T::zero() && self.beta > T::zero()) {
            return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
        }
        let active: Vec<usize> = self.decomposition.active_ids().collect();
        if active.len() != self.encoders.len() {
            return Err(Error::InvalidArgument(format!(
                "{} active subdomains but {} encoders",
                active.len(),
                self.encoders.len()
            )));
        }
        let mut slot = vec![None; self.decomposition.subdomains.len()];
        for (i, (e, id)) in self.encoders.iter().zip(active).enumerate() {
            e.validate()?;
            if e.subdomain != id || e.embed_dim() != self.embed_dim {
                return Err(Error::InvalidArgument(format!("encoder {i} does not match subdomain {id}")));
            }
            slot[id] = Some(i);
        }
        self.slot = slot;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.encoders.iter().map(|e| e.param_count()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: FieldModel<T> = serde_json::from_str(s)?;
        m.link()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    #[inline]
    pub(crate) fn encoder_index(&self, subdomain: usize) -> usize {
        self.slot[subdomain].expect("weights only reference active subdomains")
    }

    /// Blend weights normalized to sum to one, with gradients of the normalized weights.
    /// Falls back to the nearest active encoder when no weight is positive.
    pub fn normalized_weights(&self, q: &Config2<T>, terms: &mut Vec<WeightTerm<T>>) -> Result<()> {
        self.decomposition.weights_into(q, terms);
        if terms.is_empty() {
            let id = self.decomposition.active_cover(q)?;
            terms.push(WeightTerm {
                id,
                w: T::one(),
                grad: Config2::default(),
            });
            return Ok(());
        }
        let total: T = terms.iter().map(|t| t.w).sum();
        let total_grad = terms.iter().fold(Config2::default(), |acc, t| acc + t.grad);
        for t in terms.iter_mut() {
            let u = t.w / total;
            t.grad = (t.grad - total_grad * u) * (T::one() / total);
            t.w = u;
        }
        Ok(())
    }

    /// Global embedding and its Jacobian (k x 2, row-major).
    pub fn embed_global(&self, q: &Config2<T>) -> Result<Encoding<T>> {
        let trace = self.trace_point(q)?;
        Ok(split_triples(&trace.out))
    }

    /// Arrival time between two configurations.
    pub fn travel_time(&self, q_s: &Config2<T>, q_g: &Config2<T>) -> Result<T> {
        let s = self.trace_point(q_s)?;
        let g = self.trace_point(q_g)?;
        let (time, _) = self.generator(&s.out, &g.out, false);
        if !time.is_finite() {
            return Err(Error::Numerical("travel time"));
        }
        Ok(time)
    }

    /// Time, both gradients, and predicted speeds.
    pub fn evaluate(&self, q_s: &Config2<T>, q_g: &Config2<T>) -> Result<FieldEval<T>> {
        let s = self.trace_point(q_s)?;
        let g = self.trace_point(q_g)?;
        self.evaluate_blended(&s.out, &g.out)
    }

    /// Blended `[phi, dphi/dx, dphi/dy]` triples at `q`, for reuse across evaluations.
    pub fn blended(&self, q: &Config2<T>) -> Result<Vec<T>> {
        Ok(self.trace_point(q)?.out)
    }

    /// Evaluation from precomputed blended triples (see [`FieldModel::blended`]).
    pub fn evaluate_blended(&self, s: &[T], g: &[T]) -> Result<FieldEval<T>> {
        let (time, dt) = self.generator(s, g, true);
        let (grad_s, grad_g) = pair_gradients(s, g, &dt);
        if !(time.is_finite() && grad_s.is_finite() && grad_g.is_finite()) {
            return Err(Error::Numerical("field evaluation"));
        }
        Ok(FieldEval {
            time,
            grad_s,
            grad_g,
            speed_s: speed_from_grad(&grad_s),
            speed_g: speed_from_grad(&grad_g),
        })
    }

    /// Predicted speed field `S(q)` for a fixed partner configuration, at every cell center.
    pub fn speed_slice(&self, df: &DistanceField<T>, partner: &Config2<T>) -> Result<Vec<T>> {
        let g = &df.grid;
        let mut out = Vec::with_capacity(g.width * g.height);
        for j in 0..g.height {
            for i in 0..g.width {
                out.push(self.evaluate(partner, &g.cell_center(i, j))?.speed_g);
            }
        }
        Ok(out)
    }

    /// Arrival times from a fixed source to every cell center.
    pub fn time_slice(&self, df: &DistanceField<T>, source: &Config2<T>) -> Result<Vec<T>> {
        let g = &df.grid;
        let mut out = Vec::with_capacity(g.width * g.height);
        for j in 0..g.height {
            for i in 0..g.width {
                out.push(self.travel_time(source, &g.cell_center(i, j))?);
            }
        }
        Ok(out)
    }

    /// LogSumExp time from two output-triple arrays. With `want_grad`, also returns
    /// `dT/d phi_s` (the negation is `dT/d phi_g`), using `sign(0) = 0`.
    pub(crate) fn generator(&self, s: &[T], g: &[T], want_grad: bool) -> (T, Vec<T>) {
        let k = self.embed_dim;
        let mut a = Vec::with_capacity(k);
        let mut m = T::zero();
        for j in 0..k {
            let v = self.beta * (s[3 * j] - g[3 * j]).abs();
            if v > m {
                m = v;
            }
            a.push(v);
        }
        let mut z = T::zero();
        for v in a.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let mut time = self.alpha * (m + z.ln());
        if self.subtract_floor {
            time -= self.alpha * T::from_usize(k).unwrap().ln();
        }
        if !want_grad {
            return (time, Vec::new());
        }
        let ab = self.alpha * self.beta;
        for (j, v) in a.iter_mut().enumerate() {
            let d = s[3 * j] - g[3 * j];
            *v = ab * (*v / z) * sign(d);
        }
        (time, a)
    }

    /// Forward sweep of all encoders contributing at `q`, kept for the reverse sweep.
    pub(crate) fn trace_point(&self, q: &Config2<T>) -> Result<PointTrace<T>> {
        let mut trace = PointTrace::default();
        self.trace_point_into(q, &mut trace)?;
        Ok(trace)
    }

    pub(crate) fn trace_point_into(&self, q: &Config2<T>, trace: &mut PointTrace<T>) -> Result<()> {
        if !q.is_finite() {
            return Err(Error::Numerical("configuration"));
        }
        self.normalized_weights(q, &mut trace.terms)?;
        let k = self.embed_dim;
        trace.out.clear();
        trace.out.resize(3 * k, T::zero());
        let n = trace.terms.len();
        if trace.tapes.len() < n {
            trace.tapes.resize_with(n, Default::default);
        }
        trace.enc_out.resize(3 * k * n, T::zero());
        for (t, term) in trace.terms.iter().enumerate() {
            let enc = &self.encoders[self.encoder_index(term.id)];
            let buf = &mut trace.enc_out[3 * k * t..3 * k * (t + 1)];
            enc.forward(q, &mut trace.tapes[t], buf)?;
            // phi_w = sum u_i phi_i ; J_w = sum (phi_i grad(u_i)^T + u_i J_i)
            for j in 0..k {
                let (p, d0, d1) = (buf[3 * j], buf[3 * j + 1], buf[3 * j + 2]);
                trace.out[3 * j] += term.w * p;
                trace.out[3 * j + 1] += term.w * d0 + p * term.grad[0];
                trace.out[3 * j + 2] += term.w * d1 + p * term.grad[1];
            }
        }
        Ok(())
    }

    /// Pushes adjoints of the blended output triples back into encoder parameter gradients.
    pub(crate) fn backprop_point(&self, trace: &PointTrace<T>, out_bar: &[T], grads: &mut Gradients<T>, scratch: &mut Vec<T>) {
        let k = self.embed_dim;
        for (t, term) in trace.terms.iter().enumerate() {
            scratch.clear();
            scratch.resize(3 * k, T::zero());
            for j in 0..k {
                let (pb, jb0, jb1) = (out_bar[3 * j], out_bar[3 * j + 1], out_bar[3 * j + 2]);
                scratch[3 * j] = term.w * pb + jb0 * term.grad[0] + jb1 * term.grad[1];
                scratch[3 * j + 1] = term.w * jb0;
                scratch[3 * j + 2] = term.w * jb1;
            }
            let e = self.encoder_index(term.id);
            self.encoders[e].backward(&trace.tapes[t], scratch, &mut grads.per_encoder[e]);
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            per_encoder: self.encoders.iter().map(|e| vec![T::zero(); e.param_count()]).collect(),
        }
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `grad_s = J_s^T dt`, `grad_g = -J_g^T dt`.
pub(crate) fn pair_gradients<T: Real>(s: &[T], g: &[T], dt: &[T]) -> (Config2<T>, Config2<T>) {
    let mut gs = Config2::default();
    let mut gg = Config2::default();
    for (j, &d) in dt.iter().enumerate() {
        gs[0] += s[3 * j + 1] * d;
        gs[1] += s[3 * j + 2] * d;
        gg[0] -= g[3 * j + 1] * d;
        gg[1] -= g[3 * j + 2] * d;
    }
    (gs, gg)
}

/// Forward state of the blended embedding at one configuration.
#[derive(Clone, Debug, Default)]
pub(crate) struct PointTrace<T> {
    pub terms: Vec<WeightTerm<T>>,
    pub tapes: Vec<EncoderTape<T>>,
    pub enc_out: Vec<T>,
    /// Blended `[phi, dphi/dx, dphi/dy]` triples.
    pub out: Vec<T>,
}

/// Parameter gradients laid out like the encoders' flat parameter vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub per_encoder: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.per_encoder.iter_mut().zip(&other.per_encoder) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.per_encoder.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn fill_zero(&mut self) {
        self.per_encoder.iter_mut().flatten().for_each(|x| *x = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.per_encoder.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.per_encoder.iter().flatten().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}
