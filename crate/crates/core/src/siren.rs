//! Per-subdomain encoders: box normalization, Fourier features, and a sine-activated MLP.
//!
//! Every activation is carried as a triple `[value, d/dq_x, d/dq_y]`, so a single forward
//! sweep yields both the embedding and its exact input Jacobian. Parameter gradients of any
//! functional of `(embedding, Jacobian)` are obtained by a reverse sweep over the stored
//! triples, which is what the Eikonal loss needs (it depends on the input gradient).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decomposition::Subdomain;
use crate::{Config2, Error, Real, Result};

/// Network shape for one subdomain encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    /// Number of Fourier frequencies `p`; the feature vector has length `2p`.
    pub fourier_features: usize,
    /// Total layer count including the linear output layer.
    pub layers: usize,
    pub hidden: usize,
    /// Embedding dimension `k`.
    pub embed_dim: usize,
    pub omega0: f64,
    /// Standard deviation of the Fourier frequency matrix entries.
    pub fourier_scale: f64,
}

impl EncoderArch {
    pub fn new(fourier_features: usize, layers: usize, hidden: usize, embed_dim: usize) -> Self {
        EncoderArch {
            fourier_features,
            layers,
            hidden,
            embed_dim,
            omega0: 30.0,
            fourier_scale: 1.0,
        }
    }

    /// ~1.1k parameters per subdomain (~18k on a 4x4 decomposition).
    pub fn small() -> Self {
        Self::new(8, 3, 16, 32)
    }

    /// ~2.7k parameters per subdomain (~42k on a 4x4 decomposition).
    pub fn medium() -> Self {
        Self::new(8, 3, 32, 32)
    }

    /// ~4.2k parameters per subdomain (~67k on a 4x4 decomposition).
    pub fn large() -> Self {
        Self::new(8, 3, 44, 32)
    }

    pub fn tier(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "medium" => Some(Self::medium()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fourier_features == 0 || self.layers == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument("encoder dimensions must be at least 1".into()));
        }
        if !(self.omega0 > 0.0) || !(self.fourier_scale > 0.0) {
            return Err(Error::InvalidArgument("omega0 and fourier_scale must be positive".into()));
        }
        Ok(())
    }

    /// Layer widths from the Fourier features to the embedding.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![2 * self.fourier_features];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        dims.push(self.embed_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Fixed random frequency matrix `C` (p x 2, row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCode<T> {
    pub p: usize,
    pub matrix: Vec<T>,
    /// When set, entries already include the `2 pi` factor.
    pub two_pi_premultiplied: bool,
}

impl<T: Real> FourierCode<T> {
    pub fn new(p: usize, matrix: Vec<T>) -> Result<Self> {
        if matrix.len() != 2 * p || matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Fourier matrix must be p x 2 and finite".into()));
        }
        Ok(FourierCode {
            p,
            matrix,
            two_pi_premultiplied: false,
        })
    }

    /// Row `r` scaled by `2 pi`.
    #[inline]
    fn angular_row(&self, r: usize) -> [T; 2] {
        let s = if self.two_pi_premultiplied { T::one() } else { T::TAU() };
        [self.matrix[2 * r] * s, self.matrix[2 * r + 1] * s]
    }
}

/// `[cos(2 pi C q), sin(2 pi C q)]`
pub fn fourier<T: Real>(q_hat: &Config2<T>, code: &FourierCode<T>) -> Vec<T> {
    let mut out = vec![T::zero(); 2 * code.p];
    for r in 0..code.p {
        let [c0, c1] = code.angular_row(r);
        let (s, c) = (c0 * q_hat[0] + c1 * q_hat[1]).sin_cos();
        out[r] = c;
        out[code.p + r] = s;
    }
    out
}

/// Maps the subdomain box onto `[-0.5, 0.5]^2`.
pub fn normalize<T: Real>(q: &Config2<T>, s: &Subdomain<T>) -> Result<Config2<T>> {
    normalize_box(q, &s.b_min, &s.b_max)
}

fn normalize_box<T: Real>(q: &Config2<T>, b_min: &Config2<T>, b_max: &Config2<T>) -> Result<Config2<T>> {
    let mut out = Config2::default();
    for a in 0..2 {
        let ext = b_max[a] - b_min[a];
        if !(ext > T::zero()) {
            return Err(Error::InvalidSubdomain);
        }
        out[a] = (q[a] - b_min[a]) / ext - T::lit(0.5);
    }
    Ok(out)
}

/// Sine MLP with a linear output layer; parameters stored flat, layer by layer
/// (row-major weights followed by biases).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirenNet<T> {
    pub dims: Vec<usize>,
    pub omega0: T,
    pub params: Vec<T>,
}

impl<T: Real> SirenNet<T> {
    pub fn zeros(dims: Vec<usize>, omega0: T) -> Self {
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        SirenNet {
            dims,
            omega0,
            params: vec![T::zero(); n],
        }
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Offset of layer `l`'s weight block; its bias follows at `offset + n_in * n_out`.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.dims[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let n: usize = self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if self.dims.len() < 2 || self.dims.contains(&0) || self.params.len() != n {
            return Err(Error::InvalidArgument("network dimensions do not chain".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdomainEncoder<T> {
    pub subdomain: usize,
    pub b_min: Config2<T>,
    pub b_max: Config2<T>,
    pub code: FourierCode<T>,
    pub net: SirenNet<T>,
}

/// Builds an encoder with SIREN initialization; deterministic in `seed`.
pub fn init_encoder<T: Real>(seed: u64, arch: &EncoderArch, s: &Subdomain<T>) -> Result<SubdomainEncoder<T>> {
    arch.validate()?;
    normalize(&s.center, s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, arch.fourier_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = arch.fourier_features;
    let matrix = (0..2 * p).map(|_| T::lit(normal.sample(&mut rng))).collect();
    let code = FourierCode::new(p, matrix)?;

    let dims = arch.dims();
    let mut net = SirenNet::zeros(dims.clone(), T::lit(arch.omega0));
    let last = dims.len() - 2;
    let mut off = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let fan = fan_in as f64;
        let bound = if l == 0 {
            1.0 / fan
        } else {
            (6.0 / fan).sqrt() / arch.omega0
        };
        for v in &mut net.params[off..off + fan_in * fan_out] {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
        off += fan_in * fan_out;
        let bias_bound = 1.0 / fan.sqrt();
        for v in &mut net.params[off..off + fan_out] {
            *v = if l == last {
                T::zero()
            } else {
                T::lit(rng.random_range(-bias_bound..=bias_bound))
            };
        }
        off += fan_out;
    }
    Ok(SubdomainEncoder {
        subdomain: s.id,
        b_min: s.b_min,
        b_max: s.b_max,
        code,
        net,
    })
}

/// Stored activations of one forward sweep, for the reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct EncoderTape<T> {
    /// Input triples of each layer, concatenated.
    inputs: Vec<T>,
    /// `[sin, cos]` of the scaled pre-activation for each sine unit, concatenated.
    trig: Vec<T>,
    /// Pre-activation triples of each sine layer, concatenated.
    pre: Vec<T>,
}

/// Embedding `phi` (k) and Jacobian `jac` (k x 2, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding<T> {
    pub phi: Vec<T>,
    pub jac: Vec<T>,
}

impl<T: Real> SubdomainEncoder<T> {
    pub fn embed_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.params.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.input_dim() != 2 * self.code.p {
            return Err(Error::InvalidArgument("Fourier width does not match network input".into()));
        }
        normalize_box(&self.b_min, &self.b_min, &self.b_max).map(|_| ())
    }

    /// Embedding and its exact input Jacobian at `q`.
    pub fn encode(&self, q: &Config2<T>) -> Result<Encoding<T>> {
        let mut tape = EncoderTape::default();
        let mut out = vec![T::zero(); 3 * self.embed_dim()];
        self.forward(q, &mut tape, &mut out)?;
        Ok(split_triples(&out))
    }

    /// Forward sweep writing output triples into `out` (length `3k`) and recording `tape`.
    pub fn forward(&self, q: &Config2<T>, tape: &mut EncoderTape<T>, out: &mut [T]) -> Result<()> {
        let q_hat = normalize_box(q, &self.b_min, &self.b_max)?;
        let p = self.code.p;
        let inv_ext = [
            T::one() / (self.b_max[0] - self.b_min[0]),
            T::one() / (self.b_max[1] - self.b_min[1]),
        ];
        tape.inputs.clear();
        tape.trig.clear();
        tape.pre.clear();
        tape.inputs.resize(3 * 2 * p, T::zero());
        for r in 0..p {
            let [c0, c1] = self.code.angular_row(r);
            let (s, c) = (c0 * q_hat[0] + c1 * q_hat[1]).sin_cos();
            let dz = [c0 * inv_ext[0], c1 * inv_ext[1]];
            tape.inputs[3 * r] = c;
            tape.inputs[3 * r + 1] = -s * dz[0];
            tape.inputs[3 * r + 2] = -s * dz[1];
            tape.inputs[3 * (p + r)] = s;
            tape.inputs[3 * (p + r) + 1] = c * dz[0];
            tape.inputs[3 * (p + r) + 2] = c * dz[1];
        }

        let net = &self.net;
        let omega = net.omega0;
        let n_layers = net.layer_count();
        let mut in_off = 0;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
            let w = &net.params[off..off + n_in * n_out];
            let b = &net.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let is_last = l + 1 == n_layers;
            let x_start = in_off;
            in_off += 3 * n_in;
            if !is_last {
                tape.inputs.resize(in_off + 3 * n_out, T::zero());
            }
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                let x = &tape.inputs[x_start..x_start + 3 * n_in];
                let (mut a0, mut a1, mut a2) = (b[r], T::zero(), T::zero());
                for (c, &wv) in row.iter().enumerate() {
                    a0 += wv * x[3 * c];
                    a1 += wv * x[3 * c + 1];
                    a2 += wv * x[3 * c + 2];
                }
                if is_last {
                    out[3 * r] = a0;
                    out[3 * r + 1] = a1;
                    out[3 * r + 2] = a2;
                } else {
                    let (s, c) = (omega * a0).sin_cos();
                    tape.pre.extend_from_slice(&[a0, a1, a2]);
                    tape.trig.extend_from_slice(&[s, c]);
                    let y = &mut tape.inputs[in_off + 3 * r..in_off + 3 * r + 3];
                    y[0] = s;
                    y[1] = omega * c * a1;
                    y[2] = omega * c * a2;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("encoder output"));
        }
        Ok(())
    }

    /// Reverse sweep: given adjoints of the output triples, accumulates parameter
    /// gradients into `grad` (same layout as `net.params`).
    pub fn backward(&self, tape: &EncoderTape<T>, out_bar: &[T], grad: &mut [T]) {
        let net = &self.net;
        let omega = net.omega0;
        let n_layers = net.layer_count();
        let mut ybar: Vec<T> = out_bar.to_vec();
        let mut xbar: Vec<T> = Vec::new();
        let mut in_end = tape.inputs.len();
        let mut pre_end = tape.pre.len();
        let mut trig_end = tape.trig.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
            let off = net.layer_offset(l);
            let is_last = l + 1 == n_layers;
            // Convert output adjoints into pre-activation adjoints.
            if !is_last {
                let pre = &tape.pre[pre_end - 3 * n_out..pre_end];
                let trig = &tape.trig[trig_end - 2 * n_out..trig_end];
                pre_end -= 3 * n_out;
                trig_end -= 2 * n_out;
                for r in 0..n_out {
                    let (s, c) = (trig[2 * r], trig[2 * r + 1]);
                    let (y0, y1, y2) = (ybar[3 * r], ybar[3 * r + 1], ybar[3 * r + 2]);
                    let oc = omega * c;
                    ybar[3 * r] = oc * y0 - omega * omega * s * (y1 * pre[3 * r + 1] + y2 * pre[3 * r + 2]);
                    ybar[3 * r + 1] = oc * y1;
                    ybar[3 * r + 2] = oc * y2;
                }
            }
            // The input triples of this layer end where the next layer's inputs begin.
            if !is_last {
                in_end -= 3 * n_out;
            }
            let x = &tape.inputs[in_end - 3 * n_in..in_end];
            let need_xbar = l > 0;
            if need_xbar {
                xbar.clear();
                xbar.resize(3 * n_in, T::zero());
            }
            let (wgrad, bgrad) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let w = &net.params[off..off + n_in * n_out];
            for r in 0..n_out {
                let (a0, a1, a2) = (ybar[3 * r], ybar[3 * r + 1], ybar[3 * r + 2]);
                bgrad[r] += a0;
                let grow = &mut wgrad[r * n_in..(r + 1) * n_in];
                for c in 0..n_in {
                    grow[c] += a0 * x[3 * c] + a1 * x[3 * c + 1] + a2 * x[3 * c + 2];
                }
                if need_xbar {
                    let wrow = &w[r * n_in..(r + 1) * n_in];
                    for c in 0..n_in {
                        let wv = wrow[c];
                        xbar[3 * c] += wv * a0;
                        xbar[3 * c + 1] += wv * a1;
                        xbar[3 * c + 2] += wv * a2;
                    }
                }
            }
            if need_xbar {
                std::mem::swap(&mut ybar, &mut xbar);
            }
        }
    }
}

/// Splits `[v, dx, dy]` triples into value and row-major Jacobian.
pub(crate) fn split_triples<T: Real>(t: &[T]) -> Encoding<T> {
    let k = t.len() / 3;
    let mut phi = Vec::with_capacity(k);
    let mut jac = Vec::with_capacity(2 * k);
    for j in 0..k {
        phi.push(t[3 * j]);
        jac.push(t[3 * j + 1]);
        jac.push(t[3 * j + 2]);
    }
    Encoding { phi, jac }
}
