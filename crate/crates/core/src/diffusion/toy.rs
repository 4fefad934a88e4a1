//! Small two-branch denoiser used to exercise the conditioning, attention
//! and v-prediction machinery end to end.
//!
//! Per branch: `concat(z_t, image)` → conv → SiLU → conv → SiLU →
//! cross-domain attention (residual) → conv → SiLU → conv. Every hidden
//! layer also receives a per-channel bias `W c` from the branch's combined
//! conditioning vector `c`. All weights are shared by the two branches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::attention::{cross_domain_attention, cross_domain_attention_backward, AttentionWeights, Tokens};
use super::conditioning::{branch_conditioning, ConditionCode, DEFAULT_EMBED_DIM};
use super::latent::{forward_diffuse, v_target, LatentTensor};
use super::noise::multires_noise_with;
use super::NoiseSchedule;
use crate::fixtures::{plane_scene, sphere_scene, Sphere};
use crate::geometry::{vec3, Intrinsics};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyConfig {
    /// Latent channels of each geometry branch and of the image latent.
    pub channels: usize,
    /// Hidden feature width, also the attention token dimension.
    pub features: usize,
    pub embed_dim: usize,
    pub noise_levels: usize,
    pub noise_decay: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            channels: 4,
            features: 16,
            embed_dim: DEFAULT_EMBED_DIM,
            noise_levels: 3,
            noise_decay: 0.5,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 3 || self.features == 0 {
            return Err(Error::invalid("toy denoiser needs >= 3 channels and >= 1 feature"));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::invalid("embedding dimension must be even and positive"));
        }
        Ok(())
    }
}

/// Parameter tensors in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Conv1,
    Bias1,
    Cond1,
    Conv2,
    Bias2,
    Cond2,
    Query,
    Key,
    Value,
    Conv3,
    Bias3,
    Cond3,
    Conv4,
    Bias4,
}

impl Tensor {
    pub const ALL: [Tensor; 14] = [
        Tensor::Conv1,
        Tensor::Bias1,
        Tensor::Cond1,
        Tensor::Conv2,
        Tensor::Bias2,
        Tensor::Cond2,
        Tensor::Query,
        Tensor::Key,
        Tensor::Value,
        Tensor::Conv3,
        Tensor::Bias3,
        Tensor::Cond3,
        Tensor::Conv4,
        Tensor::Bias4,
    ];

    pub fn len(self, c: &ToyConfig) -> usize {
        let (ch, f, d) = (c.channels, c.features, c.embed_dim);
        match self {
            Tensor::Conv1 => f * 2 * ch * 9,
            Tensor::Conv2 | Tensor::Conv3 => f * f * 9,
            Tensor::Conv4 => ch * f * 9,
            Tensor::Bias1 | Tensor::Bias2 | Tensor::Bias3 => f,
            Tensor::Bias4 => ch,
            Tensor::Cond1 | Tensor::Cond2 | Tensor::Cond3 => f * d,
            Tensor::Query | Tensor::Key | Tensor::Value => f * f,
        }
    }

    /// Fan-in used for initialization; `None` for zero-initialized biases.
    fn fan_in(self, c: &ToyConfig) -> Option<usize> {
        match self {
            Tensor::Conv1 => Some(2 * c.channels * 9),
            Tensor::Conv2 | Tensor::Conv3 | Tensor::Conv4 => Some(c.features * 9),
            Tensor::Cond1 | Tensor::Cond2 | Tensor::Cond3 => Some(c.embed_dim),
            Tensor::Query | Tensor::Key | Tensor::Value => Some(c.features),
            Tensor::Bias1 | Tensor::Bias2 | Tensor::Bias3 | Tensor::Bias4 => None,
        }
    }
}

/// All parameters in one flat buffer, laid out in [`Tensor::ALL`] order.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams<T> {
    config: ToyConfig,
    data: Vec<T>,
}

impl<T: Real> ToyParams<T> {
    pub fn zeros(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let n = Tensor::ALL.iter().map(|t| t.len(&config)).sum();
        Ok(ToyParams {
            config,
            data: vec![T::zero(); n],
        })
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn init(config: ToyConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in Tensor::ALL {
            if let Some(fan) = t.fan_in(&config) {
                let std = (fan as f64).sqrt().recip();
                for v in p.tensor_mut(t) {
                    *v = T::lit(std * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        Ok(p)
    }

    pub fn from_flat(config: ToyConfig, data: Vec<T>) -> Result<Self> {
        let z = Self::zeros(config)?;
        if data.len() != z.data.len() {
            return Err(Error::shape(z.data.len(), data.len()));
        }
        Ok(ToyParams { config, data })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let mut off = 0;
        for u in Tensor::ALL {
            let n = u.len(&self.config);
            if u == t {
                return off..off + n;
            }
            off += n;
        }
        unreachable!("every tensor is listed")
    }

    pub fn tensor(&self, t: Tensor) -> &[T] {
        &self.data[self.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [T] {
        let r = self.range(t);
        &mut self.data[r]
    }

    pub fn cast<U: Real>(&self) -> ToyParams<U> {
        ToyParams {
            config: self.config,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    fn attention(&self) -> AttentionWeights<T> {
        AttentionWeights {
            dim: self.config.features,
            query: self.tensor(Tensor::Query).to_vec(),
            key: self.tensor(Tensor::Key).to_vec(),
            value: self.tensor(Tensor::Value).to_vec(),
        }
    }
}

// 3×3 convolution, zero padding, stride 1. Weights are `[out][in][ky][kx]`.
fn conv3x3<T: Real>(x: &[T], cin: usize, h: usize, w: usize, weight: &[T], cout: usize) -> Vec<T> {
    let plane = h * w;
    let mut y = vec![T::zero(); cout * plane];
    for o in 0..cout {
        let out = &mut y[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &x[i * plane..(i + 1) * plane];
            let k = &weight[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    for r in 0..h {
                        let sr = r + ky;
                        if sr < 1 || sr > h {
                            continue;
                        }
                        let srow = &src[(sr - 1) * w..sr * w];
                        let orow = &mut out[r * w..(r + 1) * w];
                        for c in 0..w {
                            let sc = c + kx;
                            if sc >= 1 && sc <= w {
                                orow[c] += wv * srow[sc - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Accumulates weight gradients and, if requested, input gradients of
/// [`conv3x3`] for upstream gradient `dy`.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    dy: &[T],
    dweight: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let plane = h * w;
    for o in 0..cout {
        let g = &dy[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &x[i * plane..(i + 1) * plane];
            let base = (o * cin + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[base + ky * 3 + kx];
                    let mut acc = T::zero();
                    for r in 0..h {
                        let sr = r + ky;
                        if sr < 1 || sr > h {
                            continue;
                        }
                        for c in 0..w {
                            let sc = c + kx;
                            if sc >= 1 && sc <= w {
                                let si = (sr - 1) * w + sc - 1;
                                acc += g[r * w + c] * src[si];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[i * plane + si] += g[r * w + c] * wv;
                                }
                            }
                        }
                    }
                    dweight[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// `W c` for a `rows × dim` matrix.
fn matvec<T: Real>(m: &[T], c: &[T], rows: usize) -> Vec<T> {
    let d = c.len();
    (0..rows)
        .map(|r| m[r * d..(r + 1) * d].iter().zip(c).map(|(a, b)| *a * *b).sum())
        .collect()
}

fn add_channel_bias<T: Real>(y: &mut [T], plane: usize, bias: &[T], extra: &[T]) {
    for (ch, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[ch] + extra[ch];
        for v in chunk {
            *v += b;
        }
    }
}

// Channel-major `F × N` ↔ token-major `N × F`.
fn to_tokens<T: Real>(x: &[T], f: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); f * n];
    for c in 0..f {
        for i in 0..n {
            t[i * f + c] = x[c * n + i];
        }
    }
    t
}

fn from_tokens<T: Real>(t: &[T], f: usize, n: usize) -> Vec<T> {
    let mut x = vec![T::zero(); f * n];
    for c in 0..f {
        for i in 0..n {
            x[c * n + i] = t[i * f + c];
        }
    }
    x
}

/// Intermediates of one branch.
struct BranchCache<T> {
    input: Vec<T>,
    cond: Vec<T>,
    pre1: Vec<T>,
    h1: Vec<T>,
    pre2: Vec<T>,
    h2: Vec<T>,
    h3: Vec<T>,
    pre3: Vec<T>,
    h4: Vec<T>,
    out: Vec<T>,
}

struct Forward<T> {
    h: usize,
    w: usize,
    branches: [BranchCache<T>; 2],
}

fn check_latent<T: Real>(z: &LatentTensor<T>, c: usize, h: usize, w: usize) -> Result<()> {
    if z.shape() != (c, h, w) {
        return Err(Error::shape(format!("({c}, {h}, {w})"), format!("{:?}", z.shape())));
    }
    Ok(())
}

fn forward<T: Real>(
    p: &ToyParams<T>,
    zt: [&LatentTensor<T>; 2],
    image: &LatentTensor<T>,
    cond: [&[T]; 2],
) -> Result<Forward<T>> {
    let cfg = p.config;
    let (ch, f) = (cfg.channels, cfg.features);
    let (ic, h, w) = image.shape();
    if ic != ch || h == 0 || w == 0 {
        return Err(Error::shape(format!("({ch}, h, w)"), format!("{:?}", image.shape())));
    }
    for z in zt {
        check_latent(z, ch, h, w)?;
    }
    for c in cond {
        if c.len() != cfg.embed_dim {
            return Err(Error::shape(cfg.embed_dim, c.len()));
        }
    }
    let plane = h * w;
    let act = |v: &[T]| v.iter().map(|x| silu(*x)).collect::<Vec<T>>();
    let mut stage = Vec::with_capacity(2);
    for b in 0..2 {
        let mut input = zt[b].as_slice().to_vec();
        input.extend_from_slice(image.as_slice());
        let mut pre1 = conv3x3(&input, 2 * ch, h, w, p.tensor(Tensor::Conv1), f);
        add_channel_bias(&mut pre1, plane, p.tensor(Tensor::Bias1), &matvec(p.tensor(Tensor::Cond1), cond[b], f));
        let h1 = act(&pre1);
        let mut pre2 = conv3x3(&h1, f, h, w, p.tensor(Tensor::Conv2), f);
        add_channel_bias(&mut pre2, plane, p.tensor(Tensor::Bias2), &matvec(p.tensor(Tensor::Cond2), cond[b], f));
        let h2 = act(&pre2);
        stage.push((input, pre1, h1, pre2, h2));
    }
    let att = cross_domain_attention(
        &Tokens::new(plane, f, to_tokens(&stage[0].4, f, plane))?,
        &Tokens::new(plane, f, to_tokens(&stage[1].4, f, plane))?,
        &p.attention(),
    )?;
    let feats = [from_tokens(&att.feat_d.data, f, plane), from_tokens(&att.feat_n.data, f, plane)];
    let mut caches = Vec::with_capacity(2);
    for (b, (input, pre1, h1, pre2, h2)) in stage.into_iter().enumerate() {
        let h3: Vec<T> = h2.iter().zip(&feats[b]).map(|(a, c)| *a + *c).collect();
        let mut pre3 = conv3x3(&h3, f, h, w, p.tensor(Tensor::Conv3), f);
        add_channel_bias(&mut pre3, plane, p.tensor(Tensor::Bias3), &matvec(p.tensor(Tensor::Cond3), cond[b], f));
        let h4 = act(&pre3);
        let mut out = conv3x3(&h4, f, h, w, p.tensor(Tensor::Conv4), ch);
        add_channel_bias(&mut out, plane, p.tensor(Tensor::Bias4), &vec![T::zero(); ch]);
        caches.push(BranchCache {
            input,
            cond: cond[b].to_vec(),
            pre1,
            h1,
            pre2,
            h2,
            h3,
            pre3,
            h4,
            out,
        });
    }
    let [d, n]: [BranchCache<T>; 2] = caches.try_into().map_err(|_| Error::invalid("branch count"))?;
    Ok(Forward { h, w, branches: [d, n] })
}

/// Adds the gradient of a conditioned bias `bias + W c` given the
/// pre-activation gradient `dpre`.
fn cond_bias_backward<T: Real>(dpre: &[T], plane: usize, cond: &[T], dbias: &mut [T], dcond: &mut [T]) {
    let d = cond.len();
    for (ch, chunk) in dpre.chunks(plane).enumerate() {
        let g: T = chunk.iter().copied().sum();
        dbias[ch] += g;
        for (k, c) in cond.iter().enumerate() {
            dcond[ch * d + k] += g * *c;
        }
    }
}

fn backward<T: Real>(p: &ToyParams<T>, fw: &Forward<T>, dout: [&[T]; 2], grads: &mut ToyParams<T>) -> Result<()> {
    let cfg = p.config;
    let (ch, f) = (cfg.channels, cfg.features);
    let (h, w) = (fw.h, fw.w);
    let plane = h * w;
    let mut dh3 = Vec::with_capacity(2);
    for b in 0..2 {
        let c = &fw.branches[b];
        let mut dh4 = vec![T::zero(); f * plane];
        for (ci, chunk) in dout[b].chunks(plane).enumerate() {
            grads.tensor_mut(Tensor::Bias4)[ci] += chunk.iter().copied().sum::<T>();
        }
        conv3x3_backward(&c.h4, f, h, w, p.tensor(Tensor::Conv4), ch, dout[b], grads.tensor_mut(Tensor::Conv4), Some(&mut dh4));
        let dpre3: Vec<T> = dh4.iter().zip(&c.pre3).map(|(g, x)| *g * silu_grad(*x)).collect();
        let mut dbias = vec![T::zero(); f];
        let mut dcond = vec![T::zero(); f * cfg.embed_dim];
        cond_bias_backward(&dpre3, plane, &c.cond, &mut dbias, &mut dcond);
        add_into(grads.tensor_mut(Tensor::Bias3), &dbias);
        add_into(grads.tensor_mut(Tensor::Cond3), &dcond);
        let mut d = vec![T::zero(); f * plane];
        conv3x3_backward(&c.h3, f, h, w, p.tensor(Tensor::Conv3), f, &dpre3, grads.tensor_mut(Tensor::Conv3), Some(&mut d));
        dh3.push(d);
    }
    let zd = Tokens::new(plane, f, to_tokens(&fw.branches[0].h2, f, plane))?;
    let zn = Tokens::new(plane, f, to_tokens(&fw.branches[1].h2, f, plane))?;
    let ag = cross_domain_attention_backward(
        &zd,
        &zn,
        &p.attention(),
        &to_tokens(&dh3[0], f, plane),
        &to_tokens(&dh3[1], f, plane),
    )?;
    add_into(grads.tensor_mut(Tensor::Query), &ag.weights.query);
    add_into(grads.tensor_mut(Tensor::Key), &ag.weights.key);
    add_into(grads.tensor_mut(Tensor::Value), &ag.weights.value);
    let datt = [from_tokens(&ag.d_zd, f, plane), from_tokens(&ag.d_zn, f, plane)];
    for b in 0..2 {
        let c = &fw.branches[b];
        let dh2: Vec<T> = dh3[b].iter().zip(&datt[b]).map(|(x, y)| *x + *y).collect();
        let dpre2: Vec<T> = dh2.iter().zip(&c.pre2).map(|(g, x)| *g * silu_grad(*x)).collect();
        let mut dbias = vec![T::zero(); f];
        let mut dcond = vec![T::zero(); f * cfg.embed_dim];
        cond_bias_backward(&dpre2, plane, &c.cond, &mut dbias, &mut dcond);
        add_into(grads.tensor_mut(Tensor::Bias2), &dbias);
        add_into(grads.tensor_mut(Tensor::Cond2), &dcond);
        let mut dh1 = vec![T::zero(); f * plane];
        conv3x3_backward(&c.h1, f, h, w, p.tensor(Tensor::Conv2), f, &dpre2, grads.tensor_mut(Tensor::Conv2), Some(&mut dh1));
        let dpre1: Vec<T> = dh1.iter().zip(&c.pre1).map(|(g, x)| *g * silu_grad(*x)).collect();
        dbias.iter_mut().for_each(|v| *v = T::zero());
        dcond.iter_mut().for_each(|v| *v = T::zero());
        cond_bias_backward(&dpre1, plane, &c.cond, &mut dbias, &mut dcond);
        add_into(grads.tensor_mut(Tensor::Bias1), &dbias);
        add_into(grads.tensor_mut(Tensor::Cond1), &dcond);
        conv3x3_backward(&c.input, 2 * ch, h, w, p.tensor(Tensor::Conv1), f, &dpre1, grads.tensor_mut(Tensor::Conv1), None);
    }
    Ok(())
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}

/// Denoiser output `(v̂_d, v̂_n)` for noisy latents at step `t`.
pub fn predict<T: Real>(
    p: &ToyParams<T>,
    zt_d: &LatentTensor<T>,
    zt_n: &LatentTensor<T>,
    image: &LatentTensor<T>,
    t: usize,
    scene: ConditionCode,
) -> Result<(LatentTensor<T>, LatentTensor<T>)> {
    predict_with_switchers(p, [zt_d, zt_n], image, t, [ConditionCode::Depth, ConditionCode::Normal], scene)
}

/// As [`predict`] with explicit switcher codes for the two branches.
pub fn predict_with_switchers<T: Real>(
    p: &ToyParams<T>,
    zt: [&LatentTensor<T>; 2],
    image: &LatentTensor<T>,
    t: usize,
    switchers: [ConditionCode; 2],
    scene: ConditionCode,
) -> Result<(LatentTensor<T>, LatentTensor<T>)> {
    let cd = branch_conditioning::<T>(t, switchers[0], scene, p.config.embed_dim)?;
    let cn = branch_conditioning::<T>(t, switchers[1], scene, p.config.embed_dim)?;
    let fw = forward(p, zt, image, [&cd.vector, &cn.vector])?;
    let (c, h, w) = image.shape();
    let [d, n] = fw.branches;
    Ok((LatentTensor::new(c, h, w, d.out)?, LatentTensor::new(c, h, w, n.out)?))
}

/// Two-branch v-prediction loss: mean squared error of each branch against
/// its velocity target, summed over the branches.
pub fn v_loss<T: Real>(
    pred_d: &LatentTensor<T>,
    pred_n: &LatentTensor<T>,
    target_d: &LatentTensor<T>,
    target_n: &LatentTensor<T>,
) -> Result<T> {
    let mse = |a: &LatentTensor<T>, b: &LatentTensor<T>| -> Result<T> {
        let diff = a.axpby(T::one(), b, -T::one())?;
        Ok(diff.as_slice().iter().map(|v| *v * *v).sum::<T>() / T::from_usize_lossy(a.len().max(1)))
    };
    Ok(mse(pred_d, target_d)? + mse(pred_n, target_n)?)
}

/// One training example: clean depth and normal latents, the image latent
/// both branches are conditioned on, and the scene code.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample<T> {
    pub depth: LatentTensor<T>,
    pub normal: LatentTensor<T>,
    pub image: LatentTensor<T>,
    pub scene: ConditionCode,
}

/// Timestep and the two independent noises drawn for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<T> {
    pub t: usize,
    pub eps_d: LatentTensor<T>,
    pub eps_n: LatentTensor<T>,
}

/// Shared uniform timestep and independent multi-resolution noises.
pub fn draw_noise<T: Real>(
    batch: &[ToySample<T>],
    sched: &NoiseSchedule<T>,
    config: &ToyConfig,
    rng: &mut impl Rng,
) -> Result<Vec<NoiseDraw<T>>> {
    batch
        .iter()
        .map(|s| {
            let (c, h, w) = s.depth.shape();
            let levels = config.noise_levels.min(usize::BITS as usize - h.min(w).leading_zeros() as usize).max(1);
            Ok(NoiseDraw {
                t: rng.random_range(1..=sched.steps()),
                eps_d: multires_noise_with((c, h, w), levels, config.noise_decay, rng)?,
                eps_n: multires_noise_with((c, h, w), levels, config.noise_decay, rng)?,
            })
        })
        .collect()
}

fn sample_loss<T: Real>(
    p: &ToyParams<T>,
    s: &ToySample<T>,
    d: &NoiseDraw<T>,
    sched: &NoiseSchedule<T>,
) -> Result<(Forward<T>, [LatentTensor<T>; 2], T)> {
    let zt_d = forward_diffuse(&s.depth, d.t, &d.eps_d, sched)?;
    let zt_n = forward_diffuse(&s.normal, d.t, &d.eps_n, sched)?;
    let vd = v_target(&s.depth, &d.eps_d, d.t, sched)?;
    let vn = v_target(&s.normal, &d.eps_n, d.t, sched)?;
    let dim = p.config.embed_dim;
    let cd = branch_conditioning::<T>(d.t, ConditionCode::Depth, s.scene, dim)?;
    let cn = branch_conditioning::<T>(d.t, ConditionCode::Normal, s.scene, dim)?;
    let fw = forward(p, [&zt_d, &zt_n], &s.image, [&cd.vector, &cn.vector])?;
    let (c, h, w) = s.image.shape();
    let pd = LatentTensor::new(c, h, w, fw.branches[0].out.clone())?;
    let pn = LatentTensor::new(c, h, w, fw.branches[1].out.clone())?;
    let loss = v_loss(&pd, &pn, &vd, &vn)?;
    Ok((fw, [vd, vn], loss))
}

/// Batch-mean loss for fixed draws.
pub fn toy_loss<T: Real>(
    p: &ToyParams<T>,
    batch: &[ToySample<T>],
    draws: &[NoiseDraw<T>],
    sched: &NoiseSchedule<T>,
) -> Result<T> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::shape(batch.len().max(1), draws.len()));
    }
    let mut total = T::zero();
    for (s, d) in batch.iter().zip(draws) {
        total += sample_loss(p, s, d, sched)?.2;
    }
    let loss = total / T::from_usize_lossy(batch.len());
    if !loss.is_finite() {
        return Err(Error::NonFinite("toy denoiser loss".into()));
    }
    Ok(loss)
}

/// Batch-mean loss and its gradient for fixed draws.
pub fn toy_loss_and_grad<T: Real>(
    p: &ToyParams<T>,
    batch: &[ToySample<T>],
    draws: &[NoiseDraw<T>],
    sched: &NoiseSchedule<T>,
) -> Result<(T, ToyParams<T>)> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::shape(batch.len().max(1), draws.len()));
    }
    let mut grads = ToyParams::zeros(p.config)?;
    let nb = T::from_usize_lossy(batch.len());
    let mut total = T::zero();
    for (s, d) in batch.iter().zip(draws) {
        let (fw, targets, loss) = sample_loss(p, s, d, sched)?;
        total += loss;
        let scale = T::lit(2.0) / (T::from_usize_lossy(s.image.len()) * nb);
        let dout: Vec<Vec<T>> = (0..2)
            .map(|b| {
                fw.branches[b]
                    .out
                    .iter()
                    .zip(targets[b].as_slice())
                    .map(|(o, t)| (*o - *t) * scale)
                    .collect()
            })
            .collect();
        backward(p, &fw, [&dout[0], &dout[1]], &mut grads)?;
    }
    let loss = total / nb;
    if !loss.is_finite() {
        return Err(Error::NonFinite("toy denoiser loss".into()));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct ToyStep<T> {
    pub loss: T,
    pub grads: ToyParams<T>,
    pub draws: Vec<NoiseDraw<T>>,
}

/// Draws a shared timestep and independent noises per sample, then
/// evaluates the loss and its gradient.
pub fn toy_denoiser_step<T: Real>(
    batch: &[ToySample<T>],
    p: &ToyParams<T>,
    sched: &NoiseSchedule<T>,
    rng: &mut impl Rng,
) -> Result<ToyStep<T>> {
    let draws = draw_noise(batch, sched, &p.config, rng)?;
    let (loss, grads) = toy_loss_and_grad(p, batch, &draws, sched)?;
    Ok(ToyStep { loss, grads, draws })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn update(&mut self, cfg: &Adam, params: &mut [T], grads: &[T]) {
        self.step += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: Adam,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 4,
            adam: Adam::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainReport {
    /// Loss on the fixed evaluation draws before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mini-batch losses, one per step.
    pub history: Vec<f64>,
}

impl TrainReport {
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }
}

/// Adam on random mini-batches of `data`. The evaluation loss uses one
/// fixed draw per sample of `data`, seeded from `cfg.seed`.
pub fn train_toy<T: Real>(
    params: &mut ToyParams<T>,
    data: &[ToySample<T>],
    sched: &NoiseSchedule<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() || cfg.batch == 0 {
        return Err(Error::invalid("training needs data and a positive batch size"));
    }
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
    let eval_draws = draw_noise(data, sched, &params.config, &mut eval_rng)?;
    let initial_loss = toy_loss(params, data, &eval_draws, sched)?.as_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch: Vec<ToySample<T>> = (0..cfg.batch)
            .map(|_| data[rng.random_range(0..data.len())].clone())
            .collect();
        let step = toy_denoiser_step(&batch, params, sched, &mut rng)?;
        history.push(step.loss.as_f64());
        state.update(&cfg.adam, &mut params.data, &step.grads.data);
    }
    let final_loss = toy_loss(params, data, &eval_draws, sched)?.as_f64();
    Ok(TrainReport {
        initial_loss,
        final_loss,
        history,
    })
}

/// Procedural scenes rendered at `size × size`: spheres (object scenes),
/// tilted walls (indoor) and ground planes (outdoor). Depth is min-max
/// normalized to `[-1, 1]` and replicated over the channels; normals fill
/// the first three channels; the image latent holds two Lambertian shadings
/// and the coverage mask.
pub fn procedural_samples<T: Real>(count: usize, size: usize, channels: usize, seed: u64) -> Result<Vec<ToySample<T>>> {
    if channels < 3 || size < 2 {
        return Err(Error::invalid("procedural samples need >= 3 channels and size >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics::centered(T::lit(1.2 * size as f64), size, size)?;
    let lights: [[f64; 3]; 2] = [[0.3, 0.5, 1.0], [-0.6, 0.2, 0.8]];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let kind = out.len() % 3;
        let mut u = |lo: f64, hi: f64| T::lit(rng.random_range(lo..hi));
        let (scene, code) = match kind {
            0 => (
                sphere_scene(
                    k,
                    Sphere {
                        center: [u(-0.4, 0.4), u(-0.4, 0.4), u(2.5, 4.0)],
                        radius: u(0.6, 1.3),
                    },
                    T::lit(80.0),
                )?,
                ConditionCode::Object,
            ),
            1 => (plane_scene(k, [u(-0.6, 0.6), u(-0.6, 0.6), T::one()], u(1.0, 4.0))?, ConditionCode::Indoor),
            _ => (plane_scene(k, [u(-0.2, 0.2), u(0.6, 1.2), u(0.6, 1.2)], u(0.5, 2.0))?, ConditionCode::Outdoor),
        };
        let valid: Vec<T> = scene.depth.valid_values().collect();
        let lo = valid.iter().copied().fold(T::infinity(), T::min);
        let hi = valid.iter().copied().fold(T::neg_infinity(), T::max);
        if valid.len() < 2 || !(hi > lo) {
            continue;
        }
        let two = T::lit(2.0);
        let depth = LatentTensor::from_fn(channels, size, size, |_, y, x| {
            scene.depth.get(x, y).map_or(T::one(), |d| two * (d - lo) / (hi - lo) - T::one())
        })?;
        let normal_at = |x: usize, y: usize| scene.normals.get(x, y).unwrap_or([T::zero(), T::zero(), T::one()]);
        let normal = LatentTensor::from_fn(channels, size, size, |c, y, x| if c < 3 { normal_at(x, y)[c] } else { T::zero() })?;
        let shade = |x: usize, y: usize, l: &[f64; 3]| -> T {
            let l = vec3::normalize(&l.map(T::lit)).expect("light direction");
            match scene.normals.get(x, y) {
                Some(n) => two * vec3::dot(&n, &l).max(T::zero()) - T::one(),
                None => -T::one(),
            }
        };
        let image = LatentTensor::from_fn(channels, size, size, |c, y, x| match c {
            0 => shade(x, y, &lights[0]),
            1 => shade(x, y, &lights[1]),
            2 => {
                if scene.depth.get(x, y).is_some() {
                    T::one()
                } else {
                    -T::one()
                }
            }
            _ => T::zero(),
        })?;
        out.push(ToySample {
            depth,
            normal,
            image,
            scene: code,
        });
    }
    Ok(out)
}

/// Central finite-difference check of one parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares analytic gradients against central differences of the loss
/// at `indices`, with draws fixed.
pub fn finite_difference_check(
    p: &ToyParams<f64>,
    batch: &[ToySample<f64>],
    draws: &[NoiseDraw<f64>],
    sched: &NoiseSchedule<f64>,
    indices: &[usize],
    step: f64,
) -> Result<Vec<GradCheck>> {
    let (_, grads) = toy_loss_and_grad(p, batch, draws, sched)?;
    let mut probe = p.clone();
    indices
        .iter()
        .map(|&i| {
            if i >= p.len() {
                return Err(Error::invalid(format!("parameter index {i} out of range")));
            }
            let orig = probe.data[i];
            probe.data[i] = orig + step;
            let plus = toy_loss(&probe, batch, draws, sched)?;
            probe.data[i] = orig - step;
            let minus = toy_loss(&probe, batch, draws, sched)?;
            probe.data[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.data[i];
            let scale = analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            Ok(GradCheck {
                index: i,
                analytic,
                numeric,
                relative_error: (analytic - numeric).abs() / scale,
            })
        })
        .collect()
}

const MAGIC: &[u8; 8] = b"DNTOYPRM";
pub const FORMAT_VERSION: u32 = 1;

/// Flat little-endian encoding: magic, version, embedding dimension,
/// channels, features, noise levels, tensor count, one length per tensor,
/// then every value as `f32`.
pub fn params_to_bytes<T: Real>(p: &ToyParams<T>) -> Vec<u8> {
    let c = &p.config;
    let mut out = Vec::with_capacity(64 + 4 * p.len());
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        c.embed_dim as u32,
        c.channels as u32,
        c.features as u32,
        c.noise_levels as u32,
        Tensor::ALL.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.noise_decay.to_le_bytes());
    for t in Tensor::ALL {
        out.extend_from_slice(&(t.len(c) as u32).to_le_bytes());
    }
    for v in &p.data {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn params_from_bytes<T: Real>(bytes: &[u8]) -> Result<ToyParams<T>> {
    let err = |offset: usize, message: String| Error::Format {
        format: "toy-params",
        offset,
        message,
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<(usize, &[u8])> {
        let at = pos;
        let chunk = bytes
            .get(pos..pos + n)
            .ok_or_else(|| err(at, format!("need {n} bytes, {} left", bytes.len().saturating_sub(at))))?;
        pos += n;
        Ok((at, chunk))
    };
    let (_, magic) = take(8)?;
    if magic != MAGIC {
        return Err(err(0, "bad magic".into()));
    }
    let mut word = |what: &str| -> Result<(usize, u32)> {
        let (at, b) = take(4)?;
        let v = u32::from_le_bytes(b.try_into().expect("4 bytes"));
        if what == "version" && v != FORMAT_VERSION {
            return Err(err(at, format!("unsupported version {v}")));
        }
        Ok((at, v))
    };
    word("version")?;
    let (_, embed_dim) = word("embed_dim")?;
    let (_, channels) = word("channels")?;
    let (_, features) = word("features")?;
    let (_, noise_levels) = word("noise_levels")?;
    let (at, count) = word("count")?;
    if count as usize != Tensor::ALL.len() {
        return Err(err(at, format!("expected {} tensors, found {count}", Tensor::ALL.len())));
    }
    let (at, b) = take(8)?;
    let noise_decay = f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let config = ToyConfig {
        channels: channels as usize,
        features: features as usize,
        embed_dim: embed_dim as usize,
        noise_levels: noise_levels as usize,
        noise_decay,
    };
    config.validate().map_err(|e| err(at, e.to_string()))?;
    if !(noise_decay > 0.0 && noise_decay <= 1.0) {
        return Err(err(at, format!("noise decay {noise_decay} outside (0, 1]")));
    }
    let mut total = 0usize;
    let mut last = at;
    for t in Tensor::ALL {
        let (at, b) = take(4)?;
        last = at;
        let len = u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        if len != t.len(&config) {
            return Err(err(at, format!("tensor {t:?} has length {len}, expected {}", t.len(&config))));
        }
        total += len;
    }
    let size = total.checked_mul(4).ok_or_else(|| err(last, "payload size overflows".into()))?;
    let (at, payload) = take(size)?;
    if at + payload.len() != bytes.len() {
        return Err(err(at + payload.len(), "trailing bytes after payload".into()));
    }
    let mut data = Vec::with_capacity(total);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(err(at + 4 * i, "non-finite parameter".into()));
        }
        data.push(T::lit(v as f64));
    }
    ToyParams::from_flat(config, data)
}
