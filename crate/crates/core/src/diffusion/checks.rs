//! Self-checks for the diffusion components, runnable from the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{cross_domain_attention, AttentionWeights, Tokens};
use super::conditioning::ConditionCode;
use super::latent::{forward_diffuse, recover_from_v, v_target};
use super::noise::{gaussian, multires_noise, DEFAULT_DECAY, DEFAULT_LEVELS};
use super::schedule::{make_schedule, ScheduleKind, DEFAULT_STEPS};
use super::toy::{draw_noise, finite_difference_check, predict_with_switchers, procedural_samples, ToyConfig, ToyParams};
use crate::Result;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// Largest `|alpha² + sigma² − 1|` over both schedule kinds.
pub fn vp_identity_error() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::ScaledLinear, ScheduleKind::Cosine] {
        let s = make_schedule::<f64>(DEFAULT_STEPS, kind)?;
        for (a, g) in s.alphas().iter().zip(s.sigmas()) {
            worst = worst.max((a * a + g * g - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Largest round-trip error of `(z0, eps) → (z_t, v) → (z0, eps)` over
/// `trials` random tensors and timesteps.
pub fn v_roundtrip_error(trials: usize, seed: u64) -> Result<f64> {
    let sched = make_schedule::<f64>(DEFAULT_STEPS, ScheduleKind::ScaledLinear)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z0 = gaussian::<f64>((4, 4, 4), &mut rng);
        let eps = gaussian::<f64>((4, 4, 4), &mut rng);
        let t = rng.random_range(1..=DEFAULT_STEPS);
        let zt = forward_diffuse(&z0, t, &eps, &sched)?;
        let v = v_target(&z0, &eps, t, &sched)?;
        let (z0r, epsr) = recover_from_v(&zt, &v, t, &sched)?;
        worst = worst.max(z0r.max_abs_diff(&z0)?).max(epsr.max_abs_diff(&eps)?);
    }
    Ok(worst)
}

pub struct AttentionReport {
    pub row_sum_error: f64,
    pub symmetric: bool,
    pub hand_case_error: f64,
}

pub fn attention_report(seed: u64) -> Result<AttentionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (16, 8);
    let mat = |rng: &mut ChaCha8Rng| (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let w = AttentionWeights::new(d, mat(&mut rng), mat(&mut rng), mat(&mut rng))?;
    let tok = |rng: &mut ChaCha8Rng| Tokens::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect());
    let (zd, zn) = (tok(&mut rng)?, tok(&mut rng)?);
    let out = cross_domain_attention(&zd, &zn, &w)?;
    let mut row_sum_error: f64 = 0.0;
    for p in [&out.attn_d, &out.attn_n] {
        for row in p.chunks(2 * n) {
            row_sum_error = row_sum_error.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let same = cross_domain_attention(&zd, &zd, &w)?;
    let symmetric = same.feat_d == same.feat_n;

    // One token per domain, identity projections: logits are z·z/√2.
    let eye = vec![1.0, 0.0, 0.0, 1.0];
    let w = AttentionWeights::new(2, eye.clone(), eye.clone(), eye)?;
    let a = [0.3, -0.7];
    let b = [1.1, 0.4];
    let out = cross_domain_attention(&Tokens::new(1, 2, a.to_vec())?, &Tokens::new(1, 2, b.to_vec())?, &w)?;
    let s = 2f64.sqrt();
    let (aa, ab, bb) = (
        (a[0] * a[0] + a[1] * a[1]) / s,
        (a[0] * b[0] + a[1] * b[1]) / s,
        (b[0] * b[0] + b[1] * b[1]) / s,
    );
    let pd = aa.exp() / (aa.exp() + ab.exp());
    let pn = bb.exp() / (bb.exp() + ab.exp());
    let mut hand_case_error: f64 = 0.0;
    for c in 0..2 {
        hand_case_error = hand_case_error
            .max((out.feat_d.data[c] - (pd * a[c] + (1.0 - pd) * b[c])).abs())
            .max((out.feat_n.data[c] - (pn * b[c] + (1.0 - pn) * a[c])).abs());
    }
    Ok(AttentionReport {
        row_sum_error,
        symmetric,
        hand_case_error,
    })
}

/// Worst relative gradient error over `coords` random coordinates for each
/// seed.
pub fn gradient_error(seeds: &[u64], coords: usize) -> Result<f64> {
    let sched = make_schedule::<f64>(DEFAULT_STEPS, ScheduleKind::ScaledLinear)?;
    let mut worst: f64 = 0.0;
    for &seed in seeds {
        let p = ToyParams::<f64>::init(ToyConfig::default(), seed)?;
        let data = procedural_samples::<f64>(2, 8, p.config().channels, seed.wrapping_add(100))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(200));
        let draws = draw_noise(&data, &sched, p.config(), &mut rng)?;
        let idx: Vec<usize> = (0..coords).map(|_| rng.random_range(0..p.len())).collect();
        for c in finite_difference_check(&p, &data, &draws, &sched, &idx, 1e-5)? {
            worst = worst.max(c.relative_error);
        }
    }
    Ok(worst)
}

/// Smallest L∞ output change over the switcher swap and the scene swaps.
pub fn conditioning_sensitivity(seed: u64) -> Result<f64> {
    let p = ToyParams::<f64>::init(ToyConfig::default(), seed)?;
    let s = &procedural_samples::<f64>(1, 8, p.config().channels, seed)?[0];
    let t = 400;
    let run = |sw: [ConditionCode; 2], scene| predict_with_switchers(&p, [&s.depth, &s.normal], &s.image, t, sw, scene);
    let base = run([ConditionCode::Depth, ConditionCode::Normal], ConditionCode::Indoor)?;
    let swapped = run([ConditionCode::Normal, ConditionCode::Normal], ConditionCode::Indoor)?;
    let mut least = base.0.max_abs_diff(&swapped.0)?;
    let scenes = ConditionCode::SCENES;
    for pair in scenes.windows(2) {
        let a = run([ConditionCode::Depth, ConditionCode::Normal], pair[0])?;
        let b = run([ConditionCode::Depth, ConditionCode::Normal], pair[1])?;
        least = least.min(a.0.max_abs_diff(&b.0)?).min(a.1.max_abs_diff(&b.1)?);
    }
    Ok(least)
}

/// Pooled mean and variance of `draws` multi-resolution fields of shape
/// `(4, 64, 64)`, plus whether a repeated seed reproduces bit for bit.
pub fn noise_statistics(draws: usize, seed: u64) -> Result<(f64, f64, bool)> {
    let shape = (4, 64, 64);
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
    for i in 0..draws {
        let f = multires_noise::<f64>(shape, DEFAULT_LEVELS, DEFAULT_DECAY, seed.wrapping_add(i as u64))?;
        for v in f.as_slice() {
            sum += v;
            sq += v * v;
        }
        n += f.len();
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    let a = multires_noise::<f64>(shape, DEFAULT_LEVELS, DEFAULT_DECAY, seed)?;
    let b = multires_noise::<f64>(shape, DEFAULT_LEVELS, DEFAULT_DECAY, seed)?;
    let same = a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((mean, var, same))
}

/// Runs every check; errors are reported as failures.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut push = |name, r: Result<(bool, String)>| {
        out.push(match r {
            Ok((ok, detail)) => outcome(name, ok, detail),
            Err(e) => outcome(name, false, e.to_string()),
        })
    };
    push("vp_identity", vp_identity_error().map(|e| (e <= 1e-6, format!("max |a²+s²-1| = {e:e}"))));
    push(
        "v_roundtrip",
        v_roundtrip_error(1000, seed).map(|e| (e < 1e-9, format!("max abs error {e:e}"))),
    );
    push(
        "attention",
        attention_report(seed).map(|r| {
            (
                r.row_sum_error <= 1e-9 && r.symmetric && r.hand_case_error <= 1e-12,
                format!(
                    "row sum error {:e}, symmetric {}, hand case error {:e}",
                    r.row_sum_error, r.symmetric, r.hand_case_error
                ),
            )
        }),
    );
    let seeds: Vec<u64> = (0..5).map(|i| seed.wrapping_add(i)).collect();
    push(
        "gradients",
        gradient_error(&seeds, 10).map(|e| (e < 1e-4, format!("max relative error {e:e}"))),
    );
    push(
        "conditioning",
        conditioning_sensitivity(seed).map(|d| (d > 1e-6, format!("smallest output change {d:e}"))),
    );
    push(
        "multires_noise",
        noise_statistics(62, seed).map(|(m, v, same)| {
            (
                same && m.abs() <= 0.01 && (0.98..=1.02).contains(&v),
                format!("mean {m:.5}, variance {v:.5}, reproducible {same}"),
            )
        }),
    );
    out
}
