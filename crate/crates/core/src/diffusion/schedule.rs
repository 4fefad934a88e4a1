use std::str::FromStr;

use crate::{Error, Real, Result};

pub const DEFAULT_STEPS: usize = 1000;

const LINEAR_BETA_START: f64 = 0.00085;
const LINEAR_BETA_END: f64 = 0.012;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    ScaledLinear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled_linear" | "scaled-linear" => Ok(ScheduleKind::ScaledLinear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Variance-preserving noise schedule. Steps are 1-based: `alpha(1)` is the
/// least noisy level and `sigma(T)` the most.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    kind: ScheduleKind,
    alpha: Vec<T>,
    sigma: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    /// Schedule from explicit per-step coefficients. They must satisfy
    /// `alpha² + sigma² = 1` within 1e-6, with alpha non-increasing and
    /// sigma non-decreasing.
    pub fn from_coefficients(kind: ScheduleKind, alpha: Vec<T>, sigma: Vec<T>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != sigma.len() {
            return Err(Error::shape(alpha.len().max(1), sigma.len()));
        }
        for (i, (a, s)) in alpha.iter().zip(&sigma).enumerate() {
            if !(*a >= T::zero() && *s >= T::zero()) || (*a * *a + *s * *s - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::invalid(format!("step {} is not variance preserving", i + 1)));
            }
        }
        if alpha.windows(2).any(|w| w[1] > w[0]) || sigma.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("schedule must move monotonically toward noise"));
        }
        Ok(NoiseSchedule { kind, alpha, sigma })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn alpha(&self, t: usize) -> Result<T> {
        self.index(t).map(|i| self.alpha[i])
    }

    pub fn sigma(&self, t: usize) -> Result<T> {
        self.index(t).map(|i| self.sigma[i])
    }

    /// `(alpha_t, sigma_t)`.
    pub fn coefficients(&self, t: usize) -> Result<(T, T)> {
        let i = self.index(t)?;
        Ok((self.alpha[i], self.sigma[i]))
    }

    pub fn alphas(&self) -> &[T] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigma
    }
}

/// Builds a `steps`-level schedule.
///
/// The scaled-linear betas interpolate `sqrt(beta)` linearly between 0.00085
/// and 0.012 over a 1000-step reference grid and are stretched to `steps`,
/// so the cumulative noise at the last step does not depend on `steps`.
/// The cosine schedule uses `cos²((t/T + s) / (1 + s) · π/2)` with
/// `s = 0.008`.
pub fn make_schedule<T: Real>(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule<T>> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    let alpha_bar: Vec<f64> = match kind {
        ScheduleKind::ScaledLinear => {
            let (lo, hi) = (LINEAR_BETA_START.sqrt(), LINEAR_BETA_END.sqrt());
            let stretch = DEFAULT_STEPS as f64 / steps as f64;
            let mut acc = 1.0;
            (0..steps)
                .map(|i| {
                    let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                    let root = lo + (hi - lo) * f;
                    // Product of (1 - beta) over the reference steps covered.
                    let beta = (root * root).min(MAX_BETA);
                    acc *= (1.0 - beta).powf(stretch);
                    acc
                })
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            let f0 = f(0.0);
            (1..=steps).map(|t| (f(t as f64) / f0).clamp(0.0, 1.0)).collect()
        }
    };
    let alpha = alpha_bar.iter().map(|a| T::lit(a.sqrt())).collect();
    let sigma = alpha_bar.iter().map(|a| T::lit((1.0 - a).sqrt())).collect();
    Ok(NoiseSchedule { kind, alpha, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_rejected() {
        assert!(make_schedule::<f64>(0, ScheduleKind::ScaledLinear).is_err());
    }

    #[test]
    fn endpoints() {
        for kind in [ScheduleKind::ScaledLinear, ScheduleKind::Cosine] {
            let s = make_schedule::<f64>(1000, kind).unwrap();
            assert!(s.alpha(1).unwrap() > 0.99, "{kind:?}");
            assert!(s.sigma(1000).unwrap() > 0.99, "{kind:?}");
            assert!(s.alpha(0).is_err() && s.alpha(1001).is_err());
        }
    }

    #[test]
    fn scaled_linear_matches_cumulative_product() {
        // Independent evaluation of the reference 1000-step recursion.
        let s = make_schedule::<f64>(1000, ScheduleKind::ScaledLinear).unwrap();
        let mut acc = 1.0;
        for t in 1..=1000 {
            let root = 0.00085f64.sqrt() + (0.012f64.sqrt() - 0.00085f64.sqrt()) * (t - 1) as f64 / 999.0;
            acc *= 1.0 - root * root;
            assert!((s.alpha(t).unwrap() - acc.sqrt()).abs() < 1e-12);
        }
        assert!((s.alpha(1).unwrap() - (1.0f64 - 0.00085).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn short_schedules_still_reach_noise() {
        let s = make_schedule::<f64>(50, ScheduleKind::ScaledLinear).unwrap();
        let long = make_schedule::<f64>(1000, ScheduleKind::ScaledLinear).unwrap();
        assert!((s.sigma(50).unwrap() - long.sigma(1000).unwrap()).abs() < 1e-3);
    }

    #[test]
    fn parses_kind() {
        assert_eq!("cosine".parse::<ScheduleKind>().unwrap(), ScheduleKind::Cosine);
        assert!("quadratic".parse::<ScheduleKind>().is_err());
    }
}
