use super::NoiseSchedule;
use crate::{Error, Real, Result};

/// Dense `channels × height × width` tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> LatentTensor<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(channels * height * width, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent element {i}")));
        }
        Ok(LatentTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        LatentTensor {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        Ok(())
    }

    /// `a · self + b · other`.
    pub fn axpby(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * *x + b * *y).collect();
        Self::new(self.channels, self.height, self.width, data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max))
    }
}

/// `z_t = alpha_t · z0 + sigma_t · eps`.
pub fn forward_diffuse<T: Real>(
    z0: &LatentTensor<T>,
    t: usize,
    eps: &LatentTensor<T>,
    sched: &NoiseSchedule<T>,
) -> Result<LatentTensor<T>> {
    let (a, s) = sched.coefficients(t)?;
    z0.axpby(a, eps, s)
}

/// Velocity target `v = alpha_t · eps − sigma_t · z0`.
pub fn v_target<T: Real>(
    z0: &LatentTensor<T>,
    eps: &LatentTensor<T>,
    t: usize,
    sched: &NoiseSchedule<T>,
) -> Result<LatentTensor<T>> {
    let (a, s) = sched.coefficients(t)?;
    eps.axpby(a, z0, -s)
}

/// Inverts the rotation `(z0, eps) → (z_t, v)`; returns `(z0, eps)`.
pub fn recover_from_v<T: Real>(
    z_t: &LatentTensor<T>,
    v: &LatentTensor<T>,
    t: usize,
    sched: &NoiseSchedule<T>,
) -> Result<(LatentTensor<T>, LatentTensor<T>)> {
    let (a, s) = sched.coefficients(t)?;
    Ok((z_t.axpby(a, v, -s)?, z_t.axpby(s, v, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ScheduleKind};

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(LatentTensor::new(1, 2, 2, vec![0.0f64; 3]).is_err());
        assert!(LatentTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
        let a = LatentTensor::<f64>::zeros(1, 2, 2);
        let b = LatentTensor::<f64>::zeros(2, 1, 2);
        let s = make_schedule::<f64>(10, ScheduleKind::Cosine).unwrap();
        assert!(forward_diffuse(&a, 1, &b, &s).is_err());
        assert!(v_target(&a, &b, 1, &s).is_err());
    }

    #[test]
    fn low_noise_step_keeps_signal() {
        let s = make_schedule::<f64>(1000, ScheduleKind::ScaledLinear).unwrap();
        let z0 = LatentTensor::from_fn(2, 3, 3, |c, y, x| (c + y * 3 + x) as f64 * 0.1).unwrap();
        let eps = LatentTensor::from_fn(2, 3, 3, |c, y, x| ((c * 7 + y + x) as f64).sin()).unwrap();
        let zt = forward_diffuse(&z0, 1, &eps, &s).unwrap();
        let (a, sg) = s.coefficients(1).unwrap();
        for i in 0..z0.len() {
            assert_eq!(zt.as_slice()[i], a * z0.as_slice()[i] + sg * eps.as_slice()[i]);
        }
    }
}
