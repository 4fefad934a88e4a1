use std::fmt;
use std::str::FromStr;

use crate::{Error, Real, Result};

pub const DEFAULT_EMBED_DIM: usize = 64;

const PE_BASE: f64 = 10000.0;

/// Discrete conditioning codes: the geometry switcher selects the output
/// domain, the scene code the scene layout prior. Switchers occupy indices
/// 0..2 and scenes 2..5 of the positional table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ConditionCode {
    #[serde(rename = "s_d")]
    Depth,
    #[serde(rename = "s_n")]
    Normal,
    #[serde(rename = "s_0")]
    Indoor,
    #[serde(rename = "s_1")]
    Outdoor,
    #[serde(rename = "s_2")]
    Object,
}

impl ConditionCode {
    pub const ALL: [ConditionCode; 5] = [
        ConditionCode::Depth,
        ConditionCode::Normal,
        ConditionCode::Indoor,
        ConditionCode::Outdoor,
        ConditionCode::Object,
    ];
    pub const SCENES: [ConditionCode; 3] = [ConditionCode::Indoor, ConditionCode::Outdoor, ConditionCode::Object];

    pub fn index(self) -> usize {
        match self {
            ConditionCode::Depth => 0,
            ConditionCode::Normal => 1,
            ConditionCode::Indoor => 2,
            ConditionCode::Outdoor => 3,
            ConditionCode::Object => 4,
        }
    }

    pub fn is_switcher(self) -> bool {
        matches!(self, ConditionCode::Depth | ConditionCode::Normal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionCode::Depth => "s_d",
            ConditionCode::Normal => "s_n",
            ConditionCode::Indoor => "s_0",
            ConditionCode::Outdoor => "s_1",
            ConditionCode::Object => "s_2",
        }
    }
}

impl fmt::Display for ConditionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "s_d" | "depth" => ConditionCode::Depth,
            "s_n" | "normal" => ConditionCode::Normal,
            "s_0" | "indoor" => ConditionCode::Indoor,
            "s_1" | "outdoor" => ConditionCode::Outdoor,
            "s_2" | "object" => ConditionCode::Object,
            other => return Err(Error::UnknownCode(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Time,
    Switcher,
    Scene,
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningEmbedding<T> {
    pub vector: Vec<T>,
    pub source: EmbeddingSource,
}

impl<T: Real> ConditioningEmbedding<T> {
    pub fn zeros(dim: usize, source: EmbeddingSource) -> Self {
        ConditioningEmbedding {
            vector: vec![T::zero(); dim],
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Sinusoidal encoding of a scalar position: entry `2i` is
/// `sin(p / 10000^(2i/dim))` and entry `2i + 1` the matching cosine.
pub fn sinusoidal<T: Real>(position: T, dim: usize) -> Result<Vec<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!("embedding dimension {dim} must be even and positive")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = T::lit(PE_BASE.powf(-((2 * i) as f64) / dim as f64));
        let arg = position * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

pub fn positional_encode<T: Real>(code: ConditionCode, dim: usize) -> Result<ConditioningEmbedding<T>> {
    Ok(ConditioningEmbedding {
        vector: sinusoidal(T::from_usize_lossy(code.index()), dim)?,
        source: if code.is_switcher() {
            EmbeddingSource::Switcher
        } else {
            EmbeddingSource::Scene
        },
    })
}

/// Looks up a code by name; unknown names are an error.
pub fn positional_encode_str<T: Real>(code: &str, dim: usize) -> Result<ConditioningEmbedding<T>> {
    positional_encode(code.parse()?, dim)
}

pub fn time_embedding<T: Real>(t: usize, dim: usize) -> Result<ConditioningEmbedding<T>> {
    Ok(ConditioningEmbedding {
        vector: sinusoidal(T::from_usize_lossy(t), dim)?,
        source: EmbeddingSource::Time,
    })
}

/// Element-wise sum `time + switcher + scene`.
pub fn combine_conditioning<T: Real>(
    time: &ConditioningEmbedding<T>,
    switcher: &ConditioningEmbedding<T>,
    scene: &ConditioningEmbedding<T>,
) -> Result<ConditioningEmbedding<T>> {
    for e in [switcher, scene] {
        if e.dim() != time.dim() {
            return Err(Error::shape(time.dim(), e.dim()));
        }
    }
    Ok(ConditioningEmbedding {
        vector: (0..time.dim())
            .map(|i| time.vector[i] + switcher.vector[i] + scene.vector[i])
            .collect(),
        source: EmbeddingSource::Combined,
    })
}

/// Combined conditioning for one branch at step `t`.
pub fn branch_conditioning<T: Real>(
    t: usize,
    switcher: ConditionCode,
    scene: ConditionCode,
    dim: usize,
) -> Result<ConditioningEmbedding<T>> {
    if !switcher.is_switcher() || scene.is_switcher() {
        return Err(Error::invalid(format!("expected a switcher and a scene code, got {switcher} and {scene}")));
    }
    combine_conditioning(
        &time_embedding(t, dim)?,
        &positional_encode(switcher, dim)?,
        &positional_encode(scene, dim)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_zero_alternates() {
        let e = positional_encode::<f64>(ConditionCode::Depth, 16).unwrap();
        for (i, v) in e.vector.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn dim_eight_index_one_table() {
        // sin/cos of 1 / 10000^(k/8) for k = 0, 2, 4, 6.
        let table = [
            0.8414709848078965,
            0.5403023058681398,
            0.09983341664682815,
            0.9950041652780258,
            0.009999833334166664,
            0.9999500004166653,
            0.0009999998333333417,
            0.9999995000000417,
        ];
        let e = positional_encode::<f64>(ConditionCode::Normal, 8).unwrap();
        for (a, b) in e.vector.iter().zip(table) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn codes_are_distinct() {
        let es: Vec<Vec<f64>> = ConditionCode::ALL
            .iter()
            .map(|c| positional_encode(*c, 64).unwrap().vector)
            .collect();
        for i in 0..es.len() {
            for j in i + 1..es.len() {
                let d: f64 = es[i].iter().zip(&es[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn unknown_code_and_odd_dim() {
        assert!(matches!(positional_encode_str::<f64>("s_9", 8), Err(Error::UnknownCode(_))));
        assert!(positional_encode::<f64>(ConditionCode::Depth, 7).is_err());
        assert_eq!("s_1".parse::<ConditionCode>().unwrap(), ConditionCode::Outdoor);
    }

    #[test]
    fn zero_conditioning_leaves_time_unchanged() {
        let t = time_embedding::<f64>(17, 8).unwrap();
        let z = ConditioningEmbedding::zeros(8, EmbeddingSource::Switcher);
        let c = combine_conditioning(&t, &z, &ConditioningEmbedding::zeros(8, EmbeddingSource::Scene)).unwrap();
        assert_eq!(c.vector, t.vector);
        assert!(combine_conditioning(&t, &ConditioningEmbedding::zeros(6, EmbeddingSource::Scene), &z).is_err());
    }

    #[test]
    fn branch_conditioning_checks_roles() {
        assert!(branch_conditioning::<f64>(3, ConditionCode::Indoor, ConditionCode::Indoor, 8).is_err());
        let a = branch_conditioning::<f64>(3, ConditionCode::Depth, ConditionCode::Indoor, 8).unwrap();
        let b = branch_conditioning::<f64>(3, ConditionCode::Normal, ConditionCode::Indoor, 8).unwrap();
        assert_ne!(a.vector, b.vector);
    }
}
