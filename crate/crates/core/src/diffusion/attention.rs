use crate::{Error, Real, Result};

/// `count` tokens of dimension `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens<T> {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tokens<T> {
    pub fn new(count: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != count * dim {
            return Err(Error::shape(count * dim, data.len()));
        }
        Ok(Tokens { count, dim, data })
    }

    pub fn zeros(count: usize, dim: usize) -> Self {
        Tokens {
            count,
            dim,
            data: vec![T::zero(); count * dim],
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Query, key and value projections, each `dim × dim` row-major and shared
/// by both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub dim: usize,
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn new(dim: usize, query: Vec<T>, key: Vec<T>, value: Vec<T>) -> Result<Self> {
        for m in [&query, &key, &value] {
            if m.len() != dim * dim {
                return Err(Error::shape(dim * dim, m.len()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("attention weight".into()));
            }
        }
        Ok(AttentionWeights { dim, query, key, value })
    }

    pub fn zeros(dim: usize) -> Self {
        AttentionWeights {
            dim,
            query: vec![T::zero(); dim * dim],
            key: vec![T::zero(); dim * dim],
            value: vec![T::zero(); dim * dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossAttention<T> {
    pub feat_d: Tokens<T>,
    pub feat_n: Tokens<T>,
    /// Row-stochastic `N × 2N` attention of the depth queries over
    /// `[depth; normal]` tokens.
    pub attn_d: Vec<T>,
    /// Same for the normal queries over `[normal; depth]`.
    pub attn_n: Vec<T>,
}

/// `y_i = W x_i` for every row.
fn project<T: Real>(x: &[T], rows: usize, dim: usize, w: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); rows * dim];
    for i in 0..rows {
        let xi = &x[i * dim..(i + 1) * dim];
        for a in 0..dim {
            let wa = &w[a * dim..(a + 1) * dim];
            y[i * dim + a] = wa.iter().zip(xi).map(|(p, q)| *p * *q).sum();
        }
    }
    y
}

/// One domain's attention with its intermediates.
struct Attend<T> {
    /// `[self; other]`, `2N × D`.
    joint: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    p: Vec<T>,
    out: Vec<T>,
}

fn attend<T: Real>(own: &[T], other: &[T], n: usize, d: usize, w: &AttentionWeights<T>) -> Attend<T> {
    let mut joint = own.to_vec();
    joint.extend_from_slice(other);
    let q = project(own, n, d, &w.query);
    let k = project(&joint, 2 * n, d, &w.key);
    let v = project(&joint, 2 * n, d, &w.value);
    let scale = T::lit((d as f64).sqrt()).recip();
    let m = 2 * n;
    let mut p = vec![T::zero(); n * m];
    let mut out = vec![T::zero(); n * d];
    for i in 0..n {
        let qi = &q[i * d..(i + 1) * d];
        let row = &mut p[i * m..(i + 1) * m];
        for (j, r) in row.iter_mut().enumerate() {
            *r = qi.iter().zip(&k[j * d..(j + 1) * d]).map(|(a, b)| *a * *b).sum::<T>() * scale;
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        for r in row.iter_mut() {
            *r /= total;
        }
        for (j, pj) in row.iter().enumerate() {
            for c in 0..d {
                out[i * d + c] += *pj * v[j * d + c];
            }
        }
    }
    Attend { joint, q, k, v, p, out }
}

fn check_inputs<T: Real>(zd: &Tokens<T>, zn: &Tokens<T>, w: &AttentionWeights<T>) -> Result<()> {
    if zd.count != zn.count || zd.dim != zn.dim {
        return Err(Error::shape(
            format!("{}x{}", zd.count, zd.dim),
            format!("{}x{}", zn.count, zn.dim),
        ));
    }
    if zd.dim != w.dim {
        return Err(Error::shape(w.dim, zd.dim));
    }
    if zd.count == 0 {
        return Err(Error::invalid("attention over zero tokens"));
    }
    Ok(())
}

/// Softmax attention where each domain queries with its own tokens and
/// attends over the keys and values of both domains, own tokens first.
pub fn cross_domain_attention<T: Real>(
    zd: &Tokens<T>,
    zn: &Tokens<T>,
    w: &AttentionWeights<T>,
) -> Result<CrossAttention<T>> {
    check_inputs(zd, zn, w)?;
    let (n, d) = (zd.count, zd.dim);
    let a = attend(&zd.data, &zn.data, n, d, w);
    let b = attend(&zn.data, &zd.data, n, d, w);
    Ok(CrossAttention {
        feat_d: Tokens::new(n, d, a.out)?,
        feat_n: Tokens::new(n, d, b.out)?,
        attn_d: a.p,
        attn_n: b.p,
    })
}

/// Gradients of a scalar loss with respect to both token sets and the
/// three projections.
#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub d_zd: Vec<T>,
    pub d_zn: Vec<T>,
    pub weights: AttentionWeights<T>,
}

/// Accumulates `∂L/∂W x` style gradients for a projection `y_i = W x_i`.
fn project_backward<T: Real>(x: &[T], dy: &[T], rows: usize, dim: usize, w: &[T], dw: &mut [T], dx: &mut [T]) {
    for i in 0..rows {
        let xi = &x[i * dim..(i + 1) * dim];
        for a in 0..dim {
            let g = dy[i * dim + a];
            if g == T::zero() {
                continue;
            }
            for b in 0..dim {
                dw[a * dim + b] += g * xi[b];
                dx[i * dim + b] += g * w[a * dim + b];
            }
        }
    }
}

/// Back-propagates `dfeat_d`, `dfeat_n` through [`cross_domain_attention`].
pub fn cross_domain_attention_backward<T: Real>(
    zd: &Tokens<T>,
    zn: &Tokens<T>,
    w: &AttentionWeights<T>,
    dfeat_d: &[T],
    dfeat_n: &[T],
) -> Result<AttentionGrads<T>> {
    check_inputs(zd, zn, w)?;
    let (n, d) = (zd.count, zd.dim);
    if dfeat_d.len() != n * d || dfeat_n.len() != n * d {
        return Err(Error::shape(n * d, dfeat_d.len().min(dfeat_n.len())));
    }
    let mut grads = AttentionGrads {
        d_zd: vec![T::zero(); n * d],
        d_zn: vec![T::zero(); n * d],
        weights: AttentionWeights::zeros(d),
    };
    let scale = T::lit((d as f64).sqrt()).recip();
    let m = 2 * n;
    for (own_is_depth, dout) in [(true, dfeat_d), (false, dfeat_n)] {
        let (own, other) = if own_is_depth { (zd, zn) } else { (zn, zd) };
        let a = attend(&own.data, &other.data, n, d, w);
        let mut dv = vec![T::zero(); m * d];
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); m * d];
        for i in 0..n {
            let p = &a.p[i * m..(i + 1) * m];
            let go = &dout[i * d..(i + 1) * d];
            let dp: Vec<T> = (0..m)
                .map(|j| go.iter().zip(&a.v[j * d..(j + 1) * d]).map(|(x, y)| *x * *y).sum())
                .collect();
            for j in 0..m {
                for c in 0..d {
                    dv[j * d + c] += p[j] * go[c];
                }
            }
            let dot: T = p.iter().zip(&dp).map(|(x, y)| *x * *y).sum();
            for j in 0..m {
                let ds = p[j] * (dp[j] - dot) * scale;
                for c in 0..d {
                    dq[i * d + c] += ds * a.k[j * d + c];
                    dk[j * d + c] += ds * a.q[i * d + c];
                }
            }
        }
        let mut d_own = vec![T::zero(); n * d];
        let mut d_joint = vec![T::zero(); m * d];
        project_backward(&own.data, &dq, n, d, &w.query, &mut grads.weights.query, &mut d_own);
        project_backward(&a.joint, &dk, m, d, &w.key, &mut grads.weights.key, &mut d_joint);
        project_backward(&a.joint, &dv, m, d, &w.value, &mut grads.weights.value, &mut d_joint);
        let (g_own, g_other) = if own_is_depth {
            (&mut grads.d_zd, &mut grads.d_zn)
        } else {
            (&mut grads.d_zn, &mut grads.d_zd)
        };
        for i in 0..n * d {
            g_own[i] += d_own[i] + d_joint[i];
            g_other[i] += d_joint[n * d + i];
        }
    }
    Ok(grads)
}
