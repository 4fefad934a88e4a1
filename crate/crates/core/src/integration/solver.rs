//! Symmetric 5-point stencil operator on a pixel grid and a Jacobi
//! preconditioned conjugate gradient solver over its free unknowns.

use crate::{Error, Real, Result};

/// Symmetric operator `A` on a `width × height` grid, row-major. `right[i]`
/// couples pixel `i` with `i + 1`, `down[i]` couples `i` with `i + width`.
#[derive(Debug, Clone)]
pub(crate) struct Stencil<T> {
    pub width: usize,
    pub diag: Vec<T>,
    pub right: Vec<T>,
    pub down: Vec<T>,
}

impl<T: Real> Stencil<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Stencil {
            width,
            diag: vec![T::zero(); n],
            right: vec![T::zero(); n],
            down: vec![T::zero(); n],
        }
    }

    /// Adds `w (x_j − x_i)²` to the quadratic form, `j` being the right
    /// (`horizontal`) or lower neighbor of `i`.
    #[inline]
    pub fn add_edge(&mut self, i: usize, horizontal: bool, w: T) {
        let j = if horizontal { i + 1 } else { i + self.width };
        self.diag[i] += w;
        self.diag[j] += w;
        if horizontal {
            self.right[i] -= w;
        } else {
            self.down[i] -= w;
        }
    }

    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let w = self.width;
        let n = x.len();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i % w + 1 < w {
                acc += self.right[i] * x[i + 1];
            }
            if i % w > 0 {
                acc += self.right[i - 1] * x[i - 1];
            }
            if i + w < n {
                acc += self.down[i] * x[i + w];
            }
            if i >= w {
                acc += self.down[i - w] * x[i - w];
            }
            y[i] = acc;
        }
    }

    #[cfg(test)]
    /// `xᵀ A y` evaluated through `apply`; used to check symmetry.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        let mut ay = vec![T::zero(); y.len()];
        self.apply(y, &mut ay);
        x.iter().zip(&ay).map(|(a, b)| *a * *b).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CgReport {
    pub iterations: usize,
}

/// Solves `A x = b` restricted to the `free` unknowns. Entries of `x` that
/// are not free are held fixed; on entry the free entries are the initial
/// guess. Convergence is `‖r‖ ≤ tol · ‖b_free − A_fixed x_fixed‖`.
pub(crate) fn pcg<T: Real>(
    a: &Stencil<T>,
    b: &[T],
    free: &[bool],
    x: &mut [T],
    tol: T,
    max_iters: usize,
) -> Result<CgReport> {
    let n = b.len();
    let dot = |p: &[T], q: &[T]| -> T { p.iter().zip(q).map(|(x, y)| *x * *y).sum() };

    // Effective rhs: b − A x_fixed on the free set.
    let mut fixed = x.to_vec();
    for i in 0..n {
        if free[i] {
            fixed[i] = T::zero();
        }
    }
    let mut tmp = vec![T::zero(); n];
    a.apply(&fixed, &mut tmp);
    let rhs: Vec<T> = (0..n).map(|i| if free[i] { b[i] - tmp[i] } else { T::zero() }).collect();
    let rhs_norm = dot(&rhs, &rhs).sqrt();

    let mut xf: Vec<T> = (0..n).map(|i| if free[i] { x[i] } else { T::zero() }).collect();
    a.apply(&xf, &mut tmp);
    let mut r: Vec<T> = (0..n).map(|i| if free[i] { rhs[i] - tmp[i] } else { T::zero() }).collect();
    if rhs_norm == T::zero() {
        for i in 0..n {
            if free[i] {
                x[i] = T::zero();
            }
        }
        return Ok(CgReport { iterations: 0 });
    }
    let inv_diag: Vec<T> = a
        .diag
        .iter()
        .zip(free)
        .map(|(d, f)| if *f && *d > T::zero() { T::one() / *d } else { T::zero() })
        .collect();
    let mut zvec: Vec<T> = r.iter().zip(&inv_diag).map(|(r, m)| *r * *m).collect();
    let mut p = zvec.clone();
    let mut rz = dot(&r, &zvec);
    let mut ap = vec![T::zero(); n];
    let mut res = dot(&r, &r).sqrt();
    let mut it = 0;
    while res > tol * rhs_norm {
        if it >= max_iters {
            return Err(Error::NotConverged {
                iterations: it,
                residual: (res / rhs_norm).as_f64(),
            });
        }
        a.apply(&p, &mut ap);
        for i in 0..n {
            if !free[i] {
                ap[i] = T::zero();
            }
        }
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::Singular(format!(
                "integration operator is not positive definite (pᵀAp = {pap})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            xf[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            zvec[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &zvec);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = zvec[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt();
        it += 1;
    }
    for i in 0..n {
        if free[i] {
            x[i] = xf[i];
        }
    }
    Ok(CgReport { iterations: it })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(w: usize, h: usize) -> Stencil<f64> {
        let mut s = Stencil::zeros(w, h);
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                if u + 1 < w {
                    s.add_edge(i, true, 1.0 + 0.1 * u as f64);
                }
                if v + 1 < h {
                    s.add_edge(i, false, 2.0);
                }
            }
        }
        s
    }

    #[test]
    fn operator_is_symmetric() {
        let s = laplacian(5, 4);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).cos()).collect();
        assert!((s.bilinear(&x, &y) - s.bilinear(&y, &x)).abs() < 1e-12);
    }

    #[test]
    fn anchored_solve_matches_known_solution() {
        let s = laplacian(6, 5);
        let truth: Vec<f64> = (0..30).map(|i| (i as f64 * 0.21).cos()).collect();
        let mut b = vec![0.0; 30];
        s.apply(&truth, &mut b);
        let mut free = vec![true; 30];
        free[0] = false;
        let mut x = vec![0.0; 30];
        x[0] = truth[0];
        pcg(&s, &b, &free, &mut x, 1e-12, 500).unwrap();
        for (a, t) in x.iter().zip(&truth) {
            assert!((a - t).abs() < 1e-9);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let s = laplacian(10, 10);
        let b: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mut free = vec![true; 100];
        free[0] = false;
        let mut x = vec![0.0; 100];
        let err = pcg(&s, &b, &free, &mut x, 1e-14, 2).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 2, .. }));
    }
}
