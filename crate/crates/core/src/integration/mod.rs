//! Surface reconstruction from normal maps.
//!
//! Bilateral normal integration: every pixel contributes four one-sided
//! finite-difference residuals (left/right, up/down) measuring how far the
//! surface gradient is from the gradient implied by its normal. Opposite
//! sides are blended with complementary sigmoid weights of their squared
//! residual difference, so at a depth discontinuity the side that crosses
//! the jump is switched off. Weights and surface are updated alternately
//! (IRLS); each surface update is a sparse SPD solve by conjugate gradients.
//!
//! Orthographic integration recovers a height field in pixel units, with
//! residual `Δz + n_x / n_z` along u (resp. `n_y` along v). Perspective
//! integration works on log-depth, where the residual along u becomes
//! `f_x · Δlog z + n_x / (n · ray)`. Both sides of an edge share the same
//! coefficient on `Δ`, so on smooth surfaces the pair reduces to the
//! trapezoid rule. Pixels whose normal is within [`MIN_FACING`] of
//! perpendicular to the viewing direction are left out.

mod mesh;
mod solver;

pub use mesh::{mesh_from_depth, TriangleMesh};

use std::collections::VecDeque;

use solver::{pcg, Stencil};

use crate::alignment::{apply_affine, optimize_scale_shift_by_normal, NormalAlignment, ScaleShiftSearch};
use crate::geometry::{vec3, DepthKind, DepthMap, Intrinsics, Mask, NormalMap};
use crate::{Error, Real, Result};

/// Minimum cosine between a normal and the viewing direction for a pixel
/// to take part in integration.
pub const MIN_FACING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Orthographic,
    Perspective,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegrationParams {
    pub model: Projection,
    pub irls_iters: usize,
    /// Relative residual tolerance of each CG solve.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Sigmoid stiffness of the one-sided weights.
    pub bilateral_k: f64,
    /// Weight of `Σ (z − prior)²`; with a prior and `0` the prior only fixes
    /// the gauge (offset or scale) per connected component.
    pub depth_prior_weight: f64,
    /// IRLS stops once the relative energy change falls below this.
    pub energy_tol: f64,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        IntegrationParams {
            model: Projection::Perspective,
            irls_iters: 20,
            cg_tol: 1e-8,
            cg_max_iters: 5000,
            bilateral_k: 2.0,
            depth_prior_weight: 1e-2,
            energy_tol: 1e-10,
        }
    }
}

impl IntegrationParams {
    pub fn orthographic() -> Self {
        IntegrationParams {
            model: Projection::Orthographic,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.irls_iters < 1 {
            return Err(Error::invalid("irls_iters must be >= 1"));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iters == 0 {
            return Err(Error::invalid("cg_tol must be > 0 and cg_max_iters >= 1"));
        }
        if !(self.depth_prior_weight >= 0.0) || !self.depth_prior_weight.is_finite() {
            return Err(Error::invalid("depth_prior_weight must be finite and >= 0"));
        }
        if !(self.bilateral_k >= 0.0) || !self.bilateral_k.is_finite() {
            return Err(Error::invalid("bilateral_k must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Integrated surface plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct Integration<T> {
    /// Perspective: metric depth. Orthographic: height field (pixel units),
    /// labelled affine-invariant since it may be non-positive.
    pub depth: DepthMap<T>,
    /// Bilateral energy after each IRLS iteration.
    pub energies: Vec<T>,
    pub cg_iterations: Vec<usize>,
    pub components: usize,
}

/// One-sided residual `a · (z_to − z_from) + c` owned by pixel `owner`.
#[derive(Debug, Clone, Copy)]
struct Term<T> {
    from: usize,
    to: usize,
    a: T,
    c: T,
}

impl<T: Real> Term<T> {
    #[inline]
    fn residual(&self, z: &[T]) -> T {
        self.a * (z[self.to] - z[self.from]) + self.c
    }
}

/// Paired opposite-side residuals of one pixel along one axis. Either side
/// may be missing at a mask or image border.
#[derive(Debug, Clone, Copy)]
struct Pair<T> {
    plus: Option<Term<T>>,
    minus: Option<Term<T>>,
}

struct Problem<T> {
    width: usize,
    height: usize,
    active: Vec<bool>,
    pairs: Vec<Pair<T>>,
    prior: Option<Vec<Option<T>>>,
    lambda: T,
}

impl<T: Real> Problem<T> {
    fn weights(&self, z: &[T], k: T) -> Vec<(T, T)> {
        self.pairs
            .iter()
            .map(|p| match (p.plus, p.minus) {
                (Some(pl), Some(mi)) => {
                    let rp = pl.residual(z);
                    let rm = mi.residual(z);
                    let wp = sigmoid(k * (rm * rm - rp * rp));
                    (wp, T::one() - wp)
                }
                // A lone side keeps the neutral weight so that both terms
                // sharing an edge stay balanced at the mask boundary.
                (Some(_), None) => (T::lit(0.5), T::zero()),
                (None, Some(_)) => (T::zero(), T::lit(0.5)),
                (None, None) => (T::zero(), T::zero()),
            })
            .collect()
    }

    fn energy(&self, z: &[T], w: &[(T, T)]) -> T {
        let mut e = T::zero();
        for (p, (wp, wm)) in self.pairs.iter().zip(w) {
            if let Some(t) = p.plus {
                let r = t.residual(z);
                e += *wp * r * r;
            }
            if let Some(t) = p.minus {
                let r = t.residual(z);
                e += *wm * r * r;
            }
        }
        if let Some(prior) = &self.prior {
            for (i, pr) in prior.iter().enumerate() {
                if let (true, Some(p)) = (self.active[i], pr) {
                    let d = z[i] - *p;
                    e += self.lambda * d * d;
                }
            }
        }
        e
    }

    fn assemble(&self, w: &[(T, T)]) -> (Stencil<T>, Vec<T>) {
        let mut a = Stencil::zeros(self.width, self.height);
        let mut b = vec![T::zero(); self.width * self.height];
        let mut add = |t: &Term<T>, weight: T| {
            if weight == T::zero() {
                return;
            }
            let (lo, hi) = if t.from < t.to { (t.from, t.to) } else { (t.to, t.from) };
            a.add_edge(lo, hi == lo + 1, weight * t.a * t.a);
            let g = weight * t.a * t.c;
            b[t.to] -= g;
            b[t.from] += g;
        };
        for (p, (wp, wm)) in self.pairs.iter().zip(w) {
            if let Some(t) = &p.plus {
                add(t, *wp);
            }
            if let Some(t) = &p.minus {
                add(t, *wm);
            }
        }
        if let Some(prior) = &self.prior {
            for (i, pr) in prior.iter().enumerate() {
                if let (true, Some(p)) = (self.active[i], pr) {
                    a.diag[i] += self.lambda;
                    b[i] += self.lambda * *p;
                }
            }
        }
        (a, b)
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// 4-connected components of `active`, each as a list of pixel indices in
/// row-major order.
fn components(active: &[bool], width: usize, height: usize) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; active.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..active.len() {
        if !active[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = Vec::new();
        label[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (u, v) = (i % width, i / width);
            let mut visit = |j: usize| {
                if active[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if u > 0 {
                visit(i - 1);
            }
            if u + 1 < width {
                visit(i + 1);
            }
            if v > 0 {
                visit(i - width);
            }
            if v + 1 < height {
                visit(i + width);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Integrates `normals` over `mask` into a surface.
///
/// Without a prior the gauge is fixed per 4-connected component at its first
/// pixel in row-major order: height 0 (orthographic) or depth 1
/// (perspective). A prior with positive weight enters the energy as
/// `λ Σ (z − prior)²` (log-depth for perspective); with zero weight it only
/// sets each component's offset (orthographic) or scale (perspective) in the
/// least-squares sense.
pub fn integrate_normals<T: Real>(
    normals: &NormalMap<T>,
    mask: &Mask,
    prior: Option<&DepthMap<T>>,
    k: Option<&Intrinsics<T>>,
    params: &IntegrationParams,
) -> Result<Integration<T>> {
    params.validate()?;
    let (width, height) = (normals.width(), normals.height());
    let active_mask = normals.mask().and(mask)?;
    if active_mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let perspective = params.model == Projection::Perspective;
    let k = match (perspective, k) {
        (true, None) => return Err(Error::invalid("perspective integration requires intrinsics")),
        (true, Some(k)) => {
            k.check_size(width, height)?;
            Some(*k)
        }
        (false, _) => None,
    };
    if let Some(p) = prior {
        p.mask().check_same(mask)?;
        if perspective {
            p.require_metric("perspective integration prior")?;
        }
    }
    // Facing term n · ray (ray with unit z) and its normalized cosine.
    let facing = |i: usize| -> (T, T) {
        let n = normals.values()[i];
        match &k {
            None => (n[2], n[2]),
            Some(k) => {
                let ray = k.ray(i % width, i / width);
                let d = vec3::dot(&n, &ray);
                (d, d / vec3::norm(&ray))
            }
        }
    };
    let mut active = active_mask.as_slice().to_vec();
    for (i, a) in active.iter_mut().enumerate() {
        if *a && facing(i).1 < T::lit(MIN_FACING) {
            *a = false;
        }
    }
    let active_mask = Mask::new(width, height, active.clone())?;
    if active_mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    // Per-pixel (a, c) along u and v.
    let (su, sv) = k.map_or((T::one(), T::one()), |k| (k.fx, k.fy));
    let coeff = |i: usize| -> ((T, T), (T, T)) {
        let n = normals.values()[i];
        let d = facing(i).0;
        ((su, n[0] / d), (sv, n[1] / d))
    };
    let mut pairs = Vec::new();
    for i in 0..active.len() {
        if !active[i] {
            continue;
        }
        let (u, v) = (i % width, i / width);
        let ((au, cu), (av, cv)) = coeff(i);
        let term = |from: usize, to: usize, a: T, c: T| Term { from, to, a, c };
        pairs.push(Pair {
            plus: (u + 1 < width && active[i + 1]).then(|| term(i, i + 1, au, cu)),
            minus: (u > 0 && active[i - 1]).then(|| term(i - 1, i, au, cu)),
        });
        pairs.push(Pair {
            plus: (v + 1 < height && active[i + width]).then(|| term(i, i + width, av, cv)),
            minus: (v > 0 && active[i - width]).then(|| term(i - width, i, av, cv)),
        });
    }

    let lambda = params.depth_prior_weight;
    let prior_values: Option<Vec<Option<T>>> = prior.map(|p| {
        (0..active.len())
            .map(|i| {
                let (u, v) = (i % width, i / width);
                p.get(u, v).and_then(|d| if perspective { (d > T::zero()).then(|| d.ln()) } else { Some(d) })
            })
            .collect()
    });
    let soft_prior = lambda > 0.0 && prior_values.is_some();
    let problem = Problem {
        width,
        height,
        active: active.clone(),
        pairs,
        prior: if soft_prior { prior_values.clone() } else { None },
        lambda: T::lit(lambda),
    };

    let comps = components(&active, width, height);
    let mut free = active.clone();
    let mut z = vec![T::zero(); active.len()];
    for comp in &comps {
        let has_prior = soft_prior
            && prior_values
                .as_ref()
                .is_some_and(|pv| comp.iter().any(|i| pv[*i].is_some()));
        if !has_prior {
            free[comp[0]] = false;
        }
    }

    let kk = T::lit(params.bilateral_k);
    let tol = T::lit(params.cg_tol);
    let mut weights = problem.weights(&z, T::zero());
    let mut energies = Vec::with_capacity(params.irls_iters);
    let mut cg_iterations = Vec::with_capacity(params.irls_iters);
    for _ in 0..params.irls_iters {
        let (a, b) = problem.assemble(&weights);
        let rep = pcg(&a, &b, &free, &mut z, tol, params.cg_max_iters)?;
        cg_iterations.push(rep.iterations);
        weights = problem.weights(&z, kk);
        let e = problem.energy(&z, &weights);
        let converged = energies
            .last()
            .is_some_and(|prev: &T| (*prev - e).abs() <= T::lit(params.energy_tol) * prev.abs().max(T::min_positive_value()));
        energies.push(e);
        if converged {
            break;
        }
    }

    if !soft_prior {
        if let Some(pv) = &prior_values {
            for comp in &comps {
                let diffs: Vec<T> = comp.iter().filter_map(|i| pv[*i].map(|p| p - z[*i])).collect();
                if diffs.is_empty() {
                    continue;
                }
                let offset = diffs.iter().copied().sum::<T>() / T::from_usize_lossy(diffs.len());
                for i in comp {
                    z[*i] += offset;
                }
            }
        }
    }

    let values: Vec<T> = if perspective { z.iter().map(|v| v.exp()).collect() } else { z };
    let kind = if perspective { DepthKind::Metric } else { DepthKind::AffineInvariant };
    let depth = DepthMap::with_mask(values, active_mask, kind)?;
    Ok(Integration {
        depth,
        energies,
        cg_iterations,
        components: comps.len(),
    })
}

/// Parameters of the full depth + normal reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReconstructParams {
    pub alignment: ScaleShiftSearch,
    pub integration: IntegrationParams,
    /// Triangles whose max/min vertex depth ratio exceeds this are dropped.
    pub edge_depth_ratio: f64,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        ReconstructParams {
            alignment: ScaleShiftSearch::default(),
            integration: IntegrationParams::default(),
            edge_depth_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction<T> {
    pub alignment: NormalAlignment<T>,
    pub pseudo_metric: DepthMap<T>,
    pub integration: Integration<T>,
    pub mesh: TriangleMesh<T>,
}

/// Normal-consistency alignment, affine correction, perspective integration
/// anchored on the pseudo-metric depth, then meshing.
pub fn reconstruct<T: Real>(
    pred_depth: &DepthMap<T>,
    pred_normal: &NormalMap<T>,
    k: &Intrinsics<T>,
    params: &ReconstructParams,
) -> Result<Reconstruction<T>> {
    let shared = pred_depth.mask().and(pred_normal.mask())?;
    let alignment = optimize_scale_shift_by_normal(pred_depth, pred_normal, k, &params.alignment)?;
    let pseudo_metric = apply_affine(pred_depth, &alignment.params)?;
    let mut ip = params.integration;
    ip.model = Projection::Perspective;
    let mask = shared.and(pseudo_metric.mask())?;
    let integration = integrate_normals(pred_normal, &mask, Some(&pseudo_metric), Some(k), &ip)?;
    let mesh = mesh_from_depth(&integration.depth, k, &mask, T::lit(params.edge_depth_ratio))?;
    Ok(Reconstruction {
        alignment,
        pseudo_metric,
        integration,
        mesh,
    })
}
