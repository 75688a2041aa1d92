//! Bottom-up principal-curve tracing, geodesic projection onto the traced
//! polyline, and density-weighted length along it.
//!
//! A curve is grown stepwise from a seed in both directions. At each vertex
//! the tangent is re-estimated from a local PCA of the k-neighborhood
//! (optionally restricted to a subspace), blended with the previous tangent
//! through the stiffness weight `q`, and the vertex is recentered toward the
//! neighborhood mean before advancing by `tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{knn_query, Marginal1d};
use crate::sample::SampleSet;

/// Rigidity parameters of the tracer: locality (fraction of samples per
/// neighborhood), step size in Euclidean units, stiffness, and a step cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub k_fraction: f64,
    pub tau: f64,
    pub q: f64,
    pub max_steps: usize,
}

impl CurveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "k_fraction",
                reason: format!("must be in (0, 1], got {}", self.k_fraction),
            });
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("must be a positive finite step, got {}", self.tau),
            });
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "q",
                reason: format!("must be positive, got {}", self.q),
            });
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "max_steps",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Absolute neighbor count for a set of `n` points in dimension `dim`.
    pub fn neighbor_count(&self, n: usize, dim: usize) -> usize {
        let k = (self.k_fraction * n as f64).round() as usize;
        k.max(dim + 1).min(n)
    }
}

/// A traced principal curve: a polyline with unit tangents, signed arc
/// positions relative to the seed, and branch labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalCurve {
    vertices: Vec<Vec<f64>>,
    tangents: Vec<Vec<f64>>,
    #[serde(rename = "arc_length")]
    arc: Vec<f64>,
    direction_sign: Vec<i8>,
    seed_index: usize,
    params: CurveParams,
}

/// Result of projecting a point onto a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicProjection {
    /// The foot of the projection, always on the polyline.
    pub point: Vec<f64>,
    /// Signed arc length from the curve seed.
    pub arc_position: f64,
    pub segment_index: usize,
    /// False when the projection pinned at a polyline endpoint with a
    /// non-orthogonal residual (the point lies beyond the traced branch), or
    /// when the refinement ran out of iterations.
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) -> f64 {
    let n = norm(a);
    if n > 0.0 {
        for v in a.iter_mut() {
            *v /= n;
        }
    }
    n
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Projects `v` onto the span of orthonormal columns `basis` (in place when
/// a basis is given; identity otherwise).
fn project_into(v: &mut [f64], basis: Option<&[Vec<f64>]>) {
    if let Some(cols) = basis {
        let coeffs: Vec<f64> = cols.iter().map(|c| dot(v, c)).collect();
        for x in v.iter_mut() {
            *x = 0.0;
        }
        for (c, col) in coeffs.iter().zip(cols) {
            for (x, b) in v.iter_mut().zip(col) {
                *x += c * b;
            }
        }
    }
}

struct BranchStep {
    vertex: Vec<f64>,
    tangent: Vec<f64>,
}

/// Principal directions of the k-neighborhood of `x`, restricted to the
/// subspace when given. Returns (mean, directions desc. by variance,
/// variances); `None` when the branch must stop.
fn local_directions(
    set: &SampleSet,
    x: &[f64],
    k: usize,
    subspace: Option<&[Vec<f64>]>,
    tau: f64,
) -> Result<Option<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)>> {
    let d = set.dim();
    let neighbors = knn_query(set, x, k)?;
    let within = neighbors.iter().filter(|&&(_, dd)| dd <= 3.0 * tau).count();
    if within < d + 1 {
        return Ok(None);
    }
    let mut mean = vec![0.0; d];
    for &(i, _) in &neighbors {
        for (m, v) in mean.iter_mut().zip(set.point(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }

    match subspace {
        Some(cols) if cols.len() == 1 => {
            // one direction available: variance along it decides the stop
            let c = &cols[0];
            let mut var = 0.0;
            for &(i, _) in &neighbors {
                let p = set.point(i);
                let t: f64 = (0..d).map(|j| (p[j] - mean[j]) * c[j]).sum();
                var += t * t;
            }
            var /= (k - 1) as f64;
            if var <= 1e-14 {
                return Ok(None);
            }
            Ok(Some((mean, vec![c.clone()], vec![var])))
        }
        _ => {
            let m = subspace.map_or(d, |cols| cols.len());
            // covariance of residuals expressed in subspace coordinates
            let coords: Vec<Vec<f64>> = neighbors
                .iter()
                .map(|&(i, _)| {
                    let p = set.point(i);
                    match subspace {
                        Some(cols) => cols
                            .iter()
                            .map(|c| (0..d).map(|j| (p[j] - mean[j]) * c[j]).sum())
                            .collect(),
                        None => (0..d).map(|j| p[j] - mean[j]).collect(),
                    }
                })
                .collect();
            let mut cov = nalgebra::DMatrix::<f64>::zeros(m, m);
            for row in &coords {
                for a in 0..m {
                    for b in a..m {
                        cov[(a, b)] += row[a] * row[b];
                    }
                }
            }
            for a in 0..m {
                for b in a..m {
                    cov[(a, b)] /= (k - 1) as f64;
                    cov[(b, a)] = cov[(a, b)];
                }
            }
            let eig = cov.symmetric_eigen();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
            let top = eig.eigenvalues[order[0]];
            if top <= 1e-14 {
                return Ok(None);
            }
            let mut dirs = Vec::with_capacity(m);
            let mut vars = Vec::with_capacity(m);
            for &src in &order {
                let w = eig.eigenvectors.column(src);
                let dir: Vec<f64> = match subspace {
                    Some(cols) => {
                        let mut v = vec![0.0; d];
                        for (wi, col) in w.iter().zip(cols) {
                            for (vj, cj) in v.iter_mut().zip(col) {
                                *vj += wi * cj;
                            }
                        }
                        v
                    }
                    None => w.iter().copied().collect(),
                };
                dirs.push(dir);
                vars.push(eig.eigenvalues[src].max(0.0));
            }
            Ok(Some((mean, dirs, vars)))
        }
    }
}

fn trace_branch(
    set: &SampleSet,
    seed: &[f64],
    dir0: &[f64],
    subspace: Option<&[Vec<f64>]>,
    params: &CurveParams,
    k: usize,
) -> Result<Vec<BranchStep>> {
    let d = set.dim();
    let tau = params.tau;
    let mut x = seed.to_vec();
    let mut t = dir0.to_vec();
    let mut out: Vec<BranchStep> = Vec::new();

    for _ in 0..params.max_steps {
        let Some((mean, dirs, vars)) = local_directions(set, &x, k, subspace, tau)? else {
            break;
        };
        // principal direction most aligned with the running tangent
        let vmax = vars[0];
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for (j, dir) in dirs.iter().enumerate() {
            if vars[j] <= 1e-12 * vmax {
                continue;
            }
            let c = dot(dir, &t).abs();
            if c > best_cos {
                best_cos = c;
                best = j;
            }
        }
        let mut p = dirs[best].clone();
        if dot(&p, &t) < 0.0 {
            for v in &mut p {
                *v = -*v;
            }
        }
        let mut t_new: Vec<f64> = t
            .iter()
            .zip(&p)
            .map(|(ti, pi)| params.q * ti + pi)
            .collect();
        if normalize(&mut t_new) == 0.0 {
            break;
        }
        // recenter toward the neighborhood mean, capped so steps stay in
        // (0, 2 tau]; motion restricted to the subspace when given
        let mut shift: Vec<f64> = mean.iter().zip(&x).map(|(m, xi)| m - xi).collect();
        project_into(&mut shift, subspace);
        let sn = norm(&shift);
        if sn > 0.9 * tau {
            let f = 0.9 * tau / sn;
            for s in &mut shift {
                *s *= f;
            }
        }
        let v_new: Vec<f64> = (0..d)
            .map(|j| x[j] + shift[j] + tau * t_new[j])
            .collect();
        // retraction stop: the step collapsed back onto the traced path
        let retracts = dist(&v_new, seed) < 0.25 * tau
            || out.iter().any(|s| dist(&v_new, &s.vertex) < 0.25 * tau);
        if retracts {
            break;
        }
        out.push(BranchStep {
            vertex: v_new.clone(),
            tangent: t_new.clone(),
        });
        x = v_new;
        t = t_new;
    }
    Ok(out)
}

/// Traces a principal curve through `set` from `seed` along
/// `init_direction`, both ways, optionally restricted to an orthonormal
/// `subspace`.
pub fn trace_curve(
    set: &SampleSet,
    seed: &[f64],
    init_direction: &[f64],
    subspace: Option<&[Vec<f64>]>,
    params: &CurveParams,
) -> Result<PrincipalCurve> {
    params.validate()?;
    let d = set.dim();
    if seed.len() != d || init_direction.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: seed.len().max(init_direction.len()),
        });
    }
    if (norm(init_direction) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter {
            name: "init_direction",
            reason: "must have unit norm".into(),
        });
    }
    if let Some(cols) = subspace {
        if cols.is_empty() || cols.len() > d {
            return Err(Error::InvalidParameter {
                name: "subspace",
                reason: format!("basis must have 1..={d} columns"),
            });
        }
        for (i, a) in cols.iter().enumerate() {
            if a.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: a.len(),
                });
            }
            for (j, b) in cols.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(a, b) - want).abs() > 1e-9 {
                    return Err(Error::InvalidParameter {
                        name: "subspace",
                        reason: "basis must be orthonormal".into(),
                    });
                }
            }
        }
        let mut proj = init_direction.to_vec();
        project_into(&mut proj, subspace);
        if dist(&proj, init_direction) > 1e-6 {
            return Err(Error::InvalidParameter {
                name: "init_direction",
                reason: "must lie in the given subspace".into(),
            });
        }
    }

    let k = params.neighbor_count(set.len(), d);
    let plus = trace_branch(set, seed, init_direction, subspace, params, k)?;
    let neg_dir: Vec<f64> = init_direction.iter().map(|v| -v).collect();
    let minus = trace_branch(set, seed, &neg_dir, subspace, params, k)?;

    let total = plus.len() + minus.len() + 1;
    if total < 2 {
        return Err(Error::DegenerateCurve(
            "both branches stopped at the seed".into(),
        ));
    }

    let mut vertices = Vec::with_capacity(total);
    let mut tangents = Vec::with_capacity(total);
    let mut direction_sign = Vec::with_capacity(total);
    for step in minus.iter().rev() {
        vertices.push(step.vertex.clone());
        // tangents always point toward increasing arc
        tangents.push(step.tangent.iter().map(|v| -v).collect());
        direction_sign.push(-1);
    }
    let seed_index = minus.len();
    vertices.push(seed.to_vec());
    tangents.push(init_direction.to_vec());
    direction_sign.push(1);
    for step in &plus {
        vertices.push(step.vertex.clone());
        tangents.push(step.tangent.clone());
        direction_sign.push(1);
    }

    let mut arc = vec![0.0; total];
    for i in (0..seed_index).rev() {
        arc[i] = arc[i + 1] - dist(&vertices[i], &vertices[i + 1]);
    }
    for i in seed_index + 1..total {
        arc[i] = arc[i - 1] + dist(&vertices[i], &vertices[i - 1]);
    }

    Ok(PrincipalCurve {
        vertices,
        tangents,
        arc,
        direction_sign,
        seed_index,
        params: *params,
    })
}

impl PrincipalCurve {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i]
    }

    pub fn tangent(&self, i: usize) -> &[f64] {
        &self.tangents[i]
    }

    pub fn arc(&self, i: usize) -> f64 {
        self.arc[i]
    }

    pub fn arcs(&self) -> &[f64] {
        &self.arc
    }

    pub fn direction_sign(&self, i: usize) -> i8 {
        self.direction_sign[i]
    }

    pub fn seed_index(&self) -> usize {
        self.seed_index
    }

    pub fn seed(&self) -> &[f64] {
        &self.vertices[self.seed_index]
    }

    pub fn params(&self) -> &CurveParams {
        &self.params
    }

    pub fn arc_range(&self) -> (f64, f64) {
        (self.arc[0], self.arc[self.arc.len() - 1])
    }

    /// Index of the segment containing arc position `s` (clamped).
    fn segment_of(&self, s: f64) -> usize {
        let n = self.arc.len();
        if s <= self.arc[0] {
            return 0;
        }
        if s >= self.arc[n - 1] {
            return n - 2;
        }
        let idx = self.arc.partition_point(|&a| a <= s);
        idx.saturating_sub(1).min(n - 2)
    }

    /// Point on the polyline at signed arc position `s` (clamped to the
    /// traced range).
    pub fn point_at_arc(&self, s: f64) -> Vec<f64> {
        let j = self.segment_of(s);
        let (a0, a1) = (self.arc[j], self.arc[j + 1]);
        let t = ((s - a0) / (a1 - a0)).clamp(0.0, 1.0);
        self.vertices[j]
            .iter()
            .zip(&self.vertices[j + 1])
            .map(|(p, q)| p + t * (q - p))
            .collect()
    }

    /// Unit tangent at arc position `s`, interpolated between vertex
    /// tangents.
    pub fn tangent_at_arc(&self, s: f64) -> Vec<f64> {
        let j = self.segment_of(s);
        let (a0, a1) = (self.arc[j], self.arc[j + 1]);
        let t = ((s - a0) / (a1 - a0)).clamp(0.0, 1.0);
        let mut v: Vec<f64> = self.tangents[j]
            .iter()
            .zip(&self.tangents[j + 1])
            .map(|(p, q)| p + t * (q - p))
            .collect();
        if normalize(&mut v) == 0.0 {
            v = self.tangents[j].clone();
        }
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

const MAX_PROJECT_ITERS: usize = 20;
const ORTHO_TOL: f64 = 1e-6;

/// Projects `x` onto the curve: nearest-segment initialization followed by a
/// damped fixed-point refinement that moves along the interpolated tangent
/// until the residual is orthogonal to it.
pub fn geodesic_project(curve: &PrincipalCurve, x: &[f64]) -> GeodesicProjection {
    debug_assert!(curve.len() >= 2, "geodesic_project needs >= 2 vertices");
    let n = curve.len();
    if n < 2 {
        return GeodesicProjection {
            point: curve.vertices[0].clone(),
            arc_position: curve.arc[0],
            segment_index: 0,
            converged: false,
        };
    }

    // nearest orthogonal projection over all segments, ties to lower index
    let mut best = (f64::INFINITY, 0usize, 0.0f64);
    for j in 0..n - 1 {
        let a = &curve.vertices[j];
        let b = &curve.vertices[j + 1];
        let seg: Vec<f64> = b.iter().zip(a.iter()).map(|(q, p)| q - p).collect();
        let len2 = dot(&seg, &seg);
        let diff: Vec<f64> = x.iter().zip(a.iter()).map(|(q, p)| q - p).collect();
        let t = (dot(&diff, &seg) / len2).clamp(0.0, 1.0);
        let p: Vec<f64> = a.iter().zip(&seg).map(|(ai, si)| ai + t * si).collect();
        let d2 = x
            .iter()
            .zip(&p)
            .map(|(q, pi)| (q - pi) * (q - pi))
            .sum::<f64>();
        if d2 < best.0 {
            best = (d2, j, curve.arc[j] + t * (curve.arc[j + 1] - curve.arc[j]));
        }
    }
    let s_init = best.2;
    let (arc_min, arc_max) = curve.arc_range();

    let mut s = s_init;
    let mut settled = false;
    let mut orthogonal = false;
    for _ in 0..MAX_PROJECT_ITERS {
        let p = curve.point_at_arc(s);
        let residual: Vec<f64> = x.iter().zip(&p).map(|(q, pi)| q - pi).collect();
        let res_norm = norm(&residual);
        if res_norm < 1e-12 {
            settled = true;
            orthogonal = true;
            break;
        }
        let tang = curve.tangent_at_arc(s);
        let along = dot(&residual, &tang);
        if (along / res_norm).abs() <= ORTHO_TOL {
            settled = true;
            orthogonal = true;
            break;
        }
        // backtracking step along the tangent: accept only if the distance
        // shrinks, so kinked segments cannot cause oscillation
        let cur_d2 = res_norm * res_norm;
        let mut step = along;
        let mut accepted = false;
        for _ in 0..8 {
            let s2 = (s + step).clamp(arc_min, arc_max);
            if (s2 - s).abs() < 1e-14 {
                break;
            }
            let p2 = curve.point_at_arc(s2);
            let d2 = x
                .iter()
                .zip(&p2)
                .map(|(q, pi)| (q - pi) * (q - pi))
                .sum::<f64>();
            if d2 < cur_d2 {
                s = s2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // pinned at a local minimum (vertex wedge or polyline endpoint)
            settled = true;
            break;
        }
    }

    if !settled {
        s = s_init;
    }
    let at_boundary = s <= arc_min + 1e-12 || s >= arc_max - 1e-12;
    let converged = settled && (orthogonal || !at_boundary);
    let point = curve.point_at_arc(s);
    GeodesicProjection {
        point,
        arc_position: s,
        segment_index: curve.segment_of(s),
        converged,
    }
}

/// Density-weighted length measure along a traced curve.
///
/// The marginal along the curve is the kNN density of the arc positions of
/// the set's converged geodesic projections, sampled at the polyline
/// vertices; the measure integrates `density^gamma` with a per-segment
/// trapezoid, which makes it exactly additive and strictly monotone.
#[derive(Debug, Clone)]
pub struct WeightedArc {
    arc: Vec<f64>,
    seg_weight: Vec<f64>,
    cum: Vec<f64>,
    gamma: f64,
}

impl WeightedArc {
    pub fn new(curve: &PrincipalCurve, set: &SampleSet, k: usize, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be >= 0, got {gamma}"),
            });
        }
        let marginal = projected_marginal(curve, set)?;
        Self::from_marginal(curve, &marginal, k, gamma)
    }

    /// Builds the measure from a precomputed marginal of projected arc
    /// positions (the cached density snapshot).
    pub fn from_marginal(
        curve: &PrincipalCurve,
        marginal: &Marginal1d,
        k: usize,
        gamma: f64,
    ) -> Result<Self> {
        let k = k.clamp(1, marginal.len());
        let n = curve.len();
        let mut dens = Vec::with_capacity(n);
        for i in 0..n {
            dens.push(marginal.density_at(curve.arc(i), k)?.density);
        }
        let mut seg_weight = Vec::with_capacity(n - 1);
        let mut cum = Vec::with_capacity(n);
        cum.push(0.0);
        for j in 0..n - 1 {
            let w = if gamma == 0.0 {
                1.0
            } else {
                0.5 * (dens[j].powf(gamma) + dens[j + 1].powf(gamma))
            };
            seg_weight.push(w);
            cum.push(cum[j] + (curve.arc(j + 1) - curve.arc(j)) * w);
        }
        Ok(Self {
            arc: curve.arcs().to_vec(),
            seg_weight,
            cum,
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn arc_range(&self) -> (f64, f64) {
        (self.arc[0], self.arc[self.arc.len() - 1])
    }

    /// Total weighted length of the traced polyline.
    pub fn total(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    /// Cumulative weighted length from the start of the polyline to arc `s`.
    pub fn measure_from_start(&self, s: f64) -> Result<f64> {
        let n = self.arc.len();
        let (lo, hi) = self.arc_range();
        if s < lo - 1e-9 || s > hi + 1e-9 {
            return Err(Error::ArcOutOfRange {
                requested: s,
                min: lo,
                max: hi,
            });
        }
        let s = s.clamp(lo, hi);
        let idx = self.arc.partition_point(|&a| a <= s);
        let j = idx.saturating_sub(1).min(n - 2);
        Ok(self.cum[j] + (s - self.arc[j]) * self.seg_weight[j])
    }

    /// Signed weighted length between two arc positions.
    pub fn measure(&self, from_arc: f64, to_arc: f64) -> Result<f64> {
        if self.gamma == 0.0 {
            // Euclidean arc difference, exact
            let (lo, hi) = self.arc_range();
            for &s in &[from_arc, to_arc] {
                if s < lo - 1e-9 || s > hi + 1e-9 {
                    return Err(Error::ArcOutOfRange {
                        requested: s,
                        min: lo,
                        max: hi,
                    });
                }
            }
            return Ok(to_arc - from_arc);
        }
        Ok(self.measure_from_start(to_arc)? - self.measure_from_start(from_arc)?)
    }

    /// Inverts the measure: the arc position whose weighted distance from
    /// `from_arc` equals `target`, by monotone bisection.
    pub fn solve_arc(&self, from_arc: f64, target: f64, tol: f64) -> Result<f64> {
        if target == 0.0 {
            return Ok(from_arc);
        }
        let w0 = self.measure_from_start(from_arc)?;
        let want = w0 + target;
        let (lo_arc, hi_arc) = self.arc_range();
        let wtot = self.total();
        if want < -tol || want > wtot + tol {
            return Err(Error::ResponseOutOfRange {
                dim: 0,
                requested: target,
                reachable_min: -w0,
                reachable_max: wtot - w0,
            });
        }
        let (mut lo, mut hi) = (lo_arc, hi_arc);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let w = self.measure_from_start(mid)?;
            if (w - want).abs() <= tol {
                return Ok(mid);
            }
            if w < want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Sorted arc positions of the converged geodesic projections of every point
/// of `set` onto `curve` — the density snapshot shared by all weighted
/// measures over one (curve, set) pair.
pub fn projected_marginal(curve: &PrincipalCurve, set: &SampleSet) -> Result<Marginal1d> {
    let mut arcs = Vec::with_capacity(set.len());
    for p in set.points() {
        let proj = geodesic_project(curve, p);
        if proj.converged {
            arcs.push(proj.arc_position);
        }
    }
    if arcs.len() < 2 {
        return Err(Error::DegenerateSample(
            "fewer than 2 converged projections onto the curve".into(),
        ));
    }
    Marginal1d::new(&arcs)
}

/// One-shot weighted length between two arc positions (builds the density
/// snapshot; use [`WeightedArc`] directly for repeated queries).
pub fn weighted_length(
    curve: &PrincipalCurve,
    set: &SampleSet,
    gamma: f64,
    k: usize,
    from_arc: f64,
    to_arc: f64,
) -> Result<f64> {
    WeightedArc::new(curve, set, k, gamma)?.measure(from_arc, to_arc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_set(n: usize, lo: f64, hi: f64) -> SampleSet {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64, 0.0])
            .collect();
        SampleSet::new(pts).unwrap()
    }

    fn params() -> CurveParams {
        CurveParams {
            k_fraction: 0.1,
            tau: 0.5,
            q: 2.0,
            max_steps: 200,
        }
    }

    #[test]
    fn params_validation() {
        let mut p = params();
        p.tau = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.k_fraction = 1.5;
        assert!(p.validate().is_err());
        let mut p = params();
        p.q = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn curve_invariants_on_a_line() {
        let set = line_set(500, -10.0, 10.0);
        let c = trace_curve(&set, &[0.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        assert!(c.len() >= 10);
        let tau = params().tau;
        for i in 1..c.len() {
            let step = dist(c.vertex(i), c.vertex(i - 1));
            assert!(step > 0.0 && step <= 2.0 * tau + 1e-12, "step {step}");
            assert!(c.arc(i) > c.arc(i - 1));
        }
        for i in 0..c.len() {
            assert!((norm(c.tangent(i)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(c.arc(c.seed_index()), 0.0);
        assert_eq!(c.direction_sign(0), -1);
        assert_eq!(c.direction_sign(c.len() - 1), 1);
    }

    #[test]
    fn subspace_constrains_motion_exactly() {
        // axis-aligned 2-D Gaussian-ish cloud; restrict motion to e2
        let pts: Vec<Vec<f64>> = (0..800)
            .map(|i| {
                let a = i as f64 * 0.7368239;
                vec![3.0 * (a.sin() * 1.3).sin(), (a * 1.71).cos()]
            })
            .collect();
        let set = SampleSet::new(pts).unwrap();
        let sub = vec![vec![0.0, 1.0]];
        let seed = [0.4, 0.0];
        let c = trace_curve(&set, &seed, &[0.0, 1.0], Some(&sub), &params()).unwrap();
        for i in 0..c.len() {
            assert!(
                (c.vertex(i)[0] - seed[0]).abs() < 1e-9,
                "transverse drift at vertex {i}"
            );
        }
    }

    #[test]
    fn rejects_non_unit_direction() {
        let set = line_set(100, 0.0, 1.0);
        assert!(trace_curve(&set, &[0.5, 0.0], &[2.0, 0.0], None, &params()).is_err());
    }

    #[test]
    fn rejects_direction_outside_subspace() {
        let set = line_set(100, 0.0, 1.0);
        let sub = vec![vec![0.0, 1.0]];
        assert!(trace_curve(&set, &[0.5, 0.0], &[1.0, 0.0], Some(&sub), &params()).is_err());
    }

    #[test]
    fn projects_onto_straight_line() {
        let set = line_set(500, -10.0, 10.0);
        let c = trace_curve(&set, &[0.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let proj = geodesic_project(&c, &[3.0, 4.0]);
        assert!(proj.converged);
        assert!((proj.point[0] - 3.0).abs() < 1e-6);
        assert!(proj.point[1].abs() < 1e-9);
        assert!((proj.arc_position - 3.0).abs() < 1e-6);
    }

    #[test]
    fn projecting_a_vertex_is_a_fixed_point() {
        let set = line_set(500, -10.0, 10.0);
        let c = trace_curve(&set, &[0.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let v = c.vertex(c.len() / 3).to_vec();
        let proj = geodesic_project(&c, &v);
        assert!(proj.converged);
        assert!(dist(&proj.point, &v) < 1e-9);
        let again = geodesic_project(&c, &proj.point);
        assert!((again.arc_position - proj.arc_position).abs() < 1e-9);
    }

    #[test]
    fn projection_beyond_the_end_is_flagged() {
        let set = line_set(500, -10.0, 10.0);
        let c = trace_curve(&set, &[0.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let (_, hi) = c.arc_range();
        let proj = geodesic_project(&c, &[hi + 50.0, 0.5]);
        assert!(!proj.converged);
        assert!((proj.arc_position - hi).abs() < 1e-9);
    }

    #[test]
    fn weighted_length_gamma_zero_is_arc_difference() {
        let set = line_set(2000, 0.0, 10.0);
        let c = trace_curve(&set, &[5.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let (lo, hi) = c.arc_range();
        let a = lo * 0.5;
        let b = hi * 0.7;
        let w = weighted_length(&c, &set, 0.0, 50, a, b).unwrap();
        assert_eq!(w, b - a);
        let back = weighted_length(&c, &set, 0.0, 50, b, a).unwrap();
        assert_eq!(back, a - b);
    }

    #[test]
    fn weighted_length_empty_interval_is_zero() {
        let set = line_set(500, 0.0, 10.0);
        let c = trace_curve(&set, &[5.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let w = weighted_length(&c, &set, 1.0, 30, 1.25, 1.25).unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn weighted_length_rejects_out_of_range_arcs() {
        let set = line_set(500, 0.0, 10.0);
        let c = trace_curve(&set, &[5.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let (_, hi) = c.arc_range();
        assert!(matches!(
            weighted_length(&c, &set, 1.0, 30, 0.0, hi + 1.0),
            Err(Error::ArcOutOfRange { .. })
        ));
    }

    #[test]
    fn solve_arc_inverts_measure() {
        let set = line_set(2000, 0.0, 10.0);
        let c = trace_curve(&set, &[5.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let wa = WeightedArc::new(&c, &set, 100, 1.0).unwrap();
        let target = wa.measure(-2.0, 1.5).unwrap();
        let s = wa.solve_arc(-2.0, target, 1e-9).unwrap();
        assert!((s - 1.5).abs() < 1e-6, "s = {s}");
    }

    #[test]
    fn solve_arc_reports_reachable_range() {
        let set = line_set(2000, 0.0, 10.0);
        let c = trace_curve(&set, &[5.0, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let wa = WeightedArc::new(&c, &set, 100, 1.0).unwrap();
        let err = wa.solve_arc(0.0, wa.total() * 2.0, 1e-9).unwrap_err();
        assert!(matches!(err, Error::ResponseOutOfRange { .. }));
    }

    #[test]
    fn curve_json_roundtrip() {
        let set = line_set(300, 0.0, 5.0);
        let c = trace_curve(&set, &[2.5, 0.0], &[1.0, 0.0], None, &params()).unwrap();
        let js = c.to_json().unwrap();
        assert!(js.contains("arc_length"));
        let back = PrincipalCurve::from_json(&js).unwrap();
        assert_eq!(back.len(), c.len());
        assert_eq!(back.vertex(0), c.vertex(0));
    }
}
