//! The fitted transform: initialization (origin, dimension order, scales),
//! the sequential direct transform, the exact inverse, and finite-difference
//! Jacobian extraction.
//!
//! Fitting picks an origin, draws d locally orthogonal principal curves
//! there, orders the curvilinear dimensions by descending marginal entropy,
//! and sets the per-dimension scales by the classical transform-coding bit
//! allocation (normalized so their product is one). A transform then walks
//! the curve sequence: project, measure the density-weighted length, move to
//! the projection, repeat in the locally orthogonal subspace.
//!
//! Higher-order curves depend on the query's branch point and are memoized
//! under a quantized key (seed snapped to a tau/2 grid, subspace directions
//! rounded), so every cached curve is a pure function of its key and results
//! never depend on cache state or thread interleaving.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{
    geodesic_project, local_directions, projected_marginal, trace_curve, CurveParams,
    PrincipalCurve, WeightedArc,
};
use crate::error::{Error, Result};
use crate::manifold::{knn_radius, local_pca_frame, marginal_entropy_1d};
use crate::sample::SampleSet;

/// Default fraction of the sample used for the 1-D marginal densities along
/// curves. Smaller than the curve-tracing neighborhoods: length measures
/// need sharper marginals than tangent estimates.
pub const DEFAULT_K_FRACTION_DENSITY: f64 = 0.05;

/// How the coordinate origin is chosen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub enum OriginMode {
    /// The training sample maximizing the d-dimensional kNN density.
    Mode,
    /// The training mean.
    Mean,
    /// A user-supplied point.
    User(Vec<f64>),
}

/// The d-dimensional nonlinear response `r = R(x)`; the canonical,
/// environment-invariant representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVector {
    pub r: Vec<f64>,
    /// Per-dimension convergence: false when a geodesic projection pinned at
    /// a branch end or the final residual exceeded the reconstruction
    /// tolerance.
    pub converged: Vec<bool>,
}

impl ResponseVector {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub gamma: f64,
    pub curve_params: CurveParams,
    pub origin_mode: OriginMode,
    pub k_fraction_density: f64,
}

/// A traced curve together with its density-weighted length measure.
pub(crate) struct LevelCurve {
    pub curve: PrincipalCurve,
    pub warc: WeightedArc,
}

const DIR_QUANTUM: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CurveKey {
    level: usize,
    cell: Vec<i64>,
    dirs: Vec<Vec<i64>>,
}

impl CurveKey {
    fn new(level: usize, point: &[f64], dirs: &[Vec<f64>], half_tau: f64) -> Self {
        Self {
            level,
            cell: point.iter().map(|c| (c / half_tau).round() as i64).collect(),
            dirs: dirs
                .iter()
                .map(|v| v.iter().map(|c| (c / DIR_QUANTUM).round() as i64).collect())
                .collect(),
        }
    }

    fn seed(&self, half_tau: f64) -> Vec<f64> {
        self.cell.iter().map(|&c| c as f64 * half_tau).collect()
    }

    fn decoded_dirs(&self) -> Vec<Vec<f64>> {
        let raw: Vec<Vec<f64>> = self
            .dirs
            .iter()
            .map(|v| v.iter().map(|&c| c as f64 * DIR_QUANTUM).collect())
            .collect();
        orthonormalize(&raw)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gram-Schmidt, dropping near-dependent vectors.
fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut u = v.clone();
        for b in &out {
            let c = dot(&u, b);
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= c * bi;
            }
        }
        let n = dot(&u, &u).sqrt();
        if n > 1e-8 {
            for ui in &mut u {
                *ui /= n;
            }
            out.push(u);
        }
    }
    out
}

/// Orthonormal basis of the subspace orthogonal to `dirs`.
fn orthonormal_complement(dirs: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    if dirs.is_empty() {
        return (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
    }
    let mut projector = DMatrix::<f64>::identity(d, d);
    for v in dirs {
        for a in 0..d {
            for b in 0..d {
                projector[(a, b)] -= v[a] * v[b];
            }
        }
    }
    let eig = projector.symmetric_eigen();
    let mut cols: Vec<(f64, Vec<f64>)> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut imax = 0;
            for r in 1..d {
                if v[r].abs() > v[imax].abs() {
                    imax = r;
                }
            }
            if v[imax] < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
            (eig.eigenvalues[i], v)
        })
        .collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));
    orthonormalize(&cols.into_iter().map(|(_, v)| v).collect::<Vec<_>>())
}

#[derive(Serialize, Deserialize)]
struct TrainingRef {
    path: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    gamma: f64,
    origin: Vec<f64>,
    /// 1-based permutation, first visited dimension first.
    dim_order: Vec<usize>,
    scales: Vec<f64>,
    curve_params: CurveParams,
    k_fraction_density: f64,
    training_ref: TrainingRef,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<String>,
}

/// A fitted SPCA transform over one training environment.
pub struct SpcaModel {
    training: Arc<SampleSet>,
    gamma: f64,
    origin: Vec<f64>,
    dim_order: Vec<usize>,
    scales: Vec<f64>,
    curve_params: CurveParams,
    k_fraction_density: f64,
    frame_dirs: Vec<Vec<f64>>,
    first: Arc<LevelCurve>,
    k_curve: usize,
    k_density: usize,
    support_limit: f64,
    recon_tol: f64,
    cache: RwLock<HashMap<CurveKey, Arc<LevelCurve>>>,
    response_iqr: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for SpcaModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpcaModel")
            .field("gamma", &self.gamma)
            .field("dim", &self.training.dim())
            .field("n", &self.training.len())
            .field("origin", &self.origin)
            .field("dim_order", &self.dim_order)
            .field("scales", &self.scales)
            .finish_non_exhaustive()
    }
}

impl SpcaModel {
    /// Fits a model with the default density fraction.
    pub fn fit(
        set: SampleSet,
        gamma: f64,
        curve_params: CurveParams,
        origin_mode: OriginMode,
    ) -> Result<Self> {
        Self::fit_with(
            set,
            FitOptions {
                gamma,
                curve_params,
                origin_mode,
                k_fraction_density: DEFAULT_K_FRACTION_DENSITY,
            },
        )
    }

    pub fn fit_with(set: SampleSet, opts: FitOptions) -> Result<Self> {
        let d = set.dim();
        let n = set.len();
        opts.curve_params.validate()?;
        if !(opts.gamma >= 0.0 && opts.gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be >= 0, got {}", opts.gamma),
            });
        }
        if !(opts.k_fraction_density > 0.0 && opts.k_fraction_density <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "k_fraction_density",
                reason: format!("must be in (0, 1], got {}", opts.k_fraction_density),
            });
        }
        if n < 10 * d {
            return Err(Error::InvalidParameter {
                name: "set",
                reason: format!("need at least 10*d = {} samples, got {n}", 10 * d),
            });
        }
        check_full_rank(&set)?;

        let k_curve = opts.curve_params.neighbor_count(n, d);
        let origin = match &opts.origin_mode {
            OriginMode::Mean => set.mean(),
            OriginMode::User(p) => {
                if p.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: p.len(),
                    });
                }
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "origin",
                        reason: "non-finite origin".into(),
                    });
                }
                p.clone()
            }
            OriginMode::Mode => {
                // densest sample = smallest k-th neighbor radius
                let mut best = (f64::INFINITY, 0usize);
                for (i, p) in set.points().iter().enumerate() {
                    let r = knn_radius(&set, p, k_curve)?;
                    if r < best.0 {
                        best = (r, i);
                    }
                }
                set.point(best.1).to_vec()
            }
        };

        let frame = local_pca_frame(&set, &origin, k_curve)?;
        let frame_dirs: Vec<Vec<f64>> = (0..d).map(|j| frame.direction(j)).collect();
        let k_density = ((opts.k_fraction_density * n as f64).round() as usize)
            .max(2)
            .min(n);

        let (dim_order, scales, first_probe) = if d == 1 {
            (vec![0usize], vec![1.0], None)
        } else {
            let mut entropies = Vec::with_capacity(d);
            let mut sigmas = Vec::with_capacity(d);
            let mut probe0 = None;
            for j in 0..d {
                let sub = if j == 0 {
                    None
                } else {
                    Some(orthonormal_complement(&frame_dirs[..j], d))
                };
                let curve = trace_curve(
                    &set,
                    &origin,
                    &frame_dirs[j],
                    sub.as_deref(),
                    &opts.curve_params,
                )?;
                let marginal = projected_marginal(&curve, &set)?;
                entropies.push(marginal_entropy_1d(marginal.values())?);
                let vals = marginal.values();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64;
                sigmas.push(var.sqrt());
                if j == 0 {
                    let warc =
                        WeightedArc::from_marginal(&curve, &marginal, k_density, opts.gamma)?;
                    probe0 = Some(LevelCurve { curve, warc });
                }
            }
            for (j, &s) in sigmas.iter().enumerate() {
                if !(s > 0.0) {
                    return Err(Error::DegenerateData { dimension: j });
                }
            }
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| entropies[b].total_cmp(&entropies[a]).then(a.cmp(&b)));
            let geomean = (sigmas.iter().map(|s| s.ln()).sum::<f64>() / d as f64).exp();
            let scales: Vec<f64> = order.iter().map(|&j| sigmas[j] / geomean).collect();
            let first_probe = if order[0] == 0 { probe0 } else { None };
            (order, scales, first_probe)
        };

        Self::assemble(
            Arc::new(set),
            opts.gamma,
            opts.curve_params,
            opts.k_fraction_density,
            origin,
            dim_order,
            scales,
            first_probe,
        )
    }

    /// Builds the runtime state shared by `fit` and `load_json`: the origin
    /// frame, the first curve with its measure, and the support statistics.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        training: Arc<SampleSet>,
        gamma: f64,
        curve_params: CurveParams,
        k_fraction_density: f64,
        origin: Vec<f64>,
        dim_order: Vec<usize>,
        scales: Vec<f64>,
        first_probe: Option<LevelCurve>,
    ) -> Result<Self> {
        let d = training.dim();
        let n = training.len();
        let k_curve = curve_params.neighbor_count(n, d);
        let k_density = ((k_fraction_density * n as f64).round() as usize)
            .max(2)
            .min(n);
        let frame = local_pca_frame(&training, &origin, k_curve)?;
        let frame_dirs: Vec<Vec<f64>> = (0..d).map(|j| frame.direction(j)).collect();

        let first = match first_probe {
            Some(lc) => lc,
            None => {
                let curve = trace_curve(
                    &training,
                    &origin,
                    &frame_dirs[dim_order[0]],
                    None,
                    &curve_params,
                )?;
                let marginal = projected_marginal(&curve, &training)?;
                let warc = WeightedArc::from_marginal(&curve, &marginal, k_density, gamma)?;
                LevelCurve { curve, warc }
            }
        };

        // support limit: 3x the median kNN radius over a strided subsample
        let probe_pts = training.stride_subsample(512);
        let mut radii: Vec<f64> = probe_pts
            .iter()
            .map(|p| knn_radius(&training, p, k_curve))
            .collect::<Result<_>>()?;
        radii.sort_unstable_by(f64::total_cmp);
        let support_limit = 3.0 * radii[radii.len() / 2];
        let recon_tol = 0.05 * training.rms_scale();

        Ok(Self {
            training,
            gamma,
            origin,
            dim_order,
            scales,
            curve_params,
            k_fraction_density,
            frame_dirs,
            first: Arc::new(first),
            k_curve,
            k_density,
            support_limit,
            recon_tol,
            cache: RwLock::new(HashMap::new()),
            response_iqr: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Visit order of the curvilinear dimensions (0-based frame indices).
    pub fn dim_order(&self) -> &[usize] {
        &self.dim_order
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn curve_params(&self) -> &CurveParams {
        &self.curve_params
    }

    pub fn k_fraction_density(&self) -> f64 {
        self.k_fraction_density
    }

    pub fn training(&self) -> &SampleSet {
        &self.training
    }

    /// The first principal curve (traced once per model).
    pub fn first_curve(&self) -> &PrincipalCurve {
        &self.first.curve
    }

    /// Locally orthogonal directions at the origin, descending local
    /// variance.
    pub fn frame_directions(&self) -> &[Vec<f64>] {
        &self.frame_dirs
    }

    /// A point is in-support when its kNN radius does not exceed 3x the
    /// training median.
    pub fn is_in_support(&self, x: &[f64]) -> Result<bool> {
        Ok(knn_radius(&self.training, x, self.k_curve)? <= self.support_limit)
    }

    fn check_support(&self, x: &[f64]) -> Result<()> {
        let radius = knn_radius(&self.training, x, self.k_curve)?;
        if radius > self.support_limit {
            return Err(Error::OutOfSupport {
                radius,
                limit: self.support_limit,
            });
        }
        Ok(())
    }

    /// Curve for `level` branching at `point` with the tangents of the
    /// previous curves removed. Level 0 is the shared first curve; deeper
    /// levels are memoized under a quantized key and traced from the
    /// quantized data, so the result is a pure function of the key.
    fn level_curve(
        &self,
        level: usize,
        point: &[f64],
        prev_dirs: &[Vec<f64>],
    ) -> Result<Arc<LevelCurve>> {
        if level == 0 {
            return Ok(self.first.clone());
        }
        let half_tau = 0.5 * self.curve_params.tau;
        let key = CurveKey::new(level, point, prev_dirs, half_tau);
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let d = self.dim();
        let seed = key.seed(half_tau);
        let removed = key.decoded_dirs();
        let subspace = orthonormal_complement(&removed, d);
        if subspace.len() != d - removed.len() {
            return Err(Error::DegenerateCurve(format!(
                "complement at level {level} has dimension {}",
                subspace.len()
            )));
        }
        let init = self.subspace_init_direction(level, &seed, &subspace)?;
        let curve = trace_curve(
            &self.training,
            &seed,
            &init,
            Some(&subspace),
            &self.curve_params,
        )?;
        let marginal = projected_marginal(&curve, &self.training)?;
        let warc = WeightedArc::from_marginal(&curve, &marginal, self.k_density, self.gamma)?;
        let lc = Arc::new(LevelCurve { curve, warc });
        let mut guard = self.cache.write().unwrap();
        let entry = guard.entry(key).or_insert_with(|| lc.clone());
        Ok(entry.clone())
    }

    /// Initial direction of a deeper curve: the top local principal
    /// direction within the subspace, oriented along the origin frame
    /// direction of the dimension visited at this level.
    fn subspace_init_direction(
        &self,
        level: usize,
        seed: &[f64],
        subspace: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let found = local_directions(
            &self.training,
            seed,
            self.k_curve,
            Some(subspace),
            self.curve_params.tau,
        )?;
        let Some((_, dirs, _)) = found else {
            return Err(Error::DegenerateCurve(format!(
                "no usable neighborhood at the level-{level} branch point"
            )));
        };
        let mut init = dirs[0].clone();
        let anchor = &self.frame_dirs[self.dim_order[level]];
        let a = dot(&init, anchor);
        let flip = if a.abs() > 1e-9 {
            a < 0.0
        } else {
            // anchor orthogonal to the whole subspace: positive-max-entry
            let mut imax = 0;
            for (i, v) in init.iter().enumerate() {
                if v.abs() > init[imax].abs() {
                    imax = i;
                }
            }
            init[imax] < 0.0
        };
        if flip {
            for v in &mut init {
                *v = -*v;
            }
        }
        Ok(init)
    }

    /// Sequential response of the model at `x`.
    pub fn transform(&self, x: &[f64]) -> Result<ResponseVector> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        self.check_support(x)?;
        let mut cur = self.origin.clone();
        let mut prev_dirs: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut r = Vec::with_capacity(d);
        let mut converged = Vec::with_capacity(d);
        for level in 0..d {
            let lc = self.level_curve(level, &cur, &prev_dirs)?;
            let from = geodesic_project(&lc.curve, &cur);
            let to = geodesic_project(&lc.curve, x);
            let w = if to.arc_position == from.arc_position {
                0.0
            } else {
                lc.warc.measure(from.arc_position, to.arc_position)?
            };
            r.push(self.scales[level] * w);
            converged.push(from.converged && to.converged);
            prev_dirs.push(lc.curve.tangent_at_arc(to.arc_position));
            cur = to.point;
        }
        if dist(&cur, x) > self.recon_tol {
            if let Some(last) = converged.last_mut() {
                *last = false;
            }
        }
        Ok(ResponseVector { r, converged })
    }

    /// Transforms a batch of points in parallel; output order matches input.
    pub fn transform_batch(&self, points: &[Vec<f64>]) -> Vec<Result<ResponseVector>> {
        points.par_iter().map(|p| self.transform(p)).collect()
    }

    /// Inverts a response by walking the same curve sequence and advancing
    /// along each curve until the accumulated weighted length matches the
    /// response component (monotone bisection, tolerance 1e-6 in response
    /// units).
    pub fn inverse(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.inverse_inner(r, false).map(|(x, _)| x)
    }

    /// Like [`inverse`](Self::inverse) but clamps unreachable components to
    /// the end of the traced branch instead of failing; the flag reports
    /// whether any component was clamped.
    pub fn inverse_clamped(&self, r: &[f64]) -> Result<(Vec<f64>, bool)> {
        self.inverse_inner(r, true)
    }

    fn inverse_inner(&self, r: &[f64], clamp: bool) -> Result<(Vec<f64>, bool)> {
        let d = self.dim();
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "r",
                reason: "non-finite response".into(),
            });
        }
        let mut cur = self.origin.clone();
        let mut prev_dirs: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut clamped = false;
        for level in 0..d {
            let lc = self.level_curve(level, &cur, &prev_dirs)?;
            let start = geodesic_project(&lc.curve, &cur);
            let scale = self.scales[level];
            let target = r[level] / scale;
            let tol = 1e-6 / scale;
            let s = match lc.warc.solve_arc(start.arc_position, target, tol) {
                Ok(s) => s,
                Err(Error::ResponseOutOfRange {
                    reachable_min,
                    reachable_max,
                    ..
                }) => {
                    if clamp {
                        clamped = true;
                        let t = target.clamp(reachable_min, reachable_max);
                        lc.warc.solve_arc(start.arc_position, t, tol)?
                    } else {
                        return Err(Error::ResponseOutOfRange {
                            dim: level,
                            requested: r[level],
                            reachable_min: reachable_min * scale,
                            reachable_max: reachable_max * scale,
                        });
                    }
                }
                Err(e) => return Err(e),
            };
            cur = lc.curve.point_at_arc(s);
            prev_dirs.push(lc.curve.tangent_at_arc(s));
        }
        Ok((cur, clamped))
    }

    /// Central-difference Jacobian of the transform at `x` with step `h`.
    /// Row `i` is the gradient of response `i`.
    pub fn jacobian_fd(&self, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: format!("step must be positive, got {h}"),
            });
        }
        let mut jac = DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let probe = |sign: f64| -> Result<ResponseVector> {
                let mut p = x.to_vec();
                p[j] += sign * h;
                let tag = if sign > 0.0 { "+" } else { "-" };
                let resp = self.transform(&p).map_err(|e| Error::NonConverged {
                    context: format!("jacobian probe x[{j}] {tag} h: {e}"),
                })?;
                if !resp.all_converged() {
                    return Err(Error::NonConverged {
                        context: format!("jacobian probe x[{j}] {tag} h: response flagged"),
                    });
                }
                Ok(resp)
            };
            let plus = probe(1.0)?;
            let minus = probe(-1.0)?;
            for i in 0..d {
                jac[(i, j)] = (plus.r[i] - minus.r[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    }

    /// Per-dimension interquartile range of the training responses,
    /// estimated once on a strided subsample.
    pub fn response_iqr(&self) -> &[f64] {
        self.response_iqr.get_or_init(|| {
            let d = self.dim();
            let pts = self.training.stride_subsample(256);
            let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); d];
            for p in &pts {
                if let Ok(resp) = self.transform(p) {
                    if resp.all_converged() {
                        for (dst, &v) in per_dim.iter_mut().zip(&resp.r) {
                            dst.push(v);
                        }
                    }
                }
            }
            per_dim
                .into_iter()
                .map(|mut vals| {
                    if vals.len() < 8 {
                        return 0.0;
                    }
                    vals.sort_unstable_by(f64::total_cmp);
                    let q = |f: f64| {
                        let pos = f * (vals.len() - 1) as f64;
                        let lo = pos.floor() as usize;
                        let hi = pos.ceil() as usize;
                        let t = pos - lo as f64;
                        vals[lo] * (1.0 - t) + vals[hi] * t
                    };
                    q(0.75) - q(0.25)
                })
                .collect()
        })
    }

    /// Number of memoized higher-order curves.
    pub fn cached_curves(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    /// Writes the model JSON. The stored hash ties the model to the exact
    /// training CSV bytes.
    pub fn save_json(
        &self,
        model_path: impl AsRef<Path>,
        training_path: impl AsRef<Path>,
    ) -> Result<()> {
        let bytes = fs::read(training_path.as_ref())?;
        let file = ModelFile {
            gamma: self.gamma,
            origin: self.origin.clone(),
            dim_order: self.dim_order.iter().map(|&j| j + 1).collect(),
            scales: self.scales.clone(),
            curve_params: self.curve_params,
            k_fraction_density: self.k_fraction_density,
            training_ref: TrainingRef {
                path: training_path.as_ref().to_string_lossy().into_owned(),
                sha256: hex_digest(&bytes),
            },
            label: self.training.label().map(String::from),
        };
        fs::write(model_path.as_ref(), serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Loads a model JSON, re-reads and verifies its training CSV, and
    /// rebuilds the runtime state deterministically.
    pub fn load_json(model_path: impl AsRef<Path>) -> Result<Self> {
        let model_path = model_path.as_ref();
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(model_path)?)?;
        let mut candidates: Vec<PathBuf> = vec![PathBuf::from(&file.training_ref.path)];
        if let Some(dir) = model_path.parent() {
            candidates.push(dir.join(&file.training_ref.path));
        }
        let data_path = candidates.iter().find(|p| p.exists()).ok_or_else(|| {
            Error::TrainingRef(format!(
                "training data not found at {}",
                file.training_ref.path
            ))
        })?;
        let bytes = fs::read(data_path)?;
        let digest = hex_digest(&bytes);
        if digest != file.training_ref.sha256 {
            return Err(Error::TrainingRef(format!(
                "training data hash mismatch: expected {}, found {digest}",
                file.training_ref.sha256
            )));
        }
        let mut set = SampleSet::from_reader(bytes.as_slice())?;
        if let Some(label) = &file.label {
            set.set_label(label.clone());
        }
        let d = set.dim();
        if file.dim_order.len() != d || file.scales.len() != d || file.origin.len() != d {
            return Err(Error::TrainingRef(
                "model fields inconsistent with the training dimension".into(),
            ));
        }
        let mut dim_order = Vec::with_capacity(d);
        for &j in &file.dim_order {
            if j == 0 || j > d {
                return Err(Error::TrainingRef(format!("bad dim_order entry {j}")));
            }
            dim_order.push(j - 1);
        }
        Self::assemble(
            Arc::new(set),
            file.gamma,
            file.curve_params,
            file.k_fraction_density,
            file.origin,
            dim_order,
            file.scales,
            None,
        )
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn check_full_rank(set: &SampleSet) -> Result<()> {
    let d = set.dim();
    let mean = set.mean();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in set.points() {
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= (set.len() - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = cov.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_unstable_by(|a, b| b.total_cmp(a));
    let vmax = vals[0].max(f64::MIN_POSITIVE);
    for (i, &v) in vals.iter().enumerate() {
        if v <= 1e-12 * vmax {
            return Err(Error::DegenerateData { dimension: i });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_complement_of_e1_in_3d() {
        let dirs = vec![vec![1.0, 0.0, 0.0]];
        let comp = orthonormal_complement(&dirs, 3);
        assert_eq!(comp.len(), 2);
        for v in &comp {
            assert!(v[0].abs() < 1e-9);
            assert!((dot(v, v) - 1.0).abs() < 1e-9);
        }
        assert!(dot(&comp[0], &comp[1]).abs() < 1e-9);
    }

    #[test]
    fn orthonormalize_drops_dependent_vectors() {
        let vs = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![1.0, 1.0]];
        let out = orthonormalize(&vs);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn curve_key_is_stable_under_tiny_perturbations() {
        let a = CurveKey::new(1, &[1.0001, 2.0], &[vec![0.6, 0.8]], 0.25);
        let b = CurveKey::new(1, &[0.9999, 2.0], &[vec![0.6, 0.8]], 0.25);
        assert_eq!(a, b);
    }

    #[test]
    fn rank_check_names_deficient_direction() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let set = SampleSet::new(pts).unwrap();
        match check_full_rank(&set) {
            Err(Error::DegenerateData { dimension }) => assert_eq!(dimension, 1),
            other => panic!("expected degenerate data, got {other:?}"),
        }
    }
}
