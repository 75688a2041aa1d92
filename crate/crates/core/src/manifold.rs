//! Neighborhood queries, local PCA frames, and one-dimensional
//! density/entropy estimation.
//!
//! These are the statistical primitives the curve tracer and the fitted
//! transform are built on. All estimators are kNN-based: the 1-D density is
//! the balloon estimator `k / (n * 2 r_k)`, and the differential entropy is
//! the Kozachenko-Leonenko nearest-neighbor estimator. Neighbor queries are
//! exhaustive scans with a deterministic tie-break (lower index first).

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, gamma};

use crate::error::{Error, Result};
use crate::sample::SampleSet;

/// Local PCA frame around a query point: neighborhood mean, orthonormal
/// principal directions (columns, descending variance), and the variances.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub center: Vec<f64>,
    pub basis: DMatrix<f64>,
    pub local_variances: Vec<f64>,
    /// True when the neighborhood covariance had rank < d and the basis was
    /// completed with an arbitrary orthonormal complement.
    pub degenerate: bool,
}

impl LocalFrame {
    /// Column `j` of the basis as a plain vector.
    pub fn direction(&self, j: usize) -> Vec<f64> {
        self.basis.column(j).iter().copied().collect()
    }
}

/// One evaluation of the kNN balloon density estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySample {
    pub location: f64,
    pub density: f64,
    pub bandwidth_k: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

/// The `k` nearest points to `x` by Euclidean distance, ascending, ties
/// broken by lower index.
pub fn knn_query(set: &SampleSet, x: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if x.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            actual: x.len(),
        });
    }
    if k == 0 || k > set.len() {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("k = {k} out of range 1..={}", set.len()),
        });
    }
    let mut dists: Vec<(f64, usize)> = set
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(x, p), i))
        .collect();
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, |a, b| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        });
        dists.truncate(k);
    }
    dists.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dists.into_iter().map(|(d, i)| (i, d.sqrt())).collect())
}

/// Distance to the k-th nearest training point (cheaper than a full query).
pub fn knn_radius(set: &SampleSet, x: &[f64], k: usize) -> Result<f64> {
    if x.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            actual: x.len(),
        });
    }
    if k == 0 || k > set.len() {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("k = {k} out of range 1..={}", set.len()),
        });
    }
    let mut dists: Vec<f64> = set.points().iter().map(|p| sq_dist(x, p)).collect();
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(kth.sqrt())
}

/// Local PCA of the k-neighborhood of `x`.
///
/// The center is the neighborhood mean, the basis columns are covariance
/// eigenvectors in descending eigenvalue order, and each column is sign-fixed
/// so its largest-magnitude entry is positive. A rank-deficient covariance is
/// completed with an arbitrary orthonormal complement and flagged.
pub fn local_pca_frame(set: &SampleSet, x: &[f64], k: usize) -> Result<LocalFrame> {
    let d = set.dim();
    if k < d + 1 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("local PCA needs k >= d + 1 = {}, got {k}", d + 1),
        });
    }
    let neighbors = knn_query(set, x, k)?;
    let mut center = vec![0.0; d];
    for &(i, _) in &neighbors {
        for (c, v) in center.iter_mut().zip(set.point(i)) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= k as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for &(i, _) in &neighbors {
        let p = set.point(i);
        for a in 0..d {
            let da = p[a] - center[a];
            for b in a..d {
                cov[(a, b)] += da * (p[b] - center[b]);
            }
        }
    }
    let denom = (k - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::<f64>::zeros(d, d);
    let mut variances = Vec::with_capacity(d);
    for (col, &src) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(src).into();
        let mut imax = 0;
        for r in 1..d {
            if v[r].abs() > v[imax].abs() {
                imax = r;
            }
        }
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        basis.set_column(col, &v);
        variances.push(eig.eigenvalues[src].max(0.0));
    }
    let vmax = variances[0];
    let degenerate = variances[d - 1] <= 1e-12 * vmax.max(f64::MIN_POSITIVE);
    Ok(LocalFrame {
        center,
        basis,
        local_variances: variances,
        degenerate,
    })
}

/// Sorted view over scalar values for repeated 1-D density queries.
#[derive(Debug, Clone)]
pub struct Marginal1d {
    sorted: Vec<f64>,
}

impl Marginal1d {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("need at least 2 values, got {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: "non-finite value".into(),
            });
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Empirical quantile by linear interpolation, `q` in [0, 1].
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let t = pos - lo as f64;
        self.sorted[lo] * (1.0 - t) + self.sorted[hi] * t
    }

    /// Distance from `query` to its k-th nearest value, by expanding around
    /// the insertion point. O(log n + k).
    fn kth_distance(&self, query: f64, k: usize) -> f64 {
        let n = self.sorted.len();
        let start = self.sorted.partition_point(|&v| v < query);
        let (mut lo, mut hi) = (start, start);
        let mut dist = 0.0;
        for _ in 0..k {
            let left = if lo > 0 {
                query - self.sorted[lo - 1]
            } else {
                f64::INFINITY
            };
            let right = if hi < n {
                self.sorted[hi] - query
            } else {
                f64::INFINITY
            };
            if left <= right {
                dist = left;
                lo -= 1;
            } else {
                dist = right;
                hi += 1;
            }
        }
        dist
    }

    /// kNN balloon density `k / (n * 2 r_k)` at `query`.
    ///
    /// A coincident k-th neighbor (r_k = 0) is replaced by the smallest
    /// nonzero distance; if every value coincides with the query this is a
    /// degenerate-sample error.
    pub fn density_at(&self, query: f64, k: usize) -> Result<DensitySample> {
        let n = self.sorted.len();
        if k == 0 || k > n {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("k = {k} out of range 1..={n}"),
            });
        }
        let mut r = self.kth_distance(query, k);
        if r == 0.0 {
            // expand past the coincident block
            let mut kk = k;
            while r == 0.0 && kk < n {
                kk += 1;
                r = self.kth_distance(query, kk);
            }
            if r == 0.0 {
                return Err(Error::DegenerateSample(
                    "all values coincide with the query".into(),
                ));
            }
        }
        Ok(DensitySample {
            location: query,
            density: k as f64 / (n as f64 * 2.0 * r),
            bandwidth_k: k,
        })
    }
}

/// One-shot kNN balloon density estimate along a single coordinate.
pub fn knn_density_1d(values: &[f64], query: f64, k: usize) -> Result<DensitySample> {
    Marginal1d::new(values)?.density_at(query, k)
}

/// Differential entropy of a scalar sample in bits, Kozachenko-Leonenko
/// nearest-neighbor estimator.
///
/// Constant input returns the negative-infinity sentinel. Duplicates inside
/// an otherwise spread sample reuse the smallest nonzero spacing.
pub fn marginal_entropy_1d(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 50 {
        return Err(Error::InvalidParameter {
            name: "values",
            reason: format!("entropy estimation needs >= 50 values, got {n}"),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Ok(f64::NEG_INFINITY);
    }
    let mut eps = Vec::with_capacity(n);
    let mut min_nonzero = f64::INFINITY;
    for i in 0..n {
        let left = if i > 0 {
            sorted[i] - sorted[i - 1]
        } else {
            f64::INFINITY
        };
        let right = if i + 1 < n {
            sorted[i + 1] - sorted[i]
        } else {
            f64::INFINITY
        };
        let e = left.min(right);
        if e > 0.0 && e < min_nonzero {
            min_nonzero = e;
        }
        eps.push(e);
    }
    let mut sum_ln = 0.0;
    for e in eps {
        let e = if e > 0.0 { e } else { min_nonzero };
        sum_ln += e.ln();
    }
    let nats =
        digamma(n as f64) - digamma(1.0) + std::f64::consts::LN_2 + sum_ln / n as f64;
    Ok(nats / std::f64::consts::LN_2)
}

/// d-dimensional kNN balloon density `k / (n * V_d * r_k^d)`.
pub fn knn_density_nd(set: &SampleSet, x: &[f64], k: usize) -> Result<f64> {
    let d = set.dim() as f64;
    let r = knn_radius(set, x, k)?;
    if r == 0.0 {
        return Err(Error::DegenerateSample(
            "k-th neighbor coincides with the query".into(),
        ));
    }
    let unit_ball = std::f64::consts::PI.powf(d / 2.0) / gamma(d / 2.0 + 1.0);
    Ok(k as f64 / (set.len() as f64 * unit_ball * r.powf(d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set2(
        points: &[(f64, f64)],
    ) -> SampleSet {
        SampleSet::new(points.iter().map(|&(a, b)| vec![a, b]).collect()).unwrap()
    }

    #[test]
    fn knn_basic_order_and_distances() {
        let set = set2(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]);
        let got = knn_query(&set, &[0.9, 0.0], 2).unwrap();
        assert_eq!(got[0].0, 1);
        assert_eq!(got[1].0, 0);
        assert!((got[0].1 - 0.1).abs() < 1e-12);
        assert!((got[1].1 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn knn_tie_breaks_by_lower_index() {
        let set = set2(&[(1.0, 0.0), (1.0, 0.0), (5.0, 0.0)]);
        let got = knn_query(&set, &[0.0, 0.0], 2).unwrap();
        assert_eq!(got[0].0, 0);
        assert_eq!(got[1].0, 1);
    }

    #[test]
    fn knn_k_out_of_range() {
        let set = set2(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(knn_query(&set, &[0.0, 0.0], 0).is_err());
        assert!(knn_query(&set, &[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn frame_on_axis_aligned_segment_uses_positive_convention() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        let set = SampleSet::new(pts).unwrap();
        let frame = local_pca_frame(&set, &[1.0, 0.0], 10).unwrap();
        let dir = frame.direction(0);
        assert!((dir[0] - 1.0).abs() < 1e-9, "dir = {dir:?}");
        assert!(dir[1].abs() < 1e-9);
        assert!(frame.degenerate, "zero transverse variance must be flagged");
        // orthonormality
        let btb = frame.basis.transpose() * &frame.basis;
        for r in 0..2 {
            for c in 0..2 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((btb[(r, c)] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn density_two_points() {
        // k / (n * 2 r_k) = 1 / (2 * 2 * 0.5)
        let d = knn_density_1d(&[0.0, 1.0], 0.5, 1).unwrap();
        assert!((d.density - 0.5).abs() < 1e-12);
        assert_eq!(d.bandwidth_k, 1);
    }

    #[test]
    fn density_uniform_grid() {
        let values: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let d = knn_density_1d(&values, 0.5, 10).unwrap();
        // r_10 = 0.05 exactly on this grid
        assert!((d.density - 10.0 / (101.0 * 0.1)).abs() < 1e-9);
        assert!((d.density - 1.0).abs() < 0.15);
    }

    #[test]
    fn density_coincident_kth_neighbor_falls_back() {
        let values = [0.0, 0.0, 0.0, 2.0];
        let d = knn_density_1d(&values, 0.0, 2).unwrap();
        // r_2 = 0 -> smallest nonzero distance is 2
        assert!((d.density - 2.0 / (4.0 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn density_all_coincident_errors() {
        let values = [1.0, 1.0, 1.0];
        assert!(matches!(
            knn_density_1d(&values, 1.0, 2),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn entropy_constant_input_is_sentinel() {
        let values = vec![2.5; 64];
        assert_eq!(marginal_entropy_1d(&values).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn entropy_needs_50_values() {
        let values = vec![0.0, 1.0];
        assert!(marginal_entropy_1d(&values).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let m = Marginal1d::new(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m.quantile(0.5) - 2.0).abs() < 1e-12);
        assert!((m.quantile(0.125) - 0.5).abs() < 1e-12);
    }
}
