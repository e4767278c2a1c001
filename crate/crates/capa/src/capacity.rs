//! Single-user capacity via water-filling over the operator spectrum, and
//! two-user MAC/BC capacity regions from Gram-matrix log-det rates.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::OperatorSVD;

/// Water-filling solution over parallel sub-channels.
#[derive(Clone, Debug)]
pub struct PowerAllocation {
    /// Per-mode powers q_i >= 0 (W).
    pub mode_powers: Vec<f64>,
    /// Water level mu (W).
    pub water_level: f64,
}

/// Water-filling across sub-channels with gains sigma_i^2:
/// q_i = max(0, mu - noise / sigma_i^2), with mu chosen by bisection so the
/// powers sum to `total_power`.
pub fn waterfill(
    singular_values: &[f64],
    total_power: f64,
    noise_power: f64,
) -> Result<PowerAllocation> {
    if total_power <= 0.0 || noise_power <= 0.0 {
        return Err(Error::InvalidArgument(
            "total power and noise power must be > 0".into(),
        ));
    }
    let active: Vec<f64> = singular_values.iter().copied().filter(|&s| s > 0.0).collect();
    if active.is_empty() {
        return Err(Error::InvalidArgument(
            "water-filling needs at least one nonzero singular value".into(),
        ));
    }
    let floor = |s: f64| noise_power / (s * s);
    let allocated = |mu: f64| -> f64 {
        singular_values
            .iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| (mu - floor(s)).max(0.0))
            .sum()
    };
    let s_min = active.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, floor(s_min) + total_power);
    // allocated(hi) >= total_power by construction; bisect on the monotone map.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if allocated(mid) < total_power {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 * (1.0 + hi) {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut q: Vec<f64> = singular_values
        .iter()
        .map(|&s| if s > 0.0 { (mu - floor(s)).max(0.0) } else { 0.0 })
        .collect();
    // Remove the bisection residual so the budget is met exactly.
    let sum: f64 = q.iter().sum();
    if sum > 0.0 {
        let scale = total_power / sum;
        for qi in &mut q {
            *qi *= scale;
        }
    }
    Ok(PowerAllocation {
        mode_powers: q,
        water_level: mu,
    })
}

/// Point-to-point capacity: water-filled sum of log2(1 + q sigma^2 / noise).
pub fn p2p_capacity(svd: &OperatorSVD, total_power: f64, noise_power: f64) -> Result<f64> {
    let sigma = svd.singular_values();
    let alloc = waterfill(sigma, total_power, noise_power)?;
    Ok(sigma
        .iter()
        .zip(&alloc.mode_powers)
        .map(|(&s, &q)| (1.0 + q * s * s / noise_power).log2())
        .sum())
}

fn log2_det_subset(
    gram: &DMatrix<Complex64>,
    powers: &[f64],
    noise_power: f64,
    subset: &[usize],
) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let n = subset.len();
    // diag(sqrt p) G diag(sqrt p) restricted to the subset, Hermitian PSD.
    let mut m = DMatrix::<Complex64>::identity(n, n);
    for (a, &i) in subset.iter().enumerate() {
        for (b, &j) in subset.iter().enumerate() {
            m[(a, b)] += gram[(i, j)] * ((powers[i] * powers[j]).sqrt() / noise_power);
        }
    }
    let det = m.determinant();
    det.re.max(f64::MIN_POSITIVE).log2()
}

/// Per-user MAC rates under successive decoding in `order` (first entry is
/// decoded first). Chain-rule log-det rates, identical to MMSE-SIC rates.
pub fn mac_corner_rates(
    gram: &DMatrix<Complex64>,
    powers: &[f64],
    noise_power: f64,
    order: &[usize],
) -> Result<Vec<f64>> {
    let k = gram.nrows();
    if gram.ncols() != k || powers.len() != k {
        return Err(Error::InvalidArgument(
            "Gram matrix and power vector dimensions disagree".into(),
        ));
    }
    if noise_power <= 0.0 {
        return Err(Error::InvalidArgument("noise power must be > 0".into()));
    }
    let mut seen = vec![false; k];
    for &u in order {
        if u >= k || seen[u] {
            return Err(Error::InvalidArgument(format!(
                "order is not a permutation of 0..{k}"
            )));
        }
        seen[u] = true;
    }
    if order.len() != k {
        return Err(Error::InvalidArgument(format!(
            "order must list all {k} users"
        )));
    }
    let mut rates = vec![0.0; k];
    for i in 0..k {
        let remaining: Vec<usize> = order[i..].to_vec();
        let after: Vec<usize> = order[i + 1..].to_vec();
        let r = log2_det_subset(gram, powers, noise_power, &remaining)
            - log2_det_subset(gram, powers, noise_power, &after);
        rates[order[i]] = r.max(0.0);
    }
    Ok(rates)
}

/// A set of achievable rate pairs with its convex-hull boundary.
#[derive(Clone, Debug, Serialize)]
pub struct CapacityRegion {
    /// All stored achievable rate pairs (bit/s/Hz).
    pub points: Vec<[f64; 2]>,
    /// Convex-hull boundary, counterclockwise starting from the origin.
    pub boundary: Vec<[f64; 2]>,
    /// Human-readable provenance of the stored points.
    pub metadata: Vec<String>,
}

impl CapacityRegion {
    fn from_points(points: Vec<[f64; 2]>, metadata: Vec<String>) -> Self {
        let mut all = points.clone();
        all.push([0.0, 0.0]);
        let boundary = convex_hull(&all);
        Self {
            points,
            boundary,
            metadata,
        }
    }

    /// Support function of the hull in direction (cos theta, sin theta).
    pub fn support(&self, theta: f64) -> f64 {
        let (c, s) = (theta.cos(), theta.sin());
        self.boundary
            .iter()
            .map(|p| c * p[0] + s * p[1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when this region's hull contains `other`'s at each probed angle
    /// of the first quadrant.
    pub fn contains(&self, other: &CapacityRegion, n_angles: usize, tol: f64) -> bool {
        (0..n_angles).all(|i| {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / (n_angles - 1) as f64;
            self.support(theta) >= other.support(theta) - tol
        })
    }

    /// Symmetric Hausdorff distance between the two hull boundaries.
    pub fn hausdorff(&self, other: &CapacityRegion) -> f64 {
        let d1 = directed_hausdorff(&self.boundary, &other.boundary);
        let d2 = directed_hausdorff(&other.boundary, &self.boundary);
        d1.max(d2)
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain convex hull, counterclockwise.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

fn point_in_convex(p: [f64; 2], hull: &[[f64; 2]]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        cross(a, b, p) >= -1e-15
    })
}

fn directed_hausdorff(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    from.iter()
        .map(|&p| {
            if point_in_convex(p, to) {
                0.0
            } else {
                (0..to.len())
                    .map(|i| point_segment_distance(p, to[i], to[(i + 1) % to.len()]))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .fold(0.0, f64::max)
}

/// Two-user MAC capacity region: both SIC corner points, the single-user
/// points, and `n_timeshare` convex combinations along the dominant face.
pub fn mac_region(
    gram: &DMatrix<Complex64>,
    powers: &[f64],
    noise_power: f64,
    n_timeshare: usize,
) -> Result<CapacityRegion> {
    if gram.nrows() != 2 {
        return Err(Error::Scope(
            "capacity region plotting supports exactly two users".into(),
        ));
    }
    let corner_a = mac_corner_rates(gram, powers, noise_power, &[0, 1])?;
    let corner_b = mac_corner_rates(gram, powers, noise_power, &[1, 0])?;
    let single = |k: usize| -> f64 {
        (1.0 + powers[k] * gram[(k, k)].re / noise_power).log2()
    };
    let mut points = vec![
        [corner_a[0], corner_a[1]],
        [corner_b[0], corner_b[1]],
        [single(0), 0.0],
        [0.0, single(1)],
    ];
    let mut metadata = vec![
        "corner: user 0 decoded first".into(),
        "corner: user 1 decoded first".into(),
        "single-user point: user 0".into(),
        "single-user point: user 1".into(),
    ];
    for i in 1..=n_timeshare {
        let t = i as f64 / (n_timeshare + 1) as f64;
        points.push([
            (1.0 - t) * corner_a[0] + t * corner_b[0],
            (1.0 - t) * corner_a[1] + t * corner_b[1],
        ]);
        metadata.push(format!("time-share t = {t:.6}"));
    }
    Ok(CapacityRegion::from_points(points, metadata))
}

/// Two-user BC capacity region as the convex hull of dual-MAC regions over a
/// uniform grid of power splits (p_1, p_2) with p_1 + p_2 = P.
pub fn bc_region_two_user(
    gram: &DMatrix<Complex64>,
    total_power: f64,
    noise_power: f64,
    n_power_splits: usize,
    n_timeshare: usize,
) -> Result<CapacityRegion> {
    if gram.nrows() != 2 {
        return Err(Error::Scope(
            "BC duality is limited to exactly two users".into(),
        ));
    }
    if n_power_splits < 1 {
        return Err(Error::InvalidArgument("need at least one power split".into()));
    }
    let mut points = Vec::new();
    let mut metadata = Vec::new();
    for i in 0..=n_power_splits {
        let p1 = total_power * i as f64 / n_power_splits as f64;
        let p2 = total_power - p1;
        let sub = mac_region(gram, &[p1, p2], noise_power, n_timeshare)?;
        for (p, m) in sub.points.iter().zip(&sub.metadata) {
            points.push(*p);
            metadata.push(format!("split p1 = {p1:.6}: {m}"));
        }
    }
    Ok(CapacityRegion::from_points(points, metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gram_matrix, los_response};
    use crate::geometry::{build_quadrature, Aperture};
    use nalgebra::Vector3;

    #[test]
    fn waterfill_single_mode_gets_all_power() {
        let a = waterfill(&[1.0], 2.5, 0.3).unwrap();
        assert!((a.mode_powers[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn waterfill_equal_modes_split_evenly() {
        let a = waterfill(&[0.7, 0.7], 1.0, 0.1).unwrap();
        assert!((a.mode_powers[0] - 0.5).abs() < 1e-10);
        assert!((a.mode_powers[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn waterfill_skips_weak_mode() {
        // Floors are 1 and 100; with P = 0.5 the level is 1.5 < 100, so the
        // weak mode stays dry. Cross-checked against a 1-D grid search on mu.
        let sigma = [1.0, 0.1];
        let (p, noise) = (0.5, 1.0);
        let a = waterfill(&sigma, p, noise).unwrap();
        assert!((a.mode_powers[0] - 0.5).abs() < 1e-10);
        assert_eq!(a.mode_powers[1], 0.0);

        let alloc_at = |mu: f64| -> Vec<f64> {
            sigma.iter().map(|&s| (mu - noise / (s * s)).max(0.0)).collect()
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut mu = 0.0;
        while mu < 200.0 {
            let miss = (alloc_at(mu).iter().sum::<f64>() - p).abs();
            if miss < best.0 {
                best = (miss, mu);
            }
            mu += 1e-4;
        }
        let oracle = alloc_at(best.1);
        for (got, want) in a.mode_powers.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-3, "{got} vs oracle {want}");
        }
    }

    #[test]
    fn waterfill_kkt_on_random_spectra() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let n = 1 + (next() * 8.0) as usize;
            let sigma: Vec<f64> = (0..n).map(|_| 0.05 + next()).collect();
            let p = 0.1 + 3.0 * next();
            let noise = 0.01 + next();
            let a = waterfill(&sigma, p, noise).unwrap();
            let sum: f64 = a.mode_powers.iter().sum();
            assert!((sum - p).abs() < 1e-10 * p.max(1.0));
            for (&s, &q) in sigma.iter().zip(&a.mode_powers) {
                let floor = noise / (s * s);
                if q > 1e-12 {
                    assert!((floor + q - a.water_level).abs() < 1e-8, "active KKT");
                } else {
                    assert!(floor >= a.water_level - 1e-8, "inactive KKT");
                }
            }
        }
    }

    #[test]
    fn waterfill_rejects_empty_spectrum() {
        assert!(waterfill(&[0.0, 0.0], 1.0, 1.0).is_err());
    }

    fn toy_gram(g11: f64, g22: f64, g12: Complex64) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(g11, 0.0),
                g12,
                g12.conj(),
                Complex64::new(g22, 0.0),
            ],
        )
    }

    #[test]
    fn mac_single_user_rate() {
        let g = DMatrix::from_row_slice(1, 1, &[Complex64::new(2.0, 0.0)]);
        let r = mac_corner_rates(&g, &[1.5], 0.5, &[0]).unwrap();
        assert!((r[0] - (1.0f64 + 1.5 * 2.0 / 0.5).log2()).abs() < 1e-12);
    }

    #[test]
    fn mac_sum_rate_is_order_invariant() {
        let g = toy_gram(1.0, 0.8, Complex64::new(0.3, 0.2));
        let p = [0.6, 0.4];
        let a = mac_corner_rates(&g, &p, 0.1, &[0, 1]).unwrap();
        let b = mac_corner_rates(&g, &p, 0.1, &[1, 0]).unwrap();
        assert!(((a[0] + a[1]) - (b[0] + b[1])).abs() < 1e-12);
    }

    #[test]
    fn mac_rejects_bad_order() {
        let g = toy_gram(1.0, 1.0, Complex64::new(0.0, 0.0));
        assert!(mac_corner_rates(&g, &[1.0, 1.0], 0.1, &[0, 0]).is_err());
        assert!(mac_corner_rates(&g, &[1.0, 1.0], 0.1, &[0]).is_err());
        assert!(mac_corner_rates(&g, &[1.0, 1.0], 0.1, &[0, 2]).is_err());
    }

    #[test]
    fn mac_region_degenerates_without_second_user() {
        let g = toy_gram(1.0, 0.8, Complex64::new(0.3, 0.0));
        let region = mac_region(&g, &[1.0, 0.0], 0.1, 8).unwrap();
        let r1_max = (1.0f64 + 1.0 / 0.1).log2();
        for p in &region.points {
            assert!(p[1].abs() < 1e-12);
            assert!(p[0] <= r1_max + 1e-12);
        }
        assert!(region.points.iter().any(|p| (p[0] - r1_max).abs() < 1e-12));
    }

    #[test]
    fn mac_region_symmetric_users() {
        let g = toy_gram(1.0, 1.0, Complex64::new(0.4, 0.0));
        let region = mac_region(&g, &[0.5, 0.5], 0.1, 8).unwrap();
        // Region symmetric about R1 = R2: support at theta and pi/2 - theta
        // agree.
        for i in 0..10 {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / 9.0;
            let a = region.support(theta);
            let b = region.support(std::f64::consts::FRAC_PI_2 - theta);
            assert!((a - b).abs() < 1e-10, "support mismatch at {theta}");
        }
    }

    #[test]
    fn bc_region_contains_duals_and_single_user_points() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 32).unwrap();
        let h1 = los_response(Vector3::new(0.6, 0.0, 2.0), &grid).unwrap();
        let h2 = los_response(Vector3::new(-0.4, 0.0, 3.0), &grid).unwrap();
        let g = gram_matrix(&[h1, h2]).unwrap();
        let (p, noise) = (1.0, 1e-6);
        let bc = bc_region_two_user(&g, p, noise, 16, 8).unwrap();
        for i in 0..=16 {
            let p1 = p * i as f64 / 16.0;
            let mac = mac_region(&g, &[p1, p - p1], noise, 8).unwrap();
            assert!(bc.contains(&mac, 19, 1e-9), "dual MAC escapes hull at split {p1}");
        }
        let single_1 = (1.0 + p * g[(0, 0)].re / noise).log2();
        assert!(bc.support(0.0) >= single_1 - 1e-9);
    }

    #[test]
    fn region_errors_outside_two_user_scope() {
        let g = DMatrix::<Complex64>::identity(3, 3);
        assert!(matches!(
            mac_region(&g, &[1.0; 3], 0.1, 4),
            Err(Error::Scope(_))
        ));
        assert!(matches!(
            bc_region_two_user(&g, 1.0, 0.1, 8, 4),
            Err(Error::Scope(_))
        ));
    }

    #[test]
    fn convex_hull_and_hausdorff_basics() {
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let hull = convex_hull(&square);
        assert_eq!(hull.len(), 4);
        let a = CapacityRegion::from_points(square.clone(), vec![]);
        let b = CapacityRegion::from_points(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.1], [0.0, 1.0]],
            vec![],
        );
        assert!((a.hausdorff(&b) - 0.1).abs() < 1e-12);
        assert!(a.hausdorff(&a) == 0.0);
    }
}
