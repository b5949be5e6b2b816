use super::types::{PlanarPoint, RoutePolyline};
use crate::error::{Error, Result};

/// Perpendicular distance from `p` to the segment `a`-`b`, in the units of
/// the input coordinates.
pub(crate) fn point_segment_distance(p: &PlanarPoint, a: &PlanarPoint, b: &PlanarPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(&PlanarPoint::new(a.x + t * dx, a.y + t * dy))
}

/// Douglas-Peucker simplification over the raw lon/lat plane.
///
/// Returns the indices of the retained break points, always including the
/// first and last point, strictly increasing. `epsilon` is in coordinate
/// degrees; every dropped point stays within `epsilon` of the simplified
/// chain.
pub fn douglas_peucker(line: &RoutePolyline, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    let pts: Vec<PlanarPoint> = line.points().iter().map(|p| PlanarPoint::from(*p)).collect();

    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;

    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((start, end)) = stack.pop() {
        if end <= start + 1 {
            continue;
        }
        // Deterministic: first index attaining the maximum wins.
        let mut max_dist = 0.0;
        let mut max_idx = start + 1;
        for i in start + 1..end {
            let d = point_segment_distance(&pts[i], &pts[start], &pts[end]);
            if d > max_dist {
                max_dist = d;
                max_idx = i;
            }
        }
        if max_dist > epsilon {
            keep[max_idx] = true;
            stack.push((start, max_idx));
            stack.push((max_idx, end));
        }
    }

    Ok((0..pts.len()).filter(|&i| keep[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn gp(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    fn line(points: &[(f64, f64)]) -> RoutePolyline {
        RoutePolyline::new("r", points.iter().map(|&(x, y)| gp(x, y)).collect()).unwrap()
    }

    /// Max over all original points of the distance to the simplified chain.
    fn max_deviation(l: &RoutePolyline, breaks: &[usize]) -> f64 {
        let pts: Vec<PlanarPoint> = l.points().iter().map(|p| PlanarPoint::from(*p)).collect();
        let mut worst = 0.0f64;
        for p in &pts {
            let mut best = f64::INFINITY;
            for w in breaks.windows(2) {
                best = best.min(point_segment_distance(p, &pts[w[0]], &pts[w[1]]));
            }
            worst = worst.max(best);
        }
        worst
    }

    fn random_line(rng: &mut ChaCha20Rng, n: usize) -> RoutePolyline {
        let (mut lon, mut lat) = (72.8, 21.2);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            pts.push(gp(lon, lat));
            lon += rng.gen_range(0.00005..0.0005);
            lat += rng.gen_range(-0.0003..0.0003);
        }
        RoutePolyline::new("r", pts).unwrap()
    }

    #[test]
    fn collinear_points_collapse() {
        let l = line(&[(0.0, 0.0), (0.001, 0.0), (0.002, 0.0)]);
        assert_eq!(douglas_peucker(&l, 1e-4).unwrap(), vec![0, 2]);
    }

    #[test]
    fn large_deviation_is_retained() {
        let eps = 1e-4;
        let l = line(&[(0.0, 0.0), (0.001, 2.0 * eps), (0.002, 0.0)]);
        assert_eq!(douglas_peucker(&l, eps).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let l = line(&[(0.0, 0.0), (0.001, 0.0)]);
        assert!(douglas_peucker(&l, 0.0).is_err());
        assert!(douglas_peucker(&l, -1e-4).is_err());
        assert!(douglas_peucker(&l, f64::NAN).is_err());
    }

    #[test]
    fn deviation_bound_holds_on_random_line() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let l = random_line(&mut rng, 500);
        let eps = 3e-4;
        let breaks = douglas_peucker(&l, eps).unwrap();
        assert_eq!(*breaks.first().unwrap(), 0);
        assert_eq!(*breaks.last().unwrap(), l.len() - 1);
        assert!(breaks.windows(2).all(|w| w[0] < w[1]));
        assert!(max_deviation(&l, &breaks) <= eps);
    }

    #[test]
    fn idempotent_at_fixed_epsilon() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let l = random_line(&mut rng, 300);
        let eps = 2e-4;
        let breaks = douglas_peucker(&l, eps).unwrap();
        let simplified = RoutePolyline::new(
            "r2",
            breaks.iter().map(|&i| l.points()[i]).collect(),
        )
        .unwrap();
        let again = douglas_peucker(&simplified, eps).unwrap();
        assert_eq!(again.len(), simplified.len(), "no further points dropped");
    }

    #[test]
    fn break_count_monotone_in_epsilon() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let l = random_line(&mut rng, 400);
        let mut prev = usize::MAX;
        for k in 0..10 {
            let eps = 1e-5 * 2f64.powi(k);
            let n = douglas_peucker(&l, eps).unwrap().len();
            assert!(n <= prev, "count increased from {prev} to {n} at eps {eps}");
            prev = n;
        }
    }
}
