use super::types::{GeoPoint, PlanarPoint, RoutePolyline};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance between two points on a spherical Earth.
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let lat1 = a.lat().to_radians();
    let lat2 = b.lat().to_radians();
    let dlat = (b.lat() - a.lat()).to_radians();
    let dlon = (b.lon() - a.lon()).to_radians();

    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().min(1.0).asin()
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPoint {
    /// Meters from the query point to the closest point of the line.
    pub distance_m: f64,
    /// Arc-length position of that closest point along the line, in meters.
    pub arc_offset_m: f64,
}

/// Closest point of `line` to `p`, as (distance, arc offset).
///
/// The minimum is taken over every constituent segment; when two candidates
/// are exactly equidistant the one with the smaller arc offset wins because
/// segments are scanned in order with a strict comparison.
pub fn nearest_point_on_polyline(p: &GeoPoint, line: &RoutePolyline) -> NearestPoint {
    // Equirectangular chart centered on the query point. Over the distances
    // where the minimum can live this agrees with haversine to well under
    // the 0.2 m oracle budget.
    let cos_lat = p.lat().to_radians().cos();
    let to_plane = |g: &GeoPoint| -> PlanarPoint {
        PlanarPoint::new(
            (g.lon() - p.lon()).to_radians() * cos_lat * EARTH_RADIUS_M,
            (g.lat() - p.lat()).to_radians() * EARTH_RADIUS_M,
        )
    };

    let pts = line.points();
    let cum = line.cumulative_m();
    let origin = PlanarPoint::new(0.0, 0.0);

    let mut best = NearestPoint {
        distance_m: f64::INFINITY,
        arc_offset_m: 0.0,
    };
    let mut prev = to_plane(&pts[0]);
    for i in 1..pts.len() {
        let next = to_plane(&pts[i]);
        let (dx, dy) = (next.x - prev.x, next.y - prev.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            ((-prev.x) * dx + (-prev.y) * dy) / len2
        }
        .clamp(0.0, 1.0);
        let proj = PlanarPoint::new(prev.x + t * dx, prev.y + t * dy);
        let d = proj.dist(&origin);
        if d < best.distance_m {
            best = NearestPoint {
                distance_m: d,
                arc_offset_m: cum[i - 1] + t * (cum[i] - cum[i - 1]),
            };
        }
        prev = next;
    }
    best
}
