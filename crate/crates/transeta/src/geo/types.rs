use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A WGS84 position in degrees, longitude first.
///
/// Both coordinates are validated on construction: finite, lon in
/// [-180, 180], lat in [-90, 90].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lon: f64,
    lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() || lon.abs() > 180.0 || lat.abs() > 90.0 {
            return Err(Error::InvalidCoordinate { lon, lat });
        }
        Ok(GeoPoint { lon, lat })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }
}

/// A point on a local planar chart. Units are whatever the caller projected
/// into: meters after [`LocalProjection`](super::project::LocalProjection),
/// or raw degrees when working directly on the lon/lat plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn dist(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<GeoPoint> for PlanarPoint {
    /// Degree-plane view of a geographic point (x = lon, y = lat).
    fn from(p: GeoPoint) -> Self {
        PlanarPoint { x: p.lon(), y: p.lat() }
    }
}

/// An ordered sequence of route points with precomputed cumulative arc
/// length in meters.
///
/// Construction removes exactly repeated consecutive points and requires at
/// least two distinct points. `cumulative_m[0]` is always 0 and the sequence
/// is strictly increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutePolyline {
    route_id: String,
    points: Vec<GeoPoint>,
    cumulative_m: Vec<f64>,
}

impl RoutePolyline {
    pub fn new(route_id: impl Into<String>, points: Vec<GeoPoint>) -> Result<Self> {
        let mut deduped: Vec<GeoPoint> = Vec::with_capacity(points.len());
        for p in points {
            if deduped.last() != Some(&p) {
                deduped.push(p);
            }
        }
        if deduped.len() < 2 {
            return Err(Error::DegeneratePolyline(deduped.len()));
        }
        let mut cumulative_m = Vec::with_capacity(deduped.len());
        cumulative_m.push(0.0);
        for w in deduped.windows(2) {
            let d = super::distance::haversine_distance(&w[0], &w[1]);
            cumulative_m.push(cumulative_m.last().unwrap() + d);
        }
        Ok(RoutePolyline {
            route_id: route_id.into(),
            points: deduped,
            cumulative_m,
        })
    }

    pub fn route_id(&self) -> &str {
        &self.route_id
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn cumulative_m(&self) -> &[f64] {
        &self.cumulative_m
    }

    pub fn total_length_m(&self) -> f64 {
        *self.cumulative_m.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 points
    }
}

/// A simple planar polygon: one counter-clockwise exterior ring plus zero or
/// more clockwise holes. Rings are stored open (no repeated closing vertex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPolygon {
    exterior: Vec<PlanarPoint>,
    holes: Vec<Vec<PlanarPoint>>,
}

/// Signed area of an open ring via the shoelace formula. Positive means
/// counter-clockwise.
pub fn ring_signed_area(ring: &[PlanarPoint]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = &ring[i];
        let b = &ring[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn normalize_ring(mut ring: Vec<PlanarPoint>, want_ccw: bool) -> Result<Vec<PlanarPoint>> {
    // Drop an explicit closing vertex if present.
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring.dedup();
    if ring.len() < 3 {
        return Err(Error::InvalidRing(format!(
            "ring has {} distinct vertices",
            ring.len()
        )));
    }
    let area = ring_signed_area(&ring);
    if area == 0.0 {
        return Err(Error::InvalidRing("ring has zero area".into()));
    }
    if (area > 0.0) != want_ccw {
        ring.reverse();
    }
    Ok(ring)
}

impl PlanarPolygon {
    /// Builds a polygon from an exterior ring and optional holes, orienting
    /// the exterior counter-clockwise and holes clockwise. The rings may be
    /// passed open or closed.
    pub fn new(exterior: Vec<PlanarPoint>, holes: Vec<Vec<PlanarPoint>>) -> Result<Self> {
        let exterior = normalize_ring(exterior, true)?;
        let holes = holes
            .into_iter()
            .map(|h| normalize_ring(h, false))
            .collect::<Result<Vec<_>>>()?;
        Ok(PlanarPolygon { exterior, holes })
    }

    pub fn exterior(&self) -> &[PlanarPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<PlanarPoint>] {
        &self.holes
    }

    /// Enclosed area: exterior minus holes.
    pub fn area(&self) -> f64 {
        let mut a = ring_signed_area(&self.exterior);
        for h in &self.holes {
            a += ring_signed_area(h); // holes are clockwise, negative
        }
        a
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (PlanarPoint, PlanarPoint) {
        let mut min = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
        let mut max = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }

    /// Even-odd containment test. Points on the boundary count as inside.
    pub fn contains(&self, p: &PlanarPoint) -> bool {
        let mut inside = crossing_parity(&self.exterior, p);
        if on_ring_boundary(&self.exterior, p) {
            return true;
        }
        for h in &self.holes {
            if on_ring_boundary(h, p) {
                return true; // hole boundary still belongs to the polygon
            }
            if crossing_parity(h, p) {
                inside = !inside;
            }
        }
        inside
    }
}

fn crossing_parity(ring: &[PlanarPoint], p: &PlanarPoint) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (&ring[i], &ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_ring_boundary(ring: &[PlanarPoint], p: &PlanarPoint) -> bool {
    const EPS: f64 = 1e-12;
    let n = ring.len();
    for i in 0..n {
        let a = &ring[i];
        let b = &ring[(i + 1) % n];
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            if p.dist(a) < EPS {
                return true;
            }
            continue;
        }
        let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
        if (-EPS..=1.0 + EPS).contains(&t) {
            let proj = PlanarPoint::new(a.x + t * dx, a.y + t * dy);
            if p.dist(&proj) < EPS {
                return true;
            }
        }
    }
    false
}
