use geo::{BooleanOps, Coord, LineString, MultiPolygon, Polygon};
use log::warn;

use super::types::{PlanarPoint, PlanarPolygon};

/// Vertex snap grid used before boolean operations. Degeneracies from shared
/// edges are resolved by collapsing vertices onto this grid, which keeps the
/// operations deterministic.
pub const SNAP_GRID: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    (v / SNAP_GRID).round() * SNAP_GRID
}

fn ring_to_geo(ring: &[PlanarPoint]) -> LineString<f64> {
    let mut coords: Vec<Coord<f64>> = ring
        .iter()
        .map(|p| Coord {
            x: snap(p.x),
            y: snap(p.y),
        })
        .collect();
    if let Some(first) = coords.first().copied() {
        coords.push(first);
    }
    LineString::from(coords)
}

fn to_geo(p: &PlanarPolygon) -> Polygon<f64> {
    Polygon::new(
        ring_to_geo(p.exterior()),
        p.holes().iter().map(|h| ring_to_geo(h)).collect(),
    )
}

fn from_geo(mp: MultiPolygon<f64>) -> Vec<PlanarPolygon> {
    let mut out = Vec::new();
    for poly in mp {
        let exterior: Vec<PlanarPoint> = poly
            .exterior()
            .coords()
            .map(|c| PlanarPoint::new(c.x, c.y))
            .collect();
        let holes: Vec<Vec<PlanarPoint>> = poly
            .interiors()
            .iter()
            .map(|r| r.coords().map(|c| PlanarPoint::new(c.x, c.y)).collect())
            .collect();
        // Slivers can collapse to zero area after snapping; drop them.
        if let Ok(p) = PlanarPolygon::new(exterior, holes) {
            out.push(p);
        }
    }
    out
}

fn degenerate(p: &PlanarPolygon, name: &str) -> bool {
    if p.area() <= 0.0 {
        warn!("degenerate zero-area polygon passed as {name}; returning empty result");
        true
    } else {
        false
    }
}

/// Intersection a ∩ b, possibly several disjoint pieces.
pub fn polygon_intersection(a: &PlanarPolygon, b: &PlanarPolygon) -> Vec<PlanarPolygon> {
    if degenerate(a, "intersection input a") || degenerate(b, "intersection input b") {
        return Vec::new();
    }
    from_geo(to_geo(a).intersection(&to_geo(b)))
}

/// Difference a \ b, possibly several disjoint pieces.
pub fn polygon_difference(a: &PlanarPolygon, b: &PlanarPolygon) -> Vec<PlanarPolygon> {
    if degenerate(a, "difference input a") {
        return Vec::new();
    }
    if degenerate(b, "difference input b") {
        return vec![a.clone()];
    }
    from_geo(to_geo(a).difference(&to_geo(b)))
}

/// Union of an arbitrary collection of polygons.
pub fn polygon_union_all(polys: &[PlanarPolygon]) -> Vec<PlanarPolygon> {
    let mut acc: Option<MultiPolygon<f64>> = None;
    for p in polys {
        if degenerate(p, "union input") {
            continue;
        }
        let gp = MultiPolygon::new(vec![to_geo(p)]);
        acc = Some(match acc {
            None => gp,
            Some(a) => a.union(&gp),
        });
    }
    acc.map(from_geo).unwrap_or_default()
}

/// Total enclosed area of a set of polygons.
pub fn total_area(polys: &[PlanarPolygon]) -> f64 {
    polys.iter().map(|p| p.area()).sum()
}
