//! Hexagonal binning of bus positions on a local planar chart, plus hex
//! traversal along straight chords.
//!
//! The grid is a flat-top hexagon lattice in axial coordinates, anchored at a
//! configured origin with an exact edge length (25 m by default). Lookups are
//! pure; the density map is an immutable fold over messages.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocalProjection, PlanarPoint};
use crate::ingest::BusPositionMessage;

/// Axial coordinates of one flat-top hexagon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HexIndex {
    pub q: i32,
    pub r: i32,
}

impl HexIndex {
    pub fn new(q: i32, r: i32) -> Self {
        HexIndex { q, r }
    }

    /// The six lattice neighbors.
    pub fn neighbors(&self) -> [HexIndex; 6] {
        const OFFSETS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];
        OFFSETS.map(|(dq, dr)| HexIndex::new(self.q + dq, self.r + dr))
    }

    pub fn is_neighbor(&self, other: &HexIndex) -> bool {
        self.neighbors().contains(other)
    }

    /// Hex lattice distance.
    pub fn distance(&self, other: &HexIndex) -> i32 {
        let dq = self.q - other.q;
        let dr = self.r - other.r;
        (dq.abs() + dr.abs() + (dq + dr).abs()) / 2
    }
}

/// Grid anchoring: origin point and exact edge length in meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HexGridConfig {
    pub origin: GeoPoint,
    pub edge_m: f64,
}

impl HexGridConfig {
    pub fn new(origin: GeoPoint, edge_m: f64) -> Result<Self> {
        if !(edge_m > 0.0) || !edge_m.is_finite() {
            return Err(Error::InvalidEdgeLength(edge_m));
        }
        Ok(HexGridConfig { origin, edge_m })
    }

    fn projection(&self) -> LocalProjection {
        LocalProjection::new(self.origin)
    }

    /// Center of a hexagon in grid-plane meters.
    pub fn center_of(&self, h: &HexIndex) -> PlanarPoint {
        let s = self.edge_m;
        PlanarPoint::new(
            s * 1.5 * h.q as f64,
            s * 3.0_f64.sqrt() * (h.r as f64 + h.q as f64 / 2.0),
        )
    }

    fn hex_of_planar(&self, p: &PlanarPoint) -> HexIndex {
        let s = self.edge_m;
        let qf = (2.0 / 3.0) * p.x / s;
        let rf = (-1.0 / 3.0 * p.x + 3.0_f64.sqrt() / 3.0 * p.y) / s;
        let rounded = cube_round(qf, rf);

        // Boundary points can sit equidistant from several centers; take the
        // lexicographically smallest (q, r) among the near-minimal ones so
        // every boundary belongs to exactly one hexagon.
        let tol = 1e-9 * s;
        let mut best = rounded;
        let mut best_d = self.center_of(&rounded).dist(p);
        for cand in rounded.neighbors() {
            let d = self.center_of(&cand).dist(p);
            if d < best_d - tol || (d <= best_d + tol && (cand.q, cand.r) < (best.q, best.r)) {
                best = cand;
                best_d = d;
            }
        }
        best
    }
}

fn cube_round(qf: f64, rf: f64) -> HexIndex {
    let xf = qf;
    let zf = rf;
    let yf = -xf - zf;
    let mut x = xf.round();
    let mut y = yf.round();
    let mut z = zf.round();
    let (dx, dy, dz) = ((x - xf).abs(), (y - yf).abs(), (z - zf).abs());
    if dx > dy && dx > dz {
        x = -y - z;
    } else if dy > dz {
        y = -x - z;
    } else {
        z = -x - y;
    }
    let _ = y;
    HexIndex::new(x as i32, z as i32)
}

/// Bins a point into its hexagon. Errors if the point is outside the
/// projection validity range of the grid origin.
pub fn hex_of(p: &GeoPoint, grid: &HexGridConfig) -> Result<HexIndex> {
    let planar = grid.projection().forward(p)?;
    Ok(grid.hex_of_planar(&planar))
}

/// Ordered hexagons touched by the straight chord from `a` to `b`.
///
/// The chord is supersampled at quarter-edge steps, deduplicated, and any
/// remaining non-neighbor gap is repaired by midpoint subdivision. The walk
/// is computed in a canonical endpoint order so that reversing the endpoints
/// reverses the list exactly.
pub fn hexes_on_line(a: &GeoPoint, b: &GeoPoint, grid: &HexGridConfig) -> Result<Vec<HexIndex>> {
    let proj = grid.projection();
    let pa = proj.forward(a)?;
    let pb = proj.forward(b)?;

    let flipped = (pb.x, pb.y) < (pa.x, pa.y);
    let (start, end) = if flipped { (pb, pa) } else { (pa, pb) };

    let mut path = walk_chord(grid, &start, &end);
    if flipped {
        path.reverse();
    }
    Ok(path)
}

fn walk_chord(grid: &HexGridConfig, start: &PlanarPoint, end: &PlanarPoint) -> Vec<HexIndex> {
    let len = start.dist(end);
    let steps = ((len / (grid.edge_m / 4.0)).ceil() as usize).max(1);

    let mut path: Vec<HexIndex> = vec![grid.hex_of_planar(start)];
    let mut seen: HashSet<HexIndex> = HashSet::new();
    seen.insert(path[0]);

    let mut prev_point = *start;
    for i in 1..=steps {
        let t = i as f64 / steps as f64;
        let point = PlanarPoint::new(
            start.x + t * (end.x - start.x),
            start.y + t * (end.y - start.y),
        );
        extend_path(grid, &mut path, &mut seen, &prev_point, &point, 0);
        prev_point = point;
    }
    path
}

/// Extends the path up to the hex at `to`.
///
/// Hexagons are convex, so a sub-chord whose endpoints fall in the same hex
/// lies entirely inside it; anything else is bisected until each boundary
/// crossing is pinned down. This covers the chord exactly, including hexes
/// whose clipped crossing is shorter than the sampling step.
fn extend_path(
    grid: &HexGridConfig,
    path: &mut Vec<HexIndex>,
    seen: &mut HashSet<HexIndex>,
    from: &PlanarPoint,
    to: &PlanarPoint,
    depth: usize,
) {
    let h = grid.hex_of_planar(to);
    let last = *path.last().unwrap();
    if h == grid.hex_of_planar(from) && h == last {
        return;
    }
    if depth < 48 && from.dist(to) > 1e-9 * grid.edge_m {
        let mid = PlanarPoint::new((from.x + to.x) / 2.0, (from.y + to.y) / 2.0);
        extend_path(grid, path, seen, from, &mid, depth + 1);
        extend_path(grid, path, seen, &mid, to, depth + 1);
        return;
    }
    if h == last {
        return;
    }
    if !h.is_neighbor(&last) {
        // Crossing localized to a corner where three cells meet; bridge with
        // the shared neighbor nearest the crossing point.
        let shared: Vec<HexIndex> = last
            .neighbors()
            .into_iter()
            .filter(|c| c.is_neighbor(&h))
            .collect();
        if let Some(bridge) = shared.into_iter().min_by(|a, b| {
            grid.center_of(a)
                .dist(to)
                .total_cmp(&grid.center_of(b).dist(to))
                .then_with(|| (a.q, a.r).cmp(&(b.q, b.r)))
        }) {
            if seen.insert(bridge) {
                path.push(bridge);
            }
        }
    }
    if seen.insert(h) {
        path.push(h);
    }
}

/// Per-hexagon message statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    /// Average messages per trip through this hexagon.
    pub n_h: f64,
    pub msg_count: u64,
    pub trip_count: u32,
}

/// Immutable map from hexagon to average messages per trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HexDensityMap {
    config: HexGridConfig,
    cells: BTreeMap<HexIndex, HexCell>,
}

impl HexDensityMap {
    pub fn config(&self) -> &HexGridConfig {
        &self.config
    }

    pub fn cells(&self) -> &BTreeMap<HexIndex, HexCell> {
        &self.cells
    }

    /// Average messages per trip for one hexagon; absent hexes contribute 0.
    pub fn n_h(&self, h: &HexIndex) -> f64 {
        self.cells.get(h).map(|c| c.n_h).unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(&mut w);
        out.write_record(["q", "r", "n_h", "trip_count"])?;
        for (h, c) in &self.cells {
            out.write_record([
                h.q.to_string(),
                h.r.to_string(),
                format!("{}", c.n_h),
                c.trip_count.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv(f)
    }

    pub fn read_csv<R: Read>(r: R, config: HexGridConfig) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut cells = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let q: i32 = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed("bad q column".into()))?;
            let r: i32 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed("bad r column".into()))?;
            let n_h: f64 = rec
                .get(2)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed("bad n_h column".into()))?;
            let trip_count: u32 = rec
                .get(3)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed("bad trip_count column".into()))?;
            let msg_count = (n_h * trip_count as f64).round() as u64;
            cells.insert(
                HexIndex::new(q, r),
                HexCell {
                    n_h,
                    msg_count,
                    trip_count,
                },
            );
        }
        Ok(HexDensityMap { config, cells })
    }
}

/// Builds the density map: for each hexagon, n_h = messages in the hex
/// divided by the number of distinct trips that produced at least one
/// message there.
///
/// Returns the map plus the count of messages skipped because they fell
/// outside the grid's projection range.
pub fn build_density_map(
    messages: &[BusPositionMessage],
    config: HexGridConfig,
) -> (HexDensityMap, usize) {
    let mut counts: BTreeMap<HexIndex, (u64, HashSet<&str>)> = BTreeMap::new();
    let mut skipped = 0usize;
    for m in messages {
        match hex_of(&m.position, &config) {
            Ok(h) => {
                let entry = counts.entry(h).or_default();
                entry.0 += 1;
                entry.1.insert(m.trip_id.as_str());
            }
            Err(_) => skipped += 1,
        }
    }
    let cells = counts
        .into_iter()
        .map(|(h, (msg_count, trips))| {
            let trip_count = trips.len() as u32;
            (
                h,
                HexCell {
                    n_h: msg_count as f64 / trip_count as f64,
                    msg_count,
                    trip_count,
                },
            )
        })
        .collect();
    (HexDensityMap { config, cells }, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn grid() -> HexGridConfig {
        HexGridConfig::new(GeoPoint::new(72.8, 21.2).unwrap(), 25.0).unwrap()
    }

    fn msg(trip: &str, lon: f64, lat: f64) -> BusPositionMessage {
        BusPositionMessage {
            trip_id: trip.into(),
            route_id: "r".into(),
            timestamp: 0,
            position: GeoPoint::new(lon, lat).unwrap(),
        }
    }

    #[test]
    fn origin_is_hex_zero() {
        let g = grid();
        assert_eq!(hex_of(&g.origin, &g).unwrap(), HexIndex::new(0, 0));
    }

    #[test]
    fn rejects_far_points() {
        let g = grid();
        assert!(hex_of(&GeoPoint::new(75.0, 21.2).unwrap(), &g).is_err());
    }

    #[test]
    fn center_round_trip_within_edge() {
        let g = grid();
        let proj = LocalProjection::new(g.origin);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..500 {
            let p = GeoPoint::new(
                72.8 + rng.gen_range(-0.02..0.02),
                21.2 + rng.gen_range(-0.02..0.02),
            )
            .unwrap();
            let h = hex_of(&p, &g).unwrap();
            let center = g.center_of(&h);
            let planar = proj.forward(&p).unwrap();
            assert!(
                center.dist(&planar) <= g.edge_m + 1e-9,
                "point {:?} is {} m from center of {:?}",
                planar,
                center.dist(&planar),
                h
            );
        }
    }

    #[test]
    fn nearby_points_map_to_same_or_neighbor_hex() {
        let g = grid();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..500 {
            let lon = 72.8 + rng.gen_range(-0.02..0.02);
            let lat = 21.2 + rng.gen_range(-0.02..0.02);
            let a = hex_of(&GeoPoint::new(lon, lat).unwrap(), &g).unwrap();
            // ~1 m east
            let b = hex_of(&GeoPoint::new(lon + 1e-5, lat).unwrap(), &g).unwrap();
            assert!(a == b || a.is_neighbor(&b));
        }
    }

    #[test]
    fn degenerate_chord_is_single_hex() {
        let g = grid();
        let a = GeoPoint::new(72.805, 21.204).unwrap();
        let path = hexes_on_line(&a, &a, &g).unwrap();
        assert_eq!(path, vec![hex_of(&a, &g).unwrap()]);
    }

    #[test]
    fn chord_path_connected_and_duplicate_free() {
        let g = grid();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..50 {
            let a = GeoPoint::new(
                72.8 + rng.gen_range(-0.01..0.01),
                21.2 + rng.gen_range(-0.01..0.01),
            )
            .unwrap();
            let b = GeoPoint::new(
                72.8 + rng.gen_range(-0.01..0.01),
                21.2 + rng.gen_range(-0.01..0.01),
            )
            .unwrap();
            let path = hexes_on_line(&a, &b, &g).unwrap();
            assert_eq!(path[0], hex_of(&a, &g).unwrap());
            assert_eq!(*path.last().unwrap(), hex_of(&b, &g).unwrap());
            for w in path.windows(2) {
                assert!(w[0].is_neighbor(&w[1]), "gap between {:?} and {:?}", w[0], w[1]);
            }
            let unique: HashSet<_> = path.iter().collect();
            assert_eq!(unique.len(), path.len(), "duplicate hex in path");
        }
    }

    #[test]
    fn chord_reversal_reverses_list() {
        let g = grid();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = GeoPoint::new(
                72.8 + rng.gen_range(-0.01..0.01),
                21.2 + rng.gen_range(-0.01..0.01),
            )
            .unwrap();
            let b = GeoPoint::new(
                72.8 + rng.gen_range(-0.01..0.01),
                21.2 + rng.gen_range(-0.01..0.01),
            )
            .unwrap();
            let fwd = hexes_on_line(&a, &b, &g).unwrap();
            let mut rev = hexes_on_line(&b, &a, &g).unwrap();
            rev.reverse();
            assert_eq!(fwd, rev);
        }
    }

    #[test]
    fn chord_length_matches_dense_sampling_oracle() {
        let g = grid();
        let proj = LocalProjection::new(g.origin);
        // chord of 20 edge lengths, at an awkward angle
        let a = GeoPoint::new(72.801, 21.2015).unwrap();
        let pa = proj.forward(&a).unwrap();
        let target = PlanarPoint::new(pa.x + 20.0 * g.edge_m * 0.8, pa.y + 20.0 * g.edge_m * 0.6);
        let b = proj.inverse(&target).unwrap();

        let path = hexes_on_line(&a, &b, &g).unwrap();

        // Oracle: sample every edge/10 and collect distinct hexes in order.
        let pb = proj.forward(&b).unwrap();
        let len = pa.dist(&pb);
        let steps = (len / (g.edge_m / 10.0)).ceil() as usize;
        let mut oracle: Vec<HexIndex> = Vec::new();
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let p = PlanarPoint::new(pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y));
            let h = g.hex_of_planar(&p);
            if oracle.last() != Some(&h) {
                oracle.push(h);
            }
            // every sampled point must lie in some listed hex
            assert!(path.contains(&h), "sampled hex {h:?} missing from path");
        }
        assert!(
            (path.len() as i64 - oracle.len() as i64).abs() <= 2,
            "path {} hexes vs oracle {}",
            path.len(),
            oracle.len()
        );
    }

    #[test]
    fn density_single_trip_three_messages() {
        let g = grid();
        let ms = vec![
            msg("t1", 72.8, 21.2),
            msg("t1", 72.8, 21.2),
            msg("t1", 72.8, 21.2),
        ];
        let (map, skipped) = build_density_map(&ms, g);
        assert_eq!(skipped, 0);
        assert_eq!(map.n_h(&HexIndex::new(0, 0)), 3.0);
    }

    #[test]
    fn density_averages_over_trips() {
        let g = grid();
        let mut ms = vec![msg("t1", 72.8, 21.2), msg("t1", 72.8, 21.2)];
        for _ in 0..4 {
            ms.push(msg("t2", 72.8, 21.2));
        }
        let (map, _) = build_density_map(&ms, g);
        assert_eq!(map.n_h(&HexIndex::new(0, 0)), 3.0);
    }

    #[test]
    fn density_distinct_hexes() {
        let g = grid();
        // ~500 m apart: distinct hexes
        let ms = vec![msg("t1", 72.80, 21.20), msg("t1", 72.805, 21.20)];
        let (map, _) = build_density_map(&ms, g);
        assert_eq!(map.cells().len(), 2);
        for c in map.cells().values() {
            assert_eq!(c.n_h, 1.0);
        }
    }

    #[test]
    fn density_empty_input() {
        let (map, skipped) = build_density_map(&[], grid());
        assert!(map.cells().is_empty());
        assert_eq!(skipped, 0);
    }

    #[test]
    fn message_count_identity() {
        let g = grid();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut ms = Vec::new();
        for t in 0..20 {
            for _ in 0..rng.gen_range(1..30) {
                ms.push(msg(
                    &format!("t{t}"),
                    72.8 + rng.gen_range(-0.005..0.005),
                    21.2 + rng.gen_range(-0.005..0.005),
                ));
            }
        }
        let (map, skipped) = build_density_map(&ms, g);
        assert_eq!(skipped, 0);
        let total: u64 = map.cells().values().map(|c| c.msg_count).sum();
        assert_eq!(total, ms.len() as u64);
        for c in map.cells().values() {
            assert_eq!(c.n_h * c.trip_count as f64, c.msg_count as f64);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = grid();
        let ms = vec![msg("t1", 72.8, 21.2), msg("t2", 72.801, 21.201)];
        let (map, _) = build_density_map(&ms, g);
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let back = HexDensityMap::read_csv(buf.as_slice(), g).unwrap();
        assert_eq!(back.cells(), map.cells());
    }
}
