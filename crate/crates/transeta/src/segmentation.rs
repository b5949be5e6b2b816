//! Route segmentation: per-route compression-threshold optimization driven by
//! the message-density cost, segment construction, and cross-route merging of
//! dilated segments into the final network with its connectivity matrix.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    dilate_polyline, douglas_peucker, haversine_distance, polygon_difference, GeoPoint,
    PlanarPoint, PlanarPolygon, RoutePolyline,
};
use crate::hexgrid::{hexes_on_line, HexDensityMap};

/// Open bounds for the compression threshold, in coordinate degrees.
pub const EPSILON_MIN: f64 = 1e-4;
pub const EPSILON_MAX: f64 = 1e-3;

/// Fragments shorter than this are folded into the adjacent same-route
/// segment after merging.
pub const DEFAULT_MIN_FRAGMENT_M: f64 = 10.0;

/// Claimed chord intervals shorter than this are treated as boundary noise.
const MIN_CLAIM_M: f64 = 0.5;

/// One road segment of the network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    /// Polyline geometry; two points for a raw chord, more after merging.
    pub geometry: Vec<GeoPoint>,
    /// Haversine chord-sum of the geometry, meters.
    pub length_m: f64,
    /// Average messages per trip over the line joining the segment's ends.
    pub n_s: f64,
    /// Message density: n_s / length_m, messages per meter.
    pub density: f64,
    pub source_route_ids: Vec<String>,
}

impl Segment {
    pub fn endpoints(&self) -> (GeoPoint, GeoPoint) {
        (self.geometry[0], *self.geometry.last().unwrap())
    }
}

/// A route's traversal of one final segment, in the route's own arc metric.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RouteSpan {
    pub segment: usize,
    pub start_m: f64,
    pub end_m: f64,
}

impl RouteSpan {
    pub fn length_m(&self) -> f64 {
        self.end_m - self.start_m
    }
}

/// The merged transit network: segments, physical adjacency, and per-route
/// ordered traversal spans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentNetwork {
    pub segments: Vec<Segment>,
    edges: Vec<(usize, usize)>,
    pub route_spans: BTreeMap<String, Vec<RouteSpan>>,
}

impl SegmentNetwork {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Ordered segment indices traversed by a route.
    pub fn route_sequence(&self, route_id: &str) -> Vec<usize> {
        let mut seq = Vec::new();
        if let Some(spans) = self.route_spans.get(route_id) {
            for s in spans {
                if seq.last() != Some(&s.segment) {
                    seq.push(s.segment);
                }
            }
        }
        seq
    }

    pub fn index_of(&self, segment_id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.segment_id == segment_id)
    }
}

/// Binary physical-connectivity matrix: 1 where segments are consecutive on
/// some route or share a merged boundary, 0 elsewhere, zero diagonal.
pub fn connectivity_matrix(network: &SegmentNetwork) -> Array2<f64> {
    let n = network.len();
    let mut m = Array2::zeros((n, n));
    for &(i, j) in network.edges() {
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
    }
    m
}

/// Grid-search record for one route.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSearchResult {
    pub route_id: String,
    pub grid: Vec<f64>,
    pub costs: Vec<f64>,
    pub chosen: f64,
}

/// A segmented route: the chosen breakdown of one polyline plus the
/// bookkeeping merging needs.
#[derive(Debug, Clone)]
pub struct SegmentedRoute {
    pub route_id: String,
    pub epsilon: f64,
    pub segments: Vec<Segment>,
    /// Route-metric arc offsets of the break points (len = segments + 1).
    pub break_offsets_m: Vec<f64>,
}

/// Average messages per trip along the chord from `a` to `b`: the sum of
/// per-hexagon averages over the hexagons the chord passes through. Hexes
/// absent from the map contribute zero.
pub fn segment_messages(a: &GeoPoint, b: &GeoPoint, map: &HexDensityMap) -> Result<f64> {
    let hexes = hexes_on_line(a, b, map.config())?;
    Ok(hexes.iter().map(|h| map.n_h(h)).sum())
}

/// Message density m = n_s / l.
pub fn message_density(n_s: f64, length_m: f64) -> Result<f64> {
    if !(length_m > 0.0) {
        return Err(Error::InvalidSegmentLength(length_m));
    }
    Ok(n_s / length_m)
}

/// Segmentation cost C = sigma(m) / l_avg: the population standard deviation
/// of segment message densities over the mean segment length. A single
/// segment costs zero.
pub fn segmentation_cost(segments: &[Segment]) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    let n = segments.len() as f64;
    let mean_density = segments.iter().map(|s| s.density).sum::<f64>() / n;
    let var = segments
        .iter()
        .map(|s| (s.density - mean_density).powi(2))
        .sum::<f64>()
        / n;
    let l_avg = segments.iter().map(|s| s.length_m).sum::<f64>() / n;
    var.sqrt() / l_avg
}

/// `n` log-spaced epsilon values strictly inside (1e-4, 1e-3).
pub fn log_epsilon_grid(n: usize) -> Vec<f64> {
    let lo = EPSILON_MIN.log10();
    let hi = EPSILON_MAX.log10();
    (1..=n)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n + 1) as f64))
        .collect()
}

/// Splits a route at the break points chosen by Douglas-Peucker with the
/// given epsilon. Each segment is the chord between consecutive break
/// points, carrying its length, message count, and density.
pub fn segment_route(
    route: &RoutePolyline,
    epsilon: f64,
    map: &HexDensityMap,
) -> Result<SegmentedRoute> {
    let breaks = douglas_peucker(route, epsilon)?;
    let pts = route.points();
    let cum = route.cumulative_m();

    let mut segments = Vec::with_capacity(breaks.len() - 1);
    for (k, w) in breaks.windows(2).enumerate() {
        let (a, b) = (pts[w[0]], pts[w[1]]);
        let length_m = haversine_distance(&a, &b);
        let n_s = segment_messages(&a, &b, map)?;
        segments.push(Segment {
            segment_id: format!("{}-{:04}", route.route_id(), k),
            geometry: vec![a, b],
            length_m,
            n_s,
            density: message_density(n_s, length_m)?,
            source_route_ids: vec![route.route_id().to_string()],
        });
    }
    Ok(SegmentedRoute {
        route_id: route.route_id().to_string(),
        epsilon,
        segments,
        break_offsets_m: breaks.iter().map(|&i| cum[i]).collect(),
    })
}

/// Grid search for the epsilon minimizing the segmentation cost on one
/// route. Every grid value is evaluated; ties break toward the larger
/// epsilon (fewer, longer segments).
pub fn optimize_epsilon(
    route: &RoutePolyline,
    map: &HexDensityMap,
    grid: &[f64],
) -> Result<EpsilonSearchResult> {
    if grid.is_empty() {
        return Err(Error::EmptyEpsilonGrid);
    }
    for &e in grid {
        if !(e > EPSILON_MIN && e < EPSILON_MAX) {
            return Err(Error::EpsilonOutOfBounds(e));
        }
    }
    let mut costs = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None; // (cost, epsilon)
    for &eps in grid {
        let segmented = segment_route(route, eps, map)?;
        let c = segmentation_cost(&segmented.segments);
        costs.push(c);
        best = Some(match best {
            None => (c, eps),
            Some((bc, be)) if c < bc || (c == bc && eps > be) => (c, eps),
            Some(b) => b,
        });
    }
    Ok(EpsilonSearchResult {
        route_id: route.route_id().to_string(),
        grid: grid.to_vec(),
        costs,
        chosen: best.unwrap().1,
    })
}

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

/// Full merge output: the network plus the polygon bookkeeping that the area
/// conservation checks need.
#[derive(Debug, Clone)]
pub struct MergeDetail {
    pub network: SegmentNetwork,
    /// Dilated polygon of every input segment, in input order.
    pub input_polygons: Vec<PlanarPolygon>,
    /// Remaining footprint pieces of each final segment.
    pub final_polygons: Vec<Vec<PlanarPolygon>>,
}

struct Item {
    route_idx: usize,
    id: String,
    chord: (PlanarPoint, PlanarPoint),
    chord_geo: (GeoPoint, GeoPoint),
    start_m: f64,
    end_m: f64,
    poly: PlanarPolygon,
    area: f64,
    bbox: (PlanarPoint, PlanarPoint),
}

#[derive(Debug, Clone, Copy)]
struct Claim {
    /// Index into `items`: whose chord this interval lies on.
    chord_item: usize,
    /// Index into `items`: which accepted segment's footprint covers it.
    owner_item: usize,
    t0: f64,
    t1: f64,
}

/// Point at parameter `t` along a chord, exact at the endpoints.
fn chord_point(chord: &(GeoPoint, GeoPoint), t: f64) -> Result<GeoPoint> {
    if t == 0.0 {
        return Ok(chord.0);
    }
    if t == 1.0 {
        return Ok(chord.1);
    }
    GeoPoint::new(
        chord.0.lon() + t * (chord.1.lon() - chord.0.lon()),
        chord.0.lat() + t * (chord.1.lat() - chord.0.lat()),
    )
}

fn bbox_overlap(a: &(PlanarPoint, PlanarPoint), b: &(PlanarPoint, PlanarPoint)) -> bool {
    a.0.x <= b.1.x && b.0.x <= a.1.x && a.0.y <= b.1.y && b.0.y <= a.1.y
}

fn chord_bbox(a: &PlanarPoint, b: &PlanarPoint, pad: f64) -> (PlanarPoint, PlanarPoint) {
    (
        PlanarPoint::new(a.x.min(b.x) - pad, a.y.min(b.y) - pad),
        PlanarPoint::new(a.x.max(b.x) + pad, a.y.max(b.y) + pad),
    )
}

/// Parameters along the chord `p0`->`p1` where it crosses edges of `rings`.
fn crossing_params(p0: &PlanarPoint, p1: &PlanarPoint, poly: &PlanarPolygon, out: &mut Vec<f64>) {
    let d1 = PlanarPoint::new(p1.x - p0.x, p1.y - p0.y);
    let mut ring_params = |ring: &[PlanarPoint]| {
        let n = ring.len();
        for i in 0..n {
            let a = &ring[i];
            let b = &ring[(i + 1) % n];
            let d2 = PlanarPoint::new(b.x - a.x, b.y - a.y);
            let denom = d1.x * d2.y - d1.y * d2.x;
            let ap = PlanarPoint::new(a.x - p0.x, a.y - p0.y);
            if denom.abs() < 1e-18 {
                // Parallel; if collinear, the edge endpoints partition the chord.
                if (ap.x * d1.y - ap.y * d1.x).abs() < 1e-18 {
                    let len2 = d1.x * d1.x + d1.y * d1.y;
                    if len2 > 0.0 {
                        out.push(((ap.x * d1.x + ap.y * d1.y) / len2).clamp(0.0, 1.0));
                        let bp = PlanarPoint::new(b.x - p0.x, b.y - p0.y);
                        out.push(((bp.x * d1.x + bp.y * d1.y) / len2).clamp(0.0, 1.0));
                    }
                }
                continue;
            }
            let t = (ap.x * d2.y - ap.y * d2.x) / denom;
            let u = (ap.x * d1.y - ap.y * d1.x) / denom;
            if (-1e-12..=1.0 + 1e-12).contains(&u) && (-1e-12..=1.0 + 1e-12).contains(&t) {
                out.push(t.clamp(0.0, 1.0));
            }
        }
    };
    ring_params(poly.exterior());
    for h in poly.holes() {
        ring_params(h);
    }
}

/// Intervals of the chord (as parameters in [0,1]) lying inside any of the
/// polygons.
fn chord_in_polygons(
    p0: &PlanarPoint,
    p1: &PlanarPoint,
    polys: &[PlanarPolygon],
) -> Vec<(f64, f64)> {
    let mut params = vec![0.0, 1.0];
    for poly in polys {
        crossing_params(p0, p1, poly, &mut params);
    }
    params.sort_by(f64::total_cmp);
    params.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for w in params.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        if tb - ta < 1e-12 {
            continue;
        }
        let tm = (ta + tb) / 2.0;
        let mid = PlanarPoint::new(p0.x + tm * (p1.x - p0.x), p0.y + tm * (p1.y - p0.y));
        if polys.iter().any(|p| p.contains(&mid)) {
            match intervals.last_mut() {
                Some(last) if (last.1 - ta).abs() < 1e-12 => last.1 = tb,
                _ => intervals.push((ta, tb)),
            }
        }
    }
    intervals
}

/// Subtracts already-claimed parameter ranges from `interval`.
fn clip_unclaimed(interval: (f64, f64), claimed: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut free = vec![interval];
    for &(c0, c1) in claimed {
        let mut next = Vec::with_capacity(free.len() + 1);
        for (f0, f1) in free {
            if c1 <= f0 || c0 >= f1 {
                next.push((f0, f1));
            } else {
                if c0 > f0 {
                    next.push((f0, c0));
                }
                if c1 < f1 {
                    next.push((c1, f1));
                }
            }
        }
        free = next;
    }
    free
}

/// Merges per-route segments into the final network.
///
/// Each segment is dilated into a polygon; polygons are sorted by area in
/// descending order, and each one in turn has the union of the already
/// accepted footprints subtracted from it. Empty remainders drop out, so
/// overlapping route sections end up represented by one shared segment.
/// Remainder fragments shorter than `min_fragment_m` are folded into the
/// adjacent same-route segment. Lengths and message counts are recomputed
/// from the final geometry.
pub fn merge_segments(
    routes: &[SegmentedRoute],
    map: &HexDensityMap,
    dilation_radius: f64,
    min_fragment_m: f64,
) -> Result<SegmentNetwork> {
    Ok(merge_segments_detailed(routes, map, dilation_radius, min_fragment_m)?.network)
}

pub fn merge_segments_detailed(
    routes: &[SegmentedRoute],
    map: &HexDensityMap,
    dilation_radius: f64,
    min_fragment_m: f64,
) -> Result<MergeDetail> {
    if !(dilation_radius > 0.0) || !dilation_radius.is_finite() {
        return Err(Error::InvalidRadius(dilation_radius));
    }

    // -- dilate every input chord ------------------------------------------
    let mut items: Vec<Item> = Vec::new();
    for (route_idx, sr) in routes.iter().enumerate() {
        for (k, seg) in sr.segments.iter().enumerate() {
            let (ga, gb) = seg.endpoints();
            let (a, b) = (PlanarPoint::from(ga), PlanarPoint::from(gb));
            let poly = dilate_polyline(&[a, b], dilation_radius)?;
            let area = poly.area();
            let bbox = poly.bounding_box();
            items.push(Item {
                route_idx,
                id: seg.segment_id.clone(),
                chord: (a, b),
                chord_geo: (ga, gb),
                start_m: sr.break_offsets_m[k],
                end_m: sr.break_offsets_m[k + 1],
                poly,
                area,
                bbox,
            });
        }
    }
    let input_polygons: Vec<PlanarPolygon> = items.iter().map(|it| it.poly.clone()).collect();

    // -- area-sorted acceptance fold ---------------------------------------
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .area
            .total_cmp(&items[a].area)
            .then_with(|| items[a].id.cmp(&items[b].id))
    });

    // Pieces kept by each accepted item, with their bounding boxes.
    let mut pieces: Vec<Vec<PlanarPolygon>> = vec![Vec::new(); items.len()];
    let mut piece_bbox: Vec<(PlanarPoint, PlanarPoint)> = items.iter().map(|i| i.bbox).collect();
    let mut accepted: Vec<usize> = Vec::new();
    const MIN_PIECE_AREA: f64 = 1e-14; // square degrees, ~1 cm^2

    for &idx in &order {
        let mut rem = vec![items[idx].poly.clone()];
        for &a in &accepted {
            if !bbox_overlap(&items[idx].bbox, &piece_bbox[a]) {
                continue;
            }
            for piece in &pieces[a] {
                let mut next = Vec::with_capacity(rem.len());
                for r in rem {
                    next.extend(polygon_difference(&r, piece));
                }
                rem = next;
                if rem.is_empty() {
                    break;
                }
            }
            if rem.is_empty() {
                break;
            }
        }
        rem.retain(|p| p.area() > MIN_PIECE_AREA);
        if !rem.is_empty() {
            let mut min = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
            let mut max = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in &rem {
                let (lo, hi) = p.bounding_box();
                min.x = min.x.min(lo.x);
                min.y = min.y.min(lo.y);
                max.x = max.x.max(hi.x);
                max.y = max.y.max(hi.y);
            }
            piece_bbox[idx] = (min, max);
            pieces[idx] = rem;
            accepted.push(idx);
        }
    }

    // -- claim chord intervals for every route -----------------------------
    // Every chord is fully covered by the union of all footprints, and the
    // accepted pieces partition that union, so the claims partition each
    // chord (up to boundary slivers).
    let mut route_claims: Vec<Vec<Claim>> = vec![Vec::new(); routes.len()];
    let mut item_indices_by_route: Vec<Vec<usize>> = vec![Vec::new(); routes.len()];
    for (i, it) in items.iter().enumerate() {
        item_indices_by_route[it.route_idx].push(i);
    }

    for (route_idx, item_ids) in item_indices_by_route.iter().enumerate() {
        for &ci in item_ids {
            let it = &items[ci];
            let chord_len_m = haversine_distance(&it.chord_geo.0, &it.chord_geo.1);
            let cb = chord_bbox(&it.chord.0, &it.chord.1, 0.0);
            let mut claimed: Vec<(f64, f64)> = Vec::new();
            let mut chord_claims: Vec<Claim> = Vec::new();
            for &a in &accepted {
                if !bbox_overlap(&cb, &piece_bbox[a]) {
                    continue;
                }
                for (t0, t1) in chord_in_polygons(&it.chord.0, &it.chord.1, &pieces[a]) {
                    for (f0, f1) in clip_unclaimed((t0, t1), &claimed) {
                        if (f1 - f0) * chord_len_m < MIN_CLAIM_M {
                            continue;
                        }
                        claimed.push((f0, f1));
                        chord_claims.push(Claim {
                            chord_item: ci,
                            owner_item: a,
                            t0: f0,
                            t1: f1,
                        });
                    }
                }
            }
            chord_claims.sort_by(|x, y| x.t0.total_cmp(&y.t0));
            route_claims[route_idx].extend(chord_claims);
        }
    }

    // -- fold short fragments into the adjacent same-route claim -----------
    for (route_idx, claims) in route_claims.iter_mut().enumerate() {
        for i in 0..claims.len() {
            let c = claims[i];
            if c.owner_item != c.chord_item {
                continue; // only a segment's own remainder can be a fragment
            }
            let len_m = (c.t1 - c.t0)
                * (items[c.chord_item].end_m - items[c.chord_item].start_m).max(0.0);
            if len_m >= min_fragment_m {
                continue;
            }
            let same_route_owner = |cl: &Claim| items[cl.owner_item].route_idx == route_idx;
            let target = if i > 0 && same_route_owner(&claims[i - 1]) {
                Some(claims[i - 1].owner_item)
            } else if i + 1 < claims.len() && same_route_owner(&claims[i + 1]) {
                Some(claims[i + 1].owner_item)
            } else {
                None
            };
            if let Some(owner) = target {
                if owner != c.owner_item {
                    // footprint moves with the line fragment
                    let moved = std::mem::take(&mut pieces[c.chord_item]);
                    let keep_any = claims
                        .iter()
                        .enumerate()
                        .any(|(j, cl)| j != i && cl.owner_item == c.chord_item);
                    if keep_any {
                        pieces[c.chord_item] = moved; // other pieces still in use
                    } else {
                        pieces[owner].extend(moved);
                    }
                    claims[i].owner_item = owner;
                }
            }
        }
    }

    // -- group claims into runs and build final segments -------------------
    // A run is a maximal stretch of consecutive claims on one route with the
    // same owner. Runs on the owner's own route carry geometry; runs on
    // other routes are traversal-only.
    #[derive(Debug)]
    struct Run {
        route_idx: usize,
        owner_item: usize,
        claims: Vec<Claim>,
    }
    let mut runs: Vec<Run> = Vec::new();
    for (route_idx, claims) in route_claims.iter().enumerate() {
        for c in claims {
            match runs.last_mut() {
                Some(r) if r.route_idx == route_idx && r.owner_item == c.owner_item => {
                    r.claims.push(*c)
                }
                _ => runs.push(Run {
                    route_idx,
                    owner_item: c.owner_item,
                    claims: vec![*c],
                }),
            }
        }
    }

    // Geometry-bearing runs, keyed by owner in acceptance order.
    let mut final_of_run: Vec<Option<usize>> = vec![None; runs.len()];
    let mut owner_finals: BTreeMap<usize, Vec<usize>> = BTreeMap::new(); // owner -> final idxs
    let mut final_segments: Vec<Segment> = Vec::new();
    let mut final_polygons: Vec<Vec<PlanarPolygon>> = Vec::new();
    let mut final_routes: Vec<std::collections::BTreeSet<String>> = Vec::new();

    for &owner in &accepted {
        let own_runs: Vec<usize> = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.owner_item == owner && r.route_idx == items[owner].route_idx)
            .map(|(i, _)| i)
            .collect();
        if own_runs.is_empty() {
            continue; // fully absorbed elsewhere
        }
        let multi = own_runs.len() > 1;
        for (k, &run_idx) in own_runs.iter().enumerate() {
            let run = &runs[run_idx];
            let mut geometry: Vec<GeoPoint> = Vec::new();
            for c in &run.claims {
                let it = &items[c.chord_item];
                for t in [c.t0, c.t1] {
                    let p = chord_point(&it.chord_geo, t)?;
                    if geometry.last() != Some(&p) {
                        geometry.push(p);
                    }
                }
            }
            if geometry.len() < 2 {
                continue;
            }
            let length_m: f64 = geometry
                .windows(2)
                .map(|w| haversine_distance(&w[0], &w[1]))
                .sum();
            if length_m <= 0.0 {
                continue;
            }
            let (a, b) = (geometry[0], *geometry.last().unwrap());
            let n_s = segment_messages(&a, &b, map)?;
            let id = if multi {
                format!("{}.{}", items[owner].id, k)
            } else {
                items[owner].id.clone()
            };
            let fin = final_segments.len();
            final_segments.push(Segment {
                segment_id: id,
                geometry,
                length_m,
                n_s,
                density: message_density(n_s, length_m)?,
                source_route_ids: Vec::new(),
            });
            final_polygons.push(Vec::new());
            final_routes.push(Default::default());
            final_of_run[run_idx] = Some(fin);
            owner_finals.entry(owner).or_default().push(fin);
        }
    }

    // Assign the owner's footprint pieces to its final segments: each piece
    // goes to the final segment whose geometry starts inside it.
    for (&owner, finals) in &owner_finals {
        'piece: for piece in &pieces[owner] {
            for &f in finals {
                let p0 = PlanarPoint::from(final_segments[f].geometry[0]);
                let mid_idx = final_segments[f].geometry.len() / 2;
                let pm = PlanarPoint::from(final_segments[f].geometry[mid_idx]);
                if piece.contains(&pm) || piece.contains(&p0) {
                    final_polygons[f].push(piece.clone());
                    continue 'piece;
                }
            }
            final_polygons[finals[0]].push(piece.clone());
        }
    }

    // Traversal-only runs attach to the owner's final segment whose footprint
    // contains the run midpoint.
    for (run_idx, run) in runs.iter().enumerate() {
        if final_of_run[run_idx].is_some() {
            continue;
        }
        let owner = run.owner_item;
        let finals = match owner_finals.get(&owner) {
            Some(f) if !f.is_empty() => f,
            _ => continue, // owner fully absorbed; claims re-homed below
        };
        let c = run.claims[run.claims.len() / 2];
        let it = &items[c.chord_item];
        let tm = (c.t0 + c.t1) / 2.0;
        let mid = PlanarPoint::new(
            it.chord.0.x + tm * (it.chord.1.x - it.chord.0.x),
            it.chord.0.y + tm * (it.chord.1.y - it.chord.0.y),
        );
        let chosen = finals
            .iter()
            .copied()
            .find(|&f| final_polygons[f].iter().any(|p| p.contains(&mid)))
            .unwrap_or(finals[0]);
        final_of_run[run_idx] = Some(chosen);
    }

    // -- spans, route lists, adjacency --------------------------------------
    let mut route_spans: BTreeMap<String, Vec<RouteSpan>> = BTreeMap::new();
    let mut edges: std::collections::BTreeSet<(usize, usize)> = Default::default();

    for (route_idx, sr) in routes.iter().enumerate() {
        let mut spans: Vec<RouteSpan> = Vec::new();
        for (run_idx, run) in runs.iter().enumerate() {
            if run.route_idx != route_idx {
                continue;
            }
            let fin = match final_of_run[run_idx] {
                Some(f) => f,
                None => match spans.last() {
                    Some(prev) => prev.segment, // re-home orphan to predecessor
                    None => continue,
                },
            };
            for c in &run.claims {
                let it = &items[c.chord_item];
                let start_m = it.start_m + c.t0 * (it.end_m - it.start_m);
                let end_m = it.start_m + c.t1 * (it.end_m - it.start_m);
                match spans.last_mut() {
                    Some(last) if last.segment == fin => last.end_m = end_m,
                    _ => spans.push(RouteSpan {
                        segment: fin,
                        start_m,
                        end_m,
                    }),
                }
            }
        }
        for w in spans.windows(2) {
            let (i, j) = (w[0].segment, w[1].segment);
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        for s in &spans {
            final_routes[s.segment].insert(sr.route_id.clone());
        }
        route_spans.insert(sr.route_id.clone(), spans);
    }

    for (f, seg) in final_segments.iter_mut().enumerate() {
        seg.source_route_ids = final_routes[f].iter().cloned().collect();
    }

    Ok(MergeDetail {
        network: SegmentNetwork {
            segments: final_segments,
            edges: edges.into_iter().collect(),
            route_spans,
        },
        input_polygons,
        final_polygons,
    })
}
