//! Raw position-message parsing, route snapping, trip reconstruction, and
//! aggregation of per-segment dwell times into the hourly feature matrix.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, Timelike, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{nearest_point_on_polyline, GeoPoint, RoutePolyline};
use crate::segmentation::{RouteSpan, SegmentNetwork};

/// Free-flow speed (30 km/h) used to impute dwell for segments that were
/// never observed.
pub const FREE_FLOW_MPS: f64 = 8.33;

/// Default perpendicular snap acceptance threshold.
pub const DEFAULT_SNAP_THRESHOLD_M: f64 = 50.0;

/// Default tolerated backward jump inside a trip before a fix is dropped.
pub const DEFAULT_BACKWARD_JUMP_M: f64 = 100.0;

/// One position report from a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPositionMessage {
    pub trip_id: String,
    pub route_id: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub position: GeoPoint,
}

/// What happened to the lines that did not become messages.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub duplicates: usize,
    /// (1-based line number, reason)
    pub rejected: Vec<(usize, String)>,
}

/// Parses the message CSV: `trip_id,timestamp,lon,lat,route_id` with an
/// ISO-8601 UTC timestamp. Malformed lines are counted and skipped, never
/// aborting the batch; duplicate (trip, timestamp) pairs keep the first
/// occurrence. Messages come back sorted by (trip, timestamp) with strictly
/// increasing timestamps inside each trip.
pub fn parse_messages<R: Read>(reader: R) -> Result<(Vec<BusPositionMessage>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(reader);
    let mut report = ParseReport::default();
    let mut messages: Vec<(usize, BusPositionMessage)> = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let line_no = i + 2; // header is line 1
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push((line_no, format!("unreadable record: {e}")));
                continue;
            }
        };
        match parse_record(&rec) {
            Ok(msg) => messages.push((i, msg)),
            Err(reason) => report.rejected.push((line_no, reason)),
        }
    }

    // Keep-first dedup on (trip, timestamp).
    messages.sort_by(|(ia, a), (ib, b)| {
        (&a.trip_id, a.timestamp, ia).cmp(&(&b.trip_id, b.timestamp, ib))
    });
    let mut out: Vec<BusPositionMessage> = Vec::with_capacity(messages.len());
    for (_, m) in messages {
        if out
            .last()
            .is_some_and(|p| p.trip_id == m.trip_id && p.timestamp == m.timestamp)
        {
            report.duplicates += 1;
            continue;
        }
        out.push(m);
    }
    report.accepted = out.len();
    Ok((out, report))
}

fn parse_record(rec: &csv::StringRecord) -> std::result::Result<BusPositionMessage, String> {
    if rec.len() < 5 {
        return Err(format!("expected 5 fields, got {}", rec.len()));
    }
    let trip_id = rec[0].trim().to_string();
    if trip_id.is_empty() {
        return Err("empty trip_id".into());
    }
    let ts: DateTime<Utc> = rec[1]
        .trim()
        .parse()
        .map_err(|e| format!("bad timestamp {:?}: {e}", &rec[1]))?;
    let lon: f64 = rec[2].trim().parse().map_err(|_| "bad lon".to_string())?;
    let lat: f64 = rec[3].trim().parse().map_err(|_| "bad lat".to_string())?;
    let position = GeoPoint::new(lon, lat).map_err(|e| e.to_string())?;
    Ok(BusPositionMessage {
        trip_id,
        route_id: rec[4].trim().to_string(),
        timestamp: ts.timestamp(),
        position,
    })
}

/// A message successfully snapped onto its route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub offset_m: f64,
    pub distance_m: f64,
}

/// Snap outcome: either an arc offset or the rejection distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnapOutcome {
    Accepted(Snap),
    Rejected { distance_m: f64 },
}

/// Projects a message onto its route; accepted iff the perpendicular
/// distance is within `threshold_m`.
pub fn snap_to_route(
    msg: &BusPositionMessage,
    route: &RoutePolyline,
    threshold_m: f64,
) -> SnapOutcome {
    let near = nearest_point_on_polyline(&msg.position, route);
    if near.distance_m <= threshold_m {
        SnapOutcome::Accepted(Snap {
            offset_m: near.arc_offset_m,
            distance_m: near.distance_m,
        })
    } else {
        SnapOutcome::Rejected {
            distance_m: near.distance_m,
        }
    }
}

/// An accepted fix on the route's arc metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedOffset {
    pub timestamp: i64,
    pub offset_m: f64,
}

/// Makes a trip's offset sequence non-decreasing: fixes jumping backward by
/// more than `backward_jump_m` are dropped, smaller backward wiggles are
/// clamped to the running maximum.
pub fn repair_monotonic(track: &[TimedOffset], backward_jump_m: f64) -> Vec<TimedOffset> {
    let mut out: Vec<TimedOffset> = Vec::with_capacity(track.len());
    let mut high = f64::NEG_INFINITY;
    for &t in track {
        if high.is_finite() && t.offset_m < high - backward_jump_m {
            continue;
        }
        high = high.max(t.offset_m);
        out.push(TimedOffset {
            timestamp: t.timestamp,
            offset_m: high,
        });
    }
    out
}

/// Hourly slot layout: `count` one-hour bins starting at `start_hour` UTC.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlotConfig {
    pub start_hour: u32,
    pub count: usize,
}

impl Default for SlotConfig {
    fn default() -> Self {
        // 8 AM to 8 PM
        SlotConfig {
            start_hour: 8,
            count: 12,
        }
    }
}

impl SlotConfig {
    /// Slot index for a UTC timestamp, if it falls inside the window.
    pub fn slot_of(&self, timestamp: i64) -> Option<usize> {
        let dt = DateTime::<Utc>::from_timestamp(timestamp, 0)?;
        let hour = dt.hour();
        if hour < self.start_hour {
            return None;
        }
        let slot = (hour - self.start_hour) as usize;
        (slot < self.count).then_some(slot)
    }

    /// Calendar day (UTC) of a timestamp, for grouping observations.
    pub fn day_of(&self, timestamp: i64) -> i64 {
        timestamp.div_euclid(86_400)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.count)
            .map(|i| format!("h{:02}", self.start_hour as usize + i))
            .collect()
    }
}

/// One traversal of one segment by one trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DwellObservation {
    pub segment_id: String,
    pub segment_idx: usize,
    /// Hour slot containing the entry time.
    pub slot: usize,
    /// UTC day of the entry time, for splitting data by day.
    pub day: i64,
    pub dwell_s: f64,
    pub trip_id: String,
}

/// First time the track reaches arc offset `x`, by linear interpolation
/// between consecutive fixes. The track must be non-decreasing in offset.
fn time_at_offset(track: &[TimedOffset], x: f64) -> Option<f64> {
    if track.is_empty() || x < track[0].offset_m {
        return None;
    }
    for w in track.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x == a.offset_m {
            return Some(a.timestamp as f64);
        }
        if x > a.offset_m && x <= b.offset_m {
            if b.offset_m == a.offset_m {
                continue;
            }
            let frac = (x - a.offset_m) / (b.offset_m - a.offset_m);
            return Some(a.timestamp as f64 + frac * (b.timestamp - a.timestamp) as f64);
        }
    }
    if x == track.last().unwrap().offset_m {
        return Some(track.last().unwrap().timestamp as f64);
    }
    None
}

/// Dwell observations for one trip: entry and exit times of every route
/// span fully traversed between the first and last fix, assigned to the slot
/// containing the entry time.
pub fn dwell_times(
    trip_id: &str,
    track: &[TimedOffset],
    spans: &[RouteSpan],
    segment_ids: &[String],
    slots: &SlotConfig,
) -> Vec<DwellObservation> {
    if track.len() < 2 {
        return Vec::new();
    }
    let first = track[0].offset_m;
    let last = track.last().unwrap().offset_m;

    let mut out = Vec::new();
    for span in spans {
        if span.start_m < first || span.end_m > last || span.length_m() <= 0.0 {
            continue;
        }
        let (Some(entry), Some(exit)) = (
            time_at_offset(track, span.start_m),
            time_at_offset(track, span.end_m),
        ) else {
            continue;
        };
        let dwell_s = exit - entry;
        if dwell_s <= 0.0 || dwell_s > 3600.0 {
            continue;
        }
        let Some(slot) = slots.slot_of(entry as i64) else {
            continue;
        };
        out.push(DwellObservation {
            segment_id: segment_ids[span.segment].clone(),
            segment_idx: span.segment,
            slot,
            day: slots.day_of(entry as i64),
            dwell_s,
            trip_id: trip_id.to_string(),
        });
    }
    out
}

/// Dense per-segment, per-slot dwell matrix with its observation mask.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    /// N x P dwell seconds; observed cells hold means, the rest imputations.
    pub values: Array2<f64>,
    /// True where the cell was actually observed.
    pub mask: Array2<bool>,
    pub segment_ids: Vec<String>,
    pub slot_labels: Vec<String>,
}

impl FeatureMatrix {
    pub fn n_segments(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_slots(&self) -> usize {
        self.values.ncols()
    }

    pub fn masked_fraction(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        let observed = self.mask.iter().filter(|&&m| m).count();
        1.0 - observed as f64 / total as f64
    }
}

/// Builds the feature matrix: each cell is the mean dwell over its
/// observations; empty cells are masked out and then imputed with the
/// segment's own observed mean, falling back to the free-flow dwell
/// (length / 8.33 m/s) for segments never observed at all. Imputation never
/// touches observed cells.
pub fn build_feature_matrix(
    observations: &[DwellObservation],
    network: &SegmentNetwork,
    slots: &SlotConfig,
) -> Result<FeatureMatrix> {
    let n = network.len();
    let p = slots.count;

    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for obs in observations {
        if obs.segment_idx >= n {
            return Err(Error::UnknownSegment(obs.segment_id.clone()));
        }
        if obs.slot >= p {
            return Err(Error::Malformed(format!(
                "slot {} out of range for observation on {}",
                obs.slot, obs.segment_id
            )));
        }
        let e = acc.entry((obs.segment_idx, obs.slot)).or_insert((0.0, 0));
        e.0 += obs.dwell_s;
        e.1 += 1;
    }

    let mut values = Array2::zeros((n, p));
    let mut mask = Array2::from_elem((n, p), false);
    for (&(i, j), &(sum, count)) in &acc {
        values[(i, j)] = sum / count as f64;
        mask[(i, j)] = true;
    }

    for i in 0..n {
        let observed: Vec<f64> = (0..p).filter(|&j| mask[(i, j)]).map(|j| values[(i, j)]).collect();
        let fill = if observed.is_empty() {
            network.segments[i].length_m / FREE_FLOW_MPS
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        for j in 0..p {
            if !mask[(i, j)] {
                values[(i, j)] = fill;
            }
        }
    }

    Ok(FeatureMatrix {
        values,
        mask,
        segment_ids: network.segments.iter().map(|s| s.segment_id.clone()).collect(),
        slot_labels: slots.labels(),
    })
}
