//! LPR event ingestion, departure-time extraction and plate matching.
//!
//! CSV schema (header required, times in decimal seconds since period start):
//!
//! ```text
//! intersection_id,lane_id,plate,detected_time,movement
//! ```
//!
//! `movement` is one of `left`, `through`, `right`. Plates are opaque tokens
//! (hashed upstream of this library); matching only ever compares them for
//! equality and no raw plate strings are persisted in any artifact.
//!
//! Signal timing is a JSON list of cycles:
//!
//! ```json
//! [{"red_start": 0.0, "green_start": 48.0, "cycle_end": 80.0}, ...]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Left,
    Through,
    Right,
}

impl std::str::FromStr for Movement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "left" => Ok(Movement::Left),
            "through" => Ok(Movement::Through),
            "right" => Ok(Movement::Right),
            other => Err(format!(
                "unknown movement `{other}` (expected left|through|right)"
            )),
        }
    }
}

/// Per-movement offset between crossing the upstream stop line and entering
/// the link, in seconds.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MovementOffsets {
    pub left: f64,
    pub through: f64,
    pub right: f64,
}

impl MovementOffsets {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, movement: Movement) -> f64 {
        match movement {
            Movement::Left => self.left,
            Movement::Through => self.through,
            Movement::Right => self.right,
        }
    }
}

/// One camera observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LprRecord {
    pub intersection_id: String,
    pub lane_id: String,
    pub plate: String,
    pub detected_time: f64,
    pub movement: Movement,
}

/// One signal cycle: red from `red_start`, green from `green_start`, next
/// cycle (or end of plan) at `cycle_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub red_start: f64,
    pub green_start: f64,
    pub cycle_end: f64,
}

impl Cycle {
    pub fn red_duration(&self) -> f64 {
        self.green_start - self.red_start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.red_start && t < self.cycle_end
    }

    pub fn in_red(&self, t: f64) -> bool {
        t >= self.red_start && t < self.green_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalTiming {
    cycles: Vec<Cycle>,
}

impl SignalTiming {
    pub fn new(cycles: Vec<Cycle>) -> Result<Self> {
        if cycles.is_empty() {
            return Err(Error::invalid("signal timing needs at least one cycle"));
        }
        for (i, c) in cycles.iter().enumerate() {
            if !(c.red_start < c.green_start && c.green_start < c.cycle_end) {
                return Err(Error::invalid(format!(
                    "cycle {i} violates red_start < green_start < cycle_end: {c:?}"
                )));
            }
            if i > 0 && cycles[i - 1].cycle_end > c.red_start + 1e-9 {
                return Err(Error::invalid(format!(
                    "cycles {} and {i} overlap or are out of order",
                    i - 1
                )));
            }
        }
        Ok(SignalTiming { cycles })
    }

    /// A periodic plan: cycles `[offset + k*cycle_len, ...)` with red for the
    /// first `red Duration` seconds of each, covering at least `horizon`.
    pub fn periodic(offset: f64, cycle_len: f64, red: f64, horizon: f64) -> Result<Self> {
        if !(red > 0.0 && red < cycle_len) {
            return Err(Error::invalid("need 0 < red < cycle length"));
        }
        let mut cycles = Vec::new();
        let mut start = offset;
        while start < horizon {
            cycles.push(Cycle {
                red_start: start,
                green_start: start + red,
                cycle_end: start + cycle_len,
            });
            start += cycle_len;
        }
        SignalTiming::new(cycles)
    }

    pub fn cycles(&self) -> &[Cycle] {
        &self.cycles
    }

    pub fn cycle_index_at(&self, t: f64) -> Option<usize> {
        self.cycles.iter().position(|c| c.contains(t))
    }

    /// True when `t` lies in some cycle's red interval.
    pub fn in_red(&self, t: f64) -> bool {
        self.cycle_index_at(t)
            .map(|i| self.cycles[i].in_red(t))
            .unwrap_or(false)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cycles: Vec<Cycle> = serde_json::from_str(&data).map_err(|e| Error::BadSchema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        SignalTiming::new(cycles)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let data = serde_json::to_string_pretty(&self.cycles).expect("serializable");
        std::fs::write(path, data).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// An [`LprRecord`] with its extracted stop-line departure time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureRecord {
    pub record: LprRecord,
    pub departure_time: f64,
}

/// A target-lane vehicle after plate matching.
///
/// `vehicle_index` is the ordinal of the vehicle in the departure order of its
/// lane; `upstream_departure` is the link entry time `t_u` when the plate was
/// matched upstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchedVehicle {
    pub vehicle_index: usize,
    pub lane_id: String,
    pub plate: String,
    pub upstream_departure: Option<f64>,
    pub detected_time: f64,
    pub departure_time: f64,
}

impl MatchedVehicle {
    pub fn matched(&self) -> bool {
        self.upstream_departure.is_some()
    }

    /// Downstream detected time minus upstream departure time.
    pub fn travel_time(&self) -> Option<f64> {
        self.upstream_departure.map(|u| self.detected_time - u)
    }
}

const CSV_HEADER: [&str; 5] = [
    "intersection_id",
    "lane_id",
    "plate",
    "detected_time",
    "movement",
];

/// Read LPR records from CSV, sorted by detected time within each
/// (intersection, lane). Malformed rows are reported with their line number.
pub fn ingest_lpr_csv(path: &Path) -> Result<Vec<LprRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => Error::BadSchema {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
        })?;

    {
        let headers = reader.headers().map_err(|e| Error::BadSchema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(Error::BadSchema {
                path: path.to_path_buf(),
                message: format!("expected header {CSV_HEADER:?}, got {got:?}"),
            });
        }
    }

    let bad = |line: u64, message: String| Error::BadRecord {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // Line 1 is the header; data rows start at line 2.
        let line = i as u64 + 2;
        let row = row.map_err(|e| bad(line, e.to_string()))?;
        if row.len() != 5 {
            return Err(bad(line, format!("expected 5 columns, got {}", row.len())));
        }
        let detected_time: f64 = row[3]
            .parse()
            .map_err(|_| bad(line, format!("unparsable detected_time `{}`", &row[3])))?;
        if !detected_time.is_finite() || detected_time < 0.0 {
            return Err(bad(
                line,
                format!("detected_time must be finite and >= 0, got {detected_time}"),
            ));
        }
        let plate = row[2].to_string();
        if plate.is_empty() {
            return Err(bad(line, "empty plate token".to_string()));
        }
        let movement: Movement = row[4].parse().map_err(|e| bad(line, e))?;
        records.push(LprRecord {
            intersection_id: row[0].to_string(),
            lane_id: row[1].to_string(),
            plate,
            detected_time,
            movement,
        });
    }

    sort_records(&mut records);
    Ok(records)
}

pub fn write_lpr_csv(records: &[LprRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let io_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    writer.write_record(CSV_HEADER).map_err(io_err)?;
    for r in records {
        let movement = match r.movement {
            Movement::Left => "left",
            Movement::Through => "through",
            Movement::Right => "right",
        };
        writer
            .write_record([
                r.intersection_id.as_str(),
                r.lane_id.as_str(),
                r.plate.as_str(),
                &format!("{:.3}", r.detected_time),
                movement,
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sort_records(records: &mut [LprRecord]) {
    records.sort_by(|a, b| {
        (&a.intersection_id, &a.lane_id)
            .cmp(&(&b.intersection_id, &b.lane_id))
            .then(a.detected_time.total_cmp(&b.detected_time))
            .then(a.plate.cmp(&b.plate))
    });
}

/// Convert detected times to stop-line departure times.
///
/// A record detected during green departs at its detected time. A record
/// detected during red is assigned the discharge slot `green_start + r*h`,
/// where `r` is its 1-based detection rank among the red-phase detections of
/// its (lane, cycle) and `h` the saturation headway. Upstream records are
/// additionally shifted by the per-movement entry offset.
pub fn extract_departure_times(
    records: &[LprRecord],
    timing: &SignalTiming,
    offsets: &MovementOffsets,
    headway: f64,
) -> Result<Vec<DepartureRecord>> {
    // Detection rank is per (intersection, lane, cycle).
    let mut red_rank: BTreeMap<(String, String, usize), usize> = BTreeMap::new();

    let mut sorted: Vec<&LprRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.intersection_id, &a.lane_id)
            .cmp(&(&b.intersection_id, &b.lane_id))
            .then(a.detected_time.total_cmp(&b.detected_time))
            .then(a.plate.cmp(&b.plate))
    });

    let mut out = Vec::with_capacity(records.len());
    for record in sorted {
        let cycle_idx = timing
            .cycle_index_at(record.detected_time)
            .ok_or(Error::OutsideCycles {
                detected_time: record.detected_time,
            })?;
        let cycle = timing.cycles()[cycle_idx];
        let base = if cycle.in_red(record.detected_time) {
            let key = (
                record.intersection_id.clone(),
                record.lane_id.clone(),
                cycle_idx,
            );
            let rank = red_rank.entry(key).or_insert(0);
            *rank += 1;
            cycle.green_start + *rank as f64 * headway
        } else {
            record.detected_time
        };
        out.push(DepartureRecord {
            record: record.clone(),
            departure_time: base + offsets.get(record.movement),
        });
    }
    out.sort_by(|a, b| {
        (&a.record.intersection_id, &a.record.lane_id)
            .cmp(&(&b.record.intersection_id, &b.record.lane_id))
            .then(a.departure_time.total_cmp(&b.departure_time))
            .then(a.record.detected_time.total_cmp(&b.record.detected_time))
    });
    Ok(out)
}

/// Plate-matching output: one entry per target record plus duplicate warnings.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub vehicles: Vec<MatchedVehicle>,
    pub warnings: Vec<String>,
}

/// Outer-join upstream and target records on the plate token.
///
/// A pairing is kept when `0 < detected(target) - departure(upstream) <=
/// travel_time_cap`; otherwise the target record stays unmatched. When a plate
/// occurs more than once on a side, the pairing with the smallest positive
/// travel time wins and a warning is emitted. Every target record appears in
/// the output exactly once, indexed per lane in departure order.
pub fn match_plates(
    upstream: &[DepartureRecord],
    target: &[DepartureRecord],
    travel_time_cap: f64,
) -> MatchOutcome {
    let mut by_plate: BTreeMap<&str, Vec<(usize, &DepartureRecord)>> = BTreeMap::new();
    for (i, rec) in upstream.iter().enumerate() {
        by_plate.entry(&rec.record.plate).or_default().push((i, rec));
    }

    let mut warnings = Vec::new();
    let mut used = vec![false; upstream.len()];

    // Per lane, in departure order.
    let mut by_lane: BTreeMap<&str, Vec<&DepartureRecord>> = BTreeMap::new();
    for rec in target {
        by_lane.entry(&rec.record.lane_id).or_default().push(rec);
    }

    let mut vehicles = Vec::with_capacity(target.len());
    for (lane, mut recs) in by_lane {
        recs.sort_by(|a, b| {
            a.departure_time
                .total_cmp(&b.departure_time)
                .then(a.record.detected_time.total_cmp(&b.record.detected_time))
                .then(a.record.plate.cmp(&b.record.plate))
        });
        for (index, rec) in recs.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            let mut feasible = 0usize;
            if let Some(candidates) = by_plate.get(rec.record.plate.as_str()) {
                for (uidx, up) in candidates {
                    let travel = rec.record.detected_time - up.departure_time;
                    if travel > 0.0 && travel <= travel_time_cap && !used[*uidx] {
                        feasible += 1;
                        if best.is_none_or(|(_, t)| travel < t) {
                            best = Some((*uidx, travel));
                        }
                    }
                }
                if candidates.len() > 1 {
                    warnings.push(format!(
                        "plate `{}` appears {} times upstream; keeping smallest positive travel time",
                        rec.record.plate,
                        candidates.len()
                    ));
                }
                if feasible > 1 {
                    warnings.push(format!(
                        "plate `{}` has {} feasible upstream pairings in lane {}",
                        rec.record.plate, feasible, lane
                    ));
                }
            }
            let upstream_departure = best.map(|(uidx, _)| {
                used[uidx] = true;
                upstream[uidx].departure_time
            });
            vehicles.push(MatchedVehicle {
                vehicle_index: index,
                lane_id: lane.to_string(),
                plate: rec.record.plate.clone(),
                upstream_departure,
                detected_time: rec.record.detected_time,
                departure_time: rec.departure_time,
            });
        }
    }

    MatchOutcome { vehicles, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lane: &str, plate: &str, t: f64) -> LprRecord {
        LprRecord {
            intersection_id: "target".into(),
            lane_id: lane.into(),
            plate: plate.into(),
            detected_time: t,
            movement: Movement::Through,
        }
    }

    fn dep(lane: &str, plate: &str, t: f64) -> DepartureRecord {
        DepartureRecord {
            record: rec(lane, plate, t),
            departure_time: t,
        }
    }

    fn timing_one_cycle() -> SignalTiming {
        SignalTiming::new(vec![Cycle {
            red_start: 0.0,
            green_start: 40.0,
            cycle_end: 100.0,
        }])
        .unwrap()
    }

    #[test]
    fn csv_roundtrip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lpr.csv");
        let records = vec![rec("L1", "P3", 30.0), rec("L1", "P1", 10.0), rec("L2", "P2", 20.0)];
        write_lpr_csv(&records, &path).unwrap();
        let read = ingest_lpr_csv(&path).unwrap();
        assert_eq!(read.len(), 3);
        // Sorted by detected time within each lane.
        assert_eq!(read[0].plate, "P1");
        assert_eq!(read[1].plate, "P3");
        assert_eq!(read[2].plate, "P2");
    }

    #[test]
    fn csv_negative_time_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "intersection_id,lane_id,plate,detected_time,movement\n\
             target,L1,P1,10.0,through\n\
             target,L1,P2,-3.0,through\n",
        )
        .unwrap();
        match ingest_lpr_csv(&path) {
            Err(Error::BadRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected BadRecord, got {other:?}"),
        }
    }

    #[test]
    fn csv_missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "intersection_id,lane_id,plate,detected_time\n").unwrap();
        assert!(matches!(ingest_lpr_csv(&path), Err(Error::BadSchema { .. })));
    }

    #[test]
    fn csv_missing_file_is_io_error() {
        assert!(matches!(
            ingest_lpr_csv(Path::new("/nonexistent/file.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn green_detection_departs_at_detected_time() {
        let records = vec![rec("L1", "P1", 50.0)];
        let out =
            extract_departure_times(&records, &timing_one_cycle(), &MovementOffsets::zero(), 2.0)
                .unwrap();
        assert_eq!(out[0].departure_time, 50.0);
    }

    #[test]
    fn red_detections_take_discharge_slots() {
        let records = vec![rec("L1", "P1", 5.0), rec("L1", "P2", 9.0)];
        let out =
            extract_departure_times(&records, &timing_one_cycle(), &MovementOffsets::zero(), 2.0)
                .unwrap();
        assert_eq!(out[0].departure_time, 42.0);
        assert_eq!(out[1].departure_time, 44.0);
        // Detection order preserved.
        assert_eq!(out[0].record.plate, "P1");
    }

    #[test]
    fn red_ranks_are_per_lane() {
        let records = vec![rec("L1", "P1", 5.0), rec("L2", "P2", 6.0), rec("L1", "P3", 7.0)];
        let out =
            extract_departure_times(&records, &timing_one_cycle(), &MovementOffsets::zero(), 2.0)
                .unwrap();
        let find = |plate: &str| {
            out.iter()
                .find(|d| d.record.plate == plate)
                .unwrap()
                .departure_time
        };
        assert_eq!(find("P1"), 42.0);
        assert_eq!(find("P2"), 42.0);
        assert_eq!(find("P3"), 44.0);
    }

    #[test]
    fn record_outside_cycles_errors() {
        let records = vec![rec("L1", "P1", 250.0)];
        assert!(matches!(
            extract_departure_times(&records, &timing_one_cycle(), &MovementOffsets::zero(), 2.0),
            Err(Error::OutsideCycles { .. })
        ));
    }

    #[test]
    fn movement_offset_shifts_departure() {
        let mut record = rec("U1", "P1", 50.0);
        record.movement = Movement::Left;
        let offsets = MovementOffsets {
            left: 3.5,
            through: 1.0,
            right: 2.0,
        };
        let out = extract_departure_times(&[record], &timing_one_cycle(), &offsets, 2.0).unwrap();
        assert_eq!(out[0].departure_time, 53.5);
    }

    #[test]
    fn single_pair_matches() {
        let up = vec![dep("U1", "P1", 0.0)];
        let tg = vec![dep("L1", "P1", 40.0)];
        let out = match_plates(&up, &tg, 300.0);
        assert_eq!(out.vehicles.len(), 1);
        assert_eq!(out.vehicles[0].upstream_departure, Some(0.0));
        assert_eq!(out.vehicles[0].travel_time(), Some(40.0));
    }

    #[test]
    fn negative_travel_time_stays_unmatched() {
        let up = vec![dep("U1", "P1", 100.0)];
        let tg = vec![dep("L1", "P1", 40.0)];
        let out = match_plates(&up, &tg, 300.0);
        assert_eq!(out.vehicles.len(), 1);
        assert!(!out.vehicles[0].matched());
    }

    #[test]
    fn over_cap_travel_time_stays_unmatched() {
        let up = vec![dep("U1", "P1", 0.0)];
        let tg = vec![dep("L1", "P1", 400.0)];
        let out = match_plates(&up, &tg, 300.0);
        assert!(!out.vehicles[0].matched());
    }

    #[test]
    fn duplicate_plate_takes_smallest_positive_travel() {
        let up = vec![dep("U1", "P1", 0.0), dep("U1", "P1", 25.0)];
        let tg = vec![dep("L1", "P1", 40.0)];
        let out = match_plates(&up, &tg, 300.0);
        assert_eq!(out.vehicles[0].upstream_departure, Some(25.0));
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn every_target_record_appears_once_and_indexed() {
        let up = vec![dep("U1", "P1", 0.0)];
        let tg = vec![dep("L1", "P9", 30.0), dep("L1", "P1", 40.0), dep("L2", "P7", 20.0)];
        let out = match_plates(&up, &tg, 300.0);
        assert_eq!(out.vehicles.len(), 3);
        let l1: Vec<_> = out.vehicles.iter().filter(|v| v.lane_id == "L1").collect();
        assert_eq!(l1[0].vehicle_index, 0);
        assert_eq!(l1[1].vehicle_index, 1);
        assert!(l1[0].departure_time < l1[1].departure_time);
    }

    #[test]
    fn matching_is_idempotent() {
        let up = vec![dep("U1", "P1", 0.0), dep("U1", "P2", 5.0), dep("U1", "P3", 9.0)];
        let tg = vec![dep("L1", "P1", 40.0), dep("L1", "P2", 44.0), dep("L1", "P9", 50.0)];
        let first = match_plates(&up, &tg, 300.0);

        // Re-run matching restricted to the pairs the first run produced.
        let up2: Vec<DepartureRecord> = first
            .vehicles
            .iter()
            .filter_map(|v| {
                v.upstream_departure
                    .map(|u| dep("U1", &v.plate, u))
            })
            .collect();
        let second = match_plates(&up2, &tg, 300.0);
        for (a, b) in first.vehicles.iter().zip(&second.vehicles) {
            assert_eq!(a.plate, b.plate);
            assert_eq!(a.upstream_departure, b.upstream_departure);
            assert_eq!(a.vehicle_index, b.vehicle_index);
        }
    }
}
