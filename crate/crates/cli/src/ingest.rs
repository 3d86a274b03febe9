//! HighD-style trajectory CSV ingestion: per-frame rows into per-vehicle
//! tracks, with configurable column names, direction re-basing, and splits at
//! frame gaps or rejected rows.

use std::collections::BTreeMap;
use std::path::Path;

use iacf_core::traj::{Track, TrackFrame};

use crate::{CliError, Result};

/// Logical-field to CSV-column-name mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub id: String,
    pub frame: String,
    pub x: String,
    pub v: String,
    pub a: String,
    pub lane: String,
    pub preceding: String,
    pub width: String,
}

impl Default for Schema {
    fn default() -> Self {
        // HighD column names; "width" is the vehicle extent along the road.
        Schema {
            id: "id".into(),
            frame: "frame".into(),
            x: "x".into(),
            v: "xVelocity".into(),
            a: "xAcceleration".into(),
            lane: "laneId".into(),
            preceding: "precedingId".into(),
            width: "width".into(),
        }
    }
}

impl Schema {
    /// Parse `field=column` overrides, comma separated, e.g.
    /// `v=speed,a=accel`.
    pub fn parse(spec: &str) -> Result<Schema> {
        let mut schema = Schema::default();
        for part in spec.split(',').filter(|p| !p.is_empty()) {
            let (field, column) = part.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("schema entry '{part}' is not field=column"))
            })?;
            let slot = match field {
                "id" => &mut schema.id,
                "frame" => &mut schema.frame,
                "x" => &mut schema.x,
                "v" => &mut schema.v,
                "a" => &mut schema.a,
                "lane" => &mut schema.lane,
                "preceding" => &mut schema.preceding,
                "width" => &mut schema.width,
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown schema field '{other}' (expected id|frame|x|v|a|lane|preceding|width)"
                    )))
                }
            };
            *slot = column.to_string();
        }
        Ok(schema)
    }
}

struct RawRow {
    frame: u64,
    x: f64,
    v: f64,
    a: f64,
    lane: i64,
    preceding: i64,
    width: f64,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::Data(format!("schema error: missing column '{name}'")))
}

fn parse_cell<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    line: u64,
) -> Result<Option<T>> {
    let raw = record.get(idx).map(str::trim).unwrap_or("");
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<T>().map(Some).map_err(|_| {
        CliError::Data(format!(
            "parse error at line {line}: column '{name}' value '{raw}' is not numeric"
        ))
    })
}

/// Parse per-frame rows into per-vehicle tracks.
///
/// Tracks split wherever frame numbers jump or a row is rejected for missing
/// mandatory fields. Vehicles driving against the x axis (negative mean
/// speed) are re-based so x increases along travel.
pub fn parse_tracks(path: &Path, schema: &Schema, dt: f64) -> Result<Vec<Track>> {
    if !(dt > 0.0) {
        return Err(CliError::Usage("ingest dt must be positive".into()));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| column_index(&headers, name);
    let (ci, cf, cx, cv, ca, cl, cp, cw) = (
        col(&schema.id)?,
        col(&schema.frame)?,
        col(&schema.x)?,
        col(&schema.v)?,
        col(&schema.a)?,
        col(&schema.lane)?,
        col(&schema.preceding)?,
        col(&schema.width)?,
    );

    // Rows per vehicle, in file order.
    let mut vehicles: BTreeMap<u64, Vec<RawRow>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let Some(id) = parse_cell::<u64>(&record, ci, &schema.id, line)? else {
            continue;
        };
        let frame = parse_cell::<u64>(&record, cf, &schema.frame, line)?;
        let x = parse_cell::<f64>(&record, cx, &schema.x, line)?;
        let v = parse_cell::<f64>(&record, cv, &schema.v, line)?;
        let a = parse_cell::<f64>(&record, ca, &schema.a, line)?;
        let lane = parse_cell::<i64>(&record, cl, &schema.lane, line)?;
        let preceding = parse_cell::<i64>(&record, cp, &schema.preceding, line)?;
        let width = parse_cell::<f64>(&record, cw, &schema.width, line)?;
        let rows = vehicles.entry(id).or_default();
        // A row missing any mandatory field is rejected; the gap it leaves
        // splits the track like a missing frame.
        if let (Some(frame), Some(x), Some(v), Some(a), Some(lane), Some(preceding), Some(width)) =
            (frame, x, v, a, lane, preceding, width)
        {
            rows.push(RawRow { frame, x, v, a, lane, preceding, width });
        }
    }
    if vehicles.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no vehicle rows (empty corpus)",
            path.display()
        )));
    }

    let mut tracks = Vec::new();
    for (vehicle_id, mut rows) in vehicles {
        rows.sort_by_key(|r| r.frame);
        // Direction re-basing: flip vehicles driving toward decreasing x.
        let mean_v: f64 = rows.iter().map(|r| r.v).sum::<f64>() / rows.len() as f64;
        if mean_v < 0.0 {
            for r in &mut rows {
                r.x = -r.x;
                r.v = -r.v;
                r.a = -r.a;
            }
        }
        let mut start = 0;
        for i in 0..rows.len() {
            let split_after = i + 1 == rows.len() || rows[i + 1].frame != rows[i].frame + 1;
            if split_after {
                tracks.push(Track {
                    vehicle_id,
                    dt,
                    start_frame: rows[start].frame,
                    length_m: rows[start].width,
                    frames: rows[start..=i]
                        .iter()
                        .map(|r| TrackFrame {
                            frame: r.frame,
                            x: r.x,
                            v: r.v,
                            a: r.a,
                            lane: r.lane,
                            preceding: r.preceding,
                        })
                        .collect(),
                });
                start = i + 1;
            }
        }
    }
    Ok(tracks)
}
