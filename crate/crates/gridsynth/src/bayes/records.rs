//! Tabular training records and their CSV readers.
//!
//! `bus_records.csv` columns: bus_id, distance_km, hop_zone, phase,
//! p_kw_a, p_kw_b, p_kw_c, interruptions_per_year, interruption_durations_h
//! (semicolon-separated inside one cell), building_scale.
//!
//! `line_records.csv` columns: line_id, from_bus, to_bus, length_km,
//! r1_ohm, x1_ohm, distance_km, hop_zone.

use std::path::Path;

use crate::phase::Phase;

use super::BayesError;

#[derive(Debug, Clone)]
pub struct BusRecord {
    pub bus_id: String,
    pub distance_km: Option<f64>,
    pub hop_zone: Option<u32>,
    pub phase: Phase,
    pub p_kw: [f64; 3],
    pub interruptions_per_year: u32,
    pub interruption_durations_h: Vec<f64>,
    pub building_scale: f64,
}

#[derive(Debug, Clone)]
pub struct LineRecord {
    pub line_id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub length_km: f64,
    pub r1_ohm: f64,
    pub x1_ohm: f64,
    pub distance_km: Option<f64>,
    pub hop_zone: Option<u32>,
}

fn opt_field(rec: &csv::StringRecord, idx: Option<usize>) -> Option<&str> {
    idx.and_then(|i| rec.get(i)).map(str::trim).filter(|s| !s.is_empty())
}

fn parse_f64(s: &str, field: &str) -> Result<f64, BayesError> {
    s.parse::<f64>()
        .map_err(|_| BayesError::Record(format!("bad {field} value {s:?}")))
}

pub fn read_bus_records(path: &Path) -> Result<Vec<BusRecord>, BayesError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| BayesError::Record(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BayesError::Record(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| BayesError::Record(format!("missing column {name}")))
    };
    let c_id = required("bus_id")?;
    let c_phase = required("phase")?;
    let c_pa = required("p_kw_a")?;
    let c_pb = required("p_kw_b")?;
    let c_pc = required("p_kw_c")?;
    let c_freq = required("interruptions_per_year")?;
    let c_dist = col("distance_km");
    let c_zone = col("hop_zone");
    let c_dur = col("interruption_durations_h");
    let c_scale = col("building_scale");

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| BayesError::Record(e.to_string()))?;
        let phase_str = row.get(c_phase).unwrap_or("").trim();
        let phase = Phase::parse(phase_str)
            .ok_or_else(|| BayesError::Record(format!("bad phase {phase_str:?}")))?;
        let durations = match opt_field(&row, c_dur) {
            Some(cell) => cell
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_f64(s, "interruption_durations_h"))
                .collect::<Result<Vec<f64>, _>>()?,
            None => Vec::new(),
        };
        let rec = BusRecord {
            bus_id: row.get(c_id).unwrap_or("").to_string(),
            distance_km: opt_field(&row, c_dist)
                .map(|s| parse_f64(s, "distance_km"))
                .transpose()?,
            hop_zone: opt_field(&row, c_zone)
                .map(|s| {
                    s.parse::<u32>()
                        .map_err(|_| BayesError::Record(format!("bad hop_zone {s:?}")))
                })
                .transpose()?,
            phase,
            p_kw: [
                parse_f64(row.get(c_pa).unwrap_or("0").trim(), "p_kw_a")?,
                parse_f64(row.get(c_pb).unwrap_or("0").trim(), "p_kw_b")?,
                parse_f64(row.get(c_pc).unwrap_or("0").trim(), "p_kw_c")?,
            ],
            interruptions_per_year: row
                .get(c_freq)
                .unwrap_or("0")
                .trim()
                .parse()
                .map_err(|_| BayesError::Record("bad interruptions_per_year".into()))?,
            interruption_durations_h: durations,
            building_scale: opt_field(&row, c_scale)
                .map(|s| parse_f64(s, "building_scale"))
                .transpose()?
                .unwrap_or(1.0),
        };
        out.push(rec);
    }
    Ok(out)
}

pub fn read_line_records(path: &Path) -> Result<Vec<LineRecord>, BayesError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| BayesError::Record(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BayesError::Record(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| BayesError::Record(format!("missing column {name}")))
    };
    let c_id = required("line_id")?;
    let c_from = required("from_bus")?;
    let c_to = required("to_bus")?;
    let c_len = required("length_km")?;
    let c_r = required("r1_ohm")?;
    let c_x = required("x1_ohm")?;
    let c_dist = col("distance_km");
    let c_zone = col("hop_zone");

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| BayesError::Record(e.to_string()))?;
        out.push(LineRecord {
            line_id: row.get(c_id).unwrap_or("").to_string(),
            from_bus: row.get(c_from).unwrap_or("").to_string(),
            to_bus: row.get(c_to).unwrap_or("").to_string(),
            length_km: parse_f64(row.get(c_len).unwrap_or("").trim(), "length_km")?,
            r1_ohm: parse_f64(row.get(c_r).unwrap_or("").trim(), "r1_ohm")?,
            x1_ohm: parse_f64(row.get(c_x).unwrap_or("").trim(), "x1_ohm")?,
            distance_km: opt_field(&row, c_dist)
                .map(|s| parse_f64(s, "distance_km"))
                .transpose()?,
            hop_zone: opt_field(&row, c_zone)
                .map(|s| {
                    s.parse::<u32>()
                        .map_err(|_| BayesError::Record(format!("bad hop_zone {s:?}")))
                })
                .transpose()?,
        });
    }
    Ok(out)
}

/// Zone of every record: the hop_zone column when present, otherwise
/// equal-width binning of distance_km over [0, max distance].
pub fn resolve_zones(
    zones: &[Option<u32>],
    distances: &[Option<f64>],
    z_count: u32,
) -> Result<Vec<u32>, BayesError> {
    let d_max = distances
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, d| acc.max(*d));
    zones
        .iter()
        .zip(distances)
        .map(|(z, d)| match (z, d) {
            (Some(z), _) => {
                if *z >= 1 && *z <= z_count {
                    Ok(*z)
                } else {
                    Err(BayesError::Record(format!("hop_zone {z} outside 1..={z_count}")))
                }
            }
            (None, Some(d)) => Ok(crate::topology::zone_of(*d, d_max, z_count)),
            (None, None) => {
                Err(BayesError::Record("record has neither hop_zone nor distance_km".into()))
            }
        })
        .collect()
}
