//! Raw per-date observations and the observation CSV format.

use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::bands::{BandId, Sensor};
use crate::error::{Error, Result};

pub const OBSERVATION_HEADER: [&str; 5] = ["plot_id", "date", "band", "value", "cloud_prob"];
pub const STATIC_HEADER: [&str; 5] = ["plot_id", "lat", "lon", "elevation_m", "slope_deg"];
pub const LABEL_HEADER: [&str; 2] = ["plot_id", "class_name"];

/// One band value of one plot on one date.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub plot_id: String,
    pub date: NaiveDate,
    pub band: BandId,
    /// Native units: dB for S1, digital numbers for S2, K / m for climate.
    pub value: f64,
    /// Cloud probability in percent; only meaningful for S2 rows.
    pub cloud_prob: Option<f64>,
}

impl Observation {
    /// 0-based month of the observation date.
    pub fn month_index(&self) -> usize {
        self.date.month0() as usize
    }
}

/// Ingestion settings.
#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Calendar year all observations must fall in.
    pub year: i32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { year: 2020 }
    }
}

/// A data row that failed validation. `line` is the 1-based line number in
/// the file, counting the header as line 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub observations: Vec<Observation>,
    pub rejections: Vec<RowRejection>,
}

pub(crate) fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(reader)
}

pub(crate) fn parse_f64(field: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("{what} `{field}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{what} `{field}` is not finite"));
    }
    Ok(v)
}

fn parse_observation(rec: &csv::StringRecord, cfg: &IngestConfig) -> std::result::Result<Observation, String> {
    if rec.len() != OBSERVATION_HEADER.len() {
        return Err(format!("expected 5 fields, found {}", rec.len()));
    }
    let plot_id = rec[0].to_string();
    if plot_id.is_empty() {
        return Err("empty plot_id".into());
    }
    let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
        .map_err(|_| format!("date `{}` is not YYYY-MM-DD", &rec[1]))?;
    if date.year() != cfg.year {
        return Err(format!("date {date} outside {}", cfg.year));
    }
    let band: BandId = rec[2].parse().map_err(|e: Error| e.to_string())?;
    if band.is_index() || band.sensor() == Sensor::Terrain {
        return Err(format!("band `{band}` is derived or static, not an observation band"));
    }
    let value = parse_f64(&rec[3], "value")?;
    if band.is_raw_s2() && value < 0.0 {
        return Err(format!("S2 value {value} is negative"));
    }
    let cloud_prob = match &rec[4] {
        "" => None,
        s => {
            let c = parse_f64(s, "cloud_prob")?;
            if !(0.0..=100.0).contains(&c) {
                return Err(format!("cloud_prob {c} outside [0, 100]"));
            }
            Some(c)
        }
    };
    if band.is_raw_s2() && cloud_prob.is_none() {
        return Err(format!("S2 band {band} requires cloud_prob"));
    }
    Ok(Observation {
        plot_id,
        date,
        band,
        value,
        cloud_prob,
    })
}

/// Reads an observation CSV. File-level problems (missing file, wrong
/// header) are errors; bad rows are collected as rejections.
pub fn ingest_csv(path: &Path, cfg: &IngestConfig) -> Result<Ingested> {
    let mut reader = open_csv(path, &OBSERVATION_HEADER)?;
    let mut out = Ingested::default();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        match rec {
            Ok(rec) => match parse_observation(&rec, cfg) {
                Ok(obs) => out.observations.push(obs),
                Err(reason) => out.rejections.push(RowRejection { line, reason }),
            },
            Err(e) => out.rejections.push(RowRejection {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(OBSERVATION_HEADER)?;
    for o in observations {
        let cloud = o.cloud_prob.map(|c| c.to_string()).unwrap_or_default();
        w.write_record([
            o.plot_id.as_str(),
            &o.date.format("%Y-%m-%d").to_string(),
            o.band.name(),
            &o.value.to_string(),
            &cloud,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Location and terrain of one plot.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticRecord {
    pub plot_id: String,
    pub lat: f64,
    pub lon: f64,
    pub elevation_m: Option<f64>,
    pub slope_deg: Option<f64>,
}

fn optional(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, what).map(Some).map_err(Error::invalid)
    }
}

pub fn read_statics(path: &Path) -> Result<Vec<StaticRecord>> {
    let mut reader = open_csv(path, &STATIC_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let fail = |message: String| Error::Row { row, message };
        if rec.len() != STATIC_HEADER.len() {
            return Err(fail(format!("expected 5 fields, found {}", rec.len())));
        }
        out.push(StaticRecord {
            plot_id: rec[0].to_string(),
            lat: parse_f64(&rec[1], "lat").map_err(fail)?,
            lon: parse_f64(&rec[2], "lon").map_err(fail)?,
            elevation_m: optional(&rec[3], "elevation_m").map_err(|e| fail(e.to_string()))?,
            slope_deg: optional(&rec[4], "slope_deg").map_err(|e| fail(e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn write_statics(path: &Path, records: &[StaticRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STATIC_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.plot_id.clone(),
            r.lat.to_string(),
            r.lon.to_string(),
            opt(r.elevation_m),
            opt(r.slope_deg),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads `plot_id,class_name` pairs.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = open_csv(path, &LABEL_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 || rec[1].is_empty() {
            return Err(Error::Row {
                row: i + 2,
                message: "expected `plot_id,class_name`".into(),
            });
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LABEL_HEADER)?;
    for (plot, class) in labels {
        w.write_record([plot, class])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
