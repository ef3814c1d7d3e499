//! Observation ingest, centering against the baseline, and train/test splits.
//!
//! Observations live in a CSV with header `lon,lat,age_bp,value_c,source`.
//! Ages are years BP; internally time runs on t = −age/1000 (ka), so the
//! past is negative and "present" is 0.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::baseline::BaselineModel;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["lon", "lat", "age_bp", "value_c", "source"];

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(
        path.display().to_string(),
        std::io::Error::other(e.to_string()),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub lon: f64,
    pub lat: f64,
    /// Age in years before present (>= 0).
    pub age_bp: f64,
    /// Mean annual temperature Y, °C.
    pub value: f64,
    /// `pollen` or a simulation identifier.
    pub source: String,
    /// Ȳ = Y − m(x); set by [`center`].
    pub value_centered: Option<f64>,
}

impl ObservationRecord {
    /// Internal time coordinate in ka.
    pub fn t_ka(&self) -> f64 {
        -self.age_bp / 1000.0
    }
}

/// Row-level accounting for one ingest: how many rows were read and how many
/// were rejected, keyed by reason.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    fn reject(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_insert(0) += 1;
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows_read: {}", self.rows_read)?;
        writeln!(f, "accepted: {}", self.accepted)?;
        writeln!(f, "rejected: {}", self.total_rejected())?;
        for (reason, count) in &self.rejected {
            writeln!(f, "  {reason}: {count}")?;
        }
        Ok(())
    }
}

fn validate_record(rec: &ObservationRecord) -> std::result::Result<(), &'static str> {
    if !rec.lon.is_finite() || !(-180.0..=180.0).contains(&rec.lon) {
        return Err("lon out of range");
    }
    if !rec.lat.is_finite() || !(-90.0..=90.0).contains(&rec.lat) {
        return Err("lat out of range");
    }
    if !rec.age_bp.is_finite() || rec.age_bp < 0.0 {
        return Err("age out of range");
    }
    if !rec.value.is_finite() {
        return Err("value not finite");
    }
    if rec.source.is_empty() {
        return Err("empty source");
    }
    Ok(())
}

/// Load observations, rejecting (and counting) invalid rows. A missing or
/// wrong header is fatal; per-row problems are reported, never silently
/// dropped.
pub fn load_observations(path: &Path) -> Result<(Vec<ObservationRecord>, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                report.rows_read += 1;
                report.reject("malformed row");
                continue;
            }
        };
        report.rows_read += 1;
        if row.len() != 5 {
            report.reject("wrong field count");
            continue;
        }
        let parse = |i: usize| row[i].trim().parse::<f64>();
        let (lon, lat, age_bp, value) = match (parse(0), parse(1), parse(2), parse(3)) {
            (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
            _ => {
                report.reject("unparseable number");
                continue;
            }
        };
        let rec = ObservationRecord {
            lon,
            lat,
            age_bp,
            value,
            source: row[4].trim().to_string(),
            value_centered: None,
        };
        match validate_record(&rec) {
            Ok(()) => {
                report.accepted += 1;
                records.push(rec);
            }
            Err(reason) => report.reject(reason),
        }
    }
    Ok((records, report))
}

/// Write records in the ingest schema. `centered` selects whether the value
/// column carries Y or Ȳ (the latter requires [`center`] to have run).
pub fn save_observations(path: &Path, records: &[ObservationRecord], centered: bool) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| io_err(path, e))?;
    for rec in records {
        let v = if centered {
            rec.value_centered
                .ok_or_else(|| Error::invalid("record not centered"))?
        } else {
            rec.value
        };
        writer
            .write_record([
                format!("{}", rec.lon),
                format!("{}", rec.lat),
                format!("{}", rec.age_bp),
                format!("{}", v),
                rec.source.clone(),
            ])
            .map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Subtract the baseline: value_centered = value − m(lon, lat).
pub fn center(records: &mut [ObservationRecord], baseline: &BaselineModel) {
    for rec in records.iter_mut() {
        rec.value_centered = Some(rec.value - baseline.eval(rec.lon, rec.lat));
    }
}

/// Invert [`center`], recovering `value` from `value_centered`.
pub fn uncenter(value_centered: f64, lon: f64, lat: f64, baseline: &BaselineModel) -> f64 {
    value_centered + baseline.eval(lon, lat)
}

/// Hold out one time slice of one simulation. Records of other sources at
/// the same age (e.g. pollen) stay in the training set.
pub fn split_leave_time_slice_out(
    records: &[ObservationRecord],
    held_out_age: f64,
    simulation_id: &str,
) -> Result<(Vec<ObservationRecord>, Vec<ObservationRecord>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in records {
        if rec.source == simulation_id && rec.age_bp == held_out_age {
            test.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    if test.is_empty() {
        return Err(Error::invalid(format!(
            "no records for simulation `{simulation_id}` at age {held_out_age}"
        )));
    }
    Ok((train, test))
}

/// Distinct ages (sorted ascending) present for one source tag.
pub fn ages_of_source(records: &[ObservationRecord], source: &str) -> Vec<f64> {
    let mut ages: Vec<f64> = records
        .iter()
        .filter(|r| r.source == source)
        .map(|r| r.age_bp)
        .collect();
    ages.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ages.dedup();
    ages
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_rows() {
        let f = write_tmp(
            "lon,lat,age_bp,value_c,source\n\
             1.5,45.0,6000,12.25,mh-sim\n\
             -3.25,52.0,0,9.5,pollen\n\
             30.0,60.0,21000,-4.75,lgm-sim\n",
        );
        let (recs, report) = load_observations(f.path()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(report.rows_read, 3);
        assert_eq!(report.total_rejected(), 0);
        assert_eq!(recs[0].source, "mh-sim");
        assert_eq!(recs[2].t_ka(), -21.0);
    }

    #[test]
    fn rejects_out_of_range_rows_with_reason() {
        let f = write_tmp(
            "lon,lat,age_bp,value_c,source\n\
             1.0,95.0,0,1.0,pollen\n\
             200.0,45.0,0,1.0,pollen\n\
             1.0,45.0,-5,1.0,pollen\n\
             1.0,45.0,0,nan,pollen\n\
             1.0,45.0,0,1.0,pollen\n",
        );
        let (recs, report) = load_observations(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(report.rejected["lat out of range"], 1);
        assert_eq!(report.rejected["lon out of range"], 1);
        assert_eq!(report.rejected["age out of range"], 1);
        assert_eq!(report.rejected["value not finite"], 1);
    }

    #[test]
    fn missing_header_is_fatal() {
        let f = write_tmp("1.0,45.0,0,1.0,pollen\n");
        assert!(load_observations(f.path()).is_err());
    }

    #[test]
    fn save_load_round_trips_exactly() {
        let f = write_tmp(
            "lon,lat,age_bp,value_c,source\n\
             1.123456789012345,45.987654321098765,6000,0.1,mh\n\
             -0.000001,0.3333333333333333,21000,-12.75,pollen\n",
        );
        let (recs, _) = load_observations(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_observations(out.path(), &recs, false).unwrap();
        let (recs2, _) = load_observations(out.path()).unwrap();
        assert_eq!(recs, recs2);
    }

    #[test]
    fn centering_round_trips() {
        let baseline = BaselineModel::constant(7.5);
        let mut recs = vec![ObservationRecord {
            lon: 10.0,
            lat: 50.0,
            age_bp: 6000.0,
            value: 9.25,
            source: "mh".into(),
            value_centered: None,
        }];
        center(&mut recs, &baseline);
        assert!((recs[0].value_centered.unwrap() - 1.75).abs() < 1e-12);
        let back = uncenter(recs[0].value_centered.unwrap(), 10.0, 50.0, &baseline);
        assert!((back - 9.25).abs() < 1e-12);
    }

    fn toy_records() -> Vec<ObservationRecord> {
        let mut out = Vec::new();
        for age in [6000.0, 9000.0, 12000.0] {
            for i in 0..4 {
                out.push(ObservationRecord {
                    lon: i as f64,
                    lat: 45.0,
                    age_bp: age,
                    value: 1.0,
                    source: "sim".into(),
                    value_centered: None,
                });
            }
        }
        out.push(ObservationRecord {
            lon: 2.0,
            lat: 50.0,
            age_bp: 9000.0,
            value: 0.5,
            source: "pollen".into(),
            value_centered: None,
        });
        out
    }

    #[test]
    fn split_is_a_partition_and_keeps_pollen() {
        let recs = toy_records();
        let (train, test) = split_leave_time_slice_out(&recs, 9000.0, "sim").unwrap();
        assert_eq!(test.len(), 4);
        assert_eq!(train.len() + test.len(), recs.len());
        assert!(test.iter().all(|r| r.source == "sim" && r.age_bp == 9000.0));
        // the pollen record at the held-out age stays in train
        assert!(train.iter().any(|r| r.source == "pollen" && r.age_bp == 9000.0));
    }

    #[test]
    fn partition_sweep_covers_simulation_once() {
        let recs = toy_records();
        let ages = ages_of_source(&recs, "sim");
        assert_eq!(ages, vec![6000.0, 9000.0, 12000.0]);
        let mut covered = 0;
        for &age in &ages {
            let (_, test) = split_leave_time_slice_out(&recs, age, "sim").unwrap();
            covered += test.len();
        }
        let sim_total = recs.iter().filter(|r| r.source == "sim").count();
        assert_eq!(covered, sim_total);
    }

    #[test]
    fn split_without_matches_is_fatal() {
        let recs = toy_records();
        assert!(split_leave_time_slice_out(&recs, 1234.0, "sim").is_err());
    }
}
