//! CSV cohort format.
//!
//! ```text
//! id,R,V,delta1,delta2,W,delta3,Z_<name1>,...,Z_<namep>
//! ```
//!
//! Deltas are `0`/`1`, ages are decimal years. `W` and `delta3` may be left
//! empty when `delta1 = 0`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Cohort, Observation};
use crate::error::{Error, Result};

pub const FIXED_COLUMNS: [&str; 7] = ["id", "R", "V", "delta1", "delta2", "W", "delta3"];
pub const COVARIATE_PREFIX: &str = "Z_";

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Drop rows that violate a record invariant instead of failing.
    pub drop_invalid: bool,
}

pub fn ingest_csv(path: impl AsRef<Path>, options: IngestOptions) -> Result<Cohort> {
    let file = File::open(path.as_ref())?;
    read_cohort(file, options)
}

pub fn read_cohort<R: Read>(reader: R, options: IngestOptions) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyCohort);
    }
    let names = check_header(&header)?;
    let p = names.len();

    let mut observations = Vec::new();
    let mut dropped = 0usize;
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = k + 2;
        match parse_row(&record, p) {
            Ok(obs) => observations.push(obs),
            Err(rule) => {
                let id = record.get(0).unwrap_or("").to_string();
                if options.drop_invalid {
                    log::debug!("dropping row {line} (id {id}): {rule}");
                    dropped += 1;
                } else {
                    return Err(Error::Row { line, id, rule });
                }
            }
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} invalid rows during ingest");
    }
    if observations.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Cohort::new(observations, names)
}

fn check_header(header: &[String]) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    for (k, want) in FIXED_COLUMNS.iter().enumerate() {
        match header.get(k) {
            Some(got) if got == want => {}
            Some(got) => problems.push(format!("column {}: expected '{want}', found '{got}'", k + 1)),
            None => problems.push(format!("column {}: missing '{want}'", k + 1)),
        }
    }
    let mut names = Vec::new();
    for (k, col) in header.iter().enumerate().skip(FIXED_COLUMNS.len()) {
        match col.strip_prefix(COVARIATE_PREFIX) {
            Some(name) if !name.is_empty() => names.push(name.to_string()),
            _ => problems.push(format!(
                "column {}: expected a covariate 'Z_<name>', found '{col}'",
                k + 1
            )),
        }
    }
    if problems.is_empty() {
        Ok(names)
    } else {
        Err(Error::Schema {
            message: problems.join("; "),
        })
    }
}

fn parse_row(record: &csv::StringRecord, p: usize) -> std::result::Result<Observation, String> {
    if record.len() != FIXED_COLUMNS.len() + p {
        return Err(format!(
            "expected {} fields, found {}",
            FIXED_COLUMNS.len() + p,
            record.len()
        ));
    }
    let field = |k: usize| record.get(k).unwrap_or("");
    let num = |k: usize| -> std::result::Result<f64, String> {
        field(k)
            .parse::<f64>()
            .map_err(|_| format!("column {} is not a number: '{}'", header_name(k), field(k)))
    };
    let bit = |k: usize| -> std::result::Result<bool, String> {
        match field(k) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("column {} must be 0 or 1, found '{other}'", header_name(k))),
        }
    };
    let optional = |k: usize| field(k).is_empty();

    let onset = bit(3)?;
    let (w, d3) = if onset {
        (Some(num(5)?), Some(bit(6)?))
    } else {
        // ignored: normalized to W = V, delta3 = 0
        let w = if optional(5) { None } else { Some(num(5)?) };
        let d3 = if optional(6) { None } else { Some(bit(6)?) };
        (w, d3)
    };
    let covariates = (0..p)
        .map(|j| num(FIXED_COLUMNS.len() + j))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Observation::new(field(0), num(1)?, num(2)?, onset, bit(4)?, w, d3, covariates)
}

fn header_name(k: usize) -> String {
    FIXED_COLUMNS
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("#{}", k + 1))
}

pub fn write_csv(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_cohort(cohort, file)
}

/// Writes the cohort using shortest round-trip float formatting, so that
/// re-ingesting reproduces every field bit for bit.
pub fn write_cohort<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(
        cohort
            .covariate_names
            .iter()
            .map(|n| format!("{COVARIATE_PREFIX}{n}")),
    );
    wtr.write_record(&header)?;
    let bit = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for o in &cohort.observations {
        let mut row = vec![
            o.id.clone(),
            o.entry_age.to_string(),
            o.exit_age.to_string(),
            bit(o.onset),
            bit(o.death),
            o.post_onset_exit_age.to_string(),
            bit(o.post_onset_death),
        ];
        row.extend(o.covariates.iter().map(|z| z.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
