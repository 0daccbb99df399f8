//! County-wise cumulative incidence files.
//!
//! The format is a UTF-8 CSV with the exact header
//! `date,county,cumulative_cases`, ISO dates and nonnegative integer counts.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use epinit_core::MeasurementSeries;

pub const HEADER: [&str; 3] = ["date", "county", "cumulative_cases"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceRecord {
    pub date: NaiveDate,
    pub county: String,
    pub cumulative_cases: u64,
    /// Line in the source file.
    pub line: u64,
}

/// Daily cumulative counts of one county, `cases[k]` on `start + k` days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountySeries {
    pub county: String,
    pub start: NaiveDate,
    pub cases: Vec<u64>,
}

impl CountySeries {
    pub fn to_measurements(&self, r: f64) -> MeasurementSeries {
        MeasurementSeries {
            y: self.cases.iter().map(|&c| c as f64).collect(),
            r,
        }
    }
}

pub fn read_records<R: Read>(reader: R, origin: &str) -> Result<Vec<IncidenceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| anyhow!("incidence {origin}: line 1: {e}"))?;
    if header.iter().ne(HEADER) {
        bail!(
            "incidence {origin}: line 1: expected header '{}', got '{}'",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        );
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("incidence {origin}: line {line}: malformed row: {e}")
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let at = || format!("incidence {origin}: line {line}");
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
            .map_err(|e| anyhow!("{}: invalid date '{}': {e}", at(), &row[0]))?;
        let county = row[1].to_string();
        if county.is_empty() {
            bail!("{}: empty county name", at());
        }
        let cumulative_cases = row[2]
            .parse::<u64>()
            .map_err(|e| anyhow!("{}: invalid case count '{}': {e}", at(), &row[2]))?;
        records.push(IncidenceRecord {
            date,
            county,
            cumulative_cases,
            line,
        });
    }
    Ok(records)
}

/// Groups records by county on a common daily axis.
///
/// Day 0 is the first date in the data, or with `threshold` the first date
/// on which the summed counts of all counties reach it. A county without a
/// record on some day keeps its previous count (zero before its first
/// record).
pub fn ingest_records(
    records: &[IncidenceRecord],
    threshold: Option<u64>,
) -> Result<Vec<CountySeries>> {
    if records.is_empty() {
        bail!("incidence: no records");
    }
    let mut by_county: BTreeMap<&str, BTreeMap<NaiveDate, &IncidenceRecord>> = BTreeMap::new();
    for rec in records {
        let days = by_county.entry(&rec.county).or_default();
        if let Some(prev) = days.insert(rec.date, rec) {
            bail!(
                "incidence: line {}: duplicate date {} for county '{}' (first on line {})",
                rec.line,
                rec.date,
                rec.county,
                prev.line
            );
        }
    }
    for (county, days) in &by_county {
        for (a, b) in days.values().zip(days.values().skip(1)) {
            if b.cumulative_cases < a.cumulative_cases {
                bail!(
                    "incidence: line {}: cumulative cases for county '{county}' decrease on {} ({} after {} on {})",
                    b.line,
                    b.date,
                    b.cumulative_cases,
                    a.cumulative_cases,
                    a.date
                );
            }
        }
    }

    let first = records.iter().map(|r| r.date).min().expect("nonempty");
    let last = records.iter().map(|r| r.date).max().expect("nonempty");
    let n_days = (last - first).num_days() as usize + 1;
    let filled: Vec<(&str, Vec<u64>)> = by_county
        .iter()
        .map(|(county, days)| {
            let mut cases = Vec::with_capacity(n_days);
            let mut current = 0;
            for k in 0..n_days {
                let date = first + chrono::Days::new(k as u64);
                if let Some(rec) = days.get(&date) {
                    current = rec.cumulative_cases;
                }
                cases.push(current);
            }
            (*county, cases)
        })
        .collect();

    let day0 = match threshold {
        None => 0,
        Some(t) => (0..n_days)
            .find(|&k| filled.iter().map(|(_, c)| c[k]).sum::<u64>() >= t)
            .ok_or_else(|| anyhow!("incidence: summed cases never reach the threshold {t}"))?,
    };
    let start = first + chrono::Days::new(day0 as u64);
    Ok(filled
        .into_iter()
        .map(|(county, cases)| CountySeries {
            county: county.to_string(),
            start,
            cases: cases[day0..].to_vec(),
        })
        .collect())
}

pub fn ingest_incidence(path: &Path, threshold: Option<u64>) -> Result<Vec<CountySeries>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("incidence: cannot open {}", path.display()))?;
    let records = read_records(file, &path.display().to_string())?;
    ingest_records(&records, threshold)
}

/// Writes one row per county and day, counties in the given order.
pub fn write_incidence<W: Write>(out: W, series: &[CountySeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for s in series {
        for (k, c) in s.cases.iter().enumerate() {
            let date = s.start + chrono::Days::new(k as u64);
            w.write_record([
                date.format("%Y-%m-%d").to_string(),
                s.county.clone(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
