//! Long-format outcome series: loading, writing and case-study operationalisation.
//!
//! A dataset is a set of subjects, each with values of a continuous outcome at
//! integer time indices (1 = baseline). Missing values are not stored; they
//! are counted on load and otherwise show up as gaps in a subject's series.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

/// One subject's observed `(time, value)` pairs, sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub id: String,
    pub observations: Vec<(u32, f64)>,
}

impl SubjectSeries {
    pub fn first_time(&self) -> Option<u32> {
        self.observations.first().map(|&(t, _)| t)
    }

    pub fn value_at(&self, time: u32) -> Option<f64> {
        self.observations
            .binary_search_by_key(&time, |&(t, _)| t)
            .ok()
            .map(|i| self.observations[i].1)
    }

    /// Length of the run of consecutive time indices starting at the first observation.
    pub fn contiguous_len(&self) -> usize {
        let Some(first) = self.first_time() else {
            return 0;
        };
        self.observations
            .iter()
            .enumerate()
            .take_while(|&(i, &(t, _))| t == first + i as u32)
            .count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LongDataset {
    pub subjects: Vec<SubjectSeries>,
    /// Records read with a missing-value marker.
    pub n_missing: usize,
    pub units: Option<String>,
    pub cutpoint_hint: Option<f64>,
}

impl LongDataset {
    /// Build from `(subject, time, value)` records. Subjects keep first-seen order.
    pub fn from_records<I, S>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32, Option<f64>)>,
        S: Into<String>,
    {
        let mut builder = Builder::default();
        for (i, (id, time, value)) in records.into_iter().enumerate() {
            let id = id.into();
            if time == 0 {
                return Err(Error::MalformedRow {
                    path: "<records>".into(),
                    line: i as u64 + 1,
                    message: "time index must be >= 1".into(),
                });
            }
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue(i));
                }
            }
            if builder.push(id.clone(), time, value).is_err() {
                return Err(Error::DuplicateObservation {
                    path: "<records>".into(),
                    line: i as u64 + 1,
                    subject: id,
                    time,
                });
            }
        }
        Ok(builder.finish())
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_records(&self) -> usize {
        self.subjects.iter().map(|s| s.observations.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_records() == 0
    }

    pub fn max_time(&self) -> Option<u32> {
        self.subjects
            .iter()
            .filter_map(|s| s.observations.last().map(|&(t, _)| t))
            .max()
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, u32, f64)> + '_ {
        self.subjects.iter().flat_map(|s| {
            s.observations
                .iter()
                .map(move |&(t, v)| (s.id.as_str(), t, v))
        })
    }
}

#[derive(Default)]
struct Builder {
    index: HashMap<String, usize>,
    subjects: Vec<(String, Vec<(u32, Option<f64>)>)>,
}

impl Builder {
    /// `Err(())` on a duplicate (subject, time).
    fn push(&mut self, id: String, time: u32, value: Option<f64>) -> std::result::Result<(), ()> {
        let k = match self.index.get(&id) {
            Some(&k) => k,
            None => {
                self.subjects.push((id.clone(), Vec::new()));
                self.index.insert(id, self.subjects.len() - 1);
                self.subjects.len() - 1
            }
        };
        let obs = &mut self.subjects[k].1;
        if obs.iter().any(|&(t, _)| t == time) {
            return Err(());
        }
        obs.push((time, value));
        Ok(())
    }

    fn finish(self) -> LongDataset {
        let mut n_missing = 0;
        let subjects = self
            .subjects
            .into_iter()
            .map(|(id, mut obs)| {
                obs.sort_by_key(|&(t, _)| t);
                let observations = obs
                    .into_iter()
                    .filter_map(|(t, v)| {
                        if v.is_none() {
                            n_missing += 1;
                        }
                        v.map(|v| (t, v))
                    })
                    .collect();
                SubjectSeries { id, observations }
            })
            .collect();
        LongDataset {
            subjects,
            n_missing,
            units: None,
            cutpoint_hint: None,
        }
    }
}

/// Column located by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub subject: ColumnRef,
    pub time: ColumnRef,
    pub value: ColumnRef,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            subject: ColumnRef::Name("subject".into()),
            time: ColumnRef::Name("time".into()),
            value: ColumnRef::Name("value".into()),
        }
    }
}

pub fn is_missing_marker(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

/// Load a long-format CSV (header required, `#` lines are comments).
pub fn load_long_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LongDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_long_csv(file, path, schema)
}

pub fn read_long_csv<R: Read>(reader: R, path: &Path, schema: &CsvSchema) -> Result<LongDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let locate = |c: &ColumnRef| -> Result<usize> {
        match c {
            ColumnRef::Name(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::UnknownColumn {
                    path: path.to_path_buf(),
                    column: name.clone(),
                }
            }),
            ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::UnknownColumn {
                path: path.to_path_buf(),
                column: format!("#{i}"),
            }),
        }
    };
    let (ci, ct, cv) = (
        locate(&schema.subject)?,
        locate(&schema.time)?,
        locate(&schema.value)?,
    );

    let mut builder = Builder::default();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| malformed(format!("expected at least {} fields", i + 1)))
        };
        let subject = field(ci)?.to_string();
        if subject.is_empty() {
            return Err(malformed("empty subject identifier".into()));
        }
        let time_field = field(ct)?;
        let time: u32 = time_field
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| malformed(format!("time {time_field:?} is not an integer >= 1")))?;
        let value_field = field(cv)?;
        let value = if is_missing_marker(value_field) {
            None
        } else {
            let v: f64 = value_field
                .parse()
                .map_err(|_| malformed(format!("value {value_field:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(malformed(format!("value {value_field:?} is not finite")));
            }
            Some(v)
        };
        if builder.push(subject.clone(), time, value).is_err() {
            return Err(Error::DuplicateObservation {
                path: path.to_path_buf(),
                line,
                subject,
                time,
            });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(builder.finish())
}

/// Write `subject,time,value` rows with `digits` significant digits.
pub fn write_long_csv<W: Write>(data: &LongDataset, out: W, digits: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject", "time", "value"])?;
    for (id, t, v) in data.records() {
        w.write_record([id, &t.to_string(), &format::sig(v, digits)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OperationalizeOptions {
    /// Drop subjects whose baseline value exceeds the cut-point.
    pub baseline_exclusion: bool,
    /// Admit subjects whose first observation is after time 1.
    pub allow_late_entry: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationalizeReport {
    pub n_input: usize,
    pub n_retained: usize,
    pub n_dropped_baseline: usize,
    pub n_dropped_late_entry: usize,
    /// Records removed because they follow a gap.
    pub n_records_censored: usize,
    /// Retained subjects that entered after time 1 (only with `allow_late_entry`).
    pub late_entrants: Vec<String>,
}

/// Censor every subject at the end of their first uninterrupted run of
/// observations and optionally exclude subjects with an event at baseline.
pub fn operationalize(
    data: &LongDataset,
    cutpoint: f64,
    options: OperationalizeOptions,
) -> (LongDataset, OperationalizeReport) {
    let mut report = OperationalizeReport {
        n_input: data.n_subjects(),
        ..Default::default()
    };
    let mut subjects = Vec::with_capacity(data.subjects.len());
    for s in &data.subjects {
        let Some(first) = s.first_time() else {
            continue;
        };
        if first > 1 && !options.allow_late_entry {
            report.n_dropped_late_entry += 1;
            continue;
        }
        if options.baseline_exclusion && s.observations[0].1 > cutpoint {
            report.n_dropped_baseline += 1;
            continue;
        }
        let keep = s.contiguous_len();
        report.n_records_censored += s.observations.len() - keep;
        if first > 1 {
            report.late_entrants.push(s.id.clone());
        }
        subjects.push(SubjectSeries {
            id: s.id.clone(),
            observations: s.observations[..keep].to_vec(),
        });
    }
    report.n_retained = subjects.len();
    let out = LongDataset {
        subjects,
        n_missing: data.n_missing,
        units: data.units.clone(),
        cutpoint_hint: data.cutpoint_hint.or(Some(cutpoint)),
    };
    (out, report)
}
