use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::compute::Tensor;
use crate::data::IdMap;
use crate::error::{Error, Result};

/// One raw rating row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: String,
    pub item: String,
    pub rating: i64,
}

/// Deduplicated raw ratings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionSet {
    pub records: Vec<RatingRecord>,
}

/// Directed "follower follows followee" pairs, without self links or duplicates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SocialLinkSet {
    pub records: Vec<(String, String)>,
}

/// Counters gathered while reading a file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub self_links: usize,
}

/// Field separator of a text table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Tab,
    Comma,
    Whitespace,
}

impl Delimiter {
    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

/// Column layout of a ratings or links table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub user: usize,
    pub item: usize,
    pub rating: usize,
    pub delimiter: Delimiter,
    pub skip_header: bool,
    /// Malformed rows tolerated before the load aborts.
    pub max_malformed: usize,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            user: 0,
            item: 1,
            rating: 2,
            delimiter: Delimiter::Tab,
            skip_header: false,
            max_malformed: 0,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Iterates `(1-based line number, fields)` over the non-blank data rows.
fn rows<'a>(
    text: &'a str,
    spec: &'a ColumnSpec,
) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .skip(usize::from(spec.skip_header))
        .filter(|(_, l)| !l.trim().is_empty())
        .map(move |(i, l)| (i + 1, spec.delimiter.split(l)))
}

struct Malformed<'a> {
    path: &'a Path,
    limit: usize,
    count: usize,
}

impl Malformed<'_> {
    fn record(&mut self, line: usize, reason: String) -> Result<()> {
        self.count += 1;
        if self.count > self.limit {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line,
                reason,
            });
        }
        warn!("{}:{line}: skipping malformed row: {reason}", self.path.display());
        Ok(())
    }
}

pub fn load_interactions(path: &Path, spec: &ColumnSpec) -> Result<(InteractionSet, LoadReport)> {
    let text = read(path)?;
    let mut report = LoadReport::default();
    let mut bad = Malformed {
        path,
        limit: spec.max_malformed,
        count: 0,
    };
    let mut seen = HashSet::new();
    let mut out = InteractionSet::default();
    let needed = spec.user.max(spec.item).max(spec.rating) + 1;

    for (line, fields) in rows(&text, spec) {
        report.rows += 1;
        if fields.len() < needed {
            bad.record(line, format!("expected at least {needed} columns, found {}", fields.len()))?;
            continue;
        }
        let (user, item) = (fields[spec.user], fields[spec.item]);
        if user.is_empty() || item.is_empty() {
            bad.record(line, "empty id".into())?;
            continue;
        }
        let rating = match fields[spec.rating].parse::<i64>() {
            Ok(r) => r,
            Err(_) => {
                bad.record(line, format!("rating {:?} is not an integer", fields[spec.rating]))?;
                continue;
            }
        };
        if !seen.insert((user.to_string(), item.to_string())) {
            report.duplicates += 1;
            continue;
        }
        out.records.push(RatingRecord {
            user: user.to_string(),
            item: item.to_string(),
            rating,
        });
    }
    report.malformed = bad.count;
    Ok((out, report))
}

pub fn load_social_links(path: &Path, spec: &ColumnSpec) -> Result<(SocialLinkSet, LoadReport)> {
    let text = read(path)?;
    let mut report = LoadReport::default();
    let mut bad = Malformed {
        path,
        limit: spec.max_malformed,
        count: 0,
    };
    let mut seen = HashSet::new();
    let mut out = SocialLinkSet::default();

    for (line, fields) in rows(&text, spec) {
        report.rows += 1;
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            bad.record(line, "expected follower and followee columns".into())?;
            continue;
        }
        let (a, b) = (fields[0], fields[1]);
        if a == b {
            report.self_links += 1;
            continue;
        }
        if !seen.insert((a.to_string(), b.to_string())) {
            report.duplicates += 1;
            continue;
        }
        out.records.push((a.to_string(), b.to_string()));
    }
    report.malformed = bad.count;
    Ok((out, report))
}

/// Feature rows aligned to an id vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    /// Entities of the vocabulary with no row in the file (left as zeros).
    pub missing: usize,
    /// File rows whose id is not in the vocabulary.
    pub dropped: usize,
}

/// Reads `id<TAB>v1,v2,...` rows and aligns them to `ids`.
pub fn load_features(path: &Path, ids: &IdMap) -> Result<FeatureMatrix> {
    let text = read(path)?;
    let mut width: Option<usize> = None;
    let mut rows_by_index: Vec<Option<Vec<f64>>> = vec![None; ids.len()];
    let mut dropped = 0;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected id<TAB>values".into()))?;
        let values = rest
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("bad feature value: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite feature value".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(format!(
                    "feature width {} differs from earlier width {w}",
                    values.len()
                )))
            }
            Some(_) => {}
        }
        match ids.index_of(id.trim()) {
            Some(idx) => rows_by_index[idx as usize] = Some(values),
            None => dropped += 1,
        }
    }

    let width = width.unwrap_or(0);
    let mut values = Tensor::zeros(ids.len(), width);
    let mut missing = 0;
    for (r, row) in rows_by_index.into_iter().enumerate() {
        match row {
            Some(v) => values.row_mut(r).copy_from_slice(&v),
            None => missing += 1,
        }
    }
    if missing > 0 {
        warn!("{}: {missing} entities have no feature row; using zeros", path.display());
    }
    Ok(FeatureMatrix {
        values,
        missing,
        dropped,
    })
}

/// Rescales every column to zero mean and unit variance (constant columns
/// become zero).
pub fn standardize_columns(features: &mut Tensor) {
    let (rows, cols) = (features.rows(), features.cols());
    if rows == 0 {
        return;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| features.get(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows)
            .map(|r| (features.get(r, c) - mean).powi(2))
            .sum::<f64>()
            / rows as f64;
        let std = var.sqrt();
        for r in 0..rows {
            let v = features.get(r, c) - mean;
            features.set(r, c, if std > 0.0 { v / std } else { 0.0 });
        }
    }
}
