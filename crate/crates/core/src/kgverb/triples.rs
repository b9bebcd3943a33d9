use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub weight: f64,
}

impl WeightedTriple {
    pub fn new(subject: &str, relation: &str, object: &str, weight: f64) -> Self {
        WeightedTriple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            weight,
        }
    }

    /// Heaviest first, then `(subject, relation, object)` ascending.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| self.subject.cmp(&other.subject))
            .then_with(|| self.relation.cmp(&other.relation))
            .then_with(|| self.object.cmp(&other.object))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseOutcome {
    pub triples: Vec<WeightedTriple>,
    /// Rows skipped in lenient mode.
    pub skipped: Vec<RowError>,
}

fn parse_row(line: &str, line_no: usize) -> Result<WeightedTriple, RowError> {
    let err = |message: String| RowError {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(err(format!(
            "expected 4 tab-separated fields, got {}",
            fields.len()
        )));
    }
    if fields[..3].iter().any(|f| f.trim().is_empty()) {
        return Err(err("subject, relation and object must be non-empty".into()));
    }
    let weight: f64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| err(format!("bad weight {:?}", fields[3])))?;
    if !weight.is_finite() {
        return Err(err(format!("weight must be finite, got {weight}")));
    }
    Ok(WeightedTriple::new(
        fields[0].trim(),
        fields[1].trim(),
        fields[2].trim(),
        weight,
    ))
}

/// Reads `subject\trelation\tobject\tweight` rows. Blank lines and `#`
/// comments are ignored. With `strict`, the first bad row is an error;
/// otherwise it is skipped and reported.
pub fn parse_triples<R: BufRead>(reader: R, strict: bool) -> Result<ParseOutcome, RowError> {
    let mut out = ParseOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RowError {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_row(line, line_no) {
            Ok(t) => out.triples.push(t),
            Err(e) if strict => return Err(e),
            Err(e) => out.skipped.push(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Global,
    #[default]
    PerSubject,
}

impl FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Scope::Global),
            "per-subject" => Ok(Scope::PerSubject),
            other => Err(format!("unknown scope {other:?} (global | per-subject)")),
        }
    }
}

/// The `n` heaviest triples overall or per subject, in rank order.
pub fn select_top(triples: &[WeightedTriple], n: usize, scope: Scope) -> Vec<WeightedTriple> {
    let mut sorted: Vec<WeightedTriple> = triples.to_vec();
    sorted.sort_by(WeightedTriple::rank);
    match scope {
        Scope::Global => {
            sorted.truncate(n);
            sorted
        }
        Scope::PerSubject => {
            let mut taken: BTreeMap<String, usize> = BTreeMap::new();
            sorted
                .into_iter()
                .filter(|t| {
                    let c = taken.entry(t.subject.clone()).or_default();
                    *c += 1;
                    *c <= n
                })
                .collect()
        }
    }
}
