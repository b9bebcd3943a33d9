use std::collections::BTreeMap;
use std::io::BufRead;

use thiserror::Error;

use super::triples::WeightedTriple;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template for {relation} must contain {{s}} and {{o}} exactly once: {template:?}")]
    BadTemplate { relation: String, template: String },
    #[error("no template for relation {0}")]
    UnknownRelation(String),
    #[error("template file line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Relation → sentence template with `{s}` and `{o}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateTable {
    templates: BTreeMap<String, String>,
}

const DEFAULTS: [(&str, &str); 10] = [
    ("AtLocation", "You are likely to find {s} in {o}."),
    ("IsA", "{s} is a {o}."),
    ("UsedFor", "{s} is used for {o}."),
    ("CapableOf", "{s} can {o}."),
    ("Causes", "{s} causes {o}."),
    ("HasSubevent", "When {s} happens, {o} can happen."),
    ("HasPrerequisite", "To {s}, you first need to {o}."),
    ("PartOf", "{s} is part of {o}."),
    ("Desires", "{s} wants {o}."),
    ("MotivatedByGoal", "You would {s} because you want to {o}."),
];

impl Default for TemplateTable {
    fn default() -> Self {
        TemplateTable {
            templates: DEFAULTS
                .iter()
                .map(|(r, t)| (r.to_string(), t.to_string()))
                .collect(),
        }
    }
}

impl TemplateTable {
    pub fn empty() -> Self {
        TemplateTable {
            templates: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, relation: &str, template: &str) -> Result<(), TemplateError> {
        if template.matches("{s}").count() != 1 || template.matches("{o}").count() != 1 {
            return Err(TemplateError::BadTemplate {
                relation: relation.into(),
                template: template.into(),
            });
        }
        self.templates.insert(relation.into(), template.into());
        Ok(())
    }

    pub fn get(&self, relation: &str) -> Option<&str> {
        self.templates.get(relation).map(String::as_str)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// `relation\ttemplate` per line; `#` comments and blank lines skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, TemplateError> {
        let mut table = TemplateTable::empty();
        for (i, line) in reader.lines().enumerate() {
            let malformed = |message: String| TemplateError::Malformed {
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| malformed(e.to_string()))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (rel, tpl) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected `relation<TAB>template`".into()))?;
            table.insert(rel.trim(), tpl)?;
        }
        Ok(table)
    }
}

fn surface(s: &str) -> String {
    s.replace('_', " ")
}

pub fn verbalize(
    triple: &WeightedTriple,
    templates: &TemplateTable,
) -> Result<String, TemplateError> {
    let tpl = templates
        .get(&triple.relation)
        .ok_or_else(|| TemplateError::UnknownRelation(triple.relation.clone()))?;
    // single pass so placeholders inside substituted text are left alone
    let (before_s, after_s) = tpl.split_once("{s}").expect("validated template");
    let subject = surface(&triple.subject);
    let object = surface(&triple.object);
    Ok(match before_s.split_once("{o}") {
        Some((a, b)) => format!("{a}{object}{b}{subject}{}", after_s),
        None => {
            let (c, d) = after_s.split_once("{o}").expect("validated template");
            format!("{before_s}{subject}{c}{object}{d}")
        }
    })
}

/// Verbalizes a batch, skipping triples whose relation has no template.
pub fn verbalize_all(
    triples: &[WeightedTriple],
    templates: &TemplateTable,
) -> (Vec<String>, Vec<WeightedTriple>) {
    let mut sentences = Vec::with_capacity(triples.len());
    let mut skipped = Vec::new();
    for t in triples {
        match verbalize(t, templates) {
            Ok(s) => sentences.push(s),
            Err(_) => skipped.push(t.clone()),
        }
    }
    (sentences, skipped)
}
