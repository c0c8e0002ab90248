//! Transition logs of `(from_id, to_id)` string pairs.
//!
//! Input is UTF-8 CSV with two columns and an optional `from_id,to_id` header.
//! A state's visit count is the number of records that touch it, a self-loop
//! counting once. States below the threshold are dropped together with every
//! record that touches them; survivors are indexed in order of first appearance.

use std::collections::HashMap;
use std::io::Read;

use crate::chain::TransitionCounts;
use crate::error::{Error, Result};

/// Bijection between external state ids and matrix indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateIndex {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl StateIndex {
    fn insert(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        let k = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), k);
        k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, k: usize) -> Option<&str> {
        self.ids.get(k).map(String::as_str)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Parses the records of a transition log.
pub fn read_records<R: Read>(r: R) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, found {}", rec.len()) });
        }
        let (from, to) = (&rec[0], &rec[1]);
        if k == 0 && from.eq_ignore_ascii_case("from_id") && to.eq_ignore_ascii_case("to_id") {
            continue;
        }
        if from.is_empty() || to.is_empty() {
            return Err(Error::Parse { line, message: "empty state id".into() });
        }
        out.push((from.to_owned(), to.to_owned()));
    }
    Ok(out)
}

pub fn ingest_transitions<S: AsRef<str>>(
    records: &[(S, S)],
    min_visits: u64,
) -> Result<(TransitionCounts, StateIndex)> {
    if records.is_empty() {
        return Err(Error::EmptyResult("no transition records".into()));
    }
    let mut visits: HashMap<&str, u64> = HashMap::new();
    for (a, b) in records {
        let (a, b) = (a.as_ref(), b.as_ref());
        *visits.entry(a).or_default() += 1;
        if a != b {
            *visits.entry(b).or_default() += 1;
        }
    }
    let keep = |s: &str| visits[s] >= min_visits;
    let mut index = StateIndex::default();
    let mut pairs = Vec::new();
    for (a, b) in records {
        let (a, b) = (a.as_ref(), b.as_ref());
        if keep(a) && keep(b) {
            pairs.push((index.insert(a), index.insert(b)));
        }
    }
    if index.is_empty() {
        return Err(Error::EmptyResult(format!("no state has at least {min_visits} visits")));
    }
    Ok((TransitionCounts::from_transitions(index.len(), pairs), index))
}
