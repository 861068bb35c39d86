//! JSON Lines readers and writers for corpora, queries and relevance pairs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use difret_core::corpus::{Document, Query, RelevancePair};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocRecord {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub qid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub qid: String,
    pub doc_id: String,
}

/// Parses one record per non-blank line; errors carry the 1-based line.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.into(), line: i + 1, msg: e.to_string() })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

fn at_line(path: &Path, line: usize) -> impl FnOnce(difret_core::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.into(), line, msg: e.to_string() }
}

/// Loads documents in file order. Duplicate ids and empty bodies are errors.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let mut seen = BTreeSet::new();
    let mut docs = Vec::new();
    for (line, r) in read_records::<DocRecord>(path)? {
        if !seen.insert(r.id.clone()) {
            return Err(Error::Parse { path: path.into(), line, msg: format!("duplicate document id {:?}", r.id) });
        }
        docs.push(Document::new(r.id, r.title.as_deref(), &r.body).map_err(at_line(path, line))?);
    }
    Ok(docs)
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, r) in read_records::<QueryRecord>(path)? {
        if !seen.insert(r.qid.clone()) {
            return Err(Error::Parse { path: path.into(), line, msg: format!("duplicate query id {:?}", r.qid) });
        }
        out.push(Query::new(r.qid, &r.text).map_err(at_line(path, line))?);
    }
    Ok(out)
}

/// Loads pairs, checking both keys against the known ids.
pub fn load_pairs(path: &Path, query_ids: &BTreeSet<&str>, doc_ids: &BTreeSet<&str>) -> Result<Vec<RelevancePair>> {
    read_records::<PairRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let missing = if !query_ids.contains(r.qid.as_str()) {
                Some(format!("unknown query id {:?}", r.qid))
            } else if !doc_ids.contains(r.doc_id.as_str()) {
                Some(format!("unknown document id {:?}", r.doc_id))
            } else {
                None
            };
            match missing {
                Some(msg) => Err(Error::Parse { path: path.into(), line, msg }),
                None => Ok(RelevancePair::new(r.qid, r.doc_id)),
            }
        })
        .collect()
}

pub fn doc_record(doc: &Document) -> DocRecord {
    DocRecord { id: doc.doc_id.clone(), title: doc.title.as_ref().map(|t| t.join(" ")), body: doc.body.join(" ") }
}

pub fn query_record(q: &Query) -> QueryRecord {
    QueryRecord { qid: q.query_id.clone(), text: q.text.join(" ") }
}

pub fn pair_record(p: &RelevancePair) -> PairRecord {
    PairRecord { qid: p.query_id.clone(), doc_id: p.doc_id.clone() }
}
