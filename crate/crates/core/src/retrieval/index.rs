//! In-memory inverted index with BM25 ranking.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::query::GeneratedQuery;
use super::tokenize::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultSource {
    Local,
    Web,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedResult {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub score: f64,
    pub rank: usize,
    pub source: ResultSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Index into the stored documents.
    pub doc: usize,
    pub tf: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("duplicate doc id: {0}")]
    DuplicateDocId(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty index")]
    EmptyIndex,
    #[error("corpus line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("corpus io: {0}")]
    Io(String),
}

#[derive(Debug, Clone)]
struct StoredDoc {
    doc: Document,
    length: usize,
}

/// Immutable once built; share it behind an `Arc`.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    postings: HashMap<String, Vec<Posting>>,
    docs: Vec<StoredDoc>,
    by_id: HashMap<String, usize>,
    avg_doc_length: f64,
}

/// Builds the index. Title tokens are indexed together with the body.
pub fn index_corpus<I>(docs: I) -> Result<CorpusIndex, IndexError>
where
    I: IntoIterator<Item = Document>,
{
    let mut index = CorpusIndex::default();
    let mut total_len = 0usize;
    for doc in docs {
        if index.by_id.contains_key(&doc.doc_id) {
            return Err(IndexError::DuplicateDocId(doc.doc_id));
        }
        let ix = index.docs.len();
        let mut tfs: HashMap<String, u32> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        let tokens = tokenize(&doc.title).into_iter().chain(tokenize(&doc.body));
        let mut length = 0;
        for t in tokens {
            length += 1;
            let e = tfs.entry(t.clone()).or_insert(0);
            if *e == 0 {
                order.push(t);
            }
            *e += 1;
        }
        for term in order {
            let tf = tfs[&term];
            index.postings.entry(term).or_default().push(Posting { doc: ix, tf });
        }
        total_len += length;
        index.by_id.insert(doc.doc_id.clone(), ix);
        index.docs.push(StoredDoc { doc, length });
    }
    if index.docs.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    index.avg_doc_length = total_len as f64 / index.docs.len() as f64;
    Ok(index)
}

/// Reads newline-delimited `{"doc_id","title","body"}` records.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, IndexError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IndexError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| IndexError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(doc);
    }
    Ok(out)
}

impl CorpusIndex {
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).map(|&i| self.docs[i].length)
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i].doc)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn doc_id_at(&self, ix: usize) -> &str {
        &self.docs[ix].doc.doc_id
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; positive for every df.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, length: usize) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - BM25_B + BM25_B * length as f64 / self.avg_doc_length;
        idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
    }

    fn result(&self, ix: usize, score: f64, rank: usize) -> RetrievedResult {
        let d = &self.docs[ix].doc;
        RetrievedResult {
            doc_id: d.doc_id.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
            score,
            rank,
            source: ResultSource::Local,
        }
    }
}

/// Weighted query terms: tokens of the query text at weight 1 each (repeats
/// add up) plus the expansion terms at their own weight.
pub fn query_terms(q: &GeneratedQuery) -> Vec<(String, f64)> {
    let mut terms: Vec<(String, f64)> = Vec::new();
    let mut add = |term: String, w: f64| match terms.iter_mut().find(|(t, _)| *t == term) {
        Some((_, acc)) => *acc += w,
        None => terms.push((term, w)),
    };
    for t in tokenize(&q.text) {
        add(t, 1.0);
    }
    for ct in &q.context_terms {
        add(ct.term.clone(), ct.weight);
    }
    terms
}

/// Top-`k` documents by BM25. Documents with zero score are not returned;
/// equal scores are ordered by doc id.
pub fn search(index: &CorpusIndex, q: &GeneratedQuery, k: usize) -> Result<Vec<RetrievedResult>, IndexError> {
    if index.doc_count() == 0 {
        return Err(IndexError::EmptyIndex);
    }
    let mut scores = vec![0.0f64; index.doc_count()];
    for (term, weight) in query_terms(q) {
        if weight <= 0.0 {
            continue;
        }
        let idf = index.idf(&term);
        for p in index.postings(&term) {
            scores[p.doc] += weight * index.term_score(idf, p.tf, index.docs[p.doc].length);
        }
    }
    let mut hits: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|(_, s)| *s > 0.0)
        .collect();
    hits.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.doc_id_at(a.0).cmp(index.doc_id_at(b.0)))
    });
    hits.truncate(k);
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(r, (ix, s))| index.result(ix, s, r + 1))
        .collect())
}
