//! Second-stage re-ranking.

use std::collections::HashSet;

use super::index::RetrievedResult;
use super::query::GeneratedQuery;
use super::tokenize::tokenize;

/// A re-ranking stage. Stages can be chained; each receives the output of the
/// previous one and must return a list with ranks `1..n` and non-increasing
/// scores.
pub trait Reranker: Send + Sync {
    fn name(&self) -> &str;
    fn rerank(&self, q: &GeneratedQuery, results: Vec<RetrievedResult>) -> Vec<RetrievedResult>;
}

/// Boosts documents containing query bigrams verbatim:
/// `score * (1 + boost * matched_bigrams / max(1, query_bigrams))`.
#[derive(Debug, Clone)]
pub struct ProximityReranker {
    pub depth: usize,
    pub boost: f64,
}

fn bigrams(tokens: &[String]) -> impl Iterator<Item = (&str, &str)> {
    tokens.windows(2).map(|w| (w[0].as_str(), w[1].as_str()))
}

impl ProximityReranker {
    pub fn new(depth: usize, boost: f64) -> Self {
        Self { depth, boost }
    }

    /// Fraction of distinct query bigrams that occur in the document.
    pub fn overlap(query_text: &str, doc: &RetrievedResult) -> f64 {
        let q_tokens = tokenize(query_text);
        let wanted: HashSet<(&str, &str)> = bigrams(&q_tokens).collect();
        if wanted.is_empty() {
            return 0.0;
        }
        let title = tokenize(&doc.title);
        let body = tokenize(&doc.body);
        let present: HashSet<(&str, &str)> = bigrams(&title).chain(bigrams(&body)).collect();
        let matched = wanted.iter().filter(|b| present.contains(*b)).count();
        matched as f64 / wanted.len().max(1) as f64
    }

    pub fn multiplier(&self, query_text: &str, doc: &RetrievedResult) -> f64 {
        1.0 + self.boost * Self::overlap(query_text, doc)
    }
}

impl Reranker for ProximityReranker {
    fn name(&self) -> &str {
        "proximity"
    }

    fn rerank(&self, q: &GeneratedQuery, mut results: Vec<RetrievedResult>) -> Vec<RetrievedResult> {
        let depth = self.depth.min(results.len());
        let tail = results.split_off(depth);
        let mut head = results;
        for r in &mut head {
            r.score *= self.multiplier(&q.text, r);
        }
        // stable: equal scores keep their first-stage order
        head.sort_by(|a, b| b.score.total_cmp(&a.score));
        head.extend(tail);
        for (i, r) in head.iter_mut().enumerate() {
            r.rank = i + 1;
        }
        head
    }
}
