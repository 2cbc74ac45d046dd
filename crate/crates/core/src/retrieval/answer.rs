//! Result generation: turns a ranked list into response candidates.

use std::collections::HashSet;

use super::index::RetrievedResult;
use super::query::GeneratedQuery;
use super::tokenize::tokenize;
use super::RetrievalConfig;
use crate::model::{Message, OptionItem, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultMode {
    Search,
    Qa,
}

impl ResultMode {
    pub fn action_name(self) -> &'static str {
        match self {
            ResultMode::Search => "search",
            ResultMode::Qa => "qa",
        }
    }
}

/// Maps a non-negative score into `[0, 1)`.
pub fn score_to_confidence(score: f64) -> f64 {
    let s = score.max(0.0);
    s / (s + 1.0)
}

/// Splits on `.`, `?` and `!`; the terminator stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        current.push(ch);
        if matches!(ch, '.' | '?' | '!') {
            while let Some(&next) = chars.peek() {
                if matches!(next, '.' | '?' | '!') {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            push_sentence(&mut out, &mut current);
        }
    }
    push_sentence(&mut out, &mut current);
    out
}

fn push_sentence(out: &mut Vec<String>, current: &mut String) {
    let s = current.trim();
    if s.chars().any(char::is_alphanumeric) {
        out.push(s.to_string());
    }
    current.clear();
}

pub fn snippet(body: &str, chars: usize) -> String {
    body.chars().take(chars).collect()
}

pub fn option_label(r: &RetrievedResult, snippet_chars: usize) -> String {
    let snip = snippet(&r.body, snippet_chars);
    match (r.title.is_empty(), snip.is_empty()) {
        (_, true) => r.title.clone(),
        (true, false) => snip,
        (false, false) => format!("{}: {}", r.title, snip),
    }
}

/// Sum of idf over distinct query terms present in the sentence.
pub fn sentence_score(query_terms: &[String], sentence: &str, idf: &dyn Fn(&str) -> f64) -> f64 {
    let present: HashSet<String> = tokenize(sentence).into_iter().collect();
    query_terms
        .iter()
        .filter(|t| present.contains(*t))
        .map(|t| idf(t))
        .sum()
}

/// Best sentence of a text and its score; earliest wins ties.
pub fn best_sentence(
    query_terms: &[String],
    text: &str,
    idf: &dyn Fn(&str) -> f64,
) -> Option<(String, f64)> {
    let mut best: Option<(String, f64)> = None;
    for s in split_sentences(text) {
        let score = sentence_score(query_terms, &s, idf);
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((s, score));
        }
    }
    best
}

/// Builds response candidates for `trigger`. An empty result list yields no
/// candidates.
pub fn generate_result(
    trigger: &Message,
    q: &GeneratedQuery,
    results: &[RetrievedResult],
    mode: ResultMode,
    cfg: &RetrievalConfig,
    idf: &dyn Fn(&str) -> f64,
) -> Vec<Message> {
    if results.is_empty() {
        return Vec::new();
    }
    let action = mode.action_name();
    match mode {
        ResultMode::Search => {
            let items = results
                .iter()
                .map(|r| OptionItem::new(r.doc_id.clone(), option_label(r, cfg.snippet_chars)))
                .collect();
            let payload = Payload::Options {
                prompt: format!("Top results for: {}", q.text.trim()),
                items,
            };
            vec![Message::system_reply(
                trigger,
                format!("{}-{action}-1", trigger.message_id),
                payload,
                action,
                score_to_confidence(results[0].score),
            )]
        }
        ResultMode::Qa => {
            let mut terms: Vec<String> = Vec::new();
            for t in tokenize(&q.text) {
                if !terms.contains(&t) {
                    terms.push(t);
                }
            }
            let mut answers: Vec<(String, f64)> = results
                .iter()
                .take(cfg.qa_docs)
                .filter_map(|r| best_sentence(&terms, &r.body, idf))
                .collect();
            answers.sort_by(|a, b| b.1.total_cmp(&a.1));
            answers
                .into_iter()
                .enumerate()
                .map(|(i, (sentence, score))| {
                    Message::system_reply(
                        trigger,
                        format!("{}-{action}-{}", trigger.message_id, i + 1),
                        Payload::text(sentence),
                        action,
                        score_to_confidence(score),
                    )
                })
                .collect()
        }
    }
}
