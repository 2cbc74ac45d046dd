//! Rule-based co-reference resolution from the latest user turn back into the
//! conversation history.
//!
//! Every anaphor in the last user message resolves to the same antecedent,
//! taken from the most recent earlier user message, in this order:
//!
//! 1. the longest quoted or capitalized phrase (ties go to the later one);
//! 2. the antecedent that message itself resolved to, if it had one;
//! 3. the maximal run of non-stopword words at its end.
//!
//! A message-initial capitalized stopword ("Who", "Tell") is not part of a
//! capitalized phrase, and phrases made only of stopwords are ignored.

use serde::Serialize;

use super::tokenize::{is_stopword, token_spans};
use crate::model::{Conversation, Message};

/// Pronouns and demonstratives that trigger resolution.
pub const ANAPHORS: &[&str] = &[
    "it", "its", "they", "them", "their", "he", "she", "him", "her", "his", "hers", "this", "that",
];

pub fn is_anaphor(token: &str) -> bool {
    ANAPHORS.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Resolution {
    /// Character interval `[start, end)` in the last user message.
    pub span: (usize, usize),
    pub surface: String,
    pub antecedent: String,
    pub source_message_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResolutionMap {
    pub entries: Vec<Resolution>,
}

impl ResolutionMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

impl std::fmt::Display for ResolutionMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.entries.is_empty() {
            return f.write_str("(none)");
        }
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|e| format!("{} -> {}", e.surface, e.antecedent))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

/// Text of a message that counts as a user turn.
pub(crate) fn user_text(m: &Message) -> Option<&str> {
    if m.sender.is_human() {
        m.text()
    } else {
        None
    }
}

/// Resolves anaphors in the conversation's last message. Returns an empty
/// map when the last message is not a user text turn.
pub fn resolve_coreferences(conv: &Conversation) -> ResolutionMap {
    let turns: Vec<&Message> = conv.messages.iter().filter(|m| user_text(m).is_some()).collect();
    match conv.last() {
        Some(last) if user_text(last).is_some() => {}
        _ => return ResolutionMap::default(),
    }
    // Resolve every user turn in order so later turns can carry an entity
    // forward through pronoun-only turns.
    let mut maps: Vec<ResolutionMap> = Vec::with_capacity(turns.len());
    for i in 0..turns.len() {
        let map = resolve_turn(turns[i], i.checked_sub(1).map(|p| (turns[p], &maps[p])));
        maps.push(map);
    }
    maps.pop().unwrap_or_default()
}

fn resolve_turn(turn: &Message, previous: Option<(&Message, &ResolutionMap)>) -> ResolutionMap {
    let text = user_text(turn).unwrap_or_default();
    let anaphors: Vec<(usize, usize, String)> = token_spans(text)
        .into_iter()
        .filter(|(_, _, t)| is_anaphor(t))
        .collect();
    if anaphors.is_empty() {
        return ResolutionMap::default();
    }
    let Some((prev, prev_map)) = previous else {
        return ResolutionMap::default();
    };
    let Some((antecedent, source)) = antecedent_of(prev, prev_map) else {
        return ResolutionMap::default();
    };
    let chars: Vec<char> = text.chars().collect();
    let entries = anaphors
        .into_iter()
        .map(|(start, end, _)| Resolution {
            span: (start, end),
            surface: chars[start..end].iter().collect(),
            antecedent: antecedent.clone(),
            source_message_id: source.clone(),
        })
        .collect();
    ResolutionMap { entries }
}

/// Most salient entity of a user turn, with the id of the message it
/// literally appears in.
fn antecedent_of(turn: &Message, own_map: &ResolutionMap) -> Option<(String, String)> {
    let text = user_text(turn)?;
    if let Some(phrase) = longest_marked_phrase(text) {
        return Some((phrase, turn.message_id.clone()));
    }
    if let Some(e) = own_map.entries.first() {
        return Some((e.antecedent.clone(), e.source_message_id.clone()));
    }
    tail_phrase(text).map(|p| (p, turn.message_id.clone()))
}

/// Whitespace-separated words with surrounding punctuation removed, each with
/// a flag telling whether punctuation followed it (which closes a phrase).
fn words(text: &str) -> Vec<(String, bool)> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            let closes = raw
                .chars()
                .last()
                .is_some_and(|c| !c.is_alphanumeric());
            Some((trimmed.to_string(), closes))
        })
        .collect()
}

fn all_stopwords(phrase: &[String]) -> bool {
    phrase.iter().all(|w| is_stopword(&w.to_lowercase()))
}

/// Candidate phrases: quoted spans and runs of capitalized words, in order of
/// appearance. Returns the one with the most words, later wins ties.
fn longest_marked_phrase(text: &str) -> Option<String> {
    let mut candidates: Vec<Vec<String>> = Vec::new();

    for quoted in quoted_spans(text) {
        let ws: Vec<String> = words(&quoted).into_iter().map(|(w, _)| w).collect();
        if !ws.is_empty() && !all_stopwords(&ws) {
            candidates.push(ws);
        }
    }

    let ws = words(text);
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, out: &mut Vec<Vec<String>>| {
        if !run.is_empty() && !all_stopwords(run) {
            out.push(run.clone());
        }
        run.clear();
    };
    for (i, (w, closes)) in ws.iter().enumerate() {
        let capitalized = w.chars().next().is_some_and(char::is_uppercase);
        let initial_filler = i == 0 && is_stopword(&w.to_lowercase());
        if capitalized && !initial_filler {
            run.push(w.clone());
            if *closes {
                flush(&mut run, &mut candidates);
            }
        } else {
            flush(&mut run, &mut candidates);
        }
    }
    flush(&mut run, &mut candidates);

    let mut best: Option<&Vec<String>> = None;
    for c in &candidates {
        if best.is_none_or(|b| c.len() >= b.len()) {
            best = Some(c);
        }
    }
    best.map(|b| b.join(" "))
}

fn quoted_spans(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<String> = None;
    for ch in text.chars() {
        let is_open = ch == '"' || ch == '\u{201c}';
        let is_close = ch == '"' || ch == '\u{201d}';
        match current.as_mut() {
            Some(buf) if is_close => {
                out.push(std::mem::take(buf));
                current = None;
            }
            Some(buf) => buf.push(ch),
            None if is_open => current = Some(String::new()),
            None => {}
        }
    }
    out
}

/// Trailing stopwords are skipped, then non-stopword words are collected
/// backwards until the next stopword.
fn tail_phrase(text: &str) -> Option<String> {
    let ws: Vec<String> = words(text).into_iter().map(|(w, _)| w).collect();
    let mut end = ws.len();
    while end > 0 && is_stopword(&ws[end - 1].to_lowercase()) {
        end -= 1;
    }
    let mut start = end;
    while start > 0 && !is_stopword(&ws[start - 1].to_lowercase()) {
        start -= 1;
    }
    (start < end).then(|| ws[start..end].join(" "))
}
