//! Query generation: rewrites the last user turn with resolved antecedents and
//! expands it with weighted terms from the previous turn.

use serde::Serialize;

use super::coref::{user_text, ResolutionMap};
use super::tokenize::{is_stopword, tokenize};
use super::RetrievalConfig;
use crate::model::Conversation;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextTerm {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedQuery {
    pub text: String,
    pub source_message_id: String,
    pub resolution: ResolutionMap,
    pub context_terms: Vec<ContextTerm>,
}

impl GeneratedQuery {
    /// A bare query with no conversational context.
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            source_message_id: String::new(),
            resolution: ResolutionMap::default(),
            context_terms: Vec::new(),
        }
    }
}

/// Returns `None` when the conversation does not end in a user text turn.
pub fn generate_query(
    conv: &Conversation,
    res: &ResolutionMap,
    cfg: &RetrievalConfig,
) -> Option<GeneratedQuery> {
    let last = conv.last()?;
    let text = user_text(last)?;

    let mut chars: Vec<char> = text.chars().collect();
    let mut entries: Vec<_> = res.entries.iter().collect();
    entries.sort_by_key(|e| std::cmp::Reverse(e.span.0));
    for e in entries {
        let (start, end) = e.span;
        if start <= end && end <= chars.len() {
            chars.splice(start..end, e.antecedent.chars());
        }
    }
    let rewritten: String = chars.into_iter().collect();

    let mut context_terms: Vec<ContextTerm> = Vec::new();
    if cfg.context_weight > 0.0 {
        let previous = conv.messages[..conv.messages.len() - 1]
            .iter()
            .rev()
            .find_map(user_text);
        if let Some(prev) = previous {
            for token in tokenize(prev) {
                if !is_stopword(&token) && !context_terms.iter().any(|t| t.term == token) {
                    context_terms.push(ContextTerm {
                        term: token,
                        weight: cfg.context_weight,
                    });
                }
            }
        }
    }

    Some(GeneratedQuery {
        text: rewritten,
        source_message_id: last.message_id.clone(),
        resolution: res.clone(),
        context_terms,
    })
}
