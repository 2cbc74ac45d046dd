//! Batch (file IO) mode: feeds multi-turn topics through the full pipeline and
//! writes a standard run file.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cis_core::retrieval::RetrievedResult;
use cis_core::{ActorRole, ConversationMode, InteractionStore, Leg, Message, Payload};
use serde::Deserialize;
use thiserror::Error;

use crate::engine::{load_index, Engine};
use cis_core::{InteractionLog, Settings};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchTopic {
    pub topic_id: String,
    pub turns: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("{path}:{line}: malformed topic: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{path}:{line}: topic {topic_id} has no turns")]
    EmptyTurns { path: String, line: usize, topic_id: String },
    #[error("{path}:{line}: duplicate topic id {topic_id}")]
    DuplicateTopic { path: String, line: usize, topic_id: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Engine(#[from] anyhow::Error),
}

pub fn read_topics<R: BufRead>(reader: R, path: &str) -> Result<Vec<BatchTopic>, BatchError> {
    let mut topics = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| BatchError::Io(format!("{path}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let topic: BatchTopic = serde_json::from_str(&line).map_err(|e| BatchError::Malformed {
            path: path.to_string(),
            line: line_no,
            reason: e.to_string(),
        })?;
        if topic.topic_id.is_empty() || topic.topic_id.contains(char::is_whitespace) {
            return Err(BatchError::Malformed {
                path: path.to_string(),
                line: line_no,
                reason: format!("invalid topic id {:?}", topic.topic_id),
            });
        }
        if topic.turns.is_empty() || topic.turns.iter().any(|t| t.trim().is_empty()) {
            return Err(BatchError::EmptyTurns {
                path: path.to_string(),
                line: line_no,
                topic_id: topic.topic_id,
            });
        }
        if !seen.insert(topic.topic_id.clone()) {
            return Err(BatchError::DuplicateTopic {
                path: path.to_string(),
                line: line_no,
                topic_id: topic.topic_id,
            });
        }
        topics.push(topic);
    }
    Ok(topics)
}

/// `<qid> Q0 <doc_id> <rank> <score> <run_name>`
pub fn run_line(qid: &str, r: &RetrievedResult, run_name: &str) -> String {
    format!("{qid} Q0 {} {} {:.6} {run_name}", r.doc_id, r.rank, r.score)
}

pub fn query_id(topic_id: &str, turn: usize) -> String {
    format!("{topic_id}_{turn}")
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub out: PathBuf,
    pub topics: usize,
    pub turns: usize,
    pub lines: usize,
}

/// Runs every topic and returns the run file contents. Each turn's
/// conversation holds the earlier turns and the system responses to them.
pub async fn run_topics(engine: &Engine, topics: &[BatchTopic], conversation_suffix: &str) -> String {
    let run_name = engine.settings.run_name.clone();
    let mut out = String::new();
    for topic in topics {
        let cid = format!("{}{conversation_suffix}", topic.topic_id);
        let mut n = 0u64;
        let mut next_id = || {
            n += 1;
            format!("{cid}-{n}")
        };
        for (t, turn) in topic.turns.iter().enumerate() {
            let ts = (2 * t) as i64;
            let m = Message::new(next_id(), cid.clone(), ActorRole::Seeker, Payload::text(turn.clone()), ts);
            if let Err(e) = engine.store.append(&m, Leg::SeekerSystem) {
                tracing::error!(topic = %topic.topic_id, error = %e, "could not log batch turn");
                continue;
            }
            let mut conv = engine.store.recent_conversation(&cid, engine.settings.recent_k);
            conv.mode = ConversationMode::Direct;
            let qid = query_id(&topic.topic_id, t + 1);
            if let Some(retrieval) = engine.pipeline.retrieve(&conv) {
                for r in &retrieval.results {
                    let _ = writeln!(out, "{}", run_line(&qid, r, &run_name));
                }
            }
            let mut response = engine.dispatcher.dispatch(&conv).await;
            response.message_id = next_id();
            response.timestamp_ms = ts + 1;
            if let Err(e) = engine.store.append(&response, Leg::SeekerSystem) {
                tracing::error!(topic = %topic.topic_id, error = %e, "could not log batch response");
            }
        }
    }
    out
}

/// Reads topics and corpus, runs them, writes the run file to `out`.
pub async fn run_batch(
    topics_path: &Path,
    corpus_path: &Path,
    out: &Path,
    settings: Settings,
) -> Result<BatchSummary, BatchError> {
    let display = topics_path.display().to_string();
    let file = std::fs::File::open(topics_path).map_err(|e| BatchError::Io(format!("{display}: {e}")))?;
    let topics = read_topics(std::io::BufReader::new(file), &display)?;
    let index = Arc::new(load_index(corpus_path)?);
    // A persistent log may already hold earlier runs of the same topics.
    let (store, suffix): (Arc<dyn InteractionStore>, String) = match &settings.store_path {
        Some(p) => (
            Arc::new(InteractionLog::open(p).map_err(|e| BatchError::Io(e.to_string()))?),
            format!("@{}", now_ms()),
        ),
        None => (Arc::new(InteractionLog::in_memory()), String::new()),
    };
    let engine = Engine::assemble(settings, index, Arc::clone(&store))?;
    let text = run_topics(&engine, &topics, &suffix).await;
    store.close();
    std::fs::write(out, &text).map_err(|e| BatchError::Io(format!("{}: {e}", out.display())))?;
    Ok(BatchSummary {
        out: out.to_path_buf(),
        topics: topics.len(),
        turns: topics.iter().map(|t| t.turns.len()).sum(),
        lines: text.lines().count(),
    })
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}
