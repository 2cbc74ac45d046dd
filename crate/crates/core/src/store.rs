//! Append-only interaction log.
//!
//! Records are newline-delimited canonical message encodings extended with
//! trailing `"seq"` and `"leg"` fields. Every append is flushed to stable
//! storage before it returns. On open the whole file is scanned to rebuild the
//! per-conversation index; a torn final line left by a crash is cut off.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{
    encode_message, message_from_map, validate_message, Conversation, ConversationMode, Message,
    Verdict,
};

/// Which side of the interaction topology a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    SeekerSystem,
    SeekerWizard,
    WizardSystem,
}

impl Leg {
    pub fn as_str(self) -> &'static str {
        match self {
            Leg::SeekerSystem => "seeker_system",
            Leg::SeekerWizard => "seeker_wizard",
            Leg::WizardSystem => "wizard_system",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seeker_system" => Some(Leg::SeekerSystem),
            "seeker_wizard" => Some(Leg::SeekerWizard),
            "wizard_system" => Some(Leg::WizardSystem),
            _ => None,
        }
    }

    pub fn mode(self) -> ConversationMode {
        match self {
            Leg::SeekerSystem => ConversationMode::Direct,
            _ => ConversationMode::Woz,
        }
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub seq: u64,
    pub message: Message,
    pub leg: Leg,
}

impl InteractionRecord {
    /// The log line for this record, without the trailing newline.
    pub fn encode_line(&self) -> String {
        let mut bytes = encode_message(&self.message);
        // Drop the closing brace and append the two record fields.
        bytes.pop();
        let mut line = String::from_utf8(bytes).expect("canonical encoding is UTF-8");
        line.push_str(&format!(",\"seq\":{},\"leg\":\"{}\"}}", self.seq, self.leg));
        line
    }

    pub fn decode_line(line: &str) -> Result<Self, StoreError> {
        let value: Value = serde_json::from_str(line)
            .map_err(|e| StoreError::Corrupt(format!("unparsable record: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(StoreError::Corrupt("record is not an object".into()));
        };
        let seq = map
            .remove("seq")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| StoreError::Corrupt("record without seq".into()))?;
        let leg = map
            .remove("leg")
            .and_then(|v| v.as_str().and_then(Leg::parse))
            .ok_or_else(|| StoreError::Corrupt("record without leg".into()))?;
        let message = message_from_map(Map::from_iter(map))
            .map_err(|e| StoreError::Corrupt(format!("record {seq}: {e}")))?;
        Ok(Self { seq, message, leg })
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("storage failure: store is closed")]
    Closed,
    #[error("validation failure: {0}")]
    Validation(Verdict),
    #[error("validation failure: leg {leg} does not match {mode:?} conversation")]
    LegMismatch { leg: Leg, mode: ConversationMode },
    #[error("corrupt log: {0}")]
    Corrupt(String),
}

/// Summary of one conversation known to the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationInfo {
    pub conversation_id: String,
    pub mode: ConversationMode,
    pub message_count: usize,
}

/// The interaction database. Implementations serialize appends and allow
/// concurrent reads of a consistent prefix.
pub trait InteractionStore: Send + Sync {
    fn append(&self, m: &Message, leg: Leg) -> Result<u64, StoreError>;

    /// The last `k` messages of a conversation, oldest first.
    fn recent_conversation(&self, conversation_id: &str, k: usize) -> Conversation;

    /// Like [`recent_conversation`](Self::recent_conversation) but restricted
    /// to records on the given leg.
    fn recent_on_leg(&self, conversation_id: &str, leg: Leg, k: usize) -> Conversation;

    /// Records in seq order, optionally restricted to an inclusive seq range.
    fn export_log(
        &self,
        range: Option<RangeInclusive<u64>>,
    ) -> Result<Vec<InteractionRecord>, StoreError>;

    fn conversations(&self) -> Vec<ConversationInfo>;

    fn close(&self);
}

#[derive(Default)]
struct State {
    records: Vec<InteractionRecord>,
    // conversation id -> indexes into `records`
    by_conversation: HashMap<String, Vec<usize>>,
    modes: HashMap<String, ConversationMode>,
    file: Option<File>,
    closed: bool,
}

impl State {
    fn next_seq(&self) -> u64 {
        self.records.last().map_or(1, |r| r.seq + 1)
    }

    fn history(&self, conversation_id: &str) -> Conversation {
        let mode = self.modes.get(conversation_id).copied().unwrap_or_default();
        let messages = self
            .by_conversation
            .get(conversation_id)
            .map(|ix| ix.iter().map(|&i| self.records[i].message.clone()).collect())
            .unwrap_or_default();
        Conversation::with_messages(conversation_id, mode, messages)
    }

    fn window<F>(&self, conversation_id: &str, k: usize, keep: F) -> Conversation
    where
        F: Fn(&InteractionRecord) -> bool,
    {
        let mode = self.modes.get(conversation_id).copied().unwrap_or_default();
        let mut picked: Vec<&InteractionRecord> = self
            .by_conversation
            .get(conversation_id)
            .map(|ix| ix.iter().map(|&i| &self.records[i]).filter(|r| keep(r)).collect())
            .unwrap_or_default();
        // chronological, ties by seq (records are already in seq order)
        picked.sort_by_key(|r| r.message.timestamp_ms);
        let start = picked.len().saturating_sub(k);
        let messages = picked[start..].iter().map(|r| r.message.clone()).collect();
        Conversation::with_messages(conversation_id, mode, messages)
    }

    fn insert(&mut self, record: InteractionRecord) {
        let idx = self.records.len();
        let cid = record.message.conversation_id.clone();
        self.modes.entry(cid.clone()).or_insert(record.leg.mode());
        self.by_conversation.entry(cid).or_default().push(idx);
        self.records.push(record);
    }
}

/// File-backed (or purely in-memory) implementation of [`InteractionStore`].
pub struct InteractionLog {
    path: Option<PathBuf>,
    state: RwLock<State>,
}

impl InteractionLog {
    /// Opens or creates the log at `path`, replaying existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .create(true)
            .append(true)
            .open(&path)?;
        let mut state = State::default();
        let valid_len = replay(&mut file, &mut state)?;
        let file_len = file.metadata()?.len();
        if valid_len < file_len {
            tracing::warn!(
                path = %path.display(),
                dropped = file_len - valid_len,
                "truncating torn record at end of interaction log"
            );
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        state.file = Some(file);
        Ok(Self {
            path: Some(path),
            state: RwLock::new(state),
        })
    }

    /// A log with no file behind it; used for batch runs and tests.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            state: RwLock::new(State::default()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("store lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full history of a conversation, used for validation.
    pub fn history(&self, conversation_id: &str) -> Conversation {
        self.state.read().expect("store lock poisoned").history(conversation_id)
    }
}

/// Reads every complete record; returns the byte length of the valid prefix.
fn replay(file: &mut File, state: &mut State) -> Result<u64, StoreError> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&mut *file);
    let mut valid = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            // torn write: no terminator
            break;
        }
        let record = match InteractionRecord::decode_line(line.trim_end_matches('\n')) {
            Ok(r) => r,
            Err(e) => {
                // Anything after a bad line is untrusted; only a final line
                // can be torn, so a bad line followed by more data is fatal.
                let mut rest = String::new();
                reader.read_line(&mut rest)?;
                if rest.is_empty() {
                    break;
                }
                return Err(e);
            }
        };
        if record.seq != state.next_seq() {
            return Err(StoreError::Corrupt(format!(
                "expected seq {}, found {}",
                state.next_seq(),
                record.seq
            )));
        }
        state.insert(record);
        valid += n as u64;
    }
    Ok(valid)
}

impl InteractionStore for InteractionLog {
    fn append(&self, m: &Message, leg: Leg) -> Result<u64, StoreError> {
        let mut state = self.state.write().expect("store lock poisoned");
        if state.closed {
            return Err(StoreError::Closed);
        }
        let history = state.history(&m.conversation_id);
        let mode = state
            .modes
            .get(&m.conversation_id)
            .copied()
            .unwrap_or(leg.mode());
        if leg.mode() != mode {
            return Err(StoreError::LegMismatch { leg, mode });
        }
        let history = Conversation { mode, ..history };
        let verdict = validate_message(m, &history);
        if !verdict.is_ok() {
            return Err(StoreError::Validation(verdict));
        }
        let record = InteractionRecord {
            seq: state.next_seq(),
            message: m.clone(),
            leg,
        };
        if let Some(file) = state.file.as_mut() {
            let mut line = record.encode_line();
            line.push('\n');
            let before = file.metadata()?.len();
            if let Err(e) = file.write_all(line.as_bytes()).and_then(|_| file.sync_data()) {
                // leave nothing half-written behind
                let _ = file.set_len(before);
                return Err(StoreError::Storage(e));
            }
        }
        let seq = record.seq;
        state.insert(record);
        Ok(seq)
    }

    fn recent_conversation(&self, conversation_id: &str, k: usize) -> Conversation {
        let state = self.state.read().expect("store lock poisoned");
        state.window(conversation_id, k, |_| true)
    }

    fn recent_on_leg(&self, conversation_id: &str, leg: Leg, k: usize) -> Conversation {
        let state = self.state.read().expect("store lock poisoned");
        state.window(conversation_id, k, |r| r.leg == leg)
    }

    fn export_log(
        &self,
        range: Option<RangeInclusive<u64>>,
    ) -> Result<Vec<InteractionRecord>, StoreError> {
        let state = self.state.read().expect("store lock poisoned");
        if state.closed {
            return Err(StoreError::Closed);
        }
        Ok(state
            .records
            .iter()
            .filter(|r| range.as_ref().is_none_or(|rg| rg.contains(&r.seq)))
            .cloned()
            .collect())
    }

    fn conversations(&self) -> Vec<ConversationInfo> {
        let state = self.state.read().expect("store lock poisoned");
        let mut out: Vec<ConversationInfo> = state
            .by_conversation
            .iter()
            .map(|(id, ix)| ConversationInfo {
                conversation_id: id.clone(),
                mode: state.modes.get(id).copied().unwrap_or_default(),
                message_count: ix.len(),
            })
            .collect();
        out.sort_by(|a, b| a.conversation_id.cmp(&b.conversation_id));
        out
    }

    fn close(&self) {
        let mut state = self.state.write().expect("store lock poisoned");
        if let Some(file) = state.file.take() {
            let _ = file.sync_all();
        }
        state.closed = true;
    }
}
