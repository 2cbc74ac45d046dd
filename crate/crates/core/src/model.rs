//! Multi-modal message model and its canonical wire encoding.
//!
//! Every interaction, from seeker, wizard or system, is a [`Message`]. A
//! [`Conversation`] is the chronologically ordered window of recent messages
//! that actions receive as context.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Who sent a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorRole {
    Seeker,
    Wizard,
    System,
}

impl ActorRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ActorRole::Seeker => "seeker",
            ActorRole::Wizard => "wizard",
            ActorRole::System => "system",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seeker" => Some(ActorRole::Seeker),
            "wizard" => Some(ActorRole::Wizard),
            "system" => Some(ActorRole::System),
            _ => None,
        }
    }

    /// Seeker and wizard messages are the ones that trigger dispatches.
    pub fn is_human(self) -> bool {
        !matches!(self, ActorRole::System)
    }
}

impl fmt::Display for ActorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionItem {
    pub option_id: String,
    pub label: String,
}

impl OptionItem {
    pub fn new(option_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            option_id: option_id.into(),
            label: label.into(),
        }
    }
}

/// Message body. Image and audio bodies live out of band; the payload only
/// carries the attachment id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Text {
        content: String,
    },
    Image {
        reference: String,
        caption: Option<String>,
    },
    Audio {
        reference: String,
        transcript: Option<String>,
    },
    Options {
        prompt: String,
        items: Vec<OptionItem>,
    },
    Selection {
        source_message_id: String,
        option_id: String,
    },
}

impl Payload {
    pub fn text(content: impl Into<String>) -> Self {
        Payload::Text {
            content: content.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Text { .. } => "text",
            Payload::Image { .. } => "image",
            Payload::Audio { .. } => "audio",
            Payload::Options { .. } => "options",
            Payload::Selection { .. } => "selection",
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text { content } => Some(content),
            _ => None,
        }
    }

    /// Short human-readable rendering, used when payloads are summarised into
    /// option labels or printed on a terminal.
    pub fn summary(&self) -> String {
        match self {
            Payload::Text { content } => content.clone(),
            Payload::Image { reference, caption } => match caption {
                Some(c) => format!("[image {reference}] {c}"),
                None => format!("[image {reference}]"),
            },
            Payload::Audio {
                reference,
                transcript,
            } => match transcript {
                Some(t) => format!("[audio {reference}] {t}"),
                None => format!("[audio {reference}]"),
            },
            Payload::Options { prompt, items } => match items.first() {
                Some(first) => format!("{prompt} {}", first.label),
                None => prompt.clone(),
            },
            Payload::Selection {
                source_message_id,
                option_id,
            } => format!("[selected {option_id} from {source_message_id}]"),
        }
    }
}

/// The atomic interaction unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub message_id: String,
    pub conversation_id: String,
    pub sender: ActorRole,
    pub payload: Payload,
    pub timestamp_ms: i64,
    pub in_reply_to: Option<String>,
    pub origin_action: Option<String>,
    pub confidence: Option<f64>,
}

impl Message {
    pub fn new(
        message_id: impl Into<String>,
        conversation_id: impl Into<String>,
        sender: ActorRole,
        payload: Payload,
        timestamp_ms: i64,
    ) -> Self {
        Self {
            message_id: message_id.into(),
            conversation_id: conversation_id.into(),
            sender,
            payload,
            timestamp_ms,
            in_reply_to: None,
            origin_action: None,
            confidence: None,
        }
    }

    /// A system message produced by `action` in reply to `to`.
    pub fn system_reply(
        to: &Message,
        message_id: impl Into<String>,
        payload: Payload,
        action: impl Into<String>,
        confidence: f64,
    ) -> Self {
        Self {
            message_id: message_id.into(),
            conversation_id: to.conversation_id.clone(),
            sender: ActorRole::System,
            payload,
            timestamp_ms: to.timestamp_ms,
            in_reply_to: Some(to.message_id.clone()),
            origin_action: Some(action.into()),
            confidence: Some(confidence),
        }
    }

    pub fn text(&self) -> Option<&str> {
        self.payload.as_text()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConversationMode {
    #[default]
    Direct,
    Woz,
}

impl ConversationMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(ConversationMode::Direct),
            "woz" => Some(ConversationMode::Woz),
            _ => None,
        }
    }
}

/// Recent window of one conversation, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub conversation_id: String,
    pub messages: Vec<Message>,
    pub mode: ConversationMode,
}

impl Conversation {
    pub fn new(conversation_id: impl Into<String>, mode: ConversationMode) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            messages: Vec::new(),
            mode,
        }
    }

    pub fn with_messages(
        conversation_id: impl Into<String>,
        mode: ConversationMode,
        messages: Vec<Message>,
    ) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            messages,
            mode,
        }
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn find(&self, message_id: &str) -> Option<&Message> {
        self.messages.iter().find(|m| m.message_id == message_id)
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyMessageId,
    EmptyText,
    EmptyOptions,
    DuplicateOptionId(String),
    UnknownSourceMessage(String),
    SourceNotOptions(String),
    UnknownOptionId(String),
    NegativeTimestamp,
    ConfidenceOutOfRange,
    ConfidenceWithoutAction,
    ActionWithoutConfidence,
    HumanWithAction,
    WizardInDirectConversation,
    ConversationMismatch,
    DuplicateMessageId(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyMessageId => write!(f, "empty message id"),
            Violation::EmptyText => write!(f, "empty text"),
            Violation::EmptyOptions => write!(f, "empty options"),
            Violation::DuplicateOptionId(id) => write!(f, "duplicate option id: {id}"),
            Violation::UnknownSourceMessage(id) => write!(f, "unknown source message: {id}"),
            Violation::SourceNotOptions(id) => write!(f, "source message is not options: {id}"),
            Violation::UnknownOptionId(id) => write!(f, "unknown option id: {id}"),
            Violation::NegativeTimestamp => write!(f, "negative timestamp"),
            Violation::ConfidenceOutOfRange => write!(f, "confidence out of range"),
            Violation::ConfidenceWithoutAction => write!(f, "confidence without origin_action"),
            Violation::ActionWithoutConfidence => write!(f, "origin_action without confidence"),
            Violation::HumanWithAction => write!(f, "origin_action on non-system message"),
            Violation::WizardInDirectConversation => write!(f, "wizard in direct conversation"),
            Violation::ConversationMismatch => write!(f, "conversation id mismatch"),
            Violation::DuplicateMessageId(id) => write!(f, "duplicate message id: {id}"),
        }
    }
}

/// Result of [`validate_message`]; empty means ok.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, v: &Violation) -> bool {
        self.violations.contains(v)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Invariants checkable on the message alone.
fn intrinsic_violations(m: &Message) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.message_id.is_empty() {
        out.push(Violation::EmptyMessageId);
    }
    if m.timestamp_ms < 0 {
        out.push(Violation::NegativeTimestamp);
    }
    match &m.payload {
        Payload::Text { content } if content.trim().is_empty() => out.push(Violation::EmptyText),
        Payload::Options { items, .. } => {
            if items.is_empty() {
                out.push(Violation::EmptyOptions);
            }
            let mut seen = HashSet::new();
            for item in items {
                if !seen.insert(item.option_id.as_str()) {
                    out.push(Violation::DuplicateOptionId(item.option_id.clone()));
                }
            }
        }
        _ => {}
    }
    if let Some(c) = m.confidence {
        if !(0.0..=1.0).contains(&c) {
            out.push(Violation::ConfidenceOutOfRange);
        }
    }
    match (&m.origin_action, m.confidence) {
        (Some(_), None) => out.push(Violation::ActionWithoutConfidence),
        (None, Some(_)) => out.push(Violation::ConfidenceWithoutAction),
        _ => {}
    }
    if m.sender.is_human() && m.origin_action.is_some() {
        out.push(Violation::HumanWithAction);
    }
    out
}

/// Checks `m` against every message invariant, using `history` (the prior
/// messages of the same conversation) for selection references and id
/// uniqueness. Never fails; the verdict lists what is wrong.
pub fn validate_message(m: &Message, history: &Conversation) -> Verdict {
    let mut violations = intrinsic_violations(m);
    if !history.is_empty() && m.conversation_id != history.conversation_id {
        violations.push(Violation::ConversationMismatch);
    }
    if m.sender == ActorRole::Wizard && history.mode == ConversationMode::Direct {
        violations.push(Violation::WizardInDirectConversation);
    }
    if history.find(&m.message_id).is_some() {
        violations.push(Violation::DuplicateMessageId(m.message_id.clone()));
    }
    if let Payload::Selection {
        source_message_id,
        option_id,
    } = &m.payload
    {
        match history.find(source_message_id) {
            None => violations.push(Violation::UnknownSourceMessage(source_message_id.clone())),
            Some(source) => match &source.payload {
                Payload::Options { items, .. } => {
                    if !items.iter().any(|i| &i.option_id == option_id) {
                        violations.push(Violation::UnknownOptionId(option_id.clone()));
                    }
                }
                _ => violations.push(Violation::SourceNotOptions(source_message_id.clone())),
            },
        }
    }
    Verdict { violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

impl DecodeError {
    fn schema(field: impl Into<String>) -> Self {
        DecodeError::SchemaViolation(field.into())
    }
}

/// Canonical encoding: one compact JSON object, fields in declaration order,
/// absent optionals written as `null`.
pub fn encode_message(m: &Message) -> Vec<u8> {
    serde_json::to_vec(m).expect("message serialization is infallible")
}

pub fn encode_message_string(m: &Message) -> String {
    serde_json::to_string(m).expect("message serialization is infallible")
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    match value {
        Value::Object(map) => message_from_map(map),
        _ => Err(DecodeError::Malformed("expected a JSON object".into())),
    }
}

const MESSAGE_FIELDS: [&str; 8] = [
    "message_id",
    "conversation_id",
    "sender",
    "payload",
    "timestamp_ms",
    "in_reply_to",
    "origin_action",
    "confidence",
];

/// Builds a message from an already-parsed JSON object. Unknown keys are
/// rejected, optional keys may be omitted or null.
pub fn message_from_map(mut map: Map<String, Value>) -> Result<Message, DecodeError> {
    if let Some(extra) = map.keys().find(|k| !MESSAGE_FIELDS.contains(&k.as_str())) {
        return Err(DecodeError::schema(format!("unknown field {extra}")));
    }
    let message_id = required_string(&mut map, "message_id")?;
    let conversation_id = required_string(&mut map, "conversation_id")?;
    let sender_raw = required_string(&mut map, "sender")?;
    let sender = ActorRole::parse(&sender_raw).ok_or_else(|| DecodeError::schema("sender"))?;
    let payload = match map.remove("payload") {
        Some(Value::Object(p)) => payload_from_map(p)?,
        _ => return Err(DecodeError::schema("payload")),
    };
    let timestamp_ms = match map.remove("timestamp_ms") {
        Some(Value::Number(n)) => n.as_i64().ok_or_else(|| DecodeError::schema("timestamp_ms"))?,
        _ => return Err(DecodeError::schema("timestamp_ms")),
    };
    let in_reply_to = optional_string(&mut map, "in_reply_to")?;
    let origin_action = optional_string(&mut map, "origin_action")?;
    let confidence = match map.remove("confidence") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => Some(n.as_f64().ok_or_else(|| DecodeError::schema("confidence"))?),
        Some(_) => return Err(DecodeError::schema("confidence")),
    };
    let m = Message {
        message_id,
        conversation_id,
        sender,
        payload,
        timestamp_ms,
        in_reply_to,
        origin_action,
        confidence,
    };
    if let Some(v) = intrinsic_violations(&m).first() {
        return Err(DecodeError::schema(violation_field(v)));
    }
    Ok(m)
}

fn violation_field(v: &Violation) -> &'static str {
    match v {
        Violation::EmptyMessageId | Violation::DuplicateMessageId(_) => "message_id",
        Violation::EmptyText => "payload.content",
        Violation::EmptyOptions | Violation::DuplicateOptionId(_) => "payload.items",
        Violation::NegativeTimestamp => "timestamp_ms",
        Violation::ConfidenceOutOfRange
        | Violation::ConfidenceWithoutAction
        | Violation::ActionWithoutConfidence => "confidence",
        Violation::HumanWithAction => "origin_action",
        Violation::WizardInDirectConversation => "sender",
        Violation::ConversationMismatch => "conversation_id",
        Violation::UnknownSourceMessage(_) | Violation::SourceNotOptions(_) => {
            "payload.source_message_id"
        }
        Violation::UnknownOptionId(_) => "payload.option_id",
    }
}

fn required_string(map: &mut Map<String, Value>, key: &str) -> Result<String, DecodeError> {
    match map.remove(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(DecodeError::schema(key)),
    }
}

fn optional_string(map: &mut Map<String, Value>, key: &str) -> Result<Option<String>, DecodeError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(DecodeError::schema(key)),
    }
}

fn payload_from_map(mut map: Map<String, Value>) -> Result<Payload, DecodeError> {
    let kind = match map.remove("kind") {
        Some(Value::String(s)) => s,
        _ => return Err(DecodeError::schema("payload.kind")),
    };
    let allowed: &[&str] = match kind.as_str() {
        "text" => &["content"],
        "image" => &["reference", "caption"],
        "audio" => &["reference", "transcript"],
        "options" => &["prompt", "items"],
        "selection" => &["source_message_id", "option_id"],
        _ => return Err(DecodeError::schema("payload.kind")),
    };
    if let Some(extra) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(DecodeError::schema(format!("payload.{extra}")));
    }
    let mut req = |key: &str| -> Result<String, DecodeError> {
        match map.remove(key) {
            Some(Value::String(s)) => Ok(s),
            _ => Err(DecodeError::schema(format!("payload.{key}"))),
        }
    };
    let payload = match kind.as_str() {
        "text" => Payload::Text {
            content: req("content")?,
        },
        "image" => Payload::Image {
            reference: req("reference")?,
            caption: optional_string(&mut map, "caption")
                .map_err(|_| DecodeError::schema("payload.caption"))?,
        },
        "audio" => Payload::Audio {
            reference: req("reference")?,
            transcript: optional_string(&mut map, "transcript")
                .map_err(|_| DecodeError::schema("payload.transcript"))?,
        },
        "options" => {
            let prompt = req("prompt")?;
            let items = match map.remove("items") {
                Some(Value::Array(items)) => items
                    .into_iter()
                    .map(option_item_from_value)
                    .collect::<Result<Vec<_>, _>>()?,
                _ => return Err(DecodeError::schema("payload.items")),
            };
            Payload::Options { prompt, items }
        }
        _ => Payload::Selection {
            source_message_id: req("source_message_id")?,
            option_id: req("option_id")?,
        },
    };
    Ok(payload)
}

fn option_item_from_value(v: Value) -> Result<OptionItem, DecodeError> {
    let Value::Object(mut map) = v else {
        return Err(DecodeError::schema("payload.items"));
    };
    if map.len() != 2 {
        return Err(DecodeError::schema("payload.items"));
    }
    let option_id = match map.remove("option_id") {
        Some(Value::String(s)) => s,
        _ => return Err(DecodeError::schema("payload.items.option_id")),
    };
    let label = match map.remove("label") {
        Some(Value::String(s)) => s,
        _ => return Err(DecodeError::schema("payload.items.label")),
    };
    Ok(OptionItem { option_id, label })
}
