//! Transport-independent chat gateway: conversation sessions, direct-mode
//! dispatch and Wizard-of-Oz routing.
//!
//! Every delivery is appended to the interaction log and then published on
//! the conversation's channel while the session lock is held, so per
//! conversation the log order is the delivery order. Dispatches run on one
//! worker task per conversation, which keeps them FIFO with at most one in
//! flight.

use std::collections::{HashMap, VecDeque};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use cis_core::clients::SpeechJob;
use cis_core::dispatch::DispatchReport;
use cis_core::model::{message_from_map, validate_message, Verdict};
use cis_core::store::StoreError;
use cis_core::{ActorRole, Conversation, ConversationMode, InteractionRecord, Leg, Message, Payload};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc};

use crate::attachments::AttachmentStore;
use crate::engine::Engine;

const CHANNEL_CAPACITY: usize = 1024;
const DIAGNOSTICS_KEPT: usize = 50;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown conversation: {0}")]
    UnknownConversation(String),
    #[error("invalid session token")]
    Unauthorized,
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("invalid message: {0}")]
    Rejected(Verdict),
    #[error("conversation {0} is not a wizard-of-oz conversation")]
    NotWoz(String),
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("wizard already attached")]
    WizardAlreadyAttached,
    #[error("service busy: no wizard attached and the seeker queue is full")]
    Busy,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Who is looking at a conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Seeker,
    Wizard,
}

impl ChannelRole {
    /// Seekers in WoZ conversations never see the wizard's system traffic.
    pub fn sees(self, mode: ConversationMode, leg: Leg) -> bool {
        match (self, mode) {
            (ChannelRole::Wizard, _) => true,
            (ChannelRole::Seeker, ConversationMode::Direct) => true,
            (ChannelRole::Seeker, ConversationMode::Woz) => leg == Leg::SeekerWizard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WizardTarget {
    ToSystem,
    ToSeeker,
}

impl WizardTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "to_system" => Some(WizardTarget::ToSystem),
            "to_seeker" => Some(WizardTarget::ToSeeker),
            _ => None,
        }
    }
}

/// What happened to a posted message.
#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    /// Logged and published with this seq; a dispatch may follow.
    Delivered { message: Message, seq: u64, leg: Leg },
    /// Held until a wizard attaches.
    Queued { message: Message, position: usize },
}

impl Delivery {
    pub fn message(&self) -> &Message {
        match self {
            Delivery::Delivered { message, .. } | Delivery::Queued { message, .. } => message,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConversationInfo {
    pub conversation_id: String,
    pub mode: ConversationMode,
    pub token: String,
}

struct SessionState {
    next_message: u64,
    last_timestamp: i64,
    wizard_attached: bool,
    pending: VecDeque<Message>,
}

struct Session {
    id: String,
    mode: ConversationMode,
    token: String,
    state: Mutex<SessionState>,
    events: broadcast::Sender<InteractionRecord>,
    jobs: mpsc::UnboundedSender<Job>,
}

struct Job {
    trigger: Message,
    leg: Leg,
}

struct Shared {
    engine: Arc<Engine>,
    attachments: Arc<AttachmentStore>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    diagnostics: Mutex<HashMap<String, VecDeque<DispatchReport>>>,
    next_conversation: AtomicU64,
    dispatches: AtomicUsize,
    sessions_file: Option<PathBuf>,
}

#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

#[derive(Serialize, Deserialize)]
struct SessionLine {
    conversation_id: String,
    mode: ConversationMode,
    token: String,
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn new_token() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn message_number(conversation_id: &str, message_id: &str) -> Option<u64> {
    message_id
        .strip_prefix(conversation_id)?
        .strip_prefix('-')?
        .parse()
        .ok()
}

impl Gateway {
    /// Must be called inside a tokio runtime: sessions recovered from the log
    /// get their dispatch workers spawned here.
    pub fn new(engine: Arc<Engine>, attachments: Arc<AttachmentStore>) -> Self {
        let sessions_file = engine
            .settings
            .store_path
            .as_ref()
            .map(|p| PathBuf::from(format!("{}.sessions", p.display())));
        let gateway = Self {
            shared: Arc::new(Shared {
                engine,
                attachments,
                sessions: Mutex::new(HashMap::new()),
                diagnostics: Mutex::new(HashMap::new()),
                next_conversation: AtomicU64::new(1),
                dispatches: AtomicUsize::new(0),
                sessions_file,
            }),
        };
        gateway.recover();
        gateway
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.shared.engine
    }

    pub fn attachments(&self) -> &Arc<AttachmentStore> {
        &self.shared.attachments
    }

    /// Number of dispatches started by this gateway.
    pub fn dispatch_count(&self) -> usize {
        self.shared.dispatches.load(Ordering::SeqCst)
    }

    /// Rebuilds sessions for conversations already in the log.
    fn recover(&self) {
        let mut tokens: HashMap<String, (ConversationMode, String)> = HashMap::new();
        if let Some(path) = &self.shared.sessions_file {
            if let Ok(text) = std::fs::read_to_string(path) {
                for line in text.lines() {
                    if let Ok(s) = serde_json::from_str::<SessionLine>(line) {
                        tokens.insert(s.conversation_id, (s.mode, s.token));
                    }
                }
            }
        }
        let store = &self.shared.engine.store;
        let mut known: HashMap<String, ConversationMode> = tokens.iter().map(|(k, v)| (k.clone(), v.0)).collect();
        for info in store.conversations() {
            known.insert(info.conversation_id, info.mode);
        }
        for (id, mode) in known {
            let history = store.recent_conversation(&id, usize::MAX);
            let next = history
                .messages
                .iter()
                .filter_map(|m| message_number(&id, &m.message_id))
                .max()
                .unwrap_or(0)
                + 1;
            let last_ts = history.messages.iter().map(|m| m.timestamp_ms).max().unwrap_or(0);
            let token = tokens.get(&id).map(|t| t.1.clone()).unwrap_or_else(new_token);
            if let Some(n) = id.strip_prefix('c').and_then(|n| n.parse::<u64>().ok()) {
                self.shared.next_conversation.fetch_max(n + 1, Ordering::SeqCst);
            }
            self.install(id, mode, token, next, last_ts);
        }
    }

    fn install(&self, id: String, mode: ConversationMode, token: String, next_message: u64, last_ts: i64) -> Arc<Session> {
        let (events, _) = broadcast::channel(CHANNEL_CAPACITY);
        let (jobs, rx) = mpsc::unbounded_channel();
        let session = Arc::new(Session {
            id: id.clone(),
            mode,
            token,
            state: Mutex::new(SessionState {
                next_message,
                last_timestamp: last_ts,
                wizard_attached: false,
                pending: VecDeque::new(),
            }),
            events,
            jobs,
        });
        tokio::spawn(worker(self.clone(), Arc::clone(&session), rx));
        self.shared
            .sessions
            .lock()
            .expect("sessions poisoned")
            .insert(id, Arc::clone(&session));
        session
    }

    pub fn create_conversation(&self, mode: ConversationMode) -> ConversationInfo {
        let id = loop {
            let n = self.shared.next_conversation.fetch_add(1, Ordering::SeqCst);
            let candidate = format!("c{n}");
            if !self.shared.sessions.lock().expect("sessions poisoned").contains_key(&candidate) {
                break candidate;
            }
        };
        let token = new_token();
        if let Some(path) = &self.shared.sessions_file {
            let line = serde_json::to_string(&SessionLine {
                conversation_id: id.clone(),
                mode,
                token: token.clone(),
            })
            .expect("session line serializes");
            let written = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}").and_then(|_| f.sync_data()));
            if let Err(e) = written {
                tracing::warn!(error = %e, "could not persist session token");
            }
        }
        self.install(id.clone(), mode, token.clone(), 1, 0);
        ConversationInfo {
            conversation_id: id,
            mode,
            token,
        }
    }

    fn session(&self, conversation_id: &str) -> Result<Arc<Session>, GatewayError> {
        self.shared
            .sessions
            .lock()
            .expect("sessions poisoned")
            .get(conversation_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownConversation(conversation_id.to_string()))
    }

    /// Checks the shared session token. `None` skips the check (in-process
    /// callers).
    pub fn authorize(&self, conversation_id: &str, token: Option<&str>) -> Result<ConversationMode, GatewayError> {
        let s = self.session(conversation_id)?;
        match token {
            Some(t) if t != s.token => Err(GatewayError::Unauthorized),
            _ => Ok(s.mode),
        }
    }

    pub fn mode(&self, conversation_id: &str) -> Result<ConversationMode, GatewayError> {
        Ok(self.session(conversation_id)?.mode)
    }

    pub fn diagnostics(&self, conversation_id: &str) -> Vec<DispatchReport> {
        self.shared
            .diagnostics
            .lock()
            .expect("diagnostics poisoned")
            .get(conversation_id)
            .map(|d| d.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Assigns server fields to a client body and validates it against the
    /// conversation history.
    fn build_message(
        &self,
        session: &Session,
        state: &mut SessionState,
        sender: ActorRole,
        body: &IncomingMessage,
    ) -> Result<Message, GatewayError> {
        let mut map = Map::new();
        let number = state.next_message;
        map.insert("message_id".into(), Value::String(format!("{}-{number}", session.id)));
        map.insert("conversation_id".into(), Value::String(session.id.clone()));
        map.insert("sender".into(), Value::String(sender.as_str().into()));
        map.insert("payload".into(), body.payload.clone());
        let ts = now_ms().max(state.last_timestamp);
        map.insert("timestamp_ms".into(), Value::from(ts));
        map.insert(
            "in_reply_to".into(),
            body.in_reply_to.clone().map_or(Value::Null, Value::String),
        );
        let message = message_from_map(map).map_err(|e| GatewayError::Invalid(e.to_string()))?;
        let mut history = self
            .shared
            .engine
            .store
            .recent_conversation(&session.id, usize::MAX);
        history.mode = session.mode;
        // queued seeker messages are part of the history too
        history.messages.extend(state.pending.iter().cloned());
        let verdict = validate_message(&message, &history);
        if !verdict.is_ok() {
            return Err(GatewayError::Rejected(verdict));
        }
        state.next_message += 1;
        state.last_timestamp = ts;
        Ok(message)
    }

    /// Appends and publishes. Caller holds the session lock.
    fn deliver(&self, session: &Session, message: Message, leg: Leg) -> Result<Delivery, GatewayError> {
        let seq = self.shared.engine.store.append(&message, leg)?;
        let _ = session.events.send(InteractionRecord {
            seq,
            message: message.clone(),
            leg,
        });
        Ok(Delivery::Delivered { message, seq, leg })
    }

    /// A seeker message. Direct mode: logged, then dispatched. WoZ: delivered
    /// to the wizard, or queued while none is attached.
    pub fn post_seeker_message(
        &self,
        conversation_id: &str,
        body: &IncomingMessage,
    ) -> Result<Delivery, GatewayError> {
        let session = self.session(conversation_id)?;
        if body.sender.is_some_and(|s| s != ActorRole::Seeker) {
            return Err(GatewayError::Invalid("sender must be seeker".into()));
        }
        let mut state = session.state.lock().expect("session poisoned");
        match session.mode {
            ConversationMode::Direct => {
                let message = self.build_message(&session, &mut state, ActorRole::Seeker, body)?;
                let delivery = self.deliver(&session, message.clone(), Leg::SeekerSystem)?;
                let _ = session.jobs.send(Job {
                    trigger: message,
                    leg: Leg::SeekerSystem,
                });
                Ok(delivery)
            }
            ConversationMode::Woz => {
                if !state.wizard_attached && state.pending.len() >= self.shared.engine.settings.woz_queue_cap {
                    return Err(GatewayError::Busy);
                }
                let message = self.build_message(&session, &mut state, ActorRole::Seeker, body)?;
                if state.wizard_attached {
                    self.deliver(&session, message, Leg::SeekerWizard)
                } else {
                    state.pending.push_back(message.clone());
                    Ok(Delivery::Queued {
                        message,
                        position: state.pending.len(),
                    })
                }
            }
        }
    }

    /// A wizard message: `to_seeker` is delivered to the seeker,
    /// `to_system` is logged and dispatched, with the response going back to
    /// the wizard only.
    pub fn post_wizard_message(
        &self,
        conversation_id: &str,
        target: WizardTarget,
        body: &IncomingMessage,
    ) -> Result<Delivery, GatewayError> {
        let session = self.session(conversation_id)?;
        if session.mode != ConversationMode::Woz {
            return Err(GatewayError::NotWoz(conversation_id.to_string()));
        }
        if body.sender.is_some_and(|s| s != ActorRole::Wizard) {
            return Err(GatewayError::Invalid("sender must be wizard".into()));
        }
        let mut state = session.state.lock().expect("session poisoned");
        let message = self.build_message(&session, &mut state, ActorRole::Wizard, body)?;
        match target {
            WizardTarget::ToSeeker => self.deliver(&session, message, Leg::SeekerWizard),
            WizardTarget::ToSystem => {
                let delivery = self.deliver(&session, message.clone(), Leg::WizardSystem)?;
                let _ = session.jobs.send(Job {
                    trigger: message,
                    leg: Leg::WizardSystem,
                });
                Ok(delivery)
            }
        }
    }

    /// Opens a channel. For a wizard this attaches the (single) wizard
    /// channel and flushes queued seeker messages to it; the attachment lasts
    /// as long as the subscription.
    pub fn subscribe(
        &self,
        conversation_id: &str,
        role: ChannelRole,
        from_seq: u64,
    ) -> Result<Subscription, GatewayError> {
        let session = self.session(conversation_id)?;
        let mut wizard = None;
        let receiver;
        {
            let mut state = session.state.lock().expect("session poisoned");
            receiver = session.events.subscribe();
            if role == ChannelRole::Wizard && session.mode == ConversationMode::Woz {
                if state.wizard_attached {
                    return Err(GatewayError::WizardAlreadyAttached);
                }
                state.wizard_attached = true;
                wizard = Some(WizardAttachment {
                    session: Arc::clone(&session),
                });
                while let Some(m) = state.pending.pop_front() {
                    if let Err(e) = self.deliver(&session, m, Leg::SeekerWizard) {
                        tracing::error!(error = %e, "could not deliver queued seeker message");
                    }
                }
            }
        }
        let mut sub = Subscription {
            store: Arc::clone(&self.shared.engine.store),
            conversation_id: conversation_id.to_string(),
            mode: session.mode,
            role,
            last_seq: from_seq.saturating_sub(1),
            backlog: VecDeque::new(),
            receiver,
            _wizard: wizard,
        };
        sub.refill();
        Ok(sub)
    }

    /// Builds the dispatch window ending at `trigger`: the last `k` messages
    /// on the trigger's leg, with audio turns transcribed to text.
    async fn dispatch_window(&self, session: &Session, trigger: &Message, leg: Leg) -> Conversation {
        let store = &self.shared.engine.store;
        let k = self.shared.engine.settings.recent_k;
        let all = store.recent_on_leg(&session.id, leg, usize::MAX);
        let end = all
            .messages
            .iter()
            .position(|m| m.message_id == trigger.message_id)
            .map_or(all.messages.len(), |i| i + 1);
        let start = end.saturating_sub(k);
        let mut messages = all.messages[start..end].to_vec();
        for m in &mut messages {
            if let Payload::Audio { reference, transcript } = &m.payload {
                let Some(bytes) = self.shared.attachments.get(reference) else {
                    continue;
                };
                let job = SpeechJob::Recognize {
                    reference: reference.clone(),
                    embedded_transcript: transcript.clone(),
                    audio: Some(bytes),
                    language: "en".into(),
                };
                match self.shared.engine.speech.transcribe(&job).await {
                    Ok(text) if !text.trim().is_empty() => m.payload = Payload::text(text),
                    Ok(_) => {}
                    Err(e) => tracing::warn!(message = %m.message_id, error = %e, "transcription failed"),
                }
            }
        }
        Conversation::with_messages(session.id.clone(), session.mode, messages)
    }

    async fn run_job(&self, session: &Session, job: Job) {
        let conv = self.dispatch_window(session, &job.trigger, job.leg).await;
        self.shared.dispatches.fetch_add(1, Ordering::SeqCst);
        let (mut response, report) = self.shared.engine.dispatcher.dispatch_with_report(&conv).await;
        {
            let mut diags = self.shared.diagnostics.lock().expect("diagnostics poisoned");
            let entry = diags.entry(session.id.clone()).or_default();
            entry.push_back(report);
            while entry.len() > DIAGNOSTICS_KEPT {
                entry.pop_front();
            }
        }
        let mut state = session.state.lock().expect("session poisoned");
        response.message_id = format!("{}-{}", session.id, state.next_message);
        response.timestamp_ms = now_ms().max(state.last_timestamp).max(job.trigger.timestamp_ms);
        state.next_message += 1;
        state.last_timestamp = response.timestamp_ms;
        if let Err(e) = self.deliver(session, response, job.leg) {
            tracing::error!(conversation = %session.id, error = %e, "could not log system response");
        }
    }
}

async fn worker(gateway: Gateway, session: Arc<Session>, mut jobs: mpsc::UnboundedReceiver<Job>) {
    while let Some(job) = jobs.recv().await {
        gateway.run_job(&session, job).await;
    }
}

/// Held by a wizard subscription; releases the wizard slot on drop.
struct WizardAttachment {
    session: Arc<Session>,
}

impl Drop for WizardAttachment {
    fn drop(&mut self) {
        if let Ok(mut state) = self.session.state.lock() {
            state.wizard_attached = false;
        }
    }
}

/// Replay from a seq followed by live records, filtered to what the role may
/// see, without gaps or duplicates.
pub struct Subscription {
    store: Arc<dyn cis_core::InteractionStore>,
    conversation_id: String,
    mode: ConversationMode,
    role: ChannelRole,
    last_seq: u64,
    backlog: VecDeque<InteractionRecord>,
    receiver: broadcast::Receiver<InteractionRecord>,
    _wizard: Option<WizardAttachment>,
}

impl Subscription {
    fn visible(&self, r: &InteractionRecord) -> bool {
        r.message.conversation_id == self.conversation_id && self.role.sees(self.mode, r.leg)
    }

    fn refill(&mut self) {
        let from = self.last_seq + 1;
        if let Ok(records) = self.store.export_log(Some(from..=u64::MAX)) {
            for r in records {
                if self.visible(&r) && r.seq > self.backlog.back().map_or(self.last_seq, |b| b.seq) {
                    self.backlog.push_back(r);
                }
            }
        }
    }

    /// Next visible record; `None` once the conversation's channel closes.
    pub async fn next(&mut self) -> Option<InteractionRecord> {
        loop {
            if let Some(r) = self.backlog.pop_front() {
                self.last_seq = r.seq;
                return Some(r);
            }
            match self.receiver.recv().await {
                Ok(r) => {
                    if r.seq > self.last_seq && self.visible(&r) {
                        self.last_seq = r.seq;
                        return Some(r);
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => self.refill(),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }

    pub fn role(&self) -> ChannelRole {
        self.role
    }
}

/// Client-supplied part of a message: the canonical encoding minus the
/// server-assigned fields.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingMessage {
    pub payload: Value,
    pub in_reply_to: Option<String>,
    pub sender: Option<ActorRole>,
}

impl IncomingMessage {
    pub fn new(payload: &Payload) -> Self {
        Self {
            payload: serde_json::to_value(payload).expect("payload serializes"),
            in_reply_to: None,
            sender: None,
        }
    }

    pub fn text(content: &str) -> Self {
        Self::new(&Payload::text(content))
    }

    /// Parses a request body. `allow_target` admits the wizard-route
    /// `"target"` field, which is returned separately.
    pub fn parse(body: &[u8], allow_target: bool) -> Result<(Self, Option<String>), GatewayError> {
        let value: Value =
            serde_json::from_slice(body).map_err(|e| GatewayError::Invalid(format!("malformed: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(GatewayError::Invalid("malformed: expected a JSON object".into()));
        };
        let target = if allow_target {
            match map.remove("target") {
                Some(Value::String(t)) => Some(t),
                Some(_) => return Err(GatewayError::Invalid("schema violation: target".into())),
                None => None,
            }
        } else {
            None
        };
        let payload = map
            .remove("payload")
            .ok_or_else(|| GatewayError::Invalid("schema violation: payload".into()))?;
        let in_reply_to = match map.remove("in_reply_to") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(GatewayError::Invalid("schema violation: in_reply_to".into())),
        };
        let sender = match map.remove("sender") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(
                ActorRole::parse(&s).ok_or_else(|| GatewayError::Invalid("schema violation: sender".into()))?,
            ),
            Some(_) => return Err(GatewayError::Invalid("schema violation: sender".into())),
        };
        // server-assigned fields may be echoed back as null
        for key in ["message_id", "conversation_id", "timestamp_ms", "origin_action", "confidence"] {
            if matches!(map.get(key), Some(Value::Null)) {
                map.remove(key);
            }
        }
        if let Some(extra) = map.keys().next() {
            return Err(GatewayError::Invalid(format!("schema violation: unexpected field {extra}")));
        }
        Ok((
            Self {
                payload,
                in_reply_to,
                sender,
            },
            target,
        ))
    }
}
