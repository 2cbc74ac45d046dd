//! Parallel action dispatch with an interaction timeout, plus output selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Serialize;
use thiserror::Error;
use tokio::task::JoinSet;
use tokio_util::sync::CancellationToken;

use crate::model::{Conversation, Message, OptionItem, Payload};

pub const FALLBACK_ACTION: &str = "fallback";
pub const COMBINE_ACTION: &str = "combine";
pub const DEFAULT_TIMEOUT_MS: u64 = 2000;
pub const DEFAULT_FALLBACK_TEXT: &str = "Sorry, I could not find an answer to that.";
const COMBINE_PROMPT: &str = "Here is what I found:";

/// What an action hands back: ranked candidate responses and free-form
/// diagnostics (shown in the REPL and the gateway's diagnostics endpoint).
#[derive(Debug, Clone, Default)]
pub struct ActionResponse {
    pub candidates: Vec<Message>,
    pub diagnostics: BTreeMap<String, String>,
}

impl ActionResponse {
    pub fn new(candidates: Vec<Message>) -> Self {
        Self {
            candidates,
            diagnostics: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ActionError(pub String);

impl ActionError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// A module that can answer some requests.
///
/// Actions receive an immutable conversation snapshot and a cancellation
/// token that fires when the interaction timeout expires. The engine does not
/// wait for an action to notice it.
#[async_trait]
pub trait Action: Send + Sync {
    async fn run(
        &self,
        conversation: Arc<Conversation>,
        cancel: CancellationToken,
    ) -> Result<ActionResponse, ActionError>;
}

#[async_trait]
impl<F> Action for F
where
    F: Fn(&Conversation) -> Result<ActionResponse, ActionError> + Send + Sync,
{
    async fn run(
        &self,
        conversation: Arc<Conversation>,
        _cancel: CancellationToken,
    ) -> Result<ActionResponse, ActionError> {
        self(&conversation)
    }
}

/// One action's admitted candidates.
#[derive(Debug, Clone)]
pub struct ActionOutput {
    pub action_name: String,
    /// Sorted by confidence, highest first.
    pub candidates: Vec<Message>,
    pub latency_ms: u64,
}

impl ActionOutput {
    /// Builds an output, sorting candidates by confidence descending (stable).
    pub fn new(action_name: impl Into<String>, mut candidates: Vec<Message>, latency_ms: u64) -> Self {
        candidates.sort_by(|a, b| confidence_of(b).total_cmp(&confidence_of(a)));
        Self {
            action_name: action_name.into(),
            candidates,
            latency_ms,
        }
    }

    pub fn top(&self) -> Option<&Message> {
        self.candidates.first()
    }
}

fn confidence_of(m: &Message) -> f64 {
    m.confidence.unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    MaxConfidence,
    Priority,
    Combine,
}

impl SelectionPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "max_confidence" => Some(SelectionPolicy::MaxConfidence),
            "priority" => Some(SelectionPolicy::Priority),
            "combine" => Some(SelectionPolicy::Combine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchConfig {
    pub timeout_ms: u64,
    pub selection_policy: SelectionPolicy,
    pub action_priority: Vec<String>,
    pub fallback_text: String,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            selection_policy: SelectionPolicy::MaxConfidence,
            action_priority: Vec::new(),
            fallback_text: DEFAULT_FALLBACK_TEXT.to_string(),
        }
    }
}

impl DispatchConfig {
    pub fn validate(&self) -> Result<(), DispatchError> {
        if self.timeout_ms == 0 {
            return Err(DispatchError::InvalidConfig("timeout_ms must be positive".into()));
        }
        for (i, name) in self.action_priority.iter().enumerate() {
            if self.action_priority[..i].contains(name) {
                return Err(DispatchError::InvalidConfig(format!(
                    "action {name} listed twice in priority"
                )));
            }
        }
        Ok(())
    }

    /// Position in the priority list; unlisted actions sort after all listed ones.
    fn priority_rank(&self, action: &str) -> usize {
        self.action_priority
            .iter()
            .position(|a| a == action)
            .unwrap_or(self.action_priority.len())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DispatchError {
    #[error("duplicate action name: {0}")]
    DuplicateActionName(String),
    #[error("invalid dispatch config: {0}")]
    InvalidConfig(String),
}

/// Returned by [`Dispatcher::register_action`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionHandle {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Answered,
    NoOutput,
    Failed(String),
    TimedOut,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionReport {
    pub action: String,
    pub status: ActionStatus,
    pub latency_ms: Option<u64>,
    pub candidates: usize,
    pub diagnostics: BTreeMap<String, String>,
}

/// Diagnostics for one dispatch.
#[derive(Debug, Clone, Serialize)]
pub struct DispatchReport {
    pub trigger_message_id: String,
    pub selected_action: String,
    pub elapsed_ms: u64,
    pub actions: Vec<ActionReport>,
}

impl DispatchReport {
    pub fn action(&self, name: &str) -> Option<&ActionReport> {
        self.actions.iter().find(|a| a.action == name)
    }

    /// First value of a diagnostic key across actions, in report order.
    pub fn diagnostic(&self, key: &str) -> Option<&str> {
        self.actions
            .iter()
            .find_map(|a| a.diagnostics.get(key).map(String::as_str))
    }
}

type Registered = (String, Arc<dyn Action>);

/// Runs all registered actions on each conversation.
#[derive(Default)]
pub struct Dispatcher {
    actions: RwLock<Vec<Registered>>,
    config: DispatchConfig,
}

impl Dispatcher {
    pub fn new(config: DispatchConfig) -> Result<Self, DispatchError> {
        config.validate()?;
        Ok(Self {
            actions: RwLock::new(Vec::new()),
            config,
        })
    }

    pub fn config(&self) -> &DispatchConfig {
        &self.config
    }

    pub fn register_action(
        &self,
        name: impl Into<String>,
        action: Arc<dyn Action>,
    ) -> Result<ActionHandle, DispatchError> {
        let name = name.into();
        let mut actions = self.actions.write().expect("action registry poisoned");
        if actions.iter().any(|(n, _)| *n == name) {
            return Err(DispatchError::DuplicateActionName(name));
        }
        actions.push((name.clone(), action));
        Ok(ActionHandle {
            name,
            index: actions.len() - 1,
        })
    }

    pub fn action_names(&self) -> Vec<String> {
        let actions = self.actions.read().expect("action registry poisoned");
        actions.iter().map(|(n, _)| n.clone()).collect()
    }

    pub async fn dispatch(&self, conversation: &Conversation) -> Message {
        self.dispatch_with_report(conversation).await.0
    }

    /// Starts every action concurrently, keeps outputs that arrive before the
    /// timeout, cancels the rest and selects the response.
    pub async fn dispatch_with_report(&self, conversation: &Conversation) -> (Message, DispatchReport) {
        let started = Instant::now();
        let deadline = tokio::time::Instant::now() + Duration::from_millis(self.config.timeout_ms);
        let Some(trigger) = conversation.last().cloned() else {
            // Nothing to reply to; this is a caller bug, answered with a
            // fallback addressed to nobody.
            let m = fallback_message_for(&conversation.conversation_id, None, 0, &self.config);
            let report = DispatchReport {
                trigger_message_id: String::new(),
                selected_action: FALLBACK_ACTION.into(),
                elapsed_ms: 0,
                actions: Vec::new(),
            };
            return (m, report);
        };
        let snapshot = Arc::new(conversation.clone());
        let registered: Vec<Registered> = self
            .actions
            .read()
            .expect("action registry poisoned")
            .clone();
        let cancel = CancellationToken::new();
        let mut tasks = JoinSet::new();
        let mut task_names = BTreeMap::new();
        for (name, action) in &registered {
            let conv = Arc::clone(&snapshot);
            let token = cancel.child_token();
            let action = Arc::clone(action);
            let handle = tasks.spawn(async move {
                let t0 = Instant::now();
                let result = action.run(conv, token).await;
                (result, t0.elapsed())
            });
            task_names.insert(handle.id(), name.clone());
        }

        let mut reports: BTreeMap<String, ActionReport> = registered
            .iter()
            .map(|(name, _)| {
                (
                    name.clone(),
                    ActionReport {
                        action: name.clone(),
                        status: ActionStatus::TimedOut,
                        latency_ms: None,
                        candidates: 0,
                        diagnostics: BTreeMap::new(),
                    },
                )
            })
            .collect();
        let mut outputs = Vec::new();
        loop {
            match tokio::time::timeout_at(deadline, tasks.join_next_with_id()).await {
                Err(_) => break,
                Ok(None) => break,
                Ok(Some(joined)) => {
                    let (id, outcome) = match joined {
                        Ok((id, outcome)) => (id, Ok(outcome)),
                        Err(e) => (e.id(), Err(e)),
                    };
                    let Some(name) = task_names.get(&id).cloned() else {
                        continue;
                    };
                    let report = reports.get_mut(&name).expect("report per action");
                    match outcome {
                        Err(join_err) => {
                            tracing::warn!(action = %name, error = %join_err, "action crashed");
                            report.status = ActionStatus::Failed(join_err.to_string());
                        }
                        Ok((Err(e), elapsed)) => {
                            tracing::warn!(action = %name, error = %e, "action failed");
                            report.status = ActionStatus::Failed(e.to_string());
                            report.latency_ms = Some(elapsed.as_millis() as u64);
                        }
                        Ok((Ok(response), elapsed)) => {
                            let latency = elapsed.as_millis() as u64;
                            report.latency_ms = Some(latency);
                            report.diagnostics = response.diagnostics;
                            let admitted =
                                admit_candidates(&name, response.candidates, &trigger);
                            report.candidates = admitted.len();
                            if admitted.is_empty() {
                                report.status = ActionStatus::NoOutput;
                            } else {
                                report.status = ActionStatus::Answered;
                                outputs.push(ActionOutput::new(name.clone(), admitted, latency));
                            }
                        }
                    }
                }
            }
        }
        // Late actions: signal and walk away.
        cancel.cancel();
        tasks.abort_all();
        tasks.detach_all();

        let mut response = select_output(&outputs, &self.config, &trigger);
        response.message_id = format!("{}-reply", trigger.message_id);
        response.in_reply_to = Some(trigger.message_id.clone());
        let report = DispatchReport {
            trigger_message_id: trigger.message_id.clone(),
            selected_action: response
                .origin_action
                .clone()
                .unwrap_or_else(|| FALLBACK_ACTION.into()),
            elapsed_ms: started.elapsed().as_millis() as u64,
            actions: registered
                .iter()
                .filter_map(|(n, _)| reports.remove(n))
                .collect(),
        };
        (response, report)
    }
}

/// Keeps only well-formed candidates for this conversation, stamping the
/// producing action's name.
fn admit_candidates(action: &str, candidates: Vec<Message>, trigger: &Message) -> Vec<Message> {
    candidates
        .into_iter()
        .filter_map(|mut m| {
            if m.conversation_id != trigger.conversation_id {
                tracing::warn!(action, "dropping candidate for another conversation");
                return None;
            }
            let c = m.confidence?;
            if !(0.0..=1.0).contains(&c) {
                tracing::warn!(action, confidence = c, "dropping candidate with bad confidence");
                return None;
            }
            m.sender = crate::model::ActorRole::System;
            m.origin_action = Some(action.to_string());
            m.in_reply_to = Some(trigger.message_id.clone());
            m.timestamp_ms = m.timestamp_ms.max(trigger.timestamp_ms);
            Some(m)
        })
        .collect()
}

fn fallback_message_for(
    conversation_id: &str,
    trigger: Option<&Message>,
    timestamp_ms: i64,
    cfg: &DispatchConfig,
) -> Message {
    let mut m = Message::new(
        trigger.map_or_else(|| format!("{conversation_id}-fallback"), |t| format!("{}-reply", t.message_id)),
        conversation_id,
        crate::model::ActorRole::System,
        Payload::text(cfg.fallback_text.clone()),
        timestamp_ms,
    );
    m.in_reply_to = trigger.map(|t| t.message_id.clone());
    m.origin_action = Some(FALLBACK_ACTION.into());
    m.confidence = Some(0.0);
    m
}

/// The fallback response to `trigger`.
pub fn fallback_message(trigger: &Message, cfg: &DispatchConfig) -> Message {
    fallback_message_for(&trigger.conversation_id, Some(trigger), trigger.timestamp_ms, cfg)
}

/// Orders action tops: confidence descending, then priority list position,
/// then action name.
fn compare_tops(a: &ActionOutput, b: &ActionOutput, cfg: &DispatchConfig) -> Ordering {
    let ca = a.top().map_or(0.0, confidence_of);
    let cb = b.top().map_or(0.0, confidence_of);
    cb.total_cmp(&ca)
        .then_with(|| cfg.priority_rank(&a.action_name).cmp(&cfg.priority_rank(&b.action_name)))
        .then_with(|| a.action_name.cmp(&b.action_name))
}

/// Picks (or combines) the system response from collected action outputs.
/// Outputs without candidates are ignored; no usable output yields the
/// fallback message.
pub fn select_output(outputs: &[ActionOutput], cfg: &DispatchConfig, trigger: &Message) -> Message {
    let mut responding: Vec<&ActionOutput> = outputs.iter().filter(|o| o.top().is_some()).collect();
    if responding.is_empty() {
        return fallback_message(trigger, cfg);
    }
    match cfg.selection_policy {
        SelectionPolicy::MaxConfidence => {
            responding.sort_by(|a, b| compare_tops(a, b, cfg));
            responding[0].top().cloned().expect("non-empty candidates")
        }
        SelectionPolicy::Priority => {
            responding.sort_by(|a, b| {
                cfg.priority_rank(&a.action_name)
                    .cmp(&cfg.priority_rank(&b.action_name))
                    .then_with(|| a.action_name.cmp(&b.action_name))
            });
            responding[0].top().cloned().expect("non-empty candidates")
        }
        SelectionPolicy::Combine => {
            responding.sort_by(|a, b| compare_tops(a, b, cfg));
            let tops: Vec<&Message> = responding.iter().filter_map(|o| o.top()).collect();
            let items = responding
                .iter()
                .zip(&tops)
                .map(|(o, m)| OptionItem::new(o.action_name.clone(), m.payload.summary()))
                .collect();
            let best = tops[0];
            let mut m = Message::new(
                best.message_id.clone(),
                trigger.conversation_id.clone(),
                crate::model::ActorRole::System,
                Payload::Options {
                    prompt: COMBINE_PROMPT.into(),
                    items,
                },
                best.timestamp_ms.max(trigger.timestamp_ms),
            );
            m.in_reply_to = Some(trigger.message_id.clone());
            m.origin_action = Some(COMBINE_ACTION.into());
            m.confidence = best.confidence;
            m
        }
    }
}
