//! Interactive developer console. Responses go to `out`, prompts and
//! diagnostics to `err`, so the response stream can be piped.

use std::io::{BufRead, Write};

use cis_core::dispatch::{ActionStatus, DispatchReport};
use cis_core::{ActorRole, Leg, Message, Payload};

use crate::engine::Engine;

const USAGE: &str = "commands: \\quit | \\log <n> | \\select <option_id> | \\help";

/// Renders a message the way the console shows it.
pub fn render(m: &Message) -> String {
    match &m.payload {
        Payload::Options { prompt, items } => {
            let mut s = prompt.clone();
            for (i, item) in items.iter().enumerate() {
                s.push_str(&format!("\n  {}. [{}] {}", i + 1, item.option_id, item.label));
            }
            s
        }
        other => other.summary(),
    }
}

pub fn render_report(r: &DispatchReport) -> String {
    let mut s = String::from("--- diagnostics ---\n");
    for key in ["generated_query", "resolution", "context_terms"] {
        if let Some(v) = r.diagnostic(key) {
            s.push_str(&format!("{key}: {v}\n"));
        }
    }
    for a in &r.actions {
        let status = match &a.status {
            ActionStatus::Answered => format!("answered ({} candidates)", a.candidates),
            ActionStatus::NoOutput => "no output".to_string(),
            ActionStatus::Failed(e) => format!("failed: {e}"),
            ActionStatus::TimedOut => "timed out".to_string(),
        };
        let latency = a.latency_ms.map_or("-".to_string(), |l| format!("{l} ms"));
        s.push_str(&format!("action {}: {status}, {latency}\n", a.action));
    }
    s.push_str(&format!("selected: {} ({} ms total)\n", r.selected_action, r.elapsed_ms));
    s
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

struct Console<'a> {
    engine: &'a Engine,
    conversation_id: String,
    counter: u64,
    last_ts: i64,
}

impl Console<'_> {
    fn next_message(&mut self, payload: Payload) -> Message {
        self.counter += 1;
        self.last_ts = now_ms().max(self.last_ts);
        Message::new(
            format!("{}-{}", self.conversation_id, self.counter),
            self.conversation_id.clone(),
            ActorRole::Seeker,
            payload,
            self.last_ts,
        )
    }

    fn last_options_id(&self) -> Option<String> {
        self.engine
            .store
            .recent_conversation(&self.conversation_id, usize::MAX)
            .messages
            .iter()
            .rev()
            .find(|m| matches!(m.payload, Payload::Options { .. }))
            .map(|m| m.message_id.clone())
    }

    async fn turn<W: Write, E: Write>(&mut self, payload: Payload, out: &mut W, err: &mut E) -> std::io::Result<()> {
        let m = self.next_message(payload);
        if let Err(e) = self.engine.store.append(&m, Leg::SeekerSystem) {
            self.counter -= 1;
            writeln!(err, "rejected: {e}")?;
            return Ok(());
        }
        let conv = self
            .engine
            .store
            .recent_conversation(&self.conversation_id, self.engine.settings.recent_k);
        let (mut response, report) = self.engine.dispatcher.dispatch_with_report(&conv).await;
        self.counter += 1;
        response.message_id = format!("{}-{}", self.conversation_id, self.counter);
        self.last_ts = now_ms().max(self.last_ts);
        response.timestamp_ms = self.last_ts;
        if let Err(e) = self.engine.store.append(&response, Leg::SeekerSystem) {
            writeln!(err, "could not log response: {e}")?;
        }
        write!(err, "{}", render_report(&report))?;
        writeln!(out, "{}", render(&response))?;
        out.flush()
    }
}

/// Runs until `\quit` or end of input.
pub async fn run_repl<R: BufRead, W: Write, E: Write>(
    engine: &Engine,
    conversation_id: &str,
    input: R,
    out: &mut W,
    err: &mut E,
) -> std::io::Result<()> {
    let mut console = Console {
        engine,
        conversation_id: conversation_id.to_string(),
        counter: engine.store.recent_conversation(conversation_id, usize::MAX).len() as u64,
        last_ts: 0,
    };
    let mut lines = input.lines();
    loop {
        write!(err, "> ")?;
        err.flush()?;
        let Some(line) = lines.next() else { break };
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(cmd) = line.strip_prefix('\\') {
            let mut parts = cmd.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("quit"), None, _) => break,
                (Some("help"), None, _) => writeln!(err, "{USAGE}")?,
                (Some("log"), Some(n), None) => match n.parse::<usize>() {
                    Ok(n) => {
                        let records = engine.store.export_log(None).unwrap_or_default();
                        let start = records.len().saturating_sub(n);
                        for r in &records[start..] {
                            writeln!(err, "{}", r.encode_line())?;
                        }
                    }
                    Err(_) => writeln!(err, "{USAGE}")?,
                },
                (Some("select"), Some(option_id), None) => match console.last_options_id() {
                    Some(source) => {
                        let payload = Payload::Selection {
                            source_message_id: source,
                            option_id: option_id.to_string(),
                        };
                        console.turn(payload, out, err).await?;
                    }
                    None => writeln!(err, "nothing to select from")?,
                },
                _ => writeln!(err, "{USAGE}")?,
            }
            continue;
        }
        console.turn(Payload::text(line), out, err).await?;
    }
    out.flush()?;
    Ok(())
}
