//! A child process appends 1,000 messages across 10 conversations and is
//! killed part way through; the parent then checks what survived.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use cis_core::{ActorRole, InteractionLog, InteractionStore, Leg, Message, OptionItem, Payload};

use crate::{ensure, Outcome};

const CHILD_ENV: &str = "CIS_ACCEPTANCE_DURABILITY_LOG";
const TOTAL: usize = 1000;
const CONVERSATIONS: usize = 10;
const KILL_AFTER: u64 = 400;

pub fn is_child() -> bool {
    std::env::var_os(CHILD_ENV).is_some()
}

/// The `i`-th message of the workload and its leg. Conversations 0-6 are
/// direct, 7-9 are wizard-of-oz.
fn workload(i: usize) -> (Message, Leg) {
    let c = i % CONVERSATIONS;
    let n = i / CONVERSATIONS + 1;
    let cid = format!("conv{c}");
    let id = |n: usize| format!("{cid}-{n}");
    let ts = i as i64;
    if c >= 7 {
        return match n % 4 {
            1 | 3 => (Message::new(id(n), cid.clone(), ActorRole::Seeker, Payload::text(format!("seeker {n}")), ts), Leg::SeekerWizard),
            2 => (Message::new(id(n), cid.clone(), ActorRole::Wizard, Payload::text(format!("wizard {n}")), ts), Leg::WizardSystem),
            _ => {
                let mut m = Message::new(id(n), cid.clone(), ActorRole::System, Payload::text(format!("system {n}")), ts);
                m.origin_action = Some("qa".into());
                m.confidence = Some(0.25);
                m.in_reply_to = Some(id(n - 1));
                (m, Leg::WizardSystem)
            }
        };
    }
    let payload = match n % 6 {
        1 => Payload::text(format!("question {n}")),
        2 => Payload::Options {
            prompt: format!("results {n}"),
            items: vec![OptionItem::new("d1", "one"), OptionItem::new("d2", "two")],
        },
        3 => Payload::Selection { source_message_id: id(n - 1), option_id: "d2".into() },
        4 => Payload::text(format!("answer {n}")),
        5 => Payload::Image { reference: format!("att-{n:016x}"), caption: Some("photo".into()) },
        _ => Payload::Audio { reference: format!("att-{n:016x}"), transcript: None },
    };
    let system = matches!(n % 6, 2 | 4);
    let sender = if system { ActorRole::System } else { ActorRole::Seeker };
    let mut m = Message::new(id(n), cid.clone(), sender, payload, ts);
    if system {
        m.origin_action = Some("search".into());
        m.confidence = Some(n as f64 / (n as f64 + 1.0));
        m.in_reply_to = Some(id(n - 1));
    }
    (m, Leg::SeekerSystem)
}

/// Child side: append everything, acknowledging each seq on stdout.
pub fn child_main() {
    let path = std::env::var(CHILD_ENV).expect("child log path");
    let log = InteractionLog::open(&path).expect("open log");
    let mut out = std::io::stdout().lock();
    for i in 0..TOTAL {
        let (m, leg) = workload(i);
        let seq = log.append(&m, leg).expect("append");
        writeln!(out, "{seq}").expect("ack");
        out.flush().expect("ack");
        if seq >= KILL_AFTER {
            // leave the parent time to kill us mid-run
            std::thread::sleep(Duration::from_millis(2));
        }
    }
    log.close();
}

fn check_against_workload(log: &InteractionLog, expect_len: usize) -> Result<(), String> {
    let records = log.export_log(None).map_err(|e| e.to_string())?;
    ensure!(records.len() == expect_len, "expected {expect_len} records, found {}", records.len());
    for (i, r) in records.iter().enumerate() {
        let (m, leg) = workload(i);
        ensure!(r.seq == i as u64 + 1, "seq gap at position {i}: {}", r.seq);
        ensure!(r.message == m && r.leg == leg, "record {} differs from what was appended", r.seq);
    }
    for c in 0..CONVERSATIONS {
        let cid = format!("conv{c}");
        let mine: Vec<&Message> = records.iter().filter(|r| r.message.conversation_id == cid).map(|r| &r.message).collect();
        for k in [0, 1, 3, 10, 37, 99, 100, 101, usize::MAX] {
            let got = log.recent_conversation(&cid, k);
            let want: Vec<Message> = mine[mine.len().saturating_sub(k)..].iter().map(|m| (*m).clone()).collect();
            ensure!(got.messages == want, "{cid}: window of {k} differs from the export suffix");
        }
    }
    Ok(())
}

fn run_child(path: &Path) -> Result<u64, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut child = Command::new(exe)
        .env(CHILD_ENV, path)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| format!("spawn: {e}"))?;
    let stdout = child.stdout.take().expect("piped stdout");
    let mut lines = BufReader::new(stdout).lines();
    let mut acked = 0u64;
    for line in lines.by_ref() {
        let line = line.map_err(|e| e.to_string())?;
        acked = line.trim().parse().map_err(|_| format!("bad ack {line:?}"))?;
        if acked >= KILL_AFTER {
            break;
        }
    }
    child.kill().map_err(|e| format!("kill: {e}"))?;
    child.wait().map_err(|e| e.to_string())?;
    // acks written before the kill are still in the pipe
    for line in lines {
        match line.ok().and_then(|l| l.trim().parse().ok()) {
            Some(seq) => acked = seq,
            None => break,
        }
    }
    Ok(acked)
}

pub fn forced_kill() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("interactions.jsonl");
    let acked = run_child(&path)?;
    ensure!(acked >= KILL_AFTER, "child acknowledged only {acked} appends");

    // a write torn by the crash
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).map_err(|e| e.to_string())?;
    f.write_all(br#"{"message_id":"conv3-999","conversation_id":"conv3","sender":"see"#).map_err(|e| e.to_string())?;
    drop(f);

    let log = InteractionLog::open(&path).map_err(|e| format!("reopen: {e}"))?;
    let survived = log.len();
    ensure!(survived as u64 >= acked, "acknowledged {acked} but only {survived} survived");
    ensure!(survived < TOTAL, "child finished before it was killed");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    ensure!(text.ends_with('\n') && text.lines().count() == survived, "torn record left in the file");
    check_against_workload(&log, survived)?;

    for i in survived..TOTAL {
        let (m, leg) = workload(i);
        log.append(&m, leg).map_err(|e| format!("append {i}: {e}"))?;
    }
    check_against_workload(&log, TOTAL)?;
    log.close();
    let reopened = InteractionLog::open(&path).map_err(|e| e.to_string())?;
    check_against_workload(&reopened, TOTAL)?;
    println!("      killed after {acked} acknowledged appends, {survived} records survived");
    Ok(())
}
