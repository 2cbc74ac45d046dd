//! Exhaustive check of output selection against a direct restatement of the
//! three policies.

use cis_core::dispatch::{select_output, DEFAULT_FALLBACK_TEXT};
use cis_core::{ActionOutput, ActorRole, DispatchConfig, Message, Payload, SelectionPolicy};

use crate::{ensure, Outcome};

const ACTIONS: [&str; 4] = ["qa", "search", "web", "extra"];
/// `None`: the action ran but produced nothing.
const LEVELS: [Option<f64>; 4] = [None, Some(0.2), Some(0.5), Some(0.8)];

fn arrangements(items: &[&'static str], max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for it in items {
                if !prefix.contains(it) {
                    let mut p: Vec<&'static str> = prefix.clone();
                    p.push(*it);
                    next.push(p);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

struct Case {
    /// (action, candidate confidences in production order)
    outputs: Vec<(&'static str, Vec<f64>)>,
}

fn trigger() -> Message {
    Message::new("c1-7", "c1", ActorRole::Seeker, Payload::text("q"), 50)
}

fn cand_id(action: &str, i: usize) -> String {
    format!("{action}#{i}")
}

fn build(case: &Case) -> Vec<ActionOutput> {
    let t = trigger();
    case.outputs
        .iter()
        .map(|(a, confs)| {
            let cands = confs
                .iter()
                .enumerate()
                .map(|(i, c)| Message::system_reply(&t, cand_id(a, i), Payload::text(format!("{a} answer {i}")), *a, *c))
                .collect();
            ActionOutput::new(*a, cands, 1)
        })
        .collect()
}

fn rank(priority: &[&str], action: &str) -> usize {
    priority.iter().position(|p| *p == action).unwrap_or(priority.len())
}

/// Index of the best candidate of one action: highest confidence, earliest on ties.
fn best_of(confs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in confs.iter().enumerate() {
        if best.is_none_or(|b| *c > confs[b]) {
            best = Some(i);
        }
    }
    best
}

/// True when action `a` with top confidence `ca` beats `b` with `cb`.
fn beats(priority: &[&str], (a, ca): (&str, f64), (b, cb): (&str, f64)) -> bool {
    if ca != cb {
        return ca > cb;
    }
    if rank(priority, a) != rank(priority, b) {
        return rank(priority, a) < rank(priority, b);
    }
    a < b
}

enum Expected {
    Fallback,
    Candidate { id: String, action: String, confidence: f64 },
    Combined { ids: Vec<String>, labels: Vec<String>, confidence: f64 },
}

fn oracle(case: &Case, policy: SelectionPolicy, priority: &[&str]) -> Expected {
    let responding: Vec<(&str, usize, f64)> = case
        .outputs
        .iter()
        .filter_map(|(a, confs)| best_of(confs).map(|i| (*a, i, confs[i])))
        .collect();
    if responding.is_empty() {
        return Expected::Fallback;
    }
    match policy {
        SelectionPolicy::MaxConfidence => {
            let mut win = responding[0];
            for r in &responding[1..] {
                if beats(priority, (r.0, r.2), (win.0, win.2)) {
                    win = *r;
                }
            }
            Expected::Candidate { id: cand_id(win.0, win.1), action: win.0.into(), confidence: win.2 }
        }
        SelectionPolicy::Priority => {
            let listed = priority.iter().find_map(|p| responding.iter().find(|r| r.0 == *p));
            let win = listed.copied().unwrap_or_else(|| {
                let mut w = responding[0];
                for r in &responding[1..] {
                    if r.0 < w.0 {
                        w = *r;
                    }
                }
                w
            });
            Expected::Candidate { id: cand_id(win.0, win.1), action: win.0.into(), confidence: win.2 }
        }
        SelectionPolicy::Combine => {
            // selection sort by the max_confidence order
            let mut left = responding.clone();
            let mut ordered = Vec::new();
            while !left.is_empty() {
                let mut w = 0;
                for i in 1..left.len() {
                    if beats(priority, (left[i].0, left[i].2), (left[w].0, left[w].2)) {
                        w = i;
                    }
                }
                ordered.push(left.remove(w));
            }
            Expected::Combined {
                ids: ordered.iter().map(|r| r.0.to_string()).collect(),
                labels: ordered.iter().map(|r| format!("{} answer {}", r.0, r.1)).collect(),
                confidence: ordered[0].2,
            }
        }
    }
}

fn check(case: &Case, built: &[ActionOutput], policy: SelectionPolicy, priority: &[&str]) -> Result<(), String> {
    let cfg = DispatchConfig {
        selection_policy: policy,
        action_priority: priority.iter().map(|s| s.to_string()).collect(),
        ..DispatchConfig::default()
    };
    let got = select_output(built, &cfg, &trigger());
    let describe = || format!("policy {policy:?}, priority {priority:?}, outputs {:?}", case.outputs);
    ensure!(got.in_reply_to.as_deref() == Some("c1-7"), "missing in_reply_to: {}", describe());
    ensure!(got.sender == ActorRole::System, "non-system response: {}", describe());
    match oracle(case, policy, priority) {
        Expected::Fallback => {
            ensure!(
                got.origin_action.as_deref() == Some("fallback")
                    && got.confidence == Some(0.0)
                    && got.text() == Some(DEFAULT_FALLBACK_TEXT),
                "expected fallback, got {got:?}: {}",
                describe()
            );
        }
        Expected::Candidate { id, action, confidence } => {
            ensure!(
                got.message_id == id && got.origin_action.as_deref() == Some(action.as_str()) && got.confidence == Some(confidence),
                "expected {id}, got {} ({:?}): {}",
                got.message_id,
                got.confidence,
                describe()
            );
        }
        Expected::Combined { ids, labels, confidence } => {
            let Payload::Options { items, .. } = &got.payload else {
                return Err(format!("expected options: {}", describe()));
            };
            let got_ids: Vec<&str> = items.iter().map(|i| i.option_id.as_str()).collect();
            let got_labels: Vec<&str> = items.iter().map(|i| i.label.as_str()).collect();
            ensure!(got_ids == ids, "combine order {got_ids:?} != {ids:?}: {}", describe());
            ensure!(got_labels == labels, "combine labels {got_labels:?} != {labels:?}: {}", describe());
            ensure!(
                got.confidence == Some(confidence) && got.origin_action.as_deref() == Some("combine"),
                "combine confidence {:?}: {}",
                got.confidence,
                describe()
            );
        }
    }
    Ok(())
}

/// Every ordered set of 0-4 responding actions, each either silent or with
/// candidates `[c/2, c]` (best one second, to check ordering within an
/// action), against every priority list of length 0, 1, 2 and 4.
pub fn truth_table() -> Outcome {
    let priorities: Vec<Vec<&str>> = arrangements(&ACTIONS, 4).into_iter().filter(|p| p.len() != 3).collect();
    let mut checked = 0usize;
    for set in arrangements(&ACTIONS, 4) {
        let combos = LEVELS.len().pow(set.len() as u32);
        for mut code in 0..combos {
            let mut outputs = Vec::new();
            for a in &set {
                let level = LEVELS[code % LEVELS.len()];
                code /= LEVELS.len();
                outputs.push((*a, level.map_or(Vec::new(), |c| vec![c / 2.0, c])));
            }
            let case = Case { outputs };
            let built = build(&case);
            for priority in &priorities {
                for policy in [SelectionPolicy::MaxConfidence, SelectionPolicy::Priority, SelectionPolicy::Combine] {
                    check(&case, &built, policy, priority)?;
                    checked += 1;
                }
            }
        }
    }
    println!("      {checked} (output set, priority, policy) combinations");
    Ok(())
}
