//! Two-turn direct conversation through the HTTP API only.

use std::time::Duration;

use cis_core::store::InteractionRecord;
use cis_core::{ActorRole, Leg};

use crate::common::start;
use crate::{ensure, Outcome};

pub fn direct_mode() -> Outcome {
    crate::runtime().block_on(async {
        let srv = start(|_| {}).await;
        let conv = srv.create("direct").await;
        let mut stream = srv.stream(&conv, "seeker", 1).await;
        let wait = Duration::from_secs(5);

        let mut turns = Vec::new();
        for text in ["tell me about the titanic movie", "who directed it"] {
            let (status, body) = srv.say(&conv, text).await;
            ensure!(status == 201, "post {text:?}: {status} {body}");
            let id = body["message"]["message_id"].as_str().unwrap_or_default().to_string();
            let events = stream.take(2, wait).await;
            ensure!(events.len() == 2, "stream gave {} events for {text:?}", events.len());
            ensure!(events[0].data["message_id"] == id.as_str(), "echo of {id} missing");
            let reply = &events[1];
            ensure!(
                reply.data["sender"] == "system" && reply.data["in_reply_to"] == id.as_str(),
                "reply to {id}: {}",
                reply.data
            );
            ensure!(reply.event == "seeker_system", "reply leg {}", reply.event);
            turns.push((id, reply.data["message_id"].as_str().unwrap_or_default().to_string()));
        }

        let (status, diags) = srv.get(&format!("/conversations/{}/diagnostics", conv.id), Some(&conv.token)).await;
        ensure!(status == 200, "diagnostics: {status}");
        let last = diags.as_array().and_then(|a| a.last()).ok_or("no diagnostics")?;
        ensure!(last["trigger_message_id"] == turns[1].0.as_str(), "diagnostics for {}", last["trigger_message_id"]);
        let queries: Vec<&str> = last["actions"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|a| a["diagnostics"]["generated_query"].as_str())
            .collect();
        ensure!(!queries.is_empty(), "no generated query in diagnostics: {last}");
        ensure!(
            queries.iter().all(|q| q.contains("titanic movie") && !q.contains(" it")),
            "generated queries {queries:?}"
        );
        println!("      generated query: {:?}", queries[0]);

        let text = std::fs::read_to_string(srv.log_path()).map_err(|e| e.to_string())?;
        let records: Vec<InteractionRecord> = text
            .lines()
            .map(InteractionRecord::decode_line)
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let logged: Vec<(&str, ActorRole)> = records.iter().map(|r| (r.message.message_id.as_str(), r.message.sender)).collect();
        let want = vec![
            (turns[0].0.as_str(), ActorRole::Seeker),
            (turns[0].1.as_str(), ActorRole::System),
            (turns[1].0.as_str(), ActorRole::Seeker),
            (turns[1].1.as_str(), ActorRole::System),
        ];
        ensure!(logged == want, "log holds {logged:?}");
        ensure!(records.iter().all(|r| r.leg == Leg::SeekerSystem), "wrong leg in direct log");
        Ok(())
    })
}
