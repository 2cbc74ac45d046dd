use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use cis_core::dispatch::ActionError;
use cis_core::{
    Action, ActionResponse, ActorRole, Conversation, ConversationMode, DispatchConfig, Dispatcher, Message, Payload,
};
use tokio_util::sync::CancellationToken;

use crate::{ensure, Outcome};

/// Sleeps without looking at the cancellation token.
struct Sleeper {
    ms: u64,
    confidence: f64,
}

#[async_trait]
impl Action for Sleeper {
    async fn run(&self, conv: Arc<Conversation>, _: CancellationToken) -> Result<ActionResponse, ActionError> {
        tokio::time::sleep(Duration::from_millis(self.ms)).await;
        let trigger = conv.last().expect("trigger");
        let m = Message::system_reply(trigger, format!("sleep-{}", self.ms), Payload::text("done"), "x", self.confidence);
        Ok(ActionResponse::new(vec![m]))
    }
}

pub fn timeout_bound() -> Outcome {
    let rt = crate::runtime();
    rt.block_on(async {
        let d = Dispatcher::new(DispatchConfig {
            timeout_ms: 200,
            ..DispatchConfig::default()
        })
        .map_err(|e| e.to_string())?;
        // the slow action would win on confidence if it were waited for
        d.register_action("slow", Arc::new(Sleeper { ms: 1000, confidence: 0.99 })).unwrap();
        d.register_action("fast", Arc::new(Sleeper { ms: 10, confidence: 0.1 })).unwrap();
        let mut worst = Duration::ZERO;
        for rep in 0..100 {
            let trigger = Message::new(format!("c-{rep}"), "c", ActorRole::Seeker, Payload::text("q"), rep);
            let conv = Conversation::with_messages("c", ConversationMode::Direct, vec![trigger]);
            let t0 = Instant::now();
            let m = d.dispatch(&conv).await;
            let took = t0.elapsed();
            worst = worst.max(took);
            ensure!(took <= Duration::from_millis(250), "repetition {rep} took {took:?}");
            ensure!(
                m.origin_action.as_deref() == Some("fast") && m.text() == Some("done"),
                "repetition {rep} returned {:?}",
                m.origin_action
            );
            ensure!(m.in_reply_to.as_deref() == Some(format!("c-{rep}").as_str()), "bad in_reply_to");
        }
        println!("      100 repetitions, worst {worst:?}");
        Ok(())
    })
}
