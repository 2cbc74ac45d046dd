use cis_core::{decode_message, encode_message, ActorRole, Message, OptionItem, Payload};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use crate::{ensure, Outcome};

const GOLDEN: &str = include_str!("../../../core/testdata/golden_message.json");

fn text() -> impl Strategy<Value = String> {
    // quotes, escapes, control characters and non-BMP text included
    "[a-zA-Z0-9 \"\\\\/\\x00-\\x1féß漢\u{1F99C}]{0,16}[a-z]"
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        text().prop_map(Payload::text),
        (text(), proptest::option::of(text())).prop_map(|(reference, caption)| Payload::Image { reference, caption }),
        (text(), proptest::option::of(text())).prop_map(|(reference, transcript)| Payload::Audio { reference, transcript }),
        (text(), proptest::collection::vec(text(), 1..6)).prop_map(|(prompt, labels)| Payload::Options {
            prompt,
            items: labels.into_iter().enumerate().map(|(i, l)| OptionItem::new(format!("opt{i}"), l)).collect(),
        }),
        (text(), text()).prop_map(|(source_message_id, option_id)| Payload::Selection { source_message_id, option_id }),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    (
        (text(), text(), prop_oneof![Just(ActorRole::Seeker), Just(ActorRole::Wizard), Just(ActorRole::System)]),
        payload(),
        prop_oneof![Just(0i64), Just(i64::MAX), 0..i64::MAX],
        proptest::option::of(text()),
        (text(), prop_oneof![Just(0.0f64), Just(1.0f64), 0.0..=1.0f64]),
    )
        .prop_map(|((id, cid, sender), payload, ts, reply, (action, conf))| {
            let mut m = Message::new(id, cid, sender, payload, ts);
            m.in_reply_to = reply;
            if sender == ActorRole::System {
                m.origin_action = Some(action);
                m.confidence = Some(conf);
            }
            m
        })
}

pub fn round_trip() -> Outcome {
    let golden = Message::new("c1-3", "c1", ActorRole::Seeker, Payload::text("who directed it"), 1_700_000_000_000);
    ensure!(encode_message(&golden) == GOLDEN.as_bytes(), "golden sample encoding changed");
    ensure!(decode_message(GOLDEN.as_bytes()).ok() == Some(golden), "golden sample decodes differently");

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let kinds = std::cell::RefCell::new(std::collections::BTreeSet::new());
    let result = runner.run(&message(), |m| {
        kinds.borrow_mut().insert(m.payload.kind());
        let bytes = encode_message(&m);
        let back = decode_message(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode_message(&back), bytes);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let kinds = kinds.into_inner();
    ensure!(kinds.len() == 5, "only payload kinds {kinds:?} were generated");
    println!("      1000 generated messages, kinds {kinds:?}");
    Ok(())
}
