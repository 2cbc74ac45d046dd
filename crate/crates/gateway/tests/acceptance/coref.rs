//! Ten hand-traced dialogues: expected resolutions, rewritten queries and
//! expansion terms.

use cis_core::retrieval::{generate_query, resolve_coreferences, Resolution, RetrievalConfig};
use cis_core::{ActorRole, Conversation, ConversationMode, Message, Payload};

use crate::{ensure, Outcome};

struct Golden {
    name: &'static str,
    /// (sender, text); ids are c-1, c-2, ...
    turns: &'static [(ActorRole, &'static str)],
    /// (span, surface, antecedent, source id)
    resolutions: &'static [((usize, usize), &'static str, &'static str, &'static str)],
    query: &'static str,
    context: &'static [&'static str],
}

use ActorRole::{Seeker as U, System as S};

const SUITE: &[Golden] = &[
    Golden {
        name: "tail phrase antecedent",
        turns: &[(U, "tell me about the titanic movie"), (U, "who directed it")],
        resolutions: &[((13, 15), "it", "titanic movie", "c-1")],
        query: "who directed titanic movie",
        context: &["titanic", "movie"],
    },
    Golden {
        name: "single turn without anaphor",
        turns: &[(U, "who directed titanic")],
        resolutions: &[],
        query: "who directed titanic",
        context: &[],
    },
    Golden {
        name: "anaphor without antecedent",
        turns: &[(U, "it is raining")],
        resolutions: &[],
        query: "it is raining",
        context: &[],
    },
    Golden {
        name: "capitalized phrase beats tail",
        turns: &[(U, "What is the Scarlet Macaw"), (U, "where does it live")],
        resolutions: &[((11, 13), "it", "Scarlet Macaw", "c-1")],
        query: "where does Scarlet Macaw live",
        context: &["scarlet", "macaw"],
    },
    Golden {
        name: "history without anaphor",
        turns: &[(U, "tell me about parrots"), (U, "what do macaws eat")],
        resolutions: &[],
        query: "what do macaws eat",
        context: &["parrots"],
    },
    Golden {
        name: "quoted phrase",
        turns: &[(U, "I loved \"the shape of water\""), (U, "who made it")],
        resolutions: &[((9, 11), "it", "the shape of water", "c-1")],
        query: "who made the shape of water",
        context: &["loved", "shape", "water"],
    },
    Golden {
        name: "two anaphors, one antecedent",
        turns: &[(U, "tell me about the eiffel tower"), (U, "how tall is it and who built it")],
        resolutions: &[
            ((12, 14), "it", "eiffel tower", "c-1"),
            ((29, 31), "it", "eiffel tower", "c-1"),
        ],
        query: "how tall is eiffel tower and who built eiffel tower",
        context: &["eiffel", "tower"],
    },
    Golden {
        name: "entity carried through a pronoun-only turn",
        turns: &[
            (U, "tell me about the Great Barrier Reef"),
            (U, "where is it"),
            (U, "how big is it"),
        ],
        resolutions: &[((11, 13), "it", "Great Barrier Reef", "c-1")],
        query: "how big is Great Barrier Reef",
        context: &[],
    },
    Golden {
        name: "system turns are not antecedent sources",
        turns: &[
            (U, "Who is Kate Winslet"),
            (S, "She starred in Titanic and The Reader."),
            (U, "what is her best film"),
        ],
        resolutions: &[((8, 11), "her", "Kate Winslet", "c-1")],
        query: "what is Kate Winslet best film",
        context: &["kate", "winslet"],
    },
    Golden {
        name: "previous turn is all stopwords",
        turns: &[(U, "tell me more about that"), (U, "why is it")],
        resolutions: &[],
        query: "why is it",
        context: &[],
    },
];

fn conversation(g: &Golden) -> Conversation {
    let messages = g
        .turns
        .iter()
        .enumerate()
        .map(|(i, (sender, text))| {
            let id = format!("c-{}", i + 1);
            if *sender == ActorRole::System {
                let mut m = Message::new(id, "c", *sender, Payload::text(*text), i as i64);
                m.origin_action = Some("qa".into());
                m.confidence = Some(0.5);
                m
            } else {
                Message::new(id, "c", *sender, Payload::text(*text), i as i64)
            }
        })
        .collect();
    Conversation::with_messages("c", ConversationMode::Direct, messages)
}

pub fn golden_suite() -> Outcome {
    let cfg = RetrievalConfig::default();
    for g in SUITE {
        let conv = conversation(g);
        let map = resolve_coreferences(&conv);
        let want: Vec<Resolution> = g
            .resolutions
            .iter()
            .map(|(span, surface, antecedent, source)| Resolution {
                span: *span,
                surface: surface.to_string(),
                antecedent: antecedent.to_string(),
                source_message_id: source.to_string(),
            })
            .collect();
        ensure!(map.entries == want, "{}: resolutions {:?}", g.name, map.entries);
        let q = generate_query(&conv, &map, &cfg).ok_or_else(|| format!("{}: no query", g.name))?;
        ensure!(q.text == g.query, "{}: query {:?}", g.name, q.text);
        let terms: Vec<&str> = q.context_terms.iter().map(|t| t.term.as_str()).collect();
        ensure!(terms == g.context, "{}: context terms {terms:?}", g.name);
        ensure!(
            q.context_terms.iter().all(|t| t.weight == cfg.context_weight),
            "{}: context weights",
            g.name
        );
    }
    println!("      {} dialogues", SUITE.len());
    Ok(())
}
