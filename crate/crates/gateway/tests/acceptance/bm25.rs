//! Randomized comparison of `search` with a brute-force BM25 evaluation that
//! scores every document straight from its text.

use std::time::{Duration, Instant};

use cis_core::retrieval::{index_corpus, search, ContextTerm, Document, GeneratedQuery};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::{ensure, Outcome};

const K1: f64 = 1.2;
const B: f64 = 0.75;
const VOCAB: &[&str] = &[
    "parrot", "macaw", "species", "forest", "titanic", "movie", "ship", "ocean", "iceberg", "cameron",
    "search", "query", "rank", "index", "answer", "question", "bird", "red", "blue", "film", "the", "of",
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn random_text(rng: &mut StdRng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| {
            let w = VOCAB[rng.random_range(0..VOCAB.len())];
            if rng.random_bool(0.1) {
                w.to_uppercase()
            } else {
                w.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(if rng.random_bool(0.5) { " " } else { ", " })
}

/// (doc_id, score) for every document with a positive score, best first,
/// ties by doc id, cut at `k`.
fn brute_force(docs: &[Document], query: &GeneratedQuery, k: usize) -> Vec<(String, f64)> {
    let texts: Vec<Vec<String>> = docs
        .iter()
        .map(|d| {
            let mut w = words(&d.title);
            w.extend(words(&d.body));
            w
        })
        .collect();
    let n = docs.len() as f64;
    let total: usize = texts.iter().map(Vec::len).sum();
    let avgdl = total as f64 / n;

    // merged query weights, first-occurrence order
    let mut weights: Vec<(String, f64)> = Vec::new();
    let mut add = |t: String, w: f64| {
        if let Some(e) = weights.iter_mut().find(|e| e.0 == t) {
            e.1 += w;
        } else {
            weights.push((t, w));
        }
    };
    for t in words(&query.text) {
        add(t, 1.0);
    }
    for ct in &query.context_terms {
        add(ct.term.clone(), ct.weight);
    }

    let mut scored: Vec<(String, f64)> = Vec::new();
    for (d, text) in docs.iter().zip(&texts) {
        let dl = text.len() as f64;
        let mut score = 0.0;
        for (term, w) in &weights {
            if *w <= 0.0 {
                continue;
            }
            let tf = text.iter().filter(|x| *x == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = texts.iter().filter(|t| t.contains(term)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += w * (idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * dl / avgdl)));
        }
        if score > 0.0 {
            scored.push((d.doc_id.clone(), score));
        }
    }
    // insertion sort: score descending, doc id ascending
    let mut ordered: Vec<(String, f64)> = Vec::new();
    for s in scored {
        let pos = ordered
            .iter()
            .position(|o| s.1 > o.1 || (s.1 == o.1 && s.0 < o.0))
            .unwrap_or(ordered.len());
        ordered.insert(pos, s);
    }
    ordered.truncate(k);
    ordered
}

pub fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x05ee_db25);
    let cases = 600;
    for case in 0..cases {
        let n_docs = rng.random_range(1..=50);
        let docs: Vec<Document> = (0..n_docs)
            .map(|i| {
                let title = if rng.random_bool(0.5) { random_text(&mut rng, 0, 3) } else { String::new() };
                Document::new(format!("d{:03}", (i * 37) % 1000), title, random_text(&mut rng, 1, 30))
            })
            .collect();
        let mut q_words: Vec<String> = Vec::new();
        for _ in 0..rng.random_range(1..=8) {
            if rng.random_bool(0.15) {
                q_words.push("zzz".into());
            } else {
                q_words.push(VOCAB[rng.random_range(0..VOCAB.len())].to_string());
            }
        }
        let mut query = GeneratedQuery::plain(q_words.join(" "));
        if rng.random_bool(0.3) {
            for _ in 0..rng.random_range(1..=3) {
                query.context_terms.push(ContextTerm {
                    term: VOCAB[rng.random_range(0..VOCAB.len())].to_string(),
                    weight: rng.random_range(0.0..1.0),
                });
            }
        }
        let k = rng.random_range(1..=60);

        let index = index_corpus(docs.clone()).map_err(|e| format!("case {case}: {e}"))?;
        let got = search(&index, &query, k).map_err(|e| format!("case {case}: {e}"))?;
        let want = brute_force(&docs, &query, k);
        let got_ids: Vec<&str> = got.iter().map(|r| r.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|w| w.0.as_str()).collect();
        ensure!(got_ids == want_ids, "case {case}: order {got_ids:?} != {want_ids:?} for {:?}", query.text);
        for (r, (id, s)) in got.iter().zip(&want) {
            ensure!((r.score - s).abs() <= 1e-9, "case {case}: {id} scored {} vs {s}", r.score);
        }
        for (i, r) in got.iter().enumerate() {
            ensure!(r.rank == i + 1, "case {case}: rank {} at position {i}", r.rank);
        }
    }
    let took = t0.elapsed();
    ensure!(took <= Duration::from_secs(30), "took {took:?}");
    println!("      {cases} random corpora");
    Ok(())
}
