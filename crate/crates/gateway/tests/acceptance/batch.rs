use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use cis_core::Settings;
use cis_gateway::batch::{read_topics, run_batch};

use crate::common::fixture;
use crate::{ensure, Outcome};

/// Checks run-file syntax; returns the set of query ids seen.
fn validate_run(text: &str, doc_ids: &HashSet<String>, run_name: &str) -> Result<Vec<String>, String> {
    let mut per_qid: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        ensure!(f.len() == 6, "line {}: {} fields", i + 1, f.len());
        ensure!(f[1] == "Q0" && f[5] == run_name, "line {}: {line}", i + 1);
        ensure!(doc_ids.contains(f[2]), "line {}: unknown doc {}", i + 1, f[2]);
        let rank: usize = f[3].parse().map_err(|_| format!("line {}: rank {}", i + 1, f[3]))?;
        let (int, frac) = f[4].split_once('.').ok_or_else(|| format!("line {}: score {}", i + 1, f[4]))?;
        ensure!(frac.len() == 6 && !int.is_empty(), "line {}: score {}", i + 1, f[4]);
        let score: f64 = f[4].parse().map_err(|_| format!("line {}: score {}", i + 1, f[4]))?;
        if !per_qid.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        per_qid.entry(f[0].to_string()).or_default().push((rank, score));
    }
    for (qid, rows) in &per_qid {
        for (i, (rank, score)) in rows.iter().enumerate() {
            ensure!(*rank == i + 1, "{qid}: rank {rank} at row {}", i + 1);
            ensure!(i == 0 || rows[i - 1].1 >= *score, "{qid}: scores not descending");
        }
    }
    Ok(order)
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = fixture("corpus.jsonl");
    let topics_path = fixture("topics.jsonl");
    let runs = rt_runs(&topics_path, &corpus, dir.path())?;
    let a = std::fs::read(&runs[0]).map_err(|e| e.to_string())?;
    let b = std::fs::read(&runs[1]).map_err(|e| e.to_string())?;
    ensure!(!a.is_empty(), "empty run file");
    ensure!(a == b, "run files differ");

    let text = String::from_utf8(a).map_err(|e| e.to_string())?;
    let doc_ids: HashSet<String> = std::fs::read_to_string(&corpus)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["doc_id"].as_str().unwrap().to_string())
        .collect();
    ensure!(doc_ids.len() == 20, "fixture corpus has {} docs", doc_ids.len());
    let qids = validate_run(&text, &doc_ids, "cis")?;

    let file = std::fs::File::open(&topics_path).map_err(|e| e.to_string())?;
    let topics = read_topics(std::io::BufReader::new(file), "topics.jsonl").map_err(|e| e.to_string())?;
    ensure!(topics.len() == 5 && topics.iter().all(|t| t.turns.len() > 1), "fixture topics");
    let expected: Vec<String> = topics
        .iter()
        .flat_map(|t| (1..=t.turns.len()).map(move |n| format!("{}_{n}", t.topic_id)))
        .collect();
    ensure!(qids == expected, "query ids {qids:?} != {expected:?}");
    Ok(())
}

fn rt_runs(topics: &std::path::Path, corpus: &std::path::Path, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>, String> {
    let rt = crate::runtime();
    let mut outs = Vec::new();
    for n in 0..2 {
        let out = dir.join(format!("run{n}.txt"));
        let t0 = Instant::now();
        rt.block_on(run_batch(topics, corpus, &out, Settings::default())).map_err(|e| e.to_string())?;
        let took = t0.elapsed();
        ensure!(took <= Duration::from_secs(5), "batch run {n} took {took:?}");
        outs.push(out);
    }
    Ok(outs)
}
