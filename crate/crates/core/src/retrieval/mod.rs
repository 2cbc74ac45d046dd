//! Retrieval and question answering: co-reference resolution, query
//! generation, BM25 retrieval, re-ranking and result generation, packaged as
//! the `search` and `qa` actions.

pub mod answer;
pub mod coref;
pub mod index;
pub mod query;
pub mod rerank;
pub mod tokenize;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use tokio_util::sync::CancellationToken;

use crate::dispatch::{Action, ActionError, ActionResponse};
use crate::model::Conversation;

pub use answer::{generate_result, score_to_confidence, ResultMode};
pub use coref::{resolve_coreferences, Resolution, ResolutionMap};
pub use index::{index_corpus, read_corpus, search, CorpusIndex, Document, IndexError, ResultSource, RetrievedResult};
pub use query::{generate_query, ContextTerm, GeneratedQuery};
pub use rerank::{ProximityReranker, Reranker};
pub use tokenize::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub k: usize,
    pub rerank_depth: usize,
    pub proximity_boost: f64,
    pub context_weight: f64,
    pub qa_docs: usize,
    pub snippet_chars: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            rerank_depth: 20,
            proximity_boost: 0.5,
            context_weight: 0.3,
            qa_docs: 3,
            snippet_chars: 160,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("retrieval.k must be positive".into());
        }
        if !(self.proximity_boost >= 0.0 && self.proximity_boost.is_finite()) {
            return Err("retrieval.proximity_boost must be a non-negative number".into());
        }
        if !(0.0..=1.0).contains(&self.context_weight) {
            return Err("retrieval.context_weight must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// One pass through the pipeline, kept for diagnostics and run files.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub query: GeneratedQuery,
    pub results: Vec<RetrievedResult>,
}

/// The full resolve → generate → search → rerank chain over a local index.
/// Pure: output depends only on the conversation, the index and the config.
pub struct RetrievalPipeline {
    index: Arc<CorpusIndex>,
    cfg: RetrievalConfig,
    rerankers: Vec<Arc<dyn Reranker>>,
}

impl RetrievalPipeline {
    /// Pipeline with the default proximity re-ranking stage.
    pub fn new(index: Arc<CorpusIndex>, cfg: RetrievalConfig) -> Self {
        let proximity = ProximityReranker::new(cfg.rerank_depth, cfg.proximity_boost);
        Self {
            index,
            cfg,
            rerankers: vec![Arc::new(proximity)],
        }
    }

    /// Replaces the re-ranking stages.
    pub fn with_rerankers(mut self, rerankers: Vec<Arc<dyn Reranker>>) -> Self {
        self.rerankers = rerankers;
        self
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.cfg
    }

    pub fn prepare(&self, conv: &Conversation) -> Option<GeneratedQuery> {
        let res = resolve_coreferences(conv);
        generate_query(conv, &res, &self.cfg)
    }

    /// `None` when the conversation does not end in a user text turn.
    pub fn retrieve(&self, conv: &Conversation) -> Option<Retrieval> {
        let query = self.prepare(conv)?;
        let mut results = search(&self.index, &query, self.cfg.k).ok()?;
        for stage in &self.rerankers {
            results = stage.rerank(&query, results);
        }
        Some(Retrieval { query, results })
    }

    pub fn respond(&self, conv: &Conversation, mode: ResultMode) -> ActionResponse {
        let Some(trigger) = conv.last() else {
            return ActionResponse::default();
        };
        let Some(retrieval) = self.retrieve(conv) else {
            return ActionResponse::default();
        };
        let idf = |t: &str| self.index.idf(t);
        let candidates =
            generate_result(trigger, &retrieval.query, &retrieval.results, mode, &self.cfg, &idf);
        ActionResponse {
            candidates,
            diagnostics: diagnostics(&retrieval),
        }
    }
}

pub fn diagnostics(r: &Retrieval) -> BTreeMap<String, String> {
    let mut d = BTreeMap::new();
    d.insert("generated_query".into(), r.query.text.clone());
    d.insert("resolution".into(), r.query.resolution.to_string());
    let ctx: Vec<String> = r
        .query
        .context_terms
        .iter()
        .map(|t| format!("{}^{}", t.term, t.weight))
        .collect();
    d.insert("context_terms".into(), ctx.join(" "));
    let docs: Vec<String> = r
        .results
        .iter()
        .map(|x| format!("{}:{:.4}", x.doc_id, x.score))
        .collect();
    d.insert("results".into(), docs.join(" "));
    d
}

/// The `search` or `qa` action over a shared pipeline.
pub struct RetrievalAction {
    pipeline: Arc<RetrievalPipeline>,
    mode: ResultMode,
}

impl RetrievalAction {
    pub fn new(pipeline: Arc<RetrievalPipeline>, mode: ResultMode) -> Self {
        Self { pipeline, mode }
    }

    pub fn name(&self) -> &'static str {
        self.mode.action_name()
    }
}

#[async_trait]
impl Action for RetrievalAction {
    async fn run(
        &self,
        conversation: Arc<Conversation>,
        cancel: CancellationToken,
    ) -> Result<ActionResponse, ActionError> {
        if cancel.is_cancelled() {
            return Err(ActionError::new("cancelled"));
        }
        Ok(self.pipeline.respond(&conversation, self.mode))
    }
}
