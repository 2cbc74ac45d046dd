//! Wires settings, corpus, store, actions and clients into one engine shared
//! by every front end.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use cis_core::clients::{LiveSpeech, LiveWebSearch, SpeechClient, StubSpeech, StubWebSearch, WebSearchAction, WebSearchClient};
use cis_core::config::{ClientMode, Settings};
use cis_core::retrieval::{index_corpus, read_corpus, CorpusIndex, ResultMode, RetrievalAction, RetrievalPipeline};
use cis_core::{Dispatcher, InteractionLog, InteractionStore};

pub struct Engine {
    pub settings: Settings,
    pub store: Arc<dyn InteractionStore>,
    pub dispatcher: Arc<Dispatcher>,
    pub pipeline: Arc<RetrievalPipeline>,
    pub speech: Arc<dyn SpeechClient>,
}

pub fn load_index(corpus: &Path) -> anyhow::Result<CorpusIndex> {
    let file = File::open(corpus).with_context(|| format!("opening corpus {}", corpus.display()))?;
    let docs = read_corpus(BufReader::new(file)).with_context(|| format!("reading corpus {}", corpus.display()))?;
    index_corpus(docs).with_context(|| format!("indexing corpus {}", corpus.display()))
}

pub fn open_store(settings: &Settings) -> anyhow::Result<Arc<dyn InteractionStore>> {
    Ok(match &settings.store_path {
        Some(path) => Arc::new(
            InteractionLog::open(path)
                .with_context(|| format!("opening interaction log {}", path.display()))?,
        ),
        None => Arc::new(InteractionLog::in_memory()),
    })
}

impl Engine {
    /// Indexes the corpus, opens the store and registers the `search` and
    /// `qa` actions (plus `web` when a web client is configured).
    pub fn build(settings: Settings, corpus: &Path) -> anyhow::Result<Self> {
        let index = load_index(corpus)?;
        let store = open_store(&settings)?;
        Self::assemble(settings, Arc::new(index), store)
    }

    pub fn assemble(
        settings: Settings,
        index: Arc<CorpusIndex>,
        store: Arc<dyn InteractionStore>,
    ) -> anyhow::Result<Self> {
        let pipeline = Arc::new(RetrievalPipeline::new(index, settings.retrieval.clone()));
        let dispatcher = Arc::new(Dispatcher::new(settings.dispatch.clone())?);
        for mode in [ResultMode::Search, ResultMode::Qa] {
            let action = RetrievalAction::new(Arc::clone(&pipeline), mode);
            dispatcher.register_action(action.name(), Arc::new(action))?;
        }
        if let Some(mode) = settings.web.mode {
            let client: Arc<dyn WebSearchClient> = match mode {
                ClientMode::Stub => {
                    let Some(path) = &settings.web.fixtures else {
                        bail!("clients.web.fixtures is required in stub mode");
                    };
                    Arc::new(StubWebSearch::from_path(path)?)
                }
                ClientMode::Live => Arc::new(LiveWebSearch::from_env(
                    settings.web.endpoint.clone().unwrap_or_default(),
                    settings.web.credential_env.as_deref(),
                )),
            };
            let action = WebSearchAction::new(client, settings.retrieval.clone(), settings.web.timeout_ms);
            dispatcher.register_action(WebSearchAction::NAME, Arc::new(action))?;
        }
        let speech: Arc<dyn SpeechClient> = match settings.speech.mode {
            ClientMode::Stub => Arc::new(StubSpeech),
            ClientMode::Live => Arc::new(LiveSpeech::new(
                settings.speech.endpoint.clone().unwrap_or_default(),
                settings.web.timeout_ms,
            )),
        };
        Ok(Self {
            settings,
            store,
            dispatcher,
            pipeline,
            speech,
        })
    }
}
