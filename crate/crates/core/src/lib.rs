//! Core of the conversational information seeking engine.
//!
//! Each user or system interaction is a [`model::Message`]; the
//! [`store::InteractionLog`] records every interaction, the
//! [`dispatch::Dispatcher`] runs all registered actions in parallel under an
//! interaction timeout and selects the response, and [`retrieval`] provides
//! the `search` and `qa` actions over a local BM25 index.

pub mod clients;
pub mod config;
pub mod dispatch;
pub mod model;
pub mod retrieval;
pub mod store;

pub use config::Settings;
pub use dispatch::{Action, ActionOutput, ActionResponse, DispatchConfig, Dispatcher, SelectionPolicy};
pub use model::{
    decode_message, encode_message, validate_message, ActorRole, Conversation, ConversationMode,
    Message, OptionItem, Payload,
};
pub use store::{InteractionLog, InteractionRecord, InteractionStore, Leg};
