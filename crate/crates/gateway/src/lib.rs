//! Front ends for the engine: batch runs over topic files, an interactive
//! console, and an HTTP chat gateway with direct and Wizard-of-Oz modes.

pub mod attachments;
pub mod batch;
pub mod engine;
pub mod http;
pub mod repl;
pub mod service;

pub use engine::Engine;
pub use service::{ChannelRole, Delivery, Gateway, GatewayError, IncomingMessage, Subscription, WizardTarget};
