//! Retrieval-grounded hypothesis debate and blueprint-verified code execution.
//!
//! A run goes retrieval → debate → verify/build/execute/refine → knowledge
//! admission. Every language-model call goes through [`agent::CompletionProvider`];
//! every script run goes through [`sandbox::Sandbox`].

pub mod agent;
pub mod blueprint;
pub mod debate;
pub mod demo;
pub mod error;
pub mod knowledge;
pub mod pipeline;
pub mod sandbox;

pub use error::{Error, Result};
