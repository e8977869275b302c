//! Lifelong, identity-keyed memory for a full-duplex audiovisual dialog agent.
//!
//! The crate is organized bottom-up:
//!
//! - [`stream`]: the 17-channel token stream, its file format and training masks.
//! - [`verification`]: face and speaker verification, EER and ranking metrics.
//! - [`store`]: user profiles, the social relation graph, persistence.
//! - [`retrieval`]: query protocol, BM25 and embedding re-rank over neighbor memories.
//! - [`trigger`]: session boundary tagging and span metrics.
//! - [`pipeline`]: the periodic memory management cycle.
//! - [`runtime`]: polling retrieval, the dialog stub and the scheduler.
//! - [`backends`]: wire contracts and deterministic mocks for encoders, ASR and LLM agents.
//! - [`harness`]: scenario synthesis, simulation and evaluation suites.

pub mod backends;
pub mod harness;
pub mod ids;
pub mod pipeline;
pub mod retrieval;
pub mod runtime;
pub mod store;
pub mod stream;
pub mod trigger;
pub mod verification;

pub use ids::{IdentityId, UserId};
