//! Multi-agent undercover gaming: agents debate a visual question while one
//! of them holds a counterfactual image, vote that agent out, then agree on
//! an answer.

pub mod agents;
pub mod bench;
pub mod cfquestion;
pub mod engine;
pub mod error;
pub mod http;
pub mod image;
pub mod mockhttp;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod simulation;
pub mod transcript;

pub use error::{BackendError, Error, Result};
pub use model::{
    AgentId, CfQuestion, FactorMatrix, FactorScores, GameConfig, GameOutcome, Role, TerminationCause, VoteWeights,
};
pub use transcript::Transcript;
