//! Simulation lab for shilling attacks on recommender systems.
//!
//! The crate is organized around the attack pipeline: ingest rating/review
//! data ([`data`]), train a victim recommender ([`victim`]), fabricate fake
//! user profiles with classical baselines ([`baseline`]) or LLM-driven user
//! agents ([`agent`]), inject them, retrain, and measure efficacy, stealth
//! and detectability ([`eval`], [`detect`]).

pub mod agent;
pub mod baseline;
pub mod data;
pub mod detect;
pub mod embedding;
pub mod eval;
pub mod synth;
pub mod victim;

mod error;

pub use error::{CoreError, Result};
