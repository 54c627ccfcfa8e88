//! Sequential symptom-inquiry diagnosis agent.
//!
//! The pipeline trains a supervised [`diagnoser`], pretrains a product-of-experts
//! [`vae`] on partially observed symptom vectors, and then fine-tunes an
//! actor-critic [`agent`] with PPO ([`ppo`]) against a simulated patient
//! ([`env`]) under differential reward shaping ([`reward`]).

pub mod agent;
pub mod checkpoint;
pub mod diagnoser;
pub mod env;
pub mod error;
pub mod eval;
pub mod kb;
pub mod nn;
pub mod ppo;
pub mod reward;
pub mod vae;

pub use error::{Error, Result};
