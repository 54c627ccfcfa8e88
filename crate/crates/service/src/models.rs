//! Frozen models shared by all request handlers.

use std::path::Path;

use dxagent::agent::Agent;
use dxagent::diagnoser::Diagnoser;
use dxagent::ppo::TrainerConfig;
use dxagent::vae::PartialVae;
use dxagent::{Error, Result};
use serde::Serialize;

pub const AGENT_FILE: &str = "agent.json";
pub const DIAGNOSER_FILE: &str = "diagnoser.json";
pub const VAE_FILE: &str = "vae.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub agent: Agent,
    pub diagnoser: Diagnoser,
    pub vae: PartialVae,
    pub max_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fingerprints {
    pub agent: String,
    pub diagnoser: String,
    pub vae: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Catalog {
    pub symptoms: Vec<CatalogEntry>,
    pub diseases: Vec<CatalogEntry>,
}

impl ModelBundle {
    pub fn new(agent: Agent, diagnoser: Diagnoser, vae: PartialVae, max_turns: usize) -> Result<Self> {
        agent.check_compatible(&vae, &diagnoser)?;
        Ok(ModelBundle {
            agent,
            diagnoser,
            vae,
            max_turns,
        })
    }

    /// Loads the checkpoints written by a training run. `max_turns` falls back to the run's config.
    pub fn load(dir: &Path, max_turns: Option<usize>) -> Result<Self> {
        let agent = Agent::load(&dir.join(AGENT_FILE))?;
        let diagnoser = Diagnoser::load(&dir.join(DIAGNOSER_FILE))?;
        let vae = PartialVae::load(&dir.join(VAE_FILE))?;
        let max_turns = match max_turns {
            Some(t) => t,
            None => {
                let path = dir.join(CONFIG_FILE);
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{} not found; pass the turn cap explicitly",
                        path.display()
                    )));
                }
                TrainerConfig::from_json_file(&path)?.max_turns
            }
        };
        ModelBundle::new(agent, diagnoser, vae, max_turns)
    }

    pub fn fingerprints(&self) -> Fingerprints {
        Fingerprints {
            agent: self.agent.fingerprint(),
            diagnoser: self.diagnoser.fingerprint(),
            vae: self.vae.fingerprint(),
        }
    }

    /// Ids double as display names; the knowledge base carries no separate labels.
    pub fn catalog(&self) -> Catalog {
        let entries = |ids: &[String]| {
            ids.iter()
                .map(|id| CatalogEntry {
                    id: id.clone(),
                    name: id.clone(),
                })
                .collect()
        };
        Catalog {
            symptoms: entries(&self.diagnoser.symptoms),
            diseases: entries(&self.diagnoser.diseases),
        }
    }

    pub fn symptom_index(&self, id: &str) -> Option<usize> {
        self.diagnoser.symptoms.iter().position(|s| s == id)
    }
}
