#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use dxagent::agent::{Actor, Agent, AgentConfig};
use dxagent::diagnoser::Diagnoser;
use dxagent::env::{Action, DialogueState};
use dxagent::vae::{PartialVae, VaeConfig};
use dxagent_service::{router, ModelBundle, SessionService, SessionStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const N_S: usize = 12;
pub const N_D: usize = 5;

/// Untrained but fixed models; `terminate_bias` shifts the terminate logit.
pub fn models(seed: u64, max_turns: usize, terminate_bias: f64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symptoms: Vec<String> = (0..N_S).map(|i| format!("s{i:02}")).collect();
    let diseases: Vec<String> = (0..N_D).map(|i| format!("d{i:02}")).collect();
    let vae = PartialVae::new(symptoms.clone(), &VaeConfig { latent_dim: 4, embedding_dim: 4, hidden: 16, ..VaeConfig::default() }, &mut rng);
    let diagnoser = Diagnoser::new(symptoms, diseases, &[16], &mut rng);
    let mut agent = Agent::from_vae(&vae, &diagnoser, &AgentConfig::default(), &mut rng).unwrap();
    if let Actor::Generative(g) = &mut agent.actor {
        g.head.bias[[0, N_S]] += terminate_bias;
    }
    ModelBundle::new(agent, diagnoser, vae, max_turns).unwrap()
}

pub async fn spawn(models: ModelBundle, store: Arc<dyn SessionStore>) -> (SocketAddr, Arc<SessionService>) {
    let service = Arc::new(SessionService::new(Arc::new(models), store));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(service.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, service)
}

/// Direct greedy rollout: the inquiries the agent makes when `answer` answers them.
pub fn greedy_inquiries(models: &ModelBundle, reports: &[(usize, bool)], answer: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut state = DialogueState::from_reports(N_S, reports, models.max_turns).unwrap();
    let mut asked = Vec::new();
    while !state.at_cap() {
        match models.agent.policy(&state).unwrap().greedy() {
            Action::Terminate => break,
            Action::Inquire(s) => {
                asked.push(s);
                state.apply_answer(s, answer(s)).unwrap();
            }
        }
    }
    asked
}

pub fn symptom_index(id: &str) -> usize {
    id.trim_start_matches('s').parse().unwrap()
}
