//! Actor and critic networks.
//!
//! The generative actor reuses the pretrained VAE: the product-of-experts
//! posterior mean of the observed symptoms is decoded into per-symptom
//! probabilities, and a single linear head maps those to `N_S + 1` action
//! logits. The encoder side stays frozen; the decoder and head are trained.
//! The critic reads `[D(s), z, t / N_T]`.

use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::diagnoser::{Diagnose, Diagnoser, DiagnosisDistribution};
use crate::env::{Action, DialogueState};
use crate::error::{Error, Result};
use crate::nn::{masked_softmax, sigmoid, Activation, Linear, Mlp, MlpTrace};
use crate::vae::{PartialVae, PROB_FLOOR};

const CHECKPOINT_KIND: &str = "agent";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub critic_hidden: Vec<usize>,
    /// Hidden widths of the plain MLP actor used when the VAE is ablated.
    pub plain_actor_hidden: Vec<usize>,
    /// Scale of the uniform initialisation of the action head.
    pub head_init_gain: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            critic_hidden: vec![128, 128],
            plain_actor_hidden: vec![128, 128],
            head_init_gain: 0.1,
        }
    }
}

/// VAE-initialised policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeActor {
    /// Encoder side is frozen; only `vae.decoder` is fine-tuned.
    pub vae: PartialVae,
    pub head: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Generative(GenerativeActor),
    /// MLP over the raw `{+1, 0, -1}` state.
    Plain(Mlp),
}

#[derive(Debug, Clone)]
pub enum ActorGrads {
    Generative { decoder: Mlp, head: Linear },
    Plain(Mlp),
}

impl ActorGrads {
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        match self {
            ActorGrads::Generative { decoder, head } => {
                let mut t = decoder.tensors();
                t.extend(head.tensors());
                t
            }
            ActorGrads::Plain(net) => net.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            ActorGrads::Generative { decoder, head } => {
                let mut t = decoder.tensors_mut();
                t.extend(head.tensors_mut());
                t
            }
            ActorGrads::Plain(net) => net.tensors_mut(),
        }
    }
}

pub struct ActorTrace {
    net: MlpTrace,
    /// Decoder probabilities fed to the head (generative actor only).
    probs: Option<Array2<f64>>,
}

impl Actor {
    /// Network input for a state: the posterior mean, or the raw state vector.
    pub fn features(&self, state: &DialogueState) -> Vec<f64> {
        match self {
            Actor::Generative(g) => g.vae.posterior(&state.observations()).mean,
            Actor::Plain(_) => state.obs_f64(),
        }
    }

    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        match self {
            Actor::Generative(_) => self.logits_traced(features).0,
            Actor::Plain(net) => net.forward(features.view()),
        }
    }

    pub fn logits_traced(&self, features: &Array2<f64>) -> (Array2<f64>, ActorTrace) {
        match self {
            Actor::Generative(g) => {
                let (dec, net) = g.vae.decoder.forward_traced(features.view());
                let probs = dec.mapv(|l| sigmoid(l).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
                let logits = g.head.forward(probs.view());
                (logits, ActorTrace { net, probs: Some(probs) })
            }
            Actor::Plain(mlp) => {
                let (logits, net) = mlp.forward_traced(features.view());
                (logits, ActorTrace { net, probs: None })
            }
        }
    }

    pub fn zero_grads(&self) -> ActorGrads {
        match self {
            Actor::Generative(g) => ActorGrads::Generative {
                decoder: g.vae.decoder.zeros_like(),
                head: g.head.zeros_like(),
            },
            Actor::Plain(net) => ActorGrads::Plain(net.zeros_like()),
        }
    }

    /// Accumulates gradients of the trainable parameters given `d loss / d logits`.
    pub fn backward(&self, trace: &ActorTrace, grad_logits: Array2<f64>, grads: &mut ActorGrads) {
        match (self, grads) {
            (Actor::Generative(g), ActorGrads::Generative { decoder, head }) => {
                let probs = trace.probs.as_ref().expect("generative trace carries probabilities");
                let mut g_probs = g.head.backward(probs.view(), &grad_logits, head);
                // Sigmoid derivative; zero where the clamp is active.
                ndarray::Zip::from(&mut g_probs).and(probs).for_each(|gp, &p| {
                    *gp *= if p <= PROB_FLOOR || p >= 1.0 - PROB_FLOOR { 0.0 } else { p * (1.0 - p) };
                });
                g.vae.decoder.backward(&trace.net, g_probs, decoder);
            }
            (Actor::Plain(net), ActorGrads::Plain(gnet)) => {
                net.backward(&trace.net, grad_logits, gnet);
            }
            _ => unreachable!("gradient container does not match actor kind"),
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Actor::Generative(g) => {
                let mut t = g.vae.decoder.tensors_mut();
                t.extend(g.head.tensors_mut());
                t
            }
            Actor::Plain(net) => net.tensors_mut(),
        }
    }

    pub fn trainable(&self) -> Vec<&Array2<f64>> {
        match self {
            Actor::Generative(g) => {
                let mut t = g.vae.decoder.tensors();
                t.extend(g.head.tensors());
                t
            }
            Actor::Plain(net) => net.tensors(),
        }
    }
}

/// Action probabilities for one state; masked entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: Vec<f64>,
}

impl PolicyOutput {
    pub fn from_logits(logits: &[f64], mask: &[bool]) -> Result<Self> {
        if logits.len() != mask.len() {
            return Err(Error::Usage("mask length does not match the action space".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Usage("no legal action".into()));
        }
        Ok(PolicyOutput {
            probs: masked_softmax(logits, mask),
        })
    }

    pub fn num_symptoms(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn log_prob(&self, action: Action) -> f64 {
        self.probs[action.index(self.num_symptoms())].ln()
    }

    /// Draws from the categorical distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return Action::from_index(i, self.num_symptoms());
            }
        }
        Action::from_index(last, self.num_symptoms())
    }

    /// Most probable action; ties go to the lowest index.
    pub fn greedy(&self) -> Action {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        Action::from_index(best, self.num_symptoms())
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// Critic inputs for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticInput {
    pub yhat: DiagnosisDistribution,
    /// Posterior mean, or the raw state when the VAE is ablated.
    pub latent: Vec<f64>,
    pub turn_ratio: f64,
}

impl CriticInput {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.yhat.probs().to_vec();
        v.extend_from_slice(&self.latent);
        v.push(self.turn_ratio);
        v
    }
}

/// `(D(s), posterior mean of the observed set, turn / N_T)`.
pub fn build_critic_input(state: &DialogueState, diagnoser: &Diagnoser, vae: &PartialVae) -> Result<CriticInput> {
    Ok(CriticInput {
        yhat: diagnoser.predict(&state.obs_f64())?,
        latent: vae.posterior(&state.observations()).mean,
        turn_ratio: state.turn_ratio(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Actor,
    pub critic: Mlp,
    pub symptoms: Vec<String>,
    pub diseases: Vec<String>,
    pub vae_fingerprint: String,
    pub diagnoser_fingerprint: String,
}

impl Agent {
    /// Generative actor initialised from the pretrained VAE; fresh head and critic.
    pub fn from_vae<R: Rng + ?Sized>(
        vae: &PartialVae,
        diagnoser: &Diagnoser,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        diagnoser.check_compatible(vae)?;
        let n = vae.num_symptoms();
        let head = Linear::new(n, n + 1, config.head_init_gain, rng);
        let critic = critic_net(diagnoser.num_diseases() + vae.latent_dim + 1, &config.critic_hidden, rng);
        Ok(Agent {
            actor: Actor::Generative(GenerativeActor { vae: vae.clone(), head }),
            critic,
            symptoms: vae.symptoms.clone(),
            diseases: diagnoser.diseases.clone(),
            vae_fingerprint: vae.fingerprint(),
            diagnoser_fingerprint: diagnoser.fingerprint(),
        })
    }

    /// Plain MLP actor over the raw state; the critic also sees the raw state.
    pub fn plain<R: Rng + ?Sized>(
        vae: &PartialVae,
        diagnoser: &Diagnoser,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        diagnoser.check_compatible(vae)?;
        let n = diagnoser.num_symptoms();
        let mut sizes = vec![n];
        sizes.extend_from_slice(&config.plain_actor_hidden);
        sizes.push(n + 1);
        let actor = Mlp::new(&sizes, Activation::Tanh, rng);
        let critic = critic_net(diagnoser.num_diseases() + n + 1, &config.critic_hidden, rng);
        Ok(Agent {
            actor: Actor::Plain(actor),
            critic,
            symptoms: diagnoser.symptoms.clone(),
            diseases: diagnoser.diseases.clone(),
            vae_fingerprint: vae.fingerprint(),
            diagnoser_fingerprint: diagnoser.fingerprint(),
        })
    }

    pub fn num_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    pub fn policy(&self, state: &DialogueState) -> Result<PolicyOutput> {
        self.policy_from_features(&self.actor.features(state), &state.legal_mask())
    }

    pub fn policy_from_features(&self, features: &[f64], mask: &[bool]) -> Result<PolicyOutput> {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("feature row");
        let logits = self.actor.logits(&x);
        PolicyOutput::from_logits(logits.row(0).as_slice().expect("contiguous"), mask)
    }

    /// Critic inputs for a state given the diagnoser's prediction on it.
    pub fn critic_input(&self, state: &DialogueState, yhat: DiagnosisDistribution) -> CriticInput {
        let latent = match &self.actor {
            Actor::Generative(g) => g.vae.posterior(&state.observations()).mean,
            Actor::Plain(_) => state.obs_f64(),
        };
        CriticInput {
            yhat,
            latent,
            turn_ratio: state.turn_ratio(),
        }
    }

    pub fn value(&self, input: &CriticInput) -> f64 {
        critic_forward(&self.critic, input)
    }

    /// Hash of the frozen encoder side (generative actor only).
    pub fn encoder_fingerprint(&self) -> Option<String> {
        match &self.actor {
            Actor::Generative(g) => Some(g.vae.encoder_fingerprint()),
            Actor::Plain(_) => None,
        }
    }

    pub fn fingerprint(&self) -> String {
        checkpoint::fingerprint(self)
    }

    /// Errors unless `vae` and `diagnoser` are the checkpoints this agent was trained against.
    pub fn check_compatible(&self, vae: &PartialVae, diagnoser: &Diagnoser) -> Result<()> {
        if vae.symptoms != self.symptoms || diagnoser.symptoms != self.symptoms || diagnoser.diseases != self.diseases {
            return Err(Error::Compatibility("agent, VAE and diagnoser disagree on symptom/disease orderings".into()));
        }
        if vae.fingerprint() != self.vae_fingerprint {
            return Err(Error::Compatibility("agent was trained against a different VAE checkpoint".into()));
        }
        if diagnoser.fingerprint() != self.diagnoser_fingerprint {
            return Err(Error::Compatibility("agent was trained against a different diagnoser checkpoint".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut agent: Agent = checkpoint::load(path, CHECKPOINT_KIND)?;
        if let Actor::Generative(g) = &mut agent.actor {
            g.vae.refresh_experts();
        }
        Ok(agent)
    }
}

fn critic_net<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], rng: &mut R) -> Mlp {
    let mut sizes = vec![inputs];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Mlp::new(&sizes, Activation::Tanh, rng)
}

pub fn critic_forward(critic: &Mlp, input: &CriticInput) -> f64 {
    let v = input.to_vec();
    let x = Array2::from_shape_vec((1, v.len()), v).expect("critic row");
    critic.forward(x.view())[[0, 0]]
}

/// `ln pi(action | features)` and its gradient w.r.t. the trainable actor parameters.
pub fn log_prob_grad(actor: &Actor, features: &[f64], mask: &[bool], action: usize) -> (f64, ActorGrads) {
    let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("feature row");
    let (logits, trace) = actor.logits_traced(&x);
    let probs = masked_softmax(logits.row(0).as_slice().expect("contiguous"), mask);
    let mut g = Array2::zeros(logits.raw_dim());
    for (k, &p) in probs.iter().enumerate() {
        if mask[k] {
            g[[0, k]] = (k == action) as u8 as f64 - p;
        }
    }
    let mut grads = actor.zero_grads();
    actor.backward(&trace, g, &mut grads);
    (probs[action].ln(), grads)
}

/// Critic value and its parameter gradient.
pub fn value_grad(critic: &Mlp, input: &[f64]) -> (f64, Mlp) {
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("critic row");
    let (out, trace) = critic.forward_traced(x.view());
    let mut grads = critic.zeros_like();
    critic.backward(&trace, Array2::ones((1, 1)), &mut grads);
    (out[[0, 0]], grads)
}

/// Extracts the `[batch, width]` block of critic inputs for stored transitions.
pub fn stack_rows(rows: &[&[f64]]) -> Array2<f64> {
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.slice_mut(s![i, ..]).assign(&ndarray::ArrayView1::from(*r));
    }
    out
}
