//! PPO training: rollouts with shaped rewards, GAE, the clipped surrogate with
//! entropy bonus, critic regression, linear decay, and the end-to-end pipeline.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::agent::{stack_rows, Agent, AgentConfig, PolicyOutput};
use crate::diagnoser::{train_diagnoser, Diagnose, Diagnoser, DiagnoserConfig, DiagnosisDistribution};
use crate::env::{step, Action, DialogueState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::kb::{generate_dataset, load_knowledge_base, write_dataset, DatasetSplit, KnowledgeBase, PatientRecord};
use crate::nn::{clip_grad_norm, is_finite, Adam};
use crate::reward::{shape_reward_from, RewardConfig, RewardMode};
use crate::vae::{train_vae, PartialVae, VaeConfig};

/// Which parts of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    /// Constant reward for positive inquiries instead of differential shaping.
    NoRewardShaping,
    /// As `NoRewardShaping`, with a plain MLP actor and the raw state in the critic.
    NoVae,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "standard" | "full" => Ok(Variant::Standard),
            "no_rs" | "no_reward_shaping" => Ok(Variant::NoRewardShaping),
            "no_vae" => Ok(Variant::NoVae),
            other => Err(Error::Usage(format!("unknown variant `{other}` (expected no_rs or no_vae)"))),
        }
    }

    pub fn reward_mode(self) -> RewardMode {
        match self {
            Variant::Standard => RewardMode::Differential,
            Variant::NoRewardShaping | Variant::NoVae => RewardMode::Constant { positive: 0.25 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 50_000,
            n_valid: 5_000,
            n_test: 5_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub alpha: f64,
    pub max_turns: usize,
    /// Minibatch size for PPO updates.
    pub batch_size: usize,
    /// Transitions collected per iteration.
    pub rollout_size: usize,
    pub ppo_epochs: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub total_iterations: usize,
    /// Iterations over which learning rates and `eta` decay to one tenth; defaults to `total_iterations`.
    pub decay_horizon: Option<usize>,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Validation episodes evaluated after each iteration (0 disables).
    pub eval_episodes: usize,
    pub seed: u64,
    pub variant: Variant,
    pub agent: AgentConfig,
    pub data: DataConfig,
    pub diagnoser: DiagnoserConfig,
    pub vae: VaeConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.9,
            lambda: 0.9,
            epsilon: 0.1,
            eta: 0.01,
            alpha: 0.1,
            max_turns: 20,
            batch_size: 512,
            rollout_size: 1024,
            ppo_epochs: 4,
            actor_lr: 5e-5,
            critic_lr: 5e-5,
            total_iterations: 300,
            decay_horizon: None,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            eval_episodes: 256,
            seed: 0,
            variant: Variant::Standard,
            agent: AgentConfig::default(),
            data: DataConfig::default(),
            diagnoser: DiagnoserConfig::default(),
            vae: VaeConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if self.eta < 0.0 || self.alpha < 0.0 {
            return Err(Error::Config("eta and alpha must be non-negative".into()));
        }
        if self.batch_size == 0 || self.rollout_size == 0 {
            return Err(Error::Config("batch_size and rollout_size must be positive".into()));
        }
        Ok(())
    }

    /// Copy with the trainer, diagnoser and VAE seeds all set to `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut config = self.clone();
        config.seed = seed;
        config.diagnoser.seed = seed;
        config.vae.seed = seed;
        config
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            alpha: self.alpha,
            mode: self.variant.reward_mode(),
            ..RewardConfig::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainerConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        config.validate()?;
        Ok(config)
    }
}

/// Learning rates and entropy weight at an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub eta: f64,
}

/// Linear decay to one tenth of the initial values at the horizon, constant afterwards.
pub fn decay_schedules(iteration: usize, config: &TrainerConfig) -> Schedule {
    let horizon = config.decay_horizon.unwrap_or(config.total_iterations);
    let progress = if horizon == 0 {
        1.0
    } else {
        (iteration as f64 / horizon as f64).min(1.0)
    };
    let factor = 1.0 - 0.9 * progress;
    Schedule {
        actor_lr: config.actor_lr * factor,
        critic_lr: config.critic_lr * factor,
        eta: config.eta * factor,
    }
}

/// One stored step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Actor input for the pre-step state.
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    /// Behaviour-policy log-probability of `action`.
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub critic_input: Vec<f64>,
}

/// What a behaviour policy decided in a state.
pub struct Decision {
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
    pub features: Vec<f64>,
    pub critic_input: Vec<f64>,
}

/// Policy used to collect rollouts.
pub trait Behavior {
    fn decide<R: Rng + ?Sized>(&self, state: &DialogueState, yhat: &DiagnosisDistribution, rng: &mut R) -> Result<Decision>;
}

impl Behavior for Agent {
    fn decide<R: Rng + ?Sized>(&self, state: &DialogueState, yhat: &DiagnosisDistribution, rng: &mut R) -> Result<Decision> {
        let features = self.actor.features(state);
        let mask = state.legal_mask();
        let policy = self.policy_from_features(&features, &mask)?;
        let action = policy.sample(rng);
        let critic_input = self.critic_input(state, yhat.clone());
        Ok(Decision {
            action,
            log_prob: policy.log_prob(action),
            value: self.value(&critic_input),
            features,
            critic_input: critic_input.to_vec(),
        })
    }
}

/// Uniform choice among legal actions, with zero value estimates.
pub struct UniformBehavior;

impl Behavior for UniformBehavior {
    fn decide<R: Rng + ?Sized>(&self, state: &DialogueState, _: &DiagnosisDistribution, rng: &mut R) -> Result<Decision> {
        let mask = state.legal_mask();
        let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let idx = legal[rng.gen_range(0..legal.len())];
        Ok(Decision {
            action: Action::from_index(idx, state.num_symptoms()),
            log_prob: -(legal.len() as f64).ln(),
            value: 0.0,
            features: state.obs_f64(),
            critic_input: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Transition count of each episode, in order.
    pub episode_lengths: Vec<usize>,
    pub episode_returns: Vec<f64>,
    pub episode_inquiries: Vec<usize>,
}

/// Runs complete episodes on randomly drawn records until at least `n_transitions` are stored.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts<B: Behavior, R: Rng + ?Sized>(
    behavior: &B,
    records: &[PatientRecord],
    diagnoser: &Diagnoser,
    vae: &PartialVae,
    reward: &RewardConfig,
    max_turns: usize,
    n_transitions: usize,
    rng: &mut R,
) -> Result<Rollout> {
    diagnoser.check_compatible(vae)?;
    if records.is_empty() {
        return Err(Error::Usage("no records to simulate".into()));
    }
    let n = diagnoser.num_symptoms();
    let mut out = Rollout::default();
    while out.transitions.len() < n_transitions {
        let record = &records[rng.gen_range(0..records.len())];
        let mut state = DialogueState::reset(record, n, max_turns);
        let mut yhat = diagnoser.predict(&state.obs_f64())?;
        let (mut len, mut ret) = (0, 0.0);
        loop {
            let decision = behavior.decide(&state, &yhat, rng)?;
            let prev = state.clone();
            let result = step(&mut state, decision.action, record)?;
            let r = shape_reward_from(&prev, &yhat, decision.action, &state, record, diagnoser, vae, reward)?;
            out.transitions.push(Transition {
                features: decision.features,
                mask: prev.legal_mask(),
                action: decision.action.index(n),
                log_prob: decision.log_prob,
                reward: r,
                value: decision.value,
                done: result.done,
                critic_input: decision.critic_input,
            });
            len += 1;
            ret += r;
            if result.done {
                break;
            }
            yhat = diagnoser.predict(&state.obs_f64())?;
        }
        out.episode_lengths.push(len);
        out.episode_returns.push(ret);
        out.episode_inquiries.push(state.turn());
    }
    Ok(out)
}

/// Generalised advantage estimates and critic targets.
///
/// `dones[t]` ends an episode at `t`; the value after a terminal step is 0.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    assert!(values.len() == t_len && dones.len() == t_len, "rollout arrays differ in length");
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let (next_value, carry) = if dones[t] || t + 1 == t_len {
            (0.0, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

pub fn normalize(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// `min(o A, clip(o, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// Mean over samples of the clipped surrogate plus `eta` times the entropy.
pub fn ppo_objective(ratios: &[f64], advantages: &[f64], entropies: &[f64], epsilon: f64, eta: f64) -> f64 {
    let n = ratios.len() as f64;
    ratios
        .iter()
        .zip(advantages)
        .zip(entropies)
        .map(|((&o, &a), &h)| clipped_surrogate(o, a, epsilon) + eta * h)
        .sum::<f64>()
        / n
}

/// Per-minibatch quantities recorded during an update.
#[derive(Debug, Clone, Default)]
pub struct MinibatchRecord {
    pub ratios: Vec<f64>,
    pub advantages: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Objective as evaluated inside the update.
    pub objective: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Optimiser state carried across iterations.
#[derive(Debug, Clone, Default)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

/// Runs `ppo_epochs` passes of minibatch updates over one rollout.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    agent: &mut Agent,
    optim: &mut Optimizers,
    transitions: &[Transition],
    advantages: &[f64],
    returns: &[f64],
    config: &TrainerConfig,
    schedule: Schedule,
    rng: &mut R,
    mut record: Option<&mut Vec<MinibatchRecord>>,
) -> Result<UpdateStats> {
    let n_actions = agent.num_symptoms() + 1;
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    for _ in 0..config.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let feats = stack_rows(&chunk.iter().map(|&i| transitions[i].features.as_slice()).collect::<Vec<_>>());
            let (logits, trace) = agent.actor.logits_traced(&feats);
            let mut g_logits = Array2::zeros((b, n_actions));
            let mut mb = MinibatchRecord::default();
            let mut objective = 0.0;
            let mut clipped = 0usize;
            for (row, &i) in chunk.iter().enumerate() {
                let tr = &transitions[i];
                let policy = PolicyOutput::from_logits(logits.row(row).as_slice().expect("contiguous"), &tr.mask)?;
                let p = &policy.probs;
                let ratio = (p[tr.action].ln() - tr.log_prob).exp();
                let adv = advantages[i];
                let entropy = policy.entropy();
                objective += clipped_surrogate(ratio, adv, config.epsilon) + schedule.eta * entropy;
                // d/d(ratio) of the surrogate: A on the unclipped branch, 0 when the clip binds.
                let unclipped = ratio * adv <= ratio.clamp(1.0 - config.epsilon, 1.0 + config.epsilon) * adv;
                if !unclipped {
                    clipped += 1;
                }
                let g_logp = if unclipped { adv * ratio } else { 0.0 };
                for k in 0..n_actions {
                    if !tr.mask[k] {
                        continue;
                    }
                    let onehot = (k == tr.action) as u8 as f64;
                    let d_surr = g_logp * (onehot - p[k]);
                    let d_ent = if p[k] > 0.0 { -p[k] * (p[k].ln() + entropy) } else { 0.0 };
                    // Gradient ascent on the objective is descent on its negative.
                    g_logits[[row, k]] = -(d_surr + schedule.eta * d_ent) / b as f64;
                }
                mb.ratios.push(ratio);
                mb.advantages.push(adv);
                mb.entropies.push(entropy);
            }
            objective /= b as f64;
            mb.objective = objective;
            if !objective.is_finite() {
                return Err(Error::Divergence(format!("non-finite PPO objective {objective}")));
            }
            let mut grads = agent.actor.zero_grads();
            agent.actor.backward(&trace, g_logits, &mut grads);
            if !is_finite(&grads.tensors()) {
                return Err(Error::Divergence("non-finite actor gradient".into()));
            }
            clip_grad_norm(grads.tensors_mut(), config.max_grad_norm);
            optim.actor.step(schedule.actor_lr, agent.actor.trainable_mut(), grads.tensors());

            let cin = stack_rows(&chunk.iter().map(|&i| transitions[i].critic_input.as_slice()).collect::<Vec<_>>());
            let (values, ctrace) = agent.critic.forward_traced(cin.view());
            let mut g_v = Array2::zeros((b, 1));
            let mut value_loss = 0.0;
            for (row, &i) in chunk.iter().enumerate() {
                let err = values[[row, 0]] - returns[i];
                value_loss += err * err;
                g_v[[row, 0]] = 2.0 * err / b as f64;
            }
            value_loss /= b as f64;
            if !value_loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite critic loss {value_loss}")));
            }
            let mut cgrads = agent.critic.zeros_like();
            agent.critic.backward(&ctrace, g_v, &mut cgrads);
            clip_grad_norm(cgrads.tensors_mut(), config.max_grad_norm);
            optim.critic.step(schedule.critic_lr, agent.critic.tensors_mut(), cgrads.tensors());

            stats.objective += objective;
            stats.value_loss += value_loss;
            stats.entropy += mb.entropies.iter().sum::<f64>() / b as f64;
            stats.clip_fraction += clipped as f64 / b as f64;
            batches += 1;
            if let Some(rec) = record.as_deref_mut() {
                rec.push(mb);
            }
        }
    }
    if batches > 0 {
        let k = batches as f64;
        stats.objective /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.clip_fraction /= k;
    }
    Ok(stats)
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationMetrics {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_len: f64,
    pub mean_inquiries: f64,
    pub top1: Option<f64>,
    pub objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_lr: f64,
    pub eta: f64,
}

/// PPO loop over pretrained models. Returns the trained agent and per-iteration metrics.
pub fn train_agent(
    diagnoser: &Diagnoser,
    vae: &PartialVae,
    data: &DatasetSplit,
    config: &TrainerConfig,
    mut on_iteration: impl FnMut(&IterationMetrics) -> Result<()>,
) -> Result<(Agent, Vec<IterationMetrics>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa9e7);
    let mut agent = match config.variant {
        Variant::NoVae => Agent::plain(vae, diagnoser, &config.agent, &mut rng)?,
        _ => Agent::from_vae(vae, diagnoser, &config.agent, &mut rng)?,
    };
    let encoder_hash = agent.encoder_fingerprint();
    let reward = config.reward();
    let mut optim = Optimizers::default();
    let eval_set = &data.valid[..config.eval_episodes.min(data.valid.len())];
    let mut log = Vec::with_capacity(config.total_iterations);
    for iter in 0..config.total_iterations {
        let schedule = decay_schedules(iter, config);
        let rollout = collect_rollouts(&agent, &data.train, diagnoser, vae, &reward, config.max_turns, config.rollout_size, &mut rng)?;
        let rewards: Vec<f64> = rollout.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = rollout.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = rollout.transitions.iter().map(|t| t.done).collect();
        let (mut adv, returns) = compute_gae(&rewards, &values, &dones, config.gamma, config.lambda);
        if config.normalize_advantages {
            normalize(&mut adv);
        }
        let stats = ppo_update(&mut agent, &mut optim, &rollout.transitions, &adv, &returns, config, schedule, &mut rng, None)?;
        if agent.encoder_fingerprint() != encoder_hash {
            return Err(Error::Divergence("frozen encoder parameters changed during training".into()));
        }
        let top1 = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate(&agent, diagnoser, vae, eval_set, config.max_turns)?.top1)
        };
        let episodes = rollout.episode_lengths.len() as f64;
        let metrics = IterationMetrics {
            iter,
            mean_reward: rollout.episode_returns.iter().sum::<f64>() / episodes,
            mean_len: rollout.episode_lengths.iter().sum::<usize>() as f64 / episodes,
            mean_inquiries: rollout.episode_inquiries.iter().sum::<usize>() as f64 / episodes,
            top1,
            objective: stats.objective,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            actor_lr: schedule.actor_lr,
            eta: schedule.eta,
        };
        info!(iter, mean_reward = metrics.mean_reward, mean_len = metrics.mean_len, top1 = ?metrics.top1, "ppo iteration");
        on_iteration(&metrics)?;
        log.push(metrics);
    }
    Ok((agent, log))
}

/// Pretrained supervised models for one dataset.
pub struct Pretrained {
    pub diagnoser: Diagnoser,
    pub vae: PartialVae,
}

/// Trains the diagnoser, then the VAE.
pub fn pretrain(kb: &KnowledgeBase, data: &DatasetSplit, config: &TrainerConfig) -> Result<Pretrained> {
    let (diagnoser, _) = train_diagnoser(kb.symptoms().to_vec(), kb.diseases().to_vec(), &data.train, &data.valid, &config.diagnoser)
        .map_err(|e| e.in_stage("train_diagnoser"))?;
    let (vae, _) = train_vae(kb.symptoms().to_vec(), &data.train, &data.valid, &config.vae).map_err(|e| e.in_stage("train_vae"))?;
    Ok(Pretrained { diagnoser, vae })
}

/// Files written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub data_dir: PathBuf,
    pub diagnoser: PathBuf,
    pub vae: PathBuf,
    pub agent: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub test_report: EvalReport,
}

/// Full pipeline: synthesize data, train the diagnoser and VAE, run PPO, evaluate, save everything.
pub fn train(config: &TrainerConfig, kb_path: &Path, out_dir: &Path) -> Result<TrainOutputs> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let kb = load_knowledge_base(kb_path).map_err(|e| e.in_stage("load_knowledge_base"))?;
    let data = generate_dataset(&kb, config.data.n_train, config.data.n_valid, config.data.n_test, config.seed)
        .map_err(|e| e.in_stage("generate_dataset"))?;
    let data_dir = out_dir.join("data");
    write_dataset(&data_dir, &kb, &data).map_err(|e| e.in_stage("generate_dataset"))?;
    let config_path = out_dir.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(config).expect("config serializes"))
        .map_err(|e| Error::io(&config_path, e))?;

    let Pretrained { diagnoser, vae } = pretrain(&kb, &data, config)?;
    let diagnoser_path = out_dir.join("diagnoser.json");
    let vae_path = out_dir.join("vae.json");
    diagnoser.save(&diagnoser_path)?;
    vae.save(&vae_path)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let (agent, _) = train_agent(&diagnoser, &vae, &data, config, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(metrics_file, "{line}").map_err(|e| Error::io(&metrics_path, e))
    })
    .map_err(|e| e.in_stage("ppo"))?;
    let agent_path = out_dir.join("agent.json");
    agent.save(&agent_path)?;

    let test_report = evaluate(&agent, &diagnoser, &vae, &data.test, config.max_turns).map_err(|e| e.in_stage("evaluate"))?;
    let report_path = out_dir.join("report.json");
    test_report.save(&report_path)?;
    Ok(TrainOutputs {
        data_dir,
        diagnoser: diagnoser_path,
        vae: vae_path,
        agent: agent_path,
        metrics: metrics_path,
        report: report_path,
        test_report,
    })
}
