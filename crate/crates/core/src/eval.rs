//! Greedy evaluation, baselines, and ablations.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::diagnoser::{encode_full, Diagnose, Diagnoser};
use crate::env::{step, Action, Answer, DialogueState};
use crate::error::{Error, Result};
use crate::kb::{DatasetSplit, PatientRecord};
use crate::ppo::{train_agent, TrainerConfig, Variant};
use crate::vae::PartialVae;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub disease: usize,
    pub predicted: usize,
    pub inquiries: Vec<(usize, Answer)>,
}

/// Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub avg_inquiries: f64,
    pub n_episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<Vec<EpisodeLog>>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Default)]
struct Tally {
    ranks: Vec<usize>,
    inquiries: usize,
    episodes: Vec<EpisodeLog>,
}

impl Tally {
    fn report(self, keep_episodes: bool, fingerprint: Option<String>) -> EvalReport {
        let n = self.ranks.len();
        let pct = |k: usize| {
            if n == 0 {
                0.0
            } else {
                100.0 * self.ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64
            }
        };
        EvalReport {
            top1: pct(1),
            top3: pct(3),
            top5: pct(5),
            avg_inquiries: if n == 0 { 0.0 } else { self.inquiries as f64 / n as f64 },
            n_episodes: n,
            agent_fingerprint: fingerprint,
            episodes: keep_episodes.then_some(self.episodes),
        }
    }
}

/// Runs one dialogue with `choose`, then makes the imputed final diagnosis.
fn run_episode(
    record: &PatientRecord,
    diagnoser: &Diagnoser,
    vae: &PartialVae,
    max_turns: usize,
    mut choose: impl FnMut(&DialogueState) -> Result<Action>,
    tally: &mut Tally,
) -> Result<()> {
    let mut state = DialogueState::reset(record, diagnoser.num_symptoms(), max_turns);
    let mut inquiries = Vec::new();
    loop {
        let action = choose(&state)?;
        let result = step(&mut state, action, record)?;
        if let Action::Inquire(s) = action {
            inquiries.push((s, result.answer));
        }
        if result.done {
            break;
        }
    }
    let dist = diagnoser.diagnose_final(&state.observations(), vae)?;
    tally.ranks.push(dist.rank_of(record.disease));
    tally.inquiries += state.turn();
    tally.episodes.push(EpisodeLog {
        disease: record.disease,
        predicted: dist.argmax(),
        inquiries,
    });
    Ok(())
}

/// Greedy rollouts of `agent` over `records`.
pub fn evaluate(agent: &Agent, diagnoser: &Diagnoser, vae: &PartialVae, records: &[PatientRecord], max_turns: usize) -> Result<EvalReport> {
    evaluate_with_episodes(agent, diagnoser, vae, records, max_turns, false)
}

pub fn evaluate_with_episodes(
    agent: &Agent,
    diagnoser: &Diagnoser,
    vae: &PartialVae,
    records: &[PatientRecord],
    max_turns: usize,
    keep_episodes: bool,
) -> Result<EvalReport> {
    diagnoser.check_compatible(vae)?;
    if agent.symptoms != diagnoser.symptoms || agent.diseases != diagnoser.diseases {
        return Err(Error::Compatibility("agent and diagnoser disagree on symptom/disease orderings".into()));
    }
    let mut tally = Tally::default();
    for record in records {
        run_episode(record, diagnoser, vae, max_turns, |s| Ok(agent.policy(s)?.greedy()), &mut tally)?;
    }
    Ok(tally.report(keep_episodes, Some(agent.fingerprint())))
}

/// Inquires `min(budget, max_turns)` uniformly random unasked symptoms, then diagnoses.
pub fn baseline_random(
    diagnoser: &Diagnoser,
    vae: &PartialVae,
    records: &[PatientRecord],
    budget: usize,
    max_turns: usize,
    seed: u64,
) -> Result<EvalReport> {
    diagnoser.check_compatible(vae)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for record in records {
        run_episode(
            record,
            diagnoser,
            vae,
            max_turns,
            |s| {
                if s.turn() >= budget {
                    return Ok(Action::Terminate);
                }
                let mask = s.legal_mask();
                let open: Vec<usize> = (0..s.num_symptoms()).filter(|&i| mask[i]).collect();
                Ok(open.choose(&mut rng).map_or(Action::Terminate, |&i| Action::Inquire(i)))
            },
            &mut tally,
        )?;
    }
    Ok(tally.report(false, None))
}

/// Diagnoser accuracy with every symptom observed; `avg_inquiries` is `N_S`.
pub fn baseline_full_observation(diagnoser: &Diagnoser, records: &[PatientRecord]) -> Result<EvalReport> {
    let n = diagnoser.num_symptoms();
    let mut tally = Tally::default();
    for record in records {
        let dist = diagnoser.predict(&encode_full(record, n))?;
        tally.ranks.push(dist.rank_of(record.disease));
        tally.inquiries += n;
    }
    Ok(tally.report(false, None))
}

/// Trains `variant` on shared pretrained models and evaluates it on `data.test`.
pub fn run_ablation(
    variant: Variant,
    diagnoser: &Diagnoser,
    vae: &PartialVae,
    data: &DatasetSplit,
    config: &TrainerConfig,
) -> Result<(Agent, EvalReport)> {
    let config = TrainerConfig { variant, ..config.clone() };
    let (agent, _) = train_agent(diagnoser, vae, data, &config, |_| Ok(()))?;
    let report = evaluate(&agent, diagnoser, vae, &data.test, config.max_turns)?;
    Ok((agent, report))
}

/// Budget used for the random baseline: the agent's mean inquiry count, rounded up.
pub fn matched_budget(report: &EvalReport) -> usize {
    report.avg_inquiries.ceil() as usize
}
