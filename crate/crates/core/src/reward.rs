//! Differential reward shaping.
//!
//! A dialogue ending earns `+1` for a correct final diagnosis and `-1`
//! otherwise. An inquiry earns the change in `KL(one-hot(y) || D(s))` that
//! confirming the symptom causes: the realised change for a positive answer,
//! and for a negative answer the hypothetical change weighted by the VAE's
//! `p(x | x_O)`, minus the length penalty `alpha`.

use serde::{Deserialize, Serialize};

use crate::diagnoser::{Diagnose, DiagnosisDistribution};
use crate::env::{Action, DialogueState};
use crate::error::Result;
use crate::kb::PatientRecord;
use crate::vae::{ObservationSet, PartialVae};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardMode {
    /// KL-differential rewards for every inquiry.
    Differential,
    /// Fixed reward for a positive inquiry and zero for a negative one.
    Constant { positive: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub r_end_correct: f64,
    pub r_end_wrong: f64,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.1,
            r_end_correct: 1.0,
            r_end_wrong: -1.0,
            mode: RewardMode::Differential,
        }
    }
}

/// Source of `p(x | x_O)` and of soft imputations for the final diagnosis.
pub trait Imputer {
    fn conditional_prob(&self, obs: &ObservationSet, target: usize) -> Result<f64>;
    fn impute(&self, obs: &ObservationSet) -> Vec<f64>;
}

impl Imputer for PartialVae {
    fn conditional_prob(&self, obs: &ObservationSet, target: usize) -> Result<f64> {
        PartialVae::conditional_prob(self, obs, target)
    }

    fn impute(&self, obs: &ObservationSet) -> Vec<f64> {
        PartialVae::impute(self, obs)
    }
}

/// `KL(one-hot(true) || dist)`, which reduces to `-ln dist[true]`.
pub fn kl_onehot(true_disease: usize, dist: &DiagnosisDistribution) -> f64 {
    -dist.probs()[true_disease].ln()
}

/// `|KL(y || before) - KL(y || after)|`.
pub fn diff_between(true_disease: usize, before: &DiagnosisDistribution, after: &DiagnosisDistribution) -> f64 {
    (kl_onehot(true_disease, before) - kl_onehot(true_disease, after)).abs()
}

/// Differential effect of moving from `state` to `hypothetical` under the diagnoser.
pub fn diff<D: Diagnose + ?Sized>(
    diagnoser: &D,
    state: &[f64],
    hypothetical: &[f64],
    true_disease: usize,
) -> Result<f64> {
    Ok(diff_between(
        true_disease,
        &diagnoser.predict(state)?,
        &diagnoser.predict(hypothetical)?,
    ))
}

/// Final diagnosis used for the end-of-dialogue reward.
pub fn final_diagnosis<D, I>(state: &DialogueState, diagnoser: &D, imputer: &I) -> Result<DiagnosisDistribution>
where
    D: Diagnose + ?Sized,
    I: Imputer + ?Sized,
{
    diagnoser.predict(&imputer.impute(&state.observations()))
}

/// Reward for the transition `prev --action--> next`.
pub fn shape_reward<D, I>(
    prev: &DialogueState,
    action: Action,
    next: &DialogueState,
    record: &PatientRecord,
    diagnoser: &D,
    imputer: &I,
    config: &RewardConfig,
) -> Result<f64>
where
    D: Diagnose + ?Sized,
    I: Imputer + ?Sized,
{
    let prev_dist = diagnoser.predict(&prev.obs_f64())?;
    shape_reward_from(prev, &prev_dist, action, next, record, diagnoser, imputer, config)
}

/// [`shape_reward`] with the diagnoser's prediction for `prev` already computed.
#[allow(clippy::too_many_arguments)]
pub fn shape_reward_from<D, I>(
    prev: &DialogueState,
    prev_dist: &DiagnosisDistribution,
    action: Action,
    next: &DialogueState,
    record: &PatientRecord,
    diagnoser: &D,
    imputer: &I,
    config: &RewardConfig,
) -> Result<f64>
where
    D: Diagnose + ?Sized,
    I: Imputer + ?Sized,
{
    let symptom = match action {
        Action::Inquire(s) if !next.at_cap() => s,
        _ => {
            let correct = final_diagnosis(next, diagnoser, imputer)?.argmax() == record.disease;
            return Ok(if correct { config.r_end_correct } else { config.r_end_wrong });
        }
    };
    let y = record.disease;
    let positive = record.has(symptom);
    match config.mode {
        RewardMode::Constant { positive: r } => Ok(if positive { r } else { 0.0 }),
        RewardMode::Differential if positive => {
            Ok(diff_between(y, prev_dist, &diagnoser.predict(&next.obs_f64())?))
        }
        RewardMode::Differential => {
            let p = imputer.conditional_prob(&prev.observations(), symptom)?;
            let hypothetical = diagnoser.predict(&prev.with_positive(symptom))?;
            Ok(p * diff_between(y, prev_dist, &hypothetical) - config.alpha)
        }
    }
}
