//! Dialogue episode simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::PatientRecord;
use crate::vae::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Inquire(usize),
    Terminate,
}

impl Action {
    /// Position in the `N_S + 1` action space; terminate is last.
    pub fn index(self, num_symptoms: usize) -> usize {
        match self {
            Action::Inquire(i) => i,
            Action::Terminate => num_symptoms,
        }
    }

    pub fn from_index(index: usize, num_symptoms: usize) -> Self {
        if index >= num_symptoms {
            Action::Terminate
        } else {
            Action::Inquire(index)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Positive,
    Negative,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub done: bool,
    pub answer: Answer,
}

/// Observation vector in `{+1, 0, -1}^N_S` plus inquiry bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    obs: Vec<i8>,
    /// Inquired symptoms in order.
    asked: Vec<usize>,
    /// Symptoms known before the first inquiry.
    initial: Vec<usize>,
    turn: usize,
    max_turns: usize,
}

impl DialogueState {
    /// Start of an episode: only the self-reported symptom is known.
    pub fn reset(record: &PatientRecord, num_symptoms: usize, max_turns: usize) -> Self {
        let mut obs = vec![0; num_symptoms];
        obs[record.self_report] = 1;
        DialogueState {
            obs,
            asked: Vec::new(),
            initial: vec![record.self_report],
            turn: 0,
            max_turns,
        }
    }

    /// Start from an arbitrary list of reported `(symptom, present)` pairs.
    pub fn from_reports(num_symptoms: usize, reports: &[(usize, bool)], max_turns: usize) -> Result<Self> {
        let mut obs = vec![0; num_symptoms];
        let mut initial = Vec::with_capacity(reports.len());
        for &(s, present) in reports {
            if s >= num_symptoms {
                return Err(Error::Usage(format!("symptom {s} out of range")));
            }
            if obs[s] != 0 {
                return Err(Error::Usage(format!("symptom {s} reported twice")));
            }
            obs[s] = if present { 1 } else { -1 };
            initial.push(s);
        }
        Ok(DialogueState {
            obs,
            asked: Vec::new(),
            initial,
            turn: 0,
            max_turns,
        })
    }

    pub fn obs(&self) -> &[i8] {
        &self.obs
    }

    pub fn obs_f64(&self) -> Vec<f64> {
        self.obs.iter().map(|&v| v as f64).collect()
    }

    pub fn observations(&self) -> ObservationSet {
        ObservationSet::from_state(&self.obs)
    }

    pub fn asked(&self) -> &[usize] {
        &self.asked
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns
    }

    pub fn num_symptoms(&self) -> usize {
        self.obs.len()
    }

    /// `turn / N_T`.
    pub fn turn_ratio(&self) -> f64 {
        if self.max_turns == 0 {
            1.0
        } else {
            self.turn as f64 / self.max_turns as f64
        }
    }

    pub fn at_cap(&self) -> bool {
        self.turn >= self.max_turns
    }

    /// Length `N_S + 1`: unasked symptoms while under the cap, and terminate.
    pub fn legal_mask(&self) -> Vec<bool> {
        let open = !self.at_cap();
        let mut mask: Vec<bool> = self.obs.iter().map(|&v| open && v == 0).collect();
        mask.push(true);
        mask
    }

    pub fn is_legal(&self, action: Action) -> bool {
        match action {
            Action::Terminate => true,
            Action::Inquire(i) => i < self.obs.len() && !self.at_cap() && self.obs[i] == 0,
        }
    }

    /// Copy with `symptom` set to present, for counterfactual scoring.
    pub fn with_positive(&self, symptom: usize) -> Vec<f64> {
        let mut v = self.obs_f64();
        v[symptom] = 1.0;
        v
    }

    /// Records the answer to an inquiry; returns whether the turn cap is now reached.
    pub fn apply_answer(&mut self, symptom: usize, present: bool) -> Result<bool> {
        if !self.is_legal(Action::Inquire(symptom)) {
            return Err(Error::Usage(format!(
                "illegal inquiry of symptom {symptom} at turn {}/{}",
                self.turn, self.max_turns
            )));
        }
        self.obs[symptom] = if present { 1 } else { -1 };
        self.asked.push(symptom);
        self.turn += 1;
        Ok(self.at_cap())
    }
}

/// Advances the episode, answering inquiries from the patient record.
pub fn step(state: &mut DialogueState, action: Action, record: &PatientRecord) -> Result<StepResult> {
    match action {
        Action::Terminate => Ok(StepResult {
            done: true,
            answer: Answer::None,
        }),
        Action::Inquire(i) => {
            let present = record.has(i);
            let done = state.apply_answer(i, present)?;
            Ok(StepResult {
                done,
                answer: if present { Answer::Positive } else { Answer::Negative },
            })
        }
    }
}

/// Debug log of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<TrajectoryTurn>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTurn {
    pub action: Action,
    pub answer: Answer,
}
