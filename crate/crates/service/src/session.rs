//! Consultation sessions: the dialogue loop with human answers in place of record lookups.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use dxagent::env::{Action, DialogueState};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::models::ModelBundle;
use crate::store::{SessionStore, StoreError};

/// Number of ranked diseases returned with a diagnosis.
pub const TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown symptom id `{0}`")]
    UnknownSymptom(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] dxagent::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Concluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub symptom: String,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub symptom: String,
    pub answer: YesNo,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// `prob` is renormalised over the returned list; `raw_prob` is the model's probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDisease {
    pub disease: String,
    pub name: String,
    pub prob: f64,
    pub raw_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub reports: Vec<Report>,
    pub state: DialogueState,
    pub history: Vec<HistoryEntry>,
    pub status: SessionStatus,
    /// Symptom index awaiting an answer.
    pub pending: Option<usize>,
    pub diagnosis: Option<Vec<RankedDisease>>,
    pub model_fingerprint: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextInquiry {
    pub symptom: String,
    pub name: String,
}

/// Response body shared by every session endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: SessionStatus,
    pub next: Option<NextInquiry>,
    pub diagnosis: Option<Vec<RankedDisease>>,
    pub turn: usize,
    pub max_turns: usize,
    pub reports: Vec<Report>,
    pub history: Vec<HistoryEntry>,
}

impl SessionView {
    fn of(session: &Session, models: &ModelBundle) -> Self {
        SessionView {
            id: session.id.clone(),
            status: session.status,
            next: session.pending.map(|s| {
                let id = models.diagnoser.symptoms[s].clone();
                NextInquiry { name: id.clone(), symptom: id }
            }),
            diagnosis: session.diagnosis.clone(),
            turn: session.state.turn(),
            max_turns: session.state.max_turns(),
            reports: session.reports.clone(),
            history: session.history.clone(),
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub struct SessionService {
    models: Arc<ModelBundle>,
    store: Arc<dyn SessionStore>,
    fingerprint: String,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl SessionService {
    pub fn new(models: Arc<ModelBundle>, store: Arc<dyn SessionStore>) -> Self {
        SessionService {
            fingerprint: models.agent.fingerprint(),
            models,
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn models(&self) -> &ModelBundle {
        &self.models
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_string()).or_default().clone()
    }

    pub fn create(&self, reports: Vec<Report>) -> Result<SessionView, ServiceError> {
        let mut pairs = Vec::with_capacity(reports.len());
        for r in &reports {
            let idx = self
                .models
                .symptom_index(&r.symptom)
                .ok_or_else(|| ServiceError::UnknownSymptom(r.symptom.clone()))?;
            if pairs.iter().any(|&(s, _)| s == idx) {
                return Err(ServiceError::BadRequest(format!("symptom `{}` reported twice", r.symptom)));
            }
            pairs.push((idx, r.present));
        }
        let state = DialogueState::from_reports(self.models.diagnoser.symptoms.len(), &pairs, self.models.max_turns)?;
        let mut session = Session {
            id: uuid::Uuid::new_v4().to_string(),
            reports,
            state,
            history: Vec::new(),
            status: SessionStatus::Active,
            pending: None,
            diagnosis: None,
            model_fingerprint: self.fingerprint.clone(),
            created_at: now_ms(),
        };
        self.advance(&mut session)?;
        self.store.put(&session)?;
        Ok(SessionView::of(&session, &self.models))
    }

    pub fn answer(&self, id: &str, answer: YesNo) -> Result<SessionView, ServiceError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock();
        let mut session = match self.load(id) {
            Ok(s) => s,
            Err(e) => {
                self.locks.lock().remove(id);
                return Err(e);
            }
        };
        if session.status == SessionStatus::Concluded {
            return Err(ServiceError::Conflict(format!("session `{id}` is concluded")));
        }
        let Some(symptom) = session.pending.take() else {
            return Err(ServiceError::Conflict(format!("session `{id}` has no pending inquiry")));
        };
        session.state.apply_answer(symptom, answer == YesNo::Yes)?;
        session.history.push(HistoryEntry {
            symptom: self.models.diagnoser.symptoms[symptom].clone(),
            answer,
            timestamp: now_ms(),
        });
        self.advance(&mut session)?;
        self.store.put(&session)?;
        Ok(SessionView::of(&session, &self.models))
    }

    pub fn get(&self, id: &str) -> Result<SessionView, ServiceError> {
        Ok(SessionView::of(&self.load(id)?, &self.models))
    }

    pub fn session(&self, id: &str) -> Result<Session, ServiceError> {
        self.load(id)
    }

    pub fn list(&self) -> Result<Vec<String>, ServiceError> {
        Ok(self.store.list()?)
    }

    pub fn delete(&self, id: &str) -> Result<(), ServiceError> {
        let lock = self.lock_for(id);
        let deleted = {
            let _guard = lock.lock();
            self.store.delete(id)?
        };
        self.locks.lock().remove(id);
        if deleted {
            Ok(())
        } else {
            Err(ServiceError::NotFound(id.to_string()))
        }
    }

    fn load(&self, id: &str) -> Result<Session, ServiceError> {
        self.store.get(id)?.ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Runs the greedy actor: sets the next inquiry, or concludes with a diagnosis.
    fn advance(&self, session: &mut Session) -> Result<(), ServiceError> {
        let action = if session.state.at_cap() {
            Action::Terminate
        } else {
            self.models.agent.policy(&session.state)?.greedy()
        };
        match action {
            Action::Inquire(s) => session.pending = Some(s),
            Action::Terminate => {
                let dist = self.models.diagnoser.diagnose_final(&session.state.observations(), &self.models.vae)?;
                let top: Vec<usize> = dist.ranking().into_iter().take(TOP_K).collect();
                let mass: f64 = top.iter().map(|&d| dist.probs()[d]).sum();
                session.diagnosis = Some(
                    top.into_iter()
                        .map(|d| {
                            let id = self.models.diagnoser.diseases[d].clone();
                            RankedDisease {
                                name: id.clone(),
                                disease: id,
                                prob: dist.probs()[d] / mass,
                                raw_prob: dist.probs()[d],
                            }
                        })
                        .collect(),
                );
                session.pending = None;
                session.status = SessionStatus::Concluded;
            }
        }
        Ok(())
    }
}
