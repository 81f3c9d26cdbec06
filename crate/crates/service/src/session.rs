//! Session state rebuilt from an append-only event list.

use ibrm_core::sequence::{replay, step, StepReport};
use ibrm_core::{Method, Observation, Outcome, Prior, ResponseMode, SequenceConfig, SequenceState, StepRecord, TrialTrace};
use ibrm_core::{CDecay, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// Unit of analog entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryUnit {
    /// Peak-to-peak amplitude in µV; the service takes the natural log.
    #[default]
    Uv,
    /// Natural log of the amplitude in µV.
    LnUv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Completed,
    Aborted,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::Completed => "completed",
            Status::Aborted => "aborted",
        }
    }
}

/// Body of `POST /sessions`: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub c_decay: Option<CDecay>,
    #[serde(default)]
    pub prior: Option<Prior>,
    #[serde(default)]
    pub y_target: Option<f64>,
    #[serde(default)]
    pub x_min: Option<f64>,
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default)]
    pub x_start: Option<f64>,
    #[serde(default)]
    pub entry_unit: EntryUnit,
}

fn default_method() -> Method {
    Method::AcsU
}

impl Default for CreateSession {
    fn default() -> Self {
        CreateSession {
            method: default_method(),
            s: None,
            c: None,
            gamma: None,
            c_decay: None,
            prior: None,
            y_target: None,
            x_min: None,
            x_max: None,
            x_start: None,
            entry_unit: EntryUnit::default(),
        }
    }
}

impl CreateSession {
    pub fn to_config(&self) -> Result<SequenceConfig> {
        let mut cfg = self.method.config();
        cfg.s = self.s.unwrap_or(cfg.s);
        cfg.c = self.c.unwrap_or(cfg.c);
        cfg.gamma = self.gamma.unwrap_or(cfg.gamma);
        cfg.c_decay = self.c_decay.unwrap_or(cfg.c_decay);
        cfg.prior = self.prior.unwrap_or(cfg.prior);
        cfg.y_target = self.y_target.unwrap_or(cfg.y_target);
        cfg.x_min = self.x_min.unwrap_or(cfg.x_min);
        cfg.x_max = self.x_max.unwrap_or(cfg.x_max);
        cfg.x_start = self.x_start;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Body of `POST /sessions/{id}/observations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationInput {
    pub proposal_token: String,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub outcome: Option<Outcome>,
    /// Overrides the session's entry unit for this value.
    #[serde(default)]
    pub unit: Option<EntryUnit>,
}

/// What the operator typed, kept for the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entered {
    pub value: f64,
    pub unit: EntryUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub token: String,
    pub step: usize,
    pub x: f64,
}

/// One line of a session log. `at` is milliseconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        method: Method,
        config: SequenceConfig,
        entry_unit: EntryUnit,
        at: u64,
    },
    Proposed {
        token: String,
        step: usize,
        x: f64,
        at: u64,
    },
    Observed {
        token: String,
        observation: Observation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        entered: Option<Entered>,
        at: u64,
    },
    Undone {
        at: u64,
    },
    Closed {
        status: Status,
        at: u64,
    },
}

impl Event {
    pub fn at(&self) -> u64 {
        match self {
            Event::Created { at, .. }
            | Event::Proposed { at, .. }
            | Event::Observed { at, .. }
            | Event::Undone { at }
            | Event::Closed { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub method: Method,
    pub config: SequenceConfig,
    pub entry_unit: EntryUnit,
    pub status: Status,
    pub state: SequenceState,
    pub proposal: Option<Proposal>,
    pub observations: Vec<Observation>,
    pub reports: Vec<StepReport>,
    pub created_at: u64,
    pub updated_at: u64,
    pub events: Vec<Event>,
}

impl Session {
    /// Rebuild a session from its log.
    pub fn replay(events: &[Event]) -> std::result::Result<Session, (usize, ServiceError)> {
        let (first, rest) = events
            .split_first()
            .ok_or((0, ServiceError::invalid("events", "empty log")))?;
        let mut session = Session::from_created(first).map_err(|e| (0, e))?;
        for (k, ev) in rest.iter().enumerate() {
            session.apply(ev.clone()).map_err(|e| (k + 1, e))?;
        }
        Ok(session)
    }

    fn from_created(event: &Event) -> Result<Session> {
        let Event::Created {
            id,
            method,
            config,
            entry_unit,
            at,
        } = event
        else {
            return Err(ServiceError::invalid("events", "log must start with a `created` event"));
        };
        Ok(Session {
            id: id.clone(),
            method: *method,
            config: *config,
            entry_unit: *entry_unit,
            status: Status::Active,
            state: SequenceState::new(config)?,
            proposal: None,
            observations: Vec::new(),
            reports: Vec::new(),
            created_at: *at,
            updated_at: *at,
            events: vec![event.clone()],
        })
    }

    /// Apply one event, validating it against the current state.
    pub fn apply(&mut self, event: Event) -> Result<()> {
        match &event {
            Event::Created { .. } => {
                return Err(ServiceError::invalid("events", "duplicate `created` event"));
            }
            Event::Proposed { step, x, .. } => {
                self.require_active()?;
                if self.proposal.is_some() {
                    return Err(ServiceError::invalid("events", "proposal already pending"));
                }
                if *step != self.state.step() || x.to_bits() != self.state.x().to_bits() {
                    return Err(ServiceError::invalid(
                        "events",
                        format!(
                            "proposal ({step}, {x}) disagrees with the engine ({}, {})",
                            self.state.step(),
                            self.state.x()
                        ),
                    ));
                }
            }
            Event::Observed { token, observation, .. } => {
                self.require_active()?;
                match &self.proposal {
                    Some(p) if &p.token == token => {}
                    _ => return Err(ServiceError::StaleProposal),
                }
                let report = step(&mut self.state, &self.config, *observation)?;
                self.reports.push(report);
                self.observations.push(*observation);
            }
            Event::Undone { .. } => {
                self.require_active()?;
                if self.observations.is_empty() {
                    return Err(ServiceError::NothingToUndo);
                }
                let kept = &self.observations[..self.observations.len() - 1];
                self.state = replay(&self.config, kept)?;
                self.observations.pop();
                self.reports.pop();
            }
            Event::Closed { status, .. } => {
                self.require_active()?;
                if *status == Status::Active {
                    return Err(ServiceError::invalid("status", "cannot close to `active`"));
                }
            }
        }
        match &event {
            Event::Proposed { token, step, x, .. } => {
                self.proposal = Some(Proposal {
                    token: token.clone(),
                    step: *step,
                    x: *x,
                });
            }
            Event::Observed { .. } | Event::Undone { .. } => self.proposal = None,
            Event::Closed { status, .. } => {
                self.status = *status;
                self.proposal = None;
            }
            Event::Created { .. } => unreachable!(),
        }
        self.updated_at = self.updated_at.max(event.at());
        self.events.push(event);
        Ok(())
    }

    pub fn require_active(&self) -> Result<()> {
        if self.status == Status::Active {
            Ok(())
        } else {
            Err(ServiceError::NotActive(self.status.name()))
        }
    }

    /// Turn an operator entry into an engine observation.
    pub fn convert(&self, input: &ObservationInput) -> Result<(Observation, Option<Entered>)> {
        match self.config.response_mode {
            ResponseMode::Analog => {
                if input.outcome.is_some() {
                    return Err(ServiceError::invalid("outcome", "this session expects an analog `value`"));
                }
                let value = input
                    .value
                    .ok_or_else(|| ServiceError::invalid("value", "an analog `value` is required"))?;
                if !value.is_finite() {
                    return Err(ServiceError::invalid("value", "must be finite"));
                }
                let unit = input.unit.unwrap_or(self.entry_unit);
                let y = match unit {
                    EntryUnit::Uv if value > 0.0 => value.ln(),
                    EntryUnit::Uv => return Err(ServiceError::invalid("value", "µV amplitude must be positive")),
                    EntryUnit::LnUv => value,
                };
                Ok((Observation::Analog(y), Some(Entered { value, unit })))
            }
            ResponseMode::Binary => {
                if input.value.is_some() {
                    return Err(ServiceError::invalid("value", "this session expects a binary `outcome`"));
                }
                let outcome = input
                    .outcome
                    .ok_or_else(|| ServiceError::invalid("outcome", "`outcome` is required"))?;
                Ok((Observation::Binary(outcome), None))
            }
        }
    }

    /// Full history as a trace; `dx` is unknown live.
    pub fn trace(&self) -> TrialTrace {
        let mut records: Vec<StepRecord> = self
            .reports
            .iter()
            .zip(&self.observations)
            .map(|(r, obs)| StepRecord {
                step: r.step,
                x: r.x_before,
                dx: None,
                observation: Some(*obs),
                equivalent_step: r.equivalent_step,
                clamped: r.clamped,
            })
            .collect();
        records.push(StepRecord {
            step: self.state.step(),
            x: self.state.x(),
            dx: None,
            observation: None,
            equivalent_step: None,
            clamped: false,
        });
        TrialTrace {
            variant: self.method.label().to_string(),
            records,
            ..TrialTrace::default()
        }
    }

    pub fn view(&self) -> SessionView {
        let belief = self.state.belief().filter(|b| b.count() > 0).map(|b| {
            let mean = b.mean().unwrap_or(f64::NAN);
            let (precision, sd) = match self.config.prior.normal_precision() {
                Some(w) => (b.precision() + w, (b.precision() + w).recip().sqrt()),
                None => (b.precision(), b.precision().recip().sqrt()),
            };
            BeliefView {
                mean,
                sd,
                precision,
                count: b.count(),
                map: self.state.x(),
            }
        });
        SessionView {
            id: self.id.clone(),
            method: self.method,
            status: self.status,
            config: self.config,
            entry_unit: self.entry_unit,
            step: self.state.step(),
            x: self.state.x(),
            proposal: self.proposal.clone(),
            belief,
            history: self
                .reports
                .iter()
                .zip(&self.observations)
                .map(|(r, o)| HistoryView {
                    step: r.step,
                    x: r.x_before,
                    observation: *o,
                    x_next: r.x_after,
                })
                .collect(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            method: self.method,
            status: self.status,
            step: self.state.step(),
            x: self.state.x(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }

    pub fn is_iterative(&self) -> bool {
        self.config.variant == Variant::IterativeBayesian
    }
}

/// Gaussian belief summary for IBRM sessions. `precision` and `sd` include
/// a normal prior when there is one; `mean` is the mean of the RM product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefView {
    pub mean: f64,
    pub sd: f64,
    pub precision: f64,
    pub count: u64,
    /// Current MAP, identical to the proposal.
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub step: usize,
    pub x: f64,
    pub observation: Observation,
    pub x_next: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub method: Method,
    pub status: Status,
    pub config: SequenceConfig,
    pub entry_unit: EntryUnit,
    pub step: usize,
    pub x: f64,
    pub proposal: Option<Proposal>,
    pub belief: Option<BeliefView>,
    pub history: Vec<HistoryView>,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub method: Method,
    pub status: Status,
    pub step: usize,
    pub x: f64,
    pub created_at: u64,
    pub updated_at: u64,
}
