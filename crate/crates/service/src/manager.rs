//! Session registry with single-writer access per session.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Result, ServiceError};
use crate::session::{CreateSession, Event, ObservationInput, Proposal, Session, SessionSummary, Status};
use crate::store::{self, LogFile, LOG_EXTENSION};

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn new_token() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

struct Writer {
    session: Session,
    log: LogFile,
}

struct Slot {
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Session>>,
}

impl Slot {
    fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

/// A log that could not be loaded at startup.
#[derive(Debug, Clone)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

pub struct SessionManager {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    skipped: Vec<Skipped>,
}

impl SessionManager {
    /// Load every session log in `data_dir`, creating the directory if needed.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir).map_err(|source| ServiceError::Storage {
            path: data_dir.clone(),
            source,
        })?;
        let mut paths: Vec<PathBuf> = fs::read_dir(&data_dir)
            .map_err(|source| ServiceError::Storage {
                path: data_dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == LOG_EXTENSION))
            .collect();
        paths.sort();

        let mut sessions = HashMap::new();
        let mut skipped = Vec::new();
        for path in paths {
            match Self::load(&path) {
                Ok(slot) => {
                    let id = slot.snapshot().id.clone();
                    sessions.insert(id, Arc::new(slot));
                }
                Err(e) => {
                    tracing::warn!(path = %path.display(), error = %e, "skipping session log");
                    skipped.push(Skipped {
                        path,
                        reason: e.to_string(),
                    });
                }
            }
        }
        Ok(SessionManager {
            data_dir,
            sessions: RwLock::new(sessions),
            skipped,
        })
    }

    fn load(path: &Path) -> Result<Slot> {
        let events = store::load(path)?;
        let mut session = Session::replay(&events).map_err(|(k, e)| ServiceError::CorruptLog {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        let expected = store::log_path(path.parent().unwrap_or(Path::new(".")), &session.id);
        if expected != path {
            return Err(ServiceError::CorruptLog {
                path: path.to_path_buf(),
                line: 1,
                message: format!("session id `{}` does not match the file name", session.id),
            });
        }
        let mut log = LogFile::open(path)?;
        // a crash between an entry and its follow-up proposal leaves none pending
        if let Some(ev) = Self::missing_proposal(&session) {
            session.apply(ev.clone())?;
            log.append(&[ev])?;
        }
        Ok(Slot {
            snapshot: RwLock::new(Arc::new(session.clone())),
            writer: Mutex::new(Writer { session, log }),
        })
    }

    fn missing_proposal(session: &Session) -> Option<Event> {
        (session.status == Status::Active && session.proposal.is_none()).then(|| Event::Proposed {
            token: new_token(),
            step: session.state.step(),
            x: session.state.x(),
            at: now_ms(),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn skipped(&self) -> &[Skipped] {
        &self.skipped
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn insert(&self, events: Vec<Event>) -> Result<Arc<Session>> {
        let session = Session::replay(&events).map_err(|(_, e)| e)?;
        let mut registry = self.sessions.write().expect("registry lock");
        if registry.contains_key(&session.id) {
            return Err(ServiceError::AlreadyExists(session.id));
        }
        let path = store::log_path(&self.data_dir, &session.id);
        let log = LogFile::create(&path, &events).map_err(|e| match e {
            ServiceError::Storage { source, .. } if source.kind() == std::io::ErrorKind::AlreadyExists => {
                ServiceError::AlreadyExists(session.id.clone())
            }
            e => e,
        })?;
        let snapshot = Arc::new(session.clone());
        registry.insert(
            session.id.clone(),
            Arc::new(Slot {
                snapshot: RwLock::new(snapshot.clone()),
                writer: Mutex::new(Writer { session, log }),
            }),
        );
        Ok(snapshot)
    }

    pub fn create(&self, req: &CreateSession) -> Result<Arc<Session>> {
        let config = req.to_config()?;
        let at = now_ms();
        let mut events = vec![Event::Created {
            id: uuid::Uuid::new_v4().simple().to_string(),
            method: req.method,
            config,
            entry_unit: req.entry_unit,
            at,
        }];
        let session = Session::replay(&events).map_err(|(_, e)| e)?;
        events.extend(Self::missing_proposal(&session));
        self.insert(events)
    }

    /// Create a session from an exported log. The id in the log is kept.
    pub fn import(&self, jsonl: &str) -> Result<Arc<Session>> {
        let path = Path::new("<import>");
        let mut text = jsonl.to_string();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        let (mut events, valid) = store::decode(path, &text)?;
        if valid < text.len() {
            return Err(ServiceError::CorruptLog {
                path: path.to_path_buf(),
                line: events.len() + 1,
                message: "unparsable event".into(),
            });
        }
        let session = Session::replay(&events).map_err(|(k, e)| ServiceError::CorruptLog {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        if session.id.is_empty() || !session.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ServiceError::invalid("id", "session id must be alphanumeric"));
        }
        events.extend(Self::missing_proposal(&session));
        self.insert(events)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>> {
        Ok(self.slot(id)?.snapshot())
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let mut out: Vec<SessionSummary> = self
            .sessions
            .read()
            .expect("registry lock")
            .values()
            .map(|s| s.snapshot().summary())
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// The pending proposal; re-reads return the same value.
    pub fn next(&self, id: &str) -> Result<Proposal> {
        let s = self.get(id)?;
        s.require_active()?;
        s.proposal
            .clone()
            .ok_or_else(|| ServiceError::invalid("proposal", "no pending proposal"))
    }

    fn mutate<F>(&self, id: &str, build: F) -> Result<Arc<Session>>
    where
        F: FnOnce(&Session) -> Result<Vec<Event>>,
    {
        let slot = self.slot(id)?;
        let mut w = slot.writer.lock().expect("writer lock");
        let events = build(&w.session)?;
        let mut next = w.session.clone();
        for e in &events {
            next.apply(e.clone())?;
        }
        let mut events = events;
        if let Some(p) = Self::missing_proposal(&next) {
            next.apply(p.clone())?;
            events.push(p);
        }
        w.log.append(&events)?;
        w.session = next;
        let snap = Arc::new(w.session.clone());
        *slot.snapshot.write().expect("snapshot lock") = snap.clone();
        Ok(snap)
    }

    fn check_token(session: &Session, token: &str) -> Result<()> {
        session.require_active()?;
        match &session.proposal {
            Some(p) if p.token == token => Ok(()),
            _ => Err(ServiceError::StaleProposal),
        }
    }

    /// Record an entry against the current proposal.
    pub fn observe(&self, id: &str, input: &ObservationInput) -> Result<Arc<Session>> {
        self.mutate(id, |s| {
            Self::check_token(s, &input.proposal_token)?;
            let (observation, entered) = s.convert(input)?;
            Ok(vec![Event::Observed {
                token: input.proposal_token.clone(),
                observation,
                entered,
                at: now_ms(),
            }])
        })
    }

    /// Drop the last entry. With a token, only if it is still current.
    pub fn undo(&self, id: &str, token: Option<&str>) -> Result<Arc<Session>> {
        self.mutate(id, |s| {
            match token {
                Some(t) => Self::check_token(s, t)?,
                None => s.require_active()?,
            }
            if s.observations.is_empty() {
                return Err(ServiceError::NothingToUndo);
            }
            Ok(vec![Event::Undone { at: now_ms() }])
        })
    }

    pub fn close(&self, id: &str, status: Status) -> Result<Arc<Session>> {
        self.mutate(id, |s| {
            s.require_active()?;
            Ok(vec![Event::Closed { status, at: now_ms() }])
        })
    }

    pub fn events_jsonl(&self, id: &str) -> Result<String> {
        Ok(store::encode(&self.get(id)?.events))
    }

    pub fn trace_csv(&self, id: &str) -> Result<String> {
        Ok(self.get(id)?.trace().to_csv(false))
    }
}
