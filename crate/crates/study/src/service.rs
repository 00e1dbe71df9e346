//! Study state rebuilt from the event log, and the operations behind the
//! HTTP endpoints.

use std::collections::HashMap;
use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Result, StudyError};
use crate::events::{Event, EventLog};
use crate::protocol::{resolve, trial_order, Source, StudySpec, Trial, Verdict};

const MAX_ALIAS: usize = 100;

struct Study {
    id: Uuid,
    name: String,
    sources: Vec<Source>,
    trials_per_session: usize,
    created_at: u64,
    sessions: Vec<Uuid>,
}

struct Session {
    id: Uuid,
    study: Uuid,
    alias: String,
    trials: Vec<Trial>,
    /// Judgments in trial order; the next pending trial is `verdicts.len()`.
    verdicts: Vec<Verdict>,
}

impl Session {
    fn complete(&self) -> bool {
        self.verdicts.len() == self.trials.len()
    }

    fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id,
            study_id: self.study,
            alias: self.alias.clone(),
            total: self.trials.len(),
            judged: self.verdicts.len(),
            complete: self.complete(),
        }
    }
}

/// What a study looks like from outside; source labels are withheld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyInfo {
    pub id: Uuid,
    pub name: String,
    pub sources: usize,
    pub trials_per_session: usize,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: Uuid,
    pub study_id: Uuid,
    pub alias: String,
    pub total: usize,
    pub judged: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialImage {
    pub trial_id: Uuid,
    /// 1-based position in the session.
    pub number: usize,
    pub total: usize,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentAck {
    pub trial_id: Uuid,
    pub number: usize,
    pub judged: usize,
    pub total: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRate {
    pub label: String,
    pub judged: usize,
    pub judged_real: usize,
    /// Percentage of judged trials from this source answered "real".
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRow {
    pub session_id: Uuid,
    pub alias: String,
    pub judged: usize,
    pub total: usize,
    pub complete: bool,
    pub real_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study_id: Uuid,
    pub name: String,
    /// Whether judgments of unfinished sessions are counted in `sources`.
    pub includes_incomplete: bool,
    pub sources: Vec<SourceRate>,
    pub respondents: Vec<RespondentRow>,
    /// Mean of the per-source rates that are defined.
    pub average_rate: Option<f64>,
}

fn percent(k: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| 100.0 * k as f64 / n as f64)
}

impl fmt::Display for StudyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_rate = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.2}%"));
        writeln!(f, "study {} ({})", self.name, self.study_id)?;
        let width = self.sources.iter().map(|s| s.label.chars().count()).max().unwrap_or(6).max(6);
        writeln!(f, "{:<width$}  {:>7}  {:>6}  {:>8}", "source", "judged", "real", "rate")?;
        for s in &self.sources {
            writeln!(f, "{:<width$}  {:>7}  {:>6}  {:>8}", s.label, s.judged, s.judged_real, fmt_rate(s.rate))?;
        }
        writeln!(f, "average judged-real rate: {}", fmt_rate(self.average_rate))?;
        let done = self.respondents.iter().filter(|r| r.complete).count();
        write!(f, "respondents: {} ({} complete)", self.respondents.len(), done)?;
        if !self.includes_incomplete {
            write!(f, "; rates count completed sessions only")?;
        }
        Ok(())
    }
}

struct Inner {
    log: EventLog,
    studies: HashMap<Uuid, Study>,
    sessions: HashMap<Uuid, Session>,
}

impl Inner {
    /// Applies an event already known to be valid.
    fn apply(&mut self, event: Event) {
        match event {
            Event::StudyCreated { id, name, sources, trials_per_session, created_at } => {
                self.studies.insert(id, Study { id, name, sources, trials_per_session, created_at, sessions: Vec::new() });
            }
            Event::SessionOpened { id, study, alias, trials, .. } => {
                self.studies.get_mut(&study).expect("validated").sessions.push(id);
                self.sessions.insert(id, Session { id, study, alias, trials, verdicts: Vec::new() });
            }
            Event::Judged { session, verdict, .. } => {
                self.sessions.get_mut(&session).expect("validated").verdicts.push(verdict);
            }
        }
    }

    fn check(&self, event: &Event) -> Result<()> {
        match event {
            Event::StudyCreated { id, .. } if self.studies.contains_key(id) => {
                Err(StudyError::Conflict(format!("study {id} already exists")))
            }
            Event::StudyCreated { .. } => Ok(()),
            Event::SessionOpened { id, study, trials, .. } => {
                let s = self.studies.get(study).ok_or_else(|| StudyError::NotFound(format!("no study {study}")))?;
                if self.sessions.contains_key(id) {
                    return Err(StudyError::Conflict(format!("session {id} already exists")));
                }
                if trials.iter().any(|t| t.source >= s.sources.len()) {
                    return Err(StudyError::Invalid(format!("session {id} references a missing source")));
                }
                Ok(())
            }
            Event::Judged { session, trial, .. } => {
                let s = self.sessions.get(session).ok_or_else(|| StudyError::NotFound(format!("no session {session}")))?;
                let pos = s
                    .trials
                    .iter()
                    .position(|t| t.id == *trial)
                    .ok_or_else(|| StudyError::NotFound(format!("session {session} has no trial {trial}")))?;
                if pos < s.verdicts.len() {
                    Err(StudyError::Conflict(format!("trial {} was already judged", pos + 1)))
                } else if pos > s.verdicts.len() {
                    Err(StudyError::Precondition(format!(
                        "trial {} is not current; trial {} is pending",
                        pos + 1,
                        s.verdicts.len() + 1
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Validates, persists, then applies.
    fn commit(&mut self, event: Event) -> Result<()> {
        self.check(&event)?;
        self.log.append(&event)?;
        self.apply(event);
        Ok(())
    }

    fn session(&self, id: Uuid) -> Result<&Session> {
        self.sessions.get(&id).ok_or_else(|| StudyError::NotFound(format!("no session {id}")))
    }

    fn study(&self, id: Uuid) -> Result<&Study> {
        self.studies.get(&id).ok_or_else(|| StudyError::NotFound(format!("no study {id}")))
    }
}

/// All studies and sessions behind one lock. Writes go through the event
/// log in the order they are accepted.
pub struct StudyService {
    inner: Mutex<Inner>,
}

impl StudyService {
    /// Opens the log at `path`, replaying any existing events.
    pub fn open(path: &Path) -> Result<Self> {
        let (log, events) = EventLog::open(path)?;
        let mut inner = Inner { log, studies: HashMap::new(), sessions: HashMap::new() };
        for (i, event) in events.into_iter().enumerate() {
            inner.check(&event).map_err(|e| StudyError::Log {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            inner.apply(event);
        }
        Ok(Self { inner: Mutex::new(inner) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_study(&self, spec: &StudySpec) -> Result<StudyInfo> {
        let (sources, trials_per_session) = resolve(spec)?;
        let id = Uuid::new_v4();
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let info =
            StudyInfo { id, name: spec.name.clone(), sources: sources.len(), trials_per_session, created_at };
        self.lock().commit(Event::StudyCreated { id, name: spec.name.clone(), sources, trials_per_session, created_at })?;
        Ok(info)
    }

    pub fn studies(&self) -> Vec<StudyInfo> {
        let inner = self.lock();
        let mut out: Vec<StudyInfo> = inner
            .studies
            .values()
            .map(|s| StudyInfo {
                id: s.id,
                name: s.name.clone(),
                sources: s.sources.len(),
                trials_per_session: s.trials_per_session,
                created_at: s.created_at,
            })
            .collect();
        out.sort_by_key(|a| (a.created_at, a.id));
        out
    }

    pub fn open_session(&self, study: Uuid, alias: &str, seed: u64) -> Result<SessionInfo> {
        let alias = alias.trim();
        if alias.is_empty() || alias.chars().count() > MAX_ALIAS {
            return Err(StudyError::Invalid(format!("alias must be 1 to {MAX_ALIAS} characters")));
        }
        let mut inner = self.lock();
        let s = inner.study(study)?;
        let trials = trial_order(s.id, &s.sources, s.trials_per_session, alias, seed);
        let id = Uuid::new_v4();
        inner.commit(Event::SessionOpened { id, study, alias: alias.to_string(), seed, trials })?;
        Ok(inner.session(id)?.info())
    }

    pub fn session(&self, id: Uuid) -> Result<SessionInfo> {
        Ok(self.lock().session(id)?.info())
    }

    /// The first pending trial re-encoded as PNG, or `None` once every
    /// trial is judged.
    pub fn next_trial(&self, session: Uuid) -> Result<Option<TrialImage>> {
        let (trial, number, total) = {
            let inner = self.lock();
            let s = inner.session(session)?;
            if s.complete() {
                return Ok(None);
            }
            (s.trials[s.verdicts.len()].clone(), s.verdicts.len() + 1, s.trials.len())
        };
        let png = reencode(&trial.image)?;
        Ok(Some(TrialImage { trial_id: trial.id, number, total, png }))
    }

    /// Records a verdict for the session's current trial. Returns only after
    /// the judgment is on disk.
    pub fn submit(&self, session: Uuid, trial: Uuid, verdict: Verdict) -> Result<JudgmentAck> {
        let mut inner = self.lock();
        inner.commit(Event::Judged { session, trial, verdict })?;
        let s = inner.session(session)?;
        Ok(JudgmentAck {
            trial_id: trial,
            number: s.verdicts.len(),
            judged: s.verdicts.len(),
            total: s.trials.len(),
            complete: s.complete(),
        })
    }

    /// Judged-real rates per source. Unless `include_incomplete`, only
    /// finished sessions count, so a respondent cannot learn a trial's
    /// source by watching the report change.
    pub fn report(&self, study: Uuid, include_incomplete: bool) -> Result<StudyReport> {
        let inner = self.lock();
        let st = inner.study(study)?;
        let mut judged = vec![0usize; st.sources.len()];
        let mut real = vec![0usize; st.sources.len()];
        let mut respondents = Vec::new();
        for sid in &st.sessions {
            let s = &inner.sessions[sid];
            let n_real = s.verdicts.iter().filter(|v| **v == Verdict::Real).count();
            respondents.push(RespondentRow {
                session_id: s.id,
                alias: s.alias.clone(),
                judged: s.verdicts.len(),
                total: s.trials.len(),
                complete: s.complete(),
                real_rate: percent(n_real, s.verdicts.len()),
            });
            if !(s.complete() || include_incomplete) {
                continue;
            }
            for (t, v) in s.trials.iter().zip(&s.verdicts) {
                judged[t.source] += 1;
                real[t.source] += usize::from(*v == Verdict::Real);
            }
        }
        let sources: Vec<SourceRate> = st
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| SourceRate {
                label: s.label.clone(),
                judged: judged[i],
                judged_real: real[i],
                rate: percent(real[i], judged[i]),
            })
            .collect();
        let defined: Vec<f64> = sources.iter().filter_map(|s| s.rate).collect();
        let average_rate = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(StudyReport { study_id: st.id, name: st.name.clone(), includes_incomplete: include_incomplete, sources, respondents, average_rate })
    }

    /// Reports for every study, oldest first.
    pub fn reports(&self, include_incomplete: bool) -> Result<Vec<StudyReport>> {
        self.studies().iter().map(|s| self.report(s.id, include_incomplete)).collect()
    }
}

/// Decodes an image and writes it back as an 8-bit RGB PNG, dropping the
/// file name and any metadata.
pub fn reencode(path: &Path) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| StudyError::Image { path: path.to_path_buf(), message: e.to_string() })?;
    let mut out = Cursor::new(Vec::new());
    image::DynamicImage::ImageRgb8(img.to_rgb8())
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| StudyError::Image { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(out.into_inner())
}
