//! Sessions and their append-only on-disk record store.
//!
//! Layout under the store directory: `{session_id}.json` holds the session
//! metadata (written once, at creation) and `{session_id}.jsonl` holds one
//! line per submitted trial. A session's cursor is the number of lines.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{utc_now, Choice, ConceptSet, RatingRecord, Source, TripletRecord};
use crate::elicitation::runners::all_pairs;
use crate::embedding::sample_triplets;
use crate::error::{Error, Result};

/// Trials per triplet session unless configured otherwise.
pub const DEFAULT_TRIPLET_TRIALS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionTask {
    Triplet,
    Pairwise,
}

impl std::str::FromStr for SessionTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" | "triplets" => Ok(SessionTask::Triplet),
            "pairwise" => Ok(SessionTask::Pairwise),
            other => Err(Error::InvalidPayload(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trial {
    Triplet { anchor: usize, option_a: usize, option_b: usize },
    Pairwise { concept_i: usize, concept_j: usize },
}

/// Session metadata; the trial plan is fixed at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub task: SessionTask,
    pub participant_id: String,
    pub trial_plan: Vec<Trial>,
    pub created_at: String,
    pub seed: u64,
}

/// Builds the trial plan: uniform random triplets, or every unordered pair
/// in a seeded random order.
pub fn plan_trials(task: SessionTask, concepts: &ConceptSet, n_trials: usize, seed: u64) -> Result<Vec<Trial>> {
    Ok(match task {
        SessionTask::Triplet => sample_triplets(concepts, n_trials, seed)?
            .into_iter()
            .map(|(anchor, option_a, option_b)| Trial::Triplet { anchor, option_a, option_b })
            .collect(),
        SessionTask::Pairwise => {
            let mut pairs = all_pairs(concepts.len());
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            pairs
                .into_iter()
                .map(|(concept_i, concept_j)| Trial::Pairwise { concept_i, concept_j })
                .collect()
        }
    })
}

/// A participant's answer to one trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub trial_index: usize,
    #[serde(default)]
    pub choice: Option<Choice>,
    #[serde(default)]
    pub rating: Option<u8>,
    /// Seed the client used to order options on screen.
    #[serde(default)]
    pub client_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Triplet(TripletRecord),
    Rating(RatingRecord),
}

/// One line of a session's JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub session_id: String,
    pub trial_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_seed: Option<u64>,
    #[serde(flatten)]
    pub record: Record,
}

struct SessionState {
    session: Session,
    cursor: usize,
    log: File,
}

/// Filter for [`SessionStore::export`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct ExportFilter {
    pub task: Option<SessionTask>,
    pub participant: Option<String>,
}

/// All sessions, with per-session locking.
pub struct SessionStore {
    dir: PathBuf,
    concepts: Arc<ConceptSet>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
}

fn append_line(file: &mut File, line: &str) -> Result<()> {
    file.write_all(line.as_bytes())?;
    file.write_all(b"\n")?;
    file.sync_data()?;
    Ok(())
}

/// Counts complete records, truncating a torn final line left by a crash.
fn recover_log(path: &Path) -> Result<usize> {
    let file = File::open(path)?;
    let mut good_len = 0u64;
    let mut count = 0;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let complete = line.ends_with('\n') && serde_json::from_str::<StoredRecord>(line.trim_end()).is_ok();
        if !complete {
            warn!("{}: dropping incomplete trailing record", path.display());
            OpenOptions::new().write(true).open(path)?.set_len(good_len)?;
            break;
        }
        good_len += n as u64;
        count += 1;
    }
    Ok(count)
}

impl SessionStore {
    /// Opens (or creates) a store and reloads every session found in it.
    pub fn open(dir: impl Into<PathBuf>, concepts: Arc<ConceptSet>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let session: Session = serde_json::from_slice(&std::fs::read(&path)?)?;
            let log_path = path.with_extension("jsonl");
            let cursor = if log_path.exists() { recover_log(&log_path)? } else { 0 };
            if cursor > session.trial_plan.len() {
                return Err(Error::Invariant(format!(
                    "session {} has {cursor} records for {} trials",
                    session.session_id,
                    session.trial_plan.len()
                )));
            }
            let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(SessionState { session, cursor, log })));
        }
        info!("store {}: {} session(s) loaded", dir.display(), sessions.len());
        Ok(Self {
            dir,
            concepts,
            sessions: Mutex::new(sessions),
        })
    }

    pub fn concepts(&self) -> &Arc<ConceptSet> {
        &self.concepts
    }

    fn state(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn create_session(
        &self,
        task: SessionTask,
        participant_id: &str,
        n_trials: usize,
        seed: u64,
    ) -> Result<Session> {
        if participant_id.trim().is_empty() {
            return Err(Error::InvalidPayload("participant_id must not be empty".into()));
        }
        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            task,
            participant_id: participant_id.to_string(),
            trial_plan: plan_trials(task, &self.concepts, n_trials, seed)?,
            created_at: utc_now(),
            seed,
        };
        let meta = self.dir.join(format!("{}.json", session.session_id));
        let tmp = meta.with_extension("json.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(&session)?)?;
        f.sync_all()?;
        std::fs::rename(&tmp, &meta)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(meta.with_extension("jsonl"))?;
        self.sessions.lock().expect("session table lock").insert(
            session.session_id.clone(),
            Arc::new(Mutex::new(SessionState {
                session: session.clone(),
                cursor: 0,
                log,
            })),
        );
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<(Session, usize)> {
        let state = self.state(id)?;
        let s = state.lock().expect("session lock");
        Ok((s.session.clone(), s.cursor))
    }

    /// The trial at the cursor, or `None` once the plan is exhausted.
    pub fn next_trial(&self, id: &str) -> Result<Option<(usize, Trial)>> {
        let state = self.state(id)?;
        let s = state.lock().expect("session lock");
        Ok(s.session.trial_plan.get(s.cursor).map(|t| (s.cursor, *t)))
    }

    /// Validates and persists a response; the record is on disk before this
    /// returns.
    pub fn submit(&self, id: &str, sub: &Submission) -> Result<StoredRecord> {
        let state = self.state(id)?;
        let mut s = state.lock().expect("session lock");
        let cursor = s.cursor;
        if sub.trial_index < cursor {
            return Err(Error::Conflict(format!("trial {} was already answered", sub.trial_index)));
        }
        if cursor == s.session.trial_plan.len() {
            return Err(Error::Conflict("session is complete".into()));
        }
        if sub.trial_index > cursor {
            return Err(Error::OutOfOrder {
                expected: cursor,
                got: sub.trial_index,
            });
        }
        let respondent_id = s.session.participant_id.clone();
        let timestamp = utc_now();
        let record = match (s.session.trial_plan[cursor], sub.choice, sub.rating) {
            (Trial::Triplet { anchor, option_a, option_b }, Some(choice), None) => Record::Triplet(TripletRecord {
                anchor,
                option_a,
                option_b,
                choice,
                respondent_id,
                source: Source::Human,
                timestamp,
            }),
            (Trial::Pairwise { concept_i, concept_j }, None, Some(rating)) => {
                if !(1..=7).contains(&rating) {
                    return Err(Error::InvalidPayload(format!("rating {rating} outside 1..=7")));
                }
                Record::Rating(RatingRecord {
                    concept_i,
                    concept_j,
                    rating,
                    respondent_id,
                    source: Source::Human,
                    timestamp,
                })
            }
            (Trial::Triplet { .. }, _, _) => {
                return Err(Error::InvalidPayload("triplet trials take exactly a `choice` of a or b".into()))
            }
            (Trial::Pairwise { .. }, _, _) => {
                return Err(Error::InvalidPayload("pairwise trials take exactly a `rating` of 1-7".into()))
            }
        };
        let stored = StoredRecord {
            session_id: id.to_string(),
            trial_index: cursor,
            client_seed: sub.client_seed,
            record,
        };
        append_line(&mut s.log, &serde_json::to_string(&stored)?)?;
        s.cursor += 1;
        Ok(stored)
    }

    /// Every matching record, ordered by (session creation time, session id,
    /// trial index).
    pub fn export(&self, filter: &ExportFilter) -> Result<Vec<StoredRecord>> {
        let states: Vec<_> = self.sessions.lock().expect("session table lock").values().cloned().collect();
        let mut selected: Vec<(String, String)> = states
            .iter()
            .filter_map(|st| {
                let s = st.lock().expect("session lock");
                let keep = filter.task.is_none_or(|t| t == s.session.task)
                    && filter.participant.as_ref().is_none_or(|p| *p == s.session.participant_id);
                keep.then(|| (s.session.created_at.clone(), s.session.session_id.clone()))
            })
            .collect();
        selected.sort();
        let mut out = Vec::new();
        for (_, id) in selected {
            // hold the session lock so a concurrent append cannot be half-read
            let state = self.state(&id)?;
            let _guard = state.lock().expect("session lock");
            let path = self.dir.join(format!("{id}.jsonl"));
            for line in BufReader::new(File::open(path)?).lines() {
                out.push(serde_json::from_str(&line?)?);
            }
        }
        Ok(out)
    }
}
