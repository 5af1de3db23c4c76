//! On-disk study state: a study definition, stimuli and ranking tasks
//! fixed at creation, and append-only response and ranking logs.
//!
//! Layout under the root directory: `study.json`, `stimuli.jsonl`,
//! `tasks.jsonl`, `responses.jsonl`, `rankings.jsonl`.

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncReadExt;

use humankernel::experiments::OccamTask;
use humankernel::responses::{
    append_record, load_records, save_records, RankingRecord, ResponseRecord, Stimulus,
    N_CANDIDATES,
};
use humankernel::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyItem {
    Stimulus { id: String },
    Ranking { id: String },
}

/// Items in presentation order, plus the key for candidate shuffling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub seed: u64,
    pub items: Vec<StudyItem>,
}

/// Append-only record log. Appends are serialized by `writer`; readers
/// take a snapshot of the records already acknowledged.
struct Log<T> {
    path: PathBuf,
    records: RwLock<Vec<T>>,
    writer: tokio::sync::Mutex<()>,
}

impl<T: Serialize + DeserializeOwned + Clone + Send + 'static> Log<T> {
    fn open(path: PathBuf) -> Result<Self> {
        if !path.exists() {
            fs::write(&path, b"").map_err(|e| Error::io(&path, e))?;
        }
        drop_torn_tail(&path)?;
        let records = load_records(&path)?;
        Ok(Self {
            path,
            records: RwLock::new(records),
            writer: tokio::sync::Mutex::new(()),
        })
    }

    fn snapshot(&self) -> Vec<T> {
        self.records.read().expect("log lock").clone()
    }

    async fn append(&self, record: T) -> Result<()> {
        let _guard = self.writer.lock().await;
        let path = self.path.clone();
        let item = record.clone();
        tokio::task::spawn_blocking(move || append_record(&path, &item))
            .await
            .map_err(|e| Error::io(&self.path, std::io::Error::other(e)))??;
        self.records.write().expect("log lock").push(record);
        Ok(())
    }

    /// Reader over the acknowledged bytes of the log file.
    async fn reader(&self) -> Result<tokio::io::Take<tokio::fs::File>> {
        let _guard = self.writer.lock().await;
        let file = tokio::fs::File::open(&self.path)
            .await
            .map_err(|e| Error::io(&self.path, e))?;
        let len = file
            .metadata()
            .await
            .map_err(|e| Error::io(&self.path, e))?
            .len();
        Ok(file.take(len))
    }
}

/// Truncates a trailing partial line left by an interrupted append.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Responses,
    Rankings,
}

pub struct StudyStore {
    root: PathBuf,
    study: StudyDefinition,
    stimuli: HashMap<String, Stimulus>,
    tasks: HashMap<String, OccamTask>,
    responses: Log<ResponseRecord>,
    rankings: Log<RankingRecord>,
}

fn check_definition(
    study: &StudyDefinition,
    stimuli: &HashMap<String, Stimulus>,
    tasks: &HashMap<String, OccamTask>,
) -> Result<()> {
    for item in &study.items {
        match item {
            StudyItem::Stimulus { id } if !stimuli.contains_key(id) => {
                return Err(Error::validation("items", format!("unknown stimulus {id}")))
            }
            StudyItem::Ranking { id } if !tasks.contains_key(id) => {
                return Err(Error::validation("items", format!("unknown task {id}")))
            }
            _ => {}
        }
    }
    for t in tasks.values() {
        if t.candidate_curves.len() != N_CANDIDATES {
            return Err(Error::validation(
                "candidate_curves",
                format!("task {} has {} candidates", t.id, t.candidate_curves.len()),
            ));
        }
    }
    Ok(())
}

impl StudyStore {
    /// Writes a new store under `root` and opens it. Existing response and
    /// ranking logs are kept.
    pub fn create(
        root: &Path,
        study: &StudyDefinition,
        stimuli: &[Stimulus],
        tasks: &[OccamTask],
    ) -> Result<Self> {
        for s in stimuli {
            s.validate()?;
        }
        let by_id = stimuli.iter().map(|s| (s.id.clone(), s.clone())).collect();
        let task_map = tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
        check_definition(study, &by_id, &task_map)?;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let study_path = root.join("study.json");
        let text = serde_json::to_string_pretty(study)
            .map_err(|e| Error::io(&study_path, std::io::Error::other(e)))?;
        fs::write(&study_path, text).map_err(|e| Error::io(&study_path, e))?;
        save_records(&root.join("stimuli.jsonl"), stimuli)?;
        save_records(&root.join("tasks.jsonl"), tasks)?;
        Self::open(root)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let study_path = root.join("study.json");
        let text = fs::read_to_string(&study_path).map_err(|e| Error::io(&study_path, e))?;
        let study: StudyDefinition = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: study_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let stimuli: HashMap<String, Stimulus> = load_records::<Stimulus>(&root.join("stimuli.jsonl"))?
            .into_iter()
            .map(|s| (s.id.clone(), s))
            .collect();
        let tasks: HashMap<String, OccamTask> = load_records::<OccamTask>(&root.join("tasks.jsonl"))?
            .into_iter()
            .map(|t| (t.id.clone(), t))
            .collect();
        check_definition(&study, &stimuli, &tasks)?;
        Ok(Self {
            root: root.to_path_buf(),
            study,
            stimuli,
            tasks,
            responses: Log::open(root.join("responses.jsonl"))?,
            rankings: Log::open(root.join("rankings.jsonl"))?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn study(&self) -> &StudyDefinition {
        &self.study
    }

    pub fn stimulus(&self, id: &str) -> Option<&Stimulus> {
        self.stimuli.get(id)
    }

    pub fn stimuli(&self) -> Vec<Stimulus> {
        let mut v: Vec<Stimulus> = self.stimuli.values().cloned().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    pub fn task(&self, id: &str) -> Option<&OccamTask> {
        self.tasks.get(id)
    }

    pub fn responses(&self) -> Vec<ResponseRecord> {
        self.responses.snapshot()
    }

    pub fn rankings(&self) -> Vec<RankingRecord> {
        self.rankings.snapshot()
    }

    /// Validates against the referenced stimulus, then appends durably.
    pub async fn add_response(&self, r: ResponseRecord) -> Result<()> {
        let stimulus = self
            .stimulus(&r.stimulus_id)
            .ok_or_else(|| Error::validation("stimulus_id", format!("unknown stimulus {}", r.stimulus_id)))?;
        r.validate_for(stimulus)?;
        self.responses.append(r).await
    }

    pub async fn add_ranking(&self, r: RankingRecord) -> Result<()> {
        if !self.tasks.contains_key(&r.task_id) {
            return Err(Error::validation("task_id", format!("unknown task {}", r.task_id)));
        }
        r.validate()?;
        self.rankings.append(r).await
    }

    /// First study item the participant has not answered yet.
    pub fn next_item(&self, participant_id: &str) -> Option<StudyItem> {
        let answered_stimuli: HashSet<String> = self
            .responses
            .records
            .read()
            .expect("log lock")
            .iter()
            .filter(|r| r.participant_id == participant_id)
            .map(|r| r.stimulus_id.clone())
            .collect();
        let answered_tasks: HashSet<String> = self
            .rankings
            .records
            .read()
            .expect("log lock")
            .iter()
            .filter(|r| r.participant_id == participant_id)
            .map(|r| r.task_id.clone())
            .collect();
        self.study
            .items
            .iter()
            .find(|item| match item {
                StudyItem::Stimulus { id } => !answered_stimuli.contains(id),
                StudyItem::Ranking { id } => !answered_tasks.contains(id),
            })
            .cloned()
    }

    pub async fn export_reader(&self, kind: ExportKind) -> Result<tokio::io::Take<tokio::fs::File>> {
        match kind {
            ExportKind::Responses => self.responses.reader().await,
            ExportKind::Rankings => self.rankings.reader().await,
        }
    }
}

pub type SharedStore = Arc<StudyStore>;
