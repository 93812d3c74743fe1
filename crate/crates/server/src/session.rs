//! Per-session state: the fitted study, the subgroup store, discovery jobs
//! and optional on-disk snapshots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use cprism_core::dataset::{ingest_csv, DatasetConfig, Genome, IngestReport, Subgroup};
use cprism_core::estimate::PropensityParams;
use cprism_core::projection::LayoutReport;
use cprism_core::report::{FrontReport, SubgroupReport};
use cprism_core::Study;
use serde::{Deserialize, Serialize};
use tokio::sync::OnceCell;

use crate::error::ApiError;

#[derive(Clone, Debug)]
pub struct StoredSubgroup {
    pub genome: Genome,
    pub report: SubgroupReport,
}

impl StoredSubgroup {
    fn from_report(report: SubgroupReport, d: usize) -> Result<Self, String> {
        let genome = Genome::from_bit_string(&report.genome)
            .filter(|g| g.len() == d)
            .ok_or_else(|| format!("subgroup {} has a malformed genome", report.id))?;
        Ok(Self { genome, report })
    }

    pub fn subgroup(&self) -> Subgroup {
        let mut s = Subgroup::new(self.report.id.clone(), self.report.origin, self.genome.clone());
        s.label = self.report.label.clone();
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done,
    Cancelled,
}

#[derive(Debug)]
pub struct JobOutcome {
    pub status: JobStatus,
    pub front: Option<FrontReport>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub cancel: AtomicBool,
    pub generation: AtomicUsize,
    pub evaluations: AtomicUsize,
    pub outcome: Mutex<JobOutcome>,
}

impl Job {
    fn new(id: String) -> Self {
        Self {
            id,
            cancel: AtomicBool::new(false),
            generation: AtomicUsize::new(0),
            evaluations: AtomicUsize::new(0),
            outcome: Mutex::new(JobOutcome {
                status: JobStatus::Running,
                front: None,
                error: None,
            }),
        }
    }

    pub fn status(&self) -> JobStatus {
        self.outcome.lock().unwrap().status
    }

    pub fn is_cancel_requested(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Default)]
pub struct SessionState {
    /// Latest completed search, with diagnostic fronts.
    pub front: Option<FrontReport>,
    pub discovered: Vec<StoredSubgroup>,
    pub user: Vec<StoredSubgroup>,
    pub next_user: usize,
    pub jobs: BTreeMap<String, Arc<Job>>,
    next_job: usize,
}

impl SessionState {
    pub fn find(&self, id: &str) -> Option<&StoredSubgroup> {
        self.discovered.iter().chain(&self.user).find(|s| s.report.id == id)
    }

    pub fn all(&self) -> impl Iterator<Item = &StoredSubgroup> {
        self.discovered.iter().chain(&self.user)
    }

    pub fn running_job(&self) -> Option<&Arc<Job>> {
        self.jobs.values().find(|j| j.status() == JobStatus::Running)
    }

    pub fn start_job(&mut self) -> Arc<Job> {
        self.next_job += 1;
        let job = Arc::new(Job::new(format!("job-{}", self.next_job)));
        self.jobs.insert(job.id.clone(), job.clone());
        job
    }

    /// Next free id with the given prefix, e.g. `u3`.
    pub fn fresh_id(&mut self, prefix: &str) -> String {
        loop {
            self.next_user += 1;
            let id = format!("{prefix}{}", self.next_user);
            if self.find(&id).is_none() {
                return id;
            }
        }
    }

    /// Replaces the discovered subgroups with the front of a finished search.
    pub fn install_front(&mut self, front: FrontReport, d: usize) -> Result<(), String> {
        self.discovered = front
            .subgroups
            .iter()
            .cloned()
            .map(|r| StoredSubgroup::from_report(r, d))
            .collect::<Result<_, _>>()?;
        // user subgroups keep their ids; a clash with a new front id renames the user one
        let taken: Vec<String> = self.discovered.iter().map(|s| s.report.id.clone()).collect();
        for k in 0..self.user.len() {
            if taken.contains(&self.user[k].report.id) {
                let id = self.fresh_id("u");
                self.user[k].report.id = id;
            }
        }
        self.front = Some(front);
        Ok(())
    }

    pub fn upsert_user(&mut self, entry: StoredSubgroup) {
        match self.user.iter_mut().find(|s| s.report.id == entry.report.id) {
            Some(slot) => *slot = entry,
            None => self.user.push(entry),
        }
    }
}

pub struct Session {
    pub id: String,
    pub study: Arc<Study>,
    pub config: DatasetConfig,
    pub ingest: IngestReport,
    csv: Arc<str>,
    pub state: RwLock<SessionState>,
    pub projection: OnceCell<Arc<LayoutReport>>,
}

impl Session {
    /// Ingests the CSV and fits the study. CPU-bound.
    pub fn create(id: String, csv: Arc<str>, config: DatasetConfig) -> Result<Self, ApiError> {
        let (dataset, ingest) = ingest_csv(csv.as_bytes(), &config)?;
        let study = Study::fit(dataset, config.buckets, &PropensityParams::default())?;
        Ok(Self {
            id,
            study: Arc::new(study),
            config,
            ingest,
            csv,
            state: RwLock::new(SessionState::default()),
            projection: OnceCell::new(),
        })
    }

    fn snapshot(&self) -> Snapshot {
        let state = self.state.read().unwrap();
        Snapshot {
            session_id: self.id.clone(),
            config: self.config.clone(),
            csv: self.csv.to_string(),
            front: state.front.clone(),
            user: state.user.iter().map(|s| s.report.clone()).collect(),
            next_user: state.next_user,
        }
    }

    /// Writes `<dir>/<session id>.json` through a temporary file.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec(&self.snapshot())?;
        let path = snapshot_path(dir, &self.id);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)
    }

    pub fn restore(path: &Path) -> Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        let session = Self::create(snap.session_id, snap.csv.into(), snap.config).map_err(|e| e.message)?;
        let d = session.study.d();
        {
            let mut state = session.state.write().unwrap();
            if let Some(front) = snap.front {
                state.install_front(front, d)?;
            }
            state.user = snap
                .user
                .into_iter()
                .map(|r| StoredSubgroup::from_report(r, d))
                .collect::<Result<_, _>>()?;
            state.next_user = snap.next_user;
        }
        Ok(session)
    }
}

pub fn snapshot_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}.json"))
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    session_id: String,
    config: DatasetConfig,
    csv: String,
    front: Option<FrontReport>,
    user: Vec<SubgroupReport>,
    next_user: usize,
}
