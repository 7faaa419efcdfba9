//! In-memory store for asynchronous heatmap jobs. Least recently touched
//! jobs are dropped once the cap is reached.

use std::num::NonZeroUsize;
use std::sync::Mutex;

use gridstab::placement::HeatmapResult;
use lru::LruCache;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::api::ErrorBody;

pub const DEFAULT_JOB_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done { result: HeatmapResult },
    Failed { error: ErrorBody },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDoc {
    pub id: Uuid,
    #[serde(flatten)]
    pub state: JobState,
}

pub struct JobStore {
    jobs: Mutex<LruCache<Uuid, JobState>>,
}

impl JobStore {
    pub fn new(cap: usize) -> JobStore {
        let cap = NonZeroUsize::new(cap).unwrap_or(NonZeroUsize::MIN);
        JobStore { jobs: Mutex::new(LruCache::new(cap)) }
    }

    pub fn submit(&self) -> Uuid {
        let id = Uuid::new_v4();
        self.jobs.lock().expect("job store lock").put(id, JobState::Queued);
        id
    }

    /// No-op for jobs that were evicted meanwhile.
    pub fn update(&self, id: Uuid, state: JobState) {
        if let Some(slot) = self.jobs.lock().expect("job store lock").peek_mut(&id) {
            *slot = state;
        }
    }

    pub fn get(&self, id: Uuid) -> Option<JobDoc> {
        self.jobs.lock().expect("job store lock").get(&id).map(|s| JobDoc { id, state: s.clone() })
    }

    pub fn len(&self) -> usize {
        self.jobs.lock().expect("job store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
