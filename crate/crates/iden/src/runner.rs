use anyhow::{Context, Result};
use iden_core::harness::{ChunkJob, ChunkRunner, Tally};
use rayon::prelude::*;

/// Evaluates each wave of chunks on a private thread pool. Results come
/// back in job order, so the harness stop rule sees the same sequence for
/// any pool size.
pub struct RayonRunner {
    pool: rayon::ThreadPool,
}

impl RayonRunner {
    /// `workers = None` uses every available core.
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("building worker pool")?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ChunkRunner for RayonRunner {
    fn wave(&self) -> usize {
        self.workers()
    }

    fn run(
        &self,
        jobs: &[ChunkJob],
        work: &(dyn Fn(&ChunkJob) -> iden_core::Result<Tally> + Sync),
    ) -> Vec<iden_core::Result<Tally>> {
        self.pool.install(|| jobs.par_iter().map(work).collect())
    }
}
