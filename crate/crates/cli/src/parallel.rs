//! Work-stealing ensemble execution.
//!
//! Results come back in replicate order and every replicate derives its own
//! random stream, so the output is byte-identical for any worker count.

use lysim_core::ensemble::Ensemble;
use rayon::prelude::*;

pub struct RayonEnsemble {
    pool: rayon::ThreadPool,
}

impl RayonEnsemble {
    pub fn new(workers: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool construction");
        RayonEnsemble { pool }
    }
}

impl Ensemble for RayonEnsemble {
    fn map<T, F>(&self, n: u32, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u32) -> T + Sync,
    {
        let f = &f;
        self.pool
            .install(|| (0..n).into_par_iter().map(move |i| f(i)).collect())
    }
}
