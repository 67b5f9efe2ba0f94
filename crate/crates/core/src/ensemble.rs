//! Replicate-level execution strategy.
//!
//! Monte Carlo routines take an [`Ensemble`] that maps a function over
//! replicate indices. Each replicate derives its own random stream from its
//! index, so any implementation (serial here, work-stealing in the companion
//! crate) yields identical results.

use alloc::vec::Vec;

pub trait Ensemble {
    /// Apply `f` to every index in `0..n`, returning results in index order.
    fn map<T, F>(&self, n: u32, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u32) -> T + Sync;
}

/// Runs replicates one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Ensemble for Serial {
    fn map<T, F>(&self, n: u32, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u32) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}
