//! Tiny fixed-size worker pool for fan-out over independent jobs.
//!
//! Each job owns its index (and therefore its seed); results come back in
//! job order regardless of scheduling, so output is deterministic.

use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Worker count: `JUMPSCOPE_THREADS` when set, otherwise the hardware
/// parallelism.
pub fn worker_count(jobs: usize) -> usize {
    let configured = std::env::var("JUMPSCOPE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    configured.min(jobs).max(1)
}

/// Runs `job(0..jobs)` on the pool and returns the results in index order.
pub fn run_jobs<T, F>(jobs: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = worker_count(jobs);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                loop {
                    let index = next.fetch_add(1, Ordering::Relaxed);
                    if index >= jobs {
                        break;
                    }
                    let value = job(index);
                    results.lock().unwrap()[index] = Some(value);
                }
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("worker never wrote its slot"))
        .collect()
}
