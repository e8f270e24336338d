//! Replica execution. Results come back in replica order and depend only on
//! the replica index, so the thread count never changes a report.

use crate::error::{RapError, Result};

/// Worker threads to use when the caller passes 0.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `f(0..replicas)` one after another.
pub fn run_replicas_sequential<T, F>(replicas: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(u64) -> Result<T>,
{
    (0..replicas as u64)
        .map(|r| f(r).map_err(|e| wrap(r, e)))
        .collect()
}

/// Runs `f(0..replicas)` on `threads` workers (0 = all cores).
#[cfg(feature = "parallel")]
pub fn run_replicas<T, F>(replicas: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    use rayon::prelude::*;
    let threads = if threads == 0 { default_threads() } else { threads };
    if threads == 1 {
        return run_replicas_sequential(replicas, f);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RapError::Internal(format!("thread pool: {e}")))?;
    let out: Vec<Result<T>> = pool.install(|| (0..replicas as u64).into_par_iter().map(&f).collect());
    // report the lowest failing replica, whatever order the workers hit them in
    out.into_iter()
        .enumerate()
        .map(|(r, v)| v.map_err(|e| wrap(r as u64, e)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_replicas<T, F>(replicas: usize, _threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    run_replicas_sequential(replicas, f)
}

fn wrap(replica: u64, e: RapError) -> RapError {
    match e {
        RapError::Replica { .. } => e,
        other => RapError::Replica {
            replica,
            source: Box::new(other),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_replica_order() {
        let v = run_replicas(64, 4, |r| Ok(r * r)).unwrap();
        assert_eq!(v, (0..64u64).map(|r| r * r).collect::<Vec<_>>());
        assert_eq!(v, run_replicas_sequential(64, |r| Ok(r * r)).unwrap());
    }

    #[test]
    fn first_failing_replica_is_reported() {
        let e = run_replicas(50, 3, |r| {
            if r % 7 == 5 {
                Err(RapError::invalid("x", "bad"))
            } else {
                Ok(r)
            }
        })
        .unwrap_err();
        match e {
            RapError::Replica { replica, .. } => assert_eq!(replica, 5),
            other => panic!("{other:?}"),
        }
    }
}
