//! Replication driver with one random stream per replication.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::RngStream;

/// Run `f(index, stream)` for `index in 0..reps` on `jobs` worker threads.
///
/// Replication `i` always receives `RngStream::new(seed, stream_base + i)`,
/// so results do not depend on `jobs`. Errors carry the replication index.
pub fn replicate<T, F>(reps: usize, seed: u64, stream_base: u64, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut RngStream) -> Result<T> + Sync,
{
    let run = |i: usize| {
        let mut rng = RngStream::new(seed, stream_base + i as u64);
        f(i, &mut rng).map_err(|e| Error::Replication {
            index: i,
            source: Box::new(e),
        })
    };
    if jobs <= 1 || reps <= 1 {
        return (0..reps).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Misuse(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..reps).into_par_iter().map(run).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree() {
        let f = |i: usize, rng: &mut RngStream| Ok((i, rng.normal()));
        let a = replicate(50, 9, 100, 1, f).unwrap();
        let b = replicate(50, 9, 100, 4, f).unwrap();
        assert_eq!(a, b);
        let err = replicate(5, 9, 0, 2, |i, _| if i == 3 { Err(Error::domain("x")) } else { Ok(i) }).unwrap_err();
        assert!(matches!(err, Error::Replication { index: 3, .. }));
    }
}
