//! Data-parallel mapping over index ranges.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] fans out
//! over rayon's pool; without it, both variants run sequentially. Outputs are
//! always collected in index order, so results do not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// `(0..len).map(f)` collected in index order.
    ///
    /// `min_len` bounds the work per rayon task; small inputs stay sequential.
    pub fn map<T, F>(self, len: usize, min_len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if len > min_len => {
                (0..len).into_par_iter().with_min_len(min_len.max(1)).map(f).collect()
            }
            _ => {
                let _ = min_len;
                (0..len).map(f).collect()
            }
        }
    }

    /// Like [`Execution::map`] but stops at the first error (lowest index wins).
    pub fn try_map<T, E, F>(self, len: usize, min_len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(len, min_len, f).into_iter().collect()
    }

    /// Runs `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of
    /// `data`. The error of the lowest failing chunk is returned.
    pub fn try_chunks_mut<T, E, F>(self, data: &mut [T], chunk: usize, min_chunks: usize, f: F) -> Result<(), E>
    where
        T: Send,
        E: Send,
        F: Fn(usize, &mut [T]) -> Result<(), E> + Sync + Send,
    {
        let results: Vec<Result<(), E>> = match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if data.len() / chunk.max(1) > min_chunks => data
                .par_chunks_mut(chunk)
                .with_min_len(min_chunks.max(1))
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect(),
            _ => {
                let _ = min_chunks;
                data.chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
            }
        };
        results.into_iter().collect()
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
