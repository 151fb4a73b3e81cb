//! Work distribution for per-cell evaluations.
//!
//! With the `parallel` feature each [`Workers`] owns a rayon pool of the
//! requested size; without it every map runs on the calling thread. Results
//! are always returned in input order, so reports do not depend on
//! scheduling.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Worker pool used by the engine. Create one per analysis run.
pub struct Workers {
    count: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

impl Workers {
    /// A pool of `count` workers (`0` means one per available core).
    pub fn new(count: usize) -> Self {
        let count = if count == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            count
        };
        #[cfg(feature = "parallel")]
        {
            let pool = (count > 1)
                .then(|| rayon::ThreadPoolBuilder::new().num_threads(count).build().ok())
                .flatten();
            Self { count, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Self { count }
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Minimum items per task: `max(64, n / (16 · workers))`.
    pub fn chunk_size(&self, n: usize) -> usize {
        (n / (16 * self.count)).max(64)
    }

    /// Applies `f` to every item, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            let chunk = self.chunk_size(items.len());
            return pool.install(|| items.par_iter().with_min_len(chunk).map(f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Applies a fallible `f` to every item, preserving order. The first
    /// error in input order is returned.
    pub fn try_map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    /// Applies `f` to `0..n`, preserving order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            let chunk = self.chunk_size(n);
            return pool.install(|| (0..n).into_par_iter().with_min_len(chunk).map(f).collect());
        }
        (0..n).map(f).collect()
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::new(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..10_000).collect();
        for w in [1, 3] {
            let out = Workers::new(w).map(&items, |x| x * x);
            assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        }
    }

    #[test]
    fn chunking_rule() {
        let w = Workers::new(4);
        assert_eq!(w.chunk_size(100), 64);
        assert_eq!(w.chunk_size(64_000), 1000);
    }

    #[test]
    fn first_error_wins() {
        let items: Vec<i32> = (0..500).collect();
        let r = Workers::new(2).try_map(&items, |&x| {
            if x % 100 == 99 {
                Err(crate::Gp3Error::Empty(format!("{x}")))
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(crate::Gp3Error::Empty("99".into())));
    }
}
