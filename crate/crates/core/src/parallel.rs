//! Order-preserving fan-out over a fixed-size rayon pool.

use rayon::prelude::*;

pub struct Pool(Option<rayon::ThreadPool>);

impl Pool {
    /// `threads <= 1` maps on the calling thread.
    pub fn new(threads: usize) -> Self {
        if threads <= 1 {
            return Pool(None);
        }
        Pool(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok(),
        )
    }

    /// `f(i, &items[i])` for every item, results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match &self.0 {
            None => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
            Some(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()),
        }
    }
}
