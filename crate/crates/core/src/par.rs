//! Data-parallel helpers. With the `parallel` feature (default) these run on
//! rayon; without it, or with [`Execution::Sequential`], they run in order on
//! the calling thread. Results always come back in input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` degrades to `Sequential` when built without rayon.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Map then fold with an associative `combine`.
pub fn map_reduce<T, A, M, C>(exec: Execution, items: &[T], identity: A, map_fn: M, combine: C) -> A
where
    T: Sync,
    A: Send + Sync + Clone,
    M: Fn(&T) -> A + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items
                .par_iter()
                .map(map_fn)
                .reduce(|| identity.clone(), combine)
        }
        _ => items.iter().map(map_fn).fold(identity, combine),
    }
}

pub fn join<A, B, RA, RB>(exec: Execution, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => rayon::join(a, b),
        _ => (a(), b()),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers when parallel.
pub fn with_threads<R, F>(exec: Execution, threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
                f()
            }
        },
        _ => {
            let _ = threads;
            f()
        }
    }
}
