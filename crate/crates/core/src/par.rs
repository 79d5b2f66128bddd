//! Data-parallel helpers.
//!
//! Every data-parallel loop in the crate goes through [`map`]. With the
//! `parallel` feature the work is spread over the rayon pool; without it, or
//! when [`Execution::Sequential`] is requested, items are processed in order
//! on the calling thread. Results are always returned in input order so the
//! two paths are interchangeable bit for bit.

/// How a data-parallel loop should execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Use the rayon pool when compiled with `parallel`, else sequential.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map<T, R, F>(mode: Execution, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Execution::Parallel {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = mode;
    items.into_iter().map(f).collect()
}

/// Like [`map`] over a borrowed slice.
pub fn map_ref<'a, T, R, F>(mode: Execution, items: &'a [T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&'a T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}
