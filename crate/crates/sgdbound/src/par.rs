//! Order-preserving map over independent work items, data-parallel when the
//! `parallel` feature is on.

use serde::{Deserialize, Serialize};

/// How independent work items are scheduled. Results never depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    Parallel,
    /// Parallel when compiled with the `parallel` feature.
    #[default]
    Auto,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        match self {
            Execution::Sequential => false,
            Execution::Parallel | Execution::Auto => cfg!(feature = "parallel"),
        }
    }
}

/// Maps `f` over `items`, returning results in input order.
pub fn map_ordered<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}
