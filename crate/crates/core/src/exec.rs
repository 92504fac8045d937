//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in input order, so a run produces the same
//! bytes whichever strategy executes it. Floating-point reductions go through
//! [`Execution::chunked_sum`], which fixes the chunk boundaries and sums the
//! partials left to right.
//!
//! Building without the `parallel` feature drops rayon entirely; in that case
//! [`Execution::Parallel`] quietly runs sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by reductions. Changing it changes low-order bits.
pub const REDUCE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Consuming variant of [`Execution::map`].
    pub fn map_owned<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }

    /// Sums `f` over fixed-size chunks of `items`. The chunking does not
    /// depend on the strategy, so both strategies return identical bits.
    pub fn chunked_sum<T, F>(self, items: &[T], f: F) -> f64
    where
        T: Sync,
        F: Fn(&[T]) -> f64 + Sync + Send,
    {
        let partials: Vec<f64> = {
            #[cfg(feature = "parallel")]
            {
                if self.is_parallel() {
                    items.par_chunks(REDUCE_CHUNK).map(&f).collect()
                } else {
                    items.chunks(REDUCE_CHUNK).map(&f).collect()
                }
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.chunks(REDUCE_CHUNK).map(&f).collect()
            }
        };
        partials.into_iter().sum()
    }
}
