//! Data-parallel helpers with results independent of the thread count.
//!
//! Work is always cut into the same fixed-size pieces and partial results
//! are reduced by the caller in piece order, so a single-threaded build and a
//! many-threaded build produce bit-identical sums.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(index, item)` for every element, possibly concurrently.
pub(crate) fn for_each_indexed<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    #[cfg(not(feature = "parallel"))]
    items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
}
