//! Path-parallel helpers.
//!
//! Work is split into fixed blocks of paths. Block boundaries never depend on
//! the number of worker threads and partial results are always combined in
//! block order, so every reduction is bit-identical whether the `parallel`
//! feature is enabled or not and whatever the pool size.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of paths per work item.
pub const PATH_BLOCK: usize = 256;

fn block_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(PATH_BLOCK))
        .map(|b| b * PATH_BLOCK..((b + 1) * PATH_BLOCK).min(n))
        .collect()
}

/// Maps `f` over consecutive path blocks and returns the results in block order.
pub fn map_blocks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = block_ranges(n);
    #[cfg(feature = "parallel")]
    {
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Calls `f(path, chunk)` for every `width`-sized chunk of `data`.
pub fn for_each_path<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width)
            .enumerate()
            .with_min_len(PATH_BLOCK)
            .for_each(|(k, c)| f(k, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(width)
            .enumerate()
            .for_each(|(k, c)| f(k, c));
    }
}

/// Fallible variant of [`for_each_path`]; returns the error of the lowest failing path.
pub fn try_for_each_path<T, E, F>(data: &mut [T], width: usize, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut [T]) -> Result<(), E> + Sync + Send,
{
    if width == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(), E>> = data
        .par_chunks_mut(width)
        .enumerate()
        .with_min_len(PATH_BLOCK)
        .map(|(k, c)| f(k, c))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(), E>> = data
        .chunks_mut(width)
        .enumerate()
        .map(|(k, c)| f(k, c))
        .collect();
    results.into_iter().collect()
}

/// Deterministic sum of `f(path)` over `0..n`.
pub fn sum_paths<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_blocks(n, |r| r.map(&f).sum::<f64>()).into_iter().sum()
}

/// Runs `f` inside a pool with `threads` workers. Without the `parallel`
/// feature this just calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_range_in_order() {
        let r = block_ranges(PATH_BLOCK * 2 + 3);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], 0..PATH_BLOCK);
        assert_eq!(r[2].end, PATH_BLOCK * 2 + 3);
        assert!(block_ranges(0).is_empty());
    }

    #[test]
    fn sums_do_not_depend_on_pool_size() {
        let f = |k: usize| ((k as f64) * 0.37).sin() / 3.0;
        let a = with_threads(1, || sum_paths(10_007, f));
        let b = with_threads(4, || sum_paths(10_007, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn first_error_wins() {
        let mut data = vec![0.0; 2000];
        let res: Result<(), usize> = try_for_each_path(&mut data, 2, |k, _| {
            if k == 700 || k == 900 {
                Err(k)
            } else {
                Ok(())
            }
        });
        assert_eq!(res, Err(700));
    }
}
