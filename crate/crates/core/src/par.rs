//! Execution strategy for the data-parallel inner loops.
//!
//! Every kernel that fans out over independent output chunks takes an
//! [`Exec`]. With the `parallel` feature enabled, [`Exec::Parallel`] runs
//! the chunks on the rayon pool; without it the variant silently degrades
//! to the sequential loop. Work is always split so that each chunk owns a
//! disjoint slice of the output, so both strategies produce bit-identical
//! results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this strategy will actually use more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Calls `f(index, chunk)` for each `chunk_len`-sized piece of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk_len == 0 || data.is_empty() {
            return;
        }
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }

    /// Maps `0..n` through `f`, preserving index order in the output.
    pub fn map_indices<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps a slice through `f`, preserving order.
    pub fn map_slice<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let mut a = vec![0.0f64; 1000];
        let mut b = a.clone();
        let fill = |i: usize, c: &mut [f64]| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = ((i * 37 + j) as f64).sin();
            }
        };
        Exec::Sequential.for_each_chunk_mut(&mut a, 64, fill);
        Exec::Parallel.for_each_chunk_mut(&mut b, 64, fill);
        assert_eq!(a, b);
        let s = Exec::Sequential.map_indices(50, |i| i * i);
        let p = Exec::Parallel.map_indices(50, |i| i * i);
        assert_eq!(s, p);
    }
}
