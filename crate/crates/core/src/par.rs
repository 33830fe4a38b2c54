//! Row-level iteration helpers.
//!
//! With the `parallel` feature these hand out rayon parallel iterators,
//! otherwise plain slice iterators with the same method surface. Every
//! caller computes each row independently of the others, so results are
//! bitwise identical between the two builds and across thread counts.

#[cfg(feature = "parallel")]
use rayon::iter::{IndexedParallelIterator, IntoParallelIterator, ParallelIterator};
#[cfg(feature = "parallel")]
use rayon::slice::{ParallelSlice, ParallelSliceMut};

pub(crate) mod prelude {
    #[cfg(feature = "parallel")]
    pub(crate) use rayon::iter::{IndexedParallelIterator, ParallelIterator};
}

/// Whether this build runs the pixel loops on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
pub(crate) fn rows_mut<T: Send>(
    data: &mut [T],
    width: usize,
) -> impl IndexedParallelIterator<Item = &mut [T]> {
    data.par_chunks_mut(width)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn rows_mut<T>(data: &mut [T], width: usize) -> std::slice::ChunksMut<'_, T> {
    data.chunks_mut(width)
}

#[cfg(feature = "parallel")]
pub(crate) fn rows<T: Sync>(data: &[T], width: usize) -> impl IndexedParallelIterator<Item = &[T]> {
    data.par_chunks(width)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn rows<T>(data: &[T], width: usize) -> std::slice::Chunks<'_, T> {
    data.chunks(width)
}

#[cfg(feature = "parallel")]
pub(crate) fn indices(n: usize) -> impl IndexedParallelIterator<Item = usize> {
    (0..n).into_par_iter()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn indices(n: usize) -> std::ops::Range<usize> {
    0..n
}

/// Fold rows into per-worker accumulators and merge them.
///
/// Only use with accumulators whose merge is exact (integer counts), since
/// the split points depend on the pool.
#[cfg(feature = "parallel")]
pub(crate) fn fold_rows<T, A, I, F, M>(data: &[T], width: usize, init: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, (usize, &[T])) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    data.par_chunks(width)
        .enumerate()
        .with_min_len(64)
        .fold(&init, &fold)
        .reduce(&init, &merge)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fold_rows<T, A, I, F, M>(data: &[T], width: usize, init: I, fold: F, _merge: M) -> A
where
    I: Fn() -> A,
    F: Fn(A, (usize, &[T])) -> A,
    M: Fn(A, A) -> A,
{
    data.chunks(width).enumerate().fold(init(), fold)
}
