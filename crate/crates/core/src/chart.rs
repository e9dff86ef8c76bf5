//! Dense indexing of the `n (n + 1) / 2` spans `0 <= i < j <= n`.

/// Number of spans over a sentence of `n` tokens.
pub const fn span_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of span `(i, j)` in row-major upper-triangular order.
#[inline]
pub fn span_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j <= n);
    i * (2 * n - i + 1) / 2 + (j - i - 1)
}

/// All spans in [`span_index`] order.
pub fn spans(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..=n).map(move |j| (i, j)))
}
