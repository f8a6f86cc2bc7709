//! Parallel prefix scan with a caller-supplied associative operator.
//!
//! The reduction tree is a fixed balanced recursion (pairwise up-sweep,
//! recursive scan of the pair sums, down-sweep filling the even positions).
//! Its shape depends only on the input length and the sequential threshold,
//! never on the number of worker threads, so the output is bitwise
//! reproducible across pool sizes. Work is at most `2n` combines and span is
//! `O(log n)` combine levels.
//!
//! Parallel work is dispatched on the current rayon pool; run inside
//! `ThreadPool::install` to control the worker count.

use rayon::prelude::*;

/// Below this many elements a (sub-)scan runs as a sequential fold.
pub const DEFAULT_SEQUENTIAL_THRESHOLD: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScanOptions {
    pub sequential_threshold: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            sequential_threshold: DEFAULT_SEQUENTIAL_THRESHOLD,
        }
    }
}

/// Inclusive scan: `out[k] = e[0] ⊗ e[1] ⊗ … ⊗ e[k]`.
pub fn associative_scan<E, F>(elems: Vec<E>, combine: F, opts: ScanOptions) -> Vec<E>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> E + Sync,
{
    let wrapped = |a: &E, b: &E| Ok::<E, std::convert::Infallible>(combine(a, b));
    match try_associative_scan(elems, wrapped, opts) {
        Ok(v) => v,
        Err(never) => match never {},
    }
}

/// Reversed inclusive scan: `out[k] = e[k] ⊗ e[k+1] ⊗ … ⊗ e[n−1]`.
pub fn reverse_associative_scan<E, F>(elems: Vec<E>, combine: F, opts: ScanOptions) -> Vec<E>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> E + Sync,
{
    let wrapped = |a: &E, b: &E| Ok::<E, std::convert::Infallible>(combine(a, b));
    match try_reverse_associative_scan(elems, wrapped, opts) {
        Ok(v) => v,
        Err(never) => match never {},
    }
}

/// Fallible inclusive scan; the first failing combine aborts the scan.
pub fn try_associative_scan<E, Er, F>(
    elems: Vec<E>,
    combine: F,
    opts: ScanOptions,
) -> Result<Vec<E>, Er>
where
    E: Clone + Send + Sync,
    Er: Send,
    F: Fn(&E, &E) -> Result<E, Er> + Sync,
{
    scan_rec(elems, &combine, opts.sequential_threshold.max(2))
}

/// Fallible reversed scan, implemented as reverse → scan with flipped
/// arguments → reverse.
pub fn try_reverse_associative_scan<E, Er, F>(
    mut elems: Vec<E>,
    combine: F,
    opts: ScanOptions,
) -> Result<Vec<E>, Er>
where
    E: Clone + Send + Sync,
    Er: Send,
    F: Fn(&E, &E) -> Result<E, Er> + Sync,
{
    elems.reverse();
    let flipped = |later: &E, earlier: &E| combine(earlier, later);
    let mut out = scan_rec(elems, &flipped, opts.sequential_threshold.max(2))?;
    out.reverse();
    Ok(out)
}

/// Left-to-right sequential fold producing every prefix; the reference
/// against which the parallel scan is tested.
pub fn sequential_scan<E, Er, F>(elems: Vec<E>, combine: F) -> Result<Vec<E>, Er>
where
    E: Clone,
    F: Fn(&E, &E) -> Result<E, Er>,
{
    let mut out: Vec<E> = Vec::with_capacity(elems.len());
    for e in elems {
        let next = match out.last() {
            Some(prev) => combine(prev, &e)?,
            None => e,
        };
        out.push(next);
    }
    Ok(out)
}

/// Fixed-shape parallel reduction `e[0] ⊗ … ⊗ e[n−1]`; `None` for empty input.
pub fn associative_reduce<E, F>(elems: Vec<E>, combine: F, opts: ScanOptions) -> Option<E>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> E + Sync,
{
    let threshold = opts.sequential_threshold.max(2);
    let mut level = elems;
    while level.len() >= threshold {
        let odd = level.len() % 2 == 1;
        let mut next: Vec<E> = level
            .par_chunks_exact(2)
            .map(|p| combine(&p[0], &p[1]))
            .collect();
        if odd {
            next.push(level.pop().expect("odd level has a last element"));
        }
        level = next;
    }
    let mut it = level.into_iter();
    let first = it.next()?;
    Some(it.fold(first, |acc, e| combine(&acc, &e)))
}

fn scan_rec<E, Er, F>(elems: Vec<E>, combine: &F, threshold: usize) -> Result<Vec<E>, Er>
where
    E: Clone + Send + Sync,
    Er: Send,
    F: Fn(&E, &E) -> Result<E, Er> + Sync,
{
    let n = elems.len();
    if n < threshold {
        return sequential_scan(elems, combine);
    }

    // Up-sweep: reduce adjacent pairs.
    let pairs: Vec<E> = elems
        .par_chunks_exact(2)
        .map(|p| combine(&p[0], &p[1]))
        .collect::<Result<_, Er>>()?;
    // scanned[i] = e[0] ⊗ … ⊗ e[2i+1]
    let scanned = scan_rec(pairs, combine, threshold)?;

    // Down-sweep: even positions 2i (i ≥ 1) need one more combine.
    let evens: Vec<E> = (1..n.div_ceil(2))
        .into_par_iter()
        .map(|i| combine(&scanned[i - 1], &elems[2 * i]))
        .collect::<Result<_, Er>>()?;

    let mut out = Vec::with_capacity(n);
    let mut odd = scanned.into_iter();
    let mut even = evens.into_iter();
    let mut elems = elems.into_iter();
    out.push(elems.next().expect("non-empty"));
    for k in 1..n {
        if k % 2 == 1 {
            out.push(odd.next().expect("odd prefix"));
        } else {
            out.push(even.next().expect("even prefix"));
        }
    }
    Ok(out)
}
