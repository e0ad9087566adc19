//! Per-thread call counters for the optional code paths, so a caller can
//! check which parts of the pipeline a run actually touched.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    Spectral,
    Selection,
}

thread_local! {
    static COUNTS: Cell<[u64; 2]> = const { Cell::new([0; 2]) };
}

pub(crate) fn hit(path: Path) {
    COUNTS.with(|c| {
        let mut v = c.get();
        v[path as usize] += 1;
        c.set(v);
    });
}

/// Calls into `path` on this thread since the last [`reset`].
pub fn count(path: Path) -> u64 {
    COUNTS.with(|c| c.get()[path as usize])
}

/// All counters on this thread.
pub fn snapshot() -> [u64; 2] {
    COUNTS.with(|c| c.get())
}

/// Adds counts gathered on another thread.
pub fn absorb(counts: [u64; 2]) {
    COUNTS.with(|c| {
        let v = c.get();
        c.set([v[0] + counts[0], v[1] + counts[1]]);
    });
}

pub fn reset() {
    COUNTS.with(|c| c.set([0; 2]));
}
