//! Per-thread counter of full passes over a dataset that evaluate component
//! densities. Used to check the relative cost of the solvers.

use std::cell::Cell;

thread_local! {
    static SWEEPS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record() {
    SWEEPS.with(|c| c.set(c.get() + 1));
}

/// Density sweeps performed on the current thread so far.
pub fn count() -> u64 {
    SWEEPS.with(Cell::get)
}

/// Runs `f` and returns its output together with the number of sweeps it did.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = count();
    let out = f();
    (out, count() - before)
}
