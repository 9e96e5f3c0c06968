//! Per-thread tally of floating-point operations performed by the kernels in
//! this module.
//!
//! Every kernel charges its cost here under the convention documented in
//! [`crate::flops::CostConvention`], so a forward pass can be measured and
//! compared against the analytic model. The tally is thread-local; work done on
//! other threads is not seen.

use std::cell::Cell;

thread_local! {
    static TALLY: Cell<u64> = const { Cell::new(0) };
    static PAUSED: Cell<u32> = const { Cell::new(0) };
}

pub(crate) fn record(flops: u64) {
    if PAUSED.with(Cell::get) == 0 {
        TALLY.with(|t| t.set(t.get() + flops));
    }
}

/// Runs `f` and returns its result with the number of flops it charged.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = TALLY.with(Cell::get);
    let out = f();
    let after = TALLY.with(Cell::get);
    (out, after - before)
}

/// Runs `f` without charging its work to the tally.
pub fn uncounted<R>(f: impl FnOnce() -> R) -> R {
    struct Resume;
    impl Drop for Resume {
        fn drop(&mut self) {
            PAUSED.with(|p| p.set(p.get() - 1));
        }
    }
    PAUSED.with(|p| p.set(p.get() + 1));
    let _resume = Resume;
    f()
}
