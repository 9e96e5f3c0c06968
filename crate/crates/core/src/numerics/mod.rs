//! Minimal dense numeric kernel.

pub mod counter;
mod io;
mod ops;
mod random;
mod tensor;

pub use io::{decode_tnsr, encode_tnsr, read_tnsr, write_tnsr};
pub use ops::*;
pub use random::{gaussian, RandomStream};
pub use tensor::Tensor;

#[doc(hidden)]
pub mod test_hooks {
    //! Fault injection used by the self-test to prove that it can fail.
    use std::sync::atomic::{AtomicBool, Ordering};

    static CORRUPT_SOFTMAX: AtomicBool = AtomicBool::new(false);

    pub fn set_corrupt_softmax(on: bool) {
        CORRUPT_SOFTMAX.store(on, Ordering::SeqCst);
    }

    pub(crate) fn softmax_corrupted() -> bool {
        CORRUPT_SOFTMAX.load(Ordering::Relaxed)
    }
}
