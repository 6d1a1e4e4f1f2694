//! Hybrid tonal + transient + residual waveform codec.
//!
//! Signals are decomposed into a tonal layer (hidden Markov chains over MDCT
//! rows), a transient layer (a hidden Markov tree over wavelet coefficients
//! with a forbidden residual-to-transient transition) and an LPC-modeled
//! residual. The model parameters double as the entropy-coding and
//! bit-allocation side information, and every closed-form statistic the
//! models provide is checkable against Monte Carlo and brute-force reference
//! implementations shipped in [`reference`] and wired up in [`validate`].

mod alloc;
pub mod balance;
pub mod bitio;
pub mod codec;
pub mod error;
pub mod parallel;
pub mod reference;
pub mod signal;
pub mod sim;
pub mod tonal;
pub mod transforms;
pub mod transient;
pub mod validate;

pub use error::{Error, Result};
pub use signal::{snr_db, Signal};
