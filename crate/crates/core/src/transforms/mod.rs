//! Orthonormal analysis/synthesis transforms: the lapped MDCT used by the
//! tonal layer and the dyadic wavelet transform used by the transient layer.
//!
//! Both transforms are pure functions of immutable inputs; distinct frames
//! may be processed concurrently.

mod daubechies;
pub mod dwt;
pub mod mdct;

pub use dwt::{dwt_forward, dwt_inverse, Wavelet, WaveletTree};
pub use mdct::{Mdct, MdctGrid};
