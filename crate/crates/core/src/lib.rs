//! Standalone RIS operation: wideband geometric channels, decoupled RIS beam
//! selection, a synthetic camera/detector front end, the permutation-invariant
//! beam-set network and a discrete-event replay of 5G NR initial access with a
//! transparent surface in the loop.

pub mod beam;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod net;
pub mod protocol;
pub mod scene;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex<f64>;
