//! Event-based compression of binary event matrices.
//!
//! * [`bitio`]: MSB-first bit writer and reader.
//! * [`event_matrix`]: the binary `N × T` matrix model.
//! * [`codec`]: dense / coordinate / compressed-time / compressed-units
//!   payloads and the `.spkm` container.
//! * [`cost_model`]: analytic costs and the storage-regime sweep.
//! * [`toynet`]: a small binary autoencoder trained with a surrogate gradient
//!   and rate-controlling sparsity losses.
//! * [`synthdata`]: synthetic piano-like clips, features and note grids.
//! * [`midi`]: Standard MIDI File reader and onset grids.
//! * [`analysis`]: SI-SNR, event/onset cross-correlation and selectivity.

pub mod analysis;
pub mod bitio;
pub mod codec;
pub mod cost_model;
pub mod error;
pub mod event_matrix;
pub mod midi;
pub mod synthdata;
pub mod toynet;

pub use error::{Error, Result};
pub use event_matrix::EventMatrix;
