//! Fragile watermarking of neural-network parameters in the Walsh-Hadamard
//! domain.
//!
//! The flattened parameters are dealt into key-shuffled power-of-two blocks,
//! each block is transformed, its coefficients are scaled to integers, and
//! the bits of a hashed message are written into key-chosen low-order bits.
//! Any later change to the parameters disturbs the coefficients of every
//! block it touches, which breaks the recovered hash.
//!
//! ```no_run
//! use whstamp_core::{container, embed, extract, WatermarkConfig, WatermarkKey};
//!
//! let model = container::load_container("model.tsr")?;
//! let key = WatermarkKey::load("model.key")?;
//! let cfg = WatermarkConfig::default();
//! let marked = embed(&model, &key, b"vendor=acme;build=42", &cfg)?;
//! assert!(extract(&marked, &key, &cfg, None)?.verified);
//! # Ok::<(), whstamp_core::Error>(())
//! ```

pub mod attack;
pub mod codec;
pub mod container;
mod error;
pub mod fwht;
pub mod keys;
pub mod layout;
pub mod plan;
pub mod watermark;

pub use error::{Error, Result};
pub use keys::WatermarkKey;
pub use watermark::{ber, embed, embed_bits, extract, frame_payload, Bitstream, VerificationReport, WatermarkConfig};
