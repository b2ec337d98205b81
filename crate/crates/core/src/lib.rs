//! Token activation probing for BERT-style encoders.
//!
//! This crate is `#![no_std]` (it needs `alloc`) and holds everything that is
//! pure computation:
//!
//! - [`wordpiece`]: uncased BERT tokenization (basic normalization followed by
//!   greedy longest-match WordPiece).
//! - [`encoder`]: a straight-line f32 forward pass over a BERT encoder that
//!   keeps every intermediate hidden-state matrix.
//! - [`metrics`]: per-token activation strength, top-k ranking, upper-quartile
//!   HIGH/LOW buckets, activation shift between two inputs and the HIGH-bucket
//!   contribution ratio.
//!
//! File IO, checkpoint decoding, reports and the CLI live in the `afn` crate.

#![no_std]

extern crate alloc;

pub mod encoder;
pub mod matrix;
pub mod metrics;
pub mod wordpiece;

pub use encoder::{forward, forward_with_hook, layer_slice, HiddenStates, ModelConfig, ModelWeights};
pub use matrix::Matrix;
pub use wordpiece::{encode, Encoding, Padding, Vocab};
