//! Core algorithms for information-decomposed multimodal contrastive training.
//!
//! The crate is split along the training pipeline:
//!
//! - [`infodecomp`]: exact entropies and mutual informations on small
//!   discrete joint tables, with machine verification of the decomposition
//!   identities the training objective rests on.
//! - [`tensor`]: a minimal dense array plus a reverse-mode tape covering
//!   exactly the primitives the losses need, with finite-difference checking.
//! - [`encoder`]: siamese student/teacher MLP encoders with EMA momentum
//!   updates on a cosine schedule.
//! - [`moe`]: the MoE projector: softmax student router, Sinkhorn-balanced
//!   teacher router, top-1 expert selection, per-expert FFN forward.
//! - [`losses`]: routing-consistency and intra-modality contrastive losses.
//! - [`synthdata`]: deterministic synthetic multimodal data with a
//!   global/local view augmentation operator.
//! - [`trainer`]: the full training step: forward both branches, route,
//!   compute losses, backprop through the student, AdamW, EMA.
//! - [`metrics`]: routing purity, expert load entropy, linear probing.
//!
//! The crate is `no_std`-compatible (`alloc` required); all transcendental
//! math goes through [`math`] so results are identical with or without `std`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod encoder;
pub mod error;
pub mod infodecomp;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod moe;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::Error;
pub use tensor::{DenseArray, Graph, NodeId};
