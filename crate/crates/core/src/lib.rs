//! Entity-skeleton extraction and skeleton-conditioned visual story
//! generation.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: tensors, reverse-mode tape, LSTM layers, Adam, gradient
//!   checking and checkpoints.
//! * [`skeleton`]: mention detection, rule-based coreference chains, central
//!   chain selection and the surface / nominalized / abstract skeletons.
//! * [`corpus`]: JSON-lines story corpora, vocabularies and padded batches.
//! * [`models`]: the baseline, skeleton-informed, multitask and glocal
//!   hierarchical attention generators.
//! * [`train`]: the training loop.
//! * [`eval`]: METEOR-lite, skeleton distance, entity diversity, noun and
//!   pronoun shares, attention export.
//! * [`cli`]: the `skelgen` command-line surface.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod models;
pub mod skeleton;
pub mod train;
