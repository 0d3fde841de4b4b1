//! Keyword-oriented multimodal euphemism identification.
//!
//! Sentences with a masked keyword are classified into target-keyword
//! categories using the sentence text plus frozen image and speech evidence
//! attached to the masked word's surface form. Training labels come for free
//! by masking known target keywords; evaluation masks euphemisms instead.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod numerics;
pub mod prediction;
pub mod synthetic;
pub mod trainer;

pub use error::{KomeiError, Result};
