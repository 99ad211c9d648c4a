//! Discriminative neural clustering (DNC) for speaker diarisation.
//!
//! Clustering a sequence of speaker embeddings is cast as sequence-to-sequence
//! classification: a Transformer encoder reads the embeddings and a decoder
//! emits one cluster label per input, with labels numbered in order of first
//! appearance so that training needs no permutation search.
//!
//! The crate also contains the data augmentation schemes used to train such a
//! model on few meetings (sub-sequence randomisation, input-vector
//! randomisation and random rotations of the hypersphere), a synthetic meeting
//! generator, a refined spectral-clustering baseline and a diarisation scorer.

pub mod augment;
pub mod baseline;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod score;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{DncError, Result};
pub use labels::{canonicalize, is_canonical, relabel_equivalent};
pub use types::{CanonicalLabelSequence, EmbeddingSequence, IdentitySequence, MeetingRecord, Span};
