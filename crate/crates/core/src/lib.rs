//! Data side of the knowledge-embedded dialogue toolkit.
//!
//! The modules follow the pipeline order:
//!
//! - [`corpus`]: dialogue corpora, validation and splitting.
//! - [`knowledge`]: restaurant knowledge base, ontology and constraint queries.
//! - [`camrest`]: import adapters for the upstream CamRest release layouts.
//! - [`augment`]: delexicalization into templates and knowledge-embedded relexicalization.
//! - [`serialize`]: context/target pairs, `<USR>`/`<SYS>`/`<DTA>` rendering and vocabularies.
//! - [`eval`]: corpus BLEU, entity F1, Likert aggregation and comparison reports.

pub mod augment;
pub mod camrest;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod knowledge;
pub mod serialize;
pub mod tokens;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice. Used for manifests and vocabulary hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
