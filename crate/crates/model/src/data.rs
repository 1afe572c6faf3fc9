//! Bridges rendered token pairs and id-level training examples.

use ketod_core::eval::{corpus_bleu, entity_f1};
use ketod_core::knowledge::Ontology;
use ketod_core::serialize::{decode, encode, truncate_context, Vocabulary};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::train::{Scorer, ValidationScores};
use crate::transformer::Example;

/// Truncates sources to `max_src_len` and targets so that `<BOS> target` fits
/// in `max_tgt_len`, then maps tokens to ids.
pub fn encode_pairs(vocab: &Vocabulary, pairs: &[(Vec<String>, Vec<String>)], config: &ModelConfig) -> Vec<Example> {
    pairs
        .iter()
        .map(|(src, tgt)| {
            let src = truncate_context(src, config.max_src_len);
            let keep = tgt.len().min(config.max_tgt_len.saturating_sub(1));
            Example {
                src: encode(vocab, &src),
                tgt: encode(vocab, &tgt[..keep]),
            }
        })
        .collect()
}

pub fn decode_all(vocab: &Vocabulary, seqs: &[Vec<u32>]) -> Result<Vec<Vec<String>>> {
    Ok(seqs
        .iter()
        .map(|s| decode(vocab, s))
        .collect::<ketod_core::Result<_>>()?)
}

/// BLEU and entity F1 over decoded tokens.
pub struct TokenScorer<'a> {
    pub vocab: &'a Vocabulary,
    pub ontology: &'a Ontology,
}

impl Scorer for TokenScorer<'_> {
    fn score(&self, hyps: &[Vec<u32>], valid: &[Example]) -> Result<ValidationScores> {
        let h = decode_all(self.vocab, hyps)?;
        let refs: Vec<Vec<u32>> = valid.iter().map(|e| e.tgt.clone()).collect();
        let r = decode_all(self.vocab, &refs)?;
        Ok(ValidationScores {
            bleu: corpus_bleu(&h, &r)?,
            entity_f1: Some(entity_f1(&h, &r, self.ontology)?),
        })
    }
}
