//! Greedy decoding with cached decoder keys and values.

use ketod_core::tokens::{BOS_ID, EOS_ID};

use crate::error::Result;
use crate::ops::{add_in_place, argmax, attend};
use crate::params::Params;
use crate::scalar::Scalar;
use crate::transformer::{prepare_source, Runner};

struct LayerState<T> {
    self_k: Vec<T>,
    self_v: Vec<T>,
    cross_k: Vec<T>,
    cross_v: Vec<T>,
}

/// Generates up to `max_len` tokens (excluding `<BOS>`/`<EOS>`), always taking
/// the highest-scoring token, lowest id on ties. Stops at `<EOS>`.
pub fn greedy_generate<T: Scalar>(params: &Params<T>, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
    let config = &params.config;
    let (d, heads) = (config.d_model, config.heads);
    let (tokens, positions) = prepare_source(config, src)?;
    let mut runner = Runner::eval(params);
    let memory = runner.memory(&tokens, &positions);
    let m = tokens.len();
    let mut layers: Vec<LayerState<T>> = params
        .layout
        .dec
        .iter()
        .map(|idx| LayerState {
            self_k: Vec::new(),
            self_v: Vec::new(),
            cross_k: runner.linear(idx.cross.k, &memory, m),
            cross_v: runner.linear(idx.cross.v, &memory, m),
        })
        .collect();

    let max_len = max_len.min(config.max_tgt_len);
    let mut out = Vec::new();
    let mut prev = BOS_ID;
    for t in 0..max_len {
        let mut x = runner.embed(params.layout.tgt_emb, &[prev], std::iter::once(t));
        for (idx, state) in params.layout.dec.iter().zip(&mut layers) {
            let a = runner.norm(idx.ln1, &x).y;
            let q = runner.linear(idx.self_attn.q, &a, 1);
            state.self_k.extend(runner.linear(idx.self_attn.k, &a, 1));
            state.self_v.extend(runner.linear(idx.self_attn.v, &a, 1));
            let ctx = attend(&q, &state.self_k, &state.self_v, 1, t + 1, d, heads, false).context;
            add_in_place(&mut x, &runner.linear(idx.self_attn.o, &ctx, 1));

            let b = runner.norm(idx.ln2, &x).y;
            let q = runner.linear(idx.cross.q, &b, 1);
            let ctx = attend(&q, &state.cross_k, &state.cross_v, 1, m, d, heads, false).context;
            add_in_place(&mut x, &runner.linear(idx.cross.o, &ctx, 1));

            let c = runner.norm(idx.ln3, &x).y;
            add_in_place(&mut x, &runner.ff(idx.ff, &c, 1).0);
        }
        let y = runner.norm(params.layout.dec_norm, &x).y;
        let logits = runner.project(&y, 1);
        let next = argmax(&logits.data) as u32;
        if next == EOS_ID {
            break;
        }
        out.push(next);
        prev = next;
    }
    Ok(out)
}
