//! Pre-LN transformer encoder-decoder: forward pass, teacher-forced loss and
//! exact gradients.
//!
//! Source `<PAD>` positions are removed before encoding (each kept token keeps
//! its original position), which is the same as masking them as attention keys.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ketod_core::tokens::{BOS_ID, EOS_ID, PAD_ID};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::ops::{
    add_in_place, attend, attend_backward, layer_norm, layer_norm_backward, linear, linear_backward, position_row,
    relu_in_place, Attention, NormCache,
};
use crate::params::{AttnIdx, FfIdx, Grads, LinearIdx, NormIdx, Params};
use crate::scalar::{gemm, Mat, MatMut, Scalar};

/// A source context and its target response, both without `<BOS>`/`<EOS>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// Decoder input `<BOS> y` and expected output `y <EOS>`.
pub fn teacher_forcing(tgt: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(tgt.len() + 1);
    input.push(BOS_ID);
    input.extend_from_slice(tgt);
    let mut output = tgt.to_vec();
    output.push(EOS_ID);
    (input, output)
}

/// Next-token scores, one row of `vocab` values per decoder position.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub data: Vec<T>,
    pub rows: usize,
    pub vocab: usize,
}

impl<T: Scalar> Logits<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    /// Softmax of row `i`, computed in `f64`.
    pub fn probabilities(&self, i: usize) -> Vec<f64> {
        let row = self.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

struct AttnCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    att: Attention<T>,
}

struct EncCache<T> {
    ln1: NormCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: NormCache<T>,
    hidden: Vec<T>,
    drop2: Option<Vec<T>>,
}

struct DecCache<T> {
    ln1: NormCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: NormCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: NormCache<T>,
    hidden: Vec<T>,
    drop3: Option<Vec<T>>,
}

struct Trace<T> {
    src: Vec<u32>,
    src_drop: Option<Vec<T>>,
    enc: Vec<EncCache<T>>,
    enc_norm: NormCache<T>,
    tgt: Vec<u32>,
    tgt_drop: Option<Vec<T>>,
    dec: Vec<DecCache<T>>,
    dec_norm: NormCache<T>,
    logits: Logits<T>,
}

/// Checks ids and lengths; returns the kept source tokens and their positions.
pub(crate) fn prepare_source(config: &ModelConfig, src: &[u32]) -> Result<(Vec<u32>, Vec<usize>)> {
    if src.is_empty() {
        return Err(ModelError::EmptySource);
    }
    if src.len() > config.max_src_len {
        return Err(ModelError::SequenceTooLong {
            len: src.len(),
            max: config.max_src_len,
        });
    }
    check_ids(config, src)?;
    let (positions, tokens): (Vec<usize>, Vec<u32>) = src
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != PAD_ID)
        .map(|(i, &t)| (i, t))
        .unzip();
    if tokens.is_empty() {
        return Err(ModelError::AllPadSource);
    }
    Ok((tokens, positions))
}

fn check_ids(config: &ModelConfig, ids: &[u32]) -> Result<()> {
    match ids.iter().find(|&&t| t as usize >= config.vocab_size) {
        Some(&id) => Err(ModelError::IdOutOfRange {
            id,
            vocab: config.vocab_size,
        }),
        None => Ok(()),
    }
}

fn check_prefix(config: &ModelConfig, prefix: &[u32]) -> Result<()> {
    if prefix.first() != Some(&BOS_ID) {
        return Err(ModelError::MissingBos);
    }
    if prefix.len() > config.max_tgt_len {
        return Err(ModelError::SequenceTooLong {
            len: prefix.len(),
            max: config.max_tgt_len,
        });
    }
    check_ids(config, prefix)
}

fn split_pair<T>(data: &mut [T], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start);
    let (left, right) = data.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

pub(crate) struct Runner<'a, T> {
    pub p: &'a Params<T>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a, T: Scalar> Runner<'a, T> {
    pub fn eval(p: &'a Params<T>) -> Self {
        Runner { p, rng: None }
    }

    pub fn train(p: &'a Params<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Runner { p, rng: Some(rng) }
    }

    fn d(&self) -> usize {
        self.p.config.d_model
    }

    fn dropout(&mut self, x: &mut [T]) -> Option<Vec<T>> {
        let rate = self.p.config.dropout;
        let rng = self.rng.as_deref_mut()?;
        if rate == 0.0 {
            return None;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = x
            .iter()
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        for (v, &m) in x.iter_mut().zip(&mask) {
            *v = *v * m;
        }
        Some(mask)
    }

    pub fn embed(&self, table: usize, ids: &[u32], positions: impl Iterator<Item = usize>) -> Vec<T> {
        let d = self.d();
        let scale = T::of((d as f64).sqrt());
        let emb = self.p.t(table);
        let mut out = vec![T::zero(); ids.len() * d];
        for ((row, &id), pos) in out.chunks_exact_mut(d).zip(ids).zip(positions) {
            position_row(pos, d, row);
            let e = &emb[id as usize * d..(id as usize + 1) * d];
            for (o, &v) in row.iter_mut().zip(e) {
                *o = *o + v * scale;
            }
        }
        out
    }

    pub fn norm(&self, idx: NormIdx, x: &[T]) -> NormCache<T> {
        layer_norm(x, self.d(), self.p.t(idx.gain), self.p.t(idx.bias))
    }

    pub fn linear(&self, idx: LinearIdx, x: &[T], n: usize) -> Vec<T> {
        let shape = &self.p.layout.tensors[idx.w].shape;
        linear(x, n, self.p.t(idx.w), self.p.t(idx.b), shape[0], shape[1])
    }

    fn mha(&self, idx: AttnIdx, xq: &[T], n: usize, xkv: &[T], m: usize, causal: bool) -> (Vec<T>, AttnCache<T>) {
        let q = self.linear(idx.q, xq, n);
        let k = self.linear(idx.k, xkv, m);
        let v = self.linear(idx.v, xkv, m);
        let att = attend(&q, &k, &v, n, m, self.d(), self.p.config.heads, causal);
        let out = self.linear(idx.o, &att.context, n);
        (out, AttnCache { q, k, v, att })
    }

    pub fn ff(&self, idx: FfIdx, x: &[T], n: usize) -> (Vec<T>, Vec<T>) {
        let mut hidden = self.linear(idx.l1, x, n);
        relu_in_place(&mut hidden);
        let out = self.linear(idx.l2, &hidden, n);
        (out, hidden)
    }

    fn encode(&mut self, tokens: &[u32], positions: &[usize]) -> (Option<Vec<T>>, Vec<EncCache<T>>, NormCache<T>) {
        let n = tokens.len();
        let mut x = self.embed(self.p.layout.src_emb, tokens, positions.iter().copied());
        let src_drop = self.dropout(&mut x);
        let mut caches = Vec::with_capacity(self.p.layout.enc.len());
        for l in 0..self.p.layout.enc.len() {
            let idx = self.p.layout.enc[l];
            let ln1 = self.norm(idx.ln1, &x);
            let (mut a, attn) = self.mha(idx.attn, &ln1.y, n, &ln1.y, n, false);
            let drop1 = self.dropout(&mut a);
            add_in_place(&mut x, &a);
            let ln2 = self.norm(idx.ln2, &x);
            let (mut f, hidden) = self.ff(idx.ff, &ln2.y, n);
            let drop2 = self.dropout(&mut f);
            add_in_place(&mut x, &f);
            caches.push(EncCache {
                ln1,
                attn,
                drop1,
                ln2,
                hidden,
                drop2,
            });
        }
        let enc_norm = self.norm(self.p.layout.enc_norm, &x);
        (src_drop, caches, enc_norm)
    }

    /// Final-norm encoder states of the non-PAD source tokens.
    pub fn memory(&mut self, tokens: &[u32], positions: &[usize]) -> Vec<T> {
        self.encode(tokens, positions).2.y
    }

    pub fn project(&self, y: &[T], n: usize) -> Logits<T> {
        let (d, vocab) = (self.d(), self.p.config.vocab_size);
        let bias = self.p.t(self.p.layout.out_b);
        let data = match self.p.layout.out_w {
            Some(w) => linear(y, n, self.p.t(w), bias, d, vocab),
            None => {
                let mut out = Vec::with_capacity(n * vocab);
                for _ in 0..n {
                    out.extend_from_slice(bias);
                }
                gemm(
                    T::one(),
                    Mat::new(y, n, d),
                    Mat::new(self.p.t(self.p.layout.tgt_emb), vocab, d).t(),
                    T::one(),
                    MatMut::new(&mut out, n, vocab),
                );
                out
            }
        };
        Logits { data, rows: n, vocab }
    }

    fn run(&mut self, src: &[u32], prefix: &[u32]) -> Result<Trace<T>> {
        let (tokens, positions) = prepare_source(&self.p.config, src)?;
        check_prefix(&self.p.config, prefix)?;
        let (src_drop, enc, enc_norm) = self.encode(&tokens, &positions);
        let memory = &enc_norm.y;
        let (n, m) = (prefix.len(), tokens.len());

        let mut y = self.embed(self.p.layout.tgt_emb, prefix, 0..n);
        let tgt_drop = self.dropout(&mut y);
        let mut dec = Vec::with_capacity(self.p.layout.dec.len());
        for l in 0..self.p.layout.dec.len() {
            let idx = self.p.layout.dec[l];
            let ln1 = self.norm(idx.ln1, &y);
            let (mut a, self_attn) = self.mha(idx.self_attn, &ln1.y, n, &ln1.y, n, true);
            let drop1 = self.dropout(&mut a);
            add_in_place(&mut y, &a);
            let ln2 = self.norm(idx.ln2, &y);
            let (mut c, cross) = self.mha(idx.cross, &ln2.y, n, memory, m, false);
            let drop2 = self.dropout(&mut c);
            add_in_place(&mut y, &c);
            let ln3 = self.norm(idx.ln3, &y);
            let (mut f, hidden) = self.ff(idx.ff, &ln3.y, n);
            let drop3 = self.dropout(&mut f);
            add_in_place(&mut y, &f);
            dec.push(DecCache {
                ln1,
                self_attn,
                drop1,
                ln2,
                cross,
                drop2,
                ln3,
                hidden,
                drop3,
            });
        }
        let dec_norm = self.norm(self.p.layout.dec_norm, &y);
        let logits = self.project(&dec_norm.y, n);
        Ok(Trace {
            src: tokens,
            src_drop,
            enc,
            enc_norm,
            tgt: prefix.to_vec(),
            tgt_drop,
            dec,
            dec_norm,
            logits,
        })
    }
}

/// Logits for every position of `tgt_prefix` (which starts with `<BOS>`).
pub fn forward<T: Scalar>(params: &Params<T>, src: &[u32], tgt_prefix: &[u32]) -> Result<Logits<T>> {
    Ok(Runner::eval(params).run(src, tgt_prefix)?.logits)
}

/// Mean negative log-likelihood over the non-PAD target positions.
pub fn nll_loss<T: Scalar>(logits: &Logits<T>, target: &[u32]) -> Result<T> {
    let (sum, count) = loss_and_dlogits(logits, target, 0.0, None)?;
    Ok(T::of(sum / count as f64))
}

/// Summed loss and non-PAD count; optionally writes `weight * dloss/dlogits`.
fn loss_and_dlogits<T: Scalar>(
    logits: &Logits<T>,
    target: &[u32],
    smoothing: f64,
    mut dlogits: Option<(&mut [T], f64)>,
) -> Result<(f64, usize)> {
    if logits.rows != target.len() {
        return Err(ModelError::LengthMismatch {
            logits: logits.rows,
            target: target.len(),
        });
    }
    let v = logits.vocab;
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &t) in target.iter().enumerate() {
        if t == PAD_ID {
            continue;
        }
        if t as usize >= v {
            return Err(ModelError::IdOutOfRange { id: t, vocab: v });
        }
        count += 1;
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
        let sum_exp = row.iter().fold(T::zero(), |a, &x| a + (x - max).exp());
        let log_z = max + sum_exp.ln();
        let nll = (log_z - row[t as usize]).as_f64();
        sum += if smoothing > 0.0 {
            let mean_nll = (log_z - row.iter().fold(T::zero(), |a, &x| a + x) / T::of(v as f64)).as_f64();
            (1.0 - smoothing) * nll + smoothing * mean_nll
        } else {
            nll
        };
        if let Some((d, weight)) = dlogits.as_mut() {
            let w = T::of(*weight);
            let off = T::of(smoothing / v as f64);
            let on = T::of(1.0 - smoothing);
            for (j, g) in d[i * v..(i + 1) * v].iter_mut().enumerate() {
                let p = (row[j] - log_z).exp();
                let q = if j == t as usize { on + off } else { off };
                *g = w * (p - q);
            }
        }
    }
    Ok((sum, count))
}

/// Mean loss and its exact gradient for one example (no dropout).
pub fn gradients<T: Scalar>(params: &Params<T>, src: &[u32], tgt_in: &[u32], tgt_out: &[u32]) -> Result<(T, Grads<T>)> {
    let count = tgt_out.iter().filter(|&&t| t != PAD_ID).count();
    if count == 0 {
        return Err(ModelError::EmptyTarget);
    }
    let mut grads = Grads::zeros_like(params);
    let sum = accumulate(
        &mut Runner::eval(params),
        src,
        tgt_in,
        tgt_out,
        1.0 / count as f64,
        &mut grads,
    )?;
    Ok((T::of(sum / count as f64), grads))
}

/// Adds `weight * ∇(summed loss)` to `grads`; returns the summed loss.
pub(crate) fn accumulate<T: Scalar>(
    runner: &mut Runner<'_, T>,
    src: &[u32],
    tgt_in: &[u32],
    tgt_out: &[u32],
    weight: f64,
    grads: &mut Grads<T>,
) -> Result<f64> {
    let trace = runner.run(src, tgt_in)?;
    let logits = &trace.logits;
    let mut dlogits = vec![T::zero(); logits.data.len()];
    let (sum, count) = loss_and_dlogits(
        logits,
        tgt_out,
        runner.p.config.label_smoothing,
        Some((&mut dlogits, weight)),
    )?;
    if count == 0 {
        return Err(ModelError::EmptyTarget);
    }
    if !sum.is_finite() {
        return Err(ModelError::NonFiniteLoss { step: 0, loss: sum });
    }
    backward(runner.p, &trace, &dlogits, grads);
    Ok(sum)
}

fn drop_backward<T: Scalar>(mask: &Option<Vec<T>>, g: &mut [T]) {
    if let Some(mask) = mask {
        for (x, &m) in g.iter_mut().zip(mask) {
            *x = *x * m;
        }
    }
}

fn linear_bwd<T: Scalar>(p: &Params<T>, grads: &mut Grads<T>, idx: LinearIdx, x: &[T], dy: &[T], n: usize) -> Vec<T> {
    let shape = &p.layout.tensors[idx.w].shape;
    let (dw, db) = split_pair(&mut grads.data, p.layout.range(idx.w), p.layout.range(idx.b));
    linear_backward(x, dy, n, p.t(idx.w), shape[0], shape[1], dw, db)
}

fn norm_bwd<T: Scalar>(p: &Params<T>, grads: &mut Grads<T>, idx: NormIdx, cache: &NormCache<T>, dy: &[T]) -> Vec<T> {
    let (dg, db) = split_pair(&mut grads.data, p.layout.range(idx.gain), p.layout.range(idx.bias));
    layer_norm_backward(cache, dy, p.config.d_model, p.t(idx.gain), dg, db)
}

#[allow(clippy::too_many_arguments)]
fn mha_bwd<T: Scalar>(
    p: &Params<T>,
    grads: &mut Grads<T>,
    idx: AttnIdx,
    cache: &AttnCache<T>,
    xq: &[T],
    n: usize,
    xkv: &[T],
    m: usize,
    dout: &[T],
) -> (Vec<T>, Vec<T>) {
    let (d, heads) = (p.config.d_model, p.config.heads);
    let dctx = linear_bwd(p, grads, idx.o, &cache.att.context, dout, n);
    let (dq, dk, dv) = attend_backward(&cache.att, &dctx, &cache.q, &cache.k, &cache.v, n, m, d, heads);
    let dxq = linear_bwd(p, grads, idx.q, xq, &dq, n);
    let mut dxkv = linear_bwd(p, grads, idx.k, xkv, &dk, m);
    add_in_place(&mut dxkv, &linear_bwd(p, grads, idx.v, xkv, &dv, m));
    (dxq, dxkv)
}

fn ff_bwd<T: Scalar>(
    p: &Params<T>,
    grads: &mut Grads<T>,
    idx: FfIdx,
    x: &[T],
    hidden: &[T],
    dout: &[T],
    n: usize,
) -> Vec<T> {
    let mut dh = linear_bwd(p, grads, idx.l2, hidden, dout, n);
    for (g, &h) in dh.iter_mut().zip(hidden) {
        if h <= T::zero() {
            *g = T::zero();
        }
    }
    linear_bwd(p, grads, idx.l1, x, &dh, n)
}

fn embed_bwd<T: Scalar>(p: &Params<T>, grads: &mut Grads<T>, table: usize, ids: &[u32], dx: &[T]) {
    let d = p.config.d_model;
    let scale = T::of((d as f64).sqrt());
    let g = grads.slice_mut(&p.layout, table);
    for (&id, row) in ids.iter().zip(dx.chunks_exact(d)) {
        for (a, &b) in g[id as usize * d..(id as usize + 1) * d].iter_mut().zip(row) {
            *a = *a + b * scale;
        }
    }
}

fn backward<T: Scalar>(p: &Params<T>, tr: &Trace<T>, dlogits: &[T], grads: &mut Grads<T>) {
    let (d, vocab) = (p.config.d_model, p.config.vocab_size);
    let n = tr.tgt.len();
    let m = tr.src.len();
    let layout = &p.layout;

    // output projection
    let y = &tr.dec_norm.y;
    let dy = match layout.out_w {
        Some(w) => linear_bwd(p, grads, LinearIdx { w, b: layout.out_b }, y, dlogits, n),
        None => {
            let emb = p.t(layout.tgt_emb);
            gemm(
                T::one(),
                Mat::new(dlogits, n, vocab).t(),
                Mat::new(y, n, d),
                T::one(),
                MatMut::new(grads.slice_mut(layout, layout.tgt_emb), vocab, d),
            );
            let db = grads.slice_mut(layout, layout.out_b);
            for row in dlogits.chunks_exact(vocab) {
                add_in_place(db, row);
            }
            let mut dy = vec![T::zero(); n * d];
            gemm(
                T::one(),
                Mat::new(dlogits, n, vocab),
                Mat::new(emb, vocab, d),
                T::zero(),
                MatMut::new(&mut dy, n, d),
            );
            dy
        }
    };

    // decoder, last layer first; `dx` is the gradient of the residual stream
    let mut dx = norm_bwd(p, grads, layout.dec_norm, &tr.dec_norm, &dy);
    let mut dmemory = vec![T::zero(); m * d];
    let memory = &tr.enc_norm.y;
    for (idx, c) in layout.dec.iter().zip(&tr.dec).rev() {
        let mut g = dx.clone();
        drop_backward(&c.drop3, &mut g);
        let dln3 = ff_bwd(p, grads, idx.ff, &c.ln3.y, &c.hidden, &g, n);
        add_in_place(&mut dx, &norm_bwd(p, grads, idx.ln3, &c.ln3, &dln3));

        let mut g = dx.clone();
        drop_backward(&c.drop2, &mut g);
        let (dln2, dmem) = mha_bwd(p, grads, idx.cross, &c.cross, &c.ln2.y, n, memory, m, &g);
        add_in_place(&mut dmemory, &dmem);
        add_in_place(&mut dx, &norm_bwd(p, grads, idx.ln2, &c.ln2, &dln2));

        let mut g = dx.clone();
        drop_backward(&c.drop1, &mut g);
        let (dq, dkv) = mha_bwd(p, grads, idx.self_attn, &c.self_attn, &c.ln1.y, n, &c.ln1.y, n, &g);
        let mut dln1 = dq;
        add_in_place(&mut dln1, &dkv);
        add_in_place(&mut dx, &norm_bwd(p, grads, idx.ln1, &c.ln1, &dln1));
    }
    drop_backward(&tr.tgt_drop, &mut dx);
    embed_bwd(p, grads, layout.tgt_emb, &tr.tgt, &dx);

    // encoder
    let mut dx = norm_bwd(p, grads, layout.enc_norm, &tr.enc_norm, &dmemory);
    for (idx, c) in layout.enc.iter().zip(&tr.enc).rev() {
        let mut g = dx.clone();
        drop_backward(&c.drop2, &mut g);
        let dln2 = ff_bwd(p, grads, idx.ff, &c.ln2.y, &c.hidden, &g, m);
        add_in_place(&mut dx, &norm_bwd(p, grads, idx.ln2, &c.ln2, &dln2));

        let mut g = dx.clone();
        drop_backward(&c.drop1, &mut g);
        let (dq, dkv) = mha_bwd(p, grads, idx.attn, &c.attn, &c.ln1.y, m, &c.ln1.y, m, &g);
        let mut dln1 = dq;
        add_in_place(&mut dln1, &dkv);
        add_in_place(&mut dx, &norm_bwd(p, grads, idx.ln1, &c.ln1, &dln1));
    }
    drop_backward(&tr.src_drop, &mut dx);
    embed_bwd(p, grads, layout.src_emb, &tr.src, &dx);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Params<f64> {
        let mut c = ModelConfig::tiny(12);
        c.enc_layers = 1;
        c.dec_layers = 1;
        c.d_model = 8;
        c.heads = 2;
        c.d_ff = 16;
        Params::init(&c, 3).unwrap()
    }

    #[test]
    fn input_errors() {
        let p = tiny();
        assert!(matches!(forward(&p, &[], &[BOS_ID]), Err(ModelError::EmptySource)));
        assert!(matches!(forward(&p, &[0, 0], &[BOS_ID]), Err(ModelError::AllPadSource)));
        assert!(matches!(forward(&p, &[7], &[8]), Err(ModelError::MissingBos)));
        assert!(matches!(
            forward(&p, &[99], &[BOS_ID]),
            Err(ModelError::IdOutOfRange { id: 99, .. })
        ));
        assert!(matches!(
            gradients(&p, &[7, 8], &[BOS_ID, 0], &[0, 0]),
            Err(ModelError::EmptyTarget)
        ));
        let logits = forward(&p, &[7], &[BOS_ID]).unwrap();
        assert!(matches!(
            nll_loss(&logits, &[7, 8]),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn teacher_forcing_frames_target() {
        assert_eq!(teacher_forcing(&[9, 10]), (vec![BOS_ID, 9, 10], vec![9, 10, EOS_ID]));
    }

    #[test]
    fn loss_of_uniform_logits_is_log_vocab() {
        let logits = Logits {
            data: vec![0.25f64; 3 * 12],
            rows: 3,
            vocab: 12,
        };
        let loss = nll_loss(&logits, &[7, 0, 9]).unwrap();
        assert!((loss - (12f64).ln()).abs() < 1e-12);
    }
}
