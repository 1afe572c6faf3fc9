//! Analytic gradients against central finite differences in double precision.

use ketod_core::tokens::PAD_ID;
use ketod_model::transformer::teacher_forcing;
use ketod_model::{forward, gradients, nll_loss, ModelConfig, Params};

/// Relative error with a floor on the denominator so that gradients which are
/// zero up to rounding are compared absolutely.
const REL_FLOOR: f64 = 1e-7;
const EPS: f64 = 1e-4;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 16,
        max_src_len: 32,
        max_tgt_len: 16,
        dropout: 0.0,
        label_smoothing: 0.0,
        tie_embeddings: false,
    }
}

fn smoothed_loss(params: &Params<f64>, src: &[u32], input: &[u32], output: &[u32]) -> f64 {
    let ls = params.config.label_smoothing;
    let logits = forward(params, src, input).unwrap();
    if ls == 0.0 {
        return nll_loss(&logits, output).unwrap();
    }
    let mut sum = 0.0;
    let mut n = 0.0;
    for (i, &t) in output.iter().enumerate() {
        if t == PAD_ID {
            continue;
        }
        let p = logits.probabilities(i);
        let v = p.len() as f64;
        sum += -(1.0 - ls) * p[t as usize].ln() - ls / v * p.iter().map(|q| q.ln()).sum::<f64>();
        n += 1.0;
    }
    sum / n
}

/// Largest relative error over every parameter, with the offending tensor.
fn max_relative_error(config: &ModelConfig, seed: u64) -> (f64, String) {
    let mut params = Params::<f64>::init(config, seed).unwrap();
    // nudge gains and biases off their initial constants so their gradients are generic
    for (i, x) in params.data.iter_mut().enumerate() {
        *x += 0.05 * ((i as f64) * 0.7).sin();
    }
    let src = [4, 9, 12, 5, 10, 13, 7, PAD_ID, PAD_ID];
    let (input, output) = teacher_forcing(&[7, 11, 9, 14]);
    let (loss, grads) = gradients(&params, &src, &input, &output).unwrap();
    assert!((loss - smoothed_loss(&params, &src, &input, &output)).abs() < 1e-12);

    let mut worst = (0.0f64, String::new());
    for info in params.layout.tensors.clone() {
        for k in info.offset..info.offset + info.len {
            let orig = params.data[k];
            params.data[k] = orig + EPS;
            let up = smoothed_loss(&params, &src, &input, &output);
            params.data[k] = orig - EPS;
            let down = smoothed_loss(&params, &src, &input, &output);
            params.data[k] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let analytic = grads.data[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > worst.0 {
                worst = (
                    rel,
                    format!(
                        "{}[{}] analytic {analytic:e} numeric {numeric:e}",
                        info.name,
                        k - info.offset
                    ),
                );
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let (rel, at) = max_relative_error(&tiny_config(), 11);
    println!("max relative error {rel:e} at {at}");
    assert!(rel < 1e-4, "max relative error {rel:e} at {at}");
}

#[test]
fn tied_and_smoothed_gradients_match_finite_differences() {
    let config = ModelConfig {
        tie_embeddings: true,
        label_smoothing: 0.1,
        ..tiny_config()
    };
    let (rel, at) = max_relative_error(&config, 12);
    assert!(rel < 1e-4, "max relative error {rel:e} at {at}");
}

#[test]
fn absent_token_embedding_rows_have_zero_gradient() {
    let params = Params::<f64>::init(&tiny_config(), 3).unwrap();
    let (input, output) = teacher_forcing(&[7, 8]);
    let (_, grads) = gradients(&params, &[9, 10], &input, &output).unwrap();
    let d = 8;
    let src_rows = params.layout.range(params.layout.src_emb);
    let src_grad = &grads.data[src_rows];
    for id in (0..16).filter(|i| ![9, 10].contains(i)) {
        assert!(src_grad[id * d..(id + 1) * d].iter().all(|&g| g == 0.0), "src row {id}");
    }
    let tgt_grad = &grads.data[params.layout.range(params.layout.tgt_emb)];
    for id in (0..16).filter(|i| ![1, 7, 8].contains(i)) {
        assert!(tgt_grad[id * d..(id + 1) * d].iter().all(|&g| g == 0.0), "tgt row {id}");
    }
}
