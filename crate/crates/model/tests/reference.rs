//! A second, loop-only implementation of the forward pass used as an oracle.

use ketod_core::tokens::{BOS_ID, PAD_ID};
use ketod_model::{forward, ModelConfig, Params};

struct Reference<'a> {
    p: &'a Params<f64>,
    d: usize,
    heads: usize,
}

type Matrix = Vec<Vec<f64>>;

impl Reference<'_> {
    fn w(&self, name: &str) -> &[f64] {
        self.p.get(name).unwrap_or_else(|| panic!("missing {name}"))
    }

    fn dense(&self, x: &Matrix, prefix: &str) -> Matrix {
        let w = self.w(&format!("{prefix}.weight"));
        let b = self.w(&format!("{prefix}.bias"));
        let out = b.len();
        x.iter()
            .map(|row| {
                (0..out)
                    .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i * out + j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, x: &Matrix, prefix: &str) -> Matrix {
        let g = self.w(&format!("{prefix}.gain"));
        let b = self.w(&format!("{prefix}.bias"));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) / (var + 1e-6).sqrt() * g[j] + b[j])
                    .collect()
            })
            .collect()
    }

    fn attention(&self, xq: &Matrix, xkv: &Matrix, prefix: &str, causal: bool) -> Matrix {
        let q = self.dense(xq, &format!("{prefix}.q"));
        let k = self.dense(xkv, &format!("{prefix}.k"));
        let v = self.dense(xkv, &format!("{prefix}.v"));
        let dh = self.d / self.heads;
        let mut ctx = vec![vec![0.0; self.d]; xq.len()];
        for h in 0..self.heads {
            for i in 0..xq.len() {
                let visible = if causal { i + 1 } else { xkv.len() };
                let scores: Vec<f64> = (0..visible)
                    .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let p = (s - max).exp() / z;
                    for c in 0..dh {
                        ctx[i][h * dh + c] += p * v[j][h * dh + c];
                    }
                }
            }
        }
        self.dense(&ctx, &format!("{prefix}.o"))
    }

    fn feed_forward(&self, x: &Matrix, prefix: &str) -> Matrix {
        let mut h = self.dense(x, &format!("{prefix}.ff1"));
        for row in &mut h {
            for v in row {
                *v = v.max(0.0);
            }
        }
        self.dense(&h, &format!("{prefix}.ff2"))
    }

    fn embed(&self, table: &str, ids: &[(usize, u32)]) -> Matrix {
        let e = self.w(table);
        ids.iter()
            .map(|&(pos, id)| {
                (0..self.d)
                    .map(|i| {
                        let rate = 10000f64.powf((2 * (i / 2)) as f64 / self.d as f64);
                        let pe = if i % 2 == 0 {
                            (pos as f64 / rate).sin()
                        } else {
                            (pos as f64 / rate).cos()
                        };
                        e[id as usize * self.d + i] * (self.d as f64).sqrt() + pe
                    })
                    .collect()
            })
            .collect()
    }

    fn add(a: &mut Matrix, b: &Matrix) {
        for (ra, rb) in a.iter_mut().zip(b) {
            for (x, y) in ra.iter_mut().zip(rb) {
                *x += y;
            }
        }
    }

    fn logits(&self, src: &[u32], tgt: &[u32]) -> Matrix {
        let kept: Vec<(usize, u32)> = src.iter().copied().enumerate().filter(|&(_, t)| t != PAD_ID).collect();
        let mut x = self.embed("src_embedding", &kept);
        for l in 0..self.p.config.enc_layers {
            let p = format!("encoder.{l}");
            let a = self.attention(
                &self.norm(&x, &format!("{p}.norm1")),
                &self.norm(&x, &format!("{p}.norm1")),
                &format!("{p}.self_attn"),
                false,
            );
            Self::add(&mut x, &a);
            let f = self.feed_forward(&self.norm(&x, &format!("{p}.norm2")), &p);
            Self::add(&mut x, &f);
        }
        let memory = self.norm(&x, "encoder.norm");

        let positions: Vec<(usize, u32)> = tgt.iter().copied().enumerate().collect();
        let mut y = self.embed("tgt_embedding", &positions);
        for l in 0..self.p.config.dec_layers {
            let p = format!("decoder.{l}");
            let n1 = self.norm(&y, &format!("{p}.norm1"));
            let a = self.attention(&n1, &n1, &format!("{p}.self_attn"), true);
            Self::add(&mut y, &a);
            let c = self.attention(
                &self.norm(&y, &format!("{p}.norm2")),
                &memory,
                &format!("{p}.cross_attn"),
                false,
            );
            Self::add(&mut y, &c);
            let f = self.feed_forward(&self.norm(&y, &format!("{p}.norm3")), &p);
            Self::add(&mut y, &f);
        }
        self.dense(&self.norm(&y, "decoder.norm"), "output")
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 11,
        max_src_len: 32,
        max_tgt_len: 16,
        dropout: 0.0,
        label_smoothing: 0.0,
        tie_embeddings: false,
    }
}

#[test]
fn forward_matches_reference() {
    let params = Params::<f64>::init(&tiny_config(), 42).unwrap();
    let src = [4, 7, 8, 9, 5, 10, PAD_ID, PAD_ID];
    let tgt = [BOS_ID, 7, 10, 8];
    let ours = forward(&params, &src, &tgt).unwrap();
    let oracle = Reference {
        p: &params,
        d: 8,
        heads: 2,
    }
    .logits(&src, &tgt);
    assert_eq!(ours.rows, oracle.len());
    let mut max_err = 0.0f64;
    for (i, row) in oracle.iter().enumerate() {
        for (a, b) in ours.row(i).iter().zip(row) {
            max_err = max_err.max((a - b).abs());
        }
    }
    assert!(max_err < 1e-6, "max |Δ| = {max_err:e}");
}

#[test]
fn two_layer_forward_matches_reference() {
    let mut config = tiny_config();
    config.enc_layers = 2;
    config.dec_layers = 2;
    let params = Params::<f64>::init(&config, 5).unwrap();
    let src = [9, 4, PAD_ID, 6, 7];
    let tgt = [BOS_ID, 3, 3];
    let ours = forward(&params, &src, &tgt).unwrap();
    let oracle = Reference {
        p: &params,
        d: 8,
        heads: 2,
    }
    .logits(&src, &tgt);
    for (i, row) in oracle.iter().enumerate() {
        for (a, b) in ours.row(i).iter().zip(row) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
