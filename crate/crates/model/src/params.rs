//! Named parameter tensors stored in one flat buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfIdx {
    pub l1: LinearIdx,
    pub l2: LinearIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncLayerIdx {
    pub ln1: NormIdx,
    pub attn: AttnIdx,
    pub ln2: NormIdx,
    pub ff: FfIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecLayerIdx {
    pub ln1: NormIdx,
    pub self_attn: AttnIdx,
    pub ln2: NormIdx,
    pub cross: AttnIdx,
    pub ln3: NormIdx,
    pub ff: FfIdx,
}

/// Tensor table plus typed indices into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub src_emb: usize,
    pub tgt_emb: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_norm: NormIdx,
    pub dec: Vec<DecLayerIdx>,
    pub dec_norm: NormIdx,
    /// `None` when the output projection is tied to the target embedding.
    pub out_w: Option<usize>,
    pub out_b: usize,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let len = shape.iter().product();
        self.tensors.push(TensorInfo {
            name,
            shape,
            offset: self.offset,
            len,
        });
        self.offset += len;
        self.tensors.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        LinearIdx {
            w: self.add(format!("{prefix}.weight"), vec![fan_in, fan_out]),
            b: self.add(format!("{prefix}.bias"), vec![fan_out]),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), vec![d]),
            bias: self.add(format!("{prefix}.bias"), vec![d]),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfIdx {
        FfIdx {
            l1: self.linear(&format!("{prefix}.ff1"), d, d_ff),
            l2: self.linear(&format!("{prefix}.ff2"), d_ff, d),
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let (d, v) = (config.d_model, config.vocab_size);
        let mut b = Builder {
            tensors: Vec::new(),
            offset: 0,
        };
        let src_emb = b.add("src_embedding".into(), vec![v, d]);
        let tgt_emb = b.add("tgt_embedding".into(), vec![v, d]);
        let enc = (0..config.enc_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncLayerIdx {
                    ln1: b.norm(&format!("{p}.norm1"), d),
                    attn: b.attn(&format!("{p}.self_attn"), d),
                    ln2: b.norm(&format!("{p}.norm2"), d),
                    ff: b.ff(&p, d, config.d_ff),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let dec = (0..config.dec_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecLayerIdx {
                    ln1: b.norm(&format!("{p}.norm1"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    ln2: b.norm(&format!("{p}.norm2"), d),
                    cross: b.attn(&format!("{p}.cross_attn"), d),
                    ln3: b.norm(&format!("{p}.norm3"), d),
                    ff: b.ff(&p, d, config.d_ff),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        let out_w = (!config.tie_embeddings).then(|| b.add("output.weight".into(), vec![d, v]));
        let out_b = b.add("output.bias".into(), vec![v]);
        Layout {
            tensors: b.tensors,
            src_emb,
            tgt_emb,
            enc,
            enc_norm,
            dec,
            dec_norm,
            out_w,
            out_b,
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len).sum()
    }

    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let t = &self.tensors[id];
        t.offset..t.offset + t.len
    }
}

/// Model parameters θ: configuration, layout and one flat value buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let data = vec![T::zero(); layout.num_params()];
        Ok(Params {
            config: config.clone(),
            layout,
            data,
        })
    }

    /// Xavier-uniform matrices, unit norm gains, zero biases; deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in 0..params.layout.tensors.len() {
            let info = params.layout.tensors[id].clone();
            let values = &mut params.data[info.offset..info.offset + info.len];
            if info.shape.len() == 2 {
                let bound = (6.0 / (info.shape[0] + info.shape[1]) as f64).sqrt();
                for x in values.iter_mut() {
                    *x = T::of(rng.gen_range(-bound..bound));
                }
            } else if info.name.ends_with(".gain") {
                values.fill(T::one());
            }
        }
        Ok(params)
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn t(&self, id: usize) -> &[T] {
        &self.data[self.layout.range(id)]
    }

    pub fn t_mut(&mut self, id: usize) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.layout
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|id| self.t(id))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

/// Gradient buffer with the same layout as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub data: Vec<T>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &Params<T>) -> Self {
        Grads {
            data: vec![T::zero(); params.data.len()],
        }
    }

    pub fn slice_mut(&mut self, layout: &Layout, id: usize) -> &mut [T] {
        &mut self.data[layout.range(id)]
    }

    pub fn add_scaled(&mut self, other: &Grads<T>, scale: T) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + scale * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = ModelConfig::tiny(20);
        let a = Params::<f32>::init(&c, 7).unwrap();
        assert_eq!(a, Params::<f32>::init(&c, 7).unwrap());
        assert_ne!(a.data, Params::<f32>::init(&c, 8).unwrap().data);
        assert!(a.get("decoder.1.norm3.gain").unwrap().iter().all(|&g| g == 1.0));
        assert!(a.get("output.bias").unwrap().iter().all(|&b| b == 0.0));
        assert_eq!(a.get("src_embedding").unwrap().len(), 20 * 64);
        let names: std::collections::HashSet<_> = a.layout.tensors.iter().map(|t| &t.name).collect();
        assert_eq!(names.len(), a.layout.tensors.len());
    }

    #[test]
    fn tying_drops_the_output_matrix() {
        let mut c = ModelConfig::tiny(20);
        let untied = Layout::new(&c).num_params();
        c.tie_embeddings = true;
        assert_eq!(untied - Layout::new(&c).num_params(), 64 * 20);
    }
}
