//! Encoder parameter containers with deterministic named-tensor enumeration
//! (the checkpoint manifest order).

use super::{bucket_count, EncoderError, ModelConfig};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

const INIT_STD: f64 = 0.02;

fn normal_init<T: Real>(shape: Vec<usize>, rng: &mut Rng) -> Tensor<T> {
    let len = shape.iter().product();
    let data: Vec<T> = (0..len)
        .map(|_| T::from_f64(rng.normal() * INIT_STD))
        .collect();
    Tensor::from_vec(shape, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    fn init(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: normal_init(vec![d_in, d_out], rng),
            bias: Tensor::zeros(vec![d_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights<T: Real> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerNormWeights<T> {
    fn init(dim: usize) -> Self {
        LayerNormWeights {
            gain: Tensor::full(vec![dim], T::ONE),
            bias: Tensor::zeros(vec![dim]),
        }
    }
}

/// One transformer block: content projections, optional relative-position
/// projections, output projection, post-attention and post-FFN layer norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Real> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    /// Projection of the shared relative-position table for the
    /// position-to-content term. Absent without disentangled attention.
    pub rel_q: Option<Tensor<T>>,
    /// Projection for the content-to-position term.
    pub rel_k: Option<Tensor<T>>,
    pub out: Linear<T>,
    pub ln_attn: LayerNormWeights<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub ln_ffn: LayerNormWeights<T>,
}

/// The convolution branch of the hybrid first layer (kernel width 3).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBranch<T: Real> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead<T: Real> {
    pub dense: Linear<T>,
    pub ln: LayerNormWeights<T>,
    pub decoder: Linear<T>,
}

/// All named parameter tensors of the encoder. The enhanced mask decoder has
/// no parameters of its own; it reuses the final layer's block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T: Real> {
    pub config: ModelConfig,
    pub token_embedding: Tensor<T>,
    /// Shared relative-position table (2*kappa x H); absent in the
    /// standard-attention ablation.
    pub rel_embedding: Option<Tensor<T>>,
    pub abs_position: Tensor<T>,
    /// Convolution branch of layer 1; absent in the no-convolution ablation.
    pub conv: Option<ConvBranch<T>>,
    pub layers: Vec<LayerWeights<T>>,
    pub mlm_head: MlmHead<T>,
}

impl<T: Real> EncoderWeights<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = Rng::seed_from(seed);
        let h = config.hidden;
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                q: Linear::init(h, h, &mut rng),
                k: Linear::init(h, h, &mut rng),
                v: Linear::init(h, h, &mut rng),
                rel_q: config
                    .use_disentangled
                    .then(|| normal_init(vec![h, h], &mut rng)),
                rel_k: config
                    .use_disentangled
                    .then(|| normal_init(vec![h, h], &mut rng)),
                out: Linear::init(h, h, &mut rng),
                ln_attn: LayerNormWeights::init(h),
                ffn1: Linear::init(h, config.ffn_dim, &mut rng),
                ffn2: Linear::init(config.ffn_dim, h, &mut rng),
                ln_ffn: LayerNormWeights::init(h),
            })
            .collect();
        Ok(EncoderWeights {
            token_embedding: normal_init(vec![config.vocab_size, h], &mut rng),
            rel_embedding: config
                .use_disentangled
                .then(|| normal_init(vec![bucket_count(config.max_relative_distance), h], &mut rng)),
            abs_position: normal_init(vec![config.max_len, h], &mut rng),
            conv: config.use_ngie.then(|| ConvBranch {
                kernel: normal_init(vec![3, h, h], &mut rng),
                bias: Tensor::zeros(vec![h]),
            }),
            layers,
            mlm_head: MlmHead {
                dense: Linear::init(h, h, &mut rng),
                ln: LayerNormWeights::init(h),
                decoder: Linear::init(h, config.vocab_size, &mut rng),
            },
            config: config.clone(),
        })
    }

    /// Named tensors in manifest order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("abs_position".to_string(), &self.abs_position),
        ];
        if let Some(rel) = &self.rel_embedding {
            out.push(("rel_embedding".to_string(), rel));
        }
        if let Some(conv) = &self.conv {
            out.push(("conv.kernel".to_string(), &conv.kernel));
            out.push(("conv.bias".to_string(), &conv.bias));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.attn.q.weight"), &l.q.weight));
            out.push((format!("{p}.attn.q.bias"), &l.q.bias));
            out.push((format!("{p}.attn.k.weight"), &l.k.weight));
            out.push((format!("{p}.attn.k.bias"), &l.k.bias));
            out.push((format!("{p}.attn.v.weight"), &l.v.weight));
            out.push((format!("{p}.attn.v.bias"), &l.v.bias));
            if let Some(rq) = &l.rel_q {
                out.push((format!("{p}.attn.rel_q.weight"), rq));
            }
            if let Some(rk) = &l.rel_k {
                out.push((format!("{p}.attn.rel_k.weight"), rk));
            }
            out.push((format!("{p}.attn.out.weight"), &l.out.weight));
            out.push((format!("{p}.attn.out.bias"), &l.out.bias));
            out.push((format!("{p}.ln_attn.gain"), &l.ln_attn.gain));
            out.push((format!("{p}.ln_attn.bias"), &l.ln_attn.bias));
            out.push((format!("{p}.ffn.w1.weight"), &l.ffn1.weight));
            out.push((format!("{p}.ffn.w1.bias"), &l.ffn1.bias));
            out.push((format!("{p}.ffn.w2.weight"), &l.ffn2.weight));
            out.push((format!("{p}.ffn.w2.bias"), &l.ffn2.bias));
            out.push((format!("{p}.ln_ffn.gain"), &l.ln_ffn.gain));
            out.push((format!("{p}.ln_ffn.bias"), &l.ln_ffn.bias));
        }
        out.push(("mlm_head.dense.weight".to_string(), &self.mlm_head.dense.weight));
        out.push(("mlm_head.dense.bias".to_string(), &self.mlm_head.dense.bias));
        out.push(("mlm_head.ln.gain".to_string(), &self.mlm_head.ln.gain));
        out.push(("mlm_head.ln.bias".to_string(), &self.mlm_head.ln.bias));
        out.push((
            "mlm_head.decoder.weight".to_string(),
            &self.mlm_head.decoder.weight,
        ));
        out.push((
            "mlm_head.decoder.bias".to_string(),
            &self.mlm_head.decoder.bias,
        ));
        out
    }

    /// Mutable access in the same manifest order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("abs_position".to_string(), &mut self.abs_position),
        ];
        if let Some(rel) = &mut self.rel_embedding {
            out.push(("rel_embedding".to_string(), rel));
        }
        if let Some(conv) = &mut self.conv {
            out.push(("conv.kernel".to_string(), &mut conv.kernel));
            out.push(("conv.bias".to_string(), &mut conv.bias));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.attn.q.weight"), &mut l.q.weight));
            out.push((format!("{p}.attn.q.bias"), &mut l.q.bias));
            out.push((format!("{p}.attn.k.weight"), &mut l.k.weight));
            out.push((format!("{p}.attn.k.bias"), &mut l.k.bias));
            out.push((format!("{p}.attn.v.weight"), &mut l.v.weight));
            out.push((format!("{p}.attn.v.bias"), &mut l.v.bias));
            if let Some(rq) = &mut l.rel_q {
                out.push((format!("{p}.attn.rel_q.weight"), rq));
            }
            if let Some(rk) = &mut l.rel_k {
                out.push((format!("{p}.attn.rel_k.weight"), rk));
            }
            out.push((format!("{p}.attn.out.weight"), &mut l.out.weight));
            out.push((format!("{p}.attn.out.bias"), &mut l.out.bias));
            out.push((format!("{p}.ln_attn.gain"), &mut l.ln_attn.gain));
            out.push((format!("{p}.ln_attn.bias"), &mut l.ln_attn.bias));
            out.push((format!("{p}.ffn.w1.weight"), &mut l.ffn1.weight));
            out.push((format!("{p}.ffn.w1.bias"), &mut l.ffn1.bias));
            out.push((format!("{p}.ffn.w2.weight"), &mut l.ffn2.weight));
            out.push((format!("{p}.ffn.w2.bias"), &mut l.ffn2.bias));
            out.push((format!("{p}.ln_ffn.gain"), &mut l.ln_ffn.gain));
            out.push((format!("{p}.ln_ffn.bias"), &mut l.ln_ffn.bias));
        }
        out.push((
            "mlm_head.dense.weight".to_string(),
            &mut self.mlm_head.dense.weight,
        ));
        out.push((
            "mlm_head.dense.bias".to_string(),
            &mut self.mlm_head.dense.bias,
        ));
        out.push(("mlm_head.ln.gain".to_string(), &mut self.mlm_head.ln.gain));
        out.push(("mlm_head.ln.bias".to_string(), &mut self.mlm_head.ln.bias));
        out.push((
            "mlm_head.decoder.weight".to_string(),
            &mut self.mlm_head.decoder.weight,
        ));
        out.push((
            "mlm_head.decoder.bias".to_string(),
            &mut self.mlm_head.decoder.bias,
        ));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> EncoderWeights<U> {
        EncoderWeights {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            rel_embedding: self.rel_embedding.as_ref().map(|t| t.cast()),
            abs_position: self.abs_position.cast(),
            conv: self.conv.as_ref().map(|c| ConvBranch {
                kernel: c.kernel.cast(),
                bias: c.bias.cast(),
            }),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    q: Linear {
                        weight: l.q.weight.cast(),
                        bias: l.q.bias.cast(),
                    },
                    k: Linear {
                        weight: l.k.weight.cast(),
                        bias: l.k.bias.cast(),
                    },
                    v: Linear {
                        weight: l.v.weight.cast(),
                        bias: l.v.bias.cast(),
                    },
                    rel_q: l.rel_q.as_ref().map(|t| t.cast()),
                    rel_k: l.rel_k.as_ref().map(|t| t.cast()),
                    out: Linear {
                        weight: l.out.weight.cast(),
                        bias: l.out.bias.cast(),
                    },
                    ln_attn: LayerNormWeights {
                        gain: l.ln_attn.gain.cast(),
                        bias: l.ln_attn.bias.cast(),
                    },
                    ffn1: Linear {
                        weight: l.ffn1.weight.cast(),
                        bias: l.ffn1.bias.cast(),
                    },
                    ffn2: Linear {
                        weight: l.ffn2.weight.cast(),
                        bias: l.ffn2.bias.cast(),
                    },
                    ln_ffn: LayerNormWeights {
                        gain: l.ln_ffn.gain.cast(),
                        bias: l.ln_ffn.bias.cast(),
                    },
                })
                .collect(),
            mlm_head: MlmHead {
                dense: Linear {
                    weight: self.mlm_head.dense.weight.cast(),
                    bias: self.mlm_head.dense.bias.cast(),
                },
                ln: LayerNormWeights {
                    gain: self.mlm_head.ln.gain.cast(),
                    bias: self.mlm_head.ln.bias.cast(),
                },
                decoder: Linear {
                    weight: self.mlm_head.decoder.weight.cast(),
                    bias: self.mlm_head.decoder.bias.cast(),
                },
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_has_unique_names_and_matches_mutable_order() {
        let cfg = ModelConfig::new(13, 8, 3, 2);
        let mut w = EncoderWeights::<f32>::init(&cfg, 0).unwrap();
        let names: Vec<String> = w.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len(), "duplicate tensor names");
        let names_mut: Vec<String> = w
            .named_tensors_mut()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        assert_eq!(names, names_mut);
    }

    #[test]
    fn vanilla_has_no_relative_or_conv_tensors() {
        let cfg = ModelConfig::new(13, 8, 2, 2).vanilla();
        let w = EncoderWeights::<f32>::init(&cfg, 0).unwrap();
        let names: Vec<String> = w.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        assert!(names.iter().all(|n| !n.contains("rel")));
        assert!(names.iter().all(|n| !n.contains("conv")));
        assert!(names.contains(&"abs_position".to_string()));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::new(13, 8, 2, 2);
        let a = EncoderWeights::<f32>::init(&cfg, 5).unwrap();
        let b = EncoderWeights::<f32>::init(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = EncoderWeights::<f32>::init(&cfg, 6).unwrap();
        assert_ne!(a, c);
    }
}
