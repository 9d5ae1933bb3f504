//! Text encoder and the feature projection head.
//!
//! The encoder is a mean of token embeddings followed by a two-layer head.
//! Anything implementing [`Encoder`] can stand in for it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::UNKNOWN_ID;
use crate::error::{Error, Result};
use crate::numerics::{HasParams, Matrix, Mlp2, Mlp2Cache, Param};

/// Maps token-id sequences to fixed-width features, with a backward pass.
pub trait Encoder: HasParams {
    type Cache;

    fn output_dim(&self) -> usize;

    fn encode(&self, sequences: &[&[usize]]) -> Result<(Matrix, Self::Cache)>;

    /// Accumulates parameter gradients given `dL/d(features)`.
    fn backward(&mut self, cache: &Self::Cache, grad_out: &Matrix) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPoolEncoder {
    /// `V x d`; row 0 (unknown) is never read or updated.
    pub embedding: Param,
    pub head: Mlp2,
}

pub struct MeanPoolCache {
    sequences: Vec<Vec<usize>>,
    head: Mlp2Cache,
}

impl MeanPoolEncoder {
    pub fn init(vocab_size: usize, embed_dim: usize, hidden_dim: usize, feat_dim: usize, rng: &mut impl Rng) -> Self {
        let mut table = Matrix::from_fn(vocab_size, embed_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        if vocab_size > 0 {
            table.row_mut(UNKNOWN_ID).fill(0.0);
        }
        Self {
            embedding: Param::new(table),
            head: Mlp2::init(embed_dim, hidden_dim, feat_dim, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.value.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.value.cols()
    }

    /// Mean of token embeddings per sequence; unknown tokens count as zero
    /// vectors but still enter the denominator. Tokens are summed in id order
    /// so the result is bitwise independent of token order.
    pub fn pool(&self, sequences: &[&[usize]]) -> Result<Matrix> {
        let v = self.vocab_size();
        let d = self.embed_dim();
        let mut pooled = Matrix::zeros(sequences.len(), d);
        for (i, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::invalid(format!("sequence {i} has no tokens")));
            }
            let inv = 1.0 / seq.len() as f64;
            let mut sorted = seq.to_vec();
            sorted.sort_unstable();
            let out = pooled.row_mut(i);
            for &t in &sorted {
                if t >= v {
                    return Err(Error::TokenOutOfRange { id: t, size: v });
                }
                if t == UNKNOWN_ID {
                    continue;
                }
                for (o, e) in out.iter_mut().zip(self.embedding.value.row(t)) {
                    *o += e * inv;
                }
            }
        }
        Ok(pooled)
    }
}

impl Encoder for MeanPoolEncoder {
    type Cache = MeanPoolCache;

    fn output_dim(&self) -> usize {
        self.head.out_dim()
    }

    fn encode(&self, sequences: &[&[usize]]) -> Result<(Matrix, MeanPoolCache)> {
        let pooled = self.pool(sequences)?;
        let (feat, head) = self.head.forward(&pooled)?;
        Ok((
            feat,
            MeanPoolCache {
                sequences: sequences.iter().map(|s| s.to_vec()).collect(),
                head,
            },
        ))
    }

    fn backward(&mut self, cache: &MeanPoolCache, grad_out: &Matrix) -> Result<()> {
        let g_pooled = self.head.backward(&cache.head, grad_out)?;
        for (i, seq) in cache.sequences.iter().enumerate() {
            let inv = 1.0 / seq.len() as f64;
            let g = g_pooled.row(i);
            for &t in seq {
                if t == UNKNOWN_ID {
                    continue;
                }
                for (acc, gv) in self.embedding.grad.row_mut(t).iter_mut().zip(g) {
                    *acc += gv * inv;
                }
            }
        }
        Ok(())
    }
}

impl HasParams for MeanPoolEncoder {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.head.params_mut());
        v
    }
}

/// Projects encoder features into the contrastive space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProjector {
    pub head: Mlp2,
}

impl FeatureProjector {
    pub fn init(feat_dim: usize, hidden_dim: usize, proj_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            head: Mlp2::init(feat_dim, hidden_dim, proj_dim, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    pub fn project(&self, feat: &Matrix) -> Result<(Matrix, Mlp2Cache)> {
        self.head.forward(feat)
    }

    pub fn backward(&mut self, cache: &Mlp2Cache, grad_out: &Matrix) -> Result<Matrix> {
        self.head.backward(cache, grad_out)
    }
}

impl HasParams for FeatureProjector {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.head.params_mut()
    }
}
