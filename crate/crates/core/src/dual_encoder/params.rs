use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::vocab::TokenId;

const MAGIC: &[u8; 4] = b"DPRM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tower {
    Question,
    Passage,
}

/// Two-tower encoder: a shared token-embedding table (V×e), mean pooling,
/// and an independent e×d projection per tower.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub vocab_embed: Matrix<T>,
    pub proj_q: Matrix<T>,
    pub proj_p: Matrix<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn new(vocab_embed: Matrix<T>, proj_q: Matrix<T>, proj_p: Matrix<T>) -> Result<Self> {
        let e = vocab_embed.cols();
        if proj_q.rows() != e || proj_p.rows() != e || proj_q.cols() != proj_p.cols() {
            return Err(Error::invalid(format!(
                "encoder shape mismatch: embed {}x{}, proj_q {}x{}, proj_p {}x{}",
                vocab_embed.rows(),
                e,
                proj_q.rows(),
                proj_q.cols(),
                proj_p.rows(),
                proj_p.cols()
            )));
        }
        let params = EncoderParams {
            vocab_embed,
            proj_q,
            proj_p,
        };
        if !params.all_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(params)
    }

    /// Gaussian initialisation: embeddings N(0, 1), projections N(0, 1/e).
    pub fn init(vocab_size: usize, embed_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (embed_dim as f64).sqrt();
        EncoderParams {
            vocab_embed: Matrix::random_normal(vocab_size, embed_dim, 1.0, &mut rng),
            proj_q: Matrix::random_normal(embed_dim, dim, std, &mut rng),
            proj_p: Matrix::random_normal(embed_dim, dim, std, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            vocab_embed: Matrix::zeros(self.vocab_size(), self.embed_dim()),
            proj_q: Matrix::zeros(self.embed_dim(), self.dim()),
            proj_p: Matrix::zeros(self.embed_dim(), self.dim()),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_embed.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.vocab_embed.cols()
    }

    pub fn dim(&self) -> usize {
        self.proj_q.cols()
    }

    pub fn projection(&self, tower: Tower) -> &Matrix<T> {
        match tower {
            Tower::Question => &self.proj_q,
            Tower::Passage => &self.proj_p,
        }
    }

    pub fn projection_mut(&mut self, tower: Tower) -> &mut Matrix<T> {
        match tower {
            Tower::Question => &mut self.proj_q,
            Tower::Passage => &mut self.proj_p,
        }
    }

    /// Mean of the embedding rows of `tokens`.
    pub fn pool(&self, tokens: &[TokenId]) -> Result<Vec<T>> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty token list"));
        }
        let mut pooled = vec![T::zero(); self.embed_dim()];
        for &t in tokens {
            if t as usize >= self.vocab_size() {
                return Err(Error::invalid(format!(
                    "token id {t} outside vocabulary of {}",
                    self.vocab_size()
                )));
            }
            for (acc, &v) in pooled.iter_mut().zip(self.vocab_embed.row(t as usize)) {
                *acc += v;
            }
        }
        let inv = T::one() / T::lit(tokens.len() as f64);
        pooled.iter_mut().for_each(|v| *v *= inv);
        Ok(pooled)
    }

    pub fn encode(&self, tokens: &[TokenId], tower: Tower) -> Result<Vec<T>> {
        Ok(self.projection(tower).left_mul(&self.pool(tokens)?))
    }

    pub fn all_finite(&self) -> bool {
        self.vocab_embed.all_finite() && self.proj_q.all_finite() && self.proj_p.all_finite()
    }

    pub fn tensor_sizes(&self) -> [usize; 3] {
        [
            self.vocab_embed.as_slice().len(),
            self.proj_q.as_slice().len(),
            self.proj_p.as_slice().len(),
        ]
    }

    pub fn tensors(&self) -> [&[T]; 3] {
        [
            self.vocab_embed.as_slice(),
            self.proj_q.as_slice(),
            self.proj_p.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 3] {
        [
            self.vocab_embed.as_mut_slice(),
            self.proj_q.as_mut_slice(),
            self.proj_p.as_mut_slice(),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            vocab_embed: self.vocab_embed.cast(),
            proj_q: self.proj_q.cast(),
            proj_p: self.proj_p.cast(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.u32(self.vocab_size() as u32);
        w.u32(self.embed_dim() as u32);
        w.u32(self.dim() as u32);
        for tensor in self.tensors() {
            for &v in tensor {
                w.f32(v.as_f32());
            }
        }
        w.into_bytes()
    }

    /// Writes the binary model file; values are stored as f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, version) = BinReader::open(path, MAGIC, "encoder model")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported encoder model version {version}")));
        }
        let v = r.u32()? as usize;
        let e = r.u32()? as usize;
        let d = r.u32()? as usize;
        let mut read = |rows: usize, cols: usize| -> Result<Matrix<T>> {
            let data = r.f32_vec(rows * cols)?;
            Ok(Matrix::from_vec(
                rows,
                cols,
                data.into_iter().map(|x| T::lit(x as f64)).collect(),
            ))
        };
        let embed = read(v, e)?;
        let proj_q = read(e, d)?;
        let proj_p = read(e, d)?;
        r.finish()?;
        Self::new(embed, proj_q, proj_p)
    }
}
