//! Triplet feature storage and the HFT1 binary format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "HFT1"                      4 bytes
//! N, Q, L, D                  u32 each
//! N × { reference  Q·D f32
//!       text       L·D f32
//!       target     Q·D f32 }  row-major
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, FormatError, Result};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"HFT1";
const HEADER_LEN: usize = 4 + 4 * 4;

/// One (reference, text, target) item as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub reference: Vec<f32>,
    pub text: Vec<f32>,
    pub target: Vec<f32>,
}

/// A collection of triplets with fixed `(Q, L, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    queries: usize,
    text_len: usize,
    dim: usize,
    items: Vec<Triplet>,
}

impl FeatureStore {
    pub fn new(queries: usize, text_len: usize, dim: usize) -> Result<Self> {
        if queries == 0 || text_len == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature dims must be positive, got Q={queries} L={text_len} D={dim}"
            )));
        }
        Ok(FeatureStore {
            queries,
            text_len,
            dim,
            items: Vec::new(),
        })
    }

    pub fn push(&mut self, item: Triplet) -> Result<()> {
        let (q, l, d) = (self.queries, self.text_len, self.dim);
        if item.reference.len() != q * d || item.text.len() != l * d || item.target.len() != q * d {
            return Err(Error::InvalidArgument(format!(
                "triplet sizes ({}, {}, {}) do not match Q={q} L={l} D={d}",
                item.reference.len(),
                item.text.len(),
                item.target.len()
            )));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if !(finite(&item.reference) && finite(&item.text) && finite(&item.target)) {
            return Err(Error::NonFinite(format!("triplet {}", self.items.len())));
        }
        self.items.push(item);
        Ok(())
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Triplet] {
        &self.items
    }

    pub fn reference(&self, i: usize) -> Tensor {
        to_tensor(&self.items[i].reference, self.queries, self.dim)
    }

    pub fn text(&self, i: usize) -> Tensor {
        to_tensor(&self.items[i].text, self.text_len, self.dim)
    }

    pub fn target(&self, i: usize) -> Tensor {
        to_tensor(&self.items[i].target, self.queries, self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let floats = self.items.len() * (2 * self.queries + self.text_len) * self.dim;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * floats);
        out.extend_from_slice(&MAGIC);
        for v in [self.items.len(), self.queries, self.text_len, self.dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for item in &self.items {
            for part in [&item.reference, &item.text, &item.target] {
                for v in part.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (n, q, l, d) = (word(0), word(1), word(2), word(3));
        if q == 0 || l == 0 || d == 0 {
            return Err(FormatError::ZeroDim { q, l, d });
        }

        let overflow = FormatError::DimOverflow { n, q, l, d };
        let (qd, ld) = match (
            (q as usize).checked_mul(d as usize),
            (l as usize).checked_mul(d as usize),
        ) {
            (Some(qd), Some(ld)) => (qd, ld),
            _ => return Err(overflow),
        };
        let expected = qd
            .checked_mul(2)
            .and_then(|v| v.checked_add(ld))
            .and_then(|v| v.checked_mul(n as usize))
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or(overflow)?;
        if bytes.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(FormatError::TrailingBytes {
                extra: bytes.len() - expected,
            });
        }

        let mut cursor = HEADER_LEN;
        let mut take = |count: usize| -> Vec<f32> {
            let out = bytes[cursor..cursor + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += 4 * count;
            out
        };
        let mut items = Vec::with_capacity(n as usize);
        for item in 0..n as usize {
            let t = Triplet {
                reference: take(qd),
                text: take(ld),
                target: take(qd),
            };
            let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
            if !(finite(&t.reference) && finite(&t.text) && finite(&t.target)) {
                return Err(FormatError::NonFinite { item });
            }
            items.push(t);
        }
        Ok(FeatureStore {
            queries: q as usize,
            text_len: l as usize,
            dim: d as usize,
            items,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FeatureStore::from_bytes(&bytes)?)
    }
}

fn to_tensor(data: &[f32], rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, data.iter().map(|&v| f64::from(v)).collect())
        .expect("store sizes are validated on insert")
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub queries: usize,
    pub text_len: usize,
    pub dim: usize,
    /// Standard deviation of the noise added to target rows.
    pub noise_sigma: f64,
    /// Length of the per-item edit direction; zero makes every text row zero.
    pub edit_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 64,
            queries: 8,
            text_len: 6,
            dim: 32,
            noise_sigma: 0.05,
            edit_scale: 1.0,
            seed: 0,
        }
    }
}

/// Standard deviation of the per-row jitter on reference rows.
const REFERENCE_JITTER: f64 = 0.1;

/// Learnable synthetic triplets.
///
/// Each item draws a unit latent `z` and a unit edit direction `e` (scaled by
/// `edit_scale`). Reference rows are `z` plus `N(0, 0.1²)` jitter, text rows
/// are `e`, and target rows are `normalize(z + e)` plus `N(0, σ²)` noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureStore> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be nonnegative, got {}",
            spec.noise_sigma
        )));
    }
    if !spec.edit_scale.is_finite() {
        return Err(Error::InvalidArgument("edit scale must be finite".into()));
    }
    let (q, l, d) = (spec.queries, spec.text_len, spec.dim);
    let mut store = FeatureStore::new(q, l, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, REFERENCE_JITTER).expect("valid std");

    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    };

    for _ in 0..spec.n {
        let z = unit(&mut rng);
        let e: Vec<f64> = unit(&mut rng)
            .into_iter()
            .map(|x| x * spec.edit_scale)
            .collect();

        let mut reference = Vec::with_capacity(q * d);
        for _ in 0..q {
            for &zc in &z {
                reference.push((zc + jitter.sample(&mut rng)) as f32);
            }
        }

        let text: Vec<f32> = (0..l).flat_map(|_| e.iter().map(|&x| x as f32)).collect();

        let combined: Vec<f64> = z.iter().zip(&e).map(|(a, b)| a + b).collect();
        let norm = combined.iter().map(|x| x * x).sum::<f64>().sqrt();
        let direction: Vec<f64> = if norm > 1e-12 {
            combined.iter().map(|x| x / norm).collect()
        } else {
            z.clone()
        };
        let mut target = Vec::with_capacity(q * d);
        for _ in 0..q {
            for &c in &direction {
                let noise = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                } else {
                    0.0
                };
                target.push((c + noise) as f32);
            }
        }
        store.push(Triplet {
            reference,
            text,
            target,
        })?;
    }
    Ok(store)
}
