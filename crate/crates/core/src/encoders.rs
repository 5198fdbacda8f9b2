// SPDX-License-Identifier: Apache-2.0

//! Frame and text feature extraction.
//!
//! Real vision and language encoders run offline; their outputs reach this
//! crate as corpus features. The stub encoders hash their input into seeded
//! pseudo-random unit vectors so the full system runs without weights.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{tokenize, Token};

/// Vision encoder patch width.
pub const FULL_FRAME_DIM: usize = 512;
/// Text encoder hidden width.
pub const FULL_TEXT_DIM: usize = 768;
/// 224px input with 32px patches.
pub const FULL_PATCHES: usize = 49;

/// `N x D_v` patch features for one sampled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePatchFeatures(Array2<f64>);

impl FramePatchFeatures {
    pub fn new(patches: Array2<f64>) -> Result<Self> {
        if patches.nrows() == 0 || patches.ncols() == 0 {
            return Err(Error::Shape("frame needs at least one patch".into()));
        }
        if patches.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite patch feature".into()));
        }
        Ok(FramePatchFeatures(patches))
    }

    pub fn from_flat(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let got = data.len();
        let arr = Array2::from_shape_vec((n, dim), data)
            .map_err(|_| Error::Shape(format!("expected {n}x{dim} = {} values, got {got}", n * dim)))?;
        Self::new(arr)
    }

    pub fn patches(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn num_patches(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    /// Mean over patches.
    pub fn pooled(&self) -> Array1<f64> {
        self.0.mean_axis(ndarray::Axis(0)).expect("nonempty")
    }
}

/// `L x D_t` token embeddings plus the tokens they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub tokens: Array2<f64>,
    pub token_strings: Vec<String>,
}

impl TokenEmbeddings {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_tokens(&self, tokens: &[Token]) -> Result<TokenEmbeddings>;

    fn encode_text_tokens(&self, text: &str) -> Result<TokenEmbeddings> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        self.encode_tokens(&tokens)
    }
}

/// Where a frame's patches come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameRef<'a> {
    Stub(&'a str),
    Sidecar(usize),
}

pub trait FrameEncoder: Send + Sync {
    fn num_patches(&self) -> usize;
    fn dim(&self) -> usize;
    fn encode_frame_patches(&self, frame: &FrameRef<'_>) -> Result<FramePatchFeatures>;
}

pub(crate) fn seeded_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

pub(crate) fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Hashes each lowercased token to a seeded unit vector.
#[derive(Debug, Clone)]
pub struct StubTextEncoder {
    dim: usize,
    seed: u64,
}

impl StubTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "text dim must be positive");
        StubTextEncoder { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = seeded_rng(self.seed, &[b"text", token.as_bytes()]);
        unit_vector(&mut rng, self.dim)
    }
}

impl TextEncoder for StubTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_tokens(&self, tokens: &[Token]) -> Result<TokenEmbeddings> {
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut m = Array2::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            m.row_mut(i).assign(&self.token_vector(&t.norm));
        }
        Ok(TokenEmbeddings { tokens: m, token_strings: tokens.iter().map(|t| t.text.clone()).collect() })
    }
}

/// Hashes `(frame id, patch index)` to a seeded unit vector.
#[derive(Debug, Clone)]
pub struct StubFrameEncoder {
    patches: usize,
    dim: usize,
    seed: u64,
}

impl StubFrameEncoder {
    pub fn new(patches: usize, dim: usize, seed: u64) -> Self {
        assert!(patches > 0 && dim > 0);
        StubFrameEncoder { patches, dim, seed }
    }
}

impl FrameEncoder for StubFrameEncoder {
    fn num_patches(&self) -> usize {
        self.patches
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_frame_patches(&self, frame: &FrameRef<'_>) -> Result<FramePatchFeatures> {
        let id = match frame {
            FrameRef::Stub(id) => *id,
            FrameRef::Sidecar(i) => {
                return Err(Error::FrameRef(format!("stub encoder cannot resolve sidecar frame {i}")))
            }
        };
        let mut m = Array2::zeros((self.patches, self.dim));
        for p in 0..self.patches {
            let mut rng = seeded_rng(self.seed, &[b"frame", id.as_bytes(), &(p as u64).to_le_bytes()]);
            m.row_mut(p).assign(&unit_vector(&mut rng, self.dim));
        }
        FramePatchFeatures::new(m)
    }
}

/// Precomputed patch features: a little-endian `u32 N`, `u32 D_v` header
/// followed by `N * D_v` float32 values per frame.
#[derive(Debug, Clone)]
pub struct SidecarFeatures {
    patches: usize,
    dim: usize,
    data: Vec<f32>,
}

impl SidecarFeatures {
    pub fn open(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&raw)
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self> {
        if raw.len() < 8 {
            return Err(Error::Format("sidecar shorter than its header".into()));
        }
        let patches = u32::from_le_bytes(raw[0..4].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(raw[4..8].try_into().unwrap()) as usize;
        let body = &raw[8..];
        let frame_bytes = patches * dim * 4;
        if patches == 0 || dim == 0 || !body.len().is_multiple_of(frame_bytes) {
            return Err(Error::Format(format!(
                "sidecar body of {} bytes is not a whole number of {patches}x{dim} frames",
                body.len()
            )));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(SidecarFeatures { patches, dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.patches * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn write(path: &Path, patches: usize, dim: usize, frames: &[FramePatchFeatures]) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + frames.len() * patches * dim * 4);
        buf.extend_from_slice(&(patches as u32).to_le_bytes());
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
        for f in frames {
            if f.num_patches() != patches || f.dim() != dim {
                return Err(Error::Shape(format!(
                    "frame is {}x{}, sidecar is {patches}x{dim}",
                    f.num_patches(),
                    f.dim()
                )));
            }
            for v in f.patches().iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

impl FrameEncoder for SidecarFeatures {
    fn num_patches(&self) -> usize {
        self.patches
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_frame_patches(&self, frame: &FrameRef<'_>) -> Result<FramePatchFeatures> {
        let i = match frame {
            FrameRef::Sidecar(i) if *i < self.len() => *i,
            other => return Err(Error::FrameRef(format!("{other:?} not in sidecar of {} frames", self.len()))),
        };
        let n = self.patches * self.dim;
        let vals = self.data[i * n..(i + 1) * n].iter().map(|v| *v as f64).collect();
        FramePatchFeatures::from_flat(self.patches, self.dim, vals)
    }
}

/// Evenly spaced selection of `max` out of `count` positions with floor
/// rounding; all positions when `count <= max`.
pub fn subsample_indices(count: usize, max: usize) -> Vec<usize> {
    if count <= max {
        (0..count).collect()
    } else {
        (0..max).map(|j| j * count / max).collect()
    }
}

/// Frame indices for uniform sampling at `rate_fps`, capped at `max_frames`.
/// A clip shorter than one sampling period still yields its first frame.
pub fn sample_frames(video_length_s: f64, rate_fps: f64, max_frames: usize) -> Result<Vec<usize>> {
    if !(video_length_s.is_finite() && video_length_s > 0.0) {
        return Err(Error::InvalidArgument(format!("video length {video_length_s} must be positive")));
    }
    if rate_fps.is_nan() || rate_fps <= 0.0 || max_frames == 0 {
        return Err(Error::InvalidArgument("rate and max_frames must be positive".into()));
    }
    let count = ((video_length_s * rate_fps).floor() as usize).max(1);
    Ok(subsample_indices(count, max_frames))
}
