// SPDX-License-Identifier: Apache-2.0

//! Turning a [`VideoPost`] into the tensors the network consumes.

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::corpus::{Label, Taxonomy, VideoPost};
use crate::encoders::{subsample_indices, StubTextEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::events::{
    to_alert_indices, tokenize, EventTagger, LexiconTagger, PrecomputedTagger, DEFAULT_ARGUMENTS, DEFAULT_TRIGGERS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaggerSpec {
    Stub { triggers: Vec<String>, arguments: Vec<String> },
    External { path: PathBuf },
}

impl Default for TaggerSpec {
    fn default() -> Self {
        TaggerSpec::Stub {
            triggers: DEFAULT_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            arguments: DEFAULT_ARGUMENTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TaggerSpec {
    pub fn build(&self) -> Result<Arc<dyn EventTagger>> {
        Ok(match self {
            TaggerSpec::Stub { triggers, arguments } => Arc::new(LexiconTagger::new(triggers, arguments)),
            TaggerSpec::External { path } => Arc::new(PrecomputedTagger::load(path)?),
        })
    }
}

/// Text encoder and tagger settings that travel with a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub text_seed: u64,
    pub tagger: TaggerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextInput {
    pub tokens: Array2<f64>,
    pub alert: Vec<u8>,
    pub mask: Vec<bool>,
}

impl TextInput {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    fn padded(&self, len: usize, fill: &mut dyn FnMut() -> f64) -> TextInput {
        let (l, d) = self.tokens.dim();
        let mut tokens = Array2::zeros((len, d));
        tokens.slice_mut(ndarray::s![..l, ..]).assign(&self.tokens);
        for i in l..len {
            for j in 0..d {
                tokens[[i, j]] = fill();
            }
        }
        let mut alert = self.alert.clone();
        alert.extend((l..len).map(|_| (fill().abs() * 1e3) as u8 % 3));
        let mut mask = self.mask.clone();
        mask.resize(len, false);
        TextInput { tokens, alert, mask }
    }

    fn garbage(len: usize, d: usize, fill: &mut dyn FnMut() -> f64) -> TextInput {
        TextInput {
            tokens: Array2::from_shape_simple_fn((len, d), &mut *fill),
            alert: (0..len).map(|_| (fill().abs() * 1e3) as u8 % 3).collect(),
            mask: vec![false; len],
        }
    }
}

/// A post after tokenization, tagging, embedding, and frame selection.
/// Masks mark real positions; everything else is padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPost {
    pub post_id: String,
    pub claim: TextInput,
    pub speech: Vec<TextInput>,
    pub speech_mask: Vec<bool>,
    pub screen: Vec<TextInput>,
    pub screen_mask: Vec<bool>,
    pub frames: Vec<Array2<f64>>,
    pub frame_mask: Vec<bool>,
    pub patch_mask: Vec<bool>,
    pub target: Label,
    pub taxonomy: Taxonomy,
}

/// Common padded extents for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PadShape {
    pub text_len: usize,
    pub speech: usize,
    pub screen: usize,
    pub frames: usize,
    pub patches: usize,
}

impl PadShape {
    pub fn covering<'a>(posts: impl IntoIterator<Item = &'a EncodedPost>) -> PadShape {
        let mut s = PadShape::default();
        for p in posts {
            let texts = std::iter::once(&p.claim).chain(&p.speech).chain(&p.screen);
            s.text_len = s.text_len.max(texts.map(TextInput::len).max().unwrap_or(0));
            s.speech = s.speech.max(p.speech.len());
            s.screen = s.screen.max(p.screen.len());
            s.frames = s.frames.max(p.frames.len());
            s.patches = s.patches.max(p.patch_mask.len());
        }
        s
    }
}

impl EncodedPost {
    /// Pads every sequence to `shape`, filling padded slots from `fill`.
    pub fn padded(&self, shape: &PadShape, fill: &mut dyn FnMut() -> f64) -> EncodedPost {
        let d_t = self.claim.tokens.ncols();
        let pad_texts = |texts: &[TextInput], mask: &[bool], n: usize, fill: &mut dyn FnMut() -> f64| {
            let mut out: Vec<TextInput> = texts.iter().map(|t| t.padded(shape.text_len, fill)).collect();
            while out.len() < n {
                out.push(TextInput::garbage(shape.text_len, d_t, fill));
            }
            let mut m = mask.to_vec();
            m.resize(n, false);
            (out, m)
        };
        let (speech, speech_mask) = pad_texts(&self.speech, &self.speech_mask, shape.speech, fill);
        let (screen, screen_mask) = pad_texts(&self.screen, &self.screen_mask, shape.screen, fill);
        let d_v = self.frames[0].ncols();
        let n = self.patch_mask.len();
        let mut frames: Vec<Array2<f64>> = self
            .frames
            .iter()
            .map(|f| {
                let mut g = Array2::zeros((shape.patches, d_v));
                g.slice_mut(ndarray::s![..n, ..]).assign(f);
                for i in n..shape.patches {
                    for j in 0..d_v {
                        g[[i, j]] = fill();
                    }
                }
                g
            })
            .collect();
        while frames.len() < shape.frames {
            frames.push(Array2::from_shape_simple_fn((shape.patches, d_v), &mut *fill));
        }
        let mut frame_mask = self.frame_mask.clone();
        frame_mask.resize(shape.frames, false);
        let mut patch_mask = self.patch_mask.clone();
        patch_mask.resize(shape.patches, false);
        EncodedPost {
            post_id: self.post_id.clone(),
            claim: self.claim.padded(shape.text_len, fill),
            speech,
            speech_mask,
            screen,
            screen_mask,
            frames,
            frame_mask,
            patch_mask,
            target: self.target,
            taxonomy: self.taxonomy,
        }
    }
}

#[derive(Clone)]
pub struct PostEncoder {
    text: Arc<dyn TextEncoder>,
    tagger: Arc<dyn EventTagger>,
    max_text_tokens: usize,
    max_positions: usize,
    patches: usize,
    frame_dim: usize,
}

impl PostEncoder {
    pub fn new(text: Arc<dyn TextEncoder>, tagger: Arc<dyn EventTagger>, cfg: &ModelConfig) -> Result<Self> {
        if text.dim() != cfg.text_dim {
            return Err(Error::Config(format!("text encoder width {} != model text_dim {}", text.dim(), cfg.text_dim)));
        }
        Ok(PostEncoder {
            text,
            tagger,
            max_text_tokens: cfg.max_text_tokens,
            max_positions: cfg.max_positions,
            patches: cfg.patches,
            frame_dim: cfg.frame_dim,
        })
    }

    pub fn from_config(enc: &EncodingConfig, cfg: &ModelConfig) -> Result<Self> {
        let text = Arc::new(StubTextEncoder::new(cfg.text_dim, enc.text_seed));
        Self::new(text, enc.tagger.build()?, cfg)
    }

    pub fn tagger(&self) -> &dyn EventTagger {
        self.tagger.as_ref()
    }

    pub fn encode_text(&self, text: &str) -> Result<TextInput> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let structure = self.tagger.tag(text, &tokens)?;
        let alert = to_alert_indices(tokens.len(), &structure)?;
        let keep = tokens.len().min(self.max_text_tokens);
        let emb = self.text.encode_tokens(&tokens[..keep])?;
        Ok(TextInput { tokens: emb.tokens, alert: alert.0[..keep].to_vec(), mask: vec![true; keep] })
    }

    /// Encodes a post keeping at most `max_frames` uniformly spaced frames.
    pub fn encode(&self, post: &VideoPost, max_frames: usize) -> Result<EncodedPost> {
        if post.frames.is_empty() {
            return Err(Error::InvalidArgument(format!("post {} has no frames", post.post_id)));
        }
        let n = post.frames[0].num_patches();
        if n > self.patches || post.frames[0].dim() != self.frame_dim {
            return Err(Error::Shape(format!(
                "post {} frames are {}x{}, model takes at most {}x{}",
                post.post_id,
                n,
                post.frames[0].dim(),
                self.patches,
                self.frame_dim
            )));
        }
        let sentences = |v: &[String]| -> Result<Vec<TextInput>> {
            v.iter().take(self.max_positions).map(|s| self.encode_text(s)).collect()
        };
        let speech = sentences(&post.speech_sentences)?;
        let screen = sentences(&post.screen_text_sentences)?;
        let cap = max_frames.max(1).min(self.max_positions);
        let frames: Vec<Array2<f64>> = subsample_indices(post.frames.len(), cap)
            .into_iter()
            .map(|i| post.frames[i].patches().to_owned())
            .collect();
        Ok(EncodedPost {
            post_id: post.post_id.clone(),
            claim: self.encode_text(&post.claim)?,
            speech_mask: vec![true; speech.len()],
            speech,
            screen_mask: vec![true; screen.len()],
            screen,
            frame_mask: vec![true; frames.len()],
            frames,
            patch_mask: vec![true; n],
            target: post.label,
            taxonomy: post.taxonomy,
        })
    }
}
