// SPDX-License-Identifier: Apache-2.0

//! The consistency network: event-alert gated text projections, stacked
//! multi-head attention-on-attention encoders, pairwise cross-modal fusion,
//! per-pair consistency scores, the score combiner, and explanations.

pub mod checkpoint;
pub mod input;
pub mod network;
pub mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Label, Taxonomy};
use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use input::{EncodedPost, EncodingConfig, PostEncoder, TaggerSpec, TextInput};
pub use network::{Detector, ForwardOutput, Network};
pub use params::init_params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Learned,
    /// Gate fixed to ones; the event-alert table is bypassed.
    AllOnes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Pairwise,
    /// One transformer over all modality sequences concatenated.
    SingleStream,
}

/// The three modality links, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pair {
    VideoSpeech,
    VideoClaim,
    ClaimSpeech,
}

impl Pair {
    pub const ALL: [Pair; 3] = [Pair::VideoSpeech, Pair::VideoClaim, Pair::ClaimSpeech];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Pair::VideoSpeech => "vs",
            Pair::VideoClaim => "vc",
            Pair::ClaimSpeech => "cs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub gate: GateMode,
    pub fusion: FusionMode,
    /// Links fed to the combiner, indexed by [`Pair::index`].
    pub pairs: [bool; 3],
}

impl Default for ModelVariant {
    fn default() -> Self {
        ModelVariant { gate: GateMode::Learned, fusion: FusionMode::Pairwise, pairs: [true; 3] }
    }
}

impl ModelVariant {
    pub fn without_pair(p: Pair) -> Self {
        let mut v = Self::default();
        v.pairs[p.index()] = false;
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Common subspace width.
    pub dim: usize,
    pub text_dim: usize,
    pub frame_dim: usize,
    pub patches: usize,
    pub aoa_layers: usize,
    pub aoa_heads: usize,
    pub fuser_layers: usize,
    pub fuser_heads: usize,
    /// Feed-forward width in the cross-modal transformer, as a multiple of `dim`.
    pub ffn_mult: usize,
    pub max_text_tokens: usize,
    /// Longest per-modality sequence the fusers accept (frames, sentences).
    pub max_positions: usize,
    pub text_positions: bool,
    pub threshold: f64,
    pub seed: u64,
    pub variant: ModelVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 512,
            text_dim: crate::encoders::FULL_TEXT_DIM,
            frame_dim: crate::encoders::FULL_FRAME_DIM,
            patches: crate::encoders::FULL_PATCHES,
            aoa_layers: 2,
            aoa_heads: 4,
            fuser_layers: 1,
            fuser_heads: 4,
            ffn_mult: 2,
            max_text_tokens: 64,
            max_positions: 64,
            text_positions: true,
            threshold: 0.5,
            seed: 0,
            variant: ModelVariant::default(),
        }
    }
}

impl ModelConfig {
    /// Same layer and head counts as the default at a width that trains in
    /// minutes on a CPU.
    pub fn desk(text_dim: usize, frame_dim: usize, patches: usize) -> Self {
        ModelConfig { dim: 64, text_dim, frame_dim, patches, max_text_tokens: 32, max_positions: 32, ..Self::default() }
    }

    /// One head, one layer everywhere; the gradient-check configuration.
    pub fn tiny(dim: usize, text_dim: usize, frame_dim: usize, patches: usize) -> Self {
        ModelConfig {
            dim,
            text_dim,
            frame_dim,
            patches,
            aoa_layers: 1,
            aoa_heads: 1,
            fuser_layers: 1,
            fuser_heads: 1,
            max_text_tokens: 16,
            max_positions: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 || self.text_dim == 0 || self.frame_dim == 0 || self.patches == 0 {
            return bad("dimensions must be positive");
        }
        if self.aoa_heads == 0 || !self.dim.is_multiple_of(self.aoa_heads) {
            return bad("aoa_heads must divide dim");
        }
        if self.fuser_heads == 0 || !self.dim.is_multiple_of(self.fuser_heads) {
            return bad("fuser_heads must divide dim");
        }
        if self.aoa_layers == 0 || self.fuser_layers == 0 || self.ffn_mult == 0 {
            return bad("layer counts must be positive");
        }
        if self.max_text_tokens == 0 || self.max_positions == 0 {
            return bad("position tables must be nonempty");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if !self.variant.pairs.iter().any(|p| *p) {
            return bad("at least one pair must feed the combiner");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Video,
    Speech,
    Claim,
}

impl Modality {
    /// Modality manipulated by a taxonomy, if any.
    pub fn of_taxonomy(t: Taxonomy) -> Option<Modality> {
        match t {
            Taxonomy::Pristine => None,
            Taxonomy::FakeClaim => Some(Modality::Claim),
            Taxonomy::FakeSpeech | Taxonomy::FilledSpeech => Some(Modality::Speech),
            Taxonomy::FakeVideo => Some(Modality::Video),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Explanation {
    Video,
    Speech,
    Claim,
    None,
}

impl From<Modality> for Explanation {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Video => Explanation::Video,
            Modality::Speech => Explanation::Speech,
            Modality::Claim => Explanation::Claim,
        }
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Explanation::Video => "video",
            Explanation::Speech => "speech",
            Explanation::Claim => "claim",
            Explanation::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScores {
    pub c_vs: f64,
    pub c_vc: f64,
    pub c_cs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r_vs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r_vc: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r_cs: Vec<f64>,
}

impl ConsistencyScores {
    pub fn from_triple(c_vs: f64, c_vc: f64, c_cs: f64) -> Self {
        ConsistencyScores { c_vs, c_vc, c_cs, r_vs: Vec::new(), r_vc: Vec::new(), r_cs: Vec::new() }
    }

    pub fn get(&self, p: Pair) -> f64 {
        match p {
            Pair::VideoSpeech => self.c_vs,
            Pair::VideoClaim => self.c_vc,
            Pair::ClaimSpeech => self.c_cs,
        }
    }

    pub fn triple(&self) -> [f64; 3] {
        [self.c_vs, self.c_vc, self.c_cs]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub p_inconsistent: f64,
    pub predicted_label: Label,
    pub explanation: Explanation,
    pub scores: ConsistencyScores,
}

impl Verdict {
    pub fn from_parts(p_inconsistent: f64, threshold: f64, scores: ConsistencyScores) -> Self {
        let predicted_label = label_for(p_inconsistent, threshold);
        let explanation = match predicted_label {
            Label::Inconsistent => explain(&scores).into(),
            Label::Consistent => Explanation::None,
        };
        Verdict { p_inconsistent, predicted_label, explanation, scores }
    }
}

/// Inconsistent iff `p >= threshold`.
pub fn label_for(p: f64, threshold: f64) -> Label {
    if p >= threshold {
        Label::Inconsistent
    } else {
        Label::Consistent
    }
}

/// The modality shared by the two lowest-scoring links. Equal scores order
/// as vs < vc < cs.
pub fn explain(scores: &ConsistencyScores) -> Modality {
    let mut links = Pair::ALL;
    links.sort_by(|a, b| scores.get(*a).total_cmp(&scores.get(*b)).then(a.cmp(b)));
    let low = [links[0], links[1]];
    let has = |p: Pair| low.contains(&p);
    if has(Pair::VideoSpeech) && has(Pair::ClaimSpeech) {
        Modality::Speech
    } else if has(Pair::VideoSpeech) && has(Pair::VideoClaim) {
        Modality::Video
    } else {
        Modality::Claim
    }
}

pub fn explain_verdict(v: &Verdict) -> Result<Modality> {
    match v.predicted_label {
        Label::Inconsistent => Ok(explain(&v.scores)),
        Label::Consistent => Err(Error::ConsistentVerdict),
    }
}
