// SPDX-License-Identifier: Apache-2.0

//! Generation of inconsistent posts: single-span claim edits filtered by a
//! contradiction scorer, evidence-sentence speech edits, adversarial video
//! swaps, and missing-speech fill-ins, assembled into a label-balanced corpus.

pub mod demo;
pub mod stubs;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Taxonomy, VideoPost};
use crate::encoders::seeded_rng;
use crate::error::{Error, Result};
use crate::events::{tag_events, tokenize, EventRole, EventStructure, EventTagger, Span, Token};

pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

pub trait MaskedLm: Send + Sync {
    /// Up to `k` alternates for `phrase`, which occupies the [`MASK`] slot of
    /// `masked_text`, best first.
    fn predict(&self, masked_text: &str, phrase: &str, k: usize) -> Result<Vec<String>>;
}

pub trait NliScorer: Send + Sync {
    /// Label and contradiction probability of `hypothesis` given `premise`.
    fn score(&self, premise: &str, hypothesis: &str) -> Result<(NliLabel, f64)>;
}

pub trait SentenceEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Array1<f64>>;
}

pub trait VideoEmbedder: Send + Sync {
    fn embed(&self, post: &VideoPost) -> Result<Array1<f64>>;
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationCandidate {
    pub original_claim: String,
    pub target_span: Span,
    pub target_kind: EventRole,
    pub original_text: String,
    pub substitution: String,
    pub candidate_claim: String,
    /// Set once the candidate has been scored.
    pub nli_label: Option<NliLabel>,
    pub contradiction_score: f64,
}

/// Lowercased tokens seen anywhere in a corpus's text fields.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary(BTreeSet<String>);

impl Vocabulary {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Vocabulary(texts.into_iter().flat_map(|t| tokenize(t).into_iter().map(|tok| tok.norm)).collect())
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Vocabulary::from_texts(corpus.records().iter().flat_map(|r| {
            std::iter::once(r.claim.as_str())
                .chain(r.speech_sentences.iter().map(|s| s.as_str()))
                .chain(r.screen_text_sentences.iter().map(|s| s.as_str()))
        }))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn contains_all(&self, phrase: &str) -> bool {
        tokenize(phrase).iter().all(|t| self.0.contains(&t.norm))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanPolicy {
    /// Arguments before triggers, each in text order.
    #[default]
    PreferArgument,
    /// Seeded shuffle of all spans per text.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Masked-LM candidates per span.
    pub k: usize,
    /// Evidence sentences manipulated per fake speech.
    pub evidence_sentences: usize,
    pub span_policy: SpanPolicy,
    /// Relative weights of fake_claim, fake_speech (incl. filled_speech),
    /// fake_video.
    pub mix: [f64; 3],
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            k: 10,
            evidence_sentences: 1,
            span_policy: SpanPolicy::PreferArgument,
            mix: [1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.evidence_sentences == 0 {
            return Err(Error::Config("k and evidence_sentences must be positive".into()));
        }
        if self.mix.iter().any(|w| !w.is_finite() || *w < 0.0) || self.mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("invalid mix {:?}", self.mix)));
        }
        Ok(())
    }
}

/// The models the pipeline depends on.
#[derive(Clone)]
pub struct Toolkit {
    pub tagger: Arc<dyn EventTagger>,
    pub masker: Arc<dyn MaskedLm>,
    pub nli: Arc<dyn NliScorer>,
    pub sentences: Arc<dyn SentenceEmbedder>,
    pub video: Arc<dyn VideoEmbedder>,
}

impl Toolkit {
    /// All stubs, with the pool-extended lexicon tagger.
    pub fn stub(seed: u64) -> Self {
        Toolkit::stub_with_tagger(seed, Arc::new(stubs::pool_tagger()))
    }

    pub fn stub_with_tagger(seed: u64, tagger: Arc<dyn EventTagger>) -> Self {
        let lex = stubs::StubLexicon::new(seed);
        Toolkit {
            tagger,
            masker: Arc::new(stubs::StubMaskedLm::new(lex.clone())),
            nli: Arc::new(stubs::StubNli::new(lex)),
            sentences: Arc::new(stubs::StubSentenceEmbedder::new(64, seed)),
            video: Arc::new(stubs::PooledVideoEmbedder),
        }
    }
}

fn phrase_key(p: &str) -> String {
    tokenize(p).into_iter().map(|t| t.norm).collect::<Vec<_>>().join(" ")
}

/// Masks `span` of `text` and asks the masker for alternates. A masker
/// failure yields no candidates and the failure message.
pub fn propose_substitutions(
    text: &str,
    tokens: &[Token],
    span: Span,
    kind: EventRole,
    masker: &dyn MaskedLm,
    k: usize,
) -> (Vec<ManipulationCandidate>, Option<String>) {
    if span.is_empty() || span.end > tokens.len() {
        return (Vec::new(), Some(format!("span {}..{} out of range", span.start, span.end)));
    }
    let (b0, b1) = (tokens[span.start].start, tokens[span.end - 1].end);
    let original = &text[b0..b1];
    let masked = format!("{}{MASK}{}", &text[..b0], &text[b1..]);
    let proposals = match masker.predict(&masked, original, k + 1) {
        Ok(p) => p,
        Err(e) => return (Vec::new(), Some(format!("masker failed: {e}"))),
    };
    let own = phrase_key(original);
    let mut seen = BTreeSet::new();
    let out = proposals
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && phrase_key(s) != own && seen.insert(phrase_key(s)))
        .take(k)
        .map(|sub| ManipulationCandidate {
            original_claim: text.to_string(),
            target_span: span,
            target_kind: kind,
            original_text: original.to_string(),
            candidate_claim: format!("{}{}{}", &text[..b0], sub, &text[b1..]),
            substitution: sub,
            nli_label: None,
            contradiction_score: 0.0,
        })
        .collect();
    (out, None)
}

/// Keeps candidates whose substitution tokens all occur in `vocab`.
pub fn filter_vocab(candidates: Vec<ManipulationCandidate>, vocab: &Vocabulary) -> Vec<ManipulationCandidate> {
    candidates.into_iter().filter(|c| vocab.contains_all(&c.substitution)).collect()
}

/// Scores every candidate and returns the contradiction-labelled ones, best
/// first; ties go to the lexicographically smaller substitution.
pub fn rank_candidates(
    original: &str,
    candidates: Vec<ManipulationCandidate>,
    nli: &dyn NliScorer,
) -> Result<Vec<ManipulationCandidate>> {
    let mut scored = Vec::new();
    for mut c in candidates {
        let (label, score) = nli.score(original, &c.candidate_claim)?;
        c.nli_label = Some(label);
        c.contradiction_score = score;
        if label == NliLabel::Contradiction {
            scored.push(c);
        }
    }
    scored.sort_by(|a, b| {
        b.contradiction_score.total_cmp(&a.contradiction_score).then_with(|| a.substitution.cmp(&b.substitution))
    });
    Ok(scored)
}

pub fn rank_by_contradiction(
    original: &str,
    candidates: Vec<ManipulationCandidate>,
    nli: &dyn NliScorer,
) -> Result<ManipulationCandidate> {
    rank_candidates(original, candidates, nli)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::NoFakeClaim(format!("{original:?}")))
}

fn ordered_spans(text: &str, structure: &EventStructure, cfg: &SynthesisConfig) -> Vec<(Span, EventRole)> {
    let mut spans: Vec<(Span, EventRole)> = structure.spans().collect();
    match cfg.span_policy {
        SpanPolicy::PreferArgument => {
            spans.sort_by_key(|(s, r)| (*r == EventRole::Trigger, s.start));
        }
        SpanPolicy::Random => {
            spans.sort_by_key(|(s, _)| s.start);
            let mut rng = seeded_rng(cfg.seed, &[b"spans", text.as_bytes()]);
            spans.shuffle(&mut rng);
        }
    }
    spans
}

/// Contradiction-labelled single-span edits of `text`, span by span in
/// policy order, each span's candidates best first.
pub fn manipulate_text(
    text: &str,
    tk: &Toolkit,
    vocab: &Vocabulary,
    cfg: &SynthesisConfig,
) -> Result<Vec<ManipulationCandidate>> {
    let (tokens, structure) = tag_events(text, tk.tagger.as_ref())?;
    if structure.is_empty() {
        return Err(Error::NoFakeClaim(format!("no event structure in {text:?}")));
    }
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for (span, kind) in ordered_spans(text, &structure, cfg) {
        let (cands, failure) = propose_substitutions(text, &tokens, span, kind, tk.masker.as_ref(), cfg.k);
        failures.extend(failure);
        let cands = filter_vocab(cands, vocab);
        out.extend(rank_candidates(text, cands, tk.nli.as_ref())?);
    }
    if out.is_empty() {
        let mut why = format!("no contradiction-labelled edit of {text:?}");
        if !failures.is_empty() {
            why.push_str(&format!(" ({})", failures.join("; ")));
        }
        return Err(Error::NoFakeClaim(why));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeClaim {
    pub source_id: String,
    /// Every acceptable edit, best first; the first is the generated claim.
    pub alternatives: Vec<ManipulationCandidate>,
}

impl FakeClaim {
    pub fn best(&self) -> &ManipulationCandidate {
        &self.alternatives[0]
    }
}

pub fn generate_fake_claim(
    post: &VideoPost,
    tk: &Toolkit,
    vocab: &Vocabulary,
    cfg: &SynthesisConfig,
) -> Result<FakeClaim> {
    let alternatives = manipulate_text(&post.claim, tk, vocab, cfg).map_err(|e| match e {
        Error::NoFakeClaim(m) => Error::NoFakeClaim(format!("post {}: {m}", post.post_id)),
        other => other,
    })?;
    Ok(FakeClaim { source_id: post.post_id.clone(), alternatives })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClaimEdit {
    Span {
        candidate: ManipulationCandidate,
        /// True when the best edit was taken by a lower post_id.
        regenerated: bool,
    },
    /// The claim of the most similar other post.
    Replacement { donor_id: String, claim: String, similarity: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimOutcome {
    pub source_id: String,
    pub edit: ClaimEdit,
}

fn nearest_claim_in(
    post: &VideoPost,
    q: &Array1<f64>,
    pool: &[VideoPost],
    embeds: &[Array1<f64>],
) -> Result<(String, String, f64)> {
    let own = phrase_key(&post.claim);
    let mut best: Option<(f64, &VideoPost)> = None;
    for (other, e) in pool.iter().zip(embeds) {
        if other.post_id == post.post_id || phrase_key(&other.claim) == own {
            continue;
        }
        let s = cosine(q, e);
        let better = match best {
            None => true,
            Some((bs, bp)) => s > bs || (s == bs && other.post_id < bp.post_id),
        };
        if better {
            best = Some((s, other));
        }
    }
    best.map(|(s, p)| (p.post_id.clone(), p.claim.clone(), s))
        .ok_or(Error::CorpusTooSmall { needed: 2, have: pool.len() })
}

/// Most similar claim in `pool` to `post`'s claim, excluding the post and
/// identical claims; ties go to the lowest post_id. Returns the donor id,
/// its claim, and the similarity.
pub fn nearest_claim(
    post: &VideoPost,
    pool: &[VideoPost],
    embedder: &dyn SentenceEmbedder,
) -> Result<(String, String, f64)> {
    let q = embedder.embed(&post.claim)?;
    let embeds = pool.iter().map(|p| embedder.embed(&p.claim)).collect::<Result<Vec<_>>>()?;
    nearest_claim_in(post, &q, pool, &embeds)
}

/// One fake claim per distinct substitution. Fakes are visited by ascending
/// source post_id; each takes its best alternate not already used, and
/// falls back to the nearest other claim in `pool` when none is left.
pub fn dedup_alternatives(
    fakes: &[FakeClaim],
    pool: &[VideoPost],
    embedder: &dyn SentenceEmbedder,
) -> Result<Vec<ClaimOutcome>> {
    let embeds = pool.iter().map(|p| embedder.embed(&p.claim)).collect::<Result<Vec<_>>>()?;
    dedup_with(fakes, pool, &embeds)
}

fn dedup_with(fakes: &[FakeClaim], pool: &[VideoPost], embeds: &[Array1<f64>]) -> Result<Vec<ClaimOutcome>> {
    let mut order: Vec<&FakeClaim> = fakes.iter().collect();
    order.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let by_id: BTreeMap<&str, usize> = pool.iter().enumerate().map(|(i, p)| (p.post_id.as_str(), i)).collect();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(order.len());
    for f in order {
        let pick = f.alternatives.iter().enumerate().find(|(_, c)| !used.contains(&phrase_key(&c.substitution)));
        let edit = match pick {
            Some((i, c)) => {
                used.insert(phrase_key(&c.substitution));
                ClaimEdit::Span { candidate: c.clone(), regenerated: i > 0 }
            }
            None => {
                let &i = by_id
                    .get(f.source_id.as_str())
                    .ok_or_else(|| Error::InvalidArgument(format!("source {} missing from the pool", f.source_id)))?;
                let (donor_id, claim, similarity) = nearest_claim_in(&pool[i], &embeds[i], pool, embeds)?;
                ClaimEdit::Replacement { donor_id, claim, similarity }
            }
        };
        out.push(ClaimOutcome { source_id: f.source_id.clone(), edit });
    }
    Ok(out)
}

/// Indices of the `m` sentences most similar to `claim`; ties go to the
/// earlier sentence.
pub fn select_evidence(
    claim: &str,
    sentences: &[String],
    embedder: &dyn SentenceEmbedder,
    m: usize,
) -> Result<Vec<usize>> {
    let q = embedder.embed(claim)?;
    let mut scored = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        scored.push((cosine(&q, &embedder.embed(s)?), i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(m).map(|(_, i)| i).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeSpeech {
    pub source_id: String,
    pub sentences: Vec<String>,
    /// Edited sentence index with its edit.
    pub edits: Vec<(usize, ManipulationCandidate)>,
}

pub fn generate_fake_speech(
    post: &VideoPost,
    tk: &Toolkit,
    vocab: &Vocabulary,
    cfg: &SynthesisConfig,
) -> Result<FakeSpeech> {
    if post.speech_sentences.is_empty() {
        return Err(Error::InvalidArgument(format!("post {} has no speech", post.post_id)));
    }
    let evidence = select_evidence(&post.claim, &post.speech_sentences, tk.sentences.as_ref(), cfg.evidence_sentences)?;
    let mut sentences = post.speech_sentences.clone();
    let mut edits = Vec::new();
    for i in evidence {
        match manipulate_text(&post.speech_sentences[i], tk, vocab, cfg) {
            Ok(c) => {
                sentences[i] = c[0].candidate_claim.clone();
                edits.push((i, c[0].clone()));
            }
            Err(Error::NoFakeClaim(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if edits.is_empty() {
        return Err(Error::Skipped(format!("post {}: no manipulable evidence sentence", post.post_id)));
    }
    edits.sort_by_key(|(i, _)| *i);
    Ok(FakeSpeech { source_id: post.post_id.clone(), sentences, edits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSwap {
    pub source_id: String,
    pub donor_id: String,
    pub similarity: f64,
}

fn nearest_video(post: &VideoPost, q: &Array1<f64>, pool: &[VideoPost], embeds: &[Array1<f64>]) -> Result<VideoSwap> {
    let mut best: Option<(f64, &VideoPost)> = None;
    for (other, e) in pool.iter().zip(embeds) {
        if other.post_id == post.post_id || other.video_link == post.video_link {
            continue;
        }
        let s = cosine(q, e);
        let better = match best {
            None => true,
            Some((bs, bp)) => s > bs || (s == bs && other.post_id < bp.post_id),
        };
        if better {
            best = Some((s, other));
        }
    }
    best.map(|(similarity, d)| VideoSwap { source_id: post.post_id.clone(), donor_id: d.post_id.clone(), similarity })
        .ok_or(Error::CorpusTooSmall { needed: 2, have: pool.len() })
}

/// Nearest other video by cosine over pooled embeddings; the source video
/// (same post or same link) is excluded and ties go to the lowest post_id.
pub fn generate_fake_video(post: &VideoPost, pool: &[VideoPost], embedder: &dyn VideoEmbedder) -> Result<VideoSwap> {
    if pool.len() < 2 {
        return Err(Error::CorpusTooSmall { needed: 2, have: pool.len() });
    }
    let q = embedder.embed(post)?;
    let embeds = pool.iter().map(|p| embedder.embed(p)).collect::<Result<Vec<_>>>()?;
    nearest_video(post, &q, pool, &embeds)
}

/// Named entities of `text`: tagged argument spans plus capitalized words
/// that do not open the text, lowercased.
pub fn entities(text: &str, tagger: &dyn EventTagger) -> Result<BTreeSet<String>> {
    if text.trim().is_empty() {
        return Ok(BTreeSet::new());
    }
    let (tokens, structure) = tag_events(text, tagger)?;
    let mut out: BTreeSet<String> = structure
        .arguments
        .iter()
        .map(|s| tokens[s.start..s.end].iter().map(|t| t.norm.as_str()).collect::<Vec<_>>().join(" "))
        .collect();
    for t in tokens.iter().skip(1) {
        if t.text.chars().next().is_some_and(|c| c.is_uppercase()) && t.text.chars().any(|c| c.is_alphabetic()) {
            out.insert(t.norm.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechFill {
    pub source_id: String,
    pub donor_id: String,
    pub sentences: Vec<String>,
    pub shared: Vec<String>,
}

fn speech_entities(post: &VideoPost, tagger: &dyn EventTagger) -> Result<BTreeSet<String>> {
    let mut ents = BTreeSet::new();
    for s in &post.speech_sentences {
        ents.extend(entities(s, tagger)?);
    }
    Ok(ents)
}

fn fill_from(
    post: &VideoPost,
    pool: &[VideoPost],
    pool_entities: &[BTreeSet<String>],
    tagger: &dyn EventTagger,
) -> Result<SpeechFill> {
    if !post.speech_sentences.is_empty() {
        return Err(Error::InvalidArgument(format!("post {} already has speech", post.post_id)));
    }
    let claim_entities = entities(&post.claim, tagger)?;
    let mut best: Option<(usize, &VideoPost, Vec<String>)> = None;
    for (other, ents) in pool.iter().zip(pool_entities) {
        if other.post_id == post.post_id || other.speech_sentences.is_empty() {
            continue;
        }
        let shared: Vec<String> = claim_entities.intersection(ents).cloned().collect();
        if shared.is_empty() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((n, bp, _)) => shared.len() > *n || (shared.len() == *n && other.post_id < bp.post_id),
        };
        if better {
            best = Some((shared.len(), other, shared));
        }
    }
    let (_, donor, shared) = best
        .ok_or_else(|| Error::Skipped(format!("post {}: no speech shares an entity with the claim", post.post_id)))?;
    Ok(SpeechFill {
        source_id: post.post_id.clone(),
        donor_id: donor.post_id.clone(),
        sentences: donor.speech_sentences.clone(),
        shared,
    })
}

/// The speech in `pool` sharing the most entities with `post`'s claim (at
/// least one); ties go to the lowest post_id.
pub fn fill_missing_speech(post: &VideoPost, pool: &[VideoPost], tagger: &dyn EventTagger) -> Result<SpeechFill> {
    let pool_entities = pool.iter().map(|p| speech_entities(p, tagger)).collect::<Result<Vec<_>>>()?;
    fill_from(post, pool, &pool_entities, tagger)
}

/// Splits `n` across `weights` by largest remainder; ties go to the earlier
/// bucket.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
        return Err(Error::Config(format!("invalid weights {weights:?}")));
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SpanEdit,
    Replacement,
    VideoSwap,
    SpeechFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDetail {
    /// Speech sentence index; absent for claim edits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence: Option<usize>,
    pub kind: EventRole,
    pub original: String,
    pub substitution: String,
    pub contradiction_score: f64,
    pub regenerated: bool,
}

impl EditDetail {
    fn of(c: &ManipulationCandidate, sentence: Option<usize>, regenerated: bool) -> Self {
        EditDetail {
            sentence,
            kind: c.target_kind,
            original: c.original_text.clone(),
            substitution: c.substitution.clone(),
            contradiction_score: c.contradiction_score,
            regenerated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub post_id: String,
    pub taxonomy: Taxonomy,
    pub method: Method,
    /// Source post first, then any donor.
    pub source_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edits: Vec<EditDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRejection {
    pub source_id: String,
    pub bucket: Taxonomy,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub pristine: usize,
    pub quotas: [usize; 3],
    pub emitted: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Provenance(&'a Provenance),
    Rejection(&'a SynthesisRejection),
    Summary(&'a SynthesisSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub provenance: Vec<Provenance>,
    pub rejections: Vec<SynthesisRejection>,
    pub summary: SynthesisSummary,
}

impl SynthesisReport {
    /// One JSON object per line: provenance entries, rejections, summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let lines = self
            .provenance
            .iter()
            .map(ReportLine::Provenance)
            .chain(self.rejections.iter().map(ReportLine::Rejection))
            .chain(std::iter::once(ReportLine::Summary(&self.summary)));
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("report serializes"));
            out.push('\n');
        }
        out
    }

    pub fn provenance_of(&self, post_id: &str) -> Option<&Provenance> {
        self.provenance.iter().find(|p| p.post_id == post_id)
    }
}

pub fn fake_id(source: &str, tax: Taxonomy) -> String {
    format!("{source}~{}", tax.as_str())
}

fn shuffled(n: usize, seed: u64, bucket: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, &[b"order", bucket.as_bytes()]);
    idx.shuffle(&mut rng);
    idx
}

fn reject(rejections: &mut Vec<SynthesisRejection>, source: &str, bucket: Taxonomy, e: &Error) {
    rejections.push(SynthesisRejection { source_id: source.to_string(), bucket, reason: e.to_string() });
}

/// Pristine records plus as many manipulated ones, split across fake_claim,
/// speech (fake_speech for posts with speech, filled_speech otherwise), and
/// fake_video by largest-remainder rounding of the mix. Span-edited fake
/// claims are preferred; nearest-claim replacements only cover a shortfall.
pub fn build_balanced_dataset(
    pristine: &Corpus,
    tk: &Toolkit,
    cfg: &SynthesisConfig,
) -> Result<(Corpus, SynthesisReport)> {
    cfg.validate()?;
    let records = pristine.records();
    if let Some(r) = records.iter().find(|r| r.taxonomy != Taxonomy::Pristine) {
        return Err(Error::InvalidArgument(format!("record {} is not pristine", r.post_id)));
    }
    let n = records.len();
    let q = largest_remainder(n, &cfg.mix)?;
    let quotas = [q[0], q[1], q[2]];
    let vocab = Vocabulary::from_corpus(pristine);
    let mut rejections = Vec::new();
    let mut shortfalls = Vec::new();
    let mut fakes: Vec<(VideoPost, Provenance)> = Vec::new();

    let base = |src: &VideoPost, tax: Taxonomy| {
        let mut r = src.clone();
        r.post_id = fake_id(&src.post_id, tax);
        r.taxonomy = tax;
        r.label = Label::Inconsistent;
        r
    };

    // claims
    if quotas[0] > 0 {
        let gen: Vec<Result<FakeClaim>> = records.par_iter().map(|r| generate_fake_claim(r, tk, &vocab, cfg)).collect();
        let mut ok = Vec::new();
        for (r, g) in records.iter().zip(gen) {
            match g {
                Ok(f) => ok.push(f),
                Err(e) => reject(&mut rejections, &r.post_id, Taxonomy::FakeClaim, &e),
            }
        }
        let embeds = records.par_iter().map(|r| tk.sentences.embed(&r.claim)).collect::<Result<Vec<_>>>()?;
        let by_src: BTreeMap<&str, &FakeClaim> = ok.iter().map(|f| (f.source_id.as_str(), f)).collect();
        let mut queue: std::collections::VecDeque<&FakeClaim> = shuffled(n, cfg.seed, "fake_claim")
            .into_iter()
            .filter_map(|i| by_src.get(records[i].post_id.as_str()).copied())
            .collect();
        let mut active: Vec<FakeClaim> = Vec::new();
        let mut outcomes;
        loop {
            while active.len() < quotas[0] {
                match queue.pop_front() {
                    Some(f) => active.push(f.clone()),
                    None => break,
                }
            }
            outcomes = dedup_with(&active, records, &embeds)?;
            let replaced: BTreeSet<&str> = outcomes
                .iter()
                .filter(|o| matches!(o.edit, ClaimEdit::Replacement { .. }))
                .map(|o| o.source_id.as_str())
                .collect();
            if replaced.is_empty() || queue.is_empty() {
                break;
            }
            let keep: Vec<FakeClaim> =
                active.iter().filter(|f| !replaced.contains(f.source_id.as_str())).cloned().collect();
            active = keep;
        }
        // emit in queue order so the output is independent of id order
        let rank: BTreeMap<&str, usize> = active.iter().enumerate().map(|(i, f)| (f.source_id.as_str(), i)).collect();
        let mut chosen: Vec<&ClaimOutcome> = outcomes.iter().collect();
        chosen.sort_by_key(|o| rank[o.source_id.as_str()]);
        if chosen.len() < quotas[0] {
            shortfalls.push(format!("fake_claim {} of {}", chosen.len(), quotas[0]));
        }
        let idx: BTreeMap<&str, &VideoPost> = records.iter().map(|r| (r.post_id.as_str(), r)).collect();
        for o in chosen {
            let src = idx[o.source_id.as_str()];
            let mut r = base(src, Taxonomy::FakeClaim);
            let prov = match &o.edit {
                ClaimEdit::Span { candidate, regenerated } => {
                    r.claim = candidate.candidate_claim.clone();
                    Provenance {
                        post_id: r.post_id.clone(),
                        taxonomy: Taxonomy::FakeClaim,
                        method: Method::SpanEdit,
                        source_ids: vec![src.post_id.clone()],
                        edits: vec![EditDetail::of(candidate, None, *regenerated)],
                    }
                }
                ClaimEdit::Replacement { donor_id, claim, .. } => {
                    r.claim = claim.clone();
                    Provenance {
                        post_id: r.post_id.clone(),
                        taxonomy: Taxonomy::FakeClaim,
                        method: Method::Replacement,
                        source_ids: vec![src.post_id.clone(), donor_id.clone()],
                        edits: Vec::new(),
                    }
                }
            };
            fakes.push((r, prov));
        }
    }

    // speech
    if quotas[1] > 0 {
        let order = shuffled(n, cfg.seed, "fake_speech");
        let pool_entities =
            records.par_iter().map(|r| speech_entities(r, tk.tagger.as_ref())).collect::<Result<Vec<_>>>()?;
        let gen: Vec<Result<(VideoPost, Provenance)>> = order
            .par_iter()
            .map(|&i| {
                let src = &records[i];
                if src.speech_sentences.is_empty() {
                    let f = fill_from(src, records, &pool_entities, tk.tagger.as_ref())?;
                    let mut r = base(src, Taxonomy::FilledSpeech);
                    r.speech_sentences = f.sentences;
                    let prov = Provenance {
                        post_id: r.post_id.clone(),
                        taxonomy: Taxonomy::FilledSpeech,
                        method: Method::SpeechFill,
                        source_ids: vec![src.post_id.clone(), f.donor_id],
                        edits: Vec::new(),
                    };
                    Ok((r, prov))
                } else {
                    let f = generate_fake_speech(src, tk, &vocab, cfg)?;
                    let mut r = base(src, Taxonomy::FakeSpeech);
                    r.speech_sentences = f.sentences;
                    let prov = Provenance {
                        post_id: r.post_id.clone(),
                        taxonomy: Taxonomy::FakeSpeech,
                        method: Method::SpanEdit,
                        source_ids: vec![src.post_id.clone()],
                        edits: f.edits.iter().map(|(i, c)| EditDetail::of(c, Some(*i), false)).collect(),
                    };
                    Ok((r, prov))
                }
            })
            .collect();
        let mut taken = 0;
        for (&i, g) in order.iter().zip(gen) {
            if taken == quotas[1] {
                break;
            }
            match g {
                Ok(f) => {
                    fakes.push(f);
                    taken += 1;
                }
                Err(e) => reject(&mut rejections, &records[i].post_id, Taxonomy::FakeSpeech, &e),
            }
        }
        if taken < quotas[1] {
            shortfalls.push(format!("fake_speech {taken} of {}", quotas[1]));
        }
    }

    // video
    if quotas[2] > 0 {
        let embeds = records.par_iter().map(|r| tk.video.embed(r)).collect::<Result<Vec<_>>>()?;
        let order = shuffled(n, cfg.seed, "fake_video");
        let mut taken = 0;
        for &i in &order {
            if taken == quotas[2] {
                break;
            }
            let src = &records[i];
            match nearest_video(src, &embeds[i], records, &embeds) {
                Ok(swap) => {
                    let donor = pristine.get(&swap.donor_id).expect("donor comes from the corpus");
                    let mut r = base(src, Taxonomy::FakeVideo);
                    r.frames = donor.frames.clone();
                    r.video_link = donor.video_link.clone();
                    let prov = Provenance {
                        post_id: r.post_id.clone(),
                        taxonomy: Taxonomy::FakeVideo,
                        method: Method::VideoSwap,
                        source_ids: vec![src.post_id.clone(), swap.donor_id],
                        edits: Vec::new(),
                    };
                    fakes.push((r, prov));
                    taken += 1;
                }
                Err(e) => reject(&mut rejections, &src.post_id, Taxonomy::FakeVideo, &e),
            }
        }
        if taken < quotas[2] {
            shortfalls.push(format!("fake_video {taken} of {}", quotas[2]));
        }
    }

    if !shortfalls.is_empty() {
        return Err(Error::Shortfall(shortfalls.join(", ")));
    }
    let mut emitted = BTreeMap::new();
    for (r, _) in &fakes {
        *emitted.entry(r.taxonomy.as_str().to_string()).or_insert(0) += 1;
    }
    let mut out = records.to_vec();
    let mut provenance = Vec::with_capacity(fakes.len());
    for (r, p) in fakes {
        out.push(r);
        provenance.push(p);
    }
    rejections.sort_by(|a, b| (a.bucket.as_str(), &a.source_id).cmp(&(b.bucket.as_str(), &b.source_id)));
    let corpus = Corpus::new(pristine.patches_per_frame(), pristine.frame_dim(), out)?;
    Ok((corpus, SynthesisReport { provenance, rejections, summary: SynthesisSummary { pristine: n, quotas, emitted } }))
}

#[cfg(test)]
mod tests {
    use super::stubs::*;
    use super::*;
    use crate::corpus::tests::post;
    use crate::events::LexiconTagger;
    use proptest::prelude::*;
    use std::collections::HashMap;

    struct FixedMasker(Vec<&'static str>);
    impl MaskedLm for FixedMasker {
        fn predict(&self, _m: &str, _p: &str, k: usize) -> Result<Vec<String>> {
            Ok(self.0.iter().take(k).map(|s| s.to_string()).collect())
        }
    }

    struct FailingMasker;
    impl MaskedLm for FailingMasker {
        fn predict(&self, _m: &str, _p: &str, _k: usize) -> Result<Vec<String>> {
            Err(Error::InvalidArgument("offline".into()))
        }
    }

    struct TableNli(HashMap<String, (NliLabel, f64)>);
    impl NliScorer for TableNli {
        fn score(&self, _p: &str, h: &str) -> Result<(NliLabel, f64)> {
            Ok(*self.0.get(h).unwrap_or(&(NliLabel::Neutral, 0.0)))
        }
    }

    struct TableVideo(HashMap<String, Array1<f64>>);
    impl VideoEmbedder for TableVideo {
        fn embed(&self, p: &VideoPost) -> Result<Array1<f64>> {
            Ok(self.0[&p.post_id].clone())
        }
    }

    const CONTAIN: &str = "Officials are scrambling to contain outbreaks of the coronavirus outside of China.";
    const DENT: &str = "Fed chair powell warns omicron variant could dent economic recovery.";
    const BOOSTER: &str = "Moderna chairman getting vaccinated booster shots is the only way to stop the virus.";
    const HOME: &str = "Australians caught up in china's crisis have finally returned home after 14 days quarantined on christmas island.";

    fn example_toolkit() -> Toolkit {
        Toolkit::stub_with_tagger(0, Arc::new(example_tagger()))
    }

    fn example_vocab() -> Vocabulary {
        Vocabulary::from_texts([
            CONTAIN,
            DENT,
            BOOSTER,
            HOME,
            "the spread of ebola can facilitate getting infected and lost",
        ])
    }

    fn span_of(text: &str, phrase: &str) -> (Vec<Token>, Span) {
        let tokens = tokenize(text);
        let words: Vec<String> = tokenize(phrase).into_iter().map(|t| t.norm).collect();
        let start = (0..tokens.len())
            .find(|&i| tokens[i..].iter().take(words.len()).map(|t| t.norm.clone()).collect::<Vec<_>>() == words)
            .unwrap();
        (tokens, Span::new(start, start + words.len()))
    }

    #[test]
    fn propose_excludes_original_and_truncates() {
        let text = "contain outbreaks outside of China";
        let (tokens, span) = span_of(text, "outbreaks");
        let m = FixedMasker(vec!["cases", "outbreaks", "clusters", "waves"]);
        let (c, fail) = propose_substitutions(text, &tokens, span, EventRole::Argument, &m, 10);
        assert!(fail.is_none());
        let subs: Vec<&str> = c.iter().map(|c| c.substitution.as_str()).collect();
        assert_eq!(subs, ["cases", "clusters", "waves"]);
        assert_eq!(c[0].candidate_claim, "contain cases outside of China");
        let (c, _) = propose_substitutions(text, &tokens, span, EventRole::Argument, &m, 1);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].substitution, "cases");
        let (c, fail) = propose_substitutions(text, &tokens, span, EventRole::Argument, &FailingMasker, 3);
        assert!(c.is_empty());
        assert!(fail.unwrap().contains("offline"));
    }

    #[test]
    fn vocab_filter() {
        let text = "stop covid now";
        let (tokens, span) = span_of(text, "covid");
        let m = FixedMasker(vec!["ebola", "zebra flu", "flu"]);
        let (c, _) = propose_substitutions(text, &tokens, span, EventRole::Argument, &m, 10);
        let vocab = Vocabulary::from_texts(["ebola and flu"]);
        let kept: Vec<String> = filter_vocab(c, &vocab).into_iter().map(|c| c.substitution).collect();
        assert_eq!(kept, ["ebola", "flu"]);
        assert!(filter_vocab(Vec::new(), &vocab).is_empty());
    }

    fn scored(subs: &[(&'static str, NliLabel, f64)]) -> (Vec<ManipulationCandidate>, TableNli) {
        let text = "stop covid now";
        let (tokens, span) = span_of(text, "covid");
        let m = FixedMasker(subs.iter().map(|s| s.0).collect());
        let (c, _) = propose_substitutions(text, &tokens, span, EventRole::Argument, &m, 10);
        let nli = TableNli(subs.iter().map(|(s, l, v)| (format!("stop {s} now"), (*l, *v))).collect());
        (c, nli)
    }

    #[test]
    fn ranking_rules() {
        use NliLabel::*;
        let (c, nli) = scored(&[("a", Contradiction, 0.9), ("b", Contradiction, 0.7), ("c", Neutral, 0.95)]);
        assert_eq!(rank_by_contradiction("stop covid now", c, &nli).unwrap().substitution, "a");
        let (c, nli) = scored(&[("a", Neutral, 0.9), ("b", Neutral, 0.7)]);
        assert!(matches!(rank_by_contradiction("stop covid now", c, &nli), Err(Error::NoFakeClaim(_))));
        let (c, nli) = scored(&[("zeta", Contradiction, 0.8), ("alpha", Contradiction, 0.8)]);
        assert_eq!(rank_by_contradiction("stop covid now", c, &nli).unwrap().substitution, "alpha");
    }

    #[test]
    fn worked_examples_are_reproduced() {
        let tk = example_toolkit();
        let vocab = example_vocab();
        let cfg = SynthesisConfig::default();
        let cases = [
            (CONTAIN, "Officials are scrambling to contain the spread of ebola outside of China.", EventRole::Argument),
            (DENT, "Fed chair powell warns omicron variant could facilitate economic recovery.", EventRole::Trigger),
            (BOOSTER, "Moderna chairman getting infected is the only way to stop the virus.", EventRole::Argument),
            (
                HOME,
                "Australians caught up in china's crisis have lost home after 14 days quarantined on christmas island.",
                EventRole::Trigger,
            ),
        ];
        for (i, (claim, fake, kind)) in cases.iter().enumerate() {
            let p = post(&format!("p{i}"), "v", claim, Taxonomy::Pristine);
            let f = generate_fake_claim(&p, &tk, &vocab, &cfg).unwrap();
            assert_eq!(f.best().candidate_claim, *fake);
            assert_eq!(f.best().target_kind, *kind);
            assert_eq!(f.best().nli_label, Some(NliLabel::Contradiction));
        }
        let p = post("q", "v", "Nothing eventful is described here", Taxonomy::Pristine);
        assert!(matches!(generate_fake_claim(&p, &tk, &vocab, &cfg), Err(Error::NoFakeClaim(_))));
    }

    fn fake(id: &str, subs: &[&'static str]) -> FakeClaim {
        let text = "stop covid now";
        let (tokens, span) = span_of(text, "covid");
        let m = FixedMasker(subs.to_vec());
        let (alternatives, _) = propose_substitutions(text, &tokens, span, EventRole::Argument, &m, 10);
        FakeClaim { source_id: id.into(), alternatives }
    }

    #[test]
    fn dedup_keeps_lowest_id_and_regenerates() {
        let pool = vec![
            post("a", "va", "stop covid now", Taxonomy::Pristine),
            post("b", "vb", "stop covid now", Taxonomy::Pristine),
            post("c", "vc", "masks stop flu today", Taxonomy::Pristine),
        ];
        let emb = StubSentenceEmbedder::new(16, 0);
        let out = dedup_alternatives(&[fake("b", &["ebola", "flu"]), fake("a", &["ebola"])], &pool, &emb).unwrap();
        assert_eq!(out[0].source_id, "a");
        assert!(
            matches!(&out[0].edit, ClaimEdit::Span { candidate, regenerated: false } if candidate.substitution == "ebola")
        );
        assert!(
            matches!(&out[1].edit, ClaimEdit::Span { candidate, regenerated: true } if candidate.substitution == "flu")
        );

        let out = dedup_alternatives(&[fake("a", &["ebola"]), fake("b", &["ebola"])], &pool, &emb).unwrap();
        assert!(matches!(&out[1].edit, ClaimEdit::Replacement { donor_id, .. } if donor_id == "c"));

        let distinct = [fake("a", &["x"]), fake("b", &["y"])];
        let out = dedup_alternatives(&distinct, &pool, &emb).unwrap();
        for (o, f) in out.iter().zip(&distinct) {
            assert!(matches!(&o.edit, ClaimEdit::Span { candidate, regenerated: false } if candidate == f.best()));
        }
    }

    #[test]
    fn dedup_multiplicities_are_one() {
        let c = demo::generate(80, 3, demo::DemoShape::default()).unwrap();
        let tk = Toolkit::stub(3);
        let vocab = Vocabulary::from_corpus(&c);
        let cfg = SynthesisConfig::default();
        let fakes: Vec<FakeClaim> =
            c.records().iter().filter_map(|r| generate_fake_claim(r, &tk, &vocab, &cfg).ok()).collect();
        let out = dedup_alternatives(&fakes, c.records(), tk.sentences.as_ref()).unwrap();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for o in &out {
            if let ClaimEdit::Span { candidate, .. } = &o.edit {
                *counts.entry(candidate.substitution.to_lowercase()).or_default() += 1;
            }
        }
        assert!(counts.len() > 10);
        assert!(counts.values().all(|&n| n == 1), "{counts:?}");
    }

    fn brute_cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        dot / (na.sqrt() * nb.sqrt())
    }

    #[test]
    fn evidence_selection() {
        let emb = StubSentenceEmbedder::new(32, 1);
        assert_eq!(select_evidence("x y", &["only one".into()], &emb, 1).unwrap(), [0]);
        let c = demo::generate(30, 5, demo::DemoShape::default()).unwrap();
        for r in c.records().iter().filter(|r| !r.speech_sentences.is_empty()) {
            let q = emb.embed(&r.claim).unwrap();
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, s) in r.speech_sentences.iter().enumerate() {
                let v = brute_cosine(&q, &emb.embed(s).unwrap());
                if v > best.0 {
                    best = (v, i);
                }
            }
            assert_eq!(select_evidence(&r.claim, &r.speech_sentences, &emb, 1).unwrap(), [best.1]);
        }
    }

    #[test]
    fn fake_speech_edits_only_the_evidence() {
        let tk = Toolkit::stub(0);
        let claim = "Officials stop covid in Oslo";
        let mut p = post("s", "v", claim, Taxonomy::Pristine);
        p.speech_sentences = vec!["The weather was mild".into(), claim.into(), "Trains ran late".into()];
        let vocab = Vocabulary::from_texts([claim, "spread ebola flu measles"]);
        let f = generate_fake_speech(&p, &tk, &vocab, &SynthesisConfig::default()).unwrap();
        assert_eq!(f.edits.len(), 1);
        assert_eq!(f.edits[0].0, 1);
        assert_ne!(f.sentences[1], claim);
        assert_eq!(f.sentences[0], p.speech_sentences[0]);
        assert_eq!(f.sentences[2], p.speech_sentences[2]);
        p.speech_sentences = vec!["Nothing to see".into()];
        assert!(matches!(generate_fake_speech(&p, &tk, &vocab, &SynthesisConfig::default()), Err(Error::Skipped(_))));
    }

    #[test]
    fn video_neighbours() {
        let pool = vec![
            post("a", "va", "c", Taxonomy::Pristine),
            post("b", "vb", "c", Taxonomy::Pristine),
            post("c", "vc", "c", Taxonomy::Pristine),
        ];
        let emb = TableVideo(HashMap::from([
            ("a".to_string(), Array1::from(vec![1.0, 0.0])),
            ("b".to_string(), Array1::from(vec![0.6, 0.8])),
            ("c".to_string(), Array1::from(vec![0.0, 1.0])),
        ]));
        assert_eq!(generate_fake_video(&pool[0], &pool, &emb).unwrap().donor_id, "b");
        assert_eq!(generate_fake_video(&pool[2], &pool, &emb).unwrap().donor_id, "b");
        let tie = TableVideo(HashMap::from([
            ("a".to_string(), Array1::from(vec![1.0, 0.0])),
            ("b".to_string(), Array1::from(vec![0.0, 1.0])),
            ("c".to_string(), Array1::from(vec![0.0, 1.0])),
        ]));
        assert_eq!(generate_fake_video(&pool[0], &pool, &tie).unwrap().donor_id, "b");
        assert!(matches!(generate_fake_video(&pool[0], &pool[..1], &emb), Err(Error::CorpusTooSmall { .. })));
    }

    #[test]
    fn speech_fill() {
        let tagger = LexiconTagger::covid_default();
        let mut target = post("t", "vt", "Moderna shots arrive", Taxonomy::Pristine);
        target.speech_sentences.clear();
        let mut other = post("o", "vo", "x", Taxonomy::Pristine);
        other.speech_sentences = vec!["The moderna supply is low".into()];
        let mut none = post("n", "vn", "x", Taxonomy::Pristine);
        none.speech_sentences = vec!["Weather is fine".into()];
        let pool = vec![target.clone(), none.clone(), other];
        let f = fill_missing_speech(&target, &pool, &tagger).unwrap();
        assert_eq!(f.donor_id, "o");
        assert_eq!(f.shared, ["moderna"]);
        assert!(matches!(fill_missing_speech(&target, &[target.clone(), none], &tagger), Err(Error::Skipped(_))));
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(100, &[1.0, 1.0, 1.0]).unwrap(), [34, 33, 33]);
        assert_eq!(largest_remainder(6, &[1.0, 1.0, 1.0]).unwrap(), [2, 2, 2]);
        assert_eq!(largest_remainder(5, &[0.0, 1.0, 0.0]).unwrap(), [0, 5, 0]);
        assert!(largest_remainder(5, &[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn largest_remainder_is_tight(n in 0usize..500, w in proptest::collection::vec(0.0f64..5.0, 1..5)) {
            prop_assume!(w.iter().sum::<f64>() > 0.01);
            let q = largest_remainder(n, &w).unwrap();
            prop_assert_eq!(q.iter().sum::<usize>(), n);
            let total: f64 = w.iter().sum();
            for (qi, wi) in q.iter().zip(&w) {
                prop_assert!((*qi as f64 - n as f64 * wi / total).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn balanced_build_is_deterministic_and_balanced() {
        let c = demo::generate(40, 9, demo::DemoShape::default()).unwrap();
        let tk = Toolkit::stub(9);
        let cfg = SynthesisConfig { seed: 9, ..SynthesisConfig::default() };
        let (a, ra) = build_balanced_dataset(&c, &tk, &cfg).unwrap();
        let (b, rb) = build_balanced_dataset(&c, &tk, &cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(ra.to_jsonl(), rb.to_jsonl());
        let inc = a.records().iter().filter(|r| r.label == Label::Inconsistent).count();
        assert_eq!(inc * 2, a.len());
        for r in a.records().iter().filter(|r| r.label == Label::Inconsistent) {
            assert!(ra.provenance_of(&r.post_id).is_some());
        }
    }

    #[test]
    fn shortfall_is_reported() {
        let recs: Vec<VideoPost> =
            (0..4).map(|i| post(&format!("p{i}"), &format!("v{i}"), "Nothing eventful", Taxonomy::Pristine)).collect();
        let c = Corpus::new(2, 3, recs).unwrap();
        let cfg = SynthesisConfig { mix: [1.0, 0.0, 0.0], ..SynthesisConfig::default() };
        let e = build_balanced_dataset(&c, &Toolkit::stub(0), &cfg).unwrap_err();
        assert!(matches!(e, Error::Shortfall(ref m) if m.contains("fake_claim 0 of 4")));
        assert_eq!(e.code(), 4);
    }
}
