// SPDX-License-Identifier: Apache-2.0

//! Video-post records, the line-delimited corpus format, and corpus-level
//! filtering and splitting.
//!
//! A corpus file starts with a header object declaring the patch grid,
//! followed by one record object per line:
//!
//! ```text
//! {"format":"postcheck-corpus","version":1,"patches_per_frame":4,"frame_dim":8}
//! {"post_id":"p1","video_link":"v1","claim":"...","speech":["..."],"screen_text":[],
//!  "frames":[[...N*D_v numbers...]],"label":"consistent","taxonomy":"pristine",
//!  "verified":true,"video_length_s":12.0}
//! ```
//!
//! Instead of inline `frames`, a record may carry `frames_ref`, either
//! `{"sidecar":"feat.bin","frames":[0,1,2]}` (path relative to the corpus file)
//! or `{"stub":["id0","id1"]}` resolved through the stub frame encoder.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoders::{seeded_rng, FrameEncoder, FramePatchFeatures, FrameRef, SidecarFeatures, StubFrameEncoder};
use crate::error::{Error, Result};
use crate::events::{tag_events, EventTagger};

pub const FORMAT_TAG: &str = "postcheck-corpus";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Consistent,
    Inconsistent,
}

impl Label {
    pub fn is_inconsistent(self) -> bool {
        self == Label::Inconsistent
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Consistent => "consistent",
            Label::Inconsistent => "inconsistent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    Pristine,
    FakeClaim,
    FakeSpeech,
    FakeVideo,
    FilledSpeech,
}

impl Taxonomy {
    pub const ALL: [Taxonomy; 5] =
        [Taxonomy::Pristine, Taxonomy::FakeClaim, Taxonomy::FakeSpeech, Taxonomy::FakeVideo, Taxonomy::FilledSpeech];

    pub fn label(self) -> Label {
        match self {
            Taxonomy::Pristine => Label::Consistent,
            _ => Label::Inconsistent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Taxonomy::Pristine => "pristine",
            Taxonomy::FakeClaim => "fake_claim",
            Taxonomy::FakeSpeech => "fake_speech",
            Taxonomy::FakeVideo => "fake_video",
            Taxonomy::FilledSpeech => "filled_speech",
        }
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPost {
    pub post_id: String,
    pub video_link: String,
    pub claim: String,
    pub frames: Vec<FramePatchFeatures>,
    pub speech_sentences: Vec<String>,
    pub screen_text_sentences: Vec<String>,
    pub label: Label,
    pub taxonomy: Taxonomy,
    pub verified_account: bool,
    pub video_length_s: f64,
}

impl VideoPost {
    /// Checks record-level invariants against the corpus patch grid.
    pub fn validate(&self, patches: usize, dim: usize) -> std::result::Result<(), String> {
        if self.post_id.is_empty() {
            return Err("empty post_id".into());
        }
        if self.claim.trim().is_empty() {
            return Err("empty claim".into());
        }
        if self.label != self.taxonomy.label() {
            return Err(format!("label {} contradicts taxonomy {}", self.label, self.taxonomy));
        }
        if self.frames.is_empty() {
            return Err("no frames".into());
        }
        if let Some(f) = self.frames.iter().find(|f| f.num_patches() != patches || f.dim() != dim) {
            return Err(format!("frame is {}x{}, corpus declares {patches}x{dim}", f.num_patches(), f.dim()));
        }
        if !(self.video_length_s.is_finite() && self.video_length_s >= 0.0) {
            return Err(format!("bad video_length_s {}", self.video_length_s));
        }
        if self.speech_sentences.iter().chain(&self.screen_text_sentences).any(|s| s.trim().is_empty()) {
            return Err("blank sentence".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub patches_per_frame: usize,
    pub frame_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_seed: Option<u64>,
}

/// Immutable after construction; share behind `Arc` for parallel readers.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    patches_per_frame: usize,
    frame_dim: usize,
    records: Vec<VideoPost>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub post_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rejections: Vec<Rejection>,
    pub dropped_unverified: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub drop_unverified: bool,
}

#[derive(Deserialize)]
struct RawRecord {
    post_id: Option<String>,
    video_link: Option<String>,
    claim: Option<String>,
    speech: Option<Vec<String>>,
    screen_text: Option<Vec<String>>,
    frames: Option<Vec<Vec<f64>>>,
    frames_ref: Option<RawFramesRef>,
    label: Option<Label>,
    taxonomy: Option<Taxonomy>,
    verified: Option<bool>,
    video_length_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFramesRef {
    Sidecar { sidecar: String, frames: Vec<usize> },
    Stub { stub: Vec<String> },
}

#[derive(Serialize)]
struct RecordOut<'a> {
    post_id: &'a str,
    video_link: &'a str,
    claim: &'a str,
    speech: &'a [String],
    screen_text: &'a [String],
    frames: Vec<Vec<f64>>,
    label: Label,
    taxonomy: Taxonomy,
    verified: bool,
    video_length_s: f64,
}

struct FrameResolver<'a> {
    base: PathBuf,
    header: &'a CorpusHeader,
    sidecars: HashMap<String, SidecarFeatures>,
}

impl FrameResolver<'_> {
    fn resolve(&mut self, r: RawFramesRef) -> std::result::Result<Vec<FramePatchFeatures>, String> {
        match r {
            RawFramesRef::Stub { stub } => {
                let enc = StubFrameEncoder::new(
                    self.header.patches_per_frame,
                    self.header.frame_dim,
                    self.header.stub_seed.unwrap_or(0),
                );
                stub.iter().map(|id| enc.encode_frame_patches(&FrameRef::Stub(id)).map_err(|e| e.to_string())).collect()
            }
            RawFramesRef::Sidecar { sidecar, frames } => {
                if !self.sidecars.contains_key(&sidecar) {
                    let side = SidecarFeatures::open(&self.base.join(&sidecar)).map_err(|e| e.to_string())?;
                    if side.num_patches() != self.header.patches_per_frame || side.dim() != self.header.frame_dim {
                        return Err(format!("sidecar {sidecar} grid disagrees with header"));
                    }
                    self.sidecars.insert(sidecar.clone(), side);
                }
                let side = &self.sidecars[&sidecar];
                frames
                    .iter()
                    .map(|i| side.encode_frame_patches(&FrameRef::Sidecar(*i)).map_err(|e| e.to_string()))
                    .collect()
            }
        }
    }
}

fn required<T>(v: Option<T>, name: &str) -> std::result::Result<T, String> {
    v.ok_or_else(|| format!("missing required field {name}"))
}

impl Corpus {
    pub fn new(patches_per_frame: usize, frame_dim: usize, records: Vec<VideoPost>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            r.validate(patches_per_frame, frame_dim)
                .map_err(|e| Error::Format(format!("record {}: {e}", r.post_id)))?;
            if !seen.insert(r.post_id.as_str()) {
                return Err(Error::DuplicatePostId { id: r.post_id.clone(), line: i + 2 });
            }
        }
        Ok(Corpus { patches_per_frame, frame_dim, records })
    }

    pub fn empty(patches_per_frame: usize, frame_dim: usize) -> Self {
        Corpus { patches_per_frame, frame_dim, records: Vec::new() }
    }

    pub fn patches_per_frame(&self) -> usize {
        self.patches_per_frame
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn records(&self) -> &[VideoPost] {
        &self.records
    }

    pub fn into_records(self) -> Vec<VideoPost> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, post_id: &str) -> Option<&VideoPost> {
        self.records.iter().find(|r| r.post_id == post_id)
    }

    /// Records whose ids appear in `ids`, in `ids` order.
    pub fn subset(&self, ids: &[String]) -> Result<Vec<&VideoPost>> {
        let index: HashMap<&str, &VideoPost> = self.records.iter().map(|r| (r.post_id.as_str(), r)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("post_id {id} not in corpus")))
            })
            .collect()
    }

    fn with_records(&self, records: Vec<VideoPost>) -> Corpus {
        Corpus { patches_per_frame: self.patches_per_frame, frame_dim: self.frame_dim, records }
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            patches_per_frame: self.patches_per_frame,
            frame_dim: self.frame_dim,
            stub_seed: None,
        }
    }

    /// Serializes with inline frames; `parse` of the result reproduces `self`.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let rec = RecordOut {
                post_id: &r.post_id,
                video_link: &r.video_link,
                claim: &r.claim,
                speech: &r.speech_sentences,
                screen_text: &r.screen_text_sentences,
                frames: r.frames.iter().map(|f| f.to_flat()).collect(),
                label: r.label,
                taxonomy: r.taxonomy,
                verified: r.verified_account,
                video_length_s: r.video_length_s,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Loads a corpus file; sidecar paths resolve relative to its directory.
    pub fn ingest(path: &Path, opts: IngestOptions) -> Result<(Corpus, IngestReport)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, opts)
    }

    pub fn parse(text: &str, base: &Path, opts: IngestOptions) -> Result<(Corpus, IngestReport)> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, first)) = lines.next() else {
            return Ok((Corpus::empty(0, 0), IngestReport::default()));
        };
        let header: CorpusHeader = serde_json::from_str(first)
            .map_err(|e| Error::Format(format!("line {}: expected corpus header: {e}", hline + 1)))?;
        if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported corpus format {} v{}", header.format, header.version)));
        }
        if header.patches_per_frame == 0 || header.frame_dim == 0 {
            return Err(Error::Format("header declares an empty patch grid".into()));
        }
        let mut resolver = FrameResolver { base: base.to_path_buf(), header: &header, sidecars: HashMap::new() };
        let mut report = IngestReport::default();
        let mut records = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let value: Value = match serde_json::from_str(line) {
                Ok(v) => v,
                Err(e) => {
                    report.rejections.push(Rejection {
                        line: lineno,
                        post_id: None,
                        reason: format!("malformed json: {e}"),
                    });
                    continue;
                }
            };
            let id_hint = value.get("post_id").and_then(Value::as_str).map(str::to_string);
            if let Some(id) = &id_hint {
                if seen.contains_key(id) {
                    return Err(Error::DuplicatePostId { id: id.clone(), line: lineno });
                }
            }
            match Self::build_record(value, &header, &mut resolver) {
                Ok(rec) => {
                    seen.insert(rec.post_id.clone(), lineno);
                    if opts.drop_unverified && !rec.verified_account {
                        report.dropped_unverified.push(rec.post_id);
                    } else {
                        records.push(rec);
                    }
                }
                Err(reason) => report.rejections.push(Rejection { line: lineno, post_id: id_hint, reason }),
            }
        }
        Ok((Corpus { patches_per_frame: header.patches_per_frame, frame_dim: header.frame_dim, records }, report))
    }

    fn build_record(
        value: Value,
        header: &CorpusHeader,
        resolver: &mut FrameResolver<'_>,
    ) -> std::result::Result<VideoPost, String> {
        let raw: RawRecord = serde_json::from_value(value).map_err(|e| format!("bad field: {e}"))?;
        let (n, d) = (header.patches_per_frame, header.frame_dim);
        let frames = match (raw.frames, raw.frames_ref) {
            (Some(_), Some(_)) => return Err("both frames and frames_ref given".into()),
            (Some(inline), None) => inline
                .into_iter()
                .map(|f| FramePatchFeatures::from_flat(n, d, f).map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            (None, Some(r)) => resolver.resolve(r)?,
            (None, None) => return Err("missing required field frames".into()),
        };
        let post = VideoPost {
            post_id: required(raw.post_id, "post_id")?,
            video_link: required(raw.video_link, "video_link")?,
            claim: required(raw.claim, "claim")?,
            frames,
            speech_sentences: raw.speech.unwrap_or_default(),
            screen_text_sentences: raw.screen_text.unwrap_or_default(),
            label: required(raw.label, "label")?,
            taxonomy: required(raw.taxonomy, "taxonomy")?,
            verified_account: required(raw.verified, "verified")?,
            video_length_s: required(raw.video_length_s, "video_length_s")?,
        };
        post.validate(n, d)?;
        Ok(post)
    }
}

/// One record per distinct video link; the lowest post_id wins. Survivors
/// keep their original order.
pub fn dedup_by_video(corpus: &Corpus) -> Corpus {
    let mut keep: BTreeMap<&str, &str> = BTreeMap::new();
    for r in corpus.records() {
        keep.entry(&r.video_link)
            .and_modify(|id| {
                if r.post_id.as_str() < *id {
                    *id = &r.post_id;
                }
            })
            .or_insert(&r.post_id);
    }
    let winners: HashSet<&str> = keep.into_values().collect();
    let records = corpus.records().iter().filter(|r| winners.contains(r.post_id.as_str())).cloned().collect();
    corpus.with_records(records)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterReport {
    /// Records dropped because their claim has no event trigger.
    pub removed: Vec<(String, String)>,
    /// Records the tagger could not process; skipped, not silently dropped.
    pub flagged: Vec<(String, String)>,
}

pub const NO_EVENT_STRUCTURE: &str = "no event structure";

/// Keeps records whose claim contains at least one event trigger.
pub fn filter_verifiable(corpus: &Corpus, tagger: &dyn EventTagger) -> (Corpus, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for r in corpus.records() {
        match tag_events(&r.claim, tagger) {
            Ok((_, es)) if es.has_trigger() => kept.push(r.clone()),
            Ok(_) => report.removed.push((r.post_id.clone(), NO_EVENT_STRUCTURE.into())),
            Err(e) => {
                log::warn!("tagger failed on {}: {e}", r.post_id);
                report.flagged.push((r.post_id.clone(), e.to_string()));
            }
        }
    }
    (corpus.with_records(kept), report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn subset(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!("unknown subset {other}"))),
        }
    }
}

pub const MIN_SPLIT_SIZE: usize = 10;

/// Stratified 80/10/10 split. Validation and test each take
/// `round(n / 10)` records, allocated across labels in proportion to the
/// corpus; training takes the rest.
pub fn split(corpus: &Corpus, seed: u64) -> Result<CorpusSplit> {
    let n = corpus.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::CorpusTooSmall { needed: MIN_SPLIT_SIZE, have: n });
    }
    let mut pos: Vec<String> = Vec::new();
    let mut neg: Vec<String> = Vec::new();
    for r in corpus.records() {
        if r.label.is_inconsistent() {
            pos.push(r.post_id.clone());
        } else {
            neg.push(r.post_id.clone());
        }
    }
    pos.sort();
    neg.sort();
    let mut rng = seeded_rng(seed, &[b"split"]);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let held = (n as f64 / 10.0).round() as usize;
    let take = |pool: &mut Vec<String>, k: usize| -> Vec<String> { pool.drain(..k.min(pool.len())).collect() };
    let carve = |pos: &mut Vec<String>, neg: &mut Vec<String>| -> Vec<String> {
        let remaining = pos.len() + neg.len();
        let k_pos = ((held * pos.len()) as f64 / remaining as f64).round() as usize;
        let k_pos = k_pos.min(pos.len()).max(held.saturating_sub(neg.len()));
        let mut out = take(pos, k_pos);
        out.extend(take(neg, held - k_pos));
        out
    };
    let val = carve(&mut pos, &mut neg);
    let test = carve(&mut pos, &mut neg);
    let mut train = pos;
    train.append(&mut neg);
    Ok(CorpusSplit { train, val, test })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::events::LexiconTagger;
    use ndarray::Array2;

    pub(crate) fn post(id: &str, link: &str, claim: &str, tax: Taxonomy) -> VideoPost {
        VideoPost {
            post_id: id.into(),
            video_link: link.into(),
            claim: claim.into(),
            frames: vec![FramePatchFeatures::new(Array2::from_elem((2, 3), 0.25)).unwrap()],
            speech_sentences: vec!["Masks help.".into()],
            screen_text_sentences: vec![],
            label: tax.label(),
            taxonomy: tax,
            verified_account: true,
            video_length_s: 3.0,
        }
    }

    fn corpus_of(records: Vec<VideoPost>) -> Corpus {
        Corpus::new(2, 3, records).unwrap()
    }

    const HEADER: &str = r#"{"format":"postcheck-corpus","version":1,"patches_per_frame":1,"frame_dim":2}"#;

    fn line(id: &str, claim: Option<&str>) -> String {
        let claim = claim.map(|c| format!(r#""claim":"{c}","#)).unwrap_or_default();
        format!(
            r#"{{"post_id":"{id}","video_link":"v{id}",{claim}"speech":[],"screen_text":[],"frames":[[0.5,1.5]],"label":"consistent","taxonomy":"pristine","verified":true,"video_length_s":1.0}}"#
        )
    }

    #[test]
    fn ingest_three_valid() {
        let text = [HEADER.to_string(), line("a", Some("x")), line("b", Some("y")), line("c", Some("z"))].join("\n");
        let (c, rep) = Corpus::parse(&text, Path::new("."), IngestOptions::default()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(rep.rejections.is_empty());
    }

    #[test]
    fn ingest_rejects_missing_claim_with_line() {
        let text = [HEADER.to_string(), line("a", Some("x")), line("b", None), line("c", Some("z"))].join("\n");
        let (c, rep) = Corpus::parse(&text, Path::new("."), IngestOptions::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(rep.rejections.len(), 1);
        assert_eq!(rep.rejections[0].line, 3);
        assert!(rep.rejections[0].reason.contains("claim"), "{}", rep.rejections[0].reason);
    }

    #[test]
    fn ingest_empty_file() {
        let (c, rep) = Corpus::parse("", Path::new("."), IngestOptions::default()).unwrap();
        assert!(c.is_empty());
        assert_eq!(rep, IngestReport::default());
    }

    #[test]
    fn ingest_duplicate_is_hard_error() {
        let text = [HEADER.to_string(), line("a", Some("x")), line("a", Some("y"))].join("\n");
        match Corpus::parse(&text, Path::new("."), IngestOptions::default()) {
            Err(Error::DuplicatePostId { id, line }) => assert_eq!((id.as_str(), line), ("a", 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ingest_label_taxonomy_mismatch_rejected() {
        let bad = line("a", Some("x")).replace("\"pristine\"", "\"fake_claim\"");
        let text = [HEADER.to_string(), bad].join("\n");
        let (c, rep) = Corpus::parse(&text, Path::new("."), IngestOptions::default()).unwrap();
        assert!(c.is_empty());
        assert!(rep.rejections[0].reason.contains("contradicts"));
    }

    #[test]
    fn ingest_drop_unverified() {
        let unv = line("b", Some("y")).replace("\"verified\":true", "\"verified\":false");
        let text = [HEADER.to_string(), line("a", Some("x")), unv].join("\n");
        let (c, rep) = Corpus::parse(&text, Path::new("."), IngestOptions { drop_unverified: true }).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(rep.dropped_unverified, vec!["b".to_string()]);
        let (c, _) = Corpus::parse(&text, Path::new("."), IngestOptions::default()).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn ingest_stub_and_sidecar_refs() {
        let dir = tempfile::tempdir().unwrap();
        let enc = StubFrameEncoder::new(1, 2, 0);
        let f = enc.encode_frame_patches(&FrameRef::Stub("q")).unwrap();
        SidecarFeatures::write(&dir.path().join("s.bin"), 1, 2, std::slice::from_ref(&f)).unwrap();
        let a = line("a", Some("x")).replace(r#""frames":[[0.5,1.5]]"#, r#""frames_ref":{"stub":["q"]}"#);
        let b =
            line("b", Some("x")).replace(r#""frames":[[0.5,1.5]]"#, r#""frames_ref":{"sidecar":"s.bin","frames":[0]}"#);
        let p = dir.path().join("c.jsonl");
        fs::write(&p, [HEADER.to_string(), a, b].join("\n")).unwrap();
        let (c, rep) = Corpus::ingest(&p, IngestOptions::default()).unwrap();
        assert!(rep.rejections.is_empty(), "{rep:?}");
        assert_eq!(c.records()[0].frames[0], f);
        for (x, y) in c.records()[1].frames[0].patches().iter().zip(f.patches().iter()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }

    #[test]
    fn ingest_missing_file_is_input_not_found() {
        let r = Corpus::ingest(Path::new("/definitely/not/here.jsonl"), IngestOptions::default());
        assert!(matches!(r, Err(Error::InputNotFound(_))));
    }

    #[test]
    fn dedup_examples() {
        let c = corpus_of(vec![
            post("b", "L1", "x", Taxonomy::Pristine),
            post("a", "L1", "x", Taxonomy::Pristine),
            post("c", "L2", "x", Taxonomy::Pristine),
        ]);
        let d = dedup_by_video(&c);
        let ids: Vec<&str> = d.records().iter().map(|r| r.post_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        let distinct =
            corpus_of(vec![post("a", "L1", "x", Taxonomy::Pristine), post("b", "L2", "x", Taxonomy::Pristine)]);
        assert_eq!(dedup_by_video(&distinct), distinct);
    }

    #[test]
    fn filter_examples() {
        let tagger = LexiconTagger::covid_default();
        let c = corpus_of(vec![
            post(
                "a",
                "1",
                "Officials are scrambling to contain outbreaks of the coronavirus outside of China",
                Taxonomy::Pristine,
            ),
            post("b", "2", "So proud of my boys! #GetVaccinated", Taxonomy::Pristine),
        ]);
        let (kept, rep) = filter_verifiable(&c, &tagger);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.records()[0].post_id, "a");
        assert_eq!(rep.removed, vec![("b".to_string(), NO_EVENT_STRUCTURE.to_string())]);
        let (again, _) = filter_verifiable(&kept, &tagger);
        assert_eq!(again, kept);
        let (e, _) = filter_verifiable(&corpus_of(vec![]), &tagger);
        assert!(e.is_empty());
    }

    struct Failing;
    impl EventTagger for Failing {
        fn tag(&self, _: &str, _: &[crate::events::Token]) -> Result<crate::events::EventStructure> {
            Err(Error::TaggerUnavailable("down".into()))
        }
    }

    #[test]
    fn filter_flags_tagger_failures() {
        let c = corpus_of(vec![post("a", "1", "x", Taxonomy::Pristine)]);
        let (kept, rep) = filter_verifiable(&c, &Failing);
        assert!(kept.is_empty());
        assert!(rep.removed.is_empty());
        assert_eq!(rep.flagged.len(), 1);
    }

    fn balanced(n: usize) -> Corpus {
        let recs = (0..n)
            .map(|i| {
                let tax = if i % 2 == 0 { Taxonomy::Pristine } else { Taxonomy::FakeClaim };
                post(&format!("p{i:03}"), &format!("v{i}"), "claim", tax)
            })
            .collect();
        corpus_of(recs)
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = balanced(100);
        let s = split(&c, 0).unwrap();
        assert_eq!(s.sizes(), (80, 10, 10));
        assert_eq!(s, split(&c, 0).unwrap());
        assert_ne!(s, split(&c, 1).unwrap());
        assert!(matches!(split(&balanced(9), 0), Err(Error::CorpusTooSmall { .. })));
    }

    /// For a 10-record balanced corpus, every seed must yield splits whose
    /// inconsistent count is within 2 of half the split size.
    #[test]
    fn split_ten_balanced_enumerated() {
        let c = balanced(10);
        for seed in 0..200 {
            let s = split(&c, seed).unwrap();
            for part in [&s.train, &s.val, &s.test] {
                let pos = c.subset(part).unwrap().iter().filter(|r| r.label.is_inconsistent()).count();
                let twice_diff = (2 * pos) as i64 - part.len() as i64;
                assert!(twice_diff.abs() <= 4, "seed {seed}: {pos}/{}", part.len());
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn split_is_partition(n in 10usize..120, seed in 0u64..1000, skew in 0usize..3) {
            let recs = (0..n).map(|i| {
                let tax = if i % (2 + skew) == 0 { Taxonomy::FakeVideo } else { Taxonomy::Pristine };
                post(&format!("r{i}"), &format!("v{i}"), "c", tax)
            }).collect();
            let c = corpus_of(recs);
            let s = split(&c, seed).unwrap();
            let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            proptest::prop_assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            proptest::prop_assert_eq!(all.len(), n);
            let (tr, va, te) = s.sizes();
            proptest::prop_assert!((tr as f64 - 0.8 * n as f64).abs() <= 1.0);
            proptest::prop_assert!((va as f64 - 0.1 * n as f64).abs() <= 1.0);
            proptest::prop_assert!((te as f64 - 0.1 * n as f64).abs() <= 1.0);
        }

        #[test]
        fn serialize_ingest_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 6), len in 0.0f64..1000.0, n_speech in 0usize..3) {
            let mut p = post("id\"1", "link", "Claim with \u{e9}moji \u{1f600}", Taxonomy::FakeSpeech);
            p.frames = vec![FramePatchFeatures::from_flat(2, 3, vals).unwrap()];
            p.video_length_s = len;
            p.speech_sentences = (0..n_speech).map(|i| format!("sentence {i}")).collect();
            let c = corpus_of(vec![p, post("z", "l2", "c", Taxonomy::Pristine)]);
            let (back, rep) = Corpus::parse(&c.to_jsonl(), Path::new("."), IngestOptions::default()).unwrap();
            proptest::prop_assert!(rep.rejections.is_empty());
            proptest::prop_assert_eq!(back, c);
        }

        #[test]
        fn dedup_links_distinct(links in proptest::collection::vec(0u8..6, 1..30)) {
            let recs = links.iter().enumerate()
                .map(|(i, l)| post(&format!("p{i}"), &format!("L{l}"), "c", Taxonomy::Pristine))
                .collect();
            let d = dedup_by_video(&corpus_of(recs));
            let mut seen = HashSet::new();
            for r in d.records() {
                proptest::prop_assert!(seen.insert(r.video_link.clone()));
            }
            let distinct: HashSet<_> = links.iter().collect();
            proptest::prop_assert_eq!(d.len(), distinct.len());
        }
    }
}
