// SPDX-License-Identifier: Apache-2.0

//! Deterministic stand-ins for the pretrained models the pipeline consumes.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rand::Rng;

use super::{MaskedLm, NliLabel, NliScorer, SentenceEmbedder, VideoEmbedder};
use crate::corpus::VideoPost;
use crate::encoders::{seeded_rng, StubTextEncoder};
use crate::error::{Error, Result};
use crate::events::{tokenize, LexiconTagger, DEFAULT_ARGUMENTS, DEFAULT_TRIGGERS};

/// Disease, pathogen, and vaccine names beyond the default argument lexicon.
pub const EXTRA_ENTITIES: [&str; 60] = [
    "ebola",
    "measles",
    "flu",
    "polio",
    "cholera",
    "dengue",
    "malaria",
    "zika",
    "mpox",
    "smallpox",
    "anthrax",
    "rabies",
    "sars",
    "mers",
    "typhoid",
    "plague",
    "hepatitis",
    "tuberculosis",
    "rubella",
    "norovirus",
    "influenza",
    "mumps",
    "pertussis",
    "diphtheria",
    "tetanus",
    "leprosy",
    "chikungunya",
    "hantavirus",
    "lassa",
    "marburg",
    "nipah",
    "rotavirus",
    "salmonella",
    "listeria",
    "legionella",
    "shigella",
    "giardia",
    "scarlatina",
    "varicella",
    "shingles",
    "meningitis",
    "pneumonia",
    "bronchitis",
    "sepsis",
    "botulism",
    "brucellosis",
    "leptospirosis",
    "yellowfever",
    "encephalitis",
    "astrovirus",
    "adenovirus",
    "rhinovirus",
    "enterovirus",
    "astrazeneca",
    "novavax",
    "sinovac",
    "sputnik",
    "janssen",
    "covaxin",
    "valneva",
];

/// Trigger pairs of opposite polarity.
pub const ANTONYMS: [(&str, &str); 20] = [
    ("fight", "support"),
    ("infect", "cure"),
    ("protect", "endanger"),
    ("prevent", "cause"),
    ("help", "harm"),
    ("stop", "spread"),
    ("quarantine", "release"),
    ("contain", "unleash"),
    ("confirm", "deny"),
    ("threat", "relief"),
    ("plunge", "surge"),
    ("mandate", "ban"),
    ("deal", "dispute"),
    ("dent", "facilitate"),
    ("increase", "decrease"),
    ("open", "close"),
    ("approve", "reject"),
    ("boost", "weaken"),
    ("accept", "refuse"),
    ("win", "lose"),
];

/// Substitution table of the worked manipulation examples: masked phrase,
/// proposed alternates in masker order.
pub const EXAMPLE_SUBSTITUTIONS: [(&str, &[&str]); 4] = [
    (
        "outbreaks of the coronavirus",
        &["the spread of ebola", "cases of the coronavirus", "the spread of the coronavirus"],
    ),
    ("getting vaccinated booster shots", &["getting infected", "getting booster shots"]),
    ("dent", &["facilitate", "hurt", "slow"]),
    ("finally returned home", &["lost home", "returned home"]),
];

/// NLI verdicts for the worked examples: original phrase, substitution,
/// label, contradiction score.
pub const EXAMPLE_NLI: [(&str, &str, NliLabel, f64); 9] = [
    ("outbreaks of the coronavirus", "the spread of ebola", NliLabel::Contradiction, 0.97),
    ("outbreaks of the coronavirus", "cases of the coronavirus", NliLabel::Neutral, 0.12),
    ("outbreaks of the coronavirus", "the spread of the coronavirus", NliLabel::Entailment, 0.03),
    ("getting vaccinated booster shots", "getting infected", NliLabel::Contradiction, 0.93),
    ("getting vaccinated booster shots", "getting booster shots", NliLabel::Entailment, 0.02),
    ("dent", "facilitate", NliLabel::Contradiction, 0.95),
    ("dent", "hurt", NliLabel::Entailment, 0.04),
    ("dent", "slow", NliLabel::Neutral, 0.18),
    ("finally returned home", "lost home", NliLabel::Contradiction, 0.91),
];

/// Tagger covering exactly the spans of the worked examples.
pub fn example_tagger() -> LexiconTagger {
    LexiconTagger::new(
        &["contain", "dent", "finally returned home"],
        &["outbreaks of the coronavirus", "getting vaccinated booster shots"],
    )
}

/// Default lexicons extended with the stub pools, so every alternate the
/// stub masker proposes is itself taggable.
pub fn pool_tagger() -> LexiconTagger {
    let (triggers, arguments) = pool_lexicons();
    LexiconTagger::new(&triggers, &arguments)
}

pub fn pool_lexicons() -> (Vec<String>, Vec<String>) {
    let mut triggers: BTreeSet<String> = DEFAULT_TRIGGERS.iter().map(|s| s.to_string()).collect();
    for (a, b) in ANTONYMS {
        triggers.insert(a.into());
        triggers.insert(b.into());
    }
    let arguments: BTreeSet<String> =
        DEFAULT_ARGUMENTS.iter().chain(EXTRA_ENTITIES.iter()).map(|s| s.to_string()).collect();
    (triggers.into_iter().collect(), arguments.into_iter().collect())
}

fn key(phrase: &str) -> String {
    tokenize(phrase).into_iter().map(|t| t.norm).collect::<Vec<_>>().join(" ")
}

const INFLECTIONS: [&str; 5] = ["s", "es", "ed", "d", "ing"];

fn lemmas(word: &str) -> Vec<String> {
    let mut out = vec![word.to_string()];
    for suf in INFLECTIONS {
        if let Some(stem) = word.strip_suffix(suf) {
            if !stem.is_empty() {
                out.push(stem.to_string());
            }
        }
    }
    out
}

fn jitter(seed: u64, a: &str, b: &str) -> f64 {
    seeded_rng(seed, &[b"jitter", a.as_bytes(), b"\0", b.as_bytes()]).gen::<f64>()
}

/// Shared lexical knowledge of the stub masker and the stub NLI scorer.
#[derive(Debug, Clone)]
pub struct StubLexicon {
    entities: BTreeSet<String>,
    antonyms: BTreeMap<String, String>,
    table: BTreeMap<String, Vec<String>>,
    overrides: BTreeMap<(String, String), (NliLabel, f64)>,
    seed: u64,
}

impl StubLexicon {
    /// Entity pool, antonym pairs, and the worked-example tables.
    pub fn new(seed: u64) -> Self {
        let mut antonyms = BTreeMap::new();
        for (a, b) in ANTONYMS {
            antonyms.insert(a.to_string(), b.to_string());
            antonyms.insert(b.to_string(), a.to_string());
        }
        StubLexicon {
            entities: DEFAULT_ARGUMENTS.iter().chain(EXTRA_ENTITIES.iter()).map(|s| s.to_string()).collect(),
            antonyms,
            table: EXAMPLE_SUBSTITUTIONS
                .iter()
                .map(|(k, v)| (key(k), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
            overrides: EXAMPLE_NLI.iter().map(|(o, n, l, s)| ((key(o), key(n)), (*l, *s))).collect(),
            seed,
        }
    }

    fn antonym_of(&self, word: &str) -> Option<&str> {
        lemmas(word).iter().find_map(|l| self.antonyms.get(l).map(|s| s.as_str()))
    }

    fn entities_in(&self, phrase: &str) -> BTreeSet<String> {
        let words: Vec<String> = tokenize(phrase).into_iter().map(|t| t.norm).collect();
        let mut found = BTreeSet::new();
        for e in &self.entities {
            let ew: Vec<&str> = e.split(' ').collect();
            let hit = words.windows(ew.len()).any(|w| w.iter().zip(&ew).all(|(a, b)| lemmas(a).iter().any(|l| l == b)));
            if hit {
                found.insert(e.clone());
            }
        }
        found
    }
}

/// Masked LM stand-in: fixed table entries first; otherwise the antonym of
/// a known trigger followed by other triggers, or other entities for a
/// phrase naming an entity, ordered by a hash of the masked context.
#[derive(Debug, Clone)]
pub struct StubMaskedLm {
    lex: StubLexicon,
}

impl StubMaskedLm {
    pub fn new(lex: StubLexicon) -> Self {
        StubMaskedLm { lex }
    }
}

impl MaskedLm for StubMaskedLm {
    fn predict(&self, masked_text: &str, phrase: &str, k: usize) -> Result<Vec<String>> {
        if !masked_text.contains(super::MASK) {
            return Err(Error::InvalidArgument("masked text has no mask token".into()));
        }
        let p = key(phrase);
        if let Some(list) = self.lex.table.get(&p) {
            return Ok(list.iter().take(k).cloned().collect());
        }
        let ctx = key(masked_text);
        let order = |pool: Vec<String>| -> Vec<String> {
            let mut scored: Vec<(f64, String)> =
                pool.into_iter().map(|c| (jitter(self.lex.seed, &ctx, &c), c)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            scored.into_iter().map(|(_, c)| c).collect()
        };
        let single = !p.contains(' ');
        if single {
            if let Some(anti) = self.lex.antonym_of(&p) {
                let anti = anti.to_string();
                let others: Vec<String> =
                    self.lex.antonyms.keys().filter(|w| **w != anti && !lemmas(&p).contains(w)).cloned().collect();
                let mut out = vec![anti];
                out.extend(order(others));
                out.truncate(k);
                return Ok(out);
            }
        }
        let own = self.lex.entities_in(&p);
        if own.is_empty() {
            return Ok(Vec::new());
        }
        let pool: Vec<String> = self.lex.entities.iter().filter(|e| !own.contains(*e)).cloned().collect();
        let mut out = order(pool);
        out.truncate(k);
        Ok(out)
    }
}

/// NLI stand-in over the single edited span between premise and hypothesis:
/// table verdicts, antonym swaps, and entity swaps contradict; everything
/// else is neutral (or entailment when nothing changed).
#[derive(Debug, Clone)]
pub struct StubNli {
    lex: StubLexicon,
}

impl StubNli {
    pub fn new(lex: StubLexicon) -> Self {
        StubNli { lex }
    }
}

/// Differing middle of two token sequences after stripping their common
/// prefix and suffix, as normalized phrases.
pub fn edited_phrases(a: &str, b: &str) -> (String, String) {
    let ta: Vec<String> = tokenize(a).into_iter().map(|t| t.norm).collect();
    let tb: Vec<String> = tokenize(b).into_iter().map(|t| t.norm).collect();
    let mut p = 0;
    while p < ta.len() && p < tb.len() && ta[p] == tb[p] {
        p += 1;
    }
    let mut s = 0;
    while s < ta.len() - p && s < tb.len() - p && ta[ta.len() - 1 - s] == tb[tb.len() - 1 - s] {
        s += 1;
    }
    (ta[p..ta.len() - s].join(" "), tb[p..tb.len() - s].join(" "))
}

impl NliScorer for StubNli {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<(NliLabel, f64)> {
        let (o, n) = edited_phrases(premise, hypothesis);
        if o.is_empty() && n.is_empty() {
            return Ok((NliLabel::Entailment, 0.0));
        }
        // the table may key a longer phrase than the minimal edit
        let padded = |s: &str| format!(" {s} ");
        let (pk, hk) = (padded(&key(premise)), padded(&key(hypothesis)));
        for ((ko, kn), v) in &self.lex.overrides {
            if pk.contains(&padded(ko))
                && hk.contains(&padded(kn))
                && padded(ko).contains(&padded(&o))
                && padded(kn).contains(&padded(&n))
            {
                return Ok(*v);
            }
        }
        let j = jitter(self.lex.seed, &o, &n);
        if !o.contains(' ') && !n.contains(' ') {
            if let Some(anti) = self.lex.antonym_of(&o) {
                if lemmas(&n).iter().any(|l| l == anti) {
                    return Ok((NliLabel::Contradiction, 0.85 + 0.1 * j));
                }
            }
        }
        let eo = self.lex.entities_in(&o);
        let en = self.lex.entities_in(&n);
        if !eo.is_empty() && !en.is_empty() && eo.is_disjoint(&en) {
            return Ok((NliLabel::Contradiction, 0.6 + 0.3 * j));
        }
        Ok((NliLabel::Neutral, 0.05 + 0.2 * j))
    }
}

/// Mean of hashed token vectors.
#[derive(Debug, Clone)]
pub struct StubSentenceEmbedder {
    enc: StubTextEncoder,
}

impl StubSentenceEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubSentenceEmbedder { enc: StubTextEncoder::new(dim, seed) }
    }
}

impl SentenceEmbedder for StubSentenceEmbedder {
    fn embed(&self, text: &str) -> Result<Array1<f64>> {
        let words: Vec<_> =
            tokenize(text).into_iter().filter(|t| t.norm.chars().any(|c| c.is_alphanumeric())).collect();
        if words.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut v = Array1::zeros(self.enc.token_vector("").len());
        for w in &words {
            v += &self.enc.token_vector(&w.norm);
        }
        Ok(v / words.len() as f64)
    }
}

/// Mean of per-frame pooled patch features.
#[derive(Debug, Clone, Copy, Default)]
pub struct PooledVideoEmbedder;

impl VideoEmbedder for PooledVideoEmbedder {
    fn embed(&self, post: &VideoPost) -> Result<Array1<f64>> {
        let first = post
            .frames
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("post {} has no frames", post.post_id)))?;
        let mut v = Array1::zeros(first.dim());
        for f in &post.frames {
            v += &f.pooled();
        }
        Ok(v / post.frames.len() as f64)
    }
}
