// SPDX-License-Identifier: Apache-2.0

//! Event triggers and arguments, and their per-token alert indices.
//!
//! Text is split by [`tokenize`] into word and punctuation tokens with byte
//! offsets. The stub text encoder embeds exactly these tokens, so an event
//! span expressed in token indices lines up with the encoder rows.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub norm: String,
    pub start: usize,
    pub end: usize,
}

fn is_split_punct(c: char) -> bool {
    c.is_ascii_punctuation() && c != '#' && c != '@'
}

/// Whitespace tokenization with leading and trailing punctuation peeled off
/// into single-character tokens. Interior punctuation ("china's") stays.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut push = |s: usize, e: usize| {
        let t = &text[s..e];
        out.push(Token { text: t.to_string(), norm: t.to_lowercase(), start: s, end: e });
    };
    let mut idx = 0;
    for word in text.split_whitespace() {
        let off = idx + text[idx..].find(word).expect("word comes from text");
        idx = off + word.len();
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let lead = chars.iter().take_while(|(_, c)| is_split_punct(*c)).count();
        if lead == chars.len() {
            for (i, c) in &chars {
                push(off + i, off + i + c.len_utf8());
            }
            continue;
        }
        let trail = chars.iter().rev().take_while(|(_, c)| is_split_punct(*c)).count();
        for (i, c) in &chars[..lead] {
            push(off + i, off + i + c.len_utf8());
        }
        let core_start = chars[lead].0;
        let (last_i, last_c) = chars[chars.len() - 1 - trail];
        push(off + core_start, off + last_i + last_c.len_utf8());
        for (i, c) in &chars[chars.len() - trail..] {
            push(off + i, off + i + c.len_utf8());
        }
    }
    out
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Surface text of the span within its source.
    pub fn text<'a>(&self, source: &'a str, tokens: &[Token]) -> &'a str {
        &source[tokens[self.start].start..tokens[self.end - 1].end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventRole {
    Trigger,
    Argument,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStructure {
    pub triggers: Vec<Span>,
    pub arguments: Vec<Span>,
}

impl EventStructure {
    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty() && self.arguments.is_empty()
    }

    pub fn has_trigger(&self) -> bool {
        !self.triggers.is_empty()
    }

    /// All spans with their role, triggers first.
    pub fn spans(&self) -> impl Iterator<Item = (Span, EventRole)> + '_ {
        self.triggers
            .iter()
            .map(|s| (*s, EventRole::Trigger))
            .chain(self.arguments.iter().map(|s| (*s, EventRole::Argument)))
    }

    pub fn validate(&self, token_count: usize) -> Result<()> {
        for (s, _) in self.spans() {
            if s.is_empty() || s.end > token_count {
                return Err(Error::SpanOutOfRange { start: s.start, end: s.end, len: token_count });
            }
        }
        Ok(())
    }

    /// Role covering token `i`; triggers win over arguments.
    pub fn role_at(&self, i: usize) -> Option<EventRole> {
        if self.triggers.iter().any(|s| s.contains(i)) {
            Some(EventRole::Trigger)
        } else if self.arguments.iter().any(|s| s.contains(i)) {
            Some(EventRole::Argument)
        } else {
            None
        }
    }
}

/// Per-token alert indices: 0 plain, 1 trigger, 2 argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertIndexSequence(pub Vec<u8>);

impl AlertIndexSequence {
    pub const PLAIN: u8 = 0;
    pub const TRIGGER: u8 = 1;
    pub const ARGUMENT: u8 = 2;

    pub fn zeros(len: usize) -> Self {
        AlertIndexSequence(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

pub fn to_alert_indices(token_count: usize, structure: &EventStructure) -> Result<AlertIndexSequence> {
    structure.validate(token_count)?;
    let mut idx = vec![AlertIndexSequence::PLAIN; token_count];
    for s in &structure.arguments {
        idx[s.start..s.end].fill(AlertIndexSequence::ARGUMENT);
    }
    for s in &structure.triggers {
        idx[s.start..s.end].fill(AlertIndexSequence::TRIGGER);
    }
    Ok(AlertIndexSequence(idx))
}

pub trait EventTagger: Send + Sync {
    /// Tags pre-tokenized text. An empty structure means "no events found";
    /// an error means the tagger could not answer.
    fn tag(&self, text: &str, tokens: &[Token]) -> Result<EventStructure>;
}

pub fn tag_events(text: &str, tagger: &dyn EventTagger) -> Result<(Vec<Token>, EventStructure)> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let tokens = tokenize(text);
    let structure = tagger.tag(text, &tokens)?;
    structure.validate(tokens.len())?;
    Ok((tokens, structure))
}

const INFLECTIONS: [&str; 5] = ["s", "es", "ed", "d", "ing"];

fn word_matches(token: &str, lemma: &str) -> bool {
    if token == lemma {
        return true;
    }
    match token.strip_prefix(lemma) {
        Some(rest) => INFLECTIONS.contains(&rest),
        None => false,
    }
}

/// Deterministic lexicon tagger: greedy longest-phrase match, triggers first,
/// then arguments over the tokens no trigger claimed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LexiconTagger {
    triggers: Vec<Vec<String>>,
    arguments: Vec<Vec<String>>,
}

fn phrase_words(p: &str) -> Vec<String> {
    tokenize(p).into_iter().map(|t| t.norm).collect()
}

impl LexiconTagger {
    pub fn new<S: AsRef<str>>(triggers: &[S], arguments: &[S]) -> Self {
        let mut t: Vec<Vec<String>> = triggers.iter().map(|p| phrase_words(p.as_ref())).collect();
        let mut a: Vec<Vec<String>> = arguments.iter().map(|p| phrase_words(p.as_ref())).collect();
        t.retain(|p| !p.is_empty());
        a.retain(|p| !p.is_empty());
        // longest phrases first so greedy matching prefers them
        t.sort_by(|x, y| y.len().cmp(&x.len()).then(x.cmp(y)));
        a.sort_by(|x, y| y.len().cmp(&x.len()).then(x.cmp(y)));
        LexiconTagger { triggers: t, arguments: a }
    }

    pub fn empty() -> Self {
        LexiconTagger::default()
    }

    /// Seeded with the most frequent triggers and arguments of the original
    /// claims in the COVID video-post domain.
    pub fn covid_default() -> Self {
        LexiconTagger::new(&DEFAULT_TRIGGERS, &DEFAULT_ARGUMENTS)
    }

    fn scan(&self, tokens: &[Token], lexicon: &[Vec<String>], taken: &[bool]) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = lexicon.iter().find(|phrase| {
                i + phrase.len() <= tokens.len()
                    && phrase.iter().enumerate().all(|(k, w)| !taken[i + k] && word_matches(&tokens[i + k].norm, w))
            });
            match hit {
                Some(p) => {
                    spans.push(Span::new(i, i + p.len()));
                    i += p.len();
                }
                None => i += 1,
            }
        }
        spans
    }
}

impl EventTagger for LexiconTagger {
    fn tag(&self, _text: &str, tokens: &[Token]) -> Result<EventStructure> {
        let mut taken = vec![false; tokens.len()];
        let triggers = self.scan(tokens, &self.triggers, &taken);
        for s in &triggers {
            taken[s.start..s.end].fill(true);
        }
        let arguments = self.scan(tokens, &self.arguments, &taken);
        Ok(EventStructure { triggers, arguments })
    }
}

pub const DEFAULT_TRIGGERS: [&str; 14] = [
    "fight",
    "infect",
    "protect",
    "prevent",
    "help",
    "stop",
    "quarantine",
    "contain",
    "confirm",
    "threat",
    "plunge",
    "mandate",
    "deal",
    "cause",
];

pub const DEFAULT_ARGUMENTS: [&str; 13] = [
    "coronavirus",
    "omicron",
    "pfizer",
    "covid",
    "delta",
    "moderna",
    "booster",
    "mask",
    "lockdown",
    "protest",
    "social distance",
    "ban",
    "vaccine",
];

#[derive(Debug, Deserialize)]
struct PrecomputedLine {
    text: String,
    #[serde(default)]
    triggers: Vec<(usize, usize)>,
    #[serde(default)]
    arguments: Vec<(usize, usize)>,
}

/// Adapter over annotations produced offline by an external event extractor.
/// One JSON object per line: `{"text", "triggers": [[s,e]], "arguments": [[s,e]]}`
/// with token offsets under [`tokenize`].
#[derive(Debug, Clone, Default)]
pub struct PrecomputedTagger {
    table: HashMap<String, EventStructure>,
}

impl PrecomputedTagger {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let rec: PrecomputedLine = serde_json::from_str(line)?;
            let conv = |v: Vec<(usize, usize)>| v.into_iter().map(|(s, e)| Span::new(s, e)).collect();
            table.insert(rec.text, EventStructure { triggers: conv(rec.triggers), arguments: conv(rec.arguments) });
        }
        Ok(PrecomputedTagger { table })
    }
}

impl EventTagger for PrecomputedTagger {
    fn tag(&self, text: &str, _tokens: &[Token]) -> Result<EventStructure> {
        self.table.get(text).cloned().ok_or_else(|| Error::TaggerUnavailable(format!("no annotation for {text:?}")))
    }
}
