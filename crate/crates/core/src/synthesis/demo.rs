// SPDX-License-Identifier: Apache-2.0

//! Synthetic pristine corpora for demos and tests.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::stubs::{ANTONYMS, EXTRA_ENTITIES};
use crate::corpus::{Corpus, Label, Taxonomy, VideoPost};
use crate::encoders::{seeded_rng, unit_vector, FramePatchFeatures};
use crate::error::{Error, Result};
use crate::events::DEFAULT_ARGUMENTS;

const PLACES: [&str; 12] =
    ["Sydney", "Berlin", "Vienna", "Toronto", "Lagos", "Lima", "Oslo", "Delhi", "Seoul", "Dublin", "Nairobi", "Madrid"];

const VERBS: [&str; 9] = ["fight", "protect", "prevent", "help", "stop", "quarantine", "contain", "confirm", "mandate"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoShape {
    pub patches: usize,
    pub frame_dim: usize,
    pub frames: usize,
    /// Fraction of posts generated without speech.
    pub no_speech: f64,
}

impl Default for DemoShape {
    fn default() -> Self {
        DemoShape { patches: 4, frame_dim: 16, frames: 6, no_speech: 0.15 }
    }
}

/// `n` pristine posts about outbreaks in named cities. Each post's frames
/// cluster around a vector for its topic, so videos on the same topic are
/// near neighbours.
pub fn generate(n: usize, seed: u64, shape: DemoShape) -> Result<Corpus> {
    if shape.patches == 0 || shape.frame_dim == 0 || shape.frames == 0 || !(0.0..=1.0).contains(&shape.no_speech) {
        return Err(Error::InvalidArgument(format!("invalid demo shape {shape:?}")));
    }
    let entities: Vec<&str> = DEFAULT_ARGUMENTS.iter().chain(EXTRA_ENTITIES.iter()).copied().collect();
    let triggers: Vec<&str> = ANTONYMS.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("p{i:04}");
        let mut rng = seeded_rng(seed, &[b"demo", id.as_bytes()]);
        let place = *PLACES.choose(&mut rng).expect("nonempty");
        let arg = *DEFAULT_ARGUMENTS.choose(&mut rng).expect("nonempty");
        let verb = *VERBS.choose(&mut rng).expect("nonempty");
        let claim = match rng.gen_range(0..3) {
            0 => format!("{place} officials {verb} {arg} cases this week"),
            1 => format!("Doctors in {place} say new rules {verb} {arg} outbreaks"),
            _ => format!("Schools in {place} {verb} {arg} spread among students"),
        };
        let speech = if rng.gen::<f64>() < shape.no_speech {
            Vec::new()
        } else {
            let e: Vec<&str> = entities.choose_multiple(&mut rng, 2).copied().collect();
            let t: Vec<&str> = triggers.choose_multiple(&mut rng, 2).copied().collect();
            vec![
                format!("Health workers in {place} {verb} {arg} with new testing"),
                format!("Experts compare it with {} and {}", e[0], e[1]),
                format!("Officials would rather {} than {} the rules", t[0], t[1]),
            ]
        };
        let topic = unit_vector(&mut seeded_rng(seed, &[b"topic", arg.as_bytes()]), shape.frame_dim);
        let own = unit_vector(&mut rng, shape.frame_dim);
        let frames = (0..shape.frames)
            .map(|_| {
                let m = Array2::from_shape_fn((shape.patches, shape.frame_dim), |(_, j)| {
                    let noise: f64 = rng.sample(StandardNormal);
                    topic[j] + 0.5 * own[j] + 0.1 * noise
                });
                FramePatchFeatures::new(m)
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(VideoPost {
            post_id: id.clone(),
            video_link: format!("https://video.example/{id}"),
            claim,
            frames,
            speech_sentences: speech,
            screen_text_sentences: vec![format!("{place} {arg} update")],
            label: Label::Consistent,
            taxonomy: Taxonomy::Pristine,
            verified_account: true,
            video_length_s: shape.frames as f64,
        });
    }
    Corpus::new(shape.patches, shape.frame_dim, records)
}

/// A pristine demo corpus of `n_pristine` posts plus an equal number of
/// fakes from the stub toolkit, mixed evenly across the three taxonomies.
pub fn balanced(n_pristine: usize, seed: u64, shape: DemoShape) -> Result<(Corpus, super::SynthesisReport)> {
    let pristine = generate(n_pristine, seed, shape)?;
    let cfg = super::SynthesisConfig { seed, ..super::SynthesisConfig::default() };
    super::build_balanced_dataset(&pristine, &super::Toolkit::stub(seed), &cfg)
}
