// SPDX-License-Identifier: Apache-2.0

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Pair};
use crate::autodiff::ParamStore;

pub const GATE_TABLE: &str = "gate_table";
pub const W_CLAIM: &str = "w_claim";
pub const W_SPEECH: &str = "w_speech";
pub const W_SCREEN: &str = "w_screen";
pub const W_PATCH: &str = "w_patch";
pub const POS_TEXT: &str = "pos.text";
pub const POS_PATCH: &str = "pos.patch";
pub const AOA_TEXT: &str = "aoa_text";
pub const AOA_PATCH: &str = "aoa_patch";
pub const COMBINER: &str = "combiner";

/// Fuser type-embedding rows.
pub const TYPE_VIDEO: usize = 0;
pub const TYPE_SCREEN: usize = 1;
pub const TYPE_SPEECH: usize = 2;
pub const TYPE_CLAIM: usize = 3;

pub fn fuser_name(p: Pair) -> String {
    format!("fuser_{}", p.tag())
}

pub fn head_name(p: Pair) -> String {
    format!("head_{}", p.tag())
}

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore,
}

impl Init {
    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) {
        let d = Normal::new(0.0, std).expect("std is positive");
        let m = Array2::from_shape_fn((rows, cols), |_| d.sample(&mut self.rng));
        self.store.insert(name, m);
    }

    /// Fan-in scaled weights.
    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        self.normal(name, rows, cols, 1.0 / (rows as f64).sqrt());
    }

    fn fill(&mut self, name: String, rows: usize, cols: usize, v: f64) {
        self.store.insert(name, Array2::from_elem((rows, cols), v));
    }

    fn attention(&mut self, p: &str, d: usize) {
        for w in ["wq", "wk", "wv"] {
            self.weight(format!("{p}.{w}"), d, d);
        }
        for b in ["bq", "bk", "bv"] {
            self.fill(format!("{p}.{b}"), 1, d, 0.0);
        }
    }
}

/// Fresh parameters for `cfg`, seeded by `cfg.seed`. The combiner output is
/// zero so an untrained model predicts exactly 0.5.
pub fn init_params(cfg: &ModelConfig) -> ParamStore {
    let d = cfg.dim;
    let mut it = Init { rng: ChaCha8Rng::seed_from_u64(cfg.seed), store: ParamStore::new() };
    it.fill(GATE_TABLE.into(), 3, d, 1.0);
    for w in [W_CLAIM, W_SPEECH, W_SCREEN] {
        it.weight(w.into(), cfg.text_dim, d);
    }
    it.weight(W_PATCH.into(), cfg.frame_dim, d);
    it.normal(POS_TEXT.into(), cfg.max_text_tokens, d, 0.02);
    it.normal(POS_PATCH.into(), cfg.patches, d, 0.02);

    for stack in [AOA_TEXT, AOA_PATCH] {
        if stack == AOA_TEXT {
            it.normal(format!("{stack}.cls"), 1, d, 0.02);
        }
        for l in 0..cfg.aoa_layers {
            let p = format!("{stack}.l{l}");
            it.attention(&p, d);
            it.weight(format!("{p}.info_w"), 2 * d, d);
            it.fill(format!("{p}.info_b"), 1, d, 0.0);
            it.weight(format!("{p}.gate_w"), 2 * d, d);
            it.fill(format!("{p}.gate_b"), 1, d, 0.0);
            it.fill(format!("{p}.ln_g"), 1, d, 1.0);
            it.fill(format!("{p}.ln_b"), 1, d, 0.0);
        }
    }

    let f = d * cfg.ffn_mult;
    for pair in Pair::ALL {
        let name = fuser_name(pair);
        it.normal(format!("{name}.cls"), 1, d, 0.02);
        it.normal(format!("{name}.type"), 4, d, 0.02);
        it.normal(format!("{name}.pos"), cfg.max_positions, d, 0.02);
        for l in 0..cfg.fuser_layers {
            let p = format!("{name}.l{l}");
            it.attention(&p, d);
            it.weight(format!("{p}.wo"), d, d);
            it.fill(format!("{p}.bo"), 1, d, 0.0);
            it.fill(format!("{p}.ln1_g"), 1, d, 1.0);
            it.fill(format!("{p}.ln1_b"), 1, d, 0.0);
            it.weight(format!("{p}.ffn_w1"), d, f);
            it.fill(format!("{p}.ffn_b1"), 1, f, 0.0);
            it.weight(format!("{p}.ffn_w2"), f, d);
            it.fill(format!("{p}.ffn_b2"), 1, d, 0.0);
            it.fill(format!("{p}.ln2_g"), 1, d, 1.0);
            it.fill(format!("{p}.ln2_b"), 1, d, 0.0);
        }
    }
    for pair in Pair::ALL {
        let name = head_name(pair);
        it.weight(format!("{name}.w1"), d, d);
        it.fill(format!("{name}.b1"), 1, d, 0.0);
        it.weight(format!("{name}.w2"), d, 1);
        it.fill(format!("{name}.b2"), 1, 1, 0.0);
    }
    it.normal(format!("{COMBINER}.value"), 1, d, 1.0);
    it.normal(format!("{COMBINER}.type"), 3, d, 1.0);
    it.attention(COMBINER, d);
    it.fill(format!("{COMBINER}.out_w"), d, 1, 0.0);
    it.fill(format!("{COMBINER}.out_b"), 1, 1, 0.0);
    it.store
}
