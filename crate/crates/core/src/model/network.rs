// SPDX-License-Identifier: Apache-2.0

use ndarray::Array2;
use rayon::prelude::*;

use super::input::{EncodedPost, EncodingConfig, PadShape, PostEncoder, TextInput};
use super::params::*;
use super::{ConsistencyScores, FusionMode, GateMode, ModelConfig, Pair, Verdict};
use crate::autodiff::{Gradients, ParamStore, Tape, Var};
use crate::corpus::VideoPost;
use crate::error::{Error, Result};

/// One modality sequence entering a fuser.
#[derive(Debug, Clone)]
pub struct FuseInput {
    pub type_row: usize,
    pub seq: Var,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logit: Var,
    pub prob: Var,
    /// Sigmoid scores, indexed by [`Pair::index`].
    pub scores: [Var; 3],
    pub relations: [Var; 3],
}

/// Graph builder for one configuration. Every method records onto the
/// caller's tape so the same code serves inference and training.
#[derive(Debug, Clone, Copy)]
pub struct Network<'c> {
    cfg: &'c ModelConfig,
}

fn range(n: usize) -> Vec<usize> {
    (0..n).collect()
}

impl<'c> Network<'c> {
    pub fn new(cfg: &'c ModelConfig) -> Self {
        Network { cfg }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    /// Row `i` is the gate-table row for alert index `i`.
    pub fn alert_gate(&self, t: &mut Tape, alert: &[u8]) -> Result<Var> {
        if let Some(bad) = alert.iter().find(|a| **a > 2) {
            return Err(Error::InvalidArgument(format!("alert index {bad} outside 0..=2")));
        }
        let idx: Vec<usize> = alert.iter().map(|a| *a as usize).collect();
        let table = t.param_named(GATE_TABLE);
        t.gather_rows(table, &idx)
    }

    /// `gate ⊙ tanh(tokens · W)`; no gate means an all-ones gate.
    pub fn gate_project(&self, t: &mut Tape, tokens: Var, gates: Option<Var>, w: &str) -> Result<Var> {
        let w = t.param_named(w);
        let proj = t.matmul(tokens, w)?;
        let act = t.tanh(proj);
        match gates {
            Some(g) => t.mul(g, act),
            None => Ok(act),
        }
    }

    /// Multi-head scaled dot-product attention over `x` with projections
    /// `{prefix}.w{q,k,v}` / `b{q,k,v}`; heads are concatenated, not projected.
    fn attend(&self, t: &mut Tape, x: Var, mask: &[bool], prefix: &str, heads: usize) -> Result<Var> {
        let d = self.cfg.dim;
        let dh = d / heads;
        let proj = |t: &mut Tape, w: &str, b: &str| -> Result<Var> {
            let wv = t.param_named(&format!("{prefix}.{w}"));
            let bv = t.param_named(&format!("{prefix}.{b}"));
            let m = t.matmul(x, wv)?;
            t.add_row(m, bv)
        };
        let q = proj(t, "wq", "bq")?;
        let k = proj(t, "wk", "bk")?;
        let v = proj(t, "wv", "bv")?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = t.slice_cols(q, h * dh, dh)?;
            let kh = t.slice_cols(k, h * dh, dh)?;
            let vh = t.slice_cols(v, h * dh, dh)?;
            let kt = t.transpose(kh);
            let s = t.matmul(qh, kt)?;
            let s = t.scale(s, scale);
            let a = t.masked_softmax(s, mask)?;
            outs.push(t.matmul(a, vh)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            t.concat_cols(&outs)
        }
    }

    fn affine_norm(&self, t: &mut Tape, x: Var, g: &str, b: &str) -> Result<Var> {
        let n = t.layer_norm(x);
        let g = t.param_named(g);
        let b = t.param_named(b);
        let n = t.mul_row(n, g)?;
        t.add_row(n, b)
    }

    /// Attention-on-attention layer: the attended vector and the query are
    /// concatenated to form information `I` and a sigmoid gate `G`; the
    /// output is `LN(x + G ⊙ I)`.
    fn aoa_layer(&self, t: &mut Tape, x: Var, mask: &[bool], prefix: &str) -> Result<Var> {
        let attended = self.attend(t, x, mask, prefix, self.cfg.aoa_heads)?;
        let cat = t.concat_cols(&[attended, x])?;
        let lin = |t: &mut Tape, w: &str, b: &str| -> Result<Var> {
            let wv = t.param_named(&format!("{prefix}.{w}"));
            let bv = t.param_named(&format!("{prefix}.{b}"));
            let m = t.matmul(cat, wv)?;
            t.add_row(m, bv)
        };
        let info = lin(t, "info_w", "info_b")?;
        let gate = lin(t, "gate_w", "gate_b")?;
        let gate = t.sigmoid(gate);
        let out = t.mul(gate, info)?;
        let res = t.add(x, out)?;
        self.affine_norm(t, res, &format!("{prefix}.ln_g"), &format!("{prefix}.ln_b"))
    }

    /// Runs the stacked AoA layers of `stack` over the whole sequence.
    pub fn aoa_stack(&self, t: &mut Tape, seq: Var, mask: &[bool], stack: &str) -> Result<Var> {
        if !mask.iter().any(|m| *m) {
            return Err(Error::AllMasked);
        }
        let mut x = seq;
        for l in 0..self.cfg.aoa_layers {
            x = self.aoa_layer(t, x, mask, &format!("{stack}.l{l}"))?;
        }
        Ok(x)
    }

    /// Prepends the learned `[cls]` row, runs the text AoA stack, and returns
    /// the `[cls]` output.
    pub fn aoa_encode(&self, t: &mut Tape, seq: Var, mask: &[bool]) -> Result<Var> {
        if !mask.iter().any(|m| *m) {
            return Err(Error::AllMasked);
        }
        self.aoa_encode_with_cls(t, seq, mask)
    }

    fn aoa_encode_with_cls(&self, t: &mut Tape, seq: Var, mask: &[bool]) -> Result<Var> {
        let cls = t.param_named(&format!("{AOA_TEXT}.cls"));
        let x = t.concat_rows(&[cls, seq])?;
        let mut m = Vec::with_capacity(mask.len() + 1);
        m.push(true);
        m.extend_from_slice(mask);
        let h = self.aoa_stack(t, x, &m, AOA_TEXT)?;
        t.gather_rows(h, &[0])
    }

    /// Sentence vector of one text under projection `w`. A fully padded
    /// sentence reduces to the `[cls]`-only output.
    pub fn encode_text(&self, t: &mut Tape, input: &TextInput, w: &str) -> Result<Var> {
        let x = t.constant(input.tokens.clone());
        let gates = match self.cfg.variant.gate {
            GateMode::Learned => Some(self.alert_gate(t, &input.alert)?),
            GateMode::AllOnes => None,
        };
        let mut h = self.gate_project(t, x, gates, w)?;
        if self.cfg.text_positions {
            if input.len() > self.cfg.max_text_tokens {
                return Err(Error::Shape(format!(
                    "{} tokens exceed max_text_tokens {}",
                    input.len(),
                    self.cfg.max_text_tokens
                )));
            }
            let pos = t.param_named(POS_TEXT);
            let pos = t.gather_rows(pos, &range(input.len()))?;
            h = t.add(h, pos)?;
        }
        self.aoa_encode_with_cls(t, h, &input.mask)
    }

    /// Frame vector: projected patches plus positions, AoA stack, mean pool
    /// over real patches.
    pub fn encode_frame(&self, t: &mut Tape, patches: &Array2<f64>, patch_mask: &[bool]) -> Result<Var> {
        let n = patches.nrows();
        if n > self.cfg.patches || patch_mask.len() != n {
            return Err(Error::Shape(format!("{n} patches for a {}-patch model", self.cfg.patches)));
        }
        let x = t.constant(patches.clone());
        let w = t.param_named(W_PATCH);
        let p = t.matmul(x, w)?;
        let p = t.tanh(p);
        let pos = t.param_named(POS_PATCH);
        let pos = t.gather_rows(pos, &range(n))?;
        let p = t.add(p, pos)?;
        let h = self.aoa_stack(t, p, patch_mask, AOA_PATCH)?;
        t.masked_mean_rows(h, patch_mask)
    }

    fn transformer_layer(&self, t: &mut Tape, x: Var, mask: &[bool], prefix: &str) -> Result<Var> {
        let att = self.attend(t, x, mask, prefix, self.cfg.fuser_heads)?;
        let wo = t.param_named(&format!("{prefix}.wo"));
        let bo = t.param_named(&format!("{prefix}.bo"));
        let o = t.matmul(att, wo)?;
        let o = t.add_row(o, bo)?;
        let h = t.add(x, o)?;
        let h = self.affine_norm(t, h, &format!("{prefix}.ln1_g"), &format!("{prefix}.ln1_b"))?;
        let w1 = t.param_named(&format!("{prefix}.ffn_w1"));
        let b1 = t.param_named(&format!("{prefix}.ffn_b1"));
        let w2 = t.param_named(&format!("{prefix}.ffn_w2"));
        let b2 = t.param_named(&format!("{prefix}.ffn_b2"));
        let f = t.matmul(h, w1)?;
        let f = t.add_row(f, b1)?;
        let f = t.gelu(f);
        let f = t.matmul(f, w2)?;
        let f = t.add_row(f, b2)?;
        let y = t.add(h, f)?;
        self.affine_norm(t, y, &format!("{prefix}.ln2_g"), &format!("{prefix}.ln2_b"))
    }

    /// Cross-modal transformer over `[cls]` followed by each present input
    /// (type and position embeddings added); returns the `[cls]` output.
    /// Inputs with no real positions count as absent.
    pub fn pairwise_fuse(&self, t: &mut Tape, fuser: &str, inputs: &[FuseInput]) -> Result<Var> {
        let present: Vec<&FuseInput> = inputs.iter().filter(|i| i.mask.iter().any(|m| *m)).collect();
        if present.is_empty() {
            return Err(Error::AllModalitiesAbsent);
        }
        let cls = t.param_named(&format!("{fuser}.cls"));
        let types = t.param_named(&format!("{fuser}.type"));
        let pos = t.param_named(&format!("{fuser}.pos"));
        let mut rows = vec![cls];
        let mut mask = vec![true];
        for inp in present {
            let (l, _) = t.shape(inp.seq);
            if l > self.cfg.max_positions || l != inp.mask.len() {
                return Err(Error::Shape(format!("fuse input of {l} rows, max {}", self.cfg.max_positions)));
            }
            let ty = t.gather_rows(types, &vec![inp.type_row; l])?;
            let ps = t.gather_rows(pos, &range(l))?;
            let x = t.add(inp.seq, ty)?;
            rows.push(t.add(x, ps)?);
            mask.extend_from_slice(&inp.mask);
        }
        let mut x = t.concat_rows(&rows)?;
        for l in 0..self.cfg.fuser_layers {
            x = self.transformer_layer(t, x, &mask, &format!("{fuser}.l{l}"))?;
        }
        t.gather_rows(x, &[0])
    }

    /// `sigmoid(tanh(R W1 + b1) W2 + b2)`.
    pub fn score(&self, t: &mut Tape, head: &str, r: Var) -> Result<Var> {
        let w1 = t.param_named(&format!("{head}.w1"));
        let b1 = t.param_named(&format!("{head}.b1"));
        let w2 = t.param_named(&format!("{head}.w2"));
        let b2 = t.param_named(&format!("{head}.b2"));
        let h = t.matmul(r, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.tanh(h);
        let z = t.matmul(h, w2)?;
        let z = t.add_row(z, b2)?;
        Ok(t.sigmoid(z))
    }

    /// Combiner logit: each score scales a shared value embedding and adds
    /// its link-type row; one self-attention layer with a residual, mean
    /// pooled, then a linear read-out.
    pub fn combine(&self, t: &mut Tape, scores: &[(Pair, Var)]) -> Result<Var> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("combiner needs at least one score".into()));
        }
        let value = t.param_named(&format!("{COMBINER}.value"));
        let types = t.param_named(&format!("{COMBINER}.type"));
        let mut rows = Vec::with_capacity(scores.len());
        for (pair, c) in scores {
            let e = t.matmul(*c, value)?;
            let ty = t.gather_rows(types, &[pair.index()])?;
            rows.push(t.add(e, ty)?);
        }
        let x = t.concat_rows(&rows)?;
        let mask = vec![true; scores.len()];
        let a = self.attend(t, x, &mask, COMBINER, 1)?;
        let h = t.add(x, a)?;
        let pooled = t.masked_mean_rows(h, &mask)?;
        let w = t.param_named(&format!("{COMBINER}.out_w"));
        let b = t.param_named(&format!("{COMBINER}.out_b"));
        let z = t.matmul(pooled, w)?;
        t.add_row(z, b)
    }

    fn sentence_seq(&self, t: &mut Tape, texts: &[TextInput], mask: &[bool], w: &str) -> Result<Option<Var>> {
        if texts.is_empty() {
            return Ok(None);
        }
        let rows = texts.iter().map(|s| self.encode_text(t, s, w)).collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(rows.len(), mask.len());
        Ok(Some(t.concat_rows(&rows)?))
    }

    pub fn forward(&self, t: &mut Tape, post: &EncodedPost) -> Result<ForwardOutput> {
        let claim = self.encode_text(t, &post.claim, W_CLAIM)?;
        let speech = self.sentence_seq(t, &post.speech, &post.speech_mask, W_SPEECH)?;
        let screen = self.sentence_seq(t, &post.screen, &post.screen_mask, W_SCREEN)?;
        let frames =
            post.frames.iter().map(|f| self.encode_frame(t, f, &post.patch_mask)).collect::<Result<Vec<_>>>()?;
        if frames.is_empty() {
            return Err(Error::InvalidArgument(format!("post {} has no frames", post.post_id)));
        }
        let frames = t.concat_rows(&frames)?;

        let video_in = FuseInput { type_row: TYPE_VIDEO, seq: frames, mask: post.frame_mask.clone() };
        let claim_in = FuseInput { type_row: TYPE_CLAIM, seq: claim, mask: vec![true] };
        let opt = |seq: Option<Var>, mask: &[bool], row: usize| {
            seq.map(|s| FuseInput { type_row: row, seq: s, mask: mask.to_vec() })
        };
        let speech_in = opt(speech, &post.speech_mask, TYPE_SPEECH);
        let screen_in = opt(screen, &post.screen_mask, TYPE_SCREEN);

        let relations = match self.cfg.variant.fusion {
            FusionMode::Pairwise => {
                let mut vs = vec![video_in.clone()];
                vs.extend(screen_in.clone());
                vs.extend(speech_in.clone());
                let mut vc = vec![video_in.clone()];
                vc.extend(screen_in.clone());
                vc.push(claim_in.clone());
                let mut cs = vec![claim_in];
                cs.extend(speech_in);
                [
                    self.pairwise_fuse(t, &fuser_name(Pair::VideoSpeech), &vs)?,
                    self.pairwise_fuse(t, &fuser_name(Pair::VideoClaim), &vc)?,
                    self.pairwise_fuse(t, &fuser_name(Pair::ClaimSpeech), &cs)?,
                ]
            }
            FusionMode::SingleStream => {
                let mut all = vec![video_in];
                all.extend(screen_in);
                all.extend(speech_in);
                all.push(claim_in);
                let r = self.pairwise_fuse(t, &fuser_name(Pair::VideoSpeech), &all)?;
                [r, r, r]
            }
        };
        let mut scores = [relations[0]; 3];
        for p in Pair::ALL {
            scores[p.index()] = self.score(t, &head_name(p), relations[p.index()])?;
        }
        let active: Vec<(Pair, Var)> =
            Pair::ALL.iter().filter(|p| self.cfg.variant.pairs[p.index()]).map(|p| (*p, scores[p.index()])).collect();
        let logit = self.combine(t, &active)?;
        let prob = t.sigmoid(logit);
        Ok(ForwardOutput { logit, prob, scores, relations })
    }

    pub fn verdict(&self, t: &Tape, out: &ForwardOutput) -> Verdict {
        let row = |v: Var| t.value(v).iter().copied().collect::<Vec<f64>>();
        let scores = ConsistencyScores {
            c_vs: t.scalar(out.scores[0]),
            c_vc: t.scalar(out.scores[1]),
            c_cs: t.scalar(out.scores[2]),
            r_vs: row(out.relations[0]),
            r_vc: row(out.relations[1]),
            r_cs: row(out.relations[2]),
        };
        Verdict::from_parts(t.scalar(out.prob), self.cfg.threshold, scores)
    }
}

/// Loss, gradients and verdict for one encoded post.
pub fn loss_and_grad(cfg: &ModelConfig, params: &ParamStore, post: &EncodedPost) -> Result<(f64, Gradients, Verdict)> {
    let net = Network::new(cfg);
    let mut t = Tape::new(params);
    let out = net.forward(&mut t, post)?;
    let y = if post.target.is_inconsistent() { 1.0 } else { 0.0 };
    let loss = t.bce_logit(out.logit, y)?;
    let grads = t.backward(loss);
    Ok((t.scalar(loss), grads, net.verdict(&t, &out)))
}

pub fn loss_only(cfg: &ModelConfig, params: &ParamStore, post: &EncodedPost) -> Result<(f64, Verdict)> {
    let net = Network::new(cfg);
    let mut t = Tape::new(params);
    let out = net.forward(&mut t, post)?;
    let y = if post.target.is_inconsistent() { 1.0 } else { 0.0 };
    let loss = t.bce_logit(out.logit, y)?;
    Ok((t.scalar(loss), net.verdict(&t, &out)))
}

pub fn infer(cfg: &ModelConfig, params: &ParamStore, post: &EncodedPost) -> Result<Verdict> {
    let net = Network::new(cfg);
    let mut t = Tape::new(params);
    let out = net.forward(&mut t, post)?;
    Ok(net.verdict(&t, &out))
}

/// Trained parameters bundled with the encoder that feeds them.
#[derive(Clone)]
pub struct Detector {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoding: EncodingConfig,
    pub encoder: PostEncoder,
    pub max_frames: usize,
}

impl Detector {
    pub fn new(config: ModelConfig, params: ParamStore, encoding: EncodingConfig, max_frames: usize) -> Result<Self> {
        config.validate()?;
        let encoder = PostEncoder::from_config(&encoding, &config)?;
        Ok(Detector { config, params, encoding, encoder, max_frames })
    }

    /// Freshly initialised detector for `config`.
    pub fn init(config: ModelConfig, encoding: EncodingConfig, max_frames: usize) -> Result<Self> {
        config.validate()?;
        let params = super::init_params(&config);
        Detector::new(config, params, encoding, max_frames)
    }

    pub fn encode(&self, post: &VideoPost) -> Result<EncodedPost> {
        self.encoder.encode(post, self.max_frames)
    }

    pub fn forward(&self, post: &VideoPost) -> Result<Verdict> {
        self.forward_encoded(&self.encode(post)?)
    }

    pub fn forward_encoded(&self, post: &EncodedPost) -> Result<Verdict> {
        infer(&self.config, &self.params, post)
    }

    /// Pads the batch to common extents with zeros and evaluates it in
    /// parallel; results match per-post [`Detector::forward`].
    pub fn forward_batch(&self, posts: &[VideoPost]) -> Result<Vec<Verdict>> {
        let encoded = posts.iter().map(|p| self.encode(p)).collect::<Result<Vec<_>>>()?;
        let shape = PadShape::covering(&encoded);
        encoded.par_iter().map(|e| self.forward_encoded(&e.padded(&shape, &mut || 0.0))).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{Label, Taxonomy};
    use crate::encoders::FramePatchFeatures;
    use crate::model::ModelVariant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn jitter(store: &mut ParamStore, seed: u64, amp: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = store.names().to_vec();
        for n in names {
            let id = store.id(&n).unwrap();
            store.value_mut(id).mapv_inplace(|v| v + amp * (rng.gen::<f64>() * 2.0 - 1.0));
        }
    }

    pub(crate) fn sample_post(id: &str, patches: usize, frame_dim: usize, frames: usize, seed: u64) -> VideoPost {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoPost {
            post_id: id.into(),
            video_link: format!("https://v/{id}"),
            claim: "Coronavirus outbreak spreads in the city".into(),
            frames: (0..frames)
                .map(|_| {
                    FramePatchFeatures::new(Array2::from_shape_fn((patches, frame_dim), |_| rng.gen::<f64>() - 0.5))
                        .unwrap()
                })
                .collect(),
            speech_sentences: vec!["Masks help.".into(), "The virus spread fast".into()],
            screen_text_sentences: vec!["Breaking news".into()],
            label: Label::Inconsistent,
            taxonomy: Taxonomy::FakeClaim,
            verified_account: true,
            video_length_s: 4.0,
        }
    }

    fn fixture(cfg: ModelConfig, seed: u64) -> (Detector, EncodedPost) {
        let mut det = Detector::init(cfg.clone(), EncodingConfig::default(), 4).unwrap();
        jitter(&mut det.params, seed, 0.3);
        let post = det.encode(&sample_post("p1", cfg.patches, cfg.frame_dim, 3, seed)).unwrap();
        (det, post)
    }

    // Scalar-loop reference implementations.
    fn mm(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for k in 0..a.ncols() {
                    s += a[[i, k]] * b[[k, j]];
                }
                out[[i, j]] = s;
            }
        }
        out
    }

    fn add_bias(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]] + b[[0, j]])
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn ln(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for i in 0..x.nrows() {
            let c = x.ncols() as f64;
            let mean: f64 = (0..x.ncols()).map(|j| x[[i, j]]).sum::<f64>() / c;
            let var: f64 = (0..x.ncols()).map(|j| (x[[i, j]] - mean).powi(2)).sum::<f64>() / c;
            for j in 0..x.ncols() {
                out[[i, j]] = (x[[i, j]] - mean) / (var + 1e-5).sqrt() * g[[0, j]] + b[[0, j]];
            }
        }
        out
    }

    fn p<'a>(s: &'a ParamStore, n: &str) -> &'a Array2<f64> {
        s.get(n).unwrap_or_else(|| panic!("missing {n}"))
    }

    fn oracle_attend(s: &ParamStore, x: &Array2<f64>, mask: &[bool], prefix: &str, heads: usize) -> Array2<f64> {
        let q = add_bias(&mm(x, p(s, &format!("{prefix}.wq"))), p(s, &format!("{prefix}.bq")));
        let k = add_bias(&mm(x, p(s, &format!("{prefix}.wk"))), p(s, &format!("{prefix}.bk")));
        let v = add_bias(&mm(x, p(s, &format!("{prefix}.wv"))), p(s, &format!("{prefix}.bv")));
        let (n, d) = x.dim();
        let dh = d / heads;
        let mut out = Array2::zeros((n, d));
        for h in 0..heads {
            for i in 0..n {
                let mut logits = vec![f64::NEG_INFINITY; n];
                for j in 0..n {
                    if mask[j] {
                        logits[j] =
                            (0..dh).map(|c| q[[i, h * dh + c]] * k[[j, h * dh + c]]).sum::<f64>() / (dh as f64).sqrt();
                    }
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| if l.is_finite() { (l - m).exp() } else { 0.0 }).collect();
                let z: f64 = w.iter().sum();
                for c in 0..dh {
                    out[[i, h * dh + c]] = (0..n).map(|j| w[j] / z * v[[j, h * dh + c]]).sum();
                }
            }
        }
        out
    }

    fn oracle_aoa(s: &ParamStore, x: &Array2<f64>, mask: &[bool], prefix: &str, heads: usize) -> Array2<f64> {
        let a = oracle_attend(s, x, mask, prefix, heads);
        let (n, d) = x.dim();
        let cat = Array2::from_shape_fn((n, 2 * d), |(i, j)| if j < d { a[[i, j]] } else { x[[i, j - d]] });
        let info = add_bias(&mm(&cat, p(s, &format!("{prefix}.info_w"))), p(s, &format!("{prefix}.info_b")));
        let gate = add_bias(&mm(&cat, p(s, &format!("{prefix}.gate_w"))), p(s, &format!("{prefix}.gate_b")));
        let res = Array2::from_shape_fn((n, d), |(i, j)| x[[i, j]] + sig(gate[[i, j]]) * info[[i, j]]);
        ln(&res, p(s, &format!("{prefix}.ln_g")), p(s, &format!("{prefix}.ln_b")))
    }

    fn oracle_transformer(s: &ParamStore, x: &Array2<f64>, mask: &[bool], prefix: &str, heads: usize) -> Array2<f64> {
        let a = oracle_attend(s, x, mask, prefix, heads);
        let o = add_bias(&mm(&a, p(s, &format!("{prefix}.wo"))), p(s, &format!("{prefix}.bo")));
        let h = ln(&(x + &o), p(s, &format!("{prefix}.ln1_g")), p(s, &format!("{prefix}.ln1_b")));
        let f = add_bias(&mm(&h, p(s, &format!("{prefix}.ffn_w1"))), p(s, &format!("{prefix}.ffn_b1")));
        let f = f.mapv(|v| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh()));
        let f = add_bias(&mm(&f, p(s, &format!("{prefix}.ffn_w2"))), p(s, &format!("{prefix}.ffn_b2")));
        ln(&(&h + &f), p(s, &format!("{prefix}.ln2_g")), p(s, &format!("{prefix}.ln2_b")))
    }

    fn max_diff(a: ArrayView2<f64>, b: &Array2<f64>) -> f64 {
        assert_eq!(a.dim(), b.dim());
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    use ndarray::ArrayView2;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn multihead_cfg() -> ModelConfig {
        ModelConfig { aoa_heads: 2, fuser_heads: 2, ..ModelConfig::tiny(8, 6, 3, 4) }
    }

    #[test]
    fn aoa_layer_matches_oracle() {
        let cfg = multihead_cfg();
        let mut params = init_params(&cfg);
        jitter(&mut params, 3, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_mat(&mut rng, 5, 8);
        let mask = [true, true, false, true, false];
        let net = Network::new(&cfg);
        let mut t = Tape::new(&params);
        let xv = t.constant(x.clone());
        let y = net.aoa_stack(&mut t, xv, &mask, AOA_PATCH).unwrap();
        let expect = oracle_aoa(&params, &x, &mask, &format!("{AOA_PATCH}.l0"), 2);
        assert!(max_diff(t.value(y), &expect) < 1e-12);
    }

    #[test]
    fn fuser_matches_oracle() {
        let cfg = multihead_cfg();
        let mut params = init_params(&cfg);
        jitter(&mut params, 4, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = rand_mat(&mut rng, 3, 8);
        let b = rand_mat(&mut rng, 2, 8);
        let net = Network::new(&cfg);
        let mut t = Tape::new(&params);
        let av = t.constant(a.clone());
        let bv = t.constant(b.clone());
        let fuser = fuser_name(Pair::VideoClaim);
        let inputs = [
            FuseInput { type_row: TYPE_VIDEO, seq: av, mask: vec![true, false, true] },
            FuseInput { type_row: TYPE_CLAIM, seq: bv, mask: vec![true, true] },
        ];
        let r = net.pairwise_fuse(&mut t, &fuser, &inputs).unwrap();

        let ty = p(&params, &format!("{fuser}.type"));
        let pos = p(&params, &format!("{fuser}.pos"));
        let cls = p(&params, &format!("{fuser}.cls"));
        let mut x = Array2::zeros((6, 8));
        for j in 0..8 {
            x[[0, j]] = cls[[0, j]];
            for i in 0..3 {
                x[[1 + i, j]] = a[[i, j]] + ty[[TYPE_VIDEO, j]] + pos[[i, j]];
            }
            for i in 0..2 {
                x[[4 + i, j]] = b[[i, j]] + ty[[TYPE_CLAIM, j]] + pos[[i, j]];
            }
        }
        let mask = [true, true, false, true, true, true];
        let y = oracle_transformer(&params, &x, &mask, &format!("{fuser}.l0"), 2);
        assert!(max_diff(t.value(r), &y.slice(ndarray::s![0..1, ..]).to_owned()) < 1e-12);
    }

    #[test]
    fn gate_project_and_score_match_elementwise_oracle() {
        let cfg = ModelConfig::tiny(4, 6, 3, 2);
        let mut params = init_params(&cfg);
        jitter(&mut params, 5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tokens = rand_mat(&mut rng, 3, 6);
        let alert = [0u8, 2, 1];
        let net = Network::new(&cfg);
        let mut t = Tape::new(&params);
        let tv = t.constant(tokens.clone());
        let g = net.alert_gate(&mut t, &alert).unwrap();
        let out = net.gate_project(&mut t, tv, Some(g), W_CLAIM).unwrap();
        let w = p(&params, W_CLAIM);
        let table = p(&params, GATE_TABLE);
        for i in 0..3 {
            for j in 0..4 {
                let z: f64 = (0..6).map(|k| tokens[[i, k]] * w[[k, j]]).sum();
                let e = table[[alert[i] as usize, j]] * z.tanh();
                assert!((t.value(out)[[i, j]] - e).abs() < 1e-14);
            }
        }
        let r = rand_mat(&mut rng, 1, 4);
        let rv = t.constant(r.clone());
        let head = head_name(Pair::ClaimSpeech);
        let c = net.score(&mut t, &head, rv).unwrap();
        let (w1, b1, w2, b2) = (
            p(&params, &format!("{head}.w1")),
            p(&params, &format!("{head}.b1")),
            p(&params, &format!("{head}.w2")),
            p(&params, &format!("{head}.b2")),
        );
        let mut z = b2[[0, 0]];
        for j in 0..4 {
            let h: f64 = (0..4).map(|k| r[[0, k]] * w1[[k, j]]).sum::<f64>() + b1[[0, j]];
            z += h.tanh() * w2[[j, 0]];
        }
        assert!((t.scalar(c) - sig(z)).abs() < 1e-14);
        assert!(net.alert_gate(&mut t, &[3]).is_err());
    }

    #[test]
    fn combiner_matches_oracle() {
        let cfg = ModelConfig::tiny(4, 6, 3, 2);
        let mut params = init_params(&cfg);
        jitter(&mut params, 6, 0.5);
        let net = Network::new(&cfg);
        let mut t = Tape::new(&params);
        let cs = [0.2, 0.7, 0.9];
        let pairs: Vec<(Pair, Var)> =
            Pair::ALL.iter().map(|pr| (*pr, t.constant(Array2::from_elem((1, 1), cs[pr.index()])))).collect();
        let z = net.combine(&mut t, &pairs).unwrap();
        let value = p(&params, "combiner.value");
        let ty = p(&params, "combiner.type");
        let x = Array2::from_shape_fn((3, 4), |(i, j)| cs[i] * value[[0, j]] + ty[[i, j]]);
        let a = oracle_attend(&params, &x, &[true; 3], "combiner", 1);
        let h = &x + &a;
        let w = p(&params, "combiner.out_w");
        let b = p(&params, "combiner.out_b");
        let mut e = b[[0, 0]];
        for j in 0..4 {
            e += (0..3).map(|i| h[[i, j]]).sum::<f64>() / 3.0 * w[[j, 0]];
        }
        assert!((t.scalar(z) - e).abs() < 1e-13);
    }

    #[test]
    fn fresh_model_predicts_exactly_one_half() {
        let cfg = ModelConfig::tiny(4, 6, 3, 2);
        let det = Detector::init(cfg.clone(), EncodingConfig::default(), 4).unwrap();
        let v = det.forward(&sample_post("a", 2, 3, 3, 1)).unwrap();
        assert_eq!(v.p_inconsistent, 0.5);
        assert_eq!(v.predicted_label, Label::Inconsistent);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (k, variant) in [
            ModelVariant::default(),
            ModelVariant { gate: GateMode::AllOnes, ..ModelVariant::default() },
            ModelVariant { fusion: FusionMode::SingleStream, ..ModelVariant::default() },
            ModelVariant::without_pair(Pair::VideoClaim),
        ]
        .into_iter()
        .enumerate()
        {
            let cfg = ModelConfig { variant, ..multihead_cfg() };
            let (det, post) = fixture(cfg.clone(), 20 + k as u64);
            let (_, grads, _) = loss_and_grad(&cfg, &det.params, &post).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let h = 1e-5;
            for (idx, name) in det.params.names().iter().enumerate() {
                let shape = det.params.value(det.params.id(name).unwrap()).dim();
                for _ in 0..2 {
                    let (i, j) = (rng.gen_range(0..shape.0), rng.gen_range(0..shape.1));
                    let mut plus = det.params.clone();
                    let id = plus.id(name).unwrap();
                    plus.value_mut(id)[[i, j]] += h;
                    let mut minus = det.params.clone();
                    minus.value_mut(id)[[i, j]] -= h;
                    let lp = loss_only(&cfg, &plus, &post).unwrap().0;
                    let lm = loss_only(&cfg, &minus, &post).unwrap().0;
                    let fd = (lp - lm) / (2.0 * h);
                    let an = grads.values[idx][[i, j]];
                    assert!(
                        (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                        "variant {k} {name}[{i},{j}]: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    fn zero_groups(cfg: &ModelConfig) -> Vec<String> {
        let (det, post) = fixture(cfg.clone(), 31);
        let (_, grads, _) = loss_and_grad(cfg, &det.params, &post).unwrap();
        let mut zero = Vec::new();
        for g in det.params.groups() {
            let all_zero = det
                .params
                .names()
                .iter()
                .enumerate()
                .filter(|(_, n)| ParamStore::group_of(n) == g)
                .all(|(i, _)| grads.values[i].iter().all(|v| *v == 0.0));
            if all_zero {
                zero.push(g);
            }
        }
        zero
    }

    #[test]
    fn ablations_disconnect_exactly_their_parameters() {
        let base = multihead_cfg();
        assert!(zero_groups(&base).is_empty());
        let gate = ModelConfig {
            variant: ModelVariant { gate: GateMode::AllOnes, ..ModelVariant::default() },
            ..base.clone()
        };
        assert_eq!(zero_groups(&gate), vec![GATE_TABLE.to_string()]);
        let single = ModelConfig {
            variant: ModelVariant { fusion: FusionMode::SingleStream, ..ModelVariant::default() },
            ..base.clone()
        };
        let mut z = zero_groups(&single);
        z.sort();
        assert_eq!(z, vec!["fuser_cs".to_string(), "fuser_vc".to_string()]);
        let no_cs = ModelConfig { variant: ModelVariant::without_pair(Pair::ClaimSpeech), ..base };
        let mut z = zero_groups(&no_cs);
        z.sort();
        assert_eq!(z, vec!["fuser_cs".to_string(), "head_cs".to_string()]);
    }

    #[test]
    fn padding_leaves_outputs_unchanged() {
        let cfg = multihead_cfg();
        let (det, post) = fixture(cfg.clone(), 40);
        let shape = PadShape { text_len: 16, speech: 5, screen: 3, frames: 7, patches: 4 };
        let mut small = post.clone();
        for f in &mut small.frames {
            *f = f.slice(ndarray::s![0..2, ..]).to_owned();
        }
        small.patch_mask = vec![true; 2];
        let base = infer(&cfg, &det.params, &small).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let padded = small.padded(&shape, &mut || rng.gen::<f64>() * 100.0 - 50.0);
        let v = infer(&cfg, &det.params, &padded).unwrap();
        assert!((v.p_inconsistent - base.p_inconsistent).abs() < 1e-12);
        for (a, b) in v.scores.triple().iter().zip(base.scores.triple()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_modalities_are_dropped() {
        let cfg = multihead_cfg();
        let mut det = Detector::init(cfg.clone(), EncodingConfig::default(), 4).unwrap();
        jitter(&mut det.params, 50, 0.3);
        let mut post = sample_post("m", 4, 3, 2, 50);
        post.speech_sentences.clear();
        post.screen_text_sentences.clear();
        let v = det.forward(&post).unwrap();
        assert!(v.p_inconsistent.is_finite());

        let net = Network::new(&cfg);
        let mut t = Tape::new(&det.params);
        let s = t.constant(Array2::zeros((2, 8)));
        let absent = FuseInput { type_row: TYPE_SPEECH, seq: s, mask: vec![false; 2] };
        assert!(matches!(net.pairwise_fuse(&mut t, "fuser_cs", &[absent]), Err(Error::AllModalitiesAbsent)));
    }

    #[test]
    fn batch_forward_matches_single() {
        let cfg = multihead_cfg();
        let mut det = Detector::init(cfg, EncodingConfig::default(), 4).unwrap();
        jitter(&mut det.params, 60, 0.3);
        let mut posts = vec![sample_post("a", 4, 3, 2, 1), sample_post("b", 4, 3, 5, 2)];
        posts[1].speech_sentences.push("Hospitals are full of patients now".into());
        posts[0].claim = "Short claim".into();
        let batch = det.forward_batch(&posts).unwrap();
        for (post, v) in posts.iter().zip(&batch) {
            let single = det.forward(post).unwrap();
            assert!((single.p_inconsistent - v.p_inconsistent).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_tamper_detection() {
        let cfg = ModelConfig::tiny(4, 6, 3, 2);
        let mut det = Detector::init(cfg, EncodingConfig::default(), 4).unwrap();
        jitter(&mut det.params, 70, 0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        det.save(&path).unwrap();
        let back = Detector::load(&path).unwrap();
        let post = sample_post("c", 2, 3, 3, 3);
        assert_eq!(det.forward(&post).unwrap(), back.forward(&post).unwrap());

        let mut ck = super::super::Checkpoint::load(&path).unwrap();
        ck.params[0].data[0] += 1e-9;
        assert!(matches!(ck.clone().into_detector(), Err(Error::CheckpointHash { .. })));
        ck.params[0].data[0] -= 1e-9;
        ck.config.threshold = 0.4;
        assert!(matches!(ck.into_detector(), Err(Error::CheckpointHash { .. })));
    }
}
