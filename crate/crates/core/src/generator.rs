//! GRU comment decoder with attention over the joint region features.
//!
//! The decoder starts from `s₀ = tanh(W_i v_t + U_i v_b)`. Each step feeds
//! `[E(w_{τ−1}) ; ctx_{τ−1}]` through the GRU, attends over the `2L` regions
//! of both garments with the new state, and predicts the next word from
//! `W_o s_τ + U_o ctx_τ`.

use std::cmp::Ordering;

use rand::Rng;
use serde::Serialize;

use crate::data::{BOS, EOS, PAD};
use crate::error::{NorError, Result};
use crate::numerics::{xavier_init_with, Graph, GruParams, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub w_i: ParamId,
    pub u_i: ParamId,
    pub embedding: ParamId,
    pub gru: GruParams,
    pub w_g: ParamId,
    pub w_o: ParamId,
    pub u_o: ParamId,
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub region_dim: usize,
    pub input_size: usize,
}

/// Rows of `F_t` followed by rows of `F_b`, shape `[2L, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointFeatureMap {
    pub regions: Tensor,
}

impl JointFeatureMap {
    pub fn new(f_t: &Tensor, f_b: &Tensor) -> Result<Self> {
        if f_t.rank() != 2 || f_t.shape() != f_b.shape() {
            return Err(NorError::shape(
                "joint_features",
                format!("{:?} and {:?}", f_t.shape(), f_b.shape()),
            ));
        }
        let mut data = f_t.data().to_vec();
        data.extend_from_slice(f_b.data());
        Ok(JointFeatureMap {
            regions: Tensor::matrix(2 * f_t.shape()[0], f_t.shape()[1], data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Joint features placed on a graph, with the transpose cached for reuse.
#[derive(Clone, Copy, Debug)]
pub struct JointNodes {
    pub f: Var,
    pub f_t: Var,
}

impl JointNodes {
    pub fn new(g: &mut Graph, f: Var) -> Result<Self> {
        let f_t = g.transpose(f)?;
        Ok(JointNodes { f, f_t })
    }

    /// `concat(F_t, F_b)` from two `[L, D]` feature nodes.
    pub fn join(g: &mut Graph, f_top: Var, f_bottom: Var) -> Result<Self> {
        if g.value(f_top).shape() != g.value(f_bottom).shape() {
            return Err(NorError::shape(
                "joint_features",
                format!("{:?} and {:?}", g.value(f_top).shape(), g.value(f_bottom).shape()),
            ));
        }
        let f = g.concat(&[f_top, f_bottom])?;
        Self::new(g, f)
    }
}

/// Output of one graph-level decoding step.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub log_probs: Var,
    pub state: Var,
    pub context: Var,
    pub weights: Var,
}

/// Hidden state and context carried between value-level steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub hidden: Tensor,
    pub context: Tensor,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub state: DecoderState,
    pub weights: Vec<f64>,
}

impl GeneratorParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        input_size: usize,
        region_dim: usize,
        vocab_size: usize,
        embed_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (m, d, v, e, q) = (input_size, region_dim, vocab_size, embed_size, hidden_size);
        let w_i = store.add("generator.w_i", xavier_init_with(&[q, m], rng), true)?;
        let u_i = store.add("generator.u_i", xavier_init_with(&[q, m], rng), true)?;
        let embedding = store.add("generator.embedding", xavier_init_with(&[v, e], rng), true)?;
        let gru = GruParams::register(store, "generator.gru", e + d, q, rng)?;
        let w_g = store.add("generator.w_g", xavier_init_with(&[q, d], rng), true)?;
        let w_o = store.add("generator.w_o", xavier_init_with(&[v, q], rng), true)?;
        let u_o = store.add("generator.u_o", xavier_init_with(&[v, d], rng), true)?;
        Ok(GeneratorParams {
            w_i,
            u_i,
            embedding,
            gru,
            w_g,
            w_o,
            u_o,
            vocab_size,
            embed_size,
            hidden_size,
            region_dim,
            input_size,
        })
    }

    fn check_joint(&self, g: &Graph, joint: JointNodes) -> Result<()> {
        let s = g.value(joint.f).shape();
        if s.len() != 2 || s[1] != self.region_dim {
            return Err(NorError::shape(
                "cross_attend",
                format!("joint features {s:?}, decoder expects [_, {}]", self.region_dim),
            ));
        }
        Ok(())
    }

    /// `e_k = sᵀ W_g f_k`, `α = softmax(e)`, `ctx = Σ α_k f_k`.
    pub fn cross_attend(&self, g: &mut Graph, store: &ParamStore, s: Var, joint: JointNodes) -> Result<(Var, Var)> {
        self.check_joint(g, joint)?;
        let w_g = g.param(store, self.w_g);
        let w_g_t = g.transpose(w_g)?;
        let u = g.matvec(w_g_t, s)?;
        let e = g.matvec(joint.f, u)?;
        let weights = g.softmax(e)?;
        let ctx = g.matvec(joint.f_t, weights)?;
        Ok((ctx, weights))
    }

    /// `s₀ = tanh(W_i v_t + U_i v_b)` and the context it attends to.
    pub fn init_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v_t: Var,
        v_b: Var,
        joint: JointNodes,
    ) -> Result<(Var, Var, Var)> {
        for v in [v_t, v_b] {
            if g.value(v).shape() != [self.input_size] {
                return Err(NorError::shape(
                    "init_state",
                    format!("representation {:?}, decoder expects [{}]", g.value(v).shape(), self.input_size),
                ));
            }
        }
        let w_i = g.param(store, self.w_i);
        let u_i = g.param(store, self.u_i);
        let a = g.matvec(w_i, v_t)?;
        let b = g.matvec(u_i, v_b)?;
        let pre = g.add(a, b)?;
        let s0 = g.tanh(pre);
        let (ctx0, w0) = self.cross_attend(g, store, s0, joint)?;
        Ok((s0, ctx0, w0))
    }

    pub fn decode_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prev_token: usize,
        ctx_prev: Var,
        s_prev: Var,
        joint: JointNodes,
    ) -> Result<StepNodes> {
        if prev_token >= self.vocab_size {
            return Err(NorError::OutOfVocabulary(prev_token));
        }
        let emb = g.param_row(store, self.embedding, prev_token)?;
        let x = g.concat(&[emb, ctx_prev])?;
        let state = self.gru.step(g, store, x, s_prev)?;
        let (context, weights) = self.cross_attend(g, store, state, joint)?;
        let w_o = g.param(store, self.w_o);
        let u_o = g.param(store, self.u_o);
        let a = g.matvec(w_o, state)?;
        let b = g.matvec(u_o, context)?;
        let logits = g.add(a, b)?;
        let log_probs = g.log_softmax(logits)?;
        Ok(StepNodes {
            log_probs,
            state,
            context,
            weights,
        })
    }

    /// `−Σ log p(w_τ | w_{<τ})` over every token after the leading BOS.
    pub fn teacher_forced_nll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v_t: Var,
        v_b: Var,
        joint: JointNodes,
        comment: &[usize],
    ) -> Result<Var> {
        if comment.len() < 2 {
            return Err(NorError::InvalidArgument(
                "comment must contain BOS, at least one token and EOS".into(),
            ));
        }
        if comment[0] != BOS || comment[comment.len() - 1] != EOS {
            return Err(NorError::InvalidArgument(
                "comment must start with BOS and end with EOS".into(),
            ));
        }
        if let Some(&bad) = comment.iter().find(|&&t| t >= self.vocab_size) {
            return Err(NorError::OutOfVocabulary(bad));
        }
        let (mut s, mut ctx, _) = self.init_state(g, store, v_t, v_b, joint)?;
        let mut terms = Vec::with_capacity(comment.len() - 1);
        for w in comment.windows(2) {
            let step = self.decode_step(g, store, w[0], ctx, s, joint)?;
            terms.push(g.pick(step.log_probs, w[1])?);
            s = step.state;
            ctx = step.context;
        }
        let total = g.add_all(&terms)?;
        Ok(g.affine(total, -1.0, 0.0))
    }

    /// Value-level initial state for decoding.
    pub fn start(&self, store: &ParamStore, v_t: &Tensor, v_b: &Tensor, joint: &JointFeatureMap) -> Result<(DecoderState, Vec<f64>)> {
        let mut g = Graph::new();
        let jf = g.constant(joint.regions.clone());
        let jn = JointNodes::new(&mut g, jf)?;
        let (t, b) = (g.constant(v_t.clone()), g.constant(v_b.clone()));
        let (s0, ctx0, w0) = self.init_state(&mut g, store, t, b, jn)?;
        Ok((
            DecoderState {
                hidden: g.value(s0).clone(),
                context: g.value(ctx0).clone(),
            },
            g.value(w0).data().to_vec(),
        ))
    }

    /// Value-level decoding step.
    pub fn step(&self, store: &ParamStore, prev_token: usize, state: &DecoderState, joint: &JointFeatureMap) -> Result<StepOutput> {
        let mut g = Graph::new();
        let jf = g.constant(joint.regions.clone());
        let jn = JointNodes::new(&mut g, jf)?;
        let s = g.constant(state.hidden.clone());
        let c = g.constant(state.context.clone());
        let out = self.decode_step(&mut g, store, prev_token, c, s, jn)?;
        Ok(StepOutput {
            log_probs: g.value(out.log_probs).data().to_vec(),
            state: DecoderState {
                hidden: g.value(out.state).clone(),
                context: g.value(out.context).clone(),
            },
            weights: g.value(out.weights).data().to_vec(),
        })
    }

    /// Beam search from `(v_t, v_b)`. Each hypothesis carries the
    /// cross-attention weights of every step it took.
    pub fn beam_search(
        &self,
        store: &ParamStore,
        v_t: &Tensor,
        v_b: &Tensor,
        joint: &JointFeatureMap,
        beam_size: usize,
        max_len: usize,
    ) -> Result<Decoded> {
        let (state, _) = self.start(store, v_t, v_b, joint)?;
        let init = Traced {
            state,
            weights: Vec::new(),
        };
        let hyp = beam_search(init, self.vocab_size, beam_size, max_len, |prev, traced: &Traced| {
            let out = self.step(store, prev, &traced.state, joint)?;
            let mut weights = traced.weights.clone();
            weights.push(out.weights);
            Ok((
                out.log_probs,
                Traced {
                    state: out.state,
                    weights,
                },
            ))
        })?;
        Ok(Decoded {
            tokens: hyp.tokens,
            log_prob: hyp.log_prob,
            score: hyp.score,
            attention: hyp.state.weights,
        })
    }
}

#[derive(Clone, Debug)]
struct Traced {
    state: DecoderState,
    weights: Vec<Vec<f64>>,
}

/// A decoded comment with the attention weights used to produce each token.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub attention: Vec<Vec<f64>>,
}

/// A finished or partial decoding path. `tokens` excludes the leading BOS.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / tokens.len()`, the ranking key among finished hypotheses.
    pub score: f64,
    pub state: S,
}

fn expandable(token: usize) -> bool {
    token != PAD && token != BOS
}

/// Length-normalized beam search over any step function.
///
/// `step(prev, state)` returns log-probabilities over the vocabulary and the
/// state after consuming `prev`. PAD and BOS are never emitted. At each step
/// the `beam_size` best expansions by cumulative log-probability survive;
/// those ending in EOS or reaching `max_len` tokens are set aside as finished.
/// The finished hypothesis with the best `log_prob / len` wins; ties keep the
/// one finished first.
pub fn beam_search<S, F>(init: S, vocab_size: usize, beam_size: usize, max_len: usize, mut step: F) -> Result<Hypothesis<S>>
where
    S: Clone,
    F: FnMut(usize, &S) -> Result<(Vec<f64>, S)>,
{
    if beam_size == 0 || max_len == 0 {
        return Err(NorError::InvalidArgument(
            "beam_size and max_len must be at least 1".into(),
        ));
    }
    if vocab_size <= EOS {
        return Err(NorError::InvalidArgument("vocabulary has no EOS".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        score: 0.0,
        state: init,
    }];
    let mut finished: Vec<Hypothesis<S>> = Vec::new();
    while !live.is_empty() {
        let mut next_states = Vec::with_capacity(live.len());
        let mut expansions: Vec<(usize, usize, f64)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (log_probs, next) = step(prev, &hyp.state)?;
            if log_probs.len() != vocab_size {
                return Err(NorError::shape(
                    "beam_search",
                    format!("step returned {} scores for a vocabulary of {vocab_size}", log_probs.len()),
                ));
            }
            next_states.push(next);
            expansions.extend(
                (0..vocab_size)
                    .filter(|&w| expandable(w))
                    .map(|w| (h, w, hyp.log_prob + log_probs[w])),
            );
        }
        expansions.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        expansions.truncate(beam_size);
        let mut survivors = Vec::with_capacity(expansions.len());
        for (h, w, log_prob) in expansions {
            let mut tokens = live[h].tokens.clone();
            tokens.push(w);
            let hyp = Hypothesis {
                score: log_prob / tokens.len() as f64,
                tokens,
                log_prob,
                state: next_states[h].clone(),
            };
            if w == EOS || hyp.tokens.len() >= max_len {
                finished.push(hyp);
            } else {
                survivors.push(hyp);
            }
        }
        live = survivors;
    }
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.score > finished[best].score {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

/// Argmax decoding, lowest id on ties; PAD and BOS are never emitted.
pub fn greedy_decode<S, F>(init: S, vocab_size: usize, max_len: usize, mut step: F) -> Result<Vec<usize>>
where
    F: FnMut(usize, &S) -> Result<(Vec<f64>, S)>,
{
    let mut state = init;
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let prev = tokens.last().copied().unwrap_or(BOS);
        let (lp, next) = step(prev, &state)?;
        let mut best: Option<usize> = None;
        for w in (0..vocab_size).filter(|&w| expandable(w)) {
            if best.is_none_or(|b| lp[w] > lp[b]) {
                best = Some(w);
            }
        }
        let best = best.ok_or_else(|| NorError::InvalidArgument("nothing to emit".into()))?;
        tokens.push(best);
        state = next;
        if best == EOS {
            break;
        }
    }
    Ok(tokens)
}
