//! Two-class match head and candidate ranking.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Direction;
use crate::error::{NorError, Result};
use crate::numerics::{softmax, xavier_init_with, Graph, ParamId, ParamStore, Tensor, Var};

/// Logit row of the match class. Row 1 is "no match".
pub const MATCH_ROW: usize = 0;

#[derive(Clone, Debug)]
pub struct MatcherParams {
    pub w_s: ParamId,
    pub u_s: ParamId,
    pub w_r: ParamId,
    pub shared_size: usize,
    pub input_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchProbability {
    pub p_match: f64,
    pub p_no_match: f64,
}

impl MatcherParams {
    pub fn register<R: Rng>(store: &mut ParamStore, input_size: usize, shared_size: usize, rng: &mut R) -> Result<Self> {
        Ok(MatcherParams {
            w_s: store.add("matcher.w_s", xavier_init_with(&[shared_size, input_size], rng), true)?,
            u_s: store.add("matcher.u_s", xavier_init_with(&[shared_size, input_size], rng), true)?,
            w_r: store.add("matcher.w_r", xavier_init_with(&[2, shared_size], rng), true)?,
            shared_size,
            input_size,
        })
    }

    /// Log-probabilities `[log p(match), log p(no match)]` as a graph node.
    pub fn log_probs(&self, g: &mut Graph, store: &ParamStore, v_t: Var, v_b: Var) -> Result<Var> {
        for v in [v_t, v_b] {
            if g.value(v).shape() != [self.input_size] {
                return Err(NorError::shape(
                    "match_score",
                    format!("representation {:?}, matcher expects [{}]", g.value(v).shape(), self.input_size),
                ));
            }
        }
        let w_s = g.param(store, self.w_s);
        let u_s = g.param(store, self.u_s);
        let w_r = g.param(store, self.w_r);
        let a = g.matvec(w_s, v_t)?;
        let b = g.matvec(u_s, v_b)?;
        let pre = g.add(a, b)?;
        let h = g.relu(pre);
        let logits = g.matvec(w_r, h)?;
        g.log_softmax(logits)
    }

    pub fn match_score(&self, store: &ParamStore, v_t: &Tensor, v_b: &Tensor) -> Result<MatchProbability> {
        let mut g = Graph::new();
        let (t, b) = (g.constant(v_t.clone()), g.constant(v_b.clone()));
        let lp = self.log_probs(&mut g, store, t, b)?;
        // recompute from logits rather than exp(log p) so the pair sums to 1 tightly
        let lp = g.value(lp).data();
        let p = softmax(lp);
        Ok(MatchProbability {
            p_match: p[MATCH_ROW],
            p_no_match: p[1 - MATCH_ROW],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: String,
    pub score: f64,
}

/// A query's candidates ordered by match probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: String,
    pub direction: Direction,
    pub ranking: Vec<ScoredItem>,
}

impl RankedList {
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.ranking.iter().map(|s| s.item.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.ranking.truncate(k);
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("ranked list serializes")
    }
}

/// Sort by score descending, ties by ascending id.
pub fn order_scores(mut scored: Vec<ScoredItem>) -> Vec<ScoredItem> {
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.item.cmp(&b.item))
    });
    scored
}

/// Score every candidate with `score` and return them in ranking order.
pub fn rank_candidates<F>(query: &str, candidates: &[String], direction: Direction, mut score: F) -> Result<RankedList>
where
    F: FnMut(&str) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(NorError::InvalidArgument(format!(
            "no candidates to rank for query `{query}`"
        )));
    }
    let scored = candidates
        .iter()
        .map(|c| {
            Ok(ScoredItem {
                item: c.clone(),
                score: score(c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList {
        query: query.to_owned(),
        direction,
        ranking: order_scores(scored),
    })
}
