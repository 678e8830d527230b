//! Ranking metrics (MAP, MRR, AUC) and text-overlap metrics (ROUGE, BLEU).
//!
//! Text metrics are token-level and do no stemming. With several references,
//! ROUGE keeps the reference giving the highest F1; BLEU clips n-gram counts
//! by the maximum count in any reference and uses the closest reference length
//! for the brevity penalty.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{NorError, Result};
use crate::matcher::RankedList;

/// One query's ranking, reduced to what the ranking metrics need.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    /// Relevance of each candidate in ranked order.
    pub relevance: Vec<bool>,
    /// Score of each candidate, same order as `relevance`.
    pub scores: Vec<f64>,
}

impl QueryResult {
    pub fn from_ranking(list: &RankedList, positives: &BTreeSet<String>) -> Self {
        QueryResult {
            relevance: list.ranking.iter().map(|s| positives.contains(&s.item)).collect(),
            scores: list.ranking.iter().map(|s| s.score).collect(),
        }
    }
}

fn require_positive(relevance: &[bool]) -> Result<usize> {
    let n = relevance.iter().filter(|&&r| r).count();
    if n == 0 {
        return Err(NorError::InvalidArgument("ranking has no positive candidate".into()));
    }
    Ok(n)
}

/// `(1/rel) Σ_j P(j)·rel(j)` over a ranked relevance list.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let total = require_positive(relevance)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// `1 / rank` of the first positive.
pub fn reciprocal_rank(relevance: &[bool]) -> Result<f64> {
    require_positive(relevance)?;
    let rank = relevance.iter().position(|&r| r).expect("checked above") + 1;
    Ok(1.0 / rank as f64)
}

/// Fraction of (positive, negative) pairs with the positive scored strictly higher.
pub fn auc(scores: &[f64], relevance: &[bool]) -> Result<f64> {
    if scores.len() != relevance.len() {
        return Err(NorError::shape(
            "auc",
            format!("{} scores for {} labels", scores.len(), relevance.len()),
        ));
    }
    let mut neg: Vec<f64> = scores
        .iter()
        .zip(relevance)
        .filter(|(_, &r)| !r)
        .map(|(&s, _)| s)
        .collect();
    let pos: Vec<f64> = scores
        .iter()
        .zip(relevance)
        .filter(|(_, &r)| r)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(NorError::InvalidArgument(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    neg.sort_by(f64::total_cmp);
    // count negatives strictly below each positive
    let wins: usize = pos.iter().map(|&p| neg.partition_point(|&n| n < p)).sum();
    Ok(wins as f64 / (pos.len() * neg.len()) as f64)
}

/// Precision, recall and F1 of one overlap measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand_units: usize, ref_units: usize) -> Self {
        let p = if cand_units == 0 { 0.0 } else { overlap as f64 / cand_units as f64 };
        let r = if ref_units == 0 { 0.0 } else { overlap as f64 / ref_units as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f }
    }
}

type Counts<K> = HashMap<K, usize>;

fn ngrams<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> Counts<Vec<T>> {
    let mut c = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *c.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    c
}

fn overlap<K: Hash + Eq>(a: &Counts<K>, b: &Counts<K>) -> usize {
    a.iter().map(|(k, &n)| n.min(b.get(k).copied().unwrap_or(0))).sum()
}

fn total<K>(c: &Counts<K>) -> usize {
    c.values().sum()
}

/// Keep the reference with the best F1; the first wins ties.
fn best_reference<R, F>(references: &[R], score: F) -> Prf
where
    F: Fn(&R) -> Prf,
{
    references
        .iter()
        .map(score)
        .fold(None, |best: Option<Prf>, s| match best {
            Some(b) if b.f >= s.f => Some(b),
            _ => Some(s),
        })
        .unwrap_or_default()
}

pub fn rouge_n_single<T: Hash + Eq + Clone>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    let c = ngrams(candidate, n);
    let r = ngrams(reference, n);
    Prf::from_counts(overlap(&c, &r), total(&c), total(&r))
}

pub fn rouge_n<T: Hash + Eq + Clone>(candidate: &[T], references: &[Vec<T>], n: usize) -> Prf {
    best_reference(references, |r| rouge_n_single(candidate, r, n))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_single<T: PartialEq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], references: &[Vec<T>]) -> Prf {
    best_reference(references, |r| rouge_l_single(candidate, r))
}

/// Largest index gap of a skip-bigram: at most four tokens in between.
pub const SKIP_WINDOW: usize = 5;

#[derive(Clone, PartialEq, Eq, Hash)]
enum SuUnit<T> {
    Uni(T),
    Skip(T, T),
}

fn su4_units<T: Hash + Eq + Clone>(tokens: &[T]) -> Counts<SuUnit<T>> {
    let mut c = HashMap::new();
    for (i, t) in tokens.iter().enumerate() {
        *c.entry(SuUnit::Uni(t.clone())).or_insert(0) += 1;
        for u in tokens.iter().take(i + SKIP_WINDOW + 1).skip(i + 1) {
            *c.entry(SuUnit::Skip(t.clone(), u.clone())).or_insert(0) += 1;
        }
    }
    c
}

pub fn rouge_su4_single<T: Hash + Eq + Clone>(candidate: &[T], reference: &[T]) -> Prf {
    let c = su4_units(candidate);
    let r = su4_units(reference);
    Prf::from_counts(overlap(&c, &r), total(&c), total(&r))
}

pub fn rouge_su4<T: Hash + Eq + Clone>(candidate: &[T], references: &[Vec<T>]) -> Prf {
    best_reference(references, |r| rouge_su4_single(candidate, r))
}

/// `BP = 1` when the candidate is longer than `r`, else `e^{1 − r/c}`.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Clipped n-gram precision against all references.
pub fn clipped_precision<T: Hash + Eq + Clone>(candidate: &[T], references: &[Vec<T>], n: usize) -> f64 {
    let c = ngrams(candidate, n);
    let denom = total(&c);
    if denom == 0 {
        return 0.0;
    }
    let mut max_ref: Counts<Vec<T>> = HashMap::new();
    for r in references {
        for (k, v) in ngrams(r, n) {
            let e = max_ref.entry(k).or_insert(0);
            *e = (*e).max(v);
        }
    }
    overlap(&c, &max_ref) as f64 / denom as f64
}

/// Reference length closest to `c`; the shorter one on ties.
pub fn closest_ref_len<T>(c: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap_or(0)
}

/// Uniformly weighted BLEU up to `max_n`, zero when any precision is zero.
pub fn bleu<T: Hash + Eq + Clone>(candidate: &[T], references: &[Vec<T>], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let p = clipped_precision(candidate, references, n);
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / max_n as f64;
    }
    let r = closest_ref_len(candidate.len(), references);
    brevity_penalty(candidate.len(), r) * log_sum.exp()
}

pub const BLEU_MAX_N: usize = 4;

/// A generated comment and its reference comments.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub map: f64,
    pub mrr: f64,
    pub auc: f64,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Keys "1", "2", "L" and "SU4".
    pub rouge: BTreeMap<String, Prf>,
    pub bleu: f64,
    pub comments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub map: f64,
    pub mrr: f64,
    pub auc: f64,
    pub rouge: BTreeMap<String, Prf>,
    pub bleu: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn ranking_report(queries: &[QueryResult]) -> Result<RankingReport> {
    if queries.is_empty() {
        return Err(NorError::InvalidArgument("no queries to evaluate".into()));
    }
    let mut per = Vec::with_capacity(queries.len());
    for q in queries {
        per.push((
            average_precision(&q.relevance)?,
            reciprocal_rank(&q.relevance)?,
            auc(&q.scores, &q.relevance)?,
        ));
    }
    Ok(RankingReport {
        map: mean(per.iter().map(|v| v.0)),
        mrr: mean(per.iter().map(|v| v.1)),
        auc: mean(per.iter().map(|v| v.2)),
        queries: queries.len(),
    })
}

pub fn generation_report(pairs: &[TextPair]) -> Result<GenerationReport> {
    if pairs.is_empty() {
        return Err(NorError::InvalidArgument("no generated comments to evaluate".into()));
    }
    if pairs.iter().any(|p| p.references.is_empty() || p.references.iter().any(Vec::is_empty)) {
        return Err(NorError::InvalidArgument("every comment needs non-empty references".into()));
    }
    let avg = |f: &dyn Fn(&TextPair) -> Prf| {
        let all: Vec<Prf> = pairs.iter().map(f).collect();
        Prf {
            p: mean(all.iter().map(|x| x.p)),
            r: mean(all.iter().map(|x| x.r)),
            f: mean(all.iter().map(|x| x.f)),
        }
    };
    let mut rouge = BTreeMap::new();
    rouge.insert("1".to_owned(), avg(&|p| rouge_n(&p.candidate, &p.references, 1)));
    rouge.insert("2".to_owned(), avg(&|p| rouge_n(&p.candidate, &p.references, 2)));
    rouge.insert("L".to_owned(), avg(&|p| rouge_l(&p.candidate, &p.references)));
    rouge.insert("SU4".to_owned(), avg(&|p| rouge_su4(&p.candidate, &p.references)));
    Ok(GenerationReport {
        rouge,
        bleu: mean(pairs.iter().map(|p| bleu(&p.candidate, &p.references, BLEU_MAX_N))),
        comments: pairs.len(),
    })
}

/// Means over queries for ranking metrics and over comments for text metrics.
pub fn corpus_report(rankings: &[QueryResult], texts: &[TextPair]) -> Result<EvaluationReport> {
    let r = ranking_report(rankings)?;
    let g = generation_report(texts)?;
    Ok(EvaluationReport {
        map: r.map,
        mrr: r.mrr,
        auc: r.auc,
        rouge: g.rouge,
        bleu: g.bleu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn worked_ranking_examples() {
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert!((ap - 0.833333).abs() < 1e-6);
        assert_eq!(average_precision(&[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[true]).unwrap(), 1.0);
        assert!(average_precision(&[false, false]).is_err());

        assert_eq!(reciprocal_rank(&[true, false]).unwrap(), 1.0);
        let mrr = (reciprocal_rank(&[false, true]).unwrap() + reciprocal_rank(&[false, false, false, true]).unwrap()) / 2.0;
        assert_eq!(mrr, 0.375);
        assert_eq!(reciprocal_rank(&[false; 6].iter().chain(&[true]).copied().collect::<Vec<_>>()).unwrap(), 1.0 / 7.0);

        assert_eq!(auc(&[0.9, 0.5, 0.95], &[true, false, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.0);
        assert!(auc(&[0.3, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn worked_text_examples() {
        let (a, b) = (toks("the cat sat"), toks("the cat ran"));
        let r1 = rouge_n(&a, std::slice::from_ref(&b), 1);
        assert_eq!((r1.p, r1.r), (2.0 / 3.0, 2.0 / 3.0));
        assert!((r1.f - 2.0 / 3.0).abs() < 1e-15);
        let r2 = rouge_n(&a, std::slice::from_ref(&b), 2);
        assert_eq!((r2.p, r2.r, r2.f), (0.5, 0.5, 0.5));
        let rl = rouge_l(&a, std::slice::from_ref(&b));
        assert_eq!((rl.p, rl.r), (2.0 / 3.0, 2.0 / 3.0));
        let same = rouge_l(&a, std::slice::from_ref(&a));
        assert_eq!((same.p, same.r, same.f), (1.0, 1.0, 1.0));
        assert_eq!(rouge_l(&a, &[toks("x y")]).f, 0.0);

        let su = rouge_su4(&toks("a b"), &[toks("a c")]);
        assert_eq!((su.p, su.r), (1.0 / 3.0, 1.0 / 3.0));
        assert_eq!(rouge_su4(&toks("a"), &[toks("a")]), rouge_n(&toks("a"), &[toks("a")], 1));

        assert_eq!(bleu(&a, std::slice::from_ref(&a), 3), 1.0);
        assert!((brevity_penalty(3, 6) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((brevity_penalty(3, 6) - 0.367879).abs() < 1e-6);
        assert_eq!(clipped_precision(&toks("the the"), &[toks("the cat")], 1), 0.5);
        assert_eq!(bleu::<String>(&[], std::slice::from_ref(&a), 4), 0.0);
        assert_eq!(rouge_n(&Vec::<String>::new(), &[a], 1), Prf::default());
    }

    #[test]
    fn su4_skip_limit() {
        // six tokens apart is out of range, five is in
        let r = toks("a 1 2 3 4 b");
        let within = rouge_su4_single(&toks("a b"), &r);
        assert_eq!(within.p, 1.0);
        let r = toks("a 1 2 3 4 5 b");
        let beyond = rouge_su4_single(&toks("a b"), &r);
        assert!((beyond.p - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn multi_reference_takes_best_f1() {
        let c = toks("the skirt is lovely");
        let refs = vec![toks("nice shoes"), toks("the skirt is lovely indeed")];
        assert_eq!(rouge_n(&c, &refs, 1), rouge_n_single(&c, &refs[1], 1));
        assert_eq!(closest_ref_len(4, &[toks("a b"), toks("a b c d e f")]), 2);
        assert_eq!(closest_ref_len(4, &[toks("a b c"), toks("a b c d e")]), 3);
    }

    #[test]
    fn corpus_means() {
        let q1 = QueryResult {
            relevance: vec![true, false],
            scores: vec![0.9, 0.1],
        };
        let q2 = QueryResult {
            relevance: vec![false, true],
            scores: vec![0.9, 0.1],
        };
        let one = ranking_report(std::slice::from_ref(&q1)).unwrap();
        assert_eq!((one.map, one.mrr, one.auc), (1.0, 1.0, 1.0));
        let both = ranking_report(&[q1.clone(), q2]).unwrap();
        assert_eq!(both.auc, 0.5);
        assert!(ranking_report(&[]).is_err());

        let pair = TextPair {
            candidate: toks("love this look"),
            references: vec![toks("love this look")],
        };
        let rep = corpus_report(&[q1], &[pair]).unwrap();
        let keys: Vec<&str> = rep.rouge.keys().map(String::as_str).collect();
        assert_eq!(keys, ["1", "2", "L", "SU4"]);
        assert_eq!(rep.rouge["1"].f, 1.0);
        let json = serde_json::to_value(&rep).unwrap();
        for k in ["map", "mrr", "auc", "rouge", "bleu"] {
            assert!(json.get(k).is_some());
        }
        assert!(json["rouge"]["SU4"].get("p").is_some());
        assert!(corpus_report(&[], &[]).is_err());
    }

    #[test]
    fn ranking_from_list() {
        use crate::data::Direction;
        use crate::matcher::{RankedList, ScoredItem};
        let list = RankedList {
            query: "t".into(),
            direction: Direction::TopToBottom,
            ranking: vec![
                ScoredItem { item: "b1".into(), score: 0.8 },
                ScoredItem { item: "b0".into(), score: 0.3 },
            ],
        };
        let pos: BTreeSet<String> = ["b0".to_string()].into();
        let q = QueryResult::from_ranking(&list, &pos);
        assert_eq!(q.relevance, vec![false, true]);
        assert_eq!(reciprocal_rank(&q.relevance).unwrap(), 0.5);
    }
}
