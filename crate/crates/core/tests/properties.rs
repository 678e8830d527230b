use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;

use nor_core::data::{build_candidates, tokenize, CandidatePool, Direction, EOS};
use nor_core::encoder::{mutual_attend, MutualAttentionParams};
use nor_core::generator::beam_search;
use nor_core::matcher::rank_candidates;
use nor_core::metrics::{auc, average_precision, bleu, reciprocal_rank, rouge_l_single, rouge_n_single, rouge_su4_single};
use nor_core::numerics::{checkpoint, conv2d, softmax, xavier_init, Graph, ParamStore, Tensor};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

/// Zero-padded 3×3 convolution written out longhand.
fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let o = k.shape()[0];
    let mut out = Vec::new();
    for oc in 0..o {
        for i in 0..h as i64 {
            for j in 0..w as i64 {
                let mut s = b.data()[oc];
                for ic in 0..c {
                    for di in -1..=1i64 {
                        for dj in -1..=1i64 {
                            let (y, z) = (i + di, j + dj);
                            if y < 0 || z < 0 || y >= h as i64 || z >= w as i64 {
                                continue;
                            }
                            let kv = k.data()[((oc * c + ic) * 3 + (di + 1) as usize) * 3 + (dj + 1) as usize];
                            s += kv * x.data()[(ic * h + y as usize) * w + z as usize];
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_keeps_spatial_size_and_matches_longhand(
        (c, o, h, w, x, k, b) in (1usize..3, 1usize..3, 1usize..6, 1usize..6)
            .prop_flat_map(|(c, o, h, w)| (Just(c), Just(o), Just(h), Just(w), values(c * h * w), values(o * c * 9), values(o)))
    ) {
        let (x, k, b) = (tensor(&[c, h, w], x), tensor(&[o, c, 3, 3], k), tensor(&[o], b));
        let y = conv2d(&x, &k, &b).unwrap();
        prop_assert_eq!(y.shape(), &[o, h, w][..]);
        for (a, e) in y.data().iter().zip(naive_conv(&x, &k, &b)) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(v in values(7), shift in -50.0..50.0f64) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mutual_attention_follows_row_permutations(
        l in 2usize..6,
        d in 1usize..4,
        seed in any::<u64>(),
        rot in 1usize..5,
    ) {
        let mut s = ParamStore::new();
        let p = MutualAttentionParams {
            w_a: s.add("w_a", xavier_init(&[d, d], seed), true).unwrap(),
            u_a: s.add("u_a", xavier_init(&[d, d], seed ^ 1), true).unwrap(),
            v_a: s.add("v_a", xavier_init(&[d], seed ^ 2), true).unwrap(),
            w_p: s.add("w_p", xavier_init(&[2, d], seed ^ 3), true).unwrap(),
        };
        let fa = xavier_init(&[l, d], seed ^ 4).map(|x| x * 3.0);
        let fb = xavier_init(&[l, d], seed ^ 5).map(|x| x * 3.0);
        let perm: Vec<usize> = (0..l).map(|i| (i + rot) % l).collect();
        let permute = |t: &Tensor| {
            let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
            tensor(&[l, d], data)
        };
        let run = |a: &Tensor, b: &Tensor| {
            let mut g = Graph::new();
            let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
            let (out, w) = mutual_attend(&mut g, &s, &p, a, b).unwrap();
            (g.value(out).data().to_vec(), g.value(w).data().to_vec())
        };
        let (out, w) = run(&fa, &fb);
        // permuting the attended rows permutes the weights, output unchanged
        let (out_p, w_p) = run(&permute(&fa), &fb);
        for (i, &pi) in perm.iter().enumerate() {
            prop_assert!((w_p[i] - w[pi]).abs() < 1e-12);
        }
        for (a, b) in out.iter().zip(&out_p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // the other item only enters through its mean
        let (out_q, w_q) = run(&fa, &permute(&fb));
        for (a, b) in out.iter().zip(&out_q).chain(w.iter().zip(&w_q)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_ignores_candidate_order(scores in prop::collection::vec(0u8..4, 1..8), rot in 0usize..8) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("b{i}")).collect();
        let score_of = |id: &str| -> nor_core::Result<f64> {
            let i: usize = id[1..].parse().unwrap();
            Ok(scores[i] as f64)
        };
        let a = rank_candidates("t", &ids, Direction::TopToBottom, score_of).unwrap();
        let mut rotated = ids.clone();
        rotated.rotate_left(rot % ids.len());
        let b = rank_candidates("t", &rotated, Direction::TopToBottom, score_of).unwrap();
        prop_assert_eq!(&a, &b);
        for w in a.ranking.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].item < w[1].item));
        }
    }

    #[test]
    fn ranking_metrics_stay_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 2..12), raw in prop::collection::vec(0.0..1.0f64, 12)) {
        prop_assume!(rel.iter().any(|&r| r) && rel.iter().any(|&r| !r));
        let scores = &raw[..rel.len()];
        for m in [average_precision(&rel).unwrap(), reciprocal_rank(&rel).unwrap(), auc(scores, &rel).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        let mut perfect = rel.clone();
        perfect.sort_by(|a, b| b.cmp(a));
        prop_assert_eq!(average_precision(&perfect).unwrap(), 1.0);
    }

    #[test]
    fn text_metrics_are_bounded_and_exact_on_copies(a in prop::collection::vec(0u8..5, 1..10), b in prop::collection::vec(0u8..5, 1..10)) {
        for prf in [rouge_n_single(&a, &b, 1), rouge_n_single(&a, &b, 2), rouge_l_single(&a, &b), rouge_su4_single(&a, &b)] {
            for x in [prf.p, prf.r, prf.f] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
        let bl = bleu(&a, std::slice::from_ref(&b), 4);
        prop_assert!((0.0..=1.0).contains(&bl));
        prop_assert_eq!(rouge_l_single(&a, &a).f, 1.0);
        prop_assert_eq!(rouge_su4_single(&a, &a).f, 1.0);
        if a.len() >= 4 {
            prop_assert!((bleu(&a, std::slice::from_ref(&a), 4) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tokenize_is_idempotent(text in "[A-Za-z .,!?~']{0,40}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.contains(' ')));
    }

    #[test]
    fn checkpoint_round_trips(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..5), seed in any::<u64>()) {
        let mut s = ParamStore::new();
        for (i, shape) in shapes.iter().enumerate() {
            s.add(format!("p{i}"), xavier_init(shape, seed.wrapping_add(i as u64)), i % 2 == 0).unwrap();
        }
        let bytes = checkpoint::encode(&s);
        let decoded = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(decoded.len(), shapes.len());
        for p in s.iter() {
            prop_assert_eq!(&decoded[&p.name], &p.value);
        }
        let mut fresh = s.clone();
        for p in fresh.iter_mut() {
            p.value.fill(0.0);
        }
        fresh.load_values(&decoded).unwrap();
        prop_assert_eq!(checkpoint::encode(&fresh), bytes);
    }

    #[test]
    fn candidate_pools_hold_positives_and_distinct_negatives(n_pool in 2usize..10, k in 0usize..10, seed in any::<u64>()) {
        let pool: Vec<String> = (0..n_pool).map(|i| format!("b{i}")).collect();
        let mut positives = BTreeMap::new();
        positives.insert("t0".to_owned(), ["b0".to_owned()].into_iter().collect());
        let built = build_candidates(&["t0".to_owned()], Direction::TopToBottom, &pool, &positives, seed, k);
        if k > n_pool - 1 {
            prop_assert!(built.is_err());
            return Ok(());
        }
        let p = built.unwrap();
        let e = &p.entries[0];
        prop_assert!(e.candidates.contains(&"b0".to_owned()));
        prop_assert_eq!(e.candidates.len(), 1 + k);
        let mut seen = e.candidates.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), e.candidates.len());
        let again = build_candidates(&["t0".to_owned()], Direction::TopToBottom, &pool, &positives, seed, k).unwrap();
        prop_assert_eq!(&again, &p);
        let back = CandidatePool::from_jsonl(&p.to_jsonl(), Path::new("pool")).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn beam_results_are_finished(logits in prop::collection::vec(values(5), 4), beam in 1usize..4, max_len in 1usize..5) {
        // state = step count; each step uses its own fixed distribution
        let step = |_prev: usize, t: &usize| -> nor_core::Result<(Vec<f64>, usize)> {
            let p = softmax(&logits[*t % logits.len()]);
            Ok((p.iter().map(|x| x.ln()).collect(), t + 1))
        };
        let h = beam_search(0usize, 5, beam, max_len, step).unwrap();
        prop_assert!(!h.tokens.is_empty() && h.tokens.len() <= max_len);
        prop_assert!(h.tokens.last() == Some(&EOS) || h.tokens.len() == max_len);
        prop_assert!(h.tokens.iter().all(|&t| t >= EOS));
        prop_assert!(h.tokens[..h.tokens.len() - 1].iter().all(|&t| t != EOS));
        prop_assert!((h.score - h.log_prob / h.tokens.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn beam_search_rejects_zero_width() {
    let step = |_: usize, s: &()| -> nor_core::Result<(Vec<f64>, ())> { Ok((vec![0.0; 4], *s)) };
    assert!(beam_search((), 4, 0, 3, step).is_err());
    assert!(beam_search((), 4, 2, 0, step).is_err());
}
