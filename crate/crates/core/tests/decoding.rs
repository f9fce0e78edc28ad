use alttext::decoding::{beam_search, block_trigrams, decode, greedy, rerank, Candidate, DecodeConfig, Method, Rerank};
use alttext::tokenizer::EOS;

mod common;

use common::*;

fn beam(size: usize, max_len: usize, block: bool) -> DecodeConfig {
    DecodeConfig {
        method: Method::BeamSearch,
        beam_size: size,
        block_trigrams: block,
        max_len,
        ..DecodeConfig::default()
    }
}

#[test]
fn beam_of_one_equals_greedy_on_random_models() {
    for seed in 0..50 {
        let lm = TableLm {
            vocab: 7,
            seed,
            scale: 3.0,
        };
        for block in [false, true] {
            let g = greedy(
                &lm,
                &DecodeConfig {
                    block_trigrams: block,
                    max_len: 12,
                    ..DecodeConfig::greedy()
                },
            );
            let b = beam_search(&lm, &beam(1, 12, block));
            assert_eq!(b.len(), 1);
            assert_eq!(b[0].ids, g.ids, "seed {seed}");
            assert!((b[0].score - g.score).abs() < 1e-12);
        }
    }
}

#[test]
fn beam_matches_replay_over_enumerated_scores() {
    for seed in 0..100 {
        let vocab = 3 + (seed as usize % 4);
        let max_len = 1 + (seed as usize % 3);
        let lm = TableLm {
            vocab,
            seed: 1000 + seed,
            scale: 2.5,
        };
        let all = enumerate_sequences(&lm, max_len);
        let want = oracle_beam(&all, 5, max_len);
        let got = beam_search(&lm, &beam(5, max_len, false));
        assert_eq!(got.len(), want.len(), "seed {seed}");
        for (g, (ids, score)) in got.iter().zip(&want) {
            assert_eq!(&g.ids, ids, "seed {seed}");
            assert!((g.score - score).abs() < 1e-9);
        }
        for w in got.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
}

#[test]
fn wide_beam_is_exhaustive() {
    for seed in 0..30 {
        let lm = TableLm {
            vocab: 5,
            seed: 77 + seed,
            scale: 2.0,
        };
        let max_len = 3;
        let mut complete = complete_sequences(&enumerate_sequences(&lm, max_len), max_len);
        rank(&mut complete);
        let width = 5usize.pow(3);
        let got = beam_search(&lm, &beam(width, max_len, false));
        assert_eq!(got.len(), complete.len().min(width));
        for (g, (ids, score)) in got.iter().zip(&complete) {
            assert_eq!(&g.ids, ids);
            assert!((g.score - score).abs() < 1e-9);
        }
    }
}

#[test]
fn blocked_outputs_have_no_repeated_trigram() {
    let mut decodes = 0;
    for seed in 0..100 {
        // Few tokens and a long horizon make repeats likely without blocking.
        let lm = TableLm {
            vocab: 4,
            seed: 5000 + seed,
            scale: 1.0,
        };
        let g = greedy(
            &lm,
            &DecodeConfig {
                block_trigrams: true,
                max_len: 30,
                ..DecodeConfig::greedy()
            },
        );
        assert!(!has_repeated_trigram(&g.ids), "{:?}", g.ids);
        for c in beam_search(&lm, &beam(3, 30, true)) {
            assert!(!has_repeated_trigram(&c.ids), "{:?}", c.ids);
        }
        decodes += 2;
    }
    assert!(decodes >= 200);
}

#[test]
fn unblocked_decoding_does_repeat() {
    let repeats = (0..100)
        .filter(|&seed| {
            let lm = TableLm {
                vocab: 4,
                seed: 5000 + seed,
                scale: 1.0,
            };
            has_repeated_trigram(
                &greedy(
                    &lm,
                    &DecodeConfig {
                        max_len: 30,
                        ..DecodeConfig::greedy()
                    },
                )
                .ids,
            )
        })
        .count();
    assert!(repeats > 0);
}

#[test]
fn block_examples() {
    // a b c a b: "c" would repeat "a b c".
    let mut logits = vec![0.0; 6];
    block_trigrams(&[3, 4, 5, 3, 4], &mut logits);
    assert_eq!(logits[5], f64::NEG_INFINITY);
    assert_eq!(logits.iter().filter(|l| l.is_infinite()).count(), 1);
    let mut logits = vec![0.5; 6];
    block_trigrams(&[3], &mut logits);
    assert!(logits.iter().all(|&l| l == 0.5));
}

#[test]
fn outputs_respect_max_len_and_are_deterministic() {
    for seed in 0..20 {
        let lm = TableLm {
            vocab: 6,
            seed,
            scale: 1.5,
        };
        for len in 1..6 {
            let cfg = beam(4, len, seed % 2 == 0);
            let a = beam_search(&lm, &cfg);
            assert_eq!(a, beam_search(&lm, &cfg));
            assert!(a.iter().all(|c| c.ids.len() <= len));
            let g = greedy(
                &lm,
                &DecodeConfig {
                    max_len: len,
                    ..DecodeConfig::greedy()
                },
            );
            assert!(g.ids.len() <= len);
        }
    }
}

#[test]
fn rerank_prefers_tweet_overlap() {
    let cands = vec![
        (
            Candidate {
                ids: vec![4, EOS],
                score: -1.0,
                beam_rank: 0,
            },
            "a dog".to_string(),
        ),
        (
            Candidate {
                ids: vec![5, EOS],
                score: -2.0,
                beam_rank: 1,
            },
            "red barn at sunset".to_string(),
        ),
    ];
    let chosen = rerank(&cands, "our red barn at sunset", Rerank::RougeL).unwrap();
    assert_eq!(chosen.1, "red barn at sunset");
    let zero = vec![cands[0].clone(), cands[1].clone()];
    assert_eq!(rerank(&zero, "nothing shared", Rerank::Bleu).unwrap().0.beam_rank, 0);
}

#[test]
fn decode_with_rerank_returns_a_beam_candidate() {
    let lm = TableLm {
        vocab: 8,
        seed: 9,
        scale: 1.0,
    };
    let render = |ids: &[u32]| ids.iter().map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
    let cfg = DecodeConfig {
        rerank: Rerank::RougeL,
        max_len: 6,
        ..DecodeConfig::default()
    };
    let (cand, text) = decode(&lm, &cfg, "w5 w6 w7", render).unwrap();
    let beams = beam_search(&lm, &cfg);
    assert!(beams.contains(&cand));
    assert_eq!(text, render(cand.caption_ids()));
}
