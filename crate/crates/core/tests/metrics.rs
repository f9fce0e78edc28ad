use alttext::metrics::{
    bleu4, cider, evaluate, lcs_len, meteor, meteor_stats, rouge_l, EvalPair, MetricError, MetricReport, DEFAULT_BETA,
};
use alttext::{Prediction, Sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

use common::*;

#[test]
fn bleu_hand_computed() {
    // Clipped precisions 5/6, 3/5, 2/4, 1/3; c = 6, r = 7.
    let got = bleu4(&[pair("the cat sat on the mat", "the cat sat on a mat there")]).unwrap();
    let want = (1.0f64 - 7.0 / 6.0).exp() * (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
    assert!(close(got, want), "{got} vs {want}");
}

#[test]
fn bleu_matches_oracle() {
    let pairs = fixture_pairs();
    for p in &pairs {
        let one = std::slice::from_ref(p);
        assert!(close(bleu4(one).unwrap(), oracle_bleu(one)));
    }
    assert!(close(bleu4(&pairs).unwrap(), oracle_bleu(&pairs)));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let ps = random_pairs(&mut rng, 6);
        assert!(close(bleu4(&ps).unwrap(), oracle_bleu(&ps)));
    }
}

#[test]
fn bleu_extremes() {
    let same = vec![
        pair("a b c d e", "a b c d e"),
        pair("one two three four", "one two three four"),
    ];
    assert!(close(bleu4(&same).unwrap(), 1.0));
    assert_eq!(bleu4(&[pair("x y z w", "a b c d")]).unwrap(), 0.0);
    assert_eq!(bleu4(&[]), Err(MetricError::EmptyCorpus));
}

#[test]
fn adding_identical_pair_never_lowers_pooled_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let mut ps = random_pairs(&mut rng, 4);
        let before = pooled_precisions(&ps);
        ps.push(pair("a b c d e", "a b c d e"));
        let after = pooled_precisions(&ps);
        for n in 0..4 {
            assert!(after[n] >= before[n] - TOL);
        }
    }
}

fn pooled_precisions(pairs: &[EvalPair]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for p in pairs {
            let gr = grams(&p.reference, n);
            for (g, k) in grams(&p.candidate, n) {
                m += k.min(*gr.get(&g).unwrap_or(&0));
                t += k;
            }
        }
        out[n - 1] = if t == 0 { 1.0 } else { m as f64 / t as f64 };
    }
    out
}

#[test]
fn rouge_hand_computed() {
    let (c, r) = (toks("a c d"), toks("a b c d"));
    assert_eq!(lcs_len(&c, &r), 3);
    let want = (1.0 + 1.44) * 0.75 / (0.75 + 1.44);
    assert!(close(rouge_l(&c, &r, 1.2), want));
    assert!((rouge_l(&c, &r, 1.2) - 0.8356).abs() < 1e-4);
    assert!(close(
        rouge_l(&toks("a b c d e"), &toks("a b c d e"), DEFAULT_BETA),
        1.0
    ));
    assert_eq!(rouge_l(&toks("x y"), &toks("a b"), DEFAULT_BETA), 0.0);
}

#[test]
fn rouge_matches_oracle() {
    for p in fixture_pairs() {
        assert_eq!(
            lcs_len(&p.candidate, &p.reference),
            oracle_lcs(&p.candidate, &p.reference)
        );
        assert!(close(
            rouge_l(&p.candidate, &p.reference, DEFAULT_BETA),
            oracle_rouge(&p.candidate, &p.reference, DEFAULT_BETA)
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in random_pairs(&mut rng, 200) {
        assert!(close(
            rouge_l(&p.candidate, &p.reference, DEFAULT_BETA),
            oracle_rouge(&p.candidate, &p.reference, DEFAULT_BETA)
        ));
    }
}

#[test]
fn rouge_beta_limits() {
    let (c, r) = (toks("a c d e f"), toks("a b c d"));
    let l = lcs_len(&c, &r) as f64;
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    assert!((rouge_l(&c, &r, 100.0) - rec).abs() < 1e-3);
    assert!((rouge_l(&c, &r, 0.01) - p).abs() < 1e-3);
}

#[test]
fn meteor_hand_computed() {
    // Identical strings form one chunk.
    let t = toks("a b c d e");
    assert!(close(meteor(&t, &t), 1.0 - 0.5 / 125.0));
    assert!((meteor(&t, &t) - 0.996).abs() < 1e-12);
    // Swapped pair: two matches, two chunks.
    let s = meteor_stats(&toks("b a"), &toks("a b"));
    assert_eq!((s.matches, s.chunks), (2, 2));
    assert!(close(meteor(&toks("b a"), &toks("a b")), 0.5));
    assert_eq!(meteor(&toks("x y"), &toks("a b")), 0.0);
}

#[test]
fn meteor_matches_brute_force_alignment() {
    for p in fixture_pairs() {
        let s = meteor_stats(&p.candidate, &p.reference);
        assert_eq!(s.alignment, oracle_alignment(&p.candidate, &p.reference), "{:?}", p);
        assert!(close(
            meteor(&p.candidate, &p.reference),
            oracle_meteor(&p.candidate, &p.reference)
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in random_pairs(&mut rng, 300) {
        assert!(
            close(
                meteor(&p.candidate, &p.reference),
                oracle_meteor(&p.candidate, &p.reference)
            ),
            "{p:?}"
        );
    }
}

#[test]
fn order_matters_for_rouge_and_meteor() {
    let (ab, ba) = (toks("a b"), toks("b a"));
    assert!(rouge_l(&ba, &ab, DEFAULT_BETA) < rouge_l(&ab, &ab, DEFAULT_BETA));
    assert!(meteor(&ba, &ab) < meteor(&ab, &ab));
}

#[test]
fn cider_hand_computed() {
    // N = 3; unigram df: x 2, y 1, z 1, w 1; bigram df: "x y" 1, "x z" 1.
    let pairs = vec![pair("x y", "x y"), pair("x", "x z"), pair("q", "w")];
    let (l15, l3) = (1.5f64.ln(), 3f64.ln());
    // Pair 1 has cosine 1 at n = 1, 2; pair 2 matches only the unigram x.
    let p1 = 10.0 * 2.0 / 4.0;
    let p2 = 10.0 * (l15 / (l15 * l15 + l3 * l3).sqrt()) / 4.0;
    let want = (p1 + p2 + 0.0) / 3.0;
    assert!(close(cider(&pairs).unwrap(), want));
}

#[test]
fn cider_matches_oracle() {
    let pairs = fixture_pairs();
    assert!(close(cider(&pairs).unwrap(), oracle_cider(&pairs)));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let ps = random_pairs(&mut rng, 10);
        assert!(close(cider(&ps).unwrap(), oracle_cider(&ps)));
    }
}

#[test]
fn cider_extremes() {
    let perfect = vec![
        pair("a dog runs in the park", "a dog runs in the park"),
        pair("two cats sleep on a warm sofa", "two cats sleep on a warm sofa"),
    ];
    assert!(close(cider(&perfect).unwrap(), 10.0));
    let disjoint = vec![pair("x y z w", "a b c d"), pair("q r s t", "e f g h")];
    assert_eq!(cider(&disjoint).unwrap(), 0.0);
    assert_eq!(cider(&perfect[..1]), Err(MetricError::CorpusTooSmall(1)));
}

fn sample(id: &str, alt: &str) -> Sample {
    Sample {
        tweet_id: id.into(),
        image_id: format!("i{id}"),
        created_at: 0,
        tweet_text: "tweet".into(),
        alt_text: alt.into(),
        path: String::new(),
    }
}

fn prediction(id: &str, caption: &str) -> Prediction {
    Prediction {
        tweet_id: id.into(),
        image_id: format!("i{id}"),
        caption: caption.into(),
        score: 0.0,
        beam_rank: 0,
    }
}

#[test]
fn evaluate_perfect_predictions_hit_maxima() {
    let alts = [
        "a dog runs in the park",
        "two cats sleep on a warm sofa",
        "the old bridge at night",
    ];
    let refs: Vec<Sample> = alts
        .iter()
        .enumerate()
        .map(|(i, a)| sample(&i.to_string(), a))
        .collect();
    let preds: Vec<Prediction> = alts
        .iter()
        .enumerate()
        .map(|(i, a)| prediction(&i.to_string(), a))
        .collect();
    let report = evaluate(&preds, &refs).unwrap();
    let mean_meteor = alts
        .iter()
        .map(|a| 1.0 - 0.5 / (a.split_whitespace().count() as f64).powi(3))
        .sum::<f64>()
        / 3.0;
    let want = MetricReport {
        bleu4: 1.0,
        meteor: mean_meteor,
        rouge_l: 1.0,
        cider: 10.0,
    };
    for (g, w) in report.display_values().iter().zip(want.display_values()) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
    assert_eq!(report.display_values()[0], 100.0);
    assert_eq!(report.display_values()[3], 1000.0);
}

#[test]
fn evaluate_missing_reference() {
    let err = evaluate(&[prediction("9", "x")], &[sample("1", "x")]).unwrap_err();
    assert_eq!(err, MetricError::MissingReference("9".into(), "i9".into()));
}
