//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use alttext::decoding::LanguageModel;
use alttext::dedup::{Thumbnail, THUMB_PIXELS};
use alttext::metrics::EvalPair;
use alttext::tokenizer::EOS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

pub fn pair(c: &str, r: &str) -> EvalPair {
    EvalPair::new(c, r)
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

// Oracles: straightforward re-derivations with HashMaps and recursion.

pub fn grams(t: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut m = HashMap::new();
    for i in 0..t.len().saturating_sub(n - 1) {
        if i + n <= t.len() {
            *m.entry(t[i..i + n].to_vec()).or_insert(0) += 1;
        }
    }
    m
}

pub fn oracle_bleu(pairs: &[EvalPair]) -> f64 {
    let mut num = [0.0; 4];
    let mut den = [0.0; 4];
    let mut c = 0.0;
    let mut r = 0.0;
    for p in pairs {
        c += p.candidate.len() as f64;
        r += p.reference.len() as f64;
        for n in 1..=4 {
            let gc = grams(&p.candidate, n);
            let gr = grams(&p.reference, n);
            for (g, k) in gc {
                num[n - 1] += k.min(*gr.get(&g).unwrap_or(&0)) as f64;
                den[n - 1] += k as f64;
            }
        }
    }
    let mut prod = 1.0;
    for n in 0..4 {
        if num[n] == 0.0 {
            return 0.0;
        }
        prod *= num[n] / den[n];
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * prod.powf(0.25)
}

pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        let key = (a.len(), b.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = if a[0] == b[0] {
            1 + go(&a[1..], &b[1..], memo)
        } else {
            go(&a[1..], b, memo).max(go(a, &b[1..], memo))
        };
        memo.insert(key, v);
        v
    }
    go(a, b, &mut HashMap::new())
}

pub fn oracle_rouge(c: &[String], r: &[String], beta: f64) -> f64 {
    let l = oracle_lcs(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    (1.0 + beta * beta) * p * rec / (rec + beta * beta * p)
}

/// Every one-to-one exact matching; keeps the maximal ones with the fewest
/// crossings, then the lexicographically smallest sorted pair list.
pub fn oracle_alignment(c: &[String], r: &[String]) -> Vec<(usize, usize)> {
    fn rec(
        i: usize,
        c: &[String],
        r: &[String],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        all: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if i == c.len() {
            all.push(cur.clone());
            return;
        }
        rec(i + 1, c, r, used, cur, all);
        for j in 0..r.len() {
            if !used[j] && c[i] == r[j] {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, c, r, used, cur, all);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut all = Vec::new();
    rec(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut all);
    let best = all.iter().map(Vec::len).max().unwrap_or(0);
    let cross = |a: &Vec<(usize, usize)>| {
        let mut n = 0;
        for x in a {
            for y in a {
                if x.0 < y.0 && x.1 > y.1 {
                    n += 1;
                }
            }
        }
        n
    };
    all.into_iter()
        .filter(|a| a.len() == best)
        .min_by(|a, b| cross(a).cmp(&cross(b)).then_with(|| a.cmp(b)))
        .unwrap_or_default()
}

pub fn oracle_meteor(c: &[String], r: &[String]) -> f64 {
    let a = oracle_alignment(c, r);
    if a.is_empty() {
        return 0.0;
    }
    let m = a.len() as f64;
    let mut chunks = 1.0;
    for w in a.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1.0;
        }
    }
    let p = m / c.len() as f64;
    let rec = m / r.len() as f64;
    let f = 10.0 * p * rec / (rec + 9.0 * p);
    f * (1.0 - 0.5 * (chunks / m).powi(3))
}

pub fn oracle_cider(pairs: &[EvalPair]) -> f64 {
    let big_n = pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let mut s = 0.0;
        for n in 1..=4 {
            let df = |g: &Vec<String>| pairs.iter().filter(|q| grams(&q.reference, n).contains_key(g)).count();
            let vec = |t: &[String]| -> HashMap<Vec<String>, f64> {
                grams(t, n)
                    .into_iter()
                    .map(|(g, k)| {
                        let d = df(&g).max(1) as f64;
                        let w = k as f64 * (big_n / d).ln();
                        (g, w)
                    })
                    .collect()
            };
            let vc = vec(&p.candidate);
            let vr = vec(&p.reference);
            let nc: f64 = vc.values().map(|x| x * x).sum::<f64>().sqrt();
            let nr: f64 = vr.values().map(|x| x * x).sum::<f64>().sqrt();
            if nc > 0.0 && nr > 0.0 {
                let dot: f64 = vc.iter().map(|(g, x)| x * vr.get(g).unwrap_or(&0.0)).sum();
                s += dot / (nc * nr);
            }
        }
        total += 10.0 * s / 4.0;
    }
    total / big_n
}

pub const FIXTURE: [(&str, &str); 12] = [
    ("the cat sat on the mat", "the cat sat on a mat there"),
    ("a red barn at sunset", "our red barn at sunset with clouds"),
    ("b a", "a b"),
    ("a c d", "a b c d"),
    ("a dog runs in the park", "a dog runs in the park"),
    ("two people hold a sign", "a sign held by two people"),
    ("the the the the", "the cat"),
    ("photo of a bridge over water", "a bridge over calm water at night"),
    ("x y z", "p q r"),
    (
        "screenshot of a tweet about cats and dogs",
        "a tweet about dogs and cats",
    ),
    ("a a b b a", "b a a b"),
    (
        "map of the city center with streets",
        "city center map showing main streets and the river",
    ),
];

pub fn fixture_pairs() -> Vec<EvalPair> {
    FIXTURE.iter().map(|(c, r)| pair(c, r)).collect()
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<EvalPair> {
    let words = ["a", "b", "c", "d", "e"];
    let sent = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(1..=7);
        (0..len)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    (0..n).map(|_| pair(&sent(rng), &sent(rng))).collect()
}

/// Context-dependent random logits: each distinct prefix seeds its own draw.
pub struct TableLm {
    pub vocab: usize,
    pub seed: u64,
    pub scale: f64,
}

impl LanguageModel for TableLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_logits(&self, generated: &[u32]) -> Vec<f64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for &t in generated {
            h = (h ^ (t as u64 + 1)).wrapping_mul(0x100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..self.vocab)
            .map(|_| rng.gen_range(-self.scale..self.scale))
            .collect()
    }
}

pub fn log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - z).collect()
}

/// Scores of every sequence of length 1..=max_len that does not continue
/// past an EOS.
pub fn enumerate_sequences<M: LanguageModel>(model: &M, max_len: usize) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut frontier = vec![(Vec::new(), 0.0)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (seq, score) in &frontier {
            let lp = log_probs(&model.next_logits(seq));
            for (t, v) in lp.iter().enumerate() {
                let mut s: Vec<u32> = seq.clone();
                s.push(t as u32);
                out.push((s.clone(), score + v));
                if t as u32 != EOS {
                    next.push((s, score + v));
                }
            }
        }
        frontier = next;
    }
    out
}

/// Sequences a decoder may return: EOS-terminated, or of length `max_len`.
pub fn complete_sequences(all: &[(Vec<u32>, f64)], max_len: usize) -> Vec<(Vec<u32>, f64)> {
    all.iter()
        .filter(|(s, _)| s.last() == Some(&EOS) || s.len() == max_len)
        .cloned()
        .collect()
}

pub fn rank(list: &mut [(Vec<u32>, f64)]) {
    list.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
}

/// Beam search replayed over the enumerated score table.
pub fn oracle_beam(all: &[(Vec<u32>, f64)], beam: usize, max_len: usize) -> Vec<(Vec<u32>, f64)> {
    let table: HashMap<&[u32], f64> = all.iter().map(|(s, v)| (s.as_slice(), *v)).collect();
    let mut live: Vec<Vec<u32>> = vec![Vec::new()];
    let mut finished = Vec::new();
    for _ in 0..max_len {
        let mut exp: Vec<(Vec<u32>, f64)> = Vec::new();
        for seq in &live {
            for (s, v) in all
                .iter()
                .filter(|(s, _)| s.len() == seq.len() + 1 && s.starts_with(seq))
            {
                exp.push((s.clone(), *v));
            }
        }
        rank(&mut exp);
        exp.truncate(beam);
        live.clear();
        for (s, v) in exp {
            if s.last() == Some(&EOS) {
                finished.push((s, v));
            } else {
                live.push(s);
            }
        }
    }
    finished.extend(live.into_iter().map(|s| {
        let v = table[s.as_slice()];
        (s, v)
    }));
    rank(&mut finished);
    finished.truncate(beam);
    finished
}

pub fn has_repeated_trigram(ids: &[u32]) -> bool {
    let mut seen = std::collections::HashSet::new();
    ids.windows(3).any(|w| !seen.insert(w.to_vec()))
}

pub fn oracle_diff(a: &Thumbnail, b: &Thumbnail, tolerance: u8) -> u32 {
    a.pixels
        .iter()
        .zip(b.pixels.iter())
        .filter(|(x, y)| (**x as i32 - **y as i32).unsigned_abs() > tolerance as u32)
        .count() as u32
}

/// Connected components of the "diff < threshold" graph by pairwise scan
/// and depth-first search, as sorted lists of sorted member IDs.
pub fn oracle_components(thumbs: &[Thumbnail], threshold: u32, tolerance: u8) -> Vec<Vec<String>> {
    let n = thumbs.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if oracle_diff(&thumbs[i], &thumbs[j], tolerance) < threshold {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut stack = vec![s];
        seen[s] = true;
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(thumbs[v].image_id.clone());
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out.sort();
    out
}

/// Families of thumbnails: random bases, each copied with a random number of
/// pixels changed so pairwise diffs straddle the usual thresholds.
pub fn thumbnail_families(seed: u64, n: usize, families: usize) -> Vec<Thumbnail> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<Vec<u8>> = (0..families)
        .map(|_| (0..THUMB_PIXELS).map(|_| rng.gen()).collect())
        .collect();
    (0..n)
        .map(|i| {
            let mut px = bases[rng.gen_range(0..families)].clone();
            let flips = rng.gen_range(0..300);
            for _ in 0..flips {
                let k = rng.gen_range(0..THUMB_PIXELS);
                px[k] = px[k].wrapping_add(rng.gen_range(1..=255));
            }
            let arr: [u8; THUMB_PIXELS] = px.try_into().unwrap();
            Thumbnail::from_pixels(format!("img{i:04}"), arr, rng.gen_range(0..1_000_000))
        })
        .collect()
}
