use std::collections::BTreeMap;

/// Above this many subset combinations the alignment falls back to pairing
/// the leftmost occurrences of each word.
const SEARCH_LIMIT: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    /// Aligned `(candidate index, reference index)` pairs in candidate order.
    pub alignment: Vec<(usize, usize)>,
}

/// Exact-match METEOR: maximal one-to-one unigram alignment with the fewest
/// crossings (ties: lexicographically smallest pair list),
/// `F = 10PR / (R + 9P)`, fragmentation penalty `0.5 (chunks/m)³`.
pub fn meteor(candidate: &[String], reference: &[String]) -> f64 {
    let stats = meteor_stats(candidate, reference);
    let m = stats.matches as f64;
    if stats.matches == 0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (stats.chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor_stats(candidate: &[String], reference: &[String]) -> MeteorStats {
    let alignment = align(candidate, reference);
    MeteorStats {
        matches: alignment.len(),
        chunks: count_chunks(&alignment),
        alignment,
    }
}

pub(crate) fn count_chunks(sorted: &[(usize, usize)]) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    1 + sorted
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub(crate) fn crossings(sorted: &[(usize, usize)]) -> usize {
    let mut n = 0;
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if sorted[j].1 < sorted[i].1 {
                n += 1;
            }
        }
    }
    n
}

/// Per word type: the positions on each side and which subsets of the longer
/// side can be matched.
struct TypeChoice {
    cand: Vec<usize>,
    refs: Vec<usize>,
    subsets: Vec<Vec<usize>>,
}

impl TypeChoice {
    /// Pairs for one subset choice, matched in order (in-order matching within
    /// a word never adds crossings).
    fn pairs(&self, subset: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
        let pick = subset.to_vec();
        let cand_longer = self.cand.len() > self.refs.len();
        (0..pick.len()).map(move |k| {
            if cand_longer {
                (self.cand[pick[k]], self.refs[k])
            } else {
                (self.cand[k], self.refs[pick[k]])
            }
        })
    }
}

fn combinations(n: usize, k: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, limit: usize) -> bool {
        if cur.len() == k {
            out.push(cur.clone());
            return out.len() <= limit;
        }
        for i in start..=n - (k - cur.len()) {
            cur.push(i);
            if !rec(i + 1, n, k, cur, out, limit) {
                return false;
            }
            cur.pop();
        }
        true
    }
    rec(0, n, k, &mut cur, &mut out, limit).then_some(out)
}

fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut by_word: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, w) in candidate.iter().enumerate() {
        by_word.entry(w).or_default().0.push(i);
    }
    for (j, w) in reference.iter().enumerate() {
        by_word.entry(w).or_default().1.push(j);
    }
    let mut fixed = Vec::new();
    let mut choices = Vec::new();
    let mut space = 1usize;
    for (_, (cand, refs)) in by_word {
        let m = cand.len().min(refs.len());
        if m == 0 {
            continue;
        }
        let longer = cand.len().max(refs.len());
        if longer == m {
            fixed.extend(cand.iter().copied().zip(refs.iter().copied()));
            continue;
        }
        let subsets = combinations(longer, m, SEARCH_LIMIT);
        match subsets {
            Some(subsets) if space.saturating_mul(subsets.len()) <= SEARCH_LIMIT => {
                space *= subsets.len();
                choices.push(TypeChoice { cand, refs, subsets });
            }
            _ => {
                let leftmost: Vec<usize> = (0..m).collect();
                let t = TypeChoice {
                    cand,
                    refs,
                    subsets: Vec::new(),
                };
                fixed.extend(t.pairs(&leftmost));
            }
        }
    }

    let mut best: Option<(usize, Vec<(usize, usize)>)> = None;
    let mut idx = vec![0usize; choices.len()];
    loop {
        let mut pairs = fixed.clone();
        for (c, &i) in choices.iter().zip(&idx) {
            pairs.extend(c.pairs(&c.subsets[i]));
        }
        pairs.sort_unstable();
        let key = crossings(&pairs);
        let better = match &best {
            None => true,
            Some((k, p)) => key < *k || (key == *k && pairs < *p),
        };
        if better {
            best = Some((key, pairs));
        }
        // Odometer over subset choices.
        let mut pos = 0;
        loop {
            if pos == choices.len() {
                return best.map(|(_, p)| p).unwrap_or_default();
            }
            idx[pos] += 1;
            if idx[pos] < choices[pos].subsets.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}
