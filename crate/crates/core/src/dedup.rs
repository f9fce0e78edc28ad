//! Exact alt-text and visual near-duplicate removal.
//!
//! Visual matching compares 32×32 grayscale thumbnails pixel by pixel. Two
//! images are linked when fewer than `threshold` positions differ; clusters are
//! the connected components of that graph and only the oldest image of each
//! cluster survives.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::corpus::Sample;
use crate::raster::{square_luma, Raster};

pub const THUMB_SIDE: usize = 32;
pub const THUMB_PIXELS: usize = THUMB_SIDE * THUMB_SIDE;
pub const DEFAULT_THRESHOLD: u32 = 100;
const CACHE_MAGIC: &[u8; 4] = b"ATTH";

/// Number of row bands used by the lossless pair prefilter.
const BANDS: usize = 16;
const BAND_PIXELS: usize = THUMB_PIXELS / BANDS;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("no thumbnail for image {0}")]
    MissingThumbnail(String),
    #[error("thumbnail cache: bad magic")]
    BadMagic,
    #[error("thumbnail cache: id is not valid UTF-8")]
    BadId,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thumbnail {
    pub image_id: String,
    pub pixels: Box<[u8; THUMB_PIXELS]>,
    pub created_at: i64,
}

impl Thumbnail {
    pub fn from_pixels(image_id: impl Into<String>, pixels: [u8; THUMB_PIXELS], created_at: i64) -> Self {
        Self {
            image_id: image_id.into(),
            pixels: Box::new(pixels),
            created_at,
        }
    }

    fn band_sums(&self) -> [u32; BANDS] {
        let mut sums = [0u32; BANDS];
        for (b, chunk) in self.pixels.chunks_exact(BAND_PIXELS).enumerate() {
            sums[b] = chunk.iter().map(|&p| p as u32).sum();
        }
        sums
    }
}

/// Shorter side scaled to 32 (bilinear), center crop, luma grayscale.
pub fn thumbnail(image: &Raster, image_id: impl Into<String>, created_at: i64) -> Thumbnail {
    let grid = square_luma(image, THUMB_SIDE as u32);
    let mut pixels = [0u8; THUMB_PIXELS];
    pixels.copy_from_slice(&grid);
    Thumbnail::from_pixels(image_id, pixels, created_at)
}

/// Count of positions whose absolute difference exceeds `tolerance`.
pub fn pixel_diff(a: &Thumbnail, b: &Thumbnail, tolerance: u8) -> u32 {
    a.pixels
        .iter()
        .zip(b.pixels.iter())
        .filter(|(&x, &y)| x.abs_diff(y) > tolerance)
        .count() as u32
}

/// Clustering parameters.
#[derive(Debug, Clone, Copy)]
pub struct ClusterConfig {
    /// Pairs with strictly fewer differing pixels are linked.
    pub threshold: u32,
    /// Per-pixel tolerance; 0 means any inequality counts.
    pub tolerance: u8,
    /// Skip pairs that a band-sum lower bound proves cannot link.
    pub prefilter: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            tolerance: 0,
            prefilter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    /// Members as image IDs, each cluster in input order; clusters ordered by
    /// their first member's input position.
    pub clusters: Vec<Vec<String>>,
    /// Oldest member of each cluster, parallel to `clusters`.
    pub survivors: Vec<String>,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Lower bound on the number of differing positions implied by band sums.
///
/// Within a band, each position that stays within `tolerance` moves the sum
/// by at most `tolerance`, and each differing position by at most 255.
fn diff_lower_bound(a: &[u32; BANDS], b: &[u32; BANDS], tolerance: u8) -> u32 {
    let slack = BAND_PIXELS as u32 * tolerance as u32;
    let mut bound = 0;
    for i in 0..BANDS {
        let gap = a[i].abs_diff(b[i]);
        if gap > slack {
            let excess = gap - slack;
            // Each differing pixel changes by at most 255 - tolerance beyond the slack.
            let per = (255 - tolerance as u32).max(1);
            bound += excess.div_ceil(per);
        }
    }
    bound
}

/// Connected-component representative of each of `n` nodes under `linked`,
/// checked over all pairs.
pub(crate) fn components(n: usize, linked: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if linked(i, j) {
                uf.union(i, j);
            }
        }
    }
    (0..n).map(|i| uf.find(i)).collect()
}

/// Single-linkage clustering under the strict `< threshold` rule.
///
/// With the prefilter on, thumbnails are sorted by total intensity and only
/// pairs whose totals are close enough to possibly link are examined; each
/// candidate pair is then screened by a per-band lower bound before the exact
/// diff. Both screens are lower bounds, so the result is identical to the
/// full pairwise scan.
pub fn cluster_images(thumbs: &[Thumbnail], config: &ClusterConfig) -> ClusterSet {
    assert!(config.threshold >= 1, "threshold must be at least 1");
    let n = thumbs.len();
    let mut uf = UnionFind::new(n);
    let linked = |i: usize, j: usize| pixel_diff(&thumbs[i], &thumbs[j], config.tolerance) < config.threshold;

    if config.prefilter {
        let bands: Vec<[u32; BANDS]> = thumbs.iter().map(Thumbnail::band_sums).collect();
        let totals: Vec<u32> = bands.iter().map(|b| b.iter().sum()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (totals[i], i));
        // Total-sum gap reachable with at most threshold-1 differing pixels.
        let linked_max = u64::from(config.threshold - 1).min(THUMB_PIXELS as u64);
        let max_gap = linked_max * 255 + (THUMB_PIXELS as u64 - linked_max) * u64::from(config.tolerance);
        for (pos, &i) in order.iter().enumerate() {
            for &j in &order[pos + 1..] {
                if u64::from(totals[j] - totals[i]) > max_gap {
                    break;
                }
                if diff_lower_bound(&bands[i], &bands[j], config.tolerance) >= config.threshold {
                    continue;
                }
                if linked(i, j) {
                    uf.union(i, j);
                }
            }
        }
    } else {
        for (i, root) in components(n, linked).into_iter().enumerate() {
            uf.union(i, root);
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut first_seen: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let root = uf.find(i);
        let members = groups.entry(root).or_default();
        if members.is_empty() {
            first_seen.push((i, root));
        }
        members.push(i);
    }
    let mut set = ClusterSet {
        clusters: Vec::with_capacity(first_seen.len()),
        survivors: Vec::with_capacity(first_seen.len()),
    };
    for (_, root) in first_seen {
        let members = &groups[&root];
        let oldest = members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                (thumbs[a].created_at, &thumbs[a].image_id).cmp(&(thumbs[b].created_at, &thumbs[b].image_id))
            })
            .expect("non-empty cluster");
        set.survivors.push(thumbs[oldest].image_id.clone());
        set.clusters
            .push(members.iter().map(|&m| thumbs[m].image_id.clone()).collect());
    }
    set
}

/// Keeps the oldest sample (ties: smallest image ID) of each group of
/// byte-identical alt-texts; survivors stay in input order.
pub fn dedup_exact_alt(samples: &[Sample]) -> Vec<Sample> {
    let mut best: HashMap<&str, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        best.entry(s.alt_text.as_str())
            .and_modify(|cur| {
                let c = &samples[*cur];
                if (s.created_at, &s.image_id) < (c.created_at, &c.image_id) {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    let mut keep = vec![false; samples.len()];
    for &i in best.values() {
        keep[i] = true;
    }
    samples
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Exact alt-text dedup followed by visual clustering; keeps one sample per
/// visual cluster, in input order.
pub fn dedup_visual(
    samples: &[Sample],
    thumbnails: &HashMap<String, Thumbnail>,
    config: &ClusterConfig,
) -> Result<Vec<Sample>, DedupError> {
    let unique = dedup_exact_alt(samples);
    let thumbs = unique
        .iter()
        .map(|s| {
            thumbnails
                .get(&s.image_id)
                .map(|t| Thumbnail {
                    created_at: s.created_at,
                    ..t.clone()
                })
                .ok_or_else(|| DedupError::MissingThumbnail(s.image_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let clusters = cluster_images(&thumbs, config);
    let survivors: std::collections::HashSet<&str> = clusters.survivors.iter().map(String::as_str).collect();
    Ok(unique
        .into_iter()
        .filter(|s| survivors.contains(s.image_id.as_str()))
        .collect())
}

pub fn write_thumbnails<W: Write>(mut w: W, thumbs: &[Thumbnail]) -> io::Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(thumbs.len() as u32).to_le_bytes())?;
    for t in thumbs {
        let id = t.image_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "image id longer than 65535 bytes"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(t.created_at as u64).to_le_bytes())?;
        w.write_all(&t.pixels[..])?;
    }
    Ok(())
}

pub fn read_thumbnails<R: Read>(mut r: R) -> Result<Vec<Thumbnail>, DedupError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(DedupError::BadMagic);
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let count = u32::from_le_bytes(u32b) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut u16b = [0u8; 2];
        r.read_exact(&mut u16b)?;
        let mut id = vec![0u8; u16::from_le_bytes(u16b) as usize];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| DedupError::BadId)?;
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let mut pixels = [0u8; THUMB_PIXELS];
        r.read_exact(&mut pixels)?;
        out.push(Thumbnail::from_pixels(id, pixels, u64::from_le_bytes(u64b) as i64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thumb(id: &str, t: i64, pixels: [u8; THUMB_PIXELS]) -> Thumbnail {
        Thumbnail::from_pixels(id, pixels, t)
    }

    fn with_changes(base: [u8; THUMB_PIXELS], n: usize, offset: usize) -> [u8; THUMB_PIXELS] {
        let mut p = base;
        for k in 0..n {
            let i = (offset + k) % THUMB_PIXELS;
            p[i] = p[i].wrapping_add(1);
        }
        p
    }

    fn sample(id: &str, t: i64, alt: &str) -> Sample {
        Sample {
            tweet_id: format!("tw-{id}"),
            image_id: id.into(),
            created_at: t,
            tweet_text: "tweet".into(),
            alt_text: alt.into(),
            path: String::new(),
        }
    }

    #[test]
    fn thumbnail_of_thumbnail_sized_gray_is_identity() {
        let gray: Vec<u8> = (0..THUMB_PIXELS).map(|i| (i % 251) as u8).collect();
        let img = Raster::from_gray(32, 32, &gray).unwrap();
        assert_eq!(&thumbnail(&img, "x", 0).pixels[..], &gray[..]);
    }

    #[test]
    fn thumbnail_constant_color() {
        let img = Raster::filled(64, 64, [90, 90, 90]).unwrap();
        assert!(thumbnail(&img, "x", 0).pixels.iter().all(|&p| p == 90));
    }

    #[test]
    fn thumbnail_two_band_transition_at_midline() {
        // 64 wide, 32 tall: no scaling, center crop keeps columns 16..48.
        let mut img = Raster::filled(64, 32, [0, 0, 0]).unwrap();
        for y in 0..32 {
            for x in 32..64 {
                img.set_pixel(x, y, [255, 255, 255]);
            }
        }
        let t = thumbnail(&img, "x", 0);
        for y in 0..32 {
            for x in 0..32 {
                let expected = if x < 16 { 0 } else { 255 };
                assert_eq!(t.pixels[y * 32 + x], expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn diff_basics() {
        let a = thumb("a", 0, [7; THUMB_PIXELS]);
        let b = thumb("b", 0, with_changes([7; THUMB_PIXELS], 7, 100));
        assert_eq!(pixel_diff(&a, &a, 0), 0);
        assert_eq!(pixel_diff(&a, &b, 0), 7);
        assert_eq!(pixel_diff(&b, &a, 0), 7);
        // Changes of 1 fall inside a tolerance of 1.
        assert_eq!(pixel_diff(&a, &b, 1), 0);
    }

    #[test]
    fn three_identical_one_cluster_oldest_survives() {
        let p = [3; THUMB_PIXELS];
        let ts = vec![thumb("x", 30, p), thumb("y", 10, p), thumb("z", 20, p)];
        let c = cluster_images(&ts, &ClusterConfig::default());
        assert_eq!(c.clusters, vec![vec!["x".to_string(), "y".into(), "z".into()]]);
        assert_eq!(c.survivors, vec!["y".to_string()]);
    }

    #[test]
    fn transitive_chain_links() {
        let a = [0u8; THUMB_PIXELS];
        let b = with_changes(a, 50, 0);
        let c = with_changes(b, 50, 50);
        let ts = vec![thumb("a", 1, a), thumb("b", 2, b), thumb("c", 3, c)];
        assert_eq!(pixel_diff(&ts[0], &ts[1], 0), 50);
        assert_eq!(pixel_diff(&ts[1], &ts[2], 0), 50);
        // Not linked directly (100 is not < 100), only through b.
        assert_eq!(pixel_diff(&ts[0], &ts[2], 0), 100);
        let set = cluster_images(&ts, &ClusterConfig::default());
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.survivors, vec!["a".to_string()]);
    }

    #[test]
    fn components_on_abstract_diff_graph() {
        // A-B 50, B-C 50, A-C 400.
        let d = [[0, 50, 400], [50, 0, 50], [400, 50, 0]];
        let roots = components(3, |i, j| d[i][j] < 100);
        assert_eq!(roots[0], roots[1]);
        assert_eq!(roots[1], roots[2]);
        let roots = components(3, |i, j| d[i][j] < 50);
        assert!(roots[0] != roots[1] && roots[1] != roots[2] && roots[0] != roots[2]);
    }

    #[test]
    fn strict_threshold_boundary() {
        let base = [10u8; THUMB_PIXELS];
        let ts = vec![thumb("a", 1, base), thumb("b", 2, with_changes(base, 100, 0))];
        for prefilter in [true, false] {
            let cfg = ClusterConfig {
                prefilter,
                ..Default::default()
            };
            assert_eq!(cluster_images(&ts, &cfg).clusters.len(), 2);
        }
        let ts = vec![thumb("a", 1, base), thumb("b", 2, with_changes(base, 99, 0))];
        assert_eq!(cluster_images(&ts, &ClusterConfig::default()).clusters.len(), 1);
    }

    #[test]
    fn exact_alt_dedup() {
        let s = vec![sample("b", 20, "same alt"), sample("a", 10, "same alt")];
        let out = dedup_exact_alt(&s);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].created_at, 10);

        let s = vec![sample("x", 1, "one"), sample("y", 1, "two")];
        assert_eq!(dedup_exact_alt(&s), s);

        let s = vec![sample("b", 5, "dup"), sample("a", 5, "dup"), sample("c", 9, "dup")];
        let out = dedup_exact_alt(&s);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].image_id, "a");
    }

    #[test]
    fn visual_dedup_keeps_older_repost() {
        let s = vec![
            sample("new", 50, "repost caption"),
            sample("old", 5, "original caption"),
        ];
        let mut thumbs = HashMap::new();
        thumbs.insert("new".to_string(), thumb("new", 0, [1; THUMB_PIXELS]));
        thumbs.insert("old".to_string(), thumb("old", 0, [1; THUMB_PIXELS]));
        let out = dedup_visual(&s, &thumbs, &ClusterConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].image_id, "old");
    }

    #[test]
    fn visual_dedup_missing_thumbnail() {
        let s = vec![sample("a", 1, "some alt")];
        let err = dedup_visual(&s, &HashMap::new(), &ClusterConfig::default()).unwrap_err();
        assert!(matches!(err, DedupError::MissingThumbnail(id) if id == "a"));
    }

    #[test]
    fn cache_roundtrip_and_bad_magic() {
        let ts = vec![
            thumb("a", 12, with_changes([0; THUMB_PIXELS], 5, 3)),
            thumb("ünïcode", -4, [255; THUMB_PIXELS]),
        ];
        let mut buf = Vec::new();
        write_thumbnails(&mut buf, &ts).unwrap();
        assert_eq!(&buf[..4], b"ATTH");
        assert_eq!(read_thumbnails(&buf[..]).unwrap(), ts);
        buf[0] = b'X';
        assert!(matches!(read_thumbnails(&buf[..]), Err(DedupError::BadMagic)));
    }
}
