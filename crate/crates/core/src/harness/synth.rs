//! Synthetic tweets whose alt-text needs both the image class (visible only
//! in the glyph image) and a topic word (present only in the tweet text).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{RawImage, RawRecord};
use crate::raster::Raster;

const CLASS_NAMES: [&str; 8] = [
    "checkered",
    "striped",
    "barred",
    "diagonal",
    "cross",
    "ring",
    "block",
    "dotted",
];
const ATTRIBUTE_WORDS: [&str; 16] = [
    "coffee", "rain", "music", "garden", "travel", "sunday", "friends", "work", "beach", "winter", "dinner", "books",
    "soccer", "movies", "baking", "hiking",
];
const TWEET_TEMPLATES: [&str; 4] = [
    "thinking about {} again today",
    "so much {} this week honestly",
    "new post on {} for everyone",
    "cannot stop loving {} lately",
];
const GRID: u32 = 8;
/// Epoch seconds of the first synthetic tweet.
const BASE_TIME: i64 = 1_600_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_image_classes: usize,
    pub n_text_attributes: usize,
    pub seed: u64,
    /// Side length in pixels; a multiple of 8 keeps glyph cells square.
    pub image_size: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            n_image_classes: 8,
            n_text_attributes: 8,
            seed: 0,
            image_size: 32,
        }
    }
}

/// One generated sample's image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthImage {
    pub image_id: String,
    pub class: usize,
    pub attribute: usize,
    pub raster: Raster,
}

pub fn class_name(class: usize) -> String {
    CLASS_NAMES
        .get(class)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("glyph{class}"))
}

pub fn attribute_word(attr: usize) -> String {
    ATTRIBUTE_WORDS
        .get(attr)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("topic{attr}"))
}

pub fn alt_text(class: usize, attr: usize) -> String {
    format!("a {} pattern about {}", class_name(class), attribute_word(attr))
}

/// 8×8 on/off glyph of an image class.
fn glyph(class: usize) -> [[bool; GRID as usize]; GRID as usize] {
    let mut g = [[false; GRID as usize]; GRID as usize];
    let mut extra_rng = ChaCha8Rng::seed_from_u64(0xC1A55 + class as u64);
    for (r, row) in g.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = match class {
                0 => (r + c) % 2 == 0,
                1 => r % 2 == 0,
                2 => c % 2 == 0,
                3 => r.abs_diff(c) <= 1,
                4 => r == 3 || r == 4 || c == 3 || c == 4,
                5 => (1..=6).contains(&r) && (1..=6).contains(&c) && (r == 1 || r == 6 || c == 1 || c == 6),
                6 => (2..=5).contains(&r) && (2..=5).contains(&c),
                7 => r % 3 == 1 && c % 3 == 1,
                _ => extra_rng.gen_bool(0.5),
            };
        }
    }
    g
}

fn render(class: usize, size: u32, rng: &mut ChaCha8Rng) -> Raster {
    let g = glyph(class);
    let mut img = Raster::filled(size, size, [0, 0, 0]).expect("positive size");
    for y in 0..size {
        for x in 0..size {
            let on = g[(y * GRID / size) as usize][(x * GRID / size) as usize];
            let base: i32 = if on { 220 } else { 35 };
            let v = (base + rng.gen_range(-12..=12)).clamp(0, 255) as u8;
            img.set_pixel(x, y, [v, v, v]);
        }
    }
    img
}

/// Generates images and raw records; identical specs give identical output.
pub fn synth_dataset(spec: &SynthSpec) -> (Vec<SynthImage>, Vec<RawRecord>) {
    assert!(spec.n_image_classes >= 2 && spec.n_text_attributes >= 2);
    assert!(spec.image_size >= GRID);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(spec.n_samples);
    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let class = rng.gen_range(0..spec.n_image_classes);
        let attr = rng.gen_range(0..spec.n_text_attributes);
        let template = TWEET_TEMPLATES.choose(&mut rng).expect("templates");
        let tweet = template.replace("{}", &attribute_word(attr));
        let image_id = format!("img{i:06}");
        let raster = render(class, spec.image_size, &mut rng);
        records.push(RawRecord {
            tweet_id: format!("tw{i:06}"),
            created_at: BASE_TIME + i as i64,
            tweet_text: tweet,
            images: vec![RawImage {
                image_id: image_id.clone(),
                path_or_url: format!("images/{image_id}.png"),
                alt_text: alt_text(class, attr),
                person_spans: Vec::new(),
            }],
        });
        images.push(SynthImage {
            image_id,
            class,
            attribute: attr,
            raster,
        });
    }
    (images, records)
}
