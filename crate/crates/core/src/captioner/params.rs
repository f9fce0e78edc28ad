use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Offsets of one decoder block's tensors. Linear weights are stored
/// input-major (`in × out`).
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

/// Flat parameter vector layout, in declaration order: mapping network,
/// token and position embeddings, blocks, final norm.
#[derive(Debug, Clone)]
pub struct Layout {
    pub map_w1: Range<usize>,
    pub map_b1: Range<usize>,
    pub map_w2: Range<usize>,
    pub map_b2: Range<usize>,
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    /// Present only when the model has at least one block.
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
    inits: Vec<(Range<usize>, Init)>,
}

struct Builder {
    next: usize,
    inits: Vec<(Range<usize>, Init)>,
}

impl Builder {
    fn take(&mut self, len: usize, init: Init) -> Range<usize> {
        let r = self.next..self.next + len;
        self.next += len;
        self.inits.push((r.clone(), init));
        r
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let h = cfg.mapper_hidden();
        let mut b = Builder {
            next: 0,
            inits: Vec::new(),
        };
        let map_w1 = b.take(cfg.d_enc * h, Init::Normal);
        let map_b1 = b.take(h, Init::Zeros);
        let map_w2 = b.take(h * cfg.k * d, Init::Normal);
        let map_b2 = b.take(cfg.k * d, Init::Zeros);
        let wte = b.take(cfg.vocab_size * d, Init::Normal);
        let wpe = b.take(cfg.max_seq_len * d, Init::Normal);
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockLayout {
                ln1_g: b.take(d, Init::Ones),
                ln1_b: b.take(d, Init::Zeros),
                w_qkv: b.take(d * 3 * d, Init::Normal),
                b_qkv: b.take(3 * d, Init::Zeros),
                w_o: b.take(d * d, Init::Normal),
                b_o: b.take(d, Init::Zeros),
                ln2_g: b.take(d, Init::Ones),
                ln2_b: b.take(d, Init::Zeros),
                w_fc: b.take(d * cfg.d_ff, Init::Normal),
                b_fc: b.take(cfg.d_ff, Init::Zeros),
                w_proj: b.take(cfg.d_ff * d, Init::Normal),
                b_proj: b.take(d, Init::Zeros),
            })
            .collect();
        let final_len = if cfg.n_layers > 0 { d } else { 0 };
        let lnf_g = b.take(final_len, Init::Ones);
        let lnf_b = b.take(final_len, Init::Zeros);
        Self {
            map_w1,
            map_b1,
            map_w2,
            map_b2,
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            total: b.next,
            inits: b.inits,
        }
    }

    /// Range of the mapping network's parameters.
    pub fn mapper(&self) -> Range<usize> {
        self.map_w1.start..self.map_b2.end
    }

    /// Weights N(0, 0.02), biases 0, layer-norm gains 1.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut p = vec![0.0; self.total];
        for (range, init) in &self.inits {
            match init {
                Init::Normal => p[range.clone()].iter_mut().for_each(|v| *v = normal.sample(&mut rng)),
                Init::Zeros => {}
                Init::Ones => p[range.clone()].iter_mut().for_each(|v| *v = 1.0),
            }
        }
        p
    }
}
