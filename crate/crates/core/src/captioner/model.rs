//! Forward and backward passes of the mapping network and the pre-norm
//! decoder, over one sequence at a time.

use rand::Rng;

use super::{CaptionerError, Layout, ModelConfig};
use crate::tokenizer::{BOS, EOS, PAD};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `k × d_model` output of the mapping network.
pub type PrefixMatrix = Matrix;

/// Origin of one input row, used to route gradients back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSource {
    Prefix(usize),
    Token(u32),
}

/// Embedded decoder input with next-token targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `T × d_model`, position embeddings already added.
    pub embedded: Matrix,
    pub sources: Vec<RowSource>,
    /// Target at each position; [`PAD`] where the mask is off.
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn mask_sum(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x W + b` for each row of `x`, with `W` stored `n_in × n_out`.
fn linear(x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len() / n_in * n_out);
    for row in x.chunks_exact(n_in) {
        let start = y.len();
        y.extend_from_slice(b);
        let out = &mut y[start..];
        for (i, &xi) in row.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &w[i * n_out..(i + 1) * n_out], out);
            }
        }
    }
    y
}

/// Accumulates parameter gradients of [`linear`] and, when `dx` is given,
/// the input gradient.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    n_in: usize,
    n_out: usize,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for (t, (dyr, xr)) in dy.chunks_exact(n_out).zip(x.chunks_exact(n_in)).enumerate() {
        axpy(1.0, dyr, db);
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * n_out..(i + 1) * n_out];
            if xi != 0.0 {
                axpy(xi, dyr, &mut dw[i * n_out..(i + 1) * n_out]);
            }
            if let Some(dx) = dx.as_deref_mut() {
                dx[t * n_in + i] += dot(dyr, wr);
            }
        }
    }
}

struct Norm {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> (Vec<f64>, Norm) {
    let t = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; t];
    for r in 0..t {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for i in 0..d {
            let h = (row[i] - mean) * s;
            xhat[r * d + i] = h;
            out[r * d + i] = h * g[i] + b[i];
        }
    }
    (out, Norm { xhat, rstd })
}

fn layer_norm_backward(dout: &[f64], norm: &Norm, g: &[f64], d: usize, dx: &mut [f64], dg: &mut [f64], db: &mut [f64]) {
    let t = dout.len() / d;
    let mut dxhat = vec![0.0; d];
    for r in 0..t {
        let dor = &dout[r * d..(r + 1) * d];
        let xh = &norm.xhat[r * d..(r + 1) * d];
        for i in 0..d {
            dg[i] += dor[i] * xh[i];
            db[i] += dor[i];
            dxhat[i] = dor[i] * g[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        let s = norm.rstd[r];
        for i in 0..d {
            dx[r * d + i] += s * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Causal multi-head attention over packed `[q | k | v]` rows.
/// Returns head outputs (`T × d`) and probabilities (`H × T × T`).
fn attention(qkv: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut y = vec![0.0; t * d];
    let mut probs = vec![0.0; heads * t * t];
    for h in 0..heads {
        for i in 0..t {
            let q = &qkv[i * 3 * d + h * hd..i * 3 * d + (h + 1) * hd];
            let p = &mut probs[(h * t + i) * t..(h * t + i) * t + t];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let k = &qkv[j * 3 * d + d + h * hd..j * 3 * d + d + (h + 1) * hd];
                p[j] = dot(q, k) * scale;
                max = max.max(p[j]);
            }
            let mut sum = 0.0;
            for pj in p[..=i].iter_mut() {
                *pj = (*pj - max).exp();
                sum += *pj;
            }
            let out = &mut y[i * d + h * hd..i * d + (h + 1) * hd];
            for j in 0..=i {
                p[j] /= sum;
                let v = &qkv[j * 3 * d + 2 * d + h * hd..j * 3 * d + 2 * d + (h + 1) * hd];
                axpy(p[j], v, out);
            }
        }
    }
    (y, probs)
}

fn attention_backward(dy: &[f64], qkv: &[f64], probs: &[f64], t: usize, d: usize, heads: usize) -> Vec<f64> {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dqkv = vec![0.0; t * 3 * d];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        for i in 0..t {
            let p = &probs[(h * t + i) * t..(h * t + i) * t + t];
            let dyi = &dy[i * d + h * hd..i * d + (h + 1) * hd];
            let mut weighted = 0.0;
            for j in 0..=i {
                let vo = j * 3 * d + 2 * d + h * hd;
                dp[j] = dot(dyi, &qkv[vo..vo + hd]);
                weighted += p[j] * dp[j];
                axpy(p[j], dyi, &mut dqkv[vo..vo + hd]);
            }
            let qo = i * 3 * d + h * hd;
            for j in 0..=i {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let ko = j * 3 * d + d + h * hd;
                for c in 0..hd {
                    dqkv[qo + c] += ds * qkv[ko + c];
                    dqkv[ko + c] += ds * qkv[qo + c];
                }
            }
        }
    }
    dqkv
}

/// Inverted-dropout scale mask, or `None` when dropout is off.
fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: Option<&mut R>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
    }
}

struct BlockTrace {
    n1: Norm,
    a: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    y: Vec<f64>,
    drop_attn: Option<Vec<f64>>,
    n2: Norm,
    bn: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    drop_mlp: Option<Vec<f64>>,
}

/// Activations kept for the backward pass.
pub(crate) struct Trace {
    t: usize,
    blocks: Vec<BlockTrace>,
    lnf: Option<Norm>,
    /// Final hidden states (`T × d`), the input to the tied output projection.
    pub z: Vec<f64>,
}

pub(crate) struct MapperTrace {
    hidden: Vec<f64>,
}

/// Read-only view of a parameter vector.
#[derive(Clone, Copy)]
pub struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub layout: &'a Layout,
    pub params: &'a [f64],
}

impl<'a> Net<'a> {
    fn p(&self, r: &std::ops::Range<usize>) -> &'a [f64] {
        &self.params[r.clone()]
    }

    /// Mapping MLP `d_enc → h → k·d_model` with a tanh hidden layer; the output
    /// is reshaped row-major into `k` rows.
    pub fn map_prefix(&self, embedding: &[f64]) -> Result<PrefixMatrix, CaptionerError> {
        Ok(self.map_prefix_traced(embedding)?.0)
    }

    pub(crate) fn map_prefix_traced(&self, embedding: &[f64]) -> Result<(PrefixMatrix, MapperTrace), CaptionerError> {
        let cfg = self.cfg;
        if embedding.len() != cfg.d_enc {
            return Err(CaptionerError::DimensionMismatch {
                expected: cfg.d_enc,
                found: embedding.len(),
            });
        }
        let h = cfg.mapper_hidden();
        let l = self.layout;
        let mut hidden = linear(embedding, self.p(&l.map_w1), self.p(&l.map_b1), cfg.d_enc, h);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let out = linear(&hidden, self.p(&l.map_w2), self.p(&l.map_b2), h, cfg.k * cfg.d_model);
        Ok((
            Matrix {
                rows: cfg.k,
                cols: cfg.d_model,
                data: out,
            },
            MapperTrace { hidden },
        ))
    }

    /// Lays out `[prefix] ⊕ [tweet] ⊕ [BOS, alt]` according to the variant,
    /// adds position embeddings, and aligns next-token targets so that the
    /// BOS row predicts the first alt token and the last alt row predicts EOS.
    pub fn build_input(
        &self,
        prefix: Option<&PrefixMatrix>,
        tweet_ids: &[u32],
        alt_ids: &[u32],
    ) -> Result<ModelInput, CaptionerError> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let prefix = if cfg.variant.uses_image() {
            Some(prefix.ok_or(CaptionerError::MissingPrefix)?)
        } else {
            None
        };
        let tweet_ids = if cfg.variant.uses_tweet() { tweet_ids } else { &[] };
        let n_prefix = prefix.map_or(0, |p| p.rows);
        let len = n_prefix + tweet_ids.len() + 1 + alt_ids.len();
        if len > cfg.max_seq_len {
            return Err(CaptionerError::SequenceTooLong {
                len,
                max: cfg.max_seq_len,
            });
        }
        let mut sources = Vec::with_capacity(len);
        sources.extend((0..n_prefix).map(RowSource::Prefix));
        sources.extend(tweet_ids.iter().map(|&id| RowSource::Token(id)));
        sources.push(RowSource::Token(BOS));
        sources.extend(alt_ids.iter().map(|&id| RowSource::Token(id)));

        let wte = self.p(&self.layout.wte);
        let wpe = self.p(&self.layout.wpe);
        let mut embedded = Matrix::zeros(len, d);
        for (t, src) in sources.iter().enumerate() {
            let row = embedded.row_mut(t);
            match *src {
                RowSource::Prefix(r) => row.copy_from_slice(prefix.expect("prefix rows").row(r)),
                RowSource::Token(id) => {
                    let id = id as usize;
                    if id >= cfg.vocab_size {
                        return Err(CaptionerError::TokenOutOfRange(id as u32));
                    }
                    row.copy_from_slice(&wte[id * d..(id + 1) * d]);
                }
            }
            axpy(1.0, &wpe[t * d..(t + 1) * d], row);
        }
        let first_target = len - alt_ids.len() - 1;
        let mut targets = vec![PAD; len];
        let mut mask = vec![false; len];
        for (j, t) in (first_target..len).enumerate() {
            targets[t] = alt_ids.get(j).copied().unwrap_or(EOS);
            mask[t] = true;
        }
        Ok(ModelInput {
            embedded,
            sources,
            targets,
            mask,
        })
    }

    pub(crate) fn forward_trace<R: Rng>(&self, x: &[f64], mut rng: Option<&mut R>) -> Trace {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let t = x.len() / d;
        let mut x = x.to_vec();
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for bl in &self.layout.blocks {
            let (a, n1) = layer_norm(&x, self.p(&bl.ln1_g), self.p(&bl.ln1_b), d);
            let qkv = linear(&a, self.p(&bl.w_qkv), self.p(&bl.b_qkv), d, 3 * d);
            let (y, probs) = attention(&qkv, t, d, cfg.n_heads);
            let mut o = linear(&y, self.p(&bl.w_o), self.p(&bl.b_o), d, d);
            let drop_attn = dropout_mask(o.len(), cfg.dropout, rng.as_deref_mut());
            apply_mask(&mut o, &drop_attn);
            axpy(1.0, &o, &mut x);

            let (bn, n2) = layer_norm(&x, self.p(&bl.ln2_g), self.p(&bl.ln2_b), d);
            let f = linear(&bn, self.p(&bl.w_fc), self.p(&bl.b_fc), d, cfg.d_ff);
            let g: Vec<f64> = f.iter().map(|&v| gelu(v)).collect();
            let mut m = linear(&g, self.p(&bl.w_proj), self.p(&bl.b_proj), cfg.d_ff, d);
            let drop_mlp = dropout_mask(m.len(), cfg.dropout, rng.as_deref_mut());
            apply_mask(&mut m, &drop_mlp);
            axpy(1.0, &m, &mut x);
            blocks.push(BlockTrace {
                n1,
                a,
                qkv,
                probs,
                y,
                drop_attn,
                n2,
                bn,
                f,
                g,
                drop_mlp,
            });
        }
        let (z, lnf) = if cfg.n_layers > 0 {
            let (z, n) = layer_norm(&x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), d);
            (z, Some(n))
        } else {
            (x, None)
        };
        Trace { t, blocks, lnf, z }
    }

    /// Tied output projection of one hidden row.
    pub(crate) fn logits_row(&self, z_row: &[f64]) -> Vec<f64> {
        self.p(&self.layout.wte)
            .chunks_exact(self.cfg.d_model)
            .map(|e| dot(z_row, e))
            .collect()
    }

    /// Logits at every position (`T × vocab_size`).
    pub fn forward(&self, input: &ModelInput) -> Result<Matrix, CaptionerError> {
        self.forward_embedded(&input.embedded)
    }

    pub fn forward_embedded(&self, embedded: &Matrix) -> Result<Matrix, CaptionerError> {
        let trace = self.forward_trace::<rand_chacha::ChaCha8Rng>(&embedded.data, None);
        let v = self.cfg.vocab_size;
        let mut logits = Matrix::zeros(trace.t, v);
        for (t, z) in trace.z.chunks_exact(self.cfg.d_model).enumerate() {
            logits.row_mut(t).copy_from_slice(&self.logits_row(z));
        }
        if logits.data.iter().any(|x| !x.is_finite()) {
            return Err(CaptionerError::NonFiniteActivation);
        }
        Ok(logits)
    }

    /// Backpropagates `dz` (gradient at the final hidden states) through the
    /// blocks, accumulating into `grads`; returns the input gradient.
    pub(crate) fn backward(&self, trace: &Trace, dz: Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let t = trace.t;
        let l = self.layout;
        let mut dx = match &trace.lnf {
            Some(n) => {
                let mut dx = vec![0.0; t * d];
                let (dg, db) = split2(grads, &l.lnf_g, &l.lnf_b);
                layer_norm_backward(&dz, n, self.p(&l.lnf_g), d, &mut dx, dg, db);
                dx
            }
            None => dz,
        };
        for (bl, tr) in l.blocks.iter().zip(&trace.blocks).rev() {
            // MLP branch.
            let mut dm = dx.clone();
            apply_mask(&mut dm, &tr.drop_mlp);
            let mut dg = vec![0.0; t * cfg.d_ff];
            {
                let (dw, db) = split2(grads, &bl.w_proj, &bl.b_proj);
                linear_backward(&dm, &tr.g, self.p(&bl.w_proj), cfg.d_ff, d, Some(&mut dg), dw, db);
            }
            for (g, &f) in dg.iter_mut().zip(&tr.f) {
                *g *= gelu_grad(f);
            }
            let mut dbn = vec![0.0; t * d];
            {
                let (dw, db) = split2(grads, &bl.w_fc, &bl.b_fc);
                linear_backward(&dg, &tr.bn, self.p(&bl.w_fc), d, cfg.d_ff, Some(&mut dbn), dw, db);
            }
            {
                let (dgain, dbias) = split2(grads, &bl.ln2_g, &bl.ln2_b);
                layer_norm_backward(&dbn, &tr.n2, self.p(&bl.ln2_g), d, &mut dx, dgain, dbias);
            }
            // Attention branch.
            let mut dout = dx.clone();
            apply_mask(&mut dout, &tr.drop_attn);
            let mut dy = vec![0.0; t * d];
            {
                let (dw, db) = split2(grads, &bl.w_o, &bl.b_o);
                linear_backward(&dout, &tr.y, self.p(&bl.w_o), d, d, Some(&mut dy), dw, db);
            }
            let dqkv = attention_backward(&dy, &tr.qkv, &tr.probs, t, d, cfg.n_heads);
            let mut da = vec![0.0; t * d];
            {
                let (dw, db) = split2(grads, &bl.w_qkv, &bl.b_qkv);
                linear_backward(&dqkv, &tr.a, self.p(&bl.w_qkv), d, 3 * d, Some(&mut da), dw, db);
            }
            let (dgain, dbias) = split2(grads, &bl.ln1_g, &bl.ln1_b);
            layer_norm_backward(&da, &tr.n1, self.p(&bl.ln1_g), d, &mut dx, dgain, dbias);
        }
        dx
    }

    /// Routes input-row gradients to position and token embeddings; returns
    /// the gradient of the prefix rows.
    pub(crate) fn embed_backward(&self, input: &ModelInput, dx: &[f64], grads: &mut [f64]) -> Matrix {
        let d = self.cfg.d_model;
        let mut dprefix = Matrix::zeros(self.cfg.k, d);
        for (t, src) in input.sources.iter().enumerate() {
            let g = &dx[t * d..(t + 1) * d];
            let wpe = self.layout.wpe.start + t * d;
            axpy(1.0, g, &mut grads[wpe..wpe + d]);
            match *src {
                RowSource::Prefix(r) => axpy(1.0, g, dprefix.row_mut(r)),
                RowSource::Token(id) => {
                    let o = self.layout.wte.start + id as usize * d;
                    axpy(1.0, g, &mut grads[o..o + d]);
                }
            }
        }
        dprefix
    }

    /// Mapping-network gradients. The image embedding itself receives none.
    pub(crate) fn mapper_backward(&self, embedding: &[f64], trace: &MapperTrace, dprefix: &Matrix, grads: &mut [f64]) {
        let cfg = self.cfg;
        let h = cfg.mapper_hidden();
        let l = self.layout;
        let mut dh = vec![0.0; h];
        {
            let (dw, db) = split2(grads, &l.map_w2, &l.map_b2);
            linear_backward(
                &dprefix.data,
                &trace.hidden,
                self.p(&l.map_w2),
                h,
                cfg.k * cfg.d_model,
                Some(&mut dh),
                dw,
                db,
            );
        }
        for (g, &a) in dh.iter_mut().zip(&trace.hidden) {
            *g *= 1.0 - a * a;
        }
        let (dw, db) = split2(grads, &l.map_w1, &l.map_b1);
        linear_backward(&dh, embedding, self.p(&l.map_w1), cfg.d_enc, h, None, dw, db);
    }

    /// Summed NLL over masked positions and accumulation of `scale ×` its
    /// gradient into `grads`. Returns `(nll_sum, masked_count)`. A custom
    /// `mask` may select any positions whose target is set; unset targets
    /// are [`PAD`].
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_grad<R: Rng>(
        &self,
        embedding: Option<&[f64]>,
        tweet_ids: &[u32],
        alt_ids: &[u32],
        mask: Option<&[bool]>,
        scale: f64,
        grads: &mut [f64],
        rng: Option<&mut R>,
    ) -> Result<(f64, usize), CaptionerError> {
        let d = self.cfg.d_model;
        let mapped = match (self.cfg.variant.uses_image(), embedding) {
            (true, Some(e)) => Some(self.map_prefix_traced(e)?),
            (true, None) => return Err(CaptionerError::MissingPrefix),
            (false, _) => None,
        };
        let mut input = self.build_input(mapped.as_ref().map(|m| &m.0), tweet_ids, alt_ids)?;
        if let Some(mask) = mask {
            if mask.len() != input.len() {
                return Err(CaptionerError::InvalidConfig(format!(
                    "loss mask length {} does not match sequence length {}",
                    mask.len(),
                    input.len()
                )));
            }
            input.mask = mask.to_vec();
        }
        if input.mask_sum() == 0 {
            return Err(CaptionerError::EmptyMask);
        }
        let trace = self.forward_trace(&input.embedded.data, rng);
        let mut dz = vec![0.0; trace.t * d];
        let mut nll = 0.0;
        let mut count = 0;
        let wte = self.layout.wte.clone();
        for t in 0..trace.t {
            if !input.mask[t] {
                continue;
            }
            let z = &trace.z[t * d..(t + 1) * d];
            let logits = self.logits_row(z);
            let (lse, probs) = softmax(&logits);
            let target = input.targets[t] as usize;
            let lp = logits[target] - lse;
            if !lp.is_finite() {
                return Err(CaptionerError::NonFiniteActivation);
            }
            nll -= lp;
            count += 1;
            let dzt = &mut dz[t * d..(t + 1) * d];
            for (v, &p) in probs.iter().enumerate() {
                let gl = scale * (p - if v == target { 1.0 } else { 0.0 });
                let e = wte.start + v * d;
                axpy(gl, &self.params[e..e + d], dzt);
                axpy(gl, z, &mut grads[e..e + d]);
            }
        }
        let dx = self.backward(&trace, dz, grads);
        let dprefix = self.embed_backward(&input, &dx, grads);
        if let (Some((_, mt)), Some(e)) = (&mapped, embedding) {
            self.mapper_backward(e, mt, &dprefix, grads);
        }
        Ok((nll, count))
    }

    /// Summed NLL over the alt-text targets of one sample (no gradient).
    pub fn sample_nll(
        &self,
        embedding: Option<&[f64]>,
        tweet_ids: &[u32],
        alt_ids: &[u32],
    ) -> Result<(f64, usize), CaptionerError> {
        let prefix = match (self.cfg.variant.uses_image(), embedding) {
            (true, Some(e)) => Some(self.map_prefix(e)?),
            (true, None) => return Err(CaptionerError::MissingPrefix),
            (false, _) => None,
        };
        let input = self.build_input(prefix.as_ref(), tweet_ids, alt_ids)?;
        let trace = self.forward_trace::<rand_chacha::ChaCha8Rng>(&input.embedded.data, None);
        let d = self.cfg.d_model;
        let mut nll = 0.0;
        let mut count = 0;
        for t in (0..trace.t).filter(|&t| input.mask[t]) {
            let logits = self.logits_row(&trace.z[t * d..(t + 1) * d]);
            let (lse, _) = softmax(&logits);
            let lp = logits[input.targets[t] as usize] - lse;
            if !lp.is_finite() {
                return Err(CaptionerError::NonFiniteActivation);
            }
            nll -= lp;
            count += 1;
        }
        Ok((nll, count))
    }
}

/// Two disjoint mutable sub-slices of the gradient vector, `a` before `b`.
fn split2<'g>(
    grads: &'g mut [f64],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grads.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Log-sum-exp and probabilities.
pub(crate) fn softmax(logits: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Natural log-softmax of one row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let (lse, _) = softmax(logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// Mean negative log-likelihood over masked positions, in nats per token.
pub fn loss(logits: &Matrix, targets: &[u32], mask: &[bool]) -> Result<f64, CaptionerError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        let (lse, _) = softmax(logits.row(t));
        total += lse - logits.row(t)[target as usize];
        count += 1;
    }
    if count == 0 {
        return Err(CaptionerError::EmptyMask);
    }
    Ok(total / count as f64)
}
