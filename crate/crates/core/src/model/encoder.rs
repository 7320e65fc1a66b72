//! Encoders mapping an [`InputSequence`] to a pooled hidden vector, with
//! hand-derived backward passes over a flat parameter vector.

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::InputSequence;
use super::linalg::{
    add_assign, affine, col_sum_acc, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul_nt,
    matmul_tn_acc, softmax_in_place, LayerNormCache,
};
use super::tokenizer::CLS_ID;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Transformer initialized from a previously trained checkpoint file.
    PretrainedTransformer,
    /// Randomly initialized pre-norm transformer, small enough for CPU.
    TinyTransformer,
    /// Mean of token embeddings; no interaction between tokens.
    BagOfEmbeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden_size: usize,
    pub max_sequence_length: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_ff")]
    pub ff_size: usize,
    #[serde(default = "default_delimiter")]
    pub key_phrase_delimiter: String,
    /// Checkpoint whose encoder (and vocabulary) seeds a `pretrained_transformer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_path: Option<PathBuf>,
}

fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}
fn default_ff() -> usize {
    64
}
fn default_delimiter() -> String {
    ", ".into()
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::tiny_transformer()
    }
}

impl EncoderConfig {
    pub fn tiny_transformer() -> Self {
        Self {
            kind: EncoderKind::TinyTransformer,
            hidden_size: 32,
            max_sequence_length: 64,
            num_layers: default_layers(),
            num_heads: default_heads(),
            ff_size: default_ff(),
            key_phrase_delimiter: default_delimiter(),
            pretrained_path: None,
        }
    }

    pub fn bag_of_embeddings() -> Self {
        Self {
            kind: EncoderKind::BagOfEmbeddings,
            ..Self::tiny_transformer()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size < 1 {
            return Err(Error::Config("hidden_size must be >= 1".into()));
        }
        if self.max_sequence_length < 8 {
            return Err(Error::Config("max_sequence_length must be >= 8".into()));
        }
        if self.kind != EncoderKind::BagOfEmbeddings {
            if self.num_layers < 1 || self.num_heads < 1 || self.ff_size < 1 {
                return Err(Error::Config("transformer needs layers, heads and ff_size >= 1".into()));
            }
            if self.hidden_size % self.num_heads != 0 {
                return Err(Error::Config(format!(
                    "hidden_size {} is not divisible by num_heads {}",
                    self.hidden_size, self.num_heads
                )));
            }
        }
        if self.kind == EncoderKind::PretrainedTransformer && self.pretrained_path.is_none() {
            return Err(Error::Config("pretrained_transformer requires pretrained_path".into()));
        }
        Ok(())
    }

    pub(crate) fn is_transformer(&self) -> bool {
        self.kind != EncoderKind::BagOfEmbeddings
    }
}

/// A contiguous parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn get<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.range()]
    }

    fn get_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.range()]
    }
}

/// Two disjoint mutable slots; `first` must precede `second`.
fn pair_mut<'a>(p: &'a mut [f64], first: Slot, second: Slot) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(first.offset + first.len() <= second.offset);
    let (lo, hi) = p.split_at_mut(second.offset);
    (&mut lo[first.range()], &mut hi[..second.len()])
}

#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    pub total: usize,
    pub names: Vec<(String, Slot)>,
}

impl LayoutBuilder {
    pub(crate) fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows,
            cols,
        };
        self.total += rows * cols;
        self.names.push((name.into(), slot));
        slot
    }
}

#[derive(Debug, Clone)]
struct BlockSlots {
    ln1_g: Slot,
    ln1_b: Slot,
    wq: Slot,
    bq: Slot,
    wk: Slot,
    bk: Slot,
    wv: Slot,
    bv: Slot,
    wo: Slot,
    bo: Slot,
    ln2_g: Slot,
    ln2_b: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerSlots {
    pub tok: Slot,
    pub pos: Slot,
    pub seg: Slot,
    blocks: Vec<BlockSlots>,
    lnf_g: Slot,
    lnf_b: Slot,
    hidden: usize,
    heads: usize,
    ff: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum EncoderSlots {
    Transformer(TransformerSlots),
    Bag { tok: Slot, hidden: usize },
}

impl EncoderSlots {
    pub fn build(config: &EncoderConfig, vocab_size: usize, b: &mut LayoutBuilder) -> Self {
        let h = config.hidden_size;
        if !config.is_transformer() {
            return EncoderSlots::Bag {
                tok: b.add("embeddings.token", vocab_size, h),
                hidden: h,
            };
        }
        let f = config.ff_size;
        let tok = b.add("embeddings.token", vocab_size, h);
        // +1 for the [CLS] position the encoder prepends
        let pos = b.add("embeddings.position", config.max_sequence_length + 1, h);
        let seg = b.add("embeddings.segment", 2, h);
        let blocks = (0..config.num_layers)
            .map(|l| {
                let mut add = |n: &str, r, c| b.add(format!("layer{l}.{n}"), r, c);
                BlockSlots {
                    ln1_g: add("ln1.gain", 1, h),
                    ln1_b: add("ln1.bias", 1, h),
                    wq: add("attn.wq", h, h),
                    bq: add("attn.bq", 1, h),
                    wk: add("attn.wk", h, h),
                    bk: add("attn.bk", 1, h),
                    wv: add("attn.wv", h, h),
                    bv: add("attn.bv", 1, h),
                    wo: add("attn.wo", h, h),
                    bo: add("attn.bo", 1, h),
                    ln2_g: add("ln2.gain", 1, h),
                    ln2_b: add("ln2.bias", 1, h),
                    w1: add("ffn.w1", h, f),
                    b1: add("ffn.b1", 1, f),
                    w2: add("ffn.w2", f, h),
                    b2: add("ffn.b2", 1, h),
                }
            })
            .collect();
        let lnf_g = b.add("final_ln.gain", 1, h);
        let lnf_b = b.add("final_ln.bias", 1, h);
        EncoderSlots::Transformer(TransformerSlots {
            tok,
            pos,
            seg,
            blocks,
            lnf_g,
            lnf_b,
            hidden: h,
            heads: config.num_heads,
            ff: f,
        })
    }

    pub fn hidden(&self) -> usize {
        match self {
            EncoderSlots::Transformer(t) => t.hidden,
            EncoderSlots::Bag { hidden, .. } => *hidden,
        }
    }

    pub fn token_embeddings(&self) -> Slot {
        match self {
            EncoderSlots::Transformer(t) => t.tok,
            EncoderSlots::Bag { tok, .. } => *tok,
        }
    }

    /// Gains at 1, biases at 0, matrices Xavier-uniform (with the key
    /// projection a copy of the query projection), token embeddings uniform
    /// with standard deviation 0.5.
    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        let mut uniform = |slot: Slot, bound: f64, params: &mut [f64]| {
            for v in slot.get_mut(params) {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let emb_bound = 3f64.sqrt() * 0.5;
        match self {
            EncoderSlots::Bag { tok, .. } => uniform(*tok, emb_bound, params),
            EncoderSlots::Transformer(t) => {
                uniform(t.tok, emb_bound, params);
                uniform(t.pos, emb_bound * 0.2, params);
                uniform(t.seg, emb_bound * 0.2, params);
                let xavier = |s: Slot| (6.0 / (s.rows + s.cols) as f64).sqrt();
                for blk in &t.blocks {
                    for s in [blk.wq, blk.wv, blk.wo, blk.w1, blk.w2] {
                        uniform(s, xavier(s), params);
                    }
                    // keys start equal to queries, so identical tokens attend to each other
                    params.copy_within(blk.wq.range(), blk.wk.offset);
                    for s in [blk.ln1_g, blk.ln2_g] {
                        s.get_mut(params).fill(1.0);
                    }
                }
                t.lnf_g.get_mut(params).fill(1.0);
            }
        }
    }
}

pub(crate) struct BlockCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    ln2: LayerNormCache,
    c: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
}

pub(crate) enum EncodeCache {
    Transformer {
        ids: Vec<u32>,
        segments: Vec<usize>,
        blocks: Vec<BlockCache>,
        lnf: LayerNormCache,
    },
    Bag {
        ids: Vec<u32>,
    },
}

impl EncoderSlots {
    /// Returns the pooled vector and what the backward pass needs.
    pub fn forward(&self, p: &[f64], input: &InputSequence) -> (Vec<f64>, EncodeCache) {
        match self {
            EncoderSlots::Bag { tok, hidden } => {
                let h = *hidden;
                let mut out = vec![0.0; h];
                let emb = tok.get(p);
                for &id in &input.tokens {
                    add_assign(&mut out, &emb[id as usize * h..(id as usize + 1) * h]);
                }
                let n = input.tokens.len().max(1) as f64;
                out.iter_mut().for_each(|v| *v /= n);
                (
                    out,
                    EncodeCache::Bag {
                        ids: input.tokens.clone(),
                    },
                )
            }
            EncoderSlots::Transformer(t) => t.forward(p, input),
        }
    }

    /// Accumulates `∂(dpooled · pooled)/∂θ` into `grad`.
    pub fn backward(&self, p: &[f64], cache: &EncodeCache, dpooled: &[f64], grad: &mut [f64]) {
        match (self, cache) {
            (EncoderSlots::Bag { tok, hidden }, EncodeCache::Bag { ids }) => {
                let h = *hidden;
                let n = ids.len().max(1) as f64;
                let g = tok.get_mut(grad);
                for &id in ids {
                    for (gv, dv) in g[id as usize * h..(id as usize + 1) * h].iter_mut().zip(dpooled) {
                        *gv += dv / n;
                    }
                }
            }
            (EncoderSlots::Transformer(t), c @ EncodeCache::Transformer { .. }) => {
                t.backward(p, c, dpooled, grad)
            }
            _ => unreachable!("cache produced by a different encoder"),
        }
    }
}

impl TransformerSlots {
    fn forward(&self, p: &[f64], input: &InputSequence) -> (Vec<f64>, EncodeCache) {
        let h = self.hidden;
        let f = self.ff;
        let mut ids = Vec::with_capacity(input.tokens.len() + 1);
        ids.push(CLS_ID);
        ids.extend_from_slice(&input.tokens);
        let n = ids.len();
        let segments: Vec<usize> = (0..n).map(|i| usize::from(i > input.separator + 1)).collect();

        let (tok, pos, seg) = (self.tok.get(p), self.pos.get(p), self.seg.get(p));
        let mut x = vec![0.0; n * h];
        for i in 0..n {
            let row = &mut x[i * h..(i + 1) * h];
            let id = ids[i] as usize;
            for c in 0..h {
                row[c] = tok[id * h + c] + pos[i * h + c] + seg[segments[i] * h + c];
            }
        }

        let heads = self.heads;
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a, ln1) = layer_norm(&x, blk.ln1_g.get(p), blk.ln1_b.get(p), h);
            let q = affine(&a, blk.wq.get(p), blk.bq.get(p), n, h, h);
            let k = affine(&a, blk.wk.get(p), blk.bk.get(p), n, h, h);
            let v = affine(&a, blk.wv.get(p), blk.bv.get(p), n, h, h);
            let mut probs = vec![0.0; heads * n * n];
            let mut o = vec![0.0; n * h];
            for hd in 0..heads {
                let off = hd * d;
                let pm = &mut probs[hd * n * n..(hd + 1) * n * n];
                for i in 0..n {
                    let qi = &q[i * h + off..i * h + off + d];
                    let row = &mut pm[i * n..(i + 1) * n];
                    for j in 0..n {
                        let kj = &k[j * h + off..j * h + off + d];
                        row[j] = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(row);
                    let oi = &mut o[i * h + off..i * h + off + d];
                    for j in 0..n {
                        let w = row[j];
                        for (ov, vv) in oi.iter_mut().zip(&v[j * h + off..j * h + off + d]) {
                            *ov += w * vv;
                        }
                    }
                }
            }
            let att = affine(&o, blk.wo.get(p), blk.bo.get(p), n, h, h);
            add_assign(&mut x, &att);
            let (c, ln2) = layer_norm(&x, blk.ln2_g.get(p), blk.ln2_b.get(p), h);
            let u = affine(&c, blk.w1.get(p), blk.b1.get(p), n, h, f);
            let r: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let ffn = affine(&r, blk.w2.get(p), blk.b2.get(p), n, f, h);
            add_assign(&mut x, &ffn);
            blocks.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                c,
                u,
                r,
            });
        }
        let (y, lnf) = layer_norm(&x, self.lnf_g.get(p), self.lnf_b.get(p), h);
        let pooled = y[..h].to_vec();
        (
            pooled,
            EncodeCache::Transformer {
                ids,
                segments,
                blocks,
                lnf,
            },
        )
    }

    fn backward(&self, p: &[f64], cache: &EncodeCache, dpooled: &[f64], grad: &mut [f64]) {
        let EncodeCache::Transformer {
            ids,
            segments,
            blocks,
            lnf,
        } = cache
        else {
            unreachable!()
        };
        let h = self.hidden;
        let f = self.ff;
        let n = ids.len();
        let heads = self.heads;
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();

        let mut dy = vec![0.0; n * h];
        dy[..h].copy_from_slice(dpooled);
        let mut dx = {
            let (dg, db) = pair_mut(grad, self.lnf_g, self.lnf_b);
            layer_norm_backward(&dy, self.lnf_g.get(p), lnf, h, dg, db)
        };

        for (blk, bc) in self.blocks.iter().zip(blocks).rev() {
            // feed-forward sublayer: x_out = x_mid + W2·gelu(W1·LN2(x_mid))
            matmul_tn_acc(&bc.r, &dx, n, f, h, blk.w2.get_mut(grad));
            col_sum_acc(&dx, h, blk.b2.get_mut(grad));
            let mut du = matmul_nt(&dx, blk.w2.get(p), n, h, f);
            for (g, &z) in du.iter_mut().zip(&bc.u) {
                *g *= gelu_grad(z);
            }
            matmul_tn_acc(&bc.c, &du, n, h, f, blk.w1.get_mut(grad));
            col_sum_acc(&du, f, blk.b1.get_mut(grad));
            let dc = matmul_nt(&du, blk.w1.get(p), n, f, h);
            let dln2 = {
                let (dg, db) = pair_mut(grad, blk.ln2_g, blk.ln2_b);
                layer_norm_backward(&dc, blk.ln2_g.get(p), &bc.ln2, h, dg, db)
            };
            add_assign(&mut dx, &dln2);

            // attention sublayer: x_mid = x_in + Wo·attn(LN1(x_in))
            matmul_tn_acc(&bc.o, &dx, n, h, h, blk.wo.get_mut(grad));
            col_sum_acc(&dx, h, blk.bo.get_mut(grad));
            let d_o = matmul_nt(&dx, blk.wo.get(p), n, h, h);
            let mut dq = vec![0.0; n * h];
            let mut dk = vec![0.0; n * h];
            let mut dv = vec![0.0; n * h];
            let mut dp = vec![0.0; n];
            for hd in 0..heads {
                let off = hd * d;
                let pm = &bc.probs[hd * n * n..(hd + 1) * n * n];
                for i in 0..n {
                    let doi = &d_o[i * h + off..i * h + off + d];
                    let prow = &pm[i * n..(i + 1) * n];
                    for j in 0..n {
                        let vj = &bc.v[j * h + off..j * h + off + d];
                        dp[j] = doi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let pij = prow[j];
                        for (g, &dov) in dv[j * h + off..j * h + off + d].iter_mut().zip(doi) {
                            *g += pij * dov;
                        }
                    }
                    let inner: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        let ds = prow[j] * (dp[j] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            dq[i * h + off + c] += ds * bc.k[j * h + off + c];
                            dk[j * h + off + c] += ds * bc.q[i * h + off + c];
                        }
                    }
                }
            }
            let mut da = vec![0.0; n * h];
            for (dproj, w, b) in [(&dq, blk.wq, blk.bq), (&dk, blk.wk, blk.bk), (&dv, blk.wv, blk.bv)] {
                matmul_tn_acc(&bc.a, dproj, n, h, h, w.get_mut(grad));
                col_sum_acc(dproj, h, b.get_mut(grad));
                add_assign(&mut da, &matmul_nt(dproj, w.get(p), n, h, h));
            }
            let dln1 = {
                let (dg, db) = pair_mut(grad, blk.ln1_g, blk.ln1_b);
                layer_norm_backward(&da, blk.ln1_g.get(p), &bc.ln1, h, dg, db)
            };
            add_assign(&mut dx, &dln1);
        }

        let gt = self.tok.get_mut(grad);
        for i in 0..n {
            let id = ids[i] as usize;
            add_assign(&mut gt[id * h..(id + 1) * h], &dx[i * h..(i + 1) * h]);
        }
        let gp = self.pos.get_mut(grad);
        for i in 0..n {
            add_assign(&mut gp[i * h..(i + 1) * h], &dx[i * h..(i + 1) * h]);
        }
        let gs = self.seg.get_mut(grad);
        for i in 0..n {
            let s = segments[i];
            add_assign(&mut gs[s * h..(s + 1) * h], &dx[i * h..(i + 1) * h]);
        }
    }
}
