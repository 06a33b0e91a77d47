//! Channel-group transformer encoder with hand-written backward pass.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::NORMALIZATION_VERSION;
use super::tokens::{fixed_encoding, token_inputs, EncodingLayout, TokenInput};
use crate::bands::ChannelGroup;
use crate::data::{PixelTimeSeries, DW_CLASSES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::layers::{BlockCache, LayerNormCache};
use crate::nn::{load_checkpoint, save_checkpoint, Block, Grads, LayerNorm, Linear, ParamId, ParamStore};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_e: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff: usize,
    pub out_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_e: 128,
            depth: 2,
            heads: 8,
            ff: 256,
            out_dim: 128,
        }
    }
}

impl EncoderConfig {
    /// Smallest configuration used in tests and desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            d_e: 16,
            depth: 1,
            heads: 2,
            ff: 32,
            out_dim: 128,
        }
    }

    /// Desk-scale configuration for full-dataset experiments on a CPU.
    pub fn toy() -> Self {
        Self {
            d_e: 64,
            depth: 1,
            heads: 2,
            ff: 128,
            out_dim: 128,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d_e < 3 {
            out.push(format!("encoder.d_e must be at least 3, got {}", self.d_e));
        }
        if self.heads == 0 || self.d_e % self.heads.max(1) != 0 {
            out.push(format!("encoder.heads ({}) must divide encoder.d_e ({})", self.heads, self.d_e));
        }
        for (name, v) in [("depth", self.depth), ("ff", self.ff), ("out_dim", self.out_dim)] {
            if v == 0 {
                out.push(format!("encoder.{name} must be positive"));
            }
        }
        out
    }
}

/// Embedded tokens ready for the transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub group: ChannelGroup,
    pub month: Option<usize>,
    pub embedding: Vec<f64>,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_present(&self, month: Option<usize>, group: ChannelGroup) -> bool {
        self.tokens.iter().any(|t| t.group == group && t.month == month)
    }

    pub fn embeddings(&self) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = self.tokens.iter().map(|t| t.embedding.clone()).collect();
        Matrix::from_rows(&rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFeature {
    pub plot_id: String,
    pub values: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct EncoderCache {
    inputs: Vec<TokenInput>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    /// Per-token outputs after the final layer norm.
    pub tokens: Matrix,
    pooled: Matrix,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub layout: EncodingLayout,
    projections: BTreeMap<ChannelGroup, Linear>,
    channel: ParamId,
    dw_table: ParamId,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    out: Linear,
}

/// Groups owning a learnable channel encoding: every group but Loc.
fn channel_row(group: ChannelGroup) -> Option<usize> {
    (group != ChannelGroup::Loc).then(|| group.index())
}

const CHANNEL_ROWS: usize = 10;

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = rng_for(seed, "encoder-init", 0);
        let layout = EncodingLayout::new(config.d_e);
        let mut store = ParamStore::new();
        let mut projections = BTreeMap::new();
        for g in ChannelGroup::ALL {
            if g != ChannelGroup::Dw {
                projections.insert(g, Linear::new(&mut store, &format!("proj.{}", g.name()), g.width(), config.d_e, &mut rng));
            }
        }
        let channel = store.add_uniform("channel_encoding", &[CHANNEL_ROWS, layout.channel], layout.channel, &mut rng);
        let dw_table = store.add_uniform("dw_embedding", &[DW_CLASSES, config.d_e], config.d_e, &mut rng);
        let blocks = (0..config.depth)
            .map(|i| Block::new(&mut store, &format!("blocks.{i}"), config.d_e, config.heads, config.ff, &mut rng))
            .collect();
        let final_ln = LayerNorm::new(&mut store, "final_ln", config.d_e);
        let out = Linear::new(&mut store, "out", config.d_e, config.out_dim, &mut rng);
        let mut enc = Self {
            config,
            store,
            layout,
            projections,
            channel,
            dw_table,
            blocks,
            final_ln,
            out,
        };
        enc.write_meta(seed);
        Ok(enc)
    }

    fn write_meta(&mut self, seed: u64) {
        let c = self.config;
        let meta = &mut self.store.meta;
        meta.insert("kind".into(), "encoder".into());
        meta.insert("d_e".into(), c.d_e.to_string());
        meta.insert("depth".into(), c.depth.to_string());
        meta.insert("heads".into(), c.heads.to_string());
        meta.insert("ff".into(), c.ff.to_string());
        meta.insert("out_dim".into(), c.out_dim.to_string());
        meta.insert("seed".into(), seed.to_string());
        meta.insert("normalization_version".into(), NORMALIZATION_VERSION.to_string());
    }

    /// Rebuilds the layer handles over a loaded store.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            store
                .meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("meta entry `{k}` missing or not an integer")))
        };
        if store.meta.get("kind").map(String::as_str) != Some("encoder") {
            return Err(Error::Checkpoint("not an encoder checkpoint".into()));
        }
        if get("normalization_version")? != NORMALIZATION_VERSION as usize {
            return Err(Error::Checkpoint("normalization version mismatch".into()));
        }
        let config = EncoderConfig {
            d_e: get("d_e")?,
            depth: get("depth")?,
            heads: get("heads")?,
            ff: get("ff")?,
            out_dim: get("out_dim")?,
        };
        let missing = |n: &str| Error::Checkpoint(format!("parameter `{n}` missing or misshapen"));
        let mut projections = BTreeMap::new();
        for g in ChannelGroup::ALL {
            if g != ChannelGroup::Dw {
                let name = format!("proj.{}", g.name());
                let l = Linear::find(&store, &name).ok_or_else(|| missing(&name))?;
                if l.input != g.width() || l.output != config.d_e {
                    return Err(missing(&name));
                }
                projections.insert(g, l);
            }
        }
        let blocks = (0..config.depth)
            .map(|i| Block::find(&store, &format!("blocks.{i}"), config.heads).ok_or_else(|| missing(&format!("blocks.{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            layout: EncodingLayout::new(config.d_e),
            projections,
            channel: store.find("channel_encoding").ok_or_else(|| missing("channel_encoding"))?,
            dw_table: store.find("dw_embedding").ok_or_else(|| missing("dw_embedding"))?,
            blocks,
            final_ln: LayerNorm::find(&store, "final_ln").ok_or_else(|| missing("final_ln"))?,
            out: Linear::find(&store, "out").ok_or_else(|| missing("out"))?,
            store,
        })
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(&self.store, stem)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        Self::from_store(load_checkpoint(stem)?)
    }

    pub fn dw_row(&self, class: usize) -> &[f64] {
        let d = self.config.d_e;
        &self.store.get(self.dw_table)[class * d..(class + 1) * d]
    }

    /// Embedding of one token: projection (or DW lookup) plus encodings.
    pub fn embed(&self, input: &TokenInput) -> Result<Vec<f64>> {
        let d = self.config.d_e;
        let mut e = match input.group {
            ChannelGroup::Dw => {
                let class = input.values.first().copied().unwrap_or(-1.0);
                if class < 0.0 || class.fract() != 0.0 || class as usize >= DW_CLASSES {
                    return Err(Error::invalid(format!("DW class {class} outside 0..{DW_CLASSES}")));
                }
                self.dw_row(class as usize).to_vec()
            }
            g => {
                let l = self.projections[&g];
                if input.values.len() != l.input {
                    return Err(Error::Shape(format!(
                        "{g} projection takes {} values, got {}",
                        l.input,
                        input.values.len()
                    )));
                }
                let w = self.store.get(l.w);
                let mut e = self.store.get(l.b).to_vec();
                for (i, x) in input.values.iter().enumerate() {
                    for (j, v) in e.iter_mut().enumerate() {
                        *v += x * w[i * d + j];
                    }
                }
                e
            }
        };
        if input.group == ChannelGroup::Loc {
            return Ok(e);
        }
        if let Some(m) = input.month {
            if m >= crate::data::MONTHS {
                return Err(Error::Month(m));
            }
        }
        let fixed = fixed_encoding(&self.layout, input.month);
        let row = channel_row(input.group).expect("non-Loc group");
        let ch = &self.store.get(self.channel)[row * self.layout.channel..(row + 1) * self.layout.channel];
        for (j, v) in e.iter_mut().enumerate() {
            *v += fixed[j] + if j < ch.len() { ch[j] } else { 0.0 };
        }
        Ok(e)
    }

    pub fn embed_all(&self, inputs: &[TokenInput]) -> Result<Matrix> {
        let rows = inputs.iter().map(|t| self.embed(t)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.config.d_e));
        }
        Matrix::from_rows(&rows)
    }

    /// Tokenizes a normalized series.
    pub fn tokenize(&self, series: &PixelTimeSeries) -> Result<TokenSequence> {
        self.tokenize_inputs(&token_inputs(series))
    }

    pub fn tokenize_inputs(&self, inputs: &[TokenInput]) -> Result<TokenSequence> {
        Ok(TokenSequence {
            tokens: inputs
                .iter()
                .map(|t| {
                    Ok(Token {
                        group: t.group,
                        month: t.month,
                        embedding: self.embed(t)?,
                        masked: false,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    fn transform(&self, e: Matrix) -> (Matrix, Vec<BlockCache>, LayerNormCache) {
        let mut x = e;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&self.store, &x);
            caches.push(c);
            x = y;
        }
        let (y, ln) = self.final_ln.forward(&self.store, &x);
        (y, caches, ln)
    }

    fn pool_project(&self, tokens: &Matrix) -> (Matrix, Vec<f64>) {
        let n = tokens.rows() as f64;
        let mut pooled = Matrix::zeros(1, self.config.d_e);
        for i in 0..tokens.rows() {
            for (p, v) in pooled.row_mut(0).iter_mut().zip(tokens.row(i)) {
                *p += v / n;
            }
        }
        let out = self.out.forward(&self.store, &pooled).into_vec();
        (pooled, out)
    }

    /// Deep feature of an embedded token sequence.
    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        let (tokens, _, _) = self.transform(seq.embeddings()?);
        Ok(self.pool_project(&tokens).1)
    }

    /// Deep feature of a normalized series.
    pub fn encode_series(&self, series: &PixelTimeSeries) -> Result<DeepFeature> {
        Ok(DeepFeature {
            plot_id: series.plot_id.clone(),
            values: self.encode(&self.tokenize(series)?)?,
        })
    }

    /// Forward pass keeping activations.
    pub fn forward(&self, inputs: &[TokenInput]) -> Result<(Vec<f64>, EncoderCache)> {
        if inputs.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        let e = self.embed_all(inputs)?;
        let (tokens, blocks, final_ln) = self.transform(e);
        let (pooled, out) = self.pool_project(&tokens);
        Ok((
            out,
            EncoderCache {
                inputs: inputs.to_vec(),
                blocks,
                final_ln,
                tokens,
                pooled,
            },
        ))
    }

    /// Gradients of every parameter given the upstream gradient of the deep feature.
    pub fn backward(&self, cache: &EncoderCache, upstream: &[f64], grads: &mut Grads) -> Result<()> {
        if upstream.len() != self.config.out_dim {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, encoder emits {}",
                upstream.len(),
                self.config.out_dim
            )));
        }
        let dy = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        let dpooled = self.out.backward(&self.store, &cache.pooled, &dy, grads);
        let n = cache.tokens.rows();
        let mut dtokens = Matrix::zeros(n, self.config.d_e);
        for i in 0..n {
            for (d, p) in dtokens.row_mut(i).iter_mut().zip(dpooled.row(0)) {
                *d = p / n as f64;
            }
        }
        self.backward_tokens(cache, &dtokens, grads)
    }

    /// Backward pass from gradients of the per-token outputs.
    pub fn backward_tokens(&self, cache: &EncoderCache, dtokens: &Matrix, grads: &mut Grads) -> Result<()> {
        if dtokens.rows() != cache.tokens.rows() || dtokens.cols() != self.config.d_e {
            return Err(Error::Shape("token gradient does not match forward pass".into()));
        }
        let mut dx = self.final_ln.backward(&self.store, &cache.final_ln, dtokens, grads);
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.backward(&self.store, c, &dx, grads);
        }
        let d = self.config.d_e;
        let wch = self.layout.channel;
        for (i, input) in cache.inputs.iter().enumerate() {
            let de = dx.row(i);
            match input.group {
                ChannelGroup::Dw => {
                    let c = input.values[0] as usize;
                    crate::nn::ops::add_assign(&mut grads.get_mut(self.dw_table)[c * d..(c + 1) * d], de);
                }
                g => {
                    let l = self.projections[&g];
                    let gw = grads.get_mut(l.w);
                    for (k, x) in input.values.iter().enumerate() {
                        for (j, v) in de.iter().enumerate() {
                            gw[k * d + j] += x * v;
                        }
                    }
                    crate::nn::ops::add_assign(grads.get_mut(l.b), de);
                }
            }
            if let Some(row) = channel_row(input.group) {
                crate::nn::ops::add_assign(&mut grads.get_mut(self.channel)[row * wch..(row + 1) * wch], &de[..wch]);
            }
        }
        Ok(())
    }
}
