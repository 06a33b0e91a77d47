//! Masked-autoencoder pre-training at toy scale.
//!
//! Real-valued dynamic tokens are hidden at random; the encoder sees the
//! rest, and a one-block decoder reconstructs the hidden tokens' normalized
//! values from learned mask tokens plus their encodings.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Encoder;
use super::tokens::{fixed_encoding, token_inputs, TokenInput};
use crate::bands::ChannelGroup;
use crate::data::PixelTimeSeries;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{ops, AdamW, AdamWConfig, Block, Grads, Linear, ParamId, ParamStore};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub mask_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.75,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
        }
    }
}

impl PretrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            out.push(format!("pretrain.mask_ratio must lie in (0, 1), got {}", self.mask_ratio));
        }
        if self.epochs == 0 {
            out.push("pretrain.epochs must be positive".into());
        }
        if self.batch_size == 0 {
            out.push("pretrain.batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("pretrain.lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!("pretrain.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        out
    }
}

struct Decoder {
    store: ParamStore,
    embed: Linear,
    mask_token: ParamId,
    channel: ParamId,
    block: Block,
    heads: Vec<(ChannelGroup, Linear)>,
}

impl Decoder {
    fn new(encoder: &Encoder, seed: u64) -> Self {
        let d = encoder.config.d_e;
        let wch = encoder.layout.channel;
        let mut rng = rng_for(seed, "decoder-init", 0);
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "dec.embed", d, d, &mut rng);
        let mask_token = store.add_uniform("dec.mask_token", &[d], d, &mut rng);
        let channel = store.add_uniform("dec.channel_encoding", &[10, wch], wch, &mut rng);
        let heads_n = encoder.config.heads;
        let block = Block::new(&mut store, "dec.block", d, heads_n, encoder.config.ff, &mut rng);
        let heads = ChannelGroup::DYNAMIC_REAL
            .iter()
            .map(|&g| (g, Linear::new(&mut store, &format!("dec.head.{}", g.name()), d, g.width(), &mut rng)))
            .collect();
        Self {
            store,
            embed,
            mask_token,
            channel,
            block,
            heads,
        }
    }

    fn head(&self, g: ChannelGroup) -> Linear {
        self.heads.iter().find(|(h, _)| *h == g).expect("real dynamic group").1
    }

    fn encoding(&self, encoder: &Encoder, t: &TokenInput) -> Vec<f64> {
        let mut e = fixed_encoding(&encoder.layout, t.month);
        if t.group != ChannelGroup::Loc {
            let w = encoder.layout.channel;
            let row = t.group.index();
            ops::add_assign(&mut e[..w], &self.store.get(self.channel)[row * w..(row + 1) * w]);
        }
        e
    }

    fn add_encoding_grad(&self, encoder: &Encoder, t: &TokenInput, d: &[f64], grads: &mut Grads) {
        if t.group != ChannelGroup::Loc {
            let w = encoder.layout.channel;
            let row = t.group.index();
            ops::add_assign(&mut grads.get_mut(self.channel)[row * w..(row + 1) * w], &d[..w]);
        }
    }
}

/// Splits token indices into (visible, masked). Only real-valued dynamic
/// tokens are candidates; at least one token always stays visible.
pub fn choose_mask(inputs: &[TokenInput], ratio: f64, rng: &mut crate::rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut candidates: Vec<usize> = (0..inputs.len())
        .filter(|&i| inputs[i].group.is_dynamic() && inputs[i].group != ChannelGroup::Dw)
        .collect();
    let k = ((ratio * candidates.len() as f64).round() as usize).min(inputs.len().saturating_sub(1));
    candidates.shuffle(rng);
    let mut masked: Vec<usize> = candidates[..k].to_vec();
    masked.sort_unstable();
    let visible = (0..inputs.len()).filter(|i| masked.binary_search(i).is_err()).collect();
    (visible, masked)
}

struct SampleResult {
    loss: f64,
    enc: Grads,
    dec: Grads,
}

fn sample_step(
    encoder: &Encoder,
    decoder: &Decoder,
    inputs: &[TokenInput],
    visible: &[usize],
    masked: &[usize],
) -> Result<SampleResult> {
    let d = encoder.config.d_e;
    let vis_inputs: Vec<TokenInput> = visible.iter().map(|&i| inputs[i].clone()).collect();
    let (_, cache) = encoder.forward(&vis_inputs)?;
    let (nv, nm) = (visible.len(), masked.len());

    let embedded = decoder.embed.forward(&decoder.store, &cache.tokens);
    let mut x = Matrix::zeros(nv + nm, d);
    for (r, t) in vis_inputs.iter().enumerate() {
        let row = x.row_mut(r);
        row.copy_from_slice(embedded.row(r));
        ops::add_assign(row, &decoder.encoding(encoder, t));
    }
    for (r, &i) in masked.iter().enumerate() {
        let row = x.row_mut(nv + r);
        row.copy_from_slice(decoder.store.get(decoder.mask_token));
        ops::add_assign(row, &decoder.encoding(encoder, &inputs[i]));
    }
    let (y, bcache) = decoder.block.forward(&decoder.store, &x);

    let scalars: usize = masked.iter().map(|&i| inputs[i].values.len()).sum();
    let mut loss = 0.0;
    let mut dy = Matrix::zeros(nv + nm, d);
    let mut dec = decoder.store.zero_grads();
    for (r, &i) in masked.iter().enumerate() {
        let head = decoder.head(inputs[i].group);
        let h = Matrix::from_vec(1, d, y.row(nv + r).to_vec())?;
        let pred = head.forward(&decoder.store, &h);
        let mut dpred = Matrix::zeros(1, head.output);
        for (j, (&p, &t)) in pred.row(0).iter().zip(&inputs[i].values).enumerate() {
            loss += (p - t).powi(2) / scalars as f64;
            dpred.row_mut(0)[j] = 2.0 * (p - t) / scalars as f64;
        }
        let dh = head.backward(&decoder.store, &h, &dpred, &mut dec);
        dy.row_mut(nv + r).copy_from_slice(dh.row(0));
    }

    let dx = decoder.block.backward(&decoder.store, &bcache, &dy, &mut dec);
    for (r, &i) in masked.iter().enumerate() {
        ops::add_assign(dec.get_mut(decoder.mask_token), dx.row(nv + r));
        decoder.add_encoding_grad(encoder, &inputs[i], dx.row(nv + r), &mut dec);
    }
    let mut dvis = Matrix::zeros(nv, d);
    for (r, t) in vis_inputs.iter().enumerate() {
        dvis.row_mut(r).copy_from_slice(dx.row(r));
        decoder.add_encoding_grad(encoder, t, dx.row(r), &mut dec);
    }
    let dtokens = decoder.embed.backward(&decoder.store, &cache.tokens, &dvis, &mut dec);
    let mut enc = encoder.store.zero_grads();
    encoder.backward_tokens(&cache, &dtokens, &mut enc)?;
    Ok(SampleResult { loss, enc, dec })
}

/// Pre-trains `encoder` on normalized series. Returns the trained encoder and
/// the mean masked-reconstruction loss of every epoch.
pub fn mae_pretrain(
    mut encoder: Encoder,
    series: &[PixelTimeSeries],
    config: &PretrainConfig,
    seed: u64,
) -> Result<(Encoder, Vec<f64>)> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let inputs: Vec<Vec<TokenInput>> = series
        .iter()
        .map(token_inputs)
        .filter(|t| t.iter().any(|x| x.group.is_dynamic() && x.group != ChannelGroup::Dw))
        .collect();
    if inputs.is_empty() {
        return Err(Error::Empty("pre-training dataset has no maskable tokens".into()));
    }
    let mut decoder = Decoder::new(&encoder, seed);
    let opt_config = AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut enc_opt = AdamW::new(&encoder.store, opt_config);
    let mut dec_opt = AdamW::new(&decoder.store, opt_config);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = rng_for(seed, "mae-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        let masks: Vec<(Vec<usize>, Vec<usize>)> = order
            .iter()
            .map(|&i| choose_mask(&inputs[i], config.mask_ratio, &mut rng))
            .collect();
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let start = b * config.batch_size;
            let results = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let (vis, msk) = &masks[start + j];
                    sample_step(&encoder, &decoder, &inputs[i], vis, msk)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut enc_g = encoder.store.zero_grads();
            let mut dec_g = decoder.store.zero_grads();
            let mut batch_loss = 0.0;
            for r in &results {
                enc_g.add(&r.enc);
                dec_g.add(&r.dec);
                batch_loss += r.loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let scale = 1.0 / chunk.len() as f64;
            enc_g.scale(scale);
            dec_g.scale(scale);
            enc_opt.step(&mut encoder.store, &enc_g);
            dec_opt.step(&mut decoder.store, &dec_g);
            epoch_loss += batch_loss;
        }
        trace.push(epoch_loss / inputs.len() as f64);
    }
    encoder.store.meta.insert("pretrain_seed".into(), seed.to_string());
    Ok((encoder, trace))
}
