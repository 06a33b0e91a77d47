//! Token inputs and the fixed positional/month encodings.

use std::f64::consts::PI;

use crate::bands::ChannelGroup;
use crate::data::{PixelTimeSeries, MONTHS};
use crate::error::{Error, Result};

/// Sub-widths of the concatenated encoding `[channel; position; month]`.
/// Position and month get `d_e / 3` each, channel takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingLayout {
    pub channel: usize,
    pub position: usize,
    pub month: usize,
}

impl EncodingLayout {
    pub fn new(d_e: usize) -> Self {
        let third = d_e / 3;
        Self {
            channel: d_e - 2 * third,
            position: third,
            month: third,
        }
    }

    pub fn width(&self) -> usize {
        self.channel + self.position + self.month
    }
}

/// `[sin(2πm/12), cos(2πm/12), sin, cos, ...]` of the given width.
pub fn month_encoding(month: usize, width: usize) -> Result<Vec<f64>> {
    if month >= MONTHS {
        return Err(Error::Month(month));
    }
    let angle = 2.0 * PI * month as f64 / MONTHS as f64;
    let (s, c) = angle.sin_cos();
    Ok((0..width).map(|j| if j % 2 == 0 { s } else { c }).collect())
}

/// Standard sinusoidal position encoding: even entries
/// `sin(pos / 10000^(2k/width))`, odd entries the matching cosine.
pub fn sinusoidal_encoding(position: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| {
            let k = (j / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * k / width as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Fixed part of a dynamic token's encoding: zeros over the channel
/// sub-width, then position and month encodings.
pub fn fixed_encoding(layout: &EncodingLayout, month: Option<usize>) -> Vec<f64> {
    let mut out = vec![0.0; layout.width()];
    if let Some(m) = month {
        out[layout.channel..layout.channel + layout.position]
            .copy_from_slice(&sinusoidal_encoding(m, layout.position));
        out[layout.channel + layout.position..]
            .copy_from_slice(&month_encoding(m, layout.month).expect("month checked by caller"));
    }
    out
}

/// Raw material of one token before projection. DW tokens carry the class
/// id as their single value.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenInput {
    pub group: ChannelGroup,
    pub month: Option<usize>,
    pub values: Vec<f64>,
}

/// Month-major dynamic tokens for every present (month, group) pair, then
/// the TG and Loc tokens.
pub fn token_inputs(series: &PixelTimeSeries) -> Vec<TokenInput> {
    let mut out = Vec::with_capacity(110);
    for m in 0..MONTHS {
        for g in ChannelGroup::DYNAMIC {
            let values = match g {
                ChannelGroup::Dw => series.dw(m).map(|c| vec![c as f64]),
                g => series.group(m, g).map(<[f64]>::to_vec),
            };
            if let Some(values) = values {
                out.push(TokenInput {
                    group: g,
                    month: Some(m),
                    values,
                });
            }
        }
    }
    if let Some(t) = series.statics.terrain {
        out.push(TokenInput {
            group: ChannelGroup::Tg,
            month: None,
            values: vec![t.elevation_m, t.slope_deg],
        });
    }
    if let Some(loc) = series.loc() {
        out.push(TokenInput {
            group: ChannelGroup::Loc,
            month: None,
            values: loc.to_vec(),
        });
    }
    out
}
