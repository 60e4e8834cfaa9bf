//! Residual `[conv + self-attention + feed-forward]` encoder block.

use ndarray::ArrayView2;

use super::kernels::{
    conv1d, conv1d_backward, dropout_mask, feed_forward_backward, feed_forward_cached,
    layer_norm_backward, layer_norm_cached, multi_head_self_attention_backward,
    multi_head_self_attention_cached, AttentionCache, AttentionGrads, AttentionParams,
    FeedForwardCache, LayerNormCache, Mat, LAYER_NORM_EPS,
};
use super::weights::EncoderParams;
use crate::error::Result;

/// Training-time dropout: rate and the generator that draws the masks.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn rand::RngCore,
}

impl Dropout<'_> {
    fn mask(&mut self, shape: (usize, usize)) -> Option<Mat> {
        (self.rate > 0.0).then(|| dropout_mask(shape, self.rate, self.rng))
    }
}

pub struct EncoderCache {
    conv_norm: LayerNormCache,
    conv_in: Mat,
    conv_mask: Option<Mat>,
    attn_norm: LayerNormCache,
    attn: AttentionCache,
    attn_mask: Option<Mat>,
    ffn_norm: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_mask: Option<Mat>,
}

impl EncoderCache {
    /// Sign pattern of every ReLU pre-activation, used to detect when a
    /// finite-difference probe crosses a non-differentiable point.
    pub(crate) fn relu_pattern(&self, out: &mut Vec<bool>) {
        out.extend(self.ffn.hidden.iter().map(|&h| h > 0.0));
    }
}

fn residual(x: &Mat, y: Mat, mask: &Option<Mat>) -> Mat {
    match mask {
        Some(m) => x + &(y * m),
        None => x + &y,
    }
}

pub fn encoder_block(
    x: ArrayView2<f64>,
    p: &EncoderParams,
    heads: usize,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Mat> {
    Ok(encoder_block_cached(x, p, heads, dropout)?.0)
}

/// Each sub-layer computes `x + drop(op(layer_norm(x)))`.
pub fn encoder_block_cached(
    x: ArrayView2<f64>,
    p: &EncoderParams,
    heads: usize,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(Mat, EncoderCache)> {
    let x0 = x.to_owned();
    let mut mask = |shape| dropout.as_deref_mut().and_then(|d| d.mask(shape));

    let (conv_in, conv_norm) = layer_norm_cached(
        x0.view(),
        &p.conv_norm.gain,
        &p.conv_norm.bias,
        LAYER_NORM_EPS,
    );
    let conv_out = conv1d(conv_in.view(), &p.conv_taps, p.conv_bias.view())?;
    let conv_mask = mask(conv_out.dim());
    let x1 = residual(&x0, conv_out, &conv_mask);

    let (attn_in, attn_norm) = layer_norm_cached(
        x1.view(),
        &p.attn_norm.gain,
        &p.attn_norm.bias,
        LAYER_NORM_EPS,
    );
    let (attn_out, attn) =
        multi_head_self_attention_cached(attn_in.view(), &attention_params(p, heads))?;
    let attn_mask = mask(attn_out.dim());
    let x2 = residual(&x1, attn_out, &attn_mask);

    let (ffn_in, ffn_norm) = layer_norm_cached(
        x2.view(),
        &p.ffn_norm.gain,
        &p.ffn_norm.bias,
        LAYER_NORM_EPS,
    );
    let (ffn_out, ffn) = feed_forward_cached(
        ffn_in.view(),
        &p.ffn_in,
        &p.ffn_in_bias,
        &p.ffn_out,
        &p.ffn_out_bias,
    )?;
    let ffn_mask = mask(ffn_out.dim());
    let x3 = residual(&x2, ffn_out, &ffn_mask);

    Ok((
        x3,
        EncoderCache {
            conv_norm,
            conv_in,
            conv_mask,
            attn_norm,
            attn,
            attn_mask,
            ffn_norm,
            ffn,
            ffn_mask,
        },
    ))
}

fn attention_params(p: &EncoderParams, heads: usize) -> AttentionParams<'_> {
    AttentionParams {
        w_query: &p.w_query,
        w_key: &p.w_key,
        w_value: &p.w_value,
        w_out: &p.w_out,
        heads,
    }
}

fn through_mask(dy: &Mat, mask: &Option<Mat>) -> Mat {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

pub fn encoder_block_backward(
    cache: &EncoderCache,
    p: &EncoderParams,
    heads: usize,
    dy: ArrayView2<f64>,
    g: &mut EncoderParams,
) -> Mat {
    let dx3 = dy.to_owned();

    let dffn = through_mask(&dx3, &cache.ffn_mask);
    let dffn_in = feed_forward_backward(
        &cache.ffn,
        &p.ffn_in,
        &p.ffn_out,
        dffn.view(),
        &mut g.ffn_in,
        &mut g.ffn_in_bias,
        &mut g.ffn_out,
        &mut g.ffn_out_bias,
    );
    let dx2 = dx3
        + layer_norm_backward(
            &cache.ffn_norm,
            &p.ffn_norm.gain,
            dffn_in.view(),
            &mut g.ffn_norm.gain,
            &mut g.ffn_norm.bias,
        );

    let dattn = through_mask(&dx2, &cache.attn_mask);
    let dattn_in = multi_head_self_attention_backward(
        &cache.attn,
        &attention_params(p, heads),
        dattn.view(),
        AttentionGrads {
            w_query: &mut g.w_query,
            w_key: &mut g.w_key,
            w_value: &mut g.w_value,
            w_out: &mut g.w_out,
        },
    );
    let dx1 = dx2
        + layer_norm_backward(
            &cache.attn_norm,
            &p.attn_norm.gain,
            dattn_in.view(),
            &mut g.attn_norm.gain,
            &mut g.attn_norm.bias,
        );

    let dconv = through_mask(&dx1, &cache.conv_mask);
    let dconv_in = conv1d_backward(
        cache.conv_in.view(),
        &p.conv_taps,
        dconv.view(),
        &mut g.conv_taps,
        &mut g.conv_bias,
    );
    dx1 + layer_norm_backward(
        &cache.conv_norm,
        &p.conv_norm.gain,
        dconv_in.view(),
        &mut g.conv_norm.gain,
        &mut g.conv_norm.bias,
    )
}
