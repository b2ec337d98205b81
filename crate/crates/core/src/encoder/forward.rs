use alloc::vec::Vec;

use super::weights::{EncoderLayer, LayerNorm, Linear};
use super::{HiddenStates, ModelConfig, ModelWeights};
use crate::matrix::Matrix;
use crate::wordpiece::Encoding;

/// Added to attention scores of padded key positions.
pub const MASK_PENALTY: f32 = -10_000.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForwardError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {id} at position {position} is outside the vocabulary of size {vocab_size}")]
    IdOutOfRange {
        position: usize,
        id: u32,
        vocab_size: usize,
    },
    #[error("sequence of {len} tokens exceeds the model limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("attention length {attended} exceeds sequence length {len}")]
    InvalidAttentionLength { attended: usize, len: usize },
    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },
}

/// Where a layer norm sits in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormSite {
    Embeddings,
    Attention(usize),
    Output(usize),
}

/// Observation points inside a forward pass. Default methods do nothing.
pub trait ForwardHook {
    /// Row-softmaxed attention probabilities of one head (`seq × seq`).
    fn attention_probs(&mut self, _layer: usize, _head: usize, _probs: &Matrix) {}

    /// Layer-norm rows after centering and scaling, before gamma/beta.
    fn normalized(&mut self, _site: NormSite, _rows: &Matrix) {}
}

/// A hook that observes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl ForwardHook for NoHook {}

/// Runs the encoder in evaluation mode and keeps every hidden state.
///
/// Positions at or beyond `encoding.len` are padding: they are masked out
/// as attention keys but still get hidden states of their own.
pub fn forward(encoding: &Encoding, weights: &ModelWeights) -> Result<HiddenStates, ForwardError> {
    forward_with_hook(encoding, weights, &mut NoHook)
}

pub fn forward_with_hook<H: ForwardHook>(
    encoding: &Encoding,
    weights: &ModelWeights,
    hook: &mut H,
) -> Result<HiddenStates, ForwardError> {
    let layers = forward_ids(&encoding.ids, encoding.len, weights, hook)?;
    Ok(HiddenStates {
        layers,
        tokens: encoding.tokens.clone(),
        is_special: encoding.is_special.clone(),
    })
}

/// Forward pass over raw ids where only the first `attended` positions may be
/// attended to.
pub fn forward_ids<H: ForwardHook>(
    ids: &[u32],
    attended: usize,
    weights: &ModelWeights,
    hook: &mut H,
) -> Result<Vec<Matrix>, ForwardError> {
    let config = weights.config();
    let n = ids.len();
    if n == 0 {
        return Err(ForwardError::EmptySequence);
    }
    if n > config.max_position {
        return Err(ForwardError::SequenceTooLong {
            len: n,
            max: config.max_position,
        });
    }
    if attended > n {
        return Err(ForwardError::InvalidAttentionLength { attended, len: n });
    }
    if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id as usize >= config.vocab_size) {
        return Err(ForwardError::IdOutOfRange {
            position,
            id,
            vocab_size: config.vocab_size,
        });
    }

    let mask: Vec<f32> = (0..n).map(|j| if j < attended { 0.0 } else { MASK_PENALTY }).collect();

    let mut states = Vec::with_capacity(config.num_hidden_states());
    let mut hidden = embed(ids, weights, hook);
    check_finite(&hidden, 0)?;
    for (l, layer) in weights.layers.iter().enumerate() {
        states.push(hidden.clone());
        hidden = encoder_block(&hidden, &mask, layer, l, config, hook);
        check_finite(&hidden, l + 1)?;
    }
    states.push(hidden);
    Ok(states)
}

fn check_finite(m: &Matrix, layer: usize) -> Result<(), ForwardError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(ForwardError::NonFinite { layer })
    }
}

fn embed<H: ForwardHook>(ids: &[u32], weights: &ModelWeights, hook: &mut H) -> Matrix {
    let h = weights.config().hidden_size;
    let segment = weights.token_type_embeddings.row(0);
    let mut x = Matrix::zeros(ids.len(), h);
    for (pos, &id) in ids.iter().enumerate() {
        let word = weights.word_embeddings.row(id as usize);
        let position = weights.position_embeddings.row(pos);
        for (k, out) in x.row_mut(pos).iter_mut().enumerate() {
            *out = word[k] + position[k] + segment[k];
        }
    }
    layer_norm(
        &x,
        &weights.embedding_norm,
        weights.config().layer_norm_eps,
        NormSite::Embeddings,
        hook,
    )
}

fn encoder_block<H: ForwardHook>(
    x: &Matrix,
    mask: &[f32],
    layer: &EncoderLayer,
    index: usize,
    config: &ModelConfig,
    hook: &mut H,
) -> Matrix {
    let context = self_attention(x, mask, layer, index, config, hook);
    let mut attn = linear(&context, &layer.attention_output);
    add_in_place(&mut attn, x);
    let attn = layer_norm(
        &attn,
        &layer.attention_norm,
        config.layer_norm_eps,
        NormSite::Attention(index),
        hook,
    );

    let mut inter = linear(&attn, &layer.intermediate);
    inter.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
    let mut out = linear(&inter, &layer.output);
    add_in_place(&mut out, &attn);
    layer_norm(
        &out,
        &layer.output_norm,
        config.layer_norm_eps,
        NormSite::Output(index),
        hook,
    )
}

fn self_attention<H: ForwardHook>(
    x: &Matrix,
    mask: &[f32],
    layer: &EncoderLayer,
    index: usize,
    config: &ModelConfig,
    hook: &mut H,
) -> Matrix {
    let n = x.rows();
    let d = config.head_dim();
    let scale = 1.0 / libm::sqrtf(d as f32);
    let q = linear(x, &layer.query);
    let k = linear(x, &layer.key);
    let v = linear(x, &layer.value);
    let mut context = Matrix::zeros(n, config.hidden_size);
    let mut probs = Matrix::zeros(n, n);
    for head in 0..config.num_heads {
        let cols = head * d..(head + 1) * d;
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let row = probs.row_mut(i);
            for (j, score) in row.iter_mut().enumerate() {
                *score = dot(qi, &k.row(j)[cols.clone()]) * scale + mask[j];
            }
            softmax_in_place(row);
        }
        hook.attention_probs(index, head, &probs);
        for i in 0..n {
            let out = &mut context.row_mut(i)[cols.clone()];
            for j in 0..n {
                let p = probs.get(i, j);
                for (o, &vj) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += p * vj;
                }
            }
        }
    }
    context
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x · Wᵀ + b` with `W` in `[out, in]` layout.
fn linear(x: &Matrix, layer: &Linear) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), layer.out_features());
    for (i, xi) in x.iter_rows().enumerate() {
        for (o, out) in y.row_mut(i).iter_mut().enumerate() {
            *out = dot(xi, layer.weight.row(o)) + layer.bias[o];
        }
    }
    y
}

fn add_in_place(acc: &mut Matrix, other: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *a += b;
    }
}

fn layer_norm<H: ForwardHook>(x: &Matrix, params: &LayerNorm, eps: f32, site: NormSite, hook: &mut H) -> Matrix {
    let width = x.cols() as f32;
    let mut normalized = x.clone();
    for i in 0..x.rows() {
        let row = normalized.row_mut(i);
        let mean = row.iter().sum::<f32>() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / width;
        let inv = 1.0 / libm::sqrtf(var + eps);
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    hook.normalized(site, &normalized);
    let mut out = normalized;
    for i in 0..out.rows() {
        for ((v, g), b) in out.row_mut(i).iter_mut().zip(&params.gamma).zip(&params.beta) {
            *v = *v * g + b;
        }
    }
    out
}

fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Exact GELU, `x · Φ(x)`.
#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * core::f32::consts::FRAC_1_SQRT_2))
}
