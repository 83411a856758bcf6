//! Multi-head cross attention and the paired coattention stack.

use crate::diffcore::{
    add, add_key_mask, affine, concat, dropout, layer_norm, masked_mean, matmul_nn, matmul_nt,
    mean_pair, relu, scale, slice_cols, softmax, DiffError, Mask, Mode, ParamStore, Scalar, Tensor,
    Var,
};
use crate::granularity::LAYER_NORM_EPS;
use crate::rng::Rng;

use super::{init_dense, Dense, ModelError};

/// Query/key/value/output projections for one attention block.
pub struct MhaParams<T: Scalar> {
    pub query: Dense<T>,
    pub key: Dense<T>,
    pub value: Dense<T>,
    pub output: Dense<T>,
    pub heads: usize,
}

impl<T: Scalar> MhaParams<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        MhaParams {
            query: init_dense(store, &format!("{prefix}.q"), dim, dim, rng),
            key: init_dense(store, &format!("{prefix}.k"), dim, dim, rng),
            value: init_dense(store, &format!("{prefix}.v"), dim, dim, rng),
            output: init_dense(store, &format!("{prefix}.o"), dim, dim, rng),
            heads,
        }
    }
}

/// Scaled dot-product attention over `heads` subspaces of width D/H.
/// Masked key columns receive a large negative bias before the softmax;
/// head outputs are concatenated and output-projected.
pub fn multi_head_attention<T: Scalar>(
    queries: &Var<T>,
    keys_values: &Var<T>,
    mask_kv: &Mask,
    params: &MhaParams<T>,
) -> Result<Var<T>, DiffError> {
    let dim = queries.shape()[1];
    debug_assert_eq!(dim % params.heads, 0, "dim must be divisible by heads");
    let head_dim = dim / params.heads;
    let q = affine(queries, &params.query.w, &params.query.b)?;
    let k = affine(keys_values, &params.key.w, &params.key.b)?;
    let v = affine(keys_values, &params.value.w, &params.value.b)?;
    let inv_sqrt_d = 1.0 / (head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let off = h * head_dim;
        let qh = slice_cols(&q, off, head_dim)?;
        let kh = slice_cols(&k, off, head_dim)?;
        let vh = slice_cols(&v, off, head_dim)?;
        let scores = scale(&matmul_nt(&qh, &kh)?, inv_sqrt_d);
        let masked = add_key_mask(&scores, mask_kv)?;
        let probs = softmax(&masked);
        head_outputs.push(matmul_nn(&probs, &vh)?);
    }
    let merged = concat(&head_outputs)?;
    affine(&merged, &params.output.w, &params.output.b)
}

/// Attention followed by the classic transformer encoder sublayers:
/// residual + LN, position-wise FF, residual + LN.
pub struct EncoderBlock<T: Scalar> {
    pub attn: MhaParams<T>,
    pub ln1_gain: Var<T>,
    pub ln1_bias: Var<T>,
    pub ff_inner: Dense<T>,
    pub ff_outer: Dense<T>,
    pub ln2_gain: Var<T>,
    pub ln2_bias: Var<T>,
}

/// FF inner width as a multiple of the model dim.
pub const FF_RATIO: usize = 4;

impl<T: Scalar> EncoderBlock<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        let attn = MhaParams::new(store, &format!("{prefix}.attn"), dim, heads, rng);
        let ln1_gain = store.add(format!("{prefix}.ln1_gain"), Tensor::full(&[dim], T::one()));
        let ln1_bias = store.add(format!("{prefix}.ln1_bias"), Tensor::zeros(&[dim]));
        let ff_inner = init_dense(store, &format!("{prefix}.ff_inner"), dim, FF_RATIO * dim, rng);
        let ff_outer = init_dense(store, &format!("{prefix}.ff_outer"), FF_RATIO * dim, dim, rng);
        let ln2_gain = store.add(format!("{prefix}.ln2_gain"), Tensor::full(&[dim], T::one()));
        let ln2_bias = store.add(format!("{prefix}.ln2_bias"), Tensor::zeros(&[dim]));
        EncoderBlock {
            attn,
            ln1_gain,
            ln1_bias,
            ff_inner,
            ff_outer,
            ln2_gain,
            ln2_bias,
        }
    }

    pub fn forward(
        &self,
        queries: &Var<T>,
        keys_values: &Var<T>,
        mask_kv: &Mask,
        p_drop: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var<T>, ModelError> {
        let attended = multi_head_attention(queries, keys_values, mask_kv, &self.attn)?;
        let x = layer_norm(
            &add(&attended, queries)?,
            &self.ln1_gain,
            &self.ln1_bias,
            LAYER_NORM_EPS,
        )?;
        let inner = relu(&affine(&x, &self.ff_inner.w, &self.ff_inner.b)?);
        let inner = dropout(&inner, p_drop, mode, rng)?;
        let outer = affine(&inner, &self.ff_outer.w, &self.ff_outer.b)?;
        Ok(layer_norm(
            &add(&outer, &x)?,
            &self.ln2_gain,
            &self.ln2_bias,
            LAYER_NORM_EPS,
        )?)
    }
}

/// Paired cross-attention layers: branch A queries with the text-derived
/// stream over the speech-derived stream, branch B is the mirror image.
pub struct CoattentionStack<T: Scalar> {
    pub layers: Vec<(EncoderBlock<T>, EncoderBlock<T>)>,
}

/// The coattention layer is stacked three deep.
pub const COATTENTION_LAYERS: usize = 3;

impl<T: Scalar> CoattentionStack<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        let layers = (0..COATTENTION_LAYERS)
            .map(|i| {
                (
                    EncoderBlock::new(store, &format!("{prefix}.layer{i}.a"), dim, heads, rng),
                    EncoderBlock::new(store, &format!("{prefix}.layer{i}.b"), dim, heads, rng),
                )
            })
            .collect();
        CoattentionStack { layers }
    }
}

/// Run the coattention stack over a (text, speech) sequence pair, pool
/// each final branch sequence with its mask, and return the mean of the
/// two pooled vectors.
#[allow(clippy::too_many_arguments)]
pub fn coattention_forward<T: Scalar>(
    text: &Var<T>,
    text_mask: &Mask,
    speech: &Var<T>,
    speech_mask: &Mask,
    stack: &CoattentionStack<T>,
    p_drop: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var<T>, ModelError> {
    let mut a = text.clone();
    let mut b = speech.clone();
    for (block_a, block_b) in &stack.layers {
        let next_a = block_a.forward(&a, &b, speech_mask, p_drop, mode, rng)?;
        let next_b = block_b.forward(&b, &a, text_mask, p_drop, mode, rng)?;
        a = next_a;
        b = next_b;
    }
    let pooled_a = masked_mean(&a, text_mask)?;
    let pooled_b = masked_mean(&b, speech_mask)?;
    Ok(mean_pair(&pooled_a, &pooled_b)?)
}
