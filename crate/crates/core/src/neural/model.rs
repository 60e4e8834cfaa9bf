//! The full scorer: question and context encoders, trilinear cross-attention,
//! fusion, a second context encoder, max pooling and cosine similarity.

use std::ops::Range;

use ndarray::{s, ArrayView2};

use super::encoder::{encoder_block_backward, encoder_block_cached, Dropout, EncoderCache};
use super::kernels::{
    cosine, cosine_backward, cross_attention, cross_attention_backward, fusion_input,
    fusion_input_backward, max_pool, max_pool_backward, project, project_backward,
    trilinear_similarity, trilinear_similarity_backward, AttentionMatrices, Mat, Vector,
};
use super::weights::ModelWeights;
use crate::error::{Error, Result};

/// Intermediate values of one forward pass, enough to run it backwards.
pub struct ScoreTrace {
    question_emb: Mat,
    context_emb: Mat,
    question_cache: EncoderCache,
    context_cache: EncoderCache,
    fused_cache: EncoderCache,
    question_enc: Mat,
    context_enc: Mat,
    attention: AttentionMatrices,
    fusion_in: Mat,
    fused_out: Mat,
    question_vec: Vector,
    question_arg: Vec<usize>,
    context_vec: Vector,
    context_arg: Vec<usize>,
    pub score: f64,
}

impl ScoreTrace {
    /// Context-by-question similarity matrix.
    pub fn attention(&self) -> &AttentionMatrices {
        &self.attention
    }

    pub fn question_vector(&self) -> &Vector {
        &self.question_vec
    }

    pub fn context_vector(&self) -> &Vector {
        &self.context_vec
    }

    /// Every discrete branch taken by the pass: ReLU signs and max-pool
    /// winners. Two passes with equal patterns lie on the same smooth piece.
    pub fn branch_pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let mut relu = Vec::new();
        for c in [&self.question_cache, &self.context_cache, &self.fused_cache] {
            c.relu_pattern(&mut relu);
        }
        let mut args = self.question_arg.clone();
        args.extend(&self.context_arg);
        (relu, args)
    }
}

/// Scores one embedded sequence. `question` and `context` are row ranges of
/// `emb`. With `dropout` set the pass is a training pass.
pub fn forward(
    w: &ModelWeights,
    emb: ArrayView2<f64>,
    question: Range<usize>,
    context: Range<usize>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<ScoreTrace> {
    if emb.ncols() != w.dims.emb_dim {
        return Err(Error::DimensionMismatch {
            expected: w.dims.emb_dim,
            found: emb.ncols(),
        });
    }
    if question.is_empty()
        || context.is_empty()
        || question.end > emb.nrows()
        || context.end > emb.nrows()
    {
        return Err(Error::shape(
            "score",
            format!(
                "rows {question:?} / {context:?} of a {}-row embedding",
                emb.nrows()
            ),
        ));
    }
    let heads = w.dims.heads;
    let question_emb = emb.slice(s![question, ..]).to_owned();
    let context_emb = emb.slice(s![context, ..]).to_owned();

    let qx = project(
        question_emb.view(),
        w.input_proj.view(),
        w.input_bias.view(),
    )?;
    let cx = project(context_emb.view(), w.input_proj.view(), w.input_bias.view())?;
    let (question_enc, question_cache) = encoder_block_cached(
        qx.view(),
        &w.question_encoder,
        heads,
        dropout.as_deref_mut(),
    )?;
    let (context_enc, context_cache) =
        encoder_block_cached(cx.view(), &w.context_encoder, heads, dropout.as_deref_mut())?;

    let sim = trilinear_similarity(question_enc.view(), context_enc.view(), w.trilinear.view())?;
    let attention = cross_attention(question_enc.view(), context_enc.view(), sim.view())?;
    let fusion_in = fusion_input(context_enc.view(), attention.a.view(), attention.b.view())?;
    let fused = project(fusion_in.view(), w.fusion_proj.view(), w.fusion_bias.view())?;
    let (fused_out, fused_cache) =
        encoder_block_cached(fused.view(), &w.fused_encoder, heads, dropout)?;

    let (question_vec, question_arg) = max_pool(question_enc.view())?;
    let (context_vec, context_arg) = max_pool(fused_out.view())?;
    let score = cosine(question_vec.view(), context_vec.view())?;

    Ok(ScoreTrace {
        question_emb,
        context_emb,
        question_cache,
        context_cache,
        fused_cache,
        question_enc,
        context_enc,
        attention,
        fusion_in,
        fused_out,
        question_vec,
        question_arg,
        context_vec,
        context_arg,
        score,
    })
}

/// Accumulates `dscore * d(score)/d(weights)` into `grads`.
pub fn backward(w: &ModelWeights, t: &ScoreTrace, dscore: f64, grads: &mut ModelWeights) {
    if dscore == 0.0 {
        return;
    }
    let heads = w.dims.heads;
    let (dqv, dcv) = cosine_backward(t.question_vec.view(), t.context_vec.view());
    let mut dq_enc = max_pool_backward(
        t.question_enc.nrows(),
        &t.question_arg,
        (dqv * dscore).view(),
    );
    let dfused_out = max_pool_backward(t.fused_out.nrows(), &t.context_arg, (dcv * dscore).view());

    let dfused = encoder_block_backward(
        &t.fused_cache,
        &w.fused_encoder,
        heads,
        dfused_out.view(),
        &mut grads.fused_encoder,
    );
    let dfusion_in = project_backward(
        t.fusion_in.view(),
        w.fusion_proj.view(),
        dfused.view(),
        &mut grads.fusion_proj,
        Some(&mut grads.fusion_bias),
    );
    let att = &t.attention;
    let (mut dc_enc, da, db) = fusion_input_backward(
        t.context_enc.view(),
        att.a.view(),
        att.b.view(),
        dfusion_in.view(),
    );
    let (dq_att, dc_att, dsim) = cross_attention_backward(
        t.question_enc.view(),
        t.context_enc.view(),
        att,
        da.view(),
        db.view(),
    );
    let (dq_tri, dc_tri) = trilinear_similarity_backward(
        t.question_enc.view(),
        t.context_enc.view(),
        w.trilinear.view(),
        dsim.view(),
        &mut grads.trilinear,
    );
    dq_enc += &(dq_att + dq_tri);
    dc_enc += &(dc_att + dc_tri);

    let dqx = encoder_block_backward(
        &t.question_cache,
        &w.question_encoder,
        heads,
        dq_enc.view(),
        &mut grads.question_encoder,
    );
    let dcx = encoder_block_backward(
        &t.context_cache,
        &w.context_encoder,
        heads,
        dc_enc.view(),
        &mut grads.context_encoder,
    );
    project_backward(
        t.question_emb.view(),
        w.input_proj.view(),
        dqx.view(),
        &mut grads.input_proj,
        Some(&mut grads.input_bias),
    );
    project_backward(
        t.context_emb.view(),
        w.input_proj.view(),
        dcx.view(),
        &mut grads.input_proj,
        Some(&mut grads.input_bias),
    );
}
