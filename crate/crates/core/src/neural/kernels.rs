//! Forward kernels and their reverse-mode counterparts.
//!
//! Every `*_backward` takes the forward inputs (or a cache) and the upstream
//! gradient, accumulates parameter gradients into the `d*` arguments, and
//! returns the gradient with respect to the kernel input.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;
pub type Vector = Array1<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn check(op: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::shape(op, detail()))
    }
}

// ---------------------------------------------------------------- projection

/// Row-wise affine map `x_i * w + b`.
pub fn project(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Mat> {
    check(
        "project",
        x.ncols() == w.nrows() && w.ncols() == b.len(),
        || format!("x {:?}, w {:?}, b {}", x.dim(), w.dim(), b.len()),
    )?;
    Ok(x.dot(&w) + b)
}

pub fn project_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    dw: &mut Mat,
    db: Option<&mut Vector>,
) -> Mat {
    *dw += &x.t().dot(&dy);
    if let Some(db) = db {
        *db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

// --------------------------------------------------------------- convolution

/// Row `i` of the result is row `i + offset` of `x`, zero outside the range.
fn shift_rows(x: ArrayView2<f64>, offset: isize) -> Mat {
    let n = x.nrows() as isize;
    let mut out = Mat::zeros(x.dim());
    let lo = (-offset).max(0);
    let hi = (n - offset).min(n);
    if lo < hi {
        out.slice_mut(s![lo..hi, ..])
            .assign(&x.slice(s![lo + offset..hi + offset, ..]));
    }
    out
}

const TAP_OFFSETS: [isize; 3] = [-1, 0, 1];

/// Width-3 same-length convolution with zero padding. `taps[k]` multiplies
/// the row at offset `k - 1`.
pub fn conv1d(x: ArrayView2<f64>, taps: &[Mat; 3], bias: ArrayView1<f64>) -> Result<Mat> {
    let d = x.ncols();
    check("conv1d", x.nrows() >= 1, || "empty input".into())?;
    check(
        "conv1d",
        taps.iter().all(|t| t.nrows() == d) && taps.iter().all(|t| t.ncols() == bias.len()),
        || {
            format!(
                "x {:?}, taps {:?}, bias {}",
                x.dim(),
                taps[0].dim(),
                bias.len()
            )
        },
    )?;
    let mut out = Mat::zeros((x.nrows(), bias.len()));
    for (tap, &off) in taps.iter().zip(&TAP_OFFSETS) {
        out += &shift_rows(x, off).dot(tap);
    }
    Ok(out + bias)
}

pub fn conv1d_backward(
    x: ArrayView2<f64>,
    taps: &[Mat; 3],
    dy: ArrayView2<f64>,
    dtaps: &mut [Mat; 3],
    dbias: &mut Vector,
) -> Mat {
    *dbias += &dy.sum_axis(Axis(0));
    let mut dx = Mat::zeros(x.dim());
    for ((tap, dtap), &off) in taps.iter().zip(dtaps.iter_mut()).zip(&TAP_OFFSETS) {
        *dtap += &shift_rows(x, off).t().dot(&dy);
        dx += &shift_rows(dy.dot(&tap.t()).view(), -off);
    }
    dx
}

// ------------------------------------------------------------------- softmax

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: ArrayView2<f64>) -> Mat {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Gradient through a row softmax given its output `y`.
pub fn softmax_rows_backward(y: ArrayView2<f64>, dy: ArrayView2<f64>) -> Mat {
    let dot = (&y * &dy).sum_axis(Axis(1)).insert_axis(Axis(1));
    &y * &(&dy - &dot)
}

/// Softmax over each column.
pub fn softmax_cols(m: ArrayView2<f64>) -> Mat {
    softmax_rows(m.t()).reversed_axes()
}

pub fn softmax_cols_backward(y: ArrayView2<f64>, dy: ArrayView2<f64>) -> Mat {
    softmax_rows_backward(y.t(), dy.t()).reversed_axes()
}

// --------------------------------------------------------- multi-head attention

pub struct AttentionCache {
    pub x: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Per-head attention probabilities, each n x n.
    pub probs: Vec<Mat>,
    pub concat: Mat,
}

pub struct AttentionParams<'a> {
    pub w_query: &'a Mat,
    pub w_key: &'a Mat,
    pub w_value: &'a Mat,
    pub w_out: &'a Mat,
    pub heads: usize,
}

/// Self multi-head attention: each head attends with scaled dot products over
/// its column slice of the projected queries, keys and values; the
/// concatenated heads go through the output projection.
pub fn multi_head_self_attention(x: ArrayView2<f64>, p: &AttentionParams<'_>) -> Result<Mat> {
    Ok(multi_head_self_attention_cached(x, p)?.0)
}

pub fn multi_head_self_attention_cached(
    x: ArrayView2<f64>,
    p: &AttentionParams<'_>,
) -> Result<(Mat, AttentionCache)> {
    let d = x.ncols();
    check(
        "multi_head_self_attention",
        p.heads > 0 && d.is_multiple_of(p.heads),
        || format!("width {d} not divisible by {} heads", p.heads),
    )?;
    for w in [p.w_query, p.w_key, p.w_value, p.w_out] {
        check("multi_head_self_attention", w.dim() == (d, d), || {
            format!("projection {:?} for width {d}", w.dim())
        })?;
    }
    let dk = d / p.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(p.w_query);
    let k = x.dot(p.w_key);
    let v = x.dot(p.w_value);
    let mut concat = Mat::zeros(x.dim());
    let mut probs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let attn = softmax_rows(scores.view());
        concat.slice_mut(cols).assign(&attn.dot(&v.slice(cols)));
        probs.push(attn);
    }
    let out = concat.dot(p.w_out);
    Ok((
        out,
        AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            concat,
        },
    ))
}

pub struct AttentionGrads<'a> {
    pub w_query: &'a mut Mat,
    pub w_key: &'a mut Mat,
    pub w_value: &'a mut Mat,
    pub w_out: &'a mut Mat,
}

pub fn multi_head_self_attention_backward(
    cache: &AttentionCache,
    p: &AttentionParams<'_>,
    dy: ArrayView2<f64>,
    g: AttentionGrads<'_>,
) -> Mat {
    let d = cache.x.ncols();
    let dk = d / p.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    *g.w_out += &cache.concat.t().dot(&dy);
    let dconcat = dy.dot(&p.w_out.t());
    let mut dq = Mat::zeros(cache.q.dim());
    let mut dk_ = Mat::zeros(cache.k.dim());
    let mut dv = Mat::zeros(cache.v.dim());
    for (h, attn) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let dhead = dconcat.slice(cols);
        let dattn = dhead.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&attn.t().dot(&dhead));
        let dscores = softmax_rows_backward(attn.view(), dattn.view()) * scale;
        dq.slice_mut(cols)
            .assign(&dscores.dot(&cache.k.slice(cols)));
        dk_.slice_mut(cols)
            .assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    *g.w_query += &cache.x.t().dot(&dq);
    *g.w_key += &cache.x.t().dot(&dk_);
    *g.w_value += &cache.x.t().dot(&dv);
    dq.dot(&p.w_query.t()) + dk_.dot(&p.w_key.t()) + dv.dot(&p.w_value.t())
}

// -------------------------------------------------------------- feed-forward

pub struct FeedForwardCache {
    pub x: Mat,
    pub hidden: Mat,
}

pub fn feed_forward(
    x: ArrayView2<f64>,
    w1: &Mat,
    b1: &Vector,
    w2: &Mat,
    b2: &Vector,
) -> Result<Mat> {
    Ok(feed_forward_cached(x, w1, b1, w2, b2)?.0)
}

pub fn feed_forward_cached(
    x: ArrayView2<f64>,
    w1: &Mat,
    b1: &Vector,
    w2: &Mat,
    b2: &Vector,
) -> Result<(Mat, FeedForwardCache)> {
    check(
        "feed_forward",
        x.ncols() == w1.nrows()
            && w1.ncols() == b1.len()
            && b1.len() == w2.nrows()
            && w2.ncols() == b2.len(),
        || format!("x {:?}, w1 {:?}, w2 {:?}", x.dim(), w1.dim(), w2.dim()),
    )?;
    let hidden = x.dot(w1) + b1;
    let out = hidden.mapv(|v| v.max(0.0)).dot(w2) + b2;
    Ok((
        out,
        FeedForwardCache {
            x: x.to_owned(),
            hidden,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn feed_forward_backward(
    cache: &FeedForwardCache,
    w1: &Mat,
    w2: &Mat,
    dy: ArrayView2<f64>,
    dw1: &mut Mat,
    db1: &mut Vector,
    dw2: &mut Mat,
    db2: &mut Vector,
) -> Mat {
    let relu = cache.hidden.mapv(|v| v.max(0.0));
    *dw2 += &relu.t().dot(&dy);
    *db2 += &dy.sum_axis(Axis(0));
    let mut dhidden = dy.dot(&w2.t());
    Zip::from(&mut dhidden)
        .and(&cache.hidden)
        .for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
    *dw1 += &cache.x.t().dot(&dhidden);
    *db1 += &dhidden.sum_axis(Axis(0));
    dhidden.dot(&w1.t())
}

// ---------------------------------------------------------------- layer norm

pub struct LayerNormCache {
    pub normalized: Mat,
    pub inv_std: Vector,
}

pub fn layer_norm(x: ArrayView2<f64>, gain: &Vector, bias: &Vector, eps: f64) -> Mat {
    layer_norm_cached(x, gain, bias, eps).0
}

/// Per-row `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
pub fn layer_norm_cached(
    x: ArrayView2<f64>,
    gain: &Vector,
    bias: &Vector,
    eps: f64,
) -> (Mat, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.to_owned();
    let mut inv_std = Vector::zeros(x.nrows());
    for (mut row, istd) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *istd = 1.0 / (var + eps).sqrt();
        row *= *istd;
    }
    let out = &normalized * gain + bias;
    (
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    )
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Vector,
    dy: ArrayView2<f64>,
    dgain: &mut Vector,
    dbias: &mut Vector,
) -> Mat {
    *dgain += &(&dy * &cache.normalized).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = &dy * gain;
    let d = dy.ncols() as f64;
    let mut dx = Mat::zeros(dy.dim());
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(i);
        let xh = cache.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let istd = cache.inv_std[i];
        Zip::from(&mut row)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = istd * (gi - mean_g - xi * mean_gx));
    }
    dx
}

// ------------------------------------------------------------ cross attention

/// `S[i][j] = w0 . [q_j, c_i, q_j * c_i]` for context row `i`, question row `j`.
pub fn trilinear_similarity(
    q: ArrayView2<f64>,
    c: ArrayView2<f64>,
    w0: ArrayView1<f64>,
) -> Result<Mat> {
    let d = q.ncols();
    check(
        "trilinear_similarity",
        c.ncols() == d && w0.len() == 3 * d,
        || format!("q {:?}, c {:?}, w0 {}", q.dim(), c.dim(), w0.len()),
    )?;
    let (wq, wc, wqc) = (
        w0.slice(s![..d]),
        w0.slice(s![d..2 * d]),
        w0.slice(s![2 * d..]),
    );
    let q_term = q.dot(&wq);
    let c_term = c.dot(&wc);
    let mut s = (&c * &wqc).dot(&q.t());
    s += &q_term.insert_axis(Axis(0));
    s += &c_term.insert_axis(Axis(1));
    Ok(s)
}

/// Returns `(dq, dc)` and accumulates into `dw0`.
pub fn trilinear_similarity_backward(
    q: ArrayView2<f64>,
    c: ArrayView2<f64>,
    w0: ArrayView1<f64>,
    ds: ArrayView2<f64>,
    dw0: &mut Vector,
) -> (Mat, Mat) {
    let d = q.ncols();
    let (wq, wc, wqc) = (
        w0.slice(s![..d]),
        w0.slice(s![d..2 * d]),
        w0.slice(s![2 * d..]),
    );
    let col_sum = ds.sum_axis(Axis(0)); // per question row
    let row_sum = ds.sum_axis(Axis(1)); // per context row
    let ds_q = ds.dot(&q); // n x d
    let dst_c = ds.t().dot(&c); // m x d

    dw0.slice_mut(s![..d]).scaled_add(1.0, &q.t().dot(&col_sum));
    dw0.slice_mut(s![d..2 * d])
        .scaled_add(1.0, &c.t().dot(&row_sum));
    dw0.slice_mut(s![2 * d..])
        .scaled_add(1.0, &(&c * &ds_q).sum_axis(Axis(0)));

    let dq = col_sum.insert_axis(Axis(1)).dot(&wq.insert_axis(Axis(0))) + &dst_c * &wqc;
    let dc = row_sum.insert_axis(Axis(1)).dot(&wc.insert_axis(Axis(0))) + &ds_q * &wqc;
    (dq, dc)
}

#[derive(Debug, Clone)]
pub struct AttentionMatrices {
    /// Raw similarity, n x m.
    pub similarity: Mat,
    /// Row-softmaxed similarity (over question positions).
    pub row_probs: Mat,
    /// Column-softmaxed similarity (over context positions).
    pub col_probs: Mat,
    /// Context-to-query attention, n x d.
    pub a: Mat,
    /// Query-to-context attention, n x d.
    pub b: Mat,
}

pub fn cross_attention(
    q: ArrayView2<f64>,
    c: ArrayView2<f64>,
    s: ArrayView2<f64>,
) -> Result<AttentionMatrices> {
    check(
        "cross_attention",
        s.dim() == (c.nrows(), q.nrows()) && q.ncols() == c.ncols(),
        || format!("q {:?}, c {:?}, s {:?}", q.dim(), c.dim(), s.dim()),
    )?;
    let row_probs = softmax_rows(s);
    let col_probs = softmax_cols(s);
    let a = row_probs.dot(&q);
    let b = row_probs.dot(&col_probs.t().dot(&c));
    Ok(AttentionMatrices {
        similarity: s.to_owned(),
        row_probs,
        col_probs,
        a,
        b,
    })
}

/// Returns `(dq, dc, ds)`.
pub fn cross_attention_backward(
    q: ArrayView2<f64>,
    c: ArrayView2<f64>,
    att: &AttentionMatrices,
    da: ArrayView2<f64>,
    db: ArrayView2<f64>,
) -> (Mat, Mat, Mat) {
    let query_summary = att.col_probs.t().dot(&c); // m x d
    let drow = da.dot(&q.t()) + db.dot(&query_summary.t());
    let dq = att.row_probs.t().dot(&da);
    let dsummary = att.row_probs.t().dot(&db); // m x d
    let dcol = c.dot(&dsummary.t()); // n x m
    let dc = att.col_probs.dot(&dsummary);
    let ds = softmax_rows_backward(att.row_probs.view(), drow.view())
        + softmax_cols_backward(att.col_probs.view(), dcol.view());
    (dq, dc, ds)
}

// --------------------------------------------------------------------- fusion

/// Per position `[c, a, c * a, c * b]`.
pub fn fusion_input(c: ArrayView2<f64>, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Mat> {
    check("fuse", a.dim() == c.dim() && b.dim() == c.dim(), || {
        format!("c {:?}, a {:?}, b {:?}", c.dim(), a.dim(), b.dim())
    })?;
    let ca = &c * &a;
    let cb = &c * &b;
    Ok(concatenate(Axis(1), &[c, a, ca.view(), cb.view()]).expect("equal row counts"))
}

pub fn fuse(
    c: ArrayView2<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    w: &Mat,
    bias: &Vector,
) -> Result<Mat> {
    project(fusion_input(c, a, b)?.view(), w.view(), bias.view())
}

/// Splits the gradient of the fusion input back onto `(dc, da, db)`.
pub fn fusion_input_backward(
    c: ArrayView2<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    dz: ArrayView2<f64>,
) -> (Mat, Mat, Mat) {
    let d = c.ncols();
    let part = |k: usize| dz.slice(s![.., k * d..(k + 1) * d]);
    let dc = &part(0) + &(&part(2) * &a) + &(&part(3) * &b);
    let da = &part(1) + &(&part(2) * &c);
    let db = &part(3) * &c;
    (dc, da, db)
}

// ------------------------------------------------------------ pooling, cosine

/// Component-wise maximum over rows, with the winning row per column (first
/// row on ties).
pub fn max_pool(x: ArrayView2<f64>) -> Result<(Vector, Vec<usize>)> {
    check("max_pool", x.nrows() >= 1, || "no rows".into())?;
    let mut best = x.row(0).to_owned();
    let mut arg = vec![0usize; x.ncols()];
    for (i, row) in x.rows().into_iter().enumerate().skip(1) {
        for (j, &v) in row.iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    Ok((best, arg))
}

pub fn max_pool_backward(rows: usize, arg: &[usize], dv: ArrayView1<f64>) -> Mat {
    let mut dx = Mat::zeros((rows, arg.len()));
    for (j, &i) in arg.iter().enumerate() {
        dx[[i, j]] = dv[j];
    }
    dx
}

pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    check("cosine", u.len() == v.len(), || {
        format!("{} vs {}", u.len(), v.len())
    })?;
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(u.dot(&v) / (nu * nv))
}

/// Gradients of `cosine(u, v)` with respect to `u` and `v`.
pub fn cosine_backward(u: ArrayView1<f64>, v: ArrayView1<f64>) -> (Vector, Vector) {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    let cos = u.dot(&v) / (nu * nv);
    let du = &v / (nu * nv) - &(&u * (cos / (nu * nu)));
    let dv = &u / (nu * nv) - &(&v * (cos / (nv * nv)));
    (du, dv)
}

// ------------------------------------------------------------------- dropout

/// Inverted dropout mask: kept entries are scaled by `1 / (1 - rate)`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut dyn rand::RngCore) -> Mat {
    use rand::Rng;
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn project_examples() {
        let x = arr2(&[[1.0, 2.0]]);
        let eye = Mat::eye(2);
        assert_eq!(
            project(x.view(), eye.view(), arr1(&[0.0, 0.0]).view()).unwrap(),
            x
        );
        let zero = Mat::zeros((2, 3));
        let c = arr1(&[1.0, -2.0, 3.0]);
        let out = project(
            arr2(&[[5.0, 6.0], [7.0, 8.0]]).view(),
            zero.view(),
            c.view(),
        )
        .unwrap();
        assert!(out.rows().into_iter().all(|r| r == c));
        let two = &eye * 2.0;
        assert_eq!(
            project(x.view(), two.view(), arr1(&[0.0, 0.0]).view()).unwrap(),
            arr2(&[[2.0, 4.0]])
        );
        assert!(matches!(
            project(x.view(), zero.t(), c.view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv_examples() {
        let x = arr2(&[[1.0, -1.0], [2.0, 0.5], [3.0, 4.0]]);
        let identity = [Mat::zeros((2, 2)), Mat::eye(2), Mat::zeros((2, 2))];
        assert_eq!(
            conv1d(x.view(), &identity, Vector::zeros(2).view()).unwrap(),
            x
        );

        let ones = [arr2(&[[1.0]]), arr2(&[[1.0]]), arr2(&[[1.0]])];
        let x1 = arr2(&[[1.0], [2.0], [3.0]]);
        assert_eq!(
            conv1d(x1.view(), &ones, arr1(&[0.0]).view()).unwrap(),
            arr2(&[[3.0], [6.0], [5.0]])
        );

        let zeros = [Mat::zeros((2, 2)), Mat::zeros((2, 2)), Mat::zeros((2, 2))];
        let out = conv1d(x.view(), &zeros, arr1(&[0.5, -0.5]).view()).unwrap();
        assert!(out.rows().into_iter().all(|r| r == arr1(&[0.5, -0.5])));
    }

    #[test]
    fn conv_taps_are_oriented() {
        // only the previous-row tap is non-zero
        let taps = [arr2(&[[1.0]]), arr2(&[[0.0]]), arr2(&[[0.0]])];
        let x = arr2(&[[1.0], [2.0], [3.0]]);
        assert_eq!(
            conv1d(x.view(), &taps, arr1(&[0.0]).view()).unwrap(),
            arr2(&[[0.0], [1.0], [2.0]])
        );
    }

    #[test]
    fn softmax_examples() {
        let uniform = softmax_rows(arr2(&[[3.0, 3.0, 3.0, 3.0]]).view());
        assert!(uniform.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let r = softmax_rows(arr2(&[[0.7071, 0.0]]).view());
        assert!(close(&r, &arr2(&[[0.6698, 0.3302]]), 1e-4));
        assert_eq!(softmax_rows(arr2(&[[-7.5]]).view()), arr2(&[[1.0]]));
        // large values stay finite
        let big = softmax_rows(arr2(&[[1000.0, 1000.0]]).view());
        assert!(close(&big, &arr2(&[[0.5, 0.5]]), 1e-12));
    }

    fn identity_attention(d: usize) -> [Mat; 4] {
        [Mat::eye(d), Mat::eye(d), Mat::eye(d), Mat::eye(d)]
    }

    fn attn(x: &Mat, w: &[Mat; 4], heads: usize) -> Mat {
        let p = AttentionParams {
            w_query: &w[0],
            w_key: &w[1],
            w_value: &w[2],
            w_out: &w[3],
            heads,
        };
        multi_head_self_attention(x.view(), &p).unwrap()
    }

    #[test]
    fn attention_examples() {
        let w1 = identity_attention(3);
        let x = arr2(&[[0.3, -1.0, 2.0]]);
        assert!(close(&attn(&x, &w1, 1), &x, 1e-15));

        let w2 = identity_attention(2);
        let out = attn(&Mat::eye(2), &w2, 1);
        assert!(close(
            &out,
            &arr2(&[[0.6698, 0.3302], [0.3302, 0.6698]]),
            1e-4
        ));

        let x = arr2(&[[0.5, 1.5], [0.5, 1.5]]);
        assert!(close(&attn(&x, &w2, 1), &x, 1e-15));
        assert!(close(&attn(&x, &w2, 2), &x, 1e-15));
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let w = identity_attention(3);
        let p = AttentionParams {
            w_query: &w[0],
            w_key: &w[1],
            w_value: &w[2],
            w_out: &w[3],
            heads: 2,
        };
        assert!(multi_head_self_attention(Mat::eye(3).view(), &p).is_err());
    }

    #[test]
    fn feed_forward_examples() {
        let eye = Mat::eye(2);
        let z = Vector::zeros(2);
        let x = arr2(&[[0.0, 1.5], [2.0, 3.0]]);
        assert_eq!(feed_forward(x.view(), &eye, &z, &eye, &z).unwrap(), x);
        let neg = arr2(&[[-1.0, -0.1]]);
        assert_eq!(
            feed_forward(neg.view(), &eye, &z, &eye, &z).unwrap(),
            Mat::zeros((1, 2))
        );
        let out = feed_forward(
            arr2(&[[1.0]]).view(),
            &arr2(&[[2.0]]),
            &arr1(&[-1.0]),
            &arr2(&[[3.0]]),
            &arr1(&[0.0]),
        )
        .unwrap();
        assert_eq!(out, arr2(&[[3.0]]));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = arr1(&[1.0, 1.0]);
        let zeros = arr1(&[0.0, 0.0]);
        let c = layer_norm(arr2(&[[4.0, 4.0]]).view(), &ones, &zeros, LAYER_NORM_EPS);
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        let r = layer_norm(arr2(&[[1.0, -1.0]]).view(), &ones, &zeros, LAYER_NORM_EPS);
        assert!(close(&r, &arr2(&[[1.0, -1.0]]), 1e-5));
        let r = layer_norm(arr2(&[[2.0, 0.0]]).view(), &ones, &ones, LAYER_NORM_EPS);
        assert!(close(&r, &arr2(&[[2.0, 0.0]]), 1e-5));
    }

    #[test]
    fn trilinear_examples() {
        let q = arr2(&[[1.0, 0.0]]);
        let c = arr2(&[[0.0, 1.0]]);
        let ones = Vector::ones(6);
        assert_eq!(
            trilinear_similarity(q.view(), c.view(), ones.view()).unwrap(),
            arr2(&[[2.0]])
        );
        let zero = Vector::zeros(6);
        let s = trilinear_similarity(
            Mat::ones((3, 2)).view(),
            Mat::ones((4, 2)).view(),
            zero.view(),
        )
        .unwrap();
        assert_eq!(s, Mat::zeros((4, 3)));
        let both = arr2(&[[1.0, 1.0]]);
        assert_eq!(
            trilinear_similarity(both.view(), both.view(), ones.view()).unwrap(),
            arr2(&[[6.0]])
        );
    }

    #[test]
    fn trilinear_orientation() {
        // S is context rows by question columns
        let q = arr2(&[[1.0], [2.0], [3.0]]);
        let c = arr2(&[[10.0], [20.0]]);
        let w = arr1(&[1.0, 0.0, 0.0]);
        let s = trilinear_similarity(q.view(), c.view(), w.view()).unwrap();
        assert_eq!(s, arr2(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]));
    }

    #[test]
    fn cross_attention_examples() {
        let q = arr2(&[[0.2, -0.4]]);
        let c = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let att =
            cross_attention(q.view(), c.view(), arr2(&[[0.3], [-1.0], [2.0]]).view()).unwrap();
        assert!(att.a.rows().into_iter().all(|r| r == q.row(0)));

        let one_c = arr2(&[[7.0, -3.0]]);
        let att = cross_attention(q.view(), one_c.view(), arr2(&[[0.9]]).view()).unwrap();
        assert!(close(&att.b, &one_c, 1e-15));

        let c2 = Mat::eye(2);
        let att = cross_attention(q.view(), c2.view(), Mat::zeros((2, 1)).view()).unwrap();
        assert!(close(&att.b, &arr2(&[[0.5, 0.5], [0.5, 0.5]]), 1e-15));
    }

    #[test]
    fn fusion_examples() {
        let c = arr2(&[[1.0, 2.0]]);
        let a = arr2(&[[3.0, 4.0]]);
        let b = arr2(&[[0.0, 1.0]]);
        assert_eq!(
            fusion_input(c.view(), a.view(), b.view()).unwrap(),
            arr2(&[[1.0, 2.0, 3.0, 4.0, 3.0, 8.0, 0.0, 2.0]])
        );
        let z = Mat::zeros((1, 2));
        assert_eq!(
            fusion_input(z.view(), a.view(), b.view()).unwrap(),
            arr2(&[[0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]])
        );
        // selector projection keeps the first d coordinates
        let mut sel = Mat::zeros((8, 2));
        sel[[0, 0]] = 1.0;
        sel[[1, 1]] = 1.0;
        let x = arr2(&[[0.5, -2.0], [1.0, 3.0]]);
        let out = fuse(x.view(), x.view(), x.view(), &sel, &Vector::zeros(2)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn pooling_and_cosine() {
        let row = arr2(&[[1.0, -2.0, 3.0]]);
        assert_eq!(max_pool(row.view()).unwrap().0, row.row(0));
        let (v, arg) = max_pool(arr2(&[[1.0, 5.0], [2.0, 5.0]]).view()).unwrap();
        assert_eq!(v, arr1(&[2.0, 5.0]));
        assert_eq!(arg, vec![1, 0]);
        let x = arr1(&[0.3, -4.0, 2.0]);
        assert!((cosine(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-15);
        let c = cosine(arr1(&[1.0, 1.0]).view(), arr1(&[1.0, 0.0]).view()).unwrap();
        assert!((c - 0.7071).abs() < 1e-4);
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!(matches!(
            cosine(arr1(&[0.0, 0.0]).view(), x.slice(s![..2])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn dropout_mask_is_inverted() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = dropout_mask((50, 40), 0.3, &mut rng);
        let keep = 1.0 / 0.7;
        assert!(m.iter().all(|&v| v == 0.0 || v == keep));
        let frac = m.iter().filter(|&&v| v == 0.0).count() as f64 / 2000.0;
        assert!((frac - 0.3).abs() < 0.05);
    }
}
