use rand::Rng as _;

use crate::diffcore::{DiffError, Mask, Scalar, Tensor, Var};
use crate::rng::Rng;

/// Forward-pass mode: dropout is active only in `Train`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Additive bias on masked attention logits. Large enough to zero the
/// softmax weight, small enough to stay finite in f32.
pub const MASK_BIAS: f64 = -1e9;

fn rows<T: Scalar>(t: &Tensor<T>) -> usize {
    t.leading_len()
}

fn shape_err(context: &str, expected: String, got: String) -> DiffError {
    DiffError::ShapeMismatch {
        context: context.into(),
        expected,
        got,
    }
}

/// out[.., j] = sum_i x[.., i] * w[i, j] + b[j], for x of rank 1 or 2.
pub fn affine<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>, DiffError> {
    let xv = x.clone_value();
    let wv = w.clone_value();
    let bv = b.clone_value();
    if wv.rank() != 2 || bv.rank() != 1 || bv.shape()[0] != wv.shape()[1] {
        return Err(shape_err(
            "affine weights",
            "W [in, out], b [out]".into(),
            format!("W {:?}, b {:?}", wv.shape(), bv.shape()),
        ));
    }
    if xv.rank() > 2 || xv.last_extent() != wv.shape()[0] {
        return Err(shape_err(
            "affine input",
            format!("x [.., {}]", wv.shape()[0]),
            format!("x {:?}", xv.shape()),
        ));
    }
    let (n_in, n_out) = (wv.shape()[0], wv.shape()[1]);
    let k = rows(&xv);
    let out_shape = if xv.rank() == 2 {
        vec![k, n_out]
    } else {
        vec![n_out]
    };
    let mut out = Tensor::zeros(&out_shape);
    for r in 0..k {
        let xr = xv.row(r);
        let or = out.row_mut(r);
        or.copy_from_slice(bv.data());
        for i in 0..n_in {
            let xi = xr[i];
            let wrow = wv.row(i);
            for j in 0..n_out {
                or[j] = or[j] + xi * wrow[j];
            }
        }
    }
    let need = [x.needs_grad(), w.needs_grad(), b.needs_grad()];
    let (xc, wc) = (xv.clone(), wv.clone());
    Ok(Var::from_op(
        out,
        vec![x.clone(), w.clone(), b.clone()],
        move |g| {
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(xc.shape());
                for r in 0..k {
                    let gr = g.row(r);
                    let dr = dx.row_mut(r);
                    for i in 0..n_in {
                        let wrow = wc.row(i);
                        let mut acc = T::zero();
                        for j in 0..n_out {
                            acc = acc + gr[j] * wrow[j];
                        }
                        dr[i] = acc;
                    }
                }
                dx
            });
            let dw = need[1].then(|| {
                let mut dw = Tensor::zeros(wc.shape());
                for r in 0..k {
                    let xr = xc.row(r);
                    let gr = g.row(r);
                    for i in 0..n_in {
                        let xi = xr[i];
                        let drow = dw.row_mut(i);
                        for j in 0..n_out {
                            drow[j] = drow[j] + xi * gr[j];
                        }
                    }
                }
                dw
            });
            let db = need[2].then(|| {
                let mut db = Tensor::zeros(&[n_out]);
                for r in 0..k {
                    let gr = g.row(r);
                    let dd = db.data_mut();
                    for j in 0..n_out {
                        dd[j] = dd[j] + gr[j];
                    }
                }
                db
            });
            vec![dx, dw, db]
        },
    ))
}

/// Elementwise max(0, x); subgradient at 0 is 0.
pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    let xv = x.clone_value();
    let out = xv.map(|v| if v > T::zero() { v } else { T::zero() });
    Var::from_op(out, vec![x.clone()], move |g| {
        vec![Some(g.zip_map(&xv, |gi, xi| {
            if xi > T::zero() {
                gi
            } else {
                T::zero()
            }
        }))]
    })
}

/// Row-wise softmax over the last axis, with max-subtraction for stability.
pub fn softmax<T: Scalar>(x: &Var<T>) -> Var<T> {
    let xv = x.clone_value();
    let mut out = Tensor::zeros(xv.shape());
    let n = xv.last_extent();
    for r in 0..rows(&xv) {
        let xr = xv.row(r);
        let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let or = out.row_mut(r);
        let mut sum = T::zero();
        for j in 0..n {
            let e = (xr[j] - max).exp();
            or[j] = e;
            sum = sum + e;
        }
        for v in or.iter_mut() {
            *v = *v / sum;
        }
    }
    let y = out.clone();
    Var::from_op(out, vec![x.clone()], move |g| {
        let mut dx = Tensor::zeros(y.shape());
        for r in 0..rows(&y) {
            let yr = y.row(r);
            let gr = g.row(r);
            let dot = yr
                .iter()
                .zip(gr)
                .fold(T::zero(), |acc, (&yi, &gi)| acc + yi * gi);
            let dr = dx.row_mut(r);
            for j in 0..n {
                dr[j] = yr[j] * (gr[j] - dot);
            }
        }
        vec![Some(dx)]
    })
}

/// Per-vector normalization over the last axis followed by gain and bias.
pub fn layer_norm<T: Scalar>(
    x: &Var<T>,
    gain: &Var<T>,
    bias: &Var<T>,
    eps: f64,
) -> Result<Var<T>, DiffError> {
    let xv = x.clone_value();
    let d = xv.last_extent();
    if d < 2 {
        return Err(shape_err(
            "layer_norm",
            "last extent >= 2".into(),
            format!("{:?}", xv.shape()),
        ));
    }
    let gv = gain.clone_value();
    let bv = bias.clone_value();
    if gv.shape() != [d] || bv.shape() != [d] {
        return Err(shape_err(
            "layer_norm params",
            format!("gain/bias [{d}]"),
            format!("{:?}/{:?}", gv.shape(), bv.shape()),
        ));
    }
    let eps = T::from_f64(eps);
    let dn = T::from_f64(d as f64);
    let k = rows(&xv);
    let mut out = Tensor::zeros(xv.shape());
    let mut xhat = Tensor::zeros(xv.shape());
    let mut inv_std = vec![T::zero(); k];
    for r in 0..k {
        let xr = xv.row(r);
        let mean = xr.iter().copied().fold(T::zero(), |a, v| a + v) / dn;
        let var = xr
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / dn;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        let hr = xhat.row_mut(r);
        let or = out.row_mut(r);
        for j in 0..d {
            hr[j] = (xr[j] - mean) * inv;
            or[j] = gv.data()[j] * hr[j] + bv.data()[j];
        }
    }
    let need = [x.needs_grad(), gain.needs_grad(), bias.needs_grad()];
    Ok(Var::from_op(
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        move |g| {
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(xhat.shape());
                for r in 0..k {
                    let hr = xhat.row(r);
                    let gr = g.row(r);
                    let mut mean_d = T::zero();
                    let mut mean_dh = T::zero();
                    for j in 0..d {
                        let dj = gv.data()[j] * gr[j];
                        mean_d = mean_d + dj;
                        mean_dh = mean_dh + dj * hr[j];
                    }
                    mean_d = mean_d / dn;
                    mean_dh = mean_dh / dn;
                    let dr = dx.row_mut(r);
                    for j in 0..d {
                        let dj = gv.data()[j] * gr[j];
                        dr[j] = inv_std[r] * (dj - mean_d - hr[j] * mean_dh);
                    }
                }
                dx
            });
            let dgain = need[1].then(|| {
                let mut dg = Tensor::zeros(&[d]);
                for r in 0..k {
                    let hr = xhat.row(r);
                    let gr = g.row(r);
                    let dd = dg.data_mut();
                    for j in 0..d {
                        dd[j] = dd[j] + gr[j] * hr[j];
                    }
                }
                dg
            });
            let dbias = need[2].then(|| {
                let mut db = Tensor::zeros(&[d]);
                for r in 0..k {
                    let gr = g.row(r);
                    let dd = db.data_mut();
                    for j in 0..d {
                        dd[j] = dd[j] + gr[j];
                    }
                }
                db
            });
            vec![dx, dgain, dbias]
        },
    ))
}

/// Inverted dropout: train mode zeroes elements with probability `p` and
/// scales survivors by 1/(1-p); eval mode is the identity.
pub fn dropout<T: Scalar>(
    x: &Var<T>,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var<T>, DiffError> {
    if !(0.0..1.0).contains(&p) {
        return Err(DiffError::InvalidProbability(p));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let xv = x.clone_value();
    let keep: Vec<bool> = (0..xv.len()).map(|_| rng.gen::<f64>() >= p).collect();
    let scale = T::from_f64(1.0 / (1.0 - p));
    let mut out = xv.clone();
    for (v, &k) in out.data_mut().iter_mut().zip(&keep) {
        *v = if k { *v * scale } else { T::zero() };
    }
    Ok(Var::from_op(out, vec![x.clone()], move |g| {
        let mut dx = g.clone();
        for (v, &k) in dx.data_mut().iter_mut().zip(&keep) {
            *v = if k { *v * scale } else { T::zero() };
        }
        vec![Some(dx)]
    }))
}

/// Mean of the unmasked rows of a [K, D] sequence.
pub fn masked_mean<T: Scalar>(x: &Var<T>, mask: &Mask) -> Result<Var<T>, DiffError> {
    let xv = x.clone_value();
    if xv.rank() != 2 || xv.shape()[0] != mask.len() {
        return Err(shape_err(
            "masked_mean",
            format!("x [{}, D]", mask.len()),
            format!("{:?}", xv.shape()),
        ));
    }
    let l = mask.count_unmasked();
    if l == 0 {
        return Err(DiffError::EmptySequence {
            context: "masked_mean".into(),
        });
    }
    let d = xv.shape()[1];
    let inv = T::from_f64(1.0 / l as f64);
    let mut out = Tensor::zeros(&[d]);
    for k in 0..mask.len() {
        if mask.unmasked(k) {
            let xr = xv.row(k);
            let od = out.data_mut();
            for j in 0..d {
                od[j] = od[j] + xr[j] * inv;
            }
        }
    }
    let flags = mask.flags().to_vec();
    Ok(Var::from_op(out, vec![x.clone()], move |g| {
        let mut dx = Tensor::zeros(&[flags.len(), d]);
        for (k, &keep) in flags.iter().enumerate() {
            if keep {
                let dr = dx.row_mut(k);
                for j in 0..d {
                    dr[j] = g.data()[j] * inv;
                }
            }
        }
        vec![Some(dx)]
    }))
}

/// Concatenation along the last axis, in argument order. Rank-1 inputs
/// yield a rank-1 output; rank-2 inputs must agree on the leading extent.
pub fn concat<T: Scalar>(xs: &[Var<T>]) -> Result<Var<T>, DiffError> {
    if xs.is_empty() {
        return Err(DiffError::EmptySequence {
            context: "concat".into(),
        });
    }
    let values: Vec<Tensor<T>> = xs.iter().map(|x| x.clone_value()).collect();
    let rank = values[0].rank();
    let lead = rows(&values[0]);
    if values.iter().any(|v| v.rank() != rank || rows(v) != lead) {
        return Err(shape_err(
            "concat",
            "equal rank and leading extents".into(),
            format!("{:?}", values.iter().map(|v| v.shape()).collect::<Vec<_>>()),
        ));
    }
    let widths: Vec<usize> = values.iter().map(|v| v.last_extent()).collect();
    let total: usize = widths.iter().sum();
    let out_shape = if rank == 2 {
        vec![lead, total]
    } else {
        vec![total]
    };
    let mut out = Tensor::zeros(&out_shape);
    for r in 0..lead {
        let or = out.row_mut(r);
        let mut off = 0;
        for v in &values {
            or[off..off + v.last_extent()].copy_from_slice(v.row(r));
            off += v.last_extent();
        }
    }
    let need: Vec<bool> = xs.iter().map(|x| x.needs_grad()).collect();
    Ok(Var::from_op(out, xs.to_vec(), move |g| {
        let mut grads = Vec::with_capacity(widths.len());
        let mut off = 0;
        for (i, &w) in widths.iter().enumerate() {
            if need[i] {
                let shape = if rank == 2 { vec![lead, w] } else { vec![w] };
                let mut dx = Tensor::zeros(&shape);
                for r in 0..lead {
                    dx.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                }
                grads.push(Some(dx));
            } else {
                grads.push(None);
            }
            off += w;
        }
        grads
    }))
}

/// Mean over the batch of -log softmax(logits)[target].
pub fn cross_entropy<T: Scalar>(logits: &Var<T>, targets: &[usize]) -> Result<Var<T>, DiffError> {
    let lv = logits.clone_value();
    if lv.rank() != 2 || lv.shape()[0] != targets.len() {
        return Err(shape_err(
            "cross_entropy",
            format!("logits [{}, C]", targets.len()),
            format!("{:?}", lv.shape()),
        ));
    }
    let (b, c) = (lv.shape()[0], lv.shape()[1]);
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(DiffError::LabelOutOfRange { label: t, classes: c });
    }
    let mut probs = Tensor::zeros(&[b, c]);
    let mut loss = T::zero();
    for r in 0..b {
        let xr = lv.row(r);
        let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        let pr = probs.row_mut(r);
        for j in 0..c {
            let e = (xr[j] - max).exp();
            pr[j] = e;
            sum = sum + e;
        }
        for v in pr.iter_mut() {
            *v = *v / sum;
        }
        let lse = sum.ln() + max;
        loss = loss + lse - xr[targets[r]];
    }
    let bn = T::from_f64(b as f64);
    loss = loss / bn;
    let targets = targets.to_vec();
    Ok(Var::from_op(
        Tensor::scalar(loss),
        vec![logits.clone()],
        move |g| {
            let gs = g.item() / bn;
            let mut dx = probs.clone();
            for (r, &t) in targets.iter().enumerate() {
                let dr = dx.row_mut(r);
                for (j, v) in dr.iter_mut().enumerate() {
                    let ind = if j == t { T::one() } else { T::zero() };
                    *v = (*v - ind) * gs;
                }
            }
            vec![Some(dx)]
        },
    ))
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, DiffError> {
    let av = a.clone_value();
    let bv = b.clone_value();
    if av.shape() != bv.shape() {
        return Err(shape_err(
            "add",
            format!("{:?}", av.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let out = av.zip_map(&bv, |x, y| x + y);
    let need = [a.needs_grad(), b.needs_grad()];
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], move |g| {
        vec![
            need[0].then(|| g.clone()),
            need[1].then(|| g.clone()),
        ]
    }))
}

pub fn add_many<T: Scalar>(xs: &[Var<T>]) -> Result<Var<T>, DiffError> {
    let mut acc = xs
        .first()
        .cloned()
        .ok_or_else(|| DiffError::EmptySequence {
            context: "add_many".into(),
        })?;
    for x in &xs[1..] {
        acc = add(&acc, x)?;
    }
    Ok(acc)
}

/// Multiplication by a compile-time constant.
pub fn scale<T: Scalar>(x: &Var<T>, c: f64) -> Var<T> {
    let c = T::from_f64(c);
    let out = x.clone_value().map(|v| v * c);
    Var::from_op(out, vec![x.clone()], move |g| {
        vec![Some(g.map(|v| v * c))]
    })
}

fn check_matmul<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    inner_a: usize,
    inner_b: usize,
    context: &str,
) -> Result<(), DiffError> {
    if a.rank() != 2 || b.rank() != 2 || inner_a != inner_b {
        return Err(shape_err(
            context,
            "rank-2 operands with matching inner extents".into(),
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn mm<T: Scalar>(
    a: &Tensor<T>,
    ta: bool,
    b: &Tensor<T>,
    tb: bool,
) -> Tensor<T> {
    let (am, ak) = (a.shape()[0], a.shape()[1]);
    let (bm, bk) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ak, am) } else { (am, ak) };
    let n = if tb { bm } else { bk };
    debug_assert_eq!(if ta { am } else { ak }, if tb { bk } else { bm });
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let or = out.row_mut(i);
        for l in 0..k {
            let av = if ta { a.row(l)[i] } else { a.row(i)[l] };
            if tb {
                for (j, o) in or.iter_mut().enumerate() {
                    *o = *o + av * b.row(j)[l];
                }
            } else {
                let br = b.row(l);
                for (j, o) in or.iter_mut().enumerate() {
                    *o = *o + av * br[j];
                }
            }
        }
    }
    out
}

/// A[m,k] * B[k,n].
pub fn matmul_nn<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, DiffError> {
    let av = a.clone_value();
    let bv = b.clone_value();
    check_matmul(&av, &bv, av.shape().get(1).copied().unwrap_or(0), bv.shape().first().copied().unwrap_or(0), "matmul_nn")?;
    let out = mm(&av, false, &bv, false);
    let need = [a.needs_grad(), b.needs_grad()];
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], move |g| {
        vec![
            need[0].then(|| mm(g, false, &bv, true)),
            need[1].then(|| mm(&av, true, g, false)),
        ]
    }))
}

/// A[m,k] * B[n,k]^T -> [m,n].
pub fn matmul_nt<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, DiffError> {
    let av = a.clone_value();
    let bv = b.clone_value();
    check_matmul(&av, &bv, av.shape().get(1).copied().unwrap_or(0), bv.shape().get(1).copied().unwrap_or(0), "matmul_nt")?;
    let out = mm(&av, false, &bv, true);
    let need = [a.needs_grad(), b.needs_grad()];
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], move |g| {
        vec![
            need[0].then(|| mm(g, false, &bv, false)),
            need[1].then(|| mm(g, true, &av, false)),
        ]
    }))
}

/// Column slice [start, start+len) of a rank-2 tensor.
pub fn slice_cols<T: Scalar>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>, DiffError> {
    let xv = x.clone_value();
    if xv.rank() != 2 || start + len > xv.shape()[1] {
        return Err(shape_err(
            "slice_cols",
            format!("rank-2 input with >= {} columns", start + len),
            format!("{:?}", xv.shape()),
        ));
    }
    let (k, d) = (xv.shape()[0], xv.shape()[1]);
    let mut out = Tensor::zeros(&[k, len]);
    for r in 0..k {
        out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
    }
    Ok(Var::from_op(out, vec![x.clone()], move |g| {
        let mut dx = Tensor::zeros(&[k, d]);
        for r in 0..k {
            dx.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
        }
        vec![Some(dx)]
    }))
}

/// Stack rank-1 vectors into the rows of a rank-2 tensor.
pub fn stack_rows<T: Scalar>(xs: &[Var<T>]) -> Result<Var<T>, DiffError> {
    if xs.is_empty() {
        return Err(DiffError::EmptySequence {
            context: "stack_rows".into(),
        });
    }
    let values: Vec<Tensor<T>> = xs.iter().map(|x| x.clone_value()).collect();
    let c = values[0].len();
    if values.iter().any(|v| v.rank() != 1 || v.len() != c) {
        return Err(shape_err(
            "stack_rows",
            format!("rank-1 vectors of length {c}"),
            format!("{:?}", values.iter().map(|v| v.shape()).collect::<Vec<_>>()),
        ));
    }
    let b = values.len();
    let mut out = Tensor::zeros(&[b, c]);
    for (r, v) in values.iter().enumerate() {
        out.row_mut(r).copy_from_slice(v.data());
    }
    let need: Vec<bool> = xs.iter().map(|x| x.needs_grad()).collect();
    Ok(Var::from_op(out, xs.to_vec(), move |g| {
        (0..b)
            .map(|r| need[r].then(|| Tensor::vector(g.row(r).to_vec())))
            .collect()
    }))
}

/// Add `MASK_BIAS` to every masked key column of attention scores [Kq, Kv].
pub fn add_key_mask<T: Scalar>(scores: &Var<T>, mask: &Mask) -> Result<Var<T>, DiffError> {
    let sv = scores.clone_value();
    if sv.rank() != 2 || sv.shape()[1] != mask.len() {
        return Err(shape_err(
            "add_key_mask",
            format!("scores [Kq, {}]", mask.len()),
            format!("{:?}", sv.shape()),
        ));
    }
    if mask.count_unmasked() == 0 {
        return Err(DiffError::EmptySequence {
            context: "attention keys".into(),
        });
    }
    let bias = T::from_f64(MASK_BIAS);
    let mut out = sv;
    for r in 0..out.shape()[0] {
        let or = out.row_mut(r);
        for (j, v) in or.iter_mut().enumerate() {
            if !mask.unmasked(j) {
                *v = *v + bias;
            }
        }
    }
    Ok(Var::from_op(out, vec![scores.clone()], move |g| {
        vec![Some(g.clone())]
    }))
}

/// Learnable weighted average over the layer axis of a constant [L, K, D]
/// stack, normalized by the weight sum: out[k,d] = sum_l w_l X[l,k,d] / sum_l w_l.
pub fn layer_mix<T: Scalar>(stack: &Tensor<T>, weights: &Var<T>) -> Result<Var<T>, DiffError> {
    if stack.rank() != 3 {
        return Err(shape_err(
            "layer_mix stack",
            "[L, K, D]".into(),
            format!("{:?}", stack.shape()),
        ));
    }
    let (l, k, d) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    let wv = weights.clone_value();
    if wv.shape() != [l] {
        return Err(shape_err(
            "layer_mix weights",
            format!("[{l}]"),
            format!("{:?}", wv.shape()),
        ));
    }
    let sum: T = wv.data().iter().fold(T::zero(), |a, &v| a + v);
    if sum.abs().to_f64() < 1e-8 {
        return Err(DiffError::DegenerateWeights {
            sum: sum.to_f64(),
        });
    }
    let kd = k * d;
    let mut out = Tensor::zeros(&[k, d]);
    for li in 0..l {
        let w = wv.data()[li] / sum;
        let layer = &stack.data()[li * kd..(li + 1) * kd];
        let od = out.data_mut();
        for (o, &x) in od.iter_mut().zip(layer) {
            *o = *o + w * x;
        }
    }
    let stack = stack.clone();
    let y = out.clone();
    Ok(Var::from_op(out, vec![weights.clone()], move |g| {
        // d out / d w_m = (X_m - out) / sum
        let mut dw = Tensor::zeros(&[l]);
        for li in 0..l {
            let layer = &stack.data()[li * kd..(li + 1) * kd];
            let mut acc = T::zero();
            for i in 0..kd {
                acc = acc + g.data()[i] * (layer[i] - y.data()[i]);
            }
            dw.data_mut()[li] = acc / sum;
        }
        vec![Some(dw)]
    }))
}

/// Mean of two same-shape tensors.
pub fn mean_pair<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, DiffError> {
    Ok(scale(&add(a, b)?, 0.5))
}
