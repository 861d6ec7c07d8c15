//! Dense oracle for the banded kernel.
//!
//! Builds full n x n score matrices per head and masks them explicitly. It is
//! deliberately simple and memory-hungry; the kernel is checked against it,
//! so this path must stay independent of the kernel's masking and softmax.

use crate::attention::{allowed, AttentionPattern};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_backward, row_softmax_masked, softmax_backward, Tensor2D};

pub struct ReferenceGrads {
    pub output: Tensor2D,
    pub d_x: Tensor2D,
    pub d_wq: Tensor2D,
    pub d_wk: Tensor2D,
    pub d_wv: Tensor2D,
}

fn head_slice(t: &Tensor2D, c0: usize, dh: usize) -> Tensor2D {
    let mut out = Tensor2D::zeros(t.rows(), dh);
    for i in 0..t.rows() {
        out.row_mut(i).copy_from_slice(&t.row(i)[c0..c0 + dh]);
    }
    out
}

fn head_unslice(dst: &mut Tensor2D, src: &Tensor2D, c0: usize) {
    for i in 0..src.rows() {
        dst.row_mut(i)[c0..c0 + src.cols()].copy_from_slice(src.row(i));
    }
}

fn check_shapes(x: &Tensor2D, wq: &Tensor2D, wk: &Tensor2D, wv: &Tensor2D, n_heads: usize) -> Result<()> {
    let d = x.cols();
    for (name, w) in [("wq", wq), ("wk", wk), ("wv", wv)] {
        if w.rows() != d || w.cols() != d {
            return Err(Error::Shape {
                op: "masked_full_reference",
                detail: format!("{name} is {}x{}, expected {d}x{d}", w.rows(), w.cols()),
            });
        }
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Shape {
            op: "masked_full_reference",
            detail: format!("{n_heads} heads do not divide model dim {d}"),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Shape {
            op: "masked_full_reference",
            detail: "empty sequence".to_string(),
        });
    }
    Ok(())
}

/// Dense multi-head attention with an explicit mask, for checking the banded
/// kernel. Same contract as `attention_forward`, output only.
pub fn masked_full_reference(
    x: &Tensor2D,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
    pattern: &AttentionPattern,
    n_heads: usize,
) -> Result<Tensor2D> {
    Ok(reference_with_grads(x, wq, wk, wv, pattern, n_heads, None)?.output)
}

/// Dense path with gradients for every input, given the gradient of the
/// concatenated head outputs.
pub fn masked_full_reference_grads(
    x: &Tensor2D,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
    pattern: &AttentionPattern,
    n_heads: usize,
    d_out: &Tensor2D,
) -> Result<ReferenceGrads> {
    reference_with_grads(x, wq, wk, wv, pattern, n_heads, Some(d_out))
}

fn reference_with_grads(
    x: &Tensor2D,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
    pattern: &AttentionPattern,
    n_heads: usize,
    d_out: Option<&Tensor2D>,
) -> Result<ReferenceGrads> {
    pattern.validate()?;
    check_shapes(x, wq, wk, wv, n_heads)?;
    let n = x.rows();
    let d = x.cols();
    let dh = d / n_heads;
    let scale = (1.0 / (dh as f64).sqrt()) as f32;
    if let Some(g) = d_out {
        if g.rows() != n || g.cols() != d {
            return Err(Error::Shape {
                op: "masked_full_reference",
                detail: format!("d_out {}x{}, expected {n}x{d}", g.rows(), g.cols()),
            });
        }
    }

    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    let mut out = Tensor2D::zeros(n, d);
    let mut dq = Tensor2D::zeros(n, d);
    let mut dk = Tensor2D::zeros(n, d);
    let mut dv = Tensor2D::zeros(n, d);

    for h in 0..n_heads {
        let c0 = h * dh;
        let qh = head_slice(&q, c0, dh);
        let kh = head_slice(&k, c0, dh);
        let vh = head_slice(&v, c0, dh);
        let mut scores = matmul(&qh, &kh.transposed())?;
        scores.scale(scale);
        let probs = row_softmax_masked(&scores, |i, j| {
            allowed(pattern, i, j, n).expect("positions in range")
        })?;
        let outh = matmul(&probs, &vh)?;
        head_unslice(&mut out, &outh, c0);

        if let Some(g) = d_out {
            let gh = head_slice(g, c0, dh);
            // out_h = probs * v_h
            let (d_probs, d_vh) = matmul_backward(&probs, &vh, &gh)?;
            let mut d_scores = softmax_backward(&probs, &d_probs)?;
            d_scores.scale(scale);
            // scores = q_h * k_h^T
            let (d_qh, d_kht) = matmul_backward(&qh, &kh.transposed(), &d_scores)?;
            head_unslice(&mut dq, &d_qh, c0);
            head_unslice(&mut dk, &d_kht.transposed(), c0);
            head_unslice(&mut dv, &d_vh, c0);
        }
    }

    if d_out.is_none() {
        return Ok(ReferenceGrads {
            output: out,
            d_x: Tensor2D::zeros(0, 0),
            d_wq: Tensor2D::zeros(0, 0),
            d_wk: Tensor2D::zeros(0, 0),
            d_wv: Tensor2D::zeros(0, 0),
        });
    }

    let (dx_q, d_wq) = matmul_backward(x, wq, &dq)?;
    let (dx_k, d_wk) = matmul_backward(x, wk, &dk)?;
    let (dx_v, d_wv) = matmul_backward(x, wv, &dv)?;
    let mut d_x = dx_q;
    d_x.add_assign(&dx_k)?;
    d_x.add_assign(&dx_v)?;
    Ok(ReferenceGrads { output: out, d_x, d_wq, d_wk, d_wv })
}
