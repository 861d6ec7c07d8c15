//! Nonlinear ops: masked softmax, layer norm, GELU, cross-entropy.
//! Reductions accumulate in f64, ascending index order.

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;

/// Row-wise softmax over the entries where `allowed(i, j)` is true.
/// Disallowed entries come out exactly 0.0. A row with no allowed entries
/// is an error, not a NaN.
///
/// softmax(x)_j = exp(x_j - max) / sum_k exp(x_k - max), max/sum over allowed.
pub fn row_softmax_masked<F>(scores: &Tensor2D, allowed: F) -> Result<Tensor2D>
where
    F: Fn(usize, usize) -> bool,
{
    let mut out = Tensor2D::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, &s) in row.iter().enumerate() {
            if allowed(i, j) {
                max = max.max(s as f64);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: i });
        }
        let mut sum = 0.0f64;
        for (j, &s) in row.iter().enumerate() {
            if allowed(i, j) {
                sum += (s as f64 - max).exp();
            }
        }
        let orow = out.row_mut(i);
        for (j, &s) in row.iter().enumerate() {
            if allowed(i, j) {
                orow[j] = ((s as f64 - max).exp() / sum) as f32;
            }
        }
    }
    Ok(out)
}

/// Gradient through a row-wise softmax: given probabilities `p` and upstream
/// `d_p`, returns d scores with ds_j = p_j * (dp_j - sum_k p_k dp_k).
/// Masked entries have p = 0 and therefore ds = 0.
pub fn softmax_backward(probs: &Tensor2D, d_probs: &Tensor2D) -> Result<Tensor2D> {
    if probs.rows() != d_probs.rows() || probs.cols() != d_probs.cols() {
        return Err(Error::Shape {
            op: "softmax_backward",
            detail: format!(
                "probs {}x{}, d_probs {}x{}",
                probs.rows(),
                probs.cols(),
                d_probs.rows(),
                d_probs.cols()
            ),
        });
    }
    let mut out = Tensor2D::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = d_probs.row(i);
        let mut dot = 0.0f64;
        for (pk, dpk) in p.iter().zip(dp) {
            dot += *pk as f64 * *dpk as f64;
        }
        let orow = out.row_mut(i);
        for j in 0..p.len() {
            orow[j] = (p[j] as f64 * (dp[j] as f64 - dot)) as f32;
        }
    }
    Ok(out)
}

/// Per-row statistics cached by the layer-norm forward pass.
pub struct LayerNormCache {
    pub xhat: Tensor2D,
    pub inv_std: Vec<f64>,
}

/// Row-wise layer normalization: out = xhat * gain + bias where
/// xhat = (x - mean) / sqrt(var + eps), mean/var per row in f64.
pub fn layer_norm(
    x: &Tensor2D,
    gain: &[f32],
    bias: &[f32],
    eps: f32,
) -> Result<(Tensor2D, LayerNormCache)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!("x has {d} cols, gain {}, bias {}", gain.len(), bias.len()),
        });
    }
    let mut out = Tensor2D::zeros(x.rows(), d);
    let mut xhat = Tensor2D::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mut sum = 0.0f64;
        for &v in row {
            sum += v as f64;
        }
        let mean = sum / d as f64;
        let mut var = 0.0f64;
        for &v in row {
            let c = v as f64 - mean;
            var += c * c;
        }
        let var = var / d as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        inv_std.push(istd);
        let xh = xhat.row_mut(i);
        let o = out.row_mut(i);
        for j in 0..d {
            let h = ((row[j] as f64 - mean) * istd) as f32;
            xh[j] = h;
            o[j] = h * gain[j] + bias[j];
        }
    }
    Ok((out, LayerNormCache { xhat, inv_std }))
}

/// Gradients of layer_norm: returns (d_x, d_gain, d_bias).
/// d_x = inv_std * (dxh - mean(dxh) - xhat * mean(dxh ⊙ xhat)), dxh = d_out * gain.
pub fn layer_norm_backward(
    d_out: &Tensor2D,
    cache: &LayerNormCache,
    gain: &[f32],
) -> Result<(Tensor2D, Vec<f32>, Vec<f32>)> {
    let d = cache.xhat.cols();
    if d_out.rows() != cache.xhat.rows() || d_out.cols() != d || gain.len() != d {
        return Err(Error::Shape {
            op: "layer_norm_backward",
            detail: format!(
                "d_out {}x{}, cache {}x{}, gain {}",
                d_out.rows(),
                d_out.cols(),
                cache.xhat.rows(),
                d,
                gain.len()
            ),
        });
    }
    let mut d_x = Tensor2D::zeros(d_out.rows(), d);
    let mut d_gain = vec![0.0f64; d];
    let mut d_bias = vec![0.0f64; d];
    for i in 0..d_out.rows() {
        let dy = d_out.row(i);
        let xh = cache.xhat.row(i);
        let istd = cache.inv_std[i];
        let mut mean_dxh = 0.0f64;
        let mut mean_dxh_xh = 0.0f64;
        for j in 0..d {
            let dxh = dy[j] as f64 * gain[j] as f64;
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j] as f64;
            d_gain[j] += dy[j] as f64 * xh[j] as f64;
            d_bias[j] += dy[j] as f64;
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        let dx = d_x.row_mut(i);
        for j in 0..d {
            let dxh = dy[j] as f64 * gain[j] as f64;
            dx[j] = (istd * (dxh - mean_dxh - xh[j] as f64 * mean_dxh_xh)) as f32;
        }
    }
    let d_gain = d_gain.into_iter().map(|v| v as f32).collect();
    let d_bias = d_bias.into_iter().map(|v| v as f32).collect();
    Ok((d_x, d_gain, d_bias))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximate GELU: 0.5 x (1 + tanh(c (x + a x^3))).
pub fn gelu(x: &Tensor2D) -> Tensor2D {
    let mut out = x.clone();
    for v in out.values_mut() {
        let xf = *v as f64;
        let t = (GELU_C * (xf + GELU_A * xf * xf * xf)).tanh();
        *v = (0.5 * xf * (1.0 + t)) as f32;
    }
    out
}

/// d gelu / d x, evaluated at the pre-activation input `x`, times `d_out`.
pub fn gelu_backward(x: &Tensor2D, d_out: &Tensor2D) -> Result<Tensor2D> {
    if x.rows() != d_out.rows() || x.cols() != d_out.cols() {
        return Err(Error::Shape {
            op: "gelu_backward",
            detail: format!(
                "x {}x{}, d_out {}x{}",
                x.rows(),
                x.cols(),
                d_out.rows(),
                d_out.cols()
            ),
        });
    }
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    for (o, (&xv, &dv)) in out
        .values_mut()
        .iter_mut()
        .zip(x.values().iter().zip(d_out.values()))
    {
        let xf = xv as f64;
        let u = GELU_C * (xf + GELU_A * xf * xf * xf);
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_A * xf * xf);
        let grad = 0.5 * (1.0 + t) + 0.5 * xf * (1.0 - t * t) * du;
        *o = (grad * dv as f64) as f32;
    }
    Ok(out)
}

/// Sum of per-row negative log-likelihoods and the un-normalized logit
/// gradient (softmax - onehot). Returns (nll_sum, d_logits_sum, rows).
pub fn cross_entropy_logits_sum(
    logits: &Tensor2D,
    targets: &[u16],
) -> Result<(f64, Tensor2D, usize)> {
    if targets.len() != logits.rows() {
        return Err(Error::Shape {
            op: "cross_entropy_logits",
            detail: format!("{} logit rows, {} targets", logits.rows(), targets.len()),
        });
    }
    let vocab = logits.cols();
    let mut d = Tensor2D::zeros(logits.rows(), vocab);
    let mut nll = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= vocab {
            return Err(Error::TokenOutOfRange { id: t, vocab });
        }
        let row = logits.row(i);
        let mut max = f64::NEG_INFINITY;
        for &v in row {
            max = max.max(v as f64);
        }
        let mut sum = 0.0f64;
        for &v in row {
            sum += (v as f64 - max).exp();
        }
        nll += max + sum.ln() - row[t] as f64;
        let drow = d.row_mut(i);
        for j in 0..vocab {
            drow[j] = ((row[j] as f64 - max).exp() / sum) as f32;
        }
        drow[t] -= 1.0;
    }
    Ok((nll, d, targets.len()))
}

/// Mean cross-entropy over rows of logits against integer targets.
/// Returns (loss, d_logits) with the gradient already scaled by 1/rows.
pub fn cross_entropy_logits(logits: &Tensor2D, targets: &[u16]) -> Result<(f64, Tensor2D)> {
    let (nll, mut d, rows) = cross_entropy_logits_sum(logits, targets)?;
    if rows == 0 {
        return Err(Error::Shape {
            op: "cross_entropy_logits",
            detail: "no target rows".to_string(),
        });
    }
    d.scale(1.0 / rows as f32);
    Ok((nll / rows as f64, d))
}
