//! Banded multi-head attention kernel.
//!
//! Scores and probabilities are stored only for the admitted (query, key)
//! pairs, so memory follows the pattern's pair count. An n x n buffer is
//! never materialized here.

use crate::attention::AttentionPattern;
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_backward, Tensor2D};

/// Row layout of the banded storage: row i occupies
/// `offset[i] .. offset[i] + (i - lo[i] + 1)`.
#[derive(Debug, Clone)]
struct Band {
    lo: Vec<usize>,
    offset: Vec<usize>,
    total: usize,
}

impl Band {
    fn build(pattern: &AttentionPattern, n: usize) -> Band {
        let mut lo = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        let mut total = 0usize;
        for i in 0..n {
            let start = pattern.row_start(i);
            lo.push(start);
            offset.push(total);
            total += i - start + 1;
        }
        Band { lo, offset, total }
    }
}

/// Everything the backward pass needs from a forward call.
pub struct AttentionCache {
    x: Tensor2D,
    q: Tensor2D,
    k: Tensor2D,
    v: Tensor2D,
    /// Softmax probabilities for admitted pairs, one band per head.
    probs: Vec<f32>,
    band: Band,
    n_heads: usize,
}

fn check_projection_shapes(
    x: &Tensor2D,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
    n_heads: usize,
) -> Result<()> {
    let d = x.cols();
    for (name, w) in [("wq", wq), ("wk", wk), ("wv", wv)] {
        if w.rows() != d || w.cols() != d {
            return Err(Error::Shape {
                op: "attention_forward",
                detail: format!("{name} is {}x{}, expected {d}x{d}", w.rows(), w.cols()),
            });
        }
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Shape {
            op: "attention_forward",
            detail: format!("{n_heads} heads do not divide model dim {d}"),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Shape {
            op: "attention_forward",
            detail: "empty sequence".to_string(),
        });
    }
    Ok(())
}

/// Multi-head causal attention restricted to `pattern`.
/// Returns the concatenated head outputs (n x d, before any output
/// projection) and the cache for the backward pass.
pub fn attention_forward(
    x: &Tensor2D,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
    pattern: &AttentionPattern,
    n_heads: usize,
) -> Result<(Tensor2D, AttentionCache)> {
    pattern.validate()?;
    check_projection_shapes(x, wq, wk, wv, n_heads)?;
    let n = x.rows();
    let d = x.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    let band = Band::build(pattern, n);
    let mut probs = vec![0.0f32; n_heads * band.total];
    let mut out = Tensor2D::zeros(n, d);

    let mut scores = vec![0.0f64; n]; // longest band is n
    let mut acc = vec![0.0f64; dh];
    // Head-local key columns, so the score loop reads keys contiguously.
    let mut kt = vec![0.0f32; dh * n];
    for h in 0..n_heads {
        let c0 = h * dh;
        let pbase = h * band.total;
        for j in 0..n {
            let krow = &k.row(j)[c0..c0 + dh];
            for (c, &kc) in krow.iter().enumerate() {
                kt[c * n + j] = kc;
            }
        }
        for i in 0..n {
            let lo = band.lo[i];
            let len = i - lo + 1;
            let qrow = &q.row(i)[c0..c0 + dh];
            // Scores: accumulate over the head dim in ascending order,
            // vectorized across the band.
            for s in scores[..len].iter_mut() {
                *s = 0.0;
            }
            for (c, &qc) in qrow.iter().enumerate() {
                let qc = qc as f64;
                let kcol = &kt[c * n + lo..c * n + lo + len];
                for (s, &kc) in scores[..len].iter_mut().zip(kcol) {
                    *s += qc * kc as f64;
                }
            }
            // Banded softmax in f64.
            let mut max = f64::NEG_INFINITY;
            for s in scores[..len].iter_mut() {
                *s *= scale;
                max = max.max(*s);
            }
            let mut sum = 0.0f64;
            for s in scores[..len].iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let prow = &mut probs[pbase + band.offset[i]..pbase + band.offset[i] + len];
            for (p, &s) in prow.iter_mut().zip(scores[..len].iter()) {
                *p = (s / sum) as f32;
            }
            // Weighted value mix, ascending key order, f64 accumulators.
            for a in acc.iter_mut() {
                *a = 0.0;
            }
            for (jj, &p) in prow.iter().enumerate() {
                let p = p as f64;
                let vrow = &v.row(lo + jj)[c0..c0 + dh];
                for (a, &vc) in acc.iter_mut().zip(vrow) {
                    *a += p * vc as f64;
                }
            }
            let orow = &mut out.row_mut(i)[c0..c0 + dh];
            for (o, &a) in orow.iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    }

    let cache = AttentionCache {
        x: x.clone(),
        q,
        k,
        v,
        probs,
        band,
        n_heads,
    };
    Ok((out, cache))
}

/// Gradients of `attention_forward` with respect to its inputs, given the
/// gradient of the concatenated head outputs.
/// Returns (d_x, d_wq, d_wk, d_wv).
pub fn attention_backward(
    cache: &AttentionCache,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
    d_out: &Tensor2D,
) -> Result<(Tensor2D, Tensor2D, Tensor2D, Tensor2D)> {
    let n = cache.x.rows();
    let d = cache.x.cols();
    if d_out.rows() != n || d_out.cols() != d {
        return Err(Error::Shape {
            op: "attention_backward",
            detail: format!("d_out {}x{}, expected {n}x{d}", d_out.rows(), d_out.cols()),
        });
    }
    let n_heads = cache.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let band = &cache.band;

    // f64 staging for the scatter-accumulated gradients.
    let mut dq = vec![0.0f64; n * d];
    let mut dk = vec![0.0f64; n * d];
    let mut dv = vec![0.0f64; n * d];
    let mut dp = vec![0.0f64; n];
    let mut ds = vec![0.0f64; n];

    // Head-local value columns, so the dp loop reads values contiguously.
    let mut vt = vec![0.0f32; dh * n];
    // Row slices of q and d_out widened to f64 once per query row.
    let mut qf = vec![0.0f64; dh];
    let mut gf = vec![0.0f64; dh];
    for h in 0..n_heads {
        let c0 = h * dh;
        let pbase = h * band.total;
        for j in 0..n {
            let vrow = &cache.v.row(j)[c0..c0 + dh];
            for (c, &vc) in vrow.iter().enumerate() {
                vt[c * n + j] = vc;
            }
        }
        for i in 0..n {
            let lo = band.lo[i];
            let len = i - lo + 1;
            let prow = &cache.probs[pbase + band.offset[i]..pbase + band.offset[i] + len];
            let grow = &d_out.row(i)[c0..c0 + dh];
            // dp_j = d_out_i . v_j, head-dim ascending.
            for x in dp[..len].iter_mut() {
                *x = 0.0;
            }
            for (c, &gc) in grow.iter().enumerate() {
                let gc = gc as f64;
                let vcol = &vt[c * n + lo..c * n + lo + len];
                for (x, &vc) in dp[..len].iter_mut().zip(vcol) {
                    *x += gc * vc as f64;
                }
            }
            // ds = p * (dp - sum_k p_k dp_k), then fold in the score scale.
            let mut dot = 0.0f64;
            for (jj, &p) in prow.iter().enumerate() {
                dot += p as f64 * dp[jj];
            }
            for (jj, &p) in prow.iter().enumerate() {
                ds[jj] = p as f64 * (dp[jj] - dot) * scale;
            }
            // dv_j += p_j * d_out_i ; dk_j += ds_j * q_i ; dq_i = sum ds_j k_j.
            // Separate passes per output stream; each accumulator still
            // receives its additions in ascending key order.
            let qrow = &cache.q.row(i)[c0..c0 + dh];
            for ((qv, gv), (&qc, &gc)) in
                qf.iter_mut().zip(gf.iter_mut()).zip(qrow.iter().zip(grow))
            {
                *qv = qc as f64;
                *gv = gc as f64;
            }
            let dqrow = &mut dq[i * d + c0..i * d + c0 + dh];
            for jj in 0..len {
                let j = lo + jj;
                let p = prow[jj] as f64;
                let s = ds[jj];
                let vdst = &mut dv[j * d + c0..j * d + c0 + dh];
                for (vd, &g) in vdst.iter_mut().zip(&gf) {
                    *vd += p * g;
                }
                let kdst = &mut dk[j * d + c0..j * d + c0 + dh];
                for (kd, &qc) in kdst.iter_mut().zip(&qf) {
                    *kd += s * qc;
                }
                let krow = &cache.k.row(j)[c0..c0 + dh];
                for (dqc, &kc) in dqrow.iter_mut().zip(krow) {
                    *dqc += s * kc as f64;
                }
            }
        }
    }

    let to_tensor = |vals: Vec<f64>| -> Tensor2D {
        let mut t = Tensor2D::zeros(n, d);
        for (o, v) in t.values_mut().iter_mut().zip(&vals) {
            *o = *v as f32;
        }
        t
    };
    let dq = to_tensor(dq);
    let dk = to_tensor(dk);
    let dv = to_tensor(dv);

    let (dx_q, d_wq) = matmul_backward(&cache.x, wq, &dq)?;
    let (dx_k, d_wk) = matmul_backward(&cache.x, wk, &dk)?;
    let (dx_v, d_wv) = matmul_backward(&cache.x, wv, &dv)?;
    let mut d_x = dx_q;
    d_x.add_assign(&dx_k)?;
    d_x.add_assign(&dx_v)?;
    Ok((d_x, d_wq, d_wk, d_wv))
}
