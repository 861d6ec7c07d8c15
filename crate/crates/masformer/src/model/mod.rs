//! Decoder-only transformer with a per-layer attention span plan.
//!
//! Pre-norm residual blocks, GELU feed-forward, learned absolute positions,
//! and an input embedding tied to the output head. The attention pattern of
//! each layer comes from the plan in `ModelConfig`, so the same weights can
//! run under different span layouts.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use crate::attention::{
    attention_backward, attention_forward, AttentionCache, AttentionPattern, LayerPlan,
};
use crate::error::{Error, Result};
use crate::numerics::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, matmul, matmul_backward, LayerNormCache,
    RngState, Tensor2D,
};

pub const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;

// Substream labels for the model's seed.
const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_pos: usize,
    pub plan: LayerPlan,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be positive".to_string()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.d_model == 0 || self.d_ff == 0 || self.vocab == 0 || self.max_pos == 0 {
            return Err(Error::Config(
                "d_model, d_ff, vocab, and max_pos must be positive".to_string(),
            ));
        }
        if self.plan.len() != self.layers {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} layers, model has {}",
                self.plan.len(),
                self.layers
            )));
        }
        for p in self.plan.patterns() {
            p.validate()?;
        }
        Ok(())
    }
}

/// Where the full-attention layers sit in the stack; the argument is how many
/// there are. Remaining layers run block attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementStrategy {
    /// Full layers at the bottom of the stack (nearest the embedding).
    Bottom(usize),
    /// Full layers at the top of the stack.
    Top(usize),
    /// Full layers in a contiguous run starting at floor((layers - l) / 2).
    Middle(usize),
    /// Full layers evenly spaced from layer 0; the count must divide the
    /// total layer count.
    EveryK(usize),
}

impl PlacementStrategy {
    pub fn full_layers(&self) -> usize {
        match *self {
            PlacementStrategy::Bottom(l)
            | PlacementStrategy::Top(l)
            | PlacementStrategy::Middle(l)
            | PlacementStrategy::EveryK(l) => l,
        }
    }
}

/// Build a plan with `strategy` deciding which layers run full attention and
/// every other layer running Block(`block_size`).
pub fn make_layer_plan(
    layers: usize,
    strategy: PlacementStrategy,
    block_size: usize,
) -> Result<LayerPlan> {
    make_layer_plan_over(layers, strategy, AttentionPattern::Block { block_size })
}

/// Same as `make_layer_plan` but with an arbitrary sparse base pattern.
pub fn make_layer_plan_over(
    layers: usize,
    strategy: PlacementStrategy,
    base: AttentionPattern,
) -> Result<LayerPlan> {
    if layers == 0 {
        return Err(Error::InvalidPlan("a plan needs at least one layer".to_string()));
    }
    base.validate()?;
    let l = strategy.full_layers();
    if l > layers {
        return Err(Error::InvalidPlan(format!(
            "{l} full layers do not fit in {layers} layers"
        )));
    }
    let mut is_full = vec![false; layers];
    match strategy {
        PlacementStrategy::Bottom(_) => {
            for f in is_full.iter_mut().take(l) {
                *f = true;
            }
        }
        PlacementStrategy::Top(_) => {
            for f in is_full.iter_mut().skip(layers - l) {
                *f = true;
            }
        }
        PlacementStrategy::Middle(_) => {
            let start = (layers - l) / 2;
            for f in is_full.iter_mut().skip(start).take(l) {
                *f = true;
            }
        }
        PlacementStrategy::EveryK(_) => {
            if l > 0 {
                if layers % l != 0 {
                    return Err(Error::InvalidPlan(format!(
                        "{l} evenly spaced full layers do not divide {layers} layers"
                    )));
                }
                let stride = layers / l;
                for i in (0..layers).step_by(stride) {
                    is_full[i] = true;
                }
            }
        }
    }
    let patterns = is_full
        .into_iter()
        .map(|f| if f { AttentionPattern::Full } else { base })
        .collect();
    LayerPlan::new(patterns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor2D,
    pub ln1_bias: Tensor2D,
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub ln2_gain: Tensor2D,
    pub ln2_bias: Tensor2D,
    pub ff1_w: Tensor2D,
    pub ff1_b: Tensor2D,
    pub ff2_w: Tensor2D,
    pub ff2_b: Tensor2D,
}

/// All weights of a model. `tok_emb` doubles as the output head (tied), so
/// its gradient collects both the embedding and head contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub tok_emb: Tensor2D,
    pub pos_emb: Tensor2D,
    pub layers: Vec<LayerParams>,
    pub ln_f_gain: Tensor2D,
    pub ln_f_bias: Tensor2D,
}

impl Parameters {
    /// Fresh init: embeddings N(0, 1/sqrt(d)) so token and position content
    /// starts at a usable scale under pre-norm blocks; weights N(0, 0.02);
    /// the residual-feeding projections `wo` and `ff2_w` are scaled down by
    /// 1/sqrt(2 * layers); gains 1, biases 0. Draw order is fixed: tok_emb,
    /// pos_emb, then per layer wq, wk, wv, wo, ff1_w, ff2_w.
    pub fn init(config: &ModelConfig, rng: &mut RngState) -> Parameters {
        let residual_std = INIT_STD / (2.0 * config.layers as f32).sqrt();
        let mut normal = |rows: usize, cols: usize, std: f32| {
            let mut t = Tensor2D::zeros(rows, cols);
            for v in t.values_mut() {
                *v = rng.normal_f32(std);
            }
            t
        };
        let d = config.d_model;
        let emb_std = 1.0 / (d as f32).sqrt();
        let tok_emb = normal(config.vocab, d, emb_std);
        let pos_emb = normal(config.max_pos, d, emb_std);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(LayerParams {
                ln1_gain: ones(1, d),
                ln1_bias: Tensor2D::zeros(1, d),
                wq: normal(d, d, INIT_STD),
                wk: normal(d, d, INIT_STD),
                wv: normal(d, d, INIT_STD),
                wo: normal(d, d, residual_std),
                ln2_gain: ones(1, d),
                ln2_bias: Tensor2D::zeros(1, d),
                ff1_w: normal(d, config.d_ff, INIT_STD),
                ff1_b: Tensor2D::zeros(1, config.d_ff),
                ff2_w: normal(config.d_ff, d, residual_std),
                ff2_b: Tensor2D::zeros(1, d),
            });
        }
        Parameters {
            tok_emb,
            pos_emb,
            layers,
            ln_f_gain: ones(1, d),
            ln_f_bias: Tensor2D::zeros(1, d),
        }
    }

    /// All-zero parameters with the shapes of `config`. Useful as a gradient
    /// accumulator.
    pub fn zeros(config: &ModelConfig) -> Parameters {
        let d = config.d_model;
        let layer = || LayerParams {
            ln1_gain: Tensor2D::zeros(1, d),
            ln1_bias: Tensor2D::zeros(1, d),
            wq: Tensor2D::zeros(d, d),
            wk: Tensor2D::zeros(d, d),
            wv: Tensor2D::zeros(d, d),
            wo: Tensor2D::zeros(d, d),
            ln2_gain: Tensor2D::zeros(1, d),
            ln2_bias: Tensor2D::zeros(1, d),
            ff1_w: Tensor2D::zeros(d, config.d_ff),
            ff1_b: Tensor2D::zeros(1, config.d_ff),
            ff2_w: Tensor2D::zeros(config.d_ff, d),
            ff2_b: Tensor2D::zeros(1, d),
        };
        Parameters {
            tok_emb: Tensor2D::zeros(config.vocab, d),
            pos_emb: Tensor2D::zeros(config.max_pos, d),
            layers: (0..config.layers).map(|_| layer()).collect(),
            ln_f_gain: Tensor2D::zeros(1, d),
            ln_f_bias: Tensor2D::zeros(1, d),
        }
    }

    /// Named views of every tensor, in the canonical order used by init,
    /// checkpoints, and optimizer state.
    pub fn tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out: Vec<(String, &Tensor2D)> = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.ln1_gain"), &l.ln1_gain));
            out.push((format!("layer{i}.ln1_bias"), &l.ln1_bias));
            out.push((format!("layer{i}.wq"), &l.wq));
            out.push((format!("layer{i}.wk"), &l.wk));
            out.push((format!("layer{i}.wv"), &l.wv));
            out.push((format!("layer{i}.wo"), &l.wo));
            out.push((format!("layer{i}.ln2_gain"), &l.ln2_gain));
            out.push((format!("layer{i}.ln2_bias"), &l.ln2_bias));
            out.push((format!("layer{i}.ff1_w"), &l.ff1_w));
            out.push((format!("layer{i}.ff1_b"), &l.ff1_b));
            out.push((format!("layer{i}.ff2_w"), &l.ff2_w));
            out.push((format!("layer{i}.ff2_b"), &l.ff2_b));
        }
        out.push(("ln_f_gain".to_string(), &self.ln_f_gain));
        out.push(("ln_f_bias".to_string(), &self.ln_f_bias));
        out
    }

    /// Mutable counterpart of `tensors`, same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor2D)> {
        let mut out: Vec<(String, &mut Tensor2D)> = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.ln1_gain"), &mut l.ln1_gain));
            out.push((format!("layer{i}.ln1_bias"), &mut l.ln1_bias));
            out.push((format!("layer{i}.wq"), &mut l.wq));
            out.push((format!("layer{i}.wk"), &mut l.wk));
            out.push((format!("layer{i}.wv"), &mut l.wv));
            out.push((format!("layer{i}.wo"), &mut l.wo));
            out.push((format!("layer{i}.ln2_gain"), &mut l.ln2_gain));
            out.push((format!("layer{i}.ln2_bias"), &mut l.ln2_bias));
            out.push((format!("layer{i}.ff1_w"), &mut l.ff1_w));
            out.push((format!("layer{i}.ff1_b"), &mut l.ff1_b));
            out.push((format!("layer{i}.ff2_w"), &mut l.ff2_w));
            out.push((format!("layer{i}.ff2_b"), &mut l.ff2_b));
        }
        out.push(("ln_f_gain".to_string(), &mut self.ln_f_gain));
        out.push(("ln_f_bias".to_string(), &mut self.ln_f_bias));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn value_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.values().len()).sum()
    }
}

fn ones(rows: usize, cols: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(rows, cols);
    for v in t.values_mut() {
        *v = 1.0;
    }
    t
}

struct LayerCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    attn_out: Tensor2D,
    ln2: LayerNormCache,
    ln2_out: Tensor2D,
    h_pre: Tensor2D,
    h_act: Tensor2D,
}

/// Intermediate activations kept for the backward pass of one forward call.
pub struct ForwardCache {
    tokens: Vec<u16>,
    layer_caches: Vec<LayerCache>,
    ln_f: LayerNormCache,
    ln_f_out: Tensor2D,
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    /// Validate the config and initialize weights from its seed.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = RngState::new(config.seed).substream(INIT_STREAM);
        let params = Parameters::init(&config, &mut rng);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Model> {
        config.validate()?;
        let expect = Parameters::zeros(&config);
        for ((name, have), (_, want)) in params.tensors().iter().zip(expect.tensors()) {
            if have.rows() != want.rows() || have.cols() != want.cols() {
                return Err(Error::Config(format!(
                    "parameter {name} is {}x{}, config expects {}x{}",
                    have.rows(),
                    have.cols(),
                    want.rows(),
                    want.cols()
                )));
            }
        }
        Ok(Model { config, params })
    }

    /// Next-token logits for the whole sequence: row i scores the token at
    /// position i+1. Also returns the cache consumed by `backward`.
    pub fn forward(&self, tokens: &[u16]) -> Result<(Tensor2D, ForwardCache)> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Shape {
                op: "model_forward",
                detail: "empty token sequence".to_string(),
            });
        }
        if n > self.config.max_pos {
            return Err(Error::ContextOverflow { len: n, max_pos: self.config.max_pos });
        }
        let d = self.config.d_model;
        let p = &self.params;
        let mut x = Tensor2D::zeros(n, d);
        for (i, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= self.config.vocab {
                return Err(Error::TokenOutOfRange { id: t, vocab: self.config.vocab });
            }
            let row = x.row_mut(i);
            for (o, (&e, &pe)) in row.iter_mut().zip(p.tok_emb.row(t).iter().zip(p.pos_emb.row(i)))
            {
                *o = e + pe;
            }
        }

        let mut layer_caches = Vec::with_capacity(self.config.layers);
        for (l, lp) in p.layers.iter().enumerate() {
            let (ln1_out, ln1) =
                layer_norm(&x, lp.ln1_gain.row(0), lp.ln1_bias.row(0), LN_EPS)?;
            let (attn_out, attn) = attention_forward(
                &ln1_out,
                &lp.wq,
                &lp.wk,
                &lp.wv,
                self.config.plan.layer(l),
                self.config.n_heads,
            )?;
            let proj = matmul(&attn_out, &lp.wo)?;
            x.add_assign(&proj)?;
            let (ln2_out, ln2) = layer_norm(&x, lp.ln2_gain.row(0), lp.ln2_bias.row(0), LN_EPS)?;
            let mut h_pre = matmul(&ln2_out, &lp.ff1_w)?;
            add_row_bias(&mut h_pre, lp.ff1_b.row(0));
            let h_act = gelu(&h_pre);
            let mut ff_out = matmul(&h_act, &lp.ff2_w)?;
            add_row_bias(&mut ff_out, lp.ff2_b.row(0));
            x.add_assign(&ff_out)?;
            layer_caches.push(LayerCache { ln1, attn, attn_out, ln2, ln2_out, h_pre, h_act });
        }

        let (ln_f_out, ln_f) = layer_norm(&x, p.ln_f_gain.row(0), p.ln_f_bias.row(0), LN_EPS)?;
        let logits = matmul(&ln_f_out, &p.tok_emb.transposed())?;
        let cache = ForwardCache { tokens: tokens.to_vec(), layer_caches, ln_f, ln_f_out };
        Ok((logits, cache))
    }

    /// Gradients of every parameter given d loss / d logits. The returned
    /// `Parameters` holds gradients in the same shapes as the weights.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Tensor2D) -> Result<Parameters> {
        let n = cache.tokens.len();
        if d_logits.rows() != n || d_logits.cols() != self.config.vocab {
            return Err(Error::Shape {
                op: "model_backward",
                detail: format!(
                    "d_logits {}x{}, expected {n}x{}",
                    d_logits.rows(),
                    d_logits.cols(),
                    self.config.vocab
                ),
            });
        }
        let p = &self.params;
        let mut grads = Parameters::zeros(&self.config);

        // logits = ln_f_out * tok_emb^T: the head contributes to both
        // d ln_f_out and the tied embedding gradient.
        let (d_ln_f_out, d_emb_t) =
            matmul_backward(&cache.ln_f_out, &p.tok_emb.transposed(), d_logits)?;
        grads.tok_emb.add_assign(&d_emb_t.transposed())?;
        let (mut dx, dg, db) = layer_norm_backward(&d_ln_f_out, &cache.ln_f, p.ln_f_gain.row(0))?;
        set_row(&mut grads.ln_f_gain, &dg);
        set_row(&mut grads.ln_f_bias, &db);

        for l in (0..self.config.layers).rev() {
            let lp = &p.layers[l];
            let lc = &cache.layer_caches[l];
            let lg = &mut grads.layers[l];

            // Feed-forward residual: x_out = x_mid + ff2(gelu(ff1(ln2(x_mid)))).
            let d_ff_out = &dx;
            let (d_h_act, d_ff2_w) = matmul_backward(&lc.h_act, &lp.ff2_w, d_ff_out)?;
            lg.ff2_w = d_ff2_w;
            set_row(&mut lg.ff2_b, &col_sums(d_ff_out));
            let d_h_pre = gelu_backward(&lc.h_pre, &d_h_act)?;
            let (d_ln2_out, d_ff1_w) = matmul_backward(&lc.ln2_out, &lp.ff1_w, &d_h_pre)?;
            lg.ff1_w = d_ff1_w;
            set_row(&mut lg.ff1_b, &col_sums(&d_h_pre));
            let (d_from_ln2, dg2, db2) =
                layer_norm_backward(&d_ln2_out, &lc.ln2, lp.ln2_gain.row(0))?;
            set_row(&mut lg.ln2_gain, &dg2);
            set_row(&mut lg.ln2_bias, &db2);
            dx.add_assign(&d_from_ln2)?;

            // Attention residual: x_mid = x_in + wo(attn(ln1(x_in))).
            let d_proj = &dx;
            let (d_attn_out, d_wo) = matmul_backward(&lc.attn_out, &lp.wo, d_proj)?;
            lg.wo = d_wo;
            let (d_ln1_out, d_wq, d_wk, d_wv) =
                attention_backward(&lc.attn, &lp.wq, &lp.wk, &lp.wv, &d_attn_out)?;
            lg.wq = d_wq;
            lg.wk = d_wk;
            lg.wv = d_wv;
            let (d_from_ln1, dg1, db1) =
                layer_norm_backward(&d_ln1_out, &lc.ln1, lp.ln1_gain.row(0))?;
            set_row(&mut lg.ln1_gain, &dg1);
            set_row(&mut lg.ln1_bias, &db1);
            dx.add_assign(&d_from_ln1)?;
        }

        // Embedding lookup: x_0[i] = tok_emb[t_i] + pos_emb[i].
        for (i, &t) in cache.tokens.iter().enumerate() {
            let src = dx.row(i).to_vec();
            for (g, &v) in grads.tok_emb.row_mut(t as usize).iter_mut().zip(&src) {
                *g += v;
            }
            for (g, &v) in grads.pos_emb.row_mut(i).iter_mut().zip(&src) {
                *g += v;
            }
        }
        Ok(grads)
    }

    /// Duplicate the learned position table `factor` times so sequences up to
    /// `factor * max_pos` fit. Forward on any prefix that fit before is
    /// unchanged.
    pub fn extend_positions(&mut self, factor: usize) -> Result<()> {
        if factor == 0 {
            return Err(Error::Config("extension factor must be positive".to_string()));
        }
        let old = &self.params.pos_emb;
        let (rows, cols) = (old.rows(), old.cols());
        let mut new = Tensor2D::zeros(rows * factor, cols);
        for i in 0..rows * factor {
            new.row_mut(i).copy_from_slice(old.row(i % rows));
        }
        self.params.pos_emb = new;
        self.config.max_pos *= factor;
        Ok(())
    }

    /// Swap the attention span plan. Weights are untouched.
    pub fn set_plan(&mut self, plan: LayerPlan) -> Result<()> {
        if plan.len() != self.config.layers {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} layers, model has {}",
                plan.len(),
                self.config.layers
            )));
        }
        self.config.plan = plan;
        Ok(())
    }
}

fn add_row_bias(t: &mut Tensor2D, bias: &[f32]) {
    for i in 0..t.rows() {
        for (v, &b) in t.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn set_row(dst: &mut Tensor2D, values: &[f32]) {
    dst.row_mut(0).copy_from_slice(values);
}

/// Column sums in f64, ascending row order.
fn col_sums(t: &Tensor2D) -> Vec<f32> {
    let mut acc = vec![0.0f64; t.cols()];
    for i in 0..t.rows() {
        for (a, &v) in acc.iter_mut().zip(t.row(i)) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}
