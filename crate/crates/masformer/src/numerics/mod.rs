//! Deterministic f32 linear algebra with f64 accumulation in every reduction.
//!
//! Reductions always add in ascending index order, so a result is a pure
//! function of its inputs: same build, same bits.

mod adam;
mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use ops::{
    cross_entropy_logits, cross_entropy_logits_sum, gelu, gelu_backward, layer_norm,
    layer_norm_backward, row_softmax_masked, softmax_backward, LayerNormCache,
};
pub use rng::RngState;
pub use tensor::{matmul, matmul_backward, Tensor2D};
