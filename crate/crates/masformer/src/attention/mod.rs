//! Causal attention span patterns and per-layer plans.
//!
//! Every pattern admits a contiguous span of keys ending at the query
//! position: full attention spans the whole prefix, block attention stops at
//! the block boundary, window attention at a fixed lookback. That shared
//! structure is what the banded kernel exploits.

mod kernel;
mod reference;

pub use kernel::{attention_backward, attention_forward, AttentionCache};
pub use reference::{masked_full_reference, masked_full_reference_grads, ReferenceGrads};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionPattern {
    /// Causal: position i attends to all j <= i.
    Full,
    /// Causal and confined to non-overlapping blocks of `block_size`
    /// consecutive positions: j <= i and floor(i/b) == floor(j/b).
    Block { block_size: usize },
    /// Causal sliding window: max(0, i - window_size) <= j <= i.
    Window { window_size: usize },
}

impl AttentionPattern {
    pub fn validate(&self) -> Result<()> {
        match self {
            AttentionPattern::Block { block_size: 0 } => {
                Err(Error::InvalidPlan("block size must be at least 1".to_string()))
            }
            _ => Ok(()),
        }
    }

    /// First key position visible from query position `i`. The visible span
    /// is always the contiguous range row_start(i)..=i, never empty.
    pub fn row_start(&self, i: usize) -> usize {
        match *self {
            AttentionPattern::Full => 0,
            AttentionPattern::Block { block_size } => (i / block_size) * block_size,
            AttentionPattern::Window { window_size } => i.saturating_sub(window_size),
        }
    }
}

/// Whether query position `i` may attend to key position `j` in a sequence of
/// length `n`.
pub fn allowed(pattern: &AttentionPattern, i: usize, j: usize, n: usize) -> Result<bool> {
    pattern.validate()?;
    if i >= n || j >= n {
        return Err(Error::PositionOutOfRange { i, j, n });
    }
    Ok(j <= i && j >= pattern.row_start(i))
}

/// Number of (query, key) pairs the pattern admits at sequence length `n`.
/// This is the exact causal score count, not the nominal budget.
pub fn attention_pair_count(pattern: &AttentionPattern, n: usize) -> u64 {
    let mut total = 0u64;
    for i in 0..n {
        total += (i - pattern.row_start(i) + 1) as u64;
    }
    total
}

/// One attention pattern per layer, bottom (closest to the embedding) first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    patterns: Vec<AttentionPattern>,
}

impl LayerPlan {
    pub fn new(patterns: Vec<AttentionPattern>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::InvalidPlan("a plan needs at least one layer".to_string()));
        }
        for p in &patterns {
            p.validate()?;
        }
        Ok(LayerPlan { patterns })
    }

    pub fn uniform(pattern: AttentionPattern, layers: usize) -> Result<Self> {
        LayerPlan::new(vec![pattern; layers])
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn layer(&self, l: usize) -> &AttentionPattern {
        &self.patterns[l]
    }

    pub fn patterns(&self) -> &[AttentionPattern] {
        &self.patterns
    }

    pub fn full_layer_count(&self) -> usize {
        self.patterns.iter().filter(|p| matches!(p, AttentionPattern::Full)).count()
    }
}

/// For each position, the earliest position whose input can influence it
/// after all layers of `plan` run in sequence (residual paths included, so a
/// position always reaches itself).
pub fn receptive_field_reach(plan: &LayerPlan, n: usize) -> Result<Vec<usize>> {
    let mut reach: Vec<usize> = (0..n).collect();
    for pattern in plan.patterns() {
        pattern.validate()?;
        // reach stays non-decreasing: it starts as the identity and each step
        // takes minima over bands whose start is non-decreasing in i. The
        // band minimum is therefore the value at the band's left edge.
        let next: Vec<usize> = (0..n).map(|i| reach[pattern.row_start(i)]).collect();
        reach = next;
    }
    Ok(reach)
}
