//! Attention cost accounting and budget solvers.
//!
//! Costs count query-key score evaluations. The nominal figure is the
//! conventional per-layer budget (n^2 full, b*n block, 2*w*n window); the
//! exact figure counts the pairs a causal mask actually admits. Budgets and
//! comparisons use the nominal figure so different span layouts can be
//! equated; the exact figure is what a kernel really executes.

use crate::attention::{attention_pair_count, AttentionPattern, LayerPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub per_layer_nominal: Vec<u64>,
    pub per_layer_exact: Vec<u64>,
    pub total_nominal: u64,
    pub total_exact: u64,
}

/// Nominal score budget of one layer at sequence length `n`.
pub fn nominal_layer_cost(pattern: &AttentionPattern, n: usize) -> u64 {
    let n = n as u64;
    match *pattern {
        AttentionPattern::Full => n * n,
        AttentionPattern::Block { block_size } => block_size as u64 * n,
        AttentionPattern::Window { window_size } => 2 * window_size as u64 * n,
    }
}

/// Per-layer and total costs of a plan at sequence length `n`. For full and
/// block layers the exact count never exceeds the nominal budget.
pub fn nominal_cost(plan: &LayerPlan, n: usize) -> CostReport {
    let per_layer_nominal: Vec<u64> =
        plan.patterns().iter().map(|p| nominal_layer_cost(p, n)).collect();
    let per_layer_exact: Vec<u64> =
        plan.patterns().iter().map(|p| attention_pair_count(p, n)).collect();
    CostReport {
        total_nominal: per_layer_nominal.iter().sum(),
        total_exact: per_layer_exact.iter().sum(),
        per_layer_nominal,
        per_layer_exact,
    }
}

/// Cost rendered in millions, e.g. 436207616 -> "436M". Rounds down unless
/// the remainder is within 100_000 of the next million; that convention keeps
/// every value in the standard budget table stable.
pub fn format_millions(cost: u64) -> String {
    let q = cost / 1_000_000;
    let r = cost % 1_000_000;
    if r >= 900_000 {
        format!("{}M", q + 1)
    } else {
        format!("{q}M")
    }
}

/// Integer solved from a budget, with the leftover budget after achieving it.
/// `residual = budget - achieved_cost`, so zero means the budget is met
/// exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveResult {
    pub value: u64,
    pub residual: i64,
}

fn round_nearest(num: i128, den: i128) -> i128 {
    // den > 0; ties round toward +infinity.
    let shifted = 2 * num + den;
    shifted.div_euclid(2 * den)
}

/// Block size whose uniform plan comes nearest to `budget`:
/// budget ~= layers * b * n.
pub fn solve_block_size(budget: u64, layers: usize, n: usize) -> Result<SolveResult> {
    if layers == 0 || n == 0 {
        return Err(Error::Config("layers and seq len must be positive".to_string()));
    }
    let den = layers as i128 * n as i128;
    let b = round_nearest(budget as i128, den);
    if b < 1 || b > n as i128 {
        return Err(Error::InfeasibleBudget {
            budget,
            reason: format!("nearest block size {b} is outside 1..={n}"),
        });
    }
    let achieved = (den * b) as i64;
    Ok(SolveResult { value: b as u64, residual: budget as i64 - achieved })
}

/// Window size whose uniform plan comes nearest to `budget`:
/// budget ~= layers * 2 * w * n.
pub fn solve_window_size(budget: u64, layers: usize, n: usize) -> Result<SolveResult> {
    if layers == 0 || n == 0 {
        return Err(Error::Config("layers and seq len must be positive".to_string()));
    }
    let den = 2 * layers as i128 * n as i128;
    let w = round_nearest(budget as i128, den);
    if w < 0 || w > n as i128 {
        return Err(Error::InfeasibleBudget {
            budget,
            reason: format!("nearest window size {w} is outside 0..={n}"),
        });
    }
    let achieved = (den * w) as i64;
    Ok(SolveResult { value: w as u64, residual: budget as i64 - achieved })
}

/// Number of full-attention layers (the rest run Block(`block_size`)) whose
/// mixed plan comes nearest to `budget`:
/// budget ~= (layers - l) * block_size * n + l * n^2.
pub fn solve_full_layers(
    budget: u64,
    layers: usize,
    n: usize,
    block_size: usize,
) -> Result<SolveResult> {
    if layers == 0 || n == 0 || block_size == 0 {
        return Err(Error::Config(
            "layers, seq len, and block size must be positive".to_string(),
        ));
    }
    if block_size >= n {
        return Err(Error::Config(format!(
            "block size {block_size} must be smaller than seq len {n} to trade layers"
        )));
    }
    let n_i = n as i128;
    let b_i = block_size as i128;
    let base = layers as i128 * b_i * n_i; // all-block floor
    let den = n_i * n_i - b_i * n_i; // marginal cost of one full layer
    let l = round_nearest(budget as i128 - base, den);
    if l < 0 || l > layers as i128 {
        return Err(Error::InfeasibleBudget {
            budget,
            reason: format!("nearest full-layer count {l} is outside 0..={layers}"),
        });
    }
    let achieved = (base + l * den) as i64;
    Ok(SolveResult { value: l as u64, residual: budget as i64 - achieved })
}

/// Named row of the standard 24-layer, 8192-token budget table.
pub struct ReferenceRow {
    pub label: String,
    pub plan: LayerPlan,
    pub nominal: u64,
    pub display: String,
}

/// The standard comparison table: full attention, block and window baselines,
/// and mixed plans with l full layers over Block(1024), all at 24 layers and
/// sequence length 8192.
pub fn reference_table() -> Vec<ReferenceRow> {
    let layers = 24;
    let n = 8192;
    let block = 1024;
    let mut rows = Vec::new();
    let mut push = |label: String, plan: LayerPlan| {
        let nominal = nominal_cost(&plan, n).total_nominal;
        rows.push(ReferenceRow { label, display: format_millions(nominal), nominal, plan });
    };
    push("Full attention".to_string(), LayerPlan::uniform(AttentionPattern::Full, layers).unwrap());
    for b in [1024usize, 2048, 4096] {
        push(
            format!("Block (b={b})"),
            LayerPlan::uniform(AttentionPattern::Block { block_size: b }, layers).unwrap(),
        );
    }
    for w in [1024usize, 2048] {
        push(
            format!("Window (w={w})"),
            LayerPlan::uniform(AttentionPattern::Window { window_size: w }, layers).unwrap(),
        );
    }
    for l in [2usize, 4, 6, 8, 12] {
        let mut patterns = vec![AttentionPattern::Full; l];
        patterns.extend(vec![AttentionPattern::Block { block_size: block }; layers - l]);
        push(format!("Mixed (l={l})"), LayerPlan::new(patterns).unwrap());
    }
    rows
}
