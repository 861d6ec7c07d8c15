//! Text form of attention span plans.
//!
//! Atoms: `full`, `block:B`, `window:W`. A bare atom means every layer runs
//! it. `bottom:L@block:B` (or `top:`, `middle:`, `everyk:`) places L full
//! layers over a sparse base. A comma-separated list of atoms gives one
//! pattern per layer and is the canonical serialized form.

use crate::attention::{AttentionPattern, LayerPlan};
use crate::error::{Error, Result};
use crate::model::{make_layer_plan_over, PlacementStrategy};

pub fn format_pattern(pattern: &AttentionPattern) -> String {
    match *pattern {
        AttentionPattern::Full => "full".to_string(),
        AttentionPattern::Block { block_size } => format!("block:{block_size}"),
        AttentionPattern::Window { window_size } => format!("window:{window_size}"),
    }
}

pub fn parse_pattern(s: &str) -> Result<AttentionPattern> {
    let s = s.trim();
    let pattern = if s == "full" {
        AttentionPattern::Full
    } else if let Some(rest) = s.strip_prefix("block:") {
        AttentionPattern::Block { block_size: parse_count(rest, s)? }
    } else if let Some(rest) = s.strip_prefix("window:") {
        AttentionPattern::Window { window_size: parse_count(rest, s)? }
    } else {
        return Err(Error::InvalidPlan(format!(
            "unrecognized pattern '{s}' (expected full, block:B, or window:W)"
        )));
    };
    pattern.validate()?;
    Ok(pattern)
}

fn parse_count(digits: &str, whole: &str) -> Result<usize> {
    digits
        .parse::<usize>()
        .map_err(|_| Error::InvalidPlan(format!("'{whole}' needs an unsigned size")))
}

/// One pattern per layer, comma separated. Round-trips through `parse_plan`.
pub fn format_plan(plan: &LayerPlan) -> String {
    plan.patterns().iter().map(format_pattern).collect::<Vec<_>>().join(",")
}

/// Parse a plan for a model with `layers` layers.
pub fn parse_plan(s: &str, layers: usize) -> Result<LayerPlan> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::InvalidPlan("empty plan spec".to_string()));
    }
    if s.contains(',') {
        let patterns = s.split(',').map(parse_pattern).collect::<Result<Vec<_>>>()?;
        if patterns.len() != layers {
            return Err(Error::InvalidPlan(format!(
                "plan lists {} layers, model has {layers}",
                patterns.len()
            )));
        }
        return LayerPlan::new(patterns);
    }
    if let Some((head, base)) = s.split_once('@') {
        let (strat, count) = head.split_once(':').ok_or_else(|| {
            Error::InvalidPlan(format!("'{head}' needs the form strategy:count"))
        })?;
        let l = parse_count(count, head)?;
        let strategy = match strat {
            "bottom" => PlacementStrategy::Bottom(l),
            "top" => PlacementStrategy::Top(l),
            "middle" => PlacementStrategy::Middle(l),
            "everyk" => PlacementStrategy::EveryK(l),
            other => {
                return Err(Error::InvalidPlan(format!(
                    "unknown placement '{other}' (expected bottom, top, middle, or everyk)"
                )))
            }
        };
        let base = parse_pattern(base)?;
        if base == AttentionPattern::Full {
            return Err(Error::InvalidPlan(
                "placement over a full base is already all-full; spell it 'full'".to_string(),
            ));
        }
        return make_layer_plan_over(layers, strategy, base);
    }
    LayerPlan::uniform(parse_pattern(s)?, layers)
}
