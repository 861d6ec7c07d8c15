//! Randomized invariants over the attention patterns, cost model, plan
//! grammar, and numeric kernels. Inputs shrink to minimal counterexamples.

use masformer::attention::{
    allowed, attention_forward, attention_pair_count, masked_full_reference,
    receptive_field_reach, AttentionPattern, LayerPlan,
};
use masformer::cost::{nominal_cost, solve_block_size, solve_full_layers, solve_window_size};
use masformer::numerics::{row_softmax_masked, RngState, Tensor2D};
use masformer::plan_spec::{format_plan, parse_plan};
use proptest::prelude::*;

fn pattern_strategy() -> impl Strategy<Value = AttentionPattern> {
    prop_oneof![
        Just(AttentionPattern::Full),
        (1usize..=17).prop_map(|block_size| AttentionPattern::Block { block_size }),
        (0usize..=17).prop_map(|window_size| AttentionPattern::Window { window_size }),
    ]
}

fn plan_strategy() -> impl Strategy<Value = LayerPlan> {
    prop::collection::vec(pattern_strategy(), 1..=6)
        .prop_map(|patterns| LayerPlan::new(patterns).unwrap())
}

fn random_tensor(rng: &mut RngState, rows: usize, cols: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(rows, cols);
    for v in t.values_mut() {
        *v = rng.normal_f32(0.5);
    }
    t
}

proptest! {
    // Pair counts computed by the closed-form row spans must agree with a
    // brute-force walk over the visibility predicate, and the cost report
    // must carry exactly those counts.
    #[test]
    fn exact_costs_equal_enumerated_visible_pairs(
        plan in plan_strategy(),
        n in 1usize..=40,
    ) {
        let report = nominal_cost(&plan, n);
        for (l, pattern) in plan.patterns().iter().enumerate() {
            let mut brute = 0u64;
            for i in 0..n {
                for j in 0..n {
                    if allowed(pattern, i, j, n).unwrap() {
                        brute += 1;
                    }
                }
            }
            prop_assert_eq!(attention_pair_count(pattern, n), brute);
            prop_assert_eq!(report.per_layer_exact[l], brute);
        }
        prop_assert_eq!(
            report.total_exact,
            report.per_layer_exact.iter().sum::<u64>()
        );
    }

    // The banded kernel must match the dense masked reference on arbitrary
    // patterns and shapes, not just the tuned sizes.
    #[test]
    fn banded_kernel_matches_dense_reference(
        pattern in pattern_strategy(),
        n in 1usize..=12,
        dh in 1usize..=4,
        n_heads in 1usize..=2,
        seed in 0u64..1000,
    ) {
        let d = dh * n_heads;
        let mut rng = RngState::new(seed).substream(9);
        let x = random_tensor(&mut rng, n, d);
        let wq = random_tensor(&mut rng, d, d);
        let wk = random_tensor(&mut rng, d, d);
        let wv = random_tensor(&mut rng, d, d);
        let (fast, _) = attention_forward(&x, &wq, &wk, &wv, &pattern, n_heads).unwrap();
        let dense = masked_full_reference(&x, &wq, &wk, &wv, &pattern, n_heads).unwrap();
        for i in 0..n {
            for j in 0..d {
                let diff = (fast.row(i)[j] as f64 - dense.row(i)[j] as f64).abs();
                prop_assert!(diff <= 1e-6, "row {} col {} differs by {}", i, j, diff);
            }
        }
    }

    // Budgets constructed from a configuration must invert back to it with
    // zero residual.
    #[test]
    fn solvers_invert_constructed_budgets_exactly(
        layers in 1usize..=32,
        n_pow in 4u32..=13,
        rel_block in 0.0f64..1.0,
        rel_full in 0.0f64..=1.0,
    ) {
        let n = 1usize << n_pow;
        let b = 1usize.max((rel_block * n as f64) as usize);
        let bud_block = (layers * b * n) as u64;
        let s = solve_block_size(bud_block, layers, n).unwrap();
        prop_assert_eq!((s.value, s.residual), (b as u64, 0));

        let w = (rel_block * n as f64) as usize;
        let bud_window = (layers * 2 * w * n) as u64;
        let s = solve_window_size(bud_window, layers, n).unwrap();
        prop_assert_eq!((s.value, s.residual), (w as u64, 0));

        if b < n {
            let l = (rel_full * layers as f64) as usize;
            let bud_mixed =
                (l * n * n) as u64 + ((layers - l) * b * n) as u64;
            let s = solve_full_layers(bud_mixed, layers, n, b).unwrap();
            prop_assert_eq!((s.value, s.residual), (l as u64, 0));
        }
    }

    // For arbitrary feasible budgets the block solver must pick the nearest
    // achievable cost: the residual never exceeds half a block-size step.
    #[test]
    fn block_solver_rounds_to_the_nearest_achievable_cost(
        layers in 1usize..=32,
        n_pow in 4u32..=13,
        frac in 0.0f64..1.0,
    ) {
        let n = 1usize << n_pow;
        let den = (layers * n) as u64;
        let budget = den + ((frac * (den * (n as u64 - 1)) as f64) as u64);
        let s = solve_block_size(budget, layers, n).unwrap();
        prop_assert!(s.value >= 1 && s.value <= n as u64);
        prop_assert_eq!(
            s.residual,
            budget as i64 - (den * s.value) as i64
        );
        prop_assert!(
            s.residual.unsigned_abs() * 2 <= den,
            "residual {} exceeds half step {}", s.residual, den
        );
    }

    // The plan grammar prints what it parses: format then parse is identity.
    #[test]
    fn plan_grammar_round_trips(plan in plan_strategy()) {
        let text = format_plan(&plan);
        let parsed = parse_plan(&text, plan.len()).unwrap();
        prop_assert_eq!(parsed, plan);
    }

    // The receptive-field shortcut (band minima sit at band left edges) must
    // agree with plain boolean reachability through the layer stack.
    #[test]
    fn receptive_field_matches_boolean_reachability(
        plan in plan_strategy(),
        n in 1usize..=24,
    ) {
        let reach = receptive_field_reach(&plan, n).unwrap();
        // influenced_by[i] is the set of source positions with a path to i,
        // starting as {i} and growing one layer at a time.
        let mut influenced_by: Vec<Vec<bool>> =
            (0..n).map(|i| (0..n).map(|j| j == i).collect()).collect();
        for pattern in plan.patterns() {
            let next: Vec<Vec<bool>> = (0..n)
                .map(|i| {
                    let mut row = influenced_by[i].clone();
                    for j in pattern.row_start(i)..=i {
                        for s in 0..n {
                            row[s] = row[s] || influenced_by[j][s];
                        }
                    }
                    row
                })
                .collect();
            influenced_by = next;
        }
        for i in 0..n {
            let brute = influenced_by[i].iter().position(|&v| v).unwrap();
            prop_assert_eq!(reach[i], brute, "position {}", i);
            // Sets are contiguous spans: everything from the earliest
            // source through i influences i.
            for s in brute..=i {
                prop_assert!(influenced_by[i][s], "gap at {} for position {}", s, i);
            }
        }
    }

    // Masked softmax rows are probability distributions over the allowed
    // entries and exactly zero elsewhere.
    #[test]
    fn masked_softmax_rows_are_distributions(
        pattern in pattern_strategy(),
        n in 1usize..=16,
        seed in 0u64..1000,
    ) {
        let mut rng = RngState::new(seed).substream(10);
        let scores = random_tensor(&mut rng, n, n);
        let probs =
            row_softmax_masked(&scores, |i, j| allowed(&pattern, i, j, n).unwrap()).unwrap();
        for i in 0..n {
            let mut sum = 0.0f64;
            for j in 0..n {
                let p = probs.row(i)[j];
                prop_assert!(p >= 0.0, "negative probability at ({}, {})", i, j);
                if !allowed(&pattern, i, j, n).unwrap() {
                    prop_assert_eq!(p, 0.0, "mass on masked entry ({}, {})", i, j);
                }
                sum += p as f64;
            }
            prop_assert!((sum - 1.0).abs() <= 1e-5, "row {} sums to {}", i, sum);
        }
    }
}
