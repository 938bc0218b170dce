//! End-to-end engine behavior on planted synthetic data.

use std::collections::BTreeMap;

use histmatch::eval::seeded_config;
use histmatch::{
    check_guarantees, histsim_run, scan_groupby, stage1_prune, synth_generate, top_k_select,
    ExecutionMode, PlantedDistances, QuerySpec, RunConfig, SamplingPolicy, SelectivityProfile,
    StartBlock, SynthSpec, TargetSpec,
};

fn uniform_query(k: usize, epsilon: f64, delta: f64, sigma: f64) -> QuerySpec {
    QuerySpec {
        x_attribute: "x".into(),
        z_attribute: "z".into(),
        target: TargetSpec::Uniform,
        k,
        epsilon,
        delta,
        sigma,
        include_target_candidate: true,
    }
}

fn planted_spec(
    num_candidates: usize,
    num_groups: usize,
    rows: usize,
    distances: Vec<f64>,
    seed: u64,
) -> SynthSpec {
    SynthSpec {
        num_candidates,
        num_groups,
        rows,
        selectivity: SelectivityProfile::Uniform,
        planted: PlantedDistances::Explicit { distances },
        target: None,
        rng_seed: seed,
        rows_per_block: 128,
    }
}

#[test]
fn planted_closest_candidate_wins() {
    // One candidate drawn from the target itself, 49 others far away.
    let mut distances = vec![0.8; 50];
    distances[0] = 0.0;
    let out = synth_generate(&planted_spec(50, 6, 100_000, distances, 42)).unwrap();
    let query = uniform_query(1, 0.05, 0.05, 0.0);
    let mut config = RunConfig { m: 5_000, ..RunConfig::default() };
    for seed in 0..5 {
        config.rng_seed = seed;
        let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
        assert_eq!(result.matched_ids(), vec![0], "seed {seed}");
    }
}

#[test]
fn k_at_least_survivor_count_short_circuits() {
    let out = synth_generate(&planted_spec(3, 4, 20_000, vec![0.1, 0.5, 0.9], 7)).unwrap();
    let query = uniform_query(5, 0.1, 0.05, 0.0);
    let config = RunConfig { m: 1_000, ..seeded_config(1, ExecutionMode::SingleContext) };
    let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert_eq!(result.matched.len(), 3, "every survivor is returned");
    assert_eq!(result.diagnostics.rounds, 0, "nothing to separate");
}

#[test]
fn tiny_dataset_falls_back_to_exact_scan() {
    let out = synth_generate(&planted_spec(8, 4, 3_000, vec![
        0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.1,
    ], 11)).unwrap();
    let query = uniform_query(3, 0.05, 0.05, 0.0);
    // Default m far exceeds the dataset: stage 1 consumes everything.
    let config = seeded_config(5, ExecutionMode::SingleContext);
    let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert!(result.diagnostics.exact);

    let oracle = scan_groupby(&out.dataset, "x", "z", 0.0).unwrap();
    let target = vec![0.25; 4];
    let taus: BTreeMap<u32, f64> = oracle
        .iter()
        .map(|(id, h)| {
            let t: f64 = h
                .counts()
                .iter()
                .zip(&target)
                .map(|(c, q)| (*c as f64 / h.total() as f64 - q).abs())
                .sum();
            (*id, t)
        })
        .collect();
    assert_eq!(result.matched_ids(), top_k_select(&taus, 3));
    // Exact results carry exact histograms.
    for m in &result.matched {
        assert_eq!(&m.histogram, &oracle[&m.candidate_id]);
        assert!(m.exhausted);
    }
}

#[test]
fn two_candidate_separation_is_reliable() {
    let out = synth_generate(&planted_spec(2, 5, 100_000, vec![0.1, 0.9], 3)).unwrap();
    let oracle = scan_groupby(&out.dataset, "x", "z", 0.0).unwrap();
    let target = vec![0.2; 5];
    let dist = |id: u32| -> f64 {
        let h = &oracle[&id];
        h.counts()
            .iter()
            .zip(&target)
            .map(|(c, q)| (*c as f64 / h.total() as f64 - q).abs())
            .sum()
    };
    let truth = if dist(0) < dist(1) { 0 } else { 1 };

    let query = uniform_query(1, 0.04, 0.05, 0.0);
    let mut wrong = 0;
    for seed in 0..100 {
        let config = RunConfig { m: 2_000, ..seeded_config(seed, ExecutionMode::SingleContext) };
        let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
        if result.matched_ids() != vec![truth] {
            wrong += 1;
        }
    }
    assert!(wrong <= 5, "wrong answers: {wrong}/100");
}

#[test]
fn identical_candidates_resolve_by_exhaustion() {
    // Two candidates with the same planted distance: only exhaustion can
    // decide, and either answer is valid.
    let out = synth_generate(&planted_spec(2, 4, 30_000, vec![0.4, 0.4], 19)).unwrap();
    let query = uniform_query(1, 0.01, 0.05, 0.0);
    let config = RunConfig { m: 1_000, ..seeded_config(2, ExecutionMode::SingleContext) };
    let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    // Planted distances are equal but multinomial noise separates the
    // achieved ones slightly; with epsilon far below the gap the run usually
    // exhausts, and in every case the guarantees must hold.
    let oracle = scan_groupby(&out.dataset, "x", "z", 0.0).unwrap();
    let target = vec![0.25; 4];
    let report = check_guarantees(&result, &oracle, &target, &query, 30_000);
    assert!(report.ok(), "violated: {:?}", report.violated_candidates);
}

#[test]
fn stage1_sigma_zero_prunes_nothing() {
    let out = synth_generate(&planted_spec(10, 4, 20_000, vec![0.3; 10], 23)).unwrap();
    let query = uniform_query(1, 0.05, 0.05, 0.0);
    let config = RunConfig { m: 5_000, ..RunConfig::default() };
    let outcome = stage1_prune(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert!(outcome.pruned.is_empty());
    assert_eq!(outcome.surviving.len(), 10);
    assert!(outcome.pvalues.values().all(|p| *p == 1.0));
}

#[test]
fn stage1_prunes_rare_keeps_common() {
    // 5 common candidates and one at selectivity 5e-5, threshold 1%.
    let mut weights = vec![0.2; 5];
    weights.push(0.00005 / (1.0 - 0.00005));
    let spec = SynthSpec {
        num_candidates: 6,
        num_groups: 4,
        rows: 100_000,
        selectivity: SelectivityProfile::Explicit { weights },
        planted: PlantedDistances::Ramp { min: 0.1, max: 0.5 },
        target: None,
        rng_seed: 31,
        rows_per_block: 128,
    };
    let out = synth_generate(&spec).unwrap();
    let query = uniform_query(1, 0.05, 0.03, 0.01);
    let config = RunConfig { m: 50_000, ..RunConfig::default() };
    let outcome = stage1_prune(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert!(outcome.pruned.contains(&5), "rare candidate must be pruned");
    for c in 0..5 {
        assert!(outcome.surviving.contains(&c), "candidate {c} must survive");
    }
}

#[test]
fn stage1_keeps_boundary_candidates() {
    // Two candidates at selectivity 0.5 with threshold 0.25: both must
    // survive in effectively every run.
    let query = uniform_query(1, 0.05, 0.03, 0.25);
    let mut failures = 0;
    for seed in 0..100 {
        let out =
            synth_generate(&planted_spec(2, 4, 20_000, vec![0.2, 0.6], 1000 + seed)).unwrap();
        let config = RunConfig {
            m: 2_000,
            ..seeded_config(seed, ExecutionMode::SingleContext)
        };
        let outcome = stage1_prune(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
        if outcome.surviving.len() != 2 {
            failures += 1;
        }
    }
    assert!(failures <= 1, "{failures} of 100 runs pruned a qualifying candidate");
}

#[test]
fn policies_agree_on_guarantees() {
    let out = synth_generate(&planted_spec(20, 5, 60_000, vec![
        0.02, 0.08, 0.15, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85,
        0.9, 0.95, 1.0, 1.05, 1.1,
    ], 47)).unwrap();
    let oracle = scan_groupby(&out.dataset, "x", "z", 0.0).unwrap();
    let target = vec![0.2; 5];
    let query = uniform_query(3, 0.06, 0.05, 0.0);
    for policy in [
        SamplingPolicy::SequentialScan,
        SamplingPolicy::AnyActiveSync,
        SamplingPolicy::AnyActiveLookahead,
    ] {
        for seed in 0..10 {
            let config = RunConfig {
                m: 4_000,
                policy,
                lookahead: if policy == SamplingPolicy::AnyActiveSync { 1 } else { 64 },
                ..seeded_config(seed, ExecutionMode::SingleContext)
            };
            let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
            let report = check_guarantees(&result, &oracle, &target, &query, 60_000);
            assert!(report.ok(), "{policy:?} seed {seed}: {:?}", report.violated_candidates);
        }
    }
}

#[test]
fn two_worker_mode_matches_single_context() {
    let out = synth_generate(&planted_spec(12, 6, 50_000, vec![
        0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1,
    ], 53)).unwrap();
    let query = uniform_query(3, 0.05, 0.05, 0.0);
    for seed in 0..5 {
        let single = RunConfig { m: 3_000, ..seeded_config(seed, ExecutionMode::SingleContext) };
        let two = RunConfig { execution_mode: ExecutionMode::TwoWorker, ..single.clone() };
        let mut a = histsim_run(&out.dataset, &out.bitmaps[0], &query, &single).unwrap();
        let mut b = histsim_run(&out.dataset, &out.bitmaps[0], &query, &two).unwrap();
        a.diagnostics.elapsed_ms = 0;
        b.diagnostics.elapsed_ms = 0;
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn fixed_start_block_is_reproducible() {
    let out = synth_generate(&planted_spec(6, 4, 25_000, vec![
        0.1, 0.3, 0.5, 0.7, 0.9, 1.1,
    ], 61)).unwrap();
    let query = uniform_query(2, 0.05, 0.05, 0.0);
    let config = RunConfig {
        m: 2_000,
        start_block: StartBlock::Fixed(17),
        ..seeded_config(9, ExecutionMode::SingleContext)
    };
    let mut a = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    let mut b = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    a.diagnostics.elapsed_ms = 0;
    b.diagnostics.elapsed_ms = 0;
    assert_eq!(a, b);
}

#[test]
fn named_target_excluding_itself() {
    // Candidate 0 sits on the target; candidate 1 is nearly identical to it;
    // the rest are far. Matching against candidate 0's own histogram with
    // include_target_candidate = false must surface candidate 1.
    let out = synth_generate(&planted_spec(6, 4, 40_000, vec![
        0.0, 0.02, 0.8, 0.9, 1.0, 1.1,
    ], 71)).unwrap();
    let mut query = uniform_query(1, 0.1, 0.05, 0.0);
    query.target = TargetSpec::Candidate("z0000".into());
    query.include_target_candidate = false;
    let config = RunConfig { m: 2_000, ..seeded_config(4, ExecutionMode::SingleContext) };
    let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert_eq!(result.matched_ids(), vec![1]);
    assert!(result.diagnostics.target_scan_blocks > 0);

    // With the default inclusion the target matches itself.
    query.include_target_candidate = true;
    let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert_eq!(result.matched_ids(), vec![0]);
}

#[test]
fn all_pruned_returns_empty_result() {
    let out = synth_generate(&planted_spec(4, 4, 50_000, vec![0.2, 0.4, 0.6, 0.8], 83)).unwrap();
    // Threshold above every candidate's selectivity (0.25 each).
    let query = uniform_query(1, 0.05, 0.05, 0.9);
    let config = RunConfig { m: 10_000, ..seeded_config(0, ExecutionMode::SingleContext) };
    let result = histsim_run(&out.dataset, &out.bitmaps[0], &query, &config).unwrap();
    assert!(result.is_empty());
    assert_eq!(result.diagnostics.pruned_candidates, 4);
}

/// Reading any content-independent prefix of a shuffled dataset yields
/// per-group frequencies consistent with the candidate's true distribution.
#[test]
fn shuffled_prefix_is_uniform_sample() {
    let groups = 5;
    let spec = planted_spec(2, groups, 40_000, vec![0.5, 0.3], 0);
    // chi-squared critical value at p = 0.01 for 4 degrees of freedom.
    let crit = 13.2767;
    let mut exceed = 0;
    let seeds = 200;
    for seed in 0..seeds {
        let out = synth_generate(&SynthSpec { rng_seed: seed, ..spec.clone() }).unwrap();
        let truth = &out.truth.candidates[0];
        let expected_probs: Vec<f64> =
            truth.counts.iter().map(|c| *c as f64 / truth.rows as f64).collect();
        let zcol = out.dataset.column("z").unwrap();
        let xcol = out.dataset.column("x").unwrap();
        // First half of the blocks, in storage order.
        let rows = out.dataset.block_rows(0).start
            ..out.dataset.block_rows(out.dataset.block_count() / 2).end;
        let mut counts = vec![0u64; groups];
        let mut n = 0u64;
        for r in rows {
            if zcol[r] == 0 {
                counts[xcol[r] as usize] += 1;
                n += 1;
            }
        }
        let chi2: f64 = counts
            .iter()
            .zip(&expected_probs)
            .map(|(c, p)| {
                let e = p * n as f64;
                (*c as f64 - e) * (*c as f64 - e) / e
            })
            .sum();
        if chi2 > crit {
            exceed += 1;
        }
    }
    // Without-replacement sampling has sub-multinomial variance, so the
    // exceedance rate sits below the nominal 1%.
    assert!(exceed <= 8, "{exceed}/{seeds} prefixes failed the frequency check");
}
