//! Paired-seed chain-completion experiment over three allocation arms:
//! uniform fixed deadlines ("static"), proportional allocation without
//! surplus redistribution ("atba"), and proportional allocation with the
//! cascade ("atba_cascade"). Trial i draws one latency vector per arm from
//! identically derived streams, so completion differences are exact
//! counterfactuals. Runs entirely on simulated time.

use serde_json::json;

use crate::atba::{
    allocate, execute_chain_opts, static_allocate, AllocationParams, ChainOutcome, ChainPlan,
    LatencyHistory,
};
use crate::config::AppConfig;
use crate::seed;
use crate::stats::{chi2_2x2, cohens_d, odds_ratio, welch_t};
use crate::synth::latency::LatencySampler;

use super::{
    proportion_ci, sample_stats, ArmSummary, Comparison, EffectSize, ExperimentId, HardAssert,
    HarnessError, SummaryStats, Target, TrialRecord,
};

const ARM_STATIC: &str = "static";
const ARM_ATBA: &str = "atba";
const ARM_CASCADE: &str = "atba_cascade";

struct ArmOutcome {
    records: Vec<TrialRecord>,
    end_to_end: Vec<f64>,
}

impl ArmOutcome {
    fn completions(&self) -> u64 {
        self.records.iter().filter(|r| r.completed).count() as u64
    }
}

fn run_arm(
    arm: &str,
    plan_budgets: &[f64],
    cascade: bool,
    chain: &[String],
    samplers: &[LatencySampler],
    seed_master: u64,
    trials: u32,
) -> (ArmOutcome, Vec<Vec<f64>>) {
    let mut records = Vec::with_capacity(trials as usize);
    let mut end_to_end = Vec::with_capacity(trials as usize);
    let mut drawn = Vec::with_capacity(trials as usize);
    for i in 0..trials {
        // Per-trial stream: every arm derives the identical seed, so the
        // latency realization is shared across arms by construction.
        let mut rng = seed::stream(seed_master, "h3-trial", i as u64);
        let draws: Vec<f64> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
        let plan = ChainPlan::new(chain.to_vec(), plan_budgets.to_vec());
        let result = execute_chain_opts(&plan, |idx, _, _| draws[idx], None, cascade);
        let mut rec = TrialRecord::new(arm, i);
        rec.completed = matches!(result.outcome, ChainOutcome::Completed);
        rec.end_to_end_ms = result.total_elapsed_ms;
        rec.per_tool_ms = draws.clone();
        if let ChainOutcome::TimedOutAt { index, .. } = &result.outcome {
            rec.failed_at = Some(*index);
        }
        end_to_end.push(result.total_elapsed_ms);
        records.push(rec);
        drawn.push(draws);
    }
    (ArmOutcome { records, end_to_end }, drawn)
}

pub fn run(cfg: &AppConfig, id: ExperimentId, trials: u32) -> Result<SummaryStats, HarnessError> {
    let bench = &cfg.bench;
    let chain = bench.chain.clone();
    let samplers: Vec<LatencySampler> = bench
        .latency_means_ms
        .iter()
        .zip(&bench.latency_stddevs_ms)
        .map(|(m, s)| LatencySampler::new(*m, *s))
        .collect();

    // Warmup: one derived stream per tool feeds the trailing window, then
    // the histories freeze so every trial sees the same budget vector.
    let mut history = LatencyHistory::new(crate::atba::DEFAULT_WINDOW);
    for (j, (tool, sampler)) in chain.iter().zip(&samplers).enumerate() {
        let mut rng = seed::stream(bench.seed, "h3-warmup", j as u64);
        for _ in 0..bench.warmup_observations {
            history
                .record(tool, sampler.sample(&mut rng))
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
    }

    let params = AllocationParams::new(bench.effective_budget_ms(), bench.reserve_frac);
    let atba_budgets =
        allocate(&chain, &params, &history).map_err(|e| HarnessError::Config(e.to_string()))?;
    let static_budgets =
        static_allocate(&chain, &params).map_err(|e| HarnessError::Config(e.to_string()))?;

    let (arm_a, draws_a) = run_arm(
        ARM_STATIC,
        &static_budgets,
        false,
        &chain,
        &samplers,
        bench.seed,
        trials,
    );
    let (arm_b, draws_b) = run_arm(
        ARM_ATBA,
        &atba_budgets,
        false,
        &chain,
        &samplers,
        bench.seed,
        trials,
    );
    let (arm_c, draws_c) = run_arm(
        ARM_CASCADE,
        &atba_budgets,
        true,
        &chain,
        &samplers,
        bench.seed,
        trials,
    );

    // Paired-seed integrity: the three drawn latency vectors must be equal
    // at every trial index; a mismatch would invalidate H4.
    let paired = draws_a == draws_b && draws_b == draws_c;
    if !paired {
        return Err(HarnessError::Pairing(
            "latency draws differ across arms".into(),
        ));
    }

    let mut stats = SummaryStats::new(id, bench.seed, cfg.hash(), trials);

    for (arm, outcome) in [
        (ARM_STATIC, &arm_a),
        (ARM_ATBA, &arm_b),
        (ARM_CASCADE, &arm_c),
    ] {
        let completions = outcome.completions();
        let (p, ci) = proportion_ci(completions, trials as u64);
        let (mean, median) = sample_stats(&outcome.end_to_end);
        stats.arms.push(ArmSummary {
            arm: arm.to_string(),
            trials,
            measure: "completion",
            count: completions,
            proportion: p,
            ci95: ci,
            mean_ms: mean,
            median_ms: median,
        });
    }

    let n = trials as u64;
    let (a_done, b_done, c_done) = (arm_a.completions(), arm_b.completions(), arm_c.completions());
    let (a_to, b_to, c_to) = (n - a_done, n - b_done, n - c_done);

    // H4 sets, computed trialwise on the shared realizations.
    let rescued: Vec<u32> = (0..trials)
        .filter(|&i| !arm_b.records[i as usize].completed && arm_c.records[i as usize].completed)
        .collect();
    let broken: Vec<u32> = (0..trials)
        .filter(|&i| arm_b.records[i as usize].completed && !arm_c.records[i as usize].completed)
        .collect();

    stats.metrics.insert("budget_ms".into(), json!(bench.effective_budget_ms()));
    stats.metrics.insert("reserve_frac".into(), json!(bench.reserve_frac));
    stats
        .metrics
        .insert("budgets_static_ms".into(), json!(static_budgets));
    stats.metrics.insert("budgets_atba_ms".into(), json!(atba_budgets));
    stats.metrics.insert(
        "p99_estimates_ms".into(),
        json!(chain.iter().map(|t| history.p99(t)).collect::<Vec<_>>()),
    );
    stats.metrics.insert(
        "timeouts".into(),
        json!({ ARM_STATIC: a_to, ARM_ATBA: b_to, ARM_CASCADE: c_to }),
    );
    stats
        .metrics
        .insert("rescued_by_cascade".into(), json!(rescued.len()));
    stats
        .metrics
        .insert("broken_by_cascade".into(), json!(broken.len()));

    let rel_reduction = |arm_to: u64| -> Option<f64> {
        (a_to > 0).then(|| (a_to as f64 - arm_to as f64) / a_to as f64)
    };
    let c_vs_a = rel_reduction(c_to);
    let b_vs_a = rel_reduction(b_to);
    stats.metrics.insert(
        "relative_timeout_reduction".into(),
        json!({
            "atba_cascade_vs_static": c_vs_a,
            "atba_vs_static": b_vs_a,
        }),
    );
    let rescue_fraction = (b_to > 0).then(|| rescued.len() as f64 / b_to as f64);
    stats
        .metrics
        .insert("cascade_rescue_fraction".into(), json!(rescue_fraction));

    stats.targets.push(Target {
        name: "relative_timeout_reduction_cascade_vs_static".into(),
        target: 0.40,
        measured: c_vs_a,
        met: c_vs_a.map(|v| v >= 0.40),
    });
    stats.targets.push(Target {
        name: "cascade_rescue_fraction_of_no_cascade_failures".into(),
        target: 0.25,
        measured: rescue_fraction,
        met: rescue_fraction.map(|v| v >= 0.25),
    });

    let table = [
        [c_done as f64, c_to as f64],
        [a_done as f64, a_to as f64],
    ];
    if let Ok(chi2) = chi2_2x2(table) {
        let effect = odds_ratio(table).ok().map(|or| EffectSize {
            name: "odds_ratio",
            value: or.or,
            ci95: Some((or.ci_lo, or.ci_hi)),
        });
        stats.comparisons.push(Comparison {
            name: "completion atba_cascade vs static".into(),
            test: "chi2_2x2",
            statistic: chi2.statistic,
            p_value: chi2.p,
            effect,
        });
    }
    if let (Ok(t), Ok(d)) = (
        welch_t(&arm_c.end_to_end, &arm_a.end_to_end),
        cohens_d(&arm_c.end_to_end, &arm_a.end_to_end),
    ) {
        stats.comparisons.push(Comparison {
            name: "end_to_end_ms atba_cascade vs static".into(),
            test: "welch_t",
            statistic: t.t,
            p_value: t.p,
            effect: Some(EffectSize {
                name: "cohens_d",
                value: d,
                ci95: None,
            }),
        });
    }

    stats.hard_asserts.push(HardAssert::check(
        "paired_latency_draws_identical",
        paired,
        "all arms observed the same latency realization per trial",
    ));
    match id {
        ExperimentId::H3 => {
            stats.hard_asserts.push(HardAssert::check(
                "cascade_timeout_rate_le_static",
                c_to <= a_to,
                format!("timeouts: cascade {c_to}, static {a_to} over {trials} paired trials"),
            ));
        }
        ExperimentId::H4 => {
            stats.hard_asserts.push(HardAssert::check(
                "cascade_rescues_some_chains",
                !rescued.is_empty(),
                format!(
                    "{} chains completed only with the cascade (of {} no-cascade failures)",
                    rescued.len(),
                    b_to
                ),
            ));
            stats.hard_asserts.push(HardAssert::check(
                "cascade_never_breaks_a_completing_chain",
                broken.is_empty(),
                format!("{} chains completed without the cascade but failed with it", broken.len()),
            ));
        }
        _ => unreachable!("h3h4 runner only serves h3 and h4"),
    }

    debug_assert!(stats
        .arms
        .iter()
        .map(|a| a.trials)
        .all(|t| t == trials));
    for outcome in [&arm_a, &arm_b, &arm_c] {
        for rec in &outcome.records {
            rec.validate().map_err(HarnessError::Internal)?;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cascade_dominates_on_paired_seeds() {
        let cfg = AppConfig::default();
        let stats = run(&cfg, ExperimentId::H3, 300).unwrap();
        assert!(stats.passed(), "failed asserts: {:?}", stats.failed_asserts());
        let static_arm = &stats.arms[0];
        let cascade_arm = &stats.arms[2];
        assert!(cascade_arm.count >= static_arm.count);
        assert!(cascade_arm.count > 0, "budget must admit some completions");
    }

    #[test]
    fn h4_reports_rescues_and_never_breaks_completers() {
        let cfg = AppConfig::default();
        let stats = run(&cfg, ExperimentId::H4, 300).unwrap();
        assert!(stats.passed(), "failed asserts: {:?}", stats.failed_asserts());
        let rescued = stats.metrics["rescued_by_cascade"].as_u64().unwrap();
        assert!(rescued >= 1);
        assert_eq!(stats.metrics["broken_by_cascade"].as_u64().unwrap(), 0);
    }

    #[test]
    fn reports_are_rerun_identical() {
        let cfg = AppConfig::default();
        let a = run(&cfg, ExperimentId::H3, 50).unwrap().to_json();
        let b = run(&cfg, ExperimentId::H3, 50).unwrap().to_json();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn seed_changes_the_realizations() {
        let cfg = AppConfig::default();
        let mut other = cfg.clone();
        other.bench.seed = 43;
        let a = run(&cfg, ExperimentId::H3, 50).unwrap();
        let b = run(&other, ExperimentId::H3, 50).unwrap();
        assert_ne!(
            serde_json::to_vec(&a.to_json()).unwrap(),
            serde_json::to_vec(&b.to_json()).unwrap()
        );
    }
}
