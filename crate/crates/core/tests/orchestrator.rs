mod common;

use common::{bits, dist, small_config};
use lrq_core::analysis::{comm_cost, comm_cost_bits, float_comm_cost, BoundInputs};
use lrq_core::config::StopRule;
use lrq_core::orchestrator::{
    aggregate_and_step, run_experiment, AlgorithmKind, Experiment, RunStatus, CSV_HEADER,
};
use lrq_core::privacy::{ClipMode, ScheduleKind};

#[test]
fn zero_rounds_gives_initial_summary() {
    let mut cfg = small_config(AlgorithmKind::GauLrqSgd);
    cfg.rounds = 0;
    let trace = run_experiment(&cfg).unwrap();
    assert!(trace.records.is_empty());
    assert_eq!(trace.summary.status, RunStatus::Completed);
    assert_eq!(trace.summary.total_bits, 0);
    assert_eq!(trace.summary.weighted_error, None);
    assert_eq!(trace.final_theta, trace.theta0);
    assert_eq!(trace.summary.final_loss, trace.summary.initial_loss);
    assert_eq!(trace.to_csv(), format!("{CSV_HEADER}\n"));
}

#[test]
fn runs_are_bitwise_reproducible() {
    for algo in AlgorithmKind::ALL {
        let cfg = small_config(algo);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.records, b.records, "{algo}");
        assert_eq!(bits(&a.final_theta), bits(&b.final_theta));
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary_json(), b.summary_json());
    }
}

#[test]
fn different_seeds_differ() {
    let cfg = small_config(AlgorithmKind::GauLrqSgd);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(run_experiment(&cfg).unwrap().final_theta, run_experiment(&other).unwrap().final_theta);
}

#[test]
fn local_sgd_full_batch_is_gradient_descent() {
    let mut cfg = small_config(AlgorithmKind::LocalSgd);
    cfg.per_round = cfg.clients;
    cfg.local_steps = 1;
    cfg.batch_size = 1000;
    cfg.rounds = 1;
    let exp = Experiment::new(&cfg).unwrap();
    let trace = exp.run().unwrap();
    let g = exp.objective.gradient(&exp.theta0);
    let gd: Vec<f64> = exp.theta0.iter().zip(&g).map(|(t, g)| t - cfg.learning_rate * g).collect();
    // Float payloads carry f32 precision.
    let step = dist(&gd, &exp.theta0);
    assert!(dist(&trace.final_theta, &gd) <= 1e-7 * step.max(1.0));
    assert_eq!(trace.records[0].clients, (0..cfg.clients).collect::<Vec<_>>());
}

#[test]
fn local_sgd_converges_on_noiseless_least_squares() {
    let mut cfg = small_config(AlgorithmKind::LocalSgd);
    cfg.per_round = cfg.clients;
    cfg.batch_size = 1000;
    cfg.local_steps = 1;
    cfg.rounds = 400;
    let exp = Experiment::new(&cfg).unwrap();
    assert!(cfg.learning_rate < 1.0 / exp.spec.smoothness);
    let trace = exp.run().unwrap();
    assert!(trace.summary.final_grad_sq_norm.sqrt() < 1e-6, "{}", trace.summary.final_grad_sq_norm);
}

#[test]
fn gau_lrq_with_negligible_noise_tracks_local_sgd() {
    let mut lrq = small_config(AlgorithmKind::GauLrqSgd);
    lrq.rounds = 10;
    lrq.epsilon = 1e9;
    lrq.clip.s2 = 1e3;
    let mut local = lrq.clone();
    local.algorithm = AlgorithmKind::LocalSgd;
    let a = run_experiment(&lrq).unwrap();
    let b = run_experiment(&local).unwrap();
    let sigma = a.summary.sigma_schedule[0];
    let theta0_norm = a.theta0.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(sigma < 1e-4 * theta0_norm);
    assert!(dist(&a.final_theta, &b.final_theta) < 1e-3);
    assert!(a.summary.clamp_total == 0);
}

#[test]
fn meter_matches_comm_cost_formula() {
    for algo in [AlgorithmKind::GauLrqSgd, AlgorithmKind::DynamicGauLrqSgd] {
        let cfg = small_config(algo);
        let trace = run_experiment(&cfg).unwrap();
        let norms: Vec<Vec<f64>> = trace.records.iter().map(|r| r.inf_norms.clone()).collect();
        let inputs = BoundInputs {
            f_gap: 1.0,
            eta: cfg.learning_rate,
            local_steps: cfg.local_steps,
            rounds: cfg.rounds,
            per_round: cfg.per_round,
            clients: cfg.clients,
            dim: cfg.objective.dim,
            alpha_sq: 0.0,
            smoothness: 1.0,
            s2: cfg.clip.s2,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            tau: cfg.tau,
            inf_norm: 1.0,
        };
        let kind = if algo == AlgorithmKind::GauLrqSgd {
            ScheduleKind::Fixed
        } else {
            ScheduleKind::Dynamic
        };
        assert_eq!(trace.summary.total_bits, comm_cost(&inputs, &norms, kind).unwrap());
        assert_eq!(
            trace.summary.total_bits,
            comm_cost_bits(cfg.objective.dim, &norms, &trace.summary.sigma_schedule).unwrap()
        );
        for r in &trace.records {
            let per: u64 = r.bits_per_element.iter().map(|&b| b as u64 * cfg.objective.dim as u64).sum();
            assert_eq!(r.bits_sent, per);
        }
    }
}

#[test]
fn float_algorithms_cost_32_bits_per_element() {
    for algo in [AlgorithmKind::LocalSgd, AlgorithmKind::GauSgd] {
        let cfg = small_config(algo);
        let trace = run_experiment(&cfg).unwrap();
        assert_eq!(
            trace.summary.total_bits,
            float_comm_cost(cfg.rounds, cfg.per_round, cfg.objective.dim)
        );
    }
    let lrq = run_experiment(&small_config(AlgorithmKind::GauLrqSgd)).unwrap();
    assert!(lrq.summary.total_bits < float_comm_cost(8, 4, 6));
}

#[test]
fn fixed_schedule_spends_exact_budget() {
    for algo in [AlgorithmKind::GauSgd, AlgorithmKind::QgSgd, AlgorithmKind::GauLrqSgd, AlgorithmKind::DynamicGauLrqSgd] {
        let cfg = small_config(algo);
        let trace = run_experiment(&cfg).unwrap();
        let spent = trace.summary.epsilon_spent.unwrap();
        assert!((spent - cfg.epsilon).abs() < 1e-9 * cfg.epsilon, "{algo}: {spent}");
        let eps: Vec<f64> = trace.records.iter().map(|r| r.epsilon_spent_cumulative.unwrap()).collect();
        assert!(eps.windows(2).all(|w| w[0] < w[1]));
    }
    assert_eq!(run_experiment(&small_config(AlgorithmKind::LocalSgd)).unwrap().summary.epsilon_spent, None);
}

#[test]
fn accountant_stop_rule_halts_at_planned_rounds() {
    let mut cfg = small_config(AlgorithmKind::GauLrqSgd);
    cfg.stop_rule = StopRule::Accountant;
    cfg.budget_rounds = Some(5);
    let trace = run_experiment(&cfg).unwrap();
    assert_eq!(trace.records.len(), 5);
    assert_eq!(trace.summary.status, RunStatus::BudgetExhausted { round: 5 });
    assert!(trace.summary.epsilon_spent.unwrap() <= cfg.epsilon * (1.0 + 1e-9));

    cfg.budget_rounds = Some(20);
    let trace = run_experiment(&cfg).unwrap();
    assert_eq!(trace.records.len(), cfg.rounds);
    assert_eq!(trace.summary.status, RunStatus::Completed);
}

#[test]
fn short_schedule_with_fixed_rounds_is_rejected() {
    let mut cfg = small_config(AlgorithmKind::GauLrqSgd);
    cfg.budget_rounds = Some(3);
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("budget_rounds"), "{err}");
}

#[test]
fn divergence_yields_partial_trace() {
    let mut cfg = small_config(AlgorithmKind::LocalSgd);
    cfg.learning_rate = 3.0;
    cfg.divergence_ceiling = 1e4;
    cfg.rounds = 50;
    let trace = run_experiment(&cfg).unwrap();
    match &trace.summary.status {
        RunStatus::Diverged { round, .. } => assert_eq!(*round, trace.records.len()),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(trace.records.len() < 50);
    assert!(trace.records.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn median_adaptive_clipping_scales_sigma() {
    let mut cfg = small_config(AlgorithmKind::GauLrqSgd);
    cfg.clip.mode = ClipMode::MedianAdaptive;
    let trace = run_experiment(&cfg).unwrap();
    let sigma = trace.summary.sigma_schedule[0];
    for r in &trace.records {
        let bound = r.clip_bound.unwrap();
        assert!((r.sigma_used - sigma * bound / cfg.clip.s2).abs() <= 1e-15 * r.sigma_used.max(1.0));
        let l2_over = r.inf_norms.iter().all(|n| *n <= bound * (1.0 + 1e-12));
        assert!(l2_over);
    }
    assert!((trace.summary.epsilon_spent.unwrap() - cfg.epsilon).abs() < 1e-9 * cfg.epsilon);
}

#[test]
fn clamps_are_rare_at_default_settings() {
    let mut total = 0;
    let mut clamps = 0;
    for seed in 0..5 {
        for algo in [AlgorithmKind::GauLrqSgd, AlgorithmKind::DynamicGauLrqSgd] {
            let mut cfg = small_config(algo);
            cfg.seed = seed;
            let t = run_experiment(&cfg).unwrap();
            total += t.summary.elements_total;
            clamps += t.summary.clamp_total;
        }
    }
    assert!((clamps as f64) < 1e-3 * total as f64, "{clamps}/{total}");
}

#[test]
fn csv_schema_and_precision() {
    let trace = run_experiment(&small_config(AlgorithmKind::GauLrqSgd)).unwrap();
    let csv = trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), trace.records.len());
    for (row, rec) in rows.iter().zip(&trace.records) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 8);
        assert_eq!(cols[0].parse::<usize>().unwrap(), rec.round);
        assert_eq!(cols[1], "gau_lrq_sgd");
        assert_eq!(cols[2].parse::<f64>().unwrap().to_bits(), rec.loss.to_bits());
        assert_eq!(cols[4].parse::<u64>().unwrap(), rec.bits_cumulative);
    }
    let local = run_experiment(&small_config(AlgorithmKind::LocalSgd)).unwrap().to_csv();
    assert!(local.lines().nth(1).unwrap().contains(",inf,"));
    let doc: serde_json::Value = serde_json::from_str(&trace.summary_json()).unwrap();
    assert_eq!(doc["summary"]["algorithm"], "gau_lrq_sgd");
    assert_eq!(doc["summary"]["rounds_completed"], 8);
}

#[test]
fn aggregation_examples() {
    let theta = vec![1.0, -2.0, 0.5];
    let one = aggregate_and_step(&[(3, vec![0.25, 0.5, -1.0])], &theta).unwrap();
    assert_eq!(one, vec![1.25, -1.5, -0.5]);
    let cancel = aggregate_and_step(&[(0, vec![0.3, -0.7, 1e-9]), (1, vec![-0.3, 0.7, -1e-9])], &theta).unwrap();
    assert_eq!(cancel, theta);
    let ups = vec![(5, vec![0.1, 0.2, 0.3]), (2, vec![1e16, -3.0, 0.7]), (9, vec![-1e16, 1.1, 0.01])];
    let mut permuted = ups.clone();
    permuted.reverse();
    permuted.swap(0, 1);
    assert_eq!(
        bits(&aggregate_and_step(&ups, &theta).unwrap()),
        bits(&aggregate_and_step(&permuted, &theta).unwrap())
    );
    assert!(aggregate_and_step(&[(0, vec![1.0])], &theta).is_err());
    assert!(aggregate_and_step(&[], &theta).is_err());
}

#[test]
fn logistic_objective_runs() {
    let mut cfg = small_config(AlgorithmKind::DynamicGauLrqSgd);
    cfg.objective.kind = lrq_core::training::ObjectiveKind::Logistic;
    cfg.objective.ridge = 0.01;
    let trace = run_experiment(&cfg).unwrap();
    assert_eq!(trace.summary.status, RunStatus::Completed);
    assert!(trace.summary.final_loss.is_finite());
}
