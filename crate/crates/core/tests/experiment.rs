use nonfifo_sched::workload::{trial_seed, KB};
use nonfifo_sched::{
    detect_non_fifo, generate_workload, run_comparison, EnergyModel, ExperimentConfig, SchedulerKind,
};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        lambda_fifo: vec![2.0, 3.0],
        fifo_bits: 1024.0,
        nonfifo_bits: vec![102.4, 512.0, 1024.0, 2048.0],
        trials: 40,
        ..ExperimentConfig::standard()
    }
}

#[test]
fn workload_shape() {
    let cfg = ExperimentConfig::standard();
    for seed in 0..20 {
        let w = generate_workload(&cfg, 3.0, KB, seed).unwrap();
        let p = w.sequence.packets();
        assert_eq!(detect_non_fifo(&w.sequence).unwrap(), Some(w.non_fifo_index));
        let j = w.non_fifo_index;
        let prev = &p[j - 1];
        let nf = &p[j];
        assert_eq!(nf.size_bits, KB);
        let t_non = (prev.deadline_s - nf.arrival_s) / 2.0;
        assert!((nf.deadline_s - (nf.arrival_s + t_non)).abs() < 1e-5);
        for (i, q) in p.iter().enumerate() {
            assert!(q.arrival_s <= cfg.horizon_s - cfg.guard_s);
            assert!(q.deadline_s <= cfg.horizon_s);
            if i != j {
                assert_eq!(q.size_bits, cfg.fifo_bits);
                let d = (q.arrival_s + cfg.fifo_deadline_s).min(cfg.horizon_s);
                assert_eq!(q.deadline_s, d);
            }
        }
    }
}

#[test]
fn workload_json_is_reproducible() {
    let cfg = ExperimentConfig::standard();
    let seed = trial_seed(cfg.seed, 0, 3);
    let a = serde_json::to_string(&generate_workload(&cfg, 2.0, 1024.0, seed).unwrap()).unwrap();
    let b = serde_json::to_string(&generate_workload(&cfg, 2.0, 1024.0, seed).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_nonfifo_size_rejected() {
    assert!(generate_workload(&ExperimentConfig::standard(), 2.0, 0.0, 1).is_err());
}

#[test]
fn small_run_properties() {
    let cfg = small();
    let t = run_comparison(&cfg).unwrap();
    assert!(t.dominance_violations(1e-9).is_empty());
    assert_eq!(t.cells.len(), 2 * 4 * 4);
    for c in &t.cells {
        assert_eq!(c.trials + c.infeasible_count, cfg.trials);
        assert_eq!(c.infeasible_count, 0);
    }
    // Moderate link load keeps means well conditioned.
    for &b in &cfg.nonfifo_bits {
        for k in SchedulerKind::ALL {
            assert!(t.mean(3.0, b, k).unwrap() > t.mean(2.0, b, k).unwrap());
        }
        assert!(t.savings(2.0, b, true).unwrap() >= 0.0);
    }
    assert_eq!(run_comparison(&cfg).unwrap().to_csv(), t.to_csv());
}

#[test]
fn common_random_numbers_across_sizes() {
    let cfg = small();
    let t = run_comparison(&cfg).unwrap();
    // Same FIFO pattern for every size in a trial: the FIFO-only part of the
    // workload is shared, so packet counts agree.
    for trial in 0..cfg.trials {
        let counts: Vec<usize> = t
            .records
            .iter()
            .filter(|r| r.lambda == 2.0 && r.trial == trial)
            .map(|r| r.packets)
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn config_parses_with_default_model() {
    let text = r#"{"lambda_fifo":[2.0],"horizon_s":40.0,"guard_s":2.0,"fifo_bits":8192.0,
        "nonfifo_bits":[819.2],"nonfifo_rate":0.025,"fifo_deadline_s":4.0,"trials":10,"seed":1}"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.model, EnergyModel::experiment_link());
    cfg.validate().unwrap();
    let bad = text.replace("\"guard_s\":2.0", "\"guard_s\":50.0");
    let cfg: ExperimentConfig = serde_json::from_str(&bad).unwrap();
    assert!(cfg.validate().is_err());
}
