use handover_core::harness::{
    run_multi, run_single_grid, single_csv, ExperimentConfig, ExperimentSpec, FailureMode, FaultInjection,
    HandoverDirection, HarnessError, Mode, NeedleId, PolicyKind,
};

fn spec(mode: Mode, trials: usize) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(mode, NeedleId::new(1).unwrap(), HandoverDirection::LeftToRight, trials, 0);
    s.config = ExperimentConfig::zero_noise();
    s
}

#[test]
fn no_seeds_gives_no_rows() {
    let mut s = spec(Mode::Single, 1);
    s.seeds.clear();
    let run = run_single_grid(&s, true).unwrap();
    assert!(run.records.is_empty());
    assert!(run.table.rows.is_empty());
    assert_eq!(String::from_utf8(single_csv(&run)).unwrap().lines().count(), 1);
}

#[test]
fn noise_free_grid_succeeds_everywhere() {
    let run = run_single_grid(&spec(Mode::Single, 1), false).unwrap();
    let row = &run.table.rows[0];
    assert_eq!((row.successes, row.total), (28, 28));
    assert!(run.records.iter().all(|r| r.failure.is_none() && r.sim_time > 0.0));
    for (i, r) in run.records.iter().enumerate() {
        assert_eq!(r.config_index, i);
    }
}

#[test]
fn constant_y_policy_fails_on_y() {
    let mut s = spec(Mode::Single, 1);
    s.fault = FaultInjection::ConstantY;
    let run = run_single_grid(&s, false).unwrap();
    let row = &run.table.rows[0];
    assert_eq!(row.successes, 0);
    assert_eq!(row.y, 28, "{row:?}");
}

#[test]
fn presentation_fault_ends_multi_run_on_schedule() {
    let mut s = spec(Mode::Multi, 1);
    s.fault = FaultInjection::PresentationAt(12);
    let run = run_multi(&s, true).unwrap();
    assert_eq!(run.records[0].handovers, 12);
    assert_eq!(run.records[0].failure, Some(FailureMode::P));
    assert_eq!(run.mean_handovers, 12.0);
}

#[test]
fn presentation_fault_at_zero_fails_single_trials() {
    let mut s = spec(Mode::Single, 1);
    s.fault = FaultInjection::PresentationAt(0);
    let run = run_single_grid(&s, false).unwrap();
    assert_eq!(run.table.rows[0].p, 28);
}

#[test]
fn shared_policy_is_named_but_not_runnable() {
    let mut s = spec(Mode::Single, 1);
    s.policy = PolicyKind::SharedXY;
    assert_eq!(s.policy.name(), "Shared (x,y) Grasp Policy");
    assert!(matches!(run_single_grid(&s, true), Err(HarnessError::Unimplemented(_))));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(Mode::Single, 1);
    s.trials_per_config = 0;
    assert!(matches!(run_single_grid(&s, true), Err(HarnessError::InvalidSpec(_))));
    let mut s = spec(Mode::Multi, 1);
    s.n_max_handoffs = 0;
    assert!(matches!(run_multi(&s, true), Err(HarnessError::InvalidSpec(_))));
    let mut s = spec(Mode::Single, 1);
    s.config.label_flip_rate = 1.5;
    assert!(matches!(run_single_grid(&s, true), Err(HarnessError::Config(_))));
    assert!(NeedleId::new(0).is_err() && NeedleId::new(5).is_err());
}
