mod common;

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use common::stubs::{flat_corpus, DriftNet};
use hybrid_sod::data::{LabelKind, NetworkKind, Sample};
use hybrid_sod::orchestrator::*;
use hybrid_sod::Error;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn groups(p: &IterationPlan) -> (Vec<usize>, Option<usize>, Vec<usize>, Option<usize>) {
    (p.rnet_train_groups.clone(), p.rnet_predict_group, p.snet_train_groups.clone(), p.snet_predict_group)
}

#[test]
fn ten_groups_follow_the_alternating_recurrence() {
    let s = build_schedule(10, 1000).unwrap();
    let expect = vec![
        (vec![1], Some(2), vec![1, 2], Some(3)),
        (vec![1, 3], Some(4), vec![1, 2, 4], Some(5)),
        (vec![1, 5], Some(6), vec![1, 2, 4, 6], Some(7)),
        (vec![1, 7], Some(8), vec![1, 2, 4, 6, 8], Some(9)),
        (vec![1, 9], Some(10), vec![1, 2, 4, 6, 8, 10], None),
    ];
    assert_eq!(s.plans.iter().map(groups).collect::<Vec<_>>(), expect);
    let split: Vec<(usize, usize)> = s.plans.iter().map(|p| (p.real_count, p.contaminated_count)).collect();
    assert_eq!(split, vec![(500, 500), (600, 400), (700, 300), (800, 200), (900, 100)]);
}

#[test]
fn plan_counts_for_five_and_fifteen_groups() {
    assert_eq!(build_schedule(5, 100).unwrap().len(), 3);
    assert_eq!(build_schedule(15, 100).unwrap().len(), 8);
    let five = build_schedule(5, 100).unwrap();
    assert_eq!(groups(&five.plans[2]), (vec![1, 5], None, vec![1, 2, 4], None));
}

#[test]
fn schedule_rejects_a_single_group() {
    assert!(matches!(build_schedule(1, 10), Err(Error::Config(_))));
    assert!(matches!(build_schedule(0, 10), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn schedule_consumes_every_group_once(g in 2usize..40, n in 1usize..2000) {
        let s = build_schedule(g, n).unwrap();
        prop_assert_eq!(s.len(), g.div_ceil(2));
        let mut consumed = BTreeSet::new();
        let mut last_real = 0;
        for p in &s.plans {
            prop_assert!(p.rnet_train_groups.contains(&1));
            prop_assert!(p.snet_train_groups.contains(&1));
            prop_assert_eq!(p.real_count + p.contaminated_count, n);
            prop_assert!(p.real_count >= last_real);
            last_real = p.real_count;
            for (train, predict) in [(&p.rnet_train_groups, p.rnet_predict_group), (&p.snet_train_groups, p.snet_predict_group)] {
                for t in train.iter().filter(|&&t| t != 1) {
                    prop_assert!(consumed.contains(t), "group {} trained before being labeled", t);
                }
                if let Some(q) = predict {
                    prop_assert!(q >= 2 && q <= g);
                    prop_assert!(consumed.insert(q), "group {} predicted twice", q);
                }
            }
        }
        prop_assert_eq!(consumed.len(), g - 1);
    }
}

fn const_val(n: usize) -> Vec<Sample<f64>> {
    (0..n)
        .map(|i| {
            Sample::new(format!("v{i}"), Array3::zeros((4, 4, 3))).with_label(Array2::zeros((4, 4)), LabelKind::Real)
        })
        .collect()
}

fn gate_with(state: &mut CredibilityState, value: f64, iteration: usize) -> GateDecision {
    let net = DriftNet::new(value, 0.0);
    credibility_gate::<f64>(&net, NetworkKind::Snet, &const_val(3), state, iteration).unwrap()
}

#[test]
fn gate_accepts_strict_improvement_only() {
    let mut st = CredibilityState::new(true);
    assert_eq!(gate_with(&mut st, 0.08, 1).action, GateAction::Accept);
    let d = gate_with(&mut st, 0.05, 2);
    assert_eq!(d.action, GateAction::Accept);
    assert!((st.best_snet.as_ref().unwrap().mae - 0.05).abs() < 1e-12);
    let d = gate_with(&mut st, 0.09, 3);
    assert_eq!(d.action, GateAction::Reject);
    assert_eq!(st.best_snet.as_ref().unwrap().iteration, 2);
    let d = gate_with(&mut st, 0.05, 4);
    assert_eq!(d.action, GateAction::Reject, "ties keep the previous best");
    assert_eq!(st.best_snet.as_ref().unwrap().iteration, 2);
    assert!(st.best_rnet.is_none(), "records are per network");
}

#[test]
fn gate_first_iteration_always_accepts() {
    let mut st = CredibilityState::new(true);
    gate_with(&mut st, 0.01, 1);
    assert_eq!(gate_with(&mut st, 0.5, 1).action, GateAction::Accept);
}

#[test]
fn disabled_gate_bypasses_and_tracks_latest() {
    let mut st = CredibilityState::new(false);
    gate_with(&mut st, 0.1, 1);
    let d = gate_with(&mut st, 0.4, 2);
    assert_eq!(d.action, GateAction::Bypass);
    assert!((st.best_snet.as_ref().unwrap().mae - 0.4).abs() < 1e-12);
}

#[test]
fn gate_needs_validation_data() {
    let mut st = CredibilityState::new(true);
    let net = DriftNet::new(0.1, 0.0);
    let r = credibility_gate::<f64>(&net, NetworkKind::Rnet, &[], &mut st, 1);
    assert!(matches!(r, Err(Error::Config(_))));
}

fn ctx(iteration: usize, epoch: usize) -> EpochContext {
    EpochContext { seed: 3, iteration, network: NetworkKind::Snet, phase: 0, epoch, augment: true }
}

fn labeled(prefix: &str, n: usize, kind: LabelKind) -> Vec<Sample<f64>> {
    (0..n)
        .map(|i| Sample::new(format!("{prefix}{i}"), Array3::zeros((4, 4, 3))).with_label(Array2::zeros((4, 4)), kind))
        .collect()
}

#[test]
fn epoch_consumes_pseudo_batches_before_real_ones() {
    let net = DriftNet::new(0.5, 0.0);
    let seen = net.seen.clone();
    let mut boxed: Box<dyn hybrid_sod::snet::SaliencyNetwork<f64>> = Box::new(net);
    let pseudo = labeled("p", 19, LabelKind::Pseudo);
    let real = labeled("r", 11, LabelKind::Real);
    let policy = OptimizerPolicy { batch_size: 4, ..Default::default() };
    let mut log = EventLog::in_memory();
    let mut step = 0;
    let stats = epoch_loop(boxed.as_mut(), &pseudo, &real, &policy, &ctx(2, 0), &mut step, &mut log).unwrap();
    assert_eq!(stats.batches, 5 + 3);
    assert_eq!(step, 8);
    let pools: Vec<&str> = log.events().iter().map(|e| e.detail.as_deref().unwrap()).collect();
    assert_eq!(pools, [vec!["pseudo"; 5], vec!["real"; 3]].concat());
    let seen = seen.lock().unwrap();
    let kinds: Vec<LabelKind> = seen.iter().flat_map(|b| b.kinds.clone()).collect();
    assert_eq!(kinds.len(), 30);
    assert!(kinds[..19].iter().all(|&k| k == LabelKind::Pseudo));
    assert!(kinds[19..].iter().all(|&k| k == LabelKind::Real));
    let ids: BTreeSet<String> = seen.iter().flat_map(|b| b.ids.clone()).collect();
    assert_eq!(ids.len(), 30, "each sample once per epoch");
}

#[test]
fn epoch_learning_rate_follows_policy() {
    let policy = OptimizerPolicy { batch_size: 1, ..Default::default() };
    let real = labeled("r", 1, LabelKind::Real);
    let run = |iteration, epoch, start: u64| {
        let net = DriftNet::new(0.5, 0.0);
        let seen = net.seen.clone();
        let mut boxed: Box<dyn hybrid_sod::snet::SaliencyNetwork<f64>> = Box::new(net);
        let mut step = start;
        epoch_loop(boxed.as_mut(), &[], &real, &policy, &ctx(iteration, epoch), &mut step, &mut EventLog::in_memory())
            .unwrap();
        let lr = seen.lock().unwrap()[0].lr;
        lr
    };
    assert_eq!(run(1, 0, 249), 0.5e-4);
    assert_eq!(run(2, 0, 249), 1e-4);
    assert!((run(3, 10, 0) - 1e-5).abs() < 1e-18);
    assert!((run(3, 20, 0) - 1e-6).abs() < 1e-18);
}

#[test]
fn empty_epoch_is_misuse() {
    let mut net: Box<dyn hybrid_sod::snet::SaliencyNetwork<f64>> = Box::new(DriftNet::new(0.5, 0.0));
    let r =
        epoch_loop(net.as_mut(), &[], &[], &OptimizerPolicy::default(), &ctx(1, 0), &mut 0, &mut EventLog::in_memory());
    assert!(matches!(r, Err(Error::Misuse(_))));
}

fn stub_pipeline(mode: AblationMode, g: usize, per_group: usize, rdelta: f64, sdelta: f64) -> Pipeline<f64> {
    let config = PipelineConfig {
        seed: 11,
        policy: OptimizerPolicy { epochs: 2, batch_size: 4, ..Default::default() },
        mode,
        ..Default::default()
    };
    Pipeline::new(
        config,
        flat_corpus(g, per_group, 3, 8),
        Box::new(DriftNet::new(0.5, rdelta)),
        Box::new(DriftNet::new(0.5, sdelta)),
        EventLog::in_memory(),
    )
    .unwrap()
}

/// Events other than per-batch and per-epoch records, reduced to
/// (iteration, phase, network, group, action, metric-or-detail).
fn skeleton(events: &[Event]) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.phase != "train" || e.action == "load")
        .map(|e| {
            let tail = match (e.phase.as_str(), e.action.as_str()) {
                ("train", _) => format!("{} {}", e.detail.as_deref().unwrap(), e.metric.unwrap()),
                ("predict", _) => format!("{} from {}", e.metric.unwrap(), e.detail.as_deref().unwrap()),
                _ => String::new(),
            };
            format!(
                "{} {} {} {} {} {}",
                e.iteration,
                e.phase,
                e.network.as_deref().unwrap_or("-"),
                e.group.map_or("-".into(), |g| g.to_string()),
                e.action,
                tail
            )
            .trim_end()
            .to_string()
        })
        .collect()
}

#[test]
fn four_group_run_matches_golden_trace() {
    let mut p = stub_pipeline(AblationMode::Full, 4, 10, -0.01, -0.01);
    p.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    let golden = [
        "0 run - - start",
        "1 train rnet 1 load real 5",
        "1 train rnet 1 load contaminated 5",
        "1 gate rnet - accept",
        "1 predict rnet 2 label 10 from model from iteration 1",
        "1 train snet 1 load real 5",
        "1 train snet 1 load contaminated 5",
        "1 train snet 2 load pseudo 10",
        "1 gate snet - accept",
        "1 predict snet 3 label 10 from model from iteration 1",
        "2 train rnet 1 load real 6",
        "2 train rnet 1 load contaminated 4",
        "2 train rnet 3 load pseudo 10",
        "2 gate rnet - accept",
        "2 predict rnet 4 label 10 from model from iteration 2",
        "2 train snet 1 load real 6",
        "2 train snet 1 load contaminated 4",
        "2 train snet 2 load pseudo 10",
        "2 train snet 4 load pseudo 10",
        "2 gate snet - accept",
        "2 run snet - finish",
    ];
    assert_eq!(skeleton(p.log.events()), golden);
    // 2 epochs per phase, batches of 4, pools batched separately.
    let batches = p.log.events().iter().filter(|e| e.action == "batch").count();
    assert_eq!(batches, 2 * ((2 + 2) + (4 + 2) + (4 + 2) + (6 + 2)));
    let times: Vec<u64> = p.log.events().iter().map(|e| e.time).collect();
    assert_eq!(times, (0..times.len() as u64).collect::<Vec<_>>());
}

#[test]
fn groups_are_consumed_exactly_as_planned() {
    let mut p = stub_pipeline(AblationMode::Full, 6, 4, -0.01, -0.01);
    let schedule = build_schedule(6, 4).unwrap();
    p.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    for plan in &schedule.plans {
        for (net, train, predict) in [
            ("rnet", &plan.rnet_train_groups, plan.rnet_predict_group),
            ("snet", &plan.snet_train_groups, plan.snet_predict_group),
        ] {
            let loaded: BTreeSet<usize> = p
                .log
                .events()
                .iter()
                .filter(|e| e.iteration == plan.index && e.action == "load" && e.network.as_deref() == Some(net))
                .map(|e| e.group.unwrap())
                .collect();
            assert_eq!(loaded, train.iter().copied().collect());
            let predicted: Vec<usize> = p
                .log
                .events()
                .iter()
                .filter(|e| e.iteration == plan.index && e.phase == "predict" && e.network.as_deref() == Some(net))
                .map(|e| e.group.unwrap())
                .collect();
            assert_eq!(predicted, predict.into_iter().collect::<Vec<_>>());
        }
    }
    for (id, l) in &p.state.pseudo {
        assert_eq!(p.corpus.partition.group_of(id), Some(l.group));
    }
    assert_eq!(p.state.pseudo.len(), 5 * 4);
}

#[test]
fn final_iteration_without_groups_only_trains() {
    let mut p = stub_pipeline(AblationMode::Full, 3, 4, -0.01, -0.01);
    p.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    let last: Vec<&Event> = p.log.events().iter().filter(|e| e.iteration == 2).collect();
    assert!(last.iter().all(|e| e.phase != "predict"));
    assert!(last.iter().any(|e| e.action == "batch"));
}

#[test]
fn training_on_unlabeled_group_is_a_state_error() {
    let mut p = stub_pipeline(AblationMode::Full, 3, 4, 0.0, 0.0);
    let program = IterationProgram {
        index: 1,
        steps: vec![Step::Train { network: NetworkKind::Snet, sources: vec![Source::Pseudo(2)] }],
    };
    assert!(matches!(p.run_iteration(&program), Err(Error::PipelineState(_))));
}

#[test]
fn nan_loss_aborts_with_context() {
    let mut p = stub_pipeline(AblationMode::Full, 3, 4, 0.0, 0.0);
    let mut bad = DriftNet::new(0.5, 0.0);
    bad.nan_at = Some(2);
    p.rnet = Box::new(bad);
    match p.run(|_| Ok(ControlFlow::Continue(()))) {
        Err(Error::Abort(msg)) => assert!(msg.contains("rnet") && msg.contains("iteration 1"), "{msg}"),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn rejected_candidates_keep_labels_from_previous_best() {
    // The saliency network gets worse with every step, so only its
    // iteration-1 model is ever trusted.
    let mut p = stub_pipeline(AblationMode::Full, 6, 4, -0.01, 0.02);
    p.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    let decisions: Vec<GateAction> =
        p.state.gate.decisions.iter().filter(|d| d.network == NetworkKind::Snet).map(|d| d.action).collect();
    assert_eq!(decisions, [GateAction::Accept, GateAction::Reject, GateAction::Reject]);
    let best = p.state.gate.best_snet.clone().unwrap();
    assert_eq!(best.iteration, 1);
    let mut reference = DriftNet::new(0.0, 0.0);
    hybrid_sod::snet::SaliencyNetwork::<f64>::load(&mut reference, &best.params).unwrap();
    let s_labels: Vec<&PseudoLabel<f64>> = p.state.pseudo.values().filter(|l| l.network == NetworkKind::Snet).collect();
    assert!(s_labels.iter().any(|l| l.iteration == 2));
    for l in s_labels {
        assert_eq!(l.model_iteration, 1);
        let want = Array2::from_elem(l.map.dim(), reference.value);
        assert_eq!(
            hybrid_sod::data::io::encode_gray_png(&l.map).unwrap(),
            hybrid_sod::data::io::encode_gray_png(&want).unwrap()
        );
    }
    for net in [NetworkKind::Rnet, NetworkKind::Snet] {
        let h = p.state.gate.accepted_history(net);
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
    }
}

#[test]
fn final_snet_is_the_gate_best() {
    let mut p = stub_pipeline(AblationMode::Full, 4, 4, -0.01, 0.02);
    p.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    let exported = p.final_snet().unwrap();
    let best = p.state.gate.best_snet.as_ref().unwrap();
    assert_eq!(exported.save(), best.params);
    assert_ne!(p.snet.save(), best.params);
}

fn run_mode(mode: AblationMode) -> Pipeline<f64> {
    let mut p = stub_pipeline(mode, 6, 4, -0.01, 0.02);
    p.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    p
}

fn loads(p: &Pipeline<f64>, net: &str) -> Vec<(usize, usize, String, f64)> {
    p.log
        .events()
        .iter()
        .filter(|e| e.action == "load" && e.network.as_deref() == Some(net))
        .map(|e| (e.iteration, e.group.unwrap(), e.detail.clone().unwrap(), e.metric.unwrap()))
        .collect()
}

#[test]
fn ablation_modes_change_only_their_part_of_the_trace() {
    let full = run_mode(AblationMode::Full);

    let m1 = run_mode(AblationMode::M1);
    assert!(loads(&m1, "rnet").is_empty());
    let m1_loads = loads(&m1, "snet");
    assert_eq!(m1_loads.last().unwrap(), &(1, 1, "real".to_string(), 4.0));
    assert!(m1_loads[..5].iter().all(|l| l.2 == "coarse"));
    assert_eq!(m1_loads[..5].iter().map(|l| l.1).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);

    let m2 = run_mode(AblationMode::M2);
    assert_eq!(loads(&m2, "snet"), vec![(1, 1, "real".to_string(), 4.0)]);
    assert!(loads(&m2, "rnet").is_empty());
    assert!(m2.state.pseudo.is_empty());

    let m3 = run_mode(AblationMode::M3);
    assert!(loads(&m3, "rnet").is_empty());
    let predicted: Vec<usize> =
        m3.log.events().iter().filter(|e| e.phase == "predict").map(|e| e.group.unwrap()).collect();
    assert_eq!(predicted, vec![2, 3, 4, 5, 6]);
    assert_eq!(loads(&m3, "snet").iter().filter(|l| l.0 == 2).count(), 6);

    let no1 = run_mode(AblationMode::No1);
    assert_eq!(no1.program.len(), 1);
    assert_eq!(loads(&no1, "rnet"), vec![(1, 1, "real".to_string(), 4.0)]);
    assert!(no1.log.events().iter().filter(|e| e.phase == "predict").all(|e| e.network.as_deref() == Some("rnet")));

    let no2 = run_mode(AblationMode::No2);
    assert!(no2.log.events().iter().filter(|e| e.phase == "gate").all(|e| e.action == "bypass"));
    assert_eq!(skeleton_without_gate(&no2), skeleton_without_gate(&full));
    assert!(full.log.events().iter().any(|e| e.action == "reject"));

    let no3 = run_mode(AblationMode::No3);
    let last = no3.program.len();
    let groups: BTreeSet<usize> = loads(&no3, "snet").iter().filter(|l| l.0 == last).map(|l| l.1).collect();
    assert_eq!(groups, (1..=6).collect());
    let full_last: BTreeSet<usize> = loads(&full, "snet").iter().filter(|l| l.0 == last).map(|l| l.1).collect();
    assert_eq!(full_last, [1, 2, 4, 6].into_iter().collect());
    assert_eq!(loads(&no3, "rnet"), loads(&full, "rnet"));

    let no4 = run_mode(AblationMode::No4);
    assert!(loads(&no4, "rnet").iter().chain(&loads(&no4, "snet")).all(|l| l.2 != "contaminated"));
    assert!(loads(&full, "snet").iter().any(|l| l.2 == "contaminated"));
    assert_eq!(no4.program.len(), full.program.len());
}

fn skeleton_without_gate(p: &Pipeline<f64>) -> Vec<String> {
    skeleton(p.log.events()).into_iter().filter(|s| !s.contains(" gate ") && !s.contains(" predict ")).collect()
}

#[test]
fn ablation_mode_parses_from_names() {
    for m in AblationMode::ALL {
        assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
    }
    assert_eq!("No2".parse::<AblationMode>().unwrap(), AblationMode::No2);
    assert!("m9".parse::<AblationMode>().is_err());
}

#[test]
fn identical_seeds_give_identical_logs() {
    let a = run_mode(AblationMode::Full);
    let b = run_mode(AblationMode::Full);
    assert_eq!(a.log.events(), b.log.events());
    let bytes = |p: &Pipeline<f64>| {
        p.state.pseudo.values().map(|l| hybrid_sod::data::io::encode_gray_png(&l.map).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn resume_after_first_iteration_reproduces_the_run() {
    let a = run_mode(AblationMode::Full);
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("events.jsonl");
    let mk = |log: EventLog| -> Pipeline<f64> {
        let config = a.config.clone();
        Pipeline::new(
            config,
            flat_corpus(6, 4, 3, 8),
            Box::new(DriftNet::new(0.5, -0.01)),
            Box::new(DriftNet::new(0.5, 0.02)),
            log,
        )
        .unwrap()
    };
    let mut first = mk(EventLog::create(&log_path).unwrap());
    let snap = dir.path().join("state");
    let finished = first
        .run(|p| {
            save_state(&snap, p)?;
            Ok(ControlFlow::Break(()))
        })
        .unwrap();
    assert!(!finished);
    drop(first);
    let mut second = mk(EventLog::in_memory());
    let keep = load_state(&snap, &mut second).unwrap();
    second.log = EventLog::reopen(&log_path, keep).unwrap();
    second.mark_resume().unwrap();
    second.run(|_| Ok(ControlFlow::Continue(()))).unwrap();
    let resumed: Vec<Event> = read_log(&log_path).unwrap().into_iter().filter(|e| !e.is_resume_marker()).collect();
    assert_eq!(resumed, a.log.events());
    assert_eq!(
        second.state.pseudo.values().map(|l| l.map.clone()).collect::<Vec<_>>(),
        a.state.pseudo.values().map(|l| l.map.clone()).collect::<Vec<_>>()
    );
}
