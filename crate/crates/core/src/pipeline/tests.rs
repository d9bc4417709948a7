use proptest::prelude::*;

use super::*;
use std::fs;

use crate::affordance::{cp_forward, ContactPredictorParams};

fn small(task: TaskId, total: u64) -> TrainConfig {
    let mut c = TrainConfig::new(task);
    c.num_objects = 2;
    c.test_objects = 1;
    c.replicas = 2;
    c.total_timesteps = total;
    c.checkpoint_period = 256;
    c.update_period = 200;
    c.cp_steps = 2;
    c.cloud_points = 64;
    c.policy.obs_points = 8;
    c.policy.encoder_hidden = 8;
    c.policy.hidden = vec![16, 16];
    c.ppo.rollout_len = 16;
    c.eval.episodes_per_object = 2;
    c.eval.seeds = 2;
    c
}

fn brute_rate(log: &[bool], window: usize) -> f64 {
    let tail = &log[log.len().saturating_sub(window)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().filter(|&&s| s).count() as f64 / tail.len() as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tracker_matches_brute_force_window(log in prop::collection::vec((0usize..3, any::<bool>()), 0..200)) {
        let mut t = SuccessTracker::new(3, SUCCESS_WINDOW);
        let mut per: Vec<Vec<bool>> = vec![Vec::new(); 3];
        for &(o, s) in &log {
            t.record(o, s);
            per[o].push(s);
            for i in 0..3 {
                let r = t.rate(i);
                prop_assert!((0.0..=1.0).contains(&r));
                prop_assert!(t.episodes(i) <= SUCCESS_WINDOW);
                prop_assert_eq!(r, brute_rate(&per[i], SUCCESS_WINDOW));
            }
        }
    }

    #[test]
    fn split_metrics_stay_in_percent_range(rates in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let m = SplitMetrics::from_rates(&rates).unwrap();
        prop_assert!((0.0..=100.0).contains(&m.asr));
        prop_assert!((0.0..=100.0).contains(&m.mp));
    }

    #[test]
    fn concentration_bounded_by_log_n(scores in prop::collection::vec(0.0f64..1.0, 1..300)) {
        let h = concentration_stat(&scores).unwrap();
        prop_assert!(h >= -1e-12 && h <= (scores.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn metrics_arithmetic() {
    let m = SplitMetrics::from_rates(&[0.6, 0.4, 0.5]).unwrap();
    assert!((m.asr - 50.0).abs() < 1e-12);
    assert!((m.mp - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(format!("{:.1}", m.mp), "66.7");

    let half = SplitMetrics::from_rates(&[10.0 / 20.0]).unwrap();
    assert_eq!(half.mp, 100.0);
    let fail = SplitMetrics::from_rates(&[0.0; 4]).unwrap();
    assert_eq!((fail.asr, fail.mp), (0.0, 0.0));

    assert!(SplitMetrics::from_rates(&[]).is_err());
    assert!(SplitMetrics::from_rates(&[1.2]).is_err());
}

#[test]
fn concentration_examples() {
    let mut one_hot = vec![0.0; 256];
    one_hot[17] = 1.0;
    assert_eq!(concentration_stat(&one_hot).unwrap(), 0.0);
    let uniform = vec![0.3; 256];
    assert!((concentration_stat(&uniform).unwrap() - 256f64.ln()).abs() < 1e-12);
    assert_eq!(concentration_stat(&[0.0; 256]).unwrap(), 256f64.ln());

    let mixed = [1.0, 2.0, 0.0, 1.0];
    let hand = -(0.25f64 * 0.25f64.ln() + 0.5 * 0.5f64.ln() + 0.25 * 0.25f64.ln());
    assert!((concentration_stat(&mixed).unwrap() - hand).abs() < 1e-12);

    assert!(concentration_stat(&[]).is_err());
    assert!(concentration_stat(&[1.0, -0.1]).is_err());
}

#[test]
fn metrics_rows_round_trip() {
    let rec = MetricsRecord {
        step: 3200,
        updates: 25,
        train_asr: 37.5,
        mean_return: -1.25,
        episodes: 16,
        policy_loss: 0.1 + 0.2,
        value_loss: 1e-9,
        entropy: 2.5,
        clip_fraction: 0.125,
        cp_loss: Some(0.0625),
        concentration: None,
    };
    assert_eq!(MetricsRecord::parse_csv_row(&rec.csv_row()).unwrap(), rec);
    assert_eq!(MetricsRecord::CSV_HEADER.split(',').count(), 11);
    assert!(MetricsRecord::parse_csv_row("1,2,3").is_err());
}

#[test]
fn config_toml_round_trip_and_defaults() {
    let c = TrainConfig::from_toml("task = \"open_door\"").unwrap();
    assert_eq!(c, TrainConfig::new(TaskId::OpenDoor));
    assert_eq!(c.total_timesteps, 160_000);
    assert_eq!(c.checkpoint_period, 3_200);
    assert_eq!(c.update_period, 1_000);

    let mut d = small(TaskId::PickPlace, 999);
    d.flags.use_mpr = false;
    d.env.horizon = Some(50);
    let back = TrainConfig::from_toml(&d.to_toml()).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.hash(), d.hash());
    assert_ne!(back.hash(), c.hash());
    assert_eq!(back.task_spec().horizon, 50);
}

#[test]
fn config_errors_name_the_field() {
    let missing = TrainConfig::from_toml("num_objects = 3").unwrap_err();
    assert!(matches!(missing, Error::Config(_)));
    assert!(missing.to_string().contains("task"), "{missing}");

    let zero = TrainConfig::from_toml("task = \"reach\"\nupdate_period = 0").unwrap_err();
    assert!(zero.to_string().contains("update_period"), "{zero}");

    assert!(TrainConfig::from_toml("task = \"reach\"\nbogus = 1").is_err());
    assert!(TrainConfig::from_toml("task = \"fly\"").is_err());
}

#[test]
fn stream_seeds_are_distinct() {
    let s: Vec<u64> = (1..12).map(|t| stream_seed(5, t)).collect();
    for i in 0..s.len() {
        for j in 0..i {
            assert_ne!(s[i], s[j]);
        }
    }
    assert_ne!(stream_seed(0, 1), stream_seed(1, 1));
}

#[test]
fn staged_phases_split_half_quarter_quarter() {
    let mut c = small(TaskId::OpenDoor, 1000);
    c.flags.end_to_end = false;
    let t = Trainer::new(c).unwrap();
    assert_eq!(t.phase_at(0), Phase::Policy);
    assert_eq!(t.phase_at(499), Phase::Policy);
    assert_eq!(t.phase_at(500), Phase::Predictor);
    assert_eq!(t.phase_at(749), Phase::Predictor);
    assert_eq!(t.phase_at(750), Phase::FineTune);
    assert!(!Phase::Predictor.trains_policy() && Phase::Predictor.trains_predictor());
    assert!(Phase::FineTune.trains_policy() && !Phase::FineTune.trains_predictor());
}

#[test]
fn staged_run_stops_on_stage_boundaries() {
    let mut c = small(TaskId::OpenDoor, 1000);
    c.flags.end_to_end = false;
    let mut t = Trainer::new(c).unwrap();
    let mut seen = Vec::new();
    while !t.finished() {
        t.iterate().unwrap();
        seen.push(t.step);
    }
    let n = t.envs.len() as u64;
    for bound in [500u64, 750, 1000] {
        assert!(seen.contains(&(bound.div_ceil(n) * n)), "{bound} {seen:?}");
    }
    assert_eq!(t.timeline.last().unwrap().step, t.step);
}

#[test]
fn short_run_never_updates_predictor() {
    let mut c = small(TaskId::OpenDoor, 600);
    c.update_period = 1000;
    let init = ContactPredictorParams::new(stream_seed(c.seed, 5));
    let run = train(c, None).unwrap();
    assert_eq!(run.trainer.cp, init);
    assert!(run.timeline().iter().all(|r| r.cp_loss.is_none()));
    for cloud in &run.trainer.clouds {
        let map = cp_forward(&run.trainer.cp, &cloud.cloud).unwrap();
        assert!(map.scores.iter().all(|&s| s == 0.5));
    }
}

#[test]
fn flags_off_matches_plain_path_bitwise() {
    let mut c = small(TaskId::OpenDoor, 1200);
    c.flags = AblationFlags::plain();
    let full = train(c.clone(), None).unwrap();
    let plain = train_plain(&c).unwrap();
    assert_eq!(full.trainer.policy, plain.policy);
    assert_eq!(full.trainer.envs, plain.envs);
    let strip = |r: &MetricsRecord| MetricsRecord {
        cp_loss: None,
        concentration: None,
        ..*r
    };
    let a: Vec<_> = full.timeline().iter().map(strip).collect();
    assert_eq!(a, plain.timeline);
}

#[test]
fn checkpoint_resume_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(TaskId::OpenDoor, 1600);
    let whole = train(c.clone(), None).unwrap().trainer;

    let mut first = Trainer::new(c).unwrap();
    while first.step < 700 {
        first.iterate().unwrap();
    }
    first.save(dir.path()).unwrap();
    let mut resumed = Trainer::load(dir.path()).unwrap();
    resumed.run(None).unwrap();

    assert_eq!(resumed.policy, whole.policy);
    assert_eq!(resumed.cp, whole.cp);
    assert_eq!(resumed.envs, whole.envs);
    assert_eq!(resumed.buffers, whole.buffers);
    assert_eq!(resumed.tracker, whole.tracker);
    assert_eq!(resumed.timeline, whole.timeline);
    assert_eq!(resumed.best, whole.best);
}

#[test]
fn run_dir_checkpoints_and_selection() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(TaskId::Reach, 800);
    let run = train(c.clone(), Some(dir.path())).unwrap();
    let list = list_checkpoints(dir.path()).unwrap();
    assert_eq!(list.len(), run.timeline().len());
    assert!(list.windows(2).all(|w| w[0].step < w[1].step));

    let best = select_checkpoint(dir.path()).unwrap();
    let top = list.iter().map(|c| c.train_asr).fold(f64::MIN, f64::max);
    assert_eq!(best.train_asr, top);
    assert_eq!(best.step, list.iter().filter(|c| c.train_asr == top).last().unwrap().step);

    let ck = Checkpoint::load(&best.dir).unwrap();
    assert_eq!(ck.config, c);

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<MetricsRecord> = csv.lines().skip(1).map(|l| MetricsRecord::parse_csv_row(l).unwrap()).collect();
    assert_eq!(rows, run.timeline());
}

fn fake_checkpoint(root: &std::path::Path, step: u64, asr: f64) {
    let d = root.join("checkpoints").join(format!("step_{step:09}"));
    fs::create_dir_all(&d).unwrap();
    fs::write(
        d.join("manifest.txt"),
        format!("affordloop checkpoint 1\nstep {step}\nupdates 1\ntrain_asr {asr}\nconfig_hash 00000000000000ff\n"),
    )
    .unwrap();
}

#[test]
fn select_checkpoint_examples() {
    let one = tempfile::tempdir().unwrap();
    fake_checkpoint(one.path(), 100, 5.0);
    assert_eq!(select_checkpoint(one.path()).unwrap().step, 100);

    let three = tempfile::tempdir().unwrap();
    for (s, a) in [(100, 10.0), (200, 30.0), (300, 20.0)] {
        fake_checkpoint(three.path(), s, a);
    }
    assert_eq!(select_checkpoint(three.path()).unwrap().step, 200);

    let tie = tempfile::tempdir().unwrap();
    fake_checkpoint(tie.path(), 100, 30.0);
    fake_checkpoint(tie.path(), 200, 30.0);
    assert_eq!(select_checkpoint(tie.path()).unwrap().step, 200);

    let empty = tempfile::tempdir().unwrap();
    fs::create_dir_all(empty.path().join("checkpoints")).unwrap();
    assert!(matches!(select_checkpoint(empty.path()), Err(Error::Empty(_))));
    assert!(select_checkpoint(&empty.path().join("nowhere")).is_err());
}

#[test]
fn malformed_manifest_reports_line() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("manifest.txt"), "affordloop checkpoint 1\nstep 4\nupdates x\n").unwrap();
    let e = CheckpointInfo::read(d.path()).unwrap_err().to_string();
    assert!(e.contains(":3:"), "{e}");
}

#[test]
fn evaluation_is_reproducible() {
    let c = small(TaskId::OpenDoor, 400);
    let run = train(c.clone(), None).unwrap();
    let t = &run.trainer;
    let a = evaluate(&t.policy, &t.cp, &c, 2, 2).unwrap();
    let b = evaluate(&t.policy, &t.cp, &c, 2, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train.per_object.len(), 2);
    assert_eq!(a.test.as_ref().unwrap().per_object.len(), 1);

    let mut no_test = c.clone();
    no_test.test_objects = 0;
    assert!(evaluate(&t.policy, &t.cp, &no_test, 1, 1).unwrap().test.is_none());
    assert!(evaluate(&t.policy, &t.cp, &c, 1, 0).is_err());
}
