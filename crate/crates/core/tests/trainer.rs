use icac::trainer::{Phase, StepTrace};
use icac::{run_ablation, run_training, EpisodeMetrics, ImaginationMode, TrainConfig, Trainer};

fn small(mode: ImaginationMode) -> TrainConfig {
    TrainConfig {
        episodes: 4,
        episode_len: 12,
        warmup_steps: 10,
        batch_size: 8,
        imagination: mode,
        imagination_warmup: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn episodes(config: &TrainConfig) -> (Vec<EpisodeMetrics>, Vec<StepTrace>, Trainer) {
    let mut trainer = Trainer::new(config.clone()).unwrap();
    trainer.enable_trace();
    let metrics = (0..config.episodes)
        .map(|_| trainer.run_episode().unwrap().untimed())
        .collect();
    let trace = trainer.take_trace();
    (metrics, trace, trainer)
}

#[test]
fn smoke_run_passes_audits() {
    let config = TrainConfig {
        episodes: 3,
        episode_len: 5,
        ..small(ImaginationMode::Adaptive)
    };
    let mut trainer = Trainer::new(config).unwrap();
    for e in 0..3 {
        let m = trainer.run_episode().unwrap();
        assert_eq!(m.episode, e);
        assert!((1..=5).contains(&m.steps));
        if let Some(map) = trainer.map() {
            map.check_invariants().unwrap();
        }
    }
}

#[test]
fn same_seed_same_run() {
    let config = small(ImaginationMode::Adaptive);
    let (a, _, ta) = episodes(&config);
    let (b, _, tb) = episodes(&config);
    assert_eq!(a, b);
    assert_eq!(
        ta.actor_critic().actor().fingerprint(),
        tb.actor_critic().actor().fingerprint()
    );
    assert_eq!(
        ta.representation().encoder().fingerprint(),
        tb.representation().encoder().fingerprint()
    );
    let (c, _, _) = episodes(&TrainConfig { seed: 12, ..config });
    assert_ne!(a, c);
}

#[test]
fn phases_follow_the_loop_order() {
    let (_, trace, _) = episodes(&small(ImaginationMode::Adaptive));
    let rank = |p: &Phase| Phase::ALL.iter().position(|q| q == p).unwrap();
    for step in &trace {
        assert!(
            step.phases.windows(2).all(|w| rank(&w[0]) < rank(&w[1])),
            "{:?}",
            step.phases
        );
        assert_eq!(step.phases[0], Phase::Encode);
    }
    // Once the map exists and updates have started, every stage runs.
    let full = trace.iter().filter(|s| s.phases == Phase::ALL).count();
    assert!(full > 0);
    let last = trace.last().unwrap();
    assert_eq!(last.phases, Phase::ALL);
}

#[test]
fn total_reward_is_the_exact_sum() {
    let (_, trace, _) = episodes(&small(ImaginationMode::None));
    for s in &trace {
        assert_eq!(s.total, s.extrinsic + s.intrinsic);
        assert!((-1.0..=1.0).contains(&s.intrinsic));
        assert!([0.0, 10.0, -10.0].contains(&s.extrinsic));
    }
}

#[test]
fn no_imagination_means_no_imagined_items() {
    let config = small(ImaginationMode::None);
    let mut trainer = Trainer::new(config.clone()).unwrap();
    for _ in 0..config.episodes {
        let m = trainer.run_episode().unwrap();
        assert_eq!(m.imagined, 0);
        assert!(trainer.latent_buffer().iter().all(|t| !t.imagined));
    }
    assert_eq!(trainer.latent_buffer().len(), trainer.pixel_buffer().len());
}

#[test]
fn pixel_buffer_holds_only_real_steps() {
    let config = small(ImaginationMode::Static);
    let mut trainer = Trainer::new(config.clone()).unwrap();
    let mut imagined = 0;
    for _ in 0..config.episodes {
        imagined += trainer.run_episode().unwrap().imagined;
    }
    let real = trainer.total_steps() as usize;
    assert_eq!(trainer.pixel_buffer().len(), real);
    assert_eq!(trainer.latent_buffer().len(), real + imagined);
    assert_eq!(trainer.latent_buffer().iter().filter(|t| t.imagined).count(), imagined);
}

#[test]
fn zero_depth_matches_no_imagination() {
    let none = small(ImaginationMode::None);
    let zero = TrainConfig {
        imagination: ImaginationMode::Adaptive,
        max_depth: 0,
        ..none.clone()
    };
    let (a, _, ta) = episodes(&none);
    let (b, _, tb) = episodes(&zero);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.extrinsic_return, y.extrinsic_return);
        assert_eq!(x.intrinsic_return, y.intrinsic_return);
        assert_eq!(x.critic_loss, y.critic_loss);
        assert_eq!(x.nodes, y.nodes);
        assert_eq!(y.imagined, 0);
    }
    assert_eq!(
        ta.actor_critic().critic().fingerprint(),
        tb.actor_critic().critic().fingerprint()
    );
}

#[test]
fn static_mode_emits_full_depth_each_step() {
    let (_, trace, _) = episodes(&small(ImaginationMode::Static));
    let with_map: Vec<_> = trace.iter().filter(|s| s.phases.contains(&Phase::Imagine)).collect();
    assert!(!with_map.is_empty());
    assert!(with_map.iter().all(|s| s.imagined == 7));
}

#[test]
fn adaptive_depth_is_bounded() {
    let config = TrainConfig {
        imagination_warmup: 0,
        max_depth: 3,
        ..small(ImaginationMode::Adaptive)
    };
    let (metrics, trace, _) = episodes(&config);
    assert!(trace.iter().all(|s| s.imagined <= 3));
    assert!(metrics.iter().all(|m| m.mean_depth <= 3.0));
}

#[test]
fn training_writes_metrics_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        episodes: 2,
        episode_len: 6,
        ..small(ImaginationMode::Adaptive)
    };
    let metrics = run_training(&config, Some(dir.path())).unwrap();
    assert_eq!(metrics.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("metrics_seed11.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("episode,extrinsic_return"));
    let snapshot = std::fs::read_to_string(dir.path().join("itm_snapshot_seed11.txt")).unwrap();
    assert!(snapshot.contains("node"));
}

#[test]
fn ablation_labels_one_curve_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        episodes: 2,
        episode_len: 6,
        imagination_warmup: 0,
        ..small(ImaginationMode::Adaptive)
    };
    let cells = run_ablation(&config, &[1, 2, 7], &[0, 1], Some(dir.path())).unwrap();
    assert_eq!(cells.iter().map(|c| c.depth).collect::<Vec<_>>(), [1, 2, 7]);
    for cell in &cells {
        assert_eq!(cell.runs.len(), 2);
        for (_, metrics) in &cell.runs {
            assert!(metrics.iter().all(|m| m.mean_depth <= cell.depth as f64));
        }
        let curve = dir.path().join(format!("curve_depth{}.csv", cell.depth));
        let text = std::fs::read_to_string(curve).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
