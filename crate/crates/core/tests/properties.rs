mod common;

use std::collections::BTreeMap;

use icac::approximator::{Activation, AdamState, DenseNet};
use icac::cacla::{ActorCritic, ActorCriticConfig};
use icac::grasp_env::{GraspConfig, GraspEnv};
use icac::imagination::{rollout, Gate};
use icac::intrinsic::{train_local, LocalModelPair, NodeStats, Region};
use icac::itm::{squared_distance, ItmMap, NodeId};
use icac::replay::{LatentTransition, PixelTransition};
use icac::representation::{EncoderDecoder, RepresentationConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_stays_well_formed(
        a in point(),
        b in point(),
        stream in prop::collection::vec(point(), 1..200),
        e_max in prop::sample::select(vec![0.0, 0.01, 0.1, 1.0]),
    ) {
        prop_assume!(a != b);
        let mut map: ItmMap<()> = ItmMap::initialize(&a, &b, e_max, || ()).unwrap();
        let mut born: BTreeMap<NodeId, Vec<f64>> = map.nodes().map(|n| (n.id, n.weight.clone())).collect();
        for x in &stream {
            map.adapt(x, || ()).unwrap();
            prop_assert!(map.check_invariants().is_ok());
            for n in map.nodes() {
                prop_assert!(!n.neighbors.contains(&n.id));
                for m in &n.neighbors {
                    prop_assert!(map.node(*m).unwrap().neighbors.contains(&n.id));
                }
                // Weights never move once created.
                let w = born.entry(n.id).or_insert_with(|| n.weight.clone());
                prop_assert_eq!(w, &n.weight);
            }
        }
    }

    #[test]
    fn matching_agrees_with_scan(
        weights in prop::collection::vec(point(), 1..60),
        x in point(),
    ) {
        let mut map: ItmMap<()> = ItmMap::empty(1.0);
        for w in &weights {
            map.insert(w.clone(), ());
        }
        let mut order: Vec<(f64, NodeId)> = map.nodes().map(|n| (squared_distance(&x, &n.weight), n.id)).collect();
        order.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let expected = (order[0].1, order.get(1).map(|p| p.1));
        prop_assert_eq!(map.find_matching(&x).unwrap(), expected);
    }

    #[test]
    fn soft_update_contracts(seed in 0u64..1000, tau in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [(5, Activation::Relu), (1, Activation::Linear)];
        let online = DenseNet::new(3, &shape, &mut rng).unwrap();
        let mut target = DenseNet::new(3, &shape, &mut rng).unwrap();
        let before: Vec<f64> = target.params().copied().collect();
        target.soft_update_from(&online, tau).unwrap();
        for ((new, old), p) in target.params().zip(&before).zip(online.params()) {
            prop_assert!(((new - p).abs() - (1.0 - tau) * (old - p).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_error_never_shortens_rollouts(seed in 0u64..500, high in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
        let (map, ac) = fixture(seed);
        let low = high * frac;
        let start = vec![0.1; 16];
        let run = |s: f64| {
            let gate = |_: NodeId| s;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rollout(&start, 0, &map, &ac, 7, Gate::Fixed(&gate), &mut rng, |_| {}).unwrap()
        };
        prop_assert!(run(low) >= run(high));
    }

    #[test]
    fn rewards_are_sparse_and_final(seed in 0u64..1000, actions in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 50)) {
        let mut env = GraspEnv::new(GraspConfig::default());
        env.reset(&mut ChaCha8Rng::seed_from_u64(seed));
        for (a, b) in actions {
            let r = env.step(&[a, b]).unwrap();
            prop_assert!([0.0, 10.0, -10.0].contains(&r.reward));
            prop_assert!(r.obs.iter().all(|p| (0.0..=1.0).contains(p)));
            if r.reward != 0.0 {
                prop_assert!(r.done);
            }
            if r.done {
                prop_assert!(env.step(&[0.0, 0.0]).is_err());
                break;
            }
        }
    }
}

/// Three-region map with trained-looking models and a default policy.
fn fixture(seed: u64) -> (ItmMap<Region>, ActorCritic) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = || Region {
        models: LocalModelPair::new(16, 2, 32, 1e-3, &mut rng).unwrap(),
        stats: NodeStats::new(40, 20),
    };
    let mut map = ItmMap::initialize(&[0.0; 16], &[0.5; 16], 6.0, &mut make).unwrap();
    let v = map.insert(vec![-0.5; 16], make());
    map.connect(0, v);
    let ac = ActorCritic::new(&ActorCriticConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
    (map, ac)
}

#[test]
fn rollouts_chain_predictions() {
    let (map, ac) = fixture(3);
    let mut seen = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = rollout(&[0.2; 16], 0, &map, &ac, 7, Gate::Static, &mut rng, |t| seen.push(t)).unwrap();
    assert_eq!(n, 7);
    assert_eq!(seen[0].latent, vec![0.2; 16]);
    for (k, pair) in seen.windows(2).enumerate() {
        assert_eq!(pair[1].latent, pair[0].next_latent);
        assert_eq!(pair[1].depth, k + 1);
    }
}

#[test]
fn imagination_leaves_the_map_alone() {
    let (map, ac) = fixture(5);
    let before = map.structure_hash();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let start: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        rollout(&start, 0, &map, &ac, 7, Gate::Static, &mut rng, |_| {}).unwrap();
    }
    assert_eq!(map.structure_hash(), before);
}

#[test]
fn training_one_region_leaves_others_untouched() {
    let (mut map, _) = fixture(7);
    let fingerprints = |map: &ItmMap<Region>| -> Vec<(u64, u64)> {
        map.nodes()
            .map(|n| (n.payload.models.net().fingerprint(), n.payload.stats.recorded()))
            .collect()
    };
    let before = fingerprints(&map);
    let region = &mut map.node_mut(1).unwrap().payload;
    train_local(
        &mut region.models,
        &mut region.stats,
        &[0.3; 16],
        &[0.5, -0.5],
        1.0,
        &[0.4; 16],
        10,
    )
    .unwrap();
    let after = fingerprints(&map);
    assert_ne!(before[1], after[1]);
    assert_eq!(before[0], after[0]);
    assert_eq!(before[2], after[2]);
}

#[test]
fn td_error_is_target_minus_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ac = ActorCritic::new(&ActorCriticConfig::default(), &mut rng).unwrap();
    for terminal in [false, true] {
        let t = LatentTransition {
            latent: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: vec![0.1, -0.2],
            reward: 0.7,
            next_latent: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            terminal,
            imagined: false,
        };
        let td = ac.td_error(&t).unwrap();
        let bootstrap = if terminal {
            0.0
        } else {
            0.99 * ac.target_critic().forward(&t.next_latent).unwrap()[0]
        };
        assert_eq!(td.target, 0.7 + bootstrap);
        assert_eq!(td.delta, td.target - ac.value(&t.latent).unwrap());
    }
}

#[test]
fn exploration_noise_has_configured_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ac = ActorCritic::new(&ActorCriticConfig::default(), &mut rng).unwrap();
    let latent = vec![0.3; 16];
    let mean = ac.policy_mean(&latent).unwrap();
    let n = 20_000;
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let a = ac.explore(&latent, &mut rng).unwrap();
        for d in 0..2 {
            sq[d] += (a[d] - mean[d]).powi(2);
        }
    }
    for s in sq {
        let std = (s / n as f64).sqrt();
        assert!((std - 0.35).abs() < 0.02, "std {std}");
    }
}

#[test]
fn object_positions_are_uniform() {
    // One-sample Kolmogorov-Smirnov test; 1.628 / sqrt(n) is the
    // asymptotic critical value at the 1% level.
    let mut env = GraspEnv::new(GraspConfig::default());
    let r = env.config().object_range;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let mut xs: Vec<f64> = (0..n)
        .map(|_| {
            env.reset(&mut rng);
            env.state().object_angle
        })
        .collect();
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let cdf = (x + r) / (2.0 * r);
            (cdf - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn adam_reduces_loss_on_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = DenseNet::new(4, &[(8, Activation::Tanh), (2, Activation::Linear)], &mut rng).unwrap();
    let mut adam = AdamState::new(&net, 1e-3);
    let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = [0.5, -0.3];
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        let (loss, grads) = net.mse_and_grad(&x, &y).unwrap();
        assert!(loss < last);
        last = loss;
        net.adam_update(&grads, &mut adam).unwrap();
    }
}

#[test]
fn reconstruction_alone_halves_its_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ed = EncoderDecoder::new(&RepresentationConfig::default(), &mut rng).unwrap();
    ed.lambda_critic = 0.0;
    let ac = ActorCritic::new(&ActorCriticConfig::default(), &mut rng).unwrap();
    let mut env = GraspEnv::new(GraspConfig::default());
    let data: Vec<PixelTransition> = (0..32)
        .map(|_| {
            let obs = env.reset(&mut rng);
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let next = env.step(&a).unwrap();
            PixelTransition {
                obs,
                action: a.to_vec(),
                reward: next.reward,
                next_obs: next.obs,
                terminal: false,
            }
        })
        .collect();
    let batch: Vec<&PixelTransition> = data.iter().collect();
    let weights = [1.0; 32];
    let first = ed
        .combined_loss_step(ac.critic(), ac.target_critic(), &batch, &weights, 0.99)
        .unwrap();
    let mut last = first.clone();
    for _ in 1..500 {
        last = ed
            .combined_loss_step(ac.critic(), ac.target_critic(), &batch, &weights, 0.99)
            .unwrap();
    }
    assert!(
        last.reconstruction <= 0.5 * first.reconstruction,
        "{} -> {}",
        first.reconstruction,
        last.reconstruction
    );
}

#[test]
fn same_seed_same_network() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        DenseNet::new(6, &[(5, Activation::Relu), (3, Activation::Tanh)], &mut rng).unwrap()
    };
    let (a, b) = (build(), build());
    assert_eq!(a, b);
    let x = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
}
