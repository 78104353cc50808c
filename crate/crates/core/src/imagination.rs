//! Imagined latent rollouts from the local forward models.
//!
//! A rollout starts at a real latent state and keeps stepping the owning
//! region's model under the current policy while a uniform draw falls below
//! `1 − scaled⟨e^prd⟩` of the region it is in, up to a fixed depth. The map is
//! only queried, never adapted, and no model or statistic is updated.

use rand::Rng;

use crate::cacla::ActorCritic;
use crate::error::{Error, Result};
use crate::intrinsic::{NodeStats, Region};
use crate::itm::{ItmMap, NodeId};
use crate::replay::{LatentTransition, PrioritizedBuffer};

/// Regions with fewer recorded real errors than this never start or extend
/// a rollout under the adaptive gate.
pub const DEFAULT_WARMUP: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedTransition {
    pub latent: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_latent: Vec<f64>,
    /// Zero for the first transition of a rollout.
    pub depth: usize,
}

impl From<ImaginedTransition> for LatentTransition {
    fn from(t: ImaginedTransition) -> Self {
        LatentTransition {
            latent: t.latent,
            action: t.action,
            reward: t.reward,
            next_latent: t.next_latent,
            terminal: false,
            imagined: true,
        }
    }
}

/// Decides how accurate a region is for the continuation test.
#[derive(Clone, Copy)]
pub enum Gate<'a> {
    /// Scaled moving-average error of the region, with regions below
    /// `warmup` recorded errors treated as fully inaccurate.
    Adaptive { warmup: u64 },
    /// Always continue until the depth budget is spent.
    Static,
    /// Caller-supplied scaled error per node, in `[0, 1]`.
    Fixed(&'a dyn Fn(NodeId) -> f64),
}

impl std::fmt::Debug for Gate<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gate::Adaptive { warmup } => write!(f, "Adaptive {{ warmup: {warmup} }}"),
            Gate::Static => f.write_str("Static"),
            Gate::Fixed(_) => f.write_str("Fixed(..)"),
        }
    }
}

/// Current `⟨e^prd⟩` over the largest of the last `W` recorded averages;
/// 0 when that maximum is 0.
pub fn scale_error(stats: &NodeStats) -> f64 {
    let max = stats.recent_max_average();
    if max > 0.0 {
        (stats.moving_average() / max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl Gate<'_> {
    fn scaled(&self, map: &ItmMap<Region>, node: NodeId) -> Result<f64> {
        match self {
            Gate::Static => Ok(0.0),
            Gate::Fixed(f) => Ok(f(node)),
            Gate::Adaptive { warmup } => {
                let stats = &map.node(node).ok_or(Error::UnknownNode(node))?.payload.stats;
                if stats.recorded() < *warmup {
                    Ok(1.0)
                } else {
                    Ok(scale_error(stats))
                }
            }
        }
    }

    fn accept<R: Rng + ?Sized>(&self, map: &ItmMap<Region>, node: NodeId, rng: &mut R) -> Result<bool> {
        if let Gate::Static = self {
            return Ok(true);
        }
        let c: f64 = rng.gen();
        Ok(c < 1.0 - self.scaled(map, node)?)
    }
}

/// Runs one rollout from `(start, node)` and hands each transition to `sink`.
/// Returns the number of transitions generated, at most `max_depth`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    start: &[f64],
    node: NodeId,
    map: &ItmMap<Region>,
    policy: &ActorCritic,
    max_depth: usize,
    gate: Gate<'_>,
    rng: &mut R,
    mut sink: impl FnMut(ImaginedTransition),
) -> Result<usize> {
    if map.node(node).is_none() {
        return Err(Error::UnknownNode(node));
    }
    if max_depth == 0 {
        return Ok(0);
    }
    let mut latent = start.to_vec();
    let mut node = node;
    let mut depth = 0;
    while depth < max_depth && gate.accept(map, node, rng)? {
        let action = policy.policy_sample(&latent, rng)?;
        let (next, reward) = map.node(node).unwrap().payload.models.predict(&latent, &action)?;
        node = map.nearest(&next)?;
        sink(ImaginedTransition {
            latent: std::mem::replace(&mut latent, next.clone()),
            action,
            reward,
            next_latent: next,
            depth,
        });
        depth += 1;
    }
    Ok(depth)
}

/// Learning-adaptive rollout into the latent buffer.
#[allow(clippy::too_many_arguments)]
pub fn la_imagination<R: Rng + ?Sized>(
    start: &[f64],
    node: NodeId,
    map: &ItmMap<Region>,
    policy: &ActorCritic,
    max_depth: usize,
    warmup: u64,
    rng: &mut R,
    buffer: &mut PrioritizedBuffer<LatentTransition>,
) -> Result<usize> {
    rollout(
        start,
        node,
        map,
        policy,
        max_depth,
        Gate::Adaptive { warmup },
        rng,
        |t| {
            buffer.store(t.into());
        },
    )
}

/// Fixed-length rollout of exactly `max_depth` transitions into the buffer.
pub fn static_imagination<R: Rng + ?Sized>(
    start: &[f64],
    node: NodeId,
    map: &ItmMap<Region>,
    policy: &ActorCritic,
    max_depth: usize,
    rng: &mut R,
    buffer: &mut PrioritizedBuffer<LatentTransition>,
) -> Result<usize> {
    rollout(start, node, map, policy, max_depth, Gate::Static, rng, |t| {
        buffer.store(t.into());
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cacla::ActorCriticConfig;
    use crate::intrinsic::LocalModelPair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIM: usize = 16;

    fn fixture(seed: u64) -> (ItmMap<Region>, ActorCritic) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = || Region {
            models: LocalModelPair::new(DIM, 2, 32, 1e-3, &mut rng).unwrap(),
            stats: NodeStats::new(40, 20),
        };
        let a = vec![0.0; DIM];
        let mut b = vec![0.0; DIM];
        b[0] = 3.0;
        let map = ItmMap::initialize(&a, &b, 6.0, &mut make).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let ac = ActorCritic::new(&ActorCriticConfig::default(), &mut rng).unwrap();
        (map, ac)
    }

    fn count(
        map: &ItmMap<Region>,
        ac: &ActorCritic,
        depth: usize,
        gate: Gate<'_>,
        seed: u64,
    ) -> Vec<ImaginedTransition> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rollout(&[0.1; DIM], 0, map, ac, depth, gate, &mut rng, |t| out.push(t)).unwrap();
        assert_eq!(n, out.len());
        out
    }

    #[test]
    fn scale_error_examples() {
        let mut stats = NodeStats::new(1, 20);
        assert_eq!(scale_error(&stats), 0.0);
        for e in [0.5, 1.0, 0.25] {
            stats.push(e);
        }
        assert_eq!(scale_error(&stats), 0.25);
        stats.push(2.0);
        assert_eq!(scale_error(&stats), 1.0);
        let mut zeros = NodeStats::new(4, 20);
        (0..10).for_each(|_| zeros.push(0.0));
        assert_eq!(scale_error(&zeros), 0.0);
    }

    #[test]
    fn inaccurate_start_yields_nothing() {
        let (map, ac) = fixture(0);
        assert!(count(&map, &ac, 7, Gate::Fixed(&|_| 1.0), 3).is_empty());
    }

    #[test]
    fn static_runs_full_depth_and_chains() {
        let (map, ac) = fixture(1);
        let out = count(&map, &ac, 7, Gate::Static, 5);
        assert_eq!(out.len(), 7);
        for (k, pair) in out.windows(2).enumerate() {
            assert_eq!(pair[1].latent, pair[0].next_latent);
            assert_eq!(pair[1].depth, k + 1);
        }
        assert!(count(&map, &ac, 0, Gate::Static, 5).is_empty());
    }

    #[test]
    fn fresh_regions_are_gated_by_warmup() {
        let (map, ac) = fixture(2);
        assert!(count(&map, &ac, 7, Gate::Adaptive { warmup: DEFAULT_WARMUP }, 9).is_empty());
        // Without warm-up a fresh region has scaled error 0.
        let out = count(&map, &ac, 7, Gate::Adaptive { warmup: 0 }, 9);
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn map_is_untouched() {
        let (map, ac) = fixture(3);
        let before = map.structure_hash();
        count(&map, &ac, 7, Gate::Static, 1);
        assert_eq!(map.structure_hash(), before);
    }

    #[test]
    fn buffer_receives_flagged_transitions() {
        let (map, ac) = fixture(4);
        let mut buffer = PrioritizedBuffer::new(32, 0.6, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = static_imagination(&[0.0; DIM], 1, &map, &ac, 5, &mut rng, &mut buffer).unwrap();
        assert_eq!((n, buffer.len()), (5, 5));
        assert!(buffer.iter().all(|t| t.imagined && !t.terminal));
    }

    #[test]
    fn unknown_start_node_is_rejected() {
        let (map, ac) = fixture(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = rollout(&[0.0; DIM], 99, &map, &ac, 3, Gate::Static, &mut rng, |_| {});
        assert!(matches!(r, Err(Error::UnknownNode(99))));
    }
}
