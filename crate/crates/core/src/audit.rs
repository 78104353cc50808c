//! Self-checks run by `icac audit`: gradient checks for every network,
//! brute-force map and replay audits, and imagination invariants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::{DenseNet, GradientSet};
use crate::cacla::{ActorCritic, ActorCriticConfig};
use crate::error::Result;
use crate::imagination::{rollout, Gate};
use crate::intrinsic::{LocalModelPair, NodeStats, Region};
use crate::itm::{squared_distance, ItmMap};
use crate::replay::{LatentTransition, PixelTransition, PrioritizedBuffer};
use crate::representation::{EncoderDecoder, RepresentationConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AuditResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, failure: Option<String>, ok: String) -> AuditResult {
    AuditResult {
        name,
        passed: failure.is_none(),
        detail: failure.unwrap_or(ok),
    }
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter of `net`.
pub fn finite_difference_error(
    net: &DenseNet,
    analytic: &GradientSet,
    mut loss: impl FnMut(&DenseNet) -> Result<f64>,
    h: f64,
) -> Result<f64> {
    let mut probe = net.clone();
    let values: Vec<f64> = analytic.values().copied().collect();
    let mut worst: f64 = 0.0;
    for (i, &g) in values.iter().enumerate() {
        let original = *probe.params_mut().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = original + h;
        let plus = loss(&probe)?;
        *probe.params_mut().nth(i).unwrap() = original - h;
        let minus = loss(&probe)?;
        *probe.params_mut().nth(i).unwrap() = original;
        let numeric = (plus - minus) / (2.0 * h);
        let scale = g.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((g - numeric).abs() / scale);
    }
    Ok(worst)
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn latent_batch<R: Rng>(rng: &mut R, dim: usize, n: usize) -> Vec<LatentTransition> {
    (0..n)
        .map(|_| LatentTransition {
            latent: random_vec(rng, dim),
            action: random_vec(rng, 2),
            reward: rng.gen_range(-1.0..1.0),
            next_latent: random_vec(rng, dim),
            terminal: rng.gen_bool(0.2),
            imagined: false,
        })
        .collect()
}

/// Moves every parameter off zero so no ReLU sits exactly on its kink,
/// where central differences are one-sided.
fn jitter<R: Rng>(net: &mut DenseNet, rng: &mut R) {
    net.params_mut().for_each(|p| *p += rng.gen_range(-0.1..0.1));
}

/// Worst relative finite-difference error of every network's analytic
/// gradient over `cases` random draws.
pub fn gradient_errors(seed: u64, cases: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (mut local, mut critic, mut actor, mut encoder, mut decoder) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let pair = LocalModelPair::new(3, 2, 5, 1e-3, &mut rng)?;
        let (x, a, y) = (
            random_vec(&mut rng, 3),
            random_vec(&mut rng, 2),
            random_vec(&mut rng, 3),
        );
        let r = rng.gen_range(-1.0..1.0);
        let (_, grads) = pair.loss_and_grads(&x, &a, r, &y)?;
        let input: Vec<f64> = x.iter().chain(&a).copied().collect();
        let target: Vec<f64> = y.iter().copied().chain([r]).collect();
        local = local.max(finite_difference_error(
            pair.net(),
            &grads,
            |n| Ok(n.mse_and_grad(&input, &target)?.0),
            h,
        )?);

        let cfg = ActorCriticConfig {
            latent_dim: 3,
            hidden: 4,
            gamma: 0.9,
            ..ActorCriticConfig::default()
        };
        let mut ac = ActorCritic::new(&cfg, &mut rng)?;
        jitter(ac.critic_mut(), &mut rng);
        jitter(ac.actor_mut(), &mut rng);
        jitter(ac.target_critic_mut(), &mut rng);
        let data = latent_batch(&mut rng, 3, 4);
        let batch: Vec<&LatentTransition> = data.iter().collect();
        let weights = random_vec(&mut rng, 4)
            .iter()
            .map(|w| 0.5 + 0.5 * w.abs())
            .collect::<Vec<_>>();
        let (_, grads) = ac.critic_loss_and_grads(&batch, &weights)?;
        let mut probe = ac.clone();
        critic = critic.max(finite_difference_error(
            ac.critic(),
            &grads,
            |n| {
                *probe.critic_mut() = n.clone();
                Ok(probe.critic_loss_and_grads(&batch, &weights)?.0.loss)
            },
            h,
        )?);
        // Push the critic down so that every sample qualifies, keeping the
        // gated subset fixed under the probe perturbations.
        let mut low = ac.clone();
        low.critic_mut().layers_mut().last_mut().unwrap().bias[0] -= 100.0;
        if let Some((_, grads)) = low.actor_loss_and_grads(&batch)? {
            let mut probe = low.clone();
            actor = actor.max(finite_difference_error(
                low.actor(),
                &grads,
                |n| {
                    *probe.actor_mut() = n.clone();
                    Ok(probe.actor_loss_and_grads(&batch)?.map_or(0.0, |(r, _)| r.loss))
                },
                h,
            )?);
        }

        let rep_cfg = RepresentationConfig {
            obs_len: 6,
            hidden: 5,
            latent_dim: 3,
            ..RepresentationConfig::default()
        };
        let mut ed = EncoderDecoder::new(&rep_cfg, &mut rng)?;
        jitter(ed.encoder_mut(), &mut rng);
        jitter(ed.decoder_mut(), &mut rng);
        let pixels: Vec<PixelTransition> = (0..3)
            .map(|_| PixelTransition {
                obs: (0..6).map(|_| rng.gen_range(0.0..1.0)).collect(),
                action: random_vec(&mut rng, 2),
                reward: rng.gen_range(-1.0..1.0),
                next_obs: (0..6).map(|_| rng.gen_range(0.0..1.0)).collect(),
                terminal: rng.gen_bool(0.2),
            })
            .collect();
        let batch: Vec<&PixelTransition> = pixels.iter().collect();
        let weights = vec![1.0, 0.7, 0.4];
        let (c, t) = (ac.critic(), ac.target_critic());
        let (_, enc_grads, dec_grads) = ed.combined_loss_and_grads(c, t, &batch, &weights, 0.9)?;
        let mut probe = ed.clone();
        encoder = encoder.max(finite_difference_error(
            ed.encoder(),
            &enc_grads,
            |n| {
                *probe.encoder_mut() = n.clone();
                Ok(probe.combined_loss_and_grads(c, t, &batch, &weights, 0.9)?.0.combined)
            },
            h,
        )?);
        let mut probe = ed.clone();
        decoder = decoder.max(finite_difference_error(
            ed.decoder(),
            &dec_grads,
            |n| {
                *probe.decoder_mut() = n.clone();
                Ok(probe.combined_loss_and_grads(c, t, &batch, &weights, 0.9)?.0.combined)
            },
            h,
        )?);
    }
    Ok(vec![
        ("local models", local),
        ("critic", critic),
        ("actor", actor),
        ("encoder", encoder),
        ("decoder", decoder),
    ])
}

fn gradient_audit(seed: u64, cases: usize) -> Result<AuditResult> {
    let tol = 1e-4;
    let errors = gradient_errors(seed, cases)?;
    let detail = errors
        .iter()
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let failure = errors
        .iter()
        .any(|(_, e)| *e > tol)
        .then(|| format!("tolerance {tol:e} exceeded: {detail}"));
    Ok(result("gradients", failure, format!("{cases} cases each: {detail}")))
}

fn itm_audit(seed: u64, stimuli: usize) -> Result<AuditResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map: ItmMap<()> = ItmMap::initialize(&[0.0, 0.0], &[1.0, 0.0], 0.05, || ())?;
    for i in 0..stimuli {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let (n, _) = map.find_matching(&x)?;
        let brute = map
            .nodes()
            .min_by(|a, b| {
                squared_distance(&x, &a.weight)
                    .total_cmp(&squared_distance(&x, &b.weight))
                    .then(a.id.cmp(&b.id))
            })
            .unwrap()
            .id;
        if n != brute {
            return Ok(result(
                "map audit",
                Some(format!("stimulus {i}: matched {n}, scan found {brute}")),
                String::new(),
            ));
        }
        map.adapt(&x, || ())?;
        if let Err(e) = map.check_invariants() {
            return Ok(result("map audit", Some(format!("stimulus {i}: {e}")), String::new()));
        }
    }
    Ok(result(
        "map audit",
        None,
        format!("{stimuli} stimuli, {} nodes, {} edges", map.len(), map.edge_count()),
    ))
}

fn replay_audit(seed: u64, ops: usize) -> Result<AuditResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = PrioritizedBuffer::new(257, 0.6, 0.4)?;
    let mut worst: f64 = 0.0;
    for i in 0..ops {
        if buffer.is_empty() || rng.gen_bool(0.5) {
            buffer.store(i);
        } else {
            let sample = buffer.sample(8, &mut rng)?;
            let handles = sample.handles;
            let td: Vec<f64> = (0..handles.len()).map(|_| rng.gen_range(0.0..5.0)).collect();
            buffer.update_priorities(&handles, &td);
        }
        let brute: f64 = (0..buffer.len()).map(|s| buffer.leaf_mass(s)).sum();
        worst = worst.max((buffer.total_mass() - brute).abs() / brute.max(1.0));
        worst = worst.max(buffer.tree().consistency_error());
    }
    let failure = (worst > 1e-9).then(|| format!("sum tree drift {worst:.3e}"));
    Ok(result(
        "replay audit",
        failure,
        format!("{ops} operations, drift {worst:.3e}"),
    ))
}

fn imagination_audit(seed: u64, rollouts: usize) -> Result<AuditResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let mut regions = || Region {
        models: LocalModelPair::new(dim, 2, 8, 1e-3, &mut rng).unwrap(),
        stats: NodeStats::new(40, 20),
    };
    let mut map = ItmMap::initialize(&[0.0; 4], &[1.0, 1.0, 0.0, 0.0], 0.5, &mut regions)?;
    map.adapt(&[-1.0, 0.5, 0.2, 0.0], &mut regions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ac = ActorCritic::new(
        &ActorCriticConfig {
            latent_dim: dim,
            ..ActorCriticConfig::default()
        },
        &mut rng,
    )?;
    let before = map.structure_hash();
    let half = |_| 0.5;
    for _ in 0..rollouts {
        let start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let node = map.nearest(&start)?;
        let mut count = 0;
        let n = rollout(&start, node, &map, &ac, 7, Gate::Fixed(&half), &mut rng, |_| count += 1)?;
        if n > 7 || n != count {
            return Ok(result(
                "imagination audit",
                Some(format!("rollout of {n} exceeds depth 7")),
                String::new(),
            ));
        }
    }
    let failure = (map.structure_hash() != before).then(|| "map changed during imagination".to_string());
    Ok(result(
        "imagination audit",
        failure,
        format!("{rollouts} rollouts, map unchanged"),
    ))
}

/// Runs every audit with a fixed seed.
pub fn run_all(seed: u64) -> Result<Vec<AuditResult>> {
    Ok(vec![
        gradient_audit(seed, 100)?,
        itm_audit(seed, 10_000)?,
        replay_audit(seed, 10_000)?,
        imagination_audit(seed, 1_000)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audits_pass() {
        for r in run_all(3).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
