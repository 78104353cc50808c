//! The full training loop: perception, regioning, intrinsic reward,
//! imagination, replay and every gradient update, one environment step at
//! a time.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cacla::{self, ActorCritic};
use crate::config::{ImaginationMode, TrainConfig};
use crate::curves;
use crate::error::{Error, Result};
use crate::grasp_env::{GraspEnv, Outcome, ACTION_DIM};
use crate::imagination::{la_imagination, static_imagination};
use crate::intrinsic::{train_local, IntrinsicReward, LocalModelPair, NodeStats, Region};
use crate::itm::{ItmMap, NodeId};
use crate::replay::{LatentTransition, PixelTransition, PrioritizedBuffer};
use crate::representation::EncoderDecoder;

/// One record per episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub extrinsic_return: f64,
    pub intrinsic_return: f64,
    pub outcome: Outcome,
    pub steps: usize,
    pub nodes: usize,
    pub imagined: usize,
    /// Environment steps at which a rollout was attempted.
    pub rollouts: usize,
    pub mean_depth: f64,
    pub critic_loss: f64,
    pub representation_loss: f64,
    pub wall_clock_ms: f64,
}

impl EpisodeMetrics {
    /// Copy with the wall-clock field zeroed, for run-to-run comparison.
    pub fn untimed(&self) -> Self {
        Self {
            wall_clock_ms: 0.0,
            ..self.clone()
        }
    }
}

/// Stages of one environment step, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Encode,
    AdaptMap,
    IdentifyNode,
    SelectAction,
    EnvStep,
    IntrinsicReward,
    TotalReward,
    TrainLocal,
    Store,
    Imagine,
    UpdateRepresentation,
    UpdateActorCritic,
    SoftUpdate,
}

impl Phase {
    pub const ALL: [Phase; 13] = [
        Phase::Encode,
        Phase::AdaptMap,
        Phase::IdentifyNode,
        Phase::SelectAction,
        Phase::EnvStep,
        Phase::IntrinsicReward,
        Phase::TotalReward,
        Phase::TrainLocal,
        Phase::Store,
        Phase::Imagine,
        Phase::UpdateRepresentation,
        Phase::UpdateActorCritic,
        Phase::SoftUpdate,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub episode: usize,
    pub step: usize,
    pub phases: Vec<Phase>,
    pub extrinsic: f64,
    pub intrinsic: f64,
    pub total: f64,
    pub imagined: usize,
}

/// Independent random streams, so that e.g. an empty imagination budget
/// leaves every other stream untouched.
#[derive(Clone, Debug)]
struct Streams {
    regions: ChaCha8Rng,
    env: ChaCha8Rng,
    policy: ChaCha8Rng,
    imagination: ChaCha8Rng,
    replay: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn fresh_region(config: &TrainConfig, rng: &mut ChaCha8Rng) -> Region {
    Region {
        models: LocalModelPair::new(
            config.latent_dim,
            ACTION_DIM,
            config.model_hidden,
            config.lr_models,
            rng,
        )
        .expect("validated model dimensions"),
        stats: NodeStats::new(config.error_window, config.progress_window),
    }
}

#[derive(Default)]
struct Tally {
    imagined: usize,
    rollouts: usize,
    critic_loss: f64,
    critic_updates: usize,
    representation_loss: f64,
    representation_updates: usize,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    env: GraspEnv,
    repr: EncoderDecoder,
    ac: ActorCritic,
    map: Option<ItmMap<Region>>,
    intrinsic: IntrinsicReward,
    pixel: PrioritizedBuffer<PixelTransition>,
    latent: PrioritizedBuffer<LatentTransition>,
    rngs: Streams,
    total_steps: u64,
    episodes_done: usize,
    trace: Option<Vec<StepTrace>>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = stream(config.seed, 0);
        let repr = EncoderDecoder::new(&config.representation(), &mut init)?;
        let ac = ActorCritic::new(&config.actor_critic(), &mut init)?;
        Ok(Self {
            env: GraspEnv::new(config.env()),
            repr,
            ac,
            map: None,
            intrinsic: IntrinsicReward::new(config.intrinsic_scaling),
            pixel: PrioritizedBuffer::new(config.pixel_capacity, config.alpha, config.beta0)?,
            latent: PrioritizedBuffer::new(config.latent_capacity, config.alpha, config.beta0)?,
            rngs: Streams {
                regions: stream(config.seed, 1),
                env: stream(config.seed, 2),
                policy: stream(config.seed, 3),
                imagination: stream(config.seed, 4),
                replay: stream(config.seed, 5),
            },
            total_steps: 0,
            episodes_done: 0,
            trace: None,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn map(&self) -> Option<&ItmMap<Region>> {
        self.map.as_ref()
    }

    pub fn representation(&self) -> &EncoderDecoder {
        &self.repr
    }

    pub fn actor_critic(&self) -> &ActorCritic {
        &self.ac
    }

    pub fn pixel_buffer(&self) -> &PrioritizedBuffer<PixelTransition> {
        &self.pixel
    }

    pub fn latent_buffer(&self) -> &PrioritizedBuffer<LatentTransition> {
        &self.latent
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Starts recording one [`StepTrace`] per environment step.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<StepTrace> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Runs one episode to termination or time limit.
    pub fn run_episode(&mut self) -> Result<EpisodeMetrics> {
        let episode = self.episodes_done;
        let start = Instant::now();
        let mut obs = self.env.reset(&mut self.rngs.env);
        let mut metrics = EpisodeMetrics {
            episode,
            extrinsic_return: 0.0,
            intrinsic_return: 0.0,
            outcome: Outcome::Running,
            steps: 0,
            nodes: 0,
            imagined: 0,
            rollouts: 0,
            mean_depth: 0.0,
            critic_loss: 0.0,
            representation_loss: 0.0,
            wall_clock_ms: 0.0,
        };
        let mut tally = Tally::default();
        loop {
            let step = metrics.steps;
            let (next_obs, r_ext, r_int, outcome) =
                self.step(&obs, episode, step, &mut tally).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        what: "network output",
                        episode,
                        step,
                    },
                    other => other,
                })?;
            metrics.steps += 1;
            metrics.extrinsic_return += r_ext;
            metrics.intrinsic_return += r_int;
            obs = next_obs;
            if outcome != Outcome::Running {
                metrics.outcome = outcome;
                break;
            }
        }
        self.episodes_done += 1;
        metrics.nodes = self.map.as_ref().map_or(0, ItmMap::len);
        metrics.imagined = tally.imagined;
        metrics.rollouts = tally.rollouts;
        if tally.rollouts > 0 {
            metrics.mean_depth = tally.imagined as f64 / tally.rollouts as f64;
        }
        if tally.critic_updates > 0 {
            metrics.critic_loss = tally.critic_loss / tally.critic_updates as f64;
        }
        if tally.representation_updates > 0 {
            metrics.representation_loss = tally.representation_loss / tally.representation_updates as f64;
        }
        metrics.wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(metrics)
    }

    fn step(
        &mut self,
        obs: &[f64],
        episode: usize,
        step: usize,
        tally: &mut Tally,
    ) -> Result<(Vec<f64>, f64, f64, Outcome)> {
        let cfg = &self.config;
        let mut phases = Vec::with_capacity(Phase::ALL.len());

        let phi = self.repr.encode(obs)?;
        phases.push(Phase::Encode);

        if let Some(map) = &mut self.map {
            let rng = &mut self.rngs.regions;
            map.adapt(&phi, || fresh_region(cfg, rng))?;
            phases.push(Phase::AdaptMap);
        }

        let mut owner: Option<NodeId> = self.map.as_ref().map(|m| m.nearest(&phi)).transpose()?;
        if owner.is_some() {
            phases.push(Phase::IdentifyNode);
        }

        let action = self.ac.policy_sample(&phi, &mut self.rngs.policy)?;
        phases.push(Phase::SelectAction);

        let result = self.env.step(&action)?;
        phases.push(Phase::EnvStep);
        let next_phi = self.repr.encode(&result.obs)?;

        // The map needs two distinct stimuli before it exists.
        if self.map.is_none() && phi != next_phi {
            let rng = &mut self.rngs.regions;
            let map = ItmMap::initialize(&phi, &next_phi, cfg.e_max, || fresh_region(cfg, rng))?;
            owner = Some(map.nearest(&phi)?);
            self.map = Some(map);
        }

        let mut r_int = 0.0;
        if let (Some(map), Some(n)) = (&self.map, owner) {
            let lp = map.node(n).unwrap().payload.stats.learning_progress();
            r_int = cfg.intrinsic_weight * self.intrinsic.compute(lp, &next_phi, map)?.scaled;
            phases.push(Phase::IntrinsicReward);
        }
        let total = result.reward + r_int;
        phases.push(Phase::TotalReward);

        if let (Some(map), Some(n)) = (&mut self.map, owner) {
            let region = &mut map.node_mut(n).unwrap().payload;
            let model_reward = if cfg.models_use_total_reward {
                total
            } else {
                result.reward
            };
            train_local(
                &mut region.models,
                &mut region.stats,
                &phi,
                &action,
                model_reward,
                &next_phi,
                cfg.model_steps,
            )?;
            phases.push(Phase::TrainLocal);
        }

        let terminal = result.outcome.is_terminal();
        self.pixel.store(PixelTransition {
            obs: obs.to_vec(),
            action: action.clone(),
            reward: total,
            next_obs: result.obs.clone(),
            terminal,
        });
        self.latent.store(LatentTransition {
            latent: phi.clone(),
            action,
            reward: total,
            next_latent: next_phi,
            terminal,
            imagined: false,
        });
        phases.push(Phase::Store);

        let mut imagined = 0;
        if let (Some(map), Some(n)) = (&self.map, owner) {
            let rng = &mut self.rngs.imagination;
            imagined = match cfg.imagination {
                ImaginationMode::None => 0,
                ImaginationMode::Static => {
                    static_imagination(&phi, n, map, &self.ac, cfg.max_depth, rng, &mut self.latent)?
                }
                ImaginationMode::Adaptive => la_imagination(
                    &phi,
                    n,
                    map,
                    &self.ac,
                    cfg.max_depth,
                    cfg.imagination_warmup,
                    rng,
                    &mut self.latent,
                )?,
            };
            if cfg.imagination != ImaginationMode::None {
                tally.rollouts += 1;
                tally.imagined += imagined;
                phases.push(Phase::Imagine);
            }
        }

        self.total_steps += 1;
        let progress = self.total_steps as f64 / cfg.step_budget() as f64;
        self.pixel.set_progress(progress);
        self.latent.set_progress(progress);

        if self.total_steps >= cfg.warmup_steps {
            for _ in 0..cfg.representation_steps {
                let sample = self.pixel.sample(cfg.batch_size, &mut self.rngs.replay)?;
                let loss = self.repr.combined_loss_step(
                    self.ac.critic(),
                    self.ac.target_critic(),
                    &sample.items,
                    &sample.weights,
                    cfg.gamma,
                )?;
                if !loss.combined.is_finite() {
                    return Err(Error::Diverged {
                        what: "representation loss",
                        episode,
                        step,
                    });
                }
                let handles = sample.handles;
                self.pixel.update_priorities(&handles, &loss.td_abs);
                tally.representation_loss += loss.combined;
                tally.representation_updates += 1;
            }
            phases.push(Phase::UpdateRepresentation);

            for _ in 0..cfg.actor_critic_steps {
                let sample = self.latent.sample(cfg.batch_size, &mut self.rngs.replay)?;
                let report = self.ac.critic_update(&sample.items, &sample.weights)?;
                if !report.loss.is_finite() {
                    return Err(Error::Diverged {
                        what: "critic loss",
                        episode,
                        step,
                    });
                }
                self.ac.actor_update(&sample.items)?;
                let handles = sample.handles;
                self.latent.update_priorities(&handles, &report.td_abs);
                tally.critic_loss += report.loss;
                tally.critic_updates += 1;
            }
            phases.push(Phase::UpdateActorCritic);

            cacla::soft_update(&mut self.ac, &mut self.repr)?;
            phases.push(Phase::SoftUpdate);
        }

        if let Some(trace) = &mut self.trace {
            trace.push(StepTrace {
                episode,
                step,
                phases,
                extrinsic: result.reward,
                intrinsic: r_int,
                total,
                imagined,
            });
        }
        Ok((result.obs, result.reward, r_int, result.outcome))
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        match &self.map {
            Some(map) => map.write_snapshot(out, |r| Some(r.stats.summary())),
            None => ItmMap::<Region>::empty(self.config.e_max).write_snapshot(out, |_| None),
        }
    }

    /// Saves every network as `<prefix>_<name>.params` in `dir`.
    pub fn write_checkpoint(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let nets = [
            ("encoder", self.repr.encoder()),
            ("target_encoder", self.repr.target_encoder()),
            ("decoder", self.repr.decoder()),
            ("actor", self.ac.actor()),
            ("critic", self.ac.critic()),
            ("target_critic", self.ac.target_critic()),
        ];
        for (name, net) in nets {
            let file = File::create(dir.join(format!("{prefix}_{name}.params")))?;
            net.save(BufWriter::new(file))?;
        }
        Ok(())
    }
}

/// Trains for `config.episodes` episodes. With `out`, writes the metrics
/// CSV, the map snapshot and a final checkpoint there; a diverged run
/// leaves a `diverged_*` checkpoint instead.
pub fn run_training(config: &TrainConfig, out: Option<&Path>) -> Result<Vec<EpisodeMetrics>> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut metrics = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        match trainer.run_episode() {
            Ok(m) => {
                if (m.episode + 1) % 50 == 0 {
                    log::info!(
                        "seed {} mode {} episode {} return {:.2} nodes {}",
                        config.seed,
                        config.imagination,
                        m.episode + 1,
                        m.extrinsic_return,
                        m.nodes
                    );
                }
                metrics.push(m);
            }
            Err(e) => {
                if let Some(dir) = out {
                    trainer.write_checkpoint(dir, "diverged")?;
                    trainer.write_snapshot(&dir.join("diverged_itm_snapshot.txt"))?;
                }
                return Err(e);
            }
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        curves::write_metrics_csv(&dir.join(format!("metrics_seed{}.csv", config.seed)), &metrics)?;
        trainer.write_snapshot(&dir.join(format!("itm_snapshot_seed{}.txt", config.seed)))?;
        trainer.write_checkpoint(dir, &format!("seed{}", config.seed))?;
    }
    Ok(metrics)
}

/// Metric streams of one ablation cell, one per seed.
#[derive(Clone, Debug)]
pub struct DepthRuns {
    pub depth: usize,
    pub runs: Vec<(u64, Vec<EpisodeMetrics>)>,
}

/// Adaptive imagination at each depth in `depths`, once per seed. With
/// `out`, each depth gets a `depth<d>/` directory and a `curve_depth<d>.csv`.
pub fn run_ablation(
    config: &TrainConfig,
    depths: &[usize],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<DepthRuns>> {
    let mut cells = Vec::with_capacity(depths.len());
    for &depth in depths {
        let cell_dir = out.map(|d| d.join(format!("depth{depth}")));
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                imagination: ImaginationMode::Adaptive,
                max_depth: depth,
                seed,
                ..config.clone()
            };
            runs.push((seed, run_training(&cfg, cell_dir.as_deref())?));
        }
        if let Some(dir) = out {
            let window = curves::default_window(config.episodes);
            let curve = curves::mean_curve(&curves::returns(&runs), window)?;
            curves::write_curve_csv(&dir.join(format!("curve_depth{depth}.csv")), &curve)?;
        }
        cells.push(DepthRuns { depth, runs });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: ImaginationMode) -> TrainConfig {
        TrainConfig {
            episodes: 3,
            episode_len: 5,
            warmup_steps: 4,
            batch_size: 4,
            imagination: mode,
            imagination_warmup: 0,
            max_depth: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn smoke_run_emits_one_record_per_episode() {
        let mut trainer = Trainer::new(tiny(ImaginationMode::Adaptive)).unwrap();
        for e in 0..3 {
            let m = trainer.run_episode().unwrap();
            assert_eq!(m.episode, e);
            assert!(m.steps >= 1 && m.steps <= 5);
            assert!(m.mean_depth <= 3.0);
            trainer.map().unwrap().check_invariants().unwrap();
        }
        assert_eq!(trainer.episodes_done(), 3);
    }

    #[test]
    fn static_mode_fills_depth_every_step() {
        let mut trainer = Trainer::new(tiny(ImaginationMode::Static)).unwrap();
        trainer.enable_trace();
        trainer.run_episode().unwrap();
        let trace = trainer.take_trace();
        assert!(trace.iter().all(|t| t.imagined == 3));
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = TrainConfig {
            gamma: 2.0,
            ..TrainConfig::default()
        };
        assert!(matches!(Trainer::new(cfg), Err(Error::Config(_))));
    }
}
