//! A small sparse-reward grasping task rendered as 16×16 grayscale frames.
//!
//! The agent controls a single arm joint swinging around a base at the
//! bottom of the frame, plus a hand that opens and closes. An object sits on
//! the arc swept by the hand. Closing the hand while aligned with the object
//! grasps it (+10); closing it slightly off-target knocks it over (−10).
//! Both end the episode, as does running out of steps.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};

pub const OBS_SIDE: usize = 16;
pub const OBS_LEN: usize = OBS_SIDE * OBS_SIDE;
pub const ACTION_DIM: usize = 2;

pub const SUCCESS_REWARD: f64 = 10.0;
pub const TOPPLE_REWARD: f64 = -10.0;

const BASE: (f64, f64) = (7.5, 14.5);
const ARM_LENGTH: f64 = 7.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GraspConfig {
    /// Largest joint increment per step, in radians (20°).
    pub max_arm_step: f64,
    /// Change in hand closure per step at full action.
    pub close_rate: f64,
    /// Closure level whose upward crossing counts as closing the hand.
    pub closed_level: f64,
    pub grasp_tolerance: f64,
    pub topple_tolerance: f64,
    /// Objects are placed uniformly in `[-object_range, object_range]`.
    pub object_range: f64,
    pub episode_len: usize,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            max_arm_step: 20f64.to_radians(),
            close_rate: 0.25,
            closed_level: 0.8,
            grasp_tolerance: 0.12,
            topple_tolerance: 0.30,
            object_range: 1.2,
            episode_len: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub arm_angle: f64,
    pub hand_closure: f64,
    pub object_angle: f64,
    pub step_count: usize,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Running,
    Success,
    Toppled,
    Timeout,
}

impl Outcome {
    /// Success and topple are true terminal states; a timeout only truncates.
    pub fn is_terminal(self) -> bool {
        matches!(self, Outcome::Success | Outcome::Toppled)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
pub struct GraspEnv {
    config: GraspConfig,
    state: EnvState,
}

impl GraspEnv {
    pub fn new(config: GraspConfig) -> Self {
        Self {
            config,
            state: EnvState {
                arm_angle: 0.0,
                hand_closure: 0.0,
                object_angle: 0.0,
                step_count: 0,
                done: true,
            },
        }
    }

    pub fn config(&self) -> &GraspConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let r = self.config.object_range;
        self.state = EnvState {
            arm_angle: 0.0,
            hand_closure: 0.0,
            object_angle: rng.gen_range(-r..=r),
            step_count: 0,
            done: false,
        };
        render(&self.state)
    }

    /// Applies `action ∈ [−1, 1]²`: joint increment, then hand closure
    /// change. Out-of-box components are clipped.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.state.done {
            return Err(Error::EpisodeDone);
        }
        if action.len() != ACTION_DIM {
            return Err(Error::dims("environment action", ACTION_DIM, action.len()));
        }
        let cfg = &self.config;
        let s = &mut self.state;
        s.step_count += 1;
        let turn = action[0].clamp(-1.0, 1.0) * cfg.max_arm_step;
        s.arm_angle = (s.arm_angle + turn).clamp(-FRAC_PI_2, FRAC_PI_2);
        let before = s.hand_closure;
        s.hand_closure = (before + action[1].clamp(-1.0, 1.0) * cfg.close_rate).clamp(0.0, 1.0);

        let mut outcome = Outcome::Running;
        if before < cfg.closed_level && s.hand_closure >= cfg.closed_level {
            let miss = (s.arm_angle - s.object_angle).abs();
            if miss < cfg.grasp_tolerance {
                outcome = Outcome::Success;
            } else if miss < cfg.topple_tolerance {
                outcome = Outcome::Toppled;
            }
        }
        if outcome == Outcome::Running && s.step_count >= cfg.episode_len {
            outcome = Outcome::Timeout;
        }
        let reward = match outcome {
            Outcome::Success => SUCCESS_REWARD,
            Outcome::Toppled => TOPPLE_REWARD,
            _ => 0.0,
        };
        s.done = outcome != Outcome::Running;
        Ok(StepResult {
            obs: render(s),
            reward,
            done: s.done,
            outcome,
        })
    }

    /// Hand-written controller with access to the true state: swing onto the
    /// object with the hand open, then close.
    pub fn scripted_action(&self) -> [f64; 2] {
        let s = &self.state;
        let miss = s.object_angle - s.arm_angle;
        let turn = (miss / self.config.max_arm_step).clamp(-1.0, 1.0);
        if miss.abs() < 0.05 {
            [turn, 1.0]
        } else {
            [turn, -1.0]
        }
    }
}

fn hand_position(angle: f64) -> (f64, f64) {
    (BASE.0 + ARM_LENGTH * angle.sin(), BASE.1 - ARM_LENGTH * angle.cos())
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Row-major frame with values in `[0, 1]`: a dim arm ray, a bright hand
/// blob that shrinks and brightens as it closes, and a soft object blob.
pub fn render(state: &EnvState) -> Vec<f64> {
    let hand = hand_position(state.arm_angle);
    let object = hand_position(state.object_angle);
    let hand_radius = 1.8 - 0.9 * state.hand_closure;
    let hand_level = 0.6 + 0.4 * state.hand_closure;
    let mut frame = Vec::with_capacity(OBS_LEN);
    for row in 0..OBS_SIDE {
        for col in 0..OBS_SIDE {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let arm = 0.45 * (1.0 - segment_distance(p, BASE, hand) / 0.9).max(0.0);
            let dh = ((p.0 - hand.0).powi(2) + (p.1 - hand.1).powi(2)).sqrt();
            let grip = hand_level * (1.0 - dh / hand_radius).max(0.0);
            let d2o = (p.0 - object.0).powi(2) + (p.1 - object.1).powi(2);
            let obj = 0.8 * (-d2o / (2.0 * 0.7 * 0.7)).exp();
            frame.push(arm.max(grip).max(obj).clamp(0.0, 1.0));
        }
    }
    frame
}

/// Binary PGM (P5) dump of one frame.
pub fn write_pgm<W: Write>(mut out: W, frame: &[f64]) -> Result<()> {
    if frame.len() != OBS_LEN {
        return Err(Error::dims("frame", OBS_LEN, frame.len()));
    }
    write!(out, "P5\n{OBS_SIDE} {OBS_SIDE}\n255\n")?;
    let bytes: Vec<u8> = frame
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}
