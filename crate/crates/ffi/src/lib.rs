//! C ABI over the `icac` library.
//!
//! Objects are opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Fallible calls return an [`IcacStatus`]; after a
//! failure, [`icac_last_error_message`] describes it. Output buffers are
//! caller-allocated with their length passed alongside.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use icac::grasp_env::{GraspEnv, Outcome, ACTION_DIM, OBS_LEN};
use icac::{EpisodeMetrics, Error, TrainConfig, Trainer};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EpisodeDone = 4,
    Config = 5,
    Io = 6,
    Diverged = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcacOutcome {
    Running = 0,
    Success = 1,
    Toppled = 2,
    Timeout = 3,
}

impl From<Outcome> for IcacOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Running => IcacOutcome::Running,
            Outcome::Success => IcacOutcome::Success,
            Outcome::Toppled => IcacOutcome::Toppled,
            Outcome::Timeout => IcacOutcome::Timeout,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcacEpisodeMetrics {
    pub episode: u64,
    pub extrinsic_return: f64,
    pub intrinsic_return: f64,
    pub outcome: IcacOutcome,
    pub steps: u64,
    pub nodes: u64,
    pub imagined: u64,
    pub rollouts: u64,
    pub mean_depth: f64,
    pub wall_clock_ms: f64,
}

impl From<&EpisodeMetrics> for IcacEpisodeMetrics {
    fn from(m: &EpisodeMetrics) -> Self {
        Self {
            episode: m.episode as u64,
            extrinsic_return: m.extrinsic_return,
            intrinsic_return: m.intrinsic_return,
            outcome: m.outcome.into(),
            steps: m.steps as u64,
            nodes: m.nodes as u64,
            imagined: m.imagined as u64,
            rollouts: m.rollouts as u64,
            mean_depth: m.mean_depth,
            wall_clock_ms: m.wall_clock_ms,
        }
    }
}

/// Grasping environment with its own random stream.
pub struct IcacEnv {
    env: GraspEnv,
    rng: ChaCha8Rng,
}

pub struct IcacConfig(TrainConfig);

pub struct IcacTrainer(Trainer);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> IcacStatus {
    match err {
        Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => IcacStatus::DimensionMismatch,
        Error::EpisodeDone => IcacStatus::EpisodeDone,
        Error::Config(_) => IcacStatus::Config,
        Error::Io(_) | Error::Csv(_) | Error::Format(_) => IcacStatus::Io,
        Error::NonFinite { .. } | Error::Diverged { .. } => IcacStatus::Diverged,
        Error::EmptyMap | Error::UnknownNode(_) | Error::EmptyBuffer => IcacStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (IcacStatus, String)>) -> IcacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IcacStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IcacStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (IcacStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (IcacStatus, String) {
    (IcacStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (IcacStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (IcacStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message describing the most recent failure on this thread, or an empty
/// string. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn icac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Length of one observation frame.
#[no_mangle]
pub extern "C" fn icac_obs_len() -> usize {
    OBS_LEN
}

#[no_mangle]
pub extern "C" fn icac_action_dim() -> usize {
    ACTION_DIM
}

#[no_mangle]
pub extern "C" fn icac_env_new(seed: u64) -> *mut IcacEnv {
    Box::into_raw(Box::new(IcacEnv {
        env: GraspEnv::new(Default::default()),
        rng: ChaCha8Rng::seed_from_u64(seed),
    }))
}

/// # Safety
/// `env` must come from [`icac_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn icac_env_free(env: *mut IcacEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts an episode and writes the first frame into `obs_out`.
///
/// # Safety
/// `obs_out` must point to `obs_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn icac_env_reset(env: *mut IcacEnv, obs_out: *mut f64, obs_len: usize) -> IcacStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if obs_out.is_null() {
            return Err(null("obs_out"));
        }
        if obs_len != OBS_LEN {
            return Err(lib_err(Error::DimensionMismatch {
                context: "observation buffer",
                expected: OBS_LEN,
                got: obs_len,
            }));
        }
        let obs = env.env.reset(&mut env.rng);
        std::slice::from_raw_parts_mut(obs_out, obs_len).copy_from_slice(&obs);
        Ok(())
    })
}

/// Applies one action. Any of the output pointers may be null to skip it.
///
/// # Safety
/// `action` must point to `action_len` doubles and `obs_out`, if not null,
/// to `obs_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn icac_env_step(
    env: *mut IcacEnv,
    action: *const f64,
    action_len: usize,
    obs_out: *mut f64,
    obs_len: usize,
    reward_out: *mut f64,
    done_out: *mut bool,
    outcome_out: *mut IcacOutcome,
) -> IcacStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if action.is_null() {
            return Err(null("action"));
        }
        if !obs_out.is_null() && obs_len != OBS_LEN {
            return Err(lib_err(Error::DimensionMismatch {
                context: "observation buffer",
                expected: OBS_LEN,
                got: obs_len,
            }));
        }
        let result = env
            .env
            .step(std::slice::from_raw_parts(action, action_len))
            .map_err(lib_err)?;
        if !obs_out.is_null() {
            std::slice::from_raw_parts_mut(obs_out, obs_len).copy_from_slice(&result.obs);
        }
        if let Some(r) = reward_out.as_mut() {
            *r = result.reward;
        }
        if let Some(d) = done_out.as_mut() {
            *d = result.done;
        }
        if let Some(o) = outcome_out.as_mut() {
            *o = result.outcome.into();
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn icac_config_default() -> *mut IcacConfig {
    Box::into_raw(Box::new(IcacConfig(TrainConfig::default())))
}

/// Reads a key-value config file into a new handle stored in `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icac_config_load(path: *const c_char, out: *mut *mut IcacConfig) -> IcacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let config = TrainConfig::load(&path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(IcacConfig(config)));
        Ok(())
    })
}

/// Sets one field using config-file syntax for the value, e.g. key
/// `"episodes"` with value `"40"`, or key `"imagination"` with value
/// `"static"`. The config is left unchanged if the result is invalid.
///
/// # Safety
/// `key` and `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn icac_config_set(
    config: *mut IcacConfig,
    key: *const c_char,
    value: *const c_char,
) -> IcacStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut table: toml::Table =
            toml::from_str(&config.0.to_toml_string()).map_err(|e| (IcacStatus::Internal, e.to_string()))?;
        if !table.contains_key(key) {
            return Err((IcacStatus::Config, format!("unknown config key {key:?}")));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let text = toml::to_string(&table).map_err(|e| (IcacStatus::Internal, e.to_string()))?;
        config.0 = TrainConfig::from_toml_str(&text).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn icac_config_free(config: *mut IcacConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds a trainer from a copy of `config`.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icac_trainer_new(config: *const IcacConfig, out: *mut *mut IcacTrainer) -> IcacStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let trainer = Trainer::new(config.0.clone()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(IcacTrainer(trainer)));
        Ok(())
    })
}

/// Runs one training episode; `metrics_out` may be null.
///
/// # Safety
/// `trainer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn icac_trainer_run_episode(
    trainer: *mut IcacTrainer,
    metrics_out: *mut IcacEpisodeMetrics,
) -> IcacStatus {
    guard(|| {
        let trainer = trainer.as_mut().ok_or_else(|| null("trainer"))?;
        let metrics = trainer.0.run_episode().map_err(lib_err)?;
        if let Some(out) = metrics_out.as_mut() {
            *out = (&metrics).into();
        }
        Ok(())
    })
}

/// Writes the current topological map in the text snapshot format.
///
/// # Safety
/// `trainer` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn icac_trainer_write_snapshot(trainer: *const IcacTrainer, path: *const c_char) -> IcacStatus {
    guard(|| {
        let trainer = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        trainer.0.write_snapshot(&path).map_err(lib_err)
    })
}

/// # Safety
/// `trainer` must come from [`icac_trainer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn icac_trainer_free(trainer: *mut IcacTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}
