//! C ABI for the commons environment and the social metrics.
//!
//! Every function returns an [`SmStatus`]; on failure the message is kept
//! per thread and can be read with [`sm_last_error`]. Environments are opaque
//! handles created by [`sm_env_create`] and released by [`sm_env_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use socialmi::env::{respawn_probability, Action, GridState, MapSpec, OBS_LEN};
use socialmi::metrics;
use socialmi::Error;

/// Length of one one-hot observation.
pub const SM_OBS_LEN: usize = 567;
pub const SM_NUM_ACTIONS: usize = 8;

const _: () = assert!(SM_OBS_LEN == OBS_LEN && SM_NUM_ACTIONS == socialmi::env::NUM_ACTIONS);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidMap = 3,
    UnknownAgent = 4,
    BufferTooSmall = 5,
    Panic = 6,
    Internal = 7,
}

/// Opaque environment handle.
pub struct SmEnv {
    state: GridState,
    map: MapSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: SmStatus, message: impl Into<String>) -> SmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn from_error(err: Error) -> SmStatus {
    let status = match &err {
        Error::Map(_) => SmStatus::InvalidMap,
        Error::UnknownAgent(_) => SmStatus::UnknownAgent,
        Error::InvalidArgument(_) | Error::Config(_) => SmStatus::InvalidArgument,
        _ => SmStatus::Internal,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> SmStatus) -> SmStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(SmStatus::Panic, "panic inside the library"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(SmStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

macro_rules! try_sm {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return from_error(err),
        }
    };
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an environment with `agents` agents. `map_text` is an ASCII map
/// (`@` wall, `.` empty, `a` apple site, `P` spawn point); null selects the
/// bundled 25 x 9 map.
///
/// # Safety
/// `map_text` must be null or a NUL-terminated string; `out` must be valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_env_create(
    map_text: *const c_char,
    agents: usize,
    seed: u64,
    out: *mut *mut SmEnv,
) -> SmStatus {
    guard(|| {
        non_null!(out);
        let map = if map_text.is_null() {
            MapSpec::default_map()
        } else {
            let text = match CStr::from_ptr(map_text).to_str() {
                Ok(t) => t,
                Err(_) => return fail(SmStatus::InvalidMap, "map text is not UTF-8"),
            };
            try_sm!(text.parse::<MapSpec>())
        };
        let state = try_sm!(GridState::reset(map.clone(), agents, seed));
        *out = Box::into_raw(Box::new(SmEnv { state, map }));
        SmStatus::Ok
    })
}

/// # Safety
/// `env` must be null or a handle from [`sm_env_create`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_env_free(env: *mut SmEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts over on the same map with a new seed.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_env_reset(env: *mut SmEnv, seed: u64) -> SmStatus {
    guard(|| {
        non_null!(env);
        let env = &mut *env;
        env.state = try_sm!(GridState::reset(env.map.clone(), env.state.num_agents(), seed));
        SmStatus::Ok
    })
}

/// Advances one step. `actions` holds one action index (0..8) per agent;
/// `rewards` receives one reward per agent and may be null. `terminated`
/// may be null and is set when the last apple was collected and a fresh
/// episode began.
///
/// # Safety
/// `actions` must point to `n` bytes, `rewards` to `n` doubles if non-null.
#[no_mangle]
pub unsafe extern "C" fn sm_env_step(
    env: *mut SmEnv,
    actions: *const u8,
    n: usize,
    rewards: *mut f64,
    terminated: *mut bool,
) -> SmStatus {
    guard(|| {
        non_null!(env, actions);
        let env = &mut *env;
        if n != env.state.num_agents() {
            return fail(
                SmStatus::InvalidArgument,
                format!("{n} actions for {} agents", env.state.num_agents()),
            );
        }
        let raw = std::slice::from_raw_parts(actions, n);
        let mut parsed = Vec::with_capacity(n);
        for &a in raw {
            parsed.push(try_sm!(Action::from_index(a as usize)));
        }
        let outcome = try_sm!(env.state.step(&parsed));
        if !rewards.is_null() {
            std::slice::from_raw_parts_mut(rewards, n).copy_from_slice(&outcome.rewards);
        }
        if !terminated.is_null() {
            *terminated = outcome.terminated;
        }
        SmStatus::Ok
    })
}

/// Writes agent `agent`'s one-hot observation (`SM_OBS_LEN` doubles) into
/// `out`. A timed-out agent receives the all-empty frame and `timed_out`
/// is set.
///
/// # Safety
/// `out` must point to `len` writable doubles; `timed_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn sm_env_observation(
    env: *const SmEnv,
    agent: usize,
    out: *mut f64,
    len: usize,
    timed_out: *mut bool,
) -> SmStatus {
    guard(|| {
        non_null!(env, out);
        if len < SM_OBS_LEN {
            return fail(SmStatus::BufferTooSmall, format!("need {SM_OBS_LEN} values, got {len}"));
        }
        let obs = try_sm!(socialmi::env::render_observation(&(*env).state, agent));
        obs.write_one_hot(std::slice::from_raw_parts_mut(out, SM_OBS_LEN));
        if !timed_out.is_null() {
            *timed_out = obs.is_timeout();
        }
        SmStatus::Ok
    })
}

/// # Safety
/// `env` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_env_apple_count(env: *const SmEnv, out: *mut usize) -> SmStatus {
    guard(|| {
        non_null!(env, out);
        *out = (*env).state.apple_count();
        SmStatus::Ok
    })
}

/// # Safety
/// `env` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_env_num_agents(env: *const SmEnv, out: *mut usize) -> SmStatus {
    guard(|| {
        non_null!(env, out);
        *out = (*env).state.num_agents();
        SmStatus::Ok
    })
}

/// Steps since the current episode began.
///
/// # Safety
/// `env` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_env_time(env: *const SmEnv, out: *mut u64) -> SmStatus {
    guard(|| {
        non_null!(env, out);
        *out = (*env).state.t();
        SmStatus::Ok
    })
}

/// Whether the agent is on the field, i.e. not serving a timeout.
///
/// # Safety
/// `env` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_env_agent_active(env: *const SmEnv, agent: usize, out: *mut bool) -> SmStatus {
    guard(|| {
        non_null!(env, out);
        *out = try_sm!((*env).state.agent(agent)).is_active();
        SmStatus::Ok
    })
}

/// Regrowth probability of an empty apple site with `nearby` apples within
/// distance 2.
#[no_mangle]
pub extern "C" fn sm_respawn_probability(nearby: usize) -> f64 {
    respawn_probability(nearby)
}

/// # Safety
/// `payoffs` must point to `n` doubles; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_utilities(payoffs: *const f64, n: usize, out: *mut f64) -> SmStatus {
    guard(|| {
        non_null!(payoffs, out);
        *out = try_sm!(metrics::utilities(std::slice::from_raw_parts(payoffs, n)));
        SmStatus::Ok
    })
}

/// # Safety
/// `payoffs` must point to `n` doubles; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_equity(payoffs: *const f64, n: usize, out: *mut f64) -> SmStatus {
    guard(|| {
        non_null!(payoffs, out);
        *out = try_sm!(metrics::equity(std::slice::from_raw_parts(payoffs, n)));
        SmStatus::Ok
    })
}

/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_peace(timeout_slots: usize, agents: usize, steps: usize, out: *mut f64) -> SmStatus {
    guard(|| {
        non_null!(out);
        *out = try_sm!(metrics::peace(timeout_slots, agents, steps));
        SmStatus::Ok
    })
}

/// # Safety
/// `apple_counts` must point to `n` values; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sm_sustainability(apple_counts: *const usize, n: usize, out: *mut f64) -> SmStatus {
    guard(|| {
        non_null!(apple_counts, out);
        *out = metrics::sustainability(std::slice::from_raw_parts(apple_counts, n));
        SmStatus::Ok
    })
}

/// Cooperation index from the shifted MI, the average policy entropy and
/// the utilities. `defined` is cleared, and `out` left untouched, when the
/// entropy is too small for the index to exist.
///
/// # Safety
/// `out` and `defined` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_cooperation_index(
    i_shifted: f64,
    h_bar: f64,
    u: f64,
    out: *mut f64,
    defined: *mut bool,
) -> SmStatus {
    guard(|| {
        non_null!(out, defined);
        match metrics::cooperation_index(i_shifted, h_bar, u) {
            Some(psi) => {
                *out = psi;
                *defined = true;
            }
            None => *defined = false,
        }
        SmStatus::Ok
    })
}
