//! C ABI over the DroneConnect simulator, trained policies and the coverage
//! bound.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible call returns a
//! [`RelaynetStatus`]; on failure [`relaynet_last_error`] describes the
//! cause for the calling thread. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relaynet::harness::{load_params_from, snapshot_bound, ExperimentManifest, Scenario};
use relaynet::learner::{act, ActMode, ConnectEnv, MultiAgentEnv, PolicyParams};
use relaynet::world::WorldConfig;
use relaynet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelaynetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Contract = 4,
    Io = 5,
    Checkpoint = 6,
    BudgetExceeded = 7,
    NonFinite = 8,
    Panic = 9,
}

/// A DroneConnect world.
pub struct RelaynetWorld {
    env: ConnectEnv,
}

/// A trained policy and the scratch random state used for sampling.
pub struct RelaynetPolicy {
    params: PolicyParams,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RelaynetStatus {
    match e {
        Error::Config { .. } | Error::Manifest(_) => RelaynetStatus::Config,
        Error::Dimension { .. } | Error::Domain(_) | Error::Contract(_) => RelaynetStatus::Contract,
        Error::BudgetExceeded { .. } => RelaynetStatus::BudgetExceeded,
        Error::NonFinite(_) => RelaynetStatus::NonFinite,
        Error::Checkpoint(_) | Error::Json(_) => RelaynetStatus::Checkpoint,
        Error::Io { .. } => RelaynetStatus::Io,
    }
}

struct Fail(RelaynetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RelaynetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RelaynetStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RelaynetStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RelaynetStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(RelaynetStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(RelaynetStatus::InvalidArgument, format!("{what} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn relaynet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn relaynet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a world from a TOML world config (NULL or "" for defaults),
/// reset with the config's seed.
///
/// # Safety
/// `config_toml` is NULL or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_new(
    config_toml: *const c_char,
    out: *mut *mut RelaynetWorld,
) -> RelaynetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_toml.is_null() {
            WorldConfig::default()
        } else {
            let text = str_arg(config_toml, "config_toml")?;
            if text.trim().is_empty() {
                WorldConfig::default()
            } else {
                WorldConfig::from_kv_str(text)?
            }
        };
        let env = ConnectEnv::new(config)?;
        *out = Box::into_raw(Box::new(RelaynetWorld { env }));
        Ok(())
    })
}

/// # Safety
/// `world` is NULL or a handle from `relaynet_world_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_free(world: *mut RelaynetWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// # Safety
/// `world` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_reset(world: *mut RelaynetWorld, seed: u64) -> RelaynetStatus {
    guard(|| {
        let w = world.as_mut().ok_or_else(|| null("world"))?;
        w.env.reset(seed)?;
        Ok(())
    })
}

/// # Safety
/// `world` is a live handle; `num_uavs` and `num_nodes` are writable.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_size(
    world: *const RelaynetWorld,
    num_uavs: *mut usize,
    num_nodes: *mut usize,
) -> RelaynetStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if num_uavs.is_null() || num_nodes.is_null() {
            return Err(null("output"));
        }
        *num_uavs = w.env.config.num_uavs;
        *num_nodes = w.env.config.num_nodes;
        Ok(())
    })
}

/// Advances one step. `actions` holds `2 * num_uavs` force fractions in
/// `[-1, 1]`, interleaved x then y per UAV.
///
/// # Safety
/// `world` is a live handle; `actions` points to `len` doubles; `reward`
/// and `done` are writable.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_step(
    world: *mut RelaynetWorld,
    actions: *const f64,
    len: usize,
    reward: *mut f64,
    done: *mut bool,
) -> RelaynetStatus {
    guard(|| {
        let w = world.as_mut().ok_or_else(|| null("world"))?;
        if actions.is_null() {
            return Err(null("actions"));
        }
        if reward.is_null() || done.is_null() {
            return Err(null("output"));
        }
        let m = w.env.config.num_uavs;
        if len != 2 * m {
            return Err(Fail(RelaynetStatus::InvalidArgument, format!("expected {} action values, got {len}", 2 * m)));
        }
        let a = std::slice::from_raw_parts(actions, len);
        let acts: Vec<Vec<f64>> = a.chunks(2).map(|c| c.to_vec()).collect();
        let r = w.env.step(&acts)?;
        *reward = r.reward;
        *done = r.done;
        Ok(())
    })
}

/// Writes `2 * num_uavs` coordinates, x then y per UAV.
///
/// # Safety
/// `world` is a live handle; `out` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_uav_positions(
    world: *const RelaynetWorld,
    out: *mut f64,
    len: usize,
) -> RelaynetStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let dst = out_slice(out, len, 2 * w.env.state.uavs.len(), "out")?;
        for (d, u) in dst.chunks_mut(2).zip(&w.env.state.uavs) {
            d[0] = u.pos.x;
            d[1] = u.pos.y;
        }
        Ok(())
    })
}

/// Writes `2 * num_nodes` coordinates, x then y per node.
///
/// # Safety
/// `world` is a live handle; `out` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_node_positions(
    world: *const RelaynetWorld,
    out: *mut f64,
    len: usize,
) -> RelaynetStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let dst = out_slice(out, len, 2 * w.env.state.nodes.len(), "out")?;
        for (d, n) in dst.chunks_mut(2).zip(&w.env.state.nodes) {
            d[0] = n.pos.x;
            d[1] = n.pos.y;
        }
        Ok(())
    })
}

/// Covered fraction of nodes in the current state.
///
/// # Safety
/// `world` is a live handle; `ratio` is writable.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_coverage(world: *const RelaynetWorld, ratio: *mut f64) -> RelaynetStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if ratio.is_null() {
            return Err(null("ratio"));
        }
        *ratio = w.env.last().coverage_ratio();
        Ok(())
    })
}

/// Best covered-node ratio over placements on a `grid_res × grid_res`
/// grid for the current node positions. Exact within `budget` node
/// expansions, greedy beyond; `exact` reports which.
///
/// # Safety
/// `world` is a live handle; `ratio` and `exact` are writable.
#[no_mangle]
pub unsafe extern "C" fn relaynet_world_coverage_bound(
    world: *const RelaynetWorld,
    grid_res: usize,
    budget: u64,
    ratio: *mut f64,
    exact: *mut bool,
) -> RelaynetStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if ratio.is_null() || exact.is_null() {
            return Err(null("output"));
        }
        if grid_res == 0 {
            return Err(Fail(RelaynetStatus::InvalidArgument, "grid_res must be >= 1".into()));
        }
        let (r, opt) = snapshot_bound(&w.env.state, &w.env.config, grid_res, budget)?;
        *ratio = r;
        *exact = opt == relaynet::baseline::Optimality::Exact;
        Ok(())
    })
}

/// Loads a DroneConnect policy checkpoint. The manifest (TOML, or JSON
/// when the path ends in `.json`) fixes the architecture.
///
/// # Safety
/// Both paths are NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn relaynet_policy_load(
    manifest_path: *const c_char,
    checkpoint_path: *const c_char,
    seed: u64,
    out: *mut *mut RelaynetPolicy,
) -> RelaynetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let manifest = ExperimentManifest::load(Path::new(str_arg(manifest_path, "manifest_path")?))?;
        if manifest.scenario != Scenario::Connect {
            return Err(Fail(RelaynetStatus::Config, "only connect-scenario policies can drive a world".into()));
        }
        let params = load_params_from(&manifest, seed, Path::new(str_arg(checkpoint_path, "checkpoint_path")?))?;
        *out = Box::into_raw(Box::new(RelaynetPolicy { params, rng: ChaCha8Rng::seed_from_u64(seed) }));
        Ok(())
    })
}

/// # Safety
/// `policy` is NULL or a handle from `relaynet_policy_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn relaynet_policy_free(policy: *mut RelaynetPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Actions of every UAV for the world's current observations, written as
/// `2 * num_uavs` values ready for `relaynet_world_step`. Only local
/// observations and messages are used.
///
/// # Safety
/// `policy` and `world` are live handles; `out` points to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn relaynet_policy_act(
    policy: *mut RelaynetPolicy,
    world: *const RelaynetWorld,
    deterministic: bool,
    out: *mut f64,
    len: usize,
) -> RelaynetStatus {
    guard(|| {
        let p = policy.as_mut().ok_or_else(|| null("policy"))?;
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let dst = out_slice(out, len, 2 * w.env.config.num_uavs, "out")?;
        let mode = if deterministic { ActMode::Deterministic } else { ActMode::Sample };
        let a = act(&p.params.actor_view(), &w.env.observe(), mode, &mut p.rng)?;
        for (d, v) in dst.chunks_mut(2).zip(&a.actions) {
            d.copy_from_slice(v);
        }
        Ok(())
    })
}
