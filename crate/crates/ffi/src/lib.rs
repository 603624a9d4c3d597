//! C ABI over the `dots` optimizer.
//!
//! Every function returns a [`DotsStatus`]; on failure a description is kept
//! per thread and can be copied out with [`dots_last_error`]. Spaces and run
//! histories are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dots::driver::{self, RoundEntry};
use dots::objectives::{Benchmark, BenchmarkObjective, Direction, KnownOptimum, Objective};
use dots::sampler::SampleRatio;
use dots::{Ablations, ConstraintSet, Error, RunConfig, RunHistory, Scenario, SearchSpace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DotsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Infeasible = 4,
    Evaluation = 5,
    Protocol = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DotsScenario {
    Exact = 0,
    Surrogate = 1,
}

pub const DOTS_ABLATE_NO_LOCAL_BACKPROP: u32 = 1;
pub const DOTS_ABLATE_NO_ADAPTIVE_WEIGHT: u32 = 2;
pub const DOTS_ABLATE_NO_TOP_VISIT: u32 = 4;
pub const DOTS_ABLATE_GREEDY: u32 = 8;

/// Run settings. Fill with [`dots_run_options_default`] before changing fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DotsRunOptions {
    pub scenario: DotsScenario,
    pub init_points: usize,
    pub batch: usize,
    pub rounds: usize,
    pub eval_budget: usize,
    pub chains: usize,
    pub rollouts: usize,
    pub c0: f64,
    pub score_parts: u32,
    pub visit_parts: u32,
    pub tol: f64,
    /// Nonzero to use `target` instead of the objective's known optimum.
    pub has_target: c_int,
    pub target: f64,
    /// Bitwise OR of `DOTS_ABLATE_*`.
    pub ablations: u32,
    pub seed: u64,
}

/// One history row. `r2` is NaN when no fit diagnostic exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotsRoundEntry {
    pub round: usize,
    pub evals: usize,
    pub evals_cum: usize,
    pub best_value: f64,
    pub c_eff: f64,
    pub r2: f64,
}

/// Objective callback: write f(x) to `out` and return 0, or nonzero on failure.
pub type DotsObjectiveFn =
    Option<unsafe extern "C" fn(user_data: *mut c_void, x: *const f64, dims: usize, out: *mut f64) -> c_int>;

pub struct DotsSpace {
    space: SearchSpace,
}

pub struct DotsHistory {
    history: RunHistory,
    best_x: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> DotsStatus {
    match e {
        Error::DimensionMismatch { .. } => DotsStatus::DimensionMismatch,
        Error::Infeasible { .. } => DotsStatus::Infeasible,
        Error::Evaluation { .. } => DotsStatus::Evaluation,
        Error::Io(_) => DotsStatus::Io,
        Error::Round { source, .. } => status_of(source),
        e if e.is_protocol() => DotsStatus::Protocol,
        _ => DotsStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> DotsStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> DotsStatus {
    set_error(format!("{what} is null"));
    DotsStatus::NullPointer
}

fn guard(f: impl FnOnce() -> DotsStatus) -> DotsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == DotsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DotsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Option<&'a [f64]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, n))
    }
}

/// Copies `s` plus a terminating NUL into `buf`. `needed` (optional) receives
/// the full size including the NUL.
unsafe fn write_str(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> DotsStatus {
    let want = s.len() + 1;
    if !needed.is_null() {
        *needed = want;
    }
    if buf.is_null() || cap < want {
        set_error(format!("buffer of {cap} bytes is too small, need {want}"));
        return DotsStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    DotsStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dots_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must point to `cap` writable bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn dots_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> DotsStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    write_str(&msg, buf, cap, needed)
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dots_run_options_default(out: *mut DotsRunOptions) -> DotsStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let d = RunConfig::new(Scenario::Exact, 10_000, 0);
        *out = DotsRunOptions {
            scenario: DotsScenario::Exact,
            init_points: d.init_points,
            batch: d.batch,
            rounds: d.rounds,
            eval_budget: d.eval_budget,
            chains: d.chains,
            rollouts: d.ducb.rollouts,
            c0: d.ducb.c0,
            score_parts: d.sample_ratio.score_parts,
            visit_parts: d.sample_ratio.visit_parts,
            tol: d.tol,
            has_target: 0,
            target: 0.0,
            ablations: 0,
            seed: 0,
        };
        DotsStatus::Ok
    })
}

/// Lattice with per-dimension bounds and steps.
///
/// # Safety
/// `lower`, `upper` and `step` must each hold `dims` values; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dots_space_new(
    lower: *const f64,
    upper: *const f64,
    step: *const f64,
    dims: usize,
    out: *mut *mut DotsSpace,
) -> DotsStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let (Some(lo), Some(hi), Some(st)) = (slice(lower, dims), slice(upper, dims), slice(step, dims)) else {
            return null("bounds");
        };
        match SearchSpace::new(lo.to_vec(), hi.to_vec(), st.to_vec()) {
            Ok(space) => {
                *out = Box::into_raw(Box::new(DotsSpace { space }));
                DotsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dots_space_uniform(
    dims: usize,
    lower: f64,
    upper: f64,
    step: f64,
    out: *mut *mut DotsSpace,
) -> DotsStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match SearchSpace::uniform(dims, lower, upper, step) {
            Ok(space) => {
                *out = Box::into_raw(Box::new(DotsSpace { space }));
                DotsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of dimensions, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dots_space_dims(space: *const DotsSpace) -> usize {
    space.as_ref().map_or(0, |s| s.space.dims())
}

/// # Safety
/// `space` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dots_space_free(space: *mut DotsSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

fn parse_benchmark(name: *const c_char) -> Result<Benchmark, DotsStatus> {
    if name.is_null() {
        return Err(null("name"));
    }
    let s = unsafe { CStr::from_ptr(name) }.to_str().map_err(|_| {
        set_error("benchmark name is not UTF-8");
        DotsStatus::InvalidArgument
    })?;
    s.parse().map_err(fail)
}

/// Evaluates a named benchmark ("ackley", "rastrigin", ...) at `x`.
///
/// # Safety
/// `name` must be a NUL-terminated string, `x` must hold `dims` values and
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dots_benchmark_eval(
    name: *const c_char,
    x: *const f64,
    dims: usize,
    out: *mut f64,
) -> DotsStatus {
    guard(|| {
        let kind = match parse_benchmark(name) {
            Ok(k) => k,
            Err(s) => return s,
        };
        let Some(x) = slice(x, dims) else { return null("x") };
        if out.is_null() {
            return null("out");
        }
        match BenchmarkObjective::new(kind, dims).and_then(|f| f.evaluate(x)) {
            Ok(y) => {
                *out = y;
                DotsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

fn run_config(o: &DotsRunOptions) -> Result<RunConfig, Error> {
    let mut c = RunConfig::new(
        match o.scenario {
            DotsScenario::Exact => Scenario::Exact,
            DotsScenario::Surrogate => Scenario::Surrogate,
        },
        o.eval_budget,
        o.seed,
    );
    c.init_points = o.init_points;
    c.batch = o.batch;
    c.rounds = o.rounds;
    c.chains = o.chains;
    c.ducb.rollouts = o.rollouts;
    c.ducb.c0 = o.c0;
    c.sample_ratio = SampleRatio::new(o.score_parts, o.visit_parts)?;
    c.tol = o.tol;
    c.target = (o.has_target != 0).then_some(o.target);
    c.ablations = Ablations {
        no_local_backprop: o.ablations & DOTS_ABLATE_NO_LOCAL_BACKPROP != 0,
        no_adaptive_weight: o.ablations & DOTS_ABLATE_NO_ADAPTIVE_WEIGHT != 0,
        no_top_visit: o.ablations & DOTS_ABLATE_NO_TOP_VISIT != 0,
        greedy: o.ablations & DOTS_ABLATE_GREEDY != 0,
    };
    c.validate()?;
    Ok(c)
}

unsafe fn run_with(
    objective: &dyn Objective,
    space: *const DotsSpace,
    options: *const DotsRunOptions,
    out: *mut *mut DotsHistory,
) -> DotsStatus {
    let Some(space) = space.as_ref() else { return null("space") };
    let Some(options) = options.as_ref() else { return null("options") };
    if out.is_null() {
        return null("out");
    }
    let result = run_config(options).and_then(|cfg| {
        driver::run(objective, &space.space, &ConstraintSet::new(), &cfg)
    });
    match result {
        Ok(history) => {
            let best_x = space.space.realize(history.best_point());
            *out = Box::into_raw(Box::new(DotsHistory { history, best_x }));
            DotsStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Optimizes a named benchmark over `space`.
///
/// # Safety
/// Pointers must be valid; `out` receives a history to release with
/// [`dots_history_free`].
#[no_mangle]
pub unsafe extern "C" fn dots_run_benchmark(
    name: *const c_char,
    space: *const DotsSpace,
    options: *const DotsRunOptions,
    out: *mut *mut DotsHistory,
) -> DotsStatus {
    guard(|| {
        let kind = match parse_benchmark(name) {
            Ok(k) => k,
            Err(s) => return s,
        };
        let dims = dots_space_dims(space);
        match BenchmarkObjective::new(kind, dims) {
            Ok(f) => run_with(&f, space, options, out),
            Err(e) => fail(e),
        }
    })
}

struct CallbackObjective {
    f: unsafe extern "C" fn(*mut c_void, *const f64, usize, *mut f64) -> c_int,
    user_data: *mut c_void,
    direction: Direction,
}

// The driver calls the objective from the thread that started the run only.
unsafe impl Send for CallbackObjective {}
unsafe impl Sync for CallbackObjective {}

impl Objective for CallbackObjective {
    fn name(&self) -> &str {
        "callback"
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, x: &[f64]) -> dots::Result<f64> {
        let mut y = f64::NAN;
        let rc = unsafe { (self.f)(self.user_data, x.as_ptr(), x.len(), &mut y) };
        if rc != 0 {
            return Err(Error::Evaluation {
                id: 0,
                message: format!("callback returned {rc}"),
            });
        }
        Ok(y)
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        None
    }
}

/// Optimizes a caller-supplied objective. `maximize` nonzero flips the
/// direction. Convergence needs `has_target` in the options.
///
/// # Safety
/// `f` is called synchronously on this thread with `user_data`; other
/// pointers as for [`dots_run_benchmark`].
#[no_mangle]
pub unsafe extern "C" fn dots_run_callback(
    f: DotsObjectiveFn,
    user_data: *mut c_void,
    maximize: c_int,
    space: *const DotsSpace,
    options: *const DotsRunOptions,
    out: *mut *mut DotsHistory,
) -> DotsStatus {
    guard(|| {
        let Some(f) = f else { return null("f") };
        let objective = CallbackObjective {
            f,
            user_data,
            direction: if maximize != 0 { Direction::Maximize } else { Direction::Minimize },
        };
        run_with(&objective, space, options, out)
    })
}

/// History rows including the initialization row; 0 for null.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dots_history_len(h: *const DotsHistory) -> usize {
    h.as_ref().map_or(0, |h| h.history.entries.len())
}

/// # Safety
/// `h` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dots_history_entry(
    h: *const DotsHistory,
    index: usize,
    out: *mut DotsRoundEntry,
) -> DotsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return null("history") };
        if out.is_null() {
            return null("out");
        }
        let Some(e): Option<&RoundEntry> = h.history.entries.get(index) else {
            set_error(format!("row {index} out of range"));
            return DotsStatus::InvalidArgument;
        };
        *out = DotsRoundEntry {
            round: e.round,
            evals: e.evals,
            evals_cum: e.evals_cum,
            best_value: e.best_value,
            c_eff: e.c_eff,
            r2: e.r2.unwrap_or(f64::NAN),
        };
        DotsStatus::Ok
    })
}

/// Best value, its coordinates (`x` holds `dims` values, may be null) and
/// whether the run converged.
///
/// # Safety
/// `h` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dots_history_best(
    h: *const DotsHistory,
    value: *mut f64,
    x: *mut f64,
    dims: usize,
    converged: *mut c_int,
) -> DotsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return null("history") };
        if !x.is_null() {
            if dims != h.best_x.len() {
                return fail(Error::DimensionMismatch {
                    expected: h.best_x.len(),
                    actual: dims,
                });
            }
            ptr::copy_nonoverlapping(h.best_x.as_ptr(), x, dims);
        }
        if !value.is_null() {
            *value = h.history.best_value();
        }
        if !converged.is_null() {
            *converged = (h.history.status == driver::Status::Converged) as c_int;
        }
        DotsStatus::Ok
    })
}

/// History as CSV text (header `round,evals_cum,best_value,c_eff,r2`).
///
/// # Safety
/// `h` must be a live handle; `buf` must hold `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn dots_history_csv(
    h: *const DotsHistory,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> DotsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return null("history") };
        write_str(&h.history.to_csv(), buf, cap, needed)
    })
}

/// # Safety
/// `h` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dots_history_free(h: *mut DotsHistory) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Fraction of `best_values` within `tol` of `target`.
///
/// # Safety
/// `best_values` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dots_convergence_ratio(
    best_values: *const f64,
    n: usize,
    target: f64,
    tol: f64,
    out: *mut f64,
) -> DotsStatus {
    guard(|| {
        let Some(v) = slice(best_values, n) else { return null("best_values") };
        if out.is_null() {
            return null("out");
        }
        if n == 0 {
            set_error("convergence ratio of no runs");
            return DotsStatus::InvalidArgument;
        }
        let hits = v.iter().filter(|b| (*b - target).abs() <= tol).count();
        *out = hits as f64 / n as f64;
        DotsStatus::Ok
    })
}

/// Dynamic upper confidence bound of a node.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dots_ducb(
    value: f64,
    n_node: u64,
    n_root: u64,
    c_eff: f64,
    out: *mut f64,
) -> DotsStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match dots::search::ducb(value, n_node, n_root, c_eff) {
            Ok(v) => {
                *out = v;
                DotsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
