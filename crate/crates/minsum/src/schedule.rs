//! Execution schedules: synchronous sweeps and totally asynchronous runs
//! with per-vertex update times and per-read communication lags, simulated
//! deterministically on a single clock.
//!
//! Time is discrete. Version 0 of every vertex's state is its initial
//! payload; an event at time `t` (1-based) produces version `t`. A vertex
//! updating at `t` reads version `t - 1 - lag` of a peer, clamped at 0, so a
//! read never sees data newer than `t - 1`. Synchronous scheduling is the
//! special case where every vertex updates at every time with lag 0.
//!
//! Total asynchronism is an infinite-horizon property; the finite-horizon
//! stand-in checked here is the `(W, L)` witness: every vertex updates at
//! least once in every window of `W` consecutive times, and every read lag
//! is at most `L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{RunOptions, Trace, TraceRow};
use crate::{Error, Result};

/// One vertex's update at one time: the peers it reads with nonzero lag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexUpdate {
    pub vertex: usize,
    /// `(sender, lag)` overrides; absent senders are read with lag 0.
    pub lags: Vec<(usize, usize)>,
}

impl VertexUpdate {
    pub fn lag_of(&self, sender: usize) -> usize {
        self.lags
            .iter()
            .find(|(s, _)| *s == sender)
            .map(|(_, l)| *l)
            .unwrap_or(0)
    }
}

/// A deterministic update plan over a finite horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleScript", into = "ScheduleScript")]
pub struct Schedule {
    horizon: usize,
    /// `events[k]` is the set of updates at time `k + 1`, vertex-sorted.
    events: Vec<Vec<VertexUpdate>>,
}

impl Schedule {
    /// Every vertex updates at every time, reading fresh (lag-0) data.
    pub fn synchronous(n: usize, horizon: usize) -> Schedule {
        let events = (0..horizon)
            .map(|_| (0..n).map(|vertex| VertexUpdate { vertex, lags: vec![] }).collect())
            .collect();
        Schedule { horizon, events }
    }

    /// Seeded random total-async schedule honoring the `(window, lag_bound)`
    /// witness by construction: each vertex activates with probability 1/2
    /// per step (forced after `window - 1` idle steps), and each read lag is
    /// uniform on `[0, min(lag_bound, t - 1)]`.
    pub fn random_total_async(
        n: usize,
        horizon: usize,
        seed: u64,
        window: usize,
        lag_bound: usize,
    ) -> Result<Schedule> {
        if window == 0 {
            return Err(Error::InvalidSchedule("window must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_update = vec![0usize; n];
        let mut events = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let mut updates = Vec::new();
            for vertex in 0..n {
                let forced = t - last_update[vertex] >= window;
                if forced || rng.random_bool(0.5) {
                    last_update[vertex] = t;
                    let mut lags = Vec::new();
                    for sender in 0..n {
                        if sender != vertex {
                            let max_lag = lag_bound.min(t - 1);
                            let lag = rng.random_range(0..=max_lag);
                            if lag > 0 {
                                lags.push((sender, lag));
                            }
                        }
                    }
                    updates.push(VertexUpdate { vertex, lags });
                }
            }
            events.push(updates);
        }
        Ok(Schedule { horizon, events })
    }

    pub fn from_script_json(text: &str) -> Result<Schedule> {
        // Two-step parse so script-level problems surface as
        // `InvalidSchedule` rather than opaque serde errors.
        let script: ScheduleScript = serde_json::from_str(text)?;
        Schedule::try_from(script)
    }

    pub fn to_script_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Updates at time `t` (1-based).
    pub fn updates_at(&self, t: usize) -> &[VertexUpdate] {
        &self.events[t - 1]
    }

    /// True when the schedule degenerates to synchronous sweeps for an
    /// `n`-vertex program: all vertices update at every time, all lags 0.
    pub fn is_synchronous(&self, n: usize) -> bool {
        self.events.iter().all(|updates| {
            updates.len() == n && updates.iter().all(|u| u.lags.iter().all(|&(_, l)| l == 0))
        })
    }

    /// Structural validity for an `n`-vertex program: vertex ids in range,
    /// no duplicate updates per time, senders in range and distinct from the
    /// reader, and no lag reaching before version 0.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (k, updates) in self.events.iter().enumerate() {
            let t = k + 1;
            let mut seen = vec![false; n];
            for u in updates {
                if u.vertex >= n {
                    return Err(Error::InvalidSchedule(format!(
                        "time {t}: vertex {} out of range for n={n}",
                        u.vertex
                    )));
                }
                if seen[u.vertex] {
                    return Err(Error::InvalidSchedule(format!(
                        "time {t}: vertex {} listed twice",
                        u.vertex
                    )));
                }
                seen[u.vertex] = true;
                for &(sender, lag) in &u.lags {
                    if sender >= n {
                        return Err(Error::InvalidSchedule(format!(
                            "time {t}: lag sender {sender} out of range for n={n}"
                        )));
                    }
                    if sender == u.vertex {
                        return Err(Error::InvalidSchedule(format!(
                            "time {t}: vertex {} cannot lag a read of itself",
                            u.vertex
                        )));
                    }
                    if lag > t - 1 {
                        return Err(Error::InvalidSchedule(format!(
                            "time {t}: lag {lag} reaches before the initial version"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The finite-horizon total-asynchronism witness: every vertex updates
    /// in every window of `window` consecutive times (counting the initial
    /// version as an update at time 0), and every lag is at most
    /// `lag_bound`.
    pub fn check_witness(&self, n: usize, window: usize, lag_bound: usize) -> Result<()> {
        let mut last_update = vec![0usize; n];
        for (k, updates) in self.events.iter().enumerate() {
            let t = k + 1;
            for u in updates {
                for &(sender, lag) in &u.lags {
                    if lag > lag_bound {
                        return Err(Error::InvalidSchedule(format!(
                            "time {t}: read of {sender} by {} lags {lag} > bound {lag_bound}",
                            u.vertex
                        )));
                    }
                }
                last_update[u.vertex] = t;
            }
            for (vertex, &last) in last_update.iter().enumerate() {
                if t - last >= window {
                    return Err(Error::InvalidSchedule(format!(
                        "vertex {vertex} idle through window ending at time {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Script form: per-vertex update times plus sparse lag overrides.
#[derive(Serialize, Deserialize)]
struct ScheduleScript {
    horizon: usize,
    #[serde(default)]
    updates: Vec<VertexTimes>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lags: Vec<LagOverride>,
}

#[derive(Serialize, Deserialize)]
struct VertexTimes {
    vertex: usize,
    times: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LagOverride {
    t: usize,
    from: usize,
    to: usize,
    lag: usize,
}

impl TryFrom<ScheduleScript> for Schedule {
    type Error = Error;

    fn try_from(script: ScheduleScript) -> Result<Schedule> {
        let mut events: Vec<Vec<VertexUpdate>> = vec![Vec::new(); script.horizon];
        for vt in &script.updates {
            for &t in &vt.times {
                if t == 0 || t > script.horizon {
                    return Err(Error::InvalidSchedule(format!(
                        "vertex {}: update time {t} outside 1..={}",
                        vt.vertex, script.horizon
                    )));
                }
                events[t - 1].push(VertexUpdate { vertex: vt.vertex, lags: vec![] });
            }
        }
        for ev in &mut events {
            ev.sort_by_key(|u| u.vertex);
        }
        for lo in &script.lags {
            if lo.t == 0 || lo.t > script.horizon {
                return Err(Error::InvalidSchedule(format!(
                    "lag override at time {} outside 1..={}",
                    lo.t, script.horizon
                )));
            }
            let update = events[lo.t - 1]
                .iter_mut()
                .find(|u| u.vertex == lo.to)
                .ok_or_else(|| {
                    Error::InvalidSchedule(format!(
                        "lag override at time {}: vertex {} does not update then",
                        lo.t, lo.to
                    ))
                })?;
            update.lags.push((lo.from, lo.lag));
        }
        Ok(Schedule { horizon: script.horizon, events })
    }
}

impl From<Schedule> for ScheduleScript {
    fn from(s: Schedule) -> ScheduleScript {
        let mut per_vertex: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        let mut lags = Vec::new();
        for (k, updates) in s.events.iter().enumerate() {
            let t = k + 1;
            for u in updates {
                per_vertex.entry(u.vertex).or_default().push(t);
                for &(from, lag) in &u.lags {
                    lags.push(LagOverride { t, from, to: u.vertex, lag });
                }
            }
        }
        ScheduleScript {
            horizon: s.horizon,
            updates: per_vertex
                .into_iter()
                .map(|(vertex, times)| VertexTimes { vertex, times })
                .collect(),
            lags,
        }
    }
}

/// A solver that can run one vertex at a time from lagged peer state.
///
/// A payload is everything a vertex publishes: for message engines, its
/// outgoing messages and running estimate; for scalar baselines, its
/// coordinate value.
pub trait AsyncEngine {
    type Payload: Clone;

    /// Version-0 payload.
    fn initial(&self, vertex: usize) -> Result<Self::Payload>;

    /// Recompute `vertex` from its own previous payload and lagged reads of
    /// peers. `read` resolves a peer id to the payload version the schedule
    /// assigns.
    fn update(
        &self,
        vertex: usize,
        own: &Self::Payload,
        read: &mut dyn FnMut(usize) -> Self::Payload,
    ) -> Result<Self::Payload>;

    /// Component of the global estimate this vertex owns.
    fn estimate_component(&self, vertex: usize, payload: &Self::Payload) -> f64;

    /// Magnitude of change between two payload versions of one vertex.
    fn delta(&self, old: &Self::Payload, new: &Self::Payload) -> f64;

    /// Divergence guard; a payload flagged here aborts the run gracefully.
    fn is_divergent(&self, _payload: &Self::Payload) -> bool {
        false
    }
}

/// Run `engine` under `schedule` with full per-vertex version histories, so
/// lagged reads reproduce exactly what a slow channel would deliver.
///
/// Trace rows are emitted once per time step. The run is marked converged
/// only once every vertex has redone its update with change at most
/// `options.tol` *after* the last larger change had time to propagate: a
/// clean update counts only when it postdates the last dirty update by more
/// than the largest lag seen, since earlier ones may have re-read versions
/// from before that change.
pub fn run_async<E: AsyncEngine>(
    engine: &E,
    n: usize,
    schedule: &Schedule,
    options: &RunOptions,
) -> Result<Trace> {
    schedule.validate(n)?;
    let mut history: Vec<Vec<E::Payload>> = Vec::with_capacity(n);
    for v in 0..n {
        history.push(vec![engine.initial(v)?]);
    }
    let mut trace = Trace::new();
    let estimates =
        |h: &Vec<Vec<E::Payload>>| (0..n).map(|v| engine.estimate_component(v, h[v].last().unwrap())).collect::<Vec<f64>>();
    let mut row = TraceRow::new(0, f64::NAN, estimates(&history));
    row.bound_value = options.bound.map(|b| b.value(0));
    trace.push(row);

    // Convergence bookkeeping: time of each vertex's last clean update, time
    // of the last dirty update anywhere, and the largest lag used so far.
    let mut last_clean = vec![None::<usize>; n];
    let mut last_dirty = 0usize;
    let mut max_lag_seen = 0usize;
    for t in 1..=schedule.horizon() {
        let updates = schedule.updates_at(t);
        let lag_max = updates
            .iter()
            .flat_map(|u| u.lags.iter().map(|&(_, lag)| lag))
            .max()
            .unwrap_or(0);
        max_lag_seen = max_lag_seen.max(lag_max);
        let mut step_delta: f64 = 0.0;
        let mut fresh: Vec<(usize, E::Payload)> = Vec::with_capacity(updates.len());
        for u in updates {
            let own = &history[u.vertex][t - 1];
            let mut read = |sender: usize| {
                let version = (t - 1).saturating_sub(u.lag_of(sender));
                // Stale-read safety: never newer than the previous step.
                assert!(version < t, "read of version {version} at time {t}");
                history[sender][version].clone()
            };
            let next = engine.update(u.vertex, own, &mut read)?;
            let d = engine.delta(own, &next);
            step_delta = step_delta.max(d);
            if d > options.tol {
                last_dirty = t;
                last_clean[u.vertex] = None;
            } else {
                last_clean[u.vertex] = Some(t);
            }
            fresh.push((u.vertex, next));
        }
        for v in 0..n {
            let carried = history[v][t - 1].clone();
            history[v].push(carried);
        }
        let mut divergent = false;
        for (v, payload) in fresh {
            divergent |= engine.is_divergent(&payload);
            history[v][t] = payload;
        }
        let mut row = TraceRow::new(
            t,
            if updates.is_empty() { 0.0 } else { step_delta },
            estimates(&history),
        );
        row.bound_value = options.bound.map(|b| b.value(t));
        row.event = Some(updates.iter().map(|u| u.vertex).collect());
        row.lag_max = Some(lag_max);
        trace.push(row);
        if divergent {
            trace.diverged = true;
            return Ok(trace);
        }
        let settled = last_clean
            .iter()
            .all(|&c| c.is_some_and(|tc| tc > last_dirty + max_lag_seen));
        if settled {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Which message engine a scheduled run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Quadratic,
    /// Piecewise-linear messages on a grid of `m` points; half-width taken
    /// from the program's `B` unless overridden.
    Piecewise { m: usize },
    Hyper,
}

/// Dispatch a scheduled run to the named engine. Synchronous schedules take
/// each engine's native sweep path; asynchronous ones go through the
/// mailbox driver.
pub fn run_engine(
    kind: EngineKind,
    program: &crate::model::Program,
    schedule: &Schedule,
    options: &RunOptions,
) -> Result<Trace> {
    match kind {
        EngineKind::Quadratic => crate::quadratic::run_scheduled(program, schedule, options),
        EngineKind::Piecewise { m } => {
            crate::piecewise::run_scheduled(program, schedule, m, options)
        }
        EngineKind::Hyper => crate::hyper::run_scheduled(program, schedule, options),
    }
}
