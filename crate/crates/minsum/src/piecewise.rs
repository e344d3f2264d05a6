//! Min-sum with piecewise-linear messages on a shared uniform grid over
//! [-B, B]: the engine that runs the exact update (no model re-expansion)
//! for any catalog factor, at grid resolution. Messages are stored as their
//! samples at the grid points, normalized to minimum 0, and evaluated by
//! chord interpolation.

use crate::model::{EdgeTerm, NodeTerm, Program};
use crate::quadratic::initial_message;
use crate::schedule::{run_async, AsyncEngine, Schedule};
use crate::trace::{RunOptions, Trace, TraceRow};
use crate::{Error, Result};

/// Shared uniform evaluation grid: `m >= 2` points spanning [-b, b].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn uniform(b: f64, m: usize) -> Result<Grid> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InvalidProgram(format!(
                "grid radius must be positive and finite, got {b}"
            )));
        }
        if m < 2 {
            return Err(Error::InvalidProgram(format!("grid needs >= 2 points, got {m}")));
        }
        let mut points: Vec<f64> = (0..m)
            .map(|k| -b + (2.0 * b) * (k as f64) / ((m - 1) as f64))
            .collect();
        // Pin the endpoints so the box boundary is on the grid exactly.
        points[0] = -b;
        points[m - 1] = b;
        Ok(Grid { points })
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        *self.points.last().expect("m >= 2")
    }

    pub fn spacing(&self) -> f64 {
        (self.hi() - self.lo()) / ((self.m() - 1) as f64)
    }

    /// Cell index whose chord is active at `x` under chord-convexity:
    /// the containing cell inside the grid, the nearest end cell outside.
    fn cell(&self, x: f64) -> usize {
        let idx = self.points.partition_point(|&p| p <= x);
        idx.saturating_sub(1).min(self.m() - 2)
    }
}

/// A message sampled at the grid points, normalized so its minimum is
/// exactly 0. The samples of a convex function are chord-convex (successive
/// chord slopes nondecreasing), which the update preserves.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseMessage {
    pub values: Vec<f64>,
}

impl PiecewiseMessage {
    /// Normalize samples to min 0.
    pub fn normalized(mut values: Vec<f64>) -> PiecewiseMessage {
        let min = values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        for v in &mut values {
            *v -= min;
        }
        PiecewiseMessage { values }
    }
}

/// Evaluate a message at `x` as the upper envelope of its chords: linear
/// interpolation inside the grid, linear extrapolation beyond the ends, the
/// stored sample exactly at a grid point. Equals the max over all chords
/// for chord-convex values; O(log m).
pub fn interpolate(msg: &PiecewiseMessage, grid: &Grid, x: f64) -> f64 {
    let idx = grid.points.partition_point(|&p| p <= x);
    if idx > 0 && grid.points[idx - 1] == x {
        return msg.values[idx - 1];
    }
    let c = idx.saturating_sub(1).min(grid.m() - 2);
    let (p0, p1) = (grid.points[c], grid.points[c + 1]);
    let (v0, v1) = (msg.values[c], msg.values[c + 1]);
    v0 + (x - p0) * (v1 - v0) / (p1 - p0)
}

/// Right-derivative of the chord envelope at `x` (the slope of the active
/// cell).
fn interpolate_slope(msg: &PiecewiseMessage, grid: &Grid, x: f64) -> f64 {
    let c = grid.cell(x);
    (msg.values[c + 1] - msg.values[c]) / (grid.points[c + 1] - grid.points[c])
}

/// One vertex's local 1-D problem: its node factor, optionally one edge
/// factor with the other endpoint pinned, and interpolated incoming
/// messages.
struct LocalObjective<'a> {
    node: &'a NodeTerm,
    edge: Option<(&'a EdgeTerm, bool, f64)>, // (term, y is the factor's i-side, pinned other value)
    incoming: Vec<&'a PiecewiseMessage>,
    grid: &'a Grid,
}

impl LocalObjective<'_> {
    fn value(&self, y: f64) -> f64 {
        let mut v = self.node.value(y);
        if let Some((term, y_is_i, other)) = self.edge {
            v += if y_is_i { term.value(y, other) } else { term.value(other, y) };
        }
        for msg in &self.incoming {
            v += interpolate(msg, self.grid, y);
        }
        v
    }

    fn slope(&self, y: f64) -> f64 {
        let mut s = self.node.d1(y);
        if let Some((term, y_is_i, other)) = self.edge {
            let (gi, gj) = if y_is_i { term.grad(y, other) } else { term.grad(other, y) };
            s += if y_is_i { gi } else { gj };
        }
        for msg in &self.incoming {
            s += interpolate_slope(msg, self.grid, y);
        }
        s
    }
}

const INNER_MAX_ITERS: usize = 60;

/// Leftmost minimizer of a convex piecewise-smooth objective over
/// [lo, hi], by bisection on the right-derivative down to a bracket of
/// width 1e-10 * hi.
fn minimize_on_interval(obj: &LocalObjective<'_>, lo: f64, hi: f64) -> f64 {
    if obj.slope(lo) >= 0.0 {
        return lo;
    }
    if obj.slope(hi) <= 0.0 {
        return hi;
    }
    let width_target = 1e-10 * hi.abs().max(1.0);
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..INNER_MAX_ITERS {
        if hi - lo <= width_target {
            break;
        }
        let mid = 0.5 * (lo + hi);
        // s(mid) == 0 pulls the bracket left, onto the leftmost minimizer
        // of a flat stretch.
        if obj.slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn require_box(program: &Program) -> Result<f64> {
    program.box_radius().ok_or_else(|| {
        Error::InvalidProgram("piecewise engine needs the program's box radius B".into())
    })
}

fn require_pairwise(program: &Program) -> Result<()> {
    if program.hypers().is_empty() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "piecewise engine handles pairwise programs; use the hyper engine".into(),
        ))
    }
}

/// Incoming messages into `vertex`, excluding the one from `except`.
fn incoming<'a>(
    program: &Program,
    messages: &'a [PiecewiseMessage],
    vertex: usize,
    except: Option<usize>,
) -> Vec<&'a PiecewiseMessage> {
    program
        .adjacency(vertex)
        .iter()
        .filter(|(u, _)| Some(*u) != except)
        .map(|&(u, e)| &messages[program.directed_id(e, u)])
        .collect()
}

/// Recompute the message for directed edge `d` from the current `messages`:
/// at each grid point of the receiver, the constrained minimum over the
/// sender of node + edge + other incoming messages.
pub fn update_message_pw(
    program: &Program,
    d: usize,
    messages: &[PiecewiseMessage],
    grid: &Grid,
) -> PiecewiseMessage {
    let (from, to, e, sender_is_i) = program.directed_edge(d);
    let term = &program.edges()[e].term;
    let inc = incoming(program, messages, from, Some(to));
    let mut values = Vec::with_capacity(grid.m());
    for &xk in grid.points() {
        let obj = LocalObjective {
            node: program.node(from),
            edge: Some((term, sender_is_i, xk)),
            incoming: inc.clone(),
            grid,
        };
        let y = minimize_on_interval(&obj, grid.lo(), grid.hi());
        values.push(obj.value(y));
    }
    PiecewiseMessage::normalized(values)
}

/// Estimate at `vertex`: leftmost minimizer over [-B, B] of its node factor
/// plus all interpolated incoming messages.
pub fn estimate_pw(
    program: &Program,
    messages: &[PiecewiseMessage],
    vertex: usize,
    grid: &Grid,
) -> f64 {
    let obj = LocalObjective {
        node: program.node(vertex),
        edge: None,
        incoming: incoming(program, messages, vertex, None),
        grid,
    };
    minimize_on_interval(&obj, grid.lo(), grid.hi())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseState {
    pub messages: Vec<PiecewiseMessage>,
    pub estimate: Vec<f64>,
    pub iteration: usize,
}

/// Initial messages: the origin expansion of each factor (the same starting
/// point as the quadratic engine) sampled on the grid.
pub fn init_messages_pw(program: &Program, grid: &Grid) -> Result<PiecewiseState> {
    require_pairwise(program)?;
    let mut messages = Vec::with_capacity(program.num_directed_edges());
    for d in 0..program.num_directed_edges() {
        let (_, _, e, sender_is_i) = program.directed_edge(d);
        let q = initial_message(&program.edges()[e].term, sender_is_i);
        let values = grid
            .points()
            .iter()
            .map(|&x| 0.5 * q.a * x * x + q.b * x)
            .collect();
        messages.push(PiecewiseMessage::normalized(values));
    }
    let estimate = (0..program.n())
        .map(|i| estimate_pw(program, &messages, i, grid))
        .collect();
    Ok(PiecewiseState { messages, estimate, iteration: 0 })
}

fn message_delta_pw(old: &[PiecewiseMessage], new: &[PiecewiseMessage]) -> f64 {
    let mut d = 0.0f64;
    for (o, n) in old.iter().zip(new) {
        for (a, b) in o.values.iter().zip(&n.values) {
            d = d.max((a - b).abs());
        }
    }
    d
}

/// One synchronous sweep over the directed edges in `active`, double-
/// buffered, followed by an estimate refresh.
pub fn sweep_pw(
    program: &Program,
    state: &PiecewiseState,
    grid: &Grid,
    active: &[usize],
) -> PiecewiseState {
    let mut messages = state.messages.clone();
    for &d in active {
        messages[d] = update_message_pw(program, d, &state.messages, grid);
    }
    let estimate = (0..program.n())
        .map(|i| estimate_pw(program, &messages, i, grid))
        .collect();
    PiecewiseState { messages, estimate, iteration: state.iteration + 1 }
}

pub fn run_pw_from(
    program: &Program,
    grid: &Grid,
    state: PiecewiseState,
    options: &RunOptions,
) -> Result<(Trace, PiecewiseState)> {
    let all: Vec<usize> = (0..program.num_directed_edges()).collect();
    let mut trace = Trace::new();
    trace.grid_m = Some(grid.m());
    let mut row = TraceRow::new(state.iteration, f64::NAN, state.estimate.clone());
    row.bound_value = options.bound.map(|b| b.value(state.iteration));
    trace.push(row);
    let mut current = state;
    for _ in 0..options.horizon {
        let next = sweep_pw(program, &current, grid, &all);
        let delta = message_delta_pw(&current.messages, &next.messages);
        let mut row = TraceRow::new(next.iteration, delta, next.estimate.clone());
        row.bound_value = options.bound.map(|b| b.value(next.iteration));
        trace.push(row);
        current = next;
        if delta <= options.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((trace, current))
}

/// Full synchronous run on a fresh uniform grid of `m` points over the
/// program's box.
pub fn run_pw(
    program: &Program,
    m: usize,
    options: &RunOptions,
) -> Result<(Trace, PiecewiseState)> {
    require_pairwise(program)?;
    let grid = Grid::uniform(require_box(program)?, m)?;
    let state = init_messages_pw(program, &grid)?;
    run_pw_from(program, &grid, state, options)
}

/// Serialize messages for inspection: `m` little-endian doubles per
/// directed edge, edges ordered lexicographically by (from, to).
pub fn dump_messages(program: &Program, messages: &[PiecewiseMessage]) -> Vec<u8> {
    let mut order: Vec<usize> = (0..program.num_directed_edges()).collect();
    order.sort_by_key(|&d| {
        let (from, to, _, _) = program.directed_edge(d);
        (from, to)
    });
    let mut out = Vec::new();
    for d in order {
        for v in &messages[d].values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// What a vertex publishes under an asynchronous schedule: its outgoing
/// messages (adjacency order) and its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PwVertexPayload {
    pub outgoing: Vec<PiecewiseMessage>,
    pub estimate: f64,
}

/// Vertex-at-a-time piecewise engine for asynchronous schedules.
pub struct AsyncPiecewise<'a> {
    program: &'a Program,
    grid: Grid,
    // incoming_slot[v][k]: position of v in the adjacency of its k-th neighbor.
    incoming_slot: Vec<Vec<usize>>,
}

impl<'a> AsyncPiecewise<'a> {
    pub fn new(program: &'a Program, m: usize) -> Result<Self> {
        require_pairwise(program)?;
        let grid = Grid::uniform(require_box(program)?, m)?;
        let incoming_slot = (0..program.n())
            .map(|v| {
                program
                    .adjacency(v)
                    .iter()
                    .map(|&(u, _)| {
                        program
                            .adjacency(u)
                            .iter()
                            .position(|&(w, _)| w == v)
                            .expect("adjacency is symmetric")
                    })
                    .collect()
            })
            .collect();
        Ok(AsyncPiecewise { program, grid, incoming_slot })
    }

    /// Messages into `vertex` assembled from peer payloads, adjacency order.
    fn gather_incoming(
        &self,
        vertex: usize,
        read: &mut dyn FnMut(usize) -> PwVertexPayload,
    ) -> Vec<PiecewiseMessage> {
        self.program
            .adjacency(vertex)
            .iter()
            .enumerate()
            .map(|(k, &(u, _))| {
                let peer = read(u);
                peer.outgoing[self.incoming_slot[vertex][k]].clone()
            })
            .collect()
    }
}

impl AsyncEngine for AsyncPiecewise<'_> {
    type Payload = PwVertexPayload;

    fn initial(&self, vertex: usize) -> Result<PwVertexPayload> {
        let adj = self.program.adjacency(vertex);
        let mut outgoing = Vec::with_capacity(adj.len());
        let mut inc = Vec::with_capacity(adj.len());
        for &(u, e) in adj {
            let out_q = initial_message(
                &self.program.edges()[e].term,
                self.program.edges()[e].i == vertex,
            );
            outgoing.push(PiecewiseMessage::normalized(
                self.grid
                    .points()
                    .iter()
                    .map(|&x| 0.5 * out_q.a * x * x + out_q.b * x)
                    .collect(),
            ));
            let in_q = initial_message(&self.program.edges()[e].term, self.program.edges()[e].i == u);
            inc.push(PiecewiseMessage::normalized(
                self.grid
                    .points()
                    .iter()
                    .map(|&x| 0.5 * in_q.a * x * x + in_q.b * x)
                    .collect(),
            ));
        }
        let obj = LocalObjective {
            node: self.program.node(vertex),
            edge: None,
            incoming: inc.iter().collect(),
            grid: &self.grid,
        };
        let estimate = minimize_on_interval(&obj, self.grid.lo(), self.grid.hi());
        Ok(PwVertexPayload { outgoing, estimate })
    }

    fn update(
        &self,
        vertex: usize,
        _own: &PwVertexPayload,
        read: &mut dyn FnMut(usize) -> PwVertexPayload,
    ) -> Result<PwVertexPayload> {
        let adj = self.program.adjacency(vertex);
        let inc = self.gather_incoming(vertex, read);
        let mut outgoing = Vec::with_capacity(adj.len());
        for (k, &(_, e)) in adj.iter().enumerate() {
            let others: Vec<&PiecewiseMessage> =
                inc.iter().enumerate().filter(|(k2, _)| *k2 != k).map(|(_, m)| m).collect();
            let sender_is_i = self.program.edges()[e].i == vertex;
            let term = &self.program.edges()[e].term;
            let mut values = Vec::with_capacity(self.grid.m());
            for &xk in self.grid.points() {
                let obj = LocalObjective {
                    node: self.program.node(vertex),
                    edge: Some((term, sender_is_i, xk)),
                    incoming: others.clone(),
                    grid: &self.grid,
                };
                let y = minimize_on_interval(&obj, self.grid.lo(), self.grid.hi());
                values.push(obj.value(y));
            }
            outgoing.push(PiecewiseMessage::normalized(values));
        }
        let obj = LocalObjective {
            node: self.program.node(vertex),
            edge: None,
            incoming: inc.iter().collect(),
            grid: &self.grid,
        };
        let estimate = minimize_on_interval(&obj, self.grid.lo(), self.grid.hi());
        Ok(PwVertexPayload { outgoing, estimate })
    }

    fn estimate_component(&self, _vertex: usize, payload: &PwVertexPayload) -> f64 {
        payload.estimate
    }

    fn delta(&self, old: &PwVertexPayload, new: &PwVertexPayload) -> f64 {
        let mut d = (old.estimate - new.estimate).abs();
        for (o, n) in old.outgoing.iter().zip(&new.outgoing) {
            for (a, b) in o.values.iter().zip(&n.values) {
                d = d.max((a - b).abs());
            }
        }
        d
    }
}

/// Run under a schedule: synchronous schedules dispatch to the native sweep
/// (bit-identical by construction), anything else goes through the mailbox
/// driver.
pub fn run_scheduled(
    program: &Program,
    schedule: &Schedule,
    m: usize,
    options: &RunOptions,
) -> Result<Trace> {
    schedule.validate(program.n())?;
    if schedule.is_synchronous(program.n()) {
        let opts = RunOptions { horizon: schedule.horizon(), ..options.clone() };
        let (trace, _) = run_pw(program, m, &opts)?;
        return Ok(trace);
    }
    let engine = AsyncPiecewise::new(program, m)?;
    let mut trace = run_async(&engine, program.n(), schedule, options)?;
    trace.grid_m = Some(m);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::{Edge, NodeTerm};

    /// Brute-force chord envelope: max over every chord line.
    fn chord_env_oracle(msg: &PiecewiseMessage, grid: &Grid, x: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for k in 0..grid.m() - 1 {
            let (p0, p1) = (grid.points()[k], grid.points()[k + 1]);
            let (v0, v1) = (msg.values[k], msg.values[k + 1]);
            best = best.max(v0 + (x - p0) * (v1 - v0) / (p1 - p0));
        }
        best
    }

    fn chord_convex(msg: &PiecewiseMessage, grid: &Grid, tol: f64) -> bool {
        let slopes: Vec<f64> = (0..grid.m() - 1)
            .map(|k| {
                (msg.values[k + 1] - msg.values[k])
                    / (grid.points()[k + 1] - grid.points()[k])
            })
            .collect();
        slopes.windows(2).all(|w| w[1] >= w[0] - tol)
    }

    fn max_err(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Pairwise mixed-factor path for invariance tests.
    fn mixed_chain() -> Program {
        Program::new(
            4,
            vec![
                (0, instances::tilted_quadratic(0.7)),
                (1, NodeTerm::LogCosh { a: 0.8, b: 1.2, shift: 0.1 }),
                (2, NodeTerm::Quadratic { q: 1.3, l: -0.4, c0: 0.0 }),
                (3, NodeTerm::EvenQuartic { c: 0.9, shift: -0.2 }),
            ],
            vec![
                Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.6 } },
                Edge { i: 1, j: 2, term: EdgeTerm::LogCoshCoupling { a: 0.7, b: 1.1 } },
                Edge { i: 2, j: 3, term: EdgeTerm::QuarticCoupling { c: 0.4 } },
            ],
            vec![],
            Some(2.0),
        )
        .unwrap()
    }

    #[test]
    fn grid_is_uniform_with_exact_endpoints() {
        let g = Grid::uniform(2.0, 401).unwrap();
        assert_eq!(g.m(), 401);
        assert_eq!(g.lo(), -2.0);
        assert_eq!(g.hi(), 2.0);
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(Grid::uniform(2.0, 1), Err(Error::InvalidProgram(_))));
        assert!(matches!(Grid::uniform(0.0, 10), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn interpolation_matches_the_frozen_vee() {
        let g = Grid::uniform(1.0, 3).unwrap();
        let msg = PiecewiseMessage { values: vec![1.0, 0.0, 1.0] };
        assert_eq!(interpolate(&msg, &g, 0.5), 0.5);
        assert_eq!(interpolate(&msg, &g, 2.0), 2.0);
        assert_eq!(interpolate(&msg, &g, -2.0), 2.0);
        for (k, &p) in g.points().iter().enumerate() {
            assert_eq!(interpolate(&msg, &g, p), msg.values[k]);
        }
    }

    #[test]
    fn fast_interpolation_equals_the_chord_envelope() {
        let g = Grid::uniform(1.5, 9).unwrap();
        let convex_sets = [
            vec![4.0, 2.0, 1.0, 0.5, 0.4, 0.5, 1.0, 2.0, 4.0],
            vec![3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.5, 1.5, 3.0],
            vec![8.0, 6.0, 4.0, 2.0, 0.0, 0.1, 0.4, 0.9, 1.6],
        ];
        for values in convex_sets {
            let msg = PiecewiseMessage { values };
            assert!(chord_convex(&msg, &g, 0.0));
            let mut x = -3.0;
            while x <= 3.0 {
                let fast = interpolate(&msg, &g, x);
                let brute = chord_env_oracle(&msg, &g, x);
                assert!((fast - brute).abs() < 1e-12, "x={x}: {fast} vs {brute}");
                x += 0.013;
            }
        }
    }

    #[test]
    fn update_reproduces_the_closed_form_parabola() {
        let p = Program::new(
            2,
            vec![
                (0, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
                (1, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            ],
            vec![Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 1.0 } }],
            vec![],
            Some(1.0),
        )
        .unwrap();
        let g = Grid::uniform(1.0, 3).unwrap();
        let state = init_messages_pw(&p, &g).unwrap();
        let msg = update_message_pw(&p, 0, &state.messages, &g);
        let expected = [0.25, 0.0, 0.25];
        for (v, e) in msg.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12, "{:?}", msg.values);
        }
    }

    #[test]
    fn zero_coupling_yields_the_zero_message() {
        let p = Program::new(
            2,
            vec![
                (0, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
                (1, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            ],
            vec![Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.0 } }],
            vec![],
            Some(1.0),
        )
        .unwrap();
        let g = Grid::uniform(1.0, 5).unwrap();
        let state = init_messages_pw(&p, &g).unwrap();
        let msg = update_message_pw(&p, 0, &state.messages, &g);
        assert!(msg.values.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn estimates_are_clamped_to_the_box() {
        let near = Program::new(
            1,
            vec![(0, instances::tilted_quadratic(0.3))],
            vec![],
            vec![],
            Some(1.0),
        )
        .unwrap();
        let g = Grid::uniform(1.0, 11).unwrap();
        let state = init_messages_pw(&near, &g).unwrap();
        assert!((estimate_pw(&near, &state.messages, 0, &g) - 0.3).abs() < 1e-9);

        let far = Program::new(
            1,
            vec![(0, instances::tilted_quadratic(5.0))],
            vec![],
            vec![],
            Some(1.0),
        )
        .unwrap();
        let state = init_messages_pw(&far, &g).unwrap();
        assert_eq!(estimate_pw(&far, &state.messages, 0, &g), 1.0);
    }

    #[test]
    fn chain3_converges_to_grid_accuracy() {
        let p = instances::chain3();
        let opts = RunOptions { horizon: 300, tol: 1e-9, bound: None };
        let (trace, _) = run_pw(&p, 401, &opts).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.grid_m, Some(401));
        let spacing = 0.01f64;
        let tol = 2.0 * spacing * spacing + 1e-6;
        assert!(
            max_err(trace.final_estimate(), &[0.8, 0.0, -0.8]) < tol,
            "{:?}",
            trace.final_estimate()
        );
        let csv = trace.to_csv();
        assert!(csv.lines().next().unwrap().contains("grid_m"));
        assert!(csv.lines().nth(1).unwrap().ends_with(",401"));
    }

    #[test]
    fn quartic_chain_tracks_the_newton_oracle_under_refinement() {
        let p = instances::quartic_chain();
        let s = instances::quartic_chain_root();
        let oracle = [s, 0.0, -s];
        let opts = RunOptions { horizon: 60, tol: 1e-10, bound: None };
        let (coarse, _) = run_pw(&p, 801, &opts).unwrap();
        let err_coarse = max_err(coarse.final_estimate(), &oracle);
        assert!(err_coarse < 1e-3, "{err_coarse}");
        // A single doubling is not reliably monotone: when the root falls
        // inside the capture basin of a new grid point, the estimate snaps
        // to that kink and the error is the kink distance, which can exceed
        // the coarse grid's interior error by a factor of up to f''/J''.
        // Over a 16x refinement the quadratic trend dominates the snapping.
        let (fine, _) = run_pw(&p, 12801, &opts).unwrap();
        let err_fine = max_err(fine.final_estimate(), &oracle);
        assert!(err_fine < 0.5 * err_coarse, "{err_fine} vs {err_coarse}");
    }

    #[test]
    fn doubling_the_grid_never_hurts_when_the_root_sits_on_both_grids() {
        // All of CHAIN3's minimizer coordinates are grid points at every
        // uniform m here, so refinement cannot move the captured kink and
        // the error must not grow.
        let p = instances::chain3();
        let opts = RunOptions { horizon: 300, tol: 1e-9, bound: None };
        let oracle = [0.8, 0.0, -0.8];
        let mut last = f64::INFINITY;
        for m in [201usize, 401, 801] {
            let (trace, _) = run_pw(&p, m, &opts).unwrap();
            let err = max_err(trace.final_estimate(), &oracle);
            assert!(err <= last + 1e-12, "m={m}: {err} vs {last}");
            last = err;
        }
    }

    #[test]
    fn logcosh_estimates_match_the_computation_tree() {
        let p = instances::logcosh_chain();
        let opts = RunOptions { horizon: 3, tol: 0.0, bound: None };
        let (trace, _) = run_pw(&p, 401, &opts).unwrap();
        let spacing = Grid::uniform(2.0, 401).unwrap().spacing();
        let tol = 2.0 * spacing * spacing + 1e-6;
        for r in 0..3 {
            let tree = crate::analysis::build_tree(&p, r, 3).unwrap();
            let x = crate::analysis::solve_tree(&tree, &p).unwrap();
            let engine = trace.estimate_at(3).unwrap()[r];
            assert!((x[0] - engine).abs() < tol, "root {r}: {} vs {engine}", x[0]);
        }
    }

    #[test]
    fn messages_stay_chord_convex_and_normalized() {
        let p = mixed_chain();
        let g = Grid::uniform(2.0, 101).unwrap();
        let mut state = init_messages_pw(&p, &g).unwrap();
        let all: Vec<usize> = (0..p.num_directed_edges()).collect();
        for _ in 0..4 {
            for msg in &state.messages {
                assert!(chord_convex(msg, &g, 1e-9));
                let min = msg.values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
                assert_eq!(min, 0.0);
            }
            state = sweep_pw(&p, &state, &g, &all);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let p = mixed_chain();
        let opts = RunOptions { horizon: 6, tol: 0.0, bound: None };
        let (t1, s1) = run_pw(&p, 101, &opts).unwrap();
        let (t2, s2) = run_pw(&p, 101, &opts).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1.to_csv(), t2.to_csv());
    }

    #[test]
    fn dump_orders_edges_lexicographically() {
        // Edges declared out of order: dump must sort by (from, to).
        let p = Program::new(
            3,
            vec![
                (0, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
                (1, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
                (2, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            ],
            vec![
                Edge { i: 1, j: 2, term: EdgeTerm::QuadraticCoupling { c: 0.5 } },
                Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.25 } },
            ],
            vec![],
            Some(1.0),
        )
        .unwrap();
        let g = Grid::uniform(1.0, 5).unwrap();
        let state = init_messages_pw(&p, &g).unwrap();
        let bytes = dump_messages(&p, &state.messages);
        assert_eq!(bytes.len(), 4 * 5 * 8);
        // First block is the (0 -> 1) message, which is directed id 2.
        let first: Vec<f64> = bytes[..40]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(first, state.messages[2].values);
    }

    #[test]
    fn synchronous_schedule_dispatches_to_the_native_sweep() {
        let p = instances::chain3();
        let sched = Schedule::synchronous(3, 12);
        let opts = RunOptions { horizon: 12, tol: 0.0, bound: None };
        let via_schedule = run_scheduled(&p, &sched, 101, &opts).unwrap();
        let (native, _) = run_pw(&p, 101, &opts).unwrap();
        assert_eq!(via_schedule.to_csv(), native.to_csv());
    }

    #[test]
    fn async_schedules_reach_the_same_fixed_point() {
        let p = instances::chain3();
        let spacing = Grid::uniform(2.0, 101).unwrap().spacing();
        let tol = 2.0 * spacing * spacing + 1e-6;
        for seed in [3u64, 11] {
            let sched = Schedule::random_total_async(3, 260, seed, 4, 3).unwrap();
            let opts = RunOptions { horizon: 260, tol: 1e-10, bound: None };
            let trace = run_scheduled(&p, &sched, 101, &opts).unwrap();
            assert_eq!(trace.grid_m, Some(101));
            assert!(
                max_err(trace.final_estimate(), &[0.8, 0.0, -0.8]) < tol,
                "seed {seed}: {:?}",
                trace.final_estimate()
            );
        }
    }

    #[test]
    fn engine_rejects_unsupported_programs() {
        assert!(matches!(
            run_pw(&instances::hyper_two_factors(), 101, &RunOptions::default()),
            Err(Error::Unsupported(_))
        ));
        // No box radius on the program: the grid cannot be built.
        let p = Program::new(
            2,
            vec![
                (0, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
                (1, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            ],
            vec![Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.5 } }],
            vec![],
            None,
        )
        .unwrap();
        assert!(matches!(
            run_pw(&p, 101, &RunOptions::default()),
            Err(Error::InvalidProgram(_))
        ));
        assert!(matches!(run_pw(&instances::chain3(), 1, &RunOptions::default()), Err(_)));
    }
}
