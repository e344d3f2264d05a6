//! Quadratic-message min-sum engine.
//!
//! Messages are quadratics `J(x) = a/2 x^2 + b x` with the constant offset
//! dropped; only relative values of a message matter, so the pair `(a, b)` is
//! a complete representation. For all-quadratic programs one sweep equals
//! one exact min-sum iteration. For other catalog factors the engine runs a
//! Newton hybrid: each sweep re-expands every factor to second order at the
//! running estimate, so the message update stays in closed form.

use serde::{Deserialize, Serialize};

use crate::model::{EdgeTerm, Program};
use crate::schedule::{self, AsyncEngine, Schedule};
use crate::trace::{RunOptions, Trace, TraceRow};
use crate::{Error, Result};

/// `J(x) = a/2 x^2 + b x`, `a >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMessage {
    pub a: f64,
    pub b: f64,
}

impl QuadraticMessage {
    pub const ZERO: QuadraticMessage = QuadraticMessage { a: 0.0, b: 0.0 };

    /// dJ/dx at `x`.
    pub fn slope_at(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// Second-order model of a pairwise factor at an expansion point, in the
/// coordinates of the edge's stored endpoints `(i, j)`:
/// `1/2 (q_ii xi^2 + 2 q_ij xi xj + q_jj xj^2) + lin_i xi + lin_j xj`.
///
/// Exactly quadratic factors are extracted symbolically, so the expansion
/// point is irrelevant for them to the last bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeModel {
    pub q_ii: f64,
    pub q_ij: f64,
    pub q_jj: f64,
    pub lin_i: f64,
    pub lin_j: f64,
}

impl EdgeModel {
    pub fn at(term: &EdgeTerm, ui: f64, uj: f64) -> EdgeModel {
        match term {
            EdgeTerm::QuadraticCoupling { c } => {
                EdgeModel { q_ii: *c, q_ij: -c, q_jj: *c, lin_i: 0.0, lin_j: 0.0 }
            }
            EdgeTerm::QuadraticForm { q_ii, q_ij, q_jj } => {
                EdgeModel { q_ii: *q_ii, q_ij: *q_ij, q_jj: *q_jj, lin_i: 0.0, lin_j: 0.0 }
            }
            _ => {
                let (gi, gj) = term.grad(ui, uj);
                let (h_ii, h_ij, h_jj) = term.hess(ui, uj);
                EdgeModel {
                    q_ii: h_ii,
                    q_ij: h_ij,
                    q_jj: h_jj,
                    lin_i: gi - h_ii * ui - h_ij * uj,
                    lin_j: gj - h_jj * uj - h_ij * ui,
                }
            }
        }
    }

    /// The same model with roles assigned: `send` is the minimized-out
    /// variable, `recv` the message argument.
    pub fn oriented(&self, sender_is_i: bool) -> OrientedModel {
        if sender_is_i {
            OrientedModel {
                q_send: self.q_ii,
                q_recv: self.q_jj,
                q_cross: self.q_ij,
                lin_send: self.lin_i,
                lin_recv: self.lin_j,
            }
        } else {
            OrientedModel {
                q_send: self.q_jj,
                q_recv: self.q_ii,
                q_cross: self.q_ij,
                lin_send: self.lin_j,
                lin_recv: self.lin_i,
            }
        }
    }
}

/// [`EdgeModel`] viewed from one direction of the edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedModel {
    pub q_send: f64,
    pub q_recv: f64,
    pub q_cross: f64,
    pub lin_send: f64,
    pub lin_recv: f64,
}

/// Minimize the sender variable out of
/// `node + edge model + incoming messages` and return the resulting
/// quadratic in the receiver variable.
///
/// `node_q`/`node_l` is the sender's local quadratic model, `sum_a`/`sum_b`
/// the summed coefficients of messages into the sender from everyone but the
/// receiver. Errors when the total sender curvature is not positive.
pub fn update_message(
    node_q: f64,
    node_l: f64,
    model: &OrientedModel,
    sum_a: f64,
    sum_b: f64,
) -> Result<QuadraticMessage> {
    let s = node_q + model.q_send + sum_a;
    if s <= 0.0 {
        return Err(Error::DegenerateCurvature(format!(
            "sender curvature {s} is not positive"
        )));
    }
    let l = node_l + model.lin_send + sum_b;
    // PSD model plus s > 0 gives a' >= 0; the clamp only absorbs roundoff.
    let a = (model.q_recv - model.q_cross * model.q_cross / s).max(0.0);
    let b = model.lin_recv - model.q_cross * l / s;
    Ok(QuadraticMessage { a, b })
}

/// Initial message for one direction of an edge: the quadratic part of the
/// factor with the sender pinned to 0 (second-order expansion at the origin
/// for non-quadratic factors).
pub fn initial_message(term: &EdgeTerm, sender_is_i: bool) -> QuadraticMessage {
    let m = EdgeModel::at(term, 0.0, 0.0).oriented(sender_is_i);
    QuadraticMessage { a: m.q_recv.max(0.0), b: m.lin_recv }
}

/// Engine state after `iteration` sweeps: one message per directed edge
/// (indexed by [`Program::directed_edge`] ids) plus the running estimate,
/// which doubles as the expansion point for the next sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticState {
    pub messages: Vec<QuadraticMessage>,
    pub estimate: Vec<f64>,
    pub iteration: usize,
}

fn require_pairwise(program: &Program) -> Result<()> {
    if program.hypers().is_empty() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "program has hyper factors; use the hyper engine".into(),
        ))
    }
}

/// Initial state: origin-expanded messages and the estimate they induce.
/// The expansion anchor starts at 0 for every variable.
pub fn init_messages(program: &Program) -> Result<QuadraticState> {
    require_pairwise(program)?;
    let mut messages = Vec::with_capacity(program.num_directed_edges());
    for d in 0..program.num_directed_edges() {
        let (_, _, e, sender_is_i) = program.directed_edge(d);
        messages.push(initial_message(&program.edges()[e].term, sender_is_i));
    }
    let zeros = vec![0.0; program.n()];
    let estimate = estimate(program, &messages, &zeros)?;
    Ok(QuadraticState { messages, estimate, iteration: 0 })
}

/// Initial state with a linear tilt added to each initial message
/// (`tilts` indexed by directed edge id).
pub fn init_messages_tilted(program: &Program, tilts: &[f64]) -> Result<QuadraticState> {
    require_pairwise(program)?;
    if tilts.len() != program.num_directed_edges() {
        return Err(Error::Dimension {
            expected: program.num_directed_edges(),
            got: tilts.len(),
        });
    }
    let mut messages = Vec::with_capacity(program.num_directed_edges());
    for d in 0..program.num_directed_edges() {
        let (_, _, e, sender_is_i) = program.directed_edge(d);
        let mut m = initial_message(&program.edges()[e].term, sender_is_i);
        m.b += tilts[d];
        messages.push(m);
    }
    let zeros = vec![0.0; program.n()];
    let estimate = estimate(program, &messages, &zeros)?;
    Ok(QuadraticState { messages, estimate, iteration: 0 })
}

/// Per-variable argmin of the local model: node factor expanded at
/// `anchor[i]` plus all incoming messages. Errors on nonpositive local
/// curvature.
pub fn estimate(
    program: &Program,
    messages: &[QuadraticMessage],
    anchor: &[f64],
) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(program.n());
    for i in 0..program.n() {
        let (q, l) = program.node(i).quadratic_model(anchor[i]);
        let mut denom = q;
        let mut num = l;
        for &(j, e) in program.adjacency(i) {
            let m = &messages[program.directed_id(e, j)];
            denom += m.a;
            num += m.b;
        }
        if denom <= 0.0 {
            return Err(Error::DegenerateCurvature(format!(
                "variable {i} has local curvature {denom}"
            )));
        }
        x.push(-num / denom);
    }
    Ok(x)
}

/// One double-buffered iteration over `active` directed edges: every update
/// reads the previous state's messages and expansion anchors, then the
/// estimate is recomputed from the new message buffer. Inactive edges keep
/// their messages.
pub fn sweep(program: &Program, state: &QuadraticState, active: &[usize]) -> Result<QuadraticState> {
    let anchors = &state.estimate;
    let mut messages = state.messages.clone();
    for &d in active {
        let (from, to, e, sender_is_i) = program.directed_edge(d);
        let edge = &program.edges()[e];
        let model = EdgeModel::at(&edge.term, anchors[edge.i], anchors[edge.j]).oriented(sender_is_i);
        let (node_q, node_l) = program.node(from).quadratic_model(anchors[from]);
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for &(u, e2) in program.adjacency(from) {
            if u != to {
                let m = &state.messages[program.directed_id(e2, u)];
                sum_a += m.a;
                sum_b += m.b;
            }
        }
        messages[d] = update_message(node_q, node_l, &model, sum_a, sum_b)?;
    }
    let estimate = estimate(program, &messages, anchors)?;
    Ok(QuadraticState { messages, estimate, iteration: state.iteration + 1 })
}

fn message_delta(old: &[QuadraticMessage], new: &[QuadraticMessage]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| (o.a - n.a).abs().max((o.b - n.b).abs()))
        .fold(0.0, f64::max)
}

/// Run synchronous sweeps from `state` until the message change reaches
/// `options.tol` or `options.horizon` iterations elapse.
pub fn run_from(
    program: &Program,
    state: QuadraticState,
    options: &RunOptions,
) -> Result<(Trace, QuadraticState)> {
    let all: Vec<usize> = (0..program.num_directed_edges()).collect();
    let mut trace = Trace::new();
    let mut row = TraceRow::new(state.iteration, f64::NAN, state.estimate.clone());
    row.bound_value = options.bound.map(|b| b.value(state.iteration));
    trace.push(row);
    let mut current = state;
    for _ in 0..options.horizon {
        let next = sweep(program, &current, &all)?;
        let delta = message_delta(&current.messages, &next.messages);
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

/// [`run_from`] starting at the origin-expanded initial state.
pub fn run(program: &Program, options: &RunOptions) -> Result<(Trace, QuadraticState)> {
    run_from(program, init_messages(program)?, options)
}

/// Everything one vertex publishes to its peers: outgoing messages in the
/// vertex's adjacency order plus its running estimate (the expansion anchor
/// peers use when re-expanding shared factors).
#[derive(Debug, Clone, PartialEq)]
pub struct VertexPayload {
    pub outgoing: Vec<QuadraticMessage>,
    pub estimate: f64,
}

/// Vertex-at-a-time view of the engine for asynchronous schedules. A vertex
/// update recomputes all outgoing messages and the local estimate from
/// lagged peer payloads; the fixed points coincide with the synchronous
/// engine's.
pub struct AsyncQuadratic<'a> {
    program: &'a Program,
    /// `incoming_slot[v][k]`: position of `v` in the adjacency list of its
    /// `k`-th neighbor, i.e. where that neighbor keeps its message to `v`.
    incoming_slot: Vec<Vec<usize>>,
}

impl<'a> AsyncQuadratic<'a> {
    pub fn new(program: &'a Program) -> Result<Self> {
        require_pairwise(program)?;
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
        Ok(AsyncQuadratic { program, incoming_slot })
    }

    fn local_estimate(
        &self,
        vertex: usize,
        anchor: f64,
        incoming: &[QuadraticMessage],
    ) -> Result<f64> {
        let (q, l) = self.program.node(vertex).quadratic_model(anchor);
        let denom = q + incoming.iter().map(|m| m.a).sum::<f64>();
        let num = l + incoming.iter().map(|m| m.b).sum::<f64>();
        if denom <= 0.0 {
            return Err(Error::DegenerateCurvature(format!(
                "variable {vertex} has local curvature {denom}"
            )));
        }
        Ok(-num / denom)
    }
}

impl AsyncEngine for AsyncQuadratic<'_> {
    type Payload = VertexPayload;

    fn initial(&self, vertex: usize) -> Result<VertexPayload> {
        let program = self.program;
        let outgoing: Vec<QuadraticMessage> = program
            .adjacency(vertex)
            .iter()
            .map(|&(_, e)| initial_message(&program.edges()[e].term, program.edges()[e].i == vertex))
            .collect();
        let incoming: Vec<QuadraticMessage> = program
            .adjacency(vertex)
            .iter()
            .map(|&(u, e)| initial_message(&program.edges()[e].term, program.edges()[e].i == u))
            .collect();
        let estimate = self.local_estimate(vertex, 0.0, &incoming)?;
        Ok(VertexPayload { outgoing, estimate })
    }

    fn update(
        &self,
        vertex: usize,
        own: &VertexPayload,
        read: &mut dyn FnMut(usize) -> VertexPayload,
    ) -> Result<VertexPayload> {
        let program = self.program;
        let adj = program.adjacency(vertex);
        let peers: Vec<VertexPayload> = adj.iter().map(|&(u, _)| read(u)).collect();
        let incoming: Vec<QuadraticMessage> = peers
            .iter()
            .enumerate()
            .map(|(k, p)| p.outgoing[self.incoming_slot[vertex][k]])
            .collect();
        let anchor = own.estimate;
        let (node_q, node_l) = program.node(vertex).quadratic_model(anchor);
        let mut outgoing = Vec::with_capacity(adj.len());
        for (k, &(_, e)) in adj.iter().enumerate() {
            let edge = &program.edges()[e];
            let sender_is_i = edge.i == vertex;
            let (ui, uj) = if sender_is_i {
                (anchor, peers[k].estimate)
            } else {
                (peers[k].estimate, anchor)
            };
            let model = EdgeModel::at(&edge.term, ui, uj).oriented(sender_is_i);
            let mut sum_a = 0.0;
            let mut sum_b = 0.0;
            for (k2, m) in incoming.iter().enumerate() {
                if k2 != k {
                    sum_a += m.a;
                    sum_b += m.b;
                }
            }
            outgoing.push(update_message(node_q, node_l, &model, sum_a, sum_b)?);
        }
        let estimate = self.local_estimate(vertex, anchor, &incoming)?;
        Ok(VertexPayload { outgoing, estimate })
    }

    fn estimate_component(&self, _vertex: usize, payload: &VertexPayload) -> f64 {
        payload.estimate
    }

    fn delta(&self, old: &VertexPayload, new: &VertexPayload) -> f64 {
        let msg = message_delta(&old.outgoing, &new.outgoing);
        msg.max((old.estimate - new.estimate).abs())
    }
}

/// Run under a schedule: synchronous schedules take the native sweep path,
/// anything else goes through the mailbox driver.
pub fn run_scheduled(
    program: &Program,
    schedule: &Schedule,
    options: &RunOptions,
) -> Result<Trace> {
    schedule.validate(program.n())?;
    if schedule.is_synchronous(program.n()) {
        let opts = RunOptions { horizon: schedule.horizon(), ..options.clone() };
        run(program, &opts).map(|(trace, _)| trace)
    } else {
        let engine = AsyncQuadratic::new(program)?;
        schedule::run_async(&engine, program.n(), schedule, options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::{Edge, NodeTerm};

    fn chain3_star() -> [f64; 3] {
        [0.8, 0.0, -0.8]
    }

    #[test]
    fn initial_messages_match_closed_forms() {
        let p = instances::chain3();
        let s = init_messages(&p).unwrap();
        assert_eq!(s.messages.len(), 4);
        for m in &s.messages {
            assert_eq!((m.a, m.b), (0.25, 0.0));
        }
        let lc = init_messages(&instances::logcosh_chain()).unwrap();
        for m in &lc.messages {
            assert_eq!((m.a, m.b), (1.0, 0.0));
        }
        let qc = init_messages(&instances::quartic_chain()).unwrap();
        for m in &qc.messages {
            assert_eq!((m.a, m.b), (0.0, 0.0));
        }
    }

    #[test]
    fn initial_estimate_solves_local_models() {
        let p = instances::chain3();
        let s = init_messages(&p).unwrap();
        // -l0 / (q0 + c) = 1 / 1.25.
        assert!((s.estimate[0] - 0.8).abs() < 1e-16);
        assert_eq!(s.estimate[1], 0.0);
        assert!((s.estimate[2] + 0.8).abs() < 1e-16);
    }

    #[test]
    fn edgeless_program_estimates_node_minimizers_immediately() {
        let p = Program::new(
            2,
            vec![
                (0, NodeTerm::Quadratic { q: 1.0, l: -3.0, c0: 0.0 }),
                (1, NodeTerm::Quadratic { q: 2.0, l: 1.0, c0: 0.0 }),
            ],
            vec![],
            vec![],
            None,
        )
        .unwrap();
        let s = init_messages(&p).unwrap();
        assert!(s.messages.is_empty());
        assert_eq!(s.estimate, vec![3.0, -0.5]);
    }

    #[test]
    fn update_single_edge_closed_form() {
        // min_y 1/2 y^2 + 1/2 (y - x)^2 = 1/4 x^2.
        let model = EdgeModel::at(&EdgeTerm::QuadraticCoupling { c: 1.0 }, 0.0, 0.0).oriented(true);
        let m = update_message(1.0, 0.0, &model, 0.0, 0.0).unwrap();
        assert_eq!((m.a, m.b), (0.5, 0.0));
    }

    #[test]
    fn update_decoupled_edge_is_uninformative() {
        let model = EdgeModel::at(&EdgeTerm::QuadraticCoupling { c: 0.0 }, 0.0, 0.0).oriented(true);
        let m = update_message(1.0, -2.0, &model, 0.3, 0.7).unwrap();
        assert_eq!((m.a, m.b), (0.0, 0.0));
    }

    #[test]
    fn update_chain3_end_edge_curvature() {
        let model =
            EdgeModel::at(&EdgeTerm::QuadraticCoupling { c: 0.25 }, 0.0, 0.0).oriented(true);
        let m = update_message(1.0, -1.0, &model, 0.0, 0.0).unwrap();
        // 0.25 - 0.0625 / 1.25.
        assert!((m.a - 0.2).abs() < 1e-16);
        // -(-0.25) * (-1) / 1.25.
        assert!((m.b + 0.2).abs() < 1e-16);
    }

    #[test]
    fn update_rejects_nonpositive_sender_curvature() {
        let model = EdgeModel::at(&EdgeTerm::QuarticCoupling { c: 1.0 }, 0.0, 0.0).oriented(true);
        let err = update_message(0.0, 0.0, &model, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateCurvature(_)));
    }

    #[test]
    fn init_rejects_degenerate_local_curvature() {
        // Quartic nodes anchored at their flat point, zero coupling: every
        // local model has zero curvature.
        let p = Program::new(
            2,
            vec![
                (0, NodeTerm::EvenQuartic { c: 1.0, shift: 0.0 }),
                (1, NodeTerm::EvenQuartic { c: 1.0, shift: 0.0 }),
            ],
            vec![Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.0 } }],
            vec![],
            None,
        )
        .unwrap();
        assert!(matches!(
            init_messages(&p),
            Err(Error::DegenerateCurvature(_))
        ));
    }

    #[test]
    fn hyper_programs_are_rejected() {
        let err = init_messages(&instances::hyper_two_factors()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn chain3_converges_to_linear_solve_fixed_point() {
        let p = instances::chain3();
        let (trace, state) = run(&p, &RunOptions::default()).unwrap();
        assert!(trace.converged);
        let star = chain3_star();
        for (x, s) in state.estimate.iter().zip(star) {
            assert!((x - s).abs() < 1e-10, "estimate {x} vs {s}");
        }
        // Gradient vanishes at the fixed point.
        let g = p.gradient(&state.estimate).unwrap();
        assert!(g.iter().all(|gi| gi.abs() < 1e-10));
    }

    #[test]
    fn symmetric_single_edge_stays_at_zero() {
        let p = Program::new(
            2,
            vec![
                (0, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
                (1, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            ],
            vec![Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 1.0 } }],
            vec![],
            None,
        )
        .unwrap();
        let mut state = init_messages(&p).unwrap();
        for _ in 0..10 {
            assert_eq!(state.estimate, vec![0.0, 0.0]);
            state = sweep(&p, &state, &[0, 1]).unwrap();
        }
    }

    #[test]
    fn logcosh_chain_converges_to_origin() {
        let p = instances::logcosh_chain();
        let opts = RunOptions { horizon: 200, tol: 1e-14, bound: None };
        let (_, state) = run(&p, &opts).unwrap();
        for x in &state.estimate {
            assert!(x.abs() < 1e-8, "estimate component {x}");
        }
        let g = p.gradient(&state.estimate).unwrap();
        assert!(g.iter().all(|gi| gi.abs() < 1e-8));
    }

    #[test]
    fn quartic_chain_newton_hybrid_reaches_stationary_point() {
        let p = instances::quartic_chain();
        let opts = RunOptions { horizon: 500, tol: 1e-13, bound: None };
        let (_, state) = run(&p, &opts).unwrap();
        let s = instances::quartic_chain_root();
        for (x, want) in state.estimate.iter().zip([s, 0.0, -s]) {
            assert!((x - want).abs() < 1e-8, "estimate {x} vs {want}");
        }
    }

    #[test]
    fn message_curvature_stays_nonnegative() {
        for p in [
            instances::chain3(),
            instances::logcosh_chain(),
            instances::quartic_chain(),
        ] {
            let opts = RunOptions { horizon: 50, tol: 0.0, bound: None };
            let all: Vec<usize> = (0..p.num_directed_edges()).collect();
            let mut state = init_messages(&p).unwrap();
            for _ in 0..opts.horizon {
                assert!(state.messages.iter().all(|m| m.a >= 0.0));
                state = sweep(&p, &state, &all).unwrap();
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let p = instances::quartic_chain();
        let opts = RunOptions { horizon: 40, tol: 0.0, bound: None };
        let (t1, s1) = run(&p, &opts).unwrap();
        let (t2, s2) = run(&p, &opts).unwrap();
        assert_eq!(s1, s2);
        for (r1, r2) in t1.rows.iter().zip(&t2.rows) {
            for (a, b) in r1.estimate.iter().zip(&r2.estimate) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn partial_sweeps_leave_inactive_messages_untouched() {
        let p = instances::chain3();
        let state = init_messages(&p).unwrap();
        let next = sweep(&p, &state, &[0]).unwrap();
        assert_ne!(next.messages[0], state.messages[0]);
        for d in 1..4 {
            assert_eq!(next.messages[d], state.messages[d]);
        }
    }

    #[test]
    fn synchronous_schedule_takes_the_native_path_exactly() {
        let p = instances::quartic_chain();
        let sched = Schedule::synchronous(p.n(), 30);
        let opts = RunOptions { horizon: 30, tol: 0.0, bound: None };
        let scheduled = run_scheduled(&p, &sched, &opts).unwrap();
        let (native, _) = run(&p, &opts).unwrap();
        assert_eq!(scheduled.rows.len(), native.rows.len());
        for (a, b) in scheduled.rows.iter().zip(&native.rows) {
            for (x, y) in a.estimate.iter().zip(&b.estimate) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn random_async_runs_reach_the_fixed_point() {
        let p = instances::chain3();
        for seed in 0..5 {
            let sched = Schedule::random_total_async(p.n(), 500, seed, 5, 5).unwrap();
            sched.check_witness(p.n(), 5, 5).unwrap();
            let opts = RunOptions { horizon: 500, tol: 1e-14, bound: None };
            let trace = run_scheduled(&p, &sched, &opts).unwrap();
            let finals = trace.final_estimate();
            for (x, s) in finals.iter().zip(chain3_star()) {
                assert!((x - s).abs() < 1e-8, "seed {seed}: {x} vs {s}");
            }
        }
    }

    #[test]
    fn out_of_order_arrivals_still_converge() {
        let p = instances::chain3();
        // Vertex 0 reads vertex 1 with growing lag for a stretch, so the
        // version it consumes decreases from one of its updates to the next.
        let mut lags = String::new();
        for (k, t) in (6..=12).enumerate() {
            lags.push_str(&format!(
                "{}{{\"t\": {t}, \"from\": 1, \"to\": 0, \"lag\": {}}}",
                if k == 0 { "" } else { ", " },
                k,
            ));
        }
        let all: Vec<usize> = (1..=60).collect();
        let times = serde_json::to_string(&all).unwrap();
        let script = format!(
            "{{\"horizon\": 60, \"updates\": [\
               {{\"vertex\": 0, \"times\": {times}}},\
               {{\"vertex\": 1, \"times\": {times}}},\
               {{\"vertex\": 2, \"times\": {times}}}],\
              \"lags\": [{lags}]}}"
        );
        let sched = Schedule::from_script_json(&script).unwrap();
        sched.validate(p.n()).unwrap();
        let opts = RunOptions { horizon: 60, tol: 1e-14, bound: None };
        let trace = run_scheduled(&p, &sched, &opts).unwrap();
        for (x, s) in trace.final_estimate().iter().zip(chain3_star()) {
            assert!((x - s).abs() < 1e-8);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn chain_program(qs: &[f64], ls: &[f64], cs: &[f64]) -> Program {
            let nodes = qs
                .iter()
                .zip(ls)
                .enumerate()
                .map(|(i, (&q, &l))| (i, NodeTerm::Quadratic { q, l, c0: 0.0 }))
                .collect();
            let edges = cs
                .iter()
                .enumerate()
                .map(|(k, &c)| Edge { i: k, j: k + 1, term: EdgeTerm::QuadraticCoupling { c } })
                .collect();
            Program::new(qs.len(), nodes, edges, vec![], None).unwrap()
        }

        proptest! {
            // Trees reach the exact fixed point after diameter-many sweeps,
            // and message curvatures never go negative on the way.
            #[test]
            fn quadratic_chains_hit_stationarity_after_diameter_sweeps(
                qs in proptest::collection::vec(0.5..3.0f64, 2..6),
                seed_ls in proptest::collection::vec(-2.0..2.0f64, 6),
                seed_cs in proptest::collection::vec(0.0..2.0f64, 6),
            ) {
                let n = qs.len();
                let ls = &seed_ls[..n];
                let cs = &seed_cs[..n - 1];
                let p = chain_program(&qs, ls, cs);
                let all: Vec<usize> = (0..p.num_directed_edges()).collect();
                let mut state = init_messages(&p).unwrap();
                for _ in 0..n + 2 {
                    prop_assert!(state.messages.iter().all(|m| m.a >= 0.0));
                    state = sweep(&p, &state, &all).unwrap();
                }
                let g = p.gradient(&state.estimate).unwrap();
                for gi in g {
                    prop_assert!(gi.abs() < 1e-7, "gradient {gi}");
                }
            }
        }
    }
}
