//! Quadratic-message min-sum for factors over any number of variables.
//!
//! The engine works on the bipartite factor graph: pairwise couplings and
//! hyper factors alike become scope factors `f_C(x_C) = 1/2 x_C^T Q x_C`,
//! and messages flow along (variable, factor) incidences in both directions.
//! A sweep runs the two phases in order: every variable-to-factor message is
//! rebuilt from the previous factor-to-variable messages, then every
//! factor-to-variable message is rebuilt from those fresh variable-to-factor
//! messages by minimizing the factor's other variables out exactly (a Schur
//! complement onto the receiving coordinate).
//!
//! Messages stay quadratic only because every factor is, so the engine
//! requires an all-quadratic program. Convergence is not guaranteed in
//! general; a divergence guard flags runaway estimates on the trace instead
//! of erroring.

use nalgebra::{DMatrix, DVector};

use crate::dominance::DominanceCertificate;
use crate::model::Program;
use crate::quadratic::QuadraticMessage;
use crate::schedule::{self, AsyncEngine, Schedule};
use crate::trace::{BoundParams, RunOptions, Trace, TraceRow};
use crate::{Error, Result};

/// Estimates past this magnitude (or non-finite) flag the run as divergent.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// One scope factor: the ordered variables it touches and its symmetric
/// coefficient block.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    scope: Vec<usize>,
    q: DMatrix<f64>,
}

/// Both message families, indexed by channel id (see [`HyperEngine`]).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperMessages {
    /// `var_to_factor[ch]` for channel `ch = (C, i)`: the quadratic summary
    /// variable `i` sends into factor `C`.
    pub var_to_factor: Vec<QuadraticMessage>,
    /// `factor_to_var[ch]`: the quadratic summary factor `C` sends to `i`.
    pub factor_to_var: Vec<QuadraticMessage>,
}

/// Engine state after `iteration` sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub messages: HyperMessages,
    pub estimate: Vec<f64>,
    pub iteration: usize,
}

/// Channel-indexed view of a program's factor graph.
///
/// Factors are the program's edges (in declaration order) followed by its
/// hyper factors. A channel is one (factor, scope position) incidence; ids
/// are dense, grouped by factor. Both message directions share the id.
pub struct HyperEngine<'a> {
    program: &'a Program,
    factors: Vec<Factor>,
    /// Channel id of `(factor, 0)`; factor `f` owns `offsets[f]..offsets[f+1]`.
    offsets: Vec<usize>,
    /// `incident[v]`: channel ids whose variable is `v`, factor-ordered.
    incident: Vec<Vec<usize>>,
    /// Exact `(q, l)` of each node factor.
    node_model: Vec<(f64, f64)>,
}

impl<'a> HyperEngine<'a> {
    pub fn new(program: &'a Program) -> Result<Self> {
        if !program.is_all_quadratic() {
            return Err(Error::Unsupported(
                "hyper engine requires an all-quadratic program".into(),
            ));
        }
        let mut factors = Vec::with_capacity(program.edges().len() + program.hypers().len());
        for edge in program.edges() {
            let (q_ii, q_ij, q_jj) = edge.term.hess(0.0, 0.0);
            factors.push(Factor {
                scope: vec![edge.i, edge.j],
                q: DMatrix::from_row_slice(2, 2, &[q_ii, q_ij, q_ij, q_jj]),
            });
        }
        for hyper in program.hypers() {
            let k = hyper.scope.len();
            factors.push(Factor { scope: hyper.scope.clone(), q: hyper.term.q_matrix(k) });
        }
        let mut offsets = Vec::with_capacity(factors.len() + 1);
        let mut incident = vec![Vec::new(); program.n()];
        let mut next = 0;
        for factor in &factors {
            offsets.push(next);
            for &v in &factor.scope {
                incident[v].push(next);
                next += 1;
            }
        }
        offsets.push(next);
        let node_model = (0..program.n())
            .map(|i| program.node(i).as_exact_quadratic().expect("checked all-quadratic"))
            .collect();
        Ok(HyperEngine { program, factors, offsets, incident, node_model })
    }

    pub fn num_channels(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Scope of factor `f` (edges first, then hyper factors).
    pub fn factor_scope(&self, f: usize) -> &[usize] {
        &self.factors[f].scope
    }

    /// Channel id of scope position `pos` of factor `f`.
    pub fn channel(&self, f: usize, pos: usize) -> usize {
        debug_assert!(pos < self.factors[f].scope.len());
        self.offsets[f] + pos
    }

    /// The factor and scope position a channel id addresses.
    pub fn channel_factor(&self, ch: usize) -> (usize, usize) {
        let f = self.offsets.partition_point(|&o| o <= ch) - 1;
        (f, ch - self.offsets[f])
    }

    /// The variable a channel id addresses.
    pub fn channel_var(&self, ch: usize) -> usize {
        let (f, pos) = self.channel_factor(ch);
        self.factors[f].scope[pos]
    }

    /// Initial state: factor-to-variable messages carry each factor's
    /// diagonal curvature (the quadratic part of the factor with everyone
    /// else pinned to 0), variable-to-factor messages and estimates follow.
    pub fn init_state(&self) -> Result<HyperState> {
        let mut factor_to_var = Vec::with_capacity(self.num_channels());
        for factor in &self.factors {
            for (pos, _) in factor.scope.iter().enumerate() {
                factor_to_var.push(QuadraticMessage { a: factor.q[(pos, pos)], b: 0.0 });
            }
        }
        let var_to_factor = self.all_var_to_factor(&factor_to_var);
        let estimate = self.estimates(&factor_to_var)?;
        Ok(HyperState {
            messages: HyperMessages { var_to_factor, factor_to_var },
            estimate,
            iteration: 0,
        })
    }

    /// Variable-to-factor message for channel `ch`: the variable's node
    /// quadratic plus every incoming factor-to-variable message except the
    /// one from `ch`'s own factor.
    fn var_to_factor(&self, ch: usize, factor_to_var: &[QuadraticMessage]) -> QuadraticMessage {
        let v = self.channel_var(ch);
        let (q, l) = self.node_model[v];
        let mut out = QuadraticMessage { a: q, b: l };
        for &other in &self.incident[v] {
            if other != ch {
                out.a += factor_to_var[other].a;
                out.b += factor_to_var[other].b;
            }
        }
        out
    }

    fn all_var_to_factor(&self, factor_to_var: &[QuadraticMessage]) -> Vec<QuadraticMessage> {
        (0..self.num_channels()).map(|ch| self.var_to_factor(ch, factor_to_var)).collect()
    }

    /// Factor-to-variable message for channel `ch`, from the co-members'
    /// variable-to-factor messages.
    fn factor_to_var(&self, ch: usize, var_to_factor: &[QuadraticMessage]) -> Result<QuadraticMessage> {
        let (f, pos) = self.channel_factor(ch);
        let factor = &self.factors[f];
        let incoming: Vec<QuadraticMessage> = (0..factor.scope.len())
            .filter(|&p| p != pos)
            .map(|p| var_to_factor[self.offsets[f] + p])
            .collect();
        schur_message(&factor.q, pos, &incoming)
    }

    /// Per-variable argmin of node factor plus all incoming messages.
    fn estimates(&self, factor_to_var: &[QuadraticMessage]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.program.n());
        for v in 0..self.program.n() {
            let (q, l) = self.node_model[v];
            let mut denom = q;
            let mut num = l;
            for &ch in &self.incident[v] {
                denom += factor_to_var[ch].a;
                num += factor_to_var[ch].b;
            }
            if denom <= 0.0 {
                return Err(Error::DegenerateCurvature(format!(
                    "variable {v} has local curvature {denom}"
                )));
            }
            x.push(-num / denom);
        }
        Ok(x)
    }

    /// One two-phase iteration: all variable-to-factor messages from the old
    /// factor-to-variable buffer, then all factor-to-variable messages from
    /// the fresh variable-to-factor buffer.
    pub fn sweep(&self, state: &HyperState) -> Result<HyperState> {
        let var_to_factor = self.all_var_to_factor(&state.messages.factor_to_var);
        let factor_to_var = (0..self.num_channels())
            .map(|ch| self.factor_to_var(ch, &var_to_factor))
            .collect::<Result<Vec<_>>>()?;
        let estimate = self.estimates(&factor_to_var)?;
        Ok(HyperState {
            messages: HyperMessages { var_to_factor, factor_to_var },
            estimate,
            iteration: state.iteration + 1,
        })
    }
}

/// Minimize every scope variable but `target` out of the joint quadratic
/// `1/2 x^T q x + sum of incoming summaries` and return the resulting
/// quadratic in the target coordinate.
///
/// `incoming[k]` pairs with the scope positions in order, skipping `target`.
/// Errors when the reduced curvature block is not positive definite.
pub fn schur_message(
    q: &DMatrix<f64>,
    target: usize,
    incoming: &[QuadraticMessage],
) -> Result<QuadraticMessage> {
    let k = q.nrows();
    debug_assert_eq!(incoming.len(), k - 1);
    if k == 2 {
        // Scalar path; same arithmetic as the pairwise engine's update.
        let other = 1 - target;
        let s = q[(other, other)] + incoming[0].a;
        if s <= 0.0 {
            return Err(Error::DegenerateCurvature(format!(
                "reduced factor curvature {s} is not positive"
            )));
        }
        let cross = q[(target, other)];
        let a = (q[(target, target)] - cross * cross / s).max(0.0);
        let b = -cross * incoming[0].b / s;
        return Ok(QuadraticMessage { a, b });
    }
    let rest: Vec<usize> = (0..k).filter(|&p| p != target).collect();
    let r = rest.len();
    let m = DMatrix::from_fn(r, r, |a, b| {
        q[(rest[a], rest[b])] + if a == b { incoming[a].a } else { 0.0 }
    });
    let cross = DVector::from_fn(r, |a, _| q[(rest[a], target)]);
    let lin = DVector::from_fn(r, |a, _| incoming[a].b);
    let chol = m.cholesky().ok_or_else(|| {
        Error::DegenerateCurvature("reduced factor block is not positive definite".into())
    })?;
    let a = (q[(target, target)] - cross.dot(&chol.solve(&cross))).max(0.0);
    let b = -cross.dot(&chol.solve(&lin));
    Ok(QuadraticMessage { a, b })
}

fn message_delta(old: &HyperMessages, new: &HyperMessages) -> f64 {
    let family = |o: &[QuadraticMessage], n: &[QuadraticMessage]| {
        o.iter()
            .zip(n)
            .map(|(x, y)| (x.a - y.a).abs().max((x.b - y.b).abs()))
            .fold(0.0, f64::max)
    };
    family(&old.var_to_factor, &new.var_to_factor)
        .max(family(&old.factor_to_var, &new.factor_to_var))
}

fn estimate_runaway(estimate: &[f64]) -> bool {
    estimate.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT)
}

/// Initial state for `program` (diagonal factor-to-variable messages).
pub fn init_messages(program: &Program) -> Result<HyperState> {
    HyperEngine::new(program)?.init_state()
}

/// Run synchronous sweeps from `state` until the message change reaches
/// `options.tol`, the horizon elapses, or the divergence guard trips (which
/// marks the trace rather than erroring).
pub fn run_from(
    program: &Program,
    state: HyperState,
    options: &RunOptions,
) -> Result<(Trace, HyperState)> {
    let engine = HyperEngine::new(program)?;
    let mut trace = Trace::new();
    let mut row = TraceRow::new(state.iteration, f64::NAN, state.estimate.clone());
    row.bound_value = options.bound.map(|b| b.value(state.iteration));
    trace.push(row);
    let mut current = state;
    for _ in 0..options.horizon {
        let next = engine.sweep(&current)?;
        let delta = message_delta(&current.messages, &next.messages);
        let mut row = TraceRow::new(next.iteration, delta, next.estimate.clone());
        row.bound_value = options.bound.map(|b| b.value(next.iteration));
        trace.push(row);
        let runaway = estimate_runaway(&next.estimate);
        current = next;
        if runaway {
            trace.diverged = true;
            break;
        }
        if delta <= options.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((trace, current))
}

/// [`run_from`] starting at the diagonal initial state.
pub fn run(program: &Program, options: &RunOptions) -> Result<(Trace, HyperState)> {
    run_from(program, init_messages(program)?, options)
}

/// Everything one vertex publishes: its variable-to-factor messages (in
/// incident-channel order) plus its running estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperVertexPayload {
    pub var_to_factor: Vec<QuadraticMessage>,
    pub estimate: f64,
}

/// Vertex-at-a-time view for asynchronous schedules. A vertex update reads
/// co-members' variable-to-factor messages (lagged), rebuilds every
/// factor-to-variable message addressed to it, and republishes its own
/// variable-to-factor messages and estimate. Fixed points coincide with the
/// synchronous engine's.
pub struct AsyncHyper<'a> {
    engine: HyperEngine<'a>,
    /// `slot[ch]`: index of `ch` within `incident[channel_var(ch)]`.
    slot: Vec<usize>,
}

impl<'a> AsyncHyper<'a> {
    pub fn new(program: &'a Program) -> Result<Self> {
        let engine = HyperEngine::new(program)?;
        let mut slot = vec![0usize; engine.num_channels()];
        for v in 0..program.n() {
            for (k, &ch) in engine.incident[v].iter().enumerate() {
                slot[ch] = k;
            }
        }
        Ok(AsyncHyper { engine, slot })
    }

    /// Factor-to-variable messages into `vertex`, with each co-member's
    /// variable-to-factor message resolved through `lookup`.
    fn incoming(
        &self,
        vertex: usize,
        lookup: &mut dyn FnMut(usize) -> QuadraticMessage,
    ) -> Result<Vec<QuadraticMessage>> {
        let engine = &self.engine;
        engine.incident[vertex]
            .iter()
            .map(|&ch| {
                let (f, pos) = engine.channel_factor(ch);
                let scope = &engine.factors[f].scope;
                let incoming: Vec<QuadraticMessage> = (0..scope.len())
                    .filter(|&p| p != pos)
                    .map(|p| lookup(engine.offsets[f] + p))
                    .collect();
                schur_message(&engine.factors[f].q, pos, &incoming)
            })
            .collect()
    }

    fn publish(
        &self,
        vertex: usize,
        incoming: &[QuadraticMessage],
    ) -> Result<HyperVertexPayload> {
        let (q, l) = self.engine.node_model[vertex];
        let var_to_factor = (0..incoming.len())
            .map(|k| {
                let mut out = QuadraticMessage { a: q, b: l };
                for (k2, m) in incoming.iter().enumerate() {
                    if k2 != k {
                        out.a += m.a;
                        out.b += m.b;
                    }
                }
                out
            })
            .collect();
        let denom = q + incoming.iter().map(|m| m.a).sum::<f64>();
        let num = l + incoming.iter().map(|m| m.b).sum::<f64>();
        if denom <= 0.0 {
            return Err(Error::DegenerateCurvature(format!(
                "variable {vertex} has local curvature {denom}"
            )));
        }
        Ok(HyperVertexPayload { var_to_factor, estimate: -num / denom })
    }
}

impl AsyncEngine for AsyncHyper<'_> {
    type Payload = HyperVertexPayload;

    fn initial(&self, vertex: usize) -> Result<HyperVertexPayload> {
        let engine = &self.engine;
        let incoming: Vec<QuadraticMessage> = engine.incident[vertex]
            .iter()
            .map(|&ch| {
                let (f, pos) = engine.channel_factor(ch);
                QuadraticMessage { a: engine.factors[f].q[(pos, pos)], b: 0.0 }
            })
            .collect();
        self.publish(vertex, &incoming)
    }

    fn update(
        &self,
        vertex: usize,
        _own: &HyperVertexPayload,
        read: &mut dyn FnMut(usize) -> HyperVertexPayload,
    ) -> Result<HyperVertexPayload> {
        let engine = &self.engine;
        // One lagged read per distinct co-member, reused across factors.
        let mut peers: Vec<Option<HyperVertexPayload>> = vec![None; engine.program.n()];
        let mut lookup = |ch: usize| {
            let u = engine.channel_var(ch);
            let payload = peers[u].get_or_insert_with(|| read(u));
            payload.var_to_factor[self.slot[ch]]
        };
        let incoming = self.incoming(vertex, &mut lookup)?;
        self.publish(vertex, &incoming)
    }

    fn estimate_component(&self, _vertex: usize, payload: &HyperVertexPayload) -> f64 {
        payload.estimate
    }

    fn delta(&self, old: &HyperVertexPayload, new: &HyperVertexPayload) -> f64 {
        old.var_to_factor
            .iter()
            .zip(&new.var_to_factor)
            .map(|(x, y)| (x.a - y.a).abs().max((x.b - y.b).abs()))
            .fold((old.estimate - new.estimate).abs(), f64::max)
    }

    fn is_divergent(&self, payload: &HyperVertexPayload) -> bool {
        !payload.estimate.is_finite()
            || payload.estimate.abs() > DIVERGENCE_LIMIT
            || payload.var_to_factor.iter().any(|m| !m.b.is_finite() || m.b.abs() > DIVERGENCE_LIMIT)
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
        let engine = AsyncHyper::new(program)?;
        schedule::run_async(&engine, program.n(), schedule, options)
    }
}

/// Total initialization residual at `x_star`: over every channel `(C, v)`,
/// the slope mismatch at `x_star` between the initial message and the
/// factor's true partial, `|d f_C / d x_v (x*_C) - Q_vv x*_v|`, which for a
/// quadratic factor is `|sum_{u != v} Q_vu x*_u|`.
pub fn initialization_gap(program: &Program, x_star: &[f64]) -> Result<f64> {
    if x_star.len() != program.n() {
        return Err(Error::Dimension { expected: program.n(), got: x_star.len() });
    }
    let engine = HyperEngine::new(program)?;
    let mut gap = 0.0;
    for factor in &engine.factors {
        for (pos, _) in factor.scope.iter().enumerate() {
            let residual: f64 = factor
                .scope
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != pos)
                .map(|(p, &u)| factor.q[(pos, p)] * x_star[u])
                .sum();
            gap += residual.abs();
        }
    }
    Ok(gap)
}

/// Geometric envelope parameters for a certified run: the certificate's
/// contraction rate and conditioning constant with this engine's
/// initialization gap at `x_star`.
pub fn bound_params(
    program: &Program,
    cert: &DominanceCertificate,
    x_star: &[f64],
) -> Result<BoundParams> {
    Ok(BoundParams { k: cert.k, lambda: cert.lambda, gap: initialization_gap(program, x_star)? })
}
