//! Oracle and comparator solvers: damped Newton (the ground truth the rest
//! of the toolkit is tested against), plus decentralized coordinate descent
//! and gradient descent runnable under the same [`Schedule`] abstraction as
//! the message engines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::Program;
use crate::schedule::{run_async, AsyncEngine, Schedule};
use crate::trace::{RunOptions, Trace};
use crate::{Error, Result};

/// Smooth convex objective with exact derivatives. [`Program`] implements
/// this; so does the computation-tree objective in `analysis`.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

impl Objective for Program {
    fn dim(&self) -> usize {
        self.n()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Program::gradient(self, x)
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.hessian_dense(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the gradient at `x`.
    pub grad_norm: f64,
    pub converged: bool,
}

const NEWTON_CAP: usize = 500;

fn solve_direction(h: &DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    let n = h.nrows();
    let rhs = DVector::from_fn(n, |i, _| -g[i]);
    let scale = 1.0 + (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    // The Hessian is PSD but may be singular at isolated points (a quartic
    // at its flat spot); a growing ridge restores a factorizable system.
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut trial = h.clone();
        for i in 0..n {
            trial[(i, i)] += ridge;
        }
        if let Some(ch) = trial.cholesky() {
            return Ok(ch.solve(&rhs).iter().copied().collect());
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    Err(Error::NumericFailure(
        "Hessian factorization failed even with regularization".into(),
    ))
}

/// Damped Newton with step-halving line search, stopping at
/// `max-norm(gradient) <= tol` or after 500 steps (reported, not an error).
pub fn newton_minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], tol: f64) -> Result<SolveReport> {
    if x0.len() != obj.dim() {
        return Err(Error::Dimension { expected: obj.dim(), got: x0.len() });
    }
    let mut x = x0.to_vec();
    let mut f = obj.value(&x)?;
    for it in 0..=NEWTON_CAP {
        let g = obj.gradient(&x)?;
        let grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_norm <= tol {
            return Ok(SolveReport { x, iterations: it, grad_norm, converged: true });
        }
        if it == NEWTON_CAP {
            return Ok(SolveReport { x, iterations: it, grad_norm, converged: false });
        }
        let h = obj.hessian(&x)?;
        let d = solve_direction(&h, &g)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let fc = obj.value(&cand)?;
            // Strict decrease only: near the minimum a halved step can
            // round to the current point, and accepting that equal value
            // would spin without progress.
            if fc < f {
                x = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent visible in f: the decrease is below the rounding
            // noise of the objective. The gradient still resolves progress,
            // so take the full step if it shrinks the gradient materially.
            let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + di).collect();
            let gc = obj.gradient(&cand)?;
            let cand_norm = gc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if cand_norm < 0.5 * grad_norm {
                f = obj.value(&cand)?;
                x = cand;
                continue;
            }
            return Ok(SolveReport {
                x,
                iterations: it + 1,
                grad_norm,
                converged: grad_norm <= tol,
            });
        }
    }
    unreachable!("loop returns at the cap")
}

/// [`newton_minimize`] on a program.
pub fn newton_solve(program: &Program, x0: &[f64], tol: f64) -> Result<SolveReport> {
    newton_minimize(program, x0, tol)
}

/// Root of a strictly increasing scalar function, by doubling bracket and
/// bisection to full precision. Deterministic for deterministic `phi`.
pub(crate) fn bisect_increasing(phi: impl Fn(f64) -> f64, start: f64) -> Result<f64> {
    let mut width = 1.0;
    let (mut lo, mut hi) = (start - width, start + width);
    for _ in 0..200 {
        if phi(lo) <= 0.0 {
            break;
        }
        width *= 2.0;
        lo = start - width;
        if !lo.is_finite() {
            return Err(Error::NumericFailure("bisection bracket ran off to -inf".into()));
        }
    }
    if phi(lo) > 0.0 {
        return Err(Error::NumericFailure("no lower bracket for bisection".into()));
    }
    width = 1.0;
    for _ in 0..200 {
        if phi(hi) >= 0.0 {
            break;
        }
        width *= 2.0;
        hi = start + width;
        if !hi.is_finite() {
            return Err(Error::NumericFailure("bisection bracket ran off to +inf".into()));
        }
    }
    if phi(hi) < 0.0 {
        return Err(Error::NumericFailure("no upper bracket for bisection".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Variables whose value enters `v`'s local objective, in deterministic
/// order: pairwise neighbors first, then hyper co-members.
fn coupled_vars(program: &Program, v: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &(u, _) in program.adjacency(v) {
        if !out.contains(&u) {
            out.push(u);
        }
    }
    for &hidx in program.hyper_incidence(v) {
        for &u in &program.hypers()[hidx].scope {
            if u != v && !out.contains(&u) {
                out.push(u);
            }
        }
    }
    out
}

/// d/dy of `v`'s local objective at `y`, with every coupled variable pinned
/// to `values[that variable]`.
fn local_partial(program: &Program, v: usize, y: f64, values: &[f64]) -> f64 {
    let mut g = program.node(v).d1(y);
    for &(u, e) in program.adjacency(v) {
        let edge = &program.edges()[e];
        let (xi, xj) = if edge.i == v { (y, values[u]) } else { (values[u], y) };
        let (gi, gj) = edge.term.grad(xi, xj);
        g += if edge.i == v { gi } else { gj };
    }
    for &hidx in program.hyper_incidence(v) {
        let h = &program.hypers()[hidx];
        let xc: Vec<f64> = h.scope.iter().map(|&u| if u == v { y } else { values[u] }).collect();
        let pos = h.scope.iter().position(|&u| u == v).expect("incidence");
        g += h.term.grad(&xc)[pos];
    }
    g
}

fn gather_values(
    program: &Program,
    v: usize,
    read: &mut dyn FnMut(usize) -> f64,
) -> Vec<f64> {
    let mut values = vec![0.0; program.n()];
    for u in coupled_vars(program, v) {
        values[u] = read(u);
    }
    values
}

/// Coordinate descent as a schedulable engine: at each of its update times a
/// vertex exactly minimizes its local objective against lagged peer values.
pub struct AsyncCoordinateDescent<'a> {
    program: &'a Program,
    start: Vec<f64>,
}

impl<'a> AsyncCoordinateDescent<'a> {
    pub fn new(program: &'a Program) -> Self {
        let start = vec![0.0; program.n()];
        AsyncCoordinateDescent { program, start }
    }

    pub fn with_start(program: &'a Program, start: Vec<f64>) -> Self {
        AsyncCoordinateDescent { program, start }
    }
}

impl AsyncEngine for AsyncCoordinateDescent<'_> {
    type Payload = f64;

    fn initial(&self, vertex: usize) -> Result<f64> {
        Ok(self.start[vertex])
    }

    fn update(
        &self,
        vertex: usize,
        own: &f64,
        read: &mut dyn FnMut(usize) -> f64,
    ) -> Result<f64> {
        let values = gather_values(self.program, vertex, read);
        bisect_increasing(|y| local_partial(self.program, vertex, y, &values), *own)
    }

    fn estimate_component(&self, _vertex: usize, payload: &f64) -> f64 {
        *payload
    }

    fn delta(&self, old: &f64, new: &f64) -> f64 {
        (new - old).abs()
    }
}

pub fn coordinate_descent_async(
    program: &Program,
    schedule: &Schedule,
    options: &RunOptions,
) -> Result<Trace> {
    run_async(&AsyncCoordinateDescent::new(program), program.n(), schedule, options)
}

/// Gradient descent as a schedulable engine: a vertex steps against the
/// partial derivative of its local objective at lagged peer values.
pub struct AsyncGradientDescent<'a> {
    program: &'a Program,
    alpha: f64,
    start: Vec<f64>,
}

impl<'a> AsyncGradientDescent<'a> {
    pub fn new(program: &'a Program, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidProgram(format!(
                "step size must be positive, got {alpha}"
            )));
        }
        Ok(AsyncGradientDescent { program, alpha, start: vec![0.0; program.n()] })
    }

    pub fn with_start(program: &'a Program, alpha: f64, start: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(program, alpha)?;
        s.start = start;
        Ok(s)
    }
}

impl AsyncEngine for AsyncGradientDescent<'_> {
    type Payload = f64;

    fn initial(&self, vertex: usize) -> Result<f64> {
        Ok(self.start[vertex])
    }

    fn update(
        &self,
        vertex: usize,
        own: &f64,
        read: &mut dyn FnMut(usize) -> f64,
    ) -> Result<f64> {
        let values = gather_values(self.program, vertex, read);
        Ok(own - self.alpha * local_partial(self.program, vertex, *own, &values))
    }

    fn estimate_component(&self, _vertex: usize, payload: &f64) -> f64 {
        *payload
    }

    fn delta(&self, old: &f64, new: &f64) -> f64 {
        (new - old).abs()
    }

    fn is_divergent(&self, payload: &f64) -> bool {
        !payload.is_finite() || payload.abs() > 1e12
    }
}

/// Default gradient step: the reciprocal of the largest Hessian diagonal at
/// the origin.
pub fn default_step_size(program: &Program) -> Result<f64> {
    let zeros = vec![0.0; program.n()];
    let mut m = 0.0f64;
    for i in 0..program.n() {
        m = m.max(program.hessian_row(i, &zeros)?.0);
    }
    if m <= 0.0 {
        return Err(Error::DegenerateCurvature(
            "no positive Hessian diagonal at the origin".into(),
        ));
    }
    Ok(1.0 / m)
}

pub fn gradient_descent_async(
    program: &Program,
    schedule: &Schedule,
    alpha: f64,
    options: &RunOptions,
) -> Result<Trace> {
    let engine = AsyncGradientDescent::new(program, alpha)?;
    run_async(&engine, program.n(), schedule, options)
}
