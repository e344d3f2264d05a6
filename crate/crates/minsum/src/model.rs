//! Problem model: the factor catalog and the joint objective.
//!
//! A [`Program`] is
//!
//! ```text
//! F(x) = sum_i f_i(x_i) + sum_{(i,j) in E} f_ij(x_i, x_j) + sum_C f_C(x_C)
//! ```
//!
//! over a closed catalog of smooth convex factors. Node factors are strictly
//! convex and coercive by construction (their parameter constraints enforce
//! it), pairwise and hyper factors are jointly convex. The catalog is closed
//! on purpose: every factor exposes exact derivatives, so certifiers and
//! engines never need numeric differentiation.
//!
//! Programs serialize to a JSON problem file:
//!
//! ```json
//! {
//!   "n": 3,
//!   "node_factors": [{"var": 0, "kind": "quadratic", "q": 1.0, "l": -1.0}],
//!   "edge_factors": [{"i": 0, "j": 1, "kind": "quadratic_coupling", "c": 0.25}],
//!   "hyper_factors": [{"scope": [0, 1, 2], "kind": "squared_span", "c": 1.0, "weights": [1.0, -1.0, 0.0]}],
//!   "B": 2.0
//! }
//! ```
//!
//! Variable indices are 0-based. `B` is an optional default half-width for
//! grid-based engines and box-sampled certification.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Numerically stable ln(cosh(z)).
fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// sech^2(z), computed from tanh for stability at large |z|.
fn sech2(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

fn require_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProgram(format!("{name} must be finite, got {v}")))
    }
}

/// Single-variable factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeTerm {
    /// `q/2 x^2 + l x + c0`, with curvature `q > 0`.
    ///
    /// `c0` is a constant offset (default 0); it shifts values only and never
    /// affects derivatives or minimizers.
    Quadratic {
        q: f64,
        l: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        c0: f64,
    },
    /// `a ln cosh(b (x - shift))`, with `a > 0`, `b > 0`.
    #[serde(rename = "logcosh")]
    LogCosh { a: f64, b: f64, shift: f64 },
    /// `c/4 (x - shift)^4`, with `c > 0`.
    EvenQuartic { c: f64, shift: f64 },
    /// Sum of catalog terms (non-empty).
    Sum { terms: Vec<NodeTerm> },
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl NodeTerm {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            NodeTerm::Quadratic { q, l, c0 } => 0.5 * q * x * x + l * x + c0,
            NodeTerm::LogCosh { a, b, shift } => a * ln_cosh(b * (x - shift)),
            NodeTerm::EvenQuartic { c, shift } => {
                let d = x - shift;
                0.25 * c * d * d * d * d
            }
            NodeTerm::Sum { terms } => terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            NodeTerm::Quadratic { q, l, .. } => q * x + l,
            NodeTerm::LogCosh { a, b, shift } => a * b * (b * (x - shift)).tanh(),
            NodeTerm::EvenQuartic { c, shift } => {
                let d = x - shift;
                c * d * d * d
            }
            NodeTerm::Sum { terms } => terms.iter().map(|t| t.d1(x)).sum(),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            NodeTerm::Quadratic { q, .. } => *q,
            NodeTerm::LogCosh { a, b, shift } => a * b * b * sech2(b * (x - shift)),
            NodeTerm::EvenQuartic { c, shift } => {
                let d = x - shift;
                3.0 * c * d * d
            }
            NodeTerm::Sum { terms } => terms.iter().map(|t| t.d2(x)).sum(),
        }
    }

    /// `(q, l)` if the term is exactly quadratic (constants dropped).
    pub fn as_exact_quadratic(&self) -> Option<(f64, f64)> {
        match self {
            NodeTerm::Quadratic { q, l, .. } => Some((*q, *l)),
            NodeTerm::Sum { terms } => {
                let mut q = 0.0;
                let mut l = 0.0;
                for t in terms {
                    let (tq, tl) = t.as_exact_quadratic()?;
                    q += tq;
                    l += tl;
                }
                Some((q, l))
            }
            _ => None,
        }
    }

    /// Curvature/slope of the local quadratic model at `at`.
    ///
    /// Exactly-quadratic terms are extracted symbolically (anchor-independent
    /// to the last bit); other terms use a second-order expansion.
    pub fn quadratic_model(&self, at: f64) -> (f64, f64) {
        match self {
            NodeTerm::Quadratic { q, l, .. } => (*q, *l),
            NodeTerm::Sum { terms } => {
                let mut q = 0.0;
                let mut l = 0.0;
                for t in terms {
                    let (tq, tl) = t.quadratic_model(at);
                    q += tq;
                    l += tl;
                }
                (q, l)
            }
            _ => {
                let q = self.d2(at);
                (q, self.d1(at) - q * at)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NodeTerm::Quadratic { q, l, c0 } => {
                require_finite("q", *q)?;
                require_finite("l", *l)?;
                require_finite("c0", *c0)?;
                if *q <= 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "quadratic node factor requires q > 0, got {q}"
                    )));
                }
                Ok(())
            }
            NodeTerm::LogCosh { a, b, shift } => {
                require_finite("a", *a)?;
                require_finite("b", *b)?;
                require_finite("shift", *shift)?;
                if *a <= 0.0 || *b <= 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "logcosh node factor requires a > 0 and b > 0, got a={a}, b={b}"
                    )));
                }
                Ok(())
            }
            NodeTerm::EvenQuartic { c, shift } => {
                require_finite("c", *c)?;
                require_finite("shift", *shift)?;
                if *c <= 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "even_quartic node factor requires c > 0, got {c}"
                    )));
                }
                Ok(())
            }
            NodeTerm::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidProgram("sum node factor must be non-empty".into()));
                }
                terms.iter().try_for_each(NodeTerm::validate)
            }
        }
    }
}

/// Pairwise factor over `(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeTerm {
    /// `c/2 (x_i - x_j)^2`, with `c >= 0`.
    QuadraticCoupling { c: f64 },
    /// `1/2 [x_i x_j] Q [x_i x_j]^T` for a symmetric PSD block `Q`.
    QuadraticForm { q_ii: f64, q_ij: f64, q_jj: f64 },
    /// `a ln cosh(b (x_i - x_j))`, with `a > 0`, `b > 0`.
    #[serde(rename = "logcosh_coupling")]
    LogCoshCoupling { a: f64, b: f64 },
    /// `c/4 (x_i - x_j)^4`, with `c >= 0`.
    QuarticCoupling { c: f64 },
}

impl EdgeTerm {
    pub fn value(&self, xi: f64, xj: f64) -> f64 {
        match self {
            EdgeTerm::QuadraticCoupling { c } => {
                let d = xi - xj;
                0.5 * c * d * d
            }
            EdgeTerm::QuadraticForm { q_ii, q_ij, q_jj } => {
                0.5 * (q_ii * xi * xi + 2.0 * q_ij * xi * xj + q_jj * xj * xj)
            }
            EdgeTerm::LogCoshCoupling { a, b } => a * ln_cosh(b * (xi - xj)),
            EdgeTerm::QuarticCoupling { c } => {
                let d = xi - xj;
                0.25 * c * d * d * d * d
            }
        }
    }

    /// `(d/dx_i, d/dx_j)`.
    pub fn grad(&self, xi: f64, xj: f64) -> (f64, f64) {
        match self {
            EdgeTerm::QuadraticCoupling { c } => {
                let g = c * (xi - xj);
                (g, -g)
            }
            EdgeTerm::QuadraticForm { q_ii, q_ij, q_jj } => {
                (q_ii * xi + q_ij * xj, q_ij * xi + q_jj * xj)
            }
            EdgeTerm::LogCoshCoupling { a, b } => {
                let g = a * b * (b * (xi - xj)).tanh();
                (g, -g)
            }
            EdgeTerm::QuarticCoupling { c } => {
                let d = xi - xj;
                let g = c * d * d * d;
                (g, -g)
            }
        }
    }

    /// `(d2/dx_i^2, d2/dx_i dx_j, d2/dx_j^2)`.
    pub fn hess(&self, xi: f64, xj: f64) -> (f64, f64, f64) {
        match self {
            EdgeTerm::QuadraticCoupling { c } => (*c, -c, *c),
            EdgeTerm::QuadraticForm { q_ii, q_ij, q_jj } => (*q_ii, *q_ij, *q_jj),
            EdgeTerm::LogCoshCoupling { a, b } => {
                let s = a * b * b * sech2(b * (xi - xj));
                (s, -s, s)
            }
            EdgeTerm::QuarticCoupling { c } => {
                let d = xi - xj;
                let s = 3.0 * c * d * d;
                (s, -s, s)
            }
        }
    }

    /// True when the factor is exactly quadratic (constant Hessian).
    pub fn is_quadratic(&self) -> bool {
        matches!(
            self,
            EdgeTerm::QuadraticCoupling { .. } | EdgeTerm::QuadraticForm { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        match self {
            EdgeTerm::QuadraticCoupling { c } | EdgeTerm::QuarticCoupling { c } => {
                require_finite("c", *c)?;
                if *c < 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "coupling requires c >= 0, got {c}"
                    )));
                }
                Ok(())
            }
            EdgeTerm::QuadraticForm { q_ii, q_ij, q_jj } => {
                require_finite("q_ii", *q_ii)?;
                require_finite("q_ij", *q_ij)?;
                require_finite("q_jj", *q_jj)?;
                if *q_ii < 0.0 || *q_jj < 0.0 || q_ij * q_ij > q_ii * q_jj {
                    return Err(Error::InvalidProgram(format!(
                        "quadratic_form block [[{q_ii}, {q_ij}], [{q_ij}, {q_jj}]] is not PSD"
                    )));
                }
                Ok(())
            }
            EdgeTerm::LogCoshCoupling { a, b } => {
                require_finite("a", *a)?;
                require_finite("b", *b)?;
                if *a <= 0.0 || *b <= 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "logcosh_coupling requires a > 0 and b > 0, got a={a}, b={b}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Factor over an ordered scope of `k >= 2` variables. Both kinds are
/// quadratic: `f_C(x) = 1/2 x^T Q x` for a PSD `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperTerm {
    /// Explicit symmetric PSD `k x k` block, row-major.
    QuadraticFormK { matrix: Vec<Vec<f64>> },
    /// `c/2 (a^T x_C)^2`, i.e. `Q = c a a^T`, with `c >= 0`.
    SquaredSpan { c: f64, weights: Vec<f64> },
}

impl HyperTerm {
    /// Dense `Q` for a scope of length `k`.
    pub fn q_matrix(&self, k: usize) -> DMatrix<f64> {
        match self {
            HyperTerm::QuadraticFormK { matrix } => {
                DMatrix::from_fn(k, k, |r, c| matrix[r][c])
            }
            HyperTerm::SquaredSpan { c, weights } => {
                DMatrix::from_fn(k, k, |r, col| c * weights[r] * weights[col])
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            HyperTerm::QuadraticFormK { matrix } => {
                let mut v = 0.0;
                for (r, row) in matrix.iter().enumerate() {
                    for (c, q) in row.iter().enumerate() {
                        v += q * x[r] * x[c];
                    }
                }
                0.5 * v
            }
            HyperTerm::SquaredSpan { c, weights } => {
                let s: f64 = weights.iter().zip(x).map(|(w, xi)| w * xi).sum();
                0.5 * c * s * s
            }
        }
    }

    /// Gradient with respect to the scope coordinates.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            HyperTerm::QuadraticFormK { matrix } => matrix
                .iter()
                .map(|row| row.iter().zip(x).map(|(q, xi)| q * xi).sum())
                .collect(),
            HyperTerm::SquaredSpan { c, weights } => {
                let s: f64 = weights.iter().zip(x).map(|(w, xi)| w * xi).sum();
                weights.iter().map(|w| c * s * w).collect()
            }
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        match self {
            HyperTerm::QuadraticFormK { matrix } => {
                if matrix.len() != k || matrix.iter().any(|row| row.len() != k) {
                    return Err(Error::InvalidProgram(format!(
                        "quadratic_form_k matrix must be {k}x{k} to match its scope"
                    )));
                }
                let mut scale: f64 = 0.0;
                for row in matrix {
                    for q in row {
                        require_finite("matrix entry", *q)?;
                        scale = scale.max(q.abs());
                    }
                }
                let tol = 1e-12 * (1.0 + scale);
                for r in 0..k {
                    for c in (r + 1)..k {
                        if (matrix[r][c] - matrix[c][r]).abs() > tol {
                            return Err(Error::InvalidProgram(
                                "quadratic_form_k matrix must be symmetric".into(),
                            ));
                        }
                    }
                }
                let q = self.q_matrix(k);
                let min_eig = q
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if min_eig < -1e-9 * (1.0 + scale) {
                    return Err(Error::InvalidProgram(format!(
                        "quadratic_form_k matrix is not PSD (min eigenvalue {min_eig:.3e})"
                    )));
                }
                Ok(())
            }
            HyperTerm::SquaredSpan { c, weights } => {
                require_finite("c", *c)?;
                if *c < 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "squared_span requires c >= 0, got {c}"
                    )));
                }
                if weights.len() != k {
                    return Err(Error::InvalidProgram(format!(
                        "squared_span weights length {} must match scope length {k}",
                        weights.len()
                    )));
                }
                weights.iter().try_for_each(|w| require_finite("weight", *w))
            }
        }
    }
}

/// A pairwise factor bound to its endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub term: EdgeTerm,
}

/// A hyper factor bound to its ordered scope.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub scope: Vec<usize>,
    pub term: HyperTerm,
}

/// The joint objective. Construction validates the factor catalog's
/// parameter constraints, index ranges, and the one-edge-per-pair rule, so a
/// `Program` value is always well-formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemFile", into = "ProblemFile")]
pub struct Program {
    n: usize,
    nodes: Vec<NodeTerm>,
    edges: Vec<Edge>,
    hypers: Vec<Hyper>,
    box_radius: Option<f64>,
    /// Per vertex: `(neighbor, edge index)`, sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Per vertex: indices of incident hyper factors, ascending.
    hyper_incidence: Vec<Vec<usize>>,
}

impl Program {
    pub fn new(
        n: usize,
        nodes: Vec<(usize, NodeTerm)>,
        edges: Vec<Edge>,
        hypers: Vec<Hyper>,
        box_radius: Option<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidProgram("n must be at least 1".into()));
        }
        let mut slots: Vec<Option<NodeTerm>> = vec![None; n];
        for (var, term) in nodes {
            if var >= n {
                return Err(Error::InvalidProgram(format!(
                    "node factor var {var} out of range for n={n}"
                )));
            }
            if slots[var].is_some() {
                return Err(Error::InvalidProgram(format!(
                    "variable {var} has more than one node factor"
                )));
            }
            term.validate()?;
            slots[var] = Some(term);
        }
        let nodes: Vec<NodeTerm> = slots
            .into_iter()
            .enumerate()
            .map(|(var, slot)| {
                slot.ok_or_else(|| {
                    Error::InvalidProgram(format!("variable {var} has no node factor"))
                })
            })
            .collect::<Result<_>>()?;

        let mut seen_pairs = HashSet::new();
        for (idx, e) in edges.iter().enumerate() {
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidProgram(format!(
                    "edge factor {idx} references variables ({}, {}) out of range for n={n}",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidProgram(format!(
                    "edge factor {idx} is a self-loop on variable {}",
                    e.i
                )));
            }
            let key = (e.i.min(e.j), e.i.max(e.j));
            if !seen_pairs.insert(key) {
                return Err(Error::InvalidProgram(format!(
                    "more than one edge factor on pair ({}, {})",
                    key.0, key.1
                )));
            }
            e.term.validate()?;
        }

        for (idx, h) in hypers.iter().enumerate() {
            if h.scope.len() < 2 {
                return Err(Error::InvalidProgram(format!(
                    "hyper factor {idx} needs a scope of at least 2 variables"
                )));
            }
            let mut seen = HashSet::new();
            for &v in &h.scope {
                if v >= n {
                    return Err(Error::InvalidProgram(format!(
                        "hyper factor {idx} references variable {v} out of range for n={n}"
                    )));
                }
                if !seen.insert(v) {
                    return Err(Error::InvalidProgram(format!(
                        "hyper factor {idx} repeats variable {v} in its scope"
                    )));
                }
            }
            h.term.validate(h.scope.len())?;
        }

        if let Some(b) = box_radius {
            require_finite("B", b)?;
            if b <= 0.0 {
                return Err(Error::InvalidProgram(format!("B must be positive, got {b}")));
            }
        }

        let mut adjacency = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[e.i].push((e.j, idx));
            adjacency[e.j].push((e.i, idx));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut hyper_incidence = vec![Vec::new(); n];
        for (idx, h) in hypers.iter().enumerate() {
            for &v in &h.scope {
                hyper_incidence[v].push(idx);
            }
        }

        Ok(Program {
            n,
            nodes,
            edges,
            hypers,
            box_radius,
            adjacency,
            hyper_incidence,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node(&self, i: usize) -> &NodeTerm {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn hypers(&self) -> &[Hyper] {
        &self.hypers
    }

    pub fn box_radius(&self) -> Option<f64> {
        self.box_radius
    }

    /// Neighbors of `i` through pairwise factors: `(neighbor, edge index)`,
    /// sorted by neighbor. This ordering fixes message-summation order
    /// everywhere, which keeps runs bit-reproducible.
    pub fn adjacency(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    /// Indices of hyper factors whose scope contains `i`.
    pub fn hyper_incidence(&self, i: usize) -> &[usize] {
        &self.hyper_incidence[i]
    }

    /// Number of directed pairwise edges (two per undirected edge).
    pub fn num_directed_edges(&self) -> usize {
        2 * self.edges.len()
    }

    /// Directed edge `d` as `(from, to, edge index, sender_is_i)`.
    ///
    /// Edge `e` owns directed ids `2e` (`i -> j`) and `2e + 1` (`j -> i`).
    pub fn directed_edge(&self, d: usize) -> (usize, usize, usize, bool) {
        let e = d / 2;
        let edge = &self.edges[e];
        if d % 2 == 0 {
            (edge.i, edge.j, e, true)
        } else {
            (edge.j, edge.i, e, false)
        }
    }

    /// Directed id of edge `e` in the direction `from -> to`.
    pub fn directed_id(&self, e: usize, from: usize) -> usize {
        if self.edges[e].i == from {
            2 * e
        } else {
            2 * e + 1
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.n {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.n,
                got: x.len(),
            })
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut v = 0.0;
        for (i, node) in self.nodes.iter().enumerate() {
            v += node.value(x[i]);
        }
        for e in &self.edges {
            v += e.term.value(x[e.i], x[e.j]);
        }
        for h in &self.hypers {
            let xc: Vec<f64> = h.scope.iter().map(|&v| x[v]).collect();
            v += h.term.value(&xc);
        }
        Ok(v)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.n];
        for (i, node) in self.nodes.iter().enumerate() {
            g[i] += node.d1(x[i]);
        }
        for e in &self.edges {
            let (gi, gj) = e.term.grad(x[e.i], x[e.j]);
            g[e.i] += gi;
            g[e.j] += gj;
        }
        for h in &self.hypers {
            let xc: Vec<f64> = h.scope.iter().map(|&v| x[v]).collect();
            for (&v, gv) in h.scope.iter().zip(h.term.grad(&xc)) {
                g[v] += gv;
            }
        }
        Ok(g)
    }

    /// Row `i` of the Hessian at `x`: the diagonal entry plus one entry per
    /// structurally coupled variable (present even when numerically zero),
    /// sorted by column.
    pub fn hessian_row(&self, i: usize, x: &[f64]) -> Result<(f64, Vec<(usize, f64)>)> {
        self.check_dim(x)?;
        if i >= self.n {
            return Err(Error::InvalidProgram(format!(
                "hessian_row index {i} out of range for n={}",
                self.n
            )));
        }
        let mut diag = self.nodes[i].d2(x[i]);
        let mut off: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, e) in &self.adjacency[i] {
            let edge = &self.edges[e];
            let (h_ii, h_ij, h_jj) = edge.term.hess(x[edge.i], x[edge.j]);
            diag += if edge.i == i { h_ii } else { h_jj };
            *off.entry(j).or_insert(0.0) += h_ij;
        }
        for &hidx in &self.hyper_incidence[i] {
            let h = &self.hypers[hidx];
            let k = h.scope.len();
            let pos = h.scope.iter().position(|&v| v == i).expect("incidence");
            let q = h.term.q_matrix(k);
            diag += q[(pos, pos)];
            for (u, &v) in h.scope.iter().enumerate() {
                if u != pos {
                    *off.entry(v).or_insert(0.0) += q[(pos, u)];
                }
            }
        }
        Ok((diag, off.into_iter().collect()))
    }

    pub fn hessian_dense(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let mut h = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (diag, off) = self.hessian_row(i, x)?;
            h[(i, i)] = diag;
            for (j, v) in off {
                h[(i, j)] = v;
            }
        }
        Ok(h)
    }

    /// True when every factor is exactly quadratic, i.e. the Hessian is
    /// constant and the quadratic-message engine is exact.
    pub fn is_all_quadratic(&self) -> bool {
        self.nodes.iter().all(|t| t.as_exact_quadratic().is_some())
            && self.edges.iter().all(|e| e.term.is_quadratic())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// On-disk JSON form. `Program` serializes through this record layout.
#[derive(Serialize, Deserialize)]
struct ProblemFile {
    n: usize,
    node_factors: Vec<NodeRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edge_factors: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hyper_factors: Vec<HyperRecord>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    box_radius: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    var: usize,
    #[serde(flatten)]
    term: NodeTerm,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    i: usize,
    j: usize,
    #[serde(flatten)]
    term: EdgeTerm,
}

#[derive(Serialize, Deserialize)]
struct HyperRecord {
    scope: Vec<usize>,
    #[serde(flatten)]
    term: HyperTerm,
}

impl TryFrom<ProblemFile> for Program {
    type Error = Error;

    fn try_from(f: ProblemFile) -> Result<Self> {
        Program::new(
            f.n,
            f.node_factors.into_iter().map(|r| (r.var, r.term)).collect(),
            f.edge_factors
                .into_iter()
                .map(|r| Edge { i: r.i, j: r.j, term: r.term })
                .collect(),
            f.hyper_factors
                .into_iter()
                .map(|r| Hyper { scope: r.scope, term: r.term })
                .collect(),
            f.box_radius,
        )
    }
}

impl From<Program> for ProblemFile {
    fn from(p: Program) -> Self {
        ProblemFile {
            n: p.n,
            node_factors: p
                .nodes
                .into_iter()
                .enumerate()
                .map(|(var, term)| NodeRecord { var, term })
                .collect(),
            edge_factors: p
                .edges
                .into_iter()
                .map(|e| EdgeRecord { i: e.i, j: e.j, term: e.term })
                .collect(),
            hyper_factors: p
                .hypers
                .into_iter()
                .map(|h| HyperRecord { scope: h.scope, term: h.term })
                .collect(),
            box_radius: p.box_radius,
        }
    }
}
