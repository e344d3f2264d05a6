//! Analysis instruments for the pairwise engine: computation trees (the
//! unrolled local optimization an estimate actually solves), the stationary
//! tilt vector that measures how far an initialization is from the fixed
//! point, and the geometric error bound assembled from a dominance
//! certificate.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::baselines::{newton_minimize, Objective};
use crate::dominance::DominanceCertificate;
use crate::model::Program;
use crate::quadratic::{initial_message, update_message, EdgeModel, QuadraticMessage};
use crate::sampling::halton_box;
use crate::trace::BoundParams;
use crate::{Error, Result};

/// One vertex copy in a computation tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeNode {
    /// Original-program variable this copy stands for.
    pub label: usize,
    /// Tree index of the parent (None for the root).
    pub parent: Option<usize>,
    /// Original edge joining `label` to the parent's label.
    pub parent_edge: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

/// The depth-`t` unrolling of a pairwise program from a root: one node per
/// non-backtracking walk of length <= t, plus single-variable attachments
/// standing in for the messages cut off at the frontier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputationTree {
    /// Breadth-first order; index 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub depth: usize,
    pub root_label: usize,
    /// `(tree node, original sender u, message)`: the initial message from
    /// `u` into the node's label, attached at frontier nodes.
    pub attachments: Vec<(usize, usize, QuadraticMessage)>,
}

/// Unroll `program` from `root` to depth `t`. A node at depth < t gets one
/// child per neighbor of its label except the parent label; nodes at depth
/// exactly t carry the corresponding initial messages as attachments
/// instead. At t = 0 the root itself is the frontier, so it carries all its
/// initial incoming messages and the tree minimum reproduces the engine's
/// iteration-0 estimate.
pub fn build_tree(program: &Program, root: usize, t: usize) -> Result<ComputationTree> {
    if !program.hypers().is_empty() {
        return Err(Error::Unsupported(
            "computation trees are defined for pairwise programs".into(),
        ));
    }
    if root >= program.n() {
        return Err(Error::InvalidProgram(format!(
            "root {root} out of range for {} variables",
            program.n()
        )));
    }

    let mut nodes = vec![TreeNode {
        label: root,
        parent: None,
        parent_edge: None,
        children: Vec::new(),
        depth: 0,
    }];
    let mut attachments = Vec::new();
    let mut frontier = 0usize; // nodes[frontier..] not yet expanded
    while frontier < nodes.len() {
        let idx = frontier;
        frontier += 1;
        let (label, depth, parent_label) = {
            let node = &nodes[idx];
            let parent_label = node.parent.map(|p| nodes[p].label);
            (node.label, node.depth, parent_label)
        };
        for &(u, e) in program.adjacency(label) {
            if Some(u) == parent_label {
                continue;
            }
            if depth < t {
                let child = nodes.len();
                nodes.push(TreeNode {
                    label: u,
                    parent: Some(idx),
                    parent_edge: Some(e),
                    children: Vec::new(),
                    depth: depth + 1,
                });
                nodes[idx].children.push(child);
            } else {
                let sender_is_i = program.edges()[e].i == u;
                attachments.push((idx, u, initial_message(&program.edges()[e].term, sender_is_i)));
            }
        }
    }

    Ok(ComputationTree { nodes, depth: t, root_label: root, attachments })
}

/// The tree objective: node factors by label, the parent edges, and the
/// attachment quadratics. Samples and solves see exactly what one engine
/// estimate optimizes.
pub struct TreeObjective<'a> {
    pub tree: &'a ComputationTree,
    pub program: &'a Program,
}

impl TreeObjective<'_> {
    fn attachment_terms(&self, i: usize) -> impl Iterator<Item = &QuadraticMessage> {
        self.tree
            .attachments
            .iter()
            .filter(move |(node, _, _)| *node == i)
            .map(|(_, _, m)| m)
    }

    /// Edge coordinates in factor order: (x_i-side, x_j-side) for the edge
    /// between tree node `c` and its parent.
    fn edge_args(&self, c: usize, x: &[f64]) -> (usize, f64, f64) {
        let node = &self.tree.nodes[c];
        let e = node.parent_edge.expect("non-root");
        let p = node.parent.expect("non-root");
        if self.program.edges()[e].i == node.label {
            (e, x[c], x[p])
        } else {
            (e, x[p], x[c])
        }
    }
}

impl Objective for TreeObjective<'_> {
    fn dim(&self) -> usize {
        self.tree.nodes.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let mut v = 0.0;
        for (i, node) in self.tree.nodes.iter().enumerate() {
            v += self.program.node(node.label).value(x[i]);
            for m in self.attachment_terms(i) {
                v += 0.5 * m.a * x[i] * x[i] + m.b * x[i];
            }
            if node.parent.is_some() {
                let (e, xi, xj) = self.edge_args(i, x);
                v += self.program.edges()[e].term.value(xi, xj);
            }
        }
        Ok(v)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let mut g = vec![0.0; self.dim()];
        for (i, node) in self.tree.nodes.iter().enumerate() {
            g[i] += self.program.node(node.label).d1(x[i]);
            for m in self.attachment_terms(i) {
                g[i] += m.a * x[i] + m.b;
            }
            if let Some(p) = node.parent {
                let (e, xi, xj) = self.edge_args(i, x);
                let (gi, gj) = self.program.edges()[e].term.grad(xi, xj);
                let (gc, gp) = if self.program.edges()[e].i == node.label {
                    (gi, gj)
                } else {
                    (gj, gi)
                };
                g[i] += gc;
                g[p] += gp;
            }
        }
        Ok(g)
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for (i, node) in self.tree.nodes.iter().enumerate() {
            h[(i, i)] += self.program.node(node.label).d2(x[i]);
            for m in self.attachment_terms(i) {
                h[(i, i)] += m.a;
            }
            if let Some(p) = node.parent {
                let (e, xi, xj) = self.edge_args(i, x);
                let (hii, hij, hjj) = self.program.edges()[e].term.hess(xi, xj);
                let (hc, hp) = if self.program.edges()[e].i == node.label {
                    (hii, hjj)
                } else {
                    (hjj, hii)
                };
                h[(i, i)] += hc;
                h[(p, p)] += hp;
                h[(i, p)] += hij;
                h[(p, i)] += hij;
            }
        }
        Ok(h)
    }
}

/// Minimize the tree objective and return the value at every tree node.
/// All-quadratic programs are solved exactly by leaf-to-root elimination
/// (the same arithmetic as a message update); anything else goes through
/// damped Newton.
pub fn solve_tree(tree: &ComputationTree, program: &Program) -> Result<Vec<f64>> {
    if program.is_all_quadratic() {
        return solve_tree_quadratic(tree, program);
    }
    let obj = TreeObjective { tree, program };
    let report = newton_minimize(&obj, &vec![0.0; obj.dim()], 1e-12)?;
    // Newton may stop a hair above the requested tolerance when the
    // objective flattens below rounding; only a genuinely large residual
    // means the solve failed.
    if report.grad_norm > 1e-8 {
        return Err(Error::NumericFailure(format!(
            "tree solve stalled at gradient norm {}",
            report.grad_norm
        )));
    }
    Ok(report.x)
}

fn solve_tree_quadratic(tree: &ComputationTree, program: &Program) -> Result<Vec<f64>> {
    let n = tree.nodes.len();
    // Accumulated local quadratic 1/2 A x^2 + B x at each node.
    let mut acc_a = vec![0.0; n];
    let mut acc_b = vec![0.0; n];
    for (i, node) in tree.nodes.iter().enumerate() {
        let (q, l) = program
            .node(node.label)
            .as_exact_quadratic()
            .ok_or_else(|| Error::Unsupported("non-quadratic node factor".into()))?;
        acc_a[i] = q;
        acc_b[i] = l;
    }
    for (i, _, m) in &tree.attachments {
        acc_a[*i] += m.a;
        acc_b[*i] += m.b;
    }

    // Upward pass in reverse breadth-first order: every child is eliminated
    // into its parent exactly like a message update.
    let mut sender = vec![(0.0, 0.0, 0.0); n]; // (curvature s, linear, cross) per non-root node
    for i in (1..n).rev() {
        let node = &tree.nodes[i];
        let e = node.parent_edge.expect("non-root");
        let p = node.parent.expect("non-root");
        let sender_is_i = program.edges()[e].i == node.label;
        let model = EdgeModel::at(&program.edges()[e].term, 0.0, 0.0).oriented(sender_is_i);
        let msg = update_message(acc_a[i], acc_b[i], &model, 0.0, 0.0)?;
        acc_a[p] += msg.a;
        acc_b[p] += msg.b;
        sender[i] = (
            acc_a[i] + model.q_send,
            acc_b[i] + model.lin_send,
            model.q_cross,
        );
    }

    // Downward pass: condition each child on its parent's value.
    let mut x = vec![0.0; n];
    if acc_a[0] <= 0.0 {
        return Err(Error::DegenerateCurvature(format!(
            "tree root curvature {} is not positive",
            acc_a[0]
        )));
    }
    x[0] = -acc_b[0] / acc_a[0];
    for i in 1..n {
        let p = tree.nodes[i].parent.expect("non-root");
        let (s, l, cross) = sender[i];
        if s <= 0.0 {
            return Err(Error::DegenerateCurvature(format!(
                "tree node curvature {s} is not positive"
            )));
        }
        x[i] = -(l + cross * x[p]) / s;
    }
    Ok(x)
}

/// DOT rendering of a tree: one node per vertex copy, edges parent -> child.
pub fn tree_to_dot(tree: &ComputationTree) -> String {
    let mut out = String::from("digraph computation_tree {\n");
    for (i, node) in tree.nodes.iter().enumerate() {
        let role = if node.parent.is_none() { " (root)" } else { "" };
        out.push_str(&format!("  n{} [label=\"v{}{}\"];\n", i, node.label, role));
    }
    for (i, node) in tree.nodes.iter().enumerate() {
        for &c in &node.children {
            out.push_str(&format!("  n{} -> n{};\n", i, c));
        }
    }
    out.push_str("}\n");
    out
}

/// Check that a certificate for the original program transfers to the tree
/// objective: the row condition with weights assigned by label, sampled at
/// low-discrepancy points of the per-variable `box_` (indexed by original
/// variable). Returns false on the first violated row.
pub fn check_tree_dominance(
    tree: &ComputationTree,
    program: &Program,
    cert: &DominanceCertificate,
    box_: &[(f64, f64)],
    samples: usize,
) -> Result<bool> {
    if cert.w.len() != program.n() {
        return Err(Error::Dimension { expected: program.n(), got: cert.w.len() });
    }
    if box_.len() != program.n() {
        return Err(Error::Dimension { expected: program.n(), got: box_.len() });
    }
    let obj = TreeObjective { tree, program };
    let n = obj.dim();
    let bounds: Vec<(f64, f64)> = tree.nodes.iter().map(|node| box_[node.label]).collect();
    let w: Vec<f64> = tree.nodes.iter().map(|node| cert.w[node.label]).collect();
    for x in halton_box(&bounds, samples.max(1), 1) {
        let h = obj.hessian(&x)?;
        for i in 0..n {
            if !(h[(i, i)] > 0.0) {
                return Ok(false);
            }
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| w[j] * h[(i, j)].abs()).sum();
            if s > cert.lambda * w[i] * h[(i, i)] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// The per-channel linear tilt that would make the given initialization
/// exactly stationary at `x_star`: for each directed edge (u, v),
///
/// ```text
/// tilt_{u->v} = d f_uv / d x_v (x*_u, x*_v) - d J0_{u->v} / d x_v (x*_v)
/// ```
///
/// Adding these tilts to the initial messages pins every estimate to
/// `x_star` from iteration 0 on (exactly on quadratic programs).
pub fn stationary_tilts(
    program: &Program,
    x_star: &[f64],
    messages: &[QuadraticMessage],
) -> Result<Vec<f64>> {
    if !program.hypers().is_empty() {
        return Err(Error::Unsupported(
            "stationary tilts over directed edges are defined for pairwise programs".into(),
        ));
    }
    if x_star.len() != program.n() {
        return Err(Error::Dimension { expected: program.n(), got: x_star.len() });
    }
    if messages.len() != program.num_directed_edges() {
        return Err(Error::Dimension {
            expected: program.num_directed_edges(),
            got: messages.len(),
        });
    }
    let mut tilts = Vec::with_capacity(messages.len());
    for d in 0..program.num_directed_edges() {
        let (_, to, e, sender_is_i) = program.directed_edge(d);
        let edge = &program.edges()[e];
        let (gi, gj) = edge.term.grad(x_star[edge.i], x_star[edge.j]);
        let to_partial = if sender_is_i { gj } else { gi };
        tilts.push(to_partial - messages[d].slope_at(x_star[to]));
    }
    Ok(tilts)
}

/// Total first-order mismatch of an initialization at `x_star`: the sum of
/// absolute stationary tilts over all directed edges. This is the constant
/// the geometric error bound scales.
pub fn initialization_gap(
    program: &Program,
    x_star: &[f64],
    messages: &[QuadraticMessage],
) -> Result<f64> {
    Ok(stationary_tilts(program, x_star, messages)?
        .iter()
        .map(|p| p.abs())
        .sum())
}

/// Bound parameters `K lambda^t / (1 - lambda) * gap` assembled from a
/// certificate and an initialization.
pub fn bound_params(
    program: &Program,
    cert: &DominanceCertificate,
    x_star: &[f64],
    messages: &[QuadraticMessage],
) -> Result<BoundParams> {
    Ok(BoundParams {
        k: cert.k,
        lambda: cert.lambda,
        gap: initialization_gap(program, x_star, messages)?,
    })
}

/// The error bound at iteration `t`.
pub fn error_bound(
    program: &Program,
    cert: &DominanceCertificate,
    x_star: &[f64],
    messages: &[QuadraticMessage],
    t: usize,
) -> Result<f64> {
    Ok(bound_params(program, cert, x_star, messages)?.value(t))
}
