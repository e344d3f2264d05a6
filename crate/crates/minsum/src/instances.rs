//! Canonical example programs used across tests, docs, and benchmarks.

use crate::model::{Edge, EdgeTerm, Hyper, HyperTerm, NodeTerm, Program};

/// `1/2 (x - b)^2` expanded; the constant keeps objective values exact.
pub fn tilted_quadratic(b: f64) -> NodeTerm {
    NodeTerm::Quadratic { q: 1.0, l: -b, c0: 0.5 * b * b }
}

/// Path of 3 with `f_i = 1/2 (x_i - b_i)^2`, `b = (1, 0, -1)`, and
/// `f_ij = 0.125 (x_i - x_j)^2`. Minimizer `(0.8, 0, -0.8)`.
pub fn chain3() -> Program {
    Program::new(
        3,
        vec![
            (0, tilted_quadratic(1.0)),
            (1, tilted_quadratic(0.0)),
            (2, tilted_quadratic(-1.0)),
        ],
        vec![
            Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.25 } },
            Edge { i: 1, j: 2, term: EdgeTerm::QuadraticCoupling { c: 0.25 } },
        ],
        vec![],
        Some(2.0),
    )
    .expect("valid by construction")
}

/// Path of 3 with `f_i = 1/2 x_i^2` and `f_ij = ln cosh(x_i - x_j)`.
/// Minimizer is the origin; box-sampled dominance holds on `[-2, 2]^3`.
pub fn logcosh_chain() -> Program {
    Program::new(
        3,
        vec![
            (0, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            (1, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
            (2, NodeTerm::Quadratic { q: 1.0, l: 0.0, c0: 0.0 }),
        ],
        vec![
            Edge { i: 0, j: 1, term: EdgeTerm::LogCoshCoupling { a: 1.0, b: 1.0 } },
            Edge { i: 1, j: 2, term: EdgeTerm::LogCoshCoupling { a: 1.0, b: 1.0 } },
        ],
        vec![],
        Some(2.0),
    )
    .expect("valid by construction")
}

/// Path of 3 with `f_i = 1/2 (x_i - b_i)^2`, `b = (1, 0, -1)`, and
/// `f_ij = 1/4 (x_i - x_j)^4`. The minimizer is `(s, 0, -s)` where
/// `s^3 + s = 1`.
pub fn quartic_chain() -> Program {
    Program::new(
        3,
        vec![
            (0, tilted_quadratic(1.0)),
            (1, tilted_quadratic(0.0)),
            (2, tilted_quadratic(-1.0)),
        ],
        vec![
            Edge { i: 0, j: 1, term: EdgeTerm::QuarticCoupling { c: 1.0 } },
            Edge { i: 1, j: 2, term: EdgeTerm::QuarticCoupling { c: 1.0 } },
        ],
        vec![],
        Some(2.0),
    )
    .expect("valid by construction")
}

/// Real root of `s^3 + s = 1`: the outer coordinates of
/// [`quartic_chain`]'s minimizer.
pub fn quartic_chain_root() -> f64 {
    // Newton on s^3 + s - 1 from 0.7; converges to machine precision.
    let mut s = 0.7_f64;
    for _ in 0..60 {
        let f = s * s * s + s - 1.0;
        let d = 3.0 * s * s + 1.0;
        let next = s - f / d;
        if (next - s).abs() < 1e-16 {
            return next;
        }
        s = next;
    }
    s
}

/// Five variables, two 3-variable quadratic factors on scopes `{0,1,2}` and
/// `{2,3,4}`. The scopes share only vertex 2, so no vertex pair lies in two
/// factors, and each block is strictly row dominant.
pub fn hyper_two_factors() -> Program {
    let block = vec![
        vec![1.0, -0.3, -0.3],
        vec![-0.3, 1.0, -0.3],
        vec![-0.3, -0.3, 1.0],
    ];
    Program::new(
        5,
        vec![
            (0, tilted_quadratic(1.0)),
            (1, tilted_quadratic(0.0)),
            (2, tilted_quadratic(-1.0)),
            (3, tilted_quadratic(0.0)),
            (4, tilted_quadratic(1.0)),
        ],
        vec![],
        vec![
            Hyper { scope: vec![0, 1, 2], term: HyperTerm::QuadraticFormK { matrix: block.clone() } },
            Hyper { scope: vec![2, 3, 4], term: HyperTerm::QuadraticFormK { matrix: block } },
        ],
        Some(2.0),
    )
    .expect("valid by construction")
}

/// One factor of every catalog kind; used for derivative cross-checks.
pub fn kitchen_sink() -> Program {
    Program::new(
        4,
        vec![
            (
                0,
                NodeTerm::Sum {
                    terms: vec![
                        NodeTerm::Quadratic { q: 2.0, l: -1.0, c0: 0.0 },
                        NodeTerm::LogCosh { a: 0.5, b: 1.3, shift: 0.2 },
                    ],
                },
            ),
            (1, NodeTerm::EvenQuartic { c: 0.8, shift: -0.4 }),
            (2, NodeTerm::LogCosh { a: 1.1, b: 0.9, shift: -0.3 }),
            (3, NodeTerm::Quadratic { q: 1.5, l: 0.7, c0: 0.25 }),
        ],
        vec![
            Edge { i: 0, j: 1, term: EdgeTerm::QuadraticCoupling { c: 0.6 } },
            Edge { i: 1, j: 2, term: EdgeTerm::LogCoshCoupling { a: 0.7, b: 1.1 } },
            Edge { i: 2, j: 3, term: EdgeTerm::QuarticCoupling { c: 0.5 } },
            Edge { i: 0, j: 3, term: EdgeTerm::QuadraticForm { q_ii: 1.0, q_ij: -0.6, q_jj: 0.5 } },
        ],
        vec![
            Hyper {
                scope: vec![0, 2, 3],
                term: HyperTerm::SquaredSpan { c: 0.4, weights: vec![1.0, -2.0, 0.5] },
            },
            Hyper {
                scope: vec![1, 2, 3],
                term: HyperTerm::QuadraticFormK {
                    matrix: vec![
                        vec![1.0, 0.3, 0.0],
                        vec![0.3, 0.5, 0.1],
                        vec![0.0, 0.1, 0.4],
                    ],
                },
            },
        ],
        Some(2.0),
    )
    .expect("valid by construction")
}
