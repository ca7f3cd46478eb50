//! Bundled model and log fixtures used by tests, benchmarks and the CLI.
//!
//! The trees realize the worked examples of the underlying formalism: three
//! small stochastic languages and their composition under each operator, the
//! six-activity example tree, and the three-activity incident-management
//! tree with nine branching parameters.

use crate::lang::{act, EventLog, Trace};
use crate::prob::Prob;
use crate::tree::{PlainTree, SptNode};

fn leaf<P: Prob>(name: &str) -> SptNode<P> {
    SptNode::Leaf(act(name))
}

/// Q1: language {<a,b>: 1/4, <b,a>: 3/4}.
pub fn demo_ab<P: Prob>() -> SptNode<P> {
    SptNode::choice(
        vec![
            SptNode::Sequence(vec![leaf("a"), leaf("b")]),
            SptNode::Sequence(vec![leaf("b"), leaf("a")]),
        ],
        vec![P::ratio(1, 4), P::ratio(3, 4)],
    )
}

/// Q2: language {<c>: 1}.
pub fn demo_c<P: Prob>() -> SptNode<P> {
    leaf("c")
}

/// Q3: language {<d>: 1/2, <e>: 1/2}.
pub fn demo_de<P: Prob>() -> SptNode<P> {
    SptNode::choice(
        vec![leaf("d"), leaf("e")],
        vec![P::ratio(1, 2), P::ratio(1, 2)],
    )
}

/// seq(Q1, Q2, Q3).
pub fn demo_sequence<P: Prob>() -> SptNode<P> {
    SptNode::Sequence(vec![demo_ab(), demo_c(), demo_de()])
}

/// xor[1/5, 4/5](Q1, Q3).
pub fn demo_choice<P: Prob>() -> SptNode<P> {
    SptNode::choice(
        vec![demo_ab(), demo_de()],
        vec![P::ratio(1, 5), P::ratio(4, 5)],
    )
}

/// par[1/3, 2/3](Q1, Q2).
pub fn demo_parallel<P: Prob>() -> SptNode<P> {
    SptNode::parallel(
        vec![demo_ab(), demo_c()],
        vec![P::ratio(1, 3), P::ratio(2, 3)],
    )
}

/// loop[2/5](Q2, Q1): body Q2, redo Q1.
pub fn demo_loop<P: Prob>() -> SptNode<P> {
    SptNode::looped(demo_c(), demo_ab(), P::ratio(2, 5))
}

/// The six-activity example tree seq(par(xor(a,b),loop(c,tau)),d,xor(e,f)).
pub fn example_tree_plain() -> PlainTree {
    PlainTree::Sequence(vec![
        PlainTree::Parallel(vec![
            PlainTree::Choice(vec![PlainTree::Leaf(act("a")), PlainTree::Leaf(act("b"))]),
            PlainTree::looped(PlainTree::Leaf(act("c")), PlainTree::Tau),
        ]),
        PlainTree::Leaf(act("d")),
        PlainTree::Choice(vec![PlainTree::Leaf(act("e")), PlainTree::Leaf(act("f"))]),
    ])
}

/// The example tree with explicit parameters: choice a/b, the parallel pair,
/// the loop-back probability and the choice e/f.
pub fn example_tree(p_ab: f64, p_par: f64, p_loop: f64, p_ef: f64) -> SptNode<f64> {
    SptNode::Sequence(vec![
        SptNode::parallel(
            vec![
                SptNode::choice(vec![leaf("a"), leaf("b")], vec![p_ab, 1.0 - p_ab]),
                SptNode::looped(leaf("c"), SptNode::Tau, p_loop),
            ],
            vec![p_par, 1.0 - p_par],
        ),
        leaf("d"),
        SptNode::choice(vec![leaf("e"), leaf("f")], vec![p_ef, 1.0 - p_ef]),
    ])
}

pub fn example_tree_uniform() -> SptNode<f64> {
    example_tree(0.5, 0.5, 0.5, 0.5)
}

/// The incident-management tree over activities A (accepted), Q (queued),
/// C (completed): par(xor(par(xor(loop(Q,tau),tau),xor(loop(C,tau),tau)),tau),
/// xor(tau,loop(A,tau))).
pub fn incident_tree_plain() -> PlainTree {
    let optional_loop = |name: &str| {
        PlainTree::Choice(vec![
            PlainTree::looped(PlainTree::Leaf(act(name)), PlainTree::Tau),
            PlainTree::Tau,
        ])
    };
    PlainTree::Parallel(vec![
        PlainTree::Choice(vec![
            PlainTree::Parallel(vec![optional_loop("Q"), optional_loop("C")]),
            PlainTree::Tau,
        ]),
        PlainTree::Choice(vec![
            PlainTree::Tau,
            PlainTree::looped(PlainTree::Leaf(act("A")), PlainTree::Tau),
        ]),
    ])
}

/// The incident-management tree with its nine branching parameters, one per
/// probability-bearing operator in figure order: root parallel, upper choice,
/// right choice (tau first), inner parallel, A-loop, Q-side choice, C-side
/// choice, Q-loop, C-loop.
pub fn incident_tree(p: &[f64; 9]) -> SptNode<f64> {
    let optional_loop = |name: &str, p_pick: f64, p_loop: f64| {
        SptNode::choice(
            vec![
                SptNode::looped(leaf(name), SptNode::Tau, p_loop),
                SptNode::Tau,
            ],
            vec![p_pick, 1.0 - p_pick],
        )
    };
    SptNode::parallel(
        vec![
            SptNode::choice(
                vec![
                    SptNode::parallel(
                        vec![optional_loop("Q", p[5], p[7]), optional_loop("C", p[6], p[8])],
                        vec![p[3], 1.0 - p[3]],
                    ),
                    SptNode::Tau,
                ],
                vec![p[1], 1.0 - p[1]],
            ),
            SptNode::choice(
                vec![
                    SptNode::Tau,
                    SptNode::looped(leaf("A"), SptNode::Tau, p[4]),
                ],
                vec![p[2], 1.0 - p[2]],
            ),
        ],
        vec![p[0], 1.0 - p[0]],
    )
}

pub fn incident_tree_uniform() -> SptNode<f64> {
    incident_tree(&[0.5; 9])
}

/// The six-trace example log fitting the example tree (one trace occurs twice).
pub fn example_log() -> EventLog {
    EventLog::from_entries([
        (Trace::of(&["a", "c", "d", "e"]), 1),
        (Trace::of(&["b", "c", "d", "e"]), 1),
        (Trace::of(&["c", "b", "d", "f"]), 2),
        (Trace::of(&["a", "c", "c", "d", "e"]), 1),
        (Trace::of(&["c", "c", "a", "d", "f"]), 1),
    ])
    .unwrap()
}

/// Tiny two-variant log used by CLI smoke tests.
pub fn toy_log() -> EventLog {
    EventLog::from_entries([
        (Trace::of(&["a", "b"]), 2),
        (Trace::of(&["b", "a"]), 1),
    ])
    .unwrap()
}
