//! Process trees and stochastic process trees: data model, validation,
//! text grammar, annotation policies and the plain (set) language.
//!
//! Grammar:
//! ```text
//! tree := leaf
//!       | "seq" "(" tree { "," tree } ")"
//!       | ("xor" | "par") "[" prob { "," prob } "]" "(" tree { "," tree } ")"
//!       | "loop" "[" prob "]" "(" tree "," tree ")"
//! leaf := identifier | "tau"
//! ```
//! Plain trees use the same operator syntax without the bracketed
//! probability lists.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lang::{concat_sets, interleave_sets, Activity, Trace};
use crate::prob::{Prob, EPS_NORM};

/// Slack accepted when re-reading probability vectors that were printed with
/// six significant digits; vectors within this slack are renormalized.
const PARSE_SUM_SLACK: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("probabilities sum to {sum} (expected 1) at byte {pos}")]
    ProbSum { pos: usize, sum: f64 },
    #[error("operator {op} needs at least 2 children")]
    Arity { op: &'static str },
    #[error("loop takes exactly 2 children")]
    LoopArity,
    #[error("{op} carries {probs} probabilities for {children} children")]
    ProbLen { op: &'static str, probs: usize, children: usize },
    #[error("probability {p} out of [0,1]")]
    ProbRange { p: f64 },
    #[error("probability vector sums to {sum}, expected 1")]
    BadSimplex { sum: f64 },
    #[error("parallel operator carries a zero probability; every branch must be selectable")]
    ZeroParallelWeight,
    #[error("tree mixes stochastic and plain operator nodes")]
    MixedAnnotation,
    #[error("expected a stochastic tree but found a plain one")]
    ExpectedStochastic,
    #[error("expected a plain tree but found a stochastic one")]
    ExpectedPlain,
}

/// Stochastic process tree node. `P` is the probability representation.
#[derive(Clone, Debug, PartialEq)]
pub enum SptNode<P: Prob = f64> {
    Leaf(Activity),
    Tau,
    Sequence(Vec<SptNode<P>>),
    Choice {
        children: Vec<SptNode<P>>,
        probs: Vec<P>,
    },
    Parallel {
        children: Vec<SptNode<P>>,
        probs: Vec<P>,
    },
    Loop {
        body: Box<SptNode<P>>,
        redo: Box<SptNode<P>>,
        p_loop: P,
    },
}

/// Process tree without probability parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlainTree {
    Leaf(Activity),
    Tau,
    Sequence(Vec<PlainTree>),
    Choice(Vec<PlainTree>),
    Parallel(Vec<PlainTree>),
    Loop(Box<PlainTree>, Box<PlainTree>),
}

/// Address of a node: child indices from the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodePath(pub Vec<u16>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, idx: u16) -> Self {
        let mut v = self.0.clone();
        v.push(idx);
        NodePath(v)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

fn check_simplex<P: Prob>(op: &'static str, children: usize, probs: &[P]) -> Result<(), TreeError> {
    if probs.len() != children {
        return Err(TreeError::ProbLen {
            op,
            probs: probs.len(),
            children,
        });
    }
    let mut sum = P::zero();
    for p in probs {
        if *p < P::zero() || *p > P::one() {
            return Err(TreeError::ProbRange { p: p.to_f64() });
        }
        sum = sum + p.clone();
    }
    if !P::sum_is_one(&sum) {
        return Err(TreeError::BadSimplex { sum: sum.to_f64() });
    }
    Ok(())
}

impl<P: Prob> SptNode<P> {
    pub fn choice(children: Vec<SptNode<P>>, probs: Vec<P>) -> Self {
        SptNode::Choice { children, probs }
    }

    pub fn parallel(children: Vec<SptNode<P>>, probs: Vec<P>) -> Self {
        SptNode::Parallel { children, probs }
    }

    pub fn looped(body: SptNode<P>, redo: SptNode<P>, p_loop: P) -> Self {
        SptNode::Loop {
            body: Box::new(body),
            redo: Box::new(redo),
            p_loop,
        }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        match self {
            SptNode::Leaf(_) | SptNode::Tau => Ok(()),
            SptNode::Sequence(children) => {
                if children.len() < 2 {
                    return Err(TreeError::Arity { op: "seq" });
                }
                children.iter().try_for_each(SptNode::validate)
            }
            SptNode::Choice { children, probs } => {
                if children.len() < 2 {
                    return Err(TreeError::Arity { op: "xor" });
                }
                check_simplex("xor", children.len(), probs)?;
                children.iter().try_for_each(SptNode::validate)
            }
            SptNode::Parallel { children, probs } => {
                if children.len() < 2 {
                    return Err(TreeError::Arity { op: "par" });
                }
                check_simplex("par", children.len(), probs)?;
                if probs.iter().any(P::is_zero) {
                    return Err(TreeError::ZeroParallelWeight);
                }
                children.iter().try_for_each(SptNode::validate)
            }
            SptNode::Loop { body, redo, p_loop } => {
                if *p_loop < P::zero() || *p_loop > P::one() {
                    return Err(TreeError::ProbRange { p: p_loop.to_f64() });
                }
                body.validate()?;
                redo.validate()
            }
        }
    }

    /// Drops all probability parameters.
    pub fn strip(&self) -> PlainTree {
        match self {
            SptNode::Leaf(a) => PlainTree::Leaf(a.clone()),
            SptNode::Tau => PlainTree::Tau,
            SptNode::Sequence(c) => PlainTree::Sequence(c.iter().map(SptNode::strip).collect()),
            SptNode::Choice { children, .. } => {
                PlainTree::Choice(children.iter().map(SptNode::strip).collect())
            }
            SptNode::Parallel { children, .. } => {
                PlainTree::Parallel(children.iter().map(SptNode::strip).collect())
            }
            SptNode::Loop { body, redo, .. } => {
                PlainTree::Loop(Box::new(body.strip()), Box::new(redo.strip()))
            }
        }
    }

    pub fn param_counts(&self) -> ParamCounts {
        self.strip().param_counts()
    }

    /// Converts the probability representation.
    pub fn map_probs<Q: Prob>(&self, f: &impl Fn(&P) -> Q) -> SptNode<Q> {
        match self {
            SptNode::Leaf(a) => SptNode::Leaf(a.clone()),
            SptNode::Tau => SptNode::Tau,
            SptNode::Sequence(c) => SptNode::Sequence(c.iter().map(|n| n.map_probs(f)).collect()),
            SptNode::Choice { children, probs } => SptNode::Choice {
                children: children.iter().map(|n| n.map_probs(f)).collect(),
                probs: probs.iter().map(f).collect(),
            },
            SptNode::Parallel { children, probs } => SptNode::Parallel {
                children: children.iter().map(|n| n.map_probs(f)).collect(),
                probs: probs.iter().map(f).collect(),
            },
            SptNode::Loop { body, redo, p_loop } => SptNode::Loop {
                body: Box::new(body.map_probs(f)),
                redo: Box::new(redo.map_probs(f)),
                p_loop: f(p_loop),
            },
        }
    }
}

/// Free parameters (optimizer dimension) and labeled-arc parameters
/// (the counting used for model-size comparisons).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    /// n-1 per choice/parallel simplex plus 1 per loop.
    pub free: usize,
    /// n per choice/parallel plus 2 per loop (every labeled arc).
    pub arc: usize,
}

impl PlainTree {
    pub fn looped(body: PlainTree, redo: PlainTree) -> Self {
        PlainTree::Loop(Box::new(body), Box::new(redo))
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        match self {
            PlainTree::Leaf(_) | PlainTree::Tau => Ok(()),
            PlainTree::Sequence(c) => {
                if c.len() < 2 {
                    return Err(TreeError::Arity { op: "seq" });
                }
                c.iter().try_for_each(PlainTree::validate)
            }
            PlainTree::Choice(c) => {
                if c.len() < 2 {
                    return Err(TreeError::Arity { op: "xor" });
                }
                c.iter().try_for_each(PlainTree::validate)
            }
            PlainTree::Parallel(c) => {
                if c.len() < 2 {
                    return Err(TreeError::Arity { op: "par" });
                }
                c.iter().try_for_each(PlainTree::validate)
            }
            PlainTree::Loop(body, redo) => {
                body.validate()?;
                redo.validate()
            }
        }
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut counts = ParamCounts { free: 0, arc: 0 };
        fn walk(node: &PlainTree, counts: &mut ParamCounts) {
            match node {
                PlainTree::Leaf(_) | PlainTree::Tau => {}
                PlainTree::Sequence(c) => c.iter().for_each(|n| walk(n, counts)),
                PlainTree::Choice(c) | PlainTree::Parallel(c) => {
                    counts.free += c.len() - 1;
                    counts.arc += c.len();
                    c.iter().for_each(|n| walk(n, counts));
                }
                PlainTree::Loop(body, redo) => {
                    counts.free += 1;
                    counts.arc += 2;
                    walk(body, counts);
                    walk(redo, counts);
                }
            }
        }
        walk(self, &mut counts);
        counts
    }

    pub fn alphabet(&self) -> BTreeSet<Activity> {
        let mut out = BTreeSet::new();
        fn walk(node: &PlainTree, out: &mut BTreeSet<Activity>) {
            match node {
                PlainTree::Leaf(a) => {
                    out.insert(a.clone());
                }
                PlainTree::Tau => {}
                PlainTree::Sequence(c) | PlainTree::Choice(c) | PlainTree::Parallel(c) => {
                    c.iter().for_each(|n| walk(n, out))
                }
                PlainTree::Loop(b, r) => {
                    walk(b, out);
                    walk(r, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            PlainTree::Leaf(_) | PlainTree::Tau => 1,
            PlainTree::Sequence(c) | PlainTree::Choice(c) | PlainTree::Parallel(c) => {
                1 + c.iter().map(PlainTree::depth).max().unwrap_or(0)
            }
            PlainTree::Loop(b, r) => 1 + b.depth().max(r.depth()),
        }
    }

    pub fn loop_count(&self) -> usize {
        match self {
            PlainTree::Leaf(_) | PlainTree::Tau => 0,
            PlainTree::Sequence(c) | PlainTree::Choice(c) | PlainTree::Parallel(c) => {
                c.iter().map(PlainTree::loop_count).sum()
            }
            PlainTree::Loop(b, r) => 1 + b.loop_count() + r.loop_count(),
        }
    }

    /// All traces of the tree language with length at most `max_len`,
    /// loops unrolled until no continuation fits the bound.
    pub fn language_up_to(&self, max_len: usize) -> BTreeSet<Trace> {
        match self {
            PlainTree::Leaf(a) => {
                let mut s = BTreeSet::new();
                if max_len >= 1 {
                    s.insert(Trace::new(vec![a.clone()]));
                }
                s
            }
            PlainTree::Tau => BTreeSet::from([Trace::empty()]),
            PlainTree::Sequence(children) => {
                let mut acc = BTreeSet::from([Trace::empty()]);
                for child in children {
                    let child_lang = child.language_up_to(max_len);
                    acc = concat_sets(&acc, &child_lang);
                    acc.retain(|t| t.len() <= max_len);
                    if acc.is_empty() {
                        return acc;
                    }
                }
                acc
            }
            PlainTree::Choice(children) => children
                .iter()
                .flat_map(|c| c.language_up_to(max_len))
                .collect(),
            PlainTree::Parallel(children) => {
                let mut acc = BTreeSet::from([Trace::empty()]);
                for child in children {
                    let child_lang = child.language_up_to(max_len);
                    acc = interleave_sets(&acc, &child_lang);
                    acc.retain(|t| t.len() <= max_len);
                    if acc.is_empty() {
                        return acc;
                    }
                }
                acc
            }
            PlainTree::Loop(body, redo) => {
                let body_lang: BTreeSet<Trace> = body
                    .language_up_to(max_len)
                    .into_iter()
                    .filter(|t| t.len() <= max_len)
                    .collect();
                let redo_lang = redo.language_up_to(max_len);
                let mut acc = body_lang.clone();
                loop {
                    let mut grown = BTreeSet::new();
                    for prefix in &acc {
                        for r in &redo_lang {
                            if prefix.len() + r.len() > max_len {
                                continue;
                            }
                            let with_redo = prefix.concat(r);
                            for b in &body_lang {
                                if with_redo.len() + b.len() > max_len {
                                    continue;
                                }
                                let t = with_redo.concat(b);
                                if !acc.contains(&t) {
                                    grown.insert(t);
                                }
                            }
                        }
                    }
                    if grown.is_empty() {
                        break;
                    }
                    acc.extend(grown);
                }
                acc
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

/// How [`annotate`] fills in probability parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitPolicy {
    /// Uniform simplices, loop probability 1/2.
    Uniform,
    /// Dirichlet(1,...,1) simplices, loop probability uniform on [0.05, 0.95].
    Random,
}

/// Attaches probability parameters to a plain tree. With `InitPolicy::Random`
/// the result is a deterministic function of the seed.
pub fn annotate(plain: &PlainTree, policy: InitPolicy, seed: u64) -> SptNode<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    annotate_with(plain, policy, &mut rng)
}

pub fn annotate_with<R: Rng>(plain: &PlainTree, policy: InitPolicy, rng: &mut R) -> SptNode<f64> {
    let simplex = |n: usize, rng: &mut R| -> Vec<f64> {
        match policy {
            InitPolicy::Uniform => vec![1.0 / n as f64; n],
            InitPolicy::Random => {
                // Dirichlet(1,..,1) via normalized exponentials.
                let draws: Vec<f64> = (0..n)
                    .map(|_| -f64::ln(1.0 - rng.random::<f64>()))
                    .collect();
                let total: f64 = draws.iter().sum();
                draws.into_iter().map(|d| d / total).collect()
            }
        }
    };
    let loop_p = |rng: &mut R| match policy {
        InitPolicy::Uniform => 0.5,
        InitPolicy::Random => 0.05 + 0.9 * rng.random::<f64>(),
    };
    match plain {
        PlainTree::Leaf(a) => SptNode::Leaf(a.clone()),
        PlainTree::Tau => SptNode::Tau,
        PlainTree::Sequence(c) => {
            SptNode::Sequence(c.iter().map(|n| annotate_with(n, policy, rng)).collect())
        }
        PlainTree::Choice(c) => {
            let probs = simplex(c.len(), rng);
            SptNode::Choice {
                children: c.iter().map(|n| annotate_with(n, policy, rng)).collect(),
                probs,
            }
        }
        PlainTree::Parallel(c) => {
            let probs = simplex(c.len(), rng);
            SptNode::Parallel {
                children: c.iter().map(|n| annotate_with(n, policy, rng)).collect(),
                probs,
            }
        }
        PlainTree::Loop(body, redo) => {
            let p = loop_p(rng);
            SptNode::Loop {
                body: Box::new(annotate_with(body, policy, rng)),
                redo: Box::new(annotate_with(redo, policy, rng)),
                p_loop: p,
            }
        }
    }
}

/// Uniform annotation in any probability representation; used by the exact
/// rational oracle tests.
pub fn annotate_uniform_in<P: Prob>(plain: &PlainTree) -> SptNode<P> {
    match plain {
        PlainTree::Leaf(a) => SptNode::Leaf(a.clone()),
        PlainTree::Tau => SptNode::Tau,
        PlainTree::Sequence(c) => SptNode::Sequence(c.iter().map(annotate_uniform_in).collect()),
        PlainTree::Choice(c) => SptNode::Choice {
            probs: vec![P::ratio(1, c.len() as u64); c.len()],
            children: c.iter().map(annotate_uniform_in).collect(),
        },
        PlainTree::Parallel(c) => SptNode::Parallel {
            probs: vec![P::ratio(1, c.len() as u64); c.len()],
            children: c.iter().map(annotate_uniform_in).collect(),
        },
        PlainTree::Loop(body, redo) => SptNode::Loop {
            body: Box::new(annotate_uniform_in(body)),
            redo: Box::new(annotate_uniform_in(redo)),
            p_loop: P::ratio(1, 2),
        },
    }
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Prints a probability with six significant digits, trailing zeros trimmed.
fn fmt_prob6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let decimals = if x >= 1.0 {
        6
    } else {
        let lead = (-x.abs().log10().floor()) as usize;
        5 + lead
    };
    let s = format!("{x:.decimals$}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}

/// Full-precision probability printing (shortest round-trip decimal).
fn fmt_prob_full(x: f64) -> String {
    format!("{x}")
}

fn fmt_spt(node: &SptNode<f64>, out: &mut String, prob: &impl Fn(f64) -> String) {
    match node {
        SptNode::Leaf(a) => out.push_str(a.name()),
        SptNode::Tau => out.push_str("tau"),
        SptNode::Sequence(children) => {
            out.push_str("seq(");
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                fmt_spt(c, out, prob);
            }
            out.push(')');
        }
        SptNode::Choice { children, probs } | SptNode::Parallel { children, probs } => {
            out.push_str(if matches!(node, SptNode::Choice { .. }) {
                "xor["
            } else {
                "par["
            });
            for (i, p) in probs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&prob(*p));
            }
            out.push_str("](");
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                fmt_spt(c, out, prob);
            }
            out.push(')');
        }
        SptNode::Loop { body, redo, p_loop } => {
            out.push_str("loop[");
            out.push_str(&prob(*p_loop));
            out.push_str("](");
            fmt_spt(body, out, prob);
            out.push(',');
            fmt_spt(redo, out, prob);
            out.push(')');
        }
    }
}

/// Canonical text: probabilities at six significant digits.
pub fn format_spt(node: &SptNode<f64>) -> String {
    let mut out = String::new();
    fmt_spt(node, &mut out, &fmt_prob6);
    out
}

/// Lossless text: probabilities print at full precision so the tree
/// re-parses to bit-identical parameters.
pub fn format_spt_precise(node: &SptNode<f64>) -> String {
    let mut out = String::new();
    fmt_spt(node, &mut out, &fmt_prob_full);
    out
}

pub fn format_plain(node: &PlainTree) -> String {
    match node {
        PlainTree::Leaf(a) => a.name().to_string(),
        PlainTree::Tau => "tau".to_string(),
        PlainTree::Sequence(c) => format!(
            "seq({})",
            c.iter().map(format_plain).collect::<Vec<_>>().join(",")
        ),
        PlainTree::Choice(c) => format!(
            "xor({})",
            c.iter().map(format_plain).collect::<Vec<_>>().join(",")
        ),
        PlainTree::Parallel(c) => format!(
            "par({})",
            c.iter().map(format_plain).collect::<Vec<_>>().join(",")
        ),
        PlainTree::Loop(b, r) => format!("loop({},{})", format_plain(b), format_plain(r)),
    }
}

impl fmt::Display for SptNode<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_spt(self))
    }
}

impl fmt::Display for PlainTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_plain(self))
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Result of [`parse_tree`]: either fully annotated or fully plain.
#[derive(Clone, Debug, PartialEq)]
pub enum ParsedTree {
    Spt(SptNode<f64>),
    Plain(PlainTree),
}

impl ParsedTree {
    pub fn into_spt(self) -> Result<SptNode<f64>, TreeError> {
        match self {
            ParsedTree::Spt(t) => Ok(t),
            ParsedTree::Plain(_) => Err(TreeError::ExpectedStochastic),
        }
    }

    pub fn into_plain(self) -> Result<PlainTree, TreeError> {
        match self {
            ParsedTree::Plain(t) => Ok(t),
            ParsedTree::Spt(t) => Ok(t.strip()),
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

enum Node {
    Leaf(Activity),
    Tau,
    Sequence(Vec<Node>),
    Choice(Vec<Node>, Option<Vec<f64>>),
    Parallel(Vec<Node>, Option<Vec<f64>>),
    Loop(Box<Node>, Box<Node>, Option<f64>),
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, TreeError> {
        Err(TreeError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), TreeError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {:?}", c as char))
        }
    }

    fn ident(&mut self) -> Result<&'a str, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'-' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            self.err("expected an identifier")
        } else {
            Ok(&self.text[start..self.pos])
        }
    }

    fn number(&mut self) -> Result<f64, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || c == b'-' || c == b'+' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return self.err("expected a number");
        }
        self.text[start..self.pos]
            .parse::<f64>()
            .map_err(|e| TreeError::Syntax {
                pos: start,
                msg: format!("bad number: {e}"),
            })
    }

    fn prob_list(&mut self) -> Result<Vec<f64>, TreeError> {
        self.expect(b'[')?;
        let mut probs = vec![self.number()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            probs.push(self.number()?);
        }
        self.expect(b']')?;
        Ok(probs)
    }

    fn child_list(&mut self) -> Result<Vec<Node>, TreeError> {
        self.expect(b'(')?;
        let mut children = vec![self.node()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            children.push(self.node()?);
        }
        self.expect(b')')?;
        Ok(children)
    }

    fn node(&mut self) -> Result<Node, TreeError> {
        self.skip_ws();
        let at = self.pos;
        let word = self.ident()?;
        match word {
            "tau" => Ok(Node::Tau),
            "seq" => {
                let children = self.child_list()?;
                if children.len() < 2 {
                    return Err(TreeError::Arity { op: "seq" });
                }
                Ok(Node::Sequence(children))
            }
            "xor" | "par" => {
                let probs = if self.peek() == Some(b'[') {
                    Some(self.normalized_probs(at)?)
                } else {
                    None
                };
                let children = self.child_list()?;
                if children.len() < 2 {
                    return Err(TreeError::Arity {
                        op: if word == "xor" { "xor" } else { "par" },
                    });
                }
                if let Some(ref p) = probs {
                    if p.len() != children.len() {
                        return Err(TreeError::ProbLen {
                            op: if word == "xor" { "xor" } else { "par" },
                            probs: p.len(),
                            children: children.len(),
                        });
                    }
                }
                if word == "xor" {
                    Ok(Node::Choice(children, probs))
                } else {
                    Ok(Node::Parallel(children, probs))
                }
            }
            "loop" => {
                let p = if self.peek() == Some(b'[') {
                    self.expect(b'[')?;
                    let p = self.number()?;
                    self.expect(b']')?;
                    if !(-EPS_NORM..=1.0 + EPS_NORM).contains(&p) {
                        return Err(TreeError::ProbRange { p });
                    }
                    Some(p.clamp(0.0, 1.0))
                } else {
                    None
                };
                let children = self.child_list()?;
                if children.len() != 2 {
                    return Err(TreeError::LoopArity);
                }
                let mut it = children.into_iter();
                let body = it.next().unwrap();
                let redo = it.next().unwrap();
                Ok(Node::Loop(Box::new(body), Box::new(redo), p))
            }
            name => {
                let activity = Activity::new(name).map_err(|e| TreeError::Syntax {
                    pos: at,
                    msg: e.to_string(),
                })?;
                Ok(Node::Leaf(activity))
            }
        }
    }

    fn normalized_probs(&mut self, at: usize) -> Result<Vec<f64>, TreeError> {
        let probs = self.prob_list()?;
        for &p in &probs {
            if !(-EPS_NORM..=1.0 + EPS_NORM).contains(&p) {
                return Err(TreeError::ProbRange { p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() <= EPS_NORM {
            // already a valid simplex: keep the parsed values bit-exact
            return Ok(probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect());
        }
        if (sum - 1.0).abs() > PARSE_SUM_SLACK {
            return Err(TreeError::ProbSum { pos: at, sum });
        }
        // printing at six significant digits may miss 1 by ~1e-6; absorb that
        Ok(probs.into_iter().map(|p| p.clamp(0.0, 1.0) / sum).collect())
    }
}

fn scan_annotation(node: &Node, with: &mut bool, without: &mut bool) {
    match node {
        Node::Leaf(_) | Node::Tau => {}
        Node::Sequence(c) => c.iter().for_each(|n| scan_annotation(n, with, without)),
        Node::Choice(c, p) | Node::Parallel(c, p) => {
            if p.is_some() {
                *with = true;
            } else {
                *without = true;
            }
            c.iter().for_each(|n| scan_annotation(n, with, without));
        }
        Node::Loop(b, r, p) => {
            if p.is_some() {
                *with = true;
            } else {
                *without = true;
            }
            scan_annotation(b, with, without);
            scan_annotation(r, with, without);
        }
    }
}

fn to_spt(node: Node) -> Result<SptNode<f64>, TreeError> {
    Ok(match node {
        Node::Leaf(a) => SptNode::Leaf(a),
        Node::Tau => SptNode::Tau,
        Node::Sequence(c) => {
            SptNode::Sequence(c.into_iter().map(to_spt).collect::<Result<_, _>>()?)
        }
        Node::Choice(c, p) => SptNode::Choice {
            children: c.into_iter().map(to_spt).collect::<Result<_, _>>()?,
            probs: p.ok_or(TreeError::MixedAnnotation)?,
        },
        Node::Parallel(c, p) => SptNode::Parallel {
            children: c.into_iter().map(to_spt).collect::<Result<_, _>>()?,
            probs: p.ok_or(TreeError::MixedAnnotation)?,
        },
        Node::Loop(b, r, p) => SptNode::Loop {
            body: Box::new(to_spt(*b)?),
            redo: Box::new(to_spt(*r)?),
            p_loop: p.ok_or(TreeError::MixedAnnotation)?,
        },
    })
}

fn to_plain(node: Node) -> Result<PlainTree, TreeError> {
    Ok(match node {
        Node::Leaf(a) => PlainTree::Leaf(a),
        Node::Tau => PlainTree::Tau,
        Node::Sequence(c) => {
            PlainTree::Sequence(c.into_iter().map(to_plain).collect::<Result<_, _>>()?)
        }
        Node::Choice(c, p) => {
            if p.is_some() {
                return Err(TreeError::MixedAnnotation);
            }
            PlainTree::Choice(c.into_iter().map(to_plain).collect::<Result<_, _>>()?)
        }
        Node::Parallel(c, p) => {
            if p.is_some() {
                return Err(TreeError::MixedAnnotation);
            }
            PlainTree::Parallel(c.into_iter().map(to_plain).collect::<Result<_, _>>()?)
        }
        Node::Loop(b, r, p) => {
            if p.is_some() {
                return Err(TreeError::MixedAnnotation);
            }
            PlainTree::Loop(Box::new(to_plain(*b)?), Box::new(to_plain(*r)?))
        }
    })
}

/// Parses either grammar; the result is validated. A tree with no
/// probability-bearing operators (leaves and sequences only) parses as
/// a stochastic tree, which strips losslessly to a plain one.
pub fn parse_tree(text: &str) -> Result<ParsedTree, TreeError> {
    let mut p = Parser::new(text);
    let node = p.node()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return p.err("trailing input after tree");
    }
    let (mut with, mut without) = (false, false);
    scan_annotation(&node, &mut with, &mut without);
    if with && without {
        return Err(TreeError::MixedAnnotation);
    }
    if without {
        let plain = to_plain(node)?;
        plain.validate()?;
        Ok(ParsedTree::Plain(plain))
    } else {
        let spt = to_spt(node)?;
        spt.validate()?;
        Ok(ParsedTree::Spt(spt))
    }
}

pub fn parse_spt(text: &str) -> Result<SptNode<f64>, TreeError> {
    parse_tree(text)?.into_spt()
}

pub fn parse_plain(text: &str) -> Result<PlainTree, TreeError> {
    parse_tree(text)?.into_plain()
}

// ---------------------------------------------------------------------------
// DOT export
// ---------------------------------------------------------------------------

fn dot_node_label<P: Prob>(node: &SptNode<P>) -> String {
    match node {
        SptNode::Leaf(a) => a.name().to_string(),
        SptNode::Tau => "tau".to_string(),
        SptNode::Sequence(_) => "seq".to_string(),
        SptNode::Choice { .. } => "xor".to_string(),
        SptNode::Parallel { .. } => "par".to_string(),
        SptNode::Loop { .. } => "loop".to_string(),
    }
}

/// Graphviz rendering: one node per operator, arcs labeled with probabilities.
pub fn spt_to_dot(root: &SptNode<f64>) -> String {
    let mut out = String::from("digraph spt {\n  node [fontname=\"Helvetica\"];\n");
    let mut next = 0usize;
    fn walk(node: &SptNode<f64>, out: &mut String, next: &mut usize) -> usize {
        let id = *next;
        *next += 1;
        let shape = match node {
            SptNode::Leaf(_) | SptNode::Tau => "box",
            _ => "circle",
        };
        out.push_str(&format!(
            "  n{id} [label=\"{}\" shape={shape}];\n",
            dot_node_label(node)
        ));
        let arc = |child: &SptNode<f64>, label: Option<String>, out: &mut String, next: &mut usize| {
            let cid = walk(child, out, next);
            match label {
                Some(l) => out.push_str(&format!("  n{id} -> n{cid} [label=\"{l}\"];\n")),
                None => out.push_str(&format!("  n{id} -> n{cid};\n")),
            }
        };
        match node {
            SptNode::Leaf(_) | SptNode::Tau => {}
            SptNode::Sequence(c) => c.iter().for_each(|ch| arc(ch, None, out, next)),
            SptNode::Choice { children, probs } | SptNode::Parallel { children, probs } => {
                for (ch, p) in children.iter().zip(probs) {
                    arc(ch, Some(fmt_prob6(*p)), out, next);
                }
            }
            SptNode::Loop { body, redo, p_loop } => {
                arc(body, Some(fmt_prob6(1.0 - p_loop)), out, next);
                arc(redo, Some(fmt_prob6(*p_loop)), out, next);
            }
        }
        id
    }
    walk(root, &mut out, &mut next);
    out.push_str("}\n");
    out
}

pub fn plain_to_dot(root: &PlainTree) -> String {
    spt_to_dot(&annotate(root, InitPolicy::Uniform, 0))
}
