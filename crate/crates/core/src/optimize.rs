//! Parameter fitting: searches the tree's probability parameters to minimize
//! the restricted EMD between the log's stochastic language and the tree's.
//!
//! Simplex-constrained parameters are reparameterized into unconstrained
//! reals (additive log-ratio per choice/parallel simplex, logit per loop),
//! and an adaptive Nelder-Mead direct search runs in that space, restarted
//! from random annotations.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distance::{remd, DistError, RemdMode};
use crate::lang::{EventLog, StochasticLanguage};
use crate::miner::verify_fitness;
use crate::semantics::{exact_language, sampled_language, SemError, TruncationConfig};
use crate::tree::{
    annotate_uniform_in, annotate_with, format_spt_precise, InitPolicy, NodePath, ParamCounts,
    PlainTree, SptNode, TreeError,
};

#[derive(Debug, Error, PartialEq)]
pub enum OptError {
    #[error("parameter vector has length {got}, layout needs {expected}")]
    Dim { expected: usize, got: usize },
    #[error("tree does not match the layout shape at {at}")]
    ShapeMismatch { at: String },
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

const CLAMP: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Reparameterization
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Block {
    /// n-1 additive log-ratio coordinates of an n-simplex.
    Simplex { arity: usize },
    /// logit of the loop-back probability.
    LoopLogit,
}

#[derive(Clone, Debug)]
struct LayoutEntry {
    path: NodePath,
    block: Block,
    offset: usize,
}

/// Maps a tree shape onto a flat unconstrained parameter vector and back.
/// Decoded trees always satisfy the simplex and interval constraints.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    shape: PlainTree,
    entries: Vec<LayoutEntry>,
    dim: usize,
}

impl ParamLayout {
    pub fn of(shape: &PlainTree) -> Self {
        let mut entries = Vec::new();
        let mut dim = 0;
        fn walk(
            node: &PlainTree,
            path: &NodePath,
            entries: &mut Vec<LayoutEntry>,
            dim: &mut usize,
        ) {
            match node {
                PlainTree::Leaf(_) | PlainTree::Tau => {}
                PlainTree::Sequence(children) => {
                    for (i, c) in children.iter().enumerate() {
                        walk(c, &path.child(i as u16), entries, dim);
                    }
                }
                PlainTree::Choice(children) | PlainTree::Parallel(children) => {
                    entries.push(LayoutEntry {
                        path: path.clone(),
                        block: Block::Simplex {
                            arity: children.len(),
                        },
                        offset: *dim,
                    });
                    *dim += children.len() - 1;
                    for (i, c) in children.iter().enumerate() {
                        walk(c, &path.child(i as u16), entries, dim);
                    }
                }
                PlainTree::Loop(body, redo) => {
                    entries.push(LayoutEntry {
                        path: path.clone(),
                        block: Block::LoopLogit,
                        offset: *dim,
                    });
                    *dim += 1;
                    walk(body, &path.child(0), entries, dim);
                    walk(redo, &path.child(1), entries, dim);
                }
            }
        }
        walk(shape, &NodePath::root(), &mut entries, &mut dim);
        ParamLayout {
            shape: shape.clone(),
            entries,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &PlainTree {
        &self.shape
    }

    /// One line per parameter block: node path, block kind, coordinate range.
    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|e| match e.block {
                Block::Simplex { arity } => format!(
                    "{}\tsimplex({arity})\tcoords {}..={}",
                    e.path,
                    e.offset,
                    e.offset + arity - 2
                ),
                Block::LoopLogit => format!("{}\tloop\tcoord {}", e.path, e.offset),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Flattens a tree's probabilities into the unconstrained space.
    pub fn encode(&self, tree: &SptNode<f64>) -> Result<Vec<f64>, OptError> {
        let mut out = vec![0.0; self.dim];
        self.encode_rec(tree, &self.shape, &NodePath::root(), &mut out)?;
        Ok(out)
    }

    fn encode_rec(
        &self,
        tree: &SptNode<f64>,
        shape: &PlainTree,
        path: &NodePath,
        out: &mut [f64],
    ) -> Result<(), OptError> {
        let mismatch = || OptError::ShapeMismatch {
            at: path.to_string(),
        };
        match (tree, shape) {
            (SptNode::Leaf(a), PlainTree::Leaf(b)) if a == b => Ok(()),
            (SptNode::Tau, PlainTree::Tau) => Ok(()),
            (SptNode::Sequence(ts), PlainTree::Sequence(ss)) if ts.len() == ss.len() => {
                for (i, (t, s)) in ts.iter().zip(ss).enumerate() {
                    self.encode_rec(t, s, &path.child(i as u16), out)?;
                }
                Ok(())
            }
            (SptNode::Choice { children, probs }, PlainTree::Choice(ss))
            | (SptNode::Parallel { children, probs }, PlainTree::Parallel(ss))
                if children.len() == ss.len() =>
            {
                let offset = self.offset_at(path).ok_or_else(mismatch)?;
                alr_encode(probs, &mut out[offset..offset + probs.len() - 1]);
                for (i, (t, s)) in children.iter().zip(ss).enumerate() {
                    self.encode_rec(t, s, &path.child(i as u16), out)?;
                }
                Ok(())
            }
            (SptNode::Loop { body, redo, p_loop }, PlainTree::Loop(sb, sr)) => {
                let offset = self.offset_at(path).ok_or_else(mismatch)?;
                out[offset] = logit(*p_loop);
                self.encode_rec(body, sb, &path.child(0), out)?;
                self.encode_rec(redo, sr, &path.child(1), out)
            }
            _ => Err(mismatch()),
        }
    }

    fn offset_at(&self, path: &NodePath) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| &e.path == path)
            .map(|e| e.offset)
    }

    /// Instantiates the shape with the probabilities encoded in `vals`.
    pub fn decode(&self, vals: &[f64]) -> Result<SptNode<f64>, OptError> {
        if vals.len() != self.dim {
            return Err(OptError::Dim {
                expected: self.dim,
                got: vals.len(),
            });
        }
        Ok(self.decode_rec(&self.shape, &NodePath::root(), vals))
    }

    fn decode_rec(&self, shape: &PlainTree, path: &NodePath, vals: &[f64]) -> SptNode<f64> {
        match shape {
            PlainTree::Leaf(a) => SptNode::Leaf(a.clone()),
            PlainTree::Tau => SptNode::Tau,
            PlainTree::Sequence(children) => SptNode::Sequence(
                children
                    .iter()
                    .enumerate()
                    .map(|(i, c)| self.decode_rec(c, &path.child(i as u16), vals))
                    .collect(),
            ),
            PlainTree::Choice(children) | PlainTree::Parallel(children) => {
                let offset = self.offset_at(path).expect("layout covers shape");
                let probs = alr_decode(&vals[offset..offset + children.len() - 1]);
                let kids: Vec<SptNode<f64>> = children
                    .iter()
                    .enumerate()
                    .map(|(i, c)| self.decode_rec(c, &path.child(i as u16), vals))
                    .collect();
                if matches!(shape, PlainTree::Choice(_)) {
                    SptNode::Choice {
                        children: kids,
                        probs,
                    }
                } else {
                    SptNode::Parallel {
                        children: kids,
                        probs,
                    }
                }
            }
            PlainTree::Loop(body, redo) => {
                let offset = self.offset_at(path).expect("layout covers shape");
                SptNode::Loop {
                    body: Box::new(self.decode_rec(body, &path.child(0), vals)),
                    redo: Box::new(self.decode_rec(redo, &path.child(1), vals)),
                    p_loop: sigmoid(vals[offset]),
                }
            }
        }
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn alr_encode(probs: &[f64], out: &mut [f64]) {
    let n = probs.len();
    let last = probs[n - 1].max(CLAMP);
    for (k, y) in out.iter_mut().enumerate() {
        *y = (probs[k].max(CLAMP) / last).ln();
    }
}

fn alr_decode(coords: &[f64]) -> Vec<f64> {
    let max = coords.iter().copied().fold(0.0f64, f64::max);
    let mut exps: Vec<f64> = coords.iter().map(|y| (y - max).exp()).collect();
    exps.push((-max).exp());
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

// ---------------------------------------------------------------------------
// Nelder-Mead
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct NmOptions {
    pub max_evals: usize,
    pub init_step: f64,
}

/// Adaptive Nelder-Mead (dimension-dependent expansion/contraction
/// coefficients). Returns the best vertex, its value and the number of
/// evaluations spent.
#[allow(clippy::needless_range_loop)]
pub fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NmOptions,
) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    assert!(n >= 1);
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.init_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    while evals < opts.max_evals {
        // order the simplex
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        if spread.abs() < 1e-14 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|v| v[d]).sum::<f64>() / nf)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|d| centroid[d] + alpha * (centroid[d] - worst[d]))
            .collect();
        let fr = eval(&reflect, &mut evals);

        if fr < values[0] {
            let expand: Vec<f64> = (0..n)
                .map(|d| centroid[d] + beta * (reflect[d] - centroid[d]))
                .collect();
            let fe = eval(&expand, &mut evals);
            if fe < fr {
                simplex[n] = expand;
                values[n] = fe;
            } else {
                simplex[n] = reflect;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflect;
            values[n] = fr;
        } else {
            let outside = fr < values[n];
            let anchor = if outside { &reflect } else { &worst };
            let contract: Vec<f64> = (0..n)
                .map(|d| centroid[d] + gamma * (anchor[d] - centroid[d]))
                .collect();
            let fc = eval(&contract, &mut evals);
            if fc < fr.min(values[n]) {
                simplex[n] = contract;
                values[n] = fc;
            } else {
                // shrink toward the best vertex
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = simplex[0][d] + delta * (simplex[i][d] - simplex[0][d]);
                    }
                    values[i] = eval(&simplex[i], &mut evals);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best], evals)
}

// ---------------------------------------------------------------------------
// Objective and driver
// ---------------------------------------------------------------------------

/// How the model language is produced for each objective evaluation.
#[derive(Clone, Debug)]
pub enum EvalSpec {
    /// Exact truncated language; `None` truncates at the log's longest trace.
    Exact { c_max: Option<u32> },
    /// Monte-Carlo language; `None` draws 10x the log size.
    Simulate { n_samples: Option<u64> },
    /// Exact when the truncated language fits the entry cap, else simulate.
    Auto,
}

/// Resolved evaluation mode, fixed for a whole run.
#[derive(Clone, Debug)]
pub enum EvalMode {
    Exact(TruncationConfig),
    Simulate { n_samples: u64, sim_seed: u64 },
}

impl EvalMode {
    pub fn describe(&self) -> String {
        match self {
            EvalMode::Exact(cfg) => format!("exact(c_max={})", cfg.c_max),
            EvalMode::Simulate { n_samples, .. } => format!("simulate(n={n_samples})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptConfig {
    /// Outer iterations; each is a fresh Nelder-Mead cycle seeded at the
    /// current best point.
    pub iterations: u32,
    /// Independent random starting vectors.
    pub restarts: u32,
    pub eval: EvalSpec,
    pub remd_mode: RemdMode,
    pub seed: u64,
    /// Nelder-Mead evaluation budget per iteration (default 12 per
    /// dimension, at least 30).
    pub inner_evals: Option<usize>,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            iterations: 20,
            restarts: 3,
            eval: EvalSpec::Auto,
            remd_mode: RemdMode::default(),
            seed: 1,
            inner_evals: None,
        }
    }
}

/// Evaluates the fitted-model distance for one parameter vector.
pub fn objective(
    layout: &ParamLayout,
    params: &[f64],
    log_lang: &StochasticLanguage<f64>,
    mode: &EvalMode,
    remd_mode: RemdMode,
) -> Result<f64, OptError> {
    let tree = layout.decode(params)?;
    let model = match mode {
        EvalMode::Exact(cfg) => exact_language(&tree, cfg)?,
        EvalMode::Simulate { n_samples, sim_seed } => {
            // common random numbers: the same seed for every evaluation
            let mut rng = ChaCha8Rng::seed_from_u64(*sim_seed);
            sampled_language(&tree, *n_samples, &mut rng)?
        }
    };
    Ok(remd(log_lang, &model, remd_mode)?)
}

#[derive(Clone, Debug)]
pub struct OptOutcome {
    pub best_params: Vec<f64>,
    pub best_tree: SptNode<f64>,
    /// Objective of the first random starting vector.
    pub start_remd: f64,
    /// Best-seen objective after each outer iteration, non-increasing.
    pub curve: Vec<f64>,
    pub final_remd: f64,
    pub fitness_ok: bool,
    pub eval_mode: EvalMode,
    pub evaluations: u64,
    pub wall: Duration,
}

pub fn resolve_eval_mode(
    spec: &EvalSpec,
    shape: &PlainTree,
    log: &EventLog,
    seed: u64,
) -> EvalMode {
    let exact_cfg = |c_max: Option<u32>| {
        TruncationConfig::with_c_max(c_max.unwrap_or_else(|| (log.max_trace_len() as u32).max(1)))
    };
    let simulate = |n_samples: Option<u64>| EvalMode::Simulate {
        n_samples: n_samples.unwrap_or(10 * log.total()).max(1),
        sim_seed: seed ^ 0x5eed_cafe,
    };
    match spec {
        EvalSpec::Exact { c_max } => EvalMode::Exact(exact_cfg(*c_max)),
        EvalSpec::Simulate { n_samples } => simulate(*n_samples),
        EvalSpec::Auto => {
            let cfg = exact_cfg(None);
            let probe: SptNode<f64> = annotate_uniform_in(shape);
            match exact_language(&probe, &cfg) {
                Ok(_) => EvalMode::Exact(cfg),
                Err(_) => simulate(None),
            }
        }
    }
}

/// Runs the fitting loop: `restarts` random starting vectors, each improved
/// through `iterations` Nelder-Mead cycles; the reported curve folds all
/// restarts into one best-so-far-per-iteration sequence.
pub fn optimize(shape: &PlainTree, log: &EventLog, cfg: &OptConfig) -> Result<OptOutcome, OptError> {
    let started = Instant::now();
    let fitness_ok = verify_fitness(shape, log);
    let log_lang: StochasticLanguage<f64> = log.stochastic_language();
    let layout = ParamLayout::of(shape);
    let mode = resolve_eval_mode(&cfg.eval, shape, log, cfg.seed);
    let iterations = cfg.iterations.max(1) as usize;
    let restarts = cfg.restarts.max(1);

    let mut evaluations: u64 = 0;
    let raw = |params: &[f64], evaluations: &mut u64| -> f64 {
        *evaluations += 1;
        objective(&layout, params, &log_lang, &mode, cfg.remd_mode).unwrap_or(f64::INFINITY)
    };

    // a parameter-free shape has a constant objective
    if layout.dim() == 0 {
        evaluations += 1;
        let value = objective(&layout, &[], &log_lang, &mode, cfg.remd_mode)?;
        return Ok(OptOutcome {
            best_params: Vec::new(),
            best_tree: layout.decode(&[])?,
            start_remd: value,
            curve: vec![value; iterations],
            final_remd: value,
            fitness_ok,
            eval_mode: mode,
            evaluations,
            wall: started.elapsed(),
        });
    }

    let inner_budget = cfg
        .inner_evals
        .unwrap_or_else(|| (12 * layout.dim()).max(30));

    let mut start_remd = f64::INFINITY;
    let mut merged_curve = vec![f64::INFINITY; iterations];
    let mut best_params: Vec<f64> = Vec::new();
    let mut best_value = f64::INFINITY;

    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(restart as u64 + 1)),
        );
        let start_tree = annotate_with(shape, InitPolicy::Random, &mut rng);
        let mut x = layout.encode(&start_tree)?;
        let mut fx = raw(&x, &mut evaluations);
        if restart == 0 {
            start_remd = fx;
        }
        for (iter, slot) in merged_curve.iter_mut().enumerate() {
            let step = (0.8 * 0.65f64.powi(iter as i32)).max(0.05);
            let mut f = |v: &[f64]| raw(v, &mut evaluations);
            let (nx, nfx, _) = nelder_mead(
                &mut f,
                &x,
                &NmOptions {
                    max_evals: inner_budget,
                    init_step: step,
                },
            );
            if nfx < fx {
                x = nx;
                fx = nfx;
            }
            *slot = slot.min(fx);
        }
        if fx < best_value {
            best_value = fx;
            best_params = x;
        }
    }

    // the merged curve is best-so-far across restarts: enforce monotonicity
    for i in 1..iterations {
        if merged_curve[i] > merged_curve[i - 1] {
            merged_curve[i] = merged_curve[i - 1];
        }
    }

    let best_tree = layout.decode(&best_params)?;
    Ok(OptOutcome {
        best_params,
        best_tree,
        start_remd,
        curve: merged_curve,
        final_remd: best_value,
        fitness_ok,
        eval_mode: mode,
        evaluations,
        wall: started.elapsed(),
    })
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct OptReport {
    pub start_remd: f64,
    pub rows: Vec<(u32, f64)>,
    pub final_remd: f64,
    /// Full-precision grammar text: re-parsing reproduces the exact tree.
    pub tree_text: String,
    pub wall_secs: f64,
    pub counts: ParamCounts,
    pub eval_desc: String,
    pub fitness_ok: bool,
}

pub fn report(outcome: &OptOutcome) -> OptReport {
    OptReport {
        start_remd: outcome.start_remd,
        rows: outcome
            .curve
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u32 + 1, *v))
            .collect(),
        final_remd: outcome.final_remd,
        tree_text: format_spt_precise(&outcome.best_tree),
        wall_secs: outcome.wall.as_secs_f64(),
        counts: outcome.best_tree.param_counts(),
        eval_desc: outcome.eval_mode.describe(),
        fitness_ok: outcome.fitness_ok,
    }
}

impl OptReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# eval_mode={}\n", self.eval_desc));
        out.push_str(&format!("# params_free={}\n", self.counts.free));
        out.push_str(&format!("# params_arc={}\n", self.counts.arc));
        out.push_str(&format!("# fitness_ok={}\n", self.fitness_ok));
        out.push_str(&format!("# start_remd={}\n", self.start_remd));
        out.push_str(&format!("# wall_secs={:.3}\n", self.wall_secs));
        out.push_str(&format!("# tree={}\n", self.tree_text));
        out.push_str("iter\tremd\n");
        for (iter, v) in &self.rows {
            out.push_str(&format!("{iter}\t{v}\n"));
        }
        out
    }
}
