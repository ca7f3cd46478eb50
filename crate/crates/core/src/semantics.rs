//! The stochastic language of a stochastic process tree.
//!
//! Three entry points:
//! - [`shuffle_probability`]: probability that the stochastic shuffling of
//!   component traces produces a given target trace;
//! - [`exact_language`]: the language computed bottom-up, exact except for
//!   loop truncation (each loop unrolled at most `c_max` times, the tail
//!   mass tracked in the language's deficit);
//! - [`sample_trace`] / [`sampled_language`]: Monte-Carlo generation.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use thiserror::Error;

use crate::lang::{Activity, LangError, StochasticLanguage, Trace};
use crate::prob::Prob;
use crate::tree::{NodePath, SptNode, TreeError};

#[derive(Debug, Error, PartialEq)]
pub enum SemError {
    #[error("language exceeds the configured entry cap of {cap} traces at {at}")]
    EntryCap { cap: usize, at: String },
    #[error("language computation exceeds the work cap of {cap} steps")]
    WorkCap { cap: u64 },
    #[error("sampling exceeded the budget of {cap} letters (pathological loop probability?)")]
    LetterBudget { cap: u64 },
    #[error("sampling exceeded the step budget of {cap}")]
    StepBudget { cap: u64 },
    #[error("component trace lengths sum to {got} but the target has length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shuffle probabilities sum to {got}, expected 1")]
    WeightSum { got: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Lang(#[from] LangError),
}

/// Loop truncation and resource limits for [`exact_language`].
#[derive(Clone, Debug)]
pub struct TruncationConfig {
    /// Maximal number of body executions per loop node.
    pub c_max: u32,
    /// Per-loop-node overrides, keyed by node path.
    pub per_node: BTreeMap<NodePath, u32>,
    /// Entries with probability below this are dropped at the root and their
    /// mass moved into the deficit.
    pub mass_floor: f64,
    /// Abort when the language at any node would exceed this many traces.
    pub entry_cap: usize,
    /// Abort runaway shuffle/convolution enumeration.
    pub work_cap: u64,
}

impl TruncationConfig {
    pub fn with_c_max(c_max: u32) -> Self {
        assert!(c_max >= 1, "c_max must be at least 1");
        TruncationConfig {
            c_max,
            ..Default::default()
        }
    }

    fn c_max_for(&self, path: &NodePath) -> u32 {
        self.per_node.get(path).copied().unwrap_or(self.c_max)
    }
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig {
            c_max: 8,
            per_node: BTreeMap::new(),
            mass_floor: 0.0,
            entry_cap: 1_000_000,
            work_cap: 50_000_000,
        }
    }
}

struct Limits<'a> {
    cfg: &'a TruncationConfig,
    work: u64,
}

impl Limits<'_> {
    fn spend(&mut self, units: u64) -> Result<(), SemError> {
        self.work += units;
        if self.work > self.cfg.work_cap {
            Err(SemError::WorkCap {
                cap: self.cfg.work_cap,
            })
        } else {
            Ok(())
        }
    }

    fn check_entries(&self, len: usize, at: &NodePath) -> Result<(), SemError> {
        if len > self.cfg.entry_cap {
            Err(SemError::EntryCap {
                cap: self.cfg.entry_cap,
                at: at.to_string(),
            })
        } else {
            Ok(())
        }
    }
}

struct Partial<P: Prob> {
    map: BTreeMap<Trace, P>,
    deficit: P,
}

impl<P: Prob> Partial<P> {
    fn point(trace: Trace) -> Self {
        Partial {
            map: BTreeMap::from([(trace, P::one())]),
            deficit: P::zero(),
        }
    }

    fn kept(&self) -> P {
        P::one() - self.deficit.clone()
    }
}

fn add_mass<P: Prob>(map: &mut BTreeMap<Trace, P>, trace: Trace, p: P) {
    if p.is_zero() {
        return;
    }
    let slot = map.entry(trace).or_insert_with(P::zero);
    *slot = slot.clone() + p;
}

fn convolve<P: Prob>(
    a: &BTreeMap<Trace, P>,
    b: &BTreeMap<Trace, P>,
    at: &NodePath,
    limits: &mut Limits<'_>,
) -> Result<BTreeMap<Trace, P>, SemError> {
    let mut out = BTreeMap::new();
    for (ta, pa) in a {
        for (tb, pb) in b {
            limits.spend(1)?;
            add_mass(&mut out, ta.concat(tb), pa.clone() * pb.clone());
            limits.check_entries(out.len(), at)?;
        }
    }
    Ok(out)
}

/// Enumerates every shuffling of `traces` weighted per the stochastic
/// shuffle kernel, accumulating `tuple_weight * shuffle probability` into
/// `out` keyed by the merged trace.
fn accumulate_shuffles<P: Prob>(
    traces: &[&Trace],
    probs: &[P],
    tuple_weight: P,
    out: &mut BTreeMap<Trace, P>,
    at: &NodePath,
    limits: &mut Limits<'_>,
) -> Result<(), SemError> {
    let total_len: usize = traces.iter().map(|t| t.len()).sum();
    let mut positions = vec![0usize; traces.len()];
    let mut prefix: Vec<Activity> = Vec::with_capacity(total_len);

    #[allow(clippy::too_many_arguments)]
    fn go<P: Prob>(
        traces: &[&Trace],
        probs: &[P],
        positions: &mut [usize],
        prefix: &mut Vec<Activity>,
        weight: P,
        out: &mut BTreeMap<Trace, P>,
        at: &NodePath,
        limits: &mut Limits<'_>,
    ) -> Result<(), SemError> {
        limits.spend(1)?;
        let mut denom = P::zero();
        let mut any_active = false;
        for (i, t) in traces.iter().enumerate() {
            if positions[i] < t.len() {
                any_active = true;
                denom = denom + probs[i].clone();
            }
        }
        if !any_active {
            add_mass(out, Trace::new(prefix.clone()), weight);
            limits.check_entries(out.len(), at)?;
            return Ok(());
        }
        if denom.is_zero() {
            // Unreachable for validated trees (parallel weights are positive);
            // a stuck shuffle carries no probability.
            return Ok(());
        }
        for (i, t) in traces.iter().enumerate() {
            if positions[i] >= t.len() {
                continue;
            }
            let step = probs[i].clone() / denom.clone();
            if step.is_zero() {
                continue;
            }
            prefix.push(t.activities()[positions[i]].clone());
            positions[i] += 1;
            go(
                traces,
                probs,
                positions,
                prefix,
                weight.clone() * step,
                out,
                at,
                limits,
            )?;
            positions[i] -= 1;
            prefix.pop();
        }
        Ok(())
    }

    go(
        traces,
        probs,
        &mut positions,
        &mut prefix,
        tuple_weight,
        out,
        at,
        limits,
    )
}

/// Probability that the stochastic shuffling of `traces` with selection
/// probabilities `probs` yields exactly `target`. Zero when no shuffling of
/// the components spells the target.
pub fn shuffle_probability<P: Prob>(
    traces: &[Trace],
    probs: &[P],
    target: &Trace,
) -> Result<P, SemError> {
    let got: usize = traces.iter().map(Trace::len).sum();
    if got != target.len() {
        return Err(SemError::LengthMismatch {
            expected: target.len(),
            got,
        });
    }
    let mut total = P::zero();
    for p in probs {
        total = total + p.clone();
    }
    if !P::sum_is_one(&total) {
        return Err(SemError::WeightSum {
            got: total.to_f64(),
        });
    }

    // Memoized over consumption states: the consumed prefix is determined by
    // the state, so only the completion probability needs to be stored.
    fn rec<P: Prob>(
        traces: &[Trace],
        probs: &[P],
        target: &[Activity],
        positions: &mut Vec<u16>,
        k: usize,
        memo: &mut HashMap<Vec<u16>, P>,
    ) -> P {
        if k == target.len() {
            return P::one();
        }
        if let Some(hit) = memo.get(positions.as_slice()) {
            return hit.clone();
        }
        let mut denom = P::zero();
        for (i, t) in traces.iter().enumerate() {
            if (positions[i] as usize) < t.len() {
                denom = denom + probs[i].clone();
            }
        }
        let mut acc = P::zero();
        if !denom.is_zero() {
            for (i, t) in traces.iter().enumerate() {
                let pos = positions[i] as usize;
                if pos >= t.len() || t.activities()[pos] != target[k] || probs[i].is_zero() {
                    continue;
                }
                positions[i] += 1;
                let tail = rec(traces, probs, target, positions, k + 1, memo);
                positions[i] -= 1;
                acc = acc + probs[i].clone() / denom.clone() * tail;
            }
        }
        memo.insert(positions.clone(), acc.clone());
        acc
    }

    let mut positions = vec![0u16; traces.len()];
    let mut memo = HashMap::new();
    Ok(rec(
        traces,
        probs,
        target.activities(),
        &mut positions,
        0,
        &mut memo,
    ))
}

fn eval<P: Prob>(
    node: &SptNode<P>,
    path: &NodePath,
    limits: &mut Limits<'_>,
) -> Result<Partial<P>, SemError> {
    match node {
        SptNode::Leaf(a) => Ok(Partial::point(Trace::new(vec![a.clone()]))),
        SptNode::Tau => Ok(Partial::point(Trace::empty())),
        SptNode::Sequence(children) => {
            let mut acc: Option<Partial<P>> = None;
            let mut kept = P::one();
            for (i, child) in children.iter().enumerate() {
                let part = eval(child, &path.child(i as u16), limits)?;
                kept = kept * part.kept();
                acc = Some(match acc {
                    None => part,
                    Some(prev) => Partial {
                        map: convolve(&prev.map, &part.map, path, limits)?,
                        deficit: P::zero(),
                    },
                });
            }
            let mut acc = acc.expect("sequence arity checked");
            acc.deficit = P::one() - kept;
            Ok(acc)
        }
        SptNode::Choice { children, probs } => {
            let mut map = BTreeMap::new();
            let mut deficit = P::zero();
            for (i, (child, p)) in children.iter().zip(probs).enumerate() {
                if p.is_zero() {
                    // zero-probability branches are pruned before evaluation
                    continue;
                }
                let part = eval(child, &path.child(i as u16), limits)?;
                for (t, q) in part.map {
                    limits.spend(1)?;
                    add_mass(&mut map, t, p.clone() * q);
                }
                limits.check_entries(map.len(), path)?;
                deficit = deficit + p.clone() * part.deficit;
            }
            Ok(Partial { map, deficit })
        }
        SptNode::Parallel { children, probs } => {
            let parts = children
                .iter()
                .enumerate()
                .map(|(i, c)| eval(c, &path.child(i as u16), limits))
                .collect::<Result<Vec<_>, _>>()?;
            let supports: Vec<Vec<(&Trace, &P)>> =
                parts.iter().map(|p| p.map.iter().collect()).collect();
            let mut map = BTreeMap::new();
            // every tuple of child traces, weighted by the product of their
            // probabilities, then spread over all shufflings
            let mut idx = vec![0usize; supports.len()];
            'tuples: loop {
                let mut tuple_weight = P::one();
                let mut traces: Vec<&Trace> = Vec::with_capacity(idx.len());
                for (child, &i) in supports.iter().zip(&idx) {
                    if child.is_empty() {
                        break 'tuples;
                    }
                    let (t, p) = child[i];
                    traces.push(t);
                    tuple_weight = tuple_weight * p.clone();
                }
                accumulate_shuffles(&traces, probs, tuple_weight, &mut map, path, limits)?;
                // advance the mixed-radix tuple counter
                let mut dim = 0;
                loop {
                    if dim == idx.len() {
                        break 'tuples;
                    }
                    idx[dim] += 1;
                    if idx[dim] < supports[dim].len() {
                        break;
                    }
                    idx[dim] = 0;
                    dim += 1;
                }
            }
            let mut kept = P::one();
            for part in &parts {
                kept = kept * part.kept();
            }
            Ok(Partial {
                map,
                deficit: P::one() - kept,
            })
        }
        SptNode::Loop { body, redo, p_loop } => {
            let c = limits.cfg.c_max_for(path).max(1);
            let body_part = eval(body, &path.child(0), limits)?;
            let redo_part = eval(redo, &path.child(1), limits)?;
            let stop = P::one() - p_loop.clone();

            let mut map = BTreeMap::new();
            let mut term = body_part.map.clone();
            let mut weight = stop.clone(); // p^(m-1) * (1-p)
            for m in 1..=c {
                if !weight.is_zero() {
                    for (t, q) in &term {
                        limits.spend(1)?;
                        add_mass(&mut map, t.clone(), weight.clone() * q.clone());
                    }
                    limits.check_entries(map.len(), path)?;
                }
                if m < c {
                    weight = weight * p_loop.clone();
                    if weight.is_zero() && !P::EXACT {
                        break;
                    }
                    term = convolve(&term, &redo_part.map, path, limits)?;
                    term = convolve(&term, &body_part.map, path, limits)?;
                }
            }

            // The geometric tail p^c propagates upward as deficit; with exact
            // child languages it is computed in closed form.
            let deficit = if body_part.deficit.is_zero() && redo_part.deficit.is_zero() {
                p_loop.powi(c)
            } else {
                let body_kept = body_part.kept();
                let redo_kept = redo_part.kept();
                let mut kept_total = P::zero();
                let mut geo = stop.clone();
                let mut body_pow = body_kept.clone();
                let mut redo_pow = P::one();
                for _ in 1..=c {
                    kept_total = kept_total + geo.clone() * body_pow.clone() * redo_pow.clone();
                    geo = geo * p_loop.clone();
                    body_pow = body_pow * body_kept.clone();
                    redo_pow = redo_pow * redo_kept.clone();
                }
                P::one() - kept_total
            };
            Ok(Partial { map, deficit })
        }
    }
}

/// The stochastic language of `root`, exact except for the configured loop
/// truncation. The mass lost to truncation (and to the optional mass floor)
/// is reported in the result's deficit, so mass + deficit is always 1.
pub fn exact_language<P: Prob>(
    root: &SptNode<P>,
    cfg: &TruncationConfig,
) -> Result<StochasticLanguage<P>, SemError> {
    root.validate()?;
    let mut limits = Limits { cfg, work: 0 };
    let mut part = eval(root, &NodePath::root(), &mut limits)?;
    let mut deficit = part.deficit;
    if cfg.mass_floor > 0.0 {
        let floored: Vec<Trace> = part
            .map
            .iter()
            .filter(|(_, p)| p.to_f64() < cfg.mass_floor)
            .map(|(t, _)| t.clone())
            .collect();
        for t in floored {
            if let Some(p) = part.map.remove(&t) {
                deficit = deficit + p;
            }
        }
    }
    Ok(StochasticLanguage::from_parts(part.map, deficit)?)
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

const LETTER_BUDGET: u64 = 1_000_000;
const STEP_BUDGET: u64 = 20_000_000;

struct Budget {
    letters: u64,
    steps: u64,
}

impl Budget {
    fn new() -> Self {
        Budget { letters: 0, steps: 0 }
    }

    fn letter(&mut self) -> Result<(), SemError> {
        self.letters += 1;
        if self.letters > LETTER_BUDGET {
            Err(SemError::LetterBudget { cap: LETTER_BUDGET })
        } else {
            Ok(())
        }
    }

    fn step(&mut self) -> Result<(), SemError> {
        self.steps += 1;
        if self.steps > STEP_BUDGET {
            Err(SemError::StepBudget { cap: STEP_BUDGET })
        } else {
            Ok(())
        }
    }
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

// letters are collected by reference; owned traces are built once per
// distinct result, which keeps bulk simulation off the allocator
fn sample_into<'t, R: Rng>(
    node: &'t SptNode<f64>,
    rng: &mut R,
    out: &mut Vec<&'t Activity>,
    budget: &mut Budget,
) -> Result<(), SemError> {
    budget.step()?;
    match node {
        SptNode::Leaf(a) => {
            budget.letter()?;
            out.push(a);
            Ok(())
        }
        SptNode::Tau => Ok(()),
        SptNode::Sequence(children) => {
            for child in children {
                sample_into(child, rng, out, budget)?;
            }
            Ok(())
        }
        SptNode::Choice { children, probs } => {
            let i = pick_weighted(rng, probs);
            sample_into(&children[i], rng, out, budget)
        }
        SptNode::Parallel { children, probs } => {
            let mut pending: Vec<Vec<&'t Activity>> = Vec::with_capacity(children.len());
            for child in children {
                let mut buf = Vec::new();
                sample_into(child, rng, &mut buf, budget)?;
                pending.push(buf);
            }
            let mut cursors = vec![0usize; pending.len()];
            loop {
                let active: Vec<usize> = (0..pending.len())
                    .filter(|&i| cursors[i] < pending[i].len())
                    .collect();
                if active.is_empty() {
                    break;
                }
                budget.step()?;
                let weights: Vec<f64> = active.iter().map(|&i| probs[i]).collect();
                let j = active[pick_weighted(rng, &weights)];
                out.push(pending[j][cursors[j]]);
                cursors[j] += 1;
            }
            Ok(())
        }
        SptNode::Loop { body, redo, p_loop } => {
            sample_into(body, rng, out, budget)?;
            while rng.random::<f64>() < *p_loop {
                budget.step()?;
                sample_into(redo, rng, out, budget)?;
                sample_into(body, rng, out, budget)?;
            }
            Ok(())
        }
    }
}

/// Draws one trace from the tree's stochastic language.
pub fn sample_trace<R: Rng>(root: &SptNode<f64>, rng: &mut R) -> Result<Trace, SemError> {
    let mut out = Vec::new();
    let mut budget = Budget::new();
    sample_into(root, rng, &mut out, &mut budget)?;
    Ok(Trace::new(out.into_iter().cloned().collect()))
}

/// Frequency-normalized language of `n_samples` independent draws.
pub fn sampled_language<R: Rng>(
    root: &SptNode<f64>,
    n_samples: u64,
    rng: &mut R,
) -> Result<StochasticLanguage<f64>, SemError> {
    assert!(n_samples >= 1, "n_samples must be at least 1");
    root.validate()?;
    let mut counts: HashMap<Vec<&Activity>, u64> = HashMap::new();
    let mut buffer: Vec<&Activity> = Vec::new();
    for _ in 0..n_samples {
        buffer.clear();
        let mut budget = Budget::new();
        sample_into(root, rng, &mut buffer, &mut budget)?;
        if let Some(count) = counts.get_mut(buffer.as_slice()) {
            *count += 1;
        } else {
            counts.insert(buffer.clone(), 1);
        }
    }
    let n = n_samples as f64;
    Ok(StochasticLanguage::from_parts(
        counts.into_iter().map(|(letters, c)| {
            let trace = Trace::new(letters.into_iter().cloned().collect());
            (trace, c as f64 / n)
        }),
        0.0,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lang::act;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(names: &[&str]) -> Trace {
        Trace::of(names)
    }

    #[test]
    fn shuffle_kernel_worked_examples() {
        let s1 = tr(&["a", "a", "b"]);
        let s2 = tr(&["c", "d"]);
        let probs = [1.0 / 3.0, 2.0 / 3.0];
        let p = shuffle_probability(&[s1.clone(), s2.clone()], &probs, &tr(&["a", "a", "c", "d", "b"]))
            .unwrap();
        assert!((p - 4.0 / 81.0).abs() < 1e-15);
        let p = shuffle_probability(&[s1, s2], &probs, &tr(&["c", "d", "a", "a", "b"])).unwrap();
        assert!((p - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn shuffle_single_trace_is_certain() {
        let t = tr(&["x", "y"]);
        let p = shuffle_probability(std::slice::from_ref(&t), &[1.0], &t).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn shuffle_length_mismatch() {
        let err =
            shuffle_probability(&[tr(&["a"])], &[1.0], &tr(&["a", "a"])).unwrap_err();
        assert_eq!(err, SemError::LengthMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn shuffle_no_match_is_zero() {
        let p = shuffle_probability(
            &[tr(&["a"]), tr(&["b"])],
            &[0.5, 0.5],
            &tr(&["b", "b"]),
        )
        .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn sequence_example_values() {
        let t = fixtures::demo_sequence::<f64>();
        let sl = exact_language(&t, &TruncationConfig::with_c_max(4)).unwrap();
        assert!((sl.probability(&tr(&["a", "b", "c", "d"])) - 0.125).abs() < 1e-12);
        assert!((sl.probability(&tr(&["b", "a", "c", "e"])) - 0.375).abs() < 1e-12);
        assert_eq!(*sl.mass_deficit(), 0.0);
    }

    #[test]
    fn choice_example_values() {
        let t = fixtures::demo_choice::<f64>();
        let sl = exact_language(&t, &TruncationConfig::with_c_max(4)).unwrap();
        assert!((sl.probability(&tr(&["a", "b"])) - 0.05).abs() < 1e-12);
        assert!((sl.probability(&tr(&["b", "a"])) - 0.15).abs() < 1e-12);
        assert!((sl.probability(&tr(&["d"])) - 0.4).abs() < 1e-12);
        assert!((sl.probability(&tr(&["e"])) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn parallel_example_values() {
        let t = fixtures::demo_parallel::<f64>();
        let sl = exact_language(&t, &TruncationConfig::with_c_max(4)).unwrap();
        let cases = [
            (vec!["c", "a", "b"], 1.0 / 6.0),
            (vec!["c", "b", "a"], 1.0 / 2.0),
            (vec!["a", "c", "b"], 1.0 / 18.0),
            (vec!["b", "c", "a"], 1.0 / 6.0),
            (vec!["a", "b", "c"], 1.0 / 36.0),
            (vec!["b", "a", "c"], 1.0 / 12.0),
        ];
        for (names, want) in cases {
            let t: Vec<&str> = names;
            assert!((sl.probability(&tr(&t)) - want).abs() < 1e-12, "{t:?}");
        }
    }

    #[test]
    fn loop_example_values() {
        let t = fixtures::demo_loop::<f64>();
        let sl = exact_language(&t, &TruncationConfig::with_c_max(3)).unwrap();
        assert!((sl.probability(&tr(&["c"])) - 0.6).abs() < 1e-12);
        assert!((sl.probability(&tr(&["c", "a", "b", "c"])) - 0.06).abs() < 1e-12);
        assert!((sl.probability(&tr(&["c", "b", "a", "c"])) - 0.18).abs() < 1e-12);
        assert!(
            (sl.probability(&tr(&["c", "b", "a", "c", "b", "a", "c"])) - 27.0 / 500.0).abs()
                < 1e-12
        );
        // truncated geometric tail
        assert_eq!(*sl.mass_deficit(), Prob::powi(&0.4f64, 3));
    }

    #[test]
    fn bare_loop_deficit_is_exact_power() {
        let t = SptNode::looped(SptNode::Leaf(act("a")), SptNode::Leaf(act("b")), 0.3);
        let sl = exact_language(&t, &TruncationConfig::with_c_max(5)).unwrap();
        assert_eq!(*sl.mass_deficit(), Prob::powi(&0.3f64, 5));
    }

    #[test]
    fn deterministic_tree_sampling() {
        let t = SptNode::Sequence(vec![SptNode::Leaf(act("a")), SptNode::Leaf(act("b"))]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_trace(&t, &mut rng).unwrap(), tr(&["a", "b"]));
        }
    }

    #[test]
    fn zero_loop_probability_runs_once() {
        let t = SptNode::looped(SptNode::Leaf(act("a")), SptNode::Tau, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            assert_eq!(sample_trace(&t, &mut rng).unwrap(), tr(&["a"]));
        }
    }

    #[test]
    fn sampled_language_is_seed_deterministic() {
        let t = fixtures::demo_parallel::<f64>();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let l1 = sampled_language(&t, 2000, &mut r1).unwrap();
        let l2 = sampled_language(&t, 2000, &mut r2).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn pathological_loop_probability_errors() {
        let t = SptNode::looped(SptNode::Leaf(act("a")), SptNode::Tau, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample_trace(&t, &mut rng),
            Err(SemError::LetterBudget { .. }) | Err(SemError::StepBudget { .. })
        ));
    }

    #[test]
    fn entry_cap_is_reported() {
        // xor over many leaves convolved in sequence grows multiplicatively
        let letters: Vec<SptNode<f64>> = (0..10)
            .map(|i| SptNode::Leaf(act(&format!("a{i}"))))
            .collect();
        let choice = SptNode::choice(letters, vec![0.1; 10]);
        let t = SptNode::Sequence(vec![choice.clone(), choice.clone(), choice]);
        let cfg = TruncationConfig {
            entry_cap: 100,
            ..Default::default()
        };
        assert!(matches!(
            exact_language(&t, &cfg),
            Err(SemError::EntryCap { cap: 100, .. })
        ));
    }

    #[test]
    fn per_node_c_max_override() {
        let t: SptNode<f64> = SptNode::Sequence(vec![
            SptNode::looped(SptNode::Leaf(act("a")), SptNode::Tau, 0.5),
            SptNode::looped(SptNode::Leaf(act("b")), SptNode::Tau, 0.5),
        ]);
        let mut cfg = TruncationConfig::with_c_max(1);
        cfg.per_node.insert(NodePath(vec![1]), 3);
        let sl = exact_language(&t, &cfg).unwrap();
        // first loop truncated at 1 execution, second at 3
        assert!(sl.contains(&tr(&["a", "b", "b", "b"])));
        assert!(!sl.contains(&tr(&["a", "a", "b"])));
    }

    #[test]
    fn mass_floor_moves_mass_to_deficit() {
        let t = fixtures::demo_loop::<f64>();
        let mut cfg = TruncationConfig::with_c_max(3);
        cfg.mass_floor = 0.1;
        let sl = exact_language(&t, &cfg).unwrap();
        assert!(sl.contains(&tr(&["c"])));
        assert!(!sl.contains(&tr(&["c", "a", "b", "c"])));
        sl.validate().unwrap();
    }
}
