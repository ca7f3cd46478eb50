//! Shared helpers for the integration suites: random model/log generators,
//! goodness-of-fit statistics and an exhaustive transport oracle.

#![allow(dead_code)]

use rand::Rng;
use spt_core::lang::{act, Activity, EventLog, Trace};
use spt_core::tree::{annotate_with, InitPolicy, PlainTree, SptNode};

pub const ALPHABET: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

pub fn random_activity<R: Rng>(rng: &mut R, letters: &[&str]) -> Activity {
    act(letters[rng.random_range(0..letters.len())])
}

/// Random plain tree: leaf-biased with depth so sizes stay desk-scale.
pub fn random_plain<R: Rng>(rng: &mut R, max_depth: usize, letters: &[&str]) -> PlainTree {
    fn gen<R: Rng>(rng: &mut R, depth: usize, max_depth: usize, letters: &[&str]) -> PlainTree {
        let leaf_bias = if depth >= max_depth {
            1.0
        } else {
            0.3 + 0.2 * depth as f64
        };
        if rng.random::<f64>() < leaf_bias {
            if rng.random::<f64>() < 0.15 {
                PlainTree::Tau
            } else {
                PlainTree::Leaf(random_activity(rng, letters))
            }
        } else {
            let arity = rng.random_range(2..=3usize);
            let children =
                |rng: &mut R| -> Vec<PlainTree> {
                    (0..arity)
                        .map(|_| gen(rng, depth + 1, max_depth, letters))
                        .collect()
                };
            match rng.random_range(0..4u8) {
                0 => PlainTree::Sequence(children(rng)),
                1 => PlainTree::Choice(children(rng)),
                2 => PlainTree::Parallel(children(rng)),
                _ => PlainTree::looped(
                    gen(rng, depth + 1, max_depth, letters),
                    gen(rng, depth + 1, max_depth, letters),
                ),
            }
        }
    }
    gen(rng, 1, max_depth, letters)
}

pub fn random_spt<R: Rng>(rng: &mut R, max_depth: usize, letters: &[&str]) -> SptNode<f64> {
    let plain = random_plain(rng, max_depth, letters);
    annotate_with(&plain, InitPolicy::Random, rng)
}

/// Random simplex on the one-in-a-million grid: entries are multiples of
/// 1e-6 summing to exactly 1.000000 decimal, every entry positive. Such
/// values print exactly at six significant digits.
pub fn grid_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    const UNITS: u64 = 1_000_000;
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    let mut units: Vec<u64> = raw
        .iter()
        .map(|r| ((r / total) * UNITS as f64).floor().max(1.0) as u64)
        .collect();
    let mut assigned: u64 = units.iter().sum();
    // settle the remainder on the largest entry
    while assigned < UNITS {
        let max = units
            .iter()
            .enumerate()
            .max_by_key(|(_, u)| **u)
            .map(|(i, _)| i)
            .unwrap();
        units[max] += 1;
        assigned += 1;
    }
    while assigned > UNITS {
        let max = units
            .iter()
            .enumerate()
            .max_by_key(|(_, u)| **u)
            .map(|(i, _)| i)
            .unwrap();
        units[max] -= 1;
        assigned -= 1;
    }
    units.into_iter().map(|u| u as f64 / UNITS as f64).collect()
}

/// Random tree with grid-exact probabilities, the canonical-value domain of
/// the six-significant-digit text format.
pub fn random_grid_spt<R: Rng>(rng: &mut R, max_depth: usize, letters: &[&str]) -> SptNode<f64> {
    fn attach<R: Rng>(plain: &PlainTree, rng: &mut R) -> SptNode<f64> {
        match plain {
            PlainTree::Leaf(a) => SptNode::Leaf(a.clone()),
            PlainTree::Tau => SptNode::Tau,
            PlainTree::Sequence(c) => {
                SptNode::Sequence(c.iter().map(|n| attach(n, rng)).collect())
            }
            PlainTree::Choice(c) => {
                let probs = grid_simplex(rng, c.len());
                SptNode::Choice {
                    children: c.iter().map(|n| attach(n, rng)).collect(),
                    probs,
                }
            }
            PlainTree::Parallel(c) => {
                let probs = grid_simplex(rng, c.len());
                SptNode::Parallel {
                    children: c.iter().map(|n| attach(n, rng)).collect(),
                    probs,
                }
            }
            PlainTree::Loop(b, r) => {
                let p = rng.random_range(50_000..=950_000u64) as f64 / 1e6;
                SptNode::Loop {
                    body: Box::new(attach(b, rng)),
                    redo: Box::new(attach(r, rng)),
                    p_loop: p,
                }
            }
        }
    }
    let plain = random_plain(rng, max_depth, letters);
    attach(&plain, rng)
}

/// Random event log: distinct bounded traces with small multiplicities.
pub fn random_log<R: Rng>(rng: &mut R, letters: &[&str]) -> EventLog {
    let variants = rng.random_range(2..=8usize);
    let entries: Vec<(Trace, u64)> = (0..variants)
        .map(|_| {
            let len = rng.random_range(1..=8usize);
            let acts = (0..len).map(|_| random_activity(rng, letters)).collect();
            (Trace::new(acts), rng.random_range(1..=5u64))
        })
        .collect();
    EventLog::from_entries(entries).expect("non-empty by construction")
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Upper critical value of chi-square at significance 0.001 by the
/// Wilson-Hilferty approximation.
pub fn chi_square_critical_001(df: usize) -> f64 {
    let z = 3.090_232_306_167_813; // standard normal 0.999 quantile
    let df = df as f64;
    let term = 1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt();
    df * term.powi(3)
}

/// Pearson chi-square of observed counts against expected probabilities over
/// the same categories plus a pooled remainder bucket. Bins with expected
/// count below 5 are pooled into the remainder. Returns (statistic, df).
pub fn chi_square_pooled(
    categories: &[(f64, u64)], // (expected probability, observed count)
    rest_probability: f64,
    rest_observed: u64,
    n: u64,
) -> (f64, usize) {
    let n_f = n as f64;
    let mut stat = 0.0;
    let mut kept = 0usize;
    let mut pooled_expected = rest_probability * n_f;
    let mut pooled_observed = rest_observed as f64;
    for &(p, obs) in categories {
        let expected = p * n_f;
        if expected < 5.0 {
            pooled_expected += expected;
            pooled_observed += obs as f64;
        } else {
            stat += (obs as f64 - expected).powi(2) / expected;
            kept += 1;
        }
    }
    if pooled_expected > 0.0 {
        stat += (pooled_observed - pooled_expected).powi(2) / pooled_expected;
        kept += 1;
    }
    (stat, kept.saturating_sub(1))
}

// ---------------------------------------------------------------------------
// Exhaustive transport oracle
// ---------------------------------------------------------------------------

/// Minimal transport cost by exhaustive vertex enumeration: every basic
/// feasible solution corresponds to a spanning tree of the supply/demand
/// bipartite graph with m+n-1 support cells, so enumerating all such cell
/// subsets, solving the triangular flow system by leaf elimination and
/// keeping the feasible ones covers every vertex of the polytope.
pub fn brute_force_transport(supplies: &[f64], demands: &[f64], costs: &[Vec<f64>]) -> f64 {
    let m = supplies.len();
    let n = demands.len();
    let k = m + n - 1;
    let cells: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .collect();

    fn evaluate(
        chosen: &[usize],
        cells: &[(usize, usize)],
        supplies: &[f64],
        demands: &[f64],
        costs: &[Vec<f64>],
        m: usize,
        n: usize,
    ) -> Option<f64> {
        // spanning tree over rows 0..m and columns m..m+n
        let verts = m + n;
        let mut parent: Vec<usize> = (0..verts).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut degree = vec![0usize; verts];
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); verts];
        for (pos, &c) in chosen.iter().enumerate() {
            let (i, j) = cells[c];
            let (ri, cj) = (i, m + j);
            let (a, b) = (find(&mut parent, ri), find(&mut parent, cj));
            if a == b {
                return None; // cycle
            }
            parent[a] = b;
            degree[ri] += 1;
            degree[cj] += 1;
            incident[ri].push(pos);
            incident[cj].push(pos);
        }
        let root = find(&mut parent, 0);
        if (0..verts).any(|v| find(&mut parent, v) != root) {
            return None; // not spanning
        }

        // leaf elimination determines every basic flow
        let mut rem: Vec<f64> = supplies.iter().chain(demands.iter()).copied().collect();
        let mut flow = vec![f64::NAN; chosen.len()];
        let mut deg = degree.clone();
        let mut used = vec![false; chosen.len()];
        let mut leaves: Vec<usize> = (0..verts).filter(|&v| deg[v] == 1).collect();
        while let Some(v) = leaves.pop() {
            let Some(&pos) = incident[v].iter().find(|&&p| !used[p]) else {
                continue;
            };
            used[pos] = true;
            let (i, j) = cells[chosen[pos]];
            let other = if v < m { m + j } else { i };
            let q = rem[v];
            flow[pos] = q;
            if q < -1e-9 {
                return None; // infeasible vertex
            }
            rem[v] = 0.0;
            rem[other] -= q;
            deg[v] -= 1;
            deg[other] -= 1;
            if deg[other] == 1 {
                leaves.push(other);
            }
        }
        let mut cost = 0.0;
        for (pos, &c) in chosen.iter().enumerate() {
            let (i, j) = cells[c];
            let q = flow[pos];
            if q.is_nan() || q < -1e-9 {
                return None;
            }
            cost += q.max(0.0) * costs[i][j];
        }
        Some(cost)
    }

    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(k);
    #[allow(clippy::too_many_arguments)]
    fn combos(
        start: usize,
        left: usize,
        chosen: &mut Vec<usize>,
        cells: &[(usize, usize)],
        supplies: &[f64],
        demands: &[f64],
        costs: &[Vec<f64>],
        m: usize,
        n: usize,
        best: &mut f64,
    ) {
        if left == 0 {
            if let Some(cost) = evaluate(chosen, cells, supplies, demands, costs, m, n) {
                if cost < *best {
                    *best = cost;
                }
            }
            return;
        }
        if start + left > cells.len() {
            return;
        }
        for c in start..=cells.len() - left {
            chosen.push(c);
            combos(
                c + 1,
                left - 1,
                chosen,
                cells,
                supplies,
                demands,
                costs,
                m,
                n,
                best,
            );
            chosen.pop();
        }
    }
    combos(
        0, k, &mut chosen, &cells, supplies, demands, costs, m, n, &mut best,
    );
    best
}
