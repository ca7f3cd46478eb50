//! Distances between traces and stochastic languages: normalized Levenshtein
//! ground distance, an exact transportation-simplex solver, Earth Mover's
//! Distance, and the restricted variant used for log-versus-model
//! conformance.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::lang::{StochasticLanguage, Trace};
use crate::prob::EPS_NORM;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("supplies sum to {supply} but demands sum to {demand}")]
    Unbalanced { supply: f64, demand: f64 },
    #[error("language carries unresolved mass deficit {deficit}; truncate or renormalize first")]
    MassDeficit { deficit: f64 },
    #[error("language mass {total} is not 1")]
    NotNormalized { total: f64 },
    #[error("model assigns no mass to the log support and renormalization is impossible")]
    ZeroRestrictedMass,
    #[error("transport problem is infeasible")]
    Infeasible,
    #[error("internal optimality certification failed: {0}")]
    Certification(String),
}

/// Unit-cost edit distance between traces.
pub fn levenshtein(a: &Trace, b: &Trace) -> usize {
    let (xs, ys) = (a.activities(), b.activities());
    if xs.is_empty() {
        return ys.len();
    }
    if ys.is_empty() {
        return xs.len();
    }
    let mut row: Vec<usize> = (0..=ys.len()).collect();
    for (i, x) in xs.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in ys.iter().enumerate() {
            let tmp = row[j + 1];
            row[j + 1] = (tmp + 1)
                .min(row[j] + 1)
                .min(diag + if x == y { 0 } else { 1 });
            diag = tmp;
        }
    }
    row[ys.len()]
}

/// Edit distance divided by the longer length, so the maximal distance is 1;
/// two empty traces are at distance 0.
pub fn levenshtein_norm(a: &Trace, b: &Trace) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / denom as f64
    }
}

/// An optimal solution of a balanced transportation problem.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// Positive flows as (supply index, demand index, mass).
    pub flows: Vec<(usize, usize, f64)>,
    /// Total cost of the plan.
    pub objective: f64,
    /// Dual potentials per supply row and demand column (0 for empty rows).
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
}

const FLOW_TOL: f64 = 1e-12;
const REDUCED_TOL: f64 = 1e-10;

/// Solves min Σ flow_ij cost_ij subject to row sums = supplies and column
/// sums = demands, with the transportation simplex. The returned plan is
/// certified optimal through its dual potentials (complementary slackness).
pub fn solve_transport(
    supplies: &[f64],
    demands: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<TransportPlan, DistError> {
    let supply_total: f64 = supplies.iter().sum();
    let demand_total: f64 = demands.iter().sum();
    if (supply_total - demand_total).abs() > EPS_NORM {
        return Err(DistError::Unbalanced {
            supply: supply_total,
            demand: demand_total,
        });
    }
    let rows: Vec<usize> = (0..supplies.len())
        .filter(|&i| supplies[i] > FLOW_TOL)
        .collect();
    let cols: Vec<usize> = (0..demands.len())
        .filter(|&j| demands[j] > FLOW_TOL)
        .collect();
    let (m, n) = (rows.len(), cols.len());
    if m == 0 || n == 0 {
        if m != n {
            return Err(DistError::Infeasible);
        }
        return Ok(TransportPlan {
            flows: Vec::new(),
            objective: 0.0,
            row_potentials: vec![0.0; supplies.len()],
            col_potentials: vec![0.0; demands.len()],
        });
    }

    let costs: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| cols.iter().map(|&j| cost(i, j)).collect())
        .collect();

    // northwest-corner initial basis: always m + n - 1 cells, possibly with
    // degenerate zero allocations
    let mut s: Vec<f64> = rows.iter().map(|&i| supplies[i]).collect();
    let mut d: Vec<f64> = cols.iter().map(|&j| demands[j]).collect();
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    let mut flow = vec![vec![0.0f64; n]; m];
    let (mut i, mut j) = (0, 0);
    loop {
        let q = s[i].min(d[j]).max(0.0);
        basis.push((i, j));
        flow[i][j] = q;
        s[i] -= q;
        d[j] -= q;
        if i + 1 == m && j + 1 == n {
            break;
        }
        if (s[i] <= d[j] && i + 1 < m) || j + 1 == n {
            i += 1;
        } else {
            j += 1;
        }
    }

    let max_pivots = 40 * (m + n) * (m + n) + 1000;
    for _pivot in 0..max_pivots {
        // dual potentials from the basis tree
        let mut u = vec![f64::NAN; m];
        let mut v = vec![f64::NAN; n];
        u[0] = 0.0;
        let mut settled = 1;
        while settled < m + n {
            let before = settled;
            for &(bi, bj) in &basis {
                if !u[bi].is_nan() && v[bj].is_nan() {
                    v[bj] = costs[bi][bj] - u[bi];
                    settled += 1;
                } else if u[bi].is_nan() && !v[bj].is_nan() {
                    u[bi] = costs[bi][bj] - v[bj];
                    settled += 1;
                }
            }
            if settled == before {
                return Err(DistError::Certification(
                    "basis graph is not a spanning tree".into(),
                ));
            }
        }

        // entering cell: first negative reduced cost in row-major order
        let mut entering = None;
        'scan: for ei in 0..m {
            for ej in 0..n {
                if costs[ei][ej] - u[ei] - v[ej] < -REDUCED_TOL {
                    entering = Some((ei, ej));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            // optimal; certify and return
            return finish(
                supplies, demands, &rows, &cols, &costs, &flow, &u, &v, m, n,
            );
        };

        // unique cycle: path from row ei to column ej through the basis tree
        // vertices: 0..m are rows, m..m+n are columns
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
        for (idx, &(bi, bj)) in basis.iter().enumerate() {
            adj[bi].push((m + bj, idx));
            adj[m + bj].push((bi, idx));
        }
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
        let mut visited = vec![false; m + n];
        let mut queue = std::collections::VecDeque::from([ei]);
        visited[ei] = true;
        while let Some(x) = queue.pop_front() {
            if x == m + ej {
                break;
            }
            for &(y, cell) in &adj[x] {
                if !visited[y] {
                    visited[y] = true;
                    parent[y] = Some((x, cell));
                    queue.push_back(y);
                }
            }
        }
        if !visited[m + ej] {
            return Err(DistError::Certification("basis tree is disconnected".into()));
        }
        // path cells from the column end back to the row end; signs alternate
        // starting with minus next to the entering (plus) cell
        let mut path_cells = Vec::new();
        let mut cursor = m + ej;
        while let Some((prev, cell)) = parent[cursor] {
            path_cells.push(cell);
            cursor = prev;
        }
        let minus_cells: Vec<usize> = path_cells.iter().copied().step_by(2).collect();
        let plus_cells: Vec<usize> = path_cells.iter().copied().skip(1).step_by(2).collect();

        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &cell in &minus_cells {
            let (bi, bj) = basis[cell];
            if flow[bi][bj] < theta - FLOW_TOL {
                theta = flow[bi][bj];
                leaving = cell;
            }
        }
        let theta = theta.max(0.0);
        for &cell in &minus_cells {
            let (bi, bj) = basis[cell];
            flow[bi][bj] = (flow[bi][bj] - theta).max(0.0);
        }
        for &cell in &plus_cells {
            let (bi, bj) = basis[cell];
            flow[bi][bj] += theta;
        }
        flow[ei][ej] += theta;
        basis[leaving] = (ei, ej);
    }
    Err(DistError::Certification("pivot limit exceeded".into()))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    supplies: &[f64],
    demands: &[f64],
    rows: &[usize],
    cols: &[usize],
    costs: &[Vec<f64>],
    flow: &[Vec<f64>],
    u: &[f64],
    v: &[f64],
    m: usize,
    n: usize,
) -> Result<TransportPlan, DistError> {
    // complementary slackness and marginal checks
    let mut objective = 0.0;
    let mut row_sums = vec![0.0; m];
    let mut col_sums = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            let f = flow[i][j];
            if f < -FLOW_TOL {
                return Err(DistError::Certification(format!(
                    "negative flow at ({i},{j})"
                )));
            }
            let reduced = costs[i][j] - u[i] - v[j];
            if reduced < -1e-8 {
                return Err(DistError::Certification(format!(
                    "negative reduced cost {reduced} at ({i},{j})"
                )));
            }
            if f > 1e-9 && reduced.abs() > 1e-8 {
                return Err(DistError::Certification(format!(
                    "slackness violated at ({i},{j}): flow {f}, reduced {reduced}"
                )));
            }
            objective += f * costs[i][j];
            row_sums[i] += f;
            col_sums[j] += f;
        }
    }
    for (i, &orig) in rows.iter().enumerate() {
        if (row_sums[i] - supplies[orig]).abs() > 1e-9 {
            return Err(DistError::Certification(format!(
                "row {orig} ships {} of {}",
                row_sums[i], supplies[orig]
            )));
        }
    }
    for (j, &orig) in cols.iter().enumerate() {
        if (col_sums[j] - demands[orig]).abs() > 1e-9 {
            return Err(DistError::Certification(format!(
                "column {orig} receives {} of {}",
                col_sums[j], demands[orig]
            )));
        }
    }
    let mut flows = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if flow[i][j] > FLOW_TOL {
                flows.push((rows[i], cols[j], flow[i][j]));
            }
        }
    }
    let mut row_potentials = vec![0.0; supplies.len()];
    let mut col_potentials = vec![0.0; demands.len()];
    for (i, &orig) in rows.iter().enumerate() {
        row_potentials[orig] = u[i];
    }
    for (j, &orig) in cols.iter().enumerate() {
        col_potentials[orig] = v[j];
    }
    Ok(TransportPlan {
        flows,
        objective,
        row_potentials,
        col_potentials,
    })
}

fn require_complete(lang: &StochasticLanguage<f64>) -> Result<(), DistError> {
    if lang.mass_deficit().abs() > EPS_NORM {
        return Err(DistError::MassDeficit {
            deficit: *lang.mass_deficit(),
        });
    }
    let total = lang.total_mass();
    if (total - 1.0).abs() > EPS_NORM {
        return Err(DistError::NotNormalized { total });
    }
    Ok(())
}

/// One matched pair of an explained EMD plan.
#[derive(Clone, Debug)]
pub struct EmdFlow {
    pub from: Trace,
    pub to: Trace,
    pub mass: f64,
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct EmdResult {
    pub distance: f64,
    pub plan: Vec<EmdFlow>,
}

/// Exact Earth Mover's Distance between two complete stochastic languages
/// under the normalized Levenshtein ground distance.
///
/// Mass shared by both languages ships in place at zero cost, which is
/// optimal because the ground distance is a metric; only the leftover
/// measures enter the simplex solve.
pub fn emd(l1: &StochasticLanguage<f64>, l2: &StochasticLanguage<f64>) -> Result<f64, DistError> {
    Ok(emd_with_plan(l1, l2)?.distance)
}

pub fn emd_with_plan(
    l1: &StochasticLanguage<f64>,
    l2: &StochasticLanguage<f64>,
) -> Result<EmdResult, DistError> {
    require_complete(l1)?;
    require_complete(l2)?;

    let mut plan = Vec::new();
    let union: BTreeSet<&Trace> = l1.support().chain(l2.support()).collect();
    let mut supplies: Vec<(Trace, f64)> = Vec::new();
    let mut demands: Vec<(Trace, f64)> = Vec::new();
    for t in union {
        let (p, q) = (l1.probability(t), l2.probability(t));
        let shared = p.min(q);
        if shared > FLOW_TOL {
            plan.push(EmdFlow {
                from: t.clone(),
                to: t.clone(),
                mass: shared,
                cost: 0.0,
            });
        }
        if p - shared > FLOW_TOL {
            supplies.push((t.clone(), p - shared));
        }
        if q - shared > FLOW_TOL {
            demands.push((t.clone(), q - shared));
        }
    }
    let distance = transport_between(&supplies, &demands, &mut plan, None)?;
    Ok(EmdResult { distance, plan })
}

/// How restricted EMD accounts for model mass outside the log support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RemdMode {
    /// Keep a residual bucket at ground distance 1 from every log trace.
    #[default]
    Penalize,
    /// Rescale the restricted model mass to 1 and compare directly.
    Renormalize,
}

/// Restricted EMD: the model language is restricted to the log's support;
/// out-of-support model mass (including any truncation deficit) is handled
/// per `mode`. The log language must be complete and normalized.
pub fn remd(
    log_lang: &StochasticLanguage<f64>,
    model: &StochasticLanguage<f64>,
    mode: RemdMode,
) -> Result<f64, DistError> {
    require_complete(log_lang)?;

    let restricted: Vec<(Trace, f64)> = log_lang
        .support()
        .map(|t| (t.clone(), model.probability(t)))
        .filter(|(_, q)| *q > 0.0)
        .collect();
    let restricted_mass: f64 = restricted.iter().map(|(_, q)| q).sum();

    let mut supplies: Vec<(Trace, f64)> = Vec::new();
    let mut demands: Vec<(Trace, f64)> = Vec::new();
    let mut plan = Vec::new();
    match mode {
        RemdMode::Penalize => {
            let residual = (1.0 - restricted_mass).max(0.0);
            for (t, p) in log_lang.iter() {
                let q = model.probability(t);
                let shared = p.min(q);
                if p - shared > FLOW_TOL {
                    supplies.push((t.clone(), p - shared));
                }
            }
            for (t, q) in &restricted {
                let shared = log_lang.probability(t).min(*q);
                if q - shared > FLOW_TOL {
                    demands.push((t.clone(), q - shared));
                }
            }
            transport_between(&supplies, &demands, &mut plan, Some(residual))
        }
        RemdMode::Renormalize => {
            if restricted_mass <= EPS_NORM {
                return Err(DistError::ZeroRestrictedMass);
            }
            for (t, p) in log_lang.iter() {
                let q = model.probability(t) / restricted_mass;
                let shared = p.min(q);
                if p - shared > FLOW_TOL {
                    supplies.push((t.clone(), p - shared));
                }
            }
            for (t, q) in &restricted {
                let scaled = q / restricted_mass;
                let shared = log_lang.probability(t).min(scaled);
                if scaled - shared > FLOW_TOL {
                    demands.push((t.clone(), scaled - shared));
                }
            }
            transport_between(&supplies, &demands, &mut plan, None)
        }
    }
}

/// Solves the trace-level transport with an optional residual demand bucket
/// at uniform cost 1, appending explained flows to `plan`.
fn transport_between(
    supplies: &[(Trace, f64)],
    demands: &[(Trace, f64)],
    plan: &mut Vec<EmdFlow>,
    residual: Option<f64>,
) -> Result<f64, DistError> {
    let residual = residual.filter(|r| *r > FLOW_TOL);
    let mut demand_masses: Vec<f64> = demands.iter().map(|(_, q)| *q).collect();
    if let Some(r) = residual {
        demand_masses.push(r);
    }
    let supply_masses: Vec<f64> = supplies.iter().map(|(_, p)| *p).collect();
    if supply_masses.is_empty() && demand_masses.is_empty() {
        return Ok(0.0);
    }
    let n_real = demands.len();
    let solution = solve_transport(&supply_masses, &demand_masses, |i, j| {
        if j >= n_real {
            1.0
        } else {
            levenshtein_norm(&supplies[i].0, &demands[j].0)
        }
    })?;
    for &(i, j, mass) in &solution.flows {
        let (to, cost) = if j >= n_real {
            // synthetic bucket for out-of-support model mass
            (Trace::empty(), 1.0)
        } else {
            (
                demands[j].0.clone(),
                levenshtein_norm(&supplies[i].0, &demands[j].0),
            )
        };
        plan.push(EmdFlow {
            from: supplies[i].0.clone(),
            to,
            mass,
            cost,
        });
    }
    Ok(solution.objective)
}
