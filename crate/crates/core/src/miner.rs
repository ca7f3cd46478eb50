//! Basic inductive-miner discovery: event log to process tree through
//! recursive cut detection on the directly-follows graph, with the standard
//! cut order (exclusive, sequence, parallel, loop) and a flower-model
//! fall-through. The discovered tree always replays every log trace.

use std::collections::{BTreeMap, BTreeSet};

use crate::lang::{Activity, EventLog, Trace};
use crate::petrinet::StochasticWorkflowNet;
use crate::tree::PlainTree;

/// Directly-follows structure of a log: edge counts plus start and end
/// activity counts.
#[derive(Clone, Debug, Default)]
pub struct DirectlyFollowsGraph {
    pub nodes: BTreeSet<Activity>,
    pub edges: BTreeMap<(Activity, Activity), u64>,
    pub start_activities: BTreeMap<Activity, u64>,
    pub end_activities: BTreeMap<Activity, u64>,
}

impl DirectlyFollowsGraph {
    pub fn has_edge(&self, from: &Activity, to: &Activity) -> bool {
        self.edges.contains_key(&(from.clone(), to.clone()))
    }
}

/// Builds the DFG of a log, weighting each adjacency by trace multiplicity.
pub fn build_dfg(log: &EventLog) -> DirectlyFollowsGraph {
    let mut dfg = DirectlyFollowsGraph::default();
    for (trace, mult) in log.iter() {
        let acts = trace.activities();
        for a in acts {
            dfg.nodes.insert(a.clone());
        }
        if let Some(first) = acts.first() {
            *dfg.start_activities.entry(first.clone()).or_insert(0) += mult;
        }
        if let Some(last) = acts.last() {
            *dfg.end_activities.entry(last.clone()).or_insert(0) += mult;
        }
        for pair in acts.windows(2) {
            *dfg.edges
                .entry((pair[0].clone(), pair[1].clone()))
                .or_insert(0) += mult;
        }
    }
    dfg
}

type SubLog = BTreeMap<Trace, u64>;

/// Discovers a perfectly fitting process tree from a non-empty log.
pub fn discover(log: &EventLog) -> PlainTree {
    let sublog: SubLog = log.iter().map(|(t, n)| (t.clone(), n)).collect();
    discover_rec(&sublog)
}

/// True when every log trace is replayable by the tree. Checked on the
/// workflow-net translation, with silent moves searched exhaustively, which
/// is equivalent to bounded membership in the tree language.
pub fn verify_fitness(tree: &PlainTree, log: &EventLog) -> bool {
    let net = StochasticWorkflowNet::from_plain_tree(tree);
    log.iter().all(|(trace, _)| net.accepts(trace))
}

fn discover_rec(log: &SubLog) -> PlainTree {
    debug_assert!(!log.is_empty());
    let has_empty = log.contains_key(&Trace::empty());
    let nonempty: SubLog = log
        .iter()
        .filter(|(t, _)| !t.is_empty())
        .map(|(t, n)| (t.clone(), *n))
        .collect();
    if nonempty.is_empty() {
        return PlainTree::Tau;
    }
    if has_empty {
        return PlainTree::Choice(vec![PlainTree::Tau, discover_rec(&nonempty)]);
    }

    // base case: every trace is the same single activity, once
    let alphabet: BTreeSet<Activity> = nonempty
        .keys()
        .flat_map(|t| t.activities().iter().cloned())
        .collect();
    if alphabet.len() == 1 {
        let a = alphabet.first().unwrap().clone();
        if nonempty.keys().all(|t| t.len() == 1) {
            return PlainTree::Leaf(a);
        }
        // repetitions of one activity: a flower over the singleton
        return PlainTree::looped(PlainTree::Leaf(a), PlainTree::Tau);
    }

    let dfg = build_dfg_sub(&nonempty);

    if let Some(groups) = exclusive_cut(&dfg) {
        let children = split_exclusive(&nonempty, &groups)
            .iter()
            .map(discover_rec)
            .collect();
        return PlainTree::Choice(children);
    }
    if let Some(groups) = sequence_cut(&dfg) {
        let children = split_sequence(&nonempty, &groups)
            .iter()
            .map(discover_rec)
            .collect();
        return PlainTree::Sequence(children);
    }
    if let Some(groups) = parallel_cut(&dfg) {
        let children = split_parallel(&nonempty, &groups)
            .iter()
            .map(discover_rec)
            .collect();
        return PlainTree::Parallel(children);
    }
    if let Some((body, redos)) = loop_cut(&dfg) {
        let (body_log, redo_logs) = split_loop(&nonempty, &body, &redos);
        let body_tree = discover_rec(&body_log);
        let redo_trees: Vec<PlainTree> = redo_logs.iter().map(discover_rec).collect();
        let redo_tree = if redo_trees.len() == 1 {
            redo_trees.into_iter().next().unwrap()
        } else {
            PlainTree::Choice(redo_trees)
        };
        return PlainTree::looped(body_tree, redo_tree);
    }

    flower(&alphabet)
}

fn build_dfg_sub(log: &SubLog) -> DirectlyFollowsGraph {
    let as_log = EventLog::from_entries(log.iter().map(|(t, n)| (t.clone(), *n)))
        .expect("sublog is non-empty");
    build_dfg(&as_log)
}

fn flower(alphabet: &BTreeSet<Activity>) -> PlainTree {
    let leaves: Vec<PlainTree> = alphabet.iter().cloned().map(PlainTree::Leaf).collect();
    let body = if leaves.len() == 1 {
        leaves.into_iter().next().unwrap()
    } else {
        PlainTree::Choice(leaves)
    };
    PlainTree::looped(body, PlainTree::Tau)
}

/// Partition of the alphabet, each group sorted, groups sorted by first member.
type Groups = Vec<BTreeSet<Activity>>;

fn union_groups(nodes: &BTreeSet<Activity>, edges: &[(Activity, Activity)]) -> Groups {
    // connected components via union-find over activity indices
    let index: BTreeMap<&Activity, usize> = nodes.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut map: BTreeMap<usize, BTreeSet<Activity>> = BTreeMap::new();
    for (a, &i) in &index {
        map.entry(find(&mut parent, i))
            .or_default()
            .insert((*a).clone());
    }
    let mut groups: Groups = map.into_values().collect();
    groups.sort_by(|a, b| a.first().cmp(&b.first()));
    groups
}

/// Exclusive-choice cut: connected components of the undirected DFG.
fn exclusive_cut(dfg: &DirectlyFollowsGraph) -> Option<Groups> {
    let edges: Vec<(Activity, Activity)> = dfg.edges.keys().cloned().collect();
    let groups = union_groups(&dfg.nodes, &edges);
    (groups.len() >= 2).then_some(groups)
}

/// Sequence cut: strongly connected components condensed, mutually
/// unreachable components merged, the rest strictly ordered by reachability.
#[allow(clippy::needless_range_loop)]
fn sequence_cut(dfg: &DirectlyFollowsGraph) -> Option<Groups> {
    let nodes: Vec<Activity> = dfg.nodes.iter().cloned().collect();
    let index: BTreeMap<&Activity, usize> = nodes.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let n = nodes.len();

    // transitive reachability over activities
    let mut reach = vec![vec![false; n]; n];
    for (a, b) in dfg.edges.keys() {
        reach[index[a]][index[b]] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }

    // group ids; start with SCCs (mutual reachability)
    let mut group: Vec<usize> = (0..n).collect();
    let merge = |group: &mut Vec<usize>, a: usize, b: usize| {
        let (ga, gb) = (group[a], group[b]);
        if ga != gb {
            for g in group.iter_mut() {
                if *g == gb {
                    *g = ga;
                }
            }
        }
    };
    for i in 0..n {
        for j in i + 1..n {
            if reach[i][j] && reach[j][i] {
                merge(&mut group, i, j);
            }
        }
    }
    // merge pairwise-unordered groups until every pair is comparable;
    // merging can induce new mutual reachability, so iterate to fixpoint
    loop {
        let mut changed = false;
        'outer: for i in 0..n {
            for j in 0..n {
                if group[i] == group[j] {
                    continue;
                }
                let fwd = group_reaches(&group, &reach, group[i], group[j]);
                let back = group_reaches(&group, &reach, group[j], group[i]);
                if fwd == back {
                    // either unordered or mutually reachable: same group
                    merge(&mut group, i, j);
                    changed = true;
                    break 'outer;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let ids: BTreeSet<usize> = group.iter().copied().collect();
    if ids.len() < 2 {
        return None;
    }
    // total order by reachability
    let mut ordered: Vec<usize> = ids.into_iter().collect();
    ordered.sort_by(|&a, &b| {
        if a == b {
            std::cmp::Ordering::Equal
        } else if group_reaches(&group, &reach, a, b) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    let groups: Groups = ordered
        .into_iter()
        .map(|g| {
            group
                .iter()
                .enumerate()
                .filter(|(_, &gg)| gg == g)
                .map(|(i, _)| nodes[i].clone())
                .collect()
        })
        .collect();
    Some(groups)
}

fn group_reaches(group: &[usize], reach: &[Vec<bool>], from: usize, to: usize) -> bool {
    for (i, &gi) in group.iter().enumerate() {
        if gi != from {
            continue;
        }
        for (j, &gj) in group.iter().enumerate() {
            if gj == to && reach[i][j] {
                return true;
            }
        }
    }
    false
}

/// Parallel cut: components of the "not mutually connected" graph, each
/// required to contain a start and an end activity.
fn parallel_cut(dfg: &DirectlyFollowsGraph) -> Option<Groups> {
    let mut anti_edges = Vec::new();
    let nodes: Vec<Activity> = dfg.nodes.iter().cloned().collect();
    for (i, a) in nodes.iter().enumerate() {
        for b in nodes.iter().skip(i + 1) {
            if !(dfg.has_edge(a, b) && dfg.has_edge(b, a)) {
                anti_edges.push((a.clone(), b.clone()));
            }
        }
    }
    let mut groups = union_groups(&dfg.nodes, &anti_edges);
    if groups.len() < 2 {
        return None;
    }
    // merge groups lacking a start or end activity into the first other group
    loop {
        let bad = groups.iter().position(|g| {
            !g.iter().any(|a| dfg.start_activities.contains_key(a))
                || !g.iter().any(|a| dfg.end_activities.contains_key(a))
        });
        match bad {
            None => break,
            Some(idx) => {
                if groups.len() == 2 {
                    return None;
                }
                let moved = groups.remove(idx);
                let target = if idx == 0 { 0 } else { idx - 1 };
                groups[target].extend(moved);
                groups.sort_by(|a, b| a.first().cmp(&b.first()));
            }
        }
    }
    (groups.len() >= 2).then_some(groups)
}

/// Loop cut: the body holds every start and end activity; each redo
/// component touches the body only through end-to-redo and redo-to-start
/// edges.
fn loop_cut(dfg: &DirectlyFollowsGraph) -> Option<(BTreeSet<Activity>, Groups)> {
    let starts: BTreeSet<Activity> = dfg.start_activities.keys().cloned().collect();
    let ends: BTreeSet<Activity> = dfg.end_activities.keys().cloned().collect();
    let mut body: BTreeSet<Activity> = starts.union(&ends).cloned().collect();
    if body.len() == dfg.nodes.len() {
        return None;
    }

    loop {
        let rest: BTreeSet<Activity> = dfg.nodes.difference(&body).cloned().collect();
        if rest.is_empty() {
            return None;
        }
        let rest_edges: Vec<(Activity, Activity)> = dfg
            .edges
            .keys()
            .filter(|(a, b)| rest.contains(a) && rest.contains(b))
            .cloned()
            .collect();
        let candidates = union_groups(&rest, &rest_edges);

        // a candidate is a valid redo component iff body->candidate edges
        // leave from ends and candidate->body edges land on starts
        let mut violating: Option<BTreeSet<Activity>> = None;
        for cand in &candidates {
            let ok = dfg.edges.keys().all(|(a, b)| {
                let into_cand = body.contains(a) && cand.contains(b);
                let outof_cand = cand.contains(a) && body.contains(b);
                (!into_cand || ends.contains(a)) && (!outof_cand || starts.contains(b))
            });
            if !ok {
                violating = Some(cand.clone());
                break;
            }
        }
        match violating {
            Some(cand) => {
                body.extend(cand);
                if body.len() == dfg.nodes.len() {
                    return None;
                }
            }
            None => return Some((body, candidates)),
        }
    }
}

fn group_of(groups: &Groups, a: &Activity) -> usize {
    groups
        .iter()
        .position(|g| g.contains(a))
        .expect("activity must belong to a group")
}

fn split_exclusive(log: &SubLog, groups: &Groups) -> Vec<SubLog> {
    let mut out: Vec<SubLog> = vec![SubLog::new(); groups.len()];
    for (trace, &mult) in log {
        let g = group_of(groups, &trace.activities()[0]);
        *out[g].entry(trace.clone()).or_insert(0) += mult;
    }
    // a group never hit by a trace cannot occur for components of the DFG,
    // but guard against empties to keep recursion total
    for (i, sub) in out.iter_mut().enumerate() {
        if sub.is_empty() {
            sub.insert(
                Trace::new(vec![groups[i].first().unwrap().clone()]),
                1,
            );
        }
    }
    out
}

fn split_sequence(log: &SubLog, groups: &Groups) -> Vec<SubLog> {
    let mut out: Vec<SubLog> = vec![SubLog::new(); groups.len()];
    for (trace, &mult) in log {
        let mut segments: Vec<Vec<Activity>> = vec![Vec::new(); groups.len()];
        for a in trace.activities() {
            segments[group_of(groups, a)].push(a.clone());
        }
        for (g, seg) in segments.into_iter().enumerate() {
            *out[g].entry(Trace::new(seg)).or_insert(0) += mult;
        }
    }
    out
}

fn split_parallel(log: &SubLog, groups: &Groups) -> Vec<SubLog> {
    let mut out: Vec<SubLog> = vec![SubLog::new(); groups.len()];
    for (trace, &mult) in log {
        for (g, group) in groups.iter().enumerate() {
            let projected: Vec<Activity> = trace
                .activities()
                .iter()
                .filter(|a| group.contains(a))
                .cloned()
                .collect();
            *out[g].entry(Trace::new(projected)).or_insert(0) += mult;
        }
    }
    out
}

fn split_loop(
    log: &SubLog,
    body: &BTreeSet<Activity>,
    redos: &Groups,
) -> (SubLog, Vec<SubLog>) {
    let mut body_log = SubLog::new();
    let mut redo_logs: Vec<SubLog> = vec![SubLog::new(); redos.len()];
    for (trace, &mult) in log {
        let mut segment: Vec<Activity> = Vec::new();
        let mut in_body = true;
        let mut current_redo = 0usize;
        for a in trace.activities() {
            let a_in_body = body.contains(a);
            if a_in_body != in_body {
                // segment boundary
                if in_body {
                    *body_log.entry(Trace::new(std::mem::take(&mut segment))).or_insert(0) += mult;
                    current_redo = redos
                        .iter()
                        .position(|g| g.contains(a))
                        .expect("redo activity belongs to a component");
                } else {
                    *redo_logs[current_redo]
                        .entry(Trace::new(std::mem::take(&mut segment)))
                        .or_insert(0) += mult;
                }
                in_body = a_in_body;
            }
            segment.push(a.clone());
        }
        debug_assert!(in_body, "traces end on an end activity, which is in the body");
        *body_log.entry(Trace::new(segment)).or_insert(0) += mult;
    }
    for (i, sub) in redo_logs.iter_mut().enumerate() {
        if sub.is_empty() {
            sub.insert(Trace::new(vec![redos[i].first().unwrap().clone()]), 1);
        }
    }
    (body_log, redo_logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lang::{act, LogFormat};
    use crate::tree::format_plain;

    fn log(text: &str) -> EventLog {
        EventLog::parse(text, LogFormat::TraceList).unwrap()
    }

    #[test]
    fn dfg_counts() {
        let dfg = build_dfg(&log("a,b x2"));
        assert_eq!(dfg.edges[&(act("a"), act("b"))], 2);
        assert_eq!(dfg.start_activities[&act("a")], 2);
        assert_eq!(dfg.end_activities[&act("b")], 2);

        let dfg = build_dfg(&log("a"));
        assert!(dfg.edges.is_empty());

        let dfg = build_dfg(&log("a,b\nb,a"));
        assert_eq!(dfg.edges[&(act("a"), act("b"))], 1);
        assert_eq!(dfg.edges[&(act("b"), act("a"))], 1);
    }

    #[test]
    fn discovers_sequence() {
        let tree = discover(&log("a,b"));
        assert_eq!(format_plain(&tree), "seq(a,b)");
        assert!(verify_fitness(&tree, &log("a,b")));
    }

    #[test]
    fn discovers_choice() {
        let tree = discover(&log("a\nb"));
        assert_eq!(format_plain(&tree), "xor(a,b)");
    }

    #[test]
    fn discovers_parallel() {
        let l = log("a,b\nb,a");
        let tree = discover(&l);
        assert_eq!(format_plain(&tree), "par(a,b)");
        assert!(verify_fitness(&tree, &l));
    }

    #[test]
    fn discovers_loop() {
        let l = log("a\na,b,a\na,b,a,b,a");
        let tree = discover(&l);
        assert_eq!(format_plain(&tree), "loop(a,b)");
        assert!(verify_fitness(&tree, &l));
    }

    #[test]
    fn empty_traces_become_optional() {
        let l = log("a\n- x2");
        let tree = discover(&l);
        assert_eq!(format_plain(&tree), "xor(tau,a)");
        assert!(verify_fitness(&tree, &l));
    }

    #[test]
    fn fitness_counterexample() {
        let tree = PlainTree::Choice(vec![
            PlainTree::Leaf(act("a")),
            PlainTree::Leaf(act("b")),
        ]);
        assert!(!verify_fitness(&tree, &log("a,b")));
    }

    #[test]
    fn example_tree_fits_example_log() {
        assert!(verify_fitness(&fixtures::example_tree_plain(), &fixtures::example_log()));
    }

    #[test]
    fn discovery_is_deterministic() {
        let l = log("a,c,d,e\nb,c,d,e\nc,b,d,f\na,c,c,d,e\nc,b,d,f\nc,c,a,d,f");
        let t1 = discover(&l);
        let t2 = discover(&l);
        assert_eq!(t1, t2);
        assert!(verify_fitness(&t1, &l));
    }

    #[test]
    fn flower_fallthrough_fits() {
        // no clean cut: overlapping behavior falls through to the flower
        let l = log("a,b,c\nc,a\nb,b,a\na,c,b,b");
        let tree = discover(&l);
        assert!(verify_fitness(&tree, &l));
    }
}
