//! Stochastic workflow nets: the block-structured translation of process
//! trees, weighted firing semantics, bounded word-probability evaluation,
//! language-preserving reductions and the line-oriented net text format.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::lang::{Activity, LangError, StochasticLanguage, Trace};
use crate::tree::{annotate_uniform_in, PlainTree, SptNode, TreeError};

pub type PlaceId = usize;
pub type TransId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("transition {transition} is not enabled")]
    Disabled { transition: String },
    #[error("invalid step {position}: transition {transition} is not enabled there")]
    InvalidStep { position: usize, transition: String },
    #[error("1-safety violated: place {place} would receive a second token")]
    UnsafeMarking { place: String },
    #[error("step bound exhausted; accumulated lower bound {lower_bound}")]
    StepBoundExhausted { lower_bound: f64 },
    #[error("run exploration exceeded the cap of {cap} states")]
    RunCapExceeded { cap: u64 },
    #[error("net text line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// What a transition structurally is; filled in during tree translation and
/// used by tests and diagnostics to address transitions by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransKind {
    Activity,
    TauLeaf,
    ParSplit,
    ParJoin,
    LoopEnter,
    LoopExit,
    LoopRedo,
    Reduced,
    Parsed,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub label: Option<Activity>,
    pub weight: f64,
    pub kind: TransKind,
    inputs: Vec<PlaceId>,
    outputs: Vec<PlaceId>,
}

impl Transition {
    pub fn is_silent(&self) -> bool {
        self.label.is_none()
    }

    pub fn inputs(&self) -> &[PlaceId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[PlaceId] {
        &self.outputs
    }
}

/// A 0/1 marking over the net's places.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Marking(Vec<u64>);

impl Marking {
    fn empty(places: usize) -> Self {
        Marking(vec![0; places.div_ceil(64)])
    }

    pub fn from_places(places: &[PlaceId], total: usize) -> Self {
        let mut m = Marking::empty(total);
        for &p in places {
            m.set(p);
        }
        m
    }

    fn set(&mut self, p: PlaceId) {
        self.0[p / 64] |= 1 << (p % 64);
    }

    fn clear(&mut self, p: PlaceId) {
        self.0[p / 64] &= !(1 << (p % 64));
    }

    pub fn contains(&self, p: PlaceId) -> bool {
        self.0[p / 64] & (1 << (p % 64)) != 0
    }

    pub fn marked_places(&self, total: usize) -> Vec<PlaceId> {
        (0..total).filter(|&p| self.contains(p)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct NetMeta {
    loop_count: usize,
    tree_depth: usize,
}

#[derive(Clone, Debug)]
pub struct StochasticWorkflowNet {
    place_names: Vec<String>,
    transitions: Vec<Transition>,
    trans_names: Vec<String>,
    source: PlaceId,
    sink: PlaceId,
    meta: Option<NetMeta>,
}

impl StochasticWorkflowNet {
    // -- construction from trees ------------------------------------------

    /// Translates a plain tree; every weight is 1.
    pub fn from_plain_tree(tree: &PlainTree) -> Self {
        let spt: SptNode<f64> = annotate_uniform_in(tree);
        Self::build(&spt, false)
    }

    /// Translates a stochastic tree; branching probabilities land on the
    /// transitions that resolve the corresponding conflict.
    pub fn from_spt(tree: &SptNode<f64>) -> Result<Self, NetError> {
        tree.validate()?;
        Ok(Self::build(tree, true))
    }

    fn build(tree: &SptNode<f64>, weighted: bool) -> Self {
        let mut b = Builder {
            net: StochasticWorkflowNet {
                place_names: Vec::new(),
                transitions: Vec::new(),
                trans_names: Vec::new(),
                source: 0,
                sink: 0,
                meta: None,
            },
            weighted,
        };
        let source = b.place();
        let sink = b.place();
        b.net.source = source;
        b.net.sink = sink;
        b.block(tree, source, sink, 1.0);
        let plain = tree.strip();
        b.net.meta = Some(NetMeta {
            loop_count: plain.loop_count(),
            tree_depth: plain.depth(),
        });
        b.net
    }

    // -- basic accessors ---------------------------------------------------

    pub fn place_count(&self) -> usize {
        self.place_names.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn silent_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.is_silent()).count()
    }

    pub fn visible_count(&self) -> usize {
        self.transitions.len() - self.silent_count()
    }

    pub fn source(&self) -> PlaceId {
        self.source
    }

    pub fn sink(&self) -> PlaceId {
        self.sink
    }

    pub fn transition(&self, t: TransId) -> &Transition {
        &self.transitions[t]
    }

    pub fn transition_name(&self, t: TransId) -> &str {
        &self.trans_names[t]
    }

    pub fn transitions(&self) -> impl Iterator<Item = (TransId, &Transition)> {
        self.transitions.iter().enumerate()
    }

    pub fn set_weight(&mut self, t: TransId, weight: f64) {
        assert!(weight > 0.0, "transition weights must be positive");
        self.transitions[t].weight = weight;
    }

    /// First transition with the given visible label.
    pub fn transition_labeled(&self, name: &str) -> Option<TransId> {
        self.transitions
            .iter()
            .position(|t| t.label.as_ref().is_some_and(|a| a.name() == name))
    }

    /// Transitions of a structural kind, in creation order.
    pub fn transitions_of_kind(&self, kind: TransKind) -> Vec<TransId> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn initial_marking(&self) -> Marking {
        Marking::from_places(&[self.source], self.place_count())
    }

    pub fn is_final(&self, m: &Marking) -> bool {
        *m == Marking::from_places(&[self.sink], self.place_count())
    }

    // -- token game ---------------------------------------------------------

    pub fn is_enabled(&self, m: &Marking, t: TransId) -> bool {
        self.transitions[t].inputs.iter().all(|&p| m.contains(p))
    }

    pub fn enabled(&self, m: &Marking) -> Vec<TransId> {
        (0..self.transitions.len())
            .filter(|&t| self.is_enabled(m, t))
            .collect()
    }

    pub fn fire(&self, m: &Marking, t: TransId) -> Result<Marking, NetError> {
        if !self.is_enabled(m, t) {
            return Err(NetError::Disabled {
                transition: self.trans_names[t].clone(),
            });
        }
        let mut next = m.clone();
        for &p in &self.transitions[t].inputs {
            next.clear(p);
        }
        for &p in &self.transitions[t].outputs {
            if next.contains(p) {
                return Err(NetError::UnsafeMarking {
                    place: self.place_names[p].clone(),
                });
            }
            next.set(p);
        }
        Ok(next)
    }

    /// w_t normalized over the weights of all transitions enabled in `m`.
    pub fn step_probability(&self, m: &Marking, t: TransId) -> Result<f64, NetError> {
        if !self.is_enabled(m, t) {
            return Err(NetError::Disabled {
                transition: self.trans_names[t].clone(),
            });
        }
        let total: f64 = self
            .enabled(m)
            .iter()
            .map(|&u| self.transitions[u].weight)
            .sum();
        Ok(self.transitions[t].weight / total)
    }

    /// Product of step probabilities of a transition sequence from the
    /// initial marking.
    pub fn run_probability(&self, run: &[TransId]) -> Result<f64, NetError> {
        let mut m = self.initial_marking();
        let mut prob = 1.0;
        for (k, &t) in run.iter().enumerate() {
            if !self.is_enabled(&m, t) {
                return Err(NetError::InvalidStep {
                    position: k + 1,
                    transition: self.trans_names[t].clone(),
                });
            }
            prob *= self.step_probability(&m, t)?;
            m = self.fire(&m, t)?;
        }
        Ok(prob)
    }

    /// Generous default exploration bound for a word of the given length.
    pub fn default_step_bound(&self, word_len: usize, c_max: u32) -> usize {
        match self.meta {
            Some(meta) => 4 * (word_len + meta.loop_count * c_max as usize + meta.tree_depth),
            None => 4 * (word_len + self.silent_count() * c_max as usize + 8),
        }
    }

    /// Probability that a complete source-to-sink run of at most `max_steps`
    /// firings produces exactly `word`. Summed over all such runs by
    /// memoized depth-first search. When a still-viable branch hits the step
    /// bound the accumulated value is only a lower bound and an error
    /// reports it.
    pub fn word_probability(&self, word: &Trace, max_steps: usize) -> Result<f64, NetError> {
        let mut memo: HashMap<(Marking, usize), f64> = HashMap::new();
        let letters = word.activities();

        fn rec(
            net: &StochasticWorkflowNet,
            m: &Marking,
            pos: usize,
            steps_left: usize,
            letters: &[Activity],
            memo: &mut HashMap<(Marking, usize), f64>,
        ) -> (f64, bool) {
            if net.is_final(m) {
                return (if pos == letters.len() { 1.0 } else { 0.0 }, true);
            }
            if let Some(&v) = memo.get(&(m.clone(), pos)) {
                return (v, true);
            }
            let enabled = net.enabled(m);
            if enabled.is_empty() {
                return (0.0, true);
            }
            if steps_left == 0 {
                return (0.0, false);
            }
            let total_w: f64 = enabled.iter().map(|&t| net.transitions[t].weight).sum();
            let mut acc = 0.0;
            let mut complete = true;
            for t in enabled {
                let tr = &net.transitions[t];
                let factor = tr.weight / total_w;
                let (value, sub_complete) = match &tr.label {
                    None => {
                        let next = net.fire(m, t).expect("enabled");
                        rec(net, &next, pos, steps_left - 1, letters, memo)
                    }
                    Some(a) => {
                        if pos < letters.len() && letters[pos] == *a {
                            let next = net.fire(m, t).expect("enabled");
                            rec(net, &next, pos + 1, steps_left - 1, letters, memo)
                        } else {
                            (0.0, true)
                        }
                    }
                };
                acc += factor * value;
                complete &= sub_complete;
            }
            if complete {
                memo.insert((m.clone(), pos), acc);
            }
            (acc, complete)
        }

        let (value, complete) = rec(
            self,
            &self.initial_marking(),
            0,
            max_steps,
            letters,
            &mut memo,
        );
        if complete {
            Ok(value)
        } else {
            Err(NetError::StepBoundExhausted { lower_bound: value })
        }
    }

    /// The stochastic language of all complete runs of at most `max_steps`
    /// firings, accumulated by visible projection. Unfinished probability
    /// mass is reported as the language's deficit.
    pub fn bounded_language(
        &self,
        max_steps: usize,
        run_cap: u64,
    ) -> Result<StochasticLanguage<f64>, NetError> {
        let mut out: BTreeMap<Trace, f64> = BTreeMap::new();
        let mut deficit = 0.0;
        let mut visits: u64 = 0;

        #[allow(clippy::too_many_arguments)]
        fn explore(
            net: &StochasticWorkflowNet,
            m: &Marking,
            prefix: &mut Vec<Activity>,
            prob: f64,
            steps_left: usize,
            out: &mut BTreeMap<Trace, f64>,
            deficit: &mut f64,
            visits: &mut u64,
            run_cap: u64,
        ) -> Result<(), NetError> {
            *visits += 1;
            if *visits > run_cap {
                return Err(NetError::RunCapExceeded { cap: run_cap });
            }
            if net.is_final(m) {
                *out.entry(Trace::new(prefix.clone())).or_insert(0.0) += prob;
                return Ok(());
            }
            let enabled = net.enabled(m);
            if enabled.is_empty() || steps_left == 0 {
                *deficit += prob;
                return Ok(());
            }
            let total_w: f64 = enabled.iter().map(|&t| net.transitions[t].weight).sum();
            for t in enabled {
                let tr = &net.transitions[t];
                let next = net.fire(m, t)?;
                let p = prob * tr.weight / total_w;
                match &tr.label {
                    None => explore(
                        net, &next, prefix, p, steps_left - 1, out, deficit, visits, run_cap,
                    )?,
                    Some(a) => {
                        prefix.push(a.clone());
                        explore(
                            net, &next, prefix, p, steps_left - 1, out, deficit, visits, run_cap,
                        )?;
                        prefix.pop();
                    }
                }
            }
            Ok(())
        }

        let mut prefix = Vec::new();
        explore(
            self,
            &self.initial_marking(),
            &mut prefix,
            1.0,
            max_steps,
            &mut out,
            &mut deficit,
            &mut visits,
            run_cap,
        )?;
        Ok(StochasticLanguage::from_parts(out, deficit)?)
    }

    /// All words of length at most `max_len` produced by complete runs,
    /// regardless of probability. Silent cycles are handled by closure, so
    /// this terminates on every net.
    pub fn bounded_support(&self, max_len: usize) -> BTreeSet<Trace> {
        let mut memo: HashMap<(Marking, usize), BTreeSet<Trace>> = HashMap::new();
        self.suffixes(self.initial_marking(), max_len, &mut memo)
    }

    fn silent_closure(&self, start: &Marking) -> Vec<Marking> {
        let mut seen: HashSet<Marking> = HashSet::new();
        let mut queue = VecDeque::from([start.clone()]);
        seen.insert(start.clone());
        let mut out = Vec::new();
        while let Some(m) = queue.pop_front() {
            out.push(m.clone());
            for t in self.enabled(&m) {
                if self.transitions[t].is_silent() {
                    let next = self.fire(&m, t).expect("enabled");
                    if seen.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        out
    }

    fn suffixes(
        &self,
        m: Marking,
        budget: usize,
        memo: &mut HashMap<(Marking, usize), BTreeSet<Trace>>,
    ) -> BTreeSet<Trace> {
        if let Some(hit) = memo.get(&(m.clone(), budget)) {
            return hit.clone();
        }
        let mut out = BTreeSet::new();
        for mc in self.silent_closure(&m) {
            if self.is_final(&mc) {
                out.insert(Trace::empty());
            }
            if budget == 0 {
                continue;
            }
            for t in self.enabled(&mc) {
                if let Some(a) = self.transitions[t].label.clone() {
                    let next = self.fire(&mc, t).expect("enabled");
                    for suffix in self.suffixes(next, budget - 1, memo) {
                        let word = Trace::new(vec![a.clone()]).concat(&suffix);
                        out.insert(word);
                    }
                }
            }
        }
        memo.insert((m, budget), out.clone());
        out
    }

    /// Replays a trace, true when some run of the net produces exactly it.
    pub fn accepts(&self, trace: &Trace) -> bool {
        let letters = trace.activities();
        let mut visited: HashSet<(Marking, usize)> = HashSet::new();
        let mut stack = vec![(self.initial_marking(), 0usize)];
        while let Some((m, pos)) = stack.pop() {
            if !visited.insert((m.clone(), pos)) {
                continue;
            }
            if self.is_final(&m) && pos == letters.len() {
                return true;
            }
            for t in self.enabled(&m) {
                let tr = &self.transitions[t];
                match &tr.label {
                    None => stack.push((self.fire(&m, t).expect("enabled"), pos)),
                    Some(a) => {
                        if pos < letters.len() && letters[pos] == *a {
                            stack.push((self.fire(&m, t).expect("enabled"), pos + 1));
                        }
                    }
                }
            }
        }
        false
    }

    // -- reductions ----------------------------------------------------------

    /// Applies language-preserving structural reductions until fixpoint:
    /// series place-silent-place fusion, and collapse of single-activity
    /// loop blocks into a first-iteration transition plus a repeat self-loop.
    pub fn reduce(&self) -> StochasticWorkflowNet {
        let mut net = self.clone();
        loop {
            if let Some(next) = net.try_series_fusion() {
                net = next;
                continue;
            }
            if let Some(next) = net.try_loop_collapse() {
                net = next;
                continue;
            }
            break;
        }
        net
    }

    fn place_io(&self) -> (Vec<Vec<TransId>>, Vec<Vec<TransId>>) {
        let mut into = vec![Vec::new(); self.place_count()];
        let mut from = vec![Vec::new(); self.place_count()];
        for (ti, t) in self.transitions.iter().enumerate() {
            for &p in &t.outputs {
                into[p].push(ti);
            }
            for &p in &t.inputs {
                from[p].push(ti);
            }
        }
        (into, from)
    }

    fn try_series_fusion(&self) -> Option<StochasticWorkflowNet> {
        let (into, from) = self.place_io();
        for (ti, t) in self.transitions.iter().enumerate() {
            if !t.is_silent() || t.inputs.len() != 1 || t.outputs.len() != 1 {
                continue;
            }
            let p = t.inputs[0];
            let q = t.outputs[0];
            if p == q || (p == self.source && q == self.sink) {
                continue;
            }
            if from[p] != vec![ti] || into[q] != vec![ti] {
                continue;
            }
            // merge q into p, drop t
            let mut net = self.clone();
            for u in &mut net.transitions {
                for place in u.inputs.iter_mut().chain(u.outputs.iter_mut()) {
                    if *place == q {
                        *place = p;
                    }
                }
            }
            if net.sink == q {
                net.sink = p;
            }
            net.drop_transitions(&[ti]);
            net.drop_places(&[q]);
            return Some(net);
        }
        None
    }

    fn try_loop_collapse(&self) -> Option<StochasticWorkflowNet> {
        let (into, from) = self.place_io();
        for (ri, r) in self.transitions.iter().enumerate() {
            if !r.is_silent() || r.inputs.len() != 1 || r.outputs.len() != 1 {
                continue;
            }
            let bo = r.inputs[0];
            let bi = r.outputs[0];
            if bo == bi {
                continue;
            }
            // body place bi: fed by {enter, loop-back}, feeding one visible x
            if from[bi].len() != 1 || into[bi].len() != 2 {
                continue;
            }
            let xi = from[bi][0];
            let x = &self.transitions[xi];
            if x.is_silent() || x.inputs != vec![bi] || x.outputs != vec![bo] {
                continue;
            }
            let ni = *into[bi].iter().find(|&&t| t != ri)?;
            let n = &self.transitions[ni];
            if !n.is_silent() || n.inputs.len() != 1 || n.outputs != vec![bi] {
                continue;
            }
            let e = n.inputs[0];
            if e == bi || e == bo {
                continue;
            }
            // bo is produced only by x and consumed by the loop-back plus exits
            if into[bo] != vec![xi] || !from[bo].contains(&ri) || from[bo].len() < 2 {
                continue;
            }
            let mut net = self.clone();
            let label = x.label.clone();
            let base = label
                .as_ref()
                .map(|a| a.name().to_string())
                .unwrap_or_default();
            net.add_transition(
                format!("{base}_first{ri}"),
                label.clone(),
                n.weight,
                TransKind::Reduced,
                vec![e],
                vec![bo],
            );
            net.add_transition(
                format!("{base}_again{ri}"),
                label,
                r.weight,
                TransKind::Reduced,
                vec![bo],
                vec![bo],
            );
            net.drop_transitions(&[ni, xi, ri]);
            net.drop_places(&[bi]);
            return Some(net);
        }
        None
    }

    fn add_transition(
        &mut self,
        name: String,
        label: Option<Activity>,
        weight: f64,
        kind: TransKind,
        inputs: Vec<PlaceId>,
        outputs: Vec<PlaceId>,
    ) -> TransId {
        self.transitions.push(Transition {
            label,
            weight,
            kind,
            inputs,
            outputs,
        });
        self.trans_names.push(name);
        self.transitions.len() - 1
    }

    fn drop_transitions(&mut self, doomed: &[TransId]) {
        let names = std::mem::take(&mut self.trans_names);
        let trans = std::mem::take(&mut self.transitions);
        for (i, (t, name)) in trans.into_iter().zip(names).enumerate() {
            if !doomed.contains(&i) {
                self.transitions.push(t);
                self.trans_names.push(name);
            }
        }
    }

    fn drop_places(&mut self, doomed: &[PlaceId]) {
        let mut remap = vec![usize::MAX; self.place_count()];
        let mut names = Vec::new();
        for (i, name) in self.place_names.iter().enumerate() {
            if !doomed.contains(&i) {
                remap[i] = names.len();
                names.push(name.clone());
            }
        }
        for t in &mut self.transitions {
            for p in t.inputs.iter_mut().chain(t.outputs.iter_mut()) {
                *p = remap[*p];
            }
        }
        self.source = remap[self.source];
        self.sink = remap[self.sink];
        self.place_names = names;
    }

    // -- text and DOT formats -------------------------------------------------

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in &self.place_names {
            let _ = writeln!(out, "place {name}");
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let label = t.label.as_ref().map(|a| a.name()).unwrap_or("tau");
            let _ = writeln!(
                out,
                "trans {} label={} weight={}",
                self.trans_names[i], label, t.weight
            );
        }
        for (i, t) in self.transitions.iter().enumerate() {
            for &p in &t.inputs {
                let _ = writeln!(out, "arc {} {}", self.place_names[p], self.trans_names[i]);
            }
            for &p in &t.outputs {
                let _ = writeln!(out, "arc {} {}", self.trans_names[i], self.place_names[p]);
            }
        }
        let _ = writeln!(out, "source {}", self.place_names[self.source]);
        let _ = writeln!(out, "sink {}", self.place_names[self.sink]);
        out
    }

    pub fn parse_text(input: &str) -> Result<Self, NetError> {
        let mut net = StochasticWorkflowNet {
            place_names: Vec::new(),
            transitions: Vec::new(),
            trans_names: Vec::new(),
            source: usize::MAX,
            sink: usize::MAX,
            meta: None,
        };
        let mut places: HashMap<String, PlaceId> = HashMap::new();
        let mut trans: HashMap<String, TransId> = HashMap::new();
        let err = |line: usize, msg: String| NetError::Parse { line, msg };
        for (idx, raw) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("place") => {
                    let name = fields
                        .next()
                        .ok_or_else(|| err(line_no, "place needs a name".into()))?;
                    if places.contains_key(name) || trans.contains_key(name) {
                        return Err(err(line_no, format!("duplicate node name {name}")));
                    }
                    places.insert(name.to_string(), net.place_names.len());
                    net.place_names.push(name.to_string());
                }
                Some("trans") => {
                    let name = fields
                        .next()
                        .ok_or_else(|| err(line_no, "trans needs a name".into()))?;
                    if trans.contains_key(name) || places.contains_key(name) {
                        return Err(err(line_no, format!("duplicate node name {name}")));
                    }
                    let mut label: Option<String> = None;
                    let mut weight: f64 = 1.0;
                    for field in fields {
                        if let Some(v) = field.strip_prefix("label=") {
                            label = Some(v.to_string());
                        } else if let Some(v) = field.strip_prefix("weight=") {
                            weight = v
                                .parse()
                                .map_err(|_| err(line_no, format!("bad weight {v:?}")))?;
                        } else {
                            return Err(err(line_no, format!("unknown field {field:?}")));
                        }
                    }
                    if !weight.is_finite() || weight <= 0.0 {
                        return Err(err(line_no, "weight must be positive".into()));
                    }
                    let label = match label.as_deref() {
                        None | Some("tau") => None,
                        Some(other) => {
                            Some(Activity::new(other).map_err(|e| err(line_no, e.to_string()))?)
                        }
                    };
                    let kind = if label.is_some() {
                        TransKind::Activity
                    } else {
                        TransKind::Parsed
                    };
                    trans.insert(name.to_string(), net.transitions.len());
                    net.add_transition(name.to_string(), label, weight, kind, vec![], vec![]);
                }
                Some("arc") => {
                    let from = fields
                        .next()
                        .ok_or_else(|| err(line_no, "arc needs two endpoints".into()))?;
                    let to = fields
                        .next()
                        .ok_or_else(|| err(line_no, "arc needs two endpoints".into()))?;
                    match (places.get(from), trans.get(to), trans.get(from), places.get(to)) {
                        (Some(&p), Some(&t), _, _) => net.transitions[t].inputs.push(p),
                        (_, _, Some(&t), Some(&p)) => net.transitions[t].outputs.push(p),
                        _ => {
                            return Err(err(
                                line_no,
                                format!(
                                    "arc {from} -> {to} does not connect a declared place and transition"
                                ),
                            ))
                        }
                    }
                }
                Some("source") => {
                    let name = fields
                        .next()
                        .ok_or_else(|| err(line_no, "source needs a place".into()))?;
                    net.source = *places
                        .get(name)
                        .ok_or_else(|| err(line_no, format!("unknown place {name}")))?;
                }
                Some("sink") => {
                    let name = fields
                        .next()
                        .ok_or_else(|| err(line_no, "sink needs a place".into()))?;
                    net.sink = *places
                        .get(name)
                        .ok_or_else(|| err(line_no, format!("unknown place {name}")))?;
                }
                Some(other) => return Err(err(line_no, format!("unknown directive {other:?}"))),
                None => unreachable!(),
            }
        }
        if net.source == usize::MAX || net.sink == usize::MAX {
            return Err(err(0, "net text must declare source and sink".into()));
        }
        let (into, from) = net.place_io();
        if !into[net.source].is_empty() {
            return Err(err(0, "source place has incoming arcs".into()));
        }
        if !from[net.sink].is_empty() {
            return Err(err(0, "sink place has outgoing arcs".into()));
        }
        Ok(net)
    }

    /// Graphviz rendering; silent transitions are filled black.
    pub fn to_dot(&self) -> String {
        let mut out =
            String::from("digraph wn {\n  rankdir=LR;\n  node [fontname=\"Helvetica\"];\n");
        for (i, name) in self.place_names.iter().enumerate() {
            let extra = if i == self.source {
                " xlabel=\"source\""
            } else if i == self.sink {
                " xlabel=\"sink\""
            } else {
                ""
            };
            let _ = writeln!(out, "  {name} [shape=circle label=\"\"{extra}];");
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let name = &self.trans_names[i];
            match &t.label {
                Some(a) => {
                    let _ = writeln!(
                        out,
                        "  {name} [shape=box label=\"{}\" tooltip=\"w={}\"];",
                        a.name(),
                        t.weight
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  {name} [shape=box style=filled fillcolor=black label=\"\" tooltip=\"tau w={}\"];",
                        t.weight
                    );
                }
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let name = &self.trans_names[i];
            for &p in &t.inputs {
                let _ = writeln!(out, "  {} -> {name};", self.place_names[p]);
            }
            for &p in &t.outputs {
                let _ = writeln!(out, "  {name} -> {};", self.place_names[p]);
            }
        }
        out.push_str("}\n");
        out
    }
}

struct Builder {
    net: StochasticWorkflowNet,
    weighted: bool,
}

impl Builder {
    fn place(&mut self) -> PlaceId {
        let id = self.net.place_names.len();
        self.net.place_names.push(format!("p{id}"));
        id
    }

    fn transition(
        &mut self,
        label: Option<Activity>,
        weight: f64,
        kind: TransKind,
        inputs: Vec<PlaceId>,
        outputs: Vec<PlaceId>,
    ) -> TransId {
        let name = format!("t{}", self.net.transitions.len() + 1);
        let weight = if self.weighted { weight } else { 1.0 };
        self.net
            .add_transition(name, label, weight, kind, inputs, outputs)
    }

    fn block(&mut self, node: &SptNode<f64>, entry: PlaceId, exit: PlaceId, factor: f64) {
        match node {
            SptNode::Leaf(a) => {
                self.transition(
                    Some(a.clone()),
                    factor,
                    TransKind::Activity,
                    vec![entry],
                    vec![exit],
                );
            }
            SptNode::Tau => {
                self.transition(None, factor, TransKind::TauLeaf, vec![entry], vec![exit]);
            }
            SptNode::Sequence(children) => {
                let mut current = entry;
                for (i, child) in children.iter().enumerate() {
                    let next = if i + 1 == children.len() {
                        exit
                    } else {
                        self.place()
                    };
                    let f = if i == 0 { factor } else { 1.0 };
                    self.block(child, current, next, f);
                    current = next;
                }
            }
            SptNode::Choice { children, probs } => {
                for (child, p) in children.iter().zip(probs) {
                    self.block(child, entry, exit, factor * p);
                }
            }
            SptNode::Parallel { children, .. } => {
                let entries: Vec<PlaceId> = children.iter().map(|_| self.place()).collect();
                let exits: Vec<PlaceId> = children.iter().map(|_| self.place()).collect();
                self.transition(
                    None,
                    factor,
                    TransKind::ParSplit,
                    vec![entry],
                    entries.clone(),
                );
                for ((child, &e), &x) in children.iter().zip(&entries).zip(&exits) {
                    self.block(child, e, x, 1.0);
                }
                self.transition(None, 1.0, TransKind::ParJoin, exits, vec![exit]);
            }
            SptNode::Loop { body, redo, p_loop } => {
                let body_in = self.place();
                let body_out = self.place();
                self.transition(
                    None,
                    factor,
                    TransKind::LoopEnter,
                    vec![entry],
                    vec![body_in],
                );
                self.block(body, body_in, body_out, 1.0);
                self.transition(
                    None,
                    1.0 - p_loop,
                    TransKind::LoopExit,
                    vec![body_out],
                    vec![exit],
                );
                match redo.as_ref() {
                    // a tau redo is realized by the loop-back transition itself
                    SptNode::Tau => {
                        self.transition(
                            None,
                            *p_loop,
                            TransKind::LoopRedo,
                            vec![body_out],
                            vec![body_in],
                        );
                    }
                    other => {
                        let redo_in = self.place();
                        self.transition(
                            None,
                            *p_loop,
                            TransKind::LoopRedo,
                            vec![body_out],
                            vec![redo_in],
                        );
                        self.block(other, redo_in, body_in, 1.0);
                    }
                }
            }
        }
    }
}

/// Bounded trace equivalence: the supports of the tree language and of the
/// mapped net's language coincide up to `max_len`.
pub fn trace_equivalent(tree: &PlainTree, net: &StochasticWorkflowNet, max_len: usize) -> bool {
    tree.language_up_to(max_len) == net.bounded_support(max_len)
}
