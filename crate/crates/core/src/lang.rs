//! Traces, event logs, stochastic languages and their elementary algebra.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::prob::{Prob, EPS_NORM};

/// Names that cannot be used as activities: grammar keywords plus the
/// empty-trace token of the trace-list format.
pub const RESERVED_NAMES: [&str; 6] = ["tau", "seq", "xor", "par", "loop", "-"];

#[derive(Debug, Error, PartialEq)]
pub enum LangError {
    #[error("invalid activity name {0:?}: must be non-empty, use [A-Za-z0-9_.-] and avoid reserved words")]
    BadActivityName(String),
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("event log is empty: a log must contain at least one trace")]
    EmptyLog,
    #[error("mixture weights sum to {got}, expected 1")]
    BadMixtureWeights { got: f64 },
    #[error("mixture called with {langs} languages but {weights} weights")]
    MixtureArity { langs: usize, weights: usize },
    #[error("stochastic language mass {mass} + deficit {deficit} is not 1")]
    BadMass { mass: f64, deficit: f64 },
    #[error("stochastic language holds a non-positive probability {p} for trace {trace:?}")]
    NonPositiveProbability { trace: String, p: f64 },
    #[error("duplicate trace {0:?} in language file")]
    DuplicateTrace(String),
}

fn valid_activity_name(name: &str) -> bool {
    !name.is_empty()
        && !RESERVED_NAMES.contains(&name)
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

/// A process activity. The silent action tau is *not* an activity; it only
/// exists inside trees and nets, never inside traces.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Activity(Arc<str>);

impl Activity {
    pub fn new(name: &str) -> Result<Self, LangError> {
        if valid_activity_name(name) {
            Ok(Activity(Arc::from(name)))
        } else {
            Err(LangError::BadActivityName(name.to_string()))
        }
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Shorthand used pervasively in tests and fixtures.
pub fn act(name: &str) -> Activity {
    Activity::new(name).expect("valid activity name")
}

/// An ordered, possibly empty sequence of activities.
///
/// `Ord` is length-lexicographic, which is the canonical serialization order
/// of every language file this crate writes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Trace(Vec<Activity>);

impl Trace {
    pub fn empty() -> Self {
        Trace(Vec::new())
    }

    pub fn new(activities: Vec<Activity>) -> Self {
        Trace(activities)
    }

    pub fn of(names: &[&str]) -> Self {
        Trace(names.iter().map(|n| act(n)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn activities(&self) -> &[Activity] {
        &self.0
    }

    pub fn concat(&self, other: &Trace) -> Trace {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Trace(v)
    }

    pub fn push(&mut self, a: Activity) {
        self.0.push(a);
    }

    /// Parses a comma-separated activity list; the empty string is the empty trace.
    pub fn parse(text: &str) -> Result<Self, LangError> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Trace::empty());
        }
        let mut v = Vec::new();
        for token in text.split(',') {
            v.push(Activity::new(token.trim())?);
        }
        Ok(Trace(v))
    }
}

impl PartialOrd for Trace {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Trace {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self)
    }
}

/// Concatenation of trace sets: every trace of `s1` followed by every trace of `s2`.
pub fn concat_sets(s1: &BTreeSet<Trace>, s2: &BTreeSet<Trace>) -> BTreeSet<Trace> {
    let mut out = BTreeSet::new();
    for a in s1 {
        for b in s2 {
            out.insert(a.concat(b));
        }
    }
    out
}

fn interleave_pair_into(a: &[Activity], b: &[Activity], prefix: &mut Vec<Activity>, out: &mut BTreeSet<Trace>) {
    if a.is_empty() && b.is_empty() {
        out.insert(Trace(prefix.clone()));
        return;
    }
    if let Some((head, rest)) = a.split_first() {
        prefix.push(head.clone());
        interleave_pair_into(rest, b, prefix, out);
        prefix.pop();
    }
    if let Some((head, rest)) = b.split_first() {
        prefix.push(head.clone());
        interleave_pair_into(a, rest, prefix, out);
        prefix.pop();
    }
}

/// All order-preserving merges of each pair of traces across the two sets.
pub fn interleave_sets(s1: &BTreeSet<Trace>, s2: &BTreeSet<Trace>) -> BTreeSet<Trace> {
    let mut out = BTreeSet::new();
    for a in s1 {
        for b in s2 {
            let mut prefix = Vec::with_capacity(a.len() + b.len());
            interleave_pair_into(a.activities(), b.activities(), &mut prefix, &mut out);
        }
    }
    out
}

/// Input formats understood by [`EventLog::parse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    /// One trace per line: comma-separated activities, optional ` xN`
    /// multiplicity suffix, `#` comments, `-` for the empty trace.
    TraceList,
    /// Two-column CSV `case,activity`; rows of a case are in file order.
    Csv,
}

/// A finite multiset of traces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventLog {
    entries: BTreeMap<Trace, u64>,
    alphabet: BTreeSet<Activity>,
}

impl EventLog {
    pub fn from_entries<I: IntoIterator<Item = (Trace, u64)>>(entries: I) -> Result<Self, LangError> {
        let mut map: BTreeMap<Trace, u64> = BTreeMap::new();
        for (t, n) in entries {
            if n == 0 {
                continue;
            }
            *map.entry(t).or_insert(0) += n;
        }
        if map.is_empty() {
            return Err(LangError::EmptyLog);
        }
        let alphabet = map
            .keys()
            .flat_map(|t| t.activities().iter().cloned())
            .collect();
        Ok(EventLog { entries: map, alphabet })
    }

    pub fn parse(input: &str, format: LogFormat) -> Result<Self, LangError> {
        match format {
            LogFormat::TraceList => Self::parse_trace_list(input),
            LogFormat::Csv => Self::parse_csv(input),
        }
    }

    fn parse_trace_list(input: &str) -> Result<Self, LangError> {
        let mut entries = Vec::new();
        for (idx, raw) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (trace_part, mult) = match line.rsplit_once(char::is_whitespace) {
                Some((head, tail)) if tail.starts_with('x') => {
                    let n: u64 = tail[1..].parse().map_err(|_| LangError::MalformedLine {
                        line: line_no,
                        msg: format!("bad multiplicity suffix {tail:?}"),
                    })?;
                    if n == 0 {
                        return Err(LangError::MalformedLine {
                            line: line_no,
                            msg: "multiplicity must be at least 1".into(),
                        });
                    }
                    (head.trim(), n)
                }
                _ => (line, 1),
            };
            let trace = if trace_part == "-" {
                Trace::empty()
            } else {
                Trace::parse(trace_part).map_err(|e| LangError::MalformedLine {
                    line: line_no,
                    msg: e.to_string(),
                })?
            };
            entries.push((trace, mult));
        }
        Self::from_entries(entries)
    }

    fn parse_csv(input: &str) -> Result<Self, LangError> {
        let mut order: Vec<String> = Vec::new();
        let mut cases: BTreeMap<String, Vec<Activity>> = BTreeMap::new();
        for (idx, raw) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if idx == 0 && line.eq_ignore_ascii_case("case,activity") {
                continue;
            }
            let (case, activity) = line.split_once(',').ok_or_else(|| LangError::MalformedLine {
                line: line_no,
                msg: "expected two comma-separated columns".into(),
            })?;
            let activity = Activity::new(activity.trim()).map_err(|e| LangError::MalformedLine {
                line: line_no,
                msg: e.to_string(),
            })?;
            let case = case.trim().to_string();
            if !cases.contains_key(&case) {
                order.push(case.clone());
            }
            cases.entry(case).or_default().push(activity);
        }
        let entries = order
            .into_iter()
            .map(|c| (Trace(cases.remove(&c).unwrap()), 1));
        Self::from_entries(entries)
    }

    pub fn alphabet(&self) -> &BTreeSet<Activity> {
        &self.alphabet
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Trace, u64)> {
        self.entries.iter().map(|(t, n)| (t, *n))
    }

    pub fn multiplicity(&self, trace: &Trace) -> u64 {
        self.entries.get(trace).copied().unwrap_or(0)
    }

    /// Number of distinct traces (the support size).
    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// Total multiplicity.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn max_trace_len(&self) -> usize {
        self.entries.keys().map(Trace::len).max().unwrap_or(0)
    }

    /// The frequency-normalized stochastic language of the log.
    pub fn stochastic_language<P: Prob>(&self) -> StochasticLanguage<P> {
        let total = self.total();
        let probs = self
            .entries
            .iter()
            .map(|(t, n)| (t.clone(), P::ratio(*n, total)))
            .collect();
        StochasticLanguage {
            probs,
            mass_deficit: P::zero(),
        }
    }
}

/// A finite map from traces to probabilities, plus the truncated tail mass.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticLanguage<P: Prob = f64> {
    probs: BTreeMap<Trace, P>,
    mass_deficit: P,
}

impl<P: Prob> StochasticLanguage<P> {
    /// Builds and validates. Zero-probability entries are dropped.
    pub fn from_parts<I: IntoIterator<Item = (Trace, P)>>(
        entries: I,
        mass_deficit: P,
    ) -> Result<Self, LangError> {
        let mut probs: BTreeMap<Trace, P> = BTreeMap::new();
        for (t, p) in entries {
            if p.is_zero() {
                continue;
            }
            let slot = probs.entry(t).or_insert_with(P::zero);
            *slot = slot.clone() + p;
        }
        let sl = StochasticLanguage { probs, mass_deficit };
        sl.validate()?;
        Ok(sl)
    }

    pub fn singleton(trace: Trace) -> Self {
        StochasticLanguage {
            probs: BTreeMap::from([(trace, P::one())]),
            mass_deficit: P::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), LangError> {
        for (t, p) in &self.probs {
            if *p <= P::zero() {
                return Err(LangError::NonPositiveProbability {
                    trace: t.to_string(),
                    p: p.to_f64(),
                });
            }
        }
        let total = self.total_mass() + self.mass_deficit.clone();
        if !P::sum_is_one(&total) {
            return Err(LangError::BadMass {
                mass: self.total_mass().to_f64(),
                deficit: self.mass_deficit.to_f64(),
            });
        }
        Ok(())
    }

    pub fn probability(&self, trace: &Trace) -> P {
        self.probs.get(trace).cloned().unwrap_or_else(P::zero)
    }

    pub fn mass_deficit(&self) -> &P {
        &self.mass_deficit
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Canonically ordered (length-lexicographic) iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&Trace, &P)> {
        self.probs.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &Trace> {
        self.probs.keys()
    }

    pub fn contains(&self, trace: &Trace) -> bool {
        self.probs.contains_key(trace)
    }

    pub fn total_mass(&self) -> P {
        let mut acc = P::zero();
        for p in self.probs.values() {
            acc = acc + p.clone();
        }
        acc
    }

    /// The mixture Σ weight_i · lang_i. Weights must sum to 1.
    pub fn mixture(langs: &[&StochasticLanguage<P>], weights: &[P]) -> Result<Self, LangError> {
        if langs.len() != weights.len() {
            return Err(LangError::MixtureArity {
                langs: langs.len(),
                weights: weights.len(),
            });
        }
        let mut total = P::zero();
        for w in weights {
            total = total + w.clone();
        }
        if !P::sum_is_one(&total) {
            return Err(LangError::BadMixtureWeights { got: total.to_f64() });
        }
        let mut probs: BTreeMap<Trace, P> = BTreeMap::new();
        let mut deficit = P::zero();
        for (lang, w) in langs.iter().zip(weights) {
            if w.is_zero() {
                continue;
            }
            for (t, p) in &lang.probs {
                let slot = probs.entry(t.clone()).or_insert_with(P::zero);
                *slot = slot.clone() + w.clone() * p.clone();
            }
            deficit = deficit + w.clone() * lang.mass_deficit.clone();
        }
        Ok(StochasticLanguage {
            probs,
            mass_deficit: deficit,
        })
    }

    pub fn to_f64(&self) -> StochasticLanguage<f64> {
        StochasticLanguage {
            probs: self
                .probs
                .iter()
                .map(|(t, p)| (t.clone(), p.to_f64()))
                .collect(),
            mass_deficit: self.mass_deficit.to_f64(),
        }
    }
}

impl StochasticLanguage<f64> {
    /// Total-variation distance, treating absent traces as probability 0.
    pub fn tv_distance(&self, other: &StochasticLanguage<f64>) -> f64 {
        let mut acc = 0.0;
        for (t, p) in &self.probs {
            acc += (p - other.probability(t)).abs();
        }
        for (t, q) in &other.probs {
            if !self.contains(t) {
                acc += q;
            }
        }
        acc / 2.0
    }

    pub fn approx_eq(&self, other: &StochasticLanguage<f64>, tol: f64) -> bool {
        if (self.mass_deficit - other.mass_deficit).abs() > tol {
            return false;
        }
        let keys: BTreeSet<&Trace> = self.probs.keys().chain(other.probs.keys()).collect();
        keys.into_iter()
            .all(|t| (self.probability(t) - other.probability(t)).abs() <= tol)
    }

    /// Text form: a `# mass_deficit=` header then one `prob<TAB>trace` line
    /// per entry in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = format!("# mass_deficit={}\n", self.mass_deficit);
        for (t, p) in &self.probs {
            out.push_str(&format!("{p}\t{t}\n"));
        }
        out
    }

    pub fn parse_text(input: &str) -> Result<Self, LangError> {
        let mut probs = BTreeMap::new();
        let mut deficit = 0.0;
        for (idx, raw) in input.lines().enumerate() {
            let line_no = idx + 1;
            // the field after the tab may legitimately be empty (empty trace)
            let line = raw;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.trim_start().strip_prefix('#') {
                if let Some(value) = rest.trim().strip_prefix("mass_deficit=") {
                    deficit = value.trim().parse().map_err(|_| LangError::MalformedLine {
                        line: line_no,
                        msg: format!("bad mass_deficit value {value:?}"),
                    })?;
                }
                continue;
            }
            let (p, t) = line.split_once('\t').ok_or_else(|| LangError::MalformedLine {
                line: line_no,
                msg: "expected prob<TAB>trace".into(),
            })?;
            let p: f64 = p.trim().parse().map_err(|_| LangError::MalformedLine {
                line: line_no,
                msg: format!("bad probability {p:?}"),
            })?;
            let trace = Trace::parse(t).map_err(|e| LangError::MalformedLine {
                line: line_no,
                msg: e.to_string(),
            })?;
            if probs.insert(trace.clone(), p).is_some() {
                return Err(LangError::DuplicateTrace(trace.to_string()));
            }
        }
        let sl = StochasticLanguage {
            probs,
            mass_deficit: deficit,
        };
        sl.validate()?;
        Ok(sl)
    }
}

/// True when float totals match within the shared normalization tolerance.
pub fn within_norm_eps(x: f64, y: f64) -> bool {
    (x - y).abs() <= EPS_NORM
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(traces: &[&[&str]]) -> BTreeSet<Trace> {
        traces.iter().map(|t| Trace::of(t)).collect()
    }

    #[test]
    fn trace_list_parse() {
        let log = EventLog::parse("a,b x2\nb,a x1", LogFormat::TraceList).unwrap();
        assert_eq!(log.multiplicity(&Trace::of(&["a", "b"])), 2);
        assert_eq!(log.multiplicity(&Trace::of(&["b", "a"])), 1);
        assert_eq!(log.alphabet().len(), 2);
    }

    #[test]
    fn trace_list_comments_and_empty_trace() {
        let log = EventLog::parse("# header\na x3\n- x2\n", LogFormat::TraceList).unwrap();
        assert_eq!(log.multiplicity(&Trace::empty()), 2);
        assert_eq!(log.total(), 5);
    }

    #[test]
    fn csv_parse_matches_trace_list() {
        let csv = EventLog::parse("case,activity\nc1,a\nc1,b\nc2,b\nc2,a", LogFormat::Csv).unwrap();
        let tl = EventLog::parse("a,b\nb,a", LogFormat::TraceList).unwrap();
        assert_eq!(csv, tl);
    }

    #[test]
    fn csv_without_header() {
        let csv = EventLog::parse("c1,a\nc1,b", LogFormat::Csv).unwrap();
        assert_eq!(csv.multiplicity(&Trace::of(&["a", "b"])), 1);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert_eq!(
            EventLog::parse("# nothing\n", LogFormat::TraceList),
            Err(LangError::EmptyLog)
        );
    }

    #[test]
    fn reserved_activity_rejected() {
        let err = EventLog::parse("a,tau", LogFormat::TraceList).unwrap_err();
        assert!(matches!(err, LangError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn malformed_multiplicity_reports_line() {
        let err = EventLog::parse("a x0", LogFormat::TraceList).unwrap_err();
        assert!(matches!(err, LangError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn log_to_language_normalizes() {
        let log = EventLog::parse("a x3\nb x1", LogFormat::TraceList).unwrap();
        let sl: StochasticLanguage<f64> = log.stochastic_language();
        assert_eq!(sl.probability(&Trace::of(&["a"])), 0.75);
        assert_eq!(sl.probability(&Trace::of(&["b"])), 0.25);
        assert_eq!(*sl.mass_deficit(), 0.0);

        let log = EventLog::parse("a x2\nb x2\nc x4", LogFormat::TraceList).unwrap();
        let sl: StochasticLanguage<f64> = log.stochastic_language();
        assert_eq!(sl.probability(&Trace::of(&["c"])), 0.5);
    }

    #[test]
    fn singleton_log_language() {
        let log = EventLog::parse("a,b", LogFormat::TraceList).unwrap();
        let sl: StochasticLanguage<f64> = log.stochastic_language();
        assert_eq!(sl.probability(&Trace::of(&["a", "b"])), 1.0);
    }

    #[test]
    fn concat_sets_worked_example() {
        let s1 = set(&[&["a", "b", "c"], &["c", "d"]]);
        let s2 = set(&[&["b", "d"], &["e", "e"]]);
        let expect = set(&[
            &["a", "b", "c", "b", "d"],
            &["a", "b", "c", "e", "e"],
            &["c", "d", "b", "d"],
            &["c", "d", "e", "e"],
        ]);
        assert_eq!(concat_sets(&s1, &s2), expect);
    }

    #[test]
    fn concat_sets_identity() {
        let eps = set(&[&[]]);
        let s = set(&[&["a"], &["b", "c"]]);
        assert_eq!(concat_sets(&eps, &s), s);
        assert_eq!(concat_sets(&s, &eps), s);
        assert_eq!(
            concat_sets(&set(&[&["a"]]), &set(&[&["a"]])),
            set(&[&["a", "a"]])
        );
    }

    #[test]
    fn interleave_worked_example() {
        let s1 = set(&[&["a", "b"]]);
        let s2 = set(&[&["c"]]);
        let expect = set(&[&["a", "b", "c"], &["a", "c", "b"], &["c", "a", "b"]]);
        assert_eq!(interleave_sets(&s1, &s2), expect);
    }

    #[test]
    fn interleave_duplicates_collapse() {
        let s = interleave_sets(&set(&[&["a"]]), &set(&[&["a"]]));
        assert_eq!(s, set(&[&["a", "a"]]));
        assert_eq!(
            interleave_sets(&set(&[&[]]), &set(&[&["x"]])),
            set(&[&["x"]])
        );
    }

    #[test]
    fn mixture_identity_and_weights() {
        let l1 = StochasticLanguage::<f64>::singleton(Trace::of(&["a"]));
        let l2 = StochasticLanguage::<f64>::singleton(Trace::of(&["b"]));
        let m = StochasticLanguage::mixture(&[&l1], &[1.0]).unwrap();
        assert_eq!(m.probability(&Trace::of(&["a"])), 1.0);
        let m = StochasticLanguage::mixture(&[&l1, &l2], &[0.2, 0.8]).unwrap();
        assert!((m.probability(&Trace::of(&["a"])) - 0.2).abs() < 1e-15);
        assert!((m.probability(&Trace::of(&["b"])) - 0.8).abs() < 1e-15);
        assert!(StochasticLanguage::mixture(&[&l1, &l2], &[0.6, 0.5]).is_err());
    }

    #[test]
    fn canonical_order_is_length_lex() {
        let mut set = BTreeSet::new();
        set.insert(Trace::of(&["b"]));
        set.insert(Trace::of(&["a", "a"]));
        set.insert(Trace::of(&["a"]));
        let v: Vec<_> = set.into_iter().collect();
        assert_eq!(v, vec![Trace::of(&["a"]), Trace::of(&["b"]), Trace::of(&["a", "a"])]);
    }

    #[test]
    fn language_text_round_trip() {
        let sl = StochasticLanguage::from_parts(
            [(Trace::of(&["a", "b"]), 0.25), (Trace::empty(), 0.5), (Trace::of(&["c"]), 0.25)],
            0.0,
        )
        .unwrap();
        let text = sl.to_text();
        let back = StochasticLanguage::parse_text(&text).unwrap();
        assert_eq!(sl, back);
    }
}
