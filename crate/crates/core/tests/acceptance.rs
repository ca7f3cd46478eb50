//! Acceptance suite: one test per criterion, each printing a PASS line and
//! holding the stated tolerance. Criterion 10 needs the user-supplied
//! BPIC13_open log (env `BPIC13_OPEN_LOG` or `data/bpic13_open.log`) and
//! prints a SKIP line when the file is absent.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_transport, chi_square_critical_001, chi_square_pooled, random_log, random_plain};
use spt_core::distance::{emd, levenshtein_norm, solve_transport};
use spt_core::fixtures;
use spt_core::lang::{act, EventLog, StochasticLanguage, Trace};
use spt_core::miner::discover;
use spt_core::optimize::{optimize, EvalSpec, OptConfig};
use spt_core::petrinet::{StochasticWorkflowNet, TransKind};
use spt_core::prob::Prob;
use spt_core::semantics::{exact_language, sampled_language, shuffle_probability, SemError};
use spt_core::tree::SptNode;
use spt_core::{LogFormat, TruncationConfig};

fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::ratio(n, d)
}

fn tr(names: &[&str]) -> Trace {
    Trace::of(names)
}

#[test]
fn criterion_01_closed_form_language_suite() {
    let started = Instant::now();
    let cfg = TruncationConfig::with_c_max(3);
    type Case = (&'static str, Vec<(Vec<&'static str>, u64, u64)>);
    let suite: Vec<Case> = vec![
        (
            "sequence",
            vec![
                (vec!["a", "b", "c", "d"], 1, 8),
                (vec!["a", "b", "c", "e"], 1, 8),
                (vec!["b", "a", "c", "d"], 3, 8),
                (vec!["b", "a", "c", "e"], 3, 8),
            ],
        ),
        (
            "choice",
            vec![
                (vec!["a", "b"], 1, 20),
                (vec!["b", "a"], 3, 20),
                (vec!["d"], 2, 5),
                (vec!["e"], 2, 5),
            ],
        ),
        (
            "parallel",
            vec![
                (vec!["c", "a", "b"], 1, 6),
                (vec!["c", "b", "a"], 1, 2),
                (vec!["a", "c", "b"], 1, 18),
                (vec!["b", "c", "a"], 1, 6),
                (vec!["a", "b", "c"], 1, 36),
                (vec!["b", "a", "c"], 1, 12),
            ],
        ),
        (
            "loop",
            vec![
                (vec!["c"], 3, 5),
                (vec!["c", "a", "b", "c"], 3, 50),
                (vec!["c", "b", "a", "c"], 9, 50),
                (vec!["c", "a", "b", "c", "a", "b", "c"], 3, 500),
                (vec!["c", "a", "b", "c", "b", "a", "c"], 9, 500),
                (vec!["c", "b", "a", "c", "a", "b", "c"], 9, 500),
                (vec!["c", "b", "a", "c", "b", "a", "c"], 27, 500),
            ],
        ),
    ];

    for (name, values) in &suite {
        let exact = match *name {
            "sequence" => exact_language(&fixtures::demo_sequence::<BigRational>(), &cfg),
            "choice" => exact_language(&fixtures::demo_choice::<BigRational>(), &cfg),
            "parallel" => exact_language(&fixtures::demo_parallel::<BigRational>(), &cfg),
            _ => exact_language(&fixtures::demo_loop::<BigRational>(), &cfg),
        }
        .unwrap();
        let float = match *name {
            "sequence" => exact_language(&fixtures::demo_sequence::<f64>(), &cfg),
            "choice" => exact_language(&fixtures::demo_choice::<f64>(), &cfg),
            "parallel" => exact_language(&fixtures::demo_parallel::<f64>(), &cfg),
            _ => exact_language(&fixtures::demo_loop::<f64>(), &cfg),
        }
        .unwrap();
        for (names, num, den) in values {
            let trace = tr(names);
            // rational mode: zero tolerance
            assert_eq!(exact.probability(&trace), ratio(*num, *den), "{name} {trace:?}");
            // float mode: 1e-12
            let got = float.probability(&trace);
            let want = *num as f64 / *den as f64;
            assert!((got - want).abs() < 1e-12, "{name} {trace:?}: {got} vs {want}");
        }
        if *name == "loop" {
            // truncated geometric tail after three unrollings
            assert_eq!(*exact.mass_deficit(), ratio(2, 5) * ratio(2, 5) * ratio(2, 5));
        } else {
            assert_eq!(exact.total_mass(), ratio(1, 1), "{name}");
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "{elapsed:?}");
    println!("ACCEPTANCE PASS criterion 1: all closed-form values exact in rational mode, 1e-12 in float mode ({elapsed:?})");
}

#[test]
fn criterion_02_shuffle_kernel_values() {
    let s1 = tr(&["a", "a", "b"]);
    let s2 = tr(&["c", "d"]);

    let probs = [ratio(1, 3), ratio(2, 3)];
    let p = shuffle_probability(
        &[s1.clone(), s2.clone()],
        &probs,
        &tr(&["a", "a", "c", "d", "b"]),
    )
    .unwrap();
    assert_eq!(p, ratio(4, 81));
    let p = shuffle_probability(&[s1.clone(), s2.clone()], &probs, &tr(&["c", "d", "a", "a", "b"]))
        .unwrap();
    assert_eq!(p, ratio(4, 9));

    let probs = [1.0 / 3.0, 2.0 / 3.0];
    let p = shuffle_probability(&[s1.clone(), s2.clone()], &probs, &tr(&["a", "a", "c", "d", "b"]))
        .unwrap();
    assert!((p - 4.0 / 81.0).abs() < 1e-15);
    let p = shuffle_probability(&[s1, s2], &probs, &tr(&["c", "d", "a", "a", "b"])).unwrap();
    assert!((p - 4.0 / 9.0).abs() < 1e-15);
    println!("ACCEPTANCE PASS criterion 2: shuffle kernel returns 4/81 and 4/9 exactly");
}

#[test]
fn criterion_03_normalization_property() {
    let started = Instant::now();
    let cfg = TruncationConfig {
        entry_cap: 200_000,
        work_cap: 4_000_000,
        ..TruncationConfig::with_c_max(4)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut done = 0;
    let mut rejected = 0;
    while done < 1000 {
        let spt = common::random_spt(&mut rng, 4, &common::ALPHABET[..5]);
        let lang = match exact_language(&spt, &cfg) {
            Ok(l) => l,
            Err(SemError::EntryCap { .. }) | Err(SemError::WorkCap { .. }) => {
                rejected += 1;
                assert!(rejected < 2000, "generator rejects too many trees");
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        let total = lang.total_mass() + lang.mass_deficit();
        assert!((total - 1.0).abs() <= 1e-9, "mass {total} on {spt}");
        done += 1;
    }
    // bare loop: the truncated tail is the exact geometric power
    for _ in 0..100 {
        let p: f64 = rng.random();
        let lp = SptNode::looped(SptNode::Leaf(act("a")), SptNode::Leaf(act("b")), p);
        let lang = exact_language(&lp, &cfg).unwrap();
        assert_eq!(*lang.mass_deficit(), Prob::powi(&p, 4));
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");
    println!("ACCEPTANCE PASS criterion 3: mass + deficit = 1 on 1000 random trees, loop tail exact ({elapsed:?}, {rejected} resampled)");
}

#[test]
fn criterion_04_simulation_consistency() {
    let started = Instant::now();
    let n: u64 = 100_000;
    let trees: Vec<(&str, SptNode<f64>, u32)> = vec![
        ("sequence", fixtures::demo_sequence::<f64>(), 4),
        ("choice", fixtures::demo_choice::<f64>(), 4),
        ("parallel", fixtures::demo_parallel::<f64>(), 4),
        ("loop", fixtures::demo_loop::<f64>(), 6),
    ];
    for (name, tree, c_max) in trees {
        let exact = exact_language(&tree, &TruncationConfig::with_c_max(c_max)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
        let empirical = sampled_language(&tree, n, &mut rng).unwrap();

        let tv = empirical.tv_distance(&exact);
        assert!(tv < 0.02, "{name}: TV {tv}");

        // chi-square goodness of fit at alpha = 0.001, small bins pooled
        let categories: Vec<(f64, u64)> = exact
            .iter()
            .map(|(t, p)| (*p, (empirical.probability(t) * n as f64).round() as u64))
            .collect();
        let observed_in_support: u64 = categories.iter().map(|(_, o)| *o).sum();
        let rest_observed = n - observed_in_support;
        let (stat, df) = chi_square_pooled(
            &categories,
            *exact.mass_deficit(),
            rest_observed,
            n,
        );
        if df > 0 {
            let critical = chi_square_critical_001(df);
            assert!(
                stat < critical,
                "{name}: chi-square {stat} over critical {critical} (df {df})"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "{elapsed:?}");
    println!("ACCEPTANCE PASS criterion 4: simulation matches exact languages (TV < 0.02, chi-square ok) ({elapsed:?})");
}

#[test]
fn criterion_05_mapping_counts() {
    let incident = StochasticWorkflowNet::from_plain_tree(&fixtures::incident_tree_plain());
    assert_eq!(incident.transition_count(), 20);
    assert_eq!(incident.silent_count(), 17);

    let example = StochasticWorkflowNet::from_plain_tree(&fixtures::example_tree_plain());
    assert_eq!(example.silent_count(), 5);
    assert_eq!(example.visible_count(), 6);
    println!("ACCEPTANCE PASS criterion 5: mapping yields 20/17 transitions and 5 silent + 6 visible");
}

#[test]
fn criterion_06_bounded_trace_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    for i in 0..500 {
        let tree = random_plain(&mut rng, 3, &common::ALPHABET[..4]);
        let net = StochasticWorkflowNet::from_plain_tree(&tree);
        let tree_lang = tree.language_up_to(6);
        let net_lang = net.bounded_support(6);
        assert_eq!(tree_lang, net_lang, "case {i}: {tree}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "{elapsed:?}");
    println!("ACCEPTANCE PASS criterion 6: tree and mapped-net supports coincide at length 6 on 500 trees ({elapsed:?})");
}

#[test]
fn criterion_07_firing_sequence_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    for _ in 0..20 {
        let mut net = StochasticWorkflowNet::from_plain_tree(&fixtures::example_tree_plain());
        let mut weight_of = |_: &str| 0.25 + 3.75 * rng.random::<f64>();
        // every transition gets a random positive weight
        let w_a = weight_of("a");
        let w_b = weight_of("b");
        let w_enter = weight_of("enter");
        let w_exit = weight_of("exit");
        let w_redo = weight_of("redo");
        let w_e = weight_of("e");
        let w_f = weight_of("f");
        for (t, name) in [
            (net.transition_labeled("a").unwrap(), w_a),
            (net.transition_labeled("b").unwrap(), w_b),
            (net.transitions_of_kind(TransKind::LoopEnter)[0], w_enter),
            (net.transitions_of_kind(TransKind::LoopExit)[0], w_exit),
            (net.transitions_of_kind(TransKind::LoopRedo)[0], w_redo),
            (net.transition_labeled("e").unwrap(), w_e),
            (net.transition_labeled("f").unwrap(), w_f),
        ] {
            net.set_weight(t, name);
        }
        for t in [
            net.transition_labeled("c").unwrap(),
            net.transition_labeled("d").unwrap(),
            net.transitions_of_kind(TransKind::ParSplit)[0],
            net.transitions_of_kind(TransKind::ParJoin)[0],
        ] {
            let w = 0.25 + 3.75 * rng.random::<f64>();
            net.set_weight(t, w);
        }

        let run = [
            net.transitions_of_kind(TransKind::ParSplit)[0],
            net.transition_labeled("a").unwrap(),
            net.transitions_of_kind(TransKind::LoopEnter)[0],
            net.transition_labeled("c").unwrap(),
            net.transitions_of_kind(TransKind::LoopExit)[0],
            net.transitions_of_kind(TransKind::ParJoin)[0],
            net.transition_labeled("d").unwrap(),
            net.transition_labeled("f").unwrap(),
        ];
        let got = net.run_probability(&run).unwrap();
        let want = w_a / (w_a + w_b + w_enter) * (w_exit / (w_exit + w_redo))
            * (w_f / (w_e + w_f));
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        // the word gathers a second interleaving (silent loop entry before a)
        let word = tr(&["a", "c", "d", "f"]);
        let bound = net.default_step_bound(word.len(), 4);
        let word_prob = net.word_probability(&word, bound).unwrap();
        assert!(
            word_prob > got,
            "word probability {word_prob} must exceed single-run {got}"
        );
    }
    println!("ACCEPTANCE PASS criterion 7: firing-sequence product matches the three-factor formula; word sums exceed it");
}

#[test]
fn criterion_08_distance_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);

    // metric properties on 10^4 random triples
    let rand_trace = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(0..=8usize);
        Trace::new(
            (0..len)
                .map(|_| common::random_activity(rng, &common::ALPHABET[..4]))
                .collect(),
        )
    };
    for _ in 0..10_000 {
        let (a, b, c) = (rand_trace(&mut rng), rand_trace(&mut rng), rand_trace(&mut rng));
        let dab = levenshtein_norm(&a, &b);
        assert_eq!(dab == 0.0, a == b);
        assert!((dab - levenshtein_norm(&b, &a)).abs() < 1e-15);
        assert!(dab <= levenshtein_norm(&a, &c) + levenshtein_norm(&c, &b) + 1e-12);
    }

    // emd identity and symmetry on random languages
    for _ in 0..20 {
        let lang = |rng: &mut ChaCha8Rng| -> StochasticLanguage<f64> {
            let k = rng.random_range(2..6usize);
            let traces: BTreeSet<Trace> = (0..k).map(|_| rand_trace(rng)).collect();
            let weights: Vec<f64> = (0..traces.len()).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = weights.iter().sum();
            StochasticLanguage::from_parts(
                traces
                    .into_iter()
                    .zip(weights.into_iter().map(|w| w / total)),
                0.0,
            )
            .unwrap()
        };
        let l1 = lang(&mut rng);
        let l2 = lang(&mut rng);
        assert!(emd(&l1, &l1).unwrap() < 1e-12);
        let d12 = emd(&l1, &l2).unwrap();
        let d21 = emd(&l2, &l1).unwrap();
        assert!((d12 - d21).abs() < 1e-9);
    }

    // solver versus the exhaustive oracle on fifty small instances
    for _ in 0..50 {
        let m = rng.random_range(1..=5usize);
        let n = rng.random_range(1..=5usize);
        let mut supplies: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
        let total_s: f64 = supplies.iter().sum();
        supplies.iter_mut().for_each(|x| *x /= total_s);
        let mut demands: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let total_d: f64 = demands.iter().sum();
        demands.iter_mut().for_each(|x| *x /= total_d);
        let costs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let solver = solve_transport(&supplies, &demands, |i, j| costs[i][j])
            .unwrap()
            .objective;
        let oracle = brute_force_transport(&supplies, &demands, &costs);
        assert!(
            (solver - oracle).abs() < 1e-9,
            "solver {solver} oracle {oracle}"
        );
    }
    let elapsed = started.elapsed();
    println!("ACCEPTANCE PASS criterion 8: Levenshtein metric, EMD laws and solver-vs-oracle agreement ({elapsed:?})");
}

fn example_tree_parameters(tree: &SptNode<f64>) -> (f64, f64, f64, f64) {
    let SptNode::Sequence(children) = tree else {
        panic!("sequence root expected")
    };
    let SptNode::Parallel {
        children: par_kids,
        probs: par_probs,
    } = &children[0]
    else {
        panic!("parallel expected")
    };
    let SptNode::Choice { probs: ab_probs, .. } = &par_kids[0] else {
        panic!("choice expected")
    };
    let SptNode::Loop { p_loop, .. } = &par_kids[1] else {
        panic!("loop expected")
    };
    let SptNode::Choice { probs: ef_probs, .. } = &children[2] else {
        panic!("choice expected")
    };
    (ab_probs[0], par_probs[0], *p_loop, ef_probs[0])
}

#[test]
fn criterion_09_parameter_recovery() {
    let started = Instant::now();
    let truth = (0.3, 0.35, 0.3, 0.6);
    let generator = fixtures::example_tree(truth.0, truth.1, truth.2, truth.3);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC9);
    let n = 10_000u64;
    let mut counts: std::collections::BTreeMap<Trace, u64> = std::collections::BTreeMap::new();
    for _ in 0..n {
        let t = spt_core::semantics::sample_trace(&generator, &mut rng).unwrap();
        *counts.entry(t).or_insert(0) += 1;
    }
    let log = EventLog::from_entries(counts).unwrap();

    let cfg = OptConfig {
        iterations: 50,
        restarts: 5,
        eval: EvalSpec::Exact { c_max: None },
        seed: 0x0905,
        ..Default::default()
    };
    let outcome = optimize(&fixtures::example_tree_plain(), &log, &cfg).unwrap();
    let recovered = example_tree_parameters(&outcome.best_tree);

    let pairs = [
        ("choice a/b", recovered.0, truth.0),
        ("parallel", recovered.1, truth.1),
        ("loop", recovered.2, truth.2),
        ("choice e/f", recovered.3, truth.3),
    ];
    for (name, got, want) in pairs {
        assert!(
            (got - want).abs() <= 0.05,
            "{name}: recovered {got}, truth {want}"
        );
    }
    assert!(
        outcome.final_remd < 0.03,
        "final rEMD {}",
        outcome.final_remd
    );
    assert!(outcome.final_remd < outcome.start_remd);
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(300), "{elapsed:?}");
    println!(
        "ACCEPTANCE PASS criterion 9: parameters recovered within 0.05, final rEMD {:.4} ({elapsed:?})",
        outcome.final_remd
    );
}

fn bpic13_open_log() -> Option<EventLog> {
    let path = std::env::var("BPIC13_OPEN_LOG")
        .unwrap_or_else(|_| "data/bpic13_open.log".to_string());
    let text = std::fs::read_to_string(&path).ok()?;
    let format = if path.ends_with(".csv") {
        LogFormat::Csv
    } else {
        LogFormat::TraceList
    };
    EventLog::parse(&text, format).ok()
}

#[test]
fn criterion_10_bpic13_band() {
    let Some(log) = bpic13_open_log() else {
        println!(
            "ACCEPTANCE SKIP criterion 10: BPIC13_open log not supplied (set BPIC13_OPEN_LOG or data/bpic13_open.log)"
        );
        return;
    };
    let started = Instant::now();
    // the converted log: 108 distinct traces over {A, Q, C}
    assert_eq!(log.support_len(), 108);
    let names: BTreeSet<&str> = log.alphabet().iter().map(|a| a.name()).collect();
    assert_eq!(names, BTreeSet::from(["A", "C", "Q"]));

    let cfg = OptConfig {
        iterations: 20,
        restarts: 3,
        eval: EvalSpec::Auto,
        seed: 0x0B1C,
        ..Default::default()
    };
    let outcome = optimize(&fixtures::incident_tree_plain(), &log, &cfg).unwrap();
    println!(
        "criterion 10 measurements: start {:.3}, final {:.3}, mode {}",
        outcome.start_remd,
        outcome.final_remd,
        outcome.eval_mode.describe()
    );
    assert!(
        (0.2..=0.45).contains(&outcome.start_remd),
        "start rEMD {} outside the band",
        outcome.start_remd
    );
    assert!(
        outcome.final_remd <= 0.25,
        "final rEMD {}",
        outcome.final_remd
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(600), "{elapsed:?}");
    println!(
        "ACCEPTANCE PASS criterion 10: start {:.3}, 20 iterations reach {:.3} ({elapsed:?})",
        outcome.start_remd, outcome.final_remd
    );
}

#[test]
fn criterion_11_parameter_count_claim() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCB);
    for _ in 0..100 {
        let log = random_log(&mut rng, &common::ALPHABET[..4]);
        let tree = discover(&log);
        let counts = tree.param_counts();
        let net = StochasticWorkflowNet::from_plain_tree(&tree);
        assert!(
            counts.free <= net.transition_count(),
            "{tree}: {} free parameters vs {} transitions",
            counts.free,
            net.transition_count()
        );
    }
    let incident = fixtures::incident_tree_plain();
    assert_eq!(incident.param_counts().free, 9);
    let net = StochasticWorkflowNet::from_plain_tree(&incident);
    assert_eq!(net.transition_count(), 20);
    println!("ACCEPTANCE PASS criterion 11: tree parameters never exceed net weights; 9 vs 20 on the reference tree");
}
