//! `spt`: command-line pipeline for stochastic process trees.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spt_core::distance::{emd_with_plan, remd, RemdMode};
use spt_core::fixtures;
use spt_core::lang::{EventLog, LogFormat, StochasticLanguage};
use spt_core::miner::{discover, verify_fitness};
use spt_core::optimize::{optimize, report, EvalSpec, OptConfig, ParamLayout};
use spt_core::petrinet::{trace_equivalent, StochasticWorkflowNet};
use spt_core::semantics::{exact_language, sampled_language};
use spt_core::tree::{
    annotate, format_plain, format_spt, format_spt_precise, parse_tree, spt_to_dot, InitPolicy,
    ParsedTree, PlainTree, SptNode,
};
use spt_core::TruncationConfig;

#[derive(Parser)]
#[command(
    name = "spt",
    version,
    about = "Stochastic process trees: discovery, stochastic languages, workflow nets, EMD conformance and parameter fitting"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// one trace per line: a,b,c with optional " xN" suffix
    TraceList,
    /// two-column CSV: case,activity
    Csv,
}

impl From<FormatArg> for LogFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::TraceList => LogFormat::TraceList,
            FormatArg::Csv => LogFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Uniform,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum RemdModeArg {
    Penalize,
    Renormalize,
}

impl From<RemdModeArg> for RemdMode {
    fn from(m: RemdModeArg) -> Self {
        match m {
            RemdModeArg::Penalize => RemdMode::Penalize,
            RemdModeArg::Renormalize => RemdMode::Renormalize,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Sim,
    Auto,
}

#[derive(Subcommand)]
enum Cmd {
    /// Discover a process tree from an event log
    Discover {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "trace-list")]
        format: FormatArg,
    },
    /// Attach probability parameters to a (plain) tree
    Annotate {
        /// tree file, or fixture:NAME
        #[arg(long)]
        tree: String,
        #[arg(long, value_enum, default_value = "uniform")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// print probabilities at full precision
        #[arg(long)]
        precise: bool,
        /// emit Graphviz with probability-labeled arcs instead of grammar text
        #[arg(long)]
        dot: bool,
    },
    /// Exact (truncated) stochastic language of a stochastic tree
    Language {
        #[arg(long)]
        tree: String,
        /// maximal loop executions
        #[arg(long, default_value_t = 8)]
        cmax: u32,
        /// drop entries below this probability into the deficit
        #[arg(long, default_value_t = 0.0)]
        mass_floor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo language of a stochastic tree
    Simulate {
        #[arg(long)]
        tree: String,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Earth Mover's Distance between two language files
    Emd {
        lang1: PathBuf,
        lang2: PathBuf,
        /// also print the transport plan as TSV
        #[arg(long)]
        plan: bool,
    },
    /// Restricted EMD of a model language against a log language
    Remd {
        log_lang: PathBuf,
        model_lang: PathBuf,
        #[arg(long, value_enum, default_value = "penalize")]
        mode: RemdModeArg,
    },
    /// Translate a tree into a stochastic workflow net
    ToWn {
        #[arg(long)]
        tree: String,
        /// emit Graphviz instead of the net text format
        #[arg(long)]
        dot: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply language-preserving reductions to a net file
    ReduceWn {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        dot: bool,
        /// bound for the support-equivalence check of the reduction
        #[arg(long, default_value_t = 6)]
        check_len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a tree's language with a net's, bounded
    CheckEquiv {
        #[arg(long)]
        tree: String,
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 6)]
        max_len: usize,
    },
    /// Fit tree probabilities to a log by minimizing restricted EMD
    Optimize {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "trace-list")]
        format: FormatArg,
        /// tree file, fixture:NAME, or the word "discover"
        #[arg(long, default_value = "discover")]
        tree: String,
        #[arg(long, default_value_t = 20)]
        iters: u32,
        #[arg(long, default_value_t = 3)]
        restarts: u32,
        #[arg(long, value_enum, default_value = "auto")]
        mode: ModeArg,
        /// loop truncation in exact mode (default: longest log trace)
        #[arg(long)]
        cmax: Option<u32>,
        /// sample count in simulation mode (default: 10x log size)
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "penalize")]
        remd_mode: RemdModeArg,
        /// write the iteration report as TSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Free and arc parameter counts of a tree
    Params {
        #[arg(long)]
        tree: String,
    },
    /// Emit a bundled fixture (tree, log or language)
    Fixture {
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        list: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

macro_rules! data_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e)
            }
        }
    )*};
}

data_from!(
    std::io::Error,
    spt_core::lang::LangError,
    spt_core::tree::TreeError,
    spt_core::semantics::SemError,
    spt_core::petrinet::NetError,
    spt_core::distance::DistError,
    spt_core::optimize::OptError
);

fn main() -> ExitCode {
    // die quietly when the consumer of a pipe goes away
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, content)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn fixture_names() -> Vec<(&'static str, &'static str)> {
    vec![
        ("example-tree", "six-activity example tree, uniform parameters"),
        ("example-tree-plain", "six-activity example tree without parameters"),
        ("incident-tree", "incident-management tree, uniform parameters"),
        ("incident-tree-plain", "incident-management tree without parameters"),
        ("demo-seq", "sequence example tree"),
        ("demo-choice", "choice example tree"),
        ("demo-par", "parallel example tree"),
        ("demo-loop", "loop example tree"),
        ("demo-seq-lang", "language of the sequence example"),
        ("demo-choice-lang", "language of the choice example"),
        ("demo-par-lang", "language of the parallel example"),
        ("demo-loop-lang", "language of the loop example, 3 unrollings"),
        ("example-log", "six-trace example log"),
        ("toy-log", "two-variant toy log"),
    ]
}

fn fixture_content(name: &str) -> Result<String, CliError> {
    let lang_of = |tree: SptNode<f64>, c_max: u32| -> Result<String, CliError> {
        let lang = exact_language(&tree, &TruncationConfig::with_c_max(c_max))?;
        Ok(lang.to_text())
    };
    let log_text = |log: EventLog| -> String {
        let mut out = String::new();
        for (trace, mult) in log.iter() {
            out.push_str(&format!("{trace} x{mult}\n"));
        }
        out
    };
    match name {
        "example-tree" => Ok(format_spt(&fixtures::example_tree_uniform()) + "\n"),
        "example-tree-plain" => Ok(format_plain(&fixtures::example_tree_plain()) + "\n"),
        "incident-tree" => Ok(format_spt(&fixtures::incident_tree_uniform()) + "\n"),
        "incident-tree-plain" => Ok(format_plain(&fixtures::incident_tree_plain()) + "\n"),
        "demo-seq" => Ok(format_spt_precise(&fixtures::demo_sequence::<f64>()) + "\n"),
        "demo-choice" => Ok(format_spt_precise(&fixtures::demo_choice::<f64>()) + "\n"),
        "demo-par" => Ok(format_spt_precise(&fixtures::demo_parallel::<f64>()) + "\n"),
        "demo-loop" => Ok(format_spt_precise(&fixtures::demo_loop::<f64>()) + "\n"),
        "demo-seq-lang" => lang_of(fixtures::demo_sequence::<f64>(), 4),
        "demo-choice-lang" => lang_of(fixtures::demo_choice::<f64>(), 4),
        "demo-par-lang" => lang_of(fixtures::demo_parallel::<f64>(), 4),
        "demo-loop-lang" => lang_of(fixtures::demo_loop::<f64>(), 3),
        "example-log" => Ok(log_text(fixtures::example_log())),
        "toy-log" => Ok(log_text(fixtures::toy_log())),
        other => Err(CliError::Usage(format!(
            "unknown fixture {other:?}; try `spt fixture --list`"
        ))),
    }
}

fn load_parsed_tree(src: &str) -> Result<ParsedTree, CliError> {
    if let Some(name) = src.strip_prefix("fixture:") {
        let text = fixture_content(name)?;
        if !name.ends_with("-lang") && !name.ends_with("-log") {
            return Ok(parse_tree(text.trim())?);
        }
        return Err(CliError::Usage(format!("fixture {name:?} is not a tree")));
    }
    let text = read_file(Path::new(src))?;
    Ok(parse_tree(text.trim())?)
}

fn load_spt(src: &str) -> Result<SptNode<f64>, CliError> {
    match load_parsed_tree(src)? {
        ParsedTree::Spt(t) => Ok(t),
        ParsedTree::Plain(_) => Err(CliError::Data(format!(
            "{src}: tree carries no probabilities; run `spt annotate` first"
        ))),
    }
}

fn load_plain(src: &str) -> Result<PlainTree, CliError> {
    Ok(load_parsed_tree(src)?.into_plain()?)
}

fn load_log(path: &Path, format: FormatArg) -> Result<EventLog, CliError> {
    let text = read_file(path)?;
    Ok(EventLog::parse(&text, format.into())?)
}

fn load_language(path: &Path) -> Result<StochasticLanguage<f64>, CliError> {
    let text = read_file(path)?;
    Ok(StochasticLanguage::parse_text(&text)?)
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Discover { log, format } => {
            let log = load_log(&log, format)?;
            let tree = discover(&log);
            println!("{}", format_plain(&tree));
            Ok(())
        }
        Cmd::Annotate {
            tree,
            policy,
            seed,
            precise,
            dot,
        } => {
            let plain = load_plain(&tree)?;
            let policy = match policy {
                PolicyArg::Uniform => InitPolicy::Uniform,
                PolicyArg::Random => InitPolicy::Random,
            };
            let spt = annotate(&plain, policy, seed);
            if dot {
                print!("{}", spt_to_dot(&spt));
            } else if precise {
                println!("{}", format_spt_precise(&spt));
            } else {
                println!("{}", format_spt(&spt));
            }
            Ok(())
        }
        Cmd::Language {
            tree,
            cmax,
            mass_floor,
            out,
        } => {
            let spt = load_spt(&tree)?;
            let cfg = TruncationConfig {
                mass_floor,
                ..TruncationConfig::with_c_max(cmax)
            };
            let lang = exact_language(&spt, &cfg)?;
            emit(&out, &lang.to_text())
        }
        Cmd::Simulate { tree, n, seed, out } => {
            let spt = load_spt(&tree)?;
            if n == 0 {
                return Err(CliError::Usage("--n must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lang = sampled_language(&spt, n, &mut rng)?;
            emit(&out, &lang.to_text())
        }
        Cmd::Emd { lang1, lang2, plan } => {
            let l1 = load_language(&lang1)?;
            let l2 = load_language(&lang2)?;
            let result = emd_with_plan(&l1, &l2)?;
            println!("{}", result.distance);
            if plan {
                println!("from\tto\tmass\tcost");
                for flow in &result.plan {
                    println!("{}\t{}\t{}\t{}", flow.from, flow.to, flow.mass, flow.cost);
                }
            }
            Ok(())
        }
        Cmd::Remd {
            log_lang,
            model_lang,
            mode,
        } => {
            let log_l = load_language(&log_lang)?;
            let model_l = load_language(&model_lang)?;
            println!("{}", remd(&log_l, &model_l, mode.into())?);
            Ok(())
        }
        Cmd::ToWn { tree, dot, out } => {
            let net = match load_parsed_tree(&tree)? {
                ParsedTree::Spt(t) => StochasticWorkflowNet::from_spt(&t)?,
                ParsedTree::Plain(t) => StochasticWorkflowNet::from_plain_tree(&t),
            };
            println!(
                "transitions={} silent={}",
                net.transition_count(),
                net.silent_count()
            );
            let body = if dot { net.to_dot() } else { net.to_text() };
            emit(&out, &body)
        }
        Cmd::ReduceWn {
            net,
            dot,
            check_len,
            out,
        } => {
            let original = StochasticWorkflowNet::parse_text(&read_file(&net)?)?;
            let reduced = original.reduce();
            let equivalent = original.bounded_support(check_len) == reduced.bounded_support(check_len);
            println!(
                "transitions={} silent={} (was transitions={} silent={}) equivalent@{}={}",
                reduced.transition_count(),
                reduced.silent_count(),
                original.transition_count(),
                original.silent_count(),
                check_len,
                equivalent
            );
            let body = if dot { reduced.to_dot() } else { reduced.to_text() };
            emit(&out, &body)
        }
        Cmd::CheckEquiv {
            tree,
            net,
            max_len,
        } => {
            let plain = load_plain(&tree)?;
            let net = StochasticWorkflowNet::parse_text(&read_file(&net)?)?;
            println!("{}", trace_equivalent(&plain, &net, max_len));
            Ok(())
        }
        Cmd::Optimize {
            log,
            format,
            tree,
            iters,
            restarts,
            mode,
            cmax,
            samples,
            seed,
            remd_mode,
            out,
        } => {
            let log = load_log(&log, format)?;
            let shape = if tree == "discover" {
                discover(&log)
            } else {
                load_plain(&tree)?
            };
            if !verify_fitness(&shape, &log) {
                eprintln!("warning: tree does not replay every log trace; restricted EMD is still defined");
            }
            let eval = match mode {
                ModeArg::Exact => EvalSpec::Exact { c_max: cmax },
                ModeArg::Sim => EvalSpec::Simulate { n_samples: samples },
                ModeArg::Auto => EvalSpec::Auto,
            };
            let cfg = OptConfig {
                iterations: iters,
                restarts,
                eval,
                remd_mode: remd_mode.into(),
                seed,
                inner_evals: None,
            };
            let outcome = optimize(&shape, &log, &cfg).map_err(CliError::data)?;
            let rep = report(&outcome);
            println!("tree: {}", format_plain(&shape));
            println!("eval mode: {}", rep.eval_desc);
            println!(
                "parameters: free={} arc={}",
                rep.counts.free, rep.counts.arc
            );
            println!("start rEMD: {}", rep.start_remd);
            for (iter, v) in &rep.rows {
                println!("iter {iter}: best rEMD {v}");
            }
            println!("final rEMD: {}", rep.final_remd);
            println!("fitted tree: {}", rep.tree_text);
            println!("wall seconds: {:.3}", rep.wall_secs);
            if let Some(path) = out {
                fs::write(&path, rep.to_tsv())
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Cmd::Params { tree } => {
            let parsed = load_parsed_tree(&tree)?;
            let plain = parsed.clone().into_plain()?;
            let counts = plain.param_counts();
            println!("free={} arc={}", counts.free, counts.arc);
            let layout = ParamLayout::of(&plain);
            if layout.dim() > 0 {
                println!("{}", layout.describe());
            }
            Ok(())
        }
        Cmd::Fixture { name, list, out } => {
            if list || name.is_none() {
                for (name, what) in fixture_names() {
                    println!("{name}\t{what}");
                }
                return Ok(());
            }
            let content = fixture_content(&name.unwrap())?;
            emit(&out, &content)
        }
    }
}
