//! `ctbn` command line.
//!
//! Exit codes: 0 on success, 2 for usage errors and invalid models, 1 for
//! any other failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dynamics::{self, DistributionVector};
use crate::error::{Error, Result};
use crate::estimation;
use crate::format;
use crate::harness::builtin;
use crate::harness::experiments::{self, Experiment, ExperimentConfig};
use crate::model::{ComponentId, CtbnModel, RateMatrix};
use crate::reduction;
use crate::sampler::{self, StopRule, Trajectory};

#[derive(Debug, Parser)]
#[command(
    name = "ctbn",
    version,
    about = "Fast/slow reduction of continuous-time Bayesian networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model file, or a built-in id (ex31, ex41, ex42, ex43, ex44, ex51, ex52).
    #[arg(long)]
    model: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and list every violated invariant.
    Validate {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Joint generator as CSV.
    Amalgamate {
        #[command(flatten)]
        model: ModelArg,
        /// Defaults to the model's own epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distribution at time `--time` from the model's initial distribution.
    Solve {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationary distribution of the joint chain.
    Stationary {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a path and write it as CSV.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_time: Option<f64>,
        #[arg(long)]
        max_transitions: Option<u64>,
        /// Record only these components (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        observe: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum-likelihood rates of a component from a path CSV.
    Estimate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        trajectory: PathBuf,
        /// Target component ids; several are estimated as one joint block.
        #[arg(long, value_delimiter = ',', required = true)]
        target: Vec<usize>,
        /// Conditioning component ids.
        #[arg(long, value_delimiter = ',')]
        given: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduced network over the slow components, in the model file format.
    Reduce {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closure and ancestor queries; prints a comma-separated id list.
    Closure {
        #[command(flatten)]
        model: ModelArg,
        /// Upward closure of these ids.
        #[arg(long, value_delimiter = ',', group = "query")]
        up: Vec<usize>,
        /// Closure under fast parents.
        #[arg(long, value_delimiter = ',', group = "query")]
        fast_up: Vec<usize>,
        /// Last slow ancestors of a set of fast components.
        #[arg(long, value_delimiter = ',', group = "query")]
        slow_ancestors: Vec<usize>,
    },
    /// Run a named experiment and write CSV tables plus a JSON summary.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// ex51, ex52-table1 or convergence.
    name: String,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epsilon: Vec<f64>,
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    max_transitions: Option<u64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Evaluation times (convergence only).
    #[arg(long)]
    time: Vec<f64>,
    /// Only compute the analytic reduction.
    #[arg(long)]
    analytic_only: bool,
    /// Output directory; the summary goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidModel(_) => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Runs the command line with `argv` (including the program name) and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Invalid(msg)) => {
            eprintln!("invalid model: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn ids(v: &[usize]) -> Vec<ComponentId> {
    v.iter().map(|&i| ComponentId(i)).collect()
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body)?,
        None => match std::io::stdout().write_all(body.as_bytes()) {
            // a closed pipe (`| head`) is not an error
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
            r => r?,
        },
    }
    Ok(())
}

fn epsilon_or_default(model: &CtbnModel, eps: Option<f64>) -> f64 {
    eps.unwrap_or(model.epsilon)
}

fn state_labels(model: &CtbnModel) -> Result<Vec<String>> {
    Ok(model
        .state_space()?
        .iter()
        .map(|s| {
            s.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect())
}

fn matrix_csv(labels: &[String], q: &RateMatrix) -> String {
    let mut s = String::from("from");
    for l in labels {
        s.push(',');
        s.push_str(l);
    }
    s.push('\n');
    for (a, l) in labels.iter().enumerate() {
        s.push_str(l);
        for b in 0..labels.len() {
            s.push(',');
            s.push_str(&q.get(a, b).to_string());
        }
        s.push('\n');
    }
    s
}

fn distribution_csv(labels: &[String], p: &DistributionVector) -> String {
    let mut s = String::from("state,probability\n");
    for (l, v) in labels.iter().zip(p.as_slice()) {
        s.push_str(&format!("{l},{v}\n"));
    }
    s
}

fn join_ids<'a>(it: impl IntoIterator<Item = &'a ComponentId>) -> String {
    it.into_iter()
        .map(|c| c.0.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Validate { model } => {
            let m = match builtin::load(&model.model) {
                Ok(m) => m,
                Err(e @ (Error::Json(_) | Error::InvalidModel(_) | Error::Format(_))) => {
                    return Err(Failure::Invalid(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            let violations = m.validate();
            if violations.is_empty() {
                emit(
                    None,
                    &format!("ok: {} components, {} fast\n", m.len(), m.fast_ids().len()),
                )?;
                Ok(())
            } else {
                for v in &violations {
                    emit(None, &format!("{v}\n"))?;
                }
                Err(Failure::Invalid(format!(
                    "{} violation(s)",
                    violations.len()
                )))
            }
        }
        Command::Amalgamate {
            model,
            epsilon,
            out,
        } => {
            let m = builtin::load(&model.model)?;
            let q = dynamics::amalgamate(&m, epsilon_or_default(&m, epsilon))?;
            emit(out.as_deref(), &matrix_csv(&state_labels(&m)?, &q))?;
            Ok(())
        }
        Command::Solve {
            model,
            time,
            epsilon,
            out,
        } => {
            let m = builtin::load(&model.model)?;
            let q = dynamics::amalgamate(&m, epsilon_or_default(&m, epsilon))?;
            let p0 = DistributionVector::new(m.initial_joint()?)?;
            let p = dynamics::solve_master(&q, &p0, time)?;
            emit(out.as_deref(), &distribution_csv(&state_labels(&m)?, &p))?;
            Ok(())
        }
        Command::Stationary {
            model,
            epsilon,
            out,
        } => {
            let m = builtin::load(&model.model)?;
            let q = dynamics::amalgamate(&m, epsilon_or_default(&m, epsilon))?;
            let p = dynamics::stationary_distribution(&q)?;
            emit(out.as_deref(), &distribution_csv(&state_labels(&m)?, &p))?;
            Ok(())
        }
        Command::Simulate {
            model,
            seed,
            epsilon,
            max_time,
            max_transitions,
            observe,
            out,
        } => {
            let m = builtin::load(&model.model)?;
            let observed = if observe.is_empty() {
                m.ids().collect()
            } else {
                let mut o = ids(&observe);
                o.sort();
                o.dedup();
                o
            };
            let stop = StopRule {
                max_time,
                max_transitions,
            };
            let traj = sampler::sample_observed(
                &m,
                epsilon_or_default(&m, epsilon),
                seed,
                stop,
                &observed,
            )?;
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))?;
            Ok(())
        }
        Command::Estimate {
            model,
            trajectory,
            target,
            given,
            out,
        } => {
            let m = builtin::load(&model.model)?;
            let text = std::fs::read_to_string(&trajectory).map_err(Error::from)?;
            let cols: Vec<ComponentId> = text
                .lines()
                .next()
                .unwrap_or_default()
                .split(',')
                .skip(1)
                .filter_map(|h| h.trim().strip_prefix("x_").and_then(|s| s.parse().ok()))
                .map(ComponentId)
                .collect();
            let cards = cols
                .iter()
                .map(|&id| m.component(id).map(|c| c.cardinality))
                .collect::<Result<Vec<_>>>()?;
            let traj = Trajectory::read_csv(text.as_bytes(), &cards)?;
            let stats = estimation::collect_joint_stats(&traj, &ids(&target), &ids(&given))?;
            let table = estimation::mle_rates(&stats);
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))?;
            Ok(())
        }
        Command::Reduce { model, out } => {
            let m = builtin::load(&model.model)?;
            let r = reduction::reduce_ctbn(&m)?;
            match out {
                Some(p) => format::write_model(&r.model, p)?,
                None => emit(None, &(format::model_to_json(&r.model)? + "\n"))?,
            }
            Ok(())
        }
        Command::Closure {
            model,
            up,
            fast_up,
            slow_ancestors,
        } => {
            let m = builtin::load(&model.model)?;
            let line = if !up.is_empty() {
                join_ids(&reduction::upward_closure(&m, &ids(&up))?.members)
            } else if !fast_up.is_empty() {
                join_ids(&reduction::fast_upward_closure(&m, &ids(&fast_up))?.members)
            } else if !slow_ancestors.is_empty() {
                join_ids(&reduction::last_slow_ancestors(&m, &ids(&slow_ancestors))?)
            } else {
                return Err(Failure::Runtime(
                    "give one of --up, --fast-up or --slow-ancestors".into(),
                ));
            };
            emit(None, &format!("{line}\n"))?;
            Ok(())
        }
        Command::Experiment(args) => run_experiment(args),
    }
}

fn run_experiment(args: ExperimentArgs) -> CliResult {
    let kind = Experiment::parse(&args.name)?;
    let mut config = ExperimentConfig::defaults(kind);
    if let Some(m) = args.model {
        config.model = m;
    }
    if !args.epsilon.is_empty() {
        config.epsilons = args.epsilon;
    }
    if !args.seed.is_empty() {
        config.seeds = args.seed;
    }
    if args.max_time.is_some() || args.max_transitions.is_some() {
        config.max_time = args.max_time;
        config.max_transitions = args.max_transitions;
    }
    if let Some(t) = args.tolerance {
        config.tolerance = t;
    }
    if !args.time.is_empty() {
        config.times = args.time;
    }
    config.analytic_only = args.analytic_only;
    config.out_dir = args.out.clone();
    let report = experiments::run_experiment(&config)?;
    match &args.out {
        Some(dir) => {
            for p in report.write_to(dir)? {
                emit(None, &format!("wrote {}\n", p.display()))?;
            }
        }
        None => {
            for (name, body) in report.files().map_err(Failure::from)? {
                emit(None, &format!("== {name}\n{body}"))?;
            }
        }
    }
    Ok(())
}
