//! Named experiments: simulation-and-estimation checks of the reduction and
//! a deterministic convergence study.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]; the
//! (epsilon, seed) grid runs in parallel but results are collected in grid
//! order, so the CSV bodies are reproducible byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, DistributionVector};
use crate::error::{Error, Result};
use crate::estimation::{self, MleTable};
use crate::harness::builtin;
use crate::model::{ComponentId, CtbnModel};
use crate::reduction;
use crate::sampler::{self, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Ex51,
    Ex52Table1,
    Convergence,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [
        Experiment::Ex51,
        Experiment::Ex52Table1,
        Experiment::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ex51 => "ex51",
            Experiment::Ex52Table1 => "ex52-table1",
            Experiment::Convergence => "convergence",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown experiment '{name}' (known: ex51, ex52-table1, convergence)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Built-in id or path to a model file.
    pub model: String,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub max_time: Option<f64>,
    pub max_transitions: Option<u64>,
    /// Relative tolerance for estimates, or the monotonicity slack of the
    /// convergence study.
    pub tolerance: f64,
    /// Skip simulation and report only the analytic reduction.
    pub analytic_only: bool,
    /// Evaluation times of the convergence study.
    pub times: Vec<f64>,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            model: String::new(),
            epsilons: Vec::new(),
            seeds: vec![1, 2, 3],
            max_time: None,
            max_transitions: None,
            tolerance: 0.05,
            analytic_only: false,
            times: Vec::new(),
            out_dir: None,
        };
        match experiment {
            Experiment::Ex51 => ExperimentConfig {
                model: "ex51".into(),
                epsilons: vec![0.05, 0.2],
                max_time: Some(50_000.0),
                ..base
            },
            Experiment::Ex52Table1 => ExperimentConfig {
                model: "ex52".into(),
                epsilons: vec![1.0, 0.5, 0.25, 0.1, 0.05, 0.025],
                seeds: vec![1],
                max_transitions: Some(1_000_000),
                ..base
            },
            Experiment::Convergence => ExperimentConfig {
                model: "ex41".into(),
                epsilons: vec![0.1, 0.05, 0.01],
                seeds: vec![0],
                tolerance: 1e-6,
                times: vec![0.5, 1.0, 2.0],
                ..base
            },
        }
    }

    pub fn stop(&self) -> StopRule {
        StopRule {
            max_time: self.max_time,
            max_transitions: self.max_transitions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidArgument("no epsilon given".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {e}"
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one seed is required".into(),
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad tolerance {}",
                self.tolerance
            )));
        }
        match self.experiment {
            Experiment::Convergence => {
                if self.times.is_empty() {
                    return Err(Error::InvalidArgument("no evaluation time given".into()));
                }
                if let Some(t) = self.times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
                    return Err(Error::InvalidArgument(format!("bad time {t}")));
                }
            }
            _ if !self.analytic_only
                && self.max_time.is_none()
                && self.max_transitions.is_none() =>
            {
                return Err(Error::InvalidStop(
                    "need --max-time or --max-transitions".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    fn grid(&self) -> Vec<(f64, u64)> {
        self.epsilons
            .iter()
            .flat_map(|&e| self.seeds.iter().map(move |&s| (e, s)))
            .collect()
    }
}

fn state_label(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect()
}

/// Markovianity probe digest for one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub compared: usize,
    pub undefined: usize,
    pub max_relative_deviation: Option<f64>,
    pub max_abs_z: Option<f64>,
}

/// Minimum expected transitions for a stratum to enter the probe.
pub const PROBE_MIN_EXPECTED: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorCell {
    pub from: String,
    pub to: String,
    pub analytic: f64,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
    pub count: u64,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowGeneratorRun {
    pub epsilon: f64,
    pub seed: u64,
    pub horizon: f64,
    pub observed_transitions: usize,
    /// Off-diagonal cells with a nonzero analytic rate.
    pub cells: Vec<GeneratorCell>,
    pub max_relative_error: Option<f64>,
    pub mean_relative_error: Option<f64>,
    pub probe: ProbeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedBlock {
    pub component: usize,
    pub parents: Vec<usize>,
    pub condition: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowGeneratorReport {
    pub config: ExperimentConfig,
    pub slow_components: Vec<usize>,
    pub state_labels: Vec<String>,
    pub analytic: Vec<Vec<f64>>,
    pub reduced_blocks: Vec<ReducedBlock>,
    pub runs: Vec<SlowGeneratorRun>,
}

fn load_model(config: &ExperimentConfig) -> Result<CtbnModel> {
    let m = builtin::load(&config.model)?;
    m.ensure_valid()?;
    Ok(m)
}

fn reduced_blocks(model: &CtbnModel) -> Result<Vec<ReducedBlock>> {
    let r = reduction::reduce_ctbn(model)?;
    let mut out = Vec::new();
    for c in &r.model.components {
        let space = r.model.parent_space(c.id)?;
        let parents: Vec<usize> = c
            .parents
            .iter()
            .map(|p| r.original_ids[p.index()].0)
            .collect();
        for (k, q) in c.rate_table.iter().enumerate() {
            out.push(ReducedBlock {
                component: r.original_ids[c.id.index()].0,
                parents: parents.clone(),
                condition: space.decode(k)?,
                matrix: q.rows(),
            });
        }
    }
    Ok(out)
}

fn probe_summary(report: &estimation::MarkovianityReport) -> ProbeSummary {
    ProbeSummary {
        compared: report.defined().count(),
        undefined: report.undefined_count(),
        max_relative_deviation: report.max_relative_deviation(),
        max_abs_z: report.max_abs_z(),
    }
}

/// Analytic reduced generator of the slow components next to estimates
/// from simulated paths of the full network.
pub fn experiment_ex51(config: &ExperimentConfig) -> Result<SlowGeneratorReport> {
    config.validate()?;
    let model = load_model(config)?;
    let slow = model.slow_ids();
    let q_eff = reduction::effective_joint_generator(&model)?;
    let slow_space = model.space_of(&slow)?;
    let labels: Vec<String> = slow_space.iter().map(|s| state_label(&s)).collect();
    let runs = if config.analytic_only {
        Vec::new()
    } else {
        config
            .grid()
            .into_par_iter()
            .map(|(eps, seed)| -> Result<SlowGeneratorRun> {
                let traj = sampler::sample_observed(&model, eps, seed, config.stop(), &slow)?;
                log::info!(
                    "ex51 eps={eps} seed={seed}: {} observed transitions, horizon {:.1}",
                    traj.transition_count(),
                    traj.horizon()
                );
                let table =
                    estimation::mle_rates(&estimation::collect_joint_stats(&traj, &slow, &[])?);
                let probe = estimation::markovianity_probe(&traj, &slow, &[], PROBE_MIN_EXPECTED)?;
                let mut cells = Vec::new();
                for (a, from) in slow_space.iter().enumerate() {
                    for (b, to) in slow_space.iter().enumerate() {
                        let analytic = q_eff.get(a, b);
                        if a == b || analytic == 0.0 {
                            continue;
                        }
                        let e = table.get(&[], &from, &to)?;
                        cells.push(GeneratorCell {
                            from: labels[a].clone(),
                            to: labels[b].clone(),
                            analytic,
                            estimate: e.rate,
                            stderr: e.stderr,
                            count: e.count,
                            relative_error: e.relative_error(analytic),
                        });
                    }
                }
                let errs: Vec<f64> = cells.iter().filter_map(|c| c.relative_error).collect();
                Ok(SlowGeneratorRun {
                    epsilon: eps,
                    seed,
                    horizon: traj.horizon(),
                    observed_transitions: traj.transition_count(),
                    max_relative_error: errs.iter().copied().reduce(f64::max),
                    mean_relative_error: (!errs.is_empty())
                        .then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                    cells,
                    probe: probe_summary(&probe),
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SlowGeneratorReport {
        config: config.clone(),
        slow_components: slow.iter().map(|c| c.0).collect(),
        state_labels: labels,
        analytic: q_eff.rows(),
        reduced_blocks: reduced_blocks(&model)?,
        runs,
    })
}

impl SlowGeneratorReport {
    /// Columns `epsilon,seed,from,to,analytic,estimate,stderr,count,relative_error`.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("epsilon,seed,from,to,analytic,estimate,stderr,count,relative_error\n");
        for r in &self.runs {
            for c in &r.cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    r.epsilon,
                    r.seed,
                    c.from,
                    c.to,
                    c.analytic,
                    fmt_opt(c.estimate),
                    fmt_opt(c.stderr),
                    c.count,
                    fmt_opt(c.relative_error)
                );
            }
        }
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

/// Target and conditioning sets of the six-component sweep.
const TABLE1_TARGET: ComponentId = ComponentId(5);
const TABLE1_REDUCED: [ComponentId; 1] = [ComponentId(1)];
const TABLE1_FULL: [ComponentId; 3] = [ComponentId(1), ComponentId(2), ComponentId(6)];
const TABLE1_OBSERVED: [ComponentId; 4] = [
    ComponentId(1),
    ComponentId(2),
    ComponentId(5),
    ComponentId(6),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub epsilon: f64,
    pub seed: u64,
    pub transitions: Option<u64>,
    pub horizon: f64,
    /// Estimated `q(0 -> 1 | x1 = 0)` and `q(0 -> 1 | x1 = 1)` of X5.
    pub rate_given_0: Option<f64>,
    pub stderr_given_0: Option<f64>,
    pub count_given_0: u64,
    pub rate_given_1: Option<f64>,
    pub stderr_given_1: Option<f64>,
    pub count_given_1: u64,
    /// What the estimates converge to on an infinitely long path at this
    /// epsilon, from the stationary distribution of the full network.
    pub stationary_given_0: Option<f64>,
    pub stationary_given_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCell {
    pub epsilon: f64,
    pub seed: u64,
    /// Values of (X1, X2, X6).
    pub condition: Vec<usize>,
    pub rate: Option<f64>,
    pub stderr: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Report {
    pub config: ExperimentConfig,
    /// Reduced `q(0 -> 1 | x1)` for x1 = 0, 1.
    pub limit: [f64; 2],
    pub rows: Vec<Table1Row>,
    pub cells: Vec<ConditionCell>,
}

/// Largest joint space for which the stationary reference is computed.
const STATIONARY_REFERENCE_CAP: usize = 4096;

fn x5_cells(table: &MleTable, given: &[usize]) -> Result<(Option<f64>, Option<f64>, u64)> {
    let e = table.get(given, &[0], &[1])?;
    Ok((e.rate, e.stderr, e.count))
}

/// The epsilon sweep of the X5 rates on the six-component example, with the
/// eight cells conditioned on all other slow components.
pub fn experiment_ex52_table1(config: &ExperimentConfig) -> Result<Table1Report> {
    config.validate()?;
    let model = load_model(config)?;
    for id in TABLE1_OBSERVED {
        if model.component(id)?.scale != crate::model::Scale::Slow {
            return Err(Error::NotSlow(id));
        }
    }
    let reduced = reduction::effective_conditional_rates(&model, TABLE1_TARGET)?;
    if reduced.parents != TABLE1_REDUCED {
        return Err(Error::InvalidArgument(format!(
            "expected X5 to have reduced parents [1], got {:?}",
            reduced.parents
        )));
    }
    let limit = [reduced.matrices[0].get(0, 1), reduced.matrices[1].get(0, 1)];
    if config.analytic_only {
        return Ok(Table1Report {
            config: config.clone(),
            limit,
            rows: Vec::new(),
            cells: Vec::new(),
        });
    }

    let small = model.state_space()?.size() <= STATIONARY_REFERENCE_CAP;
    let stationary: Vec<[Option<f64>; 2]> = config
        .epsilons
        .par_iter()
        .map(|&eps| -> Result<[Option<f64>; 2]> {
            if !small {
                return Ok([None, None]);
            }
            let q = dynamics::amalgamate(&model, eps)?;
            let lim =
                estimation::stationary_rate_limits(&model, &q, &[TABLE1_TARGET], &TABLE1_REDUCED)?;
            let pick = |x1: usize| {
                lim.iter()
                    .find(|l| l.condition == [x1] && l.from == [0])
                    .and_then(|l| l.rate)
            };
            Ok([pick(0), pick(1)])
        })
        .collect::<Result<_>>()?;

    let results: Vec<(Table1Row, Vec<ConditionCell>)> = config
        .grid()
        .into_par_iter()
        .map(|(eps, seed)| -> Result<_> {
            let traj =
                sampler::sample_observed(&model, eps, seed, config.stop(), &TABLE1_OBSERVED)?;
            log::info!(
                "ex52-table1 eps={eps} seed={seed}: horizon {:.1}",
                traj.horizon()
            );
            let coarse = estimation::mle_rates(&estimation::collect_stats(
                &traj,
                TABLE1_TARGET,
                &TABLE1_REDUCED,
            )?);
            let fine = estimation::mle_rates(&estimation::collect_stats(
                &traj,
                TABLE1_TARGET,
                &TABLE1_FULL,
            )?);
            let (r0, s0, n0) = x5_cells(&coarse, &[0])?;
            let (r1, s1, n1) = x5_cells(&coarse, &[1])?;
            let k = config
                .epsilons
                .iter()
                .position(|&e| e == eps)
                .expect("grid");
            let row = Table1Row {
                epsilon: eps,
                seed,
                transitions: config.max_transitions,
                horizon: traj.horizon(),
                rate_given_0: r0,
                stderr_given_0: s0,
                count_given_0: n0,
                rate_given_1: r1,
                stderr_given_1: s1,
                count_given_1: n1,
                stationary_given_0: stationary[k][0],
                stationary_given_1: stationary[k][1],
            };
            let mut cells = Vec::new();
            for x1 in 0..2 {
                for x2 in 0..2 {
                    for x6 in 0..2 {
                        let (rate, stderr, count) = x5_cells(&fine, &[x1, x2, x6])?;
                        cells.push(ConditionCell {
                            epsilon: eps,
                            seed,
                            condition: vec![x1, x2, x6],
                            rate,
                            stderr,
                            count,
                        });
                    }
                }
            }
            Ok((row, cells))
        })
        .collect::<Result<_>>()?;
    let (rows, cells): (Vec<_>, Vec<Vec<_>>) = results.into_iter().unzip();
    Ok(Table1Report {
        config: config.clone(),
        limit,
        rows,
        cells: cells.into_iter().flatten().collect(),
    })
}

impl Table1Report {
    /// One row per (epsilon, seed) plus a final `limit` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epsilon,seed,rate_0to1_given_x1_0,stderr_given_0,count_given_0,\
             rate_0to1_given_x1_1,stderr_given_1,count_given_1,\
             stationary_given_0,stationary_given_1\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epsilon,
                r.seed,
                fmt_opt(r.rate_given_0),
                fmt_opt(r.stderr_given_0),
                r.count_given_0,
                fmt_opt(r.rate_given_1),
                fmt_opt(r.stderr_given_1),
                r.count_given_1,
                fmt_opt(r.stationary_given_0),
                fmt_opt(r.stationary_given_1),
            );
        }
        let _ = writeln!(
            s,
            "limit,NA,{},NA,NA,{},NA,NA,{},{}",
            self.limit[0], self.limit[1], self.limit[0], self.limit[1]
        );
        s
    }

    /// Columns `epsilon,seed,x1,x2,x6,rate,stderr,count`.
    pub fn cells_csv(&self) -> String {
        let mut s = String::from("epsilon,seed,x1,x2,x6,rate,stderr,count\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                c.epsilon,
                c.seed,
                c.condition[0],
                c.condition[1],
                c.condition[2],
                fmt_opt(c.rate),
                fmt_opt(c.stderr),
                c.count
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub time: f64,
    pub epsilon: f64,
    /// L1 distance between the slow marginal of the full solution and the
    /// reduced solution.
    pub l1_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub config: ExperimentConfig,
    /// Rows ordered by time, then by epsilon descending.
    pub rows: Vec<ConvergenceRow>,
    /// Whether the error is non-increasing as epsilon decreases at every
    /// time, up to `config.tolerance`.
    pub monotone: bool,
}

/// Full versus reduced master equation across epsilon.
pub fn experiment_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let model = load_model(config)?;
    let reduced = reduction::reduce_ctbn(&model)?;
    let q_red = dynamics::amalgamate(&reduced.model, 1.0)?;
    let p_red0 = DistributionVector::new(reduced.model.initial_joint()?)?;
    let p0 = DistributionVector::new(model.initial_joint()?)?;
    let mut eps = config.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let mut times = config.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let per_eps: Vec<Vec<f64>> = eps
        .par_iter()
        .map(|&e| -> Result<Vec<f64>> {
            let q = dynamics::amalgamate(&model, e)?;
            times
                .iter()
                .map(|&t| {
                    let full = dynamics::solve_master(&q, &p0, t)?;
                    let red = dynamics::solve_master(&q_red, &p_red0, t)?;
                    Ok(reduction::slow_marginal(&model, &full)?.l1_distance(&red))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut monotone = true;
    for (ti, &t) in times.iter().enumerate() {
        for (ei, &e) in eps.iter().enumerate() {
            let err = per_eps[ei][ti];
            if ei > 0 && err > per_eps[ei - 1][ti] + config.tolerance {
                monotone = false;
            }
            rows.push(ConvergenceRow {
                time: t,
                epsilon: e,
                l1_error: err,
            });
        }
    }
    Ok(ConvergenceReport {
        config: config.clone(),
        rows,
        monotone,
    })
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,epsilon,l1_error\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e}", r.time, r.epsilon, r.l1_error);
        }
        s
    }

    pub fn error_at(&self, time: f64, epsilon: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.time == time && r.epsilon == epsilon)
            .map(|r| r.l1_error)
    }
}

/// Result of any experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    SlowGenerator(SlowGeneratorReport),
    Table1(Table1Report),
    Convergence(ConvergenceReport),
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    Ok(match config.experiment {
        Experiment::Ex51 => Report::SlowGenerator(experiment_ex51(config)?),
        Experiment::Ex52Table1 => Report::Table1(experiment_ex52_table1(config)?),
        Experiment::Convergence => Report::Convergence(experiment_convergence(config)?),
    })
}

impl Report {
    /// Files to write as (file name, contents): CSV tables and a JSON summary.
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let (name, mut files, json) = match self {
            Report::SlowGenerator(r) => (
                r.config.experiment.name(),
                vec![(String::new(), r.to_csv())],
                serde_json::to_string_pretty(r)?,
            ),
            Report::Table1(r) => (
                r.config.experiment.name(),
                vec![
                    (String::new(), r.to_csv()),
                    ("_cells".into(), r.cells_csv()),
                ],
                serde_json::to_string_pretty(r)?,
            ),
            Report::Convergence(r) => (
                r.config.experiment.name(),
                vec![(String::new(), r.to_csv())],
                serde_json::to_string_pretty(r)?,
            ),
        };
        let mut out: Vec<(String, String)> = files
            .drain(..)
            .map(|(suffix, body)| (format!("{name}{suffix}.csv"), body))
            .collect();
        out.push((format!("{name}_summary.json"), json + "\n"));
        Ok(out)
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in self.files()? {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}
