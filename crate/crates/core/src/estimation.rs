//! Maximum-likelihood rates from observed paths.
//!
//! For a block of target components observed together with a set of
//! conditioners, the sufficient statistics are the residence time in each
//! (conditioner assignment, target state) pair and the number of target
//! transitions out of it. The estimate `q(a, b | c) = n(c, a, b) / T(c, a)`
//! is undefined where `T(c, a) = 0`. The final holding interval is censored:
//! it adds residence but no transition.

use std::io::Write;

use crate::dynamics;
use crate::error::{Error, Result};
use crate::model::{ComponentId, CtbnModel, RateMatrix, StateSpace};
use crate::sampler::Trajectory;

/// Residence times and transition counts of a target block, split by the
/// assignment of the conditioners.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    targets: Vec<ComponentId>,
    conditioners: Vec<ComponentId>,
    target_space: StateSpace,
    cond_space: StateSpace,
    /// Indexed by `cond * n + a`.
    residence: Vec<f64>,
    /// Indexed by `(cond * n + a) * n + b`.
    counts: Vec<u64>,
}

impl SufficientStats {
    pub fn empty(
        targets: Vec<ComponentId>,
        target_cards: Vec<usize>,
        conditioners: Vec<ComponentId>,
        cond_cards: Vec<usize>,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("no target component".into()));
        }
        if let Some(t) = targets.iter().find(|t| conditioners.contains(t)) {
            return Err(Error::InvalidArgument(format!(
                "component {t} is both target and conditioner"
            )));
        }
        let target_space = StateSpace::new(target_cards)?;
        let cond_space = StateSpace::new(cond_cards)?;
        let n = target_space.size();
        let cells = cond_space.size() * n;
        Ok(SufficientStats {
            targets,
            conditioners,
            target_space,
            cond_space,
            residence: vec![0.0; cells],
            counts: vec![0; cells * n],
        })
    }

    pub fn targets(&self) -> &[ComponentId] {
        &self.targets
    }

    pub fn conditioners(&self) -> &[ComponentId] {
        &self.conditioners
    }

    pub fn target_space(&self) -> &StateSpace {
        &self.target_space
    }

    pub fn conditioner_space(&self) -> &StateSpace {
        &self.cond_space
    }

    /// Residence in target state `a` (code) under conditioner code `c`.
    pub fn residence(&self, c: usize, a: usize) -> f64 {
        self.residence[c * self.target_space.size() + a]
    }

    pub fn count(&self, c: usize, a: usize, b: usize) -> u64 {
        let n = self.target_space.size();
        self.counts[(c * n + a) * n + b]
    }

    pub fn total_residence(&self) -> f64 {
        self.residence.iter().sum()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn add_residence(&mut self, c: usize, a: usize, dt: f64) {
        let n = self.target_space.size();
        self.residence[c * n + a] += dt;
    }

    fn add_count(&mut self, c: usize, a: usize, b: usize) {
        let n = self.target_space.size();
        self.counts[(c * n + a) * n + b] += 1;
    }

    /// Adds the statistics of another path over the same blocks.
    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if self.targets != other.targets
            || self.conditioners != other.conditioners
            || self.target_space != other.target_space
            || self.cond_space != other.cond_space
        {
            return Err(Error::InvalidArgument(
                "cannot merge statistics over different components".into(),
            ));
        }
        for (x, y) in self.residence.iter_mut().zip(&other.residence) {
            *x += y;
        }
        for (x, y) in self.counts.iter_mut().zip(&other.counts) {
            *x += y;
        }
        Ok(())
    }
}

/// Positions of `ids` within the trajectory, with their cardinalities.
fn locate(traj: &Trajectory, ids: &[ComponentId]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::with_capacity(ids.len());
    let mut cards = Vec::with_capacity(ids.len());
    for &id in ids {
        let p = traj.position_of(id).ok_or(Error::UnknownComponent(id))?;
        pos.push(p);
        cards.push(traj.cardinalities()[p]);
    }
    Ok((pos, cards))
}

fn code_of(space: &StateSpace, state: &[usize], positions: &[usize]) -> usize {
    positions
        .iter()
        .zip(space.strides())
        .map(|(&p, &s)| state[p] * s)
        .sum()
}

/// Statistics of a single target component.
pub fn collect_stats(
    traj: &Trajectory,
    target: ComponentId,
    conditioners: &[ComponentId],
) -> Result<SufficientStats> {
    collect_joint_stats(traj, &[target], conditioners)
}

/// Statistics of a block of target components treated as one variable over
/// the product of their state spaces (ascending id order of `targets` as
/// given).
pub fn collect_joint_stats(
    traj: &Trajectory,
    targets: &[ComponentId],
    conditioners: &[ComponentId],
) -> Result<SufficientStats> {
    let (tpos, tcards) = locate(traj, targets)?;
    let (cpos, ccards) = locate(traj, conditioners)?;
    let mut stats =
        SufficientStats::empty(targets.to_vec(), tcards, conditioners.to_vec(), ccards)?;
    let mut state = traj.initial_state().to_vec();
    let mut a = code_of(&stats.target_space, &state, &tpos);
    let mut c = code_of(&stats.cond_space, &state, &cpos);
    let mut entry = 0.0;
    for j in traj.jumps() {
        stats.add_residence(c, a, j.time - entry);
        entry = j.time;
        state[j.coordinate as usize] = j.value as usize;
        let a2 = code_of(&stats.target_space, &state, &tpos);
        let c2 = code_of(&stats.cond_space, &state, &cpos);
        if c2 == c && a2 != a {
            stats.add_count(c, a, a2);
        }
        a = a2;
        c = c2;
    }
    stats.add_residence(c, a, traj.horizon() - entry);
    Ok(stats)
}

/// One off-diagonal cell of an estimated conditional rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub condition: Vec<usize>,
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    /// `None` when the source state was never visited under `condition`.
    pub rate: Option<f64>,
    /// `rate / sqrt(count)`; `None` without transitions.
    pub stderr: Option<f64>,
    pub count: u64,
    pub residence: f64,
}

impl RateEstimate {
    /// Relative deviation from `reference`, if defined.
    pub fn relative_error(&self, reference: f64) -> Option<f64> {
        self.rate.map(|r| (r - reference).abs() / reference.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleTable {
    pub targets: Vec<ComponentId>,
    pub conditioners: Vec<ComponentId>,
    target_space: StateSpace,
    cond_space: StateSpace,
    /// Row-major over (condition, from, to) codes, diagonal cells omitted.
    pub cells: Vec<RateEstimate>,
}

pub fn mle_rates(stats: &SufficientStats) -> MleTable {
    let n = stats.target_space.size();
    let mut cells = Vec::with_capacity(stats.cond_space.size() * n * n.saturating_sub(1));
    for c in 0..stats.cond_space.size() {
        let condition = stats.cond_space.decode(c).expect("in range");
        for a in 0..n {
            let t = stats.residence(c, a);
            for b in 0..n {
                if a == b {
                    continue;
                }
                let k = stats.count(c, a, b);
                let rate = (t > 0.0).then(|| k as f64 / t);
                let stderr = rate.filter(|_| k > 0).map(|r| r / (k as f64).sqrt());
                cells.push(RateEstimate {
                    condition: condition.clone(),
                    from: stats.target_space.decode(a).expect("in range"),
                    to: stats.target_space.decode(b).expect("in range"),
                    rate,
                    stderr,
                    count: k,
                    residence: t,
                });
            }
        }
    }
    MleTable {
        targets: stats.targets.clone(),
        conditioners: stats.conditioners.clone(),
        target_space: stats.target_space.clone(),
        cond_space: stats.cond_space.clone(),
        cells,
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

impl MleTable {
    /// The cell for a transition `from -> to` (target values) under a
    /// conditioner assignment.
    pub fn get(&self, condition: &[usize], from: &[usize], to: &[usize]) -> Result<&RateEstimate> {
        let n = self.target_space.size();
        let c = self.cond_space.encode(condition)?;
        let a = self.target_space.encode(from)?;
        let b = self.target_space.encode(to)?;
        if a == b {
            return Err(Error::InvalidArgument(
                "diagonal cells are not estimated".into(),
            ));
        }
        let offset = if b > a { b - 1 } else { b };
        Ok(&self.cells[(c * n + a) * (n - 1) + offset])
    }

    /// Estimated generator under `condition`, or `None` if a row is undefined.
    pub fn rate_matrix(&self, condition: &[usize]) -> Result<Option<RateMatrix>> {
        let n = self.target_space.size();
        let c = self.cond_space.encode(condition)?;
        let mut q = RateMatrix::zeros(n);
        for cell in &self.cells[c * n * (n - 1)..(c + 1) * n * (n - 1)] {
            let Some(r) = cell.rate else { return Ok(None) };
            let a = self.target_space.encode_unchecked(&cell.from);
            let b = self.target_space.encode_unchecked(&cell.to);
            q.set(a, b, r);
        }
        q.fix_diagonal();
        Ok(Some(q))
    }

    pub fn undefined_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.rate.is_none()).count()
    }

    /// Columns `condition,from,to,rate,stderr,count,residence`; multi-valued
    /// fields are comma-joined in component order and undefined numbers are
    /// written as `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "condition",
            "from",
            "to",
            "rate",
            "stderr",
            "count",
            "residence",
        ])?;
        for c in &self.cells {
            w.write_record([
                join(&c.condition),
                join(&c.from),
                join(&c.to),
                opt(c.rate),
                opt(c.stderr),
                c.count.to_string(),
                c.residence.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Large-sample limit of one cell of [`mle_rates`] on a stationary path.
#[derive(Debug, Clone, PartialEq)]
pub struct RateLimit {
    pub condition: Vec<usize>,
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    /// `None` when the source cell has zero stationary mass.
    pub rate: Option<f64>,
}

/// Values that [`mle_rates`] converges to on an ergodic path with joint
/// generator `q` (over the state space of `model`): the stationary flux
/// through each target transition divided by the stationary mass of its
/// source cell. Cells are in the same order as [`MleTable::cells`].
pub fn stationary_rate_limits(
    model: &CtbnModel,
    q: &RateMatrix,
    targets: &[ComponentId],
    conditioners: &[ComponentId],
) -> Result<Vec<RateLimit>> {
    let space = model.state_space()?;
    if q.dim() != space.size() {
        return Err(Error::LengthMismatch {
            expected: space.size(),
            got: q.dim(),
        });
    }
    for &id in targets.iter().chain(conditioners) {
        model.component(id)?;
    }
    let target_space = model.space_of(targets)?;
    let cond_space = model.space_of(conditioners)?;
    let tpos: Vec<usize> = targets.iter().map(|id| id.index()).collect();
    let cpos: Vec<usize> = conditioners.iter().map(|id| id.index()).collect();
    let pi = dynamics::stationary_distribution(q)?;
    let n = target_space.size();
    let mut mass = vec![0.0; cond_space.size() * n];
    let mut flux = vec![0.0; cond_space.size() * n * n];
    let mut s = vec![0; model.len()];
    let codes: Vec<(usize, usize)> = (0..space.size())
        .map(|k| {
            space.decode_into(k, &mut s);
            (
                code_of(&target_space, &s, &tpos),
                code_of(&cond_space, &s, &cpos),
            )
        })
        .collect();
    for (k, &pk) in pi.as_slice().iter().enumerate() {
        let (a, c) = codes[k];
        mass[c * n + a] += pk;
        for (l, &(b, c2)) in codes.iter().enumerate() {
            if l != k && c2 == c && b != a {
                flux[(c * n + a) * n + b] += pk * q.get(k, l);
            }
        }
    }
    let mut out = Vec::new();
    for c in 0..cond_space.size() {
        let condition = cond_space.decode(c)?;
        for a in 0..n {
            for b in (0..n).filter(|&b| b != a) {
                let w = mass[c * n + a];
                out.push(RateLimit {
                    condition: condition.clone(),
                    from: target_space.decode(a)?,
                    to: target_space.decode(b)?,
                    rate: (w > 0.0).then(|| flux[(c * n + a) * n + b] / w),
                });
            }
        }
    }
    Ok(out)
}

/// One (condition, preceding state, transition) comparison of the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumComparison {
    pub condition: Vec<usize>,
    /// Observed state (targets then conditioners) before the current one.
    pub previous: Vec<usize>,
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    pub pooled_rate: f64,
    /// `None` when the stratum has too little data to compare.
    pub stratum_rate: Option<f64>,
    pub relative_deviation: Option<f64>,
    /// Poisson z-score of the stratum count against the pooled rate.
    pub z: Option<f64>,
    pub count: u64,
    pub residence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovianityReport {
    pub comparisons: Vec<StratumComparison>,
    /// Minimum expected count (pooled rate times stratum residence) for a
    /// stratum to be compared.
    pub min_expected: f64,
}

impl MarkovianityReport {
    pub fn defined(&self) -> impl Iterator<Item = &StratumComparison> {
        self.comparisons.iter().filter(|c| c.stratum_rate.is_some())
    }

    pub fn undefined_count(&self) -> usize {
        self.comparisons.len() - self.defined().count()
    }

    pub fn max_relative_deviation(&self) -> Option<f64> {
        self.defined()
            .filter_map(|c| c.relative_deviation)
            .reduce(f64::max)
    }

    pub fn max_abs_z(&self) -> Option<f64> {
        self.defined()
            .filter_map(|c| c.z.map(f64::abs))
            .reduce(f64::max)
    }
}

/// Re-estimates the rates of `targets` additionally stratified by the
/// preceding state of the observed sub-process (targets and conditioners),
/// and compares each stratum with the pooled estimate. A Markov sub-process
/// gives deviations explained by sampling noise alone. Transitions never
/// seen in the pooled data are not compared.
pub fn markovianity_probe(
    traj: &Trajectory,
    targets: &[ComponentId],
    conditioners: &[ComponentId],
    min_expected: f64,
) -> Result<MarkovianityReport> {
    let pooled = collect_joint_stats(traj, targets, conditioners)?;
    let (tpos, tcards) = locate(traj, targets)?;
    let (cpos, ccards) = locate(traj, conditioners)?;
    let obs_pos: Vec<usize> = tpos.iter().chain(&cpos).copied().collect();
    let obs_space = StateSpace::new(tcards.iter().chain(&ccards).copied().collect())?;
    let n = pooled.target_space.size();
    let nc = pooled.cond_space.size();
    let cells = nc * n;
    let m = obs_space.size();

    // per preceding observed state: residence [cells], counts [cells * n]
    let mut residence = vec![0.0; m * cells];
    let mut counts = vec![0u64; m * cells * n];
    let mut state = traj.initial_state().to_vec();
    let mut a = code_of(&pooled.target_space, &state, &tpos);
    let mut c = code_of(&pooled.cond_space, &state, &cpos);
    let mut obs = code_of(&obs_space, &state, &obs_pos);
    let mut prev: Option<usize> = None;
    let mut entry = 0.0;
    for j in traj.jumps() {
        if let Some(p) = prev {
            residence[p * cells + c * n + a] += j.time - entry;
        }
        entry = j.time;
        state[j.coordinate as usize] = j.value as usize;
        let a2 = code_of(&pooled.target_space, &state, &tpos);
        let c2 = code_of(&pooled.cond_space, &state, &cpos);
        let obs2 = code_of(&obs_space, &state, &obs_pos);
        if let Some(p) = prev {
            if c2 == c && a2 != a {
                counts[(p * cells + c * n + a) * n + a2] += 1;
            }
        }
        if obs2 != obs {
            prev = Some(obs);
            obs = obs2;
        }
        a = a2;
        c = c2;
    }
    if let Some(p) = prev {
        residence[p * cells + c * n + a] += traj.horizon() - entry;
    }

    let mut comparisons = Vec::new();
    for p in 0..m {
        for c in 0..nc {
            for a in 0..n {
                let t_s = residence[p * cells + c * n + a];
                if t_s == 0.0 {
                    continue;
                }
                let t = pooled.residence(c, a);
                for b in 0..n {
                    if b == a || pooled.count(c, a, b) == 0 {
                        continue;
                    }
                    let q = pooled.count(c, a, b) as f64 / t;
                    let k = counts[(p * cells + c * n + a) * n + b];
                    let expected = q * t_s;
                    let usable = expected >= min_expected;
                    let stratum_rate = usable.then(|| k as f64 / t_s);
                    comparisons.push(StratumComparison {
                        condition: pooled.cond_space.decode(c)?,
                        previous: obs_space.decode(p)?,
                        from: pooled.target_space.decode(a)?,
                        to: pooled.target_space.decode(b)?,
                        pooled_rate: q,
                        stratum_rate,
                        relative_deviation: stratum_rate.map(|r| (r - q).abs() / q),
                        z: usable.then(|| (k as f64 - expected) / expected.sqrt()),
                        count: k,
                        residence: t_s,
                    });
                }
            }
        }
    }
    Ok(MarkovianityReport {
        comparisons,
        min_expected,
    })
}
