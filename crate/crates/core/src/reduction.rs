//! Reduction of a network with fast components to an effective network over
//! its slow components.
//!
//! For a slow component `i` with fast parents `F`, the reduced parents are
//! the slow parents of `i` plus the last slow ancestors of `F` (the slow
//! parents of the fast-upward closure `Up_f(F)`). Its reduced conditional
//! rates average the original table over the conditional equilibrium of
//! `Up_f(F)`, which depends only on those ancestors.
//!
//! [`effective_joint_generator`] computes the same reduced generator by a
//! second route: averaging the joint slow generator over the equilibrium of
//! *all* fast components given the full slow state. The projection
//! [`projection_g`] and [`limiting_solve`] provide a third, time-domain check.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{self, DistributionVector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ComponentId, ComponentSpec, CtbnModel, RateMatrix, Scale, StateSpace};

/// A closure query and its answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosureResult {
    pub members: BTreeSet<ComponentId>,
    pub query: BTreeSet<ComponentId>,
}

impl ClosureResult {
    pub fn members_vec(&self) -> Vec<ComponentId> {
        self.members.iter().copied().collect()
    }
}

fn check_ids(model: &CtbnModel, j: &[ComponentId]) -> Result<()> {
    for &id in j {
        model.component(id)?;
    }
    Ok(())
}

fn closure_under(
    model: &CtbnModel,
    j: &[ComponentId],
    follow: impl Fn(ComponentId) -> bool,
) -> ClosureResult {
    let query: BTreeSet<ComponentId> = j.iter().copied().collect();
    let mut members = query.clone();
    let mut stack: Vec<ComponentId> = query.iter().copied().collect();
    while let Some(id) = stack.pop() {
        for &p in &model.components[id.index()].parents {
            if follow(p) && members.insert(p) {
                stack.push(p);
            }
        }
    }
    ClosureResult { members, query }
}

/// Smallest superset of `j` that contains the parents of all its members.
pub fn upward_closure(model: &CtbnModel, j: &[ComponentId]) -> Result<ClosureResult> {
    if j.is_empty() {
        return Err(Error::InvalidArgument("closure query is empty".into()));
    }
    check_ids(model, j)?;
    Ok(closure_under(model, j, |_| true))
}

fn require_fast(model: &CtbnModel, j: &[ComponentId]) -> Result<()> {
    check_ids(model, j)?;
    match j.iter().find(|&&id| !model.is_fast(id)) {
        Some(&id) => Err(Error::NotFast(id)),
        None => Ok(()),
    }
}

/// Closure of a set of fast components under fast parents only.
pub fn fast_upward_closure(model: &CtbnModel, j: &[ComponentId]) -> Result<ClosureResult> {
    require_fast(model, j)?;
    Ok(closure_under(model, j, |p| model.is_fast(p)))
}

/// Slow components that are parents of some member of `Up_f(j)`.
pub fn last_slow_ancestors(model: &CtbnModel, j: &[ComponentId]) -> Result<BTreeSet<ComponentId>> {
    let closure = fast_upward_closure(model, j)?;
    Ok(slow_parents_of(model, &closure.members))
}

fn slow_parents_of(model: &CtbnModel, set: &BTreeSet<ComponentId>) -> BTreeSet<ComponentId> {
    set.iter()
        .flat_map(|id| model.components[id.index()].parents.iter().copied())
        .filter(|&p| !model.is_fast(p))
        .collect()
}

/// A model over a subset of another model's components, renumbered
/// `1..=len` in ascending order of the original ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCtbn {
    pub model: CtbnModel,
    /// `original_ids[k]` is the original id of new component `k + 1`.
    pub original_ids: Vec<ComponentId>,
}

/// The network restricted to an upward-closed set `j`, with the original
/// rate tables and the marginal initial distribution.
pub fn sub_ctbn(model: &CtbnModel, j: &[ComponentId]) -> Result<SubCtbn> {
    model.ensure_valid()?;
    check_ids(model, j)?;
    let set: BTreeSet<ComponentId> = j.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::InvalidArgument("component set is empty".into()));
    }
    for &id in &set {
        for &p in &model.components[id.index()].parents {
            if !set.contains(&p) {
                return Err(Error::NotUpwardClosed {
                    component: id,
                    missing_parent: p,
                });
            }
        }
    }
    let original_ids: Vec<ComponentId> = set.into_iter().collect();
    let renumber = |old: ComponentId| {
        ComponentId::from_index(original_ids.iter().position(|&x| x == old).expect("closed"))
    };
    let components = original_ids
        .iter()
        .enumerate()
        .map(|(k, &old)| {
            let c = &model.components[old.index()];
            ComponentSpec {
                id: ComponentId::from_index(k),
                name: Some(c.label()),
                cardinality: c.cardinality,
                parents: c.parents.iter().map(|&p| renumber(p)).collect(),
                scale: c.scale,
                rate_table: c.rate_table.clone(),
                epsilon: c.epsilon,
            }
        })
        .collect();
    let positions: Vec<usize> = original_ids.iter().map(|id| id.index()).collect();
    let initial = model.initial.marginal(&model.cardinalities(), &positions)?;
    Ok(SubCtbn {
        model: CtbnModel {
            name: model.name.as_ref().map(|n| format!("{n}-sub")),
            components,
            initial,
            epsilon: model.epsilon,
        },
        original_ids,
    })
}

/// Stationary distribution of the fast set `fast_set` (which must be
/// fast-upward closed) with its last slow ancestors clamped as given.
/// Extra entries in `conditioners` are ignored.
pub fn conditional_equilibrium(
    model: &CtbnModel,
    fast_set: &[ComponentId],
    conditioners: &[(ComponentId, usize)],
) -> Result<DistributionVector> {
    let closure = fast_upward_closure(model, fast_set)?;
    if closure.members != closure.query {
        let missing = closure.members.difference(&closure.query).next().copied();
        return Err(Error::InvalidArgument(format!(
            "fast set {fast_set:?} is not fast-upward closed (missing {})",
            missing.map(|m| m.to_string()).unwrap_or_default()
        )));
    }
    let needed = slow_parents_of(model, &closure.members);
    let clamp: Vec<(ComponentId, usize)> = needed
        .iter()
        .map(|id| {
            conditioners
                .iter()
                .find(|(c, _)| c == id)
                .copied()
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("no value given for last slow ancestor {id}"))
                })
        })
        .collect::<Result<_>>()?;
    let members = closure.members_vec();
    let q = dynamics::clamped_generator(model, &members, &clamp)?;
    dynamics::stationary_distribution(&q).map_err(|e| match e {
        Error::NotErgodic { .. } => Error::AssumptionViolated {
            fast_set: members.clone(),
            assignment: clamp.clone(),
        },
        other => other,
    })
}

/// Conditional equilibria of a fast-upward closed set for every assignment
/// of its last slow ancestors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalEquilibrium {
    pub fast_set: Vec<ComponentId>,
    pub conditioners: Vec<ComponentId>,
    conditioner_space: StateSpace,
    table: Vec<DistributionVector>,
}

impl ConditionalEquilibrium {
    pub fn build(model: &CtbnModel, fast_set: &[ComponentId]) -> Result<Self> {
        let closure = fast_upward_closure(model, fast_set)?;
        let members = closure.members_vec();
        let conditioners: Vec<ComponentId> = slow_parents_of(model, &closure.members)
            .into_iter()
            .collect();
        let conditioner_space = model.space_of(&conditioners)?;
        let mut table = Vec::with_capacity(conditioner_space.size());
        for values in conditioner_space.iter() {
            let assignment: Vec<_> = conditioners.iter().copied().zip(values).collect();
            table.push(conditional_equilibrium(model, &members, &assignment)?);
        }
        Ok(ConditionalEquilibrium {
            fast_set: members,
            conditioners,
            conditioner_space,
            table,
        })
    }

    /// Distribution for an assignment of `self.conditioners` (same order).
    pub fn get(&self, values: &[usize]) -> Result<&DistributionVector> {
        Ok(&self.table[self.conditioner_space.encode(values)?])
    }

    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, &DistributionVector)> {
        self.conditioner_space.iter().zip(self.table.iter())
    }
}

/// One slow assignment under which the fast subsystem is not ergodic.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionFailure {
    pub assignment: Vec<(ComponentId, usize)>,
    pub classes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssumptionReport {
    /// Number of slow assignments examined.
    pub checked: usize,
    pub failures: Vec<AssumptionFailure>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks that, for every assignment of the slow components that the fast
/// components depend on, the joint fast generator is ergodic.
pub fn check_assumption(model: &CtbnModel) -> Result<AssumptionReport> {
    model.ensure_valid()?;
    let fast = model.fast_ids();
    if fast.is_empty() {
        return Ok(AssumptionReport::default());
    }
    let fast_set: BTreeSet<ComponentId> = fast.iter().copied().collect();
    let conditioners: Vec<ComponentId> = slow_parents_of(model, &fast_set).into_iter().collect();
    let space = model.space_of(&conditioners)?;
    let mut report = AssumptionReport::default();
    for values in space.iter() {
        let assignment: Vec<_> = conditioners.iter().copied().zip(values).collect();
        let q = dynamics::clamped_generator(model, &fast, &assignment)?;
        let classes = linalg::communicating_classes(q.as_matrix());
        report.checked += 1;
        if classes.len() > 1 {
            report.failures.push(AssumptionFailure {
                assignment,
                classes,
            });
        }
    }
    Ok(report)
}

fn require_assumption(model: &CtbnModel) -> Result<()> {
    let report = check_assumption(model)?;
    match report.failures.into_iter().next() {
        None => Ok(()),
        Some(f) => Err(Error::AssumptionViolated {
            fast_set: model.fast_ids(),
            assignment: f.assignment,
        }),
    }
}

fn require_slow(model: &CtbnModel, i: ComponentId) -> Result<&ComponentSpec> {
    let c = model.component(i)?;
    if c.scale != Scale::Slow {
        return Err(Error::NotSlow(i));
    }
    Ok(c)
}

/// Slow parents of `i` together with the last slow ancestors of its fast
/// parents. In a cyclic graph `i` can be among those ancestors; it is left
/// out, since a rate matrix already conditions on its own row.
pub fn reduced_parents(model: &CtbnModel, i: ComponentId) -> Result<BTreeSet<ComponentId>> {
    let c = require_slow(model, i)?;
    let fast_parents: Vec<ComponentId> = c
        .parents
        .iter()
        .copied()
        .filter(|&p| model.is_fast(p))
        .collect();
    let mut out: BTreeSet<ComponentId> = c
        .parents
        .iter()
        .copied()
        .filter(|&p| !model.is_fast(p))
        .collect();
    if !fast_parents.is_empty() {
        out.extend(last_slow_ancestors(model, &fast_parents)?);
    }
    out.remove(&i);
    Ok(out)
}

/// A conditional rate table keyed by the mixed-radix code of `parents`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRateTable {
    pub component: ComponentId,
    pub parents: Vec<ComponentId>,
    pub matrices: Vec<RateMatrix>,
}

/// Effective conditional rates of slow component `i` over its reduced
/// parents.
pub fn effective_conditional_rates(
    model: &CtbnModel,
    i: ComponentId,
) -> Result<ConditionalRateTable> {
    model.ensure_valid()?;
    let c = require_slow(model, i)?;
    let fast_parents: Vec<ComponentId> = c
        .parents
        .iter()
        .copied()
        .filter(|&p| model.is_fast(p))
        .collect();
    let parents: Vec<ComponentId> = reduced_parents(model, i)?.into_iter().collect();
    if fast_parents.is_empty() {
        return Ok(ConditionalRateTable {
            component: i,
            parents,
            matrices: c.rate_table.clone(),
        });
    }

    let equilibrium = ConditionalEquilibrium::build(model, &fast_parents)?;
    let fast_space = model.space_of(&equilibrium.fast_set)?;
    let reduced_space = model.space_of(&parents)?;
    let mut full = vec![0; model.len()];
    let mut fast_values = vec![0; equilibrium.fast_set.len()];
    let mut matrices = Vec::with_capacity(reduced_space.size());
    for values in reduced_space.iter() {
        for (&id, &v) in parents.iter().zip(&values) {
            full[id.index()] = v;
        }
        // Row `a` averages over the equilibrium given `X_i = a`, which only
        // matters when `i` is one of its own last slow ancestors.
        let mut q = RateMatrix::zeros(c.cardinality);
        for a in 0..c.cardinality {
            full[i.index()] = a;
            let cond: Vec<usize> = equilibrium
                .conditioners
                .iter()
                .map(|id| full[id.index()])
                .collect();
            let pi = equilibrium.get(&cond)?;
            for (z, &w) in pi.as_slice().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                fast_space.decode_into(z, &mut fast_values);
                for (&id, &v) in equilibrium.fast_set.iter().zip(&fast_values) {
                    full[id.index()] = v;
                }
                let local = model.local_matrix(i, &full);
                for b in (0..c.cardinality).filter(|&b| b != a) {
                    q.set(a, b, q.get(a, b) + w * local.get(a, b));
                }
            }
        }
        q.fix_diagonal();
        matrices.push(q);
    }
    Ok(ConditionalRateTable {
        component: i,
        parents,
        matrices,
    })
}

/// The reduced network over the slow components, renumbered `1..=len` in
/// ascending order of the original ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCtbn {
    pub model: CtbnModel,
    pub original_ids: Vec<ComponentId>,
}

impl ReducedCtbn {
    /// New id of an original slow component.
    pub fn new_id(&self, original: ComponentId) -> Option<ComponentId> {
        self.original_ids
            .iter()
            .position(|&x| x == original)
            .map(ComponentId::from_index)
    }

    /// Reduced parents of an original slow component, in original ids.
    pub fn parents_of(&self, original: ComponentId) -> Option<Vec<ComponentId>> {
        let id = self.new_id(original)?;
        Some(
            self.model.components[id.index()]
                .parents
                .iter()
                .map(|p| self.original_ids[p.index()])
                .collect(),
        )
    }

    /// Reduced conditional rate matrix of an original slow component for a
    /// parent assignment in ascending parent order.
    pub fn rate_matrix(
        &self,
        original: ComponentId,
        parent_values: &[usize],
    ) -> Result<&RateMatrix> {
        let id = self
            .new_id(original)
            .ok_or(Error::UnknownComponent(original))?;
        let code = self.model.parent_space(id)?.encode(parent_values)?;
        Ok(&self.model.components[id.index()].rate_table[code])
    }
}

/// Builds the reduced network: reduced parents, effective conditional
/// rates, and the initial distribution marginalized onto the slow
/// components.
pub fn reduce_ctbn(model: &CtbnModel) -> Result<ReducedCtbn> {
    model.ensure_valid()?;
    require_assumption(model)?;
    let original_ids = model.slow_ids();
    if original_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "model has no slow components to keep".into(),
        ));
    }
    let renumber = |old: ComponentId| {
        ComponentId::from_index(
            original_ids
                .iter()
                .position(|&x| x == old)
                .expect("reduced parents are slow"),
        )
    };
    let mut components = Vec::with_capacity(original_ids.len());
    for (k, &old) in original_ids.iter().enumerate() {
        let table = effective_conditional_rates(model, old)?;
        let c = &model.components[old.index()];
        components.push(ComponentSpec {
            id: ComponentId::from_index(k),
            name: Some(c.label()),
            cardinality: c.cardinality,
            parents: table.parents.iter().map(|&p| renumber(p)).collect(),
            scale: Scale::Slow,
            rate_table: table.matrices,
            epsilon: None,
        });
    }
    let positions: Vec<usize> = original_ids.iter().map(|id| id.index()).collect();
    let initial = model.initial.marginal(&model.cardinalities(), &positions)?;
    let reduced = CtbnModel {
        name: model.name.as_ref().map(|n| format!("{n}-reduced")),
        components,
        initial,
        epsilon: model.epsilon,
    };
    reduced.ensure_valid()?;
    Ok(ReducedCtbn {
        model: reduced,
        original_ids,
    })
}

/// Index bookkeeping between the joint space and its slow/fast factors.
struct FastSlowIndex {
    slow: Vec<ComponentId>,
    fast: Vec<ComponentId>,
    slow_space: StateSpace,
    fast_space: StateSpace,
    /// Per joint index: (slow code, fast code).
    split: Vec<(usize, usize)>,
    /// Joint index of (slow code, fast code), row-major over slow codes.
    joint: Vec<usize>,
}

impl FastSlowIndex {
    fn new(model: &CtbnModel) -> Result<Self> {
        let slow = model.slow_ids();
        let fast = model.fast_ids();
        let slow_space = model.space_of(&slow)?;
        let fast_space = model.space_of(&fast)?;
        let space = model.state_space()?;
        let mut buf = vec![0; model.len()];
        let mut sbuf = vec![0; slow.len()];
        let mut fbuf = vec![0; fast.len()];
        let split: Vec<(usize, usize)> = (0..space.size())
            .map(|k| {
                space.decode_into(k, &mut buf);
                for (slot, id) in sbuf.iter_mut().zip(&slow) {
                    *slot = buf[id.index()];
                }
                for (slot, id) in fbuf.iter_mut().zip(&fast) {
                    *slot = buf[id.index()];
                }
                (
                    slow_space.encode_unchecked(&sbuf),
                    fast_space.encode_unchecked(&fbuf),
                )
            })
            .collect();
        let mut joint = vec![0; split.len()];
        for (k, &(sc, fc)) in split.iter().enumerate() {
            joint[sc * fast_space.size() + fc] = k;
        }
        Ok(FastSlowIndex {
            slow,
            fast,
            slow_space,
            fast_space,
            split,
            joint,
        })
    }

    fn joint_index(&self, slow_code: usize, fast_code: usize) -> usize {
        self.joint[slow_code * self.fast_space.size() + fast_code]
    }

    /// Equilibrium of all fast components for every slow state.
    fn fast_equilibria(&self, model: &CtbnModel) -> Result<Vec<DistributionVector>> {
        self.slow_space
            .iter()
            .map(|alpha| {
                let q = dynamics::conditional_fast_generator(model, &alpha)?;
                dynamics::stationary_distribution(&q).map_err(|e| match e {
                    Error::NotErgodic { .. } => Error::AssumptionViolated {
                        fast_set: self.fast.clone(),
                        assignment: self.slow.iter().copied().zip(alpha.clone()).collect(),
                    },
                    other => other,
                })
            })
            .collect()
    }
}

/// Reduced generator over `S_slow`:
/// `q~(alpha, beta) = sum_zeta pi(zeta | alpha) q_slow((alpha, zeta), (beta, zeta))`.
pub fn effective_joint_generator(model: &CtbnModel) -> Result<RateMatrix> {
    model.ensure_valid()?;
    let idx = FastSlowIndex::new(model)?;
    let pis = idx.fast_equilibria(model)?;
    let q_slow = dynamics::split_fast_slow(model)?.q_slow;
    let n_slow = idx.slow_space.size();
    let mut out = RateMatrix::zeros(n_slow);
    for (a, &(alpha, zeta)) in idx.split.iter().enumerate() {
        let w = pis[alpha].as_slice()[zeta];
        if w == 0.0 {
            continue;
        }
        for (b, &(beta, zeta_b)) in idx.split.iter().enumerate() {
            if zeta_b != zeta || beta == alpha {
                continue;
            }
            let r = q_slow.get(a, b);
            if r != 0.0 {
                out.set(alpha, beta, out.get(alpha, beta) + w * r);
            }
        }
    }
    out.fix_diagonal();
    Ok(out)
}

/// `g(a, b) = pi(Fast(b) | Slow(b)) [Slow(a) = Slow(b)]`, the long-time limit
/// of the fast semigroup.
pub fn projection_g(model: &CtbnModel) -> Result<DMatrix<f64>> {
    model.ensure_valid()?;
    let idx = FastSlowIndex::new(model)?;
    let pis = idx.fast_equilibria(model)?;
    let n = idx.split.len();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        let (sa, _) = idx.split[a];
        for zeta in 0..idx.fast_space.size() {
            let b = idx.joint_index(sa, zeta);
            g[(a, b)] = pis[sa].as_slice()[zeta];
        }
    }
    Ok(g)
}

/// Slow marginal of a joint distribution.
pub fn slow_marginal(model: &CtbnModel, p: &DistributionVector) -> Result<DistributionVector> {
    let positions: Vec<usize> = model.slow_ids().iter().map(|id| id.index()).collect();
    p.marginal(&model.state_space()?, &positions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitingSolution {
    pub distribution: DistributionVector,
    /// True when `p0` was outside the range of `G^T` and was projected first.
    pub projected_initial: bool,
}

/// Integrates the limiting equation `dp/dt = G^T (Q_slow)^T p` by a dense
/// matrix exponential.
pub fn limiting_solve(
    model: &CtbnModel,
    p0: &DistributionVector,
    t: f64,
) -> Result<LimitingSolution> {
    if !t.is_finite() {
        return Err(Error::NonFinite("time"));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "time must be >= 0, got {t}"
        )));
    }
    if p0.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial distribution"));
    }
    let g = projection_g(model)?;
    if p0.len() != g.nrows() {
        return Err(Error::LengthMismatch {
            expected: g.nrows(),
            got: p0.len(),
        });
    }
    let gt = g.transpose();
    let p = DVector::from_column_slice(p0.as_slice());
    let projected = &gt * &p;
    let gap = (&projected - &p).abs().sum();
    let projected_initial = gap > 1e-10;
    if projected_initial {
        log::warn!(
            "initial distribution is {gap:.3e} (L1) away from fast equilibrium; projecting (boundary layer not resolved)"
        );
    }
    let q_slow = dynamics::split_fast_slow(model)?.q_slow;
    let a = &gt * q_slow.as_matrix().transpose();
    let pt = linalg::expm(&(a * t)) * projected;
    let mut out: Vec<f64> = pt.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    Ok(LimitingSolution {
        distribution: DistributionVector::new(out)?,
        projected_initial,
    })
}

/// Reduced parents of every slow component, in original ids.
pub fn reduced_graph(model: &CtbnModel) -> Result<BTreeMap<ComponentId, BTreeSet<ComponentId>>> {
    model
        .slow_ids()
        .into_iter()
        .map(|i| reduced_parents(model, i).map(|p| (i, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::builtin::builtin;

    fn ids(v: &[usize]) -> Vec<ComponentId> {
        v.iter().map(|&i| ComponentId(i)).collect()
    }

    fn set(v: &[usize]) -> BTreeSet<ComponentId> {
        ids(v).into_iter().collect()
    }

    fn assert_matrix(q: &RateMatrix, expected: [[f64; 2]; 2]) {
        for a in 0..2 {
            for b in 0..2 {
                assert!(
                    (q.get(a, b) - expected[a][b]).abs() <= 1e-12,
                    "({a},{b}): {} vs {}",
                    q.get(a, b),
                    expected[a][b]
                );
            }
        }
    }

    #[test]
    fn closures_on_six_component_graph() {
        let m = builtin("ex44").unwrap();
        assert_eq!(
            upward_closure(&m, &ids(&[4])).unwrap().members,
            set(&[1, 2, 3, 4])
        );
        assert_eq!(
            upward_closure(&m, &ids(&[1, 3, 5])).unwrap().members,
            set(&[1, 3, 5])
        );
        assert_eq!(
            fast_upward_closure(&m, &ids(&[4])).unwrap().members,
            set(&[3, 4])
        );
        assert_eq!(
            fast_upward_closure(&m, &ids(&[3])).unwrap().members,
            set(&[3])
        );
        assert_eq!(last_slow_ancestors(&m, &ids(&[4])).unwrap(), set(&[1, 2]));
        assert_eq!(last_slow_ancestors(&m, &ids(&[3])).unwrap(), set(&[1]));
        assert!(matches!(
            fast_upward_closure(&m, &ids(&[5])),
            Err(Error::NotFast(ComponentId(5)))
        ));
    }

    #[test]
    fn sub_ctbn_requires_closed_set() {
        let m = builtin("ex44").unwrap();
        assert!(matches!(
            sub_ctbn(&m, &ids(&[4])),
            Err(Error::NotUpwardClosed { .. })
        ));
        let sub = sub_ctbn(&m, &ids(&[1, 3, 5])).unwrap();
        assert_eq!(sub.original_ids, ids(&[1, 3, 5]));
        assert_eq!(sub.model.components[2].parents, ids(&[2]));
        assert!(sub.model.validate().is_empty());
    }

    #[test]
    fn conditional_equilibrium_matches_worked_examples() {
        let m = builtin("ex51").unwrap();
        let pi = conditional_equilibrium(&m, &ids(&[2]), &[(ComponentId(1), 0)]).unwrap();
        assert!((pi.as_slice()[0] - 0.6).abs() < 1e-12);
        let m = builtin("ex52").unwrap();
        let pi = conditional_equilibrium(&m, &ids(&[3]), &[(ComponentId(1), 1)]).unwrap();
        assert!((pi.as_slice()[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn reduced_parents_of_examples() {
        let m = builtin("ex44").unwrap();
        let g = reduced_graph(&m).unwrap();
        assert_eq!(g[&ComponentId(5)], set(&[1]));
        assert_eq!(g[&ComponentId(6)], set(&[1, 2]));
        assert_eq!(g[&ComponentId(1)], set(&[]));
        let m = builtin("ex42").unwrap();
        assert_eq!(reduced_parents(&m, ComponentId(5)).unwrap(), set(&[1, 2]));
        assert_eq!(reduced_parents(&m, ComponentId(6)).unwrap(), set(&[1]));
    }

    #[test]
    fn effective_rates_chain() {
        let r = reduce_ctbn(&builtin("ex51").unwrap()).unwrap();
        assert_eq!(r.original_ids, ids(&[1, 3]));
        assert_eq!(r.parents_of(ComponentId(3)).unwrap(), ids(&[1]));
        assert_matrix(
            r.rate_matrix(ComponentId(1), &[]).unwrap(),
            [[-1.0, 1.0], [2.0, -2.0]],
        );
        assert_matrix(
            r.rate_matrix(ComponentId(3), &[0]).unwrap(),
            [[-3.8, 3.8], [4.8, -4.8]],
        );
        assert_matrix(
            r.rate_matrix(ComponentId(3), &[1]).unwrap(),
            [[-4.2, 4.2], [5.2, -5.2]],
        );
    }

    #[test]
    fn effective_rates_six_component() {
        let r = reduce_ctbn(&builtin("ex52").unwrap()).unwrap();
        assert_eq!(r.original_ids, ids(&[1, 2, 5, 6]));
        assert_matrix(
            r.rate_matrix(ComponentId(5), &[0]).unwrap(),
            [[-1.8, 1.8], [2.2, -2.2]],
        );
        assert_matrix(
            r.rate_matrix(ComponentId(5), &[1]).unwrap(),
            [[-2.2, 2.2], [1.8, -1.8]],
        );
    }

    #[test]
    fn joint_generator_agrees_with_reduced_network() {
        for name in ["ex41", "ex42", "ex43", "ex44"] {
            let m = builtin(name).unwrap();
            let direct = effective_joint_generator(&m).unwrap();
            let via = dynamics::amalgamate(&reduce_ctbn(&m).unwrap().model, 1.0).unwrap();
            let diff = (direct.as_matrix() - via.as_matrix()).abs().max();
            assert!(diff <= 1e-12, "{name}: {diff}");
        }
    }

    #[test]
    fn chain_joint_generator_entries() {
        let q = effective_joint_generator(&builtin("ex51").unwrap()).unwrap();
        // states (x1, x3) in order 00, 01, 10, 11
        let expected = [
            [0.0, 3.8, 1.0, 0.0],
            [4.8, 0.0, 0.0, 1.0],
            [2.0, 0.0, 0.0, 4.2],
            [0.0, 2.0, 5.2, 0.0],
        ];
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert!((q.get(a, b) - expected[a][b]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn assumption_check_reports_failures() {
        let m = builtin("ex52").unwrap();
        let report = check_assumption(&m).unwrap();
        assert!(report.passed());
        assert_eq!(report.checked, 4);

        let mut broken = m.clone();
        // X3 is frozen when X1 = 1, so the fast pair splits into closed classes.
        broken.components[2].rate_table[1] = RateMatrix::zeros(2);
        let report = check_assumption(&broken).unwrap();
        assert!(!report.passed());
        assert!(report
            .failures
            .iter()
            .all(|f| f.assignment.contains(&(ComponentId(1), 1))));
        assert!(matches!(
            reduce_ctbn(&broken),
            Err(Error::AssumptionViolated { .. })
        ));

        let mut slow_only = m;
        for c in &mut slow_only.components {
            c.scale = Scale::Slow;
        }
        let report = check_assumption(&slow_only).unwrap();
        assert!(report.passed());
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn projection_is_idempotent() {
        let m = builtin("ex44").unwrap();
        let g = projection_g(&m).unwrap();
        assert!((&g * &g - &g).abs().max() < 1e-10);
        for row in g.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn limiting_solution_matches_reduced_master_equation() {
        let m = builtin("ex51").unwrap();
        let g = projection_g(&m).unwrap();
        let p0 = DVector::from_column_slice(&m.initial_joint().unwrap());
        let p0 = DistributionVector::new((g.transpose() * p0).iter().copied().collect()).unwrap();
        let q_eff = effective_joint_generator(&m).unwrap();
        let slow0 = slow_marginal(&m, &p0).unwrap();
        for t in [0.0, 0.3, 1.0, 4.0] {
            let lim = limiting_solve(&m, &p0, t).unwrap();
            assert!(!lim.projected_initial);
            let reduced = dynamics::solve_master(&q_eff, &slow0, t).unwrap();
            let d = slow_marginal(&m, &lim.distribution)
                .unwrap()
                .l1_distance(&reduced);
            assert!(d < 1e-8, "t={t}: {d}");
        }
    }

    #[test]
    fn limiting_solve_projects_off_manifold_start() {
        let m = builtin("ex51").unwrap();
        let p0 = DistributionVector::point(8, 0);
        let lim = limiting_solve(&m, &p0, 0.0).unwrap();
        assert!(lim.projected_initial);
        // fast coordinate X2 is redistributed as (3/5, 2/5) given X1 = 0
        assert!((lim.distribution.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((lim.distribution.as_slice()[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn slow_component_that_drives_its_own_fast_parent() {
        let text = r#"{
            "epsilon": 0.01,
            "components": [
                {"id": 1, "cardinality": 2, "parents": [2], "scale": "slow",
                 "rate_table": {"0": [[-1, 1], [1, -1]], "1": [[-3, 3], [3, -3]]}},
                {"id": 2, "cardinality": 2, "parents": [1], "scale": "fast",
                 "rate_table": {"0": [[-1, 1], [2, -2]], "1": [[-2, 2], [1, -1]]}}
            ],
            "initial": {"factored": [[1, 0], [1, 0]]}
        }"#;
        let m = crate::format::parse_model(text).unwrap();
        assert_eq!(reduced_parents(&m, ComponentId(1)).unwrap(), set(&[]));
        // row 0 averages with pi(. | x1 = 0) = (2/3, 1/3), row 1 with (1/3, 2/3)
        let r = reduce_ctbn(&m).unwrap();
        let q = r.rate_matrix(ComponentId(1), &[]).unwrap();
        assert!((q.get(0, 1) - 5.0 / 3.0).abs() < 1e-12);
        assert!((q.get(1, 0) - 7.0 / 3.0).abs() < 1e-12);
    }
}
