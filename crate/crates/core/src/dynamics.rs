//! Joint generators, the master equation and stationary behaviour.
//!
//! The master equation `dp/dt = Q^T p` is integrated by uniformization:
//! with `lambda >= max_a |q_aa|` the matrix `P = I + Q / lambda` is
//! stochastic and `exp(t Q^T) = sum_k Poisson(k; lambda t) (P^T)^k`, so every
//! partial sum is a nonnegative combination of distributions.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ComponentId, CtbnModel, RateMatrix, StateSpace};

/// Largest joint space that `amalgamate` will materialize densely.
pub const DEFAULT_STATE_CAP: usize = 1 << 13;
/// Tolerance on the unit mass of a [`DistributionVector`].
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Poisson tail mass dropped by uniformization over the whole interval.
    pub tail_mass: f64,
    /// Above this many states the stationary solve switches to power iteration.
    pub dense_stationary_limit: usize,
    pub power_tol: f64,
    pub power_max_iter: usize,
    pub state_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tail_mass: 1e-10,
            dense_stationary_limit: 10_000,
            power_tol: 1e-14,
            power_max_iter: 1_000_000,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

/// A probability vector over an enumerated state space.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector(Vec<f64>);

impl DistributionVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("distribution entries"));
        }
        if let Some(p) = probs.iter().find(|p| **p < 0.0) {
            return Err(Error::InvalidArgument(format!("negative probability {p}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {s}, not 1"
            )));
        }
        Ok(DistributionVector(probs))
    }

    /// Point mass on `state`.
    pub fn point(size: usize, state: usize) -> Self {
        let mut v = vec![0.0; size];
        v[state] = 1.0;
        DistributionVector(v)
    }

    pub fn uniform(size: usize) -> Self {
        DistributionVector(vec![1.0 / size as f64; size])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_distance(&self, other: &DistributionVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Marginal over the coordinates at `positions` of the product `space`.
    pub fn marginal(&self, space: &StateSpace, positions: &[usize]) -> Result<DistributionVector> {
        if space.size() != self.len() {
            return Err(Error::LengthMismatch {
                expected: space.size(),
                got: self.len(),
            });
        }
        let sub = StateSpace::new(positions.iter().map(|&p| space.radices()[p]).collect())?;
        let mut out = vec![0.0; sub.size()];
        let mut buf = vec![0; space.radices().len()];
        let mut sub_buf = vec![0; positions.len()];
        for (k, &pk) in self.0.iter().enumerate() {
            space.decode_into(k, &mut buf);
            for (slot, &p) in sub_buf.iter_mut().zip(positions) {
                *slot = buf[p];
            }
            out[sub.encode_unchecked(&sub_buf)] += pk;
        }
        Ok(DistributionVector(out))
    }
}

/// The epsilon-independent fast and slow parts of a joint generator.
#[derive(Debug, Clone, PartialEq)]
pub struct FastSlowSplit {
    pub q_fast: RateMatrix,
    pub q_slow: RateMatrix,
}

impl FastSlowSplit {
    /// `q_fast / epsilon + q_slow`.
    pub fn compose(&self, epsilon: f64) -> RateMatrix {
        let m = self.q_fast.as_matrix() / epsilon + self.q_slow.as_matrix();
        RateMatrix::from_matrix(m).expect("square by construction")
    }
}

/// Assembles a joint generator over the full space from the components for
/// which `factor` returns a multiplier.
fn assemble(
    model: &CtbnModel,
    cap: usize,
    factor: impl Fn(ComponentId) -> Option<f64>,
) -> Result<RateMatrix> {
    model.ensure_valid()?;
    let states: u128 = model.cardinalities().iter().map(|&c| c as u128).product();
    if states > cap as u128 {
        return Err(Error::StateSpaceTooLarge { states, cap });
    }
    let space = model.state_space()?;
    let n = space.size();
    let mut q = RateMatrix::zeros(n);
    let mut s = vec![0; model.len()];
    let factors: Vec<Option<f64>> = model.ids().map(&factor).collect();
    for k in 0..n {
        space.decode_into(k, &mut s);
        for (pos, c) in model.components.iter().enumerate() {
            let Some(f) = factors[pos] else { continue };
            let local = model.local_matrix(c.id, &s);
            let from = s[pos];
            let stride = space.strides()[pos];
            for to in 0..c.cardinality {
                if to == from {
                    continue;
                }
                let rate = local.get(from, to) * f;
                if rate != 0.0 {
                    let target = k + to * stride - from * stride;
                    q.set(k, target, q.get(k, target) + rate);
                }
            }
        }
    }
    q.fix_diagonal();
    Ok(q)
}

/// Joint generator of the network with fast rates divided by `epsilon`.
pub fn amalgamate(model: &CtbnModel, epsilon: f64) -> Result<RateMatrix> {
    amalgamate_with_cap(model, epsilon, DEFAULT_STATE_CAP)
}

pub fn amalgamate_with_cap(model: &CtbnModel, epsilon: f64, cap: usize) -> Result<RateMatrix> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    assemble(model, cap, |id| Some(model.rate_factor(id, epsilon)))
}

/// Splits the joint generator into its epsilon-independent fast and slow
/// parts. Per-component epsilon overrides are ignored here.
pub fn split_fast_slow(model: &CtbnModel) -> Result<FastSlowSplit> {
    let q_fast = assemble(model, DEFAULT_STATE_CAP, |id| {
        model.is_fast(id).then_some(1.0)
    })?;
    let q_slow = assemble(model, DEFAULT_STATE_CAP, |id| {
        (!model.is_fast(id)).then_some(1.0)
    })?;
    Ok(FastSlowSplit { q_fast, q_slow })
}

/// Right-hand side of the master equation evaluated component by component,
/// without forming the joint generator:
/// `dp_b/dt = sum_i sum_{a_i} q^i_{a_i, b_i | parents(b)} p(b_1..a_i..b_M)`.
pub fn master_rhs(model: &CtbnModel, epsilon: f64, p: &[f64]) -> Result<Vec<f64>> {
    model.ensure_valid()?;
    let space = model.state_space()?;
    if p.len() != space.size() {
        return Err(Error::LengthMismatch {
            expected: space.size(),
            got: p.len(),
        });
    }
    let mut out = vec![0.0; p.len()];
    let mut b = vec![0; model.len()];
    for (kb, slot) in out.iter_mut().enumerate() {
        space.decode_into(kb, &mut b);
        let mut acc = 0.0;
        for (pos, c) in model.components.iter().enumerate() {
            let local = model.local_matrix(c.id, &b);
            let f = model.rate_factor(c.id, epsilon);
            let stride = space.strides()[pos];
            let bi = b[pos];
            for ai in 0..c.cardinality {
                let ka = kb + ai * stride - bi * stride;
                acc += f * local.get(ai, bi) * p[ka];
            }
        }
        *slot = acc;
    }
    Ok(out)
}

fn check_generator_input(q: &RateMatrix) -> Result<()> {
    if q.as_matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rate matrix"));
    }
    Ok(())
}

/// `p(t) = exp(t Q^T) p0` by uniformization.
pub fn solve_master(q: &RateMatrix, p0: &DistributionVector, t: f64) -> Result<DistributionVector> {
    solve_master_with(q, p0, t, &SolverOptions::default())
}

pub fn solve_master_with(
    q: &RateMatrix,
    p0: &DistributionVector,
    t: f64,
    opts: &SolverOptions,
) -> Result<DistributionVector> {
    check_generator_input(q)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("time"));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "time must be >= 0, got {t}"
        )));
    }
    let n = q.dim();
    if p0.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: p0.len(),
        });
    }
    let lambda = (0..n).map(|i| q.exit_rate(i)).fold(0.0, f64::max);
    if t == 0.0 || lambda == 0.0 {
        return Ok(p0.clone());
    }

    // Keep lambda * dt moderate so exp(-lambda dt) never underflows.
    const MAX_STEP_MEAN: f64 = 25.0;
    let steps = (lambda * t / MAX_STEP_MEAN).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mean = lambda * dt;
    let step_tol = (opts.tail_mass / steps as f64).max(1e-15);
    let max_terms = (mean + 60.0 * mean.sqrt() + 100.0) as usize;

    let qt = q.as_matrix().transpose();
    let mut p = DVector::from_column_slice(p0.as_slice());
    for _ in 0..steps {
        let mut v = p.clone();
        let mut w = (-mean).exp();
        let mut acc = &v * w;
        let mut cum = w;
        let mut k = 0;
        while 1.0 - cum > step_tol && k < max_terms {
            v = &v + (&qt * &v) / lambda;
            k += 1;
            w *= mean / k as f64;
            acc += &v * w;
            cum += w;
        }
        p = acc / cum;
    }
    let mut out: Vec<f64> = p.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    Ok(DistributionVector(out))
}

/// True iff the graph of strictly positive off-diagonal rates is strongly
/// connected.
pub fn is_ergodic(q: &RateMatrix) -> bool {
    linalg::communicating_classes(q.as_matrix()).len() <= 1
}

/// Unique `pi` with `Q^T pi = 0`; fails on reducible generators.
pub fn stationary_distribution(q: &RateMatrix) -> Result<DistributionVector> {
    stationary_distribution_with(q, &SolverOptions::default())
}

pub fn stationary_distribution_with(
    q: &RateMatrix,
    opts: &SolverOptions,
) -> Result<DistributionVector> {
    check_generator_input(q)?;
    let n = q.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty rate matrix".into()));
    }
    let classes = linalg::communicating_classes(q.as_matrix());
    if classes.len() > 1 {
        return Err(Error::NotErgodic { classes });
    }
    if n == 1 {
        return Ok(DistributionVector(vec![1.0]));
    }
    let pi = if n <= opts.dense_stationary_limit {
        linalg::stationary_dense(q.as_matrix())
            .ok_or_else(|| Error::InvalidArgument("singular balance system".into()))?
    } else {
        linalg::stationary_power(q.as_matrix(), opts.power_tol, opts.power_max_iter)
    };
    Ok(DistributionVector(pi.iter().copied().collect()))
}

/// `|Re lambda_2|`, the magnitude of the eigenvalue with the second largest
/// real part. Zero for chains with more than one recurrent class.
pub fn equilibration_rate(q: &RateMatrix) -> f64 {
    let n = q.dim();
    if n < 2 {
        return 0.0;
    }
    let re = linalg::eigenvalue_real_parts(q.as_matrix());
    let scale = (0..n).map(|i| q.exit_rate(i).abs()).fold(1.0, f64::max);
    let l2 = re[1].abs();
    if l2 < 1e-12 * scale {
        0.0
    } else {
        l2
    }
}

/// Generator over the product space of `members` with every other
/// component a member depends on clamped to the value in `clamp`. Rates are
/// the stored, epsilon-independent ones.
pub fn clamped_generator(
    model: &CtbnModel,
    members: &[ComponentId],
    clamp: &[(ComponentId, usize)],
) -> Result<RateMatrix> {
    model.ensure_valid()?;
    let mut context = vec![usize::MAX; model.len()];
    for &(id, v) in clamp {
        let c = model.component(id)?;
        if v >= c.cardinality {
            return Err(Error::StateOutOfRange {
                component: id,
                value: v,
                cardinality: c.cardinality,
            });
        }
        context[id.index()] = v;
    }
    for &id in members {
        let c = model.component(id)?;
        for &p in &c.parents {
            if !members.contains(&p) && context[p.index()] == usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "parent {p} of component {id} is neither a member nor clamped"
                )));
            }
        }
    }
    let space = model.space_of(members)?;
    let n = space.size();
    let mut q = RateMatrix::zeros(n);
    let mut local_state = vec![0; members.len()];
    let mut full = context.clone();
    for k in 0..n {
        space.decode_into(k, &mut local_state);
        for (pos, &id) in members.iter().enumerate() {
            full[id.index()] = local_state[pos];
        }
        for (pos, &id) in members.iter().enumerate() {
            let c = model.component(id)?;
            let local = model.local_matrix(id, &full);
            let from = local_state[pos];
            let stride = space.strides()[pos];
            for to in 0..c.cardinality {
                if to != from {
                    let target = k + to * stride - from * stride;
                    q.set(k, target, q.get(k, target) + local.get(from, to));
                }
            }
        }
    }
    q.fix_diagonal();
    Ok(q)
}

/// Generator of the fast components over `S_fast` with the slow components
/// held at `slow_state` (ordered by ascending slow id).
pub fn conditional_fast_generator(model: &CtbnModel, slow_state: &[usize]) -> Result<RateMatrix> {
    let slow = model.slow_ids();
    if slow_state.len() != slow.len() {
        return Err(Error::LengthMismatch {
            expected: slow.len(),
            got: slow_state.len(),
        });
    }
    let clamp: Vec<_> = slow.into_iter().zip(slow_state.iter().copied()).collect();
    clamped_generator(model, &model.fast_ids(), &clamp)
}
