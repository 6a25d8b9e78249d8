//! CTBN models: components, conditional rate tables, scale annotations and
//! the mixed-radix state encoding shared by every other module.
//!
//! Component ids are 1-based, matching the model file format. Joint states
//! are ordered big-endian: component 1 is the most significant digit and the
//! last component varies fastest. Parent assignments follow the same rule
//! over the parents sorted by ascending id.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of a rate matrix must vanish to within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-10;
/// Probability vectors of an initial distribution must sum to one within this.
pub const INITIAL_SUM_TOL: f64 = 1e-12;

/// 1-based component identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub usize);

impl ComponentId {
    /// Zero-based position in `CtbnModel::components`.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        ComponentId(index + 1)
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Slow,
    Fast,
}

/// Dense generator of a continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(DMatrix<f64>);

impl RateMatrix {
    /// Wraps a square matrix without checking the generator invariants.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument(format!(
                "rate matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(RateMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
        }
        Ok(RateMatrix(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }

    pub fn zeros(dim: usize) -> Self {
        RateMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[(from, to)]
    }

    pub fn set(&mut self, from: usize, to: usize, rate: f64) {
        self.0[(from, to)] = rate;
    }

    /// Total rate of leaving `state`, i.e. `-q[state][state]`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.0[(state, state)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    /// Resets every diagonal entry to minus the sum of its row's off-diagonals.
    pub fn fix_diagonal(&mut self) {
        for i in 0..self.dim() {
            let off: f64 = (0..self.dim())
                .filter(|&j| j != i)
                .map(|j| self.0[(i, j)])
                .sum();
            self.0[(i, i)] = -off;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RateMatrix(&self.0 * factor)
    }

    /// Human-readable descriptions of every broken generator invariant.
    pub fn problems(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.dim();
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = self.0[(i, j)];
                if !v.is_finite() {
                    out.push(format!("entry ({i},{j}) is not finite"));
                } else if i != j && v < 0.0 {
                    out.push(format!("off-diagonal entry ({i},{j}) = {v} is negative"));
                }
                sum += v;
            }
            if sum.is_finite() && sum.abs() > tol {
                out.push(format!("row {i} sums to {sum}, not 0"));
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.problems(ROW_SUM_TOL).is_empty()
    }
}

/// Mixed-radix (big-endian) enumeration of a product space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(radices: Vec<usize>) -> Result<Self> {
        let mut strides = vec![0; radices.len()];
        let mut size: usize = 1;
        for k in (0..radices.len()).rev() {
            strides[k] = size;
            size = size
                .checked_mul(radices[k])
                .ok_or(Error::StateSpaceTooLarge {
                    states: radices.iter().map(|&r| r as u128).product(),
                    cap: usize::MAX,
                })?;
        }
        Ok(StateSpace {
            radices,
            strides,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn encode(&self, values: &[usize]) -> Result<usize> {
        if values.len() != self.radices.len() {
            return Err(Error::LengthMismatch {
                expected: self.radices.len(),
                got: values.len(),
            });
        }
        let mut k = 0;
        for (pos, (&v, &r)) in values.iter().zip(&self.radices).enumerate() {
            if v >= r {
                return Err(Error::StateOutOfRange {
                    component: ComponentId::from_index(pos),
                    value: v,
                    cardinality: r,
                });
            }
            k += v * self.strides[pos];
        }
        Ok(k)
    }

    /// Encoding without range checks, for hot loops over known-good states.
    pub fn encode_unchecked(&self, values: &[usize]) -> usize {
        values.iter().zip(&self.strides).map(|(v, s)| v * s).sum()
    }

    pub fn decode(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.size {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.size,
            });
        }
        let mut out = vec![0; self.radices.len()];
        self.decode_into(index, &mut out);
        Ok(out)
    }

    pub fn decode_into(&self, index: usize, out: &mut [usize]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = (index / self.strides[k]) % self.radices[k];
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.size).map(move |k| {
            let mut v = vec![0; self.radices.len()];
            self.decode_into(k, &mut v);
            v
        })
    }
}

/// One local state per component, in component order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointState(pub Vec<usize>);

/// Flat index of a joint state under the big-endian mixed-radix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateIndex(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialDistribution {
    /// Probabilities over the joint space in mixed-radix order.
    Joint(Vec<f64>),
    /// One independent distribution per component.
    Factored(Vec<Vec<f64>>),
}

impl InitialDistribution {
    /// Expands to a probability vector over the product of `cardinalities`.
    pub fn to_joint(&self, cardinalities: &[usize]) -> Result<Vec<f64>> {
        let space = StateSpace::new(cardinalities.to_vec())?;
        match self {
            InitialDistribution::Joint(p) => {
                if p.len() != space.size() {
                    return Err(Error::LengthMismatch {
                        expected: space.size(),
                        got: p.len(),
                    });
                }
                Ok(p.clone())
            }
            InitialDistribution::Factored(factors) => {
                if factors.len() != cardinalities.len() {
                    return Err(Error::LengthMismatch {
                        expected: cardinalities.len(),
                        got: factors.len(),
                    });
                }
                let mut buf = vec![0; cardinalities.len()];
                Ok((0..space.size())
                    .map(|k| {
                        space.decode_into(k, &mut buf);
                        buf.iter()
                            .zip(factors)
                            .map(|(&v, f)| f.get(v).copied().unwrap_or(0.0))
                            .product()
                    })
                    .collect())
            }
        }
    }

    /// Marginal over the components at `positions` (zero-based, ascending).
    /// Factored distributions stay factored.
    pub fn marginal(&self, cardinalities: &[usize], positions: &[usize]) -> Result<Self> {
        match self {
            InitialDistribution::Factored(factors) => Ok(InitialDistribution::Factored(
                positions.iter().map(|&p| factors[p].clone()).collect(),
            )),
            InitialDistribution::Joint(_) => {
                let joint = self.to_joint(cardinalities)?;
                let full = StateSpace::new(cardinalities.to_vec())?;
                let sub = StateSpace::new(positions.iter().map(|&p| cardinalities[p]).collect())?;
                let mut out = vec![0.0; sub.size()];
                let mut buf = vec![0; cardinalities.len()];
                let mut sub_buf = vec![0; positions.len()];
                for (k, &pk) in joint.iter().enumerate() {
                    full.decode_into(k, &mut buf);
                    for (slot, &p) in sub_buf.iter_mut().zip(positions) {
                        *slot = buf[p];
                    }
                    out[sub.encode_unchecked(&sub_buf)] += pk;
                }
                Ok(InitialDistribution::Joint(out))
            }
        }
    }
}

/// One node of the network together with its conditional rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub id: ComponentId,
    pub name: Option<String>,
    pub cardinality: usize,
    /// Sorted by ascending id.
    pub parents: Vec<ComponentId>,
    pub scale: Scale,
    /// One local generator per parent assignment, indexed by the mixed-radix
    /// code of the assignment.
    pub rate_table: Vec<RateMatrix>,
    /// Own time-scale ratio; only allowed on fast components of a model whose
    /// fast components are segregated.
    pub epsilon: Option<f64>,
}

impl ComponentSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("X{}", self.id))
    }
}

/// A location-tagged invariant violation reported by [`CtbnModel::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtbnModel {
    pub name: Option<String>,
    pub components: Vec<ComponentSpec>,
    pub initial: InitialDistribution,
    /// Ratio of fast to slow residence times. Stored rate tables are the
    /// epsilon-independent ones; fast rates are divided by this at
    /// amalgamation and sampling time.
    pub epsilon: f64,
}

impl CtbnModel {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ComponentId> + '_ {
        self.components.iter().map(|c| c.id)
    }

    pub fn component(&self, id: ComponentId) -> Result<&ComponentSpec> {
        if id.0 == 0 || id.0 > self.components.len() {
            return Err(Error::UnknownComponent(id));
        }
        Ok(&self.components[id.index()])
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.cardinality).collect()
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(self.cardinalities())
    }

    pub fn space_of(&self, ids: &[ComponentId]) -> Result<StateSpace> {
        let radices = ids
            .iter()
            .map(|&id| self.component(id).map(|c| c.cardinality))
            .collect::<Result<Vec<_>>>()?;
        StateSpace::new(radices)
    }

    pub fn parent_space(&self, id: ComponentId) -> Result<StateSpace> {
        let c = self.component(id)?;
        self.space_of(&c.parents)
    }

    pub fn is_fast(&self, id: ComponentId) -> bool {
        self.components
            .get(id.0.wrapping_sub(1))
            .is_some_and(|c| c.scale == Scale::Fast)
    }

    pub fn fast_ids(&self) -> Vec<ComponentId> {
        self.components
            .iter()
            .filter(|c| c.scale == Scale::Fast)
            .map(|c| c.id)
            .collect()
    }

    pub fn slow_ids(&self) -> Vec<ComponentId> {
        self.components
            .iter()
            .filter(|c| c.scale == Scale::Slow)
            .map(|c| c.id)
            .collect()
    }

    /// True when no fast component has a fast parent.
    pub fn fast_components_segregated(&self) -> bool {
        self.components
            .iter()
            .filter(|c| c.scale == Scale::Fast)
            .all(|c| c.parents.iter().all(|&p| !self.is_fast(p)))
    }

    /// Multiplier applied to a component's stored rates under `epsilon`.
    pub fn rate_factor(&self, id: ComponentId, epsilon: f64) -> f64 {
        let c = &self.components[id.index()];
        match c.scale {
            Scale::Slow => 1.0,
            Scale::Fast => 1.0 / c.epsilon.unwrap_or(epsilon),
        }
    }

    /// Every invariant violation, with a location. Empty iff well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let m = self.components.len();
        let mut push =
            |location: String, message: String| out.push(Violation { location, message });

        if m == 0 {
            push("model".into(), "model has no components".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            push(
                "model.epsilon".into(),
                format!("epsilon must be positive and finite, got {}", self.epsilon),
            );
        }
        let segregated = self.fast_components_segregated();

        for (pos, c) in self.components.iter().enumerate() {
            let loc = format!("component {}", pos + 1);
            if c.id.0 != pos + 1 {
                push(
                    loc.clone(),
                    format!("id {} does not match position {}", c.id, pos + 1),
                );
            }
            if c.cardinality < 2 {
                push(
                    loc.clone(),
                    format!("cardinality {} is below 2", c.cardinality),
                );
            }
            let mut seen = BTreeSet::new();
            let mut parents_ok = true;
            for &p in &c.parents {
                if p.0 == 0 || p.0 > m {
                    push(loc.clone(), format!("parent id {p} does not exist"));
                    parents_ok = false;
                } else if p == c.id {
                    push(loc.clone(), "component is its own parent".into());
                    parents_ok = false;
                }
                if !seen.insert(p) {
                    push(loc.clone(), format!("parent {p} listed twice"));
                    parents_ok = false;
                }
            }
            if c.parents.windows(2).any(|w| w[0] > w[1]) {
                push(loc.clone(), "parents are not in ascending order".into());
            }
            if parents_ok {
                let expected: u128 = c
                    .parents
                    .iter()
                    .map(|p| self.components[p.index()].cardinality as u128)
                    .product();
                if c.rate_table.len() as u128 != expected {
                    push(
                        loc.clone(),
                        format!(
                            "rate table has {} entries, expected one per parent assignment ({expected})",
                            c.rate_table.len()
                        ),
                    );
                }
            }
            let pspace = if parents_ok {
                self.parent_space(c.id).ok()
            } else {
                None
            };
            for (k, q) in c.rate_table.iter().enumerate() {
                let where_ = match &pspace {
                    Some(s) if k < s.size() => {
                        let a = s.decode(k).unwrap_or_default();
                        format!("{loc} rate matrix for parents {a:?}")
                    }
                    _ => format!("{loc} rate matrix #{k}"),
                };
                if q.dim() != c.cardinality {
                    push(
                        where_.clone(),
                        format!(
                            "dimension {} differs from cardinality {}",
                            q.dim(),
                            c.cardinality
                        ),
                    );
                }
                for problem in q.problems(ROW_SUM_TOL) {
                    push(where_.clone(), problem);
                }
            }
            if let Some(e) = c.epsilon {
                if c.scale != Scale::Fast {
                    push(loc.clone(), "own epsilon given on a slow component".into());
                } else if !segregated {
                    push(
                        loc.clone(),
                        "own epsilon requires segregated fast components".into(),
                    );
                }
                if !(e.is_finite() && e > 0.0) {
                    push(
                        loc.clone(),
                        format!("own epsilon must be positive, got {e}"),
                    );
                }
            }
        }

        match &self.initial {
            InitialDistribution::Joint(p) => {
                let size: u128 = self
                    .components
                    .iter()
                    .map(|c| c.cardinality as u128)
                    .product();
                if p.len() as u128 != size {
                    push(
                        "initial.joint".into(),
                        format!("has {} entries, expected {size}", p.len()),
                    );
                }
                check_probabilities(&mut push, "initial.joint".into(), p);
            }
            InitialDistribution::Factored(f) => {
                if f.len() != m {
                    push(
                        "initial.factored".into(),
                        format!("has {} factors, expected {m}", f.len()),
                    );
                }
                for (pos, p) in f.iter().enumerate() {
                    let loc = format!("initial.factored[{}]", pos + 1);
                    if let Some(c) = self.components.get(pos) {
                        if p.len() != c.cardinality {
                            push(
                                loc.clone(),
                                format!("has {} entries, expected {}", p.len(), c.cardinality),
                            );
                        }
                    }
                    check_probabilities(&mut push, loc, p);
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v))
        }
    }

    pub fn check_state(&self, s: &JointState) -> Result<()> {
        if s.0.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: s.0.len(),
            });
        }
        for (c, &v) in self.components.iter().zip(&s.0) {
            if v >= c.cardinality {
                return Err(Error::StateOutOfRange {
                    component: c.id,
                    value: v,
                    cardinality: c.cardinality,
                });
            }
        }
        Ok(())
    }

    pub fn encode_state(&self, s: &JointState) -> Result<StateIndex> {
        self.check_state(s)?;
        Ok(StateIndex(self.state_space()?.encode(&s.0)?))
    }

    pub fn decode_state(&self, k: StateIndex) -> Result<JointState> {
        Ok(JointState(self.state_space()?.decode(k.0)?))
    }

    /// The sub-vector of `s` at the parents of `id`, in ascending parent order.
    pub fn restrict_to_parents(&self, id: ComponentId, s: &JointState) -> Result<Vec<usize>> {
        let c = self.component(id)?;
        self.check_state(s)?;
        Ok(c.parents.iter().map(|p| s.0[p.index()]).collect())
    }

    /// Splits `s` into its fast and slow parts, each in ascending id order.
    pub fn restrict_fast_slow(&self, s: &JointState) -> Result<(Vec<usize>, Vec<usize>)> {
        self.check_state(s)?;
        let mut fast = Vec::new();
        let mut slow = Vec::new();
        for (c, &v) in self.components.iter().zip(&s.0) {
            match c.scale {
                Scale::Fast => fast.push(v),
                Scale::Slow => slow.push(v),
            }
        }
        Ok((fast, slow))
    }

    /// Local generator of `id` given a full assignment of component values
    /// (only its parents' coordinates are read).
    pub fn local_matrix(&self, id: ComponentId, joint: &[usize]) -> &RateMatrix {
        let c = &self.components[id.index()];
        &c.rate_table[self.parent_code(c, joint)]
    }

    pub(crate) fn parent_code(&self, c: &ComponentSpec, joint: &[usize]) -> usize {
        let mut code = 0;
        for &p in &c.parents {
            code = code * self.components[p.index()].cardinality + joint[p.index()];
        }
        code
    }

    /// The initial distribution as a joint probability vector.
    pub fn initial_joint(&self) -> Result<Vec<f64>> {
        self.initial.to_joint(&self.cardinalities())
    }
}

fn check_probabilities(push: &mut impl FnMut(String, String), loc: String, p: &[f64]) {
    if let Some((k, v)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        push(loc.clone(), format!("entry {k} = {v} is not a probability"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > INITIAL_SUM_TOL {
        push(loc, format!("sums to {sum}, not 1"));
    }
}
