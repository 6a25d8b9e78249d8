//! Exact sample paths by competing exponential clocks.
//!
//! In joint state `a` each component `i` carries an exit clock with rate
//! `-q^i_{a_i,a_i | parents(a)}` (divided by epsilon for fast components).
//! The holding time is exponential with the summed rate; the component that
//! moves is picked in proportion to its rate and its new local state in
//! proportion to the off-diagonal row. The joint generator is never built.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`),
//! so a seed reproduces the same path on every platform.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::model::{ComponentId, CtbnModel, InitialDistribution, JointState};

/// A single coordinate change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    /// Position within the trajectory's component list.
    pub coordinate: u32,
    pub value: u32,
}

/// Piecewise-constant path stored as an initial state plus jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    components: Vec<ComponentId>,
    cardinalities: Vec<usize>,
    initial: Vec<usize>,
    jumps: Vec<Jump>,
    horizon: f64,
    seed: Option<u64>,
}

/// One constant piece of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub state: JointState,
    pub entry_time: f64,
    pub exit_time: f64,
}

impl Trajectory {
    /// Builds a trajectory, checking that jump times increase strictly,
    /// lie in `(0, horizon]`, and that every jump changes one coordinate.
    pub fn new(
        components: Vec<ComponentId>,
        cardinalities: Vec<usize>,
        initial: Vec<usize>,
        jumps: Vec<Jump>,
        horizon: f64,
    ) -> Result<Self> {
        if components.is_empty() || components.len() != cardinalities.len() {
            return Err(Error::InvalidArgument(
                "trajectory needs one cardinality per component".into(),
            ));
        }
        if initial.len() != components.len() {
            return Err(Error::LengthMismatch {
                expected: components.len(),
                got: initial.len(),
            });
        }
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::InvalidArgument(format!("bad horizon {horizon}")));
        }
        let mut state = initial.clone();
        for (pos, &v) in state.iter().enumerate() {
            if v >= cardinalities[pos] {
                return Err(Error::StateOutOfRange {
                    component: components[pos],
                    value: v,
                    cardinality: cardinalities[pos],
                });
            }
        }
        let mut last = 0.0;
        for j in &jumps {
            let c = j.coordinate as usize;
            if j.time.is_nan() || j.time <= last || j.time > horizon {
                return Err(Error::InvalidArgument(format!(
                    "jump time {} not in ({last}, {horizon}]",
                    j.time
                )));
            }
            if c >= components.len() || j.value as usize >= cardinalities[c] {
                return Err(Error::InvalidArgument(format!(
                    "jump to value {} of coordinate {c} is out of range",
                    j.value
                )));
            }
            if state[c] == j.value as usize {
                return Err(Error::InvalidArgument(format!(
                    "jump at {} does not change coordinate {c}",
                    j.time
                )));
            }
            state[c] = j.value as usize;
            last = j.time;
        }
        Ok(Trajectory {
            components,
            cardinalities,
            initial,
            jumps,
            horizon,
            seed: None,
        })
    }

    pub fn components(&self) -> &[ComponentId] {
        &self.components
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn initial_state(&self) -> &[usize] {
        &self.initial
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn transition_count(&self) -> usize {
        self.jumps.len()
    }

    /// Seed of the sampler that produced this path, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn position_of(&self, id: ComponentId) -> Option<usize> {
        self.components.iter().position(|&c| c == id)
    }

    pub fn final_state(&self) -> Vec<usize> {
        let mut s = self.initial.clone();
        for j in &self.jumps {
            s[j.coordinate as usize] = j.value as usize;
        }
        s
    }

    /// Calls `f(state, entry_time, exit_time)` for every segment in order.
    pub fn for_each_segment(&self, mut f: impl FnMut(&[usize], f64, f64)) {
        let mut state = self.initial.clone();
        let mut entry = 0.0;
        for j in &self.jumps {
            f(&state, entry, j.time);
            state[j.coordinate as usize] = j.value as usize;
            entry = j.time;
        }
        f(&state, entry, self.horizon);
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        self.for_each_segment(|s, a, b| {
            out.push(Segment {
                state: JointState(s.to_vec()),
                entry_time: a,
                exit_time: b,
            })
        });
        out
    }

    /// CSV with a header `entry_time,x_<id>,...` and one row per segment,
    /// followed by a closing row that repeats the final state at the horizon.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["entry_time".to_string()];
        header.extend(self.components.iter().map(|c| format!("x_{c}")));
        w.write_record(&header)?;
        let mut rows: Vec<Vec<String>> = Vec::new();
        self.for_each_segment(|s, a, _| {
            let mut r = vec![a.to_string()];
            r.extend(s.iter().map(|v| v.to_string()));
            rows.push(r);
        });
        for r in rows {
            w.write_record(&r)?;
        }
        let mut closing = vec![self.horizon.to_string()];
        closing.extend(self.final_state().iter().map(|v| v.to_string()));
        w.write_record(&closing)?;
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`Trajectory::write_csv`]. Cardinalities come
    /// from the caller since the file does not carry them.
    pub fn read_csv<R: Read>(input: R, cardinalities: &[usize]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let mut components = Vec::new();
        for h in header.iter().skip(1) {
            let id = h
                .strip_prefix("x_")
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Format(format!("bad trajectory column {h:?}")))?;
            components.push(ComponentId(id));
        }
        if components.len() != cardinalities.len() {
            return Err(Error::LengthMismatch {
                expected: components.len(),
                got: cardinalities.len(),
            });
        }
        let mut rows: Vec<(f64, Vec<usize>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {s:?}")))
            };
            let t = parse(&rec[0])?;
            let state = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad state {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((t, state));
        }
        if rows.len() < 2 {
            return Err(Error::Format(
                "trajectory needs at least one segment and the closing row".into(),
            ));
        }
        let (horizon, _) = rows.pop().expect("checked length");
        let initial = rows[0].1.clone();
        let mut jumps = Vec::new();
        for w in rows.windows(2) {
            let (t, ref s) = w[1];
            let changed: Vec<usize> = (0..s.len()).filter(|&k| s[k] != w[0].1[k]).collect();
            match changed.as_slice() {
                [] => {}
                [c] => jumps.push(Jump {
                    time: t,
                    coordinate: *c as u32,
                    value: s[*c] as u32,
                }),
                _ => {
                    return Err(Error::Format(format!(
                        "row at time {t} changes {} coordinates",
                        changed.len()
                    )));
                }
            }
        }
        Trajectory::new(components, cardinalities.to_vec(), initial, jumps, horizon)
    }
}

/// When to end a simulated path. At least one bound must be set; the
/// first one reached wins.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule {
    pub max_time: Option<f64>,
    pub max_transitions: Option<u64>,
}

impl StopRule {
    pub fn time(t: f64) -> Self {
        StopRule {
            max_time: Some(t),
            max_transitions: None,
        }
    }

    pub fn transitions(n: u64) -> Self {
        StopRule {
            max_time: None,
            max_transitions: Some(n),
        }
    }

    fn check(&self) -> Result<()> {
        match (self.max_time, self.max_transitions) {
            (None, None) => Err(Error::InvalidStop(
                "need a time horizon or a transition cap".into(),
            )),
            (Some(t), _) if !(t.is_finite() && t >= 0.0) => Err(Error::InvalidStop(format!(
                "time horizon {t} is not a finite nonnegative number"
            ))),
            _ => Ok(()),
        }
    }
}

/// Exact path of the full network. Deterministic given `seed`.
pub fn sample_trajectory(
    model: &CtbnModel,
    epsilon: f64,
    seed: u64,
    stop: StopRule,
) -> Result<Trajectory> {
    let all: Vec<ComponentId> = model.ids().collect();
    sample_observed(model, epsilon, seed, stop, &all)
}

/// Samples the full network but records only the coordinates in `observed`
/// (ascending ids). Draws the same random stream as [`sample_trajectory`],
/// so the result equals `restrict_trajectory(sample_trajectory(..), observed)`
/// without storing the unobserved jumps.
pub fn sample_observed(
    model: &CtbnModel,
    epsilon: f64,
    seed: u64,
    stop: StopRule,
    observed: &[ComponentId],
) -> Result<Trajectory> {
    model.ensure_valid()?;
    stop.check()?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    check_subset(&model.ids().collect::<Vec<_>>(), observed)?;

    let m = model.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = draw_initial(model, &mut rng)?;

    let factors: Vec<f64> = model
        .ids()
        .map(|id| model.rate_factor(id, epsilon))
        .collect();
    let mut slot = vec![None; m];
    for (k, id) in observed.iter().enumerate() {
        slot[id.index()] = Some(k as u32);
    }
    let initial: Vec<usize> = observed.iter().map(|id| state[id.index()]).collect();

    let mut jumps = Vec::new();
    let mut rates = vec![0.0; m];
    let mut t = 0.0f64;
    let mut count: u64 = 0;
    let max_n = stop.max_transitions.unwrap_or(u64::MAX);
    let horizon;
    loop {
        if count >= max_n {
            horizon = t;
            break;
        }
        let mut total = 0.0;
        for (i, c) in model.components.iter().enumerate() {
            let q = model.local_matrix(c.id, &state);
            let a = state[i];
            let mut r = 0.0;
            for b in 0..c.cardinality {
                if b != a {
                    r += q.get(a, b);
                }
            }
            rates[i] = r * factors[i];
            total += rates[i];
        }
        if total <= 0.0 {
            horizon = stop.max_time.unwrap_or(t);
            break;
        }
        let dt: f64 = rng.sample::<f64, _>(Exp1) / total;
        let mut t_next = t + dt;
        if let Some(tmax) = stop.max_time {
            if t_next > tmax {
                horizon = tmax;
                break;
            }
        }
        if t_next <= t {
            t_next = t.next_up();
        }

        let mut u = rng.random::<f64>() * total;
        let mut i = m - 1;
        for (k, &r) in rates.iter().enumerate() {
            if u < r {
                i = k;
                break;
            }
            u -= r;
        }
        // Guard against landing on a zero-rate component through rounding.
        while rates[i] <= 0.0 {
            i -= 1;
        }
        let c = &model.components[i];
        let q = model.local_matrix(c.id, &state);
        let a = state[i];
        let mut v = rng.random::<f64>() * (rates[i] / factors[i]);
        let mut b_pick = None;
        for b in 0..c.cardinality {
            if b == a {
                continue;
            }
            let r = q.get(a, b);
            if r > 0.0 {
                b_pick = Some(b);
                if v < r {
                    break;
                }
                v -= r;
            }
        }
        let b = b_pick.expect("positive exit rate implies a target");
        state[i] = b;
        t = t_next;
        count += 1;
        if let Some(k) = slot[i] {
            jumps.push(Jump {
                time: t,
                coordinate: k,
                value: b as u32,
            });
        }
    }

    Ok(Trajectory {
        components: observed.to_vec(),
        cardinalities: observed
            .iter()
            .map(|id| model.components[id.index()].cardinality)
            .collect(),
        initial,
        jumps,
        horizon,
        seed: Some(seed),
    })
}

fn draw_initial(model: &CtbnModel, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    fn pick(p: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &pk) in p.iter().enumerate() {
            if pk > 0.0 {
                last_positive = k;
            }
            acc += pk;
            if u < acc {
                return k;
            }
        }
        last_positive
    }
    match &model.initial {
        InitialDistribution::Factored(f) => Ok(f.iter().map(|p| pick(p, rng.random())).collect()),
        InitialDistribution::Joint(p) => {
            let k = pick(p, rng.random());
            Ok(model.state_space()?.decode(k)?)
        }
    }
}

fn check_subset(universe: &[ComponentId], set: &[ComponentId]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("component set is empty".into()));
    }
    if set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "component set must be strictly ascending".into(),
        ));
    }
    for id in set {
        if !universe.contains(id) {
            return Err(Error::UnknownComponent(*id));
        }
    }
    Ok(())
}

/// Projects a path onto `component_set` (ascending ids), merging segments
/// whose projected states coincide.
pub fn restrict_trajectory(traj: &Trajectory, component_set: &[ComponentId]) -> Result<Trajectory> {
    check_subset(&traj.components, component_set)?;
    let positions: Vec<usize> = component_set
        .iter()
        .map(|id| traj.position_of(*id).expect("checked subset"))
        .collect();
    let mut slot = vec![None; traj.components.len()];
    for (k, &p) in positions.iter().enumerate() {
        slot[p] = Some(k);
    }
    let initial: Vec<usize> = positions.iter().map(|&p| traj.initial[p]).collect();
    let mut current = initial.clone();
    let mut jumps = Vec::new();
    for j in &traj.jumps {
        if let Some(k) = slot[j.coordinate as usize] {
            if current[k] != j.value as usize {
                current[k] = j.value as usize;
                jumps.push(Jump {
                    time: j.time,
                    coordinate: k as u32,
                    value: j.value,
                });
            }
        }
    }
    Ok(Trajectory {
        components: component_set.to_vec(),
        cardinalities: positions.iter().map(|&p| traj.cardinalities[p]).collect(),
        initial,
        jumps,
        horizon: traj.horizon,
        seed: traj.seed,
    })
}
