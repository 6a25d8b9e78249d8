//! Random models and independent numerical oracles shared by the
//! integration tests.
#![allow(dead_code)]

use ctbn_core::{ComponentId, ComponentSpec, CtbnModel, InitialDistribution, RateMatrix, Scale};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_components: usize,
    pub max_cardinality: usize,
    pub max_states: usize,
    /// Probability that a component is fast.
    pub fast_prob: f64,
    /// Fast components never have fast parents.
    pub segregated: bool,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            max_components: 5,
            max_cardinality: 3,
            max_states: 144,
            fast_prob: 0.4,
            segregated: false,
        }
    }
}

fn random_rate_matrix(rng: &mut ChaCha8Rng, k: usize) -> RateMatrix {
    let mut q = RateMatrix::zeros(k);
    for a in 0..k {
        for b in 0..k {
            if a != b {
                q.set(a, b, rng.random_range(0.1..3.0));
            }
        }
    }
    q.fix_diagonal();
    q
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// A valid model with strictly positive off-diagonal rates, so every
/// clamped subsystem is ergodic. Parents may form cycles.
pub fn random_model(seed: u64, shape: Shape) -> CtbnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=shape.max_components);
    let mut cards: Vec<usize> = Vec::new();
    let mut states = 1;
    for _ in 0..m {
        let mut c = rng.random_range(2..=shape.max_cardinality);
        while c > 2 && states * c > shape.max_states {
            c -= 1;
        }
        if states * c > shape.max_states {
            break;
        }
        states *= c;
        cards.push(c);
    }
    let m = cards.len();
    let scales: Vec<Scale> = (0..m)
        .map(|_| {
            if rng.random_bool(shape.fast_prob) {
                Scale::Fast
            } else {
                Scale::Slow
            }
        })
        .collect();
    let mut components = Vec::with_capacity(m);
    for i in 0..m {
        let parents: Vec<ComponentId> = (0..m)
            .filter(|&j| j != i)
            .filter(|&j| {
                !(shape.segregated && scales[i] == Scale::Fast && scales[j] == Scale::Fast)
            })
            .filter(|_| rng.random_bool(0.4))
            .map(ComponentId::from_index)
            .collect();
        let n_assign: usize = parents.iter().map(|p| cards[p.index()]).product();
        let rate_table = (0..n_assign)
            .map(|_| random_rate_matrix(&mut rng, cards[i]))
            .collect();
        components.push(ComponentSpec {
            id: ComponentId::from_index(i),
            name: None,
            cardinality: cards[i],
            parents,
            scale: scales[i],
            rate_table,
            epsilon: None,
        });
    }
    let initial = if rng.random_bool(0.5) {
        InitialDistribution::Joint(random_simplex(&mut rng, states))
    } else {
        InitialDistribution::Factored(cards.iter().map(|&c| random_simplex(&mut rng, c)).collect())
    };
    let model = CtbnModel {
        name: Some(format!("random-{seed}")),
        components,
        initial,
        epsilon: rng.random_range(0.1..1.0),
    };
    assert!(model.validate().is_empty(), "{:?}", model.validate());
    model
}

/// Normalized null vector of `Q^T` from the SVD (the right singular vector
/// of the smallest singular value).
pub fn null_space_stationary(q: &DMatrix<f64>) -> DVector<f64> {
    let n = q.nrows();
    let svd = q.transpose().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let mut v: DVector<f64> = v_t.row(k).transpose();
    let s = v.sum();
    v /= s;
    assert_eq!(v.len(), n);
    v
}

/// Joint generator by brute force over ordered pairs of states, for
/// comparison with the library's amalgamation.
pub fn brute_force_generator(model: &CtbnModel, epsilon: f64) -> DMatrix<f64> {
    let space = model.state_space().unwrap();
    let n = space.size();
    let mut q = DMatrix::zeros(n, n);
    for a in 0..n {
        let sa = space.decode(a).unwrap();
        for b in 0..n {
            let sb = space.decode(b).unwrap();
            let diff: Vec<usize> = (0..sa.len()).filter(|&i| sa[i] != sb[i]).collect();
            if diff.len() != 1 {
                continue;
            }
            let i = diff[0];
            let c = &model.components[i];
            let assignment: Vec<usize> = c.parents.iter().map(|p| sa[p.index()]).collect();
            let mut code = 0;
            for (p, v) in c.parents.iter().zip(&assignment) {
                code = code * model.components[p.index()].cardinality + v;
            }
            let f = if c.scale == Scale::Fast {
                1.0 / epsilon
            } else {
                1.0
            };
            q[(a, b)] = c.rate_table[code].get(sa[i], sb[i]) * f;
        }
        let row: f64 = q.row(a).sum();
        q[(a, a)] = -row;
    }
    q
}

/// Marginal of a joint vector over the coordinates at `positions`, by
/// explicit summation.
pub fn marginalize(model: &CtbnModel, p: &[f64], positions: &[usize]) -> Vec<f64> {
    let space = model.state_space().unwrap();
    let cards: Vec<usize> = positions
        .iter()
        .map(|&i| model.components[i].cardinality)
        .collect();
    let size: usize = cards.iter().product();
    let mut out = vec![0.0; size];
    for (k, &pk) in p.iter().enumerate() {
        let s = space.decode(k).unwrap();
        let mut code = 0;
        for (&i, &c) in positions.iter().zip(&cards) {
            code = code * c + s[i];
        }
        out[code] += pk;
    }
    out
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn ids(v: &[usize]) -> Vec<ComponentId> {
    v.iter().map(|&i| ComponentId(i)).collect()
}
