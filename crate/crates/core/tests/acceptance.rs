//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances are fixed here and printed with each line.

mod common;

use std::time::Instant;

use common::{l1, marginalize, null_space_stationary, random_model, Shape};
use ctbn_core::dynamics::{self, DistributionVector};
use ctbn_core::harness::builtin::{builtin, ids as builtin_ids};
use ctbn_core::harness::{
    experiment_convergence, experiment_ex51, experiment_ex52_table1, Experiment, ExperimentConfig,
};
use ctbn_core::reduction;
use ctbn_core::sampler::{sample_trajectory, StopRule};
use ctbn_core::{ComponentId, CtbnModel, RateMatrix};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ids(v: &[usize]) -> Vec<ComponentId> {
    common::ids(v)
}

fn max_abs_diff(a: &RateMatrix, b: &RateMatrix) -> f64 {
    (a.as_matrix() - b.as_matrix()).abs().max()
}

fn fifth(rows: [[f64; 2]; 2]) -> RateMatrix {
    RateMatrix::from_rows(&rows.map(|r| r.map(|x| x / 5.0).to_vec())).unwrap()
}

fn by_name<'a>(m: &'a CtbnModel, name: &str) -> &'a ctbn_core::ComponentSpec {
    m.components
        .iter()
        .find(|c| c.name.as_deref() == Some(name))
        .unwrap_or_else(|| panic!("no component {name}"))
}

fn initial(m: &CtbnModel) -> DistributionVector {
    DistributionVector::new(m.initial_joint().unwrap()).unwrap()
}

fn check(cond: bool, pass: String, fail: String) -> Outcome {
    if cond {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn reduction_ex51() -> Outcome {
    const TOL: f64 = 1e-12;
    let m = builtin("ex51").unwrap();
    let r = reduction::reduce_ctbn(&m).map_err(|e| e.to_string())?;
    let x3 = by_name(&r.model, "X3");
    let x1 = by_name(&r.model, "X1");
    let d0 = max_abs_diff(&x3.rate_table[0], &fifth([[-19.0, 19.0], [24.0, -24.0]]));
    let d1 = max_abs_diff(&x3.rate_table[1], &fifth([[-21.0, 21.0], [26.0, -26.0]]));
    let d_x1 = max_abs_diff(
        &x1.rate_table[0],
        &m.component(ComponentId(1)).unwrap().rate_table[0],
    );
    let worst = d0.max(d1).max(d_x1);
    let parents_ok = x3.parents == vec![x1.id] && x1.parents.is_empty() && r.model.len() == 2;
    let msg =
        format!("max |diff| = {worst:.1e} (tol {TOL:.0e}), X3 parents = {{X1}}: {parents_ok}");
    check(worst <= TOL && parents_ok, msg.clone(), msg)
}

fn reduction_ex52() -> Outcome {
    const TOL: f64 = 1e-12;
    let m = builtin("ex52").unwrap();
    let r = reduction::reduce_ctbn(&m).map_err(|e| e.to_string())?;
    let x5 = by_name(&r.model, "X5");
    let d0 = max_abs_diff(&x5.rate_table[0], &fifth([[-9.0, 9.0], [11.0, -11.0]]));
    let d1 = max_abs_diff(&x5.rate_table[1], &fifth([[-11.0, 11.0], [9.0, -9.0]]));
    let worst = d0.max(d1);
    let p5 = reduction::reduced_parents(&m, ComponentId(5)).unwrap();
    let p6 = reduction::reduced_parents(&m, ComponentId(6)).unwrap();
    let parents_ok = p5.into_iter().eq(ids(&[1])) && p6.into_iter().eq(ids(&[1, 2]));
    let msg = format!(
        "max |diff| = {worst:.1e} (tol {TOL:.0e}), parents 5->{{1}}, 6->{{1,2}}: {parents_ok}"
    );
    check(worst <= TOL && parents_ok, msg.clone(), msg)
}

fn simulation_ex51() -> Outcome {
    const TOL: f64 = 0.05;
    let mut cfg = ExperimentConfig::defaults(Experiment::Ex51);
    cfg.epsilons = vec![0.05];
    cfg.seeds = vec![1, 2, 3];
    cfg.max_time = Some(50_000.0);
    cfg.max_transitions = None;
    let report = experiment_ex51(&cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    let mut missing = 0;
    for run in &report.runs {
        for c in &run.cells {
            match c.relative_error {
                Some(e) => {
                    worst = worst.max(e);
                    cells += 1;
                }
                None if c.analytic > 0.0 => missing += 1,
                None => {}
            }
        }
    }
    let msg = format!(
        "eps 0.05, T 50000, seeds 1,2,3: {cells} cells, max rel err {:.2}% (tol {:.0}%), {missing} undefined",
        100.0 * worst,
        100.0 * TOL
    );
    check(worst < TOL && missing == 0 && cells == 24, msg.clone(), msg)
}

fn table1_sweep() -> Outcome {
    const TOL: f64 = 0.05;
    const MONOTONE_EPS: [f64; 5] = [1.0, 0.5, 0.25, 0.1, 0.05];
    let cfg = ExperimentConfig::defaults(Experiment::Ex52Table1);
    let report = experiment_ex52_table1(&cfg).map_err(|e| e.to_string())?;
    let row = |eps: f64| report.rows.iter().find(|r| r.epsilon == eps).unwrap();
    let mut lines = Vec::new();
    for r in &report.rows {
        lines.push(format!(
            "      eps {:<6} |0 {:.4} (limit {:.4})  |1 {:.4} (limit {:.4})",
            r.epsilon,
            r.rate_given_0.unwrap_or(f64::NAN),
            r.stationary_given_0.unwrap_or(f64::NAN),
            r.rate_given_1.unwrap_or(f64::NAN),
            r.stationary_given_1.unwrap_or(f64::NAN),
        ));
    }
    let series = |f: fn(&ctbn_core::harness::experiments::Table1Row) -> Option<f64>| {
        MONOTONE_EPS
            .iter()
            .map(|&e| f(row(e)).unwrap_or(f64::NAN))
            .collect::<Vec<_>>()
    };
    let s0 = series(|r| r.rate_given_0);
    let s1 = series(|r| r.rate_given_1);
    let increasing = |s: &[f64]| s.windows(2).all(|w| w[1] > w[0]);
    let (a0, a1) = (increasing(&s0), increasing(&s1));
    let [l0, l1] = report.limit;
    let e0 = (s0[4] - l0).abs() / l0;
    let e1 = (s1[4] - l1).abs() / l1;

    // eight X5 cells at eps 0.05, grouped by x1
    let mut worst_cell: f64 = 0.0;
    let mut n_cells = 0;
    for x1 in 0..2 {
        let group: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.epsilon == 0.05 && c.condition[0] == x1)
            .filter_map(|c| c.rate)
            .collect();
        n_cells += group.len();
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        for r in group {
            worst_cell = worst_cell.max((r - mean).abs() / mean);
        }
    }
    let ok = a0 && a1 && e0 < TOL && e1 < TOL && n_cells == 8 && worst_cell < TOL;
    let msg = format!(
        "seed 1, 10^6 transitions: increasing over eps 1..0.05: {a0}/{a1}; at 0.05 rel err {:.2}%/{:.2}% (tol {:.0}%); \
         8 cells max spread from x1-group mean {:.2}% (tol {:.0}%)\n{}",
        100.0 * e0,
        100.0 * e1,
        100.0 * TOL,
        100.0 * worst_cell,
        100.0 * TOL,
        lines.join("\n")
    );
    check(ok, msg.clone(), msg)
}

fn convergence() -> Outcome {
    let cfg = ExperimentConfig::defaults(Experiment::Convergence);
    let report = experiment_convergence(&cfg).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        let coarse = report.error_at(t, 0.1).unwrap();
        let fine = report.error_at(t, 0.01).unwrap();
        ok &= fine < coarse / 2.0;
        parts.push(format!("t={t}: {fine:.2e} vs {coarse:.2e}"));
    }
    let msg = format!(
        "L1 error eps 0.01 vs eps 0.1 (need < half): {}",
        parts.join(", ")
    );
    check(ok, msg.clone(), msg)
}

/// A random upward-closed set: the closure of a random nonempty subset.
fn random_closed_set(m: &CtbnModel, rng: &mut ChaCha8Rng) -> Vec<ComponentId> {
    let mut pick: Vec<ComponentId> = m.ids().filter(|_| rng.random_bool(0.3)).collect();
    if pick.is_empty() {
        pick.push(ComponentId::from_index(rng.random_range(0..m.len())));
    }
    reduction::upward_closure(m, &pick).unwrap().members_vec()
}

fn sub_network_error(m: &CtbnModel, eps: f64, j: &[ComponentId]) -> f64 {
    let sub = reduction::sub_ctbn(m, j).unwrap();
    let q = dynamics::amalgamate(m, eps).unwrap();
    let q_sub = dynamics::amalgamate(&sub.model, eps).unwrap();
    let positions: Vec<usize> = j.iter().map(|id| id.index()).collect();
    let mut worst: f64 = 0.0;
    for t in [0.1, 1.0] {
        let full = dynamics::solve_master(&q, &initial(m), t).unwrap();
        let part = dynamics::solve_master(&q_sub, &initial(&sub.model), t).unwrap();
        worst = worst.max(l1(
            &marginalize(m, full.as_slice(), &positions),
            part.as_slice(),
        ));
    }
    worst
}

fn sub_network_exactness() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let ex44 = builtin("ex44").unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let j = random_closed_set(&ex44, &mut rng);
        worst = worst.max(sub_network_error(&ex44, 1.0, &j));
    }
    for seed in 0..20 {
        let m = random_model(1000 + seed, Shape::default());
        let j = random_closed_set(&m, &mut rng);
        worst = worst.max(sub_network_error(&m, m.epsilon, &j));
    }
    let msg = format!(
        "ex44 (5 sets) + 20 random models, t in {{0.1, 1}}: max L1 {worst:.1e} (tol {TOL:.0e})"
    );
    check(worst <= TOL, msg.clone(), msg)
}

fn with_random_rates(m: &CtbnModel, rng: &mut ChaCha8Rng) -> CtbnModel {
    let mut out = m.clone();
    for c in &mut out.components {
        for q in &mut c.rate_table {
            let k = q.dim();
            for a in 0..k {
                for b in 0..k {
                    if a != b {
                        q.set(a, b, rng.random_range(0.1..5.0));
                    }
                }
            }
            q.fix_diagonal();
        }
    }
    out
}

fn factorization_error(m: &CtbnModel) -> f64 {
    let slow = m.slow_ids();
    let fast = m.fast_ids();
    let fast_space = m.space_of(&fast).unwrap();
    let mut worst: f64 = 0.0;
    for a in m.space_of(&slow).unwrap().iter() {
        let q = dynamics::conditional_fast_generator(m, &a).unwrap();
        let joint = dynamics::stationary_distribution(&q).unwrap();
        let mut full = vec![0; m.len()];
        for (id, v) in slow.iter().zip(&a) {
            full[id.index()] = *v;
        }
        let factors: Vec<DVector<f64>> = fast
            .iter()
            .map(|&id| null_space_stationary(m.local_matrix(id, &full).as_matrix()))
            .collect();
        for (z, &pz) in joint.as_slice().iter().enumerate() {
            let zs = fast_space.decode(z).unwrap();
            let prod: f64 = zs.iter().zip(&factors).map(|(&v, f)| f[v]).product();
            worst = worst.max((pz - prod).abs());
        }
    }
    worst
}

fn segregated_factorization() -> Outcome {
    const TOL: f64 = 1e-10;
    let base = builtin("ex42").unwrap();
    if !base.fast_components_segregated() {
        return Err("ex42 fast components are not segregated".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = factorization_error(&base);
    for _ in 0..20 {
        worst = worst.max(factorization_error(&with_random_rates(&base, &mut rng)));
    }
    let msg = format!(
        "ex42 + 20 re-rated copies, every slow state: max |diff| {worst:.1e} (tol {TOL:.0e})"
    );
    check(worst <= TOL, msg.clone(), msg)
}

fn property_suite() -> Outcome {
    let mut models: Vec<CtbnModel> = builtin_ids().map(|id| builtin(id).unwrap()).collect();
    models.extend((0..40).map(|s| random_model(2000 + s, Shape::default())));
    let mut generator_bad = 0;
    let mut g_err: f64 = 0.0;
    let mut null_err: f64 = 0.0;
    let mut rhs_err: f64 = 0.0;
    for m in &models {
        for eps in [1.0, m.epsilon, 0.01] {
            let q = dynamics::amalgamate(m, eps).unwrap();
            if !q.problems(1e-9).is_empty() {
                generator_bad += 1;
            }
            let p = initial(m);
            let rhs = dynamics::master_rhs(m, eps, p.as_slice()).unwrap();
            let direct = q.as_matrix().transpose() * DVector::from_column_slice(p.as_slice());
            for (a, b) in rhs.iter().zip(direct.iter()) {
                rhs_err = rhs_err.max((a - b).abs());
            }
        }
        let q = dynamics::amalgamate(m, m.epsilon).unwrap();
        if dynamics::is_ergodic(&q) {
            let pi = dynamics::stationary_distribution(&q).unwrap();
            null_err = null_err.max(l1(
                pi.as_slice(),
                null_space_stationary(q.as_matrix()).as_slice(),
            ));
        }
        if !m.fast_ids().is_empty() && !m.slow_ids().is_empty() {
            if let Ok(g) = reduction::projection_g(m) {
                g_err = g_err.max((&g * &g - &g).abs().max());
            }
        }
    }

    // perturbing the fast component outside the closure of X3 on ex44
    let ex44 = builtin("ex44").unwrap();
    let closure = reduction::fast_upward_closure(&ex44, &ids(&[3]))
        .unwrap()
        .members_vec();
    let ancestors: Vec<ComponentId> = reduction::last_slow_ancestors(&ex44, &ids(&[3]))
        .unwrap()
        .into_iter()
        .collect();
    let mut cor_err: f64 = 0.0;
    for scale in [0.1, 3.0, 50.0] {
        let mut perturbed = ex44.clone();
        for q in &mut perturbed.components[3].rate_table {
            *q = q.scaled(scale);
        }
        for values in ex44.space_of(&ancestors).unwrap().iter() {
            let cond: Vec<(ComponentId, usize)> = ancestors.iter().copied().zip(values).collect();
            let a = reduction::conditional_equilibrium(&ex44, &closure, &cond).unwrap();
            let b = reduction::conditional_equilibrium(&perturbed, &closure, &cond).unwrap();
            cor_err = cor_err.max(a.l1_distance(&b));
        }
    }

    let (hold_z, jump_z) = sampler_statistics();

    let ok = generator_bad == 0
        && g_err <= 1e-10
        && null_err <= 1e-10
        && rhs_err <= 1e-12
        && cor_err <= 1e-12
        && hold_z < 3.5
        && jump_z < 4.0;
    let msg = format!(
        "{} models: invalid generators {generator_bad}; G idempotence {g_err:.1e} (tol 1e-10); \
         null-space {null_err:.1e} (tol 1e-10); RHS {rhs_err:.1e} (tol 1e-12); \
         ex44 perturbation {cor_err:.1e} (tol 1e-12); sampler max |z| holding {hold_z:.2} (tol 3.5), jumps {jump_z:.2} (tol 4)",
        models.len()
    );
    check(ok, msg.clone(), msg)
}

/// Worst |z| of per-state mean holding times and per-pair jump frequencies
/// on one long ex51 path.
fn sampler_statistics() -> (f64, f64) {
    let m = builtin("ex51").unwrap();
    let eps = 0.05;
    let q = dynamics::amalgamate(&m, eps).unwrap();
    let traj = sample_trajectory(&m, eps, 11, StopRule::time(50_000.0)).unwrap();
    let space = m.state_space().unwrap();
    let n = q.dim();
    let mut time = vec![0.0; n];
    let mut visits = vec![0.0; n];
    let mut moves = vec![vec![0.0; n]; n];
    for w in traj.segments().windows(2) {
        let a = space.encode(&w[0].state.0).unwrap();
        let b = space.encode(&w[1].state.0).unwrap();
        time[a] += w[0].exit_time - w[0].entry_time;
        visits[a] += 1.0;
        moves[a][b] += 1.0;
    }
    let (mut hold, mut jump): (f64, f64) = (0.0, 0.0);
    for a in 0..n {
        let exit = q.exit_rate(a);
        let k = visits[a];
        let expected = 1.0 / exit;
        hold = hold.max(((time[a] / k - expected) / (expected / k.sqrt())).abs());
        for b in (0..n).filter(|&b| b != a) {
            let p = q.get(a, b) / exit;
            if p > 0.0 {
                jump = jump.max(((moves[a][b] - k * p) / (k * p * (1.0 - p)).sqrt()).abs());
            } else if moves[a][b] > 0.0 {
                jump = f64::INFINITY;
            }
        }
    }
    (hold, jump)
}

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored
    let criteria: [Criterion; 8] = [
        ("1 reduction ex51", reduction_ex51),
        ("2 reduction ex52", reduction_ex52),
        ("3 simulation + MLE ex51", simulation_ex51),
        ("4 eps sweep ex52", table1_sweep),
        ("5 weak convergence ex41", convergence),
        ("6 sub-network exactness", sub_network_exactness),
        ("7 segregated factorization", segregated_factorization),
        ("8 property suite", property_suite),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} [{secs:.1}s]: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
