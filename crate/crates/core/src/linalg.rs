//! Dense numerical kernels shared by the dynamics and reduction modules.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;

/// Strongly connected components of the directed graph with an edge
/// `i -> j` whenever `q[(i, j)] > 0` for `i != j`. Components are returned
/// with sorted members, ordered by their smallest member.
pub fn communicating_classes(q: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = q.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = kosaraju_scc(&g)
        .into_iter()
        .map(|c| {
            let mut m: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    classes.sort_unstable_by_key(|c| c[0]);
    classes
}

/// Solves `Q^T pi = 0, sum(pi) = 1` by replacing the last balance equation
/// with the normalization row.
pub fn stationary_dense(q: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    Some(clean_distribution(x))
}

/// Power iteration on the uniformized chain `P = I + Q / lambda`.
pub fn stationary_power(q: &DMatrix<f64>, tol: f64, max_iter: usize) -> DVector<f64> {
    let n = q.nrows();
    let lambda = (0..n).map(|i| -q[(i, i)]).fold(0.0, f64::max) * 1.05;
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    if lambda <= 0.0 {
        return pi;
    }
    let qt = q.transpose();
    for _ in 0..max_iter {
        let next = &pi + (&qt * &pi) / lambda;
        let diff = (&next - &pi).abs().sum();
        pi = next;
        if diff < tol {
            break;
        }
    }
    clean_distribution(pi)
}

fn clean_distribution(mut x: DVector<f64>) -> DVector<f64> {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s = x.sum();
    x / s
}

/// `exp(A)` (Pade approximation with scaling and squaring).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().exp()
}

/// Real parts of the eigenvalues, sorted in descending order.
pub fn eigenvalue_real_parts(q: &DMatrix<f64>) -> Vec<f64> {
    let mut re: Vec<f64> = q
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .collect();
    re.sort_by(|a, b| b.total_cmp(a));
    re
}
