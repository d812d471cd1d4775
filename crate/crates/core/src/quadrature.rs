//! Gauss rules and adaptive integration.

use nalgebra::{DMatrix, SymmetricEigen};

/// A one-dimensional quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule on `[-1, 1]` via Golub–Welsch.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let off = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k, k - 1)] = off;
        jac[(k - 1, k)] = off;
    }
    golub_welsch(jac, 2.0)
}

/// Gauss–Hermite rule for the standard normal weight `e^{-x²/2}/√(2π)`
/// (probabilists' convention): weights sum to one.
pub fn gauss_hermite_prob(n: usize) -> Rule {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jac[(k, k - 1)] = off;
        jac[(k - 1, k)] = off;
    }
    golub_welsch(jac, 1.0)
}

fn golub_welsch(jac: DMatrix<f64>, mu0: f64) -> Rule {
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..eig.eigenvalues.len())
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to kill rounding asymmetry
    let n = pairs.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]` with `panels` panels.
pub fn composite_gl<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize, rule: &Rule) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    acc * 0.5 * h
}

/// Adaptive Gauss–Legendre integration of a matrix-valued integrand.
///
/// Each interval is accepted when the single-panel and two-panel estimates
/// agree to `abs_tol` scaled by the interval's share of `[a, b]`.
pub fn adaptive_gl_matrix<F>(f: &F, a: f64, b: f64, order: usize, abs_tol: f64) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let rule = gauss_legendre(order);
    let whole = panel(f, a, b, &rule);
    recurse(f, a, b, &rule, whole, abs_tol, 0)
}

fn panel<F: Fn(f64) -> DMatrix<f64>>(f: &F, a: f64, b: f64, rule: &Rule) -> DMatrix<f64> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc: Option<DMatrix<f64>> = None;
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(mid + half * x) * (w * half);
        acc = Some(match acc {
            Some(s) => s + v,
            None => v,
        });
    }
    acc.expect("rule has at least one node")
}

fn recurse<F: Fn(f64) -> DMatrix<f64>>(
    f: &F,
    a: f64,
    b: f64,
    rule: &Rule,
    whole: DMatrix<f64>,
    tol: f64,
    depth: usize,
) -> DMatrix<f64> {
    let m = 0.5 * (a + b);
    let left = panel(f, a, m, rule);
    let right = panel(f, m, b, rule);
    let split = &left + &right;
    let err = (&split - &whole).amax();
    if err <= tol || depth >= 40 {
        return split;
    }
    recurse(f, a, m, rule, left, 0.5 * tol, depth + 1)
        + recurse(f, m, b, rule, right, 0.5 * tol, depth + 1)
}
