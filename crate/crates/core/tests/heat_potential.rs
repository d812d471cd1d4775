//! Heat-kernel potentials in one dimension against Gaussian convolution oracles.
//!
//! For `f(x, t) = exp(−x²/(4σ))` on `t ≥ 0` the potential is
//! `Γ(f)(x, t) = ∫₀ᵗ √(σ/(s+σ)) exp(−x²/(4(s+σ))) ds`; the gradient potential is its x-derivative.

use kolmo::quadrature::gauss_legendre;
use kolmo::{GridFunction, GridSpec, GroupPoint, KernelEvaluator, OperatorSpec};

const SIGMA: f64 = 0.05;

fn oracle(x: f64, t: f64) -> (f64, f64) {
    let rule = gauss_legendre(64);
    let (mut v, mut d) = (0.0, 0.0);
    for (u, w) in rule.nodes.iter().zip(&rule.weights) {
        let s = 0.5 * t * (u + 1.0);
        let w = 0.5 * t * w;
        let a = s + SIGMA;
        let g = (SIGMA / a).sqrt() * (-x * x / (4.0 * a)).exp();
        v += w * g;
        d += w * g * (-x / (2.0 * a));
    }
    (v, d)
}

fn density(res: usize) -> GridFunction {
    let spec = GridSpec::uniform(vec![-2.0, 0.0], vec![2.0, 1.0], res).unwrap();
    GridFunction::from_fn(spec, |x, _| (-x[0] * x[0] / (4.0 * SIGMA)).exp()).unwrap()
}

#[test]
fn closed_form_at_the_centre() {
    let (v, d) = oracle(0.0, 0.75);
    let exact = 2.0 * SIGMA.sqrt() * ((0.75 + SIGMA).sqrt() - SIGMA.sqrt());
    assert!((v - exact).abs() < 1e-13, "{v} vs {exact}");
    assert_eq!(d, 0.0);
}

#[test]
fn potential_and_gradient_converge_to_the_oracle() {
    let ev = KernelEvaluator::from_spec(&OperatorSpec::heat(1).unwrap()).unwrap();
    let points = [(0.0, 0.75), (0.3, 0.5), (-0.45, 1.0)];
    let mut previous = f64::INFINITY;
    for res in [33, 65] {
        let f = density(res);
        let mut worst: f64 = 0.0;
        for &(x, t) in &points {
            let z = GroupPoint::from_slice(&[x], t).unwrap();
            let pv = ev.potentials(&[&f], &z, true).unwrap().swap_remove(0);
            let (v, d) = oracle(x, t);
            worst = worst.max((pv.value - v).abs() / v).max((pv.gradient[0] - d).abs() / v);
        }
        assert!(worst < previous, "res {res}: {worst} did not improve on {previous}");
        previous = worst;
    }
    assert!(previous < 1e-4, "finest error {previous}");
}
