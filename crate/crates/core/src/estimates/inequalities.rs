//! Both sides of the Sobolev-type and Caccioppoli inequalities on origin-centred cylinders,
//! reduced to the minimal constant that makes each hold.

use serde::Serialize;

use super::norms::{field_lq_norm, lp_norm_masked, pointwise_length, NodeGauge};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::lie::KolmogorovGroup;
use crate::operator::{exponents, OperatorSpec};
use crate::solver::discrete_gradient_m0;

/// `‖a‖_q, ‖b‖_q, ‖c‖_q` over `Q_r`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoefficientNorms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn coefficient_norms(op: &OperatorSpec, u: &GridFunction, mask: &[usize]) -> Result<CoefficientNorms> {
    let q = op.q;
    Ok(CoefficientNorms {
        a: field_lq_norm(&op.drift_a.iter().collect::<Vec<_>>(), q, &u.spec, mask)?,
        b: field_lq_norm(&op.drift_b.iter().collect::<Vec<_>>(), q, &u.spec, mask)?,
        c: field_lq_norm(&[&op.zero_order], q, &u.spec, mask)?,
    })
}

fn check_radii(rho: f64, r: f64) -> Result<()> {
    if !(0.0 < rho && rho < r && r <= 1.0) {
        return Err(Error::Domain(format!("need 0 < rho < r <= 1, got rho = {rho}, r = {r}")));
    }
    Ok(())
}

/// `‖v‖_{2α,Q_ρ} ≤ C(‖a‖_q + ‖b‖_q + 1 + 1/(r−ρ))‖Dv‖_{2,Q_r} + C(‖c‖_q + (ρ+1)/(ρ(r−ρ)))‖v‖_{2,Q_r}`.
#[derive(Debug, Clone, Serialize)]
pub struct SobolevMeasurement {
    pub alpha: f64,
    pub lhs: f64,
    pub grad_norm: f64,
    pub v_norm: f64,
    pub bracket_grad: f64,
    pub bracket_v: f64,
    pub coefficients: CoefficientNorms,
    /// Smallest `C` for which the inequality holds; 0 when `v ≡ 0` on `Q_ρ`.
    pub min_constant: f64,
}

pub fn sobolev_check(v: &GridFunction, op: &OperatorSpec, g: &KolmogorovGroup, rho: f64, r: f64) -> Result<SobolevMeasurement> {
    check_radii(rho, r)?;
    let ex = exponents(op.q, g.blocks.q_dim)?;
    let gauge = NodeGauge::at_origin(&v.spec, g, r, false)?;
    let (inner, outer) = (gauge.mask(rho)?, gauge.mask(r)?);
    let grad = pointwise_length(&discrete_gradient_m0(v, op.m0)?)?;
    let lhs = lp_norm_masked(v, 2.0 * ex.alpha, &inner)?.norm;
    let grad_norm = lp_norm_masked(&grad, 2.0, &outer)?.norm;
    let v_norm = lp_norm_masked(v, 2.0, &outer)?.norm;
    let coefficients = coefficient_norms(op, v, &outer)?;
    let d = r - rho;
    let bracket_grad = coefficients.a + coefficients.b + 1.0 + 1.0 / d;
    let bracket_v = coefficients.c + (rho + 1.0) / (rho * d);
    let rhs = bracket_grad * grad_norm + bracket_v * v_norm;
    let min_constant = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(SobolevMeasurement { alpha: ex.alpha, lhs, grad_norm, v_norm, bracket_grad, bracket_v, coefficients, min_constant })
}

/// `(1/λ)‖Dv‖²_{2,Q_ρ} ≤ C[|p|/(2λ(r−ρ)²) + (1 + ‖a‖_q + ‖b‖_q)/(r−ρ) + (|p|/2)‖c‖_q]‖v‖²_{2β,Q_r}`, `v = u^p`.
#[derive(Debug, Clone, Serialize)]
pub struct CaccioppoliMeasurement {
    pub p: f64,
    pub beta: f64,
    pub lhs: f64,
    pub bracket: f64,
    pub v_norm_2beta: f64,
    pub coefficients: CoefficientNorms,
    pub min_constant: f64,
    /// `|p − ½|`; the inequality degenerates as this vanishes.
    pub distance_to_half: f64,
}

pub fn caccioppoli_check(u: &GridFunction, op: &OperatorSpec, g: &KolmogorovGroup, p: f64, rho: f64, r: f64) -> Result<CaccioppoliMeasurement> {
    check_radii(rho, r)?;
    if p == 0.0 || p == 0.5 || !p.is_finite() {
        return Err(Error::Domain(format!("Caccioppoli exponent must differ from 0 and 1/2, got {p}")));
    }
    let ex = exponents(op.q, g.blocks.q_dim)?;
    let gauge = NodeGauge::at_origin(&u.spec, g, r, false)?;
    let (inner, outer) = (gauge.mask(rho)?, gauge.mask(r)?);
    if outer.iter().any(|&i| !(u.values()[i] > 0.0)) {
        return Err(Error::Domain("Caccioppoli check needs u > 0 on Q_r".into()));
    }
    let v = u.map(|x| if x > 0.0 { x.powf(p) } else { 0.0 })?;
    let grad = pointwise_length(&discrete_gradient_m0(&v, op.m0)?)?;
    let lambda = op.lambda;
    let lhs = lp_norm_masked(&grad, 2.0, &inner)?.norm.powi(2) / lambda;
    let v_norm_2beta = lp_norm_masked(&v, 2.0 * ex.beta, &outer)?.norm;
    let coefficients = coefficient_norms(op, u, &outer)?;
    let d = r - rho;
    let bracket = p.abs() / (2.0 * lambda * d * d) + (1.0 + coefficients.a + coefficients.b) / d + 0.5 * p.abs() * coefficients.c;
    let rhs = bracket * v_norm_2beta * v_norm_2beta;
    let min_constant = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(CaccioppoliMeasurement {
        p,
        beta: ex.beta,
        lhs,
        bracket,
        v_norm_2beta,
        coefficients,
        min_constant,
        distance_to_half: (p - 0.5).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimates::family::{kernel_translates, unit_box};

    fn setup() -> (OperatorSpec, KolmogorovGroup) {
        let op = OperatorSpec::langevin();
        let g = KolmogorovGroup::from_spec(&op).unwrap();
        (op, g)
    }

    #[test]
    fn zero_and_constant_inputs() {
        let (op, g) = setup();
        let spec = unit_box(2, 16).unwrap();
        let zero = GridFunction::constant(spec.clone(), 0.0).unwrap();
        assert_eq!(sobolev_check(&zero, &op, &g, 0.5, 1.0).unwrap().min_constant, 0.0);
        let one = GridFunction::constant(spec, 1.0).unwrap();
        let c = caccioppoli_check(&one, &op, &g, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.min_constant, 0.0);
        assert!(caccioppoli_check(&one, &op, &g, 0.5, 0.5, 1.0).is_err());
        assert!(caccioppoli_check(&one, &op, &g, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn sobolev_uses_wired_exponent() {
        let (op, g) = setup();
        let spec = unit_box(2, 16).unwrap();
        let u = &kernel_translates(&op, &spec, 1, 3).unwrap()[0].u;
        let s = sobolev_check(u, &op, &g, 0.5, 1.0).unwrap();
        assert!((s.alpha - 15.0 / 11.0).abs() < 1e-15);
        assert!(s.min_constant > 0.0 && s.min_constant.is_finite());
    }

    #[test]
    fn constants_are_scale_invariant() {
        let (op, g) = setup();
        let spec = unit_box(2, 16).unwrap();
        let u = &kernel_translates(&op, &spec, 1, 3).unwrap()[0].u;
        let a = caccioppoli_check(u, &op, &g, 1.0, 0.5, 1.0).unwrap().min_constant;
        let b = caccioppoli_check(&u.scale(3.0).unwrap(), &op, &g, 1.0, 0.5, 1.0).unwrap().min_constant;
        assert!((a / b - 1.0).abs() < 1e-12);
        let a = sobolev_check(u, &op, &g, 0.5, 1.0).unwrap().min_constant;
        let b = sobolev_check(&u.scale(3.0).unwrap(), &op, &g, 0.5, 1.0).unwrap().min_constant;
        assert!((a / b - 1.0).abs() < 1e-12);
    }
}
