//! Lebesgue norms of grid functions over cylinders, evaluated in the log domain.
//!
//! Membership of a node in `Q_ρ(z₀)` is monotone in `ρ`: with `w = z₀⁻¹ ∘ z`, the node lies in
//! `Q_ρ(z₀)` iff `ρ > gauge(w) = max(ρ_x(w), |t_w|^{1/2})`, where `ρ_x` solves
//! `Σ w_i² / ρ^{2α_i} = 1`. One gauge pass therefore serves every radius.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::lie::{hom_norm_parts, GroupPoint, KolmogorovGroup};
use crate::operator::CoefficientField;

/// Nodes of a grid with their cylinder gauge relative to a centre, kept when below `r_max`.
#[derive(Debug, Clone)]
pub struct NodeGauge {
    pub spec: GridSpec,
    pub one_sided: bool,
    nodes: Vec<usize>,
    gauge: Vec<f64>,
}

impl NodeGauge {
    pub fn new(spec: &GridSpec, g: &KolmogorovGroup, center: &GroupPoint, r_max: f64, one_sided: bool) -> Result<Self> {
        if spec.n() != g.dim() || center.dim() != g.dim() {
            return Err(Error::Dimension { expected: g.dim(), got: spec.n() });
        }
        let exps = &g.blocks.exponents;
        let pairs: Vec<(usize, f64)> = (0..spec.len())
            .into_par_iter()
            .filter_map(|flat| {
                let (x, t) = spec.node(flat);
                let z = GroupPoint { x: nalgebra::DVector::from_vec(x), t };
                let w = g.reduce(&z, center);
                if one_sided && !(w.t < 0.0) {
                    return None;
                }
                let rx = hom_norm_parts(w.x.as_slice(), 0.0, exps);
                let gauge = rx.max(w.t.abs().sqrt());
                (gauge < r_max).then_some((flat, gauge))
            })
            .collect();
        let (nodes, gauge) = pairs.into_iter().unzip();
        Ok(NodeGauge { spec: spec.clone(), one_sided, nodes, gauge })
    }

    /// Origin-centred gauge.
    pub fn at_origin(spec: &GridSpec, g: &KolmogorovGroup, r_max: f64, one_sided: bool) -> Result<Self> {
        Self::new(spec, g, &GroupPoint::origin(g.dim()), r_max, one_sided)
    }

    /// Flat indices of the nodes inside the open cylinder of radius `rho`.
    pub fn mask(&self, rho: f64) -> Result<Vec<usize>> {
        let out: Vec<usize> = self.nodes.iter().zip(&self.gauge).filter(|(_, &g)| g < rho).map(|(&i, _)| i).collect();
        if out.is_empty() {
            return Err(Error::EmptyDomain { resolution: self.spec.res.clone() });
        }
        Ok(out)
    }

    pub fn count(&self, rho: f64) -> usize {
        self.gauge.iter().filter(|&&g| g < rho).count()
    }
}

/// `log Σ exp(v_i)` ignoring `-∞` entries; `-∞` when every entry is.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(vals: I) -> f64 {
    let v: Vec<f64> = vals.into_iter().filter(|x| *x > f64::NEG_INFINITY).collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log ∫_mask exp(s·ℓ)` for log-values `ℓ` at the nodes.
pub fn log_integral_pow(log_vals: &[f64], s: f64, mask: &[usize], cell_volume: f64) -> f64 {
    log_sum_exp(mask.iter().map(|&i| s * log_vals[i])) + cell_volume.ln()
}

/// `ln|u|` nodewise.
pub fn log_abs(u: &GridFunction) -> Vec<f64> {
    u.values().iter().map(|v| v.abs().ln()).collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LpNorm {
    pub p: f64,
    /// `(∫ |u|^p)^{1/p}`.
    pub norm: f64,
    /// `∫ |u|^p`.
    pub integral: f64,
    pub log_integral: f64,
    pub nodes: usize,
}

/// Midpoint `L^p` norm over the masked nodes. Negative or fractional `p` needs `u > 0` there.
pub fn lp_norm_masked(u: &GridFunction, p: f64, mask: &[usize]) -> Result<LpNorm> {
    if p == 0.0 || !p.is_finite() {
        return Err(Error::Domain(format!("norm exponent must be finite and nonzero, got {p}")));
    }
    if mask.is_empty() {
        return Err(Error::EmptyDomain { resolution: u.spec.res.clone() });
    }
    if p < 0.0 && mask.iter().any(|&i| !(u.values()[i] > 0.0)) {
        return Err(Error::Domain("negative exponent needs a strictly positive function".into()));
    }
    let logs = log_abs(u);
    let li = log_integral_pow(&logs, p, mask, u.spec.cell_volume());
    Ok(LpNorm { p, norm: (li / p).exp(), integral: li.exp(), log_integral: li, nodes: mask.len() })
}

/// `‖u‖_{L^p(Q_r(center))}` with open-cylinder membership.
pub fn lp_norm_cylinder(u: &GridFunction, p: f64, g: &KolmogorovGroup, center: &GroupPoint, r: f64) -> Result<LpNorm> {
    let gauge = NodeGauge::new(&u.spec, g, center, r, false)?;
    lp_norm_masked(u, p, &gauge.mask(r)?)
}

pub fn masked_max(u: &GridFunction, mask: &[usize]) -> f64 {
    mask.iter().map(|&i| u.values()[i]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn masked_min(u: &GridFunction, mask: &[usize]) -> f64 {
    mask.iter().map(|&i| u.values()[i]).fold(f64::INFINITY, f64::min)
}

/// `‖F‖_{L^q}` of a vector of coefficient fields (pointwise Euclidean length) on the mask.
pub fn field_lq_norm(fields: &[&CoefficientField], q: f64, spec: &GridSpec, mask: &[usize]) -> Result<f64> {
    if fields.iter().all(|f| f.is_zero()) {
        return Ok(0.0);
    }
    let vals: Vec<f64> = mask
        .par_iter()
        .map(|&i| {
            let (x, t) = spec.node(i);
            let mut s = 0.0;
            for f in fields {
                let v = f.eval(&x, t)?;
                s += v * v;
            }
            Ok(s.sqrt())
        })
        .collect::<Result<_>>()?;
    if q.is_infinite() {
        return Ok(vals.iter().cloned().fold(0.0, f64::max));
    }
    let logs: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    let all: Vec<usize> = (0..logs.len()).collect();
    Ok((log_integral_pow(&logs, q, &all, spec.cell_volume()) / q).exp())
}

/// Pointwise Euclidean length of a list of grid functions.
pub fn pointwise_length(parts: &[GridFunction]) -> Result<GridFunction> {
    let first = parts.first().ok_or_else(|| Error::Shape("no components".into()))?;
    let vals: Vec<f64> = (0..first.spec.len())
        .map(|i| parts.iter().map(|p| p.values()[i].powi(2)).sum::<f64>().sqrt())
        .collect();
    GridFunction::new(first.spec.clone(), vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{mc_cylinder_volume, Cylinder};
    use crate::operator::OperatorSpec;

    fn langevin_group() -> KolmogorovGroup {
        KolmogorovGroup::from_spec(&OperatorSpec::langevin()).unwrap()
    }

    #[test]
    fn gauge_membership_matches_cylinder_test() {
        let g = langevin_group();
        let spec = GridSpec::uniform(vec![-1.5, -1.5, -1.0], vec![1.5, 1.5, 1.0], 20).unwrap();
        let center = GroupPoint::from_slice(&[0.2, -0.1], 0.1).unwrap();
        let gauge = NodeGauge::new(&spec, &g, &center, 1.0, false).unwrap();
        for rho in [0.5, 0.8, 1.0] {
            let cyl = Cylinder::new(center.clone(), rho).unwrap();
            let expected: Vec<usize> = (0..spec.len())
                .filter(|&i| {
                    let (x, t) = spec.node(i);
                    cyl.contains(&g, &GroupPoint::from_slice(&x, t).unwrap())
                })
                .collect();
            assert_eq!(gauge.mask(rho).unwrap(), expected);
        }
        let one = NodeGauge::new(&spec, &g, &center, 1.0, true).unwrap();
        let cyl = Cylinder::new(center.clone(), 1.0).unwrap();
        for i in one.mask(1.0).unwrap() {
            let (x, t) = spec.node(i);
            assert!(cyl.one_sided_contains(&g, &GroupPoint::from_slice(&x, t).unwrap()));
        }
    }

    #[test]
    fn unit_function_norm_is_measure_power() {
        let g = langevin_group();
        let spec = GridSpec::uniform(vec![-1.0; 3], vec![1.0; 3], 64).unwrap();
        let u = GridFunction::constant(spec, 1.0).unwrap();
        let cyl = Cylinder::unit_at_origin(2, 1.0).unwrap();
        let mc = mc_cylinder_volume(&g, &cyl, false, 200_000, 3);
        for p in [1.0, 2.0, 3.5] {
            let nrm = lp_norm_cylinder(&u, p, &g, &GroupPoint::origin(2), 1.0).unwrap();
            assert!((nrm.norm / mc.powf(1.0 / p) - 1.0).abs() < 0.02, "p={p}: {} vs {}", nrm.norm, mc);
        }
    }

    #[test]
    fn homogeneity_and_empty_domain() {
        let g = langevin_group();
        let spec = GridSpec::uniform(vec![-1.0; 3], vec![1.0; 3], 16).unwrap();
        let u = GridFunction::from_fn(spec.clone(), |x, t| 1.0 + x[0] * x[0] + t.abs()).unwrap();
        let o = GroupPoint::origin(2);
        let a = lp_norm_cylinder(&u, 2.0, &g, &o, 1.0).unwrap().norm;
        let b = lp_norm_cylinder(&u.scale(2.0).unwrap(), 2.0, &g, &o, 1.0).unwrap().norm;
        assert!((b - 2.0 * a).abs() <= 1e-14 * b);
        assert!(matches!(lp_norm_cylinder(&u, 2.0, &g, &o, 0.01), Err(Error::EmptyDomain { .. })));
    }

    #[test]
    fn power_mean_is_monotone() {
        let g = langevin_group();
        let spec = GridSpec::uniform(vec![-1.0; 3], vec![1.0; 3], 16).unwrap();
        let u = GridFunction::from_fn(spec.clone(), |x, t| (2.0 + (3.0 * x[0]).sin() + x[1] * t).exp()).unwrap();
        let gauge = NodeGauge::at_origin(&spec, &g, 1.0, false).unwrap();
        let mask = gauge.mask(1.0).unwrap();
        let meas = mask.len() as f64 * spec.cell_volume();
        let mut prev = 0.0;
        for s in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let m = lp_norm_masked(&u, s, &mask).unwrap().norm / meas.powf(1.0 / s);
            assert!(m >= prev * (1.0 - 1e-14));
            prev = m;
        }
        assert!(prev <= masked_max(&u, &mask));
    }
}
