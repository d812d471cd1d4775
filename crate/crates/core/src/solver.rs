//! Solution families on grids: exact kernel translates, explicit finite-difference
//! solutions with variable coefficients, and the discrete operators used to check them.
//!
//! The discrete form of `L` is
//!
//! ```text
//! L_h u = Σ_{i,j<m0} D_i(a_ij D_j u) + Σ_i v_i D_i u − Σ_{i<m0} D_i(a_i u) + c u − D_t u,
//! v = Bx + (b, 0)
//! ```
//!
//! With [`Scheme::Upwind`] the transport differences follow the sign of `v_i` and `D_t` is a
//! backward difference; the scheme is monotone (non-decreasing in every neighbour value) when
//! `a_i ≡ 0`. [`Scheme::Centered`] uses centred differences everywhere and is second order.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::kernel::KernelEvaluator;
use crate::lie::GroupPoint;
use crate::operator::{CoefficientField, OperatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Upwind,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    KernelTranslate,
    KernelMixture,
    FdCauchy,
}

/// `u(z) = Σ c_k Γ(z, ζ_k)` with poles `ζ_k` and weights `c_k > 0`.
#[derive(Debug, Clone)]
pub struct SolutionFamily {
    pub kind: FamilyKind,
    pub poles: Vec<GroupPoint>,
    pub weights: Vec<f64>,
}

/// Poles must precede the box by at least this much time.
pub const POLE_MARGIN: f64 = 0.1;

impl SolutionFamily {
    pub fn translate(pole: GroupPoint) -> Self {
        SolutionFamily { kind: FamilyKind::KernelTranslate, poles: vec![pole], weights: vec![1.0] }
    }

    pub fn mixture(poles: Vec<GroupPoint>, weights: Vec<f64>) -> Self {
        SolutionFamily { kind: FamilyKind::KernelMixture, poles, weights }
    }
}

/// Samples a kernel family on a grid; all poles must lie at least [`POLE_MARGIN`] before the box.
pub fn sample_kernel_solution(ev: &KernelEvaluator, family: &SolutionFamily, spec: &GridSpec) -> Result<GridFunction> {
    if family.poles.len() != family.weights.len() || family.poles.is_empty() {
        return Err(Error::Shape("family needs one positive weight per pole".into()));
    }
    if family.weights.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Domain("family weights must be positive".into()));
    }
    let t_min = spec.lo[spec.n()];
    for p in &family.poles {
        if p.dim() != spec.n() {
            return Err(Error::Dimension { expected: spec.n(), got: p.dim() });
        }
        if !(p.t < t_min - POLE_MARGIN) {
            return Err(Error::Domain(format!(
                "pole at t = {} must precede the box start {t_min} by at least {POLE_MARGIN}",
                p.t
            )));
        }
    }
    GridFunction::try_from_fn(spec.clone(), |x, t| {
        let z = GroupPoint::from_slice(x, t)?;
        let mut acc = 0.0;
        for (p, c) in family.poles.iter().zip(&family.weights) {
            acc += c * ev.gamma(&z, p)?;
        }
        Ok(acc)
    })
}

/// Boundary rule for the explicit solver.
#[derive(Clone)]
pub enum Boundary {
    /// Ghost values copy the nearest boundary node.
    Clamped,
    /// Ghost values from a prescribed function of `(x, t)`.
    Dirichlet(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Clamped => write!(f, "Clamped"),
            Boundary::Dirichlet(_) => write!(f, "Dirichlet(<fn>)"),
        }
    }
}

/// Coefficient values on the nodes of one time slice; `None` for identically zero fields.
struct SliceCoeffs {
    a: Vec<Vec<Option<Vec<f64>>>>,
    drift_a: Vec<Option<Vec<f64>>>,
    drift_b: Vec<Option<Vec<f64>>>,
    c: Option<Vec<f64>>,
}

fn sample_field(f: &CoefficientField, xs: &[Vec<f64>], t: f64) -> Result<Option<Vec<f64>>> {
    if f.is_zero() {
        return Ok(None);
    }
    if let Some(v) = f.as_constant() {
        return Ok(Some(vec![v; xs.len()]));
    }
    xs.par_iter().map(|x| f.eval(x, t)).collect::<Result<Vec<f64>>>().map(Some)
}

impl SliceCoeffs {
    fn sample(op: &OperatorSpec, xs: &[Vec<f64>], t: f64) -> Result<Self> {
        let m0 = op.m0;
        let mut a = Vec::with_capacity(m0);
        for i in 0..m0 {
            let mut row = Vec::with_capacity(m0);
            for j in 0..m0 {
                row.push(sample_field(&op.diffusion[i][j], xs, t)?);
            }
            a.push(row);
        }
        Ok(SliceCoeffs {
            a,
            drift_a: op.drift_a.iter().map(|f| sample_field(f, xs, t)).collect::<Result<_>>()?,
            drift_b: op.drift_b.iter().map(|f| sample_field(f, xs, t)).collect::<Result<_>>()?,
            c: sample_field(&op.zero_order, xs, t)?,
        })
    }

    fn time_dependent(op: &OperatorSpec) -> bool {
        op.diffusion.iter().flatten().any(CoefficientField::depends_on_time)
            || op.drift_a.iter().any(CoefficientField::depends_on_time)
            || op.drift_b.iter().any(CoefficientField::depends_on_time)
            || op.zero_order.depends_on_time()
    }
}

/// Spatial part of `L_h` on one time slice.
struct SpatialOp<'a> {
    n: usize,
    m0: usize,
    res: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    b: &'a DMatrix<f64>,
    scheme: Scheme,
    xs: Vec<Vec<f64>>,
    lo: Vec<f64>,
}

impl<'a> SpatialOp<'a> {
    fn new(spec: &GridSpec, b: &'a DMatrix<f64>, m0: usize, scheme: Scheme) -> Self {
        let n = spec.n();
        let res = spec.res[..n].to_vec();
        let mut strides = vec![1; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * res[k + 1];
        }
        let xs = (0..spec.slice_len()).map(|s| spec.spatial_node(s)).collect();
        SpatialOp {
            n,
            m0,
            res,
            h: (0..n).map(|k| spec.h(k)).collect(),
            strides,
            b,
            scheme,
            xs,
            lo: spec.lo[..n].to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.xs.len()
    }

    fn index(&self, mut s: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        for k in (0..self.n).rev() {
            idx[k] = s % self.res[k];
            s /= self.res[k];
        }
        idx
    }

    /// Value at `idx + Σ offsets`; out-of-range positions use the boundary rule.
    fn at(&self, u: &[f64], idx: &[usize], offs: &[(usize, isize)], ghost: &Ghost) -> f64 {
        let mut flat = 0isize;
        let mut outside = false;
        let mut pos: [isize; 8] = [0; 8];
        for k in 0..self.n {
            pos[k] = idx[k] as isize;
        }
        for &(a, d) in offs {
            pos[a] += d;
        }
        for k in 0..self.n {
            let r = self.res[k] as isize;
            if pos[k] < 0 || pos[k] >= r {
                outside = true;
            }
            flat += pos[k].clamp(0, r - 1) * self.strides[k] as isize;
        }
        if outside {
            if let Ghost::Dirichlet(g, t) = ghost {
                let x: Vec<f64> = (0..self.n).map(|k| self.lo[k] + (pos[k] as f64 + 0.5) * self.h[k]).collect();
                return g(&x, *t);
            }
        }
        u[flat as usize]
    }

    /// Coefficient value at a neighbour (clamped index).
    fn coef_at(&self, c: &[f64], idx: &[usize], offs: &[(usize, isize)]) -> f64 {
        let mut flat = 0isize;
        for k in 0..self.n {
            let mut p = idx[k] as isize;
            for &(a, d) in offs {
                if a == k {
                    p += d;
                }
            }
            flat += p.clamp(0, self.res[k] as isize - 1) * self.strides[k] as isize;
        }
        c[flat as usize]
    }

    fn apply(&self, u: &[f64], coef: &SliceCoeffs, ghost: &Ghost, out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(s, o)| {
            *o = self.apply_at(u, coef, ghost, s);
        });
    }

    fn apply_at(&self, u: &[f64], coef: &SliceCoeffs, ghost: &Ghost, s: usize) -> f64 {
        let idx = self.index(s);
        let x = &self.xs[s];
        let u0 = u[s];
        let mut acc = 0.0;
        for i in 0..self.m0 {
            for j in 0..self.m0 {
                let Some(a) = &coef.a[i][j] else { continue };
                if i == j {
                    let ap = 0.5 * (a[s] + self.coef_at(a, &idx, &[(i, 1)]));
                    let am = 0.5 * (a[s] + self.coef_at(a, &idx, &[(i, -1)]));
                    let up = self.at(u, &idx, &[(i, 1)], ghost);
                    let um = self.at(u, &idx, &[(i, -1)], ghost);
                    acc += (ap * (up - u0) - am * (u0 - um)) / (self.h[i] * self.h[i]);
                } else {
                    let fp = self.coef_at(a, &idx, &[(i, 1)])
                        * (self.at(u, &idx, &[(i, 1), (j, 1)], ghost) - self.at(u, &idx, &[(i, 1), (j, -1)], ghost));
                    let fm = self.coef_at(a, &idx, &[(i, -1)])
                        * (self.at(u, &idx, &[(i, -1), (j, 1)], ghost) - self.at(u, &idx, &[(i, -1), (j, -1)], ghost));
                    acc += (fp - fm) / (4.0 * self.h[i] * self.h[j]);
                }
            }
        }
        for i in 0..self.n {
            let mut v = 0.0;
            for j in 0..self.n {
                v += self.b[(i, j)] * x[j];
            }
            if i < self.m0 {
                if let Some(bi) = &coef.drift_b[i] {
                    v += bi[s];
                }
            }
            if v == 0.0 {
                continue;
            }
            let d = match self.scheme {
                Scheme::Upwind if v > 0.0 => (self.at(u, &idx, &[(i, 1)], ghost) - u0) / self.h[i],
                Scheme::Upwind => (u0 - self.at(u, &idx, &[(i, -1)], ghost)) / self.h[i],
                Scheme::Centered => {
                    (self.at(u, &idx, &[(i, 1)], ghost) - self.at(u, &idx, &[(i, -1)], ghost)) / (2.0 * self.h[i])
                }
            };
            acc += v * d;
        }
        for i in 0..self.m0 {
            if let Some(ai) = &coef.drift_a[i] {
                let p = self.coef_at(ai, &idx, &[(i, 1)]) * self.at(u, &idx, &[(i, 1)], ghost);
                let m = self.coef_at(ai, &idx, &[(i, -1)]) * self.at(u, &idx, &[(i, -1)], ghost);
                acc -= (p - m) / (2.0 * self.h[i]);
            }
        }
        if let Some(c) = &coef.c {
            acc += c[s] * u0;
        }
        acc
    }
}

enum Ghost<'a> {
    Clamped,
    Dirichlet(&'a (dyn Fn(&[f64], f64) -> f64 + Send + Sync), f64),
}

/// Output of [`fd_solve_cauchy`].
#[derive(Debug, Clone)]
pub struct FdSolution {
    pub solution: GridFunction,
    pub positivity_lost: bool,
    pub dt: f64,
    pub substeps: usize,
}

/// Largest time step keeping the explicit scheme monotone on `spec`:
/// `1 / (2λ Σ_{i<m0} h_i⁻² + Σ_i max|v_i| / h_i + max(−c, 0))`.
pub fn admissible_dt(op: &OperatorSpec, spec: &GridSpec) -> Result<f64> {
    let n = spec.n();
    let xs: Vec<Vec<f64>> = (0..spec.slice_len()).map(|s| spec.spatial_node(s)).collect();
    let times: Vec<f64> = if SliceCoeffs::time_dependent(op) {
        spec.times()
    } else {
        vec![spec.lo[n]]
    };
    let mut vmax = vec![0.0f64; n];
    let mut cneg = 0.0f64;
    for &t in &times {
        let coef = SliceCoeffs::sample(op, &xs, t)?;
        for (s, x) in xs.iter().enumerate() {
            for i in 0..n {
                let mut v: f64 = (0..n).map(|j| op.b[(i, j)] * x[j]).sum();
                if i < op.m0 {
                    if let Some(b) = &coef.drift_b[i] {
                        v += b[s];
                    }
                }
                vmax[i] = vmax[i].max(v.abs());
            }
            if let Some(c) = &coef.c {
                cneg = cneg.max(-c[s]);
            }
        }
    }
    let diff: f64 = (0..op.m0).map(|i| 2.0 * op.lambda / spec.h(i).powi(2)).sum();
    let transport: f64 = (0..n).map(|i| vmax[i] / spec.h(i)).sum();
    Ok(1.0 / (diff + transport + cneg))
}

/// Explicit time marching of `∂_t u = (L_h + ∂_t) u` from `t = spec.lo[N]`, recording the solution at
/// the cell-centred time nodes of `spec`.
pub fn fd_solve_cauchy(
    op: &OperatorSpec,
    spec: &GridSpec,
    initial: &[f64],
    dt: f64,
    boundary: &Boundary,
) -> Result<FdSolution> {
    op.check_shapes()?;
    let n = spec.n();
    if n != op.n {
        return Err(Error::Dimension { expected: op.n, got: n });
    }
    if initial.len() != spec.slice_len() {
        return Err(Error::Dimension { expected: spec.slice_len(), got: initial.len() });
    }
    let admissible = admissible_dt(op, spec)?;
    if !(dt > 0.0) || dt > admissible {
        return Err(Error::Cfl { dt, admissible });
    }
    let sop = SpatialOp::new(spec, &op.b, op.m0, Scheme::Upwind);
    let time_dep = SliceCoeffs::time_dependent(op);
    let mut t = spec.lo[n];
    let mut coef = SliceCoeffs::sample(op, &sop.xs, t)?;
    let mut u = initial.to_vec();
    let mut lu = vec![0.0; u.len()];
    let rt = spec.res[n];
    let mut values = vec![0.0; spec.len()];
    let mut substeps = 0;
    let mut positivity_lost = initial.iter().any(|&v| v < 0.0);
    for k in 0..rt {
        let target = spec.coord(n, k);
        while t < target {
            let step = dt.min(target - t);
            if time_dep && substeps > 0 {
                coef = SliceCoeffs::sample(op, &sop.xs, t)?;
            }
            let ghost = match boundary {
                Boundary::Clamped => Ghost::Clamped,
                Boundary::Dirichlet(g) => Ghost::Dirichlet(g.as_ref(), t),
            };
            sop.apply(&u, &coef, &ghost, &mut lu);
            for (ui, li) in u.iter_mut().zip(&lu) {
                *ui += step * li;
            }
            t = if target - t <= dt { target } else { t + step };
            substeps += 1;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("explicit scheme diverged before t = {target}")));
        }
        positivity_lost |= u.iter().any(|&v| v < 0.0);
        for (s, v) in u.iter().enumerate() {
            values[s * rt + k] = *v;
        }
    }
    Ok(FdSolution { solution: GridFunction::new(spec.clone(), values)?, positivity_lost, dt, substeps })
}

/// `D_{m0} u`: centred differences inside, one-sided at faces.
pub fn discrete_gradient_m0(u: &GridFunction, m0: usize) -> Result<Vec<GridFunction>> {
    (0..m0).map(|a| axis_derivative(u, a, Scheme::Centered, None)).collect()
}

/// First difference along `axis`. With `Scheme::Upwind` and a direction sign per node, the
/// forward difference is used where the sign is positive and the backward one elsewhere.
fn axis_derivative(u: &GridFunction, axis: usize, scheme: Scheme, sign: Option<&(dyn Fn(usize) -> f64 + Sync)>) -> Result<GridFunction> {
    let spec = &u.spec;
    let r = spec.res[axis];
    let stride = spec.strides()[axis];
    let h = spec.h(axis);
    let vals = u.values();
    let out: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|flat| {
            let i = (flat / stride) % r;
            let fwd = || (vals[flat + stride] - vals[flat]) / h;
            let bwd = || (vals[flat] - vals[flat - stride]) / h;
            if i == 0 {
                return fwd();
            }
            if i == r - 1 {
                return bwd();
            }
            match (scheme, sign) {
                (Scheme::Upwind, Some(sg)) => {
                    if sg(flat) > 0.0 {
                        fwd()
                    } else {
                        bwd()
                    }
                }
                _ => (vals[flat + stride] - vals[flat - stride]) / (2.0 * h),
            }
        })
        .collect();
    GridFunction::new(spec.clone(), out)
}

/// `Y u = ⟨Bx, Du⟩ − ∂_t u`.
pub fn discrete_y(u: &GridFunction, b: &DMatrix<f64>, scheme: Scheme) -> Result<GridFunction> {
    let spec = &u.spec;
    let n = spec.n();
    if b.nrows() != n {
        return Err(Error::Dimension { expected: n, got: b.nrows() });
    }
    let drift = |flat: usize, i: usize| {
        let (x, _) = spec.node(flat);
        (0..n).map(|j| b[(i, j)] * x[j]).sum::<f64>()
    };
    let mut acc = vec![0.0; spec.len()];
    for i in 0..n {
        if (0..n).all(|j| b[(i, j)] == 0.0) {
            continue;
        }
        let sign = |flat: usize| drift(flat, i);
        let d = axis_derivative(u, i, scheme, Some(&sign))?;
        acc.par_iter_mut().enumerate().for_each(|(flat, a)| *a += drift(flat, i) * d.values()[flat]);
    }
    let time_scheme = match scheme {
        Scheme::Upwind => Scheme::Upwind,
        Scheme::Centered => Scheme::Centered,
    };
    let back = |_: usize| -1.0;
    let dt = axis_derivative(u, n, time_scheme, Some(&back))?;
    for (a, d) in acc.iter_mut().zip(dt.values()) {
        *a -= d;
    }
    GridFunction::new(spec.clone(), acc)
}

/// `L_h u` at every node (ghost values clamp at the faces; only interior nodes are meaningful).
pub fn discrete_residual(u: &GridFunction, op: &OperatorSpec, scheme: Scheme) -> Result<GridFunction> {
    let spec = &u.spec;
    let n = spec.n();
    if n != op.n {
        return Err(Error::Dimension { expected: op.n, got: n });
    }
    let sop = SpatialOp::new(spec, &op.b, op.m0, scheme);
    let rt = spec.res[n];
    let ht = spec.ht();
    let vals = u.values();
    let time_dep = SliceCoeffs::time_dependent(op);
    let mut coef = SliceCoeffs::sample(op, &sop.xs, spec.coord(n, 0))?;
    let mut out = vec![0.0; spec.len()];
    let mut slice = vec![0.0; sop.len()];
    let mut lu = vec![0.0; sop.len()];
    for k in 0..rt {
        if time_dep && k > 0 {
            coef = SliceCoeffs::sample(op, &sop.xs, spec.coord(n, k))?;
        }
        for (s, v) in slice.iter_mut().enumerate() {
            *v = vals[s * rt + k];
        }
        sop.apply(&slice, &coef, &Ghost::Clamped, &mut lu);
        for s in 0..sop.len() {
            let f = s * rt + k;
            let dt = match scheme {
                Scheme::Upwind if k > 0 => (vals[f] - vals[f - 1]) / ht,
                Scheme::Centered if k > 0 && k + 1 < rt => (vals[f + 1] - vals[f - 1]) / (2.0 * ht),
                _ if k + 1 < rt => (vals[f + 1] - vals[f]) / ht,
                _ => (vals[f] - vals[f - 1]) / ht,
            };
            out[f] = lu[s] - dt;
        }
    }
    GridFunction::new(spec.clone(), out)
}

/// Flat indices of nodes at least `margin` cells away from every face.
pub fn interior_nodes(spec: &GridSpec, margin: usize) -> Vec<usize> {
    (0..spec.len())
        .filter(|&f| {
            let idx = spec.multi_index(f);
            idx.iter().zip(&spec.res).all(|(&i, &r)| i >= margin && i + margin < r)
        })
        .collect()
}

pub fn max_abs_interior(g: &GridFunction, margin: usize) -> f64 {
    interior_nodes(&g.spec, margin)
        .into_iter()
        .map(|f| g.values()[f].abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    Max,
    Min,
}

/// Discrete sub/super-solution test for a pointwise envelope of solutions.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeCheck {
    pub envelope: Envelope,
    /// For `Max`: `min (L_h u − L_h u_active)`, which must be `≥ −tol`; for `Min` the sign is flipped.
    pub worst_margin: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Checks that `u = max/min_k u_k` satisfies `L_h u ≥ L_h u_k` (resp. `≤`) at each interior node
/// for the member `k` attaining the envelope there, using the monotone upwind scheme.
pub fn envelope_check(members: &[&GridFunction], op: &OperatorSpec, envelope: Envelope) -> Result<(GridFunction, EnvelopeCheck)> {
    let first = members.first().ok_or_else(|| Error::Domain("envelope of no members".into()))?;
    let mut u = (*first).clone();
    for m in &members[1..] {
        u = match envelope {
            Envelope::Max => u.zip_with(m, f64::max)?,
            Envelope::Min => u.zip_with(m, f64::min)?,
        };
    }
    let ru = discrete_residual(&u, op, Scheme::Upwind)?;
    let rk: Vec<GridFunction> = members.iter().map(|m| discrete_residual(m, op, Scheme::Upwind)).collect::<Result<_>>()?;
    let scale = rk.iter().chain(std::iter::once(&ru)).map(|g| max_abs_interior(g, 1)).fold(0.0, f64::max).max(u.max().abs());
    let tol = 1e-8 * scale.max(1e-300);
    let mut worst = f64::INFINITY;
    for f in interior_nodes(&u.spec, 1) {
        let active = members.iter().position(|m| m.values()[f] == u.values()[f]).unwrap_or(0);
        let d = ru.values()[f] - rk[active].values()[f];
        let m = match envelope {
            Envelope::Max => d,
            Envelope::Min => -d,
        };
        worst = worst.min(m);
    }
    Ok((u, EnvelopeCheck { envelope, worst_margin: worst, tolerance: tol, holds: worst >= -tol }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::OperatorSpec;

    fn box3(res: usize) -> GridSpec {
        GridSpec::uniform(vec![-1.0, -1.0, 0.0], vec![1.0, 1.0, 1.0], res).unwrap()
    }

    #[test]
    fn kernel_solution_positive_and_linear() {
        let op = OperatorSpec::langevin();
        let ev = KernelEvaluator::from_spec(&op).unwrap();
        let spec = box3(16);
        let p1 = GroupPoint::from_slice(&[0.2, 0.0], -1.0).unwrap();
        let p2 = GroupPoint::from_slice(&[-0.3, 0.4], -0.6).unwrap();
        let u1 = sample_kernel_solution(&ev, &SolutionFamily::translate(p1.clone()), &spec).unwrap();
        let u2 = sample_kernel_solution(&ev, &SolutionFamily::translate(p2.clone()), &spec).unwrap();
        assert!(u1.min() > 0.0);
        let mix = sample_kernel_solution(&ev, &SolutionFamily::mixture(vec![p1, p2], vec![1.0, 1.0]), &spec).unwrap();
        for ((a, b), m) in u1.values().iter().zip(u2.values()).zip(mix.values()) {
            assert_eq!(a + b, *m);
        }
        let bad = GroupPoint::from_slice(&[0.0, 0.0], -0.05).unwrap();
        assert!(sample_kernel_solution(&ev, &SolutionFamily::translate(bad), &spec).is_err());
    }

    #[test]
    fn gradient_exact_on_linear_and_quadratic() {
        let spec = box3(10);
        let u = GridFunction::from_fn(spec.clone(), |x, _| x[0]).unwrap();
        let g = discrete_gradient_m0(&u, 2).unwrap();
        assert!(g[0].values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(g[1].values().iter().all(|v| v.abs() < 1e-12));
        let u = GridFunction::from_fn(spec.clone(), |x, _| x[0] * x[0]).unwrap();
        let g = discrete_gradient_m0(&u, 1).unwrap();
        for f in interior_nodes(&spec, 1) {
            let (x, _) = spec.node(f);
            assert!((g[0].values()[f] - 2.0 * x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn y_operator_examples() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let spec = box3(10);
        let c = GridFunction::constant(spec.clone(), 3.0).unwrap();
        assert!(discrete_y(&c, &b, Scheme::Upwind).unwrap().values().iter().all(|v| *v == 0.0));
        let t = GridFunction::from_fn(spec.clone(), |_, t| t).unwrap();
        let yt = discrete_y(&t, &b, Scheme::Upwind).unwrap();
        for f in interior_nodes(&spec, 1) {
            assert!((yt.values()[f] + 1.0).abs() < 1e-12);
        }
        let x2 = GridFunction::from_fn(spec.clone(), |x, _| x[1]).unwrap();
        let y2 = discrete_y(&x2, &b, Scheme::Upwind).unwrap();
        for f in interior_nodes(&spec, 1) {
            let (x, _) = spec.node(f);
            assert!((y2.values()[f] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_constant_solution_is_preserved() {
        let op = OperatorSpec::heat(2).unwrap();
        let spec = box3(12);
        let init = vec![1.0; spec.slice_len()];
        let dt = admissible_dt(&op, &spec).unwrap();
        let sol = fd_solve_cauchy(&op, &spec, &init, dt, &Boundary::Clamped).unwrap();
        assert!(sol.solution.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
        assert!(!sol.positivity_lost);
        assert!(matches!(fd_solve_cauchy(&op, &spec, &init, 2.0 * dt, &Boundary::Clamped), Err(Error::Cfl { .. })));
    }

    #[test]
    fn fd_zero_order_decay() {
        let mut op = OperatorSpec::heat(1).unwrap();
        op.zero_order = CoefficientField::constant(1, -1.0);
        let spec = GridSpec::new(vec![-1.0, 0.0], vec![1.0, 1.0], vec![16, 16]).unwrap();
        let dt = 0.25 * admissible_dt(&op, &spec).unwrap();
        let sol = fd_solve_cauchy(&op, &spec, &vec![1.0; 16], dt, &Boundary::Clamped).unwrap();
        for k in 0..16 {
            let t = spec.coord(1, k);
            let v = sol.solution.get(&[5, k]);
            assert!((v - (-t).exp()).abs() < 2.0 * dt, "t={t}: {v}");
        }
    }

    #[test]
    fn fd_tracks_kernel_evolution() {
        let op = OperatorSpec::langevin();
        let ev = KernelEvaluator::from_spec(&op).unwrap();
        let pole = GroupPoint::from_slice(&[0.0, 0.0], -0.6).unwrap();
        let fam = SolutionFamily::translate(pole.clone());
        let mut errs = Vec::new();
        for res in [16, 32] {
            let spec = GridSpec::uniform(vec![-2.5, -2.5, 0.0], vec![2.5, 2.5, 0.5], res).unwrap();
            let exact = sample_kernel_solution(&ev, &fam, &spec).unwrap();
            let init: Vec<f64> = (0..spec.slice_len())
                .map(|s| {
                    let z = GroupPoint::from_slice(&spec.spatial_node(s), 0.0).unwrap();
                    ev.gamma(&z, &pole).unwrap()
                })
                .collect();
            let dt = admissible_dt(&op, &spec).unwrap();
            let boundary = {
                let ev = KernelEvaluator::from_spec(&op).unwrap();
                let pole = pole.clone();
                Boundary::Dirichlet(Arc::new(move |x: &[f64], t: f64| {
                    ev.gamma(&GroupPoint::from_slice(x, t).unwrap(), &pole).unwrap()
                }))
            };
            let sol = fd_solve_cauchy(&op, &spec, &init, dt, &boundary).unwrap();
            let err = sol
                .solution
                .values()
                .iter()
                .zip(exact.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            errs.push(err / exact.max());
        }
        assert!(errs[1] < errs[0] && errs[1] < 0.1, "{errs:?}");
    }

    #[test]
    fn discrete_operators_are_linear() {
        let op = OperatorSpec::langevin();
        let spec = box3(10);
        let u = GridFunction::from_fn(spec.clone(), |x, t| (x[0] * 2.0).sin() + x[1] * t).unwrap();
        let v = GridFunction::from_fn(spec.clone(), |x, t| (x[1] - t).cos()).unwrap();
        let w = u.zip_with(&v, |a, b| 2.0 * a - 3.0 * b).unwrap();
        for scheme in [Scheme::Upwind, Scheme::Centered] {
            let (ru, rv, rw) = (
                discrete_residual(&u, &op, scheme).unwrap(),
                discrete_residual(&v, &op, scheme).unwrap(),
                discrete_residual(&w, &op, scheme).unwrap(),
            );
            for f in 0..spec.len() {
                let lin = 2.0 * ru.values()[f] - 3.0 * rv.values()[f];
                assert!((rw.values()[f] - lin).abs() < 1e-12 * (1.0 + lin.abs()) * 100.0);
            }
        }
    }

    #[test]
    fn max_and_min_envelopes_are_sub_and_super() {
        let op = OperatorSpec::langevin();
        let ev = KernelEvaluator::from_spec(&op).unwrap();
        let spec = box3(16);
        let u1 = sample_kernel_solution(&ev, &SolutionFamily::translate(GroupPoint::from_slice(&[0.5, 0.0], -0.5).unwrap()), &spec).unwrap();
        let u2 = sample_kernel_solution(&ev, &SolutionFamily::translate(GroupPoint::from_slice(&[-0.5, 0.2], -0.4).unwrap()), &spec).unwrap();
        let (_, sub) = envelope_check(&[&u1, &u2], &op, Envelope::Max).unwrap();
        assert!(sub.holds, "{sub:?}");
        let (_, sup) = envelope_check(&[&u1, &u2], &op, Envelope::Min).unwrap();
        assert!(sup.holds, "{sup:?}");
    }
}
