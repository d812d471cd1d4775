//! Solution families fed to the inequality checks.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::norms::NodeGauge;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::kernel::KernelEvaluator;
use crate::lie::{GroupPoint, KolmogorovGroup};
use crate::operator::{CoefficientField, DivergenceSign, OperatorSpec};
use crate::solver::{
    admissible_dt, envelope_check, fd_solve_cauchy, sample_kernel_solution, Boundary, Envelope, FamilyKind, SolutionFamily,
};

/// Which one-sided inequality a member satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    /// Both a sub- and a super-solution.
    Solution,
    Sub,
    Super,
}

impl Tag {
    pub fn is_sub(self) -> bool {
        matches!(self, Tag::Solution | Tag::Sub)
    }

    pub fn is_super(self) -> bool {
        matches!(self, Tag::Solution | Tag::Super)
    }
}

/// One positive function on its own grid, with the operator it (approximately) solves.
#[derive(Debug, Clone)]
pub struct Member {
    pub label: String,
    pub kind: FamilyKind,
    pub tag: Tag,
    pub u: GridFunction,
    pub op: OperatorSpec,
    /// Origin-centred gauges up to radius 1, full and one-sided.
    gauges: Arc<[OnceLock<NodeGauge>; 2]>,
}

impl Member {
    pub fn new(label: impl Into<String>, kind: FamilyKind, tag: Tag, u: GridFunction, op: OperatorSpec) -> Self {
        Member { label: label.into(), kind, tag, u, op, gauges: Arc::new([OnceLock::new(), OnceLock::new()]) }
    }

    /// Same member with new values; cached gauges are kept when the grid is unchanged.
    pub fn with_values(&self, u: GridFunction) -> Self {
        let mut m = Member::new(self.label.clone(), self.kind, self.tag, u, self.op.clone());
        if m.u.spec == self.u.spec {
            m.gauges = self.gauges.clone();
        }
        m
    }

    /// Node gauge about the origin for radii up to 1.
    pub fn gauge(&self, g: &KolmogorovGroup, one_sided: bool) -> Result<&NodeGauge> {
        let cell = &self.gauges[one_sided as usize];
        if cell.get().is_none() {
            let gauge = NodeGauge::at_origin(&self.u.spec, g, 1.0, one_sided)?;
            let _ = cell.set(gauge);
        }
        Ok(cell.get().expect("gauge initialised above"))
    }
}

/// Box `[-1, 1]^{N+1}` holding `Q₁(0)`.
pub fn unit_box(n: usize, res: usize) -> Result<GridSpec> {
    GridSpec::uniform(vec![-1.0; n + 1], vec![1.0; n + 1], res)
}

/// Random poles with `|x_i| ≤ 0.5` and `τ ∈ [−1.9, −1.4]`.
pub fn random_poles(n: usize, count: usize, seed: u64) -> Vec<GroupPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let t = rng.random_range(-1.9..-1.4);
            GroupPoint::from_slice(&x, t).expect("finite pole")
        })
        .collect()
}

/// Kernel translates `Γ(·, ζ_k)` of the principal part of `op` on `spec`.
pub fn kernel_translates(op: &OperatorSpec, spec: &GridSpec, count: usize, seed: u64) -> Result<Vec<Member>> {
    let ev = KernelEvaluator::from_spec(op)?;
    let principal = OperatorSpec::principal(op.b.clone(), op.m0, op.q)?;
    random_poles(op.n, count, seed)
        .into_iter()
        .enumerate()
        .map(|(k, pole)| {
            let u = sample_kernel_solution(&ev, &SolutionFamily::translate(pole), spec)?;
            Ok(Member::new(format!("translate_{k}"), FamilyKind::KernelTranslate, Tag::Solution, u, principal.clone()))
        })
        .collect()
}

/// Drift `b₁ = x₁` (divergence 1) used by the rough-coefficient member.
pub const FD_DRIFT: &str = "x1";
/// Zero-order coefficient of the rough-coefficient member.
pub const FD_ZERO_ORDER: &str = "-0.5*abs(sin(3*x1))";

/// `op` with `b₁ = x₁` and `c = −½|sin 3x₁|`.
pub fn rough_operator(op: &OperatorSpec) -> Result<OperatorSpec> {
    let mut rough = OperatorSpec::principal(op.b.clone(), op.m0, op.q)?;
    rough.drift_b[0] = CoefficientField::parse(op.n, FD_DRIFT)?.with_divergence_sign(DivergenceSign::Nonneg);
    rough.zero_order = CoefficientField::parse(op.n, FD_ZERO_ORDER)?;
    Ok(rough)
}

/// Explicit finite-difference solution of the rough operator on `x ∈ [−1.25, 1.25]^N, t ∈ [−1, 1]`,
/// started from a positive kernel slice plus a constant floor.
pub fn fd_member(op: &OperatorSpec, res: usize) -> Result<Member> {
    let n = op.n;
    let rough = rough_operator(op)?;
    let mut lo = vec![-1.25; n + 1];
    let mut hi = vec![1.25; n + 1];
    lo[n] = -1.0;
    hi[n] = 1.0;
    let spec = GridSpec::uniform(lo, hi, res)?;
    let ev = KernelEvaluator::from_spec(op)?;
    let pole = GroupPoint::origin(n);
    let pole = GroupPoint { t: -1.6, ..pole };
    let init: Vec<f64> = (0..spec.slice_len())
        .map(|s| {
            let z = GroupPoint::from_slice(&spec.spatial_node(s), -1.0)?;
            Ok(ev.gamma(&z, &pole)? + 0.05)
        })
        .collect::<Result<_>>()?;
    let dt = 0.9 * admissible_dt(&rough, &spec)?;
    let sol = fd_solve_cauchy(&rough, &spec, &init, dt, &Boundary::Clamped)?;
    if sol.positivity_lost {
        return Err(Error::Domain("finite-difference member lost positivity".into()));
    }
    Ok(Member::new("fd_rough", FamilyKind::FdCauchy, Tag::Solution, sol.solution, rough))
}

/// Five kernel translates on `[-1, 1]^{N+1}` plus the rough-coefficient finite-difference member.
pub fn standard_family(op: &OperatorSpec, res: usize, seed: u64) -> Result<Vec<Member>> {
    let spec = unit_box(op.n, res)?;
    let mut members = kernel_translates(op, &spec, 5, seed)?;
    members.push(fd_member(op, res)?);
    Ok(members)
}

/// Pointwise max (sub-solutions) or min (super-solutions) of consecutive translate pairs, each
/// tagged only after the discrete residual sign test confirms it.
pub fn envelope_family(translates: &[Member], envelope: Envelope) -> Result<Vec<Member>> {
    if translates.len() < 2 {
        return Err(Error::Domain("envelope family needs at least two translates".into()));
    }
    let mut out = Vec::new();
    for k in 0..translates.len() - 1 {
        let (a, b) = (&translates[k], &translates[k + 1]);
        let (u, check) = envelope_check(&[&a.u, &b.u], &a.op, envelope)?;
        if !check.holds {
            return Err(Error::Domain(format!(
                "envelope of members {k} and {} fails the residual sign test (margin {:e})",
                k + 1,
                check.worst_margin
            )));
        }
        let (tag, name) = match envelope {
            Envelope::Max => (Tag::Sub, "max"),
            Envelope::Min => (Tag::Super, "min"),
        };
        out.push(Member::new(format!("{name}_{k}_{}", k + 1), FamilyKind::KernelMixture, tag, u, a.op.clone()));
    }
    Ok(out)
}

/// Boundary data helper for finite-difference runs against a kernel solution.
pub fn kernel_boundary(op: &OperatorSpec, pole: GroupPoint) -> Result<Boundary> {
    let ev = KernelEvaluator::from_spec(op)?;
    Ok(Boundary::Dirichlet(Arc::new(move |x: &[f64], t: f64| {
        GroupPoint::from_slice(x, t).and_then(|z| ev.gamma(&z, &pole)).unwrap_or(0.0)
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_is_positive_and_deterministic() {
        let op = OperatorSpec::langevin();
        let a = standard_family(&op, 16, 7).unwrap();
        let b = standard_family(&op, 16, 7).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.u.min() > 0.0, "{}", x.label);
            assert_eq!(x.u.values(), y.u.values());
        }
        assert!(!a[5].op.drift_b[0].is_zero());
    }

    #[test]
    fn envelopes_are_tagged() {
        let op = OperatorSpec::langevin();
        let tr = kernel_translates(&op, &unit_box(2, 16).unwrap(), 3, 1).unwrap();
        let sub = envelope_family(&tr, Envelope::Max).unwrap();
        let sup = envelope_family(&tr, Envelope::Min).unwrap();
        assert_eq!(sub.len(), 2);
        assert!(sub.iter().all(|m| m.tag == Tag::Sub && m.tag.is_sub() && !m.tag.is_super()));
        assert!(sup.iter().all(|m| m.tag == Tag::Super));
    }
}
