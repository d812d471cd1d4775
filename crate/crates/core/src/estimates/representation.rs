//! Reproduction identity `u = −Γ(K u)` for compactly supported smooth `u`, with `K u` taken from
//! second-order discrete operators and `Γ(·)` from the kernel potentials.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::kernel::KernelEvaluator;
use crate::operator::OperatorSpec;
use crate::solver::{discrete_residual, Scheme};

/// `exp(1 − 1/(1 − s²))` on `|s| < 1`; smooth with compact support and peak 1.
pub fn bump_1d(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Tensor bump centred at `center` with half-widths `widths` (space axes, then time).
#[derive(Debug, Clone, Serialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub widths: Vec<f64>,
}

impl Bump {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let n = x.len();
        let mut v = bump_1d((t - self.center[n]) / self.widths[n]);
        for i in 0..n {
            if v == 0.0 {
                break;
            }
            v *= bump_1d((x[i] - self.center[i]) / self.widths[i]);
        }
        v
    }

    /// Default manufactured solution on `[-1, 1]^{N+1}`.
    pub fn standard(n: usize) -> Self {
        Bump { center: vec![0.0; n + 1], widths: vec![0.6; n + 1] }
    }

    fn inside(&self, spec: &GridSpec) -> bool {
        (0..spec.axes()).all(|a| {
            let margin = 2.0 * if a == spec.n() { spec.ht() } else { spec.h(a) };
            self.center[a] - self.widths[a] >= spec.lo[a] + margin && self.center[a] + self.widths[a] <= spec.hi[a] - margin
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RepresentationLevel {
    pub resolution: usize,
    pub lattice_points: usize,
    /// `‖u + Γ(K u)‖₂ / ‖u‖₂` over the lattice.
    pub relative_l2_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RepresentationReport {
    pub levels: Vec<RepresentationLevel>,
    pub monotone: bool,
}

/// Lattice stride giving about `lattice` points per axis.
fn stride_for(res: usize, lattice: usize) -> usize {
    (res / lattice.max(1)).max(1)
}

/// Reproduction error at one resolution over the whole lattice; `op` must be principal-only.
/// Compact support makes the identity hold everywhere, including after the support in time.
pub fn representation_error(ev: &KernelEvaluator, op: &OperatorSpec, bump: &Bump, res: usize, lattice: usize) -> Result<RepresentationLevel> {
    if !op.is_principal_only() {
        return Err(Error::Domain("reproduction identity needs the principal part only".into()));
    }
    let n = op.n;
    let spec = GridSpec::uniform(vec![-1.0; n + 1], vec![1.0; n + 1], res)?;
    if !bump.inside(&spec) {
        return Err(Error::Domain("bump support touches the grid boundary".into()));
    }
    let u = GridFunction::from_fn(spec.clone(), |x, t| bump.eval(x, t))?;
    let ku = discrete_residual(&u, op, Scheme::Centered)?;
    let stride = stride_for(res, lattice);
    let lat = ev.potentials_on_lattice(&[&ku], stride, false, |_, _| true)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (flat, vals) in &lat {
        let target = u.values()[*flat];
        num += (target + vals[0].value).powi(2);
        den += target * target;
    }
    if den == 0.0 {
        return Ok(RepresentationLevel { resolution: res, lattice_points: lat.len(), relative_l2_error: num.sqrt() });
    }
    Ok(RepresentationLevel { resolution: res, lattice_points: lat.len(), relative_l2_error: (num / den).sqrt() })
}

/// Errors over several resolutions with a monotonicity flag.
pub fn representation_check(ev: &KernelEvaluator, op: &OperatorSpec, bump: &Bump, resolutions: &[usize], lattice: usize) -> Result<RepresentationReport> {
    let levels: Vec<RepresentationLevel> =
        resolutions.iter().map(|&r| representation_error(ev, op, bump, r, lattice)).collect::<Result<_>>()?;
    let monotone = levels.windows(2).all(|w| w[1].relative_l2_error < w[0].relative_l2_error);
    Ok(RepresentationReport { levels, monotone })
}
