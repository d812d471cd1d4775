//! Experiment orchestration: each [`ExperimentKind`] becomes a typed report, a verdict and, where
//! grid data exists, a CSV artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::estimates::cutoff::{measure_cutoff_constants, CutoffConstants, CutoffProfile};
use crate::estimates::family::{envelope_family, fd_member, kernel_translates, standard_family, unit_box, Member, Tag};
use crate::estimates::inequalities::{caccioppoli_check, sobolev_check};
use crate::estimates::moser::{
    bracket_exponent, inf_estimate_check, moser_iterate, moser_sweep, subsolution_range_check, InfReport, MoserReport,
    RangeTable, SweepFit,
};
use crate::estimates::representation::{representation_check, Bump, RepresentationReport};
use crate::grid::{GridFunction, GridSpec};
use crate::kernel::{potential_norm_check, random_densities, KernelEvaluator, PotentialNormReport};
use crate::lie::{cylinder_inclusion_constant, quasi_triangle_constant, GroupPoint, KolmogorovGroup};
use crate::operator::{validate_hypotheses, BlockStructure, ExponentSet, HypothesisReport, OperatorSpec};
use crate::quadrature::gauss_legendre;
use crate::report::{to_value, write_json, ExperimentRecord, Report};
use crate::solver::{discrete_residual, max_abs_interior, Envelope, Scheme};

/// Largest grid (nodes) any experiment allocates.
pub const GRID_BUDGET: usize = 1 << 22;
/// Random samples for hypothesis and geometry checks.
pub const SAMPLE_BUDGET: usize = 200;
/// Lattice points per axis for potential evaluation.
pub const LATTICE: usize = 12;

fn grid_nodes(n: usize, res: usize) -> usize {
    res.saturating_pow(n as u32 + 1)
}

fn check_budget(n: usize, res: usize) -> Result<()> {
    if grid_nodes(n, res) > GRID_BUDGET {
        return Err(Error::Budget(format!("{res}^{} nodes exceed the grid budget of {GRID_BUDGET}", n + 1)));
    }
    Ok(())
}

fn max_min_ratio(vals: &[f64]) -> f64 {
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn stable(vals: &[f64]) -> bool {
    !vals.is_empty() && vals.iter().all(|v| v.is_finite() && *v > 0.0) && max_min_ratio(vals) < 2.0
}

// ---------------------------------------------------------------- structure

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub n: usize,
    pub m0: usize,
    pub blocks: BlockStructure,
    pub exponents: ExponentSet,
    pub two_beta_mu: f64,
    pub hypotheses: HypothesisReport,
    pub nilpotent: bool,
    pub inclusion_constant: f64,
    pub quasi_triangle_constant: f64,
    pub cutoff: CutoffConstants,
    pub verdict: bool,
}

pub fn structure_report(op: &OperatorSpec, rho: f64, r: f64, seed: u64) -> Result<StructureReport> {
    let blocks = op.blocks()?;
    let exponents = op.exponents()?;
    let g = KolmogorovGroup::from_spec(op)?;
    let hypotheses = validate_hypotheses(op, SAMPLE_BUDGET, seed);
    let profile = CutoffProfile::new(rho.max(0.5), r.clamp(rho.max(0.5) + 1e-3, 1.0))?;
    let cutoff = measure_cutoff_constants(&g, &profile, 10_000, seed)?;
    let verdict = hypotheses.all_pass() && cutoff.chi_slope <= 2.0;
    Ok(StructureReport {
        n: op.n,
        m0: op.m0,
        two_beta_mu: exponents.two_beta_mu(),
        blocks,
        exponents,
        hypotheses,
        nilpotent: g.is_nilpotent(),
        inclusion_constant: cylinder_inclusion_constant(&g, SAMPLE_BUDGET, seed)?,
        quasi_triangle_constant: quasi_triangle_constant(&g, 1000, seed),
        cutoff,
        verdict,
    })
}

// ---------------------------------------------------------------- kernel

/// `∫ Γ((x, t), 0) dx` by tensor Gauss-Legendre over `±10` marginal standard deviations.
///
/// Returns `None` above five space dimensions, where the tensor rule is too large.
pub fn kernel_mass(ev: &KernelEvaluator, t: f64) -> Result<Option<f64>> {
    let n = ev.n();
    let (panels, order) = match n {
        1 => (20, 10),
        2 => (16, 8),
        3 => (12, 8),
        4 => (8, 8),
        5 => (6, 6),
        _ => return Ok(None),
    };
    let c = ev.covariance(t)?;
    let rule = gauss_legendre(order);
    let axes: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|i| {
            let half = 10.0 * (2.0 * c[(i, i)]).sqrt();
            let w = 2.0 * half / panels as f64;
            (0..panels)
                .flat_map(|k| {
                    let mid = -half + (k as f64 + 0.5) * w;
                    rule.nodes.iter().zip(&rule.weights).map(move |(x, wt)| (mid + 0.5 * w * x, 0.5 * w * wt)).collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    let origin = GroupPoint::origin(n);
    let per = axes[0].len();
    let total = per.pow(n as u32);
    let mut sum = 0.0;
    let mut x = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for a in (0..n).rev() {
            let (xa, wa) = axes[a][rem % per];
            rem /= per;
            x[a] = xa;
            w *= wa;
        }
        sum += w * ev.gamma(&GroupPoint::from_slice(&x, t)?, &origin)?;
    }
    Ok(Some(sum))
}

#[derive(Debug, Clone, Serialize)]
pub struct MassCheck {
    pub t: f64,
    pub integral: Option<f64>,
    pub expected: f64,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualLevel {
    pub resolution: usize,
    /// `max |K_h Γ| / max Γ` over interior nodes.
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    /// `Γ((0, 1), 0)`.
    pub gamma_unit_time: f64,
    pub mass: Vec<MassCheck>,
    pub homogeneity_max_relative_error: f64,
    pub causality_ok: bool,
    pub comparison_constant: f64,
    pub comparison_samples: usize,
    pub residual: Vec<ResidualLevel>,
    /// Log-log decay rate of the residual (needs two levels).
    pub residual_slope: Option<f64>,
    pub verdict: bool,
}

/// Residual of the centred discrete principal operator applied to `Γ(·, (0, −3))` on
/// `[-1, 1]^N × [0, 1]`.
pub fn kernel_residual(ev: &KernelEvaluator, op: &OperatorSpec, res: usize) -> Result<ResidualLevel> {
    check_budget(op.n, res)?;
    let n = op.n;
    let mut lo = vec![-1.0; n + 1];
    lo[n] = 0.0;
    let spec = GridSpec::uniform(lo, vec![1.0; n + 1], res)?;
    let pole = GroupPoint { t: -3.0, ..GroupPoint::origin(n) };
    let u = GridFunction::try_from_fn(spec, |x, t| ev.gamma(&GroupPoint::from_slice(x, t)?, &pole))?;
    let principal = OperatorSpec::principal(op.b.clone(), op.m0, op.q)?;
    let ku = discrete_residual(&u, &principal, Scheme::Centered)?;
    Ok(ResidualLevel { resolution: res, relative_residual: max_abs_interior(&ku, 2) / u.max() })
}

fn residual_slope(levels: &[ResidualLevel]) -> Option<f64> {
    if levels.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = levels.iter().map(|l| (1.0 / l.resolution as f64).ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.relative_residual.ln()).collect();
    Some(crate::estimates::moser::least_squares_slope(&xs, &ys))
}

pub fn kernel_report(op: &OperatorSpec, resolutions: &[usize], seed: u64) -> Result<KernelReport> {
    use rand::{Rng, SeedableRng};
    let ev = KernelEvaluator::from_spec(op)?;
    let g = ev.group().clone();
    let n = op.n;
    let origin = GroupPoint::origin(n);
    let gamma_unit_time = ev.gamma(&GroupPoint { t: 1.0, ..origin.clone() }, &origin)?;
    let mass = [0.5, 1.0, 2.0]
        .iter()
        .map(|&t| {
            let integral = kernel_mass(&ev, t)?;
            let expected = (-t * ev.trace_b()).exp();
            Ok(MassCheck { t, integral, expected, relative_error: integral.map(|v| (v / expected - 1.0).abs()) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let qd = g.blocks.q_dim as i32;
    let mut homogeneity = 0.0f64;
    let mut causality_ok = true;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = GroupPoint::from_slice(&x, rng.random_range(0.05..1.0))?;
        let r = rng.random_range(0.25..4.0);
        let base = ev.gamma0(&z)?;
        if base > 1e-250 {
            let scaled = ev.gamma0(&g.dilate(r, &z)?)?;
            homogeneity = homogeneity.max((scaled * r.powi(qd) / base - 1.0).abs());
        }
        let past = GroupPoint { t: -z.t, ..z.clone() };
        causality_ok &= ev.gamma(&past, &origin)? == 0.0 && ev.gamma(&GroupPoint { t: 0.0, ..z }, &origin)? == 0.0;
    }
    let (comparison_constant, comparison_samples) = ev.comparison_constant(1.0, 2000, seed)?;
    let residual: Vec<ResidualLevel> = resolutions.iter().map(|&res| kernel_residual(&ev, op, res)).collect::<Result<_>>()?;
    let residual_slope = residual_slope(&residual);
    let verdict = mass.iter().all(|m| m.relative_error.is_none_or(|e| e < 1e-6))
        && homogeneity < 1e-9
        && causality_ok
        && residual_slope.is_none_or(|s| (s - 2.0).abs() <= 0.3);
    Ok(KernelReport {
        gamma_unit_time,
        mass,
        homogeneity_max_relative_error: homogeneity,
        causality_ok,
        comparison_constant,
        comparison_samples,
        residual,
        residual_slope,
        verdict,
    })
}

/// `Γ(·, 0)` on the configured box; odd resolutions keep a node on every symmetric axis origin.
pub fn kernel_grid(op: &OperatorSpec, cfg: &ExperimentConfig) -> Result<GridFunction> {
    let ev = KernelEvaluator::from_spec(op)?;
    let res = cfg.resolutions.first().copied().unwrap_or(17) | 1;
    check_budget(op.n, res)?;
    let spec = GridSpec::uniform(cfg.lo.clone(), cfg.hi.clone(), res)?;
    let origin = GroupPoint::origin(op.n);
    GridFunction::try_from_fn(spec, |x, t| ev.gamma(&GroupPoint::from_slice(x, t)?, &origin))
}

// ---------------------------------------------------------------- potentials

#[derive(Debug, Clone, Serialize)]
pub struct IbpReport {
    pub resolution: usize,
    pub points: usize,
    /// Relative L² gap between the two routes over the lattice.
    pub relative_error: f64,
}

/// Compares `−∫ D_ξ Γ f` (kernel-gradient route) with `∫ Γ D f` (differentiated-density route)
/// on a lattice; `f` must vanish at the spatial faces.
pub fn ibp_consistency(ev: &KernelEvaluator, f: &GridFunction, df: &[GridFunction], lattice: usize) -> Result<IbpReport> {
    if df.len() != ev.m0 {
        return Err(Error::Dimension { expected: ev.m0, got: df.len() });
    }
    let res = f.spec.res[0];
    let mut fields: Vec<&GridFunction> = vec![f];
    fields.extend(df.iter());
    let stride = (res / lattice.max(1)).max(1);
    let lat = ev.potentials_on_lattice(&fields, stride, true, |_, _| true)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (_, vals) in &lat {
        for i in 0..ev.m0 {
            let kernel_route = vals[0].gradient[i];
            let density_route = vals[1 + i].value;
            num += (kernel_route - density_route).powi(2);
            den += kernel_route * kernel_route;
        }
    }
    Ok(IbpReport { resolution: res, points: lat.len(), relative_error: (num / den).sqrt() })
}

/// Smooth density for the integration-by-parts check: a narrow Gaussian in space, negligible at
/// the faces, times a compact bump in time.
pub fn ibp_density(x: &[f64], t: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-r2 / (2.0 * IBP_VARIANCE)).exp() * crate::estimates::representation::bump_1d(t / 0.8)
}

/// `∂_{x_i}` of [`ibp_density`].
pub fn ibp_density_derivative(i: usize, x: &[f64], t: f64) -> f64 {
    -x[i] / IBP_VARIANCE * ibp_density(x, t)
}

pub const IBP_VARIANCE: f64 = 0.0625;

#[derive(Debug, Clone, Serialize)]
pub struct PotentialsReport {
    pub norms: PotentialNormReport,
    pub ibp: IbpReport,
    pub verdict: bool,
}

/// Default Lebesgue exponent for the potential bounds: 2 when admissible, else the midpoint of
/// `(1, (Q+2)/2)`.
pub fn potential_exponent(q_dim: usize) -> f64 {
    let top = (q_dim as f64 + 2.0) / 2.0;
    if 2.0 < top {
        2.0
    } else {
        0.5 * (1.0 + top)
    }
}

pub fn potentials_report(op: &OperatorSpec, resolutions: &[usize], seed: u64) -> Result<PotentialsReport> {
    for &res in resolutions {
        check_budget(op.n, res)?;
    }
    let ev = KernelEvaluator::from_spec(op)?;
    let p = potential_exponent(ev.blocks.q_dim);
    let densities = random_densities(op.n, 4, seed);
    let norms = potential_norm_check(&ev, p, resolutions, &densities, LATTICE)?;
    let ibp_res = resolutions.iter().copied().max().unwrap_or(32).max(32);
    check_budget(op.n, ibp_res)?;
    let spec = unit_box(op.n, ibp_res)?;
    let f = GridFunction::from_fn(spec.clone(), ibp_density)?;
    let df: Vec<GridFunction> =
        (0..op.m0).map(|i| GridFunction::from_fn(spec.clone(), |x, t| ibp_density_derivative(i, x, t))).collect::<Result<_>>()?;
    let ibp = ibp_consistency(&ev, &f, &df, LATTICE)?;
    let verdict = norms.drift_value < 2.0 && norms.drift_gradient < 2.0 && ibp.relative_error < 0.01;
    Ok(PotentialsReport { norms, ibp, verdict })
}

// ---------------------------------------------------------------- inequalities

#[derive(Debug, Clone, Serialize)]
pub struct FamilyConstant {
    pub resolution: usize,
    /// Minimal constant per member.
    pub members: Vec<(String, f64)>,
    pub max_constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolevReport {
    pub rho: f64,
    pub r: f64,
    pub levels: Vec<FamilyConstant>,
    pub drift: f64,
    pub verdict: bool,
}

fn families(op: &OperatorSpec, resolutions: &[usize], seed: u64) -> Result<Vec<(usize, Vec<Member>)>> {
    resolutions
        .iter()
        .map(|&res| {
            check_budget(op.n, res)?;
            Ok((res, standard_family(op, res, seed)?))
        })
        .collect()
}

fn family_constant<F>(res: usize, fam: &[Member], f: F) -> Result<FamilyConstant>
where
    F: Fn(&Member) -> Result<f64>,
{
    let members: Vec<(String, f64)> = fam.iter().map(|m| Ok((m.label.clone(), f(m)?))).collect::<Result<_>>()?;
    let max_constant = members.iter().map(|m| m.1).fold(0.0, f64::max);
    Ok(FamilyConstant { resolution: res, members, max_constant })
}

pub fn sobolev_report(op: &OperatorSpec, resolutions: &[usize], rho: f64, r: f64, seed: u64) -> Result<SobolevReport> {
    let g = KolmogorovGroup::from_spec(op)?;
    let levels: Vec<FamilyConstant> = families(op, resolutions, seed)?
        .iter()
        .map(|(res, fam)| family_constant(*res, fam, |m| Ok(sobolev_check(&m.u, &m.op, &g, rho, r)?.min_constant)))
        .collect::<Result<_>>()?;
    let maxima: Vec<f64> = levels.iter().map(|l| l.max_constant).collect();
    Ok(SobolevReport { rho, r, drift: max_min_ratio(&maxima), verdict: stable(&maxima), levels })
}

/// Exponents approaching the excluded value `½`.
pub const HALF_SWEEP: [f64; 3] = [0.4, 0.45, 0.49];

#[derive(Debug, Clone, Serialize)]
pub struct CaccioppoliReport {
    pub p: f64,
    pub rho: f64,
    pub r: f64,
    pub levels: Vec<FamilyConstant>,
    pub drift: f64,
    /// `(p, max constant)` on the finest family as `p → ½`; reported, not asserted.
    pub half_sweep: Vec<(f64, f64)>,
    pub half_sweep_grows: bool,
    pub verdict: bool,
}

pub fn caccioppoli_report(op: &OperatorSpec, resolutions: &[usize], rho: f64, r: f64, seed: u64) -> Result<CaccioppoliReport> {
    let g = KolmogorovGroup::from_spec(op)?;
    let p = 1.0;
    let fams = families(op, resolutions, seed)?;
    let levels: Vec<FamilyConstant> = fams
        .iter()
        .map(|(res, fam)| family_constant(*res, fam, |m| Ok(caccioppoli_check(&m.u, &m.op, &g, p, rho, r)?.min_constant)))
        .collect::<Result<_>>()?;
    let maxima: Vec<f64> = levels.iter().map(|l| l.max_constant).collect();
    let finest = &fams.last().ok_or_else(|| Error::Domain("no resolutions".into()))?.1;
    let half_sweep: Vec<(f64, f64)> = HALF_SWEEP
        .iter()
        .map(|&s| {
            let c = finest.iter().map(|m| Ok(caccioppoli_check(&m.u, &m.op, &g, s, rho, r)?.min_constant)).collect::<Result<Vec<_>>>()?;
            Ok((s, c.into_iter().fold(0.0, f64::max)))
        })
        .collect::<Result<_>>()?;
    let half_sweep_grows = half_sweep.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(CaccioppoliReport { p, rho, r, drift: max_min_ratio(&maxima), verdict: stable(&maxima), levels, half_sweep, half_sweep_grows })
}

// ---------------------------------------------------------------- Moser

#[derive(Debug, Clone, Serialize)]
pub struct BracketRun {
    pub m: i32,
    pub p_m: f64,
    pub report: MoserReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct MoserRun {
    pub p: f64,
    pub raw: MoserReport,
    /// Present when `p > 0` violates the gap condition.
    pub bracketed: Option<BracketRun>,
    /// Exponent actually used for the sweep and verdict.
    pub effective_p: f64,
    pub sweep: SweepFit,
    /// `|log K(2u) − log K(u)|`.
    pub scaling_gap: f64,
    /// Inf form and its gap to the sup form on the same data (`p < 0` only).
    pub inf: Option<InfReport>,
    pub duality_gap: Option<f64>,
    pub verdict: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MoserBlock {
    pub resolution: usize,
    pub one_sided: bool,
    pub runs: Vec<MoserRun>,
    pub range_table: Option<RangeTable>,
    pub verdict: bool,
}

/// Scaling tolerance on the fitted constant under `u → 2u`.
pub const SCALING_TOLERANCE: f64 = 1e-10;
/// Relative tolerance between the inf form and the sup form at `p < 0`.
pub const DUALITY_TOLERANCE: f64 = 0.01;

/// Moser chain with bracketing, sweep, `u → 2u` invariance and, for `p < 0`, the inf-form duality.
pub fn moser_run(family: &[Member], g: &KolmogorovGroup, ex: &ExponentSet, p: f64, rho: f64, r: f64, one_sided: bool) -> Result<MoserRun> {
    let raw = moser_iterate(family, g, ex, p, rho, r, one_sided)?;
    let bracketed = if p > 0.0 && !raw.schedule.gap_ok() {
        let (m, p_m) = bracket_exponent(p, ex.alpha, ex.beta);
        Some(BracketRun { m, p_m, report: moser_iterate(family, g, ex, p_m, rho, r, one_sided)? })
    } else {
        None
    };
    let (effective_p, main) = match &bracketed {
        Some(b) => (b.p_m, &b.report),
        None => (p, &raw),
    };
    let sweep = moser_sweep(family, g, ex, effective_p, r, one_sided)?;
    let doubled: Vec<Member> = family.iter().map(|m| m.u.scale(2.0).map(|u| m.with_values(u))).collect::<Result<_>>()?;
    let scaled = moser_iterate(&doubled, g, ex, effective_p, rho, r, one_sided)?;
    let scaling_gap = (scaled.log_fitted_constant - main.log_fitted_constant).abs();
    let (inf, duality_gap) = if p < 0.0 && !one_sided {
        let inf = inf_estimate_check(family, g, p, rho, r)?;
        let shift = 9.0 * g.blocks.scaling_dim() as f64 * (r - rho).ln();
        let inverted: Vec<Member> = family.iter().map(|m| m.u.map(|v| 1.0 / v).map(|u| m.with_values(u))).collect::<Result<_>>()?;
        let flipped = moser_iterate(&inverted, g, ex, -p, rho, r, false)?;
        let mut gap = 0.0f64;
        for ((a, b), c) in raw.members.iter().zip(&flipped.members).zip(&inf.members) {
            gap = gap.max((a.log_constant - shift - c.log_constant).exp_m1().abs());
            gap = gap.max((b.log_constant - shift - c.log_constant).exp_m1().abs());
        }
        (Some(inf), Some(gap))
    } else {
        (None, None)
    };
    let verdict = main.verdict
        && main.levels_converged
        && sweep.pass
        && scaling_gap <= SCALING_TOLERANCE
        && inf.as_ref().is_none_or(|i| i.verdict)
        && duality_gap.is_none_or(|d| d < DUALITY_TOLERANCE);
    Ok(MoserRun { p, raw, bracketed, effective_p, sweep, scaling_gap, inf, duality_gap, verdict })
}

/// Solutions, max-envelopes (sub-solutions) and min-envelopes (super-solutions) on one grid.
pub fn tagged_families(op: &OperatorSpec, res: usize, seed: u64) -> Result<Vec<(Tag, Vec<Member>)>> {
    let spec = unit_box(op.n, res)?;
    let translates = kernel_translates(op, &spec, 5, seed)?;
    let sub = envelope_family(&translates, Envelope::Max)?;
    let sup = envelope_family(&translates, Envelope::Min)?;
    let mut solutions = translates;
    solutions.push(fd_member(op, res)?);
    Ok(vec![(Tag::Solution, solutions), (Tag::Sub, sub), (Tag::Super, sup)])
}

/// Moser blocks per configured resolution. Resolutions too coarse to place the minimum node count
/// in the inner cylinder are returned in the second list; an error only if none qualifies.
pub fn moser_blocks(cfg: &ExperimentConfig, op: &OperatorSpec, one_sided: bool) -> Result<(Vec<MoserBlock>, Vec<usize>)> {
    let g = KolmogorovGroup::from_spec(op)?;
    let ex = op.exponents()?;
    let ps: Vec<f64> = if one_sided {
        let neg: Vec<f64> = cfg.p.iter().copied().filter(|p| *p < 0.0).collect();
        if neg.is_empty() {
            vec![-1.0]
        } else {
            neg
        }
    } else {
        cfg.p.clone()
    };
    let finest = cfg.resolutions.iter().copied().max();
    let mut blocks = Vec::new();
    let mut skipped = Vec::new();
    for &res in &cfg.resolutions {
        check_budget(op.n, res)?;
        let fams = tagged_families(op, res, cfg.seed)?;
        let solutions = &fams[0].1;
        let runs: Vec<MoserRun> =
            match ps.iter().map(|&p| moser_run(solutions, &g, &ex, p, cfg.rho, cfg.r, one_sided)).collect::<Result<_>>() {
                Ok(runs) => runs,
                Err(Error::EmptyDomain { .. }) => {
                    skipped.push(res);
                    continue;
                }
                Err(e) => return Err(e),
            };
        let range_table =
            if !one_sided && Some(res) == finest { Some(subsolution_range_check(&fams, &g, &ex, cfg.rho, cfg.r)?) } else { None };
        let verdict = runs.iter().all(|r| r.verdict) && range_table.as_ref().is_none_or(|t| t.matches);
        blocks.push(MoserBlock { resolution: res, one_sided, runs, range_table, verdict });
    }
    if blocks.is_empty() {
        return Err(Error::EmptyDomain { resolution: vec![finest.unwrap_or(0); op.n + 1] });
    }
    Ok((blocks, skipped))
}

// ---------------------------------------------------------------- orchestration

/// Smallest configured resolution, for CSV artifacts.
fn coarsest(cfg: &ExperimentConfig) -> Result<usize> {
    cfg.resolutions.iter().copied().min().ok_or_else(|| Error::Domain("no resolutions configured".into()))
}

struct Outcome {
    verdict: bool,
    constants: BTreeMap<String, f64>,
    details: serde_json::Value,
    csv: Vec<(String, GridFunction)>,
}

fn run_kind(kind: ExperimentKind, cfg: &ExperimentConfig, op: &OperatorSpec) -> Result<Outcome> {
    let mut constants = BTreeMap::new();
    let (verdict, details, csv) = match kind {
        ExperimentKind::Structure => {
            let rep = structure_report(op, cfg.rho, cfg.r, cfg.seed)?;
            constants.insert("inclusion_constant".into(), rep.inclusion_constant);
            constants.insert("quasi_triangle_constant".into(), rep.quasi_triangle_constant);
            constants.insert("cutoff_c0".into(), rep.cutoff.c0);
            constants.insert("cutoff_c1".into(), rep.cutoff.c1);
            let g = KolmogorovGroup::from_spec(op)?;
            let profile = CutoffProfile::new(cfg.rho.max(0.5), cfg.r.clamp(cfg.rho.max(0.5) + 1e-3, 1.0))?;
            let res = coarsest(cfg)?;
            check_budget(op.n, res)?;
            let psi = GridFunction::try_from_fn(unit_box(op.n, res)?, |x, t| Ok(profile.psi(&g, &GroupPoint::from_slice(x, t)?)))?;
            (rep.verdict, to_value(&rep)?, vec![("cutoff".to_string(), psi)])
        }
        ExperimentKind::Kernel => {
            let rep = kernel_report(op, &cfg.resolutions, cfg.seed)?;
            constants.insert("comparison_constant".into(), rep.comparison_constant);
            (rep.verdict, to_value(&rep)?, vec![("grid".to_string(), kernel_grid(op, cfg)?)])
        }
        ExperimentKind::Potentials => {
            let rep = potentials_report(op, &cfg.resolutions, cfg.seed)?;
            if let Some(l) = rep.norms.levels.last() {
                constants.insert("value_ratio".into(), l.max_ratio_value);
                constants.insert("gradient_ratio".into(), l.max_ratio_gradient);
            }
            let res = coarsest(cfg)?;
            let d = random_densities(op.n, 1, cfg.seed).remove(0);
            let f = GridFunction::from_fn(unit_box(op.n, res)?, |x, t| d(x, t))?;
            (rep.verdict, to_value(&rep)?, vec![("density".to_string(), f)])
        }
        ExperimentKind::Sobolev => {
            let rep = sobolev_report(op, &cfg.resolutions, cfg.rho, cfg.r, cfg.seed)?;
            for l in &rep.levels {
                constants.insert(format!("C_res{}", l.resolution), l.max_constant);
            }
            (rep.verdict, to_value(&rep)?, vec![("fd_member".to_string(), fd_member(op, coarsest(cfg)?)?.u)])
        }
        ExperimentKind::Caccioppoli => {
            let rep = caccioppoli_report(op, &cfg.resolutions, cfg.rho, cfg.r, cfg.seed)?;
            for l in &rep.levels {
                constants.insert(format!("C_res{}", l.resolution), l.max_constant);
            }
            (rep.verdict, to_value(&rep)?, vec![("fd_member".to_string(), fd_member(op, coarsest(cfg)?)?.u)])
        }
        ExperimentKind::Moser | ExperimentKind::MoserOneside => {
            let one_sided = kind == ExperimentKind::MoserOneside;
            let (blocks, skipped) = moser_blocks(cfg, op, one_sided)?;
            for b in &blocks {
                for run in &b.runs {
                    let main = run.bracketed.as_ref().map_or(&run.raw, |br| &br.report);
                    constants.insert(format!("K_p{}_res{}", run.p, b.resolution), main.fitted_constant);
                    constants.insert(format!("exponent_p{}_res{}", run.p, b.resolution), run.sweep.max_exponent);
                }
            }
            let verdict = blocks.iter().all(|b| b.verdict);
            let details = serde_json::json!({ "moser_reports": to_value(&blocks)?, "skipped_resolutions": skipped });
            (verdict, details, vec![("fd_member".to_string(), fd_member(op, coarsest(cfg)?)?.u)])
        }
        ExperimentKind::Representation => {
            let principal = OperatorSpec::principal(op.b.clone(), op.m0, op.q)?;
            let ev = KernelEvaluator::from_spec(op)?;
            for &res in &cfg.resolutions {
                check_budget(op.n, res)?;
            }
            let bump = Bump::standard(op.n);
            let rep: RepresentationReport = representation_check(&ev, &principal, &bump, &cfg.resolutions, LATTICE)?;
            let finest = rep.levels.last().map_or(f64::INFINITY, |l| l.relative_l2_error);
            constants.insert("relative_l2_error".into(), finest);
            let u = GridFunction::from_fn(unit_box(op.n, coarsest(cfg)?)?, |x, t| bump.eval(x, t))?;
            let ku = discrete_residual(&u, &principal, Scheme::Centered)?;
            (rep.monotone && finest < 0.02, to_value(&rep)?, vec![("bump_residual".to_string(), ku)])
        }
    };
    Ok(Outcome { verdict, constants, details, csv })
}

/// Runs the experiments in order, writing `<name>.json`, `<name>_<artifact>.csv` and a combined
/// `report.json` into `out`. A failing experiment aborts the run after the partial report is written.
pub fn run(cfg: &ExperimentConfig, kinds: &[ExperimentKind], out: &Path) -> Result<Report> {
    std::fs::create_dir_all(out)?;
    let mut report = Report::new(cfg.clone());
    let op = match cfg.operator() {
        Ok(op) => op,
        Err(e) => {
            report.fail(e.to_string());
            write_json(&out.join("report.json"), &report)?;
            return Err(e);
        }
    };
    for &kind in kinds {
        let name = kind.name();
        match run_kind(kind, cfg, &op) {
            Ok(o) => {
                let mut artifacts = Vec::new();
                for (label, grid) in &o.csv {
                    let file = format!("{name}_{label}.csv");
                    std::fs::write(out.join(&file), grid.to_csv())?;
                    artifacts.push(file);
                }
                let rec = ExperimentRecord { name: name.into(), verdict: o.verdict, fitted_constants: o.constants, artifacts, details: o.details };
                write_json(&out.join(format!("{name}.json")), &rec)?;
                report.push(rec);
                write_json(&out.join("report.json"), &report)?;
            }
            Err(e) => {
                report.fail(format!("{name}: {e}"));
                write_json(&out.join("report.json"), &report)?;
                return Err(e);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_matches_closed_form() {
        let ev = KernelEvaluator::from_spec(&OperatorSpec::langevin()).unwrap();
        let m = kernel_mass(&ev, 1.0).unwrap().unwrap();
        assert!((m - 1.0).abs() < 1e-9, "{m}");
        let b = nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -0.25]);
        let ev = KernelEvaluator::new(b, 1).unwrap();
        let m = kernel_mass(&ev, 2.0).unwrap().unwrap();
        assert!((m / (-2.0f64 * 0.25).exp() - 1.0).abs() < 1e-9, "{m}");
    }

    #[test]
    fn residual_decays_quadratically() {
        let op = OperatorSpec::langevin();
        let ev = KernelEvaluator::from_spec(&op).unwrap();
        let lv: Vec<ResidualLevel> = [16, 32].iter().map(|&r| kernel_residual(&ev, &op, r).unwrap()).collect();
        let s = residual_slope(&lv).unwrap();
        assert!((s - 2.0).abs() < 0.3, "{s}");
    }

    #[test]
    fn potential_exponent_is_admissible() {
        assert_eq!(potential_exponent(4), 2.0);
        assert_eq!(potential_exponent(1), 1.25);
    }

    #[test]
    fn budget_rejects_large_grids() {
        assert!(check_budget(2, 64).is_ok());
        assert!(matches!(check_budget(4, 64), Err(Error::Budget(_))));
    }
}
