//! Moser iteration measured on grids.
//!
//! With `v = u^{p/(2β)}`, `ρ_n = ρ + 2^{−n}(r−ρ)` and the chain step
//!
//! ```text
//! ‖v‖_{2α^{n+1}, Q_{ρ_{n+1}}} ≤ (K_n / (ρ_n − ρ_{n+1})²)^{1/α^n} ‖v‖_{2βα^n, Q_{ρ_n}},
//! ```
//!
//! the level norms approach `sup_{Q_ρ} v`, giving `sup_{Q_ρ} u^p ≤ K (r−ρ)^{−9(Q+2)} ∫_{Q_r} u^p`.
//! Every quantity is kept as a logarithm so that large exponents neither overflow nor underflow.

use rayon::prelude::*;
use serde::Serialize;

use super::family::{Member, Tag};
use super::norms::{log_abs, log_integral_pow};
use super::inequalities::coefficient_norms;
use crate::error::{Error, Result};
use crate::lie::KolmogorovGroup;
use crate::operator::ExponentSet;

/// Level exponents stop growing once `2α^n` reaches this value.
pub const LEVEL_TARGET: f64 = 1000.0;
pub const MAX_LEVELS: usize = 200;
/// Fewest nodes allowed inside `Q_ρ`.
pub const MIN_NODES: usize = 1000;
/// Fewest levels for a meaningful chain.
pub const MIN_LEVELS: usize = 3;
/// Smallest factor between the largest constant of the fitting half and the acceptance envelope.
pub const ENVELOPE_SLACK: f64 = 2.0;
/// Tolerance for the deepest level norm against the grid maximum.
pub const LEVEL_TOLERANCE: f64 = 0.05;

/// `δ = |q − (Q+2)/2| / (Q+2)²`.
pub fn default_delta(q: f64, q_dim: usize) -> f64 {
    let qd2 = q_dim as f64 + 2.0;
    (q - qd2 / 2.0).abs() / (qd2 * qd2)
}

/// `p_m = α^m(α+1)/(2β)` with `p_m ≤ p < p_{m+1}`, for `p > 0`.
pub fn bracket_exponent(p: f64, alpha: f64, beta: f64) -> (i32, f64) {
    let base = (alpha + 1.0) / (2.0 * beta);
    let mut m = ((p / base).ln() / alpha.ln()).floor() as i32;
    // Rounding can leave `p` just outside the bracket.
    while base * alpha.powi(m) > p {
        m -= 1;
    }
    while base * alpha.powi(m + 1) <= p {
        m += 1;
    }
    (m, base * alpha.powi(m))
}

#[derive(Debug, Clone, Serialize)]
pub struct MoserSchedule {
    pub p: f64,
    pub rho: f64,
    pub r: f64,
    pub delta: f64,
    pub n_max: usize,
    /// `ρ_0 … ρ_{n_max}`.
    pub radii: Vec<f64>,
    /// `p_n = α^n p/(2β)`.
    pub exponents: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub gamma: f64,
    /// Levels `n` with `|pα^n − β| < 2βδ`.
    pub gap_violations: Vec<usize>,
}

impl MoserSchedule {
    pub fn new(p: f64, rho: f64, r: f64, ex: &ExponentSet, delta: Option<f64>) -> Result<Self> {
        if p == 0.0 || !p.is_finite() {
            return Err(Error::Domain(format!("iteration exponent must be finite and nonzero, got {p}")));
        }
        if !(0.0 < rho && rho < r && r <= 1.0) {
            return Err(Error::Domain(format!("need 0 < rho < r <= 1, got rho = {rho}, r = {r}")));
        }
        let (alpha, beta) = (ex.alpha, ex.beta);
        if !(alpha > 1.0) {
            return Err(Error::Domain(format!("alpha = {alpha} must exceed 1")));
        }
        let delta = delta.unwrap_or_else(|| default_delta(ex.q, ex.q_dim));
        let mut n_max = 0;
        while 2.0 * alpha.powi(n_max as i32) < LEVEL_TARGET && n_max < MAX_LEVELS {
            n_max += 1;
        }
        let radii = (0..=n_max).map(|n| rho + (r - rho) / 2f64.powi(n as i32)).collect();
        let exponents = (0..=n_max).map(|n| alpha.powi(n as i32) * p / (2.0 * beta)).collect();
        let gap_violations = (0..=n_max).filter(|&n| (p * alpha.powi(n as i32) - beta).abs() < 2.0 * beta * delta).collect();
        Ok(MoserSchedule { p, rho, r, delta, n_max, radii, exponents, alpha, beta, mu: ex.mu, gamma: ex.gamma, gap_violations })
    }

    pub fn gap_ok(&self) -> bool {
        self.gap_violations.is_empty()
    }
}

/// One level of the measured chain.
#[derive(Debug, Clone, Serialize)]
pub struct LevelNorm {
    pub n: usize,
    pub radius: f64,
    /// `2α^n` (for `n = 0`: `2β` on `Q_r`).
    pub exponent: f64,
    pub log_norm: f64,
    pub nodes: usize,
    /// `log K_n` of the chain step leaving this level (absent on the last level).
    pub log_step_constant: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberMoser {
    pub label: String,
    pub tag: Tag,
    pub levels: Vec<LevelNorm>,
    /// `log sup_{Q_ρ} v`.
    pub log_sup_v: f64,
    /// `|‖v‖_{deepest} / sup v − 1|`.
    pub deepest_level_gap: f64,
    pub log_sup_up: f64,
    pub log_integral_up: f64,
    /// `γ log(1 + ‖a‖² + ‖b‖² + ‖c‖)` with `L^q(Q_r)` norms.
    pub log_coefficient_factor: f64,
    /// `log(sup u^p (r−ρ)^{9(Q+2)} / ∫ u^p)` minus the coefficient factor.
    pub log_constant: f64,
    /// `log(sup v (r−ρ)^μ / ‖v‖_{2β,Q_r})`.
    pub log_k_tilde: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MoserReport {
    pub schedule: MoserSchedule,
    pub one_sided: bool,
    pub members: Vec<MemberMoser>,
    /// Largest log constant of the even-indexed members widened by their log-range (see `fit_envelope`).
    pub log_envelope: f64,
    pub fitted_constant: f64,
    pub log_fitted_constant: f64,
    pub max_deepest_level_gap: f64,
    pub levels_converged: bool,
    pub envelope_holds: bool,
    pub verdict: bool,
    pub notes: Vec<String>,
}

fn member_moser(m: &Member, g: &KolmogorovGroup, sched: &MoserSchedule, one_sided: bool) -> Result<MemberMoser> {
    let u = &m.u;
    let gauge = m.gauge(g, one_sided)?;
    let inner = gauge.mask(sched.rho)?;
    if inner.len() < MIN_NODES {
        return Err(Error::EmptyDomain { resolution: u.spec.res.clone() });
    }
    let outer = gauge.mask(sched.r)?;
    let p = sched.p;
    if outer.iter().any(|&i| !(u.values()[i] > 0.0)) {
        return Err(Error::Domain(format!("member {} is not strictly positive on Q_r", m.label)));
    }
    let lu = log_abs(u);
    let s = p / (2.0 * sched.beta);
    let lv: Vec<f64> = lu.iter().map(|x| s * x).collect();
    let vol = u.spec.cell_volume();
    let log_norm = |e: f64, mask: &[usize]| log_integral_pow(&lv, e, mask, vol) / e;
    let masks: Vec<Vec<usize>> = sched.radii.iter().map(|&rad| gauge.mask(rad)).collect::<Result<_>>()?;
    let mut levels = Vec::with_capacity(sched.n_max + 1);
    for n in 0..=sched.n_max {
        let e = if n == 0 { 2.0 * sched.beta } else { 2.0 * sched.alpha.powi(n as i32) };
        levels.push(LevelNorm {
            n,
            radius: sched.radii[n],
            exponent: e,
            log_norm: log_norm(e, &masks[n]),
            nodes: masks[n].len(),
            log_step_constant: None,
        });
    }
    for n in 0..sched.n_max {
        let an = sched.alpha.powi(n as i32);
        let base = log_norm(2.0 * sched.beta * an, &masks[n]);
        let step = sched.radii[n] - sched.radii[n + 1];
        levels[n].log_step_constant = Some(an * (levels[n + 1].log_norm - base) + 2.0 * step.ln());
    }
    let log_sup_v = inner.iter().map(|&i| lv[i]).fold(f64::NEG_INFINITY, f64::max);
    let deepest = levels.last().expect("at least one level").log_norm;
    let deepest_level_gap = (deepest - log_sup_v).exp_m1().abs();
    let log_sup_up = inner.iter().map(|&i| p * lu[i]).fold(f64::NEG_INFINITY, f64::max);
    let log_integral_up = log_integral_pow(&lu, p, &outer, vol);
    let qd2 = g.blocks.scaling_dim() as f64;
    let d = sched.r - sched.rho;
    let log_coefficient_factor = log_coefficient_factor(m, &outer)?;
    let log_constant = log_sup_up - log_integral_up + 9.0 * qd2 * d.ln() - log_coefficient_factor;
    let log_k_tilde = log_sup_v + sched.mu * d.ln() - levels[0].log_norm;
    let (umin, umax) = outer.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(u.values()[i]), b.max(u.values()[i])));
    Ok(MemberMoser {
        label: m.label.clone(),
        tag: m.tag,
        levels,
        log_sup_v,
        deepest_level_gap,
        log_sup_up,
        log_integral_up,
        log_coefficient_factor,
        log_constant,
        log_k_tilde,
        degenerate: umin == umax,
    })
}

/// `γ log(1 + ‖a‖² + ‖b‖² + ‖c‖)`, the coefficient dependence of the constant; zero for the
/// principal part.
fn log_coefficient_factor(m: &Member, outer: &[usize]) -> Result<f64> {
    let norms = coefficient_norms(&m.op, &m.u, outer)?;
    let gamma = m.op.exponents()?.gamma;
    Ok(gamma * (1.0 + norms.a * norms.a + norms.b * norms.b + norms.c).ln())
}

/// Splits a family into a fitting half (even indices) and a testing half (odd indices). The
/// envelope is the fitting maximum widened by the fitting half's own log-range, and by at least
/// [`ENVELOPE_SLACK`]: the estimate is one-sided, so member constants spread over many orders of
/// magnitude and only their maximum is bounded.
pub(crate) fn fit_envelope(log_constants: &[f64]) -> (f64, bool) {
    let fit = log_constants.iter().step_by(2).cloned().fold(f64::NEG_INFINITY, f64::max);
    let low = log_constants.iter().step_by(2).cloned().fold(f64::INFINITY, f64::min);
    let env = fit + ENVELOPE_SLACK.ln().max(fit - low);
    let holds = log_constants.iter().skip(1).step_by(2).all(|&c| c <= env);
    (env, holds)
}

/// Runs the measured chain on each member and fits the family envelope.
pub fn moser_iterate(family: &[Member], g: &KolmogorovGroup, ex: &ExponentSet, p: f64, rho: f64, r: f64, one_sided: bool) -> Result<MoserReport> {
    if family.is_empty() {
        return Err(Error::Domain("empty family".into()));
    }
    if one_sided && p >= 0.0 {
        return Err(Error::Domain("the one-sided estimate is stated for p < 0".into()));
    }
    let schedule = MoserSchedule::new(p, rho, r, ex, None)?;
    if schedule.n_max + 1 < MIN_LEVELS {
        return Err(Error::Budget(format!("only {} levels before 2α^n reaches {LEVEL_TARGET}", schedule.n_max + 1)));
    }
    let members: Vec<MemberMoser> = family.par_iter().map(|m| member_moser(m, g, &schedule, one_sided)).collect::<Result<_>>()?;
    let logs: Vec<f64> = members.iter().map(|m| m.log_constant).collect();
    let (log_envelope, envelope_holds) = fit_envelope(&logs);
    let log_fitted = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let max_gap = members.iter().map(|m| m.deepest_level_gap).fold(0.0, f64::max);
    let mut notes = Vec::new();
    if members.iter().any(|m| m.degenerate) {
        notes.push("degenerate member: constant on Q_r, the estimate reduces to 1 <= K meas / (r-rho)^{9(Q+2)}".into());
    }
    if !schedule.gap_ok() {
        notes.push(format!("gap condition fails at levels {:?}", schedule.gap_violations));
    }
    if family.len() < 2 {
        notes.push("single member: no testing half, envelope holds vacuously".into());
    }
    let levels_converged = max_gap <= LEVEL_TOLERANCE;
    Ok(MoserReport {
        schedule,
        one_sided,
        members,
        log_envelope,
        fitted_constant: log_fitted.exp(),
        log_fitted_constant: log_fitted,
        max_deepest_level_gap: max_gap,
        levels_converged,
        envelope_holds,
        verdict: envelope_holds && log_fitted.is_finite(),
        notes,
    })
}

/// [`moser_iterate`] on the lower half-cylinders `Q⁻`, for `p < 0` only.
pub fn one_sided_moser_check(family: &[Member], g: &KolmogorovGroup, ex: &ExponentSet, p: f64, rho: f64, r: f64) -> Result<MoserReport> {
    moser_iterate(family, g, ex, p, rho, r, true)
}

/// Log-log fit of `sup_{Q_ρ} u^p / ∫_{Q_r} u^p` against `r − ρ`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepFit {
    pub gaps: Vec<f64>,
    /// Per member, `log(sup/∫)` at each gap.
    pub log_ratios: Vec<Vec<f64>>,
    /// Per member, minus the fitted slope.
    pub exponents: Vec<f64>,
    pub max_exponent: f64,
    pub bound: f64,
    pub pass: bool,
}

pub const SWEEP_GAPS: [f64; 3] = [0.125, 0.25, 0.5];

pub fn moser_sweep(family: &[Member], g: &KolmogorovGroup, ex: &ExponentSet, p: f64, r: f64, one_sided: bool) -> Result<SweepFit> {
    let mut log_ratios = vec![Vec::new(); family.len()];
    for &d in &SWEEP_GAPS {
        let rep = moser_iterate(family, g, ex, p, r - d, r, one_sided)?;
        for (k, m) in rep.members.iter().enumerate() {
            log_ratios[k].push(m.log_sup_up - m.log_integral_up);
        }
    }
    let xs: Vec<f64> = SWEEP_GAPS.iter().map(|d| d.ln()).collect();
    let exponents: Vec<f64> = log_ratios.iter().map(|ys| -least_squares_slope(&xs, ys)).collect();
    let max_exponent = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bound = 9.0 * g.blocks.scaling_dim() as f64;
    Ok(SweepFit { gaps: SWEEP_GAPS.to_vec(), log_ratios, exponents, max_exponent, bound, pass: max_exponent <= bound })
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Inf-form measurement for `p < 0`: `inf_{Q_ρ} u ≥ (K ∫_{Q_r} u^p)^{1/p}`.
#[derive(Debug, Clone, Serialize)]
pub struct InfMember {
    pub label: String,
    pub inf: f64,
    /// `log ∫_{Q_r} u^{p}`.
    pub log_integral: f64,
    /// `(∫ u^p)^{1/p}`.
    pub mean_form: f64,
    pub log_coefficient_factor: f64,
    /// `log K = p log inf − log ∫ u^p` minus the coefficient factor.
    pub log_constant: f64,
    /// Infima over `Q_s` for increasing `s ∈ [ρ, r)`.
    pub inf_profile: Vec<(f64, f64)>,
    pub inf_monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfReport {
    pub p: f64,
    pub rho: f64,
    pub r: f64,
    pub members: Vec<InfMember>,
    pub log_envelope: f64,
    pub fitted_constant: f64,
    pub verdict: bool,
}

pub fn inf_estimate_check(family: &[Member], g: &KolmogorovGroup, p: f64, rho: f64, r: f64) -> Result<InfReport> {
    if !(p < 0.0) {
        return Err(Error::Domain(format!("inf form needs p < 0, got {p}")));
    }
    if !(0.0 < rho && rho < r && r <= 1.0) {
        return Err(Error::Domain(format!("need 0 < rho < r <= 1, got rho = {rho}, r = {r}")));
    }
    let members: Vec<InfMember> = family
        .iter()
        .map(|m| {
            let u = &m.u;
            let gauge = m.gauge(g, false)?;
            let outer = gauge.mask(r)?;
            if outer.iter().any(|&i| !(u.values()[i] > 0.0)) {
                return Err(Error::Domain(format!("member {} has non-positive values on Q_r", m.label)));
            }
            let inf_on = |s: f64| gauge.mask(s).map(|mk| mk.iter().map(|&i| u.values()[i]).fold(f64::INFINITY, f64::min));
            let inf = inf_on(rho)?;
            let li = log_integral_pow(&log_abs(u), p, &outer, u.spec.cell_volume());
            let profile: Vec<(f64, f64)> = (0..5)
                .map(|k| {
                    let s = rho + (r - rho) * k as f64 / 5.0;
                    inf_on(s).map(|v| (s, v))
                })
                .collect::<Result<_>>()?;
            let inf_monotone = profile.windows(2).all(|w| w[1].1 <= w[0].1);
            let log_coefficient_factor = log_coefficient_factor(m, &outer)?;
            Ok(InfMember {
                label: m.label.clone(),
                inf,
                log_integral: li,
                mean_form: (li / p).exp(),
                log_coefficient_factor,
                log_constant: p * inf.ln() - li - log_coefficient_factor,
                inf_profile: profile,
                inf_monotone,
            })
        })
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = members.iter().map(|m| m.log_constant).collect();
    let (log_envelope, holds) = fit_envelope(&logs);
    let fitted = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let verdict = holds && members.iter().all(|m| m.inf_monotone) && fitted.is_finite();
    Ok(InfReport { p, rho, r, members, log_envelope, fitted_constant: fitted.exp(), verdict })
}

/// One cell of the `(tag, p)` table.
#[derive(Debug, Clone, Serialize)]
pub struct RangeCell {
    pub tag: Tag,
    pub p: f64,
    /// Whether the sub/super-solution clause covers this `(tag, p)`.
    pub covered: bool,
    pub raw_verdict: bool,
    /// Run at `p_m ≤ p < p_{m+1}` when `p` violates the gap condition.
    pub bracket: Option<(i32, f64, bool)>,
    pub verdict: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RangeTable {
    pub cells: Vec<RangeCell>,
    /// Every covered cell passes.
    pub matches: bool,
}

pub const RANGE_EXPONENTS: [f64; 4] = [-1.0, 0.25, 0.75, 1.0];

/// Sub-solutions are covered for `p > ½` or `p < 0`; super-solutions for `0 < p < ½`.
pub fn covered(tag: Tag, p: f64) -> bool {
    (tag.is_sub() && (p > 0.5 || p < 0.0)) || (tag.is_super() && p > 0.0 && p < 0.5)
}

/// Runs the iteration on each tagged family at `p ∈ {−1, ¼, ¾, 1}`.
pub fn subsolution_range_check(families: &[(Tag, Vec<Member>)], g: &KolmogorovGroup, ex: &ExponentSet, rho: f64, r: f64) -> Result<RangeTable> {
    let mut cells = Vec::new();
    for (tag, fam) in families {
        for &p in &RANGE_EXPONENTS {
            let raw = moser_iterate(fam, g, ex, p, rho, r, false)?;
            let bracket = if p > 0.0 && !raw.schedule.gap_ok() {
                let (m, pm) = bracket_exponent(p, ex.alpha, ex.beta);
                let run = moser_iterate(fam, g, ex, pm, rho, r, false)?;
                Some((m, pm, run.verdict))
            } else {
                None
            };
            let verdict = bracket.map_or(raw.verdict, |b| b.2);
            cells.push(RangeCell { tag: *tag, p, covered: covered(*tag, p), raw_verdict: raw.verdict, bracket, verdict });
        }
    }
    let matches = cells.iter().filter(|c| c.covered).all(|c| c.verdict);
    Ok(RangeTable { cells, matches })
}
