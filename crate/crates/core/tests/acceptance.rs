//! Acceptance gate: one PASS/FAIL line per criterion, each under its wall-clock budget.
//! Exits non-zero when any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kolmo::config::{ExperimentConfig, ExperimentKind};
use kolmo::estimates::representation::{representation_check, Bump};
use kolmo::experiment::{
    caccioppoli_report, kernel_mass, kernel_residual, moser_blocks, potentials_report, run, sobolev_report, MoserBlock,
};
use kolmo::kernel::KernelEvaluator;
use kolmo::lie::{GroupPoint, KolmogorovGroup};
use kolmo::operator::{detect_block_structure, exponents, kalman_rank, OperatorSpec, Smoothness};
use kolmo::quadrature::gauss_legendre;

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

// ---------------------------------------------------------------- 1. structure

/// `C(t)` by 48-point Gauss–Legendre on `s ↦ exp(−sB) P₀ P₀ᵀ exp(−sB)ᵀ`, matrix exponential from
/// nalgebra.
fn covariance_oracle(b: &DMatrix<f64>, m0: usize, t: f64) -> DMatrix<f64> {
    let n = b.nrows();
    let rule = gauss_legendre(48);
    let mut c = DMatrix::zeros(n, n);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let s = 0.5 * t * (x + 1.0);
        let e = (b * -s).exp();
        let p = e.columns(0, m0).into_owned();
        c += &p * p.transpose() * (0.5 * t * w);
    }
    c
}

/// Positive definiteness through the correlation matrix, which removes the `t^{α_i}` scales.
fn oracle_definite(c: &DMatrix<f64>) -> bool {
    let n = c.nrows();
    if (0..n).any(|i| !(c[(i, i)] > 0.0)) {
        return false;
    }
    let r = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt());
    r.symmetric_eigenvalues().min() > 1e-8
}

/// Random matrix in block form with block sizes `m`; when `degenerate`, one sub-diagonal block
/// loses a rank and the remaining blocks are zero so nothing else can restore controllability.
fn random_block_matrix(rng: &mut ChaCha8Rng, m: &[usize], degenerate: bool) -> DMatrix<f64> {
    let n: usize = m.iter().sum();
    let start = |j: usize| m[..j].iter().sum::<usize>();
    let mut b = DMatrix::zeros(n, n);
    for j in 1..m.len() {
        let (r0, c0) = (start(j), start(j - 1));
        for r in 0..m[j] {
            for c in 0..m[j - 1] {
                b[(r0 + r, c0 + c)] = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
    }
    if degenerate {
        let j = rng.random_range(1..m.len());
        let (r0, c0) = (start(j), start(j - 1));
        let last = r0 + m[j] - 1;
        for c in 0..m[j - 1] {
            b[(last, c0 + c)] = if m[j] > 1 { b[(r0, c0 + c)] } else { 0.0 };
        }
    } else {
        for j in 0..m.len() {
            for r in start(j)..n {
                for c in start(j)..start(j) + m[j] {
                    if r < start(j) + m[j] || rng.random_bool(0.3) {
                        b[(r, c)] += rng.random_range(-0.3..0.3);
                    }
                }
            }
        }
    }
    b
}

fn structure() -> Check {
    let mut notes = Vec::new();
    let lang = OperatorSpec::langevin().blocks().map_err(err)?;
    let lang_ok = lang.kappa == 1 && lang.m == vec![1, 1] && lang.q_dim == 4;
    notes.push(format!("langevin kappa={} m={:?} Q={}", lang.kappa, lang.m, lang.q_dim));
    let kin = OperatorSpec::kinetic(2).map_err(err)?.blocks().map_err(err)?;
    notes.push(format!("kinetic_2 Q={}", kin.q_dim));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let shapes: [&[usize]; 5] = [&[1, 1], &[1, 1, 1], &[2, 2], &[2, 1], &[2, 2, 1]];
    let mut agree = 0;
    for k in 0..20 {
        let m = shapes[k % shapes.len()];
        let b = random_block_matrix(&mut rng, m, k % 2 == 1);
        let n = b.nrows();
        let kalman = kalman_rank(&b, m[0]).map_err(err)? == n;
        let definite = [1e-3, 1.0].iter().all(|&t| oracle_definite(&covariance_oracle(&b, m[0], t)));
        let classified = detect_block_structure(&b, m[0]).is_ok();
        if kalman == definite && classified == kalman && kalman == (k % 2 == 0) {
            agree += 1;
        }
    }
    notes.push(format!("kalman vs C(t) agreement {agree}/20"));
    Ok((lang_ok && kin.q_dim == 8 && agree == 20, notes.join("; ")))
}

// ---------------------------------------------------------------- 2. exponents

fn exponent_wiring() -> Check {
    let e = exponents(5.0, 4).map_err(err)?;
    let exact = rel(e.alpha, 15.0 / 11.0) < 1e-15
        && rel(e.beta, 1.25) < 1e-15
        && rel(e.mu, 7.5) < 1e-14
        && rel(e.two_beta_mu(), 18.75) < 1e-14
        && (6.0..54.0).contains(&e.two_beta_mu());
    let mut grid_ok = 0;
    for k in 0..50 {
        let q = 3.05 + 0.3 * k as f64;
        let e = exponents(q, 4).map_err(err)?;
        if (e.alpha > e.beta) == (q > 4.5) {
            grid_ok += 1;
        }
    }
    Ok((exact && grid_ok == 50, format!("alpha={} beta={} mu={} 2beta*mu={}; q-grid {grid_ok}/50", e.alpha, e.beta, e.mu, e.two_beta_mu())))
}

// ---------------------------------------------------------------- 3. group

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> GroupPoint {
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    GroupPoint::from_slice(&x, rng.random_range(-1.0..1.0)).expect("finite point")
}

fn dist(a: &GroupPoint, b: &GroupPoint) -> f64 {
    (&a.x - &b.x).amax().max((a.t - b.t).abs())
}

fn group_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let general = DMatrix::from_row_slice(3, 3, &[0.2, 0.0, 0.0, 1.0, -0.1, 0.0, 0.3, 1.0, 0.4]);
    let groups = [
        KolmogorovGroup::from_spec(&OperatorSpec::langevin()).map_err(err)?,
        KolmogorovGroup::new(general.clone(), detect_block_structure(&general, 1).map_err(err)?).map_err(err)?,
    ];
    let mut worst_axiom: f64 = 0.0;
    for g in &groups {
        let n = g.dim();
        let e = GroupPoint::origin(n);
        for _ in 0..1000 {
            let (a, b, c) = (random_point(&mut rng, n), random_point(&mut rng, n), random_point(&mut rng, n));
            let left = g.compose(&g.compose(&a, &b).map_err(err)?, &c).map_err(err)?;
            let right = g.compose(&a, &g.compose(&b, &c).map_err(err)?).map_err(err)?;
            worst_axiom = worst_axiom
                .max(dist(&left, &right))
                .max(dist(&g.compose(&a, &e).map_err(err)?, &a))
                .max(dist(&g.compose(&e, &a).map_err(err)?, &a))
                .max(dist(&g.compose(&a, &g.inverse(&a)).map_err(err)?, &e))
                .max(dist(&g.compose(&g.inverse(&a), &a).map_err(err)?, &e));
        }
    }
    let g = &groups[0];
    let mut worst_norm: f64 = 0.0;
    for _ in 0..1000 {
        let z = random_point(&mut rng, 2);
        let r = rng.random_range(0.1..4.0);
        let lhs = g.hom_norm(&g.dilate(r, &z).map_err(err)?);
        worst_norm = worst_norm.max(rel(lhs, r * g.hom_norm(&z)));
    }
    let q2 = g.blocks.scaling_dim() as i32;
    let jac_exact = [0.25, 0.5, 2.0, 3.0].iter().all(|&r: &f64| g.dilation_jacobian(r) == r.powi(q2));
    Ok((
        worst_axiom < 1e-12 && worst_norm < 1e-10 && jac_exact,
        format!("axioms {worst_axiom:.2e}; norm homogeneity {worst_norm:.2e}; jacobian exact {jac_exact}"),
    ))
}

// ---------------------------------------------------------------- 4. kernel

fn kernel_suite() -> Check {
    let op = OperatorSpec::langevin();
    let ev = KernelEvaluator::from_spec(&op).map_err(err)?;
    // C(1) = [[1, −½], [−½, ⅓]] for B = [[0, 0], [1, 0]].
    let det_c: f64 = 1.0 / 3.0 - 0.25;
    let oracle = 1.0 / (4.0 * PI * det_c.sqrt());
    let g1 = ev.gamma(&GroupPoint::from_slice(&[0.0, 0.0], 1.0).map_err(err)?, &GroupPoint::origin(2)).map_err(err)?;
    let unit_ok = (g1 - oracle).abs() < 1e-12 && (g1 - 3f64.sqrt() / (2.0 * PI)).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_h: f64 = 0.0;
    let q = ev.blocks.q_dim as i32;
    let mut used = 0;
    while used < 1000 {
        let t = rng.random_range(0.05..2.0);
        let z = GroupPoint::from_slice(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], t).map_err(err)?;
        let r = rng.random_range(0.3..3.0);
        let base = ev.gamma0(&z).map_err(err)?;
        if base < 1e-250 {
            continue;
        }
        let scaled = ev.gamma0(&ev.group().dilate(r, &z).map_err(err)?).map_err(err)?;
        worst_h = worst_h.max(rel(scaled, r.powi(-q) * base));
        used += 1;
    }

    let traced = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -0.25]);
    let ev_traced = KernelEvaluator::new(traced, 1).map_err(err)?;
    let mut worst_mass: f64 = 0.0;
    for e in [&ev, &ev_traced] {
        for t in [0.5, 1.0, 2.0] {
            let m = kernel_mass(e, t).map_err(err)?.ok_or("mass quadrature unavailable")?;
            worst_mass = worst_mass.max(rel(m, (-t * e.trace_b()).exp()));
        }
    }

    let levels: Vec<(f64, f64)> = [16, 32, 64]
        .iter()
        .map(|&r| kernel_residual(&ev, &op, r).map(|l| ((1.0 / r as f64).ln(), l.relative_residual.ln())))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = levels.into_iter().unzip();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    Ok((
        unit_ok && worst_h < 1e-9 && worst_mass < 1e-6 && (slope - 2.0).abs() <= 0.3,
        format!("Gamma(0,1)={g1:.15} homogeneity {worst_h:.2e} mass {worst_mass:.2e} residual slope {slope:.3}"),
    ))
}

// ---------------------------------------------------------------- 5. potentials

fn potential_suite() -> Check {
    let rep = potentials_report(&OperatorSpec::langevin(), &[16, 24, 32], 42).map_err(err)?;
    let n = &rep.norms;
    let ok = n.p == 2.0 && n.drift_value < 2.0 && n.drift_gradient < 2.0 && rep.ibp.relative_error < 0.01 && n.skipped.is_empty();
    Ok((ok, format!("drift value {:.4} gradient {:.4}; ibp {:.2e} at {}", n.drift_value, n.drift_gradient, rep.ibp.relative_error, rep.ibp.resolution)))
}

// ---------------------------------------------------------------- 6. inequalities

fn inequality_suite() -> Check {
    let op = OperatorSpec::langevin();
    let res = [16, 24, 32];
    let fam = kolmo::estimates::family::standard_family(&op, 16, 42).map_err(err)?;
    let rough = &fam[5].op;
    let family_ok = fam.len() == 6
        && rough.drift_b[0].eval(&[0.7, 0.0], 0.0).map_err(err)? == 0.7
        && (rough.zero_order.eval(&[0.3, 0.0], 0.0).map_err(err)? + 0.5 * 0.9f64.sin().abs()).abs() < 1e-15
        && matches!(rough.zero_order.smoothness, Smoothness::Measurable)
        && op.q == 5.0;
    let sob = sobolev_report(&op, &res, 0.5, 1.0, 42).map_err(err)?;
    let cac = caccioppoli_report(&op, &res, 0.5, 1.0, 42).map_err(err)?;
    let finite = |levels: &[kolmo::experiment::FamilyConstant]| levels.iter().all(|l| l.max_constant.is_finite() && l.max_constant > 0.0);
    let ok = family_ok && finite(&sob.levels) && finite(&cac.levels) && sob.drift < 2.0 && cac.drift < 2.0;
    Ok((ok, format!("family ok {family_ok}; sobolev drift {:.4}; caccioppoli drift {:.4}", sob.drift, cac.drift)))
}

// ---------------------------------------------------------------- 7. moser

fn moser_suite() -> Check {
    let op = OperatorSpec::langevin();
    let mut cfg = ExperimentConfig::langevin();
    cfg.resolutions = vec![64];
    cfg.p = vec![1.0, -1.0];
    let (two, skipped_two) = moser_blocks(&cfg, &op, false).map_err(err)?;
    let (one, skipped_one) = moser_blocks(&cfg, &op, true).map_err(err)?;
    let bound = 9.0 * 6.0;
    let mut notes = Vec::new();
    let check_block = |b: &MoserBlock, notes: &mut Vec<String>| {
        let mut ok = b.verdict;
        for r in &b.runs {
            let main = r.bracketed.as_ref().map_or(&r.raw, |br| &br.report);
            ok &= main.max_deepest_level_gap < 0.05 && r.sweep.max_exponent <= bound && r.scaling_gap <= 1e-10;
            ok &= r.duality_gap.is_none_or(|d| d < 0.01);
            notes.push(format!(
                "{}p={} level gap {:.4} sweep exp {:.3} 2u gap {:.1e}{}",
                if b.one_sided { "one-sided " } else { "" },
                r.p,
                main.max_deepest_level_gap,
                r.sweep.max_exponent,
                r.scaling_gap,
                r.duality_gap.map_or(String::new(), |d| format!(" duality {d:.1e}"))
            ));
        }
        ok
    };
    let mut ok = skipped_two.is_empty() && skipped_one.is_empty() && two.len() == 1 && one.len() == 1;
    ok &= check_block(&two[0], &mut notes);
    ok &= check_block(&one[0], &mut notes);
    let table = two[0].range_table.as_ref().ok_or("range table missing")?;
    ok &= table.matches;
    notes.push(format!("range table matches {}", table.matches));
    Ok((ok, notes.join("; ")))
}

// ---------------------------------------------------------------- 8. representation

fn representation_suite() -> Check {
    let op = OperatorSpec::langevin();
    let ev = KernelEvaluator::from_spec(&op).map_err(err)?;
    let rep = representation_check(&ev, &op, &Bump::standard(2), &[16, 32, 64], 12).map_err(err)?;
    let errs: Vec<f64> = rep.levels.iter().map(|l| l.relative_l2_error).collect();
    let ok = rep.monotone && errs.windows(2).all(|w| w[1] < w[0]) && errs[2] < 0.02;
    Ok((ok, format!("relative L2 errors {errs:.4?}")))
}

// ---------------------------------------------------------------- 9. determinism

fn read_jsons(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json" || x == "csv"))
        .map(|p| Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?)))
        .collect::<Result<_, String>>()?;
    out.sort();
    Ok(out)
}

fn determinism() -> Check {
    let mut cfg = ExperimentConfig::langevin();
    cfg.resolutions = vec![16, 24];
    let kinds = [
        ExperimentKind::Structure,
        ExperimentKind::Kernel,
        ExperimentKind::Sobolev,
        ExperimentKind::Caccioppoli,
        ExperimentKind::Representation,
    ];
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    run(&cfg, &kinds, a.path()).map_err(err)?;
    run(&cfg, &kinds, b.path()).map_err(err)?;
    let (fa, fb) = (read_jsons(a.path())?, read_jsons(b.path())?);
    let same = fa == fb && fa.len() >= kinds.len() + 1;
    Ok((same, format!("{} files compared", fa.len())))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 9] = [
        ("structure", Duration::from_secs(1), structure),
        ("exponents", Duration::from_secs(1), exponent_wiring),
        ("group", Duration::from_secs(5), group_suite),
        ("kernel", Duration::from_secs(30), kernel_suite),
        ("potentials", Duration::from_secs(120), potential_suite),
        ("inequalities", Duration::from_secs(300), inequality_suite),
        ("moser", Duration::from_secs(600), moser_suite),
        ("representation", Duration::from_secs(120), representation_suite),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && elapsed <= *budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {}. {name} [{:.2}s / {}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
