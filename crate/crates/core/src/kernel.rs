//! Covariance `C(t)`, the Gaussian fundamental solution `Γ`, its homogeneous
//! counterpart `Γ₀`, and `Γ`-potentials of grid functions.
//!
//! ```text
//! Γ((x,t), 0) = (4π)^{-N/2} det C(t)^{-1/2} exp(-¼⟨C(t)⁻¹x, x⟩ - t·tr B),  t > 0
//! C(t)        = ∫₀ᵗ E(s) A₀ E(s)ᵀ ds
//! ```
//!
//! For a fixed lag `s = t − τ > 0` the map `ξ ↦ Γ(z, (ξ, τ))` is a Gaussian
//! density of mass one with mean `E(−s)x` and covariance `2E(−s)C(s)E(−s)ᵀ`;
//! potentials exploit this by integrating time slices either with a midpoint
//! sum (kernel resolved by the grid) or with tensor Gauss–Hermite rules.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::lie::{Cylinder, GroupPoint, KolmogorovGroup};
use crate::linalg::{nilpotency_index, sym_eig_range, trace};
use crate::operator::{detect_block_structure, BlockStructure, OperatorSpec};
use crate::quadrature::{adaptive_gl_matrix, gauss_hermite_prob};

const CACHE_LIMIT: usize = 1 << 14;

/// Per-lag factorizations.
#[derive(Debug, Clone)]
pub struct LagFactors {
    pub s: f64,
    /// Lower Cholesky factor of `C(s)`.
    pub chol_c: DMatrix<f64>,
    /// `log Γ` normalization: `−N/2 log 4π − ½ log det C(s) − s tr B`.
    pub log_norm: f64,
    pub e_s: DMatrix<f64>,
    pub e_neg: DMatrix<f64>,
    /// `L` with `L Lᵀ = Σ_ξ = 2E(−s)C(s)E(−s)ᵀ`.
    pub sigma_sqrt: DMatrix<f64>,
    /// `L⁻ᵀ`.
    pub sigma_sqrt_inv_t: DMatrix<f64>,
    pub sigma_diag: Vec<f64>,
}

/// `C = D^{1/2} R D^{1/2}` with `R` the correlation matrix; returns the Cholesky factor of `C`
/// and `log det C`, or `None` if `R` is not positive definite.
fn scaled_cholesky(c: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = c.nrows();
    let d: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let sd: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let r = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (sd[i] * sd[j]));
    let ch = r.cholesky()?;
    let l = ch.l();
    if (0..n).any(|i| !(l[(i, i)] > 0.0)) {
        return None;
    }
    let log_det = 2.0 * sd.iter().map(|v| v.ln()).sum::<f64>() + 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let lc = DMatrix::from_fn(n, n, |i, j| sd[i] * l[(i, j)]);
    Some((lc, log_det))
}

/// Solves `L w = y` for lower-triangular `L` in place.
#[inline]
fn forward_sub(l: &DMatrix<f64>, y: &mut [f64]) {
    let n = y.len();
    for i in 0..n {
        let mut v = y[i];
        for j in 0..i {
            v -= l[(i, j)] * y[j];
        }
        y[i] = v / l[(i, i)];
    }
}

/// Solves `Lᵀ w = y` for lower-triangular `L` in place.
#[inline]
fn backward_sub_t(l: &DMatrix<f64>, y: &mut [f64]) {
    let n = y.len();
    for i in (0..n).rev() {
        let mut v = y[i];
        for j in i + 1..n {
            v -= l[(j, i)] * y[j];
        }
        y[i] = v / l[(i, i)];
    }
}

/// One drift matrix with its lag cache.
#[derive(Debug)]
struct KernelCore {
    group: KolmogorovGroup,
    m0: usize,
    trace_b: f64,
    /// `B^k/k!` when `B` is nilpotent.
    series: Option<Vec<DMatrix<f64>>>,
    quadrature_order: usize,
    cache: RwLock<HashMap<u64, Arc<LagFactors>>>,
}

impl KernelCore {
    fn new(b: DMatrix<f64>, m0: usize, blocks: BlockStructure, quadrature_order: usize) -> Result<Self> {
        let series = nilpotency_index(&b).map(|k| {
            let n = b.nrows();
            let mut out = vec![DMatrix::<f64>::identity(n, n)];
            for j in 1..k {
                let next = &out[j - 1] * &b / j as f64;
                out.push(next);
            }
            out
        });
        let trace_b = trace(&b);
        Ok(KernelCore {
            group: KolmogorovGroup::new(b, blocks)?,
            m0,
            trace_b,
            series,
            quadrature_order,
            cache: RwLock::new(HashMap::new()),
        })
    }

    fn n(&self) -> usize {
        self.group.dim()
    }

    fn covariance(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("covariance needs t > 0, got {t}")));
        }
        let n = self.n();
        let m0 = self.m0;
        match &self.series {
            Some(p) => {
                // Σ_{j,k} (−1)^{j+k} t^{j+k+1}/(j+k+1) P_j A₀ P_kᵀ with P_j = B^j/j!.
                let cols: Vec<DMatrix<f64>> = p.iter().map(|pj| pj.columns(0, m0).into_owned()).collect();
                let mut c = DMatrix::zeros(n, n);
                for (j, pj) in cols.iter().enumerate() {
                    for (k, pk) in cols.iter().enumerate() {
                        let e = (j + k + 1) as i32;
                        let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
                        c += pj * pk.transpose() * (sign * t.powi(e) / e as f64);
                    }
                }
                Ok(c)
            }
            None => {
                let g = &self.group;
                let f = |s: f64| {
                    let e = g.e(s);
                    let ec = e.columns(0, m0).into_owned();
                    &ec * ec.transpose()
                };
                let c = adaptive_gl_matrix(&f, 0.0, t, self.quadrature_order, 1e-12 * t);
                Ok((&c + c.transpose()) * 0.5)
            }
        }
    }

    fn lag(&self, s: f64) -> Result<Arc<LagFactors>> {
        let key = s.to_bits();
        if let Some(f) = self.cache.read().expect("kernel cache lock").get(&key) {
            return Ok(f.clone());
        }
        let f = Arc::new(self.build_lag(s)?);
        let mut w = self.cache.write().expect("kernel cache lock");
        if w.len() >= CACHE_LIMIT {
            w.clear();
        }
        w.insert(key, f.clone());
        Ok(f)
    }

    fn build_lag(&self, s: f64) -> Result<LagFactors> {
        let n = self.n();
        let c = self.covariance(s)?;
        let (chol_c, log_det) = scaled_cholesky(&c).ok_or(Error::Singular { t: s })?;
        let e_s = self.group.e(s);
        let e_neg = self.group.e(-s);
        let sigma_sqrt = &e_neg * &chol_c * 2f64.sqrt();
        let sigma_sqrt_inv_t = sigma_sqrt
            .clone()
            .try_inverse()
            .ok_or(Error::Singular { t: s })?
            .transpose();
        let sigma = &sigma_sqrt * sigma_sqrt.transpose();
        Ok(LagFactors {
            s,
            chol_c,
            log_norm: -0.5 * n as f64 * (4.0 * PI).ln() - 0.5 * log_det - s * self.trace_b,
            e_s,
            e_neg,
            sigma_diag: (0..n).map(|i| sigma[(i, i)].sqrt()).collect(),
            sigma_sqrt,
            sigma_sqrt_inv_t,
        })
    }

    /// `log Γ((y, s), 0)` for `s > 0`.
    fn log_gamma_reduced(&self, f: &LagFactors, y: &[f64]) -> f64 {
        let mut w = y.to_vec();
        forward_sub(&f.chol_c, &mut w);
        f.log_norm - 0.25 * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gamma(&self, z: &GroupPoint, zeta: &GroupPoint) -> Result<f64> {
        check_point(self.n(), z)?;
        check_point(self.n(), zeta)?;
        let s = z.t - zeta.t;
        if s <= 0.0 {
            return Ok(0.0);
        }
        let f = self.lag(s)?;
        let y = &z.x - &f.e_s * &zeta.x;
        Ok(self.log_gamma_reduced(&f, y.as_slice()).exp())
    }
}

fn check_point(n: usize, z: &GroupPoint) -> Result<()> {
    if z.dim() != n {
        return Err(Error::Dimension { expected: n, got: z.dim() });
    }
    if !z.t.is_finite() || z.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("evaluation point has non-finite entries".into()));
    }
    Ok(())
}

/// Value and `m0`-gradient of a potential at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Evaluator for `Γ` (drift `B`) and `Γ₀` (drift `B₀`).
#[derive(Debug)]
pub struct KernelEvaluator {
    pub b: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub m0: usize,
    pub blocks: BlockStructure,
    pub quadrature_order: usize,
    full: KernelCore,
    principal: KernelCore,
    /// One-dimensional Gauss–Hermite rule `(node, weight)` for directions narrower than a cell.
    hermite: Vec<(f64, f64)>,
}

impl KernelEvaluator {
    pub fn new(b: DMatrix<f64>, m0: usize) -> Result<Self> {
        Self::with_quadrature_order(b, m0, 12)
    }

    pub fn from_spec(spec: &OperatorSpec) -> Result<Self> {
        Self::new(spec.b.clone(), spec.m0)
    }

    pub fn with_quadrature_order(b: DMatrix<f64>, m0: usize, quadrature_order: usize) -> Result<Self> {
        let blocks = detect_block_structure(&b, m0)?;
        let b0 = blocks.principal_matrix(&b);
        let n = b.nrows();
        let full = KernelCore::new(b.clone(), m0, blocks.clone(), quadrature_order)?;
        let principal = KernelCore::new(b0.clone(), m0, blocks.clone(), quadrature_order)?;
        let order = match n {
            1 | 2 => 16,
            3 => 10,
            4 => 6,
            _ => 4,
        };
        Ok(KernelEvaluator {
            b,
            b0,
            m0,
            blocks,
            quadrature_order,
            full,
            principal,
            hermite: {
                let rule = gauss_hermite_prob(order);
                rule.nodes.into_iter().zip(rule.weights).collect()
            },
        })
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn group(&self) -> &KolmogorovGroup {
        &self.full.group
    }

    pub fn trace_b(&self) -> f64 {
        self.full.trace_b
    }

    /// `C(t) = ∫₀ᵗ E(s) A₀ E(s)ᵀ ds`.
    pub fn covariance(&self, t: f64) -> Result<DMatrix<f64>> {
        self.full.covariance(t)
    }

    /// Smallest eigenvalue of the correlation matrix of `C(t)` (scale-free definiteness test).
    pub fn covariance_min_correlation_eig(&self, t: f64) -> Result<f64> {
        let c = self.covariance(t)?;
        let n = c.nrows();
        let d: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
        if d.iter().any(|&v| !(v > 0.0)) {
            return Ok(0.0);
        }
        let r = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (d[i] * d[j]).sqrt());
        Ok(sym_eig_range(&r).0)
    }

    pub fn lag_factors(&self, s: f64) -> Result<Arc<LagFactors>> {
        self.full.lag(s)
    }

    /// `Γ(z, ζ) = Γ(ζ⁻¹ ∘ z, 0)`; zero when `t ≤ τ`.
    pub fn gamma(&self, z: &GroupPoint, zeta: &GroupPoint) -> Result<f64> {
        self.full.gamma(z, zeta)
    }

    /// `Γ₀(z) = Γ₀(z, 0)`, the kernel of the operator with `B₀` in place of `B`.
    pub fn gamma0(&self, z: &GroupPoint) -> Result<f64> {
        self.principal.gamma(z, &GroupPoint::origin(self.n()))
    }

    pub fn gamma0_between(&self, z: &GroupPoint, zeta: &GroupPoint) -> Result<f64> {
        self.principal.gamma(z, zeta)
    }

    /// `log Γ(z, ζ)` (`−∞` when `t ≤ τ`).
    pub fn log_gamma(&self, z: &GroupPoint, zeta: &GroupPoint) -> Result<f64> {
        check_point(self.n(), z)?;
        check_point(self.n(), zeta)?;
        let s = z.t - zeta.t;
        if s <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let f = self.full.lag(s)?;
        let y = &z.x - &f.e_s * &zeta.x;
        Ok(self.full.log_gamma_reduced(&f, y.as_slice()))
    }

    /// `∇_x Γ(z, ζ) = −½ Γ C(s)⁻¹ y`, `y = x − E(s)ξ`.
    pub fn gamma_grad_x(&self, z: &GroupPoint, zeta: &GroupPoint) -> Result<DVector<f64>> {
        let s = z.t - zeta.t;
        if s <= 0.0 {
            return Ok(DVector::zeros(self.n()));
        }
        let f = self.full.lag(s)?;
        let y = &z.x - &f.e_s * &zeta.x;
        let mut w = y.as_slice().to_vec();
        forward_sub(&f.chol_c, &mut w);
        let g = (f.log_norm - 0.25 * w.iter().map(|v| v * v).sum::<f64>()).exp();
        backward_sub_t(&f.chol_c, &mut w);
        Ok(DVector::from_iterator(self.n(), w.into_iter().map(|v| -0.5 * g * v)))
    }

    /// `∇_ξ Γ(z, ζ) = ½ Γ E(s)ᵀ C(s)⁻¹ y`.
    pub fn gamma_grad_xi(&self, z: &GroupPoint, zeta: &GroupPoint) -> Result<DVector<f64>> {
        let s = z.t - zeta.t;
        if s <= 0.0 {
            return Ok(DVector::zeros(self.n()));
        }
        let f = self.full.lag(s)?;
        let gx = self.gamma_grad_x(z, zeta)?;
        Ok(-(f.e_s.transpose() * gx))
    }

    /// Empirical constant `c` with `Γ₀/c ≤ Γ ≤ c Γ₀` on sampled points where `Γ₀ ≥ m`.
    pub fn comparison_constant(&self, m: f64, samples: usize, seed: u64) -> Result<(f64, usize)> {
        let n = self.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut used = 0;
        for _ in 0..samples {
            let t = rng.random_range(1e-3f64..1.0).powi(2);
            let x: Vec<f64> = self
                .blocks
                .exponents
                .iter()
                .map(|&a| rng.random_range(-1.0..1.0) * t.sqrt().powi(a as i32))
                .collect();
            let z = GroupPoint::from_slice(&x, t)?;
            let g0 = self.gamma0(&z)?;
            if g0 >= m {
                let g = self.gamma(&z, &GroupPoint::origin(n))?;
                worst = worst.max((g / g0).ln().abs());
                used += 1;
            }
        }
        Ok((worst.exp(), used))
    }

    /// `Γ(f)(z)`.
    pub fn gamma_potential(&self, f: &GridFunction, z: &GroupPoint) -> Result<f64> {
        Ok(self.potentials(&[f], z, false)?[0].value)
    }

    /// `Γ(D_{m0} f)(z) = −∫ D_ξ Γ(z, ζ) f(ζ) dζ`.
    pub fn gamma_potential_gradient(&self, f: &GridFunction, z: &GroupPoint) -> Result<Vec<f64>> {
        Ok(self.potentials(&[f], z, true)?.swap_remove(0).gradient)
    }

    /// Potentials (and optionally gradient potentials) of several densities on one grid, sharing
    /// the kernel evaluations.
    pub fn potentials(&self, fs: &[&GridFunction], z: &GroupPoint, want_grad: bool) -> Result<Vec<PotentialValue>> {
        check_point(self.n(), z)?;
        let Some(first) = fs.first() else {
            return Ok(Vec::new());
        };
        let spec = &first.spec;
        if spec.n() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: spec.n() });
        }
        if fs.iter().any(|f| f.spec != *spec) {
            return Err(Error::Shape("densities must share one grid".into()));
        }
        let m0 = self.m0;
        let mut out = vec![PotentialValue { value: 0.0, gradient: vec![0.0; if want_grad { m0 } else { 0 }] }; fs.len()];
        let n = self.n();
        let ht = spec.ht();
        let h: Vec<f64> = (0..n).map(|k| spec.h(k)).collect();
        let t = z.t;
        let x = z.x.as_slice();
        let mut resolved_memo: HashMap<u64, bool> = HashMap::new();
        for k in 0..spec.res[n] {
            let tau_lo = spec.lo[n] + k as f64 * ht;
            if tau_lo >= t {
                break;
            }
            let tau_hi = (tau_lo + ht).min(t);
            for (s, weight) in lag_rule(t - tau_hi, t - tau_lo) {
                let lf = self.full.lag(s)?;
                let resolved = *resolved_memo.entry(s.to_bits()).or_insert_with(|| {
                    let l = DMatrix::from_fn(n, n, |i, j| lf.sigma_sqrt[(i, j)] / h[i]);
                    sym_eig_range(&(&l * l.transpose())).0 >= 1.0
                });
                let mean = &lf.e_neg * &z.x;
                if resolved {
                    self.slice_midpoint(fs, spec, &lf, x, mean.as_slice(), k, weight, want_grad, &mut out);
                } else {
                    self.slice_gaussian(fs, &h, &lf, mean.as_slice(), k, weight, want_grad, &mut out);
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn slice_midpoint(
        &self,
        fs: &[&GridFunction],
        spec: &GridSpec,
        lf: &LagFactors,
        x: &[f64],
        mean: &[f64],
        k: usize,
        width: f64,
        want_grad: bool,
        out: &mut [PotentialValue],
    ) {
        let n = self.n();
        let m0 = self.m0;
        let mut ranges = Vec::with_capacity(n);
        for a in 0..n {
            let h = spec.h(a);
            let lo = mean[a] - 9.0 * lf.sigma_diag[a];
            let hi = mean[a] + 9.0 * lf.sigma_diag[a];
            let i0 = ((lo - spec.lo[a]) / h - 0.5).ceil().max(0.0) as isize;
            let i1 = ((hi - spec.lo[a]) / h - 0.5).floor().min(spec.res[a] as f64 - 1.0) as isize;
            if i1 < i0 {
                return;
            }
            ranges.push((i0 as usize, i1 as usize));
        }
        let vol: f64 = (0..n).map(|a| spec.h(a)).product::<f64>() * width;
        let rt = spec.res[n];
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        let mut xi = vec![0.0; n];
        let mut w = vec![0.0; n];
        // −D_ξ Γ = −½ Γ E(s)ᵀ C⁻¹ y, first m0 rows of −½ E(s)ᵀ.
        let gmat = DMatrix::from_fn(m0, n, |i, j| -0.5 * lf.e_s[(j, i)]);
        loop {
            let mut flat = 0;
            for a in 0..n {
                flat = flat * spec.res[a] + idx[a];
            }
            let node = flat * rt + k;
            if fs.iter().all(|f| f.values()[node] == 0.0) {
                if !advance(&mut idx, &ranges) {
                    return;
                }
                continue;
            }
            for a in 0..n {
                xi[a] = spec.coord(a, idx[a]);
            }
            for i in 0..n {
                let mut v = x[i];
                for j in 0..n {
                    v -= lf.e_s[(i, j)] * xi[j];
                }
                w[i] = v;
            }
            forward_sub(&lf.chol_c, &mut w);
            let q: f64 = w.iter().map(|v| v * v).sum();
            let g = (lf.log_norm - 0.25 * q).exp() * vol;
            if g > 0.0 {
                if want_grad {
                    backward_sub_t(&lf.chol_c, &mut w);
                    for (o, f) in out.iter_mut().zip(fs) {
                        let fv = f.values()[node];
                        o.value += g * fv;
                        for i in 0..m0 {
                            let mut d = 0.0;
                            for j in 0..n {
                                d += gmat[(i, j)] * w[j];
                            }
                            o.gradient[i] += g * d * fv;
                        }
                    }
                } else {
                    for (o, f) in out.iter_mut().zip(fs) {
                        o.value += g * f.values()[node];
                    }
                }
            }
            if !advance(&mut idx, &ranges) {
                return;
            }
        }
    }

    /// Gaussian average of the interpolated slice: each whitened direction `η_j` uses Gauss–Hermite
    /// when its image `Σ^{1/2} e_j` stays within one cell and a trapezoid rule with physical step at
    /// most one cell otherwise.
    #[allow(clippy::too_many_arguments)]
    fn slice_gaussian(
        &self,
        fs: &[&GridFunction],
        h: &[f64],
        lf: &LagFactors,
        mean: &[f64],
        k: usize,
        width: f64,
        want_grad: bool,
        out: &mut [PotentialValue],
    ) {
        let n = self.n();
        let m0 = self.m0;
        let rules: Vec<Vec<(f64, f64)>> = (0..n)
            .map(|j| {
                let reach = (0..n).map(|i| lf.sigma_sqrt[(i, j)].abs() / h[i]).fold(0.0, f64::max);
                if reach <= 1.0 {
                    self.hermite.clone()
                } else {
                    trapezoid_gaussian(1.0 / reach)
                }
            })
            .collect();
        let ranges: Vec<(usize, usize)> = rules.iter().map(|r| (0, r.len() - 1)).collect();
        let mut idx = vec![0usize; n];
        let mut xi = vec![0.0; n];
        loop {
            let mut wq = width;
            for i in 0..n {
                xi[i] = mean[i];
            }
            for j in 0..n {
                let (eta, w) = rules[j][idx[j]];
                wq *= w;
                for i in 0..n {
                    xi[i] += lf.sigma_sqrt[(i, j)] * eta;
                }
            }
            for (o, f) in out.iter_mut().zip(fs) {
                let fv = if n <= CUBIC_MAX_DIM { f.interpolate_slice_cubic(&xi, k) } else { f.interpolate_slice(&xi, k) };
                if fv == 0.0 {
                    continue;
                }
                o.value += wq * fv;
                if want_grad {
                    for i in 0..m0 {
                        let mut d = 0.0;
                        for j in 0..n {
                            d += lf.sigma_sqrt_inv_t[(i, j)] * rules[j][idx[j]].0;
                        }
                        o.gradient[i] += wq * d * fv;
                    }
                }
            }
            if !advance(&mut idx, &ranges) {
                return;
            }
        }
    }

    /// Potentials on the strided lattice `i_k = stride/2 + j·stride` of `spec`, restricted to nodes
    /// accepted by `keep`. Returns `(flat node index, values per density)`.
    pub fn potentials_on_lattice<K>(
        &self,
        fs: &[&GridFunction],
        stride: usize,
        want_grad: bool,
        keep: K,
    ) -> Result<Vec<(usize, Vec<PotentialValue>)>>
    where
        K: Fn(&[f64], f64) -> bool + Sync,
    {
        let spec = &fs.first().ok_or_else(|| Error::Domain("no densities".into()))?.spec;
        let nodes: Vec<usize> = lattice_nodes(spec, stride)
            .into_iter()
            .filter(|&i| {
                let (x, t) = spec.node(i);
                keep(&x, t)
            })
            .collect();
        nodes
            .par_iter()
            .map(|&i| {
                let (x, t) = spec.node(i);
                let z = GroupPoint::from_slice(&x, t)?;
                Ok((i, self.potentials(fs, &z, want_grad)?))
            })
            .collect()
    }
}

/// Largest space dimension using cubic interpolation in the unresolved regime.
const CUBIC_MAX_DIM: usize = 3;

/// Odometer step over the box `ranges`; false once every index has wrapped.
fn advance(idx: &mut [usize], ranges: &[(usize, usize)]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] <= ranges[a].1 {
            return true;
        }
        idx[a] = ranges[a].0;
    }
    false
}

/// Flat indices of the lattice `i_k = ⌊stride/2⌋ + j·stride` on every axis.
pub fn lattice_nodes(spec: &GridSpec, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let per_axis: Vec<Vec<usize>> = spec.res.iter().map(|&r| (stride / 2..r).step_by(stride).collect()).collect();
    let mut out = vec![0usize];
    for (a, ids) in per_axis.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * ids.len());
        for &base in &out {
            for &i in ids {
                next.push(base * spec.res[a] + i);
            }
        }
        out = next;
    }
    out
}

/// Largest ratio `s_hi / s_lo` of one lag sub-interval.
const LAG_RATIO: f64 = 2.0;
/// Lags below this fraction of a cell's upper lag are lumped into one midpoint piece.
const LAG_FLOOR: f64 = 1e-2;

/// Quadrature `(s, weight)` for `∫_{s_lo}^{s_hi} ds` with the density frozen on the slice: the
/// interval is split geometrically so `s` grows by at most [`LAG_RATIO`] per piece, and each
/// piece gets 2-point Gauss–Legendre. The kernel average varies on the scale of `s` itself near
/// the pole, where a single midpoint would only be first order.
fn lag_rule(s_lo: f64, s_hi: f64) -> Vec<(f64, f64)> {
    let mut pieces = Vec::new();
    let mut a = s_lo;
    if s_lo <= 0.0 {
        a = s_hi * LAG_FLOOR;
        pieces.push((0.5 * a, a));
    }
    let m = ((s_hi / a).ln() / LAG_RATIO.ln()).ceil().max(1.0) as usize;
    let q = (s_hi / a).powf(1.0 / m as f64);
    let off = 0.5 / 3f64.sqrt();
    for i in 0..m {
        let lo = a * q.powi(i as i32);
        let hi = if i + 1 == m { s_hi } else { lo * q };
        let (mid, len) = (0.5 * (lo + hi), hi - lo);
        pieces.push((mid - off * len, 0.5 * len));
        pieces.push((mid + off * len, 0.5 * len));
    }
    pieces
}

/// Half-width of the truncated standard normal used by the trapezoid rule (`φ(8.5) < 1e-15`).
const ETA_MAX: f64 = 8.5;

/// Trapezoid rule for the standard normal on `[−ETA_MAX, ETA_MAX]` with step at most `step`,
/// normalised to unit mass.
fn trapezoid_gaussian(step: f64) -> Vec<(f64, f64)> {
    let count = (2.0 * ETA_MAX / step).ceil() as usize + 1;
    let step = 2.0 * ETA_MAX / (count - 1) as f64;
    let mut rule: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let eta = -ETA_MAX + i as f64 * step;
            (eta, (-0.5 * eta * eta).exp())
        })
        .collect();
    let mass: f64 = rule.iter().map(|r| r.1).sum();
    for r in &mut rule {
        r.1 /= mass;
    }
    rule
}

/// Per-level outcome of [`potential_norm_check`].
#[derive(Debug, Clone, Serialize)]
pub struct PotentialLevel {
    pub resolution: usize,
    /// `‖Γ(f)‖_{p**} / ‖f‖_p` per density (`None` when `f ≡ 0`).
    pub ratios_value: Vec<Option<f64>>,
    /// `‖Γ(D f)‖_{p*} / ‖f‖_p` per density.
    pub ratios_gradient: Vec<Option<f64>>,
    pub max_ratio_value: f64,
    pub max_ratio_gradient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialNormReport {
    pub p: f64,
    pub p_star: f64,
    pub p_double_star: f64,
    pub levels: Vec<PotentialLevel>,
    /// `max/min` of the per-level maxima.
    pub drift_value: f64,
    pub drift_gradient: f64,
    pub skipped: Vec<usize>,
}

/// A test density on `[-1, 1]^{N+1}`.
pub type Density = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Random smooth densities: sums of three anisotropic Gaussian bumps with random signs.
pub fn random_densities(n: usize, count: usize, seed: u64) -> Vec<Density> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let bumps: Vec<(Vec<f64>, f64, f64, f64)> = (0..3)
                .map(|_| {
                    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-0.6..0.6)).collect();
                    let tc = rng.random_range(-0.6..0.6);
                    let w = rng.random_range(0.15..0.45);
                    let a = rng.random_range(0.5..1.5) * if rng.random_bool(0.3) { -1.0 } else { 1.0 };
                    (c, tc, w, a)
                })
                .collect();
            Arc::new(move |x: &[f64], t: f64| {
                bumps
                    .iter()
                    .map(|(c, tc, w, a)| {
                        let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum::<f64>() + (t - tc).powi(2);
                        a * (-r2 / (w * w)).exp()
                    })
                    .sum()
            }) as Density
        })
        .collect()
}

/// Empirical `(L^p → L^{p**})` and `(L^p → L^{p*})` ratios for the potentials on `Q₁(0)`.
///
/// Densities are restricted to the cylinder; norms of the potentials use the strided lattice with
/// about `lattice` points per axis.
pub fn potential_norm_check(
    ev: &KernelEvaluator,
    p: f64,
    resolutions: &[usize],
    densities: &[Density],
    lattice: usize,
) -> Result<PotentialNormReport> {
    let qd2 = ev.blocks.scaling_dim() as f64;
    if !(p > 1.0 && p < qd2 / 2.0) {
        return Err(Error::Domain(format!("p = {p} must lie in (1, (Q+2)/2) = (1, {})", qd2 / 2.0)));
    }
    let p_star = 1.0 / (1.0 / p - 1.0 / qd2);
    let p_double_star = 1.0 / (1.0 / p - 2.0 / qd2);
    let n = ev.n();
    let g = ev.group();
    let cyl = Cylinder::unit_at_origin(n, 1.0)?;
    let mut levels = Vec::new();
    let mut skipped = Vec::new();
    for &res in resolutions {
        let spec = GridSpec::uniform(vec![-1.0; n + 1], vec![1.0; n + 1], res)?;
        let inside = |x: &[f64], t: f64| {
            let z = GroupPoint { x: DVector::from_column_slice(x), t };
            cyl.contains(g, &z)
        };
        let fields: Vec<GridFunction> = densities
            .iter()
            .map(|d| GridFunction::from_fn(spec.clone(), |x, t| if inside(x, t) { d(x, t) } else { 0.0 }))
            .collect::<Result<_>>()?;
        let refs: Vec<&GridFunction> = fields.iter().collect();
        let stride = (res / lattice).max(1);
        let lat = ev.potentials_on_lattice(&refs, stride, true, inside)?;
        let lat_vol = spec.cell_volume() * (stride as f64).powi(n as i32 + 1);
        let mut rv = Vec::new();
        let mut rg = Vec::new();
        for (d, f) in fields.iter().enumerate() {
            let fp: f64 = f.values().iter().map(|v| v.abs().powf(p)).sum::<f64>() * spec.cell_volume();
            if fp == 0.0 {
                rv.push(None);
                rg.push(None);
                if !skipped.contains(&d) {
                    skipped.push(d);
                }
                continue;
            }
            let fnorm = fp.powf(1.0 / p);
            let gv: f64 = lat.iter().map(|(_, vals)| vals[d].value.abs().powf(p_double_star)).sum::<f64>() * lat_vol;
            let gg: f64 = lat
                .iter()
                .map(|(_, vals)| vals[d].gradient.iter().map(|c| c * c).sum::<f64>().sqrt().powf(p_star))
                .sum::<f64>()
                * lat_vol;
            rv.push(Some(gv.powf(1.0 / p_double_star) / fnorm));
            rg.push(Some(gg.powf(1.0 / p_star) / fnorm));
        }
        let maxo = |v: &[Option<f64>]| v.iter().flatten().cloned().fold(0.0, f64::max);
        levels.push(PotentialLevel {
            resolution: res,
            max_ratio_value: maxo(&rv),
            max_ratio_gradient: maxo(&rg),
            ratios_value: rv,
            ratios_gradient: rg,
        });
    }
    let drift = |sel: fn(&PotentialLevel) -> f64| {
        let vals: Vec<f64> = levels.iter().map(sel).filter(|v| *v > 0.0).collect();
        if vals.is_empty() {
            return 1.0;
        }
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        hi / lo
    };
    Ok(PotentialNormReport {
        p,
        p_star,
        p_double_star,
        drift_value: drift(|l| l.max_ratio_value),
        drift_gradient: drift(|l| l.max_ratio_gradient),
        levels,
        skipped,
    })
}

/// Exponent `p*` with `1/p* = 1/p − 1/(Q+2)`.
pub fn sobolev_star(p: f64, q_dim: usize) -> Result<f64> {
    let qd2 = q_dim as f64 + 2.0;
    if !(p > 1.0 && p < qd2) {
        return Err(Error::Domain(format!("p* needs 1 < p < Q+2 = {qd2}, got p = {p}")));
    }
    Ok(1.0 / (1.0 / p - 1.0 / qd2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langevin() -> KernelEvaluator {
        KernelEvaluator::from_spec(&OperatorSpec::langevin()).unwrap()
    }

    fn pt(x: &[f64], t: f64) -> GroupPoint {
        GroupPoint::from_slice(x, t).unwrap()
    }

    #[test]
    fn covariance_closed_forms() {
        let ev = langevin();
        for t in [0.1, 1.0, 3.0] {
            let c = ev.covariance(t).unwrap();
            let oracle = DMatrix::from_row_slice(2, 2, &[t, -t * t / 2.0, -t * t / 2.0, t.powi(3) / 3.0]);
            assert!((&c - &oracle).amax() < 1e-14 * t.powi(3).max(1.0));
            assert!((c.determinant() - t.powi(4) / 12.0).abs() < 1e-12 * t.powi(4));
        }
        let heat = KernelEvaluator::new(DMatrix::zeros(3, 3), 3).unwrap();
        assert_eq!(heat.covariance(2.0).unwrap(), DMatrix::identity(3, 3) * 2.0);
        assert!(ev.covariance(0.0).is_err());
    }

    #[test]
    fn covariance_quadrature_matches_series_for_non_nilpotent() {
        let b = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 1.0, -0.2]);
        let ev = KernelEvaluator::new(b.clone(), 1).unwrap();
        let c = ev.covariance(1.5).unwrap();
        // Oracle: composite Simpson rule on the integrand.
        let f = |s: f64| {
            let e = crate::lie::mat_exp(&b, s);
            let col = e.column(0).into_owned();
            &col * col.transpose()
        };
        let panels = 4000;
        let h = 1.5 / panels as f64;
        let mut acc = DMatrix::zeros(2, 2);
        for i in 0..panels {
            let a = i as f64 * h;
            acc += (f(a) + f(a + 0.5 * h) * 4.0 + f(a + h)) * (h / 6.0);
        }
        assert!((&c - &acc).amax() < 1e-11);
    }

    #[test]
    fn gamma_langevin_value() {
        let ev = langevin();
        let g = ev.gamma(&pt(&[0.0, 0.0], 1.0), &GroupPoint::origin(2)).unwrap();
        assert!((g - 3f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
        assert_eq!(ev.gamma(&pt(&[0.0, 0.0], -1.0), &GroupPoint::origin(2)).unwrap(), 0.0);
        assert_eq!(ev.gamma(&pt(&[0.3, 0.0], 0.0), &GroupPoint::origin(2)).unwrap(), 0.0);
    }

    #[test]
    fn gamma_heat_1d() {
        let ev = KernelEvaluator::new(DMatrix::zeros(1, 1), 1).unwrap();
        for (x, t) in [(0.0, 1.0), (0.7, 0.3), (-2.0, 2.5)] {
            let g = ev.gamma(&pt(&[x], t), &GroupPoint::origin(1)).unwrap();
            let oracle = (4.0 * PI * t).powf(-0.5) * (-x * x / (4.0 * t)).exp();
            assert!((g - oracle).abs() < 1e-14 * oracle.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn log_domain_survives_tiny_times() {
        let ev = langevin();
        let g = ev.gamma(&pt(&[0.0, 0.0], 1e-4), &GroupPoint::origin(2)).unwrap();
        let oracle = (4.0 * PI).recip() * (1e-16f64 / 12.0).powf(-0.5);
        assert!((g / oracle - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gamma0_equals_gamma_when_b_is_homogeneous() {
        let ev = langevin();
        let z = pt(&[0.2, -0.1], 0.7);
        assert_eq!(ev.gamma0(&z).unwrap(), ev.gamma(&z, &GroupPoint::origin(2)).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 1.0, 0.1]);
        let ev = KernelEvaluator::new(b, 1).unwrap();
        let z = pt(&[0.3, -0.2], 0.8);
        let zeta = pt(&[-0.1, 0.15], 0.1);
        let gx = ev.gamma_grad_x(&z, &zeta).unwrap();
        let gxi = ev.gamma_grad_xi(&z, &zeta).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = z.clone();
            zp.x[i] += h;
            let mut zm = z.clone();
            zm.x[i] -= h;
            let fd = (ev.gamma(&zp, &zeta).unwrap() - ev.gamma(&zm, &zeta).unwrap()) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7, "x{i}: {fd} vs {}", gx[i]);
            let mut wp = zeta.clone();
            wp.x[i] += h;
            let mut wm = zeta.clone();
            wm.x[i] -= h;
            let fd = (ev.gamma(&z, &wp).unwrap() - ev.gamma(&z, &wm).unwrap()) / (2.0 * h);
            assert!((fd - gxi[i]).abs() < 1e-7, "xi{i}: {fd} vs {}", gxi[i]);
        }
    }

    #[test]
    fn potentials_of_zero_and_linearity() {
        let ev = langevin();
        let spec = GridSpec::uniform(vec![-1.0; 3], vec![1.0; 3], 16).unwrap();
        let zero = GridFunction::constant(spec.clone(), 0.0).unwrap();
        let z = pt(&[0.1, 0.2], 0.5);
        assert_eq!(ev.gamma_potential(&zero, &z).unwrap(), 0.0);
        assert_eq!(ev.gamma_potential_gradient(&zero, &z).unwrap(), vec![0.0]);
        let f = GridFunction::from_fn(spec, |x, t| (x[0] + 2.0 * x[1] * t).cos()).unwrap();
        let f2 = f.scale(2.0).unwrap();
        let a = ev.gamma_potential(&f, &z).unwrap();
        let b = ev.gamma_potential(&f2, &z).unwrap();
        assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn potential_of_constant_is_elapsed_time() {
        // Γ has unit ξ-mass, so Γ(1)(x, t) = t − t_min for points well inside the box.
        let ev = KernelEvaluator::new(DMatrix::zeros(1, 1), 1).unwrap();
        let spec = GridSpec::new(vec![-20.0, 0.0], vec![20.0, 1.0], vec![400, 16]).unwrap();
        let one = GridFunction::constant(spec.clone(), 1.0).unwrap();
        let t = spec.coord(1, 10);
        let v = ev.gamma_potential(&one, &pt(&[0.05], t)).unwrap();
        assert!((v - t).abs() < 1e-6, "{v} vs {t}");
    }

    #[test]
    fn lattice_is_strided_subset() {
        let spec = GridSpec::uniform(vec![0.0; 2], vec![1.0; 2], 16).unwrap();
        let l = lattice_nodes(&spec, 4);
        assert_eq!(l.len(), 16);
        assert_eq!(spec.multi_index(l[0]), vec![2, 2]);
    }

    #[test]
    fn potential_exponents_are_checked() {
        let ev = langevin();
        assert!(potential_norm_check(&ev, 3.0, &[16], &[], 8).is_err());
        assert!(sobolev_star(6.0, 4).is_err());
        assert!((sobolev_star(2.0, 4).unwrap() - 3.0).abs() < 1e-12);
    }
}
