//! Translation group, dilations, homogeneous norms and cylinders.
//!
//! Points are `z = (x, t)` with the law `(x, t) ∘ (ξ, τ) = (ξ + E(τ) x, t + τ)`,
//! `E(s) = exp(−sB)`. Dilations act by `r^{α_i}` on coordinate `i` and `r²` on time.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::nilpotency_index;
use crate::operator::BlockStructure;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `exp(M)` by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm1 = (0..n).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if norm1 == 0.0 {
        return DMatrix::identity(n, n);
    }
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = m * 2f64.powi(-s);
    let id = DMatrix::<f64>::identity(n, n);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is invertible for scaled arguments");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `E(s) = exp(−sB)`; a finite sum when `B` is nilpotent.
pub fn mat_exp(b: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    match nilpotency_index(b) {
        Some(k) => nilpotent_exp(&powers_over_factorial(b, k), s),
        None => expm(&(b * (-s))),
    }
}

/// `[B^0/0!, …, B^{k−1}/(k−1)!]`.
fn powers_over_factorial(b: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let n = b.nrows();
    let mut out = vec![DMatrix::identity(n, n)];
    for j in 1..k {
        let next = &out[j - 1] * b / j as f64;
        out.push(next);
    }
    out
}

fn nilpotent_exp(terms: &[DMatrix<f64>], s: f64) -> DMatrix<f64> {
    let mut acc = terms[0].clone();
    let mut c = 1.0;
    for t in &terms[1..] {
        c *= -s;
        acc += t * c;
    }
    acc
}

/// A point `(x, t)` with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPoint {
    pub x: DVector<f64>,
    pub t: f64,
}

impl GroupPoint {
    pub fn new(x: DVector<f64>, t: f64) -> Result<Self> {
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("group point entries must be finite".into()));
        }
        Ok(GroupPoint { x, t })
    }

    pub fn from_slice(x: &[f64], t: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), t)
    }

    pub fn origin(n: usize) -> Self {
        GroupPoint { x: DVector::zeros(n), t: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// `δ_r z`.
pub fn dilate(r: f64, z: &GroupPoint, blocks: &BlockStructure) -> Result<GroupPoint> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("dilation factor r = {r} must be positive")));
    }
    check_dim(blocks.dim(), z.dim())?;
    let x = DVector::from_iterator(
        z.dim(),
        z.x.iter().zip(&blocks.exponents).map(|(v, &a)| v * r.powi(a as i32)),
    );
    Ok(GroupPoint { x, t: z.t * r * r })
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

/// Unique `r > 0` with `Σ x_i²/r^{2α_i} + t²/r⁴ = 1` (0 at the origin).
pub fn hom_norm(z: &GroupPoint, blocks: &BlockStructure) -> f64 {
    hom_norm_parts(z.x.as_slice(), z.t, &blocks.exponents)
}

/// Same as [`hom_norm`] on raw coordinates.
pub fn hom_norm_parts(x: &[f64], t: f64, exponents: &[u32]) -> f64 {
    // a_i = |x_i|^{1/α_i}; each term is (a_i / r)^{2α_i}.
    let mut roots: Vec<(f64, f64)> = x
        .iter()
        .zip(exponents)
        .map(|(v, &a)| (v.abs().powf(1.0 / a as f64), 2.0 * a as f64))
        .collect();
    roots.push((t.abs().sqrt(), 4.0));
    roots.retain(|&(a, _)| a > 0.0);
    let r0 = roots.iter().map(|&(a, _)| a).fold(0.0, f64::max);
    if r0 == 0.0 {
        return 0.0;
    }
    let g = |r: f64| roots.iter().map(|&(a, e)| (a / r).powf(e)).sum::<f64>();
    let dg = |r: f64| roots.iter().map(|&(a, e)| -e / r * (a / r).powf(e)).sum::<f64>();
    // g(r0) >= 1 since one term equals 1; grow until g <= 1.
    let mut lo = r0;
    let mut hi = r0 * ((roots.len() as f64).sqrt()).max(1.0 + 1e-12);
    while g(hi) > 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = dg(r);
        if d == 0.0 {
            break;
        }
        let next = r - (g(r) - 1.0) / d;
        if next >= lo && next <= hi {
            r = next;
        }
    }
    r
}

/// `Σ |x_i|^{1/α_i} + |t|^{1/2}`.
pub fn hom_norm_1(z: &GroupPoint, blocks: &BlockStructure) -> f64 {
    z.x.iter()
        .zip(&blocks.exponents)
        .map(|(v, &a)| v.abs().powf(1.0 / a as f64))
        .sum::<f64>()
        + z.t.abs().sqrt()
}

/// The Lie group attached to `B`, with the dilations of its block structure.
#[derive(Debug, Clone)]
pub struct KolmogorovGroup {
    pub b: DMatrix<f64>,
    pub blocks: BlockStructure,
    /// `B^k/k!` for `k < nilpotency index`, when `B` is nilpotent.
    series: Option<Vec<DMatrix<f64>>>,
}

impl KolmogorovGroup {
    pub fn new(b: DMatrix<f64>, blocks: BlockStructure) -> Result<Self> {
        if b.nrows() != b.ncols() {
            return Err(Error::Shape(format!("B must be square, got {}x{}", b.nrows(), b.ncols())));
        }
        check_dim(blocks.dim(), b.nrows())?;
        let series = nilpotency_index(&b).map(|k| powers_over_factorial(&b, k));
        Ok(KolmogorovGroup { b, blocks, series })
    }

    pub fn from_spec(spec: &crate::operator::OperatorSpec) -> Result<Self> {
        Self::new(spec.b.clone(), spec.blocks()?)
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn is_nilpotent(&self) -> bool {
        self.series.is_some()
    }

    /// `E(s) = exp(−sB)`.
    pub fn e(&self, s: f64) -> DMatrix<f64> {
        match &self.series {
            Some(terms) => nilpotent_exp(terms, s),
            None => expm(&(&self.b * (-s))),
        }
    }

    pub fn compose(&self, z: &GroupPoint, w: &GroupPoint) -> Result<GroupPoint> {
        check_dim(self.dim(), z.dim())?;
        check_dim(self.dim(), w.dim())?;
        Ok(GroupPoint { x: &w.x + self.e(w.t) * &z.x, t: z.t + w.t })
    }

    /// `z⁻¹ = (−E(−t) x, −t)`.
    pub fn inverse(&self, z: &GroupPoint) -> GroupPoint {
        GroupPoint { x: -(self.e(-z.t) * &z.x), t: -z.t }
    }

    /// `ζ⁻¹ ∘ z = (x − E(t − τ) ξ, t − τ)`.
    pub fn reduce(&self, z: &GroupPoint, zeta: &GroupPoint) -> GroupPoint {
        let s = z.t - zeta.t;
        GroupPoint { x: &z.x - self.e(s) * &zeta.x, t: s }
    }

    pub fn dilate(&self, r: f64, z: &GroupPoint) -> Result<GroupPoint> {
        dilate(r, z, &self.blocks)
    }

    pub fn hom_norm(&self, z: &GroupPoint) -> f64 {
        hom_norm(z, &self.blocks)
    }

    pub fn hom_norm_1(&self, z: &GroupPoint) -> f64 {
        hom_norm_1(z, &self.blocks)
    }

    /// `d(z, w) = ‖z⁻¹ ∘ w‖`.
    pub fn quasi_distance(&self, z: &GroupPoint, w: &GroupPoint) -> f64 {
        self.hom_norm(&self.reduce(w, z))
    }

    /// `det E(t)`, analytically `exp(−t · tr B)`.
    pub fn det_e(&self, t: f64) -> f64 {
        self.e(t).determinant()
    }

    /// Determinant of the dilation `δ_r` as a linear map of `ℝ^{N+1}`.
    pub fn dilation_jacobian(&self, r: f64) -> f64 {
        self.blocks.exponents.iter().map(|&a| r.powi(a as i32)).product::<f64>() * r * r
    }
}

/// `Q_r(z₀) = z₀ ∘ δ_r(Q₁)`, `Q₁ = {|x| < 1, |t| < 1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cylinder {
    pub center: GroupPoint,
    pub r: f64,
}

impl Cylinder {
    pub fn new(center: GroupPoint, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("cylinder radius r = {r} must be positive")));
        }
        Ok(Cylinder { center, r })
    }

    pub fn unit_at_origin(n: usize, r: f64) -> Result<Self> {
        Self::new(GroupPoint::origin(n), r)
    }

    /// `(|x'|², t')` for `(x', t') = δ_{1/r}(z₀⁻¹ ∘ z)`, given `E(t − t₀) x₀`.
    #[inline]
    pub fn scaled_coords(&self, exponents: &[u32], shift: &[f64], x: &[f64], t: f64) -> (f64, f64) {
        let mut s = 0.0;
        for i in 0..x.len() {
            let v = (x[i] - shift[i]) / self.r.powi(exponents[i] as i32);
            s += v * v;
        }
        (s, (t - self.center.t) / (self.r * self.r))
    }

    /// `E(t − t₀) x₀`, the spatial centre of the time slice at `t`.
    pub fn slice_shift(&self, g: &KolmogorovGroup, t: f64) -> Vec<f64> {
        (g.e(t - self.center.t) * &self.center.x).as_slice().to_vec()
    }

    pub fn contains(&self, g: &KolmogorovGroup, z: &GroupPoint) -> bool {
        let shift = self.slice_shift(g, z.t);
        let (x2, t) = self.scaled_coords(&g.blocks.exponents, &shift, z.x.as_slice(), z.t);
        x2 < 1.0 && t.abs() < 1.0
    }

    /// Membership in the closure, with relative slack `1e-12`.
    pub fn contains_closed(&self, g: &KolmogorovGroup, z: &GroupPoint) -> bool {
        let shift = self.slice_shift(g, z.t);
        let (x2, t) = self.scaled_coords(&g.blocks.exponents, &shift, z.x.as_slice(), z.t);
        x2 <= 1.0 + 1e-12 && t.abs() <= 1.0 + 1e-12
    }

    /// `Q_r(z₀) ∩ {t < t₀}`.
    pub fn one_sided_contains(&self, g: &KolmogorovGroup, z: &GroupPoint) -> bool {
        z.t < self.center.t && self.contains(g, z)
    }

    /// `r^{Q+2} · |Q₁|`, `|Q₁| = 2 ω_N`.
    pub fn exact_volume(&self, blocks: &BlockStructure) -> f64 {
        2.0 * unit_ball_volume(blocks.dim()) * self.r.powi(blocks.scaling_dim() as i32)
    }
}

/// Lebesgue measure of the Euclidean unit ball in `ℝ^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    // ω_n = π^{n/2} / Γ(n/2 + 1), by the recursion ω_n = 2π/n ω_{n−2}.
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Monte Carlo volume of a cylinder (or its past half) from a scanned bounding box.
pub fn mc_cylinder_volume(g: &KolmogorovGroup, c: &Cylinder, one_sided: bool, samples: usize, seed: u64) -> f64 {
    let n = g.dim();
    let (t_lo, t_hi) = (c.center.t - c.r * c.r, c.center.t + c.r * c.r);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let scan = 256;
    for k in 0..=scan {
        let t = t_lo + (t_hi - t_lo) * k as f64 / scan as f64;
        let shift = c.slice_shift(g, t);
        for i in 0..n {
            lo[i] = lo[i].min(shift[i]);
            hi[i] = hi[i].max(shift[i]);
        }
    }
    for i in 0..n {
        let pad = c.r.powi(g.blocks.exponents[i] as i32);
        let slack = 0.05 * (hi[i] - lo[i]) + 1e-12;
        lo[i] -= pad + slack;
        hi[i] += pad + slack;
    }
    let box_vol: f64 = (0..n).map(|i| hi[i] - lo[i]).product::<f64>() * (t_hi - t_lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut x = vec![0.0; n];
    for _ in 0..samples {
        for i in 0..n {
            x[i] = rng.random_range(lo[i]..hi[i]);
        }
        let t = rng.random_range(t_lo..t_hi);
        let z = GroupPoint { x: DVector::from_column_slice(&x), t };
        let inside = if one_sided { c.one_sided_contains(g, &z) } else { c.contains(g, &z) };
        hits += inside as usize;
    }
    box_vol * hits as f64 / samples as f64
}

/// Point of `Q₁` (closed), biased towards the lateral and time boundaries.
fn sample_unit_cylinder(n: usize, rng: &mut ChaCha8Rng) -> GroupPoint {
    let dir: Vec<f64> = loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r2: f64 = v.iter().map(|a| a * a).sum();
        if r2 > 1e-6 && r2 <= 1.0 {
            break v.iter().map(|a| a / r2.sqrt()).collect();
        }
    };
    let mode = rng.random_range(0..4);
    let radius = if mode == 0 || mode == 3 { 1.0 } else { rng.random_range(0.0f64..1.0).powf(1.0 / n as f64) };
    let t = if mode >= 2 {
        if rng.random_bool(0.5) { 1.0 } else { -1.0 }
    } else {
        rng.random_range(-1.0..1.0)
    };
    GroupPoint { x: DVector::from_iterator(n, dir.into_iter().map(|d| d * radius)), t }
}

/// Radii pairs `(ρ, r)` used by the inclusion scan.
pub const INCLUSION_PAIRS: [(f64, f64); 6] = [(0.25, 0.5), (0.1, 0.5), (0.5, 1.0), (0.75, 1.0), (0.9, 1.0), (0.25, 1.0)];

/// Dyadic candidates `63/64, …, 1/64, 2⁻⁷, 2⁻⁸, …, 2⁻²⁰`.
fn inclusion_candidates() -> Vec<f64> {
    let mut c: Vec<f64> = (1..64).rev().map(|j| j as f64 / 64.0).collect();
    c.extend((7..=20).map(|k| 2f64.powi(-k)));
    c
}

type InclusionSample = (GroupPoint, GroupPoint);

fn inclusion_samples(n: usize, trials: usize, rng: &mut ChaCha8Rng) -> Vec<InclusionSample> {
    (0..trials)
        .map(|_| (sample_unit_cylinder(n, rng), sample_unit_cylinder(n, rng)))
        .collect()
}

/// Number of sampled `(z, w)` with `z ∈ Q_ρ`, `w ∈ Q_{c r (r−ρ)}` and `z ∘ w ∉ closure(Q_r)`.
fn inclusion_violations(g: &KolmogorovGroup, c: f64, samples: &[InclusionSample]) -> usize {
    let mut bad = 0;
    for &(rho, r) in &INCLUSION_PAIRS {
        let outer = Cylinder { center: GroupPoint::origin(g.dim()), r };
        let s = c * r * (r - rho);
        for (zu, wu) in samples {
            let z = dilate(rho, zu, &g.blocks).expect("positive radius");
            let w = dilate(s, wu, &g.blocks).expect("positive radius");
            let p = g.compose(&z, &w).expect("matching dimensions");
            if !outer.contains_closed(g, &p) {
                bad += 1;
            }
        }
    }
    bad
}

/// Largest dyadic `c̄ ∈ (0, 1)` with `z ∘ Q_{c̄ r(r−ρ)} ⊆ Q_r` on all sampled `z ∈ Q_ρ`.
pub fn cylinder_inclusion_constant(g: &KolmogorovGroup, trials: usize, seed: u64) -> Result<f64> {
    if trials < 100 {
        return Err(Error::Budget(format!("inclusion scan needs at least 100 trials, got {trials}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = inclusion_samples(g.dim(), trials, &mut rng);
    inclusion_candidates()
        .into_iter()
        .find(|&c| inclusion_violations(g, c, &samples) == 0)
        .ok_or_else(|| Error::Budget("no dyadic inclusion constant above 2^-20 found".into()))
}

/// Re-checks a constant on `trials` fresh samples; returns the violation count.
pub fn verify_inclusion_constant(g: &KolmogorovGroup, c: f64, trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = inclusion_samples(g.dim(), trials, &mut rng);
    inclusion_violations(g, c, &samples)
}

/// Empirical quasi-triangle constant `max d(z,w) / (d(z,v) + d(v,w))` over random triples in `[-1,1]^{N+1}`.
pub fn quasi_triangle_constant(g: &KolmogorovGroup, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.dim();
    let point = |rng: &mut ChaCha8Rng| {
        GroupPoint { x: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), t: rng.random_range(-1.0..1.0) }
    };
    let mut k: f64 = 0.0;
    for _ in 0..samples {
        let (z, v, w) = (point(&mut rng), point(&mut rng), point(&mut rng));
        let den = g.quasi_distance(&z, &v) + g.quasi_distance(&v, &w);
        if den > 0.0 {
            k = k.max(g.quasi_distance(&z, &w) / den);
        }
    }
    k
}
