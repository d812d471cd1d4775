//! Smooth cut-off `ψ = χ(‖z‖)` between `Q_ρ` and `Q_r`.
//!
//! `χ(s) = S((r − s)/(r − ρ))` with the smooth step `S(y) = f(y)/(f(y) + f(1 − y))`,
//! `f(y) = e^{−1/y}` for `y > 0`. `S' ≤ 2` with equality only at `y = ½`, so
//! `|χ'| ≤ 2/(r − ρ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lie::{GroupPoint, KolmogorovGroup};

fn f(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        (-1.0 / y).exp()
    }
}

fn df(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        f(y) / (y * y)
    }
}

/// Smooth step: 0 for `y ≤ 0`, 1 for `y ≥ 1`.
pub fn smooth_step(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        f(y) / (f(y) + f(1.0 - y))
    }
}

pub fn smooth_step_derivative(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        return 0.0;
    }
    let (a, b) = (f(y), f(1.0 - y));
    (df(y) * b + a * df(1.0 - y)) / ((a + b) * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffProfile {
    pub rho: f64,
    pub r: f64,
}

impl CutoffProfile {
    /// Requires `½ ≤ ρ < r ≤ 1`.
    pub fn new(rho: f64, r: f64) -> Result<Self> {
        if !(0.5 <= rho && rho < r && r <= 1.0) {
            return Err(Error::Domain(format!("cut-off needs 1/2 <= rho < r <= 1, got rho = {rho}, r = {r}")));
        }
        Ok(CutoffProfile { rho, r })
    }

    /// `χ(s)`: 1 on `[0, ρ]`, 0 on `[r, ∞)`.
    pub fn value(&self, s: f64) -> f64 {
        smooth_step((self.r - s) / (self.r - self.rho))
    }

    pub fn derivative(&self, s: f64) -> f64 {
        -smooth_step_derivative((self.r - s) / (self.r - self.rho)) / (self.r - self.rho)
    }

    /// `ψ(z) = χ(‖z‖)`.
    pub fn psi(&self, g: &KolmogorovGroup, z: &GroupPoint) -> f64 {
        self.value(g.hom_norm(z))
    }

    /// `(D_{m0} ψ, Y ψ)` at `z ≠ 0`, through the implicit derivative of the homogeneous norm.
    pub fn psi_derivatives(&self, g: &KolmogorovGroup, z: &GroupPoint) -> (Vec<f64>, f64) {
        let m0 = g.blocks.m[0];
        let rho = g.hom_norm(z);
        let chi_p = self.derivative(rho);
        if chi_p == 0.0 || rho == 0.0 {
            return (vec![0.0; m0], 0.0);
        }
        let (dx, dt) = hom_norm_gradient(g, z, rho);
        let bx = &g.b * &z.x;
        let y: f64 = (0..g.dim()).map(|i| bx[i] * dx[i]).sum::<f64>() - dt;
        ((0..m0).map(|j| chi_p * dx[j]).collect(), chi_p * y)
    }
}

/// Gradient of `‖z‖` in `(x, t)` at a point with norm `r > 0`.
pub fn hom_norm_gradient(g: &KolmogorovGroup, z: &GroupPoint, r: f64) -> (Vec<f64>, f64) {
    let exps = &g.blocks.exponents;
    let mut denom = 4.0 * z.t * z.t * r.powi(-5);
    for (i, &a) in exps.iter().enumerate() {
        let a = a as f64;
        denom += 2.0 * a * z.x[i] * z.x[i] * r.powf(-2.0 * a - 1.0);
    }
    let dx = exps.iter().enumerate().map(|(i, &a)| 2.0 * z.x[i] * r.powf(-2.0 * a as f64) / denom).collect();
    (dx, 2.0 * z.t * r.powi(-4) / denom)
}

/// Measured constants of the cut-off bounds `|Yψ| ≤ c₀/(ρ(r−ρ))`, `|∂_{x_j}ψ| ≤ c₁/(r−ρ)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffConstants {
    pub c0: f64,
    pub c1: f64,
    /// `max |χ'|·(r − ρ)`; at most 2.
    pub chi_slope: f64,
    pub samples: usize,
}

/// Samples the transition shell `ρ ≤ ‖z‖ ≤ r` (uniform in norm, random direction).
pub fn measure_cutoff_constants(g: &KolmogorovGroup, profile: &CutoffProfile, samples: usize, seed: u64) -> Result<CutoffConstants> {
    if samples == 0 {
        return Err(Error::Budget("cut-off sampling needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.dim();
    let (rho, r) = (profile.rho, profile.r);
    let mut c0 = 0.0f64;
    let mut c1 = 0.0f64;
    let mut slope = 0.0f64;
    for _ in 0..samples {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = rng.random_range(-1.0..1.0);
        let z = GroupPoint::from_slice(&x, t)?;
        let nz = g.hom_norm(&z);
        if nz == 0.0 {
            continue;
        }
        let target = rng.random_range(rho..r);
        let w = g.dilate(target / nz, &z)?;
        let (dx, y) = profile.psi_derivatives(g, &w);
        c0 = c0.max(y.abs() * rho * (r - rho));
        c1 = c1.max(dx.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (r - rho));
        slope = slope.max(profile.derivative(target).abs() * (r - rho));
    }
    Ok(CutoffConstants { c0, c1, chi_slope: slope, samples })
}
