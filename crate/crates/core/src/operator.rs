//! Operator description and the structural quantities derived from `B`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{numerical_rank, sym_eig_range, trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Smooth,
    Measurable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceSign {
    Nonneg,
    Unknown,
}

type FieldFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    Const(f64),
    Expr(Arc<Expr>),
    Func(FieldFn),
}

/// A scalar coefficient `(x, t) ↦ value` on `ℝ^N × ℝ`.
#[derive(Clone)]
pub struct CoefficientField {
    arity: usize,
    source: Source,
    pub smoothness: Smoothness,
    pub divergence_sign: DivergenceSign,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoefficientField({})", self.describe())
    }
}

impl CoefficientField {
    pub fn constant(n: usize, v: f64) -> Self {
        CoefficientField {
            arity: n,
            source: Source::Const(v),
            smoothness: Smoothness::Smooth,
            divergence_sign: DivergenceSign::Nonneg,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    /// Field given by an expression in `x1..xN, t`.
    pub fn from_expr(n: usize, expr: Expr) -> Result<Self> {
        let k = expr.max_spatial_index();
        if k > n {
            return Err(Error::Domain(format!(
                "expression '{expr}' references x{k} but the dimension is {n}"
            )));
        }
        let smoothness = if contains_nonsmooth(&expr) {
            Smoothness::Measurable
        } else {
            Smoothness::Smooth
        };
        Ok(CoefficientField {
            arity: n,
            source: Source::Expr(Arc::new(expr)),
            smoothness,
            divergence_sign: DivergenceSign::Unknown,
        })
    }

    pub fn parse(n: usize, src: &str) -> Result<Self> {
        Self::from_expr(n, Expr::parse(src)?)
    }

    /// Field given by an arbitrary closure.
    pub fn from_fn<F>(n: usize, smoothness: Smoothness, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        CoefficientField {
            arity: n,
            source: Source::Func(Arc::new(f)),
            smoothness,
            divergence_sign: DivergenceSign::Unknown,
        }
    }

    pub fn with_divergence_sign(mut self, s: DivergenceSign) -> Self {
        self.divergence_sign = s;
        self
    }

    /// Number of spatial variables (time is always an extra argument).
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        match &self.source {
            Source::Const(v) => Ok(*v),
            Source::Expr(e) => Ok(e.eval(x, t)?),
            Source::Func(f) => Ok(f(x, t)),
        }
    }

    /// False only when the field provably ignores `t`.
    pub fn depends_on_time(&self) -> bool {
        match &self.source {
            Source::Const(_) => false,
            Source::Expr(e) => e.variables().contains(&crate::expr::Var::T),
            Source::Func(_) => true,
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.source {
            Source::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    pub fn describe(&self) -> String {
        match &self.source {
            Source::Const(v) => format!("{v:?}"),
            Source::Expr(e) => e.to_string(),
            Source::Func(_) => "<closure>".to_string(),
        }
    }
}

fn contains_nonsmooth(e: &Expr) -> bool {
    use crate::expr::Func;
    match e {
        Expr::Num(_) | Expr::Var(_) => false,
        Expr::Neg(a) => contains_nonsmooth(a),
        Expr::Bin(_, a, b) => contains_nonsmooth(a) || contains_nonsmooth(b),
        Expr::Call(f, args) => {
            matches!(f, Func::Abs | Func::Min | Func::Max) || args.iter().any(contains_nonsmooth)
        }
    }
}

/// The full operator `L`.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub n: usize,
    pub m0: usize,
    pub b: DMatrix<f64>,
    pub lambda: f64,
    /// `m0 × m0`, symmetric.
    pub diffusion: Vec<Vec<CoefficientField>>,
    pub drift_a: Vec<CoefficientField>,
    pub drift_b: Vec<CoefficientField>,
    pub zero_order: CoefficientField,
    pub q: f64,
}

impl OperatorSpec {
    /// Principal part only: `A = A₀`, no lower-order terms, `λ = 1`.
    pub fn principal(b: DMatrix<f64>, m0: usize, q: f64) -> Result<Self> {
        let n = b.nrows();
        if b.ncols() != n {
            return Err(Error::Shape(format!("B is {}x{}", b.nrows(), b.ncols())));
        }
        if m0 == 0 || m0 > n {
            return Err(Error::Domain(format!("m0 = {m0} must lie in 1..={n}")));
        }
        let diffusion = (0..m0)
            .map(|i| {
                (0..m0)
                    .map(|j| CoefficientField::constant(n, if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        Ok(OperatorSpec {
            n,
            m0,
            b,
            lambda: 1.0,
            diffusion,
            drift_a: vec![CoefficientField::zero(n); m0],
            drift_b: vec![CoefficientField::zero(n); m0],
            zero_order: CoefficientField::zero(n),
            q,
        })
    }

    /// Heat operator in `N` space variables.
    pub fn heat(n: usize) -> Result<Self> {
        let mut s = Self::principal(DMatrix::zeros(n, n), n, 0.0)?;
        s.q = default_q(&s)?;
        Ok(s)
    }

    /// Langevin operator `∂²_{x1} + x1 ∂_{x2} − ∂_t`.
    pub fn langevin() -> Self {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        Self::principal(b, 1, 5.0).expect("langevin preset is well formed")
    }

    /// Kinetic operator with `B = [[0, 0], [I_n, 0]]`, `N = 2n`, `m0 = n`.
    pub fn kinetic(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("kinetic preset needs n >= 1".into()));
        }
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            b[(n + i, i)] = 1.0;
        }
        let mut s = Self::principal(b, n, 0.0)?;
        s.q = default_q(&s)?;
        Ok(s)
    }

    pub fn blocks(&self) -> Result<BlockStructure> {
        detect_block_structure(&self.b, self.m0)
    }

    pub fn exponents(&self) -> Result<ExponentSet> {
        exponents(self.q, self.blocks()?.q_dim)
    }

    pub fn trace_b(&self) -> f64 {
        trace(&self.b)
    }

    /// True when `A = A₀` and every lower-order coefficient vanishes.
    pub fn is_principal_only(&self) -> bool {
        let identity = (0..self.m0).all(|i| {
            (0..self.m0).all(|j| self.diffusion[i][j].as_constant() == Some(if i == j { 1.0 } else { 0.0 }))
        });
        identity
            && self.drift_a.iter().all(CoefficientField::is_zero)
            && self.drift_b.iter().all(CoefficientField::is_zero)
            && self.zero_order.is_zero()
    }

    /// Diffusion matrix `(a_ij)` at a point.
    pub fn diffusion_at(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let mut a = DMatrix::zeros(self.m0, self.m0);
        for i in 0..self.m0 {
            for j in 0..self.m0 {
                a[(i, j)] = self.diffusion[i][j].eval(x, t)?;
            }
        }
        Ok(a)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let m0 = self.m0;
        if self.b.nrows() != self.n || self.b.ncols() != self.n {
            return Err(Error::Shape(format!("B must be {0}x{0}", self.n)));
        }
        if m0 == 0 || m0 > self.n {
            return Err(Error::Domain(format!("m0 = {m0} must lie in 1..={}", self.n)));
        }
        if self.diffusion.len() != m0 || self.diffusion.iter().any(|r| r.len() != m0) {
            return Err(Error::Shape(format!("diffusion must be {m0}x{m0}")));
        }
        if self.drift_a.len() != m0 || self.drift_b.len() != m0 {
            return Err(Error::Shape(format!("drift vectors must have {m0} entries")));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Domain(format!("lambda = {} must be positive", self.lambda)));
        }
        Ok(())
    }
}

/// `q = 5` when it satisfies the integrability threshold, else `q = Q + 2`.
fn default_q(spec: &OperatorSpec) -> Result<f64> {
    let qd = spec.blocks()?.q_dim as f64;
    Ok(if 5.0 > 0.75 * (qd + 2.0) { 5.0 } else { qd + 2.0 })
}

/// Rank of `[P₀ | B P₀ | … | B^{N−1} P₀]`, `P₀` the injection of the first `m0` coordinates.
pub fn kalman_rank(b: &DMatrix<f64>, m0: usize) -> Result<usize> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(Error::Shape(format!("B must be square, got {}x{}", b.nrows(), b.ncols())));
    }
    if m0 == 0 || m0 > n {
        return Err(Error::Domain(format!("m0 = {m0} must lie in 1..={n}")));
    }
    let mut blocks = Vec::with_capacity(n);
    let mut cur = DMatrix::<f64>::identity(n, n).columns(0, m0).into_owned();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = b * &cur;
    }
    Ok(numerical_rank(&hstack(&blocks)))
}

fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Block sizes `m₀ ≥ … ≥ m_κ`, dilation exponents and homogeneous dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockStructure {
    pub kappa: usize,
    pub m: Vec<usize>,
    /// Spatial exponents `α_i = 2j + 1` (the time exponent is always 2).
    pub exponents: Vec<u32>,
    #[serde(rename = "Q")]
    pub q_dim: usize,
}

impl BlockStructure {
    pub const TIME_EXPONENT: u32 = 2;

    pub fn from_sizes(m: Vec<usize>) -> Self {
        let mut exponents = Vec::new();
        let mut q_dim = 0;
        for (j, &mj) in m.iter().enumerate() {
            let a = 2 * j as u32 + 1;
            exponents.extend(std::iter::repeat_n(a, mj));
            q_dim += a as usize * mj;
        }
        BlockStructure { kappa: m.len() - 1, m, exponents, q_dim }
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Coordinate range of block `j`.
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let start: usize = self.m[..j].iter().sum();
        start..start + self.m[j]
    }

    /// `Q + 2`, the exponent of the dilation Jacobian.
    pub fn scaling_dim(&self) -> usize {
        self.q_dim + 2
    }

    /// `B₀`: keeps only the sub-diagonal blocks `B_j` (rows of block `j`, columns of block `j−1`).
    pub fn principal_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut b0 = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 1..=self.kappa {
            let rows = self.block_range(j);
            let cols = self.block_range(j - 1);
            for r in rows.clone() {
                for c in cols.clone() {
                    b0[(r, c)] = b[(r, c)];
                }
            }
        }
        b0
    }
}

/// Extracts `(κ, m_j, Q)` from rank increments of `K_j = [P₀ | … | B^j P₀]`.
pub fn detect_block_structure(b: &DMatrix<f64>, m0: usize) -> Result<BlockStructure> {
    let n = b.nrows();
    let total = kalman_rank(b, m0)?;
    let mut cur = DMatrix::<f64>::identity(n, n).columns(0, m0).into_owned();
    let mut blocks = vec![cur.clone()];
    let mut rank = numerical_rank(&cur);
    let mut m = vec![rank];
    let mut step = 0;
    while rank < n {
        step += 1;
        cur = b * &cur;
        blocks.push(cur.clone());
        let next = numerical_rank(&hstack(&blocks));
        if next == rank || step >= n {
            return Err(Error::Classification { step, rank: total, dim: n });
        }
        m.push(next - rank);
        rank = next;
    }
    Ok(BlockStructure::from_sizes(m))
}

/// Integrability exponents of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentSet {
    pub q: f64,
    #[serde(rename = "Q")]
    pub q_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    /// `q > ¾(Q+2)`.
    pub integrability_ok: bool,
}

impl ExponentSet {
    pub fn two_beta_mu(&self) -> f64 {
        2.0 * self.beta * self.mu
    }
}

/// `α = q(Q+2)/(q(Q−2) + 2(Q+2))`, `β = q/(q−1)`, `μ = 2α/(α−1)`, `γ = 2α²β/(α−1)`.
///
/// `q = ∞` gives the limits `α = (Q+2)/(Q−2)`, `β = 1`.
pub fn exponents(q: f64, q_dim: usize) -> Result<ExponentSet> {
    let qd = q_dim as f64;
    if q.is_nan() || q <= (qd + 2.0) / 2.0 {
        return Err(Error::Domain(format!(
            "q = {q} must exceed (Q+2)/2 = {}",
            (qd + 2.0) / 2.0
        )));
    }
    let (alpha, beta) = if q.is_infinite() {
        ((qd + 2.0) / (qd - 2.0), 1.0)
    } else {
        let den = q * (qd - 2.0) + 2.0 * (qd + 2.0);
        (q * (qd + 2.0) / den, q / (q - 1.0))
    };
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "alpha = {alpha} is not a finite value above 1 for q = {q}, Q = {q_dim}"
        )));
    }
    Ok(ExponentSet {
        q,
        q_dim,
        alpha,
        beta,
        gamma: 2.0 * alpha * alpha * beta / (alpha - 1.0),
        mu: 2.0 * alpha / (alpha - 1.0),
        integrability_ok: q > 0.75 * (qd + 2.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisVerdict {
    pub pass: bool,
    pub failures: Vec<String>,
}

impl HypothesisVerdict {
    fn from_failures(failures: Vec<String>) -> Self {
        HypothesisVerdict { pass: failures.is_empty(), failures }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// Symmetry and eigenvalue bounds of `(a_ij)`.
    pub h1: HypothesisVerdict,
    /// Kalman rank equals `N`.
    pub h2: HypothesisVerdict,
    /// `q > ¾(Q+2)` and non-negative divergence of `a`, `b`.
    pub h3: HypothesisVerdict,
    pub kalman_rank: usize,
    pub trace_b: f64,
    /// Largest distributional pairing `∫⟨b, ∇φ⟩` over the bump battery (should be ≤ 0).
    pub max_pairing_b: f64,
    pub max_pairing_a: f64,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.h1.pass && self.h2.pass && self.h3.pass
    }
}

pub const BUMP_COUNT: usize = 20;

/// Checks the structural hypotheses on `[-1, 1]^{N+1}` with `sample_budget` random points.
pub fn validate_hypotheses(spec: &OperatorSpec, sample_budget: usize, seed: u64) -> HypothesisReport {
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h1 = Vec::new();
    if let Err(e) = spec.check_shapes() {
        h1.push(e.to_string());
    }
    let shapes_ok = h1.is_empty();

    if shapes_ok {
        let lo = 1.0 / spec.lambda;
        let hi = spec.lambda;
        for _ in 0..sample_budget.max(1) {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = rng.random_range(-1.0..1.0);
            match spec.diffusion_at(&x, t) {
                Ok(a) => {
                    let asym = (&a - a.transpose()).amax();
                    if asym > 1e-12 * a.amax().max(1.0) {
                        h1.push(format!("a_ij not symmetric at x={x:?}, t={t} (|a - a^T| = {asym:e})"));
                    }
                    let (emin, emax) = sym_eig_range(&a);
                    let tol = 1e-12 * hi;
                    if emin < lo - tol || emax > hi + tol {
                        h1.push(format!(
                            "eigenvalues [{emin}, {emax}] outside [{lo}, {hi}] at x={x:?}, t={t}"
                        ));
                    }
                }
                Err(e) => h1.push(format!("evaluation failed at x={x:?}, t={t}: {e}")),
            }
            if h1.len() >= 5 {
                break;
            }
        }
    }

    let rank = kalman_rank(&spec.b, spec.m0).unwrap_or(0);
    let mut h2 = Vec::new();
    if rank != n {
        h2.push(format!("Kalman rank {rank} < N = {n}"));
    }

    let mut h3 = Vec::new();
    let (mut max_b, mut max_a) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    match detect_block_structure(&spec.b, spec.m0) {
        Ok(bs) => {
            let qd = bs.q_dim as f64;
            if !(spec.q > 0.75 * (qd + 2.0)) {
                h3.push(format!("q = {} does not exceed 3/4 (Q+2) = {}", spec.q, 0.75 * (qd + 2.0)));
            }
        }
        Err(e) => h3.push(format!("integrability threshold undefined: {e}")),
    }
    if shapes_ok {
        let per_axis = ((sample_budget.max(1) as f64).powf(1.0 / (n + 1) as f64).floor() as usize).clamp(6, 24);
        let bumps: Vec<Bump> = (0..BUMP_COUNT).map(|_| Bump::random(n, &mut rng)).collect();
        for (name, field, max) in [("b", &spec.drift_b, &mut max_b), ("a", &spec.drift_a, &mut max_a)] {
            if field.iter().all(CoefficientField::is_zero) {
                *max = 0.0;
                continue;
            }
            for (k, bump) in bumps.iter().enumerate() {
                match bump.pairing(field, per_axis) {
                    Ok((pair, scale)) => {
                        *max = max.max(pair);
                        if pair > 1e-10 * scale.max(1e-300) {
                            h3.push(format!("div {name} < 0 detected: pairing with bump {k} is {pair:e} > 0"));
                        }
                    }
                    Err(e) => h3.push(format!("pairing of {name} with bump {k} failed: {e}")),
                }
            }
            let declared = field.iter().any(|f| f.divergence_sign == DivergenceSign::Nonneg);
            let smooth = field.iter().all(|f| f.smoothness == Smoothness::Smooth);
            if declared && smooth {
                for _ in 0..sample_budget.clamp(1, 200) {
                    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let t = rng.random_range(-1.0..1.0);
                    match fd_divergence(field, &x, t) {
                        Ok(d) if d < -1e-6 => {
                            h3.push(format!("declared div {name} >= 0 but FD divergence {d:e} at x={x:?}"));
                            break;
                        }
                        Ok(_) => {}
                        Err(e) => {
                            h3.push(format!("FD divergence of {name} failed: {e}"));
                            break;
                        }
                    }
                }
            }
        }
    }

    HypothesisReport {
        h1: HypothesisVerdict::from_failures(h1),
        h2: HypothesisVerdict::from_failures(h2),
        h3: HypothesisVerdict::from_failures(h3),
        kalman_rank: rank,
        trace_b: spec.trace_b(),
        max_pairing_b: max_b,
        max_pairing_a: max_a,
    }
}

/// Centered-difference divergence over the first `m0` coordinates.
fn fd_divergence(field: &[CoefficientField], x: &[f64], t: f64) -> Result<f64> {
    let h = 1e-5;
    let mut d = 0.0;
    let mut y = x.to_vec();
    for (i, f) in field.iter().enumerate() {
        y[i] = x[i] + h;
        let p = f.eval(&y, t)?;
        y[i] = x[i] - h;
        let m = f.eval(&y, t)?;
        y[i] = x[i];
        d += (p - m) / (2.0 * h);
    }
    Ok(d)
}

/// Product bump `Π (1 − s_k²)³` on a box inside `[-1, 1]^{N+1}`.
#[derive(Debug, Clone)]
struct Bump {
    center: Vec<f64>,
    half: Vec<f64>,
}

impl Bump {
    fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut center = Vec::with_capacity(n + 1);
        let mut half = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let w = rng.random_range(0.15..0.5);
            center.push(rng.random_range(-1.0 + w..1.0 - w));
            half.push(w);
        }
        Bump { center, half }
    }

    /// `(∫⟨F, ∇_{m0} φ⟩, ∫|F||∇φ|)` by the midpoint rule on the bump support.
    fn pairing(&self, field: &[CoefficientField], per_axis: usize) -> Result<(f64, f64)> {
        let dim = self.center.len();
        let n = dim - 1;
        let m0 = field.len();
        let h: Vec<f64> = self.half.iter().map(|w| 2.0 * w / per_axis as f64).collect();
        let vol: f64 = h.iter().product();
        let total = per_axis.pow(dim as u32);
        let mut idx = vec![0usize; dim];
        let mut pt = vec![0.0; dim];
        let (mut sum, mut scale) = (0.0, 0.0);
        for _ in 0..total {
            let mut s = vec![0.0; dim];
            for k in 0..dim {
                pt[k] = self.center[k] - self.half[k] + (idx[k] as f64 + 0.5) * h[k];
                s[k] = (pt[k] - self.center[k]) / self.half[k];
            }
            let prof: Vec<f64> = s.iter().map(|&v| (1.0 - v * v).powi(3)).collect();
            let phi: f64 = prof.iter().product();
            if phi > 0.0 {
                let t = pt[n];
                for (i, f) in field.iter().enumerate().take(m0) {
                    let others: f64 = (0..dim).filter(|&k| k != i).map(|k| prof[k]).product();
                    let dprof = -6.0 * s[i] * (1.0 - s[i] * s[i]).powi(2) / self.half[i];
                    let grad = others * dprof;
                    let v = f.eval(&pt[..n], t)?;
                    sum += v * grad;
                    scale += (v * grad).abs();
                }
            }
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok((sum * vol, scale * vol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn langevin_b() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
    }

    /// Rank of `{e_1, B e_1, ...}` by Gaussian elimination on exact small integers.
    fn brute_rank(cols: &[Vec<f64>]) -> usize {
        let mut rows: Vec<Vec<f64>> = cols.to_vec();
        let mut rank = 0;
        let n = rows.first().map_or(0, |r| r.len());
        for c in 0..n {
            if let Some(p) = (rank..rows.len()).find(|&r| rows[r][c].abs() > 1e-12) {
                rows.swap(rank, p);
                for r in 0..rows.len() {
                    if r != rank {
                        let f = rows[r][c] / rows[rank][c];
                        for k in 0..n {
                            rows[r][k] -= f * rows[rank][k];
                        }
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    #[test]
    fn kalman_rank_examples() {
        assert_eq!(kalman_rank(&DMatrix::zeros(2, 2), 2).unwrap(), 2);
        assert_eq!(kalman_rank(&DMatrix::zeros(2, 2), 1).unwrap(), 1);
        let b = langevin_b();
        let oracle = brute_rank(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(kalman_rank(&b, 1).unwrap(), oracle);
        assert!(matches!(kalman_rank(&DMatrix::zeros(2, 3), 1), Err(Error::Shape(_))));
    }

    #[test]
    fn block_structure_examples() {
        let bs = detect_block_structure(&langevin_b(), 1).unwrap();
        assert_eq!((bs.kappa, bs.m.clone(), bs.exponents.clone(), bs.q_dim), (1, vec![1, 1], vec![1, 3], 4));
        let bs = detect_block_structure(&DMatrix::zeros(3, 3), 3).unwrap();
        assert_eq!((bs.kappa, bs.m.clone(), bs.q_dim), (0, vec![3], 3));
        let k = OperatorSpec::kinetic(2).unwrap();
        let bs = k.blocks().unwrap();
        assert_eq!((bs.kappa, bs.m.clone(), bs.q_dim), (1, vec![2, 2], 8));
        match detect_block_structure(&DMatrix::zeros(2, 2), 1) {
            Err(Error::Classification { step: 1, rank: 1, dim: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn principal_matrix_zeroes_star_blocks() {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -0.3]);
        let bs = detect_block_structure(&b, 1).unwrap();
        let b0 = bs.principal_matrix(&b);
        assert_eq!(b0, langevin_b());
    }

    #[test]
    fn exponent_examples() {
        let e = exponents(5.0, 4).unwrap();
        assert!((e.alpha - 15.0 / 11.0).abs() < 1e-15);
        assert!((e.beta - 1.25).abs() < 1e-15);
        assert!((e.mu - 7.5).abs() < 1e-12);
        assert!((e.two_beta_mu() - 18.75).abs() < 1e-12);
        let oracle_gamma = 2.0 * (15.0f64 / 11.0).powi(2) * 1.25 / (4.0 / 11.0);
        assert!((e.gamma - oracle_gamma).abs() < 1e-12);
        assert!((e.gamma - 12.784).abs() < 1e-3);
        assert!(e.integrability_ok);
        let big = exponents(1e12, 4).unwrap();
        assert!((big.alpha - 3.0).abs() < 1e-9 && (big.beta - 1.0).abs() < 1e-9);
        let inf = exponents(f64::INFINITY, 4).unwrap();
        assert_eq!((inf.alpha, inf.beta), (3.0, 1.0));
        assert!(!exponents(4.5, 4).unwrap().integrability_ok);
        assert!(matches!(exponents(3.0, 4), Err(Error::Domain(_))));
        assert!(matches!(exponents(6.0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn hypotheses_langevin_pass() {
        let r = validate_hypotheses(&OperatorSpec::langevin(), 200, 1);
        assert!(r.all_pass(), "{r:?}");
    }

    #[test]
    fn divergence_pairing_for_linear_drift() {
        let mut s = OperatorSpec::langevin();
        s.drift_b[0] = CoefficientField::parse(2, "x1").unwrap();
        let r = validate_hypotheses(&s, 4000, 7);
        assert!(r.h3.pass, "{r:?}");
        assert!(r.max_pairing_b < 0.0);
        s.drift_b[0] = CoefficientField::parse(2, "-x1").unwrap();
        assert!(!validate_hypotheses(&s, 4000, 7).h3.pass);
    }

    #[test]
    fn pairing_matches_brute_force_oracle() {
        // ∫ x1 ∂_1 φ = −∫ φ for a bump inside the box; oracle integrates φ directly.
        let bump = Bump { center: vec![0.1, -0.2, 0.0], half: vec![0.4, 0.3, 0.5] };
        let f = vec![CoefficientField::parse(2, "x1").unwrap()];
        let (pair, _) = bump.pairing(&f, 40).unwrap();
        let oracle: f64 = bump
            .half
            .iter()
            .map(|w| w * 32.0 / 35.0)
            .product();
        assert!((pair + oracle).abs() < 1e-3 * oracle, "{pair} vs {}", -oracle);
    }

    #[test]
    fn h1_detects_eigenvalue_violation() {
        let mut s = OperatorSpec::langevin();
        s.lambda = 2.0;
        s.diffusion[0][0] = CoefficientField::constant(2, 3.0);
        let r = validate_hypotheses(&s, 50, 3);
        assert!(!r.h1.pass);
    }

    #[test]
    fn smooth_field_fd_derivative_converges() {
        let f = CoefficientField::parse(2, "sin(3*x1)*exp(-t) + x2^2").unwrap();
        assert_eq!(f.smoothness, Smoothness::Smooth);
        let exact = 3.0 * (3.0f64 * 0.3).cos() * (-0.2f64).exp();
        let err = |h: f64| {
            let p = f.eval(&[0.3 + h, 0.1], 0.2).unwrap();
            let m = f.eval(&[0.3, 0.1], 0.2).unwrap();
            ((p - m) / h - exact).abs()
        };
        let slope = (err(1e-3) / err(1e-4)).log10();
        assert!(slope > 0.9, "order {slope}");
        assert_eq!(CoefficientField::parse(2, "abs(x1)").unwrap().smoothness, Smoothness::Measurable);
    }

    fn canonical_b(m: &[usize], seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = m.iter().sum();
        let mut b = DMatrix::zeros(n, n);
        let bs = BlockStructure::from_sizes(m.to_vec());
        for j in 1..m.len() {
            let (r, c) = (bs.block_range(j), bs.block_range(j - 1));
            for (k, row) in r.clone().enumerate() {
                b[(row, c.start + k)] = 1.0 + rng.random_range(0.0..1.0);
                for col in c.clone() {
                    if col != c.start + k {
                        b[(row, col)] += rng.random_range(-0.3..0.3);
                    }
                }
            }
        }
        b
    }

    proptest! {
        #[test]
        fn block_sizes_sum_to_n_and_decrease(m0 in 1usize..4, k in 0usize..3, seed in any::<u64>()) {
            let mut m = vec![m0];
            for _ in 0..k {
                let last = *m.last().unwrap();
                m.push(1.max(last - (seed as usize % last.max(1)).min(last - 1)));
            }
            let b = canonical_b(&m, seed);
            let n = b.nrows();
            prop_assume!(kalman_rank(&b, m0).unwrap() == n);
            let bs = detect_block_structure(&b, m0).unwrap();
            prop_assert_eq!(bs.m.iter().sum::<usize>(), n);
            prop_assert!(bs.m.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(bs.q_dim, bs.m.iter().enumerate().map(|(j, mj)| (2 * j + 1) * mj).sum::<usize>());
        }

        #[test]
        fn q_is_invariant_under_in_block_permutation(seed in any::<u64>()) {
            let b = canonical_b(&[2, 2, 1], seed);
            let bs = detect_block_structure(&b, 2).unwrap();
            // swap coordinates 2 and 3, both in block 1
            let mut p = DMatrix::<f64>::identity(5, 5);
            p.swap_rows(2, 3);
            let pb = &p * &b * p.transpose();
            let bs2 = detect_block_structure(&pb, 2).unwrap();
            prop_assert_eq!(bs.q_dim, bs2.q_dim);
        }

        #[test]
        fn full_rank_diffusion_is_always_hypoelliptic(n in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
            prop_assert_eq!(kalman_rank(&b, n).unwrap(), n);
        }

        #[test]
        fn alpha_exceeds_beta_iff_integrability(qd in 1usize..10, frac in 0.001f64..1.0) {
            let lo = (qd as f64 + 2.0) / 2.0;
            let hi = 4.0 * (qd as f64 + 2.0);
            let q = lo + frac * (hi - lo);
            if let Ok(e) = exponents(q, qd) {
                prop_assert_eq!(e.alpha > e.beta, q > 0.75 * (qd as f64 + 2.0));
            }
        }
    }
}
