//! PL certificates for `H`, block-matrix eigenvalue bounds, smoothness and
//! rate predictions, and the contraction-map search for the unique critical
//! point of separable problems.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::objectives::{eval_jacobian, Objective, Point, Problem, ProblemFamily, ScalarFn};

/// Safety factor applied to sampled upper bounds on non-polynomial families.
pub const SAMPLED_INFLATION: f64 = 1.1;
/// Iteration cap for [`contraction_fixed_point`].
pub const CONTRACTION_MAX_ITERS: usize = 100_000;
/// Upper limit on grid sizes, to keep sampling at desk scale.
pub const MAX_GRID_POINTS: usize = 5_000_000;

/// Constants that control the convergence rate of HGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralProfile {
    /// Per-player smoothness of `g`.
    pub l: f64,
    /// Lower bound on the singular values of `∇²₁₂g`.
    pub gamma: f64,
    /// Upper bound on the singular values of `∇²₁₂g`.
    pub gamma_max: f64,
    /// Floor of `λ_min((∇²₁₁g)²)`.
    pub rho2: f64,
    /// Floor of `λ_min((∇²₂₂g)²)`.
    pub mu2: f64,
    /// Bound on `‖xi‖`.
    pub l1: f64,
    /// Bound on `‖J‖`.
    pub l2: f64,
    /// Lipschitz constant of `J`.
    pub l3: f64,
    /// Joint smoothness of `g`, if known.
    pub l_g: Option<f64>,
}

impl SpectralProfile {
    /// Smoothness constant of `H`: `L1·L3 + L2²`.
    pub fn l_h(&self) -> f64 {
        self.l1 * self.l3 + self.l2 * self.l2
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("l", self.l),
            ("gamma", self.gamma),
            ("gamma_max", self.gamma_max),
            ("rho2", self.rho2),
            ("mu2", self.mu2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("l3", self.l3),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "must be finite and nonnegative"));
            }
        }
        if self.gamma > self.gamma_max {
            return Err(Error::invalid("gamma", "exceeds gamma_max"));
        }
        if let Some(l_g) = self.l_g {
            if !(l_g.is_finite() && l_g >= 0.0) {
                return Err(Error::invalid("l_g", "must be finite and nonnegative"));
            }
            if self.l2 > l_g * (1.0 + 1e-12) {
                return Err(Error::invalid("l2", "exceeds the joint smoothness l_g"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Regime {
    /// `g` is `c`-strongly convex in `x1` and `c`-strongly concave in `x2`.
    StronglyConvexConcave { c: f64 },
    /// `g` is linear in `x2` and the cross block is full rank.
    NonconvexLinear,
    SufficientlyBilinear,
    /// Grid estimate of `inf λ_min(JJᵀ)`.
    Empirical { alpha_hat: f64 },
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::StronglyConvexConcave { .. } => "SCSC",
            Regime::NonconvexLinear => "NonconvexLinear",
            Regime::SufficientlyBilinear => "SufficientlyBilinear",
            Regime::Empirical { .. } => "Empirical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PLCertificate {
    pub alpha: f64,
    pub regime: Regime,
    pub l_h: f64,
    /// Per-step factor on `H`: `1 − α/L_H`.
    pub contraction: f64,
    /// Sufficiently-bilinear margin; only set for that regime.
    pub condition_margin: Option<f64>,
}

fn certificate(alpha: f64, regime: Regime, l_h: f64, condition_margin: Option<f64>) -> Result<PLCertificate> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::refused(format!("PL constant {alpha} is not positive"), Some(alpha)));
    }
    if !(l_h > 0.0 && l_h.is_finite()) {
        return Err(Error::refused(format!("smoothness L_H = {l_h} is not positive"), None));
    }
    if alpha > l_h {
        return Err(Error::refused(
            format!("alpha = {alpha} exceeds L_H = {l_h}; inconsistent profile"),
            Some(l_h - alpha),
        ));
    }
    Ok(PLCertificate {
        alpha,
        regime,
        l_h,
        contraction: 1.0 - alpha / l_h,
        condition_margin,
    })
}

/// PL constant of `H` for the given regime.
pub fn pl_parameter(profile: &SpectralProfile, regime: Regime) -> Result<PLCertificate> {
    profile.validate()?;
    let l_h = profile.l_h();
    match regime {
        Regime::StronglyConvexConcave { c } => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::refused("strong convexity modulus must be positive", Some(c)));
            }
            certificate(c * c, regime, l_h, None)
        }
        Regime::NonconvexLinear => {
            let (g, l) = (profile.gamma, profile.l);
            if g <= 0.0 {
                return Err(Error::refused("cross block is not full rank (gamma = 0)", Some(g)));
            }
            certificate(g.powi(4) / (2.0 * g * g + l * l), regime, l_h, None)
        }
        Regime::SufficientlyBilinear => {
            let check = check_sufficiently_bilinear(profile);
            if !check.holds {
                return Err(Error::refused(
                    format!("sufficiently bilinear condition fails with margin {}", check.margin),
                    Some(check.margin),
                ));
            }
            let g2 = profile.gamma * profile.gamma;
            let denom = 2.0 * g2 + profile.rho2 + profile.mu2;
            certificate(check.margin / denom, regime, l_h, Some(check.margin))
        }
        Regime::Empirical { alpha_hat } => certificate(alpha_hat, regime, l_h, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BilinearCheck {
    pub holds: bool,
    /// `(γ²+ρ²)(μ²+γ²) − 4L²Γ²`.
    pub margin: f64,
    /// Same with `4LΓ²`; diagnostic only.
    pub alt_margin: f64,
}

pub fn check_sufficiently_bilinear(profile: &SpectralProfile) -> BilinearCheck {
    let g2 = profile.gamma * profile.gamma;
    let big2 = profile.gamma_max * profile.gamma_max;
    let l = profile.l;
    let product = (g2 + profile.rho2) * (profile.mu2 + g2);
    let margin = product - 4.0 * l * l * big2;
    BilinearCheck {
        holds: margin > 0.0,
        margin,
        alt_margin: product - 4.0 * l * big2,
    }
}

fn require_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::invalid(name, format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entries"));
    }
    Ok(())
}

fn require_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::invalid(name, "must be symmetric"));
    }
    Ok(())
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().symmetric_eigen().eigenvalues
}

/// Spectral norm.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn singular_range(m: &DMatrix<f64>) -> (f64, f64) {
    let s = m.singular_values();
    (s.min(), s.max())
}

/// `λ_min(M²)` for symmetric `M`, i.e. the squared smallest `|λ(M)|`.
fn min_square_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().map(|v| v * v).fold(f64::INFINITY, f64::min)
}

/// Lower bound `ε²` on `λ(HHᵀ)` for `H = [[M1, B], [−Bᵀ, −M2]]` with
/// `M1 ≻ εI` and `M2 ≺ −εI`.
pub fn eig_bound_definite(m1: &DMatrix<f64>, m2: &DMatrix<f64>, b: &DMatrix<f64>, eps: f64) -> Result<f64> {
    let n = m1.nrows();
    require_square("m1", m1, n)?;
    require_square("m2", m2, n)?;
    require_square("b", b, n)?;
    require_symmetric("m1", m1)?;
    require_symmetric("m2", m2)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps", "must be finite and nonnegative"));
    }
    let lo = sym_eigenvalues(m1).min();
    if lo <= eps {
        return Err(Error::refused(
            format!("block M1 is not above eps: lambda_min = {lo}"),
            Some(lo - eps),
        ));
    }
    let hi = sym_eigenvalues(m2).max();
    if hi >= -eps {
        return Err(Error::refused(
            format!("block M2 is not below -eps: lambda_max = {hi}"),
            Some(-eps - hi),
        ));
    }
    Ok(eps * eps)
}

/// Lower bound `σ⁴/(2σ² + ‖A‖²)` on `λ(HHᵀ)` for `H = [[A, C], [−Cᵀ, 0]]`.
pub fn eig_bound_convex(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let n = c.nrows();
    require_square("c", c, n)?;
    require_square("a", a, n)?;
    require_symmetric("a", a)?;
    let (s_min, _) = singular_range(c);
    if s_min <= 0.0 {
        return Err(Error::refused("C is singular", Some(s_min)));
    }
    let s2 = s_min * s_min;
    let a_norm = operator_norm(a);
    Ok(s2 * s2 / (2.0 * s2 + a_norm * a_norm))
}

/// Lower bound `c/b` on `λ(HHᵀ)` for `H = [[A, C], [−Cᵀ, −B]]`, valid when
/// `c = (σ²_min + λ_min(A²))(λ_min(B²) + σ²_min) − σ²_max(‖A‖ + ‖B‖)² > 0`.
pub fn eig_bound_general(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let n = c.nrows();
    require_square("c", c, n)?;
    require_square("a", a, n)?;
    require_square("b", b, n)?;
    require_symmetric("a", a)?;
    require_symmetric("b", b)?;
    let (s_min, s_max) = singular_range(c);
    if s_min <= 0.0 {
        return Err(Error::refused("C is singular", Some(s_min)));
    }
    let s2 = s_min * s_min;
    let (a2, b2) = (min_square_eigenvalue(a), min_square_eigenvalue(b));
    let norms = operator_norm(a) + operator_norm(b);
    let numer = (s2 + a2) * (b2 + s2) - s_max * s_max * norms * norms;
    if numer <= 0.0 {
        return Err(Error::refused(format!("c = {numer} is not positive"), Some(numer)));
    }
    Ok(numer / (2.0 * s2 + a2 + b2))
}

/// `λ_min(HHᵀ)` by a dense symmetric eigensolver.
pub fn min_eig_hht(h: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(&(h * h.transpose())).min()
}

/// Box `[lo, hi]^{2d}` sampled at `resolution` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
}

impl Region {
    pub fn new(lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        let r = Region { lo, hi, resolution };
        r.validate()?;
        Ok(r)
    }

    /// Symmetric box `[-radius, radius]` with the finest resolution whose
    /// grid stays under `budget` points in `2d` dimensions.
    pub fn within_budget(radius: f64, d: usize, budget: usize) -> Result<Self> {
        let per_axis = (budget as f64).powf(1.0 / (2 * d) as f64).floor() as usize;
        Region::new(-radius, radius, per_axis.max(2))
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid("region", "need finite lo < hi"));
        }
        if self.resolution < 2 {
            return Err(Error::invalid("resolution", "need at least 2 points per axis"));
        }
        Ok(())
    }

    fn axis(&self, i: usize) -> f64 {
        let t = i as f64 / (self.resolution - 1) as f64;
        self.lo + t * (self.hi - self.lo)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.resolution - 1) as f64
    }

    fn grid_size(&self, d: usize) -> Result<usize> {
        let size = (self.resolution as u128).checked_pow(2 * d as u32).unwrap_or(u128::MAX);
        if size > MAX_GRID_POINTS as u128 {
            return Err(Error::invalid(
                "resolution",
                format!("grid of {size} points exceeds the limit of {MAX_GRID_POINTS}"),
            ));
        }
        Ok(size as usize)
    }

    /// Grid points in lexicographic order.
    fn points(&self, d: usize) -> Result<impl Iterator<Item = Point> + '_> {
        self.validate()?;
        let total = self.grid_size(d)?;
        let n = self.resolution;
        Ok((0..total).map(move |mut idx| {
            let mut coords = vec![0.0; 2 * d];
            for c in coords.iter_mut().rev() {
                *c = self.axis(idx % n);
                idx /= n;
            }
            Point::from_slice(&coords).expect("grid points are finite")
        }))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] @ {} per axis", self.lo, self.hi, self.resolution)
    }
}

/// Grid-certified PL constant: the minimum of `λ_min(JJᵀ)` over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEstimate {
    pub alpha_hat: f64,
    pub argmin: Point,
    pub region: Region,
    pub points: usize,
}

pub fn min_eig_jjt<O: Objective + ?Sized>(obj: &O, region: &Region) -> Result<GridEstimate> {
    let mut best: Option<(f64, Point)> = None;
    let mut points = 0;
    for p in region.points(obj.dim())? {
        points += 1;
        let lam = min_eig_hht(&eval_jacobian(obj, &p)?);
        if best.as_ref().is_none_or(|(b, _)| lam < *b) {
            best = Some((lam, p));
        }
    }
    let (alpha_hat, argmin) = best.expect("grid is nonempty");
    Ok(GridEstimate {
        alpha_hat,
        argmin,
        region: *region,
        points,
    })
}

/// `L_H = L1·L3 + L2²`.
pub fn smoothness_lh(l1: f64, l2: f64, l3: f64) -> Result<f64> {
    for (name, v) in [("l1", l1), ("l2", l2), ("l3", l3)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be finite and nonnegative"));
        }
    }
    Ok(l1 * l3 + l2 * l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePrediction {
    /// Per-step factor on `H`.
    pub h_factor: f64,
    /// Per-step factor on `‖xi‖`.
    pub grad_factor: f64,
}

pub fn predict_rate(cert: &PLCertificate, l_h: f64) -> Result<RatePrediction> {
    if !(l_h > 0.0 && l_h.is_finite()) {
        return Err(Error::invalid("l_h", "must be positive"));
    }
    if cert.alpha.is_nan() || cert.alpha <= 0.0 {
        return Err(Error::refused("alpha must be positive", Some(cert.alpha)));
    }
    if cert.alpha > l_h {
        return Err(Error::refused(
            format!("alpha = {} exceeds L_H = {l_h}", cert.alpha),
            Some(l_h - cert.alpha),
        ));
    }
    let h_factor = 1.0 - cert.alpha / l_h;
    Ok(RatePrediction {
        h_factor,
        grad_factor: h_factor.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoParameters {
    pub eta: f64,
    pub co_gamma: f64,
    /// Per-step factor on `‖xi‖`.
    pub rate: f64,
}

/// Step size and mixing weight under which CO contracts `‖xi‖` by
/// `1 − α/(4L_H)` per step.
pub fn co_parameters(alpha: f64, l_h: f64, l_g: f64) -> Result<CoParameters> {
    for (name, v) in [("alpha", alpha), ("l_h", l_h), ("l_g", l_g)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be positive"));
        }
    }
    Ok(CoParameters {
        eta: alpha / (4.0 * l_h * l_g),
        co_gamma: 4.0 * l_g / alpha,
        rate: 1.0 - alpha / (4.0 * l_h),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub iterations: usize,
}

impl FixedPoint {
    pub fn point(&self) -> Result<Point> {
        Point::new(self.x1.as_slice(), self.x2.as_slice())
    }
}

/// Critical point of `f(x1) + c·x1ᵀx2 − h(x2)` via the fixed point of
/// `z ↦ −(1/c)∇f((1/c)∇h(z))`, a contraction when `c > L`.
pub fn contraction_fixed_point<F, H>(
    grad_f: F,
    grad_h: H,
    c: f64,
    lipschitz: f64,
    start: &DVector<f64>,
    tol: f64,
) -> Result<FixedPoint>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::invalid("lipschitz", "must be finite and nonnegative"));
    }
    if c.is_nan() || c <= lipschitz {
        return Err(Error::refused(
            format!("coupling c = {c} does not exceed L = {lipschitz}; contraction not guaranteed"),
            Some(c - lipschitz),
        ));
    }
    let inv = 1.0 / c;
    let map = |z: &DVector<f64>| -grad_f(&(grad_h(z) * inv)) * inv;
    let mut z = start.clone();
    for k in 1..=CONTRACTION_MAX_ITERS {
        let next = map(&z);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fixed-point iterate"));
        }
        let step = (&next - &z).norm();
        z = next;
        if step <= tol {
            return Ok(FixedPoint {
                x1: grad_h(&z) * inv,
                x2: z,
                iterations: k,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: CONTRACTION_MAX_ITERS,
    })
}

/// The unique critical point of a separable problem, when `c > L`.
pub fn separable_critical_point(problem: &Problem, tol: f64) -> Result<FixedPoint> {
    let (f, h, c, l) = problem
        .separable_parts()
        .ok_or_else(|| Error::invalid("family", "not a separable problem"))?;
    let d = problem.dim();
    contraction_fixed_point(
        |v: &DVector<f64>| v.map(|t| f.first(t)),
        |v: &DVector<f64>| v.map(|t| h.first(t)),
        c,
        l,
        &DVector::zeros(d),
        tol,
    )
}

fn inflate(v: f64, exact: bool) -> f64 {
    if exact {
        v
    } else {
        v * SAMPLED_INFLATION
    }
}

/// Estimates a [`SpectralProfile`] by sampling `J` over `region`. Sampled
/// upper bounds are inflated by 10% unless `J` is constant; separable
/// families use their closed-form `L`, `γ` and `Γ`. The result certifies
/// the sampled box only.
pub fn estimate_profile(problem: &Problem, region: &Region) -> Result<SpectralProfile> {
    let d = problem.dim();
    let exact = problem.has_constant_jacobian();
    let h = region.spacing();

    let mut prof = SpectralProfile {
        l: 0.0,
        gamma: f64::INFINITY,
        gamma_max: 0.0,
        rho2: f64::INFINITY,
        mu2: f64::INFINITY,
        l1: 0.0,
        l2: 0.0,
        l3: 0.0,
        l_g: Some(0.0),
    };
    let mut l_g = 0.0f64;

    for p in region.points(d)? {
        let j = eval_jacobian(problem, &p)?;
        let h11 = j.view((0, 0), (d, d)).into_owned();
        let h12 = j.view((0, d), (d, d)).into_owned();
        let h22 = -j.view((d, d), (d, d)).into_owned();
        let (s_min, s_max) = singular_range(&h12);

        prof.l = prof.l.max(operator_norm(&h11)).max(operator_norm(&h22));
        prof.gamma = prof.gamma.min(s_min);
        prof.gamma_max = prof.gamma_max.max(s_max);
        prof.rho2 = prof.rho2.min(min_square_eigenvalue(&h11));
        prof.mu2 = prof.mu2.min(min_square_eigenvalue(&h22));
        prof.l1 = prof.l1.max(problem.signed_gradient(&p).norm());
        let j_norm = operator_norm(&j);
        prof.l2 = prof.l2.max(j_norm);
        // ∇²g differs from J by an orthogonal row flip, so the norms agree.
        l_g = l_g.max(j_norm);

        if !exact {
            for axis in 0..2 * d {
                let mut q = p.as_vector().clone();
                if q[axis] + h > region.hi + 1e-12 * h {
                    continue;
                }
                q[axis] += h;
                let jq = eval_jacobian(problem, &Point::from_vector(q)?)?;
                prof.l3 = prof.l3.max(operator_norm(&(jq - &j)) / h);
            }
        }
    }

    match problem.separable_parts() {
        // Constant coupling block and closed-form per-player smoothness.
        Some((_, _, c, l)) => {
            prof.l = l;
            prof.gamma = c.abs();
            prof.gamma_max = c.abs();
        }
        None => {
            prof.l = inflate(prof.l, exact);
            prof.gamma_max = inflate(prof.gamma_max, exact);
        }
    }
    prof.l1 = inflate(prof.l1, exact);
    prof.l2 = inflate(prof.l2, exact);
    prof.l3 = inflate(prof.l3, exact);
    prof.l_g = Some(inflate(l_g, exact));
    prof.gamma = prof.gamma.min(prof.gamma_max);
    Ok(prof)
}

/// Everything `certify` reports for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyReport {
    pub label: String,
    pub profile: SpectralProfile,
    pub bilinear: BilinearCheck,
    pub grid: GridEstimate,
    pub certificate: Option<PLCertificate>,
    pub refusal: Option<String>,
    pub rate: Option<RatePrediction>,
    pub co: Option<CoParameters>,
}

fn linear_in_x2(family: &ProblemFamily) -> bool {
    match family {
        ProblemFamily::Bilinear { .. } => true,
        ProblemFamily::RegularizedBilinear { h, .. } => {
            matches!(h, ScalarFn::Linear | ScalarFn::Quadratic { weight: 0.0 })
        }
        _ => false,
    }
}

/// Picks the strongest applicable regime: analytic SCSC, then
/// nonconvex-linear, then sufficiently bilinear, then the grid estimate.
pub fn certify(label: &str, problem: &Problem, region: &Region) -> Result<CertifyReport> {
    let profile = estimate_profile(problem, region)?;
    let bilinear = check_sufficiently_bilinear(&profile);
    let grid = min_eig_jjt(problem, region)?;

    let mut attempts = Vec::new();
    if let ProblemFamily::QuadraticScsc { c } = problem.family() {
        attempts.push(Regime::StronglyConvexConcave { c: *c });
    }
    if linear_in_x2(problem.family()) && profile.gamma > 0.0 {
        attempts.push(Regime::NonconvexLinear);
    }
    if bilinear.holds {
        attempts.push(Regime::SufficientlyBilinear);
    }
    attempts.push(Regime::Empirical {
        alpha_hat: grid.alpha_hat,
    });

    let mut certificate = None;
    let mut refusal = None;
    for regime in attempts {
        match pl_parameter(&profile, regime) {
            Ok(cert) => {
                certificate = Some(cert);
                refusal = None;
                break;
            }
            Err(Error::Refused { reason, .. }) => refusal = Some(reason),
            Err(e) => return Err(e),
        }
    }

    let rate = match &certificate {
        Some(cert) => Some(predict_rate(cert, cert.l_h)?),
        None => None,
    };
    let co = match (&certificate, profile.l_g) {
        (Some(cert), Some(l_g)) if l_g > 0.0 => Some(co_parameters(cert.alpha, cert.l_h, l_g)?),
        _ => None,
    };
    Ok(CertifyReport {
        label: label.to_string(),
        profile,
        bilinear,
        grid,
        certificate,
        refusal,
        rate,
        co,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.9e}"))
}

impl CertifyReport {
    /// Single-line `key=value` summary.
    pub fn machine_line(&self) -> String {
        let cert = self.certificate.as_ref();
        format!(
            "certify label={} regime={} alpha={} l_h={:.9e} contraction={} grad_factor={} \
             margin={:.9e} alt_margin={:.9e} alpha_hat={:.9e} co_eta={} co_gamma={} \
             region_lo={} region_hi={} resolution={}",
            self.label,
            cert.map_or("refused", |c| c.regime.name()),
            opt(cert.map(|c| c.alpha)),
            self.profile.l_h(),
            opt(cert.map(|c| c.contraction)),
            opt(self.rate.map(|r| r.grad_factor)),
            self.bilinear.margin,
            self.bilinear.alt_margin,
            self.grid.alpha_hat,
            opt(self.co.map(|c| c.eta)),
            opt(self.co.map(|c| c.co_gamma)),
            self.grid.region.lo,
            self.grid.region.hi,
            self.grid.region.resolution,
        )
    }
}

impl fmt::Display for CertifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.profile;
        writeln!(f, "certificate for {}", self.label)?;
        writeln!(f, "  region            {} ({} grid points)", self.grid.region, self.grid.points)?;
        writeln!(f, "  L                 {:.6}", p.l)?;
        writeln!(f, "  gamma / Gamma     {:.6} / {:.6}", p.gamma, p.gamma_max)?;
        writeln!(f, "  rho^2 / mu^2      {:.6} / {:.6}", p.rho2, p.mu2)?;
        writeln!(f, "  L1 L2 L3          {:.6} {:.6} {:.6}", p.l1, p.l2, p.l3)?;
        writeln!(f, "  L_H               {:.6}", p.l_h())?;
        writeln!(
            f,
            "  bilinear margin   {:.6} (holds: {}; with 4*L*Gamma^2: {:.6})",
            self.bilinear.margin, self.bilinear.holds, self.bilinear.alt_margin
        )?;
        writeln!(f, "  grid alpha_hat    {:.6e} at {:?}", self.grid.alpha_hat, self.grid.argmin.as_vector().as_slice())?;
        match &self.certificate {
            Some(c) => {
                writeln!(f, "  regime            {}", c.regime.name())?;
                writeln!(f, "  alpha             {:.6e}", c.alpha)?;
                writeln!(f, "  contraction (H)   {:.9}", c.contraction)?;
                if let Some(r) = &self.rate {
                    writeln!(f, "  contraction (xi)  {:.9}", r.grad_factor)?;
                }
                if let Some(co) = &self.co {
                    writeln!(f, "  CO eta / gamma    {:.6e} / {:.6e}", co.eta, co.co_gamma)?;
                }
            }
            None => {
                writeln!(f, "  regime            refused")?;
                if let Some(r) = &self.refusal {
                    writeln!(f, "  reason            {r}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{grad_h, hamiltonian};
    use crate::objectives::{build_objective, piecewise_f, Order, ScalarBase};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(l: f64, gamma: f64, gamma_max: f64, l2: f64) -> SpectralProfile {
        SpectralProfile {
            l,
            gamma,
            gamma_max,
            rho2: 0.0,
            mu2: 0.0,
            l1: 0.0,
            l2,
            l3: 0.0,
            l_g: None,
        }
    }

    #[test]
    fn pl_parameter_examples() {
        let p = profile(1.0, 0.0, 0.0, 2f64.sqrt());
        let cert = pl_parameter(&p, Regime::StronglyConvexConcave { c: 1.0 }).unwrap();
        assert_eq!(cert.alpha, 1.0);
        assert!((cert.contraction - 0.5).abs() < 1e-15);

        let p = profile(1.0, 2.0, 2.0, 3.0);
        let cert = pl_parameter(&p, Regime::NonconvexLinear).unwrap();
        assert!((cert.alpha - 16.0 / 9.0).abs() < 1e-15);

        let p = profile(1.0, 3.0, 3.0, 4.0);
        let cert = pl_parameter(&p, Regime::SufficientlyBilinear).unwrap();
        assert_eq!(cert.alpha, 2.5);
        assert_eq!(cert.condition_margin, Some(45.0));
    }

    #[test]
    fn pl_parameter_refusals() {
        let p = profile(3.0, 4.0, 4.0, 10.0);
        match pl_parameter(&p, Regime::SufficientlyBilinear) {
            Err(Error::Refused { margin, .. }) => assert_eq!(margin, Some(-320.0)),
            other => panic!("{other:?}"),
        }
        assert!(pl_parameter(&profile(1.0, 0.0, 1.0, 1.0), Regime::NonconvexLinear).is_err());
        assert!(pl_parameter(&profile(1.0, 0.0, 1.0, 1.0), Regime::StronglyConvexConcave { c: 0.0 }).is_err());
        // alpha above L_H is inconsistent.
        assert!(pl_parameter(&profile(1.0, 0.0, 1.0, 0.5), Regime::StronglyConvexConcave { c: 1.0 }).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(profile(1.0, 2.0, 1.0, 1.0).validate().is_err());
        assert!(profile(-1.0, 0.0, 1.0, 1.0).validate().is_err());
        let mut p = profile(1.0, 0.5, 1.0, 2.0);
        p.l_g = Some(1.0);
        assert!(p.validate().is_err());
        p.l_g = Some(2.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn sufficiently_bilinear_examples() {
        let check = check_sufficiently_bilinear(&profile(3.0, 4.0, 4.0, 0.0));
        assert_eq!((check.holds, check.margin, check.alt_margin), (false, -320.0, 64.0));
        let check = check_sufficiently_bilinear(&profile(1.0, 3.0, 3.0, 0.0));
        assert_eq!((check.holds, check.margin), (true, 45.0));
        let check = check_sufficiently_bilinear(&profile(2.0, 0.0, 1.5, 0.0));
        assert!(!check.holds);
        assert!(check.margin <= 0.0);
    }

    #[test]
    fn eig_bound_definite_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let z = DMatrix::zeros(2, 2);
        let m1 = &i2 * 2.0;
        let m2 = &i2 * -2.0;
        assert!((eig_bound_definite(&m1, &m2, &z, 1.9).unwrap() - 3.61).abs() < 1e-15);
        assert!((min_eig_hht(&block(&m1, &z, &-&z, &-&m2)) - 4.0).abs() < 1e-12);
        assert_eq!(eig_bound_definite(&m1, &m2, &z, 0.0).unwrap(), 0.0);
        assert!(eig_bound_definite(&m1, &m2, &z, 2.0).is_err());
        match eig_bound_definite(&m1, &i2, &z, 0.5) {
            Err(Error::Refused { reason, .. }) => assert!(reason.contains("M2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eig_bound_convex_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(eig_bound_convex(&zero, &one).unwrap(), 0.5);
        assert!((min_eig_hht(&block(&zero, &one, &-&one, &zero)) - 1.0).abs() < 1e-15);
        let b = eig_bound_convex(&one, &one).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 1e-15);
        assert!(min_eig_hht(&block(&one, &one, &-&one, &zero)) >= b);
        let t = 2.5;
        let scaled = eig_bound_convex(&(&one * t), &(&one * t)).unwrap();
        assert!((scaled - t * t * b).abs() < 1e-12);
        assert!(eig_bound_convex(&one, &zero).is_err());
    }

    #[test]
    fn eig_bound_general_examples() {
        let z = DMatrix::zeros(2, 2);
        let c = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert!((eig_bound_general(&z, &z, &c).unwrap() - 2.0).abs() < 1e-14);
        assert!((min_eig_hht(&block(&z, &c, &-c.transpose(), &z)) - 4.0).abs() < 1e-12);
        let i2 = DMatrix::<f64>::identity(2, 2);
        let spread = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert!(matches!(eig_bound_general(&i2, &i2, &spread), Err(Error::Refused { .. })));
    }

    #[test]
    fn min_eig_jjt_examples() {
        let region = Region::new(-3.0, 3.0, 7).unwrap();
        let bil = build_objective(ProblemFamily::Bilinear { matrix: vec![vec![1.0]] }, 1).unwrap();
        let est = min_eig_jjt(&bil, &region).unwrap();
        assert!((est.alpha_hat - 1.0).abs() < 1e-14);
        assert_eq!(est.points, 49);
        let q = build_objective(ProblemFamily::QuadraticScsc { c: 1.0 }, 1).unwrap();
        assert!((min_eig_jjt(&q, &region).unwrap().alpha_hat - 2.0).abs() < 1e-14);
        assert!(Region::new(-1.0, 1.0, 1).is_err());
        assert!(Region::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn piecewise_coupled_grid_certificate_is_positive() {
        let obj = build_objective(
            ProblemFamily::CoupledScalar {
                base: ScalarBase::PiecewiseCosine,
                c: 4.0,
            },
            1,
        )
        .unwrap();
        let est = min_eig_jjt(&obj, &Region::new(-6.0, 6.0, 121).unwrap()).unwrap();
        // Regression baseline from the first run.
        assert!(est.alpha_hat > 0.0);
        assert!((est.alpha_hat - 4.509859380176814).abs() < 1e-9, "alpha_hat = {}", est.alpha_hat);
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_lh(1.0, 2.0, 0.0).unwrap(), 4.0);
        assert_eq!(smoothness_lh(0.0, 3.0, 7.0).unwrap(), 9.0);
        assert!(smoothness_lh(-1.0, 1.0, 1.0).is_err());
        let q = build_objective(ProblemFamily::QuadraticScsc { c: 1.0 }, 1).unwrap();
        let prof = estimate_profile(&q, &Region::new(-5.0, 5.0, 5).unwrap()).unwrap();
        assert_eq!(prof.l3, 0.0);
        assert!((prof.l_h() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn predict_rate_examples() {
        let p = profile(1.0, 0.0, 0.0, 2f64.sqrt());
        let cert = pl_parameter(&p, Regime::StronglyConvexConcave { c: 1.0 }).unwrap();
        let r = predict_rate(&cert, 2.0).unwrap();
        assert!((r.h_factor - 0.5).abs() < 1e-15);
        assert!((r.grad_factor - 0.5f64.sqrt()).abs() < 1e-15);

        let cert = pl_parameter(&p, Regime::Empirical { alpha_hat: 2.0 }).unwrap();
        let r = predict_rate(&cert, 2.0).unwrap();
        assert_eq!((r.h_factor, r.grad_factor), (0.0, 0.0));
        assert!(predict_rate(&cert, 1.0).is_err());
    }

    #[test]
    fn exact_quadratic_converges_in_one_step_at_unit_contraction() {
        use crate::solvers::step_hgd;
        let q = build_objective(ProblemFamily::QuadraticScsc { c: 1.0 }, 1).unwrap();
        let next = step_hgd(&q, &Point::new(&[5.0], &[5.0]).unwrap(), 0.5).unwrap();
        assert_eq!(hamiltonian(&q, &next).unwrap(), 0.0);
    }

    #[test]
    fn co_parameter_examples() {
        let p = co_parameters(1.0, 1.0, 1.0).unwrap();
        assert_eq!((p.eta, p.co_gamma, p.rate), (0.25, 4.0, 0.75));
        let p = co_parameters(2.0, 2.0, 1.0).unwrap();
        assert_eq!((p.eta, p.co_gamma, p.rate), (0.25, 2.0, 0.75));
        assert!(co_parameters(0.0, 1.0, 1.0).is_err());
        for alpha in [1e-6, 0.3, 1.0, 2.0] {
            let r = co_parameters(alpha, 2.0, 1.0).unwrap().rate;
            assert!(r > 0.0 && r < 1.0);
        }
    }

    fn scalar(f: impl Fn(f64) -> f64) -> impl Fn(&DVector<f64>) -> DVector<f64> {
        move |v: &DVector<f64>| v.map(&f)
    }

    #[test]
    fn contraction_on_piecewise_instance() {
        let fp = scalar(|t| piecewise_f(t, Order::First));
        let start = DVector::from_element(1, 2.5);
        let res = contraction_fixed_point(&fp, &fp, 4.0, 3.0, &start, 1e-12).unwrap();
        assert!(res.x1[0].abs() < 1e-8 && res.x2[0].abs() < 1e-8);
        assert!(res.iterations < CONTRACTION_MAX_ITERS);
        assert!(matches!(
            contraction_fixed_point(&fp, &fp, 3.0, 3.0, &start, 1e-12),
            Err(Error::Refused { .. })
        ));
    }

    #[test]
    fn contraction_linear_case() {
        let id = scalar(|t| t);
        let res = contraction_fixed_point(&id, &id, 2.0, 1.0, &DVector::from_element(3, 1.0), 1e-14).unwrap();
        assert!(res.x2.amax() < 1e-13);
    }

    #[test]
    fn contraction_matches_bisection_for_softplus_quadratic_pair() {
        let sigmoid = |t: f64| 1.0 / (1.0 + (-t).exp());
        let c = 3.0;
        let res = contraction_fixed_point(scalar(sigmoid), scalar(|t| t), c, 1.0, &DVector::zeros(1), 1e-14).unwrap();
        // z + σ(z/c)/c is increasing in z.
        let phi = |z: f64| z + sigmoid(z / c) / c;
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((res.x2[0] - 0.5 * (lo + hi)).abs() < 1e-10);
    }

    #[test]
    fn separable_critical_point_has_small_xi() {
        for (f, h, c) in [
            (ScalarFn::Softplus, ScalarFn::Softplus, 3.0),
            (ScalarFn::PiecewiseCosine, ScalarFn::PiecewiseCosine, 4.0),
            (ScalarFn::Softplus, ScalarFn::Quadratic { weight: 1.0 }, 1.5),
        ] {
            let tol = 1e-10;
            let prob = build_objective(ProblemFamily::RegularizedBilinear { f, h, c }, 2).unwrap();
            let fp = separable_critical_point(&prob, tol).unwrap();
            let xi = prob.signed_gradient(&fp.point().unwrap());
            assert!(xi.norm() <= 10.0 * tol, "{f:?}: {}", xi.norm());
        }
    }

    #[test]
    fn certify_picks_expected_regimes() {
        let region = Region::new(-5.0, 5.0, 11).unwrap();
        let q = build_objective(ProblemFamily::QuadraticScsc { c: 1.0 }, 1).unwrap();
        let rep = certify("q", &q, &region).unwrap();
        let cert = rep.certificate.unwrap();
        assert_eq!(cert.regime, Regime::StronglyConvexConcave { c: 1.0 });
        assert!(rep.machine_line().starts_with("certify label=q regime=SCSC alpha=1.000000000e0"));

        let bil = build_objective(ProblemFamily::Bilinear { matrix: vec![vec![2.0]] }, 1).unwrap();
        let rep = certify("b", &bil, &region).unwrap();
        assert_eq!(rep.certificate.unwrap().regime, Regime::NonconvexLinear);
        assert_eq!(rep.certificate.unwrap().alpha, 2.0);

        let sp = build_objective(ProblemFamily::CoupledScalar { base: ScalarBase::Softplus, c: 3.0 }, 1).unwrap();
        let rep = certify("s", &sp, &region).unwrap();
        assert_eq!(rep.certificate.unwrap().regime, Regime::SufficientlyBilinear);
        assert!(rep.to_string().contains("SufficientlyBilinear"));
    }

    #[test]
    fn piecewise_profile_reproduces_margin_pair() {
        let obj = build_objective(ProblemFamily::CoupledScalar { base: ScalarBase::PiecewiseCosine, c: 4.0 }, 1).unwrap();
        let prof = estimate_profile(&obj, &Region::new(-5.0, 5.0, 41).unwrap()).unwrap();
        assert_eq!((prof.l, prof.gamma, prof.gamma_max, prof.rho2, prof.mu2), (3.0, 4.0, 4.0, 0.0, 0.0));
        let check = check_sufficiently_bilinear(&prof);
        assert_eq!((check.margin, check.alt_margin), (-320.0, 64.0));
    }

    fn block(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(a);
        m.view_mut((0, n), (n, n)).copy_from(b);
        m.view_mut((n, 0), (n, n)).copy_from(c);
        m.view_mut((n, n), (n, n)).copy_from(d);
        m
    }

    fn uniform(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        loop {
            let c = uniform(rng, n);
            if c.singular_values().min() >= 0.1 {
                return c;
            }
        }
    }

    #[test]
    fn general_bound_agrees_with_convex_bound_without_diagonal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            let n = 1 + i % 5;
            let c = well_conditioned(&mut rng, n);
            let z = DMatrix::zeros(n, n);
            let g = eig_bound_general(&z, &z, &c).unwrap();
            let v = eig_bound_convex(&z, &c).unwrap();
            assert!((g - v).abs() <= 1e-12 * v.max(1.0));
        }
    }

    #[test]
    fn analytic_scsc_never_exceeds_grid_estimate() {
        for c in [0.2, 1.0, 3.0] {
            let q = build_objective(ProblemFamily::QuadraticScsc { c }, 2).unwrap();
            let est = min_eig_jjt(&q, &Region::new(-2.0, 2.0, 3).unwrap()).unwrap();
            let prof = estimate_profile(&q, &Region::new(-2.0, 2.0, 3).unwrap()).unwrap();
            let cert = pl_parameter(&prof, Regime::StronglyConvexConcave { c }).unwrap();
            assert!(cert.alpha <= est.alpha_hat + 1e-12);
        }
    }

    #[test]
    fn pl_inequality_holds_at_grid_points() {
        for family in [
            ProblemFamily::CoupledScalar { base: ScalarBase::PiecewiseCosine, c: 4.0 },
            ProblemFamily::CoupledScalar { base: ScalarBase::Softplus, c: 0.5 },
            ProblemFamily::DiracGan { f: ScalarFn::Softplus },
        ] {
            let obj = build_objective(family, 1).unwrap();
            let region = Region::new(-4.0, 4.0, 33).unwrap();
            let est = min_eig_jjt(&obj, &region).unwrap();
            for p in region.points(1).unwrap() {
                let lhs = 0.5 * grad_h(&obj, &p).unwrap().norm_squared();
                let rhs = est.alpha_hat * hamiltonian(&obj, &p).unwrap();
                assert!(lhs >= rhs - 1e-12 * rhs.max(1.0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn sqrt_gap_inequality(x in 1e-3f64..1.0, frac in 1e-6f64..0.999_999) {
            let c = frac * x * x;
            prop_assume!(c > 0.0 && c < x * x);
            prop_assert!(x - (x * x - c).sqrt() > c / (2.0 * x));
        }
    }
}
