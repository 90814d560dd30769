//! Iterative min-max dynamics and the common driver [`run`].
//!
//! All methods move along a direction built from `xi` and `∇H = Jᵀxi`:
//!
//! | method     | update                                   |
//! |------------|------------------------------------------|
//! | SGDA       | `x − η·xi`                               |
//! | HGD        | `x − η·∇H`                               |
//! | CO         | `x − η·(xi + γ·∇H)`                      |
//! | SHGD       | `x − η_k·(∇H + z)`, `z ~ N(0, σ²I)`      |
//! | SignedHGD  | `x − η·s·∇H`, `s ∈ {−1, +1}`             |

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calculus::{grad_h, hvp};
use crate::error::{Error, Result};
use crate::objectives::{eval_jacobian, eval_xi, Objective, Point};

/// Iterates with norm above this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;
pub const DEFAULT_EPS_STOP: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Power-iteration budget for the block-eigenvalue sign test.
pub const POWER_ITERATIONS: usize = 64;
/// Definiteness slack for the block-eigenvalue sign test.
pub const BLOCK_EIG_TAU: f64 = 1e-6;
const POWER_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgda,
    Hgd,
    Co,
    Shgd,
    SignedHgd,
}

/// Step-size schedule for stochastic HGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `η_k = (2k + 1) / (2α(k + 1)²)` for a PL constant `α`.
    Decaying { alpha: f64 },
    Constant { eta: f64 },
}

impl Schedule {
    pub fn step_size(&self, k: usize) -> f64 {
        match *self {
            Schedule::Decaying { alpha } => {
                let k = k as f64;
                (2.0 * k + 1.0) / (2.0 * alpha * (k + 1.0) * (k + 1.0))
            }
            Schedule::Constant { eta } => eta,
        }
    }

    fn validate(&self) -> Result<()> {
        let (field, v) = match *self {
            Schedule::Decaying { alpha } => ("schedule.alpha", alpha),
            Schedule::Constant { eta } => ("schedule.eta", eta),
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(field, "must be positive"))
        }
    }
}

/// How the sign-adjusted HGD picks its sign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignVariant {
    /// `s = sgn(⟨xi, ∇H⟩·⟨Aᵀxi, ∇H⟩)` with `A` the antisymmetric part of `J`.
    #[default]
    Alignment,
    /// `s = +1` iff the diagonal Hessian blocks look convex-concave.
    BlockEig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub eta: f64,
    /// CO mixing weight; required for CO and rejected otherwise.
    pub co_gamma: Option<f64>,
    pub max_iters: usize,
    pub eps_stop: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    /// SHGD schedule; `None` means `Constant { eta }`.
    pub schedule: Option<Schedule>,
    pub sign_variant: SignVariant,
}

impl SolverConfig {
    pub fn new(method: Method, eta: f64) -> Self {
        Self {
            method,
            eta,
            co_gamma: None,
            max_iters: DEFAULT_MAX_ITERS,
            eps_stop: DEFAULT_EPS_STOP,
            seed: 0,
            noise_sigma: 0.0,
            schedule: None,
            sign_variant: SignVariant::Alignment,
        }
    }

    pub fn co(eta: f64, co_gamma: f64) -> Self {
        Self {
            co_gamma: Some(co_gamma),
            ..Self::new(Method::Co, eta)
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_eps_stop(mut self, eps_stop: f64) -> Self {
        self.eps_stop = eps_stop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "step size must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if !(self.eps_stop >= 0.0 && self.eps_stop.is_finite()) {
            return Err(Error::invalid("eps_stop", "must be nonnegative"));
        }
        match (self.method, self.co_gamma) {
            (Method::Co, None) => {
                return Err(Error::invalid("co_gamma", "required for method = co"))
            }
            (Method::Co, Some(g)) if !(g >= 0.0 && g.is_finite()) => {
                return Err(Error::invalid("co_gamma", "must be nonnegative"))
            }
            (Method::Co, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::invalid("co_gamma", "only valid for method = co"))
            }
            (_, None) => {}
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be nonnegative"));
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        Ok(())
    }

    /// The schedule SHGD actually uses.
    pub fn effective_schedule(&self) -> Schedule {
        self.schedule.unwrap_or(Schedule::Constant { eta: self.eta })
    }
}

fn advance(p: &Point, direction: &DVector<f64>, eta: f64) -> Result<Point> {
    Point::from_vector(p.as_vector() - direction * eta).map_err(|_| Error::NonFinite("iterate"))
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("eta", "step size must be positive"))
    }
}

pub fn step_sgda<O: Objective + ?Sized>(obj: &O, p: &Point, eta: f64) -> Result<Point> {
    check_eta(eta)?;
    advance(p, &eval_xi(obj, p)?, eta)
}

pub fn step_hgd<O: Objective + ?Sized>(obj: &O, p: &Point, eta: f64) -> Result<Point> {
    check_eta(eta)?;
    advance(p, &grad_h(obj, p)?, eta)
}

pub fn step_co<O: Objective + ?Sized>(obj: &O, p: &Point, eta: f64, co_gamma: f64) -> Result<Point> {
    check_eta(eta)?;
    if !(co_gamma >= 0.0 && co_gamma.is_finite()) {
        return Err(Error::invalid("co_gamma", "must be nonnegative"));
    }
    let xi = eval_xi(obj, p)?;
    let direction = if co_gamma == 0.0 {
        xi
    } else {
        let gh = hvp(obj, p, &xi)?;
        xi + gh * co_gamma
    };
    advance(p, &direction, eta)
}

/// HGD step followed by an arbitrary additive perturbation:
/// `x − η·∇H + η_v·v`.
pub fn step_perturbed_hgd<O: Objective + ?Sized>(
    obj: &O,
    p: &Point,
    eta: f64,
    eta_v: f64,
    v: &DVector<f64>,
) -> Result<Point> {
    check_eta(eta)?;
    let half = p.as_vector() - grad_h(obj, p)? * eta;
    if v.len() != half.len() {
        return Err(Error::Dimension {
            expected: half.len(),
            got: v.len(),
        });
    }
    Point::from_vector(half + v * eta_v).map_err(|_| Error::NonFinite("iterate"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticStep {
    pub point: Point,
    pub step_size: f64,
    /// `‖v‖²` of the stochastic direction that was used.
    pub direction_sq_norm: f64,
}

/// Stochastic HGD step with an unbiased estimate `v = ∇H + z` of `∇H`.
pub fn step_shgd<O: Objective + ?Sized, R: rand::Rng + ?Sized>(
    obj: &O,
    p: &Point,
    k: usize,
    schedule: &Schedule,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<StochasticStep> {
    schedule.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma", "must be nonnegative"));
    }
    let mut v = grad_h(obj, p)?;
    if noise_sigma > 0.0 {
        for vi in v.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *vi += noise_sigma * z;
        }
    }
    let step_size = schedule.step_size(k);
    Ok(StochasticStep {
        point: advance(p, &v, step_size)?,
        step_size,
        direction_sq_norm: v.norm_squared(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedStep {
    pub point: Point,
    /// `+1` for descent on `H`, `−1` for ascent.
    pub sign: f64,
    /// Power iteration did not settle and the sign defaulted to `+1`.
    pub fallback: bool,
}

/// Largest eigenvalue of a symmetric matrix by shifted power iteration.
/// Returns `None` when the Rayleigh quotient has not settled within the
/// iteration budget.
fn power_max_eigenvalue(m: &DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    // Gershgorin shift makes m + shift·I positive semidefinite, so the
    // dominant eigenvalue of the shifted matrix is the algebraically largest.
    let shift = m
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let shifted = m + DMatrix::identity(n, n) * shift;

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    v /= v.norm();

    let mut previous = f64::NAN;
    for _ in 0..POWER_ITERATIONS {
        let w = &shifted * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Some(-shift);
        }
        let rayleigh = v.dot(&w);
        if (rayleigh - previous).abs() <= 1e-3 * BLOCK_EIG_TAU * rayleigh.abs().max(1.0) {
            return Some(rayleigh - shift);
        }
        previous = rayleigh;
        v = w / norm;
    }
    None
}

fn alignment_sign(j: &DMatrix<f64>, xi: &DVector<f64>, gh: &DVector<f64>) -> f64 {
    let antisym = (j - j.transpose()) * 0.5;
    let first = xi.dot(gh);
    let second = antisym.tr_mul(xi).dot(gh);
    // sgn(0) := +1
    if first * second < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn block_eig_sign(j: &DMatrix<f64>, d: usize) -> (f64, bool) {
    let h11 = j.view((0, 0), (d, d)).into_owned();
    // The lower-right block of J is −∇²₂₂g.
    let h22 = -j.view((d, d), (d, d)).into_owned();
    let min_h11 = power_max_eigenvalue(&(-h11)).map(|v| -v);
    let max_h22 = power_max_eigenvalue(&h22);
    match (min_h11, max_h22) {
        (Some(lo), Some(hi)) => {
            if lo >= -BLOCK_EIG_TAU && hi <= BLOCK_EIG_TAU {
                (1.0, false)
            } else {
                (-1.0, false)
            }
        }
        _ => (1.0, true),
    }
}

/// HGD with a sign in front of `∇H`: descent near min-maxes, ascent near
/// other critical points.
pub fn step_signed_hgd<O: Objective + ?Sized>(
    obj: &O,
    p: &Point,
    eta: f64,
    variant: SignVariant,
) -> Result<SignedStep> {
    check_eta(eta)?;
    let xi = eval_xi(obj, p)?;
    let j = eval_jacobian(obj, p)?;
    let gh = j.tr_mul(&xi);
    let (sign, fallback) = match variant {
        SignVariant::Alignment => (alignment_sign(&j, &xi, &gh), false),
        SignVariant::BlockEig => block_eig_sign(&j, obj.dim()),
    };
    Ok(SignedStep {
        point: advance(p, &gh, eta * sign)?,
        sign,
        fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIters,
    Diverged,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Converged => "Converged",
            Termination::MaxIters => "MaxIters",
            Termination::Diverged => "Diverged",
        };
        f.write_str(s)
    }
}

/// Per-iterate record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub g: f64,
    pub grad_norm: f64,
    pub hamiltonian: f64,
    /// Signed step size applied at this iterate; 0 for the final iterate.
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub iterates: Vec<Point>,
    pub diagnostics: Vec<Diagnostics>,
    pub terminated_by: Termination,
    pub steps_taken: usize,
    /// Largest `‖v‖²` over the steps taken (the empirical second-moment bound
    /// for SHGD; the deterministic direction for the other methods).
    pub max_direction_sq_norm: f64,
    /// SignedHGD steps whose sign fell back to `+1`.
    pub sign_fallbacks: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Point {
        self.iterates.last().expect("trajectory holds the start point")
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.diagnostics.last().map_or(f64::NAN, |d| d.grad_norm)
    }
}

/// Runs `config.method` from `start` until `‖xi‖ ≤ eps_stop`, divergence
/// (`‖x‖ > 1e8` or a non-finite iterate) or `max_iters` steps.
pub fn run<O: Objective + ?Sized>(obj: &O, config: &SolverConfig, start: &Point) -> Result<Trajectory> {
    config.validate()?;
    if start.dim() != obj.dim() {
        return Err(Error::Dimension {
            expected: obj.dim(),
            got: start.dim(),
        });
    }

    let schedule = config.effective_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut traj = Trajectory {
        iterates: Vec::new(),
        diagnostics: Vec::new(),
        terminated_by: Termination::MaxIters,
        steps_taken: 0,
        max_direction_sq_norm: 0.0,
        sign_fallbacks: 0,
    };

    let mut p = start.clone();
    loop {
        let xi = obj.signed_gradient(&p);
        let sq = xi.norm_squared();
        let grad_norm = sq.sqrt();
        traj.diagnostics.push(Diagnostics {
            g: obj.value(&p),
            grad_norm,
            hamiltonian: 0.5 * sq,
            step_size: 0.0,
        });
        traj.iterates.push(p.clone());

        if grad_norm <= config.eps_stop {
            traj.terminated_by = Termination::Converged;
            break;
        }
        if traj.steps_taken == config.max_iters {
            traj.terminated_by = Termination::MaxIters;
            break;
        }

        let k = traj.steps_taken;
        let (next, step_size, dir_sq) = match config.method {
            Method::Sgda => (step_sgda(obj, &p, config.eta), config.eta, sq),
            Method::Hgd => {
                let gh = hvp(obj, &p, &xi)?;
                let sq = gh.norm_squared();
                (advance(&p, &gh, config.eta), config.eta, sq)
            }
            Method::Co => {
                let gamma = config.co_gamma.unwrap_or(0.0);
                (step_co(obj, &p, config.eta, gamma), config.eta, f64::NAN)
            }
            Method::Shgd => match step_shgd(obj, &p, k, &schedule, config.noise_sigma, &mut rng) {
                Ok(s) => (Ok(s.point), s.step_size, s.direction_sq_norm),
                Err(e) => (Err(e), schedule.step_size(k), f64::NAN),
            },
            Method::SignedHgd => match step_signed_hgd(obj, &p, config.eta, config.sign_variant) {
                Ok(s) => {
                    traj.sign_fallbacks += s.fallback as usize;
                    (Ok(s.point), config.eta * s.sign, f64::NAN)
                }
                Err(e) => (Err(e), config.eta, f64::NAN),
            },
        };
        if dir_sq.is_finite() {
            traj.max_direction_sq_norm = traj.max_direction_sq_norm.max(dir_sq);
        }

        let next = match next {
            Ok(q) if q.norm() <= DIVERGENCE_NORM => q,
            Ok(_) | Err(Error::NonFinite(_)) => {
                traj.terminated_by = Termination::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        traj.diagnostics.last_mut().expect("pushed above").step_size = step_size;
        traj.steps_taken += 1;
        p = next;
    }
    Ok(traj)
}
