//! Two-player objectives `g(x1, x2)` with analytic derivatives.
//!
//! Every objective exposes three evaluators:
//!
//! - the value `g(x1, x2)`,
//! - the signed gradient field `xi = (∂g/∂x1, −∂g/∂x2)`,
//! - the Jacobian `J = ∇xi`, a `2d × 2d` block matrix
//!   `[[∇²₁₁g, ∇²₁₂g], [−∇²₂₁g, −∇²₂₂g]]` which is not symmetric in general.
//!
//! The concrete test problems live in [`ProblemFamily`] and are turned into a
//! [`Problem`] with [`build_objective`].

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concatenated player variables `x = (x1, x2)` with `dim(x1) = dim(x2) = d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    data: DVector<f64>,
    d: usize,
}

impl Point {
    pub fn new(x1: &[f64], x2: &[f64]) -> Result<Self> {
        if x1.len() != x2.len() {
            return Err(Error::Dimension {
                expected: x1.len(),
                got: x2.len(),
            });
        }
        Self::from_vector(DVector::from_iterator(
            x1.len() + x2.len(),
            x1.iter().chain(x2).copied(),
        ))
    }

    /// Builds a point from the stacked vector `(x1, x2)`.
    pub fn from_vector(data: DVector<f64>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(2) {
            return Err(Error::invalid(
                "point",
                format!("stacked length must be a positive even number, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point"));
        }
        let d = data.len() / 2;
        Ok(Self { data, d })
    }

    pub fn from_slice(stacked: &[f64]) -> Result<Self> {
        Self::from_vector(DVector::from_column_slice(stacked))
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            data: DVector::zeros(2 * d),
            d,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn x1(&self) -> &[f64] {
        &self.data.as_slice()[..self.d]
    }

    pub fn x2(&self) -> &[f64] {
        &self.data.as_slice()[self.d..]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }
}

/// A smooth two-player objective.
///
/// Implementors provide raw evaluators; callers should go through
/// [`eval_g`], [`eval_xi`] and [`eval_jacobian`], which validate dimensions.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, p: &Point) -> f64;

    fn signed_gradient(&self, p: &Point) -> DVector<f64>;

    fn jacobian(&self, p: &Point) -> DMatrix<f64>;

    /// True where the third derivative jumps, so finite differences of the
    /// Jacobian are not expected to reach O(h²) accuracy.
    fn near_kink(&self, _p: &Point) -> bool {
        false
    }
}

fn check_dim<O: Objective + ?Sized>(obj: &O, p: &Point) -> Result<()> {
    if p.dim() != obj.dim() {
        return Err(Error::Dimension {
            expected: obj.dim(),
            got: p.dim(),
        });
    }
    Ok(())
}

pub fn eval_g<O: Objective + ?Sized>(obj: &O, p: &Point) -> Result<f64> {
    check_dim(obj, p)?;
    Ok(obj.value(p))
}

pub fn eval_xi<O: Objective + ?Sized>(obj: &O, p: &Point) -> Result<DVector<f64>> {
    check_dim(obj, p)?;
    Ok(obj.signed_gradient(p))
}

pub fn eval_jacobian<O: Objective + ?Sized>(obj: &O, p: &Point) -> Result<DMatrix<f64>> {
    check_dim(obj, p)?;
    Ok(obj.jacobian(p))
}

/// Derivative order for [`piecewise_f`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Value,
    First,
    Second,
}

/// The piecewise nonconvex function `F`, linear on the left, `−3cos x` in the
/// middle and `−cos x + 2x − π` on the right, with breakpoints at `±π/2`.
///
/// `F` is C² and `|F''| ≤ 3` everywhere.
pub fn piecewise_f(x: f64, order: Order) -> f64 {
    if x <= -FRAC_PI_2 {
        match order {
            Order::Value => -3.0 * (x + FRAC_PI_2),
            Order::First => -3.0,
            Order::Second => 0.0,
        }
    } else if x <= FRAC_PI_2 {
        match order {
            Order::Value => -3.0 * x.cos(),
            Order::First => 3.0 * x.sin(),
            Order::Second => 3.0 * x.cos(),
        }
    } else {
        match order {
            Order::Value => -x.cos() + 2.0 * x - std::f64::consts::PI,
            Order::First => x.sin() + 2.0,
            Order::Second => x.cos(),
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar building block used by the separable and Dirac-GAN families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    /// `log(1 + e^t)`.
    Softplus,
    /// The piecewise function [`piecewise_f`].
    PiecewiseCosine,
    /// `(weight / 2) t²`; a negative weight gives a concave term.
    Quadratic { weight: f64 },
    /// `t`.
    Linear,
}

impl ScalarFn {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ScalarFn::Softplus => softplus(t),
            ScalarFn::PiecewiseCosine => piecewise_f(t, Order::Value),
            ScalarFn::Quadratic { weight } => 0.5 * weight * t * t,
            ScalarFn::Linear => t,
        }
    }

    pub fn first(&self, t: f64) -> f64 {
        match *self {
            ScalarFn::Softplus => sigmoid(t),
            ScalarFn::PiecewiseCosine => piecewise_f(t, Order::First),
            ScalarFn::Quadratic { weight } => weight * t,
            ScalarFn::Linear => 1.0,
        }
    }

    pub fn second(&self, t: f64) -> f64 {
        match *self {
            ScalarFn::Softplus => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
            ScalarFn::PiecewiseCosine => piecewise_f(t, Order::Second),
            ScalarFn::Quadratic { weight } => weight,
            ScalarFn::Linear => 0.0,
        }
    }

    /// Global bound on `|second(t)|`.
    pub fn smoothness(&self) -> f64 {
        match *self {
            ScalarFn::Softplus => 0.25,
            ScalarFn::PiecewiseCosine => 3.0,
            ScalarFn::Quadratic { weight } => weight.abs(),
            ScalarFn::Linear => 0.0,
        }
    }

    fn near_kink(&self, t: f64) -> bool {
        matches!(self, ScalarFn::PiecewiseCosine) && (t.abs() - FRAC_PI_2).abs() < 1e-3
    }

    fn validate(&self, field: &str) -> Result<()> {
        if let ScalarFn::Quadratic { weight } = self {
            if !weight.is_finite() {
                return Err(Error::invalid(field, "quadratic weight must be finite"));
            }
        }
        Ok(())
    }
}

/// Base function of the scalar coupled family `φ(x1) + c·x1·x2 − φ(x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarBase {
    Softplus,
    PiecewiseCosine,
}

impl From<ScalarBase> for ScalarFn {
    fn from(base: ScalarBase) -> Self {
        match base {
            ScalarBase::Softplus => ScalarFn::Softplus,
            ScalarBase::PiecewiseCosine => ScalarFn::PiecewiseCosine,
        }
    }
}

/// Problem descriptor, as written in the `[problem]` section of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemFamily {
    /// `g = x1ᵀ C x2`, `C` given row by row.
    Bilinear { matrix: Vec<Vec<f64>> },
    /// `g = (c/2)‖x1‖² + x1ᵀx2 − (c/2)‖x2‖²`.
    QuadraticScsc { c: f64 },
    /// `g = φ(x1) + c·x1·x2 − φ(x2)`, scalar only.
    CoupledScalar { base: ScalarBase, c: f64 },
    /// `g = Σf(x1ᵢ) + c·x1ᵀx2 − Σh(x2ᵢ)`.
    RegularizedBilinear { f: ScalarFn, h: ScalarFn, c: f64 },
    /// `g = f(x1·x2) − f(0)`, scalar only.
    DiracGan { f: ScalarFn },
}

#[derive(Debug, Clone)]
enum Kind {
    Bilinear(DMatrix<f64>),
    QuadraticScsc(f64),
    Separable { f: ScalarFn, h: ScalarFn, c: f64 },
    DiracGan(ScalarFn),
}

/// A validated, immutable objective built from a [`ProblemFamily`].
#[derive(Debug, Clone)]
pub struct Problem {
    family: ProblemFamily,
    d: usize,
    kind: Kind,
}

fn require_finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

fn require_scalar(d: usize) -> Result<()> {
    if d != 1 {
        return Err(Error::invalid("d", format!("family is defined for d = 1 only, got {d}")));
    }
    Ok(())
}

pub fn build_objective(family: ProblemFamily, d: usize) -> Result<Problem> {
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be at least 1"));
    }
    let kind = match &family {
        ProblemFamily::Bilinear { matrix } => {
            if matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
                return Err(Error::invalid("matrix", format!("expected a {d}x{d} matrix")));
            }
            if matrix.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("matrix", "entries must be finite"));
            }
            Kind::Bilinear(DMatrix::from_fn(d, d, |i, j| matrix[i][j]))
        }
        ProblemFamily::QuadraticScsc { c } => {
            require_finite("c", *c)?;
            if *c <= 0.0 {
                return Err(Error::invalid("c", "strong-convexity modulus must be positive"));
            }
            Kind::QuadraticScsc(*c)
        }
        ProblemFamily::CoupledScalar { base, c } => {
            require_scalar(d)?;
            require_finite("c", *c)?;
            if *c < 0.0 {
                return Err(Error::invalid("c", "coupling weight must be nonnegative"));
            }
            Kind::Separable {
                f: (*base).into(),
                h: (*base).into(),
                c: *c,
            }
        }
        ProblemFamily::RegularizedBilinear { f, h, c } => {
            f.validate("f")?;
            h.validate("h")?;
            require_finite("c", *c)?;
            Kind::Separable { f: *f, h: *h, c: *c }
        }
        ProblemFamily::DiracGan { f } => {
            require_scalar(d)?;
            if !matches!(f, ScalarFn::Linear | ScalarFn::Softplus) {
                return Err(Error::invalid(
                    "f",
                    "Dirac-GAN needs a function with nonvanishing derivative (linear or softplus)",
                ));
            }
            Kind::DiracGan(*f)
        }
    };
    Ok(Problem { family, d, kind })
}

impl Problem {
    pub fn family(&self) -> &ProblemFamily {
        &self.family
    }

    /// True when `J` does not depend on the point (Bilinear, QuadraticSCSC).
    pub fn has_constant_jacobian(&self) -> bool {
        matches!(self.kind, Kind::Bilinear(_) | Kind::QuadraticScsc(_))
    }

    /// For the separable families, `(∇f, ∇h, c, L)` where `L` bounds the
    /// smoothness of both `f` and `h`.
    pub fn separable_parts(&self) -> Option<(ScalarFn, ScalarFn, f64, f64)> {
        match self.kind {
            Kind::Separable { f, h, c } => Some((f, h, c, f.smoothness().max(h.smoothness()))),
            _ => None,
        }
    }
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, p: &Point) -> f64 {
        let (x1, x2) = (p.x1(), p.x2());
        match &self.kind {
            Kind::Bilinear(c) => {
                let x2 = DVector::from_column_slice(x2);
                DVector::from_column_slice(x1).dot(&(c * x2))
            }
            Kind::QuadraticScsc(c) => {
                let n1: f64 = x1.iter().map(|v| v * v).sum();
                let n2: f64 = x2.iter().map(|v| v * v).sum();
                let cross: f64 = x1.iter().zip(x2).map(|(a, b)| a * b).sum();
                0.5 * c * n1 + cross - 0.5 * c * n2
            }
            Kind::Separable { f, h, c } => {
                let fx: f64 = x1.iter().map(|&t| f.value(t)).sum();
                let hx: f64 = x2.iter().map(|&t| h.value(t)).sum();
                let cross: f64 = x1.iter().zip(x2).map(|(a, b)| a * b).sum();
                fx + c * cross - hx
            }
            Kind::DiracGan(f) => f.value(x1[0] * x2[0]) - f.value(0.0),
        }
    }

    fn signed_gradient(&self, p: &Point) -> DVector<f64> {
        let d = self.d;
        let (x1, x2) = (p.x1(), p.x2());
        let mut xi = DVector::zeros(2 * d);
        match &self.kind {
            Kind::Bilinear(c) => {
                let g1 = c * DVector::from_column_slice(x2);
                let g2 = c.tr_mul(&DVector::from_column_slice(x1));
                for i in 0..d {
                    xi[i] = g1[i];
                    xi[d + i] = -g2[i];
                }
            }
            Kind::QuadraticScsc(c) => {
                for i in 0..d {
                    xi[i] = c * x1[i] + x2[i];
                    xi[d + i] = c * x2[i] - x1[i];
                }
            }
            Kind::Separable { f, h, c } => {
                for i in 0..d {
                    xi[i] = f.first(x1[i]) + c * x2[i];
                    xi[d + i] = h.first(x2[i]) - c * x1[i];
                }
            }
            Kind::DiracGan(f) => {
                let slope = f.first(x1[0] * x2[0]);
                xi[0] = slope * x2[0];
                xi[1] = -slope * x1[0];
            }
        }
        xi
    }

    fn jacobian(&self, p: &Point) -> DMatrix<f64> {
        let d = self.d;
        let (x1, x2) = (p.x1(), p.x2());
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        match &self.kind {
            Kind::Bilinear(c) => {
                j.view_mut((0, d), (d, d)).copy_from(c);
                j.view_mut((d, 0), (d, d)).copy_from(&(-c.transpose()));
            }
            Kind::QuadraticScsc(c) => {
                for i in 0..d {
                    j[(i, i)] = *c;
                    j[(i, d + i)] = 1.0;
                    j[(d + i, i)] = -1.0;
                    j[(d + i, d + i)] = *c;
                }
            }
            Kind::Separable { f, h, c } => {
                for i in 0..d {
                    j[(i, i)] = f.second(x1[i]);
                    j[(i, d + i)] = *c;
                    j[(d + i, i)] = -c;
                    j[(d + i, d + i)] = h.second(x2[i]);
                }
            }
            Kind::DiracGan(f) => {
                let (a, b) = (x1[0], x2[0]);
                let t = a * b;
                let (s1, s2) = (f.first(t), f.second(t));
                let cross = s1 + s2 * t;
                j[(0, 0)] = s2 * b * b;
                j[(0, 1)] = cross;
                j[(1, 0)] = -cross;
                j[(1, 1)] = -s2 * a * a;
            }
        }
        j
    }

    fn near_kink(&self, p: &Point) -> bool {
        match &self.kind {
            Kind::Separable { f, h, .. } => {
                p.x1().iter().any(|&t| f.near_kink(t)) || p.x2().iter().any(|&t| h.near_kink(t))
            }
            _ => false,
        }
    }
}
