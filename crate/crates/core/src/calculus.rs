//! The Hamiltonian `H = ½‖xi‖²`, its gradient and finite-difference oracles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::{eval_g, eval_jacobian, eval_xi, Objective, Point};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Half-width of the box `[-5, 5]^{2d}` verification points are drawn from.
pub const CHECK_RADIUS: f64 = 5.0;

pub fn hamiltonian<O: Objective + ?Sized>(obj: &O, p: &Point) -> Result<f64> {
    Ok(0.5 * eval_xi(obj, p)?.norm_squared())
}

/// `∇H = Jᵀ xi`.
pub fn grad_h<O: Objective + ?Sized>(obj: &O, p: &Point) -> Result<DVector<f64>> {
    let xi = eval_xi(obj, p)?;
    hvp(obj, p, &xi)
}

/// `Jᵀ v` using the analytic Jacobian.
pub fn hvp<O: Objective + ?Sized>(obj: &O, p: &Point, v: &DVector<f64>) -> Result<DVector<f64>> {
    let j = eval_jacobian(obj, p)?;
    if v.len() != j.nrows() {
        return Err(Error::Dimension {
            expected: j.nrows(),
            got: v.len(),
        });
    }
    Ok(j.tr_mul(v))
}

/// Approximate `Jᵀ v` from signed-gradient evaluations only, as the central
/// difference gradient of `x ↦ ⟨v, xi(x)⟩`. Costs `4d` evaluations of `xi`.
pub fn hvp_fd<O: Objective + ?Sized>(
    obj: &O,
    p: &Point,
    v: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let n = 2 * obj.dim();
    if v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: v.len(),
        });
    }
    eval_xi(obj, p)?;
    fd_gradient(
        |x| {
            Point::from_vector(x.clone())
                .map(|q| v.dot(&obj.signed_gradient(&q)))
                .unwrap_or(f64::NAN)
        },
        p.as_vector(),
        h,
    )
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("h", format!("step must be positive, got {h}")))
    }
}

/// Central-difference gradient of a scalar field.
pub fn fd_gradient<F>(f: F, p: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    check_step(h)?;
    let mut x = p.clone();
    let mut grad = DVector::zeros(p.len());
    for i in 0..p.len() {
        x[i] = p[i] + h;
        let up = f(&x);
        x[i] = p[i] - h;
        let down = f(&x);
        x[i] = p[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector field, one column per coordinate.
pub fn fd_jacobian<F>(field: F, p: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    check_step(h)?;
    let mut x = p.clone();
    let mut columns = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        x[i] = p[i] + h;
        let up = field(&x);
        x[i] = p[i] - h;
        let down = field(&x);
        x[i] = p[i];
        columns.push((up - down) / (2.0 * h));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, p.len(), |r, c| columns[c][r]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub max_rel_error: f64,
    pub worst_point: Point,
    pub passed: bool,
    pub tolerance: f64,
    pub points: usize,
    /// Points where the Jacobian comparison was skipped (see
    /// [`Objective::near_kink`]).
    pub skipped_jacobian: usize,
}

fn rel_err_vec(analytic: &DVector<f64>, approx: &DVector<f64>) -> f64 {
    (analytic - approx).norm() / analytic.norm().max(1.0)
}

fn rel_err_mat(analytic: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    (analytic - approx).norm() / analytic.norm().max(1.0)
}

fn signed_fd_gradient<O: Objective + ?Sized>(obj: &O, p: &Point, h: f64) -> Result<DVector<f64>> {
    let d = obj.dim();
    let mut grad = fd_gradient(
        |x| {
            Point::from_vector(x.clone())
                .and_then(|q| eval_g(obj, &q))
                .unwrap_or(f64::NAN)
        },
        p.as_vector(),
        h,
    )?;
    for i in d..2 * d {
        grad[i] = -grad[i];
    }
    Ok(grad)
}

fn hamiltonian_of(obj: &(impl Objective + ?Sized), x: &DVector<f64>) -> f64 {
    Point::from_vector(x.clone())
        .map(|q| 0.5 * obj.signed_gradient(&q).norm_squared())
        .unwrap_or(f64::NAN)
}

/// Compares analytic `xi`, `J` and `∇H` against central differences at
/// `count` seeded points drawn uniformly from `[-5, 5]^{2d}`.
pub fn check_derivatives<O: Objective + ?Sized>(
    obj: &O,
    count: usize,
    seed: u64,
    tol: f64,
) -> DerivativeReport {
    let n = 2 * obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (f64::NEG_INFINITY, Point::zeros(obj.dim()));
    let mut skipped = 0;

    for _ in 0..count.max(1) {
        let coords: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-CHECK_RADIUS..=CHECK_RADIUS))
            .collect();
        let p = Point::from_slice(&coords).expect("sampled point is finite");

        let xi = obj.signed_gradient(&p);
        let mut err = signed_fd_gradient(obj, &p, FD_STEP)
            .map(|fd| rel_err_vec(&xi, &fd))
            .unwrap_or(f64::INFINITY);

        if obj.near_kink(&p) {
            skipped += 1;
        } else {
            let j = obj.jacobian(&p);
            let fd_j = fd_jacobian(
                |x| {
                    Point::from_vector(x.clone())
                        .map(|q| obj.signed_gradient(&q))
                        .unwrap_or_else(|_| DVector::from_element(n, f64::NAN))
                },
                p.as_vector(),
                FD_STEP,
            );
            err = err.max(fd_j.map(|fd| rel_err_mat(&j, &fd)).unwrap_or(f64::INFINITY));
        }

        let gh = obj.jacobian(&p).tr_mul(&xi);
        let fd_gh = fd_gradient(|x| hamiltonian_of(obj, x), p.as_vector(), FD_STEP);
        err = err.max(fd_gh.map(|fd| rel_err_vec(&gh, &fd)).unwrap_or(f64::INFINITY));

        // NaN compares false, so treat it as the worst possible error.
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > worst.0 {
            worst = (err, p);
        }
    }

    DerivativeReport {
        max_rel_error: worst.0,
        worst_point: worst.1,
        passed: worst.0 <= tol,
        tolerance: tol,
        points: count.max(1),
        skipped_jacobian: skipped,
    }
}
