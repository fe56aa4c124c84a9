//! Objective functions: the smooth-convex interface, quadratic and linear
//! instances, and composite objectives `f + Ψ` over a feasible set.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Symmetry tolerance (absolute, entrywise) accepted by [`make_quadratic`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue accepted as PSD round-off.
pub const PSD_TOL: f64 = 1e-10;

/// A known minimizer and minimum value.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub point: Vector,
    pub value: f64,
}

/// A differentiable convex function with curvature constants.
///
/// `smoothness` is the constant `L` of the upper quadratic bound and
/// `strong_convexity` the constant `μ` of the lower one; `μ = 0` marks a
/// function that is merely convex.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    fn smoothness(&self) -> f64;
    fn strong_convexity(&self) -> f64;

    fn optimum(&self) -> Option<&Optimum> {
        None
    }

    /// Quadratics admit exact proximal maps; everything else falls back to
    /// an inner solver.
    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        None
    }

    fn condition_number(&self) -> f64 {
        self.smoothness() / self.strong_convexity()
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Value and gradient at `x`, rejecting points of the wrong dimension.
pub fn eval_and_grad(obj: &dyn Objective, x: &Vector) -> Result<(f64, Vector)> {
    check_dim(obj.dim(), x.len())?;
    Ok((obj.value(x), obj.gradient(x)))
}

/// `f(x) = ½xᵀAx − bᵀx + c` with `A` symmetric PSD.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    a: Matrix,
    b: Vector,
    offset: f64,
    l: f64,
    mu: f64,
    optimum: Option<Optimum>,
}

/// Build `½xᵀAx − bᵀx`, reading `L` and `μ` off the extremal eigenvalues.
pub fn make_quadratic(a: Matrix, b: Vector) -> Result<QuadraticObjective> {
    QuadraticObjective::new(a, b)
}

impl QuadraticObjective {
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        check_dim(rows, b.len())?;
        if rows == 0 {
            return Err(invalid("A", "empty matrix"));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&a + a.transpose()) * 0.5;
        let (lo, hi) = extremal_eigenvalues(&sym);
        if lo < -PSD_TOL {
            return Err(Error::NotPsd(lo));
        }
        let mu = lo.max(0.0);
        let l = hi;
        if l <= 0.0 {
            return Err(invalid("A", "zero matrix has no positive smoothness constant"));
        }
        let mut quad = QuadraticObjective {
            a: sym,
            b,
            offset: 0.0,
            l,
            mu,
            optimum: None,
        };
        if mu > 0.0 {
            if let Some(chol) = quad.a.clone().cholesky() {
                let point = chol.solve(&quad.b);
                let value = quad.value(&point);
                quad.optimum = Some(Optimum { point, value });
            }
        }
        Ok(quad)
    }

    /// `f(x, y) = 0.1x² + y²`, i.e. `A = diag(0.2, 2)`, `b = 0`.
    pub fn figure1() -> Self {
        Self::new(Matrix::from_diagonal(&Vector::from_vec(vec![0.2, 2.0])), Vector::zeros(2))
            .expect("figure-1 quadratic is valid")
    }

    /// Add a constant term to `f`.
    pub fn with_offset(mut self, offset: f64) -> Self {
        let delta = offset - self.offset;
        self.offset = offset;
        if let Some(opt) = self.optimum.as_mut() {
            opt.value += delta;
        }
        self
    }

    /// Attach a minimizer for singular `A` (any solution of `Ax = b`).
    pub fn with_minimizer(mut self, point: Vector) -> Result<Self> {
        check_dim(self.dim(), point.len())?;
        let residual = (&self.a * &point - &self.b).norm();
        let scale = 1.0 + self.b.norm() + self.l * point.norm();
        if residual > 1e-9 * scale {
            return Err(invalid(
                "minimizer",
                format!("‖Ax − b‖ = {residual:e} is not zero"),
            ));
        }
        let value = self.value(&point);
        self.optimum = Some(Optimum { point, value });
        Ok(self)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn linear_term(&self) -> &Vector {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b.dot(x) + self.offset
    }

    fn gradient(&self, x: &Vector) -> Vector {
        &self.a * x - &self.b
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }

    fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        Some(self)
    }
}

fn extremal_eigenvalues(a: &Matrix) -> (f64, f64) {
    let n = a.nrows();
    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0));
    if is_diagonal {
        let d = a.diagonal();
        return (d.min(), d.max());
    }
    let eig = a.clone().symmetric_eigen();
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// `f(x) = cᵀx`. Curvature is zero, so any positive `L` is valid; it is
/// supplied by the caller to drive the step-size schedule.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    c: Vector,
    l: f64,
}

impl LinearObjective {
    pub fn new(c: Vector, smoothness: f64) -> Result<Self> {
        if !(smoothness > 0.0) {
            return Err(invalid("L", "must be positive"));
        }
        Ok(LinearObjective { c, l: smoothness })
    }
}

impl Objective for LinearObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.c.dot(x)
    }

    fn gradient(&self, _x: &Vector) -> Vector {
        self.c.clone()
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn strong_convexity(&self) -> f64 {
        0.0
    }
}

/// The nonsmooth part `Ψ` of a composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `λ‖x‖₁`
    L1(f64),
}

impl Regularizer {
    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1(lambda) => lambda * x.lp_norm(1),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Regularizer::Zero => "zero".into(),
            Regularizer::L1(lambda) => format!("l1({lambda})"),
        }
    }
}

/// Feasible set `Q`.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    AllSpace,
    Box { lower: Vector, upper: Vector },
    Simplex,
}

impl Domain {
    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            Domain::AllSpace => true,
            Domain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol),
            Domain::Simplex => {
                x.iter().all(|&v| v >= -tol) && (x.sum() - 1.0).abs() <= tol * x.len() as f64
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::AllSpace => "all-space",
            Domain::Box { .. } => "box",
            Domain::Simplex => "simplex",
        }
    }
}

/// `f^Ψ = f + Ψ` restricted to `Q`.
///
/// `smoothness` is the constant of `f` with respect to the norm paired with
/// the mirror map used on this problem (ℓ₂ for the squared-euclidean map,
/// ℓ₁ for entropy on the simplex), which need not equal `f.smoothness()`.
#[derive(Debug, Clone)]
pub struct CompositeObjective {
    smooth: Arc<dyn Objective>,
    psi: Regularizer,
    domain: Domain,
    smoothness: f64,
    optimum: Option<Optimum>,
}

impl CompositeObjective {
    pub fn new(smooth: Arc<dyn Objective>, psi: Regularizer, domain: Domain) -> Result<Self> {
        if let Regularizer::L1(lambda) = psi {
            if !(lambda >= 0.0) {
                return Err(invalid("lambda", "must be nonnegative"));
            }
        }
        if let Domain::Box { lower, upper } = &domain {
            check_dim(smooth.dim(), lower.len())?;
            check_dim(smooth.dim(), upper.len())?;
            if lower.iter().zip(upper.iter()).any(|(lo, hi)| lo > hi) {
                return Err(invalid("box", "lower bound exceeds upper bound"));
            }
        }
        let smoothness = smooth.smoothness();
        Ok(CompositeObjective {
            smooth,
            psi,
            domain,
            smoothness,
            optimum: None,
        })
    }

    /// Override the smoothness constant (e.g. the ℓ₁-norm constant for
    /// entropy geometry).
    pub fn with_smoothness(mut self, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(invalid("L", "must be positive"));
        }
        self.smoothness = l;
        Ok(self)
    }

    pub fn with_optimum(mut self, optimum: Optimum) -> Result<Self> {
        check_dim(self.dim(), optimum.point.len())?;
        self.optimum = Some(optimum);
        Ok(self)
    }

    pub fn smooth(&self) -> &Arc<dyn Objective> {
        &self.smooth
    }

    pub fn psi(&self) -> Regularizer {
        self.psi
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    /// `f(x) + Ψ(x)`
    pub fn value(&self, x: &Vector) -> f64 {
        self.smooth.value(x) + self.psi.value(x)
    }

    /// Worst violation of `Ψ(λu + (1−λ)v) ≤ λΨ(u) + (1−λ)Ψ(v)` over the
    /// given chords `(u, v, λ)`; clamped at zero.
    pub fn psi_convexity_violation(&self, chords: &[(Vector, Vector, f64)]) -> f64 {
        chords
            .iter()
            .map(|(u, v, lambda)| {
                let mid = u * *lambda + v * (1.0 - lambda);
                self.psi.value(&mid)
                    - lambda * self.psi.value(u)
                    - (1.0 - lambda) * self.psi.value(v)
            })
            .fold(0.0, f64::max)
    }
}

/// Lasso: `½‖Ax − b‖² + λ‖x‖₁` over all space.
///
/// The optimum is filled in closed form when `AᵀA` is diagonal
/// (coordinatewise soft thresholding of `Aᵀb`).
pub fn make_lasso_composite(a: &Matrix, b: &Vector, lambda: f64) -> Result<CompositeObjective> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(invalid("A", "must have at least one row and column"));
    }
    check_dim(a.nrows(), b.len())?;
    if !(lambda >= 0.0) {
        return Err(invalid("lambda", "must be nonnegative"));
    }
    let gram = a.transpose() * a;
    let atb = a.transpose() * b;
    let n = gram.nrows();
    let smooth = QuadraticObjective::new(gram.clone(), atb.clone())?.with_offset(0.5 * b.norm_squared());

    let scale = gram.amax().max(1.0);
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || gram[(i, j)].abs() <= 1e-14 * scale));
    let closed_form = if diagonal {
        let mut point = Vector::zeros(n);
        let mut ok = true;
        for i in 0..n {
            let d = gram[(i, i)];
            let shrunk = soft_threshold_scalar(atb[i], lambda);
            if d > 0.0 {
                point[i] = shrunk / d;
            } else if shrunk != 0.0 {
                ok = false;
            }
        }
        ok.then_some(point)
    } else {
        None
    };

    let mut comp = CompositeObjective::new(Arc::new(smooth), Regularizer::L1(lambda), Domain::AllSpace)?;
    if let Some(point) = closed_form {
        let value = comp.value(&point);
        comp = comp.with_optimum(Optimum { point, value })?;
    }
    Ok(comp)
}

pub(crate) fn soft_threshold_scalar(v: f64, tau: f64) -> f64 {
    v.signum() * (v.abs() - tau).max(0.0)
}

/// `f(x) − f(y) − ⟨∇f(y), x − y⟩`
pub fn linearization_gap(obj: &dyn Objective, x: &Vector, y: &Vector) -> f64 {
    obj.value(x) - obj.value(y) - obj.gradient(y).dot(&(x - y))
}

/// Worst violations of the curvature sandwich
/// `(μ/2)‖x−y‖² ≤ f(x) − f(y) − ⟨∇f(y), x−y⟩ ≤ (L/2)‖x−y‖²` over sample pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureReport {
    pub lower_violation: f64,
    pub upper_violation: f64,
    /// Largest `1 + |f(x)| + |f(y)|` seen, for relative comparisons.
    pub scale: f64,
}

impl CurvatureReport {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.lower_violation <= rel_tol * self.scale && self.upper_violation <= rel_tol * self.scale
    }
}

pub fn verify_curvature_bounds(obj: &dyn Objective, samples: &[(Vector, Vector)]) -> CurvatureReport {
    let (l, mu) = (obj.smoothness(), obj.strong_convexity());
    let mut report = CurvatureReport {
        lower_violation: 0.0,
        upper_violation: 0.0,
        scale: 1.0,
    };
    for (x, y) in samples {
        let gap = linearization_gap(obj, x, y);
        let dist2 = (x - y).norm_squared();
        report.lower_violation = report.lower_violation.max(0.5 * mu * dist2 - gap);
        report.upper_violation = report.upper_violation.max(gap - 0.5 * l * dist2);
        report.scale = report.scale.max(1.0 + obj.value(x).abs() + obj.value(y).abs());
    }
    report
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Matrix {
    let g = Matrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random PSD quadratic `QᵀDQ` with spectrum spread over `[eig_min, eig_max]`
/// (both endpoints attained) and a Gaussian minimizer `x*` with `b = Ax*`.
pub fn random_psd_quadratic<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    eig_min: f64,
    eig_max: f64,
) -> Result<QuadraticObjective> {
    if dim == 0 {
        return Err(invalid("dim", "must be positive"));
    }
    if !(eig_min >= 0.0 && eig_max > 0.0 && eig_min <= eig_max) {
        return Err(invalid("spectrum", "need 0 ≤ eig_min ≤ eig_max, eig_max > 0"));
    }
    let mut eigs: Vec<f64> = (0..dim)
        .map(|i| match i {
            0 => eig_max,
            1 => eig_min,
            _ => eig_min + (eig_max - eig_min) * rng.random::<f64>(),
        })
        .collect();
    if dim == 1 {
        eigs[0] = eig_max;
    }
    let q = random_orthogonal(rng, dim);
    let a = &q * Matrix::from_diagonal(&Vector::from_vec(eigs)) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let xstar = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = &a * &xstar;
    let quad = QuadraticObjective::new(a, b)?;
    if quad.optimum().is_some() {
        Ok(quad)
    } else {
        quad.with_minimizer(xstar)
    }
}
