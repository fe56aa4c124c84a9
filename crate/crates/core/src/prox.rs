//! Proximal maps, mirror maps and Bregman divergences.
//!
//! The squared-euclidean map is paired with the ℓ₂ norm and negative
//! entropy on the simplex with the ℓ₁ norm; each is 1-strongly convex with
//! respect to its paired norm (the entropy case is Pinsker's inequality).

use nalgebra::Cholesky;

use crate::error::{invalid, Error, Result};
use crate::objective::{check_dim, soft_threshold_scalar, CompositeObjective, Domain, Objective, QuadraticObjective, Regularizer, Vector};

/// Default stopping tolerance for [`approx_prox`].
pub const DEFAULT_PROX_TOL: f64 = 1e-10;
/// Default inner-iteration cap for [`approx_prox`].
pub const DEFAULT_PROX_MAX_ITER: usize = 1_000_000;
/// Floor applied to entropy iterates before logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Distance-generating function `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MirrorMap {
    /// `h(x) = ½‖x‖²`, so `D_h(u, v) = ½‖u − v‖²`.
    SquaredEuclidean,
    /// `h(x) = Σ xᵢ ln xᵢ` on the probability simplex.
    NegativeEntropy,
}

impl MirrorMap {
    pub fn name(&self) -> &'static str {
        match self {
            MirrorMap::SquaredEuclidean => "euclidean",
            MirrorMap::NegativeEntropy => "entropy",
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            MirrorMap::SquaredEuclidean => Domain::AllSpace,
            MirrorMap::NegativeEntropy => Domain::Simplex,
        }
    }

    pub fn h(&self, x: &Vector) -> f64 {
        match self {
            MirrorMap::SquaredEuclidean => 0.5 * x.norm_squared(),
            MirrorMap::NegativeEntropy => x
                .iter()
                .map(|&xi| if xi <= 0.0 { 0.0 } else { xi * xi.max(ENTROPY_FLOOR).ln() })
                .sum(),
        }
    }

    /// `∇h(x)`; for entropy `x` must be strictly positive.
    pub fn grad_h(&self, x: &Vector) -> Result<Vector> {
        match self {
            MirrorMap::SquaredEuclidean => Ok(x.clone()),
            MirrorMap::NegativeEntropy => {
                check_interior(x)?;
                Ok(x.map(|xi| xi.max(ENTROPY_FLOOR).ln() + 1.0))
            }
        }
    }

    /// Squared norm paired with this map (ℓ₂² or ℓ₁²).
    pub fn norm_sq(&self, d: &Vector) -> f64 {
        match self {
            MirrorMap::SquaredEuclidean => d.norm_squared(),
            MirrorMap::NegativeEntropy => d.lp_norm(1).powi(2),
        }
    }
}

fn check_interior(x: &Vector) -> Result<()> {
    match x.iter().position(|&xi| !(xi > 0.0)) {
        Some(index) => Err(Error::Boundary { index, value: x[index] }),
        None => Ok(()),
    }
}

/// `D_h(u, v) = h(u) − h(v) − ⟨∇h(v), u − v⟩`.
pub fn bregman_divergence(h: MirrorMap, u: &Vector, v: &Vector) -> Result<f64> {
    check_dim(v.len(), u.len())?;
    match h {
        MirrorMap::SquaredEuclidean => Ok(0.5 * (u - v).norm_squared()),
        MirrorMap::NegativeEntropy => {
            check_interior(v)?;
            if let Some(index) = u.iter().position(|&ui| ui < 0.0) {
                return Err(Error::Boundary { index, value: u[index] });
            }
            // Σ uᵢ ln(uᵢ/vᵢ) − uᵢ + vᵢ, the generalized KL divergence
            Ok(u
                .iter()
                .zip(v.iter())
                .map(|(&ui, &vi)| {
                    let log_term = if ui > 0.0 {
                        ui * (ui.max(ENTROPY_FLOOR).ln() - vi.max(ENTROPY_FLOOR).ln())
                    } else {
                        0.0
                    };
                    log_term - ui + vi
                })
                .sum::<f64>()
                .max(0.0))
        }
    }
}

/// Outcome of an iterative proximal solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub point: Vector,
    /// `‖∇f(p) + (p − x)/η‖` at the returned point.
    pub subproblem_residual: f64,
    pub inner_iterations: usize,
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(invalid("eta", format!("must be positive and finite, got {eta}")))
    }
}

/// `argmin_u f(u) + (1/2η)‖u − x‖²` for a quadratic, i.e. the solution of
/// `(I + ηA)u = x + ηb`.
pub fn exact_prox_quadratic(quad: &QuadraticObjective, x: &Vector, eta: f64) -> Result<Vector> {
    check_eta(eta)?;
    check_dim(quad.dim(), x.len())?;
    let n = x.len();
    let system = nalgebra::DMatrix::identity(n, n) + quad.matrix() * eta;
    let rhs = x + quad.linear_term() * eta;
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::LinearSolve("I + ηA is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Proximal map by plain gradient descent on the `(1/η)`-strongly convex,
/// `(L + 1/η)`-smooth subproblem, started at `x`.
pub fn approx_prox(obj: &dyn Objective, x: &Vector, eta: f64, tol: f64) -> Result<ProxResult> {
    approx_prox_capped(obj, x, eta, tol, DEFAULT_PROX_MAX_ITER)
}

pub fn approx_prox_capped(
    obj: &dyn Objective,
    x: &Vector,
    eta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ProxResult> {
    check_eta(eta)?;
    check_dim(obj.dim(), x.len())?;
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let step = 1.0 / (obj.smoothness() + 1.0 / eta);
    let mut point = x.clone();
    let mut best: Option<(f64, Vector)> = None;
    for iter in 0..=max_iter {
        let grad = obj.gradient(&point) + (&point - x) / eta;
        let residual = grad.norm();
        if residual <= tol {
            return Ok(ProxResult {
                point,
                subproblem_residual: residual,
                inner_iterations: iter,
            });
        }
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, point.clone()));
        }
        point -= grad * step;
    }
    let (residual, best) = best.expect("at least one iterate");
    Err(Error::ProxNotConverged {
        iterations: max_iter,
        residual,
        best: best.as_slice().to_vec(),
    })
}

/// Left side of the proximal inequality minus zero:
/// `φ(x⁺) − φ(u) + ½‖u − x⁺‖² + ½‖x⁺ − x‖² − ½‖u − x‖²`.
///
/// Nonpositive whenever `x⁺` is the proximal point of convex `φ` at `x`.
pub fn prox_inequality_residual(phi_xnext: f64, phi_u: f64, u: &Vector, x_next: &Vector, x_prev: &Vector) -> f64 {
    phi_xnext - phi_u + 0.5 * (u - x_next).norm_squared() + 0.5 * (x_next - x_prev).norm_squared()
        - 0.5 * (u - x_prev).norm_squared()
}

/// Bregman form: `φ(x⁺) − φ(u) + D(u, x⁺) + D(x⁺, x) − D(u, x)`.
pub fn bregman_prox_inequality_residual(
    h: MirrorMap,
    phi_xnext: f64,
    phi_u: f64,
    u: &Vector,
    x_next: &Vector,
    x_prev: &Vector,
) -> Result<f64> {
    Ok(phi_xnext - phi_u + bregman_divergence(h, u, x_next)? + bregman_divergence(h, x_next, x_prev)?
        - bregman_divergence(h, u, x_prev)?)
}

/// Componentwise `sign(vᵢ)·max(|vᵢ| − τ, 0)`.
pub fn soft_threshold(v: &Vector, tau: f64) -> Vector {
    v.map(|vi| soft_threshold_scalar(vi, tau))
}

/// `argmin_{u∈Q} ⟨∇f(y), u⟩ + (1/η)·D_h(u, x) + Ψ(u)`.
pub fn bregman_prox_step(comp: &CompositeObjective, h: MirrorMap, y: &Vector, x: &Vector, eta: f64) -> Result<Vector> {
    check_dim(comp.dim(), y.len())?;
    let grad = comp.smooth().gradient(y);
    bregman_prox_step_with_gradient(comp, h, &grad, x, eta)
}

/// [`bregman_prox_step`] with the gradient already evaluated.
pub fn bregman_prox_step_with_gradient(
    comp: &CompositeObjective,
    h: MirrorMap,
    grad: &Vector,
    x: &Vector,
    eta: f64,
) -> Result<Vector> {
    check_eta(eta)?;
    check_dim(comp.dim(), x.len())?;
    check_dim(comp.dim(), grad.len())?;
    match (h, comp.psi(), comp.domain()) {
        (MirrorMap::SquaredEuclidean, Regularizer::Zero, Domain::AllSpace) => Ok(x - grad * eta),
        (MirrorMap::SquaredEuclidean, Regularizer::L1(lambda), Domain::AllSpace) => {
            Ok(soft_threshold(&(x - grad * eta), eta * lambda))
        }
        (MirrorMap::SquaredEuclidean, Regularizer::Zero, Domain::Box { lower, upper }) => {
            let mut out = x - grad * eta;
            for i in 0..out.len() {
                out[i] = out[i].clamp(lower[i], upper[i]);
            }
            Ok(out)
        }
        (MirrorMap::NegativeEntropy, Regularizer::Zero, Domain::Simplex) => {
            check_interior(x)?;
            // log-space multiplicative update, shifted for stability
            let logits = Vector::from_fn(x.len(), |i, _| x[i].max(ENTROPY_FLOOR).ln() - eta * grad[i]);
            let shift = logits.max();
            let mut weights = logits.map(|l| (l - shift).exp());
            let total = weights.sum();
            weights /= total;
            Ok(weights.map(|w| w.max(ENTROPY_FLOOR)))
        }
        (h, psi, domain) => Err(Error::UnsupportedCombination {
            mirror: h.name().into(),
            regularizer: psi.name(),
            domain: domain.name().into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{make_lasso_composite, random_psd_quadratic, LinearObjective, Matrix};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn random_simplex_point(rng: &mut impl Rng, dim: usize) -> Vector {
        let mut p = Vector::from_fn(dim, |_, _| -rng.random::<f64>().max(1e-12).ln());
        p /= p.sum();
        p
    }

    #[test]
    fn exact_prox_examples() {
        let q = QuadraticObjective::figure1();
        let p = exact_prox_quadratic(&q, &v(&[10.0, 10.0]), 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(p, v(&[9.375, 6.0]), epsilon = 1e-12);

        let q = crate::objective::make_quadratic(Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        assert_abs_diff_eq!(exact_prox_quadratic(&q, &v(&[4.0, 0.0]), 1.0).unwrap(), v(&[2.0, 0.0]), epsilon = 1e-15);

        let q = crate::objective::make_quadratic(Matrix::from_diagonal(&v(&[1.0, 4.0])), v(&[1.0, 4.0])).unwrap();
        let xs = q.optimum().unwrap().point.clone();
        assert_abs_diff_eq!(exact_prox_quadratic(&q, &xs, 7.0).unwrap(), xs, epsilon = 1e-14);
    }

    #[test]
    fn exact_prox_rejects_bad_step() {
        let q = QuadraticObjective::figure1();
        assert!(matches!(
            exact_prox_quadratic(&q, &v(&[1.0, 1.0]), 0.0),
            Err(Error::InvalidParameter { name: "eta", .. })
        ));
        assert!(exact_prox_quadratic(&q, &v(&[1.0, 1.0]), -1.0).is_err());
        assert!(exact_prox_quadratic(&q, &v(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn exact_prox_residual_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = random_psd_quadratic(&mut rng, 8, 0.0, 5.0).unwrap();
            let x = Vector::from_fn(8, |_, _| rng.random_range(-10.0..10.0));
            let eta = rng.random_range(0.01..10.0);
            let p = exact_prox_quadratic(&q, &x, eta).unwrap();
            let res = (&p + (q.matrix() * &p) * eta - &x - q.linear_term() * eta).norm();
            assert!(res <= 1e-12 * x.norm().max(1.0), "{res}");
        }
    }

    #[test]
    fn approx_prox_agrees_with_exact() {
        let q = QuadraticObjective::figure1();
        let x = v(&[10.0, 10.0]);
        let r = approx_prox(&q, &x, 1.0 / 3.0, 1e-10).unwrap();
        assert!((&r.point - v(&[9.375, 6.0])).amax() <= 1e-10);
        assert!(r.subproblem_residual <= 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let q = random_psd_quadratic(&mut rng, 5, 0.0, 4.0).unwrap();
            let x = Vector::from_fn(5, |_, _| rng.random_range(-5.0..5.0));
            let (eta, tol) = (rng.random_range(0.1..3.0), 1e-8);
            let r = approx_prox(&q, &x, eta, tol).unwrap();
            let exact = exact_prox_quadratic(&q, &x, eta).unwrap();
            assert!((&r.point - exact).norm() <= tol * eta);
        }
    }

    #[test]
    fn approx_prox_at_minimizer_is_immediate() {
        let q = crate::objective::make_quadratic(Matrix::from_diagonal(&v(&[1.0, 4.0])), v(&[1.0, 4.0])).unwrap();
        let xs = q.optimum().unwrap().point.clone();
        let r = approx_prox(&q, &xs, 5.0, 1e-10).unwrap();
        assert!(r.inner_iterations <= 1);
        assert_eq!(r.point, xs);
    }

    #[test]
    fn approx_prox_reports_cap() {
        let q = QuadraticObjective::figure1();
        match approx_prox_capped(&q, &v(&[10.0, 10.0]), 1e6, 1e-14, 10) {
            Err(Error::ProxNotConverged { iterations, best, .. }) => {
                assert_eq!(iterations, 10);
                assert_eq!(best.len(), 2);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn prox_inequality_examples() {
        let u = v(&[1.0, 2.0]);
        assert_eq!(prox_inequality_residual(3.0, 3.0, &u, &u, &u), 0.0);

        let q = QuadraticObjective::figure1();
        let eta = 1.0 / 3.0;
        let x0 = v(&[10.0, 10.0]);
        let x1 = exact_prox_quadratic(&q, &x0, eta).unwrap();
        let u = v(&[0.0, 0.0]);
        let r = prox_inequality_residual(eta * q.value(&x1), eta * q.value(&u), &u, &x1, &x0);
        // direct evaluation at (9.375, 6): 14.9296875 + 61.9453125 + 8.4453125 − 100
        let expected = eta * (0.1 * 9.375f64.powi(2) + 36.0) + 0.5 * (9.375f64.powi(2) + 36.0)
            + 0.5 * (0.625f64.powi(2) + 16.0)
            - 100.0;
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
        assert!(r <= 0.0);
    }

    #[test]
    fn bregman_examples() {
        let e = MirrorMap::SquaredEuclidean;
        assert_eq!(bregman_divergence(e, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.5);
        let p = v(&[0.3, 0.7]);
        assert_eq!(bregman_divergence(e, &p, &p).unwrap(), 0.0);
        let h = MirrorMap::NegativeEntropy;
        assert_eq!(bregman_divergence(h, &p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            bregman_divergence(h, &v(&[1.0, 0.0]), &v(&[0.5, 0.5])).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert!(matches!(
            bregman_divergence(h, &v(&[0.5, 0.5]), &v(&[1.0, 0.0])),
            Err(Error::Boundary { index: 1, .. })
        ));
        assert!(h.grad_h(&v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn bregman_strong_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let dim = rng.random_range(2..6);
            let u = random_simplex_point(&mut rng, dim);
            let w = random_simplex_point(&mut rng, dim);
            let h = MirrorMap::NegativeEntropy;
            let d = bregman_divergence(h, &u, &w).unwrap();
            assert!(d - 0.5 * h.norm_sq(&(&u - &w)) >= -1e-10);
            let e = MirrorMap::SquaredEuclidean;
            let d = bregman_divergence(e, &u, &w).unwrap();
            assert!(d - 0.5 * e.norm_sq(&(&u - &w)) >= -1e-10);
        }
    }

    #[test]
    fn entropy_matches_definition() {
        let h = MirrorMap::NegativeEntropy;
        let u = v(&[0.2, 0.5, 0.3]);
        let w = v(&[0.1, 0.6, 0.3]);
        let direct = h.h(&u) - h.h(&w) - h.grad_h(&w).unwrap().dot(&(&u - &w));
        assert_abs_diff_eq!(bregman_divergence(h, &u, &w).unwrap(), direct, epsilon = 1e-15);
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&v(&[3.0, -0.5, 1.0]), 1.0), v(&[2.0, 0.0, 0.0]));
        assert_eq!(soft_threshold(&v(&[3.0, -0.5, 1.0]), 0.0), v(&[3.0, -0.5, 1.0]));
        assert_eq!(soft_threshold(&v(&[-2.0, 2.0]), 2.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn bregman_step_examples() {
        let lin = Arc::new(LinearObjective::new(v(&[1.0, -3.0]), 1.0).unwrap());
        let comp = CompositeObjective::new(lin.clone(), Regularizer::L1(0.5), Domain::AllSpace).unwrap();
        let step = bregman_prox_step(&comp, MirrorMap::SquaredEuclidean, &v(&[0.0, 0.0]), &v(&[2.0, -1.0]), 1.0).unwrap();
        assert_abs_diff_eq!(step, v(&[0.5, 1.5]), epsilon = 1e-15);

        let flat = Arc::new(LinearObjective::new(v(&[0.0, 0.0]), 1.0).unwrap());
        let comp = CompositeObjective::new(flat, Regularizer::Zero, Domain::Simplex).unwrap();
        let p = v(&[0.5, 0.5]);
        let step = bregman_prox_step(&comp, MirrorMap::NegativeEntropy, &p, &p, 1.0).unwrap();
        assert_abs_diff_eq!(step, p, epsilon = 1e-15);

        let q = Arc::new(QuadraticObjective::figure1());
        let comp = CompositeObjective::new(q.clone(), Regularizer::Zero, Domain::AllSpace).unwrap();
        let (y, x, eta) = (v(&[1.0, -2.0]), v(&[10.0, 10.0]), 0.3);
        let step = bregman_prox_step(&comp, MirrorMap::SquaredEuclidean, &y, &x, eta).unwrap();
        let gd = &x - q.gradient(&y) * eta;
        assert!((step - gd).amax() <= 1e-14);
    }

    #[test]
    fn entropy_step_matches_hand_computation() {
        let lin = Arc::new(LinearObjective::new(v(&[4f64.ln(), 0.0]), 1.0).unwrap());
        let comp = CompositeObjective::new(lin, Regularizer::Zero, Domain::Simplex).unwrap();
        let p = v(&[0.5, 0.5]);
        let step = bregman_prox_step(&comp, MirrorMap::NegativeEntropy, &p, &p, 1.0).unwrap();
        assert_abs_diff_eq!(step, v(&[0.2, 0.8]), epsilon = 1e-15);
    }

    #[test]
    fn box_step_clips() {
        let lin = Arc::new(LinearObjective::new(v(&[1.0, -1.0]), 1.0).unwrap());
        let dom = Domain::Box { lower: v(&[-1.0, -1.0]), upper: v(&[1.0, 1.0]) };
        let comp = CompositeObjective::new(lin, Regularizer::Zero, dom).unwrap();
        let step = bregman_prox_step(&comp, MirrorMap::SquaredEuclidean, &v(&[0.0, 0.0]), &v(&[0.5, 0.5]), 1.0).unwrap();
        assert_eq!(step, v(&[-0.5, 1.0]));
    }

    #[test]
    fn unsupported_combination_is_named() {
        let lin = Arc::new(LinearObjective::new(v(&[1.0, -1.0]), 1.0).unwrap());
        let comp = CompositeObjective::new(lin, Regularizer::L1(1.0), Domain::Simplex).unwrap();
        let err = bregman_prox_step(&comp, MirrorMap::NegativeEntropy, &v(&[0.5, 0.5]), &v(&[0.5, 0.5]), 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("entropy") && msg.contains("l1") && msg.contains("simplex"), "{msg}");
    }

    #[test]
    fn entropy_step_rejects_boundary_input() {
        let lin = Arc::new(LinearObjective::new(v(&[1.0, -1.0]), 1.0).unwrap());
        let comp = CompositeObjective::new(lin, Regularizer::Zero, Domain::Simplex).unwrap();
        assert!(matches!(
            bregman_prox_step(&comp, MirrorMap::NegativeEntropy, &v(&[0.5, 0.5]), &v(&[1.0, 0.0]), 1.0),
            Err(Error::Boundary { .. })
        ));
    }

    #[test]
    fn lasso_step_satisfies_bregman_inequality() {
        let comp = make_lasso_composite(&Matrix::identity(2, 2), &v(&[3.0, 0.2]), 1.0).unwrap();
        let (y, x, eta) = (v(&[0.5, 0.5]), v(&[1.0, -1.0]), 0.7);
        let g = comp.smooth().gradient(&y);
        let next = bregman_prox_step(&comp, MirrorMap::SquaredEuclidean, &y, &x, eta).unwrap();
        let phi = |p: &Vector| eta * (g.dot(p) + comp.psi().value(p));
        let u = comp.optimum().unwrap().point.clone();
        let r = bregman_prox_inequality_residual(MirrorMap::SquaredEuclidean, phi(&next), phi(&u), &u, &next, &x).unwrap();
        assert!(r <= 1e-12, "{r}");
    }
}
