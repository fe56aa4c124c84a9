//! Lyapunov functions, per-step inequality certificates and rate envelopes.
//!
//! All quantities are recomputed from the iterates stored in a
//! [`Trajectory`]; gradients cached by the optimizer are ignored.
//!
//! A certificate residual is reported as `LHS − RHS`, so a valid inequality
//! has a residual at most zero. Equalities are reported as absolute
//! discrepancies. Tolerances are relative to `1 + |f*| + Φ₀`.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::objective::{Optimum, Vector};
use crate::optimizers::{composite_similar_triangles_step, IterateState, Method, Problem, Trajectory};
use crate::schedules::{agm_schedule, Schedule};

/// Default relative tolerance for certificates and monotonicity checks.
pub const DEFAULT_CERT_TOL: f64 = 1e-9;

/// Steps used by [`reference_optimum`].
pub const REFERENCE_STEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub t: usize,
    pub phi: f64,
    /// Weighted optimality gap.
    pub gap_term: f64,
    /// `½‖x* − x_t‖²` or `D_h(x*, x_t)`.
    pub distance_term: f64,
}

/// Which potential to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhiKind {
    /// Gap at `x_t`, weighted by `Σηᵢ`.
    Ppm,
    /// Gap at `z_t`, weighted by `Σηᵢ`.
    Agm,
    /// Composite gap at `z_t` with a Bregman distance.
    Composite,
    /// Gap at `z_t`, weighted by `Ση̃ᵢ` with `η̃_{i} = η_{i−1} + 1/L`.
    Momentum,
}

impl PhiKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhiKind::Ppm => "ppm",
            PhiKind::Agm => "agm",
            PhiKind::Composite => "composite",
            PhiKind::Momentum => "momentum",
        }
    }

    pub fn compatible(&self, method: Method) -> bool {
        use Method::*;
        match self {
            PhiKind::Ppm => matches!(method, Ppm | Gd | Cgd),
            PhiKind::Agm => matches!(method, Agm | AgmAlt | SimTri),
            PhiKind::Composite => matches!(method, CompSimTri | SimTri),
            PhiKind::Momentum => matches!(method, Momentum),
        }
    }

    /// The potential used to certify `method`, if it has one.
    pub fn for_method(method: Method) -> Option<PhiKind> {
        match method {
            Method::Ppm | Method::Gd | Method::Cgd => Some(PhiKind::Ppm),
            Method::Agm | Method::AgmAlt => Some(PhiKind::Agm),
            Method::SimTri | Method::CompSimTri => Some(PhiKind::Composite),
            Method::Momentum => Some(PhiKind::Momentum),
            Method::ScAgm => None,
        }
    }
}

fn check_index(traj: &Trajectory, t: usize) -> Result<()> {
    if t < traj.len() {
        Ok(())
    } else {
        Err(invalid("t", format!("index {t} beyond trajectory of length {}", traj.len())))
    }
}

/// `Σ_{i=1..t} (η_{i−1} + 1/L)`.
fn momentum_weight(sched: &Schedule, l: f64, t: usize) -> f64 {
    if t == 0 {
        0.0
    } else {
        sched.prefix_sum(t - 1) + sched.eta(0) + t as f64 / l
    }
}

fn phi_with(kind: PhiKind, problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, t: usize) -> Result<LyapunovValue> {
    check_index(traj, t)?;
    let s = traj.state(t);
    let fstar = problem.value(&opt.point);
    let (weight, at) = match kind {
        PhiKind::Ppm => (sched.prefix_sum(t), &s.x),
        PhiKind::Agm | PhiKind::Composite => (sched.prefix_sum(t), &s.z),
        PhiKind::Momentum => (momentum_weight(sched, problem.smoothness(), t), &s.z),
    };
    let distance_term = problem.distance(&opt.point, &s.x)?;
    // an empty weight contributes nothing even when the gap is not finite
    let gap_term = if weight == 0.0 { 0.0 } else { weight * (problem.value(at) - fstar) };
    Ok(LyapunovValue {
        t,
        phi: gap_term + distance_term,
        gap_term,
        distance_term,
    })
}

/// `Φ_t = (Σ_{i≤t} ηᵢ)(f(x_t) − f*) + ½‖x* − x_t‖²`.
pub fn phi_ppm(problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, t: usize) -> Result<LyapunovValue> {
    phi_with(PhiKind::Ppm, problem, traj, sched, opt, t)
}

/// `Φ_t = (Σ_{i≤t} ηᵢ)(f(z_t) − f*) + ½‖x* − x_t‖²`.
pub fn phi_agm(problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, t: usize) -> Result<LyapunovValue> {
    phi_with(PhiKind::Agm, problem, traj, sched, opt, t)
}

/// `Φ_t = (Σ_{i≤t} ηᵢ)(f^Ψ(z_t) − f^Ψ(x*)) + D_h(x*, x_t)`.
pub fn phi_composite(problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, t: usize) -> Result<LyapunovValue> {
    phi_with(PhiKind::Composite, problem, traj, sched, opt, t)
}

/// `Φ_t = (Σ_{i≤t} η̃ᵢ)(f(z_t) − f*) + ½‖x* − x_t‖²`.
pub fn phi_momentum(problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, t: usize) -> Result<LyapunovValue> {
    phi_with(PhiKind::Momentum, problem, traj, sched, opt, t)
}

pub fn phi(kind: PhiKind, problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, t: usize) -> Result<LyapunovValue> {
    phi_with(kind, problem, traj, sched, opt, t)
}

/// `1 + |f*| + Φ₀`.
pub fn tolerance_scale(problem: &Problem, traj: &Trajectory, opt: &Optimum) -> Result<f64> {
    let phi0 = problem.distance(&opt.point, &traj.state(0).x)?;
    Ok(1.0 + problem.value(&opt.point).abs() + phi0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    B,
    E,
    F,
    G,
    H,
    Cond13,
    ATerms,
}

impl Family {
    pub const ALL: [Family; 7] = [Family::B, Family::E, Family::F, Family::G, Family::H, Family::Cond13, Family::ATerms];

    pub fn name(&self) -> &'static str {
        match self {
            Family::B => "B",
            Family::E => "E",
            Family::F => "F",
            Family::G => "G",
            Family::H => "H",
            Family::Cond13 => "COND13",
            Family::ATerms => "A-TERMS",
        }
    }

    pub fn matches(&self, method: Method) -> bool {
        use Method::*;
        match self {
            Family::B => method == Ppm,
            Family::E => method == Gd,
            Family::F | Family::Cond13 => matches!(method, Agm | AgmAlt),
            Family::G | Family::ATerms => matches!(method, SimTri | CompSimTri),
            Family::H => method == Momentum,
        }
    }

    /// Families that apply to trajectories of `method`.
    pub fn for_method(method: Method) -> Vec<Family> {
        Family::ALL.into_iter().filter(|f| f.matches(method)).collect()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid("family", format!("unknown certificate family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    /// `LHS − RHS` of a `≤` relation.
    Inequality,
    /// Absolute discrepancy of an identity.
    Equality,
    /// A named term reported for inspection only.
    Term,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub t: usize,
    pub name: &'static str,
    pub kind: ResidualKind,
    pub value: f64,
}

impl Residual {
    pub fn is_checked(&self) -> bool {
        self.kind != ResidualKind::Term
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub family: Family,
    pub residuals: Vec<Residual>,
    /// Largest positive residual over checked relations.
    pub worst_violation: f64,
    pub tolerance: f64,
    pub scale: f64,
}

impl CertificateReport {
    fn new(family: Family, residuals: Vec<Residual>, tolerance: f64, scale: f64) -> Self {
        let worst_violation = residuals
            .iter()
            .filter(|r| r.is_checked())
            .map(|r| if r.value.is_nan() { f64::INFINITY } else { r.value.max(0.0) })
            .fold(0.0, f64::max);
        CertificateReport {
            family,
            residuals,
            worst_violation,
            tolerance,
            scale,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.tolerance * self.scale
    }

    pub fn violations(&self) -> impl Iterator<Item = &Residual> {
        let limit = self.threshold();
        self.residuals.iter().filter(move |r| r.is_checked() && !(r.value <= limit))
    }

    pub fn passed(&self) -> bool {
        self.violations().next().is_none()
    }

    /// Largest checked residual at step `t`.
    pub fn worst_at(&self, t: usize) -> Option<f64> {
        self.residuals
            .iter()
            .filter(|r| r.t == t && r.is_checked())
            .map(|r| r.value)
            .reduce(f64::max)
    }

    /// Named residual values in step order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.residuals.iter().filter(|r| r.name == name).map(|r| r.value).collect()
    }
}

/// CSV with columns `family,t,name,residual`.
pub fn certificates_csv(reports: &[CertificateReport]) -> String {
    let mut out = String::from("family,t,name,residual\n");
    for report in reports {
        for r in &report.residuals {
            out.push_str(&format!("{},{},{},{:e}\n", report.family, r.t, r.name, r.value));
        }
    }
    out
}

struct StepView<'a> {
    t: usize,
    s0: &'a IterateState,
    s1: &'a IterateState,
    l: f64,
    eta_t: f64,
    eta_next: f64,
    prefix: f64,
    xstar: &'a Vector,
    fstar: f64,
}

fn push(out: &mut Vec<Residual>, t: usize, name: &'static str, kind: ResidualKind, value: f64) {
    out.push(Residual { t, name, kind, value });
}

fn family_b(v: &StepView, problem: &Problem, out: &mut Vec<Residual>) {
    let f = |x: &Vector| problem.value(x);
    let (x0, x1) = (&v.s0.x, &v.s1.x);
    let b1 = v.eta_next * (f(x1) - v.fstar) + 0.5 * (v.xstar - x1).norm_squared() - 0.5 * (v.xstar - x0).norm_squared();
    push(out, v.t, "B1", ResidualKind::Inequality, b1);
    push(out, v.t, "B2", ResidualKind::Inequality, f(x1) - f(x0));
}

fn family_e(v: &StepView, problem: &Problem, out: &mut Vec<Residual>) {
    let obj = problem.smooth_part();
    let (x0, x1, eta) = (&v.s0.x, &v.s1.x, v.eta_next);
    let delta = x1 - x0;
    let d2 = delta.norm_squared();
    let e1 = (v.l * eta / 2.0 - 0.5) * d2;
    let e2 = (v.l / 2.0 - 1.0 / eta) * d2;
    let lhs1 = eta * (obj.value(x1) - v.fstar) + 0.5 * (v.xstar - x1).norm_squared() - 0.5 * (v.xstar - x0).norm_squared();
    let identity = (obj.gradient(x0) + &delta / eta).norm();
    push(out, v.t, "E1", ResidualKind::Term, e1);
    push(out, v.t, "E2", ResidualKind::Term, e2);
    push(out, v.t, "E1-bound", ResidualKind::Inequality, lhs1 - e1);
    push(out, v.t, "E2-bound", ResidualKind::Inequality, obj.value(x1) - obj.value(x0) - e2);
    push(out, v.t, "gd-identity", ResidualKind::Equality, identity);
    push(out, v.t, "E-sum", ResidualKind::Inequality, e1 + v.prefix * e2);
}

/// `(F1, F2, ‖g‖², ⟨g, z_t − y_t⟩)` at step `t`.
fn f_terms(v: &StepView, problem: &Problem) -> (f64, f64, f64, f64) {
    let g = problem.smooth_part().gradient(&v.s0.y);
    let g2 = g.norm_squared();
    let inner = g.dot(&(&v.s0.z - &v.s0.y));
    let eta = v.eta_next;
    let f1 = (eta * eta / 2.0 - eta / (2.0 * v.l)) * g2 + v.l * v.eta_t * eta * inner;
    let f2 = -g2 / (2.0 * v.l) - inner;
    (f1, f2, g2, inner)
}

fn family_f(v: &StepView, problem: &Problem, out: &mut Vec<Residual>) {
    let f = |x: &Vector| problem.value(x);
    let (f1, f2, _, _) = f_terms(v, problem);
    let lhs1 = v.eta_next * (f(&v.s1.z) - v.fstar) + 0.5 * (v.xstar - &v.s1.x).norm_squared() - 0.5 * (v.xstar - &v.s0.x).norm_squared();
    push(out, v.t, "F1", ResidualKind::Term, f1);
    push(out, v.t, "F2", ResidualKind::Term, f2);
    push(out, v.t, "F1-bound", ResidualKind::Inequality, lhs1 - f1);
    push(out, v.t, "F2-bound", ResidualKind::Inequality, f(&v.s1.z) - f(&v.s0.z) - f2);
    push(out, v.t, "F-sum", ResidualKind::Inequality, f1 + v.prefix * f2);
}

fn family_cond13(v: &StepView, problem: &Problem, sched: &Schedule, out: &mut Vec<Residual>) {
    let (f1, f2, g2, inner) = f_terms(v, problem);
    let sq_coef = (v.l * v.eta_next * v.eta_next - sched.prefix_sum(v.t + 1)) / (2.0 * v.l);
    let inner_coef = v.l * v.eta_t * v.eta_next - v.prefix;
    let lhs = sq_coef * g2 + inner_coef * inner;
    push(out, v.t, "sq-coef", ResidualKind::Inequality, sq_coef);
    push(out, v.t, "inner-coef", ResidualKind::Equality, inner_coef.abs());
    push(out, v.t, "lhs", ResidualKind::Inequality, lhs);
    push(out, v.t, "identity", ResidualKind::Equality, (f1 + v.prefix * f2 - lhs).abs());
}

/// `(G1, G2, g)` at step `t`.
fn g_terms(v: &StepView, problem: &Problem) -> (f64, f64, Vector) {
    let h = problem.mirror();
    let psi = problem.psi();
    let g = problem.smooth_part().gradient(&v.s0.y);
    let (s0, s1) = (v.s0, v.s1);
    let zy = h.norm_sq(&(&s1.z - &s0.y));
    let g1 = -0.5 * h.norm_sq(&(&s1.x - &s0.x))
        + v.eta_next * (v.l / 2.0 * zy + g.dot(&(&s1.z - &s1.x)) + psi.value(&s1.z) - psi.value(&s1.x));
    let g2 = v.l / 2.0 * zy + g.dot(&(&s1.z - &s0.z)) + psi.value(&s1.z) - psi.value(&s0.z);
    (g1, g2, g)
}

fn family_g(v: &StepView, problem: &Problem, out: &mut Vec<Residual>) -> Result<()> {
    let f = |x: &Vector| problem.value(x);
    let (g1, g2, _) = g_terms(v, problem);
    let lhs1 = v.eta_next * (f(&v.s1.z) - v.fstar) + problem.distance(v.xstar, &v.s1.x)? - problem.distance(v.xstar, &v.s0.x)?;
    push(out, v.t, "G1", ResidualKind::Term, g1);
    push(out, v.t, "G2", ResidualKind::Term, g2);
    push(out, v.t, "G1-bound", ResidualKind::Inequality, lhs1 - g1);
    push(out, v.t, "G2-bound", ResidualKind::Inequality, f(&v.s1.z) - f(&v.s0.z) - g2);
    push(out, v.t, "G-sum", ResidualKind::Inequality, g1 + v.prefix * g2);
    Ok(())
}

fn family_a_terms(v: &StepView, problem: &Problem, out: &mut Vec<Residual>) {
    let h = problem.mirror();
    let psi = problem.psi();
    let (s0, s1) = (v.s0, v.s1);
    let (g1, g2, g) = g_terms(v, problem);
    let le = v.l * v.eta_t;
    let a1 = 0.5 * (-(le + 1.0).powi(2) + v.l * v.eta_next + v.l * v.prefix) * h.norm_sq(&(&s1.z - &s0.y));
    let a2_coef = le * v.eta_next - v.prefix;
    let a2 = a2_coef * g.dot(&(&s0.z - &s1.z));
    let (pz1, px1, pz0) = (psi.value(&s1.z), psi.value(&s1.x), psi.value(&s0.z));
    let a3 = v.eta_next * (pz1 - px1) + v.prefix * (pz1 - pz0);
    let convexity = (1.0 + le) * pz1 - px1 - le * pz0;
    let sum = a1 + a2 + a3;
    let tri_i = ((&s1.z - &s1.x) - (&s0.z - &s1.z) * le).norm();
    let tri_ii = ((&s1.x - &s0.x) - (&s1.z - &s0.y) * (le + 1.0)).norm();
    push(out, v.t, "a1", ResidualKind::Term, a1);
    push(out, v.t, "a2", ResidualKind::Term, a2);
    push(out, v.t, "a3", ResidualKind::Term, a3);
    push(out, v.t, "a2-coef", ResidualKind::Equality, a2_coef.abs());
    push(out, v.t, "a-sum", ResidualKind::Inequality, sum);
    push(out, v.t, "a-identity", ResidualKind::Equality, (g1 + v.prefix * g2 - sum).abs());
    push(out, v.t, "psi-convexity", ResidualKind::Inequality, convexity);
    push(out, v.t, "a3-factored", ResidualKind::Equality, (a3 - v.eta_next * convexity).abs());
    push(out, v.t, "triangle-z", ResidualKind::Equality, tri_i);
    push(out, v.t, "triangle-x", ResidualKind::Equality, tri_ii);
}

fn family_h(v: &StepView, problem: &Problem, sched: &Schedule, out: &mut Vec<Residual>) {
    let f = |x: &Vector| problem.value(x);
    let (s0, s1, l) = (v.s0, v.s1, v.l);
    let g = problem.smooth_part().gradient(&s0.y);
    let tilde_next = v.eta_t + 1.0 / l;
    let prefix_tilde = momentum_weight(sched, l, v.t);
    let zy = (&s1.z - &s0.y).norm_squared();
    let le1 = l * v.eta_t + 1.0;
    let h1 = 0.5 * (-le1 * le1 + l * tilde_next) * zy + tilde_next * g.dot(&(&s1.z - &s1.x));
    let h2 = l / 2.0 * zy + g.dot(&(&s1.z - &s0.z));
    let lhs1 = tilde_next * (f(&s1.z) - v.fstar) + 0.5 * (v.xstar - &s1.x).norm_squared() - 0.5 * (v.xstar - &s0.x).norm_squared();
    let inner_coef = l * v.eta_t * tilde_next - prefix_tilde;
    let sq_coef = 0.5 * (-le1 * le1 + l * momentum_weight(sched, l, v.t + 1));
    push(out, v.t, "H1", ResidualKind::Term, h1);
    push(out, v.t, "H2", ResidualKind::Term, h2);
    push(out, v.t, "H1-bound", ResidualKind::Inequality, lhs1 - h1);
    push(out, v.t, "H2-bound", ResidualKind::Inequality, f(&s1.z) - f(&s0.z) - h2);
    push(out, v.t, "H-sum", ResidualKind::Inequality, h1 + prefix_tilde * h2);
    push(out, v.t, "H-inner-coef", ResidualKind::Equality, inner_coef.abs());
    push(out, v.t, "H-sq-coef", ResidualKind::Equality, sq_coef.abs());
}

/// Residuals of `family` for the step from `t` to `t + 1`.
pub fn certificate_residuals(
    family: Family,
    problem: &Problem,
    traj: &Trajectory,
    sched: &Schedule,
    opt: &Optimum,
    t: usize,
) -> Result<Vec<Residual>> {
    if !family.matches(traj.method) {
        return Err(Error::Incompatible(format!(
            "certificate family {family} does not apply to {} trajectories",
            traj.method
        )));
    }
    check_index(traj, t + 1)?;
    let view = StepView {
        t,
        s0: traj.state(t),
        s1: traj.state(t + 1),
        l: problem.smoothness(),
        eta_t: sched.eta(t),
        eta_next: sched.eta(t + 1),
        prefix: sched.prefix_sum(t),
        xstar: &opt.point,
        fstar: problem.value(&opt.point),
    };
    let mut out = Vec::new();
    match family {
        Family::B => family_b(&view, problem, &mut out),
        Family::E => family_e(&view, problem, &mut out),
        Family::F => family_f(&view, problem, &mut out),
        Family::Cond13 => family_cond13(&view, problem, sched, &mut out),
        Family::G => family_g(&view, problem, &mut out)?,
        Family::ATerms => family_a_terms(&view, problem, &mut out),
        Family::H => family_h(&view, problem, sched, &mut out),
    }
    Ok(out)
}

/// Evaluate `family` at every step of `traj`.
pub fn certify(family: Family, problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, tolerance: f64) -> Result<CertificateReport> {
    let mut residuals = Vec::new();
    for t in 0..traj.steps() {
        residuals.extend(certificate_residuals(family, problem, traj, sched, opt, t)?);
    }
    let scale = tolerance_scale(problem, traj, opt)?;
    Ok(CertificateReport::new(family, residuals, tolerance, scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    pub kind: PhiKind,
    pub values: Vec<LyapunovValue>,
    /// `Φ_{t+1} − Φ_t` for each step.
    pub increments: Vec<f64>,
    /// Steps with `Φ_{t+1} − Φ_t > tolerance·(1 + Φ₀)`.
    pub violations: Vec<usize>,
    pub tolerance: f64,
}

impl MonotoneReport {
    pub fn certified(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn phi0(&self) -> f64 {
        self.values[0].phi
    }
}

/// Check that `Φ_t` never increases along `traj`.
pub fn certify_monotone(kind: PhiKind, problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum, tolerance: f64) -> Result<MonotoneReport> {
    if !kind.compatible(traj.method) {
        return Err(Error::Incompatible(format!("potential {} does not apply to {}", kind.name(), traj.method)));
    }
    let values = (0..traj.len())
        .map(|t| phi_with(kind, problem, traj, sched, opt, t))
        .collect::<Result<Vec<_>>>()?;
    let limit = tolerance * (1.0 + values[0].phi);
    let increments: Vec<f64> = values.windows(2).map(|w| w[1].phi - w[0].phi).collect();
    let violations = increments
        .iter()
        .enumerate()
        .filter(|(_, r)| !(**r <= limit))
        .map(|(t, _)| t)
        .collect();
    Ok(MonotoneReport {
        kind,
        values,
        increments,
        violations,
        tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateKind {
    /// `f(x_t) − f* ≤ Φ₀/Σηᵢ`.
    Ppm,
    /// `f(x_t) − f* ≤ L‖x₀ − x*‖²/(2t)`.
    Gd,
    /// `f(z_t) − f* ≤ 2L‖x₀ − x*‖²/(t(t+1))`.
    Agm,
    /// `f(z_t) − f* ≤ C(1 + μη)^{−t}` with `C` fitted at `t = 1`.
    StronglyConvex,
    /// `f^Ψ(z_t) − f^Ψ(x*) ≤ 4L·D_h(x*, x₀)/(t(t+1))`.
    Composite,
    /// `f(z_t) − f* ≤ Φ₀/Ση̃ᵢ`.
    Momentum,
}

impl RateKind {
    pub fn name(&self) -> &'static str {
        match self {
            RateKind::Ppm => "ppm",
            RateKind::Gd => "gd",
            RateKind::Agm => "agm",
            RateKind::StronglyConvex => "sc",
            RateKind::Composite => "composite",
            RateKind::Momentum => "momentum",
        }
    }

    /// The envelope belonging to `method`; the conservative step has none.
    pub fn for_method(method: Method) -> Option<RateKind> {
        match method {
            Method::Ppm => Some(RateKind::Ppm),
            Method::Gd => Some(RateKind::Gd),
            Method::Agm | Method::AgmAlt => Some(RateKind::Agm),
            Method::ScAgm => Some(RateKind::StronglyConvex),
            Method::SimTri | Method::CompSimTri => Some(RateKind::Composite),
            Method::Momentum => Some(RateKind::Momentum),
            Method::Cgd => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub t: usize,
    pub gap: f64,
    pub bound: f64,
}

impl RateRow {
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.gap / self.bound
        } else if self.gap <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `gap ≤ bound + rel_tol·max(bound, 1)`.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.gap <= self.bound + rel_tol * self.bound.abs().max(1.0)
    }
}

/// Measured gap against the theoretical bound for `t = 1..=T`.
pub fn rate_envelope(kind: RateKind, problem: &Problem, traj: &Trajectory, sched: &Schedule, opt: &Optimum) -> Result<Vec<RateRow>> {
    let fstar = problem.value(&opt.point);
    let x0 = &traj.state(0).x;
    let l = problem.smoothness();
    let d0 = problem.distance(&opt.point, x0)?;
    let gap_at = |t: usize| {
        let s = traj.state(t);
        let at = if matches!(kind, RateKind::Ppm | RateKind::Gd) { &s.x } else { &s.z };
        problem.value(at) - fstar
    };
    let mut rows = Vec::with_capacity(traj.steps());
    let sc_constant = match kind {
        RateKind::StronglyConvex if traj.steps() >= 1 => {
            let mu = problem.smooth_part().strong_convexity();
            Some((gap_at(1) * (1.0 + mu * sched.eta(1)), 1.0 + mu * sched.eta(1)))
        }
        _ => None,
    };
    for t in 1..traj.len() {
        let tf = t as f64;
        let bound = match kind {
            RateKind::Ppm => d0 / sched.prefix_sum(t),
            RateKind::Gd => l * 2.0 * d0 / (2.0 * tf),
            RateKind::Agm => 2.0 * l * 2.0 * d0 / (tf * (tf + 1.0)),
            RateKind::StronglyConvex => {
                let (c, q) = sc_constant.expect("constant fitted");
                c * q.powf(-tf)
            }
            RateKind::Composite => 4.0 * l * d0 / (tf * (tf + 1.0)),
            RateKind::Momentum => d0 / momentum_weight(sched, l, t),
        };
        rows.push(RateRow { t, gap: gap_at(t), bound });
    }
    Ok(rows)
}

/// High-accuracy minimizer from a long composite similar-triangles run.
pub fn reference_optimum(problem: &Problem, x0: &Vector) -> Result<Optimum> {
    reference_optimum_with(problem, x0, REFERENCE_STEPS)
}

pub fn reference_optimum_with(problem: &Problem, x0: &Vector, steps: usize) -> Result<Optimum> {
    let (comp, h) = problem.as_composite()?;
    let sched = agm_schedule(comp.smoothness())?;
    let mut state = IterateState::initial(x0.clone());
    for _ in 0..steps {
        state = composite_similar_triangles_step(&comp, h, &state, &sched)?.next;
    }
    let value = comp.value(&state.z);
    Ok(Optimum { point: state.z, value })
}

/// The known optimum, or a reference solve when none is attached.
pub fn resolve_optimum(problem: &Problem, x0: &Vector) -> Result<Optimum> {
    match problem.optimum() {
        Some(opt) => Ok(opt.clone()),
        None => reference_optimum(problem, x0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{make_lasso_composite, random_psd_quadratic, Matrix, Objective, QuadraticObjective};
    use crate::optimizers::run_method;
    use crate::prox::MirrorMap;
    use crate::schedules::{constant_schedule, linear_schedule, momentum_schedule, power_schedule};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn fig1() -> (Problem, Optimum) {
        let q = QuadraticObjective::figure1();
        let opt = q.optimum().unwrap().clone();
        (Problem::smooth("figure1", Arc::new(q)), opt)
    }

    fn random_problem(seed: u64, dim: usize, mu: f64) -> (Problem, Optimum, Vector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_psd_quadratic(&mut rng, dim, mu, 3.0).unwrap();
        let opt = q.optimum().cloned().unwrap_or_else(|| Optimum {
            point: Vector::zeros(dim),
            value: q.value(&Vector::zeros(dim)),
        });
        let x0 = &opt.point + Vector::from_element(dim, 2.0);
        (Problem::smooth("random", Arc::new(q)), opt, x0)
    }

    #[test]
    fn phi_ppm_examples() {
        let (p, opt) = fig1();
        let sched = constant_schedule(1.0 / 3.0).unwrap();
        let traj = run_method(Method::Ppm, &p, &sched, &v(&[10.0, 10.0]), 3).unwrap();
        let phi0 = phi_ppm(&p, &traj, &sched, &opt, 0).unwrap();
        assert_abs_diff_eq!(phi0.phi, 100.0, epsilon = 1e-12);
        let phi1 = phi_ppm(&p, &traj, &sched, &opt, 1).unwrap();
        assert_abs_diff_eq!(phi1.gap_term, 44.7890625 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi1.distance_term, 0.5 * (87.890625 + 36.0), epsilon = 1e-12);
        assert_abs_diff_eq!(phi1.phi, 76.875, epsilon = 1e-12);
        assert_eq!(phi1.phi, phi1.gap_term + phi1.distance_term);

        let at_opt = run_method(Method::Ppm, &p, &sched, &v(&[0.0, 0.0]), 2).unwrap();
        assert_eq!(phi_ppm(&p, &at_opt, &sched, &opt, 2).unwrap().phi, 0.0);
        assert!(phi_ppm(&p, &traj, &sched, &opt, 9).is_err());
    }

    #[test]
    fn phi_agm_examples() {
        let (p, opt) = fig1();
        let sched = agm_schedule(2.0).unwrap();
        let traj = run_method(Method::Agm, &p, &sched, &v(&[10.0, 10.0]), 2).unwrap();
        assert_abs_diff_eq!(phi_agm(&p, &traj, &sched, &opt, 0).unwrap().phi, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi_agm(&p, &traj, &sched, &opt, 1).unwrap().phi, 59.65, epsilon = 1e-12);
    }

    #[test]
    fn phi_composite_reduces_to_agm() {
        let (p, opt) = fig1();
        let sched = agm_schedule(2.0).unwrap();
        let traj = run_method(Method::SimTri, &p, &sched, &v(&[10.0, 10.0]), 20).unwrap();
        for t in 0..=20 {
            let a = phi_agm(&p, &traj, &sched, &opt, t).unwrap();
            let c = phi_composite(&p, &traj, &sched, &opt, t).unwrap();
            assert_eq!(a.phi, c.phi);
        }
    }

    #[test]
    fn momentum_weight_matches_schedule() {
        let sched = momentum_schedule(2.0, 300).unwrap();
        for t in 0..300 {
            let w = momentum_weight(&sched, 2.0, t);
            let s = sched.prefix_sum_tilde(t);
            assert!((w - s).abs() <= 1e-12 * s.max(1.0), "{t}: {w} vs {s}");
        }
    }

    #[test]
    fn monotone_pairings_hold() {
        for seed in 0..4 {
            let (p, opt, x0) = random_problem(seed, 6, 0.0);
            let l = p.smoothness();
            let cases = [
                (Method::Ppm, PhiKind::Ppm, power_schedule(0.7, 1.3).unwrap()),
                (Method::Gd, PhiKind::Ppm, constant_schedule(1.0 / l).unwrap()),
                (Method::Agm, PhiKind::Agm, agm_schedule(l).unwrap()),
                (Method::SimTri, PhiKind::Composite, agm_schedule(l).unwrap()),
                (Method::Momentum, PhiKind::Momentum, momentum_schedule(l, 300).unwrap()),
            ];
            for (method, kind, sched) in cases {
                let traj = run_method(method, &p, &sched, &x0, 300).unwrap();
                let report = certify_monotone(kind, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
                assert!(report.certified(), "{method} {:?}", &report.violations[..report.violations.len().min(5)]);
            }
        }
    }

    #[test]
    fn wrong_schedule_is_caught() {
        let (p, opt, x0) = random_problem(3, 5, 0.0);
        let l = p.smoothness();
        let sched = power_schedule(1.0 / l, 2.0).unwrap();
        let traj = run_method(Method::Agm, &p, &sched, &x0, 40).unwrap();
        let report = certify_monotone(PhiKind::Agm, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(!report.certified());
        let cond = certify(Family::Cond13, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(!cond.passed());
    }

    #[test]
    fn constant_trajectory_has_zero_increments() {
        let (p, opt) = fig1();
        let sched = agm_schedule(2.0).unwrap();
        let traj = run_method(Method::Agm, &p, &sched, &v(&[0.0, 0.0]), 10).unwrap();
        let report = certify_monotone(PhiKind::Agm, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(report.increments.iter().all(|&r| r == 0.0));
        assert!(certify_monotone(PhiKind::Momentum, &p, &traj, &sched, &opt, 1e-9).is_err());
    }

    #[test]
    fn e_family_examples() {
        let (p, opt) = fig1();
        let sched = constant_schedule(0.5).unwrap();
        let traj = run_method(Method::Gd, &p, &sched, &v(&[10.0, 10.0]), 20).unwrap();
        let first = certificate_residuals(Family::E, &p, &traj, &sched, &opt, 0).unwrap();
        let get = |name: &str| first.iter().find(|r| r.name == name).unwrap().value;
        assert_abs_diff_eq!(get("E2"), -101.0, epsilon = 1e-12);
        assert_eq!(get("E1"), 0.0);
        let report = certify(Family::E, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(report.passed());
        assert!(report.series("E1-bound").iter().all(|&r| r <= 1e-12));

        let big = constant_schedule(1.5).unwrap();
        let traj = run_method(Method::Gd, &p, &big, &v(&[10.0, 10.0]), 20).unwrap();
        let report = certify(Family::E, &p, &traj, &big, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(report.series("E1").iter().all(|&e| e > 0.0));
        assert!(report.series("E2").iter().all(|&e| e > 0.0));
        assert!(!report.passed());
    }

    #[test]
    fn f_and_cond13_examples() {
        let (p, opt, x0) = random_problem(9, 8, 0.0);
        let l = p.smoothness();
        let sched = agm_schedule(l).unwrap();
        let traj = run_method(Method::Agm, &p, &sched, &x0, 1000).unwrap();
        for family in [Family::F, Family::Cond13] {
            let report = certify(family, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
            assert!(report.passed(), "{family}: {:?}", report.violations().next());
        }
        let cond = certify(Family::Cond13, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(cond.series("sq-coef").iter().all(|&c| c < 0.0));
        for (t, c) in cond.series("sq-coef").into_iter().enumerate() {
            // difference of two O(t²) terms
            let expected = -((t + 1) as f64) / (8.0 * l * l);
            assert!((c - expected).abs() <= 1e-10 * expected.abs(), "{t}: {c} vs {expected}");
        }
        assert!(cond.series("inner-coef").iter().all(|&c| c <= 1e-12 * 1000.0));
    }

    #[test]
    fn g_and_a_terms_on_lasso() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, -0.3, 0.4]);
        let comp = make_lasso_composite(&a, &v(&[1.0, -2.0, 0.5]), 0.3).unwrap();
        let p = Problem::composite("lasso", comp, MirrorMap::SquaredEuclidean);
        let x0 = v(&[2.0, 2.0]);
        let opt = reference_optimum_with(&p, &x0, 20_000).unwrap();
        let sched = agm_schedule(p.smoothness()).unwrap();
        let traj = run_method(Method::CompSimTri, &p, &sched, &x0, 300).unwrap();
        for family in [Family::G, Family::ATerms] {
            let report = certify(family, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
            assert!(report.passed(), "{family}: {:?}", report.violations().next());
        }
    }

    #[test]
    fn h_family_on_momentum() {
        let (p, opt, x0) = random_problem(17, 7, 0.0);
        let l = p.smoothness();
        let sched = momentum_schedule(l, 500).unwrap();
        let traj = run_method(Method::Momentum, &p, &sched, &x0, 500).unwrap();
        let report = certify(Family::H, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(report.passed(), "{:?}", report.violations().next());
    }

    #[test]
    fn b_family_on_ppm() {
        let (p, opt, x0) = random_problem(5, 6, 0.0);
        let sched = linear_schedule(0.4).unwrap();
        let traj = run_method(Method::Ppm, &p, &sched, &x0, 200).unwrap();
        let report = certify(Family::B, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        assert!(report.passed());
        assert!(certify(Family::F, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).is_err());
    }

    #[test]
    fn rate_examples() {
        let (p, opt) = fig1();
        let agm = agm_schedule(2.0).unwrap();
        let traj = run_method(Method::Agm, &p, &agm, &v(&[10.0, 10.0]), 100).unwrap();
        let rows = rate_envelope(RateKind::Agm, &p, &traj, &agm, &opt).unwrap();
        let last = rows.last().unwrap();
        assert_abs_diff_eq!(last.bound, 800.0 / 10100.0, epsilon = 1e-12);
        assert!(rows.iter().all(|r| r.holds(1e-9)));

        let ppm = linear_schedule(1.0 / 3.0).unwrap();
        let traj = run_method(Method::Ppm, &p, &ppm, &v(&[10.0, 10.0]), 10).unwrap();
        let rows = rate_envelope(RateKind::Ppm, &p, &traj, &ppm, &opt).unwrap();
        assert_abs_diff_eq!(rows[9].bound, 100.0 / (55.0 / 3.0), epsilon = 1e-12);
        assert!(rows.iter().all(|r| r.holds(1e-9)));

        let gd = constant_schedule(0.5).unwrap();
        let traj = run_method(Method::Gd, &p, &gd, &v(&[10.0, 10.0]), 10).unwrap();
        let rows = rate_envelope(RateKind::Gd, &p, &traj, &gd, &opt).unwrap();
        assert_abs_diff_eq!(rows[9].bound, 20.0, epsilon = 1e-12);
        assert!(rows[9].ratio() <= 1.0);
    }

    #[test]
    fn csv_layout() {
        let (p, opt) = fig1();
        let sched = constant_schedule(0.5).unwrap();
        let traj = run_method(Method::Ppm, &p, &sched, &v(&[10.0, 10.0]), 2).unwrap();
        let report = certify(Family::B, &p, &traj, &sched, &opt, DEFAULT_CERT_TOL).unwrap();
        let csv = certificates_csv(&[report]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "family,t,name,residual");
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("B,0,B1,"));
    }

    #[test]
    fn reference_solve_matches_closed_form() {
        let comp = make_lasso_composite(&Matrix::identity(2, 2), &v(&[3.0, 0.2]), 1.0).unwrap();
        let known = comp.optimum().unwrap().clone();
        let p = Problem::composite("lasso", comp, MirrorMap::SquaredEuclidean);
        let opt = reference_optimum_with(&p, &v(&[0.0, 0.0]), 2_000).unwrap();
        assert!((opt.point - known.point).amax() <= 1e-10);
    }
}
