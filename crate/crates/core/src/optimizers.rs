//! Iteration schemes viewed as approximations of the proximal point method,
//! and a runner that records full trajectories.
//!
//! Every step is a pure function of an [`IterateState`] and a [`Schedule`].
//! A state at index `t` carries `x_t`, `z_t` and the gradient point `y_t`
//! obtained by interpolating them with the method's own weights; the step
//! from `t` evaluates `∇f(y_t)` exactly once and returns it alongside the
//! next state.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix};
use thiserror::Error;

use crate::error::{invalid, Error, Result};
use crate::objective::{check_dim, CompositeObjective, Domain, Objective, Optimum, Regularizer, Vector};
use crate::prox::{approx_prox, bregman_divergence, bregman_prox_step_with_gradient, exact_prox_quadratic, MirrorMap, DEFAULT_PROX_TOL};
use crate::schedules::Schedule;

/// Iterates whose norm exceeds this are treated as divergence.
pub const OVERFLOW_THRESHOLD: f64 = 1e15;

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub t: usize,
    /// The "reckless" iterate.
    pub x: Vector,
    /// Gradient-evaluation point.
    pub y: Vector,
    /// The "conservative" iterate.
    pub z: Vector,
    /// Strongly convex auxiliary point `w_t`, when the method has one.
    pub w: Option<Vector>,
    /// `∇f(y_t)`, filled in once the step out of this state has been taken.
    pub cached_grad_y: Option<Vector>,
}

impl IterateState {
    /// `x₀ = y₀ = z₀`.
    pub fn initial(x0: Vector) -> Self {
        IterateState {
            t: 0,
            x: x0.clone(),
            y: x0.clone(),
            z: x0,
            w: None,
            cached_grad_y: None,
        }
    }

    fn collapsed(t: usize, x: Vector) -> Self {
        let mut s = IterateState::initial(x);
        s.t = t;
        s
    }

    fn max_norm(&self) -> f64 {
        let norms = [self.x.norm(), self.y.norm(), self.z.norm()];
        if norms.iter().any(|n| !n.is_finite()) {
            f64::INFINITY
        } else {
            norms.into_iter().fold(0.0, f64::max)
        }
    }
}

/// Result of one step out of state `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: IterateState,
    /// `∇f(y_t)`; absent for the proximal point step.
    pub grad_y: Option<Vector>,
    /// `w_t` for the strongly convex method.
    pub w: Option<Vector>,
}

/// `τ·a + (1−τ)·b` with `τ = (1/L)/(1/L + η)`.
///
/// This places the result on `[a, b]` with `‖r − a‖ : ‖r − b‖ = η : 1/L`.
pub fn interpolate(a: &Vector, b: &Vector, l: f64, eta: f64) -> Vector {
    let tau = 1.0 / (1.0 + l * eta);
    a * tau + b * (1.0 - tau)
}

/// Proximal point step: exact for quadratics, inner gradient descent otherwise.
pub fn ppm_step(obj: &dyn Objective, state: &IterateState, eta_next: f64) -> Result<Step> {
    let x = match obj.as_quadratic() {
        Some(q) => exact_prox_quadratic(q, &state.x, eta_next)?,
        None => approx_prox(obj, &state.x, eta_next, DEFAULT_PROX_TOL)?.point,
    };
    Ok(Step {
        next: IterateState::collapsed(state.t + 1, x),
        grad_y: None,
        w: None,
    })
}

fn check_step(eta: f64) -> Result<()> {
    if eta > 0.0 {
        Ok(())
    } else {
        Err(invalid("eta", format!("must be positive, got {eta}")))
    }
}

/// Linear lower model: `x_{t+1} = x_t − η_{t+1}∇f(x_t)`.
pub fn gd_step(obj: &dyn Objective, state: &IterateState, eta_next: f64) -> Result<Step> {
    check_step(eta_next)?;
    let g = obj.gradient(&state.x);
    let x = &state.x - &g * eta_next;
    Ok(Step {
        next: IterateState::collapsed(state.t + 1, x),
        grad_y: Some(g),
        w: None,
    })
}

/// Quadratic upper model: `x_{t+1} = x_t − ∇f(x_t)/(L + 1/η_{t+1})`.
pub fn conservative_gd_step(obj: &dyn Objective, state: &IterateState, eta_next: f64) -> Result<Step> {
    check_step(eta_next)?;
    let step = eta_next / (obj.smoothness() * eta_next + 1.0);
    let g = obj.gradient(&state.x);
    let x = &state.x - &g * step;
    Ok(Step {
        next: IterateState::collapsed(state.t + 1, x),
        grad_y: Some(g),
        w: None,
    })
}

/// Nesterov's method in the three-sequence form
/// `y_t = interp(x_t, z_t; η_t)`, `x_{t+1} = x_t − η_{t+1}∇f(y_t)`,
/// `z_{t+1} = y_t − ∇f(y_t)/L`.
pub fn agm_step(obj: &dyn Objective, state: &IterateState, sched: &Schedule) -> Result<Step> {
    let (t, l) = (state.t, obj.smoothness());
    let (eta_t, eta_next) = (sched.eta(t), sched.eta(t + 1));
    let y = interpolate(&state.x, &state.z, l, eta_t);
    let g = obj.gradient(&y);
    let x = &state.x - &g * eta_next;
    let z = &y - &g / l;
    let y_next = interpolate(&x, &z, l, eta_next);
    Ok(Step {
        next: IterateState {
            t: t + 1,
            x,
            y: y_next,
            z,
            w: None,
            cached_grad_y: None,
        },
        grad_y: Some(g),
        w: None,
    })
}

fn solve_model(h: DMatrix<f64>, c: Vector) -> Result<Vector> {
    let chol = Cholesky::new(h).ok_or_else(|| Error::LinearSolve("model Hessian not positive definite".into()))?;
    Ok(chol.solve(&c))
}

/// The alternation of the two model subproblems, solved literally:
///
/// `x_{t+1} = argmin ⟨∇f(y_t), u⟩ + (1/2η_{t+1})‖u − x_t‖²` and
/// `y_{t+1} = argmin ⟨∇f(y_t), u⟩ + (L/2)‖u − y_t‖² + (1/2η_{t+1})‖u − x_{t+1}‖²`.
///
/// Each argmin is assembled as `½uᵀHu − cᵀu` and solved by Cholesky, so this
/// path shares no algebra with [`agm_step`]. Here `y_t` is read from the
/// state (it is a genuine iterate of the scheme), and `z_{t+1} = y_t − ∇f(y_t)/L`
/// is recorded only for comparison.
pub fn alternating_approx_step(obj: &dyn Objective, state: &IterateState, sched: &Schedule) -> Result<Step> {
    let (t, l, n) = (state.t, obj.smoothness(), state.x.len());
    let eta_next = sched.eta(t + 1);
    check_step(eta_next)?;
    let g = obj.gradient(&state.y);
    let id = DMatrix::<f64>::identity(n, n);

    let x = solve_model(&id / eta_next, &state.x / eta_next - &g)?;
    let y_next = solve_model(&id * (l + 1.0 / eta_next), &state.y * l - &g + &x / eta_next)?;
    let z = &state.y - &g / l;
    Ok(Step {
        next: IterateState {
            t: t + 1,
            x,
            y: y_next,
            z,
            w: None,
            cached_grad_y: None,
        },
        grad_y: Some(g),
        w: None,
    })
}

/// Strongly convex variant with two step sizes:
/// `y_t = interp(x_t, z_t; η̃_t)`, `w_t = ((1/μ)x_t + η_{t+1}y_t)/((1/μ) + η_{t+1})`,
/// `x_{t+1} = w_t − ((1/μ)η_{t+1}/((1/μ) + η_{t+1}))∇f(y_t)`, `z_{t+1} = y_t − ∇f(y_t)/L`.
pub fn sc_agm_step(obj: &dyn Objective, state: &IterateState, sched: &Schedule, mu: f64) -> Result<Step> {
    if !(mu > 0.0) {
        return Err(invalid("mu", format!("strongly convex step needs μ > 0, got {mu}")));
    }
    let (t, l) = (state.t, obj.smoothness());
    let (tilde_t, eta_next, tilde_next) = (sched.eta_tilde(t), sched.eta(t + 1), sched.eta_tilde(t + 1));
    let y = interpolate(&state.x, &state.z, l, tilde_t);
    let g = obj.gradient(&y);
    // (1/μ)-weighted forms rewritten with μ multiplied through
    let ratio = mu * eta_next / (1.0 + mu * eta_next);
    let w = &state.x + (&y - &state.x) * ratio;
    let x = &w - &g * (eta_next / (1.0 + mu * eta_next));
    let z = &y - &g / l;
    let y_next = interpolate(&x, &z, l, tilde_next);
    Ok(Step {
        next: IterateState {
            t: t + 1,
            x,
            y: y_next,
            z,
            w: None,
            cached_grad_y: None,
        },
        grad_y: Some(g),
        w: Some(w),
    })
}

/// Similar-triangles form: the `z` update reuses the `y` interpolation
/// weights, applied to `x_{t+1}` instead of `x_t`.
pub fn similar_triangles_step(obj: &dyn Objective, state: &IterateState, sched: &Schedule) -> Result<Step> {
    let (t, l) = (state.t, obj.smoothness());
    let (eta_t, eta_next) = (sched.eta(t), sched.eta(t + 1));
    let y = interpolate(&state.x, &state.z, l, eta_t);
    let g = obj.gradient(&y);
    let x = &state.x - &g * eta_next;
    let z = interpolate(&x, &state.z, l, eta_t);
    let y_next = interpolate(&x, &z, l, eta_next);
    Ok(Step {
        next: IterateState {
            t: t + 1,
            x,
            y: y_next,
            z,
            w: None,
            cached_grad_y: None,
        },
        grad_y: Some(g),
        w: None,
    })
}

/// Momentum form: `z_{t+1} = y_t − ∇f(y_t)/L`, `x_{t+1} = z_{t+1} + Lη_t(z_{t+1} − z_t)`.
pub fn momentum_step(obj: &dyn Objective, state: &IterateState, sched: &Schedule) -> Result<Step> {
    let (t, l) = (state.t, obj.smoothness());
    let (eta_t, eta_next) = (sched.eta(t), sched.eta(t + 1));
    let y = interpolate(&state.x, &state.z, l, eta_t);
    let g = obj.gradient(&y);
    let z = &y - &g / l;
    let x = &z + (&z - &state.z) * (l * eta_t);
    let y_next = interpolate(&x, &z, l, eta_next);
    Ok(Step {
        next: IterateState {
            t: t + 1,
            x,
            y: y_next,
            z,
            w: None,
            cached_grad_y: None,
        },
        grad_y: Some(g),
        w: None,
    })
}

/// The same method without `x`: returns `(y_{t+1}, z_{t+1})` with
/// `y_{t+1} = z_{t+1} + (Lη_t/(Lη_{t+1} + 1))(z_{t+1} − z_t)`.
pub fn momentum_two_sequence_step(obj: &dyn Objective, t: usize, y: &Vector, z: &Vector, sched: &Schedule) -> (Vector, Vector) {
    let l = obj.smoothness();
    let (eta_t, eta_next) = (sched.eta(t), sched.eta(t + 1));
    let z_next = y - obj.gradient(y) / l;
    let beta = l * eta_t / (l * eta_next + 1.0);
    let y_next = &z_next + (&z_next - z) * beta;
    (y_next, z_next)
}

/// Similar triangles for `f + Ψ` with a Bregman proximal `x` update.
pub fn composite_similar_triangles_step(
    comp: &CompositeObjective,
    h: MirrorMap,
    state: &IterateState,
    sched: &Schedule,
) -> Result<Step> {
    let (t, l) = (state.t, comp.smoothness());
    let (eta_t, eta_next) = (sched.eta(t), sched.eta(t + 1));
    let y = interpolate(&state.x, &state.z, l, eta_t);
    let g = comp.smooth().gradient(&y);
    let x = bregman_prox_step_with_gradient(comp, h, &g, &state.x, eta_next)?;
    let z = interpolate(&x, &state.z, l, eta_t);
    let y_next = interpolate(&x, &z, l, eta_next);
    Ok(Step {
        next: IterateState {
            t: t + 1,
            x,
            y: y_next,
            z,
            w: None,
            cached_grad_y: None,
        },
        grad_y: Some(g),
        w: None,
    })
}

/// Method identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ppm,
    Gd,
    Cgd,
    Agm,
    AgmAlt,
    ScAgm,
    SimTri,
    Momentum,
    CompSimTri,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ppm,
        Method::Gd,
        Method::Cgd,
        Method::Agm,
        Method::AgmAlt,
        Method::ScAgm,
        Method::SimTri,
        Method::Momentum,
        Method::CompSimTri,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Ppm => "ppm",
            Method::Gd => "gd",
            Method::Cgd => "cgd",
            Method::Agm => "agm",
            Method::AgmAlt => "agm-alt",
            Method::ScAgm => "sc-agm",
            Method::SimTri => "sim-tri",
            Method::Momentum => "momentum",
            Method::CompSimTri => "comp-sim-tri",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| invalid("method", format!("unknown method `{s}`")))
    }
}

/// What a method runs on: a smooth objective, or a composite one with the
/// mirror map that defines its geometry.
#[derive(Debug, Clone)]
pub enum ProblemKind {
    Smooth(Arc<dyn Objective>),
    Composite { objective: CompositeObjective, mirror: MirrorMap },
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub id: String,
    pub kind: ProblemKind,
}

impl Problem {
    pub fn smooth(id: impl Into<String>, obj: Arc<dyn Objective>) -> Self {
        Problem {
            id: id.into(),
            kind: ProblemKind::Smooth(obj),
        }
    }

    pub fn composite(id: impl Into<String>, objective: CompositeObjective, mirror: MirrorMap) -> Self {
        Problem {
            id: id.into(),
            kind: ProblemKind::Composite { objective, mirror },
        }
    }

    pub fn dim(&self) -> usize {
        self.smooth_part().dim()
    }

    pub fn smooth_part(&self) -> &dyn Objective {
        match &self.kind {
            ProblemKind::Smooth(obj) => obj.as_ref(),
            ProblemKind::Composite { objective, .. } => objective.smooth().as_ref(),
        }
    }

    pub fn smoothness(&self) -> f64 {
        match &self.kind {
            ProblemKind::Smooth(obj) => obj.smoothness(),
            ProblemKind::Composite { objective, .. } => objective.smoothness(),
        }
    }

    pub fn mirror(&self) -> MirrorMap {
        match &self.kind {
            ProblemKind::Smooth(_) => MirrorMap::SquaredEuclidean,
            ProblemKind::Composite { mirror, .. } => *mirror,
        }
    }

    /// `Ψ`, zero for smooth problems.
    pub fn psi(&self) -> Regularizer {
        match &self.kind {
            ProblemKind::Smooth(_) => Regularizer::Zero,
            ProblemKind::Composite { objective, .. } => objective.psi(),
        }
    }

    /// `f(x)`, or `f(x) + Ψ(x)` for composite problems.
    pub fn value(&self, x: &Vector) -> f64 {
        match &self.kind {
            ProblemKind::Smooth(obj) => obj.value(x),
            ProblemKind::Composite { objective, .. } => objective.value(x),
        }
    }

    /// `½‖u − v‖²`, or `D_h(u, v)` for composite problems.
    pub fn distance(&self, u: &Vector, v: &Vector) -> Result<f64> {
        bregman_divergence(self.mirror(), u, v)
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        match &self.kind {
            ProblemKind::Smooth(obj) => obj.optimum(),
            ProblemKind::Composite { objective, .. } => objective.optimum(),
        }
    }

    /// The composite view (a smooth problem is `f + 0` over all space).
    pub fn as_composite(&self) -> Result<(CompositeObjective, MirrorMap)> {
        match &self.kind {
            ProblemKind::Smooth(obj) => {
                let mut comp = CompositeObjective::new(obj.clone(), Regularizer::Zero, Domain::AllSpace)?;
                if let Some(opt) = obj.optimum() {
                    comp = comp.with_optimum(opt.clone())?;
                }
                Ok((comp, MirrorMap::SquaredEuclidean))
            }
            ProblemKind::Composite { objective, mirror } => Ok((objective.clone(), *mirror)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub state: IterateState,
    pub f_x: f64,
    pub f_z: f64,
    /// `‖∇f(y_t)‖` from the step out of this state.
    pub grad_norm: Option<f64>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub problem_id: String,
    pub method: Method,
    pub schedule_id: String,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn state(&self, t: usize) -> &IterateState {
        &self.records[t].state
    }

    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory has at least the initial record")
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Rejected(#[from] Error),
    #[error("{method} overflowed at step {step}: iterate norm above {OVERFLOW_THRESHOLD:e}")]
    Overflow {
        method: Method,
        step: usize,
        partial: Box<Trajectory>,
    },
    #[error("{method} failed at step {step}: {source}")]
    StepFailed {
        method: Method,
        step: usize,
        source: Error,
        partial: Box<Trajectory>,
    },
}

impl RunError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            RunError::Rejected(_) => None,
            RunError::Overflow { partial, .. } | RunError::StepFailed { partial, .. } => Some(partial),
        }
    }
}

fn take_step(method: Method, problem: &Problem, composite: Option<&(CompositeObjective, MirrorMap)>, state: &IterateState, sched: &Schedule) -> Result<Step> {
    let obj = problem.smooth_part();
    let eta_next = sched.eta(state.t + 1);
    match method {
        Method::Ppm => ppm_step(obj, state, eta_next),
        Method::Gd => gd_step(obj, state, eta_next),
        Method::Cgd => conservative_gd_step(obj, state, eta_next),
        Method::Agm => agm_step(obj, state, sched),
        Method::AgmAlt => alternating_approx_step(obj, state, sched),
        Method::ScAgm => sc_agm_step(obj, state, sched, obj.strong_convexity()),
        Method::SimTri => similar_triangles_step(obj, state, sched),
        Method::Momentum => momentum_step(obj, state, sched),
        Method::CompSimTri => {
            let (comp, h) = composite.expect("composite view prepared");
            composite_similar_triangles_step(comp, *h, state, sched)
        }
    }
}

/// Run `method` for `steps` iterations from `x0`, recording every state.
pub fn run_method(method: Method, problem: &Problem, sched: &Schedule, x0: &Vector, steps: usize) -> std::result::Result<Trajectory, RunError> {
    if steps < 1 {
        return Err(invalid("T", "at least one iteration is required").into());
    }
    check_dim(problem.dim(), x0.len())?;
    let composite = match (method, &problem.kind) {
        (Method::CompSimTri, _) => Some(problem.as_composite()?),
        (_, ProblemKind::Composite { .. }) => {
            return Err(Error::Incompatible(format!("method {method} needs a smooth problem; use comp-sim-tri")).into())
        }
        _ => None,
    };
    if let Some((comp, h)) = &composite {
        if !comp.domain().contains(x0, 1e-9) {
            return Err(Error::Incompatible(format!("x0 is outside the {} domain", comp.domain().name())).into());
        }
        if *h == MirrorMap::NegativeEntropy && x0.iter().any(|&v| v <= 0.0) {
            return Err(Error::Incompatible("entropy geometry needs a strictly positive x0".into()).into());
        }
    }
    if method == Method::ScAgm && !(problem.smooth_part().strong_convexity() > 0.0) {
        return Err(Error::Incompatible("sc-agm needs a strongly convex objective (μ > 0)".into()).into());
    }

    let started = Instant::now();
    let record = |state: IterateState| Record {
        f_x: problem.value(&state.x),
        f_z: problem.value(&state.z),
        state,
        grad_norm: None,
        elapsed: started.elapsed(),
    };
    let mut traj = Trajectory {
        problem_id: problem.id.clone(),
        method,
        schedule_id: sched.id(),
        records: Vec::with_capacity(steps + 1),
    };
    traj.records.push(record(IterateState::initial(x0.clone())));
    for t in 0..steps {
        let current = &traj.records[t].state;
        let step = match take_step(method, problem, composite.as_ref(), current, sched) {
            Ok(step) => step,
            Err(source) => {
                return Err(RunError::StepFailed {
                    method,
                    step: t,
                    source,
                    partial: Box::new(traj),
                })
            }
        };
        let overflow = step.next.max_norm() > OVERFLOW_THRESHOLD;
        let current = &mut traj.records[t];
        current.grad_norm = step.grad_y.as_ref().map(|g| g.norm());
        current.state.cached_grad_y = step.grad_y;
        current.state.w = step.w;
        if overflow {
            return Err(RunError::Overflow {
                method,
                step: t + 1,
                partial: Box::new(traj),
            });
        }
        traj.records.push(record(step.next));
    }
    Ok(traj)
}
