//! Step-size sequences `η_t` (and the companion `η̃_t` where a method uses
//! two step sizes), with cached prefix sums `Σ_{i=1..t} ηᵢ`.
//!
//! Indices are 1-based in the usual sense: `eta(t)` is the step used to go
//! from iterate `t−1` to `t`. The `agm`, `momentum` and power kinds set
//! `η₀ = 0`, so the first interpolation collapses to `y₀ = x₀ = z₀`.

use std::fmt;
use std::sync::RwLock;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `η_t = t/(2L)`
    Agm { l: f64 },
    /// `η_t ≡ η`
    Constant { eta: f64 },
    /// `η_t = c·t^p` (`p = 1` is the linear schedule)
    Power { scale: f64, exponent: f64 },
    /// `η = 1/(μ(√κ−1))`, `η̃ = 1/(μ√κ)`
    StronglyConvex { l: f64, mu: f64 },
    /// `η_t = 1/(μ(κξ_t−1))`, `η̃_t = (1−ξ_{t+1})/(μ(κξ_{t+1}−1))`
    Xi { l: f64, mu: f64, xi0: f64 },
    /// `(Lη_{t+1}+½)² = (Lη_t+1)² + ¼` from `η₀ = 0`, with `η̃_{t+1} = η_t + 1/L`
    Momentum { l: f64 },
}

#[derive(Debug, Default, Clone)]
struct Cache {
    eta: Vec<f64>,
    eta_tilde: Vec<f64>,
    prefix: Vec<f64>,
    prefix_tilde: Vec<f64>,
    /// Running compensations of the two prefix sums.
    carry: (f64, f64),
    raw: (f64, f64),
    xi: Vec<f64>,
}

/// One Neumaier step: add `x` to `sum`, tracking the lost low-order part.
fn compensated_add(sum: f64, carry: &mut f64, x: f64) -> f64 {
    let total = sum + x;
    *carry += if sum.abs() >= x.abs() { (sum - total) + x } else { (x - total) + sum };
    total
}

/// A step-size sequence, precomputed to a horizon and extended on demand.
///
/// Entries are always generated in index order, so values do not depend on
/// the order of queries. Extension takes a write lock; readers see a
/// consistent prefix.
pub struct Schedule {
    kind: ScheduleKind,
    cache: RwLock<Cache>,
}

impl Clone for Schedule {
    fn clone(&self) -> Self {
        Schedule {
            kind: self.kind,
            cache: RwLock::new(self.cache.read().expect("schedule lock").clone()),
        }
    }
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule").field("kind", &self.kind).finish()
    }
}

impl PartialEq for Schedule {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {value}")))
    }
}

/// `η_t = t/(2L)`, the choice making `Lη_tη_{t+1} = Σ_{i≤t} ηᵢ`.
pub fn agm_schedule(l: f64) -> Result<Schedule> {
    positive("L", l)?;
    Ok(Schedule::new(ScheduleKind::Agm { l }, 64))
}

pub fn constant_schedule(eta: f64) -> Result<Schedule> {
    positive("eta", eta)?;
    Ok(Schedule::new(ScheduleKind::Constant { eta }, 64))
}

/// `η_t = c·t^p`.
pub fn power_schedule(scale: f64, exponent: f64) -> Result<Schedule> {
    positive("scale", scale)?;
    positive("exponent", exponent)?;
    Ok(Schedule::new(ScheduleKind::Power { scale, exponent }, 64))
}

/// `η_t = c·t`.
pub fn linear_schedule(slope: f64) -> Result<Schedule> {
    power_schedule(slope, 1.0)
}

/// Constant pair `η = 1/(μ(√κ−1))`, `η̃ = 1/(μ√κ)` with `κ = L/μ`.
pub fn strongly_convex_schedule(l: f64, mu: f64) -> Result<Schedule> {
    positive("mu", mu)?;
    positive("L", l)?;
    if l == mu {
        return Err(invalid("kappa", "condition number 1: √κ − 1 = 0"));
    }
    if l < mu {
        return Err(invalid("kappa", format!("need L > μ, got L = {l}, μ = {mu}")));
    }
    Ok(Schedule::new(ScheduleKind::StronglyConvex { l, mu }, 64))
}

/// Nesterov's general schedule driven by the `ξ` recursion
/// `ξ_{t+1}(ξ_{t+1} − κ⁻¹)/(1 − ξ_{t+1}) = ξ_t²`.
///
/// `ξ₀` must lie in `(κ⁻¹, 1)` so that every `η_t` is positive.
pub fn xi_schedule(xi0: f64, l: f64, mu: f64, horizon: usize) -> Result<Schedule> {
    positive("mu", mu)?;
    positive("L", l)?;
    let kappa = l / mu;
    if !(kappa > 1.0) {
        return Err(invalid("kappa", format!("must exceed 1, got {kappa}")));
    }
    if !(xi0 > 1.0 / kappa && xi0 < 1.0) {
        return Err(invalid("xi0", format!("must lie in (1/κ, 1) = ({}, 1), got {xi0}", 1.0 / kappa)));
    }
    Ok(Schedule::new(ScheduleKind::Xi { l, mu, xi0 }, horizon))
}

/// `η` from the recursion `(Lη_{t+1}+½)² = (Lη_t+1)² + ¼`, `η₀ = 0`.
pub fn momentum_schedule(l: f64, horizon: usize) -> Result<Schedule> {
    positive("L", l)?;
    Ok(Schedule::new(ScheduleKind::Momentum { l }, horizon))
}

/// Positive root of `ξ² + (ξ_t² − κ⁻¹)ξ − ξ_t² = 0`.
pub fn next_xi(xi: f64, kappa: f64) -> f64 {
    let c = xi * xi;
    let b = c - 1.0 / kappa;
    let disc = (b * b + 4.0 * c).sqrt();
    if b >= 0.0 {
        2.0 * c / (b + disc)
    } else {
        (disc - b) / 2.0
    }
}

/// FISTA's `a_{t+1} = (1 + √(1 + 4a_t²))/2`.
pub fn fista_next(a: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * a * a).sqrt())
}

impl Schedule {
    fn new(kind: ScheduleKind, horizon: usize) -> Self {
        let s = Schedule {
            kind,
            cache: RwLock::new(Cache::default()),
        };
        s.ensure(horizon);
        s
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Identifier used in file names and reports.
    pub fn id(&self) -> String {
        match self.kind {
            ScheduleKind::Agm { .. } => "agm".into(),
            ScheduleKind::Constant { eta } => format!("constant:{eta}"),
            ScheduleKind::Power { scale, exponent } if exponent == 1.0 => format!("linear:{scale}"),
            ScheduleKind::Power { scale, exponent } => format!("power:{scale}:{exponent}"),
            ScheduleKind::StronglyConvex { .. } => "sc".into(),
            ScheduleKind::Xi { xi0, .. } => format!("xi:{xi0}"),
            ScheduleKind::Momentum { .. } => "momentum".into(),
        }
    }

    /// Whether the kind defines a companion sequence `η̃` distinct from `η`.
    pub fn has_eta_tilde(&self) -> bool {
        matches!(
            self.kind,
            ScheduleKind::StronglyConvex { .. } | ScheduleKind::Xi { .. } | ScheduleKind::Momentum { .. }
        )
    }

    /// Make sure entries `0..=t` are available.
    pub fn ensure(&self, t: usize) {
        if self.cache.read().expect("schedule lock").eta.len() > t {
            return;
        }
        let mut cache = self.cache.write().expect("schedule lock");
        while cache.eta.len() <= t {
            self.push_next(&mut cache);
        }
    }

    fn push_next(&self, cache: &mut Cache) {
        let t = cache.eta.len();
        let (eta, eta_tilde) = match self.kind {
            ScheduleKind::Agm { l } => (t as f64 / (2.0 * l), None),
            ScheduleKind::Constant { eta } => (eta, None),
            ScheduleKind::Power { scale, exponent } => (scale * (t as f64).powf(exponent), None),
            ScheduleKind::StronglyConvex { l, mu } => {
                let sk = (l / mu).sqrt();
                (1.0 / (mu * (sk - 1.0)), Some(1.0 / (mu * sk)))
            }
            ScheduleKind::Xi { l, mu, xi0 } => {
                let kappa = l / mu;
                if cache.xi.is_empty() {
                    cache.xi.push(xi0);
                }
                let xi_t = cache.xi[t];
                let xi_next = next_xi(xi_t, kappa);
                cache.xi.push(xi_next);
                (
                    1.0 / (mu * (kappa * xi_t - 1.0)),
                    Some((1.0 - xi_next) / (mu * (kappa * xi_next - 1.0))),
                )
            }
            ScheduleKind::Momentum { l } => {
                let eta = match cache.eta.last() {
                    None => 0.0,
                    Some(&prev) => {
                        let a = l * prev + 1.0;
                        ((a * a + 0.25).sqrt() - 0.5) / l
                    }
                };
                let tilde = match cache.eta.last() {
                    None => 0.0,
                    Some(&prev) => prev + 1.0 / l,
                };
                (eta, Some(tilde))
            }
        };
        let eta_tilde = eta_tilde.unwrap_or(eta);
        // the stored prefix sums include their compensation
        let (prefix, prefix_tilde) = match (cache.prefix.last(), cache.prefix_tilde.last()) {
            (Some(_), Some(_)) => {
                let (raw, raw_tilde) = cache.raw;
                let mut carry = cache.carry;
                let raw = compensated_add(raw, &mut carry.0, eta);
                let raw_tilde = compensated_add(raw_tilde, &mut carry.1, eta_tilde);
                cache.raw = (raw, raw_tilde);
                cache.carry = carry;
                (raw + carry.0, raw_tilde + carry.1)
            }
            _ => (0.0, 0.0),
        };
        cache.eta.push(eta);
        cache.eta_tilde.push(eta_tilde);
        cache.prefix.push(prefix);
        cache.prefix_tilde.push(prefix_tilde);
    }

    fn read<T>(&self, t: usize, f: impl Fn(&Cache) -> T) -> T {
        self.ensure(t);
        f(&self.cache.read().expect("schedule lock"))
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.read(t, |c| c.eta[t])
    }

    /// `η̃_t`; equals `η_t` for kinds without a companion sequence.
    pub fn eta_tilde(&self, t: usize) -> f64 {
        self.read(t, |c| c.eta_tilde[t])
    }

    /// `Σ_{i=1..t} ηᵢ` (zero at `t = 0`).
    pub fn prefix_sum(&self, t: usize) -> f64 {
        self.read(t, |c| c.prefix[t])
    }

    /// `Σ_{i=1..t} η̃ᵢ`.
    pub fn prefix_sum_tilde(&self, t: usize) -> f64 {
        self.read(t, |c| c.prefix_tilde[t])
    }

    /// `ξ_t` for the xi kind.
    pub fn xi(&self, t: usize) -> Option<f64> {
        match self.kind {
            ScheduleKind::Xi { .. } => Some(self.read(t, |c| c.xi[t])),
            _ => None,
        }
    }

    /// `ξ₀, …, ξ_T`.
    pub fn xi_sequence(&self, horizon: usize) -> Option<Vec<f64>> {
        match self.kind {
            ScheduleKind::Xi { .. } => Some(self.read(horizon, |c| c.xi[..=horizon].to_vec())),
            _ => None,
        }
    }

    /// `a_t = Lη_t + 1` for the momentum kind.
    pub fn fista_a(&self, t: usize) -> Option<f64> {
        match self.kind {
            ScheduleKind::Momentum { l } => Some(l * self.eta(t) + 1.0),
            _ => None,
        }
    }

    /// `(1 + μη)⁻¹` for the strongly convex kind.
    pub fn contraction_factor(&self) -> Option<f64> {
        match self.kind {
            ScheduleKind::StronglyConvex { mu, .. } => Some(1.0 / (1.0 + mu * self.eta(1))),
            _ => None,
        }
    }
}
