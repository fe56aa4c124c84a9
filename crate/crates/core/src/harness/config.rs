//! Experiment configuration: `key = value` lines grouped under optional
//! `[section]` headers. `#` starts a comment. Unknown keys are errors.
//!
//! ```text
//! problem = lasso
//! methods = comp-sim-tri, sim-tri
//! schedule = agm
//! T = 200
//! x0 = 0, 0
//!
//! [problem]
//! a = 1, 0; 0, 2
//! b = 3, 0.2
//! lambda = 1
//!
//! [tolerances]
//! certificate = 1e-9
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lyapunov::DEFAULT_CERT_TOL;
use crate::objective::{make_lasso_composite, random_psd_quadratic, Matrix, QuadraticObjective, Vector};
use crate::optimizers::{Method, Problem};
use crate::prox::MirrorMap;
use crate::schedules::{
    agm_schedule, constant_schedule, linear_schedule, momentum_schedule, power_schedule, strongly_convex_schedule, xi_schedule,
    Schedule,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in {section}")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error(transparent)]
    Build(#[from] crate::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Figure1,
    Quadratic { a: Matrix, b: Vector },
    Lasso { a: Matrix, b: Vector, lambda: f64 },
    Random { dim: usize, mu: f64, l: f64 },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Figure1 => "figure1",
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::Lasso { .. } => "lasso",
            ProblemSpec::Random { .. } => "random",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Figure1 => 2,
            ProblemSpec::Quadratic { a, .. } => a.nrows(),
            ProblemSpec::Lasso { a, .. } => a.ncols(),
            ProblemSpec::Random { dim, .. } => *dim,
        }
    }

    /// Build the problem; random instances draw from `seed`.
    pub fn build(&self, seed: u64) -> crate::Result<Problem> {
        Ok(match self {
            ProblemSpec::Figure1 => Problem::smooth("figure1", Arc::new(QuadraticObjective::figure1())),
            ProblemSpec::Quadratic { a, b } => Problem::smooth("quadratic", Arc::new(QuadraticObjective::new(a.clone(), b.clone())?)),
            ProblemSpec::Lasso { a, b, lambda } => Problem::composite("lasso", make_lasso_composite(a, b, *lambda)?, MirrorMap::SquaredEuclidean),
            ProblemSpec::Random { dim, mu, l } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Problem::smooth("random", Arc::new(random_psd_quadratic(&mut rng, *dim, *mu, *l)?))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Agm,
    Constant(f64),
    Linear(f64),
    Power(f64, f64),
    StronglyConvex,
    Xi(f64),
    Momentum,
}

impl ScheduleSpec {
    /// Instantiate with the problem's curvature constants.
    pub fn build(&self, l: f64, mu: f64, horizon: usize) -> crate::Result<Schedule> {
        match *self {
            ScheduleSpec::Agm => agm_schedule(l),
            ScheduleSpec::Constant(eta) => constant_schedule(eta),
            ScheduleSpec::Linear(c) => linear_schedule(c),
            ScheduleSpec::Power(c, p) => power_schedule(c, p),
            ScheduleSpec::StronglyConvex => strongly_convex_schedule(l, mu),
            ScheduleSpec::Xi(xi0) => xi_schedule(xi0, l, mu, horizon + 1),
            ScheduleSpec::Momentum => momentum_schedule(l, horizon + 1),
        }
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleSpec::Agm => write!(f, "agm"),
            ScheduleSpec::Constant(eta) => write!(f, "constant:{eta}"),
            ScheduleSpec::Linear(c) => write!(f, "linear:{c}"),
            ScheduleSpec::Power(c, p) => write!(f, "power:{c}:{p}"),
            ScheduleSpec::StronglyConvex => write!(f, "sc"),
            ScheduleSpec::Xi(xi0) => write!(f, "xi:{xi0}"),
            ScheduleSpec::Momentum => write!(f, "momentum"),
        }
    }
}

fn parse_positive(s: &str, what: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{what} must be positive, got {v}")),
        Err(_) => Err(format!("{what} `{}` is not a number", s.trim())),
    }
}

impl FromStr for ScheduleSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["agm"] => Ok(ScheduleSpec::Agm),
            ["sc"] => Ok(ScheduleSpec::StronglyConvex),
            ["momentum"] => Ok(ScheduleSpec::Momentum),
            ["constant", eta] => Ok(ScheduleSpec::Constant(parse_positive(eta, "step size")?)),
            ["linear", c] => Ok(ScheduleSpec::Linear(parse_positive(c, "slope")?)),
            ["power", c, p] => {
                let p = p.trim().parse::<f64>().map_err(|_| format!("exponent `{p}` is not a number"))?;
                Ok(ScheduleSpec::Power(parse_positive(c, "scale")?, p))
            }
            ["xi", x] => Ok(ScheduleSpec::Xi(parse_positive(x, "xi0")?)),
            _ => Err(format!(
                "unknown schedule `{}` (expected agm, constant:η, linear:c, power:c:p, sc, xi:ξ₀ or momentum)",
                s.trim()
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutputKind {
    Csv,
    SvgTrajectory,
    SvgConvergence,
    Rates,
    Certificates,
}

impl OutputKind {
    pub const ALL: [OutputKind; 5] = [
        OutputKind::Csv,
        OutputKind::SvgTrajectory,
        OutputKind::SvgConvergence,
        OutputKind::Rates,
        OutputKind::Certificates,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OutputKind::Csv => "csv",
            OutputKind::SvgTrajectory => "svg-trajectory",
            OutputKind::SvgConvergence => "svg-convergence",
            OutputKind::Rates => "rates",
            OutputKind::Certificates => "certificates",
        }
    }
}

impl FromStr for OutputKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        OutputKind::ALL
            .into_iter()
            .find(|o| o.name() == s.trim())
            .ok_or_else(|| format!("unknown output `{}`", s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative tolerance for inequality certificates.
    pub certificate: f64,
    /// Relative tolerance for Lyapunov monotonicity.
    pub monotone: f64,
    /// Relative slack allowed when comparing gaps with rate bounds.
    pub rate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            certificate: DEFAULT_CERT_TOL,
            monotone: DEFAULT_CERT_TOL,
            rate: DEFAULT_CERT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub methods: Vec<Method>,
    pub schedule: ScheduleSpec,
    pub x0: Vector,
    pub steps: usize,
    pub outputs: Vec<OutputKind>,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The built-in comparison of ppm, gd, cgd and agm on the figure-1
    /// quadratic from `(10, 10)`.
    pub fn figure1_comparison(schedule: ScheduleSpec, steps: usize) -> Self {
        ExperimentConfig {
            problem: ProblemSpec::Figure1,
            methods: vec![Method::Ppm, Method::Gd, Method::Cgd, Method::Agm],
            schedule,
            x0: Vector::from_vec(vec![10.0, 10.0]),
            steps,
            outputs: vec![OutputKind::Csv, OutputKind::SvgTrajectory, OutputKind::SvgConvergence, OutputKind::Rates],
            seed: 0,
            tolerances: Tolerances::default(),
            out_dir: None,
        }
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }
}

pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug, Default)]
struct Sections {
    map: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Sections {
    fn parse(text: &str) -> Result<Self> {
        let mut sections = Sections::default();
        let mut current = String::new();
        sections.map.insert(current.clone(), BTreeMap::new());
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: format!("malformed section header `{content}`"),
                })?;
                let name = name.trim().to_string();
                if !matches!(name.as_str(), "problem" | "tolerances") {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("unknown section `[{name}]`"),
                    });
                }
                current = name;
                sections.map.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: "empty key".into(),
                });
            }
            let section = sections.map.get_mut(&current).expect("section registered");
            if let Some(prev) = section.get(&key) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            section.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(sections)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let entry = self.map.get_mut(section)?.get_mut(key)?;
        entry.used = true;
        Some((entry.value.clone(), entry.line))
    }

    fn reject_unused(&self) -> Result<()> {
        let mut unused: Vec<(usize, &str, &str)> = self
            .map
            .iter()
            .flat_map(|(s, keys)| keys.iter().filter(|(_, e)| !e.used).map(move |(k, e)| (e.line, s.as_str(), k.as_str())))
            .collect();
        unused.sort();
        match unused.first() {
            Some(&(line, section, key)) => Err(ConfigError::UnknownKey {
                line,
                section: if section.is_empty() { "top level".into() } else { format!("[{section}]") },
                key: key.into(),
            }),
            None => Ok(()),
        }
    }
}

fn invalid(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        line,
        message: message.into(),
    }
}

fn parse_list(value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| invalid(line, format!("`{}` is not a number", s.trim()))))
        .collect()
}

/// Rows separated by `;`, entries by `,`.
fn parse_matrix(value: &str, line: usize) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = value.split(';').map(|r| parse_list(r, line)).collect::<Result<_>>()?;
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(line, "matrix rows have different lengths"));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
}

fn parse_scalar<T: FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| invalid(line, format!("{what} `{value}` is not valid")))
}

fn parse_problem(name: &str, line: usize, s: &mut Sections) -> Result<ProblemSpec> {
    let mut required = |key: &str| s.take("problem", key).ok_or_else(|| ConfigError::Missing(format!("[problem] {key}")));
    match name {
        "figure1" => Ok(ProblemSpec::Figure1),
        "quadratic" => {
            let (a_text, a_line) = required("a")?;
            let a = parse_matrix(&a_text, a_line)?;
            let b = match s.take("problem", "b") {
                Some((text, line)) => Vector::from_vec(parse_list(&text, line)?),
                None => Vector::zeros(a.nrows()),
            };
            Ok(ProblemSpec::Quadratic { a, b })
        }
        "lasso" => {
            let (a_text, a_line) = required("a")?;
            let (b_text, b_line) = required("b")?;
            let (l_text, l_line) = required("lambda")?;
            Ok(ProblemSpec::Lasso {
                a: parse_matrix(&a_text, a_line)?,
                b: Vector::from_vec(parse_list(&b_text, b_line)?),
                lambda: parse_scalar(&l_text, l_line, "lambda")?,
            })
        }
        "random" => {
            let (dim_text, dim_line) = required("dim")?;
            let dim = parse_scalar(&dim_text, dim_line, "dim")?;
            let mu = match s.take("problem", "mu") {
                Some((text, line)) => parse_scalar(&text, line, "mu")?,
                None => 0.0,
            };
            let l = match s.take("problem", "L") {
                Some((text, line)) => parse_scalar(&text, line, "L")?,
                None => 1.0,
            };
            Ok(ProblemSpec::Random { dim, mu, l })
        }
        other => Err(invalid(line, format!("unknown problem `{other}` (expected figure1, quadratic, lasso or random)"))),
    }
}

/// Parse and validate a configuration.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let mut s = Sections::parse(text)?;

    let (problem_name, problem_line) = s.take("", "problem").ok_or_else(|| ConfigError::Missing("problem".into()))?;
    let problem = parse_problem(problem_name.trim(), problem_line, &mut s)?;

    let (methods_text, methods_line) = s.take("", "methods").ok_or_else(|| ConfigError::Missing("methods".into()))?;
    let mut methods = Vec::new();
    for item in methods_text.split(',') {
        let m: Method = item
            .trim()
            .parse()
            .map_err(|_| invalid(methods_line, format!("unknown method `{}`", item.trim())))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }

    let schedule = match s.take("", "schedule") {
        Some((text, line)) => text.parse::<ScheduleSpec>().map_err(|e| invalid(line, e))?,
        None => ScheduleSpec::Agm,
    };

    let steps = match s.take("", "T") {
        Some((text, line)) => {
            let t: usize = parse_scalar(&text, line, "T")?;
            if t < 1 {
                return Err(invalid(line, "T must be at least 1"));
            }
            t
        }
        None => DEFAULT_STEPS,
    };

    let x0 = match s.take("", "x0") {
        Some((text, line)) => {
            let x0 = Vector::from_vec(parse_list(&text, line)?);
            if x0.len() != problem.dim() {
                return Err(invalid(line, format!("x0 has {} entries but the problem has dimension {}", x0.len(), problem.dim())));
            }
            x0
        }
        None => match problem {
            ProblemSpec::Figure1 => Vector::from_vec(vec![10.0, 10.0]),
            _ => Vector::from_element(problem.dim(), 1.0),
        },
    };

    let outputs = match s.take("", "outputs") {
        Some((text, line)) => {
            let mut out = Vec::new();
            for item in text.split(',') {
                let kind: OutputKind = item.parse().map_err(|e: String| invalid(line, e))?;
                if !out.contains(&kind) {
                    out.push(kind);
                }
            }
            out
        }
        None => OutputKind::ALL.to_vec(),
    };

    let seed = match s.take("", "seed") {
        Some((text, line)) => parse_scalar(&text, line, "seed")?,
        None => DEFAULT_SEED,
    };

    let out_dir = s.take("", "out").map(|(text, _)| PathBuf::from(text));

    let mut tolerances = Tolerances::default();
    for (key, slot) in [
        ("certificate", &mut tolerances.certificate),
        ("monotone", &mut tolerances.monotone),
        ("rate", &mut tolerances.rate),
    ] {
        if let Some((text, line)) = s.take("tolerances", key) {
            *slot = parse_positive(&text, key).map_err(|e| invalid(line, e))?;
        }
    }

    s.reject_unused()?;
    Ok(ExperimentConfig {
        problem,
        methods,
        schedule,
        x0,
        steps,
        outputs,
        seed,
        tolerances,
        out_dir,
    })
}
