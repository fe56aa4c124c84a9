//! Experiment driver behind the `proxaccel` command line tool.

pub mod config;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;

use thiserror::Error;

pub use config::{load_config, ConfigError, ExperimentConfig, OutputKind, ProblemSpec, ScheduleSpec, Tolerances};

use crate::lyapunov::{
    certificates_csv, certify, certify_monotone, phi, rate_envelope, resolve_optimum, CertificateReport, Family, MonotoneReport, PhiKind,
    RateKind, RateRow,
};
use crate::objective::Optimum;
use crate::optimizers::{run_method, Method, Problem, RunError, Trajectory};
use crate::schedules::Schedule;
use svg::{Plot, Series};

/// Environment variable that overrides every other output directory setting.
pub const OUT_ENV: &str = "PROXACCEL_OUT";
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("problem setup: {0}")]
    Setup(#[from] crate::Error),
    #[error("{method}: {source}")]
    Rejected { method: Method, source: crate::Error },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Overflow { step: usize },
    Failed { step: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: Method,
    pub trajectory: Trajectory,
    pub status: RunStatus,
    /// Overflowed, or `f` both non-monotone and above its starting value.
    pub divergent: bool,
    pub certificates: Vec<CertificateReport>,
    pub monotone: Option<MonotoneReport>,
    pub rates: Option<(RateKind, Vec<RateRow>)>,
}

impl RunOutcome {
    /// Objective sequence tracked by the method's rate statement.
    pub fn tracks_z(&self) -> bool {
        !matches!(self.method, Method::Ppm | Method::Gd | Method::Cgd)
    }

    pub fn violations(&self) -> usize {
        self.certificates.iter().map(|r| r.violations().count()).sum::<usize>()
            + self.monotone.as_ref().map_or(0, |m| m.violations.len())
    }
}

#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub schedule: Schedule,
    pub optimum: Optimum,
    pub runs: Vec<RunOutcome>,
    /// Whether certificates were evaluated.
    pub certified: bool,
}

impl Experiment {
    pub fn violations(&self) -> usize {
        self.runs.iter().map(RunOutcome::violations).sum()
    }

    pub fn clean(&self) -> bool {
        self.violations() == 0
    }

    pub fn schedule_id(&self) -> String {
        self.schedule.id()
    }
}

/// `f` oscillates upward past its initial value, or the run overflowed.
pub fn divergence_flag(traj: &Trajectory, status: &RunStatus) -> bool {
    if matches!(status, RunStatus::Overflow { .. }) {
        return true;
    }
    let f: Vec<f64> = traj.records.iter().map(|r| r.f_x).collect();
    let non_monotone = f.windows(2).any(|w| w[1] > w[0]);
    non_monotone && f.iter().any(|&v| !(v <= f[0]))
}

/// Run every configured method; certificates are evaluated when asked for.
pub fn run_experiment(cfg: &ExperimentConfig, with_certificates: bool) -> Result<Experiment, HarnessError> {
    let problem = cfg.problem.build(cfg.seed)?;
    let schedule = cfg
        .schedule
        .build(problem.smoothness(), problem.smooth_part().strong_convexity(), cfg.steps)?;
    let optimum = resolve_optimum(&problem, &cfg.x0)?;

    let results: Vec<(Method, Result<Trajectory, RunError>)> = thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .methods
            .iter()
            .map(|&m| {
                let (problem, schedule) = (&problem, &schedule);
                scope.spawn(move || (m, run_method(m, problem, schedule, &cfg.x0, cfg.steps)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    for (method, result) in results {
        let (trajectory, status) = match result {
            Ok(traj) => (traj, RunStatus::Completed),
            Err(RunError::Rejected(source)) => return Err(HarnessError::Rejected { method, source }),
            Err(RunError::Overflow { step, partial, .. }) => (*partial, RunStatus::Overflow { step }),
            Err(RunError::StepFailed { step, source, partial, .. }) => (
                *partial,
                RunStatus::Failed {
                    step,
                    message: source.to_string(),
                },
            ),
        };
        let rejected = |source| HarnessError::Rejected { method, source };
        let mut certificates = Vec::new();
        let mut monotone = None;
        if with_certificates {
            for family in Family::for_method(method) {
                certificates.push(certify(family, &problem, &trajectory, &schedule, &optimum, cfg.tolerances.certificate).map_err(rejected)?);
            }
            if let Some(kind) = PhiKind::for_method(method) {
                monotone = Some(certify_monotone(kind, &problem, &trajectory, &schedule, &optimum, cfg.tolerances.monotone).map_err(rejected)?);
            }
        }
        let rates = match RateKind::for_method(method) {
            Some(kind) => Some((kind, rate_envelope(kind, &problem, &trajectory, &schedule, &optimum).map_err(rejected)?)),
            None => None,
        };
        let divergent = divergence_flag(&trajectory, &status);
        runs.push(RunOutcome {
            method,
            trajectory,
            status,
            divergent,
            certificates,
            monotone,
            rates,
        });
    }
    runs.sort_by_key(|r| r.method);

    Ok(Experiment {
        config: cfg.clone(),
        problem,
        schedule,
        optimum,
        runs,
        certified: with_certificates,
    })
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

/// One trajectory as CSV: `t, x…, y…, z…, f_x, f_z, grad_norm, phi, worst_residual`.
pub fn trajectory_csv(exp: &Experiment, run: &RunOutcome) -> String {
    let traj = &run.trajectory;
    let d = exp.problem.dim();
    let mut out = String::from("t");
    for prefix in ["x", "y", "z"] {
        for i in 0..d {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push_str(",f_x,f_z,grad_norm,phi,worst_residual\n");
    let phi_kind = PhiKind::for_method(run.method);
    for (t, rec) in traj.records.iter().enumerate() {
        let s = &rec.state;
        let mut row = t.to_string();
        for v in s.x.iter().chain(s.y.iter()).chain(s.z.iter()) {
            row.push(',');
            row.push_str(&num(*v));
        }
        let _ = write!(row, ",{},{}", num(rec.f_x), num(rec.f_z));
        row.push(',');
        if let Some(g) = rec.grad_norm {
            row.push_str(&num(g));
        }
        row.push(',');
        if let Some(kind) = phi_kind {
            if let Ok(value) = phi(kind, &exp.problem, traj, &exp.schedule, &exp.optimum, t) {
                row.push_str(&num(value.phi));
            }
        }
        row.push(',');
        if let Some(worst) = run.certificates.iter().filter_map(|r| r.worst_at(t)).reduce(f64::max) {
            row.push_str(&num(worst));
        }
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn gap_series(exp: &Experiment, run: &RunOutcome) -> Vec<(f64, f64)> {
    let fstar = exp.problem.value(&exp.optimum.point);
    run.trajectory
        .records
        .iter()
        .enumerate()
        .map(|(t, r)| (t as f64, if run.tracks_z() { r.f_z } else { r.f_x } - fstar))
        .collect()
}

fn label(run: &RunOutcome) -> String {
    if run.divergent {
        format!("{} (divergent)", run.method)
    } else {
        run.method.to_string()
    }
}

pub fn trajectory_svg(exp: &Experiment) -> String {
    let coords = |v: &crate::objective::Vector| (v[0], if v.len() > 1 { v[1] } else { 0.0 });
    let series = exp
        .runs
        .iter()
        .map(|run| Series {
            fit: !run.divergent,
            dashed: run.divergent,
            ..Series::new(label(run), run.trajectory.records.iter().map(|r| coords(&r.state.x)).collect())
        })
        .collect();
    Plot {
        title: format!("{} iterates, schedule {}", exp.problem.id, exp.schedule_id()),
        x_label: "coordinate 0".into(),
        y_label: "coordinate 1".into(),
        log_y: false,
        series,
        marker: Some(coords(&exp.optimum.point)),
    }
    .render()
}

pub fn convergence_svg(exp: &Experiment) -> String {
    let series = exp
        .runs
        .iter()
        .map(|run| Series {
            fit: !run.divergent,
            dashed: run.divergent,
            ..Series::new(label(run), gap_series(exp, run))
        })
        .collect();
    Plot {
        title: format!("{} optimality gap, schedule {}", exp.problem.id, exp.schedule_id()),
        x_label: "iteration t".into(),
        y_label: "f - f* (log scale)".into(),
        log_y: true,
        series,
        marker: None,
    }
    .render()
}

/// Measured gap, bound and ratio at the last step of each run.
pub fn rate_table(exp: &Experiment) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "problem {}  schedule {}  T {}  f* {}",
        exp.problem.id,
        exp.schedule_id(),
        exp.config.steps,
        num(exp.problem.value(&exp.optimum.point))
    );
    let _ = writeln!(out, "{:<14}{:<11}{:>6}  {:<15}{:<15}{:<15}status", "method", "envelope", "T", "gap", "bound", "ratio");
    let mut final_gaps = Vec::new();
    for run in &exp.runs {
        let t = run.trajectory.steps();
        let gap = gap_series(exp, run).last().map(|p| p.1).unwrap_or(f64::NAN);
        final_gaps.push((run.method, t, gap, run.divergent));
        let (envelope, bound, ratio, status) = match &run.rates {
            Some((kind, rows)) => match rows.last() {
                Some(row) => {
                    let status = if run.divergent {
                        "divergent"
                    } else if row.holds(exp.config.tolerances.rate) {
                        "ok"
                    } else {
                        "exceeds"
                    };
                    (kind.name(), sci(row.bound), sci(row.ratio()), status)
                }
                None => (kind.name(), "-".into(), "-".into(), "empty"),
            },
            None => ("-", "-".into(), "-".into(), if run.divergent { "divergent" } else { "no bound" }),
        };
        let _ = writeln!(out, "{:<14}{:<11}{:>6}  {:<15}{:<15}{:<15}{}", run.method.id(), envelope, t, sci(gap), bound, ratio, status);
    }
    let find = |m: Method| final_gaps.iter().find(|g| g.0 == m);
    if let (Some(agm), Some(gd)) = (find(Method::Agm), find(Method::Gd)) {
        if agm.1 == gd.1 && agm.1 >= 10 && !gd.3 {
            let holds = agm.2 <= gd.2;
            let _ = writeln!(out, "ordering: agm gap {} <= gd gap {} at T {}: {}", sci(agm.2), sci(gd.2), agm.1, if holds { "yes" } else { "no" });
        } else {
            let _ = writeln!(out, "ordering: not comparable (needs equal T >= 10 and a non-divergent gd run)");
        }
    }
    out
}

/// Certificate rows, followed by Lyapunov increments under family `PHI`.
pub fn certificate_csv(exp: &Experiment) -> Option<String> {
    let reports: Vec<CertificateReport> = exp.runs.iter().flat_map(|r| r.certificates.iter().cloned()).collect();
    let monotone: Vec<(Method, &MonotoneReport)> = exp.runs.iter().filter_map(|r| r.monotone.as_ref().map(|m| (r.method, m))).collect();
    if reports.is_empty() && monotone.is_empty() {
        return None;
    }
    let mut out = certificates_csv(&reports);
    for (method, report) in monotone {
        for (t, inc) in report.increments.iter().enumerate() {
            let _ = writeln!(out, "PHI,{t},{method}-{}-increment,{}", report.kind.name(), num(*inc));
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

fn write_file(path: PathBuf, contents: &str, manifest: &mut Manifest) -> Result<(), HarnessError> {
    fs::write(&path, contents).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    manifest.files.push(path);
    Ok(())
}

/// Write every requested output under `dir`.
pub fn emit_outputs(exp: &Experiment, dir: &Path) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let cfg = &exp.config;
    let mut manifest = Manifest::default();
    if cfg.wants(OutputKind::Csv) {
        for run in &exp.runs {
            let name = format!("{}.{}.csv", run.method, exp.schedule_id());
            write_file(dir.join(name), &trajectory_csv(exp, run), &mut manifest)?;
        }
    }
    if cfg.wants(OutputKind::SvgTrajectory) {
        write_file(dir.join("trajectories.svg"), &trajectory_svg(exp), &mut manifest)?;
    }
    if cfg.wants(OutputKind::SvgConvergence) {
        write_file(dir.join("convergence.svg"), &convergence_svg(exp), &mut manifest)?;
    }
    if cfg.wants(OutputKind::Rates) {
        write_file(dir.join("rates.txt"), &rate_table(exp), &mut manifest)?;
    }
    if cfg.wants(OutputKind::Certificates) {
        match certificate_csv(exp) {
            Some(csv) => write_file(dir.join("certificates.csv"), &csv, &mut manifest)?,
            None => manifest.notes.push("certificates.csv not written: no certificate reports".into()),
        }
    }
    for run in &exp.runs {
        match &run.status {
            RunStatus::Completed if run.divergent => manifest.notes.push(format!("{} oscillates above its starting value", run.method)),
            RunStatus::Completed => {}
            RunStatus::Overflow { step } => manifest.notes.push(format!("{} overflowed at step {step}", run.method)),
            RunStatus::Failed { step, message } => manifest.notes.push(format!("{} stopped at step {step}: {message}", run.method)),
        }
    }
    Ok(manifest)
}

/// `PROXACCEL_OUT`, then the command line, then the config, then `out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    if let Some(env) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    cli.or(cfg).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// One line per (method, family) and per Lyapunov check.
pub fn certificate_summary(exp: &Experiment) -> String {
    let mut out = String::new();
    for run in &exp.runs {
        for report in &run.certificates {
            let _ = writeln!(
                out,
                "{:<14}{:<15}{:<5} worst violation {} (threshold {})",
                run.method.id(),
                report.family.name(),
                if report.passed() { "ok" } else { "FAIL" },
                num(report.worst_violation),
                num(report.threshold())
            );
        }
        if let Some(m) = &run.monotone {
            let _ = writeln!(
                out,
                "{:<14}{:<15}{:<5} {} increasing steps out of {}",
                run.method.id(),
                format!("phi-{}", m.kind.name()),
                if m.certified() { "ok" } else { "FAIL" },
                m.violations.len(),
                m.increments.len()
            );
        }
        if run.certificates.is_empty() && run.monotone.is_none() {
            let _ = writeln!(out, "{:<14}no certificate family applies", run.method.id());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure1(schedule: ScheduleSpec, steps: usize) -> Experiment {
        run_experiment(&ExperimentConfig::figure1_comparison(schedule, steps), false).unwrap()
    }

    #[test]
    fn figure1_comparison_outputs() {
        let exp = figure1(ScheduleSpec::Constant(1.0 / 3.0), 30);
        let dir = tempfile::tempdir().unwrap();
        let manifest = emit_outputs(&exp, dir.path()).unwrap();
        assert_eq!(manifest.files.len(), 4 + 2 + 1);
        assert!(exp.runs.iter().all(|r| !r.divergent));
        for run in &exp.runs {
            let csv = fs::read_to_string(dir.path().join(format!("{}.constant:0.3333333333333333.csv", run.method))).unwrap();
            assert_eq!(csv.lines().count(), 1 + 31);
            assert_eq!(
                csv.lines().next().unwrap(),
                "t,x0,x1,y0,y1,z0,z1,f_x,f_z,grad_norm,phi,worst_residual"
            );
        }
    }

    #[test]
    fn growing_schedule_flags_gd() {
        let exp = figure1(ScheduleSpec::Linear(1.0 / 3.0), 30);
        let gd = exp.runs.iter().find(|r| r.method == Method::Gd).unwrap();
        assert!(gd.divergent);
        assert!(matches!(gd.status, RunStatus::Overflow { .. }));
        let agm = exp.runs.iter().find(|r| r.method == Method::Agm).unwrap();
        assert!(!agm.divergent);
        let dir = tempfile::tempdir().unwrap();
        let manifest = emit_outputs(&exp, dir.path()).unwrap();
        assert!(manifest.notes.iter().any(|n| n.contains("gd overflowed")));
    }

    #[test]
    fn single_step_csv() {
        let cfg = load_config("problem = figure1\nmethods = gd\nschedule = constant:0.5\nT = 1\noutputs = csv").unwrap();
        let exp = run_experiment(&cfg, false).unwrap();
        let csv = trajectory_csv(&exp, &exp.runs[0]);
        assert_eq!(csv.lines().count(), 3);
        let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
        assert_eq!(last.len(), 12);
        // no step leaves the final state, so no gradient and no certificate
        assert_eq!((last[9], last[11]), ("", ""));
        assert_eq!(last[10], "4.455e1");
    }

    #[test]
    fn certificates_and_exit_contract() {
        let cfg = load_config("problem = random\nmethods = agm, momentum, ppm\nschedule = agm\nT = 60\nseed = 3\n[problem]\ndim = 4\nL = 2").unwrap();
        let exp = run_experiment(&cfg, true).unwrap();
        let bad: Vec<_> = exp
            .runs
            .iter()
            .filter(|r| r.violations() > 0)
            .map(|r| r.method)
            .collect();
        // the agm schedule is not the momentum method's own schedule
        assert!(bad.iter().all(|m| *m == Method::Momentum), "{bad:?}");

        let cfg = load_config("problem = random\nmethods = agm, ppm\nschedule = agm\nT = 60\nseed = 3\n[problem]\ndim = 4\nL = 2").unwrap();
        let exp = run_experiment(&cfg, true).unwrap();
        assert!(exp.clean(), "{}", certificate_summary(&exp));
        let csv = certificate_csv(&exp).unwrap();
        assert!(csv.starts_with("family,t,name,residual\n"));

        let exp = run_experiment(&cfg, false).unwrap();
        assert!(certificate_csv(&exp).is_none());
        let dir = tempfile::tempdir().unwrap();
        let manifest = emit_outputs(&exp, dir.path()).unwrap();
        assert!(manifest.notes.iter().any(|n| n.contains("certificates.csv not written")));
    }

    #[test]
    fn rate_table_rows() {
        let cfg = load_config("problem = figure1\nmethods = agm, gd\nschedule = agm\nT = 100").unwrap();
        let exp = run_experiment(&cfg, false).unwrap();
        let table = rate_table(&exp);
        let agm_line = table.lines().find(|l| l.starts_with("agm ")).unwrap();
        assert!(agm_line.contains("7.920792e-2"), "{agm_line}");
        assert!(agm_line.ends_with("ok"));

        let cfg = load_config("problem = figure1\nmethods = agm, gd\nschedule = constant:0.5\nT = 10\nx0 = 0, 0").unwrap();
        let exp = run_experiment(&cfg, false).unwrap();
        let table = rate_table(&exp);
        let gd_line = table.lines().find(|l| l.starts_with("gd ")).unwrap();
        assert!(gd_line.contains(" 0.000000e0 "), "{gd_line}");
        assert!(table.contains("ordering: agm gap 0.000000e0 <= gd gap 0.000000e0 at T 10: yes"));
    }

    #[test]
    fn deterministic_outputs() {
        let cfg = load_config("problem = random\nmethods = agm, sim-tri\nT = 40\nseed = 11\n[problem]\ndim = 6\nL = 3").unwrap();
        let a = run_experiment(&cfg, true).unwrap();
        let b = run_experiment(&cfg, true).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(trajectory_csv(&a, ra), trajectory_csv(&b, rb));
        }
        assert_eq!(certificate_csv(&a), certificate_csv(&b));
    }

    #[test]
    fn incompatible_method_is_fatal() {
        let cfg = load_config("problem = lasso\nmethods = agm\nx0 = 0, 0\n[problem]\na = 1, 0; 0, 1\nb = 1, 1\nlambda = 0.1").unwrap();
        assert!(matches!(run_experiment(&cfg, false), Err(HarnessError::Rejected { .. })));
    }
}
