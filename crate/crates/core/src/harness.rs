//! Experiment configs, trajectory CSVs, the standard preset matrix and
//! coupling-strength sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{build_objective, Objective, Point, Problem, ProblemFamily, ScalarBase};
use crate::solvers::{run, Method, Schedule, SignVariant, SolverConfig, Termination, Trajectory};
use crate::spectral::separable_critical_point;

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub problem: ProblemFamily,
    pub d: usize,
    pub solver: SolverConfig,
    pub start: Point,
    pub output: PathBuf,
    pub ema_beta: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    label: String,
    problem: toml::Table,
    solver: RawSolver,
    run: RawRun,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    co_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sign_variant: Option<SignVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<Schedule>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    start: Vec<f64>,
    output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    ema_beta: Option<f64>,
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, message } => Error::InvalidParameter {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}

fn problem_from_table(mut table: toml::Table, origin: &Path) -> Result<(ProblemFamily, usize)> {
    let d = match table.remove("d") {
        None => return Err(Error::invalid("problem.d", "missing")),
        Some(toml::Value::Integer(d)) if d >= 1 => d as usize,
        Some(_) => return Err(Error::invalid("problem.d", "must be a positive integer")),
    };
    let family: ProblemFamily = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| parse_error(origin, format!("[problem]: {}", e.message())))?;
    Ok((family, d))
}

fn solver_from_raw(raw: RawSolver) -> Result<SolverConfig> {
    let eta = raw.eta.ok_or_else(|| Error::invalid("solver.eta", "missing"))?;
    let mut s = SolverConfig::new(raw.method, eta);
    s.co_gamma = raw.co_gamma;
    if let Some(m) = raw.max_iters {
        s.max_iters = m as usize;
    }
    if let Some(e) = raw.eps_stop {
        s.eps_stop = e;
    }
    s.seed = raw.seed.unwrap_or(0);
    s.noise_sigma = raw.noise_sigma.unwrap_or(0.0);
    s.sign_variant = raw.sign_variant.unwrap_or_default();
    s.schedule = raw.schedule;
    s.validate().map_err(|e| prefixed("solver", e))?;
    Ok(s)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::invalid("label", "must not be empty"));
        }
        self.build_problem()?;
        self.solver.validate().map_err(|e| prefixed("solver", e))?;
        if self.start.dim() != self.d {
            return Err(Error::invalid(
                "run.start",
                format!("expected {} coordinates, got {}", 2 * self.d, 2 * self.start.dim()),
            ));
        }
        if let Some(b) = self.ema_beta {
            check_beta(b).map_err(|e| prefixed("run", e))?;
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        build_objective(self.problem.clone(), self.d).map_err(|e| prefixed("problem", e))
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut problem = toml::Table::try_from(&self.problem)
            .map_err(|e| Error::invalid("problem", e.to_string()))?;
        problem.insert("d".into(), toml::Value::Integer(self.d as i64));
        let s = &self.solver;
        let raw = RawConfig {
            label: self.label.clone(),
            problem,
            solver: RawSolver {
                method: s.method,
                eta: Some(s.eta),
                co_gamma: s.co_gamma,
                max_iters: Some(s.max_iters as u64),
                eps_stop: Some(s.eps_stop),
                seed: (s.seed != 0).then_some(s.seed),
                noise_sigma: (s.noise_sigma != 0.0).then_some(s.noise_sigma),
                sign_variant: (s.method == Method::SignedHgd).then_some(s.sign_variant),
                schedule: s.schedule,
            },
            run: RawRun {
                start: self.start.as_vector().iter().copied().collect(),
                output: self.output.clone(),
                ema_beta: self.ema_beta,
            },
        };
        toml::to_string(&raw).map_err(|e| Error::invalid("config", e.to_string()))
    }
}

/// Parses and validates config text. `origin` is only used in messages;
/// relative output paths are kept as written.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(origin, e.to_string()))?;
    let (problem, d) = problem_from_table(raw.problem, origin)?;
    let solver = solver_from_raw(raw.solver)?;
    let start = Point::from_slice(&raw.run.start).map_err(|e| prefixed("run.start", e))?;
    let cfg = ExperimentConfig {
        label: raw.label,
        problem,
        d,
        solver,
        start,
        output: raw.run.output,
        ema_beta: raw.run.ema_beta,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file. A relative `output` is resolved against the
/// config's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_config(&text, path)?;
    if cfg.output.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.output = dir.join(&cfg.output);
        }
    }
    Ok(cfg)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("ema_beta", "must lie in (0, 1)"))
    }
}

/// Exponential moving average `e_t = β·e_{t−1} + (1−β)·z_t`, `e_0 = z_0`.
pub fn track_ema(iterates: &[Point], beta: f64) -> Result<Vec<DVector<f64>>> {
    check_beta(beta)?;
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(iterates.len());
    for p in iterates {
        let next = match out.last() {
            None => p.as_vector().clone(),
            Some(prev) => prev * beta + p.as_vector() * (1.0 - beta),
        };
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub terminated_by: Termination,
    pub steps: usize,
    pub final_grad_norm: f64,
    pub final_point: Point,
    pub output: PathBuf,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(d: usize, ema: bool) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    let coords = |prefix: &str| -> Vec<String> {
        (0..d)
            .map(|i| format!("{prefix}x1_{i}"))
            .chain((0..d).map(|i| format!("{prefix}x2_{i}")))
            .collect()
    };
    h.extend(coords(""));
    h.extend(["g", "grad_norm", "hamiltonian", "step_size"].map(String::from));
    if ema {
        h.extend(coords("ema_"));
    }
    h
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes one row per iterate.
pub fn write_trajectory(path: &Path, traj: &Trajectory, ema: Option<&[DVector<f64>]>) -> Result<()> {
    let d = traj.iterates.first().map_or(0, Point::dim);
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(d, ema.is_some()))?;
    for (k, (p, diag)) in traj.iterates.iter().zip(&traj.diagnostics).enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(p.as_vector().iter().map(|&v| float(v)));
        row.extend([diag.g, diag.grad_norm, diag.hamiltonian, diag.step_size].map(float));
        if let Some(e) = ema {
            row.extend(e[k].iter().map(|&v| float(v)));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the experiment and writes its trajectory to `config.output`.
/// Divergence is reported in the summary, not as an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let problem = config.build_problem()?;
    let traj = run(&problem, &config.solver, &config.start)?;
    let ema = config.ema_beta.map(|b| track_ema(&traj.iterates, b)).transpose()?;
    write_trajectory(&config.output, &traj, ema.as_deref())?;
    Ok(Summary {
        label: config.label.clone(),
        terminated_by: traj.terminated_by,
        steps: traj.steps_taken,
        final_grad_norm: traj.final_grad_norm(),
        final_point: traj.last().clone(),
        output: config.output.clone(),
    })
}

/// Writes `label,terminated_by,steps,final_grad_norm` for a batch of runs.
pub fn write_summaries(path: &Path, summaries: &[Summary]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "terminated_by", "steps", "final_grad_norm"])?;
    for s in summaries {
        w.write_record([
            s.label.clone(),
            s.terminated_by.to_string(),
            s.steps.to_string(),
            float(s.final_grad_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One cell of the preset matrix.
#[derive(Debug, Clone, Copy)]
struct Cell {
    name: &'static str,
    method: Method,
    eta: f64,
    co_gamma: Option<f64>,
}

const CELLS: [Cell; 5] = [
    Cell { name: "sgda", method: Method::Sgda, eta: 0.01, co_gamma: None },
    Cell { name: "hgd", method: Method::Hgd, eta: 0.01, co_gamma: None },
    Cell { name: "co_gamma0.1", method: Method::Co, eta: 0.1, co_gamma: Some(0.1) },
    Cell { name: "co_gamma1", method: Method::Co, eta: 0.01, co_gamma: Some(1.0) },
    Cell { name: "co_gamma10", method: Method::Co, eta: 0.001, co_gamma: Some(10.0) },
];

/// Iteration budget for a preset cell, by coupling and method.
fn preset_budget(c: f64, method: Method) -> usize {
    match (c >= 10.0, method == Method::Co) {
        (false, false) => 300,
        (false, true) => 100,
        (true, false) => 150,
        (true, true) => 15,
    }
}

/// The 20 standard runs: {softplus, piecewise cosine} × c ∈ {3, 10} ×
/// {SGDA, HGD, CO at three weights}, all from (5, 5).
pub fn preset_appendix_h() -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(20);
    for (kind, base) in [("convex", ScalarBase::Softplus), ("nonconvex", ScalarBase::PiecewiseCosine)] {
        for c in [3.0, 10.0] {
            for cell in CELLS {
                let label = format!("appendix_h_{kind}_c{c}_{}", cell.name);
                let mut solver = SolverConfig::new(cell.method, cell.eta).with_max_iters(preset_budget(c, cell.method));
                solver.co_gamma = cell.co_gamma;
                out.push(ExperimentConfig {
                    output: PathBuf::from(format!("{label}.csv")),
                    label,
                    problem: ProblemFamily::CoupledScalar { base, c },
                    d: 1,
                    solver,
                    start: Point::new(&[5.0], &[5.0]).expect("finite start"),
                    ema_beta: None,
                });
            }
        }
    }
    out
}

/// Runs every preset, writing `<label>.csv` files and `summary.csv` into
/// `outdir`.
pub fn repro_appendix_h(outdir: &Path) -> Result<Vec<Summary>> {
    fs::create_dir_all(outdir)?;
    let mut summaries = Vec::new();
    for mut cfg in preset_appendix_h() {
        cfg.output = outdir.join(&cfg.output);
        summaries.push(run_experiment(&cfg)?);
    }
    write_summaries(&outdir.join("summary.csv"), &summaries)?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    /// First iteration with `‖xi‖ ≤ eps_stop`, if reached.
    pub iters_to_tol: Option<usize>,
    pub final_grad_norm: f64,
    pub reference: Point,
    pub distance: Vec<f64>,
    pub grad_norm: Vec<f64>,
}

/// Critical point used as the distance reference: the contraction fixed
/// point when the coupling dominates the smoothness, the origin otherwise.
pub fn reference_critical_point(problem: &Problem) -> Point {
    separable_critical_point(problem, 1e-14)
        .and_then(|fp| fp.point())
        .unwrap_or_else(|_| Point::zeros(problem.dim()))
}

fn with_coupling(family: &ProblemFamily, c: f64) -> Result<ProblemFamily> {
    match family {
        ProblemFamily::CoupledScalar { base, .. } => Ok(ProblemFamily::CoupledScalar { base: *base, c }),
        ProblemFamily::RegularizedBilinear { f, h, .. } => Ok(ProblemFamily::RegularizedBilinear { f: *f, h: *h, c }),
        _ => Err(Error::invalid("problem.family", "sweeps need a coupled scalar or regularized bilinear family")),
    }
}

/// Reruns `base` once per coupling weight in `c_values`.
pub fn sweep_bilinear_strength(base: &ExperimentConfig, c_values: &[f64]) -> Result<Vec<SweepRow>> {
    if c_values.is_empty() {
        return Err(Error::invalid("c", "need at least one coupling value"));
    }
    let mut rows = Vec::with_capacity(c_values.len());
    for &c in c_values {
        let family = with_coupling(&base.problem, c)?;
        let problem = build_objective(family, base.d).map_err(|e| prefixed("problem", e))?;
        let traj = run(&problem, &base.solver, &base.start)?;
        let reference = reference_critical_point(&problem);
        let distance = traj
            .iterates
            .iter()
            .map(|p| (p.as_vector() - reference.as_vector()).norm())
            .collect();
        let grad_norm: Vec<f64> = traj.diagnostics.iter().map(|d| d.grad_norm).collect();
        rows.push(SweepRow {
            c,
            iters_to_tol: grad_norm.iter().position(|&g| g <= base.solver.eps_stop),
            final_grad_norm: traj.final_grad_norm(),
            reference,
            distance,
            grad_norm,
        });
    }
    Ok(rows)
}

/// Writes `<stem>_c<c>.csv` series files and `<stem>_summary.csv` into `dir`.
pub fn write_sweep(dir: &Path, stem: &str, rows: &[SweepRow]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for row in rows {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_c{}.csv", row.c)))?;
        w.write_record(["iter", "distance", "grad_norm"])?;
        for (k, (dist, g)) in row.distance.iter().zip(&row.grad_norm).enumerate() {
            w.write_record([k.to_string(), float(*dist), float(*g)])?;
        }
        w.flush()?;
    }
    let summary = dir.join(format!("{stem}_summary.csv"));
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["c", "iters_to_tol", "final_grad_norm"])?;
    for row in rows {
        w.write_record([
            row.c.to_string(),
            row.iters_to_tol.map_or_else(|| "none".to_string(), |k| k.to_string()),
            float(row.final_grad_norm),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}
