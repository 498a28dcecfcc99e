//! Regularization paths.
//!
//! The SPP path starts at λ_max with `w = 0` and walks a log-spaced grid. At
//! each λ it builds a dual feasible point from the previous solution, screens
//! the tree once, and solves the problem restricted to the surviving
//! patterns. The boosting path instead grows a working set one most-violating
//! pattern at a time, paying a tree traversal per added pattern. The naive
//! path enumerates every pattern and solves the dense problem.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle;
use crate::pattern_db::{Pattern, PatternDb};
use crate::screening::{gap_certificate, lambda_max, max_abs_inner, safe_screen, LambdaMax};
use crate::solver::{solve, Column, Model, Solution, SolverOptions, WorkingSet};
use crate::task::{DualPoint, Task};
use crate::tree::{TraverseStats, TreeWalker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spp,
    Boosting,
    Naive,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spp" => Ok(Method::Spp),
            "boosting" => Ok(Method::Boosting),
            "naive" => Ok(Method::Naive),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Number of steps K; the grid has K + 1 values.
    pub num_lambdas: usize,
    pub lambda_min_ratio: f64,
    /// Duality-gap tolerance of every solve.
    pub tol: f64,
    pub maxpat: usize,
    pub method: Method,
    pub threads: usize,
    /// Check every pattern's dual constraint after each solve.
    pub verify: bool,
    pub max_epochs: usize,
    /// Boosting stops once no pattern exceeds its constraint by more than this.
    pub violation_tol: f64,
    /// Upper bound on enumerated patterns for the naive method.
    pub naive_cap: usize,
    pub naive_tol: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            num_lambdas: 100,
            lambda_min_ratio: 0.01,
            tol: 1e-6,
            maxpat: 3,
            method: Method::Spp,
            threads: 1,
            verify: false,
            max_epochs: 100_000,
            violation_tol: 1e-6,
            naive_cap: 5000,
            naive_tol: 1e-9,
        }
    }
}

impl PathConfig {
    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_epochs: self.max_epochs,
            ..SolverOptions::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.maxpat == 0 {
            return Err(Error::Config("maxpat must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Config("lambda_min_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub lambda: f64,
    pub model: Model,
    /// Duality gap of the full problem when a full-tree dual scale is known
    /// (verification on, boosting, naive); otherwise of the restricted problem.
    pub gap: f64,
    pub primal: f64,
    pub dual: f64,
    pub converged: bool,
    pub n_active: usize,
    /// Size of the working set the solver ran on.
    pub n_kept: usize,
    pub nodes_visited: u64,
    pub nodes_pruned: u64,
    pub epochs: usize,
    pub traverse_ms: f64,
    pub solve_ms: f64,
    /// `max(0, max_t |α_t·θ| − 1)` over all patterns for the returned dual
    /// point, when verification ran.
    pub max_violation: Option<f64>,
    /// Patterns of the working set.
    pub kept: Vec<Pattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub method: Method,
    pub task: Task,
    pub lambda_max: f64,
    pub records: Vec<PathRecord>,
}

impl PathResult {
    pub fn total_nodes_visited(&self) -> u64 {
        self.records.iter().map(|r| r.nodes_visited).sum()
    }
}

/// `λ_k = λ_max · ratio^(k/K)` for `k = 0..=K`.
pub fn lambda_grid(lambda_max: f64, num_lambdas: usize, ratio: f64) -> Result<Vec<f64>> {
    if !(lambda_max > 0.0) {
        return Err(Error::Config("λ_max must be positive".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("lambda ratio {ratio} outside (0, 1)")));
    }
    if num_lambdas == 0 {
        return Ok(vec![lambda_max]);
    }
    Ok((0..=num_lambdas)
        .map(|k| lambda_max * ratio.powf(k as f64 / num_lambdas as f64))
        .collect())
}

pub fn run_path(db: &PatternDb, task: Task, config: &PathConfig) -> Result<PathResult> {
    match config.method {
        Method::Spp => run_spp_path(db, task, config),
        Method::Boosting => run_boosting_path(db, task, config),
        Method::Naive => run_naive_oracle(db, task, config),
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// First record of the SPP and boosting paths: `w = 0` at λ_max, where the
/// largest constraint is exactly λ_max/λ_max = 1 and the gap vanishes.
fn start_record(db: &PatternDb, task: Task, lm: &LambdaMax, elapsed_ms: f64, verify: bool) -> Result<(Model, PathRecord)> {
    let lambda = lm.value;
    let model = Model::intercept_only(lm.intercept, lambda);
    let margins = task.model_margins(db, &model);
    let theta = DualPoint::from_raw(task.raw_dual(&margins, lambda), lm.value / lambda)?;
    let cert = gap_certificate(task, db, &model, &theta.theta, lambda)?;
    let record = PathRecord {
        lambda,
        model: model.clone(),
        gap: cert.gap,
        primal: cert.primal,
        dual: cert.dual,
        converged: true,
        n_active: 0,
        n_kept: 0,
        nodes_visited: lm.stats.nodes_visited,
        nodes_pruned: lm.stats.nodes_pruned,
        epochs: 0,
        traverse_ms: elapsed_ms,
        solve_ms: 0.0,
        max_violation: verify.then_some((lm.value / lambda - 1.0).max(0.0)),
        kept: Vec::new(),
    };
    Ok((model, record))
}

struct FullCheck {
    violation: f64,
    gap: f64,
    primal: f64,
    dual: f64,
}

/// Checks the solver's dual point against every pattern's constraint and
/// certifies the full-problem gap with the exact full-tree scale.
fn full_check(db: &PatternDb, task: Task, walker: &TreeWalker, sol: &Solution, lambda: f64) -> Result<(FullCheck, TraverseStats)> {
    let margins = task.model_margins(db, &sol.model);
    let raw = task.raw_dual(&margins, lambda);
    let ws_scale = sol.dual.scale;
    let found = max_abs_inner(db, task, walker, &raw, ws_scale);
    // anything above the floor is found exactly; otherwise the floor bounds it
    let full_max = found.value.max(ws_scale);
    let violation = (found.value / ws_scale - 1.0).max(0.0);
    let theta = DualPoint::from_raw(raw, full_max)?;
    let cert = gap_certificate(task, db, &sol.model, &theta.theta, lambda)?;
    Ok((
        FullCheck {
            violation,
            gap: cert.gap,
            primal: cert.primal,
            dual: cert.dual,
        },
        found.stats,
    ))
}

const RETRIES: usize = 3;

pub fn run_spp_path(db: &PatternDb, task: Task, config: &PathConfig) -> Result<PathResult> {
    config.validate()?;
    let walker = TreeWalker::with_threads(config.maxpat, config.threads)?;
    let started = Instant::now();
    let lm = lambda_max(db, task, &walker)?;
    let grid = lambda_grid(lm.value, config.num_lambdas, config.lambda_min_ratio)?;
    let (mut model, first) = start_record(db, task, &lm, ms(started), config.verify)?;
    let mut records = vec![first];

    for &lambda in &grid[1..] {
        let mut stats = TraverseStats::default();
        let mut traverse_ms = 0.0;
        let mut solve_ms = 0.0;
        let mut opts = config.solver_options();
        let mut init = model.clone();
        let mut attempt = 0;
        let (sol, ws, check, certified) = loop {
            // dual feasible point from the current iterate, scaled over the whole tree
            let t = Instant::now();
            let margins = task.model_margins(db, &init);
            let raw = task.raw_dual(&margins, lambda);
            let scale = max_abs_inner(db, task, &walker, &raw, 1.0);
            stats.merge(&scale.stats);
            let theta = DualPoint::from_raw(raw, scale.value)?;
            let screen = safe_screen(db, task, &walker, &init, &theta, lambda)?;
            stats.merge(&screen.stats);
            traverse_ms += ms(t);

            let ws = WorkingSet::new(task, db, screen.kept.into_iter().map(Column::from));
            let t = Instant::now();
            let sol = solve(db, task, &ws, lambda, &init, &opts)?;
            solve_ms += ms(t);

            let check = if config.verify {
                let t = Instant::now();
                let (check, _) = full_check(db, task, &walker, &sol, lambda)?;
                traverse_ms += ms(t);
                Some(check)
            } else {
                None
            };
            let certified = sol.report.converged && check.as_ref().is_none_or(|c| c.gap <= config.tol);
            if certified || attempt == RETRIES {
                break (sol, ws, check, certified);
            }
            attempt += 1;
            log::debug!("λ = {lambda:e}: retry {attempt} (gap {:e})", sol.report.final_gap);
            if sol.report.converged {
                opts.tol /= 10.0;
            }
            init = sol.model;
        };
        if !sol.report.converged {
            return Err(Error::SolverAbort {
                lambda,
                gap: sol.report.final_gap,
                epochs: sol.report.epochs,
            });
        }

        let (gap, primal, dual, max_violation) = match &check {
            Some(c) => (c.gap, c.primal, c.dual, Some(c.violation)),
            None => (sol.report.final_gap, sol.report.primal, sol.report.dual, None),
        };
        records.push(PathRecord {
            lambda,
            model: sol.model.clone(),
            gap,
            primal,
            dual,
            converged: certified,
            n_active: sol.model.n_active(),
            n_kept: ws.len(),
            nodes_visited: stats.nodes_visited,
            nodes_pruned: stats.nodes_pruned,
            epochs: sol.report.epochs,
            traverse_ms,
            solve_ms,
            max_violation,
            kept: ws.columns().iter().map(|c| c.pattern.clone()).collect(),
        });
        model = sol.model;
    }
    Ok(PathResult {
        method: Method::Spp,
        task,
        lambda_max: lm.value,
        records,
    })
}

pub fn run_boosting_path(db: &PatternDb, task: Task, config: &PathConfig) -> Result<PathResult> {
    config.validate()?;
    let walker = TreeWalker::with_threads(config.maxpat, config.threads)?;
    let started = Instant::now();
    let lm = lambda_max(db, task, &walker)?;
    let grid = lambda_grid(lm.value, config.num_lambdas, config.lambda_min_ratio)?;
    let (mut model, first) = start_record(db, task, &lm, ms(started), config.verify)?;
    let mut records = vec![first];
    let mut ws = WorkingSet::default();
    for &lambda in &grid[1..] {
        let mut stats = TraverseStats::default();
        let mut traverse_ms = 0.0;
        let mut solve_ms = 0.0;
        let mut epochs = 0;
        let mut opts = config.solver_options();
        let mut tightened = 0;
        let (sol, cert, violation, converged) = loop {
            let t = Instant::now();
            let sol = solve(db, task, &ws, lambda, &model, &opts)?;
            solve_ms += ms(t);
            epochs += sol.report.epochs;
            if !sol.report.converged {
                return Err(Error::SolverAbort {
                    lambda,
                    gap: sol.report.final_gap,
                    epochs: sol.report.epochs,
                });
            }

            // most violated constraint over the whole tree
            let t = Instant::now();
            let margins = task.model_margins(db, &sol.model);
            let raw = task.raw_dual(&margins, lambda);
            let ws_scale = sol.dual.scale;
            let found = max_abs_inner(db, task, &walker, &raw, ws_scale);
            stats.merge(&found.stats);
            traverse_ms += ms(t);

            let violated = found.value > ws_scale;
            if found.value > ws_scale * (1.0 + config.violation_tol) {
                let node = found.argmax.clone().expect("a value above the floor has an argmax");
                if ws.push(task, db, Column::from(node)) {
                    model = sol.model;
                    continue;
                }
                log::warn!("λ = {lambda:e}: most violating pattern already in the working set");
            }
            let full_max = found.value.max(ws_scale);
            let theta = DualPoint::from_raw(raw, full_max)?;
            let cert = gap_certificate(task, db, &sol.model, &theta.theta, lambda)?;
            let violation = (found.value / ws_scale - 1.0).max(0.0);
            if cert.gap <= config.tol {
                break (sol, cert, violation, true);
            }
            // small violations still cost gap: add the violator, else solve tighter
            if violated {
                let node = found.argmax.clone().expect("a value above the floor has an argmax");
                if ws.push(task, db, Column::from(node)) {
                    model = sol.model;
                    continue;
                }
            }
            if tightened == RETRIES {
                log::warn!("λ = {lambda:e}: full gap {:e} above tolerance", cert.gap);
                break (sol, cert, violation, false);
            }
            tightened += 1;
            opts.tol /= 10.0;
            model = sol.model;
        };
        records.push(PathRecord {
            lambda,
            model: sol.model.clone(),
            gap: cert.gap,
            primal: cert.primal,
            dual: cert.dual,
            converged,
            n_active: sol.model.n_active(),
            n_kept: ws.len(),
            nodes_visited: stats.nodes_visited,
            nodes_pruned: stats.nodes_pruned,
            epochs,
            traverse_ms,
            solve_ms,
            max_violation: config.verify.then_some(violation),
            kept: ws.columns().iter().map(|c| c.pattern.clone()).collect(),
        });
        model = sol.model;
    }
    Ok(PathResult {
        method: Method::Boosting,
        task,
        lambda_max: lm.value,
        records,
    })
}

pub fn run_naive_oracle(db: &PatternDb, task: Task, config: &PathConfig) -> Result<PathResult> {
    config.validate()?;
    let started = Instant::now();
    let problem = oracle::enumerate_all(db, task, config.maxpat, config.naive_cap)?;
    let enumerate_ms = ms(started);
    let lm = problem.lambda_max();
    let scale: f64 = db.responses().iter().map(|y| y.abs()).sum::<f64>().max(1.0);
    if !(lm > 1e-12 * scale) {
        return Err(Error::DegenerateResponse);
    }
    let grid = lambda_grid(lm, config.num_lambdas, config.lambda_min_ratio)?;
    let mut records = Vec::with_capacity(grid.len());
    let mut warm: Option<oracle::DenseSolution> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let t = Instant::now();
        let sol = oracle::solve_dense(&problem, lambda, config.naive_tol, warm.as_ref())?;
        let solve_ms = ms(t);
        let model = Model {
            weights: sol
                .w
                .iter()
                .zip(&problem.patterns)
                .filter(|(w, _)| **w != 0.0)
                .map(|(&w, p)| (p.clone(), w))
                .collect(),
            intercept: sol.b,
            lambda,
        };
        let worst = problem
            .columns
            .iter()
            .map(|c| c.iter().zip(&sol.theta).map(|(a, t)| a * t).sum::<f64>().abs())
            .fold(0.0, f64::max);
        records.push(PathRecord {
            lambda,
            n_active: model.n_active(),
            model,
            gap: sol.gap,
            primal: sol.primal,
            dual: sol.dual,
            converged: true,
            n_kept: problem.num_columns(),
            nodes_visited: if k == 0 { problem.num_columns() as u64 } else { 0 },
            nodes_pruned: 0,
            epochs: sol.iterations,
            traverse_ms: if k == 0 { enumerate_ms } else { 0.0 },
            solve_ms,
            max_violation: config.verify.then_some((worst - 1.0).max(0.0)),
            kept: problem.patterns.clone(),
        });
        warm = Some(sol);
    }
    Ok(PathResult {
        method: Method::Naive,
        task,
        lambda_max: lm,
        records,
    })
}
