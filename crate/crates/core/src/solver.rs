//! Cyclic coordinate descent on a working set of pattern columns.
//!
//! The intercept is minimized exactly after every sweep, which keeps
//! `β·θ = 0` for the dual point built from the margins. Termination is
//! certified by the duality gap of the restricted problem: the raw dual
//! vector is scaled by the largest working-set constraint only, since the
//! restricted problem has no other constraints.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pattern_db::{Pattern, PatternDb};
use crate::screening::{occ_bounds, GapCertificate};
use crate::task::{DualPoint, Task};
use crate::tree::TreeNode;

/// Weights below this magnitude are removed from a converged model.
pub const ZERO_WEIGHT: f64 = 1e-12;

/// Sparse linear model over patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub weights: BTreeMap<Pattern, f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl Model {
    pub fn intercept_only(intercept: f64, lambda: f64) -> Self {
        Model {
            weights: BTreeMap::new(),
            intercept,
            lambda,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.values().map(|w| w.abs()).sum()
    }

    pub fn n_active(&self) -> usize {
        self.weights.values().filter(|w| **w != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub pattern: Pattern,
    pub occ: Vec<u32>,
}

impl From<TreeNode> for Column {
    fn from(node: TreeNode) -> Self {
        Column {
            pattern: node.pattern,
            occ: node.occ,
        }
    }
}

/// Pattern columns the restricted problem is solved over, unique by
/// occurrence list.
#[derive(Debug, Clone, Default)]
pub struct WorkingSet {
    columns: Vec<Column>,
    norms: Vec<f64>,
    by_occ: HashMap<Vec<u32>, usize>,
}

impl WorkingSet {
    pub fn new(task: Task, db: &PatternDb, columns: impl IntoIterator<Item = Column>) -> Self {
        let mut ws = WorkingSet::default();
        for c in columns {
            ws.push(task, db, c);
        }
        ws
    }

    /// Adds a column unless one with the same occurrence list exists.
    /// Returns whether it was added.
    pub fn push(&mut self, task: Task, db: &PatternDb, column: Column) -> bool {
        if self.by_occ.contains_key(&column.occ) {
            return false;
        }
        let y = db.responses();
        let norm = column
            .occ
            .iter()
            .map(|&r| task.beta(y[r as usize]).powi(2))
            .sum();
        self.by_occ.insert(column.occ.clone(), self.columns.len());
        self.columns.push(column);
        self.norms.push(norm);
        true
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// `Σ_i α_it²` per column.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of_occ(&self, occ: &[u32]) -> Option<usize> {
        self.by_occ.get(occ).copied()
    }

    /// `max_t |α_t·θ|` over the working set (0 when empty).
    pub fn max_abs_inner(&self, task: Task, db: &PatternDb, theta: &[f64]) -> f64 {
        let y = db.responses();
        self.columns
            .iter()
            .map(|c| occ_bounds(task, y, &c.occ, theta).inner.abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_epochs: usize,
    /// Recompute margins from scratch every this many epochs.
    pub refresh_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_epochs: 100_000,
            refresh_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub epochs: usize,
    pub final_gap: f64,
    pub converged: bool,
    pub primal: f64,
    pub dual: f64,
    /// `max(1, max_t |α_t·θ_raw|)` over the working set at the final iterate.
    pub dual_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub model: Model,
    /// Dual point feasible for the restricted problem.
    pub dual: DualPoint,
    pub report: SolveReport,
}

#[inline]
pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

struct State<'a> {
    task: Task,
    db: &'a PatternDb,
    ws: &'a WorkingSet,
    beta: Vec<f64>,
    w: Vec<f64>,
    offsets: Vec<f64>,
    intercept: f64,
    margins: Vec<f64>,
}

impl State<'_> {
    fn refresh(&mut self) {
        self.offsets.iter_mut().for_each(|o| *o = 0.0);
        for (col, &w) in self.ws.columns.iter().zip(&self.w) {
            if w != 0.0 {
                for &r in &col.occ {
                    self.offsets[r as usize] += w;
                }
            }
        }
        self.recompute_margins();
    }

    fn recompute_margins(&mut self) {
        let y = self.db.responses();
        let (task, b) = (self.task, self.intercept);
        for (((z, &beta), &off), &yi) in self.margins.iter_mut().zip(&self.beta).zip(&self.offsets).zip(y) {
            *z = beta * (off + b) + task.gamma(yi);
        }
    }

    fn update_intercept(&mut self) {
        let b = self.task.optimal_intercept(self.db, &self.offsets);
        let shift = b - self.intercept;
        self.intercept = b;
        if shift != 0.0 {
            for (z, &beta) in self.margins.iter_mut().zip(&self.beta) {
                *z += beta * shift;
            }
        }
    }

    fn sweep(&mut self, lambda: f64) {
        let task = self.task;
        for (j, col) in self.ws.columns.iter().enumerate() {
            let lipschitz = self.ws.norms[j] * task.curvature_bound();
            if lipschitz == 0.0 {
                continue;
            }
            let grad: f64 = col
                .occ
                .iter()
                .map(|&r| self.beta[r as usize] * task.loss_deriv(self.margins[r as usize]))
                .sum();
            let old = self.w[j];
            let new = soft_threshold(old * lipschitz - grad, lambda) / lipschitz;
            let delta = new - old;
            if delta != 0.0 {
                self.w[j] = new;
                for &r in &col.occ {
                    let r = r as usize;
                    self.offsets[r] += delta;
                    self.margins[r] += self.beta[r] * delta;
                }
            }
        }
    }

    fn certificate(&self, lambda: f64) -> Result<(GapCertificate, DualPoint)> {
        let task = self.task;
        let raw: Vec<f64> = self
            .margins
            .iter()
            .map(|&z| -task.loss_deriv(z) / lambda)
            .collect();
        let constraint_max = self.ws.max_abs_inner(task, self.db, &raw);
        let dual = DualPoint::from_raw(raw, constraint_max)?;
        let primal: f64 = self.margins.iter().map(|&z| task.loss(z)).sum::<f64>()
            + lambda * self.w.iter().map(|w| w.abs()).sum::<f64>();
        let dual_value = task.dual_value(self.db, &dual.theta, lambda);
        Ok((GapCertificate::new(primal, dual_value, lambda)?, dual))
    }
}

/// Solves the problem restricted to `ws` at `lambda`, warm-started from
/// `init`. Weights of `init` on patterns outside the working set are moved to
/// an occurrence-identical column when there is one and dropped otherwise.
pub fn solve(
    db: &PatternDb,
    task: Task,
    ws: &WorkingSet,
    lambda: f64,
    init: &Model,
    opts: &SolverOptions,
) -> Result<Solution> {
    let n = db.n();
    let y = db.responses();
    let index: HashMap<&Pattern, usize> = ws
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| (&c.pattern, j))
        .collect();
    let mut w = vec![0.0; ws.len()];
    let mut dropped = 0usize;
    for (pattern, &weight) in &init.weights {
        let slot = index
            .get(pattern)
            .copied()
            .or_else(|| ws.index_of_occ(&db.occurrences(pattern)));
        match slot {
            Some(j) => w[j] += weight,
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} warm-start weights outside the working set were dropped");
    }

    let mut state = State {
        task,
        db,
        ws,
        beta: y.iter().map(|&yi| task.beta(yi)).collect(),
        w,
        offsets: vec![0.0; n],
        intercept: init.intercept,
        margins: vec![0.0; n],
    };
    state.refresh();
    state.update_intercept();

    let refresh_every = opts.refresh_every.max(1);
    let (mut cert, mut dual) = state.certificate(lambda)?;
    let mut epochs = 0;
    while cert.gap > opts.tol && epochs < opts.max_epochs {
        epochs += 1;
        state.sweep(lambda);
        if epochs % refresh_every == 0 {
            state.refresh();
        }
        state.update_intercept();
        (cert, dual) = state.certificate(lambda)?;
    }

    let converged = cert.gap <= opts.tol;
    let weights = ws
        .columns
        .iter()
        .zip(&state.w)
        .filter(|(_, w)| w.abs() >= ZERO_WEIGHT)
        .map(|(c, &w)| (c.pattern.clone(), w))
        .collect();
    let dual_scale = dual.scale;
    Ok(Solution {
        model: Model {
            weights,
            intercept: state.intercept,
            lambda,
        },
        dual,
        report: SolveReport {
            epochs,
            final_gap: cert.gap,
            converged,
            primal: cert.primal,
            dual: cert.dual,
            dual_scale,
        },
    })
}

/// Largest violation of the optimality conditions over the working set:
/// `|α_t·θ| ≤ 1` for zero weights, `α_t·θ = sign(w_t)` otherwise.
pub fn kkt_violation(db: &PatternDb, task: Task, ws: &WorkingSet, model: &Model, theta: &[f64]) -> f64 {
    let y = db.responses();
    ws.columns
        .iter()
        .map(|c| {
            let inner = occ_bounds(task, y, &c.occ, theta).inner;
            match model.weights.get(&c.pattern) {
                Some(&w) if w != 0.0 => (inner - w.signum()).abs(),
                _ => (inner.abs() - 1.0).max(0.0),
            }
        })
        .fold(0.0, f64::max)
}
