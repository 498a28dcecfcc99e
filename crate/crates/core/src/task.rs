//! Loss functions, primal/dual objectives and dual point construction.
//!
//! Both tasks are instances of
//!
//! ```text
//! min_{w,b}  Σ_i f(α_i·w + β_i b + γ_i) + λ‖w‖₁
//! ```
//!
//! with dual
//!
//! ```text
//! max_θ  −(λ²/2)‖θ‖² + λ δ·θ   s.t. |Σ_i α_it θ_i| ≤ 1 ∀t,  β·θ = 0,  θ_i ≥ ε.
//! ```
//!
//! | task           | f(z)                | α_i     | β_i | γ_i  | δ | ε  |
//! |----------------|---------------------|---------|-----|------|---|----|
//! | regression     | z²/2                | x_i     | 1   | −y_i | y | −∞ |
//! | classification | max(0, 1 − z)²/2    | y_i x_i | y_i | 0    | 1 | 0  |
//!
//! In both cases `α_it = β_i x_it`, which the rest of the crate relies on:
//! a pattern's column is `β_i` on its occurrence rows and zero elsewhere.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern_db::{Pattern, PatternDb};
use crate::solver::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" | "regression" => Ok(Task::Regression),
            "clf" | "classification" => Ok(Task::Classification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

impl Task {
    #[inline]
    pub fn loss(self, z: f64) -> f64 {
        match self {
            Task::Regression => 0.5 * z * z,
            Task::Classification => {
                let h = (1.0 - z).max(0.0);
                0.5 * h * h
            }
        }
    }

    #[inline]
    pub fn loss_deriv(self, z: f64) -> f64 {
        match self {
            Task::Regression => z,
            Task::Classification => -(1.0 - z).max(0.0),
        }
    }

    /// Upper bound on f″, the per-row curvature.
    pub fn curvature_bound(self) -> f64 {
        1.0
    }

    #[inline]
    pub fn beta(self, y: f64) -> f64 {
        match self {
            Task::Regression => 1.0,
            Task::Classification => y,
        }
    }

    #[inline]
    pub fn gamma(self, y: f64) -> f64 {
        match self {
            Task::Regression => -y,
            Task::Classification => 0.0,
        }
    }

    #[inline]
    pub fn delta(self, y: f64) -> f64 {
        match self {
            Task::Regression => y,
            Task::Classification => 1.0,
        }
    }

    /// Lower bound ε on each dual coordinate; `None` means unconstrained.
    pub fn dual_lower_bound(self) -> Option<f64> {
        match self {
            Task::Regression => None,
            Task::Classification => Some(0.0),
        }
    }

    /// `α_ip` for pattern `p` and row `i`.
    pub fn alpha_entry(self, db: &PatternDb, p: &Pattern, row: usize) -> f64 {
        if db.occurs(p, row) {
            self.beta(db.responses()[row])
        } else {
            0.0
        }
    }

    /// Margins `z_i = β_i (o_i + b) + γ_i` where `o = Xw` is the linear
    /// predictor without intercept.
    pub fn margins(self, db: &PatternDb, offsets: &[f64], intercept: f64) -> MarginCache {
        let margins = db
            .responses()
            .iter()
            .zip(offsets)
            .map(|(&y, &o)| self.beta(y) * (o + intercept) + self.gamma(y))
            .collect();
        MarginCache { margins }
    }

    /// Margins of `model`, recomputed from the transactions.
    pub fn model_margins(self, db: &PatternDb, model: &Model) -> MarginCache {
        self.margins(db, &linear_predictor(db, model), model.intercept)
    }

    pub fn loss_sum(self, margins: &MarginCache) -> f64 {
        margins.margins.iter().map(|&z| self.loss(z)).sum()
    }

    /// `P_λ(w, b) = Σ f(z_i) + λ‖w‖₁`.
    pub fn primal_value(self, db: &PatternDb, model: &Model, lambda: f64) -> f64 {
        let margins = self.model_margins(db, model);
        self.loss_sum(&margins) + lambda * model.l1_norm()
    }

    /// `D_λ(θ) = −(λ²/2)‖θ‖² + λ δ·θ`. Feasibility is not checked.
    pub fn dual_value(self, db: &PatternDb, theta: &[f64], lambda: f64) -> f64 {
        let mut sq = 0.0;
        let mut lin = 0.0;
        for (&t, &y) in theta.iter().zip(db.responses()) {
            sq += t * t;
            lin += self.delta(y) * t;
        }
        -0.5 * lambda * lambda * sq + lambda * lin
    }

    /// `θ_raw,i = −f′(z_i)/λ`, the dual point paired with a primal iterate.
    pub fn raw_dual(self, margins: &MarginCache, lambda: f64) -> Vec<f64> {
        margins
            .margins
            .iter()
            .map(|&z| -self.loss_deriv(z) / lambda)
            .collect()
    }

    /// `Σ_i β_i θ_i`; zero for a feasible dual point.
    pub fn beta_dot(self, db: &PatternDb, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(db.responses())
            .map(|(&t, &y)| self.beta(y) * t)
            .sum()
    }

    /// Unpenalized intercept minimizing `Σ f(β_i(o_i + b) + γ_i)` for fixed
    /// offsets, i.e. the root of `Σ β_i f′(z_i) = 0`.
    pub fn optimal_intercept(self, db: &PatternDb, offsets: &[f64]) -> f64 {
        let y = db.responses();
        match self {
            Task::Regression => {
                let n = y.len() as f64;
                y.iter().zip(offsets).map(|(&y, &o)| y - o).sum::<f64>() / n
            }
            Task::Classification => squared_hinge_intercept(y, offsets),
        }
    }
}

/// Stationarity residual below which the intercept is considered optimal.
pub const INTERCEPT_TOL: f64 = 1e-10;

// g(b) = Σ y_i f′(y_i (o_i + b)) is piecewise linear and nondecreasing; a
// Newton step solves the current linear piece exactly, bisection keeps the
// iterate inside the sign bracket.
fn squared_hinge_intercept(y: &[f64], offsets: &[f64]) -> f64 {
    let stationarity = |b: f64| -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        for (&yi, &o) in y.iter().zip(offsets) {
            let slack = 1.0 - yi * (o + b);
            if slack > 0.0 {
                g -= yi * slack;
                h += 1.0;
            }
        }
        (g, h)
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&yi, &o) in y.iter().zip(offsets) {
        // yi (o + b) = 1 at b = yi − o
        lo = lo.min(yi - o);
        hi = hi.max(yi - o);
    }
    lo -= 1.0;
    hi += 1.0;

    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, h) = stationarity(b);
        if g.abs() <= INTERCEPT_TOL * 1e-2 {
            break;
        }
        if g > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let newton = if h > 0.0 { b - g / h } else { f64::NAN };
        b = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * (1.0 + b.abs()) {
            break;
        }
    }
    // Closed-form root of the linear piece the iterate ended on:
    // Σ_A (y_i − o_i − b) = 0 over the rows A with positive slack.
    let active = |b: f64| {
        y.iter()
            .zip(offsets)
            .map(|(&yi, &o)| 1.0 - yi * (o + b) > 0.0)
            .collect::<Vec<bool>>()
    };
    let rows = active(b);
    let count = rows.iter().filter(|&&a| a).count();
    if count > 0 {
        let sum: f64 = y
            .iter()
            .zip(offsets)
            .zip(&rows)
            .filter(|(_, &a)| a)
            .map(|((&yi, &o), _)| yi - o)
            .sum();
        let exact = sum / count as f64;
        if active(exact) == rows {
            return exact;
        }
    }
    b
}

/// Linear predictor `o = Xw` (no intercept) recomputed from the transactions.
pub fn linear_predictor(db: &PatternDb, model: &Model) -> Vec<f64> {
    let mut o = vec![0.0; db.n()];
    for (pattern, &w) in &model.weights {
        for row in db.occurrences(pattern) {
            o[row as usize] += w;
        }
    }
    o
}

/// Current margins `z_i = α_i·w + β_i b + γ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCache {
    pub margins: Vec<f64>,
}

/// A dual vector together with the scale applied to reach feasibility.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub theta: Vec<f64>,
    /// `max(1, constraint_max)`; the raw point was divided by this.
    pub scale: f64,
}

impl DualPoint {
    /// Scales a raw dual vector into the box `|α_t·θ| ≤ 1`, given the largest
    /// `|α_t·θ_raw|` over the constraints that matter.
    pub fn from_raw(raw: Vec<f64>, constraint_max: f64) -> Result<Self> {
        if !(constraint_max >= 0.0) {
            return Err(Error::NegativeConstraintMax(constraint_max));
        }
        let scale = constraint_max.max(1.0);
        let theta = if scale == 1.0 {
            raw
        } else {
            raw.into_iter().map(|t| t / scale).collect()
        };
        Ok(DualPoint { theta, scale })
    }
}

/// Dual feasible point for `model` at `lambda`. `constraint_max` must be
/// `max_t |α_t·θ_raw|` over every pattern whose constraint is in force (the
/// whole tree for the full problem, the working set for a restricted one).
pub fn dual_feasible_point(
    task: Task,
    db: &PatternDb,
    model: &Model,
    lambda: f64,
    constraint_max: f64,
) -> Result<DualPoint> {
    let margins = task.model_margins(db, model);
    DualPoint::from_raw(task.raw_dual(&margins, lambda), constraint_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tiny() -> PatternDb {
        // rows {a}, {a,b}, {b}
        PatternDb::new(vec![vec![0], vec![0, 1], vec![1]], vec![2.0, 0.0, -2.0], Task::Regression)
            .unwrap()
    }

    fn constant_model(b: f64, lambda: f64) -> Model {
        Model {
            weights: BTreeMap::new(),
            intercept: b,
            lambda,
        }
    }

    #[test]
    fn alpha_entries() {
        let db = PatternDb::new(vec![vec![0], vec![1]], vec![1.0, -1.0], Task::Classification).unwrap();
        let p0 = Pattern::new(vec![0]).unwrap();
        let p1 = Pattern::new(vec![1]).unwrap();
        assert_eq!(Task::Regression.alpha_entry(&db, &p0, 0), 1.0);
        assert_eq!(Task::Classification.alpha_entry(&db, &p1, 1), -1.0);
        assert_eq!(Task::Classification.alpha_entry(&db, &p0, 1), 0.0);
        assert_eq!(Task::Regression.alpha_entry(&db, &p0, 1), 0.0);
    }

    #[test]
    fn primal_of_mean_model() {
        let db = tiny();
        for lambda in [0.1, 2.0, 50.0] {
            let p = Task::Regression.primal_value(&db, &constant_model(0.0, lambda), lambda);
            assert_eq!(p, 4.0);
        }
    }

    #[test]
    fn classification_primal_at_zero_is_half_n() {
        let db = PatternDb::new(
            vec![vec![0], vec![1], vec![0, 1], vec![]],
            vec![1.0, -1.0, -1.0, 1.0],
            Task::Classification,
        )
        .unwrap();
        let p = Task::Classification.primal_value(&db, &constant_model(0.0, 1.0), 1.0);
        assert_eq!(p, 2.0);
        // all margins ≥ 1 → zero loss
        let db1 = PatternDb::new(vec![vec![0], vec![1]], vec![1.0, 1.0], Task::Classification).unwrap();
        assert_eq!(Task::Classification.primal_value(&db1, &constant_model(3.0, 1.0), 1.0), 0.0);
    }

    #[test]
    fn dual_values() {
        let db = tiny();
        assert_eq!(Task::Regression.dual_value(&db, &[0.0; 3], 2.0), 0.0);
        assert_eq!(Task::Regression.dual_value(&db, &[1.0, 0.0, -1.0], 2.0), 4.0);
        let db2 = PatternDb::new(vec![vec![0], vec![1]], vec![1.0, -1.0], Task::Classification).unwrap();
        assert_eq!(Task::Classification.dual_value(&db2, &[1.0, 0.0], 1.0), 0.5);
    }

    #[test]
    fn dual_point_at_lambda_max_is_unscaled() {
        let db = tiny();
        // λ_max = 2 on this instance
        let theta = dual_feasible_point(Task::Regression, &db, &constant_model(0.0, 2.0), 2.0, 1.0).unwrap();
        assert_eq!(theta.theta, vec![1.0, 0.0, -1.0]);
        assert_eq!(theta.scale, 1.0);
        let halved = dual_feasible_point(Task::Regression, &db, &constant_model(0.0, 2.0), 2.0, 2.0).unwrap();
        assert_eq!(halved.theta, vec![0.5, 0.0, -0.5]);
        assert!(dual_feasible_point(Task::Regression, &db, &constant_model(0.0, 2.0), 2.0, -1.0).is_err());
    }

    #[test]
    fn classification_dual_zero_when_margins_exceed_one() {
        let db = PatternDb::new(vec![vec![0], vec![1]], vec![1.0, 1.0], Task::Classification).unwrap();
        let theta = dual_feasible_point(Task::Classification, &db, &constant_model(2.0, 1.0), 1.0, 0.0).unwrap();
        assert!(theta.theta.iter().all(|&t| t == 0.0));
        assert_eq!(Task::Classification.beta_dot(&db, &theta.theta), 0.0);
    }

    #[test]
    fn squared_hinge_intercept_is_stationary() {
        let y = [1.0, 1.0, 1.0, -1.0, -1.0];
        let offsets = [0.3, -2.0, 0.0, 0.5, 1.7];
        let b = squared_hinge_intercept(&y, &offsets);
        let g: f64 = y
            .iter()
            .zip(&offsets)
            .map(|(&yi, &o)| yi * Task::Classification.loss_deriv(yi * (o + b)))
            .sum();
        assert!(g.abs() <= INTERCEPT_TOL, "g = {g}");
        // no offsets, balanced-ish labels: b = (n₊ − n₋)/n
        let b0 = squared_hinge_intercept(&y, &[0.0; 5]);
        assert!((b0 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_class_intercept_has_zero_loss() {
        let y = [1.0, 1.0];
        let b = squared_hinge_intercept(&y, &[0.0, 0.5]);
        assert!(b >= 1.0 - 1e-12);
    }

    #[test]
    fn loss_derivative_matches_finite_differences() {
        let h = 1e-5;
        for task in [Task::Regression, Task::Classification] {
            for k in -40..=40 {
                // offset keeps the grid off the hinge kink at z = 1
                let z = 1.0365 + k as f64 * 0.0731;
                let fd = (task.loss(z + h) - task.loss(z - h)) / (2.0 * h);
                assert!((task.loss_deriv(z) - fd).abs() <= 1e-6, "{task} z={z}");
            }
        }
    }
}
