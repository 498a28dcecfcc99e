//! Safe pattern pruning.
//!
//! Given any primal iterate `(w̃, b̃)` and any dual feasible `θ̃`, the dual
//! optimum lies in the ball of radius `r = √(2 gap)/λ` around `θ̃` (the dual
//! objective is λ²-strongly concave). A pattern can only be active if its
//! constraint `|α_t·θ*| ≤ 1` is tight, so bounding `|α_t·θ|` over that ball
//! certifies inactivity.
//!
//! For a node `t` and any descendant `t′` the rows of `t′` are a subset of the
//! rows of `t`, which yields the subtree bound
//!
//! ```text
//! |α_t′·θ*| ≤ UB(t′) ≤ SPPC(t) = u_t + r √v_t
//! u_t = max{ Σ_{β_iθ̃_i>0} α_it θ̃_i , −Σ_{β_iθ̃_i<0} α_it θ̃_i },   v_t = Σ_i α_it²
//! ```
//!
//! so a whole subtree is discarded once `SPPC(t) < 1`.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::pattern_db::PatternDb;
use crate::solver::Model;
use crate::task::{DualPoint, Task};
use crate::tree::{TraverseStats, TreeNode, TreeWalker, Visit, Visitor};

/// Slack allowed on weak duality before a negative gap is treated as a bug.
pub const GAP_SLACK: f64 = 1e-9;

/// Slack allowed on the Cauchy–Schwarz radicand of [`ub`].
pub const RADICAND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeBounds {
    /// Sign-split bound on `|α_t·θ|` valid for the whole subtree.
    pub u: f64,
    /// `Σ_i α_it²`.
    pub v: f64,
    /// `Σ_i α_it θ_i`.
    pub inner: f64,
    /// `Σ_i α_it β_i`.
    pub inner_beta: f64,
}

/// Bound quantities of the column supported on `occ` (value `β_i` there).
pub fn occ_bounds(task: Task, responses: &[f64], occ: &[u32], theta: &[f64]) -> NodeBounds {
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut inner = 0.0;
    let mut v = 0.0;
    let mut inner_beta = 0.0;
    for &row in occ {
        let row = row as usize;
        let beta = task.beta(responses[row]);
        let alpha = beta;
        let contrib = alpha * theta[row];
        let sign = beta * theta[row];
        if sign > 0.0 {
            pos += contrib;
        } else if sign < 0.0 {
            neg += contrib;
        }
        inner += contrib;
        v += alpha * alpha;
        inner_beta += alpha * beta;
    }
    NodeBounds {
        u: pos.max(-neg),
        v,
        inner,
        inner_beta,
    }
}

pub fn node_bounds(node: &TreeNode, task: Task, db: &PatternDb, theta: &[f64]) -> NodeBounds {
    occ_bounds(task, db.responses(), &node.occ, theta)
}

/// Duality gap of a primal/dual pair and the radius of the ball around the
/// dual point that contains the dual optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCertificate {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub radius: f64,
}

impl GapCertificate {
    pub fn new(primal: f64, dual: f64, lambda: f64) -> Result<Self> {
        let raw = primal - dual;
        if raw < -GAP_SLACK || raw.is_nan() {
            return Err(Error::NegativeGap(raw));
        }
        let gap = raw.max(0.0);
        Ok(GapCertificate {
            primal,
            dual,
            gap,
            radius: (2.0 * gap).sqrt() / lambda,
        })
    }
}

/// Certificate for `model` and a dual feasible `theta` at `lambda`.
pub fn gap_certificate(
    task: Task,
    db: &PatternDb,
    model: &Model,
    theta: &[f64],
    lambda: f64,
) -> Result<GapCertificate> {
    GapCertificate::new(
        task.primal_value(db, model, lambda),
        task.dual_value(db, theta, lambda),
        lambda,
    )
}

/// Maximum of `|α_t·θ|` over the gap ball intersected with `β·θ = 0`:
/// `|α_t·θ̃| + r √(v − (α_t·β)²/‖β‖²)`.
pub fn ub(inner: f64, v: f64, inner_beta: f64, radius: f64, beta_norm_sq: f64) -> Result<f64> {
    let radicand = v - inner_beta * inner_beta / beta_norm_sq;
    if radicand < -RADICAND_SLACK {
        return Err(Error::NegativeRadicand(radicand));
    }
    Ok(inner.abs() + radius * radicand.max(0.0).sqrt())
}

/// `u_t + r √v_t`; the subtree below `t` is inactive when this is `< 1`.
pub fn sppc(bounds: &NodeBounds, radius: f64) -> f64 {
    bounds.u + radius * bounds.v.sqrt()
}

/// Drops nodes whose occurrence list repeats an earlier node's, keeping the
/// first (lexicographically smallest in traversal order).
pub fn dedup_by_occ(nodes: Vec<TreeNode>) -> Vec<TreeNode> {
    let mut seen: HashSet<Vec<u32>> = HashSet::with_capacity(nodes.len());
    nodes
        .into_iter()
        .filter(|n| seen.insert(n.occ.clone()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScreenResult {
    /// Patterns that may be active, deduplicated by occurrence list.
    pub kept: Vec<TreeNode>,
    pub stats: TraverseStats,
    pub cert: GapCertificate,
}

struct ScreenVisitor<'a> {
    task: Task,
    responses: &'a [f64],
    theta: &'a [f64],
    radius: f64,
    beta_norm_sq: f64,
    error: Option<Error>,
}

impl Visitor for ScreenVisitor<'_> {
    fn visit(&mut self, node: &TreeNode) -> Visit {
        let b = occ_bounds(self.task, self.responses, &node.occ, self.theta);
        if sppc(&b, self.radius) < 1.0 {
            return Visit {
                keep: false,
                descend: false,
            };
        }
        let keep = match ub(b.inner, b.v, b.inner_beta, self.radius, self.beta_norm_sq) {
            Ok(bound) => bound >= 1.0,
            Err(e) => {
                self.error.get_or_insert(e);
                true
            }
        };
        Visit {
            keep,
            descend: true,
        }
    }
}

/// One pruned traversal producing a superset of the active patterns at
/// `lambda`. `theta` must be feasible for the full problem.
pub fn safe_screen(
    db: &PatternDb,
    task: Task,
    walker: &TreeWalker,
    model: &Model,
    theta: &DualPoint,
    lambda: f64,
) -> Result<ScreenResult> {
    let cert = gap_certificate(task, db, model, &theta.theta, lambda)?;
    screen_with_certificate(db, task, walker, &theta.theta, cert)
}

/// [`safe_screen`] with a precomputed certificate.
pub fn screen_with_certificate(
    db: &PatternDb,
    task: Task,
    walker: &TreeWalker,
    theta: &[f64],
    cert: GapCertificate,
) -> Result<ScreenResult> {
    let responses = db.responses();
    let beta_norm_sq: f64 = responses.iter().map(|&y| task.beta(y).powi(2)).sum();
    let walk = walker.walk(db, || ScreenVisitor {
        task,
        responses,
        theta,
        radius: cert.radius,
        beta_norm_sq,
        error: None,
    });
    if let Some(err) = walk.visitors.into_iter().find_map(|v| v.error) {
        return Err(err);
    }
    Ok(ScreenResult {
        kept: dedup_by_occ(walk.kept),
        stats: walk.stats,
        cert,
    })
}

#[derive(Debug, Clone)]
pub struct MaxInner {
    /// Largest `|α_t·θ|` found. Exact whenever it exceeds the floor passed to
    /// [`max_abs_inner`]; otherwise only a lower bound.
    pub value: f64,
    /// First pattern in traversal order attaining `value`.
    pub argmax: Option<TreeNode>,
    pub stats: TraverseStats,
}

struct MaxVisitor<'a> {
    task: Task,
    responses: &'a [f64],
    theta: &'a [f64],
    floor: f64,
    best: f64,
    argmax: Option<TreeNode>,
}

impl Visitor for MaxVisitor<'_> {
    fn visit(&mut self, node: &TreeNode) -> Visit {
        let b = occ_bounds(self.task, self.responses, &node.occ, self.theta);
        let value = b.inner.abs();
        if value > self.best {
            self.best = value;
            self.argmax = Some(node.clone());
        }
        Visit {
            keep: false,
            descend: b.u > self.best.max(self.floor),
        }
    }
}

/// `max_t |Σ_i α_it θ_i|` over all patterns up to the walker's depth.
///
/// Subtrees whose sign-split bound cannot beat `max(best so far, floor)` are
/// skipped. Pass `floor = 0` for the exact maximum; a positive floor is for
/// callers that only care about values above it.
pub fn max_abs_inner(
    db: &PatternDb,
    task: Task,
    walker: &TreeWalker,
    theta: &[f64],
    floor: f64,
) -> MaxInner {
    let responses = db.responses();
    let walk = walker.walk(db, || MaxVisitor {
        task,
        responses,
        theta,
        floor,
        best: f64::NEG_INFINITY,
        argmax: None,
    });
    let mut value = f64::NEG_INFINITY;
    let mut argmax = None;
    for v in walk.visitors {
        if v.best > value {
            value = v.best;
            argmax = v.argmax;
        }
    }
    MaxInner {
        value: value.max(0.0),
        argmax,
        stats: walk.stats,
    }
}

#[derive(Debug, Clone)]
pub struct LambdaMax {
    pub value: f64,
    /// Optimal intercept of the all-zero-weight model.
    pub intercept: f64,
    pub argmax: Option<TreeNode>,
    pub stats: TraverseStats,
}

/// Smallest λ at which `w = 0` (with the optimal intercept) is optimal:
/// `max_t |Σ_i α_it (−f′(z_i⁰))|` with `z⁰` the margins of that model.
/// For regression this is `max_t |Σ_i x_it (y_i − ȳ)|`.
pub fn lambda_max(db: &PatternDb, task: Task, walker: &TreeWalker) -> Result<LambdaMax> {
    let zeros = vec![0.0; db.n()];
    let intercept = task.optimal_intercept(db, &zeros);
    let margins = task.margins(db, &zeros, intercept);
    let residual: Vec<f64> = margins.margins.iter().map(|&z| -task.loss_deriv(z)).collect();
    let found = max_abs_inner(db, task, walker, &residual, 0.0);
    let scale: f64 = db.responses().iter().map(|y| y.abs()).sum::<f64>().max(1.0);
    if !(found.value > 1e-12 * scale) {
        return Err(Error::DegenerateResponse);
    }
    Ok(LambdaMax {
        value: found.value,
        intercept,
        argmax: found.argmax,
        stats: found.stats,
    })
}
