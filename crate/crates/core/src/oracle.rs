//! Brute-force reference machinery.
//!
//! Everything here is deliberately independent of the tree walk, the bound
//! computations and the coordinate-descent solver: patterns are enumerated
//! from per-transaction subsets, the full dense problem is solved by
//! accelerated proximal gradient, and the ball maximization is done both from
//! the explicit maximizer and by projected gradient ascent. Used by tests and
//! by the `naive` path method.

use std::collections::HashSet;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pattern_db::{Item, Pattern, PatternDb};
use crate::task::Task;

/// Seeds of the random instances used by the property and acceptance tests.
pub const INSTANCE_SEEDS: std::ops::Range<u64> = 1000..1100;

/// Random desk-scale database: `d ∈ 6..=12` items, `n ∈ 10..=30` rows.
pub fn random_instance(seed: u64, task: Task) -> PatternDb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(6..=12);
    let n = rng.random_range(10..=30);
    generate(&mut rng, n, d, task)
}

/// Synthetic database of the same distribution with the given size.
pub fn synthetic(n: usize, d: usize, task: Task, seed: u64) -> Result<PatternDb> {
    if n == 0 || d == 0 {
        return Err(Error::Config("synthetic data needs n ≥ 1 and d ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate(&mut rng, n, d, task))
}

// Rows hold 1..=5 distinct items drawn uniformly; responses are standard
// normal (regression) or a fair ±1 coin (classification, both classes forced).
fn generate(rng: &mut ChaCha8Rng, n: usize, d: usize, task: Task) -> PatternDb {
    let mut transactions = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(1..=5usize.min(d));
        let items: Vec<Item> = sample(rng, d, k).into_iter().map(|i| i as Item).collect();
        transactions.push(items);
        responses.push(match task {
            Task::Regression => rng.sample::<f64, _>(StandardNormal),
            Task::Classification => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        });
    }
    if task == Task::Classification && n >= 2 && responses.iter().all(|&y| y == responses[0]) {
        responses[0] = -responses[0];
    }
    PatternDb::new(transactions, responses, task).expect("generated data is valid")
}

fn loss(task: Task, z: f64) -> f64 {
    match task {
        Task::Regression => z * z / 2.0,
        Task::Classification => {
            let s = if z < 1.0 { 1.0 - z } else { 0.0 };
            s * s / 2.0
        }
    }
}

fn loss_grad(task: Task, z: f64) -> f64 {
    match task {
        Task::Regression => z,
        Task::Classification => {
            if z < 1.0 {
                z - 1.0
            } else {
                0.0
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The full problem with every supported pattern as an explicit column.
#[derive(Debug, Clone)]
pub struct DenseProblem {
    pub task: Task,
    /// `columns[j][i] = α_ij`.
    pub columns: Vec<Vec<f64>>,
    pub patterns: Vec<Pattern>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

impl DenseProblem {
    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    /// Rows where column `j` is nonzero.
    pub fn support(&self, j: usize) -> Vec<u32> {
        self.columns[j]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.gamma)
            .map(|(&beta, &gamma)| beta * b + gamma)
            .collect();
        for (col, &wj) in self.columns.iter().zip(w) {
            if wj != 0.0 {
                for (zi, &a) in z.iter_mut().zip(col) {
                    *zi += a * wj;
                }
            }
        }
        z
    }

    fn smooth(&self, z: &[f64]) -> f64 {
        z.iter().map(|&zi| loss(self.task, zi)).sum()
    }

    pub fn primal(&self, w: &[f64], b: f64, lambda: f64) -> f64 {
        self.smooth(&self.margins(w, b)) + lambda * w.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Exact minimizer over the intercept with `w` fixed.
    pub fn best_intercept(&self, w: &[f64]) -> f64 {
        let a = self.margins(w, 0.0);
        match self.task {
            Task::Regression => {
                -dot(&self.beta, &a) / dot(&self.beta, &self.beta)
            }
            Task::Classification => {
                let g = |b: f64| -> f64 {
                    self.beta
                        .iter()
                        .zip(&a)
                        .map(|(&beta, &ai)| beta * loss_grad(self.task, ai + beta * b))
                        .sum()
                };
                let mut lo = -1.0;
                let mut hi = 1.0;
                while g(lo) > 0.0 {
                    lo *= 2.0;
                }
                while g(hi) < 0.0 {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if g(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let b = 0.5 * (lo + hi);
                // g is linear on the set of rows with margin below 1; solve it there
                let on = |b: f64| -> Vec<bool> {
                    a.iter().zip(&self.beta).map(|(&ai, &beta)| ai + beta * b < 1.0).collect()
                };
                let rows = on(b);
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..a.len() {
                    if rows[i] {
                        num += self.beta[i] * (1.0 - a[i]);
                        den += self.beta[i] * self.beta[i];
                    }
                }
                if den > 0.0 && on(num / den) == rows {
                    num / den
                } else {
                    b
                }
            }
        }
    }

    /// Duality gap of `(w, b)` with the dual point `−f′(z)/λ` scaled into
    /// feasibility over all columns. Returns `(primal, dual, θ)`.
    pub fn certificate(&self, w: &[f64], b: f64, lambda: f64) -> (f64, f64, Vec<f64>) {
        let z = self.margins(w, b);
        let raw: Vec<f64> = z.iter().map(|&zi| -loss_grad(self.task, zi) / lambda).collect();
        let worst = self
            .columns
            .iter()
            .map(|c| dot(c, &raw).abs())
            .fold(1.0, f64::max);
        let theta: Vec<f64> = raw.iter().map(|t| t / worst).collect();
        let primal = self.smooth(&z) + lambda * w.iter().map(|x| x.abs()).sum::<f64>();
        let dual = -0.5 * lambda * lambda * dot(&theta, &theta) + lambda * dot(&self.delta, &theta);
        (primal, dual, theta)
    }

    /// `max_j |α_j·(−f′(z⁰))|` at `w = 0` with the best intercept.
    pub fn lambda_max(&self) -> f64 {
        let w = vec![0.0; self.num_columns()];
        let b = self.best_intercept(&w);
        let z = self.margins(&w, b);
        let r: Vec<f64> = z.iter().map(|&zi| -loss_grad(self.task, zi)).collect();
        self.columns.iter().map(|c| dot(c, &r).abs()).fold(0.0, f64::max)
    }
}

/// Every pattern of size ≤ `maxpat` occurring in at least one row, as dense
/// columns in lexicographic order.
pub fn enumerate_all(db: &PatternDb, task: Task, maxpat: usize, cap: usize) -> Result<DenseProblem> {
    let mut found: HashSet<Vec<Item>> = HashSet::new();
    for t in db.transactions() {
        for k in 1..=maxpat.min(t.len()) {
            for combo in t.iter().copied().combinations(k) {
                found.insert(combo);
                if found.len() > cap {
                    return Err(Error::CapExceeded { cap });
                }
            }
        }
    }
    let mut sorted: Vec<Vec<Item>> = found.into_iter().collect();
    sorted.sort();

    let row_sets: Vec<HashSet<Item>> = db
        .transactions()
        .iter()
        .map(|t| t.iter().copied().collect())
        .collect();
    let y = db.responses();
    let beta: Vec<f64> = y.iter().map(|&yi| task.beta(yi)).collect();
    let columns = sorted
        .iter()
        .map(|items| {
            row_sets
                .iter()
                .zip(&beta)
                .map(|(set, &b)| if items.iter().all(|i| set.contains(i)) { b } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(DenseProblem {
        task,
        columns,
        patterns: sorted.into_iter().map(|p| Pattern::new(p).expect("sorted subset")).collect(),
        gamma: y.iter().map(|&yi| task.gamma(yi)).collect(),
        delta: y.iter().map(|&yi| task.delta(yi)).collect(),
        beta,
    })
}

#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// Final Lipschitz estimate, reusable as a warm start.
    pub lipschitz: f64,
}

impl DenseSolution {
    /// Columns with `|w_j| > threshold`.
    pub fn active(&self, threshold: f64) -> Vec<usize> {
        (0..self.w.len()).filter(|&j| self.w[j].abs() > threshold).collect()
    }
}

pub const DENSE_MAX_ITERATIONS: usize = 2_000_000;

/// Accelerated proximal gradient with backtracking and adaptive restart on
/// `(w, b)`, the intercept being an unpenalized coordinate. Stops once the
/// certified gap (with the intercept re-optimized exactly) is `≤ tol`.
pub fn solve_dense(
    p: &DenseProblem,
    lambda: f64,
    tol: f64,
    warm: Option<&DenseSolution>,
) -> Result<DenseSolution> {
    let m = p.num_columns();
    let (mut w, mut b, mut lip) = match warm {
        Some(s) => (s.w.clone(), s.b, s.lipschitz),
        None => (vec![0.0; m], 0.0, 1.0),
    };
    let mut yw = w.clone();
    let mut yb = b;
    let mut t = 1.0f64;
    let mut current = p.primal(&w, b, lambda);

    for iter in 0..DENSE_MAX_ITERATIONS {
        if iter % 10 == 0 {
            let b_opt = p.best_intercept(&w);
            let (primal, dual, theta) = p.certificate(&w, b_opt, lambda);
            if primal - dual <= tol {
                return Ok(DenseSolution {
                    w,
                    b: b_opt,
                    primal,
                    dual,
                    gap: primal - dual,
                    theta,
                    iterations: iter,
                    lipschitz: lip,
                });
            }
        }

        let z = p.margins(&yw, yb);
        let fy = p.smooth(&z);
        let d: Vec<f64> = z.iter().map(|&zi| loss_grad(p.task, zi)).collect();
        let gw: Vec<f64> = p.columns.iter().map(|c| dot(c, &d)).collect();
        let gb = dot(&p.beta, &d);

        let (nw, nb) = loop {
            let nw: Vec<f64> = yw
                .iter()
                .zip(&gw)
                .map(|(&x, &g)| {
                    let v = x - g / lip;
                    let thr = lambda / lip;
                    if v > thr {
                        v - thr
                    } else if v < -thr {
                        v + thr
                    } else {
                        0.0
                    }
                })
                .collect();
            let nb = yb - gb / lip;
            let mut lin = (nb - yb) * gb;
            let mut sq = (nb - yb) * (nb - yb);
            for j in 0..m {
                let s = nw[j] - yw[j];
                lin += s * gw[j];
                sq += s * s;
            }
            let fx = p.smooth(&p.margins(&nw, nb));
            if fx <= fy + lin + 0.5 * lip * sq + 1e-12 * fy.abs().max(1.0) {
                break (nw, nb);
            }
            lip *= 2.0;
        };

        let next = p.primal(&nw, nb, lambda);
        if next > current && t > 1.0 {
            // restart momentum from the last accepted iterate
            yw.clone_from(&w);
            yb = b;
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for j in 0..m {
            yw[j] = nw[j] + mom * (nw[j] - w[j]);
        }
        yb = nb + mom * (nb - b);
        w = nw;
        b = nb;
        t = t_next;
        current = next;
    }
    Err(Error::Config(format!(
        "dense oracle did not reach gap {tol:e} in {DENSE_MAX_ITERATIONS} iterations"
    )))
}

/// `max |α·θ|` over `{‖θ − θ̃‖ ≤ r, β·θ = 0}` evaluated at the explicit
/// maximizers `θ̃ ± (‖β‖ r / √(‖α‖²‖β‖² − (α·β)²)) (α − (α·β/‖β‖²) β)`.
/// Assumes `β·θ̃ = 0`.
pub fn ball_argmax(alpha: &[f64], beta: &[f64], theta: &[f64], r: f64) -> f64 {
    let center = dot(alpha, theta).abs();
    if r == 0.0 {
        return center;
    }
    let aa = dot(alpha, alpha);
    let bb = dot(beta, beta);
    let ab = dot(alpha, beta);
    let det = aa * bb - ab * ab;
    if det <= 1e-14 * aa * bb || aa == 0.0 {
        // α ∥ β: α·θ is constant on the feasible set
        return center;
    }
    let coef = bb.sqrt() * r / det.sqrt();
    let mut best: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let cand: Vec<f64> = (0..theta.len())
            .map(|i| theta[i] + sign * coef * (alpha[i] - ab / bb * beta[i]))
            .collect();
        best = best.max(dot(alpha, &cand).abs());
    }
    best
}

/// Same maximum computed by projected gradient ascent on `±α·θ`, projecting
/// onto the hyperplane and then the (lower-dimensional) ball.
pub fn ball_argmax_numeric(alpha: &[f64], beta: &[f64], theta: &[f64], r: f64, iterations: usize) -> f64 {
    let bb = dot(beta, beta);
    let off = dot(beta, theta) / bb;
    let center: Vec<f64> = theta.iter().zip(beta).map(|(t, b)| t - off * b).collect();
    let r2 = r * r - off * off * bb;
    if r2 < 0.0 {
        return f64::NAN;
    }
    let radius = r2.sqrt();
    let norm_a = dot(alpha, alpha).sqrt();
    if norm_a == 0.0 {
        return 0.0;
    }
    let step = 0.25 * radius.max(1e-300) / norm_a;
    let project = |x: &mut Vec<f64>| {
        let s = dot(beta, x) / bb;
        for (xi, bi) in x.iter_mut().zip(beta) {
            *xi -= s * bi;
        }
        let dist = x
            .iter()
            .zip(&center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt();
        if dist > radius {
            let shrink = radius / dist;
            for (xi, ci) in x.iter_mut().zip(&center) {
                *xi = ci + (*xi - ci) * shrink;
            }
        }
    };
    let mut best: f64 = dot(alpha, &center).abs();
    for sign in [1.0, -1.0] {
        let mut x = center.clone();
        for _ in 0..iterations {
            for (xi, ai) in x.iter_mut().zip(alpha) {
                *xi += sign * step * ai;
            }
            project(&mut x);
            best = best.max(dot(alpha, &x).abs());
        }
    }
    best
}
