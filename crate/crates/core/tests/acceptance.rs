//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Random instances are processed in parallel; every check is deterministic.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use spp::oracle::{self, ball_argmax, ball_argmax_numeric, enumerate_all, random_instance, solve_dense, DenseProblem};
use spp::path::{run_path, Method, PathConfig, PathResult};
use spp::pattern_db::{load_transactions, Format, Pattern, PatternDb};
use spp::screening::{dedup_by_occ, lambda_max, max_abs_inner, sppc, ub, node_bounds};
use spp::solver::{solve, Column, Model, SolverOptions, WorkingSet};
use spp::task::{DualPoint, Task};
use spp::tree::{traverse, TreeWalker, Visit};

const TASKS: [Task; 2] = [Task::Regression, Task::Classification];
/// Oracle weights at or below this are treated as zero.
const ACTIVE_THRESHOLD: f64 = 1e-8;
const NAIVE_TOL: f64 = 1e-10;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn maxpat_for(seed: u64) -> usize {
    2 + (seed % 3) as usize
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn bundled() -> Vec<(Task, PathBuf)> {
    vec![
        (Task::Regression, data_dir().join("synth_reg.tlist")),
        (Task::Classification, data_dir().join("synth_clf.tlist")),
    ]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything computed for one random instance.
#[derive(Default)]
struct InstanceReport {
    safety_checks: usize,
    safety_violations: Vec<String>,
    /// Oracle weights in (0, threshold] whose pattern was screened out.
    tiny_screened: usize,
    spp_rel: f64,
    boost_rel: f64,
    objective_failures: Vec<String>,
    lambda_max_exact: bool,
    lambda_max_detail: String,
    start_ok: bool,
    start_gap: f64,
    cert_checked: usize,
    cert_worst_gap: f64,
    cert_worst_diff: f64,
    cert_failures: Vec<String>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn path_config(method: Method, maxpat: usize) -> PathConfig {
    PathConfig {
        method,
        maxpat,
        verify: true,
        ..PathConfig::default()
    }
}

/// Full gap of a stored model recomputed by the dense oracle.
fn oracle_gap(problem: &DenseProblem, index: &BTreeMap<&Pattern, usize>, model: &Model, lambda: f64) -> f64 {
    let mut w = vec![0.0; problem.num_columns()];
    for (p, &v) in &model.weights {
        w[index[p]] = v;
    }
    let (primal, dual, _) = problem.certificate(&w, model.intercept, lambda);
    primal - dual
}

fn check_instance(seed: u64, task: Task) -> InstanceReport {
    let db = random_instance(seed, task);
    let maxpat = maxpat_for(seed);
    let tag = format!("seed {seed} {task} maxpat {maxpat}");
    let mut rep = InstanceReport::default();

    let problem = enumerate_all(&db, task, maxpat, 100_000).expect("instance within the oracle cap");
    let index: BTreeMap<&Pattern, usize> = problem.patterns.iter().enumerate().map(|(j, p)| (p, j)).collect();
    let supports: Vec<Vec<u32>> = (0..problem.num_columns()).map(|j| problem.support(j)).collect();

    let spp = run_path(&db, task, &path_config(Method::Spp, maxpat)).expect("spp path");
    let boost = run_path(&db, task, &path_config(Method::Boosting, maxpat)).expect("boosting path");

    // criterion 5
    let walker = TreeWalker::new(maxpat);
    let tree_lm = lambda_max(&db, task, &walker).expect("λ_max");
    let dense_lm = problem.lambda_max();
    rep.lambda_max_exact = tree_lm.value == dense_lm && spp.lambda_max == dense_lm && boost.lambda_max == dense_lm;
    rep.lambda_max_detail = format!("{tag}: tree {:e} vs enumeration {:e}", tree_lm.value, dense_lm);
    {
        let (all, _) = traverse(&db, maxpat, &mut |_: &_| Visit::ALL);
        let ws = WorkingSet::new(task, &db, dedup_by_occ(all).into_iter().map(Column::from));
        let init = Model::intercept_only(0.0, tree_lm.value);
        let sol = solve(&db, task, &ws, tree_lm.value, &init, &SolverOptions::default()).expect("solve at λ_max");
        let dense = solve_dense(&problem, dense_lm, 1e-12, None).expect("dense solve at λ_max");
        rep.start_gap = sol.report.final_gap;
        rep.start_ok = sol.model.weights.is_empty()
            && sol.report.final_gap <= 1e-9
            && dense.w.iter().all(|&w| w == 0.0)
            && spp.records[0].model.weights.is_empty()
            && spp.records[0].gap <= 1e-9;
    }

    let grid = spp::path::lambda_grid(dense_lm, 100, 0.01).expect("grid");
    let mut warm: Option<oracle::DenseSolution> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let dense = solve_dense(&problem, lambda, NAIVE_TOL, warm.as_ref()).expect("dense solve");

        // criterion 1
        let srec = &spp.records[k];
        let kept_occ: HashSet<Vec<u32>> = srec.kept.iter().map(|p| db.occurrences(p)).collect();
        for (j, &w) in dense.w.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            if kept_occ.contains(&supports[j]) {
                continue;
            }
            if w.abs() > ACTIVE_THRESHOLD {
                rep.safety_violations
                    .push(format!("{tag} λ[{k}]: active {} (w = {w:e}) screened out", problem.patterns[j]));
            } else {
                rep.tiny_screened += 1;
            }
        }
        rep.safety_checks += 1;

        // criterion 2
        let brec = &boost.records[k];
        let r_spp = rel(srec.primal, dense.primal);
        let r_boost = rel(brec.primal, dense.primal);
        rep.spp_rel = rep.spp_rel.max(r_spp);
        rep.boost_rel = rep.boost_rel.max(r_boost);
        if r_spp > 1e-6 || r_boost > 1e-6 {
            rep.objective_failures.push(format!(
                "{tag} λ[{k}]: naive {:.12e} spp {:.12e} boosting {:.12e}",
                dense.primal, srec.primal, brec.primal
            ));
        }

        // criterion 7 on the random instances: oracle-side recomputation
        for (name, rec) in [("spp", srec), ("boosting", brec)] {
            if !rec.converged {
                continue;
            }
            let gap = oracle_gap(&problem, &index, &rec.model, lambda);
            rep.cert_checked += 1;
            rep.cert_worst_gap = rep.cert_worst_gap.max(gap);
            rep.cert_worst_diff = rep.cert_worst_diff.max((gap - rec.gap).abs());
            if gap > 1.000001e-6 || (gap - rec.gap).abs() > 1e-9 {
                rep.cert_failures
                    .push(format!("{tag} {name} λ[{k}]: stored {:e} recomputed {gap:e}", rec.gap));
            }
        }
        warm = Some(dense);
    }
    rep
}

fn criteria_on_instances(lines: &mut Vec<Line>, cert: &mut CertTally) {
    let start = Instant::now();
    let jobs: Vec<(u64, Task)> = oracle::INSTANCE_SEEDS.flat_map(|s| TASKS.map(|t| (s, t))).collect();
    let reports: Vec<InstanceReport> = jobs.par_iter().map(|&(s, t)| check_instance(s, t)).collect();
    let secs = start.elapsed().as_secs_f64();

    let checks: usize = reports.iter().map(|r| r.safety_checks).sum();
    let violations: Vec<&String> = reports.iter().flat_map(|r| &r.safety_violations).collect();
    let tiny: usize = reports.iter().map(|r| r.tiny_screened).sum();
    lines.push(Line {
        id: 1,
        name: "safety of screening",
        pass: violations.is_empty(),
        detail: format!(
            "{} instances, {checks} (instance, λ) pairs, {} violations, {tiny} oracle weights ≤ {ACTIVE_THRESHOLD:e} on screened patterns, {secs:.1}s for criteria 1/2/5/7 on {} threads{}",
            jobs.len(),
            violations.len(),
            rayon::current_num_threads(),
            first(&violations)
        ),
    });

    let spp_rel = reports.iter().map(|r| r.spp_rel).fold(0.0, f64::max);
    let boost_rel = reports.iter().map(|r| r.boost_rel).fold(0.0, f64::max);
    let fails: Vec<&String> = reports.iter().flat_map(|r| &r.objective_failures).collect();
    lines.push(Line {
        id: 2,
        name: "path objectives match the naive oracle",
        pass: fails.is_empty(),
        detail: format!(
            "max relative difference spp {spp_rel:.2e}, boosting {boost_rel:.2e}; {} points above 1e-6{}",
            fails.len(),
            first(&fails)
        ),
    });

    let lm_bad: Vec<&String> = reports.iter().filter(|r| !r.lambda_max_exact).map(|r| &r.lambda_max_detail).collect();
    let start_bad = reports.iter().filter(|r| !r.start_ok).count();
    let worst_start = reports.iter().map(|r| r.start_gap).fold(0.0, f64::max);
    lines.push(Line {
        id: 5,
        name: "λ_max exact and zero start",
        pass: lm_bad.is_empty() && start_bad == 0,
        detail: format!(
            "{} inexact λ_max, {start_bad} nonzero starts, worst gap at λ_max {worst_start:.2e}{}",
            lm_bad.len(),
            first(&lm_bad)
        ),
    });

    for r in &reports {
        cert.checked += r.cert_checked;
        cert.worst_gap = cert.worst_gap.max(r.cert_worst_gap);
        cert.worst_diff = cert.worst_diff.max(r.cert_worst_diff);
        cert.failures.extend(r.cert_failures.iter().cloned());
    }
}

fn first(items: &[&String]) -> String {
    items.first().map(|s| format!("; first: {s}")).unwrap_or_default()
}

#[derive(Default)]
struct CertTally {
    checked: usize,
    worst_gap: f64,
    worst_diff: f64,
    failures: Vec<String>,
}

fn random_unit_beta(rng: &mut ChaCha8Rng, n: usize, regression: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if regression || rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn project_out(x: &mut [f64], beta: &[f64]) {
    let s = dot(x, beta) / dot(beta, beta);
    for (xi, bi) in x.iter_mut().zip(beta) {
        *xi -= s * bi;
    }
}

fn criterion_ub(lines: &mut Vec<Line>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 1000;
    let mut worst: f64 = 0.0;
    let mut worst_explicit: f64 = 0.0;
    let mut failures = Vec::new();
    let (mut zero_r, mut orthogonal) = (0, 0);
    for k in 0..draws {
        let n = rng.random_range(2..=30);
        let beta = random_unit_beta(&mut rng, n, k % 2 == 0);
        let mut alpha: Vec<f64> = match k % 3 {
            // column of the pattern model: β_i on the occurrence rows
            0 => beta.iter().map(|&b| if rng.random_bool(0.5) { b } else { 0.0 }).collect(),
            _ => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        if k % 3 == 2 {
            project_out(&mut alpha, &beta);
            orthogonal += 1;
        }
        let mut theta: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        project_out(&mut theta, &beta);
        let r = if k % 10 == 0 {
            zero_r += 1;
            0.0
        } else {
            rng.random_range(0.0..2.0)
        };
        let closed = ub(dot(&alpha, &theta), dot(&alpha, &alpha), dot(&alpha, &beta), r, dot(&beta, &beta))
            .expect("radicand");
        let numeric = ball_argmax_numeric(&alpha, &beta, &theta, r, 4000);
        let explicit = ball_argmax(&alpha, &beta, &theta, r);
        let err = (closed - numeric).abs() / closed.abs().max(1.0);
        worst = worst.max(err);
        worst_explicit = worst_explicit.max((closed - explicit).abs() / closed.abs().max(1.0));
        if err > 1e-6 {
            failures.push(format!("draw {k}: closed {closed} numeric {numeric}"));
        }
    }
    let refs: Vec<&String> = failures.iter().collect();
    lines.push(Line {
        id: 3,
        name: "UB closed form vs numerical ball maximization",
        pass: failures.is_empty(),
        detail: format!(
            "{draws} draws ({zero_r} with r = 0, {orthogonal} with α·β = 0), max relative error {worst:.2e} (explicit maximizer {worst_explicit:.2e}){}",
            first(&refs)
        ),
    });
}

/// A dual-feasible point for `db`: `β·θ = 0`, `θ ≥ ε`, `|α_t·θ| ≤ 1` on the tree.
fn random_feasible_theta(rng: &mut ChaCha8Rng, db: &PatternDb, task: Task, walker: &TreeWalker) -> Vec<f64> {
    let y = db.responses();
    let mut theta: Vec<f64> = match task {
        Task::Regression => {
            let mut t: Vec<f64> = (0..db.n()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            t.iter_mut().for_each(|v| *v -= mean);
            t
        }
        Task::Classification => {
            let mut t: Vec<f64> = (0..db.n()).map(|_| rng.random_range(0.0..1.0)).collect();
            let pos: f64 = t.iter().zip(y).filter(|(_, &yi)| yi > 0.0).map(|(v, _)| v).sum();
            let neg: f64 = t.iter().zip(y).filter(|(_, &yi)| yi < 0.0).map(|(v, _)| v).sum();
            if pos > 0.0 && neg > 0.0 {
                for (v, &yi) in t.iter_mut().zip(y) {
                    if yi > 0.0 {
                        *v *= neg / pos;
                    }
                }
            } else {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
            t
        }
    };
    let m = max_abs_inner(db, task, walker, &theta, 0.0).value;
    if m > 1.0 {
        theta.iter_mut().for_each(|v| *v /= m);
    }
    theta
}

fn criterion_sppc(lines: &mut Vec<Line>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 1000;
    let mut pairs = 0usize;
    let mut failures = Vec::new();
    let seeds: Vec<u64> = oracle::INSTANCE_SEEDS.collect();
    for k in 0..draws {
        let seed = seeds[k % seeds.len()];
        let task = TASKS[(k / seeds.len()) % 2];
        let db = random_instance(seed + 7919, task);
        let maxpat = 4;
        let walker = TreeWalker::new(maxpat);
        let theta = random_feasible_theta(&mut rng, &db, task, &walker);
        let r = if k % 10 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        let (nodes, _) = traverse(&db, maxpat, &mut |_: &_| Visit::ALL);
        let values: BTreeMap<Pattern, f64> = nodes
            .iter()
            .map(|n| (n.pattern.clone(), sppc(&node_bounds(n, task, &db, &theta), r)))
            .collect();
        for n in &nodes {
            let items = n.pattern.items();
            if items.len() < 2 {
                continue;
            }
            let parent = Pattern::new(items[..items.len() - 1].to_vec()).expect("prefix");
            let (pv, cv) = (values[&parent], values[&n.pattern]);
            pairs += 1;
            if pv < cv {
                failures.push(format!("draw {k}: sppc({parent}) = {pv} < sppc({}) = {cv}", n.pattern));
            }
        }
    }
    let refs: Vec<&String> = failures.iter().collect();
    lines.push(Line {
        id: 4,
        name: "SPPC monotone from parent to child",
        pass: failures.is_empty(),
        detail: format!("{draws} draws, {pairs} parent/child pairs, {} violations{}", failures.len(), first(&refs)),
    });
}

/// Full-problem gap of a stored record recomputed with a fresh full-tree traversal.
fn tree_gap(db: &PatternDb, task: Task, walker: &TreeWalker, model: &Model) -> f64 {
    let lambda = model.lambda;
    let margins = task.model_margins(db, model);
    let raw = task.raw_dual(&margins, lambda);
    let m = max_abs_inner(db, task, walker, &raw, 0.0).value;
    let theta = DualPoint::from_raw(raw, m).expect("scale");
    task.primal_value(db, model, lambda) - task.dual_value(db, &theta.theta, lambda)
}

/// `max(0, max_t |α_t·θ| − 1)` over all patterns for the dual point scaled
/// over the record's working set.
fn tree_violation(db: &PatternDb, task: Task, walker: &TreeWalker, model: &Model, kept: &[Pattern]) -> f64 {
    let lambda = model.lambda;
    let margins = task.model_margins(db, model);
    let raw = task.raw_dual(&margins, lambda);
    let column = |p: &Pattern| -> f64 {
        db.occurrences(p)
            .iter()
            .map(|&i| task.beta(db.responses()[i as usize]) * raw[i as usize])
            .sum::<f64>()
            .abs()
    };
    let ws_max = kept.iter().map(column).fold(0.0, f64::max);
    let all_max = max_abs_inner(db, task, walker, &raw, 0.0).value;
    (all_max / ws_max.max(1.0) - 1.0).max(0.0)
}

fn criteria_on_bundled(lines: &mut Vec<Line>, cert: &mut CertTally) {
    let start = Instant::now();
    let mut dominance = Vec::new();
    let mut dominance_ok = true;
    let mut worst_violation: f64 = 0.0;
    let mut violation_records = 0;
    for (task, path) in bundled() {
        let db = load_transactions(&path, Format::Tlist, task).expect("bundled dataset");
        let walker = TreeWalker::new(3);
        let run = |method: Method, verify: bool| -> PathResult {
            let config = PathConfig {
                method,
                verify,
                ..PathConfig::default()
            };
            run_path(&db, task, &config).expect("path on bundled data")
        };
        // verification does not change the traversal counts
        let spp = run(Method::Spp, true);
        let boost = run(Method::Boosting, false);
        let (a, b) = (spp.total_nodes_visited(), boost.total_nodes_visited());
        dominance_ok &= a <= b;
        dominance.push(format!("{task}: spp {a} boosting {b} ratio {:.3}", a as f64 / b as f64));

        for (name, result) in [("spp", &spp), ("boosting", &boost)] {
            for (k, rec) in result.records.iter().enumerate() {
                if !rec.converged {
                    continue;
                }
                let gap = tree_gap(&db, task, &walker, &rec.model);
                cert.checked += 1;
                cert.worst_gap = cert.worst_gap.max(gap);
                cert.worst_diff = cert.worst_diff.max((gap - rec.gap).abs());
                if gap > 1.000001e-6 || (gap - rec.gap).abs() > 1e-9 {
                    cert.failures
                        .push(format!("{task} {name} λ[{k}]: stored {:e} recomputed {gap:e}", rec.gap));
                }
            }
        }

        for rec in &spp.records {
            let v = tree_violation(&db, task, &walker, &rec.model, &rec.kept);
            worst_violation = worst_violation.max(v).max(rec.max_violation.unwrap_or(f64::INFINITY));
            violation_records += 1;
        }
    }
    lines.push(Line {
        id: 6,
        name: "node-count dominance on bundled datasets",
        pass: dominance_ok,
        detail: format!("{}; {:.1}s", dominance.join("; "), start.elapsed().as_secs_f64()),
    });
    lines.push(Line {
        id: 8,
        name: "full-tree KKT verification",
        pass: worst_violation <= 1e-5,
        detail: format!("{violation_records} records, max violation {worst_violation:.2e}"),
    });
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spp")).args(args).output().expect("spawn spp")
}

fn criterion_determinism(lines: &mut Vec<Line>) {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for (task, path) in bundled() {
        let task_flag = if task == Task::Regression { "reg" } else { "clf" };
        let mut outs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{task_flag}-{run}"));
            let output = run_cli(&[
                "--input",
                path.to_str().expect("utf-8 path"),
                "--task",
                task_flag,
                "--method",
                "spp",
                "--maxpat",
                "3",
                "--threads",
                "1",
                "--no-timing",
                "--out",
                out.to_str().expect("utf-8 path"),
            ]);
            if !output.status.success() {
                mismatches.push(format!("{task_flag} run {run} exited with {}", output.status));
            }
            outs.push(out);
        }
        for file in ["path.jsonl", "summary.csv", "items.json"] {
            let a = std::fs::read(outs[0].join(file)).unwrap_or_default();
            let b = std::fs::read(outs[1].join(file)).unwrap_or_default();
            compared += 1;
            if a.is_empty() || a != b {
                mismatches.push(format!("{task_flag}/{file} differs"));
            }
        }
        let manifest = |p: &Path| -> serde_json::Value {
            let text = std::fs::read_to_string(p.join("manifest.json")).unwrap_or_default();
            let mut v: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
            if let Some(obj) = v.as_object_mut() {
                obj.remove("started_at");
                obj.remove("finished_at");
                if let Some(cfg) = obj.get_mut("config").and_then(|c| c.as_object_mut()) {
                    cfg.remove("out");
                }
            }
            v
        };
        compared += 1;
        if manifest(&outs[0]) != manifest(&outs[1]) || manifest(&outs[0]).is_null() {
            mismatches.push(format!("{task_flag}/manifest.json differs outside timestamps"));
        }
    }
    let refs: Vec<&String> = mismatches.iter().collect();
    lines.push(Line {
        id: 9,
        name: "single-threaded CLI runs are byte-identical",
        pass: mismatches.is_empty(),
        detail: format!("{compared} files compared, {} mismatches{}", mismatches.len(), first(&refs)),
    });
}

fn main() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut cert = CertTally::default();

    criteria_on_instances(&mut lines, &mut cert);
    criterion_ub(&mut lines);
    criterion_sppc(&mut lines);
    criteria_on_bundled(&mut lines, &mut cert);
    let refs: Vec<&String> = cert.failures.iter().collect();
    lines.push(Line {
        id: 7,
        name: "stored gaps recomputed from scratch",
        pass: cert.failures.is_empty(),
        detail: format!(
            "{} converged records, max recomputed gap {:.6e}, max |recomputed − stored| {:.2e}{}",
            cert.checked,
            cert.worst_gap,
            cert.worst_diff,
            first(&refs)
        ),
    });
    criterion_determinism(&mut lines);

    lines.sort_by_key(|l| l.id);
    let mut failed = 0;
    for l in &lines {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {}. {}: {}", l.id, l.name, l.detail);
        failed += usize::from(!l.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        lines.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
