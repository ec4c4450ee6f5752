//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Every scenario is run twice, on a 1-thread and an 8-thread pool; the 1-thread run is
//! timed and its report is what the criteria read.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use measure_flow::cli::{execute, pretty, Command, Outcome};
use measure_flow::mv::MvParams;
use serde_json::Value;

struct Run {
    name: &'static str,
    outcome: Outcome,
    elapsed: Duration,
    identical: bool,
}

impl Run {
    fn details(&self) -> &Value {
        &self.outcome.report.details
    }

    fn num(&self, path: &str) -> f64 {
        let mut v = self.details();
        for p in path.split('.') {
            v = &v[p];
        }
        v.as_f64().unwrap_or_else(|| panic!("{}: no number at {path}", self.name))
    }

    fn check(&self, name: &str) -> f64 {
        self.outcome.report.checks.iter().find(|c| c.name == name).map(|c| c.value).unwrap_or(f64::NAN)
    }
}

fn scenario(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    let raw = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_slice(&raw).unwrap()
}

fn on_pool(threads: usize, command: Command, cfg: &Value) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    match pool.install(|| execute(command, cfg)) {
        Ok(o) => o,
        Err(e) => panic!("{command:?}: {e}"),
    }
}

fn run(name: &'static str, command: Command) -> Run {
    let cfg = scenario(name);
    let start = Instant::now();
    let one = on_pool(1, command, &cfg);
    let elapsed = start.elapsed();
    let eight = on_pool(8, command, &cfg);
    let identical = pretty(&one.report) == pretty(&eight.report) && one.files == eight.files;
    Run { name, outcome: one, elapsed, identical }
}

struct Line {
    pass: bool,
    text: String,
}

/// `limit: None` for criteria without a runtime bound.
fn criterion(id: u32, title: &str, conds: &[(bool, String)], elapsed: Duration, limit: Option<Duration>) -> Line {
    let within = limit.is_none_or(|l| elapsed <= l);
    let pass = within && conds.iter().all(|c| c.0);
    let mut text = format!("criterion {id}: {title}");
    if let Some(l) = limit {
        text += &format!(" ({:.1} s, limit {} s)", elapsed.as_secs_f64(), l.as_secs());
    }
    for (ok, what) in conds {
        text += &format!("\n      {} {what}", if *ok { "ok  " } else { "FAIL" });
    }
    if !within {
        text += "\n      FAIL runtime over limit";
    }
    Line { pass, text }
}

fn le(what: &str, value: f64, bound: f64) -> (bool, String) {
    (value <= bound, format!("{what}: {value:.3e} <= {bound:.3e}"))
}

fn within(what: &str, value: f64, lo: f64, hi: f64) -> (bool, String) {
    ((lo..=hi).contains(&value), format!("{what}: {value:.4} in [{lo}, {hi}]"))
}

fn terms(rep: &Value) -> impl Iterator<Item = f64> + '_ {
    rep["terms"].as_object().unwrap().values().map(|v| v.as_f64().unwrap())
}

/// Floating-point floor of an Ito report.
fn roundoff(rep: &Value) -> f64 {
    1e-12 * (1.0 + rep["lhs"].as_f64().unwrap().abs() + terms(rep).map(f64::abs).sum::<f64>())
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn main() {
    let mut lines = Vec::new();
    let mut all = Vec::new();

    // 1. continuous case
    let r = run("ito_brownian", Command::VerifyIto);
    let (res, se, dt) = (r.num("residual"), r.num("residual_se"), r.num("max_dt"));
    let (lhs, lhs_se) = (r.num("lhs"), r.num("lhs_se"));
    lines.push(criterion(
        1,
        "Ito identity, Brownian <x^2>",
        &[
            le("|residual|", res.abs(), 3.0 * se + 5.0 * dt + roundoff(r.details())),
            le("|lhs - 1|", (lhs - 1.0).abs(), 3.0 * lhs_se),
        ],
        r.elapsed,
        secs(60),
    ));
    all.push(r);

    // 2. jump case
    let a = run("jump_first_moment", Command::VerifyJump);
    let b = run("jump_second_moment", Command::VerifyJump);
    let mut conds = Vec::new();
    for r in [&a, &b] {
        for m in ["general", "corollary"] {
            let res = r.num(&format!("{m}.residual"));
            let se = r.num(&format!("{m}.residual_se"));
            conds.push(le(&format!("{} {m} |residual|", r.name), res.abs(), 3.0 * se + roundoff(&r.details()[m])));
        }
        let comb = (r.num("general.residual_se").powi(2) + r.num("corollary.residual_se").powi(2)).sqrt();
        let (g, c) = (&r.details()["general"], &r.details()["corollary"]);
        let diff = (terms(g).sum::<f64>() - terms(c).sum::<f64>()).abs();
        conds.push(le(
            &format!("{} decomposition difference", r.name),
            diff,
            3.0 * comb + roundoff(g) + roundoff(c),
        ));
    }
    lines.push(criterion(2, "Ito identity, compound Poisson", &conds, a.elapsed + b.elapsed, secs(120)));
    all.extend([a, b]);

    // 3. singular case
    let a = run("singular_common", Command::VerifySingular);
    let b = run("singular_idiosyncratic", Command::VerifySingular);
    let band = 3.0 * b.num("ito.residual_se") + roundoff(&b.details()["ito"]);
    lines.push(criterion(
        3,
        "Ito identity, singular control",
        &[
            le("common jump |residual|", a.num("ito.residual").abs(), 1e-10),
            le("idiosyncratic |residual|", b.num("ito.residual").abs(), band),
            le("idiosyncratic |law jump term|", b.num("ito.terms.law_jump_term").abs(), 0.0),
        ],
        a.elapsed + b.elapsed,
        secs(60),
    ));
    all.extend([a, b]);

    // 4. convergence sweep
    let r = run("sweep_brownian", Command::ConvergenceSweep);
    lines.push(criterion(
        4,
        "convergence sweep",
        &[within("slope of RMS residual vs N", r.num("slope_n"), -0.65, -0.35)],
        r.elapsed,
        secs(300),
    ));
    all.push(r);

    // 5. Riccati oracle
    let r = run("lq_decoupled", Command::SolveLq);
    lines.push(criterion(
        5,
        "Riccati vs closed form",
        &[
            le("max |RK4 - closed form|", r.num("closed_form_max_error"), 1e-8),
            within("step-halving error ratio", r.check("step_halving_ratio"), 8.0, 32.0),
        ],
        r.elapsed,
        secs(1),
    ));
    all.push(r);

    // 6. LQ optimality
    let r = run("lq_standard", Command::VerifyLqOptimality);
    let o = &r.details()["optimality"];
    let j_star = o["j_star"].as_f64().unwrap();
    let se_star = o["se_star"].as_f64().unwrap();
    let perts = o["perturbations"].as_array().unwrap();
    let worst = perts
        .iter()
        .map(|p| j_star - p["j"].as_f64().unwrap() - 3.0 * p["se"].as_f64().unwrap().hypot(se_star))
        .fold(f64::NEG_INFINITY, f64::max);
    lines.push(criterion(
        6,
        "LQ optimality against 20 perturbations",
        &[
            (perts.len() == 20, format!("perturbations: {}", perts.len())),
            le("max_k J(a*) - J(a_k) - 3 SE", worst, 0.0),
            within("eps-doubling gap ratio", r.num("optimality.gap_ratio"), 2.8, 5.2),
        ],
        r.elapsed,
        secs(300),
    ));
    all.push(r);

    // 7. LQ value
    let r = run("lq_value", Command::VerifyLqOptimality);
    let gap = (r.num("optimality.j_star") - r.num("value")).abs();
    let cfg = scenario("lq_value");
    let dt = cfg["horizon"].as_f64().unwrap() / cfg["steps"].as_f64().unwrap();
    lines.push(criterion(
        7,
        "LQ value match",
        &[le("|J(a*) - V(0)|", gap, 3.0 * r.num("optimality.se_star") + 10.0 * dt)],
        r.elapsed,
        secs(120),
    ));
    all.push(r);

    // 8. MV closed forms and adjoint
    let start = Instant::now();
    let mut ode: f64 = 0.0;
    for name in ["mv_quiet", "mv_active"] {
        let p: MvParams = serde_json::from_value(scenario(name)["params"].clone()).unwrap();
        let v = p.value();
        ode = v.terminal_residuals().iter().fold(ode, |m, e| m.max(e.abs()));
        for k in 0..=10_000 {
            let t = p.horizon * k as f64 / 10_000.0;
            ode = v.ode_residuals(t).iter().fold(ode, |m, e| m.max(e.abs()));
        }
    }
    let closed = start.elapsed();
    let r = run("mv_adjoint", Command::SimulateMv);
    lines.push(criterion(
        8,
        "MV closed forms and adjoint",
        &[
            le("closed-form ODE and terminal residuals", ode, 1e-10),
            (closed <= Duration::from_secs(1), format!("closed-form check took {:.3} s", closed.as_secs_f64())),
            le("adjoint terminal residual", r.num("adjoint.terminal_residual"), 1e-10),
            le(
                "|adjoint drift slope + r|",
                (r.num("adjoint.drift_slope") - r.num("adjoint.expected_slope")).abs(),
                3.0 * r.num("adjoint.drift_slope_se"),
            ),
        ],
        closed + r.elapsed,
        None,
    ));
    all.push(r);

    // 9. MV value
    let a = run("mv_quiet", Command::CheckMvValue);
    let b = run("mv_active", Command::CheckMvValue);
    let mut conds = Vec::new();
    for r in [&a, &b] {
        conds.push(le(&format!("{} |J - V|", r.name), r.num("gap").abs(), 3.0 * r.num("se") + 10.0 * r.num("max_dt")));
        conds.push(le(&format!("{} eta increments off the boundary", r.name), r.num("boundary_violations"), 0.0));
    }
    conds.push((a.num("eta_mean_total") == 0.0, format!("mv_quiet eta mass: {:e}", a.num("eta_mean_total"))));
    conds.push((b.num("eta_mean_total") > 0.0, format!("mv_active eta mass: {:.4}", b.num("eta_mean_total"))));
    lines.push(criterion(9, "MV value check", &conds, a.elapsed + b.elapsed, secs(300)));
    all.extend([a, b]);

    // 10. Fokker-Planck
    let a = run("fp_diffusion", Command::FpConsistency);
    let b = run("fp_jumps", Command::FpConsistency);
    lines.push(criterion(
        10,
        "Fokker-Planck consistency",
        &[le("pure diffusion relative error", a.num("rel_error"), 0.05), le("unit jumps relative error", b.num("rel_error"), 0.05)],
        a.elapsed + b.elapsed,
        secs(120),
    ));
    all.extend([a, b]);

    // 11. determinism
    let conds: Vec<(bool, String)> =
        all.iter().map(|r| (r.identical, format!("{}: 1 vs 8 threads byte-identical", r.name))).collect();
    lines.push(criterion(11, "determinism", &conds, Duration::ZERO, None));

    let mut failed = 0;
    for l in &lines {
        println!("[{}] {}", if l.pass { "PASS" } else { "FAIL" }, l.text);
        failed += usize::from(!l.pass);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
