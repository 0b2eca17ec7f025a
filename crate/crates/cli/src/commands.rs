use std::fs;
use std::path::Path;

use fading_stab::gp::{self, GpError, DEFAULT_EPSILON_MARGIN};
use fading_stab::schema::{validate_problem, FadingSpec, ProblemSpec};
use fading_stab::sim::{self, SimConfig, SimError};
use fading_stab::stability;
use fading_stab::{PowerSolution, Problem};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SweepVar};
use crate::plot::{self, Curve};
use crate::Failure;

/// Relative slack of the adapted-below-uniform check in sweeps.
const DOMINANCE_TOL: f64 = 1e-9;

fn problem_of(spec: &ProblemSpec) -> Result<Problem, Failure> {
    validate_problem(spec).map_err(|e| Failure::input(format!("invalid problem: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn csv_text(cfg: &RunConfig, columns: &str, rows: &[String], footer: &[String]) -> String {
    let mut out = String::new();
    for h in cfg.header() {
        out.push_str("# ");
        out.push_str(&h);
        out.push('\n');
    }
    out.push_str(columns);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    for f in footer {
        out.push_str("# ");
        out.push_str(f);
        out.push('\n');
    }
    out
}

fn gp_failure(e: GpError) -> Failure {
    match e {
        GpError::Infeasible { .. } => Failure::unstable(format!("no stabilizing policy: {e}")),
        GpError::Convergence { .. } | GpError::Certificate(_) | GpError::Malformed(_) => {
            Failure::solver(e.to_string())
        }
        GpError::Stability(_) | GpError::Fading(_) => Failure::input(e.to_string()),
    }
}

#[derive(Serialize)]
struct CheckReport<'a> {
    stabilizable: bool,
    condition: &'a str,
    log_margin: f64,
    config_sha256: String,
}

pub fn check(cfg: &RunConfig) -> Result<u8, Failure> {
    let problem = problem_of(&cfg.problem)?;
    let policy = cfg.policy()?;
    let v = stability::check(&problem, &policy).map_err(|e| Failure::input(e.to_string()))?;
    println!(
        "verdict: {}",
        if v.stabilizable { "stabilizable" } else { "not stabilizable" }
    );
    println!("condition: {}", v.condition.name());
    println!("log margin: {:.12e}", v.margin);
    if let Some(out) = &cfg.out {
        let report = CheckReport {
            stabilizable: v.stabilizable,
            condition: v.condition.name(),
            log_margin: v.margin,
            config_sha256: cfg.hash(),
        };
        write_file(out, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(if v.stabilizable { 0 } else { 1 })
}

fn with_lambda(spec: &ProblemSpec, lambda: f64) -> ProblemSpec {
    let mut s = spec.clone();
    s.plant.eigenvalues.iter_mut().for_each(|e| *e = lambda);
    s
}

pub fn lambda_max(cfg: &RunConfig) -> Result<u8, Failure> {
    let problem = problem_of(&cfg.problem)?;
    let policy = cfg.policy()?;
    let lm = stability::lambda_max(&problem, &policy).map_err(|e| Failure::input(e.to_string()))?;
    println!("lambda_max: {lm:.10}");
    let Some(grid) = &cfg.grid else {
        return Ok(0);
    };
    let rows: Vec<String> = grid
        .points()
        .par_iter()
        .map(|&lambda| match validate_problem(&with_lambda(&cfg.problem, lambda)) {
            Ok(p) => match stability::check(&p, &policy) {
                Ok(v) => format!("{lambda},{:e},{}", v.margin, v.stabilizable),
                Err(e) => format!("{lambda},nan,{}", field(&e.to_string())),
            },
            Err(_) => format!("{lambda},nan,invalid"),
        })
        .collect();
    let text = csv_text(
        cfg,
        "lambda,log_margin,stabilizable",
        &rows,
        &[format!("lambda_max {lm:.10}")],
    );
    match &cfg.out {
        Some(out) => write_file(out, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn solve(problem: &Problem, uniform: bool, tol: f64) -> Result<PowerSolution, GpError> {
    if uniform {
        gp::min_power_uniform(problem)
    } else {
        gp::min_power_with(problem, tol, DEFAULT_EPSILON_MARGIN)
    }
}

pub fn min_power(cfg: &RunConfig) -> Result<u8, Failure> {
    let problem = problem_of(&cfg.problem)?;
    let sol = match solve(&problem, cfg.uniform, cfg.tol) {
        Ok(s) => s,
        Err(e @ GpError::Convergence { .. }) => {
            if let GpError::Convergence { p_star, incumbent, .. } = &e {
                match p_star {
                    Some(p) => println!("incumbent P*: {p:.12}"),
                    None => println!("incumbent P*: unavailable"),
                }
                println!("incumbent point: {incumbent:?}");
            }
            return Err(gp_failure(e));
        }
        Err(e) => return Err(gp_failure(e)),
    };
    println!("mode: {}", if sol.uniform { "uniform" } else { "adapted" });
    println!("P*: {:.12}", sol.p_star);
    let l = problem.dim();
    let mut rows = Vec::new();
    for s in 0..problem.num_states() {
        let powers: Vec<String> = (0..l).map(|i| format!("{:.12}", sol.policy.power(s, i))).collect();
        println!("state {s}: power {}", powers.join(" "));
        for i in 0..l {
            rows.push(format!("{s},{i},{:e},{:e}", sol.policy.power(s, i), sol.p_bar[s][i]));
        }
    }
    println!(
        "solver: newton {} outer {} gap {:e} stationarity {:e} phase-one {}",
        sol.stats.newton_iterations,
        sol.stats.outer_iterations,
        sol.stats.duality_gap,
        sol.stats.stationarity,
        sol.stats.used_phase_one
    );
    println!("active constraint gap: {:e}", sol.active_gap);
    if let Some(out) = &cfg.out {
        let text = csv_text(cfg, "state,slot,power,p_bar", &rows, &[format!("p_star {:e}", sol.p_star)]);
        write_file(out, &text)?;
    }
    Ok(0)
}

/// Problem at one sweep point.
fn sweep_point(spec: &ProblemSpec, var: SweepVar, v: f64) -> Result<ProblemSpec, String> {
    let mut s = spec.clone();
    match var {
        SweepVar::Pi1 => match &mut s.fading {
            FadingSpec::Iid(p) if p.len() == 2 => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("pi_1 = {v} is not a probability"));
                }
                *p = vec![v, 1.0 - v];
            }
            _ => return Err("pi_1 sweeps need two-state IID fading".into()),
        },
        SweepVar::Lambda => s = with_lambda(&s, v),
        SweepVar::N => {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(format!("n = {v} is not a positive integer"));
            }
            s.channel.block_len = v as usize;
        }
        SweepVar::Noise => s.channel.noise_var = v,
    }
    Ok(s)
}

struct SweepRow {
    adapted: f64,
    uniform: f64,
    status: String,
}

fn field(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

fn power_or_nan(r: &Result<PowerSolution, GpError>) -> f64 {
    match r {
        Ok(s) => s.p_star,
        Err(GpError::Convergence { p_star: Some(p), .. }) => *p,
        Err(_) => f64::NAN,
    }
}

fn sweep_row(spec: &ProblemSpec, var: SweepVar, v: f64, tol: f64) -> SweepRow {
    let failed = |status: String| SweepRow {
        adapted: f64::NAN,
        uniform: f64::NAN,
        status,
    };
    let spec = match sweep_point(spec, var, v) {
        Ok(s) => s,
        Err(e) => return failed(field(&e)),
    };
    let problem = match validate_problem(&spec) {
        Ok(p) => p,
        Err(e) => return failed(field(&format!("invalid: {e}"))),
    };
    let adapted = solve(&problem, false, tol);
    let uniform = solve(&problem, true, tol);
    let mut notes = Vec::new();
    for (name, r) in [("adapted", &adapted), ("uniform", &uniform)] {
        if let Err(e) = r {
            notes.push(format!("{name}: {e}"));
        }
    }
    SweepRow {
        adapted: power_or_nan(&adapted),
        uniform: power_or_nan(&uniform),
        status: if notes.is_empty() { "ok".into() } else { field(&notes.join("; ")) },
    }
}

pub fn sweep(cfg: &RunConfig) -> Result<u8, Failure> {
    let var = cfg
        .sweep_var
        .ok_or_else(|| Failure::input("--sweep-var is required (pi_1, lambda, n, noise)"))?;
    let grid = cfg.grid()?;
    // rejects a config whose base problem is itself invalid
    problem_of(&cfg.problem)?;
    let points = grid.points();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|&v| sweep_row(&cfg.problem, var, v, cfg.tol))
        .collect();

    let mut violations = 0;
    let mut compared = 0;
    let mut failed = 0;
    let lines: Vec<String> = points
        .iter()
        .zip(&rows)
        .enumerate()
        .map(|(k, (v, r))| {
            if r.status != "ok" {
                failed += 1;
            }
            if r.adapted.is_finite() && r.uniform.is_finite() {
                compared += 1;
                if r.adapted > r.uniform * (1.0 + DOMINANCE_TOL) {
                    violations += 1;
                }
            }
            format!("{k},{v},{:e},{:e},{}", r.adapted, r.uniform, r.status)
        })
        .collect();
    let summary = if violations == 0 {
        format!("dominance: adapted <= uniform at all {compared} compared points; {failed} failed points")
    } else {
        format!("dominance: VIOLATED at {violations} of {compared} compared points; {failed} failed points")
    };
    let columns = format!("index,{},adapted_p_star,uniform_p_star,status", var.name());
    let text = csv_text(cfg, &columns, &lines, std::slice::from_ref(&summary));
    match &cfg.out {
        Some(out) => {
            write_file(out, &text)?;
            println!("{summary}");
            if cfg.svg {
                let adapted: Vec<f64> = rows.iter().map(|r| r.adapted).collect();
                let uniform: Vec<f64> = rows.iter().map(|r| r.uniform).collect();
                let svg = plot::line_chart(
                    "Minimum average power",
                    var.name(),
                    "P*",
                    &points,
                    &[
                        Curve { label: "with power adaptation", y: &adapted },
                        Curve { label: "uniform power", y: &uniform },
                    ],
                );
                let path = out.with_extension("svg");
                write_file(&path, &svg)?;
                println!("chart: {}", path.display());
            }
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn sim_failure(e: SimError) -> Failure {
    Failure::input(e.to_string())
}

pub fn simulate(cfg: &RunConfig) -> Result<u8, Failure> {
    let problem = problem_of(&cfg.problem)?;
    let policy = cfg.policy()?;
    let sc = SimConfig {
        trials: cfg.trials,
        blocks: cfg.blocks,
        seed: cfg.seed,
        gain: cfg.gain.clone(),
        start_state: cfg.start_state,
    };
    let trace = sim::run_closed_loop(&problem, &policy, &sc).map_err(sim_failure)?;
    if let Some(out) = &cfg.out {
        write_file(out, &trace.to_csv(&cfg.header()))?;
    }
    let last = trace.mean_square_state.last().copied().unwrap_or(f64::NAN);
    let stabilized = last < trace.initial_mean_square && trace.divergence_fraction() <= 0.5;
    println!("status: {}", if stabilized { "stabilized" } else { "diverged" });
    println!("trials: {} blocks: {} seed: {}", trace.num_trials, trace.num_blocks, trace.seed);
    println!("initial mean square: {:e}", trace.initial_mean_square);
    println!("final mean square: {last:e}");
    println!(
        "diverged fraction: {:.4} ({} overflowed)",
        trace.divergence_fraction(),
        trace.overflowed
    );
    println!(
        "realized power: {:e} (scheduled {:e})",
        trace.realized_power.iter().sum::<f64>() / trace.num_blocks as f64,
        trace.scheduled_power
    );
    let report = match sim::empirical_vs_analytic(&trace) {
        Ok(r) => r,
        Err(e @ SimError::InsufficientTrials { .. }) => {
            return Err(Failure::input(format!("comparison skipped: {e}")));
        }
        Err(e) => return Err(sim_failure(e)),
    };
    println!(
        "max alpha deviation: {:.4e} ({:.3} of band)",
        report.max_alpha_deviation, report.max_alpha_band_ratio
    );
    println!("estimate bias: {:.3} of band", report.max_bias_band_ratio);
    println!("power normalisation: {:.3} of band", report.max_power_band_ratio);
    if report.consistent() {
        println!("consistency: in band");
        Ok(0)
    } else {
        Err(Failure::mismatch(format!(
            "empirical moments outside the {:.0}% bands (alpha {}, bias {}, power {})",
            sim::CONFIDENCE * 100.0,
            report.alpha_in_band,
            report.bias_in_band,
            report.power_in_band
        )))
    }
}
