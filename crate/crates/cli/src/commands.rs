use std::path::Path;

use fg_core::meanfield::CapacityRow;
use fg_core::metrics::mean_ci;
use fg_core::{
    aggregate_runs, analyze, calibrate_contact_model, learning_capacity, run_batch, summarize,
    AnalyticReport, AvailabilityCurve, CapacityResult, ContactModel, MeanFieldError, MetricsReport,
    SystemParams,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::output::{
    ensure_dir, opt, sidecar_dir, with_suffix, write_csv, write_json, write_text, CliError,
    CliResult, Run,
};
use crate::range::{parse_counts, parse_values};
use crate::{ContactSource, SimulationArgs, SweepMode};

fn load_params(path: &Path) -> CliResult<SystemParams> {
    Ok(SystemParams::load(path)?.validate()?)
}

/// The contact model and the parameters updated with its zone statistics.
fn contact_model(
    params: &SystemParams,
    src: &ContactSource,
) -> CliResult<(ContactModel, SystemParams)> {
    if let Some(path) = &src.contact_model {
        let cm = ContactModel::load(path)?;
        let p = cm.apply_to(params)?;
        return Ok((cm, p));
    }
    if src.exponential_fallback {
        eprintln!("warning: using the exponential contact model fallback");
        return Ok((ContactModel::kinematic_fallback(params), params.clone()));
    }
    Err(CliError::usage(
        "no contact model: pass --contact-model <file> (written by `fg calibrate`) \
         or --exponential-fallback",
    ))
}

fn analytic_error(e: MeanFieldError) -> CliError {
    let kind = match &e {
        MeanFieldError::NoConvergence { .. } => "no_convergence",
        MeanFieldError::UnstableSystem { .. } => "unstable",
        MeanFieldError::DegenerateContactModel => "degenerate_contact_model",
        MeanFieldError::AllUnstable { .. } => "all_unstable",
        _ => "analytic_failure",
    };
    let mut detail = json!({ "error": kind, "message": e.to_string() });
    if let MeanFieldError::NoConvergence { iterations, trace } = &e {
        detail["iterations"] = json!(iterations);
        detail["trace"] = json!(trace);
    }
    CliError::analytic(e.to_string(), detail)
}

fn seeds(sim: &SimulationArgs) -> CliResult<Vec<u64>> {
    if sim.runs == 0 || sim.slots == 0 {
        return Err(CliError::usage("--runs and --slots must be positive"));
    }
    Ok((0..sim.runs as u64).map(|i| sim.seed + i).collect())
}

/// Per-run reports and their aggregate (`None` for a single run).
struct SimSummary {
    runs: Vec<Result<MetricsReport, String>>,
    combined: Result<MetricsReport, String>,
}

fn simulate_and_summarize(params: &SystemParams, sim: &SimulationArgs) -> CliResult<SimSummary> {
    let seeds = seeds(sim)?;
    let warmup = params.metrics.warmup_fraction;
    let runs: Vec<Result<MetricsReport, String>> = run_batch(params, &seeds, sim.slots)
        .iter()
        .map(|raw| summarize(raw, warmup).map_err(|e| e.to_string()))
        .collect();
    Ok(SimSummary {
        combined: combine(&runs),
        runs,
    })
}

fn combine(runs: &[Result<MetricsReport, String>]) -> Result<MetricsReport, String> {
    let ok: Vec<MetricsReport> = runs
        .iter()
        .filter_map(|r| r.as_ref().ok().cloned())
        .collect();
    match ok.len() {
        0 => Err(runs
            .iter()
            .find_map(|r| r.as_ref().err().cloned())
            .unwrap_or_else(|| "no runs".into())),
        1 => Ok(ok.into_iter().next().unwrap()),
        _ => aggregate_runs(&ok).map_err(|e| e.to_string()),
    }
}

pub fn calibrate(config: &Path, duration: f64, seed: u64, out: &Path) -> CliResult<()> {
    let run = Run::start("calibrate");
    let params = load_params(config)?;
    let cm = calibrate_contact_model(&params, duration, seed)?;
    let resolved = cm.apply_to(&params)?;
    write_json(out, &cm)?;
    run.finish(
        &sidecar_dir(out),
        &resolved,
        json!({ "seed": seed, "duration_s": duration }),
        &[out.to_path_buf()],
    )
}

#[derive(Serialize)]
struct AnalyticOutput<'a> {
    #[serde(flatten)]
    report: &'a AnalyticReport,
    /// `λ o(τ)` on the curve grid.
    incorporation_rate: Option<Vec<f64>>,
    capacity: Option<CapacityResult>,
    capacity_error: Option<String>,
    contact_model: &'a ContactModel,
}

fn curve_rows(curve: &AvailabilityCurve) -> Vec<Vec<String>> {
    curve
        .tau
        .iter()
        .zip(&curve.o)
        .map(|(t, o)| {
            vec![
                t.to_string(),
                o.to_string(),
                curve.incorporation_rate(*t).to_string(),
            ]
        })
        .collect()
}

pub fn analytic(
    config: &Path,
    src: &ContactSource,
    seed: u64,
    m_max: u32,
    out: &Path,
) -> CliResult<()> {
    let run = Run::start("analytic");
    let params = load_params(config)?;
    let (cm, params) = contact_model(&params, src)?;
    let report = analyze(&params, &cm, seed).map_err(analytic_error)?;
    let (capacity, capacity_error) = match learning_capacity(&params, &cm, m_max.max(1)) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let output = AnalyticOutput {
        report: &report,
        incorporation_rate: report
            .curve
            .as_ref()
            .map(|c| c.tau.iter().map(|&t| c.incorporation_rate(t)).collect()),
        capacity,
        capacity_error,
        contact_model: &cm,
    };
    write_json(out, &output)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(curve) = &report.curve {
        let path = with_suffix(out, "_curve.csv");
        write_csv(
            &path,
            &["tau", "o", "incorporation_rate"],
            &curve_rows(curve),
        )?;
        outputs.push(path);
    }
    run.finish(
        &sidecar_dir(out),
        &params,
        json!({ "seed": seed }),
        &outputs,
    )?;
    let sol = &report.solution;
    if !sol.stable {
        return Err(CliError::analytic(
            format!(
                "unstable configuration (stability lhs {})",
                sol.stability_lhs
            ),
            json!({
                "error": "unstable",
                "stability_lhs": sol.stability_lhs,
                "a": sol.a,
                "b": sol.b,
                "output": out.display().to_string(),
            }),
        ));
    }
    Ok(())
}

pub fn simulate(config: &Path, sim: &SimulationArgs, out_dir: &Path) -> CliResult<()> {
    let run = Run::start("simulate");
    let params = load_params(config)?;
    let seeds = seeds(sim)?;
    ensure_dir(out_dir)?;
    let raws = run_batch(&params, &seeds, sim.slots);
    let warmup = params.metrics.warmup_fraction;
    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    for (i, raw) in raws.iter().enumerate() {
        let dir = out_dir.join(format!("run_{i:03}"));
        ensure_dir(&dir)?;
        let mut buf = Vec::new();
        raw.write_slots_csv(&mut buf)
            .map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join("slots.csv");
        write_text(&path, &String::from_utf8_lossy(&buf))?;
        outputs.push(path);
        buf.clear();
        raw.write_observations_csv(&mut buf)
            .map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join("observations.csv");
        write_text(&path, &String::from_utf8_lossy(&buf))?;
        outputs.push(path);
        match summarize(raw, warmup) {
            Ok(report) => {
                for d in &report.diagnostics {
                    eprintln!("warning: run {i} (seed {}): {d}", raw.seed);
                }
                let mut buf = Vec::new();
                report
                    .write_csv(&mut buf)
                    .map_err(|e| CliError::io(&dir, e))?;
                let path = dir.join("metrics.csv");
                write_text(&path, &String::from_utf8_lossy(&buf))?;
                outputs.push(path);
                reports.push(report);
            }
            Err(e) => eprintln!("warning: run {i} (seed {}): no metrics: {e}", raw.seed),
        }
        if raw.invariants.total() > 0 {
            eprintln!(
                "warning: run {i} (seed {}): invariant violations {:?}",
                raw.seed, raw.invariants
            );
        }
    }
    if reports.len() >= 2 {
        let agg = aggregate_runs(&reports).map_err(|e| CliError::usage(e.to_string()))?;
        let mut buf = Vec::new();
        agg.write_csv(&mut buf)
            .map_err(|e| CliError::io(out_dir, e))?;
        let path = out_dir.join("aggregate.csv");
        write_text(&path, &String::from_utf8_lossy(&buf))?;
        outputs.push(path);
    }
    run.finish(
        out_dir,
        &params,
        json!({ "seeds": seeds, "runs": sim.runs, "slots": sim.slots }),
        &outputs,
    )
}

const SWEEP_HEADER: [&str; 20] = [
    "model_count",
    "param",
    "value",
    "mode",
    "a",
    "a_ci95",
    "b",
    "b_ci95",
    "merge_rate",
    "merge_rate_ci95",
    "stored_info",
    "stored_info_ci95",
    "staleness",
    "staleness_ci95",
    "integral_o",
    "stability_lhs",
    "stable",
    "capacity_objective",
    "runs",
    "error",
];

fn analytic_row(p: &SystemParams, cm: &ContactModel, seed: u64) -> Vec<String> {
    let mut row = vec![String::new(); 15];
    match analyze(p, cm, seed) {
        Ok(rep) => {
            let s = &rep.solution;
            row[0] = s.a.to_string();
            row[2] = s.b.to_string();
            row[4] = s.r.to_string();
            row[6] = opt(rep.stored_information);
            row[8] = opt(rep.staleness.as_ref().map(|x| x.f_lower));
            row[9] = opt(rep.staleness.as_ref().map(|x| 1.96 * x.std_error));
            row[10] = opt(rep.curve.as_ref().map(|c| c.integral_o));
            row[11] = s.stability_lhs.to_string();
            row[12] = s.stable.to_string();
            row[13] = opt(rep.capacity_objective);
            row[14] = rep.diagnostics.join("; ");
        }
        Err(e) => row[14] = e.to_string(),
    }
    row
}

fn simulated_row(p: &SystemParams, sim: &SimulationArgs) -> Vec<String> {
    let mut row = vec![String::new(); 15];
    let summary = match simulate_and_summarize(p, sim) {
        Ok(s) => s,
        Err(e) => {
            row[14] = e.message;
            return row;
        }
    };
    match summary.combined {
        Ok(r) => {
            let c = &r.ci95;
            row[0] = r.a_hat.to_string();
            row[1] = opt(c.a_hat);
            row[2] = r.busy_hat.to_string();
            row[3] = opt(c.busy_hat);
            row[4] = r.merge_rate_hat.to_string();
            row[5] = opt(c.merge_rate_hat);
            row[6] = r.stored_info_hat.to_string();
            row[7] = opt(c.stored_info_hat);
            row[8] = opt(r.staleness_hat);
            row[9] = opt(c.staleness_hat);
            row[10] = opt(r.curve_integral(p.metrics.age_bucket_s));
            row[14] = r.diagnostics.join("; ");
        }
        Err(e) => row[14] = e,
    }
    row
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    config: &Path,
    param: &str,
    values: &str,
    mode: SweepMode,
    models: Option<&str>,
    src: &ContactSource,
    sim: &SimulationArgs,
    out: &Path,
) -> CliResult<()> {
    let run = Run::start("sweep");
    let values = parse_values(values).map_err(CliError::usage)?;
    let base = load_params(config)?;
    let model_counts = match models {
        Some(spec) => parse_counts(spec).map_err(CliError::usage)?,
        None => vec![base.model_count],
    };
    let analytic = mode != SweepMode::Simulate;
    let simulate = mode != SweepMode::Analytic;
    let (cm, base) = if analytic {
        let (cm, p) = contact_model(&base, src)?;
        (Some(cm), p)
    } else {
        (None, base)
    };
    if simulate {
        seeds(sim)?;
    }
    // Reject unknown keys before any work.
    if let Err(e @ fg_core::ParamError::BadPath(_)) = base.with_value(param, values[0]) {
        return Err(CliError::usage(e.to_string()));
    }

    let points: Vec<(u32, f64)> = model_counts
        .iter()
        .flat_map(|&m| values.iter().map(move |&v| (m, v)))
        .collect();
    let blocks: Vec<Vec<Vec<String>>> = points
        .par_iter()
        .map(|&(m, v)| {
            let prefix = |mode: &str| {
                vec![
                    m.to_string(),
                    param.to_string(),
                    v.to_string(),
                    mode.to_string(),
                ]
            };
            let finish = |mut head: Vec<String>, body: Vec<String>, runs: String| {
                let error = body[14].clone();
                head.extend_from_slice(&body[..14]);
                head.push(runs);
                head.push(error);
                head
            };
            let params = base
                .with_model_count(m)
                .and_then(|p| p.with_value(param, v));
            let mut rows = Vec::new();
            let modes: Vec<&str> = [("analytic", analytic), ("simulate", simulate)]
                .iter()
                .filter(|x| x.1)
                .map(|x| x.0)
                .collect();
            for mode in modes {
                let body = match &params {
                    Err(e) => {
                        let mut b = vec![String::new(); 15];
                        b[14] = e.to_string();
                        b
                    }
                    Ok(p) if mode == "analytic" => {
                        analytic_row(p, cm.as_ref().expect("analytic mode has a model"), sim.seed)
                    }
                    Ok(p) => simulated_row(p, sim),
                };
                let runs = if mode == "simulate" {
                    sim.runs.to_string()
                } else {
                    String::new()
                };
                rows.push(finish(prefix(mode), body, runs));
            }
            rows
        })
        .collect();
    let rows: Vec<Vec<String>> = blocks.into_iter().flatten().collect();
    write_csv(out, &SWEEP_HEADER, &rows)?;
    run.finish(
        &sidecar_dir(out),
        &base,
        json!({
            "param": param,
            "values": values,
            "model_counts": model_counts,
            "seed": sim.seed,
            "runs": sim.runs,
            "slots": sim.slots,
        }),
        &[out.to_path_buf()],
    )
}

pub fn stability_map(
    config: &Path,
    src: &ContactSource,
    m_range: &str,
    lambda_range: &str,
    out: &Path,
) -> CliResult<()> {
    let run = Run::start("stability-map");
    let ms = parse_counts(m_range).map_err(CliError::usage)?;
    let lambdas = parse_values(lambda_range).map_err(CliError::usage)?;
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(CliError::usage("observation rates must be non-negative"));
    }
    let params = load_params(config)?;
    let (cm, params) = contact_model(&params, src)?;
    let rows: Vec<Vec<String>> = fg_core::stability_map(&params, &cm, &ms, &lambdas)
        .into_iter()
        .map(|c| {
            vec![
                c.m.to_string(),
                c.lambda.to_string(),
                opt(c.stability_lhs),
                c.stable.map(|s| s.to_string()).unwrap_or_default(),
                c.error.unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(out, &["m", "lambda", "lhs", "stable", "error"], &rows)?;
    run.finish(
        &sidecar_dir(out),
        &params,
        json!({ "m_values": ms, "lambda_values": lambdas }),
        &[out.to_path_buf()],
    )
}

fn table_row(lambda: f64, r: &CapacityRow) -> Vec<String> {
    vec![
        lambda.to_string(),
        r.m.to_string(),
        opt(r.a),
        opt(r.stability_lhs),
        r.stable.to_string(),
        opt(r.integral_o),
        opt(r.objective),
        r.error.clone().unwrap_or_default(),
    ]
}

pub fn capacity(
    config: &Path,
    src: &ContactSource,
    m_max: u32,
    lambda_range: Option<&str>,
    out: &Path,
) -> CliResult<()> {
    let run = Run::start("capacity");
    if m_max == 0 {
        return Err(CliError::usage("--m-max must be at least 1"));
    }
    let params = load_params(config)?;
    let (cm, params) = contact_model(&params, src)?;
    let lambdas = match lambda_range {
        Some(spec) => parse_values(spec).map_err(CliError::usage)?,
        None => vec![params.obs_rate],
    };
    let results: Vec<(f64, Result<CapacityResult, String>)> = lambdas
        .par_iter()
        .map(|&l| {
            let r = params
                .with_value("obs_rate", l)
                .map_err(|e| e.to_string())
                .and_then(|p| learning_capacity(&p, &cm, m_max).map_err(|e| e.to_string()));
            (l, r)
        })
        .collect();
    let mut summary = Vec::new();
    let mut table = Vec::new();
    for (l, r) in &results {
        match r {
            Ok(c) => {
                summary.push(vec![
                    l.to_string(),
                    c.m_star.to_string(),
                    c.l_star.to_string(),
                    c.value.to_string(),
                    String::new(),
                ]);
                table.extend(c.table.iter().map(|row| table_row(*l, row)));
            }
            Err(e) => summary.push(vec![
                l.to_string(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ]),
        }
    }
    write_csv(
        out,
        &["lambda", "m_star", "l_star", "value", "error"],
        &summary,
    )?;
    let table_path = with_suffix(out, "_table.csv");
    write_csv(
        &table_path,
        &[
            "lambda",
            "m",
            "a",
            "stability_lhs",
            "stable",
            "integral_o",
            "objective",
            "error",
        ],
        &table,
    )?;
    run.finish(
        &sidecar_dir(out),
        &params,
        json!({ "m_max": m_max, "lambda_values": lambdas }),
        &[out.to_path_buf(), table_path],
    )?;
    if results.iter().all(|(_, r)| r.is_err()) {
        return Err(CliError::analytic(
            "no stable model count at any observation rate",
            json!({ "error": "all_unstable", "m_max": m_max }),
        ));
    }
    Ok(())
}

/// Mean of the analytic curve over `[lo, hi)`.
fn bucket_mean(curve: &AvailabilityCurve, lo: f64, hi: f64) -> f64 {
    const POINTS: usize = 50;
    (0..POINTS)
        .map(|i| curve.value_at(lo + (i as f64 + 0.5) * (hi - lo) / POINTS as f64))
        .sum::<f64>()
        / POINTS as f64
}

/// Metric name, analytic value, simulated value, its interval, note.
type CompareRow = (String, Option<f64>, Option<f64>, Option<f64>, String);

pub fn compare(
    config: &Path,
    src: &ContactSource,
    sim: &SimulationArgs,
    out: &Path,
) -> CliResult<()> {
    let run = Run::start("compare");
    let params = load_params(config)?;
    let (cm, params) = contact_model(&params, src)?;
    if sim.runs == 1 {
        eprintln!("warning: a single run gives no confidence intervals");
    }
    let analytic = match analyze(&params, &cm, sim.seed) {
        Ok(r) if r.solution.stable => Some(r),
        Ok(r) => {
            eprintln!(
                "warning: analytic point is unstable (lhs {}); analytic columns left blank",
                r.solution.stability_lhs
            );
            None
        }
        Err(e) => {
            eprintln!("warning: analytic solve failed: {e}; analytic columns left blank");
            None
        }
    };
    let summary = simulate_and_summarize(&params, sim)?;
    let simulated = summary.combined.as_ref().ok();
    if let Err(e) = &summary.combined {
        eprintln!("warning: no simulated metrics: {e}");
    }
    let sol = analytic.as_ref().map(|r| &r.solution);
    let curve = analytic.as_ref().and_then(|r| r.curve.as_ref());
    let bucket = params.metrics.age_bucket_s;

    let mut rows: Vec<CompareRow> = vec![
        (
            "a".into(),
            sol.map(|s| s.a),
            simulated.map(|r| r.a_hat),
            simulated.and_then(|r| r.ci95.a_hat),
            String::new(),
        ),
        (
            "b".into(),
            sol.map(|s| s.b),
            simulated.map(|r| r.busy_hat),
            simulated.and_then(|r| r.ci95.busy_hat),
            String::new(),
        ),
        (
            "r".into(),
            sol.map(|s| s.r),
            simulated.map(|r| r.merge_rate_hat),
            simulated.and_then(|r| r.ci95.merge_rate_hat),
            String::new(),
        ),
        (
            "d_m".into(),
            sol.and_then(|s| s.d_m),
            None,
            None,
            String::new(),
        ),
        (
            "d_i".into(),
            sol.and_then(|s| s.d_i),
            None,
            None,
            String::new(),
        ),
        (
            "stored_info".into(),
            analytic.as_ref().and_then(|r| r.stored_information),
            simulated.map(|r| r.stored_info_hat),
            simulated.and_then(|r| r.ci95.stored_info_hat),
            String::new(),
        ),
        (
            "staleness".into(),
            analytic
                .as_ref()
                .and_then(|r| r.staleness.as_ref().map(|s| s.f_lower)),
            simulated.and_then(|r| r.staleness_hat),
            simulated.and_then(|r| r.ci95.staleness_hat),
            String::new(),
        ),
        (
            "integral_o".into(),
            curve.map(|c| c.integral_o),
            simulated.and_then(|r| r.curve_integral(bucket)),
            None,
            String::new(),
        ),
    ];
    if let (Some(s), Some(r)) = (sol, simulated) {
        if s.a > r.a_hat {
            rows[0].4 = "analytic optimistic".into();
        }
    }
    if let (Some(f), Some(st)) = (rows[6].1, rows[6].2) {
        rows[6].4 = if st >= f {
            "bound holds"
        } else {
            "bound violated"
        }
        .into();
    }
    let ages: Vec<f64> = simulated
        .map(|r| r.o_ages.clone())
        .filter(|a| !a.is_empty())
        .unwrap_or_else(|| {
            let n = (params.obs_lifetime / bucket).ceil() as usize;
            (0..n).map(|b| b as f64 * bucket).collect()
        });
    for (b, &age) in ages.iter().enumerate() {
        let hi = (age + bucket).min(params.obs_lifetime);
        rows.push((
            format!("o_curve_{age}"),
            curve.map(|c| bucket_mean(c, age, hi)),
            simulated.and_then(|r| r.o_curve.get(b).copied()),
            simulated.and_then(|r| r.ci95.o_curve.get(b).copied().flatten()),
            String::new(),
        ));
    }

    let csv_rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|(name, an, si, ci, note)| {
            let rel = match (an, si) {
                (Some(a), Some(s)) if s != 0.0 => Some((a - s).abs() / s.abs()),
                _ => None,
            };
            vec![name, opt(an), opt(si), opt(ci), opt(rel), note]
        })
        .collect();
    write_csv(
        out,
        &[
            "metric",
            "analytic",
            "simulated",
            "ci95",
            "rel_error",
            "note",
        ],
        &csv_rows,
    )?;
    let per_run_a: Vec<f64> = summary
        .runs
        .iter()
        .filter_map(|r| r.as_ref().ok().map(|r| r.a_hat))
        .collect();
    let seeds = seeds(sim)?;
    run.finish(
        &sidecar_dir(out),
        &params,
        json!({
            "seeds": seeds,
            "runs": sim.runs,
            "slots": sim.slots,
            "a_hat_per_run": per_run_a,
            "a_hat_mean_ci": (!per_run_a.is_empty()).then(|| mean_ci(&per_run_a)),
            "analytic_capacity_objective": analytic.as_ref().and_then(|r| r.capacity_objective),
        }),
        &[out.to_path_buf()],
    )?;
    Ok(())
}
