//! The four subcommands as library functions. Each writes its artifacts to an
//! output directory and returns the JSON it wrote.

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use mmpart::contraction::{
    estimate_contraction, inclusion_gap, theorem1_bound, theorem2_bound, ContractionEstimate,
    RegionPiece,
};
use mmpart::interval::IntervalVector;
use mmpart::models::{
    containment_check, sample_trajectories, union_area_raster, write_trajectories_csv,
    ContainmentReport,
};
use mmpart::partition::{
    compute_reachable_set_with_tree, tree_stats, PartitionError, ReachTube, TreeStats,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, Mode};

pub const SCHEMA_VERSION: u32 = 1;

/// Raster resolution for union areas of planar systems.
pub const UNION_RESOLUTION: usize = 1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{violations} containment violation(s), worst excess {worst:e}")]
    Soundness { violations: usize, worst: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 1 configuration (and i/o), 2 soundness violation,
    /// 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Soundness { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::Params(m) => CliError::Config(ConfigError {
                path: String::new(),
                line: None,
                message: m,
            }),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

/// Result of one run of the partitioning algorithm.
pub struct ReachRun {
    pub tube: ReachTube,
    pub tree: TreeStats,
    pub seconds: f64,
}

/// Runs the algorithm once. `parallel = false` is the sequential reference path.
pub fn run_reach(exp: &Experiment, parallel: bool) -> Result<ReachRun, CliError> {
    let params = exp.params.clone().with_parallel(parallel);
    let factory = exp.scenario.factory();
    let start = Instant::now();
    let (tube, root) =
        compute_reachable_set_with_tree(&exp.scenario.initial, &params, factory.as_ref())?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(ReachRun {
        tube,
        tree: tree_stats(&root),
        seconds,
    })
}

pub fn tube_csv(tube: &ReachTube) -> String {
    let mut buf = Vec::new();
    tube.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn finite_or_inf(v: &[f64]) -> Value {
    v.iter()
        .map(|&x| {
            if x.is_infinite() {
                Value::from("inf")
            } else {
                Value::from(x)
            }
        })
        .collect()
}

fn box_json(b: &IntervalVector) -> Value {
    json!({ "lo": b.lo(), "hi": b.hi() })
}

fn final_boxes(tube: &ReachTube) -> Vec<IntervalVector> {
    tube.boxes
        .last()
        .map(|v| v.iter().map(|b| b.bx.clone()).collect())
        .unwrap_or_default()
}

/// Summary of a run. Everything except `wall_time_s` is a function of the
/// configuration alone.
pub fn reach_summary(exp: &Experiment, run: &ReachRun) -> Value {
    let tube = &run.tube;
    let hull = tube.final_hull();
    let n = hull.dim();
    let coords: Vec<usize> = (0..n).collect();
    let steps: Vec<Value> = (0..tube.len())
        .map(|k| json!({ "time": tube.times[k], "boxes": tube.boxes[k].len(), "hull_widths": tube.hull_at(k).widths() }))
        .collect();
    let total_nn: usize = tube.stats.iter().map(|s| s.nn_calls).sum();
    let mut summary = json!({
        "schema": SCHEMA_VERSION,
        "command": "reach",
        "system": exp.scenario.plant.name(),
        "network": exp.config.network,
        "mode": exp.config.mode,
        "coupling": exp.config.coupling,
        "parameters": {
            "eps": finite_or_inf(&exp.config.effective_eps()),
            "gamma": exp.params.gamma,
            "max_depth": exp.params.max_depth,
            "nn_depth": exp.params.nn_depth,
        },
        "wall_time_s": run.seconds,
        "final_time": tube.times.last(),
        "leaves": run.tree.leaves,
        "max_depth": run.tree.max_depth,
        "nn_calls": total_nn,
        "final_hull": box_json(&hull),
        "volume": hull.volume(&coords),
        "intervals": tube.stats,
        "steps": steps,
        "warnings": exp.warnings,
    });
    if n == 2 {
        summary["area"] = json!(hull.volume(&coords));
        summary["union_area"] =
            json!(union_area_raster(&final_boxes(tube), (0, 1), UNION_RESOLUTION).ok());
        summary["union_resolution"] = json!(UNION_RESOLUTION);
    }
    summary
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<(), CliError> {
    fs::write(
        dir.join(name),
        serde_json::to_string_pretty(v).expect("json") + "\n",
    )?;
    Ok(())
}

/// `reach`: tube.csv, summary.json, timing.csv.
pub fn cmd_reach(exp: &Experiment, out: &Path, parallel: bool) -> Result<Value, CliError> {
    fs::create_dir_all(out)?;
    let run = run_reach(exp, parallel)?;
    fs::write(out.join("tube.csv"), tube_csv(&run.tube))?;
    fs::write(
        out.join("timing.csv"),
        format!("command,rep,seconds\nreach,0,{}\n", run.seconds),
    )?;
    let summary = reach_summary(exp, &run);
    write_json(out, "summary.json", &summary)?;
    Ok(summary)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `bench`: repeats the run `reps` times; timing.csv has one row per rep.
pub fn cmd_bench(
    exp: &Experiment,
    out: &Path,
    reps: usize,
    parallel: bool,
) -> Result<Value, CliError> {
    if reps < 2 {
        return Err(ConfigError {
            path: "repetitions".into(),
            line: None,
            message: format!("bench needs at least 2 repetitions, got {reps}"),
        }
        .into());
    }
    fs::create_dir_all(out)?;
    let mut times = vec![];
    let mut volumes = vec![];
    let mut first_csv: Option<String> = None;
    let mut identical = true;
    let mut last = None;
    for _ in 0..reps {
        let run = run_reach(exp, parallel)?;
        let csv = tube_csv(&run.tube);
        match &first_csv {
            None => first_csv = Some(csv),
            Some(c) => identical &= *c == csv,
        }
        let hull = run.tube.final_hull();
        volumes.push(hull.volume(&(0..hull.dim()).collect::<Vec<_>>()));
        times.push(run.seconds);
        last = Some(run);
    }
    let mut timing = String::from("command,rep,seconds,volume\n");
    for (k, (t, v)) in times.iter().zip(&volumes).enumerate() {
        timing += &format!("bench,{k},{t},{v}\n");
    }
    fs::write(out.join("timing.csv"), timing)?;
    let run = last.expect("reps >= 2");
    fs::write(out.join("tube.csv"), first_csv.expect("reps >= 2"))?;
    let (mean, std) = mean_std(&times);
    let report = json!({
        "schema": SCHEMA_VERSION,
        "command": "bench",
        "system": exp.scenario.plant.name(),
        "mode": exp.config.mode,
        "reps": reps,
        "mean_s": mean,
        "std_s": std,
        "volume": volumes[0],
        "identical": identical,
        "leaves": run.tree.leaves,
        "nn_calls": run.tube.stats.iter().map(|s| s.nn_calls).sum::<usize>(),
    });
    write_json(out, "bench.json", &report)?;
    Ok(report)
}

/// Tube and trajectories for a Monte-Carlo check.
pub fn run_mc(
    exp: &Experiment,
    count: usize,
    seed: u64,
    parallel: bool,
) -> Result<(ReachRun, Vec<Vec<Vec<f64>>>, ContainmentReport), CliError> {
    let run = run_reach(exp, parallel)?;
    let trajs = sample_trajectories(&exp.scenario, count, seed);
    let report = containment_check(&run.tube, &trajs, exp.config.monte_carlo.slack)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok((run, trajs, report))
}

/// `mc`: mc.json and trajectories.csv; a violation is an error after the
/// artifacts are written.
pub fn cmd_mc(exp: &Experiment, out: &Path, seed: u64, parallel: bool) -> Result<Value, CliError> {
    fs::create_dir_all(out)?;
    let count = exp.config.monte_carlo.trajectories;
    let (run, trajs, rep) = run_mc(exp, count, seed, parallel)?;
    write_trajectories_csv(
        BufWriter::new(fs::File::create(out.join("trajectories.csv"))?),
        &run.tube.times,
        &trajs,
    )?;
    fs::write(out.join("tube.csv"), tube_csv(&run.tube))?;
    let first = rep
        .first_violation
        .map(|(t, k)| json!({ "trajectory": t, "step": k, "time": run.tube.times[k] }));
    let v = json!({
        "schema": SCHEMA_VERSION,
        "command": "mc",
        "system": exp.scenario.plant.name(),
        "seed": seed,
        "slack": exp.config.monte_carlo.slack,
        "trajectories": rep.trajectories,
        "checks": rep.checks,
        "violations": rep.violations,
        "worst_excess": rep.worst_excess,
        "first_violation": first,
    });
    write_json(out, "mc.json", &v)?;
    if rep.violations > 0 {
        return Err(CliError::Soundness {
            violations: rep.violations,
            worst: rep.worst_excess,
        });
    }
    Ok(v)
}

/// Contraction diagnostics along a tube.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundsStep {
    pub time: f64,
    /// Running suprema over `Omega_t`, the union of hull boxes up to `time`.
    pub estimate: ContractionEstimate,
    pub composite: f64,
    pub dominance_holds: bool,
    pub nn_gap: f64,
    pub theorem1_rhs: f64,
    /// Largest hull width at `time`; bounds the embedding error of every
    /// contained trajectory.
    pub hull_width: f64,
}

fn merge(a: &ContractionEstimate, b: &ContractionEstimate) -> ContractionEstimate {
    ContractionEstimate {
        c_x: a.c_x.max(b.c_x),
        c_x_o: a.c_x_o.max(b.c_x_o),
        l_u_o: a.l_u_o.max(b.l_u_o),
        l_w_o: a.l_w_o.max(b.l_w_o),
        lip_inf: a.lip_inf.max(b.lip_inf),
        method: a.method,
        sample_count: a.sample_count + b.sample_count,
    }
}

/// Dominance slack for the composite bound.
pub const DOMINANCE_SLACK: f64 = 1e-6;

/// Estimates on each tube hull (fresh network bounds per hull), accumulated
/// over time.
pub fn contraction_along(exp: &Experiment, tube: &ReachTube) -> Result<Vec<BoundsStep>, CliError> {
    let sys = exp.scenario.plant.diagnostic_system();
    let w = &exp.scenario.disturbance;
    let w_err = w.widths().into_iter().fold(0.0, f64::max);
    let init_err = tube.hull_at(0).widths().into_iter().fold(0.0, f64::max);
    let t0 = tube.times[0];
    let mut acc: Option<ContractionEstimate> = None;
    let mut gap: f64 = 0.0;
    let mut out = vec![];
    for k in 0..tube.len() {
        let hull = tube.hull_at(k);
        let piece = RegionPiece::verified(&exp.scenario.net, hull.clone())
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let est = estimate_contraction(
            sys.as_ref(),
            w,
            std::slice::from_ref(&piece),
            exp.config.diagnostics,
        )
        .map_err(|e| CliError::Numeric(e.to_string()))?;
        gap = gap.max(
            inclusion_gap(&exp.scenario.net, &piece.inclusion, &hull, 64)
                .map_err(|e| CliError::Numeric(e.to_string()))?,
        );
        let cur = match &acc {
            None => est,
            Some(a) => merge(a, &est),
        };
        let composite = theorem2_bound(cur.c_x_o, cur.l_u_o, cur.lip_inf);
        out.push(BoundsStep {
            time: tube.times[k],
            composite,
            dominance_holds: cur.c_x <= composite + DOMINANCE_SLACK,
            nn_gap: gap,
            theorem1_rhs: theorem1_bound(&cur, tube.times[k] - t0, init_err, gap, w_err),
            hull_width: hull.widths().into_iter().fold(0.0, f64::max),
            estimate: cur.clone(),
        });
        acc = Some(cur);
    }
    Ok(out)
}

/// `bounds`: bounds.json with per-step diagnostics.
pub fn cmd_bounds(exp: &Experiment, out: &Path, parallel: bool) -> Result<Value, CliError> {
    fs::create_dir_all(out)?;
    let run = run_reach(exp, parallel)?;
    let steps = contraction_along(exp, &run.tube)?;
    let last = steps.last().expect("tube has its initial time");
    let v = json!({
        "schema": SCHEMA_VERSION,
        "command": "bounds",
        "system": exp.scenario.plant.name(),
        "method": exp.config.diagnostics,
        "c_x": last.estimate.c_x,
        "composite": last.composite,
        "dominance_holds": steps.iter().all(|s| s.dominance_holds),
        "steps": steps,
    });
    write_json(out, "bounds.json", &v)?;
    Ok(v)
}

/// Human-readable one-line result.
pub fn describe(exp: &Experiment, v: &Value) -> String {
    let mode = match exp.config.mode {
        Mode::Adaptive => "adaptive",
        Mode::NonAdaptiveUniform => "non-adaptive",
    };
    match v["command"].as_str() {
        Some("reach") => format!(
            "{} {mode} (D_p={}, D_N={}): volume {:.4e}, {} leaves, {} network bounds, {:.3}s",
            v["system"].as_str().unwrap_or(""),
            exp.params.max_depth,
            exp.params.nn_depth,
            v["volume"].as_f64().unwrap_or(f64::NAN),
            v["leaves"],
            v["nn_calls"],
            v["wall_time_s"].as_f64().unwrap_or(0.0)
        ),
        Some("bench") => format!(
            "{} {mode}: {:.4}s +- {:.4}s over {} reps, volume {:.4e}, identical {}",
            v["system"].as_str().unwrap_or(""),
            v["mean_s"].as_f64().unwrap_or(f64::NAN),
            v["std_s"].as_f64().unwrap_or(f64::NAN),
            v["reps"],
            v["volume"].as_f64().unwrap_or(f64::NAN),
            v["identical"]
        ),
        Some("mc") => format!(
            "{} trajectories, {} checks, {} violations",
            v["trajectories"], v["checks"], v["violations"]
        ),
        Some("bounds") => format!(
            "c_x {:.4}, composite {:.4}, dominance {}",
            v["c_x"].as_f64().unwrap_or(f64::NAN),
            v["composite"].as_f64().unwrap_or(f64::NAN),
            v["dominance_holds"]
        ),
        _ => v.to_string(),
    }
}
