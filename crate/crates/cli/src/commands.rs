//! Subcommand implementations.

use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use randcarpet::model::{
    check_generic_hypothesis, check_robust_hypotheses, parse_doc, validate_geometry, RandomCarpetSystem, SystemDoc,
};
use randcarpet::moran::t_bounds;
use randcarpet::optimizer::{
    dimension, maximize_structural_with, DimensionOptions, DimensionResult, StructuralOptions, DEGENERATE_BRACKET_TOL,
};
use randcarpet::percolation::{build_percolation_system, closed_form_dim, optimal_row_distribution};
use randcarpet::rng::split_seed;
use randcarpet::sampler::{
    approximate_square_threshold, box_count_estimate, empirical_pointwise_dim, generate_approximation,
    sample_environment, sample_path, BernoulliMeasure, RectSet,
};
use randcarpet::CarpetError;

use crate::error::CliError;
use crate::render::{rect_records, render_svg};
use crate::report::RunReport;
use crate::{
    ApproxArgs, BoundsArgs, BoxcountArgs, Command, DimArgs, OptimizerArgs, PercolationArgs, PercolationMethod,
    SampleArgs, ValidateArgs,
};

pub fn execute(command: &Command) -> Result<RunReport, CliError> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Dim(a) => dim(a),
        Command::Bounds(a) => bounds(a),
        Command::Percolation(a) => percolation(a),
        Command::Sample(a) => sample(a),
        Command::Approx(a) => approx(a),
        Command::Boxcount(a) => boxcount(a),
        Command::Schema => Ok(schema()),
    }
}

/// True when the command ran but its verdict is a failure (invalid geometry).
pub fn report_failed(report: &RunReport) -> bool {
    report.command == "validate" && report.results.get("geometry").and_then(|g| g.get("ok")) == Some(&Value::Bool(false))
}

pub fn load_doc(path: &Path) -> Result<SystemDoc, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_toml = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| CarpetError::Schema(e.to_string()).into())
    } else {
        Ok(parse_doc(&text)?)
    }
}

pub fn load_system(path: &Path) -> Result<RandomCarpetSystem, CliError> {
    Ok(RandomCarpetSystem::from_doc(load_doc(path)?)?)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn config_input(report: &mut RunReport, path: &Path) {
    report.input("config", path.display().to_string());
}

fn validate(a: &ValidateArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("validate");
    config_input(&mut report, &a.config.config);
    report.input("tol", a.tol);
    report.input("grid", a.grid);
    report.input("eps", a.eps);
    let start = Instant::now();
    let doc = load_doc(&a.config.config)?;
    let geometry = validate_geometry(&doc);
    report.timings_ms.insert("geometry".into(), elapsed_ms(start));
    report.result(
        "geometry",
        json!({ "ok": geometry.ok, "summary": geometry.summary(), "violations": geometry.violations }),
    );
    if !geometry.ok {
        report.warnings.push("geometry invalid; hypotheses not checked".into());
        return Ok(report);
    }
    let system = RandomCarpetSystem::from_doc(doc)?;
    let start = Instant::now();
    let generic = check_generic_hypothesis(&system, a.grid, a.tol);
    let (robust1, robust2) = check_robust_hypotheses(&system, a.eps);
    report.timings_ms.insert("hypotheses".into(), elapsed_ms(start));
    report.result("generic", &generic);
    report.result("robust1", &robust1);
    report.result("robust2", &robust2);
    Ok(report)
}

fn dimension_options(opt: &OptimizerArgs, seed: u64) -> DimensionOptions {
    DimensionOptions {
        tol: opt.tol,
        starts: opt.starts,
        seed,
        agreement_tol: opt.agreement_tol,
        grid_points: opt.t_grid,
        ..DimensionOptions::default()
    }
}

fn optimizer_inputs(report: &mut RunReport, opt: &OptimizerArgs) {
    report.input("tol", opt.tol);
    report.input("starts", opt.starts);
    report.input("t_grid", opt.t_grid);
    report.input("agreement_tol", opt.agreement_tol);
}

fn dimension_results(report: &mut RunReport, r: &DimensionResult, with_p: bool) {
    let d = &r.diagnostics;
    report.result("dimension", r.dimension);
    report.result("lambda", r.lambda);
    report.result("t", r.t);
    report.result("method", r.method.to_string());
    report.result("t_under", d.t_under);
    report.result("t_over", d.t_over);
    report.result("agreement_gap", d.agreement_gap);
    report.result("structural_dimension", d.structural_dimension);
    report.result("generic_dimension", d.generic_dimension);
    report.result("phi_residual", d.phi_residual);
    report.result("converged", d.converged);
    report.result("degenerate_bracket", d.degenerate_bracket);
    report.result("iterations", d.iterations);
    report.result("local_maxima", &d.local_maxima);
    if !d.hypotheses.is_empty() {
        let map: serde_json::Map<String, Value> = d
            .hypotheses
            .iter()
            .map(|(id, v)| (serde_json::to_value(id).unwrap().as_str().unwrap().to_string(), serde_json::to_value(v).unwrap()))
            .collect();
        report.result("hypotheses", map);
    }
    if with_p {
        report.result("p_star", r.p_star.weights());
    }
    report.warnings.extend(d.warnings.iter().cloned());
}

fn dim(a: &DimArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("dim");
    config_input(&mut report, &a.config.config);
    optimizer_inputs(&mut report, &a.opt);
    let seed = resolve_seed(a.opt.seed);
    report.seed = Some(seed);
    let system = load_system(&a.config.config)?;
    let start = Instant::now();
    let r = dimension(&system, &dimension_options(&a.opt, seed))?;
    report.timings_ms.insert("optimize".into(), elapsed_ms(start));
    dimension_results(&mut report, &r, true);
    Ok(report)
}

fn bounds(a: &BoundsArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("bounds");
    config_input(&mut report, &a.config.config);
    report.input("tol", a.tol);
    let system = load_system(&a.config.config)?;
    let start = Instant::now();
    let b = t_bounds(&system, a.tol)?;
    report.timings_ms.insert("bounds".into(), elapsed_ms(start));
    report.result("t_under", b.t_under);
    report.result("t_over", b.t_over);
    report.result("degenerate", b.is_degenerate(DEGENERATE_BRACKET_TOL));
    Ok(report)
}

fn percolation(a: &PercolationArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("percolation");
    report.input("k", a.k);
    report.input("q", a.q);
    report.input("method", format!("{:?}", a.method).to_lowercase());
    optimizer_inputs(&mut report, &a.opt);
    let seed = resolve_seed(a.opt.seed);
    report.seed = Some(seed);

    let start = Instant::now();
    let closed = closed_form_dim(a.k, a.q)?;
    report.timings_ms.insert("closed_form".into(), elapsed_ms(start));
    report.result("closed_form", closed);

    let method = match a.method {
        PercolationMethod::Auto if a.k == 2 => PercolationMethod::Full,
        PercolationMethod::Auto => {
            report
                .warnings
                .push(format!("k={} uses the structural route only; pass --method full for both", a.k));
            PercolationMethod::Structural
        }
        m => m,
    };
    if method == PercolationMethod::None {
        return Ok(report);
    }
    let start = Instant::now();
    let system = build_percolation_system(a.k, a.q)?;
    report.timings_ms.insert("build".into(), elapsed_ms(start));
    report.result("num_maps", system.num_maps());

    let start = Instant::now();
    let r = if method == PercolationMethod::Full {
        dimension(&system, &dimension_options(&a.opt, seed))?
    } else {
        let opts = StructuralOptions { tol: a.opt.tol, grid_points: a.opt.t_grid, ..StructuralOptions::default() };
        maximize_structural_with(&system, &opts)?
    };
    report.timings_ms.insert("optimize".into(), elapsed_ms(start));
    dimension_results(&mut report, &r, false);
    report.result("gap", (r.dimension - closed).abs());
    let optimal = optimal_row_distribution(&system)?;
    report.result("max_p_deviation", r.p_star.max_abs_diff(&optimal));
    Ok(report)
}

/// Up to `count` distinct depths spread geometrically over `[lo, hi]`.
fn trace_depths(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let lo = lo.clamp(1, hi);
    if count <= 1 || lo == hi {
        return vec![hi];
    }
    let ratio = (hi as f64 / lo as f64).ln();
    let mut out: Vec<usize> = (0..count)
        .map(|k| ((lo as f64) * (ratio * k as f64 / (count - 1) as f64).exp()).round() as usize)
        .map(|n| n.clamp(lo, hi))
        .collect();
    *out.last_mut().unwrap() = hi;
    out.dedup();
    out
}

fn sample(a: &SampleArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("sample");
    config_input(&mut report, &a.config.config);
    report.input("depth", a.depth);
    report.input("replicas", a.replicas);
    report.input("trace_points", a.trace_points);
    report.input("tol", a.tol);
    let seed = resolve_seed(a.seed);
    report.seed = Some(seed);
    let system = load_system(&a.config.config)?;

    let start = Instant::now();
    let opts = DimensionOptions { tol: a.tol, seed, ..DimensionOptions::default() };
    let r = dimension(&system, &opts)?;
    report.timings_ms.insert("optimize".into(), elapsed_ms(start));
    report.result("target", r.dimension);
    report.result("p_star", r.p_star.weights());
    report.warnings.extend(r.diagnostics.warnings.iter().cloned());

    let start = Instant::now();
    let measure = BernoulliMeasure::new(&system, r.p_star, a.tol)?;
    report.result("t", measure.t);
    let lo = approximate_square_threshold(&system).ceil() as usize;
    if a.depth < lo.max(1) {
        return Err(CarpetError::BelowThreshold { n: a.depth, required: approximate_square_threshold(&system) }.into());
    }
    let depths = trace_depths(lo, a.depth, a.trace_points);
    let mut replicas = Vec::with_capacity(a.replicas);
    let mut finals = Vec::with_capacity(a.replicas);
    for k in 0..a.replicas as u64 {
        let s = split_seed(seed, k);
        let env = sample_environment(&system, a.depth, s)?;
        let path = sample_path(&system, &measure, &env, s)?;
        let dims = depths
            .iter()
            .map(|&n| empirical_pointwise_dim(&system, &measure, &env, &path, n))
            .collect::<Result<Vec<f64>, _>>()?;
        finals.push(*dims.last().unwrap());
        replicas.push(json!({
            "seed": s,
            "environment": env.indices,
            "path": path.entries,
            "trace": { "n": depths, "pointwise_dim": dims },
        }));
    }
    report.timings_ms.insert("sample".into(), elapsed_ms(start));
    report.result("final_pointwise_dim", &finals);
    report.result("replicas", replicas);
    Ok(report)
}

fn build_approximation(
    report: &mut RunReport,
    config: &Path,
    seed: Option<u64>,
    depth: usize,
    cap: usize,
) -> Result<RectSet, CliError> {
    config_input(report, config);
    report.input("depth", depth);
    report.input("cap", cap);
    let seed = resolve_seed(seed);
    report.seed = Some(seed);
    let system = load_system(config)?;
    let start = Instant::now();
    let env = sample_environment(&system, depth.max(1), seed)?;
    let set = generate_approximation(&system, &env, depth, cap)?;
    report.timings_ms.insert("generate".into(), elapsed_ms(start));
    report.result("environment", &env.indices);
    report.result("rect_count", set.rects.len());
    report.result("truncated", set.truncated);
    if set.truncated {
        report.warnings.push(format!("rectangle count exceeded cap {cap}; levels were subsampled"));
    }
    Ok(set)
}

fn approx(a: &ApproxArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("approx");
    let set = build_approximation(&mut report, &a.config.config, a.seed, a.depth, a.cap)?;
    if let Some(path) = &a.render {
        report.input("render", path.display().to_string());
        report.input("width", a.width);
        std::fs::write(path, render_svg(&set, a.width)).map_err(|e| CliError::io(path, e))?;
    }
    if let Some(path) = &a.rects {
        report.input("rects", path.display().to_string());
        std::fs::write(path, rect_records(&set)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(report)
}

/// `1/2, 1/4, ...` down to the coarsest box still above the finest rectangle.
pub fn default_scales(set: &RectSet) -> Vec<f64> {
    let finest = set.rects.iter().map(|r| r.w.max(r.h)).fold(0.0, f64::max);
    (1..=60).map(|e| 0.5f64.powi(e)).take_while(|&d| d >= finest).collect()
}

fn boxcount(a: &BoxcountArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("boxcount");
    let set = build_approximation(&mut report, &a.config.config, a.seed, a.depth, a.cap)?;
    let scales = a.scales.clone().unwrap_or_else(|| default_scales(&set));
    report.input("scales", &scales);
    let start = Instant::now();
    let bc = box_count_estimate(&set, &scales)?;
    report.timings_ms.insert("count".into(), elapsed_ms(start));
    report.result("slope", bc.slope);
    report.result("r2", bc.r2);
    report.result("scales", &bc.scales);
    report.result("counts", &bc.counts);
    Ok(report)
}

/// Key names of every report, as printed by `schema`.
pub fn schema_value() -> Value {
    json!({
        "report": {
            "command": "subcommand name",
            "inputs": "echo of the arguments that determine the results",
            "results": "command-specific keys below",
            "warnings": "list of strings",
            "timings_ms": "wall-clock milliseconds per phase",
            "seed": "u64 seed of stochastic commands (string when above 2^63 - 1)"
        },
        "results": {
            "validate": ["geometry", "generic", "robust1", "robust2"],
            "dim": ["dimension", "lambda", "t", "method", "t_under", "t_over", "agreement_gap",
                    "structural_dimension", "generic_dimension", "phi_residual", "converged",
                    "degenerate_bracket", "iterations", "local_maxima", "hypotheses", "p_star"],
            "bounds": ["t_under", "t_over", "degenerate"],
            "percolation": ["closed_form", "num_maps", "dimension", "lambda", "t", "method", "t_under",
                            "t_over", "agreement_gap", "gap", "max_p_deviation"],
            "sample": ["target", "p_star", "t", "final_pointwise_dim", "replicas"],
            "approx": ["environment", "rect_count", "truncated"],
            "boxcount": ["environment", "rect_count", "truncated", "slope", "r2", "scales", "counts"],
            "schema": ["schema"]
        },
        "formats": { ".json": "JSON", ".toml": "TOML" },
        "rect_records": crate::render::RECT_HEADER
    })
}

fn schema() -> RunReport {
    let mut report = RunReport::new("schema");
    report.result("schema", schema_value());
    report
}
