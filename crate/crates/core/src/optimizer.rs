//! Evaluation of `sup_P { lambda(P) + t(P) }`.
//!
//! Two independent routes:
//!
//! * **structural**: for `t` in `(t_under, t_over)` the constrained maximum
//!   `lambda(t) = max { lambda(P) : t(P) = t }` comes from the parametric
//!   family in [`crate::moran`]; `h(t) = lambda(t) + t` is scanned on a
//!   Chebyshev grid and refined by golden-section search.
//! * **generic**: multi-start exponentiated-gradient ascent of
//!   `P -> lambda(P) + t(P)` directly on the product of scaled simplices,
//!   with finite-difference gradients.
//!
//! [`dimension`] runs both, records the gap, and reports the larger value.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};
use crate::model::{
    check_generic_hypothesis, check_robust_hypotheses, HypothesisId, RandomCarpetSystem, Verdict,
    DEFAULT_GRID_POINTS, DEFAULT_HYPOTHESIS_TOL,
};
use crate::moran::{
    lambda_of, lambda_raw, max_lambda, solve_lambda, solve_t, solve_t_raw, t_bounds, RowDistribution,
    TBounds, DEFAULT_TOL,
};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_T_GRID: usize = 64;
pub const DEFAULT_T_TOL: f64 = 1e-10;
pub const DEFAULT_STARTS: usize = 16;
pub const DEFAULT_FD_STEP: f64 = 1e-6;
pub const DEFAULT_MAX_ASCENT_ITER: usize = 20_000;
pub const DEFAULT_AGREEMENT_TOL: f64 = 1e-4;
pub const DEFAULT_ROBUST_EPS: f64 = 0.1;
/// `t_over - t_under` below this is treated as a single point.
pub const DEGENERATE_BRACKET_TOL: f64 = 1e-9;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Structural,
    Generic,
    ClosedForm,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Structural => "structural",
            Method::Generic => "generic",
            Method::ClosedForm => "closed_form",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMax {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `phi(t)` at `P_star`.
    pub phi_residual: f64,
    pub t_under: f64,
    pub t_over: f64,
    pub degenerate_bracket: bool,
    pub structural_dimension: Option<f64>,
    pub generic_dimension: Option<f64>,
    pub agreement_gap: Option<f64>,
    pub agreement_warning: bool,
    /// Local maxima of the objective: grid maxima of `h(t)` for the
    /// structural route, distinct start results for the generic route.
    pub local_maxima: Vec<LocalMax>,
    pub converged: bool,
    pub hypotheses: Vec<(HypothesisId, Verdict)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub dimension: f64,
    pub lambda: f64,
    pub t: f64,
    pub p_star: RowDistribution,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl DimensionResult {
    fn new(system: &RandomCarpetSystem, p_star: RowDistribution, lambda: f64, t: f64, method: Method, mut diagnostics: Diagnostics) -> Self {
        diagnostics.phi_residual = crate::moran::phi(system, &p_star, t);
        Self {
            dimension: lambda + t,
            lambda,
            t,
            p_star,
            method,
            diagnostics,
        }
    }
}

// ---------------------------------------------------------------------------
// Structural route

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralOptions {
    pub tol: f64,
    pub grid_points: usize,
    pub t_tol: f64,
}

impl Default for StructuralOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            grid_points: DEFAULT_T_GRID,
            t_tol: DEFAULT_T_TOL,
        }
    }
}

/// Chebyshev nodes of the first kind in `(lo, hi)`, ascending.
pub fn chebyshev_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    (0..n)
        .rev()
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + 1) as f64 / (2 * n) as f64;
            mid + half * theta.cos()
        })
        .collect()
}

/// `h(t) = lambda(t) + t` on the structural curve.
fn h_at(system: &RandomCarpetSystem, t: f64, tol: f64) -> Result<f64> {
    solve_lambda(system, t, tol)
        .map(|s| s.lambda + t)
        .map_err(|e| CarpetError::StructuralAt {
            t,
            source: Box::new(e),
        })
}

pub fn maximize_structural(system: &RandomCarpetSystem, tol: f64) -> Result<DimensionResult> {
    maximize_structural_with(
        system,
        &StructuralOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn maximize_structural_with(system: &RandomCarpetSystem, opts: &StructuralOptions) -> Result<DimensionResult> {
    let bounds = t_bounds(system, opts.tol)?;
    let mut diag = Diagnostics {
        t_under: bounds.t_under,
        t_over: bounds.t_over,
        ..Default::default()
    };

    if bounds.is_degenerate(DEGENERATE_BRACKET_TOL) {
        // t(P) is the same for every P, so only lambda is maximized
        let sol = max_lambda(system, opts.tol)?;
        let t = solve_t(system, &sol.point.p, opts.tol)?;
        diag.degenerate_bracket = true;
        diag.converged = true;
        diag.local_maxima.push(LocalMax {
            t,
            value: sol.lambda + t,
        });
        return Ok(DimensionResult::new(system, sol.point.p, sol.lambda, t, Method::Structural, diag));
    }

    let nodes = chebyshev_nodes(bounds.t_under, bounds.t_over, opts.grid_points.max(3));
    let values = nodes
        .par_iter()
        .map(|&t| h_at(system, t, opts.tol))
        .collect::<Result<Vec<f64>>>()?;
    diag.iterations = nodes.len();

    for k in 0..values.len() {
        let left = k == 0 || values[k] >= values[k - 1];
        let right = k + 1 == values.len() || values[k] >= values[k + 1];
        if left && right {
            diag.local_maxima.push(LocalMax {
                t: nodes[k],
                value: values[k],
            });
        }
    }
    let best = (0..values.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .expect("grid is nonempty");

    let mut lo = if best == 0 { bounds.t_under } else { nodes[best - 1] };
    let mut hi = if best + 1 == nodes.len() { bounds.t_over } else { nodes[best + 1] };
    let (mut best_t, mut best_h) = (nodes[best], values[best]);

    // a failure strictly inside the bracket only happens numerically next to
    // t_under or t_over, where h is not maximal; such points are skipped
    let mut failures = 0usize;
    let mut eval = |t: f64, diag: &mut Diagnostics| -> f64 {
        diag.iterations += 1;
        match h_at(system, t, opts.tol) {
            Ok(v) => v,
            Err(_) => {
                failures += 1;
                f64::NEG_INFINITY
            }
        }
    };
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = eval(x1, &mut diag);
    let mut f2 = eval(x2, &mut diag);
    while hi - lo > opts.t_tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = eval(x1, &mut diag);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = eval(x2, &mut diag);
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f > best_h {
                best_h = f;
                best_t = x;
            }
        }
    }
    if failures > 0 {
        diag.warnings.push(format!(
            "{failures} golden-section evaluation(s) failed near the bracket ends and were skipped"
        ));
    }

    let sol = solve_lambda(system, best_t, opts.tol).map_err(|e| CarpetError::StructuralAt {
        t: best_t,
        source: Box::new(e),
    })?;
    diag.converged = true;
    Ok(DimensionResult::new(system, sol.point.p, sol.lambda, best_t, Method::Structural, diag))
}

// ---------------------------------------------------------------------------
// Generic route

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericOptions {
    pub starts: usize,
    pub tol: f64,
    pub fd_step: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for GenericOptions {
    fn default() -> Self {
        Self {
            starts: DEFAULT_STARTS,
            tol: DEFAULT_TOL,
            fd_step: DEFAULT_FD_STEP,
            max_iter: DEFAULT_MAX_ASCENT_ITER,
            seed: 0,
        }
    }
}

/// `lambda(P) + t(P)` with `t` solved to full floating-point resolution, so
/// that finite differences see a smooth function.
pub(crate) fn objective_raw(system: &RandomCarpetSystem, w: &[Vec<f64>]) -> f64 {
    let t = solve_t_raw(system, w, 0.0).unwrap_or(f64::NAN);
    lambda_raw(system, w) + t
}

/// `lambda(P) + t(P)` for a valid row distribution.
pub fn objective(system: &RandomCarpetSystem, p: &RowDistribution, tol: f64) -> Result<f64> {
    Ok(lambda_of(system, p) + solve_t(system, p, tol)?)
}

#[derive(Debug, Clone)]
struct Ascent {
    weights: Vec<Vec<f64>>,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn starting_points(system: &RandomCarpetSystem, count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut starts = vec![RowDistribution::uniform(system).into_weights()];
    let counts: Vec<Vec<f64>> = system
        .maps()
        .iter()
        .map(|m| m.rows.iter().map(|r| r.cells.len() as f64).collect())
        .collect();
    starts.push(
        RowDistribution::from_conditional(system, &counts)
            .expect("cell counts are positive")
            .into_weights(),
    );
    let mut rng = stream_rng(seed, Stream::MultiStart);
    while starts.len() < count.max(1) {
        let scores: Vec<Vec<f64>> = system
            .shape()
            .into_iter()
            .map(|m| (0..m).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect())
            .collect();
        starts.push(
            RowDistribution::from_conditional(system, &scores)
                .expect("exponential scores are positive")
                .into_weights(),
        );
    }
    starts.truncate(count.max(1));
    starts
}

fn gradient(system: &RandomCarpetSystem, w: &[Vec<f64>], step: f64, free: &[usize]) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = w.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut probe = w.to_vec();
    for &i in free {
        for j in 0..w[i].len() {
            let x = w[i][j];
            g[i][j] = if x > step {
                probe[i][j] = x + step;
                let up = objective_raw(system, &probe);
                probe[i][j] = x - step;
                let down = objective_raw(system, &probe);
                (up - down) / (2.0 * step)
            } else {
                probe[i][j] = x + step;
                let up = objective_raw(system, &probe);
                probe[i][j] = x;
                let here = objective_raw(system, &probe);
                (up - here) / step
            };
            probe[i][j] = x;
        }
    }
    g
}

/// Multiplicative update `p_ij <- p_ij exp(eta g_ij)`, renormalized to `p_i`.
fn eg_step(w: &[Vec<f64>], g: &[Vec<f64>], eta: f64, masses: &[f64], free: &[usize]) -> Vec<Vec<f64>> {
    let mut out = w.to_vec();
    for &i in free {
        let gmax = g[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row: Vec<f64> = w[i]
            .iter()
            .zip(&g[i])
            .map(|(&p, &gi)| p * (eta * (gi - gmax)).exp())
            .collect();
        let total: f64 = row.iter().sum();
        out[i] = row.iter().map(|x| masses[i] * x / total).collect();
    }
    out
}

/// Stationarity measure `sum_ij p_ij (g_ij - gbar_i)^2`.
fn stationarity(w: &[Vec<f64>], g: &[Vec<f64>], free: &[usize]) -> f64 {
    free.iter()
        .map(|&i| {
            let mass: f64 = w[i].iter().sum();
            let mean = w[i].iter().zip(&g[i]).map(|(p, gi)| p * gi).sum::<f64>() / mass;
            w[i].iter()
                .zip(&g[i])
                .map(|(p, gi)| p * (gi - mean).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn ascend(system: &RandomCarpetSystem, start: Vec<Vec<f64>>, opts: &GenericOptions) -> Ascent {
    let free: Vec<usize> = (0..system.num_maps())
        .filter(|&i| system.num_rows(i) > 1)
        .collect();
    let masses = system.env_probs();
    let mut w = start;
    let mut value = objective_raw(system, &w);
    if free.is_empty() {
        return Ascent {
            weights: w,
            value,
            iterations: 0,
            converged: true,
        };
    }
    let mut eta = 1.0;
    for iter in 0..opts.max_iter {
        let g = gradient(system, &w, opts.fd_step, &free);
        if stationarity(&w, &g, &free) < 1e-22 {
            return Ascent { weights: w, value, iterations: iter, converged: true };
        }
        loop {
            let cand = eg_step(&w, &g, eta, masses, &free);
            let v = objective_raw(system, &cand);
            if v > value {
                w = cand;
                value = v;
                eta = (eta * 2.0).min(1e6);
                break;
            }
            eta *= 0.5;
            if eta < 1e-14 {
                // no ascent direction left at the resolution of the gradient
                return Ascent { weights: w, value, iterations: iter, converged: true };
            }
        }
    }
    Ascent {
        weights: w,
        value,
        iterations: opts.max_iter,
        converged: false,
    }
}

pub fn maximize_generic(system: &RandomCarpetSystem, starts: usize, tol: f64) -> Result<DimensionResult> {
    maximize_generic_with(
        system,
        &GenericOptions {
            starts,
            tol,
            ..Default::default()
        },
    )
}

pub fn maximize_generic_with(system: &RandomCarpetSystem, opts: &GenericOptions) -> Result<DimensionResult> {
    let bounds = t_bounds(system, opts.tol)?;
    let runs: Vec<Ascent> = starting_points(system, opts.starts, opts.seed)
        .into_par_iter()
        .map(|s| ascend(system, s, opts))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .expect("at least one start");

    let mut diag = Diagnostics {
        t_under: bounds.t_under,
        t_over: bounds.t_over,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        converged: runs[best].converged,
        ..Default::default()
    };
    for r in &runs {
        if !diag
            .local_maxima
            .iter()
            .any(|m| (m.value - r.value).abs() < 1e-9)
        {
            let t = solve_t_raw(system, &r.weights, opts.tol).unwrap_or(f64::NAN);
            diag.local_maxima.push(LocalMax { t, value: r.value });
        }
    }
    if !diag.converged {
        diag.warnings.push(format!(
            "best ascent did not converge within {} iterations",
            opts.max_iter
        ));
    }
    let p = RowDistribution::from_raw(runs[best].weights.clone());
    let t = solve_t(system, &p, opts.tol)?;
    let lambda = lambda_of(system, &p);
    Ok(DimensionResult::new(system, p, lambda, t, Method::Generic, diag))
}

// ---------------------------------------------------------------------------
// Orchestration

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionOptions {
    pub tol: f64,
    pub starts: usize,
    pub seed: u64,
    pub agreement_tol: f64,
    pub grid_points: usize,
    pub hypothesis_grid: usize,
    pub hypothesis_tol: f64,
    pub robust_eps: f64,
}

impl Default for DimensionOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            starts: DEFAULT_STARTS,
            seed: 0,
            agreement_tol: DEFAULT_AGREEMENT_TOL,
            grid_points: DEFAULT_T_GRID,
            hypothesis_grid: DEFAULT_GRID_POINTS,
            hypothesis_tol: DEFAULT_HYPOTHESIS_TOL,
            robust_eps: DEFAULT_ROBUST_EPS,
        }
    }
}

/// Runs the hypothesis checks and both maximization routes.
///
/// The structural route is skipped when the generic hypothesis fails. The
/// returned result is the larger of the two values; both are recorded, and a
/// gap above `agreement_tol` raises `agreement_warning`.
pub fn dimension(system: &RandomCarpetSystem, opts: &DimensionOptions) -> Result<DimensionResult> {
    let generic_check = check_generic_hypothesis(system, opts.hypothesis_grid, opts.hypothesis_tol);
    let (robust1, robust2) = check_robust_hypotheses(system, opts.robust_eps);
    let mut warnings = Vec::new();
    match generic_check.verdict {
        Verdict::Fail => warnings.push(format!(
            "generic hypothesis fails ({}); structural route skipped",
            generic_check.witness.notes.join("; ")
        )),
        Verdict::Inconclusive => warnings.push(format!(
            "generic hypothesis inconclusive near t in {:?}",
            generic_check.witness.suspect_intervals
        )),
        Verdict::Pass => {}
    }
    if robust1.verdict != Verdict::Pass && robust2.verdict != Verdict::Pass {
        warnings.push(format!(
            "neither robust hypothesis holds at eps={}",
            opts.robust_eps
        ));
    }

    let structural = if generic_check.verdict == Verdict::Fail {
        None
    } else {
        let sopts = StructuralOptions {
            tol: opts.tol,
            grid_points: opts.grid_points,
            t_tol: DEFAULT_T_TOL,
        };
        match maximize_structural_with(system, &sopts) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("structural route failed: {e}"));
                None
            }
        }
    };
    let gopts = GenericOptions {
        starts: opts.starts,
        tol: opts.tol,
        seed: opts.seed,
        ..Default::default()
    };
    let generic = maximize_generic_with(system, &gopts)?;

    let structural_dimension = structural.as_ref().map(|r| r.dimension);
    let generic_dimension = generic.dimension;
    let agreement_gap = structural_dimension.map(|s| (s - generic_dimension).abs());
    let agreement_warning = agreement_gap.is_some_and(|g| g > opts.agreement_tol);
    if agreement_warning {
        warnings.push(format!(
            "structural and generic routes disagree by {:e} (> {:e})",
            agreement_gap.unwrap(),
            opts.agreement_tol
        ));
    }

    let mut chosen = match structural {
        Some(s) if s.dimension >= generic.dimension => {
            let mut s = s;
            s.diagnostics.warnings.extend(generic.diagnostics.warnings.iter().cloned());
            s
        }
        Some(s) => {
            let mut g = generic;
            g.diagnostics.warnings.extend(s.diagnostics.warnings);
            g
        }
        None => generic,
    };
    let d = &mut chosen.diagnostics;
    d.structural_dimension = structural_dimension;
    d.generic_dimension = Some(generic_dimension);
    d.agreement_gap = agreement_gap;
    d.agreement_warning = agreement_warning;
    d.hypotheses = vec![
        (HypothesisId::Generic, generic_check.verdict),
        (HypothesisId::Robust1, robust1.verdict),
        (HypothesisId::Robust2, robust2.verdict),
    ];
    warnings.append(&mut d.warnings);
    d.warnings = warnings;
    Ok(chosen)
}

/// `t_under`, `t_over` for reporting.
pub fn bracket(system: &RandomCarpetSystem, tol: f64) -> Result<TBounds> {
    t_bounds(system, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CarpetMap, Row};

    fn mcmullen() -> RandomCarpetSystem {
        let third = 1.0 / 3.0;
        RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![
                Row::packed(0.5, 0.0, &[third, third]),
                Row::packed(0.5, 0.5, &[third]),
            ])],
            vec![1.0],
        )
        .unwrap()
    }

    fn mcmullen_oracle() -> f64 {
        // log_2 (2^{log_3 2} + 1)
        (2f64.powf(2f64.ln() / 3f64.ln()) + 1.0).log2()
    }

    #[test]
    fn chebyshev_nodes_are_interior_and_sorted() {
        let n = chebyshev_nodes(0.2, 0.7, 64);
        assert_eq!(n.len(), 64);
        assert!(n.windows(2).all(|w| w[0] < w[1]));
        assert!(n[0] > 0.2 && n[63] < 0.7);
    }

    #[test]
    fn structural_mcmullen() {
        let r = maximize_structural(&mcmullen(), 1e-12).unwrap();
        assert!((r.dimension - mcmullen_oracle()).abs() < 1e-8, "{}", r.dimension);
        assert_eq!(r.dimension, r.lambda + r.t);
    }

    #[test]
    fn generic_mcmullen() {
        let r = maximize_generic(&mcmullen(), 4, 1e-12).unwrap();
        assert!((r.dimension - mcmullen_oracle()).abs() < 1e-8, "{}", r.dimension);
    }

    #[test]
    fn single_row_moran_case() {
        let s = RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![Row::packed(0.5, 0.0, &[0.25, 0.25])])],
            vec![1.0],
        )
        .unwrap();
        let g = maximize_generic(&s, 3, 1e-12).unwrap();
        assert!((g.dimension - 0.5).abs() < 1e-12);
        assert_eq!(g.lambda, 0.0);
        let st = maximize_structural(&s, 1e-12).unwrap();
        assert!(st.diagnostics.degenerate_bracket);
        assert!((st.dimension - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_skips_structural_when_generic_fails() {
        let s = RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![
                Row::packed(0.3, 0.0, &[0.2, 0.1]),
                Row::packed(0.3, 0.5, &[0.1, 0.2]),
            ])],
            vec![1.0],
        )
        .unwrap();
        let r = dimension(&s, &DimensionOptions::default()).unwrap();
        assert_eq!(r.method, Method::Generic);
        assert!(r.diagnostics.structural_dimension.is_none());
        assert!(r.diagnostics.warnings.iter().any(|w| w.contains("generic hypothesis fails")));
        // closed form: lambda = ln2 / -ln 0.3, t solves 0.2^t + 0.1^t = 1
        let t = crate::roots::bisect(
            |t| 0.2f64.powf(t) + 0.1f64.powf(t) - 1.0,
            0.0,
            1.0,
            1.0,
            -0.7,
            0.0,
            200,
        )
        .x;
        let expected = 2f64.ln() / -(0.3f64.ln()) + t;
        assert!((r.dimension - expected).abs() < 1e-9);
    }
}
