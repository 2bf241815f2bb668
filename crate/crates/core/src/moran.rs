//! Scalar solves behind the variational formula.
//!
//! For a row distribution `P = (p_ij)` the horizontal exponent `t(P)` is the
//! root of the random Moran equation
//!
//! ```text
//! phi(t) = sum_ij p_ij ln( sum_k a_ijk^t ) = 0,
//! ```
//!
//! and the vertical exponent is the conditional entropy of the row choice
//! divided by the vertical Lyapunov exponent:
//!
//! ```text
//! lambda(P) = (sum_ij p_ij ln p_ij - sum_i p_i ln p_i) / sum_ij p_ij ln b_ij.
//! ```
//!
//! The parametric family `p_ij(alpha, lambda, t) = p_i b_ij^lambda S_ij(t)^alpha / gamma_i`
//! (with `S_ij(t) = sum_k a_ijk^t`) is used to trace the constrained maximum
//! of `lambda(P)` over `{P : t(P) = t}`: `alpha` is fixed by `F = 0` (the
//! family hits `t(P) = t`), then `lambda` by `G = sum_i p_i ln gamma_i = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};
use crate::model::RandomCarpetSystem;
use crate::roots::{self, bisect, expand_increasing};

pub use crate::roots::DEFAULT_TOL;

/// Largest |alpha| tried while bracketing `F = 0`.
pub const ALPHA_CAP: f64 = 1e6;
/// Above this |alpha| `gamma` is evaluated in log space.
pub const LOG_SPACE_ALPHA: f64 = 50.0;
/// Tolerance on `sum_j p_ij = p_i`.
pub const ROW_MASS_TOL: f64 = 1e-12;

/// Weights `p_ij >= 0` with `sum_j p_ij = p_i` for every map `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowDistribution {
    weights: Vec<Vec<f64>>,
}

impl RowDistribution {
    pub fn new(system: &RandomCarpetSystem, weights: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(system, &weights)?;
        for (i, row) in weights.iter().enumerate() {
            if let Some(j) = row.iter().position(|w| !w.is_finite() || *w < 0.0) {
                return Err(CarpetError::InvalidInput(format!(
                    "weight p[{i}][{j}] = {} is not a finite non-negative number",
                    row[j]
                )));
            }
            let mass: f64 = row.iter().sum();
            let pi = system.env_probs()[i];
            if (mass - pi).abs() > ROW_MASS_TOL {
                return Err(CarpetError::InvalidInput(format!(
                    "weights of map {i} sum to {mass}, expected p_{i} = {pi}"
                )));
            }
        }
        Ok(Self { weights })
    }

    /// `p_ij = p_i * c_ij / sum_j c_ij` from arbitrary non-negative row scores.
    pub fn from_conditional(system: &RandomCarpetSystem, scores: &[Vec<f64>]) -> Result<Self> {
        check_shape(system, scores)?;
        let mut weights = Vec::with_capacity(scores.len());
        for (i, row) in scores.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if !(total > 0.0 && total.is_finite()) || row.iter().any(|c| *c < 0.0) {
                return Err(CarpetError::InvalidInput(format!(
                    "conditional scores of map {i} must be non-negative with positive finite sum"
                )));
            }
            let pi = system.env_probs()[i];
            weights.push(row.iter().map(|c| pi * c / total).collect());
        }
        Ok(Self { weights })
    }

    /// `p_ij = p_i / m_i`.
    pub fn uniform(system: &RandomCarpetSystem) -> Self {
        let weights = system
            .env_probs()
            .iter()
            .zip(system.shape())
            .map(|(&pi, mi)| vec![pi / mi as f64; mi])
            .collect();
        Self { weights }
    }

    pub(crate) fn from_raw(weights: Vec<Vec<f64>>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn into_weights(self) -> Vec<Vec<f64>> {
        self.weights
    }

    pub fn max_abs_diff(&self, other: &RowDistribution) -> f64 {
        self.weights
            .iter()
            .flatten()
            .zip(other.weights.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(system: &RandomCarpetSystem, weights: &[Vec<f64>]) -> Result<()> {
    let shape = system.shape();
    if weights.len() != shape.len() || weights.iter().zip(&shape).any(|(w, &m)| w.len() != m) {
        return Err(CarpetError::InvalidInput(format!(
            "row distribution shape {:?} does not match system shape {:?}",
            weights.iter().map(Vec::len).collect::<Vec<_>>(),
            shape
        )));
    }
    Ok(())
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub(crate) fn phi_raw(system: &RandomCarpetSystem, w: &[Vec<f64>], t: f64) -> f64 {
    let mut total = 0.0;
    for (i, row) in w.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                total += p * system.row_sum_at(i, j, t).ln();
            }
        }
    }
    total
}

/// `phi(t) = sum_ij p_ij ln(sum_k a_ijk^t)`; zero weights contribute nothing.
pub fn phi(system: &RandomCarpetSystem, p: &RowDistribution, t: f64) -> f64 {
    phi_raw(system, &p.weights, t)
}

/// Root in `[0, 1]` of a decreasing function with clamping at the ends.
fn solve_unit_decreasing<F: FnMut(f64) -> f64>(mut f: F, tol: f64) -> Result<f64> {
    let f0 = f(0.0);
    if !f0.is_finite() {
        return Err(CarpetError::InvalidInput(format!(
            "moran function is not finite at t=0 ({f0})"
        )));
    }
    if f0 <= tol {
        return Ok(0.0);
    }
    let f1 = f(1.0);
    if !f1.is_finite() {
        return Err(CarpetError::InvalidInput(format!(
            "moran function is not finite at t=1 ({f1})"
        )));
    }
    if f1 >= -tol {
        return Ok(1.0);
    }
    Ok(bisect(f, 0.0, 1.0, f0, f1, tol, roots::MAX_ITER).x)
}

pub(crate) fn solve_t_raw(system: &RandomCarpetSystem, w: &[Vec<f64>], tol: f64) -> Result<f64> {
    solve_unit_decreasing(|t| phi_raw(system, w, t), tol)
}

/// `t(P)`: the root of `phi` in `[0, 1]` with `|phi(t)| <= tol`.
///
/// Returns exactly 0 when `phi(0) <= tol` and exactly 1 when `phi(1) >= -tol`.
pub fn solve_t(system: &RandomCarpetSystem, p: &RowDistribution, tol: f64) -> Result<f64> {
    solve_t_raw(system, &p.weights, tol)
}

pub(crate) fn lambda_raw(system: &RandomCarpetSystem, w: &[Vec<f64>]) -> f64 {
    let mut entropy = 0.0;
    let mut lyapunov = 0.0;
    for (i, row) in w.iter().enumerate() {
        let pi: f64 = row.iter().sum();
        entropy -= xlnx(pi);
        for (j, &p) in row.iter().enumerate() {
            entropy += xlnx(p);
            if p > 0.0 {
                lyapunov += p * system.ln_height(i, j);
            }
        }
    }
    entropy / lyapunov
}

/// `lambda(P)` with `0 ln 0 = 0`. The map masses `p_i` are taken as
/// `sum_j p_ij`, which equals `env_probs[i]` for a valid distribution.
pub fn lambda_of(system: &RandomCarpetSystem, p: &RowDistribution) -> f64 {
    lambda_raw(system, &p.weights)
}

/// Upper bound `max_i ln m_i / (-max_ij ln b_ij)` on `lambda(P)`.
pub fn lambda_upper_bound(system: &RandomCarpetSystem) -> f64 {
    let max_rows = system.shape().into_iter().max().unwrap_or(1) as f64;
    max_rows.ln() / -system.max_height().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TBounds {
    pub t_under: f64,
    pub t_over: f64,
}

impl TBounds {
    pub fn is_degenerate(&self, tol: f64) -> bool {
        self.t_over - self.t_under <= tol
    }
}

fn extreme_row_sum(system: &RandomCarpetSystem, i: usize, t: f64, max: bool) -> f64 {
    let sums = (0..system.num_rows(i)).map(|j| system.row_sum_at(i, j, t));
    if max {
        sums.fold(f64::NEG_INFINITY, f64::max)
    } else {
        sums.fold(f64::INFINITY, f64::min)
    }
}

/// `t_under` and `t_over`, the smallest and largest values of `t(P)`.
///
/// They solve `sum_i p_i ln(min_j S_ij(t)) = 0` and the `max_j` analogue.
pub fn t_bounds(system: &RandomCarpetSystem, tol: f64) -> Result<TBounds> {
    let solve = |max: bool| {
        solve_unit_decreasing(
            |t| {
                system
                    .env_probs()
                    .iter()
                    .enumerate()
                    .map(|(i, &pi)| pi * extreme_row_sum(system, i, t, max).ln())
                    .sum()
            },
            tol,
        )
    };
    let t_under = solve(false)?;
    let t_over = solve(true)?;
    Ok(TBounds {
        t_under,
        t_over: t_over.max(t_under),
    })
}

// ---------------------------------------------------------------------------
// Parametric family

#[derive(Debug, Clone)]
struct SliceMap {
    p: f64,
    ln_b: Vec<f64>,
    ln_s: Vec<f64>,
}

/// Row data frozen at one `t`: `ln b_ij` and `ln S_ij(t)`.
#[derive(Debug, Clone)]
pub(crate) struct Slice {
    t: f64,
    maps: Vec<SliceMap>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Slice {
    pub(crate) fn new(system: &RandomCarpetSystem, t: f64) -> Self {
        let maps = (0..system.num_maps())
            .map(|i| SliceMap {
                p: system.env_probs()[i],
                ln_b: (0..system.num_rows(i))
                    .map(|j| system.ln_height(i, j))
                    .collect(),
                ln_s: (0..system.num_rows(i))
                    .map(|j| system.row_sum_at(i, j, t).ln())
                    .collect(),
            })
            .collect();
        Self { t, maps }
    }

    fn exponents<'a>(m: &'a SliceMap, alpha: f64, lambda: f64) -> impl Iterator<Item = f64> + Clone + 'a {
        m.ln_b
            .iter()
            .zip(&m.ln_s)
            .map(move |(lb, ls)| lambda * lb + alpha * ls)
    }

    fn log_gamma(&self, i: usize, alpha: f64, lambda: f64) -> f64 {
        log_sum_exp(Self::exponents(&self.maps[i], alpha, lambda))
    }

    /// Conditional probabilities `p_ij / p_i` of map `i`.
    fn conditional(&self, i: usize, alpha: f64, lambda: f64) -> Vec<f64> {
        let m = &self.maps[i];
        let lg = self.log_gamma(i, alpha, lambda);
        Self::exponents(m, alpha, lambda)
            .map(|e| (e - lg).exp())
            .collect()
    }

    /// `F(alpha, lambda, t) = sum_ij p_ij ln S_ij(t)`.
    pub(crate) fn f(&self, alpha: f64, lambda: f64) -> f64 {
        (0..self.maps.len())
            .map(|i| {
                let m = &self.maps[i];
                let c = self.conditional(i, alpha, lambda);
                m.p * c.iter().zip(&m.ln_s).map(|(q, ls)| q * ls).sum::<f64>()
            })
            .sum()
    }

    /// `G(alpha, lambda, t) = sum_i p_i ln gamma_i`.
    pub(crate) fn g(&self, alpha: f64, lambda: f64) -> f64 {
        (0..self.maps.len())
            .map(|i| self.maps[i].p * self.log_gamma(i, alpha, lambda))
            .sum()
    }

    pub(crate) fn solve_alpha(&self, lambda: f64, tol: f64) -> Result<f64> {
        let f = |a: f64| self.f(a, lambda);
        let (lo, hi, f_lo, f_hi) =
            expand_increasing(f, -1.0, 1.0, ALPHA_CAP).ok_or(CarpetError::AlphaBracket {
                lambda,
                t: self.t,
                cap: ALPHA_CAP,
            })?;
        Ok(bisect(f, lo, hi, f_lo, f_hi, tol, roots::MAX_ITER).x)
    }

    /// Bisection on a decreasing `lambda -> G` where `g_of` evaluates G.
    fn solve_decreasing_lambda<E>(
        &self,
        upper: f64,
        tol: f64,
        mut g_of: E,
    ) -> Result<f64>
    where
        E: FnMut(f64) -> Result<f64>,
    {
        let mut lo = 0.0;
        let mut g_lo = g_of(lo)?;
        while g_lo < 0.0 {
            if lo < -ALPHA_CAP {
                return Err(CarpetError::LambdaBracket { t: self.t, lo, hi: upper });
            }
            lo = 2.0 * lo - 1.0;
            g_lo = g_of(lo)?;
        }
        let mut hi = upper + 1.0;
        let mut g_hi = g_of(hi)?;
        while g_hi > 0.0 {
            if hi > ALPHA_CAP {
                return Err(CarpetError::LambdaBracket { t: self.t, lo, hi });
            }
            lo = hi;
            g_lo = g_hi;
            hi *= 2.0;
            g_hi = g_of(hi)?;
        }
        let mut failure = None;
        let root = bisect(
            |l| match g_of(l) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            lo,
            hi,
            g_lo,
            g_hi,
            tol,
            roots::MAX_ITER,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(root.x),
        }
    }

    pub(crate) fn point(&self, system: &RandomCarpetSystem, alpha: f64, lambda: f64) -> FamilyPoint {
        let mut weights = Vec::with_capacity(self.maps.len());
        let mut log_gamma = Vec::with_capacity(self.maps.len());
        for i in 0..self.maps.len() {
            let pi = system.env_probs()[i];
            let mut row: Vec<f64> = self
                .conditional(i, alpha, lambda)
                .into_iter()
                .map(|q| pi * q)
                .collect();
            // exact block mass: put the rounding residue on the largest entry
            let residue = pi - row.iter().sum::<f64>();
            if let Some(jmax) = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])) {
                row[jmax] += residue;
            }
            weights.push(row);
            log_gamma.push(self.log_gamma(i, alpha, lambda));
        }
        FamilyPoint {
            alpha,
            lambda,
            t: self.t,
            gamma: log_gamma.iter().map(|lg| lg.exp()).collect(),
            log_gamma,
            p: RowDistribution::from_raw(weights),
        }
    }
}

/// `gamma_i(alpha, lambda, t) = sum_j b_ij^lambda S_ij(t)^alpha`.
pub fn gamma(system: &RandomCarpetSystem, i: usize, alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    if i >= system.num_maps() {
        return Err(CarpetError::IndexOutOfRange(format!(
            "map {i} (system has {})",
            system.num_maps()
        )));
    }
    if alpha.abs() > LOG_SPACE_ALPHA {
        return Ok(log_gamma(system, i, alpha, lambda, t)?.exp());
    }
    Ok((0..system.num_rows(i))
        .map(|j| system.row(i, j).height.powf(lambda) * system.row_sum_at(i, j, t).powf(alpha))
        .sum())
}

/// `ln gamma_i`, always evaluated with a max-shifted log-sum-exp.
pub fn log_gamma(system: &RandomCarpetSystem, i: usize, alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    if i >= system.num_maps() {
        return Err(CarpetError::IndexOutOfRange(format!(
            "map {i} (system has {})",
            system.num_maps()
        )));
    }
    Ok(log_sum_exp((0..system.num_rows(i)).map(|j| {
        lambda * system.ln_height(i, j) + alpha * system.row_sum_at(i, j, t).ln()
    })))
}

/// A member of the parametric family together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub t: f64,
    /// `gamma_i`; may be `inf` for extreme parameters, see `log_gamma`.
    pub gamma: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub p: RowDistribution,
}

/// `p_ij = p_i b_ij^lambda S_ij(t)^alpha / gamma_i`, normalized per map in
/// log space so the block masses are `p_i` for any `alpha`.
pub fn family_p(system: &RandomCarpetSystem, alpha: f64, lambda: f64, t: f64) -> FamilyPoint {
    Slice::new(system, t).point(system, alpha, lambda)
}

/// `F(alpha, lambda, t)`; increasing in `alpha` when some map has rows with
/// different `S_ij(t)`.
pub fn family_f(system: &RandomCarpetSystem, alpha: f64, lambda: f64, t: f64) -> f64 {
    Slice::new(system, t).f(alpha, lambda)
}

/// `G(alpha, lambda, t) = sum_i p_i ln gamma_i`.
pub fn family_g(system: &RandomCarpetSystem, alpha: f64, lambda: f64, t: f64) -> f64 {
    Slice::new(system, t).g(alpha, lambda)
}

/// The `alpha` with `|F(alpha, lambda, t)| <= tol`.
///
/// The bracket starts at `[-1, 1]` and doubles up to `|alpha| = 1e6`; a
/// missing sign change means `t` is not inside `(t_under, t_over)` or the
/// rows are indistinguishable at `t`.
pub fn solve_alpha(system: &RandomCarpetSystem, lambda: f64, t: f64, tol: f64) -> Result<f64> {
    Slice::new(system, t).solve_alpha(lambda, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSolve {
    pub lambda: f64,
    pub alpha: f64,
    pub point: FamilyPoint,
}

/// Solves `G(alpha(lambda, t), lambda, t) = 0` for `lambda`, where
/// `alpha(lambda, t)` solves `F = 0`.
///
/// The resulting family point has `t(P) = t` and `lambda(P) = lambda`, and
/// `lambda` is the largest value of `lambda(P)` over `{P : t(P) = t}`.
pub fn solve_lambda(system: &RandomCarpetSystem, t: f64, tol: f64) -> Result<LambdaSolve> {
    let slice = Slice::new(system, t);
    let upper = lambda_upper_bound(system);
    let lambda = slice.solve_decreasing_lambda(upper, tol, |l| {
        let a = slice.solve_alpha(l, tol)?;
        Ok(slice.g(a, l))
    })?;
    let alpha = slice.solve_alpha(lambda, tol)?;
    Ok(LambdaSolve {
        lambda,
        alpha,
        point: slice.point(system, alpha, lambda),
    })
}

/// Maximizes `lambda(P)` over all row distributions, ignoring `t`.
///
/// The maximizer is `p_ij = p_i b_ij^lambda / sum_j b_ij^lambda` with
/// `sum_i p_i ln(sum_j b_ij^lambda) = 0`.
pub fn max_lambda(system: &RandomCarpetSystem, tol: f64) -> Result<LambdaSolve> {
    let slice = Slice::new(system, 0.0);
    let upper = lambda_upper_bound(system);
    let lambda = slice.solve_decreasing_lambda(upper, tol, |l| Ok(slice.g(0.0, l)))?;
    Ok(LambdaSolve {
        lambda,
        alpha: 0.0,
        point: slice.point(system, 0.0, lambda),
    })
}
