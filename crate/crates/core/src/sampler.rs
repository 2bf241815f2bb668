//! Monte Carlo tools: environments, symbol paths under the Bernoulli measure
//! of a row distribution, cylinder rectangles, approximate squares,
//! pointwise-dimension estimates and box counting of `n`-approximations.
//!
//! Indices are zero-based throughout. Products of scales are carried as
//! running log-sums so deep cylinders do not underflow.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};
use crate::model::RandomCarpetSystem;
use crate::moran::{solve_t, RowDistribution};
use crate::rng::{split_seed, stream_rng, Stream};

/// Relative slack when comparing log-products for the approximate square.
pub const LOG_SLACK: f64 = 1e-12;
/// Slack used when locating rectangle edges on a box grid.
pub const BOX_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub indices: Vec<usize>,
}

impl Environment {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Row and cell choice `(j_l, k_l)` at every level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolPath {
    pub entries: Vec<(usize, usize)>,
}

impl SymbolPath {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub log_w: f64,
    pub log_h: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x: 0.0, y: 0.0, w: 1.0, h: 1.0, log_w: 0.0, log_h: 0.0 };

    /// Image of this rectangle's unit square under cell `k` of row `j` of map `i`.
    fn child(&self, system: &RandomCarpetSystem, i: usize, j: usize, k: usize) -> Rect {
        let row = system.row(i, j);
        let cell = &row.cells[k];
        Rect {
            x: self.x + self.w * cell.x_offset,
            y: self.y + self.h * row.y_offset,
            w: self.w * cell.width,
            h: self.h * row.height,
            log_w: self.log_w + system.ln_widths(i, j)[k],
            log_h: self.log_h + system.ln_height(i, j),
        }
    }

    pub fn contains(&self, other: &Rect, slack: f64) -> bool {
        other.x >= self.x - slack
            && other.y >= self.y - slack
            && other.x + other.w <= self.x + self.w + slack
            && other.y + other.h <= self.y + self.h + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectSet {
    pub depth: usize,
    pub rects: Vec<Rect>,
    pub truncated: bool,
}

fn draw_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return idx;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `n` i.i.d. map indices drawn by inverse CDF from `env_probs`.
pub fn sample_environment(system: &RandomCarpetSystem, n: usize, seed: u64) -> Result<Environment> {
    if n == 0 {
        return Err(CarpetError::InvalidInput("environment length must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::Environment);
    let probs = system.env_probs();
    let indices = (0..n).map(|_| draw_index(&mut rng, probs)).collect();
    Ok(Environment { seed, indices })
}

/// Tabulated conditional probabilities of the measure attached to `P`:
/// row `j` given map `i` with probability `p_ij / p_i`, then cell `k` with
/// probability `a_ijk^t / sum_k a_ijk^t` where `t = t(P)`.
#[derive(Debug, Clone)]
pub struct BernoulliMeasure {
    pub p: RowDistribution,
    pub t: f64,
    row_probs: Vec<Vec<f64>>,
    ln_row: Vec<Vec<f64>>,
    cell_probs: Vec<Vec<Vec<f64>>>,
    ln_cell: Vec<Vec<Vec<f64>>>,
}

impl BernoulliMeasure {
    pub fn new(system: &RandomCarpetSystem, p: RowDistribution, tol: f64) -> Result<Self> {
        let t = solve_t(system, &p, tol)?;
        Ok(Self::with_t(system, p, t))
    }

    pub fn with_t(system: &RandomCarpetSystem, p: RowDistribution, t: f64) -> Self {
        let mut row_probs = Vec::new();
        let mut ln_row = Vec::new();
        let mut cell_probs = Vec::new();
        let mut ln_cell = Vec::new();
        for (i, w) in p.weights().iter().enumerate() {
            let pi: f64 = w.iter().sum();
            let rp: Vec<f64> = w.iter().map(|&x| x / pi).collect();
            ln_row.push(rp.iter().map(|x| x.ln()).collect());
            row_probs.push(rp);
            let mut cp_i = Vec::new();
            let mut lc_i = Vec::new();
            for j in 0..system.num_rows(i) {
                let lw = system.ln_widths(i, j);
                let mx = lw.iter().map(|l| t * l).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + lw.iter().map(|l| (t * l - mx).exp()).sum::<f64>().ln();
                let lc: Vec<f64> = lw.iter().map(|l| t * l - lse).collect();
                cp_i.push(lc.iter().map(|x| x.exp()).collect());
                lc_i.push(lc);
            }
            cell_probs.push(cp_i);
            ln_cell.push(lc_i);
        }
        Self { p, t, row_probs, ln_row, cell_probs, ln_cell }
    }

    pub fn row_probability(&self, i: usize, j: usize) -> f64 {
        self.row_probs[i][j]
    }

    pub fn cell_probability(&self, i: usize, j: usize, k: usize) -> f64 {
        self.cell_probs[i][j][k]
    }

    fn ln_row_checked(&self, step: usize, i: usize, j: usize) -> Result<f64> {
        let l = self.ln_row[i][j];
        if l == f64::NEG_INFINITY {
            return Err(CarpetError::ZeroProbabilityRow { step, i, j });
        }
        Ok(l)
    }
}

/// One `(j, k)` per environment entry, drawn independently per level.
pub fn sample_path(
    system: &RandomCarpetSystem,
    measure: &BernoulliMeasure,
    env: &Environment,
    seed: u64,
) -> Result<SymbolPath> {
    check_env(system, env)?;
    let mut rng = stream_rng(seed, Stream::Path);
    let entries = env
        .indices
        .iter()
        .map(|&i| {
            let j = draw_index(&mut rng, &measure.row_probs[i]);
            let k = draw_index(&mut rng, &measure.cell_probs[i][j]);
            (j, k)
        })
        .collect();
    Ok(SymbolPath { entries })
}

fn check_env(system: &RandomCarpetSystem, env: &Environment) -> Result<()> {
    if let Some((l, &i)) = env.indices.iter().enumerate().find(|(_, &i)| i >= system.num_maps()) {
        return Err(CarpetError::IndexOutOfRange(format!(
            "environment entry {l} is map {i}, system has {} maps",
            system.num_maps()
        )));
    }
    Ok(())
}

fn check_path(system: &RandomCarpetSystem, env: &Environment, path: &SymbolPath, n: usize) -> Result<()> {
    if n > path.len() || n > env.len() {
        return Err(CarpetError::InvalidInput(format!(
            "depth {n} exceeds path length {} or environment length {}",
            path.len(),
            env.len()
        )));
    }
    for (l, (&i, &(j, k))) in env.indices.iter().zip(&path.entries).take(n).enumerate() {
        if i >= system.num_maps() || j >= system.num_rows(i) || k >= system.row(i, j).cells.len() {
            return Err(CarpetError::IndexOutOfRange(format!(
                "step {l}: (map {i}, row {j}, cell {k}) is not part of the system"
            )));
        }
    }
    Ok(())
}

/// Basic rectangle of order `n`: `A_{i_1 w_1} o ... o A_{i_n w_n}([0,1]^2)`.
pub fn cylinder_rectangle(
    system: &RandomCarpetSystem,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<Rect> {
    check_path(system, env, path, n)?;
    Ok(env
        .indices
        .iter()
        .zip(&path.entries)
        .take(n)
        .fold(Rect::UNIT, |r, (&i, &(j, k))| r.child(system, i, j, k)))
}

/// `ln(min a) / ln(max b)`: the smallest `n` for which `L_n >= 1` is guaranteed.
pub fn approximate_square_threshold(system: &RandomCarpetSystem) -> f64 {
    system.min_width().ln() / system.max_height().ln()
}

/// Largest `k` with `prod_{l<=k} a >= prod_{l<=n} b`, compared as log-sums.
pub fn approximate_square_depth(
    system: &RandomCarpetSystem,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<usize> {
    check_path(system, env, path, n)?;
    let required = approximate_square_threshold(system);
    if n == 0 || (n as f64) < required * (1.0 - LOG_SLACK) {
        return Err(CarpetError::BelowThreshold { n, required });
    }
    let target = log_height(system, env, path, n);
    let floor = target - LOG_SLACK * target.abs();
    let mut acc = 0.0;
    let mut depth = 0;
    for (&i, &(j, k)) in env.indices.iter().zip(&path.entries).take(n) {
        acc += system.ln_widths(i, j)[k];
        if acc < floor {
            break;
        }
        depth += 1;
    }
    if depth == 0 {
        return Err(CarpetError::BelowThreshold { n, required });
    }
    Ok(depth)
}

fn log_height(system: &RandomCarpetSystem, env: &Environment, path: &SymbolPath, n: usize) -> f64 {
    env.indices
        .iter()
        .zip(&path.entries)
        .take(n)
        .map(|(&i, &(j, _))| system.ln_height(i, j))
        .sum()
}

fn log_width(system: &RandomCarpetSystem, env: &Environment, path: &SymbolPath, n: usize) -> f64 {
    env.indices
        .iter()
        .zip(&path.entries)
        .take(n)
        .map(|(&i, &(j, k))| system.ln_widths(i, j)[k])
        .sum()
}

/// The set of paths sharing rows `j_1..j_n` and cells `k_1..k_{L_n}` with a
/// given path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApproximateSquare {
    pub n: usize,
    pub depth: usize,
    pub rows: Vec<usize>,
    pub cells: Vec<usize>,
}

impl ApproximateSquare {
    /// `self ⊂ other` as sets of paths.
    pub fn is_subset_of(&self, other: &ApproximateSquare) -> bool {
        self.rows.len() >= other.rows.len()
            && self.cells.len() >= other.cells.len()
            && self.rows.starts_with(&other.rows)
            && self.cells.starts_with(&other.cells)
    }
}

pub fn approximate_square(
    system: &RandomCarpetSystem,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<ApproximateSquare> {
    let depth = approximate_square_depth(system, env, path, n)?;
    Ok(ApproximateSquare {
        n,
        depth,
        rows: path.entries[..n].iter().map(|e| e.0).collect(),
        cells: path.entries[..depth].iter().map(|e| e.1).collect(),
    })
}

/// `sum_{l<=L_n} ln a - sum_{l<=n} ln b`, which lies in `[0, -ln min a]`.
pub fn log_square_ratio(
    system: &RandomCarpetSystem,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<f64> {
    let depth = approximate_square_depth(system, env, path, n)?;
    Ok(log_width(system, env, path, depth) - log_height(system, env, path, n))
}

/// Log-mass of the approximate square `B_n` of `path`.
pub fn path_measure(
    system: &RandomCarpetSystem,
    measure: &BernoulliMeasure,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<f64> {
    let depth = approximate_square_depth(system, env, path, n)?;
    let mut total = 0.0;
    for (l, (&i, &(j, k))) in env.indices.iter().zip(&path.entries).take(n).enumerate() {
        total += measure.ln_row_checked(l, i, j)?;
        if l < depth {
            total += measure.ln_cell[i][j][k];
        }
    }
    Ok(total)
}

/// Log-mass of the full cylinder of order `n`.
pub fn cylinder_log_mass(
    system: &RandomCarpetSystem,
    measure: &BernoulliMeasure,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<f64> {
    check_path(system, env, path, n)?;
    let mut total = 0.0;
    for (l, (&i, &(j, k))) in env.indices.iter().zip(&path.entries).take(n).enumerate() {
        total += measure.ln_row_checked(l, i, j)? + measure.ln_cell[i][j][k];
    }
    Ok(total)
}

/// `ln mu(B_n) / sum_{l<=n} ln b`.
pub fn empirical_pointwise_dim(
    system: &RandomCarpetSystem,
    measure: &BernoulliMeasure,
    env: &Environment,
    path: &SymbolPath,
    n: usize,
) -> Result<f64> {
    let lm = path_measure(system, measure, env, path, n)?;
    Ok(lm / log_height(system, env, path, n))
}

/// Pointwise-dimension estimates at depth `n` for `replicas` independent
/// (environment, path) pairs. Replica `r` uses seed `split_seed(seed, r)`.
pub fn sample_pointwise_dims(
    system: &RandomCarpetSystem,
    measure: &BernoulliMeasure,
    n: usize,
    seed: u64,
    replicas: usize,
) -> Result<Vec<f64>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let s = split_seed(seed, r);
            let env = sample_environment(system, n, s)?;
            let path = sample_path(system, measure, &env, s)?;
            empirical_pointwise_dim(system, measure, &env, &path, n)
        })
        .collect()
}

/// Breadth-first `depth`-approximation. When a level exceeds `cap`
/// rectangles each one is kept with probability `cap / count`.
pub fn generate_approximation(
    system: &RandomCarpetSystem,
    env: &Environment,
    depth: usize,
    cap: usize,
) -> Result<RectSet> {
    if depth == 0 || depth > env.len() {
        return Err(CarpetError::InvalidInput(format!(
            "depth must lie in 1..={}, got {depth}",
            env.len()
        )));
    }
    if cap == 0 {
        return Err(CarpetError::InvalidInput("cap must be >= 1".into()));
    }
    check_env(system, env)?;
    let mut rng = stream_rng(env.seed, Stream::Subsample);
    let mut level = vec![Rect::UNIT];
    let mut truncated = false;
    for &i in &env.indices[..depth] {
        let mut next = Vec::new();
        for r in &level {
            for (j, row) in system.maps()[i].rows.iter().enumerate() {
                for k in 0..row.cells.len() {
                    next.push(r.child(system, i, j, k));
                }
            }
        }
        if next.len() > cap {
            truncated = true;
            let keep = cap as f64 / next.len() as f64;
            let kept: Vec<Rect> = next.iter().copied().filter(|_| rng.random::<f64>() < keep).collect();
            level = if kept.is_empty() {
                vec![next[rng.random_range(0..next.len())]]
            } else {
                kept
            };
        } else {
            level = next;
        }
    }
    Ok(RectSet { depth, rects: level, truncated })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCount {
    pub slope: f64,
    pub r2: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
}

fn box_range(lo: f64, len: f64, delta: f64) -> (i64, i64) {
    let a = (lo / delta + BOX_EPS).floor() as i64;
    let b = ((lo + len) / delta - BOX_EPS).ceil() as i64 - 1;
    (a, b.max(a))
}

/// Number of half-open `delta`-grid boxes meeting some rectangle.
pub fn count_boxes(rects: &[Rect], delta: f64) -> usize {
    let mut seen = HashSet::new();
    for r in rects {
        let (x0, x1) = box_range(r.x, r.w, delta);
        let (y0, y1) = box_range(r.y, r.h, delta);
        for bx in x0..=x1 {
            for by in y0..=y1 {
                seen.insert((bx, by));
            }
        }
    }
    seen.len()
}

/// Least-squares slope and `r^2` of `ln N(delta)` against `ln(1/delta)`.
pub fn box_count_estimate(rects: &RectSet, scales: &[f64]) -> Result<BoxCount> {
    if scales.len() < 3 {
        return Err(CarpetError::Scales(format!("need at least 3 scales, got {}", scales.len())));
    }
    if rects.rects.is_empty() {
        return Err(CarpetError::Scales("rectangle set is empty".into()));
    }
    if scales.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CarpetError::Scales("scales must be strictly decreasing".into()));
    }
    let finest = rects.rects.iter().map(|r| r.h.max(r.w)).fold(0.0, f64::max);
    if let Some(&bad) = scales.iter().find(|&&d| !(d >= finest * (1.0 - 1e-12) && d <= 1.0)) {
        return Err(CarpetError::Scales(format!(
            "scale {bad} outside the resolvable range [{finest}, 1]"
        )));
    }
    let counts: Vec<usize> = scales.par_iter().map(|&d| count_boxes(&rects.rects, d)).collect();
    let xs: Vec<f64> = scales.iter().map(|d| -d.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, r2) = least_squares(&xs, &ys);
    Ok(BoxCount { slope, r2, scales: scales.to_vec(), counts })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CarpetMap, Row};

    fn mcmullen() -> RandomCarpetSystem {
        RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![
                Row::packed(0.5, 0.0, &[1.0 / 3.0, 1.0 / 3.0]),
                Row::packed(0.5, 0.5, &[1.0 / 3.0]),
            ])],
            vec![1.0],
        )
        .unwrap()
    }

    fn two_quarters() -> RandomCarpetSystem {
        RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![Row::packed(0.5, 0.0, &[0.25, 0.25])])],
            vec![1.0],
        )
        .unwrap()
    }

    fn constant(n: usize, e: (usize, usize)) -> (Environment, SymbolPath) {
        (
            Environment { seed: 0, indices: vec![0; n] },
            SymbolPath { entries: vec![e; n] },
        )
    }

    #[test]
    fn single_map_environment() {
        let s = mcmullen();
        let env = sample_environment(&s, 50, 99).unwrap();
        assert!(env.indices.iter().all(|&i| i == 0));
        assert!(sample_environment(&s, 0, 1).is_err());
    }

    #[test]
    fn environment_frequencies_and_determinism() {
        let row = || CarpetMap::new(vec![Row::packed(0.5, 0.0, &[0.5])]);
        let s = RandomCarpetSystem::new(vec![row(), row()], vec![0.5, 0.5]).unwrap();
        let n = 100_000;
        let env = sample_environment(&s, n, 7).unwrap();
        let freq = env.indices.iter().filter(|&&i| i == 0).count() as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.0047, "freq {freq}");
        assert_eq!(env, sample_environment(&s, n, 7).unwrap());
        assert_ne!(env, sample_environment(&s, n, 8).unwrap());
    }

    #[test]
    fn deterministic_path_for_single_choices() {
        let s = RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![Row::packed(0.5, 0.0, &[0.3])])],
            vec![1.0],
        )
        .unwrap();
        let m = BernoulliMeasure::new(&s, RowDistribution::uniform(&s), 1e-12).unwrap();
        let env = sample_environment(&s, 20, 3).unwrap();
        let path = sample_path(&s, &m, &env, 11).unwrap();
        assert!(path.entries.iter().all(|&e| e == (0, 0)));
    }

    #[test]
    fn equal_widths_give_equal_cell_probabilities() {
        let s = two_quarters();
        let m = BernoulliMeasure::new(&s, RowDistribution::uniform(&s), 1e-14).unwrap();
        assert!((m.t - 0.5).abs() < 1e-12);
        assert!((m.cell_probability(0, 0, 0) - 0.5).abs() < 1e-15);
        assert!((m.cell_probability(0, 0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mcmullen_row_frequency() {
        let s = mcmullen();
        let p = RowDistribution::new(&s, vec![vec![2.0 / 3.0, 1.0 / 3.0]]).unwrap();
        let m = BernoulliMeasure::new(&s, p, 1e-14).unwrap();
        let n = 100_000;
        let env = sample_environment(&s, n, 5).unwrap();
        let path = sample_path(&s, &m, &env, 5).unwrap();
        let freq = path.entries.iter().filter(|e| e.0 == 0).count() as f64 / n as f64;
        let sigma = (2.0 / 9.0 / n as f64).sqrt();
        assert!((freq - 2.0 / 3.0).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn zero_probability_row_never_drawn() {
        let s = mcmullen();
        let p = RowDistribution::new(&s, vec![vec![1.0, 0.0]]).unwrap();
        let m = BernoulliMeasure::with_t(&s, p, 0.5);
        let env = sample_environment(&s, 10_000, 1).unwrap();
        let path = sample_path(&s, &m, &env, 2).unwrap();
        assert!(path.entries.iter().all(|e| e.0 == 0));
        let bad = SymbolPath { entries: vec![(1, 0); 10] };
        let err = path_measure(&s, &m, &env, &bad, 10).unwrap_err();
        assert!(matches!(err, CarpetError::ZeroProbabilityRow { step: 0, i: 0, j: 1 }));
    }

    #[test]
    fn first_cylinder() {
        let s = RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![Row::new(0.5, 0.0, vec![crate::model::Cell::new(0.25, 0.5)])])],
            vec![1.0],
        )
        .unwrap();
        let (env, path) = constant(1, (0, 0));
        let r = cylinder_rectangle(&s, &env, &path, 1).unwrap();
        assert_eq!((r.x, r.y, r.w, r.h), (0.5, 0.0, 0.25, 0.5));
    }

    #[test]
    fn constant_mcmullen_cylinder() {
        let s = mcmullen();
        let (env, path) = constant(10, (0, 0));
        let r = cylinder_rectangle(&s, &env, &path, 10).unwrap();
        assert!((r.w / 3f64.powi(-10) - 1.0).abs() < 1e-12);
        assert!((r.h - 2f64.powi(-10)).abs() < 1e-18);
        assert_eq!((r.x, r.y), (0.0, 0.0));
        assert!((r.log_w + 10.0 * 3f64.ln()).abs() < 1e-12);
        assert!(cylinder_rectangle(&s, &env, &path, 11).is_err());
    }

    #[test]
    fn cylinders_nest() {
        let s = mcmullen();
        let m = BernoulliMeasure::new(&s, RowDistribution::uniform(&s), 1e-12).unwrap();
        let env = sample_environment(&s, 30, 4).unwrap();
        let path = sample_path(&s, &m, &env, 4).unwrap();
        let mut prev = Rect::UNIT;
        for n in 1..=30 {
            let r = cylinder_rectangle(&s, &env, &path, n).unwrap();
            assert!(prev.contains(&r, 1e-15));
            prev = r;
        }
    }

    #[test]
    fn deep_cylinder_keeps_logs() {
        let s = mcmullen();
        let (env, path) = constant(2000, (1, 0));
        let r = cylinder_rectangle(&s, &env, &path, 2000).unwrap();
        assert_eq!(r.w, 0.0);
        assert!((r.log_w + 2000.0 * 3f64.ln()).abs() < 1e-9);
        assert!((r.log_h + 2000.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn square_depth_closed_forms() {
        let s = two_quarters();
        let (env, path) = constant(40, (0, 0));
        for n in 2..=40 {
            assert_eq!(approximate_square_depth(&s, &env, &path, n).unwrap(), n / 2);
        }
        assert!(matches!(
            approximate_square_depth(&s, &env, &path, 1),
            Err(CarpetError::BelowThreshold { n: 1, .. })
        ));

        let eq = RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![Row::packed(0.3, 0.0, &[0.3, 0.3])])],
            vec![1.0],
        )
        .unwrap();
        for n in 1..=40 {
            assert_eq!(approximate_square_depth(&eq, &env, &path, n).unwrap(), n);
        }

        let mc = mcmullen();
        let ratio = 2f64.ln() / 3f64.ln();
        for n in 2..=40 {
            let expected = (n as f64 * ratio).floor() as usize;
            assert_eq!(approximate_square_depth(&mc, &env, &path, n).unwrap(), expected);
        }
    }

    #[test]
    fn constant_path_measure_closed_form() {
        let s = two_quarters();
        let m = BernoulliMeasure::new(&s, RowDistribution::uniform(&s), 1e-14).unwrap();
        let (env, path) = constant(100, (0, 1));
        for n in 2..=100 {
            let lm = path_measure(&s, &m, &env, &path, n).unwrap();
            assert!((lm - (n / 2) as f64 * 0.5f64.ln()).abs() < 1e-12);
            let d = empirical_pointwise_dim(&s, &m, &env, &path, n).unwrap();
            let expected = (n / 2) as f64 / n as f64;
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mcmullen_measure_by_hand() {
        let s = mcmullen();
        let p = RowDistribution::new(&s, vec![vec![2.0 / 3.0, 1.0 / 3.0]]).unwrap();
        let m = BernoulliMeasure::new(&s, p, 1e-14).unwrap();
        let t = 2.0 / 3.0 * 2f64.ln() / 3f64.ln();
        assert!((m.t - t).abs() < 1e-12);
        let env = Environment { seed: 0, indices: vec![0; 5] };
        let path = SymbolPath { entries: vec![(0, 1), (1, 0), (0, 0), (0, 1), (1, 0)] };
        // L_5 = 3, rows 0,1,0,0,1 and cells from rows 0,1,0
        let expected = (2.0 / 3.0) * (1.0 / 3.0) * (2.0 / 3.0) * (2.0 / 3.0) * (1.0 / 3.0) * 0.5 * 1.0 * 0.5;
        assert_eq!(approximate_square_depth(&s, &env, &path, 5).unwrap(), 3);
        let lm = path_measure(&s, &m, &env, &path, 5).unwrap();
        assert!((lm - f64::ln(expected)).abs() < 1e-12);
    }

    #[test]
    fn order_one_cylinders_normalize() {
        let s = mcmullen();
        let p = RowDistribution::new(&s, vec![vec![0.6, 0.4]]).unwrap();
        let m = BernoulliMeasure::new(&s, p, 1e-14).unwrap();
        let env = Environment { seed: 0, indices: vec![0] };
        let total: f64 = [(0, 0), (0, 1), (1, 0)]
            .iter()
            .map(|&e| cylinder_log_mass(&s, &m, &env, &SymbolPath { entries: vec![e] }, 1).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn self_similar_pointwise_dim() {
        let s = two_quarters();
        let m = BernoulliMeasure::new(&s, RowDistribution::uniform(&s), 1e-14).unwrap();
        let dims = sample_pointwise_dims(&s, &m, 10_000, 21, 4).unwrap();
        for d in dims {
            assert!((d - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn depth_one_approximation() {
        let s = mcmullen();
        let env = sample_environment(&s, 1, 0).unwrap();
        let set = generate_approximation(&s, &env, 1, 100).unwrap();
        assert!(!set.truncated);
        let got: Vec<(f64, f64, f64, f64)> = set.rects.iter().map(|r| (r.x, r.y, r.w, r.h)).collect();
        let third = 1.0 / 3.0;
        assert_eq!(got, vec![(0.0, 0.0, third, 0.5), (third, 0.0, third, 0.5), (0.0, 0.5, third, 0.5)]);
    }

    #[test]
    fn approximation_counts_and_cap() {
        let s = mcmullen();
        let env = sample_environment(&s, 8, 0).unwrap();
        let set = generate_approximation(&s, &env, 8, 10_000).unwrap();
        assert_eq!(set.rects.len(), 3usize.pow(8));
        let capped = generate_approximation(&s, &env, 8, 500).unwrap();
        assert!(capped.truncated);
        assert!(capped.rects.len() < 3 * 700);
        assert_eq!(capped, generate_approximation(&s, &env, 8, 500).unwrap());
        assert!(generate_approximation(&s, &env, 9, 10).is_err());
        assert!(generate_approximation(&s, &env, 0, 10).is_err());
    }

    #[test]
    fn box_count_of_full_square() {
        let s = crate::percolation::build_percolation_system(2, 0.5).unwrap();
        let full = s.num_maps() - 1;
        let env = Environment { seed: 0, indices: vec![full; 7] };
        let set = generate_approximation(&s, &env, 7, 1 << 20).unwrap();
        assert_eq!(set.rects.len(), 4usize.pow(7));
        let scales: Vec<f64> = (1..=7).map(|e| 2f64.powi(-e)).collect();
        let bc = box_count_estimate(&set, &scales).unwrap();
        assert_eq!(bc.counts, (1..=7).map(|e| 4usize.pow(e)).collect::<Vec<_>>());
        assert!((bc.slope - 2.0).abs() < 1e-12);
        assert!((bc.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_count_of_segment() {
        let s = RandomCarpetSystem::new(
            vec![CarpetMap::new(vec![Row::packed(0.25, 0.0, &[0.25; 4])])],
            vec![1.0],
        )
        .unwrap();
        let env = Environment { seed: 0, indices: vec![0; 6] };
        let set = generate_approximation(&s, &env, 6, 1 << 20).unwrap();
        let scales: Vec<f64> = (1..=12).map(|e| 2f64.powi(-e)).collect();
        let bc = box_count_estimate(&set, &scales).unwrap();
        assert!((bc.slope - 1.0).abs() < 0.05);
    }

    #[test]
    fn box_count_errors() {
        let set = RectSet { depth: 1, rects: vec![Rect { w: 0.1, h: 0.1, ..Rect::UNIT }], truncated: false };
        assert!(box_count_estimate(&set, &[0.5, 0.25]).is_err());
        assert!(box_count_estimate(&set, &[0.5, 0.25, 0.25]).is_err());
        assert!(box_count_estimate(&set, &[0.5, 0.25, 0.05]).is_err());
        assert!(box_count_estimate(&set, &[0.5, 0.25, 0.125]).is_ok());
    }
}
