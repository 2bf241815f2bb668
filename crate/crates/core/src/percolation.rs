//! Grid percolation: at every level an entire `k x k` selection pattern is
//! drawn, each nonempty pattern with `l` selected squares having probability
//! `q^l (1-q)^(k^2-l) / (1 - (1-q)^(k^2))`.
//!
//! All scales equal `1/k`, so the dimension has the closed form
//! `E[ln l] / ln k` and the maximizing row distribution is
//! `p_ij = p_i m_ij / sum_j m_ij`.

use crate::error::{CarpetError, Result};
use crate::model::{CarpetMap, Cell, RandomCarpetSystem, Row};
use crate::moran::RowDistribution;

/// Largest number of patterns `2^(k^2) - 1` that will be enumerated.
pub const MAX_PATTERNS: u64 = 1_000_000;
/// Binomial coefficients are exact integers up to this many squares.
const EXACT_BINOMIAL_MAX: usize = 30;

/// A nonempty subset of the `k x k` grid, stored as a bitmask with bit
/// `row * k + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPattern {
    k: usize,
    mask: u64,
}

impl GridPattern {
    pub fn new(k: usize, mask: u64) -> Result<Self> {
        if k < 2 || k * k > 63 {
            return Err(CarpetError::Percolation(format!("grid size k={k} unsupported")));
        }
        if mask == 0 || mask >> (k * k) != 0 {
            return Err(CarpetError::Percolation(format!(
                "mask {mask:#x} is not a nonempty subset of a {k}x{k} grid"
            )));
        }
        Ok(Self { k, mask })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.mask >> (row * self.k + col) & 1 == 1
    }

    /// Selected `(row, col)` pairs in row-major order.
    pub fn selected(&self) -> Vec<(usize, usize)> {
        (0..self.k)
            .flat_map(|r| (0..self.k).map(move |c| (r, c)))
            .filter(|&(r, c)| self.contains(r, c))
            .collect()
    }

    /// The affine family of this pattern; empty grid rows are omitted.
    pub fn to_map(&self) -> CarpetMap {
        let side = 1.0 / self.k as f64;
        let rows = (0..self.k)
            .filter_map(|r| {
                let cells: Vec<Cell> = (0..self.k)
                    .filter(|&c| self.contains(r, c))
                    .map(|c| Cell::new(side, c as f64 / self.k as f64))
                    .collect();
                (!cells.is_empty()).then(|| Row::new(side, r as f64 / self.k as f64, cells))
            })
            .collect();
        CarpetMap::new(rows)
    }
}

fn check_params(k: usize, q: f64) -> Result<()> {
    if k < 2 {
        return Err(CarpetError::Percolation(format!("k must be >= 2, got {k}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(CarpetError::Percolation(format!("q must lie in (0,1), got {q}")));
    }
    Ok(())
}

/// All nonempty patterns in increasing bitmask order.
pub fn patterns(k: usize) -> Result<Vec<GridPattern>> {
    if k < 2 {
        return Err(CarpetError::Percolation(format!("k must be >= 2, got {k}")));
    }
    let cells = k * k;
    if cells >= 63 || (1u64 << cells) - 1 > MAX_PATTERNS {
        return Err(CarpetError::Percolation(format!(
            "k={k} gives 2^{cells} - 1 patterns, above the cap of {MAX_PATTERNS}"
        )));
    }
    (1..1u64 << cells).map(|m| GridPattern::new(k, m)).collect()
}

/// `a q^l (1-q)^(n-l)` with `a = 1 / (1 - (1-q)^n)` and `n = k^2`.
pub fn pattern_probability(k: usize, q: f64, l: usize) -> f64 {
    let n = (k * k) as f64;
    let ln_1mq = (-q).ln_1p();
    let norm = -(n * ln_1mq).exp_m1();
    (l as f64 * q.ln() + (n - l as f64) * ln_1mq).exp() / norm
}

/// One map per nonempty pattern, ordered by bitmask.
pub fn build_percolation_system(k: usize, q: f64) -> Result<RandomCarpetSystem> {
    check_params(k, q)?;
    let pats = patterns(k)?;
    let maps = pats.iter().map(GridPattern::to_map).collect();
    let probs = pats
        .iter()
        .map(|p| pattern_probability(k, q, p.count()))
        .collect();
    RandomCarpetSystem::new(maps, probs)
}

/// `ln C(n, l)` for `l = 0..=n`.
fn ln_binomials(n: usize) -> Vec<f64> {
    if n <= EXACT_BINOMIAL_MAX {
        let mut c = 1u64;
        let mut out = vec![0.0];
        for l in 1..=n as u64 {
            c = c * (n as u64 - l + 1) / l;
            out.push((c as f64).ln());
        }
        out
    } else {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for l in 1..=n {
            acc += ((n - l + 1) as f64).ln() - (l as f64).ln();
            out.push(acc);
        }
        out
    }
}

/// `a sum_{l=1}^{k^2} C(k^2, l) q^l (1-q)^(k^2-l) ln l / ln k`.
pub fn closed_form_dim(k: usize, q: f64) -> Result<f64> {
    check_params(k, q)?;
    let n = k * k;
    let lnc = ln_binomials(n);
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let norm = -((n as f64) * ln_1mq).exp_m1();
    let sum: f64 = (2..=n)
        .map(|l| {
            let lf = l as f64;
            (lnc[l] + lf * ln_q + (n as f64 - lf) * ln_1mq).exp() * lf.ln()
        })
        .sum();
    Ok(sum / norm / (k as f64).ln())
}

/// `p_ij = p_i m_ij / sum_j m_ij`, valid only when every height and width
/// equals the same `1/k`.
pub fn optimal_row_distribution(system: &RandomCarpetSystem) -> Result<RowDistribution> {
    let side = system.row(0, 0).height;
    let uniform = system.maps().iter().all(|m| {
        m.rows.iter().all(|r| {
            (r.height - side).abs() <= 1e-12 && r.cells.iter().all(|c| (c.width - side).abs() <= 1e-12)
        })
    });
    if !uniform {
        return Err(CarpetError::Percolation(
            "optimal row distribution formula needs all scales equal".into(),
        ));
    }
    let counts: Vec<Vec<f64>> = system
        .maps()
        .iter()
        .map(|m| m.rows.iter().map(|r| r.cells.len() as f64).collect())
        .collect();
    RowDistribution::from_conditional(system, &counts)
}
