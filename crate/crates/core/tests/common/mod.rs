#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use randcarpet::model::{CarpetMap, Cell, RandomCarpetSystem, Row};
use randcarpet::moran::RowDistribution;
use randcarpet::sampler::{BernoulliMeasure, Environment, SymbolPath};

pub const THIRD: f64 = 1.0 / 3.0;

pub fn mcmullen() -> RandomCarpetSystem {
    RandomCarpetSystem::new(
        vec![CarpetMap::new(vec![
            Row::packed(0.5, 0.0, &[THIRD, THIRD]),
            Row::packed(0.5, 0.5, &[THIRD]),
        ])],
        vec![1.0],
    )
    .unwrap()
}

/// `log_2(2^{log_3 2} + 1)`; the two-row, three-column carpet via the
/// deterministic formula `log_m sum_j n_j^{log_n m}` with m=2, n=3.
pub fn mcmullen_oracle() -> f64 {
    let exponent = 2f64.ln() / 3f64.ln();
    ((2f64).powf(exponent) + 1.0f64.powf(exponent)).log2()
}

pub fn single_row_quarters() -> RandomCarpetSystem {
    RandomCarpetSystem::new(
        vec![CarpetMap::new(vec![Row::packed(0.5, 0.0, &[0.25, 0.25])])],
        vec![1.0],
    )
    .unwrap()
}

/// A valid system with at most `max_maps` maps, 3 rows per map and 3 cells
/// per row. Row `j` of an `r`-row map sits in the horizontal slot
/// `[j/r, (j+1)/r)`, cell `k` of a `c`-cell row in `[k/c, (k+1)/c)`.
pub fn random_system(seed: u64, max_maps: usize) -> RandomCarpetSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=max_maps);
    let maps = (0..m)
        .map(|_| {
            let r = rng.random_range(1..=3usize);
            let rows = (0..r)
                .map(|j| {
                    let slot = 1.0 / r as f64;
                    let b = slot * rng.random_range(0.3..0.95);
                    let y = j as f64 * slot + rng.random_range(0.0..(slot - b));
                    let c = rng.random_range(1..=3usize);
                    let cslot = 1.0 / c as f64;
                    let cells = (0..c)
                        .map(|k| {
                            let a = b.min(cslot) * rng.random_range(0.2..1.0);
                            let x = k as f64 * cslot + rng.random_range(0.0..(cslot - a).max(1e-15));
                            Cell::new(a, x)
                        })
                        .collect();
                    Row::new(b, y, cells)
                })
                .collect();
            CarpetMap::new(rows)
        })
        .collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    RandomCarpetSystem::new(maps, raw.iter().map(|x| x / total).collect()).unwrap()
}

/// A random feasible row distribution; some rows get zero weight.
pub fn random_distribution(system: &RandomCarpetSystem, rng: &mut impl Rng) -> RowDistribution {
    let scores: Vec<Vec<f64>> = system
        .shape()
        .into_iter()
        .map(|m| {
            let mut row: Vec<f64> = (0..m)
                .map(|_| {
                    if m > 1 && rng.random_bool(0.15) {
                        0.0
                    } else {
                        rng.sample::<f64, _>(Exp1)
                    }
                })
                .collect();
            if row.iter().all(|&x| x == 0.0) {
                row[0] = 1.0;
            }
            row
        })
        .collect();
    RowDistribution::from_conditional(system, &scores).unwrap()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Every order-`n` cylinder of `env` with positive mass.
pub fn all_paths(s: &RandomCarpetSystem, m: &BernoulliMeasure, env: &Environment, n: usize) -> Vec<SymbolPath> {
    let mut paths = vec![Vec::new()];
    for &i in &env.indices[..n] {
        let mut next = Vec::new();
        for p in &paths {
            for j in 0..s.num_rows(i) {
                if m.row_probability(i, j) == 0.0 {
                    continue;
                }
                for k in 0..s.row(i, j).cells.len() {
                    let mut q: Vec<(usize, usize)> = p.clone();
                    q.push((j, k));
                    next.push(q);
                }
            }
        }
        paths = next;
    }
    paths.into_iter().map(|entries| SymbolPath { entries }).collect()
}
