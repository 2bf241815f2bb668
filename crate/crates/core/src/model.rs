//! Random self-affine carpet systems.
//!
//! A system is a list of map families. Family `i` maps the unit square onto
//! disjoint axis-aligned rectangles arranged in rows: row `j` has height
//! `b_ij` and vertical offset `d_ij`, and cell `k` in that row has width
//! `a_ijk` and horizontal offset `c_ijk`. At every level of the construction
//! one family is drawn according to `env_probs`.
//!
//! All indices in this crate are zero-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};

/// Slack used for all geometric inequalities.
pub const GEOMETRY_SLACK: f64 = 1e-12;
/// Tolerance on `|sum p_i - 1|`.
pub const PROB_SUM_TOL: f64 = 1e-12;
pub const DEFAULT_HYPOTHESIS_TOL: f64 = 1e-9;
pub const DEFAULT_GRID_POINTS: usize = 1025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub width: f64,
    pub x_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub height: f64,
    pub y_offset: f64,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CarpetMap {
    pub rows: Vec<Row>,
}

impl Cell {
    pub fn new(width: f64, x_offset: f64) -> Self {
        Self { width, x_offset }
    }
}

impl Row {
    pub fn new(height: f64, y_offset: f64, cells: Vec<Cell>) -> Self {
        Self {
            height,
            y_offset,
            cells,
        }
    }

    /// Row of `widths.len()` cells packed from the left.
    pub fn packed(height: f64, y_offset: f64, widths: &[f64]) -> Self {
        let mut x = 0.0;
        let cells = widths
            .iter()
            .map(|&w| {
                let c = Cell::new(w, x);
                x += w;
                c
            })
            .collect();
        Self::new(height, y_offset, cells)
    }
}

impl CarpetMap {
    pub fn new(rows: Vec<Row>) -> Self {
        Self { rows }
    }
}

/// Unvalidated system document, exactly as it appears in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    pub maps: Vec<CarpetMap>,
    pub env_probs: Vec<f64>,
}

/// A validated random carpet system. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCarpetSystem {
    maps: Vec<CarpetMap>,
    env_probs: Vec<f64>,
    ln_heights: Vec<Vec<f64>>,
    ln_widths: Vec<Vec<Vec<f64>>>,
}

impl RandomCarpetSystem {
    /// Validates the geometry and probabilities. `env_probs` are kept as
    /// given (their sum is within `PROB_SUM_TOL` of one), so a system
    /// survives serialization bit for bit.
    pub fn new(maps: Vec<CarpetMap>, env_probs: Vec<f64>) -> Result<Self> {
        Self::from_doc(SystemDoc { maps, env_probs })
    }

    pub fn from_doc(doc: SystemDoc) -> Result<Self> {
        let report = validate_geometry(&doc);
        if !report.ok {
            return Err(CarpetError::Geometry(report));
        }
        let SystemDoc { maps, env_probs } = doc;
        let ln_heights = maps
            .iter()
            .map(|m| m.rows.iter().map(|r| r.height.ln()).collect())
            .collect();
        let ln_widths = maps
            .iter()
            .map(|m| {
                m.rows
                    .iter()
                    .map(|r| r.cells.iter().map(|c| c.width.ln()).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            maps,
            env_probs,
            ln_heights,
            ln_widths,
        })
    }

    pub fn to_doc(&self) -> SystemDoc {
        SystemDoc {
            maps: self.maps.clone(),
            env_probs: self.env_probs.clone(),
        }
    }

    pub fn maps(&self) -> &[CarpetMap] {
        &self.maps
    }

    pub fn env_probs(&self) -> &[f64] {
        &self.env_probs
    }

    pub fn num_maps(&self) -> usize {
        self.maps.len()
    }

    pub fn num_rows(&self, i: usize) -> usize {
        self.maps[i].rows.len()
    }

    pub fn row(&self, i: usize, j: usize) -> &Row {
        &self.maps[i].rows[j]
    }

    pub fn ln_height(&self, i: usize, j: usize) -> f64 {
        self.ln_heights[i][j]
    }

    pub fn ln_widths(&self, i: usize, j: usize) -> &[f64] {
        &self.ln_widths[i][j]
    }

    /// Shape of a row distribution for this system: row count per map.
    pub fn shape(&self) -> Vec<usize> {
        self.maps.iter().map(|m| m.rows.len()).collect()
    }

    pub fn min_width(&self) -> f64 {
        self.cells().map(|c| c.width).fold(f64::INFINITY, f64::min)
    }

    pub fn max_width(&self) -> f64 {
        self.cells().map(|c| c.width).fold(0.0, f64::max)
    }

    pub fn max_height(&self) -> f64 {
        self.rows_iter().map(|r| r.height).fold(0.0, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.rows_iter()
            .map(|r| r.height)
            .fold(f64::INFINITY, f64::min)
    }

    fn rows_iter(&self) -> impl Iterator<Item = &Row> {
        self.maps.iter().flat_map(|m| m.rows.iter())
    }

    fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.rows_iter().flat_map(|r| r.cells.iter())
    }

    /// `sum_k a_ijk^t` without bounds checks.
    pub(crate) fn row_sum_at(&self, i: usize, j: usize, t: f64) -> f64 {
        self.maps[i].rows[j]
            .cells
            .iter()
            .map(|c| c.width.powf(t))
            .sum()
    }
}

/// `sum_k a_ijk^t`, summed in cell order.
pub fn row_sum(system: &RandomCarpetSystem, i: usize, j: usize, t: f64) -> Result<f64> {
    if i >= system.num_maps() {
        return Err(CarpetError::IndexOutOfRange(format!(
            "map {i} (system has {})",
            system.num_maps()
        )));
    }
    if j >= system.num_rows(i) {
        return Err(CarpetError::IndexOutOfRange(format!(
            "row {j} of map {i} (map has {})",
            system.num_rows(i)
        )));
    }
    Ok(system.row_sum_at(i, j, t))
}

/// Parses a JSON system document and validates it.
pub fn parse_system(text: &str) -> Result<RandomCarpetSystem> {
    let doc = parse_doc(text)?;
    RandomCarpetSystem::from_doc(doc)
}

/// Parses the document without geometric validation.
pub fn parse_doc(text: &str) -> Result<SystemDoc> {
    serde_json::from_str(text).map_err(|e| CarpetError::Schema(e.to_string()))
}

pub fn serialize_system(system: &RandomCarpetSystem) -> String {
    serde_json::to_string_pretty(&system.to_doc()).expect("system documents always serialize")
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    NoMaps,
    EmptyMap,
    EmptyRow,
    NonFinite,
    WidthRange,
    HeightRange,
    OffsetRange,
    WidthExceedsHeight,
    RowHeightsExceedOne,
    CellWidthsExceedOne,
    RowGap,
    CellGap,
    ProbabilityCount,
    ProbabilityNonPositive,
    ProbabilitySum,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::NoMaps => "no maps",
            Constraint::EmptyMap => "map has no rows",
            Constraint::EmptyRow => "row has no cells",
            Constraint::NonFinite => "non-finite value",
            Constraint::WidthRange => "width outside (0,1)",
            Constraint::HeightRange => "height outside (0,1)",
            Constraint::OffsetRange => "offset outside [0,1)",
            Constraint::WidthExceedsHeight => "a exceeds b",
            Constraint::RowHeightsExceedOne => "row heights exceed 1",
            Constraint::CellWidthsExceedOne => "cell widths exceed 1",
            Constraint::RowGap => "row gap",
            Constraint::CellGap => "cell gap",
            Constraint::ProbabilityCount => "env_probs length differs from map count",
            Constraint::ProbabilityNonPositive => "probability not positive",
            Constraint::ProbabilitySum => "probabilities do not sum to 1",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// `[i]`, `[i, j]` or `[i, j, k]` depending on the constraint.
    pub location: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn summary(&self) -> String {
        if self.ok {
            return "ok".to_string();
        }
        self.violations
            .iter()
            .map(|v| format!("{} at {:?} (value {})", v.constraint, v.location, v.value))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn has(&self, constraint: Constraint) -> bool {
        self.violations.iter().any(|v| v.constraint == constraint)
    }
}

fn interval_checks(
    out: &mut Vec<Violation>,
    gap: Constraint,
    loc: &[usize],
    offsets_sizes: impl Iterator<Item = (f64, f64)>,
) {
    let items: Vec<(f64, f64)> = offsets_sizes.collect();
    for (k, pair) in items.windows(2).enumerate() {
        let (o0, s0) = pair[0];
        let (o1, _) = pair[1];
        let room = o1 - o0;
        if room < s0 - GEOMETRY_SLACK {
            let mut l = loc.to_vec();
            l.push(k);
            out.push(Violation {
                constraint: gap,
                location: l,
                value: room,
            });
        }
    }
    if let Some(&(o, s)) = items.last() {
        let room = 1.0 - o;
        if room < s - GEOMETRY_SLACK {
            let mut l = loc.to_vec();
            l.push(items.len() - 1);
            out.push(Violation {
                constraint: gap,
                location: l,
                value: room,
            });
        }
    }
}

/// Checks every geometric inequality of the model and the probability vector.
/// Violations are data; this never fails.
pub fn validate_geometry(doc: &SystemDoc) -> ValidationReport {
    let mut v = Vec::new();
    let push = |v: &mut Vec<Violation>, c, loc: Vec<usize>, value| {
        v.push(Violation {
            constraint: c,
            location: loc,
            value,
        })
    };
    if doc.maps.is_empty() {
        push(&mut v, Constraint::NoMaps, vec![], 0.0);
    }
    for (i, map) in doc.maps.iter().enumerate() {
        if map.rows.is_empty() {
            push(&mut v, Constraint::EmptyMap, vec![i], 0.0);
            continue;
        }
        let mut height_sum = 0.0;
        for (j, row) in map.rows.iter().enumerate() {
            let b = row.height;
            height_sum += b;
            if !b.is_finite() || !row.y_offset.is_finite() {
                push(&mut v, Constraint::NonFinite, vec![i, j], b);
                continue;
            }
            if !(b > 0.0 && b < 1.0) {
                push(&mut v, Constraint::HeightRange, vec![i, j], b);
            }
            if !(row.y_offset >= 0.0 && row.y_offset < 1.0) {
                push(&mut v, Constraint::OffsetRange, vec![i, j], row.y_offset);
            }
            if row.cells.is_empty() {
                push(&mut v, Constraint::EmptyRow, vec![i, j], 0.0);
                continue;
            }
            let mut width_sum = 0.0;
            for (k, cell) in row.cells.iter().enumerate() {
                let a = cell.width;
                width_sum += a;
                if !a.is_finite() || !cell.x_offset.is_finite() {
                    push(&mut v, Constraint::NonFinite, vec![i, j, k], a);
                    continue;
                }
                if !(a > 0.0 && a < 1.0) {
                    push(&mut v, Constraint::WidthRange, vec![i, j, k], a);
                }
                if !(cell.x_offset >= 0.0 && cell.x_offset < 1.0) {
                    push(&mut v, Constraint::OffsetRange, vec![i, j, k], cell.x_offset);
                }
                if a > b + GEOMETRY_SLACK {
                    push(&mut v, Constraint::WidthExceedsHeight, vec![i, j, k], a);
                }
            }
            if width_sum > 1.0 + GEOMETRY_SLACK {
                push(&mut v, Constraint::CellWidthsExceedOne, vec![i, j], width_sum);
            }
            interval_checks(
                &mut v,
                Constraint::CellGap,
                &[i, j],
                row.cells.iter().map(|c| (c.x_offset, c.width)),
            );
        }
        if height_sum > 1.0 + GEOMETRY_SLACK {
            push(&mut v, Constraint::RowHeightsExceedOne, vec![i], height_sum);
        }
        interval_checks(
            &mut v,
            Constraint::RowGap,
            &[i],
            map.rows.iter().map(|r| (r.y_offset, r.height)),
        );
    }
    if doc.env_probs.len() != doc.maps.len() {
        push(
            &mut v,
            Constraint::ProbabilityCount,
            vec![],
            doc.env_probs.len() as f64,
        );
    }
    for (i, &p) in doc.env_probs.iter().enumerate() {
        if !p.is_finite() {
            push(&mut v, Constraint::NonFinite, vec![i], p);
        } else if p <= 0.0 {
            push(&mut v, Constraint::ProbabilityNonPositive, vec![i], p);
        }
    }
    let total: f64 = doc.env_probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        push(&mut v, Constraint::ProbabilitySum, vec![], total);
    }
    ValidationReport {
        ok: v.is_empty(),
        violations: v,
    }
}

// ---------------------------------------------------------------------------
// Hypotheses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisId {
    Generic,
    Robust1,
    Robust2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Separation of two rows of one map at a given `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowPairWitness {
    pub t: f64,
    pub map: usize,
    pub row_a: usize,
    pub row_b: usize,
    pub difference: f64,
}

/// Worst ratio observed for one map together with the centers used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioWitness {
    pub map: usize,
    pub center_a: f64,
    pub center_b: f64,
    pub worst_ratio: f64,
    /// `[j]` or `[j, k]` where the worst ratio is attained.
    pub location: Vec<usize>,
    pub center_kind: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Witness {
    pub notes: Vec<String>,
    pub row_pairs: Vec<RowPairWitness>,
    pub suspect_intervals: Vec<(f64, f64)>,
    pub ratios: Vec<RatioWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub id: HypothesisId,
    pub verdict: Verdict,
    pub witness: Witness,
}

fn sorted_widths(row: &Row) -> Vec<f64> {
    let mut w: Vec<f64> = row.cells.iter().map(|c| c.width).collect();
    w.sort_by(f64::total_cmp);
    w
}

fn same_multiset(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-15)
}

/// Largest within-map gap between row sums at `t`, with the pair that attains it.
fn max_separation(system: &RandomCarpetSystem, t: f64) -> Option<RowPairWitness> {
    let mut best: Option<RowPairWitness> = None;
    for i in 0..system.num_maps() {
        let sums: Vec<f64> = (0..system.num_rows(i))
            .map(|j| system.row_sum_at(i, j, t))
            .collect();
        for j in 0..sums.len() {
            for j2 in j + 1..sums.len() {
                let d = (sums[j] - sums[j2]).abs();
                if best.is_none_or(|b| d > b.difference) {
                    best = Some(RowPairWitness {
                        t,
                        map: i,
                        row_a: j,
                        row_b: j2,
                        difference: d,
                    });
                }
            }
        }
    }
    best
}

/// Grid check that for every `t` in `[0,1]` some map has two rows with
/// different `sum_k a^t`.
///
/// Three-valued: `Fail` only when the row sums coincide identically (every
/// map's rows share one width multiset); grid points where the best
/// separation is `<= tol` make the verdict `Inconclusive` and are reported
/// as suspect intervals.
pub fn check_generic_hypothesis(
    system: &RandomCarpetSystem,
    grid_points: usize,
    tol: f64,
) -> HypothesisReport {
    let grid_points = grid_points.max(2);
    let mut witness = Witness::default();

    let identical = system.maps().iter().all(|m| {
        let first = sorted_widths(&m.rows[0]);
        m.rows.iter().all(|r| same_multiset(&first, &sorted_widths(r)))
    });
    if identical {
        witness
            .notes
            .push("all pairwise sums equal: every map's rows share one cell-width multiset".into());
        if system.maps().iter().all(|m| m.rows.len() < 2) {
            witness.notes.push("no map has two rows".into());
        }
        if let Some(w) = max_separation(system, 0.5) {
            witness.row_pairs.push(w);
        }
        return HypothesisReport {
            id: HypothesisId::Generic,
            verdict: Verdict::Fail,
            witness,
        };
    }

    let h = 1.0 / (grid_points - 1) as f64;
    let mut failing = Vec::new();
    for g in 0..grid_points {
        let t = g as f64 * h;
        let w = max_separation(system, t).expect("non-identical rows imply a pair exists");
        if w.difference <= tol {
            failing.push(t);
        }
        witness.row_pairs.push(w);
    }

    for &t in &failing {
        // one bisection level on each side narrows the suspect interval
        let left = (t - h / 2.0).max(0.0);
        let right = (t + h / 2.0).min(1.0);
        let sep = |x: f64| max_separation(system, x).map_or(0.0, |w| w.difference);
        let lo = if sep(left) > tol { left } else { (t - h).max(0.0) };
        let hi = if sep(right) > tol { right } else { (t + h).min(1.0) };
        witness.suspect_intervals.push((lo, hi));
    }

    let verdict = if failing.is_empty() {
        Verdict::Pass
    } else {
        witness.notes.push(format!(
            "{} grid point(s) with all row-sum differences <= {tol:e}",
            failing.len()
        ));
        Verdict::Inconclusive
    };
    HypothesisReport {
        id: HypothesisId::Generic,
        verdict,
        witness,
    }
}

fn geometric_mean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

fn minimax_center(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    (lo * hi).sqrt()
}

/// Worst symmetric ratio `max(x/c, c/x)` and its index.
fn worst_ratio(values: &[f64], center: f64) -> (f64, usize) {
    values
        .iter()
        .map(|&x| (x / center).max(center / x))
        .enumerate()
        .fold((1.0, 0), |acc, (idx, r)| if r > acc.0 { (r, idx) } else { acc })
}

/// Checks the two robust hypotheses with tolerance `eps`.
///
/// Robust 1 instantiates the centers `a_i`, `b_i` as geometric means. If that
/// fails, the minimax center `sqrt(min * max)` is tried; failure there is a
/// certificate that no center works. Robust 2 checks `b_ij / a_ijk < 1 + eps`.
pub fn check_robust_hypotheses(
    system: &RandomCarpetSystem,
    eps: f64,
) -> (HypothesisReport, HypothesisReport) {
    let bound = 1.0 + eps;
    let mut w1 = Witness::default();
    let mut verdict1 = Verdict::Pass;

    for (i, map) in system.maps().iter().enumerate() {
        let heights: Vec<f64> = map.rows.iter().map(|r| r.height).collect();
        let widths: Vec<f64> = map
            .rows
            .iter()
            .flat_map(|r| r.cells.iter().map(|c| c.width))
            .collect();
        let locs: Vec<(usize, usize)> = map
            .rows
            .iter()
            .enumerate()
            .flat_map(|(j, r)| (0..r.cells.len()).map(move |k| (j, k)))
            .collect();

        let evaluate = |ca: f64, cb: f64| {
            let (rb, jb) = worst_ratio(&heights, cb);
            let (ra, ka) = worst_ratio(&widths, ca);
            (rb, jb, ra, ka)
        };
        let mut kind = "geometric_mean";
        let (mut ca, mut cb) = (geometric_mean(&widths), geometric_mean(&heights));
        let (mut rb, mut jb, mut ra, mut ka) = evaluate(ca, cb);
        if rb >= bound || ra >= bound {
            let (ma, mb) = (minimax_center(&widths), minimax_center(&heights));
            let alt = evaluate(ma, mb);
            if alt.0 < bound && alt.2 < bound {
                kind = "minimax";
                (ca, cb) = (ma, mb);
                (rb, jb, ra, ka) = alt;
            }
        }
        let (worst, location) = if rb >= ra {
            (rb, vec![jb])
        } else {
            (ra, vec![locs[ka].0, locs[ka].1])
        };
        if worst >= bound {
            verdict1 = Verdict::Fail;
        } else if ca > cb && verdict1 == Verdict::Pass {
            w1.notes
                .push(format!("map {i}: centers violate a_i <= b_i ({ca} > {cb})"));
            verdict1 = Verdict::Inconclusive;
        }
        w1.ratios.push(RatioWitness {
            map: i,
            center_a: ca,
            center_b: cb,
            worst_ratio: worst,
            location,
            center_kind: kind.into(),
        });
    }

    let mut w2 = Witness::default();
    let mut verdict2 = Verdict::Pass;
    for (i, map) in system.maps().iter().enumerate() {
        let mut worst = (0.0, vec![0, 0]);
        for (j, row) in map.rows.iter().enumerate() {
            for (k, c) in row.cells.iter().enumerate() {
                let r = row.height / c.width;
                if r > worst.0 {
                    worst = (r, vec![j, k]);
                }
            }
        }
        if worst.0 >= bound {
            verdict2 = Verdict::Fail;
        }
        w2.ratios.push(RatioWitness {
            map: i,
            center_a: f64::NAN,
            center_b: f64::NAN,
            worst_ratio: worst.0,
            location: worst.1,
            center_kind: "none".into(),
        });
    }

    (
        HypothesisReport {
            id: HypothesisId::Robust1,
            verdict: verdict1,
            witness: w1,
        },
        HypothesisReport {
            id: HypothesisId::Robust2,
            verdict: verdict2,
            witness: w2,
        },
    )
}
