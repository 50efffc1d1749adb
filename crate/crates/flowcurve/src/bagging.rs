//! Grid aggregation of (density, flow) observations into weighted bags.
//!
//! The plane is divided into u equal density segments and v equal flow
//! segments spanning the data extent. Every nonempty cell becomes one
//! bag: the centroid of its member points, weighted by the share of
//! observations it holds. Outliers land in near-empty cells and carry
//! weight 1/n, which is what makes the downstream weighted fit robust to
//! them.

use crate::types::{AggregatedObservation, Bag, BagGrid};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaggingError {
    #[error("cannot build a grid over zero observations")]
    EmptyObservations,
    #[error("segment counts must be >= 1")]
    BadSegments,
    #[error("observation (k={k}, q={q}) lies outside the grid")]
    OutOfGrid { k: f64, q: f64 },
    #[error("bag csv: {0}")]
    Csv(String),
}

/// Equal-width grid spanning the observation extent. An axis on which
/// every observation takes the same value collapses to a single segment
/// (the caller can compare requested and actual segment counts).
pub fn make_grid(
    obs: &[AggregatedObservation],
    u: usize,
    v_segments: usize,
) -> Result<BagGrid, BaggingError> {
    if obs.is_empty() {
        return Err(BaggingError::EmptyObservations);
    }
    if u < 1 || v_segments < 1 {
        return Err(BaggingError::BadSegments);
    }
    let k_min = obs.iter().map(|o| o.k).fold(f64::INFINITY, f64::min);
    let k_max = obs.iter().map(|o| o.k).fold(f64::NEG_INFINITY, f64::max);
    let q_min = obs.iter().map(|o| o.q).fold(f64::INFINITY, f64::min);
    let q_max = obs.iter().map(|o| o.q).fold(f64::NEG_INFINITY, f64::max);
    Ok(BagGrid {
        u: if k_max > k_min { u } else { 1 },
        v_segments: if q_max > q_min { v_segments } else { 1 },
        k_range: (k_min, k_max),
        q_range: (q_min, q_max),
    })
}

fn axis_index(x: f64, lo: f64, hi: f64, segments: usize) -> Option<usize> {
    if x < lo || x > hi {
        return None;
    }
    if segments == 1 || hi == lo {
        return Some(0);
    }
    // right-open intervals: a point exactly on an interior boundary
    // starts the higher cell; the maximum belongs to the last cell
    let width = (hi - lo) / segments as f64;
    let idx = ((x - lo) / width).floor() as usize;
    Some(idx.min(segments - 1))
}

/// Cell of an observation as (density index, flow index).
pub fn cell_of(grid: &BagGrid, k: f64, q: f64) -> Option<(usize, usize)> {
    let row = axis_index(k, grid.k_range.0, grid.k_range.1, grid.u)?;
    let col = axis_index(q, grid.q_range.0, grid.q_range.1, grid.v_segments)?;
    Some((row, col))
}

/// Aggregates observations into per-cell centroid bags. Bag weights are
/// p_j / n and sum to one; point counts sum to n. Output is ordered by
/// cell index, so repeated runs produce identical bags.
pub fn bag_observations(
    obs: &[AggregatedObservation],
    grid: &BagGrid,
) -> Result<Vec<Bag>, BaggingError> {
    if obs.is_empty() {
        return Err(BaggingError::EmptyObservations);
    }
    let mut cells: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for o in obs {
        let cell = cell_of(grid, o.k, o.q).ok_or(BaggingError::OutOfGrid { k: o.k, q: o.q })?;
        let slot = cells.entry(cell).or_insert((0.0, 0.0, 0));
        slot.0 += o.k;
        slot.1 += o.q;
        slot.2 += 1;
    }
    let n = obs.len() as f64;
    Ok(cells
        .into_iter()
        .map(|(cell, (k_sum, q_sum, count))| Bag {
            k_centroid: k_sum / count as f64,
            q_centroid: q_sum / count as f64,
            weight: count as f64 / n,
            point_count: count,
            cell,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionReport {
    pub n: usize,
    pub bag_count: usize,
    pub ratio: f64,
}

/// How much the bagging step compressed the dataset.
pub fn bag_reduction_report(obs: &[AggregatedObservation], bags: &[Bag]) -> ReductionReport {
    ReductionReport {
        n: obs.len(),
        bag_count: bags.len(),
        ratio: obs.len() as f64 / bags.len() as f64,
    }
}

pub const BAG_CSV_HEADER: &str = "k_centroid,q_centroid,weight,count,row,col";

/// Delimited text serialization, shortest round-trip float formatting.
pub fn bags_to_csv(bags: &[Bag]) -> String {
    let mut out = String::from(BAG_CSV_HEADER);
    out.push('\n');
    for b in bags {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.k_centroid, b.q_centroid, b.weight, b.point_count, b.cell.0, b.cell.1
        ));
    }
    out
}

pub fn bags_from_csv(text: &str) -> Result<Vec<Bag>, BaggingError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == BAG_CSV_HEADER => {}
        other => {
            return Err(BaggingError::Csv(format!(
                "missing header '{BAG_CSV_HEADER}', got {other:?}"
            )))
        }
    }
    let mut bags = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(BaggingError::Csv(format!(
                "line {}: expected 6 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|e| BaggingError::Csv(format!("line {}: {what}: {e}", i + 2)))
        };
        let parse_u = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|e| BaggingError::Csv(format!("line {}: {what}: {e}", i + 2)))
        };
        bags.push(Bag {
            k_centroid: parse_f(fields[0], "k_centroid")?,
            q_centroid: parse_f(fields[1], "q_centroid")?,
            weight: parse_f(fields[2], "weight")?,
            point_count: parse_u(fields[3], "count")?,
            cell: (parse_u(fields[4], "row")?, parse_u(fields[5], "col")?),
        });
    }
    Ok(bags)
}
