//! Box counting and the least-squares log-log regression shared with the
//! local-dimension estimates.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::interval_maps::BranchMap;
use crate::symbolic::{pull_back, Span};

pub const MIN_POINTS: usize = 1000;
pub const MIN_SCALES: usize = 4;
/// Default cap on `m^depth` in [`attractor_sample`].
pub const ATTRACTOR_BUDGET: usize = 1_000_000;

/// One row of the regression table: a scale (or radius) with the observed
/// count or mass, in linear and log form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub value: f64,
    pub x: f64,
    pub y: f64,
}

/// Least-squares slope of `y` against `x`, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub radii_range: (f64, f64),
    pub table: Vec<ScaleRow>,
}

impl DimensionEstimate {
    /// Fits `y = slope·x + intercept` over the rows.
    pub fn fit(table: Vec<ScaleRow>) -> Result<Self> {
        if table.len() < MIN_SCALES {
            return Err(Error::Estimation(format!(
                "{} usable scales, at least {MIN_SCALES} needed",
                table.len()
            )));
        }
        let xs: Vec<f64> = table.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = table.iter().map(|r| r.y).collect();
        let (slope, intercept, stderr, r_squared) = least_squares(&xs, &ys)?;
        let lo = table.iter().map(|r| r.scale).fold(f64::INFINITY, f64::min);
        let hi = table
            .iter()
            .map(|r| r.scale)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(DimensionEstimate {
            slope,
            intercept,
            stderr,
            r_squared,
            radii_range: (lo, hi),
            table,
        })
    }

    /// CSV with columns `scale,value,x,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.table {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ordinary least squares: `(slope, intercept, slope stderr, r²)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(invalid("regression needs at least two paired values"));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Estimation("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let stderr = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok((slope, intercept, stderr, r_squared))
}

/// `count` scales `start·ratio^k`.
pub fn geometric_scales(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * ratio.powi(k as i32)).collect()
}

/// 12 scales from 0.2 with ratio 0.7.
pub fn default_scales() -> Vec<f64> {
    geometric_scales(0.2, 0.7, 12)
}

/// Slope of `log N(ε)` against `log(1/ε)` over grid-aligned boxes.
pub fn box_counting(points: &[f64], scales: &[f64]) -> Result<DimensionEstimate> {
    if points.len() < MIN_POINTS {
        return Err(invalid(format!(
            "{} points, at least {MIN_POINTS} needed",
            points.len()
        )));
    }
    if scales.len() < MIN_SCALES {
        return Err(invalid(format!(
            "{} scales, at least {MIN_SCALES} needed",
            scales.len()
        )));
    }
    if scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(invalid("scales must lie in (0, 1]"));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(invalid("points must be finite"));
    }
    let table = scales
        .par_iter()
        .map(|&eps| {
            let mut boxes: Vec<i64> = points.iter().map(|x| (x / eps).floor() as i64).collect();
            boxes.sort_unstable();
            boxes.dedup();
            let count = boxes.len() as f64;
            ScaleRow {
                scale: eps,
                value: count,
                x: -eps.ln(),
                y: count.ln(),
            }
        })
        .collect();
    DimensionEstimate::fit(table)
}

/// Midpoints of all cylinders of depth `depth`, sorted.
pub fn attractor_sample(map: &BranchMap, depth: usize, budget: usize) -> Result<Vec<f64>> {
    let m = map.branch_count();
    let count = (m as f64).powi(depth as i32);
    if count > budget as f64 {
        return Err(Error::Budget(format!(
            "{m}^{depth} = {count} cylinders exceed the budget {budget}; sample orbits instead"
        )));
    }
    let mut spans = vec![Span::UNIT];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(spans.len() * m);
        for a in 0..m {
            for s in &spans {
                next.push(pull_back(map, a, *s)?);
            }
        }
        spans = next;
    }
    let mut points: Vec<f64> = spans.iter().map(Span::mid).collect();
    points.sort_by(f64::total_cmp);
    Ok(points)
}
