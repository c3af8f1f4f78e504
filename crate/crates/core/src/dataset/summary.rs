use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Episode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ColumnStats {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        // Welford
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1.0;
            let delta = v - mean;
            mean += delta / n;
            m2 += delta * (v - mean);
            min = min.min(v);
            max = max.max(v);
        }
        Self {
            min,
            max,
            mean,
            std: (m2 / n).sqrt(),
        }
    }
}

/// Tip-position statistics in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub x: ColumnStats,
    pub y: ColumnStats,
    pub z: ColumnStats,
    pub distance_from_base: ColumnStats,
    pub distance_from_rest: ColumnStats,
}

/// Statistics over every tip position an episode visits: each state `r(n)`
/// plus the final goal.
pub fn summarize(episodes: &[Episode], length_m: f64) -> Result<DatasetSummary> {
    let mut points: Vec<[f64; 3]> = Vec::new();
    for ep in episodes {
        points.extend(ep.steps.iter().map(|s| s.r));
        if let Some(last) = ep.steps.last() {
            points.push(last.r_d);
        }
    }
    if points.is_empty() {
        return Err(Error::contract("cannot summarize an empty dataset"));
    }
    let mm: Vec<[f64; 3]> = points.iter().map(|p| p.map(|c| c * 1000.0)).collect();
    let rest = length_m * 1000.0;
    Ok(DatasetSummary {
        samples: mm.len(),
        x: ColumnStats::of(mm.iter().map(|p| p[0])),
        y: ColumnStats::of(mm.iter().map(|p| p[1])),
        z: ColumnStats::of(mm.iter().map(|p| p[2])),
        distance_from_base: ColumnStats::of(
            mm.iter()
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()),
        ),
        distance_from_rest: ColumnStats::of(mm.iter().map(|p| {
            let dx = p[0] - rest;
            (dx * dx + p[1] * p[1] + p[2] * p[2]).sqrt()
        })),
    })
}

impl DatasetSummary {
    pub fn columns(&self) -> [(&'static str, &ColumnStats); 5] {
        [
            ("x-coord.", &self.x),
            ("y-coord.", &self.y),
            ("z-coord.", &self.z),
            ("dist. from base", &self.distance_from_base),
            ("dist. from rest", &self.distance_from_rest),
        ]
    }

    /// Plain-text table, all values in mm.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let mut out = String::new();
        let _ = write!(out, "{:<7}", "Metric");
        for (name, _) in &cols {
            let _ = write!(out, " | {name:>15}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(7 + cols.len() * 18));
        out.push('\n');
        let rows: [(&str, fn(&ColumnStats) -> f64); 4] = [
            ("Min.", |c| c.min),
            ("Max.", |c| c.max),
            ("Mean", |c| c.mean),
            ("STD", |c| c.std),
        ];
        for (label, get) in rows {
            let _ = write!(out, "{label:<7}");
            for (_, c) in &cols {
                let _ = write!(out, " | {:>15.1}", get(c));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "({} tip positions, mm)", self.samples);
        out
    }
}

/// Kolmogorov-Smirnov statistic `D_n` of `samples` against Uniform[low, high].
pub fn uniform_ks_statistic(samples: &[f64], low: f64, high: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = ((x - low) / (high - low)).clamp(0.0, 1.0);
            let i = i as f64;
            (cdf - i / n).max((i + 1.0) / n - cdf)
        })
        .fold(0.0, f64::max)
}
