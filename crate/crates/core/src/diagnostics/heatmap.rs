use std::fmt::Write as _;

use super::{sq_distance, Connectivity, Embedding};
use crate::env::{EnvState, NavEnv};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSource {
    /// All spatial tokens, flattened.
    Spatial,
    /// Output of the pooling head.
    #[default]
    Pooled,
}

impl std::str::FromStr for FeatureSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spatial" => Ok(Self::Spatial),
            "pooled" => Ok(Self::Pooled),
            other => Err(format!("unknown feature source '{other}' (expected spatial|pooled)")),
        }
    }
}

impl std::fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spatial => "spatial",
            Self::Pooled => "pooled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeatmapKind {
    Geodesic { connectivity: Connectivity, teleport_aware: bool },
    Latent { source: FeatureSource, label: String },
}

/// Per-cell values over a grid; wall cells hold `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub values: Vec<Option<f64>>,
    pub goal: (usize, usize),
    pub kind: HeatmapKind,
}

impl HeatmapGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.width + col]
    }

    /// `(row, col, value)` for every unmasked cell.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i / self.width, i % self.width, v)))
    }

    /// Unmasked cell with the smallest value, first in row-major order on ties.
    pub fn argmin(&self) -> Option<(usize, usize)> {
        self.cells().fold(None, |best: Option<(usize, usize, f64)>, c| match best {
            Some(b) if b.2 <= c.2 => Some(b),
            _ => Some(c),
        })
        .map(|(r, c, _)| (r, c))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,value\n");
        for (r, c, v) in self.cells() {
            if v.is_finite() {
                writeln!(s, "{r},{c},{v:.9e}").expect("string write");
            } else {
                writeln!(s, "{r},{c},inf").expect("string write");
            }
        }
        s
    }

    /// Binary 8-bit PGM. Finite values are min-max scaled to `1..=255`;
    /// masked cells are 0 and unreachable cells 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let finite: Vec<f64> = self.cells().map(|c| c.2).filter(|v| v.is_finite()).collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for v in &self.values {
            out.push(match v {
                None => 0,
                Some(v) if !v.is_finite() => 255,
                Some(v) if hi > lo => (1.0 + 254.0 * (v - lo) / (hi - lo)).round() as u8,
                Some(_) => 1,
            });
        }
        out
    }
}

/// Latent distance from every free cell to the goal cell. The layout is
/// refined by `resolution` (sub-cells per cell side); the agent is rendered
/// at rest at each sub-cell centre.
pub fn latent_heatmap<M: Embedding + ?Sized>(
    model: &M,
    env: &NavEnv,
    goal: (usize, usize),
    resolution: usize,
    source: FeatureSource,
    label: &str,
) -> Result<HeatmapGrid> {
    if resolution == 0 {
        return Err(Error::Contract("resolution must be >= 1".into()));
    }
    let grid = env.layout.refined(resolution);
    if goal.0 >= grid.height() || goal.1 >= grid.width() || !grid.is_free(goal.0, goal.1) {
        return Err(Error::Contract(format!("goal {goal:?} is not a free cell at resolution {resolution}")));
    }
    let feature = |(r, c): (usize, usize)| -> Result<Vec<f64>> {
        let [x, y] = grid.cell_center(r, c);
        let z = model.embed(&env.observe_state(&EnvState::at(x, y)))?;
        match source {
            FeatureSource::Spatial => Ok(z),
            FeatureSource::Pooled => model.pooled(&z),
        }
    };
    let fg = feature(goal)?;
    let mut values = vec![None; grid.height() * grid.width()];
    for cell in grid.free_cells() {
        values[cell.0 * grid.width() + cell.1] = Some(sq_distance(&feature(cell)?, &fg).sqrt());
    }
    Ok(HeatmapGrid {
        height: grid.height(),
        width: grid.width(),
        values,
        goal,
        kind: HeatmapKind::Latent { source, label: label.to_string() },
    })
}

/// Correlation between two heatmaps over cells where both are finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agreement {
    pub spearman: f64,
    pub pearson: f64,
    pub cells: usize,
}

pub fn heatmap_agreement(a: &HeatmapGrid, b: &HeatmapGrid) -> Result<Agreement> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::dim("heatmap_agreement", format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width)));
    }
    if a.values.iter().zip(&b.values).any(|(x, y)| x.is_some() != y.is_some()) {
        return Err(Error::Contract("heatmaps have different masks".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .values
        .iter()
        .zip(&b.values)
        .filter_map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Some((*x, *y)),
            _ => None,
        })
        .unzip();
    Ok(Agreement { spearman: spearman(&xs, &ys)?, pearson: pearson(&xs, &ys)?, cells: xs.len() })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(format!("correlation needs two equal-length samples of size >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Contract("correlation of a constant sample is undefined".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks from 1, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}
