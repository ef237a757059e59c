//! Periodic count data on a (time block × day) grid.
//!
//! Vertex `(block, day)` (both 0-based) has index `day·blocks_per_day + block`,
//! which is chronological. Edges join consecutive blocks of one day and the
//! same block one week apart. Each day is scored through its own 5-week
//! window `F_d`. Files use 1-based `day` and `block` columns.

use std::io::{BufRead, Write};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{induce_subgraph, DirectedGraph, Edge, EdgeSubset};
use crate::laplacian::SpectralLaplacian;
use crate::semigroup::{default_time, make_filters};
use crate::stochastic::{
    adapted_fields, anomaly_test_with_variance, statistic_variance, stream_rng, AnomalyVerdict, DeltaPolicy,
    VarianceModel, WalkModel,
};

pub const DAYS_PER_WEEK: usize = 7;
/// Fewest observed weeks per (weekday, block) cell accepted by [`fit_model`].
pub const MIN_WEEKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    blocks_per_day: usize,
    days: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            blocks_per_day: 288,
            days: 364,
        }
    }
}

impl TimeGrid {
    pub fn new(blocks_per_day: usize, days: usize) -> Result<Self> {
        if blocks_per_day == 0 {
            return Err(Error::InvalidGrid("blocks_per_day must be positive".into()));
        }
        if days == 0 || !days.is_multiple_of(DAYS_PER_WEEK) {
            return Err(Error::InvalidGrid(format!(
                "days must be a positive multiple of 7, got {days}"
            )));
        }
        Ok(Self {
            blocks_per_day,
            days,
        })
    }

    pub fn blocks_per_day(&self) -> usize {
        self.blocks_per_day
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn weeks(&self) -> usize {
        self.days / DAYS_PER_WEEK
    }

    pub fn n_vertices(&self) -> usize {
        self.blocks_per_day * self.days
    }

    pub fn vertex(&self, block: usize, day: usize) -> usize {
        day * self.blocks_per_day + block
    }

    /// `(block, day)` of a vertex index.
    pub fn coords(&self, vertex: usize) -> (usize, usize) {
        (vertex % self.blocks_per_day, vertex / self.blocks_per_day)
    }

    pub fn weekday(day: usize) -> usize {
        day % DAYS_PER_WEEK
    }

    /// `days·(blocks − 1) + blocks·(days − 7)`.
    pub fn expected_edge_count(&self) -> usize {
        self.days * (self.blocks_per_day - 1) + self.blocks_per_day * (self.days - DAYS_PER_WEEK)
    }
}

/// The grid graph: `(b, d) → (b+1, d)` and `(b, d) → (b, d+7)`.
pub fn build_grid_graph(grid: &TimeGrid) -> DirectedGraph {
    let (nb, nd) = (grid.blocks_per_day, grid.days);
    let mut edges = Vec::with_capacity(grid.expected_edge_count());
    for d in 0..nd {
        for b in 0..nb {
            let v = grid.vertex(b, d);
            if b + 1 < nb {
                edges.push((v, grid.vertex(b + 1, d)));
            }
            if d + DAYS_PER_WEEK < nd {
                edges.push((v, grid.vertex(b, d + DAYS_PER_WEEK)));
            }
        }
    }
    DirectedGraph::new(grid.n_vertices(), edges).expect("grid edges are valid by construction")
}

/// The edge set `F_d` for one day.
#[derive(Debug, Clone)]
pub struct DayWindow {
    pub day: usize,
    /// Consecutive-block edges on day `d`.
    pub chain_edges: Vec<Edge>,
    /// Same-block edges `(d−14, d−7)`, `(d−7, d)`, `(d, d+7)`, `(d+7, d+14)`
    /// that fall inside the grid.
    pub week_edges: Vec<Edge>,
}

impl DayWindow {
    pub fn edges(&self) -> Vec<Edge> {
        let mut all: Vec<Edge> = self.chain_edges.iter().chain(&self.week_edges).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn len(&self) -> usize {
        self.chain_edges.len() + self.week_edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset<'g>(&self, grid_graph: &'g DirectedGraph) -> Result<EdgeSubset<'g>> {
        induce_subgraph(grid_graph, &self.edges())
    }
}

/// `F_d` for a 0-based day `d`; week edges leaving the grid are dropped.
pub fn build_day_window(grid: &TimeGrid, day: usize) -> DayWindow {
    assert!(day < grid.days, "day {day} outside grid of {} days", grid.days);
    let nb = grid.blocks_per_day;
    let chain_edges = (0..nb - 1)
        .map(|b| (grid.vertex(b, day), grid.vertex(b + 1, day)))
        .collect();
    let d = day as isize;
    let w = DAYS_PER_WEEK as isize;
    let in_grid = |x: isize| x >= 0 && (x as usize) < grid.days;
    let mut week_edges = Vec::with_capacity(4 * nb);
    for (from, to) in [(d - 2 * w, d - w), (d - w, d), (d, d + w), (d + w, d + 2 * w)] {
        if in_grid(from) && in_grid(to) {
            for b in 0..nb {
                week_edges.push((grid.vertex(b, from as usize), grid.vertex(b, to as usize)));
            }
        }
    }
    DayWindow {
        day,
        chain_edges,
        week_edges,
    }
}

/// Counts per (day, block); `None` marks a missing observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    pub station: String,
    grid: TimeGrid,
    counts: Vec<Option<u64>>,
}

impl CountSeries {
    pub fn empty(station: impl Into<String>, grid: TimeGrid) -> Self {
        Self {
            station: station.into(),
            grid,
            counts: vec![None; grid.n_vertices()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn get(&self, block: usize, day: usize) -> Option<u64> {
        self.counts[self.grid.vertex(block, day)]
    }

    pub fn set(&mut self, block: usize, day: usize, value: Option<u64>) {
        let v = self.grid.vertex(block, day);
        self.counts[v] = value;
    }

    /// Counts in vertex order.
    pub fn as_slice(&self) -> &[Option<u64>] {
        &self.counts
    }

    pub fn day_complete(&self, day: usize) -> bool {
        (0..self.grid.blocks_per_day).all(|b| self.get(b, day).is_some())
    }

    /// The positive signal `max(count, 1)` per vertex; missing entries are `None`.
    pub fn clamped_signal(&self) -> Vec<Option<f64>> {
        self.counts.iter().map(|c| c.map(|c| c.max(1) as f64)).collect()
    }

    /// Reads `day,block,count` or `station,day,block,count` rows (1-based day
    /// and block). With a station column, rows for other stations are skipped
    /// when `station` is given; otherwise all rows must name one station.
    pub fn read_csv<R: BufRead>(reader: R, grid: TimeGrid, station: Option<&str>) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, line)) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(Error::Parse { line: 1, message: "empty input".into() }),
            }
        };
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_ascii_lowercase()).collect();
        let has_station = match columns.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["day", "block", "count"] => false,
            ["station", "day", "block", "count"] => true,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `day,block,count` or `station,day,block,count`, got `{header}`"),
                })
            }
        };
        let mut series = Self::empty(station.unwrap_or(""), grid);
        let mut seen_station: Option<String> = None;
        let mut clamped = 0usize;
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: lineno, message };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(err(format!("expected {} fields, found {}", columns.len(), fields.len())));
            }
            let rest = if has_station {
                let name = fields[0];
                match station {
                    Some(wanted) if wanted != name => continue,
                    Some(_) => {}
                    None => match &seen_station {
                        Some(prev) if prev != name => {
                            return Err(err(format!(
                                "multiple stations ({prev}, {name}); select one with a station filter"
                            )))
                        }
                        Some(_) => {}
                        None => seen_station = Some(name.to_string()),
                    },
                }
                &fields[1..]
            } else {
                &fields[..]
            };
            let index = |s: &str, what: &str, max: usize| -> Result<usize> {
                let v: usize = s.parse().map_err(|_| err(format!("bad {what} `{s}`")))?;
                if v == 0 || v > max {
                    return Err(err(format!("{what} {v} outside 1..={max}")));
                }
                Ok(v - 1)
            };
            let day = index(rest[0], "day", grid.days)?;
            let block = index(rest[1], "block", grid.blocks_per_day)?;
            let count = if rest[2].is_empty() {
                None
            } else {
                let c: i64 = rest[2].parse().map_err(|_| err(format!("bad count `{}`", rest[2])))?;
                if c < 0 {
                    return Err(err(format!("negative count {c}")));
                }
                if c < 1 {
                    clamped += 1;
                }
                Some(c as u64)
            };
            series.set(block, day, count);
        }
        if clamped > 0 {
            info!("{clamped} zero counts will be clamped to 1 before taking logs");
        }
        if let Some(name) = seen_station {
            series.station = name;
        }
        Ok(series)
    }

    /// Writes `day,block,count` (1-based); missing counts are empty fields.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "day,block,count")?;
        for d in 0..self.grid.days {
            for b in 0..self.grid.blocks_per_day {
                match self.get(b, d) {
                    Some(c) => writeln!(out, "{},{},{}", d + 1, b + 1, c)?,
                    None => writeln!(out, "{},{},", d + 1, b + 1)?,
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub blocks_per_day: usize,
    pub seed: Option<u64>,
    pub provenance: String,
}

/// Per-weekday potential and log-variance profiles, `phi[weekday][block]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub phi: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub metadata: ModelMetadata,
}

impl GridModel {
    pub fn validate(&self) -> Result<()> {
        let nb = self.metadata.blocks_per_day;
        for (name, table) in [("phi", &self.phi), ("sigma2", &self.sigma2)] {
            if table.len() != DAYS_PER_WEEK {
                return Err(Error::Model(format!("{name} has {} weekdays, expected 7", table.len())));
            }
            for (w, row) in table.iter().enumerate() {
                if row.len() != nb {
                    return Err(Error::Model(format!(
                        "{name}[{w}] has {} blocks, expected {nb}",
                        row.len()
                    )));
                }
                if let Some(b) = row.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Model(format!("{name}[{w}][{b}] is not finite")));
                }
            }
        }
        for (w, row) in self.sigma2.iter().enumerate() {
            if let Some(b) = row.iter().position(|&s| s < 0.0) {
                return Err(Error::Model(format!("sigma2[{w}][{b}] is negative")));
            }
            if let Some(b) = row.windows(2).position(|p| p[1] < p[0]) {
                return Err(Error::Model(format!(
                    "sigma2[{w}] decreases between blocks {b} and {}",
                    b + 1
                )));
            }
        }
        Ok(())
    }

    /// A synthetic weekly profile: two rush-hour peaks on weekdays, a flatter
    /// weekend, and log-variance rising linearly from 0.02 to 0.25 over a day.
    pub fn demo(blocks_per_day: usize) -> Self {
        let nb = blocks_per_day;
        let bump = |x: f64, c: f64, w: f64| (-((x - c) / w).powi(2)).exp();
        let mut phi = Vec::with_capacity(DAYS_PER_WEEK);
        let mut sigma2 = Vec::with_capacity(DAYS_PER_WEEK);
        for weekday in 0..DAYS_PER_WEEK {
            let weekend = weekday >= 5;
            let (am, pm) = if weekend { (0.3, 0.6) } else { (1.0, 0.9) };
            let row = (0..nb)
                .map(|b| {
                    let x = (b as f64 + 0.5) / nb as f64;
                    let shape = 0.1 + am * bump(x, 0.33, 0.07) + pm * bump(x, 0.72, 0.09) + 0.3 * bump(x, 0.55, 0.2);
                    (40.0 + 400.0 * shape).ln()
                })
                .collect();
            phi.push(row);
            let ramp = (0..nb)
                .map(|b| 0.02 + 0.23 * b as f64 / (nb.max(2) - 1) as f64)
                .collect();
            sigma2.push(ramp);
        }
        Self {
            phi,
            sigma2,
            metadata: ModelMetadata {
                blocks_per_day,
                seed: None,
                provenance: "built-in demo profile".into(),
            },
        }
    }

    /// The walk over the whole grid: one chain per day, parameters by weekday.
    pub fn walk_model(&self, grid: &TimeGrid) -> Result<WalkModel> {
        if grid.blocks_per_day != self.metadata.blocks_per_day {
            return Err(Error::Model(format!(
                "model has {} blocks per day, grid has {}",
                self.metadata.blocks_per_day, grid.blocks_per_day
            )));
        }
        self.validate()?;
        let mut potential = Vec::with_capacity(grid.n_vertices());
        let mut sigma2 = Vec::with_capacity(grid.n_vertices());
        let mut chains = Vec::with_capacity(grid.days);
        for d in 0..grid.days {
            let w = TimeGrid::weekday(d);
            potential.extend_from_slice(&self.phi[w]);
            sigma2.extend_from_slice(&self.sigma2[w]);
            chains.push((0..grid.blocks_per_day).map(|b| grid.vertex(b, d)).collect());
        }
        WalkModel::new(potential, sigma2, chains)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| Error::Model(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        model.validate()?;
        Ok(model)
    }
}

/// A multiplicative anomaly applied to every block of one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    /// 0-based day.
    pub day: usize,
    pub factor: f64,
}

/// Simulates a full year of rounded counts. Day `d` draws from stream `d` of
/// `seed`, so output is independent of evaluation order.
pub fn simulate_counts(model: &GridModel, grid: &TimeGrid, seed: u64, injections: &[Injection]) -> Result<CountSeries> {
    let walk = model.walk_model(grid)?;
    let nb = grid.blocks_per_day;
    let mut series = CountSeries::empty("synthetic", *grid);
    for d in 0..grid.days {
        let mut rng = stream_rng(seed, d as u64);
        let chain = &walk.chains()[d];
        let day_model = WalkModel::single_chain(
            chain.iter().map(|&v| walk.potential()[v]).collect(),
            chain.iter().map(|&v| walk.sigma2()[v]).collect(),
        )?;
        let values = crate::stochastic::simulate_walk(&day_model, &mut rng);
        let factor: f64 = injections.iter().filter(|i| i.day == d).map(|i| i.factor).product();
        for (b, v) in values.iter().enumerate().take(nb) {
            series.set(b, d, Some((v * factor).round() as u64));
        }
    }
    Ok(series)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    // shifted by the first sample so constant input gives exactly zero
    let n = xs.len() as f64;
    let shifted: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let mean = shifted.iter().sum::<f64>() / n;
    shifted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Fits per-weekday `φ` and `σ²` from the weeks of a count series.
///
/// With `y = log max(count, 1)`: `σ²(block 0)` is the across-week variance of
/// `y`, and each later block adds the across-week variance of the within-day
/// increment `y(b) − y(b−1)`, so `σ²` is nondecreasing along the day.
/// `φ = median(y) + σ²/2`.
pub fn fit_model(series: &CountSeries, grid: &TimeGrid) -> Result<GridModel> {
    let nb = grid.blocks_per_day;
    let log_count = |b: usize, d: usize| series.get(b, d).map(|c| (c.max(1) as f64).ln());
    let mut phi = vec![vec![0.0; nb]; DAYS_PER_WEEK];
    let mut sigma2 = vec![vec![0.0; nb]; DAYS_PER_WEEK];
    for w in 0..DAYS_PER_WEEK {
        let days: Vec<usize> = (w..grid.days).step_by(DAYS_PER_WEEK).collect();
        let mut medians = vec![0.0; nb];
        for b in 0..nb {
            let mut ys: Vec<f64> = days.iter().filter_map(|&d| log_count(b, d)).collect();
            if ys.len() < MIN_WEEKS {
                return Err(Error::InsufficientData {
                    weekday: w + 1,
                    block: b + 1,
                    available: ys.len(),
                    required: MIN_WEEKS,
                });
            }
            ys.sort_by(f64::total_cmp);
            medians[b] = median(&ys);
            let var = if b == 0 {
                sample_variance(&ys)
            } else {
                let steps: Vec<f64> = days
                    .iter()
                    .filter_map(|&d| Some(log_count(b, d)? - log_count(b - 1, d)?))
                    .collect();
                if steps.len() < MIN_WEEKS {
                    return Err(Error::InsufficientData {
                        weekday: w + 1,
                        block: b + 1,
                        available: steps.len(),
                        required: MIN_WEEKS,
                    });
                }
                sigma2[w][b - 1] + sample_variance(&steps)
            };
            sigma2[w][b] = var;
        }
        for b in 0..nb {
            phi[w][b] = medians[b] + sigma2[w][b] / 2.0;
        }
    }
    Ok(GridModel {
        phi,
        sigma2,
        metadata: ModelMetadata {
            blocks_per_day: nb,
            seed: None,
            provenance: format!(
                "fitted from station `{}` over {} days ({} weeks)",
                series.station,
                grid.days,
                grid.weeks()
            ),
        },
    })
}

/// How the diffusion time is chosen for each window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TimePolicy {
    /// `t = ln 2 / λmax` of the window Laplacian.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub time: TimePolicy,
    pub delta: DeltaPolicy,
    pub variance: VarianceModel,
    pub layers: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            time: TimePolicy::Auto,
            delta: DeltaPolicy::default(),
            variance: VarianceModel::default(),
            layers: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DayVerdict {
    /// 0-based day.
    pub day: usize,
    pub t: f64,
    pub verdict: AnomalyVerdict,
    /// `|g_1|` on the day's own blocks.
    pub first_layer: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub grid: TimeGrid,
    pub layers: usize,
    /// One entry per day; `None` when the window had missing data.
    pub days: Vec<Option<DayVerdict>>,
}

impl ScanResult {
    pub fn flagged_days(&self) -> Vec<usize> {
        self.days
            .iter()
            .flatten()
            .filter(|v| v.verdict.is_anomalous())
            .map(|v| v.day)
            .collect()
    }

    /// Sum of the per-day Cantelli bounds over scored days.
    pub fn cantelli_budget(&self) -> f64 {
        self.days.iter().flatten().map(|v| v.verdict.p_bound).sum()
    }

    /// `|g_1|` as `blocks_per_day` rows × `days` columns; skipped days are zero.
    pub fn first_layer_grid(&self) -> Vec<Vec<f64>> {
        let mut grid = vec![vec![0.0; self.grid.days]; self.grid.blocks_per_day];
        for v in self.days.iter().flatten() {
            for (b, &x) in v.first_layer.iter().enumerate() {
                grid[b][v.day] = x;
            }
        }
        grid
    }

    /// `day,S_F,expected,U,delta,p_bound,flag,g1_norm,…,gK_norm` (1-based day).
    pub fn write_verdicts_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "day,S_F,expected,U,delta,p_bound,flag")?;
        for k in 1..=self.layers {
            write!(out, ",g{k}_norm")?;
        }
        writeln!(out)?;
        for v in self.days.iter().flatten() {
            let a = &v.verdict;
            write!(
                out,
                "{},{:.9e},{},{:.9e},{:.9e},{:.9e},{}",
                v.day + 1,
                a.statistic,
                a.expected,
                a.u,
                a.delta,
                a.p_bound,
                u8::from(a.is_anomalous())
            )?;
            for g in &a.layer_norms {
                write!(out, ",{g:.9e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Binary PGM (P5) of `|g_1|`: rows are blocks, columns are days, and
    /// darker pixels mean larger values (`255 − round(255·|g_1|/max)`).
    pub fn write_heatmap_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let grid = self.first_layer_grid();
        let max = grid.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
        let (rows, cols) = (self.grid.blocks_per_day, self.grid.days);
        write!(out, "P5\n{cols} {rows}\n255\n")?;
        let mut pixels = Vec::with_capacity(rows * cols);
        for row in &grid {
            for &x in row {
                let level = if max > 0.0 { (x / max).clamp(0.0, 1.0) } else { 0.0 };
                pixels.push(255 - (255.0 * level).round() as u8);
            }
        }
        out.write_all(&pixels)
    }
}

/// Which of the days `d−14, d−7, d, d+7, d+14` lie inside the grid.
fn window_shape(grid: &TimeGrid, day: usize) -> (usize, [bool; 5]) {
    let mut present = [false; 5];
    for (slot, offset) in [-14isize, -7, 0, 7, 14].into_iter().enumerate() {
        let other = day as isize + offset;
        present[slot] = other >= 0 && (other as usize) < grid.days;
    }
    (TimeGrid::weekday(day), present)
}

/// The data-independent part of one window: Laplacian, diffusion time and
/// variance figure. Windows with the same weekday and the same set of
/// in-grid weeks share one operator.
#[derive(Debug, Clone)]
pub struct WindowOperator {
    pub laplacian: SpectralLaplacian,
    pub t: f64,
    pub u: f64,
}

impl WindowOperator {
    pub fn build(grid: &TimeGrid, grid_graph: &DirectedGraph, walk: &WalkModel, day: usize, config: &ScanConfig) -> Result<Self> {
        let subset = build_day_window(grid, day).subset(grid_graph)?;
        let local_model = walk.restrict(&subset)?;
        let adapted = adapted_fields(&local_model, subset.local_graph())?;
        let laplacian = SpectralLaplacian::build(&adapted.graph, &adapted.fields)?;
        let t = match config.time {
            TimePolicy::Auto => default_time(&laplacian)?,
            TimePolicy::Fixed(t) => t,
        };
        let u = statistic_variance(&local_model, &adapted.graph, &adapted.fields, config.variance)?;
        Ok(Self { laplacian, t, u })
    }

    /// Scores `day`; `None` if any window vertex is missing.
    pub fn score(
        &self,
        grid: &TimeGrid,
        grid_graph: &DirectedGraph,
        signal: &[Option<f64>],
        day: usize,
        config: &ScanConfig,
    ) -> Result<Option<DayVerdict>> {
        let subset = build_day_window(grid, day).subset(grid_graph)?;
        if subset.local_graph().edges() != self.laplacian.graph().edges() {
            return Err(Error::Model(format!("window operator does not match day {}", day + 1)));
        }
        let mut f = Vec::with_capacity(subset.boundary_vertices().len());
        for &v in subset.boundary_vertices() {
            match signal[v] {
                Some(x) => f.push(x),
                None => return Ok(None),
            }
        }
        let filters = make_filters(&self.laplacian, self.t)?;
        let verdict = anomaly_test_with_variance(&filters, &f, self.u, config.delta, config.layers)?;
        let first_layer = (0..grid.blocks_per_day)
            .map(|b| {
                let local = subset.local_index(grid.vertex(b, day)).expect("day vertex in window");
                verdict.first_layer[local].abs()
            })
            .collect();
        Ok(Some(DayVerdict {
            day,
            t: self.t,
            verdict,
            first_layer,
        }))
    }
}

/// Scores one day through its own window. `None` if any window vertex is
/// missing.
pub fn score_day(
    grid: &TimeGrid,
    grid_graph: &DirectedGraph,
    walk: &WalkModel,
    signal: &[Option<f64>],
    day: usize,
    config: &ScanConfig,
) -> Result<Option<DayVerdict>> {
    WindowOperator::build(grid, grid_graph, walk, day, config)?.score(grid, grid_graph, signal, day, config)
}

/// Window operators for one grid and model, built once and reused across
/// count series.
#[derive(Debug)]
pub struct YearScanner {
    grid: TimeGrid,
    graph: DirectedGraph,
    config: ScanConfig,
    shapes: Vec<(usize, [bool; 5])>,
    operators: Vec<WindowOperator>,
}

impl YearScanner {
    /// Builds the distinct window operators in parallel.
    pub fn new(grid: TimeGrid, model: &GridModel, config: ScanConfig) -> Result<Self> {
        let walk = model.walk_model(&grid)?;
        let graph = build_grid_graph(&grid);
        let mut shapes = Vec::new();
        let mut representatives = Vec::new();
        for d in 0..grid.days {
            let shape = window_shape(&grid, d);
            if !shapes.contains(&shape) {
                shapes.push(shape);
                representatives.push(d);
            }
        }
        info!("{} distinct window operators", shapes.len());
        let operators = representatives
            .par_iter()
            .map(|&d| WindowOperator::build(&grid, &graph, &walk, d, &config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            graph,
            config,
            shapes,
            operators,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn operator(&self, day: usize) -> &WindowOperator {
        let shape = window_shape(&self.grid, day);
        let slot = self.shapes.iter().position(|s| *s == shape).expect("every shape has an operator");
        &self.operators[slot]
    }

    /// Scores every day of `series`, in parallel, in day order.
    pub fn scan(&self, series: &CountSeries) -> Result<ScanResult> {
        if series.grid() != &self.grid {
            return Err(Error::InvalidGrid("series grid differs from the scanner's grid".into()));
        }
        let signal = series.clamped_signal();
        let days = (0..self.grid.days)
            .into_par_iter()
            .map(|d| self.operator(d).score(&self.grid, &self.graph, &signal, d, &self.config))
            .collect::<Result<Vec<_>>>()?;
        for (d, v) in days.iter().enumerate() {
            if v.is_none() {
                warn!("day {} skipped: missing counts in its window", d + 1);
            }
        }
        Ok(ScanResult {
            grid: self.grid,
            layers: self.config.layers,
            days,
        })
    }
}

/// Scores every day of the series with a fresh [`YearScanner`].
pub fn scan_year(series: &CountSeries, model: &GridModel, config: &ScanConfig) -> Result<ScanResult> {
    YearScanner::new(*series.grid(), model, *config)?.scan(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::is_weakly_connected;

    #[test]
    fn grid_edge_counts() {
        let grid = TimeGrid::new(2, 14).unwrap();
        let g = build_grid_graph(&grid);
        assert_eq!(g.n_edges(), 28);
        assert_eq!(g.n_edges(), grid.expected_edge_count());
        // one component per weekday
        assert!(!is_weakly_connected(&g));
        assert!(g.respects_order());
        assert_eq!(TimeGrid::default().expected_edge_count(), 207_284);
    }

    #[test]
    fn grid_rejects_partial_weeks() {
        assert!(TimeGrid::new(4, 10).is_err());
        assert!(TimeGrid::new(0, 14).is_err());
    }

    #[test]
    fn window_sizes() {
        let grid = TimeGrid::new(2, 35).unwrap();
        assert_eq!(build_day_window(&grid, 14).len(), 9);
        let grid = TimeGrid::new(2, 28).unwrap();
        assert_eq!(build_day_window(&grid, 14).len(), 7);
        let grid = TimeGrid::new(288, 364).unwrap();
        let g = build_grid_graph(&grid);
        let w = build_day_window(&grid, 100);
        assert_eq!(w.len(), 1439);
        assert_eq!(w.subset(&g).unwrap().boundary_vertices().len(), 1440);
        let first = build_day_window(&grid, 0);
        assert_eq!(first.len(), 287 + 2 * 288);
        let last = build_day_window(&grid, 363);
        assert_eq!(last.len(), 287 + 2 * 288);
    }

    #[test]
    fn model_json_round_trip() {
        let model = GridModel::demo(6);
        let back = GridModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
        let mut broken = model.clone();
        broken.sigma2[2][3] = 0.0;
        assert!(GridModel::from_json(&broken.to_json().unwrap()).is_err());
        assert!(matches!(GridModel::from_json("{\"phi\": 3}"), Err(Error::Model(_))));
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let grid = TimeGrid::new(3, 7).unwrap();
        let mut series = simulate_counts(&GridModel::demo(3), &grid, 1, &[]).unwrap();
        series.set(1, 4, None);
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let back = CountSeries::read_csv(&buf[..], grid, None).unwrap();
        assert_eq!(back.as_slice(), series.as_slice());
        assert!(!back.day_complete(4));
        assert!(back.day_complete(3));
    }

    #[test]
    fn station_filter() {
        let grid = TimeGrid::new(1, 7).unwrap();
        let text = "station,day,block,count\nA,1,1,5\nB,1,1,9\nA,2,1,0\n";
        let s = CountSeries::read_csv(text.as_bytes(), grid, Some("B")).unwrap();
        assert_eq!(s.get(0, 0), Some(9));
        assert_eq!(s.get(0, 1), None);
        let s = CountSeries::read_csv(text.as_bytes(), grid, Some("A")).unwrap();
        assert_eq!(s.clamped_signal()[1], Some(1.0));
        assert!(CountSeries::read_csv(text.as_bytes(), grid, None).is_err());
    }

    #[test]
    fn csv_errors_report_rows() {
        let grid = TimeGrid::new(2, 7).unwrap();
        match CountSeries::read_csv("day,block,count\n1,1,4\n1,x,4\n".as_bytes(), grid, None) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match CountSeries::read_csv("day,block,count\n8,1,4\n".as_bytes(), grid, None) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(CountSeries::read_csv("a,b\n".as_bytes(), grid, None).is_err());
    }

    #[test]
    fn constant_counts_fit() {
        let grid = TimeGrid::new(3, 56).unwrap();
        let mut series = CountSeries::empty("c", grid);
        for d in 0..56 {
            for b in 0..3 {
                series.set(b, d, Some(if b == 2 { 0 } else { 25 }));
            }
        }
        let model = fit_model(&series, &grid).unwrap();
        for w in 0..7 {
            assert!(model.sigma2[w].iter().all(|&s| s == 0.0));
            assert!((model.phi[w][0] - 25f64.ln()).abs() < 1e-15);
            assert_eq!(model.phi[w][2], 0.0);
        }
    }

    #[test]
    fn fit_reports_thin_cells() {
        let grid = TimeGrid::new(2, 49).unwrap();
        let series = simulate_counts(&GridModel::demo(2), &grid, 5, &[]).unwrap();
        match fit_model(&series, &grid) {
            Err(Error::InsufficientData { available: 7, required: 8, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn injection_changes_one_day() {
        let grid = TimeGrid::new(4, 14).unwrap();
        let model = GridModel::demo(4);
        let base = simulate_counts(&model, &grid, 42, &[]).unwrap();
        let same = simulate_counts(&model, &grid, 42, &[Injection { day: 3, factor: 1.0 }]).unwrap();
        assert_eq!(base, same);
        let hit = simulate_counts(&model, &grid, 42, &[Injection { day: 3, factor: 5.0 }]).unwrap();
        let differing = base.as_slice().iter().zip(hit.as_slice()).filter(|(a, b)| a != b).count();
        assert_eq!(differing, 4);
    }

    #[test]
    fn heatmap_header_and_size() {
        let grid = TimeGrid::new(4, 28).unwrap();
        let model = GridModel::demo(4);
        let series = simulate_counts(&model, &grid, 9, &[]).unwrap();
        let scan = scan_year(&series, &model, &ScanConfig::default()).unwrap();
        let mut buf = Vec::new();
        scan.write_heatmap_pgm(&mut buf).unwrap();
        let header = b"P5\n28 4\n255\n";
        assert!(buf.starts_with(header));
        assert_eq!(buf.len(), header.len() + 4 * 28);
        // the largest value is drawn black
        assert!(buf[header.len()..].contains(&0));
    }

    #[test]
    fn missing_counts_skip_windows() {
        let grid = TimeGrid::new(3, 35).unwrap();
        let model = GridModel::demo(3);
        let mut series = simulate_counts(&model, &grid, 2, &[]).unwrap();
        series.set(0, 17, None);
        let scan = scan_year(&series, &model, &ScanConfig::default()).unwrap();
        for d in 0..35 {
            let touches = [3, 10, 17, 24, 31].contains(&d) && (d as isize - 17).abs() <= 14;
            assert_eq!(scan.days[d].is_none(), touches, "day {d}");
        }
    }

    #[test]
    fn cached_operators_match_direct_scoring() {
        let grid = TimeGrid::new(4, 42).unwrap();
        let model = GridModel::demo(4);
        let series = simulate_counts(&model, &grid, 3, &[Injection { day: 20, factor: 3.0 }]).unwrap();
        let config = ScanConfig::default();
        let scan = scan_year(&series, &model, &config).unwrap();
        let walk = model.walk_model(&grid).unwrap();
        let graph = build_grid_graph(&grid);
        let signal = series.clamped_signal();
        for d in [0, 6, 13, 20, 27, 41] {
            let direct = score_day(&grid, &graph, &walk, &signal, d, &config).unwrap().unwrap();
            let cached = scan.days[d].as_ref().unwrap();
            assert_eq!(direct.verdict.statistic, cached.verdict.statistic);
            assert_eq!(direct.verdict.layer_norms, cached.verdict.layer_norms);
            assert_eq!(direct.first_layer, cached.first_layer);
        }
    }
}
