//! Summary CSVs, log-log slope fits with a seed bootstrap, and controller
//! comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::mean_stderr;
use crate::rng;

pub const SUMMARY_HEADER: [&str; 6] = ["controller", "T", "seed", "R_T", "R_T_avg", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub controller: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    #[serde(rename = "R_T")]
    pub r_t: f64,
    #[serde(rename = "R_T_avg")]
    pub r_t_avg: f64,
    pub wall_ms: u128,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.controller.clone(),
            r.horizon.to_string(),
            r.seed.to_string(),
            r.r_t.to_string(),
            r.r_t_avg.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header {:?}, found {header:?}",
            path.display(),
            SUMMARY_HEADER
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Which regret column a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `R_T = Σ c(x_t, u_t) − T·J*`.
    Realized,
    /// `R_T^avg = Σ C(M_t) − T·J*`.
    Average,
}

impl Metric {
    fn of(self, row: &SummaryRow) -> f64 {
        match self {
            Metric::Realized => row.r_t,
            Metric::Average => row.r_t_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeOptions {
    pub metric: Metric,
    pub resamples: usize,
    pub min_horizons: usize,
    pub min_seeds: usize,
    pub seed: u64,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        Self { metric: Metric::Realized, resamples: 1000, min_horizons: 3, min_seeds: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub controller: String,
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile interval from the seed bootstrap.
    pub ci: (f64, f64),
    /// `(T, mean regret, seeds)` of the horizons used in the fit.
    pub points: Vec<(usize, f64, usize)>,
    /// Horizons dropped because their mean regret was not positive.
    pub excluded: Vec<usize>,
}

/// Ordinary least squares of `y` on `x`: `(slope, intercept)`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Fit of `ln mean R_T` on `ln T` over the controller's rows, with a bootstrap
/// interval that resamples whole seeds.
pub fn fit_slope(rows: &[SummaryRow], controller: &str, opts: &SlopeOptions) -> Result<SlopeFit> {
    // horizon -> seed -> value
    let mut table: BTreeMap<usize, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.controller == controller) {
        table.entry(r.horizon).or_default().insert(r.seed, opts.metric.of(r));
    }
    if table.len() < opts.min_horizons {
        return Err(Error::InvalidArgument(format!(
            "`{controller}` has {} distinct horizons; at least {} needed",
            table.len(),
            opts.min_horizons
        )));
    }
    if let Some((t, s)) = table.iter().find(|(_, s)| s.len() < opts.min_seeds) {
        return Err(Error::InvalidArgument(format!(
            "`{controller}` has {} seeds at T={t}; at least {} needed",
            s.len(),
            opts.min_seeds
        )));
    }
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (&t, seeds) in &table {
        let mean = seeds.values().sum::<f64>() / seeds.len() as f64;
        if mean > 0.0 {
            points.push((t, mean, seeds.len()));
        } else {
            log::warn!("{controller}: mean regret {mean} at T={t} is not positive; horizon excluded from the fit");
            excluded.push(t);
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = ols(&xs, &ys).ok_or_else(|| {
        Error::InvalidArgument(format!("`{controller}`: fewer than two horizons with positive mean regret"))
    })?;

    let all_seeds: Vec<u64> = table.values().flat_map(|s| s.keys().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut r = rng::stream(opts.seed, &[rng::label::BOOTSTRAP]);
    let mut slopes = Vec::with_capacity(opts.resamples);
    for _ in 0..opts.resamples {
        let draw: Vec<u64> = (0..all_seeds.len()).map(|_| all_seeds[r.random_range(0..all_seeds.len())]).collect();
        let (mut bx, mut by) = (Vec::new(), Vec::new());
        for (&t, seeds) in &table {
            let vals: Vec<f64> = draw.iter().filter_map(|s| seeds.get(s).copied()).collect();
            if vals.is_empty() {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if mean > 0.0 {
                bx.push((t as f64).ln());
                by.push(mean.ln());
            }
        }
        if let Some((s, _)) = ols(&bx, &by) {
            slopes.push(s);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let ci = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    };
    Ok(SlopeFit { controller: controller.to_string(), slope, intercept, ci, points, excluded })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonCell {
    pub controller: String,
    pub horizon: usize,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

/// Mean ± stderr of `R_T` per controller and horizon, and pairwise win rates
/// over matched `(T, seed)` cells (ties count one half).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub controllers: Vec<String>,
    pub horizons: Vec<usize>,
    pub cells: Vec<ComparisonCell>,
    /// `win_rate[i][j]`: fraction of matched cells where controller `i` has
    /// lower regret than `j`; `None` when they share no cell.
    pub win_rate: Vec<Vec<Option<f64>>>,
    pub matched: Vec<Vec<usize>>,
}

pub fn compare(rows: &[SummaryRow], metric: Metric) -> Comparison {
    let mut controllers: Vec<String> = Vec::new();
    for r in rows {
        if !controllers.contains(&r.controller) {
            controllers.push(r.controller.clone());
        }
    }
    let mut values: BTreeMap<(usize, usize, u64), f64> = BTreeMap::new();
    for r in rows {
        let ci = controllers.iter().position(|c| *c == r.controller).expect("listed above");
        if values.insert((ci, r.horizon, r.seed), metric.of(r)).is_some() {
            log::warn!("duplicate row for {} T={} seed={}; keeping the last", r.controller, r.horizon, r.seed);
        }
    }
    let horizons: Vec<usize> = values.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
    let mut cells = Vec::new();
    for (ci, name) in controllers.iter().enumerate() {
        for &t in &horizons {
            let v: Vec<f64> = values.range((ci, t, 0)..=(ci, t, u64::MAX)).map(|(_, v)| *v).collect();
            if v.is_empty() {
                continue;
            }
            let (mean, stderr) = mean_stderr(&v);
            cells.push(ComparisonCell { controller: name.clone(), horizon: t, mean, stderr, seeds: v.len() });
        }
    }
    let n = controllers.len();
    let mut win_rate = vec![vec![None; n]; n];
    let mut matched = vec![vec![0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (mut wins, mut count) = (0.0, 0usize);
            for (&(ci, t, s), &vi) in values.range((i, 0, 0)..=(i, usize::MAX, u64::MAX)) {
                debug_assert_eq!(ci, i);
                if let Some(&vj) = values.get(&(j, t, s)) {
                    count += 1;
                    if vi < vj {
                        wins += 1.0;
                    } else if vi == vj {
                        wins += 0.5;
                    }
                }
            }
            matched[i][j] = count;
            if count > 0 {
                win_rate[i][j] = Some(wins / count as f64);
            }
        }
    }
    Comparison { controllers, horizons, cells, win_rate, matched }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.cells.is_empty() {
            out.push_str("(no rows)\n");
            return out;
        }
        let width = self.controllers.iter().map(String::len).max().unwrap_or(0).max(10);
        let _ = write!(out, "{:>8}", "T");
        for c in &self.controllers {
            let _ = write!(out, "  {c:>w$}", w = width + 12);
        }
        out.push('\n');
        for &t in &self.horizons {
            let _ = write!(out, "{t:>8}");
            for c in &self.controllers {
                match self.cells.iter().find(|x| x.horizon == t && &x.controller == c) {
                    Some(x) => {
                        let _ = write!(out, "  {:>w$}", format!("{:.2} ± {:.2}", x.mean, x.stderr), w = width + 12);
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "-", w = width + 12);
                    }
                }
            }
            out.push('\n');
        }
        out.push_str("\nwin rate (row beats column)\n");
        let _ = write!(out, "{:>w$}", "", w = width);
        for c in &self.controllers {
            let _ = write!(out, "  {c:>w$}", w = width);
        }
        out.push('\n');
        for (i, c) in self.controllers.iter().enumerate() {
            let _ = write!(out, "{c:>w$}", w = width);
            for j in 0..self.controllers.len() {
                let cell = match self.win_rate[i][j] {
                    Some(v) => format!("{v:.3}"),
                    None => "-".to_string(),
                };
                let _ = write!(out, "  {cell:>w$}", w = width);
            }
            out.push('\n');
        }
        out
    }

    /// Long format: `controller,T,seeds,mean,stderr`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["controller", "T", "seeds", "mean", "stderr"])?;
        for c in &self.cells {
            w.write_record([
                c.controller.clone(),
                c.horizon.to_string(),
                c.seeds.to_string(),
                c.mean.to_string(),
                c.stderr.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
