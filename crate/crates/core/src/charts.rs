//! Strainer distance-map charts and their measured distortion, openness,
//! intrinsic/extrinsic comparison and quasigeodesic monotonicity checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{refuse, Error, Result};
use crate::kplane::{comparison_angle, DegenerateMode, KappaTriangle};
use crate::space::{Curve, MetricKind, PointId, Space, Subset};
use crate::strainers::Strainer;

/// Ratio statistics of `|f(x) − f(y)| / d(x, y)` over region pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    /// Maximum ratio over all pairs.
    pub lip: f64,
    /// Minimum ratio over all pairs.
    pub colip: f64,
    /// Extremes over pairs at distance at least `2h` (all pairs when no
    /// resolution is declared).
    pub max_ratio: Option<f64>,
    pub min_ratio: Option<f64>,
    /// `max |ratio − 1|` over the same resolved pairs.
    pub distortion: Option<f64>,
    /// Minimum, quartiles and maximum of the ratio over all pairs.
    pub quantiles: [f64; 5],
    pub pairs: usize,
    pub resolved_pairs: usize,
}

/// The distance map `f = (d(a_1, ·), …, d(a_k, ·))` of a strainer on the
/// subset points near its base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub strainer: Strainer,
    pub radius: f64,
    pub region: Vec<PointId>,
    /// `values[i]` is `f(region[i])`.
    pub values: Vec<Vec<f64>>,
    pub extrinsic: RatioStats,
    pub intrinsic: RatioStats,
}

impl Chart {
    pub fn k(&self) -> usize {
        self.strainer.k()
    }

    pub fn stats(&self, metric: MetricKind) -> &RatioStats {
        match metric {
            MetricKind::Extrinsic => &self.extrinsic,
            MetricKind::Intrinsic => &self.intrinsic,
        }
    }
}

/// Default chart radius `ℓδ`.
pub fn default_chart_radius(ell: f64, delta: f64) -> f64 {
    ell * delta
}

fn chart_value(space: &Space, strainer: &Strainer, x: PointId) -> Vec<f64> {
    strainer.pairs.iter().map(|&(a, _)| space.dist(a, x)).collect()
}

fn gap(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn ratio_stats(values: &[Vec<f64>], dist: impl Fn(usize, usize) -> f64, min_resolved: f64) -> RatioStats {
    let n = values.len();
    let mut ratios = Vec::with_capacity(n * (n - 1) / 2);
    let (mut max_r, mut min_r) = (None::<f64>, None::<f64>);
    let mut resolved = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(i, j);
            if !(d > 0.0) || !d.is_finite() {
                continue;
            }
            let r = gap(&values[i], &values[j]) / d;
            ratios.push(r);
            if d >= min_resolved {
                resolved += 1;
                max_r = Some(max_r.map_or(r, |m| m.max(r)));
                min_r = Some(min_r.map_or(r, |m| m.min(r)));
            }
        }
    }
    ratios.sort_by(f64::total_cmp);
    let quantiles = if ratios.is_empty() {
        [f64::NAN; 5]
    } else {
        [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile(&ratios, q))
    };
    RatioStats {
        lip: quantiles[4],
        colip: quantiles[0],
        max_ratio: max_r,
        min_ratio: min_r,
        distortion: max_r.zip(min_r).map(|(hi, lo)| (hi - 1.0).max(1.0 - lo)),
        quantiles,
        pairs: ratios.len(),
        resolved_pairs: resolved,
    }
}

/// Chart of `strainer` on `subset ∩ B(base, radius)`, with ratio statistics
/// in the extrinsic and intrinsic metrics.
pub fn build_chart(subset: &Subset, strainer: &Strainer, radius: f64) -> Result<Chart> {
    let space = subset.space();
    if strainer.k() == 0 {
        return Err(Error::Invalid("a chart needs at least one strainer pair".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("chart radius must be positive, got {radius}")));
    }
    let p = strainer.base;
    space.check_id(p)?;
    let region: Vec<PointId> = subset
        .indices()
        .iter()
        .copied()
        .filter(|&x| space.dist(p, x) < radius)
        .collect();
    if region.len() < 2 {
        return Err(Error::Invalid(format!(
            "chart region around {p} of radius {radius} has fewer than 2 points"
        )));
    }
    let values: Vec<Vec<f64>> = region.iter().map(|&x| chart_value(space, strainer, x)).collect();
    let min_resolved = 2.0 * space.resolution.unwrap_or(0.0);
    let extrinsic = ratio_stats(&values, |i, j| space.dist(region[i], region[j]), min_resolved);
    let rows: Vec<&[f64]> = region
        .iter()
        .map(|&x| subset.intrinsic_row(x))
        .collect::<Result<_>>()?;
    let local: Vec<usize> = region
        .iter()
        .map(|x| subset.indices().binary_search(x).expect("region lies in the subset"))
        .collect();
    let intrinsic = ratio_stats(&values, |i, j| rows[i][local[j]], min_resolved);
    Ok(Chart {
        strainer: strainer.clone(),
        radius,
        region,
        values,
        extrinsic,
        intrinsic,
    })
}

/// Deterministic directions on `S^{k−1}`: `±1` for k = 1, `grid` equal
/// angles for k = 2, a Fibonacci spiral of `grid` points for k = 3.
pub fn direction_grid(k: usize, grid: usize) -> Result<Vec<Vec<f64>>> {
    match k {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..grid)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / grid as f64;
                vec![t.cos(), t.sin()]
            })
            .collect()),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..grid)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / grid as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::Invalid(format!("direction grids exist for k <= 3, got k = {k}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpennessReport {
    /// Largest over evaluation points `x` and directions `ξ` of
    /// `min_q |(f(q) − f(x)) / d(x, q) − ξ|`.
    pub eps_open: f64,
    /// Evaluation point and direction realizing `eps_open`.
    pub worst: Option<(PointId, Vec<f64>)>,
    pub evaluated: usize,
    pub directions: usize,
}

/// Empirical openness defect of a chart. Evaluation points are region
/// points within half the chart radius of the base, so that every direction
/// has room inside the region; `q` ranges over the whole region.
pub fn openness_measure(space: &Space, chart: &Chart, grid: usize) -> Result<OpennessReport> {
    openness_of_values(
        space,
        chart.strainer.base,
        chart.radius,
        &chart.region,
        &chart.values,
        grid,
    )
}

pub(crate) fn openness_of_values(
    space: &Space,
    base: PointId,
    radius: f64,
    region: &[PointId],
    values: &[Vec<f64>],
    grid: usize,
) -> Result<OpennessReport> {
    let k = values.first().map_or(0, Vec::len);
    if k >= 2 && grid < 8 {
        return Err(Error::Invalid(format!("direction grid needs at least 8 directions, got {grid}")));
    }
    let dirs = direction_grid(k, grid)?;
    let mut report = OpennessReport {
        eps_open: 0.0,
        worst: None,
        evaluated: 0,
        directions: dirs.len(),
    };
    for (i, &x) in region.iter().enumerate() {
        if space.dist(base, x) > 0.5 * radius {
            continue;
        }
        let quotients: Vec<Vec<f64>> = region
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .filter_map(|(j, &q)| {
                let d = space.dist(x, q);
                (d > 0.0).then(|| values[j].iter().zip(&values[i]).map(|(a, b)| (a - b) / d).collect())
            })
            .collect();
        if quotients.is_empty() {
            continue;
        }
        report.evaluated += 1;
        for xi in &dirs {
            let best = quotients
                .iter()
                .map(|u| gap(u, xi))
                .fold(f64::INFINITY, f64::min);
            if report.worst.is_none() || best > report.eps_open {
                report.eps_open = best;
                report.worst = Some((x, xi.clone()));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub max_ratio: f64,
    pub argmax: Option<(PointId, PointId)>,
    pub pairs: usize,
}

/// Largest `d_E(x, y) / d(x, y)` over `x, y ∈ E ∩ B(p, radius)`.
pub fn metric_comparison(subset: &Subset, p: PointId, radius: f64) -> Result<MetricComparison> {
    let space = subset.space();
    space.check_id(p)?;
    if let Some(h) = space.resolution {
        if radius < 4.0 * h * (1.0 - 1e-9) {
            return refuse(format!("radius {radius} is below four sampling pitches ({h})"));
        }
    }
    let near: Vec<PointId> = subset
        .indices()
        .iter()
        .copied()
        .filter(|&x| space.dist(p, x) < radius)
        .collect();
    let mut out = MetricComparison {
        max_ratio: 1.0,
        argmax: None,
        pairs: 0,
    };
    for (i, &x) in near.iter().enumerate() {
        let row = subset.intrinsic_row(x)?;
        for &y in &near[i + 1..] {
            let d = space.dist(x, y);
            let de = row[subset.indices().binary_search(&y).expect("y is in the subset")];
            let r = de / d;
            out.pairs += 1;
            if r > out.max_ratio || out.argmax.is_none() {
                out.max_ratio = r;
                out.argmax = Some((x, y));
            }
        }
    }
    Ok(out)
}

/// Witness approximation of the angle at `x` between an ambient and an
/// intrinsic shortest path to `y`: the comparison angle between the sample
/// point nearest to distance `radius` along each path. The ambient path
/// point minimizes `|d(x,w) − radius| + |d(w,y) − (d(x,y) − radius)|`.
pub fn geodesic_direction_gap(subset: &Subset, x: PointId, y: PointId, radius: f64) -> Result<f64> {
    let space = subset.space();
    let path = subset
        .intrinsic_path(x, y)?
        .ok_or_else(|| Error::Invalid(format!("{x} and {y} lie in different components")))?;
    let dxy = space.dist(x, y);
    if !(radius > 0.0 && radius < dxy) {
        return Err(Error::Invalid(format!("radius must lie in (0, {dxy}), got {radius}")));
    }
    let mut arc = 0.0;
    let mut inner = path[path.len() - 1];
    for w in path.windows(2) {
        arc += space.dist(w[0], w[1]);
        if arc >= radius {
            inner = w[1];
            break;
        }
    }
    let outer = space
        .ids()
        .filter(|&w| w != x)
        .min_by(|&a, &b| {
            let score = |w: PointId| (space.dist(x, w) - radius).abs() + (space.dist(w, y) - (dxy - radius)).abs();
            score(a).total_cmp(&score(b))
        })
        .expect("space has more than one point");
    if inner == outer {
        return Ok(0.0);
    }
    space.angle_at(x, inner, outer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasigeodesicReport {
    /// Largest increase of `τ ↦ ∠̃ p γ(t) ⌣ γ(t+τ)` over its running minimum.
    pub max_violation: f64,
    /// `(t index, t+τ index)` realizing it.
    pub worst: Option<(usize, usize)>,
    pub triples: usize,
}

/// Checks that for every `t` the comparison angle at `γ(t)` between `p` and
/// `γ(t+τ)` (sides `|pγ(t)|`, `τ`, `|pγ(t+τ)|`, zero convention) is
/// nonincreasing in `τ`. `τ` is arc length along the path.
pub fn quasigeodesic_check(space: &Space, path: &Curve, p: PointId) -> Result<QuasigeodesicReport> {
    space.check_id(p)?;
    for &x in &path.points {
        space.check_id(x)?;
    }
    if path.points.contains(&p) {
        return Err(Error::Invalid(format!("viewpoint {p} lies on the path")));
    }
    let gaps = path.gaps(space);
    if let Some((i, g)) = gaps
        .iter()
        .enumerate()
        .find(|(_, &g)| (g - path.step).abs() > 0.2 * path.step)
    {
        return Err(Error::Invalid(format!(
            "path gap {g} after point {i} is not within 20% of the step {}",
            path.step
        )));
    }
    let arc = path.arc_lengths(space);
    let limit = if space.kappa > 0.0 {
        PI / space.kappa.sqrt()
    } else {
        f64::INFINITY
    };
    let n = path.points.len();
    let mut report = QuasigeodesicReport {
        max_violation: 0.0,
        worst: None,
        triples: 0,
    };
    for t in 0..n {
        let x = path.points[t];
        let dpx = space.dist(p, x);
        let mut running = f64::INFINITY;
        for u in t + 1..n {
            let tau = arc[u] - arc[t];
            if tau > limit {
                break;
            }
            let tri = KappaTriangle::new(space.kappa, dpx, tau, space.dist(p, path.points[u]));
            let a = comparison_angle(tri, DegenerateMode::Zero)?;
            report.triples += 1;
            if a - running > report.max_violation {
                report.max_violation = a - running;
                report.worst = Some((t, u));
            }
            running = running.min(a);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub metric: MetricKind,
    pub distortions: Vec<f64>,
    pub nonincreasing: bool,
    pub strictly_decreasing: bool,
    /// Every member is already at distortion ≤ 1e-9 (flat case).
    pub saturated: bool,
    /// The last member retains more than half of the first member's
    /// distortion: no convergence toward an isometry.
    pub stalled: bool,
}

/// Distortion sequence along a family of charts ordered by refinement.
pub fn distortion_trend(family: &[Chart], metric: MetricKind) -> Result<TrendReport> {
    if family.len() < 3 {
        return Err(Error::Invalid(format!(
            "a trend needs at least 3 charts, got {}",
            family.len()
        )));
    }
    let distortions: Vec<f64> = family
        .iter()
        .map(|c| c.stats(metric).distortion.unwrap_or(f64::NAN))
        .collect();
    if distortions.iter().any(|d| d.is_nan()) {
        return Err(Error::Invalid("a chart has no resolved pairs".into()));
    }
    let saturated = distortions.iter().all(|&d| d <= 1e-9);
    let first = distortions[0];
    let last = *distortions.last().unwrap();
    Ok(TrendReport {
        metric,
        nonincreasing: distortions.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        strictly_decreasing: distortions.windows(2).all(|w| w[1] < w[0]),
        saturated,
        stalled: !saturated && last > 0.5 * first,
        distortions,
    })
}
