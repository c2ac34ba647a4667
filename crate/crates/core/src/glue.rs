//! Gluing local strainer charts: discrete nets, the bump-function blend that
//! produces a projection from a collar onto an extremal subset, the
//! cross-space almost isometry and the volume-convergence harness.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::openness_of_values;
use crate::error::{refuse, Error, Result};
use crate::models::GeneratorSpec;
use crate::space::{
    greedy_packing, hausdorff_measure_estimate, MetricKind, PointId, Separation, Space, Subset, DEFAULT_SEED,
};
use crate::strainers::{classify_with, default_search_radius, is_strainer, strainer_margin, SearchOptions, Strainer};

// ---------------------------------------------------------------------------
// nets and bumps

/// Greedy maximal `r/2`-discrete subset of `ids` (pairwise distances
/// `> r/2`), scanned in the given order.
fn net_of(space: &Space, ids: &[PointId], r: f64) -> Result<Vec<PointId>> {
    let net = greedy_packing(ids, 0.5 * r, Separation::Strict, |a, b| space.dist(a, b));
    let uncovered = ids
        .par_iter()
        .find_any(|&&x| net.iter().all(|&p| space.dist(x, p) > 0.5 * r));
    match uncovered {
        Some(x) => Err(Error::Invalid(format!("net is not maximal: point {x} is uncovered"))),
        None => Ok(net),
    }
}

/// Maximal `r/2`-discrete net of the subset in id order.
pub fn discrete_net(subset: &Subset, r: f64) -> Result<Vec<PointId>> {
    let h = subset.space().resolution.unwrap_or(0.0);
    if !(r > 0.0) {
        return Err(Error::Invalid(format!("net scale must be positive, got {r}")));
    }
    if r < 4.0 * h * (1.0 - 1e-9) {
        return refuse(format!("net scale {r} is below four times the resolution {h}"));
    }
    net_of(subset.space(), subset.indices(), r)
}

/// Smoothstep cut-off: 1 on `[0, 1]`, 0 on `[2, ∞)`, `1 − 3s² + 2s³` with
/// `s = t − 1` in between.
pub fn bump(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t >= 2.0 {
        0.0
    } else {
        let s = t - 1.0;
        1.0 - 3.0 * s * s + 2.0 * s * s * s
    }
}

// ---------------------------------------------------------------------------
// chart lookups shared by the projection and the cross-space map

fn norm_gap(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn distances_from(space: &Space, anchors: &[PointId], x: PointId) -> Vec<f64> {
    anchors.iter().map(|&a| space.dist(a, x)).collect()
}

/// Sampled inverse of a distance map: candidates with their values.
struct Lookup {
    ids: Vec<PointId>,
    values: Vec<Vec<f64>>,
}

impl Lookup {
    fn new(space: &Space, anchors: &[PointId], ids: Vec<PointId>) -> Self {
        let values = ids.iter().map(|&y| distances_from(space, anchors, y)).collect();
        Self { ids, values }
    }

    /// Candidate whose value is nearest to `v` (lowest id on ties), with the
    /// value gap.
    fn invert(&self, v: &[f64]) -> (PointId, f64) {
        let mut best = (self.ids[0], f64::INFINITY);
        for (&y, val) in self.ids.iter().zip(&self.values) {
            let g = norm_gap(val, v);
            if g < best.1 {
                best = (y, g);
            }
        }
        best
    }
}

/// Order in which charts enter the inductive blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ChartOrder {
    /// Net order (ascending id of the net points).
    #[default]
    Net,
    /// A seeded permutation of the net, to measure order sensitivity.
    Shuffled { seed: u64 },
}

impl ChartOrder {
    fn permutation(self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if let ChartOrder::Shuffled { seed } = self {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }
}

/// Convex combination `(1 − χ) prev + χ next`.
fn blend_values(prev: &[f64], next: &[f64], chi: f64) -> Vec<f64> {
    prev.iter().zip(next).map(|(p, q)| (1.0 - chi) * p + chi * q).collect()
}

/// One blend step: `f ← ψ⁻¹((1 − χ) ψ∘f + χ φ)` on `2U`, `f ← ψ⁻¹∘φ` on
/// `U`. `image_space` hosts `f`; `phi(i)` is the chart value of the i-th
/// domain point; `psi` holds the target chart. Returns ids whose blend
/// target misses the lookup's values by more than `slack`.
#[allow(clippy::too_many_arguments)]
fn blend_step(
    domain_space: &Space,
    image_space: &Space,
    base: PointId,
    r: f64,
    domain: &[PointId],
    phi: impl Fn(PointId) -> Vec<f64> + Sync,
    image_anchors: &[PointId],
    psi: &Lookup,
    slack: f64,
    assignment: &mut [Option<PointId>],
) -> Vec<PointId> {
    let updates: Vec<(usize, PointId, bool)> = domain
        .par_iter()
        .enumerate()
        .filter_map(|(i, &x)| {
            let t = domain_space.dist(base, x) / r;
            if t >= 2.0 {
                return None;
            }
            let phi_x = phi(x);
            let target = if t < 1.0 {
                phi_x
            } else {
                let prev = assignment[i]?;
                let psi_prev = distances_from(image_space, image_anchors, prev);
                blend_values(&psi_prev, &phi_x, bump(t))
            };
            let (y, miss) = psi.invert(&target);
            Some((i, y, miss > slack))
        })
        .collect();
    let mut flagged = Vec::new();
    for (i, y, flag) in updates {
        assignment[i] = Some(y);
        if flag {
            flagged.push(domain[i]);
        }
    }
    flagged
}

// ---------------------------------------------------------------------------
// projection onto an extremal subset

/// Strainer at a net point with its points pulled in to distance `ℓδ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalChart {
    pub base: PointId,
    pub strainer: Strainer,
    /// Pairs re-based at distance `ℓδ` along sampled shortest paths.
    pub pairs: Vec<(PointId, PointId)>,
    /// Strainer margin of the re-based pairs.
    pub margin: f64,
}

impl LocalChart {
    /// Points whose distance functions form the chart.
    pub fn anchors(&self) -> Vec<PointId> {
        self.pairs.iter().map(|&(a, _)| a).collect()
    }
}

/// Tuning of [`build_projection_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlueOptions {
    pub order: ChartOrder,
    /// Search radius for strainers; `None` uses the strainer default `3ℓ`.
    pub search_radius: Option<f64>,
    pub search: SearchOptions,
}

impl Default for GlueOptions {
    fn default() -> Self {
        Self {
            order: ChartOrder::Net,
            search_radius: None,
            search: SearchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlueMap {
    pub m: usize,
    pub delta: f64,
    pub ell: f64,
    pub r: f64,
    pub rho: f64,
    /// Points of the target subset `E`.
    pub target: Vec<PointId>,
    pub net: Vec<PointId>,
    /// One chart per net point, in net order.
    pub charts: Vec<LocalChart>,
    /// Chart indices in blend order.
    pub order: Vec<usize>,
    /// Sampled `U_ρ(E)`, ascending ids.
    pub domain: Vec<PointId>,
    /// `d(x, E)` for each domain point.
    pub depth: Vec<f64>,
    /// Image in `E` of each domain point.
    pub assignment: Vec<PointId>,
    /// Domain points whose blend target left the chart's value range.
    pub flagged: Vec<PointId>,
    pub warnings: Vec<String>,
}

impl GlueMap {
    pub fn image_of(&self, x: PointId) -> Option<PointId> {
        self.domain.binary_search(&x).ok().map(|i| self.assignment[i])
    }
}

/// Point on a sampled shortest path from `p` to `target` at distance
/// closest to `len` from `p`. Path points are those whose detour
/// `d(p, y) + d(y, target) − d(p, target)` is at most `tol`.
fn rebase(space: &Space, p: PointId, target: PointId, len: f64, tol: f64) -> PointId {
    let total = space.dist(p, target);
    let mut best = (target, f64::INFINITY);
    for y in space.ids() {
        if y == p {
            continue;
        }
        let dy = space.dist(p, y);
        if dy + space.dist(y, target) - total > tol {
            continue;
        }
        let miss = (dy - len).abs();
        if miss < best.1 {
            best = (y, miss);
        }
    }
    best.0
}

fn lookup_region(subset: &Subset, center: PointId, radius: f64) -> Vec<PointId> {
    let space = subset.space();
    subset
        .indices()
        .iter()
        .copied()
        .filter(|&y| space.dist(center, y) < radius)
        .collect()
}

/// Radius of the `ψ⁻¹` lookup around a net point.
fn lookup_radius(r: f64, rho: f64) -> f64 {
    3.0 * r + 2.0 * rho
}

/// Projection `U_ρ(E) → E` glued from local strainer charts.
pub fn build_projection(subset: &Subset, m: usize, delta: f64, ell: f64, r: f64, rho: Option<f64>) -> Result<GlueMap> {
    build_projection_with(subset, m, delta, ell, r, rho, GlueOptions::default())
}

pub fn build_projection_with(
    subset: &Subset,
    m: usize,
    delta: f64,
    ell: f64,
    r: f64,
    rho: Option<f64>,
    opts: GlueOptions,
) -> Result<GlueMap> {
    let space = subset.space();
    let h = space.resolution.unwrap_or(0.0);
    let rho = rho.unwrap_or(r / 10.0);
    if m == 0 {
        return Err(Error::Invalid("the projection needs m >= 1".into()));
    }
    if !(delta > 0.0 && ell > 0.0 && rho > 0.0) {
        return Err(Error::Invalid("delta, ell and rho must be positive".into()));
    }
    if (3.0 + 2.0 * (m as f64).sqrt()) * rho >= r {
        return refuse(format!("collar width {rho} violates (3 + 2 sqrt(m)) rho < r = {r}"));
    }
    let mut warnings = Vec::new();
    if r >= ell * delta * delta {
        warnings.push(format!("r = {r} is not below ell delta^2 = {}", ell * delta * delta));
    }
    let reach = ell * delta;
    if lookup_radius(r, rho) >= reach {
        warnings.push(format!(
            "lookup radius {} reaches the re-based strainer distance {reach}",
            lookup_radius(r, rho)
        ));
    }

    let search_radius = opts.search_radius.unwrap_or_else(|| default_search_radius(ell));
    let mask = classify_with(subset, m, delta, ell, search_radius, opts.search)?;
    if mask.member_ids.len() < subset.len() {
        let missing: Vec<PointId> = subset.indices().iter().copied().filter(|&p| !mask.contains(p)).collect();
        let shown: Vec<String> = missing.iter().take(20).map(ToString::to_string).collect();
        return refuse(format!(
            "{} subset points are not ({m},{delta})-strained with length > {ell}: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        ));
    }

    let net = discrete_net(subset, r)?;
    let tol = if h > 0.0 { h } else { 1e-9 };
    let charts: Vec<LocalChart> = net
        .par_iter()
        .map(|&p| {
            let idx = mask.member_ids.binary_search(&p).expect("every subset point is strained");
            let strainer = mask.witnesses[idx].clone();
            let pairs: Vec<(PointId, PointId)> = strainer
                .pairs
                .iter()
                .map(|&(a, b)| (rebase(space, p, a, reach, tol), rebase(space, p, b, reach, tol)))
                .collect();
            let margin = strainer_margin(space, p, &pairs)?;
            if !(margin < delta) {
                return refuse(format!(
                    "strainer at net point {p} loses its ({m},{delta}) margin when re-based: {margin}"
                ));
            }
            Ok(LocalChart {
                base: p,
                strainer,
                pairs,
                margin,
            })
        })
        .collect::<Result<_>>()?;

    let depth_all: Vec<f64> = space.ids().into_par_iter().map(|x| subset.dist_to(x)).collect();
    let domain: Vec<PointId> = space.ids().filter(|&x| depth_all[x] < rho).collect();
    let depth: Vec<f64> = domain.iter().map(|&x| depth_all[x]).collect();

    let order = opts.order.permutation(charts.len());
    let slack = delta * r;
    let mut assignment: Vec<Option<PointId>> = vec![None; domain.len()];
    let mut flagged = Vec::new();
    for &k in &order {
        let chart = &charts[k];
        let anchors = chart.anchors();
        let psi = Lookup::new(space, &anchors, lookup_region(subset, chart.base, lookup_radius(r, rho)));
        flagged.extend(blend_step(
            space,
            space,
            chart.base,
            r,
            &domain,
            |x| distances_from(space, &anchors, x),
            &anchors,
            &psi,
            slack,
            &mut assignment,
        ));
    }
    flagged.sort_unstable();
    flagged.dedup();
    let assignment = domain
        .iter()
        .zip(assignment)
        .map(|(&x, a)| a.ok_or_else(|| Error::Invalid(format!("domain point {x} is outside every chart"))))
        .collect::<Result<_>>()?;

    Ok(GlueMap {
        m,
        delta,
        ell,
        r,
        rho,
        target: subset.indices().to_vec(),
        net,
        charts,
        order,
        domain,
        depth,
        assignment,
        flagged,
        warnings,
    })
}

/// Empirical checks of a glued projection. Pair statistics use pairs at
/// distance at least `r` inside a common `3U_j`, where sampling error is
/// small against the pair distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionQuality {
    /// `f(e) = e` for every sampled `e ∈ E`.
    pub identity_on_target: bool,
    pub identity_violations: usize,
    /// Largest `d(x, f(x)) / d(x, E)` over domain points off `E`.
    pub displacement_ratio_max: f64,
    /// Domain points with `d(x, f(x)) ≥ 2 d(x, E) + 4h`.
    pub displacement_violations: Vec<PointId>,
    pub lip: f64,
    /// `1 − eps_open`.
    pub colip: f64,
    /// Largest openness defect of `ψ_j ∘ f` over charts.
    pub eps_open: f64,
    /// Largest `d(ψ_j⁻¹∘φ_j(x), f(x)) / r` over `x ∈ 3U_j`.
    pub local_agreement: f64,
    /// Largest `|(φ_j(x) − φ_j(y)) − (ψ_j f(x) − ψ_j f(y))| / d(x, y)`.
    pub blend_defect: f64,
    pub pairs: usize,
}

/// Quality report of a projection built on `subset`.
pub fn projection_quality(subset: &Subset, map: &GlueMap, grid: usize) -> Result<ProjectionQuality> {
    let space = subset.space();
    if map.target != subset.indices() {
        return Err(Error::Invalid("map was built for a different subset".into()));
    }
    let h = space.resolution.unwrap_or(0.0);
    let r = map.r;

    let mut identity_violations = 0;
    let mut displacement_ratio_max: f64 = 0.0;
    let mut displacement_violations = Vec::new();
    for ((&x, &fx), &dx) in map.domain.iter().zip(&map.assignment).zip(&map.depth) {
        let moved = space.dist(x, fx);
        if dx == 0.0 {
            if fx != x {
                identity_violations += 1;
            }
            continue;
        }
        displacement_ratio_max = displacement_ratio_max.max(moved / dx);
        if moved >= 2.0 * dx + 4.0 * h {
            displacement_violations.push(x);
        }
    }

    struct ChartStats {
        lip: f64,
        eps_open: f64,
        agreement: f64,
        defect: f64,
        pairs: usize,
    }
    let per_chart: Vec<ChartStats> = map
        .charts
        .par_iter()
        .map(|chart| {
            let anchors = chart.anchors();
            let near: Vec<usize> = (0..map.domain.len())
                .filter(|&i| space.dist(chart.base, map.domain[i]) < 3.0 * r)
                .collect();
            let phi: Vec<Vec<f64>> = near.iter().map(|&i| distances_from(space, &anchors, map.domain[i])).collect();
            let psi_f: Vec<Vec<f64>> = near
                .iter()
                .map(|&i| distances_from(space, &anchors, map.assignment[i]))
                .collect();
            let psi = Lookup::new(space, &anchors, lookup_region(subset, chart.base, lookup_radius(r, map.rho)));
            let agreement = near
                .iter()
                .zip(&phi)
                .map(|(&i, v)| space.dist(psi.invert(v).0, map.assignment[i]) / r)
                .fold(0.0, f64::max);
            let (mut lip, mut defect, mut pairs): (f64, f64, usize) = (0.0, 0.0, 0);
            for a in 0..near.len() {
                for b in a + 1..near.len() {
                    let (x, y) = (map.domain[near[a]], map.domain[near[b]]);
                    let d = space.dist(x, y);
                    if d < r {
                        continue;
                    }
                    pairs += 1;
                    let (fx, fy) = (map.assignment[near[a]], map.assignment[near[b]]);
                    lip = lip.max(space.dist(fx, fy) / d);
                    let diff: Vec<f64> = (0..anchors.len())
                        .map(|i| (phi[a][i] - phi[b][i]) - (psi_f[a][i] - psi_f[b][i]))
                        .collect();
                    defect = defect.max(norm_gap(&diff, &vec![0.0; diff.len()]) / d);
                }
            }
            let region: Vec<usize> = near
                .iter()
                .enumerate()
                .filter(|&(_, &i)| space.dist(chart.base, map.domain[i]) < 2.0 * r)
                .map(|(j, _)| j)
                .collect();
            let ids: Vec<PointId> = region.iter().map(|&j| map.domain[near[j]]).collect();
            let values: Vec<Vec<f64>> = region.iter().map(|&j| psi_f[j].clone()).collect();
            let open = openness_of_values(space, chart.base, 2.0 * r, &ids, &values, grid)?;
            Ok(ChartStats {
                lip,
                eps_open: open.eps_open,
                agreement,
                defect,
                pairs,
            })
        })
        .collect::<Result<_>>()?;

    let max_of = |f: fn(&ChartStats) -> f64| per_chart.iter().map(f).fold(0.0, f64::max);
    let eps_open = max_of(|c| c.eps_open);
    Ok(ProjectionQuality {
        identity_on_target: identity_violations == 0,
        identity_violations,
        displacement_ratio_max,
        displacement_violations,
        lip: max_of(|c| c.lip),
        colip: 1.0 - eps_open,
        eps_open,
        local_agreement: max_of(|c| c.agreement),
        blend_defect: max_of(|c| c.defect),
        pairs: per_chart.iter().map(|c| c.pairs).sum(),
    })
}

// ---------------------------------------------------------------------------
// cross-space almost isometry

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossChart {
    pub base: PointId,
    pub image_base: PointId,
    pub strainer: Strainer,
    /// Images of the strainer pairs under the correspondence.
    pub image_pairs: Vec<(PointId, PointId)>,
    /// Strainer margin of the image pairs at `image_base`.
    pub image_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSpaceMap {
    pub m: usize,
    pub delta: f64,
    pub ell: f64,
    pub r: f64,
    pub net: Vec<PointId>,
    pub charts: Vec<CrossChart>,
    /// Sampled `E(m,δ,ℓ)`, ascending ids.
    pub domain: Vec<PointId>,
    /// Image in `F` of each domain point.
    pub assignment: Vec<PointId>,
    pub flagged: Vec<PointId>,
    /// `max |d_F(f x, f y) / d_E(x, y) − 1|` over domain pairs at distance
    /// at least `r`.
    pub distortion: f64,
    pub pairs: usize,
    /// `max |d_F(g x, g y) − d_E(x, y)|` over the same pairs.
    pub correspondence_distortion: f64,
    /// `max d_F(f(x), g(x))`.
    pub displacement_max: f64,
}

/// Almost isometry from `E(m,δ,ℓ)` into `F` glued from the charts
/// `ψ⁻¹∘φ`, where `φ` uses a strainer in `E`'s space and `ψ` its image
/// under the correspondence `g`.
pub fn cross_space_almost_isometry(
    e: &Subset,
    f: &Subset,
    correspondence: &BTreeMap<PointId, PointId>,
    m: usize,
    delta: f64,
    ell: f64,
    r: f64,
) -> Result<CrossSpaceMap> {
    let (src, dst) = (e.space(), f.space());
    if m == 0 {
        return Err(Error::Invalid("the map needs m >= 1".into()));
    }
    if !(r > 0.0) {
        return Err(Error::Invalid(format!("net scale must be positive, got {r}")));
    }
    let g = |x: PointId| {
        correspondence
            .get(&x)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("correspondence does not cover point {x}")))
    };
    for &y in correspondence.values() {
        dst.check_id(y)?;
    }
    let mask = classify_with(e, m, delta, ell, default_search_radius(ell), SearchOptions::default())?;
    let domain = mask.member_ids.clone();
    if domain.is_empty() {
        return refuse(format!("no point of E is ({m},{delta})-strained with length > {ell}"));
    }
    let net = net_of(src, &domain, r)?;
    let charts: Vec<CrossChart> = net
        .iter()
        .map(|&p| {
            let idx = mask.member_ids.binary_search(&p).expect("net lies in the domain");
            let strainer = mask.witnesses[idx].clone();
            let image_base = g(p)?;
            let mut image_pairs = Vec::with_capacity(strainer.k());
            for &(a, b) in &strainer.pairs {
                match (g(a), g(b)) {
                    (Ok(ga), Ok(gb)) => image_pairs.push((ga, gb)),
                    _ => return refuse(format!("chart at {p}: strainer points are outside the correspondence")),
                }
            }
            let lifted = image_pairs
                .iter()
                .all(|&(a, b)| a != image_base && b != image_base)
                .then(|| is_strainer(dst, image_base, &image_pairs, 2.0 * delta))
                .transpose()?;
            match lifted {
                Some((true, image_margin)) => Ok(CrossChart {
                    base: p,
                    image_base,
                    strainer,
                    image_pairs,
                    image_margin,
                }),
                _ => refuse(format!(
                    "chart at {p}: image of the strainer is not an ({m},{})-strainer at {image_base}",
                    2.0 * delta
                )),
            }
        })
        .collect::<Result<_>>()?;

    let mut assignment: Vec<Option<PointId>> = vec![None; domain.len()];
    let mut flagged = Vec::new();
    let slack = delta * r;
    for chart in &charts {
        let anchors: Vec<PointId> = chart.strainer.pairs.iter().map(|&(a, _)| a).collect();
        let image_anchors: Vec<PointId> = chart.image_pairs.iter().map(|&(a, _)| a).collect();
        let psi = Lookup::new(dst, &image_anchors, lookup_region(f, chart.image_base, 3.0 * r));
        if psi.ids.is_empty() {
            return Err(Error::Invalid(format!("chart at {}: empty lookup region in F", chart.base)));
        }
        flagged.extend(blend_step(
            src,
            dst,
            chart.base,
            r,
            &domain,
            |x| distances_from(src, &anchors, x),
            &image_anchors,
            &psi,
            slack,
            &mut assignment,
        ));
    }
    flagged.sort_unstable();
    flagged.dedup();
    let assignment: Vec<PointId> = domain
        .iter()
        .zip(assignment)
        .map(|(&x, a)| a.ok_or_else(|| Error::Invalid(format!("domain point {x} is outside every chart"))))
        .collect::<Result<_>>()?;
    let images: Vec<PointId> = domain.iter().map(|&x| g(x)).collect::<Result<_>>()?;

    let (distortion, corr, pairs) = (0..domain.len())
        .into_par_iter()
        .map(|a| {
            let (mut dist, mut corr, mut pairs) = (0.0f64, 0.0f64, 0usize);
            for b in a + 1..domain.len() {
                let d = src.dist(domain[a], domain[b]);
                if d < r {
                    continue;
                }
                pairs += 1;
                dist = dist.max((dst.dist(assignment[a], assignment[b]) / d - 1.0).abs());
                corr = corr.max((dst.dist(images[a], images[b]) - d).abs());
            }
            (dist, corr, pairs)
        })
        .reduce(|| (0.0, 0.0, 0), |x, y| (x.0.max(y.0), x.1.max(y.1), x.2 + y.2));
    let displacement_max = assignment
        .iter()
        .zip(&images)
        .map(|(&fx, &gx)| dst.dist(fx, gx))
        .fold(0.0, f64::max);

    Ok(CrossSpaceMap {
        m,
        delta,
        ell,
        r,
        net,
        charts,
        domain,
        assignment,
        flagged,
        distortion,
        pairs,
        correspondence_distortion: corr,
        displacement_max,
    })
}

// ---------------------------------------------------------------------------
// volume convergence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub index: usize,
    pub name: String,
    pub subset: Option<String>,
    pub points: usize,
    pub estimate_extrinsic: f64,
    pub estimate_intrinsic: f64,
    pub exact: Option<f64>,
    /// `|estimate_extrinsic − limit|` when a limit is given.
    pub deviation: Option<f64>,
    /// `|estimate_extrinsic / exact − 1|` when the exact measure is known.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub m: usize,
    pub eps: f64,
    pub limit: Option<f64>,
    pub rows: Vec<ConvergenceRow>,
    /// Earliest index from which deviations decrease strictly.
    pub decreasing_from: Option<usize>,
    /// The deviations decrease strictly over at least the last three rows
    /// (all rows for shorter families).
    pub eventually_decreasing: bool,
    /// Estimates decrease strictly and end below a quarter of the first one:
    /// the family loses measure, as a collapsing sequence does.
    pub collapse: bool,
}

impl ConvergenceTable {
    /// Rows as CSV with a header line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index",
            "name",
            "points",
            "estimate_extrinsic",
            "estimate_intrinsic",
            "exact",
            "deviation",
            "relative_error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            w.write_record([
                row.index.to_string(),
                row.name.clone(),
                row.points.to_string(),
                row.estimate_extrinsic.to_string(),
                row.estimate_intrinsic.to_string(),
                opt(row.exact),
                opt(row.deviation),
                opt(row.relative_error),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Measure estimates of the marked subset of every family member, in both
/// metrics, against a limit value.
pub fn volume_convergence_experiment(
    family: &[GeneratorSpec],
    m: usize,
    eps: f64,
    limit: Option<f64>,
) -> Result<ConvergenceTable> {
    let mut rows = Vec::with_capacity(family.len());
    for (index, spec) in family.iter().enumerate() {
        let model = spec.generate()?;
        let space = &model.space;
        let name = model.annotation.marked_subset.clone();
        let subset = match &name {
            Some(n) => Subset::named(space, n, None)?,
            None => Subset::whole(space, None)?,
        };
        let ext = hausdorff_measure_estimate(&subset, m, eps, MetricKind::Extrinsic)?;
        let int = hausdorff_measure_estimate(&subset, m, eps, MetricKind::Intrinsic)?;
        let exact = name
            .as_deref()
            .and_then(|n| model.annotation.exact_measure.get(n).copied());
        rows.push(ConvergenceRow {
            index,
            name: space.name.clone(),
            subset: name,
            points: subset.len(),
            estimate_extrinsic: ext.value,
            estimate_intrinsic: int.value,
            exact,
            deviation: limit.map(|l| (ext.value - l).abs()),
            relative_error: exact.map(|x| (ext.value / x - 1.0).abs()),
        });
    }
    let deviations: Option<Vec<f64>> = rows.iter().map(|r| r.deviation).collect();
    let decreasing_from = deviations.as_ref().and_then(|d| {
        if d.is_empty() {
            return None;
        }
        let mut i = d.len() - 1;
        while i > 0 && d[i] < d[i - 1] {
            i -= 1;
        }
        Some(i)
    });
    let n = rows.len();
    let eventually_decreasing = n >= 2 && decreasing_from.is_some_and(|i| n - i >= n.min(3));
    let est: Vec<f64> = rows.iter().map(|r| r.estimate_extrinsic).collect();
    let collapse = n >= 2 && est.windows(2).all(|w| w[1] < w[0]) && est[n - 1] <= 0.25 * est[0];
    Ok(ConvergenceTable {
        m,
        eps,
        limit,
        rows,
        decreasing_from,
        eventually_decreasing,
        collapse,
    })
}

/// Seed used by [`ChartOrder::Shuffled`] when none is configured.
pub const DEFAULT_ORDER_SEED: u64 = DEFAULT_SEED;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_convex_polygon, gen_segment, regular_polygon_vertices, Interior, PolygonOptions};
    use crate::space::Coords;

    proptest::proptest! {
        #[test]
        fn blend_stays_on_the_segment(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..4),
            t in 0.0f64..2.5,
        ) {
            let (prev, next): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let chi = bump(t);
            proptest::prop_assert!((0.0..=1.0).contains(&chi));
            let v = blend_values(&prev, &next, chi);
            let span = norm_gap(&prev, &next);
            proptest::prop_assert!((norm_gap(&v, &prev) + norm_gap(&v, &next) - span).abs() <= 1e-12 * (1.0 + span));
            for ((x, a), b) in v.iter().zip(&prev).zip(&next) {
                proptest::prop_assert!(*x >= a.min(*b) - 1e-12 && *x <= a.max(*b) + 1e-12);
            }
        }
    }

    #[test]
    fn bump_values() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 1.0);
        assert_eq!(bump(2.0), 0.0);
        assert_eq!(bump(7.0), 0.0);
        assert!((bump(1.5) - 0.5).abs() < 1e-15);
        // derivative −6s(1 − s) peaks at 1.5 in magnitude
        let lip = (0..1000)
            .map(|i| {
                let t = 1.0 + i as f64 / 1000.0;
                ((bump(t + 1e-6) - bump(t)) / 1e-6).abs()
            })
            .fold(0.0, f64::max);
        assert!((lip - 1.5).abs() < 1e-3);
    }

    /// Independent greedy net on `[0, 1]` sampled at pitch `h`.
    fn line_net_oracle(n: usize, h: f64, r: f64) -> Vec<usize> {
        let mut net = vec![0usize];
        for i in 1..n {
            if (i - net[net.len() - 1]) as f64 * h > r / 2.0 + 1e-12 {
                net.push(i);
            }
        }
        net
    }

    #[test]
    fn segment_net_matches_line_oracle() {
        let m = gen_segment(1.0, 0.01).unwrap();
        let sub = Subset::named(&m.space, "all", None).unwrap();
        // r/2 = 0.1025 avoids ties with the grid spacing
        let net = discrete_net(&sub, 0.205).unwrap();
        assert_eq!(net, line_net_oracle(101, 0.01, 0.205));
        assert!((10..=11).contains(&net.len()), "{}", net.len());
        for (i, &a) in net.iter().enumerate() {
            for &b in &net[i + 1..] {
                assert!(m.space.dist(a, b) > 0.1);
            }
        }
        assert_eq!(discrete_net(&sub, 3.0).unwrap(), vec![0]);
        assert!(discrete_net(&sub, 0.03).unwrap_err().is_refusal());
    }

    /// A straight edge `[0, 1] × {0}` with one row of points at height `h/2`.
    fn strip(h: f64) -> Space {
        let cols = (1.0 / h).round() as usize;
        let pts: Vec<[f64; 2]> = (0..=1)
            .flat_map(|j| (0..=cols).map(move |i| [i as f64 * h, j as f64 * h * 0.5]))
            .collect();
        Space::euclidean("strip", 0.0, Coords::from_points(&pts))
            .with_resolution(h)
            .with_subset("edge", (0..=cols).collect(), true)
    }

    const H: f64 = 0.005;

    /// Middle part of the strip's edge, away from its unstrained endpoints.
    fn middle(space: &Space, from: PointId, to: PointId) -> Subset<'_> {
        Subset::new(space, (from..=to).collect(), true, 3.0 * H).unwrap()
    }

    #[test]
    fn straight_edge_projection_is_orthogonal() {
        let space = strip(H);
        let e = middle(&space, 60, 140);
        let map = build_projection(&e, 1, 0.3, 0.25, 0.02, Some(0.003)).unwrap();
        assert!(map.flagged.is_empty());
        assert!(map.warnings.is_empty(), "{:?}", map.warnings);
        assert_eq!(map.domain.len(), 2 * 81);
        let coords = space.coords().unwrap();
        for (&x, &fx) in map.domain.iter().zip(&map.assignment) {
            assert!((coords.get(x)[0] - coords.get(fx)[0]).abs() <= 2.0 * H + 1e-12, "{x} -> {fx}");
        }
        let q = projection_quality(&e, &map, 8).unwrap();
        assert!(q.identity_on_target);
        assert!(q.displacement_violations.is_empty());
        assert!(q.lip < 1.0 + 2.0 * H / 0.02, "{}", q.lip);
    }

    #[test]
    fn single_chart_is_the_local_inverse() {
        let space = strip(H);
        let e = middle(&space, 99, 101);
        let map = build_projection(&e, 1, 0.3, 0.3, 0.025, Some(0.003)).unwrap();
        assert_eq!(map.net.len(), 1);
        let chart = &map.charts[0];
        let anchors = chart.anchors();
        let psi = Lookup::new(&space, &anchors, lookup_region(&e, chart.base, lookup_radius(0.025, 0.003)));
        for (&x, &fx) in map.domain.iter().zip(&map.assignment) {
            assert_eq!(psi.invert(&distances_from(&space, &anchors, x)).0, fx);
        }
    }

    #[test]
    fn collar_must_be_thin() {
        let space = strip(H);
        let e = middle(&space, 60, 140);
        assert!(build_projection(&e, 1, 0.3, 0.25, 0.02, Some(0.004)).unwrap_err().is_refusal());
    }

    #[test]
    fn unstrained_points_are_refused() {
        let space = strip(H);
        let sub = Subset::named(&space, "edge", None).unwrap();
        let err = build_projection(&sub, 1, 0.3, 0.25, 0.02, Some(0.003)).unwrap_err();
        assert!(err.is_refusal());
        assert!(err.to_string().contains("not (1,0.3)-strained"), "{err}");
    }

    #[test]
    fn polygon_projection_fixes_the_boundary() {
        let m = gen_convex_polygon(
            &regular_polygon_vertices(24, 1.0, 0.0),
            0.01,
            PolygonOptions {
                interior: Interior::Collar { width: 0.01 },
                interior_h: Some(0.004),
            },
        )
        .unwrap();
        let sub = Subset::named(&m.space, "boundary", None).unwrap();
        let map = build_projection(&sub, 1, 0.5, 0.3, 0.04, Some(0.006)).unwrap();
        assert!(map.domain.len() > sub.len());
        let q = projection_quality(&sub, &map, 8).unwrap();
        assert!(q.identity_on_target);
        assert!(q.displacement_violations.is_empty(), "{:?}", q.displacement_violations);
        assert!(q.lip < 1.5, "{}", q.lip);
    }

    #[test]
    fn shuffled_order_is_a_permutation() {
        let order = ChartOrder::Shuffled { seed: 3 }.permutation(10);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(order, ChartOrder::Shuffled { seed: 3 }.permutation(10));
        assert_eq!(ChartOrder::Net.permutation(4), vec![0, 1, 2, 3]);
    }

    fn boundary_polygon(n: usize, h: f64, rotation: f64) -> crate::models::Model {
        gen_convex_polygon(
            &regular_polygon_vertices(n, 1.0, rotation),
            h,
            PolygonOptions {
                interior: Interior::None,
                interior_h: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_correspondence_is_undistorted() {
        let m = boundary_polygon(40, 0.01, 0.0);
        let sub = Subset::named(&m.space, "boundary", None).unwrap();
        let g: BTreeMap<PointId, PointId> = sub.indices().iter().map(|&x| (x, x)).collect();
        let map = cross_space_almost_isometry(&sub, &sub, &g, 1, 0.5, 0.4, 0.1).unwrap();
        assert!(map.distortion <= 2.0 * 0.01 / 0.1, "{}", map.distortion);
        assert_eq!(map.displacement_max, 0.0);
        assert_eq!(map.correspondence_distortion, 0.0);
    }

    #[test]
    fn missing_correspondence_is_refused() {
        let m = boundary_polygon(40, 0.01, 0.0);
        let sub = Subset::named(&m.space, "boundary", None).unwrap();
        let g: BTreeMap<PointId, PointId> = sub.indices().iter().map(|&x| (x, x)).filter(|&(x, _)| x % 2 == 0).collect();
        assert!(cross_space_almost_isometry(&sub, &sub, &g, 1, 0.5, 0.4, 0.1).is_err());
    }

    #[test]
    fn constant_family_has_constant_estimates() {
        let spec = GeneratorSpec::Circle { length: 3.0, h: 0.01 };
        let table = volume_convergence_experiment(&[spec.clone(), spec.clone(), spec], 1, 0.05, Some(3.0)).unwrap();
        let e: Vec<f64> = table.rows.iter().map(|r| r.estimate_extrinsic).collect();
        assert!(e.windows(2).all(|w| w[0] == w[1]));
        assert!(!table.collapse);
        assert!(!table.eventually_decreasing);
        assert!(table.to_csv().unwrap().lines().count() == 4);
    }
}
