//! (k,δ)-strainers: verification, heuristic search, classification of
//! subset points, strainer numbers and regular points.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{refuse, Error, Result};
use crate::space::{greedy_packing, PointId, Separation, Space, Subset};

/// A base point with `k` pairs of strainer points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strainer {
    pub base: PointId,
    pub pairs: Vec<(PointId, PointId)>,
    /// Smallest δ for which the pairs form a (k,δ)-strainer (strictly:
    /// the pairs are a (k,δ)-strainer for every δ above this margin).
    pub delta_achieved: f64,
    /// Minimum distance from the base to a strainer point (`+∞` for k = 0).
    pub length: f64,
}

impl Strainer {
    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    /// Strainer points in pair order `a_1, b_1, a_2, ...`.
    pub fn points(&self) -> Vec<PointId> {
        self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

/// Smallest δ such that `pairs` is a (k,δ)-strainer at `p`: the largest of
/// `π − ∠̃ a_i p b_i` and `π/2 − ∠̃ x p y` over strainer points `x`, `y` of
/// different pairs. Comparison angles use the space's curvature, with the
/// zero convention for nonexistent triangles.
pub fn strainer_margin(space: &Space, p: PointId, pairs: &[(PointId, PointId)]) -> Result<f64> {
    space.check_id(p)?;
    for &(a, b) in pairs {
        for x in [a, b] {
            space.check_id(x)?;
            if x == p {
                return Err(Error::Invalid(format!("strainer point {x} coincides with the base")));
            }
        }
    }
    let mut margin: f64 = 0.0;
    for (i, &(a, b)) in pairs.iter().enumerate() {
        margin = margin.max(PI - space.angle_at(p, a, b)?);
        for &(c, d) in &pairs[i + 1..] {
            for (x, y) in [(a, c), (a, d), (b, c), (b, d)] {
                margin = margin.max(FRAC_PI_2 - space.angle_at(p, x, y)?);
            }
        }
    }
    Ok(margin)
}

/// Whether `pairs` is a (k,δ)-strainer at `p`, with its margin.
pub fn is_strainer(space: &Space, p: PointId, pairs: &[(PointId, PointId)], delta: f64) -> Result<(bool, f64)> {
    let margin = strainer_margin(space, p, pairs)?;
    Ok((margin < delta, margin))
}

fn strainer_length(space: &Space, p: PointId, pairs: &[(PointId, PointId)]) -> f64 {
    pairs
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .map(|x| space.dist(p, x))
        .fold(f64::INFINITY, f64::min)
}

/// Tuning of [`find_strainer_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub beam_width: usize,
    /// Search balls with more points than this are thinned by greedy
    /// packing in id order.
    pub max_candidates: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            beam_width: 8,
            max_candidates: 256,
        }
    }
}

fn check_lengths(ell: f64, search_radius: f64) -> Result<()> {
    if ell > 1.0 {
        return refuse(format!("strainer length bound {ell} exceeds 1"));
    }
    if !(ell >= 0.0 && ell < search_radius) {
        return Err(Error::Invalid(format!(
            "need 0 <= ell < search_radius, got ell = {ell}, search_radius = {search_radius}"
        )));
    }
    Ok(())
}

/// Candidate strainer points `ell < d(p, x) < search_radius`, sorted by
/// distance from `p`. Thinning to at most `max_candidates` acts on the whole
/// punctured ball before the `ell` cut, so pools for larger `ell` are
/// suffixes of pools for smaller ones.
fn candidate_pool(space: &Space, p: PointId, ell: f64, search_radius: f64, max_candidates: usize) -> Vec<PointId> {
    let ball: Vec<PointId> = space
        .ids()
        .filter(|&x| {
            let d = space.dist(p, x);
            x != p && d < search_radius
        })
        .collect();
    let mut pool = if ball.len() <= max_candidates {
        ball
    } else {
        let mut eps = space.resolution.unwrap_or(search_radius / 64.0);
        loop {
            if let Some(thinned) = capped_packing(space, &ball, eps, max_candidates) {
                break thinned;
            }
            eps *= 1.25;
        }
    };
    pool.retain(|&x| space.dist(p, x) > ell);
    pool.sort_by(|&x, &y| space.dist(p, x).total_cmp(&space.dist(p, y)).then(x.cmp(&y)));
    pool
}

/// Greedy packing that gives up as soon as it exceeds `cap` points.
fn capped_packing(space: &Space, ids: &[PointId], eps: f64, cap: usize) -> Option<Vec<PointId>> {
    let mut chosen: Vec<PointId> = Vec::with_capacity(cap);
    for &x in ids {
        if chosen.iter().all(|&c| Separation::Closed.separated(space.dist(x, c), eps)) {
            if chosen.len() == cap {
                return None;
            }
            chosen.push(x);
        }
    }
    Some(chosen)
}

#[derive(Clone)]
struct BeamState {
    pairs: Vec<(usize, usize)>,
    margin: f64,
}

impl BeamState {
    fn key(&self) -> Vec<(usize, usize)> {
        let mut k = self.pairs.clone();
        k.sort_unstable();
        k
    }
}

/// Beam search for a (k,δ)-strainer at `p` with length > `ell`.
///
/// The first pair maximizes `∠̃ a p b`; each further pair is chosen to keep
/// the overall margin smallest. `None` is not a proof that no strainer
/// exists in the sample.
pub fn find_strainer(
    space: &Space,
    p: PointId,
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
) -> Result<Option<Strainer>> {
    find_strainer_with(space, p, k, delta, ell, search_radius, SearchOptions::default())
}

pub fn find_strainer_with(
    space: &Space,
    p: PointId,
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
    opts: SearchOptions,
) -> Result<Option<Strainer>> {
    let found = best_strainer(space, p, k, delta, ell, search_radius, opts)?;
    Ok(found.filter(|s| s.delta_achieved < delta))
}

/// Best strainer the beam search finds using only pairs and extensions with
/// margin below `delta`; pass `f64::INFINITY` for an unrestricted search.
pub fn best_strainer(
    space: &Space,
    p: PointId,
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
    opts: SearchOptions,
) -> Result<Option<Strainer>> {
    let found = closed_search(space, p, k, delta, ell, search_radius, opts)?;
    if found.depth < k {
        return Ok(None);
    }
    if k == 0 {
        return Ok(Some(Strainer {
            base: p,
            pairs: Vec::new(),
            delta_achieved: 0.0,
            length: f64::INFINITY,
        }));
    }
    let pairs: Vec<(PointId, PointId)> = found.best.iter().map(|&(a, b)| (found.pool[a], found.pool[b])).collect();
    Ok(Some(Strainer {
        base: p,
        delta_achieved: strainer_margin(space, p, &pairs)?,
        length: strainer_length(space, p, &pairs),
        pairs,
    }))
}

/// Outcome of a beam search: the number of stages that kept a nonempty
/// beam and the best state of the last such stage (pool indices).
struct BeamOutcome {
    pool: Vec<PointId>,
    depth: usize,
    best: Vec<(usize, usize)>,
}

/// Pool of a beam search with its comparison angles at the base and the
/// pairs with margin below δ, best first.
struct PoolAngles {
    pool: Vec<PointId>,
    angle: Vec<f64>,
    first: Vec<(f64, usize, usize)>,
}

impl PoolAngles {
    fn new(space: &Space, p: PointId, delta: f64, ell: f64, search_radius: f64, opts: SearchOptions) -> Result<Self> {
        let pool = candidate_pool(space, p, ell, search_radius, opts.max_candidates);
        let m = pool.len();
        let mut angle = vec![0.0; m * m];
        let mut first = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                let t = space.angle_at(p, pool[a], pool[b])?;
                angle[a * m + b] = t;
                angle[b * m + a] = t;
                let margin = PI - t;
                if margin < delta {
                    first.push((margin, a, b));
                }
            }
        }
        first.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        Ok(Self { pool, angle, first })
    }

    fn ang(&self, a: usize, b: usize) -> f64 {
        self.angle[a * self.pool.len() + b]
    }

    /// Beam search restricted to pool indices `>= start`. Stage `j` of a
    /// search for `k` pairs is identical to the final stage of a search for
    /// `j` pairs, so the depth is the largest `j <= k` for which a `j`-pair
    /// search succeeds.
    fn search(&self, start: usize, k: usize, delta: f64, beam_width: usize) -> (usize, Vec<(usize, usize)>) {
        let first: Vec<(f64, usize, usize)> = self.first.iter().copied().filter(|&(_, a, _)| a >= start).collect();
        if k == 0 || first.is_empty() {
            return (0, Vec::new());
        }
        let mut beam: Vec<BeamState> = first
            .iter()
            .take(beam_width)
            .map(|&(margin, a, b)| BeamState {
                pairs: vec![(a, b)],
                margin,
            })
            .collect();
        let mut depth = 1;
        for _ in 1..k {
            let mut next: Vec<BeamState> = Vec::new();
            for state in &beam {
                let used: Vec<usize> = state.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
                for &(pm, a, b) in &first {
                    if used.contains(&a) || used.contains(&b) {
                        continue;
                    }
                    let mut margin = state.margin.max(pm);
                    for &u in &used {
                        margin = margin.max(FRAC_PI_2 - self.ang(a, u)).max(FRAC_PI_2 - self.ang(b, u));
                    }
                    if margin < delta {
                        let mut pairs = state.pairs.clone();
                        pairs.push((a, b));
                        next.push(BeamState { pairs, margin });
                    }
                }
            }
            next.sort_by(|x, y| x.margin.total_cmp(&y.margin).then_with(|| x.key().cmp(&y.key())));
            next.dedup_by(|x, y| x.key() == y.key());
            next.truncate(beam_width);
            if next.is_empty() {
                break;
            }
            beam = next;
            depth += 1;
        }
        (depth, beam.swap_remove(0).pairs)
    }
}

/// Beam search over the pool at length `ell`.
#[allow(clippy::too_many_arguments)]
fn beam_search(
    space: &Space,
    p: PointId,
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
    opts: SearchOptions,
) -> Result<BeamOutcome> {
    space.check_id(p)?;
    check_lengths(ell, search_radius)?;
    let pa = PoolAngles::new(space, p, delta, ell, search_radius, opts)?;
    let (depth, best) = pa.search(0, k, delta, opts.beam_width);
    Ok(BeamOutcome { pool: pa.pool, depth, best })
}

/// Search for `k` pairs at length `ell` or at any longer length: when the
/// pool at `ell` falls short, each pool of a larger length (a suffix of
/// distance ties) is searched too. Membership is then monotone in `ell`
/// whatever the beam keeps.
#[allow(clippy::too_many_arguments)]
fn closed_search(
    space: &Space,
    p: PointId,
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
    opts: SearchOptions,
) -> Result<BeamOutcome> {
    space.check_id(p)?;
    check_lengths(ell, search_radius)?;
    let pa = PoolAngles::new(space, p, delta, ell, search_radius, opts)?;
    let (depth, best) = pa.search(0, k, delta, opts.beam_width);
    if depth >= k || depth == 0 {
        return Ok(BeamOutcome { pool: pa.pool, depth, best });
    }
    let dist: Vec<f64> = pa.pool.iter().map(|&x| space.dist(p, x)).collect();
    let mut deepest = (depth, best);
    for start in 1..dist.len() {
        if dist.len() - start < 2 * k {
            break;
        }
        if dist[start] == dist[start - 1] {
            continue;
        }
        let (d, pairs) = pa.search(start, k, delta, opts.beam_width);
        if d == 0 {
            break;
        }
        if d > deepest.0 {
            deepest = (d, pairs);
            if d >= k {
                break;
            }
        }
    }
    Ok(BeamOutcome { pool: pa.pool, depth: deepest.0, best: deepest.1 })
}

/// Sampled `E(k,δ,ℓ)`: subset points with a found strainer, with witnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMask {
    pub k: usize,
    pub delta: f64,
    pub ell: f64,
    pub search_radius: f64,
    pub subset_size: usize,
    pub member_ids: Vec<PointId>,
    /// One witness per member, in the same order.
    pub witnesses: Vec<Strainer>,
}

impl ClassificationMask {
    pub fn margins(&self) -> Vec<f64> {
        self.witnesses.iter().map(|w| w.delta_achieved).collect()
    }

    pub fn contains(&self, p: PointId) -> bool {
        self.member_ids.binary_search(&p).is_ok()
    }

    pub fn fraction(&self) -> f64 {
        if self.subset_size == 0 {
            0.0
        } else {
            self.member_ids.len() as f64 / self.subset_size as f64
        }
    }
}

/// Runs [`find_strainer_with`] at every point of `points` (sorted output).
#[allow(clippy::too_many_arguments)]
fn classify_points(
    space: &Space,
    points: &[PointId],
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
    opts: SearchOptions,
) -> Result<ClassificationMask> {
    check_lengths(ell, search_radius)?;
    let found: Vec<Option<Strainer>> = points
        .par_iter()
        .map(|&p| find_strainer_with(space, p, k, delta, ell, search_radius, opts))
        .collect::<Result<_>>()?;
    let mut members: Vec<(PointId, Strainer)> = points
        .iter()
        .zip(found)
        .filter_map(|(&p, s)| s.map(|s| (p, s)))
        .collect();
    members.sort_by_key(|(p, _)| *p);
    let (member_ids, witnesses) = members.into_iter().unzip();
    Ok(ClassificationMask {
        k,
        delta,
        ell,
        search_radius,
        subset_size: points.len(),
        member_ids,
        witnesses,
    })
}

/// `E(k,δ,ℓ)` over the subset.
pub fn classify(subset: &Subset, k: usize, delta: f64, ell: f64, search_radius: f64) -> Result<ClassificationMask> {
    classify_with(subset, k, delta, ell, search_radius, SearchOptions::default())
}

pub fn classify_with(
    subset: &Subset,
    k: usize,
    delta: f64,
    ell: f64,
    search_radius: f64,
    opts: SearchOptions,
) -> Result<ClassificationMask> {
    classify_points(subset.space(), subset.indices(), k, delta, ell, search_radius, opts)
}

/// Default search radius for strainer numbers and regular points.
pub fn default_search_radius(ell: f64) -> f64 {
    3.0 * ell
}

/// Largest number of pairs tried by [`strainer_number`].
pub const MAX_STRAINER_NUMBER: usize = 6;

fn strainer_number_of(space: &Space, points: &[PointId], delta: f64, ell: f64, search_radius: f64) -> Result<usize> {
    check_lengths(ell, search_radius)?;
    let opts = SearchOptions::default();
    points
        .par_iter()
        .map(|&p| beam_search(space, p, MAX_STRAINER_NUMBER, delta, ell, search_radius, opts).map(|b| b.depth))
        .try_reduce(|| 0, |a, b| Ok(a.max(b)))
}

/// δ-strainer number of the subset at strainer length `ell` (search radius 3ℓ).
pub fn strainer_number(subset: &Subset, delta: f64, ell: f64) -> Result<usize> {
    strainer_number_of(subset.space(), subset.indices(), delta, ell, default_search_radius(ell))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStrainerNumber {
    pub value: usize,
    /// Whether the two smallest scales agree.
    pub stable: bool,
    /// `(scale, strainer number of subset ∩ B(p, scale))`.
    pub profile: Vec<(f64, usize)>,
}

/// Local δ-strainer number at `p`: the strainer number of `E ∩ B(p, r)` for
/// each scale `r`, with strainer length `r/4` and search radius `2r`.
pub fn local_strainer_number(subset: &Subset, p: PointId, delta: f64, scales: &[f64]) -> Result<LocalStrainerNumber> {
    let space = subset.space();
    space.check_id(p)?;
    if scales.is_empty() {
        return Err(Error::Invalid("no scales given".into()));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("scales must be strictly descending".into()));
    }
    if let Some(h) = space.resolution {
        if let Some(&r) = scales.iter().find(|&&r| r < 4.0 * h * (1.0 - 1e-9)) {
            return refuse(format!("scale {r} is below four sampling pitches ({h})"));
        }
    }
    let mut profile = Vec::with_capacity(scales.len());
    for &r in scales {
        let near: Vec<PointId> = subset
            .indices()
            .iter()
            .copied()
            .filter(|&x| space.dist(p, x) < r)
            .collect();
        let ell = (0.25 * r).min(1.0);
        profile.push((r, strainer_number_of(space, &near, delta, ell, 2.0 * r)?));
    }
    let n = profile.len();
    let value = profile[n - 1].1;
    let stable = n < 2 || profile[n - 2].1 == value;
    Ok(LocalStrainerNumber { value, stable, profile })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularPoints {
    pub m: usize,
    pub ell: f64,
    /// Nested masks, one per scheduled δ.
    pub masks: Vec<ClassificationMask>,
    /// Members of the mask at the smallest δ.
    pub regular_ids: Vec<PointId>,
    pub fraction: f64,
}

/// Empirical regular set: points that are (m,δ)-strained with length > ℓ at
/// every δ of the descending schedule. A point dropped at one δ is not
/// examined again.
pub fn regular_points(subset: &Subset, m: usize, delta_schedule: &[f64], ell: f64) -> Result<RegularPoints> {
    if delta_schedule.is_empty() {
        return Err(Error::Invalid("empty delta schedule".into()));
    }
    if delta_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("delta schedule must be strictly descending".into()));
    }
    let space = subset.space();
    let search_radius = default_search_radius(ell);
    let mut alive: Vec<PointId> = subset.indices().to_vec();
    let mut masks = Vec::with_capacity(delta_schedule.len());
    for &delta in delta_schedule {
        let mut mask = classify_points(space, &alive, m, delta, ell, search_radius, SearchOptions::default())?;
        mask.subset_size = subset.len();
        alive = mask.member_ids.clone();
        masks.push(mask);
    }
    let fraction = if subset.is_empty() {
        0.0
    } else {
        alive.len() as f64 / subset.len() as f64
    };
    Ok(RegularPoints {
        m,
        ell,
        masks,
        regular_ids: alive,
        fraction,
    })
}

/// Default δ schedule of [`regular_points`].
pub const DEFAULT_DELTA_SCHEDULE: [f64; 3] = [0.2, 0.1, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstrainedMass {
    pub value: f64,
    pub unstrained: usize,
    pub packing_number: usize,
}

/// `ε^m · β_ε(E ∖ E(k,δ,ℓ))` with search radius 3ℓ.
pub fn unstrained_mass(subset: &Subset, m: usize, k: usize, delta: f64, ell: f64, eps: f64) -> Result<UnstrainedMass> {
    let space = subset.space();
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    if let Some(h) = space.resolution {
        if eps < 2.0 * h * (1.0 - 1e-9) {
            return refuse(format!("eps = {eps} is below twice the sampling resolution {h}"));
        }
    }
    let mask = classify(subset, k, delta, ell, default_search_radius(ell))?;
    let rest: Vec<PointId> = subset
        .indices()
        .iter()
        .copied()
        .filter(|&x| !mask.contains(x))
        .collect();
    let beta = greedy_packing(&rest, eps, Separation::Closed, |a, b| space.dist(a, b)).len();
    Ok(UnstrainedMass {
        value: eps.powi(m as i32) * beta as f64,
        unstrained: rest.len(),
        packing_number: beta,
    })
}
