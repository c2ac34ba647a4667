//! Finite metric spaces, marked subsets with their induced intrinsic metric,
//! and the measurement layer built on packing numbers.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{refuse, Error, Result};
use crate::kplane::{comparison_angle, DegenerateMode, KappaTriangle};

pub type PointId = usize;

/// Seed for the random triples drawn by [`validate`] on large spaces.
pub const DEFAULT_SEED: u64 = 0x5eed_a1e8;

/// Largest space whose triangle inequality is checked exhaustively.
const EXHAUSTIVE_TRIANGLE_LIMIT: usize = 300;
const SAMPLED_TRIPLES: usize = 100_000;
/// Relative slack for metric-axiom checks on floating point data.
const METRIC_TOL: f64 = 1e-9;

/// Flat per-point coordinates. Provenance only, except for spaces whose
/// metric is declared Euclidean in these coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Coords {
    dim: usize,
    data: Vec<f64>,
}

impl Coords {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Self {
        Self {
            dim: D,
            data: points.iter().flatten().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: PointId) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
enum MetricStore {
    /// Full row-major `n × n` matrix.
    Dense(Vec<f64>),
    /// Euclidean distance between the coordinate tuples.
    Euclidean,
    /// Closed-form distance of a model space evaluated on the coordinates.
    Model(ModelMetric),
}

/// Closed-form metrics of model spaces, read from point coordinates.
#[derive(Debug, Clone)]
pub enum ModelMetric {
    /// Euclidean cone of total angle `theta`; coordinates `(s, φ)`.
    Cone { theta: f64 },
    /// Double of the square `[0, side]²`; coordinates `(x, y, sheet)`.
    Pillow { side: f64 },
    /// Round circle of the given length; coordinate `t ∈ [0, length)`.
    Circle { length: f64 },
    /// Spherical suspension of `base`; coordinates `(s, base id)`.
    Suspension { base: Box<Space> },
}

impl ModelMetric {
    fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        // a fixed argument order makes the formulas bitwise symmetric
        let (a, b) = if a.iter().partial_cmp(b.iter()) == Some(Ordering::Greater) {
            (b, a)
        } else {
            (a, b)
        };
        match self {
            ModelMetric::Cone { theta } => {
                let dphi = (a[1] - b[1]).abs();
                let gap = dphi.min(theta - dphi).clamp(0.0, std::f64::consts::PI);
                // law of cosines in half-angle form
                let (s, t) = (a[0], b[0]);
                let sq = (s - t).powi(2) + 4.0 * s * t * (0.5 * gap).sin().powi(2);
                sq.max(0.0).sqrt()
            }
            ModelMetric::Pillow { side } => pillow_dist(*side, a, b),
            ModelMetric::Circle { length } => {
                let d = (a[0] - b[0]).abs();
                d.min(length - d)
            }
            ModelMetric::Suspension { base } => {
                let (s, t) = (a[0], b[0]);
                let pole = |x: f64| x <= 0.0 || x >= std::f64::consts::PI;
                let dbase = if pole(s) || pole(t) {
                    0.0
                } else {
                    base.dist(a[1] as usize, b[1] as usize)
                };
                let hav = (0.5 * (s - t)).sin().powi(2) + s.sin() * t.sin() * (0.5 * dbase).sin().powi(2);
                2.0 * hav.clamp(0.0, 1.0).sqrt().asin()
            }
        }
    }
}

/// Distance on the double of `[0, side]²`. A shortest path between the
/// sheets crosses the boundary once, so it minimizes `|pz| + |zq|` over
/// boundary points `z`; on each side that sum is convex in `z` and its
/// minimizer is the mirror-image crossing clamped to the side.
fn pillow_dist(side: f64, a: &[f64], b: &[f64]) -> f64 {
    let on_boundary = |p: &[f64]| {
        let tol = 1e-12 * side.max(1.0);
        p[0] <= tol || p[1] <= tol || p[0] >= side - tol || p[1] >= side - tol
    };
    let euclid = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let (p, q) = ([a[0], a[1]], [b[0], b[1]]);
    if a[2] == b[2] || on_boundary(a) || on_boundary(b) {
        return euclid(p, q);
    }
    let mut best = f64::INFINITY;
    // each side as (axis held fixed, its value)
    for (axis, value) in [(0usize, 0.0), (0, side), (1, 0.0), (1, side)] {
        let other = 1 - axis;
        let (dp, dq) = ((p[axis] - value).abs(), (q[axis] - value).abs());
        let t = if dp + dq > 0.0 {
            p[other] + (q[other] - p[other]) * dp / (dp + dq)
        } else {
            p[other]
        };
        let mut z = [0.0; 2];
        z[axis] = value;
        z[other] = t.clamp(0.0, side);
        best = best.min(euclid(p, z) + euclid(z, q));
    }
    best
}

/// A named subset stored with a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub indices: Vec<PointId>,
    pub extremal: bool,
}

/// A finite metric space with a declared lower curvature bound κ.
#[derive(Debug, Clone)]
pub struct Space {
    pub name: String,
    pub kappa: f64,
    /// Sampling pitch `h`: intended Hausdorff distance between the sample
    /// and the idealized space.
    pub resolution: Option<f64>,
    pub subsets: Vec<SubsetSpec>,
    n: usize,
    coords: Option<Coords>,
    metric: MetricStore,
}

impl Space {
    /// Space whose metric is the Euclidean distance of `coords`.
    pub fn euclidean(name: impl Into<String>, kappa: f64, coords: Coords) -> Self {
        Self {
            name: name.into(),
            kappa,
            resolution: None,
            subsets: Vec::new(),
            n: coords.len(),
            coords: Some(coords),
            metric: MetricStore::Euclidean,
        }
    }

    /// Space from a full row-major `n × n` matrix. Nothing is checked here;
    /// run [`validate`] on the result.
    pub fn from_matrix(name: impl Into<String>, kappa: f64, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Invalid(format!(
                "matrix has {} entries, expected {}",
                data.len(),
                n * n
            )));
        }
        Ok(Self {
            name: name.into(),
            kappa,
            resolution: None,
            subsets: Vec::new(),
            n,
            coords: None,
            metric: MetricStore::Dense(data),
        })
    }

    /// Dense space whose symmetric matrix is filled from `f(i, j)` for `i > j`.
    pub fn from_fn(
        name: impl Into<String>,
        kappa: f64,
        n: usize,
        f: impl Fn(PointId, PointId) -> f64 + Sync,
    ) -> Self {
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = match i.cmp(&j) {
                    Ordering::Greater => f(i, j),
                    Ordering::Less => f(j, i),
                    Ordering::Equal => 0.0,
                };
            }
        });
        Self {
            name: name.into(),
            kappa,
            resolution: None,
            subsets: Vec::new(),
            n,
            coords: None,
            metric: MetricStore::Dense(data),
        }
    }

    /// Space with a closed-form model metric on `coords`.
    pub fn model(name: impl Into<String>, kappa: f64, coords: Coords, metric: ModelMetric) -> Self {
        Self {
            name: name.into(),
            kappa,
            resolution: None,
            subsets: Vec::new(),
            n: coords.len(),
            coords: Some(coords),
            metric: MetricStore::Model(metric),
        }
    }

    pub fn with_resolution(mut self, h: f64) -> Self {
        self.resolution = Some(h);
        self
    }

    /// Attaches provenance coordinates to a matrix-backed space.
    pub fn with_coords(mut self, coords: Coords) -> Result<Self> {
        if !matches!(self.metric, MetricStore::Dense(_)) {
            return Err(Error::Invalid(
                "coordinates of a space with a coordinate metric cannot be replaced".into(),
            ));
        }
        if coords.len() != self.n {
            return Err(Error::Invalid(format!(
                "{} coordinate tuples for {} points",
                coords.len(),
                self.n
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn with_subset(mut self, name: impl Into<String>, indices: Vec<PointId>, extremal: bool) -> Self {
        self.subsets.push(SubsetSpec {
            name: name.into(),
            indices,
            extremal,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn ids(&self) -> std::ops::Range<PointId> {
        0..self.n
    }

    pub fn coords(&self) -> Option<&Coords> {
        self.coords.as_ref()
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.metric, MetricStore::Euclidean)
    }

    /// Copy of the space with its metric frozen into a dense matrix.
    pub fn to_dense(&self) -> Space {
        let mut out = Space::from_fn(self.name.clone(), self.kappa, self.n, |i, j| self.dist(i, j));
        out.resolution = self.resolution;
        out.subsets = self.subsets.clone();
        out.coords = self.coords.clone();
        out
    }

    #[inline]
    pub fn dist(&self, i: PointId, j: PointId) -> f64 {
        match &self.metric {
            MetricStore::Dense(m) => m[i * self.n + j],
            MetricStore::Euclidean => {
                let c = self.coords.as_ref().expect("euclidean space has coordinates");
                c.get(i)
                    .iter()
                    .zip(c.get(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            }
            MetricStore::Model(m) => {
                let c = self.coords.as_ref().expect("model space has coordinates");
                m.dist(c.get(i), c.get(j))
            }
        }
    }

    pub fn check_id(&self, i: PointId) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(Error::UnknownId(i))
        }
    }

    pub fn subset_spec(&self, name: &str) -> Result<&SubsetSpec> {
        self.subsets
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Invalid(format!("space `{}` has no subset `{name}`", self.name)))
    }

    /// Comparison angle `∠̃ a p b` at curvature κ of this space, with the
    /// zero convention when no comparison triangle exists.
    pub fn angle_at(&self, p: PointId, a: PointId, b: PointId) -> Result<f64> {
        let tri = KappaTriangle::new(self.kappa, self.dist(p, a), self.dist(p, b), self.dist(a, b));
        comparison_angle(tri, DegenerateMode::Zero)
    }

    pub fn diameter_of(&self, indices: &[PointId]) -> f64 {
        let mut diam: f64 = 0.0;
        for (k, &i) in indices.iter().enumerate() {
            for &j in &indices[k + 1..] {
                diam = diam.max(self.dist(i, j));
            }
        }
        diam
    }

    pub fn diameter(&self) -> f64 {
        let all: Vec<PointId> = self.ids().collect();
        self.diameter_of(&all)
    }

    /// Strict lower triangle, row-major (`(1,0), (2,0), (2,1), ...`).
    pub fn lower_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            for j in 0..i {
                out.push(self.dist(i, j));
            }
        }
        out
    }

    /// Dense space from a strict lower triangle as written by [`Self::lower_triangle`].
    pub fn from_lower_triangle(name: impl Into<String>, kappa: f64, n: usize, lower: &[f64]) -> Result<Self> {
        let expected = n * n.saturating_sub(1) / 2;
        if lower.len() != expected {
            return Err(Error::Invalid(format!(
                "lower triangle has {} entries, expected {expected} for {n} points",
                lower.len()
            )));
        }
        let mut data = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in 0..i {
                data[i * n + j] = lower[k];
                data[j * n + i] = lower[k];
                k += 1;
            }
        }
        Self::from_matrix(name, kappa, n, data)
    }
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Ids of the worst violating pair or triple (empty when passed).
    pub worst: Vec<PointId>,
    /// Size of the worst violation (0 when passed).
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub points: usize,
    /// `"exhaustive"` or `"sampled"`.
    pub triangle_mode: String,
    pub triples_checked: u64,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Worst {
    ids: Vec<PointId>,
    amount: f64,
}

impl Worst {
    fn new() -> Self {
        Self { ids: Vec::new(), amount: 0.0 }
    }

    fn offer(&mut self, amount: f64, ids: &[PointId]) {
        if amount > self.amount {
            self.amount = amount;
            self.ids = ids.to_vec();
        }
    }

    fn into_check(self, name: &str) -> CheckResult {
        CheckResult {
            name: name.into(),
            passed: self.ids.is_empty(),
            worst: self.ids,
            violation: self.amount,
        }
    }
}

/// Checks the metric axioms and the κ diameter bound. Never mutates.
pub fn validate(space: &Space) -> ValidationReport {
    validate_with_seed(space, DEFAULT_SEED)
}

pub fn validate_with_seed(space: &Space, seed: u64) -> ValidationReport {
    let n = space.len();
    let mut diag = Worst::new();
    let mut positive = Worst::new();
    let mut symmetric = Worst::new();
    let mut finite = Worst::new();
    for i in 0..n {
        let d = space.dist(i, i);
        if d != 0.0 {
            diag.offer(d.abs().max(f64::MIN_POSITIVE), &[i]);
        }
        for j in 0..i {
            let (a, b) = (space.dist(i, j), space.dist(j, i));
            if !a.is_finite() || !b.is_finite() {
                finite.offer(1.0, &[j, i]);
                continue;
            }
            if a <= 0.0 || b <= 0.0 {
                positive.offer((-a.min(b)).max(f64::MIN_POSITIVE), &[j, i]);
            }
            let gap = (a - b).abs();
            if gap > METRIC_TOL * (1.0 + a.abs()) {
                symmetric.offer(gap, &[j, i]);
            }
        }
    }

    let mut triangle = Worst::new();
    let check_triple = |i: PointId, j: PointId, k: PointId, w: &mut Worst| {
        let lhs = space.dist(i, k);
        let rhs = space.dist(i, j) + space.dist(j, k);
        let excess = lhs - rhs;
        if excess > METRIC_TOL * (1.0 + lhs) {
            w.offer(excess, &[i, j, k]);
        }
    };
    let (mode, triples) = if n <= EXHAUSTIVE_TRIANGLE_LIMIT {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    check_triple(i, j, k, &mut triangle);
                }
            }
        }
        ("exhaustive", (n as u64).pow(3))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SAMPLED_TRIPLES {
            let (i, j, k) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            check_triple(i, j, k, &mut triangle);
        }
        ("sampled", SAMPLED_TRIPLES as u64)
    };

    let mut diameter = Worst::new();
    if space.kappa > 0.0 {
        let limit = std::f64::consts::PI / space.kappa.sqrt() + 1e-9;
        for i in 0..n {
            for j in 0..i {
                let d = space.dist(i, j);
                if d > limit {
                    diameter.offer(d - limit, &[j, i]);
                }
            }
        }
    }

    let checks = vec![
        diag.into_check("zero_diagonal"),
        finite.into_check("finite"),
        positive.into_check("positivity"),
        symmetric.into_check("symmetry"),
        triangle.into_check("triangle_inequality"),
        diameter.into_check("diameter_bound"),
    ];
    ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        points: n,
        triangle_mode: mode.into(),
        triples_checked: triples,
        checks,
    }
}

// ---------------------------------------------------------------------------
// balls

/// Open ball `{ q : d(p, q) < r }` over the whole space.
pub fn ball(space: &Space, p: PointId, r: f64) -> Result<Vec<PointId>> {
    space.check_id(p)?;
    if r < 0.0 {
        return Err(Error::Invalid(format!("negative radius {r}")));
    }
    Ok(space.ids().filter(|&q| space.dist(p, q) < r).collect())
}

/// Open ball restricted to `indices`.
pub fn ball_within(space: &Space, indices: &[PointId], p: PointId, r: f64) -> Result<Vec<PointId>> {
    space.check_id(p)?;
    if r < 0.0 {
        return Err(Error::Invalid(format!("negative radius {r}")));
    }
    Ok(indices.iter().copied().filter(|&q| space.dist(p, q) < r).collect())
}

// ---------------------------------------------------------------------------
// subsets and the intrinsic metric

#[derive(Debug)]
struct LinkGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
    component: Vec<usize>,
    component_count: usize,
}

/// Summary of the link graph behind an intrinsic metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub points: usize,
    pub link_radius: f64,
    pub edges: usize,
    pub components: usize,
    /// Unordered pairs at infinite intrinsic distance.
    pub disconnected_pairs: u64,
}

/// A marked subset `E` of a space with its lazily computed intrinsic metric
/// `d_E`, the shortest-path metric of the graph joining points at extrinsic
/// distance at most `link_radius`.
///
/// Rows of `d_E` are memoized one source at a time; concurrent first access
/// computes the same row and only one copy is kept.
#[derive(Debug)]
pub struct Subset<'a> {
    space: &'a Space,
    indices: Vec<PointId>,
    local: HashMap<PointId, usize>,
    pub extremal_claim: bool,
    link_radius: f64,
    graph: OnceLock<LinkGraph>,
    rows: Vec<OnceLock<Vec<f64>>>,
}

impl<'a> Subset<'a> {
    pub fn new(space: &'a Space, indices: Vec<PointId>, extremal_claim: bool, link_radius: f64) -> Result<Self> {
        if !(link_radius > 0.0) {
            return Err(Error::Invalid(format!("link radius must be positive, got {link_radius}")));
        }
        let mut indices = indices;
        indices.sort_unstable();
        indices.dedup();
        for &i in &indices {
            space.check_id(i)?;
        }
        let local = indices.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let rows = (0..indices.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            space,
            indices,
            local,
            extremal_claim,
            link_radius,
            graph: OnceLock::new(),
            rows,
        })
    }

    /// Subset stored under `name` in the space; link radius defaults to `3h`.
    pub fn named(space: &'a Space, name: &str, link_radius: Option<f64>) -> Result<Self> {
        let spec = space.subset_spec(name)?;
        let radius = match link_radius {
            Some(r) => r,
            None => default_link_radius(space)?,
        };
        Self::new(space, spec.indices.clone(), spec.extremal, radius)
    }

    /// The whole space as a subset of itself.
    pub fn whole(space: &'a Space, link_radius: Option<f64>) -> Result<Self> {
        let radius = match link_radius {
            Some(r) => r,
            None => default_link_radius(space)?,
        };
        Self::new(space, space.ids().collect(), true, radius)
    }

    pub fn space(&self) -> &'a Space {
        self.space
    }

    pub fn indices(&self) -> &[PointId] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn link_radius(&self) -> f64 {
        self.link_radius
    }

    pub fn contains(&self, p: PointId) -> bool {
        self.local.contains_key(&p)
    }

    fn local_index(&self, p: PointId) -> Result<usize> {
        self.local
            .get(&p)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("point {p} is not in the subset")))
    }

    fn graph(&self) -> &LinkGraph {
        self.graph.get_or_init(|| {
            let n = self.indices.len();
            let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
                .into_par_iter()
                .map(|a| {
                    let pa = self.indices[a];
                    (0..n)
                        .filter(|&b| b != a)
                        .filter_map(|b| {
                            let d = self.space.dist(pa, self.indices[b]);
                            (d <= self.link_radius).then_some((b, d))
                        })
                        .collect()
                })
                .collect();
            let mut component = vec![usize::MAX; n];
            let mut count = 0;
            for start in 0..n {
                if component[start] != usize::MAX {
                    continue;
                }
                let mut stack = vec![start];
                component[start] = count;
                while let Some(v) = stack.pop() {
                    for &(w, _) in &neighbors[v] {
                        if component[w] == usize::MAX {
                            component[w] = count;
                            stack.push(w);
                        }
                    }
                }
                count += 1;
            }
            LinkGraph {
                neighbors,
                component,
                component_count: count,
            }
        })
    }

    /// Link-graph neighbors of a subset point (point ids).
    pub fn link_neighbors(&self, p: PointId) -> Result<Vec<PointId>> {
        let a = self.local_index(p)?;
        Ok(self.graph().neighbors[a].iter().map(|&(b, _)| self.indices[b]).collect())
    }

    fn dijkstra(&self, source: usize) -> (Vec<f64>, Vec<usize>) {
        let graph = self.graph();
        let n = self.indices.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry(0.0, source));
        while let Some(HeapEntry(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(w, len) in &graph.neighbors[v] {
                let nd = d + len;
                if nd < dist[w] {
                    dist[w] = nd;
                    pred[w] = v;
                    heap.push(HeapEntry(nd, w));
                }
            }
        }
        (dist, pred)
    }

    fn row(&self, a: usize) -> &[f64] {
        self.rows[a].get_or_init(|| self.dijkstra(a).0)
    }

    /// Intrinsic distance `d_E(x, y)`; `+∞` across link-graph components.
    pub fn intrinsic(&self, x: PointId, y: PointId) -> Result<f64> {
        let a = self.local_index(x)?;
        let b = self.local_index(y)?;
        Ok(self.row(a)[b])
    }

    /// Intrinsic distances from `x` to every subset point, in `indices()` order.
    pub fn intrinsic_row(&self, x: PointId) -> Result<&[f64]> {
        let a = self.local_index(x)?;
        Ok(self.row(a))
    }

    /// Computes and memoizes the full `d_E` matrix.
    pub fn intrinsic_metric(&self) -> IntrinsicReport {
        (0..self.indices.len()).into_par_iter().for_each(|a| {
            self.row(a);
        });
        self.intrinsic_report()
    }

    /// Connectivity report of the link graph (does not compute `d_E`).
    pub fn intrinsic_report(&self) -> IntrinsicReport {
        let graph = self.graph();
        let mut sizes = vec![0u64; graph.component_count];
        for &c in &graph.component {
            sizes[c] += 1;
        }
        let total = self.indices.len() as u64;
        let same: u64 = sizes.iter().map(|s| s * s.saturating_sub(1) / 2).sum();
        IntrinsicReport {
            points: self.indices.len(),
            link_radius: self.link_radius,
            edges: graph.neighbors.iter().map(Vec::len).sum::<usize>() / 2,
            components: graph.component_count,
            disconnected_pairs: total * total.saturating_sub(1) / 2 - same,
        }
    }

    /// A shortest path of the link graph from `x` to `y`, endpoints included.
    pub fn intrinsic_path(&self, x: PointId, y: PointId) -> Result<Option<Vec<PointId>>> {
        let a = self.local_index(x)?;
        let b = self.local_index(y)?;
        let (dist, pred) = self.dijkstra(a);
        if !dist[b].is_finite() {
            return Ok(None);
        }
        let mut path = vec![b];
        let mut v = b;
        while v != a {
            v = pred[v];
            path.push(v);
        }
        path.reverse();
        Ok(Some(path.into_iter().map(|k| self.indices[k]).collect()))
    }

    /// Extrinsic distance from any point of the space to the subset.
    pub fn dist_to(&self, x: PointId) -> f64 {
        self.indices
            .iter()
            .map(|&e| self.space.dist(x, e))
            .fold(f64::INFINITY, f64::min)
    }

    /// Subset point nearest to `x` (lowest id on ties).
    pub fn nearest(&self, x: PointId) -> Option<(PointId, f64)> {
        let mut best: Option<(PointId, f64)> = None;
        for &e in &self.indices {
            let d = self.space.dist(x, e);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((e, d));
            }
        }
        best
    }
}

pub fn default_link_radius(space: &Space) -> Result<f64> {
    match space.resolution {
        Some(h) if h > 0.0 => Ok(3.0 * h),
        _ => refuse(format!(
            "space `{}` declares no resolution; pass a link radius explicitly",
            space.name
        )),
    }
}

#[derive(PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

// ---------------------------------------------------------------------------
// curves

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    Gradient,
    IntrinsicGeodesic,
    Generic,
}

/// An ordered polyline of sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<PointId>,
    pub step: f64,
    pub kind: CurveKind,
}

impl Curve {
    pub fn new(points: Vec<PointId>, step: f64, kind: CurveKind) -> Self {
        Self { points, step, kind }
    }

    pub fn gaps(&self, space: &Space) -> Vec<f64> {
        self.points.windows(2).map(|w| space.dist(w[0], w[1])).collect()
    }

    /// Cumulative arc length, starting at 0.
    pub fn arc_lengths(&self, space: &Space) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.points.len());
        out.push(0.0);
        for g in self.gaps(space) {
            acc += g;
            out.push(acc);
        }
        out
    }

    /// Checks that no consecutive gap exceeds `step · (1 + slack)`.
    pub fn check_steps(&self, space: &Space, slack: f64) -> Result<()> {
        for (k, g) in self.gaps(space).into_iter().enumerate() {
            if g > self.step * (1.0 + slack) {
                return Err(Error::Invalid(format!(
                    "gap {g} between curve points {k} and {} exceeds step {} by more than {slack}",
                    k + 1,
                    self.step
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// packing numbers

/// How two points count as ε-separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separation {
    /// `d > ε`.
    Strict,
    /// `d ≥ ε`, up to a relative rounding slack of 1e-9.
    Closed,
}

impl Separation {
    #[inline]
    pub fn separated(self, d: f64, eps: f64) -> bool {
        match self {
            Separation::Strict => d > eps,
            Separation::Closed => d >= eps * (1.0 - 1e-9),
        }
    }
}

/// Greedy maximal ε-separated set: scan `ids` in order and keep a point iff
/// it is separated from everything kept so far.
pub fn greedy_packing(
    ids: &[PointId],
    eps: f64,
    sep: Separation,
    dist: impl Fn(PointId, PointId) -> f64,
) -> Vec<PointId> {
    let mut chosen: Vec<PointId> = Vec::new();
    for &x in ids {
        if chosen.iter().all(|&c| sep.separated(dist(x, c), eps)) {
            chosen.push(x);
        }
    }
    chosen
}

pub const EXACT_PACKING_LIMIT: usize = 25;

/// Exact maximum ε-separated set by branch and bound (at most 25 points).
pub fn exact_packing(
    ids: &[PointId],
    eps: f64,
    sep: Separation,
    dist: impl Fn(PointId, PointId) -> f64,
) -> Result<Vec<PointId>> {
    let n = ids.len();
    if n > EXACT_PACKING_LIMIT {
        return refuse(format!(
            "exact packing is limited to {EXACT_PACKING_LIMIT} points, got {n}"
        ));
    }
    let mut conflict = vec![0u32; n];
    for a in 0..n {
        for b in 0..n {
            if a != b && !sep.separated(dist(ids[a], ids[b]), eps) {
                conflict[a] |= 1 << b;
            }
        }
    }
    fn search(cand: u32, chosen: u32, conflict: &[u32], best: &mut u32) {
        if chosen.count_ones() + cand.count_ones() <= best.count_ones() {
            return;
        }
        if cand == 0 {
            *best = chosen;
            return;
        }
        let v = cand.trailing_zeros() as usize;
        let bit = 1u32 << v;
        search(cand & !bit & !conflict[v], chosen | bit, conflict, best);
        search(cand & !bit, chosen, conflict, best);
    }
    let all = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best = 0u32;
    search(all, 0, &conflict, &mut best);
    Ok((0..n).filter(|&k| best & (1 << k) != 0).map(|k| ids[k]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PackingMode {
    /// Greedy lower bound.
    #[default]
    Greedy,
    /// Exact maximum; at most [`EXACT_PACKING_LIMIT`] points.
    Exact,
}

/// Packing number `β_ε`: size of a maximal set of points with pairwise
/// distances at least `eps`.
pub fn packing_number(space: &Space, indices: &[PointId], eps: f64) -> Result<usize> {
    packing_number_with(space, indices, eps, PackingMode::Greedy)
}

pub fn packing_number_with(space: &Space, indices: &[PointId], eps: f64, mode: PackingMode) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let dist = |a, b| space.dist(a, b);
    Ok(match mode {
        PackingMode::Greedy => greedy_packing(indices, eps, Separation::Closed, dist).len(),
        PackingMode::Exact => exact_packing(indices, eps, Separation::Closed, dist)?.len(),
    })
}

// ---------------------------------------------------------------------------
// Hausdorff measure and dimension estimates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Extrinsic,
    Intrinsic,
}

/// Scale at which the measure constants are calibrated.
pub const CALIBRATION_EPS: f64 = 0.05;
/// Sampling pitch of the calibration samples.
pub const CALIBRATION_PITCH: f64 = 0.01;

/// Constant `c_m` such that `c_m · ε^m · β_ε` estimates the m-dimensional
/// Hausdorff measure.
///
/// Calibrated once on periodic unit samples (circle of length 1, flat torus
/// with a triangular lattice) so that boundary effects do not enter.
pub fn calibration_constant(m: usize) -> Result<f64> {
    static C1: OnceLock<f64> = OnceLock::new();
    static C2: OnceLock<f64> = OnceLock::new();
    match m {
        0 => Ok(1.0),
        1 => Ok(*C1.get_or_init(|| {
            let n = (1.0 / CALIBRATION_PITCH).round() as usize;
            let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            let ids: Vec<PointId> = (0..n).collect();
            let beta = greedy_packing(&ids, CALIBRATION_EPS, Separation::Closed, |a, b| {
                let d = (xs[a] - xs[b]).abs();
                d.min(1.0 - d)
            })
            .len();
            1.0 / (CALIBRATION_EPS * beta as f64)
        })),
        2 => Ok(*C2.get_or_init(|| {
            let nx = (1.0 / CALIBRATION_PITCH).round() as usize;
            let row = CALIBRATION_PITCH * 3f64.sqrt() / 2.0;
            // even row count so the shifted rows close up periodically
            let ny = 2 * ((1.0 / row / 2.0).round() as usize);
            let (lx, ly) = (nx as f64 * CALIBRATION_PITCH, ny as f64 * row);
            let pts: Vec<(f64, f64)> = (0..ny)
                .flat_map(|j| {
                    let shift = if j % 2 == 1 { 0.5 * CALIBRATION_PITCH } else { 0.0 };
                    (0..nx).map(move |i| (i as f64 * CALIBRATION_PITCH + shift, j as f64 * row))
                })
                .collect();
            let ids: Vec<PointId> = (0..pts.len()).collect();
            let beta = greedy_packing(&ids, CALIBRATION_EPS, Separation::Closed, |a, b| {
                let dx = (pts[a].0 - pts[b].0).abs();
                let dy = (pts[a].1 - pts[b].1).abs();
                let (dx, dy) = (dx.min(lx - dx), dy.min(ly - dy));
                (dx * dx + dy * dy).sqrt()
            })
            .len();
            lx * ly / (CALIBRATION_EPS * CALIBRATION_EPS * beta as f64)
        })),
        _ => refuse(format!("measure estimates support m <= 2, got m = {m}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub m: usize,
    pub eps: f64,
    pub metric: MetricKind,
    pub packing_number: usize,
    pub calibration: f64,
    pub value: f64,
}

/// `c_m · ε^m · β_ε(E)` in the chosen metric of the subset.
pub fn hausdorff_measure_estimate(subset: &Subset, m: usize, eps: f64, metric: MetricKind) -> Result<MeasureEstimate> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    if let Some(h) = subset.space().resolution {
        if eps < 2.0 * h * (1.0 - 1e-9) {
            return refuse(format!(
                "eps = {eps} is below twice the sampling resolution {h}"
            ));
        }
    }
    let calibration = calibration_constant(m)?;
    let space = subset.space();
    let beta = match metric {
        MetricKind::Extrinsic => {
            greedy_packing(subset.indices(), eps, Separation::Closed, |a, b| space.dist(a, b)).len()
        }
        // `greedy_packing` calls `dist(candidate, chosen)`; reading the
        // chosen point's row keeps the number of Dijkstra runs at β.
        MetricKind::Intrinsic => greedy_packing(subset.indices(), eps, Separation::Closed, |x, c| {
            subset.intrinsic(c, x).expect("ids come from the subset")
        })
        .len(),
    };
    Ok(MeasureEstimate {
        m,
        eps,
        metric,
        packing_number: beta,
        calibration,
        value: calibration * eps.powi(m as i32) * beta as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual of the log-log fit.
    pub residual: f64,
    pub eps_grid: Vec<f64>,
    pub packing_numbers: Vec<usize>,
}

/// Least-squares slope of `log β_ε` against `log(1/ε)`.
pub fn packing_dimension_estimate(space: &Space, indices: &[PointId], eps_grid: &[f64]) -> Result<DimensionEstimate> {
    if eps_grid.len() < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 scales, got {}",
            eps_grid.len()
        )));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Invalid("scales must be positive and finite".into()));
    }
    let lo = eps_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_grid.iter().cloned().fold(0.0, f64::max);
    if hi < 10.0 * lo * (1.0 - 1e-9) {
        return Err(Error::Invalid(format!(
            "scales must span a decade, got [{lo}, {hi}]"
        )));
    }
    if let Some(h) = space.resolution {
        if lo < 2.0 * h * (1.0 - 1e-9) {
            return refuse(format!("scale {lo} is below twice the sampling resolution {h}"));
        }
    }
    let betas = eps_grid
        .iter()
        .map(|&e| packing_number(space, indices, e))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = eps_grid.iter().map(|e| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = betas.iter().map(|&b| (b.max(1) as f64).ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(DimensionEstimate {
        slope,
        intercept,
        residual,
        eps_grid: eps_grid.to_vec(),
        packing_numbers: betas,
    })
}

pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

// ---------------------------------------------------------------------------
// extremality

/// Number of exterior viewpoints sampled by [`extremality_check`].
pub const EXTREMALITY_QUERIES: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalityReport {
    pub passed: bool,
    pub angle_tol: f64,
    pub witness_radius: f64,
    pub queries: usize,
    pub minima_checked: usize,
    /// Largest `∠̃ q p w − π/2` seen.
    pub max_excess: f64,
    /// `(q, p, w)` realizing `max_excess`.
    pub worst: Option<[PointId; 3]>,
}

/// Witness test of extremality: every local minimum `p` of `dist_q|E`
/// (local in the link graph) must be critical for `dist_q`, i.e. no witness
/// `w` near `p` may see `q` at a comparison angle beyond `π/2 + angle_tol`.
///
/// Viewpoints `q` are exterior points at distance at least `witness_radius`
/// from `E`, thinned to at most [`EXTREMALITY_QUERIES`] in id order.
pub fn extremality_check(subset: &Subset, angle_tol: f64, witness_radius: f64) -> Result<ExtremalityReport> {
    if subset.is_empty() {
        return Err(Error::Invalid("extremality check on an empty subset".into()));
    }
    let space = subset.space();
    if let Some(h) = space.resolution {
        if witness_radius < 2.0 * h * (1.0 - 1e-9) {
            return refuse(format!(
                "witness radius {witness_radius} is below twice the resolution {h}"
            ));
        }
    }
    let exterior: Vec<PointId> = space
        .ids()
        .filter(|&q| !subset.contains(q) && subset.dist_to(q) >= witness_radius)
        .collect();
    let stride = exterior.len().div_ceil(EXTREMALITY_QUERIES).max(1);
    let queries: Vec<PointId> = exterior.iter().copied().step_by(stride).collect();

    let per_query: Vec<(usize, f64, Option<[PointId; 3]>)> = queries
        .par_iter()
        .map(|&q| {
            let mut checked = 0;
            let mut worst = f64::NEG_INFINITY;
            let mut arg = None;
            for &p in subset.indices() {
                let dq = space.dist(q, p);
                let neighbors = subset.link_neighbors(p).expect("p is in the subset");
                if neighbors.iter().any(|&n| space.dist(q, n) < dq) {
                    continue;
                }
                checked += 1;
                for w in space.ids() {
                    if w == p || w == q {
                        continue;
                    }
                    let dw = space.dist(p, w);
                    if dw > witness_radius {
                        continue;
                    }
                    let tri = KappaTriangle::new(space.kappa, dq, dw, space.dist(q, w));
                    let Ok(angle) = comparison_angle(tri, DegenerateMode::Zero) else {
                        continue;
                    };
                    let excess = angle - FRAC_PI_2;
                    if excess > worst {
                        worst = excess;
                        arg = Some([q, p, w]);
                    }
                }
            }
            (checked, worst, arg)
        })
        .collect();

    let mut report = ExtremalityReport {
        passed: true,
        angle_tol,
        witness_radius,
        queries: queries.len(),
        minima_checked: 0,
        max_excess: f64::NEG_INFINITY,
        worst: None,
    };
    for (checked, worst, arg) in per_query {
        report.minima_checked += checked;
        if worst > report.max_excess {
            report.max_excess = worst;
            report.worst = arg;
        }
    }
    if report.worst.is_none() {
        report.max_excess = 0.0;
    }
    report.passed = report.max_excess <= angle_tol;
    Ok(report)
}

/// Default criticality tolerance `0.05 + 2h / witness_radius`.
pub fn default_angle_tol(space: &Space, witness_radius: f64) -> f64 {
    0.05 + 2.0 * space.resolution.unwrap_or(0.0) / witness_radius
}
