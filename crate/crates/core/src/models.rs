//! Sampled model Alexandrov spaces with ground-truth annotations.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{greedy_packing, validate, Coords, ModelMetric, PointId, Separation, Space};

/// Ground truth attached to a generated space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelAnnotation {
    /// Exact Hausdorff measure per named subset (in its own dimension).
    pub exact_measure: BTreeMap<String, f64>,
    /// Subset the regular/singular ids refer to; `None` means the whole space.
    pub marked_subset: Option<String>,
    pub regular_ids: Vec<PointId>,
    pub singular_ids: Vec<PointId>,
    /// Further closed-form quantities (area, cone angle, ...).
    pub extras: BTreeMap<String, f64>,
}

/// A generated space with its annotation.
#[derive(Debug, Clone)]
pub struct Model {
    pub space: Space,
    pub annotation: ModelAnnotation,
}

/// Which part of a filled polygon's interior lattice is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Interior {
    #[default]
    Full,
    /// Only lattice points within `width` of the boundary.
    Collar { width: f64 },
    /// Boundary sample only.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolygonOptions {
    #[serde(default)]
    pub interior: Interior,
    /// Lattice pitch of the interior; defaults to the boundary pitch.
    #[serde(default)]
    pub interior_h: Option<f64>,
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("sampling pitch must be positive, got {h}")))
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Strictly convex polygon in counterclockwise order.
fn convex_ccw(vertices: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = vertices.len();
    if n < 3 {
        return Err(Error::Invalid(format!("a polygon needs at least 3 vertices, got {n}")));
    }
    let area2: f64 = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    let mut v = vertices.to_vec();
    if area2 < 0.0 {
        v.reverse();
    }
    let mut turning = 0.0;
    for i in 0..n {
        let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
        if cross(a, b, c) <= 1e-12 * norm([b[0] - a[0], b[1] - a[1]]).max(1.0).powi(2) {
            return Err(Error::Invalid(format!(
                "polygon is not strictly convex at vertex {}",
                (i + 1) % n
            )));
        }
        let e1 = [b[0] - a[0], b[1] - a[1]];
        let e2 = [c[0] - b[0], c[1] - b[1]];
        turning += (e1[0] * e2[1] - e1[1] * e2[0]).atan2(e1[0] * e2[0] + e1[1] * e2[1]);
    }
    if (turning - TAU).abs() > 1e-6 {
        return Err(Error::Invalid("polygon boundary winds more than once".into()));
    }
    Ok(v)
}

/// Filled convex polygon: arc-length boundary sample at pitch `h` (corners
/// included, ids first, counterclockwise from the first vertex) plus a
/// triangular lattice of the interior. Subset `boundary` is extremal.
pub fn gen_convex_polygon(vertices: &[[f64; 2]], h: f64, opts: PolygonOptions) -> Result<Model> {
    check_h(h)?;
    let v = convex_ccw(vertices)?;
    let n = v.len();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut corners = Vec::with_capacity(n);
    let mut perimeter = 0.0;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let len = norm([b[0] - a[0], b[1] - a[1]]);
        perimeter += len;
        let steps = (len / h - 1e-9).ceil().max(1.0) as usize;
        corners.push(pts.len());
        for k in 0..steps {
            let t = k as f64 / steps as f64;
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    let boundary: Vec<PointId> = (0..pts.len()).collect();

    let hi = opts.interior_h.unwrap_or(h);
    check_h(hi)?;
    if opts.interior != Interior::None {
        let inset = |p: [f64; 2]| {
            (0..n)
                .map(|i| {
                    let (a, b) = (v[i], v[(i + 1) % n]);
                    cross(a, b, p) / norm([b[0] - a[0], b[1] - a[1]])
                })
                .fold(f64::INFINITY, f64::min)
        };
        let cx = v.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = v.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        let (xmin, xmax) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
        let (ymin, ymax) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        // inset is 1-Lipschitz, so points far inside skip the edge scan
        let center_depth = inset([cx, cy]);
        let row = hi * 3f64.sqrt() / 2.0;
        let j_lo = ((ymin - cy) / row).floor() as i64 - 1;
        let j_hi = ((ymax - cy) / row).ceil() as i64 + 1;
        let i_lo = ((xmin - cx) / hi).floor() as i64 - 1;
        let i_hi = ((xmax - cx) / hi).ceil() as i64 + 1;
        for j in j_lo..=j_hi {
            let shift = if j.rem_euclid(2) == 1 { 0.5 * hi } else { 0.0 };
            for i in i_lo..=i_hi {
                let p = [cx + i as f64 * hi + shift, cy + j as f64 * row];
                if let Interior::Collar { width } = opts.interior {
                    if center_depth - norm([p[0] - cx, p[1] - cy]) > width {
                        continue;
                    }
                }
                let depth = inset(p);
                if depth < 0.5 * hi {
                    continue;
                }
                if let Interior::Collar { width } = opts.interior {
                    if depth > width {
                        continue;
                    }
                }
                pts.push(p);
            }
        }
    }

    let regular_ids: Vec<PointId> = boundary
        .iter()
        .copied()
        .filter(|&b| {
            corners
                .iter()
                .all(|&c| norm([pts[b][0] - pts[c][0], pts[b][1] - pts[c][1]]) > 2.0 * h * (1.0 + 1e-9))
        })
        .collect();
    let area = 0.5
        * (0..n)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % n]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>();
    let space = Space::euclidean(format!("polygon-{n}"), 0.0, Coords::from_points(&pts))
        .with_resolution(if opts.interior == Interior::None { h } else { h.max(hi) })
        .with_subset("boundary", boundary, true);
    let mut annotation = ModelAnnotation {
        marked_subset: Some("boundary".into()),
        regular_ids,
        singular_ids: corners,
        ..Default::default()
    };
    annotation.exact_measure.insert("boundary".into(), perimeter);
    annotation.extras.insert("area".into(), area);
    annotation.extras.insert("corners".into(), n as f64);
    Ok(Model { space, annotation })
}

/// Vertices of the regular `n`-gon inscribed in the circle of the given
/// radius about the origin, the first at polar angle `rotation`.
pub fn regular_polygon_vertices(n: usize, radius: f64, rotation: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let a = rotation + TAU * k as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Square `[0, side]²` with its first corner at the origin.
pub fn square_vertices(side: f64) -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]]
}

/// Euclidean cone of total angle `theta` up to `radius`, sampled on rings
/// of radius `j·h`; point 0 is the vertex, subset `vertex`.
pub fn gen_cone(theta: f64, radius: f64, h: f64) -> Result<Model> {
    check_h(h)?;
    if !(theta > 0.0 && theta <= TAU + 1e-12) {
        return Err(Error::Invalid(format!("cone angle must lie in (0, 2pi], got {theta}")));
    }
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("cone radius must be positive, got {radius}")));
    }
    let theta = theta.min(TAU);
    let rings = (radius / h + 1e-9).floor() as usize;
    let mut coords = vec![[0.0, 0.0]];
    for j in 1..=rings {
        let s = j as f64 * h;
        let m = (theta * s / h - 1e-9).ceil().max(1.0) as usize;
        for k in 0..m {
            coords.push([s, theta * k as f64 / m as f64]);
        }
    }
    let flat = (theta - TAU).abs() < 1e-12;
    let extremal = theta <= PI + 1e-12;
    let space = Space::model(
        format!("cone-{theta:.6}"),
        0.0,
        Coords::from_points(&coords),
        ModelMetric::Cone { theta },
    )
    .with_resolution(h)
    .with_subset("vertex", vec![0], extremal);
    let mut annotation = ModelAnnotation {
        marked_subset: Some("vertex".into()),
        ..Default::default()
    };
    if flat {
        annotation.regular_ids.push(0);
    } else {
        annotation.singular_ids.push(0);
    }
    annotation.exact_measure.insert("vertex".into(), 1.0);
    annotation.extras.insert("cone_angle".into(), theta);
    annotation.extras.insert("area".into(), 0.5 * theta * radius * radius);
    Ok(Model { space, annotation })
}

/// Double of the square `[0, side]²`: two grid-sampled sheets sharing their
/// boundary. Each corner is a one-point extremal subset `corner0..3`.
pub fn gen_pillow(side: f64, h: f64) -> Result<Model> {
    check_h(h)?;
    if !(side > 0.0) {
        return Err(Error::Invalid(format!("side must be positive, got {side}")));
    }
    let n = (side / h - 1e-9).ceil() as usize;
    let pitch = side / n as f64;
    let mut coords: Vec<[f64; 3]> = Vec::new();
    let mut corner_ids = Vec::new();
    for sheet in 0..2 {
        for j in 0..=n {
            for i in 0..=n {
                let on_boundary = i == 0 || j == 0 || i == n || j == n;
                if sheet == 1 && on_boundary {
                    continue;
                }
                if (i == 0 || i == n) && (j == 0 || j == n) {
                    corner_ids.push(coords.len());
                }
                coords.push([i as f64 * pitch, j as f64 * pitch, sheet as f64]);
            }
        }
    }
    // corners in counterclockwise order from the origin
    corner_ids.swap(2, 3);
    let mut space = Space::model(
        format!("pillow-{side}"),
        0.0,
        Coords::from_points(&coords),
        ModelMetric::Pillow { side },
    )
    .with_resolution(pitch);
    for (k, &c) in corner_ids.iter().enumerate() {
        space = space.with_subset(format!("corner{k}"), vec![c], true);
    }
    let mut annotation = ModelAnnotation {
        singular_ids: corner_ids,
        ..Default::default()
    };
    annotation.extras.insert("area".into(), 2.0 * side * side);
    annotation.extras.insert("corner_cone_angle".into(), PI);
    Ok(Model { space, annotation })
}

/// Round circle of the given length (curvature ≥ 1 when `length ≤ 2π`).
pub fn gen_circle(length: f64, h: f64) -> Result<Model> {
    check_h(h)?;
    if !(length > 0.0) {
        return Err(Error::Invalid(format!("length must be positive, got {length}")));
    }
    let n = (length / h - 1e-9).ceil().max(3.0) as usize;
    let coords: Vec<[f64; 1]> = (0..n).map(|k| [length * k as f64 / n as f64]).collect();
    let kappa = if length <= TAU + 1e-12 { 1.0 } else { 0.0 };
    let space = Space::model(
        format!("circle-{length}"),
        kappa,
        Coords::from_points(&coords),
        ModelMetric::Circle { length },
    )
    .with_resolution(length / n as f64)
    .with_subset("all", (0..n).collect(), true);
    let mut annotation = ModelAnnotation::default();
    annotation.exact_measure.insert("all".into(), length);
    Ok(Model { space, annotation })
}

/// Two points at the given distance; with distance π this is `S⁰`.
pub fn gen_two_points(distance: f64) -> Result<Model> {
    if !(distance > 0.0 && distance <= PI) {
        return Err(Error::Invalid(format!("distance must lie in (0, pi], got {distance}")));
    }
    let space = Space::from_fn("two-points", 1.0, 2, |_, _| distance)
        .with_coords(Coords::from_points(&[[0.0], [distance]]))?;
    Ok(Model {
        space,
        annotation: ModelAnnotation::default(),
    })
}

/// Segment `[0, length]` sampled at pitch at most `h`; subset `all`.
pub fn gen_segment(length: f64, h: f64) -> Result<Model> {
    check_h(h)?;
    if !(length > 0.0) {
        return Err(Error::Invalid(format!("length must be positive, got {length}")));
    }
    let n = (length / h - 1e-9).ceil().max(1.0) as usize;
    let coords: Vec<[f64; 1]> = (0..=n).map(|k| [length * k as f64 / n as f64]).collect();
    let space = Space::euclidean(format!("segment-{length}"), 0.0, Coords::from_points(&coords))
        .with_resolution(length / n as f64)
        .with_subset("all", (0..=n).collect(), true)
        .with_subset("endpoints", vec![0, n], true);
    let mut annotation = ModelAnnotation {
        marked_subset: Some("all".into()),
        regular_ids: (1..n).collect(),
        singular_ids: vec![0, n],
        ..Default::default()
    };
    annotation.exact_measure.insert("all".into(), length);
    Ok(Model { space, annotation })
}

/// Spherical suspension `S(base)` with levels `s = j·π/J` (pitch ≤ `h`).
/// Level `s` keeps a greedy `h / sin s`-separated subset of the base so the
/// sample stays roughly uniform; both poles are included (ids 0 and last).
pub fn gen_spherical_suspension(base: &Space, h: f64) -> Result<Model> {
    check_h(h)?;
    if base.kappa < 1.0 {
        return Err(Error::Invalid(format!(
            "base must have curvature >= 1, got {}",
            base.kappa
        )));
    }
    if base.is_empty() {
        return Err(Error::Invalid("base space is empty".into()));
    }
    let diam = base.diameter();
    if diam > PI + 1e-9 {
        return Err(Error::Invalid(format!("base diameter {diam} exceeds pi")));
    }
    let report = validate(base);
    if !report.passed {
        return Err(Error::Invalid("base space fails validation".into()));
    }
    let levels = (PI / h - 1e-9).ceil() as usize;
    let pitch = PI / levels as f64;
    let base_ids: Vec<PointId> = base.ids().collect();
    let mut coords: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    for j in 1..levels {
        let s = j as f64 * pitch;
        let kept = greedy_packing(&base_ids, pitch / s.sin(), Separation::Closed, |a, b| base.dist(a, b));
        coords.extend(kept.into_iter().map(|x| [s, x as f64]));
    }
    coords.push([PI, 0.0]);
    let last = coords.len() - 1;
    let space = Space::model(
        format!("suspension-{}", base.name),
        1.0,
        Coords::from_points(&coords),
        ModelMetric::Suspension {
            base: Box::new(base.clone()),
        },
    )
    .with_resolution(pitch)
    .with_subset("poles", vec![0, last], false);
    let mut annotation = ModelAnnotation::default();
    annotation.extras.insert("pole_distance".into(), PI);
    Ok(Model { space, annotation })
}

/// Serializable description of a generator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    Polygon {
        vertices: Vec<[f64; 2]>,
        h: f64,
        #[serde(default, flatten)]
        options: PolygonOptions,
    },
    RegularPolygon {
        n: usize,
        #[serde(default = "unit")]
        radius: f64,
        #[serde(default)]
        rotation: f64,
        h: f64,
        #[serde(default, flatten)]
        options: PolygonOptions,
    },
    Square {
        #[serde(default = "unit")]
        side: f64,
        h: f64,
        #[serde(default, flatten)]
        options: PolygonOptions,
    },
    Cone {
        theta: f64,
        #[serde(default = "unit")]
        radius: f64,
        h: f64,
    },
    Pillow {
        #[serde(default = "unit")]
        side: f64,
        h: f64,
    },
    Circle {
        length: f64,
        h: f64,
    },
    Segment {
        #[serde(default = "unit")]
        length: f64,
        h: f64,
    },
    TwoPoints {
        distance: f64,
    },
    Suspension {
        base: Box<GeneratorSpec>,
        h: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Model> {
        match self {
            GeneratorSpec::Polygon { vertices, h, options } => gen_convex_polygon(vertices, *h, *options),
            GeneratorSpec::RegularPolygon {
                n,
                radius,
                rotation,
                h,
                options,
            } => {
                if *n < 3 {
                    return Err(Error::Invalid(format!("a polygon needs at least 3 vertices, got {n}")));
                }
                let mut model = gen_convex_polygon(&regular_polygon_vertices(*n, *radius, *rotation), *h, *options)?;
                model.space.name = format!("regular-{n}-gon");
                Ok(model)
            }
            GeneratorSpec::Square { side, h, options } => {
                let mut model = gen_convex_polygon(&square_vertices(*side), *h, *options)?;
                model.space.name = format!("square-{side}");
                Ok(model)
            }
            GeneratorSpec::Cone { theta, radius, h } => gen_cone(*theta, *radius, *h),
            GeneratorSpec::Pillow { side, h } => gen_pillow(*side, *h),
            GeneratorSpec::Circle { length, h } => gen_circle(*length, *h),
            GeneratorSpec::Segment { length, h } => gen_segment(*length, *h),
            GeneratorSpec::TwoPoints { distance } => gen_two_points(*distance),
            GeneratorSpec::Suspension { base, h } => {
                let base = base.generate()?;
                gen_spherical_suspension(&base.space, *h)
            }
        }
    }
}

/// Correspondence between the `boundary` subsets of two polygon models:
/// each boundary point of `from` goes to the boundary point of `to` nearest
/// to its image under `transform` (lowest id on ties).
pub fn boundary_pairing_by(
    from: &Model,
    to: &Model,
    transform: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<Vec<(PointId, PointId)>> {
    let (fc, tc) = match (from.space.coords(), to.space.coords()) {
        (Some(a), Some(b)) if a.dim() == 2 && b.dim() == 2 => (a, b),
        _ => return Err(Error::Invalid("pairing needs planar coordinates on both sides".into())),
    };
    let src = &from.space.subset_spec("boundary")?.indices;
    let dst = &to.space.subset_spec("boundary")?.indices;
    Ok(src
        .iter()
        .map(|&x| {
            let p = transform([fc.get(x)[0], fc.get(x)[1]]);
            let mut best = (dst[0], f64::INFINITY);
            for &y in dst {
                let q = tc.get(y);
                let d = (p[0] - q[0]).hypot(p[1] - q[1]);
                if d < best.1 {
                    best = (y, d);
                }
            }
            (x, best.0)
        })
        .collect())
}

/// Pairing of boundary samples at equal normalized arc length, both
/// measured counterclockwise from the first vertex.
pub fn arc_length_pairing(from: &Model, to: &Model) -> Result<Vec<(PointId, PointId)>> {
    let fractions = |m: &Model| -> Result<(Vec<PointId>, Vec<f64>)> {
        let ids = m.space.subset_spec("boundary")?.indices.clone();
        let mut acc = vec![0.0];
        for w in ids.windows(2) {
            acc.push(acc.last().unwrap() + m.space.dist(w[0], w[1]));
        }
        let total = acc.last().unwrap() + m.space.dist(*ids.last().unwrap(), ids[0]);
        Ok((ids, acc.into_iter().map(|a| a / total).collect()))
    };
    let (src, fs) = fractions(from)?;
    let (dst, ft) = fractions(to)?;
    Ok(src
        .iter()
        .zip(&fs)
        .map(|(&x, &f)| {
            let circ = |t: f64| (t - f).abs().min(1.0 - (t - f).abs());
            let k = (0..dst.len())
                .min_by(|&a, &b| circ(ft[a]).total_cmp(&circ(ft[b])))
                .expect("boundary is nonempty");
            (x, dst[k])
        })
        .collect())
}
