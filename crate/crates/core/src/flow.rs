//! Discrete gradient curves of distance functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{refuse, Error, Result};
use crate::space::{Curve, CurveKind, PointId, Space, Subset};

/// Parameters of a discrete gradient curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Inner radius of the candidate annulus and nominal step length.
    pub step: f64,
    /// Outer radius of the candidate annulus. Curves keep consecutive gaps
    /// within `1.5 · step` when this is at most `1.5 · step`.
    pub witness_radius: f64,
    pub max_steps: usize,
    /// Stop once the best directional derivative is at most this.
    pub stop_threshold: f64,
}

impl FlowConfig {
    /// Config with `witness_radius = 1.5 · step`, 100 steps, threshold 0.1.
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            witness_radius: 1.5 * step,
            max_steps: 100,
            stop_threshold: 0.1,
        }
    }

    pub fn check(&self, space: &Space) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Invalid(format!("step must be positive, got {}", self.step)));
        }
        if let Some(h) = space.resolution {
            if self.step < 2.0 * h * (1.0 - 1e-9) {
                return refuse(format!("step {} is below twice the resolution {h}", self.step));
            }
        }
        if self.witness_radius < self.step {
            return refuse(format!(
                "witness radius {} is below the step {}",
                self.witness_radius, self.step
            ));
        }
        Ok(())
    }
}

/// `−cos ∠̃ q x w`: the witness approximation of the derivative of
/// `dist_q` at `x` in the direction of `w`.
pub fn directional_derivative(space: &Space, q: PointId, x: PointId, w: PointId) -> Result<f64> {
    for id in [q, x, w] {
        space.check_id(id)?;
    }
    if x == q || w == x {
        return Err(Error::Invalid(format!(
            "directional derivative needs x != q and w != x, got q = {q}, x = {x}, w = {w}"
        )));
    }
    Ok(-space.angle_at(x, q, w)?.cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCurve {
    pub curve: Curve,
    /// Best directional derivative found at each visited point; the last
    /// entry is the one that stopped the curve (if it stopped).
    pub derivatives: Vec<f64>,
    /// Whether the curve ended at an approximately critical point rather
    /// than by exhausting `max_steps`.
    pub critical: bool,
}

/// Follows the steepest ascent of `dist_q` from `x0`: at each point move to
/// the annulus candidate `w` (`step ≤ d(x, w) ≤ witness_radius`) with the
/// largest directional derivative (lowest id on ties), and stop once that
/// derivative is at most `stop_threshold`.
pub fn gradient_curve(space: &Space, q: PointId, x0: PointId, cfg: &FlowConfig) -> Result<GradientCurve> {
    space.check_id(q)?;
    space.check_id(x0)?;
    if q == x0 {
        return Err(Error::Invalid("gradient curve cannot start at the source point".into()));
    }
    cfg.check(space)?;
    let mut points = vec![x0];
    let mut derivatives = Vec::new();
    let mut x = x0;
    let mut critical = false;
    for _ in 0..cfg.max_steps {
        let mut best: Option<(PointId, f64)> = None;
        for w in space.ids() {
            if w == x || w == q {
                continue;
            }
            let d = space.dist(x, w);
            if d < cfg.step || d > cfg.witness_radius {
                continue;
            }
            let g = -space.angle_at(x, q, w)?.cos();
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((w, g));
            }
        }
        let Some((w, g)) = best else {
            return Err(Error::Stalled {
                at: x,
                reason: format!(
                    "no candidates at distance [{}, {}] after {} steps",
                    cfg.step,
                    cfg.witness_radius,
                    points.len() - 1
                ),
            });
        };
        derivatives.push(g);
        if g <= cfg.stop_threshold {
            critical = true;
            break;
        }
        points.push(w);
        x = w;
    }
    Ok(GradientCurve {
        curve: Curve::new(points, cfg.step, CurveKind::Gradient),
        derivatives,
        critical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: PointId,
    pub steps: usize,
    /// Largest distance from a curve point to the subset.
    pub deviation: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub max_deviation: f64,
    pub outcomes: Vec<StartOutcome>,
}

/// Runs gradient curves of `dist_q` from each start and measures how far
/// they leave the subset.
pub fn extremal_invariance_test(subset: &Subset, q: PointId, starts: &[PointId], cfg: &FlowConfig) -> Result<InvarianceReport> {
    let space = subset.space();
    space.check_id(q)?;
    cfg.check(space)?;
    if let Some(&s) = starts.iter().find(|&&s| !subset.contains(s)) {
        return Err(Error::Invalid(format!("start {s} is not in the subset")));
    }
    let outcomes: Vec<StartOutcome> = starts
        .par_iter()
        .map(|&start| match gradient_curve(space, q, start, cfg) {
            Ok(g) => StartOutcome {
                start,
                steps: g.curve.points.len() - 1,
                deviation: g
                    .curve
                    .points
                    .iter()
                    .map(|&x| subset.dist_to(x))
                    .fold(0.0, f64::max),
                error: None,
            },
            Err(e) => StartOutcome {
                start,
                steps: 0,
                deviation: 0.0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(InvarianceReport {
        max_deviation: outcomes.iter().map(|o| o.deviation).fold(0.0, f64::max),
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBound {
    /// Smallest estimated `|∇ dist_E|` over the band.
    pub min_gradient: f64,
    pub argmin: Option<PointId>,
    pub points: usize,
    /// Set when the minimum falls below the stop threshold (a critical point
    /// of `dist_E`, such as the cut locus, sits in the band).
    pub flagged: bool,
}

/// Empirical lower bound of `|∇ dist_E|` on `{ x : inner ≤ d(x, E) ≤ outer }`.
///
/// At `x` the derivative of `dist_E` toward a witness `w` is the smallest
/// `−cos ∠̃ e x w` over the nearest subset points `e`, those within
/// `h²/d(x, E)` (the sampling error of the nearest distance) of the nearest
/// distance; the gradient norm is the best derivative over the annulus
/// witnesses.
pub fn dist_gradient_lower_bound(subset: &Subset, inner: f64, outer: f64, cfg: &FlowConfig) -> Result<GradientBound> {
    let space = subset.space();
    cfg.check(space)?;
    if let Some(h) = space.resolution {
        if inner < 2.0 * h * (1.0 - 1e-9) {
            return refuse(format!("inner radius {inner} is below twice the resolution {h}"));
        }
    }
    if !(outer >= inner) {
        return Err(Error::Invalid(format!("band [{inner}, {outer}] is empty")));
    }
    let h = space.resolution.unwrap_or(0.0);
    let band: Vec<(PointId, f64)> = space
        .ids()
        .filter(|&x| !subset.contains(x))
        .map(|x| (x, subset.dist_to(x)))
        .filter(|&(_, d)| d >= inner && d <= outer)
        .collect();
    if band.is_empty() {
        return Err(Error::Invalid(format!("no sample points in the band [{inner}, {outer}]")));
    }
    let grads: Vec<f64> = band
        .par_iter()
        .map(|&(x, dx)| {
            let nearest: Vec<PointId> = subset
                .indices()
                .iter()
                .copied()
                .filter(|&e| space.dist(x, e) <= dx + (h * h / dx).min(h))
                .collect();
            let mut best = f64::NEG_INFINITY;
            for w in space.ids() {
                let d = space.dist(x, w);
                if w == x || d < cfg.step || d > cfg.witness_radius {
                    continue;
                }
                let mut g = f64::INFINITY;
                for &e in &nearest {
                    if e == w {
                        g = -1.0;
                        break;
                    }
                    g = g.min(-space.angle_at(x, e, w)?.cos());
                }
                best = best.max(g);
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let (k, &min) = grads
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("band is nonempty");
    Ok(GradientBound {
        min_gradient: min,
        argmin: Some(band[k].0),
        points: band.len(),
        flagged: min < cfg.stop_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gen_pillow;
    use crate::space::Coords;

    fn plane(points: &[[f64; 2]]) -> Space {
        Space::euclidean("plane", 0.0, Coords::from_points(points))
    }

    #[test]
    fn derivative_examples() {
        let s = plane(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.5, 0.0], [1.0, 0.1], [1.01, 0.1]]);
        assert!((directional_derivative(&s, 0, 1, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((directional_derivative(&s, 0, 1, 3).unwrap() + 1.0).abs() < 1e-12);
        // exactly orthogonal
        assert!(directional_derivative(&s, 0, 1, 4).unwrap().abs() < 1e-12);
        // direction (0.01, 0.1) from x: sin(atan 0.1) at high precision
        assert!((directional_derivative(&s, 0, 1, 5).unwrap() - 0.099_503_719_020_998_9).abs() < 1e-12);
        assert!(directional_derivative(&s, 0, 0, 1).is_err());
        assert!(directional_derivative(&s, 0, 1, 1).is_err());
    }

    #[test]
    fn flat_grid_flow_moves_outward() {
        let pts: Vec<[f64; 2]> = (0..=20)
            .flat_map(|j| (0..=20).map(move |i| [i as f64 * 0.05, j as f64 * 0.05]))
            .collect();
        let s = plane(&pts).with_resolution(0.05);
        let q = 10 * 21 + 10;
        let x0 = 10 * 21 + 12;
        let g = gradient_curve(&s, q, x0, &FlowConfig::with_step(0.1)).unwrap();
        let d: Vec<f64> = g.curve.points.iter().map(|&x| s.dist(q, x)).collect();
        assert!(d.windows(2).all(|w| w[1] > w[0]));
        assert!(g.curve.points.len() > 3);
        assert!(g.critical);
        // from the far corner nothing goes further
        let corner = gradient_curve(&s, q, 0, &FlowConfig::with_step(0.1)).unwrap();
        assert_eq!(corner.curve.points, vec![0]);
    }

    #[test]
    fn pillow_flow_stops_at_the_corner() {
        let m = gen_pillow(1.0, 0.05).unwrap();
        let coords = m.space.coords().unwrap();
        let q = m
            .space
            .ids()
            .find(|&i| {
                let c = coords.get(i);
                (c[0] - 0.3).abs() < 1e-9 && (c[1] - 0.3).abs() < 1e-9 && c[2] == 0.0
            })
            .unwrap();
        let corner = m.space.subset_spec("corner0").unwrap().indices[0];
        let g = gradient_curve(&m.space, q, corner, &FlowConfig::with_step(0.1)).unwrap();
        assert_eq!(g.curve.points, vec![corner]);
    }

    #[test]
    fn config_preconditions() {
        let s = plane(&[[0.0, 0.0], [1.0, 0.0]]).with_resolution(0.1);
        assert!(gradient_curve(&s, 0, 1, &FlowConfig::with_step(0.1)).unwrap_err().is_refusal());
        let mut cfg = FlowConfig::with_step(0.3);
        cfg.witness_radius = 0.2;
        assert!(cfg.check(&s).unwrap_err().is_refusal());
    }

    #[test]
    fn isolated_point_stalls() {
        let s = plane(&[[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]);
        match gradient_curve(&s, 0, 1, &FlowConfig::with_step(0.1)) {
            Err(Error::Stalled { at, .. }) => assert_eq!(at, 1),
            other => panic!("expected a stall, got {other:?}"),
        }
    }
}
