//! Trigonometry of the κ-plane, the complete simply connected surface of
//! constant curvature κ.
//!
//! Every formula is written through the generalized sine
//! `sn_κ(x) = sin(√κ x)/√κ` (resp. `x`, `sinh(√-κ x)/√-κ`) in half-angle
//! form, which stays accurate for thin and nearly flat triangles where the
//! plain law of cosines loses all of its digits.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Relative slack used for the existence tests and for clamping.
const CLAMP_TOL: f64 = 1e-12;

/// What to do when no comparison triangle exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateMode {
    /// Return [`Error::NoTriangle`].
    #[default]
    Error,
    /// Return an angle of 0 (convention for quasigeodesic comparison angles).
    Zero,
}

/// A triangle in the κ-plane given by side lengths.
///
/// The vertex of interest is `p`; `pq` and `pr` are the adjacent sides and
/// `qr` is the side opposite to `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaTriangle {
    pub kappa: f64,
    pub pq: f64,
    pub pr: f64,
    pub qr: f64,
}

impl KappaTriangle {
    pub fn new(kappa: f64, pq: f64, pr: f64, qr: f64) -> Self {
        Self { kappa, pq, pr, qr }
    }

    /// Returns `Err(reason)` naming the first violated existence condition.
    pub fn existence(&self) -> std::result::Result<(), String> {
        let sides = [self.pq, self.pr, self.qr];
        if sides.iter().any(|s| !s.is_finite()) {
            return Err("side length is not finite".into());
        }
        if sides.iter().any(|&s| s < 0.0) {
            return Err("negative side length".into());
        }
        let scale = sides.iter().cloned().fold(1.0, f64::max);
        let tol = CLAMP_TOL * scale;
        let [a, b, c] = sides;
        if a > b + c + tol || b > a + c + tol || c > a + b + tol {
            return Err(format!("triangle inequality fails for sides ({a}, {b}, {c})"));
        }
        if self.kappa > 0.0 {
            let limit = PI / self.kappa.sqrt();
            if sides.iter().any(|&s| s > limit + tol) {
                return Err(format!("side exceeds pi/sqrt(kappa) = {limit}"));
            }
            let perimeter = a + b + c;
            if perimeter > 2.0 * limit + tol {
                return Err(format!(
                    "perimeter {perimeter} exceeds 2*pi/sqrt(kappa) = {}",
                    2.0 * limit
                ));
            }
        }
        Ok(())
    }

    pub fn exists(&self) -> bool {
        self.existence().is_ok()
    }
}

/// Generalized sine `sn_κ`.
pub fn sn(kappa: f64, x: f64) -> f64 {
    if kappa > 0.0 {
        let s = kappa.sqrt();
        (s * x).sin() / s
    } else if kappa < 0.0 {
        let s = (-kappa).sqrt();
        (s * x).sinh() / s
    } else {
        x
    }
}

/// Inverse of `sn_κ` on `[0, π/(2√κ)]` (all of `[0, ∞)` when κ ≤ 0).
fn sn_inv(kappa: f64, y: f64) -> f64 {
    if kappa > 0.0 {
        let s = kappa.sqrt();
        (s * y).clamp(-1.0, 1.0).asin() / s
    } else if kappa < 0.0 {
        let s = (-kappa).sqrt();
        (s * y).asinh() / s
    } else {
        y
    }
}

/// Angle at `p` of the κ-plane triangle with the given sides, in `[0, π]`.
pub fn comparison_angle(tri: KappaTriangle, mode: DegenerateMode) -> Result<f64> {
    let KappaTriangle { kappa, pq, pr, qr } = tri;
    if pq == 0.0 || pr == 0.0 {
        return Err(Error::UndefinedAngle(
            "a side adjacent to the vertex has zero length".into(),
        ));
    }
    if let Err(why) = tri.existence() {
        return match mode {
            DegenerateMode::Error => Err(Error::NoTriangle(why)),
            DegenerateMode::Zero => Ok(0.0),
        };
    }
    // Ordered adjacent sides make the result exactly symmetric in them.
    let (short, long) = if pq <= pr { (pq, pr) } else { (pr, pq) };
    let den = sn(kappa, short) * sn(kappa, long);
    if den <= 0.0 {
        // κ > 0 and an adjacent side has length π/√κ: the vertex sits at the
        // antipode of another vertex and the angle is not determined.
        return Err(Error::UndefinedAngle(
            "adjacent side reaches pi/sqrt(kappa)".into(),
        ));
    }
    let gap = long - short;
    let num = sn(kappa, 0.5 * (qr - gap)) * sn(kappa, 0.5 * (qr + gap));
    let hav = num / den;
    if !(-CLAMP_TOL..=1.0 + CLAMP_TOL).contains(&hav) {
        return match mode {
            DegenerateMode::Error => Err(Error::NoTriangle(format!(
                "law of cosines argument out of range (haversine {hav})"
            ))),
            DegenerateMode::Zero => Ok(0.0),
        };
    }
    Ok(2.0 * hav.clamp(0.0, 1.0).sqrt().asin())
}

/// Shorthand for [`comparison_angle`] in error mode.
pub fn angle(kappa: f64, pq: f64, pr: f64, qr: f64) -> Result<f64> {
    comparison_angle(KappaTriangle::new(kappa, pq, pr, qr), DegenerateMode::Error)
}

/// Third side of the κ-plane triangle with sides `l1`, `l2` enclosing `angle`.
pub fn side_from_angle(kappa: f64, l1: f64, l2: f64, angle: f64) -> Result<f64> {
    if !(l1.is_finite() && l2.is_finite() && angle.is_finite()) {
        return Err(Error::Domain("non-finite input".into()));
    }
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Domain(format!("negative side ({l1}, {l2})")));
    }
    if !(-CLAMP_TOL..=PI + CLAMP_TOL).contains(&angle) {
        return Err(Error::Domain(format!("angle {angle} outside [0, pi]")));
    }
    if kappa > 0.0 {
        let limit = PI / kappa.sqrt();
        if l1 > limit * (1.0 + CLAMP_TOL) || l2 > limit * (1.0 + CLAMP_TOL) {
            return Err(Error::Domain(format!(
                "side exceeds pi/sqrt(kappa) = {limit}"
            )));
        }
    }
    let half = 0.5 * angle.clamp(0.0, PI);
    let hav = half.sin().powi(2);
    let d = sn(kappa, 0.5 * (l1 - l2));
    let rhs = d * d + sn(kappa, l1) * sn(kappa, l2) * hav;
    Ok(2.0 * sn_inv(kappa, rhs.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn tri(kappa: f64, pq: f64, pr: f64, qr: f64) -> KappaTriangle {
        KappaTriangle::new(kappa, pq, pr, qr)
    }

    #[test]
    fn euclidean_examples() {
        let a = comparison_angle(tri(0.0, 1.0, 1.0, 1.0), DegenerateMode::Error).unwrap();
        assert!((a - PI / 3.0).abs() < 1e-14);
        let a = comparison_angle(tri(0.0, 3.0, 4.0, 5.0), DegenerateMode::Error).unwrap();
        assert!((a - FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn spherical_octant() {
        let s = FRAC_PI_2;
        let a = comparison_angle(tri(1.0, s, s, s), DegenerateMode::Error).unwrap();
        assert!((a - FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn hyperbolic_equilateral_matches_high_precision_value() {
        // acos((cosh²1 − cosh1)/sinh²1) evaluated with 40-digit arithmetic.
        let expected = 0.918_797_872_178_027_4;
        let a = comparison_angle(tri(-1.0, 1.0, 1.0, 1.0), DegenerateMode::Error).unwrap();
        assert!((a - expected).abs() < 1e-14, "{a}");
    }

    #[test]
    fn degenerate_conventions() {
        let t = tri(0.0, 1.0, 1.0, 3.0);
        assert_eq!(comparison_angle(t, DegenerateMode::Zero).unwrap(), 0.0);
        assert!(matches!(
            comparison_angle(t, DegenerateMode::Error),
            Err(Error::NoTriangle(_))
        ));
        let t = tri(1.0, 2.5, 2.5, 2.5);
        match comparison_angle(t, DegenerateMode::Error) {
            Err(Error::NoTriangle(why)) => assert!(why.contains("perimeter"), "{why}"),
            other => panic!("expected perimeter violation, got {other:?}"),
        }
    }

    #[test]
    fn zero_adjacent_side_is_undefined_in_both_modes() {
        for mode in [DegenerateMode::Error, DegenerateMode::Zero] {
            assert!(matches!(
                comparison_angle(tri(0.0, 0.0, 1.0, 1.0), mode),
                Err(Error::UndefinedAngle(_))
            ));
        }
    }

    #[test]
    fn flat_triangles_hit_the_ends_of_the_range() {
        let a = comparison_angle(tri(0.0, 1.0, 1.0, 2.0), DegenerateMode::Error).unwrap();
        assert!((a - PI).abs() < 1e-7);
        let a = comparison_angle(tri(0.0, 1.0, 2.0, 1.0), DegenerateMode::Error).unwrap();
        assert!(a.abs() < 1e-7);
    }

    #[test]
    fn side_from_angle_examples() {
        assert!((side_from_angle(0.0, 3.0, 4.0, FRAC_PI_2).unwrap() - 5.0).abs() < 1e-14);
        assert!((side_from_angle(0.0, 1.0, 1.0, PI).unwrap() - 2.0).abs() < 1e-14);
        let s = FRAC_PI_2;
        assert!((side_from_angle(1.0, s, s, s).unwrap() - s).abs() < 1e-14);
        assert!(matches!(
            side_from_angle(1.0, 4.0, 1.0, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn small_kappa_is_continuous() {
        let (a, b, c) = (0.7, 0.9, 1.1);
        let flat = angle(0.0, a, b, c).unwrap();
        for k in [1e-6, -1e-6] {
            assert!((angle(k, a, b, c).unwrap() - flat).abs() < 1e-5);
        }
    }

    #[test]
    fn angle_increases_with_opposite_side() {
        for kappa in [-1.0, 0.0, 1.0] {
            let mut prev = -1.0;
            for i in 0..60 {
                let c = 0.21 + i as f64 * 0.02;
                let a = angle(kappa, 0.8, 0.6, c).unwrap();
                assert!(a > prev, "kappa {kappa}: {a} <= {prev}");
                prev = a;
            }
        }
    }
}
