//! Star-domain machinery for the unit square.
//!
//! The unit square is star-shaped about its center, so every non-center point
//! has a unique radial projection onto the boundary. Dirichlet data given on
//! the boundary is extended inward linearly along rays, which yields a
//! continuous lift that vanishes at the center and matches the data exactly on
//! the boundary. A polynomial cutoff supplies the factor that vanishes on the
//! boundary for the hard-constrained network ansatz.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary membership tolerance.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Default finite-difference step for boundary-lift derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Distance to the boundary of the unit square (for points inside it).
    pub fn dist_to_boundary(self) -> f64 {
        self.x.min(1.0 - self.x).min(self.y).min(1.0 - self.y)
    }

    pub fn in_unit_square(self) -> bool {
        (-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&self.x)
            && (-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&self.y)
    }

    pub fn on_boundary(self) -> bool {
        self.in_unit_square() && self.dist_to_boundary().abs() <= BOUNDARY_TOL
    }
}

/// Polar coordinates of a point relative to the star center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarAboutCenter {
    /// Angle in `[0, 2π)`.
    pub phi: f64,
    /// Distance to the center.
    pub rho: f64,
}

/// The unit square viewed as a star domain about `(1/2, 1/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareStarDomain {
    pub center: Point2,
    pub side: f64,
}

impl Default for SquareStarDomain {
    fn default() -> Self {
        SquareStarDomain {
            center: Point2::new(0.5, 0.5),
            side: 1.0,
        }
    }
}

impl SquareStarDomain {
    pub fn from_polar(&self, polar: PolarAboutCenter) -> Point2 {
        Point2::new(
            self.center.x + polar.rho * polar.phi.cos(),
            self.center.y + polar.rho * polar.phi.sin(),
        )
    }
}

/// Trapezoid ramp width `d`; the Landau-de Gennes boundary data uses `d = 3ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidParams {
    pub d: f64,
}

impl TrapezoidParams {
    pub fn new(d: f64) -> Result<Self> {
        if !(d > 0.0 && d < 0.5) {
            return Err(Error::domain(format!(
                "trapezoid width must lie in (0, 1/2), got {d}"
            )));
        }
        Ok(TrapezoidParams { d })
    }

    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(3.0 * epsilon)
    }
}

/// Value, gradient and Laplacian of a scalar field at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarJet {
    pub value: f64,
    pub gradient: [f64; 2],
    pub laplacian: f64,
}

/// Parameter-independent data of the hard-constraint composition at one point:
/// the boundary lift `Q̃_b` and the cutoff `ω`, each with derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConstants {
    pub lift: ScalarJet,
    pub omega: ScalarJet,
}

impl BoundaryConstants {
    /// Constants for an interior collocation point (finite-difference lift derivatives).
    pub fn interior(p: Point2, params: TrapezoidParams, h_fd: f64) -> Result<Self> {
        Ok(BoundaryConstants {
            lift: boundary_extension_derivs(p, params, h_fd)?,
            omega: cutoff_omega(p),
        })
    }

    /// Constants at a boundary point: `ω = 0`, lift equal to the boundary data.
    /// Derivatives of the lift are not needed there and are left at zero.
    pub fn on_boundary(s: Point2, params: TrapezoidParams) -> Result<Self> {
        Ok(BoundaryConstants {
            lift: ScalarJet {
                value: extend_boundary(s, params),
                ..ScalarJet::default()
            },
            omega: cutoff_omega(s),
        })
    }
}

pub fn polar_about_center(p: Point2, domain: &SquareStarDomain) -> Result<PolarAboutCenter> {
    let dx = p.x - domain.center.x;
    let dy = p.y - domain.center.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::AtCenter { x: p.x, y: p.y });
    }
    let mut phi = dy.atan2(dx);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi = 0.0;
    }
    Ok(PolarAboutCenter {
        phi,
        rho: dx.hypot(dy),
    })
}

/// Center-to-boundary distance of the unit square along direction `phi`.
pub fn rbd_square(phi: f64) -> f64 {
    1.0 / (2.0 * phi.cos().abs().max(phi.sin().abs()))
}

pub fn trapezoid(t: f64, params: TrapezoidParams) -> Result<f64> {
    if !(-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&t) {
        return Err(Error::domain(format!(
            "trapezoid argument {t} outside [0, 1]"
        )));
    }
    let t = t.clamp(0.0, 1.0);
    let d = params.d;
    Ok(if t <= d {
        t / d
    } else if t >= 1.0 - d {
        (1.0 - t) / d
    } else {
        1.0
    })
}

/// First component of the Landau-de Gennes boundary data: `T_d(x)` on the
/// horizontal edges, `-T_d(y)` on the vertical ones. The second component is 0.
pub fn boundary_q1(s: Point2, params: TrapezoidParams) -> Result<f64> {
    if !s.on_boundary() {
        return Err(Error::domain(format!(
            "({}, {}) is not on the boundary of the unit square",
            s.x, s.y
        )));
    }
    if s.y.abs() <= BOUNDARY_TOL || (1.0 - s.y).abs() <= BOUNDARY_TOL {
        trapezoid(s.x, params)
    } else {
        trapezoid(s.y, params).map(|v| -v)
    }
}

/// Radial projection of `p` onto the square boundary, together with the ratio
/// `ρ / r(φ)` of its distance to the center over the boundary distance.
/// Returns `None` at the center.
pub fn radial_projection(p: Point2) -> Option<(Point2, f64)> {
    let dx = p.x - 0.5;
    let dy = p.y - 0.5;
    let m = dx.abs().max(dy.abs());
    if m == 0.0 {
        return None;
    }
    let scale = 0.5 / m;
    // Snap the dominant coordinate so the projection sits exactly on an edge.
    let (bx, by) = if dx.abs() >= dy.abs() {
        (if dx > 0.0 { 1.0 } else { 0.0 }, 0.5 + dy * scale)
    } else {
        (0.5 + dx * scale, if dy > 0.0 { 1.0 } else { 0.0 })
    };
    Some((Point2::new(bx, by), 2.0 * m))
}

/// Radial extension of the boundary data with profile `h(t) = 1 - t`:
/// `Q̃_b(p) = Q_b(p_b) · ρ / r(φ)`, and 0 at the center.
pub fn extend_boundary(p: Point2, params: TrapezoidParams) -> f64 {
    match radial_projection(p) {
        None => 0.0,
        Some((pb, ratio)) => {
            boundary_q1(pb, params).expect("radial projection lands on the boundary") * ratio
        }
    }
}

fn dist_to_ray(p: Point2, dir: [f64; 2]) -> f64 {
    // Distance from p to the ray center + t·dir, t ≥ 0.
    let (dx, dy) = (p.x - 0.5, p.y - 0.5);
    let n = dir[0].hypot(dir[1]);
    let (ux, uy) = (dir[0] / n, dir[1] / n);
    let t = dx * ux + dy * uy;
    if t <= 0.0 {
        dx.hypot(dy)
    } else {
        (dx * uy - dy * ux).abs()
    }
}

/// Directions from the center through the trapezoid breakpoints on the edges.
fn breakpoint_rays(params: TrapezoidParams) -> [[f64; 2]; 8] {
    let d = params.d;
    let (a, b) = (d - 0.5, 0.5 - d);
    [
        [a, -0.5],
        [b, -0.5],
        [a, 0.5],
        [b, 0.5],
        [-0.5, a],
        [-0.5, b],
        [0.5, a],
        [0.5, b],
    ]
}

/// Checks that `p` is far enough from every set on which the boundary lift is
/// not smooth: the boundary, the center, the diagonals, and the rays through
/// the trapezoid breakpoints.
pub fn check_lift_smooth(p: Point2, params: TrapezoidParams, margin: f64) -> Result<()> {
    if p.dist_to_boundary() <= margin {
        return Err(Error::domain(format!(
            "({}, {}) lies within {margin} of the boundary",
            p.x, p.y
        )));
    }
    if p.dist(Point2::new(0.5, 0.5)) <= margin {
        return Err(Error::domain(format!(
            "({}, {}) lies within {margin} of the center",
            p.x, p.y
        )));
    }
    let diag = (p.x - p.y).abs().min((p.x + p.y - 1.0).abs()) * FRAC_1_SQRT_2;
    if diag <= margin {
        return Err(Error::domain(format!(
            "({}, {}) lies within {margin} of a diagonal kink line",
            p.x, p.y
        )));
    }
    for ray in breakpoint_rays(params) {
        if dist_to_ray(p, ray) <= margin {
            return Err(Error::domain(format!(
                "({}, {}) lies within {margin} of a trapezoid breakpoint ray",
                p.x, p.y
            )));
        }
    }
    Ok(())
}

/// Value (exact), gradient and Laplacian (second-order central differences)
/// of the boundary lift at an interior point.
pub fn boundary_extension_derivs(
    p: Point2,
    params: TrapezoidParams,
    h_fd: f64,
) -> Result<ScalarJet> {
    check_lift_smooth(p, params, 2.0 * h_fd)?;
    let f = |x: f64, y: f64| extend_boundary(Point2::new(x, y), params);
    let c = f(p.x, p.y);
    let (xp, xm) = (f(p.x + h_fd, p.y), f(p.x - h_fd, p.y));
    let (yp, ym) = (f(p.x, p.y + h_fd), f(p.x, p.y - h_fd));
    let h2 = h_fd * h_fd;
    Ok(ScalarJet {
        value: c,
        gradient: [(xp - xm) / (2.0 * h_fd), (yp - ym) / (2.0 * h_fd)],
        laplacian: ((xp - 2.0 * c + xm) + (yp - 2.0 * c + ym)) / h2,
    })
}

/// `ω(x, y) = 16·x(1−x)·y(1−y)` with closed-form derivatives.
pub fn cutoff_omega(p: Point2) -> ScalarJet {
    let (x, y) = (p.x, p.y);
    let bx = x * (1.0 - x);
    let by = y * (1.0 - y);
    ScalarJet {
        value: 16.0 * bx * by,
        gradient: [16.0 * (1.0 - 2.0 * x) * by, 16.0 * bx * (1.0 - 2.0 * y)],
        laplacian: -32.0 * (bx + by),
    }
}
