//! Two-component Q-tensor fields sampled on the uniform `M × M` lattice of the
//! unit square, boundary rows included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boundary_q1, Point2, TrapezoidParams};

/// `(Q₁₁, Q₁₂)` on an `M × M` lattice with spacing `1/(M−1)`.
///
/// Storage is y-major: node `(i, j)` at `x = i·h`, `y = j·h` lives at index
/// `j·M + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QField {
    pub m: usize,
    pub q11: Vec<f64>,
    pub q12: Vec<f64>,
}

/// Loose physical sanity bound on `|Q|`.
pub const Q_NORM_BOUND: f64 = 1.1;

impl QField {
    pub fn zeros(m: usize) -> Self {
        QField {
            m,
            q11: vec![0.0; m * m],
            q12: vec![0.0; m * m],
        }
    }

    /// Zero interior with the exact Landau-de Gennes boundary data on the edges.
    pub fn with_boundary(m: usize, trap: TrapezoidParams) -> Result<Self> {
        if m < 3 {
            return Err(Error::domain(format!("lattice size {m} below 3")));
        }
        let mut q = QField::zeros(m);
        q.write_boundary(trap);
        Ok(q)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.m + i
    }

    /// Lattice coordinates as exact quotients, so node `(2i, 2j)` of a
    /// `2m − 1` lattice has the same coordinates as node `(i, j)` here.
    pub fn point(&self, i: usize, j: usize) -> Point2 {
        let d = (self.m - 1) as f64;
        Point2::new(i as f64 / d, j as f64 / d)
    }

    pub fn is_boundary_node(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.m - 1 || j == self.m - 1
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m;
        (0..m)
            .flat_map(move |j| (0..m).map(move |i| (i, j)))
            .filter(move |&(i, j)| i == 0 || j == 0 || i == m - 1 || j == m - 1)
    }

    pub fn write_boundary(&mut self, trap: TrapezoidParams) {
        let nodes: Vec<_> = self.boundary_nodes().collect();
        for (i, j) in nodes {
            let k = self.idx(i, j);
            self.q11[k] = boundary_q1(self.point(i, j), trap).expect("lattice edge node");
            self.q12[k] = 0.0;
        }
    }

    /// Largest deviation of the boundary rows from the Dirichlet data.
    pub fn boundary_deviation(&self, trap: TrapezoidParams) -> f64 {
        self.boundary_nodes()
            .map(|(i, j)| {
                let k = self.idx(i, j);
                let qb = boundary_q1(self.point(i, j), trap).expect("lattice edge node");
                (self.q11[k] - qb).abs().max(self.q12[k].abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.q11
            .iter()
            .zip(&self.q12)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.q11.iter().chain(&self.q12).all(|v| v.is_finite())
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let h = self.spacing();
        let edge = |k: usize| if k == 0 || k == self.m - 1 { 0.5 } else { 1.0 };
        h * h * edge(i) * edge(j)
    }

    /// Trapezoidal `∫ f(Q11, Q12) dx` over the unit square.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.m {
            for i in 0..self.m {
                let k = self.idx(i, j);
                acc += self.weight(i, j) * f(self.q11[k], self.q12[k]);
            }
        }
        acc
    }

    /// Full-field (both components) L² norm.
    pub fn l2_norm(&self) -> f64 {
        self.integrate(|a, b| a * a + b * b).sqrt()
    }

    /// Full-field L² distance to another field on the same lattice.
    pub fn l2_distance(&self, other: &QField) -> f64 {
        assert_eq!(self.m, other.m, "lattice sizes differ");
        let mut acc = 0.0;
        for j in 0..self.m {
            for i in 0..self.m {
                let k = self.idx(i, j);
                let d1 = self.q11[k] - other.q11[k];
                let d2 = self.q12[k] - other.q12[k];
                acc += self.weight(i, j) * (d1 * d1 + d2 * d2);
            }
        }
        acc.sqrt()
    }

    fn remap(&self, f: impl Fn(usize, usize) -> (usize, usize, f64, f64)) -> QField {
        let mut out = QField::zeros(self.m);
        for j in 0..self.m {
            for i in 0..self.m {
                let (si, sj, s11, s12) = f(i, j);
                let src = self.idx(si, sj);
                let dst = out.idx(i, j);
                out.q11[dst] = s11 * self.q11[src];
                out.q12[dst] = s12 * self.q12[src];
            }
        }
        out
    }

    /// Mirror across `x = 1/2`; the director angle flips sign, so `Q₁₂ → −Q₁₂`.
    pub fn reflect_x(&self) -> QField {
        let m = self.m;
        self.remap(|i, j| (m - 1 - i, j, 1.0, -1.0))
    }

    /// Mirror across `y = 1/2`.
    pub fn reflect_y(&self) -> QField {
        let m = self.m;
        self.remap(|i, j| (i, m - 1 - j, 1.0, -1.0))
    }

    /// Mirror across the diagonal `y = x`; `θ → π/2 − θ` gives `Q₁₁ → −Q₁₁`.
    pub fn reflect_diagonal(&self) -> QField {
        self.remap(|i, j| (j, i, -1.0, 1.0))
    }

    /// Director angle `θ = atan2(Q₁₂, Q₁₁)/2` at a node.
    pub fn director_angle(&self, i: usize, j: usize) -> f64 {
        let k = self.idx(i, j);
        0.5 * self.q12[k].atan2(self.q11[k])
    }

    /// Value at the node nearest to `p`.
    pub fn nearest(&self, p: Point2) -> (f64, f64) {
        let h = self.spacing();
        let i = ((p.x / h).round() as usize).min(self.m - 1);
        let j = ((p.y / h).round() as usize).min(self.m - 1);
        let k = self.idx(i, j);
        (self.q11[k], self.q12[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trap() -> TrapezoidParams {
        TrapezoidParams::from_epsilon(0.02).unwrap()
    }

    #[test]
    fn boundary_rows() {
        let q = QField::with_boundary(9, trap()).unwrap();
        assert_eq!(q.boundary_deviation(trap()), 0.0);
        assert_eq!(q.boundary_nodes().count(), 4 * 8);
        let (a, _) = q.nearest(Point2::new(0.5, 0.0));
        assert_eq!(a, 1.0);
        let (a, _) = q.nearest(Point2::new(0.0, 0.5));
        assert_eq!(a, -1.0);
    }

    #[test]
    fn quadrature_of_constant() {
        let mut q = QField::zeros(17);
        q.q11.iter_mut().for_each(|v| *v = 1.0);
        assert!((q.integrate(|a, _| a) - 1.0).abs() < 1e-14);
        assert!((q.l2_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reflections_are_involutions_and_preserve_boundary() {
        let mut q = QField::with_boundary(11, trap()).unwrap();
        for (k, v) in q.q12.iter_mut().enumerate() {
            if !(k < 11 || k >= 110 || k % 11 == 0 || k % 11 == 10) {
                *v = (k as f64 * 0.37).sin();
            }
        }
        for r in [
            QField::reflect_x,
            QField::reflect_y,
            QField::reflect_diagonal,
        ] {
            let once = r(&q);
            assert_eq!(once.boundary_deviation(trap()), 0.0);
            assert_eq!(r(&once), q);
        }
    }
}
