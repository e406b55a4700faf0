//! Residual, PIML, deflation and total losses as quadrature sums over a fixed
//! collocation grid, plus the discrete Landau-de Gennes energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    boundary_q1, BoundaryConstants, Point2, ScalarJet, TrapezoidParams, DEFAULT_FD_STEP,
};
use crate::model::{compose, ConstrainedFieldEval, HiddenCache, ModelParams, TrunkEval};
use crate::numeric::pairwise_sum;
use crate::qfield::QField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdGParams {
    pub epsilon: f64,
}

impl Default for LdGParams {
    fn default() -> Self {
        LdGParams { epsilon: 0.02 }
    }
}

impl LdGParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Boundary-data ramp width `d = 3ε`.
    pub fn trapezoid(&self) -> Result<TrapezoidParams> {
        TrapezoidParams::from_epsilon(self.epsilon)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualNorm {
    /// `∫ |r|` per component.
    #[default]
    L1,
    /// `∫ r²` per component.
    L2,
}

/// Which field components enter the pairwise deflation distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeflationNorm {
    #[default]
    SecondComponent,
    BothComponents,
}

/// Weights of the soft-constraint PIML loss; enabling this also switches the
/// field to the unconstrained network output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftBoundary {
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub d_min: f64,
    #[serde(default)]
    pub residual_norm: ResidualNorm,
    #[serde(default)]
    pub deflation_norm: DeflationNorm,
    #[serde(default)]
    pub soft_boundary: Option<SoftBoundary>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.02,
            beta: 2.0,
            d_min: 0.4,
            residual_norm: ResidualNorm::L1,
            deflation_norm: DeflationNorm::SecondComponent,
            soft_boundary: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(self.d_min > 0.0) {
            return Err(Error::Config(format!(
                "d_min must be positive, got {}",
                self.d_min
            )));
        }
        if let Some(sb) = self.soft_boundary {
            if !(sb.alpha1 >= 0.0 && sb.alpha2 >= 0.0) {
                return Err(Error::Config(
                    "alpha1 and alpha2 must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn hard_constraint(&self) -> bool {
        self.soft_boundary.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Lattice points per side.
    pub size: usize,
    /// Safety distance from the boundary.
    pub delta: f64,
    /// Shift applied to every lattice point. Keeps collocation points off the
    /// kink lines of the boundary lift (the diagonals pass through lattice
    /// nodes of any symmetric grid).
    #[serde(default = "GridConfig::default_offset")]
    pub offset: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            size: 33,
            delta: 0.01,
            offset: Self::default_offset(),
        }
    }
}

impl GridConfig {
    fn default_offset() -> [f64; 2] {
        [-0.00425, 0.0055]
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::Config(format!("grid size {} below 2", self.size)));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config(format!(
                "delta {} outside (0, 1/2)",
                self.delta
            )));
        }
        if self.offset.iter().any(|o| o.abs() >= self.delta) {
            return Err(Error::Config(
                "grid offset must be smaller than delta in magnitude".into(),
            ));
        }
        Ok(())
    }
}

/// Boundary sample used only by the soft-constraint loss.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySample {
    pub point: Point2,
    pub weight: f64,
    pub target: f64,
}

/// Fixed interior quadrature points with weights and precomputed
/// hard-constraint data.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationGrid {
    pub size: usize,
    pub delta: f64,
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    pub bc: Vec<BoundaryConstants>,
    pub boundary: Vec<BoundarySample>,
}

/// Constants that turn the hard-constrained composition into the bare network.
/// `ω ≡ 1` and no lift: the unconstrained network output.
pub const UNCONSTRAINED: BoundaryConstants = BoundaryConstants {
    lift: ScalarJet {
        value: 0.0,
        gradient: [0.0; 2],
        laplacian: 0.0,
    },
    omega: ScalarJet {
        value: 1.0,
        gradient: [0.0; 2],
        laplacian: 0.0,
    },
};

impl CollocationGrid {
    /// Builds the `N × N` trapezoid-weighted lattice over `[δ, 1−δ]²` (shifted
    /// by the configured offset). Fails if any point is too close to a
    /// non-smooth set of the boundary lift.
    pub fn build(cfg: &GridConfig, trap: TrapezoidParams, hard_constraint: bool) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.size;
        let span = 1.0 - 2.0 * cfg.delta;
        let step = span / (n - 1) as f64;
        let edge = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        let mut bc = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let p = Point2::new(
                    cfg.delta + i as f64 * step + cfg.offset[0],
                    cfg.delta + j as f64 * step + cfg.offset[1],
                );
                points.push(p);
                weights.push(step * step * edge(i) * edge(j));
                bc.push(if hard_constraint {
                    BoundaryConstants::interior(p, trap, DEFAULT_FD_STEP)
                        .map_err(|e| Error::Config(format!("collocation grid: {e}")))?
                } else {
                    UNCONSTRAINED
                });
            }
        }
        let boundary = if hard_constraint {
            Vec::new()
        } else {
            boundary_samples(n, trap)
        };
        Ok(CollocationGrid {
            size: n,
            delta: cfg.delta,
            points,
            weights,
            bc,
            boundary,
        })
    }

    /// A grid with explicit points and weights; used for hand-built checks.
    pub fn from_parts(points: Vec<Point2>, weights: Vec<f64>, bc: Vec<BoundaryConstants>) -> Self {
        assert!(points.len() == weights.len() && points.len() == bc.len());
        CollocationGrid {
            size: 0,
            delta: 0.0,
            points,
            weights,
            bc,
            boundary: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }
}

/// `4(N−1)` equispaced samples around the boundary with uniform weights.
fn boundary_samples(n: usize, trap: TrapezoidParams) -> Vec<BoundarySample> {
    let per_edge = n - 1;
    let count = 4 * per_edge;
    let weight = 4.0 / count as f64;
    let mut out = Vec::with_capacity(count);
    for e in 0..4 {
        for i in 0..per_edge {
            let t = i as f64 / per_edge as f64;
            let point = match e {
                0 => Point2::new(t, 0.0),
                1 => Point2::new(1.0, t),
                2 => Point2::new(1.0 - t, 1.0),
                _ => Point2::new(0.0, 1.0 - t),
            };
            let target = boundary_q1(point, trap).expect("edge sample");
            out.push(BoundarySample {
                point,
                weight,
                target,
            });
        }
    }
    out
}

/// `r_m = ε²·ΔG^m + 2·(1 − |G|²)·G^m`.
pub fn pde_residual(g: &ConstrainedFieldEval, ldg: &LdGParams) -> [f64; 2] {
    let e2 = ldg.epsilon * ldg.epsilon;
    let bulk = 2.0 * (1.0 - g.g[0] * g.g[0] - g.g[1] * g.g[1]);
    [e2 * g.lap[0] + bulk * g.g[0], e2 * g.lap[1] + bulk * g.g[1]]
}

pub fn residual_penalty(r: [f64; 2], norm: ResidualNorm) -> f64 {
    match norm {
        ResidualNorm::L1 => r[0].abs() + r[1].abs(),
        ResidualNorm::L2 => r[0] * r[0] + r[1] * r[1],
    }
}

/// Field evaluations of every solution at every grid point, point-major.
#[derive(Clone, Debug)]
pub struct FieldTable {
    pub solutions: usize,
    pub evals: Vec<ConstrainedFieldEval>,
}

impl FieldTable {
    pub fn at(&self, point: usize, k: usize) -> &ConstrainedFieldEval {
        &self.evals[point * self.solutions + k]
    }

    /// Values of component `m` for solution `k` across all points.
    pub fn component(&self, k: usize, m: usize) -> Vec<f64> {
        (0..self.evals.len() / self.solutions)
            .map(|j| self.at(j, k).g[m])
            .collect()
    }
}

pub fn evaluate_fields(
    params: &ModelParams,
    points: &[Point2],
    bc: &[BoundaryConstants],
) -> FieldTable {
    let k_count = params.solutions();
    let mut cache = HiddenCache::default();
    let mut trunk = TrunkEval::default();
    let mut evals = Vec::with_capacity(points.len() * k_count);
    for (x, bc) in points.iter().zip(bc) {
        cache.fill(params, *x);
        trunk.fill(params, *x, &cache);
        for k in 0..k_count {
            evals.push(compose(params.branch(k), &trunk, bc));
        }
    }
    FieldTable {
        solutions: k_count,
        evals,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PimlLoss {
    pub per_solution: Vec<f64>,
    pub total: f64,
}

fn piml_from_table(
    table: &FieldTable,
    boundary: Option<&FieldTable>,
    grid: &CollocationGrid,
    ldg: &LdGParams,
    cfg: &LossConfig,
) -> PimlLoss {
    let k_count = table.solutions;
    let per_solution: Vec<f64> = (0..k_count)
        .map(|k| {
            let terms: Vec<f64> = (0..grid.len())
                .map(|j| {
                    grid.weights[j]
                        * residual_penalty(pde_residual(table.at(j, k), ldg), cfg.residual_norm)
                })
                .collect();
            let interior = pairwise_sum(&terms);
            match (cfg.soft_boundary, boundary) {
                (Some(sb), Some(bt)) => {
                    let bterms: Vec<f64> = grid
                        .boundary
                        .iter()
                        .enumerate()
                        .map(|(j, s)| {
                            let g = bt.at(j, k).g;
                            s.weight * ((g[0] - s.target).powi(2) + g[1] * g[1])
                        })
                        .collect();
                    sb.alpha1 * interior + sb.alpha2 * pairwise_sum(&bterms)
                }
                _ => interior,
            }
        })
        .collect();
    let total = pairwise_sum(&per_solution);
    PimlLoss {
        per_solution,
        total,
    }
}

fn boundary_table(params: &ModelParams, grid: &CollocationGrid) -> Option<FieldTable> {
    if grid.boundary.is_empty() {
        return None;
    }
    let points: Vec<Point2> = grid.boundary.iter().map(|s| s.point).collect();
    let bc = vec![UNCONSTRAINED; points.len()];
    Some(evaluate_fields(params, &points, &bc))
}

pub fn piml_loss(
    params: &ModelParams,
    grid: &CollocationGrid,
    ldg: &LdGParams,
    cfg: &LossConfig,
) -> PimlLoss {
    let table = evaluate_fields(params, &grid.points, &grid.bc);
    let bt = boundary_table(params, grid);
    piml_from_table(&table, bt.as_ref(), grid, ldg, cfg)
}

/// Quadrature L² distance between two sampled scalar functions.
pub fn weighted_distance(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    let terms: Vec<f64> = a
        .iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .collect();
    pairwise_sum(&terms).sqrt()
}

/// Pairwise distance matrix between the `K` solutions, using the components
/// selected by `norm`.
pub fn distance_matrix(table: &FieldTable, weights: &[f64], norm: DeflationNorm) -> Vec<Vec<f64>> {
    let k_count = table.solutions;
    let comps: Vec<[Vec<f64>; 2]> = (0..k_count)
        .map(|k| [table.component(k, 0), table.component(k, 1)])
        .collect();
    let mut dist = vec![vec![0.0; k_count]; k_count];
    for i in 0..k_count {
        for j in i + 1..k_count {
            let d2 = weighted_distance(&comps[i][1], &comps[j][1], weights).powi(2);
            let d = match norm {
                DeflationNorm::SecondComponent => d2.sqrt(),
                DeflationNorm::BothComponents => {
                    (d2 + weighted_distance(&comps[i][0], &comps[j][0], weights).powi(2)).sqrt()
                }
            };
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    dist
}

/// Grid-L² distance between the second components of solutions `i` and `j`.
pub fn l2_grid_distance(
    params: &ModelParams,
    i: usize,
    j: usize,
    grid: &CollocationGrid,
) -> Result<f64> {
    let k_count = params.solutions();
    for idx in [i, j] {
        if idx >= k_count {
            return Err(Error::Index {
                index: idx,
                len: k_count,
            });
        }
    }
    if i == j {
        return Err(Error::domain("distance of a solution to itself requested"));
    }
    let table = evaluate_fields(params, &grid.points, &grid.bc);
    Ok(weighted_distance(
        &table.component(i, 1),
        &table.component(j, 1),
        &grid.weights,
    ))
}

/// Mean hinge `max(1 − d_ij/d_min, 0)` over all unordered pairs.
pub fn deflation_from_distances(dist: &[Vec<f64>], d_min: f64) -> f64 {
    let k_count = dist.len();
    if k_count < 2 {
        return 0.0;
    }
    let mut terms = Vec::new();
    for i in 0..k_count {
        for j in i + 1..k_count {
            terms.push((1.0 - dist[i][j] / d_min).max(0.0));
        }
    }
    2.0 / (k_count * (k_count - 1)) as f64 * pairwise_sum(&terms)
}

pub fn deflation_loss(params: &ModelParams, grid: &CollocationGrid, cfg: &LossConfig) -> f64 {
    let table = evaluate_fields(params, &grid.points, &grid.bc);
    let dist = distance_matrix(&table, &grid.weights, cfg.deflation_norm);
    deflation_from_distances(&dist, cfg.d_min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalLoss {
    pub value: f64,
    pub piml_per_solution: Vec<f64>,
    pub deflation: f64,
}

pub fn combine(piml: PimlLoss, deflation: f64, cfg: &LossConfig) -> TotalLoss {
    TotalLoss {
        value: cfg.alpha * piml.total + cfg.beta * deflation,
        piml_per_solution: piml.per_solution,
        deflation,
    }
}

pub fn total_loss(
    params: &ModelParams,
    grid: &CollocationGrid,
    ldg: &LdGParams,
    cfg: &LossConfig,
) -> TotalLoss {
    let table = evaluate_fields(params, &grid.points, &grid.bc);
    let bt = boundary_table(params, grid);
    let piml = piml_from_table(&table, bt.as_ref(), grid, ldg, cfg);
    let dist = distance_matrix(&table, &grid.weights, cfg.deflation_norm);
    combine(piml, deflation_from_distances(&dist, cfg.d_min), cfg)
}

/// Discrete `∫ |∇Q|² + ε⁻²(|Q|² − 1)²` on the sampling lattice: central
/// differences inside, second-order one-sided differences on the edges,
/// trapezoidal weights.
pub fn energy(q: &QField, ldg: &LdGParams) -> Result<f64> {
    let m = q.m;
    if m < 3 {
        return Err(Error::domain(format!(
            "energy needs at least a 3×3 lattice, got {m}"
        )));
    }
    let h = q.spacing();
    let inv_e2 = 1.0 / (ldg.epsilon * ldg.epsilon);
    let deriv = |f: &[f64], i: usize, j: usize, axis: usize| -> f64 {
        let at = |a: usize| {
            if axis == 0 {
                f[q.idx(a, j)]
            } else {
                f[q.idx(i, a)]
            }
        };
        let c = if axis == 0 { i } else { j };
        if c == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if c == m - 1 {
            (3.0 * at(m - 1) - 4.0 * at(m - 2) + at(m - 3)) / (2.0 * h)
        } else {
            (at(c + 1) - at(c - 1)) / (2.0 * h)
        }
    };
    let mut terms = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            let mut grad2 = 0.0;
            for f in [&q.q11, &q.q12] {
                for axis in 0..2 {
                    grad2 += deriv(f, i, j, axis).powi(2);
                }
            }
            let k = q.idx(i, j);
            let n2 = q.q11[k] * q.q11[k] + q.q12[k] * q.q12[k];
            terms.push(q.weight(i, j) * (grad2 + inv_e2 * (n2 - 1.0).powi(2)));
        }
    }
    Ok(pairwise_sum(&terms))
}
