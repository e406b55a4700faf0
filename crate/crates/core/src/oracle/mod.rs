//! Finite-difference reference solutions of the Landau–de Gennes
//! Euler–Lagrange system on the unit square.
//!
//! [`find_all`] seeds a director-angle field for each corner-jump sign
//! pattern, relaxes it by semi-implicit gradient flow, polishes with Newton,
//! deduplicates, and labels the survivors D1, D2, R1–R4.

mod lattice;
mod solve;

use std::collections::BTreeMap;
use std::fmt;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use lattice::{Lattice, SineBasis};
pub use solve::{gmres, newton_polish, relax, Deflation, GmresOutcome, Polished, Relaxed};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::losses::{energy, LdGParams};
use crate::qfield::QField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discovery {
    /// All sixteen corner-jump patterns, flow then Newton.
    #[default]
    Enumerate,
    /// Same seeds, but Newton is deflated away from states already found.
    DeflatedNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Lattice nodes per axis, boundary included.
    pub grid_size: usize,
    /// Initial flow time step.
    pub flow_step: f64,
    pub flow_step_max: f64,
    /// Linear stabilization added to both sides of the flow step.
    pub stabilization: f64,
    /// Flow stops once the residual ∞-norm drops below this.
    pub flow_tol: f64,
    pub flow_max_iters: usize,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Shift `c` of the `(−Δ_h + c)⁻¹` Krylov preconditioner.
    pub preconditioner_shift: f64,
    pub krylov_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max_iters: usize,
    /// Full-field L² distance below which two states are the same.
    pub dedup_threshold: f64,
    pub discovery: Discovery,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid_size: 65,
            flow_step: 1e-4,
            flow_step_max: 1e-1,
            stabilization: 1e4,
            flow_tol: 1.0,
            flow_max_iters: 20_000,
            newton_tol: 1e-8,
            newton_max_iters: 30,
            preconditioner_shift: 0.0,
            krylov_tol: 1e-10,
            krylov_restart: 60,
            krylov_max_iters: 2000,
            dedup_threshold: 0.1,
            discovery: Discovery::Enumerate,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 17 {
            return Err(Error::Config(format!(
                "oracle.grid_size {} below 17",
                self.grid_size
            )));
        }
        let positive = [
            ("flow_step", self.flow_step),
            ("flow_step_max", self.flow_step_max),
            ("flow_tol", self.flow_tol),
            ("newton_tol", self.newton_tol),
            ("krylov_tol", self.krylov_tol),
            ("dedup_threshold", self.dedup_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("oracle.{name} must be positive")));
            }
        }
        if !(self.stabilization >= 0.0) || !(self.preconditioner_shift >= 0.0) {
            return Err(Error::Config(
                "oracle.stabilization and preconditioner_shift must be non-negative".into(),
            ));
        }
        if self.krylov_restart == 0 || self.flow_max_iters == 0 {
            return Err(Error::Config(
                "oracle iteration budgets must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `F = −Δ_h Q − 2ε⁻²(1 − |Q|²) Q` on the interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub m: usize,
    /// y-major over interior nodes, `(m − 2)²` entries each.
    pub f11: Vec<f64>,
    pub f12: Vec<f64>,
}

impl Residual {
    /// Value at interior lattice node `(i, j)`, `1 ≤ i, j ≤ m − 2`.
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let n = self.m - 2;
        let a = (j - 1) * n + (i - 1);
        [self.f11[a], self.f12[a]]
    }

    pub fn norm_inf(&self) -> f64 {
        self.f11
            .iter()
            .chain(&self.f12)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn fd_residual(q: &QField, ldg: &LdGParams) -> Residual {
    let lat = Lattice::new(q.m);
    let v = lat.interior(q);
    let load = lat.boundary_load(q);
    let mut f = vec![0.0; lat.len()];
    lat.residual(&v, &load, ldg, &mut f);
    let n2 = lat.n * lat.n;
    Residual {
        m: q.m,
        f12: f.split_off(n2),
        f11: f,
    }
}

/// A corner jump of the boundary director angle, ±π/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Turn {
    Plus,
    Minus,
}

impl Turn {
    pub fn angle(self) -> f64 {
        match self {
            Turn::Plus => std::f64::consts::FRAC_PI_2,
            Turn::Minus => -std::f64::consts::FRAC_PI_2,
        }
    }
}

/// The sixteen sign patterns in a fixed order (bit `b` of the index set means
/// jump `b` is negative).
pub fn jump_patterns() -> Vec<[Turn; 4]> {
    (0..16u32)
        .map(|mask| {
            let mut t = [Turn::Plus; 4];
            for (b, slot) in t.iter_mut().enumerate() {
                if mask >> b & 1 == 1 {
                    *slot = Turn::Minus;
                }
            }
            t
        })
        .collect()
}

fn pattern_name(jumps: &[Turn; 4]) -> String {
    jumps
        .iter()
        .map(|t| if *t == Turn::Plus { '+' } else { '-' })
        .collect()
}

/// Director angle of each edge: bottom 0, then the jumps accumulated
/// counterclockwise through the right, top and left edges.
pub fn edge_angles(jumps: &[Turn; 4]) -> [f64; 4] {
    let right = jumps[0].angle();
    let top = right + jumps[1].angle();
    let left = top + jumps[2].angle();
    [0.0, right, top, left]
}

/// Harmonic director-angle seed: `Q = (cos 2θ, sin 2θ)` inside, exact `Q_b`
/// on the boundary.
pub fn angle_seed(jumps: &[Turn; 4], config: &OracleConfig, ldg: &LdGParams) -> Result<QField> {
    let m = config.grid_size;
    let theta = seed_angles(jumps, m);
    let mut q = QField::with_boundary(m, ldg.trapezoid()?)?;
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            let k = q.idx(i, j);
            let th = theta.q11[k];
            q.q11[k] = (2.0 * th).cos();
            q.q12[k] = (2.0 * th).sin();
        }
    }
    Ok(q)
}

/// Harmonic director angle in the `q11` slot of a lattice field: edge
/// angles on the boundary (corners 0), discrete Laplace solution inside.
pub fn seed_angles(jumps: &[Turn; 4], m: usize) -> QField {
    let lat = Lattice::new(m);
    let [bottom, right, top, left] = edge_angles(jumps);
    let mut theta = QField::zeros(m);
    for k in 1..m - 1 {
        let (b, r, t, l) = (
            theta.idx(k, 0),
            theta.idx(m - 1, k),
            theta.idx(k, m - 1),
            theta.idx(0, k),
        );
        theta.q11[b] = bottom;
        theta.q11[r] = right;
        theta.q11[t] = top;
        theta.q11[l] = left;
    }
    let load = lat.boundary_load(&theta);
    let mut interior = vec![0.0; lat.len()];
    lat.basis.helmholtz_solve(
        0.0,
        1.0,
        &load,
        &mut interior,
        &mut lattice::Work::default(),
    );
    lat.set_interior(&mut theta, &interior);
    theta
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    D1,
    D2,
    R1,
    R2,
    R3,
    R4,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::D1,
        Label::D2,
        Label::R1,
        Label::R2,
        Label::R3,
        Label::R4,
    ];

    pub fn is_diagonal(self) -> bool {
        matches!(self, Label::D1 | Label::D2)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Label from the director at a few probe points.
///
/// Diagonal states have `|Q12| > |Q11|` at the center; D1 has `Q12 > 0`.
/// Rotated states rotate across the bottom/top pair when `Q11 < 0` at the
/// center (vertical) and across the left/right pair otherwise (horizontal);
/// the sense is the sign of `Q12` halfway between the center and the bottom
/// (vertical) or left (horizontal) edge. R1 = vertical +, R2 = horizontal +,
/// R3 = vertical −, R4 = horizontal −.
pub fn label_of(q: &QField) -> Label {
    let (c11, c12) = q.nearest(Point2::new(0.5, 0.5));
    if c12.abs() > c11.abs() {
        return if c12 > 0.0 { Label::D1 } else { Label::D2 };
    }
    let vertical = c11 < 0.0;
    let probe = if vertical {
        Point2::new(0.5, 0.25)
    } else {
        Point2::new(0.25, 0.5)
    };
    let positive = q.nearest(probe).1 > 0.0;
    match (vertical, positive) {
        (true, true) => Label::R1,
        (false, true) => Label::R2,
        (true, false) => Label::R3,
        (false, false) => Label::R4,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Member {
    pub label: Label,
    pub field: QField,
    /// Quadrature energy of the lattice field.
    pub energy: f64,
    pub residual_inf: f64,
    /// Seed patterns that converged to this state.
    pub seeds: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolutionSet {
    /// Ordered D1, D2, R1, R2, R3, R4.
    pub members: Vec<Member>,
    /// Full-field L² distances between members, in member order.
    pub distances: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub labels: Vec<Label>,
    pub energies: Vec<f64>,
    pub residual_inf: Vec<f64>,
    pub seeds: Vec<Vec<String>>,
    pub distances: Vec<Vec<f64>>,
    pub grid_size: usize,
}

impl SolutionSet {
    pub fn get(&self, label: Label) -> Option<&Member> {
        self.members.iter().find(|m| m.label == label)
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            labels: self.members.iter().map(|m| m.label).collect(),
            energies: self.members.iter().map(|m| m.energy).collect(),
            residual_inf: self.members.iter().map(|m| m.residual_inf).collect(),
            seeds: self.members.iter().map(|m| m.seeds.clone()).collect(),
            distances: self.distances.clone(),
            grid_size: self.members.first().map_or(0, |m| m.field.m),
        }
    }

    /// Worst nodal distance from a reflected member to its nearest member,
    /// over the reflections in x, in y and in the diagonal.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for m in &self.members {
            for image in [
                m.field.reflect_x(),
                m.field.reflect_y(),
                m.field.reflect_diagonal(),
            ] {
                let best = self
                    .members
                    .iter()
                    .map(|o| max_abs_diff(&image, &o.field))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(best);
            }
        }
        worst
    }
}

fn max_abs_diff(a: &QField, b: &QField) -> f64 {
    a.q11
        .iter()
        .zip(&b.q11)
        .chain(a.q12.iter().zip(&b.q12))
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Clone, Debug)]
struct Candidate {
    pattern: usize,
    field: QField,
    residual: f64,
}

fn refine(
    lat: &Lattice,
    jumps: &[Turn; 4],
    config: &OracleConfig,
    ldg: &LdGParams,
    deflation: &Deflation,
) -> Result<(QField, f64)> {
    let seed = angle_seed(jumps, config, ldg)?;
    let relaxed = solve::relax_on(lat, &seed, config, ldg)?;
    let polished = solve::newton_on(lat, &relaxed.field, config, ldg, deflation);
    if !polished.converged {
        return Err(Error::Convergence(
            polished.warning.unwrap_or_else(|| "newton failed".into()),
        ));
    }
    let residual = *polished.residual_history.last().unwrap();
    info!(
        "seed {}: {} flow iterations, {} newton steps, residual {:.2e}",
        pattern_name(jumps),
        relaxed.iterations,
        polished.steps,
        residual
    );
    Ok((polished.field, residual))
}

/// Groups candidates whose fields lie within `threshold` of each other
/// (transitively). Each group is represented by its lowest pattern index,
/// so the result does not depend on the order of `candidates`.
fn dedup(mut candidates: Vec<Candidate>, threshold: f64) -> Vec<(Candidate, Vec<usize>)> {
    candidates.sort_by_key(|c| c.pattern);
    let n = candidates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if candidates[i].field.l2_distance(&candidates[j].field) < threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(candidates[i].pattern);
    }
    groups
        .into_iter()
        .map(|(r, patterns)| (candidates[r].clone(), patterns))
        .collect()
}

pub fn find_all(config: &OracleConfig, ldg: &LdGParams) -> Result<SolutionSet> {
    find_all_with_patterns(config, ldg, &jump_patterns())
}

/// [`find_all`] over an explicit list of seed patterns.
pub fn find_all_with_patterns(
    config: &OracleConfig,
    ldg: &LdGParams,
    patterns: &[[Turn; 4]],
) -> Result<SolutionSet> {
    config.validate()?;
    let lat = Lattice::new(config.grid_size);
    let index_of = |p: &[Turn; 4]| jump_patterns().iter().position(|q| q == p).unwrap();
    let mut candidates = Vec::new();
    match config.discovery {
        Discovery::Enumerate => {
            // The fourth jump only closes the loop; seeds sharing the first
            // three jumps are identical and refine identically.
            let mut done: BTreeMap<[Turn; 3], Option<(QField, f64)>> = BTreeMap::new();
            for p in patterns {
                let key = [p[0], p[1], p[2]];
                let result = match done.get(&key) {
                    Some(r) => r.clone(),
                    None => {
                        let r = match refine(&lat, p, config, ldg, &Deflation::default()) {
                            Ok(r) => Some(r),
                            Err(e) => {
                                warn!("seed {} discarded: {e}", pattern_name(p));
                                None
                            }
                        };
                        done.insert(key, r.clone());
                        r
                    }
                };
                if let Some((field, residual)) = result {
                    candidates.push(Candidate {
                        pattern: index_of(p),
                        field,
                        residual,
                    });
                }
            }
        }
        Discovery::DeflatedNewton => {
            let mut deflation = Deflation::default();
            for p in patterns {
                match refine(&lat, p, config, ldg, &deflation) {
                    Ok((field, residual)) => {
                        deflation.roots.push(lat.interior(&field));
                        candidates.push(Candidate {
                            pattern: index_of(p),
                            field,
                            residual,
                        });
                    }
                    Err(e) => warn!("seed {} discarded: {e}", pattern_name(p)),
                }
            }
        }
    }
    let groups = dedup(candidates, config.dedup_threshold);
    let mut by_label: BTreeMap<Label, Member> = BTreeMap::new();
    let mut found = Vec::new();
    for (c, patterns) in groups {
        let label = label_of(&c.field);
        let seeds: Vec<String> = patterns
            .iter()
            .map(|&i| pattern_name(&jump_patterns()[i]))
            .collect();
        found.push(format!("{label} from {}", seeds.join(",")));
        let member = Member {
            label,
            energy: energy(&c.field, ldg)?,
            residual_inf: c.residual,
            field: c.field,
            seeds,
        };
        if let Some(prev) = by_label.get(&label) {
            return Err(Error::Convergence(format!(
                "two distinct states labelled {label} (energies {:.4} and {:.4}); found: {}",
                prev.energy,
                member.energy,
                found.join("; ")
            )));
        }
        by_label.insert(label, member);
    }
    if by_label.len() != 6 {
        return Err(Error::Convergence(format!(
            "expected six distinct states, found {}: {}",
            by_label.len(),
            found.join("; ")
        )));
    }
    let members: Vec<Member> = by_label.into_values().collect();
    let distances = members
        .iter()
        .map(|a| {
            members
                .iter()
                .map(|b| a.field.l2_distance(&b.field))
                .collect()
        })
        .collect();
    Ok(SolutionSet { members, distances })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ldg() -> LdGParams {
        LdGParams::default()
    }

    #[test]
    fn residual_of_constant_states() {
        let ldg = ldg();
        let mut q = QField::zeros(9);
        q.q11.fill(1.0);
        assert!(fd_residual(&q, &ldg).norm_inf() == 0.0);

        let q = QField::with_boundary(9, ldg.trapezoid().unwrap()).unwrap();
        let r = fd_residual(&q, &ldg);
        for j in 2..=6 {
            for i in 2..=6 {
                assert_eq!(r.at(i, j), [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn residual_matches_hand_summed_stencil() {
        let ldg = LdGParams { epsilon: 0.3 };
        let m = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut q = QField::zeros(m);
        q.q11.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        q.q12.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let r = fd_residual(&q, &ldg);
        let h = 0.25;
        let get = |f: &[f64], i: usize, j: usize| f[j * m + i];
        for j in 1..m - 1 {
            for i in 1..m - 1 {
                let (a, b) = (get(&q.q11, i, j), get(&q.q12, i, j));
                let s = 2.0 / (0.3 * 0.3) * (1.0 - a * a - b * b);
                let mut expect = [0.0; 2];
                for (c, f) in [&q.q11, &q.q12].into_iter().enumerate() {
                    let lap =
                        (get(f, i + 1, j) + get(f, i - 1, j) + get(f, i, j + 1) + get(f, i, j - 1)
                            - 4.0 * get(f, i, j))
                            / (h * h);
                    expect[c] = -lap - s * get(f, i, j);
                }
                let got = r.at(i, j);
                assert!((got[0] - expect[0]).abs() < 1e-14 * (1.0 + expect[0].abs()));
                assert!((got[1] - expect[1]).abs() < 1e-14 * (1.0 + expect[1].abs()));
            }
        }
    }

    #[test]
    fn seed_keeps_boundary_and_edge_angles() {
        let cfg = OracleConfig {
            grid_size: 17,
            ..OracleConfig::default()
        };
        let ldg = ldg();
        let trap = ldg.trapezoid().unwrap();
        for p in jump_patterns() {
            let q = angle_seed(&p, &cfg, &ldg).unwrap();
            assert_eq!(q.boundary_deviation(trap), 0.0);
            assert!(q.is_finite());
            let theta = seed_angles(&p, 17);
            let [b, r, t, l] = edge_angles(&p);
            assert_eq!(theta.q11[theta.idx(5, 0)], b);
            assert_eq!(theta.q11[theta.idx(16, 5)], r);
            assert_eq!(theta.q11[theta.idx(5, 16)], t);
            assert_eq!(theta.q11[theta.idx(0, 5)], l);
        }
    }

    #[test]
    fn seed_classes() {
        use Turn::*;
        let m = 33;
        // Alternating jumps: director near a diagonal at the center.
        let theta = seed_angles(&[Plus, Minus, Plus, Minus], m);
        let c = theta.q11[theta.idx(16, 16)];
        assert!((c - std::f64::consts::FRAC_PI_4).abs() < 1e-12, "{c}");
        // Rotation by π between bottom and top.
        let theta = seed_angles(&[Plus, Plus, Minus, Minus], m);
        assert!(
            (theta.q11[theta.idx(16, 32)] - theta.q11[theta.idx(16, 0)] - std::f64::consts::PI)
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn labels_of_synthetic_fields() {
        let m = 17;
        let field = |f: &dyn Fn(f64, f64) -> f64| {
            let mut q = QField::zeros(m);
            for j in 0..m {
                for i in 0..m {
                    let p = q.point(i, j);
                    let th = f(p.x, p.y);
                    let k = q.idx(i, j);
                    q.q11[k] = (2.0 * th).cos();
                    q.q12[k] = (2.0 * th).sin();
                }
            }
            q
        };
        let pi = std::f64::consts::PI;
        assert_eq!(label_of(&field(&|_, _| pi / 4.0)), Label::D1);
        assert_eq!(label_of(&field(&|_, _| -pi / 4.0)), Label::D2);
        assert_eq!(label_of(&field(&|_, y| pi * y)), Label::R1);
        assert_eq!(label_of(&field(&|x, _| pi / 2.0 - pi * x)), Label::R2);
        assert_eq!(label_of(&field(&|_, y| -pi * y)), Label::R3);
        assert_eq!(label_of(&field(&|x, _| -pi / 2.0 + pi * x)), Label::R4);
    }

    #[test]
    fn dedup_is_order_independent() {
        let mk = |pattern: usize, shift: f64| {
            let mut q = QField::zeros(9);
            q.q11.fill(shift);
            Candidate {
                pattern,
                field: q,
                residual: 0.0,
            }
        };
        let list = vec![
            mk(3, 0.0),
            mk(1, 0.05),
            mk(7, 0.5),
            mk(2, 0.09),
            mk(5, 0.55),
        ];
        let a = dedup(list.clone(), 0.1);
        let mut rev = list;
        rev.reverse();
        let b = dedup(rev, 0.1);
        let key = |g: &[(Candidate, Vec<usize>)]| {
            g.iter()
                .map(|(c, p)| (c.pattern, p.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
        assert_eq!(key(&a), vec![(1, vec![1, 2, 3]), (5, vec![5, 7])]);
    }

    #[test]
    fn config_validation() {
        assert!(OracleConfig::default().validate().is_ok());
        let bad = OracleConfig {
            grid_size: 9,
            ..OracleConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OracleConfig {
            newton_tol: 0.0,
            ..OracleConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
