//! Trunk/branch network and the hard-constrained two-component field.
//!
//! The trunk maps a point to `p` features,
//!
//! ```text
//! τ(x) = V·tanh(W x + ζ) + U x + c,
//! ```
//!
//! and solution `k` reads component `m` as `S^m = β^{k,m} · τ`, where row `k`
//! of `B` is `[β^{k,1} | β^{k,2}]`. The constrained field is
//! `G¹ = ω·S¹ + Q̃_b`, `G² = ω·S²`. Values, gradients and Laplacians with
//! respect to `x` are all available in closed form.

use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boundary_q1, BoundaryConstants, Point2, TrapezoidParams};
use crate::numeric::dot;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    #[default]
    GlorotUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_width: usize,
    pub feature_count: usize,
    pub solution_count: usize,
    pub init_seed: u64,
    #[serde(default)]
    pub init_scheme: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_width: 512,
            feature_count: 16,
            solution_count: 6,
            init_seed: 0,
            init_scheme: InitScheme::GlorotUniform,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.feature_count == 0 {
            return Err(Error::Config(
                "hidden_width and feature_count must be positive".into(),
            ));
        }
        if self.solution_count == 0 {
            return Err(Error::Config("solution_count must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of the parameter groups inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub hidden: usize,
    pub features: usize,
    pub solutions: usize,
}

impl Layout {
    pub fn w(&self) -> Range<usize> {
        0..2 * self.hidden
    }
    pub fn zeta(&self) -> Range<usize> {
        let s = self.w().end;
        s..s + self.hidden
    }
    pub fn v(&self) -> Range<usize> {
        let s = self.zeta().end;
        s..s + self.features * self.hidden
    }
    pub fn u(&self) -> Range<usize> {
        let s = self.v().end;
        s..s + 2 * self.features
    }
    pub fn c(&self) -> Range<usize> {
        let s = self.u().end;
        s..s + self.features
    }
    pub fn b(&self) -> Range<usize> {
        let s = self.c().end;
        s..s + 2 * self.features * self.solutions
    }
    pub fn len(&self) -> usize {
        self.b().end
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Range of branch row `k` (both components).
    pub fn b_row(&self, k: usize) -> Range<usize> {
        let s = self.b().start + 2 * self.features * k;
        s..s + 2 * self.features
    }

    /// Name of the group containing flat index `i`.
    pub fn group_of(&self, i: usize) -> &'static str {
        [
            ("W", self.w()),
            ("zeta", self.zeta()),
            ("V", self.v()),
            ("U", self.u()),
            ("c", self.c()),
            ("B", self.b()),
        ]
        .into_iter()
        .find(|(_, r)| r.contains(&i))
        .map(|(n, _)| n)
        .unwrap_or("?")
    }
}

/// The full trainable state, stored as one flat vector.
///
/// `W` is `H×2` row-major (row `j` is the weight vector of hidden unit `j`),
/// `V` is `p×H` row-major, `U` is `p×2`, `B` is `K×2p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layout: Layout,
    pub data: Vec<f64>,
}

macro_rules! group_access {
    ($get:ident, $get_mut:ident) => {
        pub fn $get(&self) -> &[f64] {
            &self.data[self.layout.$get()]
        }
        pub fn $get_mut(&mut self) -> &mut [f64] {
            let r = self.layout.$get();
            &mut self.data[r]
        }
    };
}

impl ModelParams {
    pub fn zeros(layout: Layout) -> Self {
        ModelParams {
            layout,
            data: vec![0.0; layout.len()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout)
    }

    group_access!(w, w_mut);
    group_access!(zeta, zeta_mut);
    group_access!(v, v_mut);
    group_access!(u, u_mut);
    group_access!(c, c_mut);
    group_access!(b, b_mut);

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }
    pub fn features(&self) -> usize {
        self.layout.features
    }
    pub fn solutions(&self) -> usize {
        self.layout.solutions
    }

    pub fn branch(&self, k: usize) -> &[f64] {
        &self.data[self.layout.b_row(k)]
    }

    pub fn branch_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.layout.b_row(k);
        &mut self.data[r]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn init_params(config: &ModelConfig) -> ModelParams {
    let layout = Layout {
        hidden: config.hidden_width,
        features: config.feature_count,
        solutions: config.solution_count,
    };
    let (h, p) = (layout.hidden, layout.features);
    let mut params = ModelParams::zeros(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut glorot = |dst: &mut [f64], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        dst.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    };
    match config.init_scheme {
        InitScheme::GlorotUniform => {
            glorot(params.w_mut(), 2, h);
            glorot(params.v_mut(), h, p);
            glorot(params.u_mut(), 2, p);
        }
    }
    let half = 1.0 / (p as f64).sqrt();
    let dist = Uniform::new_inclusive(-half, half);
    for k in 0..layout.solutions {
        params
            .branch_mut(k)
            .iter_mut()
            .for_each(|v| *v = dist.sample(&mut rng));
    }
    params
}

/// Hidden-layer quantities at one point, reused by the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct HiddenCache {
    /// `σ(z)`
    pub s: Vec<f64>,
    /// `σ′(z)`
    pub s1: Vec<f64>,
    /// `σ″(z)`
    pub s2: Vec<f64>,
    /// `σ′(z_j)·W_j0`, `σ′(z_j)·W_j1`
    pub s1w: [Vec<f64>; 2],
    /// `σ″(z_j)·‖w_j‖²`
    pub s2n: Vec<f64>,
}

impl HiddenCache {
    pub fn fill(&mut self, params: &ModelParams, x: Point2) {
        let h = params.hidden();
        let w = params.w();
        let zeta = params.zeta();
        for buf in [&mut self.s, &mut self.s1, &mut self.s2, &mut self.s2n] {
            buf.resize(h, 0.0);
        }
        self.s1w[0].resize(h, 0.0);
        self.s1w[1].resize(h, 0.0);
        for j in 0..h {
            let (w0, w1) = (w[2 * j], w[2 * j + 1]);
            let s = (w0 * x.x + w1 * x.y + zeta[j]).tanh();
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            self.s[j] = s;
            self.s1[j] = s1;
            self.s2[j] = s2;
            self.s1w[0][j] = s1 * w0;
            self.s1w[1][j] = s1 * w1;
            self.s2n[j] = s2 * (w0 * w0 + w1 * w1);
        }
    }
}

/// Trunk features with their spatial derivatives at one point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrunkEval {
    pub tau: Vec<f64>,
    /// `∂τ_i/∂x_a` at `[i][a]`.
    pub grad: Vec<[f64; 2]>,
    pub lap: Vec<f64>,
}

impl TrunkEval {
    pub fn fill(&mut self, params: &ModelParams, x: Point2, cache: &HiddenCache) {
        let (h, p) = (params.hidden(), params.features());
        let (v, u, c) = (params.v(), params.u(), params.c());
        self.tau.resize(p, 0.0);
        self.grad.resize(p, [0.0; 2]);
        self.lap.resize(p, 0.0);
        for i in 0..p {
            let vi = &v[i * h..(i + 1) * h];
            self.tau[i] = dot(vi, &cache.s) + u[2 * i] * x.x + u[2 * i + 1] * x.y + c[i];
            self.grad[i] = [
                dot(vi, &cache.s1w[0]) + u[2 * i],
                dot(vi, &cache.s1w[1]) + u[2 * i + 1],
            ];
            self.lap[i] = dot(vi, &cache.s2n);
        }
    }
}

pub fn trunk_eval(params: &ModelParams, x: Point2) -> TrunkEval {
    let mut cache = HiddenCache::default();
    cache.fill(params, x);
    let mut out = TrunkEval::default();
    out.fill(params, x, &cache);
    out
}

/// Value, gradient and Laplacian of both field components at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedFieldEval {
    pub g: [f64; 2],
    pub grad: [[f64; 2]; 2],
    pub lap: [f64; 2],
}

/// Branch contraction `S^m = β^{k,m}·τ` with its derivatives, for m = 0, 1.
pub fn branch_features(branch: &[f64], trunk: &TrunkEval) -> ([f64; 2], [[f64; 2]; 2], [f64; 2]) {
    let p = trunk.tau.len();
    let mut s = [0.0; 2];
    let mut gs = [[0.0; 2]; 2];
    let mut ls = [0.0; 2];
    for m in 0..2 {
        let beta = &branch[m * p..(m + 1) * p];
        for i in 0..p {
            s[m] += beta[i] * trunk.tau[i];
            gs[m][0] += beta[i] * trunk.grad[i][0];
            gs[m][1] += beta[i] * trunk.grad[i][1];
            ls[m] += beta[i] * trunk.lap[i];
        }
    }
    (s, gs, ls)
}

/// Composes the hard constraint around already evaluated trunk features.
pub fn compose(branch: &[f64], trunk: &TrunkEval, bc: &BoundaryConstants) -> ConstrainedFieldEval {
    let (s, gs, ls) = branch_features(branch, trunk);
    let om = &bc.omega;
    let mut out = ConstrainedFieldEval::default();
    for m in 0..2 {
        out.g[m] = om.value * s[m];
        for a in 0..2 {
            out.grad[m][a] = om.gradient[a] * s[m] + om.value * gs[m][a];
        }
        out.lap[m] = om.laplacian * s[m]
            + 2.0 * (om.gradient[0] * gs[m][0] + om.gradient[1] * gs[m][1])
            + om.value * ls[m];
    }
    out.g[0] += bc.lift.value;
    out.grad[0][0] += bc.lift.gradient[0];
    out.grad[0][1] += bc.lift.gradient[1];
    out.lap[0] += bc.lift.laplacian;
    out
}

pub fn field_eval(
    params: &ModelParams,
    k: usize,
    x: Point2,
    bc: &BoundaryConstants,
) -> Result<ConstrainedFieldEval> {
    if k >= params.solutions() {
        return Err(Error::Index {
            index: k,
            len: params.solutions(),
        });
    }
    let trunk = trunk_eval(params, x);
    Ok(compose(params.branch(k), &trunk, bc))
}

/// Largest deviation of any solution from `(Q_b¹, 0)` over `samples` boundary
/// points drawn uniformly (edge, then position) from `seed`.
pub fn boundary_deviation(
    params: &ModelParams,
    trap: TrapezoidParams,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let t = unit.sample(&mut rng);
        let s = match Uniform::new(0, 4).sample(&mut rng) {
            0 => Point2::new(t, 0.0),
            1 => Point2::new(1.0, t),
            2 => Point2::new(t, 1.0),
            _ => Point2::new(0.0, t),
        };
        let bc = BoundaryConstants::on_boundary(s, trap)?;
        let qb = boundary_q1(s, trap)?;
        let trunk = trunk_eval(params, s);
        for k in 0..params.solutions() {
            let g = compose(params.branch(k), &trunk, &bc).g;
            worst = worst.max((g[0] - qb).abs()).max(g[1].abs());
        }
    }
    Ok(worst)
}
