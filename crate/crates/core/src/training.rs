//! Parameter gradients, Adam, the training loop and gradient verification.
//!
//! The gradient of the total loss is assembled by hand in reverse order
//! through the closed-form field evaluation: residual → field value and
//! Laplacian → branch contractions → trunk features (value, gradient,
//! Laplacian) → hidden layer. The Laplacian path through the hidden layer
//! needs the third derivative of `tanh`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::harness::config::RunConfig;
use crate::losses::{
    combine, deflation_from_distances, distance_matrix, evaluate_fields, pde_residual,
    residual_penalty, CollocationGrid, DeflationNorm, FieldTable, LdGParams, LossConfig, PimlLoss,
    ResidualNorm, TotalLoss,
};
use crate::model::{init_params, HiddenCache, ModelParams, TrunkEval};
use crate::numeric::{pairwise_reduce, pairwise_sum};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// `lr_t = lr · gamma^(t−1)`.
    Exponential {
        gamma: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stability: f64,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            epochs: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            eps_stability: 1e-8,
            schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps_stability > 0.0) {
            return Err(Error::Config("eps_stability must be positive".into()));
        }
        if let Schedule::Exponential { gamma } = self.schedule {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::Config(format!("decay gamma {gamma} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Exponential { gamma } => {
                self.learning_rate * gamma.powf(step.saturating_sub(1) as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], opt: &OptimizerConfig) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.first_moment.len());
    state.step_count += 1;
    let t = state.step_count;
    let lr = opt.rate_at(t);
    let (b1, b2) = (opt.beta1, opt.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + opt.eps_stability);
    }
}

/// Loss value and its gradient with respect to every parameter.
#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: TotalLoss,
    pub grad: ModelParams,
    /// Pairwise deflation distances at the evaluated parameters.
    pub distances: Vec<Vec<f64>>,
}

/// Points per accumulation block; blocks are combined by a fixed-shape tree.
const BLOCK: usize = 64;

/// Adjoints of one field evaluation: `∂L/∂G^m` and `∂L/∂ΔG^m`.
#[derive(Clone, Copy, Debug, Default)]
struct FieldAdjoint {
    value: [f64; 2],
    lap: [f64; 2],
}

fn residual_adjoint(
    g: &crate::model::ConstrainedFieldEval,
    ldg: &LdGParams,
    scale: f64,
    norm: ResidualNorm,
) -> FieldAdjoint {
    let r = pde_residual(g, ldg);
    let a = match norm {
        // The subgradient of |r| at 0 is taken as 0.
        ResidualNorm::L1 => [scale * sign(r[0]), scale * sign(r[1])],
        ResidualNorm::L2 => [2.0 * scale * r[0], 2.0 * scale * r[1]],
    };
    let (g1, g2) = (g.g[0], g.g[1]);
    let e2 = ldg.epsilon * ldg.epsilon;
    let d11 = 2.0 * (1.0 - 3.0 * g1 * g1 - g2 * g2);
    let d22 = 2.0 * (1.0 - g1 * g1 - 3.0 * g2 * g2);
    let d12 = -4.0 * g1 * g2;
    FieldAdjoint {
        value: [a[0] * d11 + a[1] * d12, a[0] * d12 + a[1] * d22],
        lap: [a[0] * e2, a[1] * e2],
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds `∂L/∂G²` (and `∂L/∂G¹` for the two-component norm) from the
/// deflation hinge into `adj`.
fn deflation_adjoints(
    table: &FieldTable,
    weights: &[f64],
    dist: &[Vec<f64>],
    cfg: &LossConfig,
    adj: &mut [FieldAdjoint],
) {
    let k_count = table.solutions;
    if cfg.beta == 0.0 {
        return;
    }
    let pair_scale = cfg.beta * 2.0 / (k_count * (k_count - 1)) as f64;
    let comps: &[usize] = match cfg.deflation_norm {
        DeflationNorm::SecondComponent => &[1],
        DeflationNorm::BothComponents => &[0, 1],
    };
    for i in 0..k_count {
        for j in i + 1..k_count {
            let d = dist[i][j];
            // Inactive hinge, or zero distance where the derivative is undefined.
            if d >= cfg.d_min || d == 0.0 {
                continue;
            }
            let c = -pair_scale / (cfg.d_min * d);
            for (pt, w) in weights.iter().enumerate() {
                for &m in comps {
                    let diff = table.at(pt, i).g[m] - table.at(pt, j).g[m];
                    let g = c * w * diff;
                    adj[pt * k_count + i].value[m] += g;
                    adj[pt * k_count + j].value[m] -= g;
                }
            }
        }
    }
}

/// Reverse pass of the trunk at one point, accumulating into `grad`.
///
/// `gt`, `gtg`, `gtl` are the adjoints of `τ`, `∇τ` and `Δτ`.
fn trunk_backward(
    params: &ModelParams,
    x: Point2,
    cache: &HiddenCache,
    gt: &[f64],
    gtg: &[[f64; 2]],
    gtl: &[f64],
    grad: &mut [f64],
    scratch: &mut TrunkScratch,
) {
    let layout = params.layout;
    let (h, p) = (layout.hidden, layout.features);
    let v = params.v();
    let w = params.w();

    let a = &mut scratch.a;
    let bg0 = &mut scratch.bg0;
    let bg1 = &mut scratch.bg1;
    let cl = &mut scratch.c;
    for buf in [&mut *a, &mut *bg0, &mut *bg1, &mut *cl] {
        buf.clear();
        buf.resize(h, 0.0);
    }

    {
        let gv = &mut grad[layout.v()];
        for i in 0..p {
            let vi = &v[i * h..(i + 1) * h];
            let gvi = &mut gv[i * h..(i + 1) * h];
            let (t, g0, g1, l) = (gt[i], gtg[i][0], gtg[i][1], gtl[i]);
            for j in 0..h {
                gvi[j] +=
                    t * cache.s[j] + g0 * cache.s1w[0][j] + g1 * cache.s1w[1][j] + l * cache.s2n[j];
                let vij = vi[j];
                a[j] += t * vij;
                bg0[j] += g0 * vij;
                bg1[j] += g1 * vij;
                cl[j] += l * vij;
            }
        }
    }
    {
        let gu = &mut grad[layout.u()];
        for i in 0..p {
            gu[2 * i] += gt[i] * x.x + gtg[i][0];
            gu[2 * i + 1] += gt[i] * x.y + gtg[i][1];
        }
    }
    {
        let gc = &mut grad[layout.c()];
        for i in 0..p {
            gc[i] += gt[i];
        }
    }
    let mut dz = std::mem::take(&mut scratch.dz);
    dz.clear();
    dz.resize(h, 0.0);
    {
        let gw = &mut grad[layout.w()];
        for j in 0..h {
            let (s, s1, s2) = (cache.s[j], cache.s1[j], cache.s2[j]);
            let s3 = -2.0 * (s1 * s1 + s * s2);
            let (w0, w1) = (w[2 * j], w[2 * j + 1]);
            let n = w0 * w0 + w1 * w1;
            let d = a[j] * s1 + (bg0[j] * w0 + bg1[j] * w1) * s2 + cl[j] * n * s3;
            dz[j] = d;
            gw[2 * j] += d * x.x + bg0[j] * s1 + 2.0 * cl[j] * s2 * w0;
            gw[2 * j + 1] += d * x.y + bg1[j] * s1 + 2.0 * cl[j] * s2 * w1;
        }
    }
    {
        let gz = &mut grad[layout.zeta()];
        for j in 0..h {
            gz[j] += dz[j];
        }
    }
    scratch.dz = dz;
}

#[derive(Default)]
struct TrunkScratch {
    a: Vec<f64>,
    bg0: Vec<f64>,
    bg1: Vec<f64>,
    c: Vec<f64>,
    dz: Vec<f64>,
}

/// Backpropagates field adjoints at a set of points into `grad`.
fn backward_points(
    params: &ModelParams,
    points: &[Point2],
    bc: &[crate::geometry::BoundaryConstants],
    adj: &[FieldAdjoint],
    grad: &mut [f64],
) {
    let k_count = params.solutions();
    let p = params.features();
    let layout = params.layout;
    let mut cache = HiddenCache::default();
    let mut trunk = TrunkEval::default();
    let mut scratch = TrunkScratch::default();
    let mut gt = vec![0.0; p];
    let mut gtg = vec![[0.0; 2]; p];
    let mut gtl = vec![0.0; p];
    for (pt, (x, bcj)) in points.iter().zip(bc).enumerate() {
        cache.fill(params, *x);
        trunk.fill(params, *x, &cache);
        gt.fill(0.0);
        gtg.fill([0.0; 2]);
        gtl.fill(0.0);
        let om = &bcj.omega;
        let mut any = false;
        for k in 0..k_count {
            let ad = adj[pt * k_count + k];
            if ad.value == [0.0; 2] && ad.lap == [0.0; 2] {
                continue;
            }
            any = true;
            let brow = layout.b_row(k);
            let beta = &params.data[brow.clone()];
            for m in 0..2 {
                // G^m = ω S^m (+ lift), ΔG^m = Δω S^m + 2 ∇ω·∇S^m + ω ΔS^m (+ Δlift)
                let g_s = om.value * ad.value[m] + om.laplacian * ad.lap[m];
                let g_gs = [
                    2.0 * om.gradient[0] * ad.lap[m],
                    2.0 * om.gradient[1] * ad.lap[m],
                ];
                let g_ls = om.value * ad.lap[m];
                let off = brow.start + m * p;
                for i in 0..p {
                    let b = beta[m * p + i];
                    grad[off + i] += g_s * trunk.tau[i]
                        + g_gs[0] * trunk.grad[i][0]
                        + g_gs[1] * trunk.grad[i][1]
                        + g_ls * trunk.lap[i];
                    gt[i] += b * g_s;
                    gtg[i][0] += b * g_gs[0];
                    gtg[i][1] += b * g_gs[1];
                    gtl[i] += b * g_ls;
                }
            }
        }
        if any {
            trunk_backward(params, *x, &cache, &gt, &gtg, &gtl, grad, &mut scratch);
        }
    }
}

fn first_nonfinite_point(table: &FieldTable) -> Option<usize> {
    table
        .evals
        .iter()
        .position(|e| {
            !(e.g.iter().chain(&e.lap).all(|v| v.is_finite())
                && e.grad.iter().flatten().all(|v| v.is_finite()))
        })
        .map(|i| i / table.solutions)
}

/// Exact gradient of the total loss by reverse accumulation.
pub fn loss_gradient(
    params: &ModelParams,
    grid: &CollocationGrid,
    ldg: &LdGParams,
    cfg: &LossConfig,
) -> Result<LossGradient> {
    if let Some(i) = params.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            point: 0,
            group: params.layout.group_of(i),
        });
    }
    let k_count = params.solutions();
    let table = evaluate_fields(params, &grid.points, &grid.bc);
    if let Some(pt) = first_nonfinite_point(&table) {
        return Err(Error::NonFinite {
            point: pt,
            group: "field",
        });
    }
    let btable = if grid.boundary.is_empty() {
        None
    } else {
        let pts: Vec<Point2> = grid.boundary.iter().map(|s| s.point).collect();
        let bc = vec![crate::losses::UNCONSTRAINED; pts.len()];
        Some((pts, bc))
    };
    let btab = btable
        .as_ref()
        .map(|(pts, bc)| evaluate_fields(params, pts, bc));

    // Forward losses.
    let (interior_scale, boundary_scale) = match cfg.soft_boundary {
        Some(sb) => (sb.alpha1, sb.alpha2),
        None => (1.0, 0.0),
    };
    let per_solution: Vec<f64> = (0..k_count)
        .map(|k| {
            let terms: Vec<f64> = (0..grid.len())
                .map(|j| {
                    grid.weights[j]
                        * residual_penalty(pde_residual(table.at(j, k), ldg), cfg.residual_norm)
                })
                .collect();
            let mut v = interior_scale * pairwise_sum(&terms);
            if let Some(bt) = &btab {
                let bterms: Vec<f64> = grid
                    .boundary
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        let g = bt.at(j, k).g;
                        s.weight * ((g[0] - s.target).powi(2) + g[1] * g[1])
                    })
                    .collect();
                v += boundary_scale * pairwise_sum(&bterms);
            }
            v
        })
        .collect();
    let piml = PimlLoss {
        total: pairwise_sum(&per_solution),
        per_solution,
    };
    let dist = distance_matrix(&table, &grid.weights, cfg.deflation_norm);
    let loss = combine(piml, deflation_from_distances(&dist, cfg.d_min), cfg);

    // Field adjoints.
    let mut adj = vec![FieldAdjoint::default(); grid.len() * k_count];
    if cfg.alpha != 0.0 {
        for pt in 0..grid.len() {
            let scale = cfg.alpha * interior_scale * grid.weights[pt];
            for k in 0..k_count {
                adj[pt * k_count + k] =
                    residual_adjoint(table.at(pt, k), ldg, scale, cfg.residual_norm);
            }
        }
    }
    deflation_adjoints(&table, &grid.weights, &dist, cfg, &mut adj);

    // Reverse pass, blocked for a reproducible reduction order.
    let len = params.layout.len();
    let mut parts: Vec<Vec<f64>> = Vec::new();
    for (b, chunk) in grid.points.chunks(BLOCK).enumerate() {
        let start = b * BLOCK;
        let mut part = vec![0.0; len];
        backward_points(
            params,
            chunk,
            &grid.bc[start..start + chunk.len()],
            &adj[start * k_count..(start + chunk.len()) * k_count],
            &mut part,
        );
        parts.push(part);
    }
    if let (Some(bt), Some((pts, bc))) = (&btab, &btable) {
        if cfg.alpha != 0.0 && boundary_scale != 0.0 {
            let mut badj = vec![FieldAdjoint::default(); pts.len() * k_count];
            for (j, s) in grid.boundary.iter().enumerate() {
                for k in 0..k_count {
                    let g = bt.at(j, k).g;
                    let c = cfg.alpha * boundary_scale * s.weight * 2.0;
                    badj[j * k_count + k].value = [c * (g[0] - s.target), c * g[1]];
                }
            }
            let mut part = vec![0.0; len];
            backward_points(params, pts, bc, &badj, &mut part);
            parts.push(part);
        }
    }
    let grad_data = if parts.is_empty() {
        vec![0.0; len]
    } else {
        pairwise_reduce(&mut parts);
        parts.swap_remove(0)
    };
    if let Some(i) = grad_data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            point: 0,
            group: params.layout.group_of(i),
        });
    }
    Ok(LossGradient {
        loss,
        grad: ModelParams {
            layout: params.layout,
            data: grad_data,
        },
        distances: dist,
    })
}

/// One row of the per-epoch loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub total: f64,
    pub piml: Vec<f64>,
    pub deflation: f64,
    pub wall_clock_seconds: f64,
}

/// `epoch,total,piml_1..piml_K,deflation`. Wall-clock times are kept out of
/// this file so that reruns reproduce it bytewise; see [`RunFiles::timing`].
pub fn history_csv(rows: &[HistoryRow], solutions: usize) -> String {
    let mut out = String::from("epoch,total");
    for k in 1..=solutions {
        out.push_str(&format!(",piml_{k}"));
    }
    out.push_str(",deflation\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.epoch, r.total));
        for v in &r.piml {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", r.deflation));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_total: f64,
    pub final_piml: Vec<f64>,
    pub final_deflation: f64,
    /// Pairwise second-component grid-L² distances at the final parameters.
    pub distance_matrix: Vec<Vec<f64>>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub history: Vec<HistoryRow>,
}

impl TrainReport {
    /// Smallest off-diagonal entry of the distance matrix.
    pub fn min_distance(&self) -> f64 {
        let k = self.distance_matrix.len();
        (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| self.distance_matrix[i][j])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Files of a training run directory.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunFiles {
            dir: dir.to_path_buf(),
        })
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("timing.json")
    }

    fn write(&self, path: PathBuf, text: &str) -> Result<()> {
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

/// Trains from scratch. With `out`, writes `config.json`, `history.csv`,
/// `checkpoint.json`, `report.json` and `timing.json` into that directory.
pub fn train(run: &RunConfig, out: Option<&Path>) -> Result<(ModelParams, TrainReport)> {
    let mut run = run.clone();
    run.resolve()?;
    let files = out.map(RunFiles::new).transpose()?;
    if let Some(f) = &files {
        f.write(f.config(), &run.to_json_pretty()?)?;
    }
    let trap = run.ldg.trapezoid()?;
    let grid = CollocationGrid::build(&run.grid, trap, run.loss.hard_constraint())?;
    let mut params = init_params(&run.model);
    let mut state = AdamState::new(params.layout.len());
    let mut history = Vec::with_capacity(run.optimizer.epochs);
    let start = Instant::now();
    let k_count = params.solutions();

    for epoch in 1..=run.optimizer.epochs {
        let step = loss_gradient(&params, &grid, &run.ldg, &run.loss);
        let lg = match step {
            Ok(lg) if lg.loss.value.is_finite() => lg,
            other => {
                let detail = match other {
                    Err(e) => e.to_string(),
                    Ok(lg) => format!("loss evaluated to {}", lg.loss.value),
                };
                if let Some(f) = &files {
                    checkpoint::save(&f.checkpoint(), &run.model, &params)?;
                    f.write(f.history(), &history_csv(&history, k_count))?;
                }
                return Err(Error::Convergence(format!(
                    "training aborted at epoch {epoch}: {detail}; last good parameters checkpointed"
                )));
            }
        };
        history.push(HistoryRow {
            epoch,
            total: lg.loss.value,
            piml: lg.loss.piml_per_solution.clone(),
            deflation: lg.loss.deflation,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        });
        if run.log_every > 0 && (epoch == 1 || epoch % run.log_every == 0) {
            info!(
                "epoch {epoch}: total {:.6e} piml {:.4e} deflation {:.4e}",
                lg.loss.value,
                pairwise_sum(&lg.loss.piml_per_solution),
                lg.loss.deflation
            );
        }
        adam_step(&mut state, &mut params.data, &lg.grad.data, &run.optimizer);
    }

    let table = evaluate_fields(&params, &grid.points, &grid.bc);
    let fin = crate::losses::total_loss(&params, &grid, &run.ldg, &run.loss);
    let report = TrainReport {
        seed: run.seed,
        epochs_run: history.len(),
        final_total: fin.value,
        final_piml: fin.piml_per_solution,
        final_deflation: fin.deflation,
        distance_matrix: distance_matrix(&table, &grid.weights, DeflationNorm::SecondComponent),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        history,
    };
    if let Some(f) = &files {
        checkpoint::save(&f.checkpoint(), &run.model, &params)?;
        f.write(f.history(), &history_csv(&report.history, k_count))?;
        f.write(f.report(), &serde_json::to_string_pretty(&report)?)?;
        let timing = serde_json::json!({
            "epochs": report.epochs_run,
            "wall_clock_seconds": report.wall_clock_seconds,
            "epoch_seconds": report.history.iter().map(|h| h.wall_clock_seconds).collect::<Vec<_>>(),
        });
        f.write(f.timing(), &serde_json::to_string(&timing)?)?;
    }
    Ok((params, report))
}

/// Largest model and grid the finite-difference check accepts.
pub const GRADCHECK_MAX_HIDDEN: usize = 16;
pub const GRADCHECK_MAX_GRID: usize = 7;

/// Residuals closer to zero than this make the L1 loss non-differentiable
/// within the finite-difference stencil; such draws are skipped.
const L1_RESIDUAL_FLOOR: f64 = 1e-6;

/// Compares [`loss_gradient`] with finite differences ([`FdStencil::for_loss`])
/// over `trials` random parameter draws and returns the worst relative error
/// over entries whose magnitude exceeds `1e-10`.
pub fn gradient_check(run: &RunConfig, trials: usize) -> Result<f64> {
    if run.model.hidden_width > GRADCHECK_MAX_HIDDEN || run.grid.size > GRADCHECK_MAX_GRID {
        return Err(Error::Config(format!(
            "gradient check needs hidden_width ≤ {GRADCHECK_MAX_HIDDEN} and grid size ≤ {GRADCHECK_MAX_GRID}"
        )));
    }
    let trap = run.ldg.trapezoid()?;
    let grid = CollocationGrid::build(&run.grid, trap, run.loss.hard_constraint())?;
    let stencil = FdStencil::for_loss(&run.loss);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut worst = 0.0_f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials {
        attempts += 1;
        if attempts > 100 * trials.max(1) {
            return Err(Error::Convergence(
                "could not draw parameters away from residual zeros".into(),
            ));
        }
        let mut model = run.model.clone();
        model.init_seed = rng.gen();
        let mut params = init_params(&model);
        // Move every group (including the zero-initialized biases) off zero.
        params
            .data
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.3..0.3));
        if run.loss.residual_norm == ResidualNorm::L1 && run.loss.alpha != 0.0 {
            let table = evaluate_fields(&params, &grid.points, &grid.bc);
            let near_zero = table.evals.iter().any(|e| {
                pde_residual(e, &run.ldg)
                    .iter()
                    .any(|r| r.abs() < L1_RESIDUAL_FLOOR)
            });
            if near_zero {
                continue;
            }
        }
        worst = worst.max(compare_with_fd(
            &params, &grid, &run.ldg, &run.loss, stencil,
        )?);
        done += 1;
    }
    Ok(worst)
}

/// Finite-difference derivative of the loss along one parameter, with step
/// `h = rel_step·max(|x|, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdStencil {
    /// `(f(x+h) − f(x−h)) / 2h`.
    Central { rel_step: f64 },
    /// `(4·D(h) − D(2h)) / 3` from two central differences; fourth order.
    Richardson { rel_step: f64 },
}

impl FdStencil {
    /// Smooth losses take the long fourth-order stencil. The L1 loss has kinks
    /// at residual zeros and keeps a short second-order one.
    pub fn for_loss(cfg: &LossConfig) -> Self {
        if cfg.residual_norm == ResidualNorm::L1 && cfg.alpha != 0.0 {
            FdStencil::Central { rel_step: 1e-5 }
        } else {
            FdStencil::Richardson { rel_step: 1e-3 }
        }
    }
}

/// Worst relative error between the analytic gradient and finite differences
/// over entries whose magnitude exceeds `1e-10`.
pub fn compare_with_fd(
    params: &ModelParams,
    grid: &CollocationGrid,
    ldg: &LdGParams,
    cfg: &LossConfig,
    stencil: FdStencil,
) -> Result<f64> {
    let analytic = loss_gradient(params, grid, ldg, cfg)?.grad;
    let mut worst = 0.0_f64;
    let mut probe = params.clone();
    for i in 0..params.data.len() {
        let x = params.data[i];
        let mut central = |h: f64| {
            probe.data[i] = x + h;
            let up = crate::losses::total_loss(&probe, grid, ldg, cfg).value;
            probe.data[i] = x - h;
            let down = crate::losses::total_loss(&probe, grid, ldg, cfg).value;
            probe.data[i] = x;
            (up - down) / (2.0 * h)
        };
        let fd = match stencil {
            FdStencil::Central { rel_step } => central(rel_step * x.abs().max(1.0)),
            FdStencil::Richardson { rel_step } => {
                let h = rel_step * x.abs().max(1.0);
                (4.0 * central(h) - central(2.0 * h)) / 3.0
            }
        };
        let a = analytic.data[i];
        let scale = a.abs().max(fd.abs());
        if scale > 1e-10 {
            worst = worst.max((a - fd).abs() / scale);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckMode {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub hidden_width: usize,
    pub grid_size: usize,
    pub modes: Vec<GradcheckMode>,
    pub passed: bool,
}

/// `run` with the trunk and grid clamped to what [`gradient_check`] accepts.
pub fn gradcheck_config(run: &RunConfig) -> RunConfig {
    let mut small = run.clone();
    small.model.hidden_width = small.model.hidden_width.min(GRADCHECK_MAX_HIDDEN);
    small.grid.size = small.grid.size.min(GRADCHECK_MAX_GRID);
    small
}

/// Runs the check in the L2 residual mode (tolerance `1e-5`), the L1 mode
/// (`1e-4`) and with the PIML term switched off (`1e-6`), on the clamped model.
pub fn gradcheck_suite(run: &RunConfig, trials: usize) -> Result<GradcheckReport> {
    let base = gradcheck_config(run);
    let alpha = if base.loss.alpha > 0.0 {
        base.loss.alpha
    } else {
        0.02
    };
    let modes = [
        ("l2", ResidualNorm::L2, alpha, 1e-5),
        ("l1", ResidualNorm::L1, alpha, 1e-4),
        ("deflation_only", ResidualNorm::L2, 0.0, 1e-6),
    ];
    let mut out = Vec::new();
    for (name, norm, alpha, tolerance) in modes {
        let mut r = base.clone();
        r.loss.residual_norm = norm;
        r.loss.alpha = alpha;
        let err = gradient_check(&r, trials)?;
        info!("gradcheck {name}: max relative error {err:.3e} (tolerance {tolerance:e})");
        out.push(GradcheckMode {
            name: name.into(),
            max_rel_error: err,
            tolerance,
            passed: err < tolerance,
        });
    }
    Ok(GradcheckReport {
        trials,
        hidden_width: base.model.hidden_width,
        grid_size: base.grid.size,
        passed: out.iter().all(|m| m.passed),
        modes: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::GridConfig;
    use crate::model::ModelConfig;

    fn tiny_run(norm: ResidualNorm, alpha: f64, beta: f64) -> RunConfig {
        let mut run = RunConfig::default();
        run.model = ModelConfig {
            hidden_width: 8,
            feature_count: 3,
            solution_count: 3,
            ..ModelConfig::default()
        };
        run.grid = GridConfig {
            size: 5,
            ..GridConfig::default()
        };
        run.loss.residual_norm = norm;
        run.loss.alpha = alpha;
        run.loss.beta = beta;
        run.seed = 17;
        run
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let opt = OptimizerConfig::default();
        let mut st = AdamState::new(1);
        let mut p = [0.0];
        adam_step(&mut st, &mut p, &[2.0], &opt);
        assert!((p[0] + 1e-3).abs() < 1e-3 * 1e-8 + 1e-15, "{}", p[0]);
        assert_eq!(st.step_count, 1);

        let before = p;
        let m_before = st.first_moment[0];
        adam_step(&mut st, &mut p, &[0.0], &opt);
        // The first moment decays but still drives the parameter.
        assert_eq!(st.first_moment[0], 0.9 * m_before);
        assert_ne!(p, before);

        let mut fresh = AdamState::new(2);
        let mut q = [0.5, -0.25];
        adam_step(&mut fresh, &mut q, &[0.0, 0.0], &opt);
        assert_eq!(q, [0.5, -0.25]);
        assert!(fresh.second_moment.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn exponential_schedule() {
        let opt = OptimizerConfig {
            schedule: Schedule::Exponential { gamma: 0.5 },
            ..OptimizerConfig::default()
        };
        assert_eq!(opt.rate_at(1), 1e-3);
        assert_eq!(opt.rate_at(3), 0.25e-3);
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let run = tiny_run(ResidualNorm::L2, 0.0, 0.0);
        let grid = CollocationGrid::build(&run.grid, run.ldg.trapezoid().unwrap(), true).unwrap();
        let params = init_params(&run.model);
        let lg = loss_gradient(&params, &grid, &run.ldg, &run.loss).unwrap();
        assert!(lg.grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn piml_gradient_is_solution_independent() {
        // Without deflation, branch row k only sees solution k's residual:
        // perturbing row j's residual weight leaves row k's gradient alone.
        let run = tiny_run(ResidualNorm::L2, 1.0, 0.0);
        let grid = CollocationGrid::build(&run.grid, run.ldg.trapezoid().unwrap(), true).unwrap();
        let params = init_params(&run.model);
        let base = loss_gradient(&params, &grid, &run.ldg, &run.loss).unwrap();
        let mut moved = params.clone();
        moved.branch_mut(1).iter_mut().for_each(|v| *v *= 1.7);
        let other = loss_gradient(&moved, &grid, &run.ldg, &run.loss).unwrap();
        let r0 = params.layout.b_row(0);
        let r2 = params.layout.b_row(2);
        assert_eq!(base.grad.data[r0.clone()], other.grad.data[r0]);
        assert_eq!(base.grad.data[r2.clone()], other.grad.data[r2]);
    }

    #[test]
    fn gradient_matches_finite_differences_l2() {
        let err = gradient_check(&tiny_run(ResidualNorm::L2, 0.02, 2.0), 3).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn small_model_matches_short_central_differences() {
        let run = tiny_run(ResidualNorm::L2, 0.02, 2.0);
        let trap = run.ldg.trapezoid().unwrap();
        let grid = CollocationGrid::build(&run.grid, trap, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let mut model = run.model.clone();
            model.init_seed = rng.gen();
            let mut params = init_params(&model);
            params
                .data
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.3..0.3));
            let stencil = FdStencil::Central { rel_step: 1e-6 };
            let err = compare_with_fd(&params, &grid, &run.ldg, &run.loss, stencil).unwrap();
            assert!(err < 1e-5, "max relative error {err}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_l1() {
        let err = gradient_check(&tiny_run(ResidualNorm::L1, 0.02, 2.0), 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_matches_finite_differences_deflation_only() {
        let err = gradient_check(&tiny_run(ResidualNorm::L2, 0.0, 2.0), 3).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn gradient_matches_finite_differences_soft_boundary() {
        let mut run = tiny_run(ResidualNorm::L2, 0.02, 2.0);
        run.loss.soft_boundary = Some(crate::losses::SoftBoundary {
            alpha1: 1.0,
            alpha2: 3.0,
        });
        let err = gradient_check(&run, 2).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradcheck_suite_clamps_and_passes() {
        let mut run = tiny_run(ResidualNorm::L1, 0.02, 2.0);
        run.model.hidden_width = 64;
        run.grid.size = 33;
        let report = gradcheck_suite(&run, 1).unwrap();
        assert_eq!(
            (report.hidden_width, report.grid_size),
            (GRADCHECK_MAX_HIDDEN, GRADCHECK_MAX_GRID)
        );
        assert_eq!(report.modes.len(), 3);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gradcheck_rejects_large_models() {
        let mut run = tiny_run(ResidualNorm::L2, 1.0, 1.0);
        run.model.hidden_width = 32;
        assert!(gradient_check(&run, 1).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let mut run = tiny_run(ResidualNorm::L1, 0.02, 2.0);
        run.optimizer.epochs = 0;
        let (params, report) = train(&run, None).unwrap();
        assert_eq!(params, init_params(&run.with_seed(run.seed).model));
        assert!(report.history.is_empty());
        assert_eq!(report.epochs_run, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let mut run = tiny_run(ResidualNorm::L1, 0.02, 2.0);
        run.optimizer.epochs = 20;
        let (a, ra) = train(&run, None).unwrap();
        let (b, rb) = train(&run, None).unwrap();
        assert_eq!(a, b);
        let strip = |r: &TrainReport| -> Vec<(f64, Vec<f64>, f64)> {
            r.history
                .iter()
                .map(|h| (h.total, h.piml.clone(), h.deflation))
                .collect()
        };
        assert_eq!(strip(&ra), strip(&rb));
    }

    #[test]
    fn single_solution_without_deflation_reduces_piml() {
        let mut run = tiny_run(ResidualNorm::L2, 1.0, 0.0);
        run.model.solution_count = 1;
        run.optimizer.epochs = 200;
        run.optimizer.learning_rate = 1e-2;
        let (_, report) = train(&run, None).unwrap();
        let first = report.history[0].piml[0];
        assert!(
            report.final_piml[0] < first,
            "{} vs {first}",
            report.final_piml[0]
        );
        assert_eq!(report.final_deflation, 0.0);
    }

    #[test]
    fn deflation_breaks_symmetry() {
        let run = tiny_run(ResidualNorm::L1, 0.0, 2.0);
        let grid = CollocationGrid::build(&run.grid, run.ldg.trapezoid().unwrap(), true).unwrap();
        let mut params = init_params(&run.with_seed(run.seed).model);
        let row0 = params.branch(0).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..params.solutions() {
            for (b, r) in params.branch_mut(k).iter_mut().zip(&row0) {
                *b = r + 1e-3 * rng.gen_range(-1.0..1.0);
            }
        }
        let mut state = AdamState::new(params.layout.len());
        let min_off = |d: &[Vec<f64>]| {
            let k = d.len();
            (0..k)
                .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
                .map(|(i, j)| d[i][j])
                .fold(f64::INFINITY, f64::min)
        };
        let mut prev = f64::NEG_INFINITY;
        for epoch in 0..100 {
            let lg = loss_gradient(&params, &grid, &run.ldg, &run.loss).unwrap();
            let m = min_off(&lg.distances);
            assert!(m > prev, "epoch {epoch}: {m} after {prev}");
            prev = m;
            adam_step(&mut state, &mut params.data, &lg.grad.data, &run.optimizer);
        }
    }

    #[test]
    fn training_writes_run_directory_and_keeps_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = tiny_run(ResidualNorm::L1, 0.02, 2.0);
        run.optimizer.epochs = 15;
        let (params, report) = train(&run, Some(dir.path())).unwrap();
        for f in [
            "config.json",
            "history.csv",
            "checkpoint.json",
            "report.json",
            "timing.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(csv.lines().count(), 16);
        assert!(csv.starts_with("epoch,total,piml_1,piml_2,piml_3,deflation\n"));
        assert_eq!(report.history.len(), report.epochs_run);
        let (_, loaded) = checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(loaded, params);
        let dev = crate::model::boundary_deviation(&params, run.ldg.trapezoid().unwrap(), 1000, 3)
            .unwrap();
        assert!(dev < 1e-9, "{dev}");
    }
}
