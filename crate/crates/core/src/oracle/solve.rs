//! Semi-implicit gradient flow, restarted GMRES and damped Newton.

use log::{debug, warn};

use super::lattice::{Lattice, Work};
use super::OracleConfig;
use crate::error::{Error, Result};
use crate::losses::LdGParams;
use crate::numeric::{dot, norm2, norm_inf};
use crate::qfield::QField;

#[derive(Clone, Debug)]
pub struct Relaxed {
    pub field: QField,
    pub iterations: usize,
    pub residual_inf: f64,
    /// Lattice energy after every accepted step, starting with the seed.
    pub energies: Vec<f64>,
}

fn lattice_energy(lat: &Lattice, frame: &mut QField, v: &[f64], ldg: &LdGParams) -> f64 {
    lat.set_interior(frame, v);
    lat.energy(frame, ldg)
}

/// Semi-implicit flow
/// `(1 + τS + τL) q⁺ = q + τ(load + 2ε⁻²(1 − |q|²) q + S q)`
/// with step control on the lattice energy.
pub fn relax(seed: &QField, config: &OracleConfig, ldg: &LdGParams) -> Result<Relaxed> {
    let lat = Lattice::new(seed.m);
    relax_on(&lat, seed, config, ldg)
}

pub(crate) fn relax_on(
    lat: &Lattice,
    seed: &QField,
    config: &OracleConfig,
    ldg: &LdGParams,
) -> Result<Relaxed> {
    let mut frame = seed.clone();
    let load = lat.boundary_load(seed);
    let mut v = lat.interior(seed);
    let len = lat.len();
    let (mut f, mut rhs, mut u) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut work = Work::default();
    let s = config.stabilization;
    let mut tau = config.flow_step;
    let mut energy = lattice_energy(lat, &mut frame, &v, ldg);
    let mut energies = vec![energy];
    for it in 0..config.flow_max_iters {
        lat.residual(&v, &load, ldg, &mut f);
        let r = norm_inf(&f);
        if r < config.flow_tol {
            lat.set_interior(&mut frame, &v);
            return Ok(Relaxed {
                field: frame,
                iterations: it,
                residual_inf: r,
                energies,
            });
        }
        lat.bulk_force(&v, ldg, &mut rhs);
        for a in 0..len {
            rhs[a] = v[a] + tau * (load[a] + rhs[a] + s * v[a]);
        }
        lat.basis
            .helmholtz_solve(1.0 + tau * s, tau, &rhs, &mut u, &mut work);
        let trial = lattice_energy(lat, &mut frame, &u, ldg);
        if trial <= energy {
            std::mem::swap(&mut v, &mut u);
            energy = trial;
            energies.push(energy);
            tau = (tau * 1.5).min(config.flow_step_max);
        } else {
            tau *= 0.5;
            if tau < 1e-14 {
                return Err(Error::Convergence(format!(
                    "flow step underflow after {it} iterations, residual {r:.3e}"
                )));
            }
        }
    }
    lat.residual(&v, &load, ldg, &mut f);
    Err(Error::Convergence(format!(
        "flow did not reach {:.1e} in {} iterations (residual {:.3e})",
        config.flow_tol,
        config.flow_max_iters,
        norm_inf(&f)
    )))
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Right-preconditioned restarted GMRES for `A x = b` from `x = 0`.
pub fn gmres(
    mut apply_a: impl FnMut(&[f64], &mut [f64]),
    mut apply_m: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    restart: usize,
    max_iters: usize,
) -> GmresOutcome {
    let len = b.len();
    x.fill(0.0);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return GmresOutcome {
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut r = b.to_vec();
    let mut total = 0;
    let mut tmp = vec![0.0; len];
    let mut z = vec![0.0; len];
    loop {
        let beta = norm2(&r);
        if beta <= rtol * b_norm || total >= max_iters {
            return GmresOutcome {
                iterations: total,
                relative_residual: beta / b_norm,
            };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iters {
            apply_m(&basis[k], &mut z);
            apply_a(&z, &mut tmp);
            let mut col = vec![0.0; k + 2];
            for (i, q) in basis.iter().enumerate() {
                let c = dot(&tmp, q);
                col[i] = c;
                for (t, qv) in tmp.iter_mut().zip(q) {
                    *t -= c * qv;
                }
            }
            let hn = norm2(&tmp);
            col[k + 1] = hn;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let d = col[k].hypot(col[k + 1]);
            let (c, s) = if d == 0.0 {
                (1.0, 0.0)
            } else {
                (col[k] / d, col[k + 1] / d)
            };
            cs.push(c);
            sn.push(s);
            col[k] = d;
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hess.push(col);
            total += 1;
            k += 1;
            if g[k].abs() <= rtol * b_norm || hn == 0.0 {
                break;
            }
            basis.push(tmp.iter().map(|v| v / hn).collect());
        }
        // Back substitution for the k Krylov coefficients.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (j, yj) in y.iter().enumerate().skip(i + 1) {
                s -= hess[j][i] * yj;
            }
            y[i] = s / hess[i][i];
        }
        tmp.fill(0.0);
        for (yi, q) in y.iter().zip(&basis) {
            for (t, qv) in tmp.iter_mut().zip(q) {
                *t += yi * qv;
            }
        }
        apply_m(&tmp, &mut z);
        for (xv, zv) in x.iter_mut().zip(&z) {
            *xv += zv;
        }
        apply_a(x, &mut tmp);
        for a in 0..len {
            r[a] = b[a] - tmp[a];
        }
    }
}

#[derive(Clone, Debug)]
pub struct Polished {
    pub field: QField,
    pub steps: usize,
    /// Residual ∞-norm at every iterate, starting with the input.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Set when the line search failed; `field` is then the input.
    pub warning: Option<String>,
}

/// Previously found interior states that a deflated solve is pushed away from.
#[derive(Clone, Debug, Default)]
pub struct Deflation {
    pub roots: Vec<Vec<f64>>,
}

impl Deflation {
    /// `ln Π (1/d² + 1)` and its gradient, `d` the discrete L² distance.
    fn log_factor(&self, v: &[f64], h2: f64, grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut total = 0.0;
        for root in &self.roots {
            let d2 = h2
                * v.iter()
                    .zip(root)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
            total += (1.0 / d2 + 1.0).ln();
            let c = -2.0 * h2 / (d2 * d2 + d2);
            for ((g, a), b) in grad.iter_mut().zip(v).zip(root) {
                *g += c * (a - b);
            }
        }
        total
    }
}

/// Damped Newton on `F(q) = 0` with matrix-free GMRES and a shifted
/// spectral preconditioner `(L + cI)⁻¹`.
pub fn newton_polish(q: &QField, config: &OracleConfig, ldg: &LdGParams) -> Polished {
    let lat = Lattice::new(q.m);
    newton_on(&lat, q, config, ldg, &Deflation::default())
}

pub(crate) fn newton_on(
    lat: &Lattice,
    q: &QField,
    config: &OracleConfig,
    ldg: &LdGParams,
    deflation: &Deflation,
) -> Polished {
    let load = lat.boundary_load(q);
    let mut v = lat.interior(q);
    let len = lat.len();
    let h2 = lat.h * lat.h;
    let mut f = vec![0.0; len];
    let mut trial_f = vec![0.0; len];
    let mut dgrad = vec![0.0; len];
    let mut work = Work::default();
    let shift = config.preconditioner_shift;
    lat.residual(&v, &load, ldg, &mut f);
    let mut history = vec![norm_inf(&f)];
    let fail = |history: Vec<f64>, steps: usize, msg: String| {
        warn!("{msg}");
        Polished {
            field: q.clone(),
            steps,
            residual_history: history,
            converged: false,
            warning: Some(msg),
        }
    };
    for step in 0..config.newton_max_iters {
        let r_inf = *history.last().unwrap();
        if r_inf < config.newton_tol {
            let mut field = q.clone();
            lat.set_interior(&mut field, &v);
            return Polished {
                field,
                steps: step,
                residual_history: history,
                converged: true,
                warning: None,
            };
        }
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let mut delta = vec![0.0; len];
        let out = gmres(
            |w, o| lat.jacobian_apply(&v, ldg, w, o),
            |w, o| lat.basis.helmholtz_solve(shift, 1.0, w, o, &mut work),
            &rhs,
            &mut delta,
            config.krylov_tol,
            config.krylov_restart,
            config.krylov_max_iters,
        );
        debug!(
            "newton step {step}: residual {r_inf:.3e}, gmres {} its, rel {:.1e}",
            out.iterations, out.relative_residual
        );
        // Deflated step: the plain step scaled by 1/(1 − ∇ln M · δ).
        let merit_scale = |w: &[f64], g: &mut [f64]| -> f64 {
            if deflation.roots.is_empty() {
                1.0
            } else {
                deflation.log_factor(w, h2, g).exp()
            }
        };
        if !deflation.roots.is_empty() {
            merit_scale(&v, &mut dgrad);
            let t = 1.0 - dot(&dgrad, &delta);
            if t.abs() > 1e-12 {
                delta.iter_mut().for_each(|d| *d /= t);
            }
        }
        let base = merit_scale(&v, &mut dgrad) * norm2(&f);
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut trial = vec![0.0; len];
        while lambda >= 1.0 / 1024.0 {
            for a in 0..len {
                trial[a] = v[a] + lambda * delta[a];
            }
            lat.residual(&trial, &load, ldg, &mut trial_f);
            let merit = merit_scale(&trial, &mut dgrad) * norm2(&trial_f);
            if merit.is_finite() && merit <= (1.0 - 1e-4 * lambda) * base {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return fail(
                history,
                step,
                format!("newton line search failed at residual {r_inf:.3e}"),
            );
        }
        std::mem::swap(&mut v, &mut trial);
        std::mem::swap(&mut f, &mut trial_f);
        history.push(norm_inf(&f));
    }
    let last = *history.last().unwrap();
    if last < config.newton_tol {
        let mut field = q.clone();
        lat.set_interior(&mut field, &v);
        return Polished {
            field,
            steps: config.newton_max_iters,
            residual_history: history,
            converged: true,
            warning: None,
        };
    }
    let steps = history.len() - 1;
    fail(
        history,
        steps,
        format!("newton did not converge (residual {last:.3e})"),
    )
}
