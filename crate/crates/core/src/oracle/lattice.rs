//! Interior-node algebra on the uniform `M × M` lattice.
//!
//! Unknowns are the `n = M − 2` interior nodes per axis. An interior vector
//! stores both components back to back: `[q11 (n²) | q12 (n²)]`, each block
//! y-major (`(j − 1)·n + (i − 1)` for lattice node `(i, j)`).

use crate::losses::LdGParams;
use crate::numeric::pairwise_sum;
use crate::qfield::QField;

/// Orthonormal type-I sine transform of size `n` as a dense matrix, plus the
/// Dirichlet eigenvalues of the 1D second difference.
#[derive(Clone, Debug)]
pub struct SineBasis {
    pub n: usize,
    matrix: Vec<f64>,
    /// Eigenvalues of `−D²_h` on `n` interior nodes.
    pub eigenvalues: Vec<f64>,
}

impl SineBasis {
    pub fn new(n: usize, h: f64) -> Self {
        let scale = (2.0 / (n + 1) as f64).sqrt();
        let mut matrix = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let arg = std::f64::consts::PI * ((j + 1) * (k + 1)) as f64 / (n + 1) as f64;
                matrix[j * n + k] = scale * arg.sin();
            }
        }
        let eigenvalues = (0..n)
            .map(|k| {
                let t = std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64;
                (2.0 - 2.0 * t.cos()) / (h * h)
            })
            .collect();
        SineBasis {
            n,
            matrix,
            eigenvalues,
        }
    }

    /// `S X S` for a y-major `n × n` block. The transform is its own inverse.
    pub fn transform(&self, x: &[f64], out: &mut [f64], tmp: &mut Vec<f64>) {
        let n = self.n;
        tmp.clear();
        tmp.resize(n * n, 0.0);
        // tmp = S X
        for r in 0..n {
            let row = &mut tmp[r * n..(r + 1) * n];
            for k in 0..n {
                let s = self.matrix[r * n + k];
                let xk = &x[k * n..(k + 1) * n];
                for (t, v) in row.iter_mut().zip(xk) {
                    *t += s * v;
                }
            }
        }
        // out = tmp S
        out.fill(0.0);
        for r in 0..n {
            let row = &mut out[r * n..(r + 1) * n];
            let trow = &tmp[r * n..(r + 1) * n];
            for k in 0..n {
                let t = trow[k];
                let sk = &self.matrix[k * n..(k + 1) * n];
                for (o, s) in row.iter_mut().zip(sk) {
                    *o += t * s;
                }
            }
        }
    }

    /// Solves `(a I + b L) u = f` blockwise, where `L` is the zero-Dirichlet
    /// 5-point `−Δ_h`. Requires `a + b·λ > 0` for every eigenvalue pair.
    pub fn helmholtz_solve(&self, a: f64, b: f64, f: &[f64], u: &mut [f64], work: &mut Work) {
        let n2 = self.n * self.n;
        assert_eq!(f.len() % n2, 0);
        work.spec.resize(n2, 0.0);
        for (fb, ub) in f.chunks(n2).zip(u.chunks_mut(n2)) {
            self.transform(fb, &mut work.spec, &mut work.tmp);
            for j in 0..self.n {
                for i in 0..self.n {
                    work.spec[j * self.n + i] /=
                        a + b * (self.eigenvalues[i] + self.eigenvalues[j]);
                }
            }
            self.transform(&work.spec, ub, &mut work.tmp);
        }
    }
}

/// Scratch buffers for the sine transform.
#[derive(Clone, Debug, Default)]
pub struct Work {
    spec: Vec<f64>,
    tmp: Vec<f64>,
}

/// Lattice geometry shared by the solver stages.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub basis: SineBasis,
}

impl Lattice {
    pub fn new(m: usize) -> Self {
        assert!(m >= 3);
        let n = m - 2;
        let h = 1.0 / (m - 1) as f64;
        Lattice {
            m,
            n,
            h,
            basis: SineBasis::new(n, h),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n * self.n
    }

    fn node(&self, i: usize, j: usize) -> usize {
        (j - 1) * self.n + (i - 1)
    }

    pub fn interior(&self, q: &QField) -> Vec<f64> {
        let n2 = self.n * self.n;
        let mut v = vec![0.0; 2 * n2];
        for j in 1..=self.n {
            for i in 1..=self.n {
                let k = q.idx(i, j);
                let a = self.node(i, j);
                v[a] = q.q11[k];
                v[n2 + a] = q.q12[k];
            }
        }
        v
    }

    pub fn set_interior(&self, q: &mut QField, v: &[f64]) {
        let n2 = self.n * self.n;
        for j in 1..=self.n {
            for i in 1..=self.n {
                let k = q.idx(i, j);
                let a = self.node(i, j);
                q.q11[k] = v[a];
                q.q12[k] = v[n2 + a];
            }
        }
    }

    /// Boundary part of `−Δ_h`: the sum of boundary neighbours over `h²`,
    /// so that `−Δ_h Q = L q − boundary_load`.
    pub fn boundary_load(&self, q: &QField) -> Vec<f64> {
        let n2 = self.n * self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut b = vec![0.0; 2 * n2];
        for j in 1..=self.n {
            for i in 1..=self.n {
                let a = self.node(i, j);
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ni, nj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                    if q.is_boundary_node(ni, nj) {
                        let k = q.idx(ni, nj);
                        b[a] += q.q11[k] * inv_h2;
                        b[n2 + a] += q.q12[k] * inv_h2;
                    }
                }
            }
        }
        b
    }

    /// `L v` for the zero-Dirichlet 5-point `−Δ_h`, both components.
    pub fn neg_laplacian(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let n2 = n * n;
        let inv_h2 = 1.0 / (self.h * self.h);
        for c in 0..2 {
            let vb = &v[c * n2..(c + 1) * n2];
            let ob = &mut out[c * n2..(c + 1) * n2];
            for j in 0..n {
                for i in 0..n {
                    let a = j * n + i;
                    let mut s = 4.0 * vb[a];
                    if i > 0 {
                        s -= vb[a - 1];
                    }
                    if i + 1 < n {
                        s -= vb[a + 1];
                    }
                    if j > 0 {
                        s -= vb[a - n];
                    }
                    if j + 1 < n {
                        s -= vb[a + n];
                    }
                    ob[a] = s * inv_h2;
                }
            }
        }
    }

    /// `2ε⁻²(1 − |q|²) q` per node.
    pub fn bulk_force(&self, v: &[f64], ldg: &LdGParams, out: &mut [f64]) {
        let n2 = self.n * self.n;
        let k = 2.0 / (ldg.epsilon * ldg.epsilon);
        for a in 0..n2 {
            let (p, q) = (v[a], v[n2 + a]);
            let s = k * (1.0 - p * p - q * q);
            out[a] = s * p;
            out[n2 + a] = s * q;
        }
    }

    /// `F = L q − load − 2ε⁻²(1 − |q|²) q`.
    pub fn residual(&self, v: &[f64], load: &[f64], ldg: &LdGParams, out: &mut [f64]) {
        self.neg_laplacian(v, out);
        let n2 = self.n * self.n;
        let k = 2.0 / (ldg.epsilon * ldg.epsilon);
        for a in 0..n2 {
            let (p, q) = (v[a], v[n2 + a]);
            let s = k * (1.0 - p * p - q * q);
            out[a] -= load[a] + s * p;
            out[n2 + a] -= load[n2 + a] + s * q;
        }
    }

    /// `J w` with `J = L − 2ε⁻²[(1 − |q|²) I − 2 q qᵀ]` at state `v`.
    pub fn jacobian_apply(&self, v: &[f64], ldg: &LdGParams, w: &[f64], out: &mut [f64]) {
        self.neg_laplacian(w, out);
        let n2 = self.n * self.n;
        let k = 2.0 / (ldg.epsilon * ldg.epsilon);
        for a in 0..n2 {
            let (p, q) = (v[a], v[n2 + a]);
            let (x, y) = (w[a], w[n2 + a]);
            let s = 1.0 - p * p - q * q;
            let dot = p * x + q * y;
            out[a] -= k * (s * x - 2.0 * p * dot);
            out[n2 + a] -= k * (s * y - 2.0 * q * dot);
        }
    }

    /// Lattice energy `Σ_edges |ΔQ|² + h² ε⁻² Σ_interior (|Q|² − 1)²` over
    /// edges with at least one interior end. Its gradient in the interior
    /// unknowns is `2h² F`.
    pub fn energy(&self, q: &QField, ldg: &LdGParams) -> f64 {
        let m = self.m;
        let inv_e2 = 1.0 / (ldg.epsilon * ldg.epsilon);
        let mut terms = Vec::with_capacity(3 * m * m);
        for j in 0..m {
            for i in 0..m {
                let k = q.idx(i, j);
                let interior = !q.is_boundary_node(i, j);
                if interior {
                    let n2 = q.q11[k] * q.q11[k] + q.q12[k] * q.q12[k];
                    terms.push(self.h * self.h * inv_e2 * (n2 - 1.0).powi(2));
                }
                for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                    if ni >= m || nj >= m {
                        continue;
                    }
                    if !interior && q.is_boundary_node(ni, nj) {
                        continue;
                    }
                    let l = q.idx(ni, nj);
                    terms.push((q.q11[l] - q.q11[k]).powi(2) + (q.q12[l] - q.q12[k]).powi(2));
                }
            }
        }
        pairwise_sum(&terms)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sine_transform_is_an_involution() {
        let b = SineBasis::new(7, 0.125);
        let x = random(49, 1);
        let (mut y, mut z, mut tmp) = (vec![0.0; 49], vec![0.0; 49], Vec::new());
        b.transform(&x, &mut y, &mut tmp);
        b.transform(&y, &mut z, &mut tmp);
        for (a, c) in x.iter().zip(&z) {
            assert!((a - c).abs() < 1e-13);
        }
    }

    #[test]
    fn helmholtz_solve_inverts_operator() {
        let lat = Lattice::new(11);
        let f = random(lat.len(), 2);
        let mut u = vec![0.0; lat.len()];
        lat.basis
            .helmholtz_solve(3.0, 0.5, &f, &mut u, &mut Work::default());
        let mut lu = vec![0.0; lat.len()];
        lat.neg_laplacian(&u, &mut lu);
        for a in 0..f.len() {
            let back = 3.0 * u[a] + 0.5 * lu[a];
            assert!(
                (back - f[a]).abs() < 1e-11 * (1.0 + f[a].abs()),
                "{back} vs {}",
                f[a]
            );
        }
    }

    #[test]
    fn energy_gradient_is_scaled_residual() {
        let lat = Lattice::new(7);
        let ldg = LdGParams { epsilon: 0.3 };
        let mut q = QField::zeros(7);
        let r = random(2 * 49, 3);
        q.q11.copy_from_slice(&r[..49]);
        q.q12.copy_from_slice(&r[49..]);
        let v = lat.interior(&q);
        let load = lat.boundary_load(&q);
        let mut f = vec![0.0; lat.len()];
        lat.residual(&v, &load, &ldg, &mut f);
        let step = 1e-6;
        for a in [0, 7, 24, 30, 49] {
            let mut up = v.clone();
            up[a] += step;
            let mut dn = v.clone();
            dn[a] -= step;
            let (mut qu, mut qd) = (q.clone(), q.clone());
            lat.set_interior(&mut qu, &up);
            lat.set_interior(&mut qd, &dn);
            let fd = (lat.energy(&qu, &ldg) - lat.energy(&qd, &ldg)) / (2.0 * step);
            let an = 2.0 * lat.h * lat.h * f[a];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
        }
    }

    #[test]
    fn jacobian_matches_residual_differences() {
        let lat = Lattice::new(9);
        let ldg = LdGParams::default();
        let mut q = QField::zeros(9);
        let r = random(2 * 81, 4);
        q.q11.copy_from_slice(&r[..81]);
        q.q12.copy_from_slice(&r[81..]);
        let v = lat.interior(&q);
        let load = lat.boundary_load(&q);
        let w = random(lat.len(), 5);
        let mut jw = vec![0.0; lat.len()];
        lat.jacobian_apply(&v, &ldg, &w, &mut jw);
        let t = 1e-6;
        let (mut fp, mut fm) = (vec![0.0; lat.len()], vec![0.0; lat.len()]);
        let vp: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + t * b).collect();
        let vm: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - t * b).collect();
        lat.residual(&vp, &load, &ldg, &mut fp);
        lat.residual(&vm, &load, &ldg, &mut fm);
        let scale = jw.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for a in 0..jw.len() {
            let fd = (fp[a] - fm[a]) / (2.0 * t);
            assert!((fd - jw[a]).abs() < 1e-6 * scale, "{fd} vs {}", jw[a]);
        }
    }
}
