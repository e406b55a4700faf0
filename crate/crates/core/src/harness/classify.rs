//! Sampling trained solutions on the oracle lattice and matching them to
//! the labelled reference states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cutoff_omega, extend_boundary, TrapezoidParams};
use crate::losses::{energy, LdGParams};
use crate::model::{trunk_eval, ModelParams};
use crate::numeric::dot;
use crate::oracle::{Label, SolutionSet};
use crate::qfield::QField;

/// `G(k, ·)` on the `m × m` lattice, with exact boundary data on the
/// boundary nodes.
pub fn sample_model(
    params: &ModelParams,
    k: usize,
    m: usize,
    trap: TrapezoidParams,
) -> Result<QField> {
    if k >= params.solutions() {
        return Err(Error::Index {
            index: k,
            len: params.solutions(),
        });
    }
    Ok(sample_all(params, m, trap)?.swap_remove(k))
}

/// Every solution of the model on the `m × m` lattice.
pub fn sample_all(params: &ModelParams, m: usize, trap: TrapezoidParams) -> Result<Vec<QField>> {
    let p = params.features();
    let mut fields = vec![QField::with_boundary(m, trap)?; params.solutions()];
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            let x = fields[0].point(i, j);
            let tau = trunk_eval(params, x).tau;
            let omega = cutoff_omega(x).value;
            let lift = extend_boundary(x, trap);
            let idx = fields[0].idx(i, j);
            for (k, field) in fields.iter_mut().enumerate() {
                let b = params.branch(k);
                field.q11[idx] = omega * dot(&b[..p], &tau) + lift;
                field.q12[idx] = omega * dot(&b[p..], &tau);
            }
        }
    }
    Ok(fields)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Oracle label assigned to each trained solution, by trained index.
    pub assignment: Vec<Label>,
    /// `‖trained − oracle‖ / ‖oracle‖` per trained solution.
    pub relative_errors: Vec<f64>,
    pub trained_energies: Vec<f64>,
    pub oracle_energies: Vec<f64>,
    pub energy_relative_errors: Vec<f64>,
    /// Sum of full-field L² distances of the chosen assignment.
    pub total_distance: f64,
    pub classification_tol: f64,
    pub energy_tol: f64,
    pub classification_passed: bool,
    pub energy_passed: bool,
}

/// Lexicographic permutations of `0..n`.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

/// Exhaustive minimum-total-distance matching of trained fields to the oracle
/// members. Ties keep the lexicographically first assignment.
pub fn classify(
    trained: &[QField],
    oracle: &SolutionSet,
    ldg: &LdGParams,
    classification_tol: f64,
    energy_tol: f64,
) -> Result<ClassificationReport> {
    let n = oracle.members.len();
    if trained.len() != n {
        return Err(Error::domain(format!(
            "{} trained solutions for {n} reference states",
            trained.len()
        )));
    }
    if let Some(t) = trained.iter().find(|t| t.m != oracle.members[0].field.m) {
        return Err(Error::domain(format!(
            "trained lattice {} differs from reference lattice {}",
            t.m, oracle.members[0].field.m
        )));
    }
    let cost: Vec<Vec<f64>> = trained
        .iter()
        .map(|t| {
            oracle
                .members
                .iter()
                .map(|o| t.l2_distance(&o.field))
                .collect()
        })
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(t, &o)| cost[t][o]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (total_distance, perm) = best.expect("at least one permutation");
    let relative_errors: Vec<f64> = perm
        .iter()
        .enumerate()
        .map(|(t, &o)| cost[t][o] / oracle.members[o].field.l2_norm())
        .collect();
    let trained_energies = trained
        .iter()
        .map(|t| energy(t, ldg))
        .collect::<Result<Vec<f64>>>()?;
    let oracle_energies: Vec<f64> = perm.iter().map(|&o| oracle.members[o].energy).collect();
    let energy_relative_errors: Vec<f64> = trained_energies
        .iter()
        .zip(&oracle_energies)
        .map(|(t, o)| (t - o).abs() / o.abs())
        .collect();
    Ok(ClassificationReport {
        assignment: perm.iter().map(|&o| oracle.members[o].label).collect(),
        classification_passed: relative_errors.iter().all(|&e| e <= classification_tol),
        energy_passed: energy_relative_errors.iter().all(|&e| e <= energy_tol),
        relative_errors,
        trained_energies,
        oracle_energies,
        energy_relative_errors,
        total_distance,
        classification_tol,
        energy_tol,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::oracle::Member;

    fn trap() -> TrapezoidParams {
        LdGParams::default().trapezoid().unwrap()
    }

    fn small_model() -> ModelParams {
        init_params(&ModelConfig {
            hidden_width: 8,
            feature_count: 3,
            solution_count: 6,
            init_seed: 11,
            ..ModelConfig::default()
        })
    }

    /// Six smooth, mutually distant synthetic states.
    fn synthetic_set(m: usize) -> SolutionSet {
        let ldg = LdGParams::default();
        let members: Vec<Member> = Label::ALL
            .iter()
            .enumerate()
            .map(|(n, &label)| {
                let mut q = QField::zeros(m);
                for j in 0..m {
                    for i in 0..m {
                        let p = q.point(i, j);
                        let th = 0.7 * n as f64 + (n as f64 + 1.0) * p.x - p.y;
                        let k = q.idx(i, j);
                        q.q11[k] = th.cos();
                        q.q12[k] = th.sin();
                    }
                }
                Member {
                    label,
                    energy: energy(&q, &ldg).unwrap(),
                    field: q,
                    residual_inf: 0.0,
                    seeds: Vec::new(),
                }
            })
            .collect();
        SolutionSet {
            distances: Vec::new(),
            members,
        }
    }

    #[test]
    fn permutations_are_complete() {
        let p = permutations(6);
        assert_eq!(p.len(), 720);
        let mut sorted = p.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 720);
        assert_eq!(p[0], vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn sampling_keeps_boundary_and_restricts_exactly() {
        let params = small_model();
        let coarse = sample_all(&params, 9, trap()).unwrap();
        let fine = sample_all(&params, 17, trap()).unwrap();
        let reference = QField::with_boundary(9, trap()).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            for (i, j) in c.boundary_nodes() {
                let k = c.idx(i, j);
                assert_eq!(c.q11[k].to_bits(), reference.q11[k].to_bits());
                assert_eq!(c.q12[k].to_bits(), reference.q12[k].to_bits());
            }
            for j in 0..9 {
                for i in 0..9 {
                    assert_eq!(
                        c.q11[c.idx(i, j)].to_bits(),
                        f.q11[f.idx(2 * i, 2 * j)].to_bits()
                    );
                    assert_eq!(
                        c.q12[c.idx(i, j)].to_bits(),
                        f.q12[f.idx(2 * i, 2 * j)].to_bits()
                    );
                }
            }
        }
        assert_eq!(sample_model(&params, 2, 9, trap()).unwrap(), coarse[2]);
        assert!(sample_model(&params, 6, 9, trap()).is_err());
    }

    #[test]
    fn zero_branch_samples_the_lift() {
        let mut params = small_model();
        params.branch_mut(3).fill(0.0);
        let q = sample_model(&params, 3, 9, trap()).unwrap();
        for j in 0..9 {
            for i in 0..9 {
                let k = q.idx(i, j);
                let expect = if q.is_boundary_node(i, j) {
                    crate::geometry::boundary_q1(q.point(i, j), trap()).unwrap()
                } else {
                    extend_boundary(q.point(i, j), trap())
                };
                assert_eq!(q.q11[k], expect);
                assert_eq!(q.q12[k], 0.0);
            }
        }
    }

    #[test]
    fn identical_sets_match_with_zero_error() {
        let set = synthetic_set(17);
        let trained: Vec<QField> = set.members.iter().map(|m| m.field.clone()).collect();
        let r = classify(&trained, &set, &LdGParams::default(), 0.15, 0.1).unwrap();
        assert_eq!(r.assignment, Label::ALL.to_vec());
        assert!(r.relative_errors.iter().all(|&e| e == 0.0));
        assert_eq!(r.total_distance, 0.0);
        assert!(r.classification_passed && r.energy_passed);
    }

    #[test]
    fn permutation_is_recovered() {
        let set = synthetic_set(17);
        let order = [4, 0, 5, 2, 1, 3];
        let trained: Vec<QField> = order
            .iter()
            .map(|&o| set.members[o].field.clone())
            .collect();
        let r = classify(&trained, &set, &LdGParams::default(), 0.15, 0.1).unwrap();
        let expect: Vec<Label> = order.iter().map(|&o| Label::ALL[o]).collect();
        assert_eq!(r.assignment, expect);
    }

    #[test]
    fn noise_errors_scale_with_amplitude() {
        let set = synthetic_set(33);
        let eta = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trained: Vec<QField> = set
            .members
            .iter()
            .map(|m| {
                let mut q = m.field.clone();
                for v in q.q11.iter_mut().chain(q.q12.iter_mut()) {
                    *v += rng.gen_range(-eta..eta);
                }
                q
            })
            .collect();
        let r = classify(&trained, &set, &LdGParams::default(), 0.15, 0.1).unwrap();
        assert_eq!(r.assignment, Label::ALL.to_vec());
        for (e, m) in r.relative_errors.iter().zip(&set.members) {
            let scale = eta / m.field.l2_norm();
            assert!(*e < 3.0 * scale && *e > scale / 3.0, "{e} vs {scale}");
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let set = synthetic_set(17);
        let few: Vec<QField> = set.members[..5].iter().map(|m| m.field.clone()).collect();
        assert!(classify(&few, &set, &LdGParams::default(), 0.15, 0.1).is_err());
        let wrong = vec![QField::zeros(9); 6];
        assert!(classify(&wrong, &set, &LdGParams::default(), 0.15, 0.1).is_err());
    }
}
