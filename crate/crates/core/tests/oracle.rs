use std::sync::OnceLock;

use defpinn::oracle::{
    angle_seed, fd_residual, find_all, find_all_with_patterns, jump_patterns, label_of,
    newton_polish, relax, Discovery, Label, OracleConfig, SolutionSet, Turn,
};
use defpinn::qfield::Q_NORM_BOUND;
use defpinn::{LdGParams, QField};

fn ldg() -> LdGParams {
    LdGParams::default()
}

/// The default M = 65 set, solved once for all tests in this file.
fn full_set() -> &'static SolutionSet {
    static SET: OnceLock<SolutionSet> = OnceLock::new();
    SET.get_or_init(|| find_all(&OracleConfig::default(), &ldg()).unwrap())
}

fn coarse() -> OracleConfig {
    OracleConfig {
        grid_size: 33,
        ..OracleConfig::default()
    }
}

fn max_diff(a: &QField, b: &QField) -> f64 {
    a.q11
        .iter()
        .zip(&b.q11)
        .chain(a.q12.iter().zip(&b.q12))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn six_states_with_small_residuals() {
    let set = full_set();
    let labels: Vec<Label> = set.members.iter().map(|m| m.label).collect();
    assert_eq!(labels, Label::ALL.to_vec());
    assert_eq!(
        set.members.iter().filter(|m| m.label.is_diagonal()).count(),
        2
    );
    let trap = ldg().trapezoid().unwrap();
    for m in &set.members {
        // Recomputed here rather than trusting the stored norm.
        let r = fd_residual(&m.field, &ldg()).norm_inf();
        assert!(r < 1e-8, "{}: residual {r:e}", m.label);
        assert_eq!(m.field.boundary_deviation(trap), 0.0);
        assert!(m.field.is_finite() && m.field.max_norm() <= Q_NORM_BOUND);
        assert_eq!(label_of(&m.field), m.label);
    }
    for (i, a) in set.members.iter().enumerate() {
        for b in &set.members[i + 1..] {
            let d = a.field.l2_distance(&b.field);
            assert!(d > 0.1, "{} vs {}: {d}", a.label, b.label);
        }
    }
    // The diagonal states are the two of lowest energy.
    let worst_d = set.members[..2]
        .iter()
        .map(|m| m.energy)
        .fold(f64::MIN, f64::max);
    let best_r = set.members[2..]
        .iter()
        .map(|m| m.energy)
        .fold(f64::MAX, f64::min);
    assert!(worst_d < best_r);
}

#[test]
fn set_is_closed_under_reflections() {
    let set = full_set();
    for m in &set.members {
        for image in [
            m.field.reflect_x(),
            m.field.reflect_y(),
            m.field.reflect_diagonal(),
        ] {
            let nearest = set
                .members
                .iter()
                .map(|o| max_diff(&image, &o.field))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-6, "{}: {nearest:e}", m.label);
        }
    }
    assert!(set.symmetry_defect() < 1e-6);
}

#[test]
fn converged_state_is_a_fixed_point() {
    let member = full_set().get(Label::D1).unwrap();
    let config = OracleConfig::default();
    let polished = newton_polish(&member.field, &config, &ldg());
    assert_eq!(polished.steps, 0);
    assert!(polished.converged);
    let relaxed = relax(&member.field, &config, &ldg()).unwrap();
    assert_eq!(relaxed.iterations, 0);
    assert_eq!(relaxed.field, member.field);
}

#[test]
fn newton_converges_quadratically_on_a_diagonal_state() {
    let config = OracleConfig::default();
    let seed = angle_seed(
        &[Turn::Plus, Turn::Minus, Turn::Plus, Turn::Plus],
        &config,
        &ldg(),
    )
    .unwrap();
    let relaxed = relax(&seed, &config, &ldg()).unwrap();
    let polished = newton_polish(&relaxed.field, &config, &ldg());
    assert!(polished.converged);
    assert!(label_of(&polished.field).is_diagonal());
    let r = &polished.residual_history;
    assert!(r.len() >= 3, "{r:?}");
    for w in r[r.len() - 3..].windows(2) {
        assert!(w[1] <= w[0] * w[0], "{r:?}");
    }
}

#[test]
fn flow_descends_in_energy() {
    let config = coarse();
    for jumps in [
        [Turn::Plus, Turn::Plus, Turn::Minus, Turn::Minus],
        [Turn::Plus; 4],
    ] {
        let seed = angle_seed(&jumps, &config, &ldg()).unwrap();
        let relaxed = relax(&seed, &config, &ldg()).unwrap();
        assert!(relaxed.residual_inf < config.flow_tol);
        let e = &relaxed.energies;
        assert!(e.windows(2).all(|w| w[1] <= w[0]), "energy increased");
        assert!(e.last().unwrap() < &e[0]);
    }
}

#[test]
fn seed_order_does_not_change_the_set() {
    let config = coarse();
    let forward = find_all(&config, &ldg()).unwrap();
    let mut patterns = jump_patterns();
    patterns.reverse();
    patterns.swap(0, 7);
    let shuffled = find_all_with_patterns(&config, &ldg(), &patterns).unwrap();
    assert_eq!(forward.summary().labels, shuffled.summary().labels);
    for (a, b) in forward.members.iter().zip(&shuffled.members) {
        assert_eq!(a.field, b.field);
    }
}

#[test]
fn deflated_discovery_finds_the_same_states() {
    let config = coarse();
    let plain = find_all(&config, &ldg()).unwrap();
    let deflated = find_all(
        &OracleConfig {
            discovery: Discovery::DeflatedNewton,
            ..config
        },
        &ldg(),
    )
    .unwrap();
    for (a, b) in plain.members.iter().zip(&deflated.members) {
        assert_eq!(a.label, b.label);
        assert!(a.field.l2_distance(&b.field) < 1e-8);
        assert!((a.energy - b.energy).abs() < 1e-8 * a.energy);
    }
}
