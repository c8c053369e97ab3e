mod common;

use common::{random_policy, random_values, sup};
use laser_core::estimators::{is_return, vtrace_return};
use laser_core::mdp::{rollout, solve_v_exact, MdpParts, Trajectory};
use laser_core::oracle::{
    acceptance, contraction_probe, exact_estimator_expectation, trusted_expected_operator, Behaviours, EnumerationSpec,
    OperatorKind,
};
use laser_core::trust_region::{
    compute_mask, trusted_is_return, trusted_value_estimate, trusted_vtrace_return, EstimatorKind, MaskedTrajectory,
};
use laser_core::{zoo, ClipConfig, Mdp, RelevanceConfig, TabularPolicy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two decision layers into a terminal state; every episode ends within two
/// steps, so whole-episode estimates carry no truncation.
fn layered() -> Mdp {
    Mdp::new(MdpParts {
        n_states: 3,
        n_actions: 2,
        transition: vec![
            0.0, 0.6, 0.4, /**/ 0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, /**/ 0.0, 0.0, 1.0, //
            0.0, 0.0, 1.0, /**/ 0.0, 0.0, 1.0,
        ],
        reward: vec![1.0, -0.5, 2.0, 0.3, 0.0, 0.0],
        discount: 0.9,
        terminal: vec![false, false, true],
        initial_distribution: vec![0.5, 0.5, 0.0],
    })
    .unwrap()
}

fn repeated(row: [f64; 2]) -> TabularPolicy {
    TabularPolicy::new(3, 2, row.iter().chain(&row).chain(&row).copied().collect()).unwrap()
}

/// Relevance scores against (0.7, 0.3) are about 0.012, 0.446 and 1.349.
fn layered_behaviours() -> Vec<TabularPolicy> {
    vec![repeated([0.5, 0.5]), repeated([0.1, 0.9]), repeated([0.02, 0.98])]
}

#[test]
fn trusted_is_expectation_is_unbiased_whatever_b_accepts() {
    let mdp = layered();
    let pi = repeated([0.7, 0.3]);
    let vpi = solve_v_exact(&mdp, &pi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_values(&mut rng, 3, 3.0);
    let expected_accepts = [vec![true, false, false], vec![true, true, false], vec![true, true, false], vec![true, true, true]];
    for (b, want) in [0.1, 0.5, 1.0, 2.0].into_iter().zip(expected_accepts) {
        let cfg = RelevanceConfig::new(b).unwrap();
        let got: Vec<bool> = layered_behaviours().iter().map(|mu| acceptance(&pi, mu, Some(&cfg))[0]).collect();
        assert_eq!(got, want, "b = {b}");
        let e = exact_estimator_expectation(
            &mdp,
            &pi,
            &Behaviours::uniform(layered_behaviours()),
            &v,
            &OperatorKind::is().trusted(cfg),
            &EnumerationSpec::new(4, 1e-12),
        )
        .unwrap();
        assert_eq!(e.tail_bound, 0.0);
        assert!(sup(&e.or_bootstrap(&v), &vpi) < 1e-8, "b = {b}");
    }
}

#[test]
fn batch_trust_region_estimate_agrees_with_enumeration() {
    let mdp = layered();
    let pi = repeated([0.7, 0.3]);
    let vpi = solve_v_exact(&mdp, &pi).unwrap();
    let v = [0.4, -1.0, 0.0];
    let cfg = RelevanceConfig::new(0.5).unwrap();
    let behaviours = layered_behaviours();
    // 40 independent batch estimates give a mean and a standard error
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut per_batch: Vec<Vec<f64>> = Vec::new();
    for _ in 0..40 {
        let mut batch = Vec::new();
        for (z, mu) in behaviours.iter().enumerate() {
            for _ in 0..500 {
                let s = mdp.sample_initial(&mut rng);
                batch.push(Trajectory {
                    behaviour_id: z as u64,
                    ..rollout(&mdp, mu, &mut rng, s, 10, z as u64)
                });
            }
        }
        let est = trusted_value_estimate(&batch, &pi, &v, 0.9, ClipConfig::default(), &cfg, EstimatorKind::Is).unwrap();
        assert!((est.stats.fraction_rejected() - 1.0 / 3.0).abs() < 1e-12);
        per_batch.push(est.or_bootstrap(&v));
    }
    for s in 0..2 {
        let xs: Vec<f64> = per_batch.iter().map(|b| b[s]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let se = (var / xs.len() as f64).sqrt();
        assert!((mean - vpi[s]).abs() < 3.0 * se, "state {s}: {mean} +- {se} vs {}", vpi[s]);
    }
}

#[test]
fn interior_rejection_is_unbiased_at_the_target_value_only() {
    // behaviours whose acceptance differs between states truncate the
    // bootstrap mid-trajectory; the expectation is then V^pi only when the
    // bootstrap values are V^pi
    let mdp = zoo::garnet(3, 2, 2, 0.05, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pi = random_policy(&mut rng, 3, 2, 0.1);
    let mus: Vec<TabularPolicy> = (0..3).map(|_| random_policy(&mut rng, 3, 2, 0.05)).collect();
    let cfg = RelevanceConfig::new(0.05).unwrap();
    let accepts: Vec<Vec<bool>> = mus.iter().map(|mu| acceptance(&pi, mu, Some(&cfg))).collect();
    assert!(accepts.iter().any(|a| a.iter().any(|&x| x) && a.iter().any(|&x| !x)), "{accepts:?}");
    let vpi = solve_v_exact(&mdp, &pi).unwrap();
    let kind = OperatorKind::is().trusted(cfg);
    let e = exact_estimator_expectation(&mdp, &pi, &Behaviours::uniform(mus.clone()), &vpi, &kind, &EnumerationSpec::new(9, 1e-10))
        .unwrap();
    assert!(sup(&e.or_bootstrap(&vpi), &vpi) < 1e-8);
    // enumeration and the closed-form operator agree for any input
    let v = random_values(&mut rng, 3, 2.0);
    let e = exact_estimator_expectation(&mdp, &pi, &Behaviours::uniform(mus.clone()), &v, &kind, &EnumerationSpec::new(9, 1e-10))
        .unwrap();
    let (tv, _) = trusted_expected_operator(&mdp, &pi, &Behaviours::uniform(mus), &kind, &v).unwrap();
    assert!(sup(&e.or_bootstrap(&v), &tv) < 1e-10);
    assert!(sup(&tv, &vpi) <= 0.05 * sup(&v, &vpi) + 1e-12);
}

#[test]
fn trusted_vtrace_enumeration_matches_closed_form() {
    let mdp = zoo::garnet(3, 2, 2, 0.05, 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let pi = random_policy(&mut rng, 3, 2, 0.1);
    let mus = Behaviours::uniform((0..3).map(|_| random_policy(&mut rng, 3, 2, 0.05)).collect());
    let v = random_values(&mut rng, 3, 2.0);
    for b in [0.02, 0.1, 0.5] {
        let kind = OperatorKind::vtrace(ClipConfig::default()).trusted(RelevanceConfig::new(b).unwrap());
        let e = exact_estimator_expectation(&mdp, &pi, &mus, &v, &kind, &EnumerationSpec::new(9, 1e-10)).unwrap();
        let (tv, covered) = trusted_expected_operator(&mdp, &pi, &mus, &kind, &v).unwrap();
        for s in 0..3 {
            match e.values[s] {
                Some(x) => assert!((x - tv[s]).abs() < 1e-10),
                None => assert!(!covered[s]),
            }
        }
    }
}

#[test]
fn single_accepted_behaviour_fixed_point_is_its_implied_value() {
    let mdp = zoo::garnet(5, 3, 3, 0.9, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let pi = random_policy(&mut rng, 5, 3, 0.1);
    // one behaviour near pi, one far from it everywhere
    let near = TabularPolicy::new(5, 3, pi.probs().iter().map(|p| 0.9 * p + 0.1 / 3.0).collect()).unwrap();
    let far_rows: Vec<Vec<f64>> = (0..5)
        .map(|s| {
            let worst = (0..3).min_by(|&a, &b| pi.prob(s, a).total_cmp(&pi.prob(s, b))).unwrap();
            (0..3).map(|a| if a == worst { 0.98 } else { 0.01 }).collect()
        })
        .collect();
    let far = TabularPolicy::from_rows(&far_rows).unwrap();
    let cfg = RelevanceConfig::new(0.05).unwrap();
    assert!(acceptance(&pi, &near, Some(&cfg)).iter().all(|&x| x));
    assert!(acceptance(&pi, &far, Some(&cfg)).iter().all(|&x| !x));
    let kind = OperatorKind::vtrace(ClipConfig::default()).trusted(cfg);
    let behaviours = Behaviours::uniform(vec![near.clone(), far]);
    let mut v = vec![0.0; 5];
    for _ in 0..2000 {
        v = trusted_expected_operator(&mdp, &pi, &behaviours, &kind, &v).unwrap().0;
    }
    let implied = laser_core::oracle::implied_policy_table(&pi, &near, 1.0).unwrap();
    assert!(sup(&v, &solve_v_exact(&mdp, &implied).unwrap()) < 1e-8);
}

/// Three random behaviours per MDP with `b` picked so that the mask rejects
/// some but not all `(state, behaviour)` pairs.
fn probe_setup(seed: u64) -> (Mdp, TabularPolicy, Behaviours, RelevanceConfig) {
    let mdp = zoo::garnet(5, 3, 3, 0.9, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
    let pi = random_policy(&mut rng, 5, 3, 0.1);
    let mus: Vec<TabularPolicy> = (0..3).map(|_| random_policy(&mut rng, 5, 3, 0.1)).collect();
    let cfg = RelevanceConfig::new(0.1).unwrap();
    (mdp, pi, Behaviours::uniform(mus), cfg)
}

#[test]
fn trusted_is_contracts_with_gamma() {
    let mut partial = 0;
    for seed in 0..20 {
        let (mdp, pi, mus, cfg) = probe_setup(seed);
        let acc: Vec<bool> = mus.policies.iter().flat_map(|mu| acceptance(&pi, mu, Some(&cfg))).collect();
        if acc.iter().any(|&x| x) && acc.iter().any(|&x| !x) {
            partial += 1;
        }
        let report = contraction_probe(&mdp, &pi, &mus, &OperatorKind::is().trusted(cfg), 50, seed).unwrap();
        assert!(report.all_hold(), "seed {seed}: max ratio {}", report.max_ratio());
        assert!(report.max_ratio() <= 0.9 + 1e-9);
    }
    assert!(partial >= 10, "only {partial} MDPs had partial acceptance");
}

#[test]
fn trusted_vtrace_shrinks_toward_mixture_target() {
    for seed in 0..20 {
        let (mdp, pi, mus, cfg) = probe_setup(seed);
        let kind = OperatorKind::vtrace(ClipConfig::default()).trusted(cfg);
        let report = contraction_probe(&mdp, &pi, &mus, &kind, 50, seed).unwrap();
        for p in &report.probes {
            assert!(p.output_distance < p.input_distance, "seed {seed}: {p:?}");
            assert!(p.eta.iter().all(|&e| e < 1.0));
        }
    }
}

#[test]
fn probe_at_target_value_has_zero_numerator() {
    let (mdp, pi, mus, cfg) = probe_setup(3);
    let vpi = solve_v_exact(&mdp, &pi).unwrap();
    let (tv, covered) = trusted_expected_operator(&mdp, &pi, &mus, &OperatorKind::is().trusted(cfg), &vpi).unwrap();
    for s in 0..5 {
        if covered[s] {
            assert!((tv[s] - vpi[s]).abs() < 1e-10);
        }
    }
}

fn arb_case() -> impl Strategy<Value = (Trajectory, TabularPolicy, Vec<f64>)> {
    (any::<u64>(), 1usize..15).prop_map(|(seed, len)| {
        let mdp = zoo::garnet(4, 3, 2, 0.9, seed % 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = random_policy(&mut rng, 4, 3, 0.05);
        let mu = random_policy(&mut rng, 4, 3, 0.05);
        let v = random_values(&mut rng, 4, 2.0);
        (rollout(&mdp, &mu, &mut rng, 0, len, 0), pi, v)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn masks_ignore_sampled_actions((traj, pi, _v) in arb_case(), b in 0.01f64..2.0, shift in 1usize..3) {
        let cfg = RelevanceConfig::new(b).unwrap();
        let mut permuted = traj.clone();
        for tr in &mut permuted.transitions {
            tr.action = (tr.action + shift) % 3;
        }
        prop_assert_eq!(compute_mask(&traj, &pi, &cfg).mask, compute_mask(&permuted, &pi, &cfg).mask);
    }

    #[test]
    fn infinite_threshold_degenerates_to_plain((traj, pi, v) in arb_case()) {
        let cfg = RelevanceConfig::new(f64::INFINITY).unwrap();
        let m = compute_mask(&traj, &pi, &cfg);
        prop_assert!(m.mask.iter().all(|&x| x));
        let a = trusted_is_return(&m, &pi, &v, 0.9).unwrap().value;
        let b = is_return(&traj, &pi, &v, 0.9, traj.len()).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        let a = trusted_vtrace_return(&m, &pi, &v, 0.9, ClipConfig::default()).unwrap().value;
        let b = vtrace_return(&traj, &pi, &v, 0.9, ClipConfig::default(), traj.len()).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn acceptance_grows_with_threshold((traj, pi, _v) in arb_case(), b in 0.001f64..2.0, extra in 0.0f64..2.0) {
        let lo = compute_mask(&traj, &pi, &RelevanceConfig::new(b).unwrap()).mask;
        let hi = compute_mask(&traj, &pi, &RelevanceConfig::new(b + extra).unwrap()).mask;
        for (l, h) in lo.iter().zip(&hi) {
            prop_assert!(!l || *h);
        }
    }

    #[test]
    fn trusted_return_stops_at_first_rejection((traj, pi, v) in arb_case(), cut in 1usize..15) {
        prop_assume!(cut < traj.len());
        let mut mask = vec![true; traj.len()];
        mask[cut] = false;
        let m = MaskedTrajectory { base: traj.clone(), mask };
        let est = trusted_vtrace_return(&m, &pi, &v, 0.9, ClipConfig::default()).unwrap();
        prop_assert_eq!(est.bootstrap_step, cut);
        prop_assert_eq!(est.per_step_weights.len(), cut);
        let head = traj.slice(0, cut);
        let plain = vtrace_return(&head, &pi, &v, 0.9, ClipConfig::default(), cut).unwrap().value;
        prop_assert!((est.value - plain).abs() <= 1e-12 * plain.abs().max(1.0));
    }
}

#[test]
fn random_values_helper_is_seeded() {
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(random_values(&mut a, 3, 1.0), random_values(&mut b, 3, 1.0));
    let _: f64 = a.gen();
}
