//! Fusion correctness against independent oracles: brute-force tuple
//! enumeration for the fusion rule and an exact transportation-polytope
//! maximizer for the greedy maximal-dependence coupling.

use mmfuse_core::fusion::{
    augment, blend, decide, fuse, fuse_reports, max_mi_coupling, min_mi_coupling, AugmentedReport,
    Decision, SensorReport,
};
use mmfuse_core::rng::CounterRng;
use mmfuse_core::testkit::{fuse_by_enumeration, max_mi_exact, max_mi_grid_two};

fn random_report(rng: &mut CounterRng, objects: usize) -> SensorReport {
    let raw: Vec<f64> = (0..objects).map(|_| rng.uniform() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    let doc = rng.uniform();
    SensorReport::new(raw.iter().map(|v| v / sum).collect(), doc, None).unwrap()
}

fn random_augmented(rng: &mut CounterRng, outcomes: usize) -> AugmentedReport {
    let raw: Vec<f64> = (0..outcomes).map(|_| rng.uniform() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|v| v / sum).collect();
    let objects = outcomes - 1;
    let doc = 1.0 - probs[objects];
    let report = SensorReport::new(
        probs[..objects].iter().map(|v| v / doc).collect(),
        doc,
        None,
    )
    .unwrap();
    augment(&report).unwrap()
}

#[test]
fn blended_fusion_matches_enumeration() {
    let mut rng = CounterRng::stream(0xF0, "fusion.enum", 0);
    let mut checked = 0usize;
    for modalities in [2usize, 3] {
        for objects in [2usize, 3] {
            for _ in 0..2500 {
                let reports: Vec<SensorReport> =
                    (0..modalities).map(|_| random_report(&mut rng, objects)).collect();
                let rho = rng.uniform();
                let augmented: Vec<AugmentedReport> =
                    reports.iter().map(|r| augment(r).unwrap()).collect();
                let blended = blend(
                    &max_mi_coupling(&augmented).unwrap(),
                    &min_mi_coupling(&augmented).unwrap(),
                    rho,
                )
                .unwrap();
                let fused = fuse(&blended);
                let (probs, doc_f) = fuse_by_enumeration(&blended);
                for (a, b) in fused.probs.iter().zip(&probs) {
                    assert!((a - b).abs() < 1e-12, "probs {a} vs {b}");
                }
                assert!((fused.doc_f - doc_f).abs() < 1e-12);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 10_000);
}

#[test]
fn two_sensor_three_term_form_matches_general_rule() {
    // For two sensors the unanimity rule expands into exactly three tuple
    // patterns: (o_i, o_i), (unc, o_i), (o_i, unc).
    let mut rng = CounterRng::stream(0xF1, "fusion.eq25", 0);
    for _ in 0..10_000 {
        let objects = 2 + (rng.below(2));
        let r1 = random_report(&mut rng, objects);
        let r2 = random_report(&mut rng, objects);
        let rho = rng.uniform();
        let augmented = [augment(&r1).unwrap(), augment(&r2).unwrap()];
        let blended = blend(
            &max_mi_coupling(&augmented).unwrap(),
            &min_mi_coupling(&augmented).unwrap(),
            rho,
        )
        .unwrap();
        let fused = fuse(&blended);
        let unc = objects as u16;
        for i in 0..objects {
            let i16 = i as u16;
            let three_term = blended.mass_at(&[i16, i16])
                + blended.mass_at(&[unc, i16])
                + blended.mass_at(&[i16, unc]);
            assert!((fused.probs[i] - three_term).abs() < 1e-15);
        }
        assert!((fused.doc_f - (1.0 - blended.mass_at(&[unc, unc]))).abs() < 1e-15);
    }
}

#[test]
fn greedy_coupling_attains_maximal_mutual_information() {
    // The greedy large-to-large matching must sit within 1e-3 of the exact
    // maximizer over all couplings with the same marginals.
    let mut rng = CounterRng::stream(0xF2, "fusion.maxmi", 0);
    for outcomes in [2usize, 3, 4] {
        for case in 0..300 {
            let a = random_augmented(&mut rng, outcomes);
            let b = random_augmented(&mut rng, outcomes);
            let coupling = max_mi_coupling(&[a.clone(), b.clone()]).unwrap();
            let mi = coupling.mutual_information();
            let exact = max_mi_exact(a.probs(), b.probs());
            assert!(
                mi <= exact + 1e-9,
                "case {case}: greedy MI {mi} exceeds exact {exact}"
            );
            assert!(
                mi >= exact - 1e-3,
                "case {case} (outcomes {outcomes}): greedy MI {mi} vs exact {exact}, \
                 marginals {:?} {:?}",
                a.probs(),
                b.probs()
            );
        }
    }
}

#[test]
fn greedy_coupling_matches_inclusive_grid_for_two_outcomes() {
    let mut rng = CounterRng::stream(0xF3, "fusion.grid", 0);
    for _ in 0..100 {
        let a = random_augmented(&mut rng, 2);
        let b = random_augmented(&mut rng, 2);
        let coupling = max_mi_coupling(&[a.clone(), b.clone()]).unwrap();
        let mi = coupling.mutual_information();
        let grid = max_mi_grid_two(a.probs(), b.probs(), 1000);
        assert!(mi >= grid - 1e-3, "greedy {mi} vs grid {grid}");
    }
}

#[test]
fn trivial_endpoint_identities() {
    let mut rng = CounterRng::stream(0xF4, "fusion.endpoints", 0);
    for _ in 0..200 {
        let objects = 2 + rng.below(2);
        let modalities = 2 + rng.below(2);
        // Full confidence, independence: fused prob is the product of the
        // per-sensor probabilities.
        let full: Vec<SensorReport> = (0..modalities)
            .map(|_| {
                let mut r = random_report(&mut rng, objects);
                r.doc = 1.0;
                r
            })
            .collect();
        let fused = fuse_reports(&full, 0.0).unwrap();
        for i in 0..objects {
            let product: f64 = full.iter().map(|r| r.probs[i]).product();
            assert!((fused.probs[i] - product).abs() < 1e-12);
        }

        // Partial confidence at rho = 0: fused confidence is the complement
        // of the product of the uncertainty masses.
        let partial: Vec<SensorReport> = (0..modalities)
            .map(|_| random_report(&mut rng, objects))
            .collect();
        let fused2 = fuse_reports(&partial, 0.0).unwrap();
        let unc_product: f64 = partial.iter().map(|r| 1.0 - r.doc).product();
        assert!((fused2.doc_f - (1.0 - unc_product)).abs() < 1e-12);
    }
}

#[test]
fn fused_probabilities_are_affine_in_rho() {
    let mut rng = CounterRng::stream(0xF5, "fusion.affine", 0);
    for _ in 0..500 {
        let reports: Vec<SensorReport> = (0..2).map(|_| random_report(&mut rng, 3)).collect();
        let augmented: Vec<AugmentedReport> =
            reports.iter().map(|r| augment(r).unwrap()).collect();
        let max_c = max_mi_coupling(&augmented).unwrap();
        let min_c = min_mi_coupling(&augmented).unwrap();
        let f_max = fuse(&max_c);
        let f_min = fuse(&min_c);
        let rho = rng.uniform();
        let f_mix = fuse(&blend(&max_c, &min_c, rho).unwrap());
        for i in 0..3 {
            let want = rho * f_max.probs[i] + (1.0 - rho) * f_min.probs[i];
            assert!((f_mix.probs[i] - want).abs() < 1e-12);
        }
        let want_doc = rho * f_max.doc_f + (1.0 - rho) * f_min.doc_f;
        assert!((f_mix.doc_f - want_doc).abs() < 1e-12);
    }
}

#[test]
fn abstain_on_zero_mass() {
    let fused = fuse_reports(
        &[
            SensorReport::new(vec![1.0, 0.0], 0.0, None).unwrap(),
            SensorReport::new(vec![0.0, 1.0], 0.0, None).unwrap(),
        ],
        0.0,
    )
    .unwrap();
    assert_eq!(decide(&fused), Decision::Abstain);
    assert!(fused.doc_f.abs() < 1e-12);
}
