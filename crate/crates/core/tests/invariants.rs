use elaa_core::bench::vr_metrics;
use elaa_core::geometry::{antenna_distance, steering_matrix};
use elaa_core::ising::default_chain_params;
use elaa_core::oracle::cartesian_distance;
use elaa_core::stacking::{
    apply_permutation, permutation_between_stackings, stack_observation, Stacking,
};
use elaa_core::synth::{mean_signal_power, reference_scene, set_snr};
use elaa_core::tensors::model_signal;
use elaa_core::{ArrayGeometry, ChannelTensor, Dims, PathGeometry, C64};
use proptest::prelude::*;

fn stackings() -> impl Strategy<Value = Stacking> {
    prop_oneof![Just(Stacking::Alpha), Just(Stacking::H), Just(Stacking::G)]
}

proptest! {
    #[test]
    fn antenna_distance_agrees_with_cartesian(d in 0.5f64..80.0, deg in -80f64..80.0, n in 1usize..=100) {
        let geom = ArrayGeometry::new(100, 0.005).unwrap();
        let theta = deg.to_radians();
        let a = antenna_distance(&geom, d, theta, n).unwrap();
        let b = cartesian_distance(&geom, d, theta, n);
        prop_assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn steering_magnitude_is_distance_ratio(d in 1.0f64..40.0, deg in -60f64..60.0, ue in 0.0f64..15.0) {
        let scene = reference_scene();
        let pg = PathGeometry::new(d, deg.to_radians(), ue);
        let h = steering_matrix(&scene.geom, &scene.ofdm, &pg);
        let n = scene.geom.n_antennas();
        for (i, v) in h.iter().enumerate() {
            let dn = antenna_distance(&scene.geom, d, pg.aoa, i % n + 1).unwrap();
            prop_assert!((v.norm() - d / dn).abs() < 1e-12);
        }
    }

    #[test]
    fn stacking_permutations_compose(n in 1usize..6, k in 1usize..4, t in 1usize..4, a in stackings(), b in stackings()) {
        let dims = Dims::new(n, k, t, 1);
        let mut y = ChannelTensor::zeros(n, k, t);
        for (i, v) in y.data.iter_mut().enumerate() {
            *v = C64::new(i as f64, -(i as f64));
        }
        let ab = permutation_between_stackings(a, b, &dims);
        let ba = permutation_between_stackings(b, a, &dims);
        let ya = stack_observation(a, &y);
        prop_assert_eq!(apply_permutation(&ab, &ya), stack_observation(b, &y));
        prop_assert_eq!(apply_permutation(&ba, &apply_permutation(&ab, &ya)), ya);
    }

    #[test]
    fn flip_gap_matches_energy_difference(
        bits in prop::collection::vec(0u8..=1, 12),
        beta in 0.1f64..3.0,
        gamma in -1.0f64..1.0,
        i in 0usize..12,
    ) {
        let ising = default_chain_params(6, 2, 1, beta, gamma).unwrap();
        let b: Vec<f64> = bits.iter().map(|&v| v as f64).collect();
        let mut flipped = b.clone();
        flipped[i] = 1.0 - flipped[i];
        let gap = ising.energy_gap(&b, i).unwrap();
        let diff = ising.energy(&flipped).unwrap() - ising.energy(&b).unwrap();
        prop_assert!((gap - diff).abs() < 1e-12);
    }

    #[test]
    fn vr_rates_are_probabilities(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 1..50)) {
        let (est, truth): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let (pd, pf) = vr_metrics(&est, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&pd) && (0.0..=1.0).contains(&pf));
        let (pd, pf) = vr_metrics(&truth, &truth).unwrap();
        prop_assert_eq!((pd, pf), (1.0, 0.0));
    }

    #[test]
    fn set_snr_realises_the_ratio(snr in -20f64..40.0) {
        let scene = set_snr(&reference_scene(), snr).unwrap();
        let ratio = mean_signal_power(&scene) / scene.noise_var;
        prop_assert!((10.0 * ratio.log10() - snr).abs() < 1e-9);
    }

    #[test]
    fn model_is_linear_in_gains(scale in -3.0f64..3.0) {
        let scene = reference_scene();
        let d = scene.dims();
        let alpha = elaa_core::SnSField::filled(d.n, d.l, d.t, C64::new(1.0, 0.0));
        let g = scene.gains();
        let g2: Vec<C64> = g.iter().map(|v| v * scale).collect();
        let a = model_signal(&g, &scene.steering(), &alpha);
        let b = model_signal(&g2, &scene.steering(), &alpha);
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x * scale - y).norm() < 1e-12);
        }
    }
}
