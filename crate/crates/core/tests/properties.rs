use iflow_core::eval::{bilipschitz_probe_with, energy_distance, straightness};
use iflow_core::net::{init_params, pseudo_huber, NetConfig, NetworkParams};
use iflow_core::process::{interpolate, ProcessSpec, Time};
use iflow_core::rng;
use iflow_core::sampler::Trajectory;
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    use rand::Rng;
    let mut r = rng::stream(seed, 0);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-3.0..3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_stays_in_the_coordinate_box(
        x0 in prop::collection::vec(-10.0f64..10.0, 1..6),
        seed in any::<u64>(),
        t in 0.0f64..=1.0,
    ) {
        let z: Vec<f64> = matrix(1, x0.len(), seed).into_raw_vec_and_offset().0;
        let zt = interpolate(&x0, &z, t);
        for j in 0..x0.len() {
            let (lo, hi) = (x0[j].min(z[j]), x0[j].max(z[j]));
            prop_assert!(zt[j] >= lo && zt[j] <= hi);
        }
    }

    #[test]
    fn preconditioning_partitions_unity(
        step in 0u32..=1000,
        radius in 1e-3f64..1e3,
        smin in 1e-3f64..1.0,
        ratio in 1.5f64..1e4,
    ) {
        let ve = ProcessSpec::ve(1000, smin, smin * ratio).unwrap();
        let p = ve.precondition(Time::Discrete(step), None).unwrap();
        prop_assert_eq!(p.a + p.b, 1.0);
        prop_assert!(p.a > 0.0 && p.a <= 1.0);
        let pf = ProcessSpec::pfgmpp(1000, smin, smin * ratio, 2048, 2).unwrap();
        let p = pf.precondition(Time::Discrete(step), Some(radius)).unwrap();
        prop_assert_eq!(p.a + p.b, 1.0);
    }

    #[test]
    fn perturbation_replays_from_the_same_stream(seed in any::<u64>(), step in 0u32..=1000, t in 0.0f64..=1.0) {
        let x0 = [0.3, -1.2];
        let specs = [
            (ProcessSpec::ve(1000, 0.01, 50.0).unwrap(), Time::Discrete(step)),
            (ProcessSpec::rf(), Time::Continuous(t)),
            (ProcessSpec::pfgmpp(1000, 0.01, 50.0, 2048, 2).unwrap(), Time::Discrete(step)),
        ];
        for (spec, time) in specs {
            let a = spec.perturb(&x0, time, &mut rng::stream(seed, 2)).unwrap();
            let b = spec.perturb(&x0, time, &mut rng::stream(seed, 2)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn energy_distance_is_symmetric_and_nonnegative(n in 2usize..40, m in 2usize..40, d in 1usize..4, seed in any::<u64>()) {
        let a = matrix(n, d, seed);
        let b = matrix(m, d, seed.wrapping_add(1));
        let ab = energy_distance(a.view(), b.view(), 0).unwrap();
        let ba = energy_distance(b.view(), a.view(), 0).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        prop_assert!(ab >= -1e-12);
        prop_assert!(energy_distance(a.view(), a.view(), 0).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn pseudo_huber_regimes(c in 1e-5f64..1e-2, far in 10.0f64..1e3, near in 1e-4f64..1e-2) {
        let d_far = pseudo_huber(&[far], &[0.0], c);
        prop_assert!(((d_far - far) / far).abs() < c / far);
        let e = near * c;
        let d_near = pseudo_huber(&[e], &[0.0], c);
        let quad = e * e / (2.0 * c);
        prop_assert!(((d_near - quad) / quad).abs() < 0.01);
    }

    #[test]
    fn linear_maps_have_exact_ratio(a in prop::sample::select(vec![-3.0f64, -0.5, 0.25, 1.0, 7.0]), seed in 0u64..1000) {
        let rep = bilipschitz_probe_with(
            3,
            100,
            1e-2,
            seed,
            |r| Ok(iflow_core::process::standard_normal_vec(3, r)),
            |xs, _| Ok(xs * a),
        )
        .unwrap();
        prop_assert_eq!(rep.collisions, 0);
        prop_assert!((rep.min_ratio - a.abs()).abs() < 1e-9);
        prop_assert!((rep.max_ratio - a.abs()).abs() < 1e-9);
    }

    #[test]
    fn straightness_is_zero_only_for_constant_predictions(
        shift in prop::collection::vec(-1.0f64..1.0, 2),
        k in 2usize..8,
    ) {
        let endpoint = vec![0.5, -0.5];
        let z = vec![1.5, 2.0];
        let times: Vec<f64> = (0..k).map(|i| 1.0 - i as f64 / (k - 1) as f64).collect();
        let constant = Trajectory {
            times: times.clone(),
            states: vec![z.clone(); k],
            predictions: vec![endpoint.clone(); k],
            endpoint: endpoint.clone(),
            z: z.clone(),
        };
        prop_assert_eq!(straightness(&constant).unwrap(), 0.0);
        let mut moved = constant.clone();
        moved.predictions[0] = vec![endpoint[0] + shift[0], endpoint[1] + shift[1]];
        let s = straightness(&moved).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert_eq!(s == 0.0, shift.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_lipschitz_in_x_t(seed in any::<u64>(), h in 1e-6f64..1e-2) {
        let cfg = NetConfig::new(2, vec![8, 8]);
        let mut p: NetworkParams<f64> = init_params(&cfg, &mut rng::stream(seed, 3)).unwrap();
        let w = matrix(1, p.weights.num_params(), seed).into_raw_vec_and_offset().0;
        let mut k = 0;
        for s in p.weights.slices_mut() {
            for v in s.iter_mut() {
                *v = w[k];
                k += 1;
            }
        }
        let x = [0.2, -0.4];
        let y = [0.2 + h, -0.4 - h];
        let gx = p.g_network(&[0.0, 0.0], &x, 0.5).unwrap();
        let gy = p.g_network(&[0.0, 0.0], &y, 0.5).unwrap();
        let ratio = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            / (2.0f64.sqrt() * h);
        prop_assert!(ratio.is_finite() && ratio < 1e4);
    }
}
