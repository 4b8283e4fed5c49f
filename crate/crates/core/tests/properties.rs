use iae_lab::datasets::{encode_idx, parse_idx, to_bytes, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use iae_lab::eval::{cluster_error, energy_distance, posterior_separation};
use iae_lab::nets::{decode_checkpoint, encode_checkpoint, init_params, Activation, MlpSpec};
use iae_lab::oracle::{instance_checks, kl, TabularInstance};
use iae_lab::rng::Stream;
use iae_lab::Tensor;
use proptest::prelude::*;

fn simplex(seed: u64, k: usize) -> Vec<f64> {
    Stream::new(seed).dirichlet_ones(k)
}

fn cloud(seed: u64, rows: usize, shift: (f64, f64)) -> Tensor {
    let mut rng = Stream::new(seed);
    let mut t = rng.normal_tensor(rows, 2).scale(0.2);
    for r in 0..rows {
        t.set(r, 0, t.get(r, 0) + shift.0);
        t.set(r, 1, t.get(r, 1) + shift.1);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_tabular_identity_holds(seed in any::<u64>()) {
        let inst = TabularInstance::random_sized(seed).unwrap();
        for row in instance_checks(seed, &inst, 1e-9).unwrap() {
            prop_assert!(row.pass, "{row:?}");
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself(seed in any::<u64>(), k in 2usize..20) {
        let p = simplex(seed, k);
        let q = simplex(seed.wrapping_add(1), k);
        prop_assert!(kl(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cluster_error_ignores_relabeling(seed in any::<u64>(), n in 1usize..200, ka in 1usize..8, kl_ in 1usize..8) {
        let mut rng = Stream::new(seed);
        let assign: Vec<usize> = (0..n).map(|_| rng.below(ka)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(kl_)).collect();
        let base = cluster_error(&assign, &labels, ka, kl_).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        let pa = rng.permutation(ka);
        let pl = rng.permutation(kl_);
        let a2: Vec<usize> = assign.iter().map(|&a| pa[a]).collect();
        let l2: Vec<usize> = labels.iter().map(|&l| pl[l]).collect();
        prop_assert_eq!(cluster_error(&a2, &l2, ka, kl_).unwrap(), base);
    }

    #[test]
    fn energy_distance_is_symmetric(seed in any::<u64>(), na in 2usize..40, nb in 2usize..40) {
        let a = cloud(seed, na, (0.0, 0.0));
        let b = cloud(seed ^ 0xABCD, nb, (0.5, -0.3));
        let ab = energy_distance(&a, &b).unwrap();
        prop_assert_eq!(ab.to_bits(), energy_distance(&b, &a).unwrap().to_bits());
        prop_assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn posterior_separation_survives_rigid_motion(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let clouds: Vec<Tensor> = (0..3).map(|i| cloud(seed.wrapping_add(i), 30, (i as f64 * 0.6, 0.0))).collect();
        let (s, c) = angle.sin_cos();
        let moved: Vec<Tensor> = clouds
            .iter()
            .map(|t| Tensor::from_fn(t.rows(), 2, |r, j| {
                let (x, y) = (t.get(r, 0), t.get(r, 1));
                if j == 0 { c * x - s * y + dx } else { s * x + c * y + dy }
            }))
            .collect();
        let before = posterior_separation(&clouds).unwrap();
        let after = posterior_separation(&moved).unwrap();
        // Rounding can flip a near-tie between neighbours.
        prop_assert!((before - after).abs() <= 2.0 / 90.0, "{before} vs {after}");
    }

    #[test]
    fn idx_round_trips(seed in any::<u64>(), d0 in 1u32..6, d1 in 1u32..6, d2 in 1u32..6) {
        let mut rng = Stream::new(seed);
        let payload: Vec<u8> = (0..d0 * d1 * d2).map(|_| rng.below(256) as u8).collect();
        let images = parse_idx(&encode_idx(IDX_IMAGES_MAGIC, &[d0, d1, d2], &payload).unwrap()).unwrap();
        prop_assert_eq!((images.count, images.item_shape.clone()), (d0 as usize, vec![d1 as usize, d2 as usize]));
        prop_assert_eq!(to_bytes(images.tensor.data()), payload.clone());
        let labels = parse_idx(&encode_idx(IDX_LABELS_MAGIC, &[payload.len() as u32], &payload).unwrap()).unwrap();
        prop_assert_eq!(labels.labels().unwrap(), payload.iter().map(|&b| b as usize).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), input in 1usize..5, noise in 0usize..3, hidden in 1usize..6, out in 1usize..4) {
        let spec = MlpSpec::new(input, noise, &[hidden], out, Activation::Softmax);
        let params = init_params(&spec, seed).unwrap();
        let (spec2, params2) = decode_checkpoint(&encode_checkpoint(&spec, &params).unwrap()).unwrap();
        prop_assert_eq!(spec2, spec);
        prop_assert_eq!(params2, params);
    }

    #[test]
    fn softmax_head_outputs_are_distributions(seed in any::<u64>(), rows in 1usize..10) {
        let spec = MlpSpec::new(3, 0, &[4], 5, Activation::Softmax);
        let net = iae_lab::nets::Mlp::new(spec, seed).unwrap();
        let x = Stream::new(seed ^ 7).normal_tensor(rows, 3).scale(10.0);
        let y = net.forward(&x, None).unwrap();
        for r in 0..rows {
            let row = y.row_slice(r);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
