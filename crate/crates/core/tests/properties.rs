//! Randomized property checks for the invariants the library promises:
//! pixel-domain closure, budget bounds, channel equality for gray
//! perturbations, transform identities, and codec round trips.

use ndarray::{Array2, Array4};
use proptest::prelude::*;
use ule_core::crafting::{feasibility_clamp, sign3, PerturbationBank};
use ule_core::data::{ImageDataset, SplitTag};
use ule_core::evaluation::{attack_batch, AttackSpec};
use ule_core::exploiter::{early_stop_monitor, StopDecision};
use ule_core::mitigations::{
    bit_depth_reduce, flip_image, grayscale, mixup_with, random_crop, random_flip,
};
use ule_core::models::{build, Arch, ModelSpec, Normalization};
use ule_core::{data, rng, storage};

const TOL: f64 = 1e-12;

fn max_abs_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A batch of images in [0,1] with shape (n, h, w, 3).
fn image_batch(n_max: usize, hw_max: usize) -> impl Strategy<Value = Array4<f64>> {
    (1..=n_max, 2..=hw_max, 2..=hw_max).prop_flat_map(|(n, h, w)| {
        proptest::collection::vec(0.0..=1.0f64, n * h * w * 3)
            .prop_map(move |v| Array4::from_shape_vec((n, h, w, 3), v).unwrap())
    })
}

/// A per-pixel scalar field in [-bound, bound], shaped (n, h, w, 1) values
/// replicated across 3 channels.
fn gray_delta_for(shape: (usize, usize, usize, usize), bound: f64) -> impl Strategy<Value = Array4<f64>> {
    let (n, h, w, _) = shape;
    proptest::collection::vec(-bound..=bound, n * h * w).prop_map(move |v| {
        let mut out = Array4::zeros((n, h, w, 3));
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let val = v[(i * h + y) * w + x];
                    for c in 0..3 {
                        out[[i, y, x, c]] = val;
                    }
                }
            }
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grayscale_output_channels_exactly_equal(x in image_batch(3, 6)) {
        let g = grayscale(&x).unwrap();
        let (n, h, w, _) = g.dim();
        for i in 0..n {
            for y in 0..h {
                for z in 0..w {
                    prop_assert_eq!(g[[i, y, z, 0]], g[[i, y, z, 1]]);
                    prop_assert_eq!(g[[i, y, z, 0]], g[[i, y, z, 2]]);
                }
            }
        }
        // Idempotent up to rounding: the luma weights sum to 1 only in exact
        // arithmetic.
        let gg = grayscale(&g).unwrap();
        prop_assert!(max_abs_diff(&g, &gg) <= TOL);
    }

    #[test]
    fn bit_depth_reduction_lands_on_grid_and_is_idempotent(
        x in image_batch(2, 5),
        bits in 1u8..=8,
    ) {
        let q = bit_depth_reduce(&x, bits);
        let m = f64::from(u32::pow(2, u32::from(bits)) - 1);
        for &v in q.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
            let k = (v * m).round();
            prop_assert_eq!(v, k / m, "value {} is off the {}-bit grid", v, bits);
        }
        let qq = bit_depth_reduce(&q, bits);
        prop_assert_eq!(&q, &qq);
    }

    #[test]
    fn horizontal_flip_is_an_exact_involution(x in image_batch(3, 6)) {
        let back = flip_image(&flip_image(&x));
        prop_assert_eq!(&back, &x);
    }

    #[test]
    fn flip_with_probability_one_flips_and_zero_is_identity(
        x in image_batch(2, 5),
        seed in any::<u64>(),
    ) {
        let mut r = rng::stream(seed, "prop/flip");
        let same = random_flip(&x, 0.0, &mut r);
        prop_assert_eq!(&same, &x);
        let flipped = random_flip(&x, 1.0, &mut r);
        prop_assert_eq!(&flipped, &flip_image(&x));
    }

    #[test]
    fn crop_preserves_shape_and_pixel_range(
        x in image_batch(2, 6),
        pad in 0usize..=3,
        reflect in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut r = rng::stream(seed, "prop/crop");
        let out = random_crop(&x, pad, reflect, &mut r);
        prop_assert_eq!(out.dim(), x.dim());
        for &v in out.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn mixup_endpoints_are_exact(
        x in image_batch(3, 4),
        seed in any::<u64>(),
    ) {
        let n = x.dim().0;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut y = Array2::zeros((n, 3));
        for (i, &l) in labels.iter().enumerate() {
            y[[i, l]] = 1.0;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng::stream(seed, "prop/mixup"));

        let (x1, y1) = mixup_with(&x, &y, 1.0, &perm);
        prop_assert_eq!(&x1, &x);
        prop_assert_eq!(&y1, &y);

        let (x0, y0) = mixup_with(&x, &y, 0.0, &perm);
        for (row, &src) in perm.iter().enumerate() {
            let want = x.index_axis(ndarray::Axis(0), src);
            let got = x0.index_axis(ndarray::Axis(0), row);
            prop_assert_eq!(got, want);
            let wanty = y.index_axis(ndarray::Axis(0), src);
            let goty = y0.index_axis(ndarray::Axis(0), row);
            prop_assert_eq!(goty, wanty);
        }
    }

    #[test]
    fn mixup_soft_labels_stay_on_the_simplex(
        x in image_batch(3, 4),
        lambda in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let n = x.dim().0;
        let mut y = Array2::zeros((n, 3));
        for i in 0..n {
            y[[i, i % 3]] = 1.0;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng::stream(seed, "prop/mixup-simplex"));
        let (xm, ym) = mixup_with(&x, &y, lambda, &perm);
        for row in ym.rows() {
            let s: f64 = row.sum();
            prop_assert!((s - 1.0).abs() <= TOL);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0 + TOL).contains(&v)));
        }
        // Convexity: every mixed pixel lies between its two sources.
        let (nn, h, w, c) = x.dim();
        for i in 0..nn {
            for yy in 0..h {
                for zz in 0..w {
                    for ch in 0..c {
                        let a = x[[i, yy, zz, ch]];
                        let b = x[[perm[i], yy, zz, ch]];
                        let v = xm[[i, yy, zz, ch]];
                        prop_assert!(v >= a.min(b) - TOL && v <= a.max(b) + TOL);
                    }
                }
            }
        }
    }

    /// The headline identity that makes single-channel perturbations survive a
    /// grayscale pre-filter: wherever `x + δ` needs no clamping,
    /// `grayscale(x + δ) == grayscale(x) + δ` (up to rounding).
    #[test]
    fn grayscale_commutes_with_feasible_gray_perturbations(
        (x, delta) in image_batch(2, 5).prop_flat_map(|x| {
            let shape = x.dim();
            (Just(x), gray_delta_for(shape, 0.2))
        }),
    ) {
        let mut d = delta;
        feasibility_clamp(&mut d, &x, true);
        // Channel equality survives the clamp bit-exactly.
        let (n, h, w, _) = d.dim();
        for i in 0..n {
            for y in 0..h {
                for z in 0..w {
                    prop_assert_eq!(d[[i, y, z, 0]], d[[i, y, z, 1]]);
                    prop_assert_eq!(d[[i, y, z, 0]], d[[i, y, z, 2]]);
                }
            }
        }
        // x + δ is feasible, so the addition is unclamped everywhere.
        let perturbed = &x + &d;
        for &v in perturbed.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let lhs = grayscale(&perturbed).unwrap();
        let rhs = &grayscale(&x).unwrap() + &d;
        prop_assert!(max_abs_diff(&lhs, &rhs) <= TOL);
    }

    #[test]
    fn bank_construction_enforces_budget_and_sorts_ids(
        (ids, x) in (2usize..=4).prop_flat_map(|n| {
            (
                proptest::collection::hash_set(0u64..1000, n),
                proptest::collection::vec(-0.03f32..=0.03, n * 4 * 4 * 3),
            )
        }),
    ) {
        let n = ids.len();
        let delta = Array4::from_shape_vec((n, 4, 4, 3), x).unwrap();
        let mut id_vec: Vec<u64> = ids.into_iter().collect();
        // Feed the rows in unsorted order; the bank must sort them.
        id_vec.sort_unstable_by(|a, b| b.cmp(a));
        let bank = PerturbationBank::new(8.0 / 255.0, false, id_vec.clone(), delta.clone(), None).unwrap();
        let mut sorted = id_vec.clone();
        sorted.sort_unstable();
        prop_assert_eq!(bank.sample_ids(), &sorted[..]);
        // The sorted view must still pair each id with its original row.
        for (row, &id) in id_vec.iter().enumerate() {
            let want = delta.index_axis(ndarray::Axis(0), row);
            let got = bank.delta_for(id).unwrap();
            prop_assert_eq!(got, want);
        }

        // Budget violations are rejected.
        let mut hot = delta;
        hot[[0, 0, 0, 0]] = 0.2;
        prop_assert!(PerturbationBank::new(8.0 / 255.0, false, id_vec, hot, None).is_err());
    }

    #[test]
    fn bank_hash_ignores_input_row_order(
        vals in proptest::collection::vec(-0.03f32..=0.03, 3 * 2 * 2 * 3),
    ) {
        let delta = Array4::from_shape_vec((3, 2, 2, 3), vals).unwrap();
        let ids = vec![7u64, 3, 11];
        let a = PerturbationBank::new(0.05, false, ids.clone(), delta.clone(), None).unwrap();
        // Present the same rows in a different order.
        let perm = [2usize, 0, 1];
        let mut delta_p = Array4::zeros((3, 2, 2, 3));
        let mut ids_p = Vec::new();
        for (dst, &src) in perm.iter().enumerate() {
            delta_p
                .index_axis_mut(ndarray::Axis(0), dst)
                .assign(&delta.index_axis(ndarray::Axis(0), src));
            ids_p.push(ids[src]);
        }
        let b = PerturbationBank::new(0.05, false, ids_p, delta_p, None).unwrap();
        prop_assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn sign3_is_odd_and_three_valued(v in -10.0..=10.0f64) {
        let s = sign3(v);
        prop_assert!(s == -1.0 || s == 0.0 || s == 1.0);
        prop_assert_eq!(sign3(-v), -s);
        if v > 0.0 {
            prop_assert_eq!(s, 1.0);
        }
        prop_assert_eq!(sign3(0.0), 0.0);
        prop_assert_eq!(sign3(-0.0), 0.0);
    }

    #[test]
    fn tensor_codec_round_trips_bit_exactly(
        dims in proptest::collection::vec(1usize..=4, 1..=4),
        seedling in any::<u32>(),
    ) {
        let len: usize = dims.iter().product();
        let f32s: Vec<f32> = (0..len).map(|i| (i as f32 + seedling as f32 * 0.25).sin()).collect();
        let f64s: Vec<f64> = f32s.iter().map(|&v| f64::from(v) * 1.000000001).collect();
        let tag = std::path::Path::new("prop-tensor");
        let enc32 = storage::encode_f32(&dims, &f32s);
        let (d32, back32) = storage::decode_f32(&enc32, tag).unwrap();
        prop_assert_eq!(&d32, &dims);
        prop_assert_eq!(&back32, &f32s);
        let enc64 = storage::encode_f64(&dims, &f64s);
        let (d64, back64) = storage::decode_f64(&enc64, tag).unwrap();
        prop_assert_eq!(&d64, &dims);
        prop_assert_eq!(&back64, &f64s);
        // The two dtypes are not interchangeable.
        prop_assert!(storage::decode_f64(&enc32, tag).is_err());
        prop_assert!(storage::decode_f32(&enc64, tag).is_err());
    }

    #[test]
    fn early_stopping_decision_matches_its_definition(
        history in proptest::collection::vec(0.0..=1.0f64, 1..=12),
        patience in 0usize..=5,
    ) {
        let decision = early_stop_monitor(&history, patience);
        let best = history
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv { (i, v) } else { (bi, bv) }
            })
            .0;
        let waited = history.len() - 1 - best;
        match decision {
            StopDecision::Stop { best_epoch } => {
                prop_assert_eq!(best_epoch, best);
                prop_assert!(waited >= patience);
            }
            StopDecision::Continue => prop_assert!(waited < patience),
        }
    }

    #[test]
    fn subset_is_stratified_and_deterministic(
        per_class in proptest::collection::vec(3usize..=9, 2..=4),
        fraction in 0.4..=1.0f64,
        seed in any::<u64>(),
    ) {
        let class_count = per_class.len();
        let n: usize = per_class.iter().sum();
        let mut labels = Vec::with_capacity(n);
        for (k, &c) in per_class.iter().enumerate() {
            labels.extend(std::iter::repeat_n(k, c));
        }
        let images = Array4::from_elem((n, 2, 2, 3), 0.5);
        let ids: Vec<u64> = (0..n as u64).collect();
        let ds = ImageDataset::new(images, labels, ids, SplitTag::Train, class_count, None).unwrap();

        let a = data::subset(&ds, fraction, seed).unwrap();
        let b = data::subset(&ds, fraction, seed).unwrap();
        prop_assert_eq!(&a.sample_ids, &b.sample_ids);

        let want_total = (fraction * n as f64).round() as usize;
        prop_assert_eq!(a.len(), want_total.max(class_count));
        // Ids ascend (selection is sorted by original position).
        prop_assert!(a.sample_ids.windows(2).all(|w| w[0] < w[1]));
        // Every class keeps at least its rounded-down share.
        for (k, &c) in per_class.iter().enumerate() {
            let kept = a.labels.iter().filter(|&&y| y == k).count();
            let floor = (fraction * c as f64).floor() as usize;
            prop_assert!(kept >= floor.min(c));
            prop_assert!(kept <= c);
        }
        if fraction == 1.0 {
            prop_assert_eq!(&a.sample_ids, &ds.sample_ids);
        }
    }
}

// Attack-geometry properties run on a real (tiny) model, so give them fewer
// cases.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn attacks_respect_the_ball_and_the_pixel_box(
        x in image_batch(2, 4),
        epsilon in prop_oneof![Just(0.0), Just(2.0 / 255.0), Just(8.0 / 255.0)],
        steps in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let (n, h, w, _) = x.dim();
        let spec = ModelSpec {
            arch: Arch::Mlp,
            class_count: 3,
            input_shape: (h, w, 3),
            normalization: Normalization::centered(),
            init_seed: 5,
        };
        let mut model = build(&spec).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let attack = AttackSpec {
            kind: ule_core::evaluation::AttackKind::Pgd,
            epsilon,
            steps,
            step_size: epsilon / steps.max(1) as f64,
            random_start: true,
        };
        let mut r = rng::stream(seed, "prop/attack");
        let adv = attack_batch(&mut model, &x, &labels, &attack, &mut r);
        prop_assert_eq!(adv.dim(), x.dim());
        let worst = max_abs_diff(&adv, &x);
        prop_assert!(worst <= epsilon + 1e-12, "excursion {} > ε {}", worst, epsilon);
        for &v in adv.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if epsilon == 0.0 {
            prop_assert_eq!(&adv, &x);
        }
    }
}
