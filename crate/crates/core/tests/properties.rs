use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use shiftgen::latent::{dot, normalize};
use shiftgen::nn::one_nn_distance;
use shiftgen::toy::{decode_batch, toy_decode, ToyDecoderConfig};
use shiftgen::{
    angle_between, apply_shift, derive_targets, in_support, intensity_analytic, sample_prior, sample_shifted_batch,
    slerp, Dataset, LabelRule, Metric, ShiftSpec,
};

const LABELS: LabelRule = LabelRule::RoundRobin { classes: 2 };

fn unit(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn slerp_stays_on_the_great_circle(seed in any::<u64>(), d in 2usize..40, tau in 0.0f64..=1.0) {
        let a = unit(seed, d);
        let b = unit(seed ^ 0x9e37_79b9, d);
        let omega = angle_between(&a, &b).unwrap();
        prop_assume!(omega < PI - 1e-6);
        let p = slerp(&a, &b, tau).unwrap();
        prop_assert!((dot(&p, &p).sqrt() - 1.0).abs() <= 1e-9);
        prop_assert!((angle_between(&a, &p).unwrap() - tau * omega).abs() <= 1e-6);
    }

    #[test]
    fn extend_supports_are_nested(seed in 0u64..1000, t1 in 0.0f64..FRAC_PI_2, t2 in 0.0f64..FRAC_PI_2) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let targets = derive_targets(seed, 5).unwrap();
        let small = ShiftSpec::extend(lo, targets.clone()).unwrap();
        let large = ShiftSpec::extend(hi, targets).unwrap();
        let batch = sample_shifted_batch(&small, 64, seed, 0, LABELS).unwrap();
        for row in batch.batch.rows() {
            prop_assert!(in_support(row, &large));
        }
    }

    #[test]
    fn overlap_samples_face_the_axis(seed in 0u64..1000, theta in 0.0f64..=FRAC_PI_2) {
        let spec = ShiftSpec::overlap(theta, derive_targets(seed, 7).unwrap()).unwrap();
        let axis = spec.overlap_axis().unwrap().unwrap();
        let batch = sample_shifted_batch(&spec, 64, seed, 1, LABELS).unwrap();
        for row in batch.batch.rows() {
            prop_assert!(dot(row, &axis) >= -1e-9);
        }
    }

    #[test]
    fn truncation_scales_exactly(seed in any::<u64>(), radius in 0.01f64..3.0) {
        let z: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..9).map(|_| rng.sample(StandardNormal)).collect()
        };
        let out = apply_shift(&z, &ShiftSpec::truncation(radius, 9).unwrap()).unwrap();
        for (o, v) in out.iter().zip(&z) {
            prop_assert_eq!(o.to_bits(), (radius * v).to_bits());
        }
    }

    #[test]
    fn intensity_grows_with_the_shift(seed in 0u64..100, d in 2usize..32, a in 0.0f64..FRAC_PI_2, b in 0.0f64..FRAC_PI_2) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let targets = derive_targets(seed, d).unwrap();
        for make in [ShiftSpec::extend, ShiftSpec::overlap] {
            let train = make(0.0, targets.clone()).unwrap();
            let i_lo = intensity_analytic(&train, &make(lo, targets.clone()).unwrap()).unwrap();
            let i_hi = intensity_analytic(&train, &make(hi, targets.clone()).unwrap()).unwrap();
            prop_assert!((0.0..1.0).contains(&i_lo));
            prop_assert!(i_lo <= i_hi + 1e-12);
        }
        let train = ShiftSpec::truncation(0.8, d).unwrap();
        let r = |x: f64| ShiftSpec::truncation(0.8 + x, d).unwrap();
        prop_assert!(intensity_analytic(&train, &r(lo)).unwrap() <= intensity_analytic(&train, &r(hi)).unwrap());
    }

    #[test]
    fn nn_is_invariant_to_train_order(seed in any::<u64>(), nt in 1usize..60, ns in 1usize..20, d in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..nt).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let shift = Dataset::flat(d, (0..ns * d).map(|_| rng.random()).collect(), vec![0; ns]).unwrap();
        let mut order: Vec<usize> = (0..nt).collect();
        for i in (1..nt).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let build = |idx: &[usize]| {
            Dataset::flat(d, idx.iter().flat_map(|&i| rows[i].clone()).collect(), vec![0; nt]).unwrap()
        };
        let identity: Vec<usize> = (0..nt).collect();
        let a = one_nn_distance(&build(&identity), &shift, Metric::Euclidean).unwrap();
        let b = one_nn_distance(&build(&order), &shift, Metric::Euclidean).unwrap();
        for (x, y) in a.per_point.iter().zip(&b.per_point) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn extend_and_overlap_at_zero_share_a_support() {
    let targets = derive_targets(21, 8).unwrap();
    let extend = ShiftSpec::extend(0.0, targets.clone()).unwrap();
    let overlap = ShiftSpec::overlap(0.0, targets).unwrap();
    for (from, other) in [(&extend, &overlap), (&overlap, &extend)] {
        let batch = sample_shifted_batch(from, 500, 4, 0, LABELS).unwrap();
        assert!(batch.batch.rows().all(|row| in_support(row, other)));
    }
}

#[test]
fn pushforward_is_deterministic() {
    let spec = ShiftSpec::overlap(0.7, derive_targets(2, 16).unwrap()).unwrap();
    let a = sample_shifted_batch(&spec, 300, 9, 3, LABELS).unwrap();
    let b = sample_shifted_batch(&spec, 300, 9, 3, LABELS).unwrap();
    assert_eq!(a, b);
    assert_eq!(sample_prior(16, 50, 1, 2, LABELS).unwrap(), sample_prior(16, 50, 1, 2, LABELS).unwrap());
}

#[test]
fn high_dimensional_extend_saturates() {
    let targets = derive_targets(0, 3072).unwrap();
    let train = ShiftSpec::extend(0.0, targets.clone()).unwrap();
    let shift = ShiftSpec::extend(PI / 6.0, targets).unwrap();
    assert!((intensity_analytic(&train, &shift).unwrap() - 0.5).abs() <= 1e-6);
}

#[test]
fn decoded_batch_has_no_duplicate_images() {
    let cfg = ToyDecoderConfig::default();
    let batch = sample_prior(cfg.latent_dim, 10_000, 17, 0, LABELS).unwrap();
    let images = decode_batch(&batch, &cfg).unwrap();
    let mut keys: Vec<Vec<u32>> = images.rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    assert_eq!(keys.len(), 10_000);
    assert_eq!(images.labels(), &batch.labels[..]);
}

#[test]
fn decoder_is_continuous() {
    let cfg = ToyDecoderConfig::default();
    let z = unit(5, cfg.latent_dim);
    let dir = unit(6, cfg.latent_dim);
    let base = toy_decode(&z, 1, &cfg).unwrap();
    let mut previous = f64::INFINITY;
    for k in 1..=8 {
        let delta = 10f64.powi(-k);
        let moved: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + delta * b).collect();
        let img = toy_decode(&moved, 1, &cfg).unwrap();
        let diff = img
            .iter()
            .zip(&base)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= previous, "difference grew at δ = {delta}");
        // bounded gain: the decoder is smooth in every factor
        assert!(diff <= 100.0 * delta + 1e-6, "δ = {delta}: image moved {diff}");
        previous = diff;
    }
    assert!(previous < 1e-5);
}
