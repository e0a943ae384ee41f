use kinemb::koopman::{
    estimate_covariances, half_weighted, inv_sqrt, linear_vamp, vamp2_score, vamp2_score_and_grad, paired_frames,
    LagSpec,
};
use kinemb::rng::rng_from_seed;
use kinemb::trajio::{decode_fmb, encode_fmb, FeatureSeries};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut kinemb::rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// AR(1) channels mixed by a random matrix, so columns are correlated.
fn mixed_ar(seed: u64, t: usize, k: usize, memory: f64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let mut z = DMatrix::<f64>::zeros(t, k);
    for r in 1..t {
        for c in 0..k {
            let e = gauss(&mut rng);
            z[(r, c)] = memory * z[(r - 1, c)] + e;
        }
    }
    let mix = DMatrix::from_fn(k, k, |_, _| gauss(&mut rng));
    z * mix
}

fn series(m: DMatrix<f64>) -> FeatureSeries {
    FeatureSeries::new(m, "p", 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scores_lie_between_one_and_rank_plus_one(
        seed in any::<u64>(),
        t in 20usize..300,
        k in 1usize..6,
        memory in -0.95f64..0.95,
        tau in 1usize..4,
    ) {
        let s = series(mixed_ar(seed, t, k, memory));
        let lag = LagSpec::new(tau);
        let model = half_weighted(&estimate_covariances(std::slice::from_ref(&s), lag).unwrap(), 1e-6).unwrap();
        let score = vamp2_score(&model);
        prop_assert!(score >= 1.0 && score <= model.rank() as f64 + 1.0, "score {score}, rank {}", model.rank());
        let (x, y) = paired_frames(std::slice::from_ref(&s), lag).unwrap();
        let g = vamp2_score_and_grad(&x, &y, 1e-6).unwrap();
        prop_assert!(g.score >= 1.0 && g.score <= k as f64 + 1.0);
        let d = 1 + (seed as usize) % model.rank();
        let lv = linear_vamp(std::slice::from_ref(&s), lag, d, 1e-6).unwrap();
        prop_assert!(lv.score >= 1.0 && lv.score <= d as f64 + 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inv_sqrt_whitens_the_retained_subspace(seed in any::<u64>(), k in 1usize..=64, drop in 0usize..4) {
        let mut rng = rng_from_seed(seed);
        let q = DMatrix::from_fn(k, k, |_, _| gauss(&mut rng)).qr().q();
        let drop = drop.min(k - 1);
        let lambdas = DVector::<f64>::from_fn(k, |i, _| if i < drop { 0.0 } else { 10f64.powf(((i * 7919 + seed as usize) % 400) as f64 / 100.0 - 2.0) });
        let m = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let (f, r) = inv_sqrt(&m, 1e-6).unwrap();
        prop_assert_eq!(r, k - drop);
        let err = (f.transpose() * &m * &f - DMatrix::identity(r, r)).abs().max();
        prop_assert!(err <= 1e-10, "err {err}");
    }

    #[test]
    fn score_is_invariant_under_invertible_affine_maps(seed in any::<u64>(), k in 1usize..5) {
        let x = mixed_ar(seed, 400, k, 0.8);
        let mut rng = rng_from_seed(seed ^ 0x5eed);
        // well conditioned: identity plus a small random perturbation
        let a = DMatrix::identity(k, k) + DMatrix::from_fn(k, k, |_, _| 0.3 * gauss(&mut rng) / k as f64);
        let b = DVector::from_fn(k, |_, _| 5.0 * gauss(&mut rng));
        let mut y = &x * a.transpose();
        for mut row in y.row_iter_mut() {
            row += b.transpose();
        }
        let lag = LagSpec::new(2);
        let s0 = vamp2_score(&half_weighted(&estimate_covariances(&[series(x)], lag).unwrap(), 1e-10).unwrap());
        let s1 = vamp2_score(&half_weighted(&estimate_covariances(&[series(y)], lag).unwrap(), 1e-10).unwrap());
        prop_assert!((s0 - s1).abs() <= 1e-8, "{s0} vs {s1}");
    }

    #[test]
    fn fmb_round_trip(seed in any::<u64>(), t in 2usize..50, k in 1usize..8) {
        let m = mixed_ar(seed, t, k, 0.5);
        let s = series(m);
        let back = decode_fmb(&encode_fmb(&s)).unwrap();
        prop_assert_eq!(back.values(), s.values());
    }
}
