use despeckle_core::raster::Raster;
use despeckle_core::speckle::{
    apply_spatial_correlation, empirical_cross_covariance, sample_dual_pol, sample_single_pol, synth_gamma_stack,
    CovarianceField, SpatialCorrelationKernel,
};
use proptest::prelude::*;

const SIDE: usize = 1000;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample covariance and the standard error of the mean of centred products.
fn cov_se(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let c = mean(&prods);
    let var = prods.iter().map(|p| (p - c) * (p - c)).sum::<f64>() / prods.len() as f64;
    (c, (var / prods.len() as f64).sqrt())
}

#[test]
fn single_pol_moments() {
    let f = sample_single_pol(&vec![4.0; SIDE * SIDE], SIDE, SIDE, 11).unwrap();
    let m = mean(&f.intensity());
    assert!((m - 4.0).abs() / 4.0 <= 0.01, "mean intensity {m}");
    let (c, se) = cov_se(&f.a, &f.b);
    assert!(c.abs() <= 3.0 * se, "cov(a,b) {c} se {se}");
    let var_a = cov_se(&f.a, &f.a).0;
    assert!((var_a - 2.0).abs() <= 0.02, "var(a) {var_a}");
}

#[test]
fn dual_pol_covariance_structure() {
    let x = sample_dual_pol(&CovarianceField::constant(SIDE, SIDE, 2.0, 2.0, 1.0), 5).unwrap();
    let cov = empirical_cross_covariance(x.raster()).unwrap();
    let expected = [
        [1.0, 0.0, 0.5, 0.0],
        [0.0, 1.0, 0.0, 0.5],
        [0.5, 0.0, 1.0, 0.0],
        [0.0, 0.5, 0.0, 1.0],
    ];
    for (i, row) in expected.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            assert!(
                cov.within(i, j, e, 3.0),
                "entry ({i},{j}) = {} se {}",
                cov.get(i, j),
                cov.se(i, j)
            );
        }
    }
    // independent recomputation of one entry
    let (c, se) = cov_se(x.raster().channel(0), x.raster().channel(2));
    assert!((c - cov.get(0, 2)).abs() < 1e-12 && (se - cov.se(0, 2)).abs() < 1e-12);
}

#[test]
fn dual_pol_correlation_matches_coefficient() {
    let (hh, vv, hv) = (3.0, 1.5, -1.2);
    let x = sample_dual_pol(&CovarianceField::constant(700, 700, hh, vv, hv), 8).unwrap();
    let r = x.raster();
    let (c, se) = cov_se(r.channel(0), r.channel(2));
    assert!((c - hv / 2.0).abs() <= 3.0 * se);
    for (a, b) in [(0, 1), (0, 3), (2, 1), (2, 3)] {
        let (c, se) = cov_se(r.channel(a), r.channel(b));
        assert!(c.abs() <= 3.0 * se, "channels {a},{b}: {c} se {se}");
    }
}

#[test]
fn independent_polarizations_when_cross_term_vanishes() {
    let x = sample_dual_pol(&CovarianceField::constant(500, 500, 2.0, 1.0, 0.0), 3).unwrap();
    let (c, se) = cov_se(x.raster().channel(0), x.raster().channel(2));
    assert!(c.abs() <= 3.0 * se);
}

#[test]
fn hh_marginal_matches_single_pol() {
    let n = 700;
    let dual = sample_dual_pol(&CovarianceField::constant(n, n, 2.0, 3.0, 1.0), 21).unwrap();
    let single = sample_single_pol(&vec![2.0; n * n], n, n, 22).unwrap();
    let r = dual.raster();
    let i_dual: Vec<f64> = r
        .channel(0)
        .iter()
        .zip(r.channel(1))
        .map(|(a, b)| a * a + b * b)
        .collect();
    let i_single = single.intensity();
    let se = |v: &[f64]| (cov_se(v, v).0 / v.len() as f64).sqrt();
    let diff = mean(&i_dual) - mean(&i_single);
    let pooled = (se(&i_dual).powi(2) + se(&i_single).powi(2)).sqrt();
    assert!(diff.abs() <= 3.0 * pooled, "difference {diff} pooled se {pooled}");
}

#[test]
fn spatial_correlation_keeps_components_uncorrelated() {
    let x = sample_dual_pol(&CovarianceField::constant(SIDE, SIDE, 2.0, 2.0, 1.0), 5).unwrap();
    let y = apply_spatial_correlation(&x, &SpatialCorrelationKernel::new(vec![0.25, 0.5, 0.25], true).unwrap());
    let cov = empirical_cross_covariance(y.raster()).unwrap();
    for a in [0, 2] {
        for b in [1, 3] {
            assert!(
                cov.within(a, b, 0.0, 3.0),
                "({a},{b}) = {} se {}",
                cov.get(a, b),
                cov.se(a, b)
            );
        }
    }
}

#[test]
fn gamma_replicas_have_unit_speckle_moments() {
    let clean = Raster::from_vec(1, SIDE, SIDE, vec![10.0; SIDE * SIDE]).unwrap();
    let s = synth_gamma_stack(&clean, 4).unwrap();
    for ch in 0..2 {
        let v = s.raster().channel(ch);
        let m = mean(v);
        let var = cov_se(v, v).0;
        assert!((m - 10.0).abs() / 10.0 <= 0.01, "mean {m}");
        assert!((var - 100.0).abs() / 100.0 <= 0.03, "variance {var}");
    }
    let (c, se) = cov_se(s.raster().channel(0), s.raster().channel(1));
    assert!(c.abs() <= 3.0 * se);
}

#[test]
fn oracle_optimum_is_unbiased() {
    let f = sample_single_pol(&vec![4.0; SIDE * SIDE], SIDE, SIDE, 31).unwrap();
    let m = mean(&f.a.iter().map(|a| 2.0 * a * a).collect::<Vec<_>>());
    assert!((m - 4.0).abs() / 4.0 <= 0.01, "mean of 2γ² = {m}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>(), hv in -0.9..0.9f64) {
        let cov = CovarianceField::constant(6, 5, 1.0, 1.0, hv);
        prop_assert_eq!(sample_dual_pol(&cov, seed).unwrap(), sample_dual_pol(&cov, seed).unwrap());
        let clean = Raster::from_vec(2, 3, 3, (0..18).map(|i| i as f64 / 4.0).collect()).unwrap();
        prop_assert_eq!(synth_gamma_stack(&clean, seed).unwrap(), synth_gamma_stack(&clean, seed).unwrap());
    }

    #[test]
    fn non_positive_definite_covariance_rejected(hh in 0.1..5.0f64, vv in 0.1..5.0f64, excess in 1.001..3.0f64) {
        let hv = (hh * vv).sqrt() * excess;
        prop_assert!(sample_dual_pol(&CovarianceField::constant(2, 2, hh, vv, hv), 0).is_err());
    }

    #[test]
    fn normalized_kernel_preserves_constants(c in -5.0..5.0f64, t0 in 0.01..1.0f64, t1 in 0.01..1.0f64) {
        let raster = Raster::from_vec(4, 5, 7, vec![c; 140]).unwrap();
        let stack = despeckle_core::speckle::PolStack::with_default_names(raster).unwrap();
        let k = SpatialCorrelationKernel::new(vec![t0, t1, t0], true).unwrap();
        let out = apply_spatial_correlation(&stack, &k);
        for v in out.raster().data() {
            prop_assert!((v - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }
}
