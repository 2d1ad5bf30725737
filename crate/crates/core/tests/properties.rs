use std::f64::consts::PI;

use metachain::experiment::{csv_header, ResultRecord};
use metachain::fourier::{
    from_fourier, g_tilde, in_c_delta, to_fourier, tube_lower_bound, x_of_z, z_of_x, ModeVector, NeighborhoodSpec,
};
use metachain::{prefactor, spectrum, ChainParams};
use proptest::collection::vec;
use proptest::prelude::*;

fn chain(n: usize, mu: f64) -> ChainParams {
    ChainParams::new(n, mu, 0.1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn transform_round_trip_and_parseval(x in vec(-5.0f64..5.0, 2..80)) {
        let n = x.len() as f64;
        let xhat = to_fourier(&x);
        let back = from_fourier(&xhat);
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let modes: f64 = xhat.to_complex().iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
        prop_assert!((energy - modes).abs() <= 1e-12 * energy.max(1e-300));
    }

    #[test]
    fn storage_is_hermitian(data in vec(-3.0f64..3.0, 2..60)) {
        let n = data.len();
        let z = ModeVector::from_storage(n, data).unwrap();
        let c = z.to_complex();
        prop_assert_eq!(c[0].im, 0.0);
        if n % 2 == 0 {
            prop_assert_eq!(c[n / 2].im, 0.0);
        }
        for k in 1..n {
            prop_assert_eq!(c[k], c[n - k].conj());
        }
        let x = x_of_z(&z);
        let again = z_of_x(&x);
        for (a, b) in z.storage().iter().zip(again.storage()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn rescaled_potential_in_mode_coordinates(x in vec(-2.5f64..2.5, 2..64), mu in 1.1f64..6.0) {
        let p = chain(x.len(), mu);
        let z = z_of_x(&x);
        let g = p.eval_g(&x).unwrap();
        let gt = g_tilde(&z, &p).unwrap();
        prop_assert!((g - gt).abs() <= 1e-12 * (1.0 + g.abs()));
        prop_assert!(gt >= tube_lower_bound(&z, &spectrum(&p)).unwrap() - 1e-12 * (1.0 + gt.abs()));
    }

    #[test]
    fn sqrt_two_identity(n in 2usize..600, mu in 1.05f64..10.0) {
        let r = prefactor(&chain(n, mu)).unwrap();
        prop_assert!((r.c_n_product / r.det_ratio - 2f64.sqrt()).abs() <= 1e-10 * 2f64.sqrt());
    }

    #[test]
    fn spectrum_sandwich(n in 2usize..1024, mu in 1.05f64..10.0) {
        let s = spectrum(&chain(n, mu));
        let nf = n as f64;
        for k in 1..=n / 2 {
            let kk = (k * k) as f64;
            let lo = mu * (1.0 - PI * PI / 12.0) * kk - 1.0;
            let hi = mu * kk / (1.0 - PI * PI / (3.0 * nf * nf)) - 1.0;
            let l = s.lambda[k];
            prop_assert!(lo <= l + 1e-9 * l.abs() && l <= hi + 1e-9 * hi.abs());
            prop_assert_eq!(s.lambda[k], s.lambda[n - k]);
            prop_assert!((s.nu[k] - s.lambda[k] - 3.0).abs() <= 1e-14 * s.nu[k]);
        }
    }

    #[test]
    fn radii_symmetric_and_nondecreasing(n in 2usize..300, eps in 0.01f64..0.5, alpha in 0.01f64..0.24) {
        let spec = NeighborhoodSpec::with_params(n, eps, 1.0, alpha, 0.2).unwrap();
        prop_assert_eq!(spec.r[0], 1.0);
        for k in 1..n {
            prop_assert_eq!(spec.r[k], spec.r[n - k]);
        }
        for k in 1..n / 2 {
            prop_assert!(spec.r[k + 1] >= spec.r[k]);
        }
        prop_assert!(spec.delta > 0.0 && spec.delta <= NeighborhoodSpec::DELTA_CAP);
    }

    #[test]
    fn saddle_lies_in_neighbourhood(n in 2usize..64, eps in 0.01f64..0.5) {
        let p = chain(n, 2.0);
        let spec = NeighborhoodSpec::new(n, eps).unwrap();
        prop_assert!(in_c_delta(&ModeVector::zeros(n), &spec, &spectrum(&p)).unwrap());
    }

    #[test]
    fn flags_recompute_from_fields(
        mean in 1.0f64..1e3,
        se in 0.0f64..50.0,
        oracle in 1.0f64..1e3,
        ratio in 0.5f64..2.0,
        lo in -5.0f64..0.0,
        width in -0.5f64..1.0,
    ) {
        let mut r = ResultRecord {
            mean_emp: Some(mean),
            std_error: Some(se),
            oracle_1d_mean: Some(oracle),
            ratio_emp_over_pred_det: Some(ratio),
            log_cap_lower: Some(lo),
            log_cap_lower_se: Some(0.01),
            log_cap_upper: Some(lo + width),
            log_cap_upper_se: Some(0.01),
            log_cap_oracle: Some(lo + 0.5 * width),
            ..Default::default()
        };
        r.flags = r.compute_flags();
        let json = serde_json::to_string(&r).unwrap();
        let back: ResultRecord = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.compute_flags(), r.flags);
        prop_assert_eq!(r.csv_row().split(',').count(), csv_header().split(',').count());
    }
}
