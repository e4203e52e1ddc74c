//! GLRT routines against dense reference computations written out here.

use nalgebra::{Cholesky, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specarray::glrt::{
    calibrate, detection_statistic, doa_pair, glrt_detect, glrt_doa, statistic_sequence, zscore_normalize,
    GlrtDetectionConfig, GlrtDoaConfig,
};
use specarray::linalg::{CMatrix, C64};
use specarray::signal::dataset::example_rng;
use specarray::signal::{synthesize_detection_example, synthesize_doa_example, ArrayConfig, SynthesisParams};
use specarray::stats::{detection_windows, empirical_covariance, CovariancePair};

fn oracle_trace(pair: &CovariancePair) -> f64 {
    let inv = pair.r_old.values.clone().try_inverse().expect("invertible");
    (inv * &pair.r_new.values).trace().re
}

/// Dominant eigenvector of R_old⁻¹R_new through the equivalent Hermitian
/// problem L⁻¹ R_new L⁻ᴴ with R_old = L Lᴴ.
fn oracle_doa_class(pair: &CovariancePair, grid: &[Vec<C64>]) -> usize {
    let l = Cholesky::new(pair.r_old.values.clone()).expect("positive definite").l();
    let linv = l.clone().try_inverse().unwrap();
    let c = &linv * &pair.r_new.values * linv.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(c);
    let top = eig.eigenvalues.iamax();
    let u = eig.eigenvectors.column(top).into_owned();
    let v = linv.adjoint() * u;
    let scores: Vec<f64> = grid
        .iter()
        .map(|a| {
            a.iter()
                .zip(v.iter())
                .map(|(ai, vi)| ai.conj() * vi)
                .sum::<C64>()
                .norm()
        })
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn random_complex(rng: &mut ChaCha8Rng, m: usize, t: usize) -> CMatrix {
    CMatrix::from_fn(m, t, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

#[test]
fn detection_statistic_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let m = rng.random_range(2..=8);
        let k = rng.random_range(m..=3 * m);
        let z = random_complex(&mut rng, m, 2 * k);
        let (old, new) = detection_windows(&z, k, 0).unwrap();
        let pair = CovariancePair::new(empirical_covariance(&old, 1e-6), empirical_covariance(&new, 1e-6)).unwrap();
        let got = detection_statistic(&pair).unwrap();
        let want = oracle_trace(&pair);
        worst = worst.max((got - want).abs() / want.abs());
    }
    assert!(worst < 1e-8, "worst relative error {worst:e}");
}

#[test]
fn statistic_sequence_on_synthetic_data_matches_oracle() {
    let cfg = ArrayConfig::default();
    let params = SynthesisParams::detection_default();
    let z = synthesize_detection_example(&cfg, &params, 1, &mut example_rng(3, 0)).unwrap();
    let gcfg = GlrtDetectionConfig::default();
    let seq = statistic_sequence(&z.samples, &gcfg).unwrap();
    assert_eq!(seq.values.len(), params.snapshots - 2 * gcfg.k + 1);
    for start in [0, 17, 250, seq.values.len() - 1] {
        let (old, new) = detection_windows(&z.samples, gcfg.k, start).unwrap();
        let pair = CovariancePair::new(
            empirical_covariance(&old, gcfg.zeta),
            empirical_covariance(&new, gcfg.zeta),
        )
        .unwrap();
        let want = oracle_trace(&pair);
        assert!((seq.values[start] - want).abs() <= 1e-8 * want.abs());
    }
    let zs = zscore_normalize(&seq).unwrap();
    let mean = zs.values.iter().sum::<f64>() / zs.values.len() as f64;
    assert!(mean.abs() < 1e-9);
}

#[test]
fn doa_argmax_matches_dense_eigendecomposition() {
    let cfg = ArrayConfig::default();
    let mut params = SynthesisParams::doa_default();
    params.soi_power = 10.0;
    let grid = cfg.steering_grid().unwrap();
    let dcfg = GlrtDoaConfig::new(params.doa_onset(), 1e-6, grid.clone()).unwrap();
    let raw: Vec<Vec<C64>> = grid.iter().map(|a| a.values.clone()).collect();
    let angles = cfg.grid_angles();
    let mut hits = 0;
    for i in 0..200u64 {
        let mut rng = example_rng(21, i);
        let theta = angles[rng.random_range(0..angles.len())];
        let z = synthesize_doa_example(&cfg, &params, theta, &mut rng).unwrap();
        let pair = doa_pair(&z.samples, dcfg.k, params.doa_onset(), dcfg.zeta).unwrap();
        let got = glrt_doa(&pair, &dcfg).unwrap().class_index;
        if got == oracle_doa_class(&pair, &raw) {
            hits += 1;
        }
    }
    assert_eq!(hits, 200);
}

#[test]
fn calibrated_false_alarm_rate_is_near_nominal() {
    let cfg = ArrayConfig::default();
    let params = SynthesisParams::detection_default();
    let h0: Vec<CMatrix> = (0..600u64)
        .map(|i| {
            synthesize_detection_example(&cfg, &params, 0, &mut example_rng(5, i))
                .unwrap()
                .samples
        })
        .collect();
    let (fit, held) = h0.split_at(300);
    let cal = calibrate(fit.iter(), &GlrtDetectionConfig::default()).unwrap();
    let gcfg = cal.to_config();
    let alarms = held.iter().filter(|z| glrt_detect(z, &gcfg).unwrap() == 1).count();
    let rate = alarms as f64 / held.len() as f64;
    // 300 trials: binomial standard deviation about 1.3 points.
    assert!((rate - 0.05).abs() < 0.05, "false-alarm rate {rate}");
}
