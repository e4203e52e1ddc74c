use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specarray::attacks::{
    attack_doa_example, eps_for_psr, fgsm, pgd, project_lp_ball, psr_db, split_covariance_tensor, AttackConfig,
    BALL_TOL,
};
use specarray::neural::{covariance_input, Network};
use specarray::signal::dataset::example_rng;
use specarray::signal::{synthesize_doa_example, ArrayConfig, SynthesisParams};
use specarray::stats::covariance_shift_bound;
use specarray::{Norm, RealTensor};

fn tensor(dims: [usize; 3], data: Vec<f64>) -> RealTensor {
    RealTensor::new(dims, data).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3], scale: f64) -> RealTensor {
    let n = dims.iter().product();
    tensor(dims, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn norm_arg() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::L2), Just(Norm::Linf)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_is_feasible_and_idempotent(
        data in prop::collection::vec(-10.0f64..10.0, 12),
        center in prop::collection::vec(-1.0f64..1.0, 12),
        eps in 1e-4f64..5.0,
        p in norm_arg(),
    ) {
        let x = tensor([2, 3, 2], data);
        let c = tensor([2, 3, 2], center);
        let once = project_lp_ball(&x, &c, eps, p).unwrap();
        prop_assert!(once.sub(&c).unwrap().norm(p) <= eps * (1.0 + BALL_TOL));
        let twice = project_lp_ball(&once, &c, eps, p).unwrap();
        let drift = twice.sub(&once).unwrap().linf_norm();
        prop_assert!(drift <= 1e-12 * (1.0 + once.linf_norm()));
    }

    #[test]
    fn points_inside_the_ball_are_fixed(
        dir in prop::collection::vec(-1.0f64..1.0, 12),
        frac in 0.0f64..0.99,
        p in norm_arg(),
    ) {
        let c = RealTensor::zeros([2, 3, 2]);
        let d = tensor([2, 3, 2], dir);
        let n = d.norm(p);
        prop_assume!(n > 0.0);
        let inside = d.scaled(frac / n);
        let out = project_lp_ball(&inside, &c, 1.0, p).unwrap();
        prop_assert_eq!(out, inside);
    }
}

#[test]
fn l2_projection_is_nearest_feasible_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = [2, 4, 2];
    for _ in 0..20 {
        let c = random_tensor(&mut rng, dims, 1.0);
        let eps = rng.random_range(0.1..1.0);
        let x = c.add(&random_tensor(&mut rng, dims, 3.0)).unwrap();
        let proj = project_lp_ball(&x, &c, eps, Norm::L2).unwrap();
        let best = x.sub(&proj).unwrap().l2_norm();
        for _ in 0..1000 {
            // uniform direction, radius up to ε
            let dir = random_tensor(&mut rng, dims, 1.0);
            let r = eps * rng.random::<f64>();
            let y = c.add(&dir.scaled(r / dir.l2_norm())).unwrap();
            assert!(x.sub(&y).unwrap().l2_norm() > best);
        }
    }
}

#[test]
fn fgsm_l2_hits_target_psr() {
    let net = {
        let mut n = Network::detection([8, 20, 2]).unwrap();
        n.initialize(3);
        n
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for psr in [-30.0, -20.0, -12.5] {
        let x = random_tensor(&mut rng, [8, 20, 2], 1.0);
        let eps = eps_for_psr(x.l2_norm(), psr, Norm::L2, x.len()).unwrap();
        let p = fgsm(&net, &x, 1, &AttackConfig::fgsm(Norm::L2, eps)).unwrap();
        assert!((p.psr_db - psr).abs() < 0.1, "{} vs {psr}", p.psr_db);
        assert!((psr_db(&p.delta, &x).unwrap() - p.psr_db).abs() < 1e-12);
    }
}

#[test]
fn pgd_is_at_least_as_strong_as_fgsm() {
    let mut net = Network::detection([8, 20, 2]).unwrap();
    net.initialize(5);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let xs: Vec<RealTensor> = (0..40).map(|_| random_tensor(&mut rng, [8, 20, 2], 0.05)).collect();
    for p in [Norm::Linf, Norm::L2] {
        let eps = match p {
            Norm::Linf => 0.01,
            Norm::L2 => 0.2,
        };
        let (mut lf, mut lp) = (0.0, 0.0);
        for (i, x) in xs.iter().enumerate() {
            let y = i % 2;
            let f = fgsm(&net, x, y, &AttackConfig::fgsm(p, eps)).unwrap();
            let g = pgd(&net, x, y, &AttackConfig::pgd(p, eps, 10)).unwrap();
            assert!(g.norm(p) <= eps * (1.0 + BALL_TOL));
            lf += net.loss(&f.apply(x).unwrap(), y).unwrap();
            lp += net.loss(&g.apply(x).unwrap(), y).unwrap();
        }
        assert!(lp >= 0.98 * lf, "{p:?}: pgd {lp} fgsm {lf}");
    }
}

#[test]
fn larger_budget_never_lowers_fgsm_loss_on_a_linear_model() {
    // For a linear logit the loss along the FGSM direction is monotone in ε.
    let mut net = Network::new(
        specarray::neural::Arch::Custom,
        [1, 4, 2],
        vec![specarray::neural::Layer::Flatten, specarray::neural::Layer::dense(8, 2)],
    )
    .unwrap();
    net.initialize(2);
    let x = tensor([1, 4, 2], vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.0, 0.1]);
    let mut last = f64::NEG_INFINITY;
    for eps in [0.0, 0.01, 0.05, 0.1, 0.2] {
        let d = fgsm(&net, &x, 0, &AttackConfig::fgsm(Norm::Linf, eps)).unwrap();
        let l = net.loss(&d.apply(&x).unwrap(), 0).unwrap();
        assert!(l >= last - 1e-12);
        last = l;
    }
}

#[test]
fn doa_covariance_attack_respects_the_shift_bound() {
    let cfg = ArrayConfig::default();
    let params = SynthesisParams::doa_default();
    let z = synthesize_doa_example(&cfg, &params, 20.0, &mut example_rng(1, 0)).unwrap();
    let t0 = params.doa_onset();
    let x = covariance_input(&z, t0, 1e-6).unwrap();
    let mut net = Network::doa(x.dims(), cfg.num_classes()).unwrap();
    net.initialize(8);
    let eps = eps_for_psr(x.l2_norm(), -20.0, Norm::Linf, x.len()).unwrap();
    let p = attack_doa_example(&net, &x, z.label, &AttackConfig::fgsm(Norm::Linf, eps)).unwrap();
    let (old, new) = split_covariance_tensor(&p.apply(&x).unwrap()).unwrap();
    let (old0, new0) = split_covariance_tensor(&x).unwrap();
    // Each covariance half moves by at most ε per real entry.
    for (a, b) in [(old, old0), (new, new0)] {
        let worst = (a - b).iter().map(|d| d.re.abs().max(d.im.abs())).fold(0.0, f64::max);
        assert!(worst <= eps * (1.0 + 1e-9));
    }
    // The snapshot-domain bound on the same observation.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let delta = specarray::linalg::CMatrix::from_fn(8, params.snapshots, |_, _| {
        specarray::linalg::C64::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3))
    });
    let b = covariance_shift_bound(&z.samples, &delta, Norm::Linf, 1e-3, 16).unwrap();
    assert!(b.holds());
}
