use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;

use larmor::filter::{covariance_after, init_filter, predict, run_filter, update};
use larmor::gaussian::{BlockPartition, GaussianBelief};
use larmor::physics::{interaction_map_5, InteractionMap4, OuParams, PhysicsParams};
use larmor::smoother::{run_smoother, LagConfig, Smoother};
use larmor::truth::{run_truth, run_truth_steps, FieldSource, DEFAULT_STEP_CAP};
use larmor::SimRng;

/// Random SPD `gamma` of size `n` from a square root with bounded entries.
fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| {
        let a = DMatrix::from_vec(n, n, v);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    })
}

fn belief(n: usize) -> impl Strategy<Value = GaussianBelief> {
    (spd(n), prop::collection::vec(-3.0..3.0f64, n))
        .prop_map(|(g, m)| GaussianBelief::new(DVector::from_vec(m), g).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Gaussian conditioning written in ordinary covariances agrees with the
    /// gamma-convention update.
    #[test]
    fn conditioning_matches_covariance_form(b in belief(4), x in -3.0..3.0f64) {
        let part = BlockPartition::trailing(2, 4).unwrap();
        let post = b.condition_on_measurement(&part, x).unwrap();
        let cov = b.gamma() / 2.0;
        let m = 2;
        let s = cov[(m, m)];
        for i in 0..2 {
            let mean = b.mean()[i] + cov[(i, m)] / s * (x - b.mean()[m]);
            prop_assert!((post.mean()[i] - mean).abs() < 1e-9 * (1.0 + mean.abs()));
            for j in 0..2 {
                let c = cov[(i, j)] - cov[(i, m)] * cov[(j, m)] / s;
                prop_assert!((post.gamma()[(i, j)] / 2.0 - c).abs() < 1e-9 * (1.0 + c.abs()));
            }
        }
        prop_assert!(post.validate().passes());
    }

    /// Bivariate normal: E[a | b = x] = mu_a + rho sd_a / sd_b (x - mu_b) and
    /// Var[a | b] = sd_a^2 (1 - rho^2).
    #[test]
    fn bivariate_oracle(
        sa in 0.1..3.0f64, sb in 0.1..3.0f64, rho in -0.95..0.95f64,
        ma in -2.0..2.0f64, mb in -2.0..2.0f64, x in -4.0..4.0f64,
    ) {
        let cov = DMatrix::from_row_slice(2, 2, &[sa * sa, rho * sa * sb, rho * sa * sb, sb * sb]);
        let b = GaussianBelief::new(DVector::from_vec(vec![ma, mb]), cov * 2.0).unwrap();
        let post = b.condition_on_measurement(&BlockPartition::trailing(1, 2).unwrap(), x).unwrap();
        let mean = ma + rho * sa / sb * (x - mb);
        let var = sa * sa * (1.0 - rho * rho);
        prop_assert!((post.mean()[0] - mean).abs() < 1e-10 * (1.0 + mean.abs()));
        prop_assert!((post.variance(0) - var).abs() < 1e-10 * (1.0 + var));
        prop_assert_eq!(post.mean()[1], 0.0);
        prop_assert_eq!(post.gamma()[(1, 1)], 1.0);
        prop_assert_eq!(post.gamma()[(0, 1)], 0.0);
    }

    /// Two affine maps applied in turn equal their composition.
    #[test]
    fn affine_composition(
        b in belief(3),
        m1 in prop::collection::vec(-1.5..1.5f64, 9),
        m2 in prop::collection::vec(-1.5..1.5f64, 9),
        v1 in prop::collection::vec(-1.0..1.0f64, 3),
        v2 in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let (m1, m2) = (DMatrix::from_vec(3, 3, m1), DMatrix::from_vec(3, 3, m2));
        let (v1, v2) = (DVector::from_vec(v1), DVector::from_vec(v2));
        let twice = b.affine_transform(&m1, &v1).unwrap().affine_transform(&m2, &v2).unwrap();
        let once = b.affine_transform(&(&m2 * &m1), &(&m2 * &v1 + &v2)).unwrap();
        let scale = 1.0 + once.gamma().amax();
        prop_assert!((twice.gamma() - once.gamma()).amax() < 1e-10 * scale);
        prop_assert!((twice.mean() - once.mean()).amax() < 1e-10 * (1.0 + once.mean().amax()));
    }

    /// Sparse shears agree with the dense interaction map.
    #[test]
    fn sparse_predict_matches_dense(b in belief(5), field in -2.0..2.0f64) {
        let mut b = b;
        b.set_mean(0, field);
        let p = PhysicsParams::default();
        let ou = OuParams::new(1e3, 2e3);
        let sparse = predict(&b, &p, &ou).unwrap();
        let (d, l) = ou.step_maps(p.tau).unwrap();
        let dense = b
            .affine_transform(&interaction_map_5(&p), &DVector::zeros(5)).unwrap()
            .affine_transform(&d, &DVector::zeros(5)).unwrap()
            .add_diffusion(&l).unwrap();
        prop_assert!((sparse.gamma() - dense.gamma()).amax() < 1e-9 * (1.0 + dense.gamma().amax()));
        prop_assert!((sparse.mean() - dense.mean()).amax() < 1e-12 * (1.0 + dense.mean().amax()));
    }

    /// Permutations keep the belief valid and preserve every marginal.
    #[test]
    fn permutation_preserves_marginals(b in belief(5), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let p = b.permute(&perm).unwrap();
        prop_assert!(p.validate().passes());
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(p.variance(new), b.variance(old));
            prop_assert_eq!(p.mean()[new], b.mean()[old]);
        }
    }
}

#[test]
fn symmetric_psd_after_every_step() {
    let p = PhysicsParams::default();
    let mut rng = SimRng::seed_from_u64(99);
    for (gamma_b, sigma_b) in [(0.0, 0.0), (10.0, 20.0), (1e3, 2e3), (1e5, 2e5)] {
        let ou = OuParams::new(gamma_b, sigma_b);
        let record = run_truth_steps(&p, &FieldSource::Ou(ou), 2500, &mut rng).unwrap();
        let mut b = init_filter(p.delta_b0).unwrap();
        for &x in &record.outcomes {
            b = update(&predict(&b, &p, &ou).unwrap(), x).unwrap();
            let d = b.validate();
            assert!(d.passes(), "{d:?}");
        }
    }
}

#[test]
fn smoother_state_stays_psd() {
    let p = PhysicsParams::default();
    let ou = OuParams::new(1e3, 2e3);
    let lag = LagConfig::new(8, 25).unwrap();
    let record = run_truth(&p, &FieldSource::Ou(ou), 5e-5, 4, DEFAULT_STEP_CAP).unwrap();
    let s = Smoother::new(&p, &ou, lag).unwrap();
    let mut state = s.init();
    for (k, &x) in record.outcomes.iter().enumerate() {
        s.step(&mut state, x, k);
        if k % 97 == 0 {
            assert!(state.validate().passes(), "step {k}");
        }
    }
}

#[test]
fn smoother_delay_zero_is_the_filter() {
    let p = PhysicsParams::default();
    let ou = OuParams::new(1e2, 2e2);
    let record = run_truth(&p, &FieldSource::Ou(ou), 1e-4, 8, DEFAULT_STEP_CAP).unwrap();
    let filter = run_filter(&record, &p, &ou).unwrap();
    for stride in [1, 7, 50] {
        let st = run_smoother(&record, &p, &ou, LagConfig::new(5, stride).unwrap()).unwrap();
        for (e, &t) in st.times.iter().enumerate() {
            let i = (t / p.tau).round() as usize - 1;
            assert_eq!(st.b_hat[e][0].to_bits(), filter.b_hat[i].to_bits());
            assert_eq!(st.b_var[e][0].to_bits(), filter.b_var[i].to_bits());
        }
    }
}

#[test]
fn variance_does_not_depend_on_the_record() {
    let p = PhysicsParams::default();
    let ou = OuParams::new(1e3, 2e3);
    let traces: Vec<_> = (0..3)
        .map(|s| {
            let r = run_truth(&p, &FieldSource::Ou(ou), 2e-5, s, DEFAULT_STEP_CAP).unwrap();
            run_filter(&r, &p, &ou).unwrap()
        })
        .collect();
    assert_eq!(traces[0].b_var, traces[1].b_var);
    assert_eq!(traces[0].b_var, traces[2].b_var);
    assert_ne!(traces[0].b_hat, traces[1].b_hat);
    let direct = covariance_after(&p, &ou, 2000).unwrap();
    assert_eq!(direct.variance(0), *traces[0].b_var.last().unwrap());
}

#[test]
fn four_variable_map_is_symplectic_shear() {
    let p = PhysicsParams::default();
    let m = InteractionMap4::new(&p);
    assert_relative_eq!(m.s.determinant(), 1.0, epsilon = 1e-12);
    assert_eq!(m.offset(2.0)[1], -2.0 * p.mu_tau());
}
