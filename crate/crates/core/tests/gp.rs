use gpsmc::gp::{
    conditional_mean, gibbs_noise, gibbs_noise_params, grad_log_joint_params, log_joint,
    log_joint_unconstrained, mvn_logpdf, predictive, to_unconstrained, Fit, ModelState,
    Observations,
};
use gpsmc::kernel::{cov_matrix, cross_cov_matrix, eval_kernel, KernelExpr};
use gpsmc::prior::{self, PcfgConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::gamma_ur;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Case {
    state: ModelState,
    t: Vec<f64>,
    y: Vec<f64>,
}

fn random_case(seed: u64, max_n: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PcfgConfig {
        max_depth: Some(3),
        ..PcfgConfig::default()
    };
    let state = ModelState::sample_prior(&cfg, &mut rng);
    let n = rng.random_range(1..=max_n);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    let y = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Case { state, t, y }
}

/// `a` plus the documented initial jitter on the diagonal.
fn jittered(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let j = 1e-8 * a.diagonal().mean().abs();
    for i in 0..a.nrows() {
        a[(i, i)] += j;
    }
    a
}

fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().expect("invertible")
}

fn oracle_logpdf(y: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let c = jittered(cov.clone());
    let r = DVector::from_iterator(y.len(), y.iter().zip(mean).map(|(a, b)| a - b));
    let quad = (r.transpose() * dense_inverse(&c) * &r)[(0, 0)];
    -0.5 * quad - 0.5 * c.determinant().ln() - 0.5 * y.len() as f64 * LN_2PI
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn mvn_logpdf_examples() {
    let v = mvn_logpdf(&[0.0], &[0.0], &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!(close(v, oracle_logpdf(&[0.0], &[0.0], &DMatrix::from_element(1, 1, 1.0)), 1e-14));
    assert!((v + 0.5 * LN_2PI).abs() < 1e-7);
    let v = mvn_logpdf(&[1.0, -1.0], &[0.0, 0.0], &DMatrix::identity(2, 2)).unwrap();
    assert!((v + LN_2PI + 1.0).abs() < 1e-7);
}

#[test]
fn linear_algebra_matches_dense_oracles() {
    for seed in 0..100 {
        let Case { mut state, t, y } = random_case(seed, 50);
        let obs = Observations::new(&t, &y);
        let n = t.len();
        let k = cov_matrix(&state.expr, &t);
        let c = k.clone() + DMatrix::identity(n, n) * state.noise;

        let mean: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
        let got = mvn_logpdf(&y, &mean, &c).unwrap();
        let want = oracle_logpdf(&y, &mean, &c);
        assert!(close(got, want, 1e-8), "case {seed}: logpdf {got} vs {want}");

        let fit = Fit::new(&state.expr, state.noise, obs).unwrap();
        let ll = oracle_logpdf(&y, &vec![0.0; n], &c);
        assert!(close(fit.log_likelihood(), ll, 1e-8), "case {seed}: loglik");

        let inv = dense_inverse(&jittered(c.clone()));
        let yv = DVector::from_column_slice(&y);
        let mu = conditional_mean(&mut state, obs).unwrap();
        let mu_want = &k * (&inv * &yv);
        for i in 0..n {
            assert!(close(mu[i], mu_want[i], 1e-8), "case {seed}: conditional mean");
        }

        let query = [0.25, 0.5, 1.2];
        let pred = predictive(&mut state, obs, &query, true).unwrap();
        let ks = cross_cov_matrix(&state.expr, &t, &query);
        let kss = cov_matrix(&state.expr, &query);
        let m_want = ks.transpose() * (&inv * &yv);
        let cov_want = &kss - ks.transpose() * &inv * &ks;
        let cov = pred.covariance.as_ref().unwrap();
        for i in 0..3 {
            assert!(close(pred.mean[i], m_want[i], 1e-8), "case {seed}: predictive mean");
            for j in 0..3 {
                let scale = kss[(i, i)].max(kss[(j, j)]).max(1.0);
                assert!((cov[(i, j)] - cov_want[(i, j)]).abs() <= 1e-8 * scale, "case {seed}: cov");
            }
            let prior_var = eval_kernel(&state.expr, query[i], query[i]).unwrap() + state.noise;
            assert!(pred.observation_var()[i] <= prior_var + 1e-8);
        }
    }
}

#[test]
fn interpolation_and_limits() {
    let t = [0.1, 0.4, 0.7];
    let y = [0.5, -0.3, 0.8];
    let obs = Observations::new(&t, &y);
    let expr = KernelExpr::gamma_exp([1.0, 0.3, 2.0]);
    let mut tight = ModelState::new(expr.clone(), 1e-12);
    let p = predictive(&mut tight, obs, &[0.4], false).unwrap();
    assert!((p.mean[0] + 0.3).abs() < 1e-4);
    let mu = conditional_mean(&mut tight, obs).unwrap();
    assert!(mu.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-4));
    let mut loose = ModelState::new(expr.clone(), 1e12);
    assert!(conditional_mean(&mut loose, obs).unwrap().iter().all(|m| m.abs() < 1e-9));

    let mut prior_only = ModelState::new(expr, 0.3);
    let p = predictive(&mut prior_only, Observations::empty(), &[0.2, 0.9], false).unwrap();
    assert_eq!(p.mean, vec![0.0, 0.0]);
    assert!(p.observation_var().iter().all(|v| (v - 1.3).abs() < 1e-15));
}

#[test]
fn log_joint_recomposes_and_is_deterministic() {
    let cfg = PcfgConfig::default();
    for seed in 0..20 {
        let Case { mut state, t, y } = random_case(1000 + seed, 20);
        let obs = Observations::new(&t, &y);
        let n = t.len();
        let c = cov_matrix(&state.expr, &t) + DMatrix::identity(n, n) * state.noise;
        let parts = prior::log_prior(&state.expr, &cfg)
            + prior::log_noise_prior(state.noise).unwrap()
            + mvn_logpdf(&y, &vec![0.0; n], &c).unwrap();
        let a = log_joint(&state, obs, &cfg).unwrap();
        assert!(close(a, parts, 1e-12));
        let b = state.log_joint(obs, &cfg).unwrap();
        state.invalidate();
        let c2 = state.log_joint(obs, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(b.to_bits(), c2.to_bits());

        let empty = log_joint(&state, Observations::empty(), &cfg).unwrap();
        assert_eq!(empty, state.log_prior(&cfg).unwrap());
    }
}

#[test]
fn gradients_match_central_differences() {
    let cfg = PcfgConfig::default();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let Case { state, t, y } = random_case(5000 + seed, 25);
        let obs = Observations::new(&t, &y);
        let z = to_unconstrained(&state.expr, state.noise);
        let g = grad_log_joint_params(&state.expr, &z, obs).unwrap();
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (log_joint_unconstrained(&state.expr, &zp, obs, &cfg).unwrap()
                - log_joint_unconstrained(&state.expr, &zm, obs, &cfg).unwrap())
                / (2.0 * h);
            let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
            assert!(err < 1e-4, "case {seed} coordinate {i}: {} vs {fd} in {}", g[i], state.expr);
        }
    }
    println!("max relative gradient error {worst:e}");
}

#[test]
fn single_parameter_gradient_at_prior_mode() {
    let cfg = PcfgConfig::default();
    let t = [0.0, 0.3, 0.6, 1.0];
    let y = [0.2, 0.1, -0.4, 0.3];
    let obs = Observations::new(&t, &y);
    // Only the variance of a linear kernel with zero slope affects k.
    let expr = KernelExpr::linear([1.0, 1.0, 1.0]);
    let z = to_unconstrained(&expr, 1.0);
    let g = grad_log_joint_params(&expr, &z, obs).unwrap();
    let h = 1e-6;
    for i in 0..z.len() {
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp[i] += h;
        zm[i] -= h;
        let fd = (log_joint_unconstrained(&expr, &zp, obs, &cfg).unwrap()
            - log_joint_unconstrained(&expr, &zm, obs, &cfg).unwrap())
            / (2.0 * h);
        assert!((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0) < 1e-5);
    }
    // Periodic kernel evaluated only at zero lag does not depend on its period.
    let single = [0.5];
    let one = [0.7];
    let obs = Observations::new(&single, &one);
    let per = KernelExpr::periodic([1.0, 1.0, 0.3]);
    let g = grad_log_joint_params(&per, &to_unconstrained(&per, 0.5), obs).unwrap();
    let z = to_unconstrained(&per, 0.5);
    // Only the prior term -z remains for the period and lengthscale.
    assert!((g[1] + z[1]).abs() < 1e-12 && (g[2] + z[2]).abs() < 1e-12);
}

#[test]
fn gibbs_draws_follow_inverse_gamma() {
    assert_eq!(gibbs_noise_params(&[1.0, -1.0], &[0.0, 0.0]), (2.0, 2.0));
    assert_eq!(gibbs_noise_params(&[0.3, 0.4, 0.5], &[0.3, 0.4, 0.5]), (2.5, 1.0));

    let y = [0.3, -1.2, 0.8, 2.0, -0.1];
    let mu = [0.1, -0.9, 0.5, 1.1, 0.0];
    let (shape, scale) = gibbs_noise_params(&y, &mu);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 100_000;
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            let d = gibbs_noise(&y, &mu, &mut rng);
            assert!((d.log_density - prior::log_inverse_gamma(d.noise, shape, scale)).abs() < 1e-12);
            d.noise
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    // The inverse-gamma CDF is the upper regularized gamma Q(shape, scale / x).
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = gamma_ur(shape, scale / x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // Critical value of the KS statistic at level 0.01.
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}
