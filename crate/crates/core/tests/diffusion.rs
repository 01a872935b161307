use lorid_core::diffusion::{diffuse, one_shot_recover, reverse_skip, GaussianOracleDenoiser, Schedule};
use lorid_core::linalg::Cholesky;
use lorid_core::rng::{derived, seeded, standard_normal};
use lorid_core::{Denoiser, Matrix, Tensor};

#[test]
fn diffuse_matches_forward_marginal() {
    let s = Schedule::default();
    let x0 = Tensor::vector(vec![1.5, -0.5]);
    let t = 300;
    let ab = s.alpha_bar(t);
    let n = 200_000;
    let mut rng = seeded(3);
    let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let (xt, _) = diffuse(&x0, t, &s, &mut rng).unwrap();
        for i in 0..2 {
            sum[i] += xt.data()[i];
            sq[i] += xt.data()[i] * xt.data()[i];
        }
    }
    for i in 0..2 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        let se_mean = ((1.0 - ab) / n as f64).sqrt();
        assert!((mean - ab.sqrt() * x0.data()[i]).abs() < 5.0 * se_mean, "mean {mean}");
        assert!((var / (1.0 - ab) - 1.0).abs() < 0.01, "var {var}");
    }
}

#[test]
fn true_noise_gives_exact_recovery() {
    struct Fixed(Tensor);
    impl Denoiser for Fixed {
        fn predict_eps(&self, _: &Tensor, _: usize) -> lorid_core::Result<Tensor> {
            Ok(self.0.clone())
        }
    }
    let s = Schedule::default();
    let x0 = Tensor::vector(vec![0.25, -1.0, 3.0]);
    for t in [1, 10, 500, 1000] {
        let (xt, eps) = diffuse(&x0, t, &s, &mut seeded(t as u64)).unwrap();
        let back = one_shot_recover(&xt, t, &Fixed(eps), &s).unwrap();
        assert!(back.sub(&x0).unwrap().max_abs() < 1e-9 * (1.0 / s.alpha_bar(t).sqrt()), "t = {t}");
    }
}

// Least-squares regression of eps on x_t over Monte Carlo draws, compared
// with the closed-form conditional mean.
#[test]
fn anisotropic_oracle_matches_regression() {
    let s = Schedule::default();
    let t = 150;
    let ab = s.alpha_bar(t);
    let oracle = GaussianOracleDenoiser::diagonal(&[2], vec![0.0; 2], vec![4.0, 1.0], s.clone()).unwrap();
    let draw = |seed: u64, n: usize| {
        let mut rng = derived(seed, 0);
        (0..n)
            .map(|_| {
                let x0 = [2.0 * standard_normal(&mut rng), standard_normal(&mut rng)];
                let e = [standard_normal(&mut rng), standard_normal(&mut rng)];
                let xt = [ab.sqrt() * x0[0] + (1.0 - ab).sqrt() * e[0], ab.sqrt() * x0[1] + (1.0 - ab).sqrt() * e[1]];
                (xt, e)
            })
            .collect::<Vec<_>>()
    };
    let train = draw(1, 200_000);
    let mut xtx = Matrix::zeros(2, 2);
    let mut xte = Matrix::zeros(2, 2);
    for (x, e) in &train {
        for i in 0..2 {
            for j in 0..2 {
                xtx.set(i, j, xtx.get(i, j) + x[i] * x[j]);
                xte.set(i, j, xte.get(i, j) + x[i] * e[j]);
            }
        }
    }
    let chol = Cholesky::factor(&xtx).unwrap();
    let b0 = chol.solve(&xte.column(0));
    let b1 = chol.solve(&xte.column(1));
    let test = draw(2, 200_000);
    let (mut mse_reg, mut mse_oracle) = (0.0, 0.0);
    for (x, e) in &test {
        let reg = [x[0] * b0[0] + x[1] * b0[1], x[0] * b1[0] + x[1] * b1[1]];
        let orc = oracle.predict_eps(&Tensor::vector(x.to_vec()), t).unwrap();
        for i in 0..2 {
            mse_reg += (e[i] - reg[i]).powi(2);
            mse_oracle += (e[i] - orc.data()[i]).powi(2);
        }
    }
    let rel = (mse_oracle / mse_reg - 1.0).abs();
    assert!(rel < 0.02, "oracle {mse_oracle} vs regression {mse_reg}");
    // Closed form: per-dimension coefficient sqrt(1-ab) / (ab v + 1 - ab).
    for (b, v) in [(b0[0], 4.0), (b1[1], 1.0)] {
        let want = (1.0 - ab).sqrt() / (ab * v + 1.0 - ab);
        assert!((b - want).abs() < 0.02 * want, "{b} vs {want}");
    }
}

#[test]
fn skip_sampler_tracks_single_steps() {
    let s = Schedule::default();
    let d = 8;
    let oracle = GaussianOracleDenoiser::standard(&[d], s.clone());
    let t = 100;
    let trials = 4000;
    let mut err = [0.0; 2];
    for i in 0..trials {
        let mut rng = derived(9, i);
        let x0 = Tensor::vector((0..d).map(|_| standard_normal(&mut rng)).collect());
        let (xt, _) = diffuse(&x0, t, &s, &mut rng).unwrap();
        for (slot, k) in [(0, 1), (1, 10)] {
            let y = reverse_skip(&xt, t, k, &oracle, &s).unwrap();
            err[slot] += y.sub(&x0).unwrap().squared_norm();
        }
    }
    let ratio = err[1] / err[0];
    assert!((ratio - 1.0).abs() < 0.10, "k=10 / k=1 error ratio {ratio}");
}
