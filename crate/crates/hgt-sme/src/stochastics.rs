//! Seedable random-number generation and the sampling kernels used by the
//! Gibbs sampler.
//!
//! Parameterization conventions, used everywhere in this crate:
//!
//! * `Normal(mean, variance)` — variance, not standard deviation.
//! * `Gamma(shape, rate)` — density ∝ x^(shape−1) exp(−rate·x), mean
//!   shape/rate.
//! * `InverseGamma(shape, scale)` — x ~ IG(a, b) iff 1/x ~ Gamma(a, rate=b),
//!   mean b/(a−1) for a > 1.
//!
//! Streams are derived from a `(seed, stream id)` pair so replicate studies
//! and parallel chains get independent, reproducible sequences.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// A deterministic, single-owner random stream.
///
/// Two streams built from the same `(seed, stream)` pair produce bitwise
/// identical draw sequences; streams with different ids never share state.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            rng: ChaCha12Rng::seed_from_u64(seed),
            seed,
        }
    }

    /// Independent stream derived from this stream's seed and an id.
    pub fn substream(&self, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id.wrapping_add(1));
        RngStream {
            rng,
            seed: self.seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Draw from Normal(mean, variance). Zero variance returns the mean.
    pub fn draw_normal(&mut self, mean: f64, variance: f64) -> Result<f64> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(Error::Domain(format!(
                "draw_normal requires variance >= 0, got {variance}"
            )));
        }
        if variance == 0.0 {
            return Ok(mean);
        }
        Ok(mean + variance.sqrt() * self.standard_normal())
    }

    /// Draw x ~ Normal(Q⁻¹b, Q⁻¹) given the precision matrix Q and linear
    /// term b, via one Cholesky factorization and triangular solves. Q is
    /// never inverted explicitly.
    pub fn draw_mvn_precision(
        &mut self,
        linear_term: &DVector<f64>,
        precision: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        let n = linear_term.len();
        if precision.nrows() != n || precision.ncols() != n {
            return Err(Error::Domain(format!(
                "draw_mvn_precision: precision is {}x{}, linear term has length {}",
                precision.nrows(),
                precision.ncols(),
                n
            )));
        }
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            Error::Numerical(format!(
                "draw_mvn_precision: precision matrix ({n}x{n}) is not positive-definite"
            ))
        })?;
        // mean solves Q mu = b
        let mean = chol.solve(linear_term);
        // z ~ N(0, I); solve L' x = z so that Cov(x) = (L L')^{-1} = Q^{-1}
        let z = DVector::from_fn(n, |_, _| self.standard_normal());
        let x = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| {
                Error::Numerical("draw_mvn_precision: singular triangular factor".into())
            })?;
        Ok(mean + x)
    }

    /// Draw from Gamma(shape, rate) with density ∝ x^(shape−1) exp(−rate·x).
    pub fn draw_gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        if !(shape > 0.0) || !(rate > 0.0) {
            return Err(Error::Domain(format!(
                "draw_gamma requires shape > 0 and rate > 0, got shape={shape}, rate={rate}"
            )));
        }
        let dist = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Domain(format!("draw_gamma({shape}, {rate}): {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    /// Draw from Beta(a, b); strictly inside (0, 1).
    pub fn draw_beta(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::Domain(format!(
                "draw_beta requires a > 0 and b > 0, got a={a}, b={b}"
            )));
        }
        let dist =
            Beta::new(a, b).map_err(|e| Error::Domain(format!("draw_beta({a}, {b}): {e}")))?;
        loop {
            let x = dist.sample(&mut self.rng);
            // Extreme shape parameters can round to the boundary; the logit
            // transform downstream needs interior values.
            if x > 0.0 && x < 1.0 {
                return Ok(x);
            }
        }
    }

    /// Draw from InverseGamma(shape, scale): the reciprocal of a
    /// Gamma(shape, rate = scale) draw.
    pub fn draw_inverse_gamma(&mut self, shape: f64, scale: f64) -> Result<f64> {
        if !(shape > 0.0) || !(scale > 0.0) {
            return Err(Error::Domain(format!(
                "draw_inverse_gamma requires shape > 0 and scale > 0, got shape={shape}, scale={scale}"
            )));
        }
        let g = self.draw_gamma(shape, scale)?;
        Ok(1.0 / g)
    }

    /// Poisson draw; mean 0 returns 0.
    pub fn draw_poisson(&mut self, mean: f64) -> Result<u64> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::Domain(format!(
                "draw_poisson requires a finite mean >= 0, got {mean}"
            )));
        }
        if mean == 0.0 {
            return Ok(0);
        }
        let dist = Poisson::new(mean)
            .map_err(|e| Error::Domain(format!("draw_poisson({mean}): {e}")))?;
        Ok(dist.sample(&mut self.rng) as u64)
    }

    /// Uniform in [0, 1); used by the pseudo-data generators.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn normal_zero_variance_is_degenerate() {
        let mut rng = RngStream::new(1);
        assert_eq!(rng.draw_normal(5.0, 0.0).unwrap(), 5.0);
    }

    #[test]
    fn normal_rejects_negative_variance() {
        let mut rng = RngStream::new(1);
        assert!(rng.draw_normal(0.0, -1.0).is_err());
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(7);
        let std: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_normal(0.0, 1.0).unwrap())
            .collect();
        let (m, _) = moments(&std);
        assert!(m.abs() < 0.004, "mean {m}");
        let wide: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_normal(0.0, 4.0).unwrap())
            .collect();
        let (_, v) = moments(&wide);
        assert!((v - 4.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngStream::new(11);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_gamma(4.0, 2.0).unwrap())
            .collect();
        let (m, v) = moments(&draws);
        assert!((m - 2.0).abs() < 0.01, "mean {m}");
        assert!((v - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn gamma_shape_one_matches_exponential() {
        // KS distance between Gamma(1, lambda) draws and the Exponential(lambda) CDF.
        let lambda = 1.7;
        let mut rng = RngStream::new(13);
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| rng.draw_gamma(1.0, lambda).unwrap())
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-lambda * x).exp();
                let lo = (f - i as f64 / n).abs();
                let hi = (f - (i + 1) as f64 / n).abs();
                lo.max(hi)
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.005, "KS distance {ks}");
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut rng = RngStream::new(1);
        assert!(rng.draw_gamma(0.0, 1.0).is_err());
        assert!(rng.draw_gamma(1.0, -1.0).is_err());
    }

    #[test]
    fn beta_moments_and_support() {
        let mut rng = RngStream::new(17);
        let sym: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_beta(2.0, 2.0).unwrap())
            .collect();
        let (m, _) = moments(&sym);
        assert!((m - 0.5).abs() < 0.002, "mean {m}");
        let skew: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_beta(1.0, 3.0).unwrap())
            .collect();
        let (m, _) = moments(&skew);
        assert!((m - 0.25).abs() < 0.002, "mean {m}");
        assert!(skew.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(rng.draw_beta(-1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_gamma_mean_and_support() {
        let mut rng = RngStream::new(19);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_inverse_gamma(3.0, 2.0).unwrap())
            .collect();
        let (m, _) = moments(&draws);
        // analytic mean scale/(shape-1) = 1
        assert!((m - 1.0).abs() < 0.01, "mean {m}");
        assert!(draws.iter().all(|&x| x > 0.0));
        assert!(rng.draw_inverse_gamma(1.0, 0.0).is_err());
    }

    #[test]
    fn inverse_gamma_reciprocal_is_gamma() {
        // KS of 1/IG(a, b) draws against the Gamma(a, rate=b) CDF.
        let (a, b) = (2.5, 1.5);
        let mut rng = RngStream::new(23);
        let mut recips: Vec<f64> = (0..100_000)
            .map(|_| 1.0 / rng.draw_inverse_gamma(a, b).unwrap())
            .collect();
        recips.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = recips.len() as f64;
        let gamma_cdf = |x: f64| statrs::function::gamma::gamma_lr(a, b * x);
        let ks = recips
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = gamma_cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.005, "KS distance {ks}");
    }

    #[test]
    fn poisson_degenerate_and_moments() {
        let mut rng = RngStream::new(29);
        assert_eq!(rng.draw_poisson(0.0).unwrap(), 0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| rng.draw_poisson(7.3).unwrap() as f64)
            .collect();
        let (m, v) = moments(&draws);
        assert!((m - 7.3).abs() < 0.01, "mean {m}");
        assert!((v - 7.3).abs() < 0.03, "variance {v}");
        assert!(rng.draw_poisson(-1.0).is_err());
        assert!(rng.draw_poisson(f64::NAN).is_err());
    }

    #[test]
    fn mvn_precision_identity() {
        let mut rng = RngStream::new(31);
        let q = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![3.0, -1.0]);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut sum_sq = DVector::zeros(2);
        let mut cross = 0.0;
        for _ in 0..n {
            let x = rng.draw_mvn_precision(&b, &q).unwrap();
            cross += (x[0] - 3.0) * (x[1] + 1.0);
            sum += &x;
            sum_sq += x.map(|v| v * v);
        }
        let mean = &sum / n as f64;
        assert_relative_eq!(mean[0], 3.0, epsilon = 0.02);
        assert_relative_eq!(mean[1], -1.0, epsilon = 0.02);
        let var0 = sum_sq[0] / n as f64 - mean[0] * mean[0];
        let var1 = sum_sq[1] / n as f64 - mean[1] * mean[1];
        assert_relative_eq!(var0, 1.0, epsilon = 0.03);
        assert_relative_eq!(var1, 1.0, epsilon = 0.03);
        assert!((cross / n as f64).abs() < 0.02);
    }

    #[test]
    fn mvn_precision_diagonal() {
        let mut rng = RngStream::new(37);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let b = DVector::from_vec(vec![2.0, 4.0]);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut sum_sq = DVector::zeros(2);
        for _ in 0..n {
            let x = rng.draw_mvn_precision(&b, &q).unwrap();
            sum += &x;
            sum_sq += x.map(|v| v * v);
        }
        let mean = &sum / n as f64;
        assert_relative_eq!(mean[0], 1.0, epsilon = 0.02);
        assert_relative_eq!(mean[1], 1.0, epsilon = 0.02);
        let var0 = sum_sq[0] / n as f64 - mean[0] * mean[0];
        let var1 = sum_sq[1] / n as f64 - mean[1] * mean[1];
        assert_relative_eq!(var0, 0.5, epsilon = 0.02);
        assert_relative_eq!(var1, 0.25, epsilon = 0.01);
    }

    #[test]
    fn mvn_precision_correlated_mean() {
        // Q = [[2,-1],[-1,2]], b = (1,1): solving Q mu = b by elimination
        // gives mu = (1, 1).
        let mut rng = RngStream::new(41);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        for _ in 0..n {
            sum += rng.draw_mvn_precision(&b, &q).unwrap();
        }
        let mean = &sum / n as f64;
        assert_relative_eq!(mean[0], 1.0, epsilon = 0.02);
        assert_relative_eq!(mean[1], 1.0, epsilon = 0.02);
    }

    #[test]
    fn mvn_precision_covariance_matches_inverse() {
        // Empirical covariance of draws vs Q^{-1}, 5x5 case, within 5 SEs.
        let mut rng = RngStream::new(43);
        let n_dim = 5;
        let a = DMatrix::from_fn(n_dim, n_dim, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4);
        let q = &a * a.transpose() + DMatrix::identity(n_dim, n_dim);
        let b = DVector::zeros(n_dim);
        let cov_true = q.clone().try_inverse().unwrap();
        let n = 100_000;
        let mut sum = DVector::zeros(n_dim);
        let mut outer = DMatrix::zeros(n_dim, n_dim);
        for _ in 0..n {
            let x = rng.draw_mvn_precision(&b, &q).unwrap();
            outer += &x * x.transpose();
            sum += x;
        }
        let mean = &sum / n as f64;
        let cov_emp = outer / n as f64 - &mean * mean.transpose();
        for i in 0..n_dim {
            for j in 0..n_dim {
                // SE of a sample covariance entry is about
                // sqrt((Cii Cjj + Cij^2)/n)
                let se = ((cov_true[(i, i)] * cov_true[(j, j)] + cov_true[(i, j)].powi(2))
                    / n as f64)
                    .sqrt();
                assert!(
                    (cov_emp[(i, j)] - cov_true[(i, j)]).abs() < 5.0 * se,
                    "cov[{i},{j}] = {} vs {}",
                    cov_emp[(i, j)],
                    cov_true[(i, j)]
                );
            }
        }
    }

    #[test]
    fn mvn_precision_rejects_non_spd() {
        let mut rng = RngStream::new(1);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let b = DVector::zeros(2);
        match rng.draw_mvn_precision(&b, &q) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("positive-definite")),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn equal_seeds_reproduce_bitwise() {
        let mut a = RngStream::new(99);
        let mut b = RngStream::new(99);
        for _ in 0..100 {
            assert_eq!(
                a.draw_normal(0.0, 1.0).unwrap().to_bits(),
                b.draw_normal(0.0, 1.0).unwrap().to_bits()
            );
            assert_eq!(a.draw_poisson(3.0).unwrap(), b.draw_poisson(3.0).unwrap());
        }
    }

    #[test]
    fn substreams_are_independent_and_reproducible() {
        let root = RngStream::new(5);
        let mut s1 = root.substream(1);
        let mut s1b = root.substream(1);
        let mut s2 = root.substream(2);
        let a: Vec<u64> = (0..50)
            .map(|_| s1.draw_normal(0.0, 1.0).unwrap().to_bits())
            .collect();
        let b: Vec<u64> = (0..50)
            .map(|_| s1b.draw_normal(0.0, 1.0).unwrap().to_bits())
            .collect();
        let c: Vec<u64> = (0..50)
            .map(|_| s2.draw_normal(0.0, 1.0).unwrap().to_bits())
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
