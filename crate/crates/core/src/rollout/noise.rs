//! Colored (power-law) noise by frequency-domain shaping.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// `steps x dims` matrix whose columns are independent sequences with power
/// spectrum proportional to `1 / f^beta`, each shifted and scaled to exactly
/// zero sample mean and unit sample variance.
///
/// Every positive frequency bin receives a complex Gaussian coefficient scaled
/// by `f^(-beta/2)`; the DC bin is zero and the Nyquist bin (even lengths) is
/// real. The inverse FFT of the Hermitian spectrum gives the time series.
/// Column `c` draws from ChaCha8 stream `c` of `seed`.
pub fn colored_noise_sequence(beta: f64, steps: usize, dims: usize, seed: u64) -> Result<Array2<f64>> {
    if steps < 2 {
        return Err(Error::Parameter(format!("noise needs at least 2 steps, got {steps}")));
    }
    if dims < 1 {
        return Err(Error::Parameter("noise needs at least one dimension".into()));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Parameter(format!("noise exponent must be >= 0, got {beta}")));
    }

    let n = steps;
    let half = n / 2;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = Array2::zeros((n, dims));
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];

    for c in 0..dims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);

        spectrum.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for k in 1..=half {
            let f = k as f64 / n as f64;
            let amp = f.powf(-beta / 2.0);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let coef = if n % 2 == 0 && k == half {
                Complex::new(re * amp * std::f64::consts::SQRT_2, 0.0)
            } else {
                Complex::new(re * amp, im * amp)
            };
            spectrum[k] = coef;
            if k != n - k {
                spectrum[n - k] = coef.conj();
            }
        }
        ifft.process(&mut spectrum);

        let mean = spectrum.iter().map(|z| z.re).sum::<f64>() / n as f64;
        let var = spectrum.iter().map(|z| (z.re - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(Error::Parameter("noise sequence has zero variance".into()));
        }
        let sd = var.sqrt();
        for (t, z) in spectrum.iter().enumerate() {
            out[[t, c]] = (z.re - mean) / sd;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_autocorr(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        cov / var
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let m = colored_noise_sequence(0.0, 10_000, 2, 3).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = m.column(c).to_vec();
            assert!(lag1_autocorr(&col).abs() < 0.05);
        }
    }

    #[test]
    fn brown_noise_is_strongly_correlated() {
        let m = colored_noise_sequence(2.0, 10_000, 1, 3).unwrap();
        let col: Vec<f64> = m.column(0).to_vec();
        assert!(lag1_autocorr(&col) > 0.9);
    }

    #[test]
    fn normalized_moments() {
        for beta in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let m = colored_noise_sequence(beta, 1000, 3, 1).unwrap();
            for col in m.columns() {
                let mean = col.mean().unwrap();
                let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                assert!(mean.abs() < 0.05);
                assert!((var - 1.0).abs() < 0.1);
            }
        }
    }

    #[test]
    fn deterministic_and_column_independent() {
        let a = colored_noise_sequence(1.0, 257, 2, 42).unwrap();
        let b = colored_noise_sequence(1.0, 257, 2, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.column(0), a.column(1));
        let c = colored_noise_sequence(1.0, 257, 2, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_short_sequences() {
        assert!(colored_noise_sequence(1.0, 1, 1, 0).is_err());
        assert!(colored_noise_sequence(1.0, 2, 1, 0).is_ok());
        assert!(colored_noise_sequence(-1.0, 10, 1, 0).is_err());
        assert!(colored_noise_sequence(1.0, 10, 0, 0).is_err());
    }

    /// Least-squares slope of log power against log frequency over the middle
    /// two decades of the periodogram.
    fn spectral_slope(x: &[f64]) -> f64 {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
        let f_lo = 1.0 / n as f64;
        let f_hi = 0.5;
        let centre = (f_lo * f_hi).sqrt();
        let (lo, hi) = (centre / 10.0, centre * 10.0);
        let pts: Vec<(f64, f64)> = (1..n / 2)
            .map(|k| (k as f64 / n as f64, buf[k].norm_sqr()))
            .filter(|&(f, _)| f >= lo && f <= hi)
            .map(|(f, p)| (f.ln(), p.ln()))
            .collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn spectral_slope_matches_exponent() {
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let m = colored_noise_sequence(beta, 100_000, 1, 17).unwrap();
            let slope = spectral_slope(&m.column(0).to_vec());
            assert!((slope + beta).abs() < 0.3, "beta {beta}: slope {slope}");
        }
    }
}
