//! High-harmonic spectra from recorded dipole traces.

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("need at least 8 uniform samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples are not uniformly spaced (dt varies by {0:e})")]
    NonUniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    None,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Dipole,
    Velocity,
    /// Second time derivative of the dipole by central differences.
    AccelerationByDifferentiation,
}

/// intensity(w_k) = |FT[w(t) q(t)]|^2, normalized so the maximum is one.
/// `trace` carries (t, value) pairs on a uniform grid; for the acceleration
/// quantity the value column is the dipole and is differentiated twice.
pub fn hhg_spectrum(
    trace: &[(f64, f64)],
    window: Window,
    quantity: Quantity,
) -> Result<Vec<(f64, f64)>, SpectrumError> {
    let n = trace.len();
    if n < 8 {
        return Err(SpectrumError::TooFewSamples(n));
    }
    let dt = trace[1].0 - trace[0].0;
    let mut worst = 0.0f64;
    for w in trace.windows(2) {
        worst = worst.max(((w[1].0 - w[0].0) - dt).abs());
    }
    if worst > 1e-9 * dt.abs().max(1e-300) {
        return Err(SpectrumError::NonUniform(worst));
    }

    let signal: Vec<f64> = match quantity {
        Quantity::Dipole | Quantity::Velocity => trace.iter().map(|&(_, v)| v).collect(),
        Quantity::AccelerationByDifferentiation => {
            let d: Vec<f64> = trace.iter().map(|&(_, v)| v).collect();
            let mut acc = vec![0.0; n];
            for i in 1..n - 1 {
                acc[i] = (d[i + 1] - 2.0 * d[i] + d[i - 1]) / (dt * dt);
            }
            // one-sided copies at the ends
            acc[0] = acc[1];
            acc[n - 1] = acc[n - 2];
            acc
        }
    };

    let mut buf: Vec<Complex64> = signal
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = match window {
                Window::None => 1.0,
                Window::Hann => {
                    let x = std::f64::consts::PI * i as f64 / (n as f64 - 1.0);
                    x.sin() * x.sin()
                }
            };
            Complex64::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let n_freq = n / 2 + 1;
    let domega = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let mut out: Vec<(f64, f64)> =
        (0..n_freq).map(|k| (k as f64 * domega, buf[k].norm_sqr())).collect();
    let peak = out.iter().map(|&(_, v)| v).fold(0.0f64, f64::max);
    if peak > 0.0 {
        for (_, v) in out.iter_mut() {
            *v /= peak;
        }
    }
    Ok(out)
}
