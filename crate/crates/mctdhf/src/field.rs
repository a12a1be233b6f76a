//! Laser pulse: a two-cycle triangular-envelope electric field and the
//! closed-form vector potential entering the velocity-gauge coupling.
//!
//! E(t) = E0 f(t) sin(wt) with f = wt/2pi on the first cycle and
//! (4pi - wt)/2pi on the second; A(t) = -integral of E from 0 to t,
//! integrated analytically so the propagator sees no quadrature noise.

use crate::mesh::MAX_DIM;

/// Speed of light in atomic units.
pub const SPEED_OF_LIGHT_AU: f64 = 137.035999;
/// Bohr radius in nanometers.
pub const NM_PER_BOHR: f64 = 0.052917721067;
/// Atomic unit of intensity in W/cm^2 (E0 = sqrt(I / this)).
pub const INTENSITY_AU_WCM2: f64 = 3.50944758e16;

/// Waveforms the driver can couple to the electrons. Implement this to plug
/// in a different pulse shape.
pub trait FieldSource: Sync {
    fn electric_field(&self, t: f64) -> [f64; MAX_DIM];
    fn vector_potential(&self, t: f64) -> [f64; MAX_DIM];
    /// Time after which both E and A vanish identically.
    fn duration(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct Pulse {
    pub wavelength_nm: f64,
    pub peak_intensity_wcm2: f64,
    pub polarization: [f64; MAX_DIM],
    /// Carrier angular frequency, a.u.
    pub omega: f64,
    /// Peak field, a.u.
    pub e0: f64,
}

impl Pulse {
    pub fn new(wavelength_nm: f64, peak_intensity_wcm2: f64, polarization: &[f64]) -> Self {
        assert!(wavelength_nm > 0.0 && peak_intensity_wcm2 >= 0.0);
        let mut pol = [0.0; MAX_DIM];
        pol[..polarization.len()].copy_from_slice(polarization);
        let norm = pol.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 0.0, "polarization must be a nonzero vector");
        for p in pol.iter_mut() {
            *p /= norm;
        }
        let wavelength_au = wavelength_nm / NM_PER_BOHR;
        let omega = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_AU / wavelength_au;
        let e0 = (peak_intensity_wcm2 / INTENSITY_AU_WCM2).sqrt();
        Pulse { wavelength_nm, peak_intensity_wcm2, polarization: pol, omega, e0 }
    }

    /// Scalar field amplitude E0 f(t) sin(wt).
    fn scalar_field(&self, t: f64) -> f64 {
        let wt = self.omega * t;
        let two_pi = 2.0 * std::f64::consts::PI;
        let env = if wt < 0.0 || wt > 2.0 * two_pi {
            0.0
        } else if wt <= two_pi {
            wt / two_pi
        } else {
            (2.0 * two_pi - wt) / two_pi
        };
        self.e0 * env * wt.sin()
    }

    /// Scalar A(t) = -int_0^t E, piecewise analytic.
    fn scalar_potential(&self, t: f64) -> f64 {
        let w = self.omega;
        let wt = w * t;
        let pi = std::f64::consts::PI;
        let two_pi = 2.0 * pi;
        if wt <= 0.0 {
            return 0.0;
        }
        if wt <= two_pi {
            // -E0/(2 pi w) (sin wt - wt cos wt)
            return -self.e0 / (two_pi * w) * (wt.sin() - wt * wt.cos());
        }
        if wt <= 2.0 * two_pi {
            // A(2pi/w) = E0/w, then the down-ramp integral
            return self.e0 / w
                - self.e0 / (two_pi * w) * ((wt - 2.0 * two_pi) * wt.cos() - wt.sin() + two_pi);
        }
        0.0
    }
}

impl FieldSource for Pulse {
    fn electric_field(&self, t: f64) -> [f64; MAX_DIM] {
        let e = self.scalar_field(t);
        let mut out = [0.0; MAX_DIM];
        for k in 0..MAX_DIM {
            out[k] = e * self.polarization[k];
        }
        out
    }

    fn vector_potential(&self, t: f64) -> [f64; MAX_DIM] {
        let a = self.scalar_potential(t);
        let mut out = [0.0; MAX_DIM];
        for k in 0..MAX_DIM {
            out[k] = a * self.polarization[k];
        }
        out
    }

    fn duration(&self) -> f64 {
        4.0 * std::f64::consts::PI / self.omega
    }
}

/// Field-free stand-in.
#[derive(Debug, Clone, Copy)]
pub struct NoField;

impl FieldSource for NoField {
    fn electric_field(&self, _t: f64) -> [f64; MAX_DIM] {
        [0.0; MAX_DIM]
    }
    fn vector_potential(&self, _t: f64) -> [f64; MAX_DIM] {
        [0.0; MAX_DIM]
    }
    fn duration(&self) -> f64 {
        0.0
    }
}
