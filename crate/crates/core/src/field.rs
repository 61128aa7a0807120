//! Multimode complex-envelope fields on a shared time/frequency grid.
//!
//! The 2N mode envelopes are stored per mode as contiguous arrays of n_t
//! complex samples (n_t a power of two). Spectra use the unnormalized
//! forward DFT; the inverse applies the 1/n_t factor.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// 2N complex baseband envelopes plus the grid they live on.
#[derive(Debug, Clone)]
pub struct MultimodeField {
    modes: Vec<Vec<Complex64>>,
    /// Sample spacing, seconds.
    dt: f64,
    /// Optical center frequency, Hz (used for photon energy only).
    f0: f64,
}

impl MultimodeField {
    pub fn new(modes: Vec<Vec<Complex64>>, dt: f64, f0: f64) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Empty("field needs at least one mode".into()));
        }
        let n = modes[0].len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidDimension(format!(
                "n_t must be a nonzero power of two, got {n}"
            )));
        }
        if modes.iter().any(|m| m.len() != n) {
            return Err(Error::DimensionMismatch(
                "all mode arrays must share n_t".into(),
            ));
        }
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::Config(format!("invalid sample spacing {dt:.3e}")));
        }
        Ok(Self { modes, dt, f0 })
    }

    pub fn zeros(num_modes: usize, n_t: usize, dt: f64, f0: f64) -> Result<Self> {
        Self::new(vec![vec![Complex64::default(); n_t]; num_modes], dt, f0)
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_t(&self) -> usize {
        self.modes[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn mode(&self, i: usize) -> &[Complex64] {
        &self.modes[i]
    }

    pub fn mode_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.modes[i]
    }

    pub fn modes(&self) -> &[Vec<Complex64>] {
        &self.modes
    }

    pub fn modes_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.modes
    }

    /// Total energy in joules: sum over modes and samples of |a|^2 dt.
    pub fn total_energy(&self) -> f64 {
        self.dt
            * self
                .modes
                .iter()
                .map(|m| m.iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
    }

    /// Time-averaged total power in watts across all modes.
    pub fn total_power(&self) -> f64 {
        self.total_energy() / (self.dt * self.n_t() as f64)
    }

    /// Time-averaged power of one mode.
    pub fn mode_power(&self, i: usize) -> f64 {
        self.modes[i].iter().map(|z| z.norm_sqr()).sum::<f64>() / self.n_t() as f64
    }

    /// Forward spectra of every mode (unnormalized DFT).
    pub fn to_spectra(&self) -> Vec<Vec<Complex64>> {
        let fft = fft_plan(self.n_t(), FftDirection::Forward);
        self.modes
            .iter()
            .map(|m| {
                let mut buf = m.clone();
                fft.process(&mut buf);
                buf
            })
            .collect()
    }

    /// Rebuilds the field from forward spectra (applies 1/n_t).
    pub fn from_spectra(spectra: Vec<Vec<Complex64>>, dt: f64, f0: f64) -> Result<Self> {
        let mut modes = spectra;
        let n = modes.first().map(|m| m.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::Empty("empty spectra".into()));
        }
        let fft = fft_plan(n, FftDirection::Inverse);
        let scale = 1.0 / n as f64;
        for m in modes.iter_mut() {
            fft.process(m);
            for z in m.iter_mut() {
                *z *= scale;
            }
        }
        Self::new(modes, dt, f0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FftDirection {
    Forward,
    Inverse,
}

thread_local! {
    static FFT_PLANS: RefCell<HashMap<(usize, FftDirection), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

/// Cached FFT plan for the current thread.
pub fn fft_plan(n: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    FFT_PLANS.with(|cell| {
        let mut map = cell.borrow_mut();
        map.entry((n, dir))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                match dir {
                    FftDirection::Forward => planner.plan_fft_forward(n),
                    FftDirection::Inverse => planner.plan_fft_inverse(n),
                }
            })
            .clone()
    })
}

/// In-place forward FFT of a set of per-mode spectra buffers.
pub fn fft_forward_all(modes: &mut [Vec<Complex64>]) {
    let n = modes[0].len();
    let fft = fft_plan(n, FftDirection::Forward);
    for m in modes.iter_mut() {
        fft.process(m);
    }
}

/// In-place inverse FFT with 1/n normalization.
pub fn fft_inverse_all(modes: &mut [Vec<Complex64>]) {
    let n = modes[0].len();
    let fft = fft_plan(n, FftDirection::Inverse);
    let scale = 1.0 / n as f64;
    for m in modes.iter_mut() {
        fft.process(m);
        for z in m.iter_mut() {
            *z *= scale;
        }
    }
}

/// Baseband frequency of DFT bin `m` in Hz (fftfreq ordering).
pub fn bin_frequency(n: usize, dt: f64, m: usize) -> f64 {
    let df = 1.0 / (n as f64 * dt);
    if m < n / 2 {
        m as f64 * df
    } else {
        (m as f64 - n as f64) * df
    }
}

/// Angular frequencies (rad/s) for all bins in fftfreq ordering.
pub fn omega_grid(n: usize, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|m| 2.0 * std::f64::consts::PI * bin_frequency(n, dt, m))
        .collect()
}

/// Average power of one mode inside a band centered on `f_center` with
/// width `bandwidth`, computed from its unnormalized forward spectrum.
pub fn band_power(spectrum: &[Complex64], dt: f64, f_center: f64, bandwidth: f64) -> f64 {
    let n = spectrum.len();
    let mut acc = 0.0;
    for (m, z) in spectrum.iter().enumerate() {
        let f = bin_frequency(n, dt, m);
        if (f - f_center).abs() <= bandwidth / 2.0 {
            acc += z.norm_sqr();
        }
    }
    acc / (n as f64 * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(MultimodeField::new(vec![], 1e-12, 1.9e14).is_err());
        assert!(MultimodeField::new(vec![vec![Complex64::default(); 12]], 1e-12, 1.9e14).is_err());
        assert!(MultimodeField::new(
            vec![vec![Complex64::default(); 8], vec![Complex64::default(); 4]],
            1e-12,
            1.9e14
        )
        .is_err());
    }

    #[test]
    fn fft_round_trip() {
        let n = 256;
        let modes: Vec<Vec<Complex64>> = (0..4)
            .map(|k| {
                (0..n)
                    .map(|t| Complex64::new((t as f64 * 0.1 + k as f64).sin(), (t as f64 * 0.05).cos()))
                    .collect()
            })
            .collect();
        let f = MultimodeField::new(modes.clone(), 1e-12, 1.93e14).unwrap();
        let g = MultimodeField::from_spectra(f.to_spectra(), f.dt(), f.f0()).unwrap();
        for (a, b) in modes.iter().zip(g.modes()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_energy() {
        let n = 128;
        let modes: Vec<Vec<Complex64>> = vec![(0..n)
            .map(|t| Complex64::new((t as f64 * 0.3).sin(), 0.2))
            .collect()];
        let f = MultimodeField::new(modes, 2e-12, 1.93e14).unwrap();
        let spectra = f.to_spectra();
        let spec_energy: f64 =
            spectra[0].iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64 * f.dt();
        assert!((spec_energy / f.total_energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_tone_band_power() {
        let n = 1024;
        let dt = 1e-12;
        let df = 1.0 / (n as f64 * dt);
        let f_tone = 37.0 * df;
        let amp = 0.7;
        let modes: Vec<Vec<Complex64>> = vec![(0..n)
            .map(|t| {
                Complex64::from_polar(amp, 2.0 * std::f64::consts::PI * f_tone * t as f64 * dt)
            })
            .collect()];
        let f = MultimodeField::new(modes, dt, 1.93e14).unwrap();
        let spectra = f.to_spectra();
        let p = band_power(&spectra[0], dt, f_tone, 4.0 * df);
        assert!((p - amp * amp).abs() < 1e-12);
        let p_out = band_power(&spectra[0], dt, -f_tone, 4.0 * df);
        assert!(p_out < 1e-20);
    }

    #[test]
    fn omega_ordering() {
        let n = 8;
        let dt = 0.5;
        let w = omega_grid(n, dt);
        let df = 1.0 / (n as f64 * dt);
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 2.0 * std::f64::consts::PI * df).abs() < 1e-15);
        assert!(w[n / 2] < 0.0);
        assert!((w[n - 1] + 2.0 * std::f64::consts::PI * df).abs() < 1e-12);
    }
}
