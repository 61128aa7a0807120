//! Waveplate model of mode-dependent loss (MDL) and spatial mode dispersion
//! (SMD) for strongly coupled 2N-mode transmission.
//!
//! A link is a concatenation of independent sections. Each section applies
//! random mode coupling (a pair of Haar unitaries), per-mode log gains that
//! sum to zero, and per-mode group delays that average to zero. The system
//! MDL of the composed transfer matrix is read off its singular values.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// 10/ln(10): converts nepers of power gain to dB.
pub const NEPER_TO_DB: f64 = 4.342944819032518;

type CMatrix = DMatrix<Complex64>;

/// Per-mode log-power gains (nepers), trace-free by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GainVector {
    g: Vec<f64>,
}

impl GainVector {
    /// Validates the trace-free convention: the entries must sum to zero
    /// within 1e-12 (the mode-averaged gain is stored separately).
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if g.is_empty() || g.len() % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "gain vector length must be 2N with N >= 1, got {}",
                g.len()
            )));
        }
        let sum: f64 = g.iter().sum();
        if sum.abs() > 1e-12 {
            return Err(Error::Config(format!(
                "gain vector is not trace-free: sum = {sum:.3e}"
            )));
        }
        Ok(Self { g })
    }

    /// Alternating-sign gains g_i = (-1)^i * sigma for i = 1..2N.
    pub fn alternating(sigma: f64, num_modes: usize) -> Result<Self> {
        let g = (1..=num_modes)
            .map(|i| if i % 2 == 1 { -sigma } else { sigma })
            .collect();
        Self::new(g)
    }

    pub fn zeros(num_modes: usize) -> Result<Self> {
        Self::new(vec![0.0; num_modes])
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    pub fn is_zero(&self) -> bool {
        self.g.iter().all(|&x| x == 0.0)
    }
}

/// Per-mode group delays in seconds, zero-mean by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayVector {
    tau: Vec<f64>,
}

impl DelayVector {
    /// Validates the zero-mean convention within 1e-18 s.
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.is_empty() || tau.len() % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "delay vector length must be 2N with N >= 1, got {}",
                tau.len()
            )));
        }
        let mean: f64 = tau.iter().sum::<f64>() / tau.len() as f64;
        if mean.abs() > 1e-18 {
            return Err(Error::Config(format!(
                "delay vector is not zero-mean: mean = {mean:.3e} s"
            )));
        }
        Ok(Self { tau })
    }

    pub fn zeros(num_modes: usize) -> Result<Self> {
        Self::new(vec![0.0; num_modes])
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tau
    }

    pub fn is_zero(&self) -> bool {
        self.tau.iter().all(|&x| x == 0.0)
    }
}

/// One waveplate/MDL element: M(w) = e^{g_bar/2} V diag(e^{g_i/2 - j w tau_i}) U^H.
#[derive(Debug, Clone)]
pub struct CouplingSection {
    v: CMatrix,
    u: CMatrix,
    gains: GainVector,
    delays: DelayVector,
    mean_gain: f64,
}

impl CouplingSection {
    /// Builds a section from explicit parts, checking unitarity of V and U
    /// within 1e-12 Frobenius norm.
    pub fn from_parts(
        v: CMatrix,
        u: CMatrix,
        gains: GainVector,
        delays: DelayVector,
        mean_gain: f64,
    ) -> Result<Self> {
        let dim = gains.len();
        if delays.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "gains ({}) and delays ({}) lengths differ",
                dim,
                delays.len()
            )));
        }
        for (name, m) in [("V", &v), ("U", &u)] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let defect = unitarity_defect(m);
            if defect > 1e-12 {
                return Err(Error::Config(format!(
                    "{name} is not unitary: ||U^H U - I||_F = {defect:.3e}"
                )));
            }
        }
        Ok(Self {
            v,
            u,
            gains,
            delays,
            mean_gain,
        })
    }

    /// Section with identity coupling; useful for tests and pure-delay plates.
    pub fn identity_coupling(gains: GainVector, delays: DelayVector, mean_gain: f64) -> Result<Self> {
        let dim = gains.len();
        let eye = CMatrix::identity(dim, dim);
        Self::from_parts(eye.clone(), eye, gains, delays, mean_gain)
    }

    pub fn num_modes(&self) -> usize {
        self.gains.len()
    }

    pub fn v(&self) -> &CMatrix {
        &self.v
    }

    pub fn u(&self) -> &CMatrix {
        &self.u
    }

    pub fn gains(&self) -> &GainVector {
        &self.gains
    }

    pub fn delays(&self) -> &DelayVector {
        &self.delays
    }

    pub fn mean_gain(&self) -> f64 {
        self.mean_gain
    }

    /// True when the section is a pure (frequency-flat) unitary.
    pub fn is_unitary(&self) -> bool {
        self.gains.is_zero() && self.mean_gain == 0.0
    }

    /// Condition number of the section matrix (frequency independent:
    /// delays contribute pure phases).
    pub fn condition_number(&self) -> f64 {
        let g = self.gains.as_slice();
        let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
        ((max - min) / 2.0).exp()
    }
}

/// Frobenius-norm defect ||M^H M - I||_F.
pub fn unitarity_defect(m: &CMatrix) -> f64 {
    let dim = m.ncols();
    let prod = m.adjoint() * m;
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let expect = if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            acc += (prod[(i, j)] - expect).norm_sqr();
        }
    }
    acc.sqrt()
}

/// Samples a Haar-distributed unitary via QR of a complex Ginibre matrix,
/// with the R diagonal phases folded into Q to remove the QR gauge.
pub fn sample_haar_unitary(dim: usize, rng: &mut ChaCha8Rng) -> Result<CMatrix> {
    if dim == 0 {
        return Err(Error::InvalidDimension(
            "unitary dimension must be >= 1".into(),
        ));
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(
            rng.sample::<f64, _>(StandardNormal) * inv_sqrt2,
            rng.sample::<f64, _>(StandardNormal) * inv_sqrt2,
        )
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 {
            rjj / rjj.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

/// Builds a section with independently sampled Haar coupling matrices.
pub fn make_section(
    gains: GainVector,
    delays: DelayVector,
    mean_gain: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CouplingSection> {
    if gains.len() != delays.len() {
        return Err(Error::DimensionMismatch(format!(
            "gains ({}) and delays ({}) lengths differ",
            gains.len(),
            delays.len()
        )));
    }
    let dim = gains.len();
    let v = sample_haar_unitary(dim, rng)?;
    let u = sample_haar_unitary(dim, rng)?;
    CouplingSection::from_parts(v, u, gains, delays, mean_gain)
}

/// Lumped MDL element: deterministic alternating gains (+-sigma_g), no
/// delays, fresh Haar coupling, zero mean gain.
pub fn lumped_mdl_element(
    sigma_g: f64,
    num_modes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CouplingSection> {
    make_section(
        GainVector::alternating(sigma_g, num_modes)?,
        DelayVector::zeros(num_modes)?,
        0.0,
        rng,
    )
}

/// Zero-mean Gaussian per-mode delays with marginal std sigma_tau =
/// kappa*sqrt(section_length). The raw variance is inflated by 2N/(2N-1)
/// so the exact recentering leaves the marginal std at sigma_tau.
pub fn calibrate_smd_delays(
    kappa_s_per_sqrt_m: f64,
    section_length_m: f64,
    num_modes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DelayVector> {
    if kappa_s_per_sqrt_m < 0.0 {
        return Err(Error::Config(format!(
            "SMD coefficient must be nonnegative, got {kappa_s_per_sqrt_m:.3e}"
        )));
    }
    if section_length_m <= 0.0 {
        return Err(Error::Config(format!(
            "section length must be positive, got {section_length_m:.3e}"
        )));
    }
    if num_modes == 0 || num_modes % 2 != 0 {
        return Err(Error::InvalidDimension(format!(
            "mode count must be 2N with N >= 1, got {num_modes}"
        )));
    }
    if kappa_s_per_sqrt_m == 0.0 {
        return DelayVector::zeros(num_modes);
    }
    let sigma_tau = kappa_s_per_sqrt_m * section_length_m.sqrt();
    let inflation = (num_modes as f64 / (num_modes as f64 - 1.0)).sqrt();
    let mut tau: Vec<f64> = (0..num_modes)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * sigma_tau * inflation)
        .collect();
    let mean = tau.iter().sum::<f64>() / num_modes as f64;
    for t in tau.iter_mut() {
        *t -= mean;
    }
    // Kill the residual of the subtraction so the zero-mean invariant is exact.
    let residual = tau.iter().sum::<f64>() / num_modes as f64;
    tau[0] -= residual * num_modes as f64;
    DelayVector::new(tau)
}

/// Frequency response of one section at angular offset `omega` (rad/s).
pub fn section_response(s: &CouplingSection, omega: f64) -> CMatrix {
    let dim = s.num_modes();
    let pre = (s.mean_gain / 2.0).exp();
    let mut diag = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let amp = (s.gains.as_slice()[i] / 2.0).exp();
        let phase = -omega * s.delays.as_slice()[i];
        diag[(i, i)] = Complex64::from_polar(amp, phase);
    }
    let mut m = &s.v * diag * s.u.adjoint();
    m *= Complex64::new(pre, 0.0);
    m
}

/// Exact inverse of [`section_response`] at the same frequency.
pub fn section_response_inverse(s: &CouplingSection, omega: f64) -> CMatrix {
    let dim = s.num_modes();
    let pre = (-s.mean_gain / 2.0).exp();
    let mut diag = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let amp = (-s.gains.as_slice()[i] / 2.0).exp();
        let phase = omega * s.delays.as_slice()[i];
        diag[(i, i)] = Complex64::from_polar(amp, phase);
    }
    let mut m = &s.u * diag * s.v.adjoint();
    m *= Complex64::new(pre, 0.0);
    m
}

/// Frequency-resolved 2N x 2N transfer matrix on an angular-frequency grid.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    omega_grid: Vec<f64>,
    matrices: Vec<CMatrix>,
}

impl TransferMatrix {
    pub fn new(omega_grid: Vec<f64>, matrices: Vec<CMatrix>) -> Result<Self> {
        if omega_grid.is_empty() || omega_grid.len() != matrices.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid ({}) and matrix list ({}) lengths differ or are empty",
                omega_grid.len(),
                matrices.len()
            )));
        }
        Ok(Self {
            omega_grid,
            matrices,
        })
    }

    pub fn omega_grid(&self) -> &[f64] {
        &self.omega_grid
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn num_modes(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.omega_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega_grid.is_empty()
    }
}

/// Composes sections in transmission order (first section applied first):
/// H(w) = M_K(w) ... M_2(w) M_1(w).
pub fn compose(sections: &[CouplingSection], omega_grid: &[f64]) -> Result<TransferMatrix> {
    if sections.is_empty() {
        return Err(Error::Empty("no sections to compose".into()));
    }
    if omega_grid.is_empty() {
        return Err(Error::Empty("empty frequency grid".into()));
    }
    let dim = sections[0].num_modes();
    for s in sections {
        if s.num_modes() != dim {
            return Err(Error::DimensionMismatch(format!(
                "section has {} modes, expected {dim}",
                s.num_modes()
            )));
        }
    }
    let matrices = omega_grid
        .iter()
        .map(|&w| {
            let mut acc = CMatrix::identity(dim, dim);
            for s in sections {
                acc = section_response(s, w) * acc;
            }
            acc
        })
        .collect();
    TransferMatrix::new(omega_grid.to_vec(), matrices)
}

/// System log gains: log of the squared singular values, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    g_sorted: Vec<f64>,
}

impl SingularSpectrum {
    pub fn as_slice(&self) -> &[f64] {
        &self.g_sorted
    }

    pub fn g_min(&self) -> f64 {
        self.g_sorted[0]
    }

    pub fn g_max(&self) -> f64 {
        *self.g_sorted.last().unwrap()
    }

    pub fn sum(&self) -> f64 {
        self.g_sorted.iter().sum()
    }
}

/// Extracts the system MDL from a transfer matrix sample: g_i = ln(s_i^2)
/// for singular values s_i, ascending.
pub fn singular_gains(m: &CMatrix) -> Result<SingularSpectrum> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix passed to singular_gains".into()));
    }
    let svd = m.clone().svd(false, false);
    let mut g: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| 2.0 * s.max(f64::MIN_POSITIVE).ln())
        .collect();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SingularSpectrum { g_sorted: g })
}

/// Peak-to-peak MDL in dB: 4.343 * (g_max - g_min).
pub fn peak_to_peak_db(s: &SingularSpectrum) -> f64 {
    NEPER_TO_DB * (s.g_max() - s.g_min())
}
