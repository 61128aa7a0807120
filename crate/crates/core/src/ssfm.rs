//! Split-step Fourier propagation of a 2N-mode field through spans of
//! coupled-core fiber, with distributed waveplates (mode coupling + SMD),
//! lumped MDL elements at span ends, and ASE-injecting amplifiers.
//!
//! The engine keeps the field in the frequency domain between operators:
//! dispersion/loss, waveplates and MDL elements are diagonal or per-bin
//! matrix multiplies there, and only the Kerr step requires a time-domain
//! round trip. The per-step ordering is a symmetrized (Strang) split:
//! linear half, nonlinear, linear half, with the waveplate matrix applied
//! at each segment boundary and the step never exceeding one waveplate.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fft_forward_all, fft_inverse_all, omega_grid, MultimodeField};
use crate::mdl::{section_response, CouplingSection, TransferMatrix};

pub const PLANCK: f64 = 6.62607015e-34;
pub const C_LIGHT: f64 = 299_792_458.0;

/// Fiber parameters in the units the link is normally quoted in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    /// Manakov-averaged nonlinear coefficient, already including the 1/N
    /// core scaling.
    pub gamma_eff_per_w_km: f64,
    pub smd_coeff_ps_per_sqrt_km: f64,
    pub waveplate_length_km: f64,
    pub span_length_km: f64,
}

impl FiberConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.attenuation_db_per_km < 0.0 {
            problems.push(format!(
                "attenuation_db_per_km must be >= 0, got {}",
                self.attenuation_db_per_km
            ));
        }
        if self.gamma_eff_per_w_km < 0.0 {
            problems.push(format!(
                "gamma_eff_per_w_km must be >= 0, got {}",
                self.gamma_eff_per_w_km
            ));
        }
        if self.smd_coeff_ps_per_sqrt_km < 0.0 {
            problems.push(format!(
                "smd_coeff_ps_per_sqrt_km must be >= 0, got {}",
                self.smd_coeff_ps_per_sqrt_km
            ));
        }
        if !(self.span_length_km > 0.0) {
            problems.push(format!(
                "span_length_km must be > 0, got {}",
                self.span_length_km
            ));
        }
        if !(self.waveplate_length_km > 0.0) {
            problems.push(format!(
                "waveplate_length_km must be > 0, got {}",
                self.waveplate_length_km
            ));
        } else {
            let ratio = self.span_length_km / self.waveplate_length_km;
            if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
                problems.push(format!(
                    "waveplate_length_km ({}) must divide span_length_km ({})",
                    self.waveplate_length_km, self.span_length_km
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Power attenuation coefficient in nepers per meter.
    pub fn alpha_np_per_m(&self) -> f64 {
        self.attenuation_db_per_km * std::f64::consts::LN_10 / 10.0 / 1000.0
    }

    /// beta2 = -D lambda^2 / (2 pi c) at the carrier `f0`.
    pub fn beta2_s2_per_m(&self, f0: f64) -> f64 {
        let lambda = C_LIGHT / f0;
        let d_si = self.dispersion_ps_per_nm_km * 1e-6; // s/m^2
        -d_si * lambda * lambda / (2.0 * std::f64::consts::PI * C_LIGHT)
    }

    pub fn gamma_per_w_m(&self) -> f64 {
        self.gamma_eff_per_w_km * 1e-3
    }

    pub fn kappa_s_per_sqrt_m(&self) -> f64 {
        self.smd_coeff_ps_per_sqrt_km * 1e-12 / 1000f64.sqrt()
    }

    pub fn num_waveplates(&self) -> usize {
        (self.span_length_km / self.waveplate_length_km).round() as usize
    }
}

/// Frequency-flat amplifier with the standard EDFA noise model:
/// S_ASE = n_sp h nu (G - 1), n_sp = F G / (2 (G - 1)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifierConfig {
    pub gain_db: f64,
    pub noise_figure_db: f64,
    #[serde(default = "default_true")]
    pub ase_enabled: bool,
}

fn default_true() -> bool {
    true
}

impl AmplifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gain_db < 0.0 {
            return Err(Error::Validation(vec![format!(
                "gain_db must be >= 0, got {}",
                self.gain_db
            )]));
        }
        Ok(())
    }

    pub fn gain_linear(&self) -> f64 {
        10f64.powf(self.gain_db / 10.0)
    }

    pub fn field_gain(&self) -> f64 {
        10f64.powf(self.gain_db / 20.0)
    }

    /// Per-mode ASE power spectral density in W/Hz at carrier `f0`.
    /// Zero at unit gain (the inversion factor degenerates).
    pub fn ase_psd_w_per_hz(&self, f0: f64) -> f64 {
        let g = self.gain_linear();
        if g <= 1.0 {
            return 0.0;
        }
        let f = 10f64.powf(self.noise_figure_db / 10.0);
        let n_sp = f * g / (2.0 * (g - 1.0));
        n_sp * PLANCK * f0 * (g - 1.0)
    }
}

/// Local-error step control for the split-step loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepController {
    pub initial_step_km: f64,
    pub local_error_target: f64,
    pub min_step_km: f64,
    #[serde(default)]
    pub mode: StepMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// Step-doubling local-error control. The error is re-estimated every
    /// step while the step is moving and every `recheck_interval` accepted
    /// steps once it has settled.
    Adaptive { recheck_interval: usize },
    /// Constant step equal to `initial_step_km` (used by step calibration).
    Fixed,
}

impl Default for StepMode {
    fn default() -> Self {
        StepMode::Adaptive {
            recheck_interval: 16,
        }
    }
}

impl Default for StepController {
    fn default() -> Self {
        Self {
            initial_step_km: 1.0,
            local_error_target: 1e-4,
            min_step_km: 1e-6,
            mode: StepMode::default(),
        }
    }
}

impl StepController {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_step_km > 0.0 && self.min_step_km <= self.initial_step_km) {
            return Err(Error::Validation(vec![format!(
                "need 0 < min_step_km ({}) <= initial_step_km ({})",
                self.min_step_km, self.initial_step_km
            )]));
        }
        if !(self.local_error_target > 0.0) {
            return Err(Error::Validation(vec![format!(
                "local_error_target must be > 0, got {}",
                self.local_error_target
            )]));
        }
        Ok(())
    }
}

/// One span of the link: fiber, optional per-waveplate sections, optional
/// lumped MDL element at the span end, and the span amplifier.
#[derive(Debug, Clone)]
pub struct SpanDescriptor {
    pub fiber: FiberConfig,
    pub waveplates: Vec<CouplingSection>,
    pub mdl_element: Option<CouplingSection>,
    pub amplifier: AmplifierConfig,
}

/// One linear element of the traversed channel, in transmission order.
#[derive(Debug, Clone)]
pub enum LinkElement {
    Fiber {
        alpha_np_per_m: f64,
        beta2_s2_per_m: f64,
        length_m: f64,
    },
    Section(CouplingSection),
    Amplifier {
        field_gain: f64,
        ase_psd_w_per_hz: f64,
    },
}

/// Ordered record of every linear element the field traversed; the exact
/// end-to-end frequency response can be reconstructed from it.
#[derive(Debug, Clone)]
pub struct ChannelRecord {
    num_modes: usize,
    elements: Vec<LinkElement>,
}

impl ChannelRecord {
    pub fn new(num_modes: usize) -> Self {
        Self {
            num_modes,
            elements: Vec::new(),
        }
    }

    pub fn push(&mut self, el: LinkElement) {
        self.elements.push(el);
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn elements(&self) -> &[LinkElement] {
        &self.elements
    }

    /// Composes the full frequency response on an angular-frequency grid.
    pub fn compose_grid(&self, omega: &[f64]) -> Result<TransferMatrix> {
        if omega.is_empty() {
            return Err(Error::Empty("empty frequency grid".into()));
        }
        let dim = self.num_modes;
        let matrices = omega
            .iter()
            .map(|&w| {
                let mut acc = nalgebra::DMatrix::<Complex64>::identity(dim, dim);
                for el in &self.elements {
                    match el {
                        LinkElement::Fiber {
                            alpha_np_per_m,
                            beta2_s2_per_m,
                            length_m,
                        } => {
                            let c = fiber_factor(*alpha_np_per_m, *beta2_s2_per_m, *length_m, w);
                            acc *= c;
                        }
                        LinkElement::Section(s) => {
                            acc = section_response(s, w) * acc;
                        }
                        LinkElement::Amplifier { field_gain, .. } => {
                            acc *= Complex64::new(*field_gain, 0.0);
                        }
                    }
                }
                acc
            })
            .collect();
        TransferMatrix::new(omega.to_vec(), matrices)
    }

    /// Applies the exact inverse of the recorded channel to per-mode
    /// spectra, element by element in reverse order. This is the fast
    /// zero-forcing path: it equals multiplying every bin by H(w)^-1.
    pub fn apply_inverse_to_spectra(&self, spectra: &mut [Vec<Complex64>], dt: f64) -> Result<()> {
        if spectra.len() != self.num_modes {
            return Err(Error::DimensionMismatch(format!(
                "record has {} modes, field has {}",
                self.num_modes,
                spectra.len()
            )));
        }
        let n = spectra[0].len();
        let omegas = omega_grid(n, dt);
        let mut factors: HashMap<(u64, u64, u64), Vec<Complex64>> = HashMap::new();
        for el in self.elements.iter().rev() {
            match el {
                LinkElement::Fiber {
                    alpha_np_per_m,
                    beta2_s2_per_m,
                    length_m,
                } => {
                    // Inverse fiber: negate loss and chirp. Spans reuse one
                    // segment length, so cache the factor vector.
                    let key = (
                        alpha_np_per_m.to_bits(),
                        beta2_s2_per_m.to_bits(),
                        length_m.to_bits(),
                    );
                    let factor = factors.entry(key).or_insert_with(|| {
                        linear_factor_vec(&omegas, -*alpha_np_per_m, -*beta2_s2_per_m, *length_m)
                    });
                    for mode in spectra.iter_mut() {
                        for (z, f) in mode.iter_mut().zip(factor.iter()) {
                            *z *= f;
                        }
                    }
                }
                LinkElement::Section(s) => {
                    apply_section_to_spectra(spectra, s, dt, true);
                }
                LinkElement::Amplifier { field_gain, .. } => {
                    let inv = Complex64::new(1.0 / field_gain, 0.0);
                    for mode in spectra.iter_mut() {
                        for z in mode.iter_mut() {
                            *z *= inv;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn fiber_factor(alpha_np_per_m: f64, beta2: f64, length_m: f64, omega: f64) -> Complex64 {
    let amp = (-alpha_np_per_m * length_m / 2.0).exp();
    let phase = 0.5 * beta2 * omega * omega * length_m;
    Complex64::from_polar(amp, phase)
}

fn linear_factor_vec(omegas: &[f64], alpha: f64, beta2: f64, length_m: f64) -> Vec<Complex64> {
    omegas
        .iter()
        .map(|&w| fiber_factor(alpha, beta2, length_m, w))
        .collect()
}

/// Applies one coupling section (or its exact inverse) to per-mode spectra.
///
/// Bins are processed in blocks on split re/im planes so the matrix-vector
/// loops vectorize. Delay phases advance by a per-mode recurrence along the
/// uniform grid, re-anchored from an exact evaluation at each block start so
/// the accumulated rounding stays below ~1e-13.
pub fn apply_section_to_spectra(
    spectra: &mut [Vec<Complex64>],
    section: &CouplingSection,
    dt: f64,
    inverse: bool,
) {
    let dim = spectra.len();
    debug_assert_eq!(dim, section.num_modes());
    let n = spectra[0].len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let pre = ((if inverse { -1.0 } else { 1.0 }) * section.mean_gain() / 2.0).exp();

    let taus = section.delays().as_slice();
    let gains = section.gains().as_slice();
    let delay_free = section.delays().is_zero();

    // Direction: forward y = V D U^H x ; inverse y = U D^-1 V^H x.
    let (m_in, m_out) = if inverse {
        (section.u(), section.v())
    } else {
        (section.v(), section.u())
    };
    // Row-major planes of A = (adjoint applied first) and B = output matrix,
    // with the per-mode amplitude pre * e^{+-g/2} folded into A's rows.
    let mut a_re = vec![0.0f64; dim * dim];
    let mut a_im = vec![0.0f64; dim * dim];
    let mut b_re = vec![0.0f64; dim * dim];
    let mut b_im = vec![0.0f64; dim * dim];
    for r in 0..dim {
        let g = if inverse { -gains[r] } else { gains[r] };
        let amp = pre * (g / 2.0).exp();
        for c in 0..dim {
            let a = m_out[(c, r)].conj() * amp;
            a_re[r * dim + c] = a.re;
            a_im[r * dim + c] = a.im;
            let b = m_in[(r, c)];
            b_re[r * dim + c] = b.re;
            b_im[r * dim + c] = b.im;
        }
    }

    let block = 256usize.min(n / 2).max(1);
    let mut x_re = vec![0.0f64; dim * block];
    let mut x_im = vec![0.0f64; dim * block];
    let mut t_re = vec![0.0f64; dim * block];
    let mut t_im = vec![0.0f64; dim * block];
    // Delay-phase planes, filled per block by recurrence from an exact anchor.
    let mut p_re = vec![0.0f64; dim * block];
    let mut p_im = vec![0.0f64; dim * block];
    let d_omega = 2.0 * std::f64::consts::PI / (n as f64 * dt);

    let mut start = 0usize;
    while start < n {
        let len = block.min(n - start);

        // Gather into planes.
        for (i, mode) in spectra.iter().enumerate() {
            let (xr, xi) = (&mut x_re[i * block..], &mut x_im[i * block..]);
            for (b, z) in mode[start..start + len].iter().enumerate() {
                xr[b] = z.re;
                xi[b] = z.im;
            }
        }

        // t = A x (amplitudes folded into A).
        for r in 0..dim {
            let tr = &mut t_re[r * block..r * block + len];
            let ti = &mut t_im[r * block..r * block + len];
            tr.fill(0.0);
            ti.fill(0.0);
            for c in 0..dim {
                let ar = a_re[r * dim + c];
                let ai = a_im[r * dim + c];
                let xr = &x_re[c * block..c * block + len];
                let xi = &x_im[c * block..c * block + len];
                for b in 0..len {
                    tr[b] += ar * xr[b] - ai * xi[b];
                    ti[b] += ar * xi[b] + ai * xr[b];
                }
            }
        }

        // Delay phases: t *= e^{sign j w tau_r}.
        if !delay_free {
            let w0 = crate::field::bin_frequency(n, dt, start) * 2.0 * std::f64::consts::PI;
            for r in 0..dim {
                let step = Complex64::from_polar(1.0, sign * d_omega * taus[r]);
                let mut ph = Complex64::from_polar(1.0, sign * w0 * taus[r]);
                let pr = &mut p_re[r * block..];
                let pi = &mut p_im[r * block..];
                for b in 0..len {
                    pr[b] = ph.re;
                    pi[b] = ph.im;
                    ph *= step;
                }
            }
            for r in 0..dim {
                let tr = &mut t_re[r * block..r * block + len];
                let ti = &mut t_im[r * block..r * block + len];
                let pr = &p_re[r * block..r * block + len];
                let pi = &p_im[r * block..r * block + len];
                for b in 0..len {
                    let re = tr[b] * pr[b] - ti[b] * pi[b];
                    ti[b] = tr[b] * pi[b] + ti[b] * pr[b];
                    tr[b] = re;
                }
            }
        }

        // y = B t, scattered straight back into the mode arrays.
        for (r, mode) in spectra.iter_mut().enumerate() {
            let out = &mut mode[start..start + len];
            let mut first = true;
            for c in 0..dim {
                let br = b_re[r * dim + c];
                let bi = b_im[r * dim + c];
                let tr = &t_re[c * block..c * block + len];
                let ti = &t_im[c * block..c * block + len];
                if first {
                    for b in 0..len {
                        out[b] = Complex64::new(br * tr[b] - bi * ti[b], br * ti[b] + bi * tr[b]);
                    }
                    first = false;
                } else {
                    for b in 0..len {
                        out[b].re += br * tr[b] - bi * ti[b];
                        out[b].im += br * ti[b] + bi * tr[b];
                    }
                }
            }
        }

        start += len;
    }
}

/// Loss-weighted effective length of a step, referenced to the midpoint
/// field: 2 sinh(alpha h / 2) / alpha. Makes the CW Kerr phase exact.
pub fn midpoint_effective_length(alpha_np_per_m: f64, h_m: f64) -> f64 {
    if alpha_np_per_m == 0.0 {
        h_m
    } else {
        2.0 * (alpha_np_per_m * h_m / 2.0).sinh() / alpha_np_per_m
    }
}

// ---------------------------------------------------------------------------
// Public single-operator API (field in, field out).
// ---------------------------------------------------------------------------

/// Dispersion and loss over `length_km`, identical on all modes:
/// X(w) *= exp(-alpha len / 2 + j (beta2/2) w^2 len).
pub fn linear_half_step(
    field: &MultimodeField,
    fiber: &FiberConfig,
    length_km: f64,
) -> Result<MultimodeField> {
    if length_km < 0.0 {
        return Err(Error::Config(format!("negative length {length_km}")));
    }
    let mut spectra = field.to_spectra();
    let omegas = omega_grid(field.n_t(), field.dt());
    let factor = linear_factor_vec(
        &omegas,
        fiber.alpha_np_per_m(),
        fiber.beta2_s2_per_m(field.f0()),
        length_km * 1e3,
    );
    for mode in spectra.iter_mut() {
        for (z, f) in mode.iter_mut().zip(factor.iter()) {
            *z *= f;
        }
    }
    MultimodeField::from_spectra(spectra, field.dt(), field.f0())
}

/// Kerr phase rotation: every mode is multiplied by
/// exp(j gamma_eff S(t) len_eff) with S(t) the total instantaneous power
/// across all modes.
pub fn nonlinear_step(
    field: &MultimodeField,
    fiber: &FiberConfig,
    effective_length_km: f64,
) -> Result<MultimodeField> {
    if effective_length_km < 0.0 {
        return Err(Error::Config(format!(
            "negative effective length {effective_length_km}"
        )));
    }
    let mut out = field.clone();
    apply_kerr(out.modes_mut(), fiber.gamma_per_w_m(), effective_length_km * 1e3);
    Ok(out)
}

fn apply_kerr(modes: &mut [Vec<Complex64>], gamma_per_w_m: f64, len_eff_m: f64) {
    if gamma_per_w_m == 0.0 || len_eff_m == 0.0 {
        return;
    }
    let n = modes[0].len();
    let scale = gamma_per_w_m * len_eff_m;
    for ti in 0..n {
        let mut s = 0.0;
        for mode in modes.iter() {
            s += mode[ti].norm_sqr();
        }
        let rot = Complex64::from_polar(1.0, scale * s);
        for mode in modes.iter_mut() {
            mode[ti] *= rot;
        }
    }
}

/// Applies a coupling section to the field in the frequency domain.
pub fn apply_waveplate(field: &MultimodeField, section: &CouplingSection) -> Result<MultimodeField> {
    if field.num_modes() != section.num_modes() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} modes, section has {}",
            field.num_modes(),
            section.num_modes()
        )));
    }
    let mut spectra = field.to_spectra();
    apply_section_to_spectra(&mut spectra, section, field.dt(), false);
    MultimodeField::from_spectra(spectra, field.dt(), field.f0())
}

/// Flat gain plus optional white circular complex ASE with per-mode PSD
/// S_ASE = n_sp h nu (G - 1).
pub fn amplify_with_ase(
    field: &MultimodeField,
    amp: &AmplifierConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MultimodeField> {
    let mut out = field.clone();
    let g = Complex64::new(amp.field_gain(), 0.0);
    for mode in out.modes_mut() {
        for z in mode.iter_mut() {
            *z *= g;
        }
    }
    if amp.ase_enabled {
        let psd = amp.ase_psd_w_per_hz(field.f0());
        if psd > 0.0 {
            let sigma_q = (psd / field.dt() / 2.0).sqrt();
            for mode in out.modes_mut() {
                for z in mode.iter_mut() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *z += Complex64::new(re * sigma_q, im * sigma_q);
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Span propagation engine.
// ---------------------------------------------------------------------------

struct LinearCache {
    omegas: Vec<f64>,
    cache: HashMap<(u64, u64, u64), Arc<Vec<Complex64>>>,
}

impl LinearCache {
    fn new(n: usize, dt: f64) -> Self {
        Self {
            omegas: omega_grid(n, dt),
            cache: HashMap::new(),
        }
    }

    fn factor(&mut self, alpha: f64, beta2: f64, length_m: f64) -> Arc<Vec<Complex64>> {
        let key = (alpha.to_bits(), beta2.to_bits(), length_m.to_bits());
        self.cache
            .entry(key)
            .or_insert_with(|| Arc::new(linear_factor_vec(&self.omegas, alpha, beta2, length_m)))
            .clone()
    }
}

fn apply_factor(spectra: &mut [Vec<Complex64>], factor: &[Complex64]) {
    for mode in spectra.iter_mut() {
        for (z, f) in mode.iter_mut().zip(factor.iter()) {
            *z *= f;
        }
    }
}

fn rel_l2_diff(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ma, mb) in a.iter().zip(b) {
        for (x, y) in ma.iter().zip(mb) {
            num += (x - y).norm_sqr();
            den += y.norm_sqr();
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

struct StepState {
    h_m: f64,
    since_check: usize,
    settled: bool,
}

struct Engine {
    dt: f64,
    f0: f64,
    lin: LinearCache,
}

impl Engine {
    fn new(n: usize, dt: f64, f0: f64) -> Self {
        Self {
            dt,
            f0,
            lin: LinearCache::new(n, dt),
        }
    }

    fn strang_step(&mut self, spectra: &mut [Vec<Complex64>], fiber: &FiberConfig, h_m: f64) {
        let alpha = fiber.alpha_np_per_m();
        let beta2 = fiber.beta2_s2_per_m(self.f0);
        let gamma = fiber.gamma_per_w_m();
        let half = self.lin.factor(alpha, beta2, h_m / 2.0);
        apply_factor(spectra, &half);
        fft_inverse_all(spectra);
        apply_kerr(spectra, gamma, midpoint_effective_length(alpha, h_m));
        fft_forward_all(spectra);
        apply_factor(spectra, &half);
    }

    fn apply_linear(&mut self, spectra: &mut [Vec<Complex64>], fiber: &FiberConfig, len_m: f64) {
        let factor = self.lin.factor(
            fiber.alpha_np_per_m(),
            fiber.beta2_s2_per_m(self.f0),
            len_m,
        );
        apply_factor(spectra, &factor);
    }

    /// Adaptive split-step over one waveplate segment.
    fn propagate_segment(
        &mut self,
        spectra: &mut [Vec<Complex64>],
        fiber: &FiberConfig,
        ctrl: &StepController,
        st: &mut StepState,
        seg_len_m: f64,
    ) -> Result<()> {
        if fiber.gamma_per_w_m() == 0.0 {
            self.apply_linear(spectra, fiber, seg_len_m);
            return Ok(());
        }
        let min_h = ctrl.min_step_km * 1e3;
        let mut z = 0.0;
        while seg_len_m - z > seg_len_m * 1e-12 {
            let h = st.h_m.min(seg_len_m - z);
            let checking = match ctrl.mode {
                StepMode::Fixed => false,
                StepMode::Adaptive { recheck_interval } => {
                    !st.settled || st.since_check + 1 >= recheck_interval.max(1)
                }
            };
            if !checking {
                self.strang_step(spectra, fiber, h);
                z += h;
                st.since_check += 1;
                continue;
            }
            let saved: Vec<Vec<Complex64>> = spectra.to_vec();
            self.strang_step(spectra, fiber, h);
            let mut fine = saved.clone();
            self.strang_step(&mut fine, fiber, h / 2.0);
            self.strang_step(&mut fine, fiber, h / 2.0);
            let err = rel_l2_diff(spectra, &fine);
            st.since_check = 0;
            if err <= ctrl.local_error_target {
                z += h;
                if err <= ctrl.local_error_target / 4.0 {
                    st.h_m = (st.h_m * 2.0).min(seg_len_m);
                    st.settled = true;
                } else {
                    st.settled = false;
                }
            } else {
                spectra.clone_from_slice(&saved);
                st.h_m = h / 2.0;
                st.settled = false;
                if st.h_m < min_h {
                    return Err(Error::NonConvergence {
                        step_km: st.h_m / 1e3,
                        min_km: ctrl.min_step_km,
                        err,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Propagates the field through one span: adaptive symmetrized split-step
/// within each waveplate segment, waveplate matrix at each boundary.
pub fn propagate_span(
    field: &MultimodeField,
    fiber: &FiberConfig,
    controller: &StepController,
    waveplates: &[CouplingSection],
) -> Result<MultimodeField> {
    fiber.validate()?;
    controller.validate()?;
    if !waveplates.is_empty() && waveplates.len() != fiber.num_waveplates() {
        return Err(Error::DimensionMismatch(format!(
            "span needs {} waveplates, got {}",
            fiber.num_waveplates(),
            waveplates.len()
        )));
    }
    let mut spectra = field.to_spectra();
    let mut engine = Engine::new(field.n_t(), field.dt(), field.f0());
    let mut st = StepState {
        h_m: controller.initial_step_km * 1e3,
        since_check: 0,
        settled: false,
    };
    propagate_span_spectra(
        &mut engine,
        &mut spectra,
        fiber,
        controller,
        &mut st,
        waveplates,
        None,
    )?;
    MultimodeField::from_spectra(spectra, field.dt(), field.f0())
}

#[allow(clippy::too_many_arguments)]
fn propagate_span_spectra(
    engine: &mut Engine,
    spectra: &mut [Vec<Complex64>],
    fiber: &FiberConfig,
    controller: &StepController,
    st: &mut StepState,
    waveplates: &[CouplingSection],
    mut record: Option<&mut ChannelRecord>,
) -> Result<()> {
    let span_m = fiber.span_length_km * 1e3;
    let n_seg = if waveplates.is_empty() {
        1
    } else {
        waveplates.len()
    };
    let seg_len_m = span_m / n_seg as f64;
    let alpha = fiber.alpha_np_per_m();
    let beta2 = fiber.beta2_s2_per_m(engine.f0);
    for si in 0..n_seg {
        engine.propagate_segment(spectra, fiber, controller, st, seg_len_m)?;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(LinkElement::Fiber {
                alpha_np_per_m: alpha,
                beta2_s2_per_m: beta2,
                length_m: seg_len_m,
            });
        }
        if let Some(wp) = waveplates.get(si) {
            apply_section_to_spectra(spectra, wp, engine.dt, false);
            if let Some(rec) = record.as_deref_mut() {
                rec.push(LinkElement::Section(wp.clone()));
            }
        }
    }
    Ok(())
}

/// Runs the full link span by span: propagate, lumped MDL, amplifier.
/// Returns the received field and the ordered channel record.
pub fn run_link(
    tx: &MultimodeField,
    spans: &[SpanDescriptor],
    controller: &StepController,
    rng: &mut ChaCha8Rng,
) -> Result<(MultimodeField, ChannelRecord)> {
    controller.validate()?;
    let dim = tx.num_modes();
    for span in spans {
        span.fiber.validate()?;
        span.amplifier.validate()?;
        if !span.waveplates.is_empty() && span.waveplates.len() != span.fiber.num_waveplates() {
            return Err(Error::DimensionMismatch(format!(
                "span needs {} waveplates, got {}",
                span.fiber.num_waveplates(),
                span.waveplates.len()
            )));
        }
        for s in span
            .waveplates
            .iter()
            .chain(span.mdl_element.iter())
        {
            if s.num_modes() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "section has {} modes, field has {dim}",
                    s.num_modes()
                )));
            }
        }
    }

    let n = tx.n_t();
    let mut spectra = tx.to_spectra();
    let mut engine = Engine::new(n, tx.dt(), tx.f0());
    let mut record = ChannelRecord::new(dim);
    let mut st = StepState {
        h_m: controller.initial_step_km * 1e3,
        since_check: 0,
        settled: false,
    };

    for span in spans {
        propagate_span_spectra(
            &mut engine,
            &mut spectra,
            &span.fiber,
            controller,
            &mut st,
            &span.waveplates,
            Some(&mut record),
        )?;
        if let Some(el) = &span.mdl_element {
            apply_section_to_spectra(&mut spectra, el, tx.dt(), false);
            record.push(LinkElement::Section(el.clone()));
        }
        let g = Complex64::new(span.amplifier.field_gain(), 0.0);
        for mode in spectra.iter_mut() {
            for z in mode.iter_mut() {
                *z *= g;
            }
        }
        let psd = if span.amplifier.ase_enabled {
            span.amplifier.ase_psd_w_per_hz(tx.f0())
        } else {
            0.0
        };
        if psd > 0.0 {
            // White noise drawn directly in the frequency domain: the DFT of
            // i.i.d. CN(0, s^2) samples is i.i.d. CN(0, n s^2).
            let sigma_q = (psd / tx.dt() * n as f64 / 2.0).sqrt();
            for mode in spectra.iter_mut() {
                for z in mode.iter_mut() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *z += Complex64::new(re * sigma_q, im * sigma_q);
                }
            }
        }
        record.push(LinkElement::Amplifier {
            field_gain: span.amplifier.field_gain(),
            ase_psd_w_per_hz: psd,
        });
    }

    let rx = MultimodeField::from_spectra(spectra, tx.dt(), tx.f0())?;
    Ok((rx, record))
}

/// Builds the channel record a link *would* produce, without propagating a
/// field. Must match `run_link`'s recording order exactly.
pub fn record_from_spans(spans: &[SpanDescriptor], num_modes: usize, f0: f64) -> ChannelRecord {
    let mut record = ChannelRecord::new(num_modes);
    for span in spans {
        let n_seg = if span.waveplates.is_empty() {
            1
        } else {
            span.waveplates.len()
        };
        let seg_len_m = span.fiber.span_length_km * 1e3 / n_seg as f64;
        let alpha = span.fiber.alpha_np_per_m();
        let beta2 = span.fiber.beta2_s2_per_m(f0);
        for si in 0..n_seg {
            record.push(LinkElement::Fiber {
                alpha_np_per_m: alpha,
                beta2_s2_per_m: beta2,
                length_m: seg_len_m,
            });
            if let Some(wp) = span.waveplates.get(si) {
                record.push(LinkElement::Section(wp.clone()));
            }
        }
        if let Some(el) = &span.mdl_element {
            record.push(LinkElement::Section(el.clone()));
        }
        let psd = if span.amplifier.ase_enabled {
            span.amplifier.ase_psd_w_per_hz(f0)
        } else {
            0.0
        };
        record.push(LinkElement::Amplifier {
            field_gain: span.amplifier.field_gain(),
            ase_psd_w_per_hz: psd,
        });
    }
    record
}
