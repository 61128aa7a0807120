//! Cross-module physics checks with independent oracles: SMD accumulation
//! measured on the impulse response, step-halving SNR saturation, and the
//! equalized-noise covariance of a two-span toy link.

use ccmcf::config::{preset, EngineKind, ScenarioTag, Sweep, TagSelect};
use ccmcf::ensemble::run_ensemble;
use ccmcf::field::{omega_grid, MultimodeField};
use ccmcf::mdl::{calibrate_smd_delays, compose, make_section, GainVector};
use ccmcf::rng::{substream, Role};
use ccmcf::ssfm::StepMode;
use num_complex::Complex64;

/// 1000 cascaded 100 m sections at kappa = 2 ps/sqrt(km): the rms spread of
/// the intensity impulse response of H(w) equals 2*sqrt(100) = 20 ps within
/// 5% (strong-coupling sqrt(L) accumulation).
#[test]
fn smd_impulse_response_spread_matches_sqrt_length() {
    let kappa = 2.0e-12 / 1000f64.sqrt(); // s/sqrt(m)
    let section_m = 100.0;
    let modes = 8;
    let num_sections = 1000;
    let mut rng = substream(77, 0, 0, Role::Channel);
    let sections: Vec<_> = (0..num_sections)
        .map(|_| {
            let tau = calibrate_smd_delays(kappa, section_m, modes, &mut rng).unwrap();
            make_section(GainVector::zeros(modes).unwrap(), tau, 0.0, &mut rng).unwrap()
        })
        .collect();

    // Time window 512 ps, resolution 0.25 ps.
    let n = 2048usize;
    let dt = 0.25e-12;
    let omegas = omega_grid(n, dt);
    let tm = compose(&sections, &omegas).unwrap();

    // Short pulse into mode 0, centered mid-window to avoid wrap.
    let center = n / 2;
    let mut spectra = vec![vec![Complex64::default(); n]; modes];
    for (m, &w) in omegas.iter().enumerate() {
        let inp = Complex64::from_polar(1.0, -w * (center as f64) * dt);
        let h = &tm.matrices()[m];
        for (row, spec) in spectra.iter_mut().enumerate() {
            spec[m] = h[(row, 0)] * inp;
        }
    }
    let field = MultimodeField::from_spectra(spectra, dt, 1.934e14).unwrap();

    let mut energy = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for mode in field.modes() {
        for (ti, z) in mode.iter().enumerate() {
            let t = (ti as f64 - center as f64) * dt;
            let p = z.norm_sqr();
            energy += p;
            m1 += p * t;
            m2 += p * t * t;
        }
    }
    let mean = m1 / energy;
    let rms = (m2 / energy - mean * mean).sqrt();
    let expected = kappa * (num_sections as f64 * section_m).sqrt(); // 20 ps
    assert!(
        (rms / expected - 1.0).abs() < 0.05,
        "impulse-response spread {:.3} ps, expected {:.3} ps",
        rms * 1e12,
        expected * 1e12
    );
}

/// Halving the local-error target changes the detected single-seed SNR of a
/// one-span run by less than 0.05 dB (the saturation rule).
#[test]
fn local_error_halving_saturates_snr() {
    let snr_at = |target: f64| -> f64 {
        let mut s = preset("fig3a_desk").unwrap();
        s.tags = TagSelect::Both;
        s.num_realizations = 1;
        let l = s.link.as_mut().unwrap();
        l.num_spans = 1;
        l.fiber.smd_coeff_ps_per_sqrt_km = 2.0;
        l.sim.controller.local_error_target = target;
        l.sim.controller.mode = StepMode::Adaptive {
            recheck_interval: 16,
        };
        let out = run_ensemble(&s, 2).unwrap();
        out.records[0].snr_db()
    };
    let coarse = snr_at(1e-4);
    let fine = snr_at(5e-5);
    assert!(
        (coarse - fine).abs() < 0.05,
        "SNR moved {:.4} dB when halving the error target",
        (coarse - fine).abs()
    );
}

/// Two-span toy link with lumped MDL: the per-polarization equalized ASE
/// powers measured by the SSFM receiver match the matrix-oracle covariance
/// within Monte-Carlo error.
#[test]
fn equalized_noise_covariance_matches_oracle() {
    let mut s = preset("fig3a_desk").unwrap();
    s.tags = TagSelect::Ase;
    s.num_realizations = 8;
    s.sweep = Sweep::None;
    {
        let l = s.link.as_mut().unwrap();
        l.wdm.num_channels = 1;
        l.wdm.symbols_per_block = 4096;
        l.wdm.samples_per_symbol = 0;
    }
    let ssfm = run_ensemble(&s, 2).unwrap();
    let mut so = s.clone();
    so.engine = EngineKind::MatrixOracle;
    let oracle = run_ensemble(&so, 2).unwrap();

    for (a, b) in ssfm.records.iter().zip(oracle.records.iter()) {
        assert_eq!(a.realization_id, b.realization_id);
        assert_eq!(a.tag, ScenarioTag::Ase);
        for (na, nb, pol) in [
            (a.powers.n_x_w, b.powers.n_x_w, "x"),
            (a.powers.n_y_w, b.powers.n_y_w, "y"),
        ] {
            let rel = (na / nb - 1.0).abs();
            assert!(
                rel < 0.05,
                "realization {} pol {pol}: measured {na:.4e} W vs oracle {nb:.4e} W ({rel:.3})",
                a.realization_id
            );
        }
    }
}

/// All-realizations failure propagates as an ensemble error (failure budget
/// is 1%).
#[test]
fn ensemble_failure_budget_enforced() {
    let mut s = preset("fig3a_desk").unwrap();
    s.tags = TagSelect::Nli;
    s.num_realizations = 2;
    {
        let l = s.link.as_mut().unwrap();
        l.num_spans = 1;
        l.wdm.num_channels = 1;
        l.wdm.symbols_per_block = 512;
        l.wdm.power_per_channel_dbm = 33.0; // strongly nonlinear
        l.fiber.span_length_km = 1.0;
        l.fiber.waveplate_length_km = 1.0;
        // A floor on the step the controller cannot satisfy.
        l.sim.controller.initial_step_km = 1.0;
        l.sim.controller.min_step_km = 0.9;
        l.sim.controller.local_error_target = 1e-12;
        l.sim.controller.mode = StepMode::Adaptive {
            recheck_interval: 1,
        };
    }
    match run_ensemble(&s, 2) {
        Err(ccmcf::Error::Ensemble { failed, total, .. }) => {
            assert_eq!(failed, 2);
            assert_eq!(total, 2);
        }
        other => panic!("expected ensemble failure, got {other:?}"),
    }
}
