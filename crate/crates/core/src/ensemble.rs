//! Seeded Monte-Carlo orchestration over channel realizations, SNR
//! statistics, order-statistic histograms and the matrix-only linear-SNR
//! oracle.
//!
//! Every realization derives its own substreams from
//! (master_seed, sweep_index, realization, role), so summaries are a pure
//! function of (scenario, master_seed) no matter how many workers run.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EngineKind, LinkStudy, Scenario, ScenarioTag, Study};
use crate::error::{Error, Result};
use crate::mdl::{
    calibrate_smd_delays, lumped_mdl_element, make_section, peak_to_peak_db, singular_gains,
    DelayVector, GainVector, SingularSpectrum, NEPER_TO_DB,
};
use crate::rng::{substream, Role};
use crate::ssfm::{record_from_spans, run_link, ChannelRecord, LinkElement, SpanDescriptor};
use crate::stats::{
    bootstrap_ci, correlation, estimate_pdf, mean, skewness, std_dev, Binning, Histogram,
};
use crate::transceiver::{
    carrier_phase_recover, demodulate_cut, estimate_snr, generate_wdm, rc_power_weight,
    zero_forcing_with_record, SnrPowers, WdmConfig,
};

/// Per-realization, per-core SNR measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRecord {
    pub realization_id: u64,
    pub core_index: usize,
    pub tag: ScenarioTag,
    pub sweep_value: Option<f64>,
    pub powers: SnrPowers,
}

impl SnrRecord {
    pub fn snr_db(&self) -> f64 {
        self.powers.snr_db()
    }

    pub fn snr_x_db(&self) -> f64 {
        self.powers.snr_x_db()
    }

    pub fn snr_y_db(&self) -> f64 {
        self.powers.snr_y_db()
    }
}

/// Moments of one (sweep point, tag) sub-ensemble, with bootstrap CIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub tag: ScenarioTag,
    pub sweep_value: Option<f64>,
    pub num_records: usize,
    pub mean_snr_db: f64,
    pub std_snr_db: f64,
    pub skewness: f64,
    pub mean_ci_db: (f64, f64),
    pub std_ci_db: (f64, f64),
    /// Correlation of the per-polarization SNR deviations (dB).
    pub corr_xy: f64,
}

/// Order-statistic summary of an MDL-spectrum study (all values in dB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStatsSummary {
    /// samples_db[j] holds the j-th smallest system gain of each realization.
    pub samples_db: Vec<Vec<f64>>,
    pub marginals: Vec<Histogram>,
    pub mixture: Histogram,
    pub mean_peak_to_peak_db: f64,
    pub mixture_skewness: f64,
    pub max_abs_gain_sum: f64,
}

/// Everything a Monte-Carlo run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub scenario: Scenario,
    pub records: Vec<SnrRecord>,
    pub moments: Vec<MomentRow>,
    /// Delta-SNR histograms labeled "(sweep value|-)/tag".
    pub histograms: Vec<(String, Histogram)>,
    pub order_stats: Option<OrderStatsSummary>,
    pub num_failed: usize,
    pub failures: Vec<(u64, String)>,
}

/// Subtracts the ensemble mean (in dB); the residual mean is re-centered to
/// below 1e-12.
pub fn delta_snr(snr_db: &[f64]) -> Vec<f64> {
    let mu = mean(snr_db);
    let mut d: Vec<f64> = snr_db.iter().map(|x| x - mu).collect();
    let residual = mean(&d);
    for x in d.iter_mut() {
        *x -= residual;
    }
    d
}

/// Order-statistic and mixture histograms of the system gains on a shared
/// bin grid; the mixture is the bin-wise average of the marginals.
pub fn order_statistics_pdfs(
    spectra: &[SingularSpectrum],
    bin_width_db: Option<f64>,
) -> Result<OrderStatsSummary> {
    if spectra.is_empty() {
        return Err(Error::Empty("no spectra".into()));
    }
    let dim = spectra[0].as_slice().len();
    if spectra.iter().any(|s| s.as_slice().len() != dim) {
        return Err(Error::DimensionMismatch(
            "spectra have inconsistent mode counts".into(),
        ));
    }
    let n = spectra.len();
    let mut samples_db = vec![vec![0.0f64; n]; dim];
    let mut max_abs_sum = 0.0f64;
    for (r, s) in spectra.iter().enumerate() {
        max_abs_sum = max_abs_sum.max(s.sum().abs());
        for (j, &g) in s.as_slice().iter().enumerate() {
            samples_db[j][r] = NEPER_TO_DB * g;
        }
    }
    let pooled: Vec<f64> = samples_db.iter().flatten().copied().collect();
    let lo = pooled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = match bin_width_db {
        Some(w) if w > 0.0 => w,
        _ => {
            let mut sorted = pooled.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let iqr = crate::stats::quantile_sorted(&sorted, 0.75)
                - crate::stats::quantile_sorted(&sorted, 0.25);
            (2.0 * iqr / (pooled.len() as f64).cbrt()).max((hi - lo) / 400.0)
        }
    };
    let num_bins = (((hi - lo) / width).ceil() as usize).max(1);
    let centers: Vec<f64> = (0..num_bins)
        .map(|i| lo + (i as f64 + 0.5) * width)
        .collect();
    let hist_of = |samples: &[f64]| -> Histogram {
        let mut counts = vec![0usize; num_bins];
        for &x in samples {
            let idx = (((x - lo) / width) as usize).min(num_bins - 1);
            counts[idx] += 1;
        }
        Histogram {
            bin_centers: centers.clone(),
            densities: counts
                .iter()
                .map(|&c| c as f64 / (samples.len() as f64 * width))
                .collect(),
            bin_width: width,
            num_samples: samples.len(),
            degenerate: false,
        }
    };
    let marginals: Vec<Histogram> = samples_db.iter().map(|s| hist_of(s)).collect();
    let mixture_densities: Vec<f64> = (0..num_bins)
        .map(|b| marginals.iter().map(|m| m.densities[b]).sum::<f64>() / dim as f64)
        .collect();
    let mixture = Histogram {
        bin_centers: centers,
        densities: mixture_densities,
        bin_width: width,
        num_samples: pooled.len(),
        degenerate: false,
    };
    let mean_pp = spectra.iter().map(peak_to_peak_db).sum::<f64>() / n as f64;
    let mixture_skewness = skewness(&pooled);
    Ok(OrderStatsSummary {
        samples_db,
        marginals,
        mixture,
        mean_peak_to_peak_db: mean_pp,
        mixture_skewness,
        max_abs_gain_sum: max_abs_sum,
    })
}

/// Draws one channel realization of a link: per-span SMD waveplates and
/// the lumped MDL element, in a fixed order.
pub fn draw_link_channel(
    link: &LinkStudy,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<SpanDescriptor>> {
    let modes = link.num_modes();
    let kappa = link.fiber.kappa_s_per_sqrt_m();
    let wp_len_m = link.fiber.waveplate_length_km * 1e3;
    let mut spans = Vec::with_capacity(link.num_spans);
    for _ in 0..link.num_spans {
        let waveplates = if kappa > 0.0 {
            (0..link.fiber.num_waveplates())
                .map(|_| {
                    let delays = calibrate_smd_delays(kappa, wp_len_m, modes, rng)?;
                    make_section(GainVector::zeros(modes)?, delays, 0.0, rng)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mdl_element = if link.element_sigma_g > 0.0 {
            let mut el = lumped_mdl_element(link.element_sigma_g, modes, rng)?;
            if link.element_mean_gain_neper != 0.0 {
                el = crate::mdl::CouplingSection::from_parts(
                    el.v().clone(),
                    el.u().clone(),
                    el.gains().clone(),
                    DelayVector::zeros(modes)?,
                    link.element_mean_gain_neper,
                )?;
            }
            Some(el)
        } else {
            None
        };
        spans.push(SpanDescriptor {
            fiber: link.fiber,
            waveplates,
            mdl_element,
            amplifier: link.amplifier,
        });
    }
    Ok(spans)
}

/// Closed-form equalized-ASE SNR through a recorded linear channel.
///
/// For every amplifier k the zero-forced noise transfer is
/// T_k(w) = H_total(w)^-1 H_{k->rx}(w) = H_{1->k}(w)^-1, so the equalized
/// ASE covariance is sum_k S_k T_k T_k^H. Noise powers integrate its
/// diagonal over the matched-filter (raised-cosine) band of the CUT; the
/// post-equalization signal is MDL-free at the configured channel power.
pub fn linear_snr_oracle(
    record: &ChannelRecord,
    wdm: &WdmConfig,
    num_cores: usize,
    cut_channel: usize,
    grid_points: usize,
) -> Result<Vec<SnrPowers>> {
    let dim = record.num_modes();
    if dim != 2 * num_cores {
        return Err(Error::DimensionMismatch(format!(
            "record has {dim} modes, expected {}",
            2 * num_cores
        )));
    }
    if cut_channel >= wdm.num_channels {
        return Err(Error::InvalidDimension(format!(
            "cut channel {cut_channel} out of range"
        )));
    }
    // Dispersion and amplifier phases are scalar and cancel inside
    // T_k T_k^H; the covariance varies with frequency only through section
    // delays. Collapse the grid when every section is delay-free.
    let flat = record.elements().iter().all(|el| match el {
        LinkElement::Section(s) => s.delays().is_zero(),
        _ => true,
    });
    let f_c = wdm.channel_offset_hz(cut_channel);
    let band = wdm.symbol_rate_baud * (1.0 + wdm.rolloff);
    let (freqs, weights): (Vec<f64>, Vec<f64>) = if flat || grid_points == 1 {
        (vec![f_c], vec![1.0])
    } else {
        let g = grid_points.max(3);
        let freqs: Vec<f64> = (0..g)
            .map(|i| f_c - band / 2.0 + band * i as f64 / (g - 1) as f64)
            .collect();
        let mut w: Vec<f64> = freqs
            .iter()
            .map(|&f| rc_power_weight(f - f_c, wdm.symbol_rate_baud, wdm.rolloff))
            .collect();
        let total: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= total;
        }
        (freqs, w)
    };

    let eye = DMatrix::<Complex64>::identity(dim, dim);
    let mut partial: Vec<DMatrix<Complex64>> = vec![eye; freqs.len()];
    let mut cov: Vec<DMatrix<Complex64>> = vec![DMatrix::zeros(dim, dim); freqs.len()];
    for el in record.elements() {
        match el {
            LinkElement::Fiber {
                alpha_np_per_m,
                beta2_s2_per_m,
                length_m,
            } => {
                for (i, &f) in freqs.iter().enumerate() {
                    let w = 2.0 * std::f64::consts::PI * f;
                    let amp = (-alpha_np_per_m * length_m / 2.0).exp();
                    let phase = 0.5 * beta2_s2_per_m * w * w * length_m;
                    partial[i] *= Complex64::from_polar(amp, phase);
                }
            }
            LinkElement::Section(s) => {
                for (i, &f) in freqs.iter().enumerate() {
                    let w = 2.0 * std::f64::consts::PI * f;
                    partial[i] = crate::mdl::section_response(s, w) * &partial[i];
                }
            }
            LinkElement::Amplifier {
                field_gain,
                ase_psd_w_per_hz,
            } => {
                for p in partial.iter_mut() {
                    *p *= Complex64::new(*field_gain, 0.0);
                }
                if *ase_psd_w_per_hz > 0.0 {
                    for (p, c) in partial.iter().zip(cov.iter_mut()) {
                        let inv = p.clone().try_inverse().ok_or(Error::Equalization {
                            freq_hz: f_c,
                            cond: f64::INFINITY,
                        })?;
                        let contrib = &inv * inv.adjoint();
                        *c += contrib * Complex64::new(*ase_psd_w_per_hz, 0.0);
                    }
                }
            }
        }
    }

    let p_ch = wdm.channel_power_w();
    let rs = wdm.symbol_rate_baud;
    let out = (0..num_cores)
        .map(|core| {
            let mut n = [0.0f64; 2];
            for (pol, nn) in n.iter_mut().enumerate() {
                let row = core * 2 + pol;
                *nn = rs
                    * cov
                        .iter()
                        .zip(&weights)
                        .map(|(c, &w)| c[(row, row)].re * w)
                        .sum::<f64>();
            }
            SnrPowers {
                p_x_w: p_ch / 2.0,
                p_y_w: p_ch / 2.0,
                n_x_w: n[0],
                n_y_w: n[1],
            }
        })
        .collect();
    Ok(out)
}

fn tailor_spans(spans: &mut [SpanDescriptor], tag: ScenarioTag, link: &LinkStudy) {
    for span in spans.iter_mut() {
        span.fiber.gamma_eff_per_w_km = match tag {
            ScenarioTag::Ase => 0.0,
            _ => link.fiber.gamma_eff_per_w_km,
        };
        span.amplifier.ase_enabled = !matches!(tag, ScenarioTag::Nli);
    }
}

/// Runs one link-study realization; returns one record per (tag, core).
fn realize_link(
    scenario: &Scenario,
    sweep_idx: usize,
    sweep_value: Option<f64>,
    r: u64,
) -> Result<Vec<SnrRecord>> {
    let link = scenario.link.as_ref().expect("validated link study");
    let f0 = link.f0_hz();
    let cut_ch = link.cut_channel();
    let cores: Vec<usize> = if scenario.record_all_cores {
        (0..link.num_cores).collect()
    } else {
        vec![link.sim.cut_core]
    };

    let mut ch_rng = substream(scenario.master_seed, sweep_idx, r, Role::Channel);
    let mut spans = draw_link_channel(link, &mut ch_rng)?;

    let mut out = Vec::new();
    match scenario.engine {
        EngineKind::MatrixOracle => {
            tailor_spans(&mut spans, ScenarioTag::Ase, link);
            let record = record_from_spans(&spans, link.num_modes(), f0);
            let powers = linear_snr_oracle(
                &record,
                &link.wdm,
                link.num_cores,
                cut_ch,
                link.sim.oracle_grid_points,
            )?;
            for &core in &cores {
                out.push(SnrRecord {
                    realization_id: r,
                    core_index: core,
                    tag: ScenarioTag::Ase,
                    sweep_value,
                    powers: powers[core],
                });
            }
        }
        EngineKind::Ssfm => {
            let mut sym_rng = substream(scenario.master_seed, sweep_idx, r, Role::Symbols);
            let (tx, frame) = generate_wdm(&link.wdm, link.num_cores, f0, &mut sym_rng)?;
            for tag in scenario.tags.expand() {
                tailor_spans(&mut spans, tag, link);
                let mut ase_rng = substream(scenario.master_seed, sweep_idx, r, Role::Ase);
                let (rx, record) = run_link(&tx, &spans, &link.sim.controller, &mut ase_rng)?;
                let eq = zero_forcing_with_record(&rx, &record)?;
                for &core in &cores {
                    let (rx_x, rx_y) = demodulate_cut(&eq, &link.wdm, core, cut_ch)?;
                    let tx_x = frame.stream(core, 0, cut_ch);
                    let tx_y = frame.stream(core, 1, cut_ch);
                    let (rx_x, _) = carrier_phase_recover(&rx_x, tx_x)?;
                    let (rx_y, _) = carrier_phase_recover(&rx_y, tx_y)?;
                    let powers = estimate_snr(
                        [&rx_x, &rx_y],
                        [tx_x, tx_y],
                        Some(link.wdm.channel_power_w()),
                    )?;
                    out.push(SnrRecord {
                        realization_id: r,
                        core_index: core,
                        tag,
                        sweep_value,
                        powers,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn realize_spectrum(scenario: &Scenario, r: u64) -> Result<SingularSpectrum> {
    let spec = scenario.spectrum.as_ref().expect("validated spectrum study");
    let mut rng = substream(scenario.master_seed, 0, r, Role::Channel);
    let sections = (0..spec.num_sections)
        .map(|_| lumped_mdl_element(spec.sigma_g, spec.num_modes, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let tm = crate::mdl::compose(&sections, &[0.0])?;
    singular_gains(&tm.matrices()[0])
}

/// Runs a scenario's Monte-Carlo ensemble on `workers` threads. Results are
/// identical for any worker count.
pub fn run_ensemble(scenario: &Scenario, workers: usize) -> Result<EnsembleSummary> {
    scenario.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match scenario.study {
        Study::MdlSpectrum => run_spectrum_ensemble(scenario, &pool),
        Study::LinkSnr => run_link_ensemble(scenario, &pool),
    }
}

fn collect_failures<T>(
    results: Vec<(u64, Result<T>)>,
) -> Result<(Vec<(u64, T)>, usize, Vec<(u64, String)>)> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(v) => ok.push((r, v)),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let failed = failures.len();
    if failed as f64 > 0.01 * total as f64 {
        return Err(Error::Ensemble {
            failed,
            total,
            first: failures
                .first()
                .map(|(r, e)| format!("realization {r}: {e}"))
                .unwrap_or_default(),
        });
    }
    Ok((ok, failed, failures))
}

fn run_spectrum_ensemble(scenario: &Scenario, pool: &rayon::ThreadPool) -> Result<EnsembleSummary> {
    let n = scenario.num_realizations as u64;
    let results: Vec<(u64, Result<SingularSpectrum>)> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|r| (r, realize_spectrum(scenario, r)))
            .collect()
    });
    let (ok, num_failed, failures) = collect_failures(results)?;
    let spectra: Vec<SingularSpectrum> = ok.into_iter().map(|(_, s)| s).collect();
    let bin = scenario
        .spectrum
        .as_ref()
        .and_then(|s| (s.histogram_bin_db > 0.0).then_some(s.histogram_bin_db));
    let order = order_statistics_pdfs(&spectra, bin)?;
    Ok(EnsembleSummary {
        scenario: scenario.clone(),
        records: Vec::new(),
        moments: Vec::new(),
        histograms: vec![("mixture".to_string(), order.mixture.clone())],
        order_stats: Some(order),
        num_failed,
        failures,
    })
}

fn run_link_ensemble(scenario: &Scenario, pool: &rayon::ThreadPool) -> Result<EnsembleSummary> {
    let n = scenario.num_realizations as u64;
    let mut records = Vec::new();
    let mut num_failed = 0usize;
    let mut failures = Vec::new();

    for sweep_idx in 0..scenario.sweep.len() {
        let point = scenario.at_sweep_point(sweep_idx);
        let sweep_value = scenario.sweep.value(sweep_idx);
        let results: Vec<(u64, Result<Vec<SnrRecord>>)> = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|r| (r, realize_link(&point, sweep_idx, sweep_value, r)))
                .collect()
        });
        let (ok, failed, fail_list) = collect_failures(results)?;
        num_failed += failed;
        failures.extend(fail_list);
        for (_, recs) in ok {
            records.extend(recs);
        }
    }

    let moments = summarize_moments(scenario, &records);
    let histograms = build_histograms(scenario, &records);
    Ok(EnsembleSummary {
        scenario: scenario.clone(),
        records,
        moments,
        histograms,
        order_stats: None,
        num_failed,
        failures,
    })
}

fn cut_core(scenario: &Scenario) -> usize {
    scenario.link.as_ref().map(|l| l.sim.cut_core).unwrap_or(0)
}

fn group_keys(scenario: &Scenario) -> Vec<(Option<f64>, ScenarioTag)> {
    let tags = match scenario.engine {
        EngineKind::MatrixOracle => vec![ScenarioTag::Ase],
        EngineKind::Ssfm => scenario.tags.expand(),
    };
    let mut keys = Vec::new();
    for i in 0..scenario.sweep.len() {
        for &t in &tags {
            keys.push((scenario.sweep.value(i), t));
        }
    }
    keys
}

fn records_of(
    records: &[SnrRecord],
    core: usize,
    key: (Option<f64>, ScenarioTag),
) -> Vec<&SnrRecord> {
    records
        .iter()
        .filter(|r| r.core_index == core && r.tag == key.1 && r.sweep_value == key.0)
        .collect()
}

fn summarize_moments(scenario: &Scenario, records: &[SnrRecord]) -> Vec<MomentRow> {
    let core = cut_core(scenario);
    let mut rows = Vec::new();
    for key in group_keys(scenario) {
        let recs = records_of(records, core, key);
        if recs.is_empty() {
            continue;
        }
        let snr: Vec<f64> = recs.iter().map(|r| r.snr_db()).collect();
        let dx = delta_snr(&recs.iter().map(|r| r.snr_x_db()).collect::<Vec<_>>());
        let dy = delta_snr(&recs.iter().map(|r| r.snr_y_db()).collect::<Vec<_>>());
        let mut boot = substream(
            scenario.master_seed,
            0,
            u64::MAX - key.1 as u64,
            Role::Analysis,
        );
        let (mean_lo, mean_hi) = if snr.len() >= 2 {
            bootstrap_ci(&snr, mean, 1000, 0.95, &mut boot)
        } else {
            (snr[0], snr[0])
        };
        let (std_lo, std_hi) = if snr.len() >= 2 {
            bootstrap_ci(&snr, std_dev, 1000, 0.95, &mut boot)
        } else {
            (0.0, 0.0)
        };
        rows.push(MomentRow {
            tag: key.1,
            sweep_value: key.0,
            num_records: snr.len(),
            mean_snr_db: mean(&snr),
            std_snr_db: std_dev(&snr),
            skewness: skewness(&snr),
            mean_ci_db: (mean_lo, mean_hi),
            std_ci_db: (std_lo, std_hi),
            corr_xy: correlation(&dx, &dy),
        });
    }
    rows
}

fn build_histograms(scenario: &Scenario, records: &[SnrRecord]) -> Vec<(String, Histogram)> {
    let core = cut_core(scenario);
    let mut out = Vec::new();
    for key in group_keys(scenario) {
        let recs = records_of(records, core, key);
        if recs.len() < 30 {
            continue;
        }
        let snr: Vec<f64> = recs.iter().map(|r| r.snr_db()).collect();
        let deltas = delta_snr(&snr);
        if let Ok(h) = estimate_pdf(&deltas, Binning::FreedmanDiaconis) {
            let label = match key.0 {
                Some(v) => format!("{}_{v}/{}", scenario.sweep.variable_name(), key.1),
                None => key.1.to_string(),
            };
            out.push((label, h));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn delta_snr_basics() {
        let d = delta_snr(&[17.2, 16.8]);
        assert!((d[0] - 0.2).abs() < 1e-12);
        assert!((d[1] + 0.2).abs() < 1e-12);
        let c = delta_snr(&[5.0; 8]);
        assert!(c.iter().all(|&x| x == 0.0));
        let any = delta_snr(&[1.0, 2.5, 9.25, -3.125]);
        assert!(mean(&any).abs() < 1e-12);
    }

    #[test]
    fn order_stats_pooling_identity() {
        let mut rng = substream(60, 0, 0, Role::Channel);
        let spectra: Vec<SingularSpectrum> = (0..200)
            .map(|_| {
                let sections: Vec<_> = (0..16)
                    .map(|_| lumped_mdl_element(0.05, 4, &mut rng).unwrap())
                    .collect();
                let tm = crate::mdl::compose(&sections, &[0.0]).unwrap();
                singular_gains(&tm.matrices()[0]).unwrap()
            })
            .collect();
        let os = order_statistics_pdfs(&spectra, Some(0.05)).unwrap();
        assert_eq!(os.marginals.len(), 4);
        for b in 0..os.mixture.densities.len() {
            let avg: f64 = os.marginals.iter().map(|m| m.densities[b]).sum::<f64>() / 4.0;
            assert_eq!(os.mixture.densities[b], avg, "bin {b}");
        }
        assert!((os.mixture.integral() - 1.0).abs() < 1e-9);
        assert!(os.max_abs_gain_sum < 1e-9);
    }

    #[test]
    fn order_stats_identity_matrices_concentrate_at_zero() {
        let spectra: Vec<SingularSpectrum> = (0..50)
            .map(|_| {
                singular_gains(&nalgebra::DMatrix::<Complex64>::identity(4, 4)).unwrap()
            })
            .collect();
        let os = order_statistics_pdfs(&spectra, None).unwrap();
        for m in &os.marginals {
            let peak_center = m.bin_centers[m
                .densities
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0];
            assert!(peak_center.abs() < 1e-9);
        }
        assert_eq!(os.mean_peak_to_peak_db, 0.0);
    }

    #[test]
    fn oracle_single_amplifier_identity_channel() {
        // H = I with one amplifier at the receiver: N_p = S * R_s exactly.
        let mut record = ChannelRecord::new(2);
        let psd = 2.551e-17;
        record.push(LinkElement::Amplifier {
            field_gain: 1.0,
            ase_psd_w_per_hz: psd,
        });
        let wdm = WdmConfig {
            num_channels: 1,
            symbol_rate_baud: 64e9,
            spacing_hz: 75e9,
            symbols_per_block: 1024,
            power_per_channel_dbm: 5.0,
            rolloff: 0.1,
            samples_per_symbol: 0,
        };
        let p = linear_snr_oracle(&record, &wdm, 1, 0, 257).unwrap();
        assert!((p[0].n_x_w / (psd * 64e9) - 1.0).abs() < 1e-12);
        assert!((p[0].n_y_w / (psd * 64e9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_ensemble_is_deterministic_across_worker_counts() {
        let mut s = preset("fig1_smf").unwrap();
        s.num_realizations = 64;
        let a = run_ensemble(&s, 1).unwrap();
        let b = run_ensemble(&s, 4).unwrap();
        let oa = a.order_stats.unwrap();
        let ob = b.order_stats.unwrap();
        assert_eq!(oa.samples_db, ob.samples_db);
    }

    #[test]
    fn single_realization_has_no_histogram() {
        let mut s = preset("fig1_smf").unwrap();
        s.num_realizations = 1;
        let out = run_ensemble(&s, 1).unwrap();
        assert_eq!(out.order_stats.unwrap().samples_db[0].len(), 1);
    }
}
