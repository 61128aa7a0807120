//! Scenario schema, validation, built-in presets and run manifests.
//!
//! Scenarios are human-editable TOML with units spelled out in the key
//! names. A scenario fully determines a run given its master seed; the run
//! manifest snapshots it so any run can be reproduced bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdl::NEPER_TO_DB;
use crate::ssfm::{AmplifierConfig, FiberConfig, StepController, C_LIGHT};
use crate::transceiver::WdmConfig;

/// What kind of Monte-Carlo study the scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    /// Full link: transmit, propagate, equalize, detect, estimate SNR.
    LinkSnr,
    /// Matrix-only waveplate cascade: singular-value statistics.
    MdlSpectrum,
}

/// Noise scenario of a link run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioTag {
    Ase,
    Nli,
    Both,
}

impl std::fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioTag::Ase => write!(f, "ase"),
            ScenarioTag::Nli => write!(f, "nli"),
            ScenarioTag::Both => write!(f, "both"),
        }
    }
}

/// Which tags to run; `All` evaluates ASE/NLI/BOTH on the same channel,
/// symbol and noise realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TagSelect {
    Ase,
    Nli,
    #[default]
    Both,
    All,
}

impl TagSelect {
    pub fn expand(&self) -> Vec<ScenarioTag> {
        match self {
            TagSelect::Ase => vec![ScenarioTag::Ase],
            TagSelect::Nli => vec![ScenarioTag::Nli],
            TagSelect::Both => vec![ScenarioTag::Both],
            TagSelect::All => vec![ScenarioTag::Ase, ScenarioTag::Nli, ScenarioTag::Both],
        }
    }
}

/// Per-realization evaluation engine for link studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    #[default]
    Ssfm,
    /// Closed-form ASE accumulation through the recorded channel; no
    /// time-domain simulation (linear scenarios only).
    MatrixOracle,
}

/// Sweep descriptor; one sub-ensemble per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "variable", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Sweep {
    #[default]
    None,
    Smd {
        values_ps_per_sqrt_km: Vec<f64>,
    },
    MdlPeakToPeak {
        values_db: Vec<f64>,
    },
    Channels {
        values: Vec<usize>,
        powers_dbm: Vec<f64>,
    },
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::None => 1,
            Sweep::Smd {
                values_ps_per_sqrt_km,
            } => values_ps_per_sqrt_km.len(),
            Sweep::MdlPeakToPeak { values_db } => values_db.len(),
            Sweep::Channels { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Numeric value of sweep point `i` (for tables).
    pub fn value(&self, i: usize) -> Option<f64> {
        match self {
            Sweep::None => None,
            Sweep::Smd {
                values_ps_per_sqrt_km,
            } => Some(values_ps_per_sqrt_km[i]),
            Sweep::MdlPeakToPeak { values_db } => Some(values_db[i]),
            Sweep::Channels { values, .. } => Some(values[i] as f64),
        }
    }

    pub fn variable_name(&self) -> &'static str {
        match self {
            Sweep::None => "none",
            Sweep::Smd { .. } => "smd_ps_per_sqrt_km",
            Sweep::MdlPeakToPeak { .. } => "mdl_pp_db",
            Sweep::Channels { .. } => "num_channels",
        }
    }
}

/// Matrix-only study parameters (waveplate cascade of K sections).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumStudy {
    /// 2N: polarizations times cores.
    pub num_modes: usize,
    pub num_sections: usize,
    /// Per-section alternating gain magnitude, nepers.
    pub sigma_g: f64,
    /// Fixed histogram bin width in dB; 0 selects Freedman-Diaconis.
    #[serde(default)]
    pub histogram_bin_db: f64,
}

/// Receiver/solver knobs for link studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    #[serde(default)]
    pub controller: StepController,
    #[serde(default)]
    pub cut_core: usize,
    /// Defaults to the center channel.
    #[serde(default)]
    pub cut_channel: Option<usize>,
    #[serde(default = "default_wavelength_nm")]
    pub center_wavelength_nm: f64,
    #[serde(default = "default_oracle_points")]
    pub oracle_grid_points: usize,
}

fn default_wavelength_nm() -> f64 {
    1550.0
}

fn default_oracle_points() -> usize {
    257
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            controller: StepController::default(),
            cut_core: 0,
            cut_channel: None,
            center_wavelength_nm: default_wavelength_nm(),
            oracle_grid_points: default_oracle_points(),
        }
    }
}

/// Full link description for SNR studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkStudy {
    pub num_cores: usize,
    pub num_spans: usize,
    /// Lumped MDL element strength: alternating per-mode gains of this
    /// magnitude (nepers); 0 disables the elements.
    pub element_sigma_g: f64,
    #[serde(default)]
    pub element_mean_gain_neper: f64,
    pub fiber: FiberConfig,
    pub amplifier: AmplifierConfig,
    pub wdm: WdmConfig,
    #[serde(default)]
    pub sim: SimParams,
}

impl LinkStudy {
    pub fn num_modes(&self) -> usize {
        self.num_cores * 2
    }

    pub fn f0_hz(&self) -> f64 {
        C_LIGHT / (self.sim.center_wavelength_nm * 1e-9)
    }

    pub fn cut_channel(&self) -> usize {
        self.sim.cut_channel.unwrap_or(self.wdm.center_channel())
    }
}

/// A complete, self-contained simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub study: Study,
    #[serde(default)]
    pub tags: TagSelect,
    #[serde(default)]
    pub engine: EngineKind,
    pub num_realizations: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub record_all_cores: bool,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub spectrum: Option<SpectrumStudy>,
    #[serde(default)]
    pub link: Option<LinkStudy>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_realizations == 0 {
            problems.push("num_realizations must be >= 1".to_string());
        }
        if self.sweep.is_empty() {
            problems.push("sweep value list is empty".to_string());
        }
        match self.study {
            Study::MdlSpectrum => {
                match &self.spectrum {
                    None => problems.push("mdl-spectrum study needs a [spectrum] block".into()),
                    Some(s) => {
                        if s.num_modes < 2 || s.num_modes % 2 != 0 {
                            problems.push(format!(
                                "spectrum.num_modes must be even and >= 2, got {}",
                                s.num_modes
                            ));
                        }
                        if s.num_sections == 0 {
                            problems.push("spectrum.num_sections must be >= 1".into());
                        }
                        if s.sigma_g < 0.0 {
                            problems
                                .push(format!("spectrum.sigma_g must be >= 0, got {}", s.sigma_g));
                        }
                        if s.histogram_bin_db < 0.0 {
                            problems.push("spectrum.histogram_bin_db must be >= 0".into());
                        }
                    }
                }
                if !matches!(self.sweep, Sweep::None) {
                    problems.push("sweeps apply to link-snr studies only".into());
                }
            }
            Study::LinkSnr => match &self.link {
                None => problems.push("link-snr study needs a [link] block".into()),
                Some(l) => {
                    if l.num_cores == 0 {
                        problems.push("link.num_cores must be >= 1".into());
                    }
                    if l.num_spans == 0 {
                        problems.push("link.num_spans must be >= 1".into());
                    }
                    if l.element_sigma_g < 0.0 {
                        problems.push(format!(
                            "link.element_sigma_g must be >= 0, got {}",
                            l.element_sigma_g
                        ));
                    }
                    if l.sim.cut_core >= l.num_cores {
                        problems.push(format!(
                            "sim.cut_core ({}) out of range for {} cores",
                            l.sim.cut_core, l.num_cores
                        ));
                    }
                    if let Some(ch) = l.sim.cut_channel {
                        if ch >= l.wdm.num_channels {
                            problems.push(format!(
                                "sim.cut_channel ({ch}) out of range for {} channels",
                                l.wdm.num_channels
                            ));
                        }
                    }
                    if l.sim.oracle_grid_points == 0 {
                        problems.push("sim.oracle_grid_points must be >= 1".into());
                    }
                    if !(l.sim.center_wavelength_nm > 0.0) {
                        problems.push("sim.center_wavelength_nm must be > 0".into());
                    }
                    for e in [
                        l.fiber.validate(),
                        l.amplifier.validate(),
                        l.wdm.validate(),
                        l.sim.controller.validate(),
                    ] {
                        if let Err(Error::Validation(v)) = e {
                            problems.extend(v);
                        } else if let Err(e) = e {
                            problems.push(e.to_string());
                        }
                    }
                    if let Sweep::Channels { values, powers_dbm } = &self.sweep {
                        if values.len() != powers_dbm.len() {
                            problems.push("channel sweep needs one power per channel count".into());
                        }
                        if values.iter().any(|&v| v == 0 || v % 2 == 0) {
                            problems.push("channel sweep counts must be odd and positive".into());
                        }
                    }
                    if matches!(self.engine, EngineKind::MatrixOracle)
                        && !matches!(self.tags, TagSelect::Ase)
                    {
                        problems.push(
                            "the matrix oracle engine evaluates ASE-only scenarios (set tags = \"ase\")"
                                .into(),
                        );
                    }
                }
            },
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Concrete scenario for one sweep point (identity when no sweep).
    pub fn at_sweep_point(&self, index: usize) -> Scenario {
        let mut s = self.clone();
        if let Some(link) = s.link.as_mut() {
            match &self.sweep {
                Sweep::None => {}
                Sweep::Smd {
                    values_ps_per_sqrt_km,
                } => {
                    link.fiber.smd_coeff_ps_per_sqrt_km = values_ps_per_sqrt_km[index];
                }
                Sweep::MdlPeakToPeak { values_db } => {
                    link.element_sigma_g = values_db[index] / (2.0 * NEPER_TO_DB);
                }
                Sweep::Channels { values, powers_dbm } => {
                    link.wdm.num_channels = values[index];
                    link.wdm.power_per_channel_dbm = powers_dbm[index];
                }
            }
        }
        s
    }
}

/// Parses a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Loads a scenario from a `preset:NAME` reference or a TOML file path.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    if let Some(name) = spec.strip_prefix("preset:") {
        return preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}'; try `ccmcf presets`")));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn serialize_scenario(s: &Scenario) -> Result<String> {
    toml::to_string_pretty(s).map_err(|e| Error::Parse(e.to_string()))
}

/// Manifest written next to the run outputs; re-running it reproduces the
/// records bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub created_unix_s: u64,
    pub workers: usize,
    pub records_file: String,
    pub summary_file: String,
    pub histogram_files: Vec<String>,
    pub wall_time_s: f64,
    pub num_realizations_failed: usize,
    pub scenario: Scenario,
}

// ---------------------------------------------------------------------------
// Presets.
// ---------------------------------------------------------------------------

fn paper_fiber() -> FiberConfig {
    FiberConfig {
        attenuation_db_per_km: 0.2,
        dispersion_ps_per_nm_km: 17.0,
        gamma_eff_per_w_km: 0.3167,
        smd_coeff_ps_per_sqrt_km: 0.0,
        waveplate_length_km: 0.1,
        span_length_km: 100.0,
    }
}

fn paper_amp() -> AmplifierConfig {
    AmplifierConfig {
        gain_db: 20.0,
        noise_figure_db: 6.0,
        ase_enabled: true,
    }
}

fn paper_wdm() -> WdmConfig {
    WdmConfig {
        num_channels: 5,
        symbol_rate_baud: 64e9,
        spacing_hz: 75e9,
        symbols_per_block: 65536,
        power_per_channel_dbm: 5.0,
        rolloff: 0.1,
        samples_per_symbol: 16,
    }
}

/// sigma_g of the four-core 1 dB link element: 1.0 / (2 * 4.343).
/// The often-quoted sigma_g^2 = 0.015 pairing overshoots the cascaded
/// Eq.-(3) link MDL by 6.4%; the exact-dB mapping reproduces it.
pub const MCF_ELEMENT_SIGMA_G: f64 = 1.0 / (2.0 * NEPER_TO_DB);
/// sigma_g of the single-mode 0.5 dB element: 0.5 / (2 * 4.343).
pub const SMF_ELEMENT_SIGMA_G: f64 = 0.5 / (2.0 * NEPER_TO_DB);

fn mcf_link() -> LinkStudy {
    LinkStudy {
        num_cores: 4,
        num_spans: 10,
        element_sigma_g: MCF_ELEMENT_SIGMA_G,
        element_mean_gain_neper: 0.0,
        fiber: paper_fiber(),
        amplifier: paper_amp(),
        wdm: paper_wdm(),
        sim: SimParams::default(),
    }
}

fn smf_link() -> LinkStudy {
    let mut l = mcf_link();
    l.num_cores = 1;
    l.element_sigma_g = SMF_ELEMENT_SIGMA_G;
    // Single core: full (Manakov-averaged) nonlinear coefficient and the
    // single-mode optimal power.
    l.fiber.gamma_eff_per_w_km = 1.267;
    l.wdm.power_per_channel_dbm = 3.0;
    l
}

fn link_scenario(name: &str, link: LinkStudy, realizations: usize) -> Scenario {
    Scenario {
        name: name.to_string(),
        study: Study::LinkSnr,
        tags: TagSelect::All,
        engine: EngineKind::Ssfm,
        num_realizations: realizations,
        master_seed: 1,
        record_all_cores: false,
        sweep: Sweep::None,
        spectrum: None,
        link: Some(link),
    }
}

/// Desk-scale shrink: 2 spans, 3 channels, 8192 symbols, 100 realizations.
fn desk(mut s: Scenario) -> Scenario {
    s.name.push_str("_desk");
    s.num_realizations = 100;
    if let Some(link) = s.link.as_mut() {
        link.num_spans = 2;
        link.wdm.num_channels = 3;
        link.wdm.symbols_per_block = 8192;
        link.wdm.samples_per_symbol = 0; // auto: 8 for 3x75 GHz
    }
    s
}

/// Built-in scenario presets reproducing the reference configurations.
pub fn preset(name: &str) -> Option<Scenario> {
    let s = match name {
        "fig1_smf" => Scenario {
            name: "fig1_smf".into(),
            study: Study::MdlSpectrum,
            tags: TagSelect::Ase,
            engine: EngineKind::MatrixOracle,
            num_realizations: 10_000,
            master_seed: 1,
            record_all_cores: false,
            sweep: Sweep::None,
            spectrum: Some(SpectrumStudy {
                num_modes: 2,
                num_sections: 256,
                sigma_g: 0.0076,
                histogram_bin_db: 0.0,
            }),
            link: None,
        },
        "fig1_mcf" => Scenario {
            name: "fig1_mcf".into(),
            study: Study::MdlSpectrum,
            tags: TagSelect::Ase,
            engine: EngineKind::MatrixOracle,
            num_realizations: 10_000,
            master_seed: 1,
            record_all_cores: false,
            sweep: Sweep::None,
            spectrum: Some(SpectrumStudy {
                num_modes: 8,
                num_sections: 256,
                sigma_g: 0.014,
                histogram_bin_db: 0.0,
            }),
            link: None,
        },
        "fig3a_link" => link_scenario("fig3a_link", mcf_link(), 500),
        "fig3b_smf" => link_scenario("fig3b_smf", smf_link(), 500),
        "fig7_smd" => {
            let mut s = link_scenario("fig7_smd", mcf_link(), 500);
            s.sweep = Sweep::Smd {
                values_ps_per_sqrt_km: vec![0.0, 2.0, 4.0, 8.0, 12.0],
            };
            s
        }
        "fig9_ch_smd0" | "fig9_ch_smd8" => {
            let smd = if name.ends_with('8') { 8.0 } else { 0.0 };
            let mut link = mcf_link();
            link.fiber.smd_coeff_ps_per_sqrt_km = smd;
            link.wdm.samples_per_symbol = 0; // auto per channel count
            let mut s = link_scenario(name, link, 500);
            s.tags = TagSelect::Nli;
            s.sweep = Sweep::Channels {
                values: vec![1, 5, 21],
                powers_dbm: vec![5.5, 5.0, 4.6],
            };
            s
        }
        "fig10_mdl" => {
            let mut link = mcf_link();
            link.fiber.smd_coeff_ps_per_sqrt_km = 2.0;
            let mut s = link_scenario("fig10_mdl", link, 500);
            s.sweep = Sweep::MdlPeakToPeak {
                values_db: vec![0.0, 1.0, 2.0, 3.0],
            };
            s
        }
        "fig3a_desk" => desk(link_scenario("fig3a", mcf_link(), 500)),
        "fig3b_desk" => desk(link_scenario("fig3b", smf_link(), 500)),
        "fig7_desk" => {
            let mut s = desk(link_scenario("fig7", mcf_link(), 500));
            s.sweep = Sweep::Smd {
                values_ps_per_sqrt_km: vec![0.0, 8.0],
            };
            s
        }
        "fig10_desk" => {
            let mut link = mcf_link();
            link.fiber.smd_coeff_ps_per_sqrt_km = 2.0;
            let mut s = desk(link_scenario("fig10", link, 500));
            s.sweep = Sweep::MdlPeakToPeak {
                values_db: vec![0.0, 1.0, 2.0, 3.0],
            };
            s
        }
        _ => return None,
    };
    Some(s)
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "fig1_smf",
        "fig1_mcf",
        "fig3a_link",
        "fig3b_smf",
        "fig7_smd",
        "fig9_ch_smd0",
        "fig9_ch_smd8",
        "fig10_mdl",
        "fig3a_desk",
        "fig3b_desk",
        "fig7_desk",
        "fig10_desk",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in preset_names() {
            let s = preset(name).unwrap();
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn preset_fig1_mcf_parameters() {
        let s = preset("fig1_mcf").unwrap();
        let spec = s.spectrum.unwrap();
        assert_eq!(spec.num_modes, 8);
        assert_eq!(spec.num_sections, 256);
        assert_eq!(spec.sigma_g, 0.014);
        assert_eq!(s.num_realizations, 10_000);
    }

    #[test]
    fn preset_fig3a_parameters() {
        let s = preset("fig3a_link").unwrap();
        let l = s.link.unwrap();
        assert_eq!(l.num_cores, 4);
        assert_eq!(l.num_spans, 10);
        assert!((l.element_sigma_g - 1.0 / (2.0 * NEPER_TO_DB)).abs() < 1e-12);
        assert_eq!(l.wdm.num_channels, 5);
        assert_eq!(l.wdm.symbol_rate_baud, 64e9);
        assert_eq!(l.wdm.spacing_hz, 75e9);
        assert_eq!(l.wdm.power_per_channel_dbm, 5.0);
        assert_eq!(l.fiber.smd_coeff_ps_per_sqrt_km, 0.0);
    }

    #[test]
    fn desk_presets_are_shrunk() {
        let s = preset("fig3a_desk").unwrap();
        let l = s.link.unwrap();
        assert_eq!(l.num_spans, 2);
        assert_eq!(l.wdm.num_channels, 3);
        assert_eq!(l.wdm.symbols_per_block, 8192);
        assert_eq!(s.num_realizations, 100);
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        for name in preset_names() {
            let s = preset(name).unwrap();
            let text = serialize_scenario(&s).unwrap();
            let back = parse_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
            assert_eq!(back, s, "round trip changed {name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let s = preset("fig3a_link").unwrap();
        let mut text = serialize_scenario(&s).unwrap();
        text.push_str("\nunknown_key = 3\n");
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn physically_inconsistent_configs_rejected() {
        let mut s = preset("fig3a_link").unwrap();
        s.link.as_mut().unwrap().wdm.spacing_hz = 60e9;
        assert!(s.validate().is_err());

        let mut s = preset("fig3a_link").unwrap();
        s.link.as_mut().unwrap().fiber.span_length_km = -1.0;
        assert!(s.validate().is_err());

        let mut s = preset("fig3a_link").unwrap();
        s.link.as_mut().unwrap().wdm.num_channels = 4;
        assert!(s.validate().is_err());
    }

    #[test]
    fn sweep_points_rewrite_configs() {
        let s = preset("fig10_mdl").unwrap();
        let p1 = s.at_sweep_point(1);
        let sigma = p1.link.unwrap().element_sigma_g;
        assert!((sigma - 1.0 / (2.0 * NEPER_TO_DB)).abs() < 1e-12);
        let p0 = s.at_sweep_point(0);
        assert_eq!(p0.link.unwrap().element_sigma_g, 0.0);

        let s = preset("fig7_smd").unwrap();
        let p = s.at_sweep_point(3);
        assert_eq!(p.link.unwrap().fiber.smd_coeff_ps_per_sqrt_km, 8.0);
    }
}
