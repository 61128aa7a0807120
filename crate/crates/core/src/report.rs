//! Result persistence and human-readable reporting: per-realization record
//! tables, moment summaries, histogram tables and the run manifest. Every
//! numeric column carries a units suffix in its header.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{RunManifest, Study};
use crate::ensemble::EnsembleSummary;
use crate::error::{Error, Result};
use crate::stats::Histogram;

const SCHEMA_VERSION: u32 = 1;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "-".to_string(),
    }
}

/// Writes one row per (realization, tag, core) record.
pub fn write_records_tsv(path: &Path, summary: &EnsembleSummary) -> Result<()> {
    let sweep_name = summary.scenario.sweep.variable_name();
    let mut text = String::new();
    text.push_str(
        "realization_id\tcore_index\tscenario_tag\tsweep_variable\tsweep_value\t\
         p_x_w\tp_y_w\tn_x_w\tn_y_w\tsnr_db\tsnr_x_db\tsnr_y_db\n",
    );
    let mut rows: Vec<_> = summary.records.iter().collect();
    rows.sort_by_key(|r| (r.realization_id, format!("{}", r.tag), r.core_index));
    for r in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.6}\t{:.6}\t{:.6}\n",
            r.realization_id,
            r.core_index,
            r.tag,
            sweep_name,
            fmt_opt(r.sweep_value),
            r.powers.p_x_w,
            r.powers.p_y_w,
            r.powers.n_x_w,
            r.powers.n_y_w,
            r.snr_db(),
            r.snr_x_db(),
            r.snr_y_db(),
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Moments table: one row per (sweep value, tag).
pub fn write_summary_tsv(path: &Path, summary: &EnsembleSummary) -> Result<()> {
    let mut text = String::new();
    match summary.scenario.study {
        Study::LinkSnr => {
            text.push_str(
                "scenario_tag\tsweep_variable\tsweep_value\tnum_records\tmean_snr_db\t\
                 std_snr_db\tskewness\tmean_ci_lo_db\tmean_ci_hi_db\tstd_ci_lo_db\t\
                 std_ci_hi_db\tcorr_xy\n",
            );
            let sweep_name = summary.scenario.sweep.variable_name();
            for m in &summary.moments {
                text.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    m.tag,
                    sweep_name,
                    fmt_opt(m.sweep_value),
                    m.num_records,
                    m.mean_snr_db,
                    m.std_snr_db,
                    m.skewness,
                    m.mean_ci_db.0,
                    m.mean_ci_db.1,
                    m.std_ci_db.0,
                    m.std_ci_db.1,
                    m.corr_xy,
                ));
            }
        }
        Study::MdlSpectrum => {
            text.push_str("metric\tvalue\n");
            if let Some(os) = &summary.order_stats {
                text.push_str(&format!(
                    "mean_peak_to_peak_db\t{:.6}\n",
                    os.mean_peak_to_peak_db
                ));
                text.push_str(&format!("mixture_skewness\t{:.6}\n", os.mixture_skewness));
                text.push_str(&format!(
                    "max_abs_gain_sum_neper\t{:.3e}\n",
                    os.max_abs_gain_sum
                ));
                text.push_str(&format!(
                    "num_realizations\t{}\n",
                    os.samples_db.first().map(|s| s.len()).unwrap_or(0)
                ));
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_histogram_tsv(path: &Path, h: &Histogram) -> Result<()> {
    let mut text = String::from("bin_center_db\tdensity_per_db\n");
    for (c, d) in h.bin_centers.iter().zip(&h.densities) {
        text.push_str(&format!("{c:.6}\t{d:.8e}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Persists a completed run: records, summary, histogram tables and the
/// manifest. Returns the manifest.
pub fn persist_run(
    summary: &EnsembleSummary,
    out_dir: &Path,
    workers: usize,
    wall_time_s: f64,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let records_file = out_dir.join("records.tsv");
    let summary_file = out_dir.join("summary.tsv");
    write_records_tsv(&records_file, summary)?;
    write_summary_tsv(&summary_file, summary)?;

    let mut histogram_files = Vec::new();
    for (label, hist) in &summary.histograms {
        let file = out_dir.join(format!("hist_{}.tsv", sanitize(label)));
        write_histogram_tsv(&file, hist)?;
        histogram_files.push(file.file_name().unwrap().to_string_lossy().into_owned());
    }
    if let Some(os) = &summary.order_stats {
        for (j, m) in os.marginals.iter().enumerate() {
            let file = out_dir.join(format!("hist_marginal_{j}.tsv"));
            write_histogram_tsv(&file, m)?;
            histogram_files.push(file.file_name().unwrap().to_string_lossy().into_owned());
        }
    }

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        workers,
        records_file: "records.tsv".into(),
        summary_file: "summary.tsv".into(),
        histogram_files,
        wall_time_s,
        num_realizations_failed: summary.num_failed,
        scenario: summary.scenario.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Renders a human-readable report of a completed run from its manifest.
/// Incomplete runs are flagged, not hidden.
pub fn render_report(manifest_path: &Path) -> Result<String> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_default();
    let mut out = String::new();
    out.push_str(&format!(
        "run: {} (schema v{}, code v{})\n",
        manifest.scenario.name, manifest.schema_version, manifest.code_version
    ));
    out.push_str(&format!(
        "seed: {}  realizations: {}  workers: {}  wall: {:.1} s\n",
        manifest.scenario.master_seed,
        manifest.scenario.num_realizations,
        manifest.workers,
        manifest.wall_time_s
    ));
    if manifest.num_realizations_failed > 0 {
        out.push_str(&format!(
            "WARNING: partial run - {} realizations failed\n",
            manifest.num_realizations_failed
        ));
    }

    let summary_path = dir.join(&manifest.summary_file);
    let summary_text = fs::read_to_string(&summary_path).map_err(|e| {
        Error::Config(format!(
            "incomplete run: missing {} ({e})",
            summary_path.display()
        ))
    })?;
    out.push_str("\n== summary ==\n");
    out.push_str(&summary_text);

    if !manifest.histogram_files.is_empty() {
        out.push_str("\n== histogram tables ==\n");
        for f in &manifest.histogram_files {
            let p = dir.join(f);
            let status = if p.exists() { "ok" } else { "MISSING" };
            out.push_str(&format!("{f}\t{status}\n"));
        }
    }
    let records_path = dir.join(&manifest.records_file);
    if !records_path.exists() {
        out.push_str("\nWARNING: records file missing - partial report\n");
    } else {
        let lines = fs::read_to_string(&records_path)?.lines().count();
        out.push_str(&format!("\nrecords: {} rows\n", lines.saturating_sub(1)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::ensemble::run_ensemble;

    #[test]
    fn persist_and_report_round_trip() {
        let mut s = preset("fig1_smf").unwrap();
        s.num_realizations = 50;
        let summary = run_ensemble(&s, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("ccmcf_report_test_{}", std::process::id()));
        let manifest = persist_run(&summary, &dir, 2, 1.0).unwrap();
        assert_eq!(manifest.scenario, s);
        let text = render_report(&dir.join("manifest.json")).unwrap();
        assert!(text.contains("fig1_smf"));
        assert!(text.contains("mean_peak_to_peak_db"));
        assert!(!text.contains("WARNING"));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn report_on_missing_manifest_errors() {
        assert!(render_report(Path::new("/nonexistent/manifest.json")).is_err());
    }

    #[test]
    fn incomplete_run_is_flagged() {
        let mut s = preset("fig1_smf").unwrap();
        s.num_realizations = 40;
        let summary = run_ensemble(&s, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("ccmcf_partial_test_{}", std::process::id()));
        persist_run(&summary, &dir, 2, 1.0).unwrap();
        fs::remove_file(dir.join("records.tsv")).unwrap();
        let text = render_report(&dir.join("manifest.json")).unwrap();
        assert!(text.contains("WARNING"), "partial run not flagged:\n{text}");
        fs::remove_dir_all(&dir).ok();
    }
}
