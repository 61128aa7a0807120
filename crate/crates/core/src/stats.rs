//! Histogram estimation, sample moments, correlation, bootstrap intervals
//! and distribution-distance helpers used by the ensemble statistics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density histogram: bin centers plus densities integrating to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_centers: Vec<f64>,
    pub densities: Vec<f64>,
    pub bin_width: f64,
    pub num_samples: usize,
    /// Set when the input was degenerate (all samples equal).
    pub degenerate: bool,
}

impl Histogram {
    /// Integral of the density over the binned support.
    pub fn integral(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width
    }
}

/// Binning policy for [`estimate_pdf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    /// Freedman-Diaconis bin width from the interquartile range.
    FreedmanDiaconis,
    /// Fixed bin width (figure reproduction).
    FixedWidth(f64),
}

/// Normalized density histogram of a sample.
pub fn estimate_pdf(samples: &[f64], binning: Binning) -> Result<Histogram> {
    if samples.len() < 30 {
        return Err(Error::Empty(format!(
            "need at least 30 samples for a PDF estimate, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = sorted[0];
    let max = *sorted.last().unwrap();
    if max == min {
        // Degenerate sample: all the mass in one bin of nominal unit width.
        return Ok(Histogram {
            bin_centers: vec![min],
            densities: vec![1.0],
            bin_width: 1.0,
            num_samples: samples.len(),
            degenerate: true,
        });
    }
    let width = match binning {
        Binning::FixedWidth(w) if w > 0.0 => w,
        Binning::FixedWidth(w) => {
            return Err(Error::Config(format!(
                "bin width must be positive, got {w}"
            )))
        }
        Binning::FreedmanDiaconis => {
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let fd = 2.0 * iqr / (samples.len() as f64).cbrt();
            if fd > 0.0 {
                fd
            } else {
                (max - min) / (samples.len() as f64).sqrt().max(1.0)
            }
        }
    };
    let num_bins = (((max - min) / width).ceil() as usize).max(1);
    let mut counts = vec![0usize; num_bins];
    for &x in samples {
        let idx = (((x - min) / width) as usize).min(num_bins - 1);
        counts[idx] += 1;
    }
    let norm = 1.0 / (samples.len() as f64 * width);
    Ok(Histogram {
        bin_centers: (0..num_bins)
            .map(|i| min + (i as f64 + 0.5) * width)
            .collect(),
        densities: counts.iter().map(|&c| c as f64 * norm).collect(),
        bin_width: width,
        num_samples: samples.len(),
        degenerate: false,
    })
}

/// Linear-interpolated quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Unbiased sample standard deviation.
pub fn std_dev(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(samples);
    (samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Sample skewness g1 = m3 / m2^(3/2).
pub fn skewness(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mu = mean(samples);
    let m2 = samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let mx = mean(&x[..n]);
    let my = mean(&y[..n]);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Percentile bootstrap confidence interval for a statistic of a sample.
pub fn bootstrap_ci<F>(
    samples: &[f64],
    statistic: F,
    resamples: usize,
    confidence: f64,
    rng: &mut ChaCha8Rng,
) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let resample: Vec<f64> = (0..n).map(|_| samples[rng.random_range(0..n)]).collect();
            statistic(&resample)
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - confidence) / 2.0;
    (
        quantile_sorted(&stats, alpha),
        quantile_sorted(&stats, 1.0 - alpha),
    )
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
pub fn ks_statistic<F>(samples: &[f64], cdf: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        ks = ks.max((f - i as f64 / n).abs());
        ks = ks.max((f - (i + 1) as f64 / n).abs());
    }
    ks
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut ks = 0.0f64;
    while i < sa.len() && j < sb.len() {
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
        ks = ks.max((i as f64 / na - j as f64 / nb).abs());
    }
    ks
}

/// Abramowitz-Stegun 7.1.26 erf approximation, |error| < 1.5e-7.
pub fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Normal CDF with mean `mu` and deviation `sigma`.
pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + erf((x - mu) / (sigma * std::f64::consts::SQRT_2)))
}

/// Counts local maxima of a histogram after light moving-average smoothing,
/// requiring each peak to rise by `prominence_frac` of the global maximum
/// above the valleys separating it from its neighbors.
pub fn count_modes(hist: &Histogram, smooth_window: usize, prominence_frac: f64) -> usize {
    let d = smoothed(&hist.densities, smooth_window);
    let peak = d.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return 0;
    }
    let prominence = prominence_frac * peak;
    let mut modes = 0usize;
    let mut running_peak = 0.0f64;
    let mut valley = 0.0f64;
    let mut rising = true;
    for &x in &d {
        if rising {
            if x > running_peak {
                running_peak = x;
            } else if running_peak - x > prominence && running_peak - valley > prominence {
                modes += 1;
                rising = false;
                valley = x;
            }
        } else if x < valley {
            valley = x;
        } else if x - valley > prominence {
            rising = true;
            running_peak = x;
        }
    }
    if rising && running_peak - valley > prominence {
        modes += 1;
    }
    modes
}

fn smoothed(d: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return d.to_vec();
    }
    let half = window / 2;
    (0..d.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(d.len());
            d[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
