//! Run statistics: trimmed means and percentile intervals.

use serde::{Deserialize, Serialize};
use vampnet_core::koopman::quantile_sorted;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("{retained} values remain after trimming, at least 3 are needed")]
    TooFew { retained: usize },
    #[error("non-finite value in run statistics")]
    NonFinite,
    #[error("{0} outside its valid range")]
    Parameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_total: usize,
    pub n_retained: usize,
}

/// Sorts, drops `ceil(trim * N)` values from each end, then reports the mean
/// and the central `ci_level` percentile interval of the retained values.
pub fn aggregate_runs(values: &[f64], trim_fraction: f64, ci_level: f64) -> Result<Aggregate, StatsError> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(StatsError::Parameter("trim fraction"));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(StatsError::Parameter("confidence level"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (trim_fraction * sorted.len() as f64).ceil() as usize;
    let kept = if 2 * cut < sorted.len() {
        &sorted[cut..sorted.len() - cut]
    } else {
        &sorted[..0]
    };
    if kept.len() < 3 {
        return Err(StatsError::TooFew { retained: kept.len() });
    }
    if kept.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let a = (1.0 - ci_level) / 2.0;
    Ok(Aggregate {
        mean,
        ci_low: quantile_sorted(kept, a),
        ci_high: quantile_sorted(kept, 1.0 - a),
        n_total: values.len(),
        n_retained: kept.len(),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(quantile_sorted(&s, 0.5))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
