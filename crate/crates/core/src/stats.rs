//! Small statistics helpers: batch means, sample moments, regression and the
//! Kolmogorov–Smirnov test.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Minimum number of batches used for batch-means standard errors.
pub const MIN_BATCHES: usize = 10;

/// `⌊√n⌋` clamped to `[10, 50]`.
pub fn default_batch_count(n: usize) -> usize {
    ((n as f64).sqrt() as usize).clamp(MIN_BATCHES, 50)
}

/// Contiguous, nearly equal ranges covering `0..n`.
pub fn batch_ranges(n: usize, batches: usize) -> Vec<std::ops::Range<usize>> {
    (0..batches)
        .map(|b| (b * n / batches)..((b + 1) * n / batches))
        .collect()
}

/// Mean and the standard error of the mean assuming independent values.
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample mean with a batch-means standard error over at least
/// [`MIN_BATCHES`] batches.
pub fn batch_means(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < MIN_BATCHES {
        return Err(Error::InsufficientSamples {
            needed: MIN_BATCHES,
            have: values.len(),
        });
    }
    let batches = default_batch_count(values.len()).min(values.len());
    let means: Vec<f64> = batch_ranges(values.len(), batches)
        .into_iter()
        .map(|r| {
            let len = r.len() as f64;
            values[r].iter().sum::<f64>() / len
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let (_, se) = mean_and_standard_error(&means);
    Ok((mean, se))
}

/// Mean, unbiased variance, skewness `m3/m2^{3/2}` and excess kurtosis
/// `m4/m2^2 - 3` (central sample moments).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.len() < 4 {
        return Err(Error::InsufficientSamples {
            needed: 4,
            have: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(Error::DegenerateVariance("sample variance is zero".into()));
    }
    Ok(Moments {
        n: values.len(),
        mean,
        variance: m2 * n / (n - 1.0),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Least-squares line `y = intercept + slope·x` with a two-sided confidence
/// interval for the slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub slope_interval: (f64, f64),
}

pub fn linear_fit(x: &[f64], y: &[f64], confidence: f64) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Malformed("x and y lengths differ".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, have: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (rss / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| Error::Malformed(e.to_string()))?
        .inverse_cdf(0.5 + confidence / 2.0);
    Ok(LinearFit {
        slope,
        intercept,
        slope_std_error: se,
        slope_interval: (slope - t * se, slope + t * se),
    })
}

/// Weighted least squares through the points `(x, y)` with weights `w`.
pub fn weighted_slope(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    if x.len() < 2 || sw <= 0.0 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            have: x.len(),
        });
    }
    let mx = x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, c)| c * (a - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), c)| c * (a - mx) * (b - my))
        .sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Kolmogorov–Smirnov statistic of `values` against `N(mean, sd²)`.
///
/// For integer-valued statistics on a lattice of spacing `span` (after
/// centering), the comparison is made at the half-span points between
/// atoms, i.e. against the continuity-corrected normal; `span = 0` gives the
/// plain continuous test.
pub fn ks_normal(values: &[f64], mean: f64, sd: f64, span: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::DegenerateVariance(e.to_string()))?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let half = span / 2.0;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = j as f64 / n;
        d = d.max((upto - normal.cdf(v[i] + half)).abs());
        d = d.max((normal.cdf(v[i] - half) - below).abs());
        i = j;
    }
    Ok((d, kolmogorov_p_value(d, v.len())))
}

/// Asymptotic p-value `P(D_n > d)` with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
