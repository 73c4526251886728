//! Forecast scoring: valid time for multi-step point forecasts, order
//! statistic confidence intervals for medians, and the interval / weighted
//! interval scores for quantile forecasts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidTimeConfig {
    pub epsilon_vt: f64,
    pub dt: f64,
}

impl Default for ValidTimeConfig {
    fn default() -> Self {
        Self {
            epsilon_vt: 40.0,
            dt: 0.1,
        }
    }
}

/// Time until the squared forecast error first reaches `epsilon_vt`.
///
/// Returns `j* dt` for the first index `j*` with `|pred_j - truth_j|^2 >= eps`,
/// or `len * dt` when the threshold is never reached.
pub fn valid_time<P: AsRef<[f64]>, T: AsRef<[f64]>>(
    pred: &[P],
    truth: &[T],
    cfg: &ValidTimeConfig,
) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            context: "valid_time",
            expected: (truth.len(), 1),
            actual: (pred.len(), 1),
        });
    }
    let errors = pred.iter().zip(truth).map(|(p, t)| {
        p.as_ref()
            .iter()
            .zip(t.as_ref())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    });
    Ok(valid_time_from_errors(errors, cfg))
}

/// [`valid_time`] from precomputed squared errors.
pub fn valid_time_from_errors<I: IntoIterator<Item = f64>>(
    sq_errors: I,
    cfg: &ValidTimeConfig,
) -> f64 {
    let mut n = 0usize;
    for (j, e) in sq_errors.into_iter().enumerate() {
        // NaN errors count as exceedances.
        if !(e < cfg.epsilon_vt) {
            return j as f64 * cfg.dt;
        }
        n = j + 1;
    }
    n as f64 * cfg.dt
}

/// Sample median with a distribution-free confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianCi {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// 1-based order-statistic ranks of the bounds.
    pub lower_rank: usize,
    pub upper_rank: usize,
    /// Exact coverage `P(x_(r) <= median < x_(s))`.
    pub coverage: f64,
}

/// `ln P(B <= k)` table for `B ~ Binomial(n, 1/2)`, as plain probabilities.
fn binomial_half_cdf(n: usize) -> Vec<f64> {
    let ln2 = math::ln(2.0);
    let mut ln_c = 0.0;
    let mut cdf = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_c += math::ln((n - k + 1) as f64) - math::ln(k as f64);
        }
        acc += math::exp(ln_c - n as f64 * ln2);
        cdf.push(acc);
    }
    cdf
}

/// Order-statistic ranks `(r, s)` with `s = n + 1 - r` and the largest `r`
/// such that the interval `[x_(r), x_(s)]` covers the median with probability
/// at least `level`.
pub fn median_ci_ranks(n: usize, level: f64) -> Result<(usize, usize, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} not in (0, 1)"
        )));
    }
    let cdf = binomial_half_cdf(n);
    let tail_budget = (1.0 - level) / 2.0;
    // Coverage of [x_(r), x_(n+1-r)] is 1 - 2 P(B <= r - 1).
    let mut best = None;
    for r in 1..=n / 2 {
        if cdf[r - 1] <= tail_budget + 1e-15 {
            best = Some(r);
        } else {
            break;
        }
    }
    let r = best.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{n} samples are too few for a {level} median interval"
        ))
    })?;
    Ok((r, n + 1 - r, 1.0 - 2.0 * cdf[r - 1]))
}

pub fn median_with_ci(samples: &[f64], level: f64) -> Result<MedianCi> {
    let n = samples.len();
    if n < 6 {
        return Err(Error::InvalidArgument(format!(
            "median interval needs at least 6 samples, got {n}"
        )));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("median_with_ci samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let (r, s, coverage) = median_ci_ranks(n, level)?;
    Ok(MedianCi {
        median,
        lower: sorted[r - 1],
        upper: sorted[s - 1],
        lower_rank: r,
        upper_rank: s,
        coverage,
    })
}

/// Interval score of the central `(1 - alpha)` interval `[l, u]` for outcome `y`.
pub fn interval_score(l: f64, u: f64, alpha: f64, y: f64) -> Result<f64> {
    if l > u {
        return Err(Error::InvalidArgument(format!(
            "interval lower bound {l} exceeds upper bound {u}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} not in (0, 1)"
        )));
    }
    Ok(interval_score_unchecked(l, u, alpha, y))
}

#[inline]
fn interval_score_unchecked(l: f64, u: f64, alpha: f64, y: f64) -> f64 {
    let mut s = u - l;
    if y < l {
        s += 2.0 / alpha * (l - y);
    }
    if y > u {
        s += 2.0 / alpha * (y - u);
    }
    s
}

/// Interval levels used by the weighted interval score. Weights are
/// `w_k = alpha_k / 2` and `w_0 = 1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WisConfig {
    pub alphas: Vec<f64>,
}

impl WisConfig {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidArgument(
                "WIS needs at least one alpha".into(),
            ));
        }
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidArgument(format!("alpha {a} not in (0, 1)")));
            }
            if i > 0 && a <= alphas[i - 1] {
                return Err(Error::InvalidArgument(
                    "alpha levels must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { alphas })
    }

    /// `{0.02, 0.05, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}`.
    pub fn hub() -> Self {
        Self {
            alphas: vec![0.02, 0.05, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

/// Where each interval endpoint and the median live in a quantile vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WisIndex {
    median: usize,
    /// `(lower index, upper index, alpha)`
    intervals: Vec<(usize, usize, f64)>,
    len: usize,
}

const LEVEL_TOL: f64 = 1e-9;

fn find_level(levels: &[f64], target: f64) -> Result<usize> {
    levels
        .iter()
        .position(|&l| (l - target).abs() < LEVEL_TOL)
        .ok_or(Error::MissingQuantile(target))
}

impl WisIndex {
    pub fn new(levels: &[f64], cfg: &WisConfig) -> Result<Self> {
        let median = find_level(levels, 0.5)?;
        let intervals = cfg
            .alphas
            .iter()
            .map(|&a| {
                Ok((
                    find_level(levels, a / 2.0)?,
                    find_level(levels, 1.0 - a / 2.0)?,
                    a,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            median,
            intervals,
            len: levels.len(),
        })
    }

    fn normaliser(&self) -> f64 {
        1.0 / (self.intervals.len() as f64 + 0.5)
    }

    /// WIS of `quantiles` (laid out as the levels this index was built from).
    pub fn score(&self, quantiles: &[f64], y: f64) -> Result<f64> {
        if quantiles.len() != self.len {
            return Err(Error::Shape {
                context: "wis quantiles",
                expected: (self.len, 1),
                actual: (quantiles.len(), 1),
            });
        }
        let mut total = 0.5 * (y - quantiles[self.median]).abs();
        for &(lo, hi, a) in &self.intervals {
            total += 0.5 * a * interval_score(quantiles[lo], quantiles[hi], a, y)?;
        }
        Ok(self.normaliser() * total)
    }

    /// Subgradient of [`WisIndex::score`] with respect to each quantile;
    /// zero at exact ties between `y` and a quantile.
    pub fn gradient(&self, quantiles: &[f64], y: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.len];
        self.accumulate_gradient(quantiles, y, 1.0, &mut g)?;
        Ok(g)
    }

    pub fn accumulate_gradient(
        &self,
        quantiles: &[f64],
        y: f64,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if quantiles.len() != self.len || out.len() != self.len {
            return Err(Error::Shape {
                context: "wis gradient",
                expected: (self.len, 1),
                actual: (quantiles.len(), 1),
            });
        }
        let c = scale * self.normaliser();
        let m = quantiles[self.median];
        if m > y {
            out[self.median] += c * 0.5;
        } else if m < y {
            out[self.median] -= c * 0.5;
        }
        for &(lo, hi, a) in &self.intervals {
            let w = 0.5 * a;
            let (l, u) = (quantiles[lo], quantiles[hi]);
            // d IS / d l = -1 + (2/a) [y < l], d IS / d u = 1 - (2/a) [y > u]
            if y < l {
                out[lo] += c * w * (2.0 / a - 1.0);
            } else if y > l {
                out[lo] -= c * w;
            }
            if y > u {
                out[hi] -= c * w * (2.0 / a - 1.0);
            } else if y < u {
                out[hi] += c * w;
            }
        }
        Ok(())
    }
}

/// Weighted interval score of a quantile forecast.
pub fn wis(quantiles: &[f64], levels: &[f64], y: f64, cfg: &WisConfig) -> Result<f64> {
    WisIndex::new(levels, cfg)?.score(quantiles, y)
}

pub fn wis_gradient(
    quantiles: &[f64],
    levels: &[f64],
    y: f64,
    cfg: &WisConfig,
) -> Result<Vec<f64>> {
    WisIndex::new(levels, cfg)?.gradient(quantiles, y)
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / math::sqrt(saa * sbb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_time_examples() {
        let cfg = ValidTimeConfig::default();
        let truth = vec![[1.0, 2.0, 3.0]; 128];
        assert!((valid_time(&truth, &truth, &cfg).unwrap() - 12.8).abs() < 1e-12);
        let mut pred = truth.clone();
        pred[0][0] += 10.0;
        assert_eq!(valid_time(&pred, &truth, &cfg).unwrap(), 0.0);
        let ramp = (0..128).map(|j| j as f64);
        assert!((valid_time_from_errors(ramp, &cfg) - 4.0).abs() < 1e-12);
        assert!(valid_time(&pred[..3], &truth, &cfg).is_err());
    }

    #[test]
    fn median_examples() {
        let xs: Vec<f64> = (1..=200).map(|v| v as f64).collect();
        assert_eq!(median_with_ci(&xs, 0.95).unwrap().median, 100.5);
        let c = median_with_ci(&[3.5; 10], 0.95).unwrap();
        assert_eq!((c.median, c.lower, c.upper), (3.5, 3.5, 3.5));
        assert!(median_with_ci(&[1.0; 5], 0.95).is_err());
        assert!(median_with_ci(&[1.0; 6], 0.95).is_ok());
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(1.0, 3.0, 0.2, 2.0).unwrap(), 2.0);
        assert!((interval_score(1.0, 3.0, 0.2, 0.0).unwrap() - 12.0).abs() < 1e-12);
        assert_eq!(interval_score(1.0, 3.0, 0.5, 4.0).unwrap(), 6.0);
        assert!(interval_score(3.0, 1.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn wis_single_level_worked_case() {
        let cfg = WisConfig::new(vec![0.5]).unwrap();
        let levels = [0.25, 0.5, 0.75];
        let s = wis(&[1.0, 2.0, 3.0], &levels, 2.0, &cfg).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wis(&[2.0; 3], &levels, 2.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn wis_reports_missing_level() {
        let cfg = WisConfig::new(vec![0.2]).unwrap();
        let err = wis(&[1.0, 2.0, 3.0], &[0.25, 0.5, 0.75], 2.0, &cfg).unwrap_err();
        assert_eq!(err, Error::MissingQuantile(0.1));
    }

    #[test]
    fn gradient_inside_all_intervals() {
        let cfg = WisConfig::new(vec![0.5]).unwrap();
        let g = wis_gradient(&[1.0, 2.5, 3.0], &[0.25, 0.5, 0.75], 2.0, &cfg).unwrap();
        let c = 1.0 / 1.5;
        assert!((g[0] + 0.25 * c).abs() < 1e-15);
        assert!((g[2] - 0.25 * c).abs() < 1e-15);
        assert!((g[1] - 0.5 * c).abs() < 1e-15);
        // symmetric forecast with y at the median: the median kink gives 0
        let g = wis_gradient(&[1.0, 2.0, 3.0], &[0.25, 0.5, 0.75], 2.0, &cfg).unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(WisConfig::new(vec![]).is_err());
        assert!(WisConfig::new(vec![0.5, 0.2]).is_err());
        assert!(WisConfig::new(vec![1.5]).is_err());
    }

    #[test]
    fn pearson_basic() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }
}
