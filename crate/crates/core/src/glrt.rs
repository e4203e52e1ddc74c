//! Covariance-ratio GLRT: windowed detection with a calibrated threshold and
//! dominant-eigenvector matched-filter DoA estimation.

use nalgebra::LU;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dominant_eigenpair, CMatrix, C64};
use crate::signal::{ArrayConfig, SteeringVector};
use crate::stats::{detection_windows, doa_windows, empirical_covariance, CovarianceMatrix, CovariancePair};

/// Diagonal loading added to every covariance estimate.
pub const DEFAULT_LOADING: f64 = 1e-6;
/// Guard added to the per-array standard deviation in the z-score.
pub const ZSCORE_GUARD: f64 = 1e-6;
/// Power-iteration cap for the DoA eigenvector.
pub const POWER_MAX_ITERS: usize = 500;
/// Residual `‖Mv − λv‖₂` below which the eigenvector is accepted.
pub const POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlrtDetectionConfig {
    /// Window length in snapshots.
    pub k: usize,
    pub zeta: f64,
    /// Percentile of the H₀ maxima used as the threshold, in (0, 100].
    pub percentile: f64,
    /// Set by calibration; detection refuses to run without it.
    pub threshold: Option<f64>,
}

impl Default for GlrtDetectionConfig {
    fn default() -> Self {
        Self {
            k: 10,
            zeta: DEFAULT_LOADING,
            percentile: 95.0,
            threshold: None,
        }
    }
}

impl GlrtDetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain("window length k must be at least 1".into()));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Domain(format!(
                "percentile {} outside (0, 100]",
                self.percentile
            )));
        }
        Ok(())
    }

    pub fn with_threshold(mut self, gamma: f64) -> Self {
        self.threshold = Some(gamma);
        self
    }
}

/// The detection statistic evaluated at every valid window start.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticSequence {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl StatisticSequence {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Zero-based window start of the maximum (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

fn lu_of(r: &CMatrix) -> Result<LU<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = r.clone().lu();
    // Cheap conditioning proxy from the pivots of U.
    let diag = lu.u().diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in diag.iter() {
        let a = d.norm();
        lo = lo.min(a);
        hi = hi.max(a);
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::IllConditioned {
            op: "covariance solve",
            condition,
        });
    }
    Ok(lu)
}

/// `R_old⁻¹·R_new` by LU solve.
pub fn whitened_ratio(pair: &CovariancePair) -> Result<CMatrix> {
    let lu = lu_of(&pair.r_old.values)?;
    lu.solve(&pair.r_new.values).ok_or(Error::IllConditioned {
        op: "covariance solve",
        condition: f64::INFINITY,
    })
}

/// `T = tr(R_old⁻¹·R_new)`.
pub fn detection_statistic(pair: &CovariancePair) -> Result<f64> {
    Ok(whitened_ratio(pair)?.trace().re)
}

/// One statistic per window start `0..=T−2k`.
pub fn statistic_sequence(z: &CMatrix, cfg: &GlrtDetectionConfig) -> Result<StatisticSequence> {
    cfg.validate()?;
    let (k, t) = (cfg.k, z.ncols());
    if t < 2 * k {
        return Err(Error::Range(format!("T = {t} shorter than two windows of k = {k}")));
    }
    // Block j covers columns [j, j+k); the pair at start i is (block i, block i+k).
    let blocks: Vec<CovarianceMatrix> = (0..=t - k)
        .map(|j| empirical_covariance(&z.columns(j, k).into_owned(), cfg.zeta))
        .collect();
    let values = (0..=t - 2 * k)
        .map(|i| {
            let pair = CovariancePair {
                r_old: blocks[i].clone(),
                r_new: blocks[i + k].clone(),
            };
            detection_statistic(&pair)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StatisticSequence {
        values,
        normalized: false,
    })
}

/// Statistic pair at a single window start, built through the public
/// windowing path; used to cross-check [`statistic_sequence`].
pub fn statistic_at(z: &CMatrix, cfg: &GlrtDetectionConfig, start: usize) -> Result<f64> {
    let (old, new) = detection_windows(z, cfg.k, start)?;
    let pair = CovariancePair::new(
        empirical_covariance(&old, cfg.zeta),
        empirical_covariance(&new, cfg.zeta),
    )?;
    detection_statistic(&pair)
}

/// `(T − μ)/(σ + 10⁻⁶)` with the population standard deviation.
pub fn zscore_normalize(seq: &StatisticSequence) -> Result<StatisticSequence> {
    if seq.values.is_empty() {
        return Err(Error::Domain("cannot normalize an empty sequence".into()));
    }
    let n = seq.values.len() as f64;
    let mean = seq.values.iter().sum::<f64>() / n;
    let var = seq.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + ZSCORE_GUARD;
    Ok(StatisticSequence {
        values: seq.values.iter().map(|v| (v - mean) / denom).collect(),
        normalized: true,
    })
}

/// `max_i T_i′` for one observation.
pub fn max_normalized_statistic(z: &CMatrix, cfg: &GlrtDetectionConfig) -> Result<f64> {
    Ok(zscore_normalize(&statistic_sequence(z, cfg)?)?.max())
}

/// Nearest-rank percentile: the `ceil(p/100·n)`-th smallest value.
pub fn calibrate_threshold(h0_maxima: &[f64], percentile: f64) -> Result<f64> {
    if h0_maxima.is_empty() {
        return Err(Error::Domain(
            "threshold calibration needs at least one H0 maximum".into(),
        ));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Domain(format!("percentile {percentile} outside (0, 100]")));
    }
    if h0_maxima.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("H0 maxima must be finite".into()));
    }
    let mut sorted = h0_maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Decide H₁ (1) iff `max_i T_i′ ≥ γ_T`.
pub fn glrt_detect(z: &CMatrix, cfg: &GlrtDetectionConfig) -> Result<usize> {
    let gamma = cfg
        .threshold
        .ok_or_else(|| Error::State("GLRT detection threshold has not been calibrated".into()))?;
    Ok(usize::from(max_normalized_statistic(z, cfg)? >= gamma))
}

/// Calibration artifact persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub percentile: f64,
    #[serde(rename = "gamma_T")]
    pub gamma_t: f64,
    pub k: usize,
    pub zeta: f64,
    pub n_calibration: usize,
}

impl Calibration {
    /// Detection config carrying this calibration's threshold.
    pub fn to_config(&self) -> GlrtDetectionConfig {
        GlrtDetectionConfig {
            k: self.k,
            zeta: self.zeta,
            percentile: self.percentile,
            threshold: Some(self.gamma_t),
        }
    }
}

/// Calibrate on a set of H₀ observations.
pub fn calibrate<'a, I>(h0: I, cfg: &GlrtDetectionConfig) -> Result<Calibration>
where
    I: IntoIterator<Item = &'a CMatrix>,
{
    cfg.validate()?;
    let maxima = h0
        .into_iter()
        .map(|z| max_normalized_statistic(z, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration {
        percentile: cfg.percentile,
        gamma_t: calibrate_threshold(&maxima, cfg.percentile)?,
        k: cfg.k,
        zeta: cfg.zeta,
        n_calibration: maxima.len(),
    })
}

/// DoA configuration: window length, loading and the precomputed steering grid.
#[derive(Debug, Clone)]
pub struct GlrtDoaConfig {
    pub k: usize,
    pub zeta: f64,
    pub grid: Vec<SteeringVector>,
}

impl GlrtDoaConfig {
    pub fn new(k: usize, zeta: f64, grid: Vec<SteeringVector>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("window length k must be at least 1".into()));
        }
        let m = grid
            .first()
            .ok_or_else(|| Error::Domain("steering grid is empty".into()))?
            .values
            .len();
        if grid.iter().any(|a| a.values.len() != m) {
            return Err(Error::Domain("steering vectors have mixed lengths".into()));
        }
        Ok(Self { k, zeta, grid })
    }

    /// k = 750 snapshots, ζ = 10⁻⁶, the array's full grid.
    pub fn for_array(config: &ArrayConfig) -> Result<Self> {
        Self::new(750, DEFAULT_LOADING, config.steering_grid()?)
    }

    pub fn num_elements(&self) -> usize {
        self.grid[0].values.len()
    }
}

/// Uncentered, loaded covariances of the DoA windows around `t0`.
pub fn doa_pair(z: &CMatrix, k: usize, t0: usize, zeta: f64) -> Result<CovariancePair> {
    let (old, new) = doa_windows(z, k, t0)?;
    CovariancePair::new(empirical_covariance(&old, zeta), empirical_covariance(&new, zeta))
}

#[derive(Debug, Clone)]
pub struct DoaEstimate {
    pub class_index: usize,
    pub angle_deg: f64,
    pub eigenvalue: C64,
    pub iterations: usize,
}

/// Grid index maximizing `|a(θ)ᴴ v|`; ties keep the smaller angle.
pub fn matched_filter_argmax(grid: &[SteeringVector], v: &[C64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, a) in grid.iter().enumerate() {
        let score = a
            .values
            .iter()
            .zip(v)
            .map(|(ai, vi)| ai.conj() * vi)
            .sum::<C64>()
            .norm();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Dominant eigenvector of `R_old⁻¹·R_new` matched against the steering grid.
pub fn glrt_doa(pair: &CovariancePair, cfg: &GlrtDoaConfig) -> Result<DoaEstimate> {
    if pair.r_old.dim() != cfg.num_elements() {
        return Err(Error::Shape {
            expected: vec![cfg.num_elements(), cfg.num_elements()],
            got: vec![pair.r_old.dim(), pair.r_old.dim()],
        });
    }
    let m = whitened_ratio(pair)?;
    let eig = dominant_eigenpair(&m, POWER_MAX_ITERS, POWER_TOL)?;
    let idx = matched_filter_argmax(&cfg.grid, eig.vector.as_slice());
    Ok(DoaEstimate {
        class_index: idx,
        angle_deg: cfg.grid[idx].angle_deg,
        eigenvalue: eig.value,
        iterations: eig.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CVector;
    use crate::signal::steering_vector;

    fn cov(values: CMatrix) -> CovarianceMatrix {
        CovarianceMatrix { values, loading: 0.0 }
    }

    #[test]
    fn identical_covariances_give_m() {
        let r = cov(CMatrix::identity(8, 8) * C64::new(2.5, 0.0));
        let pair = CovariancePair::new(r.clone(), r).unwrap();
        assert!((detection_statistic(&pair).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_new_over_identity_is_sum() {
        let diag: Vec<C64> = (1..=8).map(|v| C64::new(v as f64 * 0.5, 0.0)).collect();
        let pair = CovariancePair::new(
            cov(CMatrix::identity(8, 8)),
            cov(CMatrix::from_diagonal(&CVector::from_vec(diag))),
        )
        .unwrap();
        assert!((detection_statistic(&pair).unwrap() - 18.0).abs() < 1e-12);
    }

    #[test]
    fn singular_old_covariance_is_reported() {
        let pair = CovariancePair::new(cov(CMatrix::zeros(3, 3)), cov(CMatrix::identity(3, 3))).unwrap();
        assert!(matches!(detection_statistic(&pair), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn sequence_length_and_range_error() {
        let z = CMatrix::from_fn(8, 500, |r, c| {
            C64::new(((r * 31 + c * 17) % 13) as f64, ((r + c) % 7) as f64)
        });
        let cfg = GlrtDetectionConfig::default();
        let seq = statistic_sequence(&z, &cfg).unwrap();
        assert_eq!(seq.values.len(), 481);
        for start in [0, 17, 480] {
            let direct = statistic_at(&z, &cfg, start).unwrap();
            assert!((seq.values[start] - direct).abs() <= 1e-12 * direct.abs());
        }
        let short = CMatrix::zeros(8, 19);
        assert!(matches!(statistic_sequence(&short, &cfg), Err(Error::Range(_))));
    }

    #[test]
    fn zscore_of_constant_is_zero() {
        let s = StatisticSequence {
            values: vec![3.0; 10],
            normalized: false,
        };
        let z = zscore_normalize(&s).unwrap();
        assert!(z.normalized);
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_two_points() {
        let s = StatisticSequence {
            values: vec![0.0, 2.0],
            normalized: false,
        };
        let z = zscore_normalize(&s).unwrap();
        assert!((z.values[0] + 1.0).abs() < 1e-5);
        assert!((z.values[1] - 1.0).abs() < 1e-5);
        let twice = zscore_normalize(&z).unwrap();
        for (a, b) in z.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(zscore_normalize(&StatisticSequence {
            values: vec![],
            normalized: false
        })
        .is_err());
    }

    #[test]
    fn nearest_rank_percentile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(calibrate_threshold(&xs, 95.0).unwrap(), 95.0);
        assert_eq!(calibrate_threshold(&xs, 100.0).unwrap(), 100.0);
        assert_eq!(calibrate_threshold(&[4.2; 17], 95.0).unwrap(), 4.2);
        assert!(matches!(calibrate_threshold(&[], 95.0), Err(Error::Domain(_))));
    }

    #[test]
    fn detection_requires_calibration_and_uses_ge() {
        let z = CMatrix::from_fn(8, 40, |r, c| {
            C64::new(((r * 7 + c * 3) % 11) as f64, (r * c % 5) as f64)
        });
        let cfg = GlrtDetectionConfig::default();
        assert!(matches!(glrt_detect(&z, &cfg), Err(Error::State(_))));
        let m = max_normalized_statistic(&z, &cfg).unwrap();
        assert_eq!(glrt_detect(&z, &cfg.clone().with_threshold(m)).unwrap(), 1);
        assert_eq!(glrt_detect(&z, &cfg.with_threshold(m + 1e-9)).unwrap(), 0);
    }

    #[test]
    fn doa_recovers_planted_direction() {
        let array = ArrayConfig::default();
        let cfg = GlrtDoaConfig::for_array(&array).unwrap();
        let a = CVector::from_vec(steering_vector(&array, 12.0).unwrap().values);
        let r_new = CMatrix::identity(8, 8) + &a * a.adjoint() * C64::new(5.0, 0.0);
        let pair = CovariancePair::new(cov(CMatrix::identity(8, 8)), cov(r_new)).unwrap();
        let est = glrt_doa(&pair, &cfg).unwrap();
        assert_eq!(est.angle_deg, 12.0);
        assert!((est.eigenvalue.re - 41.0).abs() < 1e-8);
    }

    #[test]
    fn matched_filter_ties_pick_smallest_angle() {
        let array = ArrayConfig::default();
        let grid = array.steering_grid().unwrap();
        // A vector supported on element 0 correlates equally with every a(θ).
        let mut v = vec![C64::new(0.0, 0.0); 8];
        v[0] = C64::new(1.0, 0.0);
        assert_eq!(matched_filter_argmax(&grid, &v), 0);
        // Two copies of the same angle: the first one wins.
        let dup = vec![grid[30].clone(), grid[30].clone()];
        assert_eq!(matched_filter_argmax(&dup, &grid[30].values), 0);
    }

    #[test]
    fn doa_config_validation() {
        assert!(GlrtDoaConfig::new(10, 1e-6, vec![]).is_err());
        let a = steering_vector(&ArrayConfig::default(), 0.0).unwrap();
        let mut b = a.clone();
        b.values.pop();
        assert!(GlrtDoaConfig::new(10, 1e-6, vec![a, b]).is_err());
    }

    #[test]
    fn calibration_json_field_names() {
        let c = Calibration {
            percentile: 95.0,
            gamma_t: 3.5,
            k: 10,
            zeta: 1e-6,
            n_calibration: 100,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"gamma_T\":3.5"));
        let back: Calibration = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
