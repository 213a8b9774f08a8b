//! Per-subject preparation of raw series: rescale the time grid to [0, 1],
//! align the first peak by a piecewise-linear landmark warp, center values
//! within subject, and assemble the covariate vector.

use crate::error::{Error, Result};
use nalgebra::DVector;
use std::collections::BTreeMap;

/// Default warp target for the first-peak landmark.
pub const DEFAULT_WARP_TARGET: f64 = 0.2944;

/// One subject's raw measurements before preparation.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub subject_id: String,
    pub pixel_values: Vec<f64>,
    pub landmark: Option<f64>,
}

/// One subject ready for fitting: strictly increasing times in [0, 1],
/// within-subject centered values, and the optional covariate vector.
#[derive(Debug, Clone)]
pub struct CurveObservation {
    pub subject_id: String,
    pub times: Vec<f64>,
    pub values: DVector<f64>,
    pub covariates: Option<DVector<f64>>,
}

impl CurveObservation {
    pub fn n(&self) -> usize {
        self.times.len()
    }
}

/// What to do with subjects that carry no landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkPolicy {
    /// Keep the subject on its rescaled grid (warn).
    #[default]
    Bypass,
    /// Drop the subject.
    Exclude,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PreprocessOptions {
    /// Common landmark position M_L that every first peak is warped to.
    pub warp_target: f64,
    /// Subjects shorter than this are dropped (the data's observed minimum).
    pub min_length: usize,
    pub landmark_policy: LandmarkPolicy,
    /// Assemble (mean level, length, external rate) covariates.
    pub with_covariates: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            warp_target: DEFAULT_WARP_TARGET,
            min_length: 4,
            landmark_policy: LandmarkPolicy::Bypass,
            with_covariates: true,
        }
    }
}

/// Why a subject was removed instead of prepared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    NonFiniteValues,
    TooShort { n: usize },
    MissingLandmark,
}

/// Outcome of preparing one subject.
#[derive(Debug, Clone)]
pub enum Prepared {
    Kept(Box<CurveObservation>, Vec<String>),
    Dropped(DropReason),
}

/// Evenly spaced grid {0, 1/(n-1), ..., 1}.
pub fn rescale_times(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::TooShort {
            subject: String::new(),
            n,
        });
    }
    Ok((0..n).map(|j| j as f64 / (n - 1) as f64).collect())
}

/// Piecewise-linear warp sending 0 -> 0, `landmark` -> `target`, 1 -> 1.
pub fn landmark_warp(t: f64, landmark: f64, target: f64) -> Result<f64> {
    if !(landmark > 0.0 && landmark < 1.0) {
        return Err(Error::InvalidLandmark {
            subject: String::new(),
            value: landmark,
        });
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidWarpTarget(target));
    }
    if t < landmark {
        Ok(t * (target / landmark))
    } else {
        Ok((t - 1.0) * ((1.0 - target) / (1.0 - landmark)) + 1.0)
    }
}

/// Subtract the mean; returns the centered values and the mean itself
/// (which doubles as the mean-level covariate).
pub fn center_values(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((values.iter().map(|v| v - mean).collect(), mean))
}

/// Assemble the covariate vector (mean level, series length, external rate),
/// in that order; `extra` must supply `min_ar`.
pub fn build_covariates(raw: &RawSeries, extra: &BTreeMap<String, f64>) -> Result<DVector<f64>> {
    let (_, mean) = center_values(&raw.pixel_values)?;
    let min_ar = extra.get("min_ar").copied().ok_or_else(|| Error::MissingCovariate {
        subject: raw.subject_id.clone(),
        field: "min_ar".to_string(),
    })?;
    Ok(DVector::from_vec(vec![
        mean,
        raw.pixel_values.len() as f64,
        min_ar,
    ]))
}

/// Run the full pipeline on one subject; drops are reported, never imputed.
pub fn process_subject(
    raw: &RawSeries,
    extra: Option<&BTreeMap<String, f64>>,
    options: &PreprocessOptions,
) -> Result<Prepared> {
    if raw.pixel_values.is_empty() || raw.pixel_values.iter().any(|v| !v.is_finite()) {
        return Ok(Prepared::Dropped(DropReason::NonFiniteValues));
    }
    let n = raw.pixel_values.len();
    if n < options.min_length.max(2) {
        return Ok(Prepared::Dropped(DropReason::TooShort { n }));
    }

    let mut warnings = Vec::new();
    let tilde = rescale_times(n)?;
    let times = match raw.landmark {
        Some(l) => {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidLandmark {
                    subject: raw.subject_id.clone(),
                    value: l,
                });
            }
            tilde
                .iter()
                .map(|&t| landmark_warp(t, l, options.warp_target))
                .collect::<Result<Vec<f64>>>()?
        }
        None => match options.landmark_policy {
            LandmarkPolicy::Exclude => {
                return Ok(Prepared::Dropped(DropReason::MissingLandmark))
            }
            LandmarkPolicy::Bypass => {
                warnings.push(format!(
                    "subject '{}' has no landmark; kept on the rescaled grid",
                    raw.subject_id
                ));
                tilde
            }
        },
    };

    let covariates = if options.with_covariates {
        let empty = BTreeMap::new();
        Some(build_covariates(raw, extra.unwrap_or(&empty))?)
    } else {
        None
    };
    let (centered, _) = center_values(&raw.pixel_values)?;

    Ok(Prepared::Kept(
        Box::new(CurveObservation {
            subject_id: raw.subject_id.clone(),
            times,
            values: DVector::from_vec(centered),
            covariates,
        }),
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rescale_endpoints_only() {
        assert_eq!(rescale_times(2).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn rescale_five_points() {
        assert_eq!(
            rescale_times(5).unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
    }

    #[test]
    fn rescale_thirty_seven() {
        let t = rescale_times(37).unwrap();
        assert_eq!(t.len(), 37);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[36], 1.0);
        for w in t.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn rescale_too_short() {
        assert!(matches!(rescale_times(1), Err(Error::TooShort { .. })));
    }

    #[test]
    fn warp_is_identity_when_landmark_at_target() {
        for &t in &[0.0, 0.1, 0.2944, 0.5, 0.99, 1.0] {
            let w = landmark_warp(t, 0.2944, 0.2944).unwrap();
            assert_abs_diff_eq!(w, t, epsilon = 1e-15);
        }
    }

    #[test]
    fn warp_sends_landmark_to_target() {
        let w = landmark_warp(0.61, 0.61, 0.2944).unwrap();
        assert_abs_diff_eq!(w, 0.2944, epsilon = 1e-12);
    }

    #[test]
    fn warp_hand_computed_interior_value() {
        // Second branch: (0.75 - 1) * (0.75 / 0.5) + 1 = 0.625.
        let w = landmark_warp(0.75, 0.5, 0.25).unwrap();
        assert_abs_diff_eq!(w, 0.625, epsilon = 1e-15);
    }

    #[test]
    fn warp_endpoints_fixed() {
        assert_eq!(landmark_warp(0.0, 0.3, 0.2944).unwrap(), 0.0);
        assert_eq!(landmark_warp(1.0, 0.3, 0.2944).unwrap(), 1.0);
    }

    #[test]
    fn warp_rejects_bad_landmark() {
        assert!(landmark_warp(0.5, 0.0, 0.2944).is_err());
        assert!(landmark_warp(0.5, 1.0, 0.2944).is_err());
        assert!(landmark_warp(0.5, 1.5, 0.2944).is_err());
    }

    #[test]
    fn centering_examples() {
        let (c, m) = center_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c, vec![-1.0, 0.0, 1.0]);
        assert_eq!(m, 2.0);

        let (c, m) = center_values(&[4.5; 6]).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert_eq!(m, 4.5);

        assert!(center_values(&[]).is_err());
    }

    #[test]
    fn centering_random_vector_and_idempotence() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 37 + 11) % 23) as f64 * 0.7 - 5.0).collect();
        let (c, _) = center_values(&vals).unwrap();
        let resid: f64 = c.iter().sum::<f64>() / c.len() as f64;
        assert!(resid.abs() < 1e-12);
        let (c2, m2) = center_values(&c).unwrap();
        assert!(m2.abs() < 1e-12);
        for (a, b) in c.iter().zip(c2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn covariates_in_contract_order() {
        let raw = RawSeries {
            subject_id: "y1".into(),
            pixel_values: vec![128.5; 24],
            landmark: None,
        };
        let mut extra = BTreeMap::new();
        extra.insert("min_ar".to_string(), 3.2);
        let x = build_covariates(&raw, &extra).unwrap();
        assert_eq!(x.as_slice(), &[128.5, 24.0, 3.2]);
    }

    #[test]
    fn missing_min_ar_names_field() {
        let raw = RawSeries {
            subject_id: "y2".into(),
            pixel_values: vec![1.0, 2.0],
            landmark: None,
        };
        match build_covariates(&raw, &BTreeMap::new()) {
            Err(Error::MissingCovariate { field, subject }) => {
                assert_eq!(field, "min_ar");
                assert_eq!(subject, "y2");
            }
            other => panic!("expected missing covariate, got {other:?}"),
        }
    }

    #[test]
    fn subjects_with_missing_values_are_dropped() {
        let raw = RawSeries {
            subject_id: "gap".into(),
            pixel_values: vec![1.0, f64::NAN, 3.0, 4.0],
            landmark: Some(0.4),
        };
        let opts = PreprocessOptions {
            with_covariates: false,
            ..Default::default()
        };
        match process_subject(&raw, None, &opts).unwrap() {
            Prepared::Dropped(DropReason::NonFiniteValues) => {}
            other => panic!("expected drop, got {other:?}"),
        }
    }

    #[test]
    fn short_subjects_are_dropped_not_errored() {
        let raw = RawSeries {
            subject_id: "short".into(),
            pixel_values: vec![1.0, 2.0, 3.0],
            landmark: None,
        };
        let opts = PreprocessOptions {
            with_covariates: false,
            ..Default::default()
        };
        match process_subject(&raw, None, &opts).unwrap() {
            Prepared::Dropped(DropReason::TooShort { n: 3 }) => {}
            other => panic!("expected short drop, got {other:?}"),
        }
    }

    #[test]
    fn kept_subject_is_centered_and_warped() {
        let raw = RawSeries {
            subject_id: "ok".into(),
            pixel_values: vec![2.0, 6.0, 4.0, 8.0],
            landmark: Some(0.5),
        };
        let opts = PreprocessOptions {
            warp_target: 0.25,
            with_covariates: false,
            ..Default::default()
        };
        match process_subject(&raw, None, &opts).unwrap() {
            Prepared::Kept(obs, warnings) => {
                assert!(warnings.is_empty());
                assert!(obs.values.sum().abs() < 1e-10);
                assert_abs_diff_eq!(obs.times[0], 0.0, epsilon = 1e-15);
                assert_abs_diff_eq!(obs.times[3], 1.0, epsilon = 1e-15);
                // t-tilde = 1/3 < 0.5 is scaled by 0.25 / 0.5.
                assert_abs_diff_eq!(obs.times[1], (1.0 / 3.0) * 0.5, epsilon = 1e-12);
                for w in obs.times.windows(2) {
                    assert!(w[1] > w[0]);
                }
            }
            other => panic!("expected kept, got {other:?}"),
        }
    }

    #[test]
    fn missing_landmark_policy() {
        let raw = RawSeries {
            subject_id: "nolm".into(),
            pixel_values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            landmark: None,
        };
        let bypass = PreprocessOptions {
            with_covariates: false,
            ..Default::default()
        };
        match process_subject(&raw, None, &bypass).unwrap() {
            Prepared::Kept(_, warnings) => assert_eq!(warnings.len(), 1),
            other => panic!("expected kept with warning, got {other:?}"),
        }
        let exclude = PreprocessOptions {
            landmark_policy: LandmarkPolicy::Exclude,
            with_covariates: false,
            ..Default::default()
        };
        match process_subject(&raw, None, &exclude).unwrap() {
            Prepared::Dropped(DropReason::MissingLandmark) => {}
            other => panic!("expected exclusion, got {other:?}"),
        }
    }
}
