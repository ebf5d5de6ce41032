//! Windowing, ECDF features, random forests, metrics and the
//! leave-one-subject-out evaluation protocols.

pub mod eval;
pub mod forest;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imusynth::{ImuStream, Origin};

pub use eval::{evaluate_loso, Dataset, EvalConfig, EvalReport, Protocol};
pub use forest::{forest_predict, forest_train, ForestConfig, ForestModel, Prediction};

#[derive(Debug, Error)]
pub enum HarError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: expected {0}, found {1}")]
    DimensionMismatch(usize, usize),
    #[error("training data holds a single class")]
    SingleClass,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("n must be positive")]
    EmptySample,
    #[error("insufficient data per class: {0}")]
    Insufficient(String),
    #[error("need at least 3 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("recording streams disagree: {0}")]
    InconsistentRecording(String),
    #[error(transparent)]
    Map(#[from] crate::distmap::DistError),
}

/// A fixed-length multichannel segment. `channels[c]` holds the `L`
/// samples of channel `c`; channels are ordered by placement, then accel
/// xyz, gyro xyz, mag xyz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub channels: Vec<Vec<f64>>,
    pub label: String,
    pub subject: String,
    pub origin: Origin,
    /// Identifier of the recording the window was cut from.
    pub recording: String,
}

impl Window {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of windows per the slicing rule, in closed form.
pub fn window_count(duration_s: f64, length_s: f64, overlap: f64) -> usize {
    if duration_s + 1e-9 < length_s {
        return 0;
    }
    ((duration_s - length_s) / (length_s * (1.0 - overlap)) + 1e-9).floor() as usize + 1
}

/// Cut synchronized streams (one per placement, same rate, length and
/// labels) into windows starting every `length_s·(1 − overlap)` seconds;
/// a trailing partial window is dropped. The recording's duration is
/// `samples / rate`.
pub fn window_slice(
    streams: &[&ImuStream],
    length_s: f64,
    overlap: f64,
    recording: &str,
) -> Result<Vec<Window>, HarError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(HarError::InvalidParameter(format!(
            "overlap {overlap} outside [0, 1)"
        )));
    }
    if !(length_s > 0.0) {
        return Err(HarError::InvalidParameter(format!(
            "window length {length_s} must be positive"
        )));
    }
    let Some(first) = streams.first() else {
        return Ok(Vec::new());
    };
    for s in streams {
        if s.len() != first.len()
            || s.rate != first.rate
            || s.label != first.label
            || s.subject != first.subject
            || s.origin != first.origin
        {
            return Err(HarError::InconsistentRecording(format!(
                "{} vs {} in {recording}",
                first.placement, s.placement
            )));
        }
    }
    let rate = first.rate;
    let n = first.len();
    let len = (length_s * rate).round() as usize;
    let count = window_count(n as f64 / rate, length_s, overlap);
    let step_s = length_s * (1.0 - overlap);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = ((k as f64 * step_s * rate).round() as usize).min(n.saturating_sub(len));
        let mut channels = Vec::with_capacity(9 * streams.len());
        for s in streams {
            for c in 0..9 {
                channels.push((start..start + len).map(|i| s.sample(i)[c]).collect());
            }
        }
        out.push(Window {
            channels,
            label: first.label.clone(),
            subject: first.subject.clone(),
            origin: first.origin,
            recording: recording.to_string(),
        });
    }
    Ok(out)
}

/// Per channel: the inverse empirical CDF at `k/(n_components + 1)` for
/// `k = 1..=n_components` (linear interpolation over sorted samples),
/// then the channel mean. Length `channels × (n_components + 1)`.
pub fn ecdf_features(window: &Window, n_components: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.channels.len() * (n_components + 1));
    for ch in &window.channels {
        let mut s = ch.clone();
        s.sort_by(f64::total_cmp);
        let last = (s.len() - 1) as f64;
        for k in 1..=n_components {
            let pos = k as f64 / (n_components + 1) as f64 * last;
            let i = pos.floor() as usize;
            let v = if i + 1 < s.len() {
                s[i] + (pos - i as f64) * (s[i + 1] - s[i])
            } else {
                s[s.len() - 1]
            };
            out.push(v);
        }
        out.push(ch.iter().sum::<f64>() / ch.len() as f64);
    }
    out
}

/// Unweighted mean of per-class F1 over the classes that occur in
/// `truth`; classes without truth instances are skipped.
pub fn macro_f1(predictions: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..n_classes {
        if tp[c] + fn_[c] == 0 {
            continue;
        }
        classes += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        sum += 2.0 * tp[c] as f64 / denom as f64;
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64), HarError> {
    if n == 0 {
        return Err(HarError::EmptySample);
    }
    if successes > n {
        return Err(HarError::InvalidParameter(format!(
            "{successes} successes out of {n}"
        )));
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let high = if successes == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    Ok((low, high))
}

/// Per class: `real_per_class` real windows and
/// `round(real_per_class × virtual_ratio)` virtual windows, drawn
/// uniformly without replacement with a seeded generator.
pub fn mix_datasets(
    real: &[Window],
    virtual_: &[Window],
    real_per_class: usize,
    virtual_ratio: f64,
    seed: u64,
) -> Result<Vec<Window>, HarError> {
    let mut by_class: BTreeMap<&str, (Vec<&Window>, Vec<&Window>)> = BTreeMap::new();
    for w in real {
        by_class.entry(&w.label).or_default().0.push(w);
    }
    for w in virtual_ {
        by_class.entry(&w.label).or_default().1.push(w);
    }
    let want_virtual = (real_per_class as f64 * virtual_ratio).round() as usize;
    let mut shortfalls = Vec::new();
    for (label, (r, v)) in &by_class {
        if r.len() < real_per_class {
            shortfalls.push(format!("{label}: real {}/{real_per_class}", r.len()));
        }
        if v.len() < want_virtual {
            shortfalls.push(format!("{label}: virtual {}/{want_virtual}", v.len()));
        }
    }
    if !shortfalls.is_empty() {
        return Err(HarError::Insufficient(shortfalls.join(", ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, (r, v)) in by_class {
        for (pool, k) in [(r, real_per_class), (v, want_virtual)] {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng);
            let mut chosen = idx[..k].to_vec();
            chosen.sort_unstable();
            out.extend(chosen.into_iter().map(|i| pool[i].clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn stream(seconds: f64, rate: f64, label: &str, origin: Origin) -> ImuStream {
        let n = (seconds * rate).round() as usize;
        ImuStream {
            rate,
            accel: (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
            gyro: vec![Vector3::zeros(); n],
            mag: vec![Vector3::x(); n],
            placement: "p".into(),
            label: label.into(),
            subject: "s".into(),
            origin,
        }
    }

    #[test]
    fn window_counts() {
        let s = stream(10.0, 30.0, "a", Origin::Real);
        assert_eq!(window_slice(&[&s], 1.0, 0.5, "r").unwrap().len(), 19);
        assert_eq!(window_slice(&[&s], 1.0, 0.0, "r").unwrap().len(), 10);
        let short = stream(0.5, 30.0, "a", Origin::Real);
        assert!(window_slice(&[&short], 1.0, 0.5, "r").unwrap().is_empty());
        let w = window_slice(&[&s, &s], 1.0, 0.5, "r").unwrap();
        assert_eq!(w[1].channels.len(), 18);
        assert_eq!(w[1].channels[0][0], 15.0);
        assert_eq!(w[1].len(), 30);
    }

    #[test]
    fn ecdf_examples() {
        let constant = Window {
            channels: vec![vec![2.5; 30]],
            label: "a".into(),
            subject: "s".into(),
            origin: Origin::Real,
            recording: "r".into(),
        };
        assert!(ecdf_features(&constant, 15).iter().all(|&v| v == 2.5));
        let l = 31;
        let ramp = Window {
            channels: vec![(0..l).map(|i| i as f64 / (l - 1) as f64).collect(); 2],
            ..constant
        };
        let f = ecdf_features(&ramp, 15);
        assert_eq!(f.len(), 2 * 16);
        for k in 1..=15 {
            assert!((f[k - 1] - k as f64 / 16.0).abs() <= 1.0 / l as f64);
        }
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        assert!((macro_f1(&[0, 1, 1, 0], &[0, 1, 0, 1], 2) - 0.5).abs() < 1e-12);
        assert!((macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2) - 1.0 / 3.0).abs() < 1e-12);
        // A class never seen in truth is skipped.
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 5), 1.0);
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(50, 100, 1.96).unwrap();
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        assert_eq!(wilson_interval(0, 10, 1.96).unwrap().0, 0.0);
        assert_eq!(wilson_interval(10, 10, 1.96).unwrap().1, 1.0);
        assert!(wilson_interval(0, 0, 1.96).is_err());
    }

    fn windows(label: &str, origin: Origin, n: usize) -> Vec<Window> {
        (0..n)
            .map(|i| Window {
                channels: vec![vec![i as f64]],
                label: label.into(),
                subject: "s".into(),
                origin,
                recording: format!("{label}{i}"),
            })
            .collect()
    }

    #[test]
    fn mixing_examples() {
        let real: Vec<_> = [
            windows("a", Origin::Real, 10),
            windows("b", Origin::Real, 10),
        ]
        .concat();
        let virt: Vec<_> = [
            windows("a", Origin::Virtual, 20),
            windows("b", Origin::Virtual, 20),
        ]
        .concat();
        let only_real = mix_datasets(&real, &virt, 5, 0.0, 1).unwrap();
        assert_eq!(only_real.len(), 10);
        assert!(only_real.iter().all(|w| w.origin == Origin::Real));
        let even = mix_datasets(&real, &virt, 6, 1.0, 1).unwrap();
        for label in ["a", "b"] {
            for origin in [Origin::Real, Origin::Virtual] {
                assert_eq!(
                    even.iter()
                        .filter(|w| w.label == label && w.origin == origin)
                        .count(),
                    6
                );
            }
        }
        assert_eq!(mix_datasets(&real, &virt, 6, 1.0, 1).unwrap(), even);
        let err = mix_datasets(&real, &virt, 8, 3.0, 1)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("a: virtual 20/24") && err.contains("b: virtual 20/24"),
            "{err}"
        );
    }
}
