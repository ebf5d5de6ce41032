//! Rank-transform distribution mapping and Frechet distance between
//! Gaussian feature statistics.
//!
//! A value is mapped through the source empirical CDF and then through the
//! inverse target empirical CDF, `x_r = G⁻¹(F(x_v))`. Both CDFs place the
//! k-th order statistic (0-based) of n samples at the Hazen plotting
//! position `(k + 0.5)/n` and interpolate linearly in between; outside the
//! sample range probabilities clamp to the extreme positions.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imusynth::ImuStream;
use crate::par;

pub const SCHEMA: &str = "dmap_v1";

/// Channel suffixes of one placement, in stream order.
pub const CHANNELS: [&str; 9] = ["ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"];

#[derive(Debug, Error)]
pub enum DistError {
    #[error("channel {channel}: need at least 2 samples, found {found}")]
    TooFewSamples { channel: String, found: usize },
    #[error("channel {0}: samples must be finite")]
    NonFinite(String),
    #[error("channel count mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("no channel named `{0}`")]
    UnknownChannel(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} feature vectors, found {found}")]
    TooFewVectors { needed: usize, found: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {detail}")]
    Schema { file: String, detail: String },
}

/// Sorted samples of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>, channel: &str) -> Result<Self, DistError> {
        if samples.len() < 2 {
            return Err(DistError::TooFewSamples {
                channel: channel.to_string(),
                found: samples.len(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(DistError::NonFinite(channel.to_string()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { values: samples })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn position(&self, k: f64) -> f64 {
        (k + 0.5) / self.values.len() as f64
    }

    /// `F(x)`, clamped to `[0.5/n, 1 − 0.5/n]`. Tied samples share the mean
    /// of their plotting positions.
    pub fn cdf(&self, x: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        let lo = v.partition_point(|s| *s < x);
        let hi = v.partition_point(|s| *s <= x);
        if lo < hi {
            return self.position((lo + hi - 1) as f64 / 2.0);
        }
        if lo == 0 {
            return self.position(0.0);
        }
        if lo == n {
            return self.position((n - 1) as f64);
        }
        let (a, b) = (v[lo - 1], v[lo]);
        let f = (x - a) / (b - a);
        self.position(lo as f64 - 1.0 + f)
    }

    /// `G⁻¹(p)`, linear between order statistics, clamped to the sample
    /// range.
    pub fn quantile(&self, p: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        let k = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i = k.floor() as usize;
        if i + 1 >= n {
            return v[n - 1];
        }
        let f = k - i as f64;
        v[i] + f * (v[i + 1] - v[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMap {
    pub name: String,
    /// Virtual-domain samples (F).
    pub source: EmpiricalCdf,
    /// Real-domain samples (G).
    pub target: EmpiricalCdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionMap {
    pub schema: String,
    pub channels: Vec<ChannelMap>,
}

/// Fit one map per named channel.
pub fn fit_map(
    names: &[String],
    virtual_samples: &[Vec<f64>],
    real_samples: &[Vec<f64>],
) -> Result<DistributionMap, DistError> {
    if names.len() != virtual_samples.len() {
        return Err(DistError::ChannelMismatch(
            names.len(),
            virtual_samples.len(),
        ));
    }
    if names.len() != real_samples.len() {
        return Err(DistError::ChannelMismatch(names.len(), real_samples.len()));
    }
    let channels = par::map_range(names.len(), |c| -> Result<ChannelMap, DistError> {
        Ok(ChannelMap {
            name: names[c].clone(),
            source: EmpiricalCdf::new(virtual_samples[c].clone(), &names[c])?,
            target: EmpiricalCdf::new(real_samples[c].clone(), &names[c])?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(DistributionMap {
        schema: SCHEMA.to_string(),
        channels,
    })
}

impl DistributionMap {
    pub fn channel_index(&self, name: &str) -> Result<usize, DistError> {
        self.channels
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| DistError::UnknownChannel(name.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DistError> {
        crate::egomotion::io::write_atomic(path, self.to_json().as_bytes()).map_err(|e| {
            DistError::Schema {
                file: path.display().to_string(),
                detail: e.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, DistError> {
        let text = fs::read_to_string(path).map_err(|e| DistError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let schema = |detail: String| DistError::Schema {
            file: path.display().to_string(),
            detail,
        };
        let map: DistributionMap =
            serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        if map.schema != SCHEMA {
            return Err(schema(format!(
                "field `schema` must be \"{SCHEMA}\", got {:?}",
                map.schema
            )));
        }
        for c in &map.channels {
            for (side, cdf) in [("source", &c.source), ("target", &c.target)] {
                if cdf.len() < 2
                    || !cdf.values.windows(2).all(|w| w[0] <= w[1])
                    || cdf.values.iter().any(|v| !v.is_finite())
                {
                    return Err(schema(format!(
                        "channel `{}` field `{side}` must hold at least 2 sorted finite samples",
                        c.name
                    )));
                }
            }
        }
        Ok(map)
    }
}

/// `G⁻¹(F(x_v))` for one channel.
pub fn apply_map(map: &DistributionMap, x_v: f64, channel: usize) -> f64 {
    let c = &map.channels[channel];
    c.target.quantile(c.source.cdf(x_v))
}

/// Channel names for the nine channels of a placement.
pub fn placement_channels(placement: &str) -> Vec<String> {
    CHANNELS
        .iter()
        .map(|c| format!("{placement}:{c}"))
        .collect()
}

/// Map every channel of a stream through the channels named after its
/// placement; the magnetometer is renormalized afterwards.
pub fn apply_to_stream(map: &DistributionMap, stream: &ImuStream) -> Result<ImuStream, DistError> {
    let idx = placement_channels(&stream.placement)
        .iter()
        .map(|n| map.channel_index(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = stream.clone();
    for i in 0..stream.len() {
        let s = stream.sample(i);
        let mut m = [0.0; 9];
        for k in 0..9 {
            m[k] = apply_map(map, s[k], idx[k]);
        }
        out.set_sample(i, &m);
        out.mag[i] = out.mag[i].try_normalize(1e-12).unwrap_or(out.mag[i]);
    }
    Ok(out)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased covariance; needs `dim + 1` vectors.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats, DistError> {
    let dim = features.first().map_or(0, Vec::len);
    if features.len() < dim + 1 || features.len() < 2 {
        return Err(DistError::TooFewVectors {
            needed: (dim + 1).max(2),
            found: features.len(),
        });
    }
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(DistError::DimensionMismatch(dim, bad.len()));
    }
    let n = features.len() as f64;
    let mut mean = DVector::zeros(dim);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n;
    let mut centered = DMatrix::zeros(dim, features.len());
    for (k, f) in features.iter().enumerate() {
        centered.set_column(k, &(DVector::from_column_slice(f) - &mean));
    }
    let cov = (&centered * centered.transpose()) / (n - 1.0);
    Ok(GaussianStats { mean, cov })
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})`, with the trace of the
/// square root taken from the symmetric product `√Σa Σb √Σa`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, DistError> {
    if a.mean.len() != b.mean.len() {
        return Err(DistError::DimensionMismatch(a.mean.len(), b.mean.len()));
    }
    let sa = sym_sqrt(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = inner
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn one(name: &str, v: Vec<f64>, r: Vec<f64>) -> DistributionMap {
        fit_map(&[name.to_string()], &[v], &[r]).unwrap()
    }

    #[test]
    fn identity_when_distributions_match() {
        let s = vec![3.0, -1.0, 2.5, 0.0, 7.0];
        let m = one("a", s.clone(), s.clone());
        for x in &s {
            assert!((apply_map(&m, *x, 0) - x).abs() < 1e-9);
        }
        let tied = vec![1.0, 1.0, 2.0, 2.0, 2.0, 5.0];
        let m = one("a", tied.clone(), tied.clone());
        for x in &tied {
            assert!((apply_map(&m, *x, 0) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_is_removed_on_order_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real: Vec<f64> = (0..1000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let virt: Vec<f64> = real.iter().map(|x| x + 5.0).collect();
        let m = one("a", virt.clone(), real.clone());
        let mut mapped: Vec<f64> = virt.iter().map(|x| apply_map(&m, *x, 0)).collect();
        let mut sorted = real.clone();
        mapped.sort_by(f64::total_cmp);
        sorted.sort_by(f64::total_cmp);
        for (a, b) in mapped.iter().zip(&sorted) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_to_normal_passes_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let virt: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let real: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m = one("a", virt.clone(), real.clone());
        let mapped: Vec<f64> = virt.iter().map(|x| apply_map(&m, *x, 0)).collect();
        assert!(ks_statistic(&mapped, &real) < 0.02);
        // Out-of-range inputs clamp to the target extremes.
        let lo = real.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(apply_map(&m, -10.0, 0) >= lo && apply_map(&m, 10.0, 0) <= hi);
    }

    #[test]
    fn fit_requires_two_samples() {
        let err = fit_map(&["x".into()], &[vec![1.0]], &[vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, DistError::TooFewSamples { found: 1, .. }));
        let m = fit_map(
            &["a".into(), "b".into()],
            &[vec![1.0, 2.0], vec![0.0, 1.0]],
            &[vec![1.0, 2.0], vec![4.0, 5.0]],
        )
        .unwrap();
        assert_eq!(m.channels.len(), 2);
        assert_eq!(m.channel_index("b").unwrap(), 1);
    }

    #[test]
    fn json_round_trip_and_schema_check() {
        let dir = tempfile::tempdir().unwrap();
        let m = one("wrist_left:ax", vec![2.0, 1.0, 3.0], vec![0.0, 1.0]);
        let path = dir.path().join("map.json");
        m.save(&path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains("\"dmap_v1\""));
        assert_eq!(DistributionMap::load(&path).unwrap(), m);
        fs::write(&path, m.to_json().replace("dmap_v1", "dmap_v0")).unwrap();
        assert!(DistributionMap::load(&path)
            .unwrap_err()
            .to_string()
            .contains("schema"));
    }

    fn gauss(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        let d = mean.len();
        GaussianStats {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_row_slice(d, d, &cov),
        }
    }

    #[test]
    fn frechet_examples() {
        let a = gauss(vec![0.0], vec![1.0]);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-9);
        assert!((frechet_distance(&a, &gauss(vec![1.0], vec![1.0])).unwrap() - 1.0).abs() < 1e-9);
        assert!((frechet_distance(&a, &gauss(vec![0.0], vec![4.0])).unwrap() - 1.0).abs() < 1e-9);
        let p = gauss(vec![1.0, 2.0], vec![2.0, 0.5, 0.5, 1.0]);
        let q = gauss(vec![0.0, 2.5], vec![1.0, -0.2, -0.2, 3.0]);
        let (d1, d2) = (
            frechet_distance(&p, &q).unwrap(),
            frechet_distance(&q, &p).unwrap(),
        );
        assert!((d1 - d2).abs() < 1e-9);
        assert!(frechet_distance(&p, &a).is_err());
    }

    #[test]
    fn gaussian_fit_examples() {
        let g = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert!((g.mean[0] - 1.0).abs() < 1e-12 && (g.cov[(0, 0)] - 2.0).abs() < 1e-12);
        let same = fit_gaussian(&vec![vec![1.0, 2.0]; 5]).unwrap();
        assert!(same.cov.norm() == 0.0);
        assert!(fit_gaussian(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(fit_gaussian(&[vec![1.0, 2.0], vec![3.0, 4.0]]).is_err());
    }
}
