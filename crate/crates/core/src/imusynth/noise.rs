//! Simplified MEMS error model: white noise, bias random walk and
//! quantization with range clipping.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ImuStream, STANDARD_GRAVITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    /// White-noise standard deviation, m/s².
    pub accel_sigma: f64,
    /// White-noise standard deviation, rad/s.
    pub gyro_sigma: f64,
    /// Bias random-walk standard deviation per √s (channel units).
    pub bias_walk_sigma: f64,
    /// Full-scale accelerometer range, m/s² (0 disables clipping).
    pub accel_range: f64,
    /// Full-scale gyroscope range, rad/s (0 disables clipping).
    pub gyro_range: f64,
    /// ADC resolution over the full range (0 disables quantization).
    pub quantization_bits: u32,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            accel_sigma: 0.05,
            gyro_sigma: 0.005,
            bias_walk_sigma: 0.001,
            accel_range: 8.0 * STANDARD_GRAVITY,
            gyro_range: 2000f64.to_radians(),
            quantization_bits: 16,
        }
    }
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self {
            accel_sigma: 0.0,
            gyro_sigma: 0.0,
            bias_walk_sigma: 0.0,
            accel_range: 0.0,
            gyro_range: 0.0,
            quantization_bits: 0,
        }
    }
}

fn corrupt(
    samples: &mut [Vector3<f64>],
    sigma: f64,
    walk: f64,
    range: f64,
    bits: u32,
    dt: f64,
    rng: &mut ChaCha8Rng,
) {
    let mut bias: Vector3<f64> = Vector3::zeros();
    let lsb = (bits > 0 && range > 0.0).then(|| 2.0 * range / 2f64.powi(bits as i32));
    for s in samples.iter_mut() {
        for k in 0..3 {
            let white: f64 = rng.sample(StandardNormal);
            let step: f64 = rng.sample(StandardNormal);
            bias[k] += walk * dt.sqrt() * step;
            let mut v = s[k] + sigma * white + bias[k];
            if range > 0.0 {
                v = v.clamp(-range, range);
            }
            if let Some(lsb) = lsb {
                v = (v / lsb).round() * lsb;
            }
            s[k] = v;
        }
    }
}

/// Add noise to accelerometer and gyroscope channels; the magnetometer is
/// left untouched. Deterministic for a given seed.
pub fn sensor_noise(stream: &ImuStream, seed: u64, params: &NoiseParams) -> ImuStream {
    let mut out = stream.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / stream.rate;
    corrupt(
        &mut out.accel,
        params.accel_sigma,
        params.bias_walk_sigma,
        params.accel_range,
        params.quantization_bits,
        dt,
        &mut rng,
    );
    corrupt(
        &mut out.gyro,
        params.gyro_sigma,
        params.bias_walk_sigma,
        params.gyro_range,
        params.quantization_bits,
        dt,
        &mut rng,
    );
    out
}
