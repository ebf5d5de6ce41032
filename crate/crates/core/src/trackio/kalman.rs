//! Constant-velocity Kalman filter and Rauch–Tung–Striebel smoother for a
//! single scalar coordinate.

use nalgebra::{Matrix2, Vector2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvNoise {
    /// Process noise: white acceleration standard deviation (units/s²).
    pub accel_sigma: f64,
    /// Measurement noise standard deviation (units).
    pub meas_sigma: f64,
}

impl CvNoise {
    fn transition(dt: f64) -> Matrix2<f64> {
        Matrix2::new(1.0, dt, 0.0, 1.0)
    }

    fn process(&self, dt: f64) -> Matrix2<f64> {
        let q = self.accel_sigma * self.accel_sigma;
        let (dt2, dt3, dt4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
        Matrix2::new(dt4 / 4.0, dt3 / 2.0, dt3 / 2.0, dt2) * q
    }
}

/// Online constant-velocity filter on one coordinate.
#[derive(Debug, Clone)]
pub struct CvKalman1D {
    pub state: Vector2<f64>,
    pub cov: Matrix2<f64>,
    noise: CvNoise,
}

impl CvKalman1D {
    pub fn new(position: f64, velocity: f64, cov: Matrix2<f64>, noise: CvNoise) -> Self {
        Self {
            state: Vector2::new(position, velocity),
            cov,
            noise,
        }
    }

    /// Start at a first measurement with unknown velocity.
    pub fn from_measurement(z: f64, velocity_sigma: f64, noise: CvNoise) -> Self {
        let r = noise.meas_sigma * noise.meas_sigma;
        Self::new(
            z,
            0.0,
            Matrix2::new(r, 0.0, 0.0, velocity_sigma * velocity_sigma),
            noise,
        )
    }

    pub fn predict(&mut self, dt: f64) {
        let f = CvNoise::transition(dt);
        self.state = f * self.state;
        self.cov = f * self.cov * f.transpose() + self.noise.process(dt);
    }

    pub fn update(&mut self, z: f64) {
        let r = self.noise.meas_sigma * self.noise.meas_sigma;
        let s = self.cov[(0, 0)] + r;
        let gain = Vector2::new(self.cov[(0, 0)], self.cov[(1, 0)]) / s;
        let innovation = z - self.state[0];
        self.state += gain * innovation;
        let h = Matrix2::new(1.0, 0.0, 0.0, 0.0);
        self.cov = (Matrix2::identity() - gain * h.row(0)) * self.cov;
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
    }

    pub fn position(&self) -> f64 {
        self.state[0]
    }
}

/// Forward filter + RTS smoother over a uniformly sampled series with gaps.
///
/// Returns `None` if fewer than two observations are present. Samples before
/// the first observation are extrapolated backwards from the smoothed state
/// at that observation.
pub fn smooth_series(obs: &[Option<f64>], dt: f64, noise: CvNoise) -> Option<Vec<f64>> {
    let mut present = obs
        .iter()
        .enumerate()
        .filter_map(|(i, z)| z.map(|z| (i, z)));
    let (i1, z1) = present.next()?;
    let (i2, z2) = present.next()?;
    let gap = (i2 - i1) as f64 * dt;
    let r = noise.meas_sigma * noise.meas_sigma;
    let init_cov = Matrix2::new(r, r / gap, r / gap, 2.0 * r / (gap * gap));
    let mut kf = CvKalman1D::new(z1, (z2 - z1) / gap, init_cov, noise);
    kf.update(z1);

    let n = obs.len();
    let f = CvNoise::transition(dt);
    let mut filt_x = Vec::with_capacity(n - i1);
    let mut filt_p = Vec::with_capacity(n - i1);
    let mut pred_x = Vec::with_capacity(n - i1);
    let mut pred_p = Vec::with_capacity(n - i1);
    filt_x.push(kf.state);
    filt_p.push(kf.cov);
    pred_x.push(kf.state);
    pred_p.push(kf.cov);
    for z in &obs[i1 + 1..] {
        kf.predict(dt);
        pred_x.push(kf.state);
        pred_p.push(kf.cov);
        if let Some(z) = z {
            kf.update(*z);
        }
        filt_x.push(kf.state);
        filt_p.push(kf.cov);
    }

    let m = filt_x.len();
    let mut smooth = filt_x.clone();
    for k in (0..m - 1).rev() {
        let p_pred = pred_p[k + 1];
        let gain = match p_pred.try_inverse() {
            Some(inv) => filt_p[k] * f.transpose() * inv,
            None => Matrix2::zeros(),
        };
        smooth[k] = filt_x[k] + gain * (smooth[k + 1] - pred_x[k + 1]);
    }

    let mut out = vec![0.0; n];
    let head = smooth[0];
    for (i, o) in out.iter_mut().enumerate().take(i1) {
        *o = head[0] - head[1] * (i1 - i) as f64 * dt;
    }
    for (k, s) in smooth.iter().enumerate() {
        out[i1 + k] = s[0];
    }
    Some(out)
}
