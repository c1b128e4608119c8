//! Depth to altitude to pseudo-LiDAR conversion.
//!
//! Altitude at (u,v) is ((v - c_v)/f_v) * depth. The pseudo-LiDAR value is
//! the average slope magnitude of altitude differences over a 7x7 window;
//! a slope term whose coordinate offset is zero contributes nothing, and
//! the window is clipped at the image border with N the in-image count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WINDOW_RADIUS: isize = 3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CameraIntrinsics {
    pub f_v: f64,
    pub c_u: f64,
    pub c_v: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), PlError> {
        if !(self.f_v > 0.0 && self.f_v.is_finite()) {
            return Err(PlError::InvalidIntrinsics { f_v: self.f_v });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PlError {
    #[error("focal length must be positive and finite, got {f_v}")]
    InvalidIntrinsics { f_v: f64 },
    #[error("depth map contains a non-finite or negative value at (u={u}, v={v})")]
    BadDepth { u: usize, v: usize },
    #[error("map extents must be positive")]
    EmptyMap,
    #[error("clip must be positive, got {clip}")]
    BadClip { clip: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        ScalarMap { width, height, values }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }
}

pub type DepthMap = ScalarMap;
pub type AltitudeMap = ScalarMap;
pub type PseudoLidarMap = ScalarMap;

pub fn depth_to_altitude(depth: &DepthMap, cam: &CameraIntrinsics) -> Result<AltitudeMap, PlError> {
    cam.validate()?;
    if depth.width == 0 || depth.height == 0 {
        return Err(PlError::EmptyMap);
    }
    let mut values = Vec::with_capacity(depth.values.len());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.at(u, v);
            if !z.is_finite() || z < 0.0 {
                return Err(PlError::BadDepth { u, v });
            }
            values.push((v as f64 - cam.c_v) / cam.f_v * z);
        }
    }
    Ok(AltitudeMap::new(depth.width, depth.height, values))
}

pub fn altitude_to_pl(alt: &AltitudeMap) -> Result<PseudoLidarMap, PlError> {
    if alt.width == 0 || alt.height == 0 {
        return Err(PlError::EmptyMap);
    }
    let (w, h) = (alt.width as isize, alt.height as isize);
    let mut values = Vec::with_capacity(alt.values.len());
    for v in 0..h {
        for u in 0..w {
            let center = alt.values[(v * w + u) as usize];
            let mut acc = 0.0;
            let mut n = 0usize;
            for nv in v - WINDOW_RADIUS..=v + WINDOW_RADIUS {
                if nv < 0 || nv >= h {
                    continue;
                }
                for nu in u - WINDOW_RADIUS..=u + WINDOW_RADIUS {
                    if nu < 0 || nu >= w {
                        continue;
                    }
                    if nu == u && nv == v {
                        continue;
                    }
                    let dh = alt.values[(nv * w + nu) as usize] - center;
                    let du = (nu - u) as f64;
                    let dv = (nv - v) as f64;
                    let tu = if nu == u { 0.0 } else { dh / du };
                    let tv = if nv == v { 0.0 } else { dh / dv };
                    acc += (tu * tu + tv * tv).sqrt();
                    n += 1;
                }
            }
            values.push(if n == 0 { 0.0 } else { acc / n as f64 });
        }
    }
    Ok(PseudoLidarMap::new(alt.width, alt.height, values))
}

/// Clamp to [0, clip] and scale to [0, 1] for network ingestion.
pub fn pl_feature_image(pl: &PseudoLidarMap, clip: f64) -> Result<Vec<f64>, PlError> {
    if !(clip > 0.0) {
        return Err(PlError::BadClip { clip });
    }
    Ok(pl.values.iter().map(|&v| v.clamp(0.0, clip) / clip).collect())
}

/// The dataset manifest stores this percentile of training-split PL values as
/// the feature clip constant.
pub fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((values.len() - 1) as f64 * q).round() as usize;
    values[idx]
}
