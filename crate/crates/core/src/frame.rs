//! Multi-modal frame records shared by the data, encoder and adaptation layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain tag; the discriminator labels source `0` and target `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

/// Pinhole intrinsics plus the rigid sensor-to-camera transform `p_cam = R·p + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::arg(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::arg("calibration rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Rotates a camera-frame direction into the sensor frame (`Rᵀ·d`).
    pub fn direction_to_sensor(&self, d: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Camera centre expressed in the sensor frame (`−Rᵀ·t`).
    pub fn camera_center(&self) -> [f64; 3] {
        let c = self.direction_to_sensor(self.translation);
        [-c[0], -c[1], -c[2]]
    }
}

/// One synchronised image / point-cloud sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub domain: Domain,
    pub height: usize,
    pub width: usize,
    /// Row-major `H×W×3` RGB in `[0, 1]`.
    pub image: Vec<f64>,
    pub points: Vec<[f64; 3]>,
    /// Per-point class id, `None` for ignored points.
    pub labels: Vec<Option<usize>>,
    pub calibration: Calibration,
}

impl Frame {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.image.len() != self.height * self.width * 3 {
            return Err(Error::shape(format!(
                "frame {} image has {} values for {}x{}x3",
                self.id,
                self.image.len(),
                self.height,
                self.width
            )));
        }
        if self.labels.len() != self.points.len() {
            return Err(Error::shape(format!(
                "frame {} has {} labels for {} points",
                self.id,
                self.labels.len(),
                self.points.len()
            )));
        }
        if let Some(bad) = self.labels.iter().flatten().find(|&&l| l >= num_classes) {
            return Err(Error::arg(format!(
                "frame {} label {bad} outside {num_classes} classes",
                self.id
            )));
        }
        self.calibration.validate()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.image.iter().sum::<f64>() / self.image.len().max(1) as f64
    }
}
