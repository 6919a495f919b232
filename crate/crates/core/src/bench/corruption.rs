//! Six corruption families over flattened images with values near `[0, 1]`.
//!
//! Severity 0 is the identity; severities 1..=5 index the parameter tables
//! below, each monotone in severity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::numkit::{Matrix, SeededRng};

/// Added noise standard deviation.
pub const GAUSSIAN_SIGMA: [f64; 6] = [0.0, 0.08, 0.12, 0.18, 0.26, 0.38];
/// Fraction of pixels replaced by 0 or 1.
pub const IMPULSE_FRACTION: [f64; 6] = [0.0, 0.03, 0.06, 0.09, 0.17, 0.27];
/// Gaussian blur kernel standard deviation, in pixels.
pub const BLUR_SIGMA: [f64; 6] = [0.0, 1.25, 1.4, 1.55, 1.75, 2.0];
/// Factor applied to deviations from the per-sample mean.
pub const CONTRAST_FACTOR: [f64; 6] = [1.0, 0.75, 0.5, 0.4, 0.3, 0.2];
/// Added constant.
pub const BRIGHTNESS_SHIFT: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
/// Number of quantization levels (0 means no quantization).
pub const PIXELATE_LEVELS: [usize; 6] = [0, 16, 8, 6, 4, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    Blur,
    Contrast,
    Brightness,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::Blur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::Blur => "blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = PaidError;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PaidError::Config(format!("unknown corruption kind {s:?}")))
    }
}

/// A corruption family at a fixed severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl Corruption {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        let c = Self { kind, severity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.severity > 5 {
            return Err(PaidError::Config(format!(
                "severity {} of {} outside 0..=5",
                self.severity, self.kind
            )));
        }
        Ok(())
    }

    /// The default six-domain suite, every family at severity 5.
    pub fn default_suite() -> Vec<Corruption> {
        CorruptionKind::ALL
            .into_iter()
            .map(|kind| Corruption { kind, severity: 5 })
            .collect()
    }

    pub fn apply(&self, x: &Matrix, rng: &mut SeededRng) -> Result<Matrix> {
        apply_corruption(x, *self, rng)
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.severity)
    }
}

pub fn apply_corruption(x: &Matrix, c: Corruption, rng: &mut SeededRng) -> Result<Matrix> {
    c.validate()?;
    let s = c.severity as usize;
    if s == 0 {
        return Ok(x.clone());
    }
    let out = match c.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = GAUSSIAN_SIGMA[s];
            let mut y = x.clone();
            y.data_mut().iter_mut().for_each(|v| *v += sigma * rng.gaussian());
            y
        }
        CorruptionKind::ImpulseNoise => {
            let p = IMPULSE_FRACTION[s];
            let mut y = x.clone();
            for v in y.data_mut() {
                if rng.uniform() < p {
                    *v = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
                }
            }
            y
        }
        CorruptionKind::Blur => blur(x, BLUR_SIGMA[s]),
        CorruptionKind::Contrast => {
            let f = CONTRAST_FACTOR[s];
            let mut y = x.clone();
            for i in 0..y.rows() {
                let row = y.row_mut(i);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                row.iter_mut().for_each(|v| *v = mean + f * (*v - mean));
            }
            y
        }
        CorruptionKind::Brightness => x.map(|v| v + BRIGHTNESS_SHIFT[s]),
        CorruptionKind::Pixelate => {
            let q = (PIXELATE_LEVELS[s] - 1) as f64;
            x.map(|v| (v.clamp(0.0, 1.0) * q).round() / q)
        }
    };
    Ok(out)
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped edges. Rows whose length is a
/// perfect square are treated as square images, anything else as 1-D.
fn blur(x: &Matrix, sigma: f64) -> Matrix {
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let n = x.cols();
    let side = (n as f64).sqrt().round() as usize;
    let (h, w) = if side * side == n { (side, side) } else { (1, n) };
    let conv = |src: &[f64], dst: &mut [f64], horizontal: bool| {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let off = t as isize - r;
                    let (yy, xs) = if horizontal {
                        (y as isize, (xx as isize + off).clamp(0, w as isize - 1))
                    } else {
                        ((y as isize + off).clamp(0, h as isize - 1), xx as isize)
                    };
                    acc += kv * src[yy as usize * w + xs as usize];
                }
                dst[y * w + xx] = acc;
            }
        }
    };
    let mut out = x.clone();
    let mut tmp = vec![0.0; n];
    for i in 0..x.rows() {
        conv(x.row(i), &mut tmp, true);
        if h > 1 {
            conv(&tmp.clone(), out.row_mut(i), false);
        } else {
            out.row_mut(i).copy_from_slice(&tmp);
        }
    }
    out
}
