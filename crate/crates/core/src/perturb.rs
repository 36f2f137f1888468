//! Seeded, L-infinity bounded perturbation generators and a Monte Carlo
//! check of the DCT-domain perturbation bound.
//!
//! `eps` is a fraction of the 255 dynamic range; generators work in integer
//! sample units with amplitude `round(eps * 255)`. Every (seed, image index,
//! channel) triple owns an independent ChaCha stream, so batch generation is
//! reproducible regardless of scheduling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ArchiveError, Error, Result};
use crate::image::{ImageBuffer, Plane, BLOCK_LEN};
use crate::transform::{dct2, CoefBlock};

pub const MAX_EPS: f64 = 0.125;
/// Gaussian standard deviation used for noisy-training exports when none is
/// given, in sample units (0.03 of the dynamic range).
pub const DEFAULT_SIGMA: f64 = 0.03 * 255.0;
pub const DEFAULT_SEED: u64 = 0x5eed_d5c7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    /// Each sample moves by exactly +/- amplitude.
    Sign,
    /// Zero-mean Gaussian with standard deviation `sigma`.
    Gaussian,
    /// Uniform on `[-eps*255, eps*255]`.
    Uniform,
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sign" => Ok(PerturbKind::Sign),
            "gaussian" => Ok(PerturbKind::Gaussian),
            "uniform" => Ok(PerturbKind::Uniform),
            _ => Err(Error::InvalidArgument(format!("unknown perturbation kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub eps: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn sign(eps: f64, seed: u64) -> Self {
        Self {
            kind: PerturbKind::Sign,
            eps,
            sigma: 0.0,
            seed,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: PerturbKind::Gaussian,
            eps: 0.0,
            sigma,
            seed,
        }
    }

    pub fn uniform(eps: f64, seed: u64) -> Self {
        Self {
            kind: PerturbKind::Uniform,
            eps,
            sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_EPS).contains(&self.eps) {
            return Err(Error::InvalidArgument(format!(
                "eps {} outside [0, {MAX_EPS}]",
                self.eps
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!("sigma {} must be >= 0", self.sigma)));
        }
        Ok(())
    }

    /// L-infinity amplitude in sample units.
    pub fn amplitude(&self) -> i16 {
        (self.eps * 255.0).round() as i16
    }

    /// Scaled DCT-domain bound `8 * 255 * eps`.
    pub fn dct_bound(&self) -> f64 {
        8.0 * 255.0 * self.eps
    }

    fn stream(&self, image_index: u64, channel: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(image_index.wrapping_mul(4).wrapping_add(channel));
        rng
    }

    fn fill(&self, rng: &mut ChaCha12Rng, out: &mut [i16]) {
        match self.kind {
            PerturbKind::Sign => {
                let a = self.amplitude();
                for v in out {
                    *v = if rng.gen::<bool>() { a } else { -a };
                }
            }
            PerturbKind::Uniform => {
                let a = self.eps * 255.0;
                for v in out {
                    *v = if a > 0.0 {
                        rng.gen_range(-a..=a).round() as i16
                    } else {
                        0
                    };
                }
            }
            PerturbKind::Gaussian => {
                if self.sigma == 0.0 {
                    out.fill(0);
                    return;
                }
                let normal = Normal::new(0.0, self.sigma).expect("validated sigma");
                for v in out {
                    *v = normal
                        .sample(rng)
                        .round()
                        .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
                }
            }
        }
    }
}

/// Signed per-channel residual maps of one perturbed image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residual {
    pub width: usize,
    pub height: usize,
    /// Injected perturbation before clamping, planar R, G, B.
    pub injected: [Vec<i16>; 3],
    /// `perturbed - original` after clamping, planar R, G, B.
    pub applied: [Vec<i16>; 3],
}

impl Residual {
    fn planes(&self, src: &[Vec<i16>; 3]) -> [Plane; 3] {
        std::array::from_fn(|c| {
            Plane::new(
                self.width,
                self.height,
                src[c].iter().map(|&v| f64::from(v)).collect(),
            )
            .expect("consistent residual")
        })
    }

    pub fn injected_planes(&self) -> [Plane; 3] {
        self.planes(&self.injected)
    }

    pub fn applied_planes(&self) -> [Plane; 3] {
        self.planes(&self.applied)
    }

    pub fn linf_injected(&self) -> i16 {
        self.injected
            .iter()
            .flatten()
            .map(|v| v.saturating_abs())
            .max()
            .unwrap_or(0)
    }

    const MAGIC: &'static [u8; 4] = b"DSR1";

    /// Binary residual map: magic `DSR1`, u32 width, u32 height (little
    /// endian), then the injected R, G and B planes as i16 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 6 * self.width * self.height);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for plane in &self.injected {
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Reads a residual map. Only the injected planes are stored, so
    /// `applied` mirrors them.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(ArchiveError::Truncated {
                needed: 12,
                available: bytes.len(),
            }
            .into());
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != Self::MAGIC {
            return Err(ArchiveError::BadMagic(magic).into());
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let n = width * height;
        if n == 0 {
            return Err(ArchiveError::BadHeader {
                field: "width*height",
                value: 0,
            }
            .into());
        }
        let needed = 12 + 6 * n;
        if bytes.len() != needed {
            return Err(ArchiveError::Truncated {
                needed,
                available: bytes.len(),
            }
            .into());
        }
        let injected: [Vec<i16>; 3] = std::array::from_fn(|c| {
            bytes[12 + 2 * n * c..12 + 2 * n * (c + 1)]
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]))
                .collect()
        });
        Ok(Self {
            width,
            height,
            applied: injected.clone(),
            injected,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Perturbs `img`, the `image_index`-th image of a batch.
pub fn apply(img: &ImageBuffer, spec: &PerturbSpec, image_index: u64) -> Result<(ImageBuffer, Residual)> {
    spec.validate()?;
    let n = img.width() * img.height();
    let injected: [Vec<i16>; 3] = std::array::from_fn(|c| {
        let mut v = vec![0i16; n];
        spec.fill(&mut spec.stream(image_index, c as u64), &mut v);
        v
    });
    let mut data = img.data().to_vec();
    let mut applied: [Vec<i16>; 3] = std::array::from_fn(|_| vec![0i16; n]);
    for i in 0..n {
        for c in 0..3 {
            let orig = i32::from(data[i * 3 + c]);
            let out = (orig + i32::from(injected[c][i])).clamp(0, 255);
            data[i * 3 + c] = out as u8;
            applied[c][i] = (out - orig) as i16;
        }
    }
    let residual = Residual {
        width: img.width(),
        height: img.height(),
        injected,
        applied,
    };
    Ok((ImageBuffer::new(img.width(), img.height(), data)?, residual))
}

/// Result of [`verify_dct_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub trials: usize,
    pub bound: f64,
    pub amplitude: i16,
    pub max: f64,
    pub max_band: usize,
    #[serde(with = "crate::stats::band_array")]
    pub max_abs: [f64; BLOCK_LEN],
}

/// DCT of one residual block (no level shift), failing if any band
/// exceeds `bound`.
pub fn check_residual_block(residual: &[i16; BLOCK_LEN], bound: f64) -> Result<CoefBlock> {
    let c = dct2(&residual.map(f64::from), false);
    // allow for floating-point noise in the transform
    let tol = bound * 1e-12 + 1e-12;
    if let Some((band, &value)) = c.0.iter().enumerate().find(|(_, v)| v.abs() > bound + tol) {
        return Err(Error::BoundViolated {
            row: band / 8,
            col: band % 8,
            value,
            bound,
        });
    }
    Ok(c)
}

/// Draws `trials` random 8x8 residual blocks from `spec` and checks every
/// band against `8 * 255 * eps`.
pub fn verify_dct_bound(spec: &PerturbSpec, trials: usize) -> Result<BoundReport> {
    spec.validate()?;
    if spec.kind == PerturbKind::Gaussian {
        return Err(Error::InvalidArgument(
            "the DCT bound only applies to sign and uniform perturbations".into(),
        ));
    }
    let bound = spec.dct_bound();
    let mut rng = spec.stream(u64::MAX / 4, 0);
    let mut max_abs = [0.0f64; BLOCK_LEN];
    let mut res = [0i16; BLOCK_LEN];
    for _ in 0..trials {
        spec.fill(&mut rng, &mut res);
        let c = check_residual_block(&res, bound)?;
        for (m, v) in max_abs.iter_mut().zip(c.0) {
            *m = m.max(v.abs());
        }
    }
    let (max_band, max) = max_abs
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(BoundReport {
        trials,
        bound,
        amplitude: spec.amplitude(),
        max,
        max_band,
        max_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient() -> ImageBuffer {
        ImageBuffer::from_fn(20, 12, |x, y| [(x * 12) as u8, (y * 20) as u8, 128]).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let img = gradient();
        for spec in [
            PerturbSpec::sign(0.0, 1),
            PerturbSpec::gaussian(0.0, 1),
            PerturbSpec::uniform(0.0, 1),
        ] {
            let (out, res) = apply(&img, &spec, 0).unwrap();
            assert_eq!(out, img);
            assert_eq!(res.linf_injected(), 0);
        }
    }

    #[test]
    fn sign_residuals_have_fixed_magnitude() {
        let (_, res) = apply(&gradient(), &PerturbSpec::sign(0.008, 2), 0).unwrap();
        assert!(res.injected.iter().flatten().all(|&v| v == 2 || v == -2));
        let pos = res.injected.iter().flatten().filter(|&&v| v > 0).count();
        let n = 3 * 20 * 12;
        assert!(pos > n / 3 && pos < 2 * n / 3);
    }

    #[test]
    fn clamping_recorded_separately() {
        let img = ImageBuffer::filled(8, 8, [0, 255, 0]).unwrap();
        let (out, res) = apply(&img, &PerturbSpec::sign(0.02, 3), 0).unwrap();
        for i in 0..64 {
            let px = [out.data()[i * 3], out.data()[i * 3 + 1]];
            assert_eq!(i16::from(px[0]), res.applied[0][i]);
            assert_eq!(i16::from(px[1]) - 255, res.applied[1][i]);
            assert!(res.applied[0][i] >= 0 && res.applied[1][i] <= 0);
            assert_eq!(res.injected[0][i].abs(), 5);
        }
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let img = gradient();
        let spec = PerturbSpec::gaussian(6.0, 42);
        let a = apply(&img, &spec, 3).unwrap();
        assert_eq!(a, apply(&img, &spec, 3).unwrap());
        assert_ne!(a.1, apply(&img, &spec, 4).unwrap().1);
        let other = PerturbSpec { seed: 43, ..spec };
        assert_ne!(a.1, apply(&img, &other, 3).unwrap().1);
    }

    #[test]
    fn uniform_respects_linf() {
        for eps in [0.004, 0.01, 0.03] {
            let spec = PerturbSpec::uniform(eps, 5);
            let (_, res) = apply(&gradient(), &spec, 0).unwrap();
            assert!(res.linf_injected() <= spec.amplitude());
        }
    }

    #[test]
    fn residual_mean_is_near_zero() {
        let img = ImageBuffer::filled(64, 64, [128; 3]).unwrap();
        for spec in [PerturbSpec::sign(0.004, 9), PerturbSpec::gaussian(8.0, 9)] {
            let (_, res) = apply(&img, &spec, 0).unwrap();
            let vals: Vec<f64> = res.injected.iter().flatten().map(|&v| f64::from(v)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 3.0 * sd / n.sqrt(), "{spec:?}: mean {mean}");
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(PerturbSpec::sign(0.2, 0).validate().is_err());
        assert!(PerturbSpec::sign(-0.1, 0).validate().is_err());
        assert!(PerturbSpec::gaussian(-1.0, 0).validate().is_err());
        assert!(verify_dct_bound(&PerturbSpec::gaussian(1.0, 0), 10).is_err());
    }

    #[test]
    fn bound_cases() {
        let zero = verify_dct_bound(&PerturbSpec::sign(0.0, 1), 100).unwrap();
        assert_eq!(zero.max, 0.0);

        let r = verify_dct_bound(&PerturbSpec::sign(0.004, 1), 20_000).unwrap();
        assert!(r.max <= 8.16);
        assert_eq!(r.bound, 8.0 * 255.0 * 0.004);

        // amplitude round(0.006 * 255) = 2 exceeds 0.006 * 255 = 1.53: random
        // blocks stay inside the bound, but the all-same-sign block does not
        let spec = PerturbSpec::sign(0.006, 1);
        assert!(verify_dct_bound(&spec, 20_000).is_ok());
        let flat = [spec.amplitude(); BLOCK_LEN];
        let err = check_residual_block(&flat, spec.dct_bound()).unwrap_err();
        assert!(matches!(err, Error::BoundViolated { row: 0, col: 0, .. }), "{err}");

        let spec = PerturbSpec::sign(4.0 / 255.0, 1);
        let c = check_residual_block(&[-spec.amplitude(); BLOCK_LEN], spec.dct_bound()).unwrap();
        assert!((c.dc().abs() - spec.dct_bound()).abs() < 1e-12);
    }

    #[test]
    fn residual_file_round_trip() {
        let (_, res) = apply(&gradient(), &PerturbSpec::sign(0.004, 7), 1).unwrap();
        let bytes = res.to_bytes();
        let back = Residual::from_bytes(&bytes).unwrap();
        assert_eq!(back.injected, res.injected);
        assert!(Residual::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Residual::from_bytes(&bad).is_err());
    }
}
