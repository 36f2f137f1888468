//! Scalar quantization of coefficient blocks against a 64-entry table.
//!
//! Levels use half-away-from-zero rounding, `level = round(C / QS)`. A
//! [`QuantizationTrace`] exposes the decomposition `C = level * QS +
//! remainder` with `|remainder| <= QS / 2`; the remainder only reaches `+QS/2`
//! on exact negative ties, which round away from zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BLOCK_LEN;
use crate::transform::{unzigzag, zigzag, CoefBlock};

pub const MIN_STEP: u16 = 1;
pub const MAX_STEP: u16 = 255;

/// Quantization levels of one block, row-major band order.
pub type Levels = [i16; BLOCK_LEN];

/// Annex K luminance table, row-major.
pub const STD_LUMA: [u16; BLOCK_LEN] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113,
    92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, row-major.
pub const STD_CHROMA: [u16; BLOCK_LEN] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// 64 quantization steps in `[1, 255]`, stored in zigzag order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantTable {
    zigzag_steps: [u16; BLOCK_LEN],
}

// Bare array of zigzag steps when embedded in other documents.
impl Serialize for QuantTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.zigzag_steps().as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuantTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = Vec::<u16>::deserialize(d)?;
        let arr: [u16; BLOCK_LEN] = v
            .try_into()
            .map_err(|_| D::Error::custom("expected 64 steps"))?;
        QuantTable::from_zigzag(arr).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct QuantTableJson {
    format: u32,
    zigzag_steps: Vec<u16>,
}

impl QuantTable {
    pub fn from_zigzag(zigzag_steps: [u16; BLOCK_LEN]) -> Result<Self> {
        if let Some((pos, s)) = zigzag_steps
            .iter()
            .enumerate()
            .find(|(_, s)| !(MIN_STEP..=MAX_STEP).contains(*s))
        {
            return Err(Error::Validation(format!(
                "zigzag_steps[{pos}] = {s} outside [{MIN_STEP}, {MAX_STEP}]"
            )));
        }
        Ok(Self { zigzag_steps })
    }

    pub fn from_natural(steps: [u16; BLOCK_LEN]) -> Result<Self> {
        Self::from_zigzag(zigzag(&steps))
    }

    pub fn uniform(step: u16) -> Result<Self> {
        Self::from_zigzag([step; BLOCK_LEN])
    }

    pub fn standard_luma() -> Self {
        Self::from_natural(STD_LUMA).expect("valid table")
    }

    pub fn standard_chroma() -> Self {
        Self::from_natural(STD_CHROMA).expect("valid table")
    }

    pub fn zigzag_steps(&self) -> &[u16; BLOCK_LEN] {
        &self.zigzag_steps
    }

    pub fn natural_steps(&self) -> [u16; BLOCK_LEN] {
        unzigzag(&self.zigzag_steps)
    }

    /// Step for a row-major band index.
    pub fn step(&self, band: usize) -> u16 {
        self.zigzag_steps[crate::transform::UNZIGZAG[band]]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&QuantTableJson {
            format: 1,
            zigzag_steps: self.zigzag_steps.to_vec(),
        })
        .expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: QuantTableJson = crate::json::from_str_with_path(s)?;
        if raw.format != 1 {
            return Err(Error::Validation(format!(
                "format: unsupported version {}",
                raw.format
            )));
        }
        let steps: [u16; BLOCK_LEN] = raw.zigzag_steps.as_slice().try_into().map_err(|_| {
            Error::Validation(format!(
                "zigzag_steps: expected 64 entries, got {}",
                raw.zigzag_steps.len()
            ))
        })?;
        Self::from_zigzag(steps)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One coefficient's quantization decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub level: i16,
    pub remainder: f64,
    pub reconstructed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationTrace {
    pub entries: [TraceEntry; BLOCK_LEN],
}

#[inline]
fn level_of(c: f64, step: u16) -> i16 {
    (c / f64::from(step))
        .round()
        .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

pub fn quantize(c: &CoefBlock, table: &QuantTable) -> Levels {
    std::array::from_fn(|band| level_of(c.0[band], table.step(band)))
}

pub fn quantize_traced(c: &CoefBlock, table: &QuantTable) -> (Levels, QuantizationTrace) {
    let levels = quantize(c, table);
    let entries = std::array::from_fn(|band| {
        let reconstructed = f64::from(levels[band]) * f64::from(table.step(band));
        TraceEntry {
            level: levels[band],
            remainder: c.0[band] - reconstructed,
            reconstructed,
        }
    });
    (levels, QuantizationTrace { entries })
}

pub fn dequantize(levels: &Levels, table: &QuantTable) -> CoefBlock {
    CoefBlock(std::array::from_fn(|band| {
        f64::from(levels[band]) * f64::from(table.step(band))
    }))
}

/// Probability that a coefficient with uniformly distributed remainder keeps
/// its quantization level when perturbed by `rho`: `1 - |rho| / qs`.
pub fn removal_probability(rho: f64, qs: u16) -> Result<f64> {
    if qs == 0 {
        return Err(Error::InvalidArgument("quantization step must be >= 1".into()));
    }
    let qs = f64::from(qs);
    if !rho.is_finite() || rho.abs() > qs / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "|rho| = {} exceeds qs/2 = {}",
            rho.abs(),
            qs / 2.0
        )));
    }
    Ok(1.0 - rho.abs() / qs)
}

/// Monte Carlo estimate of the removal rate: the fraction of coefficients
/// `C = level * qs + remainder` (remainder uniform on `[-qs/2, qs/2)`) whose
/// quantized level is unchanged by adding `rho`.
pub fn empirical_removal_rate(rho: f64, qs: u16, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let step = f64::from(qs);
    let table = QuantTable::uniform(qs).expect("valid step");
    let mut kept = 0usize;
    let mut done = 0usize;
    while done < samples {
        let n = (samples - done).min(BLOCK_LEN);
        let mut clean = CoefBlock::ZERO;
        for c in clean.0.iter_mut().take(n) {
            let level: i32 = rng.gen_range(-32..=32);
            *c = f64::from(level) * step + rng.gen_range(-step / 2.0..step / 2.0);
        }
        let mut noisy = clean;
        noisy.0.iter_mut().for_each(|c| *c += rho);
        let (a, b) = (quantize(&clean, &table), quantize(&noisy, &table));
        kept += a.iter().zip(&b).take(n).filter(|(x, y)| x == y).count();
        done += n;
    }
    kept as f64 / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(c: f64, qs: u16) -> TraceEntry {
        let mut b = CoefBlock::ZERO;
        b.0[5] = c;
        let t = QuantTable::uniform(qs).unwrap();
        quantize_traced(&b, &t).1.entries[5]
    }

    #[test]
    fn worked_examples() {
        let e = single(35.0, 16);
        assert_eq!((e.level, e.reconstructed, e.remainder), (2, 32.0, 3.0));
        let e = single(-24.0, 16);
        assert_eq!((e.level, e.reconstructed), (-2, -32.0));
        let e = single(24.0, 16);
        assert_eq!((e.level, e.reconstructed), (2, 32.0));
    }

    #[test]
    fn unit_step_is_lossless_on_integers() {
        let c = CoefBlock(std::array::from_fn(|i| i as f64 * 7.0 - 200.0));
        let t = QuantTable::uniform(1).unwrap();
        assert_eq!(dequantize(&quantize(&c, &t), &t), c);
    }

    #[test]
    fn zero_levels_dequantize_to_zero() {
        let t = QuantTable::standard_luma();
        assert_eq!(dequantize(&[0; 64], &t), CoefBlock::ZERO);
    }

    #[test]
    fn perturbed_reconstruction_moves_by_zero_or_one_step() {
        // exhaustive scan of C over one period, |rho| <= QS/2
        let qs = 16u16;
        let t = QuantTable::uniform(qs).unwrap();
        for ci in 0..=4800 {
            let c = -48.0 + f64::from(ci) * 0.02;
            for ri in -80..=80 {
                let rho = f64::from(ri) * 0.1;
                let mut a = CoefBlock::ZERO;
                a.0[0] = c;
                let mut b = a;
                b.0[0] += rho;
                let d = (dequantize(&quantize(&b, &t), &t).0[0] - dequantize(&quantize(&a, &t), &t).0[0]).abs();
                assert!(d == 0.0 || d == f64::from(qs), "c={c} rho={rho} diff={d}");
            }
        }
    }

    #[test]
    fn removal_probability_cases() {
        assert_eq!(removal_probability(0.0, 16).unwrap(), 1.0);
        assert_eq!(removal_probability(8.0, 16).unwrap(), 0.5);
        assert_eq!(removal_probability(-4.0, 16).unwrap(), 0.75);
        assert!(removal_probability(8.5, 16).is_err());
        assert!(removal_probability(1.0, 0).is_err());
    }

    #[test]
    fn monte_carlo_matches_analytic() {
        let m = empirical_removal_rate(4.0, 16, 1_000_000, 11);
        assert!((m - 0.75).abs() < 0.003, "measured {m}");
    }

    #[test]
    fn table_validation_and_json() {
        assert!(QuantTable::uniform(0).is_err());
        assert!(QuantTable::uniform(256).is_err());
        let t = QuantTable::standard_luma();
        assert_eq!(t.step(0), 16);
        assert_eq!(t.step(1), 11);
        assert_eq!(t.step(63), 99);
        assert_eq!(t.zigzag_steps()[2], 12); // zigzag position 2 is (1,0)
        let back = QuantTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert!(t.to_json().contains("\"format\":1"));
        let err = QuantTable::from_json(r#"{"format":1,"zigzag_steps":[1,2]}"#).unwrap_err();
        assert!(err.to_string().contains("64"));
        let err = QuantTable::from_json(r#"{"format":1,"zigzag_steps":"x"}"#).unwrap_err();
        assert!(err.to_string().contains("zigzag_steps"), "{err}");
    }

    proptest! {
        #[test]
        fn decomposition_is_exact(c in -2000.0f64..2000.0, qs in 1u16..=255) {
            let e = single(c, qs);
            let half = f64::from(qs) / 2.0;
            prop_assert_eq!(f64::from(e.level) * f64::from(qs) + e.remainder, c);
            prop_assert!(e.remainder >= -half && e.remainder <= half);
            prop_assert!((c - e.reconstructed).abs() <= half);
        }
    }
}
