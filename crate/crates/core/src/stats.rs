//! Per-band standard deviations of blockwise DCT coefficients over an image
//! corpus, and the adversarial-to-benign deviation ratio that orders bands
//! for table design.
//!
//! Statistics are accumulated in two passes over the corpus (band means,
//! then squared deviations) using the `n - 1` sample denominator. Each image
//! is processed independently and the per-image partial sums are combined in
//! corpus order with compensated summation, so results do not depend on the
//! thread schedule.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{rgb_to_ycbcr, split_blocks, subsample_420, ImageBuffer, Plane, BLOCK_LEN};
use crate::transform::{dct2, zigzag_position};

/// Floor applied to deviations before forming a ratio.
pub const DELTA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelTag {
    R,
    G,
    B,
    Y,
    Cb,
    Cr,
}

impl ChannelTag {
    pub const ALL: [ChannelTag; 6] = [
        ChannelTag::R,
        ChannelTag::G,
        ChannelTag::B,
        ChannelTag::Y,
        ChannelTag::Cb,
        ChannelTag::Cr,
    ];
    pub const RGB: [ChannelTag; 3] = [ChannelTag::R, ChannelTag::G, ChannelTag::B];

    pub fn name(self) -> &'static str {
        match self {
            ChannelTag::R => "R",
            ChannelTag::G => "G",
            ChannelTag::B => "B",
            ChannelTag::Y => "Y",
            ChannelTag::Cb => "Cb",
            ChannelTag::Cr => "Cr",
        }
    }

    pub fn is_chroma(self) -> bool {
        matches!(self, ChannelTag::Cb | ChannelTag::Cr)
    }
}

impl std::fmt::Display for ChannelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ChannelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelTag::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown channel {s:?}")))
    }
}

/// Image plane for `tag` after its color path: RGB channels as-is, Y at full
/// resolution, Cb and Cr through 4:2:0 subsampling.
pub fn channel_plane(img: &ImageBuffer, tag: ChannelTag) -> Plane {
    match tag {
        ChannelTag::R => img.channel_plane(0),
        ChannelTag::G => img.channel_plane(1),
        ChannelTag::B => img.channel_plane(2),
        ChannelTag::Y | ChannelTag::Cb | ChannelTag::Cr => {
            let [y, cb, cr] = rgb_to_ycbcr(img);
            match tag {
                ChannelTag::Y => y,
                ChannelTag::Cb => subsample_420(&cb),
                _ => subsample_420(&cr),
            }
        }
    }
}

/// Residual plane for `tag`. Residuals are signed differences, so only the
/// linear part of the color matrix applies (no offset, no clamping) and the
/// chroma box average is left unrounded.
pub fn residual_channel_plane(residual: &[Plane; 3], tag: ChannelTag) -> Result<Plane> {
    let [r, g, b] = residual;
    let mix = |wr: f64, wg: f64, wb: f64| -> Result<Plane> {
        let data = (0..r.data().len())
            .map(|i| wr * r.data()[i] + wg * g.data()[i] + wb * b.data()[i])
            .collect();
        Plane::new(r.width(), r.height(), data)
    };
    if (g.width(), g.height()) != (r.width(), r.height())
        || (b.width(), b.height()) != (r.width(), r.height())
    {
        return Err(Error::DimensionMismatch("residual planes differ in size".into()));
    }
    Ok(match tag {
        ChannelTag::R => r.clone(),
        ChannelTag::G => g.clone(),
        ChannelTag::B => b.clone(),
        ChannelTag::Y => mix(0.299, 0.587, 0.114)?,
        ChannelTag::Cb => box_average(&mix(-0.168_736, -0.331_264, 0.5)?),
        ChannelTag::Cr => box_average(&mix(0.5, -0.418_688, -0.081_312)?),
    })
}

fn box_average(p: &Plane) -> Plane {
    let (w, h) = (p.width().div_ceil(2), p.height().div_ceil(2));
    let at = |x: usize, y: usize| p.get(x.min(p.width() - 1), y.min(p.height() - 1));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (x0, y0) = (2 * x, 2 * y);
            data.push((at(x0, y0) + at(x0 + 1, y0) + at(x0, y0 + 1) + at(x0 + 1, y0 + 1)) / 4.0);
        }
    }
    Plane::new(w, h, data).expect("non-empty")
}

/// Per-band sample standard deviations for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub channel: ChannelTag,
    pub n_blocks: u64,
    #[serde(with = "band_array")]
    pub delta: [f64; BLOCK_LEN],
}

impl BandStats {
    pub fn new(channel: ChannelTag, n_blocks: u64, delta: [f64; BLOCK_LEN]) -> Result<Self> {
        if n_blocks < 2 {
            return Err(Error::Validation(format!(
                "n_blocks must be >= 2, got {n_blocks}"
            )));
        }
        if let Some(d) = delta.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::Validation(format!("invalid deviation {d}")));
        }
        Ok(Self {
            channel,
            n_blocks,
            delta,
        })
    }

    /// Mean deviation over the 63 AC bands.
    pub fn mean_ac(&self) -> f64 {
        self.delta[1..].iter().sum::<f64>() / (BLOCK_LEN - 1) as f64
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn combine(parts: &[[f64; BLOCK_LEN]]) -> [f64; BLOCK_LEN] {
    let mut acc = [CompensatedSum::default(); BLOCK_LEN];
    for part in parts {
        for (a, &v) in acc.iter_mut().zip(part) {
            a.add(v);
        }
    }
    acc.map(CompensatedSum::value)
}

fn plane_coefs(plane: &Plane) -> impl Iterator<Item = [f64; BLOCK_LEN]> + '_ {
    split_blocks(plane)
        .blocks
        .into_iter()
        .map(|b| dct2(&b, false).0)
}

/// Band statistics over `count` planes produced on demand by `plane_at`.
/// The producer is called twice per index (once per pass) and must be
/// deterministic.
pub fn estimate_band_stats_with<F>(count: usize, channel: ChannelTag, plane_at: F) -> Result<BandStats>
where
    F: Fn(usize) -> Result<Plane> + Sync,
{
    let firsts: Vec<(u64, [f64; BLOCK_LEN])> = (0..count)
        .into_par_iter()
        .map(|i| {
            let plane = plane_at(i)?;
            let mut n = 0u64;
            let mut sum = [0.0; BLOCK_LEN];
            for c in plane_coefs(&plane) {
                n += 1;
                sum.iter_mut().zip(&c).for_each(|(s, v)| *s += v);
            }
            Ok((n, sum))
        })
        .collect::<Result<_>>()?;
    let n: u64 = firsts.iter().map(|(n, _)| n).sum();
    if n < 2 {
        return Err(Error::Validation(format!(
            "corpus yields {n} block(s) for channel {channel}; at least 2 are required"
        )));
    }
    let sums: Vec<_> = firsts.into_iter().map(|(_, s)| s).collect();
    let mean = combine(&sums).map(|s| s / n as f64);

    let seconds: Vec<[f64; BLOCK_LEN]> = (0..count)
        .into_par_iter()
        .map(|i| {
            let plane = plane_at(i)?;
            let mut m2 = [0.0; BLOCK_LEN];
            for c in plane_coefs(&plane) {
                for k in 0..BLOCK_LEN {
                    let d = c[k] - mean[k];
                    m2[k] += d * d;
                }
            }
            Ok(m2)
        })
        .collect::<Result<_>>()?;
    let m2 = combine(&seconds);
    BandStats::new(channel, n, m2.map(|v| (v.max(0.0) / (n - 1) as f64).sqrt()))
}

/// Band statistics of pre-computed channel planes.
pub fn estimate_band_stats(planes: &[Plane], channel: ChannelTag) -> Result<BandStats> {
    estimate_band_stats_with(planes.len(), channel, |i| Ok(planes[i].clone()))
}

/// Band statistics of benign images through the color path of `channel`.
pub fn image_band_stats(images: &[ImageBuffer], channel: ChannelTag) -> Result<BandStats> {
    estimate_band_stats_with(images.len(), channel, |i| Ok(channel_plane(&images[i], channel)))
}

/// Band statistics of perturbation residuals (`x_adv - x`, per RGB channel).
pub fn residual_band_stats(residuals: &[[Plane; 3]], channel: ChannelTag) -> Result<BandStats> {
    estimate_band_stats_with(residuals.len(), channel, |i| {
        residual_channel_plane(&residuals[i], channel)
    })
}

/// Residual planes `adv - benign` for a paired image.
pub fn pair_residual(benign: &ImageBuffer, adv: &ImageBuffer) -> Result<[Plane; 3]> {
    if (benign.width(), benign.height()) != (adv.width(), adv.height()) {
        return Err(Error::DimensionMismatch(format!(
            "benign {}x{} vs adversarial {}x{}",
            benign.width(),
            benign.height(),
            adv.width(),
            adv.height()
        )));
    }
    let (b, a) = (benign.to_planes(), adv.to_planes());
    let mut out = Vec::with_capacity(3);
    for c in 0..3 {
        let data = a[c].data().iter().zip(b[c].data()).map(|(x, y)| x - y).collect();
        out.push(Plane::new(benign.width(), benign.height(), data)?);
    }
    Ok(out.try_into().expect("three planes"))
}

/// Per-band ratio of adversarial to benign deviation, with bands ordered by
/// ascending ratio. Band indices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRatio {
    #[serde(with = "band_array")]
    pub ratio: [f64; BLOCK_LEN],
    #[serde(with = "band_array")]
    pub order: [usize; BLOCK_LEN],
}

impl BandRatio {
    /// Orders bands by ascending ratio, ties broken by zigzag position.
    pub fn from_ratios(ratio: [f64; BLOCK_LEN]) -> Result<Self> {
        if let Some(r) = ratio.iter().find(|r| !r.is_finite() || **r <= 0.0) {
            return Err(Error::Validation(format!("ratio {r} must be finite and > 0")));
        }
        let mut order: [usize; BLOCK_LEN] = std::array::from_fn(|i| i);
        order.sort_by(|&a, &b| {
            ratio[a]
                .total_cmp(&ratio[b])
                .then_with(|| zigzag_position(a).cmp(&zigzag_position(b)))
        });
        Ok(Self { ratio, order })
    }

    /// Validates a deserialized ratio file: `order` must be the ascending
    /// permutation of `ratio`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; BLOCK_LEN];
        for &b in &self.order {
            if b >= BLOCK_LEN || std::mem::replace(&mut seen[b], true) {
                return Err(Error::Validation("order: not a permutation of 0..63".into()));
            }
        }
        if self
            .order
            .windows(2)
            .any(|w| self.ratio[w[0]].partial_cmp(&self.ratio[w[1]]) == Some(Ordering::Greater))
        {
            return Err(Error::Validation("order: ratios are not ascending".into()));
        }
        Ok(())
    }
}

fn guarded_ratio(adv: &[f64; BLOCK_LEN], ben: &[f64; BLOCK_LEN]) -> [f64; BLOCK_LEN] {
    std::array::from_fn(|i| adv[i].max(DELTA_FLOOR) / ben[i].max(DELTA_FLOOR))
}

pub fn band_ratio(adv: &BandStats, ben: &BandStats) -> Result<BandRatio> {
    if adv.channel != ben.channel {
        return Err(Error::InvalidArgument(format!(
            "channel mismatch: adversarial {} vs benign {}",
            adv.channel, ben.channel
        )));
    }
    BandRatio::from_ratios(guarded_ratio(&adv.delta, &ben.delta))
}

/// One shared ordering for R, G and B: deviations are averaged across the
/// three channels per band before the ratio is taken.
pub fn merge_rgb_ratio(adv: [&BandStats; 3], ben: [&BandStats; 3]) -> Result<BandRatio> {
    for (label, set) in [("adversarial", &adv), ("benign", &ben)] {
        let mut tags: Vec<_> = set.iter().map(|s| s.channel).collect();
        tags.sort();
        if tags != ChannelTag::RGB {
            return Err(Error::InvalidArgument(format!(
                "{label} stats must cover R, G and B exactly, got {tags:?}"
            )));
        }
    }
    let mean = |set: &[&BandStats; 3]| -> [f64; BLOCK_LEN] {
        std::array::from_fn(|i| set.iter().map(|s| s.delta[i]).sum::<f64>() / 3.0)
    };
    BandRatio::from_ratios(guarded_ratio(&mean(&adv), &mean(&ben)))
}

/// `stats.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub format: u32,
    pub source: String,
    pub channels: Vec<BandStats>,
}

impl StatsFile {
    pub fn new(source: impl Into<String>, channels: Vec<BandStats>) -> Self {
        Self {
            format: 1,
            source: source.into(),
            channels,
        }
    }

    pub fn channel(&self, tag: ChannelTag) -> Option<&BandStats> {
        self.channels.iter().find(|s| s.channel == tag)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f: Self = crate::json::read_json(path)?;
        if f.format != 1 {
            return Err(Error::Validation(format!("format: unsupported version {}", f.format)));
        }
        for s in &f.channels {
            BandStats::new(s.channel, s.n_blocks, s.delta)?;
        }
        Ok(f)
    }
}

/// `ratio.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFile {
    pub format: u32,
    #[serde(flatten)]
    pub ratio: BandRatio,
}

impl RatioFile {
    pub fn new(ratio: BandRatio) -> Self {
        Self { format: 1, ratio }
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f: Self = crate::json::read_json(path)?;
        if f.format != 1 {
            return Err(Error::Validation(format!("format: unsupported version {}", f.format)));
        }
        f.ratio.validate()?;
        Ok(f)
    }
}

/// Serde adapter for fixed 64-element arrays.
pub(crate) mod band_array {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::image::BLOCK_LEN;

    pub fn serialize<S, T>(v: &[T; BLOCK_LEN], s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Serialize,
    {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<[T; BLOCK_LEN], D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de>,
    {
        let v = Vec::<T>::deserialize(d)?;
        let n = v.len();
        v.try_into()
            .map_err(|_| D::Error::custom(format!("expected 64 entries, got {n}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{idct2, CoefBlock, ZIGZAG};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn stats(channel: ChannelTag, delta: [f64; 64]) -> BandStats {
        BandStats::new(channel, 100, delta).unwrap()
    }

    /// Plane tiled with 8x8 blocks synthesized from coefficients with known
    /// per-band sigma.
    fn synthetic_plane(sigma: &[f64; 64], blocks: usize, rng: &mut ChaCha8Rng) -> Plane {
        let mut data = vec![0.0; 64 * blocks];
        let width = 8 * blocks;
        for b in 0..blocks {
            let coefs = CoefBlock(std::array::from_fn(|k| {
                Normal::new(0.0, sigma[k]).unwrap().sample(rng)
            }));
            let px = idct2(&coefs, false);
            for r in 0..8 {
                for c in 0..8 {
                    data[r * width + b * 8 + c] = px[r * 8 + c];
                }
            }
        }
        Plane::new(width, 8, data).unwrap()
    }

    #[test]
    fn constant_corpus_has_zero_deviation() {
        let img = ImageBuffer::filled(16, 16, [40, 90, 200]).unwrap();
        for tag in ChannelTag::ALL {
            let s = image_band_stats(&[img.clone(), img.clone()], tag).unwrap();
            assert!(s.delta.iter().all(|&d| d < 1e-9), "{tag}");
        }
    }

    #[test]
    fn too_few_blocks_is_an_error() {
        let img = ImageBuffer::filled(8, 8, [1, 2, 3]).unwrap();
        assert!(image_band_stats(&[img], ChannelTag::R).is_err());
        assert!(image_band_stats(&[], ChannelTag::R).is_err());
    }

    #[test]
    fn recovers_generator_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma: [f64; 64] = std::array::from_fn(|k| 1.0 + (k as f64) * 0.5);
        let planes: Vec<_> = (0..10).map(|_| synthetic_plane(&sigma, 1000, &mut rng)).collect();
        let s = estimate_band_stats(&planes, ChannelTag::Y).unwrap();
        assert_eq!(s.n_blocks, 10_000);
        for k in 0..64 {
            let rel = (s.delta[k] - sigma[k]).abs() / sigma[k];
            assert!(rel < 0.03, "band {k}: {} vs {}", s.delta[k], sigma[k]);
        }
    }

    #[test]
    fn scaling_deviations_scales_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = [3.0; 64];
        let planes: Vec<_> = (0..4).map(|_| synthetic_plane(&sigma, 50, &mut rng)).collect();
        let base = estimate_band_stats(&planes, ChannelTag::R).unwrap();
        for c in [-2.5, 0.5, 3.0] {
            let scaled: Vec<_> = planes.iter().map(|p| p.map(|v| c * v + 17.0)).collect();
            let s = estimate_band_stats(&scaled, ChannelTag::R).unwrap();
            for k in 0..64 {
                assert!((s.delta[k] - c.abs() * base.delta[k]).abs() < 1e-9 * (1.0 + base.delta[k]));
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut planes: Vec<_> = (0..12)
            .map(|i| synthetic_plane(&[1.0 + i as f64; 64], 7, &mut rng).map(|v| v + 100.0))
            .collect();
        let a = estimate_band_stats(&planes, ChannelTag::G).unwrap();
        planes.reverse();
        planes.swap(2, 7);
        let b = estimate_band_stats(&planes, ChannelTag::G).unwrap();
        for k in 0..64 {
            assert!((a.delta[k] - b.delta[k]).abs() <= 1e-12 * a.delta[k]);
        }
    }

    #[test]
    fn parallel_schedule_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let planes: Vec<_> = (0..16).map(|_| synthetic_plane(&[5.0; 64], 9, &mut rng)).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_band_stats(&planes, ChannelTag::B).unwrap())
        };
        assert_eq!(run(1), run(5));
    }

    #[test]
    fn identical_stats_sort_in_zigzag_order() {
        let s = stats(ChannelTag::R, std::array::from_fn(|k| 1.0 + k as f64));
        let r = band_ratio(&s, &s).unwrap();
        assert!(r.ratio.iter().all(|&v| v == 1.0));
        assert_eq!(r.order, ZIGZAG);
        let zero = stats(ChannelTag::R, [0.0; 64]);
        assert!(band_ratio(&zero, &zero).unwrap().ratio.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn largest_ratio_sorts_last() {
        let ben = stats(ChannelTag::G, [2.0; 64]);
        let mut a = [2.0; 64];
        a[63] = 4.0;
        let r = band_ratio(&stats(ChannelTag::G, a), &ben).unwrap();
        assert_eq!(r.order[63], 63);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let a = stats(ChannelTag::R, [1.0; 64]);
        let b = stats(ChannelTag::G, [1.0; 64]);
        assert!(band_ratio(&a, &b).is_err());
        assert!(merge_rgb_ratio([&a, &a, &b], [&a, &b, &stats(ChannelTag::B, [1.0; 64])]).is_err());
    }

    #[test]
    fn merged_ratio_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = |rng: &mut ChaCha8Rng| -> [f64; 64] { std::array::from_fn(|_| rng.gen_range(0.1..10.0)) };
        let (a, b) = (d(&mut rng), d(&mut rng));
        // identical channels reduce to single-channel ratio
        let adv: Vec<_> = ChannelTag::RGB.iter().map(|&t| stats(t, a)).collect();
        let ben: Vec<_> = ChannelTag::RGB.iter().map(|&t| stats(t, b)).collect();
        let merged = merge_rgb_ratio([&adv[0], &adv[1], &adv[2]], [&ben[0], &ben[1], &ben[2]]).unwrap();
        let single = band_ratio(&adv[0], &ben[0]).unwrap();
        assert_eq!(merged.order, single.order);
        for k in 0..64 {
            assert!((merged.ratio[k] - single.ratio[k]).abs() < 1e-12 * single.ratio[k]);
        }
        // scaling one channel in both adv and ben leaves ratios unchanged
        let adv2 = [stats(ChannelTag::R, a.map(|v| v * 3.0)), adv[1].clone(), adv[2].clone()];
        let ben2 = [stats(ChannelTag::R, b.map(|v| v * 3.0)), ben[1].clone(), ben[2].clone()];
        let scaled = merge_rgb_ratio([&adv2[0], &adv2[1], &adv2[2]], [&ben2[0], &ben2[1], &ben2[2]]).unwrap();
        for k in 0..64 {
            assert!((scaled.ratio[k] - merged.ratio[k]).abs() < 1e-12 * merged.ratio[k]);
        }
    }

    #[test]
    fn merged_ratio_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let sets: Vec<[f64; 64]> = (0..6)
                .map(|_| std::array::from_fn(|_| rng.gen_range(0.01..50.0)))
                .collect();
            let adv: Vec<_> = (0..3).map(|c| stats(ChannelTag::RGB[c], sets[c])).collect();
            let ben: Vec<_> = (0..3).map(|c| stats(ChannelTag::RGB[c], sets[c + 3])).collect();
            // shuffled channel order must not matter
            let r = merge_rgb_ratio([&adv[2], &adv[0], &adv[1]], [&ben[1], &ben[2], &ben[0]]).unwrap();
            for k in 0..64 {
                let ma = (sets[0][k] + sets[1][k] + sets[2][k]) / 3.0;
                let mb = (sets[3][k] + sets[4][k] + sets[5][k]) / 3.0;
                assert!((r.ratio[k] - ma / mb).abs() < 1e-12 * (ma / mb));
            }
        }
    }

    #[test]
    fn residual_chroma_is_linear() {
        let r = Plane::constant(4, 4, 2.0).unwrap();
        let z = Plane::constant(4, 4, 0.0).unwrap();
        let cr = residual_channel_plane(&[r.clone(), z.clone(), z.clone()], ChannelTag::Cr).unwrap();
        assert_eq!((cr.width(), cr.height()), (2, 2));
        assert!(cr.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let y = residual_channel_plane(&[r, z.clone(), z], ChannelTag::Y).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.598).abs() < 1e-12));
    }

    #[test]
    fn json_round_trip() {
        let s = stats(ChannelTag::Cb, std::array::from_fn(|k| k as f64 / 3.0));
        let file = StatsFile::new("benign", vec![s.clone()]);
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"format\":1") && text.contains("\"channel\":\"Cb\""));
        let back: StatsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.channel(ChannelTag::Cb), Some(&s));

        let r = RatioFile::new(band_ratio(&s, &s).unwrap());
        let text = serde_json::to_string(&r).unwrap();
        let back: RatioFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        back.ratio.validate().unwrap();
    }

    proptest! {
        #[test]
        fn order_is_sorted_permutation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // small value pool forces ties
            let pool = [0.5, 1.0, 2.0, 3.0];
            let ratio: [f64; 64] = std::array::from_fn(|_| pool[rng.gen_range(0..4)]);
            let r = BandRatio::from_ratios(ratio).unwrap();
            r.validate().unwrap();
            // reference sort over (ratio, zigzag position) pairs
            let mut pairs: Vec<(f64, usize)> = (0..64).map(|zz| (ratio[ZIGZAG[zz]], zz)).collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<usize> = pairs.iter().map(|&(_, zz)| ZIGZAG[zz]).collect();
            prop_assert_eq!(r.order.to_vec(), expected);
        }
    }
}
