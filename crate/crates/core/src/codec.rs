//! The defend/compress pipeline: color path, blockwise DCT, quantization
//! and reconstruction, plus a lossless container for the quantized levels.
//!
//! `defend(x)` and `decode(encode(x))` run the same stages and produce
//! bit-identical images.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ArchiveError, Error, Result};
use crate::image::{
    block_count, merge_blocks, rgb_to_ycbcr, split_blocks, subsample_420, upsample_420,
    ycbcr_to_rgb, BlockGrid, ColorPath, ImageBuffer, Plane, BLOCK, BLOCK_LEN,
};
use crate::quant::{dequantize, quantize, Levels, QuantTable, MAX_STEP, MIN_STEP};
use crate::transform::{dct2, idct2, unzigzag, zigzag};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"DSH1";
const HEADER_LEN: usize = 4 + 4 + 4 + 1 + 1 + 32;

/// IJG quality scaling of a table. Quality 50 leaves it unchanged.
pub fn scale_table(table: &QuantTable, quality: u8) -> Result<QuantTable> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!(
            "quality {quality} outside [1, 100]"
        )));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let steps = table.zigzag_steps().map(|s| {
        ((u32::from(s) * scale + 50) / 100).clamp(u32::from(MIN_STEP), u32::from(MAX_STEP)) as u16
    });
    QuantTable::from_zigzag(steps)
}

/// Which quantization table a codec run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableSpec {
    /// One table for every channel.
    Custom(QuantTable),
    /// Annex K tables: luminance for Y (and for R, G, B on the RGB path),
    /// chrominance for Cb and Cr.
    StandardJpeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodecConfig {
    pub color_path: ColorPath,
    pub table: TableSpec,
    pub quality: u8,
    pub level_shift: bool,
}

impl CodecConfig {
    /// Custom table applied as-is (quality 50) on `color_path`.
    pub fn custom(table: QuantTable, color_path: ColorPath) -> Self {
        Self {
            color_path,
            table: TableSpec::Custom(table),
            quality: 50,
            level_shift: true,
        }
    }

    pub fn standard(quality: u8, color_path: ColorPath) -> Self {
        Self {
            color_path,
            table: TableSpec::StandardJpeg,
            quality,
            level_shift: true,
        }
    }

    pub fn with_quality(mut self, quality: u8) -> Self {
        self.quality = quality;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=100).contains(&self.quality) {
            return Err(Error::InvalidArgument(format!(
                "quality {} outside [1, 100]",
                self.quality
            )));
        }
        Ok(())
    }

    /// Effective per-channel tables after quality scaling.
    pub fn channel_tables(&self) -> Result<[QuantTable; 3]> {
        self.validate()?;
        Ok(match (&self.table, self.color_path) {
            (TableSpec::Custom(t), _) => [scale_table(t, self.quality)?; 3],
            (TableSpec::StandardJpeg, ColorPath::Rgb) => {
                [scale_table(&QuantTable::standard_luma(), self.quality)?; 3]
            }
            (TableSpec::StandardJpeg, ColorPath::YCbCr420) => {
                let chroma = scale_table(&QuantTable::standard_chroma(), self.quality)?;
                [
                    scale_table(&QuantTable::standard_luma(), self.quality)?,
                    chroma,
                    chroma,
                ]
            }
        })
    }

    /// SHA-256 over the color path, quality, level shift and effective
    /// tables.
    pub fn hash(&self) -> Result<[u8; 32]> {
        let tables = self.channel_tables()?;
        let mut h = Sha256::new();
        h.update(b"dctshield-codec-v1");
        h.update([self.color_path.tag(), self.quality, u8::from(self.level_shift)]);
        h.update([matches!(self.table, TableSpec::StandardJpeg) as u8]);
        for t in &tables {
            for s in t.zigzag_steps() {
                h.update(s.to_le_bytes());
            }
        }
        Ok(h.finalize().into())
    }
}

/// Quantized levels of one channel, blocks in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLevels {
    pub width: usize,
    pub height: usize,
    pub blocks: Vec<Levels>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefArchive {
    pub width: usize,
    pub height: usize,
    pub color_path: ColorPath,
    pub quality: u8,
    pub config_hash: [u8; 32],
    pub channels: Vec<ChannelLevels>,
}

fn channel_dims(width: usize, height: usize, path: ColorPath) -> [(usize, usize); 3] {
    match path {
        ColorPath::Rgb => [(width, height); 3],
        ColorPath::YCbCr420 => {
            let c = (width.div_ceil(2), height.div_ceil(2));
            [(width, height), c, c]
        }
    }
}

fn input_planes(img: &ImageBuffer, path: ColorPath) -> [Plane; 3] {
    match path {
        ColorPath::Rgb => img.to_planes(),
        ColorPath::YCbCr420 => {
            let [y, cb, cr] = rgb_to_ycbcr(img);
            [y.quantize_samples(), subsample_420(&cb), subsample_420(&cr)]
        }
    }
}

fn quantize_plane(plane: &Plane, table: &QuantTable, level_shift: bool) -> ChannelLevels {
    let grid = split_blocks(plane);
    ChannelLevels {
        width: plane.width(),
        height: plane.height(),
        blocks: grid
            .blocks
            .iter()
            .map(|b| quantize(&dct2(b, level_shift), table))
            .collect(),
    }
}

fn reconstruct_plane(ch: &ChannelLevels, table: &QuantTable, level_shift: bool) -> Result<Plane> {
    let blocks_wide = ch.width.div_ceil(BLOCK);
    let blocks_high = ch.height.div_ceil(BLOCK);
    let grid = BlockGrid {
        blocks: ch
            .blocks
            .iter()
            .map(|l| idct2(&dequantize(l, table), level_shift))
            .collect(),
        blocks_wide,
        blocks_high,
        orig_width: ch.width,
        orig_height: ch.height,
        pad_right: blocks_wide * BLOCK - ch.width,
        pad_bottom: blocks_high * BLOCK - ch.height,
    };
    merge_blocks(&grid)
}

fn quantize_image(img: &ImageBuffer, cfg: &CodecConfig) -> Result<Vec<ChannelLevels>> {
    let tables = cfg.channel_tables()?;
    let planes = input_planes(img, cfg.color_path);
    Ok(planes
        .iter()
        .zip(&tables)
        .map(|(p, t)| quantize_plane(p, t, cfg.level_shift))
        .collect())
}

fn reconstruct_image(
    width: usize,
    height: usize,
    channels: &[ChannelLevels],
    cfg: &CodecConfig,
) -> Result<ImageBuffer> {
    let tables = cfg.channel_tables()?;
    let planes: Vec<Plane> = channels
        .iter()
        .zip(&tables)
        .map(|(c, t)| reconstruct_plane(c, t, cfg.level_shift))
        .collect::<Result<_>>()?;
    let [a, b, c]: [Plane; 3] = planes
        .try_into()
        .map_err(|_| Error::Validation("expected three channels".into()))?;
    match cfg.color_path {
        ColorPath::Rgb => ImageBuffer::from_planes(&[a, b, c]),
        ColorPath::YCbCr420 => {
            let y = a.quantize_samples();
            let cb = upsample_420(&b.quantize_samples(), width, height)?;
            let cr = upsample_420(&c.quantize_samples(), width, height)?;
            ycbcr_to_rgb(&y, &cb, &cr)
        }
    }
}

/// Compresses and decompresses `img`, returning the reconstruction.
pub fn defend(img: &ImageBuffer, cfg: &CodecConfig) -> Result<ImageBuffer> {
    let levels = quantize_image(img, cfg)?;
    reconstruct_image(img.width(), img.height(), &levels, cfg)
}

/// [`defend`] over a batch; output order matches input order.
pub fn defend_batch(images: &[ImageBuffer], cfg: &CodecConfig) -> Result<Vec<ImageBuffer>> {
    images.par_iter().map(|img| defend(img, cfg)).collect()
}

pub fn encode(img: &ImageBuffer, cfg: &CodecConfig) -> Result<CoefArchive> {
    Ok(CoefArchive {
        width: img.width(),
        height: img.height(),
        color_path: cfg.color_path,
        quality: cfg.quality,
        config_hash: cfg.hash()?,
        channels: quantize_image(img, cfg)?,
    })
}

/// Reconstructs the image. `cfg` must be the configuration the archive was
/// encoded with; its hash is checked against the header.
pub fn decode(archive: &CoefArchive, cfg: &CodecConfig) -> Result<ImageBuffer> {
    let supplied = cfg.hash()?;
    if supplied != archive.config_hash
        || cfg.color_path != archive.color_path
        || cfg.quality != archive.quality
    {
        return Err(ArchiveError::HashMismatch {
            archive: hex::encode(archive.config_hash),
            supplied: hex::encode(supplied),
        }
        .into());
    }
    let dims = channel_dims(archive.width, archive.height, archive.color_path);
    if archive.channels.len() != 3
        || archive
            .channels
            .iter()
            .zip(dims)
            .any(|(c, (w, h))| (c.width, c.height) != (w, h) || c.blocks.len() != block_count(w, h))
    {
        return Err(Error::Validation("archive channel layout does not match header".into()));
    }
    reconstruct_image(archive.width, archive.height, &archive.channels, cfg)
}

impl CoefArchive {
    /// Little-endian container: magic, u32 width, u32 height, u8 color path,
    /// u8 quality, 32-byte config hash, then each channel's blocks in raster
    /// order with levels as i16 in zigzag order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let levels: usize = self.channels.iter().map(|c| c.blocks.len() * BLOCK_LEN).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + 2 * levels);
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.push(self.color_path.tag());
        out.push(self.quality);
        out.extend_from_slice(&self.config_hash);
        for ch in &self.channels {
            for block in &ch.blocks {
                for v in zigzag(block) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(ArchiveError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            }
            .into());
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if &magic != ARCHIVE_MAGIC {
            return Err(ArchiveError::BadMagic(magic).into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let (width, height) = (u32_at(4), u32_at(8));
        for (field, value) in [("width", width), ("height", height)] {
            if value == 0 || value > 1 << 16 {
                return Err(ArchiveError::BadHeader { field, value }.into());
            }
        }
        let color_path = ColorPath::from_tag(bytes[12]).ok_or(ArchiveError::BadHeader {
            field: "color_path",
            value: u32::from(bytes[12]),
        })?;
        let quality = bytes[13];
        if !(1..=100).contains(&quality) {
            return Err(ArchiveError::BadHeader {
                field: "quality",
                value: u32::from(quality),
            }
            .into());
        }
        let config_hash: [u8; 32] = bytes[14..46].try_into().expect("32 bytes");

        let (width, height) = (width as usize, height as usize);
        let dims = channel_dims(width, height, color_path);
        let total_blocks: usize = dims.iter().map(|&(w, h)| block_count(w, h)).sum();
        let needed = HEADER_LEN + total_blocks * BLOCK_LEN * 2;
        if bytes.len() < needed {
            return Err(ArchiveError::Truncated {
                needed,
                available: bytes.len(),
            }
            .into());
        }
        if bytes.len() > needed {
            return Err(ArchiveError::TrailingBytes(bytes.len() - needed).into());
        }
        let mut offset = HEADER_LEN;
        let mut channels = Vec::with_capacity(3);
        for (w, h) in dims {
            let n = block_count(w, h);
            let mut blocks = Vec::with_capacity(n);
            for _ in 0..n {
                let scan: [i16; BLOCK_LEN] = std::array::from_fn(|k| {
                    let o = offset + 2 * k;
                    i16::from_le_bytes([bytes[o], bytes[o + 1]])
                });
                blocks.push(unzigzag(&scan));
                offset += 2 * BLOCK_LEN;
            }
            channels.push(ChannelLevels {
                width: w,
                height: h,
                blocks,
            });
        }
        Ok(Self {
            width,
            height,
            color_path,
            quality,
            config_hash,
            channels,
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
