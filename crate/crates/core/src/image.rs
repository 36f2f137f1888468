//! Image representation, color conversion, chroma subsampling and 8x8 block
//! partitioning.
//!
//! Samples are converted from reals to 8-bit with half-away-from-zero
//! rounding followed by a clamp to `[0, 255]`. Partial edge blocks are padded
//! by edge replication so that padding adds no artificial high-frequency
//! energy to the block statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCK: usize = 8;
pub const BLOCK_LEN: usize = BLOCK * BLOCK;

/// Converts a real value to an 8-bit sample.
#[inline]
pub fn to_sample(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// An 8-bit, three-channel, interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}x3, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copies a rectangular region. Panics if it exceeds the image bounds.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Self::new(width, height, data)
    }

    /// Splits into R, G, B planes.
    pub fn to_planes(&self) -> [Plane; 3] {
        let n = self.width * self.height;
        let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c][i] = f64::from(px[c]);
            }
        }
        planes.map(|data| Plane {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn channel_plane(&self, channel: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .chunks_exact(3)
                .map(|px| f64::from(px[channel]))
                .collect(),
        }
    }

    /// Interleaves three planes into an image, rounding and clamping each
    /// sample.
    pub fn from_planes(planes: &[Plane; 3]) -> Result<Self> {
        let (w, h) = (planes[0].width, planes[0].height);
        for p in &planes[1..] {
            if p.width != w || p.height != h {
                return Err(Error::DimensionMismatch(format!(
                    "planes {}x{} and {}x{}",
                    w, h, p.width, p.height
                )));
            }
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            for p in planes {
                data.push(to_sample(p.data[i]));
            }
        }
        Self::new(w, h, data)
    }
}

/// A single channel of real-valued samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite sample {v}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the plane (edge replication).
    #[inline]
    fn get_clamped(&self, x: usize, y: usize) -> f64 {
        self.get(x.min(self.width - 1), y.min(self.height - 1))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds every sample to an integer and clamps it to `[0, 255]`.
    pub fn quantize_samples(&self) -> Plane {
        self.map(|v| f64::from(to_sample(v)))
    }
}

/// Color processing path used by the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorPath {
    /// DCT applied directly to R, G and B.
    #[serde(rename = "rgb")]
    Rgb,
    /// BT.601 full-range YCbCr with 4:2:0 chroma subsampling.
    #[serde(rename = "ycbcr420")]
    YCbCr420,
}

impl ColorPath {
    pub fn tag(self) -> u8 {
        match self {
            ColorPath::Rgb => 0,
            ColorPath::YCbCr420 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ColorPath::Rgb),
            1 => Some(ColorPath::YCbCr420),
            _ => None,
        }
    }
}

impl std::str::FromStr for ColorPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ColorPath::Rgb),
            "ycbcr420" | "ycbcr" | "yuv420" => Ok(ColorPath::YCbCr420),
            _ => Err(Error::InvalidArgument(format!(
                "unknown color path {s:?} (expected rgb or ycbcr420)"
            ))),
        }
    }
}

impl std::fmt::Display for ColorPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ColorPath::Rgb => "rgb",
            ColorPath::YCbCr420 => "ycbcr420",
        })
    }
}

/// BT.601 full-range (JFIF) forward matrix for one pixel, unclamped.
#[inline]
pub fn rgb_to_ycbcr_pixel(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0,
        0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0,
    ]
}

/// Inverse of [`rgb_to_ycbcr_pixel`], unclamped.
#[inline]
pub fn ycbcr_to_rgb_pixel(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let cb = cb - 128.0;
    let cr = cr - 128.0;
    [
        y + 1.402 * cr,
        y - 0.344_136 * cb - 0.714_136 * cr,
        y + 1.772 * cb,
    ]
}

/// Converts an image to Y, Cb and Cr planes. Values are real and clamped to
/// `[0, 255]`.
pub fn rgb_to_ycbcr(img: &ImageBuffer) -> [Plane; 3] {
    let n = img.width * img.height;
    let mut out = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for px in img.data.chunks_exact(3) {
        let ycc = rgb_to_ycbcr_pixel(f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        for c in 0..3 {
            out[c].push(ycc[c].clamp(0.0, 255.0));
        }
    }
    out.map(|data| Plane {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Converts Y, Cb, Cr planes of equal size back to an 8-bit RGB image.
pub fn ycbcr_to_rgb(y: &Plane, cb: &Plane, cr: &Plane) -> Result<ImageBuffer> {
    if (y.width, y.height) != (cb.width, cb.height) || (y.width, y.height) != (cr.width, cr.height)
    {
        return Err(Error::DimensionMismatch(format!(
            "Y {}x{}, Cb {}x{}, Cr {}x{}",
            y.width, y.height, cb.width, cb.height, cr.width, cr.height
        )));
    }
    let mut data = Vec::with_capacity(y.data.len() * 3);
    for i in 0..y.data.len() {
        let rgb = ycbcr_to_rgb_pixel(y.data[i], cb.data[i], cr.data[i]);
        data.extend(rgb.map(to_sample));
    }
    ImageBuffer::new(y.width, y.height, data)
}

/// 4:2:0 chroma subsampling: rounded mean of each 2x2 block, odd edges
/// replicated.
pub fn subsample_420(plane: &Plane) -> Plane {
    let w = plane.width.div_ceil(2);
    let h = plane.height.div_ceil(2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (x0, y0) = (2 * x, 2 * y);
            let sum = plane.get_clamped(x0, y0)
                + plane.get_clamped(x0 + 1, y0)
                + plane.get_clamped(x0, y0 + 1)
                + plane.get_clamped(x0 + 1, y0 + 1);
            data.push((sum / 4.0).round());
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Nearest-neighbour 2x upsampling, cropped to `width` x `height`.
pub fn upsample_420(plane: &Plane, width: usize, height: usize) -> Result<Plane> {
    if plane.width != width.div_ceil(2) || plane.height != height.div_ceil(2) {
        return Err(Error::DimensionMismatch(format!(
            "cannot upsample {}x{} to {width}x{height}",
            plane.width, plane.height
        )));
    }
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            data.push(plane.get(x / 2, y / 2));
        }
    }
    Ok(Plane {
        width,
        height,
        data,
    })
}

/// A plane cut into 8x8 blocks in raster order, with enough metadata to
/// restore the original size.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub blocks: Vec<[f64; BLOCK_LEN]>,
    pub blocks_wide: usize,
    pub blocks_high: usize,
    pub orig_width: usize,
    pub orig_height: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl BlockGrid {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Number of 8x8 blocks covering a `width` x `height` plane.
pub fn block_count(width: usize, height: usize) -> usize {
    width.div_ceil(BLOCK) * height.div_ceil(BLOCK)
}

pub fn split_blocks(plane: &Plane) -> BlockGrid {
    let bw = plane.width.div_ceil(BLOCK);
    let bh = plane.height.div_ceil(BLOCK);
    let mut blocks = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0; BLOCK_LEN];
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    block[r * BLOCK + c] = plane.get_clamped(bx * BLOCK + c, by * BLOCK + r);
                }
            }
            blocks.push(block);
        }
    }
    BlockGrid {
        blocks,
        blocks_wide: bw,
        blocks_high: bh,
        orig_width: plane.width,
        orig_height: plane.height,
        pad_right: bw * BLOCK - plane.width,
        pad_bottom: bh * BLOCK - plane.height,
    }
}

pub fn merge_blocks(grid: &BlockGrid) -> Result<Plane> {
    let (w, h) = (grid.orig_width, grid.orig_height);
    if grid.blocks.len() != grid.blocks_wide * grid.blocks_high
        || grid.blocks_wide * BLOCK != w + grid.pad_right
        || grid.blocks_high * BLOCK != h + grid.pad_bottom
        || grid.pad_right >= BLOCK
        || grid.pad_bottom >= BLOCK
    {
        return Err(Error::DimensionMismatch(format!(
            "inconsistent block grid: {} blocks ({}x{}) for {w}x{h} with padding {}/{}",
            grid.blocks.len(),
            grid.blocks_wide,
            grid.blocks_high,
            grid.pad_right,
            grid.pad_bottom
        )));
    }
    let mut data = vec![0.0; w * h];
    for (i, block) in grid.blocks.iter().enumerate() {
        let (bx, by) = (i % grid.blocks_wide, i / grid.blocks_wide);
        for r in 0..BLOCK {
            let y = by * BLOCK + r;
            if y >= h {
                break;
            }
            for c in 0..BLOCK {
                let x = bx * BLOCK + c;
                if x >= w {
                    break;
                }
                data[y * w + x] = block[r * BLOCK + c];
            }
        }
    }
    Plane::new(w, h, data)
}
