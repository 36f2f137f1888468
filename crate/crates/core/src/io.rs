//! PNG and binary PPM (P6) reading and writing, plus directory listing for
//! batch commands.

use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn codec_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::ImageCodec {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected a .png or .ppm file",
            path.display()
        ))),
    }
}

/// Decodes an 8-bit RGB or grayscale image. Alpha and 16-bit inputs are
/// rejected.
pub fn decode_image(bytes: &[u8], format: ImageFormat, path: &Path) -> Result<ImageBuffer> {
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| codec_err(path, e))?;
    from_dynamic(img)
}

fn from_dynamic(img: DynamicImage) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::Rgb8 => ImageBuffer::new(w, h, img.into_rgb8().into_raw()),
        ColorType::L8 => ImageBuffer::new(w, h, img.to_rgb8().into_raw()),
        ColorType::La8 | ColorType::Rgba8 | ColorType::La16 | ColorType::Rgba16 => {
            Err(Error::AlphaUnsupported)
        }
        other => Err(Error::UnsupportedFormat(format!("{other:?}"))),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = format_for(path)?;
    decode_image(&bytes, format, path)
}

/// Writes PNG or binary PPM depending on the file extension.
pub fn write_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::InvalidImage("buffer size mismatch".into()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match format {
        ImageFormat::Pnm => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let enc = image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(
                    image::codecs::pnm::SampleEncoding::Binary,
                ));
            buf.write_with_encoder(enc).map_err(|e| codec_err(path, e))
        }
        _ => buf
            .save_with_format(path, format)
            .map_err(|e| codec_err(path, e)),
    }
}

/// Encodes an image as PNG in memory.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| codec_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn is_image_path(path: &Path) -> bool {
    format_for(path).is_ok()
}

/// Lists image files in a directory, sorted lexicographically by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_path(&path) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

/// Reads every image of a directory in sorted order, paired with its file
/// stem.
pub fn read_dir_images(dir: impl AsRef<Path>) -> Result<Vec<(String, ImageBuffer)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            read_image(&p).map(|img| (name, img))
        })
        .collect()
}
