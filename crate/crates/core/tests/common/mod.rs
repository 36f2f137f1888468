#![allow(dead_code)]

use std::path::PathBuf;

use dctshield::io::read_dir_images;
use dctshield::ImageBuffer;

pub const TILE: usize = 64;

pub fn photo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/photos")
}

/// Non-overlapping 64x64 crops of the bundled photos, taken round-robin
/// across photos so any prefix mixes all of them. Names are
/// `<photo>_<row>_<col>`.
pub fn photo_tiles(n: usize) -> Vec<(String, ImageBuffer)> {
    let photos = read_dir_images(photo_dir()).expect("bundled photos");
    let per_photo: Vec<Vec<(String, ImageBuffer)>> = photos
        .iter()
        .map(|(name, img)| {
            let mut tiles = Vec::new();
            for ty in 0..img.height() / TILE {
                for tx in 0..img.width() / TILE {
                    let crop = img.crop(tx * TILE, ty * TILE, TILE, TILE).unwrap();
                    tiles.push((format!("{name}_{ty}_{tx}"), crop));
                }
            }
            tiles
        })
        .collect();
    let longest = per_photo.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..longest {
        for tiles in &per_photo {
            if let Some(t) = tiles.get(i) {
                out.push(t.clone());
            }
        }
    }
    assert!(out.len() >= n, "only {} tiles available", out.len());
    out.truncate(n);
    out
}

pub fn tile_images(n: usize) -> Vec<ImageBuffer> {
    photo_tiles(n).into_iter().map(|(_, img)| img).collect()
}
