//! Compares the four combinations of {designed table, standard JPEG table}
//! and {RGB, YCbCr 4:2:0} on a paired benign/adversarial corpus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{defend, CodecConfig};
use crate::error::{Error, Result};
use crate::image::{ColorPath, ImageBuffer};
use crate::metrics::{psnr, suppression};
use crate::quant::QuantTable;

/// Per-image PSNR is capped here so a lossless image does not make the
/// mean infinite.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub config: CodecConfig,
    pub mean_psnr: f64,
    pub mean_suppression: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub images: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub fn ablation_configs(designed: QuantTable, jpeg_quality: u8) -> Vec<(String, CodecConfig)> {
    let mut out = Vec::with_capacity(4);
    for path in [ColorPath::Rgb, ColorPath::YCbCr420] {
        out.push((format!("designed+{path}"), CodecConfig::custom(designed, path)));
        out.push((
            format!("jpeg{jpeg_quality}+{path}"),
            CodecConfig::standard(jpeg_quality, path),
        ));
    }
    out
}

/// Mean benign PSNR and mean suppression for one configuration.
pub fn measure(benign: &[ImageBuffer], adv: &[ImageBuffer], cfg: &CodecConfig) -> Result<(f64, f64)> {
    if benign.is_empty() || benign.len() != adv.len() {
        return Err(Error::InvalidArgument(format!(
            "need equally sized non-empty corpora, got {} and {}",
            benign.len(),
            adv.len()
        )));
    }
    let per: Vec<(f64, f64)> = benign
        .par_iter()
        .zip(adv.par_iter())
        .map(|(b, a)| {
            let db = defend(b, cfg)?;
            let da = defend(a, cfg)?;
            Ok((psnr(b, &db)?.min(PSNR_CAP), suppression(b, a, &db, &da)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

pub fn run_ablation(
    benign: &[ImageBuffer],
    adv: &[ImageBuffer],
    designed: QuantTable,
    jpeg_quality: u8,
) -> Result<AblationReport> {
    let rows = ablation_configs(designed, jpeg_quality)
        .into_iter()
        .map(|(name, config)| {
            let (mean_psnr, mean_suppression) = measure(benign, adv, &config)?;
            Ok(AblationRow {
                name,
                config,
                mean_psnr,
                mean_suppression,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport {
        images: benign.len(),
        rows,
    })
}
