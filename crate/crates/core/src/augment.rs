//! Exporting the compressed-plus-noise training family and its manifest.
//!
//! Layout: `out/q{quality}/<name>.png` for every quality, plus
//! `out/manifest.json` written once all images are on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{defend, CodecConfig};
use crate::error::{Error, Result};
use crate::image::{to_sample, ImageBuffer};
use crate::io::{encode_png, sha256_hex};

pub const DEFAULT_QUALITIES: [u8; 7] = [90, 80, 70, 60, 50, 40, 30];
pub const DEFAULT_XI: f64 = 0.9;
pub const DEFAULT_LEARNING_RATE: f64 = 0.005;
pub const DEFAULT_DECAY: f64 = 0.94;
pub const DEFAULT_EPOCHS: u32 = 14;
pub const MANIFEST_NAME: &str = "manifest.json";
/// Noise is drawn once at export time, not per training epoch.
pub const NOISE_MODE: &str = "offline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub qualities: Vec<u8>,
    pub sigma: f64,
    pub seed: u64,
    pub xi: f64,
    pub learning_rate: f64,
    pub decay: f64,
    pub epochs: u32,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            qualities: DEFAULT_QUALITIES.to_vec(),
            sigma: crate::perturb::DEFAULT_SIGMA,
            seed: crate::perturb::DEFAULT_SEED,
            xi: DEFAULT_XI,
            learning_rate: DEFAULT_LEARNING_RATE,
            decay: DEFAULT_DECAY,
            epochs: DEFAULT_EPOCHS,
        }
    }
}

pub fn model_name(quality: Option<u8>) -> String {
    match quality {
        None => "M".into(),
        Some(q) => format!("M{q}"),
    }
}

/// `M` followed by one model per quality, each fine-tuned from the previous.
pub fn model_chain(qualities: &[u8]) -> Vec<String> {
    std::iter::once(model_name(None))
        .chain(qualities.iter().map(|&q| model_name(Some(q))))
        .collect()
}

/// `M` plus every other model of the chain starting at the first quality;
/// for the default qualities that is M, M90, M70, M50, M30.
pub fn default_ensemble(qualities: &[u8]) -> Vec<String> {
    std::iter::once(model_name(None))
        .chain(qualities.iter().step_by(2).map(|&q| model_name(Some(q))))
        .collect()
}

pub fn quality_dir(quality: u8) -> String {
    format!("q{quality}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLevel {
    pub quality: u8,
    pub dir: String,
    pub model: String,
    pub codec_hash: String,
    /// File name -> SHA-256 of the PNG bytes.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub format: u32,
    pub xi: f64,
    pub qualities: Vec<u8>,
    pub sigma: f64,
    pub seed: u64,
    pub noise_mode: String,
    pub codec: CodecConfig,
    pub codec_hash: String,
    pub learning_rate: f64,
    pub decay: f64,
    pub epochs: u32,
    pub model_chain: Vec<String>,
    pub ensemble: Vec<String>,
    pub levels: Vec<QualityLevel>,
}

impl AugmentManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        crate::json::read_json(path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::json::write_json(path, self)
    }

    /// `(w_clean, w_aug)` for the mixed loss.
    pub fn loss_weights(&self) -> (f64, f64) {
        (self.xi, 1.0 - self.xi)
    }
}

/// `(xi, 1 - xi)`: weights of the clean and augmented loss terms.
pub fn mixed_loss_weights(xi: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::InvalidArgument(format!("xi {xi} outside [0, 1]")));
    }
    Ok((xi, 1.0 - xi))
}

fn check_params(p: &AugmentParams) -> Result<()> {
    let mut issues = Vec::new();
    param_issues(
        p.xi,
        &p.qualities,
        p.sigma,
        p.learning_rate,
        p.decay,
        p.epochs,
        &mut issues,
    );
    match issues.into_iter().next() {
        Some(i) => Err(Error::InvalidArgument(i.to_string())),
        None => Ok(()),
    }
}

fn param_issues(
    xi: f64,
    qualities: &[u8],
    sigma: f64,
    lr: f64,
    decay: f64,
    epochs: u32,
    issues: &mut Vec<ManifestIssue>,
) {
    let mut push = |path: &str, message: String| issues.push(ManifestIssue::new(path, message));
    if !(0.0..=1.0).contains(&xi) {
        push("xi", format!("{xi} outside [0, 1]"));
    }
    if qualities.is_empty() {
        push("qualities", "empty".into());
    }
    for (i, &q) in qualities.iter().enumerate() {
        if !(1..=100).contains(&q) {
            push(&format!("qualities[{i}]"), format!("{q} outside [1, 100]"));
        }
        if i > 0 && q >= qualities[i - 1] {
            push(&format!("qualities[{i}]"), "not strictly descending".into());
        }
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        push("sigma", format!("{sigma} must be finite and >= 0"));
    }
    if !(lr.is_finite() && lr > 0.0) {
        push("learning_rate", format!("{lr} must be > 0"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        push("decay", format!("{decay} outside (0, 1]"));
    }
    if epochs == 0 {
        push("epochs", "must be > 0".into());
    }
}

fn noise_rng(seed: u64, quality: u8, image_index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(quality) << 32) | image_index as u64);
    rng
}

/// Defended image at one quality plus clamped Gaussian noise. The noise
/// stream depends only on `(seed, quality, image_index)`.
pub fn augment_image(
    img: &ImageBuffer,
    cfg: &CodecConfig,
    quality: u8,
    sigma: f64,
    seed: u64,
    image_index: usize,
) -> Result<ImageBuffer> {
    let defended = defend(img, &cfg.with_quality(quality))?;
    if sigma == 0.0 {
        return Ok(defended);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("sigma: {e}")))?;
    let mut rng = noise_rng(seed, quality, image_index);
    let data = defended
        .data()
        .iter()
        .map(|&v| to_sample(f64::from(v) + normal.sample(&mut rng)))
        .collect();
    ImageBuffer::new(img.width(), img.height(), data)
}

/// Writes the dataset tree and manifest under `out`. Images are processed
/// in name order, so the result does not depend on the order of `corpus`.
pub fn export(
    corpus: &[(String, ImageBuffer)],
    cfg: &CodecConfig,
    params: &AugmentParams,
    out: impl AsRef<Path>,
) -> Result<AugmentManifest> {
    let out = out.as_ref();
    check_params(params)?;
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let mut sorted: Vec<&(String, ImageBuffer)> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument(format!("duplicate image name {:?}", w[0].0)));
    }

    for &q in &params.qualities {
        let dir = out.join(quality_dir(q));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let jobs: Vec<(u8, usize)> = params
        .qualities
        .iter()
        .flat_map(|&q| (0..sorted.len()).map(move |i| (q, i)))
        .collect();
    let hashes: Vec<String> = jobs
        .par_iter()
        .map(|&(q, i)| {
            let (name, img) = sorted[i];
            let aug = augment_image(img, cfg, q, params.sigma, params.seed, i)?;
            let bytes = encode_png(&aug)?;
            let path = out.join(quality_dir(q)).join(format!("{name}.png"));
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            Ok(sha256_hex(&bytes))
        })
        .collect::<Result<_>>()?;

    let mut levels = Vec::with_capacity(params.qualities.len());
    for (qi, &q) in params.qualities.iter().enumerate() {
        let files = sorted
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (format!("{name}.png"), hashes[qi * sorted.len() + i].clone()))
            .collect();
        levels.push(QualityLevel {
            quality: q,
            dir: quality_dir(q),
            model: model_name(Some(q)),
            codec_hash: hex::encode(cfg.with_quality(q).hash()?),
            files,
        });
    }
    let manifest = AugmentManifest {
        format: 1,
        xi: params.xi,
        qualities: params.qualities.clone(),
        sigma: params.sigma,
        seed: params.seed,
        noise_mode: NOISE_MODE.into(),
        codec: *cfg,
        codec_hash: hex::encode(cfg.hash()?),
        learning_rate: params.learning_rate,
        decay: params.decay,
        epochs: params.epochs,
        model_chain: model_chain(&params.qualities),
        ensemble: default_ensemble(&params.qualities),
        levels,
    };
    manifest.write(out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestIssue {
    /// Field path such as `levels[4].dir`.
    pub path: String,
    pub message: String,
}

impl ManifestIssue {
    fn new(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub issues: Vec<ManifestIssue>,
}

impl ManifestReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks manifest invariants; with `root`, also that every listed
/// directory and file exists with the recorded hash.
pub fn validate_manifest(m: &AugmentManifest, root: Option<&Path>) -> ManifestReport {
    let mut issues = Vec::new();
    if m.format != 1 {
        issues.push(ManifestIssue::new("format", format!("unsupported version {}", m.format)));
    }
    param_issues(m.xi, &m.qualities, m.sigma, m.learning_rate, m.decay, m.epochs, &mut issues);
    if m.noise_mode != NOISE_MODE {
        issues.push(ManifestIssue::new("noise_mode", format!("unknown mode {:?}", m.noise_mode)));
    }
    if m.model_chain != model_chain(&m.qualities) {
        issues.push(ManifestIssue::new(
            "model_chain",
            format!("expected {:?}", model_chain(&m.qualities)),
        ));
    }
    for (i, e) in m.ensemble.iter().enumerate() {
        if !m.model_chain.contains(e) {
            issues.push(ManifestIssue::new(&format!("ensemble[{i}]"), format!("{e} not in model_chain")));
        }
    }
    match m.codec.hash() {
        Ok(h) if hex::encode(h) == m.codec_hash => {}
        Ok(_) => issues.push(ManifestIssue::new("codec_hash", "does not match codec")),
        Err(e) => issues.push(ManifestIssue::new("codec", e.to_string())),
    }
    let level_qualities: Vec<u8> = m.levels.iter().map(|l| l.quality).collect();
    if level_qualities != m.qualities {
        issues.push(ManifestIssue::new("levels", "qualities do not match the qualities list"));
    }
    let reference = m.levels.first().map(|l| l.files.keys().collect::<Vec<_>>());
    for (i, level) in m.levels.iter().enumerate() {
        let at = |f: &str| format!("levels[{i}].{f}");
        if level.dir != quality_dir(level.quality) {
            issues.push(ManifestIssue::new(&at("dir"), format!("expected {}", quality_dir(level.quality))));
        }
        if level.model != model_name(Some(level.quality)) {
            issues.push(ManifestIssue::new(&at("model"), format!("expected {}", model_name(Some(level.quality)))));
        }
        if level.files.is_empty() {
            issues.push(ManifestIssue::new(&at("files"), "empty"));
        }
        if reference.as_ref().is_some_and(|r| *r != level.files.keys().collect::<Vec<_>>()) {
            issues.push(ManifestIssue::new(&at("files"), "file set differs from levels[0]"));
        }
        if let Some(root) = root {
            let dir: PathBuf = root.join(&level.dir);
            if !dir.is_dir() {
                issues.push(ManifestIssue::new(
                    &at("dir"),
                    format!("missing directory {} (quality {})", level.dir, level.quality),
                ));
                continue;
            }
            for (name, hash) in &level.files {
                let path = dir.join(name);
                match std::fs::read(&path) {
                    Ok(bytes) if sha256_hex(&bytes) == *hash => {}
                    Ok(_) => issues.push(ManifestIssue::new(
                        &format!("levels[{i}].files.{name}"),
                        format!("hash mismatch (quality {})", level.quality),
                    )),
                    Err(_) => issues.push(ManifestIssue::new(
                        &format!("levels[{i}].files.{name}"),
                        format!("missing file (quality {})", level.quality),
                    )),
                }
            }
        }
    }
    ManifestReport { issues }
}
